use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite discrete time window with a base point `tau0` for all series.
///
/// The underlying theory works on an interval unbounded above; we compute on
/// a finite truncation and treat every supremum as a maximum over the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t_min: i64,
    pub t_max: i64,
    /// Base point of the series sums. Defaults to `t_min`, which turns every
    /// series into a finite sum.
    pub tau0: i64,
}

impl TimeWindow {
    pub fn new(t_min: i64, t_max: i64) -> Result<Self> {
        Self::with_tau0(t_min, t_max, t_min)
    }

    pub fn with_tau0(t_min: i64, t_max: i64, tau0: i64) -> Result<Self> {
        if t_min > t_max {
            return Err(Error::InvalidConfig(format!(
                "empty window: t_min {t_min} > t_max {t_max}"
            )));
        }
        if tau0 < t_min || tau0 > t_max {
            return Err(Error::InvalidConfig(format!(
                "tau0 {tau0} outside window [{t_min}, {t_max}]"
            )));
        }
        Ok(TimeWindow { t_min, t_max, tau0 })
    }

    pub fn contains(&self, t: i64) -> bool {
        t >= self.t_min && t <= self.t_max
    }

    pub fn check(&self, t: i64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::OutsideWindow {
                t,
                t_min: self.t_min,
                t_max: self.t_max,
            })
        }
    }

    pub fn len(&self) -> usize {
        (self.t_max - self.t_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> {
        self.t_min..=self.t_max
    }
}
