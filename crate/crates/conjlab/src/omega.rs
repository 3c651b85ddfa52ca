//! Sampled ergodic base systems.
//!
//! An `Omega` is one realization of the base: a two-sided stream of symbols
//! (or phases) plus a shift offset. The shift `theta^t` is pure index
//! arithmetic, so the group laws hold exactly. Streams are lazy: the value at
//! any index is a deterministic function of (kind, seed, omega id, index).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STREAM_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MdsKind {
    /// I.i.d. draws from a finite alphabet of real symbol values.
    Bernoulli { symbols: Vec<f64>, probs: Vec<f64> },
    /// Irrational rotation on the circle; the stream value is the phase in [0,1).
    Rotation { angle: f64 },
}

/// A sampled measurable dynamical system: a seeded family of two-sided
/// symbol/phase streams with the shift acting by index offset.
#[derive(Clone, Debug)]
pub struct ShiftMds {
    kind: MdsKind,
    seed: u64,
}

impl ShiftMds {
    pub fn new(kind: MdsKind, seed: u64) -> Result<Self> {
        match &kind {
            MdsKind::Bernoulli { symbols, probs } => {
                if symbols.is_empty() || symbols.len() != probs.len() {
                    return Err(Error::InvalidConfig(
                        "bernoulli base needs matching non-empty symbols and probs".into(),
                    ));
                }
                let total: f64 = probs.iter().sum();
                if probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidConfig(format!(
                        "bernoulli probabilities must be nonnegative and sum to 1 (sum = {total})"
                    )));
                }
            }
            MdsKind::Rotation { angle } => {
                if !angle.is_finite() || *angle == 0.0 {
                    return Err(Error::InvalidConfig("rotation angle must be finite and nonzero".into()));
                }
            }
        }
        Ok(ShiftMds { kind, seed })
    }

    pub fn kind(&self) -> &MdsKind {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// One realization of the base; distinct ids give independent streams.
    pub fn sample(&self, omega_id: u64) -> Omega {
        Omega {
            inner: Some(Arc::new(StreamInner {
                kind: self.kind.clone(),
                seed: mix(self.seed, omega_id.wrapping_mul(0x9e3779b97f4a7c15)),
            })),
            shift: 0,
        }
    }
}

#[derive(Debug)]
struct StreamInner {
    kind: MdsKind,
    seed: u64,
}

/// A base-point handle: either deterministic (no randomness) or one stream
/// realization together with the current shift offset.
#[derive(Clone, Debug)]
pub struct Omega {
    inner: Option<Arc<StreamInner>>,
    shift: i64,
}

impl Omega {
    /// The trivial base used by purely deterministic systems.
    pub fn deterministic() -> Self {
        Omega { inner: None, shift: 0 }
    }

    pub fn is_deterministic(&self) -> bool {
        self.inner.is_none()
    }

    /// theta^t applied to this realization.
    pub fn shifted(&self, t: i64) -> Omega {
        Omega {
            inner: self.inner.clone(),
            shift: self.shift + t,
        }
    }

    pub fn shift(&self) -> i64 {
        self.shift
    }

    /// Stream value at relative index `i` (absolute index `shift + i`).
    /// Deterministic handles return 0.
    pub fn value(&self, i: i64) -> f64 {
        match &self.inner {
            None => 0.0,
            Some(s) => match &s.kind {
                MdsKind::Bernoulli { symbols, probs } => {
                    let u = uniform(s.seed, self.shift + i);
                    let mut acc = 0.0;
                    for (sym, p) in symbols.iter().zip(probs) {
                        acc += p;
                        if u < acc {
                            return *sym;
                        }
                    }
                    *symbols.last().unwrap()
                }
                MdsKind::Rotation { angle } => {
                    let phase0 = uniform(s.seed, i64::MIN / 2);
                    let step = angle / std::f64::consts::TAU;
                    let x = phase0 + (self.shift + i) as f64 * step;
                    x - x.floor()
                }
            },
        }
    }

    /// Alphabet index at relative position `i` (Bernoulli bases only).
    pub fn symbol_index(&self, i: i64) -> usize {
        match &self.inner {
            None => 0,
            Some(s) => match &s.kind {
                MdsKind::Bernoulli { probs, .. } => {
                    let u = uniform(s.seed, self.shift + i);
                    let mut acc = 0.0;
                    for (k, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            return k;
                        }
                    }
                    probs.len() - 1
                }
                MdsKind::Rotation { .. } => 0,
            },
        }
    }

    /// Materialize a window of stream values, e.g. for caching.
    pub fn values(&self, from: i64, len: usize) -> Vec<f64> {
        (0..len as i64).map(|k| self.value(from + k)).collect()
    }
}

fn mix(a: u64, b: u64) -> u64 {
    splitmix(a ^ splitmix(b))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic uniform in [0,1) for a (seed, two-sided index) pair.
fn uniform(seed: u64, index: i64) -> f64 {
    // zig-zag encode so negative indices get distinct lanes
    let zz = ((index << 1) ^ (index >> 63)) as u64;
    let bits = splitmix(seed ^ zz.wrapping_mul(0xd1342543de82ef95));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
