//! Run reports: every verdict carries its measured value and threshold,
//! JSON is the full record, CSV holds per-sample traces for plotting.
//! Timings live in a separate file so the main report is byte-identical
//! across runs of the same config and artifact version.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conjugacy::ConjugacyReport;
use crate::error::{Error, Result};
use crate::hypotheses::{ConditionReport, GrowthCertificate, NonlinearityBounds};
use crate::localization::LocalReport;
use crate::rds::SpectrumReport;
use crate::smooth::SmoothnessReport;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// A named pass/fail with the number that decided it.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Verdict {
    pub fn at_most(name: &str, measured: f64, threshold: f64) -> Self {
        Verdict {
            name: name.to_string(),
            measured,
            threshold,
            pass: measured <= threshold,
        }
    }

    pub fn strictly_below(name: &str, measured: f64, threshold: f64) -> Self {
        Verdict {
            name: name.to_string(),
            measured,
            threshold,
            pass: measured < threshold,
        }
    }
}

/// One row of plot-ready trace data: a labeled (index, t, value) triple.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TraceRow {
    pub series: String,
    pub index: usize,
    pub t: i64,
    pub value: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub artifact_version: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub growth: Option<GrowthCertificate>,
    pub bounds: Option<NonlinearityBounds>,
    pub conditions: Option<ConditionReport>,
    pub conjugacy: Option<ConjugacyReport>,
    pub smooth: Option<SmoothnessReport>,
    pub spectrum: Option<SpectrumReport>,
    pub local: Option<LocalReport>,
    pub verdicts: Vec<Verdict>,
    /// structured refusals: (stage, message)
    pub failures: Vec<(String, String)>,
    pub traces: Vec<TraceRow>,
}

impl RunReport {
    pub fn new(config_hash: String) -> Self {
        RunReport {
            artifact_version: ARTIFACT_VERSION.to_string(),
            schema_version: REPORT_SCHEMA_VERSION,
            config_hash,
            ..Default::default()
        }
    }

    pub fn all_conditions_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
            && self.conditions.as_ref().map_or(true, |c| c.all_pass())
    }

    pub fn has_hard_error(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn traces_csv(&self) -> String {
        let mut out = String::from("series,index,t,value\n");
        for r in &self.traces {
            out.push_str(&format!("{},{},{},{:e}\n", r.series, r.index, r.t, r.value));
        }
        out
    }

    /// Write report.json and traces.csv into `dir`; timings, if any, go to
    /// timings.json so the deterministic files stay byte-identical.
    pub fn emit(&self, dir: &Path, timings: &Timings) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("traces.csv"), self.traces_csv())?;
        if !timings.seconds.is_empty() {
            std::fs::write(
                dir.join("timings.json"),
                serde_json::to_string_pretty(timings).map_err(|e| Error::Serde(e.to_string()))?,
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Timings {
    pub seconds: BTreeMap<String, f64>,
}

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = std::time::Instant::now();
        let out = f();
        self.seconds
            .insert(stage.to_string(), start.elapsed().as_secs_f64());
        out
    }
}
