//! Run manifests and the per-iteration metrics CSV.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::csv_writer;
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 9] =
    ["iteration", "objective", "loss", "term1", "term2", "term3", "sigma_sum", "probe_acc", "wall_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based optimizer step the loss was computed for.
    pub iteration: usize,
    pub objective: String,
    pub loss: f64,
    pub terms: Option<[f64; 3]>,
    pub sigma_sum: Option<f64>,
    /// Held-out probe accuracy of each modality encoder, when evaluated.
    pub probe_acc: Option<[f64; 3]>,
    /// Dependence estimate for bimodal estimator runs.
    pub estimate: Option<f64>,
    pub wall_ms: f64,
}

impl IterationRecord {
    /// Mean of the per-encoder probe accuracies.
    pub fn mean_probe(&self) -> Option<f64> {
        self.probe_acc.map(|a| a.iter().sum::<f64>() / 3.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Aborted { iteration: usize, error_kind: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub status: RunStatus,
    pub records: Vec<IterationRecord>,
}

impl RunManifest {
    pub fn new<C: Serialize>(config: &C, seed: u64) -> Result<Self> {
        Ok(Self {
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config)?,
            status: RunStatus::Completed,
            records: Vec::new(),
        })
    }

    pub fn push(&mut self, record: IterationRecord) {
        self.records.push(record);
    }

    pub fn abort(&mut self, iteration: usize, error: &Error) {
        self.status =
            RunStatus::Aborted { iteration, error_kind: error.kind().to_string(), message: error.to_string() };
    }

    pub fn aborted(&self) -> bool {
        matches!(self.status, RunStatus::Aborted { .. })
    }

    pub fn aborted_at(&self) -> Option<usize> {
        match self.status {
            RunStatus::Aborted { iteration, .. } => Some(iteration),
            RunStatus::Completed => None,
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn best_probe(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.mean_probe()).fold(None, |best, v| match best {
            Some(b) if b >= v => Some(b),
            _ => Some(v),
        })
    }

    pub fn last_probe(&self) -> Option<[f64; 3]> {
        self.records.iter().rev().find_map(|r| r.probe_acc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Writes the metric series. `probe_acc` is the mean over encoders; empty
    /// when the probe was not evaluated at that iteration.
    pub fn write_metrics_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record(METRICS_HEADER)?;
        for r in &self.records {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let terms = r.terms.unwrap_or([f64::NAN; 3]);
            w.write_record([
                r.iteration.to_string(),
                r.objective.clone(),
                r.loss.to_string(),
                terms[0].to_string(),
                terms[1].to_string(),
                terms[2].to_string(),
                opt(r.sigma_sum),
                opt(r.mean_probe()),
                format!("{:.3}", r.wall_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize, probe: Option<[f64; 3]>) -> IterationRecord {
        IterationRecord {
            iteration: i,
            objective: "mfmc-trace".into(),
            loss: -1.5,
            terms: Some([-0.5; 3]),
            sigma_sum: Some(1.5),
            probe_acc: probe,
            estimate: None,
            wall_ms: 2.0,
        }
    }

    #[test]
    fn json_round_trip() {
        let mut m = RunManifest::new(&serde_json::json!({"k": 8}), 3).unwrap();
        m.push(record(1, None));
        m.push(record(2, Some([0.5, 0.75, 1.0])));
        m.abort(3, &Error::SingularCovariance { condition: 1e13 });
        let back: RunManifest = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.aborted_at(), Some(3));
        assert_eq!(back.best_probe(), Some(0.75));
    }

    #[test]
    fn metrics_csv_layout() {
        let mut m = RunManifest::new(&(), 0).unwrap();
        m.push(record(1, None));
        m.push(record(2, Some([1.0, 1.0, 0.25])));
        let mut buf = Vec::new();
        m.write_metrics_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,objective,loss,term1,term2,term3,sigma_sum,probe_acc,wall_ms");
        assert_eq!(lines[1], "1,mfmc-trace,-1.5,-0.5,-0.5,-0.5,1.5,,2.000");
        assert_eq!(lines[2], "2,mfmc-trace,-1.5,-0.5,-0.5,-0.5,1.5,0.75,2.000");
        assert!(!text.contains('\r'));
    }
}
