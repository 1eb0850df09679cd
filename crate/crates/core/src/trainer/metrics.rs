use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Everything logged for one step.
///
/// `kl_global` and `kl_individual` are always computed; outside `proposed`
/// mode they are diagnostics and do not enter `total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// One-based index of the step these values belong to.
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub kl_global: f64,
    pub kl_individual: f64,
    pub l1: f64,
    pub adversarial: Option<f64>,
    pub kl_standard: Option<f64>,
    pub disc_loss: Option<f64>,
    /// Smallest per-dimension batch variance of the mixture.
    pub batch_var_min: f64,
    pub batch_var_mean: f64,
    /// Smallest per-dimension batch mean of the individual variances.
    pub ind_var_min: f64,
    pub ind_var_mean: f64,
    /// Dimensions whose batch variance hit the floor.
    pub clamped_dims: usize,
}

/// One JSON line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    #[serde(flatten)]
    pub metrics: StepMetrics,
    pub wall_time_s: f64,
}

/// Append-only line-delimited JSON writer.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn append(path: &Path) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: BufWriter::new(f) })
    }

    pub fn write(&mut self, metrics: &StepMetrics, wall_time_s: f64) -> Result<()> {
        let rec = MetricsRecord {
            metrics: metrics.clone(),
            wall_time_s,
        };
        serde_json::to_writer(&mut self.out, &rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Reads a metrics log back.
pub fn read_log(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
