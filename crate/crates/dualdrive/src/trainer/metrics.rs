//! JSONL metrics stream with a monotone step field.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::TrainError;

#[derive(Serialize)]
struct MetricsRecord<'a> {
    step: u64,
    wall_time_s: f64,
    metrics: &'a BTreeMap<String, f64>,
}

pub struct MetricsWriter {
    out: BufWriter<File>,
    last_step: Option<u64>,
    wall_clock: bool,
    started: Instant,
    records: u64,
}

impl MetricsWriter {
    /// With `wall_clock` off (the default) the wall-time field is written
    /// as 0.0 so identical runs produce byte-identical files.
    pub fn create(path: &Path, wall_clock: bool) -> Result<Self, TrainError> {
        Self::create_with_cursor(path, wall_clock, 0)
    }

    /// Resumed runs carry the prior record count so checkpoint cursors
    /// stay cumulative across restarts.
    pub fn create_with_cursor(
        path: &Path,
        wall_clock: bool,
        cursor: u64,
    ) -> Result<Self, TrainError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
            last_step: None,
            wall_clock,
            started: Instant::now(),
            records: cursor,
        })
    }

    pub fn record(&mut self, step: u64, metrics: &BTreeMap<String, f64>) -> Result<(), TrainError> {
        if let Some(last) = self.last_step {
            if step < last {
                return Err(TrainError::Metrics(format!(
                    "step {step} below previous {last}"
                )));
            }
        }
        for (k, v) in metrics {
            if !v.is_finite() {
                return Err(TrainError::Metrics(format!("non-finite metric {k}")));
            }
        }
        let wall_time_s = if self.wall_clock {
            self.started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let line = serde_json::to_string(&MetricsRecord {
            step,
            wall_time_s,
            metrics,
        })
        .map_err(|e| TrainError::Metrics(e.to_string()))?;
        writeln!(self.out, "{line}")?;
        self.last_step = Some(step);
        self.records += 1;
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.records
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush()?;
        Ok(())
    }
}
