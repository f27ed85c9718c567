use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub recon: f64,
    /// Generator term; absent for the prior autoencoder.
    pub gen: Option<f64>,
    /// Discriminator loss, present on the step followed by a discriminator update.
    pub disc: Option<f64>,
    pub val_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn push(&mut self, r: LogRecord) -> Result<()> {
        if self.records.last().is_some_and(|l| l.step >= r.step) {
            return Err(Error::InvalidArgument(format!("log step {} is not increasing", r.step)));
        }
        self.records.push(r);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_val(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.val_cosine)
    }

    /// Steps between consecutive discriminator updates.
    pub fn inner_counts(&self) -> Vec<usize> {
        let mut counts = Vec::new();
        let mut run = 0;
        for r in &self.records {
            run += 1;
            if r.disc.is_some() {
                counts.push(run);
                run = 0;
            }
        }
        counts
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Signal(format!("log serialization: {e}")))?;
        }
        if self.records.is_empty() {
            w.write_record(["step", "recon", "gen", "disc", "val_cosine"])
                .map_err(|e| Error::Signal(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Signal(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Signal(format!("{}: {e}", path.display())))?;
        let mut log = TrainLog::default();
        for rec in r.deserialize() {
            let rec: LogRecord = rec.map_err(|e| Error::Signal(format!("{}: {e}", path.display())))?;
            log.push(rec)?;
        }
        Ok(log)
    }
}
