use std::fs;
use std::path::{Path, PathBuf};

use super::{LossRecord, PipelineState, TrainingConfig};
use crate::error::{Error, Result};

/// Run directory: `config.toml`, `losses.csv`, `phases.json` and one
/// checkpoint per saved phase.
#[derive(Clone, Debug)]
pub struct RunLedger {
    pub dir: PathBuf,
}

impl RunLedger {
    pub fn create(dir: impl AsRef<Path>, cfg: &TrainingConfig) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let p = dir.join("config.toml");
        fs::write(&p, cfg.to_toml()).map_err(|e| Error::io(&p, e))?;
        Ok(Self { dir })
    }

    pub fn losses_csv(records: &[LossRecord], state: &PipelineState) -> String {
        let mut s = String::from(LossRecord::CSV_HEADER);
        s.push('\n');
        for r in records {
            s.push_str(&r.csv_row(&state.cfg.loss));
            s.push('\n');
        }
        s
    }

    /// Writes the loss curve, the phase history and a checkpoint named after
    /// the current phase.
    pub fn record(&self, state: &PipelineState) -> Result<PathBuf> {
        let write = |name: &str, text: String| {
            let p = self.dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("losses.csv", Self::losses_csv(&state.log, state))?;
        write("phases.json", serde_json::to_string_pretty(&state.history)?)?;
        let ck = self.dir.join(format!("{}.hsck", state.phase));
        state.save(&ck)?;
        Ok(ck)
    }
}
