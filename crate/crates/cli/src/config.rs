//! Run configuration: a JSON file whose keys mirror the flags. Flags win.

use std::path::{Path, PathBuf};

use nearview::data::{BenchmarkConfig, Split};
use nearview::training::{FieldInit, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<TrainMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density_learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations_per_view: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_refresh_interval: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freeze_depth_field: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
    /// Radians.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angle_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_mask_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<usize>>,
    /// Explicit camera-to-world poses, 3x4 row-major.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poses: Option<Vec<[f64; 12]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub port: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cors: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<FieldInit>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("bad config {}: {e}", path.display())))
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: RunConfig) -> Self {
        overlay!(self, top; seed, out, dataset, checkpoint, mode, iterations, batch_size, learning_rate,
            density_learning_rate, n_samples, iterations_per_view, depth_refresh_interval, freeze_depth_field,
            lambda_min, lambda_max, angle_bound, mask_threshold, min_mask_fraction, split, frames, poses, count,
            port, cors, benchmark, init);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
    }

    pub fn dataset(&self) -> Result<&Path, CliError> {
        self.dataset.as_deref().ok_or_else(|| CliError::Usage("--dataset is required".into()))
    }

    pub fn checkpoint(&self) -> Result<&Path, CliError> {
        self.checkpoint.as_deref().ok_or_else(|| CliError::Usage("--checkpoint is required".into()))
    }

    /// Mode defaults for `mode` with every override applied, validated.
    pub fn train_config(&self, mode: TrainMode, background: Option<[f64; 3]>) -> Result<TrainConfig, CliError> {
        let mut c = TrainConfig { seed: self.seed(), ..TrainConfig::for_mode(mode) };
        if let Some(bg) = background {
            c.render.background = bg;
        }
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = self.$src { $($dst)+ = v; }
            };
        }
        set!(iterations => c.iterations);
        set!(batch_size => c.batch_size);
        set!(learning_rate => c.learning_rate);
        set!(density_learning_rate => c.density_learning_rate);
        set!(n_samples => c.render.n_samples);
        set!(iterations_per_view => c.iterations_per_view);
        set!(depth_refresh_interval => c.depth_refresh_interval);
        set!(freeze_depth_field => c.freeze_depth_field);
        set!(lambda_min => c.closeup.lambda_range.0);
        set!(lambda_max => c.closeup.lambda_range.1);
        set!(angle_bound => c.closeup.angle_bound);
        set!(mask_threshold => c.closeup.rgb_match_threshold);
        set!(min_mask_fraction => c.closeup.min_mask_fraction);
        c.validate().map_err(|e| CliError::Input(e.to_string()))?;
        c.closeup.validate().map_err(|e| CliError::Input(e.to_string()))?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seed": 1, "lamda_min": 2}"#).unwrap_err();
        assert!(err.to_string().contains("lamda_min"));
    }

    #[test]
    fn flags_win_over_the_file() {
        let file: RunConfig = serde_json::from_str(r#"{"seed": 1, "iterations": 50, "lambda_max": 6.0}"#).unwrap();
        let flags = RunConfig { seed: Some(9), ..Default::default() };
        let c = file.overlay(flags);
        assert_eq!((c.seed, c.iterations, c.lambda_max), (Some(9), Some(50), Some(6.0)));
    }

    #[test]
    fn overrides_reach_the_training_config() {
        let rc = RunConfig { iterations: Some(7), mask_threshold: Some(0.1), lambda_min: Some(3.0), ..Default::default() };
        let c = rc.train_config(TrainMode::FinetuneDiverse, Some([0.5; 3])).unwrap();
        assert_eq!(c.iterations, 7);
        assert_eq!(c.closeup.rgb_match_threshold, 0.1);
        assert_eq!(c.closeup.lambda_range, (3.0, 8.0));
        assert_eq!(c.render.background, [0.5; 3]);
        assert_eq!(c.density_learning_rate, TrainConfig::for_mode(TrainMode::FinetuneDiverse).density_learning_rate);
        let bad = RunConfig { lambda_min: Some(9.0), ..Default::default() };
        assert!(matches!(bad.train_config(TrainMode::FinetuneDiverse, None), Err(CliError::Input(_))));
    }
}
