//! Run configuration: every knob for data generation, model dimensions,
//! and training, loadable from a flat `key = value` file (JSON-typed
//! values) with command-line overrides on top.

use mftrr_core::config::ModelDims;
use mftrr_core::data::SynthConfig;
use mftrr_core::ranking::TrainConfig;
use mftrr_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // shared
    pub seed: u64,

    // model dimensions
    pub d_c: usize,
    pub d_emb: usize,
    pub d_d: usize,
    pub kernel_sizes: Vec<usize>,
    pub graph_layers: usize,

    // synthetic data
    pub vocab_size: usize,
    pub l_d: usize,
    pub l_i: usize,
    pub d_i: usize,
    pub topics: usize,
    pub posts_per_topic: usize,
    pub key_tokens: usize,
    pub overlap_per_label: [f64; 5],
    pub noise_per_label: [f64; 5],

    // training
    pub batch_size: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dims = ModelDims::default();
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            seed: 0,
            d_c: dims.d_c,
            d_emb: dims.d_emb,
            d_d: dims.d_d,
            kernel_sizes: dims.kernel_sizes,
            graph_layers: dims.graph_layers,
            vocab_size: synth.vocab_size,
            l_d: synth.l_d,
            l_i: synth.l_i,
            d_i: synth.d_i,
            topics: synth.topics,
            posts_per_topic: synth.posts_per_topic,
            key_tokens: synth.key_tokens,
            overlap_per_label: synth.overlap_per_label,
            noise_per_label: synth.noise_per_label,
            batch_size: train.batch_size,
            margin: train.margin,
            learning_rate: train.learning_rate,
            epochs: train.epochs,
        }
    }
}

impl RunConfig {
    /// Model dimensions for freshly generated data (data-file loads
    /// override the data-side fields from the file header instead).
    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.vocab_size,
            l_d: self.l_d,
            l_i: self.l_i,
            d_emb: self.d_emb,
            d_d: self.d_d,
            d_i: self.d_i,
            d_c: self.d_c,
            kernel_sizes: self.kernel_sizes.clone(),
            graph_layers: self.graph_layers,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            vocab_size: self.vocab_size,
            l_d: self.l_d,
            l_i: self.l_i,
            d_i: self.d_i,
            topics: self.topics,
            posts_per_topic: self.posts_per_topic,
            key_tokens: self.key_tokens,
            overlap_per_label: self.overlap_per_label,
            noise_per_label: self.noise_per_label,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            margin: self.margin,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    /// Validate every field before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.model_dims().validate()?;
        self.synth_config().validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    /// The effective configuration as `key = value` lines (field order).
    pub fn echo_lines(&self) -> Vec<String> {
        let value = serde_json::to_value(self).expect("config serializes");
        value
            .as_object()
            .expect("config is a map")
            .iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect()
    }
}

fn parse_line(line: &str, lineno: usize, path: &str) -> Result<Option<(String, Value)>> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let (key, raw) = trimmed.split_once('=').ok_or_else(|| {
        Error::invalid(format!("{path}:{lineno}: expected `key = value`, got {trimmed:?}"))
    })?;
    let value: Value = serde_json::from_str(raw.trim()).map_err(|e| {
        Error::invalid(format!("{path}:{lineno}: value for {} is not valid JSON: {e}", key.trim()))
    })?;
    Ok(Some((key.trim().to_string(), value)))
}

/// Defaults, overlaid with the config file (if any), overlaid with
/// command-line overrides. Unknown keys and ill-typed values are errors.
pub fn load_config(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let mut map = match serde_json::to_value(RunConfig::default()).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!("config serializes to a map"),
    };

    if let Some(p) = path {
        let text = std::fs::read_to_string(p)?;
        let display = p.display().to_string();
        for (i, line) in text.lines().enumerate() {
            if let Some((key, value)) = parse_line(line, i + 1, &display)? {
                if !map.contains_key(&key) {
                    return Err(Error::invalid(format!(
                        "{display}:{}: unknown config key {key:?}",
                        i + 1
                    )));
                }
                map.insert(key, value);
            }
        }
    }
    for (key, value) in overrides {
        if !map.contains_key(key) {
            return Err(Error::invalid(format!("unknown config key {key:?}")));
        }
        map.insert(key.clone(), value.clone());
    }

    let cfg: RunConfig = serde_json::from_value(Value::Object(map))
        .map_err(|e| Error::invalid(format!("bad config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        load_config(None, &[]).unwrap();
    }

    #[test]
    fn file_overrides_and_echo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nseed = 7\nkernel_sizes = [1, 3]\nd_c = 16\n").unwrap();
        let cfg = load_config(Some(&path), &[]).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.kernel_sizes, vec![1, 3]);
        assert_eq!(cfg.d_c, 16);
        assert!(cfg.echo_lines().iter().any(|l| l == "seed = 7"));
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "learning_rqte = 0.1\n").unwrap();
        assert!(load_config(Some(&path), &[]).is_err());
    }

    #[test]
    fn ill_typed_value_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "epochs = \"ten\"\n").unwrap();
        assert!(load_config(Some(&path), &[]).is_err());
    }

    #[test]
    fn cli_override_wins_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "seed = 7\n").unwrap();
        let cfg =
            load_config(Some(&path), &[("seed".into(), serde_json::json!(9))]).unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn invalid_field_combination_rejected() {
        // even kernel size fails validation before any work
        let err = load_config(None, &[("kernel_sizes".into(), serde_json::json!([2]))]);
        assert!(err.is_err());
    }
}
