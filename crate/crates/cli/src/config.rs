//! Run configuration: one TOML file, every key overridable from the command
//! line with `--set section.key=value`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sonowatch_core::dataset::{MachineType, SynthCorpusSpec};
use sonowatch_core::eval::EvalCase;

use crate::commands::CmdError;

/// Complete configuration of a run. Defaults that mirror the published
/// experimental setup are marked "paper" in the CLI help text.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthCorpusSpec>,
    pub dsp: DspConfig,
    pub train: TrainConfig,
    pub split: SplitSection,
    pub eval: EvalSection,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root in the documented corpus layout.
    pub root: PathBuf,
    /// Restrict the run to one machine type.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub machine: Option<String>,
    /// Restrict the run to one machine ID.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: PathBuf::from("data"),
            machine: None,
            id: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub n_fft: usize,
    pub hop: usize,
    /// Mel bands (paper: 64).
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub floor_eps: f64,
    /// Context window in frames (paper: 5).
    pub context: usize,
    pub stride: usize,
    /// Raw segment length in samples at 8 kHz (paper: 2000, i.e. 250 ms).
    pub segment_len: usize,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            n_fft: sonowatch_core::dsp::DEFAULT_N_FFT,
            hop: sonowatch_core::dsp::DEFAULT_HOP,
            n_mels: sonowatch_core::dsp::DEFAULT_N_MELS,
            f_min: 0.0,
            f_max: 8000.0,
            floor_eps: sonowatch_core::dsp::DEFAULT_FLOOR_EPS,
            context: sonowatch_core::dsp::DEFAULT_CONTEXT,
            stride: sonowatch_core::dsp::DEFAULT_STRIDE,
            segment_len: sonowatch_core::dsp::DEFAULT_SEGMENT_LEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Autoencoder epochs (paper: 5000).
    pub ae_epochs: usize,
    /// Scene-classifier epochs (paper: 100).
    pub snet_epochs: usize,
    pub ae_batch: usize,
    pub snet_batch: usize,
    pub learning_rate: f64,
    /// Holdout fraction for scene-classifier early stopping (paper: 0.1).
    pub holdout_frac: f64,
    /// Master seed; every stream in the run derives from it.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ae_epochs: 5000,
            snet_epochs: 100,
            ae_batch: 512,
            snet_batch: 64,
            learning_rate: 1e-3,
            holdout_frac: 0.1,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Training clips per machine (paper: 300, the lowest indices at 6 dB).
    pub train_count: usize,
    /// Validation clips per SNR stratum (paper: 300; slide-rail IDs 04 and
    /// 06 are capped at 100).
    pub val_count: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train_count: 300,
            val_count: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Cases to evaluate: baseline, scene_aware, fixed.
    pub cases: Vec<String>,
    pub sweep_k_min: i64,
    pub sweep_k_max: i64,
    /// Sweep step; omitted means (max - min) / 50 of the stratum's scores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_step: Option<f64>,
    /// Use the true scene instead of the classifier's prediction
    /// (debugging aid; makes scene_aware identical to baseline).
    pub oracle_scene: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cases: EvalCase::ALL.iter().map(|c| c.label().to_string()).collect(),
            sweep_k_min: -25,
            sweep_k_max: 25,
            sweep_step: None,
            oracle_scene: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CmdError> {
        if let Some(m) = &self.data.machine {
            if MachineType::from_label(m).is_none() {
                return Err(CmdError::Config(format!(
                    "unknown machine type {m:?}; expected one of fan, pump, valve, slide_rail"
                )));
            }
        }
        for case in &self.eval.cases {
            if EvalCase::from_label(case).is_none() {
                return Err(CmdError::Config(format!(
                    "unknown evaluation case {case:?}; expected baseline, scene_aware, fixed"
                )));
            }
        }
        if self.dsp.hop == 0 || self.dsp.hop * 2 != self.dsp.n_fft {
            return Err(CmdError::Config(format!(
                "dsp.hop must be dsp.n_fft / 2 (got n_fft {}, hop {})",
                self.dsp.n_fft, self.dsp.hop
            )));
        }
        if self.eval.sweep_k_min > self.eval.sweep_k_max {
            return Err(CmdError::Config(
                "eval.sweep_k_min must not exceed eval.sweep_k_max".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.train.holdout_frac) {
            return Err(CmdError::Config(
                "train.holdout_frac must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn requested_cases(&self) -> Vec<EvalCase> {
        self.eval
            .cases
            .iter()
            .filter_map(|c| EvalCase::from_label(c))
            .collect()
    }

    /// Machine filter as a typed value.
    pub fn machine_filter(&self) -> Option<MachineType> {
        self.data
            .machine
            .as_deref()
            .and_then(MachineType::from_label)
    }
}

/// Loads the configuration: the TOML file (when present), then `--set`
/// overrides, then typed flag overrides.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<RunConfig, CmdError> {
    let mut value: toml::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CmdError::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| CmdError::Config(format!("config {}: {e}", p.display())))?
        }
        None => toml::Value::Table(toml::Table::new()),
    };

    for entry in overrides {
        let (key, raw) = entry.split_once('=').ok_or_else(|| {
            CmdError::Config(format!("--set expects key=value, got {entry:?}"))
        })?;
        apply_override(&mut value, key.trim(), raw.trim())?;
    }

    let config: RunConfig = value
        .try_into()
        .map_err(|e| CmdError::Config(format!("invalid configuration: {e}")))?;
    Ok(config)
}

fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<(), CmdError> {
    if key.is_empty() {
        return Err(CmdError::Config("--set key is empty".into()));
    }
    // Interpret the value as TOML when possible, else as a bare string.
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .map(|t| t["v"].clone())
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()));

    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| CmdError::Config(format!("--set {key}: {part} is not a table")))?;
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| CmdError::Config(format!("--set {key}: parent is not a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Serializes the resolved configuration; written into the output directory
/// for provenance.
pub fn echo_toml(config: &RunConfig) -> String {
    toml::to_string_pretty(config).expect("config serializes")
}
