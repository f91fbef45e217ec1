//! The five pipeline commands: synth, train-ae, train-snet, threshold,
//! evaluate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use sonowatch_core::anomaly::{
    build_ae, clip_score, compute_threshold, AeModel, AeTrainConfig, ErrorSet,
    ThresholdTable,
};
use sonowatch_core::audio::{load_wav, resample, to_mono};
use sonowatch_core::dataset::{
    generate_synthetic_corpus, make_splits, scan_dataset, DatasetManifest, MachineSplit,
    MachineType, SplitConfig, SplitPlan,
};
use sonowatch_core::dsp::{
    build_mel_filterbank, context_frames, log_mel, segment_raw, stft_power, ContextVector,
    MelFilterbank, RawSegment, AE_SAMPLE_RATE, SNET_SAMPLE_RATE,
};
use sonowatch_core::eval::{
    auto_sweep_step, reference_auc, run_case, threshold_sweep, ClipEval, EvaluationReport,
    LabeledScore, SceneConfusion, SweepTable,
};
use sonowatch_core::nn::{load_model, save_model, AdamConfig, ModelMeta};
use sonowatch_core::rng::{derive_seed, hash_bytes};
use sonowatch_core::scene::{build_snet, predict_clip, train_snet, SceneClass, SnetModel, SnetTrainConfig};

use crate::config::{DspConfig, RunConfig};

/// Command failure with its process exit code category: 2 config, 3 data,
/// 4 missing artifact.
#[derive(Debug, Error)]
pub enum CmdError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::Data(_) => 3,
            CmdError::MissingArtifact(_) => 4,
        }
    }

    fn data(e: impl std::fmt::Display) -> Self {
        CmdError::Data(e.to_string())
    }
}

/// Output paths, all rooted at `out_dir`.
pub struct OutPaths<'a> {
    out: &'a Path,
}

impl<'a> OutPaths<'a> {
    pub fn new(out: &'a Path) -> Self {
        OutPaths { out }
    }

    pub fn config_echo(&self) -> PathBuf {
        self.out.join("config.toml")
    }

    pub fn manifest(&self) -> PathBuf {
        self.out.join("manifest.tsv")
    }

    pub fn ae_model(&self, m: MachineType, id: &str) -> PathBuf {
        self.out.join("models").join(format!("ae_{m}_{id}.swm"))
    }

    pub fn snet_model(&self, m: MachineType, id: &str) -> PathBuf {
        self.out.join("models").join(format!("snet_{m}_{id}.swm"))
    }

    pub fn ae_loss(&self, m: MachineType, id: &str) -> PathBuf {
        self.out.join("losses").join(format!("ae_{m}_{id}.csv"))
    }

    pub fn snet_loss(&self, m: MachineType, id: &str) -> PathBuf {
        self.out.join("losses").join(format!("snet_{m}_{id}.csv"))
    }

    pub fn thresholds(&self, m: MachineType, id: &str) -> PathBuf {
        self.out.join("thresholds").join(format!("{m}_{id}.tsv"))
    }

    pub fn split_plan(&self, m: MachineType, id: &str) -> PathBuf {
        self.out.join("splits").join(format!("{m}_{id}.split.txt"))
    }

    pub fn report_json(&self, m: MachineType, id: &str) -> PathBuf {
        self.out.join("reports").join(format!("{m}_{id}.report.json"))
    }

    pub fn report_csv(&self, m: MachineType, id: &str) -> PathBuf {
        self.out.join("reports").join(format!("{m}_{id}.report.csv"))
    }

    pub fn sweep_csv(&self, m: MachineType, id: &str) -> PathBuf {
        self.out.join("reports").join(format!("{m}_{id}.sweep.csv"))
    }

    pub fn confusion_csv(&self, m: MachineType, id: &str) -> PathBuf {
        self.out.join("reports").join(format!("{m}_{id}.confusion.csv"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CmdError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CmdError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, text)
        .map_err(|e| CmdError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Writes the resolved configuration into the output directory.
fn echo_config(config: &RunConfig) -> Result<(), CmdError> {
    let paths = OutPaths::new(&config.out_dir);
    write_text(&paths.config_echo(), &crate::config::echo_toml(config))
}

/// Seed streams per purpose and machine, all derived from the master seed.
fn stream_seed(master: u64, purpose: &str, machine: MachineType, id: &str) -> u64 {
    derive_seed(
        master,
        &[
            hash_bytes(purpose.as_bytes()),
            hash_bytes(machine.label().as_bytes()),
            hash_bytes(id.as_bytes()),
        ],
    )
}

fn scan_and_split(config: &RunConfig) -> Result<(DatasetManifest, SplitPlan), CmdError> {
    let manifest = scan_dataset(&config.data.root).map_err(CmdError::data)?;
    let split_cfg = SplitConfig {
        train_count: config.split.train_count,
        val_count: config.split.val_count,
        seed: derive_seed(config.train.seed, &[hash_bytes(b"split")]),
    };
    let plan = make_splits(&manifest, &split_cfg).map_err(CmdError::data)?;
    Ok((manifest, plan))
}

/// Machines selected by the data.machine / data.id filters, in stable order.
fn selected_machines<'a>(
    config: &RunConfig,
    plan: &'a SplitPlan,
) -> Result<Vec<&'a MachineSplit>, CmdError> {
    let machine_filter = config.machine_filter();
    let selected: Vec<&MachineSplit> = plan
        .machines
        .values()
        .filter(|s| machine_filter.is_none_or(|m| s.machine_type == m))
        .filter(|s| {
            config
                .data
                .id
                .as_deref()
                .is_none_or(|id| s.machine_id == id)
        })
        .collect();
    if selected.is_empty() {
        return Err(CmdError::Data(
            "no machines matched the data.machine / data.id filter".into(),
        ));
    }
    Ok(selected)
}

/// Feature extraction shared by training, thresholding, and evaluation.
pub struct FeatureExtractor {
    dsp: DspConfig,
    filterbank: MelFilterbank,
}

impl FeatureExtractor {
    pub fn new(dsp: &DspConfig) -> Result<Self, CmdError> {
        let filterbank = build_mel_filterbank(
            dsp.n_mels,
            dsp.n_fft,
            AE_SAMPLE_RATE,
            dsp.f_min,
            dsp.f_max,
        )
        .map_err(CmdError::data)?;
        Ok(FeatureExtractor {
            dsp: dsp.clone(),
            filterbank,
        })
    }

    /// Context vectors of one clip (16 kHz mono log-mel path).
    pub fn ae_frames(&self, path: &Path) -> Result<Vec<ContextVector>, CmdError> {
        let clip = load_wav(path).map_err(CmdError::data)?;
        let mono = to_mono(&clip);
        let mono = if mono.sample_rate() != AE_SAMPLE_RATE {
            resample(&mono, AE_SAMPLE_RATE).map_err(CmdError::data)?
        } else {
            mono
        };
        let power = stft_power(&mono, self.dsp.n_fft, self.dsp.hop).map_err(CmdError::data)?;
        let lm = log_mel(&power, &self.filterbank, self.dsp.floor_eps).map_err(CmdError::data)?;
        context_frames(&lm, self.dsp.context, self.dsp.stride).map_err(CmdError::data)
    }

    /// Raw segments of one clip (8 kHz path).
    pub fn snet_segments(&self, path: &Path) -> Result<Vec<RawSegment>, CmdError> {
        let clip = load_wav(path).map_err(CmdError::data)?;
        let mono = to_mono(&clip);
        let mono = if mono.sample_rate() != SNET_SAMPLE_RATE {
            resample(&mono, SNET_SAMPLE_RATE).map_err(CmdError::data)?
        } else {
            mono
        };
        segment_raw(&mono, self.dsp.segment_len).map_err(CmdError::data)
    }
}

fn load_ae(paths: &OutPaths, machine: MachineType, id: &str) -> Result<AeModel, CmdError> {
    let path = paths.ae_model(machine, id);
    if !path.exists() {
        return Err(CmdError::MissingArtifact(format!(
            "autoencoder model {} (run train-ae first)",
            path.display()
        )));
    }
    let (network, meta) = load_model(&path).map_err(CmdError::data)?;
    Ok(AeModel { network, meta })
}

fn load_snet(paths: &OutPaths, machine: MachineType, id: &str) -> Result<SnetModel, CmdError> {
    let path = paths.snet_model(machine, id);
    if !path.exists() {
        return Err(CmdError::MissingArtifact(format!(
            "scene model {} (run train-snet first)",
            path.display()
        )));
    }
    let (network, meta) = load_model(&path).map_err(CmdError::data)?;
    Ok(SnetModel { network, meta })
}

fn load_thresholds(
    paths: &OutPaths,
    machine: MachineType,
    id: &str,
) -> Result<ThresholdTable, CmdError> {
    let path = paths.thresholds(machine, id);
    if !path.exists() {
        return Err(CmdError::MissingArtifact(format!(
            "threshold table {} (run threshold first)",
            path.display()
        )));
    }
    ThresholdTable::read_from(&path).map_err(CmdError::data)
}

/// `synth`: generate the configured synthetic corpus and write its manifest.
pub fn cmd_synth(config: &RunConfig) -> Result<(), CmdError> {
    config.validate()?;
    echo_config(config)?;
    let spec = config.synth.as_ref().ok_or_else(|| {
        CmdError::Config("synth command requires a [synth] section in the config".into())
    })?;
    let seed = derive_seed(config.train.seed, &[hash_bytes(b"corpus")]);
    let manifest =
        generate_synthetic_corpus(spec, &config.data.root, seed).map_err(CmdError::data)?;

    let mut text = String::from("machine_type\tmachine_id\tsnr\tcondition\tindex\tpath\n");
    for e in &manifest.entries {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.machine_type,
            e.machine_id,
            e.snr,
            e.condition,
            e.index,
            e.path.display()
        ));
    }
    let paths = OutPaths::new(&config.out_dir);
    write_text(&paths.manifest(), &text)?;
    println!(
        "synth: wrote {} clips under {}",
        manifest.entries.len(),
        config.data.root.display()
    );
    Ok(())
}

/// `train-ae`: one autoencoder per selected machine, trained on the 6 dB
/// normal training clips.
pub fn cmd_train_ae(config: &RunConfig) -> Result<(), CmdError> {
    config.validate()?;
    echo_config(config)?;
    let (_, plan) = scan_and_split(config)?;
    let paths = OutPaths::new(&config.out_dir);
    let extractor = FeatureExtractor::new(&config.dsp)?;

    for split in selected_machines(config, &plan)? {
        let (machine, id) = (split.machine_type, split.machine_id.as_str());
        split
            .write_to(&ensure_parent(&paths.split_plan(machine, id))?)
            .map_err(CmdError::data)?;

        let mut frames = Vec::new();
        for entry in &split.train {
            frames.extend(extractor.ae_frames(&entry.path)?);
        }
        let mut model = build_ae(stream_seed(config.train.seed, "ae-init", machine, id));
        model.meta = ModelMeta {
            machine_type: Some(machine.label().into()),
            machine_id: Some(id.into()),
            train_snr: Some(SceneClass::Plus6Db.label().into()),
            ..model.meta
        };
        let train_cfg = AeTrainConfig {
            epochs: config.train.ae_epochs,
            batch_size: config.train.ae_batch,
            adam: AdamConfig {
                learning_rate: config.train.learning_rate,
                ..AdamConfig::default()
            },
            seed: stream_seed(config.train.seed, "ae-shuffle", machine, id),
        };
        let losses =
            sonowatch_core::anomaly::train_ae(&mut model, &frames, &train_cfg)
                .map_err(CmdError::data)?;

        save_model(&model.network, &model.meta, &ensure_parent(&paths.ae_model(machine, id))?)
            .map_err(CmdError::data)?;
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in losses.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", i + 1, l));
        }
        write_text(&paths.ae_loss(machine, id), &csv)?;
        println!(
            "train-ae {machine}/{id}: {} frames, {} epochs, final loss {}",
            frames.len(),
            config.train.ae_epochs,
            losses.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

/// `train-snet`: one scene classifier per selected machine, trained on the
/// training-index clips of all three strata.
pub fn cmd_train_snet(config: &RunConfig) -> Result<(), CmdError> {
    config.validate()?;
    echo_config(config)?;
    let (_, plan) = scan_and_split(config)?;
    let paths = OutPaths::new(&config.out_dir);
    let extractor = FeatureExtractor::new(&config.dsp)?;

    for split in selected_machines(config, &plan)? {
        let (machine, id) = (split.machine_type, split.machine_id.as_str());
        split
            .write_to(&ensure_parent(&paths.split_plan(machine, id))?)
            .map_err(CmdError::data)?;

        let mut data: Vec<(RawSegment, SceneClass)> = Vec::new();
        for (snr, snr_split) in &split.per_snr {
            for entry in &snr_split.threshold_train {
                for seg in extractor.snet_segments(&entry.path)? {
                    data.push((seg, *snr));
                }
            }
        }
        let mut model = build_snet(stream_seed(config.train.seed, "snet-init", machine, id));
        model.meta = ModelMeta {
            machine_type: Some(machine.label().into()),
            machine_id: Some(id.into()),
            ..model.meta
        };
        let train_cfg = SnetTrainConfig {
            epochs: config.train.snet_epochs,
            batch_size: config.train.snet_batch,
            adam: AdamConfig {
                learning_rate: config.train.learning_rate,
                ..AdamConfig::default()
            },
            seed: stream_seed(config.train.seed, "snet-shuffle", machine, id),
            holdout_frac: config.train.holdout_frac,
        };
        let log = train_snet(&mut model, &data, &train_cfg).map_err(CmdError::data)?;

        save_model(
            &model.network,
            &model.meta,
            &ensure_parent(&paths.snet_model(machine, id))?,
        )
        .map_err(CmdError::data)?;
        let mut csv = String::from("epoch,train_loss,holdout_loss\n");
        for (i, (t, h)) in log.train_loss.iter().zip(&log.holdout_loss).enumerate() {
            csv.push_str(&format!("{},{},{}\n", i + 1, t, h));
        }
        write_text(&paths.snet_loss(machine, id), &csv)?;
        println!(
            "train-snet {machine}/{id}: {} segments, best epoch {}, holdout loss {}",
            data.len(),
            log.best_epoch,
            log.holdout_loss
                .get(log.best_epoch.saturating_sub(1))
                .copied()
                .unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<PathBuf, CmdError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CmdError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    Ok(path.to_path_buf())
}

/// `threshold`: per-scene thresholds from the training-index and validation
/// clips of each stratum, scored by the trained autoencoder.
pub fn cmd_threshold(config: &RunConfig) -> Result<(), CmdError> {
    config.validate()?;
    echo_config(config)?;
    let (_, plan) = scan_and_split(config)?;
    let paths = OutPaths::new(&config.out_dir);
    let extractor = FeatureExtractor::new(&config.dsp)?;

    for split in selected_machines(config, &plan)? {
        let (machine, id) = (split.machine_type, split.machine_id.as_str());
        let model = load_ae(&paths, machine, id)?;
        split
            .write_to(&ensure_parent(&paths.split_plan(machine, id))?)
            .map_err(CmdError::data)?;

        let mut table = ThresholdTable::new();
        for (snr, snr_split) in &split.per_snr {
            let mut train_errors = ErrorSet::new();
            for entry in &snr_split.threshold_train {
                let frames = extractor.ae_frames(&entry.path)?;
                train_errors.push(
                    entry.clip_id(),
                    clip_score(&model, &frames).map_err(CmdError::data)?,
                );
            }
            let mut val_errors = ErrorSet::new();
            for entry in &snr_split.validation {
                let frames = extractor.ae_frames(&entry.path)?;
                val_errors.push(
                    entry.clip_id(),
                    clip_score(&model, &frames).map_err(CmdError::data)?,
                );
            }
            let stats = compute_threshold(&train_errors, &val_errors).map_err(CmdError::data)?;
            table.insert(*snr, stats);
        }
        table
            .write_to(&ensure_parent(&paths.thresholds(machine, id))?)
            .map_err(CmdError::data)?;
        let stats: Vec<String> = table
            .rows
            .iter()
            .map(|(snr, s)| format!("{snr}: tau {}", s.tau))
            .collect();
        println!("threshold {machine}/{id}: {}", stats.join(", "));
    }
    Ok(())
}

/// `evaluate`: score the evaluation clips, pick thresholds per case, and
/// write the report files.
pub fn cmd_evaluate(config: &RunConfig) -> Result<(), CmdError> {
    config.validate()?;
    echo_config(config)?;
    let (_, plan) = scan_and_split(config)?;
    let paths = OutPaths::new(&config.out_dir);
    let extractor = FeatureExtractor::new(&config.dsp)?;
    let cases = config.requested_cases();
    if cases.is_empty() {
        return Err(CmdError::Config("eval.cases is empty".into()));
    }

    for split in selected_machines(config, &plan)? {
        let (machine, id) = (split.machine_type, split.machine_id.as_str());
        let ae = load_ae(&paths, machine, id)?;
        let snet = load_snet(&paths, machine, id)?;
        let thresholds = load_thresholds(&paths, machine, id)?;

        let mut clips: Vec<ClipEval> = Vec::new();
        for (snr, snr_split) in &split.per_snr {
            for entry in &snr_split.evaluation {
                let frames = extractor.ae_frames(&entry.path)?;
                let score = clip_score(&ae, &frames).map_err(CmdError::data)?;
                let predicted = if config.eval.oracle_scene {
                    *snr
                } else {
                    let segments = extractor.snet_segments(&entry.path)?;
                    predict_clip(&snet, &segments).map_err(CmdError::data)?
                };
                clips.push(ClipEval {
                    id: entry.clip_id(),
                    truth: entry.condition,
                    true_scene: *snr,
                    predicted_scene: predicted,
                    score,
                });
            }
        }

        let mut case_rows = Vec::new();
        for case in &cases {
            case_rows.extend(run_case(*case, &clips, &thresholds).map_err(CmdError::data)?);
        }

        // Threshold sweep per stratum around the stratum's own threshold.
        let mut sweeps = Vec::new();
        for snr in SceneClass::ALL {
            let stratum: Vec<LabeledScore> = clips
                .iter()
                .filter(|c| c.true_scene == snr)
                .map(|c| LabeledScore {
                    id: c.id.clone(),
                    score: c.score,
                    truth: c.truth,
                })
                .collect();
            if stratum.is_empty() {
                continue;
            }
            let tau = thresholds.get(snr).map_err(CmdError::data)?.tau;
            let step = config
                .eval
                .sweep_step
                .unwrap_or_else(|| auto_sweep_step(&stratum));
            let rows = threshold_sweep(
                &stratum,
                tau,
                config.eval.sweep_k_min,
                config.eval.sweep_k_max,
                step,
            )
            .map_err(CmdError::data)?;
            sweeps.push(SweepTable {
                snr,
                tau,
                step,
                rows,
            });
        }

        let confusion = SceneConfusion::from_clips(&clips);
        let report = EvaluationReport {
            machine_type: machine.label().into(),
            machine_id: id.into(),
            cases: case_rows,
            scene_accuracy: confusion.accuracy(),
            scene_confusion: confusion,
            sweeps,
            reference_auc_6_0_minus6: reference_auc(machine),
            notes: vec![
                format!(
                    "learning_rate={} ae_batch={} snet_batch={} are implementation defaults; \
                     the published setup does not specify them",
                    config.train.learning_rate, config.train.ae_batch, config.train.snet_batch
                ),
                "reference_auc_6_0_minus6 lists published full-corpus results; desk-scale \
                 synthetic runs are not comparable to them"
                    .into(),
            ],
        };

        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| CmdError::Data(format!("report serialization: {e}")))?;
        write_text(&paths.report_json(machine, id), &json)?;
        write_text(&paths.report_csv(machine, id), &report.to_csv())?;
        write_text(&paths.sweep_csv(machine, id), &report.sweep_csv())?;
        write_text(&paths.confusion_csv(machine, id), &report.confusion_csv())?;

        let mut by_case: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for m in &report.cases {
            by_case
                .entry(m.case.label())
                .or_default()
                .push(format!("{} auc {:.3} tpr {:.3} fpr {:.3}", m.snr, m.auc, m.tpr, m.fpr));
        }
        println!(
            "evaluate {machine}/{id}: scene accuracy {:.3}",
            report.scene_accuracy
        );
        for (case, lines) in by_case {
            println!("  {case}: {}", lines.join(" | "));
        }
    }
    Ok(())
}
