//! Dataset manifests, the train/validation/evaluation split, and the
//! synthetic corpus generator.
//!
//! On-disk layout, scanned and generated alike:
//!
//! ```text
//! <root>/<snr>/<machine_type>/<id>/<normal|abnormal>/<index>.wav
//! ```
//!
//! with `<snr>` in {-6dB, 0dB, 6dB}, `<machine_type>` in
//! {fan, pump, valve, slide_rail}, and `<index>` a decimal clip number.

mod synthgen;

pub use synthgen::{
    generate_synthetic_corpus, AnomalyInjection, Archetype, BurstSpec, MachineSpec, NoiseSpec,
    SynthCorpusSpec,
};

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::anomaly::Condition;
use crate::rng::{derive_seed, hash_bytes, Rng};
use crate::scene::SceneClass;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset root {0} is not a directory")]
    MissingRoot(PathBuf),
    #[error("unexpected entry in dataset layout: {path} ({detail})")]
    Layout { path: PathBuf, detail: String },
    #[error("duplicate clip index {index} under {path}")]
    DuplicateIndex { path: PathBuf, index: u32 },
    #[error(
        "machine {machine_type}/{machine_id}: stratum {snr} has {available} normal clips, \
         need {needed} for {role}"
    )]
    InsufficientClips {
        machine_type: MachineType,
        machine_id: String,
        snr: SceneClass,
        role: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("machine {machine_type}/{machine_id} has no clips at {snr}")]
    MissingStratum {
        machine_type: MachineType,
        machine_id: String,
        snr: SceneClass,
    },
    #[error("no machines matched the requested filter")]
    NoMachines,
    #[error("synthesis error: {0}")]
    Audio(#[from] crate::audio::AudioError),
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Machine categories of the corpus.
#[derive(
    Clone,
    Copy,
    Debug,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    serde::Serialize,
    serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum MachineType {
    Fan,
    Pump,
    Valve,
    SlideRail,
}

impl MachineType {
    pub const ALL: [MachineType; 4] = [
        MachineType::Fan,
        MachineType::Pump,
        MachineType::Valve,
        MachineType::SlideRail,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MachineType::Fan => "fan",
            MachineType::Pump => "pump",
            MachineType::Valve => "valve",
            MachineType::SlideRail => "slide_rail",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "fan" => Some(MachineType::Fan),
            "pump" => Some(MachineType::Pump),
            "valve" => Some(MachineType::Valve),
            "slide_rail" => Some(MachineType::SlideRail),
            _ => None,
        }
    }
}

impl std::fmt::Display for MachineType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One clip of the dataset.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ManifestEntry {
    pub machine_type: MachineType,
    pub machine_id: String,
    pub snr: SceneClass,
    pub condition: Condition,
    pub index: u32,
    pub path: PathBuf,
}

impl ManifestEntry {
    /// Stable identifier used in error sets and reports.
    pub fn clip_id(&self) -> String {
        format!(
            "{}/{}/{}/{}/{}",
            self.machine_type, self.machine_id, self.snr, self.condition, self.index
        )
    }
}

/// All clips found under a dataset root, sorted by
/// (machine type, id, snr, condition, index).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Distinct (machine type, id) pairs.
    pub fn machines(&self) -> BTreeSet<(MachineType, String)> {
        self.entries
            .iter()
            .map(|e| (e.machine_type, e.machine_id.clone()))
            .collect()
    }

    pub fn stratum(
        &self,
        machine_type: MachineType,
        machine_id: &str,
        snr: SceneClass,
        condition: Condition,
    ) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| {
                e.machine_type == machine_type
                    && e.machine_id == machine_id
                    && e.snr == snr
                    && e.condition == condition
            })
            .collect()
    }
}

/// Walks the documented layout and returns a complete, sorted manifest.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::MissingRoot(root.to_path_buf()));
    }
    let mut entries = Vec::new();
    for snr_dir in sorted_dirs(root)? {
        let snr_name = file_name(&snr_dir);
        let snr = SceneClass::from_label(&snr_name).ok_or_else(|| DatasetError::Layout {
            path: snr_dir.clone(),
            detail: format!("unknown SNR directory {snr_name:?}"),
        })?;
        for machine_dir in sorted_dirs(&snr_dir)? {
            let machine_name = file_name(&machine_dir);
            let machine_type =
                MachineType::from_label(&machine_name).ok_or_else(|| DatasetError::Layout {
                    path: machine_dir.clone(),
                    detail: format!("unknown machine type {machine_name:?}"),
                })?;
            for id_dir in sorted_dirs(&machine_dir)? {
                let machine_id = file_name(&id_dir);
                for cond_dir in sorted_dirs(&id_dir)? {
                    let cond_name = file_name(&cond_dir);
                    let condition =
                        Condition::from_label(&cond_name).ok_or_else(|| DatasetError::Layout {
                            path: cond_dir.clone(),
                            detail: format!("expected normal/abnormal, found {cond_name:?}"),
                        })?;
                    let mut seen = BTreeSet::new();
                    for wav in sorted_files(&cond_dir)? {
                        let index = parse_index(&wav)?;
                        if !seen.insert(index) {
                            return Err(DatasetError::DuplicateIndex {
                                path: cond_dir.clone(),
                                index,
                            });
                        }
                        entries.push(ManifestEntry {
                            machine_type,
                            machine_id: machine_id.clone(),
                            snr,
                            condition,
                            index,
                            path: wav,
                        });
                    }
                }
            }
        }
    }
    entries.sort();
    Ok(DatasetManifest { entries })
}

fn file_name(p: &Path) -> String {
    p.file_name().unwrap_or_default().to_string_lossy().into_owned()
}

/// Subdirectories sorted by name; dotfiles are skipped, stray files are a
/// layout error.
fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let name = file_name(&path);
        if name.starts_with('.') {
            continue;
        }
        if !path.is_dir() {
            return Err(DatasetError::Layout {
                path,
                detail: "expected a directory".into(),
            });
        }
        out.push(path);
    }
    out.sort();
    Ok(out)
}

/// WAV files sorted by name; dotfiles are skipped, anything else is a
/// layout error.
fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let name = file_name(&path);
        if name.starts_with('.') {
            continue;
        }
        if !path.is_file() || path.extension().and_then(|e| e.to_str()) != Some("wav") {
            return Err(DatasetError::Layout {
                path,
                detail: "expected a .wav file".into(),
            });
        }
        out.push(path);
    }
    out.sort();
    Ok(out)
}

fn parse_index(path: &Path) -> Result<u32, DatasetError> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    stem.parse::<u32>().map_err(|_| DatasetError::Layout {
        path: path.to_path_buf(),
        detail: format!("clip name {stem:?} is not a decimal index"),
    })
}

/// Split sizing; the defaults mirror the full-corpus protocol.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Model-training clips: the lowest-indexed normal clips at 6 dB.
    pub train_count: usize,
    /// Validation clips sampled per SNR stratum.
    pub val_count: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_count: 300,
            val_count: 300,
            seed: 0,
        }
    }
}

/// Slide-rail IDs 04 and 06 have fewer clips; their validation draw is
/// capped at 100.
fn effective_val_count(machine_type: MachineType, machine_id: &str, val_count: usize) -> usize {
    if machine_type == MachineType::SlideRail {
        let digits: String = machine_id.chars().filter(|c| c.is_ascii_digit()).collect();
        if matches!(digits.parse::<u32>(), Ok(4) | Ok(6)) {
            return val_count.min(100);
        }
    }
    val_count
}

/// Per-stratum clip roles for one machine.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SnrSplit {
    /// Clips with the training indices at this stratum; they feed the
    /// threshold statistics (and, at 6 dB, model training itself).
    pub threshold_train: Vec<ManifestEntry>,
    pub validation: Vec<ManifestEntry>,
    pub evaluation: Vec<ManifestEntry>,
}

/// Role assignment for one (machine type, id).
#[derive(Clone, Debug, PartialEq)]
pub struct MachineSplit {
    pub machine_type: MachineType,
    pub machine_id: String,
    /// The 6 dB normal clips the models are trained on.
    pub train: Vec<ManifestEntry>,
    pub per_snr: BTreeMap<SceneClass, SnrSplit>,
}

/// Deterministic split over the whole manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    pub seed: u64,
    pub machines: BTreeMap<(MachineType, String), MachineSplit>,
}

/// Builds the split: training clips are the `train_count` lowest-indexed
/// 6 dB normals; those indices are reserved in every stratum; `val_count`
/// validation clips are drawn seeded from the remaining normals of each
/// stratum; everything else, plus all abnormal clips, is evaluation.
pub fn make_splits(
    manifest: &DatasetManifest,
    cfg: &SplitConfig,
) -> Result<SplitPlan, DatasetError> {
    let machines = manifest.machines();
    if machines.is_empty() {
        return Err(DatasetError::NoMachines);
    }
    let mut plans = BTreeMap::new();
    for (machine_type, machine_id) in machines {
        let split = split_machine(manifest, machine_type, &machine_id, cfg)?;
        plans.insert((machine_type, machine_id), split);
    }
    Ok(SplitPlan {
        seed: cfg.seed,
        machines: plans,
    })
}

fn split_machine(
    manifest: &DatasetManifest,
    machine_type: MachineType,
    machine_id: &str,
    cfg: &SplitConfig,
) -> Result<MachineSplit, DatasetError> {
    let six_db_normals = manifest.stratum(
        machine_type,
        machine_id,
        SceneClass::Plus6Db,
        Condition::Normal,
    );
    if six_db_normals.len() < cfg.train_count {
        return Err(DatasetError::InsufficientClips {
            machine_type,
            machine_id: machine_id.into(),
            snr: SceneClass::Plus6Db,
            role: "training",
            needed: cfg.train_count,
            available: six_db_normals.len(),
        });
    }
    // Already sorted by index via manifest ordering.
    let train: Vec<ManifestEntry> = six_db_normals[..cfg.train_count]
        .iter()
        .map(|e| (*e).clone())
        .collect();
    let train_indices: BTreeSet<u32> = train.iter().map(|e| e.index).collect();
    let val_count = effective_val_count(machine_type, machine_id, cfg.val_count);

    let mut per_snr = BTreeMap::new();
    for snr in SceneClass::ALL {
        let normals = manifest.stratum(machine_type, machine_id, snr, Condition::Normal);
        if normals.is_empty() {
            return Err(DatasetError::MissingStratum {
                machine_type,
                machine_id: machine_id.into(),
                snr,
            });
        }
        let (reserved, rest): (Vec<_>, Vec<_>) = normals
            .into_iter()
            .partition(|e| train_indices.contains(&e.index));
        if rest.len() < val_count {
            return Err(DatasetError::InsufficientClips {
                machine_type,
                machine_id: machine_id.into(),
                snr,
                role: "validation",
                needed: val_count,
                available: rest.len(),
            });
        }
        let mut rng = Rng::from_seed(derive_seed(
            cfg.seed,
            &[
                hash_bytes(machine_type.label().as_bytes()),
                hash_bytes(machine_id.as_bytes()),
                snr.index() as u64,
            ],
        ));
        let mut order: Vec<usize> = (0..rest.len()).collect();
        rng.shuffle(&mut order);
        let chosen: BTreeSet<usize> = order[..val_count].iter().copied().collect();

        let mut validation = Vec::with_capacity(val_count);
        let mut evaluation = Vec::new();
        for (i, entry) in rest.iter().enumerate() {
            if chosen.contains(&i) {
                validation.push((*entry).clone());
            } else {
                evaluation.push((*entry).clone());
            }
        }
        for entry in manifest.stratum(machine_type, machine_id, snr, Condition::Abnormal) {
            evaluation.push(entry.clone());
        }
        evaluation.sort();

        per_snr.insert(
            snr,
            SnrSplit {
                threshold_train: reserved.into_iter().cloned().collect(),
                validation,
                evaluation,
            },
        );
    }
    Ok(MachineSplit {
        machine_type,
        machine_id: machine_id.into(),
        train,
        per_snr,
    })
}

impl MachineSplit {
    /// Writes the role of every clip as a text manifest.
    pub fn write_to(&self, path: &Path) -> Result<(), DatasetError> {
        let mut out = String::from("sonowatch-split v1\n");
        out.push_str(&format!(
            "machine\t{}\t{}\n",
            self.machine_type, self.machine_id
        ));
        out.push_str("snr\tcondition\tindex\trole\n");
        for (snr, split) in &self.per_snr {
            for e in &split.threshold_train {
                let role = if *snr == SceneClass::Plus6Db {
                    "train"
                } else {
                    "threshold_train"
                };
                out.push_str(&format!("{snr}\t{}\t{}\t{role}\n", e.condition, e.index));
            }
            for e in &split.validation {
                out.push_str(&format!("{snr}\t{}\t{}\tvalidation\n", e.condition, e.index));
            }
            for e in &split.evaluation {
                out.push_str(&format!("{snr}\t{}\t{}\tevaluation\n", e.condition, e.index));
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }
}
