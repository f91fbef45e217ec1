//! Evaluation: AUC/TPR/FPR metrics, the threshold sweep, and the three
//! threshold-selection regimes (baseline, scene-aware, fixed).
//!
//! "Positive" always means abnormal.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::anomaly::{Condition, ThresholdTable};
use crate::dataset::MachineType;
use crate::scene::SceneClass;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score set is empty")]
    EmptyScores,
    #[error("no {0} clips in the score set")]
    OneClassEmpty(Condition),
    #[error("score for clip {0} is not finite")]
    NonFiniteScore(String),
    #[error("threshold table has no entry for scene {0}")]
    MissingThreshold(SceneClass),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("stratum {0} has no clips")]
    EmptyStratum(SceneClass),
}

/// A scored clip with its ground-truth condition.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScore {
    pub id: String,
    pub score: f64,
    pub truth: Condition,
}

fn validate(scores: &[LabeledScore]) -> Result<(), EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    for s in scores {
        if !s.score.is_finite() {
            return Err(EvalError::NonFiniteScore(s.id.clone()));
        }
    }
    for class in [Condition::Normal, Condition::Abnormal] {
        if !scores.iter().any(|s| s.truth == class) {
            return Err(EvalError::OneClassEmpty(class));
        }
    }
    Ok(())
}

/// Area under the ROC curve via the rank statistic: the fraction of
/// (abnormal, normal) pairs ranked correctly, ties counted 0.5.
pub fn auc(scores: &[LabeledScore]) -> Result<f64, EvalError> {
    validate(scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].score.partial_cmp(&scores[b].score).unwrap());

    // Midranks for ties.
    let n = scores.len();
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]].score == scores[order[i]].score {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = midrank;
        }
        i = j + 1;
    }

    let n_pos = scores.iter().filter(|s| s.truth == Condition::Abnormal).count() as f64;
    let n_neg = n as f64 - n_pos;
    let rank_sum: f64 = scores
        .iter()
        .zip(&ranks)
        .filter(|(s, _)| s.truth == Condition::Abnormal)
        .map(|(_, &r)| r)
        .sum();
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// True/false positive rates at a threshold: P(score > tau | class).
pub fn tpr_fpr(scores: &[LabeledScore], tau: f64) -> Result<(f64, f64), EvalError> {
    validate(scores)?;
    let (mut tp, mut n_pos, mut fp, mut n_neg) = (0usize, 0usize, 0usize, 0usize);
    for s in scores {
        match s.truth {
            Condition::Abnormal => {
                n_pos += 1;
                if s.score > tau {
                    tp += 1;
                }
            }
            Condition::Normal => {
                n_neg += 1;
                if s.score > tau {
                    fp += 1;
                }
            }
        }
    }
    Ok((tp as f64 / n_pos as f64, fp as f64 / n_neg as f64))
}

/// One row of the threshold sweep.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub k: i64,
    pub threshold: f64,
    /// TPR x (1 - FPR) at this threshold.
    pub value: f64,
}

/// Step that spans the score range in 50 increments; falls back to 1 when
/// all scores coincide.
pub fn auto_sweep_step(scores: &[LabeledScore]) -> f64 {
    let min = scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
    let max = scores
        .iter()
        .map(|s| s.score)
        .fold(f64::NEG_INFINITY, f64::max);
    let step = (max - min) / 50.0;
    if step > 0.0 {
        step
    } else {
        1.0
    }
}

/// Evaluates TPR x (1 - FPR) at thresholds tau + k * step for each integer k
/// in [k_min, k_max].
pub fn threshold_sweep(
    scores: &[LabeledScore],
    tau: f64,
    k_min: i64,
    k_max: i64,
    step: f64,
) -> Result<Vec<SweepRow>, EvalError> {
    validate(scores)?;
    let mut rows = Vec::with_capacity((k_max - k_min + 1).max(0) as usize);
    for k in k_min..=k_max {
        let threshold = tau + k as f64 * step;
        let (tpr, fpr) = tpr_fpr(scores, threshold)?;
        rows.push(SweepRow {
            k,
            threshold,
            value: tpr * (1.0 - fpr),
        });
    }
    Ok(rows)
}

/// Threshold-selection regime under evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCase {
    /// Each clip judged with the threshold of its true surrounding.
    Baseline,
    /// Each clip judged with the threshold of its predicted surrounding.
    SceneAware,
    /// Every clip judged with the 6 dB threshold.
    Fixed,
}

impl EvalCase {
    pub const ALL: [EvalCase; 3] = [EvalCase::Baseline, EvalCase::SceneAware, EvalCase::Fixed];

    pub fn label(self) -> &'static str {
        match self {
            EvalCase::Baseline => "baseline",
            EvalCase::SceneAware => "scene_aware",
            EvalCase::Fixed => "fixed",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(EvalCase::Baseline),
            "scene_aware" => Some(EvalCase::SceneAware),
            "fixed" => Some(EvalCase::Fixed),
            _ => None,
        }
    }
}

impl std::fmt::Display for EvalCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A fully scored evaluation clip: anomaly score plus true and predicted
/// surroundings.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipEval {
    pub id: String,
    pub truth: Condition,
    pub true_scene: SceneClass,
    pub predicted_scene: SceneClass,
    pub score: f64,
}

/// Metrics of one (case, stratum) cell.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SnrCaseMetrics {
    pub case: EvalCase,
    pub snr: SceneClass,
    pub auc: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// The single threshold used, when the case uses one per stratum
    /// (scene-aware selection varies per clip).
    pub tau: Option<f64>,
    pub n_normal: usize,
    pub n_abnormal: usize,
}

/// Runs one evaluation case over the clips, reporting metrics per true-SNR
/// stratum.
pub fn run_case(
    case: EvalCase,
    clips: &[ClipEval],
    thresholds: &ThresholdTable,
) -> Result<Vec<SnrCaseMetrics>, EvalError> {
    if clips.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    // Every scene class a clip might select must be present up front.
    for scene in SceneClass::ALL {
        if thresholds.get(scene).is_err() {
            return Err(EvalError::MissingThreshold(scene));
        }
    }

    let mut out = Vec::new();
    for snr in SceneClass::ALL {
        let stratum: Vec<&ClipEval> = clips.iter().filter(|c| c.true_scene == snr).collect();
        if stratum.is_empty() {
            continue;
        }
        let labeled: Vec<LabeledScore> = stratum
            .iter()
            .map(|c| LabeledScore {
                id: c.id.clone(),
                score: c.score,
                truth: c.truth,
            })
            .collect();

        let tau_for = |clip: &ClipEval| -> f64 {
            let scene = match case {
                EvalCase::Baseline => clip.true_scene,
                EvalCase::SceneAware => clip.predicted_scene,
                EvalCase::Fixed => SceneClass::Plus6Db,
            };
            thresholds.get(scene).unwrap().tau
        };

        let (mut tp, mut n_pos, mut fp, mut n_neg) = (0usize, 0usize, 0usize, 0usize);
        for clip in &stratum {
            let flagged = clip.score > tau_for(clip);
            match clip.truth {
                Condition::Abnormal => {
                    n_pos += 1;
                    if flagged {
                        tp += 1;
                    }
                }
                Condition::Normal => {
                    n_neg += 1;
                    if flagged {
                        fp += 1;
                    }
                }
            }
        }
        if n_pos == 0 {
            return Err(EvalError::OneClassEmpty(Condition::Abnormal));
        }
        if n_neg == 0 {
            return Err(EvalError::OneClassEmpty(Condition::Normal));
        }

        let tau = match case {
            EvalCase::Baseline => Some(thresholds.get(snr).unwrap().tau),
            EvalCase::Fixed => Some(thresholds.get(SceneClass::Plus6Db).unwrap().tau),
            EvalCase::SceneAware => None,
        };
        out.push(SnrCaseMetrics {
            case,
            snr,
            auc: auc(&labeled)?,
            tpr: tp as f64 / n_pos as f64,
            fpr: fp as f64 / n_neg as f64,
            tau,
            n_normal: n_neg,
            n_abnormal: n_pos,
        });
    }
    if out.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    Ok(out)
}

/// Scene confusion counts: `counts[true][predicted]`.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneConfusion {
    pub counts: [[u64; 3]; 3],
}

impl SceneConfusion {
    pub fn from_clips(clips: &[ClipEval]) -> Self {
        let mut counts = [[0u64; 3]; 3];
        for c in clips {
            counts[c.true_scene.index()][c.predicted_scene.index()] += 1;
        }
        SceneConfusion { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Fraction of clips whose scene was predicted correctly.
    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..3).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total() as f64
    }
}

/// Threshold sweep of one stratum, tied to the threshold it is centered on.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepTable {
    pub snr: SceneClass,
    pub tau: f64,
    pub step: f64,
    pub rows: Vec<SweepRow>,
}

/// Published full-corpus reference AUC (6 dB, 0 dB, -6 dB) for context when
/// running the complete protocol; informational only.
pub fn reference_auc(machine: MachineType) -> [f64; 3] {
    match machine {
        MachineType::Fan => [0.92, 0.83, 0.65],
        MachineType::Pump => [0.86, 0.82, 0.73],
        MachineType::Valve => [0.75, 0.68, 0.53],
        MachineType::SlideRail => [0.93, 0.89, 0.74],
    }
}

/// Everything the evaluation of one machine/ID produces.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvaluationReport {
    pub machine_type: String,
    pub machine_id: String,
    pub cases: Vec<SnrCaseMetrics>,
    pub scene_confusion: SceneConfusion,
    pub scene_accuracy: f64,
    pub sweeps: Vec<SweepTable>,
    /// Published reference AUC per SNR (6, 0, -6 dB) for the machine type,
    /// for side-by-side context on full-corpus runs.
    pub reference_auc_6_0_minus6: [f64; 3],
    pub notes: Vec<String>,
}

impl EvaluationReport {
    /// CSV with one row per (case, SNR): machine_type, machine_id, case,
    /// snr, auc, tpr, fpr, tau, n_normal, n_abnormal.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("machine_type,machine_id,case,snr,auc,tpr,fpr,tau,n_normal,n_abnormal\n");
        for m in &self.cases {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.machine_type,
                self.machine_id,
                m.case,
                m.snr,
                m.auc,
                m.tpr,
                m.fpr,
                m.tau.map(|t| t.to_string()).unwrap_or_default(),
                m.n_normal,
                m.n_abnormal,
            ));
        }
        out
    }

    /// CSV of the sweep tables: machine_type, machine_id, snr, k, threshold,
    /// value.
    pub fn sweep_csv(&self) -> String {
        let mut out = String::from("machine_type,machine_id,snr,k,threshold,value\n");
        for table in &self.sweeps {
            for row in &table.rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    self.machine_type, self.machine_id, table.snr, row.k, row.threshold, row.value,
                ));
            }
        }
        out
    }

    /// CSV of the scene confusion matrix.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true_scene,predicted_-6dB,predicted_0dB,predicted_6dB\n");
        for (i, scene) in SceneClass::ALL.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                scene,
                self.scene_confusion.counts[i][0],
                self.scene_confusion.counts[i][1],
                self.scene_confusion.counts[i][2],
            ));
        }
        out
    }
}

/// Cross-ID aggregate for one machine type: macro (mean of per-ID AUCs) and
/// pooled (single AUC over the union of clips) per (case, SNR).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MachineAverages {
    pub machine_type: String,
    pub n_ids: usize,
    pub rows: Vec<AverageRow>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AverageRow {
    pub case: EvalCase,
    pub snr: SceneClass,
    pub macro_auc: f64,
    pub macro_tpr: f64,
    pub macro_fpr: f64,
}

/// Arithmetic mean of per-ID metrics for each (case, SNR) cell present in
/// every report.
pub fn macro_average(reports: &[EvaluationReport]) -> Option<MachineAverages> {
    let first = reports.first()?;
    let mut cells: BTreeMap<(EvalCase, SceneClass), Vec<&SnrCaseMetrics>> = BTreeMap::new();
    for report in reports {
        for m in &report.cases {
            cells.entry((m.case, m.snr)).or_default().push(m);
        }
    }
    let rows = cells
        .into_iter()
        .map(|((case, snr), ms)| {
            let n = ms.len() as f64;
            AverageRow {
                case,
                snr,
                macro_auc: ms.iter().map(|m| m.auc).sum::<f64>() / n,
                macro_tpr: ms.iter().map(|m| m.tpr).sum::<f64>() / n,
                macro_fpr: ms.iter().map(|m| m.fpr).sum::<f64>() / n,
            }
        })
        .collect();
    Some(MachineAverages {
        machine_type: first.machine_type.clone(),
        n_ids: reports.len(),
        rows,
    })
}
