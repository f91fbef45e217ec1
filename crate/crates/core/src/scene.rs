//! Scene (surrounding noise level) classification.
//!
//! A small 1-D CNN over raw 250 ms segments: Conv1D with 16 filters of
//! length 64, global average pooling, a 64-unit ReLU dense layer, and a
//! 3-unit linear classification layer. Per-segment softmax probabilities are
//! summed across a clip and the class with the largest aggregate wins.

use thiserror::Error;

use crate::dsp::RawSegment;
use crate::nn::{
    self, softmax, Activation, AdamConfig, AdamState, Conv1dLayer, DenseLayer, Gradients, Layer,
    LossTarget, ModelMeta, Network, Scratch,
};
use crate::rng::Rng;

/// Expected raw-segment length (250 ms at 8 kHz).
pub const SNET_INPUT_LEN: usize = 2000;
/// Exact trainable parameter count of the S-Net architecture.
pub const SNET_PARAM_COUNT: usize = 2323;
const N_FILTERS: usize = 16;
const KERNEL_LEN: usize = 64;
const HIDDEN: usize = 64;
pub const N_SCENES: usize = 3;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("class {0} has no training segments")]
    MissingClass(SceneClass),
    #[error("segment has {actual} samples, expected {expected}")]
    BadSegmentLength { expected: usize, actual: usize },
    #[error("no segments to aggregate")]
    EmptySegmentList,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("network error: {0}")]
    Nn(#[from] nn::NnError),
}

/// Surrounding noise level, ordered from most to least noisy.
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
pub enum SceneClass {
    /// -6 dB SNR ("more noisy"), class index 0.
    #[serde(rename = "-6dB")]
    Minus6Db,
    /// 0 dB SNR ("noisy"), class index 1.
    #[serde(rename = "0dB")]
    ZeroDb,
    /// 6 dB SNR ("less noisy"), class index 2.
    #[serde(rename = "6dB")]
    Plus6Db,
}

impl SceneClass {
    pub const ALL: [SceneClass; N_SCENES] =
        [SceneClass::Minus6Db, SceneClass::ZeroDb, SceneClass::Plus6Db];

    pub fn index(self) -> usize {
        match self {
            SceneClass::Minus6Db => 0,
            SceneClass::ZeroDb => 1,
            SceneClass::Plus6Db => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            SceneClass::Minus6Db => "-6dB",
            SceneClass::ZeroDb => "0dB",
            SceneClass::Plus6Db => "6dB",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "-6dB" => Some(SceneClass::Minus6Db),
            "0dB" => Some(SceneClass::ZeroDb),
            "6dB" => Some(SceneClass::Plus6Db),
            _ => None,
        }
    }

    pub fn snr_db(self) -> f64 {
        match self {
            SceneClass::Minus6Db => -6.0,
            SceneClass::ZeroDb => 0.0,
            SceneClass::Plus6Db => 6.0,
        }
    }
}

impl std::fmt::Display for SceneClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// The scene classifier with its provenance metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct SnetModel {
    pub network: Network,
    pub meta: ModelMeta,
}

/// Freshly initialized S-Net; same seed, same weights.
pub fn build_snet(seed: u64) -> SnetModel {
    let mut rng = Rng::from_seed(seed);
    let network = Network::new(vec![
        Layer::Conv1d(Conv1dLayer::glorot(
            N_FILTERS,
            KERNEL_LEN,
            Activation::Relu,
            &mut rng,
        )),
        Layer::GlobalAvgPool,
        Layer::Dense(DenseLayer::glorot(
            N_FILTERS,
            HIDDEN,
            Activation::Relu,
            &mut rng,
        )),
        Layer::Dense(DenseLayer::glorot(
            HIDDEN,
            N_SCENES,
            Activation::Identity,
            &mut rng,
        )),
    ]);
    debug_assert_eq!(network.param_count(), SNET_PARAM_COUNT);
    let mut meta = ModelMeta::new("scene-classifier");
    meta.seed = Some(seed);
    meta.scene_classes = Some(SceneClass::ALL.iter().map(|c| c.label().into()).collect());
    SnetModel { network, meta }
}

/// Training options for [`train_snet`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SnetTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seed of the holdout split and shuffle streams.
    pub seed: u64,
    /// Fraction of segments held out per class for early stopping.
    pub holdout_frac: f64,
}

impl Default for SnetTrainConfig {
    fn default() -> Self {
        SnetTrainConfig {
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            holdout_frac: 0.1,
        }
    }
}

/// Per-epoch losses and the checkpoint the returned weights come from.
#[derive(Clone, Debug, PartialEq)]
pub struct SnetTrainLog {
    pub train_loss: Vec<f64>,
    pub holdout_loss: Vec<f64>,
    /// 1-based epoch whose weights were kept (minimum holdout loss).
    pub best_epoch: usize,
}

/// Trains the S-Net with cross-entropy and min-holdout-loss early stopping.
///
/// A seeded, per-class-stratified 10% of the segments is held out; after
/// every epoch the holdout loss is measured and the weights with the lowest
/// value over all epochs are the ones returned in the model.
pub fn train_snet(
    model: &mut SnetModel,
    data: &[(RawSegment, SceneClass)],
    cfg: &SnetTrainConfig,
) -> Result<SnetTrainLog, SceneError> {
    if data.is_empty() {
        return Err(SceneError::EmptyTrainingSet);
    }
    for (seg, _) in data {
        if seg.len() != SNET_INPUT_LEN {
            return Err(SceneError::BadSegmentLength {
                expected: SNET_INPUT_LEN,
                actual: seg.len(),
            });
        }
    }

    // Stratified holdout split, seeded.
    let mut rng = Rng::from_seed(cfg.seed);
    let mut holdout: Vec<usize> = Vec::new();
    let mut train: Vec<usize> = Vec::new();
    for class in SceneClass::ALL {
        let mut members: Vec<usize> = (0..data.len())
            .filter(|&i| data[i].1 == class)
            .collect();
        if members.is_empty() {
            return Err(SceneError::MissingClass(class));
        }
        rng.shuffle(&mut members);
        let k = ((members.len() as f64 * cfg.holdout_frac) as usize).max(1);
        let k = k.min(members.len() - 1).max(usize::from(members.len() > 1));
        holdout.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    holdout.sort_unstable();
    train.sort_unstable();

    let batch_size = cfg.batch_size.max(1);
    let mut adam = AdamState::new(cfg.adam, &model.network);
    let mut grads = Gradients::zeros_like(&model.network);
    let mut scratch = Scratch::new(&model.network, SNET_INPUT_LEN)?;

    let mut best: Option<(f64, Network)> = None;
    let mut best_epoch = 0;
    let mut log = SnetTrainLog {
        train_loss: Vec::with_capacity(cfg.epochs),
        holdout_loss: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
    };

    let mut order = train.clone();
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(batch_size) {
            grads.zero();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (seg, class) = &data[i];
                model.network.forward_trace(seg.as_slice(), &mut scratch)?;
                loss_sum += model.network.backward_from_trace(
                    &mut scratch,
                    &LossTarget::CrossEntropy(class.index()),
                    &mut grads,
                    scale,
                )?;
            }
            adam.step(&mut model.network, &grads)?;
        }
        log.train_loss.push(loss_sum / order.len() as f64);

        let mut held = 0.0;
        for &i in &holdout {
            let (seg, class) = &data[i];
            model.network.forward_trace(seg.as_slice(), &mut scratch)?;
            let (l, _) = nn::softmax_cross_entropy(&scratch.output().data, class.index())?;
            held += l;
        }
        let held = held / holdout.len() as f64;
        log.holdout_loss.push(held);
        if best.as_ref().is_none_or(|(b, _)| held < *b) {
            best = Some((held, model.network.clone()));
            best_epoch = epoch;
        }
    }

    if let Some((_, weights)) = best {
        model.network = weights;
    }
    log.best_epoch = best_epoch;
    model.meta.epochs = Some(cfg.epochs as u64);
    Ok(log)
}

/// Softmax class probabilities for one raw segment.
pub fn predict_segment(model: &SnetModel, seg: &RawSegment) -> Result<[f64; N_SCENES], SceneError> {
    if seg.len() != SNET_INPUT_LEN {
        return Err(SceneError::BadSegmentLength {
            expected: SNET_INPUT_LEN,
            actual: seg.len(),
        });
    }
    let logits = model.network.forward(seg.as_slice())?;
    let probs = softmax(&logits);
    Ok([probs[0], probs[1], probs[2]])
}

/// Clip-level scene decision: per-class probabilities are summed across the
/// segments and the largest aggregate wins; ties break toward the lowest
/// class index.
pub fn predict_clip(model: &SnetModel, segs: &[RawSegment]) -> Result<SceneClass, SceneError> {
    let sums = aggregate_probs(model, segs)?;
    let mut best = 0;
    for i in 1..N_SCENES {
        if sums[i] > sums[best] {
            best = i;
        }
    }
    Ok(SceneClass::from_index(best).unwrap())
}

/// Per-class sums of segment probabilities.
pub fn aggregate_probs(
    model: &SnetModel,
    segs: &[RawSegment],
) -> Result<[f64; N_SCENES], SceneError> {
    if segs.is_empty() {
        return Err(SceneError::EmptySegmentList);
    }
    let mut sums = [0.0; N_SCENES];
    for seg in segs {
        let p = predict_segment(model, seg)?;
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
    }
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_snet() -> SnetModel {
        SnetModel {
            network: Network::new(vec![
                Layer::Conv1d(Conv1dLayer::zeros(N_FILTERS, KERNEL_LEN, Activation::Relu)),
                Layer::GlobalAvgPool,
                Layer::Dense(DenseLayer::zeros(N_FILTERS, HIDDEN, Activation::Relu)),
                Layer::Dense(DenseLayer::zeros(HIDDEN, N_SCENES, Activation::Identity)),
            ]),
            meta: ModelMeta::new("scene-classifier"),
        }
    }

    fn segment_of(value: f64) -> RawSegment {
        RawSegment(vec![value; SNET_INPUT_LEN])
    }

    #[test]
    fn snet_has_exact_param_count_and_three_logits() {
        let model = build_snet(4);
        assert_eq!(model.network.param_count(), 2323);
        let logits = model.network.forward(&vec![0.1; 2000]).unwrap();
        assert_eq!(logits.len(), 3);
        assert_eq!(build_snet(4).network, model.network);
    }

    #[test]
    fn class_order_is_fixed() {
        assert_eq!(SceneClass::Minus6Db.index(), 0);
        assert_eq!(SceneClass::ZeroDb.index(), 1);
        assert_eq!(SceneClass::Plus6Db.index(), 2);
        assert_eq!(SceneClass::from_label("-6dB"), Some(SceneClass::Minus6Db));
        assert_eq!(SceneClass::ALL.len(), 3);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let model = build_snet(8);
        let mut rng = Rng::from_seed(2);
        for _ in 0..10 {
            let seg = RawSegment((0..SNET_INPUT_LEN).map(|_| rng.range(-1.0, 1.0)).collect());
            let p = predict_segment(&model, &seg).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let p = predict_segment(&zero_snet(), &segment_of(0.3)).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_length_is_rejected() {
        let model = zero_snet();
        let seg = RawSegment(vec![0.0; 1999]);
        assert!(matches!(
            predict_segment(&model, &seg),
            Err(SceneError::BadSegmentLength { .. })
        ));
    }

    #[test]
    fn aggregation_sums_probabilities() {
        // Verified against hand-added probability sums (0.9, 1.9, 0.2).
        let probs = [[0.6, 0.4, 0.0], [0.1, 0.8, 0.1], [0.2, 0.7, 0.1]];
        let mut sums = [0.0; 3];
        for p in probs {
            for (s, v) in sums.iter_mut().zip(p) {
                *s += v;
            }
        }
        for (got, want) in sums.iter().zip([0.9f64, 1.9, 0.2]) {
            assert!((got - want).abs() < 1e-12);
        }
        let argmax = (0..3).max_by(|&a, &b| sums[a].partial_cmp(&sums[b]).unwrap());
        assert_eq!(argmax, Some(1));
    }

    #[test]
    fn tie_breaks_toward_lowest_index() {
        // The zero model gives exactly uniform probabilities, so every class
        // aggregate ties and the lowest index must win.
        let model = zero_snet();
        let segs = vec![segment_of(0.1), segment_of(-0.4)];
        assert_eq!(predict_clip(&model, &segs).unwrap(), SceneClass::Minus6Db);
    }

    #[test]
    fn predict_clip_is_order_invariant_and_rejects_empty() {
        let model = build_snet(3);
        let mut rng = Rng::from_seed(17);
        let segs: Vec<RawSegment> = (0..5)
            .map(|_| RawSegment((0..SNET_INPUT_LEN).map(|_| rng.range(-0.5, 0.5)).collect()))
            .collect();
        let forward = predict_clip(&model, &segs).unwrap();
        let reversed: Vec<RawSegment> = segs.iter().rev().cloned().collect();
        assert_eq!(forward, predict_clip(&model, &reversed).unwrap());
        assert!(matches!(
            predict_clip(&model, &[]),
            Err(SceneError::EmptySegmentList)
        ));
    }

    #[test]
    fn sum_and_mean_aggregation_agree_on_argmax() {
        let model = build_snet(6);
        let mut rng = Rng::from_seed(23);
        for _ in 0..10 {
            let n = 1 + rng.below(6);
            let segs: Vec<RawSegment> = (0..n)
                .map(|_| {
                    RawSegment((0..SNET_INPUT_LEN).map(|_| rng.range(-1.0, 1.0)).collect())
                })
                .collect();
            let sums = aggregate_probs(&model, &segs).unwrap();
            let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
            let argmax =
                |xs: &[f64]| (0..xs.len()).max_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
            assert_eq!(argmax(&sums), argmax(&means));
        }
    }

    fn gain_dataset(
        rng: &mut Rng,
        per_class: usize,
    ) -> Vec<(RawSegment, SceneClass)> {
        // Three disjoint gain levels make the classes trivially separable.
        let gains = [1.2, 0.3, 0.05];
        let mut data = Vec::new();
        for (class, gain) in SceneClass::ALL.iter().zip(gains) {
            for _ in 0..per_class {
                let seg: Vec<f64> = (0..SNET_INPUT_LEN)
                    .map(|_| gain * rng.normal())
                    .collect();
                data.push((RawSegment(seg), *class));
            }
        }
        data
    }

    #[test]
    fn separable_classes_reach_high_holdout_accuracy() {
        let mut rng = Rng::from_seed(40);
        let data = gain_dataset(&mut rng, 60);
        let mut model = build_snet(41);
        let cfg = SnetTrainConfig {
            epochs: 25,
            batch_size: 32,
            seed: 42,
            ..SnetTrainConfig::default()
        };
        let log = train_snet(&mut model, &data, &cfg).unwrap();

        // The returned weights carry the minimum holdout loss.
        let min_loss = log
            .holdout_loss
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(log.holdout_loss[log.best_epoch - 1], min_loss);
        assert!(min_loss <= *log.holdout_loss.last().unwrap());

        // Fresh separable segments classify correctly.
        let eval = gain_dataset(&mut rng, 20);
        let correct = eval
            .iter()
            .filter(|(seg, class)| {
                let p = predict_segment(&model, seg).unwrap();
                let argmax = (0..3).max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap()).unwrap();
                argmax == class.index()
            })
            .count();
        let acc = correct as f64 / eval.len() as f64;
        assert!(acc > 0.95, "segment accuracy {acc}");
    }

    #[test]
    fn missing_class_is_an_error() {
        let mut rng = Rng::from_seed(50);
        let mut data = gain_dataset(&mut rng, 4);
        data.retain(|(_, c)| *c != SceneClass::ZeroDb);
        let mut model = build_snet(1);
        assert!(matches!(
            train_snet(&mut model, &data, &SnetTrainConfig::default()),
            Err(SceneError::MissingClass(SceneClass::ZeroDb))
        ));
    }
}
