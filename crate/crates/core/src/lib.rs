//! Unsupervised acoustic health monitoring for industrial machines.
//!
//! An autoencoder trained only on normal machine sounds scores clips by
//! reconstruction error; a small 1-D CNN classifies the surrounding noise
//! level so the decision threshold can be picked to match the scene. The
//! crate covers the full pipeline: WAV ingestion and synthesis, log-mel and
//! raw-segment features, from-scratch network training, threshold
//! computation, and TPR/FPR/AUC evaluation across baseline, scene-aware, and
//! fixed-threshold regimes.

pub mod anomaly;
pub mod audio;
pub mod dataset;
pub mod dsp;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod scene;

pub use anomaly::{
    build_ae, classify, clip_score, compute_threshold, train_ae, AeModel, AeTrainConfig,
    Condition, ErrorSet, ThresholdStats, ThresholdTable,
};
pub use audio::{load_wav, mix_at_snr, resample, synth_clip, to_mono, write_wav, AudioClip};
pub use dataset::{
    generate_synthetic_corpus, make_splits, scan_dataset, DatasetManifest, MachineType,
    SplitConfig, SplitPlan, SynthCorpusSpec,
};
pub use dsp::{
    build_mel_filterbank, context_frames, log_mel, segment_raw, stft_power, ContextVector,
    LogMelSpectrogram, MelFilterbank, RawSegment,
};
pub use eval::{auc, run_case, threshold_sweep, tpr_fpr, EvalCase, EvaluationReport};
pub use nn::{AdamConfig, AdamState, ModelMeta, Network};
pub use scene::{
    build_snet, predict_clip, predict_segment, train_snet, SceneClass, SnetModel,
    SnetTrainConfig,
};
