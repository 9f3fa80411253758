//! Joint language and speaker recognition with coupled projected-LSTM
//! branches: synthetic corpora, training, embedding extraction, scoring
//! backends and detection/identification metrics.

pub mod config;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod features;
pub mod linalg;
pub mod lstmp;
pub mod metrics;
pub mod multitask;
pub mod scoring;
pub mod serialize;
pub mod training;

pub use config::{EvalConfig, ExperimentConfig, ModelConfig};
pub use embedding::{enroll, extract_rvector, extract_rvector_multitask, EnrollModel, RVector, Task};
pub use error::{CoreError, Result};
pub use experiment::{
    evaluate_lre, evaluate_sre, run_ablation, train_joint, train_single_task, EvalModel,
    LreBackend,
};
pub use features::{
    crop_short, generate_corpus, load_archive, save_archive, Corpus, CorpusManifest,
    FeatureSequence, ManifestEntry, OffsetRule, Split, SynthSpec,
};
pub use linalg::Mat;
pub use lstmp::{forward_sequence, init_params, LstmpDims, LstmpParams, LstmpState, StepOutput};
pub use metrics::{
    build_sre_trials, compute_eer, compute_idr, far_frr_points, MetricReport, Trial, TrialSet,
};
pub use multitask::{
    init_multitask, mt_forward, CrossTaskWeights, FeedbackRouting, MultiTaskDims, MultiTaskModel,
    Sink, Source,
};
pub use scoring::{
    cosine_score, lda_train, softmax_language_id, softmax_language_id_multitask, svm_train,
    LdaModel, SvmModel,
};
pub use serialize::{load_model, model_from_string, model_to_string, save_model, ModelFile, SingleTaskModel};
pub use training::{
    gradcheck, train_multitask, train_single, GradReport, LossSpec, LossTrace, OptimizerSpec,
};
