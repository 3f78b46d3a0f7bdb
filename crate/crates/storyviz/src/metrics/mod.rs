//! Evaluation stack: Fréchet distances over a task-trained feature
//! extractor, cosine alignment, and the keyword-consistency oracle.

mod extractor;
mod frechet;
pub mod linalg;
mod scores;

pub use extractor::{
    probe_accuracy_on_specs, train_extractor, Extractor, ExtractorConfig, FEATURE_DIM,
    GATE_ACCURACY,
};
pub use frechet::{frechet_distance, gaussian_stats, GaussianStats, PSD_TOLERANCE};
pub use scores::{
    compute_fid, compute_fsd, fid_min_samples, keyword_consistency, story_features, MetricReport,
};
