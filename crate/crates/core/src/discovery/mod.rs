//! Co-occurrence discovery: similarity, prototype head, losses, baselines.

mod baselines;
mod head;
mod loss;
mod prototype;
mod similarity;

pub use baselines::{baseline_max_size, baseline_region_word, heuristic_discovery};
pub use head::{DiscoveryHead, HeadGrad, HeadTrace, RowLayout};
pub use loss::{
    bce_from_logits, image_text_loss, region_word_loss, OpenVocabClassifier, DEFAULT_TEMPERATURE,
};
pub use prototype::{discover_prototype, Prototype};
pub use similarity::{
    build_similarity_matrix, similarity_from_units, text_guide_weights, text_guided_similarity,
    GuideWeights, SimilarityMatrix,
};
