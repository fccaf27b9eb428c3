//! Caption-branch training of the discovery head.
//!
//! Gradients are derived by hand: region-word BCE → prototype → softmax over
//! head logits → head → similarity matrix → unit-normalised features → raw
//! features, plus the direct path of each raw feature into the prototype and
//! the image-text branch through the mean-feature image proxy.

mod batch;
pub mod checkpoint;
mod gradcheck;
mod optim;
mod run;
mod state;

pub use batch::{caption_batch_loss, caption_batch_loss_with, BatchLoss, GradRequest, LossWeights};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, ParamGroup};
pub use optim::Sgd;
pub use run::{metrics_csv, run_training, run_training_with, StepMetrics, TrainOutcome};
pub use state::{
    caption_embeddings, CaptionEmbeddings, FeatureStore, GradientBundle, ModelState, TrainConfig,
    Trainable,
};
