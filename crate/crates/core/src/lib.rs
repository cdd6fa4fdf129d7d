//! Continual learning for action-conditioned motion generation: a conditional
//! GRU VAE over 6D-rotation skeletal motion, with one trainable latent
//! Gaussian per class, generative replay between tasks, and classifier-based
//! evaluation.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for common use.

pub mod autodiff;
pub mod batch;
pub mod body;
pub mod checkpoint;
pub mod classifier;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod optim;
pub mod replay;
pub mod rotation;
pub mod scalar;
pub mod seqvae;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use body::Skeleton;
pub use classifier::{pretrain_classifier, Classifier, ClassifierConfig};
pub use error::{Error, Result};
pub use losses::LossBreakdown;
pub use metrics::{EvalProtocol, EvalReport};
pub use motion::{Dataset, MotionSequence, PoseFrame, TaskSchedule};
pub use replay::{ReplayConfig, ReplaySource};
pub use scalar::Scalar;
pub use seqvae::{Checkpoint, ModelConfig, SeqVae};
pub use trainer::{run_cl2gen, RunLog, RunSetup, TrainConfig};

pub type SeqVaeF32 = SeqVae<f32>;
pub type SeqVaeF64 = SeqVae<f64>;
pub type ClassifierF32 = Classifier<f32>;
pub type ClassifierF64 = Classifier<f64>;
pub type DatasetF32 = Dataset<f32>;
pub type DatasetF64 = Dataset<f64>;
pub type MotionSequenceF32 = MotionSequence<f32>;
pub type MotionSequenceF64 = MotionSequence<f64>;
