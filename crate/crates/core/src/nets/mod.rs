//! Encoder/decoder/critic networks, the hyperbolic head, and adversarial
//! training.

pub mod head;
pub mod layers;
pub mod losses;
pub mod model;
pub mod param;
pub mod train;

pub use head::HyperbolicHead;
pub use model::{Architecture, Critic, ModelBundle};
pub use param::{Binder, Param};
pub use train::{LossReport, OptimizerState, TrainConfig, TrainMode, Trainer};
