//! Progressive full-body pose estimation from three body-worn IMUs (head and
//! both wrists).
//!
//! The pipeline runs a global rough estimator followed by four stages ordered
//! by kinematic-chain depth, each a Transformer-encoder + biLSTM backbone with
//! MLP decoders. See [`progressive`] for the stage wiring, [`training`] for the
//! losses and optimizer, and [`runtime`] for sliding-window streaming.

pub mod backbone;
pub mod error;
pub mod rotmath;
pub mod datasets;
pub mod imusynth;
pub mod metrics;
pub mod progressive;
pub mod runtime;
pub mod skeleton;
pub mod training;

pub use error::{ProgipError, Result};
