//! Sequence backbone shared by the global estimator and every stage:
//! input projection, sinusoidal positions, a Transformer encoder, a
//! bidirectional LSTM and MLP decoders.
//!
//! Parameters live in one flat vector described by a [`ParamLayout`], so the
//! optimizer, checkpoints and gradient checks all see the same ordering.

mod checkpoint;
mod gradcheck;
mod layout;
mod net;
pub(crate) mod scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport, TensorError};
pub use layout::{ParamLayout, TensorSpec};
pub use net::{Backbone, ForwardCache};
pub use scalar::Scalar;

use serde::{Deserialize, Serialize};

use crate::error::{ProgipError, Result};

/// Output width of the pelvis (global) decoder.
pub const PELVIS_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormPlacement {
    /// Residual add, then LayerNorm.
    Post,
    /// LayerNorm on the branch input, plus a final LayerNorm after the stack.
    Pre,
}

/// Layer widths and depths, independent of a network's input and output size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Widths {
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub tf_layers: usize,
    pub rnn_layers: usize,
    /// Hidden size per LSTM direction.
    pub rnn_width: usize,
    pub decoder_hidden: usize,
    pub norm: NormPlacement,
}

impl Widths {
    /// Full-size configuration used for the published results.
    pub fn paper() -> Self {
        Widths {
            d_model: 256,
            heads: 8,
            ff_dim: 1024,
            tf_layers: 3,
            rnn_layers: 2,
            rnn_width: 256,
            decoder_hidden: 256,
            norm: NormPlacement::Post,
        }
    }

    /// Reduced widths that train in minutes on a single CPU core.
    pub fn desk() -> Self {
        Widths {
            d_model: 32,
            heads: 8,
            ff_dim: 64,
            tf_layers: 2,
            rnn_layers: 1,
            rnn_width: 32,
            decoder_hidden: 64,
            norm: NormPlacement::Post,
        }
    }

    /// Width of the features handed to the decoders.
    pub fn encoding_dim(&self) -> usize {
        if self.rnn_layers > 0 {
            2 * self.rnn_width
        } else {
            self.d_model
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Split the output into a 6-wide pelvis decoder (columns `0..6`) and a
    /// pose decoder for the rest.
    pub pelvis_head: bool,
    #[serde(flatten)]
    pub widths: Widths,
}

impl BackboneConfig {
    pub fn new(in_dim: usize, out_dim: usize, pelvis_head: bool, widths: Widths) -> Self {
        BackboneConfig {
            in_dim,
            out_dim,
            pelvis_head,
            widths,
        }
    }

    pub fn pose_dim(&self) -> usize {
        if self.pelvis_head {
            self.out_dim - PELVIS_DIM
        } else {
            self.out_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        let bad = |msg: String| Err(ProgipError::Config(msg));
        if self.in_dim == 0 || self.out_dim == 0 || w.d_model == 0 {
            return bad(format!("zero-sized backbone: {self:?}"));
        }
        if w.tf_layers > 0 && (w.heads == 0 || w.d_model % w.heads != 0) {
            return bad(format!("d_model {} is not divisible by {} heads", w.d_model, w.heads));
        }
        if w.rnn_layers > 0 && w.rnn_width == 0 {
            return bad("rnn_width must be positive".into());
        }
        if w.decoder_hidden == 0 {
            return bad("decoder_hidden must be positive".into());
        }
        if self.pelvis_head && self.out_dim <= PELVIS_DIM {
            return bad(format!("out_dim {} leaves nothing for the pose decoder", self.out_dim));
        }
        Ok(())
    }
}
