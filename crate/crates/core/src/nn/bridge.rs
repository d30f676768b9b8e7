use seqex_autodiff::{Graph, NodeId};

use crate::error::{config_err, Result};
use crate::nn::lstm::zeros;
use crate::nn::transducer::EncodedSeq;

/// Produces the decoder's initial per-layer `(h, c)`.
pub trait Bridge {
    fn dec_dim(&self) -> usize;
    fn dec_layers(&self) -> usize;
    /// Construction-time compatibility check against the encoder.
    fn check_encoder(&self, enc_dim: usize, enc_layers: usize) -> Result<()>;
    fn initial(&self, g: &mut Graph<'_>, enc: &EncodedSeq, batch: usize) -> Result<Vec<(NodeId, NodeId)>>;
}

/// Copies the encoder's final hidden and cell states layer by layer.
#[derive(Debug)]
pub struct CopyBridge {
    pub dec_dim: usize,
    pub dec_layers: usize,
}

impl Bridge for CopyBridge {
    fn dec_dim(&self) -> usize {
        self.dec_dim
    }

    fn dec_layers(&self) -> usize {
        self.dec_layers
    }

    fn check_encoder(&self, enc_dim: usize, enc_layers: usize) -> Result<()> {
        if enc_dim != self.dec_dim || enc_layers != self.dec_layers {
            return config_err(format!(
                "CopyBridge needs matching encoder and decoder: encoder {enc_layers} layer(s) of dim {enc_dim}, decoder {} layer(s) of dim {}",
                self.dec_layers, self.dec_dim
            ));
        }
        Ok(())
    }

    fn initial(&self, _g: &mut Graph<'_>, enc: &EncodedSeq, _batch: usize) -> Result<Vec<(NodeId, NodeId)>> {
        if enc.final_states.len() != self.dec_layers {
            return config_err("encoder final states do not match decoder layers");
        }
        Ok(enc.final_states.clone())
    }
}

/// Starts the decoder from zero states.
#[derive(Debug)]
pub struct NoBridge {
    pub dec_dim: usize,
    pub dec_layers: usize,
}

impl Bridge for NoBridge {
    fn dec_dim(&self) -> usize {
        self.dec_dim
    }

    fn dec_layers(&self) -> usize {
        self.dec_layers
    }

    fn check_encoder(&self, _enc_dim: usize, _enc_layers: usize) -> Result<()> {
        Ok(())
    }

    fn initial(&self, g: &mut Graph<'_>, _enc: &EncodedSeq, batch: usize) -> Result<Vec<(NodeId, NodeId)>> {
        Ok((0..self.dec_layers)
            .map(|_| (zeros(g, batch, self.dec_dim), zeros(g, batch, self.dec_dim)))
            .collect())
    }
}
