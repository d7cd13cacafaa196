//! Minimal CPU neural-network toolkit: NCHW tensors, layers with explicit
//! backward passes, and optimizers. Everything is single-threaded and
//! deterministic for a fixed seed.

pub mod hexbuf;
mod layers;
mod optim;
mod tensor;

pub use layers::{
    Conv2d, DepthwiseConv2d, GlobalPool, Layer, LeakyRelu, Linear, Param, PoolKind, Reshape, Residual,
    Sequential, Tanh, Upsample2x,
};
pub use optim::{Adam, Optimizer, Sgd};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Copies every parameter buffer out of a network, in traversal order.
pub fn export_params(net: &dyn Layer) -> Vec<Vec<f32>> {
    net.params().iter().map(|p| p.value.clone()).collect()
}

/// Loads buffers produced by [`export_params`] into a network of the same architecture.
pub fn import_params(net: &mut dyn Layer, values: &[Vec<f32>]) -> Result<()> {
    let mut params = net.params_mut();
    if params.len() != values.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: network has {}, checkpoint has {}",
            params.len(),
            values.len()
        )));
    }
    for (i, (p, v)) in params.iter_mut().zip(values).enumerate() {
        if p.value.len() != v.len() {
            return Err(Error::Checkpoint(format!(
                "parameter {i} has {} values, checkpoint has {}",
                p.value.len(),
                v.len()
            )));
        }
        p.value.copy_from_slice(v);
        p.zero_grad();
    }
    Ok(())
}

pub fn zero_grads(net: &mut dyn Layer) {
    for p in net.params_mut() {
        p.zero_grad();
    }
}

pub fn param_count(net: &dyn Layer) -> usize {
    net.params().iter().map(|p| p.value.len()).sum()
}

/// Hex SHA-256 over the little-endian bytes of all parameters.
pub fn weight_hash(net: &dyn Layer) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in net.params() {
        for v in &p.value {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
