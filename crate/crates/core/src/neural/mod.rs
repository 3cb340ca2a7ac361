//! Dense networks, Adam and a Gaussian-latent VAE, all in `f64`.

mod adam;
mod gradcheck;
mod mlp;
mod noise;
mod vae;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{check_gradients, GradCheck};
pub use mlp::{Activation, Dense, Mlp, MlpCache};
pub use noise::NoiseSource;
pub use vae::{kl_divergence, reparameterize, vae_loss, vae_train_step, VaeForward, VaeModel};

/// Flat access to the trainable tensors of a model, in a stable order.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON envelope for model snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub version: u32,
    pub kind: String,
    pub payload: T,
}

impl<T: Serialize + DeserializeOwned> Checkpoint<T> {
    pub fn new(kind: impl Into<String>, payload: T) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            payload,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
