use serde::{Deserialize, Serialize};

use super::{softplus, Activation, AdamState, Dense, Mlp, MlpCache, NoiseSource, Params};
use crate::error::{ensure, Error, Result};
use crate::rng::SeededRng;

/// Gaussian-latent autoencoder. The encoder ends in ReLU features that feed separate
/// `mu` and `sigma` heads; `sigma` passes through softplus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub encoder: Mlp,
    pub mu_head: Dense,
    pub sigma_head: Dense,
    pub decoder: Mlp,
    pub latent_dim: usize,
}

/// Everything a backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct VaeForward {
    enc_cache: MlpCache,
    features: Vec<f64>,
    sigma_raw: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
    dec_cache: MlpCache,
    pub reconstruction: Vec<f64>,
}

impl VaeModel {
    /// `encoder_hidden` and `decoder_hidden` list hidden widths only.
    pub fn new(
        input_dim: usize,
        encoder_hidden: &[usize],
        latent_dim: usize,
        decoder_hidden: &[usize],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if encoder_hidden.is_empty() || latent_dim == 0 {
            return Err(Error::Config(
                "VAE needs at least one encoder layer and a latent".into(),
            ));
        }
        let mut enc = vec![input_dim];
        enc.extend_from_slice(encoder_hidden);
        let mut dec = vec![latent_dim];
        dec.extend_from_slice(decoder_hidden);
        dec.push(input_dim);
        let feat = *encoder_hidden.last().unwrap();
        Ok(Self {
            encoder: Mlp::new(&enc, Activation::Relu, rng)?,
            mu_head: Dense::he_uniform(feat, latent_dim, rng),
            sigma_head: Dense::he_uniform(feat, latent_dim, rng),
            decoder: Mlp::new(&dec, Activation::Identity, rng)?,
            latent_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.encoder.predict(x)?;
        let mu = self.mu_head.forward(&h)?;
        let sigma = self.sigma_head.forward(&h)?.into_iter().map(softplus).collect();
        Ok((mu, sigma))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decoder.predict(z)
    }

    /// Forward pass with an explicit noise draw.
    pub fn forward_with_eps(&self, x: &[f64], eps: &[f64]) -> Result<VaeForward> {
        if eps.len() != self.latent_dim {
            return Err(Error::Dimension {
                context: "vae noise",
                expected: self.latent_dim,
                got: eps.len(),
            });
        }
        let (features, enc_cache) = self.encoder.forward(x)?;
        let mu = self.mu_head.forward(&features)?;
        let sigma_raw = self.sigma_head.forward(&features)?;
        let sigma: Vec<f64> = sigma_raw.iter().map(|&r| softplus(r)).collect();
        let z: Vec<f64> = mu.iter().zip(&sigma).zip(eps).map(|((m, s), e)| m + s * e).collect();
        let (reconstruction, dec_cache) = self.decoder.forward(&z)?;
        Ok(VaeForward {
            enc_cache,
            features,
            sigma_raw,
            mu,
            sigma,
            eps: eps.to_vec(),
            z,
            dec_cache,
            reconstruction,
        })
    }

    pub fn forward(&self, x: &[f64], noise: &mut NoiseSource) -> Result<VaeForward> {
        let eps = noise.normals(self.latent_dim);
        self.forward_with_eps(x, &eps)
    }

    /// Accumulate into `grads` the gradient of `weight * vae_loss` plus an optional
    /// external gradient on `mu`.
    pub fn backward_into(
        &self,
        x: &[f64],
        fwd: &VaeForward,
        beta_kl: f64,
        weight: f64,
        extra_dmu: Option<&[f64]>,
        grads: &mut VaeModel,
    ) -> Result<()> {
        let n = x.len() as f64;
        let d_rec: Vec<f64> = fwd
            .reconstruction
            .iter()
            .zip(x)
            .map(|(r, x)| weight * 2.0 * (r - x) / n)
            .collect();
        let dz = self.decoder.backward_into(&fwd.dec_cache, &d_rec, &mut grads.decoder)?;
        let kl = weight * beta_kl;
        let mut dmu: Vec<f64> = dz.iter().zip(&fwd.mu).map(|(g, m)| g + kl * m).collect();
        if let Some(extra) = extra_dmu {
            if extra.len() != dmu.len() {
                return Err(Error::Dimension {
                    context: "vae mu gradient",
                    expected: dmu.len(),
                    got: extra.len(),
                });
            }
            for (d, e) in dmu.iter_mut().zip(extra) {
                *d += e;
            }
        }
        let draw: Vec<f64> = dz
            .iter()
            .zip(&fwd.eps)
            .zip(&fwd.sigma)
            .zip(&fwd.sigma_raw)
            .map(|(((g, e), s), r)| (g * e + kl * (s - 1.0 / s)) * sigmoid(*r))
            .collect();
        let mut dh = self.mu_head.backward(&fwd.features, &dmu, &mut grads.mu_head);
        for (a, b) in dh
            .iter_mut()
            .zip(self.sigma_head.backward(&fwd.features, &draw, &mut grads.sigma_head))
        {
            *a += b;
        }
        self.encoder.backward_into(&fwd.enc_cache, &dh, &mut grads.encoder)?;
        Ok(())
    }

    pub fn zeros_like(&self) -> VaeModel {
        VaeModel {
            encoder: self.encoder.zeros_like(),
            mu_head: Dense::zeros(self.mu_head.inputs, self.mu_head.outputs),
            sigma_head: Dense::zeros(self.sigma_head.inputs, self.sigma_head.outputs),
            decoder: self.decoder.zeros_like(),
            latent_dim: self.latent_dim,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Params for VaeModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.mu_head.tensors());
        t.extend(self.sigma_head.tensors());
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.mu_head.tensors_mut());
        t.extend(self.sigma_head.tensors_mut());
        t.extend(self.decoder.tensors_mut());
        t
    }
}

/// `z = mu + sigma * eps`, `eps ~ N(0, I)`.
pub fn reparameterize(mu: &[f64], sigma: &[f64], noise: &mut NoiseSource) -> Result<Vec<f64>> {
    ensure(mu.len() == sigma.len(), || "mu and sigma differ in length".into())?;
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| m + s * noise.standard_normal())
        .collect())
}

/// `KL(N(mu, sigma^2) || N(0, 1)) = 0.5 sum(mu^2 + sigma^2 - 1 - 2 ln sigma)`.
pub fn kl_divergence(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    ensure(mu.len() == sigma.len(), || "mu and sigma differ in length".into())?;
    if let Some(s) = sigma.iter().find(|&&s| s.is_nan() || s <= 0.0) {
        return Err(Error::NumericDomain(format!("sigma {s} must be > 0")));
    }
    Ok(0.5
        * mu.iter()
            .zip(sigma)
            .map(|(m, s)| m * m + s * s - 1.0 - 2.0 * s.ln())
            .sum::<f64>())
}

/// Mean squared reconstruction error plus `beta_kl` times the KL term.
pub fn vae_loss(x: &[f64], reconstruction: &[f64], mu: &[f64], sigma: &[f64], beta_kl: f64) -> Result<f64> {
    ensure(x.len() == reconstruction.len() && !x.is_empty(), || {
        "reconstruction shape mismatch".into()
    })?;
    let mse = x.iter().zip(reconstruction).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    Ok(mse + beta_kl * kl_divergence(mu, sigma)?)
}

/// One Adam step on the mean batch loss; returns the loss before the step.
pub fn vae_train_step(
    model: &mut VaeModel,
    batch: &[Vec<f64>],
    adam: &mut AdamState,
    noise: &mut NoiseSource,
    beta_kl: f64,
) -> Result<f64> {
    ensure(!batch.is_empty(), || "empty VAE batch".into())?;
    let mut grads = model.zeros_like();
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for x in batch {
        let fwd = model.forward(x, noise)?;
        total += vae_loss(x, &fwd.reconstruction, &fwd.mu, &fwd.sigma, beta_kl)?;
        model.backward_into(x, &fwd, beta_kl, scale, None, &mut grads)?;
    }
    adam.step(model, &grads)?;
    Ok(total * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::AdamConfig;
    use crate::rng::seeded;

    #[test]
    fn loss_examples() {
        assert_eq!(vae_loss(&[1.0, 2.0], &[1.0, 2.0], &[0.0], &[1.0], 1.0).unwrap(), 0.0);
        assert!((vae_loss(&[0.5], &[0.5], &[1.0], &[1.0], 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_divergence(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn kl_is_nonnegative() {
        let mut n = NoiseSource::new(2);
        for _ in 0..10_000 {
            let mu = [n.standard_normal() * 3.0];
            let sigma = [softplus(n.standard_normal() * 3.0)];
            assert!(kl_divergence(&mu, &sigma).unwrap() >= 0.0);
        }
    }

    #[test]
    fn zero_weight_encoder() {
        let mut vae = VaeModel::new(3, &[4], 2, &[4], &mut seeded(0)).unwrap();
        vae = VaeModel {
            mu_head: Dense {
                biases: vec![0.3, -0.7],
                ..Dense::zeros(4, 2)
            },
            sigma_head: Dense {
                biases: vec![-1.0, 2.0],
                ..Dense::zeros(4, 2)
            },
            encoder: vae.encoder.zeros_like(),
            ..vae
        };
        let (mu, sigma) = vae.encode(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(mu, vec![0.3, -0.7]);
        assert_eq!(sigma, vec![softplus(-1.0), softplus(2.0)]);
    }

    #[test]
    fn sigma_positive_on_random_inputs() {
        let vae = VaeModel::new(6, &[8, 4], 2, &[4, 8], &mut seeded(1)).unwrap();
        let mut n = NoiseSource::new(9);
        for _ in 0..10_000 {
            let x = n.normals(6).into_iter().map(|v| v * 10.0).collect::<Vec<_>>();
            assert!(vae.encode(&x).unwrap().1.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn reparameterize_degenerate_and_seeded() {
        let mut n = NoiseSource::new(0);
        assert_eq!(
            reparameterize(&[1.5, -2.0], &[0.0, 0.0], &mut n).unwrap(),
            vec![1.5, -2.0]
        );
        let a = reparameterize(&[0.0], &[1.0], &mut NoiseSource::new(4)).unwrap();
        let b = reparameterize(&[0.0], &[1.0], &mut NoiseSource::new(4)).unwrap();
        assert_eq!(a, b);
        assert!(reparameterize(&[0.0], &[1.0, 1.0], &mut n).is_err());
    }

    #[test]
    fn reparameterize_mean() {
        let mut n = NoiseSource::new(8);
        let draws = 100_000;
        let sum: f64 = (0..draws)
            .map(|_| reparameterize(&[2.0], &[0.5], &mut n).unwrap()[0])
            .sum();
        assert!((sum / draws as f64 - 2.0).abs() < 3.0 * 0.5 / (draws as f64).sqrt());
    }

    #[test]
    fn zero_learning_rate_freezes() {
        let mut vae = VaeModel::new(4, &[6], 2, &[6], &mut seeded(2)).unwrap();
        let before = vae.clone();
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(&vae, cfg);
        let batch = vec![vec![0.1, 0.2, 0.3, 0.4]];
        vae_train_step(&mut vae, &batch, &mut adam, &mut NoiseSource::new(0), 1.0).unwrap();
        assert_eq!(vae, before);
        assert!(vae_train_step(&mut vae, &[], &mut adam, &mut NoiseSource::new(0), 1.0).is_err());
    }
}
