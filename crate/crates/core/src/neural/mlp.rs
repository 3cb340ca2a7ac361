use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Affine layer `y = W x + b`, `W` stored row-major with shape `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    /// He-uniform weights, zero biases.
    pub fn he_uniform(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| rng.random_range(-limit..=limit))
                .collect(),
            biases: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(Error::Dimension {
                context: "dense input",
                expected: self.inputs,
                got: x.len(),
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect())
    }

    /// Accumulate parameter gradients for upstream `dy` at input `x`; returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dy.iter().enumerate() {
            grad.biases[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }

    pub fn shape_eq(&self, other: &Dense) -> bool {
        self.inputs == other.inputs && self.outputs == other.outputs
    }
}

/// Multilayer perceptron with ReLU hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    #[serde(default)]
    pub output_activation: Activation,
}

/// Activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of every layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(sizes: &[usize], output_activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Self {
            layers: sizes.windows(2).map(|w| Dense::he_uniform(w[0], w[1], rng)).collect(),
            output_activation,
        })
    }

    pub fn zeros(sizes: &[usize], output_activation: Activation) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            output_activation,
        })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            Activation::Relu
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a)?;
            let act = self.activation(i);
            let next = z.iter().map(|&v| act.apply(v)).collect();
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        Ok((a, MlpCache { inputs, pre }))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut a = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            a = layer.forward(&a)?.into_iter().map(|v| act.apply(v)).collect();
        }
        Ok(a)
    }

    /// Accumulates `dL/dtheta` into `grads` and returns `dL/dx`.
    pub fn backward_into(&self, cache: &MlpCache, upstream: &[f64], grads: &mut Mlp) -> Result<Vec<f64>> {
        if cache.pre.len() != self.layers.len() || cache.pre.iter().zip(&self.layers).any(|(z, l)| z.len() != l.outputs)
        {
            return Err(Error::Dimension {
                context: "mlp cache",
                expected: self.layers.len(),
                got: cache.pre.len(),
            });
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::Dimension {
                context: "mlp upstream gradient",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if grads.layers.len() != self.layers.len() || grads.layers.iter().zip(&self.layers).any(|(g, l)| !g.shape_eq(l))
        {
            return Err(Error::Dimension {
                context: "mlp gradient buffer",
                expected: self.layers.len(),
                got: grads.layers.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let act = self.activation(i);
            for (d, &z) in delta.iter_mut().zip(&cache.pre[i]) {
                *d *= act.derivative(z);
            }
            delta = self.layers[i].backward(&cache.inputs[i], &delta, &mut grads.layers[i]);
        }
        Ok(delta)
    }

    /// Fresh parameter gradients for one sample; returns `(grads, dL/dx)`.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64]) -> Result<(Mlp, Vec<f64>)> {
        let mut grads = self.zeros_like();
        let dx = self.backward_into(cache, upstream, &mut grads)?;
        Ok((grads, dx))
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
            output_activation: self.output_activation,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl Params for Dense {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.biases]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.biases]
    }
}

impl Params for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Identity).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_layer_is_affine() {
        let mut net = Mlp::zeros(&[2, 2], Activation::Identity).unwrap();
        net.layers[0].weights = vec![1.0, 2.0, -3.0, 0.5];
        net.layers[0].biases = vec![0.25, -1.0];
        assert_eq!(net.predict(&[2.0, 4.0]).unwrap(), vec![10.25, -5.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let net = Mlp::new(&[3, 4, 2], Activation::Identity, &mut seeded(0)).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        let (_, cache) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(net.backward(&cache, &[1.0]).is_err());
        let other = Mlp::new(&[3, 5, 2], Activation::Identity, &mut seeded(0)).unwrap();
        assert!(other.backward(&cache, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let net = Mlp::new(&[3, 4, 2], Activation::Identity, &mut seeded(1)).unwrap();
        let (_, cache) = net.forward(&[0.3, -0.2, 0.9]).unwrap();
        let (g, dx) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_relu_gets_no_gradient() {
        let mut net = Mlp::zeros(&[1, 2, 1], Activation::Identity).unwrap();
        net.layers[0].weights = vec![1.0, -1.0];
        net.layers[1].weights = vec![1.0, 1.0];
        let (_, cache) = net.forward(&[2.0]).unwrap();
        let (g, _) = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.layers[0].weights[1], 0.0);
        assert_eq!(g.layers[0].biases[1], 0.0);
        assert_eq!(g.layers[0].weights[0], 2.0);
    }

    #[test]
    fn he_init_is_bounded_and_seeded() {
        let a = Mlp::new(&[24, 8], Activation::Identity, &mut seeded(3)).unwrap();
        let b = Mlp::new(&[24, 8], Activation::Identity, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 24.0).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= limit));
    }
}
