use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `fan_in x fan_out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Fully connected network with tanh hidden activations and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Layer inputs recorded by [`Mlp::forward_cached`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp {
            layers: sizes
                .windows(2)
                .map(|w| Linear {
                    weight: Array2::zeros((w[0], w[1])),
                    bias: Array1::zeros(w[1]),
                })
                .collect(),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases; the last layer's
    /// weights are multiplied by `output_scale`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Self {
        let mut net = Mlp::zeros(sizes);
        let last = net.layers.len() - 1;
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let bound = 1.0 / (layer.weight.nrows() as f64).sqrt();
            let scale = if k == last { output_scale } else { 1.0 };
            layer.weight.mapv_inplace(|_| rng.random_range(-bound..bound) * scale);
        }
        net
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.ncols()).unwrap_or(0)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight);
            z += &layer.bias;
            if k < last {
                z.mapv_inplace(f64::tanh);
            }
            inputs.push(a);
            a = z;
        }
        Ok((a, MlpCache { inputs }))
    }

    /// Reverse-mode gradient of a scalar loss given `dL/d(output)`.
    pub fn backward(&self, cache: &MlpCache, grad_out: ArrayView2<f64>) -> Result<Mlp> {
        let rows = cache.inputs.first().map(|x| x.nrows()).unwrap_or(0);
        if cache.inputs.len() != self.layers.len() || grad_out.nrows() != rows || grad_out.ncols() != self.output_dim() {
            return Err(Error::Shape("gradient does not match the cached forward pass".into()));
        }
        let mut grads = self.zeros_like();
        let mut g = grad_out.to_owned();
        for k in (0..self.layers.len()).rev() {
            let input = &cache.inputs[k];
            grads.layers[k].weight = input.t().dot(&g).as_standard_layout().into_owned();
            grads.layers[k].bias = g.sum_axis(Axis(0));
            if k > 0 {
                let mut prev = g.dot(&self.layers[k].weight.t());
                // input is tanh(z) of the previous layer
                prev.zip_mut_with(input, |d, &a| *d *= 1.0 - a * a);
                g = prev;
            }
        }
        Ok(grads)
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice().unwrap(), l.bias.as_slice().unwrap()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_slice_mut().unwrap(), l.bias.as_slice_mut().unwrap()])
            .collect()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weight.dim()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 5, 2]);
        let y = net.forward(array![[1.0, -2.0, 0.5], [0.0, 0.3, 0.9]].view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init(&[3, 8, 8, 2], 1.0, &mut rng);
        let x = array![[1.0, -2.0, 0.5], [0.0, 0.3, 0.9], [0.2, 0.2, -0.7]];
        let y = net.forward(x.view()).unwrap();
        let xp = array![[0.2, 0.2, -0.7], [1.0, -2.0, 0.5], [0.0, 0.3, 0.9]];
        let yp = net.forward(xp.view()).unwrap();
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            assert_eq!(y.row(i), yp.row(j));
        }
    }

    #[test]
    fn linear_net_gradient_is_closed_form() {
        // Single layer: y = x W + b, L = sum(y * g) => dW = x^T g, db = sum_rows g.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::init(&[3, 2], 1.0, &mut rng);
        let x = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        let g = array![[0.5, -1.0], [2.0, 0.25]];
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let grads = net.backward(&cache, g.view()).unwrap();
        assert_eq!(grads.layers[0].weight, x.t().dot(&g));
        assert_eq!(grads.layers[0].bias, array![2.5, -0.75]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::init(&[4, 6, 6, 3], 1.0, &mut rng);
        let x = Array2::from_elem((5, 4), 0.3);
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let grads = net.backward(&cache, Array2::zeros((5, 3)).view()).unwrap();
        assert!(grads.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let net = Mlp::zeros(&[2, 3, 1]);
        let (_, cache) = net.forward_cached(Array2::zeros((4, 2)).view()).unwrap();
        assert!(net.backward(&cache, Array2::zeros((3, 1)).view()).is_err());
        assert!(net.forward(Array2::zeros((1, 3)).view()).is_err());
    }

    #[test]
    fn finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::init(&[3, 4, 4, 2], 1.0, &mut rng);
        let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let g = Array2::from_shape_fn((6, 2), |(i, j)| ((i + 5 * j) as f64 * 0.71).cos());
        let loss = |n: &Mlp| (n.forward(x.view()).unwrap() * &g).sum();
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let grads = net.backward(&cache, g.view()).unwrap();
        let h = 1e-5;
        let analytic: Vec<f64> = grads.tensors().concat();
        let mut k = 0;
        let n_tensors = net.tensors().len();
        for t in 0..n_tensors {
            let len = net.tensors()[t].len();
            for e in 0..len {
                let mut plus = net.clone();
                plus.tensors_mut()[t][e] += h;
                let mut minus = net.clone();
                minus.tensors_mut()[t][e] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = analytic[k];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "tensor {t} entry {e}: {a} vs {numeric}");
                k += 1;
            }
        }
    }
}
