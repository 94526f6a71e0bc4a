//! A small fully connected network: rectifier on hidden layers, identity
//! output, 64-bit parameters. Weights are stored row-major as
//! `outputs x inputs` per layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl TryFrom<MlpRepr> for Mlp {
    type Error = Error;

    fn try_from(r: MlpRepr) -> Result<Self> {
        Mlp::from_parts(r.sizes, r.weights, r.biases)
    }
}

impl From<Mlp> for MlpRepr {
    fn from(m: Mlp) -> Self {
        MlpRepr {
            sizes: m.sizes,
            weights: m.weights,
            biases: m.biases,
        }
    }
}

/// Values cached by a forward pass for use in [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Activations {
    /// Input to each layer (the network input, then hidden outputs).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer; the last one is the network output.
    pre: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn scale(&mut self, k: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Same parameter order as [`Mlp::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|x| x.is_finite())
    }
}

impl Mlp {
    /// All-zero network with the given layer sizes (input first).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config(format!("invalid layer sizes {sizes:?}")));
        }
        let weights = sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// He-uniform weights, zero biases.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Mlp::zeros(sizes)?;
        for (l, w) in net.weights.iter_mut().enumerate() {
            let bound = (6.0 / sizes[l] as f64).sqrt();
            w.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn from_parts(
        sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let net = Mlp::zeros(&sizes)?;
        if weights.len() != net.weights.len() || biases.len() != net.biases.len() {
            return Err(Error::data("layer count does not match sizes"));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.len() != net.weights[l].len() {
                return Err(Error::Shape {
                    context: "layer weights",
                    expected: net.weights[l].len(),
                    actual: w.len(),
                });
            }
            if b.len() != net.biases[l].len() {
                return Err(Error::Shape {
                    context: "layer biases",
                    expected: net.biases[l].len(),
                    actual: b.len(),
                });
            }
        }
        if !weights
            .iter()
            .chain(&biases)
            .flatten()
            .all(|x| x.is_finite())
        {
            return Err(Error::data("non-finite network parameter"));
        }
        Ok(Mlp {
            sizes,
            weights,
            biases,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        (&self.weights[l], &self.biases[l])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights[l], &mut self.biases[l])
    }

    /// Parameters flattened layer by layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                context: "flat parameters",
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut()
                .chain(b.iter_mut())
                .for_each(|x| *x = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|x| x.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "network input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn affine(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let n_in = self.sizes[l];
        self.weights[l]
            .chunks_exact(n_in)
            .zip(&self.biases[l])
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let last = self.num_layers() - 1;
        let mut h = x.to_vec();
        for l in 0..=last {
            h = self.affine(l, &h);
            if l < last {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Activations> {
        self.check_input(x)?;
        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut h = x.to_vec();
        for l in 0..=last {
            let z = self.affine(l, &h);
            inputs.push(h);
            h = if l < last {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                Vec::new()
            };
            pre.push(z);
        }
        Ok(Activations { inputs, pre })
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Gradients of a scalar loss given `upstream = dLoss/dOutput`.
    pub fn backward(&self, acts: &Activations, upstream: &[f64]) -> Result<Gradients> {
        let mut g = self.zero_gradients();
        self.backward_into(acts, upstream, &mut g)?;
        Ok(g)
    }

    /// Accumulates the gradients into `grads`.
    pub fn backward_into(
        &self,
        acts: &Activations,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape {
                context: "upstream gradient",
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let n_in = self.sizes[l];
            let input = &acts.inputs[l];
            for (j, d) in delta.iter().enumerate() {
                grads.biases[l][j] += d;
                if *d != 0.0 {
                    let row = &mut grads.weights[l][j * n_in..(j + 1) * n_in];
                    row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for (j, d) in delta.iter().enumerate() {
                    if *d != 0.0 {
                        let row = &self.weights[l][j * n_in..(j + 1) * n_in];
                        prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                    }
                }
                for (p, z) in prev.iter_mut().zip(&acts.pre[l - 1]) {
                    if *z <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// `params -= step * grads`, after rescaling `grads` to global norm at
    /// most `clip` when given.
    pub fn apply_gradients(&mut self, grads: &Gradients, step: f64, clip: Option<f64>) {
        let mut k = step;
        if let Some(c) = clip {
            let n = grads.norm();
            if n > c {
                k *= c / n;
            }
        }
        for (p, g) in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .zip(grads.weights.iter().chain(&grads.biases))
        {
            p.iter_mut().zip(g).for_each(|(p, g)| *p -= k * g);
        }
    }
}
