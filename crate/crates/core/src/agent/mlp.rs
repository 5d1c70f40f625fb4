use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Fully connected network, tanh on hidden layers, linear output. Batches
/// are column-major: one sample per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Pre-activation inputs of every layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `inputs[l]` feeds layer `l`; `inputs[0]` is the batch itself.
    inputs: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

/// Orthogonal matrix (rows or columns orthonormal, whichever is shorter)
/// scaled by `gain`.
pub fn orthogonal<R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> DMatrix<f64> {
    let (tall_r, tall_c) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::from_fn(tall_r, tall_c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..tall_c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows >= cols { q } else { q.transpose() };
    q * gain
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`. Hidden weights get `hidden_gain`, the
    /// output layer `output_gain`; biases start at zero.
    pub fn orthogonal<R: Rng>(sizes: &[usize], hidden_gain: f64, output_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| Layer {
                w: orthogonal(w[1], w[0], if l == last { output_gain } else { hidden_gain }, rng),
                b: DVector::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                    b: DVector::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").w.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> MlpCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * &a;
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            if l < last {
                z.apply(|v| *v = v.tanh());
            }
            inputs.push(std::mem::replace(&mut a, z));
        }
        MlpCache { inputs, output: a }
    }

    /// Gradients of `Σ d_out ⊙ output` with respect to every parameter.
    pub fn backward(&self, cache: &MlpCache, d_out: &DMatrix<f64>) -> Mlp {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            let dw = &delta * input.transpose();
            let db = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            grads.push(Layer { w: dw, b: db });
            if l > 0 {
                let mut d_in = self.layers[l].w.transpose() * &delta;
                // input of layer l is tanh output of layer l-1
                d_in.zip_apply(input, |d, a| *d *= 1.0 - a * a);
                delta = d_in;
            }
        }
        grads.reverse();
        Mlp { layers: grads }
    }
}
