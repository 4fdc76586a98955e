//! Small dense networks with manual reverse-mode gradients and Adam.
//!
//! The policy head squashes through a scaled sigmoid so its outputs are
//! structurally confined to the normalized action box [-1, 1]; the value head
//! is linear. Everything is f64 and deterministic given the init seed.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// One affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Linear {
    fn zeros_like(&self) -> Linear {
        Linear {
            w: DMatrix::zeros(self.w.nrows(), self.w.ncols()),
            b: DVector::zeros(self.b.len()),
        }
    }
}

/// Output nonlinearity of the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    /// y = 2·sigmoid(z) − 1, range (−1, 1).
    SigmoidSymmetric,
    /// y = z.
    Linear,
}

/// Fully connected network with rectified-linear hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub out: OutputActivation,
}

/// Intermediate activations kept for the backward pass. `acts[0]` is the
/// input; `acts[i]` the post-activation output of layer i−1.
pub struct ForwardCache {
    acts: Vec<DVector<f64>>,
    preacts: Vec<DVector<f64>>,
}

/// Per-layer gradients, same shapes as the parameters.
pub struct Grads(pub Vec<Linear>);

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Grads {
        Grads(net.layers.iter().map(Linear::zeros_like).collect())
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            g.w *= s;
            g.b *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0
            .iter()
            .all(|g| g.w.iter().all(|x| x.is_finite()) && g.b.iter().all(|x| x.is_finite()))
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Mlp {
    /// He-normal hidden layers; the final layer starts at zero so the initial
    /// policy mean is the midpoint of the action box (and the initial value
    /// estimate is zero).
    pub fn new(dims: &[usize], out: OutputActivation, seed: u64) -> Mlp {
        assert!(dims.len() >= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (nin, nout) = (dims[k], dims[k + 1]);
            let last = k == dims.len() - 2;
            let w = if last {
                DMatrix::zeros(nout, nin)
            } else {
                let dist = Normal::new(0.0, (2.0 / nin as f64).sqrt()).unwrap();
                DMatrix::from_fn(nout, nin, |_, _| dist.sample(&mut rng))
            };
            layers.push(Linear { w, b: DVector::zeros(nout) });
        }
        Mlp { layers, out }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].w.ncols()];
        d.extend(self.layers.iter().map(|l| l.w.nrows()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|x| x.is_finite()) && l.b.iter().all(|x| x.is_finite()))
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &DVector<f64>) -> (DVector<f64>, ForwardCache) {
        let n = self.layers.len();
        let mut acts = Vec::with_capacity(n + 1);
        let mut preacts = Vec::with_capacity(n);
        acts.push(x.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let z = &layer.w * acts.last().unwrap() + &layer.b;
            let a = if k + 1 < n {
                z.map(|v| v.max(0.0))
            } else {
                match self.out {
                    OutputActivation::SigmoidSymmetric => z.map(|v| 2.0 * sigmoid(v) - 1.0),
                    OutputActivation::Linear => z.clone(),
                }
            };
            preacts.push(z);
            acts.push(a);
        }
        (acts.last().unwrap().clone(), ForwardCache { acts, preacts })
    }

    /// Reverse pass: given ∂L/∂y at the cached point, accumulate parameter
    /// gradients into `grads`.
    pub fn backward(&self, cache: &ForwardCache, dl_dy: &DVector<f64>, grads: &mut Grads) {
        let n = self.layers.len();
        // ∂L/∂z of the last layer
        let mut delta = match self.out {
            OutputActivation::SigmoidSymmetric => {
                // dy/dz = (1 − y²)/2 for y = 2σ(z) − 1
                let y = &cache.acts[n];
                DVector::from_fn(dl_dy.len(), |i, _| dl_dy[i] * (1.0 - y[i] * y[i]) / 2.0)
            }
            OutputActivation::Linear => dl_dy.clone(),
        };
        for k in (0..n).rev() {
            grads.0[k].w += &delta * cache.acts[k].transpose();
            grads.0[k].b += &delta;
            if k > 0 {
                let back = self.layers[k].w.transpose() * &delta;
                let z = &cache.preacts[k - 1];
                delta = DVector::from_fn(back.len(), |i, _| if z[i] > 0.0 { back[i] } else { 0.0 });
            }
        }
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<Linear>,
    v: Vec<Linear>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(net: &Mlp) -> Adam {
        Adam {
            m: net.layers.iter().map(Linear::zeros_like).collect(),
            v: net.layers.iter().map(Linear::zeros_like).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((layer, g), (m, v)) in net
            .layers
            .iter_mut()
            .zip(&grads.0)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (idx, gw) in g.w.iter().enumerate() {
                let mw = &mut m.w[idx];
                let vw = &mut v.w[idx];
                *mw = self.beta1 * *mw + (1.0 - self.beta1) * gw;
                *vw = self.beta2 * *vw + (1.0 - self.beta2) * gw * gw;
                layer.w[idx] -= lr * (*mw / bc1) / ((*vw / bc2).sqrt() + self.eps);
            }
            for (idx, gb) in g.b.iter().enumerate() {
                let mb = &mut m.b[idx];
                let vb = &mut v.b[idx];
                *mb = self.beta1 * *mb + (1.0 - self.beta1) * gb;
                *vb = self.beta2 * *vb + (1.0 - self.beta2) * gb * gb;
                layer.b[idx] -= lr * (*mb / bc1) / ((*vb / bc2).sqrt() + self.eps);
            }
        }
    }
}
