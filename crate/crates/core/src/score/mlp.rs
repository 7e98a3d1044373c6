//! Fully connected network `ℝ^d → ℝ^d` with softsign hidden layers.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (`out × in`, row-major) followed by the bias. Batched passes go through
//! `matrixmultiply`; everything is single-threaded and deterministic.

use serde::{Deserialize, Serialize};

use super::{check_points, ScoreModel};
use crate::error::{Error, Result};
use crate::sampling::SimRng;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `z / (1 + |z|)`
    #[default]
    Softsign,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Softsign => z / (1.0 + z.abs()),
        }
    }

    /// Derivative expressed through the activation value `a = apply(z)`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Softsign => {
                let r = 1.0 - a.abs();
                r * r
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Softsign => {
                let a = 1.0 + z.abs();
                1.0 / (a * a)
            }
        }
    }
}

/// Rows per block in batched passes, sized so activations stay in cache.
const FORWARD_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    n_in: usize,
    n_out: usize,
    w_off: usize,
    b_off: usize,
}

/// Multilayer perceptron with identity output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Intermediate values of a forward pass, needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    input: Vec<f64>,
    /// Activations of each hidden layer.
    act: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Mlp {
    /// Zero-initialized network with layer widths `sizes = [d, h₁, …, d]`.
    pub fn zeros(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
            return Err(Error::Domain(format!("invalid layer sizes {sizes:?}")));
        }
        if sizes[0] != sizes[sizes.len() - 1] {
            return Err(Error::DimensionMismatch {
                expected: sizes[0],
                got: sizes[sizes.len() - 1],
            });
        }
        let count = param_count(&sizes);
        Ok(Self {
            sizes,
            activation: Activation::Softsign,
            params: vec![0.0; count],
        })
    }

    /// `d → hidden → d` network with Glorot-uniform weights and zero biases.
    pub fn new(d: usize, hidden: &[usize], rng: &mut SimRng) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(d);
        sizes.extend_from_slice(hidden);
        sizes.push(d);
        let mut m = Self::zeros(sizes)?;
        for l in 0..m.n_layers() {
            let shape = m.layer(l);
            let limit = (6.0 / (shape.n_in + shape.n_out) as f64).sqrt();
            for w in &mut m.params[shape.w_off..shape.b_off] {
                *w = limit * (2.0 * rng.uniform() - 1.0);
            }
        }
        Ok(m)
    }

    /// Network from explicit sizes and a flat parameter vector.
    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(sizes)?;
        if params.len() != m.params.len() {
            return Err(Error::DimensionMismatch {
                expected: m.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("non-finite network parameter".into()));
        }
        m.params = params;
        Ok(m)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn layer(&self, l: usize) -> LayerShape {
        let mut off = 0;
        for i in 0..l {
            off += self.sizes[i] * self.sizes[i + 1] + self.sizes[i + 1];
        }
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        LayerShape {
            n_in,
            n_out,
            w_off: off,
            b_off: off + n_in * n_out,
        }
    }

    /// `out = a · Wᵀ + b` for a batch of `m` rows.
    fn affine(&self, shape: LayerShape, a: &[f64], m: usize) -> Vec<f64> {
        let w = &self.params[shape.w_off..shape.b_off];
        let b = &self.params[shape.b_off..shape.b_off + shape.n_out];
        let mut out = Vec::with_capacity(m * shape.n_out);
        for _ in 0..m {
            out.extend_from_slice(b);
        }
        gemm(
            m,
            shape.n_in,
            shape.n_out,
            a,
            (shape.n_in, 1),
            w,
            (1, shape.n_in),
            1.0,
            &mut out,
            (shape.n_out, 1),
        );
        out
    }

    /// Forward pass over `m` row-major points.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        for chunk in x.chunks(self.input_dim() * FORWARD_CHUNK) {
            out.extend(self.forward_block(chunk));
        }
        out
    }

    fn forward_block(&self, x: &[f64]) -> Vec<f64> {
        let m = x.len() / self.input_dim();
        let mut a = x.to_vec();
        for l in 0..self.n_layers() {
            let shape = self.layer(l);
            let mut h = self.affine(shape, &a, m);
            if l + 1 < self.n_layers() {
                for v in &mut h {
                    *v = self.activation.apply(*v);
                }
            }
            a = h;
        }
        a
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, ForwardCache) {
        let m = x.len() / self.input_dim();
        let mut cache = ForwardCache {
            batch: m,
            input: x.to_vec(),
            act: Vec::with_capacity(self.n_layers() - 1),
        };
        let mut out = Vec::new();
        for l in 0..self.n_layers() {
            let shape = self.layer(l);
            let a = if l == 0 { &cache.input } else { &cache.act[l - 1] };
            let mut h = self.affine(shape, a, m);
            if l + 1 < self.n_layers() {
                for v in &mut h {
                    *v = self.activation.apply(*v);
                }
                cache.act.push(h);
            } else {
                out = h;
            }
        }
        (out, cache)
    }

    /// Reverse-mode gradient of a batch loss with respect to every parameter,
    /// given `∂L/∂output` for each row of the cached batch.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_accumulate(cache, grad_out, &mut grad);
        grad
    }

    /// Like [`Mlp::backward`], adding the gradient into `grad`.
    pub fn backward_accumulate(&self, cache: &ForwardCache, grad_out: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let m = cache.batch;
        let mut delta = grad_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let shape = self.layer(l);
            let a_prev = if l == 0 { &cache.input } else { &cache.act[l - 1] };
            // dW = δᵀ · a_prev
            {
                let gw = &mut grad[shape.w_off..shape.b_off];
                gemm(
                    shape.n_out,
                    m,
                    shape.n_in,
                    &delta,
                    (1, shape.n_out),
                    a_prev,
                    (shape.n_in, 1),
                    1.0,
                    gw,
                    (shape.n_in, 1),
                );
            }
            {
                let gb = &mut grad[shape.b_off..shape.b_off + shape.n_out];
                for row in delta.chunks_exact(shape.n_out) {
                    for (g, v) in gb.iter_mut().zip(row) {
                        *g += v;
                    }
                }
            }
            if l > 0 {
                let w = &self.params[shape.w_off..shape.b_off];
                let mut prev = vec![0.0; m * shape.n_in];
                gemm(
                    m,
                    shape.n_out,
                    shape.n_in,
                    &delta,
                    (shape.n_out, 1),
                    w,
                    (shape.n_in, 1),
                    0.0,
                    &mut prev,
                    (shape.n_in, 1),
                );
                for (p, a) in prev.iter_mut().zip(&cache.act[l - 1]) {
                    *p *= self.activation.derivative_from_output(*a);
                }
                delta = prev;
            }
        }
    }

    /// Exact divergence `∇ · s` at each row, by forward-mode propagation of
    /// the `d` coordinate tangents.
    pub fn divergence(&self, x: &[f64]) -> Vec<f64> {
        let d = self.input_dim();
        let m = x.len() / d;
        let mut out = Vec::with_capacity(m);
        for chunk in x.chunks(d * 2048) {
            out.extend(self.divergence_chunk(chunk));
        }
        out
    }

    fn divergence_chunk(&self, x: &[f64]) -> Vec<f64> {
        let d = self.input_dim();
        let m = x.len() / d;
        let first = self.layer(0);
        let w0 = &self.params[first.w_off..first.b_off];
        if self.n_layers() == 1 {
            let trace: f64 = (0..d).map(|k| w0[k * d + k]).sum();
            return vec![trace; m];
        }
        // tangent rows are indexed (point, coordinate)
        let pre0 = self.affine(first, x, m);
        let mut tangent = vec![0.0; m * d * first.n_out];
        for p in 0..m {
            let z = &pre0[p * first.n_out..(p + 1) * first.n_out];
            for k in 0..d {
                let row = &mut tangent[(p * d + k) * first.n_out..(p * d + k + 1) * first.n_out];
                for (j, r) in row.iter_mut().enumerate() {
                    *r = w0[j * d + k] * self.activation.derivative(z[j]);
                }
            }
        }
        let mut act: Vec<f64> = pre0.iter().map(|v| self.activation.apply(*v)).collect();
        for l in 1..self.n_layers() {
            let shape = self.layer(l);
            let w = &self.params[shape.w_off..shape.b_off];
            let mut next = vec![0.0; m * d * shape.n_out];
            gemm(
                m * d,
                shape.n_in,
                shape.n_out,
                &tangent,
                (shape.n_in, 1),
                w,
                (1, shape.n_in),
                0.0,
                &mut next,
                (shape.n_out, 1),
            );
            if l + 1 < self.n_layers() {
                let pre = self.affine(shape, &act, m);
                for p in 0..m {
                    let z = &pre[p * shape.n_out..(p + 1) * shape.n_out];
                    for k in 0..d {
                        let row =
                            &mut next[(p * d + k) * shape.n_out..(p * d + k + 1) * shape.n_out];
                        for (r, zj) in row.iter_mut().zip(z) {
                            *r *= self.activation.derivative(*zj);
                        }
                    }
                }
                act = pre.iter().map(|v| self.activation.apply(*v)).collect();
            }
            tangent = next;
        }
        (0..m)
            .map(|p| (0..d).map(|k| tangent[(p * d + k) * d + k]).sum())
            .collect()
    }
}

impl ScoreModel for Mlp {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn eval_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        check_points(points, self.input_dim())?;
        Ok(self.forward(points))
    }

    fn divergence_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        check_points(points, self.input_dim())?;
        Ok(self.divergence(points))
    }
}

/// Forward pass at a single point.
pub fn mlp_eval(m: &Mlp, x: &[f64]) -> Vec<f64> {
    m.forward(x)
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// `C ← A·B + beta·C` with explicit (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(a.len() > last(m, k, rsa, csa));
        assert!(b.len() > last(k, n, rsb, csb));
    }
    assert!(c.len() > last(m, n, rsc, csc));
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}
