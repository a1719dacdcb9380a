//! Gated fusion of expert embeddings.
//!
//! Each expert's pooled vector `e_i` (dimension `d_i`) is projected to a
//! common dimension `K` with a bias-free matrix `W_i`. The gate reads the
//! concatenation of all projected vectors, multiplies by `gate_w`
//! (shape `n·K × n`) and applies either an elementwise sigmoid or a softmax
//! with temperature. The fused vector is `Σ α_i · W_i e_i`, and a two-way
//! linear head with bias produces the logits.
//!
//! Gradients are derived by hand. The projection gradient has two paths:
//! through the weighted sum (scaled by `α_i`) and through the gate logits.
//!
//! Flat parameter order: projections `W_1 … W_n` (row-major), `gate_w`,
//! `head_w`, `head_b`.

use crate::error::{Error, Result};
use crate::numeric::{cross_entropy_logits, dot, linear_apply, sigmoid_vec, softmax_tau, xavier_init, Mat, Rng};

/// Default common dimension.
pub const DEFAULT_K: usize = 512;
/// Default temperature of the cooperative (smoothed) softmax gate.
pub const COOP_TAU: f64 = 100.0;
/// Default temperature of the winner-take-all softmax gate.
pub const WTA_TAU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateActivation {
    Sigmoid,
    Softmax { tau: f64 },
}

impl GateActivation {
    pub fn softmax(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(GateActivation::Softmax { tau })
        } else {
            Err(Error::InvalidTemperature(tau))
        }
    }

    pub fn apply(&self, logits: &[f64]) -> Result<Vec<f64>> {
        match *self {
            GateActivation::Sigmoid => Ok(sigmoid_vec(logits)),
            GateActivation::Softmax { tau } => softmax_tau(logits, tau),
        }
    }

    /// Vector-Jacobian product: maps `∂L/∂α` to `∂L/∂z`.
    pub fn vjp(&self, alpha: &[f64], d_alpha: &[f64]) -> Vec<f64> {
        match *self {
            GateActivation::Sigmoid => alpha
                .iter()
                .zip(d_alpha)
                .map(|(a, d)| a * (1.0 - a) * d)
                .collect(),
            // (diag(α) − ααᵀ)/τ
            GateActivation::Softmax { tau } => {
                let weighted = dot(alpha, d_alpha);
                alpha
                    .iter()
                    .zip(d_alpha)
                    .map(|(a, d)| a * (d - weighted) / tau)
                    .collect()
            }
        }
    }
}

fn check_pooled(dims: &[usize], pooled: &[Vec<f64>]) -> Result<()> {
    if pooled.len() != dims.len() {
        return Err(Error::DimensionMismatch {
            context: "expert count",
            expected: format!("{} experts", dims.len()),
            got: format!("{} pooled vectors", pooled.len()),
        });
    }
    for (i, (v, &d)) in pooled.iter().zip(dims).enumerate() {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                context: "expert input",
                expected: format!("expert {i} of dimension {d}"),
                got: format!("vector of length {}", v.len()),
            });
        }
    }
    Ok(())
}

fn check_init_args(dims: &[usize], k: usize) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument("at least one expert is required".into()));
    }
    if k == 0 || dims.contains(&0) {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    Ok(())
}

fn project_all(projections: &[Mat], pooled: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    projections
        .iter()
        .zip(pooled)
        .map(|(w, e)| linear_apply(w, e))
        .collect()
}

fn head_apply(head_w: &Mat, head_b: [f64; 2], x: &[f64]) -> [f64; 2] {
    [
        dot(head_w.row(0), x) + head_b[0],
        dot(head_w.row(1), x) + head_b[1],
    ]
}

/// Describes a flat parameter index as `name[row,col]`.
fn describe_index(blocks: &[(String, usize, usize)], mut idx: usize) -> String {
    for (name, rows, cols) in blocks {
        let size = rows * cols;
        if idx < size {
            return if *rows == 1 {
                format!("{name}[{idx}]")
            } else {
                format!("{name}[{},{}]", idx / cols, idx % cols)
            };
        }
        idx -= size;
    }
    format!("out-of-range[{idx}]")
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pooled: Vec<Vec<f64>>,
    pub projected: Vec<Vec<f64>>,
    pub gate_logits: Vec<f64>,
    pub alpha: Vec<f64>,
    pub fused: Vec<f64>,
    pub logits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifaModel {
    dims: Vec<usize>,
    k: usize,
    pub projections: Vec<Mat>,
    pub gate_w: Mat,
    pub head_w: Mat,
    pub head_b: [f64; 2],
    pub activation: GateActivation,
}

/// Gradients of the cross-entropy loss, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LifaGradients {
    pub loss: f64,
    pub projections: Vec<Mat>,
    pub gate_w: Mat,
    pub head_w: Mat,
    pub head_b: [f64; 2],
}

impl LifaModel {
    /// Xavier-initialized model with a zero head bias.
    pub fn init(rng: &mut Rng, dims: &[usize], k: usize, activation: GateActivation) -> Result<Self> {
        check_init_args(dims, k)?;
        let n = dims.len();
        let projections = dims.iter().map(|&d| xavier_init(rng, k, d)).collect();
        let gate_w = xavier_init(rng, n * k, n);
        let head_w = xavier_init(rng, 2, k);
        Ok(LifaModel {
            dims: dims.to_vec(),
            k,
            projections,
            gate_w,
            head_w,
            head_b: [0.0; 2],
            activation,
        })
    }

    /// Assembles a model from explicit parameters, validating every shape.
    pub fn from_parts(
        projections: Vec<Mat>,
        gate_w: Mat,
        head_w: Mat,
        head_b: [f64; 2],
        activation: GateActivation,
    ) -> Result<Self> {
        let k = projections.first().map_or(0, Mat::rows);
        let dims: Vec<usize> = projections.iter().map(Mat::cols).collect();
        check_init_args(&dims, k)?;
        let n = dims.len();
        let mismatch = |what: &'static str, expected: (usize, usize), got: (usize, usize)| Error::DimensionMismatch {
            context: what,
            expected: format!("{}x{}", expected.0, expected.1),
            got: format!("{}x{}", got.0, got.1),
        };
        if let Some(p) = projections.iter().find(|p| p.rows() != k) {
            return Err(mismatch("projection", (k, p.cols()), p.shape()));
        }
        if gate_w.shape() != (n * k, n) {
            return Err(mismatch("gate_w", (n * k, n), gate_w.shape()));
        }
        if head_w.shape() != (2, k) {
            return Err(mismatch("head_w", (2, k), head_w.shape()));
        }
        if let GateActivation::Softmax { tau } = activation {
            GateActivation::softmax(tau)?;
        }
        Ok(LifaModel {
            dims,
            k,
            projections,
            gate_w,
            head_w,
            head_b,
            activation,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_experts(&self) -> usize {
        self.dims.len()
    }

    fn offsets(&self) -> (Vec<usize>, usize, usize, usize) {
        let mut proj = Vec::with_capacity(self.dims.len());
        let mut off = 0;
        for &d in &self.dims {
            proj.push(off);
            off += self.k * d;
        }
        let gate = off;
        let head_w = gate + self.n_experts() * self.k * self.n_experts();
        let head_b = head_w + 2 * self.k;
        (proj, gate, head_w, head_b)
    }

    pub fn num_params(&self) -> usize {
        self.offsets().3 + 2
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in &self.projections {
            out.extend_from_slice(p.as_slice());
        }
        out.extend_from_slice(self.gate_w.as_slice());
        out.extend_from_slice(self.head_w.as_slice());
        out.extend_from_slice(&self.head_b);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                context: "LifaModel::set_params_flat",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for p in &mut self.projections {
            take(p.as_mut_slice());
        }
        take(self.gate_w.as_mut_slice());
        take(self.head_w.as_mut_slice());
        take(&mut self.head_b);
        Ok(())
    }

    pub fn param_name(&self, idx: usize) -> String {
        let mut blocks: Vec<(String, usize, usize)> = self
            .dims
            .iter()
            .enumerate()
            .map(|(i, &d)| (format!("projection.{i}"), self.k, d))
            .collect();
        blocks.push(("gate_w".into(), self.gate_w.rows(), self.gate_w.cols()));
        blocks.push(("head_w".into(), 2, self.k));
        blocks.push(("head_b".into(), 1, 2));
        describe_index(&blocks, idx)
    }

    fn unflatten_grads(&self, loss: f64, flat: &[f64]) -> LifaGradients {
        let mut grads = LifaGradients {
            loss,
            projections: self.dims.iter().map(|&d| Mat::zeros(self.k, d)).collect(),
            gate_w: Mat::zeros(self.gate_w.rows(), self.gate_w.cols()),
            head_w: Mat::zeros(2, self.k),
            head_b: [0.0; 2],
        };
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for p in &mut grads.projections {
            take(p.as_mut_slice());
        }
        take(grads.gate_w.as_mut_slice());
        take(grads.head_w.as_mut_slice());
        take(&mut grads.head_b);
        grads
    }

    pub fn forward(&self, pooled: &[Vec<f64>]) -> Result<ForwardTrace> {
        check_pooled(&self.dims, pooled)?;
        let projected = project_all(&self.projections, pooled)?;
        let concat: Vec<f64> = projected.concat();
        let gate_logits = self.gate_w.transpose_apply(&concat)?;
        let alpha = self.activation.apply(&gate_logits)?;
        let mut fused = vec![0.0; self.k];
        for (a, e) in alpha.iter().zip(&projected) {
            fused.iter_mut().zip(e).for_each(|(f, x)| *f += a * x);
        }
        let logits = head_apply(&self.head_w, self.head_b, &fused);
        Ok(ForwardTrace {
            pooled: pooled.to_vec(),
            projected,
            gate_logits,
            alpha,
            fused,
            logits,
        })
    }

    pub fn loss(&self, pooled: &[Vec<f64>], label: usize) -> Result<f64> {
        Ok(cross_entropy_logits(self.forward(pooled)?.logits, label).0)
    }

    pub fn backward(&self, pooled: &[Vec<f64>], label: usize) -> Result<LifaGradients> {
        let mut flat = vec![0.0; self.num_params()];
        let loss = self.backward_into(pooled, label, 1.0, &mut flat)?;
        Ok(self.unflatten_grads(loss, &flat))
    }

    /// Adds `scale · ∇loss` into the flat gradient buffer and returns the loss.
    pub fn backward_into(&self, pooled: &[Vec<f64>], label: usize, scale: f64, grad: &mut [f64]) -> Result<f64> {
        let activation = self.activation;
        self.backward_with_gate_vjp(pooled, label, scale, grad, &|a, d| activation.vjp(a, d))
    }

    /// Backward pass with a caller-supplied gate vector-Jacobian product.
    /// Exists so gradient-check tests can inject a faulty Jacobian.
    #[doc(hidden)]
    pub fn backward_with_gate_vjp(
        &self,
        pooled: &[Vec<f64>],
        label: usize,
        scale: f64,
        grad: &mut [f64],
        gate_vjp: &dyn Fn(&[f64], &[f64]) -> Vec<f64>,
    ) -> Result<f64> {
        if grad.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                context: "gradient buffer",
                expected: self.num_params(),
                got: grad.len(),
            });
        }
        let trace = self.forward(pooled)?;
        let (loss, d_logits) = cross_entropy_logits(trace.logits, label);
        let (proj_off, gate_off, head_w_off, head_b_off) = self.offsets();
        let k = self.k;
        let n = self.n_experts();

        for c in 0..2 {
            let g = scale * d_logits[c];
            let row = &mut grad[head_w_off + c * k..head_w_off + (c + 1) * k];
            row.iter_mut().zip(&trace.fused).for_each(|(r, f)| *r += g * f);
            grad[head_b_off + c] += g;
        }

        let d_fused: Vec<f64> = (0..k)
            .map(|j| self.head_w.get(0, j) * d_logits[0] + self.head_w.get(1, j) * d_logits[1])
            .collect();
        let d_alpha: Vec<f64> = trace.projected.iter().map(|e| dot(&d_fused, e)).collect();
        let d_z = gate_vjp(&trace.alpha, &d_alpha);

        for i in 0..n {
            for j in 0..k {
                let r = i * k + j;
                let x = trace.projected[i][j];
                let gate_row = self.gate_w.row(r);
                let dst = &mut grad[gate_off + r * n..gate_off + (r + 1) * n];
                dst.iter_mut().zip(&d_z).for_each(|(g, dz)| *g += scale * x * dz);
                // Both paths into e'_i: the weighted sum and the gate input.
                let d_proj = trace.alpha[i] * d_fused[j] + dot(gate_row, &d_z);
                let d = self.dims[i];
                let dst = &mut grad[proj_off[i] + j * d..proj_off[i] + (j + 1) * d];
                dst.iter_mut()
                    .zip(&pooled[i])
                    .for_each(|(g, e)| *g += scale * d_proj * e);
            }
        }
        Ok(loss)
    }
}

impl LifaGradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.projections {
            out.extend_from_slice(p.as_slice());
        }
        out.extend_from_slice(self.gate_w.as_slice());
        out.extend_from_slice(self.head_w.as_slice());
        out.extend_from_slice(&self.head_b);
        out
    }
}

/// Gate-free baseline: a single linear head over the concatenated
/// projected embeddings. With one expert it is a plain linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatModel {
    dims: Vec<usize>,
    k: usize,
    pub projections: Vec<Mat>,
    pub head_w: Mat,
    pub head_b: [f64; 2],
}

impl ConcatModel {
    pub fn init(rng: &mut Rng, dims: &[usize], k: usize) -> Result<Self> {
        check_init_args(dims, k)?;
        let projections = dims.iter().map(|&d| xavier_init(rng, k, d)).collect();
        let head_w = xavier_init(rng, 2, dims.len() * k);
        Ok(ConcatModel {
            dims: dims.to_vec(),
            k,
            projections,
            head_w,
            head_b: [0.0; 2],
        })
    }

    pub fn from_parts(projections: Vec<Mat>, head_w: Mat, head_b: [f64; 2]) -> Result<Self> {
        let k = projections.first().map_or(0, Mat::rows);
        let dims: Vec<usize> = projections.iter().map(Mat::cols).collect();
        check_init_args(&dims, k)?;
        if projections.iter().any(|p| p.rows() != k) || head_w.shape() != (2, dims.len() * k) {
            return Err(Error::DimensionMismatch {
                context: "ConcatModel::from_parts",
                expected: format!("projections with {k} rows and a 2x{} head", dims.len() * k),
                got: format!("head {}x{}", head_w.rows(), head_w.cols()),
            });
        }
        Ok(ConcatModel {
            dims,
            k,
            projections,
            head_w,
            head_b,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_experts(&self) -> usize {
        self.dims.len()
    }

    pub fn num_params(&self) -> usize {
        self.k * self.dims.iter().sum::<usize>() + 2 * self.n_experts() * self.k + 2
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in &self.projections {
            out.extend_from_slice(p.as_slice());
        }
        out.extend_from_slice(self.head_w.as_slice());
        out.extend_from_slice(&self.head_b);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                context: "ConcatModel::set_params_flat",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for p in &mut self.projections {
            take(p.as_mut_slice());
        }
        take(self.head_w.as_mut_slice());
        take(&mut self.head_b);
        Ok(())
    }

    pub fn param_name(&self, idx: usize) -> String {
        let mut blocks: Vec<(String, usize, usize)> = self
            .dims
            .iter()
            .enumerate()
            .map(|(i, &d)| (format!("projection.{i}"), self.k, d))
            .collect();
        blocks.push(("head_w".into(), 2, self.head_w.cols()));
        blocks.push(("head_b".into(), 1, 2));
        describe_index(&blocks, idx)
    }

    /// Logits of the head applied to `concat(W_1 e_1, …, W_n e_n)`.
    pub fn concat_forward(&self, pooled: &[Vec<f64>]) -> Result<[f64; 2]> {
        check_pooled(&self.dims, pooled)?;
        let concat = project_all(&self.projections, pooled)?.concat();
        Ok(head_apply(&self.head_w, self.head_b, &concat))
    }

    pub fn backward_into(&self, pooled: &[Vec<f64>], label: usize, scale: f64, grad: &mut [f64]) -> Result<f64> {
        if grad.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                context: "gradient buffer",
                expected: self.num_params(),
                got: grad.len(),
            });
        }
        check_pooled(&self.dims, pooled)?;
        let concat = project_all(&self.projections, pooled)?.concat();
        let logits = head_apply(&self.head_w, self.head_b, &concat);
        let (loss, d_logits) = cross_entropy_logits(logits, label);
        let width = concat.len();
        let head_w_off = self.k * self.dims.iter().sum::<usize>();
        let head_b_off = head_w_off + 2 * width;
        for c in 0..2 {
            let g = scale * d_logits[c];
            let row = &mut grad[head_w_off + c * width..head_w_off + (c + 1) * width];
            row.iter_mut().zip(&concat).for_each(|(r, x)| *r += g * x);
            grad[head_b_off + c] += g;
        }
        let mut off = 0;
        for (i, &d) in self.dims.iter().enumerate() {
            for j in 0..self.k {
                let col = i * self.k + j;
                let d_proj = self.head_w.get(0, col) * d_logits[0] + self.head_w.get(1, col) * d_logits[1];
                let dst = &mut grad[off + j * d..off + (j + 1) * d];
                dst.iter_mut()
                    .zip(&pooled[i])
                    .for_each(|(g, e)| *g += scale * d_proj * e);
            }
            off += self.k * d;
        }
        Ok(loss)
    }
}

/// Any trainable classifier over per-expert pooled vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Lifa(LifaModel),
    Concat(ConcatModel),
}

impl Model {
    pub fn dims(&self) -> &[usize] {
        match self {
            Model::Lifa(m) => m.dims(),
            Model::Concat(m) => m.dims(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Model::Lifa(m) => m.k(),
            Model::Concat(m) => m.k(),
        }
    }

    pub fn n_experts(&self) -> usize {
        self.dims().len()
    }

    pub fn logits(&self, pooled: &[Vec<f64>]) -> Result<[f64; 2]> {
        match self {
            Model::Lifa(m) => Ok(m.forward(pooled)?.logits),
            Model::Concat(m) => m.concat_forward(pooled),
        }
    }

    /// Logits and, for gated models, the gate weights.
    pub fn predict(&self, pooled: &[Vec<f64>]) -> Result<([f64; 2], Option<Vec<f64>>)> {
        match self {
            Model::Lifa(m) => {
                let trace = m.forward(pooled)?;
                Ok((trace.logits, Some(trace.alpha)))
            }
            Model::Concat(m) => Ok((m.concat_forward(pooled)?, None)),
        }
    }

    pub fn loss(&self, pooled: &[Vec<f64>], label: usize) -> Result<f64> {
        Ok(cross_entropy_logits(self.logits(pooled)?, label).0)
    }

    pub fn backward_into(&self, pooled: &[Vec<f64>], label: usize, scale: f64, grad: &mut [f64]) -> Result<f64> {
        match self {
            Model::Lifa(m) => m.backward_into(pooled, label, scale, grad),
            Model::Concat(m) => m.backward_into(pooled, label, scale, grad),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Model::Lifa(m) => m.num_params(),
            Model::Concat(m) => m.num_params(),
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        match self {
            Model::Lifa(m) => m.params_flat(),
            Model::Concat(m) => m.params_flat(),
        }
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        match self {
            Model::Lifa(m) => m.set_params_flat(flat),
            Model::Concat(m) => m.set_params_flat(flat),
        }
    }

    pub fn param_name(&self, idx: usize) -> String {
        match self {
            Model::Lifa(m) => m.param_name(idx),
            Model::Concat(m) => m.param_name(idx),
        }
    }

    pub fn activation(&self) -> Option<GateActivation> {
        match self {
            Model::Lifa(m) => Some(m.activation),
            Model::Concat(_) => None,
        }
    }
}
