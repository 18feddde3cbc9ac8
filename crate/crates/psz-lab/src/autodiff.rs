//! Minimal reverse-mode automatic differentiation over dense f64 tensors,
//! plus the Adam optimizer.
//!
//! Graphs are define-by-run: a fresh [`Graph`] is built per forward pass and
//! consumed by one [`Graph::backward`] call. Complex quantities are carried
//! as paired real tensors by the callers.

use crate::error::{PszError, Result};
use rustfft::{num_complex::Complex64, FftPlanner};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    MatMul { a: TensorId, b: TensorId, m: usize, k: usize, n: usize },
    Relu(TensorId),
    Sin(TensorId),
    Cos(TensorId),
    Square(TensorId),
    Sqrt(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    MaxConst(TensorId, f64),
    Gather(TensorId, Vec<usize>),
    Concat(Vec<TensorId>),
    Scale(TensorId, f64),
    /// Elementwise product of a tensor with a scalar (1-element) tensor.
    BroadcastMul(TensorId, TensorId),
    /// Real part of the inverse DFT of (re, im); length must be a power of 2.
    LinearIdft(TensorId, TensorId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    tracked: bool,
}

/// Define-by-run computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, tracked: bool) -> TensorId {
        debug_assert_eq!(value.len(), numel(&shape));
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { op, shape, value, grad: Vec::new(), tracked });
        id
    }

    /// Tracked or untracked input tensor.
    pub fn leaf(&mut self, value: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        if value.len() != numel(shape) {
            return Err(PszError::Structure(format!(
                "leaf value length {} does not match shape {:?}",
                value.len(),
                shape
            )));
        }
        Ok(self.push(Op::Leaf, shape.to_vec(), value, requires_grad))
    }

    /// Untracked constant.
    pub fn constant(&mut self, value: Vec<f64>, shape: &[usize]) -> Result<TensorId> {
        self.leaf(value, shape, false)
    }

    pub fn scalar_constant(&mut self, v: f64) -> TensorId {
        self.push(Op::Leaf, vec![1], vec![v], false)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Gradient of the last backward pass; empty slice if untracked.
    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    fn tracked(&self, id: TensorId) -> bool {
        self.nodes[id.0].tracked
    }

    fn same_shape(&self, a: TensorId, b: TensorId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(PszError::Structure(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_elementwise(
        &mut self,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        self.same_shape(a, b)?;
        let value: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(op, shape, value, tracked))
    }

    fn map_elementwise(
        &mut self,
        x: TensorId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> TensorId {
        let value: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x);
        self.push(op, shape, value, tracked)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// [m x k] * [k x n] -> [m x n]. A vector counts as [k x 1].
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k) = match sa.as_slice() {
            [m, k] => (*m, *k),
            [k] => (1, *k),
            _ => return Err(PszError::Structure(format!("matmul lhs shape {sa:?}"))),
        };
        let (kb, n) = match sb.as_slice() {
            [k, n] => (*k, *n),
            [k] => (*k, 1),
            _ => return Err(PszError::Structure(format!("matmul rhs shape {sb:?}"))),
        };
        if k != kb {
            return Err(PszError::Structure(format!(
                "matmul inner dims {k} vs {kb}"
            )));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        if n == 1 {
            // matvec fast path
            for i in 0..m {
                let row = &av[i * k..(i + 1) * k];
                out[i] = row.iter().zip(bv).map(|(x, y)| x * y).sum();
            }
        } else {
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        out[i * n + j] += aip * bv[p * n + j];
                    }
                }
            }
        }
        let shape = if sb.len() == 1 { vec![m] } else { vec![m, n] };
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::MatMul { a, b, m, k, n }, shape, out, tracked))
    }

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&mut self, x: TensorId) -> TensorId {
        self.map_elementwise(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sin(&mut self, x: TensorId) -> TensorId {
        self.map_elementwise(x, f64::sin, Op::Sin(x))
    }

    pub fn cos(&mut self, x: TensorId) -> TensorId {
        self.map_elementwise(x, f64::cos, Op::Cos(x))
    }

    pub fn square(&mut self, x: TensorId) -> TensorId {
        self.map_elementwise(x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: TensorId) -> TensorId {
        self.map_elementwise(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.value(x).iter().sum();
        let tracked = self.tracked(x);
        self.push(Op::Sum(x), vec![1], vec![s], tracked)
    }

    pub fn mean(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let tracked = self.tracked(x);
        self.push(Op::Mean(x), vec![1], vec![m], tracked)
    }

    /// Elementwise max(x, c).
    pub fn max_const(&mut self, x: TensorId, c: f64) -> TensorId {
        self.map_elementwise(x, |v| v.max(c), Op::MaxConst(x, c))
    }

    /// Picks elements of a flat tensor by index, in order (with repeats).
    pub fn gather(&mut self, x: TensorId, indices: &[usize]) -> Result<TensorId> {
        let v = self.value(x);
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= v.len() {
                return Err(PszError::Structure(format!(
                    "gather index {i} out of bounds for length {}",
                    v.len()
                )));
            }
            out.push(v[i]);
        }
        let tracked = self.tracked(x);
        Ok(self.push(Op::Gather(x, indices.to_vec()), vec![indices.len()], out, tracked))
    }

    /// Flat concatenation.
    pub fn concat(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(PszError::Structure("concat of zero tensors".into()));
        }
        let mut out = Vec::new();
        let mut tracked = false;
        for &p in parts {
            out.extend_from_slice(self.value(p));
            tracked |= self.tracked(p);
        }
        let len = out.len();
        Ok(self.push(Op::Concat(parts.to_vec()), vec![len], out, tracked))
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        self.map_elementwise(x, |v| v * c, Op::Scale(x, c))
    }

    /// x (any shape) times a scalar tensor s (1 element).
    pub fn broadcast_mul(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        if numel(self.shape(s)) != 1 {
            return Err(PszError::Structure("broadcast_mul rhs must be scalar".into()));
        }
        let sv = self.value(s)[0];
        let value: Vec<f64> = self.value(x).iter().map(|&v| v * sv).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x) || self.tracked(s);
        Ok(self.push(Op::BroadcastMul(x, s), shape, value, tracked))
    }

    /// Real part of the inverse DFT of the complex spectrum (re, im).
    ///
    /// Callers guarantee Hermitian symmetry so the imaginary part of the
    /// result vanishes; the pullback treats only the real output.
    pub fn linear_idft(&mut self, re: TensorId, im: TensorId) -> Result<TensorId> {
        self.same_shape(re, im)?;
        let n = numel(self.shape(re));
        if !n.is_power_of_two() {
            return Err(PszError::Structure(format!(
                "linear_idft length {n} is not a power of two"
            )));
        }
        let mut buf: Vec<Complex64> = self
            .value(re)
            .iter()
            .zip(self.value(im))
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        let scale = 1.0 / n as f64;
        let out: Vec<f64> = buf.iter().map(|z| z.re * scale).collect();
        let tracked = self.tracked(re) || self.tracked(im);
        Ok(self.push(Op::LinearIdft(re, im), vec![n], out, tracked))
    }

    fn accumulate(&mut self, id: TensorId, contribution: &[f64]) {
        let node = &mut self.nodes[id.0];
        if !node.tracked {
            return;
        }
        if node.grad.is_empty() {
            node.grad = vec![0.0; node.value.len()];
        }
        for (g, &c) in node.grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// Populates gradients of every tracked node w.r.t. the scalar `loss`.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.backward_done {
            return Err(PszError::Structure(
                "backward called twice on the same graph".into(),
            ));
        }
        if numel(self.shape(loss)) != 1 {
            return Err(PszError::Structure(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.accumulate(loss, &[1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked || node.grad.is_empty() {
                continue;
            }
            let grad = node.grad.clone();
            match node.op.clone() {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, &grad);
                    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                    self.accumulate(b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> =
                        grad.iter().zip(self.value(b)).map(|(g, &v)| g * v).collect();
                    let db: Vec<f64> =
                        grad.iter().zip(self.value(a)).map(|(g, &v)| g * v).collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::MatMul { a, b, m, k, n } => {
                    let av = self.value(a).to_vec();
                    let bv = self.value(b).to_vec();
                    // dA = G B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += grad[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    // dB = A^T G
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + p] * grad[i * n + j];
                            }
                            db[p * n + j] = acc;
                        }
                    }
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Relu(x) => {
                    let dx: Vec<f64> = grad
                        .iter()
                        .zip(self.value(x))
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Sin(x) => {
                    let dx: Vec<f64> =
                        grad.iter().zip(self.value(x)).map(|(g, &v)| g * v.cos()).collect();
                    self.accumulate(x, &dx);
                }
                Op::Cos(x) => {
                    let dx: Vec<f64> =
                        grad.iter().zip(self.value(x)).map(|(g, &v)| -g * v.sin()).collect();
                    self.accumulate(x, &dx);
                }
                Op::Square(x) => {
                    let dx: Vec<f64> = grad
                        .iter()
                        .zip(self.value(x))
                        .map(|(g, &v)| 2.0 * g * v)
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Sqrt(x) => {
                    let out = self.nodes[idx].value.clone();
                    let dx: Vec<f64> = grad
                        .iter()
                        .zip(&out)
                        .map(|(g, &y)| g / (2.0 * y))
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.len();
                    self.accumulate(x, &vec![grad[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.nodes[x.0].value.len();
                    self.accumulate(x, &vec![grad[0] / n as f64; n]);
                }
                Op::MaxConst(x, c) => {
                    let dx: Vec<f64> = grad
                        .iter()
                        .zip(self.value(x))
                        .map(|(g, &v)| if v > c { *g } else { 0.0 })
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Gather(x, indices) => {
                    let mut dx = vec![0.0; self.nodes[x.0].value.len()];
                    for (g, &i) in grad.iter().zip(&indices) {
                        dx[i] += g;
                    }
                    self.accumulate(x, &dx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        let slice = grad[offset..offset + len].to_vec();
                        self.accumulate(p, &slice);
                        offset += len;
                    }
                }
                Op::Scale(x, c) => {
                    let dx: Vec<f64> = grad.iter().map(|g| g * c).collect();
                    self.accumulate(x, &dx);
                }
                Op::BroadcastMul(x, s) => {
                    let sv = self.value(s)[0];
                    let dx: Vec<f64> = grad.iter().map(|g| g * sv).collect();
                    let ds: f64 = grad.iter().zip(self.value(x)).map(|(g, &v)| g * v).sum();
                    self.accumulate(x, &dx);
                    self.accumulate(s, &[ds]);
                }
                Op::LinearIdft(re, im) => {
                    // adjoint of x[n] = (1/N) sum_k (re cos - im sin)
                    let n = grad.len();
                    let mut buf: Vec<Complex64> =
                        grad.iter().map(|&g| Complex64::new(g, 0.0)).collect();
                    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
                    let scale = 1.0 / n as f64;
                    let dre: Vec<f64> = buf.iter().map(|z| z.re * scale).collect();
                    let dim: Vec<f64> = buf.iter().map(|z| z.im * scale).collect();
                    self.accumulate(re, &dre);
                    self.accumulate(im, &dim);
                }
            }
        }
        Ok(())
    }
}

/// Adam optimizer state over a flat list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_sizes: &[usize], lr: f64) -> Self {
        Self {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [Vec<f64>],
    grads: &[Vec<f64>],
    state: &mut AdamState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(PszError::Structure("adam_step parameter count mismatch".into()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(PszError::Structure("adam_step shape mismatch".into()));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(PszError::Numerical("non-finite gradient in adam_step".into()));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
