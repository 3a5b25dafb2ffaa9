use rand::Rng;

use super::{NdError, NodeId, Tensor};

/// Forward-pass mode; controls dropout behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Probability floor inside `cross_entropy` so the log stays finite.
pub const LOG_CLAMP: f64 = 1e-12;

/// One recorded operation with the node ids of its inputs. The output value
/// lives in the owning [`Node`], which is all most backward rules need; ops
/// whose gradient depends on extra forward-time state (dropout masks,
/// cross-entropy labels) save it here.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Transpose { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: f64 },
    Sum { x: NodeId },
    MeanRows { x: NodeId },
    ConcatRows { xs: Vec<NodeId> },
    Row { x: NodeId, index: usize },
    Relu { x: NodeId },
    Softplus { x: NodeId },
    SoftmaxRows { x: NodeId },
    CrossEntropy { probs: NodeId, labels: Vec<usize> },
    Dropout { x: NodeId, mask: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// Append-only record of a forward pass. Node inputs always have smaller ids
/// than the node itself, so the backward pass is a single reverse sweep that
/// visits each node exactly once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by node id, produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a tracked tensor. Leaves the loss never
    /// touched get an explicit zero gradient; untracked tensors get `None`.
    pub fn wrt(&self, t: &Tensor) -> Option<Tensor> {
        let id = t.node()?;
        let shape = self.shapes[id].clone();
        let data = match &self.grads[id] {
            Some(g) => g.clone(),
            None => vec![0.0; shape.iter().product()],
        };
        Some(Tensor::unchecked(shape, data, None))
    }

    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a tensor as a leaf and return a tracked copy. Gradients are
    /// reported for every watched leaf after [`Tape::backward`].
    pub fn watch(&mut self, t: &Tensor) -> Tensor {
        let id = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf);
        Tensor::unchecked(t.shape().to_vec(), t.data().to_vec(), Some(id))
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { shape, value, op });
        id
    }

    /// Node id of `t`, registering it as a constant leaf if untracked.
    fn id_of(&mut self, t: &Tensor) -> NodeId {
        match t.node() {
            Some(id) => id,
            None => self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf),
        }
    }

    fn out(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Tensor {
        let id = self.push(shape.clone(), value.clone(), op);
        Tensor::unchecked(shape, value, Some(id))
    }

    fn require_2d(t: &Tensor, op: &'static str) -> Result<(usize, usize), NdError> {
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            other => Err(NdError::BadShape {
                op,
                expected: "2-D tensor",
                shape: other.to_vec(),
            }),
        }
    }

    // ── Primitive operations ────────────────────────────────────────────

    /// Matrix product `[m,k]·[k,n] → [m,n]`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
        let (m, ka) = Self::require_2d(a, "matmul")?;
        let (kb, n) = Self::require_2d(b, "matmul")?;
        if ka != kb {
            return Err(NdError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let value = matmul_raw(a.data(), b.data(), m, ka, n);
        let (ia, ib) = (self.id_of(a), self.id_of(b));
        Ok(self.out(vec![m, n], value, Op::Matmul { a: ia, b: ib }))
    }

    pub fn transpose(&mut self, x: &Tensor) -> Result<Tensor, NdError> {
        let (r, c) = Self::require_2d(x, "transpose")?;
        let value = transpose_raw(x.data(), r, c);
        let ix = self.id_of(x);
        Ok(self.out(vec![c, r], value, Op::Transpose { x: ix }))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
        self.zip_elementwise(a, b, "add", |x, y| x + y, |ia, ib| Op::Add { a: ia, b: ib })
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
        self.zip_elementwise(a, b, "sub", |x, y| x - y, |ia, ib| Op::Sub { a: ia, b: ib })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
        self.zip_elementwise(a, b, "mul", |x, y| x * y, |ia, ib| Op::Mul { a: ia, b: ib })
    }

    fn zip_elementwise(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<Tensor, NdError> {
        if a.shape() != b.shape() {
            return Err(NdError::ShapeMismatch {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let value = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let (ia, ib) = (self.id_of(a), self.id_of(b));
        Ok(self.out(a.shape().to_vec(), value, make(ia, ib)))
    }

    pub fn scale(&mut self, x: &Tensor, factor: f64) -> Tensor {
        let value = x.data().iter().map(|&v| v * factor).collect();
        let ix = self.id_of(x);
        self.out(x.shape().to_vec(), value, Op::Scale { x: ix, factor })
    }

    /// Sum of all entries, as a `[1,1]` scalar.
    pub fn sum(&mut self, x: &Tensor) -> Tensor {
        let value = vec![x.data().iter().sum()];
        let ix = self.id_of(x);
        self.out(vec![1, 1], value, Op::Sum { x: ix })
    }

    /// Arithmetic mean over rows: `[m,n] → [1,n]`.
    pub fn mean_rows(&mut self, x: &Tensor) -> Result<Tensor, NdError> {
        let (m, n) = Self::require_2d(x, "mean_rows")?;
        let mut value = vec![0.0; n];
        for r in 0..m {
            for (v, xv) in value.iter_mut().zip(&x.data()[r * n..(r + 1) * n]) {
                *v += xv;
            }
        }
        for v in &mut value {
            *v /= m as f64;
        }
        let ix = self.id_of(x);
        Ok(self.out(vec![1, n], value, Op::MeanRows { x: ix }))
    }

    /// Stack equal-width 2-D tensors vertically.
    pub fn concat_rows(&mut self, xs: &[&Tensor]) -> Result<Tensor, NdError> {
        let first = xs.first().ok_or(NdError::BadShape {
            op: "concat_rows",
            expected: "at least one tensor",
            shape: vec![],
        })?;
        let (_, n) = Self::require_2d(first, "concat_rows")?;
        let mut rows = 0;
        let mut value = Vec::new();
        for x in xs {
            let (r, c) = Self::require_2d(x, "concat_rows")?;
            if c != n {
                return Err(NdError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: first.shape().to_vec(),
                    rhs: x.shape().to_vec(),
                });
            }
            rows += r;
            value.extend_from_slice(x.data());
        }
        let ids: Vec<NodeId> = xs.iter().map(|x| self.id_of(x)).collect();
        Ok(self.out(vec![rows, n], value, Op::ConcatRows { xs: ids }))
    }

    /// Select row `index` of a 2-D tensor as a `[1,n]` tensor.
    pub fn row(&mut self, x: &Tensor, index: usize) -> Result<Tensor, NdError> {
        let (m, n) = Self::require_2d(x, "row")?;
        if index >= m {
            return Err(NdError::RowOutOfRange {
                op: "row",
                index,
                rows: m,
            });
        }
        let value = x.data()[index * n..(index + 1) * n].to_vec();
        let ix = self.id_of(x);
        Ok(self.out(vec![1, n], value, Op::Row { x: ix, index }))
    }

    pub fn relu(&mut self, x: &Tensor) -> Tensor {
        let value = x.data().iter().map(|&v| v.max(0.0)).collect();
        let ix = self.id_of(x);
        self.out(x.shape().to_vec(), value, Op::Relu { x: ix })
    }

    /// Numerically stable `ln(1 + e^x)`; `softplus(-gap)` is the logistic
    /// ranking loss `-ln σ(gap)`.
    pub fn softplus(&mut self, x: &Tensor) -> Tensor {
        let value = x.data().iter().map(|&v| softplus_raw(v)).collect();
        let ix = self.id_of(x);
        self.out(x.shape().to_vec(), value, Op::Softplus { x: ix })
    }

    /// Row-wise softmax, stabilized by per-row max subtraction.
    pub fn softmax_rows(&mut self, x: &Tensor) -> Result<Tensor, NdError> {
        let (m, n) = Self::require_2d(x, "softmax_rows")?;
        let mut value = vec![0.0; m * n];
        for r in 0..m {
            let row = &x.data()[r * n..(r + 1) * n];
            softmax_into(row, &mut value[r * n..(r + 1) * n]);
        }
        let ix = self.id_of(x);
        Ok(self.out(vec![m, n], value, Op::SoftmaxRows { x: ix }))
    }

    /// Mean over the batch of `-ln p[label]`, with `p` clamped at
    /// [`LOG_CLAMP`] before the log. `probs` rows must already be
    /// distributions (this op does not apply softmax).
    pub fn cross_entropy(&mut self, probs: &Tensor, labels: &[usize]) -> Result<Tensor, NdError> {
        let (m, classes) = Self::require_2d(probs, "cross_entropy")?;
        if labels.len() != m {
            return Err(NdError::ShapeMismatch {
                op: "cross_entropy",
                lhs: vec![m, classes],
                rhs: vec![labels.len()],
            });
        }
        let mut total = 0.0;
        for (row, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(NdError::LabelOutOfRange {
                    label,
                    classes,
                    row,
                });
            }
            total -= probs.data()[row * classes + label].max(LOG_CLAMP).ln();
        }
        let value = vec![total / m as f64];
        let ip = self.id_of(probs);
        Ok(self.out(
            vec![1, 1],
            value,
            Op::CrossEntropy {
                probs: ip,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Inverted dropout: in train mode each entry is zeroed with probability
    /// `p` and survivors are scaled by `1/(1-p)`; eval mode is the identity.
    pub fn dropout<R: Rng>(
        &mut self,
        x: &Tensor,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor, NdError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NdError::BadParameter {
                op: "dropout",
                name: "p",
                value: p,
                range: "[0, 1)",
            });
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = x
            .data()
            .iter()
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let value = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let ix = self.id_of(x);
        Ok(self.out(x.shape().to_vec(), value, Op::Dropout { x: ix, mask }))
    }

    // ── Backward pass ───────────────────────────────────────────────────

    /// Reverse sweep from a tracked scalar loss. Returns gradients for every
    /// node; query leaves through [`Gradients::wrt`].
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients, NdError> {
        let root = loss.node().ok_or(NdError::NotTracked { op: "backward" })?;
        if !loss.is_scalar() {
            return Err(NdError::BadShape {
                op: "backward",
                expected: "scalar loss",
                shape: loss.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.shape.clone()).collect(),
            grads,
        })
    }

    fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    fn shape2(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].shape[0], self.nodes[id].shape[1])
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, delta: &[f64]) {
        match &mut grads[id] {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => grads[id] = Some(delta.to_vec()),
        }
    }

    fn backprop_node(&self, id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = self.shape2(*a);
                let (_, n) = self.shape2(*b);
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                let bt = transpose_raw(self.value(*b), k, n);
                let da = matmul_raw(g, &bt, m, n, k);
                Self::accumulate(grads, *a, &da);
                let at = transpose_raw(self.value(*a), m, k);
                let db = matmul_raw(&at, g, k, m, n);
                Self::accumulate(grads, *b, &db);
            }
            Op::Transpose { x } => {
                let (r, c) = self.shape2(*x);
                let dx = transpose_raw(g, c, r);
                Self::accumulate(grads, *x, &dx);
            }
            Op::Add { a, b } => {
                Self::accumulate(grads, *a, g);
                Self::accumulate(grads, *b, g);
            }
            Op::Sub { a, b } => {
                Self::accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                Self::accumulate(grads, *b, &neg);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                Self::accumulate(grads, *a, &da);
                let db: Vec<f64> = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                Self::accumulate(grads, *b, &db);
            }
            Op::Scale { x, factor } => {
                let dx: Vec<f64> = g.iter().map(|v| v * factor).collect();
                Self::accumulate(grads, *x, &dx);
            }
            Op::Sum { x } => {
                let dx = vec![g[0]; self.nodes[*x].value.len()];
                Self::accumulate(grads, *x, &dx);
            }
            Op::MeanRows { x } => {
                let (m, n) = self.shape2(*x);
                let inv = 1.0 / m as f64;
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        dx[r * n + c] = g[c] * inv;
                    }
                }
                Self::accumulate(grads, *x, &dx);
            }
            Op::ConcatRows { xs } => {
                let mut offset = 0;
                for x in xs {
                    let len = self.nodes[*x].value.len();
                    Self::accumulate(grads, *x, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::Row { x, index } => {
                let (m, n) = self.shape2(*x);
                let mut dx = vec![0.0; m * n];
                dx[index * n..(index + 1) * n].copy_from_slice(g);
                Self::accumulate(grads, *x, &dx);
            }
            Op::Relu { x } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                Self::accumulate(grads, *x, &dx);
            }
            Op::Softplus { x } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(gv, &xv)| gv * sigmoid_raw(xv))
                    .collect();
                Self::accumulate(grads, *x, &dx);
            }
            Op::SoftmaxRows { x } => {
                let (m, n) = self.shape2(*x);
                let y = self.value(id);
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let base = r * n;
                    let dot: f64 = (0..n).map(|c| g[base + c] * y[base + c]).sum();
                    for c in 0..n {
                        dx[base + c] = y[base + c] * (g[base + c] - dot);
                    }
                }
                Self::accumulate(grads, *x, &dx);
            }
            Op::CrossEntropy { probs, labels } => {
                let (m, classes) = self.shape2(*probs);
                let p = self.value(*probs);
                let scale = g[0] / m as f64;
                let mut dp = vec![0.0; m * classes];
                for (row, &label) in labels.iter().enumerate() {
                    let v = p[row * classes + label];
                    // Below the clamp the loss is locally constant in p.
                    if v >= LOG_CLAMP {
                        dp[row * classes + label] = -scale / v;
                    }
                }
                Self::accumulate(grads, *probs, &dp);
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<f64> = g.iter().zip(mask).map(|(gv, mv)| gv * mv).collect();
                Self::accumulate(grads, *x, &dx);
            }
        }
    }
}

// ── Raw kernels (shared by forward and backward) ────────────────────────

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

pub(crate) fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn sigmoid_raw(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus_raw(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn tensor(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
            assert!(
                (a - e).abs() <= tol,
                "index {i}: actual {a} expected {e} (tol {tol})"
            );
        }
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tensor(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let x = tensor(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let y = tape.matmul(&eye, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn matmul_zero_annihilates() {
        let mut tape = Tape::new();
        let x = tensor(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let z = tensor(&[&[0.0], &[0.0]]);
        let y = tape.matmul(&x, &z).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        assert_eq!(y.shape(), &[2, 1]);
    }

    #[test]
    fn matmul_scalar_expansion() {
        // [[1,2],[3,4]] x [[5],[6]] = [[17],[39]]
        let mut tape = Tape::new();
        let x = tensor(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let v = tensor(&[&[5.0], &[6.0]]);
        let y = tape.matmul(&x, &v).unwrap();
        assert_eq!(y.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tensor(&[&[1.0, 2.0]]);
        let b = tensor(&[&[1.0, 2.0]]);
        let err = tape.matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut tape = Tape::new();
        let x = tensor(&[&[0.0, 0.0, 0.0]]);
        let y = tape.softmax_rows(&x).unwrap();
        assert_close(y.data(), &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn softmax_shift_invariance_and_ratio() {
        let mut tape = Tape::new();
        for c in [-57.0, 0.0, 123.456] {
            let x = tensor(&[&[c, c + 2f64.ln()]]);
            let y = tape.softmax_rows(&x).unwrap();
            assert_close(y.data(), &[1.0 / 3.0, 2.0 / 3.0], 1e-12);
        }
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let mut tape = Tape::new();
        let x = tensor(&[&[1000.0, 0.0]]);
        let y = tape.softmax_rows(&x).unwrap();
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1] >= 0.0 && y.data()[1] < 1e-300);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let row: Vec<f64> = (0..6).map(|_| rng.random_range(-50.0..50.0)).collect();
            let x = Tensor::row_vector(row).unwrap();
            let y = tape.softmax_rows(&x).unwrap();
            let sum: f64 = y.data().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_is_ln_c() {
        let mut tape = Tape::new();
        let probs = tensor(&[&[0.25; 4], &[0.25; 4]]);
        let loss = tape.cross_entropy(&probs, &[0, 3]).unwrap();
        assert!((loss.item() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_one_hot_is_zero() {
        let mut tape = Tape::new();
        let probs = tensor(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let loss = tape.cross_entropy(&probs, &[0, 1]).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn cross_entropy_half_half() {
        let mut tape = Tape::new();
        let probs = tensor(&[&[0.5, 0.5]]);
        let loss = tape.cross_entropy(&probs, &[0]).unwrap();
        assert!((loss.item() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::new();
        let probs = tensor(&[&[0.5, 0.5]]);
        let err = tape.cross_entropy(&probs, &[2]).unwrap_err();
        assert!(matches!(err, NdError::LabelOutOfRange { label: 2, .. }));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let theta = tape.watch(&tensor(&[&[1.5, -2.0, 0.25]]));
        let loss = tape.sum(&theta);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&theta).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut tape = Tape::new();
        let theta = tape.watch(&tensor(&[&[1.0, 2.0]]));
        let sq = tape.mul(&theta, &theta).unwrap();
        let loss = tape.sum(&sq);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&theta).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let theta = tape.watch(&tensor(&[&[1.0, 2.0]]));
        let err = tape.backward(&theta).unwrap_err();
        assert!(matches!(err, NdError::BadShape { op: "backward", .. }));
    }

    #[test]
    fn backward_rejects_untracked() {
        let tape = Tape::new();
        let t = Tensor::scalar(1.0).unwrap();
        assert!(matches!(
            tape.backward(&t).unwrap_err(),
            NdError::NotTracked { .. }
        ));
    }

    #[test]
    fn gradient_accumulates_across_consumers() {
        // loss = sum(x*2) + sum(x*3) -> d/dx = 5
        let mut tape = Tape::new();
        let x = tape.watch(&tensor(&[&[1.0]]));
        let a = tape.scale(&x, 2.0);
        let b = tape.scale(&x, 3.0);
        let s = tape.add(&a, &b).unwrap();
        let loss = tape.sum(&s);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let used = tape.watch(&tensor(&[&[2.0]]));
        let unused = tape.watch(&tensor(&[&[3.0, 4.0]]));
        let loss = tape.sum(&used);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut tape = Tape::new();
        let mut rng = StdRng::seed_from_u64(1);
        let x = tensor(&[&[1.0, 2.0, 3.0]]);
        let y = tape.dropout(&x, 0.9, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dropout_p_zero_is_identity() {
        let mut tape = Tape::new();
        let mut rng = StdRng::seed_from_u64(1);
        let x = tensor(&[&[1.0, 2.0, 3.0]]);
        let y = tape.dropout(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dropout_rejects_bad_probability() {
        let mut tape = Tape::new();
        let mut rng = StdRng::seed_from_u64(1);
        let x = tensor(&[&[1.0]]);
        for p in [1.0, 1.5, -0.1] {
            let err = tape.dropout(&x, p, Mode::Train, &mut rng).unwrap_err();
            assert!(matches!(err, NdError::BadParameter { name: "p", .. }));
        }
    }

    #[test]
    fn dropout_preserves_mean_monte_carlo() {
        let mut tape = Tape::new();
        let mut rng = StdRng::seed_from_u64(42);
        let n = 100_000;
        let x = Tensor::row_vector(vec![1.0; n]).unwrap();
        let y = tape.dropout(&x, 0.2, Mode::Train, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn relu_forward_and_backward() {
        let mut tape = Tape::new();
        let x = tape.watch(&tensor(&[&[-1.0, 0.0, 2.0]]));
        let y = tape.relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let loss = tape.sum(&y);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn mean_rows_hand_case() {
        let mut tape = Tape::new();
        let x = tensor(&[&[1.0, 3.0], &[3.0, 5.0]]);
        let y = tape.mean_rows(&x).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0]);
    }

    #[test]
    fn concat_and_row_roundtrip() {
        let mut tape = Tape::new();
        let a = tensor(&[&[1.0, 2.0]]);
        let b = tensor(&[&[3.0, 4.0], &[5.0, 6.0]]);
        let c = tape.concat_rows(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[3, 2]);
        let r = tape.row(&c, 2).unwrap();
        assert_eq!(r.data(), &[5.0, 6.0]);
        assert!(tape.row(&c, 3).is_err());
    }

    #[test]
    fn node_ids_are_topological() {
        let mut tape = Tape::new();
        let x = tape.watch(&tensor(&[&[1.0, 2.0]]));
        let y = tape.scale(&x, 2.0);
        let z = tape.sum(&y);
        let ids = [x.node().unwrap(), y.node().unwrap(), z.node().unwrap()];
        assert!(ids[0] < ids[1] && ids[1] < ids[2]);
    }
}
