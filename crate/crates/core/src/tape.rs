//! Reverse-mode gradients for the fixed set of operations the scorer needs.
//!
//! A [`Tape`] records every executed operation together with its output
//! value. [`Tape::backward`] seeds a scalar terminal node and walks the
//! record in exact reverse execution order, accumulating adjoints
//! additively into per-node gradient buffers. Backward borrows the tape
//! immutably, so calling it twice is allowed and is a deterministic repeat
//! (fresh buffers each call).
//!
//! A tape and the values flowing through it are owned by a single training
//! step; parallel use requires independent tapes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Dropout behavior switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op {
    /// Input or parameter; `tracked` marks parameters whose gradients the
    /// caller will read back.
    Leaf {
        tracked: bool,
    },
    /// x*W + bias, bias broadcast across rows.
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    /// Per-column softmax over the row (temporal) axis.
    ColumnSoftmax {
        x: Var,
    },
    Hadamard {
        a: Var,
        b: Var,
    },
    /// `mask` already carries the 1/(1-rate) survivor scaling; `None` means
    /// the op was an eval-mode identity.
    Dropout {
        x: Var,
        mask: Option<Vec<f64>>,
    },
    /// Mean squared error against a constant target vector.
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    /// Sum of squared consecutive differences down a column vector.
    TemporalSmoothness {
        pred: Var,
    },
    /// Plain sum of all entries.
    SparsitySum {
        pred: Var,
    },
    /// Distance between per-cluster row means divided by `m`, with frozen
    /// 2-way assignments; gradients flow into the rows.
    ClusterDistance {
        rows: Var,
        assignments: Vec<bool>,
        m: usize,
    },
    /// min(x, bound) for a scalar; subgradient 0 at and above the bound.
    MinConst {
        x: Var,
        bound: f64,
    },
    /// 1/max(x, floor) for a scalar; gradient 0 at and below the floor.
    RecipClamped {
        x: Var,
        floor: f64,
    },
    /// Linear combination of scalar nodes with constant coefficients.
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
    /// sum(w .* x) reducing a matrix to a scalar with constant weights.
    WeightedEntrySum {
        x: Var,
        weights: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    by_node: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the seeded loss with respect to `v`, if `v` was reached.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Untracked input (data, constants).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf { tracked: false }, value)
    }

    /// Tracked parameter leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf { tracked: true }, value)
    }

    /// `x (b x p) * w (p x q) + bias (1 x q)` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols() {
            return Err(Error::Dimension {
                op: "affine",
                detail: format!(
                    "x {}x{}, w {}x{}, bias {}x{}",
                    xv.rows(),
                    xv.cols(),
                    wv.rows(),
                    wv.cols(),
                    bv.rows(),
                    bv.cols()
                ),
            });
        }
        let mut out = xv.matmul(wv)?;
        let bias = bv.as_slice().to_vec();
        for r in 0..out.rows() {
            for (c, bc) in bias.iter().enumerate() {
                let v = out.get(r, c) + bc;
                out.set(r, c, v);
            }
        }
        Ok(self.push(Op::Affine { x, w, b }, out))
    }

    /// Elementwise max(0, x); the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu { x }, out)
    }

    /// Numerically stable logistic sigmoid, outputs strictly in (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(stable_sigmoid);
        self.push(Op::Sigmoid { x }, out)
    }

    /// Per-column softmax over rows with max subtraction; every column of
    /// the output sums to 1.
    pub fn column_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut out = Matrix::zeros(rows, cols);
        for c in 0..cols {
            let mut max = f64::NEG_INFINITY;
            for r in 0..rows {
                max = max.max(xv.get(r, c));
            }
            let mut sum = 0.0;
            for r in 0..rows {
                let e = (xv.get(r, c) - max).exp();
                out.set(r, c, e);
                sum += e;
            }
            for r in 0..rows {
                out.set(r, c, out.get(r, c) / sum);
            }
        }
        self.push(Op::ColumnSoftmax { x }, out)
    }

    /// Elementwise product; both operands receive gradients.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Dimension {
                op: "hadamard",
                detail: format!("{:?} vs {:?}", av.shape(), bv.shape()),
            });
        }
        let data = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| x * y)
            .collect();
        let out = Matrix::from_raw(av.rows(), av.cols(), data);
        Ok(self.push(Op::Hadamard { a, b }, out))
    }

    /// Inverted dropout: zero with probability `rate` in train mode,
    /// survivors scaled by 1/(1-rate); eval mode is the identity.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        let xv = self.value(x);
        match mode {
            Mode::Eval => {
                let out = xv.clone();
                Ok(self.push(Op::Dropout { x, mask: None }, out))
            }
            Mode::Train => {
                let scale = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..xv.as_slice().len())
                    .map(|_| {
                        if rng.random::<f64>() < rate {
                            0.0
                        } else {
                            scale
                        }
                    })
                    .collect();
                let data = xv
                    .as_slice()
                    .iter()
                    .zip(&mask)
                    .map(|(v, m)| v * m)
                    .collect();
                let out = Matrix::from_raw(xv.rows(), xv.cols(), data);
                Ok(self.push(
                    Op::Dropout {
                        x,
                        mask: Some(mask),
                    },
                    out,
                ))
            }
        }
    }

    /// (1/b) * sum((y - yhat)^2) against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.as_slice().len() != target.len() {
            return Err(Error::Dimension {
                op: "mse",
                detail: format!(
                    "{} predictions vs {} targets",
                    pv.as_slice().len(),
                    target.len()
                ),
            });
        }
        if target.is_empty() {
            return Err(Error::Usage("mse needs at least one element".into()));
        }
        let b = target.len() as f64;
        let loss = pv
            .as_slice()
            .iter()
            .zip(target)
            .map(|(p, y)| (y - p) * (y - p))
            .sum::<f64>()
            / b;
        Ok(self.push(
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            Matrix::scalar(loss),
        ))
    }

    /// sum over l of (pred[l+1] - pred[l])^2; needs at least two rows.
    pub fn temporal_smoothness(&mut self, pred: Var) -> Result<Var> {
        let p = self.value(pred).as_slice();
        if p.len() < 2 {
            return Err(Error::Usage(
                "temporal smoothness needs at least 2 predictions".into(),
            ));
        }
        let loss = p.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
        Ok(self.push(Op::TemporalSmoothness { pred }, Matrix::scalar(loss)))
    }

    /// Plain sum of predictions.
    pub fn sparsity_sum(&mut self, pred: Var) -> Var {
        let loss = self.value(pred).as_slice().iter().sum();
        self.push(Op::SparsitySum { pred }, Matrix::scalar(loss))
    }

    /// ||mean(rows in cluster 0) - mean(rows in cluster 1)||_2 / m with
    /// frozen assignments. Both clusters must be represented.
    pub fn cluster_distance(&mut self, rows: Var, assignments: &[bool], m: usize) -> Result<Var> {
        let rv = self.value(rows);
        if assignments.len() != rv.rows() {
            return Err(Error::Dimension {
                op: "cluster_distance",
                detail: format!("{} assignments for {} rows", assignments.len(), rv.rows()),
            });
        }
        let n1 = assignments.iter().filter(|&&a| a).count();
        let n0 = assignments.len() - n1;
        if n0 == 0 || n1 == 0 {
            return Err(Error::Usage(
                "cluster_distance needs both clusters represented".into(),
            ));
        }
        if m == 0 {
            return Err(Error::Usage("cluster_distance needs m >= 1".into()));
        }
        let (c0, c1) = cluster_means(rv, assignments);
        let dist: f64 = c0
            .iter()
            .zip(&c1)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / m as f64;
        Ok(self.push(
            Op::ClusterDistance {
                rows,
                assignments: assignments.to_vec(),
                m,
            },
            Matrix::scalar(dist),
        ))
    }

    /// min(x, bound) on a scalar node.
    pub fn min_const(&mut self, x: Var, bound: f64) -> Result<Var> {
        let v = self.scalar_of(x, "min_const")?;
        Ok(self.push(Op::MinConst { x, bound }, Matrix::scalar(v.min(bound))))
    }

    /// 1/max(x, floor) on a scalar node; the floor keeps the reciprocal
    /// bounded as x approaches 0.
    pub fn recip_clamped(&mut self, x: Var, floor: f64) -> Result<Var> {
        let v = self.scalar_of(x, "recip_clamped")?;
        Ok(self.push(
            Op::RecipClamped { x, floor },
            Matrix::scalar(1.0 / v.max(floor)),
        ))
    }

    /// sum of coeff * scalar over the given terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, c) in terms {
            total += c * self.scalar_of(v, "weighted_sum")?;
        }
        Ok(self.push(
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            Matrix::scalar(total),
        ))
    }

    /// sum(weights .* x) reducing any matrix to a scalar.
    pub fn weighted_entry_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if weights.len() != xv.as_slice().len() {
            return Err(Error::Dimension {
                op: "weighted_entry_sum",
                detail: format!(
                    "{} weights for {} entries",
                    weights.len(),
                    xv.as_slice().len()
                ),
            });
        }
        let total = xv.as_slice().iter().zip(weights).map(|(a, w)| a * w).sum();
        Ok(self.push(
            Op::WeightedEntrySum {
                x,
                weights: weights.to_vec(),
            },
            Matrix::scalar(total),
        ))
    }

    fn scalar_of(&self, v: Var, op: &'static str) -> Result<f64> {
        let m = self.value(v);
        if !m.is_scalar() {
            return Err(Error::Usage(format!(
                "{op} expects scalar nodes, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(m.scalar_value())
    }

    /// Reverse pass from a scalar terminal node, seeded with `seed_loss`.
    ///
    /// Visits operations in exact reverse execution order; every node's
    /// adjoint accumulates additively across its uses. Repeat calls are
    /// deterministic repeats over fresh buffers.
    pub fn backward(&self, loss: Var, seed_loss: f64) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(
                "backward requires a scalar terminal node".into(),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(seed_loss));

        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { by_node: grads })
    }

    /// Untracked leaves absorb no adjoint; skipping them avoids the input
    /// gradient matmul for data batches.
    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf { tracked: false })
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let accumulate = |grads: &mut [Option<Matrix>], v: Var, delta: Matrix| match &mut grads[v.0]
        {
            Some(existing) => existing.add_in_place(&delta),
            slot @ None => *slot = Some(delta),
        };

        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::Affine { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                if self.needs_grad(*x) {
                    let dx = g.matmul(&wv.transposed()).expect("shapes fixed at forward");
                    accumulate(grads, *x, dx);
                }
                let dw = xv.transposed().matmul(g).expect("shapes fixed at forward");
                let mut db = Matrix::zeros(1, wv.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        let v = db.get(0, c) + g.get(r, c);
                        db.set(0, c, v);
                    }
                }
                accumulate(grads, *w, dw);
                accumulate(grads, *b, db);
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let data = xv
                    .as_slice()
                    .iter()
                    .zip(g.as_slice())
                    .map(|(&v, &gu)| if v > 0.0 { gu } else { 0.0 })
                    .collect();
                accumulate(grads, *x, Matrix::from_raw(g.rows(), g.cols(), data));
            }
            Op::Sigmoid { x } => {
                let s = &self.nodes[id].value;
                let data = s
                    .as_slice()
                    .iter()
                    .zip(g.as_slice())
                    .map(|(&sv, &gu)| gu * sv * (1.0 - sv))
                    .collect();
                accumulate(grads, *x, Matrix::from_raw(g.rows(), g.cols(), data));
            }
            Op::ColumnSoftmax { x } => {
                let s = &self.nodes[id].value;
                let (rows, cols) = s.shape();
                let mut dx = Matrix::zeros(rows, cols);
                for c in 0..cols {
                    let mut dot = 0.0;
                    for r in 0..rows {
                        dot += g.get(r, c) * s.get(r, c);
                    }
                    for r in 0..rows {
                        dx.set(r, c, s.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Hadamard { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.needs_grad(*a) {
                    let da = g
                        .as_slice()
                        .iter()
                        .zip(bv.as_slice())
                        .map(|(gu, bv)| gu * bv)
                        .collect();
                    accumulate(grads, *a, Matrix::from_raw(g.rows(), g.cols(), da));
                }
                if self.needs_grad(*b) {
                    let db = g
                        .as_slice()
                        .iter()
                        .zip(av.as_slice())
                        .map(|(gu, av)| gu * av)
                        .collect();
                    accumulate(grads, *b, Matrix::from_raw(g.rows(), g.cols(), db));
                }
            }
            Op::Dropout { x, mask } => {
                let dx = match mask {
                    None => g.clone(),
                    Some(m) => {
                        let data = g.as_slice().iter().zip(m).map(|(gu, mv)| gu * mv).collect();
                        Matrix::from_raw(g.rows(), g.cols(), data)
                    }
                };
                accumulate(grads, *x, dx);
            }
            Op::Mse { pred, target } => {
                let gs = g.scalar_value();
                let pv = self.value(*pred);
                let b = target.len() as f64;
                let data = pv
                    .as_slice()
                    .iter()
                    .zip(target)
                    .map(|(p, y)| gs * 2.0 * (p - y) / b)
                    .collect();
                accumulate(grads, *pred, Matrix::from_raw(pv.rows(), pv.cols(), data));
            }
            Op::TemporalSmoothness { pred } => {
                let gs = g.scalar_value();
                let pv = self.value(*pred);
                let p = pv.as_slice();
                let n = p.len();
                let mut data = vec![0.0; n];
                for l in 0..n {
                    let mut d = 0.0;
                    if l > 0 {
                        d += 2.0 * (p[l] - p[l - 1]);
                    }
                    if l + 1 < n {
                        d -= 2.0 * (p[l + 1] - p[l]);
                    }
                    data[l] = gs * d;
                }
                accumulate(grads, *pred, Matrix::from_raw(pv.rows(), pv.cols(), data));
            }
            Op::SparsitySum { pred } => {
                let gs = g.scalar_value();
                let pv = self.value(*pred);
                accumulate(grads, *pred, Matrix::filled(pv.rows(), pv.cols(), gs));
            }
            Op::ClusterDistance {
                rows,
                assignments,
                m,
            } => {
                let gs = g.scalar_value();
                let rv = self.value(*rows);
                let (c0, c1) = cluster_means(rv, assignments);
                let diff: Vec<f64> = c0.iter().zip(&c1).map(|(a, b)| a - b).collect();
                let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
                let mut dx = Matrix::zeros(rv.rows(), rv.cols());
                // At coincident centers the distance is not differentiable;
                // take the zero subgradient.
                if norm > 1e-12 {
                    let n1 = assignments.iter().filter(|&&a| a).count();
                    let n0 = assignments.len() - n1;
                    for (r, &in_cluster1) in assignments.iter().enumerate() {
                        let scale = if in_cluster1 {
                            -gs / (norm * *m as f64 * n1 as f64)
                        } else {
                            gs / (norm * *m as f64 * n0 as f64)
                        };
                        for (c, &d) in diff.iter().enumerate() {
                            dx.set(r, c, scale * d);
                        }
                    }
                }
                accumulate(grads, *rows, dx);
            }
            Op::MinConst { x, bound } => {
                let gs = g.scalar_value();
                let xv = self.value(*x).scalar_value();
                let d = if xv < *bound { gs } else { 0.0 };
                accumulate(grads, *x, Matrix::scalar(d));
            }
            Op::RecipClamped { x, floor } => {
                let gs = g.scalar_value();
                let xv = self.value(*x).scalar_value();
                let d = if xv > *floor { -gs / (xv * xv) } else { 0.0 };
                accumulate(grads, *x, Matrix::scalar(d));
            }
            Op::WeightedSum { terms } => {
                let gs = g.scalar_value();
                for &(v, c) in terms {
                    accumulate(grads, v, Matrix::scalar(gs * c));
                }
            }
            Op::WeightedEntrySum { x, weights } => {
                let gs = g.scalar_value();
                let xv = self.value(*x);
                let data = weights.iter().map(|w| gs * w).collect();
                accumulate(grads, *x, Matrix::from_raw(xv.rows(), xv.cols(), data));
            }
        }
    }
}

/// Per-cluster means of `rows` under boolean assignments (false = cluster 0).
fn cluster_means(rows: &Matrix, assignments: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let cols = rows.cols();
    let mut c0 = vec![0.0; cols];
    let mut c1 = vec![0.0; cols];
    let mut n0 = 0usize;
    let mut n1 = 0usize;
    for (r, &a) in assignments.iter().enumerate() {
        let (acc, n) = if a {
            (&mut c1, &mut n1)
        } else {
            (&mut c0, &mut n0)
        };
        for (s, v) in acc.iter_mut().zip(rows.row(r)) {
            *s += v;
        }
        *n += 1;
    }
    for v in &mut c0 {
        *v /= n0.max(1) as f64;
    }
    for v in &mut c1 {
        *v /= n1.max(1) as f64;
    }
    (c0, c1)
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
