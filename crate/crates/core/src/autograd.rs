//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records one forward computation. Parameters live in a
//! [`ParamStore`]; calling [`Tape::backward`] accumulates their gradients into
//! a [`Gradients`] buffer and returns the gradients of every recorded node, so
//! inputs created with [`Tape::input`] can be differentiated as well.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor; panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "parameter `{name}` registered twice"
        );
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }
}

/// Gradient buffer aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn for_store(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads[id.0].as_ref()
    }

    fn slot(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Mat {
        self.grads[id.0].get_or_insert_with(|| Mat::zeros(shape))
    }

    fn add(&mut self, id: ParamId, grad: &Mat) {
        let slot = self.slot(id, grad.dim());
        *slot += grad;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn clear(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather {
        table: ParamId,
        rows: Vec<usize>,
    },
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    RowNormalize {
        x: Var,
        norms: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    LeftMul {
        left: Mat,
        x: Var,
    },
    Mask {
        x: Var,
        mask: Mat,
    },
    Nll {
        logits: Var,
        labels: Vec<u8>,
        probs: Mat,
        eps: f64,
        weight: f64,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(64),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// A differentiable input that is not a parameter.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).clone();
        self.push(value, Op::Param(id))
    }

    /// Selects rows of a parameter table (embedding lookup).
    pub fn gather(&mut self, table: ParamId, rows: &[usize]) -> Var {
        let src = self.params.get(table);
        let value = src.select(Axis(0), rows);
        self.push(
            value,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// Adds a `1 × d` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let value = self.value(x) + &self.value(row).row(0);
        self.push(value, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x) * c;
        self.push(value, Op::Scale(x, c))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    /// Row-wise normalized exponential.
    pub fn softmax(&mut self, x: Var) -> Var {
        let value = softmax_rows(self.value(x).view());
        self.push(value, Op::Softmax(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        let mut xhat = Mat::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                xhat[[i, j]] = (v - mean) * is;
            }
        }
        let value = &xhat * &self.value(gamma).row(0) + self.value(beta).row(0);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Scales each row to unit length; all-zero rows stay zero.
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let norms: Vec<f64> = xv.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let mut value = xv.clone();
        for (mut row, &n) in value.rows_mut().into_iter().zip(&norms) {
            if n > 0.0 {
                row /= n;
            } else {
                row.fill(0.0);
            }
        }
        self.push(value, Op::RowNormalize { x, norms })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = concatenate(Axis(1), &views).expect("row counts agree");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = concatenate(Axis(0), &views).expect("column counts agree");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// `left · x` for a constant matrix `left`.
    pub fn left_mul(&mut self, left: Mat, x: Var) -> Var {
        let value = left.dot(self.value(x));
        self.push(value, Op::LeftMul { left, x })
    }

    /// Elementwise product with a constant mask.
    pub fn mask(&mut self, x: Var, mask: Mat) -> Var {
        let value = self.value(x) * &mask;
        self.push(value, Op::Mask { x, mask })
    }

    /// `weight · Σ_i −log max(p_i[label_i], eps)` where `p_i` is the
    /// normalized exponential of row `i` of `logits`. Returns a `1 × 1` node.
    pub fn nll(&mut self, logits: Var, labels: &[u8], eps: f64, weight: f64) -> Var {
        let probs = softmax_rows(self.value(logits).view());
        assert_eq!(probs.nrows(), labels.len(), "one label per logit row");
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -probs[[i, y as usize]].max(eps).ln())
            .sum();
        let value = Mat::from_elem((1, 1), weight * total);
        self.push(
            value,
            Op::Nll {
                logits,
                labels: labels.to_vec(),
                probs,
                eps,
                weight,
            },
        )
    }

    /// Back-propagates from the scalar `root`. Parameter gradients are added
    /// to `grads`; the returned buffer holds the gradient of every node.
    pub fn backward(&self, root: Var, grads: &mut Gradients) -> NodeGrads {
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        g[root.0] = Some(Mat::ones(self.value(root).dim()));

        fn acc(g: &mut [Option<Mat>], v: Var, delta: Mat) {
            match &mut g[v.0] {
                Some(existing) => *existing += &delta,
                slot => *slot = Some(delta),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.add(*id, &dy),
                Op::Gather { table, rows } => {
                    let shape = self.params.get(*table).dim();
                    let slot = grads.slot(*table, shape);
                    for (r, &row) in rows.iter().enumerate() {
                        let mut target = slot.row_mut(row);
                        target += &dy.row(r);
                    }
                }
                Op::MatMul(a, b) => {
                    let da = dy.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&dy);
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = dy.dot(self.value(*b));
                    let db = dy.t().dot(self.value(*a));
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, dy.clone());
                    acc(&mut g, *b, dy.clone());
                }
                Op::AddRow(x, row) => {
                    let drow = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut g, *x, dy.clone());
                    acc(&mut g, *row, drow);
                }
                Op::Scale(x, c) => acc(&mut g, *x, &dy * *c),
                Op::Tanh(x) => {
                    let dx = &dy * &node.value.mapv(|t| 1.0 - t * t);
                    acc(&mut g, *x, dx);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let mut dx = Mat::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let dot = y.row(i).dot(&dy.row(i));
                        for j in 0..y.ncols() {
                            dx[[i, j]] = y[[i, j]] * (dy[[i, j]] - dot);
                        }
                    }
                    acc(&mut g, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma).row(0).to_owned();
                    let (n, d) = xhat.dim();
                    let dgamma = (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let mut dx = Mat::zeros((n, d));
                    for i in 0..n {
                        let dxhat = &dy.row(i) * &gv;
                        let sum = dxhat.sum();
                        let dot = dxhat.dot(&xhat.row(i));
                        for j in 0..d {
                            dx[[i, j]] = inv_std[i] / d as f64
                                * (d as f64 * dxhat[j] - sum - xhat[[i, j]] * dot);
                        }
                    }
                    acc(&mut g, *x, dx);
                    acc(&mut g, *gamma, dgamma);
                    acc(&mut g, *beta, dbeta);
                }
                Op::RowNormalize { x, norms } => {
                    let y = &node.value;
                    let mut dx = Mat::zeros(y.dim());
                    for (i, &n) in norms.iter().enumerate() {
                        if n > 0.0 {
                            let dot = y.row(i).dot(&dy.row(i));
                            let row = (&dy.row(i) - &(&y.row(i) * dot)) / n;
                            dx.row_mut(i).assign(&row);
                        }
                    }
                    acc(&mut g, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut g, *p, dy.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut g, *p, dy.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::LeftMul { left, x } => acc(&mut g, *x, left.t().dot(&dy)),
                Op::Mask { x, mask } => acc(&mut g, *x, &dy * mask),
                Op::Nll {
                    logits,
                    labels,
                    probs,
                    eps,
                    weight,
                } => {
                    let scale = dy[[0, 0]] * weight;
                    let mut dx = Mat::zeros(probs.dim());
                    for (i, &y) in labels.iter().enumerate() {
                        // the clamp has zero slope below eps
                        if probs[[i, y as usize]] < *eps {
                            continue;
                        }
                        for j in 0..probs.ncols() {
                            let target = if j == y as usize { 1.0 } else { 0.0 };
                            dx[[i, j]] = scale * (probs[[i, j]] - target);
                        }
                    }
                    acc(&mut g, *logits, dx);
                }
            }
            g[idx] = Some(dy);
        }
        NodeGrads(g)
    }
}

/// Gradients of every node of a tape after [`Tape::backward`].
pub struct NodeGrads(Vec<Option<Mat>>);

impl NodeGrads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0.get(v.0).and_then(Option::as_ref)
    }
}

pub fn softmax_rows(x: ArrayView2<f64>) -> Mat {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}
