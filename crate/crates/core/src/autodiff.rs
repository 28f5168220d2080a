//! Minimal tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every model component builds its forward pass on a [`Graph`]. Trainable
//! parameters enter as leaves bound to a [`ParamId`] of a [`ParamStore`];
//! frozen tensors (backbone weights, vocabulary table) enter as constants and
//! never receive gradients, although gradients still flow *through* the
//! operations that consume them.

use std::borrow::Cow;
use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

pub type Mat = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
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

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Geometry of a 2-D convolution with edge-replicating padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    // Source pixel for output position (oy, ox) and kernel offset (ky, kx),
    // replicating the border outside the image.
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> usize {
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let y = clamp((oy * self.stride + ky) as isize - self.padding as isize, self.height);
        let x = clamp((ox * self.stride + kx) as isize - self.padding as isize, self.width);
        y * self.width + x
    }

    fn im2col(&self, input: &Mat) -> Mat {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        let mut cols = Mat::zeros((self.patch_len(), oh * ow));
        for c in 0..self.in_channels {
            let plane = input.row(c);
            for ky in 0..k {
                for kx in 0..k {
                    let r = (c * k + ky) * k + kx;
                    let mut dst = cols.row_mut(r);
                    for oy in 0..oh {
                        for ox in 0..ow {
                            dst[oy * ow + ox] = plane[self.source(oy, ox, ky, kx)];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Mat) -> Mat {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        let mut out = Mat::zeros((self.in_channels, self.height * self.width));
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let r = (c * k + ky) * k + kx;
                    let src = cols.row(r);
                    let mut plane = out.row_mut(c);
                    for oy in 0..oh {
                        for ox in 0..ow {
                            plane[self.source(oy, ox, ky, kx)] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
        out
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Silu(Var),
    Gelu(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    MeanRows(Var),
    SumAll(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Mat,
        inv_std: Vec<f64>,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
        cols: Mat,
    },
    Huber(Var, f64),
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Recorded computation. Values of leaves may borrow from their owners.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    bound: HashMap<ParamId, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn push(&mut self, value: Cow<'a, Mat>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable parameter leaf; binding the same id twice yields the same node.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(Cow::Borrowed(store.get(id)), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        self.bound.insert(id, v);
        v
    }

    /// Frozen tensor: no gradient is accumulated for it.
    pub fn constant(&mut self, value: &'a Mat) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn constant_owned(&mut self, value: Mat) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// Differentiable input that is not a stored parameter.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(v), Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(v), Op::MatMulT(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(v), Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(v), Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(v), Op::Mul(a, b), rg)
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a single row");
        let v = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(Cow::Owned(v), Op::AddRow(a, row), rg)
    }

    /// Multiplies every row of an `m×n` matrix elementwise by a `1×n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "mul_row expects a single row");
        let v = self.value(a) * self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(Cow::Owned(v), Op::MulRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::AddScalar(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Sigmoid(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Silu(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| gelu(x).0);
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Gelu(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        self.softmax_causal(a, None)
    }

    /// Row-wise softmax; with `Some(offset)`, entry `(i, j)` is masked out
    /// whenever `j > i + offset`.
    pub fn softmax_causal(&mut self, a: Var, offset: Option<usize>) -> Var {
        let x = self.value(a);
        let mut y = Mat::zeros(x.dim());
        for (i, (xr, mut yr)) in x.rows().into_iter().zip(y.rows_mut()).enumerate() {
            let limit = offset.map_or(xr.len(), |o| (i + o + 1).min(xr.len()));
            let max = xr
                .iter()
                .take(limit)
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for j in 0..limit {
                let e = (xr[j] - max).exp();
                yr[j] = e;
                sum += e;
            }
            for j in 0..limit {
                yr[j] /= sum;
            }
        }
        let rg = self.rg(a);
        self.push(Cow::Owned(y), Op::Softmax(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Cow::Owned(v), Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Cow::Owned(v), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::SliceRows(a, start), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::SliceCols(a, start), rg)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), rows * cols, "reshape changes element count");
        let flat: Vec<f64> = src.iter().copied().collect();
        let v = Mat::from_shape_vec((rows, cols), flat).expect("shape checked above");
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Reshape(a), rg)
    }

    /// Column means as a `1×n` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.sum_axis(Axis(0)).insert_axis(Axis(0)) / x.nrows() as f64;
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::MeanRows(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::SumAll(a), rg)
    }

    /// Per-row layer normalization with `1×n` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut normalized = Mat::zeros(xv.dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (row, mut out) in xv.rows().into_iter().zip(normalized.rows_mut()) {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            out.assign(&row.mapv(|v| (v - mean) * is));
            inv_std.push(is);
        }
        let v = &normalized * self.value(gamma) + self.value(beta);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Cow::Owned(v),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        )
    }

    /// 2-D convolution. `input` is `C_in × (H·W)` row-major planes, `weight`
    /// is `C_out × (C_in·k·k)`, `bias` is `1 × C_out`. Output is
    /// `C_out × (H_out·W_out)`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeometry) -> Var {
        let x = self.value(input);
        assert_eq!(x.dim(), (geom.in_channels, geom.height * geom.width));
        let cols = geom.im2col(x);
        let mut v = self.value(weight).dot(&cols);
        let b = self.value(bias);
        for (mut row, &bo) in v.rows_mut().into_iter().zip(b.iter()) {
            row += bo;
        }
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        self.push(
            Cow::Owned(v),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
            rg,
        )
    }

    /// Elementwise Huber (smooth-L1) penalty with transition point `delta`.
    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        let v = self.value(a).mapv(|x| {
            if x.abs() < delta {
                0.5 * x * x / delta
            } else {
                x.abs() - 0.5 * delta
            }
        });
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Huber(a, delta), rg)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Mat::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, i)))
            .collect();
        Gradients { grads, params }
    }

    fn propagate(&self, op: &Op, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let mut acc = |v: Var, d: Mat| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        let val = |v: Var| -> &Mat { &self.nodes[v.0].value };
        let out = &self.nodes[idx].value;

        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if self.rg(*b) {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(val(*b)));
                }
                if self.rg(*b) {
                    acc(*b, g.t().dot(val(*a)));
                }
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g * val(*b));
                }
                if self.rg(*b) {
                    acc(*b, g * val(*a));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.rg(*row) {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, row) => {
                if self.rg(*a) {
                    acc(*a, g * val(*row));
                }
                if self.rg(*row) {
                    acc(*row, (g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Sigmoid(a) => acc(*a, g * &out.mapv(|y| y * (1.0 - y))),
            Op::Silu(a) => {
                let d = val(*a).mapv(|x| {
                    let s = sigmoid(x);
                    s * (1.0 + x * (1.0 - s))
                });
                acc(*a, g * &d)
            }
            Op::Gelu(a) => acc(*a, g * &val(*a).mapv(|x| gelu(x).1)),
            Op::Softmax(a) => {
                let mut d = g * &**out;
                for (mut dr, yr) in d.rows_mut().into_iter().zip(out.rows()) {
                    let s = dr.sum();
                    dr.zip_mut_with(&yr, |dv, &y| *dv -= y * s);
                }
                acc(*a, d)
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    acc(p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = val(p).nrows();
                    acc(p, g.slice(s![start..start + h, ..]).to_owned());
                    start += h;
                }
            }
            Op::SliceRows(a, start) => {
                let mut d = Mat::zeros(val(*a).dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                acc(*a, d)
            }
            Op::SliceCols(a, start) => {
                let mut d = Mat::zeros(val(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*a, d)
            }
            Op::Reshape(a) => {
                let flat: Vec<f64> = g.iter().copied().collect();
                acc(*a, Mat::from_shape_vec(val(*a).dim(), flat).expect("same count"))
            }
            Op::MeanRows(a) => {
                let n = val(*a).nrows();
                let row = g / n as f64;
                let d = row.broadcast(val(*a).dim()).expect("1×n broadcast").to_owned();
                acc(*a, d)
            }
            Op::SumAll(a) => acc(*a, Mat::from_elem(val(*a).dim(), g[[0, 0]])),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                if self.rg(*gamma) {
                    acc(*gamma, (g * normalized).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*beta) {
                    acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*x) {
                    let dxhat = g * val(*gamma);
                    let n = dxhat.ncols() as f64;
                    let mut dx = Mat::zeros(dxhat.dim());
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let dh = dxhat.row(i);
                        let xh = normalized.row(i);
                        let mean_dh = dh.sum() / n;
                        let mean_dh_xh = dh.dot(&xh) / n;
                        for j in 0..row.len() {
                            row[j] = inv_std[i] * (dh[j] - mean_dh - xh[j] * mean_dh_xh);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                if self.rg(*weight) {
                    acc(*weight, g.dot(&cols.t()));
                }
                if self.rg(*bias) {
                    acc(*bias, g.sum_axis(Axis(1)).insert_axis(Axis(0)));
                }
                if self.rg(*input) {
                    let dcols = val(*weight).t().dot(g);
                    acc(*input, geom.col2im(&dcols));
                }
            }
            Op::Huber(a, delta) => {
                let d = val(*a).mapv(|x| if x.abs() < *delta { x / delta } else { x.signum() });
                acc(*a, g * &d)
            }
        }
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for every parameter bound into the graph.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.params
            .iter()
            .filter_map(|&(p, i)| self.grads[i].as_ref().map(|g| (p, g)))
    }

    /// Parameter gradients as a store-aligned buffer, zero where unused.
    pub fn to_buffer(&self, store: &ParamStore) -> Vec<Mat> {
        let mut buffer: Vec<Mat> = store.iter().map(|(_, m)| Mat::zeros(m.dim())).collect();
        self.accumulate_into(&mut buffer);
        buffer
    }

    /// Adds this sweep's parameter gradients into a store-aligned buffer.
    pub fn accumulate_into(&self, buffer: &mut [Mat]) {
        for (p, g) in self.params() {
            buffer[p.0] += g;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One analytic-vs-numeric gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub param: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientCheck {
    /// `|a - n| / max(|a|, |n|)`, or 0 when both are below `1e-7`.
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale < 1e-7 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Compares backprop gradients against central differences with step
/// `step`, on up to `entries_per_param` evenly spread entries of every
/// parameter. `loss` evaluates the scalar loss for a parameter store and
/// returns it with a store-aligned gradient buffer (see
/// [`Gradients::to_buffer`]).
pub fn check_gradients<F>(store: &ParamStore, entries_per_param: usize, step: f64, loss: F) -> Vec<GradientCheck>
where
    F: Fn(&ParamStore) -> (f64, Vec<Mat>),
{
    let (_, analytic) = loss(store);
    let mut probe = store.clone();
    let mut out = Vec::new();
    for id in store.ids() {
        let (rows, cols) = store.get(id).dim();
        let len = rows * cols;
        let n = entries_per_param.min(len);
        for k in 0..n {
            let flat = k * len / n;
            let index = (flat / cols, flat % cols);
            let original = store.get(id)[index];
            probe.get_mut(id)[index] = original + step;
            let plus = loss(&probe).0;
            probe.get_mut(id)[index] = original - step;
            let minus = loss(&probe).0;
            probe.get_mut(id)[index] = original;
            out.push(GradientCheck {
                param: store.name(id).to_string(),
                index,
                analytic: analytic[id.index()][index],
                numeric: (plus - minus) / (2.0 * step),
            });
        }
    }
    out
}

// (value, derivative)
fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let inner = C * (x + A * x * x * x);
    let t = inner.tanh();
    let value = 0.5 * x * (1.0 + t);
    let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (value, deriv)
}
