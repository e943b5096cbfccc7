//! Arena tape for reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Graph`]; inputs always precede
//! outputs, so node order is a topological order and [`Graph::backward`]
//! walks it once in reverse. A [`Tensor`] is only a handle into the arena.
//!
//! Shapes follow a simple convention: the last axis is the "column" axis and
//! all leading axes are flattened into rows. Broadcasting exists only for a
//! row vector against the rows of a matrix (`add_row`, `mul_row`).

use crate::conv::{conv1d_backward, conv1d_forward, conv2d_backward, conv2d_forward, ConvGeom};
use crate::error::{shape_err, Result, TensorError};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tensor(usize);

impl Tensor {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Tensor, Tensor),
    MatMulBt(Tensor, Tensor),
    Add(Tensor, Tensor),
    AddRow(Tensor, Tensor),
    Mul(Tensor, Tensor),
    MulRow(Tensor, Tensor),
    Scale(Tensor, T),
    Tanh(Tensor),
    Relu(Tensor),
    Softmax(Tensor),
    LogSoftmax(Tensor),
    LayerNorm(Tensor, Vec<T>),
    MeanRows(Tensor, Option<Vec<bool>>),
    Sum(Tensor),
    MaskedFill(Tensor, Vec<bool>),
    Reshape(Tensor),
    Transpose(Tensor),
    SliceCols(Tensor, usize),
    ConcatCols(Vec<Tensor>),
    Row(Tensor, usize),
    Pick(Tensor, usize),
    Conv1d(Tensor, Tensor, Tensor, ConvGeom),
    Conv2d(Tensor, Tensor, Tensor, ConvGeom),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

/// The tape. Single-threaded by construction; run independent graphs on
/// independent threads.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Vec<T>>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => {
            let cols = *shape.last().unwrap();
            (shape[..shape.len() - 1].iter().product(), cols)
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, t: Tensor) -> &[T] {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn scalar(&self, t: Tensor) -> T {
        self.nodes[t.0].value[0]
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, t: Tensor) -> Option<&[T]> {
        self.grads
            .get(t.0)
            .filter(|g| !g.is_empty())
            .map(|g| g.as_slice())
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.clear();
        }
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>().max(1));
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Tensor(self.nodes.len() - 1)
    }

    fn leaf(&mut self, data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "leaf",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(self.push(data, shape.to_vec(), Op::Leaf, requires_grad))
    }

    /// A trainable leaf.
    pub fn param(&mut self, data: Vec<T>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(data, shape, true)
    }

    pub fn constant(&mut self, data: Vec<T>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(data, shape, false)
    }

    pub fn param_f32(&mut self, data: &[f32], shape: &[usize]) -> Result<Tensor> {
        self.param(data.iter().map(|&x| T::of(x as f64)).collect(), shape)
    }

    pub fn constant_f32(&mut self, data: &[f32], shape: &[usize]) -> Result<Tensor> {
        self.constant(data.iter().map(|&x| T::of(x as f64)).collect(), shape)
    }

    fn rg(&self, ts: &[Tensor]) -> bool {
        ts.iter().any(|t| self.nodes[t.0].requires_grad)
    }

    // ---- forward operations -------------------------------------------------

    /// `a · b` with `a` of shape `[.., k]` and `b` of shape `[k, n]`.
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (m, k) = rows_cols(self.shape(a));
        let bs = self.shape(b);
        if bs.len() != 2 || bs[0] != k {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), bs),
            ));
        }
        let n = bs[1];
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == T::zero() {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let mut shape = self.shape(a).to_vec();
        if shape.is_empty() {
            shape.push(n);
        } else {
            *shape.last_mut().unwrap() = n;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, shape, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` with `a` of shape `[.., k]` and `b` of shape `[n, k]`.
    pub fn matmul_bt(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (m, k) = rows_cols(self.shape(a));
        let bs = self.shape(b);
        let (n, kb) = rows_cols(bs);
        if bs.len() != 2 || kb != k {
            return Err(shape_err(
                "matmul_bt",
                format!("{:?} x {:?}ᵀ", self.shape(a), bs),
            ));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bv[j * k..(j + 1) * k];
                let mut s = T::zero();
                for p in 0..k {
                    s += arow[p] * brow[p];
                }
                out[i * n + j] = s;
            }
        }
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, shape, Op::MatMulBt(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Tensor, b: Tensor) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, self.shape(a).to_vec(), Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, self.shape(a).to_vec(), Op::Mul(a, b), rg))
    }

    fn row_check(&self, op: &'static str, a: Tensor, r: Tensor) -> Result<(usize, usize)> {
        let (m, n) = rows_cols(self.shape(a));
        if self.value(r).len() != n || self.shape(r).len() != 1 {
            return Err(shape_err(
                op,
                format!("{:?} with row {:?}", self.shape(a), self.shape(r)),
            ));
        }
        Ok((m, n))
    }

    /// Adds a length-`n` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Tensor, r: Tensor) -> Result<Tensor> {
        let (_, n) = self.row_check("add_row", a, r)?;
        let rv = self.value(r);
        let out = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + rv[i % n])
            .collect();
        let rg = self.rg(&[a, r]);
        Ok(self.push(out, self.shape(a).to_vec(), Op::AddRow(a, r), rg))
    }

    /// Multiplies every row of `a` elementwise by a length-`n` row vector.
    pub fn mul_row(&mut self, a: Tensor, r: Tensor) -> Result<Tensor> {
        let (_, n) = self.row_check("mul_row", a, r)?;
        let rv = self.value(r);
        let out = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * rv[i % n])
            .collect();
        let rg = self.rg(&[a, r]);
        Ok(self.push(out, self.shape(a).to_vec(), Op::MulRow(a, r), rg))
    }

    pub fn scale(&mut self, a: Tensor, s: f64) -> Tensor {
        let s = T::of(s);
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let rg = self.rg(&[a]);
        self.push(out, self.shape(a).to_vec(), Op::Scale(a, s), rg)
    }

    pub fn tanh(&mut self, a: Tensor) -> Tensor {
        let out = self.value(a).iter().map(|&x| x.tanh()).collect();
        let rg = self.rg(&[a]);
        self.push(out, self.shape(a).to_vec(), Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let out = self
            .value(a)
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let rg = self.rg(&[a]);
        self.push(out, self.shape(a).to_vec(), Op::Relu(a), rg)
    }

    /// Replaces entries where `mask` is true by the masked sentinel.
    pub fn masked_fill(&mut self, a: Tensor, mask: &[bool]) -> Result<Tensor> {
        if mask.len() != self.value(a).len() {
            return Err(shape_err(
                "masked_fill",
                format!("mask len {} for shape {:?}", mask.len(), self.shape(a)),
            ));
        }
        let out = self
            .value(a)
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { T::masked() } else { x })
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(
            out,
            self.shape(a).to_vec(),
            Op::MaskedFill(a, mask.to_vec()),
            rg,
        ))
    }

    /// Softmax along the last axis. Sentinel entries get probability exactly 0.
    /// A row whose entries are all masked yields all zeros.
    pub fn softmax(&mut self, a: Tensor) -> Tensor {
        let (m, n) = rows_cols(self.shape(a));
        let av = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mx = row
                .iter()
                .filter(|x| !x.is_masked())
                .fold(T::neg_infinity(), |acc, &x| acc.max(x));
            if mx == T::neg_infinity() {
                continue;
            }
            let o = &mut out[i * n..(i + 1) * n];
            let mut z = T::zero();
            for (oj, &x) in o.iter_mut().zip(row) {
                if !x.is_masked() {
                    *oj = (x - mx).exp();
                    z += *oj;
                }
            }
            for oj in o.iter_mut() {
                *oj = *oj / z;
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, self.shape(a).to_vec(), Op::Softmax(a), rg)
    }

    /// Log-softmax along the last axis. Sentinel entries stay at the sentinel
    /// and receive no gradient.
    pub fn log_softmax(&mut self, a: Tensor) -> Tensor {
        let (m, n) = rows_cols(self.shape(a));
        let av = self.value(a);
        let mut out = vec![T::masked(); m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mx = row
                .iter()
                .filter(|x| !x.is_masked())
                .fold(T::neg_infinity(), |acc, &x| acc.max(x));
            if mx == T::neg_infinity() {
                continue;
            }
            let z: T = row
                .iter()
                .filter(|x| !x.is_masked())
                .map(|&x| (x - mx).exp())
                .sum();
            let lse = mx + z.ln();
            for (oj, &x) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                if !x.is_masked() {
                    *oj = x - lse;
                }
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, self.shape(a).to_vec(), Op::LogSoftmax(a), rg)
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Tensor) -> Tensor {
        let (m, n) = rows_cols(self.shape(a));
        let av = self.value(a);
        let nf = T::of(n as f64);
        let mut out = vec![T::zero(); m * n];
        let mut inv = vec![T::zero(); m];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / nf;
            let is = T::one() / (var + T::of(LN_EPS)).sqrt();
            inv[i] = is;
            for (o, &x) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, self.shape(a).to_vec(), Op::LayerNorm(a, inv), rg)
    }

    /// Mean over the row axis: `[m, n] -> [n]`. With `rows`, only selected
    /// rows contribute; an empty selection gives the zero vector.
    pub fn mean_rows(&mut self, a: Tensor, rows: Option<&[bool]>) -> Result<Tensor> {
        let (m, n) = rows_cols(self.shape(a));
        if let Some(sel) = rows {
            if sel.len() != m {
                return Err(shape_err(
                    "mean_rows",
                    format!("selection len {} for {m} rows", sel.len()),
                ));
            }
        }
        let count = rows.map_or(m, |s| s.iter().filter(|&&b| b).count());
        let mut out = vec![T::zero(); n];
        if count > 0 {
            let av = self.value(a);
            let inv = T::one() / T::of(count as f64);
            for i in 0..m {
                if rows.is_some_and(|s| !s[i]) {
                    continue;
                }
                for (o, &x) in out.iter_mut().zip(&av[i * n..(i + 1) * n]) {
                    *o += x * inv;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, vec![n], Op::MeanRows(a, rows.map(|s| s.to_vec())), rg))
    }

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let s = self.value(a).iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(vec![s], vec![], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Tensor) -> Tensor {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, a: Tensor, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(a)),
            ));
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(out, shape.to_vec(), Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Tensor) -> Result<Tensor> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("transpose", format!("{s:?} is not a matrix")));
        }
        let (m, n) = (s[0], s[1]);
        let av = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, vec![n, m], Op::Transpose(a), rg))
    }

    /// Columns `start..start + len` of every row.
    pub fn slice_cols(&mut self, a: Tensor, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = rows_cols(self.shape(a));
        if start + len > n || self.shape(a).is_empty() {
            return Err(shape_err(
                "slice_cols",
                format!("{start}..{} of {:?}", start + len, self.shape(a)),
            ));
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(&[a]);
        Ok(self.push(out, shape, Op::SliceCols(a, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_cols", "no inputs"));
        };
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let (m, _) = rows_cols(self.shape(first));
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(shape_err(
                    "concat_cols",
                    format!("{:?} vs {:?}", self.shape(first), s),
                ));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.rg(parts);
        Ok(self.push(out, shape, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Tensor, i: usize) -> Result<Tensor> {
        let (m, n) = rows_cols(self.shape(a));
        if i >= m {
            return Err(TensorError::Index {
                op: "row",
                index: i,
                len: m,
            });
        }
        let out = self.value(a)[i * n..(i + 1) * n].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(out, vec![n], Op::Row(a, i), rg))
    }

    /// Flat element `i` as a scalar.
    pub fn pick(&mut self, a: Tensor, i: usize) -> Result<Tensor> {
        let len = self.value(a).len();
        if i >= len {
            return Err(TensorError::Index {
                op: "pick",
                index: i,
                len,
            });
        }
        let v = self.value(a)[i];
        let rg = self.rg(&[a]);
        Ok(self.push(vec![v], vec![], Op::Pick(a, i), rg))
    }

    /// `x: [c_in, w]`, `weight: [c_out, c_in, k]`, `bias: [c_out]`.
    pub fn conv1d(
        &mut self,
        x: Tensor,
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let geom = ConvGeom::new_1d(self.shape(x), self.shape(weight), self.shape(bias), stride, padding)?;
        let out = conv1d_forward(&geom, self.value(x), self.value(weight), self.value(bias));
        let rg = self.rg(&[x, weight, bias]);
        let shape = vec![geom.c_out, geom.out_w];
        Ok(self.push(out, shape, Op::Conv1d(x, weight, bias, geom), rg))
    }

    /// `x: [c_in, h, w]`, `weight: [c_out, c_in, k, k]`, `bias: [c_out]`.
    pub fn conv2d(
        &mut self,
        x: Tensor,
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let geom = ConvGeom::new_2d(self.shape(x), self.shape(weight), self.shape(bias), stride, padding)?;
        let out = conv2d_forward(&geom, self.value(x), self.value(weight), self.value(bias));
        let rg = self.rg(&[x, weight, bias]);
        let shape = vec![geom.c_out, geom.out_h, geom.out_w];
        Ok(self.push(out, shape, Op::Conv2d(x, weight, bias, geom), rg))
    }

    // ---- backward -----------------------------------------------------------

    /// Back-propagates from a scalar `loss`, adding into the gradients of
    /// every trainable leaf. Calling it again without [`Graph::zero_grad`]
    /// accumulates.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let n = loss.0 + 1;
        let mut g: Vec<Vec<T>> = vec![Vec::new(); n];
        g[loss.0] = vec![T::one()];
        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), Vec::new());
        }
        for i in (0..n).rev() {
            if g[i].is_empty() || !self.nodes[i].requires_grad {
                continue;
            }
            let gi = std::mem::take(&mut g[i]);
            let node = &self.nodes[i];
            self.backward_node(node, &gi, &mut g);
            if matches!(node.op, Op::Leaf) {
                let acc = &mut self.grads[i];
                if acc.is_empty() {
                    *acc = gi;
                } else {
                    for (a, &x) in acc.iter_mut().zip(&gi) {
                        *a += x;
                    }
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, node: &Node<T>, gy: &[T], g: &mut [Vec<T>]) {
        let nodes = &self.nodes;
        let val = |t: Tensor| nodes[t.0].value.as_slice();
        let wants = |t: Tensor| nodes[t.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = rows_cols(&nodes[a.0].shape);
                let n = nodes[b.0].shape[1];
                if wants(*a) {
                    let bv = val(*b);
                    let ga = slot(g, *a, m * k);
                    for i in 0..m {
                        let gyr = &gy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let mut s = T::zero();
                            for j in 0..n {
                                s += gyr[j] * brow[j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                }
                if wants(*b) {
                    let av = val(*a);
                    let gb = slot(g, *b, k * n);
                    for i in 0..m {
                        let gyr = &gy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == T::zero() {
                                continue;
                            }
                            for (o, &x) in gb[p * n..(p + 1) * n].iter_mut().zip(gyr) {
                                *o += aip * x;
                            }
                        }
                    }
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = rows_cols(&nodes[a.0].shape);
                let n = nodes[b.0].shape[0];
                if wants(*a) {
                    let bv = val(*b);
                    let ga = slot(g, *a, m * k);
                    for i in 0..m {
                        for j in 0..n {
                            let gij = gy[i * n + j];
                            if gij == T::zero() {
                                continue;
                            }
                            for (o, &x) in ga[i * k..(i + 1) * k].iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                                *o += gij * x;
                            }
                        }
                    }
                }
                if wants(*b) {
                    let av = val(*a);
                    let gb = slot(g, *b, n * k);
                    for i in 0..m {
                        for j in 0..n {
                            let gij = gy[i * n + j];
                            if gij == T::zero() {
                                continue;
                            }
                            for (o, &x) in gb[j * k..(j + 1) * k].iter_mut().zip(&av[i * k..(i + 1) * k]) {
                                *o += gij * x;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for t in [a, b] {
                    if wants(*t) {
                        add_into(slot(g, *t, gy.len()), gy);
                    }
                }
            }
            Op::AddRow(a, r) => {
                if wants(*a) {
                    add_into(slot(g, *a, gy.len()), gy);
                }
                if wants(*r) {
                    let n = nodes[r.0].value.len();
                    let gr = slot(g, *r, n);
                    for (i, &x) in gy.iter().enumerate() {
                        gr[i % n] += x;
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = val(*b);
                    let ga = slot(g, *a, gy.len());
                    for i in 0..gy.len() {
                        ga[i] += gy[i] * bv[i];
                    }
                }
                if wants(*b) {
                    let av = val(*a);
                    let gb = slot(g, *b, gy.len());
                    for i in 0..gy.len() {
                        gb[i] += gy[i] * av[i];
                    }
                }
            }
            Op::MulRow(a, r) => {
                let n = nodes[r.0].value.len();
                if wants(*a) {
                    let rv = val(*r);
                    let ga = slot(g, *a, gy.len());
                    for i in 0..gy.len() {
                        ga[i] += gy[i] * rv[i % n];
                    }
                }
                if wants(*r) {
                    let av = val(*a);
                    let gr = slot(g, *r, n);
                    for i in 0..gy.len() {
                        gr[i % n] += gy[i] * av[i];
                    }
                }
            }
            Op::Scale(a, s) => {
                let ga = slot(g, *a, gy.len());
                for i in 0..gy.len() {
                    ga[i] += gy[i] * *s;
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let ga = slot(g, *a, gy.len());
                for i in 0..gy.len() {
                    ga[i] += gy[i] * (T::one() - y[i] * y[i]);
                }
            }
            Op::Relu(a) => {
                let x = val(*a);
                let ga = slot(g, *a, gy.len());
                for i in 0..gy.len() {
                    if x[i] > T::zero() {
                        ga[i] += gy[i];
                    }
                }
            }
            Op::MaskedFill(a, mask) => {
                let ga = slot(g, *a, gy.len());
                for i in 0..gy.len() {
                    if !mask[i] {
                        ga[i] += gy[i];
                    }
                }
            }
            Op::Softmax(a) => {
                let (m, n) = rows_cols(&node.shape);
                let y = &node.value;
                let ga = slot(g, *a, gy.len());
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &gy[i * n..(i + 1) * n];
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..n {
                        ga[i * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let (m, n) = rows_cols(&node.shape);
                let y = &node.value;
                let ga = slot(g, *a, gy.len());
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &gy[i * n..(i + 1) * n];
                    let total: T = (0..n).filter(|&j| !yr[j].is_masked()).map(|j| gr[j]).sum();
                    for j in 0..n {
                        if !yr[j].is_masked() {
                            ga[i * n + j] += gr[j] - yr[j].exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm(a, inv) => {
                let (m, n) = rows_cols(&node.shape);
                let y = &node.value;
                let nf = T::of(n as f64);
                let ga = slot(g, *a, gy.len());
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &gy[i * n..(i + 1) * n];
                    let mean_g = gr.iter().copied().sum::<T>() / nf;
                    let mean_gy = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum::<T>() / nf;
                    for j in 0..n {
                        ga[i * n + j] += inv[i] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
            }
            Op::MeanRows(a, sel) => {
                let (m, n) = rows_cols(&nodes[a.0].shape);
                let count = sel.as_ref().map_or(m, |s| s.iter().filter(|&&b| b).count());
                if count == 0 {
                    return;
                }
                let inv = T::one() / T::of(count as f64);
                let ga = slot(g, *a, m * n);
                for i in 0..m {
                    if sel.as_ref().is_some_and(|s| !s[i]) {
                        continue;
                    }
                    for j in 0..n {
                        ga[i * n + j] += gy[j] * inv;
                    }
                }
            }
            Op::Sum(a) => {
                let len = nodes[a.0].value.len();
                let ga = slot(g, *a, len);
                for x in ga.iter_mut() {
                    *x += gy[0];
                }
            }
            Op::Reshape(a) => add_into(slot(g, *a, gy.len()), gy),
            Op::Transpose(a) => {
                let (m, n) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let ga = slot(g, *a, m * n);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += gy[j * m + i];
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = rows_cols(&nodes[a.0].shape);
                let len = *node.shape.last().unwrap();
                let ga = slot(g, *a, m * n);
                for i in 0..m {
                    add_into(
                        &mut ga[i * n + start..i * n + start + len],
                        &gy[i * len..(i + 1) * len],
                    );
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = rows_cols(&node.shape);
                let mut off = 0;
                for p in parts {
                    let w = *nodes[p.0].shape.last().unwrap();
                    if wants(*p) {
                        let gp = slot(g, *p, m * w);
                        for i in 0..m {
                            add_into(
                                &mut gp[i * w..(i + 1) * w],
                                &gy[i * total + off..i * total + off + w],
                            );
                        }
                    }
                    off += w;
                }
            }
            Op::Row(a, i) => {
                let n = gy.len();
                let len = nodes[a.0].value.len();
                let ga = slot(g, *a, len);
                add_into(&mut ga[i * n..(i + 1) * n], gy);
            }
            Op::Pick(a, i) => {
                let len = nodes[a.0].value.len();
                slot(g, *a, len)[*i] += gy[0];
            }
            Op::Conv1d(x, w, b, geom) => {
                let (gx, gw, gb) = conv1d_backward(geom, val(*x), val(*w), gy);
                if wants(*x) {
                    add_into(slot(g, *x, gx.len()), &gx);
                }
                if wants(*w) {
                    add_into(slot(g, *w, gw.len()), &gw);
                }
                if wants(*b) {
                    add_into(slot(g, *b, gb.len()), &gb);
                }
            }
            Op::Conv2d(x, w, b, geom) => {
                let (gx, gw, gb) = conv2d_backward(geom, val(*x), val(*w), gy);
                if wants(*x) {
                    add_into(slot(g, *x, gx.len()), &gx);
                }
                if wants(*w) {
                    add_into(slot(g, *w, gw.len()), &gw);
                }
                if wants(*b) {
                    add_into(slot(g, *b, gb.len()), &gb);
                }
            }
        }
    }
}

fn slot<T: Scalar>(g: &mut [Vec<T>], t: Tensor, len: usize) -> &mut [T] {
    let s = &mut g[t.0];
    if s.is_empty() {
        *s = vec![T::zero(); len];
    }
    s.as_mut_slice()
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
