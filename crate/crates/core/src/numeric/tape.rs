use super::{log_sum_exp, softmax_into, Tensor, NORM_EPS};
use crate::error::{ensure, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Parameter, input or constant. Also used for any op whose inputs carry
    /// no gradient, so no backward information is retained for it.
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Square(Var),
    Sum(Var),
    SumRows(Var),
    Reshape(Var),
    Conv3x3(Var, Var, Var),
    AvgPool2(Var),
    NormalizeRows(Var),
    SoftmaxRows(Var),
    RowDot(Var, Var),
    ConcatCols(Var, Var),
    CrossEntropyRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode gradient tape.
///
/// Values are computed eagerly as ops are recorded. Nodes that do not depend
/// on any gradient-carrying leaf are stored as plain constants.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Trainable input: gradients are accumulated into it by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Number of nodes that still carry backward information.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        ensure!(k == k2, Contract, "matmul {m}x{k} by {k2}x{n}");
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul(a, b), self.any_grad(&[a, b])))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let out = transpose_raw(self.value(a).data(), m, n);
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.push(value, Op::Transpose(a), self.any_grad(&[a])))
    }

    /// `x[i, j] + bias[j]` for a matrix `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        let b = self.value(bias).data();
        ensure!(b.len() == n, Contract, "bias of length {} for {n} columns", b.len());
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(n.max(1)) {
            for (o, bj) in row.iter_mut().zip(b) {
                *o += bj;
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::AddRowBias(x, bias), self.any_grad(&[x, bias])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, |x, y| x - y, Op::Sub)
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ensure!(
            ta.shape() == tb.shape(),
            Contract,
            "elementwise op on shapes {:?} and {:?}",
            ta.shape(),
            tb.shape()
        );
        let out = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape(), out)?;
        Ok(self.push(value, op(a, b), self.any_grad(&[a, b])))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(t.shape(), out).expect("same shape");
        self.push(value, Op::Scale(a, factor), self.any_grad(&[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(t.shape(), out).expect("same shape");
        self.push(value, Op::Relu(a), self.any_grad(&[a]))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|x| x * x).collect();
        let value = Tensor::new(t.shape(), out).expect("same shape");
        self.push(value, Op::Square(a), self.any_grad(&[a]))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), self.any_grad(&[a]))
    }

    /// Column sums of an `m × n` matrix, as a `1 × n` matrix.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.dims2(a)?;
        let mut out = vec![0.0; n];
        for row in self.value(a).row_iter() {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let value = Tensor::matrix(1, n, out)?;
        Ok(self.push(value, Op::SumRows(a), self.any_grad(&[a])))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), self.any_grad(&[a])))
    }

    /// 3×3 convolution with zero padding and stride 1 on `[N, H, W, C_in]`
    /// input; `weight` is `[3, 3, C_in, C_out]`, `bias` is `[C_out]`.
    pub fn conv3x3(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let [n, h, w, cin] = xs[..] else {
            return Err(Error::Contract(format!("conv input shape {xs:?}")));
        };
        let [3, 3, wcin, cout] = ws[..] else {
            return Err(Error::Contract(format!("conv weight shape {ws:?}")));
        };
        ensure!(wcin == cin, Contract, "conv weight expects {wcin} channels, input has {cin}");
        ensure!(
            self.value(bias).len() == cout,
            Contract,
            "conv bias length {} for {cout} outputs",
            self.value(bias).len()
        );
        let geom = ConvGeom { n, h, w, cin, cout };
        let out = conv3x3_forward(
            &geom,
            self.value(x).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(&[n, h, w, cout], out)?;
        Ok(self.push(
            value,
            Op::Conv3x3(x, weight, bias),
            self.any_grad(&[x, weight, bias]),
        ))
    }

    /// 2×2 average pooling with stride 2 on `[N, H, W, C]`; odd trailing
    /// rows/columns are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let [n, h, w, c] = xs[..] else {
            return Err(Error::Contract(format!("pool input shape {xs:?}")));
        };
        ensure!(h >= 2 && w >= 2, Contract, "cannot pool {h}x{w} spatial input");
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0; n * oh * ow * c];
        for b in 0..n {
            for y in 0..oh {
                for xx in 0..ow {
                    let o = ((b * oh + y) * ow + xx) * c;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * y + dy) * w + 2 * xx + dx) * c;
                        for ch in 0..c {
                            out[o + ch] += 0.25 * src[i + ch];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[n, oh, ow, c], out)?;
        Ok(self.push(value, Op::AvgPool2(x), self.any_grad(&[x])))
    }

    /// Divides every row by its Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_exact_mut(n.max(1)) {
            let norm = super::l2_norm(row);
            if !(norm > NORM_EPS) {
                return Err(Error::DegenerateVector {
                    norm,
                    eps: NORM_EPS,
                });
            }
            row.iter_mut().for_each(|x| *x /= norm);
        }
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::NormalizeRows(a), self.any_grad(&[a])))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        ensure!(n > 0, Contract, "softmax over zero columns");
        let src = self.value(a);
        if !src.is_finite() {
            return Err(Error::InvalidValue("softmax input is not finite".into()));
        }
        let mut out = vec![0.0; m * n];
        for (row, o) in src.row_iter().zip(out.chunks_exact_mut(n)) {
            softmax_into(row, o);
        }
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::SoftmaxRows(a), self.any_grad(&[a])))
    }

    /// Row-wise inner products of two `m × n` matrices, as `m × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        ensure!(
            self.dims2(b)? == (m, n),
            Contract,
            "row_dot shape mismatch"
        );
        let out = self
            .value(a)
            .row_iter()
            .zip(self.value(b).row_iter())
            .map(|(x, y)| super::dot(x, y))
            .collect();
        let value = Tensor::matrix(m, 1, out)?;
        Ok(self.push(value, Op::RowDot(a, b), self.any_grad(&[a, b])))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, na) = self.dims2(a)?;
        let (mb, nb) = self.dims2(b)?;
        ensure!(m == mb, Contract, "concat of {m} and {mb} rows");
        let mut out = Vec::with_capacity(m * (na + nb));
        for i in 0..m {
            out.extend_from_slice(&self.value(a).data()[i * na..(i + 1) * na]);
            out.extend_from_slice(&self.value(b).data()[i * nb..(i + 1) * nb]);
        }
        let value = Tensor::matrix(m, na + nb, out)?;
        Ok(self.push(value, Op::ConcatCols(a, b), self.any_grad(&[a, b])))
    }

    /// Mean over rows of `-log softmax(logits[i])[targets[i]]`, as a scalar.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(logits)?;
        ensure!(m > 0, Contract, "cross entropy over zero rows");
        ensure!(targets.len() == m, Contract, "{} targets for {m} rows", targets.len());
        ensure!(
            targets.iter().all(|&t| t < n),
            Contract,
            "target index out of range for {n} classes"
        );
        let src = self.value(logits);
        if !src.is_finite() {
            return Err(Error::InvalidValue("logits are not finite".into()));
        }
        let total: f64 = src
            .row_iter()
            .zip(targets)
            .map(|(row, &t)| log_sum_exp(row) - row[t])
            .sum();
        let value = Tensor::scalar(total / m as f64);
        Ok(self.push(
            value,
            Op::CrossEntropyRows(logits, targets.to_vec()),
            self.any_grad(&[logits]),
        ))
    }

    /// Back-propagates from a scalar `root`, filling the gradient slot of
    /// every node that depends on a trainable leaf. Slots from an earlier
    /// call are overwritten.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        ensure!(
            self.value(root).len() == 1,
            Contract,
            "backward from non-scalar of shape {:?}",
            self.value(root).shape()
        );
        let mut grads: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            match g {
                Some(g) => node.value.set_grad(g)?,
                None if node.requires_grad => {
                    let len = node.value.len();
                    node.value.set_grad(vec![0.0; len])?
                }
                None => node.value.clear_grad(),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a)?;
                let (_, n) = self.dims2(*b)?;
                if self.requires_grad(*a) {
                    // dA = G · Bᵀ
                    let bt = transpose_raw(self.value(*b).data(), k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    accumulate(grads, *a, &da);
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · G
                    let at = transpose_raw(self.value(*a).data(), m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    accumulate(grads, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims2(*a)?;
                accumulate(grads, *a, &transpose_raw(g, n, m));
            }
            Op::AddRowBias(x, bias) => {
                let (_, n) = self.dims2(*x)?;
                if self.requires_grad(*x) {
                    accumulate(grads, *x, g);
                }
                if self.requires_grad(*bias) {
                    let mut db = vec![0.0; n];
                    for row in g.chunks_exact(n.max(1)) {
                        for (d, r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    accumulate(grads, *bias, &db);
                }
            }
            Op::Add(a, b) => {
                accumulate_if(self, grads, *a, g);
                accumulate_if(self, grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate_if(self, grads, *a, g);
                if self.requires_grad(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(grads, *b, &neg);
                }
            }
            Op::Scale(a, f) => {
                let d: Vec<f64> = g.iter().map(|x| x * f).collect();
                accumulate(grads, *a, &d);
            }
            Op::Relu(a) => {
                let d: Vec<f64> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &d);
            }
            Op::Square(a) => {
                let d: Vec<f64> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| 2.0 * x * gi)
                    .collect();
                accumulate(grads, *a, &d);
            }
            Op::Sum(a) => {
                let d = vec![g[0]; self.value(*a).len()];
                accumulate(grads, *a, &d);
            }
            Op::SumRows(a) => {
                let (m, _) = self.dims2(*a)?;
                let d: Vec<f64> = (0..m).flat_map(|_| g.iter().copied()).collect();
                accumulate(grads, *a, &d);
            }
            Op::Reshape(a) => accumulate(grads, *a, g),
            Op::Conv3x3(x, w, b) => {
                let [n, h, wd, cin] = self.value(*x).shape()[..] else {
                    unreachable!("validated in forward")
                };
                let cout = out.shape()[3];
                let geom = ConvGeom {
                    n,
                    h,
                    w: wd,
                    cin,
                    cout,
                };
                let (dx, dw, db) = conv3x3_backward(
                    &geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    self.requires_grad(*x),
                );
                if self.requires_grad(*x) {
                    accumulate(grads, *x, &dx);
                }
                accumulate_if(self, grads, *w, &dw);
                accumulate_if(self, grads, *b, &db);
            }
            Op::AvgPool2(x) => {
                let [n, h, w, c] = self.value(*x).shape()[..] else {
                    unreachable!("validated in forward")
                };
                let (oh, ow) = (h / 2, w / 2);
                let mut d = vec![0.0; n * h * w * c];
                for b in 0..n {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let o = ((b * oh + y) * ow + xx) * c;
                            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                let i = ((b * h + 2 * y + dy) * w + 2 * xx + dx) * c;
                                for ch in 0..c {
                                    d[i + ch] += 0.25 * g[o + ch];
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *x, &d);
            }
            Op::NormalizeRows(a) => {
                let (_, n) = self.dims2(*a)?;
                let mut d = vec![0.0; g.len()];
                let rows = self.value(*a).row_iter().zip(out.row_iter());
                for (i, (x, y)) in rows.enumerate() {
                    let norm = super::l2_norm(x);
                    let gi = &g[i * n..(i + 1) * n];
                    let yg = super::dot(y, gi);
                    for j in 0..n {
                        d[i * n + j] = (gi[j] - y[j] * yg) / norm;
                    }
                }
                accumulate(grads, *a, &d);
            }
            Op::SoftmaxRows(a) => {
                let (_, n) = self.dims2(*a)?;
                let mut d = vec![0.0; g.len()];
                for (i, y) in out.row_iter().enumerate() {
                    let gi = &g[i * n..(i + 1) * n];
                    let yg = super::dot(y, gi);
                    for j in 0..n {
                        d[i * n + j] = y[j] * (gi[j] - yg);
                    }
                }
                accumulate(grads, *a, &d);
            }
            Op::RowDot(a, b) => {
                let (_, n) = self.dims2(*a)?;
                for (src, other) in [(*a, *b), (*b, *a)] {
                    if !self.requires_grad(src) {
                        continue;
                    }
                    let o = self.value(other).data();
                    let d: Vec<f64> = o
                        .iter()
                        .enumerate()
                        .map(|(idx, &v)| v * g[idx / n])
                        .collect();
                    accumulate(grads, src, &d);
                }
            }
            Op::ConcatCols(a, b) => {
                let (m, na) = self.dims2(*a)?;
                let (_, nb) = self.dims2(*b)?;
                let width = na + nb;
                if self.requires_grad(*a) {
                    let d: Vec<f64> = (0..m)
                        .flat_map(|i| g[i * width..i * width + na].iter().copied())
                        .collect();
                    accumulate(grads, *a, &d);
                }
                if self.requires_grad(*b) {
                    let d: Vec<f64> = (0..m)
                        .flat_map(|i| g[i * width + na..(i + 1) * width].iter().copied())
                        .collect();
                    accumulate(grads, *b, &d);
                }
            }
            Op::CrossEntropyRows(logits, targets) => {
                let (m, n) = self.dims2(*logits)?;
                let scale = g[0] / m as f64;
                let mut d = vec![0.0; m * n];
                for ((row, &t), drow) in self
                    .value(*logits)
                    .row_iter()
                    .zip(targets)
                    .zip(d.chunks_exact_mut(n))
                {
                    softmax_into(row, drow);
                    drow[t] -= 1.0;
                    drow.iter_mut().for_each(|x| *x *= scale);
                }
                accumulate(grads, *logits, &d);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, x)| *a += x),
        slot @ None => *slot = Some(d.to_vec()),
    }
}

fn accumulate_if(tape: &Tape, grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    if tape.requires_grad(v) {
        accumulate(grads, v, d);
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
}

impl ConvGeom {
    /// Input pixel offsets that feed output `(y, x)`, paired with the
    /// kernel tap index.
    fn taps(&self, y: usize, x: usize) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..3).flat_map(move |dy| {
            (0..3).filter_map(move |dx| {
                let iy = (y + dy).checked_sub(1)?;
                let ix = (x + dx).checked_sub(1)?;
                (iy < self.h && ix < self.w).then_some((iy, ix, dy * 3 + dx))
            })
        })
    }
}

fn conv3x3_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let (cin, cout) = (g.cin, g.cout);
    let mut out = vec![0.0; g.n * g.h * g.w * cout];
    for n in 0..g.n {
        for y in 0..g.h {
            for xx in 0..g.w {
                let o = ((n * g.h + y) * g.w + xx) * cout;
                let orow = &mut out[o..o + cout];
                orow.copy_from_slice(b);
                for (iy, ix, tap) in g.taps(y, xx) {
                    let i = ((n * g.h + iy) * g.w + ix) * cin;
                    for c in 0..cin {
                        let v = x[i + c];
                        if v == 0.0 {
                            continue;
                        }
                        let wrow = &w[(tap * cin + c) * cout..(tap * cin + c + 1) * cout];
                        for (ov, wv) in orow.iter_mut().zip(wrow) {
                            *ov += v * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv3x3_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    grad: &[f64],
    want_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (cin, cout) = (g.cin, g.cout);
    let mut dx = if want_dx { vec![0.0; x.len()] } else { Vec::new() };
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    for n in 0..g.n {
        for y in 0..g.h {
            for xx in 0..g.w {
                let o = ((n * g.h + y) * g.w + xx) * cout;
                let grow = &grad[o..o + cout];
                for (d, gv) in db.iter_mut().zip(grow) {
                    *d += gv;
                }
                for (iy, ix, tap) in g.taps(y, xx) {
                    let i = ((n * g.h + iy) * g.w + ix) * cin;
                    for c in 0..cin {
                        let base = (tap * cin + c) * cout;
                        let v = x[i + c];
                        let dwrow = &mut dw[base..base + cout];
                        for (d, gv) in dwrow.iter_mut().zip(grow) {
                            *d += v * gv;
                        }
                        if want_dx {
                            dx[i + c] += super::dot(&w[base..base + cout], grow);
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}
