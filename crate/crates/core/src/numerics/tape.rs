use super::{NumericsError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean validity pattern for a matrix; `true` entries take part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn all(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                bits.push(f(r, c));
            }
        }
        Self { rows, cols, bits }
    }

    /// Every row sees the valid columns.
    pub fn columns(rows: usize, valid: &[bool]) -> Self {
        Self::from_fn(rows, valid.len(), |_, c| valid[c])
    }

    /// Row `i` sees valid columns `j <= i`.
    pub fn causal(valid: &[bool]) -> Self {
        let n = valid.len();
        Self::from_fn(n, n, |r, c| c <= r && valid[c])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulScalar(Var, Var),
    AddScalar(Var, Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Abs(Var),
    Neg(Var),
    Softplus(Var),
    Softmax(Var),
    LogSoftmax(Var, Mask),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    L2NormalizeRows(Var, Vec<f64>),
    MeanRows(Var, Vec<bool>, usize),
    SelectMean(Var, Vec<usize>),
    SumAll(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that reaches it.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, tape: &Tape, var: Var) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(var).shape();
            Tensor::zeros(r, c)
        })
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Entries of `values` at valid positions, sorted by descending value with
/// ties broken by the earlier index.
fn ranked_valid(values: &[f64], valid: &[bool]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| valid[i]).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Parameter or constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(op, x, y));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `a + b` with the `1×c` row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if y.rows() != 1 || y.cols() != x.cols() {
            return Err(mismatch("add_row", x, y));
        }
        let out = Tensor::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) + y.get(0, c));
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddConst(a))
    }

    fn check_scalar(&self, op: &'static str, a: Var, s: Var) -> Result<f64, NumericsError> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(mismatch(op, self.value(a), sv));
        }
        Ok(sv.item())
    }

    /// `a · s` for a `1×1` variable `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let k = self.check_scalar("mul_scalar", a, s)?;
        let out = self.value(a).map(|x| x * k);
        Ok(self.push(out, Op::MulScalar(a, s)))
    }

    /// `a + s` for a `1×1` variable `s`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let k = self.check_scalar("add_scalar", a, s)?;
        let out = self.value(a).map(|x| x + k);
        Ok(self.push(out, Op::AddScalar(a, s)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::Empty("concat_rows"));
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(mismatch("concat_rows", self.value(first), v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let v = self.value(a);
        if start + len > v.rows() {
            return Err(NumericsError::OutOfRange {
                op: "slice_rows",
                index: start + len,
                limit: v.rows(),
            });
        }
        let out = Tensor::new(
            len,
            v.cols(),
            v.data()[start * v.cols()..(start + len) * v.cols()].to_vec(),
        )?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| -x);
        self.push(out, Op::Neg(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    fn check_mask(&self, op: &'static str, a: Var, mask: Option<&Mask>) -> Result<(), NumericsError> {
        if let Some(m) = mask {
            let v = self.value(a);
            if m.shape() != v.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op,
                    left: v.shape(),
                    right: m.shape(),
                });
            }
        }
        Ok(())
    }

    /// Softmax along each row over the entries the mask allows.
    ///
    /// Masked entries are excluded as if their logit were -inf and come out
    /// exactly 0; a row with no valid entry is all zeros.
    pub fn row_softmax(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var, NumericsError> {
        self.check_mask("row_softmax", a, mask)?;
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let ok = |c: usize| mask.is_none_or(|m| m.get(r, c));
            let row = x.row(r);
            let max = (0..row.len())
                .filter(|&c| ok(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let o = out.row_mut(r);
            let mut sum = 0.0;
            for c in 0..row.len() {
                if ok(c) {
                    o[c] = (row[c] - max).exp();
                    sum += o[c];
                }
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Log of [`Tape::row_softmax`]; masked entries are reported as 0 and
    /// carry no gradient.
    pub fn row_log_softmax(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var, NumericsError> {
        self.check_mask("row_log_softmax", a, mask)?;
        let x = self.value(a);
        let mask = mask
            .cloned()
            .unwrap_or_else(|| Mask::all(x.rows(), x.cols()));
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let max = (0..row.len())
                .filter(|&c| mask.get(r, c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let sum: f64 = (0..row.len())
                .filter(|&c| mask.get(r, c))
                .map(|c| (row[c] - max).exp())
                .sum();
            let log_z = max + sum.ln();
            let o = out.row_mut(r);
            for c in 0..row.len() {
                if mask.get(r, c) {
                    o[c] = row[c] - log_z;
                }
            }
        }
        Ok(self.push(out, Op::LogSoftmax(a, mask)))
    }

    /// Per-row normalisation over the feature axis with learnable `1×c`
    /// gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let c = xv.cols();
        if c == 0 {
            return Err(NumericsError::Empty("layer_norm"));
        }
        for p in [gain, bias] {
            let pv = self.value(p);
            if pv.shape() != (1, c) {
                return Err(mismatch("layer_norm", xv, pv));
            }
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let mut normed = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; xv.rows()];
        let mut out = Tensor::zeros(xv.rows(), c);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..c {
                let n = (row[j] - mean) * inv;
                normed[r * c + j] = n;
                out.set(r, j, n * g.get(0, j) + b.get(0, j));
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        ))
    }

    /// Scales every row to unit Euclidean length.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let x = self.value(a);
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(NumericsError::ZeroNorm(r));
            }
            norms.push(n);
            for v in out.row_mut(r) {
                *v /= n;
            }
        }
        Ok(self.push(out, Op::L2NormalizeRows(a, norms)))
    }

    /// Mean of the valid rows, giving `1×c`.
    pub fn mean_over_valid(&mut self, a: Var, valid: &[bool]) -> Result<Var, NumericsError> {
        let x = self.value(a);
        if valid.len() != x.rows() {
            return Err(NumericsError::MaskLength {
                expected: x.rows(),
                actual: valid.len(),
            });
        }
        let count = valid.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(NumericsError::Empty("mean_over_valid"));
        }
        let mut out = Tensor::zeros(1, x.cols());
        for r in (0..x.rows()).filter(|&r| valid[r]) {
            for (o, v) in out.row_mut(0).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let out = out.map(|v| v / count as f64);
        Ok(self.push(out, Op::MeanRows(a, valid.to_vec(), count)))
    }

    fn check_flat(&self, a: Var, valid: &[bool]) -> Result<usize, NumericsError> {
        let x = self.value(a);
        if valid.len() != x.len() {
            return Err(NumericsError::MaskLength {
                expected: x.len(),
                actual: valid.len(),
            });
        }
        Ok(valid.iter().filter(|&&v| v).count())
    }

    /// Mean of the `k` largest valid entries of a vector (ties go to the
    /// earlier index).
    pub fn topk_mean(&mut self, a: Var, valid: &[bool], k: usize) -> Result<Var, NumericsError> {
        let n = self.check_flat(a, valid)?;
        if k == 0 || k > n {
            return Err(NumericsError::TopK { k, valid: n });
        }
        let x = self.value(a);
        let picked: Vec<usize> = ranked_valid(x.data(), valid).into_iter().take(k).collect();
        let mean = picked.iter().map(|&i| x.data()[i]).sum::<f64>() / k as f64;
        Ok(self.push(Tensor::scalar(mean), Op::SelectMean(a, picked)))
    }

    pub fn max_over_valid(&mut self, a: Var, valid: &[bool]) -> Result<Var, NumericsError> {
        let n = self.check_flat(a, valid)?;
        if n == 0 {
            return Err(NumericsError::Empty("max_over_valid"));
        }
        let x = self.value(a);
        let best = ranked_valid(x.data(), valid)[0];
        let out = Tensor::scalar(x.data()[best]);
        Ok(self.push(out, Op::SelectMean(a, vec![best])))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, Op::SumAll(a))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NumericsError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
            match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul(&bv.transpose())?);
                    acc(&mut grads, *b, av.transpose().matmul(&g)?);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.zip_map(bv, |gv, x| gv * x));
                    acc(&mut grads, *b, g.zip_map(av, |gv, x| gv * x));
                }
                Op::AddRow(a, b) => {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g.map(|v| v * f)),
                Op::AddConst(a) => acc(&mut grads, *a, g.clone()),
                Op::MulScalar(a, s) => {
                    let k = self.value(*s).item();
                    let av = self.value(*a);
                    let gs: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                    acc(&mut grads, *a, g.map(|v| v * k));
                    acc(&mut grads, *s, Tensor::scalar(gs));
                }
                Op::AddScalar(a, s) => {
                    acc(&mut grads, *s, Tensor::scalar(g.data().iter().sum()));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (r, c) = self.value(*p).shape();
                        let piece = Tensor::new(r, c, g.data()[offset * c..(offset + r) * c].to_vec())?;
                        acc(&mut grads, *p, piece);
                        offset += r;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut full = Tensor::zeros(r, c);
                    full.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                    acc(&mut grads, *a, full);
                }
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(y, |gv, s| gv * s * (1.0 - s))),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(y, |gv, t| gv * (1.0 - t * t))),
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(y, |gv, e| gv * e)),
                Op::Abs(a) => {
                    let x = self.value(*a);
                    // sign(0) = 0
                    let sg = x.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 });
                    acc(&mut grads, *a, g.zip_map(&sg, |gv, s| gv * s));
                }
                Op::Neg(a) => acc(&mut grads, *a, g.map(|v| -v)),
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(x, |gv, v| gv * sigmoid(v)));
                }
                Op::Softmax(a) => {
                    let mut gx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yv, gv)) in gx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::LogSoftmax(a, mask) => {
                    let mut gx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let total: f64 = (0..y.cols())
                            .filter(|&c| mask.get(r, c))
                            .map(|c| g.get(r, c))
                            .sum();
                        for c in (0..y.cols()).filter(|&c| mask.get(r, c)) {
                            gx.set(r, c, g.get(r, c) - y.get(r, c).exp() * total);
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let (rows, c) = g.shape();
                    let gain_v = self.value(*gain);
                    let mut gx = Tensor::zeros(rows, c);
                    let mut gg = Tensor::zeros(1, c);
                    let mut gb = Tensor::zeros(1, c);
                    let mut dn = vec![0.0; c];
                    for r in 0..rows {
                        let n = &normed[r * c..(r + 1) * c];
                        let gr = g.row(r);
                        for j in 0..c {
                            dn[j] = gr[j] * gain_v.get(0, j);
                            gg.data_mut()[j] += gr[j] * n[j];
                            gb.data_mut()[j] += gr[j];
                        }
                        let sum_dn: f64 = dn.iter().sum();
                        let sum_dn_n: f64 = dn.iter().zip(n).map(|(a, b)| a * b).sum();
                        let scale = inv_std[r] / c as f64;
                        for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = scale * (c as f64 * dn[j] - sum_dn - n[j] * sum_dn_n);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gain, gg);
                    acc(&mut grads, *bias, gb);
                }
                Op::L2NormalizeRows(a, norms) => {
                    let mut gx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yv, gv)) in gx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = (gv - yv * dot) / norms[r];
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::MeanRows(a, valid, count) => {
                    let (r, c) = self.value(*a).shape();
                    let mut gx = Tensor::zeros(r, c);
                    for row in (0..r).filter(|&row| valid[row]) {
                        for (o, gv) in gx.row_mut(row).iter_mut().zip(g.row(0)) {
                            *o = gv / *count as f64;
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::SelectMean(a, picked) => {
                    let (r, c) = self.value(*a).shape();
                    let mut gx = Tensor::zeros(r, c);
                    let share = g.item() / picked.len() as f64;
                    for &i in picked {
                        gx.data_mut()[i] = share;
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Tensor::filled(r, c, g.item()));
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
