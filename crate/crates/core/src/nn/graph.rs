use super::params::{BufferId, Grads, NetworkParams, ParamId};
use super::tensor::{matmul, Scalar, Tensor};
use super::NnError;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    VStack(Vec<Var>),
    Reshape(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick { x: Var, idx: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Embedding { table: Var, ids: Vec<usize> },
}

#[derive(Debug)]
struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode tape over a fixed op set. Parameters are borrowed, not
/// copied; parameters listed as frozen act as constants.
#[derive(Debug)]
pub struct Graph<'a, T: Scalar> {
    params: &'a NetworkParams<T>,
    nodes: Vec<Node<T>>,
    frozen: Vec<bool>,
    all_const: bool,
    buffer_updates: Vec<(BufferId, Tensor<T>)>,
}

fn shape_err<T>(op: &str, shapes: &[&[usize]]) -> Result<T, NnError> {
    Err(NnError::Shape { op: op.to_string(), shapes: shapes.iter().map(|s| s.to_vec()).collect() })
}

fn conv_out(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Unfold one image `[C, H, W]` into columns `[C·k·k, Ho·Wo]`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, cols: &mut [T]) {
    let ho = conv_out(h, k, stride, pad);
    let wo = conv_out(w, k, stride, pad);
    let hw = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let out = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut out[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, dx: &mut [T]) {
    let ho = conv_out(h, k, stride, pad);
    let wo = conv_out(w, k, stride, pad);
    let hw = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let col = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[base + ix as usize] += col[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.row_len();
    let mut out = x.data.clone();
    for r in out.chunks_mut(n) {
        let m = r.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in r.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in r.iter_mut() {
            *v = *v / s;
        }
    }
    Tensor::new(x.shape.clone(), out)
}

fn log_softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.row_len();
    let mut out = x.data.clone();
    for r in out.chunks_mut(n) {
        let m = r.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = m + r.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        for v in r.iter_mut() {
            *v = *v - lse;
        }
    }
    Tensor::new(x.shape.clone(), out)
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new(params: &'a NetworkParams<T>) -> Self {
        Graph { params, nodes: Vec::new(), frozen: vec![false; params.len()], all_const: false, buffer_updates: Vec::new() }
    }

    /// Treat these parameters as constants: no gradient reaches them.
    pub fn freeze(&mut self, ids: &[ParamId]) {
        for id in ids {
            self.frozen[id.0] = true;
        }
    }

    /// While set, every parameter read is a constant. Lets one part of a
    /// loss use parameters that another part trains.
    pub fn set_params_const(&mut self, on: bool) {
        self.all_const = on;
    }

    pub fn params(&self) -> &'a NetworkParams<T> {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.value(v).shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Value::Owned(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; gradients are not tracked.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Value::Owned(t), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Input whose gradient can be read after [`Graph::backward`].
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Value::Owned(t), op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let requires_grad = !self.frozen[id.0] && !self.all_const;
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.input(t)
    }

    pub fn buffer_updates(&self) -> &[(BufferId, Tensor<T>)] {
        &self.buffer_updates
    }

    /// Running-statistic updates recorded by training-mode batch norm.
    pub fn take_buffer_updates(&mut self) -> Vec<(BufferId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// `x [B, in] · wᵀ [in, out] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return shape_err("linear", &[&xs, &ws]);
        }
        let (bsz, inp, out) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return shape_err("linear bias", &[self.shape(b), &ws]);
            }
        }
        let mut y = vec![T::zero(); bsz * out];
        matmul(bsz, inp, out, &self.value(x).data, false, &self.value(w).data, true, &mut y, false);
        if let Some(b) = b {
            let bv = &self.value(b).data;
            for r in y.chunks_mut(out) {
                for (v, &bb) in r.iter_mut().zip(bv) {
                    *v += bb;
                }
            }
        }
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(Tensor::new(vec![bsz, out], y), Op::Linear { x, w, b }, &ins))
    }

    /// 2-D convolution of `x [B, C, H, W]` with `w [O, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, NnError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || stride == 0 {
            return shape_err("conv2d", &[&xs, &ws]);
        }
        let (bsz, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return shape_err("conv2d", &[&xs, &ws]);
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return shape_err("conv2d bias", &[self.shape(b), &ws]);
            }
        }
        let (ho, wo) = (conv_out(h, k, stride, pad), conv_out(wd, k, stride, pad));
        let (ckk, hw) = (c * k * k, ho * wo);
        let mut cols = vec![T::zero(); ckk * hw];
        let mut y = vec![T::zero(); bsz * o * hw];
        {
            let xv = &self.value(x).data;
            let wv = &self.value(w).data;
            for bi in 0..bsz {
                im2col(&xv[bi * c * h * wd..(bi + 1) * c * h * wd], c, h, wd, k, stride, pad, &mut cols);
                matmul(o, ckk, hw, wv, false, &cols, false, &mut y[bi * o * hw..(bi + 1) * o * hw], false);
            }
            if let Some(b) = b {
                let bv = &self.value(b).data;
                for plane in y.chunks_mut(hw).enumerate() {
                    let bb = bv[plane.0 % o];
                    for v in plane.1 {
                        *v += bb;
                    }
                }
            }
        }
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(Tensor::new(vec![bsz, o, ho, wo], y), Op::Conv { x, w, b, stride, pad }, &ins))
    }

    /// Batch norm over all axes but the channel axis 1. Training mode uses
    /// batch statistics and records running-stat updates; eval mode reads
    /// the running statistics and changes nothing.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (BufferId, BufferId),
        train: bool,
    ) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || self.shape(gamma) != [xs[1]] || self.shape(beta) != [xs[1]] {
            return shape_err("batch_norm", &[&xs, self.shape(gamma)]);
        }
        let (bsz, c) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        let count = bsz * spatial;
        let xv = &self.value(x).data;
        let eps = T::of(BN_EPS);
        let mut pending = Vec::new();
        let (mean, var): (Vec<T>, Vec<T>) = if train {
            if count < 2 {
                return shape_err("batch_norm (training needs 2+ values per channel)", &[&xs]);
            }
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for bi in 0..bsz {
                for ci in 0..c {
                    let s = &xv[(bi * c + ci) * spatial..(bi * c + ci + 1) * spatial];
                    mean[ci] += s.iter().copied().sum::<T>();
                }
            }
            let nf = T::of(count as f64);
            for m in &mut mean {
                *m = *m / nf;
            }
            for bi in 0..bsz {
                for ci in 0..c {
                    let s = &xv[(bi * c + ci) * spatial..(bi * c + ci + 1) * spatial];
                    var[ci] += s.iter().map(|&v| (v - mean[ci]) * (v - mean[ci])).sum::<T>();
                }
            }
            for v in &mut var {
                *v = *v / nf;
            }
            let mom = T::of(BN_MOMENTUM);
            let rm = self.params.buffer(running.0);
            let rv = self.params.buffer(running.1);
            let unbias = nf / (nf - T::one());
            let new_m = rm.data.iter().zip(&mean).map(|(&r, &m)| (T::one() - mom) * r + mom * m).collect();
            let new_v = rv.data.iter().zip(&var).map(|(&r, &v)| (T::one() - mom) * r + mom * v * unbias).collect();
            pending.push((running.0, Tensor::new(vec![c], new_m)));
            pending.push((running.1, Tensor::new(vec![c], new_v)));
            (mean, var)
        } else {
            (self.params.buffer(running.0).data.clone(), self.params.buffer(running.1).data.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = &self.value(gamma).data;
        let bt = &self.value(beta).data;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut y = vec![T::zero(); xv.len()];
        for bi in 0..bsz {
            for ci in 0..c {
                let r = (bi * c + ci) * spatial..(bi * c + ci + 1) * spatial;
                for i in r {
                    xhat[i] = (xv[i] - mean[ci]) * inv_std[ci];
                    y[i] = g[ci] * xhat[i] + bt[ci];
                }
            }
        }
        self.buffer_updates.extend(pending);
        Ok(self.push(Tensor::new(xs, y), Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, &[x, gamma, beta]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|&v| f(v)).collect());
        self.push(out, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_const(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddConst(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return shape_err(name, &[&ta.shape, &tb.shape]);
        }
        let out = Tensor::new(ta.shape.clone(), ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect());
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Concatenate 2-D tensors along columns.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, NnError> {
        let shapes: Vec<Vec<usize>> = xs.iter().map(|&v| self.shape(v).to_vec()).collect();
        if xs.is_empty() || shapes.iter().any(|s| s.len() != 2 || s[0] != shapes[0][0]) {
            let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
            return shape_err("concat_cols", &refs);
        }
        let rows = shapes[0][0];
        let total: usize = shapes.iter().map(|s| s[1]).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, s) in xs.iter().zip(&shapes) {
                out.extend_from_slice(&self.value(v).data[r * s[1]..(r + 1) * s[1]]);
            }
        }
        Ok(self.push(Tensor::new(vec![rows, total], out), Op::ConcatCols(xs.to_vec()), xs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start + len > s[1] {
            return shape_err("slice_cols", &[&s]);
        }
        let d = &self.value(x).data;
        let out: Vec<T> = (0..s[0]).flat_map(|r| d[r * s[1] + start..r * s[1] + start + len].iter().copied()).collect();
        Ok(self.push(Tensor::new(vec![s[0], len], out), Op::SliceCols { x, start }, &[x]))
    }

    /// Rows `start..start+len` along the leading dimension.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return shape_err("slice_rows", &[&s]);
        }
        let rl: usize = s[1..].iter().product();
        let out = self.value(x).data[start * rl..(start + len) * rl].to_vec();
        let mut shape = s.clone();
        shape[0] = len;
        Ok(self.push(Tensor::new(shape, out), Op::SliceRows { x, start }, &[x]))
    }

    /// Stack along the leading dimension.
    pub fn vstack(&mut self, xs: &[Var]) -> Result<Var, NnError> {
        let shapes: Vec<Vec<usize>> = xs.iter().map(|&v| self.shape(v).to_vec()).collect();
        if xs.is_empty() || shapes.iter().any(|s| s.is_empty() || s[1..] != shapes[0][1..]) {
            let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
            return shape_err("vstack", &refs);
        }
        let mut out = Vec::new();
        for &v in xs {
            out.extend_from_slice(&self.value(v).data);
        }
        let mut shape = shapes[0].clone();
        shape[0] = shapes.iter().map(|s| s[0]).sum();
        Ok(self.push(Tensor::new(shape, out), Op::VStack(xs.to_vec()), xs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return shape_err("reshape", &[&t.shape, shape]);
        }
        let out = Tensor::new(shape.to_vec(), t.data.clone());
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Flatten all but the leading dimension.
    pub fn flatten(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        self.reshape(x, &[s[0], s[1..].iter().product()])
    }

    /// Row-wise softmax over the trailing dimensions.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        self.push(out, Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let out = log_softmax_rows(self.value(x));
        self.push(out, Op::LogSoftmax(x), &[x])
    }

    /// `y[b] = x[b, idx[b]]`, shape `[B, 1]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || idx.len() != s[0] || idx.iter().any(|&i| i >= s[1]) {
            return shape_err("pick", &[&s, &[idx.len()]]);
        }
        let d = &self.value(x).data;
        let out: Vec<T> = idx.iter().enumerate().map(|(r, &i)| d[r * s[1] + i]).collect();
        Ok(self.push(Tensor::new(vec![s[0], 1], out), Op::Pick { x, idx: idx.to_vec() }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data.iter().copied().sum::<T>() / T::of(t.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Rows of `table [V, d]` selected by `ids`, shape `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || ids.iter().any(|&i| i >= s[0]) {
            return shape_err("embedding", &[&s, &[ids.len()]]);
        }
        let d = &self.value(table).data;
        let out: Vec<T> = ids.iter().flat_map(|&i| d[i * s[1]..(i + 1) * s[1]].iter().copied()).collect();
        Ok(self.push(Tensor::new(vec![ids.len(), s[1]], out), Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    /// Reverse pass from a scalar. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Result<Backward<T>, NnError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return shape_err("backward (loss must be scalar)", &[&lt.shape]);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(&lt.shape, T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backward_node(i, &gy, &mut grads);
        }
        Ok(Backward { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut Tensor<T>)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(&self.value(v).shape));
        }
        f(slot.as_mut().expect("set"));
    }

    fn backward_node(&self, i: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = self.value(Var(i));
        let map = |x: &Tensor<T>, f: &dyn Fn(usize) -> T| Tensor::new(x.shape.clone(), (0..x.len()).map(f).collect());
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (bsz, inp, out) = (xv.shape[0], xv.shape[1], wv.shape[0]);
                self.acc_with(grads, *x, |g| matmul(bsz, out, inp, &gy.data, false, &wv.data, false, &mut g.data, true));
                self.acc_with(grads, *w, |g| matmul(out, bsz, inp, &gy.data, true, &xv.data, false, &mut g.data, true));
                if let Some(b) = b {
                    self.acc_with(grads, *b, |g| {
                        for r in gy.data.chunks(out) {
                            for (a, &v) in g.data.iter_mut().zip(r) {
                                *a += v;
                            }
                        }
                    });
                }
            }
            Op::Conv { x, w, b, stride, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (bsz, c, h, wd) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
                let (o, k) = (wv.shape[0], wv.shape[2]);
                let (ho, wo) = (y.shape[2], y.shape[3]);
                let (ckk, hw, chw) = (c * k * k, ho * wo, c * h * wd);
                let need_x = self.nodes[x.0].requires_grad;
                let need_w = self.nodes[w.0].requires_grad;
                let mut cols = vec![T::zero(); ckk * hw];
                let mut dcols = vec![T::zero(); ckk * hw];
                let mut dw = vec![T::zero(); wv.len()];
                let mut dx = if need_x { vec![T::zero(); xv.len()] } else { Vec::new() };
                for bi in 0..bsz {
                    let gyb = &gy.data[bi * o * hw..(bi + 1) * o * hw];
                    if need_w {
                        im2col(&xv.data[bi * chw..(bi + 1) * chw], c, h, wd, k, *stride, *pad, &mut cols);
                        matmul(o, hw, ckk, gyb, false, &cols, true, &mut dw, true);
                    }
                    if need_x {
                        matmul(ckk, o, hw, &wv.data, true, gyb, false, &mut dcols, false);
                        col2im(&dcols, c, h, wd, k, *stride, *pad, &mut dx[bi * chw..(bi + 1) * chw]);
                    }
                }
                if need_w {
                    self.acc(grads, *w, Tensor::new(wv.shape.clone(), dw));
                }
                if need_x {
                    self.acc(grads, *x, Tensor::new(xv.shape.clone(), dx));
                }
                if let Some(b) = b {
                    self.acc_with(grads, *b, |g| {
                        for (p, plane) in gy.data.chunks(hw).enumerate() {
                            g.data[p % o] += plane.iter().copied().sum::<T>();
                        }
                    });
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let xs = &y.shape;
                let (bsz, c) = (xs[0], xs[1]);
                let spatial: usize = xs[2..].iter().product();
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for bi in 0..bsz {
                    for ci in 0..c {
                        for j in (bi * c + ci) * spatial..(bi * c + ci + 1) * spatial {
                            dg[ci] += gy.data[j] * xhat[j];
                            db[ci] += gy.data[j];
                        }
                    }
                }
                let gv = &self.value(*gamma).data;
                if self.nodes[x.0].requires_grad {
                    let nf = T::of((bsz * spatial) as f64);
                    let mut dx = vec![T::zero(); gy.len()];
                    for bi in 0..bsz {
                        for ci in 0..c {
                            let scale = gv[ci] * inv_std[ci];
                            for j in (bi * c + ci) * spatial..(bi * c + ci + 1) * spatial {
                                dx[j] = if *train {
                                    scale * (gy.data[j] - db[ci] / nf - xhat[j] * dg[ci] / nf)
                                } else {
                                    scale * gy.data[j]
                                };
                            }
                        }
                    }
                    self.acc(grads, *x, Tensor::new(xs.clone(), dx));
                }
                self.acc(grads, *gamma, Tensor::new(vec![c], dg));
                self.acc(grads, *beta, Tensor::new(vec![c], db));
            }
            Op::Relu(x) => {
                let g = map(y, &|j| if y.data[j] > T::zero() { gy.data[j] } else { T::zero() });
                self.acc(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let g = map(y, &|j| gy.data[j] * y.data[j] * (T::one() - y.data[j]));
                self.acc(grads, *x, g);
            }
            Op::Tanh(x) => {
                let g = map(y, &|j| gy.data[j] * (T::one() - y.data[j] * y.data[j]));
                self.acc(grads, *x, g);
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, gy.clone());
                self.acc(grads, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, gy.clone());
                self.acc(grads, *b, map(gy, &|j| -gy.data[j]));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, map(gy, &|j| gy.data[j] * bv.data[j]));
                self.acc(grads, *b, map(gy, &|j| gy.data[j] * av.data[j]));
            }
            Op::Scale(x, s) => self.acc(grads, *x, map(gy, &|j| gy.data[j] * *s)),
            Op::AddConst(x) | Op::Reshape(x) => {
                let xs = self.value(*x).shape.clone();
                self.acc(grads, *x, Tensor::new(xs, gy.data.clone()));
            }
            Op::Square(x) => {
                let xv = self.value(*x);
                self.acc(grads, *x, map(gy, &|j| T::of(2.0) * xv.data[j] * gy.data[j]));
            }
            Op::ConcatCols(xs) => {
                let total = y.shape[1];
                let mut off = 0;
                for &v in xs {
                    let n = self.value(v).shape[1];
                    let g: Vec<T> =
                        gy.data.chunks(total).flat_map(|r| r[off..off + n].iter().copied()).collect();
                    self.acc(grads, v, Tensor::new(self.value(v).shape.clone(), g));
                    off += n;
                }
            }
            Op::SliceCols { x, start } => {
                let len = y.shape[1];
                self.acc_with(grads, *x, |g| {
                    let n = g.shape[1];
                    for (r, row) in gy.data.chunks(len).enumerate() {
                        for (a, &v) in g.data[r * n + start..r * n + start + len].iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                self.acc_with(grads, *x, |g| {
                    let rl = g.row_len();
                    for (a, &v) in g.data[start * rl..].iter_mut().zip(&gy.data) {
                        *a += v;
                    }
                });
            }
            Op::VStack(xs) => {
                let mut off = 0;
                for &v in xs {
                    let n = self.value(v).len();
                    self.acc(grads, v, Tensor::new(self.value(v).shape.clone(), gy.data[off..off + n].to_vec()));
                    off += n;
                }
            }
            Op::Softmax(x) => {
                let n = y.row_len();
                let mut g = vec![T::zero(); y.len()];
                for ((gr, yr), gyr) in g.chunks_mut(n).zip(y.data.chunks(n)).zip(gy.data.chunks(n)) {
                    let dot: T = yr.iter().zip(gyr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        gr[j] = yr[j] * (gyr[j] - dot);
                    }
                }
                self.acc(grads, *x, Tensor::new(y.shape.clone(), g));
            }
            Op::LogSoftmax(x) => {
                let n = y.row_len();
                let mut g = vec![T::zero(); y.len()];
                for ((gr, yr), gyr) in g.chunks_mut(n).zip(y.data.chunks(n)).zip(gy.data.chunks(n)) {
                    let s: T = gyr.iter().copied().sum();
                    for j in 0..n {
                        gr[j] = gyr[j] - yr[j].exp() * s;
                    }
                }
                self.acc(grads, *x, Tensor::new(y.shape.clone(), g));
            }
            Op::Pick { x, idx } => {
                self.acc_with(grads, *x, |g| {
                    let n = g.shape[1];
                    for (r, &i) in idx.iter().enumerate() {
                        g.data[r * n + i] += gy.data[r];
                    }
                });
            }
            Op::Sum(x) => {
                let xs = self.value(*x).shape.clone();
                self.acc(grads, *x, Tensor::filled(&xs, gy.data[0]));
            }
            Op::Mean(x) => {
                let xt = self.value(*x);
                let v = gy.data[0] / T::of(xt.len() as f64);
                self.acc(grads, *x, Tensor::filled(&xt.shape, v));
            }
            Op::Embedding { table, ids } => {
                self.acc_with(grads, *table, |g| {
                    let d = g.shape[1];
                    for (r, &i) in ids.iter().enumerate() {
                        for (a, &v) in g.data[i * d..(i + 1) * d].iter_mut().zip(&gy.data[r * d..(r + 1) * d]) {
                            *a += v;
                        }
                    }
                });
            }
        }
    }
}

/// Result of a reverse pass.
#[derive(Debug)]
pub struct Backward<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Backward<T> {
    /// Gradient of the loss with respect to a node (inputs need
    /// [`Graph::input_with_grad`]).
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Parameter gradients, summed over every use of each parameter.
    pub fn param_grads(&self, graph: &Graph<'_, T>) -> Grads<T> {
        let mut out: Vec<Option<Tensor<T>>> = (0..graph.params.len()).map(|_| None).collect();
        for (i, node) in graph.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &self.grads[i]) {
                match &mut out[id.0] {
                    Some(t) => t.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        Grads(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check, project};
    use crate::nn::layers::{kaiming_uniform, uniform, BatchNorm2d, Conv2d, Embedding, Linear, LstmCell};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
        uniform(shape, 1.0, r)
    }

    #[test]
    fn relu_values_and_grads() {
        let p = NetworkParams::<f64>::new();
        let mut g = Graph::new(&p);
        let x = g.input_with_grad(Tensor::new(vec![2], vec![-1.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data, vec![0.0, 2.0]);
        let s = g.sum(y);
        let b = g.backward(s).unwrap();
        assert_eq!(b.wrt(x).unwrap().data, vec![0.0, 1.0]);
    }

    #[test]
    fn identity_pointwise_conv_copies_channels() {
        let mut p = NetworkParams::<f64>::new();
        let mut eye = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            eye.data[c * 3 + c] = 1.0;
        }
        let w = p.add("w", eye);
        let mut r = rng();
        let xv = randn(&[2, 3, 4, 5], &mut r);
        let mut g = Graph::new(&p);
        let x = g.input(xv.clone());
        let wv = g.param(w);
        let y = g.conv2d(x, wv, None, 1, 0).unwrap();
        assert_eq!(g.value(y), &xv);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let p = NetworkParams::<f64>::new();
        let mut g = Graph::new(&p);
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[3, 2]));
        let e = g.add(a, b).unwrap_err().to_string();
        assert!(e.contains("add") && e.contains("[2, 3]") && e.contains("[3, 2]"), "{e}");
        let w = g.input(Tensor::zeros(&[4, 4]));
        assert!(g.linear(a, w, None).unwrap_err().to_string().contains("linear"));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = NetworkParams::<f32>::new();
        let mut g = Graph::new(&p);
        let x = g.input(Tensor::new(vec![2, 3], vec![1000.0, 0.0, -5.0, 0.1, 0.2, 0.3]));
        let y = g.softmax(x);
        for r in g.value(y).data.chunks(3) {
            assert!((r.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    fn assert_grads(p: &NetworkParams<f64>, inputs: &[Tensor<f64>], build: &dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, NnError>) {
        let report = check(p, inputs, build, 1e-5, 40, &mut rng()).unwrap();
        assert!(report.checked > 0);
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }

    #[test]
    fn finite_differences_linear_and_activations() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let lin = Linear::new(&mut p, "fc", 5, 4, &mut r);
        p.values[lin.b.0] = randn(&[4], &mut r);
        let proj = randn(&[3, 4], &mut r);
        for act in 0..3 {
            assert_grads(&p, &[randn(&[3, 5], &mut r)], &|g, x| {
                let y = lin.forward(g, x[0])?;
                let y = match act {
                    0 => g.relu(y),
                    1 => g.sigmoid(y),
                    _ => g.tanh(y),
                };
                project(g, y, &proj)
            });
        }
    }

    #[test]
    fn finite_differences_conv() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let conv = Conv2d::new(&mut p, "c", 2, 3, 5, 2, 2, &mut r);
        p.values[conv.b.0] = randn(&[3], &mut r);
        let (ho, wo) = conv.output_size(7, 9);
        let proj = randn(&[2, 3, ho, wo], &mut r);
        assert_grads(&p, &[randn(&[2, 2, 7, 9], &mut r)], &|g, x| {
            let y = conv.forward(g, x[0])?;
            project(g, y, &proj)
        });
    }

    #[test]
    fn finite_differences_batch_norm_both_modes() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let bn = BatchNorm2d::new(&mut p, "bn", 3);
        p.values[bn.gamma.0] = randn(&[3], &mut r);
        p.values[bn.beta.0] = randn(&[3], &mut r);
        p.buffers[bn.running_mean.0] = randn(&[3], &mut r);
        p.buffers[bn.running_var.0] = Tensor::new(vec![3], vec![0.5, 1.5, 2.0]);
        let proj = randn(&[4, 3, 2, 3], &mut r);
        for train in [true, false] {
            assert_grads(&p, &[randn(&[4, 3, 2, 3], &mut r)], &|g, x| {
                let y = bn.forward(g, x[0], train)?;
                project(g, y, &proj)
            });
        }
    }

    #[test]
    fn batch_norm_eval_is_pure_and_train_records_updates() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let bn = BatchNorm2d::new(&mut p, "bn", 2);
        let x = randn(&[3, 2, 2, 2], &mut r);
        let before = p.clone();
        let mut g = Graph::new(&p);
        let xv = g.input(x.clone());
        let a = bn.forward(&mut g, xv, false).unwrap();
        let b = bn.forward(&mut g, xv, false).unwrap();
        assert_eq!(g.value(a), g.value(b));
        assert!(g.buffer_updates().is_empty());
        let _ = bn.forward(&mut g, xv, true).unwrap();
        let ups = g.take_buffer_updates();
        assert_eq!(ups.len(), 2);
        drop(g);
        assert_eq!(p, before);
        // channel 0 mean over 12 values, momentum 0.1
        let m0: f64 = (0..3).flat_map(|b| (0..4).map(move |j| (b, j))).map(|(b, j)| x.data[b * 8 + j]).sum::<f64>() / 12.0;
        p.apply_buffer_updates(ups);
        assert!((p.buffer(bn.running_mean).data[0] - 0.1 * m0).abs() < 1e-12);
    }

    #[test]
    fn finite_differences_structural_ops() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let emb = Embedding::new(&mut p, "emb", 6, 4, &mut r);
        let proj = randn(&[5, 3], &mut r);
        let inputs = [randn(&[3, 4], &mut r), randn(&[2, 4], &mut r)];
        assert_grads(&p, &inputs, &|g, x| {
            let e = emb.forward(g, &[1, 4, 1])?;
            let m = g.mul(x[0], e)?;
            let sq = g.square(m);
            let d = g.sub(sq, e)?;
            let st = g.vstack(&[d, x[1]])?;
            let c = g.concat_cols(&[st, st])?;
            let s = g.slice_cols(c, 2, 3)?;
            let k = g.add_const(s, 0.3);
            let k = g.scale(k, -1.7);
            let rs = g.reshape(k, &[15])?;
            let rs = g.reshape(rs, &[5, 3])?;
            project(g, rs, &proj)
        });
        assert_grads(&p, &inputs, &|g, x| {
            let rows = g.slice_rows(x[0], 1, 2)?;
            let lsm = g.log_softmax(rows);
            let pk = g.pick(lsm, &[3, 0])?;
            let sm = g.softmax(x[1]);
            let ent = g.mul(sm, lsm)?;
            let a = g.mean(ent);
            let b = g.sum(pk);
            g.add(a, b)
        });
    }

    #[test]
    fn detach_blocks_gradient() {
        let p = NetworkParams::<f64>::new();
        let mut g = Graph::new(&p);
        let x = g.input_with_grad(Tensor::new(vec![2], vec![1.0, 2.0]));
        let d = g.detach(x);
        let y = g.mul(x, d).unwrap();
        let s = g.sum(y);
        // d/dx Σ x·stop(x) = stop(x)
        assert_eq!(g.backward(s).unwrap().wrt(x).unwrap().data, vec![1.0, 2.0]);
    }

    #[test]
    fn finite_differences_lstm_unrolled() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let cell = LstmCell::new(&mut p, "lstm", 3, 4, &mut r);
        let proj = randn(&[6, 4], &mut r);
        assert_grads(&p, &[randn(&[3, 2, 3], &mut r), randn(&[2, 4], &mut r)], &|g, x| {
            let (mut h, mut c) = (x[1], x[1]);
            let mut outs = vec![];
            for t in 0..3 {
                let xt = g.slice_rows(x[0], t, 1)?;
                let xt = g.reshape(xt, &[2, 3])?;
                (h, c) = cell.forward(g, xt, h, c)?;
                outs.push(h);
            }
            let y = g.vstack(&outs)?;
            project(g, y, &proj)
        });
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let a = Linear::new(&mut p, "a", 3, 3, &mut r);
        let b = Linear::new(&mut p, "b", 3, 1, &mut r);
        let mut g = Graph::new(&p);
        g.freeze(&b.params());
        let x = g.input(randn(&[2, 3], &mut r));
        let h = a.forward(&mut g, x).unwrap();
        let y = b.forward(&mut g, h).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap().param_grads(&g);
        assert!(grads.get(a.w).is_some());
        assert!(grads.get(b.w).is_none() && grads.get(b.b).is_none());
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        let mut p = NetworkParams::<f64>::new();
        let w = p.add("w", Tensor::new(vec![1, 1], vec![3.0]));
        let mut g = Graph::new(&p);
        let x = g.input(Tensor::new(vec![1, 1], vec![2.0]));
        let w1 = g.param(w);
        let y1 = g.linear(x, w1, None).unwrap();
        let w2 = g.param(w);
        let y2 = g.linear(y1, w2, None).unwrap();
        let s = g.sum(y2);
        // y = w²x ⇒ dy/dw = 2wx = 12
        assert_eq!(g.backward(s).unwrap().param_grads(&g).get(w).unwrap().data, vec![12.0]);
        let _ = kaiming_uniform::<f64, _>(&[2, 2], 2, &mut rng());
    }
}
