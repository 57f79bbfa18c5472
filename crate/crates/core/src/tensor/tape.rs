use std::borrow::Cow;

use rand::Rng;

use super::kernels::{self, ConvDims};
use super::{shape_err, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Conv1d {
        x: Var,
        w: Var,
        pad_left: usize,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<u32>,
    },
    Reshape(Var),
    Mask {
        x: Var,
        mask: Vec<f32>,
    },
    TimeStep {
        x: Var,
        t: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    LstmCell {
        x: Var,
        state: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        /// Activated gates (i, f, g, o) per row, then tanh(c') per row.
        gates: Vec<f32>,
        tanh_c: Vec<f32>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Operation recorder. Leaves may borrow tensors (typically model parameters)
/// for the lifetime `'a`; every op result is owned by the tape.
///
/// Ops never modify their inputs.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` if `v` does not influence
    /// the loss or was not marked differentiable.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn grad_slot<'g>(grads: &'g mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'g mut [f32] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an owned leaf.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a borrowed leaf without copying it.
    pub fn borrowed(&mut self, value: &'a Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, w: Var) -> Result<Var, TensorError> {
        let (sa, sw) = (self.shape(a), self.shape(w));
        if sa.len() != 2 || sw.len() != 2 || sa[1] != sw[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                expected: "[m, k] x [k, n]".into(),
                actual: format!("{sa:?} x {sw:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sw[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.data(a), self.data(w), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, w), &[a, w]))
    }

    /// Adds `bias[c]` along axis 1 of a `[b, c, ...]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias);
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(TensorError::Shape {
                op: "add_bias",
                expected: format!("bias [{}]", sx.get(1).copied().unwrap_or(0)),
                actual: format!("x {sx:?}, bias {sb:?}"),
            });
        }
        let inner: usize = sx[2..].iter().product();
        let c = sx[1];
        let b = self.data(bias);
        let mut out = self.data(x).to_vec();
        for (j, chunk) in out.chunks_mut(inner).enumerate() {
            let bv = b[j % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        Ok(self.push(Tensor::new(sx, out)?, Op::AddBias(x, bias), &[x, bias]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                expected: format!("{:?}", self.shape(a)),
                actual: format!("{:?}", self.shape(b)),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out: Vec<f32> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out: Vec<f32> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let out: Vec<f32> = self.data(x).iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.shape(x).to_vec(), out).expect("same shape");
        self.push(t, Op::Scale(x, factor), &[x])
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f32 = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let out: Vec<f32> = self.data(x).iter().map(|&v| f(v)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), out).expect("same shape");
        self.push(t, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f32::tanh, Op::Tanh(x))
    }

    /// Stride-1 convolution (cross-correlation) with explicit zero padding.
    ///
    /// `x: [b, c_in, len]`, `w: [c_out, c_in, taps]` →
    /// `[b, c_out, len + pad_left + pad_right - taps + 1]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Var, TensorError> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || sw[2] > sx[2] + pad_left + pad_right {
            return Err(TensorError::Shape {
                op: "conv1d",
                expected: "x [b, c_in, len], w [c_out, c_in, taps <= padded len]".into(),
                actual: format!("x {sx:?}, w {sw:?}"),
            });
        }
        let d = ConvDims {
            batch: sx[0],
            c_in: sx[1],
            c_out: sw[0],
            len_in: sx[2],
            len_out: sx[2] + pad_left + pad_right + 1 - sw[2],
            taps: sw[2],
            pad_left,
        };
        let mut out = vec![0.0; d.batch * d.c_out * d.len_out];
        kernels::conv1d_forward(self.data(x), self.data(w), &mut out, &d);
        let t = Tensor::new(vec![d.batch, d.c_out, d.len_out], out)?;
        Ok(self.push(t, Op::Conv1d { x, w, pad_left }, &[x, w]))
    }

    /// Non-overlapping max pooling over the last axis of `[b, c, len]`; a
    /// trailing remainder shorter than `size` is dropped. Ties pick the first.
    pub fn max_pool1d(&mut self, x: Var, size: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || size == 0 || sx[2] < size {
            return Err(shape_err("max_pool1d", format!("[b, c, len >= {size}]"), &sx));
        }
        let (rows, len) = (sx[0] * sx[1], sx[2]);
        let out_len = len / size;
        let xd = self.data(x);
        let mut out = Vec::with_capacity(rows * out_len);
        let mut argmax = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let row = &xd[r * len..(r + 1) * len];
            for p in 0..out_len {
                let win = &row[p * size..(p + 1) * size];
                let mut best = 0;
                for (j, &v) in win.iter().enumerate() {
                    if v > win[best] {
                        best = j;
                    }
                }
                out.push(win[best]);
                argmax.push((r * len + p * size + best) as u32);
            }
        }
        let t = Tensor::new(vec![sx[0], sx[1], out_len], out)?;
        Ok(self.push(t, Op::MaxPool1d { x, argmax }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Flattens `[b, ...]` to `[b, rest]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x);
        let b = s.first().copied().unwrap_or(1);
        let rest: usize = s.iter().skip(1).product();
        self.reshape(x, &[b, rest])
    }

    /// Multiplies elementwise by a constant mask that receives no gradient.
    pub fn mask(&mut self, x: Var, mask: Vec<f32>) -> Result<Var, TensorError> {
        if mask.len() != self.value(x).len() {
            return Err(shape_err(
                "mask",
                format!("{} mask entries", self.value(x).len()),
                &[mask.len()],
            ));
        }
        let out: Vec<f32> = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(t, Op::Mask { x, mask }, &[x]))
    }

    /// Inverted dropout: zeroes each entry with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f32, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Invalid(format!("dropout rate {rate} not in [0, 1)")));
        }
        let keep = 1.0 - rate;
        let mask = (0..self.value(x).len())
            .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.mask(x, mask)
    }

    /// Column `t` of every row of a `[b, c, len]` tensor, as `[b, c]`.
    pub fn time_step(&mut self, x: Var, t: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || t >= sx[2] {
            return Err(shape_err("time_step", format!("[b, c, len > {t}]"), &sx));
        }
        let xd = self.data(x);
        let out: Vec<f32> = (0..sx[0] * sx[1]).map(|r| xd[r * sx[2] + t]).collect();
        let tt = Tensor::new(vec![sx[0], sx[1]], out)?;
        Ok(self.push(tt, Op::TimeStep { x, t }, &[x]))
    }

    /// Columns `start..start + len` of a `[b, n]` tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || start + len > sx[1] {
            return Err(shape_err("slice_cols", format!("[b, n >= {}]", start + len), &sx));
        }
        let xd = self.data(x);
        let mut out = Vec::with_capacity(sx[0] * len);
        for r in 0..sx[0] {
            out.extend_from_slice(&xd[r * sx[1] + start..r * sx[1] + start + len]);
        }
        let t = Tensor::new(vec![sx[0], len], out)?;
        Ok(self.push(t, Op::SliceCols { x, start }, &[x]))
    }

    /// One LSTM step with gate order (input, forget, candidate, output).
    ///
    /// `x: [b, f]`, `state: [b, 2h]` holding `[h | c]`, `w_ih: [f, 4h]`,
    /// `w_hh: [h, 4h]`, `bias: [4h]`. Returns the next `[h' | c']`.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        state: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
    ) -> Result<Var, TensorError> {
        let (sx, ss, si, sh, sb) = (
            self.shape(x),
            self.shape(state),
            self.shape(w_ih),
            self.shape(w_hh),
            self.shape(bias),
        );
        let ok = sx.len() == 2
            && ss.len() == 2
            && si.len() == 2
            && sh.len() == 2
            && sb.len() == 1
            && ss[0] == sx[0]
            && ss[1] % 2 == 0
            && si[0] == sx[1]
            && sh[0] * 2 == ss[1]
            && si[1] == 4 * sh[0]
            && sh[1] == 4 * sh[0]
            && sb[0] == 4 * sh[0];
        if !ok {
            return Err(TensorError::Shape {
                op: "lstm_cell",
                expected: "x [b, f], state [b, 2h], w_ih [f, 4h], w_hh [h, 4h], bias [4h]".into(),
                actual: format!("x {sx:?}, state {ss:?}, w_ih {si:?}, w_hh {sh:?}, bias {sb:?}"),
            });
        }
        let (b, f, h) = (sx[0], sx[1], sh[0]);
        let g4 = 4 * h;
        let (xd, sd) = (self.data(x), self.data(state));
        let (wi, wh, bd) = (self.data(w_ih), self.data(w_hh), self.data(bias));
        let mut gates = vec![0.0f32; b * g4];
        for r in 0..b {
            let z = &mut gates[r * g4..(r + 1) * g4];
            z.copy_from_slice(bd);
            for (k, &xv) in xd[r * f..(r + 1) * f].iter().enumerate() {
                if xv != 0.0 {
                    kernels::axpy(xv, &wi[k * g4..(k + 1) * g4], z);
                }
            }
            for (k, &hv) in sd[r * 2 * h..r * 2 * h + h].iter().enumerate() {
                if hv != 0.0 {
                    kernels::axpy(hv, &wh[k * g4..(k + 1) * g4], z);
                }
            }
            for v in &mut z[..2 * h] {
                *v = kernels::sigmoid(*v);
            }
            for v in &mut z[2 * h..3 * h] {
                *v = v.tanh();
            }
            for v in &mut z[3 * h..] {
                *v = kernels::sigmoid(*v);
            }
        }
        let mut out = vec![0.0f32; b * 2 * h];
        let mut tanh_c = vec![0.0f32; b * h];
        for r in 0..b {
            let z = &gates[r * g4..(r + 1) * g4];
            let c_prev = &sd[r * 2 * h + h..(r + 1) * 2 * h];
            for j in 0..h {
                let c = z[h + j] * c_prev[j] + z[j] * z[2 * h + j];
                let tc = c.tanh();
                out[r * 2 * h + h + j] = c;
                out[r * 2 * h + j] = z[3 * h + j] * tc;
                tanh_c[r * h + j] = tc;
            }
        }
        let needs = [x, state, w_ih, w_hh, bias]
            .iter()
            .any(|v| self.nodes[v.0].needs_grad);
        let (gates, tanh_c) = if needs { (gates, tanh_c) } else { (Vec::new(), Vec::new()) };
        let t = Tensor::new(vec![b, 2 * h], out)?;
        Ok(self.push(
            t,
            Op::LstmCell {
                x,
                state,
                w_ih,
                w_hh,
                bias,
                gates,
                tanh_c,
            },
            &[x, state, w_ih, w_hh, bias],
        ))
    }

    /// Runs an LSTM over every time step of `x: [b, f, len]` from a zero state
    /// and returns the final state `[b, 2h]`.
    pub fn sequence_lstm(
        &mut self,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
    ) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        let sh = self.shape(w_hh).to_vec();
        if sx.len() != 3 || sh.len() != 2 {
            return Err(shape_err("sequence_lstm", "x [b, f, len], w_hh [h, 4h]", &sx));
        }
        let mut state = self.leaf(Tensor::zeros(&[sx[0], 2 * sh[0]]), false);
        for t in 0..sx[2] {
            let xt = self.time_step(x, t)?;
            state = self.lstm_cell(xt, state, w_ih, w_hh, bias)?;
        }
        Ok(state)
    }

    /// Row-wise softmax of `[b, k]`.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(shape_err("softmax", "[b, k]", &sx));
        }
        let out = softmax_rows(self.data(x), sx[1]);
        let t = Tensor::new(sx, out)?;
        Ok(self.push(t, Op::Softmax(x), &[x]))
    }

    /// Mean cross-entropy of `[b, k]` logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let sx = self.shape(logits).to_vec();
        if sx.len() != 2 || sx[0] != labels.len() || sx[0] == 0 {
            return Err(shape_err(
                "cross_entropy",
                format!("[{}, k] logits", labels.len()),
                &sx,
            ));
        }
        let k = sx[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::Label {
                label: bad,
                classes: k,
            });
        }
        let z = self.data(logits);
        let mut loss = 0.0f64;
        for (r, &y) in labels.iter().enumerate() {
            let row = &z[r * k..(r + 1) * k];
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f32>().ln();
            loss += (lse - row[y]) as f64;
        }
        let probs = softmax_rows(z, k);
        let value = (loss / labels.len() as f64) as f32;
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a scalar loss (seed gradient 1).
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let v = self.value(loss);
        if !v.is_scalar() {
            return Err(TensorError::NotScalar(v.shape().to_vec()));
        }
        if !v.all_finite() {
            return Err(TensorError::NonFinite("loss".into()));
        }
        self.backward_with_seed(loss, Tensor::full(v.shape(), 1.0))
    }

    /// Reverse pass from an arbitrary node with an explicit upstream gradient,
    /// i.e. gradients of `Σ seed ⊙ value(root)`.
    pub fn backward_with_seed(&self, root: Var, seed: Tensor) -> Result<Gradients, TensorError> {
        if seed.shape() != self.shape(root) {
            return Err(shape_err(
                "backward",
                format!("seed shaped like {:?}", self.shape(root)),
                seed.shape(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, w) => {
                let (sa, sw) = (self.shape(*a), self.shape(*w));
                let (m, k, n) = (sa[0], sa[1], sw[1]);
                if self.wants(*a) {
                    let da = grad_slot(grads, *a, sa);
                    kernels::matmul_grad_a(gd, self.data(*w), da, m, k, n);
                }
                if self.wants(*w) {
                    let dw = grad_slot(grads, *w, sw);
                    kernels::matmul_grad_w(self.data(*a), gd, dw, m, k, n);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    kernels::axpy(1.0, gd, grad_slot(grads, *x, self.shape(*x)));
                }
                if self.wants(*b) {
                    let sx = self.shape(*x);
                    let c = sx[1];
                    let inner: usize = sx[2..].iter().product();
                    let db = grad_slot(grads, *b, self.shape(*b));
                    for (j, chunk) in gd.chunks(inner).enumerate() {
                        db[j % c] += chunk.iter().sum::<f32>();
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        kernels::axpy(1.0, gd, grad_slot(grads, *v, self.shape(*v)));
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let other = self.data(*b);
                    let da = grad_slot(grads, *a, self.shape(*a));
                    for ((d, &gv), &o) in da.iter_mut().zip(gd).zip(other) {
                        *d += gv * o;
                    }
                }
                if self.wants(*b) {
                    let other = self.data(*a);
                    let db = grad_slot(grads, *b, self.shape(*b));
                    for ((d, &gv), &o) in db.iter_mut().zip(gd).zip(other) {
                        *d += gv * o;
                    }
                }
            }
            Op::Scale(x, f) => {
                kernels::axpy(*f, gd, grad_slot(grads, *x, self.shape(*x)));
            }
            Op::Sum(x) => {
                let gv = gd[0];
                grad_slot(grads, *x, self.shape(*x)).iter_mut().for_each(|d| *d += gv);
            }
            Op::Relu(x) => {
                let xd = self.data(*x);
                let dx = grad_slot(grads, *x, self.shape(*x));
                for ((d, &gv), &xv) in dx.iter_mut().zip(gd).zip(xd) {
                    if xv > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let dx = grad_slot(grads, *x, self.shape(*x));
                for ((d, &gv), &y) in dx.iter_mut().zip(gd).zip(out.data()) {
                    *d += gv * y * (1.0 - y);
                }
            }
            Op::Tanh(x) => {
                let dx = grad_slot(grads, *x, self.shape(*x));
                for ((d, &gv), &y) in dx.iter_mut().zip(gd).zip(out.data()) {
                    *d += gv * (1.0 - y * y);
                }
            }
            Op::Conv1d { x, w, pad_left } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let d = ConvDims {
                    batch: sx[0],
                    c_in: sx[1],
                    c_out: sw[0],
                    len_in: sx[2],
                    len_out: out.shape()[2],
                    taps: sw[2],
                    pad_left: *pad_left,
                };
                let (wx, ww) = (self.wants(*x), self.wants(*w));
                let mut dx = wx.then(|| grads[x.0].take().unwrap_or_else(|| Tensor::zeros(sx)));
                let mut dw = ww.then(|| grads[w.0].take().unwrap_or_else(|| Tensor::zeros(sw)));
                kernels::conv1d_backward(
                    self.data(*x),
                    self.data(*w),
                    gd,
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    &d,
                );
                if let Some(t) = dx {
                    grads[x.0] = Some(t);
                }
                if let Some(t) = dw {
                    grads[w.0] = Some(t);
                }
            }
            Op::MaxPool1d { x, argmax } => {
                let dx = grad_slot(grads, *x, self.shape(*x));
                for (&gv, &src) in gd.iter().zip(argmax) {
                    dx[src as usize] += gv;
                }
            }
            Op::Reshape(x) => {
                kernels::axpy(1.0, gd, grad_slot(grads, *x, self.shape(*x)));
            }
            Op::Mask { x, mask } => {
                let dx = grad_slot(grads, *x, self.shape(*x));
                for ((d, &gv), &m) in dx.iter_mut().zip(gd).zip(mask) {
                    *d += gv * m;
                }
            }
            Op::TimeStep { x, t } => {
                let len = self.shape(*x)[2];
                let dx = grad_slot(grads, *x, self.shape(*x));
                for (r, &gv) in gd.iter().enumerate() {
                    dx[r * len + t] += gv;
                }
            }
            Op::SliceCols { x, start } => {
                let n = self.shape(*x)[1];
                let len = out.shape()[1];
                let dx = grad_slot(grads, *x, self.shape(*x));
                for (r, grow) in gd.chunks(len).enumerate() {
                    kernels::axpy(1.0, grow, &mut dx[r * n + start..r * n + start + len]);
                }
            }
            Op::LstmCell {
                x,
                state,
                w_ih,
                w_hh,
                bias,
                gates,
                tanh_c,
            } => self.lstm_backward(
                [*x, *state, *w_ih, *w_hh, *bias],
                gates,
                tanh_c,
                gd,
                grads,
            ),
            Op::Softmax(x) => {
                let k = out.shape()[1];
                let dx = grad_slot(grads, *x, self.shape(*x));
                for ((drow, grow), yrow) in dx.chunks_mut(k).zip(gd.chunks(k)).zip(out.data().chunks(k)) {
                    let s: f32 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for ((d, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += y * (gv - s);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let scale = gd[0] / labels.len() as f32;
                let dz = grad_slot(grads, *logits, self.shape(*logits));
                for (r, &y) in labels.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == y { 1.0 } else { 0.0 };
                        dz[r * k + j] += scale * (probs[r * k + j] - onehot);
                    }
                }
            }
        }
    }

    fn lstm_backward(
        &self,
        [x, state, w_ih, w_hh, _bias]: [Var; 5],
        gates: &[f32],
        tanh_c: &[f32],
        gd: &[f32],
        grads: &mut [Option<Tensor>],
    ) {
        let bias = _bias;
        let (b, f) = (self.shape(x)[0], self.shape(x)[1]);
        let h = self.shape(w_hh)[0];
        let g4 = 4 * h;
        let sd = self.data(state);
        // dz per row, pre-activation gate gradients.
        let mut dz = vec![0.0f32; b * g4];
        let mut dc_prev = vec![0.0f32; b * h];
        for r in 0..b {
            let z = &gates[r * g4..(r + 1) * g4];
            let dh = &gd[r * 2 * h..r * 2 * h + h];
            let dc = &gd[r * 2 * h + h..(r + 1) * 2 * h];
            let c_prev = &sd[r * 2 * h + h..(r + 1) * 2 * h];
            let dzr = &mut dz[r * g4..(r + 1) * g4];
            for j in 0..h {
                let (i_g, f_g, c_g, o_g) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
                let tc = tanh_c[r * h + j];
                let dct = dc[j] + dh[j] * o_g * (1.0 - tc * tc);
                dzr[j] = dct * c_g * i_g * (1.0 - i_g);
                dzr[h + j] = dct * c_prev[j] * f_g * (1.0 - f_g);
                dzr[2 * h + j] = dct * i_g * (1.0 - c_g * c_g);
                dzr[3 * h + j] = dh[j] * tc * o_g * (1.0 - o_g);
                dc_prev[r * h + j] = dct * f_g;
            }
        }
        if self.wants(state) {
            let wh = self.data(w_hh);
            let ds = grad_slot(grads, state, self.shape(state));
            for r in 0..b {
                let dzr = &dz[r * g4..(r + 1) * g4];
                for k in 0..h {
                    ds[r * 2 * h + k] += kernels::dot(dzr, &wh[k * g4..(k + 1) * g4]);
                }
                kernels::axpy(1.0, &dc_prev[r * h..(r + 1) * h], &mut ds[r * 2 * h + h..(r + 1) * 2 * h]);
            }
        }
        if self.wants(x) {
            let dx = grad_slot(grads, x, self.shape(x));
            kernels::matmul_grad_a(&dz, self.data(w_ih), dx, b, f, g4);
        }
        if self.wants(w_ih) {
            let dw = grad_slot(grads, w_ih, self.shape(w_ih));
            kernels::matmul_grad_w(self.data(x), &dz, dw, b, f, g4);
        }
        if self.wants(w_hh) {
            let dw = grad_slot(grads, w_hh, self.shape(w_hh));
            for r in 0..b {
                let hrow = &sd[r * 2 * h..r * 2 * h + h];
                let dzr = &dz[r * g4..(r + 1) * g4];
                for (k, &hv) in hrow.iter().enumerate() {
                    if hv != 0.0 {
                        kernels::axpy(hv, dzr, &mut dw[k * g4..(k + 1) * g4]);
                    }
                }
            }
        }
        if self.wants(bias) {
            let db = grad_slot(grads, bias, self.shape(bias));
            for row in dz.chunks(g4) {
                kernels::axpy(1.0, row, db);
            }
        }
    }
}

/// Numerically stable row-wise softmax of a flat `[rows, k]` buffer.
pub(crate) fn softmax_rows(z: &[f32], k: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(z.len());
    for row in z.chunks(k) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let start = out.len();
        let mut s = 0.0f32;
        for &v in row {
            let e = (v - m).exp();
            s += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::from_slice(shape, data).unwrap()
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]), false);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[0.0, 0.0]), false);
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut tape = Tape::new();
        let data: Vec<f32> = (0..10).map(|i| i as f32 - 3.0).collect();
        let x = tape.leaf(t(&[1, 1, 10], &data), false);
        let w = tape.leaf(t(&[1, 1, 1], &[1.0]), false);
        let y = tape.conv1d(x, w, 0, 0).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn square_has_derivative_six_at_three() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
        assert_eq!(g.get(y).unwrap().data(), &[1.0]);
    }

    #[test]
    fn relu_subgradient_is_zero_for_negative_input() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0), true);
        let y = tape.relu(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn backward_on_non_scalar_is_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let b = tape.leaf(Tensor::zeros(&[4, 5]), false);
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        assert!(err.to_string().contains("[2, 3]"), "{err}");
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(&[3, 11]), false);
        let l = tape.cross_entropy(z, &[0, 5, 10]).unwrap();
        assert!((tape.value(l).data()[0] - (11f32).ln()).abs() < 1e-5);
        assert!(matches!(
            tape.cross_entropy(z, &[0, 5, 11]),
            Err(TensorError::Label { label: 11, .. })
        ));
    }

    #[test]
    fn zero_lstm_gives_zero_hidden_state() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let s = tape.leaf(Tensor::zeros(&[2, 8]), false);
        let wi = tape.leaf(Tensor::zeros(&[3, 16]), false);
        let wh = tape.leaf(Tensor::zeros(&[4, 16]), false);
        let b = tape.leaf(Tensor::zeros(&[16]), false);
        let out = tape.lstm_cell(x, s, wi, wh, b).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_accumulates_over_fan_out() {
        // y = x*x + x  -> dy/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0), true);
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn non_differentiable_leaves_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[1.0, 2.0]), false);
        let w = tape.leaf(t(&[2, 1], &[3.0, 4.0]), true);
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_first_max() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 5], &[1.0, 3.0, 3.0, 2.0, 9.0]), true);
        let y = tape.max_pool1d(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 3.0]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 0.0]);
    }
}
