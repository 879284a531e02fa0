use std::sync::Arc;

use crate::autodiff::kernels;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::ssm_core::{self, ScanSaved, SelectiveScanParams};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters of one selective scan as tape variables.
///
/// `a_log` stores the state matrix as `a = -exp(a_log)`, keeping it negative.
#[derive(Debug, Clone, Copy)]
pub struct ScanVars {
    pub a_log: Var,
    pub w_delta: Var,
    pub b_delta: Var,
    pub w_b: Var,
    pub w_c: Var,
    pub d: Var,
}

/// Flat-index gather: `out.data[i] = x.data[index[i]]`.
#[derive(Debug, Clone)]
pub struct GatherIndex {
    pub src_len: usize,
    pub out_shape: Vec<usize>,
    pub index: Vec<usize>,
}

impl GatherIndex {
    /// Reorders the rows of a `[rows, width]` matrix: `out[r] = x[rows_order[r]]`.
    pub fn rows(rows_order: &[usize], src_rows: usize, width: usize) -> Self {
        let index = rows_order.iter().flat_map(|&r| r * width..(r + 1) * width).collect();
        Self { src_len: src_rows * width, out_shape: vec![rows_order.len(), width], index }
    }
}

/// Fixed sparse linear map over the rows of a `[rows, width]` matrix.
#[derive(Debug, Clone)]
pub struct ResampleMap {
    pub in_rows: usize,
    pub out_rows: usize,
    /// `taps[offsets[r]..offsets[r + 1]]` are the `(source row, weight)` pairs of output row `r`.
    pub offsets: Vec<usize>,
    pub taps: Vec<(usize, f64)>,
}

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    DepthwiseConv { x: Var, k: Var, rows: usize, cols: usize },
    Silu { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    Sum { x: Var },
    Concat { parts: Vec<Var> },
    Gather { x: Var, map: Arc<GatherIndex> },
    Resample { x: Var, map: Arc<ResampleMap> },
    SelectiveScan { x: Var, vars: ScanVars, params: Box<SelectiveScanParams>, saved: Box<ScanSaved> },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<f64>, labels: Arc<[usize]>, ignore: Option<usize>, count: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive applications in execution order for one reverse pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn expect_len(op: &'static str, what: &str, t: &Tensor, len: usize) -> Result<()> {
    if t.len() != len {
        return Err(Error::shape(op, format!("{what} has {} values, expected {len}", t.len())));
    }
    Ok(())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `y = x W^T + b` with `x: [n, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        const OP: &str = "linear";
        let (n, din) = self.value(x).dims2(OP)?;
        let (dout, win) = self.value(w).dims2(OP)?;
        if win != din {
            return Err(Error::shape(OP, format!("x is [{n}, {din}], W is [{dout}, {win}]")));
        }
        if let Some(b) = b {
            expect_len(OP, "bias", self.value(b), dout)?;
        }
        let y = kernels::linear_forward(
            self.value(x).data(),
            n,
            din,
            self.value(w).data(),
            dout,
            b.map(|b| self.value(b).data()),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(OP, Tensor::new(vec![n, dout], y)?, Op::Linear { x, w, b }, &inputs)
    }

    /// 3x3 depthwise convolution, zero padding 1, on a `[rows * cols, ch]` grid with kernel `[ch, 9]`.
    pub fn depthwise_conv2d(&mut self, x: Var, k: Var, rows: usize, cols: usize) -> Result<Var> {
        const OP: &str = "depthwise_conv2d";
        let (t, ch) = self.value(x).dims2(OP)?;
        if t != rows * cols {
            return Err(Error::shape(OP, format!("{t} tokens for a {rows}x{cols} grid")));
        }
        expect_len(OP, "kernel", self.value(k), ch * 9)?;
        let y = kernels::dwconv_forward(self.value(x).data(), self.value(k).data(), rows, cols, ch);
        self.push(OP, Tensor::new(vec![t, ch], y)?, Op::DepthwiseConv { x, k, rows, cols }, &[x, k])
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let y = Tensor::from_fn(xv.shape(), |i| {
            let v = xv.data()[i];
            v * ssm_core::sigmoid(v)
        });
        self.push("silu", y, Op::Silu { x }, &[x])
    }

    /// Normalizes the last axis of `[n, d]`, eps = 1e-5.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        const OP: &str = "layer_norm";
        let (n, d) = self.value(x).dims2(OP)?;
        expect_len(OP, "gamma", self.value(gamma), d)?;
        expect_len(OP, "beta", self.value(beta), d)?;
        let (y, xhat, rstd) =
            kernels::layer_norm_forward(self.value(x).data(), n, d, self.value(gamma).data(), self.value(beta).data());
        self.push(OP, Tensor::new(vec![n, d], y)?, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let y = Tensor::from_fn(av.shape(), |i| av.data()[i] + bv.data()[i]);
        self.push("add", y, Op::Add { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("multiply", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let y = Tensor::from_fn(av.shape(), |i| av.data()[i] * bv.data()[i]);
        self.push("multiply", y, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let xv = self.value(x);
        let y = Tensor::from_fn(xv.shape(), |i| xv.data()[i] * s);
        self.push("scale", y, Op::Scale { x, s }, &[x])
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(x).sum());
        self.push("sum", y, Op::Sum { x }, &[x])
    }

    /// Concatenates `[n, c_i]` matrices along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        const OP: &str = "concat";
        let first = parts.first().ok_or_else(|| Error::shape(OP, "no inputs"))?;
        let (n, _) = self.value(*first).dims2(OP)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pc) = self.value(p).dims2(OP)?;
            if pn != n {
                return Err(Error::shape(OP, format!("row counts {n} and {pn} differ")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut y = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                y.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push(OP, Tensor::new(vec![n, total], y)?, Op::Concat { parts: parts.to_vec() }, parts)
    }

    pub fn gather(&mut self, x: Var, map: Arc<GatherIndex>) -> Result<Var> {
        const OP: &str = "gather";
        let xv = self.value(x);
        if xv.len() != map.src_len {
            return Err(Error::shape(OP, format!("source has {} values, index expects {}", xv.len(), map.src_len)));
        }
        let data = map.index.iter().map(|&i| xv.data()[i]).collect();
        let y = Tensor::new(map.out_shape.clone(), data)?;
        self.push(OP, y, Op::Gather { x, map }, &[x])
    }

    pub fn resample(&mut self, x: Var, map: Arc<ResampleMap>) -> Result<Var> {
        const OP: &str = "resample";
        let (rows, w) = self.value(x).dims2(OP)?;
        if rows != map.in_rows {
            return Err(Error::shape(OP, format!("{rows} rows, map expects {}", map.in_rows)));
        }
        let xd = self.value(x).data();
        let mut y = vec![0.0; map.out_rows * w];
        for r in 0..map.out_rows {
            let dst = &mut y[r * w..(r + 1) * w];
            for &(src, wt) in &map.taps[map.offsets[r]..map.offsets[r + 1]] {
                for (d, s) in dst.iter_mut().zip(&xd[src * w..(src + 1) * w]) {
                    *d += wt * s;
                }
            }
        }
        let out_rows = map.out_rows;
        self.push(OP, Tensor::new(vec![out_rows, w], y)?, Op::Resample { x, map }, &[x])
    }

    /// Selective scan over `x: [len, channels]`; see [`ssm_core::selective_scan_forward`].
    pub fn selective_scan(&mut self, x: Var, vars: ScanVars) -> Result<Var> {
        const OP: &str = "selective_scan";
        let (len, ch) = self.value(x).dims2(OP)?;
        let (ach, state) = self.value(vars.a_log).dims2(OP)?;
        if ach != ch {
            return Err(Error::shape(OP, format!("x has {ch} channels, A has {ach}")));
        }
        let params = SelectiveScanParams {
            channels: ch,
            state,
            a: self.value(vars.a_log).data().iter().map(|v| -v.exp()).collect(),
            w_delta: self.value(vars.w_delta).data().to_vec(),
            b_delta: self.value(vars.b_delta).data().to_vec(),
            w_b: self.value(vars.w_b).data().to_vec(),
            w_c: self.value(vars.w_c).data().to_vec(),
            d: self.value(vars.d).data().to_vec(),
        };
        let (y, saved) = ssm_core::selective_scan_forward(self.value(x).data(), len, &params)?;
        let inputs = [x, vars.a_log, vars.w_delta, vars.b_delta, vars.w_b, vars.w_c, vars.d];
        let op = Op::SelectiveScan { x, vars, params: Box::new(params), saved: Box::new(saved) };
        self.push(OP, Tensor::new(vec![len, ch], y)?, op, &inputs)
    }

    /// Mean cross-entropy of `logits: [n, K]` against `labels`, skipping `ignore`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Arc<[usize]>, ignore: Option<usize>) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let (n, k) = self.value(logits).dims2(OP)?;
        if labels.len() != n {
            return Err(Error::shape(OP, format!("{n} rows of logits, {} labels", labels.len())));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        let mut count = 0;
        for r in 0..n {
            let row = &ld[r * k..(r + 1) * k];
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for (p, v) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *p = (v - m).exp() / z;
            }
            let lab = labels[r];
            if Some(lab) == ignore {
                continue;
            }
            if lab >= k {
                return Err(Error::ClassOutOfRange { class: lab, classes: k });
            }
            loss += z.ln() + m - row[lab];
            count += 1;
        }
        let loss = if count > 0 { loss / count as f64 } else { 0.0 };
        let op = Op::SoftmaxCrossEntropy { logits, probs, labels, ignore, count };
        self.push(OP, Tensor::scalar(loss), op, &[logits])
    }

    /// Reverse pass from a scalar `loss`. A tape supports exactly one reverse pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        let shape = self.value(loss).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        if !self.needs(loss) {
            return Err(Error::Detached);
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&shape, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            for (v, t) in self.input_grads(&node.op, &node.value, &g)? {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn input_grads(&self, op: &Op, out: &Tensor, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let mut res = Vec::new();
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, din) = self.value(*x).dims2("linear")?;
                let dout = out.shape()[1];
                if self.needs(*x) {
                    let dx = kernels::linear_backward_input(gd, n, dout, self.value(*w).data(), din);
                    res.push((*x, Tensor::new(vec![n, din], dx)?));
                }
                if self.needs(*w) {
                    let dw = kernels::linear_backward_weight(gd, n, dout, self.value(*x).data(), din);
                    res.push((*w, Tensor::new(vec![dout, din], dw)?));
                }
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    let mut db = vec![0.0; dout];
                    for row in gd.chunks_exact(dout) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    res.push((b, Tensor::new(self.value(b).shape().to_vec(), db)?));
                }
            }
            Op::DepthwiseConv { x, k, rows, cols } => {
                let ch = out.shape()[1];
                let (dx, dk) =
                    kernels::dwconv_backward(gd, self.value(*x).data(), self.value(*k).data(), *rows, *cols, ch);
                if self.needs(*x) {
                    res.push((*x, Tensor::new(self.value(*x).shape().to_vec(), dx)?));
                }
                if self.needs(*k) {
                    res.push((*k, Tensor::new(self.value(*k).shape().to_vec(), dk)?));
                }
            }
            Op::Silu { x } => {
                let xv = self.value(*x);
                let dx = Tensor::from_fn(xv.shape(), |i| {
                    let v = xv.data()[i];
                    let s = ssm_core::sigmoid(v);
                    gd[i] * s * (1.0 + v * (1.0 - s))
                });
                res.push((*x, dx));
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (n, d) = self.value(*x).dims2("layer_norm")?;
                let gam = self.value(*gamma).data();
                if self.needs(*x) {
                    let dx = kernels::layer_norm_backward_input(gd, n, d, gam, xhat, rstd);
                    res.push((*x, Tensor::new(vec![n, d], dx)?));
                }
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for (grow, xrow) in gd.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * xrow[j];
                            db[j] += grow[j];
                        }
                    }
                    res.push((*gamma, Tensor::new(vec![d], dg)?));
                    res.push((*beta, Tensor::new(vec![d], db)?));
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b].into_iter().filter(|v| self.needs(*v)) {
                    res.push((v, g.clone()));
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    res.push((*a, Tensor::from_fn(av.shape(), |i| gd[i] * bv.data()[i])));
                }
                if self.needs(*b) {
                    res.push((*b, Tensor::from_fn(bv.shape(), |i| gd[i] * av.data()[i])));
                }
            }
            Op::Scale { x, s } => {
                res.push((*x, Tensor::from_fn(g.shape(), |i| gd[i] * s)));
            }
            Op::Sum { x } => {
                res.push((*x, Tensor::full(self.value(*x).shape(), gd[0])));
            }
            Op::Concat { parts } => {
                let total = out.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let (n, w) = self.value(p).dims2("concat")?;
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(n * w);
                        for r in 0..n {
                            dp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        res.push((p, Tensor::new(vec![n, w], dp)?));
                    }
                    offset += w;
                }
            }
            Op::Gather { x, map } => {
                let mut dx = vec![0.0; map.src_len];
                for (&i, &v) in map.index.iter().zip(gd) {
                    dx[i] += v;
                }
                res.push((*x, Tensor::new(self.value(*x).shape().to_vec(), dx)?));
            }
            Op::Resample { x, map } => {
                let w = out.shape()[1];
                let mut dx = vec![0.0; map.in_rows * w];
                for r in 0..map.out_rows {
                    let src_g = &gd[r * w..(r + 1) * w];
                    for &(src, wt) in &map.taps[map.offsets[r]..map.offsets[r + 1]] {
                        for (d, s) in dx[src * w..(src + 1) * w].iter_mut().zip(src_g) {
                            *d += wt * s;
                        }
                    }
                }
                res.push((*x, Tensor::new(vec![map.in_rows, w], dx)?));
            }
            Op::SelectiveScan { x, vars, params, saved } => {
                let sg = ssm_core::selective_scan_backward(params, saved, gd)?;
                let da_log: Vec<f64> = sg.da.iter().zip(&params.a).map(|(g, a)| g * a).collect();
                let pairs = [
                    (*x, sg.dx),
                    (vars.a_log, da_log),
                    (vars.w_delta, sg.dw_delta),
                    (vars.b_delta, sg.db_delta),
                    (vars.w_b, sg.dw_b),
                    (vars.w_c, sg.dw_c),
                    (vars.d, sg.dd),
                ];
                for (v, data) in pairs {
                    if self.needs(v) {
                        res.push((v, Tensor::new(self.value(v).shape().to_vec(), data)?));
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels, ignore, count } => {
                let k = self.value(*logits).shape()[1];
                let mut dl = vec![0.0; probs.len()];
                if *count > 0 {
                    let s = gd[0] / *count as f64;
                    for (r, &lab) in labels.iter().enumerate() {
                        if Some(lab) == *ignore {
                            continue;
                        }
                        for j in 0..k {
                            let onehot = if j == lab { 1.0 } else { 0.0 };
                            dl[r * k + j] = s * (probs[r * k + j] - onehot);
                        }
                    }
                }
                res.push((*logits, Tensor::new(self.value(*logits).shape().to_vec(), dl)?));
            }
        }
        Ok(res)
    }
}
