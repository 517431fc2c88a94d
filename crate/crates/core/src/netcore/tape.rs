//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive appends one node holding its forward value and whatever it
//! needs for the backward pass. Nodes only refer to earlier nodes, so walking
//! the tape from the end back to the start is a valid reverse topological order.

use crate::error::{Error, Result};
use crate::netcore::Tensor;

/// Clamp applied to probabilities before taking the log in cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Scaling factor of the gradient reversal node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrlConfig {
    lambda: f64,
}

impl GrlConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "gradient reversal lambda must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Output nonlinearity of a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

/// Node handles of one GRU cell's parameters.
///
/// Input weights are `D×H`, recurrent weights `H×H`, biases `H`.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_update: NodeId,
    pub u_update: NodeId,
    pub b_update: NodeId,
    pub w_reset: NodeId,
    pub u_reset: NodeId,
    pub b_reset: NodeId,
    pub w_cand: NodeId,
    pub u_cand: NodeId,
    pub b_cand: NodeId,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Identity(NodeId),
    GradReverse {
        x: NodeId,
        lambda: f64,
    },
    Conv1d {
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu(NodeId),
    Softmax(NodeId),
    GruStep {
        h: NodeId,
        x: NodeId,
        p: GruParams,
        update: Vec<f64>,
        reset: Vec<f64>,
        cand: Vec<f64>,
    },
    Row {
        x: NodeId,
        index: usize,
    },
    Stack(Vec<NodeId>),
    Concat(Vec<NodeId>),
    CrossEntropy {
        probs: NodeId,
        target: usize,
        weight: f64,
    },
    Sum(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`, or `None` when the node does
    /// not influence the loss or was recorded as a constant.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Vec<f64>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `out[e] += Σ_d x[d] · w[d, e]` for a row-major `D×E` matrix.
fn vec_mat_acc(x: &[f64], w: &[f64], out: &mut [f64]) {
    let e = out.len();
    for (d, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let row = &w[d * e..(d + 1) * e];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xv * wv;
        }
    }
}

/// `out[d] += Σ_e w[d, e] · g[e]`.
fn mat_vec_t_acc(w: &[f64], g: &[f64], out: &mut [f64]) {
    let e = g.len();
    for (d, o) in out.iter_mut().enumerate() {
        let row = &w[d * e..(d + 1) * e];
        *o += row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[d, e] += x[d] · g[e]`.
fn outer_acc(x: &[f64], g: &[f64], out: &mut [f64]) {
    let e = g.len();
    for (d, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let row = &mut out[d * e..(d + 1) * e];
        for (o, &gv) in row.iter_mut().zip(g) {
            *o += xv * gv;
        }
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Differentiable leaf (a learnable parameter).
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf (input data, frozen weights).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn identity(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).clone();
        let ng = self.needs(x);
        self.push(v, Op::Identity(x), ng, "identity")
    }

    /// Identity on the forward pass; multiplies incoming gradients by `-λ`.
    pub fn grad_reverse(&mut self, x: NodeId, cfg: GrlConfig) -> Result<NodeId> {
        let v = self.value(x).clone();
        let ng = self.needs(x);
        self.push(
            v,
            Op::GradReverse {
                x,
                lambda: cfg.lambda(),
            },
            ng,
            "grad_reverse",
        )
    }

    /// Valid, stride-1 cross-correlation of a `T×Din` sequence with a
    /// `K×Din×Dout` kernel plus bias. Output is `(T-K+1)×Dout`.
    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let kv = self.value(kernel);
        let bv = self.value(bias);
        if xv.rank() != 2 || kv.rank() != 3 || bv.rank() != 1 {
            return Err(Error::shape(
                "conv1d",
                format!("x {:?}, kernel {:?}, bias {:?}", xv.shape(), kv.shape(), bv.shape()),
            ));
        }
        let (t, din) = (xv.shape()[0], xv.shape()[1]);
        let (k, kdin, dout) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
        if kdin != din || bv.len() != dout {
            return Err(Error::shape(
                "conv1d",
                format!("x {:?}, kernel {:?}, bias {:?}", xv.shape(), kv.shape(), bv.shape()),
            ));
        }
        if t < k {
            return Err(Error::SequenceTooShort { len: t, required: k });
        }
        let tout = t - k + 1;
        let (xd, kd, bd) = (xv.data(), kv.data(), bv.data());
        let mut out = vec![0.0; tout * dout];
        for (ti, orow) in out.chunks_mut(dout).enumerate() {
            orow.copy_from_slice(bd);
            for j in 0..k {
                let xrow = &xd[(ti + j) * din..(ti + j + 1) * din];
                let kslab = &kd[j * din * dout..(j + 1) * din * dout];
                vec_mat_acc(xrow, kslab, orow);
            }
        }
        let ng = self.needs(x) || self.needs(kernel) || self.needs(bias);
        let value = Tensor::new(vec![tout, dout], out)?;
        self.push(value, Op::Conv1d { x, kernel, bias }, ng, "conv1d")
    }

    /// Per-channel max over non-overlapping windows; the final window may be partial.
    pub fn maxpool1d(&mut self, x: NodeId, width: usize) -> Result<NodeId> {
        if width == 0 {
            return Err(Error::Config("max-pool width must be >= 1".into()));
        }
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::shape("maxpool1d", format!("expected T×D, got {:?}", xv.shape())));
        }
        let (t, d) = (xv.shape()[0], xv.shape()[1]);
        let tout = t.div_ceil(width);
        let xd = xv.data();
        let mut out = Vec::with_capacity(tout * d);
        let mut argmax = Vec::with_capacity(tout * d);
        for w in 0..tout {
            let start = w * width;
            let end = (start + width).min(t);
            for c in 0..d {
                let mut best = start * d + c;
                for r in start + 1..end {
                    let idx = r * d + c;
                    // strict comparison keeps the first maximum
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        let ng = self.needs(x);
        let value = Tensor::new(vec![tout, d], out)?;
        self.push(value, Op::MaxPool { x, argmax }, ng, "maxpool1d")
    }

    /// `x·W + b` for a vector `x` of length D and a `D×E` matrix.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 1 || wv.rank() != 2 || wv.shape()[0] != xv.len() || bv.len() != wv.shape()[1] {
            return Err(Error::shape(
                "affine",
                format!("x {:?}, w {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let mut out = bv.data().to_vec();
        vec_mat_acc(xv.data(), wv.data(), &mut out);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Tensor::vector(out), Op::Affine { x, w, b }, ng, "affine")
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(|a| a.max(0.0));
        let ng = self.needs(x);
        self.push(v, Op::Relu(x), ng, "relu")
    }

    /// Numerically stable softmax over a vector.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 1 {
            return Err(Error::shape("softmax", format!("expected vector, got {:?}", xv.shape())));
        }
        let m = xv.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.data().iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        let out = exps.into_iter().map(|e| e / s).collect();
        let ng = self.needs(x);
        self.push(Tensor::vector(out), Op::Softmax(x), ng, "softmax")
    }

    /// Affine map followed by `activation`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId, activation: Activation) -> Result<NodeId> {
        let a = self.affine(x, w, b)?;
        match activation {
            Activation::None => Ok(a),
            Activation::Relu => self.relu(a),
            Activation::Softmax => self.softmax(a),
        }
    }

    /// One GRU recurrence with `h' = (1-z)⊙h + z⊙h̃`.
    pub fn gru_cell_step(&mut self, h: NodeId, x: NodeId, p: &GruParams) -> Result<NodeId> {
        let hv = self.value(h).data();
        let xv = self.value(x).data();
        let hid = hv.len();
        let din = xv.len();
        let check = |id: NodeId, shape: &[usize]| -> Result<()> {
            if self.value(id).shape() != shape {
                return Err(Error::shape(
                    "gru_cell_step",
                    format!("parameter shape {:?}, expected {shape:?}", self.value(id).shape()),
                ));
            }
            Ok(())
        };
        for w in [p.w_update, p.w_reset, p.w_cand] {
            check(w, &[din, hid])?;
        }
        for u in [p.u_update, p.u_reset, p.u_cand] {
            check(u, &[hid, hid])?;
        }
        for b in [p.b_update, p.b_reset, p.b_cand] {
            check(b, &[hid])?;
        }
        let gate = |w: NodeId, u: NodeId, b: NodeId, hin: &[f64]| -> Vec<f64> {
            let mut a = self.value(b).data().to_vec();
            vec_mat_acc(xv, self.value(w).data(), &mut a);
            vec_mat_acc(hin, self.value(u).data(), &mut a);
            a
        };
        let update: Vec<f64> = gate(p.w_update, p.u_update, p.b_update, hv)
            .into_iter()
            .map(sigmoid)
            .collect();
        let reset: Vec<f64> = gate(p.w_reset, p.u_reset, p.b_reset, hv)
            .into_iter()
            .map(sigmoid)
            .collect();
        let rh: Vec<f64> = reset.iter().zip(hv).map(|(r, h)| r * h).collect();
        let cand: Vec<f64> = gate(p.w_cand, p.u_cand, p.b_cand, &rh)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let out: Vec<f64> = (0..hid)
            .map(|i| (1.0 - update[i]) * hv[i] + update[i] * cand[i])
            .collect();
        let ng = [
            h, x, p.w_update, p.u_update, p.b_update, p.w_reset, p.u_reset, p.b_reset, p.w_cand,
            p.u_cand, p.b_cand,
        ]
        .iter()
        .any(|&id| self.needs(id));
        self.push(
            Tensor::vector(out),
            Op::GruStep {
                h,
                x,
                p: *p,
                update,
                reset,
                cand,
            },
            ng,
            "gru_cell_step",
        )
    }

    /// Runs a GRU over every row of a `T×D` sequence starting from `h₀ = 0`.
    /// Returns the hidden state after each step.
    pub fn gru_sequence(&mut self, seq: NodeId, p: &GruParams) -> Result<Vec<NodeId>> {
        let t = self.value(seq).rows();
        let hid = self.value(p.b_update).len();
        let mut h = self.constant(Tensor::zeros(&[hid]));
        let mut states = Vec::with_capacity(t);
        for i in 0..t {
            let x = self.row(seq, i)?;
            h = self.gru_cell_step(h, x, p)?;
            states.push(h);
        }
        Ok(states)
    }

    pub fn row(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::shape("row", format!("expected matrix, got {:?}", xv.shape())));
        }
        if index >= xv.rows() {
            return Err(Error::IndexOutOfRange {
                index,
                len: xv.rows(),
            });
        }
        let v = Tensor::vector(xv.row(index).to_vec());
        let ng = self.needs(x);
        self.push(v, Op::Row { x, index }, ng, "row")
    }

    /// Stacks equally sized vectors into a matrix.
    pub fn stack(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = rows.first().ok_or(Error::EmptyInput("stack"))?;
        let d = self.value(*first).len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let v = self.value(r);
            if v.rank() != 1 || v.len() != d {
                return Err(Error::shape("stack", format!("row shape {:?}", v.shape())));
            }
            data.extend_from_slice(v.data());
        }
        let ng = rows.iter().any(|&r| self.needs(r));
        let value = Tensor::new(vec![rows.len(), d], data)?;
        self.push(value, Op::Stack(rows.to_vec()), ng, "stack")
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 {
                return Err(Error::shape("concat", format!("part shape {:?}", v.shape())));
            }
            data.extend_from_slice(v.data());
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), ng, "concat")
    }

    /// `-weight · ln(max(probs[target], ε))`.
    pub fn weighted_cross_entropy(&mut self, probs: NodeId, target: usize, weight: f64) -> Result<NodeId> {
        let pv = self.value(probs);
        if pv.rank() != 1 {
            return Err(Error::shape(
                "weighted_cross_entropy",
                format!("expected vector, got {:?}", pv.shape()),
            ));
        }
        if target >= pv.len() {
            return Err(Error::IndexOutOfRange {
                index: target,
                len: pv.len(),
            });
        }
        if !(weight > 0.0) {
            return Err(Error::Config(format!("class weight must be > 0, got {weight}")));
        }
        let p = pv.data()[target].max(LOG_CLAMP);
        let loss = -weight * p.ln();
        let ng = self.needs(probs);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                target,
                weight,
            },
            ng,
            "weighted_cross_entropy",
        )
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng, "sum")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng, "add")
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let v = self.value(x).map(|a| a * factor);
        let ng = self.needs(x);
        self.push(v, Op::Scale(x, factor), ng, "scale")
    }

    /// Reverse-mode accumulation from a scalar `loss`. A tape can be walked
    /// backward once.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        self.consumed = true;
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        // Adds `src` into the gradient slot of `id` when it needs one.
        fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId) -> Option<&'g mut Vec<f64>> {
            let node = &nodes[id.0];
            if !node.needs_grad {
                return None;
            }
            Some(grads[id.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                grads[i] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Identity(x) => {
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        add_assign(dx, &g);
                    }
                }
                Op::GradReverse { x, lambda } => {
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for (d, gv) in dx.iter_mut().zip(&g) {
                            *d += -lambda * gv;
                        }
                    }
                }
                Op::Conv1d { x, kernel, bias } => {
                    let xv = &nodes[x.0].value;
                    let kv = &nodes[kernel.0].value;
                    let (din, k, dout) = (xv.cols(), kv.shape()[0], kv.shape()[2]);
                    let tout = node.value.rows();
                    if let Some(db) = acc(&mut grads, nodes, *bias) {
                        for grow in g.chunks(dout) {
                            add_assign(db, grow);
                        }
                    }
                    if let Some(dk) = acc(&mut grads, nodes, *kernel) {
                        for ti in 0..tout {
                            let grow = &g[ti * dout..(ti + 1) * dout];
                            for j in 0..k {
                                let xrow = xv.row(ti + j);
                                outer_acc(xrow, grow, &mut dk[j * din * dout..(j + 1) * din * dout]);
                            }
                        }
                    }
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        let kd = kv.data();
                        for ti in 0..tout {
                            let grow = &g[ti * dout..(ti + 1) * dout];
                            for j in 0..k {
                                let dxrow = &mut dx[(ti + j) * din..(ti + j + 1) * din];
                                mat_vec_t_acc(&kd[j * din * dout..(j + 1) * din * dout], grow, dxrow);
                            }
                        }
                    }
                }
                Op::MaxPool { x, argmax } => {
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for (&src, gv) in argmax.iter().zip(&g) {
                            dx[src] += gv;
                        }
                    }
                }
                Op::Affine { x, w, b } => {
                    let xv = nodes[x.0].value.data();
                    let wv = nodes[w.0].value.data();
                    if let Some(db) = acc(&mut grads, nodes, *b) {
                        add_assign(db, &g);
                    }
                    if let Some(dw) = acc(&mut grads, nodes, *w) {
                        outer_acc(xv, &g, dw);
                    }
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        mat_vec_t_acc(wv, &g, dx);
                    }
                }
                Op::Relu(x) => {
                    let xv = nodes[x.0].value.data();
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for ((d, &xi), gv) in dx.iter_mut().zip(xv).zip(&g) {
                            if xi > 0.0 {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let dot: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for ((d, &yi), gv) in dx.iter_mut().zip(y).zip(&g) {
                            *d += yi * (gv - dot);
                        }
                    }
                }
                Op::GruStep {
                    h,
                    x,
                    p,
                    update,
                    reset,
                    cand,
                } => {
                    let hv = nodes[h.0].value.data();
                    let xv = nodes[x.0].value.data();
                    let hid = hv.len();
                    let val = |id: NodeId| nodes[id.0].value.data();
                    let mut dh = vec![0.0; hid];
                    let mut d_update = vec![0.0; hid];
                    let mut d_cand = vec![0.0; hid];
                    for i in 0..hid {
                        dh[i] = g[i] * (1.0 - update[i]);
                        let dz = g[i] * (cand[i] - hv[i]);
                        d_update[i] = dz * update[i] * (1.0 - update[i]);
                        d_cand[i] = g[i] * update[i] * (1.0 - cand[i] * cand[i]);
                    }
                    let rh: Vec<f64> = reset.iter().zip(hv).map(|(r, h)| r * h).collect();
                    let mut d_rh = vec![0.0; hid];
                    mat_vec_t_acc(val(p.u_cand), &d_cand, &mut d_rh);
                    let mut d_reset = vec![0.0; hid];
                    for i in 0..hid {
                        dh[i] += d_rh[i] * reset[i];
                        d_reset[i] = d_rh[i] * hv[i] * reset[i] * (1.0 - reset[i]);
                    }
                    mat_vec_t_acc(val(p.u_update), &d_update, &mut dh);
                    mat_vec_t_acc(val(p.u_reset), &d_reset, &mut dh);

                    let gates = [
                        (p.w_update, p.u_update, p.b_update, &d_update, hv),
                        (p.w_reset, p.u_reset, p.b_reset, &d_reset, hv),
                        (p.w_cand, p.u_cand, p.b_cand, &d_cand, rh.as_slice()),
                    ];
                    for (w, u, b, da, hin) in gates {
                        if let Some(db) = acc(&mut grads, nodes, b) {
                            add_assign(db, da);
                        }
                        if let Some(dw) = acc(&mut grads, nodes, w) {
                            outer_acc(xv, da, dw);
                        }
                        if let Some(du) = acc(&mut grads, nodes, u) {
                            outer_acc(hin, da, du);
                        }
                    }
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        mat_vec_t_acc(val(p.w_update), &d_update, dx);
                        mat_vec_t_acc(val(p.w_reset), &d_reset, dx);
                        mat_vec_t_acc(val(p.w_cand), &d_cand, dx);
                    }
                    if let Some(dhp) = acc(&mut grads, nodes, *h) {
                        add_assign(dhp, &dh);
                    }
                }
                Op::Row { x, index } => {
                    let cols = nodes[x.0].value.cols();
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        add_assign(&mut dx[index * cols..(index + 1) * cols], &g);
                    }
                }
                Op::Stack(rows) => {
                    let d = node.value.cols();
                    for (r, &id) in rows.iter().enumerate() {
                        if let Some(dr) = acc(&mut grads, nodes, id) {
                            add_assign(dr, &g[r * d..(r + 1) * d]);
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &id in parts {
                        let n = nodes[id.0].value.len();
                        if let Some(dp) = acc(&mut grads, nodes, id) {
                            add_assign(dp, &g[off..off + n]);
                        }
                        off += n;
                    }
                }
                Op::CrossEntropy {
                    probs,
                    target,
                    weight,
                } => {
                    let p = nodes[probs.0].value.data()[*target];
                    if let Some(dp) = acc(&mut grads, nodes, *probs) {
                        // the clamped region is flat
                        if p > LOG_CLAMP {
                            dp[*target] += -weight / p * g[0];
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for d in dx.iter_mut() {
                            *d += g[0];
                        }
                    }
                }
                Op::Add(a, b) => {
                    if let Some(da) = acc(&mut grads, nodes, *a) {
                        add_assign(da, &g);
                    }
                    if let Some(db) = acc(&mut grads, nodes, *b) {
                        add_assign(db, &g);
                    }
                }
                Op::Scale(x, factor) => {
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for (d, gv) in dx.iter_mut().zip(&g) {
                            *d += factor * gv;
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
