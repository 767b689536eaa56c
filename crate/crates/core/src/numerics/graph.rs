//! Reverse-mode automatic differentiation over a dynamically built record.
//!
//! Every operation appends a node holding its output value, so inputs always
//! precede the nodes that consume them and a single reverse sweep over the
//! node list is a valid topological order for the backward pass.
//!
//! Operations are batched: most work on matrices whose rows are independent
//! samples (or sample × location pairs for the attention grid).

use super::tensor::{gemm_into, softmax_in_place};
use super::{NumericsError, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param,
    /// `x [r, in] · wᵀ` with `w [out, in]`.
    Linear { x: NodeId, w: NodeId },
    AddBias { x: NodeId, b: NodeId },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Cols { x: NodeId, start: usize, len: usize },
    Concat(NodeId, NodeId),
    Gather { table: NodeId, ids: Vec<usize> },
    /// `x [b*group, c] ⊙ y [b, c]` with `y` repeated over each group.
    BroadcastMul { x: NodeId, y: NodeId, group: usize },
    /// Row dot products `x [b*group, c] · p [c]`, laid out as `[b, group]`.
    GroupScore { x: NodeId, p: NodeId },
    SoftmaxRows(NodeId),
    /// `Σ_l alpha[b, l] v[b*L + l, :]`.
    WeightedSum { alpha: NodeId, v: NodeId },
    /// `Σ_b w_b · -log softmax(logits_b)[t_b]`; row probabilities kept in `aux`.
    MaskedNll { logits: NodeId, targets: Vec<usize>, weights: Vec<f64> },
    SelectRows { new: NodeId, old: NodeId, mask: Vec<bool> },
    Sum(NodeId),
    Scale(NodeId, f64),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Input | Op::Param => vec![],
            Op::Linear { x, w } => vec![x, w],
            Op::AddBias { x, b } => vec![x, b],
            Op::Add(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => vec![a, b],
            Op::Tanh(a) | Op::Sigmoid(a) | Op::Relu(a) | Op::SoftmaxRows(a) => vec![a],
            Op::Sum(a) | Op::Scale(a, _) => vec![a],
            Op::Cols { x, .. } => vec![x],
            Op::Gather { table, .. } => vec![table],
            Op::BroadcastMul { x, y, .. } => vec![x, y],
            Op::GroupScore { x, p } => vec![x, p],
            Op::WeightedSum { alpha, v } => vec![alpha, v],
            Op::MaskedNll { logits, .. } => vec![logits],
            Op::SelectRows { new, old, .. } => vec![new, old],
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Linear { .. } => "linear",
            Op::AddBias { .. } => "add_bias",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Cols { .. } => "cols",
            Op::Concat(..) => "concat",
            Op::Gather { .. } => "gather",
            Op::BroadcastMul { .. } => "broadcast_mul",
            Op::GroupScore { .. } => "group_score",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::MaskedNll { .. } => "masked_nll",
            Op::SelectRows { .. } => "select_rows",
            Op::Sum(_) => "sum",
            Op::Scale(..) => "scale",
        }
    }
}

struct Node<T> {
    op: Op,
    value: Tensor<T>,
    aux: Option<Tensor<T>>,
    needs_grad: bool,
}

/// Append-only computation record.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, expected: &[usize], got: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn op_tag(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.tag()
    }

    pub fn inputs_of(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }

    fn push(&mut self, op: Op, value: Tensor<T>, aux: Option<Tensor<T>>) -> NodeId {
        let needs_grad = match op {
            Op::Param => true,
            Op::Input => false,
            _ => op.inputs().iter().any(|i| self.nodes[i.0].needs_grad),
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            aux,
            needs_grad,
        });
        id
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Input, value, None)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Param, value, None)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, NumericsError> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(mismatch("linear", ws, xs));
        }
        let (r, k, n) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); r * n];
        gemm_into(
            r,
            k,
            n,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            T::zero(),
        );
        Ok(self.push(Op::Linear { x, w }, Tensor::from_parts(vec![r, n], out), None))
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let c = self.value(x).cols();
        if self.value(b).len() != c {
            return Err(mismatch("add_bias", &[c], self.shape(b)));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::AddBias { x, b }, Tensor::from_parts(shape, out), None))
    }

    /// `x wᵀ + b`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let y = self.linear(x, w)?;
        self.add_bias(y, b)
    }

    fn zip_with(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
    ) -> Result<NodeId, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op.tag(), self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(op, Tensor::from_parts(shape, data), None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    fn unary(&mut self, op: Op, a: NodeId, f: impl Fn(T) -> T) -> NodeId {
        let value = self.value(a).map(f);
        self.push(op, value, None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Tanh(a), a, |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid(a), a, |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Relu(a), a, |x| x.max(T::zero()))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = T::from_f64_lossy(c);
        self.unary(Op::Scale(a, c), a, |x| x * k)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Op::Sum(a), Tensor::scalar(s), None)
    }

    /// Columns `start..start+len` of a 2-d node.
    pub fn cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NumericsError> {
        let v = self.value(x);
        let c = v.cols();
        if len == 0 || start + len > c {
            return Err(mismatch("cols", &[start + len], &[c]));
        }
        let r = v.rows();
        let mut out = Vec::with_capacity(r * len);
        for row in v.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        Ok(self.push(
            Op::Cols { x, start, len },
            Tensor::from_parts(vec![r, len], out),
            None,
        ))
    }

    /// Column-wise concatenation of two 2-d nodes with equal row counts.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(mismatch("concat", va.shape(), vb.shape()));
        }
        let (ca, cb, r) = (va.cols(), vb.cols(), va.rows());
        let mut out = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            out.extend_from_slice(va.row(i));
            out.extend_from_slice(vb.row(i));
        }
        Ok(self.push(
            Op::Concat(a, b),
            Tensor::from_parts(vec![r, ca + cb], out),
            None,
        ))
    }

    /// Row lookup: `table [v, e]` → `[ids.len(), e]`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, NumericsError> {
        let t = self.value(table);
        let (v, e) = (t.rows(), t.cols());
        if ids.is_empty() {
            return Err(NumericsError::Empty("gather"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NumericsError::IndexOutOfRange { index: bad, len: v });
        }
        let mut out = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            out.extend_from_slice(t.row(i));
        }
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            Tensor::from_parts(vec![ids.len(), e], out),
            None,
        ))
    }

    pub fn broadcast_mul(
        &mut self,
        x: NodeId,
        y: NodeId,
        group: usize,
    ) -> Result<NodeId, NumericsError> {
        let (vx, vy) = (self.value(x), self.value(y));
        let c = vx.cols();
        if vy.cols() != c || vx.rows() != vy.rows() * group {
            return Err(mismatch("broadcast_mul", vx.shape(), vy.shape()));
        }
        let mut out = vx.data().to_vec();
        for (r, row) in out.chunks_mut(c).enumerate() {
            for (o, &yv) in row.iter_mut().zip(vy.row(r / group)) {
                *o *= yv;
            }
        }
        let shape = vx.shape().to_vec();
        Ok(self.push(
            Op::BroadcastMul { x, y, group },
            Tensor::from_parts(shape, out),
            None,
        ))
    }

    pub fn group_score(
        &mut self,
        x: NodeId,
        p: NodeId,
        group: usize,
    ) -> Result<NodeId, NumericsError> {
        let (vx, vp) = (self.value(x), self.value(p));
        let c = vx.cols();
        if vp.len() != c || vx.rows() % group != 0 {
            return Err(mismatch("group_score", &[c], vp.shape()));
        }
        let out: Vec<T> = vx
            .data()
            .chunks(c)
            .map(|row| row.iter().zip(vp.data()).map(|(&a, &b)| a * b).sum())
            .collect();
        let b = vx.rows() / group;
        Ok(self.push(
            Op::GroupScore { x, p },
            Tensor::from_parts(vec![b, group], out),
            None,
        ))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let c = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let shape = v.shape().to_vec();
        self.push(Op::SoftmaxRows(a), Tensor::from_parts(shape, out), None)
    }

    pub fn weighted_sum(&mut self, alpha: NodeId, v: NodeId) -> Result<NodeId, NumericsError> {
        let (va, vv) = (self.value(alpha), self.value(v));
        let (b, l) = (va.rows(), va.cols());
        if vv.rows() != b * l {
            return Err(mismatch("weighted_sum", &[b * l], vv.shape()));
        }
        let d = vv.cols();
        let mut out = vec![T::zero(); b * d];
        for bi in 0..b {
            let o = &mut out[bi * d..(bi + 1) * d];
            for (li, &w) in va.row(bi).iter().enumerate() {
                for (oj, &x) in o.iter_mut().zip(vv.row(bi * l + li)) {
                    *oj += w * x;
                }
            }
        }
        Ok(self.push(
            Op::WeightedSum { alpha, v },
            Tensor::from_parts(vec![b, d], out),
            None,
        ))
    }

    /// Weighted negative log-likelihood of `targets` under row-wise softmax
    /// of `logits`. Rows with weight zero contribute neither loss nor
    /// gradient.
    pub fn masked_nll(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<NodeId, NumericsError> {
        let v = self.value(logits);
        let (r, c) = (v.rows(), v.cols());
        if targets.len() != r || weights.len() != r {
            return Err(mismatch("masked_nll", &[r], &[targets.len(), weights.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NumericsError::IndexOutOfRange { index: bad, len: c });
        }
        let mut probs = v.data().to_vec();
        let mut total = T::zero();
        for (i, row) in probs.chunks_mut(c).enumerate() {
            let raw = v.row(i);
            let max = raw.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = raw.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            if weights[i] != 0.0 {
                total += T::from_f64_lossy(weights[i]) * (lse - raw[targets[i]]);
            }
            softmax_in_place(row);
        }
        Ok(self.push(
            Op::MaskedNll {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            Tensor::scalar(total),
            Some(Tensor::from_parts(vec![r, c], probs)),
        ))
    }

    /// Row `i` of the result is `new[i]` when `mask[i]`, else `old[i]`.
    pub fn select_rows(
        &mut self,
        new: NodeId,
        old: NodeId,
        mask: &[bool],
    ) -> Result<NodeId, NumericsError> {
        let (vn, vo) = (self.value(new), self.value(old));
        if vn.shape() != vo.shape() || vn.rows() != mask.len() {
            return Err(mismatch("select_rows", vn.shape(), vo.shape()));
        }
        let mut out = Vec::with_capacity(vn.len());
        for (i, &m) in mask.iter().enumerate() {
            out.extend_from_slice(if m { vn.row(i) } else { vo.row(i) });
        }
        let shape = vn.shape().to_vec();
        Ok(self.push(
            Op::SelectRows {
                new,
                old,
                mask: mask.to_vec(),
            },
            Tensor::from_parts(shape, out),
            None,
        ))
    }

    /// Backpropagates from a scalar root. Gradients exist for every node on a
    /// path from a parameter to the root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>, NumericsError> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(NumericsError::NotScalar(rv.shape().to_vec()));
        }
        rv.ensure_finite("backward root")?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape(), T::one())?);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for input in node.op.inputs() {
                assert!(input.0 < idx, "computation record is topologically ordered");
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Linear { x, w } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (r, k, n) = (vx.rows(), vx.cols(), vw.rows());
                if self.nodes[x.0].needs_grad {
                    let acc = accumulator(grads, *x, vx.shape());
                    gemm_into(r, n, k, gd, false, vw.data(), false, acc, T::one());
                }
                if self.nodes[w.0].needs_grad {
                    let acc = accumulator(grads, *w, vw.shape());
                    gemm_into(n, r, k, gd, true, vx.data(), false, acc, T::one());
                }
            }
            Op::AddBias { x, b } => {
                self.accumulate(grads, *x, |acc| add_to(acc, gd));
                let c = g.cols();
                self.accumulate(grads, *b, |acc| {
                    for row in gd.chunks(c) {
                        add_to(acc, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |acc| add_to(acc, gd));
                self.accumulate(grads, *b, |acc| add_to(acc, gd));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |acc| {
                    for ((o, &gi), &y) in acc.iter_mut().zip(gd).zip(vb) {
                        *o += gi * y;
                    }
                });
                self.accumulate(grads, *b, |acc| {
                    for ((o, &gi), &x) in acc.iter_mut().zip(gd).zip(va) {
                        *o += gi * x;
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |acc| {
                    for ((o, &gi), &yi) in acc.iter_mut().zip(gd).zip(y) {
                        *o += gi * (T::one() - yi * yi);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |acc| {
                    for ((o, &gi), &yi) in acc.iter_mut().zip(gd).zip(y) {
                        *o += gi * yi * (T::one() - yi);
                    }
                });
            }
            Op::Relu(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |acc| {
                    for ((o, &gi), &yi) in acc.iter_mut().zip(gd).zip(y) {
                        if yi > T::zero() {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                let k = T::from_f64_lossy(*c);
                self.accumulate(grads, *a, |acc| {
                    for (o, &gi) in acc.iter_mut().zip(gd) {
                        *o += gi * k;
                    }
                });
            }
            Op::Sum(a) => {
                let s = gd[0];
                self.accumulate(grads, *a, |acc| {
                    for o in acc.iter_mut() {
                        *o += s;
                    }
                });
            }
            Op::Cols { x, start, len } => {
                let c = self.value(*x).cols();
                self.accumulate(grads, *x, |acc| {
                    for (arow, grow) in acc.chunks_mut(c).zip(gd.chunks(*len)) {
                        add_to(&mut arow[*start..*start + *len], grow);
                    }
                });
            }
            Op::Concat(a, b) => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                self.accumulate(grads, *a, |acc| {
                    for (arow, grow) in acc.chunks_mut(ca).zip(gd.chunks(ca + cb)) {
                        add_to(arow, &grow[..ca]);
                    }
                });
                self.accumulate(grads, *b, |acc| {
                    for (brow, grow) in acc.chunks_mut(cb).zip(gd.chunks(ca + cb)) {
                        add_to(brow, &grow[ca..]);
                    }
                });
            }
            Op::Gather { table, ids } => {
                let e = self.value(*table).cols();
                self.accumulate(grads, *table, |acc| {
                    for (&i, grow) in ids.iter().zip(gd.chunks(e)) {
                        add_to(&mut acc[i * e..(i + 1) * e], grow);
                    }
                });
            }
            Op::BroadcastMul { x, y, group } => {
                let (vx, vy) = (self.value(*x), self.value(*y));
                let c = vx.cols();
                self.accumulate(grads, *x, |acc| {
                    for (r, (arow, grow)) in acc.chunks_mut(c).zip(gd.chunks(c)).enumerate() {
                        for ((o, &gi), &yv) in arow.iter_mut().zip(grow).zip(vy.row(r / group)) {
                            *o += gi * yv;
                        }
                    }
                });
                self.accumulate(grads, *y, |acc| {
                    for (r, grow) in gd.chunks(c).enumerate() {
                        let arow = &mut acc[(r / group) * c..(r / group + 1) * c];
                        for ((o, &gi), &xv) in arow.iter_mut().zip(grow).zip(vx.row(r)) {
                            *o += gi * xv;
                        }
                    }
                });
            }
            Op::GroupScore { x, p } => {
                let (vx, vp) = (self.value(*x), self.value(*p));
                let c = vx.cols();
                self.accumulate(grads, *x, |acc| {
                    for (arow, &gi) in acc.chunks_mut(c).zip(gd) {
                        for (o, &pv) in arow.iter_mut().zip(vp.data()) {
                            *o += gi * pv;
                        }
                    }
                });
                self.accumulate(grads, *p, |acc| {
                    for (xrow, &gi) in vx.data().chunks(c).zip(gd) {
                        for (o, &xv) in acc.iter_mut().zip(xrow) {
                            *o += gi * xv;
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                self.accumulate(grads, *a, |acc| {
                    for ((arow, grow), yrow) in acc.chunks_mut(c).zip(gd.chunks(c)).zip(y.chunks(c)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&gi, &yi)| gi * yi).sum();
                        for ((o, &gi), &yi) in arow.iter_mut().zip(grow).zip(yrow) {
                            *o += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::WeightedSum { alpha, v } => {
                let (va, vv) = (self.value(*alpha), self.value(*v));
                let (l, d) = (va.cols(), vv.cols());
                self.accumulate(grads, *alpha, |acc| {
                    for (bi, grow) in gd.chunks(d).enumerate() {
                        for li in 0..l {
                            let dot: T = grow.iter().zip(vv.row(bi * l + li)).map(|(&a, &b)| a * b).sum();
                            acc[bi * l + li] += dot;
                        }
                    }
                });
                self.accumulate(grads, *v, |acc| {
                    for (bi, grow) in gd.chunks(d).enumerate() {
                        for (li, &w) in va.row(bi).iter().enumerate() {
                            let r = bi * l + li;
                            for (o, &gi) in acc[r * d..(r + 1) * d].iter_mut().zip(grow) {
                                *o += w * gi;
                            }
                        }
                    }
                });
            }
            Op::MaskedNll {
                logits,
                targets,
                weights,
            } => {
                let probs = node.aux.as_ref().expect("masked_nll keeps probabilities");
                let c = probs.cols();
                let s = gd[0];
                self.accumulate(grads, *logits, |acc| {
                    for (i, (arow, prow)) in acc.chunks_mut(c).zip(probs.data().chunks(c)).enumerate() {
                        if weights[i] == 0.0 {
                            continue;
                        }
                        let w = s * T::from_f64_lossy(weights[i]);
                        for (o, &p) in arow.iter_mut().zip(prow) {
                            *o += w * p;
                        }
                        arow[targets[i]] -= w;
                    }
                });
            }
            Op::SelectRows { new, old, mask } => {
                let c = g.cols();
                self.accumulate(grads, *new, |acc| {
                    for ((arow, grow), &m) in acc.chunks_mut(c).zip(gd.chunks(c)).zip(mask) {
                        if m {
                            add_to(arow, grow);
                        }
                    }
                });
                self.accumulate(grads, *old, |acc| {
                    for ((arow, grow), &m) in acc.chunks_mut(c).zip(gd.chunks(c)).zip(mask) {
                        if !m {
                            add_to(arow, grow);
                        }
                    }
                });
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, f: impl FnOnce(&mut [T])) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let acc = accumulator(grads, id, self.value(id).shape());
        f(acc);
    }
}

fn accumulator<'a, T: Scalar>(
    grads: &'a mut [Option<Tensor<T>>],
    id: NodeId,
    shape: &[usize],
) -> &'a mut [T] {
    grads[id.0]
        .get_or_insert_with(|| {
            Tensor::from_parts(shape.to_vec(), vec![T::zero(); shape.iter().product()])
        })
        .data_mut()
}

fn add_to<T: Scalar>(acc: &mut [T], g: &[T]) {
    for (o, &x) in acc.iter_mut().zip(g) {
        *o += x;
    }
}

/// Per-node gradient accumulators produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}
