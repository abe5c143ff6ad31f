//! Reverse-mode automatic differentiation on a per-sample tape.
//!
//! A [`Graph`] borrows the parameter store, records every operation as a
//! node, and [`Graph::backward`] walks the tape in reverse. Nodes are
//! vectors (`n × 1`) unless an op says otherwise.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{axpy, dot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatVec(NodeId, NodeId),
    MatTVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    OneMinus(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softsign(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize),
    Row(NodeId, usize),
    Stack(Vec<NodeId>),
    Softmax(NodeId),
    Clamp(NodeId, f64, f64),
    Dot(NodeId, NodeId),
    Sum(NodeId),
    CrossEntropy(NodeId, usize),
    MaskedPool(MaskedPoolOp),
}

#[derive(Debug)]
struct MaskedPoolOp {
    features: NodeId,
    center: NodeId,
    width: NodeId,
    sharpness: f64,
    mask: Vec<f64>,
    mask_sum: f64,
    degenerate: bool,
}

struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// Mask sums below this are treated as an empty window.
pub const MASK_SUM_FLOOR: f64 = 1e-8;

/// Result of [`Graph::masked_pool`]; `degenerate` is set when the window
/// covered (numerically) no frame and the plain mean was used instead.
#[derive(Debug, Clone, Copy)]
pub struct Pooled {
    pub node: NodeId,
    pub degenerate: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(1024),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.get(*p),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).item()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant or input leaf. Its gradient is available after backward.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn constant_vec(&mut self, v: Vec<f64>) -> NodeId {
        self.input(Tensor::vector(v))
    }

    pub fn constant_scalar(&mut self, x: f64) -> NodeId {
        self.input(Tensor::scalar(x))
    }

    /// A copy of `id`'s value that gradients do not flow through.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.input(v)
    }

    pub fn param(&mut self, p: ParamId) -> NodeId {
        if let Some(id) = self.param_nodes[p.0] {
            return id;
        }
        self.nodes.push(Node {
            op: Op::Param(p),
            value: None,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.param_nodes[p.0] = Some(id);
        id
    }

    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> NodeId {
        let y = self.value(m).matvec(self.value(x).data());
        self.push(Op::MatVec(m, x), Tensor::vector(y))
    }

    pub fn matvec_t(&mut self, m: NodeId, x: NodeId) -> NodeId {
        let y = self.value(m).matvec_t(self.value(x).data());
        self.push(Op::MatTVec(m, x), Tensor::vector(y))
    }

    /// `W x + b` for parameter matrix `w` and bias `b`.
    pub fn linear(&mut self, w: ParamId, b: ParamId, x: NodeId) -> NodeId {
        let wn = self.param(w);
        let bn = self.param(b);
        let wx = self.matvec(wn, x);
        self.add(wx, bn)
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        debug_assert_eq!(va.len(), vb.len(), "elementwise op on mismatched lengths");
        let y: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = va.shape();
        self.push(op, Tensor::from_vec(shape.0, shape.1, y))
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let va = self.value(a);
        let shape = va.shape();
        let y: Vec<f64> = va.data().iter().map(|x| f(*x)).collect();
        self.push(op, Tensor::from_vec(shape.0, shape.1, y))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, Op::AddConst(a), |x| x + c)
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::OneMinus(a), |x| 1.0 - x)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid(a), math::sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Tanh(a), math::tanh)
    }

    /// `x / (1 + |x|)`. Bounded like tanh but its gradient decays
    /// polynomially, so a saturated unit can still recover.
    pub fn softsign(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Softsign(a), |x| x / (1.0 + x.abs()))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut y = Vec::new();
        for &p in parts {
            y.extend_from_slice(self.value(p).data());
        }
        self.push(Op::Concat(parts.to_vec()), Tensor::vector(y))
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let y = self.value(a).data()[start..start + len].to_vec();
        self.push(Op::Slice(a, start), Tensor::vector(y))
    }

    /// Row `r` of a matrix node, as a vector.
    pub fn row(&mut self, m: NodeId, r: usize) -> NodeId {
        let y = self.value(m).row(r).to_vec();
        self.push(Op::Row(m, r), Tensor::vector(y))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, rows: &[NodeId]) -> NodeId {
        let cols = rows.first().map_or(0, |&r| self.value(r).len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            debug_assert_eq!(self.value(r).len(), cols);
            data.extend_from_slice(self.value(r).data());
        }
        self.push(
            Op::Stack(rows.to_vec()),
            Tensor::from_vec(rows.len(), cols, data),
        )
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a).data();
        let lse = math::log_sum_exp(x);
        let y: Vec<f64> = x.iter().map(|&v| math::exp(v - lse)).collect();
        self.push(Op::Softmax(a), Tensor::vector(y))
    }

    /// Elementwise clamp; the gradient passes only where the input is inside
    /// `[lo, hi]`.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = dot(self.value(a).data(), self.value(b).data());
        self.push(Op::Dot(a, b), Tensor::scalar(y))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let y = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(y))
    }

    /// `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> NodeId {
        let x = self.value(logits).data();
        let y = math::log_sum_exp(x) - x[target];
        self.push(Op::CrossEntropy(logits, target), Tensor::scalar(y))
    }

    /// Soft-window mean pooling of the rows of `features` (`T × k`) under the
    /// sigmoid-difference mask of the segment `(center, width)`; frame `t`
    /// (1-based) sits at normalized time `t / T`.
    pub fn masked_pool(
        &mut self,
        features: NodeId,
        center: NodeId,
        width: NodeId,
        sharpness: f64,
    ) -> Pooled {
        let m = self.scalar(center);
        let w = self.scalar(width);
        let feats = self.value(features);
        let steps = feats.rows();
        let mask: Vec<f64> = (1..=steps)
            .map(|t| soft_mask_value(t as f64 / steps as f64, m, w, sharpness))
            .collect();
        let mask_sum: f64 = mask.iter().sum();
        let degenerate = !(mask_sum >= MASK_SUM_FLOOR);
        let mut ctx = vec![0.0; feats.cols()];
        if degenerate {
            for t in 0..steps {
                axpy(1.0 / steps as f64, feats.row(t), &mut ctx);
            }
        } else {
            for (t, &mt) in mask.iter().enumerate() {
                axpy(mt / mask_sum, feats.row(t), &mut ctx);
            }
        }
        let node = self.push(
            Op::MaskedPool(MaskedPoolOp {
                features,
                center,
                width,
                sharpness,
                mask,
                mask_sum,
                degenerate,
            }),
            Tensor::vector(ctx),
        );
        Pooled { node, degenerate }
    }

    /// Backpropagates from the scalar node `loss`.
    pub fn backward(&self, loss: NodeId) -> Backward {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Backward { grads }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = self.nodes[i].value.as_ref();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatVec(m, x) => {
                let mv = self.value(*m);
                let xv = self.value(*x).data();
                let gm = self.grad_slot(grads, *m);
                for (r, &gr) in g.data().iter().enumerate() {
                    if gr != 0.0 {
                        axpy(gr, xv, gm.row_mut(r));
                    }
                }
                let dx = mv.matvec_t(g.data());
                axpy(1.0, &dx, self.grad_slot(grads, *x).data_mut());
            }
            Op::MatTVec(m, x) => {
                let mv = self.value(*m);
                let xv = self.value(*x).data();
                let gm = self.grad_slot(grads, *m);
                for (r, &xr) in xv.iter().enumerate() {
                    if xr != 0.0 {
                        axpy(xr, g.data(), gm.row_mut(r));
                    }
                }
                let dx = mv.matvec(g.data());
                axpy(1.0, &dx, self.grad_slot(grads, *x).data_mut());
            }
            Op::Add(a, b) => {
                axpy(1.0, g.data(), self.grad_slot(grads, *a).data_mut());
                axpy(1.0, g.data(), self.grad_slot(grads, *b).data_mut());
            }
            Op::Sub(a, b) => {
                axpy(1.0, g.data(), self.grad_slot(grads, *a).data_mut());
                axpy(-1.0, g.data(), self.grad_slot(grads, *b).data_mut());
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                {
                    let ga = self.grad_slot(grads, *a).data_mut();
                    for ((o, gi), bi) in ga.iter_mut().zip(g.data()).zip(vb) {
                        *o += gi * bi;
                    }
                }
                let gb = self.grad_slot(grads, *b).data_mut();
                for ((o, gi), ai) in gb.iter_mut().zip(g.data()).zip(va) {
                    *o += gi * ai;
                }
            }
            Op::Scale(a, s) => axpy(*s, g.data(), self.grad_slot(grads, *a).data_mut()),
            Op::AddConst(a) => axpy(1.0, g.data(), self.grad_slot(grads, *a).data_mut()),
            Op::OneMinus(a) => axpy(-1.0, g.data(), self.grad_slot(grads, *a).data_mut()),
            Op::Sigmoid(a) => {
                let yv = y.expect("value").data();
                let ga = self.grad_slot(grads, *a).data_mut();
                for ((o, gi), yi) in ga.iter_mut().zip(g.data()).zip(yv) {
                    *o += gi * yi * (1.0 - yi);
                }
            }
            Op::Tanh(a) => {
                let yv = y.expect("value").data();
                let ga = self.grad_slot(grads, *a).data_mut();
                for ((o, gi), yi) in ga.iter_mut().zip(g.data()).zip(yv) {
                    *o += gi * (1.0 - yi * yi);
                }
            }
            Op::Softsign(a) => {
                let yv = y.expect("value").data();
                let ga = self.grad_slot(grads, *a).data_mut();
                for ((o, gi), yi) in ga.iter_mut().zip(g.data()).zip(yv) {
                    let s = 1.0 - yi.abs();
                    *o += gi * s * s;
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    axpy(1.0, &g.data()[off..off + n], self.grad_slot(grads, p).data_mut());
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                let ga = self.grad_slot(grads, *a).data_mut();
                axpy(1.0, g.data(), &mut ga[*start..*start + g.len()]);
            }
            Op::Row(m, r) => {
                axpy(1.0, g.data(), self.grad_slot(grads, *m).row_mut(*r));
            }
            Op::Stack(rows) => {
                for (r, &node) in rows.iter().enumerate() {
                    axpy(1.0, g.row(r), self.grad_slot(grads, node).data_mut());
                }
            }
            Op::Softmax(a) => {
                let yv = y.expect("value").data();
                let gy = dot(g.data(), yv);
                let ga = self.grad_slot(grads, *a).data_mut();
                for ((o, gi), yi) in ga.iter_mut().zip(g.data()).zip(yv) {
                    *o += yi * (gi - gy);
                }
            }
            Op::Clamp(a, lo, hi) => {
                let xv = self.value(*a).data();
                let ga = self.grad_slot(grads, *a).data_mut();
                for ((o, gi), xi) in ga.iter_mut().zip(g.data()).zip(xv) {
                    if *xi >= *lo && *xi <= *hi {
                        *o += gi;
                    }
                }
            }
            Op::Dot(a, b) => {
                let s = g.item();
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                axpy(s, vb, self.grad_slot(grads, *a).data_mut());
                axpy(s, va, self.grad_slot(grads, *b).data_mut());
            }
            Op::Sum(a) => {
                let s = g.item();
                self.grad_slot(grads, *a)
                    .data_mut()
                    .iter_mut()
                    .for_each(|o| *o += s);
            }
            Op::CrossEntropy(logits, target) => {
                let s = g.item();
                let x = self.value(*logits).data();
                let lse = math::log_sum_exp(x);
                let gl = self.grad_slot(grads, *logits).data_mut();
                for (j, (o, xj)) in gl.iter_mut().zip(x).enumerate() {
                    let p = math::exp(xj - lse);
                    *o += s * (p - if j == *target { 1.0 } else { 0.0 });
                }
            }
            Op::MaskedPool(op) => self.backprop_masked_pool(op, g, y.expect("value"), grads),
        }
    }

    fn backprop_masked_pool(
        &self,
        op: &MaskedPoolOp,
        g: &Tensor,
        ctx: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let feats = self.value(op.features);
        let steps = feats.rows();
        if op.degenerate {
            let gf = self.grad_slot(grads, op.features);
            for t in 0..steps {
                axpy(1.0 / steps as f64, g.data(), gf.row_mut(t));
            }
            return;
        }
        let m = self.scalar(op.center);
        let w = self.scalar(op.width);
        let k = op.sharpness;
        // d ctx / d M_t = (v_t - ctx) / S, so dL/dM_t = g · (v_t - ctx) / S.
        let g_ctx = dot(g.data(), ctx.data());
        let (mut dm, mut dw) = (0.0, 0.0);
        for t in 0..steps {
            let dl_dmask = (dot(g.data(), feats.row(t)) - g_ctx) / op.mask_sum;
            let (dmask_dm, dmask_dw) =
                soft_mask_partials((t + 1) as f64 / steps as f64, m, w, k);
            dm += dl_dmask * dmask_dm;
            dw += dl_dmask * dmask_dw;
        }
        self.grad_slot(grads, op.center).data_mut()[0] += dm;
        self.grad_slot(grads, op.width).data_mut()[0] += dw;
        let gf = self.grad_slot(grads, op.features);
        for (t, &mt) in op.mask.iter().enumerate() {
            axpy(mt / op.mask_sum, g.data(), gf.row_mut(t));
        }
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], id: NodeId) -> &'g mut Tensor {
        let slot = &mut grads[id.0];
        if slot.is_none() {
            let (r, c) = self.value(id).shape();
            *slot = Some(Tensor::zeros(r, c));
        }
        slot.as_mut().expect("grad slot")
    }

    /// Collects parameter gradients out of a finished backward pass.
    pub fn param_grads(&self, back: &Backward) -> Gradients {
        let grads = self
            .param_nodes
            .iter()
            .map(|n| n.and_then(|id| back.grads[id.0].clone()))
            .collect();
        Gradients::from_vec(grads)
    }
}

/// Gradients of every node reachable from the loss.
pub struct Backward {
    grads: Vec<Option<Tensor>>,
}

impl Backward {
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

/// `Sig(K(t − (m − w/2))) − Sig(K(t − (m + w/2)))`: close to 1 inside the
/// window and close to 0 outside.
pub fn soft_mask_value(t: f64, m: f64, w: f64, k: f64) -> f64 {
    math::sigmoid(k * (t - (m - 0.5 * w))) - math::sigmoid(k * (t - (m + 0.5 * w)))
}

/// Partial derivatives of [`soft_mask_value`] with respect to `m` and `w`.
pub fn soft_mask_partials(t: f64, m: f64, w: f64, k: f64) -> (f64, f64) {
    let lo = math::sigmoid(k * (t - (m - 0.5 * w)));
    let hi = math::sigmoid(k * (t - (m + 0.5 * w)));
    let dlo = k * lo * (1.0 - lo);
    let dhi = k * hi * (1.0 - hi);
    (dhi - dlo, 0.5 * (dlo + dhi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn numeric_grad(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementwise_chain_matches_finite_difference() {
        let store = ParamStore::new();
        let f = |x0: f64| {
            let mut g = Graph::new(&store);
            let x = g.constant_vec(vec![x0, 0.3]);
            let s = g.sigmoid(x);
            let t = g.tanh(s);
            let m = g.mul(t, x);
            let om = g.one_minus(m);
            let sm = g.softmax(om);
            let sl = g.slice(sm, 0, 1);
            let out = g.sum(sl);
            (g.scalar(out), g, x, out)
        };
        let (_, g, x, out) = f(0.7);
        let back = g.backward(out);
        let analytic = back.grad(x).unwrap().data()[0];
        let numeric = numeric_grad(|v| f(v).0, 0.7);
        assert!((analytic - numeric).abs() < 1e-8, "{analytic} vs {numeric}");
    }

    #[test]
    fn softsign_gradient_on_both_sides() {
        let store = ParamStore::new();
        let f = |x0: f64| {
            let mut g = Graph::new(&store);
            let x = g.constant_vec(vec![x0]);
            let y = g.softsign(x);
            let out = g.sum(y);
            (g.scalar(out), g, x, out)
        };
        for x0 in [-4.0, -0.3, 0.2, 9.0] {
            let (v, g, x, out) = f(x0);
            assert!(v.abs() < 1.0);
            let analytic = g.backward(out).grad(x).unwrap().data()[0];
            let numeric = numeric_grad(|v| f(v).0, x0);
            assert!((analytic - numeric).abs() < 1e-8, "{analytic} vs {numeric}");
        }
    }

    #[test]
    fn matvec_and_cross_entropy_gradients() {
        let mut store = ParamStore::new();
        let w = store.add(
            "w",
            Tensor::from_rows(&[&[0.1, -0.2], &[0.4, 0.3], &[-0.5, 0.2]]),
        );
        let loss_at = |store: &ParamStore| {
            let mut g = Graph::new(store);
            let x = g.constant_vec(vec![1.5, -0.5]);
            let wn = g.param(w);
            let y = g.matvec(wn, x);
            let l = g.cross_entropy(y, 2);
            (g.scalar(l), g.param_grads(&g.backward(l)))
        };
        let (_, grads) = loss_at(&store);
        let gw = grads.get(w).unwrap().clone();
        for idx in 0..6 {
            let mut plus = store.clone();
            plus.get_mut(w).data_mut()[idx] += 1e-6;
            let mut minus = store.clone();
            minus.get_mut(w).data_mut()[idx] -= 1e-6;
            let num = (loss_at(&plus).0 - loss_at(&minus).0) / 2e-6;
            assert!((gw.data()[idx] - num).abs() < 1e-7);
        }
    }

    #[test]
    fn mask_partials_match_finite_difference() {
        let (t, m, w, k) = (0.41, 0.5, 0.3, 20.0);
        let (dm, dw) = soft_mask_partials(t, m, w, k);
        let nm = numeric_grad(|x| soft_mask_value(t, x, w, k), m);
        let nw = numeric_grad(|x| soft_mask_value(t, m, x, k), w);
        assert!((dm - nm).abs() < 1e-6);
        assert!((dw - nw).abs() < 1e-6);
    }
}
