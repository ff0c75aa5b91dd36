use std::collections::BTreeMap;
use std::sync::Arc;

use crate::autodiff::ops::{Leaf, Op};
use crate::autodiff::plans::{CompositePlan, LabelConvPlan, TrilerpPlan};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<NodeId>,
    pub(crate) value: Tensor,
    /// Whether any differentiable leaf reaches this node.
    pub(crate) grad: bool,
}

/// Define-by-run tape. Nodes are evaluated eagerly as they are recorded;
/// recording order is a topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
    stale: bool,
    fault: Option<(String, f64)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scales every vector-Jacobian product of the named op by `factor`.
    /// Used to verify that gradient checks catch a broken rule.
    pub fn inject_fault(&mut self, op_name: &str, factor: f64) {
        self.fault = Some((op_name.to_string(), factor));
    }

    fn push_leaf(&mut self, leaf: Leaf, value: Tensor) -> NodeId {
        let grad = !matches!(leaf, Leaf::Const);
        self.nodes.push(Node { op: Op::Leaf(leaf), inputs: Vec::new(), value, grad });
        NodeId(self.nodes.len() - 1)
    }

    /// A differentiable input (gradients are reported for it).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Leaf::Input, value)
    }

    /// A named parameter. Registering an existing name returns the existing node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            if self.nodes[id.0].value.shape() != value.shape() {
                return Err(Error::shape("param", format!("{name} re-registered with a new shape")));
            }
            return Ok(id);
        }
        let id = self.push_leaf(Leaf::Param(name.to_string()), value.clone());
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Leaf::Const, value)
    }

    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if let Some(bad) = inputs.iter().find(|i| i.0 >= self.nodes.len()) {
            return Err(Error::shape(op.name(), format!("unknown node {}", bad.0)));
        }
        if self.stale {
            return Err(Error::NotEvaluated);
        }
        let value = {
            let ins: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            op.forward(&ins)?
        };
        Ok(self.push_evaluated(op, inputs.to_vec(), value))
    }

    pub(crate) fn push_evaluated(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let grad = inputs.iter().any(|i| self.nodes[i.0].grad);
        self.nodes.push(Node { op, inputs, value, grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Replaces a leaf value. The graph must be [`replay`](Self::replay)ed before use.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf(_)) {
            return Err(Error::shape("set_leaf", "node is not a leaf"));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape("set_leaf", format!("{:?} -> {:?}", node.value.shape(), value.shape())));
        }
        node.value = value;
        self.stale = true;
        Ok(())
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.param_id(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        self.set_leaf(id, value)
    }

    /// Re-evaluates every recorded operation with the current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf(_)) {
                continue;
            }
            let value = {
                let node = &self.nodes[i];
                let ins: Vec<&Tensor> = node.inputs.iter().map(|j| &self.nodes[j.0].value).collect();
                node.op.forward(&ins)?
            };
            self.nodes[i].value = value;
        }
        self.stale = false;
        Ok(())
    }

    /// Reverse-mode gradients of `⟨value(output), cotangent⟩`.
    pub fn backward(&self, output: NodeId, cotangent: &Tensor) -> Result<Gradients> {
        if self.stale {
            return Err(Error::NotEvaluated);
        }
        let out_shape = self.nodes[output.0].value.shape();
        if out_shape != cotangent.shape() {
            return Err(Error::shape("backward", format!("cotangent {:?} for output {out_shape:?}", cotangent.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(cotangent.clone());
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf(_)) || !node.grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|j| self.nodes[j.0].grad).collect();
            let ins: Vec<&Tensor> = node.inputs.iter().map(|j| &self.nodes[j.0].value).collect();
            let mut local = node.op.vjp(&ins, &node.value, &g, &needs);
            if let Some((name, factor)) = &self.fault {
                if name == node.op.name() {
                    local.iter_mut().flatten().for_each(|t| t.scale_assign(*factor));
                }
            }
            for ((j, d), need) in node.inputs.iter().zip(local).zip(&needs) {
                if let (Some(d), true) = (d, need) {
                    match &mut grads[j.0] {
                        Some(acc) => acc.add_assign(&d),
                        slot => *slot = Some(d),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    /// Backward from a scalar output with unit seed.
    pub fn backward_scalar(&self, output: NodeId) -> Result<Gradients> {
        let shape = self.nodes[output.0].value.shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::shape("backward", format!("output {shape:?} is not a scalar")));
        }
        self.backward(output, &Tensor::full(&shape, 1.0))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }

    /// `x · w + b` for `x: [N, K]`, `w: [K, M]`, `b: [M]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.apply(Op::AddRowBias, &[y, b])
    }

    pub fn conv(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        match b {
            Some(b) => self.apply(Op::Conv { stride, pad }, &[x, w, b]),
            None => self.apply(Op::Conv { stride, pad }, &[x, w]),
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.apply(Op::Scale(s), &[a])
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.apply(Op::AddScalar(s), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[a])
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        self.apply(Op::LeakyRelu(slope), &[a])
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Softplus, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Square, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Mean, &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Op::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.apply(Op::Slice { axis, start, end }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Op::Reshape(shape.to_vec()), &[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn broadcast(&mut self, a: NodeId, spatial: &[usize]) -> Result<NodeId> {
        self.apply(Op::Broadcast(spatial.to_vec()), &[a])
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        self.apply(Op::GatherRows(Arc::new(rows)), &[a])
    }

    pub fn upsample2x(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Upsample2x, &[a])
    }

    pub fn instance_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        self.apply(Op::InstanceNorm { eps }, &[a])
    }

    pub fn trilerp(&mut self, psi: NodeId, plan: Arc<TrilerpPlan>) -> Result<NodeId> {
        self.apply(Op::Trilerp(plan), &[psi])
    }

    pub fn composite(&mut self, f: NodeId, sigma: NodeId, sky: NodeId, plan: Arc<CompositePlan>) -> Result<NodeId> {
        self.apply(Op::Composite(plan), &[f, sigma, sky])
    }

    pub fn object_alpha(&mut self, sigma: NodeId, plan: Arc<CompositePlan>, k: i64) -> Result<NodeId> {
        self.apply(Op::ObjectAlpha(plan, k), &[sigma])
    }

    pub fn label_conv(&mut self, plan: Arc<LabelConvPlan>, inputs: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::LabelConv(plan), inputs)
    }

    pub fn mod_demod(&mut self, w: NodeId, s: NodeId, eps: f64) -> Result<NodeId> {
        self.apply(Op::ModDemod { eps }, &[w, s])
    }

    pub fn resize_bilinear(&mut self, a: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        self.apply(Op::ResizeBilinear { out_h, out_w }, &[a])
    }
}

/// Result of a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, NodeId>,
}

impl Gradients {
    /// Gradient with respect to any node reached by the pass.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|&id| self.wrt(id))
    }

    /// Gradients of every registered parameter; unreached parameters are omitted.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter_map(|(name, &id)| self.wrt(id).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_affine_gives_bias() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap());
        let w = g.param("w", &Tensor::zeros(&[3, 2])).unwrap();
        let b = g.param("b", &Tensor::vector(vec![0.25, -1.5])).unwrap();
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.25, -1.5, 0.25, -1.5]);
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![3.0, -1.0, 4.0, 1.5]));
        let s = g.sum(x).unwrap();
        let grads = g.backward_scalar(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn constant_output_has_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let c = g.constant(Tensor::vector(vec![5.0, 6.0]));
        let z = g.scale(x, 0.0).unwrap();
        let y = g.add(z, c).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward_scalar(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn composition_equals_separate_evaluation() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![-0.3, 0.8]));
        let a = g.sigmoid(x).unwrap();
        let b = g.softplus(a).unwrap();
        let mut h = Graph::new();
        let a2 = h.constant(g.value(a).clone());
        let b2 = h.softplus(a2).unwrap();
        assert_eq!(g.value(b), h.value(b2));
    }

    #[test]
    fn stale_graph_rejects_backward() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0]));
        let y = g.square(x).unwrap();
        g.set_leaf(x, Tensor::vector(vec![3.0])).unwrap();
        assert!(matches!(g.backward_scalar(y), Err(Error::NotEvaluated)));
        g.replay().unwrap();
        assert_eq!(g.value(y).item(), 9.0);
        assert_eq!(g.backward_scalar(y).unwrap().wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn shared_param_accumulates() {
        let mut g = Graph::new();
        let w = g.param("w", &Tensor::vector(vec![2.0])).unwrap();
        let w_again = g.param("w", &Tensor::vector(vec![2.0])).unwrap();
        assert_eq!(w, w_again);
        let y = g.mul(w, w_again).unwrap();
        let grads = g.backward_scalar(y).unwrap();
        assert_eq!(grads.param("w").unwrap().item(), 4.0);
    }
}
