//! Forward-over-reverse differentiation of input-gradient norms.
//!
//! For a scalar `y(x; θ)` with `g = ∇_x y`, the directional derivative of `y`
//! along the fixed direction `v = g` is `s(θ) = ⟨∇_x y(θ), v⟩`. Its parameter
//! gradient is `⟨∂g/∂θ, g⟩`, so `∂‖g‖²/∂θ = 2 ∂s/∂θ`. The tangent pass is recorded
//! on a fresh tape, which is then differentiated in reverse.

use std::collections::BTreeMap;

use crate::autodiff::graph::{Graph, NodeId};
use crate::autodiff::ops::{Leaf, Op};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// `‖∇_x y‖²` and its gradient with respect to every parameter of the graph.
#[derive(Clone, Debug)]
pub struct GradNormPenalty {
    pub penalty: f64,
    pub input_grad: Tensor,
    pub param_grads: BTreeMap<String, Tensor>,
}

pub fn second_order_grad(graph: &Graph, output: NodeId, input: NodeId) -> Result<GradNormPenalty> {
    let first = graph.backward_scalar(output)?;
    let x_shape = graph.value(input).shape().to_vec();
    let g = first.wrt(input).cloned().unwrap_or_else(|| Tensor::zeros(&x_shape));
    let penalty = g.sum_squares();

    let mut tape = Graph::new();
    let mut primal: Vec<NodeId> = Vec::with_capacity(output.0 + 1);
    let mut tangent: Vec<Option<NodeId>> = vec![None; output.0 + 1];
    for (i, node) in graph.nodes[..=output.0].iter().enumerate() {
        let id = match &node.op {
            Op::Leaf(Leaf::Param(name)) => tape.param(name, &node.value)?,
            Op::Leaf(_) => tape.constant(node.value.clone()),
            op => {
                let ins = node.inputs.iter().map(|j| primal[j.0]).collect();
                tape.push_evaluated(op.clone(), ins, node.value.clone())
            }
        };
        primal.push(id);
        if i == input.0 {
            tangent[i] = Some(tape.constant(g.clone()));
        } else if !matches!(node.op, Op::Leaf(_)) {
            let tin: Vec<Option<NodeId>> = node.inputs.iter().map(|j| tangent[j.0]).collect();
            if tin.iter().any(Option::is_some) {
                let pin: Vec<NodeId> = node.inputs.iter().map(|j| primal[j.0]).collect();
                tangent[i] = Some(jvp(&mut tape, &node.op, &pin, &tin, id)?);
            }
        }
    }

    let zeros = || {
        let names: Vec<String> = tape.param_names().map(str::to_string).collect();
        names
            .into_iter()
            .map(|n| {
                let shape = tape.value(tape.param_id(&n).expect("registered")).shape().to_vec();
                (n, Tensor::zeros(&shape))
            })
            .collect::<BTreeMap<_, _>>()
    };
    let Some(s) = tangent[output.0] else {
        return Ok(GradNormPenalty { penalty, input_grad: g, param_grads: zeros() });
    };
    let grads = tape.backward_scalar(s)?;
    let mut param_grads = zeros();
    for (name, acc) in param_grads.iter_mut() {
        if let Some(d) = grads.param(name) {
            *acc = d.map(|v| 2.0 * v);
        }
    }
    Ok(GradNormPenalty { penalty, input_grad: g, param_grads })
}

/// Records the tangent of `op` given primal inputs and (partially present) input tangents.
fn jvp(tape: &mut Graph, op: &Op, p: &[NodeId], t: &[Option<NodeId>], out: NodeId) -> Result<NodeId> {
    let only_first = |name: &'static str| -> Result<NodeId> {
        match t {
            [Some(a), rest @ ..] if rest.iter().all(Option::is_none) => Ok(*a),
            _ => Err(Error::NoSecondOrderRule(name)),
        }
    };
    let sum = |tape: &mut Graph, a: Option<NodeId>, b: Option<NodeId>| -> Result<NodeId> {
        match (a, b) {
            (Some(a), Some(b)) => tape.add(a, b),
            (Some(a), None) | (None, Some(a)) => Ok(a),
            (None, None) => unreachable!("jvp called without tangents"),
        }
    };
    match op {
        Op::MatMul => {
            let a = t[0].map(|ta| tape.matmul(ta, p[1])).transpose()?;
            let b = t[1].map(|tb| tape.matmul(p[0], tb)).transpose()?;
            sum(tape, a, b)
        }
        Op::AddRowBias | Op::AddChannelBias | Op::AddScalar(_) => only_first(op.name()),
        Op::Conv { stride, pad } => {
            if t.get(2).copied().flatten().is_some() {
                return Err(Error::NoSecondOrderRule("conv"));
            }
            let a = t[0].map(|tx| tape.conv(tx, p[1], None, *stride, *pad)).transpose()?;
            let b = t[1].map(|tw| tape.conv(p[0], tw, None, *stride, *pad)).transpose()?;
            sum(tape, a, b)
        }
        Op::Add => sum(tape, t[0], t[1]),
        Op::Sub => match (t[0], t[1]) {
            (Some(a), Some(b)) => tape.sub(a, b),
            (Some(a), None) => Ok(a),
            (None, Some(b)) => tape.scale(b, -1.0),
            (None, None) => unreachable!("jvp called without tangents"),
        },
        Op::Mul => {
            let a = t[0].map(|ta| tape.mul(ta, p[1])).transpose()?;
            let b = t[1].map(|tb| tape.mul(p[0], tb)).transpose()?;
            sum(tape, a, b)
        }
        Op::Softplus => {
            let s = tape.sigmoid(p[0])?;
            tape.mul(s, t[0].expect("unary"))
        }
        Op::Sigmoid => {
            let neg = tape.scale(out, -1.0)?;
            let one_minus = tape.add_scalar(neg, 1.0)?;
            let d = tape.mul(out, one_minus)?;
            tape.mul(d, t[0].expect("unary"))
        }
        Op::Exp => tape.mul(out, t[0].expect("unary")),
        Op::Square => {
            let two_x = tape.scale(p[0], 2.0)?;
            tape.mul(two_x, t[0].expect("unary"))
        }
        Op::Concat { axis } => {
            let mut parts = Vec::with_capacity(p.len());
            for (pi, ti) in p.iter().zip(t) {
                parts.push(match ti {
                    Some(x) => *x,
                    None => {
                        let shape = tape.value(*pi).shape().to_vec();
                        tape.constant(Tensor::zeros(&shape))
                    }
                });
            }
            tape.concat(&parts, *axis)
        }
        // linear single-input maps are their own tangent map
        Op::Scale(_)
        | Op::Sum
        | Op::Mean
        | Op::Slice { .. }
        | Op::Reshape(_)
        | Op::Transpose
        | Op::Broadcast(_)
        | Op::GatherRows(_)
        | Op::Upsample2x
        | Op::Trilerp(_)
        | Op::ResizeBilinear { .. } => tape.apply(op.clone(), &[t[0].expect("unary")]),
        Op::Leaf(_)
        | Op::LabelConv(_)
        | Op::ModDemod { .. }
        | Op::InstanceNorm { .. }
        | Op::Relu
        | Op::LeakyRelu(_)
        | Op::Composite(_)
        | Op::ObjectAlpha(..) => Err(Error::NoSecondOrderRule(op.name())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_discriminator_closed_form() {
        let w = Tensor::vector(vec![0.5, -1.25, 2.0]);
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 3], vec![0.3, 0.1, -0.7]).unwrap());
        let wn = g.param("w", &w.clone().reshaped(&[3, 1]).unwrap()).unwrap();
        let y = g.matmul(x, wn).unwrap();
        let y = g.sum(y).unwrap();
        let r = second_order_grad(&g, y, x).unwrap();
        assert!((r.penalty - w.sum_squares()).abs() < 1e-14);
        let gw = &r.param_grads["w"];
        for (a, b) in gw.data().iter().zip(w.data()) {
            assert!((a - 2.0 * b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_discriminator_has_zero_penalty() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let b = g.param("b", &Tensor::scalar(0.7)).unwrap();
        let z = g.scale(x, 0.0).unwrap();
        let s = g.sum(z).unwrap();
        let y = g.add(s, b).unwrap();
        let r = second_order_grad(&g, y, x).unwrap();
        assert_eq!(r.penalty, 0.0);
        assert_eq!(r.param_grads["b"].item(), 0.0);
    }

    #[test]
    fn relu_on_the_path_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, -2.0]));
        let r = g.relu(x).unwrap();
        let y = g.sum(r).unwrap();
        assert!(matches!(second_order_grad(&g, y, x), Err(Error::NoSecondOrderRule("relu"))));
    }
}
