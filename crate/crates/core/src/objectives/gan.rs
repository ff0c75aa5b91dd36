use std::collections::BTreeMap;

use crate::autodiff::{second_order_grad, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::objectives::Discriminator;

/// Discriminator loss value, its parts, and parameter gradients.
#[derive(Clone, Debug)]
pub struct DLoss {
    pub loss: f64,
    pub adversarial: f64,
    pub r1: f64,
    pub grads: BTreeMap<String, Tensor>,
    pub real_logits: Vec<f64>,
    pub fake_logits: Vec<f64>,
}

fn mean_of(g: &mut Graph, terms: &[NodeId]) -> Result<Option<NodeId>> {
    let Some((&first, rest)) = terms.split_first() else { return Ok(None) };
    let mut acc = first;
    for &t in rest {
        acc = g.add(acc, t)?;
    }
    Ok(Some(g.scale(acc, 1.0 / terms.len() as f64)?))
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if let Some(l) = logits.iter().find(|l| !l.is_finite()) {
        return Err(Error::NonFinite { what: format!("discriminator logit {l}") });
    }
    Ok(())
}

/// `E[softplus(−D(real))] + E[softplus(D(fake))] + λ·E[‖∇ₓD(real)‖²]`.
pub fn gan_loss_d(d: &Discriminator, real: &[Tensor], fake: &[Tensor], lambda_r1: f64) -> Result<DLoss> {
    let mut g = Graph::new();
    let mut real_terms = Vec::new();
    let mut fake_terms = Vec::new();
    let mut real_logits = Vec::new();
    let mut fake_logits = Vec::new();
    for x in real {
        let xi = g.constant(x.clone());
        let l = d.logit(&mut g, xi)?;
        real_logits.push(g.value(l).item());
        let neg = g.scale(l, -1.0)?;
        real_terms.push(g.softplus(neg)?);
    }
    for x in fake {
        let xi = g.constant(x.clone());
        let l = d.logit(&mut g, xi)?;
        fake_logits.push(g.value(l).item());
        fake_terms.push(g.softplus(l)?);
    }
    check_finite(&real_logits)?;
    check_finite(&fake_logits)?;
    let parts: Vec<NodeId> = [mean_of(&mut g, &real_terms)?, mean_of(&mut g, &fake_terms)?].into_iter().flatten().collect();
    let mut grads: BTreeMap<String, Tensor> =
        d.params.iter().map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape()))).collect();
    let mut adversarial = 0.0;
    if !parts.is_empty() {
        let mut total = parts[0];
        for &p in &parts[1..] {
            total = g.add(total, p)?;
        }
        adversarial = g.value(total).item();
        let gr = g.backward_scalar(total)?;
        for (name, t) in gr.params() {
            if let Some(acc) = grads.get_mut(&name) {
                acc.add_assign(&t);
            }
        }
    }
    let mut r1 = 0.0;
    if lambda_r1 != 0.0 && !real.is_empty() {
        let scale = lambda_r1 / real.len() as f64;
        for x in real {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let l = d.logit(&mut g, xi)?;
            let pen = second_order_grad(&g, l, xi)?;
            r1 += scale * pen.penalty;
            for (name, t) in pen.param_grads {
                if let Some(acc) = grads.get_mut(&name) {
                    acc.add_assign(&t.map(|v| v * scale));
                }
            }
        }
    }
    Ok(DLoss { loss: adversarial + r1, adversarial, r1, grads, real_logits, fake_logits })
}

/// `E[softplus(−D(fake))]` recorded on the generator's graph.
pub fn gan_loss_g(g: &mut Graph, d: &Discriminator, fakes: &[NodeId]) -> Result<NodeId> {
    let mut terms = Vec::with_capacity(fakes.len());
    for &x in fakes {
        let l = d.logit(g, x)?;
        check_finite(&[g.value(l).item()])?;
        let neg = g.scale(l, -1.0)?;
        terms.push(g.softplus(neg)?);
    }
    match mean_of(g, &terms)? {
        Some(m) => Ok(m),
        None => Ok(g.constant(Tensor::scalar(0.0))),
    }
}
