//! Parameter storage, initialization, Adam, EMA and checkpoints.

pub mod checkpoint;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

/// Named parameters with Adam moments and an optional EMA shadow.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    ema: Option<BTreeMap<String, Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        if let Some(ema) = &mut self.ema {
            ema.insert(name.to_string(), value.clone());
        }
        self.entries.insert(name.to_string(), ParamEntry { value, m, v, step: 0 });
    }

    /// He-uniform weights `U(±sqrt(6 / fan_in))`.
    pub fn init_weight(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        self.init_uniform(name, shape, bound, rng);
    }

    pub fn init_uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut impl Rng) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("sized"));
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) {
        self.insert(name, Tensor::full(shape, value));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).map(|e| &e.value).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let e = self.entries.get_mut(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if e.value.shape() != value.shape() {
            return Err(Error::shape("param", format!("{name}: {:?} -> {:?}", e.value.shape(), value.shape())));
        }
        e.value = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Registers parameter `name` on `g`.
    pub fn node(&self, g: &mut Graph, name: &str) -> Result<NodeId> {
        g.param(name, self.get(name)?)
    }

    /// A copy holding only the parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let entries = self.entries.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, e)| (k.clone(), e.clone())).collect();
        let ema = self.ema.as_ref().map(|m| {
            m.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.clone(), v.clone())).collect()
        });
        ParamStore { entries, ema }
    }

    /// Merges `other` into `self`, replacing entries with equal names.
    pub fn merge(&mut self, other: ParamStore) {
        if let (Some(ema), Some(o)) = (&mut self.ema, &other.ema) {
            ema.extend(o.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        self.entries.extend(other.entries);
    }

    /// Adam with bias correction. Parameters without a gradient see a zero gradient.
    /// Non-finite gradients are rejected before any state changes.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads {
            let e = self.entries.get(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if g.shape() != e.value.shape() {
                return Err(Error::shape("adam", format!("{name}: grad {:?} for {:?}", g.shape(), e.value.shape())));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite { what: format!("gradient of {name}") });
            }
        }
        for (name, e) in self.entries.iter_mut() {
            e.step += 1;
            let t = e.step as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            let g = grads.get(name);
            let (value, m, v) = (e.value.data_mut(), e.m.data_mut(), e.v.data_mut());
            for i in 0..value.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                value[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Starts tracking an EMA shadow initialized to the current values.
    pub fn enable_ema(&mut self) {
        self.ema = Some(self.entries.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect());
    }

    pub fn ema(&self) -> Option<&BTreeMap<String, Tensor>> {
        self.ema.as_ref()
    }

    /// `shadow ← decay·shadow + (1 − decay)·θ`.
    pub fn ema_update(&mut self, decay: f64) {
        let Some(ema) = &mut self.ema else { return };
        for (name, shadow) in ema.iter_mut() {
            if let Some(e) = self.entries.get(name) {
                for (s, p) in shadow.data_mut().iter_mut().zip(e.value.data()) {
                    *s = decay * *s + (1.0 - decay) * p;
                }
            }
        }
    }

    /// A store whose values are the EMA shadow (or a plain copy without one).
    pub fn ema_params(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, e) in &self.entries {
            let v = self.ema.as_ref().and_then(|m| m.get(name)).unwrap_or(&e.value);
            out.insert(name, v.clone());
        }
        out
    }

    /// Sum of squared differences to `other` over shared names.
    pub fn distance_sq(&self, other: &ParamStore) -> f64 {
        self.entries
            .iter()
            .filter_map(|(k, e)| other.entries.get(k).map(|o| e.value.zip_map(&o.value, |a, b| a - b).sum_squares()))
            .sum()
    }

    pub(crate) fn entries(&self) -> &BTreeMap<String, ParamEntry> {
        &self.entries
    }

    pub(crate) fn from_parts(entries: BTreeMap<String, ParamEntry>, ema: Option<BTreeMap<String, Tensor>>) -> Self {
        Self { entries, ema }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(v));
        s
    }

    fn grad(v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("x".to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(0.7);
        s.adam_step(&grad(0.0), &AdamConfig::default()).unwrap();
        assert_eq!(s.get("x").unwrap().item(), 0.7);
        assert_eq!(s.entry("x").unwrap().step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.0);
        s.adam_step(&grad(1.0), &AdamConfig::with_lr(0.01)).unwrap();
        assert!((s.get("x").unwrap().item() + 0.01).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut s = scalar_store(1.0);
        assert!(s.adam_step(&grad(f64::NAN), &AdamConfig::default()).is_err());
        assert_eq!(s, scalar_store(1.0));
    }

    #[test]
    fn quadratic_matches_scalar_oracle() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut s = scalar_store(1.0);
        // independent scalar Adam
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut prev = 1.0f64;
        for t in 1..=10 {
            let theta = s.get("x").unwrap().item();
            s.adam_step(&grad(2.0 * theta), &cfg).unwrap();
            let now = s.get("x").unwrap().item();
            assert!(now.abs() < prev.abs());
            prev = now;

            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((s.get("x").unwrap().item() - x).abs() < 1e-12);
    }

    #[test]
    fn ema_limits_and_closed_form() {
        let mut s = scalar_store(2.0);
        s.enable_ema();
        s.set("x", Tensor::scalar(5.0)).unwrap();
        s.ema_update(1.0);
        assert_eq!(s.ema().unwrap()["x"].item(), 2.0);
        s.ema_update(0.0);
        assert_eq!(s.ema().unwrap()["x"].item(), 5.0);

        let mut s = scalar_store(2.0);
        s.enable_ema();
        s.set("x", Tensor::scalar(5.0)).unwrap();
        for _ in 0..10 {
            s.ema_update(0.9);
        }
        let want = 5.0 + (2.0 - 5.0) * 0.9f64.powi(10);
        assert!((s.ema().unwrap()["x"].item() - want).abs() < 1e-12);
    }
}
