use crate::error::{Error, Result};

/// One shaded sample of a depth-sorted ray.
#[derive(Clone, Copy, Debug)]
pub struct ShadedSample<'a> {
    pub t: f64,
    pub delta: f64,
    pub sigma: f64,
    pub feature: &'a [f64],
    /// `-1` for stuff, otherwise the object index.
    pub tag: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composited {
    pub feature: Vec<f64>,
    pub weights: Vec<f64>,
    pub sky_weight: f64,
}

/// Front-to-back alpha compositing with the sky filling the residual weight.
pub fn composite_ray(samples: &[ShadedSample], sky: &[f64]) -> Result<Composited> {
    if samples.windows(2).any(|w| !(w[0].t <= w[1].t)) {
        return Err(Error::UnsortedBatch);
    }
    let mut feature = vec![0.0; sky.len()];
    let mut weights = Vec::with_capacity(samples.len());
    let mut trans = 1.0;
    let mut total = 0.0;
    for s in samples {
        if !(s.sigma >= 0.0 && s.delta >= 0.0) {
            return Err(Error::NonFinite { what: format!("sample (σ={}, δ={})", s.sigma, s.delta) });
        }
        if s.feature.len() != sky.len() {
            return Err(Error::shape("composite_ray", format!("feature {} vs sky {}", s.feature.len(), sky.len())));
        }
        let alpha = 1.0 - (-s.sigma * s.delta).exp();
        let w = trans * alpha;
        for (a, f) in feature.iter_mut().zip(s.feature) {
            *a += w * f;
        }
        weights.push(w);
        total += w;
        trans *= 1.0 - alpha;
    }
    let sky_weight = 1.0 - total;
    for (a, f) in feature.iter_mut().zip(sky) {
        *a += sky_weight * f;
    }
    Ok(Composited { feature, weights, sky_weight })
}

/// Accumulated weight of the samples tagged `k`.
pub fn object_alpha(samples: &[ShadedSample], weights: &[f64], k: usize) -> f64 {
    samples.iter().zip(weights).filter(|(s, _)| s.tag == k as i64).map(|(_, w)| w).sum()
}
