use std::f64::consts::PI;

use crate::autodiff::Tensor;

/// Frequency encoding: for band `l` and element `j`, emits `sin(2^l π p_j)`, `cos(2^l π p_j)`.
pub fn positional_encoding(p: &[f64], bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * bands * p.len());
    encode_into(p, bands, &mut out);
    out
}

fn encode_into(p: &[f64], bands: usize, out: &mut Vec<f64>) {
    let mut freq = PI;
    for _ in 0..bands {
        for &x in p {
            let (s, c) = (freq * x).sin_cos();
            out.push(s);
            out.push(c);
        }
        freq *= 2.0;
    }
}

pub fn encoded_len(dim: usize, bands: usize) -> usize {
    2 * bands * dim
}

/// Encodes each 3-vector into one row of an `[N, 6·bands]` tensor.
pub fn encode_points(points: &[[f64; 3]], bands: usize) -> Tensor {
    let mut data = Vec::with_capacity(points.len() * encoded_len(3, bands));
    for p in points {
        encode_into(p, bands, &mut data);
    }
    Tensor::new(vec![points.len(), encoded_len(3, bands)], data).expect("sized")
}
