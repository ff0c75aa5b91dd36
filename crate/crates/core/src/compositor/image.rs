use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const NFIM_MAGIC: &[u8; 4] = b"NFIM";

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6) of a `[3, H, W]` image with values in `[0, 1]`.
pub fn encode_ppm(rgb: &Tensor) -> Result<Vec<u8>> {
    let s = rgb.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("encode_ppm", format!("{s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    let d = rgb.data();
    for i in 0..h * w {
        for c in 0..3 {
            out.push(quantize(d[c * h * w + i]));
        }
    }
    Ok(out)
}

/// Binary PGM (P5) of a `[H, W]` map with values in `[0, 1]`.
pub fn encode_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(Error::shape("encode_pgm", format!("{s:?}")));
    }
    let mut out = format!("P5\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(map.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Parses a P6 image with maxval 255 into `[3, H, W]` in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8], path: &str) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, format!("truncated header at byte {pos}")));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::format(path, format!("expected P6, found {:?}", fields[0])));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i].parse().map_err(|_| Error::format(path, format!("bad header field {:?}", fields[i])))
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval {maxval} unsupported")));
    }
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != 3 * w * h {
        return Err(Error::format(path, format!("expected {} pixel bytes at byte {pos}, found {}", 3 * w * h, body.len())));
    }
    let mut data = vec![0.0; 3 * w * h];
    for i in 0..w * h {
        for c in 0..3 {
            data[c * w * h + i] = body[3 * i + c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn write_ppm(rgb: &Tensor, path: &Path) -> Result<()> {
    std::fs::write(path, encode_ppm(rgb)?)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    decode_ppm(&std::fs::read(path)?, &path.display().to_string())
}

/// Raw feature image dump: magic, `u32` H, W, M, then `f32` values in
/// `H × W × M` order, all little-endian. Input is `[M, H, W]`.
pub fn encode_nfim(features: &Tensor) -> Result<Vec<u8>> {
    let s = features.shape();
    if s.len() != 3 {
        return Err(Error::shape("encode_nfim", format!("{s:?}")));
    }
    let (m, h, w) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(16 + 4 * m * h * w);
    out.extend_from_slice(NFIM_MAGIC);
    for d in [h, w, m] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for i in 0..h * w {
        for c in 0..m {
            out.extend_from_slice(&(features.data()[c * h * w + i] as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Reads an NFIM dump back to `[M, H, W]`.
pub fn decode_nfim(bytes: &[u8], path: &str) -> Result<Tensor> {
    if bytes.len() < 16 || &bytes[..4] != NFIM_MAGIC {
        return Err(Error::format(path, "missing NFIM header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (h, w, m) = (dim(0), dim(1), dim(2));
    if bytes.len() != 16 + 4 * h * w * m {
        return Err(Error::format(path, format!("expected {} bytes, found {}", 16 + 4 * h * w * m, bytes.len())));
    }
    let mut data = vec![0.0; m * h * w];
    for (j, chunk) in bytes[16..].chunks_exact(4).enumerate() {
        let (i, c) = (j / m, j % m);
        data[c * h * w + i] = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
    }
    Tensor::new(vec![m, h, w], data)
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
pub fn psnr(a: &Tensor, b: &Tensor) -> f64 {
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    -10.0 * mse.log10()
}
