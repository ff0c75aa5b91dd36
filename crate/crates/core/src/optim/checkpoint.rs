//! `NFCK` checkpoints: little-endian records of named f32 tensors.
//!
//! Layout: magic `NFCK`, u32 version, u32 record count, then per record
//! u16 name length, UTF-8 name, u8 rank, u32 dims, f32 values. Adam moments,
//! step counts and the EMA shadow are stored as extra records with suffixed names.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::optim::{ParamEntry, ParamStore};

pub const MAGIC: &[u8; 4] = b"NFCK";
pub const VERSION: u32 = 1;

const SUFFIX_M: &str = "@adam.m";
const SUFFIX_V: &str = "@adam.v";
const SUFFIX_STEP: &str = "@adam.step";
const SUFFIX_EMA: &str = "@ema";

pub fn encode_records(records: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| Error::format(name.as_str(), "tensor name too long"))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::format(name.as_str(), "tensor rank too large"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::format(name.as_str(), "dimension too large"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_records(buf: &[u8], path: &str) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "byte 0: bad magic, expected NFCK"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("byte 4: unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let at = r.pos;
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, format!("byte {at}: tensor name is not UTF-8")))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.filter(|n| n.checked_mul(4).is_some_and(|b| b <= buf.len()));
        let n = n.ok_or_else(|| Error::format(path, format!("byte {at}: tensor `{name}` too large")))?;
        let data = r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::format(path, format!("byte {}: trailing data", r.pos)));
    }
    Ok(out)
}

fn store_records(store: &ParamStore) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (name, e) in store.entries() {
        out.push((name.clone(), e.value.clone()));
        out.push((format!("{name}{SUFFIX_M}"), e.m.clone()));
        out.push((format!("{name}{SUFFIX_V}"), e.v.clone()));
        out.push((format!("{name}{SUFFIX_STEP}"), Tensor::scalar(e.step as f64)));
    }
    if let Some(ema) = store.ema() {
        for (name, t) in ema {
            out.push((format!("{name}{SUFFIX_EMA}"), t.clone()));
        }
    }
    out
}

pub fn encode_store(store: &ParamStore) -> Result<Vec<u8>> {
    encode_records(&store_records(store))
}

pub fn decode_store(buf: &[u8], path: &str) -> Result<ParamStore> {
    let mut values = BTreeMap::new();
    let mut extra: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, t) in decode_records(buf, path)? {
        if name.contains('@') {
            extra.insert(name, t);
        } else {
            values.insert(name, t);
        }
    }
    let mut entries = BTreeMap::new();
    let mut ema = BTreeMap::new();
    for (name, value) in values {
        let zeros = Tensor::zeros(value.shape());
        let pick = |suffix: &str| -> Result<Option<Tensor>> {
            match extra.get(&format!("{name}{suffix}")) {
                Some(t) if t.shape() != value.shape() => {
                    Err(Error::format(path, format!("`{name}{suffix}` shape differs from `{name}`")))
                }
                other => Ok(other.cloned()),
            }
        };
        let m = pick(SUFFIX_M)?.unwrap_or_else(|| zeros.clone());
        let v = pick(SUFFIX_V)?.unwrap_or_else(|| zeros.clone());
        if let Some(e) = pick(SUFFIX_EMA)? {
            ema.insert(name.clone(), e);
        }
        let step = extra.get(&format!("{name}{SUFFIX_STEP}")).map_or(0, |t| t.data()[0] as u64);
        entries.insert(name, ParamEntry { value, m, v, step });
    }
    let ema = (!ema.is_empty()).then_some(ema);
    Ok(ParamStore::from_parts(entries, ema))
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, encode_store(store)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let buf = std::fs::read(path)?;
    decode_store(&buf, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::AdamConfig;
    use rand::SeedableRng;

    #[test]
    fn round_trip_preserves_f32_values_and_state() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        s.init_weight("layer.w", &[3, 2], 3, &mut rng);
        s.init_const("layer.b", &[2], 0.0);
        s.enable_ema();
        let grads = BTreeMap::from([("layer.b".to_string(), Tensor::vector(vec![0.5, -0.25]))]);
        s.adam_step(&grads, &AdamConfig::default()).unwrap();
        s.ema_update(0.5);
        let back = decode_store(&encode_store(&s).unwrap(), "mem").unwrap();
        for (name, e) in s.entries() {
            let b = back.entry(name).unwrap();
            assert_eq!(b.step, e.step);
            for (x, y) in b.value.data().iter().zip(e.value.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        assert!(back.ema().is_some());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_records(&[("ab".into(), Tensor::vector(vec![1.0]))]).unwrap();
        assert_eq!(&bytes[0..4], b"NFCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(&bytes[12..14], &[2, 0]);
        assert_eq!(&bytes[14..16], b"ab");
        assert_eq!(bytes[16], 1);
        assert_eq!(bytes.len(), 16 + 1 + 4 + 4);
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = encode_records(&[("w".into(), Tensor::vector(vec![1.0, 2.0]))]).unwrap();
        let err = decode_records(&bytes[..bytes.len() - 1], "ck").unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }
}
