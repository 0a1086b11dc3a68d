//! Prototype (`NCMP`) and head (`NCMH`) files, plus their JSON views.
//!
//! `NCMP` payload: `n: u64`, `d: u64`, `flags: u16` (bit 0 = L2-normalized),
//! class names, `n` sample counts as `u64`, then the `n x d` means row-major.
//!
//! `NCMH` payload: `d: u64`, `h: u64`, `n: u64`, class names, then `w1`
//! (`h x d`), `b1`, `w2` (`n x h`), `b2`, all row-major.

use std::path::Path;

use serde::Serialize;

use super::binary::{BinReader, BinWriter};
use crate::error::Result;
use crate::head::{EpochLog, HeadParameters};
use crate::prototypes::ClassPrototypes;
use crate::real::Real;
use crate::table::Matrix;

const PROTO_MAGIC: &[u8; 4] = b"NCMP";
const HEAD_MAGIC: &[u8; 4] = b"NCMH";

pub(crate) fn encode_prototypes<T: Real>(p: &ClassPrototypes<T>) -> Vec<u8> {
    let mut w = BinWriter::new(PROTO_MAGIC);
    w.u64(p.n_classes() as u64);
    w.u64(p.dim() as u64);
    w.u16(u16::from(p.l2_normalized));
    w.strings(&p.class_names);
    for &c in &p.counts {
        w.u64(c as u64);
    }
    for v in p.means.as_slice() {
        w.f64(v.as_f64());
    }
    w.finish()
}

pub(crate) fn decode_prototypes<T: Real>(bytes: &[u8]) -> Result<ClassPrototypes<T>> {
    let mut r = BinReader::open(bytes, PROTO_MAGIC, "NCMP")?;
    let n = r.count("class count")?;
    let d = r.count("feature dimension")?;
    let flags = r.u16("flags")?;
    let class_names = r.strings("class names")?;
    let counts = (0..n)
        .map(|_| r.u64("sample counts").map(|c| c as usize))
        .collect::<Result<Vec<_>>>()?;
    let means = r.f64s(n.saturating_mul(d), "prototype means")?;
    r.finish()?;
    ClassPrototypes::new(
        Matrix::from_vec(n, d, means.into_iter().map(T::of).collect())?,
        counts,
        class_names,
        flags & 1 == 1,
    )
}

pub fn save_prototypes<T: Real>(p: &ClassPrototypes<T>, path: impl AsRef<Path>) -> Result<()> {
    super::write_file(path.as_ref(), encode_prototypes(p))?;
    Ok(())
}

pub fn load_prototypes<T: Real>(path: impl AsRef<Path>) -> Result<ClassPrototypes<T>> {
    decode_prototypes(&super::read_file(path.as_ref())?)
}

#[derive(Serialize)]
struct PrototypesView<'a> {
    class_names: &'a [String],
    counts: &'a [usize],
    feature_dim: usize,
    l2_normalized: bool,
    means: Vec<Vec<f64>>,
}

/// Pretty JSON for inspecting prototypes.
pub fn prototypes_json<T: Real>(p: &ClassPrototypes<T>) -> Result<String> {
    let view = PrototypesView {
        class_names: &p.class_names,
        counts: &p.counts,
        feature_dim: p.dim(),
        l2_normalized: p.l2_normalized,
        means: p
            .means
            .iter_rows()
            .map(|r| r.iter().map(|v| v.as_f64()).collect())
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&view)?)
}

pub(crate) fn encode_head<T: Real>(p: &HeadParameters<T>) -> Vec<u8> {
    let mut w = BinWriter::new(HEAD_MAGIC);
    w.u64(p.input_dim() as u64);
    w.u64(p.hidden_dim() as u64);
    w.u64(p.n_classes() as u64);
    w.strings(&p.class_names);
    for t in p.tensors() {
        for v in t {
            w.f64(v.as_f64());
        }
    }
    w.finish()
}

pub(crate) fn decode_head<T: Real>(bytes: &[u8]) -> Result<HeadParameters<T>> {
    let mut r = BinReader::open(bytes, HEAD_MAGIC, "NCMH")?;
    let d = r.count("input dimension")?;
    let h = r.count("hidden dimension")?;
    let n = r.count("class count")?;
    let class_names = r.strings("class names")?;
    let mut read = |len: usize, what: &str| -> Result<Vec<T>> {
        Ok(r.f64s(len, what)?.into_iter().map(T::of).collect())
    };
    let w1 = Matrix::from_vec(h, d, read(h.saturating_mul(d), "w1")?)?;
    let b1 = read(h, "b1")?;
    let w2 = Matrix::from_vec(n, h, read(n.saturating_mul(h), "w2")?)?;
    let b2 = read(n, "b2")?;
    r.finish()?;
    let params = HeadParameters {
        w1,
        b1,
        w2,
        b2,
        class_names,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_head<T: Real>(p: &HeadParameters<T>, path: impl AsRef<Path>) -> Result<()> {
    super::write_file(path.as_ref(), encode_head(p))?;
    Ok(())
}

pub fn load_head<T: Real>(path: impl AsRef<Path>) -> Result<HeadParameters<T>> {
    decode_head(&super::read_file(path.as_ref())?)
}

pub fn save_training_log(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    super::write_file(path.as_ref(), serde_json::to_string_pretty(log)? + "\n")?;
    Ok(())
}
