//! Binary checkpoints of named `f64` arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header  "OL2O" | version u32 = 1 | entry count u32 | body length u64
//! entry   name length u32 | UTF-8 name | dtype u8 (1 = f64) | ndim u32
//!         | ndim × u64 dims | Π dims × f64 payload
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::meta::{LstmLayer, LstmOptimizerParams};
use crate::numerics::DenseMatrix;
use crate::unrolled::{Layer, SupportSchedule, UnrolledParams, Variant};

pub const MAGIC: [u8; 4] = *b"OL2O";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<NamedArray>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, dims: &[usize], data: Vec<f64>) -> Result<()> {
        let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if count != Some(data.len()) {
            return Err(Error::contract(format!(
                "array {name:?}: dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        if self.get(name).is_some() {
            return Err(Error::contract(format!("duplicate array name {name:?}")));
        }
        self.entries.push(NamedArray {
            name: name.to_string(),
            dims: dims.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn push_matrix(&mut self, name: &str, m: &DenseMatrix) -> Result<()> {
        self.push(name, &[m.rows(), m.cols()], m.data().to_vec())
    }

    pub fn push_scalar(&mut self, name: &str, v: f64) -> Result<()> {
        self.push(name, &[], vec![v])
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str) -> Result<&NamedArray> {
        self.get(name)
            .ok_or_else(|| format_err(0, format!("checkpoint has no array {name:?}")))
    }

    pub fn matrix(&self, name: &str) -> Result<DenseMatrix> {
        let e = self.require(name)?;
        match e.dims[..] {
            [r, c] => DenseMatrix::from_col_major(r, c, e.data.clone()),
            _ => Err(format_err(0, format!("{name:?} is not a matrix (dims {:?})", e.dims))),
        }
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let e = self.require(name)?;
        if e.data.len() != 1 {
            return Err(format_err(0, format!("{name:?} is not a scalar (dims {:?})", e.dims)));
        }
        Ok(e.data[0])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        for e in &self.entries {
            body.extend((e.name.len() as u32).to_le_bytes());
            body.extend(e.name.as_bytes());
            body.push(DTYPE_F64);
            body.extend((e.dims.len() as u32).to_le_bytes());
            for &d in &e.dims {
                body.extend((d as u64).to_le_bytes());
            }
            for v in &e.data {
                body.extend(v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((self.entries.len() as u32).to_le_bytes());
        out.extend((body.len() as u64).to_le_bytes());
        out.extend(body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(format_err(0, format!("bad magic {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(format_err(4, format!("unsupported version {version}")));
        }
        let count = r.u32("entry count")?;
        let body_len = r.u64("body length")?;
        let remaining = (bytes.len() - HEADER_LEN) as u64;
        if body_len != remaining {
            return Err(format_err(12, format!("body length {body_len} but {remaining} bytes follow the header")));
        }
        let mut ck = Checkpoint::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| format_err(at + 4, "name is not UTF-8"))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(format_err(at, format!("duplicate array name {name:?}")));
            }
            let dtype_at = r.pos;
            let dtype = r.take(1, "dtype")?[0];
            if dtype != DTYPE_F64 {
                return Err(format_err(dtype_at, format!("unsupported dtype {dtype}")));
            }
            let ndim = r.u32("ndim")? as usize;
            let mut dims = Vec::with_capacity(ndim.min(16));
            let mut total: Option<usize> = Some(1);
            for _ in 0..ndim {
                let dim_at = r.pos;
                let d = usize::try_from(r.u64("dim")?).map_err(|_| format_err(dim_at, "dimension overflows usize"))?;
                total = total.and_then(|t| t.checked_mul(d));
                dims.push(d);
            }
            let payload_at = r.pos;
            let bytes_needed = total
                .and_then(|t| t.checked_mul(8))
                .ok_or_else(|| format_err(payload_at, format!("dims {dims:?} overflow")))?;
            let raw = r.take(bytes_needed, "payload")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            ck.entries.push(NamedArray { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(format_err(r.pos, "trailing bytes after the last entry"));
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format_err(self.pos, format!("truncated file while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, ck.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

/// Serializes an unrolled network, including its measurement matrix.
pub fn unrolled_to_checkpoint(p: &UnrolledParams) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new();
    ck.push_scalar("unrolled.variant", p.variant.code() as f64)?;
    ck.push("unrolled.support", &[2], vec![p.support.p_step, p.support.p_max])?;
    ck.push_scalar("unrolled.gram_regularized", if p.gram_regularized { 1.0 } else { 0.0 })?;
    ck.push_matrix("unrolled.a", &p.a)?;
    if let Some(w) = &p.alista_w {
        ck.push_matrix("unrolled.alista_w", w)?;
    }
    for (k, layer) in p.layers.iter().enumerate() {
        match layer {
            Layer::Lista { w_e, s, theta } => {
                ck.push_matrix(&format!("layer{k}.w_e"), w_e)?;
                ck.push_matrix(&format!("layer{k}.s"), s)?;
                ck.push_scalar(&format!("layer{k}.theta"), *theta)?;
            }
            Layer::Coupled { w, theta } => {
                ck.push_matrix(&format!("layer{k}.w"), w)?;
                ck.push_scalar(&format!("layer{k}.theta"), *theta)?;
            }
            Layer::Alista { gamma, theta } => {
                ck.push_scalar(&format!("layer{k}.gamma"), *gamma)?;
                ck.push_scalar(&format!("layer{k}.theta"), *theta)?;
            }
        }
    }
    Ok(ck)
}

pub fn unrolled_from_checkpoint(ck: &Checkpoint) -> Result<UnrolledParams> {
    let code = ck.scalar("unrolled.variant")?;
    let variant = Variant::from_code(code as u8)
        .filter(|_| code.fract() == 0.0 && (0.0..=255.0).contains(&code))
        .ok_or_else(|| format_err(0, format!("unknown variant code {code}")))?;
    let support = ck.require("unrolled.support")?;
    if support.data.len() != 2 {
        return Err(format_err(0, "support schedule needs two values"));
    }
    let a = ck.matrix("unrolled.a")?;
    let alista_w = match variant {
        Variant::Alista => Some(ck.matrix("unrolled.alista_w")?),
        _ => None,
    };
    let mut layers = Vec::new();
    for k in 0.. {
        if ck.get(&format!("layer{k}.theta")).is_none() {
            break;
        }
        let theta = ck.scalar(&format!("layer{k}.theta"))?;
        layers.push(match variant {
            Variant::Lista => Layer::Lista {
                w_e: ck.matrix(&format!("layer{k}.w_e"))?,
                s: ck.matrix(&format!("layer{k}.s"))?,
                theta,
            },
            Variant::ListaCp | Variant::ListaCpss => Layer::Coupled {
                w: ck.matrix(&format!("layer{k}.w"))?,
                theta,
            },
            Variant::Alista => Layer::Alista {
                gamma: ck.scalar(&format!("layer{k}.gamma"))?,
                theta,
            },
        });
    }
    Ok(UnrolledParams {
        variant,
        a,
        layers,
        alista_w,
        support: SupportSchedule {
            p_step: support.data[0],
            p_max: support.data[1],
        },
        gram_regularized: ck.scalar("unrolled.gram_regularized")? != 0.0,
    })
}

const GATE_NAMES: [&str; 4] = ["i", "f", "g", "o"];

pub fn lstm_to_checkpoint(p: &LstmOptimizerParams) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new();
    ck.push(
        "lstm.shape",
        &[4],
        vec![p.hidden as f64, p.layers.len() as f64, p.kappa, p.preprocess_p],
    )?;
    for (l, layer) in p.layers.iter().enumerate() {
        for (g, gate) in GATE_NAMES.iter().enumerate() {
            ck.push_matrix(&format!("lstm.l{l}.w_{gate}"), &layer.w[g])?;
            ck.push_matrix(&format!("lstm.l{l}.u_{gate}"), &layer.u[g])?;
            ck.push_matrix(&format!("lstm.l{l}.b_{gate}"), &layer.b[g])?;
        }
    }
    ck.push_matrix("lstm.w_out", &p.w_out)?;
    Ok(ck)
}

pub fn lstm_from_checkpoint(ck: &Checkpoint) -> Result<LstmOptimizerParams> {
    let shape = ck.require("lstm.shape")?;
    let [hidden, layers, kappa, preprocess_p] = shape.data[..] else {
        return Err(format_err(0, "lstm.shape needs four values"));
    };
    let hidden = hidden as usize;
    let mut out = Vec::new();
    for l in 0..layers as usize {
        let read = |kind: &str| -> Result<[DenseMatrix; 4]> {
            let ms = GATE_NAMES
                .iter()
                .map(|gate| ck.matrix(&format!("lstm.l{l}.{kind}_{gate}")))
                .collect::<Result<Vec<_>>>()?;
            Ok(ms.try_into().expect("four gates"))
        };
        out.push(LstmLayer {
            w: read("w")?,
            u: read("u")?,
            b: read("b")?,
        });
    }
    let p = LstmOptimizerParams {
        hidden,
        layers: out,
        w_out: ck.matrix("lstm.w_out")?,
        kappa,
        preprocess_p,
    };
    let h = p.hidden;
    let shapes_ok = p.w_out.shape() == (1, h)
        && p.layers.iter().enumerate().all(|(l, layer)| {
            let input = if l == 0 { crate::meta::INPUT_FEATURES } else { h };
            (0..4).all(|g| {
                layer.w[g].shape() == (h, input) && layer.u[g].shape() == (h, h) && layer.b[g].shape() == (h, 1)
            })
        });
    if !shapes_ok {
        return Err(format_err(0, "LSTM arrays do not match the stored shape"));
    }
    Ok(p)
}
