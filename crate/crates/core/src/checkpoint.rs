//! Versioned container for trained parameters.
//!
//! Layout: the magic `CNET1`, a little-endian u32 header length, a UTF-8
//! header of tab-separated lines, then row-major little-endian `f32` blobs.
//! Header lines:
//!
//! ```text
//! kind    CURATORNET
//! tensor  w1  200x2048  0
//! meta    lambda  0.0001
//! epoch   1  0.6931  0.6930  0.51
//! user    U0001
//! item    I0001
//! ```
//!
//! Tensor offsets are byte offsets from the start of the blob section.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::io::{write_atomic, Reader};

const MAGIC: &[u8] = b"CNET1";

/// One epoch of a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub tensors: Vec<(String, ArrayD<f64>)>,
    /// Echo of the resolved configuration, in insertion order.
    pub meta: Vec<(String, String)>,
    pub history: Vec<EpochRecord>,
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            ..Default::default()
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Removes and returns the named tensor, checking its shape.
    pub fn take_tensor(&mut self, name: &str, shape: &[usize]) -> Result<ArrayD<f64>> {
        let pos = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Shape(format!("checkpoint lacks tensor {name}")))?;
        let t = self.tensors.remove(pos).1;
        if t.shape() != shape {
            return Err(Error::Shape(format!(
                "tensor {name}: checkpoint has {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut header = String::new();
        let _ = writeln!(header, "kind\t{}", self.kind);
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(header, "tensor\t{name}\t{}\t{offset}", shape.join("x"));
            offset += t.len() * 4;
        }
        for (k, v) in &self.meta {
            check_field(k)?;
            check_field(v)?;
            let _ = writeln!(header, "meta\t{k}\t{v}");
        }
        for e in &self.history {
            let _ = writeln!(
                header,
                "epoch\t{}\t{}\t{}\t{}",
                e.epoch, e.train_loss, e.valid_loss, e.valid_accuracy
            );
        }
        for u in &self.users {
            check_field(u)?;
            let _ = writeln!(header, "user\t{u}");
        }
        for i in &self.items {
            check_field(i)?;
            let _ = writeln!(header, "item\t{i}");
        }
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (name, t) in &self.tensors {
            for &v in t.iter() {
                let f = v as f32;
                if !f.is_finite() {
                    return Err(Error::NonFinite(format!("tensor {name}")));
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader::new(path, bytes);
        r.expect_magic(MAGIC)?;
        let header_len = r.u32()? as usize;
        let header = r.str(header_len)?;
        let mut ck = Checkpoint::default();
        let mut layout: Vec<(String, Vec<usize>, usize)> = Vec::new();
        for line in header.lines() {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = || Error::format(path, format!("malformed header line {line:?}"));
            match fields.as_slice() {
                ["kind", k] => ck.kind = k.to_string(),
                ["tensor", name, shape, offset] => {
                    let dims = shape
                        .split('x')
                        .map(|d| d.parse::<usize>().map_err(|_| bad()))
                        .collect::<Result<Vec<_>>>()?;
                    layout.push((name.to_string(), dims, offset.parse().map_err(|_| bad())?));
                }
                ["meta", k, v] => ck.meta.push((k.to_string(), v.to_string())),
                ["epoch", e, tl, vl, va] => ck.history.push(EpochRecord {
                    epoch: e.parse().map_err(|_| bad())?,
                    train_loss: tl.parse().map_err(|_| bad())?,
                    valid_loss: vl.parse().map_err(|_| bad())?,
                    valid_accuracy: va.parse().map_err(|_| bad())?,
                }),
                ["user", u] => ck.users.push(u.to_string()),
                ["item", i] => ck.items.push(i.to_string()),
                _ => return Err(bad()),
            }
        }
        if ck.kind.is_empty() {
            return Err(Error::format(path, "header names no model kind"));
        }
        let mut expected_offset = 0;
        for (name, dims, offset) in layout {
            if offset != expected_offset {
                return Err(Error::format(path, format!("tensor {name} at offset {offset}, expected {expected_offset}")));
            }
            let n: usize = dims.iter().product();
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let v = r.f32()?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("tensor {name} in {}", path.display())));
                }
                values.push(v as f64);
            }
            expected_offset += n * 4;
            let t = ArrayD::from_shape_vec(IxDyn(&dims), values).map_err(|e| Error::format(path, e.to_string()))?;
            ck.tensors.push((name, t));
        }
        r.finish()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        Checkpoint::decode(path, &bytes)
    }

    /// Loads and checks the model kind.
    pub fn load_kind(path: &Path, kind: &str) -> Result<Checkpoint> {
        let ck = Checkpoint::load(path)?;
        if ck.kind != kind {
            return Err(Error::format(path, format!("checkpoint holds a {} model, expected {kind}", ck.kind)));
        }
        Ok(ck)
    }
}

fn check_field(s: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) {
        Err(Error::InvalidArgument(format!("checkpoint field {s:?} contains a tab or newline")))
    } else {
        Ok(())
    }
}
