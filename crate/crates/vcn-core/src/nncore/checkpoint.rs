//! Checkpoint files: structured-text header + raw little-endian payload.
//!
//! The header lists names, shapes, numeric width, and the global step in
//! plain text, terminated by an `end` line; the payload that follows holds
//! the values of every tensor (and optionally Adam moments) in header
//! order. Loading is all-or-nothing: any malformed header line, width
//! mismatch, or payload length error fails before any state is handed out.

use super::{Adam, NnError, ParamStore, Scalar, Tensor2, Width};
use std::collections::BTreeMap;
use std::path::Path;

const MAGIC: &str = "vcn-checkpoint v1";

/// Optimizer moments captured alongside the parameters.
#[derive(Clone, Debug)]
pub struct AdamState<S: Scalar> {
    pub t: u64,
    pub m: BTreeMap<String, Vec<S>>,
    pub v: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn capture(opt: &Adam<S>) -> Self {
        let (t, m, v) = opt.snapshot();
        AdamState { t, m: m.clone(), v: v.clone() }
    }

    pub fn apply_to(&self, opt: &mut Adam<S>) {
        opt.restore(self.t, self.m.clone(), self.v.clone());
    }
}

/// Everything needed to resume training deterministically.
#[derive(Clone, Debug)]
pub struct Checkpoint<S: Scalar> {
    pub step: u64,
    pub params: ParamStore<S>,
    pub adam: Option<AdamState<S>>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(step: u64, params: ParamStore<S>, adam: Option<AdamState<S>>) -> Self {
        Checkpoint { step, params, adam }
    }
}

fn check_name(name: &str) -> Result<(), NnError> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(NnError::Checkpoint(format!("invalid parameter name {name:?}")));
    }
    Ok(())
}

pub fn save_checkpoint<S: Scalar>(path: &Path, ckpt: &Checkpoint<S>) -> Result<(), NnError> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("width {}\n", S::WIDTH.name()));
    header.push_str(&format!("step {}\n", ckpt.step));
    for (name, tensor) in ckpt.params.iter() {
        check_name(name)?;
        header.push_str(&format!("tensor {} {} {}\n", name, tensor.rows(), tensor.cols()));
    }
    if let Some(adam) = &ckpt.adam {
        header.push_str(&format!("adam t {}\n", adam.t));
        for (which, moments) in [("m", &adam.m), ("v", &adam.v)] {
            for (name, values) in moments {
                check_name(name)?;
                let tensor = ckpt.params.get(name).map_err(|_| {
                    NnError::Checkpoint(format!("moment {which} {name} has no matching tensor"))
                })?;
                if values.len() != tensor.values().len() {
                    return Err(NnError::Checkpoint(format!(
                        "moment {which} {name} has {} values, tensor has {}",
                        values.len(),
                        tensor.values().len()
                    )));
                }
                header.push_str(&format!("moment {which} {name} {}\n", values.len()));
            }
        }
    }
    header.push_str("end\n");

    let mut bytes = header.into_bytes();
    for (_, tensor) in ckpt.params.iter() {
        for &v in tensor.values() {
            v.write_le(&mut bytes);
        }
    }
    if let Some(adam) = &ckpt.adam {
        for moments in [&adam.m, &adam.v] {
            for values in moments.values() {
                for &v in values {
                    v.write_le(&mut bytes);
                }
            }
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn bad(line_no: usize, msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(format!("header line {line_no}: {}", msg.into()))
}

fn parse_num<T: std::str::FromStr>(tok: &str, line_no: usize, what: &str) -> Result<T, NnError> {
    tok.parse().map_err(|_| bad(line_no, format!("bad {what} {tok:?}")))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>, NnError> {
    let bytes = std::fs::read(path)?;
    let end_marker: &[u8] = b"\nend\n";
    let end_at = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| NnError::Checkpoint("missing end marker".into()))?;
    let header = std::str::from_utf8(&bytes[..end_at])
        .map_err(|_| NnError::Checkpoint("header is not valid UTF-8".into()))?;
    let payload = &bytes[end_at + end_marker.len()..];

    let mut lines = header.lines().enumerate();
    let expect = |got: Option<(usize, &str)>, what: &str| -> Result<(usize, String), NnError> {
        got.map(|(i, l)| (i + 1, l.to_string()))
            .ok_or_else(|| NnError::Checkpoint(format!("truncated header, expected {what}")))
    };

    let (no, magic) = expect(lines.next(), "magic")?;
    if magic != MAGIC {
        return Err(bad(no, format!("bad magic {magic:?}")));
    }
    let (no, width_line) = expect(lines.next(), "width")?;
    let width = match width_line.strip_prefix("width ") {
        Some("f32") => Width::F32,
        Some("f64") => Width::F64,
        _ => return Err(bad(no, format!("bad width line {width_line:?}"))),
    };
    if width != S::WIDTH {
        return Err(NnError::Checkpoint(format!(
            "width mismatch: file is {}, loader is {}",
            width.name(),
            S::WIDTH.name()
        )));
    }
    let (no, step_line) = expect(lines.next(), "step")?;
    let step: u64 = match step_line.strip_prefix("step ") {
        Some(tok) => parse_num(tok, no, "step")?,
        None => return Err(bad(no, format!("bad step line {step_line:?}"))),
    };

    // Shapes first; payload is decoded only after the whole header parses.
    let mut tensor_shapes: Vec<(String, usize, usize)> = Vec::new();
    let mut adam_t: Option<u64> = None;
    let mut moment_specs: Vec<(bool, String, usize)> = Vec::new(); // (is_m, name, len)
    for (i, line) in lines {
        let no = i + 1;
        let toks: Vec<&str> = line.split(' ').collect();
        match toks.as_slice() {
            ["tensor", name, rows, cols] => {
                if adam_t.is_some() {
                    return Err(bad(no, "tensor line after adam section"));
                }
                tensor_shapes.push((
                    name.to_string(),
                    parse_num(rows, no, "rows")?,
                    parse_num(cols, no, "cols")?,
                ));
            }
            ["adam", "t", t] => {
                if adam_t.is_some() {
                    return Err(bad(no, "duplicate adam line"));
                }
                adam_t = Some(parse_num(t, no, "adam step")?);
            }
            ["moment", which @ ("m" | "v"), name, len] => {
                if adam_t.is_none() {
                    return Err(bad(no, "moment line before adam line"));
                }
                moment_specs.push((*which == "m", name.to_string(), parse_num(len, no, "len")?));
            }
            _ => return Err(bad(no, format!("unrecognized line {line:?}"))),
        }
    }

    let tensor_values: usize = tensor_shapes.iter().map(|(_, r, c)| r * c).sum();
    let moment_values: usize = moment_specs.iter().map(|(_, _, n)| n).sum();
    let expected = (tensor_values + moment_values) * S::BYTES;
    if payload.len() != expected {
        return Err(NnError::Checkpoint(format!(
            "payload is {} bytes, header promises {expected}",
            payload.len()
        )));
    }

    let mut cursor = 0usize;
    let mut read_values = |n: usize| -> Vec<S> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(S::read_le(&payload[cursor..]));
            cursor += S::BYTES;
        }
        out
    };

    let mut params = ParamStore::new();
    for (name, rows, cols) in &tensor_shapes {
        let tensor = Tensor2::from_values(*rows, *cols, read_values(rows * cols))
            .expect("length matches shape by construction");
        params.register(name, tensor)?;
    }
    let adam = match adam_t {
        None => {
            if !moment_specs.is_empty() {
                return Err(NnError::Checkpoint("moments without adam line".into()));
            }
            None
        }
        Some(t) => {
            let mut m = BTreeMap::new();
            let mut v = BTreeMap::new();
            for (is_m, name, len) in &moment_specs {
                let tensor = params.get(name).map_err(|_| {
                    NnError::Checkpoint(format!("moment for unknown tensor {name}"))
                })?;
                if *len != tensor.values().len() {
                    return Err(NnError::Checkpoint(format!(
                        "moment {name} has {len} values, tensor has {}",
                        tensor.values().len()
                    )));
                }
                let dst = if *is_m { &mut m } else { &mut v };
                if dst.insert(name.clone(), read_values(*len)).is_some() {
                    return Err(NnError::Checkpoint(format!("duplicate moment for {name}")));
                }
            }
            Some(AdamState { t, m, v })
        }
    };
    Ok(Checkpoint { step, params, adam })
}
