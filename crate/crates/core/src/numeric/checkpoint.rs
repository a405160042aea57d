//! Plain-text parameter checkpoints.
//!
//! ```text
//! crl-checkpoint 1
//! meta task numerical
//! param controller.enc.w_x 96,13
//! -1.2345678901234567e-1 3.0000000000000000e0 ...
//! end
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! finite `f64` exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::tensor::Tensor;

const MAGIC: &str = "crl-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    pub fn add_store(&mut self, store: &ParamStore) {
        for (_, name, t) in store.iter() {
            self.params.push((name.to_string(), t.clone()));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::parse("checkpoint", format!("missing meta key {key}")))
    }

    /// Store of every parameter whose name starts with `prefix`, in file order.
    pub fn store_with_prefix(&self, prefix: &str) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, t) in &self.params {
            if name.starts_with(prefix) {
                store.add(name.clone(), t.clone())?;
            }
        }
        Ok(store)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.params {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "param {name} {}", shape.join(","));
            let values: Vec<String> = t.data().iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |msg: String| Error::parse("checkpoint", msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err("empty file".into()))?;
        match header.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == VERSION.to_string() => {}
            _ => return Err(err(format!("bad header {header:?}"))),
        }
        let mut ckpt = Checkpoint::new();
        let mut ended = false;
        while let Some(line) = lines.next() {
            if line == "end" {
                ended = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("param ") {
                let (name, shape) = rest
                    .split_once(' ')
                    .ok_or_else(|| err(format!("bad param line {line:?}")))?;
                let shape = shape
                    .split(',')
                    .map(|d| d.parse::<usize>().map_err(|e| err(format!("{name}: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                let values = lines
                    .next()
                    .ok_or_else(|| err(format!("{name}: missing values")))?;
                let data = values
                    .split_ascii_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|e| err(format!("{name}: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                ckpt.params
                    .push((name.to_string(), Tensor::new(shape, data)?));
            } else if !line.trim().is_empty() {
                return Err(err(format!("unexpected line {line:?}")));
            }
        }
        if !ended {
            return Err(err("truncated: missing end marker".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::parse(&text)
    }
}
