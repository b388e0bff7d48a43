//! Named trainable parameters and the versioned text checkpoint format.
//!
//! Checkpoint layout (one file, line oriented):
//!
//! ```text
//! simba-checkpoint v1
//! meta <key> <value>
//! param <name> <rows> <cols> <v0> <v1> ...
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! save followed by load reproduces every parameter bit for bit.

use crate::error::{Result, SimbaError};
use crate::tensor::Tensor;
use rand::Rng;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of parameters. Order is creation order and is part of
/// the determinism contract (the optimizer walks it in order).
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.by_name.contains_key(name) {
            return Err(SimbaError::Argument(format!(
                "duplicate parameter name: {name}"
            )));
        }
        let grad = Tensor::zeros(value.rows(), value.cols());
        let idx = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        self.by_name.insert(name.to_string(), idx);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Parameter {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Parameter {
        &mut self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.rows(), p.value.cols());
        }
    }
}

/// Uniform Glorot initialization: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::from_vec(rows, cols, data).expect("glorot shape")
}

const CHECKPOINT_HEADER: &str = "simba-checkpoint v1";

pub fn write_checkpoint(path: &Path, meta: &[(String, String)], params: &ParamSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CHECKPOINT_HEADER}")?;
    for (k, v) in meta {
        writeln!(w, "meta {k} {v}")?;
    }
    for p in params.iter() {
        write!(w, "param {} {} {}", p.name, p.value.rows(), p.value.cols())?;
        for v in p.value.data() {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(Vec<(String, String)>, Vec<(String, Tensor)>)> {
    let f = File::open(path).map_err(|_| SimbaError::MissingFile(path.to_path_buf()))?;
    let mut lines = BufReader::new(f).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| SimbaError::Checkpoint("empty checkpoint file".into()))?;
    if header.trim() != CHECKPOINT_HEADER {
        return Err(SimbaError::Checkpoint(format!(
            "unsupported checkpoint header: {header:?}"
        )));
    }
    let mut meta = Vec::new();
    let mut tensors = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("meta") => {
                let k = tok.next().unwrap_or_default().to_string();
                let v = tok.collect::<Vec<_>>().join(" ");
                meta.push((k, v));
            }
            Some("param") => {
                let bad = |msg: &str| SimbaError::Checkpoint(format!("line {}: {msg}", lineno + 2));
                let name = tok.next().ok_or_else(|| bad("missing name"))?.to_string();
                let rows: usize = tok
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad rows"))?;
                let cols: usize = tok
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad cols"))?;
                let mut data = Vec::with_capacity(rows * cols);
                for t in tok {
                    data.push(
                        t.parse::<f64>()
                            .map_err(|_| bad(&format!("bad value {t:?}")))?,
                    );
                }
                let tensor = Tensor::from_vec(rows, cols, data)
                    .map_err(|e| bad(&format!("value count: {e}")))?;
                tensors.push((name, tensor));
            }
            other => {
                return Err(SimbaError::Checkpoint(format!(
                    "line {}: unknown record {:?}",
                    lineno + 2,
                    other.unwrap_or_default()
                )));
            }
        }
    }
    Ok((meta, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn duplicate_name_rejected() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::zeros(2, 2)).unwrap();
        assert!(ps.add("w", Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut ps = ParamSet::new();
        ps.add("a.w", glorot_uniform(3, 5, &mut rng)).unwrap();
        ps.add("b.bias", glorot_uniform(1, 4, &mut rng)).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let meta = vec![("backbone".to_string(), "gin".to_string())];
        write_checkpoint(&path, &meta, &ps).unwrap();

        let (meta2, tensors) = read_checkpoint(&path).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(tensors.len(), 2);
        assert_eq!(tensors[0].0, "a.w");
        assert_eq!(&tensors[0].1, &ps.get(0).value);
        assert_eq!(&tensors[1].1, &ps.get(1).value);
    }

    #[test]
    fn checkpoint_rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, "not-a-checkpoint\n").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn glorot_respects_fan_bound() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let t = glorot_uniform(8, 8, &mut rng);
        let bound = (6.0 / 16.0f64).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < bound));
    }
}
