//! Text checkpoint of named parameter arrays.
//!
//! ```text
//! # steam-checkpoint v1
//! array feature.0.weight 10 64
//! 0.0123 -0.443 ...          (one line per row, `cols` values)
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip `f64` formatting, so
//! save followed by load reproduces every bit. Names are whitespace-free and
//! unique. Blank lines and further `#` lines are ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dense, EncoderParams, MemoryParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "# steam-checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(encoder: &EncoderParams, memory: Option<&MemoryParams>) -> Self {
        let mut arrays: Vec<(String, Tensor)> =
            encoder.named().into_iter().map(|(n, t)| (n, t.as_matrix())).collect();
        if let Some(m) = memory {
            arrays.extend(m.named().into_iter().map(|(n, t)| (n, t.as_matrix())));
        }
        Checkpoint { arrays }
    }

    pub fn encoder(&self) -> Result<EncoderParams> {
        EncoderParams::from_named(&self.arrays)
    }

    /// Memory parameters, if the checkpoint carries them.
    pub fn memory(&self) -> Result<Option<MemoryParams>> {
        let prefixed: Vec<(String, Tensor)> = self
            .arrays
            .iter()
            .filter_map(|(n, t)| n.strip_prefix("memory.").map(|s| (s.to_string(), t.clone())))
            .collect();
        if prefixed.is_empty() {
            return Ok(None);
        }
        let find = |name: String| -> Result<Tensor> {
            prefixed
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Contract(format!("missing array memory.{name}")))
        };
        let dense = |p: &str| -> Result<Dense> {
            Ok(Dense {
                weight: find(format!("{p}.weight"))?,
                bias: find(format!("{p}.bias"))?,
            })
        };
        let mut feature = Vec::new();
        while prefixed.iter().any(|(n, _)| *n == format!("feature.{}.weight", feature.len())) {
            feature.push(dense(&format!("feature.{}", feature.len()))?);
        }
        Ok(Some(MemoryParams {
            feature,
            semantic: dense("semantic")?,
            style: dense("style")?,
        }))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        for (name, t) in &self.arrays {
            let _ = writeln!(out, "array {name} {} {}", t.rows(), t.cols());
            for r in 0..t.rows() {
                let line: Vec<String> = t.row(r).iter().map(|v| v.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, l)) if l == CHECKPOINT_MAGIC => {}
            Some((n, _)) => return Err(Error::parse(n, "missing checkpoint header")),
            None => return Err(Error::parse(0, "empty checkpoint")),
        }
        let mut lines = lines.filter(|(_, l)| !l.starts_with('#'));
        let mut arrays: Vec<(String, Tensor)> = Vec::new();
        while let Some((n, header)) = lines.next() {
            let fields: Vec<&str> = header.split_whitespace().collect();
            let [tag, name, rows, cols] = fields[..] else {
                return Err(Error::parse(n, "expected `array <name> <rows> <cols>`"));
            };
            if tag != "array" {
                return Err(Error::parse(n, format!("unexpected token `{tag}`")));
            }
            if arrays.iter().any(|(existing, _)| existing == name) {
                return Err(Error::parse(n, format!("duplicate array `{name}`")));
            }
            let rows: usize = rows.parse().map_err(|_| Error::parse(n, "bad row count"))?;
            let cols: usize = cols.parse().map_err(|_| Error::parse(n, "bad column count"))?;
            if rows == 0 || cols == 0 {
                return Err(Error::parse(n, "zero extent"));
            }
            let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 20));
            for _ in 0..rows {
                let (ln, line) = lines.next().ok_or_else(|| Error::parse(n, "truncated array"))?;
                let before = data.len();
                for tok in line.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|_| Error::parse(ln, format!("bad value `{tok}`")))?;
                    if !v.is_finite() {
                        return Err(Error::parse(ln, "non-finite value"));
                    }
                    data.push(v);
                }
                if data.len() - before != cols {
                    return Err(Error::parse(ln, format!("expected {cols} values")));
                }
            }
            arrays.push((name.to_string(), Tensor::from_rows(rows, cols, data)));
        }
        Ok(Checkpoint { arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = EncoderParams::init(&ModelDims::desk(10, 7), &mut rng);
        let mut m = e.memory_copy();
        m.style.weight.data_mut()[3] = 1.0 / 3.0;
        let ck = Checkpoint::from_model(&e, Some(&m));
        let back = Checkpoint::parse(&ck.to_text()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encoder().unwrap(), e);
        assert_eq!(back.memory().unwrap().unwrap(), m);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Checkpoint::parse("").is_err());
        assert!(Checkpoint::parse("hello").is_err());
        let bad = format!("{CHECKPOINT_MAGIC}\narray a 1 2\n1.0\n");
        assert!(matches!(Checkpoint::parse(&bad), Err(Error::Parse { line: 3, .. })));
        let nan = format!("{CHECKPOINT_MAGIC}\narray a 1 1\nNaN\n");
        assert!(Checkpoint::parse(&nan).is_err());
        let dup = format!("{CHECKPOINT_MAGIC}\narray a 1 1\n1\narray a 1 1\n2\n");
        assert!(Checkpoint::parse(&dup).is_err());
    }
}
