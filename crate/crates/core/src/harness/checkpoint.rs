use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::canonical::{parse, sha256_hex, to_canonical_line};
use super::config::FORMAT_VERSION;
use super::{read_text, write_text, HarnessError, Result};
use crate::seqrec::{SeqModelParams, TENSOR_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ftilde,
    Csrec,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Ftilde => "ftilde",
            Role::Csrec => "csrec",
        })
    }
}

/// Serialized model. Matrices are nested row arrays, vectors flat arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub role: Role,
    pub hyperparams: Value,
    pub n_items: usize,
    pub embed_dim: usize,
    pub max_seq_len: usize,
    pub tensors: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<Value>,
}

impl Checkpoint {
    pub fn new<H: Serialize>(role: Role, hyperparams: &H, params: &SeqModelParams) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for ((name, data), [rows, cols]) in TENSOR_NAMES.iter().zip(params.tensors()).zip(params.shapes()) {
            let value = if cols == 1 {
                serde_json::to_value(data)
            } else {
                serde_json::to_value(data.chunks(cols).take(rows).collect::<Vec<_>>())
            }
            .map_err(|e| HarnessError::Format(e.to_string()))?;
            tensors.insert(name.to_string(), value);
        }
        Ok(Self {
            format_version: FORMAT_VERSION,
            role,
            hyperparams: serde_json::to_value(hyperparams).map_err(|e| HarnessError::Format(e.to_string()))?,
            n_items: params.n_items,
            embed_dim: params.dim,
            max_seq_len: params.max_seq_len,
            tensors,
            optimizer: None,
        })
    }

    pub fn params(&self) -> Result<SeqModelParams> {
        let mut p = SeqModelParams::zeros(self.n_items, self.embed_dim, self.max_seq_len);
        let shapes = p.shapes();
        for ((name, dst), [rows, cols]) in TENSOR_NAMES.iter().zip(p.tensors_mut()).zip(shapes) {
            let bad = || HarnessError::Format(format!("tensor {name} has the wrong shape"));
            let value = self.tensors.get(*name).ok_or_else(|| HarnessError::Format(format!("missing tensor {name}")))?;
            let flat: Vec<f64> = if cols == 1 {
                serde_json::from_value(value.clone()).map_err(|_| bad())?
            } else {
                let nested: Vec<Vec<f64>> = serde_json::from_value(value.clone()).map_err(|_| bad())?;
                if nested.len() != rows || nested.iter().any(|r| r.len() != cols) {
                    return Err(bad());
                }
                nested.concat()
            };
            if flat.len() != dst.len() {
                return Err(bad());
            }
            dst.copy_from_slice(&flat);
        }
        if self.tensors.len() != TENSOR_NAMES.len() {
            return Err(HarnessError::Format("unexpected extra tensors".into()));
        }
        Ok(p)
    }

    pub fn to_text(&self) -> Result<String> {
        to_canonical_line(self)
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let c: Checkpoint = parse(text, origin)?;
        if c.format_version != FORMAT_VERSION {
            return Err(HarnessError::Format(format!("{origin}: unsupported format_version {}", c.format_version)));
        }
        Ok(c)
    }

    /// Writes the checkpoint and returns its SHA-256.
    pub fn save(&self, path: &Path) -> Result<String> {
        let text = self.to_text()?;
        write_text(path, &text)?;
        Ok(sha256_hex(text.as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?, &path.display().to_string())
    }

    pub fn expect_role(&self, role: Role) -> Result<()> {
        if self.role == role {
            Ok(())
        } else {
            Err(HarnessError::RoleMismatch { expected: role.to_string(), found: self.role.to_string() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqrec::Hyperparams;

    #[test]
    fn checkpoint_round_trips_losslessly() {
        let p = SeqModelParams::init(5, 3, 7, 11);
        let c = Checkpoint::new(Role::Ftilde, &Hyperparams::default(), &p).unwrap();
        let text = c.to_text().unwrap();
        let back = Checkpoint::from_text(&text, "t").unwrap();
        assert_eq!(back.params().unwrap(), p);
        assert_eq!(back.to_text().unwrap(), text);
        assert!(text.contains(r#""role":"ftilde""#));
        assert!(text.contains(r#""format_version":1"#));
    }

    #[test]
    fn shape_errors_are_reported() {
        let p = SeqModelParams::init(4, 2, 5, 1);
        let mut c = Checkpoint::new(Role::Csrec, &Hyperparams::default(), &p).unwrap();
        c.tensors.insert("w_z".into(), serde_json::json!([[1.0, 2.0]]));
        assert!(matches!(c.params(), Err(HarnessError::Format(_))));
        assert!(matches!(c.expect_role(Role::Ftilde), Err(HarnessError::RoleMismatch { .. })));
    }
}
