//! JSON checkpoint layout:
//!
//! ```json
//! {
//!   "format": "nrdc-checkpoint",
//!   "version": 1,
//!   "architecture": { ... },
//!   "parameters": [
//!     { "name": "lift.0.weight", "shape": [2, 64], "values": [ ... row-major f64 ... ] }
//!   ]
//! }
//! ```
//!
//! `architecture` is an opaque descriptor written by the owner of the
//! parameters (see `policies::Policy::architecture`) and compared on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT: &str = "nrdc-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: serde_json::Value,
    pub parameters: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn new(architecture: serde_json::Value, params: &ParamSet) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            architecture,
            parameters: params
                .iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_param_set(&self) -> Result<ParamSet> {
        let mut ps = ParamSet::new();
        for r in &self.parameters {
            ps.push(r.name.clone(), Tensor::new(r.shape.clone(), r.values.clone())?);
        }
        Ok(ps)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(values in proptest::collection::vec(-1e300f64..1e300, 1..40)) {
            let mut ps = ParamSet::new();
            let n = values.len();
            ps.push("a", Tensor::new([n], values).unwrap());
            ps.push("b", Tensor::new([1, 2], vec![f64::MIN_POSITIVE, -0.1]).unwrap());
            let ck = Checkpoint::new(serde_json::json!({"kind": "test"}), &ps);
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            prop_assert_eq!(back.to_param_set().unwrap(), ps);
        }
    }

    #[test]
    fn rejects_foreign_format() {
        let text = r#"{"format":"other","version":1,"architecture":null,"parameters":[]}"#;
        assert!(matches!(Checkpoint::from_json(text), Err(Error::Checkpoint(_))));
    }
}
