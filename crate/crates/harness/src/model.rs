//! A model file is either an LDS or a PLG parameter JSON; the two are told
//! apart by their keys.

use std::path::Path;

use plg_core::{LdsParams, PlgParams, Trace};
use rand::Rng;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Lds(LdsParams),
    Plg(PlgParams),
}

impl Model {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| HarnessError::usage(format!("model JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| HarnessError::usage("model JSON must be an object"))?;
        let parsed = if obj.contains_key("A") {
            serde_json::from_value(value).map(Model::Lds)
        } else if obj.contains_key("g") {
            serde_json::from_value(value).map(Model::Plg)
        } else {
            return Err(HarnessError::usage(
                "model JSON is neither an LDS (has \"A\") nor a PLG (has \"g\")",
            ));
        };
        parsed.map_err(|e| HarnessError::usage(format!("model JSON: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(match self {
            Model::Lds(p) => p.to_json()?,
            Model::Plg(p) => p.to_json()?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<Trace> {
        Ok(match self {
            Model::Lds(p) => p.sample(len, rng)?,
            Model::Plg(p) => p.sample(len, rng)?,
        })
    }

    pub fn loglik(&self, trace: &Trace) -> Result<f64> {
        Ok(match self {
            Model::Lds(p) => p.loglik(trace)?,
            Model::Plg(p) => p.loglik(trace)?,
        })
    }

    /// Per-trace log-likelihoods and their sequential sum.
    pub fn loglik_all(&self, traces: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
        let per = traces
            .iter()
            .map(|ys| self.loglik(&Trace::new(ys.clone())?))
            .collect::<Result<Vec<f64>>>()?;
        let total = per.iter().sum();
        Ok((per, total))
    }
}
