use crate::error::{Error, Result};

/// One observation sequence `y_1 … y_N`, starting from the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    ys: Vec<f64>,
}

impl Trace {
    pub fn new(ys: Vec<f64>) -> Result<Self> {
        if ys.is_empty() {
            return Err(Error::InvalidArgument("trace must hold at least one observation".into()));
        }
        Ok(Self { ys })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.ys
    }
}

impl AsRef<[f64]> for Trace {
    fn as_ref(&self) -> &[f64] {
        &self.ys
    }
}
