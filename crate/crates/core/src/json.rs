//! JSON output with every real written to 17 significant digits.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, Serializer};

use crate::error::{Error, Result};

/// Compact JSON formatter writing floats as `d.dddddddddddddddde±x`.
#[derive(Debug, Default, Clone, Copy)]
pub struct Exact17;

impl Formatter for Exact17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if !value.is_finite() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "non-finite real"));
        }
        writer.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Formats a finite real with 17 significant decimal digits.
pub fn format_f64(value: f64) -> String {
    format!("{value:.16e}")
}

/// Serializes `value` with [`Exact17`]. Non-finite reals become `null`, as
/// with plain `serde_json`.
pub fn to_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, Exact17);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| Error::Serialization(e.to_string()))
}
