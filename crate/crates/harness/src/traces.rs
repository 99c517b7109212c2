//! Trace CSV files: header `trace,t,y`, one row per observation, sorted by
//! trace then time. `trace` counts from 0 and `t` from 1.

use std::io::{Read, Write};

use plg_core::json::format_f64;

use crate::error::{HarnessError, Result};

pub fn write_traces<'a, W, I>(out: W, traces: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut w = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| HarnessError::io("writing traces", e.into());
    w.write_record(["trace", "t", "y"]).map_err(io_err)?;
    for (k, tr) in traces.into_iter().enumerate() {
        for (t, y) in tr.iter().enumerate() {
            if !y.is_finite() {
                return Err(HarnessError::usage(format!("trace {k} has a non-finite value at t = {}", t + 1)));
            }
            w.write_record([k.to_string(), (t + 1).to_string(), format_f64(*y)])
                .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| HarnessError::io("writing traces", e))
}

/// Reads traces back, checking the header and the row ordering.
pub fn read_traces<R: Read>(input: R) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd
        .headers()
        .map_err(|e| HarnessError::usage(format!("reading trace header: {e}")))?;
    if headers.iter().collect::<Vec<_>>() != ["trace", "t", "y"] {
        return Err(HarnessError::usage(format!(
            "trace CSV header must be `trace,t,y`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut traces: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::usage(format!("trace CSV row {}: {e}", line + 2)))?;
        let bad = |what: &str| HarnessError::usage(format!("trace CSV row {}: {what}", line + 2));
        if rec.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        let k: usize = rec[0].trim().parse().map_err(|_| bad("bad trace index"))?;
        let t: usize = rec[1].trim().parse().map_err(|_| bad("bad time index"))?;
        let y: f64 = rec[2].trim().parse().map_err(|_| bad("bad observation"))?;
        if !y.is_finite() {
            return Err(bad("non-finite observation"));
        }
        if k == traces.len() {
            traces.push(Vec::new());
        } else if k + 1 != traces.len() {
            return Err(bad("rows must be sorted by trace with contiguous indices from 0"));
        }
        let cur = traces.last_mut().expect("pushed above");
        if t != cur.len() + 1 {
            return Err(bad("time indices must run 1, 2, ... within each trace"));
        }
        cur.push(y);
    }
    if traces.is_empty() {
        return Err(HarnessError::usage("trace CSV holds no observations"));
    }
    Ok(traces)
}
