//! Per-iteration trace records and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Column order of the trace CSV.
pub const TRACE_COLUMNS: [&str; 10] = [
    "r", "L_val", "delta_p", "delta_d", "combined", "feas", "step", "pg", "d_y", "f_val",
];

/// One iteration `r`. Gap fields are `NaN` until a reference is available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub r: usize,
    /// `L(x^{r+1}; y^r)`
    #[serde(rename = "L_val")]
    pub l_val: f64,
    /// `Δ_p^r = L(x^{r+1}; y^r) − d(y^r)`
    pub delta_p: f64,
    /// `Δ_d^r = d* − d(y^r)`
    pub delta_d: f64,
    /// `Δ_p^r + Δ_d^r`
    pub combined: f64,
    /// `‖Ex^r − q‖`
    pub feas: f64,
    /// `‖x^{r+1} − x^r‖`
    pub step: f64,
    /// `‖∇̃L(x^r; y^r)‖`
    pub pg: f64,
    /// `d(y^r)`
    pub d_y: f64,
    /// `f(x^{r+1})`
    pub f_val: f64,
}

impl TraceRecord {
    pub fn new(r: usize) -> Self {
        TraceRecord {
            r,
            l_val: f64::NAN,
            delta_p: f64::NAN,
            delta_d: f64::NAN,
            combined: f64::NAN,
            feas: f64::NAN,
            step: f64::NAN,
            pg: f64::NAN,
            d_y: f64::NAN,
            f_val: f64::NAN,
        }
    }

    pub fn has_gaps(&self) -> bool {
        self.combined.is_finite()
    }

    fn fields(&self) -> [f64; 9] {
        [
            self.l_val,
            self.delta_p,
            self.delta_d,
            self.combined,
            self.feas,
            self.step,
            self.pg,
            self.d_y,
            self.f_val,
        ]
    }

    /// Field-wise equality treating two `NaN`s as equal (bitwise comparison).
    pub fn same_as(&self, other: &TraceRecord) -> bool {
        self.r == other.r
            && self
                .fields()
                .iter()
                .zip(other.fields().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

pub fn write_trace_csv<W: Write>(writer: W, records: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if records.is_empty() {
        w.write_record(TRACE_COLUMNS)?;
    }
    for rec in records {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
