//! Outlier-elimination penalty `R(A) = sqrt(n) * max(A) / ||A||_{2,q}`.
//!
//! `A` holds one activation column per sample; `||A||_{2,q}` is the
//! `q`-power mean of the column L2 norms. With `q = -inf` it reduces to the
//! smallest column norm, so the penalty looks at the weakest input of the
//! batch.

use crate::{Error, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

/// Exponent `q` of the column-norm aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NormExponent {
    /// Minimum column norm.
    #[default]
    NegInfinity,
    /// `(sum_j ||a_j||^q)^(1/q)` for a non-zero finite `q`.
    Finite(f64),
}

impl FromStr for NormExponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "-inf" | "min" | "-infinity" => Ok(NormExponent::NegInfinity),
            other => {
                let q: f64 = other
                    .parse()
                    .map_err(|_| Error::validation(format!("bad norm exponent `{other}`")))?;
                NormExponent::finite(q)
            }
        }
    }
}

impl NormExponent {
    pub fn finite(q: f64) -> Result<Self> {
        if q == f64::NEG_INFINITY {
            Ok(NormExponent::NegInfinity)
        } else if q == 0.0 || !q.is_finite() {
            Err(Error::validation(format!("norm exponent must be non-zero and finite or -inf, got {q}")))
        } else {
            Ok(NormExponent::Finite(q))
        }
    }
}

impl fmt::Display for NormExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormExponent::NegInfinity => f.write_str("-inf"),
            NormExponent::Finite(q) => write!(f, "{q}"),
        }
    }
}

impl Serialize for NormExponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NormExponent::NegInfinity => s.serialize_str("-inf"),
            NormExponent::Finite(q) => s.serialize_f64(*q),
        }
    }
}

impl<'de> Deserialize<'de> for NormExponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(q) => NormExponent::finite(q),
            Raw::Str(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

fn l2(col: &[f64]) -> f64 {
    col.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// First maximal entry in column-major order: `(column, row, value)`.
fn max_entry<C: AsRef<[f64]>>(columns: &[C]) -> (usize, usize, f64) {
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.as_ref().iter().enumerate() {
            if v > best.2 {
                best = (j, i, v);
            }
        }
    }
    best
}

/// `||A||_{2,q}`; zero when a column norm of zero makes it degenerate.
fn column_norm_aggregate(norms: &[f64], q: NormExponent) -> (f64, Option<usize>) {
    match q {
        NormExponent::NegInfinity => {
            let mut arg = 0;
            for (j, &n) in norms.iter().enumerate() {
                if n < norms[arg] {
                    arg = j;
                }
            }
            (norms[arg], Some(arg))
        }
        NormExponent::Finite(q) => {
            if q < 0.0 && norms.contains(&0.0) {
                return (0.0, None);
            }
            let s: f64 = norms.iter().map(|n| n.powf(q)).sum();
            (s.powf(1.0 / q), None)
        }
    }
}

/// Evaluates `R(A)`. A batch whose max entry or aggregate norm is zero has
/// no defined ratio and yields 0, meaning "skip this layer".
pub fn roe_penalty<C: AsRef<[f64]>>(columns: &[C], q: NormExponent) -> f64 {
    if columns.is_empty() {
        return 0.0;
    }
    let n = columns[0].as_ref().len();
    let (_, _, max) = max_entry(columns);
    if max <= 0.0 {
        return 0.0;
    }
    let norms: Vec<f64> = columns.iter().map(|c| l2(c.as_ref())).collect();
    let (agg, _) = column_norm_aggregate(&norms, q);
    if agg <= 0.0 {
        return 0.0;
    }
    (n as f64).sqrt() * max / agg
}

/// `R(A)` together with `d ln R / d A`, laid out like `columns`.
///
/// The max is differentiated through its first maximal entry and, for
/// `q = -inf`, the norm through the first minimal column. Returns `None`
/// when the penalty is skipped.
pub fn ln_roe_gradient<C: AsRef<[f64]>>(columns: &[C], q: NormExponent) -> Option<(f64, Vec<Vec<f64>>)> {
    let r = roe_penalty(columns, q);
    if r <= 0.0 {
        return None;
    }
    let (mj, mi, max) = max_entry(columns);
    let norms: Vec<f64> = columns.iter().map(|c| l2(c.as_ref())).collect();
    let mut grad: Vec<Vec<f64>> = columns.iter().map(|c| vec![0.0; c.as_ref().len()]).collect();
    grad[mj][mi] += 1.0 / max;
    match q {
        NormExponent::NegInfinity => {
            let (_, arg) = column_norm_aggregate(&norms, q);
            let j = arg.expect("argmin for -inf");
            let n2 = norms[j] * norms[j];
            for (g, a) in grad[j].iter_mut().zip(columns[j].as_ref()) {
                *g -= a / n2;
            }
        }
        NormExponent::Finite(q) => {
            let s: f64 = norms.iter().map(|n| n.powf(q)).sum();
            for (j, col) in columns.iter().enumerate() {
                if norms[j] == 0.0 {
                    continue;
                }
                let k = norms[j].powf(q - 2.0) / s;
                for (g, a) in grad[j].iter_mut().zip(col.as_ref()) {
                    *g -= k * a;
                }
            }
        }
    }
    Some((r, grad))
}
