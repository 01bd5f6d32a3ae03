use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KappaError {
    #[error("label lists differ in length ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("label lists are empty")]
    Empty,
}

/// Cohen's kappa, or `Undefined` when chance agreement is total and the
/// raters still disagree. Serializes as a number or the string
/// `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Value(f64),
    Undefined,
}

impl Kappa {
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(v) => Some(v),
            Kappa::Undefined => None,
        }
    }
}

impl fmt::Display for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kappa::Value(v) => write!(f, "{v:.3}"),
            Kappa::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for Kappa {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Kappa::Value(v) => s.serialize_f64(*v),
            Kappa::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Kappa {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Kappa;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or \"undefined\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Kappa, E> {
                Ok(Kappa::Value(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Kappa, E> {
                Ok(Kappa::Value(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Kappa, E> {
                Ok(Kappa::Value(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Kappa, E> {
                match v {
                    "undefined" => Ok(Kappa::Undefined),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Cohen's kappa of two aligned boolean label lists.
///
/// Computed from integer counts as `(n*agree - E) / (n^2 - E)` where
/// `E = ya*yb + (n-ya)*(n-yb)` is n² times the chance agreement, so the
/// only rounding happens in the final division.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Result<Kappa, KappaError> {
    if a.len() != b.len() {
        return Err(KappaError::LengthMismatch { a: a.len(), b: b.len() });
    }
    if a.is_empty() {
        return Err(KappaError::Empty);
    }
    let n = a.len() as i128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as i128;
    let ya = a.iter().filter(|&&x| x).count() as i128;
    let yb = b.iter().filter(|&&x| x).count() as i128;
    let expected = ya * yb + (n - ya) * (n - yb);
    let denominator = n * n - expected;
    if denominator == 0 {
        // chance agreement is 1: both raters gave one constant label
        return Ok(if a == b { Kappa::Value(1.0) } else { Kappa::Undefined });
    }
    Ok(Kappa::Value((n * agree - expected) as f64 / denominator as f64))
}
