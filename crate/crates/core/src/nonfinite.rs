//! Serde adapters that keep NaN and ±∞ through JSON, which has no literal for
//! them. Non-finite values are written as the strings `"NaN"`, `"inf"` and
//! `"-inf"`; `null` reads back as NaN.
//!
//! Use with `#[serde(with = "bclab_core::nonfinite")]` on `f64` fields, or the
//! [`vec`] / [`option`] submodules.

use serde::de::{self, Deserializer, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy)]
struct Real(f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let x = self.0;
        if x.is_nan() {
            s.serialize_str("NaN")
        } else if x.is_infinite() {
            s.serialize_str(if x > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(x)
        }
    }
}

struct RealVisitor;

impl<'de> Visitor<'de> for RealVisitor {
    type Value = Real;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a number, \"NaN\", \"inf\", \"-inf\" or null")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Real, E> {
        Ok(Real(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Real, E> {
        Ok(Real(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Real, E> {
        Ok(Real(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Real, E> {
        match v {
            "NaN" | "nan" => Ok(Real(f64::NAN)),
            "inf" | "+inf" => Ok(Real(f64::INFINITY)),
            "-inf" => Ok(Real(f64::NEG_INFINITY)),
            _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
        }
    }

    fn visit_unit<E: de::Error>(self) -> Result<Real, E> {
        Ok(Real(f64::NAN))
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(RealVisitor)
    }
}

pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    Real(*x).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Real::deserialize(d).map(|r| r.0)
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for &x in xs {
            seq.serialize_element(&Real(x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Real> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|r| r.0).collect())
    }
}

/// `None` stays `null`; a present non-finite value is written as a string.
pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match x {
            Some(v) => s.serialize_some(&Real(*v)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Real>::deserialize(d)?.map(|r| r.0))
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, Debug)]
    struct Probe {
        #[serde(with = "super")]
        a: f64,
        #[serde(with = "super::vec")]
        b: Vec<f64>,
        #[serde(with = "super::option")]
        c: Option<f64>,
        #[serde(with = "super::option")]
        d: Option<f64>,
    }

    #[test]
    fn round_trip_keeps_non_finite_values() {
        let p = Probe {
            a: f64::NAN,
            b: vec![1.5, f64::INFINITY, f64::NEG_INFINITY, -0.25],
            c: None,
            d: Some(f64::NAN),
        };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(
            s,
            r#"{"a":"NaN","b":[1.5,"inf","-inf",-0.25],"c":null,"d":"NaN"}"#
        );
        let q: Probe = serde_json::from_str(&s).unwrap();
        assert!(q.a.is_nan());
        assert_eq!(q.b[..2], [1.5, f64::INFINITY]);
        assert_eq!(q.b[2..], [f64::NEG_INFINITY, -0.25]);
        assert_eq!(q.c, None);
        assert!(q.d.unwrap().is_nan());
    }

    #[test]
    fn null_reads_as_nan() {
        let q: Probe = serde_json::from_str(r#"{"a":null,"b":[null,2],"c":3,"d":null}"#).unwrap();
        assert!(q.a.is_nan() && q.b[0].is_nan());
        assert_eq!(q.b[1], 2.0);
        assert_eq!(q.c, Some(3.0));
        assert_eq!(q.d, None);
    }
}
