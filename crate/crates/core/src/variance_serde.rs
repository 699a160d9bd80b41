//! JSON encoding for noise variances that may be `+inf`.
//!
//! JSON has no infinity literal, so infinite variances are written as the string
//! `"inf"`. Finite values stay plain numbers.

use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Variance {
    Finite(f64),
    Tagged(String),
}

impl Variance {
    fn from_value(v: f64) -> Self {
        if v == f64::INFINITY {
            Variance::Tagged("inf".to_owned())
        } else {
            Variance::Finite(v)
        }
    }

    fn into_value<E: de::Error>(self) -> Result<f64, E> {
        match self {
            Variance::Finite(v) => Ok(v),
            Variance::Tagged(s) if s == "inf" => Ok(f64::INFINITY),
            Variance::Tagged(s) => Err(E::custom(format!("invalid variance `{s}`"))),
        }
    }
}

pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for &v in values {
        seq.serialize_element(&Variance::from_value(v))?;
    }
    seq.end()
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    Vec::<Variance>::deserialize(d)?
        .into_iter()
        .map(Variance::into_value)
        .collect()
}

pub fn serialize_nested<S: Serializer>(values: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<Variance>> = values
        .iter()
        .map(|row| row.iter().map(|&v| Variance::from_value(v)).collect())
        .collect();
    rows.serialize(s)
}

pub fn deserialize_nested<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
    Vec::<Vec<Variance>>::deserialize(d)?
        .into_iter()
        .map(|row| row.into_iter().map(Variance::into_value).collect())
        .collect()
}
