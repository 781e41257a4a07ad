//! Serde adapter for `f64` fields that may be `+inf` (written as `"inf"`).

use serde::{Deserialize, Deserializer, Serializer};

use crate::estimation::Snr;

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 { s.serialize_str("inf") } else { s.serialize_f64(*v) }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Snr::deserialize(d)?.value())
}
