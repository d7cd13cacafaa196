//! Serde adapters that store `f32` buffers as hex of their little-endian
//! bytes: exact, compact, and able to carry NaN/inf from diagnostic dumps.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

fn encode(v: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(v.len() * 4);
    for x in v {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    hex::encode(bytes)
}

fn decode(s: &str) -> Result<Vec<f32>, String> {
    let bytes = hex::decode(s).map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 {
        return Err(format!("buffer of {} bytes is not a whole number of f32s", bytes.len()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub mod flat {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f32], s: S) -> Result<S::Ok, S::Error> {
        encode(v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f32>, D::Error> {
        decode(&String::deserialize(d)?).map_err(D::Error::custom)
    }
}

pub mod nested {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Vec<f32>], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|b| encode(b)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f32>>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| decode(s).map_err(D::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Doc {
        #[serde(with = "super::nested")]
        bufs: Vec<Vec<f32>>,
        #[serde(with = "super::flat")]
        one: Vec<f32>,
    }

    #[test]
    fn roundtrip_keeps_every_bit() {
        let doc = Doc {
            bufs: vec![vec![1.5, -0.0, f32::MIN_POSITIVE, f32::INFINITY], vec![]],
            one: vec![f32::NAN, 3.0],
        };
        let back: Doc = serde_json::from_str(&serde_json::to_string(&doc).unwrap()).unwrap();
        assert_eq!(back.bufs, doc.bufs);
        assert!(back.one[0].is_nan());
        assert_eq!(back.one[1], 3.0);
        assert_eq!(back.bufs[0][1].to_bits(), (-0.0f32).to_bits());
    }
}
