//! Binary blob and JSON sidecar plumbing shared by the dictionary, dataset
//! and checkpoint formats.
//!
//! Every persisted artifact is a pair of files: `<path>` holds little-endian
//! `f64` values (complex numbers interleaved as `re, im`), and
//! `<path>.json` holds the metadata needed to interpret the blob.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Path of the JSON sidecar that accompanies a blob.
pub fn sidecar_path(blob: &Path) -> PathBuf {
    let mut s = blob.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical (serde_json) encoding of a value.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    sha256_hex(&bytes)
}

pub fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn push_c64s<'a>(buf: &mut Vec<u8>, vals: impl IntoIterator<Item = &'a Complex64>) {
    for c in vals {
        push_f64(buf, c.re);
        push_f64(buf, c.im);
    }
}

/// Cursor over a little-endian `f64` blob.
pub struct BlobReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn f64(&mut self) -> Result<f64> {
        let end = self.pos + 8;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("blob truncated".into()))?;
        self.pos = end;
        Ok(f64::from_le_bytes(chunk.try_into().unwrap()))
    }

    pub fn c64(&mut self) -> Result<Complex64> {
        let re = self.f64()?;
        let im = self.f64()?;
        Ok(Complex64::new(re, im))
    }

    pub fn c64s(&mut self, n: usize) -> Result<Vec<Complex64>> {
        (0..n).map(|_| self.c64()).collect()
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn finish(self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "{} trailing bytes in blob",
                self.bytes.len() - self.pos
            )))
        }
    }
}

pub fn write_pair<M: Serialize>(path: &Path, blob: &[u8], meta: &M) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(blob)?;
    f.flush()?;
    let side = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(side, meta)?;
    Ok(())
}

pub fn read_pair<M: DeserializeOwned>(path: &Path) -> Result<(Vec<u8>, M)> {
    let mut blob = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut blob)?;
    let side = BufReader::new(File::open(sidecar_path(path))?);
    let meta = serde_json::from_reader(side)?;
    Ok((blob, meta))
}

/// Serde adapter for decibel values that may be `+inf` (noise-free scenes).
/// JSON has no infinity literal, so infinities travel as the strings
/// `"inf"` / `"-inf"`.
pub mod db_value {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            let t = if *v > 0.0 { "inf" } else { "-inf" };
            Repr::Text(t.into()).serialize(s)
        } else {
            Repr::Num(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.trim() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("not a dB value: {other}"))),
            },
        }
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(x) => super::serialize(x, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            #[derive(Deserialize)]
            struct Wrap(#[serde(with = "super")] f64);
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Db {
        #[serde(with = "db_value")]
        v: f64,
    }

    #[test]
    fn infinite_db_survives_json() {
        for v in [f64::INFINITY, f64::NEG_INFINITY, -3.5, 0.0] {
            let s = serde_json::to_string(&Db { v }).unwrap();
            let back: Db = serde_json::from_str(&s).unwrap();
            assert_eq!(back.v, v);
        }
        assert!(serde_json::to_string(&Db { v: f64::INFINITY })
            .unwrap()
            .contains("\"inf\""));
    }

    #[test]
    fn truncated_blob_is_a_format_error() {
        let mut buf = Vec::new();
        push_f64(&mut buf, 1.0);
        let mut r = BlobReader::new(&buf[..5]);
        assert!(matches!(r.f64(), Err(Error::Format(_))));
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(
            sidecar_path(Path::new("/tmp/a.bin")),
            PathBuf::from("/tmp/a.bin.json")
        );
    }
}
