//! Flat parameter files: a little-endian `u64` header length, a JSON header
//! of that many bytes, then the parameters as little-endian `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const MAX_HEADER: u64 = 1 << 24;

pub fn write_flat<W: Write, H: Serialize>(mut out: W, header: &H, data: &[f64]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_flat<R: Read, H: DeserializeOwned>(mut input: R) -> Result<(H, Vec<f64>)> {
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(Error::Domain(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json)?;
    let header = serde_json::from_slice(&json)?;
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(Error::Domain(format!(
            "payload of {} bytes is not a whole number of f64",
            rest.len()
        )));
    }
    let data = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, data))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let header = serde_json::json!({"shape": [2, 3]});
        let data = vec![1.0, -2.5, f64::MIN_POSITIVE, 0.0, 1e300, 3.25];
        let mut buf = Vec::new();
        write_flat(&mut buf, &header, &data).unwrap();
        let (h, d): (serde_json::Value, Vec<f64>) = read_flat(buf.as_slice()).unwrap();
        assert_eq!(h, header);
        assert_eq!(d, data);
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut buf = Vec::new();
        write_flat(&mut buf, &serde_json::json!({}), &[1.0]).unwrap();
        buf.pop();
        assert!(read_flat::<_, serde_json::Value>(buf.as_slice()).is_err());
    }
}
