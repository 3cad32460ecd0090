//! Versioned, checksummed JSON files.
//!
//! The first line is a JSON header carrying the format name, the version and
//! the SHA-256 of the payload bytes; the payload JSON follows on the next line.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub checksum: String,
}

pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode<V: Serialize>(format: &str, value: &V) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(value)?;
    let header = Header {
        format: format.to_string(),
        version: FORMAT_VERSION,
        checksum: checksum(&payload),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    out.push(b'\n');
    Ok(out)
}

pub fn decode<V: DeserializeOwned>(format: &str, bytes: &[u8], origin: &str) -> Result<V> {
    let corrupt = |why: &str| Error::CorruptFile(format!("{origin}: {why}"));
    let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("missing header line"))?;
    let header: Header = serde_json::from_slice(&bytes[..split]).map_err(|_| corrupt("unreadable header"))?;
    if header.format != format {
        return Err(corrupt(&format!("expected a {format} file, found {}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION.to_string(),
            found: header.version.to_string(),
        });
    }
    let mut payload = &bytes[split + 1..];
    if payload.last() == Some(&b'\n') {
        payload = &payload[..payload.len() - 1];
    }
    if checksum(payload) != header.checksum {
        return Err(corrupt("checksum mismatch"));
    }
    serde_json::from_slice(payload).map_err(|e| corrupt(&e.to_string()))
}

pub fn save<V: Serialize>(path: &Path, format: &str, value: &V) -> Result<String> {
    let bytes = encode(format, value)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, &bytes)?;
    Ok(checksum(&bytes))
}

pub fn load<V: DeserializeOwned>(path: &Path, format: &str) -> Result<V> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    decode(format, &bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let v = vec![0.1f64, 1.0 / 3.0, -2.5e-300, f64::MIN_POSITIVE];
        let bytes = encode("floats", &v).unwrap();
        let back: Vec<f64> = decode("floats", &bytes, "mem").unwrap();
        assert_eq!(
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn tampered_payload_is_rejected() {
        let mut bytes = encode("floats", &vec![1.0f64, 2.0]).unwrap();
        let n = bytes.len();
        bytes[n - 3] = b'5';
        let err = decode::<Vec<f64>>("floats", &bytes, "mem").unwrap_err();
        assert!(matches!(err, Error::CorruptFile(_)), "{err}");
    }

    #[test]
    fn version_and_format_are_checked() {
        let bytes = encode("a", &1u32).unwrap();
        assert!(matches!(decode::<u32>("b", &bytes, "x"), Err(Error::CorruptFile(_))));
        let text = String::from_utf8(bytes).unwrap().replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            decode::<u32>("a", text.as_bytes(), "x"),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn missing_file() {
        let err = load::<u32>(Path::new("/nonexistent/snap"), "a").unwrap_err();
        assert!(matches!(err, Error::MissingInput(_)));
    }
}
