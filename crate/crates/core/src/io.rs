use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Decimal places used for every reported real.
pub const REPORT_DECIMALS: usize = 9;

/// A reported real at fixed precision; negative zero prints as zero.
pub fn fixed(x: f64) -> String {
    let s = format!("{x:.REPORT_DECIMALS$}");
    if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

/// [`fixed`] as a JSON number; non-finite values become `null`.
pub fn fixed_json(x: f64) -> serde_json::Value {
    if !x.is_finite() {
        return serde_json::Value::Null;
    }
    serde_json::Value::Number(fixed(x).parse().expect("fixed output is a JSON number"))
}

pub fn fixed_json_opt(x: Option<f64>) -> serde_json::Value {
    x.map_or(serde_json::Value::Null, fixed_json)
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes(v: &serde_json::Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("values serialize");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_precision() {
        assert_eq!(fixed(2.0 / 3.0), "0.666666667");
        assert_eq!(fixed(-0.0), "0.000000000");
        assert_eq!(fixed(-1e-12), "0.000000000");
        assert_eq!(fixed_json(0.5).to_string(), "0.500000000");
        assert_eq!(fixed_json(f64::NAN), serde_json::Value::Null);
    }

    #[test]
    fn writes_and_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
