//! Helpers shared by the plain-text file formats: 17-significant-digit float
//! formatting (round-trips every f64 exactly) and line-tagged parsing errors.

use crate::{Error, Result};

/// Format with 17 significant digits, enough to reproduce the exact f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("expected float, got `{tok}`"),
    })
}

pub fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("expected integer, got `{tok}`"),
    })
}

pub fn parse_u64(tok: &str, line: usize) -> Result<u64> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("expected integer, got `{tok}`"),
    })
}

/// Extract the value of a `key=value` token, enforcing the key name.
pub fn keyed<'a>(tok: &'a str, key: &str, line: usize) -> Result<&'a str> {
    match tok.split_once('=') {
        Some((k, v)) if k == key => Ok(v),
        _ => Err(Error::Parse {
            line,
            msg: format!("expected `{key}=<value>`, got `{tok}`"),
        }),
    }
}

/// Check a header line of the form `<MAGIC> <version> ...`, returning the
/// remaining tokens. A wrong version is reported as a version mismatch, not
/// a generic parse error.
pub fn check_header<'a>(
    first_line: Option<&'a str>,
    magic: &str,
    version: &str,
) -> Result<Vec<&'a str>> {
    let line = first_line.ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let mut toks = line.split_whitespace();
    let m = toks.next().unwrap_or("");
    if m != magic {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected `{magic}` header, got `{m}`"),
        });
    }
    let v = toks.next().unwrap_or("");
    if v != version {
        return Err(Error::VersionMismatch {
            expected: format!("{magic} {version}"),
            found: format!("{magic} {v}"),
        });
    }
    Ok(toks.collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips_exactly() {
        for &x in &[
            0.0,
            1.0,
            -1.0 / 3.0,
            8.0 / 3.0,
            1.5586522107161747,
            1e-300,
            -2.2250738585072014e-308,
            f64::MAX,
        ] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn header_version_mismatch_is_distinct() {
        let err = check_header(Some("ORBITLIB v2 count=3"), "ORBITLIB", "v1").unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { .. }));
    }
}
