//! Report files: one JSON record per suite run plus `h,error,stderr`
//! columns for plotting. Runs go to `<out>/<suite>/run-NNNN`, numbered
//! upward; an existing run directory is never reused.

use std::fmt::Write as _;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Creates the next free `run-NNNN` directory under `<out>/<suite>`.
pub fn create_run_dir(out: &Path, suite: &str) -> Result<PathBuf> {
    let base = out.join(suite);
    fs::create_dir_all(&base)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", base.display())))?;
    let next = fs::read_dir(&base)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_prefix("run-")?.parse::<u32>().ok())
        .max()
        .map_or(1, |n| n + 1);
    for n in next.. {
        let dir = base.join(format!("run-{n:04}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => {
                return Err(Error::Config(format!("cannot create run directory {}: {e}", dir.display())))
            }
        }
    }
    unreachable!("run numbers are unbounded")
}

/// `v` in plain decimal notation with 12 significant digits.
pub fn format_sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    // the exponent after rounding to 12 digits
    let sci = format!("{v:.11e}");
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    let decimals = (11 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Columnar `h,error,stderr` text, newline-terminated.
pub fn columns_csv(h: &[f64], error: &[f64], stderr: &[f64]) -> String {
    let mut s = String::from("h,error,stderr\n");
    for ((h, e), se) in h.iter().zip(error).zip(stderr) {
        let _ = writeln!(s, "{},{},{}", format_sig12(*h), format_sig12(*e), format_sig12(*se));
    }
    s
}

/// File-name friendly form of a quantity or check name.
pub fn file_stem(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    while s.ends_with('_') {
        s.pop();
    }
    s
}

/// Writes `value` as pretty JSON, refusing to overwrite.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_new(dir, name, &text)
}

pub fn write_new(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    use std::io::Write;
    let path = dir.join(name);
    let mut f = fs::OpenOptions::new().write(true).create_new(true).open(&path)?;
    f.write_all(text.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_sig12(0.0625), "0.0625000000000");
        assert_eq!(format_sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_sig12(2.5e-7), "0.000000250000000000");
        assert_eq!(format_sig12(123.456), "123.456000000");
        assert_eq!(format_sig12(9.99999999999951), "10.0000000000");
        assert_eq!(format_sig12(-4.0), "-4.00000000000");
        let v = 2.98426903337605e-4;
        let back: f64 = format_sig12(v).parse().unwrap();
        assert!((back - v).abs() < 1e-11 * v);
    }

    #[test]
    fn csv_layout() {
        let s = columns_csv(&[0.5, 0.25], &[1e-3, 2.5e-4], &[1e-5, 0.0]);
        assert!(s.starts_with("h,error,stderr\n"));
        assert!(s.ends_with('\n'));
        assert_eq!(s.lines().count(), 3);
        assert_eq!(s.lines().nth(2).unwrap(), "0.250000000000,0.000250000000000,0");
    }

    #[test]
    fn run_directories_are_append_only() {
        let tmp = tempfile::tempdir().unwrap();
        let a = create_run_dir(tmp.path(), "strong-rate").unwrap();
        let b = create_run_dir(tmp.path(), "strong-rate").unwrap();
        assert!(a.ends_with("strong-rate/run-0001"));
        assert!(b.ends_with("strong-rate/run-0002"));
        write_new(&a, "x.csv", "1\n").unwrap();
        assert!(write_new(&a, "x.csv", "2\n").is_err());
        assert_eq!(fs::read_to_string(a.join("x.csv")).unwrap(), "1\n");
    }

    #[test]
    fn stems() {
        assert_eq!(file_stem("weak:gauss"), "weak_gauss");
        assert_eq!(file_stem("rhleq(s=0,r=2)"), "rhleq_s_0_r_2");
    }
}
