//! Angular-frequency helpers. Internally everything is SI: seconds and rad/s.

use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// `2π × f` for `f` in kHz, in rad/s.
pub fn khz(f: f64) -> f64 {
    TAU * 1e3 * f
}

/// Inverse of [`khz`].
pub fn to_khz(omega: f64) -> f64 {
    omega / (TAU * 1e3)
}

/// Parses an angular frequency written either as a plain number in rad/s or
/// as `"2pi*<f>"` with `f` in kHz (e.g. `"2pi*1360"`).
pub fn parse_angular(text: &str) -> Result<f64> {
    let t = text.trim();
    let compact: String = t.chars().filter(|c| !c.is_whitespace()).collect();
    let lower = compact.to_ascii_lowercase();
    for prefix in ["2pi*", "2*pi*", "2π*", "2*π*"] {
        if let Some(rest) = lower.strip_prefix(prefix) {
            let rest = rest.strip_suffix("khz").unwrap_or(rest);
            let f: f64 = rest.parse().map_err(|_| Error::Config(format!("bad frequency {text:?}")))?;
            return Ok(khz(f));
        }
    }
    lower.parse().map_err(|_| Error::Config(format!("bad frequency {text:?}; use rad/s or \"2pi*<kHz>\"")))
}
