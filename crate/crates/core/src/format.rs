//! Shared text-output helpers: number formatting and provenance headers.

use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = concat!("soundkb ", env!("CARGO_PKG_VERSION"));

/// Rounds to 9 significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Shortest text form of `x` after rounding to 9 significant digits.
pub fn fmt_sig9(x: f64) -> String {
    format!("{:?}", round_sig9(x))
}

/// Hex SHA-256 of a byte string, truncated to 16 characters.
pub fn short_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

/// Builds the `# ...` provenance line written at the top of every output.
pub fn header_line(command: &str, seed: Option<u64>, inputs: &[(&str, &[u8])]) -> String {
    let mut line = format!("# {TOOL_VERSION} {command}");
    if let Some(seed) = seed {
        line.push_str(&format!(" seed={seed}"));
    }
    for (name, bytes) in inputs {
        line.push_str(&format!(" {name}={}", short_digest(bytes)));
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9() {
        assert_eq!(fmt_sig9(0.5), "0.5");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(-123456.7891234), "-123456.789");
        assert_eq!(fmt_sig9(0.0), "0.0");
        assert_eq!(fmt_sig9(1e-12), "1e-12");
    }

    #[test]
    fn header_is_stable() {
        let a = header_line("mine", Some(7), &[("corpus", b"abc")]);
        let b = header_line("mine", Some(7), &[("corpus", b"abc")]);
        assert_eq!(a, b);
        assert!(a.starts_with("# soundkb "));
        assert!(a.contains("seed=7"));
        assert!(a.contains("corpus=ba7816bf8f01cfea"));
    }
}
