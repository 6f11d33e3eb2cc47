//! Bound-evaluation reports: the (entropy, bound, slack, ratio) quadruple
//! with method metadata and error estimates, serialized with a fixed field
//! order so identical runs produce byte-identical output.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One evaluated inequality instance. `slack = bound − entropy` is the
/// quantity under test (nonnegative when the inequality holds); `ratio`
/// is `entropy/bound` with the `0/0 → 1` convention so trivially tight
/// constant cases read as "tight" rather than undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub method: String,
    pub entropy: f64,
    pub bound: f64,
    pub slack: f64,
    pub ratio: f64,
    /// Quadrature error estimate for deterministic methods; for MC methods
    /// this is 0 and the stderr fields carry the uncertainty.
    pub quadrature_error: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub entropy_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bound_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub slack_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub flags: Vec<String>,
    pub inputs_digest: String,
}

impl BoundReport {
    pub fn new(method: &str, entropy: f64, bound: f64, quadrature_error: f64) -> BoundReport {
        BoundReport {
            method: method.to_string(),
            entropy,
            bound,
            slack: bound - entropy,
            ratio: ratio_of(entropy, bound),
            quadrature_error,
            entropy_stderr: None,
            bound_stderr: None,
            slack_stderr: None,
            flags: Vec::new(),
            inputs_digest: String::new(),
        }
    }

    pub fn with_digest(mut self, digest: &str) -> BoundReport {
        self.inputs_digest = digest.to_string();
        self
    }
}

/// `entropy/bound` with `0/0 → 1`.
pub fn ratio_of(entropy: f64, bound: f64) -> f64 {
    if entropy == 0.0 && bound == 0.0 {
        1.0
    } else {
        entropy / bound
    }
}

/// Hex SHA-256 of raw bytes; reports identify their inputs with this.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in out {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_convention() {
        assert_eq!(ratio_of(0.0, 0.0), 1.0);
        assert_eq!(ratio_of(0.5, 1.0), 0.5);
        assert_eq!(ratio_of(0.0, 2.0), 0.0);
    }

    #[test]
    fn report_derives_slack_and_ratio() {
        let r = BoundReport::new("theorem3", 0.25, 0.5, 1e-12);
        assert_eq!(r.slack, 0.25);
        assert_eq!(r.ratio, 0.5);
        assert!(r.flags.is_empty());
    }

    #[test]
    fn sha256_matches_known_vector() {
        // SHA-256 of the empty string and of "abc" are fixed test vectors.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn optional_fields_stay_out_of_json() {
        let r = BoundReport::new("entropy", 0.1, 0.2, 0.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("stderr"));
        assert!(!json.contains("flags"));
        let back: BoundReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
