//! Canonical number formatting shared by every on-disk format.

use serde_json::Value;

pub const SIGNIFICANT_DIGITS: usize = 6;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits through a decimal
/// round trip, so the result prints back to the same digits. `-0.0` maps to
/// `0.0`.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    let s = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let r: f64 = s.parse().expect("formatted float parses");
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(round_sig(x))
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

pub fn num_array<'a>(xs: impl IntoIterator<Item = &'a f64>) -> Value {
    Value::Array(xs.into_iter().map(|&x| num(x)).collect())
}

/// Pretty JSON with sorted keys (serde_json's default map is ordered) and a
/// trailing newline.
pub fn to_canonical_bytes(v: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("json values always serialize");
    out.push(b'\n');
    out
}

/// Compact variant used where documents are embedded in binary files.
pub fn to_canonical_compact(v: &Value) -> Vec<u8> {
    serde_json::to_vec(v).expect("json values always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_idempotent() {
        for &x in &[1.0 / 3.0, -2.0e-7, 123456789.0, 0.1 + 0.2, -0.0, 7.0] {
            let r = round_sig(x);
            assert_eq!(round_sig(r), r);
        }
        assert_eq!(round_sig(1.0 / 3.0), 0.333333);
        assert_eq!(round_sig(-0.0).to_bits(), 0.0f64.to_bits());
    }
}
