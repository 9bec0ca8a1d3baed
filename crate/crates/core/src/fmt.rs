//! Float serialization shared by every CSV surface.

/// Serializes a float with 17 significant digits in scientific notation.
///
/// 17 significant digits round-trip any f64 exactly, so parsing the output
/// and re-serializing it is byte-stable.
pub fn float17(x: f64) -> String {
    format!("{:.16e}", x)
}

#[cfg(test)]
mod tests {
    use super::float17;

    #[test]
    fn has_17_significant_digits() {
        assert_eq!(float17(0.25), "2.5000000000000000e-1");
        assert_eq!(float17(-5.0), "-5.0000000000000000e0");
        assert_eq!(float17(0.0), "0.0000000000000000e0");
        // Non-dyadic values render the stored f64, not the source literal.
        assert_eq!(float17(0.15), "1.4999999999999999e-1");
    }

    #[test]
    fn round_trips_exactly() {
        for &x in &[0.1, -3.25e-7, 1.9705553148896319, 2999.0, f64::MIN_POSITIVE] {
            let s = float17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
            assert_eq!(float17(back), s);
        }
    }
}
