//! Plain-text number formatting shared by the golden tables and CSV writers.

/// Formats `x` with `digits` significant digits, `%g` style: fixed notation
/// for moderate exponents, scientific otherwise, trailing zeros trimmed.
pub fn format_significant(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exponent) = sci.split_once('e').expect("scientific format has an exponent");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if exponent < -4 || exponent >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exponent < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exponent.abs())
    } else {
        let decimals = (digits as i32 - 1 - exponent).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

/// Twelve significant digits, the precision used by every emitted table.
pub fn g12(x: f64) -> String {
    format_significant(x, 12)
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        assert_eq!(g12(0.5), "0.5");
        assert_eq!(g12(1.0), "1");
        assert_eq!(g12(-2.25), "-2.25");
        assert_eq!(g12(1.0 / 3.0), "0.333333333333");
        assert_eq!(g12(0.146446609407), "0.146446609407");
        assert_eq!(g12(1.5e-5), "1.5e-05");
        assert_eq!(g12(123456789012345.0), "1.23456789012e+14");
        assert_eq!(g12(0.0001), "0.0001");
        assert_eq!(g12(0.0), "0");
    }

    #[test]
    fn round_trips_to_twelve_digits() {
        for &x in &[std::f64::consts::PI, -1e-7 * std::f64::consts::E, 6.02214076e23] {
            let back: f64 = g12(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-11);
        }
    }
}
