//! Plain-text number formatting shared by the CSV writers.

/// Decimal text with `digits` significant digits, e.g. `1.63299316186` for 12.
///
/// Non-finite values are written as `nan`, `inf` and `-inf`.
pub fn significant(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let digits = digits.max(1);
    if x == 0.0 {
        return format!("{:.*}", digits - 1, 0.0);
    }
    // Round in scientific form first so the exponent accounts for carries (9.99.. -> 10.0).
    let sci = format!("{:.*e}", digits - 1, x);
    let exponent: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    let decimals = (digits as i32 - 1 - exponent).max(0) as usize;
    let text = format!("{:.*}", decimals, x);
    if text.starts_with("-0") && text.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        return text.trim_start_matches('-').to_string();
    }
    text
}

/// Twelve significant digits, the precision used by every report table.
pub fn sig12(x: f64) -> String {
    significant(x, 12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(sig12(1.632_993_161_855_452), "1.63299316186");
        assert_eq!(sig12(0.5 * 2f64.ln()), "0.346573590280");
        assert_eq!(sig12(-0.013_240_236_9), "-0.0132402369000");
        assert_eq!(sig12(0.0), "0.00000000000");
        assert_eq!(sig12(322.957_f64), "322.957000000");
        assert_eq!(sig12(1234567.0), "1234567.00000");
    }

    #[test]
    fn carry_into_next_decade() {
        assert_eq!(significant(9.9999999, 3), "10.0");
        assert_eq!(significant(-0.00099999, 2), "-0.0010");
    }

    #[test]
    fn non_finite() {
        assert_eq!(sig12(f64::NAN), "nan");
        assert_eq!(sig12(f64::NEG_INFINITY), "-inf");
    }
}
