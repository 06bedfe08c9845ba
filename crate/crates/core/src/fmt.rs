//! Float formatting for CSV output.

/// Six significant digits, `%g` style.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return full(x);
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        // Rounding can carry into a new digit (e.g. 999999.5).
        if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 6 {
            return format!("{x:.5e}");
        }
        s
    } else {
        format!("{x:.5e}")
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn full(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

pub fn parse(s: &str) -> Option<f64> {
    match s.trim() {
        "" => None,
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(19736.842105), "19736.8");
        assert_eq!(sig6(0.5), "0.5");
        assert_eq!(sig6(20000.0), "20000");
        assert_eq!(sig6(1.5e-7), "1.50000e-7");
        assert_eq!(sig6(-2.0), "-2");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(f64::INFINITY), "inf");
    }

    #[test]
    fn full_round_trips() {
        for x in [0.1 + 0.2, 1.0 / 3.0, 1e-300, -7.25, f64::INFINITY] {
            assert_eq!(parse(&full(x)), Some(x));
        }
        assert!(parse(&full(f64::NAN)).unwrap().is_nan());
        assert_eq!(parse(""), None);
    }
}
