//! Small complex-arithmetic helpers that `num-complex` does not provide.

use std::cmp::Ordering;

use num_complex::Complex64;

pub type C64 = Complex64;

/// Largest real part for which `exp` stays finite in double precision.
pub const EXP_RE_MAX: f64 = 709.78;

pub const TAU: f64 = std::f64::consts::TAU;

/// `ln(1 + u)` on the principal branch, accurate for small `|u|`.
pub fn ln_1p(u: C64) -> C64 {
    let (a, b) = (u.re, u.im);
    let re = if a.abs() < 0.5 && b.abs() < 0.5 {
        // |1+u|^2 - 1 = 2a + a^2 + b^2
        0.5 * (2.0 * a + a * a + b * b).ln_1p()
    } else {
        (1.0 + a).hypot(b).ln()
    };
    C64::new(re, b.atan2(1.0 + a))
}

/// `exp(z) - 1`, accurate for small `|z|`.
pub fn exp_m1(z: C64) -> C64 {
    let (a, b) = (z.re, z.im);
    let half = (0.5 * b).sin();
    C64::new(a.exp_m1() * b.cos() - 2.0 * half * half, a.exp() * b.sin())
}

/// Lexicographic `(Re, Im)` order used to make merged results deterministic.
pub fn lex_order(a: &C64, b: &C64) -> Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

pub fn is_finite(z: C64) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// Parses `a+bi`, `a-bi`, `a`, `bi` (no spaces).
pub fn parse_complex(text: &str) -> Option<C64> {
    let s = text.trim();
    if s.is_empty() {
        return None;
    }
    if let Some(body) = s.strip_suffix('i') {
        // split at the last sign that is not part of an exponent or the leading sign
        let bytes = body.as_bytes();
        let mut split = None;
        for i in (1..bytes.len()).rev() {
            if (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E') {
                split = Some(i);
                break;
            }
        }
        let (re, im) = match split {
            Some(i) => (body[..i].parse::<f64>().ok()?, parse_imag(&body[i..])?),
            None => (0.0, parse_imag(body)?),
        };
        let z = C64::new(re, im);
        is_finite(z).then_some(z)
    } else {
        let re = s.parse::<f64>().ok()?;
        re.is_finite().then(|| C64::new(re, 0.0))
    }
}

fn parse_imag(part: &str) -> Option<f64> {
    match part {
        "" | "+" => Some(1.0),
        "-" => Some(-1.0),
        _ => part.parse().ok(),
    }
}

pub fn format_complex(z: C64) -> String {
    if z.im.is_sign_negative() {
        format!("{}-{}i", z.re, -z.im)
    } else {
        format!("{}+{}i", z.re, z.im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_1p_small_and_large() {
        let u = C64::new(1e-20, -3e-21);
        let v = ln_1p(u);
        assert!((v.re - 1e-20).abs() < 1e-35);
        assert!((v.im + 3e-21).abs() < 1e-35);
        let w = C64::new(2.0, 5.0);
        assert!((ln_1p(w) - (w + 1.0).ln()).norm() < 1e-15);
        // principal branch on the cut
        assert!((ln_1p(C64::new(-3.0, 0.0)).im - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn exp_m1_small() {
        let z = C64::new(1e-17, 2e-17);
        let e = exp_m1(z);
        assert!((e - z).norm() < 1e-32);
        let w = C64::new(0.7, -2.0);
        assert!((exp_m1(w) - (w.exp() - 1.0)).norm() < 1e-15);
    }

    #[test]
    fn parse_forms() {
        assert_eq!(parse_complex("-2+0i"), Some(C64::new(-2.0, 0.0)));
        assert_eq!(parse_complex("1-3.5i"), Some(C64::new(1.0, -3.5)));
        assert_eq!(parse_complex("0.3i"), Some(C64::new(0.0, 0.3)));
        assert_eq!(parse_complex("-i"), Some(C64::new(0.0, -1.0)));
        assert_eq!(parse_complex("4"), Some(C64::new(4.0, 0.0)));
        assert_eq!(parse_complex("1e-3+2e+1i"), Some(C64::new(1e-3, 20.0)));
        assert_eq!(parse_complex("nan"), None);
        assert_eq!(parse_complex("1 + 2i"), None);
        assert_eq!(parse_complex(""), None);
        let z = C64::new(-2.5, -0.25);
        assert_eq!(parse_complex(&format_complex(z)), Some(z));
    }
}
