//! Exact rational scalars and small helpers used throughout the crate.
//!
//! All formal algebra is done over arbitrary-precision rationals; floating
//! point only enters in the numerical solvers and reports.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational scalar.
pub type Q = BigRational;

/// Rational from an integer pair.
pub fn q(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

/// Rational from an integer.
pub fn qi(num: i64) -> Q {
    Q::from_integer(BigInt::from(num))
}

pub fn qzero() -> Q {
    Q::zero()
}

pub fn qone() -> Q {
    Q::one()
}

/// Exact factorial.
pub fn factorial(n: usize) -> Q {
    let mut acc = BigInt::one();
    for k in 2..=n {
        acc *= BigInt::from(k);
    }
    Q::from_integer(acc)
}

/// Exact binomial coefficient.
pub fn binomial(n: usize, k: usize) -> Q {
    if k > n {
        return Q::zero();
    }
    let k = k.min(n - k);
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for j in 0..k {
        num *= BigInt::from(n - j);
        den *= BigInt::from(j + 1);
    }
    Q::new(num, den)
}

/// Exact integer power with signed exponent on nonzero base.
pub fn qpow(base: &Q, exp: i64) -> Q {
    if exp >= 0 {
        num_traits::pow::pow(base.clone(), exp as usize)
    } else {
        num_traits::pow::pow(base.recip(), (-exp) as usize)
    }
}

/// Lossy conversion for reports and solvers.
pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        // Fall back on a ratio of leading digits when the bignum overflows f64.
        let digits = 300usize;
        let n = x.numer();
        let d = x.denom();
        let shift = |v: &BigInt| -> (f64, i64) {
            let s = v.magnitude().to_string();
            let len = s.len();
            let take = s.chars().take(digits.min(len)).collect::<String>();
            let lead: f64 = take.parse().unwrap_or(f64::INFINITY);
            (lead, (len - take.len()) as i64)
        };
        let (ln, en) = shift(n);
        let (ld, ed) = shift(d);
        let sign = if (n.is_negative()) ^ (d.is_negative()) {
            -1.0
        } else {
            1.0
        };
        sign * (ln / ld) * 10f64.powi((en - ed).clamp(-300, 300) as i32)
    })
}

/// Canonical `p/q` text form (denominator always written).
pub fn format_q(x: &Q) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

/// Parse either `p/q` or a plain integer.
pub fn parse_q(s: &str) -> Option<Q> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let num: BigInt = n.trim().parse().ok()?;
        let den: BigInt = d.trim().parse().ok()?;
        if den.is_zero() {
            return None;
        }
        Some(Q::new(num, den))
    } else {
        let num: BigInt = s.parse().ok()?;
        Some(Q::from_integer(num))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorial_and_binomial() {
        assert_eq!(factorial(0), qi(1));
        assert_eq!(factorial(5), qi(120));
        assert_eq!(binomial(6, 2), qi(15));
        assert_eq!(binomial(3, 5), qi(0));
    }

    #[test]
    fn format_parse_round_trip() {
        let x = q(-7, 12);
        assert_eq!(parse_q(&format_q(&x)).unwrap(), x);
        assert_eq!(parse_q("5").unwrap(), qi(5));
    }

    #[test]
    fn to_f64_huge_values() {
        let big = qpow(&qi(10), 400);
        assert!(to_f64(&big).is_infinite() || to_f64(&big) > 1e300);
        let tiny = qpow(&qi(10), -400);
        assert!(to_f64(&tiny) >= 0.0 && to_f64(&tiny) < 1e-300);
    }
}
