//! Small dense matrices: exact rational and floating point.
//!
//! Dimensions in this crate stay tiny (2–4), so everything is plain
//! row-major `Vec<Vec<_>>` with direct algorithms: scaling-and-squaring for
//! the exponential, inverse scaling-and-squaring with Denman-Beavers square
//! roots for the logarithm.

use crate::rat::{qi, to_f64, Q};
use num_traits::Zero;

/// Exact rational matrix.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct QMat(pub Vec<Vec<Q>>);

impl QMat {
    pub fn zero(d: usize) -> Self {
        QMat(vec![vec![Q::zero(); d]; d])
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zero(d);
        for i in 0..d {
            m.0[i][i] = qi(1);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn add(&self, other: &QMat) -> QMat {
        let d = self.dim();
        let mut out = QMat::zero(d);
        for i in 0..d {
            for j in 0..d {
                out.0[i][j] = &self.0[i][j] + &other.0[i][j];
            }
        }
        out
    }

    pub fn scale(&self, c: &Q) -> QMat {
        let d = self.dim();
        let mut out = self.clone();
        for i in 0..d {
            for j in 0..d {
                out.0[i][j] *= c;
            }
        }
        out
    }

    pub fn mul(&self, other: &QMat) -> QMat {
        let d = self.dim();
        let mut out = QMat::zero(d);
        for i in 0..d {
            for k in 0..d {
                if self.0[i][k].is_zero() {
                    continue;
                }
                for j in 0..d {
                    if other.0[k][j].is_zero() {
                        continue;
                    }
                    out.0[i][j] += &self.0[i][k] * &other.0[k][j];
                }
            }
        }
        out
    }

    pub fn commutator(&self, other: &QMat) -> QMat {
        self.mul(other).add(&other.mul(self).scale(&qi(-1)))
    }

    pub fn ad_pow(&self, k: usize, other: &QMat) -> QMat {
        let mut out = other.clone();
        for _ in 0..k {
            out = self.commutator(&out);
        }
        out
    }

    pub fn apply(&self, v: &[Q]) -> Vec<Q> {
        self.0
            .iter()
            .map(|row| row.iter().zip(v).fold(Q::zero(), |acc, (a, x)| acc + a * x))
            .collect()
    }

    pub fn to_f64(&self) -> Mat {
        Mat(self
            .0
            .iter()
            .map(|row| row.iter().map(to_f64).collect())
            .collect())
    }

    /// Induced infinity norm (max absolute row sum), as f64.
    pub fn norm_f64(&self) -> f64 {
        self.to_f64().norm()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|r| r.iter().all(|c| c.is_zero()))
    }
}

/// Floating-point matrix.
#[derive(Clone, Debug)]
pub struct Mat(pub Vec<Vec<f64>>);

impl Mat {
    pub fn zero(d: usize) -> Self {
        Mat(vec![vec![0.0; d]; d])
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zero(d);
        for i in 0..d {
            m.0[i][i] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn add(&self, other: &Mat) -> Mat {
        let d = self.dim();
        let mut out = Mat::zero(d);
        for i in 0..d {
            for j in 0..d {
                out.0[i][j] = self.0[i][j] + other.0[i][j];
            }
        }
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat(self
            .0
            .iter()
            .map(|r| r.iter().map(|x| x * c).collect())
            .collect())
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        let d = self.dim();
        let mut out = Mat::zero(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.0[i][k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.0[i][j] += a * other.0[k][j];
                }
            }
        }
        out
    }

    pub fn commutator(&self, other: &Mat) -> Mat {
        self.mul(other).sub(&other.mul(self))
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.0
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, x)| a * x).sum())
            .collect()
    }

    /// Induced infinity norm (max absolute row sum).
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Option<Mat> {
        let d = self.dim();
        let mut a: Vec<Vec<f64>> = self.0.clone();
        let mut inv = Mat::identity(d).0;
        for col in 0..d {
            let pivot =
                (col..d).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
            if a[pivot][col].abs() < 1e-300 {
                return None;
            }
            a.swap(col, pivot);
            inv.swap(col, pivot);
            let p = a[col][col];
            for j in 0..d {
                a[col][j] /= p;
                inv[col][j] /= p;
            }
            for i in 0..d {
                if i != col {
                    let f = a[i][col];
                    if f != 0.0 {
                        for j in 0..d {
                            a[i][j] -= f * a[col][j];
                            inv[i][j] -= f * inv[col][j];
                        }
                    }
                }
            }
        }
        Some(Mat(inv))
    }

    /// Solve `self · x = b` through the inverse (dimensions are tiny).
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        Some(self.inverse()?.apply(b))
    }
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn matrix_exp(a: &Mat) -> Mat {
    let d = a.dim();
    let norm = a.norm();
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let b = a.scale(scale);
    let mut term = Mat::identity(d);
    let mut sum = Mat::identity(d);
    for k in 1..=30 {
        term = term.mul(&b).scale(1.0 / k as f64);
        sum = sum.add(&term);
        if term.norm() < 1e-20 * sum.norm().max(1.0) {
            break;
        }
    }
    let mut out = sum;
    for _ in 0..squarings {
        out = out.mul(&out);
    }
    out
}

/// Matrix logarithm by inverse scaling and squaring: Denman-Beavers square
/// roots until `‖M - I‖` is small, then the Mercator series.
pub fn matrix_log(m: &Mat) -> Option<Mat> {
    let d = m.dim();
    let mut x = m.clone();
    let mut doublings = 0u32;
    while x.sub(&Mat::identity(d)).norm() > 0.25 {
        x = matrix_sqrt(&x)?;
        doublings += 1;
        if doublings > 60 {
            return None;
        }
    }
    let e = x.sub(&Mat::identity(d));
    let mut term = Mat::identity(d);
    let mut sum = Mat::zero(d);
    for k in 1..=60 {
        term = term.mul(&e);
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sum = sum.add(&term.scale(sign / k as f64));
        if term.norm() < 1e-19 {
            break;
        }
    }
    Some(sum.scale(f64::powi(2.0, doublings as i32)))
}

/// Denman-Beavers iteration for the principal square root.
fn matrix_sqrt(m: &Mat) -> Option<Mat> {
    let d = m.dim();
    let mut y = m.clone();
    let mut z = Mat::identity(d);
    for _ in 0..80 {
        let y_inv = y.inverse()?;
        let z_inv = z.inverse()?;
        let y_next = y.add(&z_inv).scale(0.5);
        let z_next = z.add(&y_inv).scale(0.5);
        let delta = y_next.sub(&y).norm();
        y = y_next;
        z = z_next;
        if delta < 1e-16 {
            break;
        }
    }
    Some(y)
}

/// Exact Taylor exponential of a rational matrix, summed until the term
/// norm drops below `floor` (callers pick a floor far under their target
/// accuracy; the series converges factorially).
pub fn qmat_exp_taylor(a: &QMat, floor: f64) -> QMat {
    let d = a.dim();
    let mut term = QMat::identity(d);
    let mut sum = QMat::identity(d);
    for k in 1..200 {
        term = term.mul(a).scale(&crate::rat::qi(k as i64).recip());
        sum = sum.add(&term);
        if term.norm_f64() < floor {
            break;
        }
    }
    sum
}

/// Round the entries to denominator `2^bits`; the perturbation is at most
/// `2^{-bits-1}` per entry, which keeps bignum growth in check in long
/// exact computations.
pub fn qmat_round(a: &QMat, bits: u32) -> QMat {
    use num_bigint::BigInt;
    let scale = BigInt::from(1u8) << bits;
    let half = Q::new(BigInt::from(1u8), BigInt::from(2u8));
    QMat(
        a.0.iter()
            .map(|row| {
                row.iter()
                    .map(|x| {
                        let scaled = x * Q::from_integer(scale.clone()) + &half;
                        Q::new(scaled.floor().to_integer(), scale.clone())
                    })
                    .collect()
            })
            .collect(),
    )
}

/// Max absolute entry of `a - b` as f64 (exact difference, lossy readout).
pub fn qmat_diff_norm(a: &QMat, b: &QMat) -> f64 {
    let d = a.dim();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let diff = &a.0[i][j] - &b.0[i][j];
            worst = worst.max(crate::rat::to_f64(&diff).abs());
        }
    }
    worst
}

/// Truncated conjugation series `Σ_{k<terms} ad^k_{h0}(h1)/k!`.
pub fn matrix_ad_series(h0: &Mat, h1: &Mat, terms: usize) -> Mat {
    let mut sum = Mat::zero(h0.dim());
    let mut ad = h1.clone();
    let mut fact = 1.0;
    for k in 0..terms {
        if k > 0 {
            ad = h0.commutator(&ad);
            fact *= k as f64;
        }
        sum = sum.add(&ad.scale(1.0 / fact));
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat::q;

    #[test]
    fn exp_of_zero_is_identity() {
        let e = matrix_exp(&Mat::zero(3));
        assert!(e.sub(&Mat::identity(3)).norm() < 1e-15);
    }

    #[test]
    fn exp_of_nilpotent_is_exact() {
        // N² = 0 gives exp(N) = I + N exactly.
        let mut n = Mat::zero(2);
        n.0[0][1] = 3.5;
        let e = matrix_exp(&n);
        let expected = Mat::identity(2).add(&n);
        assert!(e.sub(&expected).norm() < 1e-15);
    }

    #[test]
    fn exp_matches_scalar_case() {
        let mut a = Mat::zero(1);
        a.0[0][0] = 1.7;
        assert!((matrix_exp(&a).0[0][0] - 1.7f64.exp()).abs() < 1e-13);
    }

    #[test]
    fn log_inverts_exp() {
        let mut a = Mat::zero(3);
        a.0[0][1] = 0.3;
        a.0[1][2] = -0.2;
        a.0[2][0] = 0.1;
        a.0[1][1] = 0.05;
        let e = matrix_exp(&a);
        let l = matrix_log(&e).unwrap();
        assert!(l.sub(&a).norm() < 1e-12);
    }

    #[test]
    fn ad_series_approximates_conjugation() {
        // ‖e^{H0} H1 e^{-H0} - Σ_{k<K} ad^k/k!‖ ≤ (2‖H0‖)^K ‖H1‖ e^{2‖H0‖}/K!.
        let mut h0 = Mat::zero(2);
        h0.0[0][1] = 0.4;
        h0.0[1][0] = -0.3;
        let mut h1 = Mat::zero(2);
        h1.0[0][0] = 1.0;
        h1.0[1][0] = 0.7;
        let conj = matrix_exp(&h0).mul(&h1).mul(&matrix_exp(&h0.scale(-1.0)));
        let mut fact = 1.0;
        for k in 1..=10usize {
            fact *= k as f64;
            let series = matrix_ad_series(&h0, &h1, k);
            let bound =
                (2.0 * h0.norm()).powi(k as i32) * h1.norm() * (2.0 * h0.norm()).exp() / fact;
            assert!(
                conj.sub(&series).norm() <= bound + 1e-14,
                "bound fails at K = {k}"
            );
        }
        let series = matrix_ad_series(&h0, &h1, 25);
        assert!(conj.sub(&series).norm() < 1e-14);
    }

    #[test]
    fn qmat_commutator_antisymmetry() {
        let a = QMat(vec![vec![q(1, 2), q(0, 1)], vec![q(1, 3), q(-2, 1)]]);
        let b = QMat(vec![vec![q(0, 1), q(1, 1)], vec![q(1, 1), q(0, 1)]]);
        let c = a.commutator(&b);
        let anti = b.commutator(&a).scale(&qi(-1));
        assert_eq!(c, anti);
        assert!((a.to_f64().norm() - a.norm_f64()).abs() < 1e-15);
    }
}
