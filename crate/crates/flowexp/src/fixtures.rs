//! Named test systems shared by the CLI, the test suites and the sweeps.

use crate::fields::{MultiPoly, RatExpr, VectorField};
use crate::matrix::QMat;
use crate::rat::{q, qi, Q};
use crate::signals::{Control, Poly1, PwPoly};

/// The 3d polynomial normal-form system: drift `(0, x1+x1², x1·x2)` and the
/// constant input field `e1`. Its bracket table is rich through length 5 and
/// then collapses, which makes it a good order-sweep target.
pub fn normal_form_3d() -> (VectorField, VectorField) {
    let dim = 3;
    let x1 = MultiPoly::var(dim, 0);
    let x2 = MultiPoly::var(dim, 1);
    let f0 = VectorField::from_polys(vec![
        MultiPoly::zero(dim),
        x1.add(&x1.mul(&x1)),
        x1.mul(&x2),
    ]);
    let f1 = VectorField::unit(dim, 0);
    (f0, f1)
}

/// The factorial-saturating pair `f0 = e1`, `f1 = (1-x1)^{-1} e2`; every
/// bracket containing `f1` twice vanishes.
pub fn optimal_pair() -> (VectorField, VectorField) {
    let f0 = VectorField::unit(2, 0);
    let f1 =
        VectorField::zero(2).with_component(1, RatExpr::rational(MultiPoly::constant(2, qi(1)), 1));
    (f0, f1)
}

/// The drift variant used against the usual Magnus expansion:
/// `f0 = x2·e1`, `f1 = (1-x1)^{-1} e2`.
pub fn magnus_control_pair() -> (VectorField, VectorField) {
    let dim = 2;
    let f0 = VectorField::zero(dim).with_component(0, RatExpr::poly(MultiPoly::var(dim, 1)));
    let f1 = VectorField::zero(dim)
        .with_component(1, RatExpr::rational(MultiPoly::constant(dim, qi(1)), 1));
    (f0, f1)
}

/// Strictly lower-triangular linear trio on `K³` (drift plus two inputs);
/// the generated Lie algebra is nilpotent of index 3.
pub fn triangular_nilpotent_trio() -> (Vec<QMat>, Vec<VectorField>) {
    let rows = |m: [[i64; 3]; 3]| -> Vec<Vec<Q>> {
        m.iter()
            .map(|r| r.iter().map(|&v| q(v, 10)).collect())
            .collect()
    };
    let mats = vec![
        rows([[0, 0, 0], [3, 0, 0], [1, 2, 0]]),
        rows([[0, 0, 0], [-2, 0, 0], [0, 3, 0]]),
        rows([[0, 0, 0], [1, 0, 0], [-1, 1, 0]]),
    ];
    let fields = mats.iter().map(|m| VectorField::linear(m)).collect();
    (mats.into_iter().map(QMat).collect(), fields)
}

/// Cross-product generators of rotations: `F1, F2, F3` with
/// `[F1,F2] = F3`, `[F2,F3] = F1`, `[F3,F1] = F2` (integer matrices).
pub fn so3_generators() -> [QMat; 3] {
    let f = |m: [[i64; 3]; 3]| {
        QMat(
            m.iter()
                .map(|r| r.iter().map(|&v| qi(v)).collect())
                .collect(),
        )
    };
    [
        f([[0, 0, 0], [0, 0, -1], [0, 1, 0]]),
        f([[0, 0, 1], [0, 0, 0], [-1, 0, 0]]),
        f([[0, -1, 0], [1, 0, 0], [0, 0, 0]]),
    ]
}

/// A complexified rotation generator tracked symbolically: the matrix
/// `e^{i·π·angle12/6} F_axis` with `angle12` held modulo 12. The divergence
/// fixture stays inside this set, so phases are exact integers.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PhasedSo3 {
    /// Multiple of π/6, modulo 12.
    pub angle12: u8,
    /// Which generator, 1-based (F1, F2, F3).
    pub axis: u8,
}

impl PhasedSo3 {
    /// `[z1 F_i, z2 F_j] = z1 z2 [F_i, F_j]` with the cross-product table;
    /// `None` when the commutator vanishes (same axis).
    pub fn commutator(a: PhasedSo3, b: PhasedSo3) -> Option<PhasedSo3> {
        if a.axis == b.axis {
            return None;
        }
        // (axis, sign) of [F_i, F_j] for i != j.
        let (axis, negate) = match (a.axis, b.axis) {
            (1, 2) => (3, false),
            (2, 1) => (3, true),
            (2, 3) => (1, false),
            (3, 2) => (1, true),
            (3, 1) => (2, false),
            (1, 3) => (2, true),
            _ => unreachable!("axes are 1..=3"),
        };
        let mut angle = (a.angle12 + b.angle12) % 12;
        if negate {
            angle = (angle + 6) % 12;
        }
        Some(PhasedSo3 {
            angle12: angle,
            axis,
        })
    }

    /// Is this `(-1)^{sign_exp} · i · F_axis`? (angle 3 = +i, angle 9 = -i.)
    pub fn is_plus_i(&self) -> bool {
        self.angle12 == 3
    }

    pub fn is_minus_i(&self) -> bool {
        self.angle12 == 9
    }
}

/// Square-wave control: `±amplitude` alternating over `2·half_periods`
/// intervals of length `horizon / (2·half_periods)`. Its primitive is a
/// small triangle wave, so it is highly oscillatory with tiny `‖U‖_∞`.
pub fn square_wave(channel: usize, amplitude: Q, half_periods: usize, horizon: Q) -> Control {
    let n = 2 * half_periods;
    let step = &horizon / qi(n as i64);
    let bps: Vec<Q> = (0..=n).map(|i| &step * qi(i as i64)).collect();
    let pieces: Vec<Poly1> = (0..n)
        .map(|i| {
            if i % 2 == 0 {
                Poly1::constant(amplitude.clone())
            } else {
                Poly1::constant(-amplitude.clone())
            }
        })
        .collect();
    Control::new(channel, PwPoly::new(bps, pieces))
}

/// The two-input failure system `ẋ1 = u, ẋ2 = v·x1` as vector fields.
pub fn multi_input_failure_fields() -> (VectorField, VectorField) {
    let dim = 2;
    let g_u = VectorField::unit(dim, 0);
    let g_v = VectorField::zero(dim).with_component(1, RatExpr::poly(MultiPoly::var(dim, 0)));
    (g_u, g_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::primitive;

    #[test]
    fn so3_commutator_table() {
        let [f1, f2, f3] = so3_generators();
        assert_eq!(f1.commutator(&f2), f3);
        assert_eq!(f2.commutator(&f3), f1);
        assert_eq!(f3.commutator(&f1), f2);
        // [F2,[F1,F2]] = F1 and [F1,[F1,F2]] = -F2.
        assert_eq!(f2.commutator(&f1.commutator(&f2)), f1);
        assert_eq!(f1.commutator(&f1.commutator(&f2)), f2.scale(&qi(-1)));
    }

    #[test]
    fn phased_so3_bk_pattern() {
        // A1 = e^{iπ/6}F1, A2 = e^{iπ/6}F2; along b_{k+1}^1 = [b_k^2,[b_k^1,b_k^2]]
        // and b_{k+1}^2 = [b_k^1,[b_k^1,b_k^2]]: A_{b_k^1} = (-1)^{k+1} i F1.
        let mut a1 = PhasedSo3 {
            angle12: 1,
            axis: 1,
        };
        let mut a2 = PhasedSo3 {
            angle12: 1,
            axis: 2,
        };
        for k in 1..=6 {
            let inner = PhasedSo3::commutator(a1, a2).unwrap();
            let next1 = PhasedSo3::commutator(a2, inner).unwrap();
            let next2 = PhasedSo3::commutator(a1, inner).unwrap();
            a1 = next1;
            a2 = next2;
            assert_eq!(a1.axis, 1);
            assert_eq!(a2.axis, 2);
            if k % 2 == 1 {
                assert!(a1.is_plus_i(), "k = {k}: angle {}", a1.angle12);
            } else {
                assert!(a1.is_minus_i(), "k = {k}: angle {}", a1.angle12);
            }
            assert!(a2.is_minus_i(), "k = {k}: angle {}", a2.angle12);
        }
    }

    #[test]
    fn square_wave_primitive_is_small() {
        let u = square_wave(1, qi(8), 8, qi(1));
        let cap_u = primitive(&u);
        // U vanishes at the end of every full period and stays ≤ amp·step.
        assert_eq!(cap_u.eval(&qi(1)), qi(0));
        assert_eq!(cap_u.eval(&q(1, 8)), qi(0));
        let peak = cap_u.eval(&q(1, 32));
        assert_eq!(peak, q(1, 4));
    }

    #[test]
    fn triangular_trio_is_nilpotent() {
        let (_, fields) = triangular_nilpotent_trio();
        for f in &fields {
            for g in &fields {
                let b = f.lie_bracket(g).unwrap();
                for h in &fields {
                    assert!(h.lie_bracket(&b).unwrap().is_zero());
                }
            }
        }
    }
}
