//! Numerical reference solutions and matrix expansion operators.
//!
//! The oracle is an embedded Dormand-Prince 5(4) pair with adaptive steps;
//! control breakpoints are hard step boundaries so discontinuous inputs are
//! never smoothed across. Flows of autonomous fields, variational Jacobians
//! and pushforwards build on it. Matrix Magnus expansions are computed
//! exactly (rational iterated-integral matrices), with the convention that
//! `exp(Z_R)` approximates the fundamental solution of `Y' = A(t) Y`.

use crate::fields::VectorField;
use crate::matrix::{Mat, QMat};
use crate::rat::{qi, to_f64, Q};
use crate::signals::{Control, ControlTuple, PwPoly};
use num_traits::Zero;
use std::fmt;

/// Errors from the numerical solvers.
#[derive(Debug, Clone, PartialEq)]
pub enum SolverError {
    /// Step size collapsed below the resolution limit.
    StepUnderflow(f64),
    /// The right-hand side produced a non-finite value (pole hit).
    NonFinite(f64),
    /// A linear solve met a singular matrix.
    Singular,
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::StepUnderflow(t) => write!(f, "step underflow at t = {t}"),
            SolverError::NonFinite(t) => write!(f, "non-finite right-hand side at t = {t}"),
            SolverError::Singular => write!(f, "singular Jacobian in linear solve"),
        }
    }
}

impl std::error::Error for SolverError {}

/// Global cap on accepted-plus-rejected steps per solve; the CLI exposes it
/// as `--max-steps`. Solves exceeding the cap fail with a step underflow.
static MAX_STEPS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(40_000_000);

pub fn set_max_steps(cap: usize) {
    MAX_STEPS.store(cap.max(16), std::sync::atomic::Ordering::Relaxed);
}

pub fn max_steps() -> usize {
    MAX_STEPS.load(std::sync::atomic::Ordering::Relaxed)
}

/// Endpoint of a solve, with optional variational Jacobian and statistics.
#[derive(Clone, Debug)]
pub struct FlowResult {
    pub endpoint: Vec<f64>,
    pub jacobian: Option<Mat>,
    pub steps: usize,
    pub rejected: usize,
    /// Accumulated local error estimates (coarse global indicator).
    pub error_estimate: f64,
}

/// A control-affine reference problem `ẋ = f0(x) + Σ u_i(t) f_i(x)`.
#[derive(Clone, Debug)]
pub struct OdeProblem {
    pub drift: Option<VectorField>,
    pub controlled: Vec<(Control, VectorField)>,
    pub start: Vec<Q>,
    pub horizon: Q,
    pub tol: f64,
}

impl OdeProblem {
    fn dim(&self) -> usize {
        self.start.len()
    }

    fn breakpoints_f64(&self) -> Vec<f64> {
        let mut bps: Vec<f64> = Vec::new();
        for (c, _) in &self.controlled {
            bps.extend(c.signal.breakpoints().iter().map(to_f64));
        }
        bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bps.dedup();
        bps
    }
}

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand-Prince 5(4) from `t0` to `t1` (either direction), with
/// the given interior breakpoints treated as mandatory step boundaries.
pub fn dp54<F>(
    f: &F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    tol: f64,
    breakpoints: &[f64],
) -> Result<FlowResult, SolverError>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let dim = y0.len();
    let span = (t1 - t0).abs();
    if span == 0.0 {
        return Ok(FlowResult {
            endpoint: y0.to_vec(),
            jacobian: None,
            steps: 0,
            rejected: 0,
            error_estimate: 0.0,
        });
    }
    let dir = (t1 - t0).signum();
    // Ordered interior boundaries in the direction of travel.
    let mut stops: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&b| (b - t0) * dir > 1e-15 * span && (t1 - b) * dir > 1e-15 * span)
        .collect();
    stops.sort_by(|a, b| ((a - t0) * dir).partial_cmp(&((b - t0) * dir)).unwrap());
    stops.push(t1);

    let mut y = y0.to_vec();
    let mut t = t0;
    let mut steps = 0usize;
    let mut rejected = 0usize;
    let mut err_acc = 0.0f64;
    let mut h = dir * (span / 64.0).min(0.1);

    for &stop in &stops {
        while (stop - t) * dir > 1e-14 * span {
            if h.abs() < 1e-15 * span.max(1.0) {
                return Err(SolverError::StepUnderflow(t));
            }
            if (t + h - stop) * dir > 0.0 {
                h = stop - t;
            }
            let mut k = vec![vec![0.0; dim]; 7];
            k[0] = f(t, &y);
            for (ki, kv) in k[0].iter().enumerate() {
                if !kv.is_finite() {
                    let _ = ki;
                    return Err(SolverError::NonFinite(t));
                }
            }
            for s in 1..7 {
                let mut ys = y.clone();
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = DP_A[s][j];
                    if a != 0.0 {
                        for i in 0..dim {
                            ys[i] += h * a * kj[i];
                        }
                    }
                }
                k[s] = f(t + DP_C[s] * h, &ys);
            }
            let mut y5 = y.clone();
            let mut y4 = y.clone();
            for (s, ks) in k.iter().enumerate() {
                for i in 0..dim {
                    y5[i] += h * DP_B5[s] * ks[i];
                    y4[i] += h * DP_B4[s] * ks[i];
                }
            }
            let mut err: f64 = 0.0;
            for i in 0..dim {
                if !y5[i].is_finite() {
                    return Err(SolverError::NonFinite(t));
                }
                let scale = tol * (1.0 + y[i].abs().max(y5[i].abs()));
                err = err.max((y5[i] - y4[i]).abs() / scale);
            }
            if err <= 1.0 {
                t += h;
                y = y5;
                steps += 1;
                err_acc += err * tol;
                let growth = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                h *= growth;
            } else {
                rejected += 1;
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
            if steps + rejected > max_steps() {
                return Err(SolverError::StepUnderflow(t));
            }
        }
        t = stop;
    }
    Ok(FlowResult {
        endpoint: y,
        jacobian: None,
        steps,
        rejected,
        error_estimate: err_acc,
    })
}

/// Reference endpoint for a control-affine problem at its horizon.
pub fn solve_reference(prob: &OdeProblem) -> Result<FlowResult, SolverError> {
    let dim = prob.dim();
    let drift = prob.drift.clone();
    let terms: Vec<(PwPoly, VectorField)> = prob
        .controlled
        .iter()
        .map(|(c, f)| (c.signal.clone(), f.clone()))
        .collect();
    let rhs = move |t: f64, y: &[f64]| -> Vec<f64> {
        let mut dy = vec![0.0; dim];
        if let Some(f0) = &drift {
            let v = f0.eval_f64(y);
            for i in 0..dim {
                dy[i] += v[i];
            }
        }
        for (u, f) in &terms {
            let uv = u.eval_f64(t);
            if uv != 0.0 {
                let v = f.eval_f64(y);
                for i in 0..dim {
                    dy[i] += uv * v[i];
                }
            }
        }
        dy
    };
    let p: Vec<f64> = prob.start.iter().map(to_f64).collect();
    dp54(
        &rhs,
        &p,
        0.0,
        to_f64(&prob.horizon),
        prob.tol,
        &prob.breakpoints_f64(),
    )
}

/// Time-`time` flow of an autonomous field.
pub fn autonomous_flow(
    g: &VectorField,
    p: &[f64],
    time: f64,
    tol: f64,
) -> Result<FlowResult, SolverError> {
    let rhs = |_t: f64, y: &[f64]| g.eval_f64(y);
    dp54(&rhs, p, 0.0, time, tol, &[])
}

/// Flow of an autonomous field together with the variational Jacobian
/// `∂_p Φ(time, p)`, via the augmented `d + d²` system.
pub fn flow_with_jacobian(
    g: &VectorField,
    p: &[f64],
    time: f64,
    tol: f64,
) -> Result<FlowResult, SolverError> {
    let d = g.dim();
    let jac = g.jacobian();
    let rhs = |_t: f64, z: &[f64]| -> Vec<f64> {
        let y = &z[..d];
        let mut dz = vec![0.0; d + d * d];
        let v = g.eval_f64(y);
        dz[..d].copy_from_slice(&v);
        // J' = Dg(y) J, J stored row-major after the state.
        let mut dg = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                dg[i][j] = jac[i][j].eval_f64(y);
            }
        }
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for (k, dgk) in dg[i].iter().enumerate() {
                    acc += dgk * z[d + k * d + j];
                }
                dz[d + i * d + j] = acc;
            }
        }
        dz
    };
    let mut z0 = vec![0.0; d + d * d];
    z0[..d].copy_from_slice(p);
    for i in 0..d {
        z0[d + i * d + i] = 1.0;
    }
    let res = dp54(&rhs, &z0, 0.0, time, tol, &[])?;
    let mut jacobian = Mat::zero(d);
    for i in 0..d {
        for j in 0..d {
            jacobian.0[i][j] = res.endpoint[d + i * d + j];
        }
    }
    Ok(FlowResult {
        endpoint: res.endpoint[..d].to_vec(),
        jacobian: Some(jacobian),
        steps: res.steps,
        rejected: res.rejected,
        error_estimate: res.error_estimate,
    })
}

/// Pushforward sample `g_t(τ, y) = ∂_pΦ0(τ-t, y)^{-1} f1(Φ0(τ-t, y))`.
pub fn pushforward_eval(
    f0: &VectorField,
    f1: &VectorField,
    t: f64,
    tau: f64,
    y: &[f64],
    tol: f64,
) -> Result<Vec<f64>, SolverError> {
    let s = tau - t;
    if s == 0.0 {
        return Ok(f1.eval_f64(y));
    }
    let res = flow_with_jacobian(f0, y, s, tol)?;
    let jac = res.jacobian.expect("jacobian requested");
    let value = f1.eval_f64(&res.endpoint);
    jac.solve(&value).ok_or(SolverError::Singular)
}

/// Matrix-valued piecewise polynomial `Σ c_j(τ) E_j` on a shared grid.
#[derive(Clone, Debug)]
pub struct MatPwPoly {
    entries: Vec<Vec<PwPoly>>,
}

impl MatPwPoly {
    pub fn from_letters(letters: &[(Control, QMat)]) -> Self {
        assert!(!letters.is_empty());
        let d = letters[0].1.dim();
        let horizon = letters[0].0.horizon().clone();
        let zero = PwPoly::constant(Q::zero(), horizon);
        let mut entries = vec![vec![zero; d]; d];
        for (c, e) in letters {
            for i in 0..d {
                for j in 0..d {
                    if !e.0[i][j].is_zero() {
                        entries[i][j] = entries[i][j].add(&c.signal.scale(&e.0[i][j]));
                    }
                }
            }
        }
        MatPwPoly { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    /// Right product `self(τ) · other(τ)` entrywise in the polynomial ring.
    pub fn mul(&self, other: &MatPwPoly) -> MatPwPoly {
        let d = self.dim();
        let horizon = self.entries[0][0].horizon().clone();
        let zero = PwPoly::constant(Q::zero(), horizon);
        let mut entries = vec![vec![zero; d]; d];
        for i in 0..d {
            for j in 0..d {
                let mut acc: Option<PwPoly> = None;
                for k in 0..d {
                    let prod = self.entries[i][k].mul(&other.entries[k][j]);
                    acc = Some(match acc {
                        None => prod,
                        Some(a) => a.add(&prod),
                    });
                }
                entries[i][j] = acc.expect("d >= 1");
            }
        }
        MatPwPoly { entries }
    }

    pub fn antiderivative(&self) -> MatPwPoly {
        MatPwPoly {
            entries: self
                .entries
                .iter()
                .map(|row| row.iter().map(|p| p.antiderivative()).collect())
                .collect(),
        }
    }

    pub fn eval(&self, t: &Q) -> QMat {
        QMat(
            self.entries
                .iter()
                .map(|row| row.iter().map(|p| p.eval(t)).collect())
                .collect(),
        )
    }

    pub fn scale(&self, c: &Q) -> MatPwPoly {
        MatPwPoly {
            entries: self
                .entries
                .iter()
                .map(|row| row.iter().map(|p| p.scale(c)).collect())
                .collect(),
        }
    }
}

/// Mode of [`matrix_magnus`].
#[derive(Clone, Debug)]
pub enum MagnusMode {
    /// `exp(Z_R) ≈` fundamental solution of `Y' = A(t) Y`.
    Plain,
    /// Interaction picture for `Y' = (H0 + A(t)) Y`: `exp(Z_R) e^{t H0}`.
    /// The conjugated control is expanded as an `ad` series capped at
    /// `ad_cap` powers.
    Interaction { h0: QMat, ad_cap: usize },
}

/// Exact matrix Magnus expansion through the logarithm of the iterated
/// Duhamel matrices: returns the cumulative `Z_R` for `R = 1..=r_max`.
///
/// The convention is `exp(Z_R) → fundamental solution`; internally this is
/// `Z_R = -Log_R{-A}(t)`, which for constant `A` collapses to `tA`.
pub fn matrix_magnus(
    letters: &[(Control, QMat)],
    t: &Q,
    r_max: usize,
    mode: &MagnusMode,
) -> Vec<QMat> {
    let effective: Vec<(Control, QMat)> = match mode {
        MagnusMode::Plain => letters
            .iter()
            .map(|(c, e)| (Control::new(c.channel, c.signal.scale(&qi(-1))), e.clone()))
            .collect(),
        MagnusMode::Interaction { h0, ad_cap } => {
            // -A_t(τ) = -Σ_{k,j} (t-τ)^k c_j(τ)/k! ad^k_{H0}(E_j).
            let mut out = Vec::new();
            for (c, e) in letters {
                for k in 0..=*ad_cap {
                    let adk = h0.ad_pow(k, e);
                    if adk.is_zero() {
                        break;
                    }
                    // (t-τ)^k /k! as a piecewise polynomial factor.
                    let mut tk = crate::signals::Poly1::constant(qi(1));
                    let lin = crate::signals::Poly1::from_coeffs(vec![t.clone(), qi(-1)]);
                    for _ in 0..k {
                        tk = tk.mul(&lin);
                    }
                    let factor = PwPoly::from_poly(tk, c.horizon().clone())
                        .scale(&(qi(-1) / crate::rat::factorial(k)));
                    let signal = c.signal.mul(&factor);
                    out.push((Control::new(out.len(), signal), adk));
                }
            }
            out
        }
    };
    let m = MatPwPoly::from_letters(&effective);
    let d = m.dim();
    // L_j(τ) with L_{j+1} = ∫ L_j M; keep only endpoint values.
    let mut l_vals: Vec<QMat> = Vec::with_capacity(r_max);
    let mut l_cur = m.antiderivative();
    l_vals.push(l_cur.eval(t));
    for _ in 2..=r_max {
        l_cur = l_cur.mul(&m).antiderivative();
        l_vals.push(l_cur.eval(t));
    }
    // Homogeneous pieces N_r = Σ_m ((-1)^{m-1}/m) Σ_{compositions} L_{r_m}..L_{r_1}.
    let mut homogeneous: Vec<QMat> = Vec::with_capacity(r_max);
    for r in 1..=r_max {
        let mut n_r = QMat::zero(d);
        for m_parts in 1..=r {
            let mut acc = QMat::zero(d);
            compositions(r, m_parts, &mut Vec::new(), &mut |parts: &[usize]| {
                // Product L_{parts[m-1]} ... L_{parts[0]}.
                let mut prod = l_vals[parts[parts.len() - 1] - 1].clone();
                for &pj in parts.iter().rev().skip(1) {
                    prod = prod.mul(&l_vals[pj - 1]);
                }
                acc = acc.add(&prod);
            });
            let sign = if m_parts % 2 == 1 { qi(1) } else { qi(-1) };
            n_r = n_r.add(&acc.scale(&(sign / qi(m_parts as i64))));
        }
        homogeneous.push(n_r);
    }
    // Z_R = -(N_1 + .. + N_R).
    let mut out = Vec::with_capacity(r_max);
    let mut acc = QMat::zero(d);
    for n_r in homogeneous {
        acc = acc.add(&n_r);
        out.push(acc.scale(&qi(-1)));
    }
    out
}

fn compositions(total: usize, parts: usize, prefix: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if parts == 1 {
        if total >= 1 {
            prefix.push(total);
            f(prefix);
            prefix.pop();
        }
        return;
    }
    for first in 1..=(total + 1 - parts) {
        prefix.push(first);
        compositions(total - first, parts - 1, prefix, f);
        prefix.pop();
    }
}

/// Exact fundamental solution of `Y' = A(t) Y` by the absolutely convergent
/// iterated-integral series, truncated once terms drop below `floor` in
/// norm (the series terms decay like `‖A‖_{L¹}^j / j!`).
pub fn fundamental_solution_exact(letters: &[(Control, QMat)], t: &Q, floor: f64) -> QMat {
    let m = MatPwPoly::from_letters(letters);
    let d = m.dim();
    let mut total = QMat::identity(d);
    // P_{j}(τ) = ∫ M(s) P_{j-1}(s) ds (left multiplication).
    let mut p_cur = m.antiderivative();
    for _ in 0..200 {
        let val = p_cur.eval(t);
        total = total.add(&val);
        if val.norm_f64() < floor {
            break;
        }
        p_cur = m.mul(&p_cur).antiderivative();
    }
    total
}

/// Endpoint of `Y' = A(t) Y` at `t` applied to `p`, via the adaptive solver.
pub fn solve_linear_reference(
    letters: &[(Control, QMat)],
    t: &Q,
    p: &[f64],
    tol: f64,
) -> Result<FlowResult, SolverError> {
    let mats: Vec<(PwPoly, Mat)> = letters
        .iter()
        .map(|(c, e)| (c.signal.clone(), e.to_f64()))
        .collect();
    let d = p.len();
    let rhs = move |tt: f64, y: &[f64]| -> Vec<f64> {
        let mut dy = vec![0.0; d];
        for (c, e) in &mats {
            let uv = c.eval_f64(tt);
            if uv != 0.0 {
                let v = e.apply(y);
                for i in 0..d {
                    dy[i] += uv * v[i];
                }
            }
        }
        dy
    };
    let mut bps: Vec<f64> = letters
        .iter()
        .flat_map(|(c, _)| c.signal.breakpoints().iter().map(to_f64))
        .collect();
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bps.dedup();
    dp54(&rhs, p, 0.0, to_f64(t), tol, &bps)
}

/// Constant-letter helper: wraps matrices as constant controls on `[0, t]`.
pub fn constant_letters(mats: &[QMat], controls: &ControlTuple) -> Vec<(Control, QMat)> {
    controls
        .channels()
        .iter()
        .zip(mats)
        .map(|(c, m)| (c.clone(), m.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::MultiPoly;
    use crate::matrix::matrix_exp;
    use crate::rat::q;
    use crate::signals::Poly1;

    fn normal_form_drift() -> VectorField {
        let dim = 3;
        let x1 = MultiPoly::var(dim, 0);
        let x2 = MultiPoly::var(dim, 1);
        VectorField::from_polys(vec![
            MultiPoly::zero(dim),
            x1.add(&x1.mul(&x1)),
            x1.mul(&x2),
        ])
    }

    #[test]
    fn zero_rhs_stays_put() {
        let prob = OdeProblem {
            drift: Some(VectorField::zero(3)),
            controlled: vec![],
            start: vec![q(1, 3), qi(0), q(-1, 2)],
            horizon: qi(1),
            tol: 1e-12,
        };
        let res = solve_reference(&prob).unwrap();
        assert_eq!(res.endpoint, vec![1.0 / 3.0, 0.0, -0.5]);
    }

    #[test]
    fn equilibrium_of_normal_form_system() {
        // u ≡ 0 and p = 0 is an equilibrium of the drift.
        let prob = OdeProblem {
            drift: Some(normal_form_drift()),
            controlled: vec![(Control::constant(1, qi(0), qi(1)), VectorField::unit(3, 0))],
            start: vec![qi(0), qi(0), qi(0)],
            horizon: qi(1),
            tol: 1e-12,
        };
        let res = solve_reference(&prob).unwrap();
        for v in res.endpoint {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_linear_system_matches_matrix_exp() {
        let a = vec![
            vec![q(1, 10), q(-1, 5), qi(0)],
            vec![q(1, 5), qi(0), q(1, 10)],
            vec![qi(0), q(-1, 10), q(1, 20)],
        ];
        let field = VectorField::linear(&a);
        let tol = 1e-12;
        let prob = OdeProblem {
            drift: Some(field),
            controlled: vec![],
            start: vec![qi(1), q(-1, 2), q(1, 4)],
            horizon: qi(1),
            tol,
        };
        let res = solve_reference(&prob).unwrap();
        let qa = QMat(a);
        let expected = matrix_exp(&qa.to_f64()).apply(&[1.0, -0.5, 0.25]);
        for (x, e) in res.endpoint.iter().zip(&expected) {
            assert!((x - e).abs() < 10.0 * tol, "{x} vs {e}");
        }
    }

    #[test]
    fn autonomous_flow_basics() {
        assert_eq!(
            autonomous_flow(&VectorField::zero(2), &[0.3, -0.4], 1.0, 1e-12)
                .unwrap()
                .endpoint,
            vec![0.3, -0.4]
        );
        // Constant field translates.
        let mut c = VectorField::zero(2);
        c = c.with_component(
            0,
            crate::fields::RatExpr::poly(MultiPoly::constant(2, q(1, 2))),
        );
        let res = autonomous_flow(&c, &[0.0, 1.0], 1.0, 1e-12).unwrap();
        assert!((res.endpoint[0] - 0.5).abs() < 1e-12);
        assert!((res.endpoint[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn autonomous_taylor_order() {
        // |e^{tg}Id(p) - Σ_{k≤M} t^k (g·∇)^k Id(p)/k!| decays like t^{M+1}.
        let g = normal_form_drift().add(&VectorField::unit(3, 0)).unwrap();
        let p = [0.25, -0.125, 0.0625];
        for m in 1..=3usize {
            // Taylor coefficients (g·∇)^k Id as exact fields.
            let mut ops: Vec<VectorField> = vec![];
            let mut cur: Vec<crate::fields::RatExpr> = (0..3)
                .map(|i| crate::fields::RatExpr::poly(MultiPoly::var(3, i)))
                .collect();
            for _ in 0..=m {
                // (g·∇) applied componentwise.
                let next: Vec<crate::fields::RatExpr> = cur
                    .iter()
                    .map(|phi| {
                        let mut acc = crate::fields::RatExpr::zero(3);
                        for (j, gj) in g.comps().iter().enumerate() {
                            acc = acc.add(&gj.mul(&phi.partial(j)));
                        }
                        acc
                    })
                    .collect();
                ops.push(VectorField::new(next.clone()));
                cur = next;
            }
            let mut errs = Vec::new();
            let mut logs = Vec::new();
            for e in 3..=7 {
                let t = 0.5f64.powi(e);
                let flow = autonomous_flow(&g, &p, t, 1e-13).unwrap().endpoint;
                let mut taylor: Vec<f64> = p.to_vec();
                let mut fact = 1.0;
                for (k, op) in ops.iter().take(m).enumerate() {
                    fact *= (k + 1) as f64;
                    let v = op.eval_f64(&p);
                    for i in 0..3 {
                        taylor[i] += t.powi(k as i32 + 1) * v[i] / fact;
                    }
                }
                let err: f64 = flow
                    .iter()
                    .zip(&taylor)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if err > 1e-11 {
                    errs.push(err);
                    logs.push(t);
                }
            }
            assert!(errs.len() >= 3, "not enough points at M = {m}");
            let slope = fit_slope(&logs, &errs);
            assert!(
                (slope - (m as f64 + 1.0)).abs() < 0.35,
                "M = {m}: slope {slope}"
            );
        }
    }

    fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let sx: f64 = lx.iter().sum();
        let sy: f64 = ly.iter().sum();
        let sxx: f64 = lx.iter().map(|v| v * v).sum();
        let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| a * b).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn jacobian_of_zero_field_is_identity() {
        let res = flow_with_jacobian(&VectorField::zero(2), &[0.1, 0.2], 1.0, 1e-12).unwrap();
        let j = res.jacobian.unwrap();
        assert!(j.sub(&Mat::identity(2)).norm() < 1e-12);
    }

    #[test]
    fn jacobian_of_linear_field_is_matrix_exp() {
        let a = vec![vec![q(1, 5), q(-1, 10)], vec![q(3, 10), q(1, 20)]];
        let field = VectorField::linear(&a);
        let res = flow_with_jacobian(&field, &[0.2, -0.1], 1.0, 1e-12).unwrap();
        let expected = matrix_exp(&QMat(a).to_f64());
        assert!(res.jacobian.unwrap().sub(&expected).norm() < 1e-10);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = normal_form_drift().add(&VectorField::unit(3, 0)).unwrap();
        let p = [0.2, -0.1, 0.15];
        let t = 0.5;
        let res = flow_with_jacobian(&g, &p, t, 1e-12).unwrap();
        let j = res.jacobian.unwrap();
        let h = 1e-5;
        for col in 0..3 {
            let mut pp = p;
            pp[col] += h;
            let plus = autonomous_flow(&g, &pp, t, 1e-12).unwrap().endpoint;
            pp[col] -= 2.0 * h;
            let minus = autonomous_flow(&g, &pp, t, 1e-12).unwrap().endpoint;
            for row in 0..3 {
                let fd = (plus[row] - minus[row]) / (2.0 * h);
                assert!(
                    (j.0[row][col] - fd).abs() < 1e-6,
                    "entry ({row},{col}): {} vs {}",
                    j.0[row][col],
                    fd
                );
            }
        }
    }

    #[test]
    fn pushforward_degenerate_cases() {
        let f1 = normal_form_drift();
        let y = [0.1, 0.2, -0.3];
        // f0 = 0 leaves f1 untouched.
        let v = pushforward_eval(&VectorField::zero(3), &f1, 0.5, 0.2, &y, 1e-12).unwrap();
        let direct = f1.eval_f64(&y);
        for (a, b) in v.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-10);
        }
        // τ = t likewise.
        let w = pushforward_eval(&normal_form_drift(), &f1, 0.5, 0.5, &y, 1e-12).unwrap();
        for (a, b) in w.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pushforward_matches_ad_series() {
        // Σ_k (τ-t)^k ad^k_{f0}(f1)(y)/k! approximates the pushforward.
        let f0 = normal_form_drift();
        let f1 = VectorField::unit(3, 0);
        let y = [0.2, 0.1, -0.1];
        let t = 0.5;
        let tau = 0.4;
        let v = pushforward_eval(&f0, &f1, t, tau, &y, 1e-13).unwrap();
        let mut series = vec![0.0; 3];
        let mut fact = 1.0;
        for k in 0..=8 {
            if k > 0 {
                fact *= k as f64;
            }
            let ad = f0.ad_pow(k, &f1).unwrap();
            let val = ad.eval_f64(&y);
            let w = (tau - t).powi(k as i32) / fact;
            for i in 0..3 {
                series[i] += w * val[i];
            }
        }
        for (a, b) in v.iter().zip(&series) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn matrix_magnus_constant_matrix() {
        // Constant A: Z_R = tA for every R (all commutator terms vanish).
        let a = QMat(vec![vec![q(1, 4), q(-1, 3)], vec![q(1, 5), q(1, 7)]]);
        let letters = vec![(Control::constant(0, qi(1), qi(1)), a.clone())];
        let t = q(3, 4);
        let zs = matrix_magnus(&letters, &t, 5, &MagnusMode::Plain);
        for z in &zs {
            assert_eq!(*z, a.scale(&t), "non-constant Z_R");
        }
    }

    #[test]
    fn matrix_magnus_converges_to_fundamental_solution() {
        // Piecewise-linear two-letter control with small L¹ norm.
        let mk = |coeffs: Vec<Vec<Q>>| QMat(coeffs);
        let e1 = mk(vec![
            vec![qi(0), q(1, 1), qi(0)],
            vec![q(-1, 2), qi(0), q(1, 3)],
            vec![qi(0), q(1, 4), qi(0)],
        ]);
        let e2 = mk(vec![
            vec![q(1, 3), qi(0), q(-1, 5)],
            vec![qi(0), q(1, 6), qi(0)],
            vec![q(1, 2), qi(0), qi(0)],
        ]);
        let c1 = Control::new(
            0,
            PwPoly::new(
                vec![qi(0), q(1, 2), qi(1)],
                vec![
                    Poly1::from_coeffs(vec![q(1, 20), q(1, 10)]),
                    Poly1::from_coeffs(vec![q(1, 10), q(-1, 10)]),
                ],
            ),
        );
        let c2 = Control::new(
            1,
            PwPoly::new(
                vec![qi(0), q(1, 2), qi(1)],
                vec![
                    Poly1::from_coeffs(vec![q(-1, 20), q(1, 5)]),
                    Poly1::from_coeffs(vec![q(1, 20), qi(0)]),
                ],
            ),
        );
        let letters = vec![(c1, e1), (c2, e2)];
        let t = qi(1);
        let phi = fundamental_solution_exact(&letters, &t, 1e-30).to_f64();
        // Cross-check the exact series against the adaptive solver.
        for col in 0..3 {
            let mut p = vec![0.0; 3];
            p[col] = 1.0;
            let num = solve_linear_reference(&letters, &t, &p, 1e-12).unwrap();
            for row in 0..3 {
                assert!((num.endpoint[row] - phi.0[row][col]).abs() < 1e-9);
            }
        }
        let zs = matrix_magnus(&letters, &t, 8, &MagnusMode::Plain);
        let mut last = f64::INFINITY;
        for (r, z) in zs.iter().enumerate() {
            let err = matrix_exp(&z.to_f64()).sub(&phi).norm();
            if r >= 2 {
                assert!(err < last, "no decay at R = {}", r + 1);
            }
            last = err;
        }
        assert!(last < 1e-9, "final error {last}");
    }

    #[test]
    fn matrix_magnus_interaction_mode() {
        // ẋ = (H0 + H1(t)) x with small H1: exp(Z_R) e^{tH0} matches the oracle.
        let h0 = QMat(vec![vec![qi(0), qi(1)], vec![qi(-1), qi(0)]]);
        let h1 = QMat(vec![vec![qi(0), q(1, 10)], vec![q(1, 10), qi(0)]]);
        let t = q(1, 2);
        let u = Control::new(
            0,
            PwPoly::from_poly(Poly1::from_coeffs(vec![q(1, 4), q(1, 2)]), qi(1)),
        );
        let letters = vec![(u.clone(), h1.clone())];
        let zs = matrix_magnus(
            &letters,
            &t,
            6,
            &MagnusMode::Interaction {
                h0: h0.clone(),
                ad_cap: 24,
            },
        );
        // Oracle: constant H0 letter plus the controlled H1 letter.
        let full = vec![(Control::constant(0, qi(1), qi(1)), h0.clone()), (u, h1)];
        let phi = fundamental_solution_exact(&full, &t, 1e-26).to_f64();
        let final_z = zs.last().unwrap().to_f64();
        let approx = matrix_exp(&final_z).mul(&matrix_exp(&h0.to_f64().scale(to_f64(&t))));
        assert!(
            approx.sub(&phi).norm() < 1e-8,
            "{}",
            approx.sub(&phi).norm()
        );
    }
}
