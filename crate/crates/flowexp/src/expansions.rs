//! End-to-end expansion evaluators, error reports, order fitting and the
//! divergence counter-example reproductions.
//!
//! Every evaluator produces an endpoint to compare against the adaptive
//! Runge-Kutta oracle; order claims are tested as log-log slope fits over
//! geometric scale sweeps, with points below the solver noise floor dropped.

use crate::coords::{
    cbhd_coeffs, coord_first_kind, coord_pseudo_first_kind, coord_second_kind, BernoulliTable,
    CoordTable,
};
use crate::fields::{substitute_bracket, FieldError, RatExpr, VectorField};
use crate::flows::{
    autonomous_flow, dp54, pushforward_eval, solve_linear_reference, solve_reference, OdeProblem,
    SolverError,
};
use crate::freealg::{AlgebraError, NcSeries, Word};
use crate::hall::{build_hall_basis, Bracket, HallBasis, OrderPolicy};
use crate::matrix::{matrix_exp, Mat, QMat};
use crate::rat::{factorial, qi, qpow, to_f64, Q};
use crate::signals::{primitive, Control, ControlTuple, Poly1, PwPoly};
use num_traits::{Signed, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Umbrella error for the evaluators.
#[derive(Debug)]
pub enum EvalError {
    Algebra(AlgebraError),
    Field(FieldError),
    Solver(SolverError),
    Fit(FitError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::Algebra(e) => write!(f, "algebra: {e}"),
            EvalError::Field(e) => write!(f, "field: {e}"),
            EvalError::Solver(e) => write!(f, "solver: {e}"),
            EvalError::Fit(e) => write!(f, "fit: {e}"),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<AlgebraError> for EvalError {
    fn from(e: AlgebraError) -> Self {
        EvalError::Algebra(e)
    }
}
impl From<FieldError> for EvalError {
    fn from(e: FieldError) -> Self {
        EvalError::Field(e)
    }
}
impl From<SolverError> for EvalError {
    fn from(e: SolverError) -> Self {
        EvalError::Solver(e)
    }
}
impl From<FitError> for EvalError {
    fn from(e: FitError) -> Self {
        EvalError::Fit(e)
    }
}

/// One point of an error sweep.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub scale: f64,
    pub approx: Vec<f64>,
    pub oracle: Vec<f64>,
    pub error: f64,
}

/// Error-vs-oracle record for one method over one scale sweep.
#[derive(Clone, Debug)]
pub struct ErrorReport {
    pub method: String,
    pub params: serde_json::Value,
    pub scale_name: String,
    pub points: Vec<SweepPoint>,
}

impl ErrorReport {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.scale, p.error)).collect()
    }
}

/// Errors from the slope fitter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FitError {
    /// Fewer than four points survive the noise floor.
    TooFewPoints(usize),
}

impl fmt::Display for FitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitError::TooFewPoints(n) => write!(f, "only {n} usable points for the fit"),
        }
    }
}

impl std::error::Error for FitError {}

/// Least-squares slope of `log error` against `log scale`.
#[derive(Clone, Debug)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub scale_range: (f64, f64),
    pub points_used: usize,
}

/// Fit the log-log slope, excluding points with error below `floor`
/// (typically 100 × the solver tolerance). Requires at least 4 usable points.
pub fn order_fit(pairs: &[(f64, f64)], floor: f64) -> Result<OrderFit, FitError> {
    let usable: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|(s, e)| *s > 0.0 && *e > floor)
        .collect();
    if usable.len() < 4 {
        return Err(FitError::TooFewPoints(usable.len()));
    }
    let lx: Vec<f64> = usable.iter().map(|(s, _)| s.ln()).collect();
    let ly: Vec<f64> = usable.iter().map(|(_, e)| e.ln()).collect();
    let n = lx.len() as f64;
    let sx: f64 = lx.iter().sum();
    let sy: f64 = ly.iter().sum();
    let sxx: f64 = lx.iter().map(|v| v * v).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| a * b).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let residual = (lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    let lo = usable.iter().map(|(s, _)| *s).fold(f64::INFINITY, f64::min);
    let hi = usable.iter().map(|(s, _)| *s).fold(0.0f64, f64::max);
    Ok(OrderFit {
        slope,
        intercept,
        residual,
        scale_range: (lo, hi),
        points_used: usable.len(),
    })
}

/// Word truncation policy for the Chen-Fliess evaluator.
#[derive(Clone, Debug)]
pub enum CfTruncation {
    /// All words with `|σ| ≤ M`.
    TotalLength(usize),
    /// Drift grouping: `n(σ) ≤ m` non-drift letters, `n_0(σ) ≤ n0_cap`.
    ControlDegree { m: usize, n0_cap: usize },
}

fn cf_words(alphabet: usize, trunc: &CfTruncation) -> Vec<Word> {
    let mut out = Vec::new();
    match trunc {
        CfTruncation::TotalLength(m) => {
            for len in 1..=*m {
                out.extend(crate::freealg::word_enumerate(alphabet, len));
            }
        }
        CfTruncation::ControlDegree { m, n0_cap } => {
            for len in 1..=(m + n0_cap) {
                for w in crate::freealg::word_enumerate(alphabet, len) {
                    if w.nonzero_count() <= *m && w.count(0) <= *n0_cap {
                        out.push(w);
                    }
                }
            }
        }
    }
    out
}

/// Truncated Chen-Fliess endpoint
/// `p + Σ_σ (∫_0^t a_σ) (f_σ · ∇)(Id)(p)`, with the differential operators
/// applied exactly on the field ring and the iterated integrals exact.
pub fn chen_fliess_eval(
    drift: Option<&VectorField>,
    controlled: &[(Control, VectorField)],
    p: &[Q],
    t: &Q,
    trunc: &CfTruncation,
) -> Result<Vec<Q>, EvalError> {
    let dim = p.len();
    let (tuple, generators) = assemble(drift, controlled);
    let alphabet = tuple.alphabet_size();
    let words = cf_words(alphabet, trunc);

    // Suffix-memoized operator action on the identity.
    let identity: Vec<RatExpr> = (0..dim)
        .map(|i| RatExpr::poly(crate::fields::MultiPoly::var(dim, i)))
        .collect();
    let mut op_memo: BTreeMap<Word, Vec<RatExpr>> = BTreeMap::new();
    op_memo.insert(Word::empty(), identity);
    // Prefix-memoized integrals.
    let mut int_memo: BTreeMap<Word, PwPoly> = BTreeMap::new();
    int_memo.insert(
        Word::empty(),
        PwPoly::constant(qi(1), tuple.horizon().clone()),
    );

    let mut result = p.to_vec();
    let mut sorted = words;
    sorted.sort();
    for word in &sorted {
        // Integral by extending the longest memoized prefix.
        let prefix = Word(word.0[..word.len() - 1].to_vec());
        if !int_memo.contains_key(&prefix) {
            // Build intermediate prefixes (sorted order usually avoids this).
            for l in 1..word.len() {
                let pre = Word(word.0[..l].to_vec());
                if !int_memo.contains_key(&pre) {
                    let shorter = int_memo[&Word(pre.0[..l - 1].to_vec())].clone();
                    let ch = &tuple.channel(pre.0[l - 1] as usize).signal;
                    int_memo.insert(pre, shorter.mul(ch).antiderivative());
                }
            }
        }
        let integral = {
            let shorter = &int_memo[&prefix];
            let ch = &tuple.channel(word.0[word.len() - 1] as usize).signal;
            shorter.mul(ch).antiderivative()
        };
        let value = integral.eval(t);
        int_memo.insert(word.clone(), integral);
        if value.is_zero() {
            continue;
        }
        // Operator by extending the longest memoized suffix.
        let op = op_for(word, &generators, &mut op_memo)?;
        for i in 0..dim {
            result[i] += &value * op[i].eval(p)?;
        }
    }
    Ok(result)
}

fn op_for(
    word: &Word,
    generators: &[VectorField],
    memo: &mut BTreeMap<Word, Vec<RatExpr>>,
) -> Result<Vec<RatExpr>, EvalError> {
    if let Some(v) = memo.get(word) {
        return Ok(v.clone());
    }
    let suffix = Word(word.0[1..].to_vec());
    let inner = op_for(&suffix, generators, memo)?;
    let f = &generators[word.0[0] as usize];
    // (f·∇)φ componentwise.
    let out: Vec<RatExpr> = inner
        .iter()
        .map(|phi| {
            let mut acc = RatExpr::zero(f.dim());
            for (j, fj) in f.comps().iter().enumerate() {
                acc = acc.add(&fj.mul(&phi.partial(j)));
            }
            acc
        })
        .collect();
    memo.insert(word.clone(), out.clone());
    Ok(out)
}

fn assemble(
    drift: Option<&VectorField>,
    controlled: &[(Control, VectorField)],
) -> (ControlTuple, Vec<VectorField>) {
    let controls: Vec<Control> = controlled.iter().map(|(c, _)| c.clone()).collect();
    match drift {
        Some(f0) => {
            let mut gens = vec![f0.clone()];
            gens.extend(controlled.iter().map(|(_, f)| f.clone()));
            (ControlTuple::with_drift(controls), gens)
        }
        None => {
            let gens = controlled.iter().map(|(_, f)| f.clone()).collect();
            (ControlTuple::driftless(controls), gens)
        }
    }
}

/// Substitute a coordinate table into concrete fields: `Σ value_b · f_b`.
pub fn substitute_coord_table(
    table: &CoordTable,
    generators: &[VectorField],
) -> Result<VectorField, FieldError> {
    let dim = generators[0].dim();
    let mut out = VectorField::zero(dim);
    for (b, v) in table.entries() {
        if v.is_zero() {
            continue;
        }
        let fb = substitute_bracket(b, generators)?;
        if !fb.is_zero() {
            out = out.add(&fb.scale(v))?;
        }
    }
    Ok(out)
}

/// Magnus field `Z_M = Σ_{|b| ≤ M} ζ_b f_b` for a control-affine system.
pub fn magnus_field(
    drift: Option<&VectorField>,
    controlled: &[(Control, VectorField)],
    t: &Q,
    m: usize,
) -> Result<VectorField, EvalError> {
    let (tuple, generators) = assemble(drift, controlled);
    let basis = build_hall_basis(tuple.alphabet_size(), m, OrderPolicy::LengthThenLex);
    let table = coord_first_kind(&basis, &tuple, t, m)?;
    Ok(substitute_coord_table(&table, &generators)?)
}

/// Outcome of a single expansion-vs-oracle comparison.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub approx: Vec<f64>,
    pub oracle: Vec<f64>,
    pub error: f64,
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn oracle_endpoint(
    drift: Option<&VectorField>,
    controlled: &[(Control, VectorField)],
    p: &[Q],
    t: &Q,
    tol: f64,
) -> Result<Vec<f64>, EvalError> {
    let prob = OdeProblem {
        drift: drift.cloned(),
        controlled: controlled.to_vec(),
        start: p.to_vec(),
        horizon: t.clone(),
        tol,
    };
    Ok(solve_reference(&prob)?.endpoint)
}

/// Magnus endpoint `e^{Z_M} p` against the oracle.
pub fn magnus_eval(
    drift: Option<&VectorField>,
    controlled: &[(Control, VectorField)],
    p: &[Q],
    t: &Q,
    m: usize,
    tol: f64,
) -> Result<(VectorField, EvalOutcome), EvalError> {
    let z = magnus_field(drift, controlled, t, m)?;
    let p64: Vec<f64> = p.iter().map(to_f64).collect();
    let approx = autonomous_flow(&z, &p64, 1.0, tol)?.endpoint;
    let oracle = oracle_endpoint(drift, controlled, p, t, tol)?;
    let error = sup_diff(&approx, &oracle);
    Ok((
        z,
        EvalOutcome {
            approx,
            oracle,
            error,
        },
    ))
}

/// CBHD comparison: flow composition `e^{f_n} ⋯ e^{f_1} p` (applying `f_1`
/// first) against the single exponential `e^{CBHD_M(f_1..f_n)} p`.
pub fn cbhd_eval(
    fields: &[VectorField],
    p: &[f64],
    m: usize,
    tol: f64,
) -> Result<EvalOutcome, EvalError> {
    let n = fields.len();
    let basis = build_hall_basis(n, m, OrderPolicy::LengthThenLex);
    let table = cbhd_coeffs(n, &basis, m)?;
    let z = substitute_coord_table(&table, fields)?;
    let approx = autonomous_flow(&z, p, 1.0, tol)?.endpoint;
    let mut composed = p.to_vec();
    for f in fields {
        composed = autonomous_flow(f, &composed, 1.0, tol)?.endpoint;
    }
    let error = sup_diff(&approx, &composed);
    Ok(EvalOutcome {
        approx,
        oracle: composed,
        error,
    })
}

/// Interaction-picture Magnus endpoint `e^{Z̃} e^{t f0} p` with the
/// pseudo-first-kind field `Z̃ = Σ η_b f_b` filtered by
/// `n(b) ≤ m`, `n_0(b) ≤ n0_cap`.
pub fn interaction_magnus_eval(
    f0: &VectorField,
    controlled: &[(Control, VectorField)],
    p: &[Q],
    t: &Q,
    m: usize,
    n0_cap: usize,
    tol: f64,
) -> Result<(VectorField, EvalOutcome), EvalError> {
    let (tuple, generators) = assemble(Some(f0), controlled);
    let basis = build_hall_basis(
        tuple.alphabet_size(),
        m + n0_cap,
        OrderPolicy::LengthThenLex,
    );
    let table = coord_pseudo_first_kind(&basis, &tuple, t, m, n0_cap)?;
    let z = substitute_coord_table(&table, &generators)?;
    let p64: Vec<f64> = p.iter().map(to_f64).collect();
    let mid = autonomous_flow(f0, &p64, to_f64(t), tol)?.endpoint;
    let approx = autonomous_flow(&z, &mid, 1.0, tol)?.endpoint;
    let oracle = oracle_endpoint(Some(f0), controlled, p, t, tol)?;
    let error = sup_diff(&approx, &oracle);
    Ok((
        z,
        EvalOutcome {
            approx,
            oracle,
            error,
        },
    ))
}

/// 8-point Gauss-Legendre nodes and weights on `[0, 1]`.
const GL8: [(f64, f64); 8] = [
    (0.019855071751231856, 0.050_614_268_145_188_13),
    (0.101_666_761_293_186_64, 0.111_190_517_226_687_24),
    (0.237_233_795_041_835_5, 0.156_853_322_938_943_63),
    (0.408_282_678_752_175_1, 0.181_341_891_689_181),
    (0.591_717_321_247_825, 0.181_341_891_689_181),
    (0.762_766_204_958_164_5, 0.156_853_322_938_943_63),
    (0.898_333_238_706_813_4, 0.111_190_517_226_687_24),
    (0.980_144_928_248_768_2, 0.050_614_268_145_188_13),
];

/// Numerical interaction-picture logarithm by quadrature over pushforward
/// samples; supported for `m ≤ 2`. Returns a sampled vector field.
pub struct SampledField<'a> {
    f0: &'a VectorField,
    controlled: &'a [(Control, VectorField)],
    t: f64,
    m: usize,
    tol: f64,
    fd_step: f64,
}

impl<'a> SampledField<'a> {
    pub fn new(
        f0: &'a VectorField,
        controlled: &'a [(Control, VectorField)],
        t: f64,
        m: usize,
        tol: f64,
    ) -> Self {
        assert!((1..=2).contains(&m), "quadrature route supports m = 1, 2");
        SampledField {
            f0,
            controlled,
            t,
            m,
            tol,
            fd_step: 1e-5,
        }
    }

    fn g(&self, tau: f64, y: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; y.len()];
        for (c, f) in self.controlled {
            let u = c.signal.eval_f64(tau);
            if u != 0.0 {
                let v = pushforward_eval(self.f0, f, self.t, tau, y, self.tol)?;
                for i in 0..out.len() {
                    out[i] += u * v[i];
                }
            }
        }
        Ok(out)
    }

    /// `[g(τ2), g(τ1)](y)` via central finite differences of the samples.
    fn bracket(&self, tau2: f64, tau1: f64, y: &[f64]) -> Result<Vec<f64>, EvalError> {
        let d = y.len();
        let h = self.fd_step;
        let g1 = self.g(tau1, y)?;
        let g2 = self.g(tau2, y)?;
        let mut jac1 = vec![vec![0.0; d]; d];
        let mut jac2 = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut yp = y.to_vec();
            yp[j] += h;
            let p1 = self.g(tau1, &yp)?;
            let p2 = self.g(tau2, &yp)?;
            yp[j] -= 2.0 * h;
            let m1 = self.g(tau1, &yp)?;
            let m2 = self.g(tau2, &yp)?;
            for i in 0..d {
                jac1[i][j] = (p1[i] - m1[i]) / (2.0 * h);
                jac2[i][j] = (p2[i] - m2[i]) / (2.0 * h);
            }
        }
        // [a,b] = Db·a - Da·b with a = g(τ2), b = g(τ1).
        let mut out = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                out[i] += jac1[i][j] * g2[j] - jac2[i][j] * g1[j];
            }
        }
        Ok(out)
    }

    /// `Log_m{g_t}(t)(y)` by nested Gauss-Legendre quadrature.
    pub fn eval(&self, y: &[f64]) -> Result<Vec<f64>, EvalError> {
        let d = y.len();
        let mut out = vec![0.0; d];
        // First order: ∫_0^t g(τ, y) dτ.
        for (x, w) in GL8 {
            let tau = x * self.t;
            let v = self.g(tau, y)?;
            for i in 0..d {
                out[i] += w * self.t * v[i];
            }
        }
        if self.m >= 2 {
            // (1/2) ∫_{0<τ2<τ1<t} [g(τ2), g(τ1)](y) dτ.
            for (x1, w1) in GL8 {
                let tau1 = x1 * self.t;
                for (x2, w2) in GL8 {
                    let tau2 = x2 * tau1;
                    let v = self.bracket(tau2, tau1, y)?;
                    let weight = 0.5 * w1 * self.t * w2 * tau1;
                    for i in 0..d {
                        out[i] += weight * v[i];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Fixed-step RK4 time-one flow of the sampled field.
    pub fn flow(&self, p: &[f64], steps: usize) -> Result<Vec<f64>, EvalError> {
        let d = p.len();
        let h = 1.0 / steps as f64;
        let mut y = p.to_vec();
        for _ in 0..steps {
            let k1 = self.eval(&y)?;
            let mut y2 = y.clone();
            for i in 0..d {
                y2[i] += 0.5 * h * k1[i];
            }
            let k2 = self.eval(&y2)?;
            let mut y3 = y.clone();
            for i in 0..d {
                y3[i] += 0.5 * h * k2[i];
            }
            let k3 = self.eval(&y3)?;
            let mut y4 = y.clone();
            for i in 0..d {
                y4[i] += h * k3[i];
            }
            let k4 = self.eval(&y4)?;
            for i in 0..d {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        Ok(y)
    }
}

/// Ordered-product truncation for the Sussmann evaluator.
#[derive(Clone, Debug)]
pub enum SussmannFilter {
    /// All basis elements with `|b| ≤ M`.
    MaxLength(usize),
    /// The drift subproduct: `n(b) ≤ m`, truncated at `n_0(b) ≤ n0_cap`.
    Sm { m: usize, n0_cap: usize },
}

impl SussmannFilter {
    fn keep(&self, b: &Bracket) -> bool {
        match self {
            SussmannFilter::MaxLength(m) => b.len() <= *m,
            SussmannFilter::Sm { m, n0_cap } => {
                b.nonzero_count() <= *m && b.len() - b.nonzero_count() <= *n0_cap
            }
        }
    }
}

/// Sussmann ordered product `→Π e^{ξ_b f_b} p` (largest basis element
/// applied first) against the oracle; reports the truncated-tail certificate
/// `Σ |ξ_b| ‖f_b(p)‖` over the next three `n_0` layers for `Sm` filters.
#[allow(clippy::too_many_arguments)]
pub fn sussmann_eval(
    basis: &HallBasis,
    drift: Option<&VectorField>,
    controlled: &[(Control, VectorField)],
    p: &[Q],
    t: &Q,
    filter: &SussmannFilter,
    tol: f64,
) -> Result<(EvalOutcome, f64), EvalError> {
    let (tuple, generators) = assemble(drift, controlled);
    assert_eq!(basis.alphabet_size(), tuple.alphabet_size());
    let table = coord_second_kind(basis, &tuple, t);
    let p64: Vec<f64> = p.iter().map(to_f64).collect();
    let mut y = p64.clone();
    // Largest first: descend the basis order.
    for b in basis.elements().iter().rev() {
        if !filter.keep(b) {
            continue;
        }
        let xi = table.value(b);
        if xi.is_zero() {
            continue;
        }
        let fb = substitute_bracket(b, &generators)?;
        if fb.is_zero() {
            continue;
        }
        y = autonomous_flow(&fb.scale(&xi), &y, 1.0, tol)?.endpoint;
    }
    let oracle = oracle_endpoint(drift, controlled, p, t, tol)?;
    let error = sup_diff(&y, &oracle);
    // Tail certificate over the next n0 layers (Sm only).
    let tail = if let SussmannFilter::Sm { m, n0_cap } = filter {
        let mut acc = 0.0;
        for b in basis.elements() {
            let n0 = b.len() - b.nonzero_count();
            if b.nonzero_count() <= *m && n0 > *n0_cap && n0 <= n0_cap + 3 {
                let xi = table.value(b);
                if xi.is_zero() {
                    continue;
                }
                let fb = substitute_bracket(b, &generators)?;
                acc += to_f64(&xi.abs()) * fb.sup_at_f64(&p64);
            }
        }
        acc
    } else {
        0.0
    };
    Ok((
        EvalOutcome {
            approx: y,
            oracle,
            error,
        },
        tail,
    ))
}

/// Matrix commutator substitution `A_b` of a bracket.
pub fn qmat_substitute(b: &Bracket, mats: &[QMat]) -> QMat {
    match b {
        Bracket::Leaf(i) => mats[*i as usize].clone(),
        Bracket::Node(l, r) => qmat_substitute(l, mats).commutator(&qmat_substitute(r, mats)),
    }
}

/// Sussmann product for linear systems `ẋ = Σ u_i(t) A_i x`:
/// `e^{ξ_{b_1} M_{b_1}} ⋯ e^{ξ_{b_last} M_{b_last}} p` over the ascending
/// basis prefix, with `M_b = (-1)^{|b|-1} A_b` (vector-field orientation of
/// the matrix brackets). Returns the outcome and `Σ ‖ξ_b A_b‖` over the
/// included prefix as the absolute-convergence certificate.
pub fn sussmann_matrix_eval(
    basis: &HallBasis,
    mats: &[QMat],
    tuple: &ControlTuple,
    p: &[f64],
    t: &Q,
    filter: &SussmannFilter,
    tol: f64,
) -> Result<(EvalOutcome, f64), EvalError> {
    let table = coord_second_kind(basis, tuple, t);
    let d = mats[0].dim();
    let mut product = Mat::identity(d);
    let mut cert = 0.0;
    for b in basis.elements() {
        if !filter.keep(b) {
            continue;
        }
        let xi = table.value(b);
        if xi.is_zero() {
            continue;
        }
        let a_b = qmat_substitute(b, mats);
        if a_b.is_zero() {
            continue;
        }
        cert += to_f64(&xi.abs()) * a_b.norm_f64();
        let sign = if b.len() % 2 == 0 { qi(-1) } else { qi(1) };
        let m_b = a_b.scale(&(sign * &xi));
        product = product.mul(&matrix_exp(&m_b.to_f64()));
    }
    let approx = product.apply(p);
    let letters: Vec<(Control, QMat)> = tuple
        .channels()
        .iter()
        .zip(mats)
        .map(|(c, m)| (c.clone(), m.clone()))
        .collect();
    let oracle = solve_linear_reference(&letters, t, p, tol)?.endpoint;
    let error = sup_diff(&approx, &oracle);
    Ok((
        EvalOutcome {
            approx,
            oracle,
            error,
        },
        cert,
    ))
}

/// Refined scalar-input evaluator: `e^{U(t) f1} e^{Y_M} e^{t f0} p` with the
/// auxiliary field `Y_M` built from the `(ℓ, k)`-indexed bracket sum over
/// `ad^ℓ_{f0} ad^k_{f1}(f0)`, truncated at `ℓ ≤ ell_cap`.
#[allow(clippy::too_many_arguments)]
pub fn scalar_refined_eval(
    f0: &VectorField,
    f1: &VectorField,
    u: &Control,
    p: &[Q],
    t: &Q,
    m: usize,
    ell_cap: usize,
    tol: f64,
) -> Result<EvalOutcome, EvalError> {
    let y_field = scalar_y_field(f0, f1, u, t, m, ell_cap)?;
    let p64: Vec<f64> = p.iter().map(to_f64).collect();
    let u_end = to_f64(&primitive(u).signal.eval(t));
    let mut y = autonomous_flow(f0, &p64, to_f64(t), tol)?.endpoint;
    if !y_field.is_zero() {
        y = autonomous_flow(&y_field, &y, 1.0, tol)?.endpoint;
    }
    if u_end != 0.0 {
        y = autonomous_flow(f1, &y, u_end, tol)?.endpoint;
    }
    let oracle = oracle_endpoint(Some(f0), &[(u.clone(), f1.clone())], p, t, tol)?;
    let error = sup_diff(&y, &oracle);
    Ok(EvalOutcome {
        approx: y,
        oracle,
        error,
    })
}

/// The auxiliary field `Y_M = Log_M{G_t}(t)` over the extended alphabet
/// `W_{ℓ,k} ↦ ad^ℓ_{f0} ad^k_{f1}(f0)` with controls
/// `(s-t)^ℓ U(s)^k / (ℓ! k!)`, `1 ≤ k ≤ m + 1`, `ℓ ≤ ell_cap`.
pub fn scalar_y_field(
    f0: &VectorField,
    f1: &VectorField,
    u: &Control,
    t: &Q,
    m: usize,
    ell_cap: usize,
) -> Result<VectorField, EvalError> {
    let k_cap = m + 1;
    let cap_u = primitive(u).signal;
    let horizon = u.horizon().clone();
    let mut letters: Vec<Control> = Vec::new();
    let mut letter_fields: Vec<VectorField> = Vec::new();
    for ell in 0..=ell_cap {
        // (s - t)^ell as a polynomial in s.
        let mut st = Poly1::constant(qi(1));
        let lin = Poly1::from_coeffs(vec![-t.clone(), qi(1)]);
        for _ in 0..ell {
            st = st.mul(&lin);
        }
        for k in 1..=k_cap {
            let field = f0.ad_pow(ell, &f1.ad_pow(k, f0)?)?;
            if field.is_zero() {
                continue;
            }
            let mut uk = PwPoly::constant(qi(1), horizon.clone());
            for _ in 0..k {
                uk = uk.mul(&cap_u);
            }
            let signal = uk
                .mul(&PwPoly::from_poly(st.clone(), horizon.clone()))
                .scale(&(qi(1) / (factorial(ell) * factorial(k))));
            letters.push(Control::new(letters.len(), signal));
            letter_fields.push(field);
        }
    }
    if letters.is_empty() {
        return Ok(VectorField::zero(f0.dim()));
    }
    let tuple = ControlTuple::driftless(letters);
    let basis = build_hall_basis(tuple.alphabet_size(), m, OrderPolicy::LengthThenLex);
    let table = coord_first_kind(&basis, &tuple, t, m)?;
    Ok(substitute_coord_table(&table, &letter_fields)?)
}

/// U-based Chen-Fliess form for scalar-input systems, truncated at
/// `ℓ + |k| ≤ m` with at most `n_cap` operator factors:
/// `Σ U(t)^ℓ/ℓ!/k! (∫U^k) (f1·∇)^ℓ (ad^{k_n}_{f1}(f0)·∇)⋯(ad^{k_1}_{f1}(f0)·∇)(Id)(p)`.
pub fn scalar_u_chen_fliess(
    f0: &VectorField,
    f1: &VectorField,
    u: &Control,
    p: &[Q],
    t: &Q,
    m: usize,
    n_cap: usize,
) -> Result<Vec<Q>, EvalError> {
    let dim = p.len();
    let u_end = primitive(u).signal.eval(t);
    // Precompute ad^k_{f1}(f0) for k ≤ m.
    let mut ads = Vec::with_capacity(m + 1);
    for k in 0..=m {
        ads.push(f1.ad_pow(k, f0)?);
    }
    let identity: Vec<RatExpr> = (0..dim)
        .map(|i| RatExpr::poly(crate::fields::MultiPoly::var(dim, i)))
        .collect();
    // The (ℓ = 0, n = 0) term of the series is φ(p) itself.
    let mut total = vec![Q::zero(); dim];
    // Enumerate multi-indices k of length n with |k| ≤ m - ℓ.
    for ell in 0..=m {
        let budget = m - ell;
        let mut stack: Vec<Vec<usize>> = vec![vec![]];
        while let Some(k_idx) = stack.pop() {
            // Contribution of this (ℓ, k) pair.
            let weight_u = qpow(&u_end, ell as i64) / factorial(ell);
            let k_fact: Q = k_idx
                .iter()
                .map(|&k| factorial(k))
                .fold(qi(1), |acc, x| acc * x);
            let int_u = if k_idx.is_empty() {
                qi(1)
            } else {
                crate::signals::iterated_u_integral(&k_idx, u, t)
            };
            if !(int_u.is_zero() || weight_u.is_zero()) {
                // Operator (ad^{k_n}·∇)⋯(ad^{k_1}·∇)(f1·∇)^ℓ Id: the
                // (f1·∇)^ℓ block acts innermost (it is the auxiliary-state
                // observable that the remaining expansion is applied to).
                let mut op = identity.clone();
                for _ in 0..ell {
                    op = apply_field_operator(f1, &op);
                }
                for &k in &k_idx {
                    op = apply_field_operator(&ads[k], &op);
                }
                let coeff = weight_u * int_u / k_fact;
                for i in 0..dim {
                    total[i] += &coeff * op[i].eval(p)?;
                }
            }
            // Extend the multi-index (depth capped).
            if k_idx.len() < n_cap {
                for k_next in 0..=budget.saturating_sub(k_idx.iter().sum::<usize>()) {
                    let mut next = k_idx.clone();
                    next.push(k_next);
                    stack.push(next);
                }
            }
        }
    }
    Ok(total)
}

fn apply_field_operator(f: &VectorField, phi: &[RatExpr]) -> Vec<RatExpr> {
    phi.iter()
        .map(|comp| {
            let mut acc = RatExpr::zero(f.dim());
            for (j, fj) in f.comps().iter().enumerate() {
                acc = acc.add(&fj.mul(&comp.partial(j)));
            }
            acc
        })
        .collect()
}

/// Formal identity between the interaction-picture logarithm and the CBHD
/// composition of the auxiliary logarithm with `U(t) X1`, compared exactly
/// on the `(n_1 = r, n_0 = ν)` bihomogeneous component.
pub fn formal_zm_cbh_identity(u: &Control, t: &Q, r: usize, nu: usize) -> Result<bool, EvalError> {
    assert!(
        (1..=3).contains(&r) && nu <= 4,
        "feasible range is r ≤ 3, ν ≤ 4"
    );
    let trunc = r + nu;
    let basis = build_hall_basis(2, trunc.max(1), OrderPolicy::LengthThenLex);
    let tuple = ControlTuple::with_drift(vec![u.clone()]);

    // Left side: Σ_{n(b)=r, n0(b)=ν} η_b eval(b).
    let eta = coord_pseudo_first_kind(&basis, &tuple, t, r, nu)?;
    let mut lhs = NcSeries::zero(trunc);
    for (b, v) in eta.entries() {
        if b.nonzero_count() == r && b.len() - b.nonzero_count() == nu {
            lhs = lhs.add(&b.expand_to_words(trunc).scale(v))?;
        }
    }

    // Right side: CBHD(Y, U(t) X1) from the auxiliary-alphabet route.
    let y_series = formal_y_series(u, t, r, nu)?;
    let u_end = primitive(u).signal.eval(t);
    let x1 = NcSeries::letter(1, trunc).scale(&u_end);
    let product = y_series.exp()?.mul(&x1.exp()?)?;
    let z = product.log()?;
    let mut rhs = NcSeries::zero(trunc);
    for (w, c) in z.terms() {
        if w.nonzero_count() == r && w.count(0) == nu {
            rhs.set_coeff(w.clone(), c.clone());
        }
    }
    Ok(lhs == rhs)
}

/// Formal auxiliary logarithm `Y` over `{X0, X1}` as an exact word series:
/// extended letters `W_{ℓ,k} ↦ ad^ℓ_{X0} ad^k_{X1}(X0)` with controls
/// `(s-t)^ℓ U(s)^k/(ℓ! k!)`, truncated for the `(r, ν)` projection.
fn formal_y_series(u: &Control, t: &Q, r: usize, nu: usize) -> Result<NcSeries, EvalError> {
    let trunc = r + nu;
    let cap_u = primitive(u).signal;
    let horizon = u.horizon().clone();
    let mut letters: Vec<Control> = Vec::new();
    let mut brackets: Vec<Bracket> = Vec::new();
    let x0 = Bracket::leaf(0);
    let x1 = Bracket::leaf(1);
    for ell in 0..=nu.saturating_sub(1) {
        let mut st = Poly1::constant(qi(1));
        let lin = Poly1::from_coeffs(vec![-t.clone(), qi(1)]);
        for _ in 0..ell {
            st = st.mul(&lin);
        }
        for k in 1..=r {
            // ad^ℓ_{X0} ad^k_{X1}(X0): n1 = k, n0 = ℓ + 1.
            if k + ell + 1 > trunc {
                continue;
            }
            let bracket = Bracket::ad(&x0, ell, &Bracket::ad(&x1, k, &x0));
            let mut uk = PwPoly::constant(qi(1), horizon.clone());
            for _ in 0..k {
                uk = uk.mul(&cap_u);
            }
            let signal = uk
                .mul(&PwPoly::from_poly(st.clone(), horizon.clone()))
                .scale(&(qi(1) / (factorial(ell) * factorial(k))));
            letters.push(Control::new(letters.len(), signal));
            brackets.push(bracket);
        }
    }
    if letters.is_empty() {
        return Ok(NcSeries::zero(trunc));
    }
    let w_tuple = ControlTuple::driftless(letters);
    let word_len_cap = r.min(nu.max(1));
    let series = crate::signals::word_series(&w_tuple, t, word_len_cap);
    let log = series.log()?;
    // Substitute each W-word's brackets back into the drift alphabet.
    let w_basis = build_hall_basis(
        w_tuple.alphabet_size(),
        word_len_cap,
        OrderPolicy::LengthThenLex,
    );
    let table = crate::hall::hall_decompose(&log, &w_basis)?;
    let mut out = NcSeries::zero(trunc);
    for (rank, coeff) in table {
        let w_bracket = &w_basis.elements()[rank];
        let x_bracket = substitute_w_letters(w_bracket, &brackets);
        if x_bracket.len() > trunc {
            continue;
        }
        out = out.add(&x_bracket.expand_to_words(trunc).scale(&coeff))?;
    }
    Ok(out)
}

fn substitute_w_letters(b: &Bracket, leaves: &[Bracket]) -> Bracket {
    match b {
        Bracket::Leaf(i) => leaves[*i as usize].clone(),
        Bracket::Node(l, r) => Bracket::node(
            substitute_w_letters(l, leaves),
            substitute_w_letters(r, leaves),
        ),
    }
}

/// Exact reproduction of the CBHD divergence mechanism.
#[derive(Clone, Debug)]
pub struct CbhDivergenceReport {
    /// `(M', Θ^ε_{2M'+1}(0))` exact partial sums.
    pub theta: Vec<(usize, Q)>,
    /// First index from which `|B_{2k+2} ε² / B_{2k}| > 1` stays true.
    pub k_star: usize,
    /// `(M, second component of e^{CBHD_M}(0))` closed-form flow values.
    pub flow_values: Vec<(usize, f64)>,
}

/// Exact partial sums `Θ^ε_{2M'+1}(0) = 1 - ε/2 + Σ B_{2k} ε^{2k}`, the
/// term-ratio divergence index, and the closed-form flow values.
pub fn cbh_divergence(eps: &Q, m_max: usize) -> CbhDivergenceReport {
    let bern = BernoulliTable::up_to(2 * m_max + 2);
    let mut theta = Vec::with_capacity(m_max + 1);
    let mut acc = qi(1) - eps / qi(2);
    theta.push((0, acc.clone()));
    for k in 1..=m_max {
        acc += bern.get(2 * k) * qpow(eps, 2 * k as i64);
        theta.push((k, acc.clone()));
    }
    // k*: from here on the ratio |B_{2k+2} ε² / B_{2k}| exceeds 1 for all
    // scanned k (the Bernoulli asymptotic makes the ratio increase).
    let mut k_star = m_max;
    for k in (1..m_max).rev() {
        let ratio = (bern.get(2 * k + 2) * qpow(eps, 2)).abs() / bern.get(2 * k).abs();
        if ratio > qi(1) {
            k_star = k;
        } else {
            break;
        }
    }
    // Flow values: y2(M') = -ln(1-ε) - ε/2((1-ε)^{-1} - 1)
    //                        + Σ B_{2k}/(2k) ε^{2k} ((1-ε)^{-2k} - 1).
    let e = to_f64(eps);
    let base0 = -(1.0 - e).ln() - e / 2.0 * (1.0 / (1.0 - e) - 1.0);
    let mut flow_values = Vec::with_capacity(m_max + 1);
    let mut facc = base0;
    flow_values.push((0, facc));
    for k in 1..=m_max {
        let b2k = to_f64(bern.get(2 * k));
        facc +=
            b2k / (2.0 * k as f64) * e.powi(2 * k as i32) * ((1.0 - e).powi(-2 * (k as i32)) - 1.0);
        flow_values.push((k, facc));
    }
    CbhDivergenceReport {
        theta,
        k_star,
        flow_values,
    }
}

/// Norms of the summands `ζ_{ad^k}(t,u) ad^k_{f0}(f1)` of the usual Magnus
/// series for the drift pair `(x2·e1, (1-x1)^{-1} e2)` and `u(s) = s`,
/// evaluated exactly at the probe `(0, 1/2)` off the `x2 = 0` line.
pub fn magnus_control_counterexample(t: &Q, k_max: usize) -> Vec<(usize, Q)> {
    let (f0, f1) = crate::fixtures::magnus_control_pair();
    let bern = BernoulliTable::up_to(k_max + 1);
    let probe = vec![qi(0), crate::rat::q(1, 2)];
    let mut out = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        // ζ_{ad^k}(t, u) = (-1)^{k+1} t^{k+2} B_{k+1}/(k+1)! for a0 = 1, a1 = s.
        let sign = if k % 2 == 0 { qi(-1) } else { qi(1) };
        let zeta = sign * qpow(t, (k + 2) as i64) * bern.get(k + 1) / factorial(k + 1);
        let field = f0.ad_pow(k, &f1).expect("closed class");
        let value = field.eval(&probe).expect("no pole at x1 = 0");
        let norm = value
            .iter()
            .map(|v| (v * &zeta).abs())
            .fold(Q::zero(), |m, v| if v > m { v } else { m });
        out.push((k, norm));
    }
    out
}

/// Intrinsic-representation sweep: compare the oracle state against the
/// Magnus field evaluated at the origin, with no flow.
#[derive(Clone, Debug)]
pub struct IntrinsicPoint {
    pub t: f64,
    pub error: f64,
    pub state_norm: f64,
    /// `error / (t^{M+1} + t·|x(t)|)`.
    pub ratio: f64,
}

pub fn intrinsic_repr_eval(
    drift: Option<&VectorField>,
    controlled: &[(Control, VectorField)],
    t_sweep: &[Q],
    m: usize,
    tol: f64,
) -> Result<Vec<IntrinsicPoint>, EvalError> {
    let dim = controlled[0].1.dim();
    let p = vec![Q::zero(); dim];
    let mut out = Vec::new();
    for t in t_sweep {
        let z = magnus_field(drift, controlled, t, m)?;
        let z0 = z.eval_f64(&vec![0.0; dim]);
        let oracle = oracle_endpoint(drift, controlled, &p, t, tol)?;
        let error = sup_diff(&z0, &oracle);
        let state_norm = oracle.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let tf = to_f64(t);
        let ratio = error / (tf.powi(m as i32 + 1) + tf * state_norm).max(1e-300);
        out.push(IntrinsicPoint {
            t: tf,
            error,
            state_norm,
            ratio,
        });
    }
    Ok(out)
}

/// The word-series route for the matrix Magnus logarithm (cross-check):
/// substitutes matrix products for the words of `-log` of the word series of
/// the negated controls.
pub fn matrix_magnus_word_route(
    letters: &[(Control, QMat)],
    t: &Q,
    r: usize,
) -> Result<QMat, EvalError> {
    let controls: Vec<Control> = letters
        .iter()
        .enumerate()
        .map(|(i, (c, _))| Control::new(i, c.signal.scale(&qi(-1))))
        .collect();
    let tuple = ControlTuple::driftless(controls);
    let series = crate::signals::word_series(&tuple, t, r);
    let log = series.log()?;
    let d = letters[0].1.dim();
    let mut out = QMat::zero(d);
    for (w, c) in log.terms() {
        let mut prod = QMat::identity(d);
        for &l in &w.0 {
            prod = prod.mul(&letters[l as usize].1);
        }
        out = out.add(&prod.scale(&(-c.clone())));
    }
    Ok(out)
}

/// Which expansion a standard sweep exercises.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SweepMethod {
    ChenFliess,
    Magnus,
    Cbhd,
    Interaction,
    Sussmann,
}

/// A standard order sweep against the oracle on a drift + single-input
/// system.
///
/// Time sweeps (Chen-Fliess, Magnus) reparametrize the base control through
/// `u^λ(λs) = u(s)` and run to `t = λ T`; every coordinate is then exactly
/// `λ^{|b|}`-homogeneous, so the fitted slope isolates the claimed order
/// (a control with a jump keeps the leading omitted bracket coefficient
/// nonzero — for smooth controls the first Magnus correction degenerates by
/// one extra order). CBHD scales the two fields by `λ` and compares flow
/// composition against the single exponential. Control-size sweeps
/// (interaction picture, Sussmann subproduct) scale the input amplitude at
/// the fixed horizon `t = 1/4` and report the error against `‖u‖_{L¹}`.
#[allow(clippy::too_many_arguments)]
pub fn run_standard_sweep(
    method: SweepMethod,
    f0: &VectorField,
    f1: &VectorField,
    p: &[Q],
    base_control: &Control,
    m: usize,
    n0_cap: usize,
    lambdas: &[Q],
    tol: f64,
) -> Result<ErrorReport, EvalError> {
    let mut points = Vec::new();
    let base_horizon = base_control.horizon().clone();
    for lambda in lambdas {
        let (scale, outcome) = match method {
            SweepMethod::ChenFliess => {
                let u = crate::signals::time_rescale(base_control, lambda);
                let t = &base_horizon * lambda;
                let approx = chen_fliess_eval(
                    Some(f0),
                    &[(u.clone(), f1.clone())],
                    p,
                    &t,
                    &CfTruncation::TotalLength(m),
                )?;
                let oracle = oracle_endpoint(Some(f0), &[(u, f1.clone())], p, &t, tol)?;
                let approx64: Vec<f64> = approx.iter().map(to_f64).collect();
                let error = sup_diff(&approx64, &oracle);
                (
                    to_f64(&t),
                    EvalOutcome {
                        approx: approx64,
                        oracle,
                        error,
                    },
                )
            }
            SweepMethod::Magnus => {
                let u = crate::signals::time_rescale(base_control, lambda);
                let t = &base_horizon * lambda;
                let (_, o) = magnus_eval(Some(f0), &[(u, f1.clone())], p, &t, m, tol)?;
                (to_f64(&t), o)
            }
            SweepMethod::Cbhd => {
                let p64: Vec<f64> = p.iter().map(to_f64).collect();
                let o = cbhd_eval(&[f0.scale(lambda), f1.scale(lambda)], &p64, m, tol)?;
                (to_f64(lambda), o)
            }
            SweepMethod::Interaction => {
                let t = crate::rat::q(1, 4);
                let u = Control::new(base_control.channel, base_control.signal.scale(lambda));
                let scale = u.signal.l1_norm_f64();
                let (_, o) =
                    interaction_magnus_eval(f0, &[(u, f1.clone())], p, &t, m, n0_cap, tol)?;
                (scale, o)
            }
            SweepMethod::Sussmann => {
                let t = crate::rat::q(1, 4);
                let u = Control::new(base_control.channel, base_control.signal.scale(lambda));
                let scale = u.signal.l1_norm_f64();
                let basis = build_hall_basis(2, m + n0_cap, OrderPolicy::LengthThenLex);
                let (o, _) = sussmann_eval(
                    &basis,
                    Some(f0),
                    &[(u, f1.clone())],
                    p,
                    &t,
                    &SussmannFilter::Sm { m, n0_cap },
                    tol,
                )?;
                (scale, o)
            }
        };
        points.push(SweepPoint {
            scale,
            approx: outcome.approx,
            oracle: outcome.oracle,
            error: outcome.error,
        });
    }
    Ok(ErrorReport {
        method: format!("{method:?}"),
        params: serde_json::json!({ "m": m, "n0_cap": n0_cap }),
        scale_name: match method {
            SweepMethod::Cbhd => "epsilon".to_string(),
            SweepMethod::Interaction | SweepMethod::Sussmann => "u_l1".to_string(),
            _ => "t".to_string(),
        },
        points,
    })
}

/// The base control used by the standard sweeps: a jump between two levels,
/// so no bracket coefficient degenerates under time rescaling. The jump sits
/// at 1/3: a breakpoint at 1/2 would be a root of the Bernoulli polynomial
/// B3 and kill the drift coordinate `ζ_{ad²_{X0}(X1)}` exactly.
pub fn sweep_base_control() -> Control {
    Control::new(
        1,
        PwPoly::new(
            vec![qi(0), crate::rat::q(1, 3), qi(1)],
            vec![Poly1::constant(qi(2)), Poly1::constant(qi(-1))],
        ),
    )
}

/// Exact growth data for the cross-product divergence fixture.
///
/// Along `b_0^1 = X1`, `b_0^2 = X2`, `b_{k+1}^1 = [b_k^2,[b_k^1,b_k^2]]`,
/// `b_{k+1}^2 = [b_k^1,[b_k^1,b_k^2]]` with constant controls `(1,1)`, the
/// second-kind coordinates are `ξ_b(t) = t^{|b|}/(|b| α_b)` with the exact
/// integer recursion `α_{b_{k+1}^1} = α_{b_k^1} α_{b_k^2}² 3^{2k}`,
/// `α_{b_{k+1}^2} = 2 α_{b_k^1}² α_{b_k^2} 3^{2k}`. Returns the fitted `γ`
/// with `ξ_{b_k}(t) ≥ (t/γ)^{3^k}` for `k ≤ k_max` and the norms
/// `‖e^{ξ_{b_k} A_{b_k}} - I‖` at `t = t_over_gamma · γ` (the `A_{b_k}`
/// factors are `±i F_1`, so the exponential has cosh/sinh entries).
pub fn sussmann_divergence_data(k_max: usize, t_over_gamma: f64) -> (f64, Vec<f64>) {
    let mut alpha1 = qi(1);
    let mut alpha2 = qi(1);
    let mut gamma: f64 = 0.0;
    let mut lengths = vec![1usize];
    let mut alphas = vec![qi(1)];
    for k in 0..k_max {
        let three2k = qpow(&qi(3), 2 * k as i64);
        let next1 = &alpha1 * &alpha2 * &alpha2 * &three2k;
        let next2 = qi(2) * &alpha1 * &alpha1 * &alpha2 * &three2k;
        alpha1 = next1;
        alpha2 = next2;
        lengths.push(3usize.pow(k as u32 + 1));
        alphas.push(alpha1.clone());
    }
    for (len, alpha) in lengths.iter().zip(&alphas) {
        // γ ≥ (|b| α_b)^{1/|b|} makes ξ_b(t) ≥ (t/γ)^{|b|}.
        let ln = ln_q(&(qi(*len as i64) * alpha));
        gamma = gamma.max((ln / *len as f64).exp());
    }
    let mut norms = Vec::with_capacity(k_max + 1);
    for (len, alpha) in lengths.iter().zip(&alphas) {
        // ln ξ = |b| ln t − ln(|b| α_b) at t = t_over_gamma · γ.
        let ln_xi =
            *len as f64 * (t_over_gamma.ln() + gamma.ln()) - ln_q(&(qi(*len as i64) * alpha));
        // ‖e^{ξ (±i F1)} − I‖_∞ = (cosh ξ − 1) + |sinh ξ|.
        let norm = if ln_xi > 700f64.ln() {
            f64::INFINITY
        } else {
            let xi = ln_xi.exp();
            if xi > 700.0 {
                f64::INFINITY
            } else {
                (xi.cosh() - 1.0) + xi.sinh().abs()
            }
        };
        norms.push(norm);
    }
    (gamma, norms)
}

fn ln_q(x: &Q) -> f64 {
    // Logarithm of a large positive rational through its digit counts.
    let num = x.numer().to_string();
    let den = x.denom().to_string();
    let lead = |s: &str| -> f64 {
        let take: String = s.chars().take(15).collect();
        let v: f64 = take.parse().unwrap_or(1.0);
        v.ln() + (s.len() - take.len()) as f64 * std::f64::consts::LN_10
    };
    lead(&num) - lead(&den)
}

/// Convenience: oracle endpoint of the two-input failure system with true
/// trigonometric inputs `u_n = n cos(n²t)`, `v_n = n sin(n²t)`.
pub fn multi_input_failure_oracle(n: u32, t_end: f64, tol: f64) -> Result<Vec<f64>, EvalError> {
    let nf = n as f64;
    let rhs = move |t: f64, y: &[f64]| -> Vec<f64> {
        let u = nf * (nf * nf * t).cos();
        let v = nf * (nf * nf * t).sin();
        vec![u, v * y[0]]
    };
    Ok(dp54(&rhs, &[0.0, 0.0], 0.0, t_end, tol, &[])?.endpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{normal_form_3d, triangular_nilpotent_trio};
    use crate::rat::q;
    use crate::rng::SplitMix64;

    #[test]
    fn order_fit_synthetic() {
        // error = c s²: slope 2 to high accuracy.
        let pairs: Vec<(f64, f64)> = (3..=8)
            .map(|e| {
                let s = 0.5f64.powi(e);
                (s, 3.0 * s * s)
            })
            .collect();
        let fit = order_fit(&pairs, 1e-300).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-6, "slope {}", fit.slope);
        // Cubic with noise.
        let pairs3: Vec<(f64, f64)> = (3..=8)
            .map(|e| {
                let s = 0.5f64.powi(e);
                (s, s * s * s + 1e-12)
            })
            .collect();
        let fit3 = order_fit(&pairs3, 1e-10).unwrap();
        assert!((fit3.slope - 3.0).abs() < 0.2, "slope {}", fit3.slope);
        // All points under the floor: error.
        let low: Vec<(f64, f64)> = (3..=8).map(|e| (0.5f64.powi(e), 1e-15)).collect();
        assert!(matches!(
            order_fit(&low, 1e-10),
            Err(FitError::TooFewPoints(0))
        ));
    }

    #[test]
    fn chen_fliess_m0_returns_p() {
        let (f0, f1) = normal_form_3d();
        let u = Control::constant(1, qi(1), qi(1));
        let p = vec![q(1, 4), q(-1, 8), q(1, 16)];
        let out = chen_fliess_eval(
            Some(&f0),
            &[(u, f1)],
            &p,
            &q(1, 2),
            &CfTruncation::TotalLength(0),
        )
        .unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn chen_fliess_linear_matches_truncated_exponential() {
        // Constant control on a linear field: partial sums of e^{tA} p.
        let a = vec![vec![q(1, 5), q(-1, 10)], vec![q(3, 10), q(1, 20)]];
        let field = VectorField::linear(&a);
        let u = Control::constant(1, qi(1), qi(1));
        let p = vec![qi(1), q(-1, 2)];
        let t = q(1, 2);
        for m in 1..=5 {
            let out = chen_fliess_eval(
                None,
                &[(u.clone(), field.clone())],
                &p,
                &t,
                &CfTruncation::TotalLength(m),
            )
            .unwrap();
            // Σ_{k≤m} t^k A^k p / k! exactly.
            let qa = QMat(a.clone());
            let mut expect = p.clone();
            let mut power = p.clone();
            for k in 1..=m {
                power = qa.apply(&power);
                let c = qpow(&t, k as i64) / factorial(k);
                for i in 0..2 {
                    expect[i] += &c * &power[i];
                }
            }
            assert_eq!(out, expect, "m = {m}");
        }
    }

    #[test]
    fn magnus_single_field_constant_control_is_exact() {
        // One field, constant control: Z_1 = t f exactly, flow matches oracle.
        let (f0, _) = normal_form_3d();
        let u = Control::constant(1, qi(1), qi(1));
        let t = q(1, 2);
        let z = magnus_field(None, &[(u.clone(), f0.clone())], &t, 1).unwrap();
        assert_eq!(z, f0.scale(&t));
        let p = vec![q(1, 8), qi(0), q(-1, 8)];
        let (_, outcome) = magnus_eval(None, &[(u, f0)], &p, &t, 1, 1e-12).unwrap();
        assert!(outcome.error < 1e-10, "error {}", outcome.error);
    }

    #[test]
    fn magnus_nilpotent_is_exact() {
        let (_, fields) = triangular_nilpotent_trio();
        let u1 = Control::constant(1, qi(1), qi(1));
        let u2 = Control::new(
            2,
            PwPoly::from_poly(Poly1::from_coeffs(vec![q(1, 2), qi(-1)]), qi(1)),
        );
        let tol = 1e-12;
        let (_, outcome) = magnus_eval(
            Some(&fields[0]),
            &[(u1, fields[1].clone()), (u2, fields[2].clone())],
            &[q(1, 4), q(-1, 4), q(1, 8)],
            &qi(1),
            2,
            tol,
        )
        .unwrap();
        assert!(outcome.error < 100.0 * tol, "error {}", outcome.error);
    }

    #[test]
    fn cbhd_commuting_fields_exact() {
        // Commuting constant fields: exact from M = 1 on.
        let f1 = VectorField::unit(2, 0).scale(&q(1, 3));
        let f2 = VectorField::unit(2, 1).scale(&q(-1, 5));
        let outcome = cbhd_eval(&[f1, f2], &[0.1, 0.2], 1, 1e-12).unwrap();
        assert!(outcome.error < 1e-11);
    }

    #[test]
    fn cbhd_matches_matrix_log_of_product() {
        // Two small matrices: CBHD field at the origin against log(e^A e^B).
        let a = QMat(vec![vec![q(1, 20), q(-1, 25)], vec![q(1, 30), qi(0)]]);
        let b = QMat(vec![vec![qi(0), q(1, 15)], vec![q(-1, 20), q(1, 40)]]);
        let fa = VectorField::linear(&a.0);
        let fb = VectorField::linear(&b.0);
        // Flow composition e^{fb} e^{fa} p = e^{B} e^{A} p for linear fields.
        let basis = build_hall_basis(2, 6, OrderPolicy::LengthThenLex);
        let table = cbhd_coeffs(2, &basis, 6).unwrap();
        let z = substitute_coord_table(&table, &[fa, fb]).unwrap();
        // z is linear: extract its matrix via the Jacobian at 0.
        let jac = z.jacobian();
        let d = 2;
        let mut zmat = Mat::zero(d);
        for i in 0..d {
            for j in 0..d {
                zmat.0[i][j] = jac[i][j].eval_f64(&[0.0, 0.0]);
            }
        }
        let product = matrix_exp(&b.to_f64()).mul(&matrix_exp(&a.to_f64()));
        let logp = crate::matrix::matrix_log(&product).unwrap();
        assert!(matrix_exp(&zmat).sub(&product).norm() < 1e-10);
        assert!(zmat.sub(&logp).norm() < 1e-10);
    }

    #[test]
    fn interaction_zero_input_reduces_to_drift_flow() {
        let (f0, f1) = normal_form_3d();
        let u = Control::constant(1, qi(0), qi(1));
        let p = vec![q(1, 8), q(1, 16), qi(0)];
        let t = q(1, 2);
        let (z, outcome) = interaction_magnus_eval(&f0, &[(u, f1)], &p, &t, 2, 4, 1e-12).unwrap();
        assert!(z.is_zero());
        assert!(outcome.error < 1e-10);
    }

    #[test]
    fn interaction_quadrature_route_agrees() {
        // Routes (i) and (ii) endpoints agree on the polynomial fixture.
        let (f0, f1) = normal_form_3d();
        let u = Control::new(
            1,
            PwPoly::from_poly(Poly1::from_coeffs(vec![q(1, 4), q(-1, 8)]), qi(1)),
        );
        let p = vec![q(1, 8), q(-1, 16), q(1, 32)];
        let t = q(1, 4);
        let tol = 1e-12;
        let (_, eta_route) =
            interaction_magnus_eval(&f0, &[(u.clone(), f1.clone())], &p, &t, 2, 8, tol).unwrap();
        let controlled = [(u, f1)];
        let sampled = SampledField::new(&f0, &controlled, to_f64(&t), 2, tol);
        let p64: Vec<f64> = p.iter().map(to_f64).collect();
        let mid = autonomous_flow(&f0, &p64, to_f64(&t), tol)
            .unwrap()
            .endpoint;
        let quad_route = sampled.flow(&mid, 16).unwrap();
        let diff = sup_diff(&eta_route.approx, &quad_route);
        assert!(diff < 1e-6, "route disagreement {diff}");
    }

    #[test]
    fn sussmann_single_letter_is_exact() {
        let field = VectorField::unit(2, 0);
        let basis = build_hall_basis(1, 3, OrderPolicy::LengthThenLex);
        let u = Control::new(
            0,
            PwPoly::from_poly(Poly1::from_coeffs(vec![q(1, 2), qi(1)]), qi(1)),
        );
        let tol = 1e-12;
        let (outcome, _) = sussmann_eval(
            &basis,
            None,
            &[(u, field)],
            &[qi(0), qi(0)],
            &qi(1),
            &SussmannFilter::MaxLength(1),
            tol,
        )
        .unwrap();
        assert!(outcome.error < 10.0 * tol);
    }

    #[test]
    fn sussmann_nilpotent_matches_oracle() {
        let (_, fields) = triangular_nilpotent_trio();
        let basis = build_hall_basis(3, 2, OrderPolicy::LengthThenLex);
        let u1 = Control::constant(1, qi(1), qi(1));
        let u2 = Control::new(
            2,
            PwPoly::from_poly(Poly1::from_coeffs(vec![q(1, 2), qi(-1)]), qi(1)),
        );
        let tol = 1e-12;
        let (outcome, _) = sussmann_eval(
            &basis,
            Some(&fields[0]),
            &[(u1, fields[1].clone()), (u2, fields[2].clone())],
            &[q(1, 4), q(-1, 4), q(1, 8)],
            &qi(1),
            &SussmannFilter::MaxLength(2),
            tol,
        )
        .unwrap();
        assert!(outcome.error < 100.0 * tol, "error {}", outcome.error);
    }

    #[test]
    fn sussmann_matrix_commuting_is_exact() {
        // Commuting diagonal matrices: prefix ≥ 2 is exact.
        let a1 = QMat(vec![vec![q(1, 10), qi(0)], vec![qi(0), q(1, 5)]]);
        let a2 = QMat(vec![vec![q(-1, 10), qi(0)], vec![qi(0), q(1, 10)]]);
        let basis = build_hall_basis(2, 3, OrderPolicy::LengthThenLex);
        let u = ControlTuple::driftless(vec![
            Control::constant(0, qi(1), qi(1)),
            Control::new(
                1,
                PwPoly::from_poly(Poly1::from_coeffs(vec![q(1, 2), q(1, 4)]), qi(1)),
            ),
        ]);
        let (outcome, _) = sussmann_matrix_eval(
            &basis,
            &[a1, a2],
            &u,
            &[1.0, -0.5],
            &qi(1),
            &SussmannFilter::MaxLength(3),
            1e-12,
        )
        .unwrap();
        assert!(outcome.error < 1e-10, "error {}", outcome.error);
    }

    #[test]
    fn sussmann_matrix_small_norm_accuracy() {
        let mut rng = SplitMix64::new(5);
        let mk = |rng: &mut SplitMix64| {
            QMat(
                (0..3)
                    .map(|_| (0..3).map(|_| rng.rational_or_zero(2, 10)).collect())
                    .collect(),
            )
        };
        let a1 = mk(&mut rng);
        let a2 = mk(&mut rng);
        let basis = build_hall_basis(2, 8, OrderPolicy::LengthThenLex);
        let u = ControlTuple::driftless(vec![
            Control::constant(0, q(1, 4), qi(1)),
            Control::constant(1, q(1, 5), qi(1)),
        ]);
        let (outcome, cert) = sussmann_matrix_eval(
            &basis,
            &[a1, a2],
            &u,
            &[1.0, 0.0, -1.0],
            &qi(1),
            &SussmannFilter::MaxLength(8),
            1e-12,
        )
        .unwrap();
        assert!(outcome.error < 1e-6, "error {}", outcome.error);
        assert!(cert.is_finite());
    }

    #[test]
    fn scalar_refined_zero_input() {
        let (f0, f1) = normal_form_3d();
        let u = Control::constant(1, qi(0), qi(1));
        let p = vec![q(1, 8), qi(0), qi(0)];
        let outcome = scalar_refined_eval(&f0, &f1, &u, &p, &q(1, 2), 2, 6, 1e-12).unwrap();
        assert!(outcome.error < 1e-10);
    }

    #[test]
    fn scalar_u_chen_fliess_low_order_consistency() {
        // Against the plain Chen-Fliess evaluation at matching accuracy.
        let (f0, f1) = normal_form_3d();
        let u = Control::new(
            1,
            PwPoly::from_poly(Poly1::from_coeffs(vec![q(1, 4), q(1, 8)]), qi(1)),
        );
        let p = vec![q(1, 8), q(-1, 16), qi(0)];
        let t = q(1, 4);
        let refined = scalar_u_chen_fliess(&f0, &f1, &u, &p, &t, 3, 10).unwrap();
        let plain = chen_fliess_eval(
            Some(&f0),
            &[(u.clone(), f1.clone())],
            &p,
            &t,
            &CfTruncation::ControlDegree { m: 3, n0_cap: 12 },
        )
        .unwrap();
        let oracle = oracle_endpoint(Some(&f0), &[(u, f1)], &p, &t, 1e-13).unwrap();
        let err_r = sup_diff(&refined.iter().map(to_f64).collect::<Vec<_>>(), &oracle);
        let err_p = sup_diff(&plain.iter().map(to_f64).collect::<Vec<_>>(), &oracle);
        // Both are order-4 accurate at t = 1/4 with unit-size controls.
        assert!(err_r < 1e-3, "refined error {err_r}");
        assert!(err_p < 1e-3, "plain error {err_p}");
    }

    #[test]
    fn formal_identity_low_orders() {
        // (r, ν) = (1, 0): both sides are U(t) X1.
        let u = Control::new(
            1,
            PwPoly::from_poly(Poly1::from_coeffs(vec![qi(0), qi(1)]), qi(1)),
        );
        assert!(formal_zm_cbh_identity(&u, &qi(1), 1, 0).unwrap());
        // (1, 1) for u(t) = t.
        assert!(formal_zm_cbh_identity(&u, &qi(1), 1, 1).unwrap());
        // (2, 2) for a random piecewise-linear control.
        let mut rng = SplitMix64::new(11);
        let pw = PwPoly::new(
            vec![qi(0), q(1, 2), qi(1)],
            vec![
                Poly1::from_coeffs(vec![rng.rational(3, 2), rng.rational(3, 2)]),
                Poly1::from_coeffs(vec![rng.rational(3, 2), rng.rational(3, 2)]),
            ],
        );
        let u2 = Control::new(1, pw);
        assert!(formal_zm_cbh_identity(&u2, &qi(1), 2, 2).unwrap());
    }

    #[test]
    fn cbh_divergence_exact_values() {
        // ε = 1/10: the Bernoulli terms only overtake the partial sums
        // around k ≈ 10πe ≈ 85, so the blow-up is read off at depth 110.
        let eps = q(1, 10);
        let report = cbh_divergence(&eps, 110);
        assert_eq!(report.theta[0].1, qi(1) - &eps / qi(2));
        let deep = report.theta[110].1.abs();
        let t10 = report.theta[10].1.abs();
        assert!(
            deep > qi(1_000_000) * &t10,
            "ratio = {}",
            to_f64(&(deep / &t10))
        );
        // Exact term-ratio divergence index.
        assert!(report.k_star < 60, "k* = {}", report.k_star);
        let f10 = report.flow_values[10].1.abs();
        let f110 = report.flow_values[110].1.abs();
        assert!(f110 > 1e6 * f10);

        // ε = 1/4 reaches the same factor already at depth 60.
        let report4 = cbh_divergence(&q(1, 4), 60);
        let t60 = report4.theta[60].1.abs();
        let t10b = report4.theta[10].1.abs();
        assert!(t60 > qi(1_000_000) * t10b);
    }

    #[test]
    fn magnus_counterexample_summands() {
        let t = qi(1);
        let series = magnus_control_counterexample(&t, 41);
        // k = 0 summand is (t²/2)(1-x1)^{-1} e2 ↦ norm 1/2 at the probe.
        assert_eq!(series[0].1, q(1, 2));
        // Even k ≥ 2 vanish (odd Bernoulli numbers).
        for k in (2..=40).step_by(2) {
            assert!(series[k].1.is_zero());
        }
        // Odd-k summands eventually outgrow any bound.
        let v9 = &series[9].1;
        let v39 = &series[39].1;
        assert!(v39 > &(v9 * qi(1_000_000)));
        // The x2^k factors kill the brackets on the x2 = 0 line from k ≥ 2
        // on; at k = 1 only the e2 component carries the factor (the exact
        // bracket keeps an e1 part there, which the norm growth does not
        // depend on).
        let (f0, f1) = crate::fixtures::magnus_control_pair();
        for k in 2..=5 {
            let field = f0.ad_pow(k, &f1).unwrap();
            let v = field.eval(&[q(1, 3), qi(0)]).unwrap();
            assert!(v.iter().all(|x| x.is_zero()), "k = {k}");
        }
        let ad1 = f0.ad_pow(1, &f1).unwrap();
        let v1 = ad1.eval(&[q(1, 3), qi(0)]).unwrap();
        assert!(v1[1].is_zero());
    }

    #[test]
    fn matrix_magnus_routes_agree() {
        // ζ-route (L_j products) equals the word-series route, exactly.
        let e1 = QMat(vec![vec![qi(0), qi(1)], vec![q(-1, 2), qi(0)]]);
        let e2 = QMat(vec![vec![q(1, 3), qi(0)], vec![qi(0), q(-1, 4)]]);
        let c1 = Control::new(
            0,
            PwPoly::from_poly(Poly1::from_coeffs(vec![q(1, 10), q(1, 8)]), qi(1)),
        );
        let c2 = Control::constant(1, q(1, 9), qi(1));
        let letters = vec![(c1, e1), (c2, e2)];
        let t = q(3, 4);
        for r in 1..=4usize {
            let lroute =
                crate::flows::matrix_magnus(&letters, &t, r, &crate::flows::MagnusMode::Plain);
            let wroute = matrix_magnus_word_route(&letters, &t, r).unwrap();
            assert_eq!(lroute[r - 1], wroute, "routes differ at R = {r}");
        }
    }

    #[test]
    fn magnus_zeta_route_equals_matrix_route_on_linear_systems() {
        // Σ ζ_b M_b with M_b the vector-field matrices equals the L_j route.
        let e1 = QMat(vec![vec![qi(0), qi(1)], vec![q(-1, 2), qi(0)]]);
        let e2 = QMat(vec![vec![q(1, 3), qi(0)], vec![qi(0), q(-1, 4)]]);
        let c1 = Control::constant(0, q(1, 6), qi(1));
        let c2 = Control::new(
            1,
            PwPoly::from_poly(Poly1::from_coeffs(vec![qi(0), q(1, 5)]), qi(1)),
        );
        let t = q(1, 2);
        let r = 4;
        let letters = vec![(c1.clone(), e1.clone()), (c2.clone(), e2.clone())];
        let lroute = crate::flows::matrix_magnus(&letters, &t, r, &crate::flows::MagnusMode::Plain);
        // ζ route.
        let basis = build_hall_basis(2, r, OrderPolicy::LengthThenLex);
        let tuple = ControlTuple::driftless(vec![c1, c2]);
        let table = coord_first_kind(&basis, &tuple, &t, r).unwrap();
        let mats = [e1, e2];
        let mut z = QMat::zero(2);
        for (b, v) in table.entries() {
            let a_b = qmat_substitute(b, &mats);
            let sign = if b.len() % 2 == 0 { qi(-1) } else { qi(1) };
            z = z.add(&a_b.scale(&(sign * v)));
        }
        assert_eq!(z, lroute[r - 1]);
    }

    #[test]
    fn intrinsic_representation_cases() {
        let (f0, f1) = normal_form_3d();
        // Zero input from the drift equilibrium: both sides vanish.
        let zero_u = Control::constant(1, qi(0), qi(1));
        let pts = intrinsic_repr_eval(
            Some(&f0),
            &[(zero_u, f1.clone())],
            &[q(1, 4), q(1, 8)],
            2,
            1e-12,
        )
        .unwrap();
        for p in &pts {
            assert!(p.error < 1e-10 && p.state_norm < 1e-10);
        }
        // Bounded control: the normalized ratio stays bounded over the sweep
        // at M = 2 (frozen window from the exact evaluation).
        let u = sweep_base_control();
        let sweep: Vec<Q> = (2..=7).map(|e| qpow(&q(1, 2), e)).collect();
        let mut controlled = Vec::new();
        let mut times = Vec::new();
        for lambda in &sweep {
            controlled.push(crate::signals::time_rescale(&u, lambda));
            times.push(lambda.clone());
        }
        let mut ratios = Vec::new();
        let mut pairs = Vec::new();
        for (ut, t) in controlled.iter().zip(&times) {
            let pts = intrinsic_repr_eval(
                Some(&f0),
                &[(ut.clone(), f1.clone())],
                std::slice::from_ref(t),
                2,
                1e-12,
            )
            .unwrap();
            ratios.push(pts[0].ratio);
            pairs.push((pts[0].t, pts[0].error));
        }
        assert!(
            ratios.iter().all(|r| *r < 2.0),
            "unbounded intrinsic ratio: {ratios:?}"
        );
        // At M = 1 the error slope sits at 2 ≥ M + 0.7 (the t·|x| term
        // dominates the bound, so anything at or above M + 0.7 qualifies).
        let mut pairs1 = Vec::new();
        for (ut, t) in controlled.iter().zip(&times) {
            let pts = intrinsic_repr_eval(
                Some(&f0),
                &[(ut.clone(), f1.clone())],
                std::slice::from_ref(t),
                1,
                1e-12,
            )
            .unwrap();
            pairs1.push((pts[0].t, pts[0].error));
        }
        let fit = order_fit(&pairs1, 1e-10).unwrap();
        assert!(fit.slope >= 1.7, "intrinsic slope {}", fit.slope);
    }

    #[test]
    fn scalar_refined_oscillatory_amplitude_slope() {
        // Oscillatory square wave with the amplitude swept: the refined
        // estimate is driven by the primitive U, so the error falls at least
        // like ‖U‖_∞^{M+1} although ‖u‖_{L¹} stays of order one (here the
        // fixture is structurally better than the bound: the measured slope
        // is 3 at M = 1 because the leading commutator correction cancels).
        let (f0, f1) = normal_form_3d();
        let p = vec![q(1, 8), q(-1, 16), q(1, 32)];
        let t = q(3, 8);
        let m = 1;
        let tol = 1e-12;
        let mut pairs = Vec::new();
        for e in 0..=4 {
            let eps = qpow(&q(1, 2), e);
            let u = crate::fixtures::square_wave(1, qi(4) * &eps, 2, qi(1));
            assert!(
                u.signal.l1_norm_f64() >= 0.2,
                "the L¹ size must stay order one for the contrast to matter"
            );
            let outcome = scalar_refined_eval(&f0, &f1, &u, &p, &t, m, 8, tol).unwrap();
            pairs.push((to_f64(&eps), outcome.error));
        }
        let fit = order_fit(&pairs, 100.0 * tol).unwrap();
        assert!(
            fit.slope >= m as f64 + 0.7,
            "refined amplitude slope {}",
            fit.slope
        );
    }

    #[test]
    fn sussmann_divergence_alpha_matches_generic_engine() {
        // Exact ξ values from the α recursion agree with coord_second_kind
        // over a Hall basis whose order puts b_1^1 = [X2,[X1,X2]] before
        // b_1^2 = [X1,[X1,X2]] (letters 0, 1 here).
        use std::rc::Rc;
        let policy = OrderPolicy::Custom(Rc::new(|a: &Bracket, b: &Bracket| {
            let key = |x: &Bracket| match x.to_nested().as_str() {
                "[1,[0,1]]" => 0usize,
                "[0,[0,1]]" => 1usize,
                _ => 2usize,
            };
            key(a)
                .cmp(&key(b))
                .then_with(|| crate::hall::hall_order(a, b))
        }));
        let basis = build_hall_basis(2, 9, policy);
        let tuple = ControlTuple::driftless(vec![
            Control::constant(0, qi(1), qi(1)),
            Control::constant(1, qi(1), qi(1)),
        ]);
        let t = qi(1);
        let table = coord_second_kind(&basis, &tuple, &t);
        let x1 = Bracket::leaf(0);
        let x2 = Bracket::leaf(1);
        let b11 = Bracket::node(x2.clone(), Bracket::node(x1.clone(), x2.clone()));
        let b12 = Bracket::ad(&x1, 2, &x2);
        let b21 = Bracket::node(b12.clone(), Bracket::node(b11.clone(), b12.clone()));
        assert!(basis.contains(&b11));
        assert!(basis.contains(&b21), "chain element missing from basis");
        // α values: α_{b_1^1} = 3, α_{b_1^2} = 6? from the recursion at k=0:
        // α_{b_1^1} = 1·1·1·3^0·|b_0^2|·... the closed form: ξ_b(1) = 1/(|b| α_b).
        // k = 1: α_1 = 1, so ξ_{b_1^1}(1) = 1/(3·1).
        assert_eq!(table.value(&b11), q(1, 3));
        // k = 2: α recursion gives α_{b_2^1} = α1 α2² 3² with α1 = 1, α2 = 2.
        assert_eq!(table.value(&b21), qi(1) / (qi(9) * qi(36)));
        // The fitted γ bounds hold for the generic-engine values too.
        let (gamma, norms) = sussmann_divergence_data(4, 2.0);
        assert!(gamma > 1.0 && gamma < 4.0, "gamma = {gamma}");
        let xi_b11 = to_f64(&table.value(&b11));
        assert!(xi_b11 >= (1.0 / gamma).powi(3) - 1e-12);
        // At t = 2γ some finite-k factor is far from the identity.
        assert!(norms.iter().any(|n| *n > 1.0));
    }

    #[test]
    fn multi_input_failure_drives_x2() {
        // x2(T) approaches T/2 although the primitives shrink like 1/n.
        let t_end = 1.0;
        let x = multi_input_failure_oracle(8, t_end, 1e-10).unwrap();
        let closed = t_end / 2.0 - (2.0 * 64.0 * t_end).sin() / (4.0 * 64.0);
        assert!((x[1] - closed).abs() < 1e-7, "{} vs {closed}", x[1]);
    }
}
