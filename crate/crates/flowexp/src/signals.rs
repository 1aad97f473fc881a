//! Piecewise-polynomial control signals with exact iterated integrals.
//!
//! Controls are univariate polynomials with rational coefficients between
//! rational breakpoints, so every iterated integral of a word evaluates to an
//! exact rational at rational times. The word-integral engine is a dynamic
//! program over word prefixes: it maintains each prefix integral as a
//! piecewise polynomial `I_σ` and extends it by one letter at a time through
//! `I_{σℓ}' = I_σ · a_ℓ`.

#[cfg(test)]
use crate::freealg::word_enumerate;
use crate::freealg::{NcSeries, Word};
use crate::rat::{parse_q, qi, qpow, to_f64, Q};
use num_traits::{Signed, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Dense univariate polynomial with rational coefficients.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Poly1(pub Vec<Q>);

impl Poly1 {
    pub fn zero() -> Self {
        Poly1(Vec::new())
    }

    pub fn constant(c: Q) -> Self {
        if c.is_zero() {
            Poly1::zero()
        } else {
            Poly1(vec![c])
        }
    }

    pub fn from_coeffs(coeffs: Vec<Q>) -> Self {
        let mut p = Poly1(coeffs);
        p.normalize();
        p
    }

    fn normalize(&mut self) {
        while self.0.last().map(|c| c.is_zero()).unwrap_or(false) {
            self.0.pop();
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn eval(&self, t: &Q) -> Q {
        let mut acc = Q::zero();
        for c in self.0.iter().rev() {
            acc = acc * t + c;
        }
        acc
    }

    pub fn add(&self, other: &Poly1) -> Poly1 {
        let n = self.0.len().max(other.0.len());
        let mut out = vec![Q::zero(); n];
        for (i, c) in self.0.iter().enumerate() {
            out[i] += c;
        }
        for (i, c) in other.0.iter().enumerate() {
            out[i] += c;
        }
        Poly1::from_coeffs(out)
    }

    pub fn mul(&self, other: &Poly1) -> Poly1 {
        if self.is_zero() || other.is_zero() {
            return Poly1::zero();
        }
        let mut out = vec![Q::zero(); self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly1::from_coeffs(out)
    }

    pub fn scale(&self, c: &Q) -> Poly1 {
        Poly1::from_coeffs(self.0.iter().map(|x| x * c).collect())
    }

    pub fn derivative(&self) -> Poly1 {
        if self.0.len() <= 1 {
            return Poly1::zero();
        }
        Poly1::from_coeffs(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * qi(i as i64))
                .collect(),
        )
    }

    /// Antiderivative with zero constant term.
    pub fn antiderivative(&self) -> Poly1 {
        let mut out = vec![Q::zero(); self.0.len() + 1];
        for (i, c) in self.0.iter().enumerate() {
            out[i + 1] = c / qi((i + 1) as i64);
        }
        Poly1::from_coeffs(out)
    }

    /// Substitute `t ← a·t + b`.
    pub fn compose_affine(&self, a: &Q, b: &Q) -> Poly1 {
        let mut acc = Poly1::zero();
        let lin = Poly1::from_coeffs(vec![b.clone(), a.clone()]);
        for c in self.0.iter().rev() {
            acc = acc.mul(&lin).add(&Poly1::constant(c.clone()));
        }
        acc
    }

    /// All coefficients share one sign (so `|p|` integrates exactly on `t ≥ 0`).
    pub fn sign_definite_coeffs(&self) -> bool {
        let pos = self.0.iter().any(|c| c.is_positive());
        let neg = self.0.iter().any(|c| c.is_negative());
        !(pos && neg)
    }

    /// Coefficient-wise absolute value (a majorant of `|p|` on `t ≥ 0`).
    pub fn abs_coeffs(&self) -> Poly1 {
        Poly1::from_coeffs(self.0.iter().map(|c| c.abs()).collect())
    }
}

impl fmt::Display for Poly1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| match i {
                0 => format!("{c}"),
                1 => format!("{c}*t"),
                _ => format!("{c}*t^{i}"),
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// Piecewise polynomial on a strictly increasing rational breakpoint grid
/// starting at zero.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PwPoly {
    /// `pieces.len() + 1` breakpoints, `breakpoints[0] = 0`.
    breakpoints: Vec<Q>,
    pieces: Vec<Poly1>,
}

impl PwPoly {
    pub fn new(breakpoints: Vec<Q>, pieces: Vec<Poly1>) -> Self {
        assert!(breakpoints.len() == pieces.len() + 1, "grid/piece mismatch");
        assert!(breakpoints[0].is_zero(), "grid must start at 0");
        for w in breakpoints.windows(2) {
            assert!(w[0] < w[1], "breakpoints must strictly increase");
        }
        PwPoly {
            breakpoints,
            pieces,
        }
    }

    pub fn constant(c: Q, horizon: Q) -> Self {
        PwPoly::new(vec![Q::zero(), horizon], vec![Poly1::constant(c)])
    }

    pub fn from_poly(p: Poly1, horizon: Q) -> Self {
        PwPoly::new(vec![Q::zero(), horizon], vec![p])
    }

    pub fn breakpoints(&self) -> &[Q] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[Poly1] {
        &self.pieces
    }

    pub fn horizon(&self) -> &Q {
        self.breakpoints.last().expect("nonempty grid")
    }

    fn piece_index(&self, t: &Q) -> usize {
        assert!(!t.is_negative() && t <= self.horizon(), "time out of range");
        for (i, w) in self.breakpoints.windows(2).enumerate() {
            if *t < w[1] {
                return i;
            }
        }
        self.pieces.len() - 1
    }

    pub fn eval(&self, t: &Q) -> Q {
        self.pieces[self.piece_index(t)].eval(t)
    }

    pub fn eval_f64(&self, t: f64) -> f64 {
        // Clamp into the grid; used by the numeric solvers.
        let h = to_f64(self.horizon());
        let tc = t.clamp(0.0, h);
        let mut idx = self.pieces.len() - 1;
        for (i, w) in self.breakpoints.windows(2).enumerate() {
            if tc < to_f64(&w[1]) {
                idx = i;
                break;
            }
        }
        let mut acc = 0.0;
        for c in self.pieces[idx].0.iter().rev() {
            acc = acc * tc + to_f64(c);
        }
        acc
    }

    /// Refit onto a finer grid containing all breakpoints of both operands.
    pub fn merge_grid(a: &PwPoly, b: &PwPoly) -> (PwPoly, PwPoly) {
        assert_eq!(a.horizon(), b.horizon(), "horizons differ");
        let mut grid: Vec<Q> = a
            .breakpoints
            .iter()
            .chain(b.breakpoints.iter())
            .cloned()
            .collect();
        grid.sort();
        grid.dedup();
        (a.refit(&grid), b.refit(&grid))
    }

    fn refit(&self, grid: &[Q]) -> PwPoly {
        let pieces = grid
            .windows(2)
            .map(|w| self.pieces[self.piece_index(&w[0])].clone())
            .collect();
        PwPoly::new(grid.to_vec(), pieces)
    }

    pub fn add(&self, other: &PwPoly) -> PwPoly {
        let (a, b) = PwPoly::merge_grid(self, other);
        let pieces = a
            .pieces
            .iter()
            .zip(b.pieces.iter())
            .map(|(p, q)| p.add(q))
            .collect();
        PwPoly::new(a.breakpoints, pieces)
    }

    pub fn mul(&self, other: &PwPoly) -> PwPoly {
        let (a, b) = PwPoly::merge_grid(self, other);
        let pieces = a
            .pieces
            .iter()
            .zip(b.pieces.iter())
            .map(|(p, q)| p.mul(q))
            .collect();
        PwPoly::new(a.breakpoints, pieces)
    }

    pub fn scale(&self, c: &Q) -> PwPoly {
        PwPoly::new(
            self.breakpoints.clone(),
            self.pieces.iter().map(|p| p.scale(c)).collect(),
        )
    }

    /// Piecewise derivative (jumps at breakpoints are dropped).
    pub fn derivative(&self) -> PwPoly {
        PwPoly::new(
            self.breakpoints.clone(),
            self.pieces.iter().map(|p| p.derivative()).collect(),
        )
    }

    /// Exact antiderivative vanishing at zero, continuous across breakpoints.
    pub fn antiderivative(&self) -> PwPoly {
        let mut pieces = Vec::with_capacity(self.pieces.len());
        let mut running = Q::zero();
        for (i, p) in self.pieces.iter().enumerate() {
            let prim = p.antiderivative();
            let left = &self.breakpoints[i];
            let offset = &running - prim.eval(left);
            pieces.push(prim.add(&Poly1::constant(offset)));
            running = pieces[i].eval(&self.breakpoints[i + 1]);
        }
        PwPoly::new(self.breakpoints.clone(), pieces)
    }

    /// `∫_0^t`, exact.
    pub fn integral_to(&self, t: &Q) -> Q {
        self.antiderivative().eval(t)
    }

    /// Exact `L¹` norm when every piece has sign-definite coefficients;
    /// otherwise a certified upper bound via the coefficient majorant.
    pub fn l1_norm_upper(&self) -> Q {
        let mut total = Q::zero();
        for (i, p) in self.pieces.iter().enumerate() {
            let q = if p.sign_definite_coeffs() {
                p.clone()
            } else {
                p.abs_coeffs()
            };
            let prim = q.antiderivative();
            let seg = prim.eval(&self.breakpoints[i + 1]) - prim.eval(&self.breakpoints[i]);
            total += seg.abs();
        }
        total
    }

    /// True when [`l1_norm_upper`](Self::l1_norm_upper) is the exact norm.
    pub fn l1_norm_is_exact(&self) -> bool {
        self.pieces.iter().all(|p| p.sign_definite_coeffs())
    }

    /// Numeric `L¹` norm by composite Simpson on each piece.
    pub fn l1_norm_f64(&self) -> f64 {
        let mut total = 0.0;
        for (i, p) in self.pieces.iter().enumerate() {
            let a = to_f64(&self.breakpoints[i]);
            let b = to_f64(&self.breakpoints[i + 1]);
            let n = 128;
            let h = (b - a) / n as f64;
            let f = |t: f64| {
                let mut acc = 0.0;
                for c in p.0.iter().rev() {
                    acc = acc * t + to_f64(c);
                }
                acc.abs()
            };
            let mut s = f(a) + f(b);
            for j in 1..n {
                s += f(a + j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
            }
            total += s * h / 3.0;
        }
        total
    }

    /// Numeric `L^∞` norm by dense sampling (exact at the samples).
    pub fn linf_norm_f64(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, p) in self.pieces.iter().enumerate() {
            let a = to_f64(&self.breakpoints[i]);
            let b = to_f64(&self.breakpoints[i + 1]);
            for j in 0..=256 {
                let t = a + (b - a) * j as f64 / 256.0;
                let mut acc = 0.0;
                for c in p.0.iter().rev() {
                    acc = acc * t + to_f64(c);
                }
                best = best.max(acc.abs());
            }
        }
        best
    }
}

/// A scalar control signal: a piecewise polynomial tagged with its channel.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Control {
    pub channel: usize,
    pub signal: PwPoly,
}

impl Control {
    pub fn new(channel: usize, signal: PwPoly) -> Self {
        Control { channel, signal }
    }

    pub fn constant(channel: usize, c: Q, horizon: Q) -> Self {
        Control::new(channel, PwPoly::constant(c, horizon))
    }

    pub fn eval(&self, t: &Q) -> Q {
        self.signal.eval(t)
    }

    pub fn horizon(&self) -> &Q {
        self.signal.horizon()
    }
}

/// Time primitive `U(t) = ∫_0^t u`, exact with continuity constants.
pub fn primitive(u: &Control) -> Control {
    Control::new(u.channel, u.signal.antiderivative())
}

/// Time reparametrization `u^λ(λt) = u(t)`, extended by zero beyond `λT`.
///
/// Breakpoints scale by `λ`; each piece becomes `p(t/λ)`.
pub fn time_rescale(u: &Control, lambda: &Q) -> Control {
    assert!(lambda.is_positive() && *lambda <= qi(1), "need 0 < λ ≤ 1");
    let bps: Vec<Q> = u.signal.breakpoints().iter().map(|b| b * lambda).collect();
    let inv = lambda.clone().recip();
    let pieces: Vec<Poly1> = u
        .signal
        .pieces()
        .iter()
        .map(|p| p.compose_affine(&inv, &Q::zero()))
        .collect();
    Control::new(u.channel, PwPoly::new(bps, pieces))
}

/// A tuple of controls indexed by letters `0..q`, sharing their grid.
///
/// For systems with drift, letter 0 carries the constant-1 drift control.
#[derive(Clone, Debug)]
pub struct ControlTuple {
    channels: Vec<Control>,
    has_drift: bool,
}

impl ControlTuple {
    /// Channels for letters `0..n`, exactly as given.
    pub fn driftless(channels: Vec<Control>) -> Self {
        assert!(!channels.is_empty());
        let tuple = ControlTuple {
            channels,
            has_drift: false,
        };
        tuple.check_grids();
        tuple
    }

    /// Prepends the constant-1 drift channel as letter 0.
    pub fn with_drift(controls: Vec<Control>) -> Self {
        assert!(!controls.is_empty());
        let horizon = controls[0].horizon().clone();
        let mut channels = vec![Control::constant(0, qi(1), horizon)];
        channels.extend(controls);
        let tuple = ControlTuple {
            channels,
            has_drift: true,
        };
        tuple.check_grids();
        tuple
    }

    fn check_grids(&self) {
        let h = self.channels[0].horizon();
        for c in &self.channels {
            assert_eq!(c.horizon(), h, "channels must share the horizon");
        }
    }

    pub fn has_drift(&self) -> bool {
        self.has_drift
    }

    pub fn alphabet_size(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, letter: usize) -> &Control {
        &self.channels[letter]
    }

    pub fn channels(&self) -> &[Control] {
        &self.channels
    }

    pub fn horizon(&self) -> &Q {
        self.channels[0].horizon()
    }

    /// Sum of channel `L¹` norms up to time `t` (drift excluded on request).
    pub fn l1_norm_f64(&self, skip_drift: bool) -> f64 {
        self.channels
            .iter()
            .enumerate()
            .filter(|(i, _)| !(skip_drift && self.has_drift && *i == 0))
            .map(|(_, c)| c.signal.l1_norm_f64())
            .sum()
    }

    /// Scale the non-drift channels by a rational factor.
    pub fn scale_inputs(&self, s: &Q) -> ControlTuple {
        let channels = self
            .channels
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if self.has_drift && i == 0 {
                    c.clone()
                } else {
                    Control::new(c.channel, c.signal.scale(s))
                }
            })
            .collect();
        ControlTuple {
            channels,
            has_drift: self.has_drift,
        }
    }

    pub fn rescale_time(&self, lambda: &Q) -> ControlTuple {
        let channels = self
            .channels
            .iter()
            .map(|c| time_rescale(c, lambda))
            .collect();
        ControlTuple {
            channels,
            has_drift: self.has_drift,
        }
    }
}

/// Exact iterated integral of one word,
/// `∫_{0<τ1<..<τn<t} a_{σ1}(τ1) ⋯ a_{σn}(τn) dτ` with `σ1` at the earliest time.
pub fn iterated_word_integral(word: &Word, a: &ControlTuple, t: &Q) -> Q {
    assert!(t <= a.horizon(), "time beyond the control horizon");
    let mut acc: Option<PwPoly> = None;
    for &letter in &word.0 {
        assert!((letter as usize) < a.alphabet_size(), "letter out of range");
        let ch = &a.channel(letter as usize).signal;
        let integrand = match &acc {
            None => ch.clone(),
            Some(prefix) => prefix.mul(ch),
        };
        acc = Some(integrand.antiderivative());
    }
    match acc {
        None => qi(1),
        Some(p) => p.eval(t),
    }
}

/// Chen-Fliess word series of the controls at time `t`, truncated at `n`:
/// `⟨S, σ⟩` is the iterated integral of `σ`, and `⟨S, ε⟩ = 1`.
pub fn word_series(a: &ControlTuple, t: &Q, n: usize) -> NcSeries {
    assert!(t <= a.horizon(), "time beyond the control horizon");
    let mut series = NcSeries::one(n);
    // Dynamic program over prefixes: level k holds I_σ for |σ| = k.
    let mut level: BTreeMap<Word, PwPoly> = BTreeMap::new();
    level.insert(Word::empty(), PwPoly::constant(qi(1), a.horizon().clone()));
    for _ in 0..n {
        let mut next: BTreeMap<Word, PwPoly> = BTreeMap::new();
        for (w, prefix) in &level {
            for letter in 0..a.alphabet_size() {
                let integrand = prefix.mul(&a.channel(letter).signal);
                let integral = integrand.antiderivative();
                let mut word = w.clone();
                word.0.push(letter as u8);
                series.set_coeff(word.clone(), integral.eval(t));
                next.insert(word, integral);
            }
        }
        level = next;
    }
    series
}

/// Exact `∫_0^t U^k` over the ordered simplex: the innermost
/// (earliest) time carries the last exponent `k_n`.
pub fn iterated_u_integral(k: &[usize], u: &Control, t: &Q) -> Q {
    let cap_u = primitive(u).signal;
    let mut acc = PwPoly::constant(qi(1), u.horizon().clone());
    for &exp in k.iter().rev() {
        let mut factor = PwPoly::constant(qi(1), u.horizon().clone());
        for _ in 0..exp {
            factor = factor.mul(&cap_u);
        }
        acc = factor.mul(&acc).antiderivative();
    }
    acc.eval(t)
}

/// JSON description: breakpoints, per-piece coefficient arrays, channel label.
pub fn control_to_json(c: &Control) -> serde_json::Value {
    serde_json::json!({
        "channel": c.channel,
        "breakpoints": c.signal.breakpoints().iter().map(crate::rat::format_q).collect::<Vec<_>>(),
        "pieces": c.signal.pieces().iter().map(|p| {
            p.0.iter().map(crate::rat::format_q).collect::<Vec<_>>()
        }).collect::<Vec<_>>(),
    })
}

pub fn control_from_json(v: &serde_json::Value) -> Option<Control> {
    let channel = v.get("channel")?.as_u64()? as usize;
    let bps: Vec<Q> = v
        .get("breakpoints")?
        .as_array()?
        .iter()
        .map(|b| parse_q(b.as_str()?))
        .collect::<Option<_>>()?;
    let pieces: Vec<Poly1> = v
        .get("pieces")?
        .as_array()?
        .iter()
        .map(|p| {
            let coeffs: Option<Vec<Q>> =
                p.as_array()?.iter().map(|c| parse_q(c.as_str()?)).collect();
            Some(Poly1::from_coeffs(coeffs?))
        })
        .collect::<Option<_>>()?;
    Some(Control::new(channel, PwPoly::new(bps, pieces)))
}

/// Simplex bound `|∫_0^t a_σ| ≤ ‖u‖_{L¹}^{n(σ)}/n(σ)! · t^{n_0}/n_0!` for
/// drift tuples, where `‖u‖` sums the non-drift channel norms; exact
/// piecewise-polynomial norms on sign-definite pieces.
pub fn word_integral_bound(word: &Word, a: &ControlTuple, t: &Q) -> Q {
    use crate::rat::factorial;
    let mut sum_norm = Q::zero();
    for letter in 1..a.alphabet_size() {
        sum_norm += a.channel(letter).signal.l1_norm_upper();
    }
    let n = word.nonzero_count();
    let n0 = word.len() - n;
    qpow(&sum_norm, n as i64) / factorial(n) * qpow(t, n0 as i64) / factorial(n0)
}
