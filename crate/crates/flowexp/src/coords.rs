//! Bernoulli numbers, coordinates of the first, second and pseudo-first
//! kind, and Campbell-Baker-Hausdorff-Dynkin coefficient tables.
//!
//! First-kind coordinates are computed by the log-then-decompose route: take
//! the exact word series of the controls, its truncated logarithm is a Lie
//! element, decompose it on the Hall basis. CBHD coefficients are first-kind
//! coordinates of indicator controls. Second-kind coordinates follow their
//! integral recursion with piecewise-polynomial state. Pseudo-first-kind
//! coordinates go through the extended alphabet `Y_{k,i} ↦ ad^k_{X0}(X_i)`
//! with the polynomial controls `(-1)^k (t-s)^k u_i(s)/k!`.

use crate::freealg::{AlgebraError, NcSeries};
use crate::hall::{build_hall_basis, hall_decompose, Bracket, HallBasis, OrderPolicy};
use crate::rat::{binomial, factorial, format_q, qi, qpow, to_f64, Q};
use crate::signals::{
    iterated_word_integral, primitive, word_series, Control, ControlTuple, Poly1, PwPoly,
};
use num_traits::{Signed, Zero};
use std::collections::BTreeMap;

/// Exact Bernoulli numbers `B_0..B_n` (NIST convention, `B_1 = -1/2`).
#[derive(Clone, Debug)]
pub struct BernoulliTable {
    values: Vec<Q>,
}

impl BernoulliTable {
    /// Build by the recurrence `B_m = -1/(m+1) Σ_{k<m} C(m+1,k) B_k`.
    pub fn up_to(n: usize) -> Self {
        let mut values = Vec::with_capacity(n + 1);
        values.push(qi(1));
        for m in 1..=n {
            let mut sum = Q::zero();
            for (k, b) in values.iter().enumerate() {
                sum += binomial(m + 1, k) * b;
            }
            values.push(-sum / qi((m + 1) as i64));
        }
        BernoulliTable { values }
    }

    pub fn get(&self, n: usize) -> &Q {
        &self.values[n]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Exact `B_n`.
pub fn bernoulli(n: usize) -> Q {
    BernoulliTable::up_to(n).get(n).clone()
}

/// Which coordinate family a table holds.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CoordKind {
    First,
    Second,
    PseudoFirst,
    Cbhd,
}

/// A coordinate table over a Hall basis: bracket and exact value per entry.
#[derive(Clone, Debug)]
pub struct CoordTable {
    pub kind: CoordKind,
    pub time: Q,
    /// Degree cap `M`; for pseudo-first-kind tables this caps `n(b)`.
    pub degree_cap: usize,
    /// Cap on `n_0(b)` for pseudo-first-kind tables.
    pub n0_cap: Option<usize>,
    entries: Vec<(Bracket, Q)>,
    index: BTreeMap<String, usize>,
}

impl CoordTable {
    fn new(kind: CoordKind, time: Q, degree_cap: usize, n0_cap: Option<usize>) -> Self {
        CoordTable {
            kind,
            time,
            degree_cap,
            n0_cap,
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    fn push(&mut self, b: Bracket, v: Q) {
        self.index.insert(b.to_nested(), self.entries.len());
        self.entries.push((b, v));
    }

    pub fn entries(&self) -> &[(Bracket, Q)] {
        &self.entries
    }

    /// Value for a bracket; absent brackets within the caps are zero.
    pub fn value(&self, b: &Bracket) -> Q {
        self.index
            .get(&b.to_nested())
            .map(|&i| self.entries[i].1.clone())
            .unwrap_or_else(Q::zero)
    }

    /// CSV export: nested bracket, |b|, n(b), n0(b), exact value, decimal.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bracket,len,n,n0,value,decimal\n");
        for (b, v) in &self.entries {
            out.push_str(&format!(
                "\"{}\",{},{},{},{},{}\n",
                b.to_nested(),
                b.len(),
                b.nonzero_count(),
                b.len() - b.nonzero_count(),
                format_q(v),
                to_f64(v),
            ));
        }
        out
    }
}

/// Coordinates of the first kind `ζ_b` for `|b| ≤ m`:
/// `exp(Σ ζ_b eval(b))` equals the word series of the controls up to degree `m`.
pub fn coord_first_kind(
    basis: &HallBasis,
    a: &ControlTuple,
    t: &Q,
    m: usize,
) -> Result<CoordTable, AlgebraError> {
    assert!(m <= basis.max_length(), "basis too short for degree cap");
    let series = word_series(a, t, m);
    let log = series.log()?;
    if !crate::freealg::is_lie_element(&log) {
        // The truncated log of a word series is a Lie element; a failure here
        // signals a bug in the integral engine.
        return Err(AlgebraError::NotALieElement);
    }
    let decomposition = hall_decompose(&log, basis)?;
    let mut table = CoordTable::new(CoordKind::First, t.clone(), m, None);
    for (rank, value) in decomposition {
        table.push(basis.elements()[rank].clone(), value);
    }
    Ok(table)
}

/// CBHD coefficients `α_b` with `e^{y_1} ⋯ e^{y_n} = e^{Σ α_b b}`:
/// first-kind coordinates of the indicator controls `a_j = 1_{[j-1,j]}`.
pub fn cbhd_coeffs(n_args: usize, basis: &HallBasis, m: usize) -> Result<CoordTable, AlgebraError> {
    assert!(n_args >= 2, "need at least two exponents");
    assert_eq!(basis.alphabet_size(), n_args, "basis alphabet must match");
    let horizon = qi(n_args as i64);
    let controls: Vec<Control> = (0..n_args)
        .map(|j| {
            let mut pieces = vec![Poly1::zero(); n_args];
            pieces[j] = Poly1::constant(qi(1));
            let bps: Vec<Q> = (0..=n_args).map(|k| qi(k as i64)).collect();
            Control::new(j, PwPoly::new(bps, pieces))
        })
        .collect();
    let tuple = ControlTuple::driftless(controls);
    let mut table = coord_first_kind(basis, &tuple, &horizon, m)?;
    table.kind = CoordKind::Cbhd;
    Ok(table)
}

/// Maximal factorization `b = ad^m_{b1}(b2)` used by the second-kind recursion.
fn coord2_factorize(b: &Bracket) -> (Bracket, usize, Bracket) {
    let l = b.left().expect("non-leaf bracket").clone();
    let mut m = 0usize;
    let mut cur = b.clone();
    while let (Some(bl), Some(br)) = (cur.left().cloned(), cur.right().cloned()) {
        if bl == l {
            m += 1;
            cur = br;
        } else {
            break;
        }
    }
    (l, m, cur)
}

/// Coordinates of the second kind `ξ_b` over the whole basis, exact.
///
/// `ξ_{X_i} = ∫ a_i` and `ξ_b = (1/m!) ∫ ξ_{b1}^m ξ̇_{b2}` for the unique
/// maximal factorization `b = ad^m_{b1}(b2)`.
pub fn coord_second_kind(basis: &HallBasis, a: &ControlTuple, t: &Q) -> CoordTable {
    let pieces = second_kind_signals(basis, a);
    let mut table = CoordTable::new(CoordKind::Second, t.clone(), basis.max_length(), None);
    for b in basis.elements() {
        let xi = &pieces[&b.to_nested()].0;
        table.push(b.clone(), xi.eval(t));
    }
    table
}

/// The full `(ξ_b, ξ̇_b)` piecewise-polynomial state per basis element.
pub fn second_kind_signals(
    basis: &HallBasis,
    a: &ControlTuple,
) -> BTreeMap<String, (PwPoly, PwPoly)> {
    let mut out: BTreeMap<String, (PwPoly, PwPoly)> = BTreeMap::new();
    for b in basis.elements() {
        let key = b.to_nested();
        let (xi, dxi) = match b {
            Bracket::Leaf(i) => {
                let dxi = a.channel(*i as usize).signal.clone();
                (dxi.antiderivative(), dxi)
            }
            Bracket::Node(..) => {
                let (b1, m, b2) = coord2_factorize(b);
                let xi1 = &out[&b1.to_nested()].0;
                let dxi2 = &out[&b2.to_nested()].1;
                let mut power = PwPoly::constant(qi(1), a.horizon().clone());
                for _ in 0..m {
                    power = power.mul(xi1);
                }
                let dxi = power.mul(dxi2).scale(&factorial(m).recip());
                (dxi.antiderivative(), dxi)
            }
        };
        out.insert(key, (xi, dxi));
    }
    out
}

/// Coordinates of the pseudo-first kind `η_b` with `n(b) ≤ m`, `n_0(b) ≤ n0_cap`.
///
/// Computed over the extended alphabet `Y_{k,i} ↦ ad^k_{X0}(X_i)` with
/// controls `γ_{k,i}(s) = (-1)^k (t-s)^k u_i(s) / k!`, then pushed down to the
/// drift alphabet and decomposed. `η_{X0} = 0` by construction.
pub fn coord_pseudo_first_kind(
    basis: &HallBasis,
    a: &ControlTuple,
    t: &Q,
    m: usize,
    n0_cap: usize,
) -> Result<CoordTable, AlgebraError> {
    assert!(
        a.has_drift(),
        "pseudo-first-kind coordinates isolate a drift"
    );
    let q_inputs = a.alphabet_size() - 1;
    assert!(q_inputs >= 1);
    assert!(
        basis.max_length() >= m + n0_cap,
        "basis too short: need length {} for n(b) ≤ {m}, n0(b) ≤ {n0_cap}",
        m + n0_cap
    );

    // Extended alphabet: letter index k*q + (i-1) stands for Y_{k,i}.
    let letters = (n0_cap + 1) * q_inputs;
    assert!(letters <= 255, "extended alphabet too large");
    let mut gammas = Vec::with_capacity(letters);
    for k in 0..=n0_cap {
        // (t - s)^k as a polynomial in s.
        let mut tk = Poly1::constant(qi(1));
        let lin = Poly1::from_coeffs(vec![t.clone(), qi(-1)]);
        for _ in 0..k {
            tk = tk.mul(&lin);
        }
        let sign = if k % 2 == 0 { qi(1) } else { qi(-1) };
        let scale = sign / factorial(k);
        for i in 1..=q_inputs {
            let u_i = &a.channel(i).signal;
            let gamma = u_i
                .mul(&PwPoly::from_poly(tk.clone(), a.horizon().clone()))
                .scale(&scale);
            gammas.push(Control::new(gammas.len(), gamma));
        }
    }
    let tuple = ControlTuple::driftless(gammas);
    let series = word_series(&tuple, t, m);
    let log = series.log()?;

    // Decompose on a Hall basis of the extended alphabet, substitute
    // Y_{k,i} ↦ ad^k_{X0}(X_i) and expand in the drift alphabet.
    let y_basis = build_hall_basis(letters, m, OrderPolicy::LengthThenLex);
    let y_table = hall_decompose(&log, &y_basis)?;
    let max_len = m + n0_cap;
    let mut z = NcSeries::zero(max_len);
    for (rank, coeff) in &y_table {
        let y_bracket = &y_basis.elements()[*rank];
        let x_bracket = substitute_extended_letters(y_bracket, q_inputs);
        if x_bracket.len() > max_len {
            // n_0 beyond the cap: outside the filtered table by construction.
            continue;
        }
        z = z.add(&x_bracket.expand_to_words(max_len).scale(coeff))?;
    }
    let x_table = hall_decompose(&z, basis)?;
    let mut table = CoordTable::new(CoordKind::PseudoFirst, t.clone(), m, Some(n0_cap));
    for (rank, value) in x_table {
        let b = basis.elements()[rank].clone();
        if b.nonzero_count() <= m && b.len() - b.nonzero_count() <= n0_cap {
            table.push(b, value);
        }
    }
    Ok(table)
}

/// Replace the extended letter `Y_{k,i}` with the bracket `ad^k_{X0}(X_i)`.
fn substitute_extended_letters(b: &Bracket, q_inputs: usize) -> Bracket {
    match b {
        Bracket::Leaf(y) => {
            let k = (*y as usize) / q_inputs;
            let i = (*y as usize) % q_inputs + 1;
            Bracket::ad(&Bracket::leaf(0), k, &Bracket::leaf(i as u8))
        }
        Bracket::Node(l, r) => Bracket::node(
            substitute_extended_letters(l, q_inputs),
            substitute_extended_letters(r, q_inputs),
        ),
    }
}

/// Bernoulli closed form for `ζ_{ad^k_{X0}(X1)}` in terms of the word
/// integrals `⟨x(t), X1 X0^ℓ⟩` and the primitives of the two channels.
pub fn zeta_adk_closed_form(k: usize, a: &ControlTuple, t: &Q) -> Q {
    let bern = BernoulliTable::up_to(k);
    let a0_prim = primitive(a.channel(0)).signal.eval(t);
    let a1_prim = primitive(a.channel(1)).signal.eval(t);
    let sign = if k.is_multiple_of(2) { qi(1) } else { qi(-1) };
    let mut total = qpow(&a0_prim, k as i64) * bern.get(k) / factorial(k) * &a1_prim;
    for l in 1..=k {
        let mut word = crate::freealg::Word(vec![1u8]);
        word.0.extend(std::iter::repeat_n(0u8, l));
        let w = iterated_word_integral(&word, a, t);
        total += qpow(&a0_prim, (k - l) as i64) * bern.get(k - l) / factorial(k - l) * w;
    }
    sign * total
}

/// Audit report for the second-kind bounds.
#[derive(Clone, Debug)]
pub struct CoordBoundReport {
    /// Every entry satisfied `|ξ_b| ≤ ‖a‖_{L¹}^{|b|}`.
    pub plain_bound_ok: bool,
    /// First bracket violating it, if any.
    pub witness: Option<String>,
    /// For drift bases: fitted constant `c_k` per `k = n(b)` in
    /// `|ξ_b| ≤ ‖u‖^k (c_k t)^{n0}/n0!`, as (k, c_k).
    pub fitted_ck: Vec<(usize, f64)>,
}

/// Checks `|ξ_b(t)| ≤ ‖a‖_{L¹(0,t)}^{|b|}` for every entry and reports the
/// fitted drift-asymmetric constants; violations record a witness bracket.
pub fn coord_bound_audit(table: &CoordTable, a: &ControlTuple) -> CoordBoundReport {
    assert_eq!(
        table.kind,
        CoordKind::Second,
        "audit applies to second kind"
    );
    let t = &table.time;
    let mut norm_all = Q::zero();
    for c in a.channels() {
        norm_all += restrict_l1(&c.signal, t);
    }
    let mut norm_inputs = Q::zero();
    for (i, c) in a.channels().iter().enumerate() {
        if a.has_drift() && i == 0 {
            continue;
        }
        norm_inputs += restrict_l1(&c.signal, t);
    }
    let mut plain_ok = true;
    let mut witness = None;
    let mut per_k: BTreeMap<usize, f64> = BTreeMap::new();
    for (b, v) in table.entries() {
        let bound = qpow(&norm_all, b.len() as i64);
        if v.abs() > bound {
            plain_ok = false;
            witness.get_or_insert_with(|| b.to_nested());
        }
        if a.has_drift() {
            let k = b.nonzero_count();
            let n0 = b.len() - k;
            if k >= 1 && n0 >= 1 && !norm_inputs.is_zero() && !t.is_zero() {
                // |ξ_b| n0! / ‖u‖^k ≤ (c t)^{n0}  ⇒  c ≥ lhs^{1/n0} / t.
                let lhs = to_f64(&(v.abs() * factorial(n0) / qpow(&norm_inputs, k as i64)));
                if lhs > 0.0 {
                    let c = lhs.powf(1.0 / n0 as f64) / to_f64(t);
                    let entry = per_k.entry(k).or_insert(0.0);
                    *entry = entry.max(c);
                }
            }
        }
    }
    CoordBoundReport {
        plain_bound_ok: plain_ok,
        witness,
        fitted_ck: per_k.into_iter().collect(),
    }
}

fn restrict_l1(p: &PwPoly, t: &Q) -> Q {
    // Upper bound of ∫_0^t |p|; exact for sign-definite pieces.
    let mut total = Q::zero();
    let bps = p.breakpoints();
    for (i, piece) in p.pieces().iter().enumerate() {
        let lo = &bps[i];
        if lo >= t {
            break;
        }
        let hi = if &bps[i + 1] < t {
            bps[i + 1].clone()
        } else {
            t.clone()
        };
        let q = if piece.sign_definite_coeffs() {
            piece.clone()
        } else {
            piece.abs_coeffs()
        };
        let prim = q.antiderivative();
        total += (prim.eval(&hi) - prim.eval(lo)).abs();
    }
    total
}

/// Substitute series arguments into a bracket tree (`[.,.]` as commutators).
pub fn substitute_bracket_series(b: &Bracket, args: &[NcSeries]) -> NcSeries {
    match b {
        Bracket::Leaf(i) => args[*i as usize].clone(),
        Bracket::Node(l, r) => {
            let sl = substitute_bracket_series(l, args);
            let sr = substitute_bracket_series(r, args);
            sl.bracket(&sr).expect("matching truncation")
        }
    }
}

/// The `h`-multihomogeneous piece of a CBHD table as a word series over the
/// `h.len()`-letter alphabet.
pub fn fqh_piece(table: &CoordTable, h: &[usize], trunc: usize) -> NcSeries {
    let mut out = NcSeries::zero(trunc);
    for (b, v) in table.entries() {
        if b.multidegree(h.len()) == h {
            out = out
                .add(&b.expand_to_words(trunc).scale(v))
                .expect("matching truncation");
        }
    }
    out
}
