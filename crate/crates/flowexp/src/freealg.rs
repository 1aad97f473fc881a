//! Exact truncated noncommutative series over the free associative algebra.
//!
//! Words are finite sequences of letter indices, a series maps words of
//! length at most the truncation degree to rational coefficients. Products,
//! exponentials and logarithms are exact; two series are equal iff all word
//! coefficients up to the common truncation degree agree. Every binary
//! operation checks that both operands carry the same truncation degree;
//! silent re-truncation is a bug class this module refuses to host.

use crate::rat::{factorial, format_q, parse_q, qi, Q};
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// A word over the letter alphabet `{0..q}`; the empty word is allowed.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Word(pub Vec<u8>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn letter(i: u8) -> Self {
        Word(vec![i])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    /// Number of occurrences of `letter`.
    pub fn count(&self, letter: u8) -> usize {
        self.0.iter().filter(|&&c| c == letter).count()
    }

    /// Occurrences of letters other than 0, written `n(σ)` for drift alphabets.
    pub fn nonzero_count(&self) -> usize {
        self.0.iter().filter(|&&c| c != 0).count()
    }

    /// Digit-string form used by the canonical text format.
    pub fn digits(&self) -> String {
        self.0.iter().map(|c| char::from(b'0' + c)).collect()
    }

    pub fn from_digits(s: &str) -> Option<Word> {
        let mut v = Vec::with_capacity(s.len());
        for c in s.chars() {
            let d = c.to_digit(10)?;
            if d > 9 {
                return None;
            }
            v.push(d as u8);
        }
        Some(Word(v))
    }
}

/// Graded order: by length first, then lexicographically.
impl Ord for Word {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            write!(f, "ε")
        } else {
            write!(f, "{}", self.digits())
        }
    }
}

/// All `alphabet_size^degree` words of exactly the given length, lexicographic.
pub fn word_enumerate(alphabet_size: usize, degree: usize) -> Vec<Word> {
    assert!(alphabet_size >= 1, "alphabet must contain a letter");
    let mut out = Vec::new();
    let mut cur = vec![0u8; degree];
    loop {
        out.push(Word(cur.clone()));
        // Increment as a base-`alphabet_size` counter.
        let mut i = degree;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if (cur[i] as usize) + 1 < alphabet_size {
                cur[i] += 1;
                for c in cur.iter_mut().skip(i + 1) {
                    *c = 0;
                }
                break;
            }
        }
    }
}

/// Errors raised by the formal algebra.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlgebraError {
    /// Two series with different truncation degrees entered a binary operation.
    TruncationMismatch(usize, usize),
    /// `exp` needs a zero constant term, `log` a unit constant term.
    BadConstantTerm(&'static str),
    /// A linear solve against a Hall basis had no solution.
    NotALieElement,
    /// A degree exceeded what a basis or table can answer for.
    DegreeOutOfRange(usize, usize),
}

impl fmt::Display for AlgebraError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlgebraError::TruncationMismatch(a, b) => {
                write!(f, "truncation degrees differ: {a} vs {b}")
            }
            AlgebraError::BadConstantTerm(what) => write!(f, "bad constant term for {what}"),
            AlgebraError::NotALieElement => write!(f, "series is not a Lie element"),
            AlgebraError::DegreeOutOfRange(got, max) => {
                write!(f, "degree {got} exceeds supported degree {max}")
            }
        }
    }
}

impl std::error::Error for AlgebraError {}

/// Truncated noncommutative formal series with exact rational coefficients.
///
/// Only words of length at most `trunc` are stored; an absent word has
/// coefficient zero and zero coefficients are never stored.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NcSeries {
    trunc: usize,
    terms: BTreeMap<Word, Q>,
}

impl NcSeries {
    pub fn zero(trunc: usize) -> Self {
        NcSeries {
            trunc,
            terms: BTreeMap::new(),
        }
    }

    pub fn one(trunc: usize) -> Self {
        let mut s = Self::zero(trunc);
        s.terms.insert(Word::empty(), qi(1));
        s
    }

    pub fn letter(i: u8, trunc: usize) -> Self {
        let mut s = Self::zero(trunc);
        if trunc >= 1 {
            s.terms.insert(Word::letter(i), qi(1));
        }
        s
    }

    pub fn trunc(&self) -> usize {
        self.trunc
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, &Q)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, w: &Word) -> Q {
        self.terms.get(w).cloned().unwrap_or_else(Q::zero)
    }

    pub fn constant_term(&self) -> Q {
        self.coeff(&Word::empty())
    }

    /// Insert or erase a coefficient, keeping the no-zero-terms invariant.
    pub fn set_coeff(&mut self, w: Word, c: Q) {
        assert!(w.len() <= self.trunc, "word exceeds truncation degree");
        if c.is_zero() {
            self.terms.remove(&w);
        } else {
            self.terms.insert(w, c);
        }
    }

    pub fn add_to_coeff(&mut self, w: Word, c: &Q) {
        if w.len() > self.trunc || c.is_zero() {
            return;
        }
        let entry = self.terms.entry(w).or_insert_with(Q::zero);
        *entry += c;
        if entry.is_zero() {
            // Borrow ends here; re-fetch to remove.
            let key: Vec<Word> = self
                .terms
                .iter()
                .filter(|(_, v)| v.is_zero())
                .map(|(k, _)| k.clone())
                .collect();
            for k in key {
                self.terms.remove(&k);
            }
        }
    }

    fn check_trunc(&self, other: &NcSeries) -> Result<(), AlgebraError> {
        if self.trunc != other.trunc {
            Err(AlgebraError::TruncationMismatch(self.trunc, other.trunc))
        } else {
            Ok(())
        }
    }

    pub fn add(&self, other: &NcSeries) -> Result<NcSeries, AlgebraError> {
        self.check_trunc(other)?;
        let mut out = self.clone();
        for (w, c) in &other.terms {
            out.add_to_coeff(w.clone(), c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &NcSeries) -> Result<NcSeries, AlgebraError> {
        self.check_trunc(other)?;
        let mut out = self.clone();
        for (w, c) in &other.terms {
            out.add_to_coeff(w.clone(), &(-c.clone()));
        }
        Ok(out)
    }

    pub fn scale(&self, c: &Q) -> NcSeries {
        if c.is_zero() {
            return NcSeries::zero(self.trunc);
        }
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= c;
        }
        out
    }

    pub fn neg(&self) -> NcSeries {
        self.scale(&qi(-1))
    }

    /// Concatenation product, truncated at the shared degree.
    pub fn mul(&self, other: &NcSeries) -> Result<NcSeries, AlgebraError> {
        self.check_trunc(other)?;
        let mut out = NcSeries::zero(self.trunc);
        for (wa, ca) in &self.terms {
            if wa.len() > self.trunc {
                continue;
            }
            for (wb, cb) in &other.terms {
                if wa.len() + wb.len() > self.trunc {
                    continue;
                }
                out.add_to_coeff(wa.concat(wb), &(ca * cb));
            }
        }
        Ok(out)
    }

    /// Commutator `[a, b] = ab - ba`.
    pub fn bracket(&self, other: &NcSeries) -> Result<NcSeries, AlgebraError> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    /// Homogeneous component of the given degree (same truncation degree).
    pub fn homogeneous_part(&self, degree: usize) -> NcSeries {
        let mut out = NcSeries::zero(self.trunc);
        for (w, c) in &self.terms {
            if w.len() == degree {
                out.terms.insert(w.clone(), c.clone());
            }
        }
        out
    }

    pub fn max_present_degree(&self) -> usize {
        self.terms.keys().map(|w| w.len()).max().unwrap_or(0)
    }

    /// Re-truncate downwards; raising the degree is not meaningful and panics.
    pub fn truncated(&self, new_trunc: usize) -> NcSeries {
        assert!(new_trunc <= self.trunc, "cannot extend a truncated series");
        let mut out = NcSeries::zero(new_trunc);
        for (w, c) in &self.terms {
            if w.len() <= new_trunc {
                out.terms.insert(w.clone(), c.clone());
            }
        }
        out
    }

    /// Rewrite at a higher truncation degree. Sound only when the caller knows
    /// the extra degrees are genuinely zero (e.g. a Lie polynomial of known
    /// top degree); exposed for bracket expansions, not for general series.
    pub fn with_trunc(&self, new_trunc: usize) -> NcSeries {
        let mut out = NcSeries::zero(new_trunc);
        for (w, c) in &self.terms {
            if w.len() <= new_trunc {
                out.terms.insert(w.clone(), c.clone());
            }
        }
        out
    }

    /// `exp(a) = Σ aᵐ/m!` for a series with zero constant term.
    pub fn exp(&self) -> Result<NcSeries, AlgebraError> {
        if !self.constant_term().is_zero() {
            return Err(AlgebraError::BadConstantTerm("exp"));
        }
        let mut out = NcSeries::one(self.trunc);
        let mut power = NcSeries::one(self.trunc);
        for m in 1..=self.trunc {
            power = power.mul(self)?;
            if power.is_zero() {
                break;
            }
            out = out.add(&power.scale(&factorial(m).recip()))?;
        }
        Ok(out)
    }

    /// `log(s) = Σ (-1)^{m-1} (s-1)ᵐ / m` for a series with unit constant term.
    pub fn log(&self) -> Result<NcSeries, AlgebraError> {
        if !self.constant_term().is_one() {
            return Err(AlgebraError::BadConstantTerm("log"));
        }
        let u = self.sub(&NcSeries::one(self.trunc))?;
        let mut out = NcSeries::zero(self.trunc);
        let mut power = NcSeries::one(self.trunc);
        for m in 1..=self.trunc {
            power = power.mul(&u)?;
            if power.is_zero() {
                break;
            }
            let c = Q::new(
                if m % 2 == 1 { qi(1) } else { qi(-1) }.numer().clone(),
                qi(m as i64).numer().clone(),
            );
            out = out.add(&power.scale(&c))?;
        }
        Ok(out)
    }

    /// Canonical text form: one `word=p/q` line per term, graded order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, c) in &self.terms {
            out.push_str(&w.digits());
            out.push('=');
            out.push_str(&format_q(c));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, trunc: usize) -> Option<NcSeries> {
        let mut s = NcSeries::zero(trunc);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (w, c) = line.split_once('=')?;
            let word = Word::from_digits(w.trim())?;
            if word.len() > trunc {
                return None;
            }
            s.set_coeff(word, parse_q(c)?);
        }
        Some(s)
    }

    /// Largest absolute coefficient, for growth reports.
    pub fn max_abs_coeff(&self) -> Q {
        self.terms
            .values()
            .map(|c| c.abs())
            .max()
            .unwrap_or_else(Q::zero)
    }
}

/// Left-normed (left-to-right) bracketing applied word by word.
///
/// `β(X_{i1}…X_{ik}) = [..[X_{i1}, X_{i2}], .., X_{ik}]`, expanded back into
/// words; `β(1) = 0`.
pub fn dynkin_beta(a: &NcSeries) -> NcSeries {
    let n = a.trunc();
    let mut out = NcSeries::zero(n);
    for (w, c) in a.terms() {
        if w.is_empty() {
            continue;
        }
        let mut acc = NcSeries::letter(w.0[0], n);
        for &letter in &w.0[1..] {
            let x = NcSeries::letter(letter, n);
            acc = acc.bracket(&x).expect("same truncation");
        }
        out = out.add(&acc.scale(c)).expect("same truncation");
    }
    out
}

/// Dynkin test: a truncated series with zero constant term is a Lie element
/// iff every homogeneous component `aₙ` satisfies `β(aₙ) = n aₙ`.
pub fn is_lie_element(a: &NcSeries) -> bool {
    if !a.constant_term().is_zero() {
        return false;
    }
    for n in 1..=a.trunc() {
        let part = a.homogeneous_part(n);
        if part.is_zero() {
            continue;
        }
        let beta = dynkin_beta(&part);
        if beta != part.scale(&qi(n as i64)) {
            return false;
        }
    }
    true
}

/// Truncated tensor square of the free algebra: word pairs mapped to
/// rationals, keeping pairs of total degree at most the truncation degree.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TensorSeries {
    trunc: usize,
    terms: BTreeMap<(Word, Word), Q>,
}

impl TensorSeries {
    pub fn zero(trunc: usize) -> Self {
        TensorSeries {
            trunc,
            terms: BTreeMap::new(),
        }
    }

    pub fn one(trunc: usize) -> Self {
        let mut t = Self::zero(trunc);
        t.terms.insert((Word::empty(), Word::empty()), qi(1));
        t
    }

    pub fn add_to_coeff(&mut self, key: (Word, Word), c: &Q) {
        if key.0.len() + key.1.len() > self.trunc || c.is_zero() {
            return;
        }
        let entry = self.terms.entry(key.clone()).or_insert_with(Q::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&key);
        }
    }

    pub fn add(&self, other: &TensorSeries) -> TensorSeries {
        assert_eq!(self.trunc, other.trunc);
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_to_coeff(k.clone(), c);
        }
        out
    }

    pub fn scale(&self, c: &Q) -> TensorSeries {
        if c.is_zero() {
            return TensorSeries::zero(self.trunc);
        }
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= c;
        }
        out
    }

    pub fn mul(&self, other: &TensorSeries) -> TensorSeries {
        assert_eq!(self.trunc, other.trunc);
        let mut out = TensorSeries::zero(self.trunc);
        for ((a1, a2), ca) in &self.terms {
            for ((b1, b2), cb) in &other.terms {
                if a1.len() + a2.len() + b1.len() + b2.len() > self.trunc {
                    continue;
                }
                out.add_to_coeff((a1.concat(b1), a2.concat(b2)), &(ca * cb));
            }
        }
        out
    }
}

/// Coproduct `Δ` on the truncated tensor algebra, `Δ(X_i) = X_i⊗1 + 1⊗X_i`.
pub fn coproduct(a: &NcSeries) -> TensorSeries {
    let n = a.trunc();
    let mut out = TensorSeries::zero(n);
    for (w, c) in a.terms() {
        // Δ(word) = Π Δ(letter); expand the product of binomials directly:
        // each subset S of positions sends its letters left, the rest right.
        // Equivalent to summing over all (left, right) shuffles preserving order.
        let k = w.len();
        let mut acc = TensorSeries::one(n);
        for &letter in &w.0 {
            let mut delta = TensorSeries::zero(n);
            delta.add_to_coeff((Word::letter(letter), Word::empty()), &qi(1));
            delta.add_to_coeff((Word::empty(), Word::letter(letter)), &qi(1));
            acc = acc.mul(&delta);
        }
        debug_assert!(k <= n);
        out = out.add(&acc.scale(c));
    }
    out
}

/// Friedrichs' criterion: `a` is a Lie element iff `Δ(a) = a⊗1 + 1⊗a`.
pub fn friedrichs_is_lie(a: &NcSeries) -> bool {
    if !a.constant_term().is_zero() {
        return false;
    }
    let n = a.trunc();
    let delta = coproduct(a);
    let mut primitive = TensorSeries::zero(n);
    for (w, c) in a.terms() {
        primitive.add_to_coeff((w.clone(), Word::empty()), c);
        primitive.add_to_coeff((Word::empty(), w.clone()), c);
    }
    delta == primitive
}

/// Dynkin verdict with the Friedrichs cross-check enabled: both criteria
/// are evaluated and must agree (they characterize the same subspace).
pub fn is_lie_element_checked(a: &NcSeries) -> bool {
    let dynkin = is_lie_element(a);
    let friedrichs = friedrichs_is_lie(a);
    assert_eq!(
        dynkin, friedrichs,
        "Dynkin and Friedrichs verdicts disagree; the algebra engine is broken"
    );
    dynkin
}

/// Group-like test: `Δ(s) = s⊗s`; equivalent to `log s` being a Lie element.
pub fn grouplike_check(s: &NcSeries) -> bool {
    if !s.constant_term().is_one() {
        return false;
    }
    let n = s.trunc();
    let delta = coproduct(s);
    let mut square = TensorSeries::zero(n);
    for (w1, c1) in s.terms() {
        for (w2, c2) in s.terms() {
            square.add_to_coeff((w1.clone(), w2.clone()), &(c1 * c2));
        }
    }
    delta == square
}
