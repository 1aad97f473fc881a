//! Generalized Hall bases of the free Lie algebra.
//!
//! Brackets are binary trees over letters. A Hall set is built by induction
//! on the length under a length-compatible total order; the word expansion of
//! each element and exact linear algebra give the decomposition of any Lie
//! polynomial onto the basis, one homogeneous degree at a time.

use crate::freealg::{word_enumerate, AlgebraError, NcSeries, Word};
#[cfg(test)]
use crate::rat::qi;
use crate::rat::Q;
use num_traits::{Signed, Zero};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

/// A formal bracket: a leaf letter or an ordered pair of brackets.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Bracket {
    Leaf(u8),
    Node(Rc<Bracket>, Rc<Bracket>),
}

#[allow(clippy::len_without_is_empty)]
impl Bracket {
    pub fn leaf(i: u8) -> Self {
        Bracket::Leaf(i)
    }

    pub fn node(left: Bracket, right: Bracket) -> Self {
        Bracket::Node(Rc::new(left), Rc::new(right))
    }

    /// `ad_a^k(b) = [a,[a,...[a,b]]]` with `k` copies of `a`.
    pub fn ad(a: &Bracket, k: usize, b: &Bracket) -> Bracket {
        let mut out = b.clone();
        for _ in 0..k {
            out = Bracket::node(a.clone(), out);
        }
        out
    }

    /// Right bracketing `[[..[b,a],a..],a]` with `k` copies of `a`.
    pub fn ad_right(b: &Bracket, k: usize, a: &Bracket) -> Bracket {
        let mut out = b.clone();
        for _ in 0..k {
            out = Bracket::node(out, a.clone());
        }
        out
    }

    /// Number of leaves.
    pub fn len(&self) -> usize {
        match self {
            Bracket::Leaf(_) => 1,
            Bracket::Node(l, r) => l.len() + r.len(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Bracket::Leaf(_))
    }

    /// Left factor of a non-leaf bracket.
    pub fn left(&self) -> Option<&Bracket> {
        match self {
            Bracket::Leaf(_) => None,
            Bracket::Node(l, _) => Some(l),
        }
    }

    /// Right factor of a non-leaf bracket.
    pub fn right(&self) -> Option<&Bracket> {
        match self {
            Bracket::Leaf(_) => None,
            Bracket::Node(_, r) => Some(r),
        }
    }

    /// Occurrences of the given letter among the leaves.
    pub fn count(&self, letter: u8) -> usize {
        match self {
            Bracket::Leaf(i) => usize::from(*i == letter),
            Bracket::Node(l, r) => l.count(letter) + r.count(letter),
        }
    }

    /// Occurrences of letters other than 0 (written `n(b)` for drift alphabets).
    pub fn nonzero_count(&self) -> usize {
        match self {
            Bracket::Leaf(i) => usize::from(*i != 0),
            Bracket::Node(l, r) => l.nonzero_count() + r.nonzero_count(),
        }
    }

    /// Multidegree over an alphabet of the given size.
    pub fn multidegree(&self, alphabet: usize) -> Vec<usize> {
        let mut v = vec![0usize; alphabet];
        self.fill_multidegree(&mut v);
        v
    }

    fn fill_multidegree(&self, v: &mut [usize]) {
        match self {
            Bracket::Leaf(i) => v[*i as usize] += 1,
            Bracket::Node(l, r) => {
                l.fill_multidegree(v);
                r.fill_multidegree(v);
            }
        }
    }

    /// Word expansion via `[a,b] = ab - ba`, as a series truncated at `n`.
    pub fn expand_to_words(&self, n: usize) -> NcSeries {
        match self {
            Bracket::Leaf(i) => NcSeries::letter(*i, n),
            Bracket::Node(l, r) => {
                let pl = l.expand_to_words(n);
                let pr = r.expand_to_words(n);
                pl.bracket(&pr).expect("matching truncation")
            }
        }
    }

    /// Nested-array text form, e.g. `[0,[0,1]]`.
    pub fn to_nested(&self) -> String {
        match self {
            Bracket::Leaf(i) => i.to_string(),
            Bracket::Node(l, r) => format!("[{},{}]", l.to_nested(), r.to_nested()),
        }
    }
}

impl fmt::Display for Bracket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bracket::Leaf(i) => write!(f, "X{i}"),
            Bracket::Node(l, r) => write!(f, "[{l},{r}]"),
        }
    }
}

/// Length-compatible total order: length first, then leaves by letter, then
/// recursively on `(left, right)`.
pub fn hall_order(a: &Bracket, b: &Bracket) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| match (a, b) {
        (Bracket::Leaf(x), Bracket::Leaf(y)) => x.cmp(y),
        (Bracket::Leaf(_), Bracket::Node(..)) => Ordering::Less,
        (Bracket::Node(..), Bracket::Leaf(_)) => Ordering::Greater,
        (Bracket::Node(al, ar), Bracket::Node(bl, br)) => {
            hall_order(al, bl).then_with(|| hall_order(ar, br))
        }
    })
}

/// Tie-break comparator used inside each length class.
pub type TieBreak = Rc<dyn Fn(&Bracket, &Bracket) -> Ordering>;

/// Order policy for [`build_hall_basis`].
#[derive(Clone)]
pub enum OrderPolicy {
    /// Length, ties broken by recursive comparison of factors.
    LengthThenLex,
    /// Length-compatible order with a custom tie-break inside each length.
    Custom(TieBreak),
}

impl fmt::Debug for OrderPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderPolicy::LengthThenLex => write!(f, "LengthThenLex"),
            OrderPolicy::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl OrderPolicy {
    fn cmp(&self, a: &Bracket, b: &Bracket) -> Ordering {
        match self {
            OrderPolicy::LengthThenLex => hall_order(a, b),
            OrderPolicy::Custom(f) => a.len().cmp(&b.len()).then_with(|| f(a, b)),
        }
    }
}

/// An ordered generalized Hall set with a length-compatible order.
pub struct HallBasis {
    alphabet: usize,
    max_length: usize,
    elements: Vec<Bracket>,
    rank: BTreeMap<String, usize>,
    policy: OrderPolicy,
}

impl HallBasis {
    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    /// All elements, ascending in the basis order.
    pub fn elements(&self) -> &[Bracket] {
        &self.elements
    }

    pub fn elements_of_length(&self, n: usize) -> impl Iterator<Item = &Bracket> {
        self.elements.iter().filter(move |b| b.len() == n)
    }

    pub fn contains(&self, b: &Bracket) -> bool {
        self.rank.contains_key(&b.to_nested())
    }

    /// Position in the basis order.
    pub fn rank_of(&self, b: &Bracket) -> Option<usize> {
        self.rank.get(&b.to_nested()).copied()
    }

    pub fn cmp(&self, a: &Bracket, b: &Bracket) -> Ordering {
        self.policy.cmp(a, b)
    }

    /// The three Hall-set conditions for `b` relative to this basis.
    pub fn hall_conditions_hold(&self, b: &Bracket) -> bool {
        match b {
            Bracket::Leaf(i) => (*i as usize) < self.alphabet,
            Bracket::Node(l, r) => {
                if !self.contains(l) || !self.contains(r) {
                    return false;
                }
                if self.policy.cmp(l, r) != Ordering::Less {
                    return false;
                }
                let second = match r.as_ref() {
                    Bracket::Leaf(_) => true,
                    Bracket::Node(rl, _) => self.policy.cmp(rl, l) != Ordering::Greater,
                };
                second && self.policy.cmp(l, b) == Ordering::Less
            }
        }
    }

    /// JSON export: index, nested-array form, length, per-letter counts, rank.
    pub fn to_json(&self) -> serde_json::Value {
        let items: Vec<serde_json::Value> = self
            .elements
            .iter()
            .enumerate()
            .map(|(i, b)| {
                serde_json::json!({
                    "index": i,
                    "bracket": b.to_nested(),
                    "length": b.len(),
                    "counts": b.multidegree(self.alphabet),
                    "rank": i,
                })
            })
            .collect();
        serde_json::json!({
            "alphabet_size": self.alphabet,
            "max_length": self.max_length,
            "elements": items,
        })
    }
}

/// Complete Hall set up to `max_length` under a length-compatible order.
///
/// The induction on length adds `[b1, b2]` whenever `b1 < b2`, both already
/// sit in the basis, and either `b2` is a letter or `λ(b2) ≤ b1`.
pub fn build_hall_basis(alphabet_size: usize, max_length: usize, policy: OrderPolicy) -> HallBasis {
    assert!(alphabet_size >= 1 && max_length >= 1);
    let mut elements: Vec<Bracket> = (0..alphabet_size as u8).map(Bracket::leaf).collect();
    elements.sort_by(|a, b| policy.cmp(a, b));
    for n in 2..=max_length {
        let mut new_ones = Vec::new();
        for b2 in elements.iter().filter(|b| b.len() < n) {
            let need = n - b2.len();
            for b1 in elements.iter().filter(|b| b.len() == need) {
                if policy.cmp(b1, b2) != Ordering::Less {
                    continue;
                }
                let ok = match b2 {
                    Bracket::Leaf(_) => true,
                    Bracket::Node(l, _) => policy.cmp(l, b1) != Ordering::Greater,
                };
                if ok {
                    new_ones.push(Bracket::node(b1.clone(), b2.clone()));
                }
            }
        }
        elements.extend(new_ones);
    }
    elements.sort_by(|a, b| policy.cmp(a, b));
    let rank = elements
        .iter()
        .enumerate()
        .map(|(i, b)| (b.to_nested(), i))
        .collect();
    HallBasis {
        alphabet: alphabet_size,
        max_length,
        elements,
        rank,
        policy,
    }
}

/// Möbius function, for the Witt dimension formula.
pub fn moebius(n: usize) -> i64 {
    let mut n = n;
    let mut count = 0;
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            n /= p;
            if n.is_multiple_of(p) {
                return 0;
            }
            count += 1;
        }
        p += 1;
    }
    if n > 1 {
        count += 1;
    }
    if count % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Dimension of the degree-`n` part of the free Lie algebra on `q` letters:
/// `(1/n) Σ_{d|n} μ(d) q^{n/d}`.
pub fn witt_dimension(q: usize, n: usize) -> usize {
    let mut total: i64 = 0;
    for d in 1..=n {
        if n.is_multiple_of(d) {
            total += moebius(d) * (q as i64).pow((n / d) as u32);
        }
    }
    (total / n as i64) as usize
}

/// Exact decomposition of a Lie polynomial onto the basis, per degree.
///
/// Solves `Σ c_b eval(b) = a` by Gaussian elimination over the rationals, one
/// homogeneous degree at a time. Fails when `a` is not in the span (not a Lie
/// element) or a degree exceeds the basis length. Keys are basis ranks.
pub fn hall_decompose(a: &NcSeries, basis: &HallBasis) -> Result<BTreeMap<usize, Q>, AlgebraError> {
    let mut out = BTreeMap::new();
    let top = a.max_present_degree();
    if top > basis.max_length {
        return Err(AlgebraError::DegreeOutOfRange(top, basis.max_length));
    }
    if !a.constant_term().is_zero() {
        return Err(AlgebraError::NotALieElement);
    }
    for n in 1..=top {
        let part = a.homogeneous_part(n);
        if part.is_zero() {
            continue;
        }
        let members: Vec<usize> = basis
            .elements
            .iter()
            .enumerate()
            .filter(|(_, b)| b.len() == n)
            .map(|(i, _)| i)
            .collect();
        let coeffs = decompose_homogeneous(&part, basis, &members, n)?;
        for (idx, c) in members.iter().zip(coeffs) {
            if !c.is_zero() {
                out.insert(*idx, c);
            }
        }
    }
    Ok(out)
}

fn decompose_homogeneous(
    part: &NcSeries,
    basis: &HallBasis,
    members: &[usize],
    degree: usize,
) -> Result<Vec<Q>, AlgebraError> {
    // Restrict the word space to the multidegrees present in the target; this
    // keeps the systems small when only a few letter counts occur.
    let mut degrees_present: Vec<Vec<usize>> = Vec::new();
    for (w, _) in part.terms() {
        let mut v = vec![0usize; basis.alphabet];
        for &c in &w.0 {
            v[c as usize] += 1;
        }
        if !degrees_present.contains(&v) {
            degrees_present.push(v);
        }
    }
    let members: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&i| degrees_present.contains(&basis.elements[i].multidegree(basis.alphabet)))
        .collect();
    let words: Vec<Word> = word_enumerate(basis.alphabet, degree)
        .into_iter()
        .filter(|w| {
            let mut v = vec![0usize; basis.alphabet];
            for &c in &w.0 {
                v[c as usize] += 1;
            }
            degrees_present.contains(&v)
        })
        .collect();
    let word_index: BTreeMap<&Word, usize> =
        words.iter().enumerate().map(|(i, w)| (w, i)).collect();
    let rows = words.len();
    let cols = members.len();
    let mut matrix = vec![vec![Q::zero(); cols + 1]; rows];
    for (j, &idx) in members.iter().enumerate() {
        let expansion = basis.elements[idx].expand_to_words(degree);
        for (w, c) in expansion.terms() {
            matrix[word_index[w]][j] = c.clone();
        }
    }
    for (w, c) in part.terms() {
        matrix[word_index[w]][cols] = c.clone();
    }
    let sol = solve_exact(matrix, cols)?;
    // Re-inflate to the full member list order expected by the caller.
    let full: Vec<usize> = basis
        .elements
        .iter()
        .enumerate()
        .filter(|(_, b)| b.len() == degree)
        .map(|(i, _)| i)
        .collect();
    let mut out = vec![Q::zero(); full.len()];
    for (pos, &idx) in members.iter().enumerate() {
        let at = full
            .iter()
            .position(|&f| f == idx)
            .expect("member of degree");
        out[at] = sol[pos].clone();
    }
    Ok(out)
}

/// Gaussian elimination with exact pivots; `cols` unknowns, last column RHS.
fn solve_exact(mut m: Vec<Vec<Q>>, cols: usize) -> Result<Vec<Q>, AlgebraError> {
    let rows = m.len();
    let mut pivot_row_of_col = vec![usize::MAX; cols];
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].clone().recip();
        for v in m[r][c..].iter_mut() {
            *v *= &inv;
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let factor = m[i][c].clone();
                for j in c..=cols {
                    let sub = &m[r][j] * &factor;
                    m[i][j] -= sub;
                }
            }
        }
        pivot_row_of_col[c] = r;
        r += 1;
        if r == rows {
            break;
        }
    }
    for row in m.iter().skip(r) {
        if !row[cols].is_zero() {
            return Err(AlgebraError::NotALieElement);
        }
    }
    let mut sol = vec![Q::zero(); cols];
    for c in 0..cols {
        if pivot_row_of_col[c] != usize::MAX {
            sol[c] = m[pivot_row_of_col[c]][cols].clone();
        }
    }
    Ok(sol)
}

/// Exact rank of the word expansions of degree-`n` basis elements.
pub fn expansion_rank(basis: &HallBasis, n: usize) -> usize {
    let words = word_enumerate(basis.alphabet, n);
    let word_index: BTreeMap<&Word, usize> =
        words.iter().enumerate().map(|(i, w)| (w, i)).collect();
    let members: Vec<&Bracket> = basis.elements_of_length(n).collect();
    let mut m = vec![vec![Q::zero(); members.len()]; words.len()];
    for (j, b) in members.iter().enumerate() {
        for (w, c) in b.expand_to_words(n).terms() {
            m[word_index[w]][j] = c.clone();
        }
    }
    let rows = m.len();
    let cols = members.len();
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(rank, p);
        let inv = m[rank][c].clone().recip();
        for v in m[rank].iter_mut() {
            *v *= &inv;
        }
        for i in 0..rows {
            if i != rank && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in 0..cols {
                    let sub = &m[rank][j] * &f;
                    m[i][j] -= sub;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Structural factorization `b = ad^m_{X0} ād^{m̄}_{X0}(b*)` where `b*` is a
/// leaf or a bracket with both factors different from `X0`.
pub fn malabar_factorize(
    b: &Bracket,
    basis: &HallBasis,
) -> Result<(usize, usize, Bracket), AlgebraError> {
    if !basis.contains(b) {
        return Err(AlgebraError::NotALieElement);
    }
    let x0 = Bracket::leaf(0);
    let mut m = 0usize;
    let mut cur = b.clone();
    while let Bracket::Node(l, r) = &cur {
        if l.as_ref() == &x0 {
            m += 1;
            cur = r.as_ref().clone();
        } else {
            break;
        }
    }
    let mut mbar = 0usize;
    while let Bracket::Node(l, r) = &cur {
        if r.as_ref() == &x0 {
            mbar += 1;
            cur = l.as_ref().clone();
        } else {
            break;
        }
    }
    Ok((m, mbar, cur))
}

/// Structure constants `[a, b] = Σ γ^c_{a,b} c` over the basis, as pairs of
/// basis rank and coefficient.
pub fn structure_constants(
    basis: &HallBasis,
    a: &Bracket,
    b: &Bracket,
) -> Result<Vec<(usize, Q)>, AlgebraError> {
    let n = a.len() + b.len();
    if n > basis.max_length() {
        return Err(AlgebraError::DegreeOutOfRange(n, basis.max_length()));
    }
    let bracket = a.expand_to_words(n).bracket(&b.expand_to_words(n))?;
    let table = hall_decompose(&bracket, basis)?;
    Ok(table.into_iter().collect())
}

/// Worst `Σ_c |γ^c_{b1,b2}|` per total length `|b1|+|b2|`; reported, never
/// asserted (the growth question is open).
pub fn structure_growth_report(basis: &HallBasis) -> Vec<(usize, Q)> {
    let mut per_length: BTreeMap<usize, Q> = BTreeMap::new();
    let elems = basis.elements();
    for a in elems {
        for b in elems {
            let n = a.len() + b.len();
            if n > basis.max_length() {
                continue;
            }
            if let Ok(gamma) = structure_constants(basis, a, b) {
                let total: Q = gamma
                    .iter()
                    .map(|(_, g)| g.abs())
                    .fold(Q::zero(), |s, g| s + g);
                let entry = per_length.entry(n).or_insert_with(Q::zero);
                if *entry < total {
                    *entry = total;
                }
            }
        }
    }
    per_length.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freealg::NcSeries;
    use crate::rng::SplitMix64;

    fn basis2(n: usize) -> HallBasis {
        build_hall_basis(2, n, OrderPolicy::LengthThenLex)
    }

    #[test]
    fn classic_two_letter_basis_through_length_four() {
        let basis = basis2(4);
        let x0 = Bracket::leaf(0);
        let x1 = Bracket::leaf(1);
        let b01 = Bracket::node(x0.clone(), x1.clone());
        let expected = vec![
            x0.clone(),
            x1.clone(),
            b01.clone(),
            Bracket::ad(&x0, 2, &x1),
            Bracket::node(x1.clone(), b01.clone()),
            Bracket::ad(&x0, 3, &x1),
            Bracket::node(x1.clone(), Bracket::ad(&x0, 2, &x1)),
            Bracket::ad(&x1, 2, &b01),
        ];
        assert_eq!(basis.elements(), expected.as_slice());
        let counts: Vec<usize> = (1..=4)
            .map(|n| basis.elements_of_length(n).count())
            .collect();
        assert_eq!(counts, vec![2, 1, 2, 3]);
    }

    #[test]
    fn single_letter_basis() {
        let basis = build_hall_basis(1, 6, OrderPolicy::LengthThenLex);
        assert_eq!(basis.elements().len(), 1);
        assert_eq!(basis.elements()[0], Bracket::leaf(0));
    }

    #[test]
    fn hall_conditions_audit() {
        let basis = basis2(6);
        for b in basis.elements() {
            assert!(basis.hall_conditions_hold(b), "condition failed for {b}");
        }
        // The Jacobi-excluded element from the worked example is not in the basis.
        let x0 = Bracket::leaf(0);
        let x1 = Bracket::leaf(1);
        let excluded = Bracket::node(
            x0.clone(),
            Bracket::node(x1.clone(), Bracket::node(x0.clone(), x1.clone())),
        );
        assert!(!basis.contains(&excluded));
        assert!(!basis.hall_conditions_hold(&excluded));
    }

    #[test]
    fn expansions() {
        let n = 4;
        let x0 = Bracket::leaf(0);
        let x1 = Bracket::leaf(1);
        let b = Bracket::node(x0.clone(), x1.clone());
        let e = b.expand_to_words(n);
        assert_eq!(e.coeff(&Word(vec![0, 1])), qi(1));
        assert_eq!(e.coeff(&Word(vec![1, 0])), qi(-1));
        assert!(Bracket::node(x0.clone(), x0.clone())
            .expand_to_words(n)
            .is_zero());
        let ad2 = Bracket::ad(&x0, 2, &x1).expand_to_words(n);
        assert_eq!(ad2.coeff(&Word(vec![0, 0, 1])), qi(1));
        assert_eq!(ad2.coeff(&Word(vec![0, 1, 0])), qi(-2));
        assert_eq!(ad2.coeff(&Word(vec![1, 0, 0])), qi(1));
        assert_eq!(ad2.num_terms(), 3);
    }

    #[test]
    fn decompose_jacobi_example() {
        // eval([X0,[X1,[X0,X1]]]) = [X1, ad²_{X0}(X1)] in the free Lie algebra.
        let basis = basis2(4);
        let x0 = Bracket::leaf(0);
        let x1 = Bracket::leaf(1);
        let lhs = Bracket::node(
            x0.clone(),
            Bracket::node(x1.clone(), Bracket::node(x0.clone(), x1.clone())),
        );
        let table = hall_decompose(&lhs.expand_to_words(4), &basis).unwrap();
        let target = Bracket::node(x1.clone(), Bracket::ad(&x0, 2, &x1));
        let target_idx = basis.rank_of(&target).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table[&target_idx], qi(1));
    }

    #[test]
    fn decompose_basis_elements_to_indicators() {
        let basis = basis2(6);
        for (i, b) in basis.elements().iter().enumerate() {
            let table = hall_decompose(&b.expand_to_words(b.len()), &basis).unwrap();
            assert_eq!(table.len(), 1, "expansion of {b} not an indicator");
            assert_eq!(table[&i], qi(1));
        }
    }

    #[test]
    fn degree_four_span_dimension() {
        let basis = basis2(4);
        assert_eq!(expansion_rank(&basis, 4), 3);
    }

    #[test]
    fn witt_dimensions_match_rank() {
        let basis = basis2(6);
        for n in 1..=6 {
            let count = basis.elements_of_length(n).count();
            let witt = witt_dimension(2, n);
            let rank = expansion_rank(&basis, n);
            assert_eq!(count, witt, "basis count at degree {n}");
            assert_eq!(rank, witt, "rank at degree {n}");
        }
    }

    #[test]
    fn jacobi_consistency_random_trees() {
        let basis = basis2(5);
        let mut rng = SplitMix64::new(99);
        for _ in 0..30 {
            let deg = 2 + rng.below(4) as usize;
            let tree = random_tree(&mut rng, deg);
            let expanded = tree.expand_to_words(deg);
            let table = hall_decompose(&expanded, &basis).unwrap();
            let mut recombined = NcSeries::zero(deg);
            for (idx, c) in &table {
                recombined = recombined
                    .add(&basis.elements()[*idx].expand_to_words(deg).scale(c))
                    .unwrap();
            }
            assert_eq!(recombined, expanded);
        }
    }

    fn random_tree(rng: &mut SplitMix64, deg: usize) -> Bracket {
        if deg == 1 {
            return Bracket::leaf(rng.below(2) as u8);
        }
        let l = 1 + rng.below((deg - 1) as u64) as usize;
        Bracket::node(random_tree(rng, l), random_tree(rng, deg - l))
    }

    #[test]
    fn decompose_rejects_non_lie() {
        let basis = basis2(4);
        let x0 = NcSeries::letter(0, 2);
        let x1 = NcSeries::letter(1, 2);
        let product = x0.mul(&x1).unwrap();
        assert!(hall_decompose(&product, &basis).is_err());
    }

    #[test]
    fn malabar_examples() {
        let basis = basis2(4);
        let x0 = Bracket::leaf(0);
        let x1 = Bracket::leaf(1);
        let ad2 = Bracket::ad(&x0, 2, &x1);
        assert_eq!(malabar_factorize(&ad2, &basis).unwrap(), (2, 0, x1.clone()));
        assert_eq!(malabar_factorize(&x1, &basis).unwrap(), (0, 0, x1.clone()));
        assert!(malabar_factorize(&Bracket::node(x1.clone(), x0.clone()), &basis).is_err());
    }

    #[test]
    fn malabar_x1_minimal_case_analysis() {
        // With X1 minimal, every n(b)=1 basis element except X1 has m̄ ≥ 1.
        let policy = OrderPolicy::Custom(Rc::new(|a: &Bracket, b: &Bracket| match (a, b) {
            (Bracket::Leaf(x), Bracket::Leaf(y)) => y.cmp(x),
            _ => hall_order(a, b),
        }));
        let basis = build_hall_basis(2, 6, policy);
        for b in basis.elements() {
            if b.nonzero_count() == 1 && *b != Bracket::leaf(1) {
                let (_, mbar, bstar) = malabar_factorize(b, &basis).unwrap();
                assert!(mbar >= 1, "expected m̄ ≥ 1 for {b}");
                assert_eq!(bstar, Bracket::leaf(1));
            }
        }
    }

    #[test]
    fn structure_constants_antisymmetry_sample() {
        let basis = basis2(5);
        let a = &basis.elements()[2];
        let b = &basis.elements()[3];
        let ab = structure_constants(&basis, a, b).unwrap();
        let ba = structure_constants(&basis, b, a).unwrap();
        let flipped: Vec<(usize, Q)> = ba.into_iter().map(|(i, g)| (i, -g)).collect();
        assert_eq!(ab, flipped);
    }
}
