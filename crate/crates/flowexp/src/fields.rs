//! Concrete vector fields with exact symbolic Lie brackets.
//!
//! Components live in the ring `Q[x1..xd][(1-x1)^{-1}]`: a multivariate
//! polynomial numerator over a power of the fixed base `1 - x1`. The ring is
//! closed under partial derivatives and products, hence under Lie brackets;
//! plain polynomial fields are the denominator-free case and the rational
//! counter-example family `(e1 or x2·e1, R(x1)·e2)` sits inside it. Elements
//! are kept in the canonical form where the numerator is not divisible by
//! the base, so structural equality is semantic equality.

use crate::hall::Bracket;
use crate::rat::{factorial, format_q, parse_q, qi, qpow, to_f64, Q};
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Sparse multivariate polynomial over the rationals.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MultiPoly {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, Q>,
}

impl MultiPoly {
    pub fn zero(nvars: usize) -> Self {
        MultiPoly {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: Q) -> Self {
        let mut p = Self::zero(nvars);
        if !c.is_zero() {
            p.terms.insert(vec![0; nvars], c);
        }
        p
    }

    /// The variable `x_i` (zero-based).
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut exp = vec![0u32; nvars];
        exp[i] = 1;
        let mut p = Self::zero(nvars);
        p.terms.insert(exp, qi(1));
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &Q)> {
        self.terms.iter()
    }

    pub fn add_term(&mut self, exp: Vec<u32>, c: &Q) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(exp.clone()).or_insert_with(Q::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&exp);
        }
    }

    pub fn add(&self, other: &MultiPoly) -> MultiPoly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), c);
        }
        out
    }

    pub fn scale(&self, c: &Q) -> MultiPoly {
        if c.is_zero() {
            return MultiPoly::zero(self.nvars);
        }
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= c;
        }
        out
    }

    pub fn mul(&self, other: &MultiPoly) -> MultiPoly {
        let mut out = MultiPoly::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let exp: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(exp, &(ca * cb));
            }
        }
        out
    }

    pub fn partial(&self, var: usize) -> MultiPoly {
        let mut out = MultiPoly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[var] == 0 {
                continue;
            }
            let mut exp = e.clone();
            exp[var] -= 1;
            out.add_term(exp, &(c * qi(e[var] as i64)));
        }
        out
    }

    pub fn eval(&self, p: &[Q]) -> Q {
        let mut acc = Q::zero();
        for (e, c) in &self.terms {
            let mut term = c.clone();
            for (i, &k) in e.iter().enumerate() {
                term *= qpow(&p[i], k as i64);
            }
            acc += term;
        }
        acc
    }

    pub fn eval_f64(&self, p: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (e, c) in &self.terms {
            let mut term = to_f64(c);
            for (i, &k) in e.iter().enumerate() {
                term *= p[i].powi(k as i32);
            }
            acc += term;
        }
        acc
    }

    /// Coefficient-wise absolute value.
    pub fn abs_coeffs(&self) -> MultiPoly {
        let mut out = MultiPoly::zero(self.nvars);
        for (e, c) in &self.terms {
            out.terms.insert(e.clone(), c.abs());
        }
        out
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    /// Degree in `x1` alone.
    fn x1_degree(&self) -> u32 {
        self.terms.keys().map(|e| e[0]).max().unwrap_or(0)
    }

    /// Exact quotient by `1 - x1`, if divisible.
    fn divide_by_base(&self) -> Option<MultiPoly> {
        if self.is_zero() {
            return Some(self.clone());
        }
        let mut rest = self.clone();
        let mut quo = MultiPoly::zero(self.nvars);
        while rest.x1_degree() >= 1 {
            let d = rest.x1_degree();
            // Collect the x1^d slice.
            let mut slice = MultiPoly::zero(self.nvars);
            for (e, c) in &rest.terms {
                if e[0] == d {
                    let mut exp = e.clone();
                    exp[0] = d - 1;
                    slice.add_term(exp, c);
                }
            }
            // (1 - x1) * (-slice·x1^{d-1}) has top term +slice·x1^d.
            let neg = slice.scale(&qi(-1));
            quo = quo.add(&neg);
            // rest -= (1 - x1) * neg = neg - x1*neg.
            let mut x1_neg = MultiPoly::zero(self.nvars);
            for (e, c) in &neg.terms {
                let mut exp = e.clone();
                exp[0] += 1;
                x1_neg.add_term(exp, c);
            }
            rest = rest.add(&neg.scale(&qi(-1))).add(&x1_neg);
        }
        if rest.is_zero() {
            Some(quo)
        } else {
            None
        }
    }
}

/// Errors from concrete field arithmetic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldError {
    DimensionMismatch(usize, usize),
    /// Evaluation hit the `x1 = 1` pole of the rational base.
    PoleHit,
    /// Operation needs a plain polynomial field.
    NotPolynomial,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldError::DimensionMismatch(a, b) => write!(f, "dimension mismatch: {a} vs {b}"),
            FieldError::PoleHit => write!(f, "evaluation at the x1 = 1 pole"),
            FieldError::NotPolynomial => write!(f, "operation requires a polynomial field"),
        }
    }
}

impl std::error::Error for FieldError {}

/// An element `num / (1-x1)^pow` of the component ring, in canonical form.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RatExpr {
    num: MultiPoly,
    pow: u32,
}

impl RatExpr {
    pub fn zero(nvars: usize) -> Self {
        RatExpr {
            num: MultiPoly::zero(nvars),
            pow: 0,
        }
    }

    pub fn poly(num: MultiPoly) -> Self {
        RatExpr { num, pow: 0 }
    }

    pub fn rational(num: MultiPoly, pow: u32) -> Self {
        RatExpr { num, pow }.normalized()
    }

    pub fn num(&self) -> &MultiPoly {
        &self.num
    }

    pub fn den_pow(&self) -> u32 {
        self.pow
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    fn base(nvars: usize) -> MultiPoly {
        let mut p = MultiPoly::constant(nvars, qi(1));
        let mut e = vec![0u32; nvars];
        e[0] = 1;
        p.add_term(e, &qi(-1));
        p
    }

    /// Rewrite the numerator relative to a higher denominator power.
    fn lift(&self, pow: u32) -> MultiPoly {
        let mut num = self.num.clone();
        let base = Self::base(self.num.nvars());
        for _ in self.pow..pow {
            num = num.mul(&base);
        }
        num
    }

    pub fn add(&self, other: &RatExpr) -> RatExpr {
        let pow = self.pow.max(other.pow);
        RatExpr {
            num: self.lift(pow).add(&other.lift(pow)),
            pow,
        }
        .normalized()
    }

    pub fn mul(&self, other: &RatExpr) -> RatExpr {
        RatExpr {
            num: self.num.mul(&other.num),
            pow: self.pow + other.pow,
        }
        .normalized()
    }

    pub fn scale(&self, c: &Q) -> RatExpr {
        RatExpr {
            num: self.num.scale(c),
            pow: self.pow,
        }
        .normalized()
    }

    /// `∂/∂x_var`, staying in the ring.
    pub fn partial(&self, var: usize) -> RatExpr {
        // d/dx1 [num (1-x1)^{-k}] = num' (1-x1)^{-k} + k num (1-x1)^{-(k+1)}.
        let deriv = RatExpr {
            num: self.num.partial(var),
            pow: self.pow,
        };
        if var == 0 && self.pow > 0 {
            let extra = self.num.scale(&qi(self.pow as i64));
            RatExpr {
                num: deriv.lift(self.pow + 1).add(&extra),
                pow: self.pow + 1,
            }
            .normalized()
        } else {
            deriv.normalized()
        }
    }

    fn normalized(mut self) -> RatExpr {
        if self.num.is_zero() {
            self.pow = 0;
            return self;
        }
        while self.pow > 0 {
            match self.num.divide_by_base() {
                Some(q) => {
                    self.num = q;
                    self.pow -= 1;
                }
                None => break,
            }
        }
        self
    }

    pub fn eval(&self, p: &[Q]) -> Result<Q, FieldError> {
        let denom_base = qi(1) - &p[0];
        if self.pow > 0 && denom_base.is_zero() {
            return Err(FieldError::PoleHit);
        }
        Ok(self.num.eval(p) / qpow(&denom_base, self.pow as i64))
    }

    pub fn eval_f64(&self, p: &[f64]) -> f64 {
        let denom_base = 1.0 - p[0];
        self.num.eval_f64(p) / denom_base.powi(self.pow as i32)
    }
}

/// A vector field on `K^d` with components in the rational ring.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct VectorField {
    comps: Vec<RatExpr>,
}

impl VectorField {
    pub fn new(comps: Vec<RatExpr>) -> Self {
        assert!(!comps.is_empty());
        VectorField { comps }
    }

    pub fn zero(dim: usize) -> Self {
        VectorField {
            comps: (0..dim).map(|_| RatExpr::zero(dim)).collect(),
        }
    }

    /// Polynomial field from multivariate components.
    pub fn from_polys(comps: Vec<MultiPoly>) -> Self {
        VectorField {
            comps: comps.into_iter().map(RatExpr::poly).collect(),
        }
    }

    /// Constant unit field `e_axis` (zero-based axis).
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut f = VectorField::zero(dim);
        f.comps[axis] = RatExpr::poly(MultiPoly::constant(dim, qi(1)));
        f
    }

    /// Linear field `x ↦ A x`.
    pub fn linear(a: &[Vec<Q>]) -> Self {
        let dim = a.len();
        let comps = a
            .iter()
            .map(|row| {
                let mut p = MultiPoly::zero(dim);
                for (j, c) in row.iter().enumerate() {
                    p = p.add(&MultiPoly::var(dim, j).scale(c));
                }
                RatExpr::poly(p)
            })
            .collect();
        VectorField { comps }
    }

    /// Replace one component (builder style).
    pub fn with_component(mut self, axis: usize, comp: RatExpr) -> Self {
        self.comps[axis] = comp;
        self
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn comps(&self) -> &[RatExpr] {
        &self.comps
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|c| c.is_zero())
    }

    pub fn is_polynomial(&self) -> bool {
        self.comps.iter().all(|c| c.pow == 0)
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField, FieldError> {
        self.check_dim(other)?;
        Ok(VectorField {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.add(b))
                .collect(),
        })
    }

    pub fn scale(&self, c: &Q) -> VectorField {
        VectorField {
            comps: self.comps.iter().map(|x| x.scale(c)).collect(),
        }
    }

    fn check_dim(&self, other: &VectorField) -> Result<(), FieldError> {
        if self.dim() != other.dim() {
            Err(FieldError::DimensionMismatch(self.dim(), other.dim()))
        } else {
            Ok(())
        }
    }

    /// Directional derivative `(self·∇) g`, exact.
    pub fn apply_to(&self, g: &VectorField) -> Result<VectorField, FieldError> {
        self.check_dim(g)?;
        let comps = g
            .comps
            .iter()
            .map(|gi| {
                let mut acc = RatExpr::zero(self.dim());
                for (j, fj) in self.comps.iter().enumerate() {
                    acc = acc.add(&fj.mul(&gi.partial(j)));
                }
                acc
            })
            .collect();
        Ok(VectorField { comps })
    }

    /// Lie bracket `[f,g] = (f·∇)g - (g·∇)f`, exact in the ring.
    pub fn lie_bracket(&self, other: &VectorField) -> Result<VectorField, FieldError> {
        let fg = self.apply_to(other)?;
        let gf = other.apply_to(self)?;
        Ok(VectorField {
            comps: fg
                .comps
                .iter()
                .zip(&gf.comps)
                .map(|(a, b)| a.add(&b.scale(&qi(-1))))
                .collect(),
        })
    }

    /// `ad^k_{self}(g)`.
    pub fn ad_pow(&self, k: usize, g: &VectorField) -> Result<VectorField, FieldError> {
        let mut out = g.clone();
        for _ in 0..k {
            out = self.lie_bracket(&out)?;
        }
        Ok(out)
    }

    pub fn eval(&self, p: &[Q]) -> Result<Vec<Q>, FieldError> {
        self.comps.iter().map(|c| c.eval(p)).collect()
    }

    pub fn eval_f64(&self, p: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|c| c.eval_f64(p)).collect()
    }

    /// Exact Jacobian: entry `(i, j)` is `∂f_i/∂x_j`.
    pub fn jacobian(&self) -> Vec<Vec<RatExpr>> {
        self.comps
            .iter()
            .map(|fi| (0..self.dim()).map(|j| fi.partial(j)).collect())
            .collect()
    }

    /// Max-norm of the value at a point (numeric).
    pub fn sup_at_f64(&self, p: &[f64]) -> f64 {
        self.eval_f64(p)
            .into_iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Substitute concrete fields for the leaves of a formal bracket.
pub fn substitute_bracket(
    b: &Bracket,
    generators: &[VectorField],
) -> Result<VectorField, FieldError> {
    match b {
        Bracket::Leaf(i) => Ok(generators[*i as usize].clone()),
        Bracket::Node(l, r) => {
            let fl = substitute_bracket(l, generators)?;
            let fr = substitute_bracket(r, generators)?;
            fl.lie_bracket(&fr)
        }
    }
}

/// Certified upper bounds for the `C^k` and analytic norms of a polynomial
/// field on the ball of radius `δ`: each coefficient is replaced by its
/// absolute value and suprema are taken at the all-`δ` corner.
pub fn majorant_norms(f: &VectorField, k: usize, delta: &Q, r: &Q) -> Result<(Q, Q), FieldError> {
    if !f.is_polynomial() {
        return Err(FieldError::NotPolynomial);
    }
    let dim = f.dim();
    let corner: Vec<Q> = (0..dim).map(|_| delta.clone()).collect();
    let mut ck = Q::zero();
    let mut analytic = Q::zero();
    for comp in f.comps() {
        let maj = comp.num.abs_coeffs();
        let top = maj.total_degree();
        // Enumerate multi-indexes with |α| ≤ top; higher partials vanish.
        let mut alphas: Vec<Vec<u32>> = vec![vec![]];
        for _ in 0..dim {
            let mut next = Vec::new();
            for a in &alphas {
                let used: u32 = a.iter().sum();
                for v in 0..=top.saturating_sub(used) {
                    let mut b = a.clone();
                    b.push(v);
                    next.push(b);
                }
            }
            alphas = next;
        }
        for alpha in &alphas {
            let total: u32 = alpha.iter().sum();
            let mut d = maj.clone();
            for (var, &count) in alpha.iter().enumerate() {
                for _ in 0..count {
                    d = d.partial(var);
                }
            }
            if d.is_zero() {
                continue;
            }
            let sup = d.eval(&corner);
            let alpha_fact: Q = alpha
                .iter()
                .map(|&a| factorial(a as usize))
                .fold(Q::one(), |acc, x| acc * x);
            if total as usize <= k {
                ck += &sup / &alpha_fact;
            }
            analytic += qpow(r, total as i64) * &sup / &alpha_fact;
        }
    }
    Ok((ck, analytic))
}

/// JSON description of a field: dimension and per-component sparse monomials
/// with the denominator power.
pub fn field_to_json(f: &VectorField) -> serde_json::Value {
    let comps: Vec<serde_json::Value> = f
        .comps()
        .iter()
        .map(|c| {
            serde_json::json!({
                "den_pow": c.den_pow(),
                "monomials": c.num().terms().map(|(e, q)| {
                    serde_json::json!({"exp": e, "coeff": format_q(q)})
                }).collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::json!({ "dim": f.dim(), "components": comps })
}

pub fn field_from_json(v: &serde_json::Value) -> Option<VectorField> {
    let dim = v.get("dim")?.as_u64()? as usize;
    let comps = v
        .get("components")?
        .as_array()?
        .iter()
        .map(|c| {
            let pow = c.get("den_pow")?.as_u64()? as u32;
            let mut num = MultiPoly::zero(dim);
            for m in c.get("monomials")?.as_array()? {
                let exp: Vec<u32> = m
                    .get("exp")?
                    .as_array()?
                    .iter()
                    .map(|e| e.as_u64().map(|x| x as u32))
                    .collect::<Option<_>>()?;
                num.add_term(exp, &parse_q(m.get("coeff")?.as_str()?)?);
            }
            Some(RatExpr::rational(num, pow))
        })
        .collect::<Option<Vec<_>>>()?;
    Some(VectorField::new(comps))
}
