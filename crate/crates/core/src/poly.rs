//! Multivariate polynomials and polynomial vector fields with exact
//! brackets.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};

/// Real polynomial in `nvars` variables, stored as exponent vector -> coefficient.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Term {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::monomial(nvars, vec![0; nvars], c)
    }

    /// The coordinate function `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Self::monomial(nvars, e, 1.0)
    }

    pub fn monomial(nvars: usize, exponents: Vec<u32>, coeff: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(exponents, coeff);
        p
    }

    pub fn from_terms(nvars: usize, terms: &[Term]) -> Result<Self> {
        let mut p = Self::zero(nvars);
        for t in terms {
            check_dim(nvars, t.exponents.len())?;
            check_finite(&[t.coeff], "coefficient")?;
            p.add_term(t.exponents.clone(), t.coeff);
        }
        Ok(p)
    }

    pub fn terms(&self) -> Vec<Term> {
        self.terms
            .iter()
            .map(|(e, &c)| Term {
                exponents: e.clone(),
                coeff: c,
            })
            .collect()
    }

    fn add_term(&mut self, exponents: Vec<u32>, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let entry = self.terms.entry(exponents).or_insert(0.0);
        *entry += coeff;
        if *entry == 0.0 {
            self.terms.retain(|_, c| *c != 0.0);
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                c * e
                    .iter()
                    .zip(x)
                    .map(|(&k, &xi)| xi.powi(k as i32))
                    .product::<f64>()
            })
            .sum()
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (e, &c) in &other.terms {
            out.add_term(e.clone(), c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Self::zero(self.nvars);
        for (e, &c) in &self.terms {
            out.add_term(e.clone(), c * s);
        }
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Self::zero(self.nvars);
        for (e1, &c1) in &self.terms {
            for (e2, &c2) in &other.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, c1 * c2);
            }
        }
        out
    }

    pub fn derivative(&self, var: usize) -> Polynomial {
        let mut out = Self::zero(self.nvars);
        for (e, &c) in &self.terms {
            if e[var] > 0 {
                let mut d = e.clone();
                d[var] -= 1;
                out.add_term(d, c * e[var] as f64);
            }
        }
        out
    }

    /// Appends `extra` variables on which the polynomial does not depend.
    pub fn extend_vars(&self, extra: usize) -> Polynomial {
        let mut out = Self::zero(self.nvars + extra);
        for (e, &c) in &self.terms {
            let mut e2 = e.clone();
            e2.extend(std::iter::repeat_n(0, extra));
            out.add_term(e2, c);
        }
        out
    }
}

/// Vector field on `R^n` with polynomial components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldRepr", into = "FieldRepr")]
pub struct PolyVectorField {
    components: Vec<Polynomial>,
}

#[derive(Serialize, Deserialize)]
struct FieldRepr {
    components: Vec<Vec<Term>>,
}

impl From<PolyVectorField> for FieldRepr {
    fn from(f: PolyVectorField) -> Self {
        FieldRepr {
            components: f.components.iter().map(|p| p.terms()).collect(),
        }
    }
}

impl TryFrom<FieldRepr> for PolyVectorField {
    type Error = Error;

    fn try_from(r: FieldRepr) -> Result<Self> {
        let n = r.components.len();
        if n == 0 {
            return Err(Error::InvalidInput("vector field needs components".into()));
        }
        let components = r
            .components
            .iter()
            .map(|terms| Polynomial::from_terms(n, terms))
            .collect::<Result<Vec<_>>>()?;
        Ok(PolyVectorField { components })
    }
}

impl PolyVectorField {
    pub fn new(components: Vec<Polynomial>) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(Error::InvalidInput("vector field needs components".into()));
        }
        for p in &components {
            check_dim(n, p.nvars())?;
        }
        Ok(PolyVectorField { components })
    }

    pub fn zero(n: usize) -> Self {
        PolyVectorField {
            components: vec![Polynomial::zero(n); n],
        }
    }

    /// The coordinate field `d/dx_i`.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut f = Self::zero(n);
        f.components[i] = Polynomial::constant(n, 1.0);
        f
    }

    /// The affine field `x -> a x + b`.
    pub fn affine(a: &DMatrix<f64>, b: Option<&DVector<f64>>) -> Result<Self> {
        let n = a.nrows();
        check_dim(n, a.ncols())?;
        check_finite(a.as_slice(), "matrix")?;
        let mut comps = Vec::with_capacity(n);
        for i in 0..n {
            let mut p = Polynomial::zero(n);
            for j in 0..n {
                p = p.add(&Polynomial::var(n, j).scale(a[(i, j)]));
            }
            if let Some(b) = b {
                check_dim(n, b.len())?;
                p = p.add(&Polynomial::constant(n, b[i]));
            }
            comps.push(p);
        }
        Ok(PolyVectorField { components: comps })
    }

    pub fn ambient_dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn degree(&self) -> u32 {
        self.components.iter().map(|p| p.degree()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|p| p.is_zero())
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.components.len(), self.components.iter().map(|p| p.eval(x)))
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.components.len();
        DMatrix::from_fn(n, n, |i, j| self.components[i].derivative(j).eval(x))
    }

    pub fn add(&self, other: &PolyVectorField) -> PolyVectorField {
        PolyVectorField {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> PolyVectorField {
        PolyVectorField {
            components: self.components.iter().map(|p| p.scale(s)).collect(),
        }
    }

    /// Constant extension to `R^(n + extra)` with zero components in the new
    /// directions.
    pub fn extend(&self, extra: usize) -> PolyVectorField {
        let n = self.components.len() + extra;
        let mut components: Vec<Polynomial> =
            self.components.iter().map(|p| p.extend_vars(extra)).collect();
        components.resize(n, Polynomial::zero(n));
        PolyVectorField { components }
    }
}

/// `[X, Y] = (DY) X - (DX) Y`, computed exactly.
pub fn bracket(x: &PolyVectorField, y: &PolyVectorField) -> Result<PolyVectorField> {
    let n = x.ambient_dim();
    check_dim(n, y.ambient_dim())?;
    let mut components = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = Polynomial::zero(n);
        for j in 0..n {
            c = c
                .add(&x.components[j].mul(&y.components[i].derivative(j)))
                .sub(&y.components[j].mul(&x.components[i].derivative(j)));
        }
        components.push(c);
    }
    Ok(PolyVectorField { components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x_dx() -> PolyVectorField {
        PolyVectorField::new(vec![Polynomial::var(1, 0)]).unwrap()
    }

    #[test]
    fn coordinate_fields_commute() {
        let b = bracket(
            &PolyVectorField::coordinate(2, 0),
            &PolyVectorField::coordinate(2, 1),
        )
        .unwrap();
        assert!(b.is_zero());
    }

    #[test]
    fn euler_field_against_translation() {
        let b = bracket(&x_dx(), &PolyVectorField::coordinate(1, 0)).unwrap();
        assert_eq!(b, PolyVectorField::coordinate(1, 0).scale(-1.0));
    }

    #[test]
    fn raising_and_lowering_fields() {
        // [y d/dx, x d/dy] = y d/dy - x d/dx with this convention.
        let e = PolyVectorField::new(vec![Polynomial::var(2, 1), Polynomial::zero(2)]).unwrap();
        let f = PolyVectorField::new(vec![Polynomial::zero(2), Polynomial::var(2, 0)]).unwrap();
        let expected =
            PolyVectorField::new(vec![Polynomial::var(2, 0).scale(-1.0), Polynomial::var(2, 1)])
                .unwrap();
        assert_eq!(bracket(&e, &f).unwrap(), expected);
    }

    #[test]
    fn linear_fields_bracket_to_reversed_commutator() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, -1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, 1.0]);
        let xa = PolyVectorField::affine(&a, None).unwrap();
        let xb = PolyVectorField::affine(&b, None).unwrap();
        let expected = PolyVectorField::affine(&(&b * &a - &a * &b), None).unwrap();
        assert_eq!(bracket(&xa, &xb).unwrap(), expected);
    }

    #[test]
    fn json_round_trip() {
        let f = PolyVectorField::affine(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), None)
            .unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("exponents"));
        let back: PolyVectorField = serde_json::from_str(&s).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn json_rejects_bad_exponent_length() {
        let s = r#"{"components": [[{"exponents": [1, 0], "coeff": 1.0}]]}"#;
        assert!(serde_json::from_str::<PolyVectorField>(s).is_err());
    }

    #[test]
    fn jacobian_matches_derivatives() {
        let p = Polynomial::var(2, 0).mul(&Polynomial::var(2, 1));
        let f = PolyVectorField::new(vec![p, Polynomial::var(2, 0)]).unwrap();
        let j = f.jacobian(&[2.0, 3.0]);
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[3.0, 2.0, 1.0, 0.0]));
    }

    fn arb_field() -> impl Strategy<Value = PolyVectorField> {
        // Small integer coefficients keep all arithmetic exact in f64.
        let term = (0u32..3, 0u32..3, -3i32..4).prop_filter("deg", |(a, b, _)| a + b <= 2);
        proptest::collection::vec(proptest::collection::vec(term, 0..4), 2).prop_map(|comps| {
            PolyVectorField::new(
                comps
                    .into_iter()
                    .map(|ts| {
                        ts.into_iter().fold(Polynomial::zero(2), |acc, (a, b, c)| {
                            acc.add(&Polynomial::monomial(2, vec![a, b], c as f64))
                        })
                    })
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn jacobi_identity(x in arb_field(), y in arb_field(), z in arb_field()) {
            let t1 = bracket(&x, &bracket(&y, &z).unwrap()).unwrap();
            let t2 = bracket(&y, &bracket(&z, &x).unwrap()).unwrap();
            let t3 = bracket(&z, &bracket(&x, &y).unwrap()).unwrap();
            prop_assert!(t1.add(&t2).add(&t3).is_zero());
        }

        #[test]
        fn bracket_is_antisymmetric(x in arb_field(), y in arb_field()) {
            let s = bracket(&x, &y).unwrap().add(&bracket(&y, &x).unwrap());
            prop_assert!(s.is_zero());
        }
    }
}
