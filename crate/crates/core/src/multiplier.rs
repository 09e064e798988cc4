//! Coefficient scalars of the symbol calculus: finite sums of composed left
//! and right multiplications `sum_i L_{u_i} R_{v_i}`. Right multipliers are
//! needed because the conformal Laplacian involves right multiplication by
//! the conformal factor.

use crate::algebra::{idx_neg, Idx, NcElement, ThetaMatrix};
use crate::error::{Error, Result};
use ndarray::Array2;
use num_complex::Complex64;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct Multiplier {
    theta: Arc<ThetaMatrix>,
    terms: Vec<(NcElement, NcElement)>, // (left, right)
}

impl Multiplier {
    pub fn zero(theta: Arc<ThetaMatrix>) -> Self {
        Self {
            theta,
            terms: Vec::new(),
        }
    }

    pub fn identity(theta: Arc<ThetaMatrix>) -> Self {
        Self::scalar(theta, Complex64::new(1.0, 0.0))
    }

    pub fn scalar(theta: Arc<ThetaMatrix>, c: Complex64) -> Self {
        let one = NcElement::one(theta.clone());
        Self {
            theta: theta.clone(),
            terms: vec![(NcElement::scalar(theta, c), one)],
        }
    }

    pub fn left(a: NcElement) -> Self {
        let theta = a.theta().clone();
        let one = NcElement::one(theta.clone());
        Self {
            theta,
            terms: vec![(a, one)],
        }
    }

    pub fn right(b: NcElement) -> Self {
        let theta = b.theta().clone();
        let one = NcElement::one(theta.clone());
        Self {
            theta,
            terms: vec![(one, b)],
        }
    }

    pub fn left_right(a: NcElement, b: NcElement) -> Self {
        Self {
            theta: a.theta().clone(),
            terms: vec![(a, b)],
        }
    }

    pub fn theta(&self) -> &Arc<ThetaMatrix> {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }

    pub fn terms(&self) -> &[(NcElement, NcElement)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|(u, v)| u.is_zero() || v.is_zero())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.theta.as_ref() != other.theta.as_ref() {
            return Err(Error::ThetaMismatch);
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Self {
            theta: self.theta.clone(),
            terms,
        }
        .compact())
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            theta: self.theta.clone(),
            terms: self
                .terms
                .iter()
                .map(|(u, v)| (u.scale(c), v.clone()))
                .collect(),
        }
    }

    /// Composition rule `(L_a R_b)(L_c R_d) = L_{ac} R_{db}`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.theta.as_ref() != other.theta.as_ref() {
            return Err(Error::ThetaMismatch);
        }
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (u, v) in &self.terms {
            for (u2, v2) in &other.terms {
                terms.push((u.mul(u2)?, v2.mul(v)?));
            }
        }
        Ok(Self {
            theta: self.theta.clone(),
            terms,
        }
        .compact())
    }

    /// Derivation through the multiplier: `[delta_j, L_u R_v] = L_{delta_j u} R_v + L_u R_{delta_j v}`.
    pub fn derive(&self, j: usize) -> Self {
        let mut terms = Vec::with_capacity(2 * self.terms.len());
        for (u, v) in &self.terms {
            terms.push((u.derive(j), v.clone()));
            terms.push((u.clone(), v.derive(j)));
        }
        Self {
            theta: self.theta.clone(),
            terms,
        }
        .compact()
    }

    /// Apply to an algebra element: `x -> sum_i u_i x v_i`.
    pub fn apply(&self, x: &NcElement) -> Result<NcElement> {
        let mut out = NcElement::zero(self.theta.clone());
        for (u, v) in &self.terms {
            out = out.add(&u.mul(x)?.mul(v)?)?;
        }
        Ok(out)
    }

    /// Exact diagonal matrix element `<M U_m, U_m> = sum_j u_j v_{-j} e^{-2 pi i <j, theta m>}`.
    pub fn diag_entry(&self, m: Idx) -> Complex64 {
        let mut s = Complex64::default();
        for (u, v) in &self.terms {
            for (j, uj) in u.iter() {
                let vmj = v.coeff(idx_neg(*j));
                if vmj != Complex64::default() {
                    let phase = if self.theta.is_commutative() {
                        Complex64::new(1.0, 0.0)
                    } else {
                        Complex64::from_polar(
                            1.0,
                            -2.0 * std::f64::consts::PI * self.theta.pairing(*j, m),
                        )
                    };
                    s += uj * vmj * phase;
                }
            }
        }
        s
    }

    /// Box-averaged diagonal pairing. Only resonant modes `theta^T j` integral
    /// survive the average: at `theta = 0` this is `tau(u v)`, at irrational
    /// `theta` it collapses to `tau(u) tau(v)`.
    pub fn pairing(&self) -> Complex64 {
        let mut s = Complex64::default();
        for (u, v) in &self.terms {
            for (j, uj) in u.iter() {
                if self.theta.is_resonant(*j) {
                    s += uj * v.coeff(idx_neg(*j));
                }
            }
        }
        s
    }

    /// Merge mergeable terms: all pure-right parts collapse into one right
    /// factor, pure-left parts into one left factor; at `theta = 0` every
    /// term folds into the left factor. Idempotent.
    pub fn compact(self) -> Self {
        let theta = self.theta.clone();
        if theta.is_commutative() {
            let mut acc = NcElement::zero(theta.clone());
            for (u, v) in &self.terms {
                if let Ok(p) = u.mul(v) {
                    acc = acc.add(&p).expect("same theta");
                }
            }
            if acc.is_zero() {
                return Self::zero(theta);
            }
            let one = NcElement::one(theta.clone());
            return Self {
                theta,
                terms: vec![(acc, one)],
            };
        }
        let mut scalar = Complex64::default();
        let mut pure_left = NcElement::zero(theta.clone());
        let mut pure_right = NcElement::zero(theta.clone());
        let mut mixed: Vec<(NcElement, NcElement)> = Vec::new();
        for (u, v) in self.terms {
            if u.is_zero() || v.is_zero() {
                continue;
            }
            let v_scalar = v.num_terms() == 1 && v.coeff(crate::algebra::idx_zero()) != Complex64::default();
            let u_scalar = u.num_terms() == 1 && u.coeff(crate::algebra::idx_zero()) != Complex64::default();
            if u_scalar && v_scalar {
                scalar += u.coeff(crate::algebra::idx_zero()) * v.coeff(crate::algebra::idx_zero());
            } else if v_scalar {
                let c = v.coeff(crate::algebra::idx_zero());
                pure_left = pure_left.add(&u.scale(c)).expect("same theta");
            } else if u_scalar {
                let c = u.coeff(crate::algebra::idx_zero());
                pure_right = pure_right.add(&v.scale(c)).expect("same theta");
            } else {
                mixed.push((u, v));
            }
        }
        // Fold the scalar part into whichever single side is in use so that
        // resolvent denominators stay one invertible term.
        if scalar != Complex64::default() {
            if !pure_left.is_zero() || pure_right.is_zero() {
                pure_left.add_to(crate::algebra::idx_zero(), scalar);
            } else {
                pure_right.add_to(crate::algebra::idx_zero(), scalar);
            }
        }
        let mut terms = Vec::new();
        let one = NcElement::one(theta.clone());
        if !pure_left.is_zero() {
            terms.push((pure_left, one.clone()));
        }
        if !pure_right.is_zero() {
            terms.push((one, pure_right));
        }
        terms.extend(mixed);
        Self { theta, terms }
    }

    /// A multiplier that is a complex multiple of the identity.
    pub fn as_scalar(&self) -> Option<Complex64> {
        let m = self.clone().compact();
        if m.terms.is_empty() {
            return Some(Complex64::default());
        }
        if m.terms.len() != 1 {
            return None;
        }
        let (u, v) = &m.terms[0];
        if u.num_terms() != 1 || v.num_terms() != 1 {
            return None;
        }
        let cu = u.coeff(crate::algebra::idx_zero());
        let cv = v.coeff(crate::algebra::idx_zero());
        if cu == Complex64::default() || cv == Complex64::default() {
            return None;
        }
        Some(cu * cv)
    }

    /// Inverse of a single pure-left, pure-right or factorized term.
    /// Mixed sums do not have a finite left/right form and are rejected.
    pub fn inverse(&self, target_support: i32, tol: f64) -> Result<Self> {
        let compacted = self.clone().compact();
        if compacted.terms.len() != 1 {
            return Err(Error::MixedMultiplierInverse);
        }
        let (u, v) = &compacted.terms[0];
        let ui = u.invert(target_support, tol)?;
        let vi = v.invert(target_support, tol)?;
        Ok(Self {
            theta: self.theta.clone(),
            terms: vec![(ui, vi)],
        })
    }

    /// Matrix of the action `x -> sum u x v` on the truncated GNS basis.
    pub fn action_matrix(&self, radius: i32) -> Result<Array2<Complex64>> {
        let basis = NcElement::basis_box(self.dim(), radius);
        let index: std::collections::BTreeMap<Idx, usize> =
            basis.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut m = Array2::<Complex64>::zeros((basis.len(), basis.len()));
        for (col, b) in basis.iter().enumerate() {
            let image = self.apply(&NcElement::unitary(self.theta.clone(), *b))?;
            for (k, c) in image.iter() {
                if let Some(&row) = index.get(k) {
                    m[(row, col)] += c;
                }
            }
        }
        Ok(m)
    }

    /// Crude upper bound `sum_i |u_i|_1 |v_i|_1` on the operator norm.
    pub fn l1_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|(u, v)| u.l1_norm() * v.l1_norm())
            .sum()
    }

    /// Truncate every factor, reporting total dropped l2 mass.
    pub fn truncate(&self, radius: i32) -> (Self, f64) {
        let mut dropped = 0.0;
        let terms = self
            .terms
            .iter()
            .map(|(u, v)| {
                let (tu, du) = u.truncate(radius);
                let (tv, dv) = v.truncate(radius);
                dropped += du + dv;
                (tu, tv)
            })
            .collect();
        (
            Self {
                theta: self.theta.clone(),
                terms,
            },
            dropped,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::idx_zero;
    use rand::{Rng, SeedableRng};

    fn rand_el(theta: &Arc<ThetaMatrix>, r: i32, rng: &mut impl Rng) -> NcElement {
        let mut e = NcElement::zero(theta.clone());
        for k in NcElement::basis_box(theta.dim(), r) {
            e.set(
                k,
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            );
        }
        e
    }

    #[test]
    fn product_rule_against_matrix_realization() {
        let theta = ThetaMatrix::two_d(1.0 / 2f64.sqrt());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let m1 = Multiplier::left_right(rand_el(&theta, 1, &mut rng), rand_el(&theta, 1, &mut rng));
        let m2 = Multiplier::left_right(rand_el(&theta, 1, &mut rng), rand_el(&theta, 1, &mut rng));
        let prod = m1.mul(&m2).unwrap();
        // Interior block of the action matrices: radius 6 box, compare on radius 2.
        let a1 = m1.action_matrix(6).unwrap();
        let a2 = m2.action_matrix(6).unwrap();
        let ap = prod.action_matrix(6).unwrap();
        let a12 = a1.dot(&a2);
        let basis = NcElement::basis_box(2, 6);
        let mut worst: f64 = 0.0;
        for (i, ki) in basis.iter().enumerate() {
            for (j, kj) in basis.iter().enumerate() {
                if crate::algebra::idx_linf(*ki) <= 2 && crate::algebra::idx_linf(*kj) <= 2 {
                    worst = worst.max((ap[(i, j)] - a12[(i, j)]).norm());
                }
            }
        }
        assert!(worst < 1e-12, "product rule deviates by {worst}");
    }

    #[test]
    fn theta_zero_normal_form_folds_right() {
        let theta = ThetaMatrix::zero(2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let u = rand_el(&theta, 1, &mut rng);
        let v = rand_el(&theta, 1, &mut rng);
        let m = Multiplier::left_right(u.clone(), v.clone()).compact();
        assert_eq!(m.terms().len(), 1);
        let (l, r) = &m.terms()[0];
        assert!(r.num_terms() == 1 && r.coeff(idx_zero()) == Complex64::new(1.0, 0.0));
        assert!(l.sub(&u.mul(&v).unwrap()).unwrap().linf_norm() < 1e-14);
        // idempotent
        let m2 = m.clone().compact();
        assert_eq!(m2.terms().len(), 1);
    }

    #[test]
    fn pairing_rules() {
        // theta = 0: tau(u v); irrational theta: tau(u) tau(v).
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(47);
        let t0 = ThetaMatrix::zero(2);
        let u = rand_el(&t0, 2, &mut rng);
        let v = rand_el(&t0, 2, &mut rng);
        let m = Multiplier::left_right(u.clone(), v.clone());
        let expect = u.mul(&v).unwrap().trace_tau();
        assert!((m.pairing() - expect).norm() < 1e-13);

        let ti = ThetaMatrix::two_d(1.0 / 2f64.sqrt());
        let u = rand_el(&ti, 2, &mut rng);
        let v = rand_el(&ti, 2, &mut rng);
        let m = Multiplier::left_right(u.clone(), v.clone());
        let expect = u.trace_tau() * v.trace_tau();
        assert!((m.pairing() - expect).norm() < 1e-13);
    }

    #[test]
    fn pairing_is_box_average_of_diagonal() {
        let theta = ThetaMatrix::two_d(1.0 / 2f64.sqrt());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(53);
        let m = Multiplier::left_right(rand_el(&theta, 1, &mut rng), rand_el(&theta, 1, &mut rng));
        for big in [8, 16, 32] {
            let basis = NcElement::basis_box(2, big);
            let avg: Complex64 =
                basis.iter().map(|k| m.diag_entry(*k)).sum::<Complex64>() / basis.len() as f64;
            let err = (avg - m.pairing()).norm();
            // O(1/K) decay of the nonresonant phases
            assert!(err < 6.0 / big as f64, "K={big}: avg error {err}");
        }
    }

    #[test]
    fn inverse_of_factorized_term() {
        let theta = ThetaMatrix::two_d(1.0 / 2f64.sqrt());
        let b = NcElement::unitary(theta.clone(), [1, 0, 0, 0])
            .add(&NcElement::unitary(theta.clone(), [-1, 0, 0, 0]))
            .unwrap()
            .scale(Complex64::new(0.2, 0.0))
            .add(&NcElement::one(theta.clone()))
            .unwrap();
        let m = Multiplier::right(b.clone());
        let mi = m.inverse(16, 1e-11).unwrap();
        let prod = m.mul(&mi).unwrap();
        let x = NcElement::unitary(theta.clone(), [2, -1, 0, 0]);
        let res = prod.apply(&x).unwrap().sub(&x).unwrap().l2_norm();
        assert!(res < 1e-9, "R_b R_b^-1 deviates by {res}");

        let mixed = Multiplier::left(b.clone()).add(&Multiplier::right(b)).unwrap();
        assert!(matches!(
            mixed.inverse(8, 1e-10),
            Err(Error::MixedMultiplierInverse)
        ));
    }
}
