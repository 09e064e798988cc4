//! Exact arithmetic in the truncated smooth noncommutative torus algebra.
//!
//! Elements are finite Fourier series `a = sum_k a_k U_k` over `Z^n` with the
//! Weyl product convention `U_k U_l = exp(-i pi <k, theta l>) U_{k+l}`, which
//! reproduces the commutation phase `exp(-2 pi i <k, theta l>)` for an
//! antisymmetric deformation matrix and makes `U_k^* = U_{-k}` exact.
//! `theta = 0` selects the commutative torus.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use ndarray_linalg::{Norm, Solve, SVD};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

/// Lattice point of `Z^n`, padded to fixed width (unused axes stay zero).
pub type Idx = [i32; 4];

pub const MAX_DIM: usize = 4;

pub fn idx_zero() -> Idx {
    [0; 4]
}

pub fn idx_add(a: Idx, b: Idx) -> Idx {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

pub fn idx_neg(a: Idx) -> Idx {
    [-a[0], -a[1], -a[2], -a[3]]
}

pub fn idx_linf(a: Idx) -> i32 {
    a.iter().map(|v| v.abs()).max().unwrap()
}

/// Antisymmetric deformation matrix of the torus, `n` in `1..=4`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMatrix {
    n: usize,
    entries: Vec<f64>, // row-major n x n
}

impl ThetaMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 || n > MAX_DIM {
            return Err(Error::BadDimension(n));
        }
        if entries.len() != n * n {
            return Err(Error::Invalid(format!(
                "theta needs {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                if (entries[i * n + j] + entries[j * n + i]).abs() > 1e-14 {
                    return Err(Error::NotAntisymmetric(i, j));
                }
            }
        }
        Ok(Self { n, entries })
    }

    /// Commutative torus of dimension `n`.
    pub fn zero(n: usize) -> Arc<Self> {
        Arc::new(Self::new(n, vec![0.0; n * n]).expect("zero matrix is antisymmetric"))
    }

    /// Two-dimensional deformation with the single parameter `theta_12`.
    pub fn two_d(theta12: f64) -> Arc<Self> {
        Arc::new(
            Self::new(2, vec![0.0, theta12, -theta12, 0.0]).expect("antisymmetric by construction"),
        )
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_commutative(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0)
    }

    /// `<k, theta l>`.
    pub fn pairing(&self, k: Idx, l: Idx) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += k[i] as f64 * self.entry(i, j) * l[j] as f64;
            }
        }
        s
    }

    /// Weyl product phase `exp(-i pi <k, theta l>)`.
    pub fn phase(&self, k: Idx, l: Idx) -> Complex64 {
        if self.is_commutative() {
            return Complex64::new(1.0, 0.0);
        }
        Complex64::from_polar(1.0, -std::f64::consts::PI * self.pairing(k, l))
    }

    /// True when `theta^T j` is integral, i.e. `U_j` commutes with every `U_m`.
    /// Only such modes survive box-averaged diagonal pairings.
    pub fn is_resonant(&self, j: Idx) -> bool {
        for col in 0..self.n {
            let mut s = 0.0;
            for row in 0..self.n {
                s += j[row] as f64 * self.entry(row, col);
            }
            if (s - s.round()).abs() > 1e-9 {
                return false;
            }
        }
        true
    }
}

/// Finite Fourier series on the noncommutative torus.
#[derive(Debug, Clone)]
pub struct NcElement {
    theta: Arc<ThetaMatrix>,
    coeffs: BTreeMap<Idx, Complex64>,
}

const DROP_EPS: f64 = 0.0; // keep exact zeros out, everything else in

impl NcElement {
    pub fn zero(theta: Arc<ThetaMatrix>) -> Self {
        Self {
            theta,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn one(theta: Arc<ThetaMatrix>) -> Self {
        Self::unitary(theta, idx_zero())
    }

    pub fn scalar(theta: Arc<ThetaMatrix>, c: Complex64) -> Self {
        let mut e = Self::zero(theta);
        e.set(idx_zero(), c);
        e
    }

    /// The generator `U_k`.
    pub fn unitary(theta: Arc<ThetaMatrix>, k: Idx) -> Self {
        let mut e = Self::zero(theta);
        e.set(k, Complex64::new(1.0, 0.0));
        e
    }

    pub fn from_coeffs<I: IntoIterator<Item = (Idx, Complex64)>>(
        theta: Arc<ThetaMatrix>,
        it: I,
    ) -> Self {
        let mut e = Self::zero(theta);
        for (k, c) in it {
            e.add_to(k, c);
        }
        e
    }

    pub fn theta(&self) -> &Arc<ThetaMatrix> {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }

    pub fn coeff(&self, k: Idx) -> Complex64 {
        self.coeffs.get(&k).copied().unwrap_or_default()
    }

    pub fn set(&mut self, k: Idx, c: Complex64) {
        if c.norm_sqr() > DROP_EPS {
            self.coeffs.insert(k, c);
        } else {
            self.coeffs.remove(&k);
        }
    }

    pub fn add_to(&mut self, k: Idx, c: Complex64) {
        let v = self.coeff(k) + c;
        self.set(k, v);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Idx, &Complex64)> {
        self.coeffs.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Max-norm radius of the support box.
    pub fn support_radius(&self) -> i32 {
        self.coeffs.keys().map(|k| idx_linf(*k)).max().unwrap_or(0)
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm()).sum()
    }

    /// GNS norm: the `U_k` are orthonormal for `<x,y> = tau(y^* x)`.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs
            .values()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.theta.dim() != other.theta.dim() {
            return Err(Error::DimensionMismatch(self.theta.dim(), other.theta.dim()));
        }
        if !Arc::ptr_eq(&self.theta, &other.theta) && self.theta.as_ref() != other.theta.as_ref() {
            return Err(Error::ThetaMismatch);
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (k, c) in other.iter() {
            out.add_to(*k, *c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (k, c) in other.iter() {
            out.add_to(*k, -*c);
        }
        Ok(out)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = Self::zero(self.theta.clone());
        for (k, v) in self.iter() {
            out.set(*k, c * v);
        }
        out
    }

    /// Twisted convolution `(ab)_m = sum_{k+l=m} a_k b_l exp(-i pi <k, theta l>)`.
    /// The support box grows additively; the product is exact.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = Self::zero(self.theta.clone());
        for (k, ak) in self.iter() {
            for (l, bl) in other.iter() {
                let phase = self.theta.phase(*k, *l);
                out.add_to(idx_add(*k, *l), ak * bl * phase);
            }
        }
        Ok(out)
    }

    /// `tau` assigns the constant Fourier mode.
    pub fn trace_tau(&self) -> Complex64 {
        self.coeff(idx_zero())
    }

    /// Basis derivation `delta_j (sum a_k U_k) = sum k_j a_k U_k`, `j` zero-based.
    pub fn derive(&self, j: usize) -> Self {
        assert!(j < self.dim(), "direction {} out of range", j);
        let mut out = Self::zero(self.theta.clone());
        for (k, c) in self.iter() {
            out.set(*k, c * k[j] as f64);
        }
        out
    }

    /// Adjoint `(a^*)_k = conj(a_{-k})`.
    pub fn star(&self) -> Self {
        let mut out = Self::zero(self.theta.clone());
        for (k, c) in self.iter() {
            out.set(idx_neg(*k), c.conj());
        }
        out
    }

    pub fn is_self_adjoint(&self, tol: f64) -> bool {
        self.star().sub(self).map(|d| d.linf_norm() <= tol).unwrap_or(false)
    }

    /// Drop coefficients outside the box `|k|_inf <= radius`; the returned
    /// scalar is the l2 mass that was dropped, so truncation stays observable.
    pub fn truncate(&self, radius: i32) -> (Self, f64) {
        let mut out = Self::zero(self.theta.clone());
        let mut dropped = 0.0;
        for (k, c) in self.iter() {
            if idx_linf(*k) <= radius {
                out.set(*k, *c);
            } else {
                dropped += c.norm_sqr();
            }
        }
        (out, dropped.sqrt())
    }

    /// Enumerate the basis box `|m|_inf <= radius` in deterministic order.
    pub fn basis_box(n: usize, radius: i32) -> Vec<Idx> {
        let mut out = Vec::new();
        let r = radius;
        let mut cursor = [0i32; 4];
        fn rec(n: usize, axis: usize, r: i32, cursor: &mut Idx, out: &mut Vec<Idx>) {
            if axis == n {
                out.push(*cursor);
                return;
            }
            for v in -r..=r {
                cursor[axis] = v;
                rec(n, axis + 1, r, cursor, out);
            }
        }
        rec(n, 0, r, &mut cursor, &mut out);
        out
    }

    /// Matrix of left multiplication by `self` on the truncated GNS basis.
    pub fn left_mul_matrix(&self, radius: i32) -> Array2<Complex64> {
        let basis = Self::basis_box(self.dim(), radius);
        let index: BTreeMap<Idx, usize> = basis.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let dim = basis.len();
        let mut m = Array2::<Complex64>::zeros((dim, dim));
        for (col, b) in basis.iter().enumerate() {
            for (k, ak) in self.iter() {
                let target = idx_add(*k, *b);
                if let Some(&row) = index.get(&target) {
                    m[(row, col)] += ak * self.theta.phase(*k, *b);
                }
            }
        }
        m
    }

    /// Truncated inverse: solve `a x = 1` on a box of radius
    /// `max(target_support, 2 * support(a))` and verify the residual.
    pub fn invert(&self, target_support: i32, tol: f64) -> Result<Self> {
        let solve_radius = target_support.max(2 * self.support_radius()).max(1);
        let basis = Self::basis_box(self.dim(), solve_radius);
        let m = self.left_mul_matrix(solve_radius);
        let mut rhs = Array1::<Complex64>::zeros(basis.len());
        let pos = basis
            .iter()
            .position(|k| *k == idx_zero())
            .expect("origin is inside every box");
        rhs[pos] = Complex64::new(1.0, 0.0);
        let element_from = |sol: &Array1<Complex64>| {
            let mut x = Self::zero(self.theta.clone());
            for (i, k) in basis.iter().enumerate() {
                if sol[i].norm() > 1e-300 {
                    x.set(*k, sol[i]);
                }
            }
            x
        };
        // Residual of `a x = 1` on the truncated space.
        let residual_of = |x: &Self| -> Result<f64> {
            Ok(self
                .mul(x)?
                .sub(&Self::one(self.theta.clone()))?
                .truncate(solve_radius)
                .0
                .l2_norm())
        };
        // LU first; shift-dominant elements compress to a singular matrix and
        // fall back to the minimum-norm least-squares solution.
        let lu = crate::util::with_big_stack(|| m.solve(&rhs));
        let mut best: Option<Self> = None;
        if let Ok(sol) = lu {
            let x = element_from(&sol);
            if residual_of(&x)? <= tol {
                best = Some(x);
            }
        }
        if best.is_none() {
            let lsq = crate::util::with_big_stack(|| {
                use ndarray_linalg::LeastSquaresSvd;
                m.least_squares(&rhs)
            });
            if let Ok(out) = lsq {
                let x = element_from(&out.solution);
                if residual_of(&x)? <= tol {
                    best = Some(x);
                }
            }
        }
        let Some(x) = best else {
            let sigma_min = smallest_singular_value(&m);
            return Err(Error::SingularElement { sigma_min, tol });
        };
        let (x, _) = x.truncate(target_support.max(solve_radius));
        Ok(x)
    }

    /// `exp(a)` by scaling-and-squaring on the truncated algebra.
    pub fn exp(&self, target_support: i32, tol: f64) -> Result<Self> {
        let norm = self.l1_norm();
        let squarings = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as u32
        } else {
            0
        };
        let scaled = self.scale(Complex64::new(1.0 / 2f64.powi(squarings as i32), 0.0));
        // Power series at l1 norm <= 1/2 converges fast.
        let mut sum = Self::one(self.theta.clone());
        let mut term = Self::one(self.theta.clone());
        let work_radius = target_support.max(self.support_radius()).max(1) * 2;
        for k in 1..200 {
            term = term.mul(&scaled)?.scale(Complex64::new(1.0 / k as f64, 0.0));
            let (t, _) = term.truncate(work_radius);
            term = t;
            sum = sum.add(&term)?;
            if term.l1_norm() < tol * 1e-3 {
                let mut result = sum;
                for _ in 0..squarings {
                    result = result.mul(&result)?;
                    let (r, _) = result.truncate(work_radius);
                    result = r;
                }
                let (r, _dropped) = result.truncate(target_support);
                return Ok(r);
            }
        }
        Err(Error::SeriesDivergence {
            last: term.l1_norm(),
            tol,
        })
    }

    /// Text form: `n` and `theta` header then one `k_1 .. k_n re im` line per
    /// coefficient. Floats print in shortest round-trip form, so the
    /// round-trip is bit exact.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let n = self.dim();
        writeln!(s, "ncelement v1").unwrap();
        writeln!(s, "n {n}").unwrap();
        let mut line = String::from("theta");
        for v in self.theta.entries() {
            write!(line, " {v}").unwrap();
        }
        writeln!(s, "{line}").unwrap();
        for (k, c) in self.iter() {
            let mut row = String::new();
            for item in k.iter().take(n) {
                write!(row, "{item} ").unwrap();
            }
            writeln!(s, "{row}{} {}", c.re, c.im).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head = lines.next().ok_or_else(|| Error::Parse("empty input".into()))?;
        if head.trim() != "ncelement v1" {
            return Err(Error::Parse(format!("bad header: {head}")));
        }
        let n_line = lines.next().ok_or_else(|| Error::Parse("missing n".into()))?;
        let n: usize = n_line
            .trim()
            .strip_prefix("n ")
            .ok_or_else(|| Error::Parse(format!("bad n line: {n_line}")))?
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad n: {e}")))?;
        let t_line = lines.next().ok_or_else(|| Error::Parse("missing theta".into()))?;
        let t_entries: Vec<f64> = t_line
            .trim()
            .strip_prefix("theta")
            .ok_or_else(|| Error::Parse(format!("bad theta line: {t_line}")))?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("bad theta entry: {e}"))))
            .collect::<Result<_>>()?;
        let theta = Arc::new(ThetaMatrix::new(n, t_entries)?);
        let mut out = Self::zero(theta);
        for line in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != n + 2 {
                return Err(Error::Parse(format!("bad coefficient line: {line}")));
            }
            let mut k = idx_zero();
            for (i, item) in k.iter_mut().enumerate().take(n) {
                *item = fields[i]
                    .parse()
                    .map_err(|e| Error::Parse(format!("bad index: {e}")))?;
            }
            let re: f64 = fields[n]
                .parse()
                .map_err(|e| Error::Parse(format!("bad re: {e}")))?;
            let im: f64 = fields[n + 1]
                .parse()
                .map_err(|e| Error::Parse(format!("bad im: {e}")))?;
            out.set(k, Complex64::new(re, im));
        }
        Ok(out)
    }
}

fn smallest_singular_value(m: &Array2<Complex64>) -> f64 {
    match crate::util::with_big_stack(|| m.svd(false, false)) {
        Ok((_, s, _)) => s.iter().cloned().fold(f64::INFINITY, f64::min),
        Err(_) => f64::NAN,
    }
}

/// Frobenius distance helper for matrix comparisons in tests and oracles.
pub fn max_abs_diff(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    (a - b).iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Hermitian deviation `max |M - M^dagger|`.
pub fn hermitian_residual(m: &Array2<Complex64>) -> f64 {
    let mt = m.t().mapv(|c| c.conj());
    max_abs_diff(m, &mt.to_owned())
}

pub fn operator_norm_upper(m: &Array2<Complex64>) -> f64 {
    m.norm_l2() // Frobenius upper-bounds the spectral norm
}
