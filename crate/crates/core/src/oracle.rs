//! Independent ground truth: operators realized as dense matrices on the
//! truncated GNS basis `{U_k : |k|_inf <= K}`, exact spectra and heat traces,
//! small-time expansion fits, and the Epstein zeta function of the square
//! lattice for flat-torus cross-checks.

use crate::algebra::{idx_linf, Idx, NcElement, ThetaMatrix};
use crate::error::{Error, Result};
use crate::multiplier::Multiplier;
use crate::special::{gamma, gauss_legendre};
use crate::symbol::{evaluate, ClassicalSymbol, EvalContext, MultiIndex};
use crate::util::with_big_stack;
use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::f64::consts::PI;

use std::sync::Arc;

/// Dense matrix of an operator on the truncated basis, with the index box
/// kept alongside.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub theta: Arc<ThetaMatrix>,
    pub n: usize,
    pub k: i32,
    pub basis: Vec<Idx>,
    pub entries: Array2<Complex64>,
    pub hermitian: bool,
}

/// Differential operator description: `sum_alpha M_alpha D^alpha` with
/// `D^alpha U_m = m^alpha U_m`.
pub type DiffTerms = [(MultiIndex, Multiplier)];

fn monomial(m: Idx, alpha: &MultiIndex) -> f64 {
    let mut v = 1.0;
    for i in 0..4 {
        for _ in 0..alpha[i] {
            v *= m[i] as f64;
        }
    }
    v
}

impl OperatorMatrix {
    /// Exact matrix of a differential operator with multiplier coefficients.
    /// Columns are images of basis vectors; columns whose image leaves the
    /// box are clipped, so only the interior block is exact.
    pub fn differential(
        theta: &Arc<ThetaMatrix>,
        n: usize,
        terms: &DiffTerms,
        k: i32,
    ) -> Result<Self> {
        let support = terms
            .iter()
            .flat_map(|(_, m)| m.terms().iter())
            .map(|(u, v)| u.support_radius().max(v.support_radius()))
            .max()
            .unwrap_or(0);
        if k <= support {
            return Err(Error::TruncationTooSmall { k, support });
        }
        let basis = NcElement::basis_box(n, k);
        let index: BTreeMap<Idx, usize> = basis.iter().enumerate().map(|(i, b)| (*b, i)).collect();
        let mut entries = Array2::<Complex64>::zeros((basis.len(), basis.len()));
        for (col, b) in basis.iter().enumerate() {
            let mut image = NcElement::zero(theta.clone());
            for (alpha, m) in terms {
                let w = monomial(*b, alpha);
                if w != 0.0 {
                    let contrib = m.apply(&NcElement::unitary(theta.clone(), *b))?;
                    image = image.add(&contrib.scale(Complex64::new(w, 0.0)))?;
                }
            }
            for (row_idx, c) in image.iter() {
                if let Some(&row) = index.get(row_idx) {
                    entries[(row, col)] += c;
                }
            }
        }
        let hermitian = crate::algebra::hermitian_residual(&entries) <= 1e-10;
        Ok(Self {
            theta: theta.clone(),
            n,
            k,
            basis,
            entries,
            hermitian,
        })
    }

    /// Toroidal quantization of a classical symbol: apply the total symbol
    /// value at each lattice frequency to the corresponding basis vector.
    /// Exact for differential symbols; classical symbols need an evaluable
    /// total expression (component sums are only asymptotic).
    pub fn from_symbol(symbol: &ClassicalSymbol, k: i32) -> Result<Self> {
        let total = symbol.total().ok_or_else(|| {
            Error::Evaluation(
                "matrix realization needs a total symbol expression; use the differential path"
                    .into(),
            )
        })?;
        let theta = symbol.theta().clone();
        let n = symbol.dim();
        let basis = NcElement::basis_box(n, k);
        let index: BTreeMap<Idx, usize> = basis.iter().enumerate().map(|(i, b)| (*b, i)).collect();
        let mut entries = Array2::<Complex64>::zeros((basis.len(), basis.len()));
        for (col, b) in basis.iter().enumerate() {
            let xi = [b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64];
            let ctx = EvalContext::new(theta.clone(), xi);
            let m = evaluate(total, &ctx)?;
            let image = m.apply(&NcElement::unitary(theta.clone(), *b))?;
            for (row_idx, c) in image.iter() {
                if let Some(&row) = index.get(row_idx) {
                    entries[(row, col)] += c;
                }
            }
        }
        let hermitian = crate::algebra::hermitian_residual(&entries) <= 1e-10;
        Ok(Self {
            theta,
            n,
            k,
            basis,
            entries,
            hermitian,
        })
    }

    /// Add `s . P_0`, the rank-one projector onto `U_0` (kernel regulator).
    pub fn add_kernel_projector(&mut self, s: f64) {
        let pos = self
            .basis
            .iter()
            .position(|b| *b == crate::algebra::idx_zero())
            .expect("origin inside box");
        self.entries[(pos, pos)] += Complex64::new(s, 0.0);
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn hermitian_residual(&self) -> f64 {
        crate::algebra::hermitian_residual(&self.entries)
    }

    /// Interior-block max deviation from another matrix on the same box:
    /// rows and columns with `|m|_inf <= k - band`.
    pub fn interior_max_diff(&self, other: &Array2<Complex64>, band: i32) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, bi) in self.basis.iter().enumerate() {
            for (j, bj) in self.basis.iter().enumerate() {
                if idx_linf(*bi) <= self.k - band && idx_linf(*bj) <= self.k - band {
                    worst = worst.max((self.entries[(i, j)] - other[(i, j)]).norm());
                }
            }
        }
        worst
    }

    /// Partition the basis into orbits of the hop lattice actually used by
    /// the operator; one dense operator over an axis-supported conformal
    /// factor splits into `2K+1` independent blocks.
    pub fn orbit_blocks(&self) -> Vec<Vec<usize>> {
        let dim = self.dim();
        let mut parent: Vec<usize> = (0..dim).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            let mut i = i;
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for col in 0..dim {
            for row in 0..dim {
                if self.entries[(row, col)].norm() > 1e-14 {
                    let (a, b) = (find(&mut parent, row), find(&mut parent, col));
                    if a != b {
                        parent[a] = b;
                    }
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..dim {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        groups.into_values().collect()
    }

    /// Documented binary container: magic, dims, then raw little-endian
    /// complex doubles in row-major order.
    pub fn write_binary<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"NCOMAT1\n")?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&self.k.to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&[u8::from(self.hermitian)])?;
        for row in 0..self.dim() {
            for col in 0..self.dim() {
                let c = self.entries[(row, col)];
                w.write_all(&c.re.to_le_bytes())?;
                w.write_all(&c.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: std::io::Read>(theta: Arc<ThetaMatrix>, mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"NCOMAT1\n" {
            return Err(Error::Parse("bad matrix container magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let k = i32::from_le_bytes(b4);
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let dim = u64::from_le_bytes(b8) as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let basis = NcElement::basis_box(n, k);
        if basis.len() != dim {
            return Err(Error::Parse(format!(
                "container dim {dim} does not match box size {}",
                basis.len()
            )));
        }
        let mut entries = Array2::<Complex64>::zeros((dim, dim));
        for row in 0..dim {
            for col in 0..dim {
                r.read_exact(&mut b8)?;
                let re = f64::from_le_bytes(b8);
                r.read_exact(&mut b8)?;
                let im = f64::from_le_bytes(b8);
                entries[(row, col)] = Complex64::new(re, im);
            }
        }
        Ok(Self {
            theta,
            n,
            k,
            basis,
            entries,
            hermitian: flag[0] != 0,
        })
    }
}

/// Eigendecomposition of a Hermitian operator, block by block, reused across
/// heat-trace samples.
pub struct HeatKernel {
    op: OperatorMatrix,
    blocks: Vec<HeatBlock>,
    /// residual of the worst reported eigenpair
    pub eig_residual: f64,
    /// quadratic growth floor of the spectrum, for tail bounds
    pub growth: f64,
    /// width of the boundary band contaminated by truncation
    pub band: i32,
}

struct HeatBlock {
    indices: Vec<usize>,
    evals: Vec<f64>,
    evecs: Array2<Complex64>,
}

impl HeatKernel {
    pub fn new(op: OperatorMatrix, band: i32) -> Result<Self> {
        if !op.hermitian {
            return Err(Error::Invalid(format!(
                "heat trace needs a Hermitian realization (residual {:.3e})",
                op.hermitian_residual()
            )));
        }
        let blocks_idx = op.orbit_blocks();
        let mut blocks = Vec::with_capacity(blocks_idx.len());
        let mut eig_residual: f64 = 0.0;
        for indices in blocks_idx {
            let bdim = indices.len();
            let mut sub = Array2::<Complex64>::zeros((bdim, bdim));
            for (i, &gi) in indices.iter().enumerate() {
                for (j, &gj) in indices.iter().enumerate() {
                    sub[(i, j)] = op.entries[(gi, gj)];
                }
            }
            let (evals, evecs) = with_big_stack(|| sub.eigh(UPLO::Lower))
                .map_err(|e| Error::Evaluation(format!("eigh failed: {e}")))?;
            // spot-check the extreme eigenpairs
            for &which in &[0usize, bdim - 1] {
                let v = evecs.column(which);
                let mv = sub.dot(&v);
                let res: f64 = mv
                    .iter()
                    .zip(v.iter())
                    .map(|(a, b)| (a - b * Complex64::new(evals[which], 0.0)).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                let scale = evals
                    .iter()
                    .map(|e| e.abs())
                    .fold(0.0f64, f64::max)
                    .max(1.0);
                eig_residual = eig_residual.max(res / scale);
            }
            blocks.push(HeatBlock {
                indices,
                evals: evals.to_vec(),
                evecs,
            });
        }
        // quadratic growth estimate from diagonal entries near the boundary
        let mut growth = f64::INFINITY;
        for (i, b) in op.basis.iter().enumerate() {
            let r = idx_linf(*b);
            if r >= op.k - band {
                let m2: f64 = (0..op.n).map(|a| (b[a] as f64).powi(2)).sum();
                if m2 > 0.0 {
                    growth = growth.min(op.entries[(i, i)].re / m2);
                }
            }
        }
        if !growth.is_finite() || growth <= 0.0 {
            growth = 1e-6;
        }
        Ok(Self {
            op,
            blocks,
            eig_residual,
            growth,
            band,
        })
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.blocks.iter().flat_map(|b| b.evals.clone()).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all
    }

    /// Truncation tail bound for `Tr(L_a e^{-tM})`: modes outside the
    /// trusted interior behave at worst like `exp(-t growth |m|^2)`.
    pub fn tail_bound(&self, a_l1: f64, t: f64) -> f64 {
        let r = (self.op.k - self.band).max(0);
        let c = self.growth;
        let full: f64 = (1..=4 * self.op.k as i64 + 80)
            .map(|m| (-t * c * (m * m) as f64).exp())
            .sum::<f64>()
            .mul_add(2.0, 1.0);
        let inner: f64 = (1..=r as i64)
            .map(|m| (-t * c * (m * m) as f64).exp())
            .sum::<f64>()
            .mul_add(2.0, 1.0);
        a_l1 * (full.powi(self.op.n as i32) - inner.powi(self.op.n as i32)).max(0.0)
    }

    /// `Tr(L_a e^{-tM})` with the trusted-window tail bound; pass `None`
    /// for `a = 1`.
    pub fn trace(&self, a: Option<&NcElement>, t: f64) -> Result<(Complex64, f64)> {
        let mut acc = Complex64::default();
        for block in &self.blocks {
            match a {
                None => {
                    for &ev in &block.evals {
                        acc += Complex64::new((-t * ev).exp(), 0.0);
                    }
                }
                Some(el) => {
                    // compress L_a to the block
                    let bdim = block.indices.len();
                    let index: BTreeMap<Idx, usize> = block
                        .indices
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| (self.op.basis[g], i))
                        .collect();
                    let mut c = Array2::<Complex64>::zeros((bdim, bdim));
                    for (jloc, &g) in block.indices.iter().enumerate() {
                        let image = el.mul(&NcElement::unitary(self.op.theta.clone(), self.op.basis[g]))?;
                        for (row_idx, v) in image.iter() {
                            if let Some(&iloc) = index.get(row_idx) {
                                c[(iloc, jloc)] += v;
                            }
                        }
                    }
                    // sum_i e^{-t ev_i} <v_i, C v_i>
                    let cv = c.dot(&block.evecs);
                    for (i, &ev) in block.evals.iter().enumerate() {
                        let vi = block.evecs.column(i);
                        let dot: Complex64 = vi
                            .iter()
                            .zip(cv.column(i).iter())
                            .map(|(a, b)| a.conj() * b)
                            .sum();
                        acc += dot * (-t * ev).exp();
                    }
                }
            }
        }
        let a_l1 = a.map(|el| el.l1_norm()).unwrap_or(1.0);
        Ok((acc, self.tail_bound(a_l1, t)))
    }

    /// Heat samples restricted to the trusted window (tail below `limit`
    /// relative to the sample value); rejects untrusted requests.
    pub fn trusted_samples(
        &self,
        a: Option<&NcElement>,
        ts: &[f64],
        rel_limit: f64,
    ) -> Result<Vec<(f64, Complex64)>> {
        let mut out = Vec::with_capacity(ts.len());
        for &t in ts {
            let (v, tail) = self.trace(a, t)?;
            if tail > rel_limit * v.norm().max(1e-300) {
                return Err(Error::UntrustedSample {
                    t,
                    tail,
                    limit: rel_limit * v.norm(),
                });
            }
            out.push((t, v));
        }
        Ok(out)
    }
}

/// Flat torus `Tr(e^{-t Delta})` on `Z^n` via the product of one-dimensional
/// sums; exact diagonal fast path.
pub fn flat_heat_trace(n: usize, t: f64, k: i64) -> f64 {
    let one_dim: f64 = (1..=k)
        .map(|m| (-t * (m * m) as f64).exp())
        .sum::<f64>()
        .mul_add(2.0, 1.0);
    one_dim.powi(n as i32)
}

/// Least-squares fit of samples against the exponent basis `t^{e_j}`.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub exponents: Vec<f64>,
    pub coefficients: Vec<Complex64>,
    pub residual: f64,
    pub condition: f64,
    pub t_window: (f64, f64),
    pub trusted: bool,
}

pub fn fit_expansion(samples: &[(f64, Complex64)], exponents: &[f64]) -> Result<FitResult> {
    if samples.len() < 2 * exponents.len() {
        return Err(Error::Invalid(format!(
            "need at least {} samples for {} exponents, got {}",
            2 * exponents.len(),
            exponents.len(),
            samples.len()
        )));
    }
    let rows = samples.len();
    let cols = exponents.len();
    let mut design = Array2::<Complex64>::zeros((rows, cols));
    let mut rhs = ndarray::Array1::<Complex64>::zeros(rows);
    for (i, (t, v)) in samples.iter().enumerate() {
        for (j, e) in exponents.iter().enumerate() {
            design[(i, j)] = Complex64::new(t.powf(*e), 0.0);
        }
        rhs[i] = *v;
    }
    let (sol, sigma) = with_big_stack(|| -> std::result::Result<_, String> {
        use ndarray_linalg::{LeastSquaresSvd, SVD};
        let out = design
            .least_squares(&rhs)
            .map_err(|e| format!("least squares failed: {e}"))?;
        let (_, s, _) = design.svd(false, false).map_err(|e| format!("svd failed: {e}"))?;
        Ok((out.solution, s))
    })
    .map_err(Error::Evaluation)?;
    let smin = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !condition.is_finite() {
        return Err(Error::RankDeficient { cond: condition });
    }
    let mut residual = 0.0f64;
    for (i, (t, v)) in samples.iter().enumerate() {
        let mut fit = Complex64::default();
        for (j, e) in exponents.iter().enumerate() {
            fit += sol[j] * t.powf(*e);
        }
        residual += (fit - v).norm_sqr();
        let _ = i;
    }
    let t_min = samples.iter().map(|(t, _)| *t).fold(f64::INFINITY, f64::min);
    let t_max = samples.iter().map(|(t, _)| *t).fold(0.0f64, f64::max);
    Ok(FitResult {
        exponents: exponents.to_vec(),
        coefficients: sol.to_vec(),
        residual: residual.sqrt(),
        condition,
        t_window: (t_min, t_max),
        trusted: condition <= 1e8,
    })
}

/// Epstein zeta of the square lattice, `Z(z) = sum'_{k in Z^2} |k|^{-2z}`,
/// continued by the incomplete-gamma/theta split
/// `Gamma(z) Z(z) = I_1(z) + pi^{2z-1} I_2(z) + pi/(z-1) - 1/z` with both
/// integrals over rapidly decaying theta tails.
pub fn epstein_zeta(z: Complex64) -> Result<(Complex64, f64)> {
    if (z - Complex64::new(1.0, 0.0)).norm() < 1e-12 {
        return Err(Error::Evaluation("Epstein zeta pole at z = 1".into()));
    }
    if z.norm() < 1e-12 {
        return Ok((Complex64::new(-1.0, 0.0), 1e-15));
    }
    let theta2_minus_1 = |t: f64| -> f64 {
        let one_dim: f64 = (1..=12)
            .map(|m| (-t * (m * m) as f64).exp())
            .sum::<f64>()
            .mul_add(2.0, 1.0);
        one_dim * one_dim - 1.0
    };
    let integral = |f: &dyn Fn(f64) -> Complex64, a: f64, b: f64, panels: usize, nodes: usize| {
        let (x, w) = gauss_legendre(nodes);
        let mut acc = Complex64::default();
        for p in 0..panels {
            let pa = a + (b - a) * p as f64 / panels as f64;
            let pb = a + (b - a) * (p + 1) as f64 / panels as f64;
            for (xi, wi) in x.iter().zip(&w) {
                let t = 0.5 * (pa + pb) + 0.5 * (pb - pa) * xi;
                acc += f(t) * (0.5 * (pb - pa) * wi);
            }
        }
        acc
    };
    let i1 = |nodes: usize| {
        integral(
            &|t: f64| Complex64::new(t, 0.0).powc(z - 1.0) * theta2_minus_1(t),
            1.0,
            45.0,
            10,
            nodes,
        )
    };
    let i2 = |nodes: usize| {
        integral(
            &|t: f64| Complex64::new(t, 0.0).powc(-z) * theta2_minus_1(t),
            PI * PI,
            60.0,
            8,
            nodes,
        )
    };
    let assemble = |nodes: usize| {
        let gz = i1(nodes)
            + Complex64::new(PI, 0.0).powc(2.0 * z - 1.0) * i2(nodes)
            + PI / (z - 1.0)
            - z.inv();
        gz / gamma(z)
    };
    let coarse = assemble(20);
    let fine = assemble(40);
    let est = (fine - coarse).norm() + 1e-15;
    Ok((fine, est))
}

/// Direct lattice sum `sum'_{|k|_inf <= K} |k|^{-2s}` with the exact
/// box-complement integral as tail correction (valid for `Re s > 1`).
pub fn lattice_zeta_sum(s: f64, k: i64) -> (f64, f64) {
    let mut acc = 0.0;
    for k1 in -k..=k {
        for k2 in -k..=k {
            if k1 == 0 && k2 == 0 {
                continue;
            }
            let m2 = (k1 * k1 + k2 * k2) as f64;
            acc += m2.powf(-s);
        }
    }
    // int over {|xi|_inf > K} of |xi|^{-2s} = 8 c(s) K^{2-2s} / (2s-2)
    // with c(s) = int_0^1 (1+u^2)^{-s} du
    let (x, w) = gauss_legendre(16);
    let c: f64 = x
        .iter()
        .zip(&w)
        .map(|(xi, wi)| 0.5 * wi * (1.0 + (0.5 + 0.5 * xi) * (0.5 + 0.5 * xi)).powf(-s))
        .sum();
    let kk = k as f64 + 0.5;
    let tail = 8.0 * c * kk.powf(2.0 - 2.0 * s) / (2.0 * s - 2.0);
    // Euler-Maclaurin style boundary error
    let err = 16.0 * kk.powf(1.0 - 2.0 * s);
    (acc + tail, err)
}

/// Gamma-free Laurent data of a function on a circle around `z0` by
/// discrete Fourier analysis: returns coefficients for powers
/// `(z - z0)^{-2}, (z - z0)^{-1}, (z - z0)^0`.
pub fn laurent_fit<F>(mut f: F, z0: Complex64, radius: f64, samples: usize) -> Result<[Complex64; 3]>
where
    F: FnMut(Complex64) -> Result<Complex64>,
{
    // c_m = (1 / N) sum_j f(z0 + r e^{i phi_j}) r^{-m} e^{-i m phi_j}
    let mut coeffs = [Complex64::default(); 3];
    for j in 0..samples {
        let phi = 2.0 * PI * j as f64 / samples as f64;
        let dz = Complex64::from_polar(radius, phi);
        let v = f(z0 + dz)?;
        for (slot, m) in [(0usize, -2i32), (1, -1), (2, 0)] {
            coeffs[slot] +=
                v * Complex64::from_polar(radius.powi(-m), -phi * m as f64);
        }
    }
    for c in coeffs.iter_mut() {
        *c /= samples as f64;
    }
    Ok(coeffs)
}

pub fn gamma_of(z: Complex64) -> Complex64 {
    gamma(z)
}
