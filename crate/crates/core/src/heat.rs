//! Heat-kernel expansion coefficients from residues (the inverse Mellin
//! route), the conformal Laplacian on the noncommutative two-torus, and the
//! scalar-curvature pairing.
//!
//! Mellin-consistent constants throughout: the coefficient of `t^{-d_j}` in
//! `Tr(A e^{-tQ})` is `Gamma(d_j) (V/q) Res(A Q^{-d_j})` for `d_j > 0` and
//! the constant term is `V zeta(A,Q)(0) = -(V/q) Res(A log Q)`, with
//! `V = (2 pi)^n` the volume bridge pinned by the flat-torus calibration.

use crate::algebra::{NcElement, ThetaMatrix};
use crate::error::{Error, Result};
use crate::funcalc::power_symbol;
use crate::multiplier::Multiplier;
use crate::special::gamma;
use crate::symbol::{compose, from_differential, ClassicalSymbol, MultiIndex};
use crate::traces::{volume_norm, TraceEngine};
use num_complex::Complex64;
use std::sync::Arc;

/// Conformal geometry data: self-adjoint conformal factor `h`, modulus
/// `tau` with positive imaginary part, and the derived `k = e^{h/2}`.
#[derive(Debug, Clone)]
pub struct ConformalData {
    pub h: NcElement,
    pub modulus: Complex64,
    pub k_half: NcElement,
    pub k_sq: NcElement,
}

impl ConformalData {
    pub fn new(h: NcElement, modulus: Complex64, support: i32, tol: f64) -> Result<Self> {
        if h.dim() != 2 {
            return Err(Error::BadDimension(h.dim()));
        }
        if !h.is_self_adjoint(1e-12) {
            return Err(Error::Invalid("conformal factor must be self-adjoint".into()));
        }
        if modulus.im <= 0.0 {
            return Err(Error::Invalid(format!(
                "modulus must have positive imaginary part, got {modulus}"
            )));
        }
        let k_half = h.scale(Complex64::new(0.5, 0.0)).exp(support, tol)?;
        let k_sq = h.exp(support, tol)?;
        // invertibility at working truncation
        k_sq.invert(2 * support, 1e-8)?;
        Ok(Self {
            h,
            modulus,
            k_half,
            k_sq,
        })
    }

    pub fn theta(&self) -> &Arc<ThetaMatrix> {
        self.h.theta()
    }

    /// `del = delta_1 + conj(tau) delta_2` applied to an element.
    pub fn del(&self, a: &NcElement) -> NcElement {
        a.derive(0)
            .add(&a.derive(1).scale(self.modulus.conj()))
            .expect("same theta")
    }
}

/// The conformal Laplacian: differential terms and the matching exact
/// symbol. Realized as the Hermitian block `del R_{k^2} del^*` acting on the
/// image of `del`, whose kernel is spanned by the constant mode and which
/// reduces to the flat Laplacian at `h = 0`, `tau = i`.
#[derive(Debug, Clone)]
pub struct ConformalLaplacian {
    pub terms: Vec<(MultiIndex, Multiplier)>,
    pub symbol: ClassicalSymbol,
}

pub fn conformal_laplacian(cd: &ConformalData) -> Result<ConformalLaplacian> {
    let theta = cd.theta().clone();
    let tau = cd.modulus;
    // symbol route: compose the three exact factors
    // del has symbol xi_1 + conj(tau) xi_2, del^* has symbol xi_1 + tau xi_2
    let id = Multiplier::identity(theta.clone());
    let del = from_differential(
        theta.clone(),
        2,
        &[
            ([1, 0, 0, 0], id.clone()),
            ([0, 1, 0, 0], id.scale(tau.conj())),
        ],
    );
    let delstar = from_differential(
        theta.clone(),
        2,
        &[([1, 0, 0, 0], id.clone()), ([0, 1, 0, 0], id.scale(tau))],
    );
    let rk2 = from_differential(
        theta.clone(),
        2,
        &[([0, 0, 0, 0], Multiplier::right(cd.k_sq.clone()))],
    );
    let symbol = compose(&compose(&del, &rk2, 3)?, &delstar, 3)?;

    // direct expansion: p pbar R_{k^2} + pbar R_{del k^2}
    let r = Multiplier::right(cd.k_sq.clone());
    let rdk = Multiplier::right(cd.del(&cd.k_sq));
    let terms = vec![
        ([2, 0, 0, 0], r.clone()),
        ([1, 1, 0, 0], r.scale(tau + tau.conj())),
        ([0, 2, 0, 0], r.scale(tau * tau.conj())),
        ([1, 0, 0, 0], rdk.clone()),
        ([0, 1, 0, 0], rdk.scale(tau)),
    ];
    Ok(ConformalLaplacian { terms, symbol })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ResidueDerived,
    OracleFitted,
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Provenance::ResidueDerived => "residue-derived",
            Provenance::OracleFitted => "oracle-fitted",
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeatCoefficient {
    /// power of `t`
    pub exponent: f64,
    pub value: Complex64,
    pub provenance: Provenance,
    pub error: f64,
}

/// Exponents and coefficients of the small-time expansion of
/// `Tr(A e^{-tQ})`, exponents strictly increasing up to the constant slot.
#[derive(Debug, Clone)]
pub struct HeatExpansion {
    pub coefficients: Vec<HeatCoefficient>,
}

impl HeatExpansion {
    pub fn coefficient_at(&self, exponent: f64) -> Option<&HeatCoefficient> {
        self.coefficients
            .iter()
            .find(|c| (c.exponent - exponent).abs() < 1e-9)
    }

    /// Tabular form: `exponent re im provenance error` per line.
    pub fn to_table(&self) -> String {
        let mut s = String::from("exponent\tre\tim\tprovenance\terror\n");
        for c in &self.coefficients {
            s.push_str(&format!(
                "{}\t{:.12e}\t{:.12e}\t{}\t{:.3e}\n",
                c.exponent,
                c.value.re,
                c.value.im,
                c.provenance.label(),
                c.error
            ));
        }
        s
    }
}

/// Residue-derived heat coefficients for `Tr(A e^{-tQ})` down to the
/// constant term. `A` must be order zero (a multiplication operator or the
/// identity) for the geometric route.
pub fn heat_coefficients(
    engine: &TraceEngine,
    a_symbol: &ClassicalSymbol,
    q_symbol: &ClassicalSymbol,
) -> Result<HeatExpansion> {
    if a_symbol.order().norm() > 1e-12 {
        return Err(Error::Invalid(
            "heat coefficients expect an order-zero multiplier in the left slot".into(),
        ));
    }
    let n = a_symbol.dim();
    let q = q_symbol.order().re;
    let v = volume_norm(n);
    let contour = crate::contour::ContourSpec::auto_for(q_symbol, &engine.sphere)?;
    let mut out = Vec::new();
    for j in 0..=n {
        let d = (n as f64 - j as f64) / q;
        if d > 1e-12 {
            let depth = j + 1;
            let p = power_symbol(q_symbol, Complex64::new(-d, 0.0), depth, &contour, &engine.sphere)?;
            let composed = compose(a_symbol, &p.symbol, depth)?;
            let res = engine.residue(&composed)?;
            let g = gamma(Complex64::new(d, 0.0));
            out.push(HeatCoefficient {
                exponent: -d,
                value: g * res * (v / q),
                provenance: Provenance::ResidueDerived,
                error: p.error_estimate * g.norm() * v / q,
            });
        } else if d.abs() <= 1e-12 {
            let lr = engine.residue_log(a_symbol, q_symbol)?;
            out.push(HeatCoefficient {
                exponent: 0.0,
                value: -lr.value * (v / q),
                provenance: Provenance::ResidueDerived,
                error: lr.error_estimate * v / q,
            });
        }
    }
    out.sort_by(|a, b| a.exponent.partial_cmp(&b.exponent).unwrap());
    Ok(HeatExpansion { coefficients: out })
}

/// Scalar-curvature pairing on the noncommutative two-torus:
/// `<s_h, a> = 3 . (t^0 coefficient of Tr(a e^{-t Delta_h}))
///           = -(3 V / q) Res(a log Delta_h)`.
pub fn scalar_curvature_pairing(
    engine: &TraceEngine,
    cd: &ConformalData,
    a: &NcElement,
) -> Result<Complex64> {
    if a.dim() != 2 {
        return Err(Error::BadDimension(a.dim()));
    }
    let lap = conformal_laplacian(cd)?;
    let a_symbol = crate::traces::multiplication_symbol(a);
    let lr = engine.residue_log(&a_symbol, &lap.symbol)?;
    let q = lap.symbol.order().re;
    Ok(-lr.value * 3.0 * volume_norm(2) / q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::idx_zero;
    use crate::oracle::{fit_expansion, HeatKernel, OperatorMatrix};
    use crate::symbol::EvalContext;
    use std::f64::consts::PI;

    fn pair_factor(theta: &Arc<ThetaMatrix>, c: f64) -> NcElement {
        NcElement::unitary(theta.clone(), [1, 0, 0, 0])
            .add(&NcElement::unitary(theta.clone(), [-1, 0, 0, 0]))
            .unwrap()
            .scale(Complex64::new(c, 0.0))
    }

    #[test]
    fn flat_reduction_is_exact() {
        let theta = ThetaMatrix::two_d(1.0 / 2f64.sqrt());
        let cd = ConformalData::new(
            NcElement::zero(theta.clone()),
            Complex64::new(0.0, 1.0),
            8,
            1e-12,
        )
        .unwrap();
        let lap = conformal_laplacian(&cd).unwrap();
        let ctx = EvalContext::new(theta.clone(), [0.8, -1.3, 0.0, 0.0]);
        let lead = lap.symbol.eval_component(0, &ctx).unwrap().as_scalar().unwrap();
        let expect = 0.8f64 * 0.8 + 1.3 * 1.3;
        assert!((lead - Complex64::new(expect, 0.0)).norm() < 1e-13);
        for j in 1..3 {
            assert!(lap.symbol.eval_component(j, &ctx).unwrap().l1_bound() < 1e-13);
        }
    }

    #[test]
    fn symbol_route_matches_direct_terms() {
        let theta = ThetaMatrix::two_d(1.0 / 2f64.sqrt());
        let cd = ConformalData::new(
            pair_factor(&theta, 0.3),
            Complex64::new(0.4, 1.2),
            10,
            1e-12,
        )
        .unwrap();
        let lap = conformal_laplacian(&cd).unwrap();
        let direct = from_differential(theta.clone(), 2, &lap.terms);
        let probe = NcElement::unitary(theta.clone(), [1, -2, 0, 0]);
        let ctx = EvalContext::new(theta.clone(), [0.7, 0.4, 0.0, 0.0]);
        for j in 0..3 {
            let a = lap.symbol.eval_component(j, &ctx).unwrap().apply(&probe).unwrap();
            let b = direct.eval_component(j, &ctx).unwrap().apply(&probe).unwrap();
            assert!(
                a.sub(&b).unwrap().l2_norm() < 1e-12,
                "component {j} differs between compose and direct expansion"
            );
        }
    }

    #[test]
    fn matrix_realization_is_hermitian_psd_with_constant_kernel() {
        for theta in [ThetaMatrix::zero(2), ThetaMatrix::two_d(1.0 / 2f64.sqrt())] {
            let cd = ConformalData::new(
                pair_factor(&theta, 0.3),
                Complex64::new(0.0, 1.0),
                8,
                1e-12,
            )
            .unwrap();
            let lap = conformal_laplacian(&cd).unwrap();
            let m = OperatorMatrix::differential(&theta, 2, &lap.terms, 12).unwrap();
            assert!(m.hermitian_residual() < 1e-10, "hermitian residual {}", m.hermitian_residual());
            let hk = HeatKernel::new(m, 9).unwrap();
            let evs = hk.eigenvalues();
            assert!(evs[0] > -1e-8, "negative eigenvalue {}", evs[0]);
            assert!(evs[0].abs() < 1e-10, "kernel eigenvalue {}", evs[0]);
            assert!(evs[1] > 0.1, "kernel not one-dimensional: {}", evs[1]);
        }
        // kernel vector is U_0
        let theta = ThetaMatrix::zero(2);
        let cd = ConformalData::new(pair_factor(&theta, 0.3), Complex64::new(0.0, 1.0), 8, 1e-12).unwrap();
        let lap = conformal_laplacian(&cd).unwrap();
        let m = OperatorMatrix::differential(&theta, 2, &lap.terms, 10).unwrap();
        let pos = m.basis.iter().position(|b| *b == idx_zero()).unwrap();
        let col_norm: f64 = (0..m.dim()).map(|r| m.entries[(r, pos)].norm_sqr()).sum::<f64>().sqrt();
        assert!(col_norm < 1e-13, "U_0 not annihilated: {col_norm}");
    }

    #[test]
    fn flat_heat_expansion_is_pi_over_t() {
        let theta = ThetaMatrix::zero(2);
        let engine = TraceEngine::new(2);
        let id = Multiplier::identity(theta.clone());
        let q = from_differential(
            theta.clone(),
            2,
            &[([2, 0, 0, 0], id.clone()), ([0, 2, 0, 0], id)],
        );
        let one = crate::traces::identity_symbol(&theta, 2);
        let he = heat_coefficients(&engine, &one, &q).unwrap();
        let lead = he.coefficient_at(-1.0).unwrap();
        assert!((lead.value.re - PI).abs() < 1e-9, "t^-1 coefficient {}", lead.value);
        let half = he.coefficient_at(-0.5).unwrap();
        assert!(half.value.norm() < 1e-10, "odd slot {}", half.value);
        let constant = he.coefficient_at(0.0).unwrap();
        assert!(constant.value.norm() < 1e-9, "constant {}", constant.value);
        // oracle fit reproduces the same pair
        let samples: Vec<(f64, Complex64)> = (0..25)
            .map(|i| {
                let t = 0.02 + (0.1 - 0.02) * i as f64 / 24.0;
                (t, Complex64::new(crate::oracle::flat_heat_trace(2, t, 60), 0.0))
            })
            .collect();
        let fit = fit_expansion(&samples, &[-1.0, 0.0]).unwrap();
        assert!((fit.coefficients[0].re - lead.value.re).abs() < 1e-3);
        assert!((fit.coefficients[1] - constant.value).norm() < 1e-3);
    }

    #[test]
    fn flat_heat_leading_coefficient_all_dimensions() {
        for n in 1..=4usize {
            let theta = ThetaMatrix::zero(n);
            let engine = TraceEngine::new(n);
            let mut terms = Vec::new();
            for i in 0..n {
                let mut alpha = [0u32; 4];
                alpha[i] = 2;
                terms.push((alpha, Multiplier::identity(theta.clone())));
            }
            let q = from_differential(theta.clone(), n, &terms);
            let one = crate::traces::identity_symbol(&theta, n);
            let he = heat_coefficients(&engine, &one, &q).unwrap();
            let lead = he.coefficient_at(-(n as f64) / 2.0).unwrap();
            let expect = PI.powf(n as f64 / 2.0);
            assert!(
                (lead.value.re - expect).abs() < 1e-8 * expect,
                "n={n}: leading {} vs {expect}",
                lead.value
            );
        }
    }

    #[test]
    fn traceless_multiplier_kills_leading_coefficient() {
        let theta = ThetaMatrix::two_d(1.0 / 2f64.sqrt());
        let engine = TraceEngine::new(2);
        let id = Multiplier::identity(theta.clone());
        let q = from_differential(
            theta.clone(),
            2,
            &[([2, 0, 0, 0], id.clone()), ([0, 2, 0, 0], id)],
        );
        let a = NcElement::unitary(theta.clone(), [1, 0, 0, 0]);
        let a_symbol = crate::traces::multiplication_symbol(&a);
        let he = heat_coefficients(&engine, &a_symbol, &q).unwrap();
        assert!(he.coefficient_at(-1.0).unwrap().value.norm() < 1e-10);
    }

    #[test]
    fn curvature_pairing_vanishes_flat() {
        let theta = ThetaMatrix::two_d(1.0 / 2f64.sqrt());
        let engine = TraceEngine::new(2);
        let cd = ConformalData::new(
            NcElement::zero(theta.clone()),
            Complex64::new(0.0, 1.0),
            8,
            1e-12,
        )
        .unwrap();
        let one = NcElement::one(theta.clone());
        let v = scalar_curvature_pairing(&engine, &cd, &one).unwrap();
        assert!(v.norm() < 1e-9, "flat curvature pairing {v}");
        // rejected outside n = 2
        let t1 = ThetaMatrix::zero(1);
        let a1 = NcElement::one(t1);
        assert!(scalar_curvature_pairing(&engine, &cd, &a1).is_err());
    }

    #[test]
    fn conformal_heat_trace_matches_residue_route() {
        // one axis-supported conformal factor, theta = 0: compare the
        // residue-derived t^{-1} coefficient to the oracle fit
        let theta = ThetaMatrix::zero(2);
        let engine = TraceEngine::new(2);
        let cd = ConformalData::new(pair_factor(&theta, 0.3), Complex64::new(0.0, 1.0), 8, 1e-12).unwrap();
        let lap = conformal_laplacian(&cd).unwrap();
        let one_sym = crate::traces::identity_symbol(&theta, 2);
        let he = heat_coefficients(&engine, &one_sym, &lap.symbol).unwrap();
        let lead = he.coefficient_at(-1.0).unwrap().value;
        // expected pi . tau(k^{-2})
        let kinv2 = cd
            .k_sq
            .invert(16, 1e-11)
            .unwrap()
            .trace_tau();
        let expect = PI * kinv2.re;
        assert!(
            (lead.re - expect).abs() < 1e-6 * expect.abs(),
            "leading {lead} vs pi tau(k^-2) = {expect}"
        );
        // oracle side at K = 28
        let mut m = OperatorMatrix::differential(&theta, 2, &lap.terms, 28).unwrap();
        m.add_kernel_projector(1.0);
        let hk = HeatKernel::new(m, 10).unwrap();
        let ts: Vec<f64> = (0..21).map(|i| 0.05 + (0.1 - 0.05) * i as f64 / 20.0).collect();
        let samples = hk.trusted_samples(None, &ts, 1e-8).unwrap();
        let fit = fit_expansion(&samples, &[-1.0, 0.0, 1.0]).unwrap();
        let rel = (fit.coefficients[0].re - lead.re).abs() / lead.re;
        assert!(rel < 1e-3, "oracle {} vs residue {}, rel {rel}", fit.coefficients[0].re, lead.re);
    }
}
