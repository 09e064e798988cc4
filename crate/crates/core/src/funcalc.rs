//! Complex powers and logarithms of admissible symbols by keyhole-contour
//! quadrature against the resolvent parametrix, producing classical symbol
//! data for residue extraction.
//!
//! Powers use `A^z = (i/2pi) oint lambda^z (A - lambda)^{-1} d lambda`
//! (clockwise around the spectrum, equivalently counterclockwise with
//! `(A - lambda)^{-1}`), extended by integer shifts `A^z = A^k A^{z-k}` to
//! nonnegative real parts. The bounded keyhole makes the logarithm integral
//! finite without counterterms; the `q log|xi|` part of `log A` is isolated
//! by tabulating on the unit sphere and extending by homogeneity.

use crate::contour::{ContourNode, ContourSpec};
use crate::error::{Error, Result};
use crate::multiplier::Multiplier;
use crate::resolvent::{resolvent_components, ResolventExpansion};
use crate::sphere::SphereQuadrature;
use crate::symbol::{
    compose, delta, diff_xi, e_prod, e_real, e_sum, e_xi, e_xi_norm_sq, evaluate_batch,
    multi_indices, normalize, ClassicalSymbol, EvalContext, Expr, SphereFn,
};
use num_complex::Complex64;
use rayon::prelude::*;
use std::sync::Arc;

/// Symbol data together with the quadrature error estimate obtained by node
/// doubling.
#[derive(Debug, Clone)]
pub struct CalculusSymbol {
    pub symbol: ClassicalSymbol,
    pub error_estimate: f64,
}

/// `log Q = q log|xi| + classical part of order zero`.
#[derive(Debug, Clone)]
pub struct LogSymbol {
    /// order of the weight: coefficient of the `log|xi|` marker
    pub weight_order: f64,
    pub classical: ClassicalSymbol,
    pub error_estimate: f64,
}

enum Kernel {
    Power(Complex64),
    Log,
}

/// Tabulate `(i/2pi) oint k(lambda) b_j(omega, lambda) d lambda` over the
/// sphere grid for all `j` at once, for the coarse and doubled node counts.
fn contour_tables(
    expansion: &ResolventExpansion,
    theta: &Arc<crate::algebra::ThetaMatrix>,
    sphere: &SphereQuadrature,
    contour: &ContourSpec,
    kernel: &Kernel,
    support: i32,
) -> Result<(Vec<Vec<Multiplier>>, f64)> {
    let coarse_nodes = contour.build();
    let fine_nodes = contour.with_nodes(2 * contour.nodes).build();
    let depth = expansion.depth();
    let exprs: Vec<Arc<Expr>> = expansion.components().to_vec();

    let kernel_at = |node: &ContourNode| -> Complex64 {
        match kernel {
            Kernel::Power(z) => node.power(*z),
            Kernel::Log => node.log_lambda,
        }
    };

    let per_node: Vec<Result<(Vec<Multiplier>, Vec<Multiplier>)>> = (0..sphere.len())
        .into_par_iter()
        .map(|i| {
            let omega = sphere.nodes()[i];
            let sum_over = |nodes: &[ContourNode]| -> Result<Vec<Multiplier>> {
                let mut acc = vec![Multiplier::zero(theta.clone()); depth];
                for ln in nodes {
                    let ctx = EvalContext::new(theta.clone(), omega)
                        .with_lambda(ln.lambda)
                        .with_support(support)
                        .with_node(i);
                    let vals = evaluate_batch(&exprs, &ctx)?;
                    let k = kernel_at(ln) * ln.weight;
                    for (j, v) in vals.into_iter().enumerate() {
                        acc[j] = acc[j].add(&v.scale(k))?;
                    }
                }
                let norm = Complex64::new(0.0, 1.0) / (2.0 * std::f64::consts::PI);
                Ok(acc.into_iter().map(|m| m.scale(norm).compact()).collect())
            };
            let coarse = sum_over(&coarse_nodes)?;
            let fine = sum_over(&fine_nodes)?;
            Ok((coarse, fine))
        })
        .collect();

    let mut tables: Vec<Vec<Multiplier>> = vec![Vec::with_capacity(sphere.len()); depth];
    let mut estimate: f64 = 0.0;
    for r in per_node {
        let (coarse, fine) = r?;
        for (j, (c, f)) in coarse.into_iter().zip(fine.into_iter()).enumerate() {
            let diff = f.add(&c.scale(Complex64::new(-1.0, 0.0)))?;
            estimate = estimate.max(diff.l1_bound());
            tables[j].push(f);
        }
    }
    if !estimate.is_finite() || estimate > contour.tol {
        return Err(Error::QuadratureNonConvergence {
            estimate,
            tol: contour.tol,
        });
    }
    Ok((tables, estimate))
}

fn tables_to_symbol(
    theta: &Arc<crate::algebra::ThetaMatrix>,
    n: usize,
    order: Complex64,
    tables: Vec<Vec<Multiplier>>,
) -> ClassicalSymbol {
    let depth = tables.len();
    let mut sym = ClassicalSymbol::new(theta.clone(), n, order, depth);
    for (j, values) in tables.into_iter().enumerate() {
        let all_zero = values.iter().all(|m| m.l1_bound() < 1e-14);
        if all_zero {
            continue;
        }
        sym.set_component(
            j,
            Arc::new(Expr::Sphere(
                order - j as f64,
                SphereFn {
                    n,
                    values: Arc::new(values),
                },
            )),
        );
    }
    sym
}

/// Components `sigma_{qz-j}(Q^z)`, `j = 0..depth-1`.
pub fn power_symbol(
    q_symbol: &ClassicalSymbol,
    z: Complex64,
    depth: usize,
    contour: &ContourSpec,
    sphere: &SphereQuadrature,
) -> Result<CalculusSymbol> {
    if z == Complex64::default() {
        // Q^0 through the shifted route exercises the calculus; the trivial
        // identity is still worth shortcutting for exactness in pipelines.
        return Ok(CalculusSymbol {
            symbol: ClassicalSymbol::identity(q_symbol.theta().clone(), q_symbol.dim()),
            error_estimate: 0.0,
        });
    }
    if z.re >= 0.0 {
        // integer-shift extension: A^z = A^k A^{z-k}, Re(z - k) < 0
        let k = z.re.floor() as i64 + 1;
        let shifted = power_symbol(q_symbol, z - k as f64, depth, contour, sphere)?;
        let mut qk = q_symbol.clone();
        for _ in 1..k {
            qk = compose(&qk, q_symbol, depth + qk.order().re as usize)?;
        }
        let composed = compose(&qk, &shifted.symbol, depth)?;
        return Ok(CalculusSymbol {
            symbol: composed,
            error_estimate: shifted.error_estimate * q_symbol.order().re.max(1.0),
        });
    }
    contour.validate_for(q_symbol, sphere)?;
    let expansion = resolvent_components(q_symbol, depth.saturating_sub(1))?;
    let theta = q_symbol.theta().clone();
    let support = default_support(q_symbol);
    let (tables, err) = contour_tables(
        &expansion,
        &theta,
        sphere,
        contour,
        &Kernel::Power(z),
        support,
    )?;
    let order = z * q_symbol.order();
    Ok(CalculusSymbol {
        symbol: tables_to_symbol(&theta, q_symbol.dim(), order, tables),
        error_estimate: err,
    })
}

/// Classical part of `log Q` with the `q log|xi|` marker split off; the
/// leading classical component is `log(sigma_q)` restricted to the sphere.
pub fn log_symbol(
    q_symbol: &ClassicalSymbol,
    depth: usize,
    contour: &ContourSpec,
    sphere: &SphereQuadrature,
) -> Result<LogSymbol> {
    contour.validate_for(q_symbol, sphere)?;
    let expansion = resolvent_components(q_symbol, depth.saturating_sub(1))?;
    let theta = q_symbol.theta().clone();
    let support = default_support(q_symbol);
    let (tables, err) =
        contour_tables(&expansion, &theta, sphere, contour, &Kernel::Log, support)?;
    Ok(LogSymbol {
        weight_order: q_symbol.order().re,
        classical: tables_to_symbol(&theta, q_symbol.dim(), Complex64::default(), tables),
        error_estimate: err,
    })
}

impl LogSymbol {
    /// Full symbol value `q log|xi| . 1 + classical(xi)`.
    pub fn eval_full(&self, ctx: &EvalContext) -> Result<Multiplier> {
        let r = ctx.xi_norm();
        let mut acc = Multiplier::scalar(
            self.classical.theta().clone(),
            Complex64::new(self.weight_order * r.ln(), 0.0),
        );
        for j in 0..self.classical.depth() {
            acc = acc.add(&self.classical.eval_component(j, ctx)?)?;
        }
        Ok(acc)
    }
}

fn default_support(q_symbol: &ClassicalSymbol) -> i32 {
    // inversion box: twice the coefficient support, at least 12
    let mut r = 0;
    for comp in q_symbol.components() {
        r = r.max(expr_support(&comp.expr));
    }
    (2 * r).max(12)
}

fn expr_support(e: &Arc<Expr>) -> i32 {
    match e.as_ref() {
        Expr::Scalar(m) => m
            .terms()
            .iter()
            .map(|(u, v)| u.support_radius().max(v.support_radius()))
            .max()
            .unwrap_or(0),
        Expr::Sum(t) | Expr::Product(t) => t.iter().map(expr_support).max().unwrap_or(0),
        Expr::Inverse(c) | Expr::ScalarPower(c, _) => expr_support(c),
        Expr::Sphere(_, t) => t
            .values
            .iter()
            .flat_map(|m| m.terms().iter())
            .map(|(u, v)| u.support_radius().max(v.support_radius()))
            .max()
            .unwrap_or(0),
        _ => 0,
    }
}

/// `d_xi^gamma log|xi|` for `|gamma| >= 1`, an exact rational-homogeneous
/// expression of degree `-|gamma|`.
fn log_norm_derivative(n: usize, gamma: &crate::symbol::MultiIndex) -> Result<Arc<Expr>> {
    let i = (0..4)
        .find(|&i| gamma[i] > 0)
        .expect("gamma must be nonzero");
    // d_i log|xi| = xi_i |xi|^{-2}
    let mut g1 = [0u32; 4];
    g1[i] = 1;
    let mut e = e_prod(vec![
        e_xi(g1),
        Arc::new(Expr::ScalarPower(e_xi_norm_sq(n), Complex64::new(-1.0, 0.0))),
    ]);
    let mut rest = *gamma;
    rest[i] -= 1;
    for axis in 0..4 {
        for _ in 0..rest[axis] {
            e = diff_xi(&e, axis)?;
        }
    }
    Ok(normalize(&e))
}

/// Components of the commutator `[log Q, P]` through `depth`: the classical
/// parts compose both ways and the `q log|xi|` marker contributes only its
/// `|gamma| >= 1` derivative terms from the left slot.
pub fn log_commutator_components(
    log_q: &LogSymbol,
    p: &ClassicalSymbol,
    depth: usize,
) -> Result<ClassicalSymbol> {
    let n = p.dim();
    let lp = compose(&log_q.classical, p, depth)?;
    let pl = compose(p, &log_q.classical, depth)?;
    let mut out = ClassicalSymbol::new(p.theta().clone(), n, p.order(), depth);
    for j in 0..depth {
        let mut terms: Vec<Arc<Expr>> = Vec::new();
        if let Some(e) = lp.component(j)? {
            terms.push(e.clone());
        }
        if let Some(e) = pl.component(j)? {
            terms.push(e_prod(vec![e_real(-1.0), e.clone()]));
        }
        // marker terms: sum_{|gamma| = g >= 1} (q/gamma!) d^gamma log|xi| . delta^gamma sigma_{P, j - g}
        for g in 1..=j as u32 {
            let jb = j - g as usize;
            let Some(pcomp) = p.component(jb)? else { continue };
            for gamma in multi_indices(n, g) {
                let dlog = log_norm_derivative(n, &gamma)?;
                let mut db = pcomp.clone();
                for axis in 0..n {
                    for _ in 0..gamma[axis] {
                        db = delta(&db, axis)?;
                    }
                }
                let fact: f64 = gamma
                    .iter()
                    .map(|&a| (1..=a as u64).product::<u64>() as f64)
                    .product();
                terms.push(e_prod(vec![
                    e_real(log_q.weight_order / fact),
                    dlog,
                    db,
                ]));
            }
        }
        if !terms.is_empty() {
            out.set_component(j, normalize(&e_sum(terms)));
        }
    }
    Ok(out)
}
