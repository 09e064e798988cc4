//! Classical polyhomogeneous symbols as expression trees in `xi` over
//! multiplier scalars, with exact noncommutative `xi`-differentiation,
//! coefficient derivations and asymptotic composition.
//!
//! Composition follows `sigma(AB) ~ sum_gamma (1/gamma!)
//! d_xi^gamma sigma_A . delta^gamma sigma_B`: with the Fourier convention
//! `a(x) = sum a_k e^{i<k,x>}` the coordinate derivative becomes the basis
//! derivation `delta`, absorbing the usual `(-i)^{|gamma|}` factor. The
//! convention is validated against the matrix realization in the oracle
//! tests.

use crate::algebra::ThetaMatrix;
use crate::error::{Error, Result};
use crate::multiplier::Multiplier;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::Arc;

pub type MultiIndex = [u32; 4];

pub fn multi_len(alpha: &MultiIndex) -> u32 {
    alpha.iter().sum()
}

fn multi_factorial(alpha: &MultiIndex) -> f64 {
    alpha
        .iter()
        .map(|&a| (1..=a as u64).product::<u64>() as f64)
        .product()
}

/// All multi-indices over `n` axes with `|gamma| = total`.
pub fn multi_indices(n: usize, total: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut cur = [0u32; 4];
    fn rec(n: usize, axis: usize, left: u32, cur: &mut MultiIndex, out: &mut Vec<MultiIndex>) {
        if axis + 1 == n {
            cur[axis] = left;
            out.push(*cur);
            cur[axis] = 0;
            return;
        }
        for v in 0..=left {
            cur[axis] = v;
            rec(n, axis + 1, left - v, cur, out);
        }
        cur[axis] = 0;
    }
    rec(n, 0, total, &mut cur, &mut out);
    out
}

/// Homogeneous-function table on the sphere quadrature grid. For `n = 2` the
/// grid is equispaced in angle, so values interpolate and differentiate
/// spectrally; for other dimensions values are only addressable by node.
#[derive(Debug, Clone)]
pub struct SphereFn {
    pub n: usize,
    pub values: Arc<Vec<Multiplier>>,
}

/// Symbol expression tree. `Product` is ordered; multiplier scalars do not
/// commute with each other while `Const` factors do.
#[derive(Debug, Clone)]
pub enum Expr {
    Const(Complex64),
    Scalar(Multiplier),
    /// `xi^gamma`
    Xi(MultiIndex),
    /// resolvent parameter, homogeneity weight `q` supplied by the context
    Lambda,
    Sum(Vec<Arc<Expr>>),
    Product(Vec<Arc<Expr>>),
    Inverse(Arc<Expr>),
    /// commutative scalar child raised to a complex exponent
    ScalarPower(Arc<Expr>, Complex64),
    /// tabulated homogeneous function of degree `.0`
    Sphere(Complex64, SphereFn),
}

pub fn e_const(c: Complex64) -> Arc<Expr> {
    Arc::new(Expr::Const(c))
}

pub fn e_real(c: f64) -> Arc<Expr> {
    e_const(Complex64::new(c, 0.0))
}

pub fn e_scalar(m: Multiplier) -> Arc<Expr> {
    Arc::new(Expr::Scalar(m))
}

pub fn e_xi(gamma: MultiIndex) -> Arc<Expr> {
    Arc::new(Expr::Xi(gamma))
}

pub fn e_sum(terms: Vec<Arc<Expr>>) -> Arc<Expr> {
    Arc::new(Expr::Sum(terms))
}

pub fn e_prod(factors: Vec<Arc<Expr>>) -> Arc<Expr> {
    Arc::new(Expr::Product(factors))
}

pub fn e_inv(e: Arc<Expr>) -> Arc<Expr> {
    Arc::new(Expr::Inverse(e))
}

pub fn e_neg(e: Arc<Expr>) -> Arc<Expr> {
    e_prod(vec![e_real(-1.0), e])
}

/// `|xi|^2 = sum xi_i^2`.
pub fn e_xi_norm_sq(n: usize) -> Arc<Expr> {
    let mut terms = Vec::new();
    for i in 0..n {
        let mut g = [0u32; 4];
        g[i] = 2;
        terms.push(e_xi(g));
    }
    e_sum(terms)
}

/// Evaluation context: a point `(xi, lambda)`, the lambda homogeneity weight,
/// the truncation policy for inverses, and optionally the index of the sphere
/// node `xi` corresponds to (for tabulated components).
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub theta: Arc<ThetaMatrix>,
    pub xi: [f64; 4],
    pub lambda: Option<Complex64>,
    pub support: i32,
    pub tol: f64,
    pub node_index: Option<usize>,
}

impl EvalContext {
    pub fn new(theta: Arc<ThetaMatrix>, xi: [f64; 4]) -> Self {
        Self {
            theta,
            xi,
            lambda: None,
            support: 16,
            tol: 1e-11,
            node_index: None,
        }
    }

    pub fn with_lambda(mut self, lambda: Complex64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn with_support(mut self, support: i32) -> Self {
        self.support = support;
        self
    }

    pub fn with_node(mut self, idx: usize) -> Self {
        self.node_index = Some(idx);
        self
    }

    pub fn xi_norm(&self) -> f64 {
        self.xi.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Evaluate an expression to a multiplier at `(xi, lambda)`.
pub fn evaluate(e: &Expr, ctx: &EvalContext) -> Result<Multiplier> {
    let mut memo = std::collections::HashMap::new();
    evaluate_with_memo(e, ctx, &mut memo)
}

/// Evaluate several expressions sharing one inverse cache; subtrees shared
/// between the expressions (the resolvent components all contain `b_0`) are
/// inverted once per `(xi, lambda)` point.
pub fn evaluate_batch(exprs: &[Arc<Expr>], ctx: &EvalContext) -> Result<Vec<Multiplier>> {
    let mut memo = std::collections::HashMap::new();
    exprs
        .iter()
        .map(|e| evaluate_with_memo(e, ctx, &mut memo))
        .collect()
}

fn evaluate_with_memo(
    e: &Expr,
    ctx: &EvalContext,
    memo: &mut std::collections::HashMap<*const Expr, Multiplier>,
) -> Result<Multiplier> {
    match e {
        Expr::Const(c) => Ok(Multiplier::scalar(ctx.theta.clone(), *c)),
        Expr::Scalar(m) => Ok(m.clone()),
        Expr::Xi(gamma) => {
            let mut v = 1.0;
            for i in 0..4 {
                for _ in 0..gamma[i] {
                    v *= ctx.xi[i];
                }
            }
            Ok(Multiplier::scalar(ctx.theta.clone(), Complex64::new(v, 0.0)))
        }
        Expr::Lambda => {
            let l = ctx
                .lambda
                .ok_or_else(|| Error::Evaluation("lambda not supplied".into()))?;
            Ok(Multiplier::scalar(ctx.theta.clone(), l))
        }
        Expr::Sum(terms) => {
            let mut acc = Multiplier::zero(ctx.theta.clone());
            for t in terms {
                acc = acc.add(&evaluate_with_memo(t, ctx, memo)?)?;
            }
            Ok(acc)
        }
        Expr::Product(factors) => {
            let mut acc = Multiplier::identity(ctx.theta.clone());
            for f in factors {
                acc = acc.mul(&evaluate_with_memo(f, ctx, memo)?)?;
            }
            Ok(acc)
        }
        Expr::Inverse(child) => {
            let key = e as *const Expr;
            if let Some(hit) = memo.get(&key) {
                return Ok(hit.clone());
            }
            let m = evaluate_with_memo(child, ctx, memo)?;
            let result = if let Some(c) = m.as_scalar() {
                if c.norm() < 1e-300 {
                    return Err(Error::Evaluation(format!(
                        "inverse of zero scalar at xi = {:?}, lambda = {:?}",
                        ctx.xi, ctx.lambda
                    )));
                }
                Multiplier::scalar(ctx.theta.clone(), c.inv())
            } else {
                m.inverse(ctx.support, ctx.tol).map_err(|err| match err {
                    Error::SingularElement { .. } => Error::NonElliptic {
                        xi: ctx.xi.to_vec(),
                        lambda: ctx.lambda.unwrap_or_default(),
                    },
                    other => other,
                })?
            };
            memo.insert(key, result.clone());
            Ok(result)
        }
        Expr::ScalarPower(child, exp) => {
            let m = evaluate_with_memo(child, ctx, memo)?;
            let c = m.as_scalar().ok_or_else(|| {
                Error::Evaluation("scalar power applied to noncommutative value".into())
            })?;
            Ok(Multiplier::scalar(ctx.theta.clone(), c.powc(*exp)))
        }
        Expr::Sphere(degree, table) => {
            let r = ctx.xi_norm();
            if r <= 0.0 {
                return Err(Error::Evaluation("tabulated component at xi = 0".into()));
            }
            let scale = Complex64::new(r, 0.0).powc(*degree);
            let value = if let Some(idx) = ctx.node_index {
                table.values[idx].clone()
            } else if table.n == 2 {
                interpolate_circle(&table.values, ctx.xi[1].atan2(ctx.xi[0]))?
            } else {
                return Err(Error::Evaluation(
                    "tabulated component only addressable by node outside n = 2".into(),
                ));
            };
            Ok(value.scale(scale))
        }
    }
}

/// Barycentric trigonometric interpolation on the even equispaced grid.
fn interpolate_circle(values: &[Multiplier], phi: f64) -> Result<Multiplier> {
    let m = values.len();
    debug_assert!(m % 2 == 0);
    let step = 2.0 * PI / m as f64;
    let theta = values[0].theta().clone();
    let mut acc = Multiplier::zero(theta.clone());
    for (j, v) in values.iter().enumerate() {
        let d = phi - j as f64 * step;
        let half = d / 2.0;
        let s = half.sin();
        if s.abs() < 1e-13 {
            // at (or numerically at) a grid point
            return Ok(v.clone());
        }
        let w = (m as f64 * half).sin() * (half.cos() / s) / m as f64;
        acc = acc.add(&v.scale(Complex64::new(w, 0.0)))?;
    }
    Ok(acc.compact())
}

/// Spectral differentiation matrix entry for the even equispaced grid.
fn trig_diff_weight(m: usize, j: isize, k: isize) -> f64 {
    if j == k {
        return 0.0;
    }
    let d = (j - k).rem_euclid(m as isize);
    let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
    0.5 * sign / (PI * d as f64 / m as f64).tan()
}

fn sphere_fn_angular_derivative(table: &SphereFn) -> Result<Vec<Multiplier>> {
    if table.n != 2 {
        return Err(Error::Evaluation(
            "angular derivative of tabulated component needs n = 2".into(),
        ));
    }
    let m = table.values.len();
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let theta = table.values[0].theta().clone();
        let mut acc = Multiplier::zero(theta);
        for (k, v) in table.values.iter().enumerate() {
            let w = trig_diff_weight(m, j as isize, k as isize);
            if w != 0.0 {
                acc = acc.add(&v.scale(Complex64::new(w, 0.0)))?;
            }
        }
        out.push(acc.compact());
    }
    Ok(out)
}

/// Exact symbolic `d/d xi_i`, closed on expression trees; inverses expand by
/// the noncommutative quotient rule preserving factor order.
pub fn diff_xi(e: &Arc<Expr>, i: usize) -> Result<Arc<Expr>> {
    Ok(match e.as_ref() {
        Expr::Const(_) | Expr::Scalar(_) | Expr::Lambda => e_real(0.0),
        Expr::Xi(gamma) => {
            if gamma[i] == 0 {
                e_real(0.0)
            } else {
                let mut g = *gamma;
                g[i] -= 1;
                e_prod(vec![e_real(gamma[i] as f64), e_xi(g)])
            }
        }
        Expr::Sum(terms) => e_sum(
            terms
                .iter()
                .map(|t| diff_xi(t, i))
                .collect::<Result<Vec<_>>>()?,
        ),
        Expr::Product(factors) => {
            let mut terms = Vec::new();
            for (k, f) in factors.iter().enumerate() {
                let df = diff_xi(f, i)?;
                let mut fs = factors.clone();
                fs[k] = df;
                terms.push(e_prod(fs));
            }
            e_sum(terms)
        }
        Expr::Inverse(child) => {
            let dc = diff_xi(child, i)?;
            e_neg(e_prod(vec![e_inv(child.clone()), dc, e_inv(child.clone())]))
        }
        Expr::ScalarPower(child, exp) => {
            let dc = diff_xi(child, i)?;
            e_prod(vec![
                e_const(*exp),
                Arc::new(Expr::ScalarPower(child.clone(), exp - 1.0)),
                dc,
            ])
        }
        Expr::Sphere(degree, table) => {
            // f = r^d g(phi):
            //   d1 f = r^{d-1} (d cos(phi) g - sin(phi) g')
            //   d2 f = r^{d-1} (d sin(phi) g + cos(phi) g')
            let gp = sphere_fn_angular_derivative(table)?;
            let m = table.values.len();
            let step = 2.0 * PI / m as f64;
            let mut values = Vec::with_capacity(m);
            for j in 0..m {
                let phi = j as f64 * step;
                let (c, s) = (phi.cos(), phi.sin());
                let g = &table.values[j];
                let v = if i == 0 {
                    g.scale(*degree * c).add(&gp[j].scale(Complex64::new(-s, 0.0)))?
                } else {
                    g.scale(*degree * s).add(&gp[j].scale(Complex64::new(c, 0.0)))?
                };
                values.push(v.compact());
            }
            Arc::new(Expr::Sphere(
                degree - 1.0,
                SphereFn {
                    n: 2,
                    values: Arc::new(values),
                },
            ))
        }
    })
}

/// Coefficient derivation `delta_j` through the expression.
pub fn delta(e: &Arc<Expr>, j: usize) -> Result<Arc<Expr>> {
    Ok(match e.as_ref() {
        Expr::Const(_) | Expr::Xi(_) | Expr::Lambda => e_real(0.0),
        Expr::Scalar(m) => {
            let d = m.derive(j);
            if d.is_zero() {
                e_real(0.0)
            } else {
                e_scalar(d)
            }
        }
        Expr::Sum(terms) => e_sum(
            terms
                .iter()
                .map(|t| delta(t, j))
                .collect::<Result<Vec<_>>>()?,
        ),
        Expr::Product(factors) => {
            let mut terms = Vec::new();
            for (k, f) in factors.iter().enumerate() {
                let df = delta(f, j)?;
                let mut fs = factors.clone();
                fs[k] = df;
                terms.push(e_prod(fs));
            }
            e_sum(terms)
        }
        Expr::Inverse(child) => {
            let dc = delta(child, j)?;
            e_neg(e_prod(vec![e_inv(child.clone()), dc, e_inv(child.clone())]))
        }
        Expr::ScalarPower(child, exp) => {
            let dc = delta(child, j)?;
            e_prod(vec![
                e_const(*exp),
                Arc::new(Expr::ScalarPower(child.clone(), exp - 1.0)),
                dc,
            ])
        }
        Expr::Sphere(degree, table) => {
            let values: Vec<Multiplier> = table.values.iter().map(|v| v.derive(j)).collect();
            Arc::new(Expr::Sphere(
                *degree,
                SphereFn {
                    n: table.n,
                    values: Arc::new(values),
                },
            ))
        }
    })
}

// ---------------------------------------------------------------------------
// Structural normalization: flatten sums and products, fold constants, cancel
// adjacent x . x^{-1} pairs, and collect identical terms. Enough to certify
// the parametrix residuals as symbolic zeros.
// ---------------------------------------------------------------------------

fn expr_eq(a: &Expr, b: &Expr) -> bool {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => x == y,
        (Expr::Scalar(x), Expr::Scalar(y)) => multiplier_eq(x, y),
        (Expr::Xi(x), Expr::Xi(y)) => x == y,
        (Expr::Lambda, Expr::Lambda) => true,
        (Expr::Sum(x), Expr::Sum(y)) | (Expr::Product(x), Expr::Product(y)) => {
            x.len() == y.len()
                && x.iter()
                    .zip(y.iter())
                    .all(|(p, q)| Arc::ptr_eq(p, q) || expr_eq(p, q))
        }
        (Expr::Inverse(x), Expr::Inverse(y)) => Arc::ptr_eq(x, y) || expr_eq(x, y),
        (Expr::ScalarPower(x, ex), Expr::ScalarPower(y, ey)) => {
            ex == ey && (Arc::ptr_eq(x, y) || expr_eq(x, y))
        }
        (Expr::Sphere(dx, tx), Expr::Sphere(dy, ty)) => {
            dx == dy && Arc::ptr_eq(&tx.values, &ty.values)
        }
        _ => false,
    }
}

fn multiplier_eq(a: &Multiplier, b: &Multiplier) -> bool {
    if a.terms().len() != b.terms().len() {
        return false;
    }
    a.terms().iter().zip(b.terms()).all(|((u, v), (u2, v2))| {
        u.num_terms() == u2.num_terms()
            && v.num_terms() == v2.num_terms()
            && u.iter().zip(u2.iter()).all(|((k, c), (k2, c2))| k == k2 && c == c2)
            && v.iter().zip(v2.iter()).all(|((k, c), (k2, c2))| k == k2 && c == c2)
    })
}

fn is_zero_expr(e: &Expr) -> bool {
    match e {
        Expr::Const(c) => *c == Complex64::default(),
        Expr::Scalar(m) => m.is_zero(),
        Expr::Sum(t) => t.is_empty(),
        _ => false,
    }
}

/// Normalize an expression; returns `Const(0)` exactly when the tree is a
/// structural zero.
pub fn normalize(e: &Arc<Expr>) -> Arc<Expr> {
    match e.as_ref() {
        Expr::Sum(terms) => {
            // flatten and collect identical cores
            let mut collected: Vec<(Complex64, Arc<Expr>)> = Vec::new();
            let mut stack: Vec<Arc<Expr>> = terms.clone();
            stack.reverse();
            while let Some(t) = stack.pop() {
                let t = normalize(&t);
                match t.as_ref() {
                    Expr::Sum(inner) => {
                        for x in inner.iter().rev() {
                            stack.push(x.clone());
                        }
                    }
                    _ if is_zero_expr(&t) => {}
                    _ => {
                        let (c, core) = split_const(&t);
                        if let Some(slot) =
                            collected.iter_mut().find(|(_, k)| expr_eq(k, &core))
                        {
                            slot.0 += c;
                        } else {
                            collected.push((c, core));
                        }
                    }
                }
            }
            collected.retain(|(c, _)| c.norm() != 0.0);
            match collected.len() {
                0 => e_real(0.0),
                1 => rebuild_scaled(&collected[0]),
                _ => e_sum(collected.iter().map(rebuild_scaled).collect()),
            }
        }
        Expr::Product(factors) => {
            let mut coeff = Complex64::new(1.0, 0.0);
            let mut flat: Vec<Arc<Expr>> = Vec::new();
            let mut stack: Vec<Arc<Expr>> = factors.clone();
            stack.reverse();
            while let Some(f) = stack.pop() {
                let f = normalize(&f);
                match f.as_ref() {
                    Expr::Product(inner) => {
                        for x in inner.iter().rev() {
                            stack.push(x.clone());
                        }
                    }
                    Expr::Const(c) => coeff *= c,
                    _ if is_zero_expr(&f) => return e_real(0.0),
                    _ => flat.push(f),
                }
            }
            if coeff == Complex64::default() {
                return e_real(0.0);
            }
            // cancel adjacent x . inverse(x) pairs until stable
            let mut changed = true;
            while changed {
                changed = false;
                let mut i = 0;
                while i + 1 < flat.len() {
                    let cancel = match (flat[i].as_ref(), flat[i + 1].as_ref()) {
                        (Expr::Inverse(x), y) => expr_eq(x, y),
                        (x, Expr::Inverse(y)) => expr_eq(x, y.as_ref()),
                        _ => false,
                    };
                    if cancel {
                        flat.drain(i..=i + 1);
                        changed = true;
                    } else {
                        i += 1;
                    }
                }
            }
            // then distribute over remaining sums so the outer collection
            // sees flat products; sums that match an inverse child elsewhere
            // in the product are distributed last, keeping x . x^{-1}
            // cancellations reachable
            let sum_positions: Vec<usize> = flat
                .iter()
                .enumerate()
                .filter(|(_, f)| matches!(f.as_ref(), Expr::Sum(_)))
                .map(|(i, _)| i)
                .collect();
            let chosen = if sum_positions.is_empty() {
                None
            } else {
                let mut inverse_children: Vec<Arc<Expr>> = Vec::new();
                for f in &flat {
                    collect_inverse_children(f, &mut inverse_children);
                }
                sum_positions
                    .iter()
                    .copied()
                    .find(|&i| !inverse_children.iter().any(|c| expr_eq(c, &flat[i])))
                    .or(sum_positions.last().copied())
            };
            if let Some(pos) = chosen {
                let Expr::Sum(branches) = flat[pos].as_ref() else {
                    unreachable!()
                };
                let mut expanded = Vec::with_capacity(branches.len());
                for b in branches {
                    let mut fs = flat.clone();
                    fs[pos] = b.clone();
                    if coeff != Complex64::new(1.0, 0.0) {
                        fs.insert(0, e_const(coeff));
                    }
                    expanded.push(e_prod(fs));
                }
                return normalize(&e_sum(expanded));
            }
            let mut out = flat;
            if coeff != Complex64::new(1.0, 0.0) || out.is_empty() {
                out.insert(0, e_const(coeff));
            }
            if out.len() == 1 {
                out.pop().unwrap()
            } else {
                e_prod(out)
            }
        }
        Expr::Inverse(child) => {
            let c = normalize(child);
            match c.as_ref() {
                Expr::Const(v) if v.norm() > 0.0 => e_const(v.inv()),
                Expr::Inverse(inner) => inner.clone(),
                _ => e_inv(c),
            }
        }
        Expr::ScalarPower(child, exp) => {
            let c = normalize(child);
            match c.as_ref() {
                Expr::Const(v) => e_const(v.powc(*exp)),
                _ => Arc::new(Expr::ScalarPower(c, *exp)),
            }
        }
        _ => e.clone(),
    }
}

fn collect_inverse_children(e: &Arc<Expr>, out: &mut Vec<Arc<Expr>>) {
    match e.as_ref() {
        Expr::Inverse(c) => {
            out.push(c.clone());
            collect_inverse_children(c, out);
        }
        Expr::Sum(t) | Expr::Product(t) => {
            for x in t {
                collect_inverse_children(x, out);
            }
        }
        Expr::ScalarPower(c, _) => collect_inverse_children(c, out),
        _ => {}
    }
}

fn split_const(e: &Arc<Expr>) -> (Complex64, Arc<Expr>) {
    if let Expr::Product(fs) = e.as_ref() {
        let mut coeff = Complex64::new(1.0, 0.0);
        let rest: Vec<Arc<Expr>> = fs
            .iter()
            .filter(|f| {
                if let Expr::Const(c) = f.as_ref() {
                    coeff *= c;
                    false
                } else {
                    true
                }
            })
            .cloned()
            .collect();
        let core = match rest.len() {
            0 => e_real(1.0),
            1 => rest.into_iter().next().unwrap(),
            _ => e_prod(rest),
        };
        (coeff, core)
    } else if let Expr::Const(c) = e.as_ref() {
        (*c, e_real(1.0))
    } else {
        (Complex64::new(1.0, 0.0), e.clone())
    }
}

fn rebuild_scaled((c, core): &(Complex64, Arc<Expr>)) -> Arc<Expr> {
    if *c == Complex64::new(1.0, 0.0) {
        core.clone()
    } else if matches!(core.as_ref(), Expr::Const(v) if *v == Complex64::new(1.0,0.0)) {
        e_const(*c)
    } else {
        e_prod(vec![e_const(*c), core.clone()])
    }
}

pub fn is_symbolic_zero(e: &Arc<Expr>) -> bool {
    is_zero_expr(&normalize(e))
}

// ---------------------------------------------------------------------------
// Homogeneous components and classical symbols
// ---------------------------------------------------------------------------

/// One positively homogeneous component of a classical symbol. When lambda
/// is present it counts with the declared weight of the expansion.
#[derive(Debug, Clone)]
pub struct HomogeneousComponent {
    pub degree: Complex64,
    pub expr: Arc<Expr>,
}

/// Finite descending list of exact homogeneous components, degrees
/// `order, order-1, ..`, together with the declared remainder order.
/// `exact` marks symbols (differential operators) whose missing components
/// are identically zero rather than merely not computed.
#[derive(Debug, Clone)]
pub struct ClassicalSymbol {
    theta: Arc<ThetaMatrix>,
    n: usize,
    order: Complex64,
    /// slot `j` holds the component of degree `order - j`, `None` = zero
    slots: Vec<Option<Arc<Expr>>>,
    exact: bool,
    /// closed-form total symbol, when one exists (differential symbols,
    /// shifted flat resolvent powers)
    total: Option<Arc<Expr>>,
}

impl ClassicalSymbol {
    pub fn new(theta: Arc<ThetaMatrix>, n: usize, order: Complex64, depth: usize) -> Self {
        Self {
            theta,
            n,
            order,
            slots: vec![None; depth],
            exact: false,
            total: None,
        }
    }

    pub fn identity(theta: Arc<ThetaMatrix>, n: usize) -> Self {
        let mut s = Self::new(theta, n, Complex64::default(), 1);
        s.set_component(0, e_real(1.0));
        s.exact = true;
        s.total = Some(e_real(1.0));
        s
    }

    pub fn theta(&self) -> &Arc<ThetaMatrix> {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> Complex64 {
        self.order
    }

    pub fn depth(&self) -> usize {
        self.slots.len()
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn mark_exact(&mut self) {
        self.exact = true;
    }

    pub fn total(&self) -> Option<&Arc<Expr>> {
        self.total.as_ref()
    }

    pub fn set_total(&mut self, e: Arc<Expr>) {
        self.total = Some(e);
    }

    pub fn remainder_order(&self) -> Complex64 {
        self.order - self.slots.len() as f64
    }

    pub fn set_component(&mut self, j: usize, expr: Arc<Expr>) {
        if j >= self.slots.len() {
            self.slots.resize(j + 1, None);
        }
        self.slots[j] = if is_zero_expr(&expr) { None } else { Some(expr) };
    }

    /// Component of degree `order - j`; `Ok(None)` means identically zero.
    pub fn component(&self, j: usize) -> Result<Option<&Arc<Expr>>> {
        if j < self.slots.len() {
            Ok(self.slots[j].as_ref())
        } else if self.exact {
            Ok(None)
        } else {
            Err(Error::MissingComponent {
                missing: format!("{}", self.order - j as f64),
                available: self.slots.len(),
            })
        }
    }

    /// Component at absolute degree `d` (must differ from the order by a
    /// nonnegative integer to be representable).
    pub fn component_at_degree(&self, d: Complex64) -> Result<Option<&Arc<Expr>>> {
        let j = self.order - d;
        if j.im.abs() > 1e-9 || j.re < -1e-9 || (j.re - j.re.round()).abs() > 1e-9 {
            return Ok(None);
        }
        self.component(j.re.round() as usize)
    }

    pub fn components(&self) -> impl Iterator<Item = HomogeneousComponent> + '_ {
        self.slots.iter().enumerate().filter_map(move |(j, s)| {
            s.as_ref().map(|expr| HomogeneousComponent {
                degree: self.order - j as f64,
                expr: expr.clone(),
            })
        })
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        for s in out.slots.iter_mut() {
            if let Some(e) = s {
                *s = Some(normalize(&e_prod(vec![e_const(c), e.clone()])));
            }
        }
        out.total = self.total.as_ref().map(|t| e_prod(vec![e_const(c), t.clone()]));
        out
    }

    /// Merge two symbols; orders may differ by integers.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch(self.n, other.n));
        }
        let shift = self.order - other.order;
        if shift.im.abs() > 1e-12 || (shift.re - shift.re.round()).abs() > 1e-12 {
            return Err(Error::Invalid(
                "cannot add symbols whose orders differ by a non-integer".into(),
            ));
        }
        let shift = shift.re.round() as i64;
        let (hi, lo, offset) = if shift >= 0 {
            (self, other, shift as usize)
        } else {
            (other, self, (-shift) as usize)
        };
        let depth = hi.slots.len().max(lo.slots.len() + offset);
        let mut out = Self::new(self.theta.clone(), self.n, hi.order, depth);
        out.exact = hi.exact && lo.exact;
        for (j, s) in hi.slots.iter().enumerate() {
            if let Some(e) = s {
                out.set_component(j, e.clone());
            }
        }
        for (j, s) in lo.slots.iter().enumerate() {
            if let Some(e) = s {
                let slot = j + offset;
                let merged = match &out.slots[slot] {
                    Some(prev) => e_sum(vec![prev.clone(), e.clone()]),
                    None => e.clone(),
                };
                out.set_component(slot, normalize(&merged));
            }
        }
        out.total = match (&self.total, &other.total) {
            (Some(a), Some(b)) => Some(e_sum(vec![a.clone(), b.clone()])),
            _ => None,
        };
        Ok(out)
    }

    /// Evaluate the component of degree `order - j` at a point.
    pub fn eval_component(&self, j: usize, ctx: &EvalContext) -> Result<Multiplier> {
        match self.component(j)? {
            Some(e) => evaluate(e, ctx),
            None => Ok(Multiplier::zero(self.theta.clone())),
        }
    }
}

/// Differential symbol `sum_alpha c_alpha xi^alpha`, exact with zero
/// remainder, components grouped by `|alpha|`.
pub fn from_differential(
    theta: Arc<ThetaMatrix>,
    n: usize,
    terms: &[(MultiIndex, Multiplier)],
) -> ClassicalSymbol {
    let order = terms.iter().map(|(a, _)| multi_len(a)).max().unwrap_or(0);
    let mut symbol = ClassicalSymbol::new(
        theta.clone(),
        n,
        Complex64::new(order as f64, 0.0),
        order as usize + 1,
    );
    let mut totals: Vec<Arc<Expr>> = Vec::new();
    for j in 0..=order {
        let degree = order - j;
        let mut parts: Vec<Arc<Expr>> = Vec::new();
        for (alpha, c) in terms {
            if multi_len(alpha) == degree && !c.is_zero() {
                parts.push(e_prod(vec![e_scalar(c.clone()), e_xi(*alpha)]));
            }
        }
        if !parts.is_empty() {
            let expr = normalize(&e_sum(parts));
            totals.push(expr.clone());
            symbol.set_component(j as usize, expr);
        }
    }
    symbol.mark_exact();
    symbol.set_total(normalize(&e_sum(totals)));
    symbol
}

/// Asymptotic composition `sigma(AB)`, producing `depth` components.
pub fn compose(a: &ClassicalSymbol, b: &ClassicalSymbol, depth: usize) -> Result<ClassicalSymbol> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    if a.theta().as_ref() != b.theta().as_ref() {
        return Err(Error::ThetaMismatch);
    }
    let n = a.dim();
    let order = a.order() + b.order();
    let mut out = ClassicalSymbol::new(a.theta().clone(), n, order, depth);
    out.exact = a.is_exact() && b.is_exact();
    // cache d_xi^gamma a_j lazily
    for j_out in 0..depth {
        let mut terms: Vec<Arc<Expr>> = Vec::new();
        for ja in 0..=j_out {
            for g in 0..=(j_out - ja) as u32 {
                let jb = j_out - ja - g as usize;
                let a_comp = match a.component(ja)? {
                    Some(e) => e.clone(),
                    None => continue,
                };
                let b_comp = match b.component(jb)? {
                    Some(e) => e.clone(),
                    None => continue,
                };
                for gamma in multi_indices(n, g) {
                    // (1/gamma!) d_xi^gamma a . delta^gamma b
                    let mut da = a_comp.clone();
                    let mut db = b_comp.clone();
                    for i in 0..n {
                        for _ in 0..gamma[i] {
                            da = diff_xi(&da, i)?;
                            db = delta(&db, i)?;
                        }
                    }
                    if is_zero_expr(&normalize(&da)) || is_zero_expr(&normalize(&db)) {
                        continue;
                    }
                    let w = 1.0 / multi_factorial(&gamma);
                    terms.push(e_prod(vec![e_real(w), da, db]));
                }
            }
        }
        if !terms.is_empty() {
            out.set_component(j_out, normalize(&e_sum(terms)));
        }
    }
    Ok(out)
}
