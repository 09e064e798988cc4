//! Right-parametrix recursion for the resolvent of an elliptic symbol:
//! `b_0 = (sigma_q - lambda)^{-1}` and the lower components chosen so the
//! composition expansion of `(Q - lambda) o B` telescopes to the identity.
//! Factor order is preserved throughout; `lambda` counts with homogeneity
//! weight `q`.

use crate::error::{Error, Result};
use crate::symbol::{
    delta, diff_xi, e_inv, e_neg, e_prod, e_real, e_sum, is_symbolic_zero, multi_indices,
    normalize, ClassicalSymbol, Expr,
};
use num_complex::Complex64;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct ResolventExpansion {
    theta: Arc<crate::algebra::ThetaMatrix>,
    n: usize,
    /// positive integer order of the weight
    pub q: u32,
    /// `b_j`, degree `-q - j` counting `lambda` at weight `q`
    components: Vec<Arc<Expr>>,
}

impl ResolventExpansion {
    pub fn component(&self, j: usize) -> Option<&Arc<Expr>> {
        self.components.get(j)
    }

    pub fn components(&self) -> &[Arc<Expr>] {
        &self.components
    }

    pub fn depth(&self) -> usize {
        self.components.len()
    }

    /// View as a lambda-parametric classical symbol of order `-q`.
    pub fn as_symbol(&self) -> ClassicalSymbol {
        let mut s = ClassicalSymbol::new(
            self.theta.clone(),
            self.n,
            Complex64::new(-(self.q as f64), 0.0),
            self.components.len(),
        );
        for (j, e) in self.components.iter().enumerate() {
            s.set_component(j, e.clone());
        }
        s
    }
}

/// Compute `b_0 .. b_J` for a differential (or exact classical) symbol of
/// positive integer order.
pub fn resolvent_components(q_symbol: &ClassicalSymbol, depth_j: usize) -> Result<ResolventExpansion> {
    let q_re = q_symbol.order().re;
    if q_symbol.order().im.abs() > 1e-12 || q_re <= 0.0 || (q_re - q_re.round()).abs() > 1e-12 {
        return Err(Error::Invalid(format!(
            "resolvent parametrix needs positive integer order, got {}",
            q_symbol.order()
        )));
    }
    let q = q_re.round() as u32;
    let n = q_symbol.dim();
    let top = q_symbol
        .component(0)?
        .ok_or_else(|| Error::MissingComponent {
            missing: format!("{}", q_symbol.order()),
            available: 0,
        })?
        .clone();
    // q_top = sigma_q - lambda
    let q_top = normalize(&e_sum(vec![top, e_neg(Arc::new(Expr::Lambda))]));
    let b0 = e_inv(q_top.clone());
    let mut components: Vec<Arc<Expr>> = vec![b0.clone()];

    for j in 1..=depth_j {
        // b_j = -b_0 sum_{|gamma| + (q - l) + m = j, m < j}
        //            (1/gamma!) d_xi^gamma sigma_l . delta^gamma b_m
        let mut terms: Vec<Arc<Expr>> = Vec::new();
        for l in (0..=q).rev() {
            let drop = (q - l) as usize;
            if drop > j {
                continue;
            }
            let sigma_l = if l == q {
                Some(&q_top)
            } else {
                q_symbol.component((q - l) as usize)?
            };
            let Some(sigma_l) = sigma_l else { continue };
            for g in 0..=(j - drop) as u32 {
                let m = j - drop - g as usize;
                if m >= j && g == 0 && drop == 0 {
                    continue; // the unknown b_j itself
                }
                if m >= components.len() {
                    continue;
                }
                for gamma in multi_indices(n, g) {
                    let mut da = sigma_l.clone();
                    let mut db = components[m].clone();
                    for i in 0..n {
                        for _ in 0..gamma[i] {
                            da = diff_xi(&da, i)?;
                            db = delta(&db, i)?;
                        }
                    }
                    let da = normalize(&da);
                    let db = normalize(&db);
                    if is_symbolic_zero(&da) || is_symbolic_zero(&db) {
                        continue;
                    }
                    let fact: f64 = gamma
                        .iter()
                        .map(|&a| (1..=a as u64).product::<u64>() as f64)
                        .product();
                    terms.push(e_prod(vec![e_real(1.0 / fact), da, db]));
                }
            }
        }
        let bj = if terms.is_empty() {
            e_real(0.0)
        } else {
            normalize(&e_neg(e_prod(vec![b0.clone(), e_sum(terms)])))
        };
        components.push(bj);
    }

    Ok(ResolventExpansion {
        theta: q_symbol.theta().clone(),
        n,
        q,
        components,
    })
}

/// Parametrix property: the composition expansion of `(Q - lambda) o B`
/// telescopes to the identity; every component below the leading one must be
/// a symbolic zero after normalization.
pub fn parametrix_residuals(
    q_symbol: &ClassicalSymbol,
    expansion: &ResolventExpansion,
) -> Result<Vec<Arc<Expr>>> {
    let mut shifted = q_symbol.clone();
    let top = q_symbol
        .component(0)?
        .expect("leading component present")
        .clone();
    shifted.set_component(0, normalize(&e_sum(vec![top, e_neg(Arc::new(Expr::Lambda))])));
    let b = expansion.as_symbol();
    let prod = crate::symbol::compose(&shifted, &b, expansion.depth())?;
    let mut out = Vec::new();
    for j in 0..expansion.depth() {
        let c = match prod.component(j)? {
            Some(e) => e.clone(),
            None => e_real(0.0),
        };
        let c = if j == 0 {
            normalize(&e_sum(vec![c, e_real(-1.0)]))
        } else {
            normalize(&c)
        };
        out.push(c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::ThetaMatrix;
    use crate::multiplier::Multiplier;
    use crate::symbol::{evaluate, from_differential, EvalContext};

    fn flat_laplacian(theta: &Arc<ThetaMatrix>) -> ClassicalSymbol {
        let id = Multiplier::identity(theta.clone());
        from_differential(
            theta.clone(),
            2,
            &[([2, 0, 0, 0], id.clone()), ([0, 2, 0, 0], id)],
        )
    }

    #[test]
    fn flat_laplacian_has_exact_resolvent() {
        let theta = ThetaMatrix::two_d(0.37);
        let q = flat_laplacian(&theta);
        let r = resolvent_components(&q, 4).unwrap();
        let ctx = EvalContext::new(theta.clone(), [0.6, -0.8, 0.0, 0.0])
            .with_lambda(Complex64::new(-2.0, 0.5));
        // b_0 = (|xi|^2 - lambda)^{-1}
        let b0 = evaluate(r.component(0).unwrap(), &ctx).unwrap().as_scalar().unwrap();
        let expect = (Complex64::new(1.0, 0.0) - Complex64::new(-2.0, 0.5)).inv();
        assert!((b0 - expect).norm() < 1e-13);
        for j in 1..=4 {
            assert!(
                is_symbolic_zero(r.component(j).unwrap()),
                "b_{j} should vanish for constant coefficients"
            );
        }
    }

    #[test]
    fn constant_shift_matches_exact_resolvent_taylor() {
        // Q = Delta + c: b_1 = 0, b_2 = -b_0 c b_0, b_3 = 0, b_4 = b_0 c b_0 c b_0.
        let theta = ThetaMatrix::zero(2);
        let c = Complex64::new(0.35, 0.0);
        let id = Multiplier::identity(theta.clone());
        let q = from_differential(
            theta.clone(),
            2,
            &[
                ([2, 0, 0, 0], id.clone()),
                ([0, 2, 0, 0], id.clone()),
                ([0, 0, 0, 0], id.scale(c)),
            ],
        );
        let r = resolvent_components(&q, 4).unwrap();
        let lambda = Complex64::new(-1.3, 0.6);
        let xi = [0.9, 0.2, 0.0, 0.0];
        let ctx = EvalContext::new(theta.clone(), xi).with_lambda(lambda);
        let b0 = (Complex64::new(xi[0] * xi[0] + xi[1] * xi[1], 0.0) - lambda).inv();
        let vals: Vec<Complex64> = (0..=4)
            .map(|j| {
                evaluate(r.component(j).unwrap(), &ctx)
                    .unwrap()
                    .as_scalar()
                    .unwrap()
            })
            .collect();
        assert!((vals[0] - b0).norm() < 1e-13);
        assert!(vals[1].norm() < 1e-13);
        assert!((vals[2] - (-b0 * c * b0)).norm() < 1e-13);
        assert!(vals[3].norm() < 1e-13);
        assert!((vals[4] - b0 * c * b0 * c * b0).norm() < 1e-13);
        // Taylor of the exact resolvent ((|xi|^2 + c) - lambda)^{-1} in c:
        let exact = (Complex64::new(xi[0] * xi[0] + xi[1] * xi[1], 0.0) + c - lambda).inv();
        let series = vals[0] + vals[2] + vals[4];
        assert!(
            (exact - series).norm() < c.norm().powi(3) * b0.norm().powi(4) * 1.5,
            "Taylor tail too large: {} vs {}",
            exact,
            series
        );
    }

    #[test]
    fn parametrix_residuals_vanish_symbolically() {
        // conformally perturbed operator with noncommutative right coefficients
        let theta = ThetaMatrix::two_d(1.0 / 2f64.sqrt());
        let h = crate::algebra::NcElement::unitary(theta.clone(), [1, 0, 0, 0])
            .add(&crate::algebra::NcElement::unitary(theta.clone(), [-1, 0, 0, 0]))
            .unwrap()
            .scale(Complex64::new(0.3, 0.0));
        let k2 = h.exp(8, 1e-12).unwrap();
        let rk2 = Multiplier::right(k2);
        let q = from_differential(
            theta.clone(),
            2,
            &[
                ([2, 0, 0, 0], rk2.clone()),
                ([0, 2, 0, 0], rk2.clone()),
                ([1, 0, 0, 0], rk2.derive(0)),
                ([0, 1, 0, 0], rk2.derive(1)),
            ],
        );
        let r = resolvent_components(&q, 4).unwrap();
        let residuals = parametrix_residuals(&q, &r).unwrap();
        for (j, res) in residuals.iter().enumerate() {
            assert!(
                is_symbolic_zero(res),
                "parametrix residual at level {j} is not a symbolic zero"
            );
        }
        // numeric cross-check of the same residuals at a random point
        let ctx = EvalContext::new(theta.clone(), [0.8, -0.55, 0.0, 0.0])
            .with_lambda(Complex64::new(-1.1, 0.4))
            .with_support(14);
        for res in &residuals {
            let v = evaluate(res, &ctx).unwrap();
            assert!(v.l1_bound() < 1e-10, "numeric residual {}", v.l1_bound());
        }
    }
}

