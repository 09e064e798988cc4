//! Keyhole contours around the spectrum of the leading symbol, with
//! composite Gauss-Legendre quadrature and branch-correct powers and
//! logarithms along the spectral cut.

use crate::error::{Error, Result};
use crate::multiplier::Multiplier;
use crate::sphere::SphereQuadrature;
use crate::symbol::{ClassicalSymbol, EvalContext};
use crate::util::with_big_stack;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Keyhole around the positive spectral interval: two straight segments
/// hugging the cut ray `arg = beta`, a small circle of radius `eps` around
/// the origin and the outer circle of radius `radius`, oriented
/// counterclockwise around the spectrum with the origin outside.
#[derive(Debug, Clone)]
pub struct ContourSpec {
    /// spectral cut angle (radians); pi for operators close to positive ones
    pub beta: f64,
    pub eps: f64,
    pub radius: f64,
    /// Gauss-Legendre nodes per panel
    pub nodes: usize,
    /// composite panels per straight segment (log-spaced)
    pub panels: usize,
    /// quadrature tolerance used by node-doubling convergence checks
    pub tol: f64,
}

impl Default for ContourSpec {
    fn default() -> Self {
        Self {
            beta: PI,
            eps: 0.5,
            radius: 8.0,
            nodes: 16,
            panels: 6,
            tol: 1e-9,
        }
    }
}

/// One quadrature node: position, `d lambda` weight, and the branch-correct
/// logarithm (the cut segments carry `arg = beta` above and `beta - 2 pi`
/// below).
#[derive(Debug, Clone, Copy)]
pub struct ContourNode {
    pub lambda: Complex64,
    pub weight: Complex64,
    pub log_lambda: Complex64,
}

impl ContourNode {
    pub fn power(&self, z: Complex64) -> Complex64 {
        (z * self.log_lambda).exp()
    }
}

impl ContourSpec {
    pub fn with_nodes(&self, nodes: usize) -> Self {
        let mut s = self.clone();
        s.nodes = nodes;
        s
    }

    /// Flat node list for the four keyhole pieces.
    pub fn build(&self) -> Vec<ContourNode> {
        let mut out = Vec::new();
        let (gl_x, gl_w) = crate::special::gauss_legendre(self.nodes);
        let beta = self.beta;
        let e_up = Complex64::from_polar(1.0, beta);
        let e_dn = Complex64::from_polar(1.0, beta - 2.0 * PI);

        // log-spaced panel boundaries on [eps, radius]
        let mut bounds = Vec::with_capacity(self.panels + 1);
        let g = (self.radius / self.eps).powf(1.0 / self.panels as f64);
        for p in 0..=self.panels {
            bounds.push(self.eps * g.powi(p as i32));
        }

        // piece 1: inward along the upper side of the cut, r from radius to eps
        for p in (0..self.panels).rev() {
            let (a, b) = (bounds[p], bounds[p + 1]);
            for (x, w) in gl_x.iter().zip(&gl_w) {
                // r runs from b down to a: flip sign via dr < 0
                let r = 0.5 * (b + a) + 0.5 * (b - a) * (-x);
                let dr = -0.5 * (b - a) * w;
                out.push(ContourNode {
                    lambda: e_up * r,
                    weight: e_up * dr,
                    log_lambda: Complex64::new(r.ln(), beta),
                });
            }
        }
        // piece 2: inner circle, phi from beta down to beta - 2 pi
        let circ_panels = self.panels.max(4);
        let (ca, cb) = (beta, beta - 2.0 * PI);
        for p in 0..circ_panels {
            let pa = ca + (cb - ca) * p as f64 / circ_panels as f64;
            let pb = ca + (cb - ca) * (p + 1) as f64 / circ_panels as f64;
            for (x, w) in gl_x.iter().zip(&gl_w) {
                let phi = 0.5 * (pa + pb) + 0.5 * (pb - pa) * x;
                let dphi = 0.5 * (pb - pa) * w;
                let lam = Complex64::from_polar(self.eps, phi);
                out.push(ContourNode {
                    lambda: lam,
                    weight: lam * Complex64::new(0.0, dphi),
                    log_lambda: Complex64::new(self.eps.ln(), phi),
                });
            }
        }
        // piece 3: outward along the lower side of the cut
        for p in 0..self.panels {
            let (a, b) = (bounds[p], bounds[p + 1]);
            for (x, w) in gl_x.iter().zip(&gl_w) {
                let r = 0.5 * (b + a) + 0.5 * (b - a) * x;
                let dr = 0.5 * (b - a) * w;
                out.push(ContourNode {
                    lambda: e_dn * r,
                    weight: e_dn * dr,
                    log_lambda: Complex64::new(r.ln(), beta - 2.0 * PI),
                });
            }
        }
        // piece 4: outer circle, phi from beta - 2 pi back to beta
        for p in 0..circ_panels {
            let pa = cb + (ca - cb) * p as f64 / circ_panels as f64;
            let pb = cb + (ca - cb) * (p + 1) as f64 / circ_panels as f64;
            for (x, w) in gl_x.iter().zip(&gl_w) {
                let phi = 0.5 * (pa + pb) + 0.5 * (pb - pa) * x;
                let dphi = 0.5 * (pb - pa) * w;
                let lam = Complex64::from_polar(self.radius, phi);
                out.push(ContourNode {
                    lambda: lam,
                    weight: lam * Complex64::new(0.0, dphi),
                    log_lambda: Complex64::new(self.radius.ln(), phi),
                });
            }
        }
        out
    }

    /// Assert that the numerical range of the leading symbol over the sphere
    /// sits strictly inside the keyhole annulus and off the cut ray.
    pub fn validate_for(&self, q_symbol: &ClassicalSymbol, sphere: &SphereQuadrature) -> Result<()> {
        let (hmin, hmax, skew) = leading_symbol_range(q_symbol, sphere)?;
        let reach = (hmax * hmax + skew * skew).sqrt();
        if hmin <= self.eps || reach >= self.radius || hmin - skew <= 0.0 {
            return Err(Error::ContourInvalid {
                min: hmin,
                max: reach,
                eps: self.eps,
                radius: self.radius,
            });
        }
        Ok(())
    }

    /// Default keyhole for a weight: `eps` below the smallest leading-symbol
    /// eigenvalue over the sphere, `radius` at four times the order times the
    /// largest.
    pub fn auto_for(q_symbol: &ClassicalSymbol, sphere: &SphereQuadrature) -> Result<Self> {
        let (hmin, hmax, skew) = leading_symbol_range(q_symbol, sphere)?;
        if hmin - skew <= 0.0 {
            return Err(Error::ContourInvalid {
                min: hmin - skew,
                max: hmax,
                eps: 0.0,
                radius: 0.0,
            });
        }
        let q = q_symbol.order().re.max(1.0);
        Ok(Self {
            beta: PI,
            eps: 0.5 * (hmin - skew).min(1.0),
            radius: (4.0 * q * (hmax + skew)).max(4.0),
            ..Self::default()
        })
    }
}

/// Hermitian-part range and skew-part bound of the leading symbol over the
/// unit sphere, from the truncated action matrices at the quadrature nodes.
pub fn leading_symbol_range(
    q_symbol: &ClassicalSymbol,
    sphere: &SphereQuadrature,
) -> Result<(f64, f64, f64)> {
    let mut hmin = f64::INFINITY;
    let mut hmax = f64::NEG_INFINITY;
    let mut skew_max: f64 = 0.0;
    for (i, node) in sphere.nodes().iter().enumerate() {
        let ctx = EvalContext::new(q_symbol.theta().clone(), *node).with_node(i);
        let m = q_symbol.eval_component(0, &ctx)?;
        let radius = m
            .terms()
            .iter()
            .map(|(u, v)| u.support_radius().max(v.support_radius()))
            .max()
            .unwrap_or(0)
            + 2;
        let a = m.action_matrix(radius)?;
        let herm = (&a + &a.t().mapv(|c| c.conj())).mapv(|c| c * 0.5);
        let skew = (&a - &a.t().mapv(|c| c.conj())).mapv(|c| c * 0.5);
        let (vals, _) = with_big_stack(|| herm.eigh(UPLO::Lower))
            .map_err(|e| Error::Evaluation(format!("eigh failed: {e}")))?;
        for v in vals.iter() {
            hmin = hmin.min(*v);
            hmax = hmax.max(*v);
        }
        skew_max = skew_max.max(crate::algebra::operator_norm_upper(&skew.mapv(|c| c)));
    }
    Ok((hmin, hmax, skew_max))
}

/// Contour sum `(i / 2 pi) sum_k w_k f(node_k)` over multiplier-valued
/// integrands, in deterministic node order.
pub fn integrate_multiplier<F>(
    nodes: &[ContourNode],
    theta: &std::sync::Arc<crate::algebra::ThetaMatrix>,
    mut f: F,
) -> Result<Multiplier>
where
    F: FnMut(&ContourNode) -> Result<Multiplier>,
{
    let mut acc = Multiplier::zero(theta.clone());
    for node in nodes {
        let v = f(node)?;
        acc = acc.add(&v.scale(node.weight))?;
    }
    Ok(acc.scale(Complex64::new(0.0, 1.0) / (2.0 * PI)).compact())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar Cauchy checks: the keyhole reproduces `a^z` and `log a`.
    #[test]
    fn scalar_power_and_log() {
        let spec = ContourSpec {
            eps: 0.3,
            radius: 10.0,
            nodes: 24,
            panels: 8,
            ..Default::default()
        };
        let nodes = spec.build();
        let a = Complex64::new(2.0, 0.0);
        for z in [
            Complex64::new(-0.5, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(-0.3, 0.7),
        ] {
            let mut acc = Complex64::default();
            for n in &nodes {
                acc += n.weight * n.power(z) / (a - n.lambda);
            }
            acc *= Complex64::new(0.0, 1.0) / (2.0 * PI);
            let expect = a.powc(z);
            assert!(
                (acc - expect).norm() < 1e-10,
                "z={z}: got {acc}, want {expect}"
            );
        }
        // bounded keyhole gives the logarithm without any counterterm
        let mut acc = Complex64::default();
        for n in &nodes {
            acc += n.weight * n.log_lambda / (a - n.lambda);
        }
        acc *= Complex64::new(0.0, 1.0) / (2.0 * PI);
        assert!(
            (acc - a.ln()).norm() < 1e-10,
            "log: got {acc}, want {}",
            a.ln()
        );
    }

    #[test]
    fn node_doubling_estimates_error() {
        let spec = ContourSpec {
            eps: 0.4,
            radius: 9.0,
            nodes: 8,
            panels: 4,
            ..Default::default()
        };
        let a = Complex64::new(1.7, 0.0);
        let z = Complex64::new(-0.7, 0.2);
        let value = |s: &ContourSpec| {
            let mut acc = Complex64::default();
            for n in s.build() {
                acc += n.weight * n.power(z) / (a - n.lambda);
            }
            acc * Complex64::new(0.0, 1.0) / (2.0 * PI)
        };
        let coarse = value(&spec);
        let fine = value(&spec.with_nodes(16));
        let finest = value(&spec.with_nodes(32));
        let estimate = (fine - coarse).norm();
        assert!(
            (finest - fine).norm() <= estimate.max(1e-13),
            "doubling estimate not conservative: {} vs {}",
            (finest - fine).norm(),
            estimate
        );
    }
}
