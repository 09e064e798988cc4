//! Quadrature on the unit cotangent sphere `S^{n-1}`, `n = 1..=4`, with the
//! normalised measure `(2 pi)^{-n} dS`. Rules are Gauss chains that integrate
//! spherical polynomials exactly up to the requested degree; dimension two
//! uses equispaced angles so tabulated symbol components can be spectrally
//! differentiated and interpolated on the same grid.

use crate::special::{gauss_chebyshev2, gauss_legendre};
use num_complex::Complex64;
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    n: usize,
    nodes: Vec<[f64; 4]>,
    /// Normalised weights, summing to `vol(S^{n-1}) / (2 pi)^n`.
    weights: Vec<f64>,
    /// For `n = 2`: the equispaced angle count.
    circle_nodes: usize,
}

pub fn sphere_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        4 => 2.0 * PI * PI,
        _ => panic!("dimension {n} out of range"),
    }
}

impl SphereQuadrature {
    /// Rule exact for spherical polynomials of total degree <= `degree`.
    pub fn new(n: usize, degree: usize) -> Self {
        assert!((1..=4).contains(&n), "dimension {n} out of range");
        let norm = (2.0 * PI).powi(n as i32);
        let (raw_nodes, raw_weights, circle_nodes) = build_rule(n, degree);
        let weights = raw_weights.iter().map(|w| w / norm).collect();
        Self {
            n,
            nodes: raw_nodes,
            weights,
            circle_nodes,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[f64; 4]] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn circle_node_count(&self) -> usize {
        self.circle_nodes
    }

    /// Integrate against the normalised sphere measure.
    pub fn integrate<F: FnMut(&[f64; 4]) -> Complex64>(&self, mut f: F) -> Complex64 {
        let mut acc = Complex64::default();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += f(x) * *w;
        }
        acc
    }
}

fn build_rule(n: usize, degree: usize) -> (Vec<[f64; 4]>, Vec<f64>, usize) {
    match n {
        1 => (
            vec![[1.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0]],
            vec![1.0, 1.0],
            0,
        ),
        2 => {
            // Equispaced angles: exact for trigonometric degree < m.
            let m = (degree + 1).next_multiple_of(2).max(8);
            let w = 2.0 * PI / m as f64;
            let mut nodes = Vec::with_capacity(m);
            for j in 0..m {
                let phi = 2.0 * PI * j as f64 / m as f64;
                nodes.push([phi.cos(), phi.sin(), 0.0, 0.0]);
            }
            (nodes, vec![w; m], m)
        }
        3 => {
            // x = (t, sqrt(1-t^2) y), weight (1-t^2)^0: Gauss-Legendre in t.
            let mt = degree / 2 + 1;
            let (t_nodes, t_weights) = gauss_legendre(mt.max(4));
            let (sub_nodes, sub_weights, _) = build_rule(2, degree);
            chain(&t_nodes, &t_weights, &sub_nodes, &sub_weights)
        }
        4 => {
            // weight (1-t^2)^{1/2}: Gauss-Chebyshev second kind in t.
            let mt = degree / 2 + 1;
            let (t_nodes, t_weights) = gauss_chebyshev2(mt.max(4));
            let (sub_nodes, sub_weights, _) = build_rule(3, degree);
            chain(&t_nodes, &t_weights, &sub_nodes, &sub_weights)
        }
        _ => unreachable!(),
    }
}

fn chain(
    t_nodes: &[f64],
    t_weights: &[f64],
    sub_nodes: &[[f64; 4]],
    sub_weights: &[f64],
) -> (Vec<[f64; 4]>, Vec<f64>, usize) {
    let mut nodes = Vec::with_capacity(t_nodes.len() * sub_nodes.len());
    let mut weights = Vec::with_capacity(nodes.capacity());
    for (&t, &wt) in t_nodes.iter().zip(t_weights) {
        let s = (1.0 - t * t).max(0.0).sqrt();
        for (y, &wy) in sub_nodes.iter().zip(sub_weights) {
            nodes.push([t, s * y[0], s * y[1], s * y[2]]);
            weights.push(wt * wy);
        }
    }
    (nodes, weights, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::gamma;

    /// Closed form for even monomials: `int_{S^{n-1}} x^alpha dS
    /// = 2 prod Gamma((a_i+1)/2) / Gamma((|a|+n)/2)`.
    fn monomial_integral(n: usize, alpha: &[usize]) -> f64 {
        if alpha.iter().any(|a| a % 2 == 1) {
            return 0.0;
        }
        let mut num = 2.0;
        let mut total = 0usize;
        for &a in alpha.iter().take(n) {
            num *= gamma(Complex64::new((a as f64 + 1.0) / 2.0, 0.0)).re;
            total += a;
        }
        num / gamma(Complex64::new((total as f64 + n as f64) / 2.0, 0.0)).re
    }

    #[test]
    fn weights_sum_to_normalised_volume() {
        for n in 1..=4 {
            let q = SphereQuadrature::new(n, 8);
            let total: f64 = q.weights().iter().sum();
            let expect = sphere_volume(n) / (2.0 * PI).powi(n as i32);
            assert!(
                (total - expect).abs() < 1e-12,
                "n={n}: weight sum {total} vs {expect}"
            );
        }
    }

    #[test]
    fn integrates_monomials_exactly() {
        for n in 2..=4 {
            let q = SphereQuadrature::new(n, 10);
            let cases: &[[usize; 4]] = &[
                [0, 0, 0, 0],
                [2, 0, 0, 0],
                [0, 2, 0, 0],
                [4, 0, 0, 0],
                [2, 2, 0, 0],
                [1, 1, 0, 0],
                [3, 0, 1, 0],
                [0, 0, 2, 0],
                [2, 0, 0, 2],
                [6, 2, 0, 0],
            ];
            for alpha in cases {
                if alpha.iter().skip(n).any(|&a| a > 0) {
                    continue;
                }
                let got = q.integrate(|x| {
                    let mut v = 1.0;
                    for i in 0..n {
                        v *= x[i].powi(alpha[i] as i32);
                    }
                    Complex64::new(v, 0.0)
                });
                let expect = monomial_integral(n, alpha) / (2.0 * PI).powi(n as i32);
                assert!(
                    (got.re - expect).abs() < 1e-12 && got.im.abs() < 1e-14,
                    "n={n}, alpha={alpha:?}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn degree_two_average_is_isotropic() {
        // int x_i^2 = vol / n on every sphere.
        for n in 1..=4 {
            let q = SphereQuadrature::new(n, 6);
            for i in 0..n {
                let got = q.integrate(|x| Complex64::new(x[i] * x[i], 0.0));
                let expect = sphere_volume(n) / n as f64 / (2.0 * PI).powi(n as i32);
                assert!((got.re - expect).abs() < 1e-13, "n={n} i={i}");
            }
        }
    }
}
