//! Small special-function kit: complex Gamma via Lanczos, Gauss-Legendre
//! and Gauss-Chebyshev nodes used by the sphere and contour quadratures.

use num_complex::Complex64;
use std::f64::consts::PI;

/// Lanczos coefficients for g = 7, n = 9 (double precision).
const LANCZOS_G: f64 = 7.0;
const LANCZOS_C: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Gamma function for complex argument (Lanczos approximation,
/// reflection formula for Re z < 1/2).
pub fn gamma(z: Complex64) -> Complex64 {
    if z.re < 0.5 {
        // Gamma(z) Gamma(1-z) = pi / sin(pi z)
        let pi_z = Complex64::new(PI, 0.0) * z;
        Complex64::new(PI, 0.0) / (pi_z.sin() * gamma(Complex64::new(1.0, 0.0) - z))
    } else {
        let z = z - 1.0;
        let mut x = Complex64::new(LANCZOS_C[0], 0.0);
        for (i, &c) in LANCZOS_C.iter().enumerate().skip(1) {
            x += c / (z + i as f64);
        }
        let t = z + LANCZOS_G + 0.5;
        (2.0 * PI).sqrt() * t.powc(z + 0.5) * (-t).exp() * x
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] (Newton on Legendre roots).
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let half = m.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess for the i-th root (descending).
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence: P_m(x) and P'_m(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        weights[i] = w;
        nodes[m - 1 - i] = x;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        // Exact midpoint for odd rules.
        nodes[m / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss-Chebyshev (first kind) rule for weight (1-t^2)^{-1/2} on [-1,1].
pub fn gauss_chebyshev1(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(m);
    let w = PI / m as f64;
    for k in 0..m {
        nodes.push(((2 * k + 1) as f64 * PI / (2.0 * m as f64)).cos());
    }
    (nodes, vec![w; m])
}

/// Gauss-Chebyshev (second kind) rule for weight (1-t^2)^{1/2} on [-1,1].
pub fn gauss_chebyshev2(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for k in 1..=m {
        let a = k as f64 * PI / (m as f64 + 1.0);
        nodes.push(a.cos());
        weights.push(PI / (m as f64 + 1.0) * a.sin() * a.sin());
    }
    (nodes, weights)
}

/// Principal branch complex power with the branch cut on the negative axis.
pub fn powc_principal(base: Complex64, exp: Complex64) -> Complex64 {
    base.powc(exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_known_values() {
        let half = gamma(Complex64::new(0.5, 0.0));
        assert!((half.re - PI.sqrt()).abs() < 1e-12, "Gamma(1/2) = {half}");
        assert!(half.im.abs() < 1e-12);
        let five = gamma(Complex64::new(5.0, 0.0));
        assert!((five.re - 24.0).abs() < 1e-10, "Gamma(5) = {five}");
        // |Gamma(1 + i)| = sqrt(pi / sinh(pi))
        let gi = gamma(Complex64::new(1.0, 1.0));
        let expect = (PI / PI.sinh()).sqrt();
        assert!((gi.norm() - expect).abs() < 1e-12);
    }

    #[test]
    fn gamma_recurrence() {
        let z = Complex64::new(0.3, -1.7);
        let lhs = gamma(z + 1.0);
        let rhs = z * gamma(z);
        assert!((lhs - rhs).norm() < 1e-12 * rhs.norm());
    }

    #[test]
    fn gauss_legendre_exactness() {
        // m-point rule integrates monomials up to degree 2m-1 exactly.
        let (x, w) = gauss_legendre(6);
        for deg in 0..12 {
            let got: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(deg)).sum();
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            assert!((got - exact).abs() < 1e-13, "deg {deg}: {got} vs {exact}");
        }
    }

    #[test]
    fn chebyshev_rules_integrate_weighted_constants() {
        let (_, w1) = gauss_chebyshev1(9);
        assert!((w1.iter().sum::<f64>() - PI).abs() < 1e-13);
        let (_, w2) = gauss_chebyshev2(9);
        assert!((w2.iter().sum::<f64>() - PI / 2.0).abs() < 1e-13);
    }
}
