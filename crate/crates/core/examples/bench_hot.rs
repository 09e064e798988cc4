use ncres::algebra::{NcElement, ThetaMatrix};
use ncres::multiplier::Multiplier;
use ncres::resolvent::resolvent_components;
use ncres::symbol::{from_differential, EvalContext, evaluate_batch};
use num_complex::Complex64;
use std::time::Instant;

fn main() {
    let theta = ThetaMatrix::two_d(1.0 / 2f64.sqrt());
    let mut h = NcElement::zero(theta.clone());
    h.set([1, 0, 0, 0], Complex64::new(0.1, 0.05));
    h.set([-1, 0, 0, 0], Complex64::new(0.1, -0.05));
    h.set([0, 1, 0, 0], Complex64::new(-0.07, 0.02));
    h.set([0, -1, 0, 0], Complex64::new(-0.07, -0.02));
    h.set([1, 1, 0, 0], Complex64::new(0.04, 0.0));
    h.set([-1, -1, 0, 0], Complex64::new(0.04, 0.0));
    let k2 = h.exp(5, 1e-9).unwrap();
    println!("k2 support radius: {}, terms: {}", k2.support_radius(), k2.num_terms());
    let r = Multiplier::right(k2.clone());
    let rd = Multiplier::right(k2.derive(0));
    let terms = [
        ([2, 0, 0, 0], r.clone()),
        ([0, 2, 0, 0], r.clone()),
        ([1, 0, 0, 0], rd.clone()),
        ([0, 1, 0, 0], rd),
    ];
    let q = from_differential(theta.clone(), 2, &terms);
    let exp = resolvent_components(&q, 2).unwrap();
    let exprs: Vec<_> = exp.components().to_vec();

    let t0 = Instant::now();
    let reps = 4;
    for i in 0..reps {
        let lam = Complex64::new(-1.0 - i as f64 * 0.3, 0.4);
        let ctx = EvalContext::new(theta.clone(), [0.6, 0.8, 0.0, 0.0])
            .with_lambda(lam)
            .with_support(12);
        let vals = evaluate_batch(&exprs, &ctx).unwrap();
        if i == 0 {
            println!("b2 pairing: {}", vals[2].pairing());
        }
    }
    let dt = t0.elapsed() / reps;
    println!("per (omega,lambda) node: {:.1?}", dt);
}
