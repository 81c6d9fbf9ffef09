use biloop_core::problems::rng_from_seed;
use biloop_core::{
    exact_hypergradient, finite_difference_hypergradient, itd_floor, make_hyper_representation,
    make_lower_bound_instance, run_aid, run_itd, smoothness_constant, BilevelOracle, Coupling,
    HyperRepresentationDims, ItdConfig, LoopConfig, RandomQuadratic,
};
use proptest::prelude::*;

fn exact_problems() -> Vec<Box<dyn BilevelOracle>> {
    vec![
        Box::new(RandomQuadratic::new(3, 5, 20.0, 1).generate().unwrap()),
        Box::new(
            RandomQuadratic::new(2, 4, 5.0, 2)
                .with_coupling(Coupling::SlowEigenspace)
                .generate()
                .unwrap(),
        ),
        Box::new(make_lower_bound_instance(2.0, 1.0, 1.0).unwrap()),
        Box::new(make_hyper_representation(&HyperRepresentationDims::default(), 1.0, 4).unwrap()),
    ]
}

#[test]
fn exact_and_finite_difference_references_agree() {
    let mut rng = rng_from_seed(17);
    for prob in exact_problems() {
        let exact = prob.exact().unwrap();
        for _ in 0..20 {
            let x = prob.sample_outer(&mut rng);
            let truth = exact.grad_phi(&x);
            let fd = finite_difference_hypergradient(prob.as_ref(), &x, 1e-5, 1e-12).unwrap();
            let assembled = exact_hypergradient(prob.as_ref(), &x, 1e-12).unwrap();
            let scale = truth.norm().max(1.0);
            assert!(fd.sub(&truth).norm() <= 1e-5 * scale, "{}", prob.name());
            assert!(assembled.sub(&truth).norm() <= 1e-9 * scale, "{}", prob.name());
        }
    }
}

#[test]
fn aid_converges_where_itd_stalls() {
    let lb = make_lower_bound_instance(2.0, 1.0, 1.0).unwrap();
    let beta = 0.5 / smoothness_constant(&lb.constants());
    let aid = run_aid(&lb, &LoopConfig::new(1, 50, 0.25, 0.25, beta, 3000)).unwrap();
    let itd = run_itd(&lb, &ItdConfig::new(1, 0.25, beta, 3000)).unwrap();
    assert!(aid.final_grad_true_norm_sq.unwrap() <= 1e-12);
    assert!(itd.final_grad_true_norm_sq.unwrap() >= itd_floor(2.0, 1.0, 1.0, 0.25, 1) - 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn floor_bounds_every_itd_run_on_the_lower_bound_instance(
        l in 1.0f64..4.0,
        ratio in 0.05f64..1.0,
        m in 0.0f64..3.0,
        alpha_frac in 0.05f64..1.0,
        n in 1usize..6,
        beta_frac in 0.0f64..1.0,
    ) {
        let mu = l * ratio;
        let alpha = alpha_frac / l;
        let lb = make_lower_bound_instance(l, mu, m).unwrap();
        let beta = beta_frac / smoothness_constant(&lb.constants());
        let trace = run_itd(&lb, &ItdConfig::new(n, alpha, beta, 200)).unwrap();
        let floor = itd_floor(l, mu, m, alpha, n);
        let last = trace.final_grad_true_norm_sq.unwrap();
        // The bound is on the limit; iterates start from x0 = 0 and
        // approach it from above.
        prop_assert!(last >= floor - 1e-9 * floor.max(1.0), "{last} < {floor}");
    }
}
