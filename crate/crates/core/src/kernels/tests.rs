use super::*;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

#[test]
fn power_g_values() {
    assert_eq!(power_g(&[0.0, 0.0], 1.0, 2.0), 1.0);
    assert_eq!(power_g(&[1.0, 0.0], 0.0, 2.0), 1.0);
    assert_abs_diff_eq!(power_g(&[3.0, 4.0], 0.0, 3.0), 125.0, epsilon = 1e-12);
}

#[test]
fn grad_power_g_values() {
    for p in [1.5, 2.0, 3.0] {
        assert_eq!(grad_power_g(&[0.0, 0.0], 1.0, p).unwrap(), vec![0.0, 0.0]);
    }
    assert_eq!(grad_power_g(&[1.0, 0.0], 0.0, 2.0).unwrap(), vec![2.0, 0.0]);
    let g = grad_power_g(&[1.0, 1.0], 1.0, 4.0).unwrap();
    assert_abs_diff_eq!(g[0], 12.0, epsilon = 1e-12);
    assert_abs_diff_eq!(g[1], 12.0, epsilon = 1e-12);
    assert_eq!(grad_power_g(&[0.0, 0.0], 0.0, 1.5), Err(KernelError::SingularPoint));
    assert_eq!(grad_power_g(&[0.0, 0.0], 0.0, 3.0).unwrap(), vec![0.0, 0.0]);
}

fn table(p: f64, nu: f64) -> ConstantsTable {
    constants_for(&ModelParams::new(p, 0.0, nu).unwrap())
}

#[test]
fn constants_at_p2_are_exact() {
    let t = table(2.0, 1.0);
    assert_eq!(t.kappa, 0.5);
    assert_eq!(t.big_k, 1.0);
    assert_eq!(t.theta, 1.0);
    assert_eq!(t.big_theta, 2.0);
    assert_eq!(t.lambda, 0.5);
}

#[test]
fn constants_at_p3() {
    let t = table(3.0, 1.0);
    assert_abs_diff_eq!(t.big_k, 2f64.sqrt(), epsilon = 1e-15);
    assert_abs_diff_eq!(t.big_theta, 6.0 * 2f64.sqrt(), epsilon = 1e-14);
    // 5^{-1/2} / 24, the smaller of the two branch values
    assert_abs_diff_eq!(t.kappa, 1.0 / (24.0 * 5f64.sqrt()), epsilon = 1e-16);
}

#[test]
fn constants_small_p_branch() {
    let t = table(1.5, 1.0);
    assert_abs_diff_eq!(t.kappa, 2f64.powf(-1.25), epsilon = 1e-15);
    assert_abs_diff_eq!(t.big_k, 2f64.powf(0.75) / 0.5, epsilon = 1e-14);
    assert_abs_diff_eq!(t.theta, 1.5 * 0.5 * t.kappa, epsilon = 1e-15);
    assert_abs_diff_eq!(t.big_theta, 1.5 * t.big_k, epsilon = 1e-14);
}

#[test]
fn params_validation() {
    assert!(ModelParams::new(1.0, 0.0, 1.0).is_err());
    assert!(ModelParams::new(2.0, -1.0, 1.0).is_err());
    assert!(ModelParams::new(2.0, 0.0, 0.0).is_err());
    assert!(ModelParams::new(2.0, 0.0, 1.0).unwrap().with_lip(0.5).is_err());
    assert!(ModelParams::new(2.0, 0.0, 1.0).unwrap().with_lip(2.0).is_ok());
}

#[test]
fn constants_serialize_with_conventional_names() {
    let v = serde_json::to_value(table(2.0, 1.0)).unwrap();
    for key in ["kappa_p", "K_p", "theta_p", "Theta_p", "lambda"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn prima_trivial_and_degenerate_cases() {
    for p in [1.1, 1.5, 2.0, 3.0, 4.0] {
        let c = check_prima(&[0.0, 0.0], &[0.0, 0.0], 1.0, p, 16).unwrap();
        assert_abs_diff_eq!(c.margin, 0.5 - kappa_p(p), epsilon = 1e-14);
        assert!(c.holds());
    }
    let c = check_prima(&[0.3, -1.0, 2.0], &[4.0, 0.1, 0.0], 0.7, 2.0, 16).unwrap();
    assert_abs_diff_eq!(c.margin, 0.0, epsilon = 1e-14);
    assert!(c.tight());
    let s = check_seconda(&[0.3, -1.0, 2.0], &[4.0, 0.1, 0.0], 0.7, 2.0, 16).unwrap();
    assert_abs_diff_eq!(s.margin, 0.0, epsilon = 1e-14);
    let s = check_seconda(&[0.0], &[0.0], 1.0, 1.5, 16).unwrap();
    assert_abs_diff_eq!(s.margin, big_k_p(1.5) - 1.0, epsilon = 1e-14);
}

#[test]
fn segment_integral_matches_closed_form_through_origin() {
    // x = -y/2, μ = 0: ∫₀¹ |t − 1/2|^{p−2} |y|^{p−2} dt = 2 (1/2)^{p−1}/(p−1) |y|^{p−2}
    for p in [1.1, 1.5, 1.9] {
        let y = [2.0, 0.0];
        let x = [-1.0, 0.0];
        let (v, err) = {
            let r = segment_integral(&x, &y, 0.0, p, SegmentWeight::One, 16).unwrap();
            (r.value, r.error_bound)
        };
        let exact = 2.0 * 0.5f64.powf(p - 1.0) / (p - 1.0) * 2f64.powf(p - 2.0);
        assert!((v - exact).abs() < 1e-11 * exact, "p={p}: {v} vs {exact}");
        assert!(err < 1e-10 * exact);
        // (1 − t) weight: by symmetry about 1/2 it is half the unweighted value
        let (w, _) = segment_integral_weighted(&x, &y, 0.0, p, 16).unwrap();
        assert!((w - exact / 2.0).abs() < 1e-11 * exact);
    }
}

#[test]
fn segment_integral_matches_simple_closed_form_off_origin() {
    // x = e₁, y = e₂, μ = 0, p = 4: ∫₀¹ (1 + t²) dt = 4/3
    let r = segment_integral(&[1.0, 0.0], &[0.0, 1.0], 0.0, 4.0, SegmentWeight::One, 16).unwrap();
    assert_abs_diff_eq!(r.value, 4.0 / 3.0, epsilon = 1e-14);
    let r = segment_integral(&[1.0, 0.0], &[0.0, 1.0], 0.0, 4.0, SegmentWeight::OneMinusT, 16).unwrap();
    // ∫₀¹ (1 + t²)(1 − t) dt = 1 − 1/2 + 1/3 − 1/4
    assert_abs_diff_eq!(r.value, 7.0 / 12.0, epsilon = 1e-14);
}

#[test]
fn singular_origin_is_rejected_for_small_p() {
    assert_eq!(check_prima(&[0.0], &[0.0], 0.0, 1.5, 16), Err(KernelError::SingularPoint));
    assert!(matches!(
        check_prima(&[1.0], &[1.0], 0.0, 1.5, 8),
        Err(KernelError::Quadrature(QuadratureError::TooFewNodes(8)))
    ));
}

#[test]
fn taylor_bounds_tight_at_p2() {
    let (c, [lo, hi]) = check_taylor_bounds(&[0.4, -2.0, 1.0], &[3.0, 0.5, -0.2], 0.0, 2.0).unwrap();
    assert_abs_diff_eq!(lo, 0.0, epsilon = 1e-12);
    let y2 = 9.0 + 0.25 + 0.04;
    assert_abs_diff_eq!(hi, y2, epsilon = 1e-12);
    assert!(c.holds() && c.tight());
    let (_, m) = check_taylor_bounds(&[1.0, 2.0], &[0.0, 0.0], 0.5, 3.0).unwrap();
    assert_eq!(m, [0.0, 0.0]);
    assert_eq!(check_taylor_bounds(&[0.0], &[1.0], 0.0, 1.5), Err(KernelError::SingularPoint));
}

#[test]
fn product_taylor_trivial_cases() {
    let c = check_product_taylor(&[1.0, 2.0], &[0.0, 0.0], &[0.5], &[0.0], 1.0, 3.0, 2.0).unwrap();
    assert_abs_diff_eq!(c.margin, 0.0, epsilon = 1e-12);
    // β = 0 reduces to the remainder bound in x
    let x = [0.3, -0.7];
    let xi = [1.1, 0.4];
    let c = check_product_taylor(&x, &xi, &[5.0], &[2.0], 0.5, 1.5, 0.0).unwrap();
    let (t, [lo, _]) = check_taylor_bounds(&x, &xi, 0.5, 1.5).unwrap();
    assert_abs_diff_eq!(c.margin, lo, epsilon = 1e-12);
    assert!(c.holds() && t.holds());
}

#[test]
fn lemma10_and_12_ranges_and_trivia() {
    assert!(check_lemma10(&[1.0], &[1.0], 0.0, 2.5, 0.5).is_err());
    assert!(check_lemma10(&[1.0], &[1.0], 0.0, 1.5, 1.0).is_err());
    assert!(check_lemma12(1.0, 1.0, 0.0, 3.0, 0.5).is_err());
    let c = check_lemma10(&[1.0, 2.0], &[0.0, 0.0], 0.3, 1.5, 0.5).unwrap();
    assert!(c.holds());
    let c = check_lemma12(2.0, 0.0, 1.0, 1.5, 0.5).unwrap();
    assert_abs_diff_eq!(c.margin, 0.5 * 2f64.powf(1.5) + 0.5, epsilon = 1e-14);
    let c = check_lemma12(1.0, 3.0, 1.0, 2.0, 0.25).unwrap();
    assert_abs_diff_eq!(c.margin, 8.0 * 9.0 + 0.25 + 0.25 - 9.0, epsilon = 1e-12);
}

#[test]
fn gradient_lipschitz_exact_at_p2() {
    let f = PowerPotential::new(0.0, 2.0);
    let c = check_gradient_lipschitz(&f, power_hessian_bound(2.0), &[1.0, -3.0], &[0.5, 2.0], 0.0, 2.0).unwrap();
    assert_abs_diff_eq!(c.margin, 0.0, epsilon = 1e-12);
    let c = check_gradient_lipschitz(&f, 2.0, &[1.0, -3.0], &[0.0, 0.0], 0.0, 2.0).unwrap();
    assert_eq!(c.margin, 0.0);

    struct NoGrad;
    impl Potential for NoGrad {
        fn value(&self, x: &[f64]) -> f64 {
            norm_sq(x)
        }
        fn gradient(&self, _: &[f64]) -> Option<Vec<f64>> {
            None
        }
    }
    assert_eq!(
        check_gradient_lipschitz(&NoGrad, 2.0, &[1.0], &[1.0], 0.0, 2.0),
        Err(KernelError::MissingGradient)
    );
}

#[test]
fn lemma4_constant_values() {
    // p = 2 in the small-p branch: 1 + max(1/ε, 1/(4ε))
    assert_abs_diff_eq!(lemma4_constant(2.0, 0.5).unwrap(), 3.0, epsilon = 1e-14);
    // p = 4: r = 1, C1 = 6 + 1/ε, a = 2, young = (C1/2)·(ε/C1)^{-1} = C1²/(2ε)
    let eps: f64 = 0.5;
    let c1: f64 = 6.0 + 1.0 / eps;
    let expected = c1.max(3.0 + c1 * c1 / (2.0 * eps));
    assert_abs_diff_eq!(lemma4_constant(4.0, eps).unwrap(), expected, epsilon = 1e-12);
    assert!(lemma4_constant(1.0, 0.5).is_err());
}

#[test]
fn lemma4_trivial_cases_and_normalization_guard() {
    let f = PowerPotential::unit_lipschitz(0.5, 3.0);
    let c = check_lemma4(&f, &[1.0, 0.0], &[0.3, 0.2], &[0.0, 0.0], 0.5, 3.0, 0.5).unwrap();
    assert!(c.holds());
    let c = check_lemma4(&f, &[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], 0.5, 3.0, 0.5).unwrap();
    assert_abs_diff_eq!(c.margin, 0.0, epsilon = 1e-12);
    // Unscaled power kernel at p = 3 has gradient modulus 6√2·W, violating the unit normalization.
    let raw = PowerPotential::new(0.5, 3.0);
    assert!(matches!(
        check_lemma4(&raw, &[1.0, 0.0], &[0.3, 0.2], &[0.1, 0.1], 0.5, 3.0, 0.5),
        Err(KernelError::Normalization(_))
    ));
}

fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-5.0f64..5.0, dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn constants_ordering(p in 1.0001f64..8.0, nu in 0.01f64..10.0) {
        let t = table(p, nu);
        prop_assert!(t.kappa > 0.0 && t.kappa <= 0.5);
        prop_assert!(t.big_k >= 1.0);
        prop_assert!(t.theta > 0.0 && t.theta <= t.big_theta);
        prop_assert_eq!(t.lambda, nu / t.big_theta);
    }

    #[test]
    fn gradient_matches_central_differences(x in vec_strategy(3), mu in 0.1f64..2.0, p in 1.1f64..5.0) {
        let g = grad_power_g(&x, mu, p).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (power_g(&a, mu, p) - power_g(&b, mu, p)) / (2.0 * h);
            let scale = norm_sq(&g).sqrt().max(1e-3);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * scale, "fd {} vs {}", fd, g[i]);
        }
    }

    #[test]
    fn segment_margins_are_continuous(x in vec_strategy(3), y in vec_strategy(3), mu in 0.2f64..2.0, p in 1.2f64..4.0) {
        let d = 1e-7;
        let xp: Vec<f64> = x.iter().map(|v| v + d).collect();
        let a = check_prima(&x, &y, mu, p, 16).unwrap();
        let b = check_prima(&xp, &y, mu, p, 16).unwrap();
        let scale = a.scale.max(1.0);
        prop_assert!((a.margin - b.margin).abs() <= 1e-4 * scale);
        let a = check_seconda(&x, &y, mu, p, 16).unwrap();
        let b = check_seconda(&xp, &y, mu, p, 16).unwrap();
        prop_assert!((a.margin - b.margin).abs() <= 1e-4 * a.scale.max(1.0));
    }

    #[test]
    fn taylor_lower_bound_tight_at_p2_mu0(x in vec_strategy(4), y in vec_strategy(4)) {
        let (_, [lo, _]) = check_taylor_bounds(&x, &y, 0.0, 2.0).unwrap();
        prop_assert!(lo.abs() <= 1e-12 * (1.0 + norm_sq(&x) + norm_sq(&y)));
    }

    #[test]
    fn taylor_bounds_hold(x in vec_strategy(3), y in vec_strategy(3), pi in 0usize..3, mi in 0usize..3) {
        let p = [1.2, 2.0, 4.0][pi];
        let mu = [0.0, 0.5, 2.0][mi];
        prop_assume!(mu > 0.0 || p >= 2.0 || norm_sq(&x) > 0.0);
        let (c, _) = check_taylor_bounds(&x, &y, mu, p).unwrap();
        prop_assert!(c.holds(), "margin {}", c.margin);
    }

    #[test]
    fn segment_bounds_hold(x in vec_strategy(4), y in vec_strategy(4), pi in 0usize..3, mi in 0usize..2) {
        let p = [1.5, 2.0, 3.0][pi];
        let mu = [0.0, 1.0][mi];
        prop_assert!(check_prima(&x, &y, mu, p, 16).unwrap().holds());
        prop_assert!(check_seconda(&x, &y, mu, p, 16).unwrap().holds());
    }

    #[test]
    fn lemma12_holds(a in 0.0f64..10.0, b in 0.0f64..10.0, mu in 0.0f64..10.0, p in 1.0001f64..2.0, eps in 0.001f64..0.999) {
        prop_assert!(check_lemma12(a, b, mu, p, eps).unwrap().holds());
    }

    #[test]
    fn lemma10_holds(x in vec_strategy(3), y in vec_strategy(3), mu in 0.0f64..3.0, p in 1.0001f64..2.0, ei in 0usize..3) {
        let eps = [0.1, 0.5, 0.9][ei];
        prop_assert!(check_lemma10(&x, &y, mu, p, eps).unwrap().holds());
    }
}
