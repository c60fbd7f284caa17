use funcreg_lab::bounds::{
    compute_bounds, example_reduction, log_binomial, max_rank, BoundQuery, Capacity, ClassSizes, Entropies, Variant,
    VcDims,
};
use funcreg_lab::synthgen::WorldKind;
use proptest::prelude::*;

/// Exact binomial in u128, the oracle for the log-gamma path.
fn binom_u128(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |c, i| c * (n - i) / (i + 1))
}

#[test]
fn log_binomial_70_30_matches_integer_oracle() {
    let exact = binom_u128(70, 30);
    assert_eq!(exact, 55_347_740_058_143_507_128);
    let oracle = (exact as f64).ln();
    assert!((log_binomial(70, 30).unwrap() - oracle).abs() < 1e-9);
}

#[test]
fn log_binomial_agrees_with_oracle_on_a_grid() {
    for n in [61u64, 64, 80, 100, 120] {
        for k in 0..=n {
            let exact = binom_u128(n as u128, k as u128) as f64;
            let got = log_binomial(n, k).unwrap();
            assert!((got - exact.ln()).abs() < 1e-9 * exact.ln().max(1.0), "n={n} k={k}");
        }
    }
}

#[test]
fn ln6() {
    assert_eq!(log_binomial(4, 2).unwrap(), 6f64.ln());
}

#[test]
fn masked_equals_autoencoder_one_dimension_down() {
    for d in 4..60usize {
        for r in 1..=max_rank(WorldKind::Masked, d) {
            assert_eq!(
                example_reduction(WorldKind::Masked, d, r, 0.1, 2.0).unwrap(),
                example_reduction(WorldKind::AutoEncoder, d - 1, r, 0.1, 2.0).unwrap()
            );
        }
    }
}

#[test]
fn autoencoder_reduction_grows_slowly_in_d() {
    // fixed r: ln C(d - r, r) ~ r ln d, so doubling d adds about r ln 2
    for r in [2usize, 5, 10] {
        for d in [40usize, 80, 160] {
            let a = example_reduction(WorldKind::AutoEncoder, d, r, 0.1, 1.0).unwrap();
            let b = example_reduction(WorldKind::AutoEncoder, 2 * d, r, 0.1, 1.0).unwrap();
            assert!(b > a);
            assert!((b - a) / a <= (2.0 * d as f64).ln() / (d as f64).ln());
        }
    }
}

fn entropies() -> impl Strategy<Value = Entropies> {
    (0.0f64..50.0, 0.0f64..50.0, 0.0f64..50.0, 0.0f64..1.0).prop_map(|(g, h, f, frac)| Entropies {
        ln_n_g: g,
        ln_n_h: h,
        ln_n_f: f,
        ln_n_hpruned: frac * h,
        ln_n_h_labeled: None,
    })
}

proptest! {
    #[test]
    fn thm1_monotone_in_eps_and_delta(
        ln_h in 0.0f64..20.0, ln_f in 0.0f64..20.0, ln_g in 0.0f64..20.0, frac in 0.0f64..=1.0,
        e_lo in 0.01f64..0.24, e_gap in 0.0f64..0.25, d_lo in 0.01f64..0.5, d_gap in 0.0f64..0.49,
    ) {
        let sizes = ClassSizes { ln_h, ln_f, ln_g, ln_htau: frac * ln_h };
        let at = |e: f64, d: f64| compute_bounds(&BoundQuery::new(Variant::Thm1, e, e, d, Capacity::Sizes(sizes))).unwrap();
        let small = at(e_lo, d_lo);
        let big_eps = at(e_lo + e_gap, d_lo);
        let big_delta = at(e_lo, d_lo + d_gap);
        prop_assert!(big_eps.m_u <= small.m_u && big_eps.m_l <= small.m_l);
        prop_assert!(big_delta.m_u <= small.m_u && big_delta.m_l <= small.m_l);
        prop_assert!(small.reduction >= 0.0);
        prop_assert!(small.m_u_ceil as f64 >= small.m_u && (small.m_u_ceil as f64) < small.m_u + 1.0);
    }

    #[test]
    fn thm1_symmetric_in_unlabeled_classes(ln_h in 0.0f64..20.0, ln_g in 0.0f64..20.0, ln_f in 0.0f64..20.0) {
        let q = |h: f64, g: f64| BoundQuery::new(
            Variant::Thm1, 0.1, 0.2, 0.05,
            Capacity::Sizes(ClassSizes { ln_h: h, ln_f, ln_g: g, ln_htau: 0.0 }),
        );
        let a = compute_bounds(&q(ln_h, ln_g)).unwrap();
        let b = compute_bounds(&q(ln_g, ln_h)).unwrap();
        prop_assert!((a.m_u - b.m_u).abs() <= 1e-9 * a.m_u.max(1.0));
    }

    #[test]
    fn covering_variants_scale_with_c_and_prune(e in entropies(), c in 0.1f64..10.0, eps in 0.01f64..0.49) {
        for v in [Variant::Thm2, Variant::Thm3, Variant::Thm4, Variant::Thm5] {
            let mut q = BoundQuery::new(v, eps, eps, 0.1, Capacity::Entropies(e));
            let base = compute_bounds(&q).unwrap();
            q.c = c;
            let scaled = compute_bounds(&q).unwrap();
            prop_assert!((scaled.m_l - c * base.m_l).abs() <= 1e-9 * scaled.m_l.max(1.0));
            prop_assert!(base.reduction >= -1e-12);
            prop_assert_eq!(scaled.c, c);
        }
    }

    #[test]
    fn vc_reduction_nonnegative(g_h in 0.0f64..100.0, f_p in 0.0f64..100.0, extra in 0.0f64..100.0) {
        let q = BoundQuery::new(
            Variant::Thm6, 0.1, 0.1, 0.1,
            Capacity::Vc(VcDims { g_h, f_hpruned: f_p, f_h: Some(f_p + extra) }),
        );
        let r = compute_bounds(&q).unwrap();
        prop_assert!(r.reduction >= 0.0);
        prop_assert!(r.m_l <= r.m_l_unregularized);
    }
}
