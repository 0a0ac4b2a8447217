use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ranktuner_core::bounds::{
    cmvt_witness, dirichlet, expected_rank_entropy_gap, fano_entropy_cap, fano_inverse,
    geometric_maxent_entropy, phi, rank_prob_gap, VIOLATION_TOL,
};
use ranktuner_core::stats::{k_full, k_simplified, rank_transform, relative_rank_indicator};
use ranktuner_core::weighting::{
    logit_gradient_magnitude, token_weight, LossShape, DEFAULT_TALR_FLOOR,
};
use ranktuner_core::{
    BatchContext, InitialWeight, ScaleConfig, TokenDistribution, TokenStats, WeightScheme, XiMode,
};

/// A random distribution from a symmetric Dirichlet with log-uniform concentration.
fn distribution() -> impl Strategy<Value = TokenDistribution> {
    (2usize..=128, -4.0f64..1.6, any::<u64>()).prop_map(|(v, log_alpha, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TokenDistribution::from_probs(dirichlet(&mut rng, v, log_alpha.exp())).unwrap()
    })
}

fn with_target() -> impl Strategy<Value = (TokenDistribution, usize)> {
    distribution().prop_flat_map(|d| {
        let v = d.vocab_size();
        (Just(d), 0..v)
    })
}

fn xi_mode() -> impl Strategy<Value = XiMode> {
    prop::sample::select(XiMode::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn rank_times_prob_at_most_one((d, t) in with_target(), mode in xi_mode()) {
        let s = TokenStats::from_distribution(&d, t, ScaleConfig::with_mode(mode)).unwrap();
        prop_assert!(s.rank as f64 * s.p <= 1.0 + VIOLATION_TOL);
        prop_assert!(rank_prob_gap(&s) >= -VIOLATION_TOL);
    }

    #[test]
    fn expected_rank_dominates_support_term((d, t) in with_target()) {
        let s = TokenStats::from_distribution(&d, t, ScaleConfig::default()).unwrap();
        prop_assert!(s.expected_rank >= s.support_term - VIOLATION_TOL);
        prop_assert!(expected_rank_entropy_gap(&s) >= -VIOLATION_TOL);
    }

    #[test]
    fn entropy_is_permutation_invariant_and_bounded(d in distribution(), shift in 0usize..128) {
        let v = d.vocab_size();
        let mut rotated = d.probs().to_vec();
        rotated.rotate_left(shift % v);
        let r = TokenDistribution::from_probs(rotated).unwrap();
        prop_assert!((d.entropy_bits() - r.entropy_bits()).abs() < 1e-12);
        prop_assert!((d.expected_rank() - r.expected_rank()).abs() < 1e-9);
        prop_assert!(d.entropy_bits() <= (v as f64).log2() + 1e-12);
        prop_assert!(d.entropy_bits() >= 0.0);
    }

    #[test]
    fn entropy_below_geometric_maximum(d in distribution()) {
        let a = d.expected_rank();
        if a > 1.0 + 1e-12 {
            prop_assert!(d.entropy_bits() <= geometric_maxent_entropy(a).unwrap() + 1e-9);
        } else {
            prop_assert!(d.entropy_bits() < 1e-9);
        }
    }

    #[test]
    fn indicator_is_antisymmetric(a in 1.0f64..1e4, b in 1.0f64..1e4) {
        let product = relative_rank_indicator(a, b) * relative_rank_indicator(b, a);
        prop_assert!((product - 1.0).abs() < 1e-12);
    }

    /// ξ* between R and E[R] reproduces the transform difference exactly.
    #[test]
    fn cmvt_witness_exists((d, t) in with_target()) {
        let s = TokenStats::from_distribution(&d, t, ScaleConfig::default()).unwrap();
        let (r, e) = (s.rank as f64, s.expected_rank);
        if (r - e).abs() > 1e-6 {
            let xi = cmvt_witness(r, e, 1e-13).expect("sign change on the interval");
            prop_assert!(xi >= r.min(e) && xi <= r.max(e));
            let residual = rank_transform(r) - rank_transform(e) + k_full(xi).unwrap() * (r / e).log2();
            prop_assert!(residual.abs() <= 1e-9);
        }
    }

    /// `I >= (p·s(H))^K` with `K = k_full(ξ*)` on both sides.
    #[test]
    fn surrogate_is_one_sided((d, t) in with_target()) {
        let s = TokenStats::from_distribution(&d, t, ScaleConfig::default()).unwrap();
        let (r, e) = (s.rank as f64, s.expected_rank);
        let xi = cmvt_witness(r, e, 1e-13).unwrap_or(r);
        let surrogate = (s.p * s.support_term).powf(k_full(xi).unwrap());
        prop_assert!(s.indicator >= surrogate - 1e-9, "I {} surrogate {}", s.indicator, surrogate);
    }

    #[test]
    fn fano_inverse_round_trips(v in 2usize..=512, u in 0.0f64..1.0) {
        let lo = 1.0 / v as f64 + 1e-4;
        let p = lo + u * (1.0 - lo);
        let h = fano_entropy_cap(p, v).unwrap();
        let back = fano_inverse(h, v).unwrap();
        prop_assert!((back - p).abs() < 1e-7, "p {p} back {back}");
    }

    #[test]
    fn fano_inverse_bounds_p_max(d in distribution()) {
        let cap = fano_inverse(d.entropy_bits().min((d.vocab_size() as f64).log2()), d.vocab_size()).unwrap();
        prop_assert!(d.p_max() <= cap + 1e-7);
    }

    #[test]
    fn weights_are_finite_and_nonnegative(
        (d, t) in with_target(),
        mode in xi_mode(),
        losses in prop::collection::vec(0.01f64..10.0, 1..8),
    ) {
        let s = TokenStats::from_distribution(&d, t, ScaleConfig::with_mode(mode)).unwrap();
        let ctx = BatchContext::new(losses);
        for name in WeightScheme::NAMES {
            let scheme = WeightScheme::by_name(name).unwrap();
            let w = token_weight(&scheme, &s, &d, &ctx).unwrap();
            prop_assert!(w.is_finite() && w >= 0.0, "{name}: {w}");
        }
        let over = token_weight(&WeightScheme::by_name("overtone").unwrap(), &s, &d, &ctx).unwrap();
        prop_assert!(over == 0.1 || over == 1.0);
        let talr = token_weight(&WeightScheme::by_name("talr").unwrap(), &s, &d, &ctx).unwrap();
        prop_assert!(talr >= DEFAULT_TALR_FLOOR);
        let uniform = WeightScheme::RankTuner { initial: InitialWeight::Uniform, mode };
        let prob = WeightScheme::RankTuner { initial: InitialWeight::Prob, mode };
        prop_assert_eq!(token_weight(&uniform, &s, &d, &ctx).unwrap(), s.scale);
        prop_assert_eq!(token_weight(&prob, &s, &d, &ctx).unwrap(), s.p * s.scale);
        prop_assert!(s.scale > 0.0 && s.scale <= 100.0);
    }
}

#[test]
fn k_coefficients_strictly_decrease() {
    let grid: Vec<f64> = (0..=600).map(|i| 10f64.powf(i as f64 / 100.0)).collect();
    for pair in grid.windows(2) {
        assert!(k_full(pair[1]).unwrap() < k_full(pair[0]).unwrap(), "k_full at {}", pair[1]);
        assert!(
            k_simplified(pair[1]).unwrap() < k_simplified(pair[0]).unwrap(),
            "k_simplified at {}",
            pair[1]
        );
    }
}

#[test]
fn phi_at_most_two_above_two() {
    let grid: Vec<f64> = (0..=4000).map(|i| 2.0 * 5000f64.powf(i as f64 / 4000.0)).collect();
    assert!((phi(2.0) - 2.0).abs() < 1e-15);
    for pair in grid.windows(2) {
        assert!(phi(pair[0]) <= 2.0 + 1e-12);
        assert!(phi(pair[1]) < phi(pair[0]));
    }
}

#[test]
fn neutral_point_has_unit_scale() {
    // p·s(H) = 1 exactly: a point mass on the target.
    let d = TokenDistribution::from_probs(vec![1.0, 0.0, 0.0]).unwrap();
    for mode in XiMode::ALL {
        let s = TokenStats::from_distribution(&d, 0, ScaleConfig::with_mode(mode)).unwrap();
        assert!((s.scale - 1.0).abs() < 1e-12, "{mode}: {}", s.scale);
    }
}

#[test]
fn gradient_magnitude_matches_finite_differences() {
    let h = 1e-6;
    for shape in [LossShape::Log, LossShape::Linear, LossShape::AlphaPower(0.5), LossShape::AlphaPower(2.0)] {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let derivative = (shape.value(p + h) - shape.value(p - h)) / (2.0 * h);
            let fd = -derivative * p * (1.0 - p);
            let w = logit_gradient_magnitude(shape, p).unwrap();
            assert!((w - fd).abs() <= 1e-6 * w.abs(), "{shape:?} at {p}: {w} vs {fd}");
        }
    }
}
