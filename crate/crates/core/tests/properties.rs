use brwlab::brw::{grow_tree, Caps, GrowMode};
use brwlab::offspring::{build_cluster_model, build_finite_variance_model, ClusterParams, OffspringModel};
use brwlab::rng::{par_fold, replica_rng, stream_key, StreamSpec};
use brwlab::stable_laws::{StableParams, StepLaw};
use brwlab::stats::{ks_two_sample, quantile};
use brwlab::walk_lab::{estimate_renewal, ladder_decompose, simulate_path, tanaka_conditioned_walk, uniform_grid, RenewalEstimate};
use brwlab::LabError;
use proptest::prelude::*;
use std::sync::OnceLock;

fn cluster(p: f64) -> OffspringModel {
    OffspringModel::Cluster(build_cluster_model(ClusterParams { alpha: 1.5, p_cluster: p, a0: 2.0, gamma: 1.5, a_max: 6.0, b2: 0.2 }).unwrap())
}

fn shared_renewal() -> &'static (OffspringModel, RenewalEstimate) {
    static CELL: OnceLock<(OffspringModel, RenewalEstimate)> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = cluster(0.1);
        let r = estimate_renewal(&m.induced_step_law(), &uniform_grid(10.0, 0.1), 2000, &StreamSpec::new(3, "prop-renewal")).unwrap();
        (m, r)
    })
}

fn step_for(kind: u8) -> StepLaw {
    match kind % 3 {
        0 => StepLaw::gaussian(1.0).unwrap(),
        1 => StepLaw::stable(StableParams::new(1.5, 1.0).unwrap()),
        _ => StepLaw::stable(StableParams::new(1.2, 0.5).unwrap()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn ladder_heights_and_epochs_are_strictly_monotone(seed in any::<u64>(), kind in 0u8..3, n in 1usize..300) {
        let step = step_for(kind);
        let path = simulate_path(&step, n, 0.0, &mut replica_rng(seed, "ladder", 0));
        let l = ladder_decompose(&path);
        for w in l.descending_heights.windows(2) { prop_assert!(w[1] < w[0]); }
        for w in l.ascending_heights.windows(2) { prop_assert!(w[1] > w[0]); }
        for w in l.descending_epochs.windows(2) { prop_assert!(w[1] > w[0]); }
        for w in l.ascending_epochs.windows(2) { prop_assert!(w[1] > w[0]); }
        prop_assert_eq!(*l.descending_heights.last().unwrap(), path.running_min[n]);
        prop_assert_eq!(*l.ascending_heights.last().unwrap(), path.running_max[n]);
        for (e, h) in l.descending_epochs.iter().zip(&l.descending_heights) {
            prop_assert_eq!(path.positions[*e], *h);
        }
    }

    #[test]
    fn running_extremes_bracket_positions(seed in any::<u64>(), kind in 0u8..3, n in 0usize..200, start in -5.0f64..5.0) {
        let path = simulate_path(&step_for(kind), n, start, &mut replica_rng(seed, "extremes", 1));
        prop_assert_eq!(path.len(), n + 1);
        for k in 0..=n {
            prop_assert!(path.running_min[k] <= path.positions[k] && path.positions[k] <= path.running_max[k]);
            if k > 0 {
                prop_assert!(path.running_min[k] <= path.running_min[k - 1]);
                prop_assert!(path.running_max[k] >= path.running_max[k - 1]);
            }
        }
    }

    #[test]
    fn tanaka_paths_stay_positive(seed in any::<u64>(), lattice in any::<bool>(), n in 1usize..120) {
        // ascending ladder epochs of the stable walks have infinite mean, so keep the steps light
        let step = if lattice { StepLaw::empirical(&[-1.0, -0.5, 0.2, 1.3]).unwrap() } else { StepLaw::gaussian(1.0).unwrap() };
        let t = tanaka_conditioned_walk(&step, n, &mut replica_rng(seed, "tanaka", 0));
        prop_assert_eq!(t.path.positions[0], 0.0);
        prop_assert!(t.path.positions[1..].iter().all(|&z| z > 0.0));
        for (e, h) in t.epochs.iter().zip(&t.heights) {
            prop_assert!(t.path.positions[*e..].iter().all(|z| z >= h));
        }
    }

    #[test]
    fn truncated_mode_agrees_with_full_mode(seed in any::<u64>(), beta in 0.5f64..8.0, n in 1usize..7) {
        let (model, ren) = shared_renewal();
        let caps = Caps::default();
        let full = grow_tree(model, n, beta, Some(ren), GrowMode::Full, caps, &mut replica_rng(seed, "mode", 0)).unwrap();
        let trunc = grow_tree(model, n, beta, Some(ren), GrowMode::TruncatedOnly, caps, &mut replica_rng(seed, "mode", 0)).unwrap();
        for (a, b) in full.gens.iter().zip(&trunc.gens) {
            prop_assert_eq!(a.w_beta, b.w_beta);
            prop_assert_eq!(a.d_beta, b.d_beta);
            prop_assert_eq!(a.pruned_population, b.pruned_population);
            prop_assert!(b.w.is_nan());
        }
    }

    #[test]
    fn trees_are_reproducible(seed in any::<u64>(), n in 0usize..6) {
        let (model, ren) = shared_renewal();
        let run = || grow_tree(model, n, 2.0, Some(ren), GrowMode::Full, Caps::default(), &mut replica_rng(seed, "repro", 7)).unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(a.gens.len(), n + 1);
        for (x, y) in a.gens.iter().zip(&b.gens) {
            prop_assert_eq!(x.w.to_bits(), y.w.to_bits());
            prop_assert_eq!(x.d_beta.to_bits(), y.d_beta.to_bits());
            prop_assert_eq!(x.population, y.population);
        }
    }

    #[test]
    fn calibration_solves_or_reports(p in 0.005f64..0.4, a0 in 1.01f64..3.0, gamma in 1.0f64..2.45, extra in 0.5f64..6.0, b2 in 0.05f64..1.5) {
        let params = ClusterParams { alpha: 1.5, p_cluster: p, a0, gamma, a_max: a0 + extra, b2 };
        match build_cluster_model(params) {
            Ok(m) => {
                let (r1, r2) = OffspringModel::Cluster(m.clone()).calibration_residuals();
                prop_assert!(r1.abs() < 1e-10 && r2.abs() < 1e-10, "residuals {r1} {r2}");
                prop_assert!(m.b1 < 0.0 && m.q > 0.0 && m.q < 1.0);
            }
            Err(e) => prop_assert!(matches!(e, LabError::Calibration { .. }), "unexpected error {e}"),
        }
    }

    #[test]
    fn finite_variance_model_is_calibrated(k in 2u64..20, mean in 1.001f64..1.9) {
        let mean = mean.min(k as f64 - 0.01);
        let m = OffspringModel::FiniteVariance(build_finite_variance_model(k, mean).unwrap());
        let (r1, r2) = m.calibration_residuals();
        prop_assert!(r1.abs() < 1e-12 && r2.abs() < 1e-12);
        prop_assert!((m.mean_offspring() - mean).abs() < 1e-12);
    }

    #[test]
    fn finite_variance_family_respects_max_children(k in 1u64..10, seed in any::<u64>()) {
        let mean = if k == 1 { 1.0 } else { (k as f64 + 1.0) / 2.0 };
        if let Ok(fv) = build_finite_variance_model(k, mean) {
            let m = OffspringModel::FiniteVariance(fv);
            let mut rng = replica_rng(seed, "fv", 0);
            for _ in 0..20 {
                prop_assert!(m.sample_offspring(&mut rng).unwrap().len() as u64 <= k);
            }
        }
    }

    #[test]
    fn stream_keys_separate_replicas_and_tags(seed in any::<u64>(), r in 0u64..1_000_000) {
        prop_assert_ne!(stream_key(seed, "a", r), stream_key(seed, "a", r + 1));
        prop_assert_ne!(stream_key(seed, "a", r), stream_key(seed, "b", r));
        prop_assert_ne!(stream_key(seed, "ab", r), stream_key(seed, "a", r));
    }

    #[test]
    fn quantiles_are_monotone(xs in prop::collection::vec(-1e6f64..1e6, 1..200), p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let (a, b) = (quantile(&xs, lo), quantile(&xs, hi));
        prop_assert!(a <= b);
    }

    #[test]
    fn ks_statistic_is_a_probability_distance(a in prop::collection::vec(-10f64..10.0, 1..60), b in prop::collection::vec(-10f64..10.0, 1..60)) {
        let d = ks_two_sample(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(ks_two_sample(&a, &a), 0.0);
        prop_assert!((d - ks_two_sample(&b, &a)).abs() < 1e-15);
    }
}

#[test]
fn renewal_estimates_are_monotone_and_start_at_one() {
    let (_, ren) = shared_renewal();
    assert_eq!(ren.r_hat[0], 1.0);
    assert!(ren.r_hat.windows(2).all(|w| w[1] >= w[0]));
    assert!(ren.k_hat.windows(2).all(|w| w[1] >= w[0]));
    let mut prev = 0.0;
    for j in 0..=300 {
        let r = ren.r(j as f64 * 0.05);
        assert!(r >= prev);
        prev = r;
    }
}

#[test]
fn parallel_fold_is_reproducible() {
    let s = StreamSpec::new(11, "fold");
    let f = || par_fold(&s, 10_000, || 0.0f64, |a, _, rng| *a += rand::Rng::random::<f64>(rng), |a, b| a + b);
    assert_eq!(f().to_bits(), f().to_bits());
}
