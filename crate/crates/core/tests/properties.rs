use approx::assert_relative_eq;
use proptest::prelude::*;

use goaldiff::injection::{InjectionConfig, InjectionModel};
use goaldiff::math::{kmeans, rng, softmax, ParamSet, Tape, Tensor};
use goaldiff::metrics::{score_dac as plan_dac, score_nc, FrameScores, MetricWeights};
use goaldiff::multirate::{extrapolate_dac_guided, schedule, slow_invocations, Schedule};
use goaldiff::scene::bev::CH_DRIVABLE;
use goaldiff::scene::{
    generate_scenario, rasterize_bev, wrap_angle, GridConfig, LayoutKind, Pose, Trajectory,
};
use goaldiff::scorer::{score_dac, score_dis, select_raw_goal};
use goaldiff::uncertainty::laplace_nll;
use goaldiff::vocab::{nearest_brute_force, GoalVocabulary};

fn kind() -> impl Strategy<Value = LayoutKind> {
    prop::sample::select(LayoutKind::ALL.to_vec())
}

/// Points on a coarse lattice so exact distance ties actually occur.
fn lattice_points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::hash_set((-20i32..20, -20i32..20), n)
        .prop_map(|s| s.into_iter().map(|(x, y)| [x as f64, y as f64]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let p = softmax(&v);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn kmeans_objective_never_increases(
        pts in prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 12..80),
        k in 1usize..8,
        seed in any::<u64>(),
    ) {
        let pts: Vec<Vec<f64>> = pts.into_iter().map(|(x, y)| vec![x, y]).collect();
        let km = kmeans(&pts, k.min(pts.len()), seed).unwrap();
        for w in km.objective.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn zero_grad_resets_every_accumulator(vals in prop::collection::vec(-3.0f64..3.0, 1..20)) {
        let mut params = ParamSet::new();
        let id = params.add("w", Tensor::row(&vals));
        let mut tape = Tape::new();
        let w = tape.param(&params, id);
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        tape.backward(loss, &mut params).unwrap();
        prop_assert_eq!(params.grad(id).shape(), params.value(id).shape());
        params.zero_grad();
        prop_assert!(params.grad(id).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn headings_wrap_into_half_open_interval(a in -100.0f64..100.0) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        prop_assert!(((a - w) / std::f64::consts::TAU - ((a - w) / std::f64::consts::TAU).round()).abs() < 1e-9);
    }

    #[test]
    fn grid_nearest_matches_brute_force(
        pts in lattice_points(1..60),
        q in (-25.0f64..25.0, -25.0f64..25.0),
        snap in any::<bool>(),
    ) {
        let q = if snap { [q.0.round() + 0.5, q.1.round()] } else { [q.0, q.1] };
        let vocab = GoalVocabulary::new(pts.clone()).unwrap();
        prop_assert_eq!(vocab.nearest(q).0, nearest_brute_force(&pts, q));
    }

    #[test]
    fn dac_guided_agrees_with_its_characterization(
        pts in lattice_points(1..40),
        scores in prop::collection::vec(0.0f64..1.0, 40),
        q in (-25.0f64..25.0, -25.0f64..25.0),
        tau in 0.0f64..=1.0,
    ) {
        let vocab = GoalVocabulary::new(pts.clone()).unwrap();
        let dac = &scores[..pts.len()];
        let q = [q.0, q.1];
        let out = extrapolate_dac_guided(q, &vocab, dac, tau).unwrap();
        match out.snapped {
            None => prop_assert_eq!(out.point, q),
            Some(i) => {
                prop_assert!(dac[i] >= tau);
                let d = |p: [f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]);
                for (j, p) in pts.iter().enumerate() {
                    if dac[j] >= tau {
                        prop_assert!(d(*p) > d(pts[i]) || (d(*p) == d(pts[i]) && j >= i));
                    }
                }
            }
        }
    }

    #[test]
    fn dis_scores_sum_to_one_and_argmax_survives_rescaling(
        pts in lattice_points(2..40),
        target in (-20.0f64..20.0, -20.0f64..20.0),
        dac in prop::collection::vec(0.01f64..1.0, 40),
        c in 0.05f64..20.0,
    ) {
        let vocab = GoalVocabulary::new(pts.clone()).unwrap();
        let dis = score_dis(&vocab, [target.0, target.1], 2.0).unwrap();
        prop_assert!((dis.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let dac = &dac[..pts.len()];
        let base = select_raw_goal(dac, &dis, 1.0, 1.0).unwrap();
        let scaled_dis: Vec<f64> = dis.iter().map(|d| d * c).collect();
        prop_assert_eq!(select_raw_goal(dac, &scaled_dis, 1.0, 1.0).unwrap(), base);
    }

    #[test]
    fn noiseless_scorer_prefers_drivable_goals(k in kind(), seed in 0u64..500, target in (5.0f64..30.0, -8.0f64..8.0)) {
        let s = generate_scenario(k, seed, 0.5).unwrap();
        let pts: Vec<[f64; 2]> = (0..8).flat_map(|i| (0..7).map(move |j| [4.0 * i as f64, -12.0 + 4.0 * j as f64])).collect();
        let vocab = GoalVocabulary::new(pts).unwrap();
        let dac = score_dac(&vocab, &s.layout, &Pose::IDENTITY, 0.0, 0).unwrap();
        let dis = score_dis(&vocab, [target.0, target.1], 2.0).unwrap();
        let i = select_raw_goal(&dac, &dis, 1.0, 1.0).unwrap();
        if dac.iter().any(|&d| d == 1.0) {
            prop_assert!(s.dac_truth(vocab.get(i)));
        }
    }

    #[test]
    fn laplace_nll_is_translation_invariant(
        v in (-640i32..640, -640i32..640),
        mu in (-640i32..640, -640i32..640),
        b in (0.01f64..5.0, 0.01f64..5.0),
        c in -256i32..256,
    ) {
        // Dyadic coordinates keep every sum exact.
        let d = |i: i32| i as f64 / 64.0;
        let (v, mu, c) = ((d(v.0), d(v.1)), (d(mu.0), d(mu.1)), d(c));
        let a = laplace_nll([v.0, v.1], [mu.0, mu.1], [b.0, b.1]).unwrap();
        let t = laplace_nll([v.0 + c, v.1 + c], [mu.0 + c, mu.1 + c], [b.0, b.1]).unwrap();
        prop_assert_eq!(a, t);
    }

    #[test]
    fn laplace_nll_minimized_at_residual_magnitude(r in (0.05f64..5.0, -5.0f64..-0.05), f in 0.5f64..2.0) {
        let at = |b: [f64; 2]| laplace_nll([r.0, r.1], [0.0, 0.0], b).unwrap();
        let best = at([r.0.abs(), r.1.abs()]);
        if (f - 1.0).abs() > 1e-6 {
            prop_assert!(at([r.0.abs() * f, r.1.abs()]) > best);
            prop_assert!(at([r.0.abs(), r.1.abs() * f]) > best);
        }
    }

    #[test]
    fn confidence_weight_stays_strictly_inside_unit_interval(
        seed in any::<u64>(),
        b in (1e-3f64..1e3, 1e-3f64..1e3),
        scale in 0.0f64..0.5,
    ) {
        // Logits beyond about 37 round the f64 sigmoid to exactly 0 or 1.
        let mut params = ParamSet::new();
        let model = InjectionModel::new(&mut params, "inj", InjectionConfig::default(), &mut rng::seeded(seed));
        let mut r = rng::seeded(seed ^ 1);
        for id in params.ids().collect::<Vec<_>>() {
            for v in params.value_mut(id).data_mut() {
                *v += scale * rand::Rng::random_range(&mut r, -1.0..1.0);
            }
        }
        let w = model.confidence_weight(&params, [b.0, b.1]).unwrap();
        prop_assert!(w.iter().all(|&x| x > 0.0 && x < 1.0), "{w:?}");
    }

    #[test]
    fn composite_is_monotone_in_every_subscore(
        s in prop::array::uniform6(0.0f64..=1.0),
        which in 0usize..6,
        bump in 0.0f64..=1.0,
    ) {
        let w = MetricWeights::default();
        let make = |v: [f64; 6]| FrameScores::from_parts(v[0], v[1], v[2], v[3], v[4], v[5], &w).composite;
        let mut t = s;
        t[which] = (t[which] + bump).min(1.0);
        prop_assert!(make(t) >= make(s));
        prop_assert!((0.0..=1.0).contains(&make(s)));
    }

    #[test]
    fn schedule_counts_fresh_frames(frames in 1usize..200, k in 1usize..12) {
        let fresh = (0..frames).filter(|&f| schedule(f, k).unwrap() == Schedule::RunSlow).count();
        prop_assert_eq!(fresh, slow_invocations(frames, k).unwrap());
        prop_assert_eq!(fresh, frames.div_ceil(k));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn raster_drivable_channel_matches_geometry(k in kind(), seed in 0u64..10_000, cells in prop::collection::vec((0usize..128, 0usize..128), 50)) {
        let s = generate_scenario(k, seed, 0.5).unwrap();
        let cfg = GridConfig::default();
        let grid = rasterize_bev(&s, &cfg).unwrap();
        for (row, col) in cells {
            let p = cfg.cell_center(row, col);
            let expected = if s.dac_truth(p) { 1.0 } else { 0.0 };
            prop_assert_eq!(grid.get(CH_DRIVABLE, row, col), expected);
        }
    }

    #[test]
    fn expert_trajectories_are_drivable_collision_free_and_full_length(
        k in kind(),
        seed in 0u64..100_000,
        difficulty in 0.0f64..=1.0,
    ) {
        let s = generate_scenario(k, seed, difficulty).unwrap();
        prop_assert_eq!(s.gt.len(), 8);
        assert_relative_eq!(Trajectory::time(s.gt.len() - 1), 4.0);
        let pose = s.expert_pose(0.0);
        prop_assert!(s.gt.positions().iter().all(|&p| s.dac_truth(pose.to_world(p))));
        prop_assert_eq!(score_nc(&s.gt, &s.frame_agents(pose, 0.0)), 1.0);
        prop_assert_eq!(plan_dac(&s.gt, &s.layout, &pose), 1.0);
    }
}
