use mfswarm::collision::{integrate_epoch, repulsion, ApfConfig};
use mfswarm::envs::{aggregation_reward, formation_reward, task_process, EnvConfig, EnvKind, Task, TaskState};
use mfswarm::meanfield::{
    bin_index, empirical_histogram, mf_transition, sample_decision_rule, BinRule, GridSpec, MeanFieldAction,
};
use mfswarm::policy_nn::{squash_to_mfc, ActionMode, SquashSpec};
use mfswarm::sim_core::{clip_to_disc, min_pairwise_distance, sample_initial, step_swarm, ActionBatch, SpaceConfig, SwarmState};
use mfswarm::{SeedStream, Vec2};
use proptest::prelude::*;

const M: f64 = 2.0;

fn vec2(range: f64) -> impl Strategy<Value = Vec2> {
    (-range..=range, -range..=range).prop_map(|(x, y)| Vec2::new(x, y))
}

fn in_box() -> impl Strategy<Value = Vec2> {
    prop_oneof![
        8 => vec2(M),
        1 => (prop::sample::select(vec![-M, M]), -M..=M).prop_map(|(a, b)| Vec2::new(a, b)),
        1 => (-M..=M, prop::sample::select(vec![-M, M])).prop_map(|(a, b)| Vec2::new(a, b)),
    ]
}

fn swarm(max: usize) -> impl Strategy<Value = SwarmState> {
    prop::collection::vec(in_box(), 1..=max).prop_map(SwarmState::new)
}

fn rule() -> impl Strategy<Value = BinRule> {
    (vec2(0.2), 1e-3..=0.25f64, 1e-3..=0.25f64).prop_map(|(mean, a, b)| BinRule { mean, std: [a, b] })
}

fn mf_action() -> impl Strategy<Value = MeanFieldAction> {
    prop::collection::vec(rule(), 36).prop_map(|rules| MeanFieldAction { rules })
}

fn noisy_space(sx: f64, sy: f64) -> SpaceConfig {
    SpaceConfig {
        noise_std: [sx, sy],
        ..SpaceConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn clip_to_disc_is_an_idempotent_projection(u in vec2(5.0), r in 0.01..3.0f64) {
        let c = clip_to_disc(u, r);
        prop_assert!(c.norm() <= r * (1.0 + 1e-15));
        prop_assert_eq!(clip_to_disc(c, r), c);
        if u.norm() <= r {
            prop_assert_eq!(c, u);
        } else {
            // direction preserved
            prop_assert!((c.x * u.y - c.y * u.x).abs() < 1e-12 * u.norm() * r.max(1.0));
            prop_assert!(c.x * u.x + c.y * u.y >= 0.0);
        }
    }

    #[test]
    fn steps_stay_in_the_box_and_replay_exactly(
        s in swarm(40),
        moves in prop::collection::vec(vec2(0.3), 40),
        sx in 0.0..1.0f64,
        sy in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let space = noisy_space(sx, sy);
        let acts = ActionBatch::new(moves[..s.len()].iter().map(|&u| clip_to_disc(u, 0.2)).collect());
        let a = step_swarm(&s, &acts, &space, SeedStream::new(seed)).unwrap();
        let b = step_swarm(&s, &acts, &space, SeedStream::new(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.time_index, s.time_index + 1);
        prop_assert!(a.positions.iter().all(|p| p.x.abs() <= M && p.y.abs() <= M));
    }

    #[test]
    fn noiseless_steps_do_not_depend_on_the_seed(s in swarm(30), moves in prop::collection::vec(vec2(0.2), 30), a in any::<u64>(), b in any::<u64>()) {
        let acts = ActionBatch::new(moves[..s.len()].iter().map(|&u| clip_to_disc(u, 0.2)).collect());
        let space = SpaceConfig::default();
        prop_assert_eq!(
            step_swarm(&s, &acts, &space, SeedStream::new(a)).unwrap(),
            step_swarm(&s, &acts, &space, SeedStream::new(b)).unwrap()
        );
    }

    #[test]
    fn initial_configurations_respect_the_separation(n in 2usize..60, sep in 0.0..0.3f64, seed in any::<u64>()) {
        let s = sample_initial(n, &SpaceConfig::default(), sep, 10_000, SeedStream::new(seed)).unwrap();
        prop_assert_eq!(s.len(), n);
        prop_assert!(s.positions.iter().all(|p| p.x.abs() <= M && p.y.abs() <= M));
        if sep > 0.0 {
            prop_assert!(min_pairwise_distance(&s).unwrap() > sep);
        }
    }

    #[test]
    fn histograms_are_probability_vectors(s in swarm(200)) {
        let h = empirical_histogram(&s, &GridSpec::default()).unwrap();
        prop_assert_eq!(h.len(), 36);
        prop_assert!(h.mass.iter().all(|&m| m >= 0.0));
        prop_assert!((h.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn every_box_point_has_exactly_one_bin(p in in_box()) {
        let grid = GridSpec::default();
        let b = bin_index(p, &grid).unwrap();
        prop_assert!(b < grid.total_bins());
        // the bin's cell contains the point
        let c = grid.bin_center(b);
        let half = grid.bin_width() / 2.0;
        prop_assert!((p.x - c.x).abs() <= half + 1e-12 && (p.y - c.y).abs() <= half + 1e-12);
    }

    #[test]
    fn decision_rule_samples_lie_in_the_disc(h in mf_action(), x in in_box(), seed in any::<u64>()) {
        let u = sample_decision_rule(&h, x, &GridSpec::default(), 0.2, SeedStream::new(seed)).unwrap();
        prop_assert!(u.norm() <= 0.2 * (1.0 + 1e-15));
    }

    #[test]
    fn particle_transition_preserves_count_and_box(s in swarm(100), h in mf_action(), seed in any::<u64>()) {
        let next = mf_transition(&s, &h, &SpaceConfig::default(), &GridSpec::default(), SeedStream::new(seed)).unwrap();
        prop_assert_eq!(next.len(), s.len());
        prop_assert!(next.positions.iter().all(|p| p.x.abs() <= M && p.y.abs() <= M));
        let again = mf_transition(&s, &h, &SpaceConfig::default(), &GridSpec::default(), SeedStream::new(seed)).unwrap();
        prop_assert_eq!(next, again);
    }

    #[test]
    fn squashed_actions_satisfy_rule_bounds(raw in prop::collection::vec(-5.0..5.0f64, 144)) {
        for (mode, len) in [(ActionMode::PerBin, 144), (ActionMode::Global, 4)] {
            let h = squash_to_mfc(&raw[..len], &SquashSpec::new(mode), 36).unwrap();
            prop_assert_eq!(h.rules.len(), 36);
            prop_assert!(h.validate(0.2).is_ok());
            prop_assert!(h.rules.iter().all(|r| r.std.iter().all(|&s| s >= 1e-3)));
        }
    }

    #[test]
    fn aggregation_reward_is_bounded_and_nonpositive(s in swarm(50), moves in prop::collection::vec(vec2(0.2), 50)) {
        let acts = ActionBatch::new(moves[..s.len()].iter().map(|&u| clip_to_disc(u, 0.2)).collect());
        let r = aggregation_reward(&s, &acts, 0.3);
        prop_assert!(r <= 0.0);
        prop_assert!(r >= -(2.0 * M * 2f64.sqrt() + 0.3 * 0.2));
    }

    #[test]
    fn rewards_are_permutation_invariant(
        s in swarm(25),
        moves in prop::collection::vec(vec2(0.2), 25),
        locs in prop::collection::vec(in_box(), 0..=5),
        shuffle in any::<u64>(),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let n = s.len();
        let acts: Vec<Vec2> = moves[..n].iter().map(|&u| clip_to_disc(u, 0.2)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut SeedStream::new(shuffle).rng());
        let ps = SwarmState::new(order.iter().map(|&i| s.positions[i]).collect());
        let pa = ActionBatch::new(order.iter().map(|&i| acts[i]).collect());
        let a = ActionBatch::new(acts);

        let r0 = aggregation_reward(&s, &a, 0.3);
        let r1 = aggregation_reward(&ps, &pa, 0.3);
        prop_assert!((r0 - r1).abs() < 1e-12);

        let mut cfg = EnvConfig::new(EnvKind::Formation);
        cfg.target_samples = 20;
        let f0 = formation_reward(&s, &cfg, SeedStream::new(seed)).unwrap();
        let f1 = formation_reward(&ps, &cfg, SeedStream::new(seed)).unwrap();
        prop_assert!((f0 - f1).abs() < 1e-9);
        prop_assert!(f0 <= 0.0);

        let tasks = TaskState { tasks: locs.iter().map(|&location| Task { location, remaining: 10.0 }).collect() };
        let (t0, w0) = task_process(&s, &tasks);
        let (t1, w1) = task_process(&ps, &tasks);
        prop_assert!((w0 - w1).abs() < 1e-12);
        prop_assert_eq!(t0.len(), t1.len());
        prop_assert!((0.0..=5.0).contains(&w0));
    }

    #[test]
    fn repulsion_is_antisymmetric_and_vanishes_outside_the_radius(d in vec2(2.0), c in 0.0..2.0f64) {
        let cfg = ApfConfig::default().with_c_rep(c);
        let (f, _) = repulsion(d, &cfg);
        let (g, _) = repulsion(Vec2::new(-d.x, -d.y), &cfg);
        prop_assert!((f.x + g.x).abs() <= 1e-12 * f.norm().max(1.0));
        prop_assert!((f.y + g.y).abs() <= 1e-12 * f.norm().max(1.0));
        if d.norm() >= cfg.interaction_radius {
            prop_assert_eq!(f, Vec2::ZERO);
        }
    }

    #[test]
    fn repulsion_magnitude_is_continuous(r in 0.05..1.5f64, c in 0.01..2.0f64) {
        let cfg = ApfConfig::default().with_c_rep(c);
        let mag = |r: f64| repulsion(Vec2::new(r, 0.0), &cfg).0.norm();
        let h = 1e-9;
        // derivative of 1.5 c (1/r - 1) / r^2 is bounded by 4.5 c / r^4 on (0, 1)
        prop_assert!((mag(r + h) - mag(r)).abs() <= 4.5 * c / r.powi(4) * h * 1.01 + 1e-15);
    }

    #[test]
    fn epochs_keep_agents_in_the_box(
        start in prop::collection::vec(in_box(), 2..20),
        shift in prop::collection::vec(vec2(0.2), 20),
        c in prop::sample::select(vec![0.0, 0.01, 0.1, 1.0]),
    ) {
        let space = SpaceConfig::default();
        let targets: Vec<Vec2> = start.iter().zip(&shift).map(|(&p, &u)| space.clip_box(p + u)).collect();
        let mut cfg = ApfConfig::default().with_c_rep(c);
        cfg.inner_steps = 20;
        let e = integrate_epoch(&start, &targets, &cfg, &space).unwrap();
        prop_assert!(e.positions.iter().all(|p| p.x.abs() <= M && p.y.abs() <= M));
        let start_min = mfswarm::sim_core::min_distance(&start).unwrap();
        let end_min = mfswarm::sim_core::min_distance(&e.positions).unwrap();
        prop_assert!(e.min_distance <= start_min && e.min_distance <= end_min);
    }
}

/// Minimum over substeps can be strictly below both endpoints: two agents
/// swap places along a line and pass through each other.
#[test]
fn epoch_minimum_covers_interior_substeps() {
    let space = SpaceConfig::default();
    let start = [Vec2::new(-0.5, 0.0), Vec2::new(0.5, 0.0)];
    let targets = [Vec2::new(0.5, 0.0), Vec2::new(-0.5, 0.0)];
    let cfg = ApfConfig::default().with_c_rep(0.0);
    let e = integrate_epoch(&start, &targets, &cfg, &space).unwrap();
    let end = mfswarm::sim_core::min_distance(&e.positions).unwrap();
    assert!(e.min_distance < 0.05, "interior minimum {}", e.min_distance);
    assert!(end > e.min_distance);
}
