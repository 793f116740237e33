mod common;

use common::RayCheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ipp3d::mission::MissionConfig;
use ipp3d::planners::{run_episode, RandomPlanner};
use ipp3d::world::{
    Action, BeliefState, Cell, CellSet, GenMode, MotionConfig, SensorModel, World, WorldGenConfig, Yaw,
};

fn random_world(seed: u64) -> World {
    World::generate(&WorldGenConfig::default().with_mode(GenMode::Random), seed).unwrap()
}

fn point(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// A free pose at canopy height, where occlusion is common.
fn free_pose(world: &World, rng: &mut impl Rng) -> Action {
    loop {
        let p = [rng.random(), rng.random(), rng.random_range(0.2..0.7)];
        if world.grid().get(world.grid().voxel_of(p)) == Cell::Free {
            return Action::new(p, Yaw::new(rng.random_range(0..4)).unwrap());
        }
    }
}

#[test]
fn grid_mode_places_a_five_by_five_array() {
    let w = World::generate(&WorldGenConfig::default(), 1).unwrap();
    assert_eq!(w.trees.len(), 25);
    for i in 0..5 {
        for j in 0..5 {
            let c = [(i as f64 + 0.5) / 5.0, (j as f64 + 0.5) / 5.0];
            assert!(w.trees.iter().any(|t| (t.base[0] - c[0]).abs() < 1e-12 && (t.base[1] - c[1]).abs() < 1e-12));
        }
    }
}

#[test]
fn every_target_lies_in_a_canopy() {
    for seed in [7, 8, 9] {
        let w = random_world(seed);
        assert!((200..=250).contains(&w.n_targets()));
        for &t in &w.targets {
            assert!(t.iter().all(|c| (0.0..=1.0).contains(c)));
            assert!(w.trees.iter().any(|tree| tree.canopy.contains(t)));
        }
    }
}

#[test]
fn grid_labels_follow_geometry() {
    let w = random_world(11);
    let g = w.grid();
    for v in g.iter_indices() {
        let inside = w.trees.iter().any(|t| t.contains(g.center(v)));
        assert_eq!(g.get(v) == Cell::Occupied, inside);
    }
}

#[test]
fn ray_clear_matches_dense_sampling() {
    let w = random_world(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut blocked = 0;
    for _ in 0..1000 {
        let (a, b) = (point(&mut rng), point(&mut rng));
        let got = w.grid().ray_clear(a, b, CellSet::TREE);
        let check = common::check_segment(w.grid(), a, b, CellSet::TREE, false, got);
        assert_ne!(check, RayCheck::Mismatch, "{a:?} -> {b:?}");
        blocked += usize::from(!got);
    }
    assert!(blocked > 50, "too few blocked segments to be informative: {blocked}");
}

#[test]
fn degenerate_ray_checks_its_voxel() {
    let w = random_world(3);
    let p = [0.01, 0.01, 0.01];
    assert!(w.grid().ray_clear(p, p, CellSet::TREE));
    let trunk = w.trees[0].base;
    let q = [trunk[0], trunk[1], 0.1];
    assert!(!w.grid().ray_clear(q, q, CellSet::TREE));
}

#[test]
fn visible_targets_match_oracle() {
    let w = random_world(5);
    let s = SensorModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut seen = 0;
    for _ in 0..300 {
        let pose = free_pose(&w, &mut rng);
        let got = s.visible_targets(&w, &pose);
        for (id, &t) in w.targets.iter().enumerate() {
            let in_view = common::frustum_oracle(&s, &pose, t);
            assert_eq!(in_view, s.in_view(&pose, t));
            if in_view {
                let check = common::check_segment(w.grid(), pose.pos, t, CellSet::TREE, true, got.contains(&id));
                assert_ne!(check, RayCheck::Mismatch, "{pose:?} target {id}");
            } else {
                assert!(!got.contains(&id));
            }
        }
        seen += got.len();
        assert_eq!(s.utility(&w, &pose), got.len() as f64 / w.n_targets() as f64);
    }
    assert!(seen > 0);
}

#[test]
fn boresight_and_behind() {
    let w = random_world(5);
    let s = SensorModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // find a visible target and check the mirrored heading cannot see it
    for _ in 0..2000 {
        let pose = free_pose(&w, &mut rng);
        if let Some(&id) = s.visible_targets(&w, &pose).first() {
            let back = Action::new(pose.pos, Yaw::new((pose.yaw.index() + 2) % 4).unwrap());
            assert!(!s.visible_targets(&w, &back).contains(&id));
            return;
        }
    }
    panic!("no visible target found");
}

#[test]
fn observation_labels_match_oracle() {
    let w = random_world(13);
    let s = SensorModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let pose = free_pose(&w, &mut rng);
        let mut b = BeliefState::new(&w, pose, 1.0, s, MotionConfig::default());
        let rec = b.take_observation(&w, pose);
        let g = w.grid();
        for v in g.iter_indices() {
            let c = g.center(v);
            let label = b.occupancy().get(v);
            if v == g.voxel_of(pose.pos) {
                assert_eq!(label, Cell::Free);
            } else if common::frustum_oracle(&s, &pose, c) {
                let seen = label != Cell::Unknown;
                let check = common::check_segment(g, pose.pos, c, CellSet::TREE, true, seen);
                assert_ne!(check, RayCheck::Mismatch, "voxel {v:?} from {pose:?}");
                if seen {
                    assert_eq!(label, g.get(v));
                }
            } else {
                assert_eq!(label, Cell::Unknown, "voxel {v:?} from {pose:?}");
            }
        }
        let again = b.take_observation(&w, pose);
        assert!(again.new_targets.is_empty());
        assert_eq!(rec.new_targets.len(), b.discovered_count());
    }
}

#[test]
fn episodes_are_safe_sound_and_balanced() {
    let cfg = MissionConfig::default();
    for e in 0..40u64 {
        let w = random_world(100 + e);
        let mut planner = RandomPlanner::new(e);
        let log = run_episode::<f64>(&mut planner, &w, 10.0, &cfg, e);
        assert!(log.abnormal.is_none());
        for seg in log.path.windows(2) {
            assert!(common::dense_ray_clear(w.grid(), seg[0].pos, seg[1].pos, CellSet::TREE));
            assert!(common::exact_ray_clear(w.grid(), seg[0].pos, seg[1].pos, CellSet::TREE));
        }
        let spent: f64 = log.steps.iter().map(|s| s.cost).sum();
        let used = log.steps.last().map_or(0.0, |s| s.budget_used);
        assert!((spent - used).abs() < 1e-9);
        assert!(used <= 10.0 + 1e-12);
        let mut prev = log.initial_pct_targets;
        for s in &log.steps {
            assert!(s.pct_targets >= prev);
            prev = s.pct_targets;
        }
    }
}

#[test]
fn discovery_counts_match_rescan() {
    let w = random_world(21);
    let s = SensorModel::default();
    let mut b = BeliefState::new(&w, Action::start(), 8.0, s, MotionConfig::default());
    b.bootstrap(&w);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut all_poses: Vec<Action> = b.gp_samples().iter().map(|&(a, _)| a).collect();
    for _ in 0..30 {
        let from = b.current();
        let to_pos = [0, 1, 2].map(|a| (from.pos[a] + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0));
        let to = Action::new(to_pos, Yaw::new(rng.random_range(0..4)).unwrap());
        if !b.reachable(from.pos, to.pos) || from.transition_cost(&to, 0.1) > b.budget_remaining() {
            continue;
        }
        let before: std::collections::BTreeSet<usize> = b.discovered_ids().into_iter().collect();
        let out = b.step_transition(&w, from, to).unwrap();
        let poses: Vec<Action> = out.observations.iter().map(|o| o.pose).collect();
        all_poses.extend(&poses);
        let rescan: std::collections::BTreeSet<usize> =
            all_poses.iter().flat_map(|p| common::visible_oracle(&w, &s, p)).collect();
        assert_eq!(out.new_target_count, rescan.difference(&before).count());
        assert_eq!(b.discovered_ids(), rescan.into_iter().collect::<Vec<_>>());
        // belief soundness
        for v in w.grid().iter_indices() {
            match b.occupancy().get(v) {
                Cell::Free => assert_eq!(w.grid().get(v), Cell::Free),
                Cell::Occupied => assert_eq!(w.grid().get(v), Cell::Occupied),
                Cell::Unknown => {}
            }
        }
    }
    assert!((b.budget_spent() + b.budget_remaining() - 8.0).abs() < 1e-9);
}
