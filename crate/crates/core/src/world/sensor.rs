//! Unidirectional frustum sensor with range limit and voxel occlusion.

use serde::{Deserialize, Serialize};

use super::{Action, Cell, CellSet, VoxelIndex, World};

/// Pinhole-style frustum: yaw-aligned pyramid, zero pitch and roll.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    /// Maximum detection range in unit-cube lengths.
    pub range: f64,
    /// Full horizontal field of view, degrees.
    pub fov_h_deg: f64,
    /// Full vertical field of view, degrees.
    pub fov_v_deg: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { range: 0.24, fov_h_deg: 90.0, fov_v_deg: 90.0 }
    }
}

impl SensorModel {
    /// Range and frustum test for a point, ignoring occlusion.
    pub fn in_view(&self, pose: &Action, p: [f64; 3]) -> bool {
        let v = [p[0] - pose.pos[0], p[1] - pose.pos[1], p[2] - pose.pos[2]];
        if v[0] * v[0] + v[1] * v[1] + v[2] * v[2] > self.range * self.range {
            return false;
        }
        let (s, c) = pose.yaw.radians().sin_cos();
        let forward = v[0] * c + v[1] * s;
        if forward <= 0.0 {
            return false;
        }
        let lateral = -v[0] * s + v[1] * c;
        let tan_h = (self.fov_h_deg.to_radians() / 2.0).tan();
        let tan_v = (self.fov_v_deg.to_radians() / 2.0).tan();
        lateral.abs() <= forward * tan_h && v[2].abs() <= forward * tan_v
    }

    /// Ids of targets seen from `pose`: in range, in the frustum, and with a line of
    /// sight that crosses no tree voxel other than the target's own.
    pub fn visible_targets(&self, world: &World, pose: &Action) -> Vec<usize> {
        world
            .targets
            .iter()
            .enumerate()
            .filter(|(_, &t)| {
                self.in_view(pose, t) && world.grid().line_of_sight(pose.pos, t, CellSet::TREE)
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Fraction of all targets visible from `pose`.
    pub fn utility(&self, world: &World, pose: &Action) -> f64 {
        self.visible_targets(world, pose).len() as f64 / world.n_targets() as f64
    }

    /// Ground-truth labels of every voxel whose center is in view with a clear line of sight.
    ///
    /// Tree voxels are returned (as `Occupied`) but anything behind them stays unseen.
    pub fn observed_voxels(&self, world: &World, pose: &Action) -> Vec<(VoxelIndex, Cell)> {
        let g = world.grid();
        let lo = g.voxel_of(pose.pos.map(|c| c - self.range));
        let hi = g.voxel_of(pose.pos.map(|c| c + self.range));
        let mut out = Vec::new();
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let v = [i, j, k];
                    let c = g.center(v);
                    if self.in_view(pose, c) && g.line_of_sight(pose.pos, c, CellSet::TREE) {
                        out.push((v, g.get(v)));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{GenMode, WorldFile, Yaw};

    fn single_tree_world(targets: Vec<[f64; 3]>) -> World {
        let base = World::generate(&crate::world::WorldGenConfig::default(), 0).unwrap();
        let file = WorldFile {
            seed: 0,
            mode: GenMode::Grid,
            trees: vec![base.trees[12]],
            n_targets: targets.len(),
            targets,
        };
        World::from_file(file, 50).unwrap()
    }

    #[test]
    fn boresight_target_is_seen() {
        // tree at (0.5, 0.5); open space around x = 0.2
        let w = single_tree_world(vec![[0.3, 0.2, 0.3]]);
        let s = SensorModel::default();
        for yaw in Yaw::ALL {
            let d = yaw.radians();
            let pose = Action::new([0.3 - 0.1 * d.cos(), 0.2 - 0.1 * d.sin(), 0.3], yaw);
            assert_eq!(s.visible_targets(&w, &pose), vec![0], "yaw {yaw:?}");
            assert_eq!(s.utility(&w, &pose), 1.0);
        }
    }

    #[test]
    fn target_behind_camera_is_not_seen() {
        let w = single_tree_world(vec![[0.3, 0.2, 0.3]]);
        let s = SensorModel::default();
        let pose = Action::new([0.4, 0.2, 0.3], Yaw::new(0).unwrap());
        assert!(s.visible_targets(&w, &pose).is_empty());
        assert_eq!(s.utility(&w, &pose), 0.0);
    }

    #[test]
    fn out_of_range_target_is_not_seen() {
        let w = single_tree_world(vec![[0.3, 0.2, 0.3]]);
        let s = SensorModel::default();
        let pose = Action::new([0.05, 0.2, 0.3], Yaw::new(0).unwrap());
        assert!(s.visible_targets(&w, &pose).is_empty());
    }

    #[test]
    fn trunk_occludes_target() {
        // trunk of the centre tree at (0.5, 0.5), z in [0, 0.45]
        let w = single_tree_world(vec![[0.6, 0.5, 0.1]]);
        let s = SensorModel::default();
        let pose = Action::new([0.4, 0.5, 0.1], Yaw::new(0).unwrap());
        assert!(s.in_view(&pose, [0.6, 0.5, 0.1]));
        assert!(s.visible_targets(&w, &pose).is_empty());
        // same geometry with the trunk out of the way
        let side = Action::new([0.4, 0.6, 0.1], Yaw::new(0).unwrap());
        let w2 = single_tree_world(vec![[0.6, 0.6, 0.1]]);
        assert_eq!(s.visible_targets(&w2, &side), vec![0]);
    }

    #[test]
    fn frustum_edges() {
        let s = SensorModel::default();
        let pose = Action::new([0.5, 0.5, 0.5], Yaw::new(1).unwrap());
        // 44 degrees off boresight horizontally is inside, 46 is outside
        for (deg, inside) in [(44.0f64, true), (46.0, false)] {
            let a = (90.0 + deg).to_radians();
            let p = [0.5 + 0.1 * a.cos(), 0.5 + 0.1 * a.sin(), 0.5];
            assert_eq!(s.in_view(&pose, p), inside);
        }
        assert!(s.in_view(&pose, [0.5, 0.6, 0.59]));
        assert!(!s.in_view(&pose, [0.5, 0.6, 0.61]));
    }
}
