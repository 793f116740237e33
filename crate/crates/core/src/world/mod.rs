//! Synthetic orchard scenes, the occlusion-aware frustum sensor, and the robot's
//! occupancy belief with budgeted straight-line transitions.

mod belief;
mod grid;
mod sensor;

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use belief::{BeliefState, MotionConfig, ObservationRecord, TransitionOutcome};
pub use grid::{Cell, CellSet, VoxelGrid, VoxelIndex};
pub use sensor::SensorModel;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("could not place {wanted} trees without overlap after {attempts} attempts")]
    Placement { wanted: usize, attempts: usize },
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error("transition cost {cost} exceeds remaining budget {remaining}")]
    BudgetExceeded { cost: f64, remaining: f64 },
    #[error("segment {from:?} -> {to:?} leaves known free space")]
    PathBlocked { from: [f64; 3], to: [f64; 3] },
    #[error("world file: {0}")]
    Io(#[from] std::io::Error),
    #[error("world file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Number of discrete yaw headings.
pub const N_YAWS: usize = 4;

/// One of the four sensor headings `{0, π/2, π, 3π/2}`; 0 looks along +x and angles
/// grow counter-clockwise about +z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Yaw(u8);

impl Yaw {
    pub const ALL: [Yaw; N_YAWS] = [Yaw(0), Yaw(1), Yaw(2), Yaw(3)];

    pub fn new(index: usize) -> Option<Self> {
        (index < N_YAWS).then_some(Yaw(index as u8))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn radians(self) -> f64 {
        self.0 as f64 * FRAC_PI_2
    }

    /// Yaw normalised to `[0, 1)` by a full turn.
    #[inline]
    pub fn normalized(self) -> f64 {
        self.radians() / TAU
    }

    /// Wrapped angular distance in `[0, π]`.
    pub fn angle_to(self, other: Yaw) -> f64 {
        let d = (self.radians() - other.radians()).abs();
        d.min(TAU - d)
    }

    pub fn from_radians(rad: f64) -> Option<Self> {
        let q = rad.rem_euclid(TAU) / FRAC_PI_2;
        let k = q.round();
        ((q - k).abs() < 1e-9).then(|| Yaw((k as usize % N_YAWS) as u8))
    }
}

impl TryFrom<u8> for Yaw {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        Yaw::new(v as usize).ok_or_else(|| format!("yaw index {v} out of range"))
    }
}

impl From<Yaw> for u8 {
    fn from(y: Yaw) -> u8 {
        y.0
    }
}

/// Robot pose `[x, y, z, d]`: a position in the unit cube and a discrete yaw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub pos: [f64; 3],
    pub yaw: Yaw,
}

impl Action {
    pub fn new(pos: [f64; 3], yaw: Yaw) -> Self {
        Self { pos, yaw }
    }

    /// The mission start pose `[0, 0, 0, π/2]`.
    pub fn start() -> Self {
        Self::new([0.0; 3], Yaw(1))
    }

    pub fn in_bounds(&self) -> bool {
        self.pos.iter().all(|&c| (0.0..=1.0).contains(&c))
    }

    pub fn distance(&self, other: &Action) -> f64 {
        dist(self.pos, other.pos)
    }

    /// Straight-line length plus `yaw_cost` when the heading changes.
    pub fn transition_cost(&self, to: &Action, yaw_cost: f64) -> f64 {
        self.distance(to) + if self.yaw != to.yaw { yaw_cost } else { 0.0 }
    }
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trunk {
    pub radius: f64,
    pub height: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Canopy {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

impl Canopy {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.semi_axes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// A tree: vertical trunk cylinder standing on `base` topped by an ellipsoidal canopy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeGeom {
    pub base: [f64; 2],
    pub trunk: Trunk,
    pub canopy: Canopy,
}

impl TreeGeom {
    fn new(base: [f64; 2], cfg: &WorldGenConfig) -> Self {
        Self {
            base,
            trunk: Trunk { radius: cfg.trunk_radius, height: cfg.trunk_height },
            canopy: Canopy {
                center: [base[0], base[1], cfg.trunk_height],
                semi_axes: cfg.canopy_semi_axes,
            },
        }
    }

    pub fn trunk_contains(&self, p: [f64; 3]) -> bool {
        let dx = p[0] - self.base[0];
        let dy = p[1] - self.base[1];
        (0.0..=self.trunk.height).contains(&p[2])
            && dx * dx + dy * dy <= self.trunk.radius * self.trunk.radius
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.trunk_contains(p) || self.canopy.contains(p)
    }

    fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        let c = self.canopy.center;
        let s = self.canopy.semi_axes;
        let r = self.trunk.radius;
        (
            [
                (c[0] - s[0]).min(self.base[0] - r),
                (c[1] - s[1]).min(self.base[1] - r),
                0.0,
            ],
            [
                (c[0] + s[0]).max(self.base[0] + r),
                (c[1] + s[1]).max(self.base[1] + r),
                (c[2] + s[2]).max(self.trunk.height),
            ],
        )
    }

    fn fits(&self) -> bool {
        let (lo, hi) = self.bbox();
        self.trunk.radius > 0.0 && lo.iter().chain(hi.iter()).all(|c| (0.0..=1.0).contains(c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenMode {
    /// Regular square array of trees (training worlds).
    Grid,
    /// Trees at random non-overlapping positions (test worlds).
    Random,
}

/// Scene generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldGenConfig {
    pub mode: GenMode,
    /// Trees per side of the square array in grid mode.
    pub grid_size: usize,
    /// Tree count in random mode.
    pub random_trees: usize,
    /// Minimum base-to-base distance in random mode.
    pub min_tree_spacing: f64,
    pub max_placement_attempts: usize,
    pub trunk_radius: f64,
    pub trunk_height: f64,
    pub canopy_semi_axes: [f64; 3],
    pub min_targets: usize,
    pub max_targets: usize,
    pub resolution: usize,
}

impl Default for WorldGenConfig {
    fn default() -> Self {
        Self {
            mode: GenMode::Grid,
            grid_size: 5,
            random_trees: 20,
            min_tree_spacing: 0.16,
            max_placement_attempts: 20_000,
            trunk_radius: 0.015,
            trunk_height: 0.45,
            canopy_semi_axes: [0.08, 0.08, 0.15],
            min_targets: 200,
            max_targets: 250,
            resolution: 50,
        }
    }
}

impl WorldGenConfig {
    pub fn with_mode(mut self, mode: GenMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: &str| Err(WorldError::Config(m.to_string()));
        if self.trunk_radius <= 0.0 || self.trunk_height <= 0.0 {
            return bad("trunk dimensions must be positive");
        }
        if self.canopy_semi_axes.iter().any(|&a| a <= 0.0) {
            return bad("canopy semi-axes must be positive");
        }
        if self.min_targets == 0 || self.min_targets > self.max_targets {
            return bad("target range must satisfy 0 < min_targets <= max_targets");
        }
        if self.resolution == 0 {
            return bad("resolution must be positive");
        }
        if self.mode == GenMode::Grid && self.grid_size == 0 {
            return bad("grid_size must be positive");
        }
        Ok(())
    }
}

/// Serialized form of a [`World`]; voxel grids are rebuilt on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFile {
    pub seed: u64,
    pub mode: GenMode,
    pub trees: Vec<TreeGeom>,
    pub targets: Vec<[f64; 3]>,
    pub n_targets: usize,
}

/// Ground-truth scene. Immutable after generation.
#[derive(Clone, Debug)]
pub struct World {
    pub seed: u64,
    pub mode: GenMode,
    pub trees: Vec<TreeGeom>,
    pub targets: Vec<[f64; 3]>,
    grid: VoxelGrid,
}

impl World {
    /// Builds a scene deterministically from `(cfg, seed)`.
    pub fn generate(cfg: &WorldGenConfig, seed: u64) -> Result<Self, WorldError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = match cfg.mode {
            GenMode::Grid => grid_trees(cfg)?,
            GenMode::Random => random_trees(cfg, &mut rng)?,
        };
        let n = rng.random_range(cfg.min_targets..=cfg.max_targets);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let tree = &trees[rng.random_range(0..trees.len())];
            targets.push(sample_in_ellipsoid(&tree.canopy, &mut rng));
        }
        Ok(Self::assemble(seed, cfg.mode, trees, targets, cfg.resolution))
    }

    fn assemble(
        seed: u64,
        mode: GenMode,
        trees: Vec<TreeGeom>,
        targets: Vec<[f64; 3]>,
        res: usize,
    ) -> Self {
        let grid = rasterize(&trees, res);
        Self { seed, mode, trees, targets, grid }
    }

    #[inline]
    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    /// Ground-truth voxel labels (`Free` or `Occupied` for tree material).
    #[inline]
    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn to_file(&self) -> WorldFile {
        WorldFile {
            seed: self.seed,
            mode: self.mode,
            trees: self.trees.clone(),
            targets: self.targets.clone(),
            n_targets: self.targets.len(),
        }
    }

    pub fn from_file(file: WorldFile, resolution: usize) -> Result<Self, WorldError> {
        if file.n_targets != file.targets.len() {
            return Err(WorldError::Config(format!(
                "n_targets = {} but {} targets listed",
                file.n_targets,
                file.targets.len()
            )));
        }
        if file.trees.is_empty() || file.trees.iter().any(|t| !t.fits()) {
            return Err(WorldError::Config("trees must be non-empty and fit in bounds".into()));
        }
        if file.targets.iter().any(|p| p.iter().any(|c| !(0.0..=1.0).contains(c))) {
            return Err(WorldError::Config("target outside bounds".into()));
        }
        Ok(Self::assemble(file.seed, file.mode, file.trees, file.targets, resolution))
    }

    pub fn save(&self, path: &Path) -> Result<(), WorldError> {
        let mut json = serde_json::to_string_pretty(&self.to_file())?;
        json.push('\n');
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path, resolution: usize) -> Result<Self, WorldError> {
        let file: WorldFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_file(file, resolution)
    }

    /// True iff `p` lies inside any tree solid.
    pub fn is_tree(&self, p: [f64; 3]) -> bool {
        self.trees.iter().any(|t| t.contains(p))
    }
}

fn grid_trees(cfg: &WorldGenConfig) -> Result<Vec<TreeGeom>, WorldError> {
    let g = cfg.grid_size;
    let spacing = 1.0 / g as f64;
    if spacing < 2.0 * cfg.canopy_semi_axes[0].max(cfg.canopy_semi_axes[1]) {
        return Err(WorldError::Placement { wanted: g * g, attempts: 0 });
    }
    let mut trees = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            let t = TreeGeom::new([(i as f64 + 0.5) * spacing, (j as f64 + 0.5) * spacing], cfg);
            if !t.fits() {
                return Err(WorldError::Placement { wanted: g * g, attempts: 0 });
            }
            trees.push(t);
        }
    }
    Ok(trees)
}

fn random_trees(cfg: &WorldGenConfig, rng: &mut ChaCha8Rng) -> Result<Vec<TreeGeom>, WorldError> {
    let margin = cfg.canopy_semi_axes[0].max(cfg.canopy_semi_axes[1]).max(cfg.trunk_radius);
    if 2.0 * margin >= 1.0 {
        return Err(WorldError::Placement { wanted: cfg.random_trees, attempts: 0 });
    }
    let mut trees: Vec<TreeGeom> = Vec::with_capacity(cfg.random_trees);
    let mut attempts = 0;
    while trees.len() < cfg.random_trees {
        if attempts == cfg.max_placement_attempts {
            return Err(WorldError::Placement { wanted: cfg.random_trees, attempts });
        }
        attempts += 1;
        let base = [rng.random_range(margin..1.0 - margin), rng.random_range(margin..1.0 - margin)];
        let clear = trees.iter().all(|t| {
            let dx = t.base[0] - base[0];
            let dy = t.base[1] - base[1];
            (dx * dx + dy * dy).sqrt() >= cfg.min_tree_spacing
        });
        let tree = TreeGeom::new(base, cfg);
        if clear && tree.fits() {
            trees.push(tree);
        }
    }
    Ok(trees)
}

fn sample_in_ellipsoid(c: &Canopy, rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let u = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0f64),
        ];
        if u.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return [
                c.center[0] + u[0] * c.semi_axes[0],
                c.center[1] + u[1] * c.semi_axes[1],
                c.center[2] + u[2] * c.semi_axes[2],
            ];
        }
    }
}

/// A voxel is tree material iff its center lies inside some tree solid.
fn rasterize(trees: &[TreeGeom], res: usize) -> VoxelGrid {
    let mut grid = VoxelGrid::new(res, Cell::Free);
    for tree in trees {
        let (lo, hi) = tree.bbox();
        let lo = grid.voxel_of(lo);
        let hi = grid.voxel_of(hi);
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let v = [i, j, k];
                    if tree.contains(grid.center(v)) {
                        grid.set(v, Cell::Occupied);
                    }
                }
            }
        }
    }
    grid
}

/// Angle helper used by tests and logs.
pub fn yaw_set_radians() -> [f64; N_YAWS] {
    [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]
}
