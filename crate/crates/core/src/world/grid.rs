//! Dense voxel grid over the unit cube and exact segment traversal.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

/// Voxel label shared by the ground-truth and belief grids.
///
/// The ground truth only ever holds `Free` and `Occupied` (tree material).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Cell {
    Unknown = 0,
    Free = 1,
    Occupied = 2,
}

/// Small bitset of [`Cell`] labels used as a blocking set for ray queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellSet(u8);

impl CellSet {
    pub const EMPTY: CellSet = CellSet(0);
    /// Ground-truth occlusion: only trees block.
    pub const TREE: CellSet = CellSet(1 << Cell::Occupied as u8);
    /// Belief reachability: anything not known to be free blocks.
    pub const NOT_FREE: CellSet = CellSet((1 << Cell::Unknown as u8) | (1 << Cell::Occupied as u8));

    pub fn of(cells: &[Cell]) -> Self {
        CellSet(cells.iter().fold(0, |acc, &c| acc | (1 << c as u8)))
    }

    #[inline]
    pub fn contains(self, cell: Cell) -> bool {
        self.0 & (1 << cell as u8) != 0
    }
}

pub type VoxelIndex = [usize; 3];

/// Cubic grid of `res³` voxels covering `[0,1]³`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelGrid {
    res: usize,
    cells: Vec<Cell>,
}

impl VoxelGrid {
    pub fn new(res: usize, fill: Cell) -> Self {
        assert!(res > 0, "grid resolution must be positive");
        Self { res, cells: vec![fill; res * res * res] }
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.res
    }

    #[inline]
    pub fn voxel_size(&self) -> f64 {
        1.0 / self.res as f64
    }

    #[inline]
    fn flat(&self, v: VoxelIndex) -> usize {
        (v[0] * self.res + v[1]) * self.res + v[2]
    }

    #[inline]
    pub fn get(&self, v: VoxelIndex) -> Cell {
        self.cells[self.flat(v)]
    }

    #[inline]
    pub fn set(&mut self, v: VoxelIndex, cell: Cell) {
        let i = self.flat(v);
        self.cells[i] = cell;
    }

    /// Voxel containing `p`; coordinates on the far face are clamped into the last voxel.
    #[inline]
    pub fn voxel_of(&self, p: [f64; 3]) -> VoxelIndex {
        let r = self.res as f64;
        let idx = |c: f64| ((c * r).floor().max(0.0) as usize).min(self.res - 1);
        [idx(p[0]), idx(p[1]), idx(p[2])]
    }

    pub fn center(&self, v: VoxelIndex) -> [f64; 3] {
        let s = self.voxel_size();
        [(v[0] as f64 + 0.5) * s, (v[1] as f64 + 0.5) * s, (v[2] as f64 + 0.5) * s]
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.cells.iter().filter(|&&c| c == cell).count()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn iter_indices(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        let r = self.res;
        (0..r).flat_map(move |i| (0..r).flat_map(move |j| (0..r).map(move |k| [i, j, k])))
    }

    /// Visits every voxel crossed by the segment `p0 → p1`, in order, each once.
    ///
    /// Grid-stepping traversal: the walk takes exactly as many unit steps as the
    /// Manhattan distance between the end voxels, always crossing the nearest
    /// boundary next, so it always terminates in `voxel_of(p1)`.
    pub fn traverse<B>(
        &self,
        p0: [f64; 3],
        p1: [f64; 3],
        mut visit: impl FnMut(VoxelIndex) -> ControlFlow<B>,
    ) -> ControlFlow<B> {
        let start = self.voxel_of(p0);
        let end = self.voxel_of(p1);
        let r = self.res as f64;
        let mut cur = [start[0] as isize, start[1] as isize, start[2] as isize];
        let mut step = [0isize; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        let mut remaining = 0usize;
        for ax in 0..3 {
            let d = p1[ax] - p0[ax];
            let n = end[ax] as isize - start[ax] as isize;
            remaining += n.unsigned_abs();
            if n == 0 {
                continue;
            }
            step[ax] = n.signum();
            // n != 0 implies d has the same sign and is non-zero
            let boundary = if n > 0 { (start[ax] + 1) as f64 / r } else { start[ax] as f64 / r };
            t_max[ax] = (boundary - p0[ax]) / d;
            t_delta[ax] = 1.0 / (r * d.abs());
        }
        visit(start)?;
        while remaining > 0 {
            let mut ax = 0;
            for a in 1..3 {
                if t_max[a] < t_max[ax] {
                    ax = a;
                }
            }
            cur[ax] += step[ax];
            t_max[ax] += t_delta[ax];
            remaining -= 1;
            visit([cur[0] as usize, cur[1] as usize, cur[2] as usize])?;
        }
        ControlFlow::Continue(())
    }

    /// True iff no voxel crossed by `p0 → p1` carries a label in `blocking`.
    pub fn ray_clear(&self, p0: [f64; 3], p1: [f64; 3], blocking: CellSet) -> bool {
        self.traverse(p0, p1, |v| {
            if blocking.contains(self.get(v)) {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .is_continue()
    }

    /// Like [`ray_clear`](Self::ray_clear) but ignores the voxel containing `p1`.
    ///
    /// Line-of-sight queries aim at points that sit inside solid voxels (fruit in a
    /// canopy, the surface voxel being observed); the target voxel itself must not
    /// count as its own occluder.
    pub fn line_of_sight(&self, p0: [f64; 3], p1: [f64; 3], blocking: CellSet) -> bool {
        let end = self.voxel_of(p1);
        self.traverse(p0, p1, |v| {
            if v != end && blocking.contains(self.get(v)) {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .is_continue()
    }
}
