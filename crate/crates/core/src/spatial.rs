//! Uniform voxel hash grid over surfel positions.

use std::collections::HashMap;

use nalgebra::Vector3;

pub type CellKey = [i32; 3];

#[derive(Debug, Clone)]
pub struct VoxelGrid {
    cell_size: f64,
    cells: HashMap<CellKey, Vec<u64>>,
    len: usize,
}

impl VoxelGrid {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0);
        VoxelGrid {
            cell_size,
            cells: HashMap::new(),
            len: 0,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn key(&self, p: &Vector3<f64>) -> CellKey {
        [
            (p.x / self.cell_size).floor() as i32,
            (p.y / self.cell_size).floor() as i32,
            (p.z / self.cell_size).floor() as i32,
        ]
    }

    pub fn insert(&mut self, id: u64, p: &Vector3<f64>) {
        self.cells.entry(self.key(p)).or_default().push(id);
        self.len += 1;
    }

    /// Returns false when `id` was not stored in the cell of `p`.
    pub fn remove(&mut self, id: u64, p: &Vector3<f64>) -> bool {
        let key = self.key(p);
        let Some(cell) = self.cells.get_mut(&key) else {
            return false;
        };
        let Some(i) = cell.iter().position(|&x| x == id) else {
            return false;
        };
        cell.swap_remove(i);
        if cell.is_empty() {
            self.cells.remove(&key);
        }
        self.len -= 1;
        true
    }

    pub fn relocate(&mut self, id: u64, from: &Vector3<f64>, to: &Vector3<f64>) {
        if self.key(from) != self.key(to) {
            let removed = self.remove(id, from);
            debug_assert!(removed, "surfel {id} missing from its grid cell");
            self.insert(id, to);
        }
    }

    /// Ids in every cell overlapping the axis-aligned box around the ball.
    pub fn candidates(&self, center: &Vector3<f64>, r: f64) -> impl Iterator<Item = u64> + '_ {
        let lo = self.key(&(center - Vector3::repeat(r)));
        let hi = self.key(&(center + Vector3::repeat(r)));
        (lo[0]..=hi[0]).flat_map(move |x| {
            (lo[1]..=hi[1]).flat_map(move |y| {
                (lo[2]..=hi[2]).flat_map(move |z| self.cells.get(&[x, y, z]).into_iter().flatten().copied())
            })
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellKey, &Vec<u64>)> {
        self.cells.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_remove_relocate() {
        let mut g = VoxelGrid::new(0.1);
        let a = Vector3::new(0.05, 0.05, 0.05);
        let b = Vector3::new(0.25, -0.05, 0.05);
        g.insert(1, &a);
        g.insert(2, &a);
        assert_eq!(g.len(), 2);
        g.relocate(1, &a, &b);
        assert_eq!(g.key(&b), [2, -1, 0]);
        assert_eq!(g.candidates(&b, 0.01).collect::<Vec<_>>(), vec![1]);
        assert!(g.remove(1, &b));
        assert!(!g.remove(1, &b));
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn small_query_touches_at_most_27_cells() {
        let g = VoxelGrid::new(0.1);
        let c = Vector3::new(0.05, 0.05, 0.05);
        let lo = g.key(&(c - Vector3::repeat(0.1)));
        let hi = g.key(&(c + Vector3::repeat(0.1)));
        let cells: i32 = (0..3).map(|i| hi[i] - lo[i] + 1).product();
        assert!(cells <= 27);
    }
}
