//! Uniform grid over splat means, stored as a dense CSR table.

use nalgebra::Vector3;

use super::{Aabb, Splat};

/// Upper bound on the number of cells; the cell size grows to respect it.
const MAX_CELLS: usize = 1 << 22;

#[derive(Debug, Clone)]
pub struct SplatGrid {
    origin: Vector3<f64>,
    cell_size: f64,
    dims: [usize; 3],
    /// `starts[c]..starts[c + 1]` indexes `items` for cell `c`.
    starts: Vec<u32>,
    items: Vec<u32>,
    max_extent: f64,
}

impl SplatGrid {
    /// Cell size is twice the median splat extent.
    pub(crate) fn build(splats: &[Splat], extents: &[f64], bounds: &Aabb) -> Self {
        let mut sorted = extents.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0.01);
        let max_extent = sorted.last().copied().unwrap_or(0.0);
        let span = Vector3::from_fn(|k, _| (bounds.max[k] - bounds.min[k]).max(1e-9));

        let mut cell_size = (2.0 * median).max(1e-4);
        loop {
            let cells: usize = (0..3)
                .map(|k| (span[k] / cell_size).floor() as usize + 1)
                .product();
            if cells <= MAX_CELLS {
                break;
            }
            cell_size *= 1.25;
        }
        let dims = [0, 1, 2].map(|k| (span[k] / cell_size).floor() as usize + 1);
        let origin = Vector3::new(bounds.min[0], bounds.min[1], bounds.min[2]);

        let n_cells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; n_cells + 1];
        let cell_of: Vec<usize> = splats
            .iter()
            .map(|s| {
                let c = Self::coords(&origin, cell_size, &dims, &s.mean);
                Self::flat(&dims, c)
            })
            .collect();
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for c in 0..n_cells {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; splats.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        SplatGrid {
            origin,
            cell_size,
            dims,
            starts: counts,
            items,
            max_extent,
        }
    }

    fn coords(origin: &Vector3<f64>, cell: f64, dims: &[usize; 3], p: &Vector3<f64>) -> [usize; 3] {
        [0, 1, 2].map(|k| {
            let c = ((p[k] - origin[k]) / cell).floor();
            c.clamp(0.0, (dims[k] - 1) as f64) as usize
        })
    }

    fn flat(dims: &[usize; 3], c: [usize; 3]) -> usize {
        (c[2] * dims[1] + c[1]) * dims[0] + c[0]
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Largest splat extent in the scene.
    pub fn max_extent(&self) -> f64 {
        self.max_extent
    }

    /// Calls `f` for every splat whose mean lies in a cell overlapping the
    /// cube of half-width `reach` around `center`.
    pub fn for_each_candidate(&self, center: &Vector3<f64>, reach: f64, mut f: impl FnMut(usize)) {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for k in 0..3 {
            let a = ((center[k] - reach - self.origin[k]) / self.cell_size).floor();
            let b = ((center[k] + reach - self.origin[k]) / self.cell_size).floor();
            let top = (self.dims[k] - 1) as f64;
            if b < 0.0 || a > top {
                return;
            }
            lo[k] = a.max(0.0) as usize;
            hi[k] = b.min(top) as usize;
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                // cells along x are contiguous in the CSR table
                let row = (z * self.dims[1] + y) * self.dims[0];
                let start = self.starts[row + lo[0]] as usize;
                let end = self.starts[row + hi[0] + 1] as usize;
                for &i in &self.items[start..end] {
                    f(i as usize);
                }
            }
        }
    }
}
