//! Observations with planar coordinates, grid neighborhood partitions,
//! neighborhood weight matrices and spatial k-nearest-neighbor lists.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par;

/// Tolerance (in cell widths) for deciding that a point lies on a border.
const BORDER_TOL: f64 = 1e-9;
const ROW_SUM_TOL: f64 = 1e-12;

/// `n` observations: string ids, 2-D coordinates and a `n × p` attribute matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub x: DMatrix<f64>,
}

impl Dataset {
    pub fn new(ids: Vec<String>, coords: Vec<[f64; 2]>, x: DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: ids.len(),
            });
        }
        if coords.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: coords.len(),
            });
        }
        if x.ncols() == 0 {
            return invalid("dataset needs at least one attribute column");
        }
        if let Some((r, c)) = (0..n)
            .flat_map(|r| (0..x.ncols()).map(move |c| (r, c)))
            .find(|&(r, c)| !x[(r, c)].is_finite())
        {
            return invalid(format!("non-finite attribute at row {r}, column {c}"));
        }
        if let Some(r) = coords
            .iter()
            .position(|c| !c[0].is_finite() || !c[1].is_finite())
        {
            return invalid(format!("non-finite coordinate at row {r}"));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return invalid(format!("duplicate id {id:?}"));
            }
        }
        Ok(Dataset { ids, coords, x })
    }

    /// Dataset with ids `"0"`, `"1"`, ...
    pub fn with_index_ids(coords: Vec<[f64; 2]>, x: DMatrix<f64>) -> Result<Self> {
        let ids = (0..x.nrows()).map(|i| i.to_string()).collect();
        Dataset::new(ids, coords, x)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Cell layout of a grid-based structure: which grid cells make up each
/// neighborhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub gx: usize,
    pub gy: usize,
    pub cells: Vec<Vec<(usize, usize)>>,
}

/// Partition of the observation indices into `N` neighborhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodStructure {
    /// Neighborhood index (0-based) per observation.
    pub assignment: Vec<usize>,
    /// Ascending member indices per neighborhood.
    pub members: Vec<Vec<usize>>,
    pub centers: Vec<[f64; 2]>,
    pub grid: Option<GridGeometry>,
}

impl NeighborhoodStructure {
    /// Structure from an explicit assignment vector; centers are member means.
    pub fn from_assignment(coords: &[[f64; 2]], assignment: Vec<usize>) -> Result<Self> {
        if coords.len() != assignment.len() {
            return Err(Error::DimensionMismatch {
                expected: coords.len(),
                got: assignment.len(),
            });
        }
        let count = assignment.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); count];
        for (i, &a) in assignment.iter().enumerate() {
            members[a].push(i);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return invalid(format!("neighborhood {empty} has no members"));
        }
        let centers = members.iter().map(|m| mean_coord(coords, m)).collect();
        Ok(NeighborhoodStructure {
            assignment,
            members,
            centers,
            grid: None,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

fn mean_coord(coords: &[[f64; 2]], members: &[usize]) -> [f64; 2] {
    let k = members.len() as f64;
    let (sx, sy) = members.iter().fold((0.0, 0.0), |(sx, sy), &i| {
        (sx + coords[i][0], sy + coords[i][1])
    });
    [sx / k, sy / k]
}

/// Index of the cell `(lo + (i-1)·w, lo + i·w]` containing `v`; the global
/// lower edge belongs to the first cell.
pub(crate) fn cell_index(v: f64, lo: f64, width: f64, cells: usize) -> usize {
    if width <= 0.0 {
        return 0;
    }
    let t = (v - lo) / width;
    let idx = (t - BORDER_TOL).ceil() as i64 - 1;
    idx.clamp(0, cells as i64 - 1) as usize
}

struct CellGroup {
    cells: Vec<(usize, usize)>,
    members: Vec<usize>,
    center: [f64; 2],
    merged: bool,
}

/// Splits the bounding box of `coords` into `gx × gy` equal cells and merges
/// cells with fewer than `min_size` members into the nearest nonempty cell.
pub fn grid_neighborhoods(
    coords: &[[f64; 2]],
    gx: usize,
    gy: usize,
    min_size: usize,
) -> Result<NeighborhoodStructure> {
    if gx == 0 || gy == 0 || min_size == 0 {
        return invalid("grid dimensions and min_size must be positive");
    }
    if coords.is_empty() {
        return invalid("no coordinates");
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for c in coords {
        if !c[0].is_finite() || !c[1].is_finite() {
            return invalid("non-finite coordinate");
        }
        x0 = x0.min(c[0]);
        x1 = x1.max(c[0]);
        y0 = y0.min(c[1]);
        y1 = y1.max(c[1]);
    }
    if x1 == x0 && y1 == y0 {
        return invalid("all points share one location; bounding box is degenerate");
    }
    let wx = (x1 - x0) / gx as f64;
    let wy = (y1 - y0) / gy as f64;

    let mut cell_members = vec![Vec::new(); gx * gy];
    for (i, c) in coords.iter().enumerate() {
        let ix = cell_index(c[0], x0, wx, gx);
        let iy = cell_index(c[1], y0, wy, gy);
        cell_members[iy * gx + ix].push(i);
    }
    let mut groups: Vec<CellGroup> = cell_members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(cell, members)| {
            let (ix, iy) = (cell % gx, cell / gx);
            CellGroup {
                cells: vec![(ix, iy)],
                members,
                center: [x0 + (ix as f64 + 0.5) * wx, y0 + (iy as f64 + 0.5) * wy],
                merged: false,
            }
        })
        .collect();

    while groups.len() > 1 {
        let Some(small) = groups.iter().position(|g| g.members.len() < min_size) else {
            break;
        };
        let c = groups[small].center;
        let target = (0..groups.len())
            .filter(|&j| j != small)
            .min_by(|&a, &b| {
                dist2(c, groups[a].center)
                    .total_cmp(&dist2(c, groups[b].center))
                    .then(a.cmp(&b))
            })
            .expect("at least two groups");
        let g = groups.remove(small);
        let target = if target > small { target - 1 } else { target };
        let t = &mut groups[target];
        t.cells.extend(g.cells);
        t.cells.sort_by_key(|&(ix, iy)| iy * gx + ix);
        t.members.extend(g.members);
        t.members.sort_unstable();
        t.merged = true;
    }
    groups.sort_by_key(|g| {
        g.cells
            .iter()
            .map(|&(ix, iy)| iy * gx + ix)
            .min()
            .unwrap_or(usize::MAX)
    });

    let mut assignment = vec![0; coords.len()];
    for (gi, g) in groups.iter().enumerate() {
        for &i in &g.members {
            assignment[i] = gi;
        }
    }
    let centers = groups
        .iter()
        .map(|g| {
            if g.merged {
                mean_coord(coords, &g.members)
            } else {
                g.center
            }
        })
        .collect();
    Ok(NeighborhoodStructure {
        assignment,
        centers,
        grid: Some(GridGeometry {
            gx,
            gy,
            cells: groups.iter().map(|g| g.cells.clone()).collect(),
        }),
        members: groups.into_iter().map(|g| g.members).collect(),
    })
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// `N × N` nonnegative, row-stochastic influence weights with zero diagonal.
/// A single neighborhood has the `1 × 1` zero matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(DMatrix<f64>);

impl WeightMatrix {
    pub fn try_new(w: DMatrix<f64>) -> Result<Self> {
        let n = w.nrows();
        if n == 0 || w.ncols() != n {
            return invalid("weight matrix must be square and nonempty");
        }
        if n == 1 {
            return if w[(0, 0)] == 0.0 {
                Ok(WeightMatrix(w))
            } else {
                invalid("diagonal weights must be zero")
            };
        }
        for i in 0..n {
            if w[(i, i)] != 0.0 {
                return invalid(format!("diagonal weight {i} must be zero"));
            }
            let row = w.row(i);
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return invalid(format!("row {i} has negative or non-finite weights"));
            }
            let s = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return invalid(format!("row {i} sums to {s}, expected 1"));
            }
        }
        Ok(WeightMatrix(w))
    }

    /// Row-normalizes nonnegative raw weights; zero diagonal enforced.
    pub fn from_raw(mut raw: DMatrix<f64>) -> Result<Self> {
        let n = raw.nrows();
        for i in 0..n {
            raw[(i, i)] = 0.0;
            let s = raw.row(i).sum();
            if n > 1 && !(s > 0.0) {
                return invalid(format!("neighborhood {i} has no positive weights"));
            }
            if n > 1 {
                raw.row_mut(i).scale_mut(1.0 / s);
            }
        }
        WeightMatrix::try_new(raw)
    }

    pub fn single() -> Self {
        WeightMatrix(DMatrix::zeros(1, 1))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|r| self.0.row(r).iter().copied().collect())
            .collect()
    }
}

/// Inverse-distance weights between neighborhood centers, row-normalized.
pub fn inverse_distance_weights(centers: &[[f64; 2]]) -> Result<WeightMatrix> {
    let n = centers.len();
    if n == 1 {
        return Ok(WeightMatrix::single());
    }
    if n == 0 {
        return invalid("no centers");
    }
    let mut raw = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist2(centers[i], centers[j]).sqrt();
            if d == 0.0 {
                return invalid(format!("centers {i} and {j} coincide"));
            }
            raw[(i, j)] = 1.0 / d;
        }
    }
    WeightMatrix::from_raw(raw)
}

/// Binary shared-border weights between grid neighborhoods (4-connectivity of
/// their cells), rows scaled to sum to one.
pub fn adjacency_weights(structure: &NeighborhoodStructure) -> Result<WeightMatrix> {
    let Some(grid) = &structure.grid else {
        return invalid("adjacency weights need a grid-based neighborhood structure");
    };
    let n = grid.cells.len();
    if n == 1 {
        return Ok(WeightMatrix::single());
    }
    let mut owner = vec![usize::MAX; grid.gx * grid.gy];
    for (g, cells) in grid.cells.iter().enumerate() {
        for &(ix, iy) in cells {
            owner[iy * grid.gx + ix] = g;
        }
    }
    let mut raw = DMatrix::zeros(n, n);
    for (g, cells) in grid.cells.iter().enumerate() {
        for &(ix, iy) in cells {
            let mut neighbors = Vec::with_capacity(4);
            if ix > 0 {
                neighbors.push((ix - 1, iy));
            }
            if ix + 1 < grid.gx {
                neighbors.push((ix + 1, iy));
            }
            if iy > 0 {
                neighbors.push((ix, iy - 1));
            }
            if iy + 1 < grid.gy {
                neighbors.push((ix, iy + 1));
            }
            for (nx, ny) in neighbors {
                let o = owner[ny * grid.gx + nx];
                if o != usize::MAX && o != g {
                    raw[(g, o)] = 1.0;
                }
            }
        }
    }
    for i in 0..n {
        if raw.row(i).sum() == 0.0 {
            return invalid(format!("neighborhood {i} shares no border with any other"));
        }
    }
    WeightMatrix::from_raw(raw)
}

/// For every observation, the `k` spatially nearest other observations
/// (Euclidean), nearest first; exact ties go to the lower index.
pub fn spatial_knn(coords: &[[f64; 2]], k: usize, parallel: bool) -> Result<Vec<Vec<usize>>> {
    let n = coords.len();
    if k == 0 {
        return invalid("k must be positive");
    }
    if k >= n {
        return invalid(format!("k = {k} must be smaller than n = {n}"));
    }
    Ok(par::map_range(n, parallel, |i| {
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (dist2(coords[i], coords[j]), j))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_by(cmp);
        cand.into_iter().map(|(_, j)| j).collect()
    }))
}

/// Regular lattice of `side × side` points evenly spread over `[lo, hi]²`,
/// x varying fastest.
pub fn lattice(side: usize, lo: f64, hi: f64) -> Vec<[f64; 2]> {
    let step = if side > 1 {
        (hi - lo) / (side - 1) as f64
    } else {
        0.0
    };
    (0..side)
        .flat_map(|iy| (0..side).map(move |ix| [lo + ix as f64 * step, lo + iy as f64 * step]))
        .collect()
}
