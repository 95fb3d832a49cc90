//! Classical multidimensional scaling and grid de-occlusion.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdsError {
    #[error("need at least two items, got {0}")]
    DegenerateInput(usize),
    #[error("dissimilarity matrix must be square, symmetric, non-negative with zero diagonal")]
    InvalidMatrix,
    #[error("grid of {grid}x{grid} cells cannot hold {items} items")]
    GridFull { grid: usize, items: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    LagSet,
    Component,
}

/// Raw two-dimensional MDS coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub coords: Vec<[f64; 2]>,
    /// Kruskal stress-1 of the embedding against the input dissimilarities.
    pub stress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub raw: [f64; 2],
    /// `(column, row)` on the grid, row 0 at the bottom.
    pub cell: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub points: Vec<ProjectedPoint>,
    pub stress: f64,
    pub kind: ProjectionKind,
    pub grid: usize,
}

fn validate(d: &DMatrix<f64>) -> Result<(), MdsError> {
    let m = d.nrows();
    if !d.is_square() {
        return Err(MdsError::InvalidMatrix);
    }
    if m < 2 {
        return Err(MdsError::DegenerateInput(m));
    }
    for i in 0..m {
        if d[(i, i)] != 0.0 {
            return Err(MdsError::InvalidMatrix);
        }
        for j in 0..m {
            let v = d[(i, j)];
            if !v.is_finite() || v < 0.0 || (v - d[(j, i)]).abs() > 1e-12 * v.abs().max(1.0) {
                return Err(MdsError::InvalidMatrix);
            }
        }
    }
    Ok(())
}

/// Classical (Torgerson) MDS onto two dimensions.
pub fn mds(d: &DMatrix<f64>) -> Result<Embedding, MdsError> {
    validate(d)?;
    let m = d.nrows();
    let sq = d.map(|v| v * v);
    let row_means: Vec<f64> = (0..m).map(|i| sq.row(i).sum() / m as f64).collect();
    let grand = row_means.iter().sum::<f64>() / m as f64;
    let mut b = DMatrix::from_fn(m, m, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    linalg::symmetrize(&mut b);
    let (values, vectors) = linalg::sym_eigen_sorted(&b);
    let mut coords = vec![[0.0; 2]; m];
    for axis in 0..2.min(m) {
        let idx = m - 1 - axis;
        let scale = values[idx].max(0.0).sqrt();
        // Fix the eigenvector sign so the embedding is deterministic.
        let col = vectors.column(idx);
        let lead = (0..m).fold(0, |best, i| if col[i].abs() > col[best].abs() + 1e-12 { i } else { best });
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for (i, c) in coords.iter_mut().enumerate() {
            c[axis] = sign * col[i] * scale;
        }
    }
    let stress = kruskal_stress(d, &coords);
    Ok(Embedding { coords, stress })
}

/// Kruskal stress-1; 0 when all dissimilarities vanish.
pub fn kruskal_stress(d: &DMatrix<f64>, coords: &[[f64; 2]]) -> f64 {
    let m = coords.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let e = ((coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2)).sqrt();
            num += (d[(i, j)] - e).powi(2);
            den += d[(i, j)].powi(2);
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

/// Quantizes coordinates onto a `grid x grid` raster (uniform scale on both
/// axes) and moves colliding points, in input order, to the nearest free cell
/// found by an outward ring search. Within a ring, ties in distance are broken
/// clockwise starting from north.
pub fn degrid(raw: &[[f64; 2]], grid: usize) -> Result<Vec<(usize, usize)>, MdsError> {
    let m = raw.len();
    if grid == 0 || grid.saturating_mul(grid) < m {
        return Err(MdsError::GridFull { grid, items: m });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let min_x = raw.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let max_x = raw.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let min_y = raw.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_y = raw.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let scale = (max_x - min_x).max(max_y - min_y);
    let quantize = |v: f64, lo: f64| -> usize {
        if scale > 0.0 {
            (((v - lo) / scale * grid as f64).floor() as usize).min(grid - 1)
        } else {
            (grid - 1) / 2
        }
    };
    let mut occupied = vec![false; grid * grid];
    let mut cells = Vec::with_capacity(m);
    for p in raw {
        let home = (quantize(p[0], min_x), quantize(p[1], min_y));
        let cell = if !occupied[home.1 * grid + home.0] {
            home
        } else {
            ring_search(home, grid, &occupied).ok_or(MdsError::GridFull { grid, items: m })?
        };
        occupied[cell.1 * grid + cell.0] = true;
        cells.push(cell);
    }
    Ok(cells)
}

fn ring_search(home: (usize, usize), grid: usize, occupied: &[bool]) -> Option<(usize, usize)> {
    let (cx, cy) = (home.0 as i64, home.1 as i64);
    let g = grid as i64;
    for r in 1..=g {
        let mut ring: Vec<(i64, i64)> = Vec::new();
        for dx in -r..=r {
            for dy in -r..=r {
                if dx.abs().max(dy.abs()) != r {
                    continue;
                }
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && x < g && y < g && !occupied[(y * g + x) as usize] {
                    ring.push((dx, dy));
                }
            }
        }
        let best = ring.into_iter().min_by(|a, b| {
            let da = a.0 * a.0 + a.1 * a.1;
            let db = b.0 * b.0 + b.1 * b.1;
            da.cmp(&db).then(clockwise_from_north(*a).total_cmp(&clockwise_from_north(*b)))
        });
        if let Some((dx, dy)) = best {
            return Some(((cx + dx) as usize, (cy + dy) as usize));
        }
    }
    None
}

/// Angle in `[0, 2pi)` measured clockwise from the +y axis.
fn clockwise_from_north((dx, dy): (i64, i64)) -> f64 {
    let a = (dx as f64).atan2(dy as f64);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

/// MDS followed by de-occlusion on a `grid x grid` raster.
pub fn project(d: &DMatrix<f64>, grid: usize, kind: ProjectionKind) -> Result<Projection2D, MdsError> {
    let embedding = mds(d)?;
    let cells = degrid(&embedding.coords, grid)?;
    let points = embedding
        .coords
        .iter()
        .zip(cells)
        .map(|(&raw, cell)| ProjectedPoint { raw, cell })
        .collect();
    Ok(Projection2D { points, stress: embedding.stress, kind, grid })
}
