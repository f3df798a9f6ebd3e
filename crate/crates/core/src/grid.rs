//! Dyadic cube lattice over a truncated box, piecewise-constant grid
//! functions with exact quadrature, and cube-indexed coefficient sequences.
//!
//! The base box is either the unit box `[0,1)^n` or the centered box
//! `[-2^J_box, 2^J_box)^n`. A dyadic cube at level `j ≥ 0` is
//! `Q = 2^{-j}([0,1)^n + k)`; its anchor point `x_Q` is the **center**
//! `2^{-j}(k + 1/2)`. Grid functions are piecewise constant on the level-`L`
//! cells of the box, so every integral in this crate is an exact finite sum
//! `Σ value · cell_volume` — there is no quadrature error anywhere
//! downstream, only solver error.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Hard cap on total cell count, to catch runaway box/level combinations
/// before they allocate gigabytes. Desk scale stays far below this.
const MAX_CELLS: usize = 1 << 26;

/// Cap on the per-level lattice size that dense-output operations (maximal
/// sequences, closed-kernel application) may emit. Those outputs store a
/// value on *every* cube of a level, so the lattice — not the input
/// support — bounds memory.
pub(crate) const MAX_DENSE_LATTICE: usize = 1 << 20;

// ---------------------------------------------------------------------------
// Domain
// ---------------------------------------------------------------------------

/// The truncated base box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// `[0,1)^n`.
    Unit,
    /// `[-2^j_box, 2^j_box)^n`.
    Centered { j_box: u32 },
}

impl Domain {
    /// Side length of the box.
    pub fn side(&self) -> f64 {
        match self {
            Domain::Unit => 1.0,
            Domain::Centered { j_box } => 2f64.powi(*j_box as i32 + 1),
        }
    }

    /// Lower corner, replicated over `n` axes.
    pub fn lower(&self, n: usize) -> Vec<f64> {
        let l = match self {
            Domain::Unit => 0.0,
            Domain::Centered { j_box } => -(2f64.powi(*j_box as i32)),
        };
        vec![l; n]
    }

    /// Whether `x` lies in the box (half-open on every axis).
    pub fn contains(&self, x: &[f64]) -> bool {
        let lo = match self {
            Domain::Unit => 0.0,
            Domain::Centered { j_box } => -(2f64.powi(*j_box as i32)),
        };
        let hi = lo + self.side();
        x.iter().all(|&c| c >= lo && c < hi)
    }

    /// Number of level-`j` dyadic cubes per axis inside the box.
    pub fn cubes_per_axis(&self, j: u32) -> u64 {
        match self {
            Domain::Unit => 1u64 << j,
            Domain::Centered { j_box } => 1u64 << (j_box + 1 + j),
        }
    }

    /// Range of cube indices `k` per axis at level `j` (half-open).
    pub fn index_range(&self, j: u32) -> (i64, i64) {
        match self {
            Domain::Unit => (0, 1i64 << j),
            Domain::Centered { j_box } => {
                let half = 1i64 << (j_box + j);
                (-half, half)
            }
        }
    }

    /// The unique level-`j` cube of the lattice containing `x`.
    pub fn cube_of_point(&self, x: &[f64], j: u32) -> Result<DyadicCube> {
        if !self.contains(x) {
            return Err(Error::InvalidInput(format!(
                "point {x:?} outside the base box"
            )));
        }
        let scale = 2f64.powi(j as i32);
        let k = x.iter().map(|&c| (c * scale).floor() as i64).collect();
        Ok(DyadicCube { j, k })
    }

    /// All level-`j` cubes inside the box, in lexicographic index order.
    pub fn cubes_at_level(&self, n: usize, j: u32) -> Vec<DyadicCube> {
        let (lo, hi) = self.index_range(j);
        let per_axis = (hi - lo) as usize;
        let total = per_axis.pow(n as u32);
        let mut out = Vec::with_capacity(total);
        let mut k = vec![lo; n];
        for _ in 0..total {
            out.push(DyadicCube { j, k: k.clone() });
            // Odometer increment, last axis fastest.
            for axis in (0..n).rev() {
                k[axis] += 1;
                if k[axis] < hi {
                    break;
                }
                k[axis] = lo;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// DyadicCube
// ---------------------------------------------------------------------------

/// A dyadic cube `Q = 2^{-j}([0,1)^n + k)`, `j ≥ 0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicCube {
    /// Level: side length is `2^{-j}`.
    pub j: u32,
    /// Integer index vector of length `n`.
    pub k: Vec<i64>,
}

impl DyadicCube {
    pub fn new(j: u32, k: Vec<i64>) -> Self {
        DyadicCube { j, k }
    }

    /// Spatial dimension.
    pub fn n(&self) -> usize {
        self.k.len()
    }

    /// Side length `l(Q) = 2^{-j}`.
    pub fn side(&self) -> f64 {
        2f64.powi(-(self.j as i32))
    }

    /// Volume `|Q| = 2^{-jn}`.
    pub fn volume(&self) -> f64 {
        self.side().powi(self.n() as i32)
    }

    /// Lower corner `2^{-j} k`.
    pub fn lower(&self) -> Vec<f64> {
        let s = self.side();
        self.k.iter().map(|&ki| s * ki as f64).collect()
    }

    /// Anchor point `x_Q`: the center `2^{-j}(k + 1/2)`.
    pub fn center(&self) -> Vec<f64> {
        let s = self.side();
        self.k.iter().map(|&ki| s * (ki as f64 + 0.5)).collect()
    }

    /// Whether `x ∈ Q` (half-open).
    pub fn contains(&self, x: &[f64]) -> bool {
        let s = self.side();
        self.k
            .iter()
            .zip(x)
            .all(|(&ki, &c)| c >= s * ki as f64 && c < s * (ki as f64 + 1.0))
    }

    /// The `2^n` children at level `j + 1`.
    pub fn children(&self) -> Vec<DyadicCube> {
        let n = self.n();
        let mut out = Vec::with_capacity(1 << n);
        for mask in 0..(1u32 << n) {
            let k = self
                .k
                .iter()
                .enumerate()
                .map(|(axis, &ki)| 2 * ki + ((mask >> axis) & 1) as i64)
                .collect();
            out.push(DyadicCube { j: self.j + 1, k });
        }
        out
    }

    /// The parent cube at level `j - 1`; level 0 has no parent in the
    /// lattice.
    pub fn parent(&self) -> Result<DyadicCube> {
        if self.j == 0 {
            return Err(Error::InvalidInput(
                "level-0 cube has no parent in the lattice".into(),
            ));
        }
        let k = self.k.iter().map(|&ki| ki.div_euclid(2)).collect();
        Ok(DyadicCube { j: self.j - 1, k })
    }

    /// Euclidean distance of anchor points `|x_Q - x_R|`.
    pub fn center_distance(&self, other: &DyadicCube) -> f64 {
        self.center()
            .iter()
            .zip(other.center())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// The concentric dilate `λQ` as an axis-aligned box
    /// `(lower, upper)` with side `λ · l(Q)`.
    pub fn dilate(&self, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let c = self.center();
        let half = 0.5 * lambda * self.side();
        let lower = c.iter().map(|&v| v - half).collect();
        let upper = c.iter().map(|&v| v + half).collect();
        (lower, upper)
    }
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// A mesh: the base box carved into dyadic cells of side `2^{-level}`.
///
/// Flat cell indices are row-major with the **last axis fastest**,
/// matching the odometer order of [`Domain::cubes_at_level`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub domain: Domain,
    /// Mesh level `L`: cells are the level-`L` dyadic cubes of the box.
    pub level: u32,
}

impl Grid {
    pub fn new(n: usize, domain: Domain, level: u32) -> Result<Grid> {
        if n == 0 || n > 3 {
            return Err(Error::InvalidInput(format!(
                "grid dimension n = {n} unsupported (1 ≤ n ≤ 3)"
            )));
        }
        let per_axis = domain.cubes_per_axis(level);
        let total = per_axis.checked_pow(n as u32).unwrap_or(u64::MAX);
        if total > MAX_CELLS as u64 {
            return Err(Error::InvalidInput(format!(
                "grid would have {total} cells (cap {MAX_CELLS})"
            )));
        }
        Ok(Grid { n, domain, level })
    }

    /// Cells per axis.
    pub fn cells_per_axis(&self) -> usize {
        self.domain.cubes_per_axis(self.level) as usize
    }

    /// Total number of cells.
    pub fn cell_count(&self) -> usize {
        self.cells_per_axis().pow(self.n as u32)
    }

    /// Cell side `2^{-level}`.
    pub fn cell_side(&self) -> f64 {
        2f64.powi(-(self.level as i32))
    }

    /// Cell volume `2^{-n·level}`.
    pub fn cell_volume(&self) -> f64 {
        self.cell_side().powi(self.n as i32)
    }

    /// Multi-index of a flat cell index (last axis fastest).
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let per = self.cells_per_axis();
        let mut rem = flat;
        let mut idx = vec![0usize; self.n];
        for axis in (0..self.n).rev() {
            idx[axis] = rem % per;
            rem /= per;
        }
        idx
    }

    /// Flat index of a multi-index.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let per = self.cells_per_axis();
        multi.iter().fold(0usize, |acc, &i| acc * per + i)
    }

    /// Center of the cell with the given flat index.
    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let lower = self.domain.lower(self.n);
        let h = self.cell_side();
        self.multi_index(flat)
            .iter()
            .zip(lower)
            .map(|(&i, lo)| lo + h * (i as f64 + 0.5))
            .collect()
    }

    /// Flat index of the cell containing `x`.
    pub fn cell_of_point(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.n {
            return Err(Error::Incompatible(format!(
                "point dimension {} vs grid dimension {}",
                x.len(),
                self.n
            )));
        }
        if !self.domain.contains(x) {
            return Err(Error::InvalidInput(format!(
                "point {x:?} outside the base box"
            )));
        }
        let lower = self.domain.lower(self.n);
        let h = self.cell_side();
        let per = self.cells_per_axis();
        let multi: Vec<usize> = x
            .iter()
            .zip(lower)
            .map(|(&c, lo)| (((c - lo) / h).floor() as usize).min(per - 1))
            .collect();
        Ok(self.flat_index(&multi))
    }

    /// Flat indices of all cells inside a dyadic cube of the same lattice.
    ///
    /// The cube must be at level ≤ the mesh level (cells nest exactly) and
    /// inside the base box.
    pub fn cells_in_cube(&self, q: &DyadicCube) -> Result<Vec<usize>> {
        if q.n() != self.n {
            return Err(Error::Incompatible(format!(
                "cube dimension {} vs grid dimension {}",
                q.n(),
                self.n
            )));
        }
        if q.j > self.level {
            return Err(Error::InvalidInput(format!(
                "cube level {} finer than mesh level {}",
                q.j, self.level
            )));
        }
        let (lo, hi) = self.domain.index_range(q.j);
        if q.k.iter().any(|&ki| ki < lo || ki >= hi) {
            return Err(Error::InvalidInput(format!(
                "cube {:?} outside the base box",
                q
            )));
        }
        // Cells per cube axis: 2^(level - j).
        let span = 1usize << (self.level - q.j);
        let (cell_lo, _) = self.domain.index_range(self.level);
        let starts: Vec<usize> = q
            .k
            .iter()
            .map(|&ki| ((ki << (self.level - q.j)) - cell_lo) as usize)
            .collect();
        let total = span.pow(self.n as u32);
        let mut out = Vec::with_capacity(total);
        let mut offs = vec![0usize; self.n];
        for _ in 0..total {
            let multi: Vec<usize> = starts.iter().zip(&offs).map(|(&s, &o)| s + o).collect();
            out.push(self.flat_index(&multi));
            for axis in (0..self.n).rev() {
                offs[axis] += 1;
                if offs[axis] < span {
                    break;
                }
                offs[axis] = 0;
            }
        }
        Ok(out)
    }

    /// Flat indices of all cells whose centers lie in the half-open
    /// axis-aligned box `[lower, upper)`, clipped to the base box.
    ///
    /// This is the snap-to-mesh semantics used for dilated cubes `λQ`.
    pub fn cells_in_box(&self, lower: &[f64], upper: &[f64]) -> Vec<usize> {
        let box_lower = self.domain.lower(self.n);
        let h = self.cell_side();
        let per = self.cells_per_axis() as i64;
        // Per-axis ranges of cell indices whose centers fall in [lower, upper).
        let mut ranges = Vec::with_capacity(self.n);
        for axis in 0..self.n {
            let lo_idx = (((lower[axis] - box_lower[axis]) / h - 0.5).ceil() as i64).max(0);
            let hi_idx =
                ((((upper[axis] - box_lower[axis]) / h - 0.5).floor() as i64) + 1).min(per);
            if lo_idx >= hi_idx {
                return Vec::new();
            }
            ranges.push((lo_idx as usize, hi_idx as usize));
        }
        let total: usize = ranges.iter().map(|(a, b)| b - a).product();
        let mut out = Vec::with_capacity(total);
        let mut offs: Vec<usize> = ranges.iter().map(|(a, _)| *a).collect();
        for _ in 0..total {
            out.push(self.flat_index(&offs));
            for axis in (0..self.n).rev() {
                offs[axis] += 1;
                if offs[axis] < ranges[axis].1 {
                    break;
                }
                offs[axis] = ranges[axis].0;
            }
        }
        out
    }

    /// Whether the axis-aligned box `[lower, upper)` is contained in the
    /// base box.
    pub fn box_contains(&self, lower: &[f64], upper: &[f64]) -> bool {
        let lo = self.domain.lower(self.n);
        let side = self.domain.side();
        lower
            .iter()
            .zip(upper)
            .zip(lo)
            .all(|((&a, &b), l)| a >= l - 1e-12 && b <= l + side + 1e-12)
    }
}

// ---------------------------------------------------------------------------
// GridFunction
// ---------------------------------------------------------------------------

/// Value storage of a grid function.
#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    /// Real scalar per cell.
    Scalar(Vec<f64>),
    /// `ℂ^m` vector per cell, stored cell-major.
    Vector { m: usize, data: Vec<Complex64> },
    /// Real `m×m` matrix per cell, stored cell-major then row-major.
    Matrix { m: usize, data: Vec<f64> },
}

/// A piecewise-constant field on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub data: GridData,
}

/// Value-kind tag, mirroring [`GridData`] without payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Scalar,
    Vector,
    Matrix,
}

impl GridFunction {
    /// Zero scalar field.
    pub fn zeros_scalar(grid: Grid) -> GridFunction {
        let len = grid.cell_count();
        GridFunction { grid, data: GridData::Scalar(vec![0.0; len]) }
    }

    /// Zero `ℂ^m` field.
    pub fn zeros_vector(grid: Grid, m: usize) -> GridFunction {
        let len = grid.cell_count() * m;
        GridFunction {
            grid,
            data: GridData::Vector { m, data: vec![Complex64::new(0.0, 0.0); len] },
        }
    }

    /// Scalar field from per-cell values.
    pub fn from_scalar(grid: Grid, values: Vec<f64>) -> Result<GridFunction> {
        if values.len() != grid.cell_count() {
            return Err(Error::Incompatible(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        Ok(GridFunction { grid, data: GridData::Scalar(values) })
    }

    /// Scalar field built by evaluating a closure at cell centers.
    pub fn from_fn_scalar(grid: Grid, f: impl Fn(&[f64]) -> f64) -> GridFunction {
        let values = (0..grid.cell_count())
            .map(|c| f(&grid.cell_center(c)))
            .collect();
        GridFunction { grid, data: GridData::Scalar(values) }
    }

    /// Indicator `1_Q` of a dyadic cube as a scalar field.
    pub fn indicator(grid: Grid, q: &DyadicCube) -> Result<GridFunction> {
        let cells = grid.cells_in_cube(q)?;
        let mut values = vec![0.0; grid.cell_count()];
        for c in cells {
            values[c] = 1.0;
        }
        Ok(GridFunction { grid, data: GridData::Scalar(values) })
    }

    /// Value-kind tag.
    pub fn kind(&self) -> ValueKind {
        match self.data {
            GridData::Scalar(_) => ValueKind::Scalar,
            GridData::Vector { .. } => ValueKind::Vector,
            GridData::Matrix { .. } => ValueKind::Matrix,
        }
    }

    /// Component dimension (1 for scalar fields).
    pub fn m(&self) -> usize {
        match &self.data {
            GridData::Scalar(_) => 1,
            GridData::Vector { m, .. } => *m,
            GridData::Matrix { m, .. } => *m,
        }
    }

    /// Scalar values, or an error for non-scalar kinds.
    pub fn scalar_values(&self) -> Result<&[f64]> {
        match &self.data {
            GridData::Scalar(v) => Ok(v),
            _ => Err(Error::InvalidInput("expected a scalar grid function".into())),
        }
    }

    /// Mutable scalar values.
    pub fn scalar_values_mut(&mut self) -> Result<&mut [f64]> {
        match &mut self.data {
            GridData::Scalar(v) => Ok(v),
            _ => Err(Error::InvalidInput("expected a scalar grid function".into())),
        }
    }

    /// Complex vector value at one cell.
    pub fn vector_at(&self, cell: usize) -> Result<&[Complex64]> {
        match &self.data {
            GridData::Vector { m, data } => Ok(&data[cell * m..(cell + 1) * m]),
            _ => Err(Error::InvalidInput("expected a vector grid function".into())),
        }
    }

    /// Pointwise Euclidean magnitude as a scalar field (identity on scalars,
    /// `|v|` on vectors).
    pub fn magnitude(&self) -> GridFunction {
        match &self.data {
            GridData::Scalar(v) => GridFunction {
                grid: self.grid.clone(),
                data: GridData::Scalar(v.iter().map(|x| x.abs()).collect()),
            },
            GridData::Vector { m, data } => {
                let cells = self.grid.cell_count();
                let vals = (0..cells)
                    .map(|c| {
                        data[c * m..(c + 1) * m]
                            .iter()
                            .map(|z| z.norm_sqr())
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                GridFunction { grid: self.grid.clone(), data: GridData::Scalar(vals) }
            }
            GridData::Matrix { .. } => unreachable!("magnitude of a matrix field is undefined"),
        }
    }
}

/// Exact integral of a scalar field over a union of cells
/// (`None` = the whole box): `Σ value · cell_volume`.
pub fn integrate(f: &GridFunction, cells: Option<&[usize]>) -> Result<f64> {
    let v = f.scalar_values()?;
    let vol = f.grid.cell_volume();
    Ok(match cells {
        None => v.iter().sum::<f64>() * vol,
        Some(set) => set.iter().map(|&c| v[c]).sum::<f64>() * vol,
    })
}

/// Split a field into per-component complex arrays (scalar fields promote to
/// one complex component; matrix fields are not component-decomposable).
pub(crate) fn complex_components(f: &GridFunction) -> Result<Vec<Vec<Complex64>>> {
    match &f.data {
        GridData::Scalar(v) => Ok(vec![v.iter().map(|&x| Complex64::new(x, 0.0)).collect()]),
        GridData::Vector { m, data } => Ok((0..*m)
            .map(|c| data.iter().skip(c).step_by(*m).copied().collect())
            .collect()),
        GridData::Matrix { .. } => Err(Error::InvalidInput(
            "matrix-valued fields cannot be band-decomposed".into(),
        )),
    }
}

/// Reassemble per-component arrays into a vector field.
pub(crate) fn from_complex_components(grid: Grid, comps: Vec<Vec<Complex64>>) -> GridFunction {
    let m = comps.len();
    let total = grid.cell_count();
    let mut data = vec![Complex64::default(); total * m];
    for (c, comp) in comps.iter().enumerate() {
        for (i, z) in comp.iter().enumerate() {
            data[i * m + c] = *z;
        }
    }
    GridFunction {
        grid,
        data: GridData::Vector { m, data },
    }
}

// ---------------------------------------------------------------------------
// CoefficientSequence
// ---------------------------------------------------------------------------

/// A finitely supported map `Q ↦ t_Q ∈ ℂ^m` over the dyadic lattice of a
/// base box, levels `0 ..= j_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSequence {
    pub n: usize,
    pub m: usize,
    pub j_max: u32,
    pub domain: Domain,
    entries: BTreeMap<DyadicCube, Vec<Complex64>>,
}

impl CoefficientSequence {
    pub fn new(n: usize, m: usize, j_max: u32, domain: Domain) -> Self {
        CoefficientSequence { n, m, j_max, domain, entries: BTreeMap::new() }
    }

    /// Insert or overwrite a coefficient. Zero vectors are stored too; use
    /// [`CoefficientSequence::prune`] to drop them.
    pub fn set(&mut self, q: DyadicCube, value: Vec<Complex64>) -> Result<()> {
        if q.n() != self.n {
            return Err(Error::Incompatible(format!(
                "cube dimension {} vs sequence dimension {}",
                q.n(),
                self.n
            )));
        }
        if value.len() != self.m {
            return Err(Error::Incompatible(format!(
                "coefficient length {} vs m = {}",
                value.len(),
                self.m
            )));
        }
        if q.j > self.j_max {
            return Err(Error::InvalidInput(format!(
                "cube level {} above j_max {}",
                q.j, self.j_max
            )));
        }
        let (lo, hi) = self.domain.index_range(q.j);
        if q.k.iter().any(|&ki| ki < lo || ki >= hi) {
            return Err(Error::InvalidInput(format!(
                "cube {q:?} outside the base box"
            )));
        }
        self.entries.insert(q, value);
        Ok(())
    }

    /// Scalar (m = 1) convenience setter.
    pub fn set_scalar(&mut self, q: DyadicCube, value: Complex64) -> Result<()> {
        self.set(q, vec![value])
    }

    /// Coefficient at a cube, if present.
    pub fn get(&self, q: &DyadicCube) -> Option<&[Complex64]> {
        self.entries.get(q).map(|v| v.as_slice())
    }

    /// Iterate entries in lattice order (level, then index).
    pub fn iter(&self) -> impl Iterator<Item = (&DyadicCube, &[Complex64])> {
        self.entries.iter().map(|(q, v)| (q, v.as_slice()))
    }

    /// Entries at one level.
    pub fn level_entries(&self, j: u32) -> impl Iterator<Item = (&DyadicCube, &[Complex64])> {
        self.entries
            .range(
                DyadicCube { j, k: vec![i64::MIN; self.n] }
                    ..DyadicCube { j: j + 1, k: vec![i64::MIN; self.n] },
            )
            .map(|(q, v)| (q, v.as_slice()))
    }

    /// Number of stored coefficients.
    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    /// Drop exact-zero coefficients.
    pub fn prune(&mut self) {
        self.entries.retain(|_, v| v.iter().any(|z| z.norm_sqr() > 0.0));
    }

    /// Entrywise scale.
    pub fn scaled(&self, c: Complex64) -> CoefficientSequence {
        let mut out = self.clone();
        for v in out.entries.values_mut() {
            for z in v.iter_mut() {
                *z *= c;
            }
        }
        out
    }

    /// Euclidean magnitude `|t_Q|` of one coefficient.
    pub fn magnitude(&self, q: &DyadicCube) -> f64 {
        self.get(q)
            .map(|v| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .unwrap_or(0.0)
    }

    /// Sum of `|t_Q|` over one level (used by dropped-mass bounds).
    pub fn level_mass(&self, j: u32) -> f64 {
        self.level_entries(j)
            .map(|(_, v)| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .sum()
    }

    /// Largest level carrying a nonzero coefficient, or `None` when empty.
    pub fn max_occupied_level(&self) -> Option<u32> {
        self.entries.keys().map(|q| q.j).max()
    }
}

/// The level-`j` field `t_j = Σ_{Q ∈ 𝒬_j} t_Q |Q|^{-1/2} 1_Q` as a vector
/// grid function on `grid`.
///
/// Errors when the mesh is coarser than `j` or the box disagrees with the
/// sequence's.
pub fn level_field(t: &CoefficientSequence, grid: &Grid, j: u32) -> Result<GridFunction> {
    if grid.domain != t.domain || grid.n != t.n {
        return Err(Error::Incompatible(
            "sequence and grid disagree on box or dimension".into(),
        ));
    }
    if j > grid.level {
        return Err(Error::InvalidInput(format!(
            "mesh level {} coarser than requested level {}",
            grid.level, j
        )));
    }
    let mut out = GridFunction::zeros_vector(grid.clone(), t.m);
    let m = t.m;
    let GridData::Vector { data, .. } = &mut out.data else { unreachable!() };
    for (q, v) in t.level_entries(j) {
        let w = q.volume().sqrt().recip();
        for cell in grid.cells_in_cube(q)? {
            for c in 0..m {
                data[cell * m + c] = v[c] * w;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------
//
// GridFunction binary layout (all integers little-endian):
//
//   bytes 0..4    magic  b"VBGF"
//   bytes 4..8    u32    format version, = 1
//   bytes 8..12   u32    n
//   bytes 12..16  i32    j_box; -1 encodes the unit box [0,1)^n,
//                        v ≥ 0 encodes [-2^v, 2^v)^n
//   bytes 16..20  u32    mesh level L
//   bytes 20..24  u32    kind: 0 scalar, 1 vector, 2 matrix
//   bytes 24..28  u32    m (= 1 for scalar)
//   bytes 28..    f64    payload, little-endian, flat cell order (last axis
//                        fastest); scalar: one value per cell; vector: m
//                        (re, im) pairs per cell; matrix: m·m row-major
//                        values per cell.

const MAGIC: &[u8; 4] = b"VBGF";
const FORMAT_VERSION: u32 = 1;

impl GridFunction {
    /// Serialize in the documented binary layout.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.grid.n as u32).to_le_bytes())?;
        let j_box: i32 = match self.grid.domain {
            Domain::Unit => -1,
            Domain::Centered { j_box } => j_box as i32,
        };
        w.write_all(&j_box.to_le_bytes())?;
        w.write_all(&self.grid.level.to_le_bytes())?;
        let (kind, m) = match &self.data {
            GridData::Scalar(_) => (0u32, 1u32),
            GridData::Vector { m, .. } => (1u32, *m as u32),
            GridData::Matrix { m, .. } => (2u32, *m as u32),
        };
        w.write_all(&kind.to_le_bytes())?;
        w.write_all(&m.to_le_bytes())?;
        match &self.data {
            GridData::Scalar(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            GridData::Vector { data, .. } => {
                for z in data {
                    w.write_all(&z.re.to_le_bytes())?;
                    w.write_all(&z.im.to_le_bytes())?;
                }
            }
            GridData::Matrix { data, .. } => {
                for x in data {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Deserialize the documented binary layout.
    pub fn read_binary<R: Read>(r: &mut R) -> Result<GridFunction> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("bad magic; not a grid-function file".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported format version {version}")));
        }
        let n = read_u32(r)? as usize;
        let j_box = read_i32(r)?;
        let domain = if j_box < 0 {
            Domain::Unit
        } else {
            Domain::Centered { j_box: j_box as u32 }
        };
        let level = read_u32(r)?;
        let kind = read_u32(r)?;
        let m = read_u32(r)? as usize;
        let grid = Grid::new(n, domain, level)?;
        let cells = grid.cell_count();
        let data = match kind {
            0 => {
                let mut v = Vec::with_capacity(cells);
                for _ in 0..cells {
                    v.push(read_f64(r)?);
                }
                GridData::Scalar(v)
            }
            1 => {
                let mut v = Vec::with_capacity(cells * m);
                for _ in 0..cells * m {
                    let re = read_f64(r)?;
                    let im = read_f64(r)?;
                    v.push(Complex64::new(re, im));
                }
                GridData::Vector { m, data: v }
            }
            2 => {
                let mut v = Vec::with_capacity(cells * m * m);
                for _ in 0..cells * m * m {
                    v.push(read_f64(r)?);
                }
                GridData::Matrix { m, data: v }
            }
            k => return Err(Error::Parse(format!("unknown value kind {k}"))),
        };
        Ok(GridFunction { grid, data })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_i32<R: Read>(r: &mut R) -> Result<i32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(i32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

// CoefficientSequence text format:
//
//   # comment lines start with '#'
//   vbseq 1 <n> <m> <j_max> unit
//   vbseq 1 <n> <m> <j_max> centered <J_box>
//   <j> <k_1> … <k_n> <re_1> <im_1> … <re_m> <im_m>
//
// one row per coefficient, whitespace-separated, floats in Rust's shortest
// round-trip notation.

impl CoefficientSequence {
    /// Serialize in the documented text format.
    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        match self.domain {
            Domain::Unit => writeln!(w, "vbseq 1 {} {} {} unit", self.n, self.m, self.j_max)?,
            Domain::Centered { j_box } => writeln!(
                w,
                "vbseq 1 {} {} {} centered {}",
                self.n, self.m, self.j_max, j_box
            )?,
        }
        for (q, v) in self.iter() {
            write!(w, "{}", q.j)?;
            for ki in &q.k {
                write!(w, " {ki}")?;
            }
            for z in v {
                write!(w, " {} {}", z.re, z.im)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Parse the documented text format.
    pub fn read_text(text: &str) -> Result<CoefficientSequence> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty coefficient-sequence text".into()))?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        if tok.len() < 5 || tok[0] != "vbseq" || tok[1] != "1" {
            return Err(Error::Parse(format!("bad header line: {header:?}")));
        }
        let n: usize = parse_tok(tok[2], "n")?;
        let m: usize = parse_tok(tok[3], "m")?;
        let j_max: u32 = parse_tok(tok[4], "j_max")?;
        let domain = match tok.get(5) {
            Some(&"unit") => Domain::Unit,
            Some(&"centered") => {
                let j_box: u32 = parse_tok(
                    tok.get(6)
                        .ok_or_else(|| Error::Parse("centered box missing J_box".into()))?,
                    "J_box",
                )?;
                Domain::Centered { j_box }
            }
            other => return Err(Error::Parse(format!("bad domain token {other:?}"))),
        };
        let mut seq = CoefficientSequence::new(n, m, j_max, domain);
        for line in lines {
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 1 + n + 2 * m {
                return Err(Error::Parse(format!(
                    "row has {} fields, expected {} (j, {} indices, {} re/im pairs)",
                    tok.len(),
                    1 + n + 2 * m,
                    n,
                    m
                )));
            }
            let j: u32 = parse_tok(tok[0], "level")?;
            let k: Vec<i64> = tok[1..1 + n]
                .iter()
                .map(|t| parse_tok(t, "index"))
                .collect::<Result<_>>()?;
            let mut v = Vec::with_capacity(m);
            for c in 0..m {
                let re: f64 = parse_tok(tok[1 + n + 2 * c], "re")?;
                let im: f64 = parse_tok(tok[1 + n + 2 * c + 1], "im")?;
                v.push(Complex64::new(re, im));
            }
            seq.set(DyadicCube::new(j, k), v)?;
        }
        Ok(seq)
    }
}

fn parse_tok<T: std::str::FromStr>(tok: &str, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::Parse(format!("bad {what} field: {tok:?}")))
}
