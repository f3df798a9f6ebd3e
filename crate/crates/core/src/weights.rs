//! Matrix weights and their cube-level reductions.
//!
//! A matrix weight is a symmetric-positive-definite `m×m` field on the
//! mesh. This module computes, on finite cube sets:
//!
//! - directional norms `N_Q(z) = ‖ |W(·)z| 1_Q ‖_{L^{p(·)}} / ‖1_Q‖`;
//! - reducing operators `A_Q` (exact for scalar/diagonal weights, a
//!   maximum-log-determinant ellipsoid fit for general ones);
//! - the weight characteristic: the largest over cubes of the exponential
//!   of the cube-averaged logarithm of `‖ ‖W(·)W^{-1}(y)‖ 1_Q ‖ / ‖1_Q‖`;
//! - growth dimensions fitted from dilated-cube statistics;
//! - the strong-doubling constant of a reducing family;
//! - exact level-set fractions `|{y ∈ Q : ‖A_Q W^{-1}(y)‖ ≥ e^M}| / |Q|`.
//!
//! Every supremum is over a declared finite cube set, so reported values
//! are certified lower bounds of their idealized counterparts.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exponents::VariableExponent;
use crate::grid::{Domain, DyadicCube, Grid, GridData, GridFunction};
use crate::linalg::{spectral_norm, sym_eigenvalues, Mat};
use crate::sampling::sphere_points;
use crate::tolerances::{
    CONDITION_CAP, JOHN_LOGDET_REL_GAIN, JOHN_MAX_ITER, JOHN_SAMPLING_SLACK,
};
use crate::varleb;

// ---------------------------------------------------------------------------
// MatrixWeight
// ---------------------------------------------------------------------------

/// Closed-form weight families (plus the sampled fallback). Powers use the
/// classical profile `(1+|x|)^a`, a known-good member of the scalar
/// Muckenhoupt-type classes for moderate `a`.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightFamily {
    Identity,
    /// `m = 1`, `w(x) = (1+|x|)^a`.
    ScalarPower { a: f64 },
    /// `W(x) = diag((1+|x|)^{a_1}, …, (1+|x|)^{a_m})`.
    DiagonalPower { a: Vec<f64> },
    /// `R · diag((1+|x|)^{a_i}) · Rᵀ` with `R` the rotation by `angle` in
    /// the first coordinate plane.
    RotatedDiagonalPower { a: Vec<f64>, angle: f64 },
    /// Arbitrary per-cell matrices with no closed form.
    Sampled,
}

/// A symmetric-positive-definite matrix field on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixWeight {
    field: GridFunction,
    family: WeightFamily,
    cond_cap: f64,
}

impl MatrixWeight {
    /// Wrap a matrix-kind grid function, validating symmetry, positive
    /// definiteness, and the per-cell condition-number cap.
    pub fn from_matrix_field(
        field: GridFunction,
        family: WeightFamily,
        cond_cap: f64,
    ) -> Result<MatrixWeight> {
        let GridData::Matrix { m, data } = &field.data else {
            return Err(Error::InvalidInput(
                "a matrix weight needs a matrix-kind grid function".into(),
            ));
        };
        let m = *m;
        if cond_cap.is_nan() || cond_cap < 1.0 {
            return Err(Error::InvalidInput(format!(
                "condition cap must be ≥ 1, got {cond_cap}"
            )));
        }
        for cell in 0..field.grid.cell_count() {
            let w = Mat::from_flat(m, &data[cell * m * m..(cell + 1) * m * m]);
            if w.entries().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "weight entries at cell {cell} are not finite"
                )));
            }
            if !w.is_symmetric(1e-12) {
                return Err(Error::InvalidInput(format!(
                    "weight at cell {cell} is not symmetric"
                )));
            }
            let eigs = sym_eigenvalues(&w)?;
            let (lo, hi) = (eigs[0], eigs[m - 1]);
            if lo <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "weight at cell {cell} is not positive definite (λ_min = {lo})"
                )));
            }
            if hi / lo > cond_cap {
                return Err(Error::InvalidInput(format!(
                    "weight at cell {cell} exceeds the condition cap: {} > {cond_cap}",
                    hi / lo
                )));
            }
        }
        Ok(MatrixWeight { field, family, cond_cap })
    }

    /// The identity weight.
    pub fn identity(grid: Grid, m: usize) -> Result<MatrixWeight> {
        let cells = grid.cell_count();
        let mut data = vec![0.0; cells * m * m];
        for cell in 0..cells {
            for i in 0..m {
                data[cell * m * m + i * m + i] = 1.0;
            }
        }
        MatrixWeight::from_matrix_field(
            GridFunction { grid, data: GridData::Matrix { m, data } },
            WeightFamily::Identity,
            CONDITION_CAP,
        )
    }

    /// Scalar power weight `w(x) = (1+|x|)^a`, `m = 1`.
    pub fn scalar_power(grid: Grid, a: f64) -> Result<MatrixWeight> {
        MatrixWeight::power_family(grid, &[a], 0.0, WeightFamily::ScalarPower { a })
    }

    /// Diagonal power weight `diag((1+|x|)^{a_i})`.
    pub fn diagonal_power(grid: Grid, a: &[f64]) -> Result<MatrixWeight> {
        MatrixWeight::power_family(grid, a, 0.0, WeightFamily::DiagonalPower { a: a.to_vec() })
    }

    /// Rotation-conjugated diagonal power weight (non-commuting with
    /// coordinate projections once `angle ≠ 0`).
    pub fn rotated_diagonal_power(grid: Grid, a: &[f64], angle: f64) -> Result<MatrixWeight> {
        if a.len() < 2 {
            return Err(Error::InvalidInput(
                "a rotated diagonal weight needs m ≥ 2".into(),
            ));
        }
        MatrixWeight::power_family(
            grid,
            a,
            angle,
            WeightFamily::RotatedDiagonalPower { a: a.to_vec(), angle },
        )
    }

    fn power_family(
        grid: Grid,
        a: &[f64],
        angle: f64,
        family: WeightFamily,
    ) -> Result<MatrixWeight> {
        let m = a.len();
        let cells = grid.cell_count();
        let (c, s) = (angle.cos(), angle.sin());
        let mut data = vec![0.0; cells * m * m];
        for cell in 0..cells {
            let x = grid.cell_center(cell);
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let d: Vec<f64> = a.iter().map(|&ai| (1.0 + r).powf(ai)).collect();
            // R diag(d) Rᵀ with R rotating the (0,1) plane; the identity
            // rotation when angle = 0 keeps this exact for pure diagonals.
            let mut w = Mat::diagonal(&d);
            if angle != 0.0 {
                let mut rot = Mat::identity(m);
                rot.set(0, 0, c);
                rot.set(0, 1, -s);
                rot.set(1, 0, s);
                rot.set(1, 1, c);
                w = rot.mul(&w).mul(&rot.transpose());
            }
            data[cell * m * m..(cell + 1) * m * m].copy_from_slice(w.entries());
        }
        MatrixWeight::from_matrix_field(
            GridFunction { grid, data: GridData::Matrix { m, data } },
            family,
            CONDITION_CAP,
        )
    }

    /// Component dimension m.
    pub fn m(&self) -> usize {
        match &self.field.data {
            GridData::Matrix { m, .. } => *m,
            _ => unreachable!("validated at construction"),
        }
    }

    /// The underlying mesh.
    pub fn grid(&self) -> &Grid {
        &self.field.grid
    }

    /// The family descriptor.
    pub fn family(&self) -> &WeightFamily {
        &self.family
    }

    /// The matrix-kind grid function.
    pub fn field(&self) -> &GridFunction {
        &self.field
    }

    /// `W` at one cell.
    pub fn at(&self, cell: usize) -> Mat {
        let m = self.m();
        let GridData::Matrix { data, .. } = &self.field.data else { unreachable!() };
        Mat::from_flat(m, &data[cell * m * m..(cell + 1) * m * m])
    }

    /// `W^{-1}` at one cell.
    pub fn inverse_at(&self, cell: usize) -> Result<Mat> {
        self.at(cell).inverse()
    }

    /// `|W(cell) z|`.
    pub fn apply_magnitude(&self, cell: usize, z: &[f64]) -> f64 {
        let m = self.m();
        let GridData::Matrix { data, .. } = &self.field.data else { unreachable!() };
        let block = &data[cell * m * m..(cell + 1) * m * m];
        (0..m)
            .map(|i| {
                let row: f64 = (0..m).map(|j| block[i * m + j] * z[j]).sum();
                row * row
            })
            .sum::<f64>()
            .sqrt()
    }
}

// ---------------------------------------------------------------------------
// Directional norms and reducing operators
// ---------------------------------------------------------------------------

/// How a reducing operator is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReducingMethod {
    /// `m = 1`: the scalar `N_Q(1)` exactly.
    ExactScalar,
    /// Pointwise-diagonal weights: `diag(N_Q(e_1), …, N_Q(e_m))` exactly.
    ExactDiagonal,
    /// General weights: maximum-log-determinant symmetric positive-definite
    /// `A` subject to `|A z_i| ≤ N_Q(z_i)` over sampled directions.
    John,
}

/// A reducing operator plus the soft-check outcome.
#[derive(Debug, Clone)]
pub struct ReducingOutcome {
    pub matrix: Mat,
    /// Present when the fitted operator under-fills the constraint body
    /// beyond the sampling slack; diagnostic, not an error.
    pub warning: Option<String>,
}

/// The directional norm
/// `N_Q(z) = ‖ |W(·) z| 1_Q ‖_{L^{p(·)}} / ‖ 1_Q ‖_{L^{p(·)}}`
/// for a unit vector `z`.
pub fn direction_norm(
    w: &MatrixWeight,
    p: &VariableExponent,
    q: &DyadicCube,
    z: &[f64],
) -> Result<f64> {
    check_weight_exponent(w, p)?;
    let zn: f64 = z.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (zn - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "direction must be a unit vector, |z| = {zn}"
        )));
    }
    if z.len() != w.m() {
        return Err(Error::Incompatible(format!(
            "direction length {} vs weight dimension {}",
            z.len(),
            w.m()
        )));
    }
    let grid = w.grid();
    let cells = grid.cells_in_cube(q)?;
    let pc = p.constant_value();
    let p_slice = exponent_on_cells(p, grid, &cells);
    let mags: Vec<f64> = cells.iter().map(|&c| w.apply_magnitude(c, z)).collect();
    let vol = grid.cell_volume();
    let num = norm_on_cells(&mags, &p_slice, pc, vol)?;
    let den = norm_on_cells(&vec![1.0; cells.len()], &p_slice, pc, vol)?;
    Ok(num / den)
}

/// Compute one reducing operator for `W` of order `p(·)` on `Q`.
///
/// `dir_count`, `seed`, and `tol` matter only for [`ReducingMethod::John`]:
/// they fix the sampled constraint directions and the relative
/// log-determinant gain at which the ascent stops (`tol ≤ 0` uses
/// [`JOHN_LOGDET_REL_GAIN`]).
pub fn reducing_operator(
    w: &MatrixWeight,
    p: &VariableExponent,
    q: &DyadicCube,
    method: ReducingMethod,
    dir_count: usize,
    seed: u64,
    tol: f64,
) -> Result<ReducingOutcome> {
    let m = w.m();
    match method {
        ReducingMethod::ExactScalar => {
            if m != 1 {
                return Err(Error::InvalidInput(format!(
                    "exact-scalar method needs m = 1, got m = {m}"
                )));
            }
            let n1 = direction_norm(w, p, q, &[1.0])?;
            Ok(ReducingOutcome { matrix: Mat::diagonal(&[n1]), warning: None })
        }
        ReducingMethod::ExactDiagonal => {
            let cells = w.grid().cells_in_cube(q)?;
            for &cell in &cells {
                let wm = w.at(cell);
                for i in 0..m {
                    for j in 0..m {
                        if i != j && wm.get(i, j) != 0.0 {
                            return Err(Error::InvalidInput(
                                "exact-diagonal method requires a pointwise diagonal weight"
                                    .into(),
                            ));
                        }
                    }
                }
            }
            let mut d = Vec::with_capacity(m);
            for i in 0..m {
                let mut e = vec![0.0; m];
                e[i] = 1.0;
                d.push(direction_norm(w, p, q, &e)?);
            }
            Ok(ReducingOutcome { matrix: Mat::diagonal(&d), warning: None })
        }
        ReducingMethod::John => {
            if dir_count < m {
                return Err(Error::InvalidInput(format!(
                    "john method needs at least m = {m} directions, got {dir_count}"
                )));
            }
            let dirs = sphere_points(m, dir_count, seed);
            let bounds: Vec<f64> = dirs
                .par_iter()
                .map(|z| direction_norm(w, p, q, z))
                .collect::<Result<_>>()?;
            let gain_tol = if tol > 0.0 { tol } else { JOHN_LOGDET_REL_GAIN };
            john_ascent(&dirs, &bounds, gain_tol)
        }
    }
}

/// Maximum-log-determinant fit: find symmetric positive-definite `A` with
/// maximal `log det A` subject to `|A z_i| ≤ N_i`.
///
/// On the symmetric factor `P = A²` the constraints become linear:
/// `|Az_i|² = z_iᵀ P z_i ≤ 1` for the scaled directions `u_i = z_i/N_i`.
/// Maximizing `log det P` under them is exactly the (polar) minimum-volume
/// origin-centered ellipsoid problem for the symmetric point set `{±u_i}`,
/// which this routine solves in its barycentric dual: ascend
/// `log det Λ(λ)`, `Λ = Σ_i λ_i u_i u_iᵀ`, over the weight simplex by
/// exact-line-search coordinate exchanges (adding weight on the most
/// violated direction or removing it from the least supported one — the
/// away step). Each exchange increases `log det Λ` by a closed-form amount,
/// so the ascent is monotone, and the iteration stops at an explicit
/// optimality certificate: every `g_i = u_iᵀ Λ^{-1} u_i` within a relative
/// band `ε` of the stationarity level `m`. The primal solution is recovered
/// as `P = Λ^{-1}/m` (shrunk a final time so feasibility holds exactly).
///
/// The dual route matters because the primal problem is typically
/// *degenerate* here: for a nearly constant weight every sampled constraint
/// is active at the optimum, which stalls naive projected gradient steps on
/// the primal but leaves the dual exchange steps untouched.
fn john_ascent(dirs: &[Vec<f64>], bounds: &[f64], gain_tol: f64) -> Result<ReducingOutcome> {
    let m = dirs[0].len();
    let mf = m as f64;
    let count = dirs.len();
    let units: Vec<Vec<f64>> = dirs
        .iter()
        .zip(bounds)
        .map(|(z, &nb)| z.iter().map(|&c| c / nb).collect())
        .collect();
    let eps = gain_tol.clamp(1e-12, 1e-3);

    let build = |lam: &[f64]| -> Mat {
        let mut out = Mat::zeros(m);
        for (u, &l) in units.iter().zip(lam) {
            if l == 0.0 {
                continue;
            }
            for i in 0..m {
                for j in 0..m {
                    out.set(i, j, out.get(i, j) + l * u[i] * u[j]);
                }
            }
        }
        out
    };
    // Gain of the exchange λ ← (1-β)λ + β e_j in closed form:
    // det((1-β)Λ + β u uᵀ) = (1-β)^{m-1} det Λ · (1 + β(g-1)).
    let gain = |beta: f64, g: f64| -> f64 {
        (mf - 1.0) * (1.0 - beta).ln() + (1.0 + beta * (g - 1.0)).ln()
    };

    let mut lam = vec![1.0 / count as f64; count];
    let mut lambda_mat = build(&lam);
    let mut certified = false;
    for _ in 0..JOHN_MAX_ITER {
        let inv = lambda_mat.inverse().map_err(|_| {
            Error::Numerical("john constraints are degenerate (directions do not span)".into())
        })?;
        let g: Vec<f64> = units
            .iter()
            .map(|u| {
                let iu = inv.mul_vec(u);
                u.iter().zip(&iu).map(|(&a, &b)| a * b).sum()
            })
            .collect();
        let (ip, gp) = g
            .iter()
            .cloned()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let (im, gm) = g
            .iter()
            .cloned()
            .enumerate()
            .filter(|&(i, _)| lam[i] > 0.0)
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        if gp <= mf * (1.0 + eps) && gm >= mf * (1.0 - eps) {
            certified = true;
            break;
        }
        // Optimal unclamped exchange for an atom with dual value g is
        // β* = (g-m)/(m(g-1)): positive (toward the atom) when g > m,
        // negative (away) when g < m.
        let beta_add = ((gp - mf) / (mf * (gp - 1.0))).clamp(0.0, 1.0 - 1e-12);
        let beta_away = if gm > 1.0 {
            ((gm - mf) / (mf * (gm - 1.0))).max(-lam[im] / (1.0 - lam[im]))
        } else {
            // Objective increases all the way to dropping the atom.
            -lam[im] / (1.0 - lam[im])
        };
        let gain_add = gain(beta_add, gp);
        let gain_away = gain(beta_away, gm);
        let (j, beta, step_gain) = if gain_add >= gain_away {
            (ip, beta_add, gain_add)
        } else {
            (im, beta_away, gain_away)
        };
        if step_gain.is_nan() || step_gain <= 0.0 {
            // No exchange improves the dual: stationary to rounding.
            certified = true;
            break;
        }
        for l in lam.iter_mut() {
            *l *= 1.0 - beta;
        }
        lam[j] = (lam[j] + beta).max(0.0);
        lambda_mat = build(&lam);
    }
    if !certified {
        return Err(Error::Numerical(
            "john ascent did not reach its optimality certificate within the budget".into(),
        ));
    }
    let p = lambda_mat.inverse()?.scale(1.0 / mf);
    finish_john(p, dirs, bounds, m)
}

fn finish_john(p: Mat, dirs: &[Vec<f64>], bounds: &[f64], m: usize) -> Result<ReducingOutcome> {
    let a = crate::linalg::sym_sqrt(&p)?;
    // Hard postcondition: feasibility on every sampled direction.
    let ratios: Vec<f64> = dirs
        .iter()
        .zip(bounds)
        .map(|(z, &nb)| {
            let az = a.mul_vec(z);
            az.iter().map(|v| v * v).sum::<f64>().sqrt() / nb
        })
        .collect();
    let max_ratio = ratios.iter().cloned().fold(0.0f64, f64::max);
    let a = if max_ratio > 1.0 { a.scale(1.0 / max_ratio) } else { a };
    let min_ratio =
        ratios.iter().cloned().fold(f64::INFINITY, f64::min) / max_ratio.max(1.0);
    // Soft check: by John's theorem the max-det inscribed ellipsoid of the
    // symmetric constraint body fills it to within √m, so a fitted operator
    // far below 1/√m signals bad sampling rather than bad geometry.
    let floor = 1.0 / ((m as f64).sqrt() * (1.0 + JOHN_SAMPLING_SLACK));
    let warning = (min_ratio < floor).then(|| {
        format!(
            "john soft check: min |Az|/N(z) = {min_ratio:.6} below the sampling floor {floor:.6}"
        )
    });
    Ok(ReducingOutcome { matrix: a, warning })
}

// ---------------------------------------------------------------------------
// ReducingFamily
// ---------------------------------------------------------------------------

/// Reducing operators for every dyadic cube of the box up to a depth, plus
/// family metadata.
#[derive(Debug, Clone)]
pub struct ReducingFamily {
    pub m: usize,
    pub n: usize,
    pub domain: Domain,
    pub j_max: u32,
    pub method: ReducingMethod,
    entries: BTreeMap<DyadicCube, Mat>,
    /// Soft-check diagnostics gathered during construction.
    pub warnings: Vec<String>,
    /// Fitted growth dimensions `(d1, d2)`, attached after estimation.
    pub dims: Option<(f64, f64)>,
}

impl ReducingFamily {
    /// The operator at a cube.
    pub fn get(&self, q: &DyadicCube) -> Option<&Mat> {
        self.entries.get(q)
    }

    /// All `(cube, operator)` pairs in lattice order.
    pub fn iter(&self) -> impl Iterator<Item = (&DyadicCube, &Mat)> {
        self.entries.iter()
    }

    /// Number of cubes covered.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Attach fitted dimensions.
    pub fn set_dimensions(&mut self, d1: f64, d2: f64) {
        self.dims = Some((d1, d2));
    }

    /// `Δ = d1 + d2` when dimensions have been fitted.
    pub fn delta(&self) -> Option<f64> {
        self.dims.map(|(d1, d2)| d1 + d2)
    }
}

/// Build the reducing family over all cubes of levels `0 ..= j_max`.
pub fn reducing_family(
    w: &MatrixWeight,
    p: &VariableExponent,
    j_max: u32,
    method: ReducingMethod,
    dir_count: usize,
    seed: u64,
    tol: f64,
) -> Result<ReducingFamily> {
    check_weight_exponent(w, p)?;
    let grid = w.grid();
    if j_max > grid.level {
        return Err(Error::InvalidInput(format!(
            "family depth {} exceeds mesh level {}",
            j_max, grid.level
        )));
    }
    let mut entries = BTreeMap::new();
    let mut warnings = Vec::new();
    for j in 0..=j_max {
        let cubes = grid.domain.cubes_at_level(grid.n, j);
        let outcomes: Vec<(DyadicCube, ReducingOutcome)> = cubes
            .into_par_iter()
            .map(|q| {
                reducing_operator(w, p, &q, method, dir_count, seed, tol).map(|o| (q, o))
            })
            .collect::<Result<_>>()?;
        for (q, outcome) in outcomes {
            if let Some(msg) = outcome.warning {
                warnings.push(format!("{q:?}: {msg}"));
            }
            entries.insert(q, outcome.matrix);
        }
    }
    Ok(ReducingFamily {
        m: w.m(),
        n: grid.n,
        domain: grid.domain,
        j_max,
        method,
        entries,
        warnings,
        dims: None,
    })
}

// ---------------------------------------------------------------------------
// Weight characteristic, dimensions, doubling, level sets
// ---------------------------------------------------------------------------

/// The weight characteristic over a declared cube set:
/// `max_Q exp( mean_{y ∈ Q} log( ‖ ‖W(·)W^{-1}(y)‖ 1_Q ‖ / ‖1_Q‖ ) )`.
///
/// `y_subsample = None` averages over every cell of each cube (the oracle
/// mode); `Some(k)` uses `k` evenly strided cells per cube.
pub fn apinfty_characteristic(
    w: &MatrixWeight,
    p: &VariableExponent,
    cubes: &[DyadicCube],
    y_subsample: Option<usize>,
) -> Result<f64> {
    check_weight_exponent(w, p)?;
    if cubes.is_empty() {
        return Err(Error::InvalidInput("characteristic over an empty cube set".into()));
    }
    let grid = w.grid();
    let pc = p.constant_value();
    let mut best = f64::NEG_INFINITY;
    for q in cubes {
        let cells = grid.cells_in_cube(q)?;
        let ys = subsample_cells(&cells, y_subsample)?;
        let mean = log_mean_ratio(w, p, pc, &cells, &ys)?;
        best = best.max(mean);
    }
    Ok(best.exp())
}

/// Fit the two growth dimensions from dilated-cube statistics.
///
/// For each dilation `λ` in `lambda_grid` (a subset of {1,2,4,8,16}) and
/// each cube `Q` in `cube_set` whose dilate `λQ` stays inside the box, two
/// quantities are computed:
///
/// - first kind: `y` averaged over `λQ`, norms over `1_Q`;
/// - second kind: `y` averaged over `Q`, norms over `1_{λQ}`;
///
/// and for each kind the supremum over surviving cubes is regressed
/// log-log against `λ`. Slopes are clamped below at 0. Pairs whose dilate
/// escapes are skipped; if fewer than two dilation factors survive, the fit
/// is impossible and an error is returned.
pub fn estimate_dimensions(
    w: &MatrixWeight,
    p: &VariableExponent,
    lambda_grid: &[u32],
    cube_set: &[DyadicCube],
) -> Result<(f64, f64)> {
    check_weight_exponent(w, p)?;
    const ALLOWED: [u32; 5] = [1, 2, 4, 8, 16];
    let mut lambdas: Vec<u32> = lambda_grid.to_vec();
    lambdas.sort_unstable();
    lambdas.dedup();
    if lambdas.iter().any(|l| !ALLOWED.contains(l)) {
        return Err(Error::InvalidInput(format!(
            "dilation grid must be a subset of {ALLOWED:?}, got {lambda_grid:?}"
        )));
    }
    if cube_set.is_empty() {
        return Err(Error::InvalidInput("dimension fit over an empty cube set".into()));
    }
    let grid = w.grid();
    let pc = p.constant_value();

    let mut points1 = Vec::new(); // (ln λ, ln G1)
    let mut points2 = Vec::new();
    for &lam in &lambdas {
        let mut g1 = f64::NEG_INFINITY;
        let mut g2 = f64::NEG_INFINITY;
        let mut usable = false;
        for q in cube_set {
            let (lo, hi) = q.dilate(lam as f64);
            if !grid.box_contains(&lo, &hi) {
                continue;
            }
            let q_cells = grid.cells_in_cube(q)?;
            let dilate_cells =
                if lam == 1 { q_cells.clone() } else { grid.cells_in_box(&lo, &hi) };
            usable = true;
            // First kind: y over the dilate, norms over the cube.
            g1 = g1.max(log_mean_ratio(w, p, pc, &q_cells, &dilate_cells)?);
            // Second kind: y over the cube, norms over the dilate.
            g2 = g2.max(log_mean_ratio(w, p, pc, &dilate_cells, &q_cells)?);
        }
        if usable {
            let lnl = (lam as f64).ln();
            points1.push((lnl, g1));
            points2.push((lnl, g2));
        }
    }
    if points1.len() < 2 {
        return Err(Error::AllPairsSkipped(
            "fewer than two dilation factors keep λQ inside the box".into(),
        ));
    }
    Ok((slope(&points1).max(0.0), slope(&points2).max(0.0)))
}

/// Least-squares slope of `v` against `u` for points `(u, v)`.
fn slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let mu = points.iter().map(|p| p.0).sum::<f64>() / k;
    let mv = points.iter().map(|p| p.1).sum::<f64>() / k;
    let num: f64 = points.iter().map(|p| (p.0 - mu) * (p.1 - mv)).sum();
    let den: f64 = points.iter().map(|p| (p.0 - mu) * (p.0 - mu)).sum();
    num / den
}

/// The strong-doubling constant of a reducing family:
/// `max_{Q,R} ‖A_Q A_R^{-1}‖ / ( max{(l_R/l_Q)^{d1}, (l_Q/l_R)^{d2}} ·
/// (1 + |x_Q - x_R| / (l_Q ∨ l_R))^{d1+d2} )`.
pub fn strong_doubling_constant(fam: &ReducingFamily, d1: f64, d2: f64) -> Result<f64> {
    if fam.is_empty() {
        return Err(Error::InvalidInput("doubling constant of an empty family".into()));
    }
    if d1 < 0.0 || d2 < 0.0 {
        return Err(Error::InvalidInput(format!(
            "dimensions must be nonnegative, got ({d1}, {d2})"
        )));
    }
    let entries: Vec<(&DyadicCube, &Mat, Mat)> = fam
        .iter()
        .map(|(q, a)| a.inverse().map(|inv| (q, a, inv)))
        .collect::<Result<_>>()?;
    let mut best = 0.0f64;
    for (q, aq, _) in &entries {
        for (r, _, rinv) in &entries {
            let num = spectral_norm(&aq.mul(rinv));
            let (lq, lr) = (q.side(), r.side());
            let scale = (lr / lq).powf(d1).max((lq / lr).powf(d2));
            let dist = q.center_distance(r) / lq.max(lr);
            let den = scale * (1.0 + dist).powf(d1 + d2);
            best = best.max(num / den);
        }
    }
    Ok(best)
}

/// Exact level-set fraction `|{y ∈ Q : ‖A_Q W^{-1}(y)‖ ≥ e^M}| / |Q|`,
/// counted cell by cell.
pub fn apinfty_level_set_check(
    w: &MatrixWeight,
    p: &VariableExponent,
    fam: &ReducingFamily,
    q: &DyadicCube,
    big_m: f64,
) -> Result<f64> {
    check_weight_exponent(w, p)?;
    let aq = fam
        .get(q)
        .ok_or_else(|| Error::InvalidInput(format!("cube {q:?} not in the family")))?;
    let cells = w.grid().cells_in_cube(q)?;
    let threshold = big_m.exp();
    let mut count = 0usize;
    for &y in &cells {
        let winv = w.inverse_at(y)?;
        if spectral_norm(&aq.mul(&winv)) >= threshold {
            count += 1;
        }
    }
    Ok(count as f64 / cells.len() as f64)
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn check_weight_exponent(w: &MatrixWeight, p: &VariableExponent) -> Result<()> {
    if p.minus() <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "integrability exponent must be positive, lower bound is {}",
            p.minus()
        )));
    }
    if w.grid().n != p.n() || w.grid().domain != p.domain() {
        return Err(Error::Incompatible(
            "weight and exponent disagree on box or dimension".into(),
        ));
    }
    Ok(())
}

fn exponent_on_cells(p: &VariableExponent, grid: &Grid, cells: &[usize]) -> Vec<f64> {
    cells.iter().map(|&c| p.eval(&grid.cell_center(c))).collect()
}

/// Luxemburg norm of a nonnegative value array supported on a cell set
/// (cells outside contribute zero, so the restriction is exact).
fn norm_on_cells(mags: &[f64], p_slice: &[f64], p_const: Option<f64>, vol: f64) -> Result<f64> {
    if let Some(pc) = p_const {
        if mags.iter().all(|&m| m == 0.0) {
            return Ok(0.0);
        }
        return Ok((mags.iter().map(|&m| m.powf(pc)).sum::<f64>() * vol).powf(1.0 / pc));
    }
    Ok(varleb::luxemburg(mags, p_slice, vol)?.value)
}

/// Mean over `y ∈ y_cells` of
/// `log( ‖ ‖W(·)W^{-1}(y)‖ 1_{norm_cells} ‖ / ‖1_{norm_cells}‖ )`.
fn log_mean_ratio(
    w: &MatrixWeight,
    p: &VariableExponent,
    p_const: Option<f64>,
    norm_cells: &[usize],
    y_cells: &[usize],
) -> Result<f64> {
    if y_cells.is_empty() {
        return Err(Error::InvalidInput("empty y-cell set in weight average".into()));
    }
    let grid = w.grid();
    let vol = grid.cell_volume();
    let p_slice = exponent_on_cells(p, grid, norm_cells);
    let ones = norm_on_cells(&vec![1.0; norm_cells.len()], &p_slice, p_const, vol)?;
    // Parallel over y; collection preserves order, so the fold below is
    // deterministic regardless of scheduling.
    let logs: Vec<f64> = y_cells
        .par_iter()
        .map(|&y| -> Result<f64> {
            let winv = w.inverse_at(y)?;
            let mags: Vec<f64> = norm_cells
                .iter()
                .map(|&x| spectral_norm(&w.at(x).mul(&winv)))
                .collect();
            let num = norm_on_cells(&mags, &p_slice, p_const, vol)?;
            Ok((num / ones).ln())
        })
        .collect::<Result<_>>()?;
    Ok(logs.iter().sum::<f64>() / logs.len() as f64)
}

/// Evenly strided selection of `k` cells (`None` = all).
fn subsample_cells(cells: &[usize], k: Option<usize>) -> Result<Vec<usize>> {
    match k {
        None => Ok(cells.to_vec()),
        Some(k) => {
            if k == 0 || k > cells.len() {
                return Err(Error::InvalidInput(format!(
                    "y-subsample {} outside 1..={}",
                    k,
                    cells.len()
                )));
            }
            Ok((0..k).map(|i| cells[i * cells.len() / k]).collect())
        }
    }
}
