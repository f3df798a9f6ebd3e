//! Variable Lebesgue modular and norm, and the mixed `l^{q(·)}(L^{p(·)})`
//! norm on level-indexed families of fields.
//!
//! On a finite mesh the modular is an exact sum
//! `ρ(f) = Σ_cells |f(cell)|^{p(cell)} · cell_volume`, and the norm is the
//! Luxemburg functional `inf { λ > 0 : ρ(f/λ) ≤ 1 }`. Because `ρ(f/λ)` is
//! continuous and strictly decreasing in `λ` wherever it is finite and
//! positive, the infimum is the unique root of `ρ(f/λ) = 1` and bracketed
//! bisection finds it to relative tolerance
//! [`NORM_REL_TOL`](crate::tolerances::NORM_REL_TOL).
//!
//! Constant exponents take closed-form paths (`‖f‖_p = (Σ|f|^p vol)^{1/p}`
//! and its mixed analogue); the bisection engine remains reachable through
//! [`norm_via_bisection`] so the two can be checked against each other.

use crate::error::{Error, Result};
use crate::exponents::VariableExponent;
use crate::grid::GridFunction;
use crate::tolerances::{NORM_MAX_ITER, NORM_REL_TOL};

/// Outcome of a norm computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormResult {
    /// The norm value `λ̂`.
    pub value: f64,
    /// Bisection iterations spent (0 on closed-form paths and zero input).
    pub iterations: u32,
    /// The defect `|ρ(f/λ̂) - 1|` at the returned value; 0 exactly for zero
    /// input, otherwise a direct a-posteriori quality certificate.
    pub residual: f64,
}

impl NormResult {
    fn zero() -> Self {
        NormResult { value: 0.0, iterations: 0, residual: 0.0 }
    }
}

// ---------------------------------------------------------------------------
// Modular
// ---------------------------------------------------------------------------

/// The modular `ρ_{p(·)}(f) = Σ_cells |f|^{p} · cell_volume`, exact on the
/// mesh.
///
/// Accepts scalar or vector fields (vector fields enter through their
/// pointwise Euclidean magnitude). Requires `p₋ > 0`.
pub fn modular(f: &GridFunction, p: &VariableExponent) -> Result<f64> {
    let (mags, pvals, vol) = prepare(f, p)?;
    Ok(modular_raw(&mags, &pvals, vol, 1.0))
}

/// The Luxemburg norm `‖f‖_{L^{p(·)}}`.
///
/// Constant exponents use the closed form; otherwise bracketed bisection.
/// Requires `p₋ > 0` and finite field values.
pub fn norm(f: &GridFunction, p: &VariableExponent) -> Result<NormResult> {
    let (mags, pvals, vol) = prepare(f, p)?;
    if let Some(c) = p.constant_value() {
        return constant_norm(&mags, c, vol);
    }
    luxemburg(&mags, &pvals, vol)
}

/// The Luxemburg norm forced through the bisection engine even for constant
/// exponents. Diagnostic API: lets callers verify the closed-form and
/// iterative paths agree.
pub fn norm_via_bisection(f: &GridFunction, p: &VariableExponent) -> Result<NormResult> {
    let (mags, pvals, vol) = prepare(f, p)?;
    luxemburg(&mags, &pvals, vol)
}

/// Validate inputs and extract (magnitudes, per-cell exponent values, cell
/// volume).
fn prepare(f: &GridFunction, p: &VariableExponent) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if p.minus() <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "integrability exponent must be positive, lower bound is {}",
            p.minus()
        )));
    }
    if f.grid.n != p.n() || f.grid.domain != p.domain() {
        return Err(Error::Incompatible(
            "field and exponent disagree on box or dimension".into(),
        ));
    }
    let mag = f.magnitude();
    let mags = mag.scalar_values()?.to_vec();
    if mags.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("field contains non-finite values".into()));
    }
    let pvals = p.per_cell(&f.grid);
    Ok((mags, pvals, f.grid.cell_volume()))
}

/// `Σ (m/λ)^p vol` over cells, with `0^p = 0`.
fn modular_raw(mags: &[f64], pvals: &[f64], vol: f64, lambda: f64) -> f64 {
    mags.iter()
        .zip(pvals)
        .map(|(&m, &p)| if m == 0.0 { 0.0 } else { (m / lambda).powf(p) })
        .sum::<f64>()
        * vol
}

fn constant_norm(mags: &[f64], p: f64, vol: f64) -> Result<NormResult> {
    if mags.iter().all(|&m| m == 0.0) {
        return Ok(NormResult::zero());
    }
    let value = (mags.iter().map(|&m| m.powf(p)).sum::<f64>() * vol).powf(1.0 / p);
    if !value.is_finite() {
        return Err(Error::Numerical("constant-exponent norm overflowed".into()));
    }
    let residual = (modular_raw(mags, &vec![p; mags.len()], vol, value) - 1.0).abs();
    Ok(NormResult { value, iterations: 0, residual })
}

/// Core bisection on prepared arrays.
pub(crate) fn luxemburg(mags: &[f64], pvals: &[f64], vol: f64) -> Result<NormResult> {
    let sup = mags.iter().cloned().fold(0.0f64, f64::max);
    if sup == 0.0 {
        return Ok(NormResult::zero());
    }
    let box_volume = vol * mags.len() as f64;
    let start_hi = sup.max(1.0) * (1.0 + box_volume);
    bracket_and_bisect(&mut |lambda| Ok(modular_raw(mags, pvals, vol, lambda)), start_hi)
}

/// Shared engine: given a continuous strictly-decreasing `ρ(λ)` with a root
/// of `ρ = 1` somewhere in `(0, ∞)`, bracket it and bisect.
///
/// `start_hi` is the analytic candidate for the upper bracket. For exponents
/// with small `p₋` the candidate can fall below the norm (many cells, each
/// raised to a tiny power, can keep the modular above 1 past the candidate),
/// so the bracket is doubled until `ρ ≤ 1`; the lower end starts eight
/// orders below the upper and is halved until `ρ ≥ 1`. Expansion steps count
/// toward the iteration budget.
fn bracket_and_bisect(
    rho: &mut impl FnMut(f64) -> Result<f64>,
    start_hi: f64,
) -> Result<NormResult> {
    let mut iterations: u32 = 0;
    let mut hi = start_hi;
    while rho(hi)? > 1.0 {
        hi *= 2.0;
        iterations += 1;
        if iterations >= NORM_MAX_ITER || !hi.is_finite() {
            return Err(Error::Numerical(
                "norm bracket expansion failed: modular stays above 1".into(),
            ));
        }
    }
    let mut lo = hi * 1e-8;
    while rho(lo)? < 1.0 {
        lo *= 0.5;
        iterations += 1;
        if iterations >= NORM_MAX_ITER || lo < f64::MIN_POSITIVE {
            return Err(Error::Numerical(
                "norm bracket shrink failed: modular stays below 1".into(),
            ));
        }
    }
    // Invariant: ρ(lo) ≥ 1 ≥ ρ(hi). Bisect to relative width NORM_REL_TOL.
    let mut mid = 0.5 * (lo + hi);
    while hi - lo > NORM_REL_TOL * mid {
        if iterations >= NORM_MAX_ITER {
            return Err(Error::Numerical(format!(
                "norm bisection did not reach tolerance in {NORM_MAX_ITER} iterations"
            )));
        }
        if rho(mid)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        iterations += 1;
    }
    let residual = (rho(mid)? - 1.0).abs();
    Ok(NormResult { value: mid, iterations, residual })
}

// ---------------------------------------------------------------------------
// Mixed norm
// ---------------------------------------------------------------------------

/// The mixed modular
/// `ρ_mixed({f_j}) = Σ_j ‖ |f_j|^{q(·)} ‖_{L^{p(·)/q(·)}}`
/// of a level-indexed family of fields on one common grid.
///
/// Requires `p₋ > 0`, `q₋ > 0`, and at least one field.
pub fn mixed_modular(
    fields: &[GridFunction],
    p: &VariableExponent,
    q: &VariableExponent,
) -> Result<f64> {
    mixed_modular_scaled(fields, p, q, 1.0)
}

fn mixed_modular_scaled(
    fields: &[GridFunction],
    p: &VariableExponent,
    q: &VariableExponent,
    mu: f64,
) -> Result<f64> {
    let prepared = prepare_mixed(fields, p, q)?;
    mixed_modular_raw(&prepared, mu)
}

struct MixedPrepared {
    /// Per-level magnitude arrays.
    mags: Vec<Vec<f64>>,
    qvals: Vec<f64>,
    /// Per-cell inner exponent `p/q`.
    evals: Vec<f64>,
    vol: f64,
}

fn prepare_mixed(
    fields: &[GridFunction],
    p: &VariableExponent,
    q: &VariableExponent,
) -> Result<MixedPrepared> {
    if fields.is_empty() {
        return Err(Error::InvalidInput("mixed norm of an empty family".into()));
    }
    if p.minus() <= 0.0 || q.minus() <= 0.0 {
        return Err(Error::InvalidInput(
            "mixed norm needs positive integrability exponents".into(),
        ));
    }
    let grid = &fields[0].grid;
    if grid.n != p.n() || grid.domain != p.domain() || grid.n != q.n() || grid.domain != q.domain()
    {
        return Err(Error::Incompatible(
            "fields and exponents disagree on box or dimension".into(),
        ));
    }
    let mut mags = Vec::with_capacity(fields.len());
    for f in fields {
        if f.grid != *grid {
            return Err(Error::Incompatible(
                "all fields in a mixed family must share one grid".into(),
            ));
        }
        let m = f.magnitude();
        let v = m.scalar_values()?.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("field contains non-finite values".into()));
        }
        mags.push(v);
    }
    let qvals = q.per_cell(grid);
    let pvals = p.per_cell(grid);
    let evals = pvals.iter().zip(&qvals).map(|(&pv, &qv)| pv / qv).collect();
    Ok(MixedPrepared { mags, qvals, evals, vol: grid.cell_volume() })
}

fn mixed_modular_raw(prep: &MixedPrepared, mu: f64) -> Result<f64> {
    let mut total = 0.0;
    for level_mags in &prep.mags {
        // g_j = |f_j/μ|^{q(·)} as a per-cell array.
        let g: Vec<f64> = level_mags
            .iter()
            .zip(&prep.qvals)
            .map(|(&m, &qv)| if m == 0.0 { 0.0 } else { (m / mu).powf(qv) })
            .collect();
        total += luxemburg(&g, &prep.evals, prep.vol)?.value;
    }
    Ok(total)
}

/// The mixed norm `‖{f_j}‖_{l^{q(·)}(L^{p(·)})}`: the Luxemburg functional
/// of the mixed modular, by outer bisection on the scale `μ`.
///
/// Constant `p` and `q` take the closed form `(Σ_j ‖f_j‖_p^q)^{1/q}`.
pub fn mixed_norm(
    fields: &[GridFunction],
    p: &VariableExponent,
    q: &VariableExponent,
) -> Result<NormResult> {
    let prep = prepare_mixed(fields, p, q)?;
    let sup = prep
        .mags
        .iter()
        .flat_map(|v| v.iter().cloned())
        .fold(0.0f64, f64::max);
    if sup == 0.0 {
        return Ok(NormResult::zero());
    }
    if let (Some(pc), Some(qc)) = (p.constant_value(), q.constant_value()) {
        let mut sum = 0.0;
        for level_mags in &prep.mags {
            let np = (level_mags.iter().map(|&m| m.powf(pc)).sum::<f64>() * prep.vol)
                .powf(1.0 / pc);
            sum += np.powf(qc);
        }
        let value = sum.powf(1.0 / qc);
        if !value.is_finite() {
            return Err(Error::Numerical("constant-exponent mixed norm overflowed".into()));
        }
        let residual = (mixed_modular_raw(&prep, value)? - 1.0).abs();
        return Ok(NormResult { value, iterations: 0, residual });
    }
    let box_volume = prep.vol * prep.mags[0].len() as f64;
    // Crude but safe upper candidate; the engine doubles past it if needed.
    let start_hi = sup.max(1.0) * (1.0 + box_volume) * prep.mags.len() as f64;
    bracket_and_bisect(&mut |mu| mixed_modular_raw(&prep, mu), start_hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponents::VariableExponent;
    use crate::grid::{Domain, Grid, GridFunction};
    use crate::tolerances::NORM_REL_TOL;

    /// n = 1 mesh with two cells: values (1, 2), exponents (1, 2).
    fn two_cell() -> (GridFunction, VariableExponent) {
        let grid = Grid::new(1, Domain::Unit, 1).unwrap();
        let f = GridFunction::from_scalar(grid.clone(), vec![1.0, 2.0]).unwrap();
        let p = VariableExponent::from_samples(grid, vec![1.0, 2.0]).unwrap();
        (f, p)
    }

    #[test]
    fn two_cell_modular_oracle() {
        // ρ = 1^1·(1/2) + 2^2·(1/2) = 5/2, by hand.
        let (f, p) = two_cell();
        assert!((modular(&f, &p).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn two_cell_norm_oracle() {
        // ρ(f/λ) = 1 reads 1/(2λ) + 2/λ² = 1, i.e. λ² - λ/2 - 2 = 0, whose
        // positive root is (1 + √33)/4.
        let (f, p) = two_cell();
        let expected = (1.0 + 33f64.sqrt()) / 4.0;
        let r = norm(&f, &p).unwrap();
        assert!((r.value - expected).abs() < 1e-9 * expected);
        assert!(r.residual < 1e-8);
        assert!(r.iterations > 0);
    }

    #[test]
    fn norm_of_zero_field_is_zero_without_iterations() {
        let grid = Grid::new(2, Domain::Unit, 2).unwrap();
        let f = GridFunction::zeros_scalar(grid.clone());
        let p = VariableExponent::log_perturbed(1.5, 0.2, 2, Domain::Unit).unwrap();
        let r = norm(&f, &p).unwrap();
        assert_eq!(r, NormResult { value: 0.0, iterations: 0, residual: 0.0 });
    }

    #[test]
    fn closed_form_and_bisection_agree_for_constant_exponent() {
        let grid = Grid::new(1, Domain::Unit, 4).unwrap();
        let f = GridFunction::from_fn_scalar(grid, |x| 1.0 + (7.0 * x[0]).sin().abs());
        let p = VariableExponent::constant(1.7, 1, Domain::Unit).unwrap();
        let closed = norm(&f, &p).unwrap();
        let bisected = norm_via_bisection(&f, &p).unwrap();
        assert_eq!(closed.iterations, 0);
        assert!(bisected.iterations > 0);
        assert!((closed.value - bisected.value).abs() <= 1e-8 * closed.value);
    }

    #[test]
    fn small_exponent_large_box_still_brackets() {
        // p = 0.1 on a 1024-cell unit grid: the analytic upper candidate is
        // far too small and only the doubling expansion rescues the bracket.
        let grid = Grid::new(1, Domain::Unit, 10).unwrap();
        let f = GridFunction::from_scalar(grid.clone(), vec![1.0; 1024]).unwrap();
        let p = VariableExponent::constant(0.1, 1, Domain::Unit).unwrap();
        // Closed form: (Σ 1 · 2^{-10})^{10} = 1, so the norm is exactly 1.
        let closed = norm(&f, &p).unwrap();
        assert!((closed.value - 1.0).abs() < 1e-12);
        let bisected = norm_via_bisection(&f, &p).unwrap();
        assert!((bisected.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn homogeneity_under_scaling() {
        let grid = Grid::new(1, Domain::Unit, 5).unwrap();
        let f = GridFunction::from_fn_scalar(grid.clone(), |x| (3.0 * x[0]).cos() + 1.5);
        let g = GridFunction::from_scalar(
            grid.clone(),
            f.scalar_values().unwrap().iter().map(|v| 3.0 * v).collect(),
        )
        .unwrap();
        let p = VariableExponent::two_level_bump(
            1.8,
            1.2,
            vec![0.5],
            0.1,
            0.3,
            Domain::Unit,
        )
        .unwrap();
        let nf = norm(&f, &p).unwrap().value;
        let ng = norm(&g, &p).unwrap().value;
        assert!((ng - 3.0 * nf).abs() < 20.0 * NORM_REL_TOL * ng);
    }

    #[test]
    fn mixed_norm_collapses_to_scalar_norm_on_single_level() {
        let grid = Grid::new(1, Domain::Unit, 4).unwrap();
        let f = GridFunction::from_fn_scalar(grid, |x| 0.5 + x[0] * x[0]);
        let p = VariableExponent::log_perturbed(1.4, 0.3, 1, Domain::Unit).unwrap();
        // Variable q must not matter for a single level.
        let q = VariableExponent::two_level_bump(
            3.0,
            1.5,
            vec![0.5],
            0.05,
            0.4,
            Domain::Unit,
        )
        .unwrap();
        let scalar = norm(&f.clone(), &p).unwrap().value;
        let mixed = mixed_norm(&[f], &p, &q).unwrap().value;
        assert!((mixed - scalar).abs() < 1e-7 * scalar.max(1.0));
    }

    #[test]
    fn mixed_norm_constant_exponents_match_closed_form() {
        let grid = Grid::new(1, Domain::Unit, 3).unwrap();
        let f0 = GridFunction::from_fn_scalar(grid.clone(), |x| 1.0 + x[0]);
        let f1 = GridFunction::from_fn_scalar(grid.clone(), |x| 2.0 - x[0]);
        let p = VariableExponent::constant(2.0, 1, Domain::Unit).unwrap();
        let q = VariableExponent::constant(3.0, 1, Domain::Unit).unwrap();
        let r = mixed_norm(&[f0.clone(), f1.clone()], &p, &q).unwrap();
        let n0 = norm(&f0, &p).unwrap().value;
        let n1 = norm(&f1, &p).unwrap().value;
        let expected = (n0.powi(3) + n1.powi(3)).cbrt();
        assert!((r.value - expected).abs() < 1e-12 * expected);
        assert_eq!(r.iterations, 0);
        assert!(r.residual < 1e-8);
    }

    #[test]
    fn rejects_nonpositive_exponent() {
        let grid = Grid::new(1, Domain::Unit, 1).unwrap();
        let f = GridFunction::from_scalar(grid.clone(), vec![1.0, 1.0]).unwrap();
        let p = VariableExponent::from_samples(grid, vec![0.0, 1.0]);
        // Samples accept any finite value; the norm rejects the sign.
        let p = p.unwrap();
        assert!(matches!(norm(&f, &p), Err(Error::InvalidInput(_))));
    }
}
