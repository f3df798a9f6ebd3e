//! Sequence-space norms over the dyadic lattice.
//!
//! A coefficient sequence `t = {t_Q}` is measured by expanding each level
//! into its piecewise-constant field `t_j = Σ_{l(Q)=2^{-j}} t_Q |Q|^{-1/2} 1_Q`,
//! scaling by the smoothness factor `2^{j s(·)}`, and feeding the resulting
//! family of scalar fields to the mixed `ℓ^{q(·)}(L^{p(·)})` norm. Three
//! magnitude conventions share that pipeline:
//!
//! * **unweighted** — `|t_j(x)|` itself (scalar sequences);
//! * **pointwise-weighted** — `|W(x) t_j(x)|` for a matrix weight `W`;
//! * **averaged** — `|A_Q t_Q|`, constant on each cube, for a family of
//!   per-cube reducing matrices `A_Q`.
//!
//! The module also provides the within-level maximal sequence
//! `(t*_{r,λ})_Q = [Σ_{l(R)=l(Q)} |t_R|^r (1 + l(R)^{-1}|x_R - x_Q|)^{-λ}]^{1/r}`,
//! a smoothed level-wise envelope of `|t|`.
//!
//! Levels are truncated at `j_max`, so every sum here is finite by type.
//! The smoothness factor is evaluated at *cell* centers, not frozen at the
//! anchor of the level-`j` cube; for log-regular `s` the two choices give
//! equivalent norms, and the test suite checks that equivalence through
//! [`SmoothnessSampling`]'s test-only anchored variant.

use num_complex::Complex64;
use rayon::prelude::*;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::exponents::VariableExponent;
use crate::grid::{level_field, CoefficientSequence, Grid, GridFunction, MAX_DENSE_LATTICE};
use crate::linalg::vec_norm;
use crate::varleb::{mixed_norm, NormResult};
use crate::weights::{MatrixWeight, ReducingFamily};

/// The exponent triple `(p(·), q(·), s(·))` plus lattice bounds shared by
/// the sequence norms: integrability `p`, summability-across-levels `q`,
/// smoothness `s`, finest level `j_max`, and coefficient dimension `m`.
#[derive(Debug, Clone)]
pub struct BesovSeqParams {
    pub p: VariableExponent,
    pub q: VariableExponent,
    pub s: VariableExponent,
    pub j_max: u32,
    pub m: usize,
}

impl BesovSeqParams {
    /// Validate positivity of `p`, `q` and agreement of the three exponents
    /// on dimension and base box. `s` may take any sign but must be bounded
    /// (which every exponent family is by construction).
    pub fn new(
        p: VariableExponent,
        q: VariableExponent,
        s: VariableExponent,
        j_max: u32,
        m: usize,
    ) -> Result<Self> {
        if p.minus() <= 0.0 || q.minus() <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "sequence norms need positive p and q (got p₋ = {}, q₋ = {})",
                p.minus(),
                q.minus()
            )));
        }
        if m == 0 {
            return Err(Error::InvalidInput("coefficient dimension m must be ≥ 1".into()));
        }
        let n = p.n();
        let domain = p.domain();
        for (name, e) in [("q", &q), ("s", &s)] {
            if e.n() != n || e.domain() != domain {
                return Err(Error::Incompatible(format!(
                    "exponent {name} disagrees with p on dimension or base box"
                )));
            }
        }
        Ok(BesovSeqParams { p, q, s, j_max, m })
    }
}

/// Where the smoothness factor `2^{j s(·)}` is sampled while building the
/// level fields. The public norms always use cell centers; the anchored
/// variant freezes `s` at the center of the level-`j` cube and exists so
/// tests can verify the two conventions agree up to a constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SmoothnessSampling {
    CellCenters,
    #[cfg_attr(not(test), allow(dead_code))]
    CubeAnchors,
}

/// Magnitude convention for one level field.
enum LevelMagnitude<'a> {
    Unweighted,
    Weighted(&'a MatrixWeight),
    Averaged(&'a ReducingFamily),
}

/// Unweighted sequence norm of a scalar sequence: mixed norm of the fields
/// `2^{j s(·)} |t_j(·)|`, levels `0 ..= j_max`.
pub fn besov_seq_norm_unweighted(
    t: &CoefficientSequence,
    params: &BesovSeqParams,
) -> Result<NormResult> {
    if t.m != 1 {
        return Err(Error::InvalidInput(format!(
            "the unweighted sequence norm needs scalar coefficients, got m = {}",
            t.m
        )));
    }
    besov_norm_driver(t, params, LevelMagnitude::Unweighted, SmoothnessSampling::CellCenters)
}

/// Pointwise matrix-weighted sequence norm: mixed norm of the fields
/// `2^{j s(x)} |W(x) t_j(x)|`.
///
/// The weight's mesh becomes the evaluation mesh and must be at least as
/// fine as `params.j_max`.
pub fn besov_seq_norm_w(
    t: &CoefficientSequence,
    w: &MatrixWeight,
    params: &BesovSeqParams,
) -> Result<NormResult> {
    if w.m() != t.m {
        return Err(Error::Incompatible(format!(
            "weight dimension {} vs coefficient dimension {}",
            w.m(),
            t.m
        )));
    }
    if w.grid().level < params.j_max {
        return Err(Error::Incompatible(format!(
            "weight mesh level {} coarser than j_max {}",
            w.grid().level,
            params.j_max
        )));
    }
    besov_norm_driver(t, params, LevelMagnitude::Weighted(w), SmoothnessSampling::CellCenters)
}

/// Averaged (reduced) sequence norm: mixed norm of the fields
/// `2^{j s(x)} |A_Q t_Q| |Q|^{-1/2} 1_Q`, where each coefficient is
/// measured through its cube's reducing matrix and the magnitude is
/// constant on the cube.
///
/// Every cube in the support of `t` must carry a matrix in `fam`.
pub fn besov_seq_norm_a(
    t: &CoefficientSequence,
    fam: &ReducingFamily,
    params: &BesovSeqParams,
) -> Result<NormResult> {
    if fam.m != t.m {
        return Err(Error::Incompatible(format!(
            "reducing family dimension {} vs coefficient dimension {}",
            fam.m, t.m
        )));
    }
    if fam.n != t.n || fam.domain != t.domain {
        return Err(Error::Incompatible(
            "reducing family and sequence disagree on box or dimension".into(),
        ));
    }
    besov_norm_driver(t, params, LevelMagnitude::Averaged(fam), SmoothnessSampling::CellCenters)
}

/// Shared pipeline: validate, build per-level scalar fields in parallel,
/// hand them to the mixed norm.
fn besov_norm_driver(
    t: &CoefficientSequence,
    params: &BesovSeqParams,
    how: LevelMagnitude<'_>,
    sampling: SmoothnessSampling,
) -> Result<NormResult> {
    if t.m != params.m {
        return Err(Error::Incompatible(format!(
            "coefficient dimension {} vs params.m = {}",
            t.m, params.m
        )));
    }
    if t.n != params.p.n() || t.domain != params.p.domain() {
        return Err(Error::Incompatible(
            "sequence and exponents disagree on box or dimension".into(),
        ));
    }
    if let Some(top) = t.max_occupied_level() {
        if top > params.j_max {
            return Err(Error::Incompatible(format!(
                "sequence occupies level {top} above j_max {}",
                params.j_max
            )));
        }
    }
    let grid = match &how {
        LevelMagnitude::Weighted(w) => w.grid().clone(),
        _ => Grid::new(t.n, t.domain, params.j_max)?,
    };
    let s_cells = params.s.per_cell(&grid);
    let fields = (0..=params.j_max)
        .into_par_iter()
        .map(|j| {
            let mut vals = level_magnitudes(t, &grid, j, &how)?;
            apply_smoothness_scale(&mut vals, &params.s, &s_cells, &grid, j, sampling)?;
            GridFunction::from_scalar(grid.clone(), vals)
        })
        .collect::<Result<Vec<_>>>()?;
    mixed_norm(&fields, &params.p, &params.q)
}

/// Per-cell magnitudes of one level field under the chosen convention,
/// before smoothness scaling.
fn level_magnitudes(
    t: &CoefficientSequence,
    grid: &Grid,
    j: u32,
    how: &LevelMagnitude<'_>,
) -> Result<Vec<f64>> {
    match how {
        LevelMagnitude::Unweighted => {
            let f = level_field(t, grid, j)?;
            Ok(f.magnitude().scalar_values()?.to_vec())
        }
        LevelMagnitude::Weighted(w) => {
            let f = level_field(t, grid, j)?;
            let m = t.m;
            let mut re = vec![0.0; m];
            let mut im = vec![0.0; m];
            let mut out = vec![0.0; grid.cell_count()];
            for (cell, slot) in out.iter_mut().enumerate() {
                let v = f.vector_at(cell)?;
                if v.iter().all(|z| z.norm_sqr() == 0.0) {
                    continue;
                }
                for (i, z) in v.iter().enumerate() {
                    re[i] = z.re;
                    im[i] = z.im;
                }
                // W is real, so |W v|² splits over real and imaginary parts.
                *slot = w.apply_magnitude(cell, &re).hypot(w.apply_magnitude(cell, &im));
            }
            Ok(out)
        }
        LevelMagnitude::Averaged(fam) => {
            let mut out = vec![0.0; grid.cell_count()];
            for (q, v) in t.level_entries(j) {
                let a = fam.get(q).ok_or_else(|| {
                    Error::Incompatible(format!("reducing family has no matrix for cube {q:?}"))
                })?;
                let re: Vec<f64> = v.iter().map(|z| z.re).collect();
                let im: Vec<f64> = v.iter().map(|z| z.im).collect();
                let mag = vec_norm(&a.mul_vec(&re)).hypot(vec_norm(&a.mul_vec(&im)));
                let base = mag / q.volume().sqrt();
                for cell in grid.cells_in_cube(q)? {
                    out[cell] = base;
                }
            }
            Ok(out)
        }
    }
}

/// Multiply a level's magnitudes by `2^{j s(·)}` in place.
fn apply_smoothness_scale(
    vals: &mut [f64],
    s: &VariableExponent,
    s_cells: &[f64],
    grid: &Grid,
    j: u32,
    sampling: SmoothnessSampling,
) -> Result<()> {
    let jf = f64::from(j);
    match sampling {
        SmoothnessSampling::CellCenters => {
            for (v, &sc) in vals.iter_mut().zip(s_cells) {
                *v *= (jf * sc).exp2();
            }
        }
        SmoothnessSampling::CubeAnchors => {
            for q in grid.domain.cubes_at_level(grid.n, j) {
                let scale = (jf * s.eval(&q.center())).exp2();
                for cell in grid.cells_in_cube(&q)? {
                    vals[cell] *= scale;
                }
            }
        }
    }
    Ok(())
}

/// Test-only entry point for the anchored smoothness convention; shares the
/// full unweighted pipeline with [`besov_seq_norm_unweighted`].
#[cfg(test)]
pub(crate) fn besov_seq_norm_unweighted_anchored(
    t: &CoefficientSequence,
    params: &BesovSeqParams,
) -> Result<NormResult> {
    besov_norm_driver(t, params, LevelMagnitude::Unweighted, SmoothnessSampling::CubeAnchors)
}

/// The within-level maximal sequence
/// `(t*_{r,λ})_Q = [Σ_{l(R)=l(Q)} |t_R|^r (1 + l(R)^{-1}|x_R - x_Q|)^{-λ}]^{1/r}`.
///
/// Each occupied level of `t` produces a *dense* level in the output: the
/// decay kernel never vanishes, so every lattice cube of that level carries
/// a value. Levels with no mass are skipped. `r` must be positive and
/// finite; `λ` is a free real parameter (larger values localize the
/// envelope; the self term alone already gives `(t*)_Q ≥ |t_Q|`).
pub fn tstar(t: &CoefficientSequence, r: f64, lambda: f64) -> Result<CoefficientSequence> {
    if t.m != 1 {
        return Err(Error::InvalidInput(format!(
            "the maximal sequence needs scalar coefficients, got m = {}",
            t.m
        )));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidInput(format!("power r must be positive and finite, got {r}")));
    }
    if !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("decay exponent must be finite, got {lambda}")));
    }
    let mut out = CoefficientSequence::new(t.n, 1, t.j_max, t.domain);
    let levels: BTreeSet<u32> = t.iter().map(|(q, _)| q.j).collect();
    for j in levels {
        // Support of this level with precomputed r-th powers; a level whose
        // stored coefficients are all zero contributes nothing.
        let support: Vec<(&crate::grid::DyadicCube, f64)> = t
            .level_entries(j)
            .filter_map(|(q, v)| {
                let mag = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                (mag > 0.0).then(|| (q, mag.powf(r)))
            })
            .collect();
        if support.is_empty() {
            continue;
        }
        let cubes = t.domain.cubes_at_level(t.n, j);
        if cubes.len() > MAX_DENSE_LATTICE {
            return Err(Error::InvalidInput(format!(
                "level {j} lattice has {} cubes, above the dense-output cap {}",
                cubes.len(),
                MAX_DENSE_LATTICE
            )));
        }
        let inv_l = f64::from(j).exp2();
        let vals: Vec<f64> = cubes
            .par_iter()
            .map(|q| {
                let sum: f64 = support
                    .iter()
                    .map(|(rq, tr)| tr / (1.0 + inv_l * q.center_distance(rq)).powf(lambda))
                    .sum();
                sum.powf(r.recip())
            })
            .collect();
        for (q, v) in cubes.into_iter().zip(vals) {
            out.set(q, vec![Complex64::new(v, 0.0)])?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, DyadicCube, GridData};
    use crate::weights::{reducing_family, ReducingMethod};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn const_params(p: f64, q: f64, s: f64, n: usize, domain: Domain, j_max: u32, m: usize) -> BesovSeqParams {
        BesovSeqParams::new(
            VariableExponent::constant(p, n, domain).unwrap(),
            VariableExponent::constant(q, n, domain).unwrap(),
            VariableExponent::constant(s, n, domain).unwrap(),
            j_max,
            m,
        )
        .unwrap()
    }

    /// Random scalar sequence supported on all cubes of levels `0..=j_top`.
    fn random_scalar_seq(
        n: usize,
        domain: Domain,
        j_max: u32,
        j_top: u32,
        rng: &mut ChaCha8Rng,
    ) -> CoefficientSequence {
        let mut t = CoefficientSequence::new(n, 1, j_max, domain);
        for j in 0..=j_top {
            for q in domain.cubes_at_level(n, j) {
                let z = Complex64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0);
                t.set(q, vec![z]).unwrap();
            }
        }
        t
    }

    // --- oracles ---------------------------------------------------------

    #[test]
    fn unit_coefficient_on_the_base_cube_has_norm_one() {
        // t_Q = 1 on Q = [0,1)^n: the level-0 field is |Q|^{-1/2} 1_Q = 1,
        // and ‖1‖_{L^p} = 1 for any constant p on the unit box.
        for n in [1usize, 2] {
            let mut t = CoefficientSequence::new(n, 1, 2, Domain::Unit);
            t.set(DyadicCube::new(0, vec![0; n]), vec![c(1.0)]).unwrap();
            let params = const_params(2.0, 2.7, 0.0, n, Domain::Unit, 2, 1);
            let r = besov_seq_norm_unweighted(&t, &params).unwrap();
            assert!((r.value - 1.0).abs() < 1e-12, "norm {} ≠ 1", r.value);
        }
    }

    #[test]
    fn zero_sequence_has_zero_norm_in_all_three_conventions() {
        let domain = Domain::Unit;
        let t = CoefficientSequence::new(1, 1, 2, domain);
        let params = const_params(1.5, 2.0, 0.3, 1, domain, 2, 1);
        assert_eq!(besov_seq_norm_unweighted(&t, &params).unwrap().value, 0.0);

        let grid = Grid::new(1, domain, 2).unwrap();
        let w = MatrixWeight::identity(grid, 1).unwrap();
        assert_eq!(besov_seq_norm_w(&t, &w, &params).unwrap().value, 0.0);

        let fam = reducing_family(&w, &params.p, 2, ReducingMethod::ExactScalar, 0, 0, 0.0).unwrap();
        assert_eq!(besov_seq_norm_a(&t, &fam, &params).unwrap().value, 0.0);
    }

    #[test]
    fn single_finer_coefficient_matches_the_hand_product() {
        // n = 1, one unit coefficient on a level-1 cube, p = 2, s ≡ 0:
        // the only field is √2·1_Q, and ‖√2·1_Q‖_{L²} = √2·(1/2)^{1/2} = 1.
        let mut t = CoefficientSequence::new(1, 1, 2, Domain::Unit);
        t.set(DyadicCube::new(1, vec![0]), vec![c(1.0)]).unwrap();
        let params = const_params(2.0, 3.0, 0.0, 1, Domain::Unit, 2, 1);
        let r = besov_seq_norm_unweighted(&t, &params).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12, "norm {} ≠ 1", r.value);

        // Same with p = 4 on a level-2 cube: |Q|^{-1/2}·|Q|^{1/4} = 2^{1/2}.
        let mut t2 = CoefficientSequence::new(1, 1, 2, Domain::Unit);
        t2.set(DyadicCube::new(2, vec![3]), vec![c(1.0)]).unwrap();
        let params2 = const_params(4.0, 2.0, 0.0, 1, Domain::Unit, 2, 1);
        let r2 = besov_seq_norm_unweighted(&t2, &params2).unwrap();
        assert!((r2.value - 2f64.sqrt()).abs() < 1e-12, "norm {} ≠ √2", r2.value);
    }

    #[test]
    fn identity_weight_matches_unweighted_on_parallel_data() {
        // Vector coefficients t_Q = c_Q · e with |e| = 1: |I t_j| = |t_j|,
        // so the weighted norm equals the unweighted norm of the scalar
        // magnitude sequence.
        let domain = Domain::Unit;
        let e = [0.6, 0.8];
        let mut tv = CoefficientSequence::new(1, 2, 2, domain);
        let mut ts = CoefficientSequence::new(1, 1, 2, domain);
        let coeffs = [(0u32, 0i64, 0.9), (1, 1, -1.3), (2, 2, 0.4)];
        for &(j, k, v) in &coeffs {
            let q = DyadicCube::new(j, vec![k]);
            tv.set(q.clone(), vec![c(v * e[0]), c(v * e[1])]).unwrap();
            ts.set(q, vec![c(v.abs())]).unwrap();
        }
        let grid = Grid::new(1, domain, 2).unwrap();
        let w = MatrixWeight::identity(grid, 2).unwrap();
        let pv = BesovSeqParams::new(
            VariableExponent::log_perturbed(1.8, 0.4, 1, domain).unwrap(),
            VariableExponent::constant(2.1, 1, domain).unwrap(),
            VariableExponent::constant(0.3, 1, domain).unwrap(),
            2,
            2,
        )
        .unwrap();
        let mut ps = pv.clone();
        ps.m = 1;
        let nw = besov_seq_norm_w(&tv, &w, &pv).unwrap().value;
        let nu = besov_seq_norm_unweighted(&ts, &ps).unwrap().value;
        assert!((nw - nu).abs() <= 1e-9 * nu.max(1.0), "weighted {nw} vs unweighted {nu}");
    }

    #[test]
    fn constant_diagonal_weight_scales_an_axis_coefficient() {
        // W ≡ diag(2, 3) and a single coefficient along e₁: every field
        // value doubles, so the norm is exactly 2× the unweighted one.
        let domain = Domain::Unit;
        let grid = Grid::new(1, domain, 2).unwrap();
        let cells = grid.cell_count();
        let mut data = vec![0.0; cells * 4];
        for cell in 0..cells {
            data[cell * 4] = 2.0;
            data[cell * 4 + 3] = 3.0;
        }
        let w = MatrixWeight::from_matrix_field(
            GridFunction { grid, data: GridData::Matrix { m: 2, data } },
            crate::weights::WeightFamily::Sampled,
            1e12,
        )
        .unwrap();

        let mut tv = CoefficientSequence::new(1, 2, 2, domain);
        tv.set(DyadicCube::new(1, vec![0]), vec![c(1.0), c(0.0)]).unwrap();
        let mut ts = CoefficientSequence::new(1, 1, 2, domain);
        ts.set(DyadicCube::new(1, vec![0]), vec![c(1.0)]).unwrap();

        let pv = const_params(1.7, 2.3, 0.4, 1, domain, 2, 2);
        let mut ps = pv.clone();
        ps.m = 1;
        let nw = besov_seq_norm_w(&tv, &w, &pv).unwrap().value;
        let nu = besov_seq_norm_unweighted(&ts, &ps).unwrap().value;
        assert!((nw - 2.0 * nu).abs() <= 1e-10 * nu, "weighted {nw} vs 2×{nu}");
    }

    #[test]
    fn identity_reducing_family_matches_unweighted() {
        let domain = Domain::Unit;
        let grid = Grid::new(1, domain, 2).unwrap();
        let w = MatrixWeight::identity(grid, 1).unwrap();
        let params = const_params(1.9, 2.2, -0.2, 1, domain, 2, 1);
        let fam = reducing_family(&w, &params.p, 2, ReducingMethod::ExactScalar, 0, 0, 0.0).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_scalar_seq(1, domain, 2, 2, &mut rng);
        let na = besov_seq_norm_a(&t, &fam, &params).unwrap().value;
        let nu = besov_seq_norm_unweighted(&t, &params).unwrap().value;
        assert!((na - nu).abs() <= 1e-9 * nu.max(1.0), "averaged {na} vs unweighted {nu}");
    }

    #[test]
    fn averaged_norm_single_coefficient_closed_form() {
        // Identity family, one coefficient t_Q = 3 on a level-1 cube,
        // p = 2, s ≡ 0: value = 3·|Q|^{-1/2}·‖1_Q‖₂ = 3.
        let domain = Domain::Unit;
        let grid = Grid::new(1, domain, 2).unwrap();
        let w = MatrixWeight::identity(grid, 1).unwrap();
        let params = const_params(2.0, 2.0, 0.0, 1, domain, 2, 1);
        let fam = reducing_family(&w, &params.p, 2, ReducingMethod::ExactScalar, 0, 0, 0.0).unwrap();
        let mut t = CoefficientSequence::new(1, 1, 2, domain);
        t.set(DyadicCube::new(1, vec![1]), vec![c(3.0)]).unwrap();
        let r = besov_seq_norm_a(&t, &fam, &params).unwrap();
        assert!((r.value - 3.0).abs() < 1e-12, "norm {} ≠ 3", r.value);
    }

    #[test]
    fn smoothness_anchoring_is_exact_for_constant_s_and_comparable_for_bumps() {
        let domain = Domain::Unit;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let t = random_scalar_seq(1, domain, 3, 3, &mut rng);

        let constant = const_params(1.6, 2.4, 0.7, 1, domain, 3, 1);
        let a = besov_seq_norm_unweighted(&t, &constant).unwrap().value;
        let b = besov_seq_norm_unweighted_anchored(&t, &constant).unwrap().value;
        assert!((a - b).abs() <= 1e-10 * a, "constant s: {a} vs {b}");

        let bump = BesovSeqParams::new(
            constant.p.clone(),
            constant.q.clone(),
            VariableExponent::two_level_bump(0.8, -0.1, vec![0.5], 0.1, 0.45, domain).unwrap(),
            3,
            1,
        )
        .unwrap();
        let a = besov_seq_norm_unweighted(&t, &bump).unwrap().value;
        let b = besov_seq_norm_unweighted_anchored(&t, &bump).unwrap().value;
        let ratio = a / b;
        assert!((0.25..=4.0).contains(&ratio), "bump s: ratio {ratio}");
    }

    #[test]
    fn weighted_to_averaged_ratio_is_stable_across_depth() {
        // For a fixed diagonal weight the pointwise and averaged norms are
        // equivalent with a constant independent of the sequence; check 50
        // random draws land in a fixed interval, and that refining j_max
        // moves the observed interval by at most a factor of 2.
        let domain = Domain::Centered { j_box: 0 };
        let wgrid = Grid::new(1, domain, 3).unwrap();
        let w = MatrixWeight::diagonal_power(wgrid, &[0.4, -0.3]).unwrap();
        let p = VariableExponent::log_perturbed(1.8, 0.4, 1, domain).unwrap();
        let q = VariableExponent::constant(2.1, 1, domain).unwrap();
        let s = VariableExponent::constant(0.3, 1, domain).unwrap();

        let observe = |j_max: u32, seed: u64| -> (f64, f64) {
            let fam =
                reducing_family(&w, &p, j_max, ReducingMethod::ExactDiagonal, 0, 0, 0.0).unwrap();
            let params =
                BesovSeqParams::new(p.clone(), q.clone(), s.clone(), j_max, 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for _ in 0..50 {
                let mut t = CoefficientSequence::new(1, 2, j_max, domain);
                for j in 0..=j_max {
                    for qc in domain.cubes_at_level(1, j) {
                        let z = vec![
                            Complex64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0),
                            Complex64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0),
                        ];
                        t.set(qc, z).unwrap();
                    }
                }
                let nw = besov_seq_norm_w(&t, &w, &params).unwrap().value;
                let na = besov_seq_norm_a(&t, &fam, &params).unwrap().value;
                let ratio = nw / na;
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
            (lo, hi)
        };

        let (lo2, hi2) = observe(2, 7);
        let (lo3, hi3) = observe(3, 8);
        // Fixed interval for the shipped configuration.
        assert!(lo2 > 0.25 && hi2 < 4.0, "depth-2 ratios [{lo2}, {hi2}] escape [0.25, 4]");
        assert!(lo3 > 0.25 && hi3 < 4.0, "depth-3 ratios [{lo3}, {hi3}] escape [0.25, 4]");
        // Stability under refinement.
        assert!(hi3 <= 2.0 * hi2 && lo3 >= lo2 / 2.0, "[{lo2},{hi2}] vs [{lo3},{hi3}]");
    }

    #[test]
    fn maximal_sequence_hand_value_on_adjacent_cubes() {
        // Two unit coefficients on the two level-1 cubes of [0,1): centers
        // 1/4 and 3/4, side 1/2, so the cross term is (1 + 2·(1/2))⁻² = 1/4
        // and (t*)_Q = 1 + 1/4 at both cubes for r = 1, λ = 2.
        let mut t = CoefficientSequence::new(1, 1, 1, Domain::Unit);
        t.set(DyadicCube::new(1, vec![0]), vec![c(1.0)]).unwrap();
        t.set(DyadicCube::new(1, vec![1]), vec![c(1.0)]).unwrap();
        let star = tstar(&t, 1.0, 2.0).unwrap();
        for k in [0i64, 1] {
            let v = star.magnitude(&DyadicCube::new(1, vec![k]));
            assert!((v - 1.25).abs() < 1e-12, "t* at k={k} is {v}, want 1.25");
        }
    }

    #[test]
    fn maximal_sequence_of_zero_is_empty() {
        let t = CoefficientSequence::new(2, 1, 3, Domain::Unit);
        assert_eq!(tstar(&t, 2.0, 3.0).unwrap().support_len(), 0);

        // Stored exact zeros contribute no mass either.
        let mut tz = CoefficientSequence::new(1, 1, 2, Domain::Unit);
        tz.set(DyadicCube::new(1, vec![0]), vec![c(0.0)]).unwrap();
        assert_eq!(tstar(&tz, 2.0, 3.0).unwrap().support_len(), 0);
    }

    #[test]
    fn maximal_sequence_besov_ratio_stays_bounded_for_strong_decay() {
        // One-sided empirical check: with λ well above n the envelope is
        // norm-comparable to the sequence itself.
        let domain = Domain::Unit;
        let params = BesovSeqParams::new(
            VariableExponent::log_perturbed(2.0, 0.3, 1, domain).unwrap(),
            VariableExponent::constant(2.4, 1, domain).unwrap(),
            VariableExponent::two_level_bump(0.5, 0.2, vec![0.5], 0.1, 0.4, domain).unwrap(),
            3,
            1,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let t = random_scalar_seq(1, domain, 3, 3, &mut rng);
            let star = tstar(&t, 1.0, 8.0).unwrap();
            let num = besov_seq_norm_unweighted(&star, &params).unwrap().value;
            let den = besov_seq_norm_unweighted(&t, &params).unwrap().value;
            worst = worst.max(num / den);
        }
        assert!(worst >= 1.0, "t* dominates t, so the ratio is at least 1, got {worst}");
        assert!(worst < 8.0, "envelope norm ratio {worst} unexpectedly large");
    }

    // --- properties ------------------------------------------------------

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn norms_are_homogeneous(seed in 0u64..1024, scale in 0.01f64..100.0) {
            let domain = Domain::Unit;
            let params = BesovSeqParams::new(
                VariableExponent::log_perturbed(1.5, 0.5, 1, domain).unwrap(),
                VariableExponent::constant(2.0, 1, domain).unwrap(),
                VariableExponent::constant(0.25, 1, domain).unwrap(),
                2,
                1,
            ).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_scalar_seq(1, domain, 2, 2, &mut rng);
            let tc = t.scaled(Complex64::new(scale, 0.0));

            let grid = Grid::new(1, domain, 2).unwrap();
            let w = MatrixWeight::identity(grid, 1).unwrap();
            let fam = reducing_family(&w, &params.p, 2, ReducingMethod::ExactScalar, 0, 0, 0.0).unwrap();

            for (base, scaled) in [
                (besov_seq_norm_unweighted(&t, &params).unwrap().value,
                 besov_seq_norm_unweighted(&tc, &params).unwrap().value),
                (besov_seq_norm_w(&t, &w, &params).unwrap().value,
                 besov_seq_norm_w(&tc, &w, &params).unwrap().value),
                (besov_seq_norm_a(&t, &fam, &params).unwrap().value,
                 besov_seq_norm_a(&tc, &fam, &params).unwrap().value),
            ] {
                prop_assert!(
                    (scaled - scale * base).abs() <= 1e-6 * (scale * base).max(1e-300),
                    "‖ct‖ = {scaled} vs c‖t‖ = {}", scale * base
                );
            }
        }

        #[test]
        fn maximal_sequence_dominates_and_decays_in_lambda(
            seed in 0u64..1024,
            r in 0.5f64..3.0,
            l1 in 0.5f64..4.0,
            dl in 0.1f64..4.0,
        ) {
            let domain = Domain::Unit;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_scalar_seq(1, domain, 2, 2, &mut rng);
            let s1 = tstar(&t, r, l1).unwrap();
            let s2 = tstar(&t, r, l1 + dl).unwrap();
            for (q, v) in t.iter() {
                let mag = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                prop_assert!(s1.magnitude(q) >= mag - 1e-12, "t* < |t| at {q:?}");
            }
            for (q, v) in s2.iter() {
                let hi = s1.magnitude(q);
                prop_assert!(v[0].re <= hi + 1e-12, "t* grew with λ at {q:?}: {} > {hi}", v[0].re);
            }
        }
    }
}
