//! Variable exponents `r : ℝⁿ → ℝ` restricted to a truncated box.
//!
//! One type covers integrability exponents `p(·)`, `q(·)` (positive, checked
//! at use sites) and smoothness exponents `s(·)` (any sign). Closed-form
//! families keep their global structure — a limit value at infinity, exact
//! bounds — while the sampled family is a plain per-cell table on a mesh.
//!
//! Log-regularity is *estimated*, not proved: the estimators scan a
//! deterministic, seed-offset low-discrepancy stream of point pairs and
//! report running maxima, so estimates are monotone in the pair count and a
//! longer scan reproduces a shorter one's prefix exactly.

use crate::error::{Error, Result};
use crate::grid::{Domain, Grid};
use crate::sampling::{sphere_direction, unit_offsets, weyl_alphas};

/// Smallest pair separation in the estimator stream. Below this,
/// `|r(x) - r(y)| · log(1/|x-y|)` of any continuous family is dominated by
/// rounding noise rather than structure.
const MIN_PAIR_SEPARATION: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Families
// ---------------------------------------------------------------------------

/// Closed-form families plus the sampled fallback.
#[derive(Debug, Clone, PartialEq)]
pub enum ExponentKind {
    /// `r(x) = c`.
    Constant(f64),
    /// `r(x) = limit + amplitude / log(e + |x|)`; the model log-regular
    /// perturbation, with value `limit + amplitude` at the origin and limit
    /// `limit` at infinity.
    LogPerturbed { limit: f64, amplitude: f64 },
    /// Radial two-level profile around `center`: `v_in` inside radius
    /// `r_in`, `v_out` outside radius `r_out`, cubic smoothstep between.
    TwoLevelBump {
        v_in: f64,
        v_out: f64,
        center: Vec<f64>,
        r_in: f64,
        r_out: f64,
    },
    /// Per-cell values on a mesh; evaluation clamps to the nearest cell, so
    /// the function extends to all of `ℝⁿ` as constant beyond the box.
    Samples { grid: Grid, values: Vec<f64> },
    /// Pointwise conjugate `r/(r-1)` of the boxed exponent.
    Conjugate(Box<VariableExponent>),
    /// Pointwise multiple `factor · r` of the boxed exponent.
    Scaled { base: Box<VariableExponent>, factor: f64 },
}

/// A variable exponent on a base box, with cached exact bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableExponent {
    kind: ExponentKind,
    n: usize,
    domain: Domain,
    minus: f64,
    plus: f64,
    at_infinity: Option<f64>,
}

/// Estimated log-regularity constants, each a running maximum over the
/// sampled pair stream (hence a certified *lower* bound on the true
/// constant).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogHolderEstimate {
    /// Local constant: `max |r(x)-r(y)| · log(1/|x-y|)` over sampled pairs
    /// with `|x-y| < 1/2`.
    pub c0: f64,
    /// Decay constant: `max |r(x)-r∞| · log(e+|x|)` over sampled points.
    pub c_infinity: f64,
    /// Combined constant: `max |r(x)-r(y)| · log(e + 1/|x-y|)` over all
    /// sampled pairs.
    pub c_log: f64,
}

impl VariableExponent {
    /// Constant exponent.
    pub fn constant(c: f64, n: usize, domain: Domain) -> Result<Self> {
        check_value(c)?;
        Ok(VariableExponent {
            kind: ExponentKind::Constant(c),
            n,
            domain,
            minus: c,
            plus: c,
            at_infinity: Some(c),
        })
    }

    /// Log-perturbed exponent `limit + amplitude / log(e + |x|)`.
    pub fn log_perturbed(limit: f64, amplitude: f64, n: usize, domain: Domain) -> Result<Self> {
        check_value(limit)?;
        check_value(amplitude)?;
        Ok(VariableExponent {
            kind: ExponentKind::LogPerturbed { limit, amplitude },
            n,
            domain,
            minus: limit.min(limit + amplitude),
            plus: limit.max(limit + amplitude),
            at_infinity: Some(limit),
        })
    }

    /// Radial two-level bump; the value at infinity is `v_out`.
    pub fn two_level_bump(
        v_in: f64,
        v_out: f64,
        center: Vec<f64>,
        r_in: f64,
        r_out: f64,
        domain: Domain,
    ) -> Result<Self> {
        check_value(v_in)?;
        check_value(v_out)?;
        if !(r_in >= 0.0 && r_out > r_in && r_out.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bump radii must satisfy 0 ≤ r_in < r_out, got {r_in}, {r_out}"
            )));
        }
        let n = center.len();
        Ok(VariableExponent {
            kind: ExponentKind::TwoLevelBump { v_in, v_out, center, r_in, r_out },
            n,
            domain,
            minus: v_in.min(v_out),
            plus: v_in.max(v_out),
            at_infinity: Some(v_out),
        })
    }

    /// Per-cell sampled exponent. No value at infinity until
    /// [`VariableExponent::with_infinity`] declares one.
    pub fn from_samples(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::Incompatible(format!(
                "{} samples for a grid of {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        for &v in &values {
            check_value(v)?;
        }
        let minus = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let plus = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(VariableExponent {
            n: grid.n,
            domain: grid.domain,
            kind: ExponentKind::Samples { grid, values },
            minus,
            plus,
            at_infinity: None,
        })
    }

    /// Declare (or override) the value at infinity; needed by the decay
    /// estimator for sampled exponents.
    pub fn with_infinity(mut self, v: f64) -> Result<Self> {
        check_value(v)?;
        self.at_infinity = Some(v);
        Ok(self)
    }

    /// Spatial dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Base box.
    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Exact lower bound `r₋` over the box (and beyond, for closed forms).
    pub fn minus(&self) -> f64 {
        self.minus
    }

    /// Exact upper bound `r₊`.
    pub fn plus(&self) -> f64 {
        self.plus
    }

    /// The limit value at infinity, when the family has one.
    pub fn at_infinity(&self) -> Option<f64> {
        self.at_infinity
    }

    /// `Some(c)` when the exponent is constant (detected via exact bounds);
    /// used for closed-form fast paths.
    pub fn constant_value(&self) -> Option<f64> {
        (self.minus == self.plus).then_some(self.minus)
    }

    /// Pointwise evaluation.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ExponentKind::Constant(c) => *c,
            ExponentKind::LogPerturbed { limit, amplitude } => {
                let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
                limit + amplitude / (std::f64::consts::E + r).ln()
            }
            ExponentKind::TwoLevelBump { v_in, v_out, center, r_in, r_out } => {
                let rho = x
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if rho <= *r_in {
                    *v_in
                } else if rho >= *r_out {
                    *v_out
                } else {
                    let t = (rho - r_in) / (r_out - r_in);
                    let w = t * t * (3.0 - 2.0 * t);
                    v_in + (v_out - v_in) * w
                }
            }
            ExponentKind::Samples { grid, values } => {
                // Clamp into the box, then look up the containing cell.
                let lower = grid.domain.lower(grid.n);
                let side = grid.domain.side();
                let h = grid.cell_side();
                let clamped: Vec<f64> = x
                    .iter()
                    .zip(&lower)
                    .map(|(&c, &lo)| c.clamp(lo, lo + side - 0.5 * h))
                    .collect();
                let cell = grid
                    .cell_of_point(&clamped)
                    .expect("clamped point is inside the box");
                values[cell]
            }
            ExponentKind::Conjugate(base) => {
                let p = base.eval(x);
                p / (p - 1.0)
            }
            ExponentKind::Scaled { base, factor } => factor * base.eval(x),
        }
    }

    /// Values at all cell centers of a mesh, in flat cell order.
    pub fn per_cell(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.cell_count())
            .map(|c| self.eval(&grid.cell_center(c)))
            .collect()
    }

    /// The pointwise conjugate `r'(x) = r(x)/(r(x)-1)`.
    ///
    /// Requires `r₋ > 1`; at `r = 1` the conjugate is infinite and the
    /// truncated model cannot represent it.
    pub fn conjugate(&self) -> Result<VariableExponent> {
        if self.minus <= 1.0 {
            return Err(Error::ConjugateUndefined);
        }
        let conj = |v: f64| v / (v - 1.0);
        match &self.kind {
            // Conjugation is an involution; unwrap instead of double-boxing.
            ExponentKind::Conjugate(base) => Ok((**base).clone()),
            ExponentKind::Constant(c) => {
                VariableExponent::constant(conj(*c), self.n, self.domain)
            }
            ExponentKind::Samples { grid, values } => {
                let mapped = values.iter().map(|&v| conj(v)).collect();
                let out = VariableExponent::from_samples(grid.clone(), mapped)?;
                match self.at_infinity {
                    Some(v) => out.with_infinity(conj(v)),
                    None => Ok(out),
                }
            }
            _ => Ok(VariableExponent {
                kind: ExponentKind::Conjugate(Box::new(self.clone())),
                n: self.n,
                domain: self.domain,
                // Conjugation reverses order: (r')₋ = (r₊)', (r')₊ = (r₋)'.
                minus: conj(self.plus),
                plus: conj(self.minus),
                at_infinity: self.at_infinity.map(conj),
            }),
        }
    }

    /// The pointwise multiple `factor · r(x)`, `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<VariableExponent> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "scale factor must be positive and finite, got {factor}"
            )));
        }
        match &self.kind {
            ExponentKind::Constant(c) => {
                VariableExponent::constant(factor * c, self.n, self.domain)
            }
            ExponentKind::Samples { grid, values } => {
                let mapped = values.iter().map(|&v| factor * v).collect();
                let out = VariableExponent::from_samples(grid.clone(), mapped)?;
                match self.at_infinity {
                    Some(v) => out.with_infinity(factor * v),
                    None => Ok(out),
                }
            }
            _ => Ok(VariableExponent {
                kind: ExponentKind::Scaled { base: Box::new(self.clone()), factor },
                n: self.n,
                domain: self.domain,
                minus: factor * self.minus,
                plus: factor * self.plus,
                at_infinity: self.at_infinity.map(|v| factor * v),
            }),
        }
    }

    /// Estimate the log-regularity constants by scanning `pair_count`
    /// deterministic point pairs.
    ///
    /// The stream is an additive low-discrepancy sequence whose phase is
    /// derived from `seed`: the same seed always yields the same pairs, and
    /// the first `k` pairs of a longer scan are exactly a shorter scan, so
    /// all three estimates are monotone non-decreasing in `pair_count`.
    ///
    /// Positions are uniform over the box, directions uniform on the sphere,
    /// and separations log-uniform between `1e-8` and the box diameter, so
    /// both near-diagonal and far pairs are probed at every scale.
    ///
    /// Errors with [`Error::NoLimitValue`] when the family has no value at
    /// infinity (the decay constant would be meaningless).
    pub fn log_holder_constants(
        &self,
        pair_count: usize,
        seed: u64,
    ) -> Result<LogHolderEstimate> {
        let r_inf = self.at_infinity.ok_or(Error::NoLimitValue)?;
        Ok(log_holder_scan(
            &|x| self.eval(x),
            Some(r_inf),
            self.n,
            self.domain,
            pair_count,
            seed,
        ))
    }
}

/// The pair-stream scanner behind [`VariableExponent::log_holder_constants`],
/// generic over the evaluated function so derived quantities (such as the
/// reciprocal of an exponent) can be scanned without their own family.
/// Without a limit value the decay constant is reported as 0.
pub(crate) fn log_holder_scan(
    eval: &dyn Fn(&[f64]) -> f64,
    r_inf: Option<f64>,
    n: usize,
    domain: Domain,
    pair_count: usize,
    seed: u64,
) -> LogHolderEstimate {
    let lower = domain.lower(n);
    let side = domain.side();
    let diameter = side * (n as f64).sqrt();

    // Dimensions of the driving sequence: n for position, up to 2 for a
    // sphere direction, 1 for the separation scale.
    let dims = n + 3;
    let alphas = weyl_alphas(dims);
    let offsets = unit_offsets(seed, dims);

    let mut est = LogHolderEstimate { c0: 0.0, c_infinity: 0.0, c_log: 0.0 };
    let log_min = MIN_PAIR_SEPARATION.ln();
    let log_max = diameter.max(2.0 * MIN_PAIR_SEPARATION).ln();

    for i in 0..pair_count {
        let step = (i + 1) as f64;
        let u = |d: usize| (offsets[d] + step * alphas[d]).fract();

        let x: Vec<f64> = (0..n).map(|d| lower[d] + side * u(d)).collect();
        let dir = sphere_direction(n, u(n), u(n + 1));
        let delta = (log_min + u(n + 2) * (log_max - log_min)).exp();
        let y: Vec<f64> = x.iter().zip(&dir).map(|(&c, &d)| c + delta * d).collect();

        let rx = eval(&x);
        let ry = eval(&y);
        let gap = (rx - ry).abs();
        if delta < 0.5 {
            est.c0 = est.c0.max(gap * (1.0 / delta).ln());
        }
        est.c_log = est.c_log.max(gap * (std::f64::consts::E + 1.0 / delta).ln());
        if let Some(ri) = r_inf {
            for (p, rp) in [(&x, rx), (&y, ry)] {
                let norm = p.iter().map(|c| c * c).sum::<f64>().sqrt();
                est.c_infinity =
                    est.c_infinity.max((rp - ri).abs() * (std::f64::consts::E + norm).ln());
            }
        }
    }
    est
}

fn check_value(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("exponent value must be finite, got {v}")))
    }
}

/// The harmonic mean exponent over a union `E` of mesh cells:
/// `1/p_E = (1/|E|) ∫_E 1/p(x) dx`, evaluated exactly on cell centers.
///
/// Requires `p₋ > 0` and a nonempty cell set.
pub fn harmonic_mean_exponent(p: &VariableExponent, grid: &Grid, cells: &[usize]) -> Result<f64> {
    if p.minus() <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "harmonic mean needs a positive exponent, got lower bound {}",
            p.minus()
        )));
    }
    if cells.is_empty() {
        return Err(Error::InvalidInput("harmonic mean over an empty cell set".into()));
    }
    // Equal cell volumes cancel: the integral mean of 1/p is the plain mean
    // over the chosen cells.
    let mean_recip = cells
        .iter()
        .map(|&c| 1.0 / p.eval(&grid.cell_center(c)))
        .sum::<f64>()
        / cells.len() as f64;
    Ok(1.0 / mean_recip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, Grid};

    #[test]
    fn constant_family_has_zero_log_holder_constants() {
        let p = VariableExponent::constant(1.7, 2, Domain::Unit).unwrap();
        let est = p.log_holder_constants(500, 42).unwrap();
        assert_eq!(est.c0, 0.0);
        assert_eq!(est.c_infinity, 0.0);
        assert_eq!(est.c_log, 0.0);
    }

    #[test]
    fn log_perturbed_bounds_and_limit() {
        let p = VariableExponent::log_perturbed(1.5, 0.3, 1, Domain::Centered { j_box: 2 })
            .unwrap();
        // Value at the origin attains the upper bound.
        assert!((p.eval(&[0.0]) - 1.8).abs() < 1e-15);
        assert_eq!(p.minus(), 1.5);
        assert_eq!(p.plus(), 1.8);
        assert_eq!(p.at_infinity(), Some(1.5));
        // Values decrease toward the limit with |x|.
        assert!(p.eval(&[3.0]) < p.eval(&[1.0]));
        assert!(p.eval(&[3.0]) > 1.5);
    }

    #[test]
    fn bump_is_flat_inside_and_outside() {
        let p = VariableExponent::two_level_bump(
            2.0,
            1.2,
            vec![0.5, 0.5],
            0.1,
            0.4,
            Domain::Unit,
        )
        .unwrap();
        assert_eq!(p.eval(&[0.5, 0.55]), 2.0);
        assert_eq!(p.eval(&[0.95, 0.5]), 1.2);
        let mid = p.eval(&[0.5 + 0.25, 0.5]);
        assert!(mid > 1.2 && mid < 2.0);
        assert_eq!(p.at_infinity(), Some(1.2));
    }

    #[test]
    fn estimates_are_monotone_and_prefix_stable() {
        let p = VariableExponent::log_perturbed(1.5, 0.4, 2, Domain::Centered { j_box: 1 })
            .unwrap();
        let short = p.log_holder_constants(200, 7).unwrap();
        let long = p.log_holder_constants(2000, 7).unwrap();
        assert!(long.c0 >= short.c0);
        assert!(long.c_infinity >= short.c_infinity);
        assert!(long.c_log >= short.c_log);
        // Same count, same seed: bit-identical.
        let again = p.log_holder_constants(200, 7).unwrap();
        assert_eq!(short, again);
        // The combined constant dominates the local one (its log factor is
        // larger on every contributing pair).
        assert!(long.c_log >= long.c0);
    }

    #[test]
    fn sampled_family_without_limit_refuses_decay_estimate() {
        let grid = Grid::new(1, Domain::Unit, 2).unwrap();
        let p =
            VariableExponent::from_samples(grid.clone(), vec![1.0, 2.0, 1.5, 1.25]).unwrap();
        assert!(matches!(
            p.log_holder_constants(10, 0),
            Err(Error::NoLimitValue)
        ));
        let p = p.with_infinity(1.5).unwrap();
        assert!(p.log_holder_constants(10, 0).is_ok());
    }

    #[test]
    fn conjugate_of_constant_four_is_four_thirds() {
        let p = VariableExponent::constant(4.0, 1, Domain::Unit).unwrap();
        let q = p.conjugate().unwrap();
        assert!((q.eval(&[0.3]) - 4.0 / 3.0).abs() < 1e-15);
        // Involution.
        let back = q.conjugate().unwrap();
        assert!((back.eval(&[0.3]) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn conjugate_reverses_bounds() {
        let p = VariableExponent::log_perturbed(2.0, 0.5, 1, Domain::Unit).unwrap();
        let q = p.conjugate().unwrap();
        // p ∈ [2, 2.5] so p' ∈ [5/3, 2] with (p')₋ = (p₊)'.
        assert!((q.minus() - 5.0 / 3.0).abs() < 1e-15);
        assert!((q.plus() - 2.0).abs() < 1e-15);
        // Pointwise identity at the origin: p(0) = 2.5.
        assert!((q.eval(&[0.0]) - 5.0 / 3.0).abs() < 1e-15);
        // Double conjugate unwraps to the original values.
        let back = q.conjugate().unwrap();
        assert_eq!(back.eval(&[0.2]), p.eval(&[0.2]));
    }

    #[test]
    fn conjugate_requires_lower_bound_above_one() {
        let p = VariableExponent::constant(1.0, 1, Domain::Unit).unwrap();
        assert!(matches!(p.conjugate(), Err(Error::ConjugateUndefined)));
    }

    #[test]
    fn harmonic_mean_of_one_and_two_is_four_thirds() {
        let grid = Grid::new(1, Domain::Unit, 1).unwrap();
        let p = VariableExponent::from_samples(grid.clone(), vec![1.0, 2.0]).unwrap();
        let pe = harmonic_mean_exponent(&p, &grid, &[0, 1]).unwrap();
        assert!((pe - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn scaled_exponent_scales_bounds_and_values() {
        let p = VariableExponent::log_perturbed(1.5, 0.3, 1, Domain::Unit).unwrap();
        let r = p.scaled(2.0).unwrap();
        assert!((r.eval(&[0.25]) - 2.0 * p.eval(&[0.25])).abs() < 1e-15);
        assert!((r.minus() - 3.0).abs() < 1e-15);
        assert!((r.plus() - 3.6).abs() < 1e-15);
        assert_eq!(r.at_infinity(), Some(3.0));
    }

    #[test]
    fn per_cell_values_respect_cached_bounds() {
        let grid = Grid::new(2, Domain::Unit, 3).unwrap();
        let p = VariableExponent::two_level_bump(
            2.5,
            1.1,
            vec![0.5, 0.5],
            0.05,
            0.45,
            Domain::Unit,
        )
        .unwrap();
        for v in p.per_cell(&grid) {
            assert!(v >= p.minus() - 1e-15 && v <= p.plus() + 1e-15);
        }
    }
}
