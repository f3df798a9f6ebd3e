//! Almost-diagonal operators on the cube lattice.
//!
//! An operator here is a kernel `b_{Q,R}` acting on coefficient sequences by
//! `(Bt)_Q = Σ_R b_{Q,R} t_R`. Kernels come in two forms: the closed-form
//! decay kernel with parameters `(D, E, F)` — a distance factor
//! `[1 + |x_Q - x_R|/(l(Q) ∨ l(R))]^{-D}` times a level-ratio factor with
//! exponent `E` (finer `Q`) or `F` (finer `R`) — and explicit finite tables,
//! which are closed under composition. On the truncated lattice every sum is
//! finite, so application is an exact double loop; the truncated variant
//! drops weak pairs and reports a certified upper bound on the mass it
//! dropped.
//!
//! The module also houses the parameter arithmetic deciding when such an
//! operator (or a molecule family, or a singular-integral operator given by
//! kernel estimates) is bounded on the weighted sequence spaces: the derived
//! quantities `J(W)` and `C(s,q)` and the sufficiency checkers built on
//! them, plus an empirical operator-norm harness that measures `‖Bt‖/‖t‖`
//! over seeded random sequences.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exponents::{log_holder_scan, VariableExponent};
use crate::grid::{CoefficientSequence, DyadicCube, MAX_DENSE_LATTICE};
use crate::molecules::MoleculeParams;
use crate::seqspaces::{besov_seq_norm_a, besov_seq_norm_w, BesovSeqParams};
use crate::weights::{MatrixWeight, ReducingFamily};

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// Parameters `(D, E, F)` of the closed-form decay kernel: `D` governs
/// spatial decay, `E` the penalty for `Q` finer than `R`, `F` the reverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdParams {
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

/// One entry of the closed-form decay kernel:
/// `[1 + |x_Q - x_R|/(l(Q) ∨ l(R))]^{-D} · (l(Q)/l(R))^E` when
/// `l(Q) ≤ l(R)`, with exponent `F` on the inverted ratio otherwise.
///
/// Both cubes must share one dimension.
pub fn ad_kernel_entry(q: &DyadicCube, r: &DyadicCube, params: &AdParams) -> f64 {
    debug_assert_eq!(q.n(), r.n(), "kernel entry across dimensions");
    let lq = q.side();
    let lr = r.side();
    let distance_factor = (1.0 + q.center_distance(r) / lq.max(lr)).powf(-params.d);
    let level_factor =
        if lq <= lr { (lq / lr).powf(params.e) } else { (lr / lq).powf(params.f) };
    distance_factor * level_factor
}

/// An explicit kernel table: finitely many `(Q, R) ↦ b_{Q,R}` entries,
/// absent pairs meaning zero. Tables form an algebra under [`compose`].
///
/// [`compose`]: AdKernelTable::compose
#[derive(Debug, Clone, PartialEq)]
pub struct AdKernelTable {
    pub n: usize,
    entries: BTreeMap<(DyadicCube, DyadicCube), Complex64>,
}

impl AdKernelTable {
    pub fn new(n: usize) -> Self {
        AdKernelTable { n, entries: BTreeMap::new() }
    }

    /// Insert or overwrite one entry.
    pub fn set(&mut self, q: DyadicCube, r: DyadicCube, b: Complex64) -> Result<()> {
        if q.n() != self.n || r.n() != self.n {
            return Err(Error::Incompatible(format!(
                "table is {}-dimensional, got cubes of dimension {} and {}",
                self.n,
                q.n(),
                r.n()
            )));
        }
        if !b.re.is_finite() || !b.im.is_finite() {
            return Err(Error::InvalidInput(format!("kernel entry must be finite, got {b}")));
        }
        self.entries.insert((q, r), b);
        Ok(())
    }

    /// Entry at a pair (zero when absent).
    pub fn get(&self, q: &DyadicCube, r: &DyadicCube) -> Complex64 {
        // Key by reference without cloning: BTreeMap lookup needs the owned
        // pair type, so this clones the two index vectors; tables are small.
        self.entries
            .get(&(q.clone(), r.clone()))
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DyadicCube, &DyadicCube, Complex64)> {
        self.entries.iter().map(|((q, r), &b)| (q, r, b))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact finite composition `(self ∘ other)_{Q,R} = Σ_P self_{Q,P}
    /// other_{P,R}`, summed in lattice order.
    pub fn compose(&self, other: &AdKernelTable) -> Result<AdKernelTable> {
        if self.n != other.n {
            return Err(Error::Incompatible(format!(
                "composing tables of dimension {} and {}",
                self.n, other.n
            )));
        }
        // Group the right factor by its first index for the middle sum.
        let mut by_p: BTreeMap<&DyadicCube, Vec<(&DyadicCube, Complex64)>> = BTreeMap::new();
        for ((p, r), &b) in &other.entries {
            by_p.entry(p).or_default().push((r, b));
        }
        let mut out = AdKernelTable::new(self.n);
        for ((q, p), &b1) in &self.entries {
            let Some(rows) = by_p.get(p) else { continue };
            for &(r, b2) in rows {
                let key = (q.clone(), r.clone());
                *out.entries.entry(key).or_insert(Complex64::new(0.0, 0.0)) += b1 * b2;
            }
        }
        Ok(out)
    }
}

/// A kernel in either form.
#[derive(Debug, Clone)]
pub enum AdKernel {
    Closed(AdParams),
    Table(AdKernelTable),
}

// ---------------------------------------------------------------------------
// Application
// ---------------------------------------------------------------------------

/// Truncation policy for [`apply_almost_diagonal`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Exact double loop over all pairs.
    None,
    /// Drop pairs whose decay factor falls below `min_factor` — the distance
    /// factor for closed kernels, the entry modulus for tables — or whose
    /// level separation exceeds `max_level_gap`.
    Threshold { min_factor: f64, max_level_gap: Option<u32> },
}

/// Result of one operator application.
#[derive(Debug, Clone)]
pub struct AdApplyOutcome {
    pub result: CoefficientSequence,
    /// Upper bound on the dropped mass `Σ_{dropped} |b_{Q,R}| |t_R|`;
    /// `None` when the application was exact.
    pub dropped_mass: Option<f64>,
}

/// Apply a kernel to a finitely supported sequence: `(Bt)_Q = Σ_R b_{Q,R} t_R`.
///
/// For a closed kernel the output is dense — every lattice cube of levels
/// `0 ..= t.j_max` receives a value (exact zeros are pruned) — because the
/// decay kernel never vanishes. Table kernels produce support only where the
/// table does; their first-index cubes must lie inside the sequence's box.
///
/// Under [`Truncation::Threshold`] the outcome carries a certified upper
/// bound on the discarded mass, so
/// `Σ_Q |(Bt)_Q - (B_truncated t)_Q| ≤ dropped_mass`.
pub fn apply_almost_diagonal(
    kernel: &AdKernel,
    t: &CoefficientSequence,
    truncation: Truncation,
) -> Result<AdApplyOutcome> {
    if let Truncation::Threshold { min_factor, .. } = truncation {
        if !(min_factor >= 0.0 && min_factor.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "truncation factor must be nonnegative and finite, got {min_factor}"
            )));
        }
    }
    match kernel {
        AdKernel::Closed(params) => apply_closed(params, t, truncation),
        AdKernel::Table(table) => apply_table(table, t, truncation),
    }
}

fn apply_closed(
    params: &AdParams,
    t: &CoefficientSequence,
    truncation: Truncation,
) -> Result<AdApplyOutcome> {
    let m = t.m;
    let mut out = CoefficientSequence::new(t.n, m, t.j_max, t.domain);
    let dropped_reported = !matches!(truncation, Truncation::None);
    let support: Vec<(&DyadicCube, &[Complex64], f64)> = t
        .iter()
        .filter_map(|(q, v)| {
            let mag = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            (mag > 0.0).then_some((q, v, mag))
        })
        .collect();
    if support.is_empty() {
        return Ok(AdApplyOutcome {
            result: out,
            dropped_mass: dropped_reported.then_some(0.0),
        });
    }
    let mut total_dropped = 0.0;
    for j in 0..=t.j_max {
        let cubes = t.domain.cubes_at_level(t.n, j);
        if cubes.len() > MAX_DENSE_LATTICE {
            return Err(Error::InvalidInput(format!(
                "level {j} lattice has {} cubes, above the dense-output cap {}",
                cubes.len(),
                MAX_DENSE_LATTICE
            )));
        }
        let rows: Vec<(Vec<Complex64>, f64)> = cubes
            .par_iter()
            .map(|q| {
                let mut acc = vec![Complex64::new(0.0, 0.0); m];
                let mut dropped = 0.0;
                let lq = q.side();
                for &(r, v, mag) in &support {
                    let lr = r.side();
                    let level_factor = if lq <= lr {
                        (lq / lr).powf(params.e)
                    } else {
                        (lr / lq).powf(params.f)
                    };
                    if let Truncation::Threshold { max_level_gap: Some(gap), .. } = truncation {
                        if (i64::from(q.j) - i64::from(r.j)).unsigned_abs() > u64::from(gap) {
                            // The distance factor is at most 1, so the level
                            // factor alone bounds the dropped entry.
                            dropped += level_factor * mag;
                            continue;
                        }
                    }
                    let distance_factor =
                        (1.0 + q.center_distance(r) / lq.max(lr)).powf(-params.d);
                    if let Truncation::Threshold { min_factor, .. } = truncation {
                        if distance_factor < min_factor {
                            dropped += distance_factor * level_factor * mag;
                            continue;
                        }
                    }
                    let b = distance_factor * level_factor;
                    for (a, z) in acc.iter_mut().zip(v) {
                        *a += b * z;
                    }
                }
                (acc, dropped)
            })
            .collect();
        for (q, (acc, dropped)) in cubes.into_iter().zip(rows) {
            total_dropped += dropped;
            if acc.iter().any(|z| z.norm_sqr() > 0.0) {
                out.set(q, acc)?;
            }
        }
    }
    Ok(AdApplyOutcome { result: out, dropped_mass: dropped_reported.then_some(total_dropped) })
}

fn apply_table(
    table: &AdKernelTable,
    t: &CoefficientSequence,
    truncation: Truncation,
) -> Result<AdApplyOutcome> {
    if table.n != t.n {
        return Err(Error::Incompatible(format!(
            "table dimension {} vs sequence dimension {}",
            table.n, t.n
        )));
    }
    let dropped_reported = !matches!(truncation, Truncation::None);
    let out_j_max = table
        .entries
        .keys()
        .map(|(q, _)| q.j)
        .max()
        .unwrap_or(0)
        .max(t.j_max);
    let mut acc: BTreeMap<&DyadicCube, Vec<Complex64>> = BTreeMap::new();
    let mut total_dropped = 0.0;
    for ((q, r), &b) in &table.entries {
        let Some(v) = t.get(r) else { continue };
        let modulus = b.norm();
        if modulus == 0.0 {
            continue;
        }
        let mag = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if let Truncation::Threshold { min_factor, max_level_gap } = truncation {
            let gap_hit = max_level_gap
                .is_some_and(|g| (i64::from(q.j) - i64::from(r.j)).unsigned_abs() > u64::from(g));
            if gap_hit || modulus < min_factor {
                total_dropped += modulus * mag;
                continue;
            }
        }
        let slot = acc.entry(q).or_insert_with(|| vec![Complex64::new(0.0, 0.0); t.m]);
        for (a, z) in slot.iter_mut().zip(v) {
            *a += b * z;
        }
    }
    let mut out = CoefficientSequence::new(t.n, t.m, out_j_max, t.domain);
    for (q, v) in acc {
        if v.iter().any(|z| z.norm_sqr() > 0.0) {
            out.set(q.clone(), v)?;
        }
    }
    Ok(AdApplyOutcome { result: out, dropped_mass: dropped_reported.then_some(total_dropped) })
}

// ---------------------------------------------------------------------------
// Space index data and condition checkers
// ---------------------------------------------------------------------------

/// The numerical profile of a weighted sequence space that the sufficiency
/// checkers consume: dimension, exponent bounds, log-regularity constants of
/// `s` and `1/q`, and the upper growth dimension of the weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceIndexData {
    pub n: usize,
    pub p_minus: f64,
    pub q_minus: f64,
    pub q_plus: f64,
    pub s_plus: f64,
    pub s_minus: f64,
    /// Log-regularity constant of the smoothness exponent.
    pub clog_s: f64,
    /// Log-regularity constant of the reciprocal level exponent `1/q`.
    pub clog_q_inv: f64,
    /// Upper growth dimension of the weight (fitted or user-supplied).
    pub d_upper: f64,
}

impl SpaceIndexData {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        p_minus: f64,
        q_minus: f64,
        q_plus: f64,
        s_plus: f64,
        s_minus: f64,
        clog_s: f64,
        clog_q_inv: f64,
        d_upper: f64,
    ) -> Result<Self> {
        if !(p_minus > 0.0 && q_minus > 0.0 && q_plus.is_finite() && q_plus >= q_minus) {
            return Err(Error::InvalidInput(format!(
                "exponent bounds must satisfy 0 < p₋, 0 < q₋ ≤ q₊ < ∞ \
                 (got p₋ = {p_minus}, q₋ = {q_minus}, q₊ = {q_plus})"
            )));
        }
        if !(s_plus >= s_minus && s_plus.is_finite() && s_minus.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "smoothness bounds must satisfy s₋ ≤ s₊ finite, got [{s_minus}, {s_plus}]"
            )));
        }
        if !(clog_s >= 0.0 && clog_q_inv >= 0.0 && d_upper >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "regularity constants and the growth dimension must be nonnegative \
                 (got {clog_s}, {clog_q_inv}, {d_upper})"
            )));
        }
        Ok(SpaceIndexData {
            n,
            p_minus,
            q_minus,
            q_plus,
            s_plus,
            s_minus,
            clog_s,
            clog_q_inv,
            d_upper,
        })
    }

    /// Estimate the index data from exponent objects: bounds are exact,
    /// the two log-regularity constants come from the deterministic pair
    /// scan (`1/q` is scanned directly, so no reciprocal family is needed).
    pub fn estimate(
        p: &VariableExponent,
        q: &VariableExponent,
        s: &VariableExponent,
        d_upper: f64,
        pair_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = p.n();
        let domain = p.domain();
        for e in [q, s] {
            if e.n() != n || e.domain() != domain {
                return Err(Error::Incompatible(
                    "exponents disagree on dimension or base box".into(),
                ));
            }
        }
        if q.minus() <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "reciprocal scan needs q₋ > 0, got {}",
                q.minus()
            )));
        }
        let clog_s = log_holder_scan(&|x| s.eval(x), None, n, domain, pair_count, seed).c_log;
        let clog_q_inv = log_holder_scan(
            &|x| q.eval(x).recip(),
            None,
            n,
            domain,
            pair_count,
            seed.wrapping_add(1),
        )
        .c_log;
        SpaceIndexData::new(
            n,
            p.minus(),
            q.minus(),
            q.plus(),
            s.plus(),
            s.minus(),
            clog_s,
            clog_q_inv,
            d_upper,
        )
    }

    /// Replace the growth dimension (for fitted-vs-override comparisons).
    pub fn with_d_upper(mut self, d_upper: f64) -> Result<Self> {
        if d_upper.is_nan() || d_upper < 0.0 {
            return Err(Error::InvalidInput(format!(
                "growth dimension must be nonnegative, got {d_upper}"
            )));
        }
        self.d_upper = d_upper;
        Ok(self)
    }

    /// The integrability threshold `J(W) = n / min(1, p₋) + d_upper`.
    pub fn j_w(&self) -> f64 {
        self.n as f64 / self.p_minus.min(1.0) + self.d_upper
    }

    /// The combined regularity constant `C(s, q) = C_log(s) + C_log(1/q)`;
    /// exactly zero for constant exponents.
    pub fn c_sq(&self) -> f64 {
        self.clog_s + self.clog_q_inv
    }
}

/// One evaluated inequality.
#[derive(Debug, Clone)]
pub struct ConditionCheck {
    /// The inequality in words, e.g. `"D > J(W) + C(s,q)"`.
    pub name: String,
    /// Left-hand side (the parameter under test).
    pub observed: f64,
    /// Right-hand side (the threshold).
    pub threshold: f64,
    /// Strict `>` versus non-strict `≥`.
    pub strict: bool,
    pub pass: bool,
}

/// Outcome of a checker: every inequality with its verdict.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub checks: Vec<ConditionCheck>,
    pub pass: bool,
}

impl ConditionReport {
    pub(crate) fn from_checks(checks: Vec<ConditionCheck>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        ConditionReport { checks, pass }
    }

    /// The failed inequalities.
    pub fn violated(&self) -> Vec<&ConditionCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

pub(crate) fn check(name: impl Into<String>, observed: f64, threshold: f64, strict: bool) -> ConditionCheck {
    let pass = if strict { observed > threshold } else { observed >= threshold };
    ConditionCheck { name: name.into(), observed, threshold, strict, pass }
}

/// Sufficiency check for boundedness of a `(D, E, F)` kernel on the weighted
/// sequence space described by `idx`:
/// `D > J(W) + C(s,q)`, `E > n/2 + s₊`, `F > J(W) - n/2 - s₋`.
pub fn ad_condition_check(params: &AdParams, idx: &SpaceIndexData) -> ConditionReport {
    let jw = idx.j_w();
    let c = idx.c_sq();
    let nf = idx.n as f64;
    ConditionReport::from_checks(vec![
        check("D > J(W) + C(s,q)", params.d, jw + c, true),
        check("E > n/2 + s₊", params.e, nf / 2.0 + idx.s_plus, true),
        check("F > J(W) - n/2 - s₋", params.f, jw - nf / 2.0 - idx.s_minus, true),
    ])
}

/// Which side of a molecular pairing a family plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoleculeRole {
    /// The family the coefficients are read from.
    Analysis,
    /// The family the function is rebuilt with.
    Synthesis,
}

/// Sufficiency check for a molecule family to induce a bounded pairing
/// matrix on the space described by `idx`. Analysis families need
/// `K > max(n + s₊, J(W) + C(s,q))`, `L ≥ s₊`, `M > J(W) + C(s,q)`,
/// `N > J(W) - n - s₋`; synthesis families swap the roles of the smoothness
/// bounds as listed in the report.
pub fn molecule_condition_check(
    kind: MoleculeRole,
    params: &MoleculeParams,
    idx: &SpaceIndexData,
) -> ConditionReport {
    let jw = idx.j_w();
    let c = idx.c_sq();
    let nf = idx.n as f64;
    let checks = match kind {
        MoleculeRole::Analysis => vec![
            check(
                "K > max(n + s₊, J(W) + C(s,q))",
                params.k,
                (nf + idx.s_plus).max(jw + c),
                true,
            ),
            check("L ≥ s₊", params.l, idx.s_plus, false),
            check("M > J(W) + C(s,q)", params.m, jw + c, true),
            check("N > J(W) - n - s₋", params.n, jw - nf - idx.s_minus, true),
        ],
        MoleculeRole::Synthesis => vec![
            check(
                "K > max(J(W) - s₋, J(W) + C(s,q))",
                params.k,
                (jw - idx.s_minus).max(jw + c),
                true,
            ),
            check("L ≥ J(W) - n - s₋", params.l, jw - nf - idx.s_minus, false),
            check("M > J(W) + C(s,q)", params.m, jw + c, true),
            check("N > s₊", params.n, idx.s_plus, true),
        ],
    };
    ConditionReport::from_checks(checks)
}

/// Kernel-estimate parameters `(σ, E, F, G, H)` of a singular-integral
/// operator: `σ ∈ {0, 1}` switches the companion-operator hypothesis on,
/// `E`/`F` are the size/smoothness decay rates, `G`/`H` the regularity
/// orders on each variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CzoParams {
    pub sigma: u8,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
}

impl CzoParams {
    fn validate(&self) -> Result<()> {
        if self.sigma > 1 {
            return Err(Error::InvalidInput(format!("σ must be 0 or 1, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Sufficiency check for a singular-integral operator, given through its
/// kernel-estimate parameters, to be bounded on the function space
/// described by `idx`: `σ ≥ 1 when s₊ > 0`, `E ≥ max(s₊, 0)`,
/// `F > J(W) - n + max(-s₋, C(s,q))`, `G ≥ max(⌊s₊⌋, 0)`,
/// `H ≥ max(⌊J(W) - n - s₋⌋, 0)`.
pub fn czo_condition_check(
    params: &CzoParams,
    idx: &SpaceIndexData,
) -> Result<ConditionReport> {
    params.validate()?;
    let jw = idx.j_w();
    let c = idx.c_sq();
    let nf = idx.n as f64;
    let sigma_need = if idx.s_plus > 0.0 { 1.0 } else { 0.0 };
    Ok(ConditionReport::from_checks(vec![
        check("σ ≥ 1 when s₊ > 0", f64::from(params.sigma), sigma_need, false),
        check("E ≥ max(s₊, 0)", params.e, idx.s_plus.max(0.0), false),
        check(
            "F > J(W) - n + max(-s₋, C(s,q))",
            params.f,
            jw - nf + (-idx.s_minus).max(c),
            true,
        ),
        check("G ≥ max(⌊s₊⌋, 0)", params.g, idx.s_plus.floor().max(0.0), false),
        check(
            "H ≥ max(⌊J(W) - n - s₋⌋, 0)",
            params.h,
            (jw - nf - idx.s_minus).floor().max(0.0),
            false,
        ),
    ]))
}

/// Secondary mode: the inequality set under which a singular-integral
/// operator with kernel parameters `params` maps sufficiently regular atoms
/// on a cube into `(K, L, M, N)`-molecules (`target`).
/// `cancellative: false` selects the variant for non-cancellative atoms on
/// level-0 cubes, which waives the moment-side conditions (`F > ⌊L⌋` and
/// the `H` bound). `dim` is the ambient dimension.
pub fn czo_atom_map_check(
    params: &CzoParams,
    target: &MoleculeParams,
    dim: usize,
    cancellative: bool,
) -> Result<ConditionReport> {
    params.validate()?;
    let nf = dim as f64;
    let sigma_need = if target.n > 0.0 { 1.0 } else { 0.0 };
    let mut checks = vec![
        check("σ ≥ 1 when N > 0", f64::from(params.sigma), sigma_need, false),
        check("E ≥ N", params.e, target.n, false),
        check("E > max(⌊N⌋, 0)", params.e, target.n.floor().max(0.0), true),
        check("F ≥ min(K, M) - n", params.f, target.k.min(target.m) - nf, false),
        check("G ≥ max(⌊N⌋, 0)", params.g, target.n.floor().max(0.0), false),
    ];
    if cancellative {
        checks.push(check("F > ⌊L⌋", params.f, target.l.floor(), true));
        checks.push(check("H ≥ max(⌊L⌋, 0)", params.h, target.l.floor().max(0.0), false));
    }
    Ok(ConditionReport::from_checks(checks))
}

// ---------------------------------------------------------------------------
// Empirical operator norm
// ---------------------------------------------------------------------------

/// Which sequence norm measures the ratios.
#[derive(Debug, Clone, Copy)]
pub enum NormWeighting<'a> {
    /// Pointwise matrix weight.
    Pointwise(&'a MatrixWeight),
    /// Per-cube reducing family.
    Averaged(&'a ReducingFamily),
}

/// Ratio statistics of `‖Bt‖/‖t‖` over seeded random draws.
#[derive(Debug, Clone)]
pub struct OperatorNormStats {
    pub trials: usize,
    pub max: f64,
    pub median: f64,
    pub p90: f64,
    /// All observed ratios, sorted ascending.
    pub ratios: Vec<f64>,
}

/// Measure `‖Bt‖/‖t‖` over `trials` random finitely-supported sequences
/// (each lattice cube up to `params.j_max` enters the support with
/// probability one half; degenerate zero-norm draws are redrawn).
pub fn empirical_operator_norm(
    kernel: &AdKernel,
    params: &BesovSeqParams,
    weighting: NormWeighting<'_>,
    trials: usize,
    seed: u64,
) -> Result<OperatorNormStats> {
    if trials == 0 {
        return Err(Error::InvalidInput("operator-norm harness needs trials ≥ 1".into()));
    }
    let n = params.p.n();
    let domain = params.p.domain();
    let m = params.m;
    let norm_of = |t: &CoefficientSequence| -> Result<f64> {
        match weighting {
            NormWeighting::Pointwise(w) => besov_seq_norm_w(t, w, params),
            NormWeighting::Averaged(fam) => besov_seq_norm_a(t, fam, params),
        }
        .map(|r| r.value)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut t_norm = 0.0;
        let mut t = CoefficientSequence::new(n, m, params.j_max, domain);
        for attempt in 0.. {
            if attempt >= 100 {
                return Err(Error::Numerical(
                    "100 consecutive draws had zero norm; the space is degenerate".into(),
                ));
            }
            t = CoefficientSequence::new(n, m, params.j_max, domain);
            for j in 0..=params.j_max {
                for q in domain.cubes_at_level(n, j) {
                    if rng.random::<f64>() < 0.5 {
                        continue;
                    }
                    let v: Vec<Complex64> = (0..m)
                        .map(|_| {
                            Complex64::new(
                                rng.random::<f64>() * 2.0 - 1.0,
                                rng.random::<f64>() * 2.0 - 1.0,
                            )
                        })
                        .collect();
                    t.set(q, v)?;
                }
            }
            t_norm = norm_of(&t)?;
            if t_norm > 0.0 {
                break;
            }
        }
        let bt = apply_almost_diagonal(kernel, &t, Truncation::None)?.result;
        ratios.push(norm_of(&bt)? / t_norm);
    }
    ratios.sort_by(|a, b| a.total_cmp(b));
    let quantile = |q: f64| -> f64 {
        let idx = ((q * ratios.len() as f64).ceil() as usize).clamp(1, ratios.len()) - 1;
        ratios[idx]
    };
    Ok(OperatorNormStats {
        trials,
        max: *ratios.last().unwrap(),
        median: quantile(0.5),
        p90: quantile(0.9),
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, Grid};
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn cube1(j: u32, k: i64) -> DyadicCube {
        DyadicCube::new(j, vec![k])
    }

    /// All lattice cubes of `[0,1)` up to level `j_top`.
    fn unit_lattice(j_top: u32) -> Vec<DyadicCube> {
        (0..=j_top).flat_map(|j| Domain::Unit.cubes_at_level(1, j)).collect()
    }

    fn scalar_idx(n: usize, p_minus: f64, s: f64) -> SpaceIndexData {
        SpaceIndexData::new(n, p_minus, 2.0, 2.0, s, s, 0.0, 0.0, 0.0).unwrap()
    }

    // --- kernel entries ----------------------------------------------------

    #[test]
    fn kernel_entry_is_one_on_the_diagonal() {
        let p = AdParams { d: 3.2, e: 1.1, f: 0.7 };
        for q in [cube1(0, 0), cube1(2, 3), DyadicCube::new(1, vec![0, 1])] {
            assert_eq!(ad_kernel_entry(&q, &q, &p), 1.0);
        }
    }

    #[test]
    fn kernel_entry_matches_hand_value() {
        // Q = [0, 1/2), R = [0, 1), D = E = F = 1: centers 1/4 and 1/2,
        // scale 1, so (1/2)¹ · (1 + 1/4)⁻¹ = 0.4.
        let p = AdParams { d: 1.0, e: 1.0, f: 1.0 };
        let v = ad_kernel_entry(&cube1(1, 0), &cube1(0, 0), &p);
        assert!((v - 0.4).abs() < 1e-15, "entry {v} ≠ 0.4");
    }

    #[test]
    fn kernel_entry_is_symmetric_when_level_exponents_agree() {
        let p = AdParams { d: 2.3, e: 1.4, f: 1.4 };
        let (q, r) = (cube1(2, 1), cube1(0, 0));
        assert_eq!(ad_kernel_entry(&q, &r, &p), ad_kernel_entry(&r, &q, &p));
    }

    // --- application -------------------------------------------------------

    #[test]
    fn identity_table_reproduces_the_sequence() {
        let mut table = AdKernelTable::new(1);
        for q in unit_lattice(2) {
            table.set(q.clone(), q, c(1.0)).unwrap();
        }
        let mut t = CoefficientSequence::new(1, 1, 2, Domain::Unit);
        t.set_scalar(cube1(0, 0), c(0.7)).unwrap();
        t.set_scalar(cube1(2, 3), Complex64::new(-0.2, 0.5)).unwrap();
        let out = apply_almost_diagonal(&AdKernel::Table(table), &t, Truncation::None).unwrap();
        assert!(out.dropped_mass.is_none());
        assert_eq!(out.result, t);
    }

    #[test]
    fn zero_sequence_maps_to_zero() {
        let t = CoefficientSequence::new(1, 1, 3, Domain::Unit);
        let kernel = AdKernel::Closed(AdParams { d: 2.0, e: 1.0, f: 1.0 });
        let out = apply_almost_diagonal(&kernel, &t, Truncation::None).unwrap();
        assert_eq!(out.result.support_len(), 0);
    }

    #[test]
    fn truncated_application_stays_within_the_reported_bound() {
        let params = AdParams { d: 2.0, e: 1.5, f: 1.5 };
        let kernel = AdKernel::Closed(params);
        for j_top in [3u32, 4] {
            let mut t = CoefficientSequence::new(1, 1, j_top, Domain::Unit);
            // Deterministic non-trivial data on the full lattice.
            for (i, q) in unit_lattice(j_top).into_iter().enumerate() {
                let phase = (i as f64 * 0.7).sin();
                t.set_scalar(q, Complex64::new(phase, 0.3 - phase * phase)).unwrap();
            }
            let exact = apply_almost_diagonal(&kernel, &t, Truncation::None).unwrap();
            let trunc = apply_almost_diagonal(
                &kernel,
                &t,
                Truncation::Threshold { min_factor: 0.4, max_level_gap: Some(1) },
            )
            .unwrap();
            let bound = trunc.dropped_mass.unwrap();
            assert!(bound > 0.0, "expected the truncation to drop something");
            let mut diff = 0.0;
            for (q, v) in exact.result.iter() {
                let w = trunc.result.get(q);
                diff += v
                    .iter()
                    .enumerate()
                    .map(|(i, z)| (z - w.map_or(Complex64::new(0.0, 0.0), |w| w[i])).norm())
                    .sum::<f64>();
            }
            assert!(
                diff <= bound + 1e-12,
                "level {j_top}: deviation {diff} exceeds reported bound {bound}"
            );
        }
    }

    #[test]
    fn composition_matches_sequential_application() {
        let cubes = unit_lattice(2);
        let mut t1 = AdKernelTable::new(1);
        let mut t2 = AdKernelTable::new(1);
        for (i, q) in cubes.iter().enumerate() {
            for (k, r) in cubes.iter().enumerate() {
                let (a, b) = ((i + 2 * k) as f64, (i as f64 - k as f64) * 0.3);
                if (i + k) % 3 != 2 {
                    t1.set(q.clone(), r.clone(), Complex64::new((a * 0.17).cos(), b)).unwrap();
                }
                if (i * k) % 4 != 1 {
                    t2.set(q.clone(), r.clone(), Complex64::new(b, (a * 0.11).sin())).unwrap();
                }
            }
        }
        let mut t = CoefficientSequence::new(1, 1, 2, Domain::Unit);
        for (i, q) in cubes.iter().enumerate() {
            t.set_scalar(q.clone(), Complex64::new(0.4 * i as f64 - 1.0, (i as f64).cos()))
                .unwrap();
        }
        let seq = apply_almost_diagonal(
            &AdKernel::Table(t1.clone()),
            &apply_almost_diagonal(&AdKernel::Table(t2.clone()), &t, Truncation::None)
                .unwrap()
                .result,
            Truncation::None,
        )
        .unwrap()
        .result;
        let composed = t1.compose(&t2).unwrap();
        let direct = apply_almost_diagonal(&AdKernel::Table(composed), &t, Truncation::None)
            .unwrap()
            .result;
        for q in &cubes {
            let a = seq.get(q).map_or(Complex64::new(0.0, 0.0), |v| v[0]);
            let b = direct.get(q).map_or(Complex64::new(0.0, 0.0), |v| v[0]);
            assert!((a - b).norm() <= 1e-12 * (1.0 + a.norm()), "mismatch at {q:?}: {a} vs {b}");
        }
    }

    // --- condition checkers --------------------------------------------------

    #[test]
    fn ad_condition_hand_example_passes() {
        // n = 1, p ≡ 2, constant s = 0, scalar identity weight:
        // J(W) = 1, C(s,q) = 0, so (1.5, 1, 0.6) clears (1, 0.5, 0.5).
        let idx = scalar_idx(1, 2.0, 0.0);
        assert_eq!(idx.j_w(), 1.0);
        assert_eq!(idx.c_sq(), 0.0);
        let report = ad_condition_check(&AdParams { d: 1.5, e: 1.0, f: 0.6 }, &idx);
        assert!(report.pass, "violations: {:?}", report.violated());
        assert_eq!(report.checks[2].threshold, 0.5);
    }

    #[test]
    fn failing_decay_reports_its_inequality() {
        let idx = scalar_idx(1, 2.0, 0.0);
        let report = ad_condition_check(&AdParams { d: 0.9, e: 1.0, f: 0.6 }, &idx);
        assert!(!report.pass);
        let violated = report.violated();
        assert_eq!(violated.len(), 1);
        assert!(violated[0].name.starts_with('D'), "wrong inequality: {}", violated[0].name);
    }

    #[test]
    fn constant_exponents_estimate_to_zero_regularity_cost() {
        let domain = Domain::Unit;
        let p = VariableExponent::constant(1.4, 1, domain).unwrap();
        let q = VariableExponent::constant(2.5, 1, domain).unwrap();
        let s = VariableExponent::constant(0.3, 1, domain).unwrap();
        let idx = SpaceIndexData::estimate(&p, &q, &s, 0.25, 512, 5).unwrap();
        assert_eq!(idx.c_sq(), 0.0);
        assert_eq!(idx.j_w(), 1.0 / 1.0 + 0.25);
        // A genuinely variable q produces a positive reciprocal constant.
        let qv = VariableExponent::log_perturbed(2.0, 0.5, 1, domain).unwrap();
        let idxv = SpaceIndexData::estimate(&p, &qv, &s, 0.0, 512, 5).unwrap();
        assert!(idxv.clog_q_inv > 0.0);
    }

    #[test]
    fn molecule_conditions_cover_the_boundary_cases() {
        let idx = scalar_idx(1, 2.0, 0.4);
        let huge = MoleculeParams::new(50.0, 50.0, 50.0, 50.0).unwrap();
        assert!(molecule_condition_check(MoleculeRole::Analysis, &huge, &idx).pass);
        assert!(molecule_condition_check(MoleculeRole::Synthesis, &huge, &idx).pass);

        // L below s₊ fails exactly the moment inequality.
        let low_l = MoleculeParams::new(50.0, 0.3, 50.0, 50.0).unwrap();
        let report = molecule_condition_check(MoleculeRole::Analysis, &low_l, &idx);
        assert!(!report.pass);
        assert_eq!(report.violated().len(), 1);
        assert!(report.violated()[0].name.starts_with('L'));

        // The moment inequality is non-strict: L = s₊ passes.
        let edge_l = MoleculeParams::new(50.0, 0.4, 50.0, 50.0).unwrap();
        assert!(molecule_condition_check(MoleculeRole::Analysis, &edge_l, &idx).pass);
    }

    #[test]
    fn czo_conditions_match_hand_thresholds() {
        // Constant scalar setting: J(W) = 1, C = 0, s ≡ 0, n = 1 gives
        // F > 0 and H ≥ 0.
        let idx = scalar_idx(1, 2.0, 0.0);
        let czo = |sigma, e, f, g, h| CzoParams { sigma, e, f, g, h };
        let report = czo_condition_check(&czo(1, 3.0, 0.1, 0.0, 0.0), &idx).unwrap();
        assert!(report.pass, "violations: {:?}", report.violated());
        assert_eq!(report.checks[2].threshold, 0.0);
        assert_eq!(report.checks[4].threshold, 0.0);

        let big = czo_condition_check(&czo(1, 100.0, 100.0, 100.0, 100.0), &idx).unwrap();
        assert!(big.pass);

        // σ = 0 with s₊ > 0 fails the regularity-switch condition.
        let idx_pos = scalar_idx(1, 2.0, 0.7);
        let bad = czo_condition_check(&czo(0, 100.0, 100.0, 100.0, 100.0), &idx_pos).unwrap();
        assert!(!bad.pass);
        assert!(bad.violated()[0].name.starts_with('σ'));

        assert!(czo_condition_check(&czo(2, 1.0, 1.0, 1.0, 1.0), &idx).is_err());
    }

    #[test]
    fn atom_map_modes_differ_in_the_moment_conditions() {
        // min(K, M) - n = 1 = ⌊L⌋, so F = 1 sits exactly on the non-strict
        // common bound and the strict cancellative one.
        let target = MoleculeParams::new(2.0, 1.2, 2.0, 0.8).unwrap();
        let wide = CzoParams { sigma: 1, e: 2.0, f: 2.5, g: 1.0, h: 2.0 };
        let full = czo_atom_map_check(&wide, &target, 1, true).unwrap();
        let relaxed = czo_atom_map_check(&wide, &target, 1, false).unwrap();
        assert_eq!(full.checks.len(), relaxed.checks.len() + 2);
        assert!(full.pass && relaxed.pass);

        // F at ⌊L⌋ exactly: the cancellative mode fails (strict), the
        // non-cancellative mode has no such condition.
        let edge = CzoParams { f: 1.0, ..wide };
        let tight = czo_atom_map_check(&edge, &target, 1, true).unwrap();
        assert!(!tight.pass);
        let tight_relaxed = czo_atom_map_check(&edge, &target, 1, false).unwrap();
        assert!(tight_relaxed.pass);
    }

    // --- empirical norms -----------------------------------------------------

    fn identity_norm_setup(j_max: u32) -> (BesovSeqParams, MatrixWeight) {
        let domain = Domain::Unit;
        let params = BesovSeqParams::new(
            VariableExponent::constant(2.0, 1, domain).unwrap(),
            VariableExponent::constant(2.0, 1, domain).unwrap(),
            VariableExponent::constant(0.0, 1, domain).unwrap(),
            j_max,
            1,
        )
        .unwrap();
        let w = MatrixWeight::identity(Grid::new(1, domain, j_max).unwrap(), 1).unwrap();
        (params, w)
    }

    #[test]
    fn identity_kernel_has_unit_ratios() {
        let (params, w) = identity_norm_setup(1);
        let mut table = AdKernelTable::new(1);
        for q in unit_lattice(1) {
            table.set(q.clone(), q, c(1.0)).unwrap();
        }
        let stats = empirical_operator_norm(
            &AdKernel::Table(table),
            &params,
            NormWeighting::Pointwise(&w),
            4,
            42,
        )
        .unwrap();
        assert!((stats.max - 1.0).abs() < 1e-12 && (stats.median - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_kernel_has_zero_ratios() {
        let (params, w) = identity_norm_setup(1);
        let stats = empirical_operator_norm(
            &AdKernel::Table(AdKernelTable::new(1)),
            &params,
            NormWeighting::Pointwise(&w),
            3,
            7,
        )
        .unwrap();
        assert_eq!(stats.max, 0.0);
    }

    #[test]
    fn passing_kernel_ratios_are_stable_under_refinement() {
        // (D, E, F) = (2, 1.5, 1.5) clears the thresholds (1, 0.5, 0.5) of
        // the constant scalar setting, so the empirical norm should be
        // essentially resolution-independent.
        let kernel = AdKernel::Closed(AdParams { d: 2.0, e: 1.5, f: 1.5 });
        let mut maxima = Vec::new();
        for j_max in [5u32, 6] {
            let (params, w) = identity_norm_setup(j_max);
            let stats = empirical_operator_norm(
                &kernel,
                &params,
                NormWeighting::Pointwise(&w),
                6,
                1234,
            )
            .unwrap();
            maxima.push(stats.max);
        }
        assert!(
            maxima[1] <= 1.10 * maxima[0],
            "max ratio grew from {} to {}",
            maxima[0],
            maxima[1]
        );
    }

    // --- properties ----------------------------------------------------------

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kernel_entries_decay_in_d_and_distance(
            jq in 0u32..4, kq in 0i64..8,
            jr in 0u32..4, kr in 0i64..8,
            d in 0.1f64..5.0, extra in 0.1f64..3.0,
            e in 0.0f64..2.0, f in 0.0f64..2.0,
        ) {
            let q = cube1(jq, kq % (1 << jq).max(1));
            let r = cube1(jr, kr % (1 << jr).max(1));
            let base = AdParams { d, e, f };
            let stronger = AdParams { d: d + extra, e, f };
            prop_assert!(ad_kernel_entry(&q, &r, &stronger) <= ad_kernel_entry(&q, &r, &base) + 1e-15);

            // Push R further away at the same level: the entry cannot grow.
            let r_far = cube1(jr, (kr % (1 << jr).max(1)) + (1 << jr));
            // r_far leaves the unit box on purpose; only geometry matters here.
            let near = ad_kernel_entry(&q, &r, &base);
            let far = ad_kernel_entry(&q, &r_far, &base);
            if q.center_distance(&r_far) >= q.center_distance(&r) {
                prop_assert!(far <= near + 1e-15, "entry grew with distance: {far} > {near}");
            }
        }
    }
}
