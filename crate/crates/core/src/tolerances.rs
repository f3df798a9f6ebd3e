//! Centralized numerical tolerances with rationale.
//!
//! Every threshold used by solvers and checks in this crate is defined here,
//! with a note on where it comes from. No ad-hoc magic numbers at call sites.

/// Relative bracket width at which the norm bisection stops.
///
/// The modular is evaluated in f64; below ~1e-12 relative the bracket motion
/// is dominated by rounding in `powf`. 1e-10 leaves two orders of headroom
/// while still converging in ≤ 200 halvings from any sane initial bracket
/// (2^-200 ≈ 6e-61 of the initial width).
pub const NORM_REL_TOL: f64 = 1e-10;

/// Iteration cap for the norm bisection.
///
/// A bracket of relative width w needs log2(w/NORM_REL_TOL) halvings; the
/// widest bracket we ever construct is ~1e16 relative (tiny lower endpoint),
/// which needs ~87. 200 is a hard safety stop, not a tuning knob.
pub const NORM_MAX_ITER: u32 = 200;

/// Off-diagonal Frobenius tolerance for the cyclic Jacobi eigen-iteration,
/// and hence the accuracy of spectral norms for m = 3.
///
/// Jacobi converges quadratically; for 3x3 symmetric matrices two to three
/// sweeps reach machine precision. 1e-12 (relative to the matrix scale) is
/// the contract the characteristic computation quotes.
pub const EIGEN_TOL: f64 = 1e-12;

/// Optimality slack for the John-ellipsoid ascent: the dual of the
/// max-log-det program stops when every sampled direction's stationarity
/// value sits within this relative band of its optimal level.
///
/// The slack enters distortion bounds through exp(·/m); 1e-9 changes any
/// reported ratio by < 1e-9, far under the sampling slack of the direction
/// set.
pub const JOHN_LOGDET_REL_GAIN: f64 = 1e-9;

/// Iteration cap for the John-ellipsoid ascent (dual exchange steps).
pub const JOHN_MAX_ITER: u32 = 20_000;

/// Sampling slack ε_s for the John soft lower check
/// min_i |A z_i| / N_Q(z_i) ≥ 1 / (√m (1 + ε_s)).
///
/// The √m factor is the worst-case symmetric-body distortion; ε_s absorbs the
/// gap between the sampled direction set and the full sphere. 0.1 matches the
/// coarsest shipped direction sets (16 directions in m = 2).
pub const JOHN_SAMPLING_SLACK: f64 = 0.1;

/// Maximum residual of the multiplier partition Σ φ̂_j ψ̂_j = 1 on the
/// covered frequency band.
///
/// ψ̂ is built by dividing by the same sum that the residual re-evaluates, so
/// the residual is pure rounding: a handful of ulps. 1e-12 is generous.
pub const PARTITION_RESIDUAL_TOL: f64 = 1e-12;

/// Max-norm tolerance for the analysis-then-synthesis round trip on inputs
/// whose spectrum lies in the covered band.
///
/// The round trip is exact in exact arithmetic once the grid oversamples the
/// band (grid exponent ≥ J_max + 3); 1e-6 absorbs FFT rounding accumulated
/// over ~2^20-point transforms plus the coefficient scatter.
pub const RECONSTRUCTION_TOL: f64 = 1e-6;

/// Perfect-reconstruction tolerance for the discrete wavelet transform.
///
/// The filter bank is orthonormal to ~1e-15 per coefficient (verified at
/// load); a full separable round trip over ≤ 2^20 samples accumulates to
/// ~1e-12 worst case. 1e-10 is the contract.
pub const WAVELET_PR_TOL: f64 = 1e-10;

/// Tolerance for discrete orthonormality cross-pairings ⟨θ_Q, θ_R⟩ − δ_QR.
///
/// Pairings are plain quadrature sums of cascade-refined samples; 1e-8 covers
/// the cascade's dyadic-point rounding at the depths the suite uses.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Tolerance for vanishing-moment sums of the cascade-evaluated wavelet.
///
/// Moments are Riemann sums over dyadic points at cascade depth ≥ 8; the
/// partition-of-unity structure makes the sums cancel to rounding, observed
/// ≤ 1e-9 for all shipped filters.
pub const MOMENT_TOL: f64 = 1e-8;

/// Tolerance for re-verifying embedded filter constants at load
/// (Σ h_k = √2 and double-shift orthonormality).
///
/// Shipped coefficient tables are accurate to the last f64 digit, so the
/// identities hold to a few ulps; 1e-10 catches any transcription error
/// without false alarms.
pub const FILTER_CHECK_TOL: f64 = 1e-10;

/// Exactness tolerance for the trace∘extend coefficient round trip.
///
/// The round trip multiplies and then divides by the same cascade value; the
/// result differs from the input by at most one rounding each way.
pub const TRACE_ROUNDTRIP_TOL: f64 = 1e-12;

/// Anchor validity floor: |φ(−k₀)| below this makes extension ill-posed.
pub const ANCHOR_MIN_ABS: f64 = 1e-12;

/// Default tolerance for pointwise condition checks (molecule conditions,
/// ratio caps) when the caller does not supply one.
///
/// Condition quantities are exact cell maxima of closed-form expressions;
/// 1e-8 only has to absorb evaluation rounding.
pub const DEFAULT_CHECK_TOL: f64 = 1e-8;

/// Default per-cell condition-number cap for matrix weights.
///
/// Weight matrices are inverted cell by cell; past ~1e12 the inverse loses
/// half the mantissa and spectral products become unreliable. Shipped
/// families stay far below this; the cap exists to reject degenerate
/// sampled inputs early.
pub const CONDITION_CAP: f64 = 1e12;
