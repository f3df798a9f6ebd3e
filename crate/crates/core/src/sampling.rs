//! Deterministic low-discrepancy drivers shared by the sampled estimators.
//!
//! Everything here is a pure function of an explicit seed, so estimators
//! built on these streams are reproducible bit-for-bit and prefix-stable:
//! the first `k` samples of a longer stream equal a shorter stream exactly.

/// SplitMix64 step; used to derive stream phases from a seed.
pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-dimension increments of the additive low-discrepancy sequence:
/// `α_i = φ_d^{-(i+1)}` where `φ_d` is the root of `x^{d+1} = x + 1` (the
/// d-dimensional generalization of the golden ratio, giving well-spread
/// joint samples).
pub(crate) fn weyl_alphas(dims: usize) -> Vec<f64> {
    let mut phi = 1.5f64;
    for _ in 0..64 {
        // Newton on f(x) = x^{d+1} - x - 1.
        let d = dims as i32;
        let f = phi.powi(d + 1) - phi - 1.0;
        let fp = (d + 1) as f64 * phi.powi(d) - 1.0;
        phi -= f / fp;
    }
    (0..dims).map(|i| phi.powi(-(i as i32 + 1)).fract()).collect()
}

/// `dims` uniform phase offsets in `[0,1)` derived from the seed.
pub(crate) fn unit_offsets(seed: u64, dims: usize) -> Vec<f64> {
    let mut state = seed;
    (0..dims)
        .map(|_| (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64)
        .collect()
}

/// Uniform direction on the sphere `S^{n-1}`, n ≤ 3, from up to two
/// uniforms.
pub(crate) fn sphere_direction(n: usize, u1: f64, u2: f64) -> Vec<f64> {
    match n {
        1 => vec![if u1 < 0.5 { -1.0 } else { 1.0 }],
        2 => {
            let theta = std::f64::consts::TAU * u1;
            vec![theta.cos(), theta.sin()]
        }
        3 => {
            let z = 2.0 * u1 - 1.0;
            let theta = std::f64::consts::TAU * u2;
            let r = (1.0 - z * z).max(0.0).sqrt();
            vec![r * theta.cos(), r * theta.sin(), z]
        }
        _ => unreachable!("dimensions are capped at 3"),
    }
}

/// `count` deterministic well-spread unit vectors in `ℝ^m`, `m ≤ 3`.
pub(crate) fn sphere_points(m: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let alphas = weyl_alphas(2);
    let offsets = unit_offsets(seed, 2);
    (0..count)
        .map(|i| {
            let step = (i + 1) as f64;
            let u1 = (offsets[0] + step * alphas[0]).fract();
            let u2 = (offsets[1] + step * alphas[1]).fract();
            sphere_direction(m, u1, u2)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_prefix_stable() {
        let a = sphere_points(2, 10, 99);
        let b = sphere_points(2, 50, 99);
        assert_eq!(a.as_slice(), &b[..10]);
    }

    #[test]
    fn sphere_points_are_unit() {
        for m in 1..=3 {
            for z in sphere_points(m, 25, 1) {
                let norm: f64 = z.iter().map(|c| c * c).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }
}
