//! Small numeric helpers shared across modules.

/// Inverse hyperbolic tangent with the argument clamped to `[0, 1 - 1e-7]`.
///
/// All call sites feed nonnegative norms; the upper clamp keeps points that
/// have drifted onto the ball boundary from producing infinities.
pub fn artanh(x: f64) -> f64 {
    let z = x.clamp(0.0, 1.0 - ARTANH_BOUND_EPS);
    0.5 * ((1.0 + z) / (1.0 - z)).ln()
}

/// Clamp bound shared by the scalar helper and the tape op.
pub const ARTANH_BOUND_EPS: f64 = 1e-7;

/// Inverse hyperbolic cosine, clamped to the domain `[1, inf)`.
///
/// Arguments just below 1 (floating-point drift) map to exactly 0.
pub fn arcosh(x: f64) -> f64 {
    let z = x.max(1.0);
    (z + (z * z - 1.0).sqrt()).ln()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// FNV-1a over bytes. Stable across platforms and toolchain versions, which
/// the deterministic train/validation split depends on.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Numerically stable log-sum-exp of a nonempty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    debug_assert!(!xs.is_empty());
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artanh_round_trip() {
        for &x in &[0.0, 0.1, 0.5, 0.9, 0.999] {
            assert!((artanh(x).tanh() - x).abs() < 1e-12);
        }
    }

    #[test]
    fn artanh_clamps_boundary() {
        assert!(artanh(1.0).is_finite());
        assert!(artanh(1.5).is_finite());
    }

    #[test]
    fn arcosh_exact_at_one() {
        assert_eq!(arcosh(1.0), 0.0);
        assert_eq!(arcosh(0.5), 0.0);
        assert!((arcosh(2.0_f64.cosh()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let xs = [0.3_f64, -1.2, 2.5, 0.0];
        let naive: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-12);
    }

    #[test]
    fn fnv1a_is_stable() {
        // Reference value for "abc" from the published FNV-1a parameters.
        assert_eq!(fnv1a(b"abc"), 0xe71fa2190541574b);
    }
}
