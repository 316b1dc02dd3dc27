//! Two-photon polarization statistics for the φ⁺ = (|HH⟩ + |VV⟩)/√2 state.
//!
//! Noise is described by a correlation-contrast parameter (visibility). In the
//! default isotropic (Werner) model a single visibility `V` scales every
//! correlator, so for linear analyzers at angles `a` and `b`
//!
//! ```text
//! E(a, b) = V · cos 2(a − b − θ)
//! ```
//!
//! where `θ` is a slow polarization rotation picked up by the travelling
//! photon. The anisotropic mode keeps separate contrasts for the H/V (`z`) and
//! diagonal (`x`) components of the correlation tensor:
//!
//! ```text
//! E(a, b) = V_z · cos 2a' · cos 2b + V_x · sin 2a' · sin 2b,   a' = a − θ
//! ```
//!
//! which collapses to the isotropic form when `V_z = V_x`.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QStateError {
    #[error("visibility {0} outside [0, 1]")]
    Visibility(f64),
    #[error("fidelity {0} outside [0.25, 1]")]
    Fidelity(f64),
}

/// Result of a single ±1 polarization measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Outcome {
    pub fn sign(self) -> i8 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    pub fn from_sign(sign: i8) -> Option<Self> {
        match sign {
            1 => Some(Outcome::Plus),
            -1 => Some(Outcome::Minus),
            _ => None,
        }
    }

    /// Key-bit convention: `+1 → 0`, `−1 → 1`.
    pub fn to_bit(self) -> bool {
        self == Outcome::Minus
    }

    pub fn flip(self) -> Self {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Plus => "+1",
            Outcome::Minus => "-1",
        })
    }
}

/// Orientation of a linear-polarization analyzer, stored in `[0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisAngle(f64);

impl BasisAngle {
    pub fn new(radians: f64) -> Self {
        Self(wrap_half_turn(radians))
    }

    pub fn from_degrees(degrees: f64) -> Self {
        Self::new(degrees.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

fn wrap_half_turn(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(PI);
    // rem_euclid can round up to exactly π for tiny negative inputs
    if wrapped >= PI {
        0.0
    } else {
        wrapped
    }
}

/// Summary of the shared two-photon polarization state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    vis_z: f64,
    vis_x: f64,
    rotation_offset: f64,
}

impl PairState {
    /// Werner-noise state with a single visibility.
    pub fn isotropic(visibility: f64) -> Result<Self, QStateError> {
        check_visibility(visibility)?;
        Ok(Self {
            vis_z: visibility,
            vis_x: visibility,
            rotation_offset: 0.0,
        })
    }

    /// Separate H/V and diagonal correlation contrasts.
    pub fn anisotropic(vis_z: f64, vis_x: f64) -> Result<Self, QStateError> {
        check_visibility(vis_z)?;
        check_visibility(vis_x)?;
        Ok(Self {
            vis_z,
            vis_x,
            rotation_offset: 0.0,
        })
    }

    pub fn ideal() -> Self {
        Self {
            vis_z: 1.0,
            vis_x: 1.0,
            rotation_offset: 0.0,
        }
    }

    /// Same state with the travelling photon's frame rotated by `radians`
    /// (replaces any previous offset).
    pub fn with_rotation(self, radians: f64) -> Self {
        Self {
            rotation_offset: wrap_half_turn(radians),
            ..self
        }
    }

    pub fn is_isotropic(&self) -> bool {
        self.vis_z == self.vis_x
    }

    /// Contrast of the H/V correlator; equals the visibility for isotropic states.
    pub fn visibility(&self) -> f64 {
        self.vis_z
    }

    pub fn vis_z(&self) -> f64 {
        self.vis_z
    }

    pub fn vis_x(&self) -> f64 {
        self.vis_x
    }

    pub fn rotation_offset(&self) -> f64 {
        self.rotation_offset
    }

    /// Expectation value of the product of the two ±1 outcomes.
    pub fn correlation(&self, a: BasisAngle, b: BasisAngle) -> f64 {
        let a2 = 2.0 * (a.radians() - self.rotation_offset);
        let b2 = 2.0 * b.radians();
        if self.is_isotropic() {
            self.vis_z * (a2 - b2).cos()
        } else {
            self.vis_z * a2.cos() * b2.cos() + self.vis_x * a2.sin() * b2.sin()
        }
    }

    /// `P(sa, sb) = ¼ [1 + sa·sb·E(a, b)]`.
    pub fn joint_probability(&self, a: BasisAngle, b: BasisAngle, sa: Outcome, sb: Outcome) -> f64 {
        let product = f64::from(sa.sign() * sb.sign());
        0.25 * (1.0 + product * self.correlation(a, b))
    }

    /// Draw a joint outcome. Alice's result is a fair coin; Bob agrees with it
    /// with probability `(1 + E)/2`.
    pub fn sample_outcomes<R: Rng + ?Sized>(&self, a: BasisAngle, b: BasisAngle, rng: &mut R) -> (Outcome, Outcome) {
        let sa = if rng.random::<bool>() {
            Outcome::Plus
        } else {
            Outcome::Minus
        };
        let agree = 0.5 * (1.0 + self.correlation(a, b));
        let sb = if rng.random::<f64>() < agree { sa } else { sa.flip() };
        (sa, sb)
    }
}

fn check_visibility(v: f64) -> Result<(), QStateError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(QStateError::Visibility(v))
    }
}

/// Werner-state relation `V = (4F − 1)/3`.
pub fn visibility_from_fidelity(fidelity: f64) -> Result<f64, QStateError> {
    if !(0.25..=1.0).contains(&fidelity) {
        return Err(QStateError::Fidelity(fidelity));
    }
    Ok(((4.0 * fidelity - 1.0) / 3.0).clamp(0.0, 1.0))
}

/// Inverse of [`visibility_from_fidelity`]: `F = (1 + 3V)/4`.
pub fn fidelity_from_visibility(visibility: f64) -> f64 {
    (1.0 + 3.0 * visibility) / 4.0
}

/// CHSH value reached by an isotropic state at the optimal analyzer set.
pub fn tsirelson_scaled(visibility: f64) -> f64 {
    2.0 * std::f64::consts::SQRT_2 * visibility
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_8;

    const OUTCOMES: [Outcome; 2] = [Outcome::Plus, Outcome::Minus];

    /// ⟨φ⁺| σ(a) ⊗ σ(b) |φ⁺⟩ computed with explicit 4×4 matrices, where σ(θ)
    /// is the ±1 observable of a linear polarizer at angle θ.
    fn density_matrix_correlation(v: f64, a: f64, b: f64) -> f64 {
        let sigma = |t: f64| [[(2.0 * t).cos(), (2.0 * t).sin()], [(2.0 * t).sin(), -(2.0 * t).cos()]];
        let (sa, sb) = (sigma(a), sigma(b));
        let mut op = [[0.0; 4]; 4];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        op[2 * i + k][2 * j + l] = sa[i][j] * sb[k][l];
                    }
                }
            }
        }
        // ρ = V |φ⁺⟩⟨φ⁺| + (1 − V) I/4
        let phi = [std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0, std::f64::consts::FRAC_1_SQRT_2];
        let mut trace = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                let rho = v * phi[r] * phi[c] + if r == c { (1.0 - v) / 4.0 } else { 0.0 };
                trace += rho * op[c][r];
            }
        }
        trace
    }

    #[test]
    fn aligned_bases_correlate_perfectly() {
        let s = PairState::ideal();
        assert_eq!(s.correlation(BasisAngle::new(0.0), BasisAngle::new(0.0)), 1.0);
    }

    #[test]
    fn correlation_matches_density_matrix_oracle() {
        let oracle = density_matrix_correlation(1.0, FRAC_PI_8, 0.0);
        assert!((oracle - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        for &(v, a, b) in &[(1.0, FRAC_PI_8, 0.0), (0.92, 0.3, 1.1), (0.5, 2.9, 0.2), (0.0, 1.0, 0.1)] {
            let s = PairState::isotropic(v).unwrap();
            let e = s.correlation(BasisAngle::new(a), BasisAngle::new(b));
            assert!((e - density_matrix_correlation(v, a, b)).abs() < 1e-12, "v={v} a={a} b={b}");
        }
    }

    #[test]
    fn fiber_visibility_gives_reported_qber() {
        let s = PairState::isotropic(0.9326).unwrap();
        let e = s.correlation(BasisAngle::new(0.0), BasisAngle::new(0.0));
        assert!((e - 0.9326).abs() < 1e-12);
        assert!(((1.0 - e) / 2.0 - 0.0337).abs() < 1e-4);
    }

    #[test]
    fn joint_probability_examples() {
        let z = BasisAngle::new(0.0);
        let s = PairState::ideal();
        assert_eq!(s.joint_probability(z, z, Outcome::Plus, Outcome::Plus), 0.5);
        assert_eq!(s.joint_probability(z, z, Outcome::Plus, Outcome::Minus), 0.0);
        let s = PairState::isotropic(0.92).unwrap();
        let p = s.joint_probability(BasisAngle::new(FRAC_PI_8), z, Outcome::Plus, Outcome::Plus);
        let oracle = 0.25 * (1.0 + density_matrix_correlation(0.92, FRAC_PI_8, 0.0));
        assert!((p - oracle).abs() < 1e-12);
        assert!((p - 0.4126).abs() < 1e-4);
    }

    #[test]
    fn fidelity_conversion() {
        assert_eq!(visibility_from_fidelity(1.0).unwrap(), 1.0);
        assert_eq!(visibility_from_fidelity(0.25).unwrap(), 0.0);
        let v = visibility_from_fidelity(0.941).unwrap();
        assert!((v - 0.9213).abs() < 1e-4);
        assert!((fidelity_from_visibility(v) - 0.941).abs() < 1e-12);
        assert_eq!(visibility_from_fidelity(0.2), Err(QStateError::Fidelity(0.2)));
        assert!(visibility_from_fidelity(1.01).is_err());
    }

    #[test]
    fn rejects_bad_visibility() {
        assert!(PairState::isotropic(1.2).is_err());
        assert!(PairState::anisotropic(0.9, -0.1).is_err());
    }

    #[test]
    fn angles_wrap_into_half_turn() {
        assert!((BasisAngle::new(-FRAC_PI_8).radians() - 7.0 * FRAC_PI_8).abs() < 1e-12);
        assert!(BasisAngle::new(PI).radians().abs() < 1e-12);
        assert!((BasisAngle::from_degrees(45.0).radians() - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_state_always_agrees_in_aligned_bases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = BasisAngle::new(0.0);
        for _ in 0..10_000 {
            let (a, b) = PairState::ideal().sample_outcomes(z, z, &mut rng);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn fully_mixed_state_has_no_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = PairState::isotropic(0.0).unwrap();
        let n = 1_000_000;
        let mut sum = 0i64;
        for _ in 0..n {
            let (a, b) = s.sample_outcomes(BasisAngle::new(0.4), BasisAngle::new(1.3), &mut rng);
            sum += i64::from(a.sign() * b.sign());
        }
        // 5σ of a ±1 mean over 10⁶ samples
        assert!((sum as f64 / n as f64).abs() < 0.005);
    }

    #[test]
    fn sampled_chsh_matches_scaled_tsirelson() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = PairState::isotropic(0.92).unwrap();
        let a0 = BasisAngle::from_degrees(22.5);
        let a1 = BasisAngle::from_degrees(-22.5);
        let b0 = BasisAngle::from_degrees(0.0);
        let b1 = BasisAngle::from_degrees(45.0);
        let per = 250_000;
        let mut e = |a, b| {
            let mut sum = 0i64;
            for _ in 0..per {
                let (x, y) = s.sample_outcomes(a, b, &mut rng);
                sum += i64::from(x.sign() * y.sign());
            }
            sum as f64 / per as f64
        };
        let s_hat = e(a0, b0) + e(a0, b1) + e(a1, b0) - e(a1, b1);
        assert!((s_hat - 2.602).abs() < 0.01, "S = {s_hat}");
        assert!((tsirelson_scaled(0.92) - 2.602).abs() < 1e-3);
    }

    #[test]
    fn anisotropic_collapses_to_isotropic() {
        let iso = PairState::isotropic(0.8).unwrap().with_rotation(0.3);
        for &(a, b) in &[(0.1f64, 0.7f64), (1.4, 0.2), (2.2, 3.0)] {
            let (a2, b2) = (2.0 * (a - 0.3), 2.0 * b);
            let tensor_form = 0.8 * a2.cos() * b2.cos() + 0.8 * a2.sin() * b2.sin();
            let e = iso.correlation(BasisAngle::new(a), BasisAngle::new(b));
            assert!((e - tensor_form).abs() < 1e-12);
        }
    }

    #[test]
    fn anisotropic_free_space_point() {
        // V_z from QBER 0.040, V_x chosen so that √2 (V_z + V_x) = 2.37
        let vx = 2.37 / std::f64::consts::SQRT_2 - 0.92;
        let s = PairState::anisotropic(0.92, vx).unwrap();
        let (ak, a0, a1) = (BasisAngle::from_degrees(0.0), BasisAngle::from_degrees(22.5), BasisAngle::from_degrees(-22.5));
        let (b0, b1) = (BasisAngle::from_degrees(0.0), BasisAngle::from_degrees(45.0));
        let q = (1.0 - s.correlation(ak, b0)) / 2.0;
        let chsh = s.correlation(a0, b0) + s.correlation(a0, b1) + s.correlation(a1, b0) - s.correlation(a1, b1);
        assert!((q - 0.040).abs() < 1e-12);
        assert!((chsh - 2.37).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn joint_probabilities_normalize(v in 0.0..=1.0f64, vx in 0.0..=1.0f64, a in -7.0..7.0f64, b in -7.0..7.0f64, rot in -4.0..4.0f64) {
                for s in [PairState::isotropic(v).unwrap(), PairState::anisotropic(v, vx).unwrap()] {
                    let s = s.with_rotation(rot);
                    let (a, b) = (BasisAngle::new(a), BasisAngle::new(b));
                    let total: f64 = OUTCOMES.iter().flat_map(|&x| OUTCOMES.iter().map(move |&y| (x, y)))
                        .map(|(x, y)| s.joint_probability(a, b, x, y)).sum();
                    prop_assert!((total - 1.0).abs() < 1e-12);
                    for &x in &OUTCOMES {
                        let alice: f64 = OUTCOMES.iter().map(|&y| s.joint_probability(a, b, x, y)).sum();
                        let bob: f64 = OUTCOMES.iter().map(|&y| s.joint_probability(a, b, y, x)).sum();
                        prop_assert!((alice - 0.5).abs() < 1e-12);
                        prop_assert!((bob - 0.5).abs() < 1e-12);
                    }
                    prop_assert!(s.correlation(a, b).abs() <= v.max(vx) + 1e-12);
                }
            }

            #[test]
            fn isotropic_depends_only_on_angle_difference(v in 0.0..=1.0f64, a in 0.0..3.2f64, b in 0.0..3.2f64, d in -3.0..3.0f64) {
                let s = PairState::isotropic(v).unwrap();
                let shifted = s.correlation(BasisAngle::new(a + d), BasisAngle::new(b + d));
                let offset = s.with_rotation(-d).correlation(BasisAngle::new(a), BasisAngle::new(b));
                prop_assert!((shifted - s.correlation(BasisAngle::new(a), BasisAngle::new(b))).abs() < 1e-9);
                // rotating the travelling photon by −d is equivalent to turning Alice's analyzer by +d
                let turned = s.correlation(BasisAngle::new(a + d), BasisAngle::new(b));
                prop_assert!((turned - offset).abs() < 1e-9);
            }

            #[test]
            fn chsh_classical_below_threshold(v in 0.0..=std::f64::consts::FRAC_1_SQRT_2) {
                prop_assert!(tsirelson_scaled(v) <= 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn sampling_passes_chi_square() {
        // χ² with 3 degrees of freedom; p = 0.001 critical value is 16.27
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        for &(v, a, b) in &[(1.0, 0.0, 0.3), (0.9, 0.39, 0.0), (0.5, 1.2, 2.5), (0.0, 0.7, 0.7)] {
            let s = PairState::isotropic(v).unwrap();
            let (a, b) = (BasisAngle::new(a), BasisAngle::new(b));
            let mut counts = [0u32; 4];
            for _ in 0..n {
                let (x, y) = s.sample_outcomes(a, b, &mut rng);
                counts[usize::from(x.to_bit()) * 2 + usize::from(y.to_bit())] += 1;
            }
            let mut chi2 = 0.0;
            for (i, &c) in counts.iter().enumerate() {
                let expected = n as f64 * s.joint_probability(a, b, OUTCOMES[i / 2], OUTCOMES[i % 2]);
                if expected > 0.0 {
                    chi2 += (c as f64 - expected).powi(2) / expected;
                } else {
                    assert_eq!(c, 0);
                }
            }
            assert!(chi2 < 16.27, "chi2 {chi2} for v={v}");
        }
    }
}
