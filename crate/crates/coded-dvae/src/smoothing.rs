//! Truncated-exponential smoothing transformations over [0,1]: conditional
//! densities and CDFs, the conditional and mixture inverse CDFs used for
//! reparameterized sampling, and uniform noise draws.
//!
//! The relaxation places `p(z|bit=1) = exp(beta (z-1)) / Z` and
//! `p(z|bit=0) = exp(-beta z) / Z` on [0,1] with `Z = (1 - exp(-beta)) / beta`,
//! so a bit probability `q` induces the two-component mixture whose inverse
//! CDF is available in closed form via a quadratic root.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coding::SoftWord;

/// Default inverse temperature used across models.
pub const DEFAULT_BETA: f64 = 15.0;

/// Uniform draws are clipped into `(RHO_EPS, 1 - RHO_EPS)`.
pub const RHO_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum SmoothingError {
    InvalidBeta(f64),
    ZOutOfRange(f64),
    RhoOutOfRange(f64),
    LengthMismatch { expected: usize, got: usize },
    NonFinite,
}

impl fmt::Display for SmoothingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidBeta(b) => write!(f, "inverse temperature must be positive, got {b}"),
            Self::ZOutOfRange(z) => write!(f, "z = {z} lies outside [0,1]"),
            Self::RhoOutOfRange(r) => write!(f, "uniform draw {r} lies outside (0,1)"),
            Self::LengthMismatch { expected, got } => {
                write!(f, "length mismatch: expected {expected}, got {got}")
            }
            Self::NonFinite => write!(f, "non-finite value encountered"),
        }
    }
}

impl std::error::Error for SmoothingError {}

/// Inverse temperature `beta` with the cached normalizer
/// `Z = (1 - exp(-beta)) / beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    beta: f64,
    z_norm: f64,
}

impl SmoothingParams {
    pub fn new(beta: f64) -> Result<Self, SmoothingError> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(SmoothingError::InvalidBeta(beta));
        }
        Ok(Self { beta, z_norm: -(-beta).exp_m1() / beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// The normalizer `Z = (1 - exp(-beta)) / beta`.
    pub fn z_norm(&self) -> f64 {
        self.z_norm
    }

    fn exp_neg_beta(&self) -> f64 {
        (-self.beta).exp()
    }
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self::new(DEFAULT_BETA).expect("default beta is valid")
    }
}

/// A vector of uniforms in the open unit interval, with the seed recorded
/// when one was used.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    rho: Vec<f64>,
    seed: Option<u64>,
}

impl NoiseDraw {
    /// Wrap explicit uniforms. Values are clipped into
    /// `(RHO_EPS, 1 - RHO_EPS)`; non-finite input is rejected.
    pub fn from_uniforms(rho: Vec<f64>) -> Result<Self, SmoothingError> {
        if rho.iter().any(|r| !r.is_finite()) {
            return Err(SmoothingError::NonFinite);
        }
        if let Some(&r) = rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(SmoothingError::RhoOutOfRange(r));
        }
        let rho = rho.into_iter().map(|r| r.clamp(RHO_EPS, 1.0 - RHO_EPS)).collect();
        Ok(Self { rho, seed: None })
    }

    /// Draw `len` uniforms from the caller's generator.
    pub fn draw<R: Rng>(len: usize, rng: &mut R) -> Self {
        let rho = (0..len)
            .map(|_| rng.gen::<f64>().clamp(RHO_EPS, 1.0 - RHO_EPS))
            .collect();
        Self { rho, seed: None }
    }

    /// Draw `len` uniforms from a fresh generator seeded with `seed`, and
    /// record the seed.
    pub fn draw_seeded(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = Self::draw(len, &mut rng);
        draw.seed = Some(seed);
        draw
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

/// Density of `z` under the truncated exponential for the given bit.
pub fn conditional_pdf(z: f64, bit: u8, p: &SmoothingParams) -> Result<f64, SmoothingError> {
    if !(0.0..=1.0).contains(&z) {
        return Err(SmoothingError::ZOutOfRange(z));
    }
    let beta = p.beta();
    let e = if bit == 1 { (beta * (z - 1.0)).exp() } else { (-beta * z).exp() };
    Ok(e / p.z_norm())
}

/// CDF of `z` under the truncated exponential for the given bit.
pub fn conditional_cdf(z: f64, bit: u8, p: &SmoothingParams) -> Result<f64, SmoothingError> {
    if !(0.0..=1.0).contains(&z) {
        return Err(SmoothingError::ZOutOfRange(z));
    }
    let beta = p.beta();
    let den = -(-beta).exp_m1();
    Ok(if bit == 1 {
        p.exp_neg_beta() * (beta * z).exp_m1() / den
    } else {
        -(-beta * z).exp_m1() / den
    })
}

/// Inverse CDF of the truncated exponential for a hard bit.
pub fn conditional_inverse_cdf(
    bit: u8,
    rho: f64,
    p: &SmoothingParams,
) -> Result<f64, SmoothingError> {
    if !rho.is_finite() || rho <= 0.0 || rho >= 1.0 {
        return Err(SmoothingError::RhoOutOfRange(rho));
    }
    let beta = p.beta();
    let one_minus_e = -(-beta).exp_m1();
    let z = if bit == 1 {
        ((rho - 1.0) * one_minus_e).ln_1p() / beta + 1.0
    } else {
        -(-rho * one_minus_e).ln_1p() / beta
    };
    Ok(z.clamp(0.0, 1.0))
}

/// Inverse CDF of the two-component mixture with weight `q` on bit 1,
/// evaluated via the closed-form quadratic root. The root difference is
/// computed in the cancellation-free form when `b > 0`.
pub fn mixture_inverse_cdf(q: f64, rho: f64, p: &SmoothingParams) -> Result<f64, SmoothingError> {
    if !rho.is_finite() || rho <= 0.0 || rho >= 1.0 {
        return Err(SmoothingError::RhoOutOfRange(rho));
    }
    if !q.is_finite() {
        return Err(SmoothingError::NonFinite);
    }
    let q = q.clamp(crate::coding::PROB_EPS, 1.0 - crate::coding::PROB_EPS);
    let e = p.exp_neg_beta();
    let b = (rho + e * (q - rho)) / (1.0 - q) - 1.0;
    let c = -(q * e) / (1.0 - q);
    let disc = b * b - 4.0 * c;
    debug_assert!(disc >= 0.0, "negative discriminant {disc} for q={q} rho={rho}");
    let s = disc.sqrt();
    // (-b + s) / 2, avoiding cancellation between b and s when b > 0
    let t = if b > 0.0 { -2.0 * c / (b + s) } else { (s - b) / 2.0 };
    let z = -t.ln() / p.beta();
    if !z.is_finite() {
        return Err(SmoothingError::NonFinite);
    }
    Ok(z.clamp(0.0, 1.0))
}

/// Forward CDF of the mixture; monotone in `z` with `F(0) = 0`, `F(1) = 1`.
pub fn mixture_cdf(q: f64, z: f64, p: &SmoothingParams) -> Result<f64, SmoothingError> {
    if !(0.0..=1.0).contains(&z) {
        return Err(SmoothingError::ZOutOfRange(z));
    }
    let f0 = conditional_cdf(z, 0, p)?;
    let f1 = conditional_cdf(z, 1, p)?;
    Ok((1.0 - q) * f0 + q * f1)
}

/// Mixture density `(1-q) p(z|0) + q p(z|1)`.
pub fn mixture_pdf(q: f64, z: f64, p: &SmoothingParams) -> Result<f64, SmoothingError> {
    Ok((1.0 - q) * conditional_pdf(z, 0, p)? + q * conditional_pdf(z, 1, p)?)
}

/// Log of [`mixture_pdf`], computed stably for confident `q`.
pub fn log_mixture_pdf(q: f64, z: f64, p: &SmoothingParams) -> Result<f64, SmoothingError> {
    mixture_pdf(q, z, p).map(f64::ln)
}

/// Derivative of the mixture inverse CDF with respect to `q` at the point
/// `z = F^{-1}(rho; q)`, by the implicit function theorem:
/// `dz/dq = (F(z|0) - F(z|1)) / pdf_mix(z)`.
pub fn mixture_icdf_dq(q: f64, z: f64, p: &SmoothingParams) -> Result<f64, SmoothingError> {
    let f0 = conditional_cdf(z, 0, p)?;
    let f1 = conditional_cdf(z, 1, p)?;
    Ok((f0 - f1) / mixture_pdf(q, z, p)?)
}

/// Elementwise mixture inverse CDF over a soft word: `z_j = F^{-1}(rho_j; q_j)`.
pub fn sample_smoothed(
    q_c: &SoftWord,
    noise: &NoiseDraw,
    p: &SmoothingParams,
) -> Result<Vec<f64>, SmoothingError> {
    if noise.len() != q_c.len() {
        return Err(SmoothingError::LengthMismatch { expected: q_c.len(), got: noise.len() });
    }
    (0..q_c.len())
        .map(|j| mixture_inverse_cdf(q_c.prob(j), noise.rho()[j], p))
        .collect()
}

/// Sample `z` for a hard word through the conditional inverse CDFs.
pub fn sample_conditional(
    bits: &crate::coding::BitWord,
    noise: &NoiseDraw,
    p: &SmoothingParams,
) -> Result<Vec<f64>, SmoothingError> {
    if noise.len() != bits.len() {
        return Err(SmoothingError::LengthMismatch { expected: bits.len(), got: noise.len() });
    }
    (0..bits.len())
        .map(|j| conditional_inverse_cdf(bits.bit(j), noise.rho()[j], p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::simpson;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn pdf_peak_value_at_default_beta() {
        let p = SmoothingParams::default();
        approx(conditional_pdf(1.0, 1, &p).unwrap(), 15.0000045885, 1e-6);
    }

    #[test]
    fn pdf_mirror_symmetry() {
        let p = SmoothingParams::new(7.5).unwrap();
        for i in 0..=20 {
            let z = i as f64 / 20.0;
            approx(
                conditional_pdf(z, 1, &p).unwrap(),
                conditional_pdf(1.0 - z, 0, &p).unwrap(),
                1e-12,
            );
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        for beta in [1.0, 5.0, 15.0, 30.0] {
            let p = SmoothingParams::new(beta).unwrap();
            for bit in [0u8, 1u8] {
                let total = simpson(|z| conditional_pdf(z, bit, &p).unwrap(), 0.0, 1.0, 1 << 15);
                approx(total, 1.0, 1e-10);
            }
        }
    }

    #[test]
    fn pdf_rejects_out_of_range() {
        let p = SmoothingParams::default();
        assert!(conditional_pdf(-0.1, 0, &p).is_err());
        assert!(conditional_pdf(1.1, 1, &p).is_err());
    }

    #[test]
    fn conditional_icdf_boundary_and_midpoint() {
        let p = SmoothingParams::default();
        let near_zero = conditional_inverse_cdf(0, 1e-9, &p).unwrap();
        assert!(near_zero < 1e-9);
        approx(conditional_inverse_cdf(0, 0.5, &p).unwrap(), 0.046209791644, 1e-9);
        assert!(conditional_inverse_cdf(0, 0.0, &p).is_err());
        assert!(conditional_inverse_cdf(1, 1.0, &p).is_err());
    }

    #[test]
    fn conditional_icdf_mirror_symmetry() {
        let p = SmoothingParams::new(11.0).unwrap();
        for i in 1..50 {
            let rho = i as f64 / 50.0;
            approx(
                conditional_inverse_cdf(1, rho, &p).unwrap(),
                1.0 - conditional_inverse_cdf(0, 1.0 - rho, &p).unwrap(),
                1e-12,
            );
        }
    }

    #[test]
    fn conditional_icdf_inverts_cdf() {
        let p = SmoothingParams::default();
        for bit in [0u8, 1u8] {
            for i in 1..40 {
                let rho = i as f64 / 40.0;
                let z = conditional_inverse_cdf(bit, rho, &p).unwrap();
                approx(conditional_cdf(z, bit, &p).unwrap(), rho, 1e-12);
            }
        }
    }

    #[test]
    fn mixture_icdf_reduces_to_conditional_at_clamped_q() {
        let p = SmoothingParams::default();
        for i in 1..20 {
            let rho = i as f64 / 20.0;
            let mixed = mixture_inverse_cdf(crate::coding::PROB_EPS, rho, &p).unwrap();
            let cond = conditional_inverse_cdf(0, rho, &p).unwrap();
            approx(mixed, cond, 1e-5);
            let mixed1 = mixture_inverse_cdf(1.0 - crate::coding::PROB_EPS, rho, &p).unwrap();
            let cond1 = conditional_inverse_cdf(1, rho, &p).unwrap();
            approx(mixed1, cond1, 1e-5);
        }
    }

    #[test]
    fn mixture_icdf_symmetric_median() {
        let p = SmoothingParams::default();
        approx(mixture_inverse_cdf(0.5, 0.5, &p).unwrap(), 0.5, 1e-12);
    }

    #[test]
    fn mixture_cdf_round_trip() {
        for beta in [1.0, 5.0, 15.0, 30.0] {
            let p = SmoothingParams::new(beta).unwrap();
            for qi in 1..=9 {
                let q = qi as f64 / 10.0;
                for ri in 1..=99 {
                    let rho = ri as f64 / 100.0;
                    let z = mixture_inverse_cdf(q, rho, &p).unwrap();
                    approx(mixture_cdf(q, z, &p).unwrap(), rho, 1e-9);
                }
            }
        }
    }

    #[test]
    fn mixture_cdf_endpoints_and_symmetry() {
        let p = SmoothingParams::default();
        approx(mixture_cdf(0.3, 0.0, &p).unwrap(), 0.0, 1e-15);
        approx(mixture_cdf(0.3, 1.0, &p).unwrap(), 1.0, 1e-12);
        approx(mixture_cdf(0.5, 0.5, &p).unwrap(), 0.5, 1e-12);
        assert!(mixture_cdf(0.5, 1.5, &p).is_err());
    }

    #[test]
    fn mixture_cdf_matches_quadrature_of_density() {
        let p = SmoothingParams::new(9.0).unwrap();
        let q = 0.35;
        for zi in [0.1, 0.37, 0.62, 0.9] {
            let direct = mixture_cdf(q, zi, &p).unwrap();
            let quad = simpson(|z| mixture_pdf(q, z, &p).unwrap(), 0.0, zi, 1 << 14);
            approx(direct, quad, 1e-8);
        }
    }

    #[test]
    fn mixture_pdf_is_marginalization_of_conditionals() {
        let p = SmoothingParams::default();
        for qi in [0.05, 0.4, 0.95] {
            for zi in [0.0, 0.2, 0.7, 1.0] {
                let direct = mixture_pdf(qi, zi, &p).unwrap();
                let manual = (1.0 - qi) * conditional_pdf(zi, 0, &p).unwrap()
                    + qi * conditional_pdf(zi, 1, &p).unwrap();
                approx(direct, manual, 1e-14);
            }
        }
    }

    #[test]
    fn sample_smoothed_reduces_and_is_deterministic() {
        let p = SmoothingParams::default();
        let q = SoftWord::from_probs(&[0.0, 0.0, 0.0]);
        let noise = NoiseDraw::draw_seeded(3, 99);
        let z = sample_smoothed(&q, &noise, &p).unwrap();
        for (j, zj) in z.iter().enumerate() {
            let cond = conditional_inverse_cdf(0, noise.rho()[j], &p).unwrap();
            approx(*zj, cond, 1e-5);
        }
        let again = sample_smoothed(&q, &NoiseDraw::draw_seeded(3, 99), &p).unwrap();
        assert_eq!(z, again);
        assert_eq!(noise.seed(), Some(99));
    }

    #[test]
    fn sampled_z_lies_strictly_inside_unit_interval() {
        let p = SmoothingParams::new(30.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let q: f64 = rng.gen();
            let rho: f64 = rng.gen::<f64>().clamp(RHO_EPS, 1.0 - RHO_EPS);
            let z = mixture_inverse_cdf(q, rho, &p).unwrap();
            assert!(z > 0.0 && z < 1.0, "z = {z} at q = {q}, rho = {rho}");
        }
    }

    #[test]
    fn noise_draw_validates_input() {
        assert!(NoiseDraw::from_uniforms(vec![0.5, f64::NAN]).is_err());
        assert!(NoiseDraw::from_uniforms(vec![1.5]).is_err());
        let clipped = NoiseDraw::from_uniforms(vec![0.0, 1.0]).unwrap();
        assert!(clipped.rho()[0] > 0.0 && clipped.rho()[1] < 1.0);
    }

    #[test]
    fn smoothing_params_validation() {
        assert!(SmoothingParams::new(0.0).is_err());
        assert!(SmoothingParams::new(-3.0).is_err());
        let p = SmoothingParams::new(15.0).unwrap();
        approx(p.z_norm(), (1.0 - (-15.0f64).exp()) / 15.0, 1e-15);
    }
}
