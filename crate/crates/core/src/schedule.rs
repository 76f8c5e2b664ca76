//! DDIM noise schedules and the deterministic inversion/denoising updates.
//!
//! The schedule stores cumulative signal coefficients `alpha_bar[0..=T]` in
//! f64 (`alpha_bar[0] = 1`), and the per-step updates evaluate their algebra
//! in f64 before storing back to f32, so a denoise of an invert recovers the
//! input to well under 1e-5 per step.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};

/// How the per-step beta ramp is spaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    Linear,
    /// Linear in sqrt(beta), the common latent-diffusion convention.
    ScaledLinear,
}

impl std::str::FromStr for BetaSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(BetaSchedule::Linear),
            "scaled_linear" | "scaled-linear" => Ok(BetaSchedule::ScaledLinear),
            other => Err(Error::InvalidArgument(format!("unknown beta schedule `{other}`"))),
        }
    }
}

/// Default schedule parameters: T=300 with a scaled-linear beta ramp.
pub const DEFAULT_TOTAL_STEPS: usize = 300;
pub const DEFAULT_BETA_START: f64 = 0.0015;
pub const DEFAULT_BETA_END: f64 = 0.0205;
pub const DEFAULT_BETA_SCHEDULE: BetaSchedule = BetaSchedule::ScaledLinear;

/// Monotone cumulative signal-retention coefficients driving DDIM updates.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    total_steps: usize,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds `alpha_bar[t] = prod_{i<=t} (1 - beta_i)` for the given ramp.
    pub fn new(
        total_steps: usize,
        beta_start: f64,
        beta_end: f64,
        style: BetaSchedule,
    ) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::InvalidArgument("total_steps must be >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(total_steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0f64;
        for i in 0..total_steps {
            let frac = if total_steps == 1 { 0.0 } else { i as f64 / (total_steps - 1) as f64 };
            let beta = match style {
                BetaSchedule::Linear => beta_start + (beta_end - beta_start) * frac,
                BetaSchedule::ScaledLinear => {
                    let s = beta_start.sqrt() + (beta_end.sqrt() - beta_start.sqrt()) * frac;
                    s * s
                }
            };
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Ok(NoiseSchedule { total_steps, alpha_bar })
    }

    /// The published configuration: T=300, scaled-linear betas in
    /// [0.0015, 0.0205].
    pub fn default_config() -> Self {
        NoiseSchedule::new(
            DEFAULT_TOTAL_STEPS,
            DEFAULT_BETA_START,
            DEFAULT_BETA_END,
            DEFAULT_BETA_SCHEDULE,
        )
        .expect("default schedule parameters are valid")
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// `alpha_bar[t]` for t in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} out of range for schedule with T={}",
                self.total_steps
            )));
        }
        Ok(())
    }
}

/// One DDIM inversion step: maps `z_t` to `z_{t+1}` given the predicted
/// noise, via
/// `z_{t+1} = sqrt(abar_{t+1}) * (z_t - sqrt(1-abar_t)*eps) / sqrt(abar_t)
///            + sqrt(1-abar_{t+1}) * eps`.
pub fn ddim_invert_step(z_t: &Tensor, eps: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    if z_t.shape() != eps.shape() {
        return Err(Error::ShapeMismatch(format!(
            "latent {:?} vs noise {:?}",
            z_t.shape(),
            eps.shape()
        )));
    }
    let a_t = sched.alpha_bar(t);
    let a_next = sched.alpha_bar(t + 1);
    let (sa_t, sb_t) = (a_t.sqrt(), (1.0 - a_t).sqrt());
    let (sa_n, sb_n) = (a_next.sqrt(), (1.0 - a_next).sqrt());
    let data: Vec<f32> = z_t
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&z, &e)| {
            let (z, e) = (z as f64, e as f64);
            (sa_n * ((z - sb_t * e) / sa_t) + sb_n * e) as f32
        })
        .collect();
    Tensor::new(z_t.shape().to_vec(), data)
}

/// Exact algebraic inverse of [`ddim_invert_step`]: recovers `z_t` from
/// `z_{t+1}` and the same predicted noise.
pub fn ddim_denoise_step(
    z_next: &Tensor,
    eps: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_step(t)?;
    if z_next.shape() != eps.shape() {
        return Err(Error::ShapeMismatch(format!(
            "latent {:?} vs noise {:?}",
            z_next.shape(),
            eps.shape()
        )));
    }
    let a_t = sched.alpha_bar(t);
    let a_next = sched.alpha_bar(t + 1);
    let (sa_t, sb_t) = (a_t.sqrt(), (1.0 - a_t).sqrt());
    let (sa_n, sb_n) = (a_next.sqrt(), (1.0 - a_next).sqrt());
    let data: Vec<f32> = z_next
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&z, &e)| {
            let (z, e) = (z as f64, e as f64);
            (sa_t * ((z - sb_n * e) / sa_n) + sb_t * e) as f32
        })
        .collect();
    Tensor::new(z_next.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn single_step_linear_schedule() {
        let s = NoiseSchedule::new(1, 0.5, 0.5, BetaSchedule::Linear).unwrap();
        assert_eq!(s.alpha_bars(), &[1.0, 0.5]);
    }

    #[test]
    fn schedule_strictly_decreasing_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let t = rng.gen_range(1..400);
            let b0 = rng.gen_range(1e-4..0.02);
            let b1 = rng.gen_range(b0..0.2);
            let style = if rng.gen_bool(0.5) { BetaSchedule::Linear } else { BetaSchedule::ScaledLinear };
            let s = NoiseSchedule::new(t, b0, b1, style).unwrap();
            assert_eq!(s.alpha_bars().len(), t + 1);
            assert_eq!(s.alpha_bar(0), 1.0);
            for w in s.alpha_bars().windows(2) {
                assert!(w[1] < w[0] && w[1] > 0.0);
            }
        }
    }

    #[test]
    fn schedule_rejects_invalid_ranges() {
        assert!(NoiseSchedule::new(0, 0.1, 0.2, BetaSchedule::Linear).is_err());
        assert!(NoiseSchedule::new(10, 0.0, 0.2, BetaSchedule::Linear).is_err());
        assert!(NoiseSchedule::new(10, 0.3, 0.2, BetaSchedule::Linear).is_err());
        assert!(NoiseSchedule::new(10, 0.3, 1.0, BetaSchedule::Linear).is_err());
    }

    // Independent oracle: recompute the default ramp and cumulative product
    // in one straight-line pass.
    #[test]
    fn default_schedule_matches_cumulative_product_oracle() {
        let s = NoiseSchedule::default_config();
        let t = DEFAULT_TOTAL_STEPS;
        let (s0, s1) = (DEFAULT_BETA_START.sqrt(), DEFAULT_BETA_END.sqrt());
        let mut acc = 1.0f64;
        for i in 0..t {
            let root = s0 + (s1 - s0) * i as f64 / (t - 1) as f64;
            acc *= 1.0 - root * root;
        }
        assert!((s.alpha_bar(t) - acc).abs() < 1e-7, "got {} want {}", s.alpha_bar(t), acc);
        // Sanity on magnitude: most but not all signal is gone by t=T.
        assert!(s.alpha_bar(t) > 0.01 && s.alpha_bar(t) < 0.2);
    }

    #[test]
    fn invert_with_zero_noise_is_pure_rescale() {
        let s = NoiseSchedule::default_config();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = random_tensor(&mut rng, vec![4, 4]);
        let eps = Tensor::zeros(vec![4, 4]).unwrap();
        let t = 42;
        let out = ddim_invert_step(&z, &eps, t, &s).unwrap();
        let scale = (s.alpha_bar(t + 1) / s.alpha_bar(t)).sqrt();
        for (o, z) in out.data().iter().zip(z.data()) {
            assert!((o - (scale * *z as f64) as f32).abs() < 1e-6);
        }
    }

    #[test]
    fn near_equal_alpha_bars_give_near_identity() {
        // With a vanishing beta the update approaches the identity for any eps.
        let s = NoiseSchedule::new(4, 1e-9, 1e-9, BetaSchedule::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z = random_tensor(&mut rng, vec![3, 5]);
        let eps = random_tensor(&mut rng, vec![3, 5]);
        let out = ddim_invert_step(&z, &eps, 1, &s).unwrap();
        assert!(out.max_abs_diff(&z).unwrap() < 1e-4);
        let back = ddim_denoise_step(&z, &eps, 1, &s).unwrap();
        assert!(back.max_abs_diff(&z).unwrap() < 1e-4);
    }

    #[test]
    fn per_step_round_trip_within_1e5() {
        let s = NoiseSchedule::default_config();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..200 {
            let t = rng.gen_range(0..s.total_steps());
            let z = random_tensor(&mut rng, vec![6, 6]);
            let eps = random_tensor(&mut rng, vec![6, 6]);
            let fwd = ddim_invert_step(&z, &eps, t, &s).unwrap();
            let back = ddim_denoise_step(&fwd, &eps, t, &s).unwrap();
            assert!(back.max_abs_diff(&z).unwrap() < 1e-5);
        }
    }

    #[test]
    fn full_round_trip_drift_stays_small() {
        let s = NoiseSchedule::default_config();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let z0 = random_tensor(&mut rng, vec![4, 16, 16]);
        let eps: Vec<Tensor> =
            (0..s.total_steps()).map(|_| random_tensor(&mut rng, vec![4, 16, 16])).collect();
        let mut z = z0.clone();
        for t in 0..s.total_steps() {
            z = ddim_invert_step(&z, &eps[t], t, &s).unwrap();
        }
        for t in (0..s.total_steps()).rev() {
            z = ddim_denoise_step(&z, &eps[t], t, &s).unwrap();
        }
        let drift = z.max_abs_diff(&z0).unwrap();
        // Measured 1.9e-6 for this seed; the contract bound is 1e-3.
        assert!(drift < 1e-3, "round-trip drift {drift}");
        assert!(drift < 1e-5, "drift regressed: {drift}");
    }

    #[test]
    fn inversion_deterministic_and_linear_in_z_for_zero_eps() {
        let s = NoiseSchedule::default_config();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let z = random_tensor(&mut rng, vec![5, 5]);
        let zp = random_tensor(&mut rng, vec![5, 5]);
        let eps = Tensor::zeros(vec![5, 5]).unwrap();
        let t = 120;

        let a = ddim_invert_step(&z, &eps, t, &s).unwrap();
        let b = ddim_invert_step(&z, &eps, t, &s).unwrap();
        assert_eq!(a.data(), b.data());

        // Homogeneous case: invert(2z + 3z') = 2 invert(z) + 3 invert(z').
        let comb = Tensor::new(
            vec![5, 5],
            z.data().iter().zip(zp.data()).map(|(a, b)| 2.0 * a + 3.0 * b).collect(),
        )
        .unwrap();
        let lhs = ddim_invert_step(&comb, &eps, t, &s).unwrap();
        let ra = ddim_invert_step(&z, &eps, t, &s).unwrap();
        let rb = ddim_invert_step(&zp, &eps, t, &s).unwrap();
        for ((l, a), b) in lhs.data().iter().zip(ra.data()).zip(rb.data()) {
            assert!((l - (2.0 * a + 3.0 * b)).abs() < 1e-5);
        }
    }

    #[test]
    fn out_of_range_timestep_errors() {
        let s = NoiseSchedule::new(10, 0.01, 0.02, BetaSchedule::Linear).unwrap();
        let z = Tensor::zeros(vec![2, 2]).unwrap();
        assert!(ddim_invert_step(&z, &z, 10, &s).is_err());
        assert!(ddim_denoise_step(&z, &z, 10, &s).is_err());
    }
}
