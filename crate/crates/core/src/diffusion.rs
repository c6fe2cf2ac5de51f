//! Forward diffusion: linear noise schedule, closed-form perturbation
//! kernel and drift/diffusion coefficients.
//!
//! The forward process is `dx = -1/2 beta(t) x dt + g(t) dw` with
//! `g(t)^2 = beta(t) (1 - exp(-2 B(t)))` and `B(t)` the running integral of
//! `beta`. Its transition kernel is Gaussian with mean coefficient
//! `alpha(t) = exp(-B(t)/2)` and standard deviation `sigma(t) = 1 - exp(-B(t))`,
//! so a clean vector `x0` perturbs to `alpha(t) x0 + sigma(t) z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BETA0: f64 = 0.1;
pub const DEFAULT_BETA1: f64 = 20.0;
pub const DEFAULT_T_MAX: f64 = 1.0;

/// Linear noise schedule `beta(t) = beta0 + t (beta1 - beta0)` on `[0, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta0: f64,
    pub beta1: f64,
    pub t_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            beta0: DEFAULT_BETA0,
            beta1: DEFAULT_BETA1,
            t_max: DEFAULT_T_MAX,
        }
    }
}

/// Kernel coefficients at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbCoeffs {
    /// Mean coefficient `exp(-B(t)/2)`.
    pub alpha: f64,
    /// Kernel standard deviation `1 - exp(-B(t))`.
    pub sigma: f64,
    /// Squared diffusion coefficient `beta(t) (1 - exp(-2 B(t)))`.
    pub g2: f64,
}

impl NoiseSchedule {
    pub fn new(beta0: f64, beta1: f64, t_max: f64) -> Result<Self> {
        if !(beta0 > 0.0 && beta1 >= beta0) {
            return Err(Error::validation(format!(
                "noise schedule requires 0 < beta0 <= beta1, got beta0={beta0}, beta1={beta1}"
            )));
        }
        if !(t_max > 0.0) {
            return Err(Error::validation(format!(
                "noise schedule requires t_max > 0, got {t_max}"
            )));
        }
        Ok(NoiseSchedule {
            beta0,
            beta1,
            t_max,
        })
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !t.is_finite() || t < 0.0 || t > self.t_max {
            return Err(Error::TimeOutOfRange {
                t,
                t_max: self.t_max,
            });
        }
        Ok(())
    }

    /// Noise scale at time `t`.
    pub fn beta(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.beta0 + t * (self.beta1 - self.beta0))
    }

    /// Running integral `B(t) = beta0 t + (beta1 - beta0) t^2 / 2`.
    pub fn beta_integral(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.beta0 * t + 0.5 * (self.beta1 - self.beta0) * t * t)
    }

    /// Kernel coefficients `alpha(t)`, `sigma(t)`, `g(t)^2`.
    pub fn perturb_coeffs(&self, t: f64) -> Result<PerturbCoeffs> {
        let b = self.beta_integral(t)?;
        let beta_t = self.beta0 + t * (self.beta1 - self.beta0);
        Ok(PerturbCoeffs {
            alpha: (-0.5 * b).exp(),
            sigma: 1.0 - (-b).exp(),
            g2: beta_t * (1.0 - (-2.0 * b).exp()),
        })
    }
}

/// Forward drift `f(x, t) = -1/2 beta(t) x`.
pub fn drift(x: &[f64], t: f64, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let b = sched.beta(t)?;
    Ok(x.iter().map(|&v| -0.5 * b * v).collect())
}

/// Perturbs `x0` to time `t` using the supplied standard-normal draw `z`.
pub fn perturb(x0: &[f64], t: f64, z: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if x0.len() != z.len() {
        return Err(Error::shape("perturb noise vector", x0.len(), z.len()));
    }
    let c = sched.perturb_coeffs(t)?;
    Ok(x0
        .iter()
        .zip(z)
        .map(|(&x, &n)| c.alpha * x + c.sigma * n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_endpoints_and_midpoint() {
        let s = NoiseSchedule::default();
        assert_eq!(s.beta(0.0).unwrap(), 0.1);
        assert_eq!(s.beta(1.0).unwrap(), 20.0);
        assert!((s.beta(0.5).unwrap() - 10.05).abs() < 1e-12);
    }

    #[test]
    fn beta_rejects_out_of_range() {
        let s = NoiseSchedule::default();
        assert!(s.beta(-0.01).is_err());
        assert!(s.beta(1.01).is_err());
        assert!(s.beta(f64::NAN).is_err());
    }

    #[test]
    fn beta_integral_closed_form() {
        let s = NoiseSchedule::default();
        assert_eq!(s.beta_integral(0.0).unwrap(), 0.0);
        assert!((s.beta_integral(1.0).unwrap() - 10.05).abs() < 1e-12);
        // B(0.5) = 0.1*0.5 + 19.9/2 * 0.25 = 2.5375
        assert!((s.beta_integral(0.5).unwrap() - 2.5375).abs() < 1e-12);
    }

    #[test]
    fn coeffs_at_zero_and_one() {
        let s = NoiseSchedule::default();
        let c0 = s.perturb_coeffs(0.0).unwrap();
        assert_eq!(c0.alpha, 1.0);
        assert_eq!(c0.sigma, 0.0);
        assert_eq!(c0.g2, 0.0);

        let c1 = s.perturb_coeffs(1.0).unwrap();
        assert!((c1.alpha - (-5.025f64).exp()).abs() < 1e-15);
        assert!((c1.sigma - (1.0 - (-10.05f64).exp())).abs() < 1e-15);
        assert!(c1.alpha < 7e-3 && c1.alpha > 6e-3);
        assert!(c1.sigma > 0.9999);
    }

    #[test]
    fn coeffs_monotone_and_subvp_bound() {
        let s = NoiseSchedule::default();
        let mut prev = s.perturb_coeffs(0.0).unwrap();
        for i in 1..=1000 {
            let t = i as f64 / 1000.0;
            let c = s.perturb_coeffs(t).unwrap();
            assert!(c.alpha < prev.alpha, "alpha not strictly decreasing at t={t}");
            assert!(c.sigma > prev.sigma, "sigma not strictly increasing at t={t}");
            assert!(c.g2 >= 0.0);
            assert!(
                c.alpha * c.alpha + c.sigma * c.sigma <= 1.0 + 1e-15,
                "subVP bound violated at t={t}"
            );
            prev = c;
        }
    }

    #[test]
    fn drift_values_and_linearity() {
        let s = NoiseSchedule::default();
        assert_eq!(drift(&[0.0, 0.0], 0.3, &s).unwrap(), vec![0.0, 0.0]);
        // t = 0: -1/2 * 0.1 * 2 = -0.1
        let d = drift(&[2.0], 0.0, &s).unwrap();
        assert!((d[0] + 0.1).abs() < 1e-15);

        let x = vec![0.3, -1.2, 4.5];
        let a = 3.7;
        let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
        let d1 = drift(&x, 0.7, &s).unwrap();
        let d2 = drift(&ax, 0.7, &s).unwrap();
        for (u, v) in d1.iter().zip(&d2) {
            assert!((a * u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn perturb_identity_cases() {
        let s = NoiseSchedule::default();
        let x0 = vec![0.5, -0.25, 1.0];
        let z = vec![0.3, 0.9, -1.1];
        // t = 0 returns x0 exactly.
        assert_eq!(perturb(&x0, 0.0, &z, &s).unwrap(), x0);
        // z = 0 returns alpha * x0.
        let zeros = vec![0.0; 3];
        let c = s.perturb_coeffs(0.4).unwrap();
        let p = perturb(&x0, 0.4, &zeros, &s).unwrap();
        for (a, b) in p.iter().zip(&x0) {
            assert!((a - c.alpha * b).abs() < 1e-15);
        }
    }

    #[test]
    fn perturb_rejects_mismatched_noise() {
        let s = NoiseSchedule::default();
        assert!(perturb(&[1.0, 2.0], 0.5, &[0.0], &s).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(NoiseSchedule::new(0.0, 20.0, 1.0).is_err());
        assert!(NoiseSchedule::new(1.0, 0.5, 1.0).is_err());
        assert!(NoiseSchedule::new(0.1, 20.0, 0.0).is_err());
        assert!(NoiseSchedule::new(0.1, 20.0, 1.0).is_ok());
    }
}
