//! Closed-form forward-retrieval efficiency, linewidth conversions and the
//! Gaussian decay fit.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CribError, Result};

fn non_negative(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(CribError::invalid(format!(
            "{name} must be >= 0, got {value}"
        )))
    }
}

/// Forward echo efficiency `d^2 exp(-d) exp(-t^2 gamma_tilde^2)`.
pub fn eta_crib(d: f64, gamma_tilde: f64, t: f64) -> Result<f64> {
    non_negative("optical depth", d)?;
    non_negative("gamma_tilde", gamma_tilde)?;
    non_negative("storage time", t)?;
    let x = t * gamma_tilde;
    Ok(d * d * (-d).exp() * (-x * x).exp())
}

/// [`eta_crib`] attenuated by the passive background, `exp(-d0)`.
pub fn eta_total(d: f64, d0: f64, gamma_tilde: f64, t: f64) -> Result<f64> {
    non_negative("background depth", d0)?;
    Ok(eta_crib(d, gamma_tilde, t)? * (-d0).exp())
}

/// Angular spectral width `2 pi sigma` (rad/s) of a peak with std `sigma` (Hz).
pub fn gamma_tilde_from_sigma(sigma: f64) -> Result<f64> {
    non_negative("sigma", sigma)?;
    Ok(2.0 * PI * sigma)
}

/// 1/e time of the storage decay, `1 / (2 pi sigma)`.
pub fn decay_time_from_sigma(sigma: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(CribError::invalid(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    Ok(1.0 / (2.0 * PI * sigma))
}

/// Homogeneous linewidth (FWHM, Hz) for coherence time `t2`.
pub fn homogeneous_linewidth(t2: f64) -> Result<f64> {
    if !(t2.is_finite() && t2 > 0.0) {
        return Err(CribError::invalid(format!("T2 must be > 0, got {t2}")));
    }
    Ok(1.0 / (PI * t2))
}

/// Depth maximizing `d^2 exp(-d)` and the efficiency reached there.
pub fn optimal_forward_depth() -> (f64, f64) {
    (2.0, 4.0 * (-2.0f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Efficiency extrapolated to zero storage time.
    pub amplitude: f64,
    /// 1/e time of `A exp(-(t/tau)^2)`; `None` when the data show no decay.
    pub decay_time: Option<f64>,
    /// Euclidean norm of the log-space residuals.
    pub residual_norm: f64,
    pub points_used: usize,
}

impl DecayFit {
    pub fn is_degenerate(&self) -> bool {
        self.decay_time.is_none()
    }

    pub fn value_at(&self, t: f64) -> f64 {
        match self.decay_time {
            Some(tau) => self.amplitude * (-(t / tau).powi(2)).exp(),
            None => self.amplitude,
        }
    }
}

/// Fits `eta(t) = A exp(-(t/tau)^2)` by least squares on `ln eta` against `t^2`.
///
/// Points with non-positive efficiency are skipped.
pub fn fit_gaussian_decay(points: &[(f64, f64)]) -> Result<DecayFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(t, eta)| t.is_finite() && t >= 0.0 && eta.is_finite() && eta > 0.0)
        .collect();
    if usable.len() < 3 {
        return Err(CribError::FitFailure(format!(
            "need at least 3 points with positive efficiency, got {}",
            usable.len()
        )));
    }
    let t_max = usable.iter().map(|p| p.0).fold(0.0, f64::max);
    let scale = if t_max > 0.0 { t_max } else { 1.0 };

    // x = (t/scale)^2 keeps the normal equations well conditioned.
    let n = usable.len() as f64;
    let xs: Vec<f64> = usable.iter().map(|&(t, _)| (t / scale).powi(2)).collect();
    let ys: Vec<f64> = usable.iter().map(|&(_, eta)| eta.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    if !(sxx > 0.0) {
        return Err(CribError::FitFailure("all storage times are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let residual_norm = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        .sqrt();

    let decay_time = if slope < -1e-12 {
        Some(scale / (-slope).sqrt())
    } else {
        None
    };
    Ok(DecayFit {
        amplitude: intercept.exp(),
        decay_time,
        residual_norm,
        points_used: usable.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const TAU: f64 = 370e-9;

    #[test]
    fn eta_crib_values() {
        let peak = eta_crib(2.0, 123.0, 0.0).unwrap();
        assert_relative_eq!(peak, 4.0 * (-2.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(peak, 0.5413, epsilon = 1e-4);

        let g = 1.0 / TAU;
        let at0 = eta_crib(0.17, g, 0.0).unwrap();
        assert_relative_eq!(at0, 0.17 * 0.17 * (-0.17f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(at0, 0.02438, epsilon = 1e-5);
        let at_tau = eta_crib(0.17, g, TAU).unwrap();
        assert_relative_eq!(at_tau, at0 * (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(at_tau, 8.97e-3, epsilon = 1e-5);
    }

    #[test]
    fn eta_total_values() {
        let g = 1.0 / TAU;
        assert_relative_eq!(
            eta_total(0.17, 1.6, g, 0.0).unwrap(),
            4.92e-3,
            epsilon = 1e-5
        );
        assert_eq!(
            eta_total(0.3, 0.0, g, 1e-7).unwrap(),
            eta_crib(0.3, g, 1e-7).unwrap()
        );
        assert_relative_eq!(
            eta_total(2.0, 1.6, 7.0, 0.0).unwrap(),
            0.1093,
            epsilon = 1e-4
        );
    }

    #[test]
    fn negative_inputs_rejected() {
        assert!(eta_crib(-0.1, 1.0, 0.0).is_err());
        assert!(eta_crib(0.1, -1.0, 0.0).is_err());
        assert!(eta_crib(0.1, 1.0, -1.0).is_err());
        assert!(eta_total(0.1, -1.0, 1.0, 0.0).is_err());
        assert!(gamma_tilde_from_sigma(-1.0).is_err());
        assert!(decay_time_from_sigma(0.0).is_err());
        assert!(homogeneous_linewidth(0.0).is_err());
    }

    #[test]
    fn width_conversions() {
        let sigma = 424.66e3;
        assert_relative_eq!(
            gamma_tilde_from_sigma(sigma).unwrap(),
            2.668e6,
            max_relative = 1e-4
        );
        assert_eq!(gamma_tilde_from_sigma(0.0).unwrap(), 0.0);
        assert_relative_eq!(
            gamma_tilde_from_sigma(1.0 / (2.0 * PI)).unwrap(),
            1.0,
            max_relative = 1e-15
        );

        assert_relative_eq!(
            decay_time_from_sigma(sigma).unwrap(),
            374.8e-9,
            max_relative = 1e-4
        );
        assert_relative_eq!(
            decay_time_from_sigma(1e6 / (2.0 * PI)).unwrap(),
            1e-6,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            decay_time_from_sigma(160e3).unwrap(),
            994.7e-9,
            max_relative = 1e-4
        );

        assert_relative_eq!(
            homogeneous_linewidth(2e-6).unwrap(),
            159.15e3,
            max_relative = 1e-4
        );
        assert_relative_eq!(
            homogeneous_linewidth(1.0 / PI).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            homogeneous_linewidth(2.0 * 11e-3).unwrap(),
            14.47,
            max_relative = 1e-3
        );
    }

    #[test]
    fn optimum_is_local_maximum() {
        let (d, eta) = optimal_forward_depth();
        assert_eq!(d, 2.0);
        assert_relative_eq!(eta, 0.5413, epsilon = 1e-4);
        let at = |d: f64| eta_crib(d, 1.0, 0.0).unwrap();
        assert!(at(1.9) < at(2.0));
        assert!(at(2.1) < at(2.0));
        assert_relative_eq!(at(4.0), 16.0 * (-4.0f64).exp(), max_relative = 1e-15);
        assert!(at(4.0) < eta);
    }

    #[test]
    fn fit_recovers_exact_model() {
        let points: Vec<(f64, f64)> = (1..=8)
            .map(|k| {
                let t = 100e-9 + (k - 1) as f64 * 600e-9 / 7.0;
                (t, 5e-3 * (-(t / TAU).powi(2)).exp())
            })
            .collect();
        let fit = fit_gaussian_decay(&points).unwrap();
        assert_relative_eq!(fit.amplitude, 5e-3, max_relative = 1e-6);
        assert_relative_eq!(fit.decay_time.unwrap(), TAU, max_relative = 1e-6);
        assert!(fit.residual_norm < 1e-9);
        assert_eq!(fit.points_used, 8);
    }

    #[test]
    fn constant_data_is_degenerate() {
        let points: Vec<(f64, f64)> = (0..5).map(|k| (k as f64 * 1e-7, 2e-3)).collect();
        let fit = fit_gaussian_decay(&points).unwrap();
        assert!(fit.is_degenerate());
        assert_relative_eq!(fit.amplitude, 2e-3, max_relative = 1e-12);
        assert_relative_eq!(fit.value_at(1.0), 2e-3, max_relative = 1e-12);
    }

    #[test]
    fn fit_needs_three_positive_points() {
        assert!(matches!(
            fit_gaussian_decay(&[(1e-7, 1e-3), (2e-7, 0.0), (3e-7, -1e-3), (4e-7, 5e-4)]),
            Err(CribError::FitFailure(_))
        ));
        assert!(fit_gaussian_decay(&[(1e-7, 0.0), (2e-7, 0.0), (3e-7, 0.0)]).is_err());
        // non-positive points are dropped, not fatal
        let fit =
            fit_gaussian_decay(&[(0.0, -1.0), (1e-7, 1e-3), (2e-7, 8e-4), (3e-7, 5e-4)]).unwrap();
        assert_eq!(fit.points_used, 3);
    }

    proptest! {
        #[test]
        fn eta_crib_bounded_by_optimum(d in 0.0f64..20.0, g in 0.0f64..1e7, t in 0.0f64..1e-5) {
            let eta = eta_crib(d, g, t).unwrap();
            prop_assert!(eta <= optimal_forward_depth().1 * (1.0 + 1e-15));
        }

        #[test]
        fn total_is_background_scaled(d in 0.0f64..5.0, d0 in 0.0f64..5.0, g in 0.0f64..1e7, t in 0.0f64..1e-6) {
            let crib = eta_crib(d, g, t).unwrap();
            let total = eta_total(d, d0, g, t).unwrap();
            prop_assert!(total <= crib);
            if crib > 0.0 {
                prop_assert!((total / crib - (-d0).exp()).abs() <= 1e-14);
            }
        }

        #[test]
        fn decay_time_and_width_are_reciprocal(sigma in 1.0f64..1e9) {
            let product = decay_time_from_sigma(sigma).unwrap() * gamma_tilde_from_sigma(sigma).unwrap();
            prop_assert!((product - 1.0).abs() <= 2.0 * f64::EPSILON);
        }

        #[test]
        fn fit_round_trip(amp in 1e-5f64..1.0, tau in 50e-9f64..5e-6, t_last in 3e-7f64..3e-6) {
            let points: Vec<(f64, f64)> = (0..7)
                .map(|k| {
                    let t = t_last * (k + 1) as f64 / 7.0;
                    (t, amp * (-(t / tau).powi(2)).exp())
                })
                .filter(|p| p.1 > 1e-300)
                .collect();
            prop_assume!(points.len() >= 3);
            let fit = fit_gaussian_decay(&points).unwrap();
            prop_assert!((fit.amplitude / amp - 1.0).abs() < 1e-9);
            prop_assert!((fit.decay_time.unwrap() / tau - 1.0).abs() < 1e-9);
        }
    }
}
