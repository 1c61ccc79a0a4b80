//! Prepared absorption line and the Stark field that broadens and reverses it.
//!
//! The prepared line is a Gaussian peak sitting on a flat absorbing
//! background. Broadening rescales the peak (width times `b`, height divided
//! by `b`) so the integrated absorption is unchanged. Frequencies are
//! ordinary frequencies in Hz throughout; angular quantities only appear
//! inside the solver.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{CribError, Result};

/// Ratio between the FWHM and the standard deviation of a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3; // 2 sqrt(2 ln 2)

/// Calibration giving a threefold broadening at 50 V.
pub const DEFAULT_VOLTS_TO_FACTOR: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    /// Optical depth at the peak center, background excluded.
    pub d_peak: f64,
    /// Peak standard deviation in Hz.
    pub sigma: f64,
    /// Detuning-independent background optical depth.
    pub d_background: f64,
    /// Peak center relative to the rotating frame, Hz.
    pub center_detuning: f64,
}

impl SpectralProfile {
    pub fn new(d_peak: f64, sigma: f64, d_background: f64, center_detuning: f64) -> Result<Self> {
        if !(d_peak.is_finite() && d_peak >= 0.0) {
            return Err(CribError::invalid(format!(
                "d_peak must be >= 0, got {d_peak}"
            )));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(CribError::invalid(format!(
                "sigma must be > 0, got {sigma}"
            )));
        }
        if !(d_background.is_finite() && d_background >= 0.0) {
            return Err(CribError::invalid(format!(
                "d_background must be >= 0, got {d_background}"
            )));
        }
        if !center_detuning.is_finite() {
            return Err(CribError::invalid("center_detuning must be finite"));
        }
        Ok(Self {
            d_peak,
            sigma,
            d_background,
            center_detuning,
        })
    }

    /// Peak described by its full width at half maximum, centered at zero detuning.
    pub fn gaussian_peak(d_peak: f64, fwhm: f64, d_background: f64) -> Result<Self> {
        if !(fwhm.is_finite() && fwhm > 0.0) {
            return Err(CribError::invalid(format!("fwhm must be > 0, got {fwhm}")));
        }
        Self::new(d_peak, fwhm / FWHM_PER_SIGMA, d_background, 0.0)
    }

    pub fn fwhm(&self) -> f64 {
        self.sigma * FWHM_PER_SIGMA
    }

    /// Integrated peak absorption, `d_peak * sigma * sqrt(2 pi)` (Hz).
    pub fn area(&self) -> f64 {
        self.d_peak * self.sigma * (2.0 * PI).sqrt()
    }

    /// Optical depth of the peak alone at `detuning`.
    pub fn peak_depth_at(&self, detuning: f64) -> f64 {
        let x = (detuning - self.center_detuning) / self.sigma;
        self.d_peak * (-0.5 * x * x).exp()
    }

    /// Total optical depth at `detuning`, background included.
    pub fn optical_depth_at(&self, detuning: f64) -> f64 {
        self.d_background + self.peak_depth_at(detuning)
    }

    /// Stark-broadened copy: width scaled up by `factor`, height scaled down.
    pub fn apply_broadening(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor >= 1.0) {
            return Err(CribError::invalid(format!(
                "broadening factor must be >= 1, got {factor}"
            )));
        }
        Ok(Self {
            d_peak: self.d_peak / factor,
            sigma: self.sigma * factor,
            ..*self
        })
    }

    /// Same peak without the absorbing background.
    pub fn without_background(&self) -> Self {
        Self {
            d_background: 0.0,
            ..*self
        }
    }

    /// Same background with the peak removed.
    pub fn without_peak(&self) -> Self {
        Self {
            d_peak: 0.0,
            ..*self
        }
    }
}

/// Broadening factor produced by an electrode voltage: `1 + c * U`.
pub fn broadening_from_voltage(voltage: f64, volts_to_factor: f64) -> Result<f64> {
    if !(voltage.is_finite() && voltage >= 0.0) {
        return Err(CribError::invalid(format!(
            "voltage magnitude must be >= 0, got {voltage}"
        )));
    }
    if !(volts_to_factor.is_finite() && volts_to_factor >= 0.0) {
        return Err(CribError::invalid(format!(
            "volts_to_factor must be >= 0, got {volts_to_factor}"
        )));
    }
    Ok(1.0 + volts_to_factor * voltage)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Forward,
    Reversed,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Forward => 1.0,
            Polarity::Reversed => -1.0,
        }
    }
}

/// Broadening strength plus the moment the field polarity flips.
///
/// `switch_time` is measured from the center of the input pulse. An infinite
/// switch time keeps the polarity fixed for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarkSchedule {
    pub broadening_factor: f64,
    pub switch_time: f64,
    pub voltage: Option<f64>,
    pub volts_to_factor: f64,
}

impl StarkSchedule {
    pub fn new(broadening_factor: f64, switch_time: f64) -> Result<Self> {
        if !(broadening_factor.is_finite() && broadening_factor >= 1.0) {
            return Err(CribError::invalid(format!(
                "broadening factor must be >= 1, got {broadening_factor}"
            )));
        }
        if !(switch_time > 0.0) {
            return Err(CribError::invalid(format!(
                "switch_time must be > 0, got {switch_time}"
            )));
        }
        Ok(Self {
            broadening_factor,
            switch_time,
            voltage: None,
            volts_to_factor: DEFAULT_VOLTS_TO_FACTOR,
        })
    }

    pub fn from_voltage(voltage: f64, volts_to_factor: f64, switch_time: f64) -> Result<Self> {
        let factor = broadening_from_voltage(voltage, volts_to_factor)?;
        let mut schedule = Self::new(factor, switch_time)?;
        schedule.voltage = Some(voltage);
        schedule.volts_to_factor = volts_to_factor;
        Ok(schedule)
    }

    /// Broadening that is never reversed.
    pub fn fixed(broadening_factor: f64) -> Result<Self> {
        Self::new(broadening_factor, f64::INFINITY)
    }

    pub fn with_switch_time(&self, switch_time: f64) -> Result<Self> {
        let mut next = Self::new(self.broadening_factor, switch_time)?;
        next.voltage = self.voltage;
        next.volts_to_factor = self.volts_to_factor;
        Ok(next)
    }

    /// Polarity at time `t` after the input-pulse center.
    pub fn polarity(&self, t: f64) -> Polarity {
        if t < self.switch_time {
            Polarity::Forward
        } else {
            Polarity::Reversed
        }
    }

    pub fn storage_time(&self) -> f64 {
        2.0 * self.switch_time
    }
}

/// Standard deviation (Hz) of a Gaussian with the given FWHM.
pub fn sigma_from_fwhm(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * LN_2).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference_peak() -> SpectralProfile {
        SpectralProfile::gaussian_peak(0.5, 1.0e6, 1.6).unwrap()
    }

    #[test]
    fn fwhm_converts_to_sigma() {
        let p = reference_peak();
        assert_relative_eq!(p.sigma, 424_660.9, max_relative = 1e-6);
        assert_eq!(p.d_peak, 0.5);
        assert_eq!(p.d_background, 1.6);

        let unit = SpectralProfile::gaussian_peak(0.5, FWHM_PER_SIGMA, 0.0).unwrap();
        assert_relative_eq!(unit.sigma, 1.0, max_relative = 1e-15);
        assert_relative_eq!(sigma_from_fwhm(FWHM_PER_SIGMA), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn zero_peak_is_flat() {
        let p = SpectralProfile::gaussian_peak(0.0, 1.0e6, 1.6).unwrap();
        for det in [-5e6, -1e5, 0.0, 3e5, 1e8] {
            assert_eq!(p.optical_depth_at(det), 1.6);
        }
    }

    #[test]
    fn bad_arguments_rejected() {
        assert!(SpectralProfile::gaussian_peak(0.5, 0.0, 1.6).is_err());
        assert!(SpectralProfile::gaussian_peak(0.5, -1.0, 1.6).is_err());
        assert!(SpectralProfile::gaussian_peak(-0.1, 1e6, 1.6).is_err());
        assert!(SpectralProfile::gaussian_peak(0.5, 1e6, -1.6).is_err());
        assert!(reference_peak().apply_broadening(0.5).is_err());
        assert!(broadening_from_voltage(-1.0, 0.04).is_err());
        assert!(StarkSchedule::new(0.9, 1e-7).is_err());
        assert!(StarkSchedule::new(3.0, 0.0).is_err());
    }

    #[test]
    fn depth_evaluation() {
        let p = reference_peak();
        assert_relative_eq!(p.optical_depth_at(0.0), 2.1, max_relative = 1e-15);
        assert_relative_eq!(p.optical_depth_at(1e12), 1.6, max_relative = 1e-15);
        let at_sigma = 1.6 + 0.5 * (-0.5f64).exp();
        assert_relative_eq!(p.optical_depth_at(p.sigma), at_sigma, max_relative = 1e-14);
        assert_relative_eq!(at_sigma, 1.9033, epsilon = 1e-4);
    }

    #[test]
    fn broadening_conserves_area() {
        let p = reference_peak();
        let b = p.apply_broadening(3.0).unwrap();
        assert_relative_eq!(b.d_peak, 0.5 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(b.d_peak, 0.1667, epsilon = 1e-4);
        assert_eq!(b.d_background, 1.6);
        let expected = 0.5 * 424_660.9 * (2.0 * PI).sqrt();
        assert_relative_eq!(p.area(), expected, max_relative = 1e-6);
        assert_relative_eq!(b.area(), p.area(), max_relative = 1e-12);
        assert_eq!(p.apply_broadening(1.0).unwrap(), p);
    }

    #[test]
    fn voltage_calibration() {
        assert_relative_eq!(
            broadening_from_voltage(50.0, 0.04).unwrap(),
            3.0,
            max_relative = 1e-15
        );
        assert_eq!(broadening_from_voltage(0.0, 0.04).unwrap(), 1.0);
        assert_eq!(broadening_from_voltage(0.0, 123.0).unwrap(), 1.0);
        assert_relative_eq!(
            broadening_from_voltage(70.0, 0.04).unwrap(),
            3.8,
            max_relative = 1e-15
        );
        let s = StarkSchedule::from_voltage(50.0, DEFAULT_VOLTS_TO_FACTOR, 150e-9).unwrap();
        assert_relative_eq!(s.broadening_factor, 3.0, max_relative = 1e-15);
        assert_eq!(s.voltage, Some(50.0));
    }

    #[test]
    fn polarity_has_two_segments() {
        let s = StarkSchedule::new(3.0, 150e-9).unwrap();
        assert_eq!(s.polarity(-1e-6), Polarity::Forward);
        assert_eq!(s.polarity(149.9e-9), Polarity::Forward);
        assert_eq!(s.polarity(150e-9), Polarity::Reversed);
        assert_eq!(s.polarity(1.0), Polarity::Reversed);
        assert_eq!(s.storage_time(), 300e-9);
        let fixed = StarkSchedule::fixed(3.0).unwrap();
        assert_eq!(fixed.polarity(1e9), Polarity::Forward);
    }

    proptest! {
        #[test]
        fn area_invariant_under_broadening(
            d in 0.01f64..10.0,
            sigma in 1.0f64..1e8,
            bg in 0.0f64..5.0,
            factor in 1.0f64..1000.0,
        ) {
            let p = SpectralProfile::new(d, sigma, bg, 0.0).unwrap();
            let b = p.apply_broadening(factor).unwrap();
            prop_assert!((b.area() - p.area()).abs() <= 1e-12 * p.area());
            prop_assert_eq!(b.d_background, bg);
        }

        #[test]
        fn depth_peaks_at_center_and_falls_off(
            d in 0.01f64..10.0,
            sigma in 1e3f64..1e7,
            center in -1e6f64..1e6,
            x1 in 0.0f64..4.0,
            dx in 1e-3f64..4.0,
            side in prop::bool::ANY,
        ) {
            let p = SpectralProfile::new(d, sigma, 0.3, center).unwrap();
            let sgn = if side { 1.0 } else { -1.0 };
            let near = p.optical_depth_at(center + sgn * x1 * sigma);
            let far = p.optical_depth_at(center + sgn * (x1 + dx) * sigma);
            prop_assert!(p.optical_depth_at(center) >= near);
            prop_assert!(near > far);
        }

        #[test]
        fn voltage_factor_strictly_increasing(u in 0.0f64..500.0, du in 1e-3f64..100.0) {
            let a = broadening_from_voltage(u, 0.04).unwrap();
            let b = broadening_from_voltage(u + du, 0.04).unwrap();
            prop_assert!(b > a);
        }
    }
}
