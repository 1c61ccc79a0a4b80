use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CribError, Result};

/// Complex field envelope sampled on a uniform time grid.
///
/// Samples are scaled so that `sum |E|^2 dt` is the mean photon number
/// carried by the trace; `|E|^2` is therefore a photon flux in 1/s.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrace {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<Complex64>,
}

impl FieldTrace {
    pub fn new(t0: f64, dt: f64, samples: Vec<Complex64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(CribError::invalid(format!("dt must be > 0, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(CribError::invalid("t0 must be finite"));
        }
        if let Some(i) = samples
            .iter()
            .position(|s| !(s.re.is_finite() && s.im.is_finite()))
        {
            return Err(CribError::invalid(format!("sample {i} is not finite")));
        }
        Ok(Self { t0, dt, samples })
    }

    pub fn zeros(t0: f64, dt: f64, len: usize) -> Self {
        Self {
            t0,
            dt,
            samples: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn intensity(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.norm_sqr())
    }

    /// Mean photon number, `sum |E|^2 dt`.
    pub fn photon_number(&self) -> f64 {
        self.intensity().sum::<f64>() * self.dt
    }

    /// Sample indices whose times fall inside `[start, end]`.
    pub fn window_indices(&self, start: f64, end: f64) -> Result<std::ops::Range<usize>> {
        let slack = 1e-9 * self.dt;
        if !(start <= end) || start < self.t0 - slack || end > self.t_end() + slack {
            return Err(CribError::invalid(format!(
                "window [{start:e}, {end:e}] s lies outside trace [{:e}, {:e}] s",
                self.t0,
                self.t_end()
            )));
        }
        let first = ((start - self.t0) / self.dt - 1e-9).ceil().max(0.0) as usize;
        let last = ((end - self.t0) / self.dt + 1e-9).floor() as usize;
        Ok(first..(last + 1).min(self.len()))
    }

    pub fn photons_between(&self, start: f64, end: f64) -> Result<f64> {
        let range = self.window_indices(start, end)?;
        Ok(self.samples[range]
            .iter()
            .map(|s| s.norm_sqr())
            .sum::<f64>()
            * self.dt)
    }

    /// Intensity-weighted mean time; `None` for an all-zero trace.
    pub fn centroid(&self) -> Option<f64> {
        self.centroid_of(0..self.len())
    }

    pub fn centroid_between(&self, start: f64, end: f64) -> Result<Option<f64>> {
        Ok(self.centroid_of(self.window_indices(start, end)?))
    }

    fn centroid_of(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let (mut weight, mut moment) = (0.0, 0.0);
        for i in range {
            let w = self.samples[i].norm_sqr();
            weight += w;
            moment += w * self.time(i);
        }
        (weight > 0.0).then(|| moment / weight)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            ..self.clone()
        }
    }

    pub fn same_grid(&self, other: &FieldTrace) -> bool {
        self.len() == other.len()
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
            && (self.t0 - other.t0).abs() <= 1e-9 * self.dt
    }

    /// Sample-wise difference `self - other`.
    pub fn difference(&self, other: &FieldTrace) -> Result<Self> {
        if !self.same_grid(other) {
            return Err(CribError::invalid("traces do not share a time grid"));
        }
        Ok(Self {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a - b)
                .collect(),
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    Gaussian,
    Square,
}

/// Input pulse: intensity FWHM for gaussian, full width for square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub shape: PulseShape,
    pub duration: f64,
    pub mean_photons: f64,
    pub carrier_detuning: f64,
    pub center_time: f64,
}

impl PulseSpec {
    pub fn gaussian(duration: f64, mean_photons: f64) -> Self {
        Self {
            shape: PulseShape::Gaussian,
            duration,
            mean_photons,
            carrier_detuning: 0.0,
            center_time: 0.0,
        }
    }

    pub fn square(duration: f64, mean_photons: f64) -> Self {
        Self {
            shape: PulseShape::Square,
            ..Self::gaussian(duration, mean_photons)
        }
    }

    pub fn with_photons(&self, mean_photons: f64) -> Self {
        Self {
            mean_photons,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(CribError::invalid(format!(
                "pulse duration must be > 0, got {}",
                self.duration
            )));
        }
        if !(self.mean_photons.is_finite() && self.mean_photons >= 0.0) {
            return Err(CribError::invalid(format!(
                "mean photon number must be >= 0, got {}",
                self.mean_photons
            )));
        }
        if !(self.carrier_detuning.is_finite() && self.center_time.is_finite()) {
            return Err(CribError::invalid(
                "pulse detuning and center must be finite",
            ));
        }
        Ok(())
    }

    /// Time span the simulation window must contain.
    pub fn support(&self) -> (f64, f64) {
        let half = match self.shape {
            PulseShape::Gaussian => 3.0 * self.duration,
            PulseShape::Square => 0.5 * self.duration,
        };
        (self.center_time - half, self.center_time + half)
    }
}

/// Discretization of depth, detuning and time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    pub n_z: usize,
    pub n_detuning: usize,
    /// Full width of the detuning grid, Hz.
    pub detuning_span: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Optical coherence time; infinite disables homogeneous decay.
    pub t2: f64,
}

pub const DEFAULT_N_Z: usize = 100;
pub const DEFAULT_N_DETUNING: usize = 512;
/// Default detuning span in units of the broadened standard deviation (+-10 sigma).
pub const DEFAULT_SPAN_SIGMAS: f64 = 20.0;
pub const MIN_SPAN_SIGMAS: f64 = 10.0;
/// Largest allowed phase step `pi * span * dt`.
pub const MAX_PHASE_STEP: f64 = 0.1;
pub const MIN_SAMPLES_PER_DURATION: f64 = 50.0;

impl SimGrid {
    /// Default grid for a broadened line of width `broadened_sigma` and pulses of
    /// length `duration`, covering `[t_start, t_end]`.
    pub fn covering(
        broadened_sigma: f64,
        duration: f64,
        t_start: f64,
        t_end: f64,
        t2: f64,
    ) -> Self {
        let detuning_span = DEFAULT_SPAN_SIGMAS * broadened_sigma;
        Self {
            n_z: DEFAULT_N_Z,
            n_detuning: DEFAULT_N_DETUNING,
            detuning_span,
            t_start,
            t_end,
            dt: Self::max_dt(detuning_span).min(duration / MIN_SAMPLES_PER_DURATION),
            t2,
        }
    }

    pub fn max_dt(detuning_span: f64) -> f64 {
        MAX_PHASE_STEP / (PI * detuning_span)
    }

    pub fn n_times(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt + 1e-9).floor() as usize + 1
    }

    pub fn time(&self, index: usize) -> f64 {
        self.t_start + index as f64 * self.dt
    }

    /// Half the time step, twice the depth slices and twice the detuning bins.
    pub fn refined(&self) -> Self {
        Self {
            n_z: 2 * self.n_z,
            n_detuning: 2 * self.n_detuning,
            dt: 0.5 * self.dt,
            ..*self
        }
    }

    pub fn validate(&self, broadened_sigma: f64) -> Result<()> {
        if self.n_z < 2 {
            return Err(CribError::invalid(format!(
                "n_z must be >= 2, got {}",
                self.n_z
            )));
        }
        if self.n_detuning < 8 {
            return Err(CribError::invalid(format!(
                "n_detuning must be >= 8, got {}",
                self.n_detuning
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(CribError::invalid(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if !(self.t_end > self.t_start) {
            return Err(CribError::invalid("time window is empty"));
        }
        if !(self.t2 > 0.0) {
            return Err(CribError::invalid(format!(
                "T2 must be > 0, got {}",
                self.t2
            )));
        }
        if !(self.detuning_span >= MIN_SPAN_SIGMAS * broadened_sigma * (1.0 - 1e-12)) {
            return Err(CribError::invalid(format!(
                "detuning span {:e} Hz does not cover +-5 broadened sigma ({:e} Hz)",
                self.detuning_span,
                MIN_SPAN_SIGMAS * broadened_sigma
            )));
        }
        if self.dt > Self::max_dt(self.detuning_span) * (1.0 + 1e-9) {
            return Err(CribError::invalid(format!(
                "dt {:e} s exceeds stability bound {:e} s for the detuning span",
                self.dt,
                Self::max_dt(self.detuning_span)
            )));
        }
        Ok(())
    }
}

/// Samples a pulse on the grid's time axis, normalized to its mean photon number.
pub fn make_pulse(spec: &PulseSpec, grid: &SimGrid) -> Result<FieldTrace> {
    spec.validate()?;
    let slack = 1e-9 * spec.duration;
    let (lo, hi) = spec.support();
    if lo < grid.t_start - slack || hi > grid.t_end + slack {
        return Err(CribError::invalid(format!(
            "time window [{:e}, {:e}] s does not contain pulse support [{lo:e}, {hi:e}] s",
            grid.t_start, grid.t_end
        )));
    }
    if grid.dt > spec.duration / MIN_SAMPLES_PER_DURATION * (1.0 + 1e-9) {
        return Err(CribError::invalid(format!(
            "dt {:e} s is coarser than duration/50 for a {:e} s pulse",
            grid.dt, spec.duration
        )));
    }

    let n = grid.n_times();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = grid.time(i);
        let x = t - spec.center_time;
        let envelope = match spec.shape {
            // |E|^2 = exp(-4 ln2 x^2 / T^2)
            PulseShape::Gaussian => (-2.0 * LN_2 * x * x / (spec.duration * spec.duration)).exp(),
            PulseShape::Square => {
                let half = 0.5 * spec.duration;
                if x >= -half - 1e-9 * grid.dt && x < half - 1e-9 * grid.dt {
                    1.0
                } else {
                    0.0
                }
            }
        };
        let carrier = Complex64::from_polar(1.0, -2.0 * PI * spec.carrier_detuning * t);
        samples.push(carrier * envelope);
    }
    let mut trace = FieldTrace::new(grid.t_start, grid.dt, samples)?;
    let raw = trace.photon_number();
    if spec.mean_photons == 0.0 {
        return Ok(FieldTrace::zeros(grid.t_start, grid.dt, n));
    }
    if raw <= 0.0 {
        return Err(CribError::invalid("pulse falls between grid samples"));
    }
    let scale = (spec.mean_photons / raw).sqrt();
    trace.samples.iter_mut().for_each(|s| *s *= scale);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(dt: f64, t_start: f64, t_end: f64) -> SimGrid {
        SimGrid {
            n_z: 10,
            n_detuning: 64,
            detuning_span: 1e6,
            t_start,
            t_end,
            dt,
            t2: 2e-6,
        }
    }

    #[test]
    fn gaussian_pulse_normalized() {
        let g = grid(1e-9, -700e-9, 900e-9);
        let trace = make_pulse(&PulseSpec::gaussian(200e-9, 10.0), &g).unwrap();
        assert_relative_eq!(trace.photon_number(), 10.0, max_relative = 1e-9);
        assert_relative_eq!(trace.centroid().unwrap(), 0.0, epsilon = 1e-12);
        // FWHM of the intensity is the duration
        let peak = trace.samples[700].norm_sqr();
        let half = trace.samples[800].norm_sqr();
        assert_relative_eq!(half / peak, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn zero_photon_pulse_is_zero() {
        let g = grid(1e-9, -700e-9, 900e-9);
        let trace = make_pulse(&PulseSpec::gaussian(200e-9, 0.0), &g).unwrap();
        assert!(trace.samples.iter().all(|s| s.norm() == 0.0));
        assert_eq!(trace.len(), g.n_times());
    }

    #[test]
    fn square_pulse_flux() {
        let g = grid(1e-9, -200e-9, 200e-9);
        let trace = make_pulse(&PulseSpec::square(100e-9, 1.0), &g).unwrap();
        assert_relative_eq!(trace.photon_number(), 1.0, max_relative = 1e-9);
        let inside: Vec<f64> = trace.intensity().filter(|&i| i > 0.0).collect();
        assert_eq!(inside.len(), 100);
        for i in inside {
            assert_relative_eq!(i, 1.0 / 100e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn window_too_small_rejected() {
        let g = grid(1e-9, -300e-9, 900e-9);
        assert!(make_pulse(&PulseSpec::gaussian(200e-9, 1.0), &g).is_err());
        let coarse = grid(10e-9, -700e-9, 900e-9);
        assert!(make_pulse(&PulseSpec::gaussian(200e-9, 1.0), &coarse).is_err());
    }

    #[test]
    fn window_indices_bounds() {
        let t = FieldTrace::zeros(0.0, 1e-9, 11);
        assert_eq!(t.window_indices(0.0, 10e-9).unwrap(), 0..11);
        assert_eq!(t.window_indices(2.5e-9, 4e-9).unwrap(), 3..5);
        assert!(t.window_indices(-1e-9, 4e-9).is_err());
        assert!(t.window_indices(0.0, 11e-9).is_err());
    }

    #[test]
    fn grid_validation() {
        let mut g = SimGrid::covering(1.27e6, 200e-9, -600e-9, 1e-6, 2e-6);
        assert!(g.validate(1.27e6).is_ok());
        assert!(g.dt <= 0.1 / (PI * g.detuning_span) * (1.0 + 1e-12));
        g.dt *= 1.5;
        assert!(g.validate(1.27e6).is_err());
        let narrow = SimGrid {
            detuning_span: 5.0 * 1.27e6,
            ..SimGrid::covering(1.27e6, 200e-9, -600e-9, 1e-6, 2e-6)
        };
        assert!(narrow.validate(1.27e6).is_err());
    }
}
