//! Photon counting on the output mode.
//!
//! Each trial sees a weak coherent field, so after linear losses the counts
//! per time bin are Poisson with mean
//! `flux * transmission * efficiency + (dark + noise floor) * bin_width`.
//! Trials are grouped in blocks of [`TRIALS_PER_BLOCK`]; block `k` draws from
//! a ChaCha8 stream `k` seeded with the model seed, and the sum of a block's
//! per-trial Poisson counts is drawn directly as one Poisson variate. Block
//! results are summed in block order, so the histogram does not depend on
//! how blocks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CribError, Result};
use crate::propagation::{make_pulse, simulate_echo, FieldTrace, PulseSpec, SimGrid};
use crate::spectral::{SpectralProfile, StarkSchedule};

/// One preparation cycle worth of storage trials.
pub const TRIALS_PER_BLOCK: u64 = 8000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    /// Optical transmission from the crystal to the detector.
    pub transmission: f64,
    pub detector_efficiency: f64,
    /// Detector dark count rate, Hz.
    pub dark_rate: f64,
    /// Residual optical noise (fluorescence, pulse leakage), Hz.
    pub noise_floor_rate: f64,
    pub bin_width: f64,
    pub trials: u64,
    pub rng_seed: u64,
}

impl Default for DetectionModel {
    fn default() -> Self {
        Self {
            transmission: 0.16,
            detector_efficiency: 0.07,
            dark_rate: 10.0,
            noise_floor_rate: 0.0,
            bin_width: 50e-9,
            trials: 4_800_000,
            rng_seed: 0,
        }
    }
}

impl DetectionModel {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("transmission", self.transmission),
            ("detector_efficiency", self.detector_efficiency),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CribError::invalid(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        for (name, r) in [
            ("dark_rate", self.dark_rate),
            ("noise_floor_rate", self.noise_floor_rate),
        ] {
            if !(r.is_finite() && r >= 0.0) {
                return Err(CribError::invalid(format!("{name} must be >= 0, got {r}")));
            }
        }
        if !(self.bin_width.is_finite() && self.bin_width > 0.0) {
            return Err(CribError::invalid(format!(
                "bin_width must be > 0, got {}",
                self.bin_width
            )));
        }
        if self.trials == 0 {
            return Err(CribError::invalid("trials must be >= 1"));
        }
        Ok(())
    }

    /// Probability that a photon leaving the crystal produces a click.
    pub fn photon_detection_probability(&self) -> f64 {
        self.transmission * self.detector_efficiency
    }

    pub fn background_rate(&self) -> f64 {
        self.dark_rate + self.noise_floor_rate
    }

    /// Mean background counts per bin per trial.
    pub fn background_per_bin(&self) -> f64 {
        self.background_rate() * self.bin_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_start: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub trials: u64,
}

impl Histogram {
    pub fn bin_time(&self, index: usize) -> f64 {
        self.bin_start + index as f64 * self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bins whose centers fall inside `[start, end]`.
    pub fn bins_in(&self, start: f64, end: f64) -> std::ops::Range<usize> {
        let first = ((start - self.bin_start) / self.bin_width - 0.5)
            .ceil()
            .max(0.0) as usize;
        let last = ((end - self.bin_start) / self.bin_width - 0.5).floor();
        if last < 0.0 {
            return 0..0;
        }
        let last = (last as usize + 1).min(self.counts.len());
        first.min(last)..last
    }
}

fn samples_per_bin(trace: &FieldTrace, bin_width: f64) -> Result<usize> {
    let ratio = bin_width / trace.dt;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-6 * ratio {
        return Err(CribError::invalid(format!(
            "bin width {bin_width:e} s is not a whole number of trace steps ({:e} s)",
            trace.dt
        )));
    }
    Ok(k as usize)
}

/// Mean counts per bin per trial for the field `trace`.
pub fn expected_counts_per_bin(trace: &FieldTrace, model: &DetectionModel) -> Result<Vec<f64>> {
    model.validate()?;
    let k = samples_per_bin(trace, model.bin_width)?;
    let detect = model.photon_detection_probability();
    let background = model.background_per_bin();
    Ok(trace
        .samples
        .chunks_exact(k)
        .map(|bin| {
            let photons = bin.iter().map(|s| s.norm_sqr()).sum::<f64>() * trace.dt;
            photons * detect + background
        })
        .collect())
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean > 0.0 {
        // Poisson::new only fails for non-positive or non-finite means.
        Poisson::new(mean)
            .map(|p| p.sample(rng) as u64)
            .unwrap_or(0)
    } else {
        0
    }
}

/// Draws a histogram from per-bin means accumulated over `trials` trials.
pub fn sample_counts(
    means: &[f64],
    trials: u64,
    seed: u64,
    bin_start: f64,
    bin_width: f64,
) -> Histogram {
    let n_blocks = trials.div_ceil(TRIALS_PER_BLOCK);
    let blocks: Vec<Vec<u64>> = (0..n_blocks)
        .into_par_iter()
        .map(|block| {
            let in_block = TRIALS_PER_BLOCK.min(trials - block * TRIALS_PER_BLOCK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block);
            means
                .iter()
                .map(|&mu| poisson(&mut rng, mu * in_block as f64))
                .collect()
        })
        .collect();
    let mut counts = vec![0u64; means.len()];
    for block in blocks {
        for (c, b) in counts.iter_mut().zip(block) {
            *c += b;
        }
    }
    Histogram {
        bin_start,
        bin_width,
        counts,
        trials,
    }
}

pub fn simulate_histogram(trace: &FieldTrace, model: &DetectionModel) -> Result<Histogram> {
    let means = expected_counts_per_bin(trace, model)?;
    Ok(sample_counts(
        &means,
        model.trials,
        model.rng_seed,
        trace.t0,
        model.bin_width,
    ))
}

/// Counts with the expected dark counts removed; may go negative.
pub fn subtract_dark_counts(hist: &Histogram, model: &DetectionModel) -> Vec<f64> {
    let dark = model.dark_rate * hist.bin_width * hist.trials as f64;
    hist.counts.iter().map(|&c| c as f64 - dark).collect()
}

/// `(S - N) / N` with `N` the noise-window counts rescaled to the signal
/// window's length. Infinite when the noise window holds no counts.
pub fn snr(hist: &Histogram, signal_window: (f64, f64), noise_window: (f64, f64)) -> Result<f64> {
    let (signal, noise) = window_counts(hist, signal_window, noise_window)?;
    let estimate = noise.scaled;
    if estimate == 0.0 {
        return if signal.sum > 0.0 {
            Ok(f64::INFINITY)
        } else {
            Err(CribError::UndefinedSnr("no counts in either window".into()))
        };
    }
    Ok((signal.sum - estimate) / estimate)
}

struct WindowSum {
    sum: f64,
    scaled: f64,
}

fn window_counts(
    hist: &Histogram,
    signal_window: (f64, f64),
    noise_window: (f64, f64),
) -> Result<(WindowSum, WindowSum)> {
    let sig = hist.bins_in(signal_window.0, signal_window.1);
    let noi = hist.bins_in(noise_window.0, noise_window.1);
    if noi.is_empty() {
        return Err(CribError::UndefinedSnr(
            "noise window contains no bins".into(),
        ));
    }
    if sig.is_empty() {
        return Err(CribError::invalid("signal window contains no bins"));
    }
    if sig.start < noi.end && noi.start < sig.end {
        return Err(CribError::invalid("signal and noise windows overlap"));
    }
    let sum = |r: std::ops::Range<usize>| hist.counts[r].iter().sum::<u64>() as f64;
    let noise_sum = sum(noi.clone());
    Ok((
        WindowSum {
            sum: sum(sig.clone()),
            scaled: 0.0,
        },
        WindowSum {
            sum: noise_sum,
            scaled: noise_sum * sig.len() as f64 / noi.len() as f64,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Slope {
    Fitted(f64),
    Undefined(SlopeIssue),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeIssue {
    TooFewPoints,
    NonPositiveValues,
    InfiniteValues,
}

impl Slope {
    pub fn value(&self) -> Option<f64> {
        match self {
            Slope::Fitted(v) => Some(*v),
            Slope::Undefined(_) => None,
        }
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Slope {
    if points.len() < 2 {
        return Slope::Undefined(SlopeIssue::TooFewPoints);
    }
    if points.iter().any(|p| p.1.is_infinite()) {
        return Slope::Undefined(SlopeIssue::InfiniteValues);
    }
    if points.iter().any(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
        return Slope::Undefined(SlopeIssue::NonPositiveValues);
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Slope::Undefined(SlopeIssue::TooFewPoints);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    Slope::Fitted(sxy / sxx)
}

/// Everything needed to turn a mean photon number into echo counts.
#[derive(Debug, Clone)]
pub struct EchoPipeline {
    pub pulse: PulseSpec,
    pub profile: SpectralProfile,
    pub schedule: StarkSchedule,
    pub grid: SimGrid,
    pub model: DetectionModel,
    pub signal_window: (f64, f64),
    pub noise_window: (f64, f64),
}

impl EchoPipeline {
    /// Switch-induced field for `mean_photons` input photons.
    pub fn echo_trace(&self, mean_photons: f64) -> Result<FieldTrace> {
        let input = make_pulse(&self.pulse.with_photons(mean_photons), &self.grid)?;
        Ok(simulate_echo(&input, &self.profile, &self.schedule, &self.grid)?.echo)
    }

    pub fn histogram(&self, echo: &FieldTrace, seed: u64) -> Result<Histogram> {
        simulate_histogram(
            echo,
            &DetectionModel {
                rng_seed: seed,
                ..self.model
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearityRow {
    pub nbar: f64,
    /// Signal-window counts minus the scaled noise estimate.
    pub echo_counts: f64,
    pub snr: f64,
    pub noise_estimate: f64,
    /// Expected background counts in the signal window.
    pub expected_background: f64,
    /// Expected echo counts in the signal window.
    pub expected_echo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityScan {
    pub rows: Vec<LinearityRow>,
    pub counts_slope: Slope,
    pub snr_slope: Slope,
}

/// Runs the full pipeline once per mean photon number. Each value gets its
/// own seed derived from the model seed and its position in `nbar_values`.
pub fn linearity_scan(nbar_values: &[f64], pipeline: &EchoPipeline) -> Result<LinearityScan> {
    if let Some(bad) = nbar_values.iter().find(|&&n| !(n > 0.0 && n.is_finite())) {
        return Err(CribError::invalid(format!(
            "mean photon numbers must be > 0, got {bad}"
        )));
    }
    let mut rows = Vec::with_capacity(nbar_values.len());
    for (i, &nbar) in nbar_values.iter().enumerate() {
        let echo = pipeline.echo_trace(nbar)?;
        let seed = pipeline.model.rng_seed.wrapping_add((i as u64 + 1) << 32);
        let hist = pipeline.histogram(&echo, seed)?;
        let (signal, noise) = window_counts(&hist, pipeline.signal_window, pipeline.noise_window)?;
        let snr_value =
            snr(&hist, pipeline.signal_window, pipeline.noise_window).unwrap_or(f64::NAN);

        let means = expected_counts_per_bin(&echo, &pipeline.model)?;
        let bins = hist.bins_in(pipeline.signal_window.0, pipeline.signal_window.1);
        let trials = pipeline.model.trials as f64;
        let expected_background = pipeline.model.background_per_bin() * bins.len() as f64 * trials;
        let expected_echo = means[bins].iter().sum::<f64>() * trials - expected_background;

        rows.push(LinearityRow {
            nbar,
            echo_counts: signal.sum - noise.scaled,
            snr: snr_value,
            noise_estimate: noise.scaled,
            expected_background,
            expected_echo,
        });
    }
    let counts_slope = log_log_slope(
        &rows
            .iter()
            .map(|r| (r.nbar, r.echo_counts))
            .collect::<Vec<_>>(),
    );
    let snr_slope = log_log_slope(&rows.iter().map(|r| (r.nbar, r.snr)).collect::<Vec<_>>());
    Ok(LinearityScan {
        rows,
        counts_slope,
        snr_slope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    /// Noise floor rate (Hz) that puts the expected SNR on target.
    pub noise_floor_rate: f64,
    /// Expected SNR with dark counts alone.
    pub dark_only_snr: f64,
    /// False when the dark counts alone already push the SNR below target.
    pub attainable: bool,
}

/// Chooses the noise floor rate so the expected SNR of `echo` (already
/// scaled to the calibration photon number) in `signal_window` equals
/// `target_snr`.
pub fn calibrate_noise_floor(
    echo: &FieldTrace,
    model: &DetectionModel,
    signal_window: (f64, f64),
    target_snr: f64,
) -> Result<NoiseCalibration> {
    if !(target_snr > 0.0) {
        return Err(CribError::invalid("target SNR must be > 0"));
    }
    let signal_only = DetectionModel {
        dark_rate: 0.0,
        noise_floor_rate: 0.0,
        ..*model
    };
    let means = expected_counts_per_bin(echo, &signal_only)?;
    let k = samples_per_bin(echo, model.bin_width)?;
    let probe = Histogram {
        bin_start: echo.t0,
        bin_width: model.bin_width,
        counts: vec![0; echo.len() / k],
        trials: 1,
    };
    let bins = probe.bins_in(signal_window.0, signal_window.1);
    if bins.is_empty() {
        return Err(CribError::invalid("signal window contains no bins"));
    }
    let window_time = bins.len() as f64 * model.bin_width;
    let signal: f64 = means[bins].iter().sum();
    let total_rate = signal / (target_snr * window_time);
    let dark_only_snr = if model.dark_rate > 0.0 {
        signal / (model.dark_rate * window_time)
    } else {
        f64::INFINITY
    };
    let needed = total_rate - model.dark_rate;
    Ok(NoiseCalibration {
        noise_floor_rate: needed.max(0.0),
        dark_only_snr,
        attainable: needed >= 0.0,
    })
}
