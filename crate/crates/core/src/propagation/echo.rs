use serde::{Deserialize, Serialize};

use super::solver::{simulate_crib, simulate_echo};
use super::trace::{make_pulse, FieldTrace, PulseSpec, SimGrid};
use crate::error::{CribError, Result};
use crate::spectral::{SpectralProfile, StarkSchedule};

/// Echo window half-width in pulse durations.
pub const ECHO_HALF_WIDTH_DURATIONS: f64 = 1.5;

/// Time window `[center - half_width, center + half_width]` around the
/// expected echo, which rephases at twice the switch time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoWindow {
    pub center: f64,
    pub half_width: f64,
}

impl EchoWindow {
    pub fn for_pulse(pulse: &PulseSpec, schedule: &StarkSchedule) -> Self {
        Self {
            center: pulse.center_time + schedule.storage_time(),
            half_width: ECHO_HALF_WIDTH_DURATIONS * pulse.duration,
        }
    }

    pub fn start(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn end(&self) -> f64 {
        self.center + self.half_width
    }
}

/// Fraction of the input photons found in `window` of `echo`.
///
/// Pass the switch-induced field (`CribRun::echo`) to exclude the transmitted
/// pulse, or any other trace on the same grid.
pub fn echo_efficiency(echo: &FieldTrace, input: &FieldTrace, window: &EchoWindow) -> Result<f64> {
    if !echo.same_grid(input) {
        return Err(CribError::invalid(
            "output and input traces do not share a grid",
        ));
    }
    let total = input.photon_number();
    if !(total > 0.0) {
        return Err(CribError::invalid("input trace carries no photons"));
    }
    let in_window = echo.photons_between(window.start(), window.end())?;
    Ok(in_window / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub switch_time: f64,
    /// Always `2 * switch_time`.
    pub storage_time: f64,
    pub efficiency: f64,
    /// Intensity centroid of the echo inside its window, relative to the input center.
    pub echo_centroid: Option<f64>,
}

/// Echo efficiency as a function of storage time, one simulation per switch time.
pub fn decay_scan(
    pulse: &PulseSpec,
    profile: &SpectralProfile,
    factor: f64,
    switch_times: &[f64],
    grid: &SimGrid,
) -> Result<Vec<DecayPoint>> {
    let input = make_pulse(pulse, grid)?;
    switch_times
        .iter()
        .map(|&switch_time| {
            let schedule = StarkSchedule::new(factor, switch_time)?;
            let window = EchoWindow::for_pulse(pulse, &schedule);
            let run = simulate_echo(&input, profile, &schedule, grid)?;
            let efficiency = echo_efficiency(&run.echo, &input, &window)?;
            let echo_centroid = run
                .echo
                .centroid_between(window.start(), window.end())?
                .map(|t| t - pulse.center_time);
            Ok(DecayPoint {
                switch_time,
                storage_time: schedule.storage_time(),
                efficiency,
                echo_centroid,
            })
        })
        .collect()
}

/// Probe pulse used by [`monochromatic_transmission`]: a Gaussian filling the
/// grid window (six FWHM between the edges' three-FWHM supports).
pub fn probe_pulse(grid: &SimGrid, detuning: f64) -> PulseSpec {
    let span = grid.t_end - grid.t_start;
    PulseSpec {
        carrier_detuning: detuning,
        center_time: grid.t_start + 0.5 * span,
        ..PulseSpec::gaussian(span / 6.0 * (1.0 - 1e-6), 1.0)
    }
}

/// Energy transmission of a long, narrowband probe at `detuning`, background included.
pub fn monochromatic_transmission(
    profile: &SpectralProfile,
    schedule: &StarkSchedule,
    detuning: f64,
    grid: &SimGrid,
) -> Result<f64> {
    let probe = probe_pulse(grid, detuning);
    if probe.center_time + schedule.switch_time <= grid.t_end {
        return Err(CribError::invalid(
            "monochromatic transmission needs a fixed polarity over the window",
        ));
    }
    let input = make_pulse(&probe, grid)?;
    let output = simulate_crib(&input, profile, schedule, grid)?;
    Ok(output.photon_number() / input.photon_number())
}
