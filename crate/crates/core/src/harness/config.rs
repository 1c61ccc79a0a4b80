//! Scenario configuration.
//!
//! Configs are TOML files with one table per component. Every key carries
//! its unit in the name (`_ns`, `_hz`, `_s`). Unknown keys are rejected, and
//! [`ScenarioConfig::validate`] rebuilds every domain object so that bad
//! values surface with the offending key attached.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sequence::SequenceTiming;
use crate::detection::DetectionModel;
use crate::error::{CribError, Result};
use crate::propagation::{
    PulseShape, PulseSpec, SimGrid, DEFAULT_N_DETUNING, DEFAULT_N_Z, DEFAULT_SPAN_SIGMAS,
};
use crate::spectral::{SpectralProfile, StarkSchedule, DEFAULT_VOLTS_TO_FACTOR};

const NS: f64 = 1e-9;

pub const DEFAULT_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub profile: ProfileConfig,
    pub pulse: PulseConfig,
    pub stark: StarkConfig,
    pub grid: GridConfig,
    pub detection: DetectionConfig,
    pub decay: DecayConfig,
    pub linearity: LinearityConfig,
    pub sequence: SequenceTiming,
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            profile: ProfileConfig::default(),
            pulse: PulseConfig::default(),
            stark: StarkConfig::default(),
            grid: GridConfig::default(),
            detection: DetectionConfig::default(),
            decay: DecayConfig::default(),
            linearity: LinearityConfig::default(),
            sequence: SequenceTiming::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub d_peak: f64,
    pub fwhm_hz: f64,
    pub d_background: f64,
    pub center_detuning_hz: f64,
    /// Optical coherence time; `inf` disables homogeneous decay.
    pub t2_ns: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            d_peak: 0.5,
            fwhm_hz: 1e6,
            d_background: 1.6,
            center_detuning_hz: 0.0,
            t2_ns: 2000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseConfig {
    pub shape: PulseShape,
    /// Intensity FWHM for Gaussian pulses, full length for square ones.
    pub duration_ns: f64,
    pub mean_photons: f64,
    pub carrier_detuning_hz: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            shape: PulseShape::Gaussian,
            duration_ns: 200.0,
            mean_photons: 1.0,
            carrier_detuning_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StarkConfig {
    /// Broadened over prepared linewidth. Exclusive with `voltage_v`; with
    /// neither set the factor is [`DEFAULT_FACTOR`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voltage_v: Option<f64>,
    pub volts_to_factor: f64,
    /// Time from the input center to the polarity flip.
    pub switch_time_ns: f64,
}

impl Default for StarkConfig {
    fn default() -> Self {
        Self {
            factor: None,
            voltage_v: None,
            volts_to_factor: DEFAULT_VOLTS_TO_FACTOR,
            switch_time_ns: 150.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_z: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_detuning: Option<usize>,
    /// Detuning span in broadened standard deviations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span_sigmas: Option<f64>,
    /// Upper bound on the step; the step actually used divides the bin width.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_start_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end_ns: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub transmission: f64,
    pub detector_efficiency: f64,
    pub dark_rate_hz: f64,
    /// Left unset, the rate is calibrated against `target_snr`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_floor_rate_hz: Option<f64>,
    pub bin_width_ns: f64,
    pub integration_time_s: f64,
    /// Overrides the trial count implied by the integration time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    /// Width of the signal window, centered on the echo.
    pub signal_window_ns: f64,
    pub target_snr: f64,
    pub calibration_nbar: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            transmission: 0.16,
            detector_efficiency: 0.07,
            dark_rate_hz: 10.0,
            noise_floor_rate_hz: None,
            bin_width_ns: 50.0,
            integration_time_s: 200.0,
            trials: None,
            signal_window_ns: 100.0,
            target_snr: 3.0,
            calibration_nbar: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    pub storage_times_ns: Vec<f64>,
    pub exclude_first_point: bool,
    /// CSV with `storage_time_ns,efficiency` columns, read by `fit-decay`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points_file: Option<PathBuf>,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            storage_times_ns: (1..=7).map(|k| 100.0 * k as f64).collect(),
            exclude_first_point: true,
            points_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearityConfig {
    pub nbar_values: Vec<f64>,
    pub integration_time_s: f64,
}

impl Default for LinearityConfig {
    fn default() -> Self {
        Self {
            nbar_values: vec![0.6, 1.25, 2.5, 5.0, 10.0],
            integration_time_s: 20_000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for OutputFormat {
    type Err = CribError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(CribError::config(
                "output.format",
                format!("unknown format `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
        }
    }
}

fn field_error(err: toml::de::Error) -> CribError {
    // serde reports the key path in the message; the span is not needed.
    let message = err.message().to_string();
    let field = message
        .split('`')
        .nth(1)
        .filter(|_| message.starts_with("unknown field"))
        .unwrap_or("<document>")
        .to_string();
    CribError::config(field, message)
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides with dotted keys, then
    /// validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(field_error)?;
        for entry in overrides {
            apply_override(&mut table, entry)?;
        }
        let config: Self = table.try_into().map_err(field_error)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CribError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        // Every field serializes to a TOML value, so this cannot fail.
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.sequence.validate()?;
        let profile = self.spectral_profile()?;
        let schedule = self.stark_schedule()?;
        self.pulse_spec()?;
        self.detection_model()?;
        if !(self.profile.t2_ns > 0.0) {
            return Err(CribError::config(
                "profile.t2_ns",
                "must be > 0 (use inf for no decay)",
            ));
        }
        let sigma_b = profile.sigma * schedule.broadening_factor;
        self.sim_grid(sigma_b, &[schedule.switch_time])?;
        for (i, &t) in self.decay.storage_times_ns.iter().enumerate() {
            if !(t.is_finite() && t > 0.0) {
                return Err(CribError::config(
                    format!("decay.storage_times_ns[{i}]"),
                    format!("storage times must be > 0, got {t}"),
                ));
            }
        }
        for (i, &n) in self.linearity.nbar_values.iter().enumerate() {
            if !(n.is_finite() && n > 0.0) {
                return Err(CribError::config(
                    format!("linearity.nbar_values[{i}]"),
                    format!("mean photon numbers must be > 0, got {n}"),
                ));
            }
        }
        if !(self.linearity.integration_time_s > 0.0) {
            return Err(CribError::config(
                "linearity.integration_time_s",
                "must be > 0",
            ));
        }
        let d = &self.detection;
        for (name, v) in [
            ("detection.signal_window_ns", d.signal_window_ns),
            ("detection.target_snr", d.target_snr),
            ("detection.calibration_nbar", d.calibration_nbar),
            ("detection.integration_time_s", d.integration_time_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CribError::config(name, format!("must be > 0, got {v}")));
            }
        }
        if d.signal_window_ns < d.bin_width_ns {
            return Err(CribError::config(
                "detection.signal_window_ns",
                "must span at least one bin",
            ));
        }
        Ok(())
    }

    pub fn spectral_profile(&self) -> Result<SpectralProfile> {
        let p = &self.profile;
        let base = SpectralProfile::gaussian_peak(p.d_peak, p.fwhm_hz, p.d_background)
            .map_err(|e| CribError::config("profile", e.to_string()))?;
        SpectralProfile::new(
            base.d_peak,
            base.sigma,
            base.d_background,
            p.center_detuning_hz,
        )
        .map_err(|e| CribError::config("profile.center_detuning_hz", e.to_string()))
    }

    pub fn stark_schedule(&self) -> Result<StarkSchedule> {
        self.schedule_at(self.stark.switch_time_ns * NS, "stark.switch_time_ns")
    }

    pub(crate) fn schedule_at(&self, switch_time: f64, field: &str) -> Result<StarkSchedule> {
        let s = &self.stark;
        let schedule = match (s.factor, s.voltage_v) {
            (Some(_), Some(_)) => {
                return Err(CribError::config(
                    "stark.factor",
                    "set either stark.factor or stark.voltage_v, not both",
                ))
            }
            (None, None) => StarkSchedule::new(DEFAULT_FACTOR, 1.0)?,
            (Some(b), None) => StarkSchedule::new(b, 1.0)
                .map_err(|e| CribError::config("stark.factor", e.to_string()))?,
            (None, Some(v)) => StarkSchedule::from_voltage(v, s.volts_to_factor, 1.0)
                .map_err(|e| CribError::config("stark.voltage_v", e.to_string()))?,
        };
        schedule
            .with_switch_time(switch_time)
            .map_err(|e| CribError::config(field, e.to_string()))
    }

    pub fn pulse_spec(&self) -> Result<PulseSpec> {
        let p = &self.pulse;
        let duration = p.duration_ns * NS;
        let base = match p.shape {
            PulseShape::Gaussian => PulseSpec::gaussian(duration, p.mean_photons),
            PulseShape::Square => PulseSpec::square(duration, p.mean_photons),
        };
        let spec = PulseSpec {
            carrier_detuning: p.carrier_detuning_hz,
            ..base
        };
        spec.validate()
            .map_err(|e| CribError::config("pulse", e.to_string()))?;
        Ok(spec)
    }

    pub fn bin_width(&self) -> f64 {
        self.detection.bin_width_ns * NS
    }

    /// Detection model for the scenario's main histogram. The noise floor is
    /// zero when it is meant to be calibrated.
    pub fn detection_model(&self) -> Result<DetectionModel> {
        let d = &self.detection;
        let trials = match d.trials {
            Some(t) => t,
            None => self.trials_for(d.integration_time_s)?,
        };
        let model = DetectionModel {
            transmission: d.transmission,
            detector_efficiency: d.detector_efficiency,
            dark_rate: d.dark_rate_hz,
            noise_floor_rate: d.noise_floor_rate_hz.unwrap_or(0.0),
            bin_width: self.bin_width(),
            trials,
            rng_seed: self.seed,
        };
        model
            .validate()
            .map_err(|e| CribError::config("detection", e.to_string()))?;
        Ok(model)
    }

    /// Trials accumulated over `seconds` of repeated preparation cycles.
    pub fn trials_for(&self, seconds: f64) -> Result<u64> {
        let trials =
            (seconds * self.sequence.repetition_rate_hz).round() * self.sequence.trials as f64;
        if !(trials >= 1.0 && trials < u64::MAX as f64) {
            return Err(CribError::config(
                "detection.integration_time_s",
                format!("implies {trials} trials"),
            ));
        }
        Ok(trials as u64)
    }

    /// Simulation grid long enough for echoes after every switch time.
    /// The time step is the largest one below the stability bound that
    /// divides the detection bin width.
    pub fn sim_grid(&self, broadened_sigma: f64, switch_times: &[f64]) -> Result<SimGrid> {
        let g = &self.grid;
        let duration = self.pulse.duration_ns * NS;
        let bin = self.bin_width();
        let latest = switch_times.iter().copied().fold(0.0, f64::max);
        let t_start = g
            .t_start_ns
            .map(|t| t * NS)
            .unwrap_or_else(|| -(3.5 * duration / bin).ceil() * bin);
        let t_end = g
            .t_end_ns
            .map(|t| t * NS)
            .unwrap_or(2.0 * latest + 3.0 * duration);
        if !(t_end > t_start) {
            return Err(CribError::config(
                "grid.t_end_ns",
                "must come after grid.t_start_ns",
            ));
        }
        let mut grid = SimGrid::covering(
            broadened_sigma,
            duration,
            t_start,
            t_end,
            self.profile.t2_ns * NS,
        );
        grid.n_z = g.n_z.unwrap_or(DEFAULT_N_Z);
        grid.n_detuning = g.n_detuning.unwrap_or(DEFAULT_N_DETUNING);
        grid.detuning_span = g.span_sigmas.unwrap_or(DEFAULT_SPAN_SIGMAS) * broadened_sigma;
        let bound = match g.dt_ns {
            Some(dt) => dt * NS,
            None => SimGrid::max_dt(grid.detuning_span).min(grid.dt),
        };
        if !(bound > 0.0) {
            return Err(CribError::config("grid.dt_ns", "must be > 0"));
        }
        grid.dt = bin / (bin / bound * (1.0 - 1e-12)).ceil();
        grid.validate(broadened_sigma)
            .map_err(|e| CribError::config("grid", e.to_string()))?;
        Ok(grid)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    doc.parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets a dotted `key=value` in a parsed document. Values are read as TOML
/// (numbers, booleans, arrays, `inf`); anything else becomes a string.
pub fn apply_override(table: &mut toml::Table, entry: &str) -> Result<()> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| CribError::config(entry, "override must look like key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CribError::config(key, "empty key segment"));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let child = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = child
            .as_table_mut()
            .ok_or_else(|| CribError::config(key, format!("`{part}` is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}
