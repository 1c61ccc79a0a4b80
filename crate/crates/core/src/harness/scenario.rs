//! Named experiment pipelines.

use serde::Serialize;
use serde_json::{Map, Value};

use super::config::ScenarioConfig;
use super::sequence::validate_sequence;
use crate::analytics::{decay_time_from_sigma, fit_gaussian_decay, DecayFit};
use crate::detection::{
    calibrate_noise_floor, linearity_scan, simulate_histogram, snr, subtract_dark_counts,
    DetectionModel, EchoPipeline, Histogram, NoiseCalibration,
};
use crate::error::{CribError, Result};
use crate::propagation::{
    decay_scan, echo_efficiency, make_pulse, simulate_echo, CribRun, DecayPoint, EchoWindow,
    FieldTrace, PulseSpec, SimGrid,
};
use crate::spectral::{SpectralProfile, StarkSchedule};

const NS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    EchoHistogram,
    NoPeakControl,
    DecayScan,
    Linearity,
    FitDecay,
    SequenceCheck,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::EchoHistogram,
        Scenario::NoPeakControl,
        Scenario::DecayScan,
        Scenario::Linearity,
        Scenario::FitDecay,
        Scenario::SequenceCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::EchoHistogram => "echo-histogram",
            Scenario::NoPeakControl => "no-peak-control",
            Scenario::DecayScan => "decay-scan",
            Scenario::Linearity => "linearity",
            Scenario::FitDecay => "fit-decay",
            Scenario::SequenceCheck => "sequence-check",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = CribError;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| CribError::invalid(format!("unknown scenario `{s}`")))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Equal to the value measured in the reference experiment.
    Experiment,
    /// Differs from the experimental value.
    Override,
    /// Chosen by a calibration step inside this run.
    Calibrated,
    /// Computed from other inputs.
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProvenanceEntry {
    pub key: String,
    pub value: f64,
    pub unit: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment_value: Option<f64>,
    pub origin: Origin,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultBundle {
    pub scenario: Scenario,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<DetectionModel>,
    pub summary: Map<String, Value>,
    pub provenance: Vec<ProvenanceEntry>,
    pub tables: Vec<Table>,
    pub config: ScenarioConfig,
}

impl ResultBundle {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn summary_f64(&self, key: &str) -> Option<f64> {
        self.summary.get(key).and_then(Value::as_f64)
    }

    fn new(config: &ScenarioConfig, scenario: Scenario) -> Self {
        Self {
            scenario,
            seed: config.seed,
            trials: None,
            model: None,
            summary: Map::new(),
            provenance: input_provenance(config),
            tables: Vec::new(),
            config: config.clone(),
        }
    }

    fn put(&mut self, key: &str, value: impl Serialize) {
        // Every summary value is a plain number, string, bool or list.
        let v = serde_json::to_value(value).expect("summary value serializes");
        self.summary.insert(key.to_string(), v);
    }

    fn with_model(&mut self, model: &DetectionModel) {
        self.trials = Some(model.trials);
        self.model = Some(*model);
    }
}

fn entry(key: &str, value: f64, unit: &'static str, experiment: Option<f64>) -> ProvenanceEntry {
    let origin = match experiment {
        Some(x) if (x - value).abs() <= 1e-12 * x.abs().max(1.0) => Origin::Experiment,
        Some(_) => Origin::Override,
        None => Origin::Derived,
    };
    ProvenanceEntry {
        key: key.to_string(),
        value,
        unit,
        experiment_value: experiment,
        origin,
    }
}

fn input_provenance(config: &ScenarioConfig) -> Vec<ProvenanceEntry> {
    let p = &config.profile;
    let d = &config.detection;
    let s = &config.sequence;
    let mut out = vec![
        entry("profile.d_peak", p.d_peak, "", Some(0.5)),
        entry("profile.fwhm_hz", p.fwhm_hz, "Hz", Some(1e6)),
        entry("profile.d_background", p.d_background, "", Some(1.6)),
        entry("profile.t2_ns", p.t2_ns, "ns", Some(2000.0)),
    ];
    match (config.stark.factor, config.stark.voltage_v) {
        (_, Some(v)) => {
            out.push(entry("stark.voltage_v", v, "V", None));
            if let Ok(sched) = config.stark_schedule() {
                out.push(entry("stark.factor", sched.broadening_factor, "", None));
            }
        }
        (factor, None) => out.push(entry(
            "stark.factor",
            factor.unwrap_or(super::config::DEFAULT_FACTOR),
            "",
            Some(3.0),
        )),
    }
    out.extend([
        entry(
            "pulse.duration_ns",
            config.pulse.duration_ns,
            "ns",
            Some(200.0),
        ),
        entry("detection.transmission", d.transmission, "", Some(0.16)),
        entry(
            "detection.detector_efficiency",
            d.detector_efficiency,
            "",
            Some(0.07),
        ),
        entry("detection.dark_rate_hz", d.dark_rate_hz, "Hz", Some(10.0)),
        entry(
            "sequence.preparation_ms",
            s.preparation_ms,
            "ms",
            Some(120.0),
        ),
        entry(
            "sequence.stimulation_tail_ms",
            s.stimulation_tail_ms,
            "ms",
            Some(23.5),
        ),
        entry(
            "sequence.wait_before_storage_ms",
            s.wait_before_storage_ms,
            "ms",
            Some(86.0),
        ),
        entry(
            "sequence.trial_period_us",
            s.trial_period_us,
            "us",
            Some(5.0),
        ),
        entry("sequence.trials", s.trials as f64, "", Some(8000.0)),
        entry(
            "sequence.repetition_rate_hz",
            s.repetition_rate_hz,
            "Hz",
            Some(3.0),
        ),
        entry(
            "sequence.zeeman_lifetime_ms",
            s.zeeman_lifetime_ms,
            "ms",
            Some(130.0),
        ),
    ]);
    out
}

/// Runs `scenario`. Config problems surface as config errors; failures
/// further down are wrapped with the scenario name.
pub fn run_scenario(config: &ScenarioConfig, scenario: Scenario) -> Result<ResultBundle> {
    config.validate()?;
    let result = match scenario {
        Scenario::EchoHistogram => echo_histogram(config),
        Scenario::NoPeakControl => no_peak_control(config),
        Scenario::DecayScan => decay(config, None),
        Scenario::FitDecay => fit_decay(config),
        Scenario::Linearity => linearity(config),
        Scenario::SequenceCheck => Ok(sequence_check(config)),
    };
    result.map_err(|e| match e {
        CribError::Config { .. } => e,
        other => CribError::Scenario {
            scenario: scenario.name().to_string(),
            source: Box::new(other),
        },
    })
}

struct Setup {
    profile: SpectralProfile,
    schedule: StarkSchedule,
    pulse: PulseSpec,
    grid: SimGrid,
    input: FieldTrace,
}

impl Setup {
    fn new(config: &ScenarioConfig, switch_times: &[f64]) -> Result<Self> {
        let profile = config.spectral_profile()?;
        let schedule = config.stark_schedule()?;
        let pulse = config.pulse_spec()?;
        let grid = config.sim_grid(profile.sigma * schedule.broadening_factor, switch_times)?;
        let input = make_pulse(&pulse, &grid)?;
        Ok(Self {
            profile,
            schedule,
            pulse,
            grid,
            input,
        })
    }

    fn run(&self, profile: &SpectralProfile) -> Result<CribRun> {
        simulate_echo(&self.input, profile, &self.schedule, &self.grid)
    }

    fn window(&self) -> EchoWindow {
        EchoWindow::for_pulse(&self.pulse, &self.schedule)
    }

    /// Bins entirely before the polarity flip, where the echo is zero.
    fn noise_window(&self, bin_width: f64) -> (f64, f64) {
        let switch = self.pulse.center_time + self.schedule.switch_time;
        (self.grid.t_start, switch - 0.5 * bin_width)
    }
}

/// Signal window of `width` centered on the echo, or on its nominal time
/// when the echo carries no energy.
fn signal_window(echo: &FieldTrace, window: &EchoWindow, width: f64) -> (f64, f64) {
    let center = echo.centroid().unwrap_or(window.center);
    (center - 0.5 * width, center + 0.5 * width)
}

/// Fills in the noise floor, calibrating it on `echo` (the echo for
/// `nbar` input photons) when the config leaves it open.
fn resolve_noise(
    config: &ScenarioConfig,
    bundle: &mut ResultBundle,
    base: DetectionModel,
    echo: &FieldTrace,
    nbar: f64,
    window: (f64, f64),
) -> Result<DetectionModel> {
    let d = &config.detection;
    let reference = echo.scaled((d.calibration_nbar / nbar).sqrt());
    let cal: NoiseCalibration = calibrate_noise_floor(&reference, &base, window, d.target_snr)?;
    bundle.put("dark_only_snr", cal.dark_only_snr);
    let rate = match d.noise_floor_rate_hz {
        Some(rate) => {
            bundle.put("noise_floor_calibrated", false);
            rate
        }
        None => {
            bundle.put("noise_floor_calibrated", true);
            bundle.put("noise_floor_attainable", cal.attainable);
            bundle.provenance.push(ProvenanceEntry {
                key: "detection.noise_floor_rate_hz".into(),
                value: cal.noise_floor_rate,
                unit: "Hz",
                experiment_value: None,
                origin: Origin::Calibrated,
            });
            cal.noise_floor_rate
        }
    };
    bundle.put("noise_floor_rate_hz", rate);
    bundle.put("signal_window_ns", [window.0 / NS, window.1 / NS]);
    Ok(DetectionModel {
        noise_floor_rate: rate,
        ..base
    })
}

fn histogram_rows(table: &mut Table, hists: &[&Histogram]) {
    let n = hists.iter().map(|h| h.counts.len()).min().unwrap_or(0);
    for i in 0..n {
        let mut row = vec![hists[0].bin_time(i) / NS];
        row.extend(hists.iter().map(|h| h.counts[i] as f64));
        table.rows.push(row);
    }
}

fn window_count(hist: &Histogram, start: f64, end: f64) -> (f64, usize) {
    let bins = hist.bins_in(start, end);
    let n = bins.len();
    (hist.counts[bins].iter().sum::<u64>() as f64, n)
}

fn echo_histogram(config: &ScenarioConfig) -> Result<ResultBundle> {
    let mut bundle = ResultBundle::new(config, Scenario::EchoHistogram);
    let setup = Setup::new(config, &[config.stark.switch_time_ns * NS])?;
    let run = setup.run(&setup.profile)?;
    let window = setup.window();
    let efficiency = echo_efficiency(&run.echo, &setup.input, &window)?;
    let centroid = run.echo.centroid_between(window.start(), window.end())?;

    let base = config.detection_model()?;
    let sig = signal_window(&run.echo, &window, config.detection.signal_window_ns * NS);
    let model = resolve_noise(
        config,
        &mut bundle,
        base,
        &run.echo,
        setup.pulse.mean_photons,
        sig,
    )?;
    bundle.with_model(&model);

    let hist = simulate_histogram(&run.output, &model)?;
    let echo_only = simulate_histogram(
        &run.echo,
        &DetectionModel {
            rng_seed: model.rng_seed.wrapping_add(1),
            ..model
        },
    )?;
    let echo_snr = snr(&echo_only, sig, setup.noise_window(model.bin_width)).unwrap_or(f64::NAN);

    let mut table = Table::new("histogram", &["bin_start_ns", "counts"]);
    histogram_rows(&mut table, &[&hist]);
    let mut corrected = Table::new("dark_subtracted", &["bin_start_ns", "counts"]);
    for (i, c) in subtract_dark_counts(&hist, &model).into_iter().enumerate() {
        corrected.rows.push(vec![hist.bin_time(i) / NS, c]);
    }
    bundle.tables = vec![table, corrected];

    let n_in = setup.input.photon_number();
    bundle.put("mean_photons", setup.pulse.mean_photons);
    bundle.put("efficiency", efficiency);
    bundle.put("experiment_efficiency", 1.5e-3);
    bundle.put("storage_time_ns", setup.schedule.storage_time() / NS);
    bundle.put(
        "echo_centroid_ns",
        centroid.map(|c| (c - setup.pulse.center_time) / NS),
    );
    bundle.put("transmitted_fraction", run.reference.photon_number() / n_in);
    bundle.put(
        "expected_echo_counts",
        efficiency * n_in * model.photon_detection_probability() * model.trials as f64,
    );
    bundle.put("echo_snr", echo_snr);
    bundle.put("bin_width_ns", model.bin_width / NS);
    Ok(bundle)
}

fn no_peak_control(config: &ScenarioConfig) -> Result<ResultBundle> {
    let mut bundle = ResultBundle::new(config, Scenario::NoPeakControl);
    let setup = Setup::new(config, &[config.stark.switch_time_ns * NS])?;
    let with_peak = setup.run(&setup.profile)?;
    let without_peak = setup.run(&setup.profile.without_peak())?;
    let window = setup.window();
    let eta_with = echo_efficiency(&with_peak.echo, &setup.input, &window)?;
    let eta_without = echo_efficiency(&without_peak.echo, &setup.input, &window)?;

    let base = config.detection_model()?;
    let sig = signal_window(
        &with_peak.echo,
        &window,
        config.detection.signal_window_ns * NS,
    );
    let model = resolve_noise(
        config,
        &mut bundle,
        base,
        &with_peak.echo,
        setup.pulse.mean_photons,
        sig,
    )?;
    bundle.with_model(&model);

    let full_with = simulate_histogram(&with_peak.output, &model)?;
    let full_without = simulate_histogram(&without_peak.output, &model)?;
    let mut table = Table::new(
        "histogram",
        &["bin_start_ns", "counts_with_peak", "counts_without_peak"],
    );
    histogram_rows(&mut table, &[&full_with, &full_without]);
    bundle.tables = vec![table];

    // Echo-window counts from the switch-induced field plus background.
    let seeded = |k: u64| DetectionModel {
        rng_seed: model.rng_seed.wrapping_add(k),
        ..model
    };
    let echo_with = simulate_histogram(&with_peak.echo, &seeded(1))?;
    let echo_without = simulate_histogram(&without_peak.echo, &seeded(2))?;
    let (c_with, n_bins) = window_count(&echo_with, window.start(), window.end());
    let (c_without, _) = window_count(&echo_without, window.start(), window.end());
    let background = model.background_per_bin() * n_bins as f64 * model.trials as f64;
    let z = if background > 0.0 {
        (c_without - background) / background.sqrt()
    } else if c_without == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };

    bundle.put("efficiency_with_peak", eta_with);
    bundle.put("efficiency_without_peak", eta_without);
    bundle.put(
        "energy_ratio",
        if eta_with > 0.0 {
            eta_without / eta_with
        } else {
            f64::NAN
        },
    );
    bundle.put("echo_window_ns", [window.start() / NS, window.end() / NS]);
    bundle.put("echo_window_counts_with_peak", c_with);
    bundle.put("echo_window_counts_without_peak", c_without);
    bundle.put("expected_background_counts", background);
    bundle.put("background_z_score", z);
    bundle.put("consistent_with_background", z.abs() <= 3.0);
    Ok(bundle)
}

fn decay_table(points: &[(f64, f64)], fit: &DecayFit) -> Table {
    let mut table = Table::new("decay", &["storage_time_ns", "efficiency", "fit_value"]);
    for &(t, eta) in points {
        table.rows.push(vec![t / NS, eta, fit.value_at(t)]);
    }
    table
}

fn put_fit(bundle: &mut ResultBundle, fit: &DecayFit, excluded_first: bool) -> Result<()> {
    bundle.put("fit_amplitude", fit.amplitude);
    bundle.put("decay_time_ns", fit.decay_time.map(|t| t / NS));
    bundle.put("fit_degenerate", fit.is_degenerate());
    bundle.put("fit_points_used", fit.points_used);
    bundle.put("fit_residual_norm", fit.residual_norm);
    bundle.put("excluded_first_point", excluded_first);
    bundle.put("experiment_decay_time_ns", 370.0);
    let sigma = bundle.config.spectral_profile()?.sigma;
    bundle.put("analytic_decay_time_ns", decay_time_from_sigma(sigma)? / NS);
    Ok(())
}

fn fit_points(config: &ScenarioConfig, points: &[(f64, f64)]) -> Result<DecayFit> {
    let skip = usize::from(config.decay.exclude_first_point);
    fit_gaussian_decay(&points[skip.min(points.len())..])
}

fn decay(config: &ScenarioConfig, kind: Option<Scenario>) -> Result<ResultBundle> {
    let mut bundle = ResultBundle::new(config, kind.unwrap_or(Scenario::DecayScan));
    let switch_times: Vec<f64> = config
        .decay
        .storage_times_ns
        .iter()
        .map(|t| 0.5 * t * NS)
        .collect();
    let setup = Setup::new(config, &switch_times)?;
    let scan: Vec<DecayPoint> = decay_scan(
        &setup.pulse,
        &setup.profile,
        setup.schedule.broadening_factor,
        &switch_times,
        &setup.grid,
    )?;
    let points: Vec<(f64, f64)> = scan
        .iter()
        .map(|p| (p.storage_time, p.efficiency))
        .collect();
    let fit = fit_points(config, &points)?;
    let mut timing = Table::new("echo_timing", &["storage_time_ns", "echo_centroid_ns"]);
    for p in &scan {
        timing.rows.push(vec![
            p.storage_time / NS,
            p.echo_centroid.map_or(f64::NAN, |c| c / NS),
        ]);
    }
    bundle.tables = vec![decay_table(&points, &fit), timing];
    put_fit(&mut bundle, &fit, config.decay.exclude_first_point)?;
    bundle.put("dt_ns", setup.grid.dt / NS);
    Ok(bundle)
}

/// Reads `storage_time_ns,efficiency` columns from a CSV file with a header.
pub fn read_decay_points(path: &std::path::Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|source| CribError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |msg: String| CribError::config("decay.points_file", msg);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("file is empty".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| bad(format!("missing column `{name}`")))
    };
    let (ti, ei) = (col("storage_time_ns")?, col("efficiency")?);
    lines
        .enumerate()
        .map(|(row, line)| {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let num = |i: usize| {
                cells
                    .get(i)
                    .and_then(|c| c.parse::<f64>().ok())
                    .ok_or_else(|| bad(format!("row {}: cannot read column {i}", row + 1)))
            };
            Ok((num(ti)? * NS, num(ei)?))
        })
        .collect()
}

fn fit_decay(config: &ScenarioConfig) -> Result<ResultBundle> {
    let Some(path) = &config.decay.points_file else {
        return decay(config, Some(Scenario::FitDecay));
    };
    let mut bundle = ResultBundle::new(config, Scenario::FitDecay);
    let points = read_decay_points(path)?;
    let fit = fit_points(config, &points)?;
    bundle.tables = vec![decay_table(&points, &fit)];
    put_fit(&mut bundle, &fit, config.decay.exclude_first_point)?;
    Ok(bundle)
}

fn linearity(config: &ScenarioConfig) -> Result<ResultBundle> {
    let mut bundle = ResultBundle::new(config, Scenario::Linearity);
    let setup = Setup::new(config, &[config.stark.switch_time_ns * NS])?;
    let d = &config.detection;
    let trials = match d.trials {
        Some(t) => t,
        None => config.trials_for(config.linearity.integration_time_s)?,
    };
    let base = DetectionModel {
        trials,
        ..config.detection_model()?
    };
    let window = setup.window();
    let mut pipeline = EchoPipeline {
        pulse: setup.pulse,
        profile: setup.profile,
        schedule: setup.schedule,
        grid: setup.grid,
        model: base,
        signal_window: (0.0, 0.0),
        noise_window: setup.noise_window(base.bin_width),
    };
    let calibration = pipeline.echo_trace(d.calibration_nbar)?;
    pipeline.signal_window = signal_window(&calibration, &window, d.signal_window_ns * NS);
    pipeline.model = resolve_noise(
        config,
        &mut bundle,
        base,
        &calibration,
        d.calibration_nbar,
        pipeline.signal_window,
    )?;
    bundle.with_model(&pipeline.model);

    let scan = linearity_scan(&config.linearity.nbar_values, &pipeline)?;
    let mut table = Table::new(
        "linearity",
        &[
            "nbar",
            "echo_counts",
            "snr",
            "noise_estimate",
            "expected_background",
            "expected_echo",
        ],
    );
    for r in &scan.rows {
        table.rows.push(vec![
            r.nbar,
            r.echo_counts,
            r.snr,
            r.noise_estimate,
            r.expected_background,
            r.expected_echo,
        ]);
    }
    bundle.tables = vec![table];
    bundle.put("counts_slope", scan.counts_slope);
    bundle.put("snr_slope", scan.snr_slope);
    let first = scan.rows.first().map(|r| r.expected_background);
    bundle.put(
        "background_independent_of_nbar",
        scan.rows
            .iter()
            .all(|r| Some(r.expected_background) == first),
    );
    bundle.put(
        "noise_window_ns",
        [pipeline.noise_window.0 / NS, pipeline.noise_window.1 / NS],
    );
    bundle.put("experiment_snr_at_0_6", 3.0);
    Ok(bundle)
}

fn sequence_check(config: &ScenarioConfig) -> ResultBundle {
    let mut bundle = ResultBundle::new(config, Scenario::SequenceCheck);
    let report = validate_sequence(&config.sequence);
    let mut table = Table::new(
        "sequence",
        &[
            "storage_end_ms",
            "zeeman_slack_ms",
            "cycle_ms",
            "cycle_budget_ms",
            "cycle_slack_ms",
        ],
    );
    table.rows.push(vec![
        report.storage_end_ms,
        report.zeeman_slack_ms,
        report.cycle_ms,
        report.cycle_budget_ms,
        report.cycle_slack_ms,
    ]);
    bundle.tables = vec![table];
    bundle.put("ok", report.ok());
    bundle.put("violations", &report.violations);
    bundle.put("storage_end_ms", report.storage_end_ms);
    bundle.put("zeeman_slack_ms", report.zeeman_slack_ms);
    bundle.put("cycle_slack_ms", report.cycle_slack_ms);
    bundle
}
