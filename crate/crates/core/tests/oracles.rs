//! Solver and detector checked against independent reference calculations.

use std::f64::consts::PI;

use crib_core::detection::{expected_counts_per_bin, simulate_histogram, DetectionModel};
use crib_core::propagation::{make_pulse, simulate_crib, FieldTrace, PulseSpec, SimGrid};
use crib_core::spectral::{SpectralProfile, StarkSchedule};
use num_complex::Complex64;

/// Energy transmitted by a linear medium with intensity transmission
/// `transmission(nu)`, computed by direct Fourier transform of the input.
fn spectral_oracle(
    input: &FieldTrace,
    transmission: impl Fn(f64) -> f64,
    nu_max: f64,
    n_nu: usize,
) -> f64 {
    let dnu = 2.0 * nu_max / n_nu as f64;
    let mut energy = 0.0;
    for k in 0..n_nu {
        let nu = -nu_max + (k as f64 + 0.5) * dnu;
        let mut amp = Complex64::new(0.0, 0.0);
        for (i, s) in input.samples.iter().enumerate() {
            let t = input.time(i);
            amp += s * Complex64::from_polar(1.0, 2.0 * PI * nu * t);
        }
        amp *= input.dt;
        energy += amp.norm_sqr() * transmission(nu) * dnu;
    }
    energy
}

#[test]
fn fixed_polarity_matches_linear_optics() {
    let sigma = 1e6 / 2.354_820_045_030_949;
    let b = 3.0;
    let sigma_b = b * sigma;
    let profile = SpectralProfile::gaussian_peak(0.5, 1e6, 0.0).unwrap();
    let pulse = PulseSpec::gaussian(200e-9, 1.0);
    let grid = SimGrid {
        n_z: 40,
        ..SimGrid::covering(sigma_b, 200e-9, -600e-9, 2400e-9, f64::INFINITY)
    };
    let input = make_pulse(&pulse, &grid).unwrap();
    let output = simulate_crib(&input, &profile, &StarkSchedule::fixed(b).unwrap(), &grid).unwrap();

    let d_b = 0.5 / b;
    let t = |nu: f64| (-d_b * (-nu * nu / (2.0 * sigma_b * sigma_b)).exp()).exp();
    let sub = FieldTrace::new(
        input.t0,
        input.dt * 4.0,
        input.samples.iter().step_by(4).copied().collect(),
    )
    .unwrap();
    let expected =
        spectral_oracle(&sub, t, 12e6, 1200) / spectral_oracle(&sub, |_| 1.0, 12e6, 1200);
    let got = output.photon_number() / input.photon_number();
    // Energy lost entirely to the line must equal the spectral overlap.
    assert!(
        ((1.0 - got) / (1.0 - expected) - 1.0).abs() < 0.01,
        "absorbed fraction {} vs {}",
        1.0 - got,
        1.0 - expected
    );
}

#[test]
fn background_only_is_uniform_attenuation() {
    let profile = SpectralProfile::gaussian_peak(0.0, 1e6, 1.6).unwrap();
    let pulse = PulseSpec::gaussian(200e-9, 3.0);
    let grid = SimGrid::covering(1.27e6, 200e-9, -600e-9, 900e-9, 2e-6);
    let input = make_pulse(&pulse, &grid).unwrap();
    let output = simulate_crib(
        &input,
        &profile,
        &StarkSchedule::new(3.0, 150e-9).unwrap(),
        &grid,
    )
    .unwrap();
    for (a, b) in input.samples.iter().zip(&output.samples) {
        assert!((b - a * (-0.8f64).exp()).norm() <= 1e-12 * a.norm().max(1e-300));
    }
}

#[test]
fn reference_scale_echo_counts() {
    // 10 photons stored at 2.5e-3 efficiency, counted over 4.8e6 trials.
    let dt = 1e-9;
    let mut samples = vec![Complex64::new(0.0, 0.0); 1000];
    let flux: f64 = 10.0 * 2.5e-3 / 200e-9;
    for s in &mut samples[400..600] {
        *s = Complex64::new(flux.sqrt(), 0.0);
    }
    let echo = FieldTrace::new(0.0, dt, samples).unwrap();
    let model = DetectionModel {
        dark_rate: 0.0,
        ..Default::default()
    };
    let mean: f64 = expected_counts_per_bin(&echo, &model)
        .unwrap()
        .iter()
        .sum::<f64>()
        * model.trials as f64;
    assert!((mean - 2.8e-4 * 4.8e6).abs() < 1e-6 * mean);
    let hist = simulate_histogram(&echo, &model).unwrap();
    let total = hist.total() as f64;
    assert!(
        (total - mean).abs() < 4.0 * mean.sqrt(),
        "{total} vs {mean}"
    );
}

#[test]
fn dark_only_histogram_subtracts_to_zero() {
    let trace = FieldTrace::zeros(0.0, 1e-9, 4000);
    let model = DetectionModel {
        bin_width: 200e-9,
        trials: 50_000_000,
        rng_seed: 3,
        ..Default::default()
    };
    let hist = simulate_histogram(&trace, &model).unwrap();
    let corrected = crib_core::detection::subtract_dark_counts(&hist, &model);
    let expected = 2e-6 * model.trials as f64;
    for c in corrected {
        assert!(c.abs() < 4.0 * expected.sqrt(), "{c}");
    }
}
