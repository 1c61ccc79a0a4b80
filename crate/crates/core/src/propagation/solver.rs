//! Linearized Maxwell-Bloch propagation through the Stark-broadened line.
//!
//! Retarded frame, forward propagation only, depth normalized to `z in [0, 1]`.
//! Each detuning class `j` carries a polarization amplitude
//!
//! ```text
//! dP_j/dt = -(1/T2 + 2 pi i f_j(t)) P_j + E(z, t)
//! dE/dz   = -sum_j w_j P_j,        w_j = d_b(nu_j) * h
//! ```
//!
//! with `d_b` the broadened peak depth and `h` the bin width. In the narrow
//! homogeneous limit a monochromatic field then loses `d_b(nu)/2` of its
//! amplitude per unit depth, i.e. intensity transmission `exp(-d_b(nu))`.
//!
//! An ion's transition frequency is its intrinsic offset `delta` (the
//! prepared peak, width `sigma`) plus a Stark shift `s` whose sign follows the
//! field polarity. Before the switch the class label is `nu = delta + s`,
//! which is distributed like the broadened peak. After the switch an ion sits
//! at `delta - s`; only the Stark part reverses. Post-switch the polarization
//! is split by linearity into
//!
//! * a driven part starting from zero, which sees the post-switch marginal
//!   (again the broadened Gaussian, relabelled `nu -> -nu`), and
//! * a free part carrying the pre-switch state, whose conditional spread over
//!   `delta` given `nu` averages to a Gaussian envelope in time. That envelope
//!   is what limits storage time for a finite prepared linewidth.
//!
//! Time stepping is classical RK4 written out for the scalar linear ODE, with
//! the field at half steps from four-point interpolation. Depth marching is
//! first-order upwind.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::trace::{FieldTrace, SimGrid};
use crate::error::{CribError, Result};
use crate::spectral::{SpectralProfile, StarkSchedule};

const CHUNK: usize = 64;
/// Free-part envelope below which the free polarization is dropped.
const ENVELOPE_CUTOFF: f64 = 1e-30;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Output of a switched run together with the unswitched reference.
#[derive(Debug, Clone)]
pub struct CribRun {
    pub output: FieldTrace,
    /// Same run with the ensemble's stored polarization discarded at the
    /// switch: transmitted pulse and post-switch absorption, no echo.
    pub reference: FieldTrace,
    /// Field radiated by the excitation stored at the switch, `output - reference`.
    pub echo: FieldTrace,
}

/// Propagates `input` through the prepared (unbroadened) `profile` with the
/// Stark `schedule` applied. The returned trace is the field at the exit face,
/// transmitted pulse and echo together, with the background loss included.
///
/// The schedule's switch time is counted from the intensity centroid of
/// `input`.
pub fn simulate_crib(
    input: &FieldTrace,
    profile: &SpectralProfile,
    schedule: &StarkSchedule,
    grid: &SimGrid,
) -> Result<FieldTrace> {
    propagate(input, profile, schedule, grid, true)
}

/// Runs the switched medium and the reference in which the stored
/// excitation is dropped at the switch. Their difference isolates the echo
/// even when it overlaps the tail of the transmitted pulse.
pub fn simulate_echo(
    input: &FieldTrace,
    profile: &SpectralProfile,
    schedule: &StarkSchedule,
    grid: &SimGrid,
) -> Result<CribRun> {
    let output = propagate(input, profile, schedule, grid, true)?;
    let reference = propagate(input, profile, schedule, grid, false)?;
    let echo = output.difference(&reference)?;
    Ok(CribRun {
        output,
        reference,
        echo,
    })
}

fn propagate(
    input: &FieldTrace,
    profile: &SpectralProfile,
    schedule: &StarkSchedule,
    grid: &SimGrid,
    keep_stored: bool,
) -> Result<FieldTrace> {
    let broadened = profile.apply_broadening(schedule.broadening_factor)?;
    grid.validate(broadened.sigma)?;
    if (input.dt - grid.dt).abs() > 1e-9 * grid.dt {
        return Err(CribError::invalid(format!(
            "input dt {:e} s does not match grid dt {:e} s",
            input.dt, grid.dt
        )));
    }
    let background = (-0.5 * profile.d_background).exp();
    let reference_time = match input.centroid() {
        Some(t) => t,
        None => return Ok(input.clone()),
    };
    if broadened.d_peak == 0.0 {
        return Ok(input.scaled(background));
    }

    let medium = Medium::new(profile, &broadened, schedule, grid, input.dt, keep_stored);
    let switch_at = reference_time + schedule.switch_time;

    let dz = 1.0 / grid.n_z as f64;
    let mut field = input.samples.clone();
    for depth in 0..grid.n_z {
        let source = medium.slice_source(&field, input.t0, switch_at);
        for (step, (e, s)) in field.iter_mut().zip(&source).enumerate() {
            *e -= dz * s;
            if !(e.re.is_finite() && e.im.is_finite()) {
                return Err(CribError::NumericalFailure { step, depth });
            }
        }
    }
    field.iter_mut().for_each(|e| *e *= background);
    FieldTrace::new(input.t0, input.dt, field)
}

/// Per-step RK4 propagator for `y' = lambda y + f(t)`:
/// `y1 = r y0 + a f(t0) + b f(t0 + h/2) + c f(t0 + h)`.
#[derive(Debug, Clone, Copy)]
struct Rk4Step {
    r: Complex64,
    a: Complex64,
    b: Complex64,
    c: Complex64,
}

impl Rk4Step {
    fn new(lambda: Complex64, h: f64) -> Self {
        let z = lambda * h;
        let z2 = z * z;
        let z3 = z2 * z;
        let r = 1.0 + z + z2 / 2.0 + z3 / 6.0 + z2 * z2 / 24.0;
        let h6 = h / 6.0;
        Self {
            r,
            a: h6 * (1.0 + z + z2 / 2.0 + z3 / 4.0),
            b: h6 * (4.0 + 2.0 * z + z2 / 2.0),
            c: Complex64::new(h6, 0.0),
        }
    }

    #[inline]
    fn apply(&self, y: Complex64, f0: Complex64, fm: Complex64, f1: Complex64) -> Complex64 {
        self.r * y + self.a * f0 + self.b * fm + self.c * f1
    }
}

struct Medium {
    weights: Vec<f64>,
    /// Lambda of each class before the switch, after it (driven), and for
    /// the free-running pre-switch state.
    lambda_pre: Vec<Complex64>,
    lambda_post: Vec<Complex64>,
    lambda_free: Vec<Complex64>,
    pre: Vec<Rk4Step>,
    post: Vec<Rk4Step>,
    free_step: Vec<Complex64>,
    /// `exp(-envelope_rate * u^2)` multiplies the free part `u` after the switch.
    envelope_rate: f64,
    dt: f64,
    keep_stored: bool,
}

impl Medium {
    fn new(
        prepared: &SpectralProfile,
        broadened: &SpectralProfile,
        schedule: &StarkSchedule,
        grid: &SimGrid,
        dt: f64,
        keep_stored: bool,
    ) -> Self {
        let n = grid.n_detuning;
        let h = grid.detuning_span / n as f64;
        let b = schedule.broadening_factor;
        let gamma = if grid.t2.is_finite() {
            1.0 / grid.t2
        } else {
            0.0
        };
        let center = prepared.center_detuning;
        // Conditional intrinsic offset given the pre-switch label nu:
        // mean nu / b^2, variance sigma^2 (b^2 - 1) / b^2. The post-switch
        // frequency 2 delta - nu then has mean (2/b^2 - 1) nu.
        let free_shift = 2.0 / (b * b) - 1.0;
        let cond_var = prepared.sigma * prepared.sigma * (b * b - 1.0) / (b * b);
        let envelope_rate = 8.0 * PI * PI * cond_var;

        let lambda = |f: f64| Complex64::new(-gamma, -2.0 * PI * f);
        let mut medium = Medium {
            weights: Vec::with_capacity(n),
            lambda_pre: Vec::with_capacity(n),
            lambda_post: Vec::with_capacity(n),
            lambda_free: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            post: Vec::with_capacity(n),
            free_step: Vec::with_capacity(n),
            envelope_rate,
            dt,
            keep_stored,
        };
        for j in 0..n {
            let nu = (j as f64 + 0.5) * h - 0.5 * grid.detuning_span;
            medium
                .weights
                .push(broadened.peak_depth_at(center + nu) * h);
            let (lp, lq, lf) = (
                lambda(center + nu),
                lambda(center - nu),
                lambda(center + free_shift * nu),
            );
            medium.lambda_pre.push(lp);
            medium.lambda_post.push(lq);
            medium.lambda_free.push(lf);
            medium.pre.push(Rk4Step::new(lp, dt));
            medium.post.push(Rk4Step::new(lq, dt));
            medium.free_step.push((lf * dt).exp());
        }
        medium
    }

    /// Polarization source `sum_j w_j P_j(t)` for one depth slice.
    fn slice_source(&self, field: &[Complex64], t0: f64, switch_at: f64) -> Vec<Complex64> {
        let n_t = field.len();
        let mid = midpoints(field);
        let switch = SwitchPoint::locate(t0, self.dt, n_t, switch_at);

        let partials: Vec<Vec<Complex64>> = (0..self.weights.len())
            .step_by(CHUNK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                let end = (start + CHUNK).min(self.weights.len());
                self.chunk_source(start..end, field, &mid, t0, &switch)
            })
            .collect();

        let mut source = vec![ZERO; n_t];
        for part in partials {
            for (s, p) in source.iter_mut().zip(part) {
                *s += p;
            }
        }
        source
    }

    fn chunk_source(
        &self,
        classes: std::ops::Range<usize>,
        field: &[Complex64],
        mid: &[Complex64],
        t0: f64,
        switch: &SwitchPoint,
    ) -> Vec<Complex64> {
        let n_t = field.len();
        let w = &self.weights[classes.clone()];
        let pre = &self.pre[classes.clone()];
        let post = &self.post[classes.clone()];
        let free_step = &self.free_step[classes.clone()];
        let mut driven = vec![ZERO; w.len()];
        let mut free = vec![ZERO; w.len()];
        let mut source = vec![ZERO; n_t];

        let last = n_t.saturating_sub(1);
        let pre_end = match *switch {
            SwitchPoint::Never => last,
            SwitchPoint::Before => 0,
            SwitchPoint::Within { step, .. } => step,
        };

        // Steps fully before the switch.
        for n in 0..pre_end {
            let (f0, fm, f1) = (field[n], mid[n], field[n + 1]);
            let mut acc = ZERO;
            for ((p, step), wj) in driven.iter_mut().zip(pre).zip(w) {
                *p = step.apply(*p, f0, fm, f1);
                acc += *p * wj;
            }
            source[n + 1] = acc;
        }

        let (switch_time, next) = match *switch {
            SwitchPoint::Never => return source,
            SwitchPoint::Before => (t0, 0),
            SwitchPoint::Within { step, time } => {
                // Split the step that contains the switch.
                let t_n = t0 + step as f64 * self.dt;
                let h1 = time - t_n;
                let h2 = self.dt - h1;
                let e_sw = interpolate(field, step, h1 / self.dt);
                if h1 > 0.0 {
                    let e_mid = interpolate(field, step, 0.5 * h1 / self.dt);
                    for (k, p) in driven.iter_mut().enumerate() {
                        let rk = Rk4Step::new(self.lambda_pre[classes.start + k], h1);
                        *p = rk.apply(*p, field[step], e_mid, e_sw);
                    }
                }
                if self.keep_stored {
                    free.copy_from_slice(&driven);
                }
                driven.iter_mut().for_each(|p| *p = ZERO);
                if h2 > 0.0 {
                    let e_mid = interpolate(field, step, (h1 + 0.5 * h2) / self.dt);
                    for (k, (p, f)) in driven.iter_mut().zip(free.iter_mut()).enumerate() {
                        let j = classes.start + k;
                        let rk = Rk4Step::new(self.lambda_post[j], h2);
                        *p = rk.apply(*p, e_sw, e_mid, field[step + 1]);
                        *f *= (self.lambda_free[j] * h2).exp();
                    }
                }
                let env = (-self.envelope_rate * h2 * h2).exp();
                source[step + 1] = w
                    .iter()
                    .zip(driven.iter().zip(&free))
                    .map(|(wj, (p, f))| (*p + env * *f) * wj)
                    .sum();
                (time, step + 1)
            }
        };

        let mut free_alive = free.iter().any(|f| f.norm_sqr() > 0.0);
        for n in next..last {
            let (f0, fm, f1) = (field[n], mid[n], field[n + 1]);
            let u = t0 + (n + 1) as f64 * self.dt - switch_time;
            let env = if free_alive {
                (-self.envelope_rate * u * u).exp()
            } else {
                0.0
            };
            if env < ENVELOPE_CUTOFF {
                free_alive = false;
            }
            let mut acc = ZERO;
            if free_alive {
                for (((p, f), (step, g)), wj) in driven
                    .iter_mut()
                    .zip(free.iter_mut())
                    .zip(post.iter().zip(free_step))
                    .zip(w)
                {
                    *p = step.apply(*p, f0, fm, f1);
                    *f *= g;
                    acc += (*p + env * *f) * wj;
                }
            } else {
                for ((p, step), wj) in driven.iter_mut().zip(post).zip(w) {
                    *p = step.apply(*p, f0, fm, f1);
                    acc += *p * wj;
                }
            }
            source[n + 1] = acc;
        }
        source
    }
}

#[derive(Debug, Clone, Copy)]
enum SwitchPoint {
    Never,
    /// Reversed from the first sample on.
    Before,
    /// Switch falls in `(t_step, t_step + dt]`.
    Within {
        step: usize,
        time: f64,
    },
}

impl SwitchPoint {
    fn locate(t0: f64, dt: f64, n_t: usize, switch_at: f64) -> Self {
        if !switch_at.is_finite() {
            return SwitchPoint::Never;
        }
        if switch_at <= t0 {
            return SwitchPoint::Before;
        }
        let pos = (switch_at - t0) / dt;
        let step = (pos.ceil() as usize).saturating_sub(1);
        if step + 1 >= n_t {
            SwitchPoint::Never
        } else {
            SwitchPoint::Within {
                step,
                time: switch_at,
            }
        }
    }
}

/// Field at half steps, four-point interpolation with linear ends.
fn midpoints(field: &[Complex64]) -> Vec<Complex64> {
    let n = field.len();
    (0..n.saturating_sub(1))
        .map(|i| {
            if i >= 1 && i + 2 < n {
                (9.0 * (field[i] + field[i + 1]) - field[i - 1] - field[i + 2]) / 16.0
            } else {
                0.5 * (field[i] + field[i + 1])
            }
        })
        .collect()
}

/// Cubic Lagrange interpolation at `step + frac`, `frac in [0, 1]`.
fn interpolate(field: &[Complex64], step: usize, frac: f64) -> Complex64 {
    let n = field.len();
    if step >= 1 && step + 2 < n {
        let x = frac;
        let l0 = -x * (x - 1.0) * (x - 2.0) / 6.0;
        let l1 = (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0;
        let l2 = -(x + 1.0) * x * (x - 2.0) / 2.0;
        let l3 = (x + 1.0) * x * (x - 1.0) / 6.0;
        field[step - 1] * l0 + field[step] * l1 + field[step + 1] * l2 + field[step + 2] * l3
    } else {
        field[step] * (1.0 - frac) + field[(step + 1).min(n - 1)] * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rk4_step_matches_stagewise_rk4() {
        let lambda = Complex64::new(-0.3, -2.0);
        let h = 0.05;
        let forcing = |t: f64| Complex64::new(t.cos(), 0.5 * t);
        let rhs = |t: f64, y: Complex64| lambda * y + forcing(t);
        let y0 = Complex64::new(0.7, -0.2);
        let t = 0.4;
        let k1 = rhs(t, y0);
        let k2 = rhs(t + h / 2.0, y0 + h / 2.0 * k1);
        let k3 = rhs(t + h / 2.0, y0 + h / 2.0 * k2);
        let k4 = rhs(t + h, y0 + h * k3);
        let expected = y0 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let got =
            Rk4Step::new(lambda, h).apply(y0, forcing(t), forcing(t + h / 2.0), forcing(t + h));
        assert_relative_eq!(got.re, expected.re, max_relative = 1e-14);
        assert_relative_eq!(got.im, expected.im, max_relative = 1e-14);
    }

    #[test]
    fn interpolation_exact_for_cubics() {
        let f = |x: f64| Complex64::new(x * x * x - 2.0 * x, 0.5 * x * x);
        let samples: Vec<Complex64> = (0..6).map(|i| f(i as f64)).collect();
        let got = interpolate(&samples, 2, 0.3);
        assert_relative_eq!(got.re, f(2.3).re, max_relative = 1e-12);
        assert_relative_eq!(got.im, f(2.3).im, max_relative = 1e-12);
        let mids = midpoints(&samples);
        assert_relative_eq!(mids[2].re, f(2.5).re, max_relative = 1e-12);
    }

    #[test]
    fn switch_location() {
        match SwitchPoint::locate(0.0, 1.0, 10, 3.5) {
            SwitchPoint::Within { step, .. } => assert_eq!(step, 3),
            other => panic!("{other:?}"),
        }
        match SwitchPoint::locate(0.0, 1.0, 10, 3.0) {
            SwitchPoint::Within { step, .. } => assert_eq!(step, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            SwitchPoint::locate(0.0, 1.0, 10, -1.0),
            SwitchPoint::Before
        ));
        assert!(matches!(
            SwitchPoint::locate(0.0, 1.0, 10, 20.0),
            SwitchPoint::Never
        ));
        assert!(matches!(
            SwitchPoint::locate(0.0, 1.0, 10, f64::INFINITY),
            SwitchPoint::Never
        ));
    }
}
