//! Timing of one preparation cycle: optical pumping, a wait for the pump
//! light to die out, then a block of storage trials that has to finish
//! within the Zeeman-level lifetime.

use serde::{Deserialize, Serialize};

use crate::error::{CribError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceTiming {
    pub preparation_ms: f64,
    /// How long the stimulation light stays on after pumping.
    pub stimulation_tail_ms: f64,
    /// Delay from the end of pumping to the first trial.
    pub wait_before_storage_ms: f64,
    pub trial_period_us: f64,
    pub trials: u32,
    pub repetition_rate_hz: f64,
    pub zeeman_lifetime_ms: f64,
}

impl Default for SequenceTiming {
    fn default() -> Self {
        Self {
            preparation_ms: 120.0,
            stimulation_tail_ms: 23.5,
            wait_before_storage_ms: 86.0,
            trial_period_us: 5.0,
            trials: 8000,
            repetition_rate_hz: 3.0,
            zeeman_lifetime_ms: 130.0,
        }
    }
}

impl SequenceTiming {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("preparation_ms", self.preparation_ms),
            ("stimulation_tail_ms", self.stimulation_tail_ms),
            ("wait_before_storage_ms", self.wait_before_storage_ms),
            ("trial_period_us", self.trial_period_us),
            ("repetition_rate_hz", self.repetition_rate_hz),
            ("zeeman_lifetime_ms", self.zeeman_lifetime_ms),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(CribError::config(
                    format!("sequence.{name}"),
                    format!("must be a positive number, got {value}"),
                ));
            }
        }
        if self.trials == 0 {
            return Err(CribError::config("sequence.trials", "must be >= 1"));
        }
        Ok(())
    }

    pub fn storage_block_ms(&self) -> f64 {
        self.trials as f64 * self.trial_period_us * 1e-3
    }

    pub fn cycle_budget_ms(&self) -> f64 {
        1e3 / self.repetition_rate_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub storage_end_ms: f64,
    pub zeeman_slack_ms: f64,
    pub cycle_ms: f64,
    pub cycle_budget_ms: f64,
    pub cycle_slack_ms: f64,
    pub violations: Vec<String>,
}

impl SequenceReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_sequence(timing: &SequenceTiming) -> SequenceReport {
    let storage_end_ms = timing.wait_before_storage_ms + timing.storage_block_ms();
    let cycle_ms = timing.preparation_ms + storage_end_ms;
    let cycle_budget_ms = timing.cycle_budget_ms();
    let zeeman_slack_ms = timing.zeeman_lifetime_ms - storage_end_ms;
    let cycle_slack_ms = cycle_budget_ms - cycle_ms;

    let mut violations = Vec::new();
    if zeeman_slack_ms < 0.0 {
        violations.push(format!(
            "storage block ends at {storage_end_ms} ms, after the {} ms Zeeman lifetime",
            timing.zeeman_lifetime_ms
        ));
    }
    if cycle_slack_ms < 0.0 {
        violations.push(format!(
            "cycle takes {cycle_ms} ms but {} Hz repetition allows {cycle_budget_ms:.1} ms",
            timing.repetition_rate_hz
        ));
    }
    if timing.stimulation_tail_ms > timing.wait_before_storage_ms {
        violations.push(format!(
            "stimulation light ({} ms) is still on when storage begins ({} ms)",
            timing.stimulation_tail_ms, timing.wait_before_storage_ms
        ));
    }
    SequenceReport {
        storage_end_ms,
        zeeman_slack_ms,
        cycle_ms,
        cycle_budget_ms,
        cycle_slack_ms,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn default_timing_fits() {
        let report = validate_sequence(&SequenceTiming::default());
        assert!(report.ok(), "{:?}", report.violations);
        assert_relative_eq!(report.storage_end_ms, 126.0, max_relative = 1e-12);
        assert_relative_eq!(report.zeeman_slack_ms, 4.0, max_relative = 1e-9);
        assert_relative_eq!(report.cycle_ms, 246.0, max_relative = 1e-12);
        assert_relative_eq!(
            report.cycle_slack_ms,
            1e3 / 3.0 - 246.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn too_many_trials() {
        let report = validate_sequence(&SequenceTiming {
            trials: 10_000,
            ..Default::default()
        });
        assert_relative_eq!(report.storage_end_ms, 136.0, max_relative = 1e-12);
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn repetition_too_fast() {
        let report = validate_sequence(&SequenceTiming {
            repetition_rate_hz: 5.0,
            ..Default::default()
        });
        assert!(report.cycle_slack_ms < 0.0);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].contains("246"));
    }

    #[test]
    fn non_positive_fields_rejected() {
        let bad = SequenceTiming {
            trial_period_us: 0.0,
            ..Default::default()
        };
        match bad.validate() {
            Err(CribError::Config { field, .. }) => assert_eq!(field, "sequence.trial_period_us"),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn slack_monotone(
            trials in 1u32..20_000,
            extra_trials in 0u32..5_000,
            wait in 1.0f64..200.0,
            extra_wait in 0.0f64..50.0,
        ) {
            let base = SequenceTiming { trials, wait_before_storage_ms: wait, ..Default::default() };
            let r0 = validate_sequence(&base);
            for next in [
                SequenceTiming { trials: trials + extra_trials, ..base },
                SequenceTiming { wait_before_storage_ms: wait + extra_wait, ..base },
            ] {
                let r1 = validate_sequence(&next);
                prop_assert!(r1.zeeman_slack_ms <= r0.zeeman_slack_ms);
                prop_assert!(r1.cycle_slack_ms <= r0.cycle_slack_ms);
            }
        }
    }
}
