//! Pulse propagation through the broadened ensemble and echo bookkeeping.

mod echo;
mod solver;
mod trace;

pub use echo::{
    decay_scan, echo_efficiency, monochromatic_transmission, probe_pulse, DecayPoint, EchoWindow,
    ECHO_HALF_WIDTH_DURATIONS,
};
pub use solver::{simulate_crib, simulate_echo, CribRun};
pub use trace::{
    make_pulse, FieldTrace, PulseShape, PulseSpec, SimGrid, DEFAULT_N_DETUNING, DEFAULT_N_Z,
    DEFAULT_SPAN_SIGMAS, MAX_PHASE_STEP, MIN_SPAN_SIGMAS,
};
