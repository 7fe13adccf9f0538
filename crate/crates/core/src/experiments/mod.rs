//! Measurement protocols run against any next-token predictor: perturbation
//! sensitivity, periodic continuation, continuity moduli, collapse and
//! isolation probes, and the softmax/ssmax comparison.

mod continuity;
mod interface;
mod isolation;
mod nts;
mod periodic;
mod ssmax;
mod tables;

pub use continuity::{
    collapse_probe, continuity_modulus, sim_measure, sim_measure_brute_force, CollapseResult,
    CollapseRow, ModulusCell, ModulusTable, SimMeasure,
};
pub use interface::{NextTokenModel, Prediction, StubModel, NTS_INSTRUCTION, PERIODIC_INSTRUCTION};
pub use isolation::{isolation_demo, IsolationReport, IsolationRow};
pub use nts::{
    nts_on, nts_positional, nts_zero, NtsPositionalRow, NtsResult, DEFAULT_GAMMAS,
    DEFAULT_LENGTH, DEFAULT_SAMPLES,
};
pub use periodic::{
    critical_period, expected_continuation, periodic_eval, periodic_grid, CriticalPeriodScan,
    PeriodicResult, DEFAULT_PERIOD_RANGE, DEFAULT_REPEATS, DEFAULT_STEPS,
};
pub use ssmax::{ssmax_compare, ssmax_pair, SsmaxComparison, SsmaxRow};
pub use tables::{fmt_f64, write_csv, CsvTable};
