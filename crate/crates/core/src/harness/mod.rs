//! Experiment orchestration: sweeps, regime selection and report emission.

mod config;
mod report;
mod select;
mod sweep;

pub use config::{
    DatasetSection, DatasetSource, DefenseSection, ExperimentConfig, ModelSection, OneOrMany, SplitSizes,
    TheorySection,
};
pub use report::{
    curve_panels, emit_report, pcc_rows, read_results_csv, rerender, write_results_csv, write_selections_csv,
    PccRow, ReportBundle,
};
pub use select::{select_instance, select_table, Regime, RegimeSelection, EQUAL_PRIVACY_GAP, MIA_CEILING, NO_MATCH};
pub use sweep::{
    aggregate, confidences, run_one, run_seed, run_sweep, run_sweep_on, RunMetrics, RunRecord, Stat, SweepResult,
    TradeoffPoint,
};

use crate::error::Result;
use crate::theory::{theory_curve, uniform_grid, DpConstants, TheoryCurve};

/// Theoretical curve for the configured split sizes.
pub fn sweep_theory(config: &ExperimentConfig, input_dim: usize, class_count: usize) -> Result<TheoryCurve> {
    let t = &config.theory;
    let dp = DpConstants {
        delta: t.delta,
        vc_dim: t
            .vc_dim
            .unwrap_or_else(|| config.parameter_count(input_dim, class_count) as f64),
        ..DpConstants::default()
    };
    theory_curve(
        config.split.n_train as f64,
        config.split.n_reference as f64,
        t.epsilon_0,
        &uniform_grid(t.grid_points),
        &dp,
    )
}

/// Writes the full bundle for a finished sweep into `config.output_dir`.
pub fn report_sweep(config: &ExperimentConfig, result: &SweepResult) -> Result<ReportBundle> {
    let selections = select_table(&result.points);
    let curve = sweep_theory(config, result.input_dim, result.class_count)?;
    emit_report(&config.output_dir, &result.points, &selections, Some(&curve))
}
