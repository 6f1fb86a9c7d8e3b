//! Correlations, best-per-budget selection, interval estimation and table reproduction.

mod budget;
mod external;
pub mod fixtures;
mod report;
mod stats;
pub mod svg;

pub use budget::{best_per_budget, interval_estimate};
pub use external::{
    grouped_trend, ingest_model_table, shape_distances, ExternalModelRow, IngestedTable, RejectedRow, ShapeDistance,
    TrendResult,
};
pub use fixtures::FixtureSet;
pub use report::{fixture_correlations, CorrelationReport, ReportEntry, INTERVAL_MIN_BUDGET};
pub use stats::{linear_fit, pearson};
