//! Configuration, command line, metric persistence and charts.

pub mod charts;
pub mod config;
pub mod metrics;
mod svg;

pub use charts::{default_selection, emit_charts, CHART_FILES};
pub use config::{parse_cli, Command, Config};
pub use metrics::{read_metric, write_metrics, Manifest, MetricRow, METRIC_FILES};
