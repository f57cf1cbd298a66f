//! Dynamic N-1 contingency screening: configuration, sweep orchestration,
//! risk reports, what-if queries and the JSON API.

pub mod config;
pub mod report;
pub mod runner;
pub mod server;
pub mod whatif;

pub use config::{ConfigError, Overrides, ScreeningConfig};
pub use report::{emit_report, parse_report, read_report, RiskReport, REPORT_SCHEMA_VERSION};
pub use runner::{run_screening, run_screening_on, RunError};
pub use whatif::{run_whatif, WhatIfRequest, WhatIfResponse};
