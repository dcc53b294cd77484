//! Simulation studies: data-generating processes, ground truth, scenario
//! grids and summary tables.

pub mod dgp;
pub mod exec;
pub mod oracle;
pub mod scenario;
pub mod table;

pub use dgp::{gen_dataset, DgpSpec, Generator, Linear, OutcomeDgp};
pub use exec::Execution;
pub use oracle::{cache_key, oracle_truth, OracleTruth, CACHE_ENV, ORACLE_DRAWS};
pub use scenario::{
    estimate_once, run_scenario, scenario_model_spec, EstimatorId, Misspec, RepRecord, ScenarioConfig,
    ScenarioResult, SummaryRow,
};
pub use table::{
    display_values, emit_table, layout_mode, parse_table_csv, preset, run_grid, table1_scenario, table2_scenario,
    table3_scenario, GridConfig, Layout, ParsedTable, RenderedTable, DEFAULT_SIZES,
};
