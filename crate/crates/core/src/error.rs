use thiserror::Error;

use crate::netmodel::BusId;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("cannot read network: {0}")]
    Io(String),
    #[error("invalid network at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("topology error: {message}{}", cycle_suffix(.cycle))]
    Topology { message: String, cycle: Vec<BusId> },
    #[error("configuration error: {0}")]
    Config(String),
}

fn cycle_suffix(cycle: &[BusId]) -> String {
    if cycle.is_empty() {
        String::new()
    } else {
        let ids: Vec<String> = cycle.iter().map(|b| b.to_string()).collect();
        format!(" (cycle through buses {})", ids.join(" -> "))
    }
}

/// Errors raised while building optimization models from a network.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("scenario has {got} components, expected {expected}")]
    ScenarioLength { expected: usize, got: usize },
    #[error("missing scenario entry for bus {bus} phase {phase}: {what}")]
    MissingEntry { bus: BusId, phase: String, what: String },
    #[error("slow dispatch violates its domain: {0}")]
    Domain(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
}
