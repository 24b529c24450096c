//! Monte-Carlo evaluation, volatility sweeps and the multi-period
//! simulation, plus their CSV/JSON writers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convexify::CompactModel;
use crate::error::ModelError;
use crate::robust::{ccg_solve, BoxUncertainty, FastController, RecourseStatus, RobustError, RobustOptions};
use crate::scenario::Scenario;

mod profile;
mod simulate;

pub use profile::{format_time, DayProfile};
pub use simulate::{multiperiod_simulate, write_timeline_csv, Policy, SimulationOptions, Timeline, TimelineEntry};

fn csv_err(e: csv::Error) -> ModelError {
    ModelError::Numerical(format!("writing CSV: {e}"))
}

/// `n` independent samples, uniform per component over the box.
pub fn sample_scenarios(u: &BoxUncertainty, n: usize, seed: u64) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let d = u
                .d_lo
                .iter()
                .zip(&u.d_hi)
                .map(|(&lo, &hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
                .collect();
            Scenario::new(format!("sample-{k}"), d)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub label: String,
    pub status: RecourseStatus,
    pub feasible: bool,
    /// Loss, p.u.; `None` for failed samples.
    pub loss: Option<f64>,
    /// Largest band violation, p.u.
    pub max_violation: f64,
    pub overvoltage_buses: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub samples: usize,
    pub seed: Option<u64>,
    pub failures: usize,
    pub failure_rate: f64,
    /// Mean loss over feasible samples, p.u.; `None` if every sample failed.
    pub expected_loss: Option<f64>,
    pub expected_loss_kw: Option<f64>,
    pub max_loss: Option<f64>,
    pub records: Vec<SampleRecord>,
}

/// Runs the fast-timescale dispatch at slow settings `x` for every scenario.
pub fn evaluate_dispatch(
    model: &CompactModel,
    x: &[f64],
    scenarios: &[Scenario],
    workers: usize,
) -> Result<EvaluationReport, ModelError> {
    model.x_domain.check(x)?;
    let fast = FastController::new(model, RobustOptions::default().gap_tol)?;
    let eval = |k: usize| -> Result<SampleRecord, ModelError> {
        let s = &scenarios[k];
        let r = fast.solve(x, &s.d)?;
        Ok(SampleRecord {
            index: k,
            label: s.label.clone(),
            status: r.status,
            feasible: r.is_feasible(),
            loss: r.is_feasible().then_some(r.loss),
            max_violation: r.check.max_violation.max(0.0),
            overvoltage_buses: r.check.overvoltage_buses,
        })
    };
    let workers = workers.max(1).min(scenarios.len().max(1));
    let mut records: Vec<SampleRecord> = if workers == 1 {
        (0..scenarios.len()).map(eval).collect::<Result<_, _>>()?
    } else {
        let eval = &eval;
        let chunks: Vec<Result<Vec<SampleRecord>, ModelError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| scope.spawn(move || (w..scenarios.len()).step_by(workers).map(eval).collect()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(scenarios.len());
        for c in chunks {
            all.extend(c?);
        }
        all
    };
    records.sort_by_key(|r| r.index);
    Ok(summarize(model, records, None))
}

fn summarize(model: &CompactModel, records: Vec<SampleRecord>, seed: Option<u64>) -> EvaluationReport {
    let n = records.len();
    let failures = records.iter().filter(|r| !r.feasible).count();
    let losses: Vec<f64> = records.iter().filter_map(|r| r.loss).collect();
    let expected = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
    EvaluationReport {
        samples: n,
        seed,
        failures,
        failure_rate: if n == 0 { 0.0 } else { failures as f64 / n as f64 },
        expected_loss: expected,
        expected_loss_kw: expected.map(|v| model.network.base.kw(v)),
        max_loss: losses.iter().copied().reduce(f64::max),
        records,
    }
}

impl EvaluationReport {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Writes one row per sample and policy.
pub fn write_report_csv<W: Write>(
    model: &CompactModel,
    reports: &[(&str, &EvaluationReport)],
    out: W,
) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["policy", "index", "label", "status", "feasible", "loss_pu", "loss_kw", "max_violation_pu", "overvoltage_buses"])
        .map_err(csv_err)?;
    for (policy, rep) in reports {
        for r in &rep.records {
            w.write_record([
                policy.to_string(),
                r.index.to_string(),
                r.label.clone(),
                format!("{:?}", r.status).to_lowercase(),
                r.feasible.to_string(),
                r.loss.map(|v| v.to_string()).unwrap_or_default(),
                r.loss.map(|v| model.network.base.kw(v).to_string()).unwrap_or_default(),
                r.max_violation.to_string(),
                r.overvoltage_buses.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| ModelError::Numerical(e.to_string()))
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub expected_loss_pu: Option<f64>,
    pub expected_loss_kw: Option<f64>,
    pub failure_rate: f64,
    pub failures: usize,
    /// Loss at the forecast (DVO) or worst-case objective (RVO), p.u.
    pub design_objective_pu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub network: String,
    pub volatility: f64,
    pub samples: usize,
    pub seed: u64,
    pub policies: Vec<PolicySummary>,
}

impl PolicySummary {
    pub fn new(policy: &str, rep: &EvaluationReport, design_objective_pu: f64) -> Self {
        Self {
            policy: policy.into(),
            expected_loss_pu: rep.expected_loss,
            expected_loss_kw: rep.expected_loss_kw,
            failure_rate: rep.failure_rate,
            failures: rep.failures,
            design_objective_pu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub volatility: f64,
    pub worst_case_loss: f64,
    pub worst_case_loss_kw: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs the robust dispatch for each volatility.
pub fn volatility_sweep(model: &CompactModel, nus: &[f64], opts: &RobustOptions) -> Result<Vec<SweepRow>, RobustError> {
    let mut rows = Vec::with_capacity(nus.len());
    for &nu in nus {
        if !(0.0..1.0).contains(&nu) {
            return Err(ModelError::Config(format!("volatility {nu} outside [0, 1)")).into());
        }
        let u = BoxUncertainty::from_volatility(&model.d0, nu)?;
        let r = ccg_solve(model, &u, opts)?;
        rows.push(SweepRow {
            volatility: nu,
            worst_case_loss: r.objective,
            worst_case_loss_kw: model.network.base.kw(r.objective),
            iterations: r.state.iteration,
            converged: r.converged,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["volatility", "worst_case_loss_pu", "worst_case_loss_kw", "iterations", "converged"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.volatility.to_string(),
            r.worst_case_loss.to_string(),
            r.worst_case_loss_kw.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| ModelError::Numerical(e.to_string()))
}
