//! Two-stage robust dispatch: the deterministic benchmark, the master and
//! worst-case subproblems, the column-and-constraint generation loop and the
//! fast-timescale recourse.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use voltvar_conic::{ConicProgram, MipOptions};

use crate::convexify::CompactModel;
use crate::error::ModelError;

mod ccg;
mod dvo;
mod fast;
mod master;
mod subproblem;

pub use ccg::{ccg_solve, write_trace_csv, CcgResult, CcgState, TraceEntry};
pub use dvo::{solve_dvo, DvoSolution};
pub use fast::{device_state, fast_control, FastController, RecourseOutcome, RecourseStatus, VoltageCheck};
pub use master::{build_master, solve_master, MasterProgram};
pub use subproblem::{
    dual_at, dualize_subproblem, linearize_bilinear, solve_subproblem, CertificateCheck, DualCertificate,
    DualSubproblem, SubproblemResult,
};

/// Box `[d_lo, d_hi]` around the forecast.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxUncertainty {
    pub d0: Vec<f64>,
    pub d_lo: Vec<f64>,
    pub d_hi: Vec<f64>,
}

impl BoxUncertainty {
    /// `d0 ± ν|d0|`, componentwise.
    pub fn from_volatility(d0: &[f64], nu: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&nu) {
            return Err(ModelError::Config(format!("volatility {nu} outside [0, 1]")));
        }
        let a: Vec<f64> = d0.iter().map(|v| v * (1.0 - nu)).collect();
        let b: Vec<f64> = d0.iter().map(|v| v * (1.0 + nu)).collect();
        Ok(Self {
            d0: d0.to_vec(),
            d_lo: a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect(),
            d_hi: a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect(),
        })
    }

    pub fn new(d0: Vec<f64>, d_lo: Vec<f64>, d_hi: Vec<f64>) -> Result<Self, ModelError> {
        if d_lo.len() != d0.len() || d_hi.len() != d0.len() {
            return Err(ModelError::ScenarioLength { expected: d0.len(), got: d_lo.len().min(d_hi.len()) });
        }
        if let Some(i) = (0..d0.len()).find(|&i| !(d_lo[i] <= d_hi[i])) {
            return Err(ModelError::Config(format!("empty uncertainty interval at component {i}")));
        }
        Ok(Self { d0, d_lo, d_hi })
    }

    pub fn width(&self, i: usize) -> f64 {
        self.d_hi[i] - self.d_lo[i]
    }

    /// Indices with a nonzero interval.
    pub fn uncertain(&self) -> Vec<usize> {
        (0..self.d0.len()).filter(|&i| self.width(i) > 0.0).collect()
    }

    /// Vertex selecting `d_hi` where `bits` is set, over [`Self::uncertain`].
    pub fn vertex(&self, bits: &[bool]) -> Vec<f64> {
        let mut d = self.d_lo.clone();
        for (&i, &b) in self.uncertain().iter().zip(bits) {
            if b {
                d[i] = self.d_hi[i];
            }
        }
        d
    }

    pub fn contains(&self, d: &[f64], tol: f64) -> bool {
        d.len() == self.d0.len() && d.iter().enumerate().all(|(i, v)| *v >= self.d_lo[i] - tol && *v <= self.d_hi[i] + tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubproblemMethod {
    /// Exact branch-and-bound on the linearized dual when the number of
    /// uncertain components is at most `exact_threshold`, otherwise
    /// [`SubproblemMethod::Heuristic`].
    Auto,
    /// Alternating climb over vertices; not certified.
    Heuristic,
    DualBnb,
    /// Every vertex of the box.
    Enumerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustOptions {
    pub mip: MipOptions,
    /// Stop when `UB − LB ≤ epsilon`.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub subproblem: SubproblemMethod,
    pub exact_threshold: usize,
    /// Node limit of the exact subproblem search.
    pub subproblem_node_limit: usize,
    /// Cap on every dual multiplier.
    pub dual_cap: f64,
    pub big_m: f64,
    /// Largest cone gap accepted as exact.
    pub gap_tol: f64,
    pub record_timings: bool,
}

impl Default for RobustOptions {
    fn default() -> Self {
        Self {
            mip: MipOptions::default(),
            epsilon: 1e-4,
            max_iterations: 30,
            subproblem: SubproblemMethod::Auto,
            exact_threshold: 8,
            subproblem_node_limit: 5000,
            dual_cap: 1e6,
            big_m: 1e6,
            gap_tol: 1e-5,
            record_timings: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundClass {
    Voltage,
    Current,
    Flow,
    DeviceReactive,
}

impl fmt::Display for BoundClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundClass::Voltage => "voltage limits",
            BoundClass::Current => "current limits",
            BoundClass::Flow => "branch flow limits",
            BoundClass::DeviceReactive => "DG/SVC reactive limits",
        })
    }
}

/// Which single bound class, once relaxed, makes the master feasible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityDiagnosis {
    pub binding: Vec<BoundClass>,
    pub scenarios: usize,
}

impl fmt::Display for InfeasibilityDiagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.binding.is_empty() {
            write!(f, "no single bound class explains it ({} scenario(s))", self.scenarios)
        } else {
            let names: Vec<String> = self.binding.iter().map(|b| b.to_string()).collect();
            write!(f, "relaxing {} restores feasibility ({} scenario(s))", names.join(" or "), self.scenarios)
        }
    }
}

#[derive(Debug, Error)]
pub enum RobustError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no slow-timescale dispatch is feasible at iteration {iteration}: {diagnosis}")]
    Infeasible { iteration: usize, diagnosis: InfeasibilityDiagnosis },
    #[error("solver failure: {0}")]
    Solver(String),
}

/// Copy of `model` with one bound class widened.
pub fn relax_bounds(model: &CompactModel, class: BoundClass) -> Result<CompactModel, ModelError> {
    let lay = &model.layout;
    let mut m = match class {
        BoundClass::Voltage => model.with_voltage_band(0.5, 1.5)?,
        _ => model.clone(),
    };
    let mut widen = |idx: usize, lo: f64, hi: f64| {
        m.y_lo[idx] = m.y_lo[idx].min(lo);
        m.y_hi[idx] = m.y_hi[idx].max(hi);
    };
    match class {
        BoundClass::Voltage => {}
        BoundClass::Current => {
            for per in &lay.l {
                for &i in per.iter().flatten() {
                    widen(i, 0.0, model.y_hi[i] * 100.0);
                }
            }
        }
        BoundClass::Flow => {
            for per in lay.p.iter().chain(&lay.q) {
                for &i in per.iter().flatten() {
                    widen(i, -1e3, 1e3);
                }
            }
        }
        BoundClass::DeviceReactive => {
            for per in lay.q_g.iter().chain(&lay.q_c) {
                for &i in per.iter().flatten() {
                    widen(i, -10.0, 10.0);
                }
            }
        }
    }
    Ok(m)
}

/// Re-solves the master for `scenarios` with each bound class relaxed in turn.
pub fn diagnose_infeasibility(
    model: &CompactModel,
    scenarios: &[Vec<f64>],
    opts: &RobustOptions,
) -> Result<InfeasibilityDiagnosis, ModelError> {
    let mut binding = Vec::new();
    let mut mip = opts.mip.clone();
    mip.node_limit = mip.node_limit.min(500);
    for class in [BoundClass::Voltage, BoundClass::Current, BoundClass::Flow, BoundClass::DeviceReactive] {
        let relaxed = relax_bounds(model, class)?;
        let master = build_master(&relaxed, scenarios);
        let sol = solve_master(&master, &mip, None);
        if sol.objective.is_finite() {
            binding.push(class);
        }
    }
    Ok(InfeasibilityDiagnosis { binding, scenarios: scenarios.len() })
}

/// Adds tiny costs that break ties towards capacitors off and taps near
/// unity; returns the largest total they can contribute.
pub(crate) fn add_tie_costs(model: &CompactModel, p: &mut ConicProgram, x: &[usize]) -> f64 {
    const TIE: f64 = 1e-9;
    let mut total = 0.0;
    for s in &model.x_domain.msc {
        p.objective[x[s.beta]] += TIE;
        total += TIE;
    }
    for s in &model.x_domain.vr {
        let unit = (0..s.taps.len())
            .min_by(|&a, &b| (s.taps[a] - 1.0).abs().total_cmp(&(s.taps[b] - 1.0).abs()))
            .unwrap_or(0);
        let mut worst: f64 = 0.0;
        for (k, &i) in s.delta.iter().enumerate() {
            let c = TIE * k.abs_diff(unit) as f64;
            p.objective[x[i]] += c;
            worst = worst.max(c);
        }
        total += worst;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_forecasts_keep_an_ordered_box() {
        let u = BoxUncertainty::from_volatility(&[1.0, -2.0, 0.0], 0.1).unwrap();
        assert_eq!(u.d_lo, vec![0.9, -2.2, 0.0]);
        assert_eq!(u.d_hi, vec![1.1, -1.8, 0.0]);
        assert_eq!(u.uncertain(), vec![0, 1]);
        assert_eq!(u.vertex(&[true, false]), vec![1.1, -2.2, 0.0]);
        assert!(BoxUncertainty::from_volatility(&[1.0], 1.5).is_err());
    }
}
