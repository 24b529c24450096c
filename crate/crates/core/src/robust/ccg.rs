use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::fast::FastController;
use super::master::{build_master, solve_master};
use super::subproblem::{solve_subproblem, SubproblemResult};
use super::{diagnose_infeasibility, BoxUncertainty, RobustError, RobustOptions};
use crate::convexify::{CompactModel, SlowDispatch};
use crate::error::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub lb: f64,
    pub ub: f64,
    pub master_value: f64,
    pub subproblem_value: f64,
    pub wall_ms: Option<f64>,
    pub worst_vertex_bits: String,
    pub certified: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CcgState {
    pub iteration: usize,
    pub scenarios: Vec<Vec<f64>>,
    pub incumbent: Option<Vec<f64>>,
    pub lb: f64,
    pub ub: f64,
    pub trace: Vec<TraceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcgResult {
    pub dispatch: SlowDispatch,
    /// Worst-case loss of `dispatch` (the final upper bound).
    pub objective: f64,
    pub worst_d: Vec<f64>,
    pub converged: bool,
    /// Every subproblem proved its vertex worst.
    pub certified: bool,
    pub state: CcgState,
    pub last_subproblem: SubproblemResult,
}

fn bits_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Column-and-constraint generation over the box `u`.
pub fn ccg_solve(model: &CompactModel, u: &BoxUncertainty, opts: &RobustOptions) -> Result<CcgResult, RobustError> {
    if u.d0.len() != model.nd() {
        return Err(ModelError::ScenarioLength { expected: model.nd(), got: u.d0.len() }.into());
    }
    let fast = FastController::new(model, opts.gap_tol)?;
    let mut st = CcgState { scenarios: vec![u.d0.clone()], lb: 0.0, ub: f64::INFINITY, ..Default::default() };
    let mut best: Option<(Vec<f64>, SubproblemResult)> = None;
    let mut last: Option<SubproblemResult> = None;
    let mut converged = false;
    let mut certified = true;

    while st.iteration < opts.max_iterations {
        st.iteration += 1;
        let t0 = Instant::now();
        let master = build_master(model, &st.scenarios);
        let sol = solve_master(&master, &opts.mip, st.incumbent.as_deref());
        if !sol.objective.is_finite() {
            let diagnosis = diagnose_infeasibility(model, &st.scenarios, opts)?;
            return Err(RobustError::Infeasible { iteration: st.iteration, diagnosis });
        }
        let x = model.x_domain.round(&master.x.iter().map(|&i| sol.x[i]).collect::<Vec<_>>());
        let master_value = sol.x[master.eta];
        st.lb = st.lb.max(master.eta_bound(&sol));

        let sub = solve_subproblem(model, &x, u, opts, &fast)?;
        certified &= sub.certified;
        if sub.value < st.ub {
            st.ub = sub.value;
            st.incumbent = Some(x.clone());
            best = Some((x.clone(), sub.clone()));
        }
        st.trace.push(TraceEntry {
            iteration: st.iteration,
            lb: st.lb,
            ub: st.ub,
            master_value,
            subproblem_value: sub.value,
            wall_ms: opts.record_timings.then(|| t0.elapsed().as_secs_f64() * 1e3),
            worst_vertex_bits: bits_string(&sub.bits),
            certified: sub.certified,
        });
        log::info!(
            "iteration {}: LB {:.6} UB {:.6} subproblem {:.6}",
            st.iteration,
            st.lb,
            st.ub,
            sub.value
        );
        let repeated = st.scenarios.iter().any(|s| s == &sub.d_star);
        let d_star = sub.d_star.clone();
        last = Some(sub);
        if st.ub - st.lb <= opts.epsilon {
            converged = true;
            break;
        }
        if repeated {
            log::warn!("worst-case scenario repeated at iteration {}; stopping with gap {:.3e}", st.iteration, st.ub - st.lb);
            break;
        }
        st.scenarios.push(d_star);
    }

    let last = last.expect("at least one iteration");
    let (x, sub) = best.unwrap_or_else(|| (model.x_domain.round(&vec![0.0; model.nx()]), last.clone()));
    if sub.value.is_finite() && !sub.recourse.is_feasible() {
        log::warn!(
            "relaxed recourse at the worst case is inexact (gap {:.2e}) and the power flow violates the band by {:.2e}",
            sub.recourse.max_gap,
            sub.recourse.check.max_violation
        );
    }
    let mut dispatch = model.x_domain.decode(&model.network, &x);
    if let Ok(r) = fast.solve(&x, &u.d0) {
        dispatch.aux = Some(model.aux_values(&r.y));
    }
    Ok(CcgResult {
        dispatch,
        objective: st.ub,
        worst_d: sub.d_star.clone(),
        converged,
        certified,
        state: st,
        last_subproblem: last,
    })
}

/// Writes `iteration,LB,UB,subproblem_value,wall_ms,worst_vertex_bits`.
pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], out: W) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| ModelError::Numerical(format!("writing trace: {e}"));
    w.write_record(["iteration", "LB", "UB", "subproblem_value", "wall_ms", "worst_vertex_bits"]).map_err(err)?;
    for t in trace {
        w.write_record([
            t.iteration.to_string(),
            t.lb.to_string(),
            t.ub.to_string(),
            t.subproblem_value.to_string(),
            t.wall_ms.map(|v| format!("{v:.1}")).unwrap_or_default(),
            t.worst_vertex_bits.clone(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| ModelError::Numerical(format!("writing trace: {e}")))?;
    Ok(())
}
