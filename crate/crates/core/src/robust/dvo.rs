use serde::{Deserialize, Serialize};
use voltvar_conic::{solve_misocp, ConicProgram, SolveStats, SolveStatus};

use super::{add_tie_costs, diagnose_infeasibility, RobustError, RobustOptions};
use crate::convexify::{CompactModel, SlowDispatch, XRef};
use crate::distflow::{check_soc_exactness, FlowVariables, GapReport};

/// Deterministic dispatch at the forecast.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DvoSolution {
    pub dispatch: SlowDispatch,
    pub y: Vec<f64>,
    pub loss: f64,
    pub bound: f64,
    /// `false` when the node limit stopped the search.
    pub optimal: bool,
    pub gaps: GapReport,
    pub stats: SolveStats,
}

pub fn solve_dvo(model: &CompactModel, opts: &RobustOptions) -> Result<DvoSolution, RobustError> {
    let mut p = ConicProgram::new();
    let x = model.add_x_vars(&mut p);
    let tie = add_tie_costs(model, &mut p, &x);
    let y = model.add_recourse(&mut p, XRef::Vars(&x), &model.d0, 1.0);
    let sol = solve_misocp(&p, &opts.mip);
    match sol.status {
        SolveStatus::Optimal | SolveStatus::IterationLimit if sol.objective.is_finite() => {}
        SolveStatus::Infeasible => {
            let diagnosis = diagnose_infeasibility(model, std::slice::from_ref(&model.d0), opts)?;
            return Err(RobustError::Infeasible { iteration: 0, diagnosis });
        }
        other => return Err(RobustError::Solver(format!("deterministic dispatch ended with status {other:?}"))),
    }
    let xv = model.x_domain.round(&x.iter().map(|&i| sol.x[i]).collect::<Vec<_>>());
    let yv: Vec<f64> = y.iter().map(|&i| sol.x[i]).collect();
    let mut dispatch = model.x_domain.decode(&model.network, &xv);
    dispatch.aux = Some(model.aux_values(&yv));
    let flows = FlowVariables::from_y(&model.network, &model.layout, &yv, &model.d0);
    let gaps = check_soc_exactness(&model.network, &flows, opts.gap_tol);
    if gaps.flagged().next().is_some() {
        log::warn!("deterministic dispatch: relaxation gap {:.3e} above tolerance", gaps.max_gap);
    }
    Ok(DvoSolution {
        dispatch,
        loss: model.loss(&yv),
        y: yv,
        bound: (sol.bound - tie).max(0.0),
        optimal: sol.status == SolveStatus::Optimal,
        gaps,
        stats: sol.stats,
    })
}
