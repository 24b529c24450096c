use voltvar_conic::{solve_misocp, MipOptions, PrimalDualSolution};

use crate::convexify::{CompactModel, XRef};
use voltvar_conic::ConicProgram;

/// Master problem over the scenarios generated so far: shared `x`, one
/// recourse copy per scenario and an epigraph variable `η`.
#[derive(Clone, Debug)]
pub struct MasterProgram {
    pub program: ConicProgram,
    pub x: Vec<usize>,
    pub eta: usize,
    pub y: Vec<Vec<usize>>,
    /// Upper bound on the tie-breaking part of the objective.
    pub tie_slack: f64,
}

impl MasterProgram {
    /// Lower bound on `η` implied by a solve.
    pub fn eta_bound(&self, sol: &PrimalDualSolution) -> f64 {
        (sol.bound - self.tie_slack).max(0.0)
    }
}

pub fn build_master(model: &CompactModel, scenarios: &[Vec<f64>]) -> MasterProgram {
    let mut p = ConicProgram::new();
    let x = model.add_x_vars(&mut p);
    let eta = p.add_var(0.0, f64::INFINITY, 1.0);
    let tie_slack = super::add_tie_costs(model, &mut p, &x);
    let mut ys = Vec::with_capacity(scenarios.len());
    for d in scenarios {
        let y = model.add_recourse(&mut p, XRef::Vars(&x), d, 0.0);
        let mut terms: Vec<(usize, f64)> =
            model.b.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, c)| (y[i], *c)).collect();
        terms.push((eta, -1.0));
        p.add_le(terms, 0.0);
        ys.push(y);
    }
    MasterProgram { program: p, x, eta, y: ys, tie_slack }
}

/// Solves the master, trying `start` (a point of `X`) as the first incumbent.
pub fn solve_master(master: &MasterProgram, mip: &MipOptions, start: Option<&[f64]>) -> PrimalDualSolution {
    match start {
        Some(x0) => {
            let s: Vec<(usize, f64)> = master.x.iter().zip(x0).map(|(&i, &v)| (i, v)).collect();
            voltvar_conic::solve_misocp_with(
                &voltvar_conic::ClarabelBackend::new(mip.socp.clone()),
                &master.program,
                mip,
                &[s],
            )
        }
        None => solve_misocp(&master.program, mip),
    }
}
