use serde::{Deserialize, Serialize};
use voltvar_conic::{solve_socp, ConicProgram, SolveStatus};

use crate::convexify::{CompactModel, XRef};
use crate::distflow::{check_soc_exactness, power_flow, recover_voltages, DeviceState, FlowVariables, PerPhase};
use crate::error::ModelError;

/// Penalty per unit of squared-voltage band violation in the soft solve.
const SOFT_PENALTY: f64 = 1e3;
/// Voltage tolerance, p.u., when checking the physical solution.
const V_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecourseStatus {
    Feasible,
    /// No reactive dispatch keeps every voltage in band.
    Infeasible,
    /// The solver stopped without a verdict.
    Numerical,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VoltageCheck {
    pub overvoltage_buses: usize,
    pub undervoltage_buses: usize,
    /// Largest band violation, p.u.
    pub max_violation: f64,
    pub v_max: f64,
    pub v_min: f64,
}

impl VoltageCheck {
    pub fn new(model: &CompactModel, volts: &[PerPhase<f64>]) -> Self {
        let net = &model.network;
        let mut c = VoltageCheck { v_min: f64::INFINITY, ..Default::default() };
        for (j, bus) in net.buses.iter().enumerate() {
            if j == net.pcc {
                continue;
            }
            let (mut over, mut under) = (false, false);
            for &v in volts[j].iter().flatten() {
                c.v_max = c.v_max.max(v);
                c.v_min = c.v_min.min(v);
                c.max_violation = c.max_violation.max(v - bus.v_max).max(bus.v_min - v);
                over |= v > bus.v_max + V_TOL;
                under |= v < bus.v_min - V_TOL;
            }
            c.overvoltage_buses += over as usize;
            c.undervoltage_buses += under as usize;
        }
        c
    }

    pub fn in_band(&self) -> bool {
        self.overvoltage_buses == 0 && self.undervoltage_buses == 0
    }
}

/// Result of the fast-timescale reactive dispatch at fixed slow settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecourseOutcome {
    pub status: RecourseStatus,
    /// Loss of the realized operating point; `+∞` unless feasible.
    pub loss: f64,
    /// Optimal value of the relaxed recourse, when it solved.
    pub relaxed_loss: Option<f64>,
    pub y: Vec<f64>,
    /// Voltage magnitudes, p.u.
    pub voltages: Vec<PerPhase<f64>>,
    pub max_gap: f64,
    /// Whether `voltages` come from the exact power flow rather than the relaxation.
    pub physical: bool,
    pub check: VoltageCheck,
}

impl RecourseOutcome {
    pub fn is_feasible(&self) -> bool {
        self.status == RecourseStatus::Feasible
    }
}

/// Device settings implied by slow settings `x` and a recourse point `y`.
pub fn device_state(model: &CompactModel, x: &[f64], y: &[f64]) -> DeviceState {
    let net = &model.network;
    let lay = &model.layout;
    let mut st = DeviceState::idle(net);
    for b in 0..net.buses.len() {
        for f in 0..3 {
            st.q_g[b][f] = lay.q_g[b][f].map(|i| y[i]);
            st.q_c[b][f] = lay.q_c[b][f].map(|i| y[i]);
        }
    }
    for s in &model.x_domain.msc {
        st.msc_on[s.bus][s.phase.index()] = Some(x[s.beta] > 0.5);
    }
    for s in &model.x_domain.vr {
        let k = s.delta.iter().position(|&i| x[i] > 0.5).unwrap_or(0);
        st.tap[s.branch][s.phase.index()] = Some(s.taps[k]);
    }
    st
}

/// Reusable fast-timescale controller; keeps the widened-band model used
/// when the recourse is infeasible.
#[derive(Clone, Debug)]
pub struct FastController<'a> {
    pub model: &'a CompactModel,
    soft: CompactModel,
    pub gap_tol: f64,
}

impl<'a> FastController<'a> {
    pub fn new(model: &'a CompactModel, gap_tol: f64) -> Result<Self, ModelError> {
        Ok(Self { model, soft: model.with_voltage_band(0.5, 1.5)?, gap_tol })
    }

    pub fn solve(&self, x: &[f64], d: &[f64]) -> Result<RecourseOutcome, ModelError> {
        let m = self.model;
        m.x_domain.check(x)?;
        if d.len() != m.nd() {
            return Err(ModelError::ScenarioLength { expected: m.nd(), got: d.len() });
        }
        let sol = solve_socp(&m.recourse_program(x, d));
        match sol.status {
            SolveStatus::Optimal => {
                let y = sol.x;
                let flows = FlowVariables::from_y(&m.network, &m.layout, &y, d);
                let gaps = check_soc_exactness(&m.network, &flows, self.gap_tol);
                let relaxed = m.loss(&y);
                if gaps.max_gap <= self.gap_tol {
                    let voltages = recover_voltages(&flows)?;
                    let check = VoltageCheck::new(m, &voltages);
                    return Ok(RecourseOutcome {
                        status: RecourseStatus::Feasible,
                        loss: relaxed,
                        relaxed_loss: Some(relaxed),
                        y,
                        voltages,
                        max_gap: gaps.max_gap,
                        physical: false,
                        check,
                    });
                }
                // Inexact relaxation: judge the dispatch by the exact power flow.
                let mut out = self.physical(x, y, d, gaps.max_gap)?;
                out.relaxed_loss = Some(relaxed);
                if out.check.in_band() && out.status == RecourseStatus::Feasible {
                    log::debug!("relaxation gap {:.2e}; exact power flow is within band", gaps.max_gap);
                } else {
                    out.status = RecourseStatus::Infeasible;
                    out.loss = f64::INFINITY;
                }
                Ok(out)
            }
            SolveStatus::Infeasible | SolveStatus::Unbounded | SolveStatus::IterationLimit => {
                let verdict = if sol.status == SolveStatus::Infeasible {
                    RecourseStatus::Infeasible
                } else {
                    RecourseStatus::Numerical
                };
                let mut out = self.soft_solve(x, d)?;
                out.status = verdict;
                out.loss = f64::INFINITY;
                Ok(out)
            }
        }
    }

    /// Minimizes loss plus penalized band violation on the widened model.
    fn soft_solve(&self, x: &[f64], d: &[f64]) -> Result<RecourseOutcome, ModelError> {
        let net = &self.model.network;
        let mut p = ConicProgram::new();
        let y = self.soft.add_recourse(&mut p, XRef::Fixed(x), d, 1.0);
        for (j, bus) in net.buses.iter().enumerate() {
            if j == net.pcc {
                continue;
            }
            for &v in self.soft.layout.v[j].iter().flatten() {
                let up = p.add_var(0.0, f64::INFINITY, SOFT_PENALTY);
                let dn = p.add_var(0.0, f64::INFINITY, SOFT_PENALTY);
                p.add_le(vec![(y[v], 1.0), (up, -1.0)], bus.v_max * bus.v_max);
                p.add_ge(vec![(y[v], 1.0), (dn, 1.0)], bus.v_min * bus.v_min);
            }
        }
        let sol = solve_socp(&p);
        if !sol.is_optimal() {
            return Err(ModelError::Numerical(format!("soft recourse ended with status {:?}", sol.status)));
        }
        let yv: Vec<f64> = y.iter().map(|&i| sol.x[i]).collect();
        let flows = FlowVariables::from_y(net, &self.soft.layout, &yv, d);
        let gap = check_soc_exactness(net, &flows, self.gap_tol).max_gap;
        self.physical(x, yv, d, gap)
    }

    /// Runs the exact power flow with the devices of `(x, y)`.
    fn physical(&self, x: &[f64], y: Vec<f64>, d: &[f64], max_gap: f64) -> Result<RecourseOutcome, ModelError> {
        let m = self.model;
        let st = device_state(m, x, &y);
        let pf = match power_flow(&m.network, d, &st) {
            Ok(pf) => pf,
            Err(e) => {
                log::warn!("exact power flow failed: {e}");
                return Ok(RecourseOutcome {
                    status: RecourseStatus::Numerical,
                    loss: f64::INFINITY,
                    relaxed_loss: None,
                    y,
                    voltages: Vec::new(),
                    max_gap,
                    physical: true,
                    check: VoltageCheck::default(),
                });
            }
        };
        let voltages = recover_voltages(&pf)?;
        let check = VoltageCheck::new(m, &voltages);
        let feasible = check.in_band();
        Ok(RecourseOutcome {
            status: if feasible { RecourseStatus::Feasible } else { RecourseStatus::Infeasible },
            loss: if feasible { pf.loss(&m.network) } else { f64::INFINITY },
            relaxed_loss: None,
            y,
            voltages,
            max_gap,
            physical: true,
            check,
        })
    }
}

/// One-shot fast-timescale dispatch at slow settings `x` and injections `d`.
pub fn fast_control(model: &CompactModel, x: &[f64], d: &[f64]) -> Result<RecourseOutcome, ModelError> {
    FastController::new(model, 1e-5)?.solve(x, d)
}
