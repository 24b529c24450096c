use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::profile::{format_time, DayProfile};
use crate::convexify::CompactModel;
use crate::error::ModelError;
use crate::robust::{
    ccg_solve, solve_dvo, BoxUncertainty, CcgState, FastController, RobustError, RobustOptions,
};
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Policy {
    Dvo,
    Rvo,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Dvo => "DVO",
            Policy::Rvo => "RVO",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub slow_minutes: u32,
    pub fast_minutes: u32,
    /// Build every robust box from the extremes of the whole horizon rather
    /// than of the upcoming slow interval.
    pub whole_horizon: bool,
    pub robust: RobustOptions,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { slow_minutes: 120, fast_minutes: 15, whole_horizon: false, robust: RobustOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub tick: usize,
    pub time: String,
    pub policy: Policy,
    pub overvoltage_count: usize,
    pub feasible: bool,
    /// Loss, p.u.; `None` when the tick failed.
    pub loss: Option<f64>,
    /// The slow settings were recomputed at this tick.
    pub slow_update: bool,
    /// The slow solve failed and the previous settings were kept.
    pub degraded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub policy: Policy,
    pub entries: Vec<TimelineEntry>,
    /// Final C&CG state of every robust slow step, in time order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slow_solves: Vec<CcgState>,
}

impl Timeline {
    pub fn max_overvoltage(&self) -> usize {
        self.entries.iter().map(|e| e.overvoltage_count).max().unwrap_or(0)
    }

    pub fn violating_ticks(&self) -> usize {
        self.entries.iter().filter(|e| e.overvoltage_count > 0 || !e.feasible).count()
    }
}

/// Runs slow and fast control over `profile`, scaling loads and DG output of
/// `model.d0` by the profile multipliers.
pub fn multiperiod_simulate(
    model: &CompactModel,
    profile: &DayProfile,
    policy: Policy,
    opts: &SimulationOptions,
) -> Result<Timeline, RobustError> {
    let (slow, fast) = (opts.slow_minutes, opts.fast_minutes);
    if fast == 0 || slow % fast != 0 {
        return Err(ModelError::Config(format!("slow interval {slow} min is not a multiple of fast interval {fast} min")).into());
    }
    let step = profile.step();
    if profile.len() > 1 && fast % step != 0 {
        return Err(ModelError::Config(format!("fast interval {fast} min is not a multiple of the profile step {step} min")).into());
    }
    let t0 = profile.minutes[0];
    let ticks: Vec<usize> = (0..profile.len()).filter(|&k| (profile.minutes[k] - t0).is_multiple_of(fast)).collect();
    let realized: Vec<Vec<f64>> = ticks
        .iter()
        .map(|&k| Scenario::scaled("", &model.components, &model.d0, profile.load_mult[k], profile.pv_mult[k]).d)
        .collect();
    let controller = FastController::new(model, opts.robust.gap_tol)?;

    let mut x: Option<Vec<f64>> = None;
    let mut slow_solves = Vec::new();
    let mut entries = Vec::with_capacity(ticks.len());
    for (tick, &k) in ticks.iter().enumerate() {
        let m = profile.minutes[k];
        let slow_update = (m - t0).is_multiple_of(slow);
        let mut degraded = false;
        if slow_update {
            let window: Vec<usize> = (0..ticks.len())
                .filter(|&j| {
                    let mj = profile.minutes[ticks[j]];
                    opts.whole_horizon || (mj >= m && mj < m + slow)
                })
                .collect();
            match slow_dispatch(model, policy, &realized[tick], &window, &realized, &opts.robust) {
                Ok((nx, state)) => {
                    x = Some(nx);
                    slow_solves.extend(state);
                }
                Err(e) => {
                    degraded = true;
                    log::warn!("{policy} slow step at {} failed ({e}); keeping previous settings", format_time(m));
                    if x.is_none() {
                        x = Some(slow_dispatch(model, Policy::Dvo, &realized[tick], &[tick], &realized, &opts.robust)?.0);
                    }
                }
            }
        }
        let xv = x.as_ref().expect("first tick is a slow tick");
        let r = controller.solve(xv, &realized[tick])?;
        entries.push(TimelineEntry {
            tick,
            time: format_time(m),
            policy,
            overvoltage_count: r.check.overvoltage_buses,
            feasible: r.is_feasible(),
            loss: r.is_feasible().then_some(r.loss),
            slow_update,
            degraded,
        });
    }
    Ok(Timeline { policy, entries, slow_solves })
}

fn slow_dispatch(
    model: &CompactModel,
    policy: Policy,
    forecast: &[f64],
    window: &[usize],
    realized: &[Vec<f64>],
    opts: &RobustOptions,
) -> Result<(Vec<f64>, Option<CcgState>), RobustError> {
    let mut m = model.clone();
    m.d0 = forecast.to_vec();
    match policy {
        Policy::Dvo => Ok((solve_dvo(&m, opts)?.dispatch.x, None)),
        Policy::Rvo => {
            let mut lo = forecast.to_vec();
            let mut hi = forecast.to_vec();
            for &j in window {
                for (i, v) in realized[j].iter().enumerate() {
                    lo[i] = lo[i].min(*v);
                    hi[i] = hi[i].max(*v);
                }
            }
            let u = BoxUncertainty::new(forecast.to_vec(), lo, hi)?;
            let r = ccg_solve(&m, &u, opts)?;
            if !r.objective.is_finite() {
                return Err(RobustError::Solver("no robustly feasible settings found".into()));
            }
            Ok((r.dispatch.x, Some(r.state)))
        }
    }
}

/// Writes `tick,time,policy,overvoltage_count,feasible,loss_pu,loss_kw`.
pub fn write_timeline_csv<W: Write>(model: &CompactModel, timelines: &[Timeline], out: W) -> Result<(), ModelError> {
    let err = |e: csv::Error| ModelError::Numerical(format!("writing timeline: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tick", "time", "policy", "overvoltage_count", "feasible", "loss_pu", "loss_kw", "slow_update", "degraded"])
        .map_err(err)?;
    for t in timelines {
        for e in &t.entries {
            w.write_record([
                e.tick.to_string(),
                e.time.clone(),
                e.policy.to_string(),
                e.overvoltage_count.to_string(),
                e.feasible.to_string(),
                e.loss.map(|v| v.to_string()).unwrap_or_default(),
                e.loss.map(|v| model.network.base.kw(v).to_string()).unwrap_or_default(),
                e.slow_update.to_string(),
                e.degraded.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| ModelError::Numerical(e.to_string()))
}
