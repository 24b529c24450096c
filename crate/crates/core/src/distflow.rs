//! Per-phase branch-flow (DistFlow) constraints with the second-order cone
//! relaxation of `l·v = P² + Q²`, and post-solve checks on the relaxation.
//!
//! For branch `k = (i → j)` on phase φ the block carries
//!
//! ```text
//!   v_j − v_i + 2(r P + x Q) − (r² + x²) l = 0
//!   ‖(2P, 2Q, l − v_i)‖ ≤ l + v_i
//! ```
//!
//! and for every non-PCC bus `j` the balances
//!
//! ```text
//!   Σ_in (P − r l) − Σ_out P + P_G − P_D = 0
//!   Σ_in (Q − x l) − Σ_out Q + Q_G + Q_C − Q_D = 0
//! ```
//!
//! The capacitor term of the reactive balance and the `v_i` term of a
//! regulated branch's drop row are left out here and added by
//! [`crate::convexify`].

use std::io::Write;

use serde::{Deserialize, Serialize};
use voltvar_conic::{ConicProgram, LinExpr, SocConstraint};

use crate::error::ModelError;
use crate::netmodel::{Network, Phase};
use crate::scenario::{components, Component, ComponentKind};

/// Optional value per phase, indexed by [`Phase::index`].
pub type PerPhase<T> = [Option<T>; 3];

/// Positions of the DistFlow variables inside `y`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct YLayout {
    pub n: usize,
    /// SVC reactive output per bus.
    pub q_c: Vec<PerPhase<usize>>,
    /// DG reactive output per bus.
    pub q_g: Vec<PerPhase<usize>>,
    /// Squared voltage per bus.
    pub v: Vec<PerPhase<usize>>,
    /// Squared current per branch.
    pub l: Vec<PerPhase<usize>>,
    pub p: Vec<PerPhase<usize>>,
    pub q: Vec<PerPhase<usize>>,
    pub labels: Vec<String>,
}

impl YLayout {
    pub fn new(net: &Network) -> Self {
        let nb = net.buses.len();
        let nk = net.branches.len();
        let mut lay = YLayout {
            q_c: vec![[None; 3]; nb],
            q_g: vec![[None; 3]; nb],
            v: vec![[None; 3]; nb],
            l: vec![[None; 3]; nk],
            p: vec![[None; 3]; nk],
            q: vec![[None; 3]; nk],
            ..Default::default()
        };
        for (b, bus) in net.buses.iter().enumerate() {
            if let Some(svc) = &bus.svc {
                for &ph in &svc.phases {
                    lay.q_c[b][ph.index()] = Some(lay.push(format!("Q_C[{}{ph}]", bus.id)));
                }
            }
        }
        for (b, bus) in net.buses.iter().enumerate() {
            if let Some(dg) = &bus.dg {
                for &ph in dg.p_forecast.keys() {
                    lay.q_g[b][ph.index()] = Some(lay.push(format!("Q_G[{}{ph}]", bus.id)));
                }
            }
        }
        for (b, bus) in net.buses.iter().enumerate() {
            for &ph in &bus.phases {
                lay.v[b][ph.index()] = Some(lay.push(format!("v[{}{ph}]", bus.id)));
            }
        }
        for name in ["l", "P", "Q"] {
            for k in 0..nk {
                let label = net.branch_label(k);
                for ph in net.branches[k].phases() {
                    let idx = lay.push(format!("{name}[{label}{ph}]"));
                    let slot = match name {
                        "l" => &mut lay.l,
                        "P" => &mut lay.p,
                        _ => &mut lay.q,
                    };
                    slot[k][ph.index()] = Some(idx);
                }
            }
        }
        lay
    }

    fn push(&mut self, label: String) -> usize {
        self.labels.push(label);
        self.n += 1;
        self.n - 1
    }
}

/// A linear row over `y` plus injection terms: `terms·y + d_terms·d (= or ≥) rhs`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockRow {
    pub terms: Vec<(usize, f64)>,
    pub d_terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl BlockRow {
    /// Right-hand side after moving the injection terms across.
    pub fn rhs_at(&self, d: &[f64]) -> f64 {
        self.rhs - self.d_terms.iter().map(|&(i, c)| c * d[i]).sum::<f64>()
    }
}

/// DistFlow rows, cones and bounds over `y` for one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBlock {
    pub layout: YLayout,
    pub components: Vec<Component>,
    /// Injection vector the block was built for.
    pub d: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Loss row `b`: `r` on every `l`.
    pub objective: Vec<f64>,
    pub eq: Vec<BlockRow>,
    pub ineq: Vec<BlockRow>,
    pub cones: Vec<SocConstraint>,
    pub active_row: Vec<PerPhase<usize>>,
    pub reactive_row: Vec<PerPhase<usize>>,
    pub drop_row: Vec<PerPhase<usize>>,
}

impl ConstraintBlock {
    pub fn num_vars(&self) -> usize {
        self.layout.n
    }

    /// Continuous program at the stored injections.
    pub fn to_program(&self) -> ConicProgram {
        let mut p = ConicProgram::new();
        for i in 0..self.num_vars() {
            p.add_var(self.lower[i], self.upper[i], self.objective[i]);
        }
        for r in &self.eq {
            p.add_eq(r.terms.clone(), r.rhs_at(&self.d));
        }
        for r in &self.ineq {
            p.add_ge(r.terms.clone(), r.rhs_at(&self.d));
        }
        p.cones = self.cones.clone();
        p
    }

    /// Largest equality residual at `y`.
    pub fn equality_residual(&self, y: &[f64]) -> f64 {
        self.eq
            .iter()
            .map(|r| (r.terms.iter().map(|&(i, c)| c * y[i]).sum::<f64>() - r.rhs_at(&self.d)).abs())
            .fold(0.0, f64::max)
    }
}

/// Builds the DistFlow block for `net` at injections `d` (ordered as
/// [`components`]).
pub fn build_distflow(net: &Network, d: &[f64]) -> Result<ConstraintBlock, ModelError> {
    let comps = components(net);
    if d.len() != comps.len() {
        return Err(ModelError::ScenarioLength { expected: comps.len(), got: d.len() });
    }
    if let Some((c, v)) = comps.iter().zip(d).find(|(_, v)| !v.is_finite()) {
        return Err(ModelError::MissingEntry {
            bus: net.buses[c.bus].id,
            phase: c.phase.to_string(),
            what: format!("{} is {v}", c.kind),
        });
    }
    let layout = YLayout::new(net);
    let n = layout.n;
    let nb = net.buses.len();
    let nk = net.branches.len();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut objective = vec![0.0; n];

    for (b, bus) in net.buses.iter().enumerate() {
        for &ph in &bus.phases {
            let i = layout.v[b][ph.index()].expect("bus phase has a voltage");
            if b == net.pcc {
                lower[i] = net.v_ref * net.v_ref;
                upper[i] = lower[i];
            } else {
                lower[i] = bus.v_min * bus.v_min;
                upper[i] = bus.v_max * bus.v_max;
            }
            if let (Some(j), Some(dg)) = (layout.q_g[b][ph.index()], &bus.dg) {
                lower[j] = dg.q.q_min;
                upper[j] = dg.q.q_max;
            }
            if let (Some(j), Some(svc)) = (layout.q_c[b][ph.index()], &bus.svc) {
                lower[j] = svc.q.q_min;
                upper[j] = svc.q.q_max;
            }
        }
    }
    for (k, br) in net.branches.iter().enumerate() {
        for ph in br.phases() {
            let f = ph.index();
            let (l, p, q) = (layout.l[k][f].unwrap(), layout.p[k][f].unwrap(), layout.q[k][f].unwrap());
            lower[l] = 0.0;
            upper[l] = br.i_max * br.i_max;
            objective[l] = br.r[&ph];
            (lower[p], upper[p]) = (br.p_min, br.p_max);
            (lower[q], upper[q]) = (br.q_min, br.q_max);
        }
    }

    let mut eq = Vec::new();
    let mut active_row = vec![[None; 3]; nb];
    let mut reactive_row = vec![[None; 3]; nb];
    let children = net.children();
    for (j, bus) in net.buses.iter().enumerate() {
        if j == net.pcc {
            continue;
        }
        for &ph in &bus.phases {
            let f = ph.index();
            let mut pa = Vec::new();
            let mut qa = Vec::new();
            if let Some(k) = net.parent[j] {
                let br = &net.branches[k];
                let l = layout.l[k][f].unwrap();
                pa.push((layout.p[k][f].unwrap(), 1.0));
                pa.push((l, -br.r[&ph]));
                qa.push((layout.q[k][f].unwrap(), 1.0));
                qa.push((l, -br.x[&ph]));
            }
            for &c in &children[j] {
                if let Some(p) = layout.p[c][f] {
                    pa.push((p, -1.0));
                    qa.push((layout.q[c][f].unwrap(), -1.0));
                }
            }
            if let Some(g) = layout.q_g[j][f] {
                qa.push((g, 1.0));
            }
            if let Some(s) = layout.q_c[j][f] {
                qa.push((s, 1.0));
            }
            let mut pd = Vec::new();
            let mut qd = Vec::new();
            for (i, c) in comps.iter().enumerate() {
                if c.bus == j && c.phase == ph {
                    match c.kind {
                        ComponentKind::LoadP => pd.push((i, -1.0)),
                        ComponentKind::GenP => pd.push((i, 1.0)),
                        ComponentKind::LoadQ => qd.push((i, -1.0)),
                    }
                }
            }
            active_row[j][f] = Some(eq.len());
            eq.push(BlockRow { terms: pa, d_terms: pd, rhs: 0.0 });
            reactive_row[j][f] = Some(eq.len());
            eq.push(BlockRow { terms: qa, d_terms: qd, rhs: 0.0 });
        }
    }

    let mut drop_row = vec![[None; 3]; nk];
    let mut cones = Vec::new();
    for &k in &net.order {
        let br = &net.branches[k];
        for ph in br.phases() {
            let f = ph.index();
            let (r, x) = (br.r[&ph], br.x[&ph]);
            let (l, p, q) = (layout.l[k][f].unwrap(), layout.p[k][f].unwrap(), layout.q[k][f].unwrap());
            let vi = layout.v[br.from][f].unwrap();
            let vj = layout.v[br.to][f].unwrap();
            let mut terms = vec![(vj, 1.0), (p, 2.0 * r), (q, 2.0 * x), (l, -(r * r + x * x))];
            if br.vr.is_none() {
                terms.push((vi, -1.0));
            }
            drop_row[k][f] = Some(eq.len());
            eq.push(BlockRow { terms, d_terms: Vec::new(), rhs: 0.0 });
            cones.push(SocConstraint {
                head: LinExpr::from_terms(vec![(l, 1.0), (vi, 1.0)]),
                tail: vec![
                    LinExpr::from_terms(vec![(p, 2.0)]),
                    LinExpr::from_terms(vec![(q, 2.0)]),
                    LinExpr::from_terms(vec![(l, 1.0), (vi, -1.0)]),
                ],
            });
        }
    }

    Ok(ConstraintBlock {
        layout,
        components: comps,
        d: d.to_vec(),
        lower,
        upper,
        objective,
        eq,
        ineq: Vec::new(),
        cones,
        active_row,
        reactive_row,
        drop_row,
    })
}

/// Named DistFlow quantities extracted from a solution vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowVariables {
    pub v: Vec<PerPhase<f64>>,
    pub l: Vec<PerPhase<f64>>,
    pub p: Vec<PerPhase<f64>>,
    pub q: Vec<PerPhase<f64>>,
    pub q_g: Vec<PerPhase<f64>>,
    pub q_c: Vec<PerPhase<f64>>,
    /// Net active injection per bus; at the PCC this is the power drawn
    /// from the upstream grid.
    pub p_inj: Vec<PerPhase<f64>>,
    /// Net reactive injection per bus, excluding capacitor banks.
    pub q_inj: Vec<PerPhase<f64>>,
}

impl FlowVariables {
    pub fn from_y(net: &Network, layout: &YLayout, y: &[f64], d: &[f64]) -> Self {
        let pick = |m: &Vec<PerPhase<usize>>| -> Vec<PerPhase<f64>> {
            m.iter().map(|a| a.map(|i| i.map(|i| y[i]))).collect()
        };
        let mut out = FlowVariables {
            v: pick(&layout.v),
            l: pick(&layout.l),
            p: pick(&layout.p),
            q: pick(&layout.q),
            q_g: pick(&layout.q_g),
            q_c: pick(&layout.q_c),
            ..Default::default()
        };
        let nb = net.buses.len();
        let mut p_inj = vec![[None; 3]; nb];
        let mut q_inj = vec![[None; 3]; nb];
        for (b, bus) in net.buses.iter().enumerate() {
            for &ph in &bus.phases {
                let f = ph.index();
                p_inj[b][f] = Some(0.0);
                q_inj[b][f] = Some(out.q_g[b][f].unwrap_or(0.0) + out.q_c[b][f].unwrap_or(0.0));
            }
        }
        for (c, v) in components(net).iter().zip(d) {
            let f = c.phase.index();
            match c.kind {
                ComponentKind::LoadP => *p_inj[c.bus][f].as_mut().unwrap() -= v,
                ComponentKind::GenP => *p_inj[c.bus][f].as_mut().unwrap() += v,
                ComponentKind::LoadQ => *q_inj[c.bus][f].as_mut().unwrap() -= v,
            }
        }
        for k in net.children()[net.pcc].iter() {
            for ph in net.branches[*k].phases() {
                let f = ph.index();
                *p_inj[net.pcc][f].as_mut().unwrap() += out.p[*k][f].unwrap();
                *q_inj[net.pcc][f].as_mut().unwrap() += out.q[*k][f].unwrap();
            }
        }
        out.p_inj = p_inj;
        out.q_inj = q_inj;
        out
    }

    /// Active loss `Σ r·l` over all branch-phases.
    pub fn loss(&self, net: &Network) -> f64 {
        let mut total = 0.0;
        for (k, br) in net.branches.iter().enumerate() {
            for ph in br.phases() {
                total += br.r[&ph] * self.l[k][ph.index()].unwrap_or(0.0);
            }
        }
        total
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub branch: String,
    pub phase: Phase,
    pub gap: f64,
    pub flagged: bool,
}

/// Relaxation gap per branch-phase.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub entries: Vec<GapEntry>,
    pub max_gap: f64,
}

impl GapReport {
    pub fn flagged(&self) -> impl Iterator<Item = &GapEntry> {
        self.entries.iter().filter(|e| e.flagged)
    }

    /// CSV with header `branch,phase,gap`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["branch", "phase", "gap"])?;
        for e in &self.entries {
            wr.write_record([e.branch.clone(), e.phase.to_string(), format!("{:e}", e.gap)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `gap = (l·v_i − P² − Q²) / max(1, l·v_i)` for every branch-phase, with
/// `v_i` the sending-end squared voltage.
pub fn check_soc_exactness(net: &Network, sol: &FlowVariables, tol: f64) -> GapReport {
    let mut report = GapReport::default();
    for &k in &net.order {
        let br = &net.branches[k];
        for ph in br.phases() {
            let f = ph.index();
            let l = sol.l[k][f].unwrap_or(0.0);
            let p = sol.p[k][f].unwrap_or(0.0);
            let q = sol.q[k][f].unwrap_or(0.0);
            let v = sol.v[br.from][f].unwrap_or(0.0);
            let lv = l * v;
            let gap = (lv - p * p - q * q) / lv.max(1.0);
            report.max_gap = report.max_gap.max(gap);
            report.entries.push(GapEntry { branch: net.branch_label(k), phase: ph, gap, flagged: gap > tol });
        }
    }
    report
}

/// Voltage magnitudes `sqrt(v)` per bus-phase. Values in `(−1e-10, 0]` clamp
/// to zero; anything more negative is a numerical error.
pub fn recover_voltages(sol: &FlowVariables) -> Result<Vec<PerPhase<f64>>, ModelError> {
    sol.v
        .iter()
        .enumerate()
        .map(|(b, vals)| {
            let mut out = [None; 3];
            for (f, v) in vals.iter().enumerate() {
                if let Some(v) = *v {
                    if v < -1e-10 {
                        return Err(ModelError::Numerical(format!(
                            "negative squared voltage {v} at bus index {b} phase {}",
                            Phase::ALL[f]
                        )));
                    }
                    out[f] = Some(v.max(0.0).sqrt());
                }
            }
            Ok(out)
        })
        .collect()
}

/// Device settings for [`power_flow`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub q_g: Vec<PerPhase<f64>>,
    pub q_c: Vec<PerPhase<f64>>,
    /// Capacitor state per bus-phase.
    pub msc_on: Vec<PerPhase<bool>>,
    /// Turn ratio per regulated branch-phase; `None` means no regulator.
    pub tap: Vec<PerPhase<f64>>,
}

impl DeviceState {
    pub fn idle(net: &Network) -> Self {
        let nb = net.buses.len();
        DeviceState {
            q_g: vec![[None; 3]; nb],
            q_c: vec![[None; 3]; nb],
            msc_on: vec![[None; 3]; nb],
            tap: vec![[None; 3]; net.branches.len()],
        }
    }
}

/// Solves the exact (non-relaxed) branch-flow equations
/// `l·v_i = P² + Q²`, `v_j = κ² v_i − 2(rP + xQ) + (r² + x²) l` with the
/// balances of [`build_distflow`] by backward/forward sweeps from a flat
/// start at the PCC voltage.
pub fn power_flow(net: &Network, d: &[f64], devices: &DeviceState) -> Result<FlowVariables, ModelError> {
    let comps = components(net);
    if d.len() != comps.len() {
        return Err(ModelError::ScenarioLength { expected: comps.len(), got: d.len() });
    }
    let nb = net.buses.len();
    let nk = net.branches.len();
    // Net withdrawal per bus-phase, excluding capacitors.
    let mut wp = vec![[0.0f64; 3]; nb];
    let mut wq = vec![[0.0f64; 3]; nb];
    for (c, v) in comps.iter().zip(d) {
        let f = c.phase.index();
        match c.kind {
            ComponentKind::LoadP => wp[c.bus][f] += v,
            ComponentKind::GenP => wp[c.bus][f] -= v,
            ComponentKind::LoadQ => wq[c.bus][f] += v,
        }
    }
    for b in 0..nb {
        for f in 0..3 {
            wq[b][f] -= devices.q_g[b][f].unwrap_or(0.0) + devices.q_c[b][f].unwrap_or(0.0);
        }
    }
    let children = net.children();
    let v0 = net.v_ref * net.v_ref;
    let mut v = vec![[v0; 3]; nb];
    let mut l = vec![[0.0f64; 3]; nk];
    let mut p = vec![[0.0f64; 3]; nk];
    let mut q = vec![[0.0f64; 3]; nk];
    let mut converged = false;
    for _ in 0..500 {
        for &k in net.order.iter().rev() {
            let br = &net.branches[k];
            let j = br.to;
            for ph in br.phases() {
                let f = ph.index();
                let cap = match (&net.buses[j].msc, devices.msc_on[j][f]) {
                    (Some(m), Some(true)) => m.b_c * v[j][f],
                    _ => 0.0,
                };
                let mut pk = wp[j][f] + br.r[&ph] * l[k][f];
                let mut qk = wq[j][f] - cap + br.x[&ph] * l[k][f];
                for &c in &children[j] {
                    if net.branches[c].r.contains_key(&ph) {
                        pk += p[c][f];
                        qk += q[c][f];
                    }
                }
                p[k][f] = pk;
                q[k][f] = qk;
            }
        }
        let mut change = 0.0f64;
        for &k in &net.order {
            let br = &net.branches[k];
            for ph in br.phases() {
                let f = ph.index();
                let (r, x) = (br.r[&ph], br.x[&ph]);
                let vi = v[br.from][f];
                if !(vi > 0.0) {
                    return Err(ModelError::Numerical("power flow collapsed to zero voltage".into()));
                }
                let lk = (p[k][f].powi(2) + q[k][f].powi(2)) / vi;
                let k2 = devices.tap[k][f].map_or(1.0, |t| t * t);
                let vj = k2 * vi - 2.0 * (r * p[k][f] + x * q[k][f]) + (r * r + x * x) * lk;
                change = change.max((lk - l[k][f]).abs()).max((vj - v[br.to][f]).abs());
                l[k][f] = lk;
                v[br.to][f] = vj;
            }
        }
        if !change.is_finite() {
            break;
        }
        if change < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(ModelError::Numerical("power flow sweep did not converge".into()));
    }
    let mut y_v = vec![[None; 3]; nb];
    for (b, bus) in net.buses.iter().enumerate() {
        for &ph in &bus.phases {
            y_v[b][ph.index()] = Some(v[b][ph.index()]);
        }
    }
    let per_branch = |m: &Vec<[f64; 3]>| -> Vec<PerPhase<f64>> {
        (0..nk)
            .map(|k| {
                let mut out = [None; 3];
                for ph in net.branches[k].phases() {
                    out[ph.index()] = Some(m[k][ph.index()]);
                }
                out
            })
            .collect()
    };
    let mut out = FlowVariables {
        v: y_v,
        l: per_branch(&l),
        p: per_branch(&p),
        q: per_branch(&q),
        q_g: devices.q_g.clone(),
        q_c: devices.q_c.clone(),
        ..Default::default()
    };
    // Injections as in `FlowVariables::from_y`.
    let mut p_inj = vec![[None; 3]; nb];
    let mut q_inj = vec![[None; 3]; nb];
    for (b, bus) in net.buses.iter().enumerate() {
        for &ph in &bus.phases {
            let f = ph.index();
            p_inj[b][f] = Some(-wp[b][f]);
            q_inj[b][f] = Some(-wq[b][f]);
        }
    }
    for &k in &children[net.pcc] {
        for ph in net.branches[k].phases() {
            let f = ph.index();
            *p_inj[net.pcc][f].as_mut().unwrap() += p[k][f];
            *q_inj[net.pcc][f].as_mut().unwrap() += q[k][f];
        }
    }
    out.p_inj = p_inj;
    out.q_inj = q_inj;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use voltvar_conic::solve_socp;

    const TWO_BUS: &str = r#"{
        "base_power_va": 1e6, "base_voltage_v": 12660, "v_ref_pu": 1.0,
        "phases": ["a"], "pcc_bus": 1,
        "buses": [
            {"id": 1, "v_min_pu": 0.9, "v_max_pu": 1.1},
            {"id": 2, "load_p_pu": {"a": 0.1}, "load_q_pu": {"a": 0.05}, "v_min_pu": 0.9, "v_max_pu": 1.1}
        ],
        "branches": [{"from": 1, "to": 2, "r_pu": {"a": 0.01}, "x_pu": {"a": 0.02}, "i_max_pu": 5}]
    }"#;

    /// Newton's method on the exact 2-bus branch-flow equations
    /// `P = P_D + r l`, `Q = Q_D + x l`, `v₂ = v₁ − 2(rP + xQ) + (r² + x²) l`,
    /// `l v₁ = P² + Q²`, returning `(P, Q, l, v₂)`.
    pub(crate) fn newton_two_bus(pd: f64, qd: f64, r: f64, x: f64, v1: f64) -> [f64; 4] {
        let mut s = [pd, qd, 0.0, v1];
        for _ in 0..50 {
            let [p, q, l, v2] = s;
            let f = [
                p - pd - l * r,
                q - qd - l * x,
                v2 - v1 + 2.0 * (r * p + x * q) - (r * r + x * x) * l,
                l * v1 - p * p - q * q,
            ];
            let jac = [
                [1.0, 0.0, -r, 0.0],
                [0.0, 1.0, -x, 0.0],
                [2.0 * r, 2.0 * x, -(r * r + x * x), 1.0],
                [-2.0 * p, -2.0 * q, v1, 0.0],
            ];
            let step = solve4(jac, f);
            for i in 0..4 {
                s[i] -= step[i];
            }
            if step.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-15 {
                break;
            }
        }
        s
    }

    fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
        for c in 0..4 {
            let piv = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            b.swap(c, piv);
            for r in c + 1..4 {
                let m = a[r][c] / a[c][c];
                for k in c..4 {
                    a[r][k] -= m * a[c][k];
                }
                b[r] -= m * b[c];
            }
        }
        let mut x = [0.0; 4];
        for r in (0..4).rev() {
            let s: f64 = (r + 1..4).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    // Frozen from `newton_two_bus(0.1, 0.05, 0.01, 0.02, 1.0)`.
    const ORACLE: [f64; 4] = [0.1001255027987426, 0.050251005597485195, 0.012550279874259499, 0.9959937248600629];

    #[test]
    fn newton_oracle_matches_frozen_values() {
        let s = newton_two_bus(0.1, 0.05, 0.01, 0.02, 1.0);
        for i in 0..4 {
            assert!((s[i] - ORACLE[i]).abs() < 1e-14, "{i}: {} vs {}", s[i], ORACLE[i]);
        }
    }

    fn two_bus_y(block: &ConstraintBlock, s: [f64; 4]) -> Vec<f64> {
        let lay = &block.layout;
        let mut y = vec![0.0; lay.n];
        y[lay.p[0][0].unwrap()] = s[0];
        y[lay.q[0][0].unwrap()] = s[1];
        y[lay.l[0][0].unwrap()] = s[2];
        y[lay.v[0][0].unwrap()] = 1.0;
        y[lay.v[1][0].unwrap()] = s[3];
        y
    }

    #[test]
    fn newton_point_is_cone_tight_and_feasible() {
        let net = Network::from_json_str(TWO_BUS).unwrap();
        let block = build_distflow(&net, &[0.1, 0.05]).unwrap();
        let y = two_bus_y(&block, ORACLE);
        assert!(block.equality_residual(&y) < 1e-12);
        let p = block.to_program();
        assert!(p.max_violation(&y) < 1e-12);
        assert!(p.cones[0].margin(&y).abs() < 1e-12);
        let sol = FlowVariables::from_y(&net, &block.layout, &y, &block.d);
        assert!(check_soc_exactness(&net, &sol, 1e-9).max_gap.abs() <= 1e-9);
    }

    #[test]
    fn socp_loss_matches_newton_oracle() {
        let net = Network::from_json_str(TWO_BUS).unwrap();
        let block = build_distflow(&net, &[0.1, 0.05]).unwrap();
        let sol = solve_socp(&block.to_program());
        assert!(sol.is_optimal());
        assert!((sol.objective - 0.01 * ORACLE[2]).abs() < 1e-7);
        let flows = FlowVariables::from_y(&net, &block.layout, &sol.x, &block.d);
        assert!(check_soc_exactness(&net, &flows, 1e-5).max_gap <= 1e-5);
        assert!((flows.v[1][0].unwrap() - ORACLE[3]).abs() < 1e-6);
    }

    #[test]
    fn zero_injection_fixed_point() {
        let net = Network::from_json_str(TWO_BUS).unwrap();
        let block = build_distflow(&net, &[0.0, 0.0]).unwrap();
        let mut y = vec![0.0; block.num_vars()];
        for b in 0..2 {
            y[block.layout.v[b][0].unwrap()] = 1.0;
        }
        assert_eq!(block.to_program().max_violation(&y), 0.0);
        let sol = FlowVariables::from_y(&net, &block.layout, &y, &block.d);
        let report = check_soc_exactness(&net, &sol, 1e-9);
        assert!(report.entries.iter().all(|e| e.gap == 0.0));
    }

    #[test]
    fn inflated_current_is_flagged() {
        let net = Network::from_json_str(TWO_BUS).unwrap();
        let block = build_distflow(&net, &[0.1, 0.05]).unwrap();
        let mut s = ORACLE;
        s[2] *= 1.1;
        let y = two_bus_y(&block, s);
        let sol = FlowVariables::from_y(&net, &block.layout, &y, &block.d);
        let report = check_soc_exactness(&net, &sol, 1e-5);
        assert_eq!(report.flagged().count(), 1);
        // l·v = 1.1·(P² + Q²) at v₁ = 1, normalised by max(1, l·v) = 1.
        let expected = 0.1 * (ORACLE[0].powi(2) + ORACLE[1].powi(2));
        assert!((report.max_gap - expected).abs() < 1e-15);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("branch,phase,gap\n1-2,a,"));
    }

    #[test]
    fn voltage_recovery() {
        let sol = FlowVariables {
            v: vec![[Some(1.0), Some(1.042 * 1.042), Some(0.81)], [Some(-1e-11), None, None]],
            ..Default::default()
        };
        let v = recover_voltages(&sol).unwrap();
        assert_eq!(v[0][0], Some(1.0));
        assert!((v[0][1].unwrap() - 1.042).abs() < 1e-15);
        assert!((v[0][2].unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(v[1][0], Some(0.0));
        let bad = FlowVariables { v: vec![[Some(-1e-6), None, None]], ..Default::default() };
        assert!(recover_voltages(&bad).is_err());
    }

    #[test]
    fn power_flow_reproduces_newton_oracle() {
        let net = Network::from_json_str(TWO_BUS).unwrap();
        let sol = power_flow(&net, &[0.1, 0.05], &DeviceState::idle(&net)).unwrap();
        assert!((sol.p[0][0].unwrap() - ORACLE[0]).abs() < 1e-12);
        assert!((sol.q[0][0].unwrap() - ORACLE[1]).abs() < 1e-12);
        assert!((sol.l[0][0].unwrap() - ORACLE[2]).abs() < 1e-12);
        assert!((sol.v[1][0].unwrap() - ORACLE[3]).abs() < 1e-12);
        assert!(check_soc_exactness(&net, &sol, 1e-9).max_gap.abs() < 1e-12);
    }

    #[test]
    fn short_scenario_is_rejected() {
        let net = Network::from_json_str(TWO_BUS).unwrap();
        assert!(matches!(build_distflow(&net, &[0.1]), Err(ModelError::ScenarioLength { .. })));
        assert!(matches!(build_distflow(&net, &[0.1, f64::NAN]), Err(ModelError::MissingEntry { .. })));
    }
}
