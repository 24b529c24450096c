//! Removal of the two bilinear couplings of the DistFlow model and assembly
//! of the compact form
//!
//! ```text
//!   A x + B y + F d = r          (balances, drops, regulator links)
//!   C x + D y ≥ e                (capacitor envelopes, tap selection)
//!   ‖G_l y‖ ≤ h_l·y              (branch cones)
//!   y̲ ≤ y ≤ ȳ,  x ∈ X
//! ```
//!
//! `x` holds the slow binaries: one `β` per capacitor bus-phase and a one-hot
//! `δ` per regulator branch-phase over its taps. The products `ω = β·v` and
//! the tap weights `g, h` depend on the realized voltage and therefore live in
//! `y` next to the DistFlow variables.
//!
//! Regulator model: with `δ_k` selecting tap `k`,
//!
//! ```text
//!   v_i = Σ_k (g_k V̲² + h_k V̄²),   Σ_k (g_k + h_k) = 1,   g_k + h_k ≤ δ_k
//!   κ² v_i = Σ_k K_k² (g_k V̲² + h_k V̄²)
//! ```
//!
//! which is exact for every integral `δ`.

use serde::{Deserialize, Serialize};
use voltvar_conic::{ConicProgram, LinExpr, Row, SocConstraint, SparseTriplets};

use crate::distflow::{build_distflow, YLayout};
use crate::error::ModelError;
use crate::netmodel::{BusId, Network, Phase};
use crate::scenario::Component;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    ActiveBalance,
    ReactiveBalance,
    Drop,
    Envelope,
    Selection,
}

/// `x·a + y·b + d·f (= or ≥) rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactRow {
    pub kind: RowKind,
    pub x: Vec<(usize, f64)>,
    pub y: Vec<(usize, f64)>,
    pub d: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl CompactRow {
    fn new(kind: RowKind, x: Vec<(usize, f64)>, y: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { kind, x, y, d: Vec::new(), rhs }
    }

    /// Right-hand side once `x` and `d` are known.
    pub fn rhs_at(&self, x: &[f64], d: &[f64]) -> f64 {
        self.rhs
            - self.x.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
            - self.d.iter().map(|&(i, c)| c * d[i]).sum::<f64>()
    }
}

/// Capacitor bank on one bus-phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MscSlot {
    pub bus: usize,
    pub phase: Phase,
    pub b_c: f64,
    /// `β` in `x`.
    pub beta: usize,
    /// `ω` in `y`.
    pub omega: usize,
    pub v: usize,
}

/// Regulator on one branch-phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VrSlot {
    pub branch: usize,
    pub phase: Phase,
    pub taps: Vec<f64>,
    /// `δ` in `x`, one per tap.
    pub delta: Vec<usize>,
    /// `g`, `h` in `y`, one per tap.
    pub g: Vec<usize>,
    pub h: Vec<usize>,
}

/// The discrete set `X`: every entry of `x` is binary, and each regulator's
/// `δ` group sums to one.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct XDomain {
    pub n: usize,
    pub labels: Vec<String>,
    pub msc: Vec<MscSlot>,
    pub vr: Vec<VrSlot>,
    pub rows: Vec<Row>,
    pub sos1: Vec<Vec<usize>>,
}

impl XDomain {
    pub fn num_binaries(&self) -> usize {
        self.n
    }

    /// Binary degrees of freedom: one per capacitor, `R − 1` per regulator.
    pub fn binary_dof(&self) -> usize {
        self.msc.len() + self.vr.iter().map(|v| v.taps.len() - 1).sum::<usize>()
    }

    /// Checks integrality and the one-hot rows.
    pub fn check(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.n {
            return Err(ModelError::Domain(format!("x has {} entries, expected {}", x.len(), self.n)));
        }
        if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| **v != 0.0 && **v != 1.0) {
            return Err(ModelError::Domain(format!("{} = {v} is not binary", self.labels[i])));
        }
        for vr in &self.vr {
            let on = vr.delta.iter().filter(|&&i| x[i] == 1.0).count();
            if on != 1 {
                return Err(ModelError::Domain(format!("regulator selects {on} taps")));
            }
        }
        Ok(())
    }

    /// Rounds a near-integral solution to exact 0/1 values.
    pub fn round(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().map(|v| if *v > 0.5 { 1.0 } else { 0.0 }).collect();
        for vr in &self.vr {
            let best = vr
                .delta
                .iter()
                .copied()
                .max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a)))
                .expect("regulator has taps");
            for &i in &vr.delta {
                out[i] = 0.0;
            }
            out[best] = 1.0;
        }
        out
    }

    /// Builds `x` from capacitor states and tap indices.
    pub fn encode(&self, msc_on: &[bool], taps: &[usize]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (slot, &on) in self.msc.iter().zip(msc_on) {
            x[slot.beta] = if on { 1.0 } else { 0.0 };
        }
        for (slot, &k) in self.vr.iter().zip(taps) {
            x[slot.delta[k]] = 1.0;
        }
        x
    }

    /// Every point of `X`, capacitors varying fastest.
    pub fn enumerate(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let radix: Vec<usize> =
            self.msc.iter().map(|_| 2).chain(self.vr.iter().map(|v| v.taps.len())).collect();
        let total: usize = radix.iter().product();
        for mut code in 0..total {
            let mut digits = Vec::with_capacity(radix.len());
            for r in &radix {
                digits.push(code % r);
                code /= r;
            }
            let (m, t) = digits.split_at(self.msc.len());
            let on: Vec<bool> = m.iter().map(|&b| b == 1).collect();
            out.push(self.encode(&on, t));
        }
        out
    }

    pub fn decode(&self, net: &Network, x: &[f64]) -> SlowDispatch {
        SlowDispatch {
            x: x.to_vec(),
            msc: self
                .msc
                .iter()
                .map(|s| MscSetting { bus: net.buses[s.bus].id, phase: s.phase, on: x[s.beta] > 0.5 })
                .collect(),
            taps: self
                .vr
                .iter()
                .map(|s| {
                    let k = s
                        .delta
                        .iter()
                        .position(|&i| x[i] > 0.5)
                        .unwrap_or(0);
                    TapSetting { branch: net.branch_label(s.branch), phase: s.phase, index: k, ratio: s.taps[k] }
                })
                .collect(),
            aux: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MscSetting {
    pub bus: BusId,
    pub phase: Phase,
    pub on: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapSetting {
    pub branch: String,
    pub phase: Phase,
    pub index: usize,
    pub ratio: f64,
}

/// Auxiliary values at the solve that produced a dispatch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxValues {
    pub omega: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
}

/// Decided slow-device schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlowDispatch {
    /// The binary vector `x` (`β` then `δ`).
    pub x: Vec<f64>,
    pub msc: Vec<MscSetting>,
    pub taps: Vec<TapSetting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<AuxValues>,
}

/// Rows produced for one capacitor bus-phase.
#[derive(Clone, Debug, PartialEq)]
pub struct MscRows {
    /// Term to add to the reactive balance: `(ω, b_c)`.
    pub balance_term: (usize, f64),
    /// `ω ≥ v − V̄²(1−β)`, `ω ≤ v − V̲²(1−β)`, `ω ≥ V̲²β`, `ω ≤ V̄²β`.
    pub envelope: [CompactRow; 4],
}

/// Replaces `β·v` by `ω` with its McCormick envelope on `v ∈ [V̲², V̄²]`.
pub fn msc_reformulate(slot: &MscSlot, v_lo2: f64, v_hi2: f64) -> MscRows {
    let (b, w, v) = (slot.beta, slot.omega, slot.v);
    let env = |x: Vec<(usize, f64)>, y: Vec<(usize, f64)>, rhs: f64| CompactRow::new(RowKind::Envelope, x, y, rhs);
    MscRows {
        balance_term: (w, slot.b_c),
        envelope: [
            env(vec![(b, -v_hi2)], vec![(w, 1.0), (v, -1.0)], -v_hi2),
            env(vec![(b, v_lo2)], vec![(v, 1.0), (w, -1.0)], v_lo2),
            env(vec![(b, -v_lo2)], vec![(w, 1.0)], 0.0),
            env(vec![(b, v_hi2)], vec![(w, -1.0)], 0.0),
        ],
    }
}

/// Rows produced for one regulator branch-phase.
#[derive(Clone, Debug, PartialEq)]
pub struct VrRows {
    /// Terms replacing `−κ² v_i` in the drop row.
    pub drop_terms: Vec<(usize, f64)>,
    /// `v_i − Σ (g V̲² + h V̄²) = 0` and `Σ (g + h) = 1`.
    pub equalities: Vec<CompactRow>,
    /// `δ_k − g_k − h_k ≥ 0` per tap.
    pub inequalities: Vec<CompactRow>,
    /// `Σ δ = 1` over `x` alone.
    pub domain: Row,
}

/// Exact linearization of `κ²·v_i` for a regulator with the given taps.
pub fn vr_linearize(slot: &VrSlot, v_i: usize, v_lo2: f64, v_hi2: f64) -> Result<VrRows, ModelError> {
    let r = slot.taps.len();
    if r < 2 {
        return Err(ModelError::Config(format!("regulator needs at least two taps, got {r}")));
    }
    if slot.delta.len() != r || slot.g.len() != r || slot.h.len() != r {
        return Err(ModelError::Config("regulator slot sizes disagree with its taps".into()));
    }
    let mut drop_terms = Vec::with_capacity(2 * r);
    let mut link = vec![(v_i, 1.0)];
    let mut sum = Vec::with_capacity(2 * r);
    let mut inequalities = Vec::with_capacity(r);
    for k in 0..r {
        let k2 = slot.taps[k] * slot.taps[k];
        drop_terms.push((slot.g[k], -k2 * v_lo2));
        drop_terms.push((slot.h[k], -k2 * v_hi2));
        link.push((slot.g[k], -v_lo2));
        link.push((slot.h[k], -v_hi2));
        sum.push((slot.g[k], 1.0));
        sum.push((slot.h[k], 1.0));
        inequalities.push(CompactRow::new(
            RowKind::Selection,
            vec![(slot.delta[k], 1.0)],
            vec![(slot.g[k], -1.0), (slot.h[k], -1.0)],
            0.0,
        ));
    }
    Ok(VrRows {
        drop_terms,
        equalities: vec![
            CompactRow::new(RowKind::Selection, Vec::new(), link, 0.0),
            CompactRow::new(RowKind::Selection, Vec::new(), sum, 1.0),
        ],
        inequalities,
        domain: Row::new(slot.delta.iter().map(|&i| (i, 1.0)).collect(), 1.0),
    })
}

/// Either decision variables of an enclosing program or fixed values.
#[derive(Clone, Copy, Debug)]
pub enum XRef<'a> {
    Vars(&'a [usize]),
    Fixed(&'a [f64]),
}

/// Row counts by kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCounts {
    pub balance: usize,
    pub drop: usize,
    pub envelope: usize,
    pub selection: usize,
    pub cones: usize,
}

/// The assembled model.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactModel {
    pub network: Network,
    pub layout: YLayout,
    pub ny: usize,
    pub y_labels: Vec<String>,
    pub x_domain: XDomain,
    pub eq: Vec<CompactRow>,
    pub ineq: Vec<CompactRow>,
    pub cones: Vec<SocConstraint>,
    /// Loss row over `y`.
    pub b: Vec<f64>,
    pub y_lo: Vec<f64>,
    pub y_hi: Vec<f64>,
    pub components: Vec<Component>,
    pub d0: Vec<f64>,
}

/// Builds the compact model of `net` with forecast injections `d0`.
pub fn assemble_compact(net: &Network, d0: &[f64]) -> Result<CompactModel, ModelError> {
    let block = build_distflow(net, d0)?;
    let lay = block.layout.clone();
    let mut ny = lay.n;
    let mut y_labels = lay.labels.clone();
    let mut y_lo = block.lower.clone();
    let mut y_hi = block.upper.clone();
    let mut b = block.objective.clone();
    let mut add_y = |label: String, lo: f64, hi: f64| {
        y_labels.push(label);
        y_lo.push(lo);
        y_hi.push(hi);
        b.push(0.0);
        ny += 1;
        ny - 1
    };

    let mut xd = XDomain::default();
    for (j, bus) in net.buses.iter().enumerate() {
        let Some(msc) = &bus.msc else { continue };
        if j == net.pcc {
            return Err(ModelError::Config(format!("capacitor at PCC bus {} has no effect", bus.id)));
        }
        for &ph in &msc.phases {
            xd.labels.push(format!("beta[{}{ph}]", bus.id));
            let beta = xd.n;
            xd.n += 1;
            let omega = add_y(format!("omega[{}{ph}]", bus.id), 0.0, bus.v_max * bus.v_max);
            let v = lay.v[j][ph.index()].expect("capacitor phase present at bus");
            xd.msc.push(MscSlot { bus: j, phase: ph, b_c: msc.b_c, beta, omega, v });
        }
    }
    for &k in &net.order {
        let br = &net.branches[k];
        let Some(vr) = &br.vr else { continue };
        let label = net.branch_label(k);
        for ph in br.phases() {
            let mut slot = VrSlot { branch: k, phase: ph, taps: vr.taps.clone(), delta: vec![], g: vec![], h: vec![] };
            for (t, ratio) in vr.taps.iter().enumerate() {
                xd.labels.push(format!("delta[{label}{ph}#{t}={ratio}]"));
                slot.delta.push(xd.n);
                xd.n += 1;
                slot.g.push(add_y(format!("g[{label}{ph}#{t}]"), 0.0, 1.0));
                slot.h.push(add_y(format!("h[{label}{ph}#{t}]"), 0.0, 1.0));
            }
            xd.sos1.push(slot.delta.clone());
            xd.vr.push(slot);
        }
    }

    let kind_of = |row: usize| -> RowKind {
        for per in &block.active_row {
            if per.contains(&Some(row)) {
                return RowKind::ActiveBalance;
            }
        }
        for per in &block.reactive_row {
            if per.contains(&Some(row)) {
                return RowKind::ReactiveBalance;
            }
        }
        RowKind::Drop
    };
    let mut eq: Vec<CompactRow> = block
        .eq
        .iter()
        .enumerate()
        .map(|(i, r)| CompactRow { kind: kind_of(i), x: Vec::new(), y: r.terms.clone(), d: r.d_terms.clone(), rhs: r.rhs })
        .collect();
    let mut ineq = Vec::new();

    for slot in &xd.msc {
        let bus = &net.buses[slot.bus];
        let rows = msc_reformulate(slot, bus.v_min * bus.v_min, bus.v_max * bus.v_max);
        let row = block.reactive_row[slot.bus][slot.phase.index()].expect("non-PCC bus has a reactive row");
        eq[row].y.push(rows.balance_term);
        ineq.extend(rows.envelope);
    }
    for slot in &xd.vr {
        let br = &net.branches[slot.branch];
        let from = &net.buses[br.from];
        let vi = lay.v[br.from][slot.phase.index()].expect("branch phase present at sending bus");
        let rows = vr_linearize(slot, vi, from.v_min * from.v_min, from.v_max * from.v_max)?;
        let row = block.drop_row[slot.branch][slot.phase.index()].expect("branch phase has a drop row");
        eq[row].y.extend(rows.drop_terms);
        eq.extend(rows.equalities);
        ineq.extend(rows.inequalities);
        xd.rows.push(rows.domain);
    }

    Ok(CompactModel {
        network: net.clone(),
        layout: lay,
        ny,
        y_labels,
        x_domain: xd,
        eq,
        ineq,
        cones: block.cones,
        b,
        y_lo,
        y_hi,
        components: block.components,
        d0: d0.to_vec(),
    })
}

impl CompactModel {
    pub fn nx(&self) -> usize {
        self.x_domain.n
    }

    pub fn nd(&self) -> usize {
        self.d0.len()
    }

    pub fn row_counts(&self) -> RowCounts {
        let mut c = RowCounts { cones: self.cones.len(), selection: self.x_domain.rows.len(), ..Default::default() };
        for r in self.eq.iter().chain(&self.ineq) {
            match r.kind {
                RowKind::ActiveBalance | RowKind::ReactiveBalance => c.balance += 1,
                RowKind::Drop => c.drop += 1,
                RowKind::Envelope => c.envelope += 1,
                RowKind::Selection => c.selection += 1,
            }
        }
        c
    }

    /// Loss `b·y`.
    pub fn loss(&self, y: &[f64]) -> f64 {
        self.b.iter().zip(y).map(|(c, v)| c * v).sum()
    }

    /// Appends binary `x` variables and the rows of `X`; returns their indices.
    pub fn add_x_vars(&self, p: &mut ConicProgram) -> Vec<usize> {
        let idx: Vec<usize> = (0..self.nx()).map(|_| p.add_binary(0.0)).collect();
        for r in &self.x_domain.rows {
            p.add_eq(r.terms.iter().map(|&(i, c)| (idx[i], c)).collect(), r.rhs);
        }
        for g in &self.x_domain.sos1 {
            p.sos1.push(g.iter().map(|&i| idx[i]).collect());
        }
        idx
    }

    /// Appends one recourse copy `y` at injections `d` with objective weight
    /// `weight` on the loss; returns the indices of `y`.
    pub fn add_recourse(&self, p: &mut ConicProgram, x: XRef<'_>, d: &[f64], weight: f64) -> Vec<usize> {
        let y: Vec<usize> =
            (0..self.ny).map(|i| p.add_var(self.y_lo[i], self.y_hi[i], weight * self.b[i])).collect();
        let place = |row: &CompactRow| -> (Vec<(usize, f64)>, f64) {
            let mut terms: Vec<(usize, f64)> = row.y.iter().map(|&(i, c)| (y[i], c)).collect();
            let mut rhs = row.rhs - row.d.iter().map(|&(i, c)| c * d[i]).sum::<f64>();
            match x {
                XRef::Vars(xi) => terms.extend(row.x.iter().map(|&(i, c)| (xi[i], c))),
                XRef::Fixed(xv) => rhs -= row.x.iter().map(|&(i, c)| c * xv[i]).sum::<f64>(),
            }
            (terms, rhs)
        };
        for r in &self.eq {
            let (t, rhs) = place(r);
            p.add_eq(t, rhs);
        }
        for r in &self.ineq {
            let (t, rhs) = place(r);
            p.add_ge(t, rhs);
        }
        let remap = |e: &LinExpr| LinExpr {
            terms: e.terms.iter().map(|&(i, c)| (y[i], c)).collect(),
            constant: e.constant,
        };
        for c in &self.cones {
            p.add_cone(remap(&c.head), c.tail.iter().map(remap).collect());
        }
        y
    }

    /// Continuous recourse program at fixed `x` and injections `d`.
    pub fn recourse_program(&self, x: &[f64], d: &[f64]) -> ConicProgram {
        let mut p = ConicProgram::new();
        self.add_recourse(&mut p, XRef::Fixed(x), d, 1.0);
        p
    }

    /// Mixed-binary program minimizing loss at injections `d`; `x` occupies
    /// the first `nx` columns.
    pub fn deterministic_program(&self, d: &[f64]) -> ConicProgram {
        let mut p = ConicProgram::new();
        let x = self.add_x_vars(&mut p);
        self.add_recourse(&mut p, XRef::Vars(&x), d, 1.0);
        p
    }

    /// Largest residual of any compact row at `(x, y, d)`.
    pub fn max_residual(&self, x: &[f64], y: &[f64], d: &[f64]) -> f64 {
        let lhs = |r: &CompactRow| r.y.iter().map(|&(i, c)| c * y[i]).sum::<f64>() - r.rhs_at(x, d);
        let eq = self.eq.iter().map(|r| lhs(r).abs());
        let ineq = self.ineq.iter().map(|r| (-lhs(r)).max(0.0));
        let cones = self.cones.iter().map(|c| (-c.margin(y)).max(0.0));
        let bounds = (0..self.ny).map(|i| (self.y_lo[i] - y[i]).max(y[i] - self.y_hi[i]).max(0.0));
        eq.chain(ineq).chain(cones).chain(bounds).fold(0.0, f64::max)
    }

    /// Auxiliary values `ω, g, h` at `y`.
    pub fn aux_values(&self, y: &[f64]) -> AuxValues {
        AuxValues {
            omega: self.x_domain.msc.iter().map(|s| y[s.omega]).collect(),
            g: self.x_domain.vr.iter().map(|s| s.g.iter().map(|&i| y[i]).collect()).collect(),
            h: self.x_domain.vr.iter().map(|s| s.h.iter().map(|&i| y[i]).collect()).collect(),
        }
    }

    /// Copy with every non-PCC voltage band replaced by `[lo, hi]`.
    pub fn with_voltage_band(&self, lo: f64, hi: f64) -> Result<CompactModel, ModelError> {
        let mut net = self.network.clone();
        for (j, bus) in net.buses.iter_mut().enumerate() {
            if j != net.pcc {
                bus.v_min = lo;
                bus.v_max = hi;
            }
        }
        assemble_compact(&net, &self.d0)
    }

    /// Sparse-triplet JSON of `A, B, F, r, C, D, e`, cones, bounds and `X`.
    pub fn to_sparse_json(&self) -> serde_json::Value {
        let split = |rows: &[CompactRow]| {
            let mut a = SparseTriplets { rows: rows.len(), cols: self.nx(), entries: vec![] };
            let mut bm = SparseTriplets { rows: rows.len(), cols: self.ny, entries: vec![] };
            let mut f = SparseTriplets { rows: rows.len(), cols: self.nd(), entries: vec![] };
            for (r, row) in rows.iter().enumerate() {
                a.entries.extend(row.x.iter().map(|&(c, v)| (r, c, v)));
                bm.entries.extend(row.y.iter().map(|&(c, v)| (r, c, v)));
                f.entries.extend(row.d.iter().map(|&(c, v)| (r, c, v)));
            }
            let rhs: Vec<f64> = rows.iter().map(|r| r.rhs).collect();
            let kinds: Vec<RowKind> = rows.iter().map(|r| r.kind).collect();
            (a, bm, f, rhs, kinds)
        };
        let (a, bm, f, r, eq_kinds) = split(&self.eq);
        let (c, dm, _, e, ineq_kinds) = split(&self.ineq);
        serde_json::json!({
            "nx": self.nx(),
            "ny": self.ny,
            "nd": self.nd(),
            "x_labels": self.x_domain.labels,
            "y_labels": self.y_labels,
            "A": a, "B": bm, "F": f, "r": r, "eq_kinds": eq_kinds,
            "C": c, "D": dm, "e": e, "ineq_kinds": ineq_kinds,
            "cones": self.cones,
            "b": self.b,
            "y_lo": self.y_lo,
            "y_hi": self.y_hi,
            "x_rows": self.x_domain.rows,
            "sos1": self.x_domain.sos1,
            "components": self.components,
            "d0": self.d0,
        })
    }
}
