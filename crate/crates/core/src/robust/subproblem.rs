use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use voltvar_conic::{solve_misocp_with, solve_socp, ClarabelBackend, ConicProgram, LinExpr, MipOptions, SolveStatus};

use super::fast::{FastController, RecourseOutcome};
use super::{BoxUncertainty, RobustError, RobustOptions, SubproblemMethod};
use crate::convexify::CompactModel;
use crate::error::ModelError;
use crate::scenario::ComponentKind;

/// Conic dual of the recourse at fixed `x`, written as a minimization of
/// the negated dual objective. Every multiplier is capped at `cap`.
#[derive(Clone, Debug)]
pub struct DualSubproblem {
    pub program: ConicProgram,
    pub tau: Vec<usize>,
    pub xi: Vec<usize>,
    pub mu: Vec<usize>,
    pub sigma: Vec<Vec<usize>>,
    pub lam_lo: Vec<usize>,
    pub lam_hi: Vec<usize>,
    /// Multiplier of each injection component in the dual objective.
    pub w: Vec<LinExpr>,
    /// Components with a nonzero interval, in order.
    pub uncertain: Vec<usize>,
    pub widths: Vec<f64>,
    pub zeta: Vec<usize>,
    pub gamma: Vec<usize>,
    /// Stationarity row per `y` column.
    pub stationarity: Vec<usize>,
    base_objective: Vec<f64>,
}

fn build_dual(model: &CompactModel, x: &[f64], cap: f64) -> DualSubproblem {
    let mut p = ConicProgram::new();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.ny];
    let mut w: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.nd()];
    let mut place = |p: &mut ConicProgram, lo: f64, row: &crate::convexify::CompactRow| {
        let coef = row.rhs - row.x.iter().map(|&(i, c)| c * x[i]).sum::<f64>();
        let t = p.add_var(lo, cap, -coef);
        for &(i, c) in &row.y {
            cols[i].push((t, c));
        }
        for &(i, c) in &row.d {
            w[i].push((t, c));
        }
        t
    };
    let tau: Vec<usize> = model.eq.iter().map(|r| place(&mut p, -cap, r)).collect();
    let xi: Vec<usize> = model.ineq.iter().map(|r| place(&mut p, 0.0, r)).collect();
    let mut mu = Vec::new();
    let mut sigma = Vec::new();
    for c in &model.cones {
        let m = p.add_var(0.0, cap, c.head.constant);
        for &(i, a) in &c.head.terms {
            cols[i].push((m, a));
        }
        let s: Vec<usize> = c
            .tail
            .iter()
            .map(|e| {
                let s = p.add_var(-cap, cap, e.constant);
                for &(i, a) in &e.terms {
                    cols[i].push((s, a));
                }
                s
            })
            .collect();
        p.add_cone(LinExpr::var(m), s.iter().map(|&i| LinExpr::var(i)).collect());
        mu.push(m);
        sigma.push(s);
    }
    let mut lam_lo = Vec::with_capacity(model.ny);
    let mut lam_hi = Vec::with_capacity(model.ny);
    let mut stationarity = Vec::with_capacity(model.ny);
    for i in 0..model.ny {
        let (lo, hi) = (model.y_lo[i], model.y_hi[i]);
        let a = if lo.is_finite() { p.add_var(0.0, cap, -lo) } else { p.add_var(0.0, 0.0, 0.0) };
        let b = if hi.is_finite() { p.add_var(0.0, cap, hi) } else { p.add_var(0.0, 0.0, 0.0) };
        let mut terms = std::mem::take(&mut cols[i]);
        terms.push((a, 1.0));
        terms.push((b, -1.0));
        stationarity.push(p.add_eq(terms, model.b[i]));
        lam_lo.push(a);
        lam_hi.push(b);
    }
    let base_objective = p.objective.clone();
    DualSubproblem {
        program: p,
        tau,
        xi,
        mu,
        sigma,
        lam_lo,
        lam_hi,
        w: w.into_iter().map(LinExpr::from_terms).collect(),
        uncertain: Vec::new(),
        widths: Vec::new(),
        zeta: Vec::new(),
        gamma: Vec::new(),
        stationarity,
        base_objective,
    }
}

impl DualSubproblem {
    /// Sets the injection term of the objective to `−Σ d_i w_i`.
    pub fn set_injections(&mut self, d: &[f64]) {
        let obj = &mut self.program.objective;
        obj[..self.base_objective.len()].copy_from_slice(&self.base_objective);
        for (wi, &di) in self.w.iter().zip(d) {
            for &(k, c) in &wi.terms {
                obj[k] += c * di;
            }
        }
    }

    /// Dual objective value at a solution of [`Self::program`].
    pub fn value(&self, sol_x: &[f64]) -> f64 {
        -self.program.objective_value(sol_x)
    }

    pub fn certificate(&self, sol_x: &[f64], bits: &[bool]) -> DualCertificate {
        let get = |v: &[usize]| v.iter().map(|&i| sol_x[i]).collect::<Vec<f64>>();
        let w: Vec<f64> = self.uncertain.iter().map(|&i| self.w[i].eval(sol_x)).collect();
        let gamma: Vec<f64> = if self.gamma.is_empty() {
            w.iter().zip(bits).map(|(wi, &b)| if b { *wi } else { 0.0 }).collect()
        } else {
            get(&self.gamma)
        };
        let p = &self.program;
        let stationarity = self
            .stationarity
            .iter()
            .map(|&r| (p.equalities[r].lhs(sol_x) - p.equalities[r].rhs).abs())
            .fold(0.0, f64::max);
        let cone = p.cones.iter().map(|c| (-c.margin(sol_x)).max(0.0)).fold(0.0, f64::max);
        let sign = self
            .xi
            .iter()
            .chain(&self.lam_lo)
            .chain(&self.lam_hi)
            .chain(&self.mu)
            .map(|&i| (-sol_x[i]).max(0.0))
            .fold(0.0, f64::max);
        let bilinear = w
            .iter()
            .zip(bits)
            .zip(&gamma)
            .map(|((wi, &b), g)| (g - if b { *wi } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        DualCertificate {
            value: self.value(sol_x),
            tau: get(&self.tau),
            xi: get(&self.xi),
            mu: get(&self.mu),
            sigma: self.sigma.iter().map(|s| get(s)).collect(),
            lam_lo: get(&self.lam_lo),
            lam_hi: get(&self.lam_hi),
            zeta: bits.to_vec(),
            gamma,
            w,
            check: CertificateCheck { stationarity, cone, sign, bilinear },
        }
    }
}

/// Dual of the recourse at fixed `x` and injections `d`.
pub fn dual_at(model: &CompactModel, x: &[f64], d: &[f64], cap: f64) -> DualSubproblem {
    let mut dual = build_dual(model, x, cap);
    dual.set_injections(d);
    dual
}

/// Dual of the recourse over the box `u`, with the products `ζ_i w_i`
/// replaced by big-M rows.
pub fn dualize_subproblem(model: &CompactModel, x: &[f64], u: &BoxUncertainty, cap: f64, big_m: f64) -> DualSubproblem {
    let mut dual = build_dual(model, x, cap);
    dual.set_injections(&u.d_lo);
    linearize_bilinear(&mut dual, u, big_m);
    dual
}

/// Adds `ζ_i ∈ {0,1}` and `γ_i = ζ_i w_i` for every uncertain component;
/// the objective gains `−Δd_i γ_i`.
pub fn linearize_bilinear(dual: &mut DualSubproblem, u: &BoxUncertainty, big_m: f64) {
    let p = &mut dual.program;
    dual.uncertain = u.uncertain();
    dual.widths = dual.uncertain.iter().map(|&i| u.width(i)).collect();
    for (&i, &dw) in dual.uncertain.iter().zip(&dual.widths) {
        let z = p.add_binary(0.0);
        let g = p.add_var(-big_m, big_m, dw);
        let w = &dual.w[i].terms;
        let with = |extra: &[(usize, f64)], sign: f64| -> Vec<(usize, f64)> {
            w.iter().map(|&(k, c)| (k, sign * c)).chain(extra.iter().copied()).collect()
        };
        p.add_ge(with(&[(g, -1.0), (z, -big_m)], 1.0), -big_m);
        p.add_ge(with(&[(g, 1.0), (z, -big_m)], -1.0), -big_m);
        p.add_ge(vec![(z, big_m), (g, -1.0)], 0.0);
        p.add_ge(vec![(g, 1.0), (z, big_m)], 0.0);
        dual.zeta.push(z);
        dual.gamma.push(g);
    }
}

/// Multipliers of the worst-case recourse together with their residuals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub value: f64,
    pub tau: Vec<f64>,
    pub xi: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub lam_lo: Vec<f64>,
    pub lam_hi: Vec<f64>,
    pub zeta: Vec<bool>,
    pub gamma: Vec<f64>,
    pub w: Vec<f64>,
    pub check: CertificateCheck,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub stationarity: f64,
    pub cone: f64,
    /// Largest negative part of a sign-constrained multiplier.
    pub sign: f64,
    /// Largest `|γ_i − ζ_i w_i|`.
    pub bilinear: f64,
}

impl CertificateCheck {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.cone).max(self.sign).max(self.bilinear)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubproblemResult {
    /// Relaxed recourse value at `d_star`; `+∞` when it is infeasible.
    pub value: f64,
    /// Dual value at `d_star`.
    pub dual_value: f64,
    /// Vertex over the uncertain components.
    pub bits: Vec<bool>,
    pub d_star: Vec<f64>,
    /// Whether `d_star` is proven worst.
    pub certified: bool,
    pub method: SubproblemMethod,
    pub vertices_evaluated: usize,
    pub recourse: RecourseOutcome,
    pub certificate: DualCertificate,
}

struct Eval {
    value: f64,
    w: Vec<f64>,
    sol: Vec<f64>,
}

struct VertexSearch<'a> {
    dual: DualSubproblem,
    u: &'a BoxUncertainty,
    cache: BTreeMap<Vec<bool>, Eval>,
}

impl VertexSearch<'_> {
    fn eval(&mut self, bits: &[bool]) -> &Eval {
        if !self.cache.contains_key(bits) {
            self.dual.set_injections(&self.u.vertex(bits));
            let sol = solve_socp(&self.dual.program);
            let e = if sol.is_optimal() {
                Eval {
                    value: self.dual.value(&sol.x),
                    w: self.dual.uncertain.iter().map(|&i| self.dual.w[i].eval(&sol.x)).collect(),
                    sol: sol.x,
                }
            } else {
                log::warn!("dual vertex evaluation ended with status {:?}", sol.status);
                Eval { value: f64::NEG_INFINITY, w: vec![0.0; bits.len()], sol: sol.x }
            };
            self.cache.insert(bits.to_vec(), e);
        }
        &self.cache[bits]
    }

    /// Alternates between the dual at a vertex and the vertex maximizing
    /// `−Σ Δd_i ζ_i w_i` for the current `w`; the value never decreases.
    fn climb(&mut self, start: Vec<bool>) -> Vec<bool> {
        let mut bits = start;
        for _ in 0..100 {
            let e = self.eval(&bits);
            let value = e.value;
            let next: Vec<bool> = e.w.iter().map(|&w| w < -1e-9).collect();
            if next == bits {
                break;
            }
            let nv = self.eval(&next).value;
            if nv <= value + 1e-10 * (1.0 + value.abs()) {
                break;
            }
            bits = next;
        }
        bits
    }

    /// Best evaluated vertex; ties go to the lexicographically smallest.
    fn best(&self) -> Vec<bool> {
        let mut best: Option<(&Vec<bool>, f64)> = None;
        for (bits, e) in &self.cache {
            match best {
                Some((_, v)) if e.value <= v + 1e-9 * (1.0 + v.abs()) => {}
                _ => best = Some((bits, e.value)),
            }
        }
        best.map(|(b, _)| b.clone()).unwrap_or_default()
    }
}

fn heuristic_starts(model: &CompactModel, u: &BoxUncertainty, search: &mut VertexSearch<'_>) -> Vec<Vec<bool>> {
    let unc = u.uncertain();
    let gen = |i: &usize| model.components[*i].kind == ComponentKind::GenP;
    let n = unc.len();
    let mut starts = vec![
        unc.iter().map(gen).collect::<Vec<bool>>(),
        unc.iter().map(|i| !gen(i)).collect(),
    ];
    // Vertex suggested by the multipliers at the forecast.
    search.dual.set_injections(&u.d0);
    let sol = solve_socp(&search.dual.program);
    if sol.is_optimal() {
        starts.push(unc.iter().map(|&i| search.dual.w[i].eval(&sol.x) < -1e-9).collect());
    }
    starts.push(vec![false; n]);
    starts.push(vec![true; n]);
    starts
}

/// Finds a worst-case vertex of `u` for slow settings `x` and evaluates the
/// recourse there.
pub fn solve_subproblem(
    model: &CompactModel,
    x: &[f64],
    u: &BoxUncertainty,
    opts: &RobustOptions,
    fast: &FastController<'_>,
) -> Result<SubproblemResult, RobustError> {
    model.x_domain.check(x)?;
    if u.d0.len() != model.nd() {
        return Err(ModelError::ScenarioLength { expected: model.nd(), got: u.d0.len() }.into());
    }
    let n = u.uncertain().len();
    let method = match opts.subproblem {
        SubproblemMethod::Auto if n <= opts.exact_threshold => SubproblemMethod::DualBnb,
        SubproblemMethod::Auto => SubproblemMethod::Heuristic,
        m => m,
    };
    let mut dual = build_dual(model, x, opts.dual_cap);
    dual.uncertain = u.uncertain();
    dual.widths = dual.uncertain.iter().map(|&i| u.width(i)).collect();
    let mut search = VertexSearch { dual, u, cache: BTreeMap::new() };

    let mut certified = false;
    let mut bnb_cert = None;
    match method {
        SubproblemMethod::Enumerate => {
            if n > 20 {
                return Err(ModelError::Config(format!("{n} uncertain components are too many to enumerate")).into());
            }
            for code in 0..(1u64 << n) {
                // Most significant bit first, so codes ascend lexicographically.
                let bits: Vec<bool> = (0..n).map(|i| code >> (n - 1 - i) & 1 == 1).collect();
                search.eval(&bits);
            }
            certified = search.cache.values().all(|e| e.value.is_finite());
        }
        SubproblemMethod::Heuristic | SubproblemMethod::DualBnb | SubproblemMethod::Auto => {
            for s in heuristic_starts(model, u, &mut search) {
                search.climb(s);
            }
        }
    }
    let mut bits = search.best();

    if method == SubproblemMethod::DualBnb {
        let lin = dualize_subproblem(model, x, u, opts.dual_cap, opts.big_m);
        let mip = MipOptions { node_limit: opts.subproblem_node_limit, ..opts.mip.clone() };
        let start: Vec<(usize, f64)> = lin.zeta.iter().zip(&bits).map(|(&z, &b)| (z, b as u8 as f64)).collect();
        let sol = solve_misocp_with(&ClarabelBackend::new(mip.socp.clone()), &lin.program, &mip, &[start]);
        if sol.objective.is_finite() {
            let found: Vec<bool> = lin.zeta.iter().map(|&z| sol.x[z] > 0.5).collect();
            let cert_bits = found.clone();
            let heur = search.eval(&bits).value;
            let exact = search.eval(&found).value;
            if exact > heur + 1e-9 * (1.0 + heur.abs()) || (exact >= heur - 1e-9 * (1.0 + heur.abs()) && found < bits) {
                bits = found;
            }
            certified = sol.status == SolveStatus::Optimal;
            bnb_cert = Some(lin.certificate(&sol.x, &cert_bits));
        } else {
            log::warn!("exact subproblem search ended with status {:?}", sol.status);
        }
    }

    let evaluated = search.cache.len();
    let e = search.eval(&bits);
    let dual_value = e.value;
    let sol_x = e.sol.clone();
    search.dual.set_injections(&u.vertex(&bits));
    let certificate = match bnb_cert {
        Some(c) if c.zeta == bits => c,
        _ => search.dual.certificate(&sol_x, &bits),
    };
    let d_star = u.vertex(&bits);
    let recourse = fast.solve(x, &d_star)?;
    let value = recourse.relaxed_loss.unwrap_or(f64::INFINITY);
    Ok(SubproblemResult {
        value,
        dual_value,
        bits,
        d_star,
        certified,
        method,
        vertices_evaluated: evaluated,
        recourse,
        certificate,
    })
}
