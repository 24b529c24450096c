//! Continuous SOCP solves.
//!
//! Dual sign conventions, for `min c·x` subject to
//!
//! ```text
//!   a_i·x = r_i          (eq_duals τ_i, free)
//!   a_j·x ≥ r_j          (ineq_duals ξ_j ≥ 0)
//!   ‖G x + g‖ ≤ h·x + h₀ (cone_duals (μ, σ), ‖σ‖ ≤ μ)
//!   lo ≤ x ≤ hi          (lower_duals λ̲ ≥ 0, upper_duals λ̄ ≥ 0)
//! ```
//!
//! stationarity reads `c = Σ τ_i a_i + Σ ξ_j a_j + Σ (μ h + Gᵀσ) + λ̲ − λ̄`
//! and the dual objective is `r·τ + r·ξ − Σ (μ h₀ + σ·g) + lo·λ̲ − hi·λ̄`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use crate::program::{ConicProgram, LinExpr, Row};

/// Rows whose largest coefficient reaches this magnitude are equilibrated.
pub const BIG_COEFFICIENT: f64 = 1e5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConeDual {
    pub mu: f64,
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: u32,
    pub socp_solves: usize,
    pub nodes: usize,
    pub numerical_failures: usize,
    pub reduced_accuracy: bool,
    pub root_bound: Option<f64>,
}

/// Result of a continuous or mixed-binary solve. When `status` is
/// `Infeasible` the dual vectors hold a Farkas-type ray if the backend
/// produced one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub cone_duals: Vec<ConeDual>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub objective: f64,
    /// Proven lower bound on the optimum; equals `objective` for continuous
    /// optimal solves.
    pub bound: f64,
    pub stats: SolveStats,
}

impl PrimalDualSolution {
    pub(crate) fn empty(status: SolveStatus, p: &ConicProgram) -> Self {
        Self {
            status,
            x: vec![0.0; p.num_vars()],
            eq_duals: vec![0.0; p.equalities.len()],
            ineq_duals: vec![0.0; p.inequalities.len()],
            cone_duals: p
                .cones
                .iter()
                .map(|c| ConeDual { mu: 0.0, sigma: vec![0.0; c.tail.len()] })
                .collect(),
            lower_duals: vec![0.0; p.num_vars()],
            upper_duals: vec![0.0; p.num_vars()],
            objective: f64::NAN,
            bound: f64::NEG_INFINITY,
            stats: SolveStats::default(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// `c − Σ τ a − Σ ξ a − Σ (μ h + Gᵀσ) − λ̲ + λ̄`, which is zero at an
    /// optimal primal-dual pair.
    pub fn stationarity_residual(&self, p: &ConicProgram) -> Vec<f64> {
        let mut r = p.objective.clone();
        for (row, t) in p.equalities.iter().zip(&self.eq_duals) {
            for &(i, a) in &row.terms {
                r[i] -= a * t;
            }
        }
        for (row, xi) in p.inequalities.iter().zip(&self.ineq_duals) {
            for &(i, a) in &row.terms {
                r[i] -= a * xi;
            }
        }
        for (cone, d) in p.cones.iter().zip(&self.cone_duals) {
            for &(i, a) in &cone.head.terms {
                r[i] -= a * d.mu;
            }
            for (e, s) in cone.tail.iter().zip(&d.sigma) {
                for &(i, a) in &e.terms {
                    r[i] -= a * s;
                }
            }
        }
        for (i, ri) in r.iter_mut().enumerate() {
            *ri += -self.lower_duals[i] + self.upper_duals[i];
        }
        r
    }

    /// Dual objective value of the stored multipliers.
    pub fn dual_objective(&self, p: &ConicProgram) -> f64 {
        let mut v = p.objective_constant;
        v += p.equalities.iter().zip(&self.eq_duals).map(|(r, t)| r.rhs * t).sum::<f64>();
        v += p.inequalities.iter().zip(&self.ineq_duals).map(|(r, x)| r.rhs * x).sum::<f64>();
        for (cone, d) in p.cones.iter().zip(&self.cone_duals) {
            v -= cone.head.constant * d.mu;
            v -= cone.tail.iter().zip(&d.sigma).map(|(e, s)| e.constant * s).sum::<f64>();
        }
        for i in 0..p.num_vars() {
            if self.lower_duals[i] != 0.0 {
                v += p.lower[i] * self.lower_duals[i];
            }
            if self.upper_duals[i] != 0.0 {
                v -= p.upper[i] * self.upper_duals[i];
            }
        }
        v
    }
}

/// Tolerances for the continuous backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocpOptions {
    pub gap_rel: f64,
    pub gap_abs: f64,
    pub feas_tol: f64,
    pub max_iter: u32,
}

impl Default for SocpOptions {
    fn default() -> Self {
        Self { gap_rel: 1e-8, gap_abs: 1e-8, feas_tol: 1e-8, max_iter: 200 }
    }
}

/// A continuous conic solver. Implementations must be reentrant.
pub trait SocpBackend: Sync {
    /// Solves `p` with variable bounds replaced by `lower`/`upper`, ignoring
    /// the binary mask.
    fn solve_with_bounds(&self, p: &ConicProgram, lower: &[f64], upper: &[f64]) -> PrimalDualSolution;
}

/// Interior-point backend built on Clarabel.
#[derive(Clone, Debug, Default)]
pub struct ClarabelBackend {
    pub options: SocpOptions,
}

impl ClarabelBackend {
    pub fn new(options: SocpOptions) -> Self {
        Self { options }
    }
}

/// Solves the continuous relaxation of `p` with the default backend.
pub fn solve_socp(p: &ConicProgram) -> PrimalDualSolution {
    ClarabelBackend::default().solve_with_bounds(p, &p.lower, &p.upper)
}

/// Where a backend row came from, so duals can be mapped back.
#[derive(Clone, Copy, Debug)]
enum Origin {
    Eq(usize),
    Ineq(usize),
    Lower(usize),
    Upper(usize),
    Cone(usize, usize),
}

struct Assembled {
    triplets: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    origin: Vec<Origin>,
    scale: Vec<f64>,
    col_of: Vec<Option<usize>>,
    n_free: usize,
    /// A row with no free variables that is violated.
    trivially_infeasible: bool,
}

const FIXED_TOL: f64 = 1e-12;
const CONSTANT_ROW_TOL: f64 = 1e-9;

fn assemble(p: &ConicProgram, lower: &[f64], upper: &[f64]) -> Assembled {
    let n = p.num_vars();
    let mut col_of = vec![None; n];
    let mut n_free = 0;
    for i in 0..n {
        if upper[i] - lower[i] > FIXED_TOL {
            col_of[i] = Some(n_free);
            n_free += 1;
        }
    }
    let fixed_val = |i: usize| lower[i];

    let mut a = Assembled {
        triplets: Vec::new(),
        b: Vec::new(),
        cones: Vec::new(),
        origin: Vec::new(),
        scale: Vec::new(),
        col_of,
        n_free,
        trivially_infeasible: false,
    };

    // Splits a term list into free-column entries and the fixed contribution.
    let split = |terms: &[(usize, f64)], col_of: &[Option<usize>]| {
        let mut free = Vec::with_capacity(terms.len());
        let mut fixed = 0.0;
        for &(i, c) in terms {
            match col_of[i] {
                Some(col) => free.push((col, c)),
                None => fixed += c * fixed_val(i),
            }
        }
        (free, fixed)
    };
    let row_scale = |free: &[(usize, f64)]| {
        let m = free.iter().fold(0.0f64, |m, t| m.max(t.1.abs()));
        if m >= BIG_COEFFICIENT {
            1.0 / m
        } else {
            1.0
        }
    };

    // Zero cone: equalities. Row: a·x + s = r, s = 0.
    let mut zero_rows = 0;
    for (k, row) in p.equalities.iter().enumerate() {
        let (free, fixed) = split(&row.terms, &a.col_of);
        let rhs = row.rhs - fixed;
        if free.is_empty() {
            if rhs.abs() > CONSTANT_ROW_TOL * (1.0 + row.rhs.abs()) {
                a.trivially_infeasible = true;
            }
            continue;
        }
        let s = row_scale(&free);
        let r = a.b.len();
        a.triplets.extend(free.iter().map(|&(c, v)| (r, c, v * s)));
        a.b.push(rhs * s);
        a.origin.push(Origin::Eq(k));
        a.scale.push(s);
        zero_rows += 1;
    }
    if zero_rows > 0 {
        a.cones.push(SupportedConeT::ZeroConeT(zero_rows));
    }

    // Nonnegative cone: a·x ≥ r becomes −a·x + s = −r.
    let mut nn_rows = 0;
    for (k, row) in p.inequalities.iter().enumerate() {
        let (free, fixed) = split(&row.terms, &a.col_of);
        let rhs = row.rhs - fixed;
        if free.is_empty() {
            if rhs > CONSTANT_ROW_TOL * (1.0 + row.rhs.abs()) {
                a.trivially_infeasible = true;
            }
            continue;
        }
        let s = row_scale(&free);
        let r = a.b.len();
        a.triplets.extend(free.iter().map(|&(c, v)| (r, c, -v * s)));
        a.b.push(-rhs * s);
        a.origin.push(Origin::Ineq(k));
        a.scale.push(s);
        nn_rows += 1;
    }
    for i in 0..n {
        let Some(col) = a.col_of[i] else { continue };
        if lower[i].is_finite() {
            let r = a.b.len();
            a.triplets.push((r, col, -1.0));
            a.b.push(-lower[i]);
            a.origin.push(Origin::Lower(i));
            a.scale.push(1.0);
            nn_rows += 1;
        }
        if upper[i].is_finite() {
            let r = a.b.len();
            a.triplets.push((r, col, 1.0));
            a.b.push(upper[i]);
            a.origin.push(Origin::Upper(i));
            a.scale.push(1.0);
            nn_rows += 1;
        }
    }
    if nn_rows > 0 {
        a.cones.push(SupportedConeT::NonnegativeConeT(nn_rows));
    }

    // Second-order cones: s = expr(x), i.e. −expr_free·x + s = constant + fixed.
    for (k, cone) in p.cones.iter().enumerate() {
        let parts: Vec<(Vec<(usize, f64)>, f64)> = std::iter::once(&cone.head)
            .chain(&cone.tail)
            .map(|e: &LinExpr| {
                let (free, fixed) = split(&e.terms, &a.col_of);
                (free, e.constant + fixed)
            })
            .collect();
        if parts.iter().all(|(free, _)| free.is_empty()) {
            let head = parts[0].1;
            let norm = parts[1..].iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
            if norm - head > CONSTANT_ROW_TOL * (1.0 + head.abs()) {
                a.trivially_infeasible = true;
            }
            continue;
        }
        let m = parts
            .iter()
            .flat_map(|(f, _)| f.iter().map(|t| t.1.abs()))
            .fold(0.0f64, f64::max);
        let s = if m >= BIG_COEFFICIENT { 1.0 / m } else { 1.0 };
        for (j, (free, constant)) in parts.iter().enumerate() {
            let r = a.b.len();
            a.triplets.extend(free.iter().map(|&(c, v)| (r, c, -v * s)));
            a.b.push(constant * s);
            a.origin.push(Origin::Cone(k, j));
            a.scale.push(s);
        }
        a.cones.push(SupportedConeT::SecondOrderConeT(parts.len()));
    }
    a
}

impl SocpBackend for ClarabelBackend {
    fn solve_with_bounds(&self, p: &ConicProgram, lower: &[f64], upper: &[f64]) -> PrimalDualSolution {
        let n = p.num_vars();
        if (0..n).any(|i| lower[i] > upper[i] + FIXED_TOL) {
            return PrimalDualSolution::empty(SolveStatus::Infeasible, p);
        }
        let asm = assemble(p, lower, upper);
        if asm.trivially_infeasible {
            return PrimalDualSolution::empty(SolveStatus::Infeasible, p);
        }

        let mut q = vec![0.0; asm.n_free];
        let mut constant = p.objective_constant;
        for i in 0..n {
            match asm.col_of[i] {
                Some(col) => q[col] = p.objective[i],
                None => constant += p.objective[i] * lower[i],
            }
        }

        let x_full = |free: &[f64]| -> Vec<f64> {
            (0..n).map(|i| asm.col_of[i].map_or(lower[i], |c| free[c])).collect()
        };

        let mut sol = PrimalDualSolution::empty(SolveStatus::IterationLimit, p);
        sol.stats.socp_solves = 1;

        if asm.b.is_empty() {
            // Only free variables without bounds or rows: bounded iff the
            // objective vanishes on them.
            if q.iter().any(|&c| c != 0.0) {
                sol.status = SolveStatus::Unbounded;
                return sol;
            }
            sol.status = SolveStatus::Optimal;
            sol.x = x_full(&q);
            sol.objective = constant;
            sol.bound = constant;
            fill_fixed_duals(p, &asm, &mut sol);
            return sol;
        }

        let m = asm.b.len();
        let (mut ri, mut ci, mut vi) = (Vec::new(), Vec::new(), Vec::new());
        for &(r, c, v) in &asm.triplets {
            ri.push(r);
            ci.push(c);
            vi.push(v);
        }
        let a_mat = CscMatrix::new_from_triplets(m, asm.n_free, ri, ci, vi);
        let p_mat = CscMatrix::<f64>::zeros((asm.n_free, asm.n_free));
        let settings = DefaultSettings {
            verbose: false,
            tol_gap_abs: self.options.gap_abs,
            tol_gap_rel: self.options.gap_rel,
            tol_feas: self.options.feas_tol,
            max_iter: self.options.max_iter,
            presolve_enable: false,
            ..DefaultSettings::default()
        };
        let mut solver = match DefaultSolver::new(&p_mat, &q, &a_mat, &asm.b, &asm.cones, settings) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("conic backend rejected the program: {e}");
                return sol;
            }
        };
        solver.solve();
        let out = &solver.solution;
        sol.stats.iterations = out.iterations;

        let status = match out.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => {
                sol.stats.reduced_accuracy = true;
                SolveStatus::Optimal
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            _ => SolveStatus::IterationLimit,
        };
        sol.status = status;

        // Dual vectors (or the infeasibility ray) in program conventions.
        for (r, origin) in asm.origin.iter().enumerate() {
            let z = out.z[r] * asm.scale[r];
            match *origin {
                Origin::Eq(k) => sol.eq_duals[k] = -z,
                Origin::Ineq(k) => sol.ineq_duals[k] = z,
                Origin::Lower(i) => sol.lower_duals[i] = z,
                Origin::Upper(i) => sol.upper_duals[i] = z,
                Origin::Cone(k, 0) => sol.cone_duals[k].mu = z,
                Origin::Cone(k, j) => sol.cone_duals[k].sigma[j - 1] = z,
            }
        }

        if status == SolveStatus::Optimal {
            sol.x = x_full(&out.x);
            sol.objective = p.objective_value(&sol.x);
            sol.bound = sol.objective;
            fill_fixed_duals(p, &asm, &mut sol);
        } else if status == SolveStatus::IterationLimit {
            sol.x = x_full(&out.x);
        }
        sol
    }
}

/// Bound duals of eliminated (fixed) variables come from the reduced cost.
fn fill_fixed_duals(p: &ConicProgram, asm: &Assembled, sol: &mut PrimalDualSolution) {
    if asm.col_of.iter().all(Option::is_some) {
        return;
    }
    let r = sol.stationarity_residual(p);
    for (i, col) in asm.col_of.iter().enumerate() {
        if col.is_none() {
            sol.lower_duals[i] = r[i].max(0.0);
            sol.upper_duals[i] = (-r[i]).max(0.0);
        }
    }
}

/// Convenience: evaluates row residuals of an equality block.
pub fn equality_residual(rows: &[Row], x: &[f64]) -> f64 {
    rows.iter().map(|r| (r.lhs(x) - r.rhs).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cone_on_single_variable_bottoms_out_at_zero() {
        // minimize y s.t. ‖(y)‖ ≤ y, y ∈ [0, 1]
        let mut p = ConicProgram::new();
        let y = p.add_var(0.0, 1.0, 1.0);
        p.add_cone(LinExpr::var(y), vec![LinExpr::var(y)]);
        let s = solve_socp(&p);
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(s.objective.abs() < 1e-7, "{}", s.objective);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut p = ConicProgram::new();
        let y = p.add_var(f64::NEG_INFINITY, 0.0, 1.0);
        p.add_ge(vec![(y, 1.0)], 1.0);
        assert_eq!(solve_socp(&p).status, SolveStatus::Infeasible);

        let mut q = ConicProgram::new();
        q.add_var(1.0, 0.0, 1.0);
        assert_eq!(solve_socp(&q).status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_objective_is_reported() {
        let mut p = ConicProgram::new();
        let y = p.add_var(f64::NEG_INFINITY, 0.0, 1.0);
        p.add_le(vec![(y, 1.0)], 5.0);
        assert_eq!(solve_socp(&p).status, SolveStatus::Unbounded);
    }

    /// min x + y s.t. ‖(x, y)‖ ≤ 1: optimum −√2 at (−1/√2, −1/√2).
    fn disc_program() -> ConicProgram {
        let mut p = ConicProgram::new();
        let x = p.add_var(f64::NEG_INFINITY, f64::INFINITY, 1.0);
        let y = p.add_var(f64::NEG_INFINITY, f64::INFINITY, 1.0);
        p.add_cone(LinExpr::new().with_constant(1.0), vec![LinExpr::var(x), LinExpr::var(y)]);
        p
    }

    #[test]
    fn disc_optimum_and_duals() {
        let p = disc_program();
        let s = solve_socp(&p);
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective + 2f64.sqrt()).abs() < 1e-7);
        let r = s.stationarity_residual(&p);
        assert!(r.iter().all(|v| v.abs() < 1e-7), "{r:?}");
        assert!((s.dual_objective(&p) - s.objective).abs() < 1e-7);
        let d = &s.cone_duals[0];
        let norm = d.sigma.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= d.mu + 1e-9);
    }

    #[test]
    fn fixed_variables_are_eliminated_with_consistent_duals() {
        // min x + 2y s.t. x + y = 3, x ≥ 0, y fixed at 1 -> x = 2, obj 4.
        let mut p = ConicProgram::new();
        let x = p.add_var(0.0, f64::INFINITY, 1.0);
        let y = p.add_var(1.0, 1.0, 2.0);
        p.add_eq(vec![(x, 1.0), (y, 1.0)], 3.0);
        let s = solve_socp(&p);
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[x] - 2.0).abs() < 1e-7 && s.x[y] == 1.0);
        assert!((s.objective - 4.0).abs() < 1e-7);
        assert!(s.stationarity_residual(&p).iter().all(|v| v.abs() < 1e-7));
        assert!((s.dual_objective(&p) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn big_coefficient_rows_are_equilibrated_transparently() {
        // max γ s.t. γ ≤ τ + M(1 − ζ) with ζ = 1 fixed, τ ≤ 2 -> γ = 2.
        let m = 1e6;
        let mut p = ConicProgram::new();
        let g = p.add_var(-10.0, 10.0, -1.0);
        let t = p.add_var(-10.0, 2.0, 0.0);
        let z = p.add_var(0.0, 1.0, 0.0);
        p.add_le(vec![(g, 1.0), (t, -1.0), (z, m)], m);
        p.add_ge(vec![(z, 1.0)], 1.0);
        let s = solve_socp(&p);
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective + 2.0).abs() < 1e-6, "{}", s.objective);
        assert!(s.stationarity_residual(&p).iter().all(|v| v.abs() < 1e-6));
    }
}
