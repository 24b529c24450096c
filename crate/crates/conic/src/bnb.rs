//! Best-bound branch-and-bound over binary variables, with each node's
//! continuous relaxation solved by an [`SocpBackend`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::program::ConicProgram;
use crate::socp::{ClarabelBackend, PrimalDualSolution, SocpBackend, SocpOptions, SolveStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MipOptions {
    pub node_limit: usize,
    /// Absolute optimality gap. `None` means `rel_gap·|incumbent| + abs_floor`.
    pub abs_gap: Option<f64>,
    pub rel_gap: f64,
    pub abs_floor: f64,
    pub int_tol: f64,
    /// Open nodes solved per round. Results are processed in pop order, so a
    /// fixed worker count gives a fixed search.
    pub workers: usize,
    pub socp: SocpOptions,
}

impl Default for MipOptions {
    fn default() -> Self {
        Self {
            node_limit: 20_000,
            abs_gap: None,
            rel_gap: 1e-6,
            abs_floor: 1e-9,
            int_tol: 1e-6,
            workers: 1,
            socp: SocpOptions::default(),
        }
    }
}

impl MipOptions {
    pub fn gap_tolerance(&self, incumbent: f64) -> f64 {
        self.abs_gap.unwrap_or(self.rel_gap * incumbent.abs() + self.abs_floor)
    }
}

/// A 0/1 assignment for (some of) the binaries, tried as an incumbent.
pub type MipStart = Vec<(usize, f64)>;

pub fn solve_misocp(p: &ConicProgram, opts: &MipOptions) -> PrimalDualSolution {
    solve_misocp_with(&ClarabelBackend::new(opts.socp.clone()), p, opts, &[])
}

#[derive(Clone, Debug)]
struct Node {
    id: u64,
    bound: f64,
    fixings: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

struct Search<'a, B: SocpBackend> {
    backend: &'a B,
    p: &'a ConicProgram,
    opts: &'a MipOptions,
    group_of: Vec<Option<usize>>,
    incumbent: Option<PrimalDualSolution>,
    socp_solves: usize,
    numerical_failures: usize,
    reduced_accuracy: bool,
}

impl<'a, B: SocpBackend> Search<'a, B> {
    fn bounds_for(&self, fixings: &[(usize, f64)]) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.p.lower.clone();
        let mut hi = self.p.upper.clone();
        for &(i, v) in fixings {
            lo[i] = v;
            hi[i] = v;
        }
        (lo, hi)
    }

    fn solve(&mut self, fixings: &[(usize, f64)]) -> PrimalDualSolution {
        let (lo, hi) = self.bounds_for(fixings);
        let s = self.backend.solve_with_bounds(self.p, &lo, &hi);
        self.record(&s);
        s
    }

    fn record(&mut self, s: &PrimalDualSolution) {
        self.socp_solves += 1;
        if s.status == SolveStatus::IterationLimit {
            self.numerical_failures += 1;
        }
        self.reduced_accuracy |= s.stats.reduced_accuracy;
    }

    fn incumbent_value(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |s| s.objective)
    }

    fn offer(&mut self, candidate: PrimalDualSolution) {
        if candidate.status == SolveStatus::Optimal && candidate.objective < self.incumbent_value() {
            self.incumbent = Some(candidate);
        }
    }

    /// Fixes every binary to its rounded value and re-solves, so the
    /// incumbent is exactly integral.
    fn polish(&mut self, x: &[f64]) -> PrimalDualSolution {
        let fixings: Vec<(usize, f64)> = self.p.binaries().map(|i| (i, x[i].round())).collect();
        self.solve(&fixings)
    }

    fn rounding_start(&self, x: &[f64]) -> MipStart {
        let mut start: Vec<(usize, f64)> = self.p.binaries().map(|i| (i, x[i].round())).collect();
        for group in &self.p.sos1 {
            let best = group
                .iter()
                .copied()
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if x[b] >= x[i] => Some(b),
                    _ => Some(i),
                });
            for entry in start.iter_mut().filter(|e| group.contains(&e.0)) {
                entry.1 = if Some(entry.0) == best { 1.0 } else { 0.0 };
            }
        }
        start
    }

    /// Most-fractional free binary, ties to the lowest index.
    fn branching_candidate(&self, x: &[f64], fixed: &[bool]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in self.p.binaries() {
            if fixed[i] {
                continue;
            }
            let frac = x[i].min(1.0 - x[i]);
            if frac > self.opts.int_tol && best.is_none_or(|(_, f)| frac > f) {
                best = Some((i, frac));
            }
        }
        best.map(|(i, _)| i)
    }

    fn children(&self, node: &Node, bound: f64, x: &[f64], var: usize, next_id: &mut u64) -> Vec<Node> {
        let mut fixed = vec![false; self.p.num_vars()];
        for &(i, _) in &node.fixings {
            fixed[i] = true;
        }
        let mut make = |extra: Vec<(usize, f64)>| {
            let mut fixings = node.fixings.clone();
            fixings.extend(extra);
            *next_id += 1;
            Node { id: *next_id, bound, fixings }
        };
        if let Some(g) = self.group_of[var] {
            let free: Vec<usize> = self.p.sos1[g].iter().copied().filter(|&i| !fixed[i]).collect();
            if free.len() > 2 {
                let mut cum = 0.0;
                let mut split = 0;
                for (k, &i) in free.iter().enumerate() {
                    cum += x[i].max(0.0);
                    split = k;
                    if cum >= 0.5 {
                        break;
                    }
                }
                let split = split.min(free.len() - 2);
                let (left, right) = free.split_at(split + 1);
                return vec![
                    make(right.iter().map(|&i| (i, 0.0)).collect()),
                    make(left.iter().map(|&i| (i, 0.0)).collect()),
                ];
            }
        }
        vec![make(vec![(var, 0.0)]), make(vec![(var, 1.0)])]
    }
}

/// Branch-and-bound with a caller-supplied backend and optional starts.
pub fn solve_misocp_with<B: SocpBackend>(
    backend: &B,
    p: &ConicProgram,
    opts: &MipOptions,
    starts: &[MipStart],
) -> PrimalDualSolution {
    if let Err(e) = p.validate() {
        log::error!("invalid conic program: {e}");
        return PrimalDualSolution::empty(SolveStatus::IterationLimit, p);
    }
    let mut group_of = vec![None; p.num_vars()];
    for (g, members) in p.sos1.iter().enumerate() {
        for &i in members {
            group_of[i] = Some(g);
        }
    }
    let mut search = Search {
        backend,
        p,
        opts,
        group_of,
        incumbent: None,
        socp_solves: 0,
        numerical_failures: 0,
        reduced_accuracy: false,
    };

    for start in starts {
        let s = search.solve(start);
        if s.status == SolveStatus::Optimal {
            let s = if p.binaries().all(|i| start.iter().any(|e| e.0 == i)) { s } else { search.polish(&s.x) };
            search.offer(s);
        }
    }

    let mut heap = BinaryHeap::new();
    let mut next_id = 0u64;
    heap.push(Node { id: 0, bound: f64::NEG_INFINITY, fixings: Vec::new() });
    let mut nodes = 0usize;
    let mut root_bound = None;
    let mut pruned_bound = f64::INFINITY;
    let mut hit_limit = false;
    let mut unbounded = false;
    let workers = opts.workers.max(1);

    'outer: while !heap.is_empty() {
        let mut batch = Vec::with_capacity(workers);
        while batch.len() < workers {
            let Some(node) = heap.pop() else { break };
            let inc = search.incumbent_value();
            if node.bound >= inc - opts.gap_tolerance(inc) {
                pruned_bound = pruned_bound.min(node.bound);
                // Every remaining node has a bound at least as large.
                for rest in heap.drain() {
                    pruned_bound = pruned_bound.min(rest.bound);
                }
                break;
            }
            if nodes + batch.len() >= opts.node_limit {
                heap.push(node);
                hit_limit = true;
                break;
            }
            batch.push(node);
        }
        if batch.is_empty() {
            break;
        }

        let results: Vec<PrimalDualSolution> = if batch.len() == 1 {
            let (lo, hi) = search.bounds_for(&batch[0].fixings);
            vec![backend.solve_with_bounds(p, &lo, &hi)]
        } else {
            let bounds: Vec<_> = batch.iter().map(|n| search.bounds_for(&n.fixings)).collect();
            std::thread::scope(|scope| {
                let handles: Vec<_> = bounds
                    .iter()
                    .map(|(lo, hi)| scope.spawn(move || backend.solve_with_bounds(p, lo, hi)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("relaxation worker panicked")).collect()
            })
        };

        for (node, relax) in batch.into_iter().zip(results) {
            search.record(&relax);
            nodes += 1;
            let mut fixed = vec![false; p.num_vars()];
            for &(i, _) in &node.fixings {
                fixed[i] = true;
            }
            match relax.status {
                SolveStatus::Infeasible => continue,
                SolveStatus::Unbounded => {
                    unbounded = true;
                    break 'outer;
                }
                SolveStatus::IterationLimit => {
                    // Unresolved relaxation: keep the parent's bound and split.
                    if let Some(var) = p.binaries().find(|&i| !fixed[i]) {
                        let x = vec![0.5; p.num_vars()];
                        for child in search.children(&node, node.bound, &x, var, &mut next_id) {
                            heap.push(child);
                        }
                    }
                    continue;
                }
                SolveStatus::Optimal => {}
            }
            let bound = relax.objective.max(node.bound);
            if node.id == 0 {
                root_bound = Some(relax.objective);
                let start = search.rounding_start(&relax.x);
                let s = search.solve(&start);
                search.offer(s);
            }
            let inc = search.incumbent_value();
            if bound >= inc - opts.gap_tolerance(inc) {
                pruned_bound = pruned_bound.min(bound);
                continue;
            }
            match search.branching_candidate(&relax.x, &fixed) {
                None => {
                    let exact = p.binaries().all(|i| (relax.x[i] - relax.x[i].round()).abs() <= 1e-9);
                    let candidate = if exact { relax } else { search.polish(&relax.x) };
                    search.offer(candidate);
                }
                Some(var) => {
                    for child in search.children(&node, bound, &relax.x, var, &mut next_id) {
                        heap.push(child);
                    }
                }
            }
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let stats = |s: &mut PrimalDualSolution, search: &Search<B>| {
        s.stats.nodes = nodes;
        s.stats.socp_solves = search.socp_solves;
        s.stats.numerical_failures = search.numerical_failures;
        s.stats.reduced_accuracy = search.reduced_accuracy;
        s.stats.root_bound = root_bound;
    };

    if unbounded {
        let mut s = PrimalDualSolution::empty(SolveStatus::Unbounded, p);
        stats(&mut s, &search);
        return s;
    }
    let Some(mut best) = search.incumbent.take() else {
        let status = if hit_limit || search.numerical_failures > 0 {
            SolveStatus::IterationLimit
        } else {
            SolveStatus::Infeasible
        };
        let mut s = PrimalDualSolution::empty(status, p);
        s.bound = open_bound;
        stats(&mut s, &search);
        return s;
    };
    best.bound = best.objective.min(open_bound).min(pruned_bound);
    if let Some(rb) = root_bound {
        let tol = 1e-6 * (1.0 + best.objective.abs());
        if rb > best.objective + tol {
            log::warn!("root relaxation {rb} exceeds incumbent {}", best.objective);
        }
    }
    best.status = if hit_limit { SolveStatus::IterationLimit } else { SolveStatus::Optimal };
    stats(&mut best, &search);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::LinExpr;

    #[test]
    fn single_binary_rounds_up_when_forced() {
        // minimize β s.t. β ≥ 0.4, β binary -> β = 1.
        let mut p = ConicProgram::new();
        let b = p.add_binary(1.0);
        p.add_ge(vec![(b, 1.0)], 0.4);
        let s = solve_misocp(&p, &MipOptions::default());
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[b] - 1.0).abs() < 1e-9);
        assert!((s.objective - 1.0).abs() < 1e-7);
        assert!(s.stats.root_bound.unwrap() <= s.objective + 1e-7);
    }

    #[test]
    fn infeasible_integer_program() {
        // 0.3 ≤ β ≤ 0.7 has no binary solution.
        let mut p = ConicProgram::new();
        let b = p.add_binary(0.0);
        p.add_ge(vec![(b, 1.0)], 0.3);
        p.add_le(vec![(b, 1.0)], 0.7);
        assert_eq!(solve_misocp(&p, &MipOptions::default()).status, SolveStatus::Infeasible);
    }

    /// Pick one of five points on a line to be closest (Euclidean) to a
    /// target, with the choice encoded one-hot.
    fn one_hot_program(target: (f64, f64)) -> (ConicProgram, Vec<usize>) {
        let pts = [(0.0, 0.0), (1.0, 2.0), (2.0, 0.5), (3.0, 3.0), (4.0, 1.0)];
        let mut p = ConicProgram::new();
        let t = p.add_var(0.0, f64::INFINITY, 1.0);
        let sel: Vec<usize> = pts.iter().map(|_| p.add_binary(0.0)).collect();
        p.add_eq(sel.iter().map(|&i| (i, 1.0)).collect(), 1.0);
        let dx = LinExpr::from_terms(sel.iter().zip(&pts).map(|(&i, q)| (i, q.0)).collect()).with_constant(-target.0);
        let dy = LinExpr::from_terms(sel.iter().zip(&pts).map(|(&i, q)| (i, q.1)).collect()).with_constant(-target.1);
        p.add_cone(LinExpr::var(t), vec![dx, dy]);
        p.sos1.push(sel.clone());
        (p, sel)
    }

    #[test]
    fn sos_branching_matches_enumeration() {
        for target in [(2.6, 2.4), (0.4, 1.5), (3.9, 0.2)] {
            let (p, sel) = one_hot_program(target);
            let s = solve_misocp(&p, &MipOptions::default());
            assert_eq!(s.status, SolveStatus::Optimal);
            let best = (0..sel.len())
                .map(|k| {
                    let fix: Vec<_> = sel.iter().enumerate().map(|(j, &i)| (i, (j == k) as u8 as f64)).collect();
                    let backend = ClarabelBackend::default();
                    let mut lo = p.lower.clone();
                    let mut hi = p.upper.clone();
                    for (i, v) in fix {
                        lo[i] = v;
                        hi[i] = v;
                    }
                    backend.solve_with_bounds(&p, &lo, &hi).objective
                })
                .fold(f64::INFINITY, f64::min);
            assert!((s.objective - best).abs() < 1e-6, "{target:?}: {} vs {best}", s.objective);
        }
    }

    #[test]
    fn node_limit_reports_iteration_limit() {
        let (p, _) = one_hot_program((2.6, 2.4));
        let opts = MipOptions { node_limit: 1, ..MipOptions::default() };
        let s = solve_misocp(&p, &opts);
        assert_eq!(s.status, SolveStatus::IterationLimit);
        assert!(s.bound <= s.objective || s.objective.is_nan());
    }

    #[test]
    fn parallel_workers_agree_with_sequential() {
        let (p, _) = one_hot_program((0.4, 1.5));
        let a = solve_misocp(&p, &MipOptions::default());
        let b = solve_misocp(&p, &MipOptions { workers: 3, ..MipOptions::default() });
        assert!((a.objective - b.objective).abs() < 1e-7);
    }
}
