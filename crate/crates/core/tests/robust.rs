//! Small feeders where every robust quantity can be brute-forced.

use voltvar::convexify::assemble_compact;
use voltvar::robust::{
    build_master, ccg_solve, dual_at, dualize_subproblem, fast_control, solve_dvo, solve_master, solve_subproblem,
    BoundClass, BoxUncertainty, FastController, RecourseStatus, RobustError, RobustOptions, SubproblemMethod,
};
use voltvar::CompactModel;

mod common;
use common::{three_bus, toy};
use voltvar_conic::{solve_socp, ClarabelBackend, SocpBackend};

fn vertices(n: usize) -> Vec<Vec<bool>> {
    (0..1u32 << n).map(|c| (0..n).map(|i| c >> (n - 1 - i) & 1 == 1).collect()).collect()
}

fn recourse(m: &CompactModel, x: &[f64], d: &[f64]) -> f64 {
    let s = solve_socp(&m.recourse_program(x, d));
    if s.is_optimal() {
        s.objective
    } else {
        f64::INFINITY
    }
}

/// `min_x max_vertex` by enumeration of both.
fn brute_force(m: &CompactModel, u: &BoxUncertainty) -> f64 {
    let n = u.uncertain().len();
    m.x_domain
        .enumerate()
        .iter()
        .map(|x| vertices(n).iter().map(|b| recourse(m, x, &u.vertex(b))).fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn dual_value_matches_primal_recourse() {
    let m = toy();
    let u = BoxUncertainty::from_volatility(&m.d0, 0.3).unwrap();
    for x in m.x_domain.enumerate() {
        for bits in vertices(5).iter().step_by(7) {
            let d = u.vertex(bits);
            let primal = recourse(&m, &x, &d);
            let dual = dual_at(&m, &x, &d, 1e6);
            let s = solve_socp(&dual.program);
            assert!(s.is_optimal());
            let v = dual.value(&s.x);
            if primal.is_finite() {
                assert!((v - primal).abs() < 1e-6 * (1.0 + primal.abs()), "x={x:?} d={d:?}: {v} vs {primal}");
            } else {
                assert!(v > 1.0, "infeasible recourse must have a large capped dual, got {v}");
            }
        }
    }
}

#[test]
fn linearized_dual_agrees_with_each_vertex() {
    let m = toy();
    let u = BoxUncertainty::from_volatility(&m.d0, 0.3).unwrap();
    let x = m.x_domain.encode(&[true], &[1]);
    let lin = dualize_subproblem(&m, &x, &u, 1e6, 1e6);
    assert_eq!(lin.zeta.len(), 5);
    let backend = ClarabelBackend::default();
    for bits in vertices(5) {
        let (mut lo, mut hi) = (lin.program.lower.clone(), lin.program.upper.clone());
        for (&z, &b) in lin.zeta.iter().zip(&bits) {
            lo[z] = b as u8 as f64;
            hi[z] = lo[z];
        }
        let s = backend.solve_with_bounds(&lin.program, &lo, &hi);
        assert!(s.is_optimal());
        let fixed = dual_at(&m, &x, &u.vertex(&bits), 1e6);
        let f = solve_socp(&fixed.program);
        let (a, b) = (lin.value(&s.x), fixed.value(&f.x));
        assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()), "{bits:?}: {a} vs {b}");
        let cert = lin.certificate(&s.x, &bits);
        assert!(cert.check.bilinear < 1e-5, "{:?}", cert.check);
    }
}

#[test]
fn subproblem_methods_find_the_enumerated_worst_case() {
    let m = toy();
    let u = BoxUncertainty::from_volatility(&m.d0, 0.3).unwrap();
    let fast = FastController::new(&m, 1e-5).unwrap();
    for x in m.x_domain.enumerate() {
        let oracle = vertices(5).iter().map(|b| recourse(&m, &x, &u.vertex(b))).fold(f64::NEG_INFINITY, f64::max);
        for method in [SubproblemMethod::Enumerate, SubproblemMethod::DualBnb, SubproblemMethod::Heuristic] {
            let opts = RobustOptions { subproblem: method, ..Default::default() };
            let r = solve_subproblem(&m, &x, &u, &opts, &fast).unwrap();
            if method != SubproblemMethod::Heuristic {
                assert!(r.certified);
            }
            if oracle.is_finite() {
                let ok = (r.value - oracle).abs() < 1e-6 * (1.0 + oracle.abs());
                assert!(ok || method == SubproblemMethod::Heuristic, "{method:?} x={x:?}: {} vs {oracle}", r.value);
                assert!((r.dual_value - r.value).abs() < 1e-5 * (1.0 + oracle.abs()));
                assert!(r.certificate.check.max() < 1e-5, "{:?}", r.certificate.check);
            } else {
                assert!(r.value.is_infinite(), "{method:?} x={x:?}: {}", r.value);
            }
        }
    }
}

#[test]
fn master_matches_enumeration_over_two_scenarios() {
    let m = toy();
    let u = BoxUncertainty::from_volatility(&m.d0, 0.3).unwrap();
    let scen = vec![u.vertex(&[false, false, true, true, false]), u.vertex(&[true, true, false, false, true])];
    let oracle = m
        .x_domain
        .enumerate()
        .iter()
        .map(|x| scen.iter().map(|d| recourse(&m, x, d)).fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min);
    let master = build_master(&m, &scen);
    let s = solve_master(&master, &RobustOptions::default().mip, None);
    assert!(s.is_optimal());
    assert!((s.x[master.eta] - oracle).abs() < 1e-6, "{} vs {oracle}", s.x[master.eta]);
    assert!(master.eta_bound(&s) <= oracle + 1e-7);
}

#[test]
fn ccg_matches_brute_force_min_max() {
    let m = toy();
    for nu in [0.1, 0.3, 0.5] {
        let u = BoxUncertainty::from_volatility(&m.d0, nu).unwrap();
        let oracle = brute_force(&m, &u);
        let r = ccg_solve(&m, &u, &RobustOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.certified);
        assert!((r.objective - oracle).abs() < 1e-4 + 1e-6, "ν={nu}: {} vs {oracle}", r.objective);
        assert!(r.state.iteration <= (1 << 5) + 1);
        for t in &r.state.trace {
            assert!(t.lb <= t.ub + 1e-4);
        }
        for w in r.state.trace.windows(2) {
            assert!(w[1].lb >= w[0].lb - 1e-12 && w[1].ub <= w[0].ub + 1e-12);
        }
    }
}

#[test]
fn zero_volatility_reduces_to_the_deterministic_dispatch() {
    let m = toy();
    let u = BoxUncertainty::from_volatility(&m.d0, 0.0).unwrap();
    let r = ccg_solve(&m, &u, &RobustOptions::default()).unwrap();
    let dvo = solve_dvo(&m, &RobustOptions::default()).unwrap();
    assert_eq!(r.state.iteration, 1);
    assert!((r.objective - dvo.loss).abs() < 1e-6, "{} vs {}", r.objective, dvo.loss);
}

#[test]
fn impossible_band_reports_the_binding_class() {
    let net = three_bus(0.99, 1.0, 0.0);
    let mut net = net;
    // Heavy load that no setting can hold above 0.99 p.u.
    net.buses[2].load_p.insert(voltvar::Phase::A, 0.4);
    let d0 = voltvar::scenario::forecast(&net);
    let m = assemble_compact(&net, &d0).unwrap();
    let u = BoxUncertainty::from_volatility(&m.d0, 0.1).unwrap();
    match ccg_solve(&m, &u, &RobustOptions::default()) {
        Err(RobustError::Infeasible { iteration, diagnosis }) => {
            assert_eq!(iteration, 1);
            assert!(diagnosis.binding.contains(&BoundClass::Voltage), "{diagnosis}");
        }
        other => panic!("expected infeasibility, got {other:?}"),
    }
}

#[test]
fn fast_control_reports_overvoltage_when_recourse_fails() {
    let m = toy();
    // Capacitor on, top tap, low load and high DG output.
    let x = m.x_domain.encode(&[true], &[2]);
    let u = BoxUncertainty::from_volatility(&m.d0, 0.5).unwrap();
    let d = u.vertex(&[false, false, false, false, true]);
    let r = fast_control(&m, &x, &d).unwrap();
    assert_eq!(r.status, RecourseStatus::Infeasible);
    assert!(r.check.overvoltage_buses > 0);
    assert!(r.check.max_violation > 0.0);
    assert!(r.loss.is_infinite());
}

#[test]
fn iterations_stay_within_the_vertex_count() {
    for n in [3, 4] {
        let m = common::toy_with_components(n);
        assert_eq!(m.nd(), n);
        for nu in [0.2, 0.5] {
            let u = BoxUncertainty::from_volatility(&m.d0, nu).unwrap();
            let r = ccg_solve(&m, &u, &RobustOptions::default()).unwrap();
            assert!(r.converged);
            assert!(r.state.iteration <= (1 << n) + 1, "n={n} ν={nu}: {} iterations", r.state.iteration);
            assert!((r.objective - brute_force(&m, &u)).abs() < 1e-4 + 1e-6);
        }
    }
}

#[test]
fn robust_dispatch_covers_sampled_injections() {
    let m = toy();
    let u = BoxUncertainty::from_volatility(&m.d0, 0.3).unwrap();
    let r = ccg_solve(&m, &u, &RobustOptions::default()).unwrap();
    assert!(r.converged);
    let x = &r.dispatch.x;

    // the worst case is a vertex of the box and the dispatch survives it
    for (i, v) in r.worst_d.iter().enumerate() {
        assert!(*v == u.d_lo[i] || *v == u.d_hi[i], "component {i} = {v} is not at a bound");
    }
    let at_worst = fast_control(&m, x, &r.worst_d).unwrap();
    assert!(at_worst.is_feasible());

    for s in voltvar::harness::sample_scenarios(&u, 50, 7) {
        let out = fast_control(&m, x, &s.d).unwrap();
        assert!(out.is_feasible(), "{}", s.label);
        assert!(out.loss <= r.objective + 1e-6, "{}: {} > {}", s.label, out.loss, r.objective);
    }

    let dvo = solve_dvo(&m, &RobustOptions::default()).unwrap();
    assert!(r.objective >= dvo.loss - 1e-9);
}
