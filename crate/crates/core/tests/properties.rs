//! Property tests over randomly generated radial feeders.

use std::collections::{BTreeMap, VecDeque};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltvar::convexify::assemble_compact;
use voltvar::distflow::{FlowVariables, PerPhase};
use voltvar::netmodel::{BranchFile, BusFile, DgFile, MscFile, NetworkFile, PerUnitBase, SvcFile, VrFile};
use voltvar::robust::device_state;
use voltvar::scenario::forecast;
use voltvar::{build_distflow, power_flow, validate_radial, BusId, DeviceState, Network, Phase};
use voltvar_conic::{solve_misocp, solve_socp, MipOptions};

const ABC: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

/// Random feeder with `n` buses; bus 1 is the PCC and every branch points
/// away from it. Lateral phase sets shrink towards the leaves.
fn random_feeder(seed: u64, n: usize, devices: bool) -> NetworkFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phases: Vec<Vec<Phase>> = vec![ABC.to_vec()];
    let mut buses = vec![BusFile {
        id: BusId(1),
        phases: Some(ABC.to_vec()),
        load_p_pu: BTreeMap::new(),
        load_q_pu: BTreeMap::new(),
        v_min_pu: 0.9,
        v_max_pu: 1.1,
        dg: None,
        svc: None,
        msc: None,
    }];
    let mut branches = Vec::new();
    for j in 1..n {
        let parent = rng.gen_range(0..j);
        let mut ph = phases[parent].clone();
        if ph.len() > 1 && rng.gen_bool(0.3) {
            ph = vec![ph[rng.gen_range(0..ph.len())]];
        }
        let mut load_p = BTreeMap::new();
        let mut load_q = BTreeMap::new();
        for &p in &ph {
            if rng.gen_bool(0.8) {
                let lp = rng.gen_range(0.0..0.04);
                load_p.insert(p, lp);
                load_q.insert(p, lp * rng.gen_range(0.0..0.6));
            }
        }
        let dg = (devices && rng.gen_bool(0.3)).then(|| {
            let q = rng.gen_range(0.0..0.03);
            DgFile { p_pu: ph.iter().map(|&p| (p, rng.gen_range(0.0..0.05))).collect(), q_min_pu: -q, q_max_pu: q }
        });
        let svc = (devices && rng.gen_bool(0.2)).then(|| {
            let q = rng.gen_range(0.0..0.03);
            SvcFile { phases: None, q_min_pu: -q, q_max_pu: q }
        });
        let msc = (devices && rng.gen_bool(0.3)).then(|| MscFile { phases: None, b_pu: rng.gen_range(0.0..0.04) });
        let vr = (devices && j == 1 && rng.gen_bool(0.7)).then(|| VrFile { taps: vec![0.97, 1.0, 1.03] });
        let r: BTreeMap<Phase, f64> = ph.iter().map(|&p| (p, rng.gen_range(0.001..0.03))).collect();
        let x: BTreeMap<Phase, f64> = ph.iter().map(|&p| (p, rng.gen_range(0.001..0.05))).collect();
        branches.push(BranchFile {
            from: BusId(parent as u32 + 1),
            to: BusId(j as u32 + 1),
            r_pu: r,
            x_pu: x,
            i_max_pu: 5.0,
            p_min_pu: None,
            p_max_pu: None,
            q_min_pu: None,
            q_max_pu: None,
            vr,
        });
        buses.push(BusFile {
            id: BusId(j as u32 + 1),
            phases: Some(ph.clone()),
            load_p_pu: load_p,
            load_q_pu: load_q,
            v_min_pu: 0.8,
            v_max_pu: 1.2,
            dg,
            svc,
            msc,
        });
        phases.push(ph);
    }
    NetworkFile {
        base_power_va: 1e6,
        base_voltage_v: 4160.0,
        v_ref_pu: 1.0,
        phases: ABC.to_vec(),
        pcc_bus: Some(BusId(1)),
        buses,
        branches,
    }
}

/// Branch into `j`, if any.
fn parent_branch(net: &Network, j: usize) -> Option<usize> {
    net.branches.iter().position(|b| b.to == j)
}

/// Residual of the branch-flow equations written out directly from named
/// quantities: balances at every non-PCC bus-phase, the voltage drop across
/// every branch-phase (tap ratio applied to the sending end) and the current
/// definition `l v = P² + Q²` for the exact power flow.
fn branch_flow_residual(net: &Network, f: &FlowVariables, d: &[f64], dev: &DeviceState, with_current: bool) -> f64 {
    let comps = voltvar::scenario::components(net);
    let mut wp = vec![[0.0; 3]; net.buses.len()];
    let mut wq = vec![[0.0; 3]; net.buses.len()];
    for (c, v) in comps.iter().zip(d) {
        let k = c.phase.index();
        match c.kind {
            voltvar::ComponentKind::LoadP => wp[c.bus][k] += v,
            voltvar::ComponentKind::LoadQ => wq[c.bus][k] += v,
            voltvar::ComponentKind::GenP => wp[c.bus][k] -= v,
        }
    }
    let mut worst: f64 = 0.0;
    for (j, bus) in net.buses.iter().enumerate() {
        if j == net.pcc {
            continue;
        }
        let up = parent_branch(net, j).unwrap();
        for &ph in &bus.phases {
            let k = ph.index();
            let br = &net.branches[up];
            let (r, x) = (br.r[&ph], br.x[&ph]);
            let (p, q, l) = (f.p[up][k].unwrap(), f.q[up][k].unwrap(), f.l[up][k].unwrap());
            let vj = f.v[j][k].unwrap();
            let mut out_p = 0.0;
            let mut out_q = 0.0;
            for (c, cb) in net.branches.iter().enumerate() {
                if cb.from == j && cb.r.contains_key(&ph) {
                    out_p += f.p[c][k].unwrap();
                    out_q += f.q[c][k].unwrap();
                }
            }
            let qg = dev.q_g[j][k].unwrap_or(0.0) + dev.q_c[j][k].unwrap_or(0.0);
            let cap = match dev.msc_on[j][k] {
                Some(true) => bus.msc.as_ref().unwrap().b_c * vj,
                _ => 0.0,
            };
            worst = worst.max((p - r * l - out_p - wp[j][k]).abs());
            worst = worst.max((q - x * l - out_q - wq[j][k] + qg + cap).abs());
            let vi = f.v[br.from][k].unwrap();
            let tap = dev.tap[up][k].unwrap_or(1.0);
            let drop = tap * tap * vi - 2.0 * (r * p + x * q) + (r * r + x * x) * l;
            worst = worst.max((vj - drop).abs());
            if with_current {
                worst = worst.max((l * vi - p * p - q * q).abs());
            }
        }
    }
    worst
}

fn undirected_tree_oracle(n: usize, edges: &[(usize, usize)]) -> bool {
    if edges.len() + 1 != n {
        return false;
    }
    let mut indeg = vec![0; n];
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
        indeg[b] += 1;
    }
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut q = VecDeque::from([0]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                q.push_back(v);
            }
        }
    }
    seen.iter().all(|&s| s) && indeg[0] == 0 && indeg[1..].iter().all(|&d| d == 1)
}

fn cone_margin(f: &FlowVariables, net: &Network) -> f64 {
    let mut worst = f64::INFINITY;
    for (k, br) in net.branches.iter().enumerate() {
        for ph in br.phases() {
            let i = ph.index();
            let (p, q, l, v) = (f.p[k][i].unwrap(), f.q[k][i].unwrap(), f.l[k][i].unwrap(), f.v[br.from][i].unwrap());
            let norm = ((2.0 * p).powi(2) + (2.0 * q).powi(2) + (l - v).powi(2)).sqrt();
            worst = worst.min(l + v - norm);
        }
    }
    worst
}

fn per_phase_sum(values: &[PerPhase<f64>], k: usize) -> f64 {
    values.iter().filter_map(|v| v[k]).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn json_round_trip_preserves_the_network(seed in any::<u64>(), n in 2usize..20) {
        let net = Network::from_file(random_feeder(seed, n, true)).unwrap();
        let again = Network::from_json_str(&net.to_json_string()).unwrap();
        prop_assert_eq!(&again, &net);
        prop_assert_eq!(again.to_file(), net.to_file());
    }

    #[test]
    fn per_unit_conversions_invert(
        power in 1e3f64..1e9,
        volts in 100.0f64..5e5,
        value in 1e-6f64..1e6,
    ) {
        let b = PerUnitBase { power_va: power, voltage_v: volts };
        let rel = |a: f64| (a - value).abs() / value;
        prop_assert!(rel(b.impedance_from_pu(b.impedance_to_pu(value))) < 1e-12);
        prop_assert!(rel(b.current_from_pu(b.current_to_pu(value))) < 1e-12);
        prop_assert!(rel(b.power_from_pu(b.power_to_pu(value))) < 1e-12);
        prop_assert!(rel(b.voltage_from_pu(b.voltage_to_pu(value))) < 1e-12);
    }

    #[test]
    fn radial_check_accepts_exactly_the_spanning_trees(
        seed in any::<u64>(),
        n in 2usize..15,
        drop_edge in proptest::option::of(0usize..14),
        extra in proptest::option::of((0usize..15, 0usize..15)),
    ) {
        let mut file = random_feeder(seed, n, false);
        if let Some(k) = drop_edge.filter(|&k| k < file.branches.len()) {
            file.branches.remove(k);
        }
        if let Some((a, b)) = extra {
            let (a, b) = (a % n, b % n);
            if a < b {
                let mut br = file.branches.first().cloned().unwrap_or_else(|| random_feeder(seed, 2, false).branches[0].clone());
                br.from = BusId(a as u32 + 1);
                br.to = BusId(b as u32 + 1);
                br.r_pu = ABC.iter().map(|&p| (p, 0.01)).collect();
                br.x_pu = br.r_pu.clone();
                file.branches.push(br);
            }
        }
        let edges: Vec<(usize, usize)> =
            file.branches.iter().map(|b| (b.from.0 as usize - 1, b.to.0 as usize - 1)).collect();
        let expected = undirected_tree_oracle(n, &edges);
        let built = Network::from_file(file);
        match &built {
            Ok(net) => {
                prop_assert!(expected);
                prop_assert_eq!(validate_radial(net).unwrap().len(), n - 1);
            }
            // A tree can still be rejected for phase reasons once a branch is
            // rewired; only topology errors have to match the oracle.
            Err(voltvar::NetworkError::Topology { .. }) => prop_assert!(!expected),
            Err(_) => {}
        }
    }

    #[test]
    fn power_flow_conserves_power_per_phase(seed in any::<u64>(), n in 2usize..25) {
        let net = Network::from_file(random_feeder(seed, n, true)).unwrap();
        let d = forecast(&net);
        let f = power_flow(&net, &d, &DeviceState::idle(&net)).unwrap();
        for ph in ABC {
            let k = ph.index();
            let loss: f64 = net
                .branches
                .iter()
                .enumerate()
                .filter_map(|(b, br)| br.r.get(&ph).map(|r| r * f.l[b][k].unwrap()))
                .sum();
            prop_assert!((per_phase_sum(&f.p_inj, k) - loss).abs() < 1e-9);
        }
        prop_assert!(branch_flow_residual(&net, &f, &d, &DeviceState::idle(&net), true) < 1e-9);
    }

    #[test]
    fn relaxed_solutions_conserve_power_and_sit_in_the_cone(seed in any::<u64>(), n in 2usize..12) {
        let net = Network::from_file(random_feeder(seed, n, false)).unwrap();
        let d = forecast(&net);
        let block = build_distflow(&net, &d).unwrap();
        let sol = solve_socp(&block.to_program());
        prop_assert!(sol.is_optimal());
        let f = FlowVariables::from_y(&net, &block.layout, &sol.x, &d);
        prop_assert!(cone_margin(&f, &net) >= -1e-8);
        for ph in ABC {
            let k = ph.index();
            let loss: f64 = net
                .branches
                .iter()
                .enumerate()
                .filter_map(|(b, br)| br.r.get(&ph).map(|r| r * f.l[b][k].unwrap()))
                .sum();
            prop_assert!((per_phase_sum(&f.p_inj, k) - loss).abs() < 1e-7);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn compact_solutions_satisfy_the_named_branch_flow_rows(seed in any::<u64>(), n in 2usize..9) {
        let net = Network::from_file(random_feeder(seed, n, true)).unwrap();
        let d = forecast(&net);
        let m = assemble_compact(&net, &d).unwrap();
        let sol = solve_misocp(&m.deterministic_program(&d), &MipOptions::default());
        prop_assert!(sol.objective.is_finite());
        let x = m.x_domain.round(&sol.x[..m.nx()]);
        let y = &sol.x[m.nx()..];
        let f = FlowVariables::from_y(&net, &m.layout, y, &d);
        let dev = device_state(&m, &x, y);
        prop_assert!(branch_flow_residual(&net, &f, &d, &dev, false) < 1e-7);
    }
}
