//! Fixtures shared by the integration tests.

#![allow(dead_code)]

use voltvar::convexify::assemble_compact;
use voltvar::{CompactModel, Network};

/// Two loads behind a three-tap regulator; the far bus carries a capacitor
/// bank and a DG. Five uncertain components.
pub fn three_bus(v_lo: f64, v_hi: f64, dg_q: f64) -> Network {
    let text = format!(
        r#"{{
        "base_power_va": 1e6, "base_voltage_v": 12660, "v_ref_pu": 1.0,
        "phases": ["a"], "pcc_bus": 1,
        "buses": [
            {{"id": 1, "v_min_pu": 0.9, "v_max_pu": 1.1}},
            {{"id": 2, "load_p_pu": {{"a": 0.08}}, "load_q_pu": {{"a": 0.04}}, "v_min_pu": {v_lo}, "v_max_pu": {v_hi}}},
            {{"id": 3, "load_p_pu": {{"a": 0.06}}, "load_q_pu": {{"a": 0.03}}, "v_min_pu": {v_lo}, "v_max_pu": {v_hi},
             "msc": {{"b_pu": 0.1}},
             "dg": {{"p_pu": {{"a": 0.12}}, "q_min_pu": -{dg_q}, "q_max_pu": {dg_q}}}}}
        ],
        "branches": [
            {{"from": 1, "to": 2, "r_pu": {{"a": 0.05}}, "x_pu": {{"a": 0.08}}, "i_max_pu": 5,
              "vr": {{"taps": [0.97, 1.0, 1.03]}}}},
            {{"from": 2, "to": 3, "r_pu": {{"a": 0.2}}, "x_pu": {{"a": 0.3}}, "i_max_pu": 5}}
        ]
    }}"#
    );
    Network::from_json_str(&text).unwrap()
}

pub fn toy() -> CompactModel {
    let net = three_bus(0.95, 1.05, 0.03);
    let d0 = voltvar::scenario::forecast(&net);
    assemble_compact(&net, &d0).unwrap()
}

/// The same feeder with reactive loads removed, far bus first, leaving
/// `n` uncertain components (`3 ≤ n ≤ 5`).
pub fn toy_with_components(n: usize) -> CompactModel {
    assert!((3..=5).contains(&n));
    let mut net = three_bus(0.95, 1.05, 0.03);
    if n <= 4 {
        net.buses[2].load_q.clear();
    }
    if n == 3 {
        net.buses[1].load_q.clear();
    }
    let d0 = voltvar::scenario::forecast(&net);
    assemble_compact(&net, &d0).unwrap()
}
