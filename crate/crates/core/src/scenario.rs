//! Uncertain injection components and realized scenarios.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::netmodel::{Network, Phase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComponentKind {
    /// Active load.
    #[serde(rename = "P_D")]
    LoadP,
    /// Reactive load.
    #[serde(rename = "Q_D")]
    LoadQ,
    /// DG active output.
    #[serde(rename = "P_G")]
    GenP,
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComponentKind::LoadP => "P_D",
            ComponentKind::LoadQ => "Q_D",
            ComponentKind::GenP => "P_G",
        })
    }
}

/// One entry of the injection vector `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Component {
    /// Bus index into [`Network::buses`].
    pub bus: usize,
    pub phase: Phase,
    pub kind: ComponentKind,
}

/// Enumerates the injection components of a network: for every non-PCC bus
/// and phase, `P_D` and `Q_D` when the bus lists a load on that phase and
/// `P_G` when it hosts a DG on that phase. The PCC is the slack bus and has
/// no balance row, so its injections are not modelled.
pub fn components(net: &Network) -> Vec<Component> {
    let mut out = Vec::new();
    for (b, bus) in net.buses.iter().enumerate() {
        if b == net.pcc {
            continue;
        }
        for &phase in &bus.phases {
            if bus.load_p.contains_key(&phase) {
                out.push(Component { bus: b, phase, kind: ComponentKind::LoadP });
            }
            if bus.load_q.contains_key(&phase) {
                out.push(Component { bus: b, phase, kind: ComponentKind::LoadQ });
            }
            if bus.dg.as_ref().is_some_and(|dg| dg.p_forecast.contains_key(&phase)) {
                out.push(Component { bus: b, phase, kind: ComponentKind::GenP });
            }
        }
    }
    out
}

/// Forecast value of each component, in the order of [`components`].
pub fn forecast(net: &Network) -> Vec<f64> {
    components(net)
        .iter()
        .map(|c| {
            let bus = &net.buses[c.bus];
            match c.kind {
                ComponentKind::LoadP => bus.load_p[&c.phase],
                ComponentKind::LoadQ => bus.load_q[&c.phase],
                ComponentKind::GenP => bus.dg.as_ref().map_or(0.0, |dg| dg.p_forecast[&c.phase]),
            }
        })
        .collect()
}

/// A realization of the injection vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub label: String,
    pub d: Vec<f64>,
}

impl Scenario {
    pub fn new(label: impl Into<String>, d: Vec<f64>) -> Self {
        Self { label: label.into(), d }
    }

    pub fn forecast(net: &Network) -> Self {
        Self::new("forecast", forecast(net))
    }

    /// Scales loads and DG output of `base` by separate multipliers.
    pub fn scaled(
        label: impl Into<String>,
        comps: &[Component],
        base: &[f64],
        load_mult: f64,
        gen_mult: f64,
    ) -> Self {
        let d = comps
            .iter()
            .zip(base)
            .map(|(c, v)| match c.kind {
                ComponentKind::GenP => v * gen_mult,
                _ => v * load_mult,
            })
            .collect();
        Self::new(label, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcc_injections_are_skipped_and_dg_phases_follow_the_map() {
        let text = r#"{
            "base_power_va": 1e6, "base_voltage_v": 4160, "v_ref_pu": 1.0,
            "phases": ["a", "b"], "pcc_bus": 1,
            "buses": [
                {"id": 1, "load_p_pu": {"a": 0.5}, "v_min_pu": 0.9, "v_max_pu": 1.1},
                {"id": 2, "load_p_pu": {"a": 0.1, "b": 0.2}, "load_q_pu": {"b": 0.05},
                 "dg": {"p_pu": {"b": 0.3}, "q_min_pu": -0.1, "q_max_pu": 0.1},
                 "v_min_pu": 0.9, "v_max_pu": 1.1}
            ],
            "branches": [{"from": 1, "to": 2, "r_pu": {"a": 0.01, "b": 0.01},
                          "x_pu": {"a": 0.02, "b": 0.02}, "i_max_pu": 5}]
        }"#;
        let net = Network::from_json_str(text).unwrap();
        let comps = components(&net);
        let kinds: Vec<_> = comps.iter().map(|c| (c.phase, c.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (Phase::A, ComponentKind::LoadP),
                (Phase::B, ComponentKind::LoadP),
                (Phase::B, ComponentKind::LoadQ),
                (Phase::B, ComponentKind::GenP),
            ]
        );
        assert_eq!(forecast(&net), vec![0.1, 0.2, 0.05, 0.3]);
        let s = Scenario::scaled("stress", &comps, &forecast(&net), 0.5, 1.5);
        assert!((s.d[3] - 0.45).abs() < 1e-15);
        assert!((s.d[0] - 0.05).abs() < 1e-15);
    }
}
