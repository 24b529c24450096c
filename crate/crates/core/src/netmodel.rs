//! Feeder data model: buses, branches, device placements, per-unit bases and
//! the JSON network format.
//!
//! All electrical quantities are stored per-unit. Phases are modelled
//! independently; there is no mutual coupling between phases of a branch.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::NetworkError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
        })
    }
}

/// Per-phase values keyed by phase.
pub type PhaseMap = BTreeMap<Phase, f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Power and voltage bases. Impedance base is `V²/S`, current base `S/V`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    pub power_va: f64,
    pub voltage_v: f64,
}

impl PerUnitBase {
    pub fn impedance_ohm(&self) -> f64 {
        self.voltage_v * self.voltage_v / self.power_va
    }

    pub fn current_a(&self) -> f64 {
        self.power_va / self.voltage_v
    }

    pub fn power_to_pu(&self, watts: f64) -> f64 {
        watts / self.power_va
    }

    pub fn power_from_pu(&self, pu: f64) -> f64 {
        pu * self.power_va
    }

    pub fn impedance_to_pu(&self, ohm: f64) -> f64 {
        ohm / self.impedance_ohm()
    }

    pub fn impedance_from_pu(&self, pu: f64) -> f64 {
        pu * self.impedance_ohm()
    }

    pub fn current_to_pu(&self, amps: f64) -> f64 {
        amps / self.current_a()
    }

    pub fn current_from_pu(&self, pu: f64) -> f64 {
        pu * self.current_a()
    }

    pub fn voltage_to_pu(&self, volts: f64) -> f64 {
        volts / self.voltage_v
    }

    pub fn voltage_from_pu(&self, pu: f64) -> f64 {
        pu * self.voltage_v
    }

    /// Per-unit active power to kW.
    pub fn kw(&self, pu: f64) -> f64 {
        self.power_from_pu(pu) / 1e3
    }
}

/// Reactive source with continuous output (DG inverter or SVC).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactiveLimits {
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceDg {
    /// Forecast active output per phase; the keys are the DG's phases.
    pub p_forecast: PhaseMap,
    pub q: ReactiveLimits,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceSvc {
    pub phases: Vec<Phase>,
    pub q: ReactiveLimits,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceMsc {
    pub phases: Vec<Phase>,
    /// Bank susceptance; reactive injection is `b_c · v` when switched on.
    pub b_c: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceVr {
    /// Allowed turn ratios, strictly increasing.
    pub taps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub phases: Vec<Phase>,
    pub load_p: PhaseMap,
    pub load_q: PhaseMap,
    pub v_min: f64,
    pub v_max: f64,
    pub dg: Option<DeviceDg>,
    pub svc: Option<DeviceSvc>,
    pub msc: Option<DeviceMsc>,
}

impl Bus {
    pub fn has_phase(&self, ph: Phase) -> bool {
        self.phases.contains(&ph)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    /// Index of the parent-side bus in [`Network::buses`].
    pub from: usize,
    pub to: usize,
    pub r: PhaseMap,
    pub x: PhaseMap,
    pub i_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub vr: Option<DeviceVr>,
}

impl Branch {
    pub fn phases(&self) -> impl Iterator<Item = Phase> + '_ {
        self.r.keys().copied()
    }
}

/// Flow bound applied when a branch does not specify one.
pub const DEFAULT_FLOW_LIMIT: f64 = 10.0;

/// A validated radial feeder. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub base: PerUnitBase,
    pub v_ref: f64,
    pub phases: Vec<Phase>,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub pcc: usize,
    /// Branch indices in breadth-first order from the PCC.
    pub order: Vec<usize>,
    /// Branch feeding each bus; `None` only for the PCC.
    pub parent: Vec<Option<usize>>,
    index: HashMap<BusId, usize>,
}

impl Network {
    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.bus_index(id).map(|i| &self.buses[i])
    }

    pub fn pcc_bus(&self) -> BusId {
        self.buses[self.pcc].id
    }

    /// `"from-to"` label of a branch using bus ids.
    pub fn branch_label(&self, k: usize) -> String {
        let br = &self.branches[k];
        format!("{}-{}", self.buses[br.from].id, self.buses[br.to].id)
    }

    pub fn find_branch(&self, from: BusId, to: BusId) -> Option<usize> {
        let (f, t) = (self.bus_index(from)?, self.bus_index(to)?);
        self.branches.iter().position(|b| b.from == f && b.to == t)
    }

    /// Child branches of each bus.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.buses.len()];
        for (k, br) in self.branches.iter().enumerate() {
            ch[br.from].push(k);
        }
        ch
    }

    pub fn bus_phase_count(&self) -> usize {
        self.buses.iter().map(|b| b.phases.len()).sum()
    }

    pub fn branch_phase_count(&self) -> usize {
        self.branches.iter().map(|b| b.r.len()).sum()
    }

    pub fn from_json_str(text: &str) -> Result<Self, NetworkError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: NetworkFile = serde_path_to_error::deserialize(de).map_err(|e| NetworkError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("network file is always serializable")
    }

    /// Builds and validates a network from its file representation.
    pub fn from_file(file: NetworkFile) -> Result<Self, NetworkError> {
        let cfg = |path: String, message: String| NetworkError::Parse { path, message };
        if !(file.base_power_va > 0.0 && file.base_power_va.is_finite()) {
            return Err(cfg("base_power_va".into(), "must be positive".into()));
        }
        if !(file.base_voltage_v > 0.0 && file.base_voltage_v.is_finite()) {
            return Err(cfg("base_voltage_v".into(), "must be positive".into()));
        }
        if !(file.v_ref_pu > 0.0) {
            return Err(cfg("v_ref_pu".into(), "must be positive".into()));
        }
        if file.phases.is_empty() {
            return Err(cfg("phases".into(), "at least one phase is required".into()));
        }
        let pcc_id = file
            .pcc_bus
            .ok_or_else(|| NetworkError::Config("no PCC bus declared (field `pcc_bus`)".into()))?;

        let mut index = HashMap::new();
        let mut buses = Vec::with_capacity(file.buses.len());
        for (k, b) in file.buses.into_iter().enumerate() {
            let at = |field: &str| format!("buses[{k}].{field}");
            if index.insert(b.id, k).is_some() {
                return Err(cfg(at("id"), format!("duplicate bus id {}", b.id)));
            }
            let phases = b.phases.unwrap_or_else(|| file.phases.clone());
            if phases.is_empty() {
                return Err(cfg(at("phases"), "bus carries no phase".into()));
            }
            if let Some(ph) = phases.iter().find(|p| !file.phases.contains(p)) {
                return Err(cfg(at("phases"), format!("phase {ph} not in network phases")));
            }
            if !(b.v_min_pu > 0.0 && b.v_min_pu < b.v_max_pu) {
                return Err(cfg(at("v_min_pu"), format!("need 0 < v_min < v_max, got {} / {}", b.v_min_pu, b.v_max_pu)));
            }
            let check_keys = |map: &PhaseMap, field: &str| -> Result<(), NetworkError> {
                match map.keys().find(|p| !phases.contains(p)) {
                    Some(ph) => Err(cfg(at(field), format!("phase {ph} not present at bus {}", b.id))),
                    None => Ok(()),
                }
            };
            check_keys(&b.load_p_pu, "load_p_pu")?;
            check_keys(&b.load_q_pu, "load_q_pu")?;
            let dg = match b.dg {
                Some(dg) => {
                    check_keys(&dg.p_pu, "dg.p_pu")?;
                    if dg.p_pu.is_empty() {
                        return Err(cfg(at("dg.p_pu"), "DG must declare at least one phase".into()));
                    }
                    if dg.q_min_pu > dg.q_max_pu {
                        return Err(cfg(at("dg.q_min_pu"), "q_min exceeds q_max".into()));
                    }
                    Some(DeviceDg {
                        p_forecast: dg.p_pu,
                        q: ReactiveLimits { q_min: dg.q_min_pu, q_max: dg.q_max_pu },
                    })
                }
                None => None,
            };
            let svc = match b.svc {
                Some(svc) => {
                    let ph = svc.phases.unwrap_or_else(|| phases.clone());
                    if let Some(p) = ph.iter().find(|p| !phases.contains(p)) {
                        return Err(cfg(at("svc.phases"), format!("phase {p} not present at bus {}", b.id)));
                    }
                    if svc.q_min_pu > svc.q_max_pu {
                        return Err(cfg(at("svc.q_min_pu"), "q_min exceeds q_max".into()));
                    }
                    Some(DeviceSvc { phases: ph, q: ReactiveLimits { q_min: svc.q_min_pu, q_max: svc.q_max_pu } })
                }
                None => None,
            };
            let msc = match b.msc {
                Some(msc) => {
                    let ph = msc.phases.unwrap_or_else(|| phases.clone());
                    if let Some(p) = ph.iter().find(|p| !phases.contains(p)) {
                        return Err(cfg(at("msc.phases"), format!("phase {p} not present at bus {}", b.id)));
                    }
                    if !(msc.b_pu > 0.0) {
                        return Err(cfg(at("msc.b_pu"), "susceptance must be positive".into()));
                    }
                    Some(DeviceMsc { phases: ph, b_c: msc.b_pu })
                }
                None => None,
            };
            buses.push(Bus {
                id: b.id,
                phases,
                load_p: b.load_p_pu,
                load_q: b.load_q_pu,
                v_min: b.v_min_pu,
                v_max: b.v_max_pu,
                dg,
                svc,
                msc,
            });
        }
        let pcc = *index
            .get(&pcc_id)
            .ok_or_else(|| NetworkError::Config(format!("PCC bus {pcc_id} is not among the buses")))?;

        let mut branches = Vec::with_capacity(file.branches.len());
        for (k, br) in file.branches.into_iter().enumerate() {
            let at = |field: &str| format!("branches[{k}].{field}");
            let from = *index.get(&br.from).ok_or_else(|| cfg(at("from"), format!("unknown bus {}", br.from)))?;
            let to = *index.get(&br.to).ok_or_else(|| cfg(at("to"), format!("unknown bus {}", br.to)))?;
            if br.r_pu.is_empty() {
                return Err(cfg(at("r_pu"), "branch carries no phase".into()));
            }
            if br.r_pu.keys().ne(br.x_pu.keys()) {
                return Err(cfg(at("x_pu"), "r_pu and x_pu must list the same phases".into()));
            }
            for ph in br.r_pu.keys() {
                if !buses[from].has_phase(*ph) || !buses[to].has_phase(*ph) {
                    return Err(cfg(at("r_pu"), format!("phase {ph} missing at an end bus")));
                }
            }
            if let Some((ph, r)) = br.r_pu.iter().find(|(_, r)| !(**r >= 0.0)) {
                return Err(cfg(at("r_pu"), format!("negative resistance {r} on phase {ph}")));
            }
            if let Some((ph, x)) = br.x_pu.iter().find(|(_, x)| !x.is_finite()) {
                return Err(cfg(at("x_pu"), format!("non-finite reactance {x} on phase {ph}")));
            }
            if !(br.i_max_pu > 0.0) {
                return Err(cfg(at("i_max_pu"), "ampacity must be positive".into()));
            }
            let p_min = br.p_min_pu.unwrap_or(-DEFAULT_FLOW_LIMIT);
            let p_max = br.p_max_pu.unwrap_or(DEFAULT_FLOW_LIMIT);
            let q_min = br.q_min_pu.unwrap_or(-DEFAULT_FLOW_LIMIT);
            let q_max = br.q_max_pu.unwrap_or(DEFAULT_FLOW_LIMIT);
            if p_min > p_max {
                return Err(cfg(at("p_min_pu"), "p_min exceeds p_max".into()));
            }
            if q_min > q_max {
                return Err(cfg(at("q_min_pu"), "q_min exceeds q_max".into()));
            }
            let vr = match br.vr {
                Some(vr) => {
                    if vr.taps.len() < 2 {
                        return Err(cfg(at("vr.taps"), "a regulator needs at least two taps".into()));
                    }
                    if vr.taps.iter().any(|t| !(*t > 0.0)) || vr.taps.windows(2).any(|w| w[1] <= w[0]) {
                        return Err(cfg(at("vr.taps"), "taps must be positive and strictly increasing".into()));
                    }
                    Some(DeviceVr { taps: vr.taps })
                }
                None => None,
            };
            branches.push(Branch {
                from,
                to,
                r: br.r_pu,
                x: br.x_pu,
                i_max: br.i_max_pu,
                p_min,
                p_max,
                q_min,
                q_max,
                vr,
            });
        }

        let mut net = Network {
            base: PerUnitBase { power_va: file.base_power_va, voltage_v: file.base_voltage_v },
            v_ref: file.v_ref_pu,
            phases: file.phases,
            buses,
            branches,
            pcc,
            order: Vec::new(),
            parent: Vec::new(),
            index,
        };
        net.order = validate_radial(&net)?;
        let mut parent = vec![None; net.buses.len()];
        for &k in &net.order {
            parent[net.branches[k].to] = Some(k);
        }
        net.parent = parent;
        for (j, bus) in net.buses.iter().enumerate() {
            let Some(k) = net.parent[j] else { continue };
            if let Some(ph) = bus.phases.iter().find(|p| !net.branches[k].r.contains_key(p)) {
                return Err(NetworkError::Config(format!(
                    "bus {} carries phase {ph} but its feeding branch {} does not",
                    bus.id,
                    net.branch_label(k)
                )));
            }
        }
        Ok(net)
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            base_power_va: self.base.power_va,
            base_voltage_v: self.base.voltage_v,
            v_ref_pu: self.v_ref,
            phases: self.phases.clone(),
            pcc_bus: Some(self.pcc_bus()),
            buses: self
                .buses
                .iter()
                .map(|b| BusFile {
                    id: b.id,
                    phases: Some(b.phases.clone()),
                    load_p_pu: b.load_p.clone(),
                    load_q_pu: b.load_q.clone(),
                    v_min_pu: b.v_min,
                    v_max_pu: b.v_max,
                    dg: b.dg.as_ref().map(|d| DgFile {
                        p_pu: d.p_forecast.clone(),
                        q_min_pu: d.q.q_min,
                        q_max_pu: d.q.q_max,
                    }),
                    svc: b.svc.as_ref().map(|s| SvcFile {
                        phases: Some(s.phases.clone()),
                        q_min_pu: s.q.q_min,
                        q_max_pu: s.q.q_max,
                    }),
                    msc: b.msc.as_ref().map(|m| MscFile { phases: Some(m.phases.clone()), b_pu: m.b_c }),
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|br| BranchFile {
                    from: self.buses[br.from].id,
                    to: self.buses[br.to].id,
                    r_pu: br.r.clone(),
                    x_pu: br.x.clone(),
                    i_max_pu: br.i_max,
                    p_min_pu: Some(br.p_min),
                    p_max_pu: Some(br.p_max),
                    q_min_pu: Some(br.q_min),
                    q_max_pu: Some(br.q_max),
                    vr: br.vr.as_ref().map(|v| VrFile { taps: v.taps.clone() }),
                })
                .collect(),
        }
    }
}

/// Reads and validates a network JSON file.
pub fn parse_network(path: impl AsRef<Path>) -> Result<Network, NetworkError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| NetworkError::Io(format!("{}: {e}", path.display())))?;
    Network::from_json_str(&text)
}

/// Checks that the branch graph is a tree rooted at the PCC with every branch
/// oriented away from it, and returns branches in breadth-first order.
pub fn validate_radial(net: &Network) -> Result<Vec<usize>, NetworkError> {
    let n = net.buses.len();
    let ids = |path: &[usize]| path.iter().map(|&i| net.buses[i].id).collect::<Vec<_>>();

    // Cycle detection on the undirected graph via union-find; when an edge
    // closes a loop, the loop is recovered from the tree built so far.
    let mut uf: Vec<usize> = (0..n).collect();
    fn find(uf: &mut [usize], mut i: usize) -> usize {
        while uf[i] != i {
            uf[i] = uf[uf[i]];
            i = uf[i];
        }
        i
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for br in &net.branches {
        let (a, b) = (find(&mut uf, br.from), find(&mut uf, br.to));
        if a == b {
            let mut cycle = tree_path(&adj, br.from, br.to);
            if cycle.is_empty() {
                cycle = vec![br.from, br.to];
            }
            return Err(NetworkError::Topology { message: "branch set contains a cycle".into(), cycle: ids(&cycle) });
        }
        uf[a] = b;
        adj[br.from].push(br.to);
        adj[br.to].push(br.from);
    }

    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, br) in net.branches.iter().enumerate() {
        out[br.from].push(k);
    }
    if net.branches.iter().any(|b| b.to == net.pcc) {
        return Err(NetworkError::Topology {
            message: format!("PCC bus {} has a parent branch", net.buses[net.pcc].id),
            cycle: Vec::new(),
        });
    }
    let mut seen = vec![false; n];
    seen[net.pcc] = true;
    let mut order = Vec::with_capacity(net.branches.len());
    let mut queue = VecDeque::from([net.pcc]);
    while let Some(u) = queue.pop_front() {
        for &k in &out[u] {
            let v = net.branches[k].to;
            if seen[v] {
                return Err(NetworkError::Topology {
                    message: format!("bus {} is fed by more than one branch", net.buses[v].id),
                    cycle: Vec::new(),
                });
            }
            seen[v] = true;
            order.push(k);
            queue.push_back(v);
        }
    }
    if order.len() != net.branches.len() || seen.iter().any(|s| !s) {
        let stray: Vec<BusId> = (0..n).filter(|&i| !seen[i]).map(|i| net.buses[i].id).collect();
        let message = if net.branches.len() + 1 != n {
            format!("{} branches for {} buses; unreachable buses {:?}", net.branches.len(), n, stray)
        } else {
            format!("branches not oriented away from the PCC; unreachable buses {stray:?}")
        };
        return Err(NetworkError::Topology { message, cycle: Vec::new() });
    }
    Ok(order)
}

/// Path between two vertices in a forest given by adjacency lists, or empty.
fn tree_path(adj: &[Vec<usize>], from: usize, to: usize) -> Vec<usize> {
    let mut prev = vec![usize::MAX; adj.len()];
    prev[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            let mut path = vec![to];
            let mut c = to;
            while c != from {
                c = prev[c];
                path.push(c);
            }
            path.reverse();
            return path;
        }
        for &v in &adj[u] {
            if prev[v] == usize::MAX {
                prev[v] = u;
                queue.push_back(v);
            }
        }
    }
    Vec::new()
}

// ---- on-disk format -------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub base_power_va: f64,
    pub base_voltage_v: f64,
    pub v_ref_pu: f64,
    pub phases: Vec<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pcc_bus: Option<BusId>,
    pub buses: Vec<BusFile>,
    pub branches: Vec<BranchFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusFile {
    pub id: BusId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<Phase>>,
    #[serde(default)]
    pub load_p_pu: PhaseMap,
    #[serde(default)]
    pub load_q_pu: PhaseMap,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dg: Option<DgFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svc: Option<SvcFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msc: Option<MscFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgFile {
    pub p_pu: PhaseMap,
    pub q_min_pu: f64,
    pub q_max_pu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvcFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<Phase>>,
    pub q_min_pu: f64,
    pub q_max_pu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MscFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<Phase>>,
    pub b_pu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VrFile {
    pub taps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchFile {
    pub from: BusId,
    pub to: BusId,
    pub r_pu: PhaseMap,
    pub x_pu: PhaseMap,
    pub i_max_pu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_min_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_min_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vr: Option<VrFile>,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_BUS: &str = r#"{
        "base_power_va": 1e6, "base_voltage_v": 12660, "v_ref_pu": 1.0,
        "phases": ["a"], "pcc_bus": 1,
        "buses": [
            {"id": 1, "v_min_pu": 0.9, "v_max_pu": 1.1},
            {"id": 2, "load_p_pu": {"a": 0.1}, "load_q_pu": {"a": 0.05}, "v_min_pu": 0.9, "v_max_pu": 1.1}
        ],
        "branches": [{"from": 1, "to": 2, "r_pu": {"a": 0.01}, "x_pu": {"a": 0.02}, "i_max_pu": 5}]
    }"#;

    #[test]
    fn minimal_two_bus_network() {
        let net = Network::from_json_str(TWO_BUS).unwrap();
        assert_eq!(net.buses.len(), 2);
        assert_eq!(net.branches.len(), 1);
        assert_eq!(net.pcc_bus(), BusId(1));
        assert_eq!(net.order, vec![0]);
        assert_eq!(net.branches[0].p_max, DEFAULT_FLOW_LIMIT);
        assert_eq!(net.parent, vec![None, Some(0)]);
    }

    #[test]
    fn duplicated_branch_is_a_cycle() {
        let text = TWO_BUS.replace(
            r#""branches": [{"from": 1"#,
            r#""branches": [{"from": 1, "to": 2, "r_pu": {"a": 0.01}, "x_pu": {"a": 0.02}, "i_max_pu": 5}, {"from": 1"#,
        );
        match Network::from_json_str(&text) {
            Err(NetworkError::Topology { cycle, .. }) => assert_eq!(cycle, vec![BusId(1), BusId(2)]),
            other => panic!("expected topology error, got {other:?}"),
        }
    }

    #[test]
    fn missing_pcc_is_a_config_error() {
        let text = TWO_BUS.replace(r#""pcc_bus": 1,"#, "");
        assert!(matches!(Network::from_json_str(&text), Err(NetworkError::Config(_))));
    }

    #[test]
    fn schema_errors_carry_the_field_path() {
        let text = TWO_BUS.replace(r#""i_max_pu": 5"#, r#""i_max_pu": "five""#);
        match Network::from_json_str(&text) {
            Err(NetworkError::Parse { path, .. }) => assert_eq!(path, "branches[0].i_max_pu"),
            other => panic!("{other:?}"),
        }
        let text = TWO_BUS.replace(r#""v_min_pu": 0.9, "v_max_pu": 1.1}
        ]"#, r#""v_min_pu": 1.2, "v_max_pu": 1.1}
        ]"#);
        match Network::from_json_str(&text) {
            Err(NetworkError::Parse { path, .. }) => assert_eq!(path, "buses[1].v_min_pu"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn regulator_taps_must_increase() {
        let text = TWO_BUS.replace(r#""i_max_pu": 5}"#, r#""i_max_pu": 5, "vr": {"taps": [1.0, 0.99]}}"#);
        assert!(matches!(Network::from_json_str(&text), Err(NetworkError::Parse { .. })));
        let text = TWO_BUS.replace(r#""i_max_pu": 5}"#, r#""i_max_pu": 5, "vr": {"taps": [1.0]}}"#);
        assert!(matches!(Network::from_json_str(&text), Err(NetworkError::Parse { .. })));
    }

    #[test]
    fn reversed_branch_is_rejected() {
        let text = TWO_BUS.replace(r#""from": 1, "to": 2"#, r#""from": 2, "to": 1"#);
        assert!(matches!(Network::from_json_str(&text), Err(NetworkError::Topology { .. })));
    }

    #[test]
    fn star_feeder_orders_all_leaves_from_pcc() {
        let mut file = Network::from_json_str(TWO_BUS).unwrap().to_file();
        for id in 3..=4 {
            let mut b = file.buses[1].clone();
            b.id = BusId(id);
            file.buses.push(b);
            let mut br = file.branches[0].clone();
            br.to = BusId(id);
            file.branches.push(br);
        }
        let net = Network::from_file(file).unwrap();
        assert_eq!(net.order.len(), 3);
        assert!(net.order.iter().all(|&k| net.branches[k].from == net.pcc));
    }
}
