//! Robust Volt-VAR dispatch for radial distribution feeders.
//!
//! Slow devices (capacitor banks, voltage regulators) are scheduled ahead of
//! time so that the fast reactive resources (DG inverters, SVCs) can keep
//! every bus voltage inside its band for all injections in a box uncertainty
//! set. The network model is the per-phase DistFlow branch-flow model with a
//! second-order cone relaxation; the two-stage problem is solved by
//! column-and-constraint generation over mixed-binary SOCPs.

pub mod convexify;
pub mod distflow;
pub mod error;
pub mod harness;
pub mod netmodel;
pub mod robust;
pub mod scenario;

pub use convexify::{assemble_compact, CompactModel, SlowDispatch, XDomain};
pub use distflow::{
    build_distflow, check_soc_exactness, power_flow, recover_voltages, DeviceState, FlowVariables, GapReport,
};
pub use error::{ModelError, NetworkError};
pub use netmodel::{parse_network, validate_radial, BusId, Network, Phase};
pub use robust::{ccg_solve, fast_control, solve_dvo, BoxUncertainty, RobustError, RobustOptions, SubproblemMethod};
pub use scenario::{Component, ComponentKind, Scenario};
