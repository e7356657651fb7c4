//! Three-layer sensing control plane: FSCD agents, sensing region controllers
//! (SRC) and the multi-region sensing manager (MSM).
//!
//! Controllers talk over dedicated control fibres ([`ControlLink`]), never
//! over the fibres being sensed. Messages are framed by [`codec`] and carried
//! as bytes through every hop.

pub mod codec;
mod plane;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fscd::{check_windows, FscdError, FscdState, ObscuringWindow};
use crate::plant::SPEED_OF_LIGHT;
use crate::sim::{SimError, SimTime};

pub use codec::{
    decode_message, encode_message, AckStatus, Body, CodecError, ControlMessage, StateAction,
};
pub use plane::{
    latency_report, measure_response_time, ControlLogEntry, ControlLogKind, ControlPlane,
    LatencyReport, LatencyRow, PlaneEvent, PolicyOutcome, PulseOutcome,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("unknown sensing path {0}")]
    UnknownPath(u32),
    #[error("agent {0} is not reachable from the sensing manager")]
    UnreachableAgent(String),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("no alert for the {0} layer in the log")]
    NoAlertInLog(Layer),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Device(#[from] FscdError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Layer {
    Agent = 0,
    Src = 1,
    Msm = 2,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Agent, Layer::Src, Layer::Msm];

    pub fn from_u8(b: u8) -> Option<Self> {
        Layer::ALL.get(b as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Agent => "agent",
            Layer::Src => "src",
            Layer::Msm => "msm",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sensing permissions for one sensing path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub path_id: u32,
    pub sops_allowed: bool,
    pub bls_allowed: bool,
    pub obscured_sections: Vec<ObscuringWindow>,
    /// Interrogators whose pulses do not raise an alert.
    pub interrogators: Vec<u32>,
}

impl Policy {
    pub fn validate(&self) -> Result<(), ControlError> {
        check_windows(&self.obscured_sections).map_err(ControlError::InvalidPolicy)?;
        if self.obscured_sections.len() > u16::MAX as usize || self.interrogators.len() > u16::MAX as usize
        {
            return Err(ControlError::InvalidPolicy("too many entries for one frame".into()));
        }
        Ok(())
    }

    pub fn target_state(&self) -> FscdState {
        FscdState::from_permissions(self.sops_allowed, self.bls_allowed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: NodeId,
    pub layer: Layer,
    pub name: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Per-message handling time. Agents use the device decision time instead.
    pub processing_delay: SimTime,
}

/// Dedicated control fibre between two controller nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLink {
    pub a: NodeId,
    pub b: NodeId,
    pub fibre_id: String,
    pub fibre_length_m: f64,
    pub group_index: f64,
}

impl ControlLink {
    pub fn one_way_delay(&self) -> SimTime {
        SimTime::from_secs_f64(self.fibre_length_m * self.group_index / SPEED_OF_LIGHT)
            .expect("link delay fits in SimTime")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathDef {
    pub id: u32,
    pub name: String,
    pub agents: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<LayerNode>,
    links: BTreeMap<(NodeId, NodeId), ControlLink>,
    paths: Vec<PathDef>,
}

fn link_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

impl Topology {
    pub const MSM: NodeId = NodeId(0);

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &LayerNode {
        &self.nodes[id.0 as usize]
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn link(&self, a: NodeId, b: NodeId) -> Option<&ControlLink> {
        self.links.get(&link_key(a, b))
    }

    pub fn links(&self) -> impl Iterator<Item = &ControlLink> {
        self.links.values()
    }

    pub fn paths(&self) -> &[PathDef] {
        &self.paths
    }

    pub fn path(&self, id: u32) -> Option<&PathDef> {
        self.paths.iter().find(|p| p.id == id)
    }

    pub fn agents(&self) -> impl Iterator<Item = &LayerNode> {
        self.nodes.iter().filter(|n| n.layer == Layer::Agent)
    }

    /// Whether the MSM can reach `agent` through its SRC.
    pub fn reachable(&self, agent: NodeId) -> bool {
        let Some(src) = self.node(agent).parent else { return false };
        self.link(agent, src).is_some() && self.link(src, Self::MSM).is_some()
    }
}

/// Builds a [`Topology`], enforcing the layer hierarchy and hard slicing
/// between control fibres and sensed fibres.
#[derive(Debug, Clone)]
pub struct TopologyBuilder {
    nodes: Vec<LayerNode>,
    links: BTreeMap<(NodeId, NodeId), ControlLink>,
    paths: Vec<PathDef>,
    sensed_fibres: BTreeSet<String>,
}

impl TopologyBuilder {
    pub fn new(msm_name: impl Into<String>, msm_processing: SimTime) -> Self {
        TopologyBuilder {
            nodes: vec![LayerNode {
                id: Topology::MSM,
                layer: Layer::Msm,
                name: msm_name.into(),
                parent: None,
                children: Vec::new(),
                processing_delay: msm_processing,
            }],
            links: BTreeMap::new(),
            paths: Vec::new(),
            sensed_fibres: BTreeSet::new(),
        }
    }

    fn push(&mut self, layer: Layer, name: String, parent: NodeId, delay: SimTime) -> Result<NodeId, ControlError> {
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(ControlError::Topology(format!("duplicate node name {name}")));
        }
        if delay < SimTime::ZERO {
            return Err(ControlError::Topology(format!("{name}: negative processing delay")));
        }
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(LayerNode { id, layer, name, parent: Some(parent), children: Vec::new(), processing_delay: delay });
        self.nodes[parent.0 as usize].children.push(id);
        Ok(id)
    }

    pub fn add_region(&mut self, name: impl Into<String>, processing: SimTime) -> Result<NodeId, ControlError> {
        self.push(Layer::Src, name.into(), Topology::MSM, processing)
    }

    /// Adds an agent; `name` must match the FSCD id it controls.
    pub fn add_agent(&mut self, name: impl Into<String>, region: NodeId) -> Result<NodeId, ControlError> {
        if self.nodes.get(region.0 as usize).map(|n| n.layer) != Some(Layer::Src) {
            return Err(ControlError::Topology(format!("{region} is not a region controller")));
        }
        self.push(Layer::Agent, name.into(), region, SimTime::ZERO)
    }

    /// Marks a fibre id as carrying sensing traffic; no control link may use it.
    pub fn sensed_fibre(&mut self, fibre_id: impl Into<String>) -> &mut Self {
        self.sensed_fibres.insert(fibre_id.into());
        self
    }

    pub fn link(
        &mut self,
        a: NodeId,
        b: NodeId,
        fibre_id: impl Into<String>,
        fibre_length_m: f64,
        group_index: f64,
    ) -> Result<(), ControlError> {
        let n = self.nodes.len() as u32;
        if a.0 >= n || b.0 >= n {
            return Err(ControlError::Topology("link endpoint does not exist".into()));
        }
        let (na, nb) = (&self.nodes[a.0 as usize], &self.nodes[b.0 as usize]);
        if na.parent != Some(b) && nb.parent != Some(a) {
            return Err(ControlError::Topology(format!(
                "link {} - {} does not join a node to its parent",
                na.name, nb.name
            )));
        }
        if !(fibre_length_m >= 0.0 && fibre_length_m.is_finite()) {
            return Err(ControlError::Topology(format!("link length {fibre_length_m} m")));
        }
        if !(group_index >= 1.0 && group_index.is_finite()) {
            return Err(ControlError::Topology(format!("group index {group_index}")));
        }
        let fibre_id = fibre_id.into();
        if self.links.insert(link_key(a, b), ControlLink { a, b, fibre_id, fibre_length_m, group_index }).is_some() {
            return Err(ControlError::Topology("duplicate link".into()));
        }
        Ok(())
    }

    pub fn add_path(&mut self, name: impl Into<String>, agents: Vec<NodeId>) -> Result<u32, ControlError> {
        let name = name.into();
        for a in &agents {
            if self.nodes.get(a.0 as usize).map(|n| n.layer) != Some(Layer::Agent) {
                return Err(ControlError::Topology(format!("path {name}: {a} is not an agent")));
            }
        }
        let id = self.paths.len() as u32;
        self.paths.push(PathDef { id, name, agents });
        Ok(id)
    }

    pub fn build(self) -> Result<Topology, ControlError> {
        for l in self.links.values() {
            if self.sensed_fibres.contains(&l.fibre_id) {
                return Err(ControlError::Topology(format!(
                    "control link uses sensed fibre {}",
                    l.fibre_id
                )));
            }
        }
        for n in &self.nodes {
            let ok = match n.layer {
                Layer::Agent => n.children.is_empty(),
                Layer::Src => n.children.iter().all(|c| self.nodes[c.0 as usize].layer == Layer::Agent),
                Layer::Msm => n.children.iter().all(|c| self.nodes[c.0 as usize].layer == Layer::Src),
            };
            if !ok {
                return Err(ControlError::Topology(format!("{} breaks the layer hierarchy", n.name)));
            }
        }
        Ok(Topology { nodes: self.nodes, links: self.links, paths: self.paths })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn link_delay_matches_hand_oracle() {
        let l = ControlLink { a: NodeId(0), b: NodeId(1), fibre_id: "c".into(), fibre_length_m: 2.0, group_index: 1.468 };
        // 2·1.468/299792458 s = 9.793 ns
        assert_eq!(l.one_way_delay().as_ps(), 9_793);
        let l = ControlLink { fibre_length_m: 10_002.0, ..l };
        assert_eq!(l.one_way_delay().as_ps(), 48_977_003);
    }

    #[test]
    fn control_link_on_sensed_fibre_rejected() {
        let mut b = TopologyBuilder::new("msm", SimTime::ZERO);
        let r = b.add_region("sr1", SimTime::ZERO).unwrap();
        b.sensed_fibre("plant");
        b.link(r, Topology::MSM, "plant", 2.0, 1.468).unwrap();
        assert!(matches!(b.build(), Err(ControlError::Topology(_))));
    }

    #[test]
    fn links_must_follow_hierarchy() {
        let mut b = TopologyBuilder::new("msm", SimTime::ZERO);
        let r1 = b.add_region("sr1", SimTime::ZERO).unwrap();
        let r2 = b.add_region("sr2", SimTime::ZERO).unwrap();
        let a = b.add_agent("f1", r1).unwrap();
        assert!(b.link(a, r2, "x", 1.0, 1.468).is_err());
        assert!(b.link(a, Topology::MSM, "x", 1.0, 1.468).is_err());
        assert!(b.link(a, r1, "x", -1.0, 1.468).is_err());
        assert!(b.add_agent("f2", a).is_err());
        assert!(b.add_agent("f1", r1).is_err());
    }

    #[test]
    fn policy_window_order_checked() {
        let w = |d, l| ObscuringWindow { delay: SimTime::from_ns(d), duration: SimTime::from_ns(l) };
        let mut p = Policy {
            path_id: 0,
            sops_allowed: true,
            bls_allowed: true,
            obscured_sections: vec![w(10, 5), w(20, 5)],
            interrogators: vec![],
        };
        assert!(p.validate().is_ok());
        p.obscured_sections = vec![w(20, 5), w(10, 5)];
        assert!(p.validate().is_err());
    }
}
