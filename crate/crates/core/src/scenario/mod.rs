//! Scenario files: a JSON document describing the plant, FSCDs, control
//! topology, policies and interrogation schedule of one simulation run.
//!
//! Every quantity carries its unit in the field name (`length_m`,
//! `delay_ns`, `at_ms`, ...). Unknown fields are rejected so a misspelled or
//! mis-united field fails loudly instead of silently taking a default.

mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlError, ControlPlane, NodeId, Policy, Topology, TopologyBuilder};
use crate::fscd::{check_windows, Fscd, FscdConfig, FscdState, ObscuringWindow};
use crate::otdr::{GateTechnology, OtdrConfig};
use crate::plant::{
    check_region_membership, ConnectorEvent, FibrePath, FibreSegment, RegionSpan, SensingRegion,
};
use crate::sim::SimTime;
use crate::sop::{DisturbanceProfile, ScramblerConfig, StokesVector};

pub use run::{
    run_scenario, simulate, FeatureEntry, FileEntry, PolicyEntry, PulseTrace, RunReport,
    SimulationOutput, SopEntry, SopResult,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario: {field}: {message}")]
    Validation { field: String, message: String },
    #[error("simulation failed: {0}")]
    Run(String),
}

fn invalid<T>(field: impl Into<String>, message: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Validation { field: field.into(), message: message.into() })
}

impl From<ControlError> for ScenarioError {
    fn from(e: ControlError) -> Self {
        ScenarioError::Run(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Free-text modelling assumptions, kept with the data they explain.
    #[serde(default)]
    pub notes: Vec<String>,
    pub seed: u64,
    pub duration_ms: f64,
    pub fibres: Vec<FibreSpec>,
    pub gate_technologies: Vec<GateSpec>,
    pub fscds: Vec<FscdSpec>,
    pub control: ControlSpec,
    pub interrogators: Vec<InterrogatorSpec>,
    pub sensing_paths: Vec<PathSpec>,
    #[serde(default)]
    pub policy_updates: Vec<PolicyUpdateSpec>,
    #[serde(default)]
    pub otdr_pulses: Vec<OtdrPulseSpec>,
    #[serde(default)]
    pub sop_experiments: Vec<SopExperimentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub length_m: f64,
    pub attenuation_db_per_km: f64,
    pub group_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectorSpec {
    pub position_m: f64,
    pub insertion_loss_db: f64,
    /// `null` for a non-reflective splice.
    pub return_loss_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FibreSpec {
    pub id: String,
    pub segments: Vec<SegmentSpec>,
    #[serde(default)]
    pub connectors: Vec<ConnectorSpec>,
    pub end_return_loss_db: f64,
    /// Number of identical uncoupled cores.
    #[serde(default = "one")]
    pub core_count: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpec {
    pub name: String,
    pub response_time_ns: f64,
    pub max_attenuation_db: f64,
    pub continuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScramblerSpec {
    pub rate_hz: f64,
    pub activation_delay_us: f64,
    pub enabled: bool,
    pub max_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FscdSpec {
    pub id: String,
    pub fibre_id: String,
    #[serde(default)]
    pub core: Option<u32>,
    pub position_m: f64,
    pub gate: String,
    pub detector_threshold_dbm: f64,
    pub decision_time_ns: f64,
    pub scrambler: ScramblerSpec,
    pub initial_state: FscdState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentLinkSpec {
    pub fscd_id: String,
    pub link_m: f64,
    /// Control fibre carrying this link; defaults to `ctl-<fscd_id>`.
    #[serde(default)]
    pub fibre_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanSpec {
    pub fibre_id: String,
    pub start_m: f64,
    pub end_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub id: String,
    pub processing_ns: f64,
    pub msm_link_m: f64,
    #[serde(default)]
    pub msm_link_fibre_id: Option<String>,
    pub agents: Vec<AgentLinkSpec>,
    #[serde(default)]
    pub spans: Vec<SpanSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    /// Group index of every control fibre.
    pub group_index: f64,
    pub msm_id: String,
    pub msm_processing_ns: f64,
    pub regions: Vec<RegionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtdrSpec {
    pub wavelength_nm: f64,
    pub pulse_width_ns: f64,
    pub pulse_period_us: f64,
    pub launch_power_dbm: f64,
    /// `null` for a noiseless trace.
    pub num_averages: Option<u32>,
    pub bin_size_m: f64,
    pub noise_floor_dbm: f64,
    pub saturation_dbm: f64,
    pub backscatter_coeff_per_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterrogatorSpec {
    pub id: String,
    #[serde(default)]
    pub otdr: Option<OtdrSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub delay_ns: f64,
    pub duration_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub sops_allowed: bool,
    pub bls_allowed: bool,
    #[serde(default)]
    pub obscured_sections: Vec<WindowSpec>,
    /// Interrogator ids allowed to probe the path.
    #[serde(default)]
    pub interrogators: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteHop {
    pub fibre_id: String,
    #[serde(default)]
    pub core: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub id: String,
    /// Fibres traversed from the path's start, in order.
    pub route: Vec<RouteHop>,
    pub fscd_ids: Vec<String>,
    pub policy: PolicySpec,
    #[serde(default)]
    pub policy_at_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyUpdateSpec {
    pub path_id: String,
    pub at_ms: f64,
    pub policy: PolicySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathEnd {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtdrPulseSpec {
    pub label: String,
    pub interrogator: String,
    pub path_id: String,
    pub from_end: PathEnd,
    pub at_ms: f64,
    /// Extra constant gate levels applied to the resulting trace.
    #[serde(default)]
    pub attenuation_sweep_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub start_ms: f64,
    pub end_ms: f64,
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub peak_rate_rad_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SopExperimentSpec {
    pub id: String,
    pub path_id: String,
    /// Simulation time at which the path's scrambler state is sampled.
    pub at_ms: f64,
    pub sampling_period_ms: f64,
    pub n_samples: usize,
    pub s0: [f64; 3],
    pub disturbance: DisturbanceSpec,
    pub ambient_rate_rad_s: f64,
    pub threshold_rad_s: f64,
    pub trials: usize,
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    s.validate()?;
    Ok(s)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario_str(&text)
}

pub fn to_json(s: &Scenario) -> String {
    let mut out = serde_json::to_string_pretty(s).expect("scenario serializes");
    out.push('\n');
    out
}

fn time_ns(field: &str, ns: f64) -> Result<SimTime, ScenarioError> {
    if !(ns >= 0.0 && ns.is_finite()) {
        return invalid(field, format!("{ns} must be a non-negative time"));
    }
    SimTime::from_ns_f64(ns).or_else(|e| invalid(field, e.to_string()))
}

fn time_ms(field: &str, ms: f64) -> Result<SimTime, ScenarioError> {
    time_ns(field, ms * 1.0e6)
}

/// A scenario resolved into simulator objects.
pub(crate) struct Built {
    pub plane: ControlPlane,
    pub paths: BTreeMap<String, FibrePath>,
    pub path_ids: BTreeMap<String, u32>,
    pub interrogator_ids: BTreeMap<String, u32>,
}

impl Scenario {
    pub fn duration(&self) -> Result<SimTime, ScenarioError> {
        time_ms("duration_ms", self.duration_ms)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.build().map(|_| ())
    }

    fn fibre(&self, id: &str) -> Option<&FibreSpec> {
        self.fibres.iter().find(|f| f.id == id)
    }

    fn fibre_path(&self, f: &FibreSpec, field: &str) -> Result<FibrePath, ScenarioError> {
        let mut segments = Vec::new();
        for (i, s) in f.segments.iter().enumerate() {
            let at = format!("{field}.segments[{i}]");
            if !(s.length_m > 0.0 && s.length_m.is_finite()) {
                return invalid(format!("{at}.length_m"), format!("must be positive, got {}", s.length_m));
            }
            if !(s.attenuation_db_per_km >= 0.0 && s.attenuation_db_per_km.is_finite()) {
                return invalid(format!("{at}.attenuation_db_per_km"), "must be non-negative");
            }
            if !(s.group_index > 1.0 && s.group_index < 2.0) {
                return invalid(format!("{at}.group_index"), "must lie in (1, 2)");
            }
            segments.push(
                FibreSegment::new(s.length_m, s.attenuation_db_per_km, s.group_index)
                    .or_else(|e| invalid(at, e.to_string()))?,
            );
        }
        let connectors = f
            .connectors
            .iter()
            .map(|c| ConnectorEvent {
                position_m: c.position_m,
                insertion_loss_db: c.insertion_loss_db,
                return_loss_db: c.return_loss_db.unwrap_or(f64::INFINITY),
            })
            .collect();
        FibrePath::new(f.id.clone(), segments, connectors, f.end_return_loss_db)
            .or_else(|e| invalid(field, e.to_string()))
    }

    fn route_path(&self, p: &PathSpec, field: &str) -> Result<FibrePath, ScenarioError> {
        if p.route.is_empty() {
            return invalid(format!("{field}.route"), "route is empty");
        }
        let mut segments = Vec::new();
        let mut connectors = Vec::new();
        let mut offset = 0.0;
        let mut end_rl = 0.0;
        for (i, hop) in p.route.iter().enumerate() {
            let hf = format!("{field}.route[{i}]");
            let f = self
                .fibre(&hop.fibre_id)
                .ok_or_else(|| ScenarioError::Validation {
                    field: format!("{hf}.fibre_id"),
                    message: format!("unknown fibre {}", hop.fibre_id),
                })?;
            check_core(f, hop.core, &format!("{hf}.core"))?;
            let fp = self.fibre_path(f, &hf)?;
            segments.extend_from_slice(fp.segments());
            connectors.extend(fp.connectors().iter().map(|c| ConnectorEvent {
                position_m: c.position_m + offset,
                ..*c
            }));
            offset += fp.length_m();
            end_rl = fp.end_return_loss_db();
        }
        FibrePath::new(p.id.clone(), segments, connectors, end_rl).or_else(|e| invalid(field, e.to_string()))
    }

    fn policy(
        &self,
        spec: &PolicySpec,
        path_id: u32,
        interrogators: &BTreeMap<String, u32>,
        field: &str,
    ) -> Result<Policy, ScenarioError> {
        let mut windows = Vec::new();
        for (i, w) in spec.obscured_sections.iter().enumerate() {
            let wf = format!("{field}.obscured_sections[{i}]");
            windows.push(ObscuringWindow {
                delay: time_ns(&format!("{wf}.delay_ns"), w.delay_ns)?,
                duration: time_ns(&format!("{wf}.duration_ns"), w.duration_ns)?,
            });
        }
        check_windows(&windows).or_else(|m| invalid(format!("{field}.obscured_sections"), m))?;
        let mut ids = Vec::new();
        for (i, name) in spec.interrogators.iter().enumerate() {
            ids.push(*interrogators.get(name).ok_or_else(|| ScenarioError::Validation {
                field: format!("{field}.interrogators[{i}]"),
                message: format!("unknown interrogator {name}"),
            })?);
        }
        Ok(Policy {
            path_id,
            sops_allowed: spec.sops_allowed,
            bls_allowed: spec.bls_allowed,
            obscured_sections: windows,
            interrogators: ids,
        })
    }

    /// Initial policy per path followed by the updates, in submission order.
    pub(crate) fn policy_schedule(&self, b: &Built) -> Result<Vec<(SimTime, Policy)>, ScenarioError> {
        let mut out = Vec::new();
        for (i, p) in self.sensing_paths.iter().enumerate() {
            let f = format!("sensing_paths[{i}]");
            let at = time_ms(&format!("{f}.policy_at_ms"), p.policy_at_ms)?;
            out.push((at, self.policy(&p.policy, b.path_ids[&p.id], &b.interrogator_ids, &format!("{f}.policy"))?));
        }
        for (i, u) in self.policy_updates.iter().enumerate() {
            let f = format!("policy_updates[{i}]");
            let id = *b.path_ids.get(&u.path_id).ok_or_else(|| ScenarioError::Validation {
                field: format!("{f}.path_id"),
                message: format!("unknown sensing path {}", u.path_id),
            })?;
            let at = time_ms(&format!("{f}.at_ms"), u.at_ms)?;
            out.push((at, self.policy(&u.policy, id, &b.interrogator_ids, &format!("{f}.policy"))?));
        }
        out.sort_by_key(|(t, _)| *t);
        Ok(out)
    }

    /// FSCD sitting at one end of a sensing path, if any.
    pub(crate) fn fscd_at_end(&self, path: &PathSpec, end: PathEnd) -> Option<&FscdSpec> {
        let hop = match end {
            PathEnd::Start => path.route.first()?,
            PathEnd::End => path.route.last()?,
        };
        let len: f64 = self.fibre(&hop.fibre_id)?.segments.iter().map(|s| s.length_m).sum();
        let pos = match end {
            PathEnd::Start => 0.0,
            PathEnd::End => len,
        };
        path.fscd_ids.iter().filter_map(|id| self.fscds.iter().find(|f| &f.id == id)).find(|f| {
            f.fibre_id == hop.fibre_id && f.core.unwrap_or(0) == hop.core.unwrap_or(0) && (f.position_m - pos).abs() < 1e-9
        })
    }

    pub(crate) fn build(&self) -> Result<Built, ScenarioError> {
        if self.name.is_empty() {
            return invalid("name", "must not be empty");
        }
        let duration = self.duration()?;

        let mut fibre_ids = BTreeSet::new();
        for (i, f) in self.fibres.iter().enumerate() {
            let field = format!("fibres[{i}]");
            if !fibre_ids.insert(f.id.as_str()) {
                return invalid(format!("{field}.id"), format!("duplicate fibre id {}", f.id));
            }
            if f.core_count == 0 {
                return invalid(format!("{field}.core_count"), "must be at least 1");
            }
            self.fibre_path(f, &field)?;
        }

        let mut techs = BTreeMap::new();
        for (i, g) in self.gate_technologies.iter().enumerate() {
            let field = format!("gate_technologies[{i}]");
            let rt = time_ns(&format!("{field}.response_time_ns"), g.response_time_ns)?;
            let tech = GateTechnology::new(g.name.clone(), rt, g.max_attenuation_db, g.continuous)
                .or_else(|e| invalid(&field, e.to_string()))?;
            if techs.insert(g.name.clone(), tech).is_some() {
                return invalid(format!("{field}.name"), format!("duplicate gate technology {}", g.name));
            }
        }

        let mut devices = Vec::new();
        for (i, d) in self.fscds.iter().enumerate() {
            let field = format!("fscds[{i}]");
            if self.fscds[..i].iter().any(|o| o.id == d.id) {
                return invalid(format!("{field}.id"), format!("duplicate FSCD id {}", d.id));
            }
            let f = self.fibre(&d.fibre_id).ok_or_else(|| ScenarioError::Validation {
                field: format!("{field}.fibre_id"),
                message: format!("unknown fibre {}", d.fibre_id),
            })?;
            check_core(f, d.core, &format!("{field}.core"))?;
            let len: f64 = f.segments.iter().map(|s| s.length_m).sum();
            if !(d.position_m >= 0.0 && d.position_m <= len) {
                return invalid(format!("{field}.position_m"), format!("{} is outside fibre {} (0..{len} m)", d.position_m, f.id));
            }
            let gate = techs.get(&d.gate).cloned().ok_or_else(|| ScenarioError::Validation {
                field: format!("{field}.gate"),
                message: format!("unknown gate technology {}", d.gate),
            })?;
            let sc = &d.scrambler;
            let config = FscdConfig {
                gate,
                scrambler: ScramblerConfig {
                    rate_hz: sc.rate_hz,
                    activation_delay: time_ns(&format!("{field}.scrambler.activation_delay_us"), sc.activation_delay_us * 1e3)?,
                    enabled: sc.enabled,
                    max_rate_hz: sc.max_rate_hz,
                },
                detector_threshold_dbm: d.detector_threshold_dbm,
                agent_decision_time: time_ns(&format!("{field}.decision_time_ns"), d.decision_time_ns)?,
                obscuring: Vec::new(),
            };
            if config.scrambler.enabled {
                config.scrambler.validate().or_else(|e| invalid(format!("{field}.scrambler"), e.to_string()))?;
            }
            devices.push(Fscd::new(d.id.clone(), config, d.initial_state).or_else(|e| invalid(&field, e.to_string()))?);
        }

        let mut interrogator_ids = BTreeMap::new();
        for (i, it) in self.interrogators.iter().enumerate() {
            if interrogator_ids.insert(it.id.clone(), i as u32).is_some() {
                return invalid(format!("interrogators[{i}].id"), format!("duplicate interrogator {}", it.id));
            }
        }

        // Control topology.
        let c = &self.control;
        let mut b = TopologyBuilder::new(c.msm_id.clone(), time_ns("control.msm_processing_ns", c.msm_processing_ns)?);
        for f in &self.fibres {
            b.sensed_fibre(f.id.clone());
        }
        let mut agent_nodes: BTreeMap<String, NodeId> = BTreeMap::new();
        let mut regions = Vec::new();
        for (ri, r) in c.regions.iter().enumerate() {
            let field = format!("control.regions[{ri}]");
            let node = b
                .add_region(r.id.clone(), time_ns(&format!("{field}.processing_ns"), r.processing_ns)?)
                .or_else(|e| invalid(format!("{field}.id"), e.to_string()))?;
            let fid = r.msm_link_fibre_id.clone().unwrap_or_else(|| format!("ctl-{}", r.id));
            b.link(node, Topology::MSM, fid, r.msm_link_m, c.group_index)
                .or_else(|e| invalid(format!("{field}.msm_link_m"), e.to_string()))?;
            for (ai, a) in r.agents.iter().enumerate() {
                let af = format!("{field}.agents[{ai}]");
                if !self.fscds.iter().any(|d| d.id == a.fscd_id) {
                    return invalid(format!("{af}.fscd_id"), format!("unknown FSCD {}", a.fscd_id));
                }
                let an = b.add_agent(a.fscd_id.clone(), node).or_else(|e| invalid(format!("{af}.fscd_id"), e.to_string()))?;
                let fid = a.fibre_id.clone().unwrap_or_else(|| format!("ctl-{}", a.fscd_id));
                b.link(an, node, fid, a.link_m, c.group_index).or_else(|e| invalid(&af, e.to_string()))?;
                agent_nodes.insert(a.fscd_id.clone(), an);
            }
            for (si, s) in r.spans.iter().enumerate() {
                let sf = format!("{field}.spans[{si}]");
                let Some(f) = self.fibre(&s.fibre_id) else {
                    return invalid(format!("{sf}.fibre_id"), format!("unknown fibre {}", s.fibre_id));
                };
                let len: f64 = f.segments.iter().map(|s| s.length_m).sum();
                if !(0.0 <= s.start_m && s.start_m < s.end_m && s.end_m <= len) {
                    return invalid(&sf, format!("span {}..{} m outside fibre of {len} m", s.start_m, s.end_m));
                }
            }
            regions.push(SensingRegion {
                region_id: r.id.clone(),
                fscd_ids: r.agents.iter().map(|a| a.fscd_id.clone()).collect(),
                spans: r
                    .spans
                    .iter()
                    .map(|s| RegionSpan { path_id: s.fibre_id.clone(), start_m: s.start_m, end_m: s.end_m })
                    .collect(),
            });
        }
        check_region_membership(&regions, self.fscds.iter().map(|d| d.id.as_str()))
            .or_else(|e| invalid("control.regions", e.to_string()))?;

        let mut paths = BTreeMap::new();
        let mut path_ids = BTreeMap::new();
        for (pi, p) in self.sensing_paths.iter().enumerate() {
            let field = format!("sensing_paths[{pi}]");
            if paths.contains_key(&p.id) {
                return invalid(format!("{field}.id"), format!("duplicate sensing path {}", p.id));
            }
            let fp = self.route_path(p, &field)?;
            let mut nodes = Vec::new();
            for (i, id) in p.fscd_ids.iter().enumerate() {
                let df = format!("{field}.fscd_ids[{i}]");
                let Some(d) = self.fscds.iter().find(|d| &d.id == id) else {
                    return invalid(df, format!("unknown FSCD {id}"));
                };
                let on_route =
                    p.route.iter().any(|h| h.fibre_id == d.fibre_id && h.core.unwrap_or(0) == d.core.unwrap_or(0));
                if !on_route {
                    return invalid(df, format!("FSCD {id} is not on the path route"));
                }
                nodes.push(agent_nodes[id]);
            }
            let id = b.add_path(p.id.clone(), nodes).or_else(|e| invalid(&field, e.to_string()))?;
            path_ids.insert(p.id.clone(), id);
            paths.insert(p.id.clone(), fp);
        }
        let topo = b.build().or_else(|e| invalid("control", e.to_string()))?;
        let plane = ControlPlane::new(topo, devices).or_else(|e| invalid("control", e.to_string()))?;
        let built = Built { plane, paths, path_ids, interrogator_ids };

        for (t, _) in self.policy_schedule(&built)? {
            if t > duration {
                return invalid("policy_updates", format!("policy at {t} is after the scenario end"));
            }
        }

        for (i, op) in self.otdr_pulses.iter().enumerate() {
            let field = format!("otdr_pulses[{i}]");
            let Some(it) = self.interrogators.iter().find(|x| x.id == op.interrogator) else {
                return invalid(format!("{field}.interrogator"), format!("unknown interrogator {}", op.interrogator));
            };
            let Some(spec) = &it.otdr else {
                return invalid(format!("{field}.interrogator"), format!("{} has no OTDR configuration", it.id));
            };
            let Some(path) = self.sensing_paths.iter().find(|p| p.id == op.path_id) else {
                return invalid(format!("{field}.path_id"), format!("unknown sensing path {}", op.path_id));
            };
            if self.fscd_at_end(path, op.from_end).is_none() {
                return invalid(format!("{field}.from_end"), "no FSCD at that end of the path");
            }
            let mut fp = built.paths[&op.path_id].clone();
            if op.from_end == PathEnd::End {
                fp = fp.reversed();
            }
            otdr_config(spec, &format!("interrogators.{}.otdr", it.id))?
                .validate(&fp)
                .or_else(|e| invalid(format!("interrogators.{}.otdr", it.id), e.to_string()))?;
            let at = time_ms(&format!("{field}.at_ms"), op.at_ms)?;
            if at >= duration {
                return invalid(format!("{field}.at_ms"), "pulse must come before the scenario end");
            }
            if op.attenuation_sweep_db.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
                return invalid(format!("{field}.attenuation_sweep_db"), "levels must be non-negative");
            }
        }

        for (i, e) in self.sop_experiments.iter().enumerate() {
            let field = format!("sop_experiments[{i}]");
            if self.sop_experiments[..i].iter().any(|o| o.id == e.id) {
                return invalid(format!("{field}.id"), format!("duplicate experiment id {}", e.id));
            }
            if !built.path_ids.contains_key(&e.path_id) {
                return invalid(format!("{field}.path_id"), format!("unknown sensing path {}", e.path_id));
            }
            if time_ms(&format!("{field}.at_ms"), e.at_ms)? > duration {
                return invalid(format!("{field}.at_ms"), "experiment is after the scenario end");
            }
            sop_profile(e, &field)?;
            StokesVector::normalized(e.s0[0], e.s0[1], e.s0[2]).or_else(|err| invalid(format!("{field}.s0"), err.to_string()))?;
        }
        Ok(built)
    }
}

fn check_core(f: &FibreSpec, core: Option<u32>, field: &str) -> Result<(), ScenarioError> {
    match core {
        Some(c) if c >= f.core_count => invalid(field, format!("fibre {} has {} cores", f.id, f.core_count)),
        None if f.core_count > 1 => invalid(field, format!("fibre {} has {} cores; pick one", f.id, f.core_count)),
        _ => Ok(()),
    }
}

pub(crate) fn otdr_config(s: &OtdrSpec, field: &str) -> Result<OtdrConfig, ScenarioError> {
    Ok(OtdrConfig {
        wavelength_nm: s.wavelength_nm,
        pulse_width: time_ns(&format!("{field}.pulse_width_ns"), s.pulse_width_ns)?,
        pulse_period: time_ns(&format!("{field}.pulse_period_us"), s.pulse_period_us * 1e3)?,
        launch_power_dbm: s.launch_power_dbm,
        num_averages: s.num_averages,
        bin_size_m: s.bin_size_m,
        noise_floor_dbm: s.noise_floor_dbm,
        saturation_dbm: s.saturation_dbm,
        backscatter_coeff_per_m: s.backscatter_coeff_per_m,
    })
}

pub(crate) fn sop_profile(e: &SopExperimentSpec, field: &str) -> Result<(DisturbanceProfile, SimTime), ScenarioError> {
    let d = &e.disturbance;
    let df = format!("{field}.disturbance");
    let profile = DisturbanceProfile {
        start: time_ms(&format!("{df}.start_ms"), d.start_ms)?,
        end: time_ms(&format!("{df}.end_ms"), d.end_ms)?,
        f_lo_hz: d.f_lo_hz,
        f_hi_hz: d.f_hi_hz,
        peak_rate_rad_s: d.peak_rate_rad_s,
    };
    profile.validate().or_else(|err| invalid(&df, err.to_string()))?;
    let dt = time_ms(&format!("{field}.sampling_period_ms"), e.sampling_period_ms)?;
    if dt <= SimTime::ZERO {
        return invalid(format!("{field}.sampling_period_ms"), "must be positive");
    }
    if !(e.threshold_rad_s > 0.0 && e.ambient_rate_rad_s >= 0.0) {
        return invalid(field, "threshold must be positive and ambient rate non-negative");
    }
    Ok((profile, dt))
}
