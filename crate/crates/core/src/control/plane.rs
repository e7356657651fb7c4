use std::collections::BTreeMap;

use crate::fscd::{Fscd, ScheduledActuation};
use crate::otdr::GateSchedule;
use crate::sim::{ComponentId, Engine, EventRecord, SimTime};

use super::codec::{AckStatus, Body, MsgType, StateAction, ALL_DEVICES};
use super::{
    decode_message, encode_message, ControlError, ControlMessage, Layer, NodeId, Policy, Topology,
};

#[derive(Debug, Clone, PartialEq)]
pub enum PlaneEvent {
    Arrive { from: NodeId, to: NodeId, frame: Vec<u8> },
    Process { from: NodeId, to: NodeId, frame: Vec<u8> },
    Actuate { device: NodeId, actuation: ScheduledActuation },
    Pulse { device: NodeId, power_dbm: f64, interrogator: u32 },
    /// The MSM starts distributing policy outcome `index`.
    Submit { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlLogKind {
    /// An agent detected an unauthorized pulse.
    Trigger { trigger_id: u32, device: String },
    /// An agent finished blocking in response to a command from `layer`.
    Completed { trigger_id: u32, layer: Layer, device: String },
    Sent { from: NodeId, to: NodeId, msg_type: MsgType, seq: u32 },
    Duplicate { from: NodeId, to: NodeId, seq: u32 },
    OutOfOrder { from: NodeId, to: NodeId, seq: u32, last: u32 },
    Malformed { from: NodeId, to: NodeId, reason: String },
    Unexpected { from: NodeId, to: NodeId, msg_type: MsgType },
    PolicyApplied { device: String, path_id: u32, status: AckStatus },
    PolicyAcked { path_id: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlLogEntry {
    pub t: SimTime,
    pub kind: ControlLogKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome {
    pub policy: Policy,
    pub submitted_at: SimTime,
    pub acked_at: Option<SimTime>,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseOutcome {
    pub device: String,
    pub t: SimTime,
    pub interrogator: u32,
    pub authorized: bool,
    pub detected: bool,
    pub trigger_id: Option<u32>,
    /// Gate attenuation seen by this pulse's backscatter, relative to `t`.
    pub schedule: Option<GateSchedule>,
}

// An SRC waiting for agent acks before acknowledging upward.
#[derive(Debug, Clone)]
struct PendingAck {
    upstream: NodeId,
    upstream_seq: u32,
    path_id: u32,
    remaining: usize,
    rejected: bool,
}

/// Event-driven runtime for a [`Topology`] and the FSCDs its agents control.
pub struct ControlPlane {
    topo: Topology,
    devices: BTreeMap<NodeId, Fscd>,
    engine: Engine<PlaneEvent>,
    seq_out: BTreeMap<(NodeId, NodeId), u32>,
    seq_in: BTreeMap<(NodeId, NodeId), u32>,
    busy_until: BTreeMap<NodeId, SimTime>,
    // (node, downstream peer, downstream seq) -> pending key
    ack_routes: BTreeMap<(NodeId, NodeId, u32), (NodeId, u32)>,
    // (node, id) -> pending
    pending: BTreeMap<(NodeId, u32), PendingAck>,
    next_pending: u32,
    policies: Vec<PolicyOutcome>,
    pulses: Vec<PulseOutcome>,
    log: Vec<ControlLogEntry>,
    events: Vec<EventRecord<PlaneEvent>>,
    next_trigger: u32,
}

impl ControlPlane {
    /// `devices` must contain exactly one FSCD per agent, matched by name.
    pub fn new(topo: Topology, devices: Vec<Fscd>) -> Result<Self, ControlError> {
        let mut by_name: BTreeMap<String, Fscd> =
            devices.into_iter().map(|d| (d.id().to_string(), d)).collect();
        let mut map = BTreeMap::new();
        for a in topo.agents() {
            let d = by_name
                .remove(&a.name)
                .ok_or_else(|| ControlError::Topology(format!("no FSCD for agent {}", a.name)))?;
            map.insert(a.id, d);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(ControlError::Topology(format!("FSCD {extra} has no agent")));
        }
        Ok(ControlPlane {
            topo,
            devices: map,
            engine: Engine::new(),
            seq_out: BTreeMap::new(),
            seq_in: BTreeMap::new(),
            busy_until: BTreeMap::new(),
            ack_routes: BTreeMap::new(),
            pending: BTreeMap::new(),
            next_pending: 0,
            policies: Vec::new(),
            pulses: Vec::new(),
            log: Vec::new(),
            events: Vec::new(),
            next_trigger: 1,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn now(&self) -> SimTime {
        self.engine.now()
    }

    pub fn device(&self, name: &str) -> Option<&Fscd> {
        self.devices.get(&self.topo.find(name)?)
    }

    pub fn devices(&self) -> impl Iterator<Item = &Fscd> {
        self.devices.values()
    }

    pub fn log(&self) -> &[ControlLogEntry] {
        &self.log
    }

    pub fn events(&self) -> &[EventRecord<PlaneEvent>] {
        &self.events
    }

    pub fn policy_outcomes(&self) -> &[PolicyOutcome] {
        &self.policies
    }

    pub fn pulse_outcomes(&self) -> &[PulseOutcome] {
        &self.pulses
    }

    fn push_log(&mut self, t: SimTime, kind: ControlLogKind) {
        self.log.push(ControlLogEntry { t, kind });
    }

    /// Starts distributing `policy` from the MSM at `t`.
    pub fn submit_policy(&mut self, policy: Policy, t: SimTime) -> Result<(), ControlError> {
        policy.validate()?;
        let path = self.topo.path(policy.path_id).ok_or(ControlError::UnknownPath(policy.path_id))?;
        if let Some(a) = path.agents.iter().find(|a| !self.topo.reachable(**a)) {
            return Err(ControlError::UnreachableAgent(self.topo.node(*a).name.clone()));
        }
        if t < self.engine.now() {
            return Err(ControlError::Sim(crate::sim::SimError::SchedulingInPast { at: t, now: self.engine.now() }));
        }
        let index = self.policies.len();
        self.policies.push(PolicyOutcome { policy, submitted_at: t, acked_at: None, rejected: false });
        self.engine.schedule(t, ComponentId(Topology::MSM.0), PlaneEvent::Submit { index })?;
        Ok(())
    }

    fn distribute_policy(&mut self, index: usize, t: SimTime) -> Result<(), ControlError> {
        let policy = self.policies[index].policy.clone();
        let path = self.topo.path(policy.path_id).ok_or(ControlError::UnknownPath(policy.path_id))?;
        let mut srcs: Vec<NodeId> =
            path.agents.iter().map(|a| self.topo.node(*a).parent.expect("agent has a region")).collect();
        srcs.sort();
        srcs.dedup();
        let key = self.new_pending(Topology::MSM, PendingAck {
            upstream: Topology::MSM,
            upstream_seq: index as u32,
            path_id: policy.path_id,
            remaining: srcs.len(),
            rejected: false,
        });
        if srcs.is_empty() {
            self.complete_pending(Topology::MSM, key, t)?;
        }
        for src in srcs {
            let seq = self.send(Topology::MSM, src, Body::PolicySet(policy.clone()), t)?;
            self.ack_routes.insert((Topology::MSM, src, seq), (Topology::MSM, key));
        }
        Ok(())
    }

    /// Schedules an optical pulse reaching `device` at `t`.
    pub fn schedule_pulse(
        &mut self,
        device: &str,
        t: SimTime,
        power_dbm: f64,
        interrogator: u32,
    ) -> Result<(), ControlError> {
        let id = self
            .topo
            .find(device)
            .filter(|id| self.devices.contains_key(id))
            .ok_or_else(|| ControlError::Topology(format!("unknown device {device}")))?;
        self.engine.schedule(t, ComponentId(id.0), PlaneEvent::Pulse { device: id, power_dbm, interrogator })?;
        Ok(())
    }

    /// Delivers raw bytes as if `from` had sent them to `to` at `t`.
    pub fn inject_frame(&mut self, from: NodeId, to: NodeId, frame: Vec<u8>, t: SimTime) -> Result<(), ControlError> {
        let link = self
            .topo
            .link(from, to)
            .ok_or_else(|| ControlError::Topology(format!("no link {from} - {to}")))?;
        let at = t.try_add(link.one_way_delay())?;
        self.engine.schedule(at, ComponentId(from.0), PlaneEvent::Arrive { from, to, frame })?;
        Ok(())
    }

    /// Processes every event due by `t_end`.
    pub fn run_until(&mut self, t_end: SimTime) -> Result<(), ControlError> {
        while let Some(ev) = self.engine.pop_due(t_end) {
            self.handle(&ev)?;
            self.events.push(ev);
        }
        self.engine.run_until(t_end);
        Ok(())
    }

    fn new_pending(&mut self, node: NodeId, p: PendingAck) -> u32 {
        let key = self.next_pending;
        self.next_pending += 1;
        self.pending.insert((node, key), p);
        key
    }

    fn send(&mut self, from: NodeId, to: NodeId, body: Body, t: SimTime) -> Result<u32, ControlError> {
        let link = self.topo.link(from, to).ok_or_else(|| {
            ControlError::UnreachableAgent(format!("{} - {}", self.topo.node(from).name, self.topo.node(to).name))
        })?;
        let at = t.try_add(link.one_way_delay())?;
        let counter = self.seq_out.entry((from, to)).or_insert(0);
        *counter += 1;
        let seq = *counter;
        let msg = ControlMessage {
            src_layer: self.topo.node(from).layer,
            dst_id: to.0,
            seq,
            timestamp_ps_low32: ControlMessage::stamp(t),
            body,
        };
        self.push_log(t, ControlLogKind::Sent { from, to, msg_type: msg.msg_type(), seq });
        let frame = encode_message(&msg);
        self.engine.schedule(at, ComponentId(from.0), PlaneEvent::Arrive { from, to, frame })?;
        Ok(seq)
    }

    fn handle(&mut self, ev: &EventRecord<PlaneEvent>) -> Result<(), ControlError> {
        let t = ev.time;
        match &ev.kind {
            PlaneEvent::Arrive { from, to, frame } => {
                let node = self.topo.node(*to);
                let start = t.max(self.busy_until.get(to).copied().unwrap_or(SimTime::ZERO));
                let done = start.try_add(node.processing_delay)?;
                self.busy_until.insert(*to, done);
                self.engine.schedule(
                    done,
                    ComponentId(to.0),
                    PlaneEvent::Process { from: *from, to: *to, frame: frame.clone() },
                )?;
            }
            PlaneEvent::Process { from, to, frame } => self.process(*from, *to, frame, t)?,
            PlaneEvent::Actuate { device, actuation } => {
                self.devices.get_mut(device).expect("actuation for known device").apply(actuation);
            }
            PlaneEvent::Pulse { device, power_dbm, interrogator } => {
                self.on_pulse(*device, *power_dbm, *interrogator, t)?;
            }
            PlaneEvent::Submit { index } => self.distribute_policy(*index, t)?,
        }
        Ok(())
    }

    fn schedule_actuations(&mut self, device: NodeId, acts: Vec<ScheduledActuation>) -> Result<(), ControlError> {
        for a in acts {
            self.engine.schedule(a.at, ComponentId(device.0), PlaneEvent::Actuate { device, actuation: a })?;
        }
        Ok(())
    }

    // The blocking action counts as complete once the gate has settled, or
    // after the decision time if the gate needed no change.
    fn completion(&self, device: NodeId, t: SimTime) -> SimTime {
        let d = &self.devices[&device];
        d.gate_settled_at().max(t + d.config().agent_decision_time)
    }

    fn on_pulse(&mut self, id: NodeId, power_dbm: f64, interrogator: u32, t: SimTime) -> Result<(), ControlError> {
        let dev = self.devices.get_mut(&id).expect("pulse at known device");
        let authorized = dev.is_authorized(interrogator);
        let resp = dev.on_optical_pulse(power_dbm, t, authorized);
        let name = dev.id().to_string();
        self.schedule_actuations(id, resp.actuations)?;
        let mut trigger_id = None;
        if let Some(alert) = resp.alert {
            let tid = self.next_trigger;
            self.next_trigger += 1;
            trigger_id = Some(tid);
            self.push_log(t, ControlLogKind::Trigger { trigger_id: tid, device: name.clone() });
            let done = self.completion(id, t);
            self.push_log(done, ControlLogKind::Completed { trigger_id: tid, layer: Layer::Agent, device: name.clone() });
            let src = self.topo.node(id).parent.expect("agent has a region");
            if self.topo.link(id, src).is_some() {
                let body = Body::AlertPulse {
                    device_id: id.0,
                    interrogator_id: interrogator,
                    pulse_power_mdbm: (alert.pulse_power_dbm * 1000.0).round() as i32,
                    detected_at: t,
                    trigger_id: tid,
                };
                self.send(id, src, body, t)?;
            }
        }
        self.pulses.push(PulseOutcome {
            device: name,
            t,
            interrogator,
            authorized,
            detected: resp.detected,
            trigger_id,
            schedule: resp.schedule,
        });
        Ok(())
    }

    fn process(&mut self, from: NodeId, to: NodeId, frame: &[u8], t: SimTime) -> Result<(), ControlError> {
        let msg = match decode_message(frame) {
            Ok(m) if m.dst_id == to.0 => m,
            Ok(m) => {
                let reason = format!("addressed to {} not {}", m.dst_id, to.0);
                self.push_log(t, ControlLogKind::Malformed { from, to, reason });
                return Ok(());
            }
            Err(e) => {
                self.push_log(t, ControlLogKind::Malformed { from, to, reason: e.to_string() });
                return Ok(());
            }
        };
        match self.seq_in.get(&(from, to)).copied() {
            Some(last) if msg.seq == last => {
                self.push_log(t, ControlLogKind::Duplicate { from, to, seq: msg.seq });
                return Ok(());
            }
            Some(last) if msg.seq < last => {
                self.push_log(t, ControlLogKind::OutOfOrder { from, to, seq: msg.seq, last });
                return Ok(());
            }
            _ => {
                self.seq_in.insert((from, to), msg.seq);
            }
        }
        let msg_type = msg.msg_type();
        match (self.topo.node(to).layer, msg.body) {
            (Layer::Agent, Body::PolicySet(p)) => self.agent_policy(to, from, msg.seq, p, t),
            (Layer::Agent, Body::StateCmd { action, origin, trigger_id, .. }) => {
                self.agent_command(to, from, action, origin, trigger_id, t)
            }
            (Layer::Src, Body::PolicySet(p)) => {
                let targets: Vec<NodeId> = self
                    .topo
                    .path(p.path_id)
                    .map(|path| {
                        path.agents
                            .iter()
                            .copied()
                            .filter(|a| self.topo.node(*a).parent == Some(to))
                            .collect()
                    })
                    .unwrap_or_default();
                let key = self.new_pending(to, PendingAck {
                    upstream: from,
                    upstream_seq: msg.seq,
                    path_id: p.path_id,
                    remaining: targets.len(),
                    rejected: false,
                });
                if targets.is_empty() {
                    return self.complete_pending(to, key, t);
                }
                for a in targets {
                    let seq = self.send(to, a, Body::PolicySet(p.clone()), t)?;
                    self.ack_routes.insert((to, a, seq), (to, key));
                }
                Ok(())
            }
            (Layer::Src | Layer::Msm, Body::PolicyAck { acked_seq, status, .. }) => {
                let Some(&(node, key)) = self.ack_routes.get(&(to, from, acked_seq)) else {
                    self.push_log(t, ControlLogKind::Unexpected { from, to, msg_type });
                    return Ok(());
                };
                let p = self.pending.get_mut(&(node, key)).expect("pending ack exists");
                p.remaining -= 1;
                p.rejected |= status == AckStatus::Rejected;
                if p.remaining == 0 {
                    self.complete_pending(node, key, t)?;
                }
                Ok(())
            }
            (Layer::Src, Body::AlertPulse { device_id, interrogator_id, pulse_power_mdbm, detected_at, trigger_id }) => {
                let children = self.topo.node(to).children.clone();
                for a in children {
                    if self.topo.link(a, to).is_some() {
                        let cmd = Body::StateCmd { device_id: a.0, action: StateAction::BlockBls, origin: Layer::Src, trigger_id };
                        self.send(to, a, cmd, t)?;
                    }
                }
                if self.topo.link(to, Topology::MSM).is_some() {
                    let fwd = Body::AlertPulse { device_id, interrogator_id, pulse_power_mdbm, detected_at, trigger_id };
                    self.send(to, Topology::MSM, fwd, t)?;
                }
                Ok(())
            }
            (Layer::Src, Body::StateCmd { device_id, action, origin, trigger_id }) => {
                let children = self.topo.node(to).children.clone();
                for a in children {
                    if (device_id == ALL_DEVICES || device_id == a.0) && self.topo.link(a, to).is_some() {
                        let cmd = Body::StateCmd { device_id: a.0, action, origin, trigger_id };
                        self.send(to, a, cmd, t)?;
                    }
                }
                Ok(())
            }
            (Layer::Src, Body::StateReport { .. }) => Ok(()),
            (Layer::Msm, Body::AlertPulse { trigger_id, .. }) => {
                // Every region is told to block, including the reporting one.
                let srcs = self.topo.node(Topology::MSM).children.clone();
                for s in srcs {
                    if self.topo.link(s, Topology::MSM).is_some() {
                        let cmd = Body::StateCmd {
                            device_id: ALL_DEVICES,
                            action: StateAction::BlockBls,
                            origin: Layer::Msm,
                            trigger_id,
                        };
                        self.send(Topology::MSM, s, cmd, t)?;
                    }
                }
                Ok(())
            }
            _ => {
                self.push_log(t, ControlLogKind::Unexpected { from, to, msg_type });
                Ok(())
            }
        }
    }

    fn complete_pending(&mut self, node: NodeId, key: u32, t: SimTime) -> Result<(), ControlError> {
        let p = self.pending.remove(&(node, key)).expect("pending ack exists");
        let status = if p.rejected { AckStatus::Rejected } else { AckStatus::Applied };
        if node == Topology::MSM {
            let o = &mut self.policies[p.upstream_seq as usize];
            o.acked_at = Some(t);
            o.rejected = p.rejected;
            self.push_log(t, ControlLogKind::PolicyAcked { path_id: p.path_id });
            return Ok(());
        }
        let ack = Body::PolicyAck { path_id: p.path_id, acked_seq: p.upstream_seq, status };
        self.send(node, p.upstream, ack, t)?;
        Ok(())
    }

    fn agent_policy(&mut self, id: NodeId, src: NodeId, seq: u32, p: Policy, t: SimTime) -> Result<(), ControlError> {
        let dev = self.devices.get_mut(&id).expect("agent has a device");
        let status = match dev.set_obscuring(p.obscured_sections.clone()) {
            Ok(()) => {
                dev.set_allowed_interrogators(p.interrogators.iter().copied());
                let acts = dev.set_state(p.target_state(), t);
                self.schedule_actuations(id, acts)?;
                AckStatus::Applied
            }
            Err(_) => AckStatus::Rejected,
        };
        let device = self.topo.node(id).name.clone();
        self.push_log(t, ControlLogKind::PolicyApplied { device, path_id: p.path_id, status });
        self.send(id, src, Body::PolicyAck { path_id: p.path_id, acked_seq: seq, status }, t)?;
        Ok(())
    }

    fn agent_command(
        &mut self,
        id: NodeId,
        src: NodeId,
        action: StateAction,
        origin: Layer,
        trigger_id: u32,
        t: SimTime,
    ) -> Result<(), ControlError> {
        let dev = self.devices.get_mut(&id).expect("agent has a device");
        let target = match action {
            StateAction::Set(s) => s,
            StateAction::BlockBls => dev.state().with_bls_blocked(),
        };
        let acts = dev.set_state(target, t);
        let state = dev.state();
        self.schedule_actuations(id, acts)?;
        let done = self.completion(id, t);
        let device = self.topo.node(id).name.clone();
        self.push_log(done, ControlLogKind::Completed { trigger_id, layer: origin, device });
        self.send(id, src, Body::StateReport { device_id: id.0, state }, t)?;
        Ok(())
    }
}

/// Time from the first alert's trigger to the last blocking actuation
/// commanded by `layer` for that alert.
pub fn measure_response_time(log: &[ControlLogEntry], layer: Layer) -> Result<SimTime, ControlError> {
    latency_row(log, layer).map(|r| r.response)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyRow {
    pub layer: Layer,
    pub trigger: SimTime,
    pub completed: SimTime,
    pub response: SimTime,
}

fn latency_row(log: &[ControlLogEntry], layer: Layer) -> Result<LatencyRow, ControlError> {
    let (trigger, tid) = log
        .iter()
        .find_map(|e| match &e.kind {
            ControlLogKind::Trigger { trigger_id, .. } => Some((e.t, *trigger_id)),
            _ => None,
        })
        .ok_or(ControlError::NoAlertInLog(layer))?;
    let completed = log
        .iter()
        .filter_map(|e| match &e.kind {
            ControlLogKind::Completed { trigger_id, layer: l, .. } if *trigger_id == tid && *l == layer => Some(e.t),
            _ => None,
        })
        .max()
        .ok_or(ControlError::NoAlertInLog(layer))?;
    Ok(LatencyRow { layer, trigger, completed, response: completed - trigger })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyReport {
    pub rows: Vec<LatencyRow>,
}

impl LatencyReport {
    pub fn response(&self, layer: Layer) -> Option<SimTime> {
        self.rows.iter().find(|r| r.layer == layer).map(|r| r.response)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,trigger_ps,completed_ps,response_ps\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.layer,
                r.trigger.as_ps(),
                r.completed.as_ps(),
                r.response.as_ps()
            ));
        }
        out
    }
}

/// One row per layer that acted on the first alert in the log.
pub fn latency_report(log: &[ControlLogEntry]) -> Result<LatencyReport, ControlError> {
    let rows: Vec<LatencyRow> = Layer::ALL.iter().filter_map(|l| latency_row(log, *l).ok()).collect();
    if rows.is_empty() {
        return Err(ControlError::NoAlertInLog(Layer::Agent));
    }
    Ok(LatencyReport { rows })
}
