//! Fibre sensing control device: a four-state real-time agent driving a
//! backscatter gate and a polarization scrambler.
//!
//! The device is passive until driven: [`Fscd::set_state`] and
//! [`Fscd::on_optical_pulse`] return the actuations they cause, timestamped
//! in the future, and the owner feeds each one back through [`Fscd::apply`]
//! when it falls due. Settle times are known at command time, so the gate
//! schedule seen by any pulse can be computed immediately.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::otdr::{GateSchedule, GateTechnology};
use crate::sim::SimTime;
use crate::sop::ScramblerConfig;

/// Upper bound on the agent's local decision time.
pub const MAX_AGENT_DECISION_TIME: SimTime = SimTime::from_ns(50);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FscdError {
    #[error("invalid FSCD configuration: {0}")]
    ConfigInvalid(String),
    #[error("unknown FSCD state {0:?}")]
    UnknownState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FscdState {
    AllEnabled,
    SopsOnly,
    BlsOnly,
    NoneEnabled,
}

impl FscdState {
    pub const ALL: [FscdState; 4] =
        [FscdState::AllEnabled, FscdState::SopsOnly, FscdState::BlsOnly, FscdState::NoneEnabled];

    pub fn from_permissions(sops_allowed: bool, bls_allowed: bool) -> Self {
        match (sops_allowed, bls_allowed) {
            (true, true) => FscdState::AllEnabled,
            (true, false) => FscdState::SopsOnly,
            (false, true) => FscdState::BlsOnly,
            (false, false) => FscdState::NoneEnabled,
        }
    }

    pub fn sops_enabled(self) -> bool {
        matches!(self, FscdState::AllEnabled | FscdState::SopsOnly)
    }

    pub fn bls_enabled(self) -> bool {
        matches!(self, FscdState::AllEnabled | FscdState::BlsOnly)
    }

    pub fn gate_open(self) -> bool {
        self.bls_enabled()
    }

    pub fn scrambler_active(self) -> bool {
        !self.sops_enabled()
    }

    /// Same SoP setting, backscatter disabled.
    pub fn with_bls_blocked(self) -> Self {
        FscdState::from_permissions(self.sops_enabled(), false)
    }

    pub fn code(self) -> u8 {
        match self {
            FscdState::AllEnabled => 0,
            FscdState::SopsOnly => 1,
            FscdState::BlsOnly => 2,
            FscdState::NoneEnabled => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        FscdState::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FscdState::AllEnabled => "ALL_ENABLED",
            FscdState::SopsOnly => "SOPS_ONLY",
            FscdState::BlsOnly => "BLS_ONLY",
            FscdState::NoneEnabled => "NONE_ENABLED",
        }
    }
}

impl fmt::Display for FscdState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FscdState {
    type Err = FscdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FscdState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| FscdError::UnknownState(s.to_string()))
    }
}

/// Per-pulse gate window, timed from pulse detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObscuringWindow {
    pub delay: SimTime,
    pub duration: SimTime,
}

impl ObscuringWindow {
    pub fn end(&self) -> SimTime {
        self.delay + self.duration
    }
}

/// Sorted, non-overlapping, non-negative windows.
pub fn check_windows(windows: &[ObscuringWindow]) -> Result<(), String> {
    for w in windows {
        if w.delay < SimTime::ZERO || w.duration < SimTime::ZERO {
            return Err("obscuring window times must be non-negative".into());
        }
        if w.delay.checked_add(w.duration).is_none() {
            return Err("obscuring window end overflows".into());
        }
    }
    for pair in windows.windows(2) {
        if pair[1].delay < pair[0].end() {
            return Err(format!(
                "obscuring windows overlap or are unsorted ({} .. {} then {})",
                pair[0].delay,
                pair[0].end(),
                pair[1].delay
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FscdConfig {
    pub gate: GateTechnology,
    pub scrambler: ScramblerConfig,
    pub detector_threshold_dbm: f64,
    pub agent_decision_time: SimTime,
    pub obscuring: Vec<ObscuringWindow>,
}

impl FscdConfig {
    pub fn validate(&self) -> Result<(), FscdError> {
        self.gate.validate().map_err(|e| FscdError::ConfigInvalid(e.to_string()))?;
        self.scrambler.validate().map_err(|e| FscdError::ConfigInvalid(e.to_string()))?;
        if !self.detector_threshold_dbm.is_finite() {
            return Err(FscdError::ConfigInvalid("detector threshold must be finite".into()));
        }
        if self.agent_decision_time < SimTime::ZERO
            || self.agent_decision_time > MAX_AGENT_DECISION_TIME
        {
            return Err(FscdError::ConfigInvalid(format!(
                "agent decision time {} outside [0, {}]",
                self.agent_decision_time, MAX_AGENT_DECISION_TIME
            )));
        }
        check_windows(&self.obscuring).map_err(FscdError::ConfigInvalid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    PulseDetected,
    GateCommand,
    GateSettled,
    ScramblerCommand,
    ScramblerActive,
    StateChange,
    AlertSent,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::PulseDetected => "pulse_detected",
            ActionKind::GateCommand => "gate_command",
            ActionKind::GateSettled => "gate_settled",
            ActionKind::ScramblerCommand => "scrambler_command",
            ActionKind::ScramblerActive => "scrambler_active",
            ActionKind::StateChange => "state_change",
            ActionKind::AlertSent => "alert_sent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub t: SimTime,
    pub device_id: String,
    pub kind: ActionKind,
    pub detail: String,
}

/// Renders `t_ps,device_id,record_kind,detail` rows.
pub fn action_log_csv<'a>(records: impl IntoIterator<Item = &'a ActionRecord>) -> String {
    let mut out = String::from("t_ps,device_id,record_kind,detail\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.t.as_ps(), r.device_id, r.kind.as_str(), r.detail));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Actuation {
    GateCommand { attenuation_db: f64 },
    GateSettled { attenuation_db: f64 },
    ScramblerCommand { on: bool },
    ScramblerActive { on: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledActuation {
    pub at: SimTime,
    pub actuation: Actuation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseAlert {
    pub device_id: String,
    pub detected_at: SimTime,
    pub pulse_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PulseResponse {
    pub detected: bool,
    pub actuations: Vec<ScheduledActuation>,
    pub alert: Option<PulseAlert>,
    /// Gate attenuation seen by this pulse's backscatter, relative to detection.
    pub schedule: Option<GateSchedule>,
}

#[derive(Debug, Clone)]
pub struct Fscd {
    id: String,
    config: FscdConfig,
    state: FscdState,
    gate_attenuation_db: f64,
    scrambler_on: bool,
    // (settle time, attenuation) in command order; settle times never decrease
    // because the response time is fixed.
    gate_timeline: Vec<(SimTime, f64)>,
    // (command time, on)
    scrambler_commands: Vec<(SimTime, bool)>,
    allowed_interrogators: BTreeSet<u32>,
    log: Vec<ActionRecord>,
}

impl Fscd {
    /// A device already settled in `initial`.
    pub fn new(
        id: impl Into<String>,
        config: FscdConfig,
        initial: FscdState,
    ) -> Result<Self, FscdError> {
        config.validate()?;
        let gate = if initial.gate_open() { 0.0 } else { config.gate.max_attenuation_db };
        Ok(Fscd {
            id: id.into(),
            state: initial,
            gate_attenuation_db: gate,
            scrambler_on: initial.scrambler_active(),
            gate_timeline: vec![(SimTime::ZERO, gate)],
            scrambler_commands: vec![(SimTime::ZERO, initial.scrambler_active())],
            allowed_interrogators: BTreeSet::new(),
            log: Vec::new(),
            config,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &FscdConfig {
        &self.config
    }

    /// Commanded state (may still be settling).
    pub fn state(&self) -> FscdState {
        self.state
    }

    pub fn gate_attenuation_db(&self) -> f64 {
        self.gate_attenuation_db
    }

    pub fn gate_is_open(&self) -> bool {
        self.gate_attenuation_db == 0.0
    }

    pub fn scrambler_is_active(&self) -> bool {
        self.scrambler_on
    }

    pub fn log(&self) -> &[ActionRecord] {
        &self.log
    }

    /// Time at which every commanded actuation has settled.
    pub fn settled_at(&self) -> SimTime {
        let gate = self.gate_timeline.last().map(|e| e.0).unwrap_or(SimTime::ZERO);
        let scr = self
            .scrambler_commands
            .last()
            .map(|e| {
                if e.0 == SimTime::ZERO && self.scrambler_commands.len() == 1 {
                    SimTime::ZERO
                } else {
                    e.0 + self.config.scrambler.activation_delay
                }
            })
            .unwrap_or(SimTime::ZERO);
        gate.max(scr)
    }

    /// Settle time of the most recent gate command.
    pub fn gate_settled_at(&self) -> SimTime {
        self.gate_timeline.last().map(|e| e.0).unwrap_or(SimTime::ZERO)
    }

    /// Command time of the scrambler's current "on" period, if it is on (or
    /// switching on) as of `t`.
    pub fn scrambler_enabled_since(&self, t: SimTime) -> Option<SimTime> {
        self.scrambler_commands
            .iter()
            .rev()
            .find(|(at, _)| *at <= t)
            .filter(|(_, on)| *on)
            .map(|(at, _)| *at)
    }

    pub fn set_allowed_interrogators(&mut self, ids: impl IntoIterator<Item = u32>) {
        self.allowed_interrogators = ids.into_iter().collect();
    }

    pub fn is_authorized(&self, interrogator: u32) -> bool {
        self.allowed_interrogators.contains(&interrogator)
    }

    pub fn set_obscuring(&mut self, windows: Vec<ObscuringWindow>) -> Result<(), FscdError> {
        check_windows(&windows).map_err(FscdError::ConfigInvalid)?;
        self.config.obscuring = windows;
        Ok(())
    }

    fn record(&mut self, t: SimTime, kind: ActionKind, detail: String) {
        self.log.push(ActionRecord { t, device_id: self.id.clone(), kind, detail });
    }

    fn pending_gate_target(&self) -> f64 {
        self.gate_timeline.last().map(|e| e.1).unwrap_or(0.0)
    }

    fn pending_scrambler_target(&self) -> bool {
        self.scrambler_commands.last().map(|e| e.1).unwrap_or(false)
    }

    /// Moves the agent to `new_state` at `t`. Returns nothing when the state
    /// is unchanged.
    pub fn set_state(&mut self, new_state: FscdState, t: SimTime) -> Vec<ScheduledActuation> {
        if new_state == self.state {
            return Vec::new();
        }
        self.record(t, ActionKind::StateChange, format!("{}->{}", self.state, new_state));
        self.state = new_state;
        let mut out = Vec::new();
        let command_at = t + self.config.agent_decision_time;

        let gate_target =
            if new_state.gate_open() { 0.0 } else { self.config.gate.max_attenuation_db };
        if gate_target != self.pending_gate_target() {
            let settle = command_at + self.config.gate.response_time;
            out.push(ScheduledActuation {
                at: command_at,
                actuation: Actuation::GateCommand { attenuation_db: gate_target },
            });
            out.push(ScheduledActuation {
                at: settle,
                actuation: Actuation::GateSettled { attenuation_db: gate_target },
            });
            self.gate_timeline.push((settle, gate_target));
        }

        let scr_target = new_state.scrambler_active();
        if scr_target != self.pending_scrambler_target() {
            out.push(ScheduledActuation {
                at: command_at,
                actuation: Actuation::ScramblerCommand { on: scr_target },
            });
            out.push(ScheduledActuation {
                at: command_at + self.config.scrambler.activation_delay,
                actuation: Actuation::ScramblerActive { on: scr_target },
            });
            self.scrambler_commands.push((command_at, scr_target));
        }
        out
    }

    /// Sets a continuous gate (VOA) to an intermediate attenuation while the
    /// agent state stays backscatter-enabled.
    pub fn set_gate_attenuation(
        &mut self,
        attenuation_db: f64,
        t: SimTime,
    ) -> Result<Vec<ScheduledActuation>, FscdError> {
        let gate = &self.config.gate;
        let valid = attenuation_db >= 0.0 && attenuation_db <= gate.max_attenuation_db;
        let allowed = gate.continuous
            || attenuation_db == 0.0
            || attenuation_db == gate.max_attenuation_db;
        if !(valid && allowed) {
            return Err(FscdError::ConfigInvalid(format!(
                "gate {} cannot be set to {attenuation_db} dB",
                gate.name
            )));
        }
        if attenuation_db == self.pending_gate_target() {
            return Ok(Vec::new());
        }
        let command_at = t + self.config.agent_decision_time;
        let settle = command_at + gate.response_time;
        self.gate_timeline.push((settle, attenuation_db));
        Ok(vec![
            ScheduledActuation { at: command_at, actuation: Actuation::GateCommand { attenuation_db } },
            ScheduledActuation { at: settle, actuation: Actuation::GateSettled { attenuation_db } },
        ])
    }

    /// Records a due actuation and updates the physical state.
    pub fn apply(&mut self, sa: &ScheduledActuation) {
        match sa.actuation {
            Actuation::GateCommand { attenuation_db } => {
                self.record(sa.at, ActionKind::GateCommand, format!("attenuation_db={attenuation_db}"));
            }
            Actuation::GateSettled { attenuation_db } => {
                self.gate_attenuation_db = attenuation_db;
                self.record(sa.at, ActionKind::GateSettled, format!("attenuation_db={attenuation_db}"));
            }
            Actuation::ScramblerCommand { on } => {
                self.record(sa.at, ActionKind::ScramblerCommand, format!("on={on}"));
            }
            Actuation::ScramblerActive { on } => {
                self.scrambler_on = on;
                self.record(sa.at, ActionKind::ScramblerActive, format!("on={on}"));
            }
        }
    }

    /// Applies actuations in time order. For use without an event engine.
    pub fn apply_all(&mut self, mut actuations: Vec<ScheduledActuation>) {
        actuations.sort_by_key(|a| a.at);
        for a in &actuations {
            self.apply(a);
        }
    }

    /// Photodetector threshold crossing at `t`. An unauthorized pulse makes the
    /// agent block backscatter and raise an alert toward its region controller.
    pub fn on_optical_pulse(
        &mut self,
        pulse_power_dbm: f64,
        t: SimTime,
        authorized: bool,
    ) -> PulseResponse {
        if pulse_power_dbm < self.config.detector_threshold_dbm {
            return PulseResponse {
                schedule: Some(self.gate_schedule_for_pulse(t)),
                ..PulseResponse::default()
            };
        }
        self.record(
            t,
            ActionKind::PulseDetected,
            format!("power_dbm={pulse_power_dbm} authorized={authorized}"),
        );
        let mut response = PulseResponse { detected: true, ..PulseResponse::default() };
        if !authorized {
            self.record(t, ActionKind::AlertSent, "unauthorized_pulse".into());
            response.alert = Some(PulseAlert {
                device_id: self.id.clone(),
                detected_at: t,
                pulse_power_dbm,
            });
            let blocked = self.state.with_bls_blocked();
            response.actuations = self.set_state(blocked, t);
        }
        response.schedule = Some(self.gate_schedule_for_pulse(t));
        response
    }

    /// Gate attenuation seen by backscatter of a pulse detected at
    /// `pulse_time`, relative to that instant: the settled gate level and
    /// any pending transitions, combined with the configured obscuring
    /// windows (each shifted by the gate response time).
    pub fn gate_schedule_for_pulse(&self, pulse_time: SimTime) -> GateSchedule {
        let tech = self.config.gate.clone();
        let at_pulse = self
            .gate_timeline
            .iter()
            .rev()
            .find(|(t, _)| *t <= pulse_time)
            .map(|e| e.1)
            .unwrap_or(0.0);
        let mut steps = vec![(SimTime::ZERO, at_pulse)];
        for (t, a) in self.gate_timeline.iter().filter(|(t, _)| *t > pulse_time) {
            steps.push((*t - pulse_time, *a));
        }
        let mut schedule =
            GateSchedule::new(steps, tech.clone()).expect("gate timeline is ordered and valid");
        if self.state.bls_enabled() {
            let resp = tech.response_time;
            for w in &self.config.obscuring {
                let window = GateSchedule::window(
                    w.delay + resp,
                    w.end() + resp,
                    tech.max_attenuation_db,
                    tech.clone(),
                )
                .expect("validated window");
                schedule = schedule.max_with(&window);
            }
        }
        schedule
    }
}
