use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::control::{latency_report, LatencyReport};
use crate::fscd::action_log_csv;
use crate::otdr::{apply_gate, attenuation_sweep, detect_features, raw_trace, GateSchedule, OtdrTrace};
use crate::par::Execution;
use crate::sim::{format_log, RngStream, SimTime};
use crate::sop::{EnsembleStats, SopExperiment, SopTrace, StokesVector};

use super::{otdr_config, sop_profile, PathEnd, Scenario, ScenarioError};

fn run_err(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Run(e.to_string())
}

#[derive(Debug, Clone)]
pub struct PulseTrace {
    pub index: usize,
    pub label: String,
    pub fscd_id: String,
    pub authorized: bool,
    pub trace: OtdrTrace,
    /// The ungated acquisition the trace was shaped from.
    pub raw: OtdrTrace,
    /// `(level_db, trace)` for each requested sweep level.
    pub sweep: Vec<(f64, OtdrTrace)>,
}

#[derive(Debug, Clone)]
pub struct SopResult {
    pub id: String,
    pub path_id: String,
    pub scrambled: bool,
    pub stats: EnsembleStats,
    pub event_trace: SopTrace,
    pub static_trace: SopTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureEntry {
    pub pulse_index: usize,
    pub label: String,
    pub kind: String,
    pub position_m: f64,
    pub magnitude_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SopEntry {
    pub id: String,
    pub path_id: String,
    pub scrambled: bool,
    pub trials: usize,
    pub detected: usize,
    pub false_positive_intervals: usize,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEntry {
    pub path_id: String,
    pub submitted_ps: i64,
    pub acked_ps: Option<i64>,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyEntry {
    pub layer: String,
    pub trigger_ps: i64,
    pub completed_ps: i64,
    pub response_ps: i64,
}

/// Manifest of one run, written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub duration_ps: i64,
    pub files: Vec<FileEntry>,
    pub latency: Vec<LatencyEntry>,
    pub features: Vec<FeatureEntry>,
    pub sop: Vec<SopEntry>,
    pub policies: Vec<PolicyEntry>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Everything a run produces, in memory.
pub struct SimulationOutput {
    pub pulses: Vec<PulseTrace>,
    pub sop: Vec<SopResult>,
    pub latency: Option<LatencyReport>,
    /// `(relative path, contents)` in write order.
    pub files: Vec<(String, String)>,
    pub report: RunReport,
}

fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Runs `scenario` with its own seed.
pub fn simulate(scenario: &Scenario, exec: Execution) -> Result<SimulationOutput, ScenarioError> {
    let mut built = scenario.build()?;
    let duration = scenario.duration()?;
    let seed = scenario.seed;

    for (t, policy) in scenario.policy_schedule(&built)? {
        built.plane.submit_policy(policy, t)?;
    }
    // (pulse index, fscd id, oriented path, otdr config)
    let mut pulse_meta = Vec::new();
    for (i, op) in scenario.otdr_pulses.iter().enumerate() {
        let it = scenario.interrogators.iter().find(|x| x.id == op.interrogator).expect("validated");
        let cfg = otdr_config(it.otdr.as_ref().expect("validated"), "otdr")?;
        let path = scenario.sensing_paths.iter().find(|p| p.id == op.path_id).expect("validated");
        let fscd = scenario.fscd_at_end(path, op.from_end).expect("validated").id.clone();
        let mut fp = built.paths[&op.path_id].clone();
        if op.from_end == PathEnd::End {
            fp = fp.reversed();
        }
        let at = SimTime::from_ns_f64(op.at_ms * 1e6).map_err(run_err)?;
        built.plane.schedule_pulse(&fscd, at, cfg.launch_power_dbm, built.interrogator_ids[&op.interrogator])?;
        pulse_meta.push((i, fscd, fp, cfg));
    }
    // A zero-length run covers no time, so nothing scheduled at t = 0 fires.
    if duration > SimTime::ZERO {
        built.plane.run_until(duration)?;
    }
    let plane = &built.plane;

    // The plane records pulses in time order; map them back to scenario order.
    let mut outcomes: Vec<_> = plane.pulse_outcomes().iter().collect();
    let mut order: Vec<usize> = (0..scenario.otdr_pulses.len()).collect();
    order.sort_by_key(|&i| {
        let op = &scenario.otdr_pulses[i];
        (SimTime::from_ns_f64(op.at_ms * 1e6).unwrap_or(SimTime::MAX), i)
    });
    let mut by_index = vec![None; scenario.otdr_pulses.len()];
    for i in order {
        let (_, fscd, _, _) = &pulse_meta[i];
        let pos = outcomes.iter().position(|o| &o.device == fscd).expect("pulse was processed");
        by_index[i] = Some(outcomes.remove(pos));
    }

    let mut pulses = Vec::new();
    for (i, fscd, fp, cfg) in pulse_meta {
        let op = &scenario.otdr_pulses[i];
        let outcome = by_index[i].expect("pulse outcome");
        // One static acquisition per interrogator, path and direction: every
        // pulse on it sees the same noise realization and differs only by gating.
        let end = match op.from_end {
            PathEnd::Start => "start",
            PathEnd::End => "end",
        };
        let mut rng = RngStream::new(seed, format!("otdr/{}/{}/{end}", op.interrogator, op.path_id));
        let raw = raw_trace(&cfg, &fp, &mut rng).map_err(run_err)?;
        let tech = plane.device(&fscd).expect("device").config().gate.clone();
        let schedule = outcome.schedule.clone().unwrap_or(GateSchedule::open(tech.clone()));
        let trace = apply_gate(&raw, &schedule);
        let sweep_traces = attenuation_sweep(&trace, &op.attenuation_sweep_db, &tech, exec).map_err(run_err)?;
        let sweep = op.attenuation_sweep_db.iter().copied().zip(sweep_traces).collect();
        pulses.push(PulseTrace {
            index: i,
            label: op.label.clone(),
            fscd_id: fscd,
            authorized: outcome.authorized,
            trace,
            raw,
            sweep,
        });
    }

    let mut sop = Vec::new();
    for (i, e) in scenario.sop_experiments.iter().enumerate() {
        let (disturbance, dt) = sop_profile(e, &format!("sop_experiments[{i}]"))?;
        let at = SimTime::from_ns_f64(e.at_ms * 1e6).map_err(run_err)?;
        let path = scenario.sensing_paths.iter().find(|p| p.id == e.path_id).expect("validated");
        let scrambler = path.fscd_ids.iter().find_map(|id| {
            let d = plane.device(id)?;
            let since = d.scrambler_enabled_since(at)?;
            Some((d.config().scrambler.clone(), since - at))
        });
        let exp = SopExperiment {
            s0: StokesVector::normalized(e.s0[0], e.s0[1], e.s0[2]).map_err(run_err)?,
            sampling_period: dt,
            n_samples: e.n_samples,
            disturbance,
            ambient_rate_rad_s: e.ambient_rate_rad_s,
            scrambler,
            threshold_rad_s: e.threshold_rad_s,
        };
        let stats = exp.ensemble(seed, &e.id, e.trials, exec).map_err(run_err)?;
        sop.push(SopResult {
            id: e.id.clone(),
            path_id: e.path_id.clone(),
            scrambled: exp.scrambler.is_some(),
            stats,
            event_trace: exp.trial(seed, &e.id, 0, true).map_err(run_err)?,
            static_trace: exp.trial(seed, &e.id, 0, false).map_err(run_err)?,
        });
    }

    let latency = latency_report(plane.log()).ok();

    let mut files: Vec<(String, String)> = Vec::new();
    let mut features = Vec::new();
    for p in &pulses {
        let stem = format!("otdr/pulse_{:03}_{}", p.index, file_stem(&p.label));
        files.push((format!("{stem}.csv"), p.trace.to_csv()));
        for (level, t) in &p.sweep {
            files.push((format!("{stem}_gate_{level}db.csv"), t.to_csv()));
        }
        for f in detect_features(&p.trace) {
            features.push(FeatureEntry {
                pulse_index: p.index,
                label: p.label.clone(),
                kind: format!("{:?}", f.kind),
                position_m: f.position_m,
                magnitude_db: f.magnitude_db,
            });
        }
    }
    if !features.is_empty() {
        let mut csv = String::from("pulse_index,label,kind,position_m,magnitude_db\n");
        for f in &features {
            csv.push_str(&format!("{},{},{},{:.3},{:.6}\n", f.pulse_index, f.label, f.kind, f.position_m, f.magnitude_db));
        }
        files.push(("features.csv".into(), csv));
    }
    for r in &sop {
        files.push((format!("sop/{}_event.csv", file_stem(&r.id)), r.event_trace.to_csv()));
        files.push((format!("sop/{}_static.csv", file_stem(&r.id)), r.static_trace.to_csv()));
    }
    let mut actions: Vec<_> = plane.devices().flat_map(|d| d.log().iter()).collect();
    actions.sort_by(|a, b| a.t.cmp(&b.t).then_with(|| a.device_id.cmp(&b.device_id)));
    if !actions.is_empty() {
        files.push(("actions.csv".into(), action_log_csv(actions)));
    }
    if let Some(l) = &latency {
        files.push(("latency.csv".into(), l.to_csv()));
    }
    if !plane.events().is_empty() {
        files.push(("events.log".into(), format_log(plane.events())));
    }

    let path_names: std::collections::BTreeMap<u32, &String> =
        built.path_ids.iter().map(|(k, v)| (*v, k)).collect();
    let report = RunReport {
        scenario: scenario.name.clone(),
        seed,
        duration_ps: duration.as_ps(),
        files: files
            .iter()
            .map(|(p, c)| FileEntry { path: p.clone(), bytes: c.len(), sha256: sha256_hex(c.as_bytes()) })
            .collect(),
        latency: latency
            .iter()
            .flat_map(|l| &l.rows)
            .map(|r| LatencyEntry {
                layer: r.layer.to_string(),
                trigger_ps: r.trigger.as_ps(),
                completed_ps: r.completed.as_ps(),
                response_ps: r.response.as_ps(),
            })
            .collect(),
        features,
        sop: sop
            .iter()
            .map(|r| SopEntry {
                id: r.id.clone(),
                path_id: r.path_id.clone(),
                scrambled: r.scrambled,
                trials: r.stats.trials,
                detected: r.stats.detected,
                false_positive_intervals: r.stats.false_positive_intervals,
                auc: r.stats.auc,
            })
            .collect(),
        policies: plane
            .policy_outcomes()
            .iter()
            .map(|o| PolicyEntry {
                path_id: path_names[&o.policy.path_id].clone(),
                submitted_ps: o.submitted_at.as_ps(),
                acked_ps: o.acked_at.map(|t| t.as_ps()),
                rejected: o.rejected,
            })
            .collect(),
    };
    Ok(SimulationOutput { pulses, sop, latency, files, report })
}

/// Runs `scenario` and writes every output plus `report.json` under `out_dir`.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path, exec: Execution) -> Result<RunReport, ScenarioError> {
    let out = simulate(scenario, exec)?;
    let io = |path: &Path, source| ScenarioError::Io { path: path.display().to_string(), source };
    std::fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    for (rel, contents) in &out.files {
        let p = out_dir.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        std::fs::write(&p, contents).map_err(|e| io(&p, e))?;
    }
    let rp = out_dir.join("report.json");
    std::fs::write(&rp, out.report.to_json()).map_err(|e| io(&rp, e))?;
    Ok(out.report)
}
