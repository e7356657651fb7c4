//! OTDR interrogation model: Rayleigh backscatter plus reflective spikes,
//! backscatter-gate shaping, feature detection and the time/distance maps
//! used for section obscuring.
//!
//! Trace power is absolute, in dBm at the receiver. Each bin is evaluated at
//! its centre. The baseline is
//!
//! ```text
//! P(z) = launch + 10·log10(k_bs · v_g · τ / 2) − 2·A(z)
//! ```
//!
//! where `k_bs` is the combined capture-fraction × Rayleigh coefficient per
//! metre, `τ` the pulse width and `A(z)` the one-way attenuation. Reflective
//! events add `launch − RL − 2·A(z_event)` (linear sum) in their bin. The
//! receiver clips at `saturation_dbm` and nothing reads below `noise_floor_dbm`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;
use crate::plant::{FibrePath, ReflectiveKind};
use crate::sim::{RngStream, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OtdrError {
    #[error("invalid OTDR configuration: {0}")]
    ConfigInvalid(String),
    #[error("invalid gate schedule: {0}")]
    ScheduleInvalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateTechnology {
    pub name: String,
    /// Command to full actuation.
    pub response_time: SimTime,
    /// Attenuation when fully closed.
    pub max_attenuation_db: f64,
    /// Whether intermediate attenuation settings are available (VOA) or the
    /// gate is binary open/closed (switch).
    pub continuous: bool,
}

impl GateTechnology {
    pub fn new(
        name: impl Into<String>,
        response_time: SimTime,
        max_attenuation_db: f64,
        continuous: bool,
    ) -> Result<Self, OtdrError> {
        let tech = GateTechnology { name: name.into(), response_time, max_attenuation_db, continuous };
        tech.validate()?;
        Ok(tech)
    }

    pub fn validate(&self) -> Result<(), OtdrError> {
        if self.response_time <= SimTime::ZERO {
            return Err(OtdrError::ConfigInvalid(format!(
                "gate {} response time must be positive",
                self.name
            )));
        }
        if !(self.max_attenuation_db > 0.0 && self.max_attenuation_db.is_finite()) {
            return Err(OtdrError::ConfigInvalid(format!(
                "gate {} max attenuation must be positive",
                self.name
            )));
        }
        Ok(())
    }

    /// Fast electro-optical switch: 290 ns actuation, 40 dB extinction.
    pub fn eo_switch() -> Self {
        GateTechnology {
            name: "eo_switch".into(),
            response_time: SimTime::from_ns(290),
            max_attenuation_db: 40.0,
            continuous: false,
        }
    }

    /// MEMS variable optical attenuator: 3 ms actuation, continuous setting.
    pub fn mems_voa() -> Self {
        GateTechnology {
            name: "mems_voa".into(),
            response_time: SimTime::from_ms(3),
            max_attenuation_db: 40.0,
            continuous: true,
        }
    }
}

/// Piecewise-constant gate attenuation, with times relative to a pulse launch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSchedule {
    steps: Vec<(SimTime, f64)>,
    technology: GateTechnology,
}

impl GateSchedule {
    pub fn new(steps: Vec<(SimTime, f64)>, technology: GateTechnology) -> Result<Self, OtdrError> {
        match steps.first() {
            Some((t, _)) if *t == SimTime::ZERO => {}
            _ => return Err(OtdrError::ScheduleInvalid("first step must start at 0".into())),
        }
        for w in steps.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(OtdrError::ScheduleInvalid("step starts must strictly increase".into()));
            }
        }
        for (_, a) in &steps {
            if !(*a >= 0.0 && a.is_finite()) {
                return Err(OtdrError::ScheduleInvalid(format!("attenuation {a} dB")));
            }
        }
        Ok(GateSchedule { steps, technology }.normalized())
    }

    pub fn open(technology: GateTechnology) -> Self {
        GateSchedule { steps: vec![(SimTime::ZERO, 0.0)], technology }
    }

    pub fn constant(attenuation_db: f64, technology: GateTechnology) -> Result<Self, OtdrError> {
        GateSchedule::new(vec![(SimTime::ZERO, attenuation_db)], technology)
    }

    /// Open, then `attenuation_db` over `[start, end)`, then open again.
    pub fn window(
        start: SimTime,
        end: SimTime,
        attenuation_db: f64,
        technology: GateTechnology,
    ) -> Result<Self, OtdrError> {
        if end < start || start < SimTime::ZERO {
            return Err(OtdrError::ScheduleInvalid("window end before start".into()));
        }
        if start == end {
            return Ok(GateSchedule::open(technology));
        }
        let mut steps = Vec::new();
        if start > SimTime::ZERO {
            steps.push((SimTime::ZERO, 0.0));
        }
        steps.push((start, attenuation_db));
        steps.push((end, 0.0));
        GateSchedule::new(steps, technology)
    }

    pub fn steps(&self) -> &[(SimTime, f64)] {
        &self.steps
    }

    pub fn technology(&self) -> &GateTechnology {
        &self.technology
    }

    /// Attenuation in effect at `t`. At a transition instant the new value applies.
    pub fn attenuation_at(&self, t: SimTime) -> f64 {
        let idx = self.steps.partition_point(|(s, _)| *s <= t);
        if idx == 0 {
            self.steps[0].1
        } else {
            self.steps[idx - 1].1
        }
    }

    pub fn is_open(&self) -> bool {
        self.steps.iter().all(|(_, a)| *a == 0.0)
    }

    /// Pointwise combination with another schedule.
    pub fn combine(&self, other: &GateSchedule, op: impl Fn(f64, f64) -> f64) -> GateSchedule {
        let mut times: Vec<SimTime> =
            self.steps.iter().chain(&other.steps).map(|(t, _)| *t).collect();
        times.sort();
        times.dedup();
        let steps = times
            .into_iter()
            .map(|t| (t, op(self.attenuation_at(t), other.attenuation_at(t))))
            .collect();
        GateSchedule { steps, technology: self.technology.clone() }.normalized()
    }

    /// Whichever of the two attenuates more, at each instant.
    pub fn max_with(&self, other: &GateSchedule) -> GateSchedule {
        self.combine(other, f64::max)
    }

    fn normalized(mut self) -> Self {
        self.steps.dedup_by(|later, earlier| later.1 == earlier.1);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtdrConfig {
    pub wavelength_nm: f64,
    pub pulse_width: SimTime,
    pub pulse_period: SimTime,
    pub launch_power_dbm: f64,
    /// `None` is the noiseless (infinitely averaged) mode.
    pub num_averages: Option<u32>,
    pub bin_size_m: f64,
    pub noise_floor_dbm: f64,
    pub saturation_dbm: f64,
    /// Capture fraction × Rayleigh scattering coefficient, 1/m.
    pub backscatter_coeff_per_m: f64,
}

impl Default for OtdrConfig {
    fn default() -> Self {
        OtdrConfig {
            wavelength_nm: 1550.0,
            pulse_width: SimTime::from_ns(100),
            pulse_period: SimTime::from_us(200),
            launch_power_dbm: 10.0,
            num_averages: None,
            bin_size_m: 10.0,
            noise_floor_dbm: -70.0,
            saturation_dbm: -32.0,
            backscatter_coeff_per_m: 1.0e-6,
        }
    }
}

impl OtdrConfig {
    pub fn validate(&self, path: &FibrePath) -> Result<(), OtdrError> {
        let bad = |m: String| Err(OtdrError::ConfigInvalid(m));
        if path.length_m() <= 0.0 {
            return bad("path has zero length".into());
        }
        if self.pulse_width <= SimTime::ZERO {
            return bad("pulse width must be positive".into());
        }
        if !(self.bin_size_m > 0.0 && self.bin_size_m.is_finite()) {
            return bad(format!("bin size {}", self.bin_size_m));
        }
        let full = path
            .round_trip_delay(path.length_m())
            .map_err(|e| OtdrError::ConfigInvalid(e.to_string()))?;
        if self.pulse_period <= full {
            return bad(format!(
                "pulse period {} does not exceed full-length round trip {}",
                self.pulse_period, full
            ));
        }
        if self.num_averages == Some(0) {
            return bad("num_averages must be at least 1".into());
        }
        if !(self.backscatter_coeff_per_m > 0.0) {
            return bad("backscatter coefficient must be positive".into());
        }
        if !(self.noise_floor_dbm.is_finite()
            && self.saturation_dbm.is_finite()
            && self.saturation_dbm > self.noise_floor_dbm)
        {
            return bad("saturation must lie above the noise floor".into());
        }
        Ok(())
    }

    /// Backscatter level relative to launch, in dB, for the given group index.
    pub fn backscatter_level_db(&self, group_index: f64) -> f64 {
        let v_g = crate::plant::SPEED_OF_LIGHT / group_index;
        10.0 * (self.backscatter_coeff_per_m * v_g * self.pulse_width.as_secs_f64() / 2.0).log10()
    }

    pub fn bin_count(&self, path: &FibrePath) -> usize {
        (path.length_m() / self.bin_size_m).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtdrTrace {
    bin_size_m: f64,
    power_db: Vec<f64>,
    /// Round-trip arrival time of each bin centre, relative to launch.
    arrival: Vec<SimTime>,
    config: OtdrConfig,
    gate_schedule: Option<GateSchedule>,
}

impl OtdrTrace {
    pub fn len(&self) -> usize {
        self.power_db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power_db.is_empty()
    }

    pub fn bin_size_m(&self) -> f64 {
        self.bin_size_m
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.bin_size_m
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.bin_center(i)).collect()
    }

    pub fn power_db(&self) -> &[f64] {
        &self.power_db
    }

    pub fn arrival_times(&self) -> &[SimTime] {
        &self.arrival
    }

    pub fn config(&self) -> &OtdrConfig {
        &self.config
    }

    pub fn noise_floor_dbm(&self) -> f64 {
        self.config.noise_floor_dbm
    }

    /// The cumulative gate schedule applied so far, if any.
    pub fn gate_schedule(&self) -> Option<&GateSchedule> {
        self.gate_schedule.as_ref()
    }

    /// `distance_m,power_db` with six decimals, one row per bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(24 * (self.len() + 1));
        out.push_str("distance_m,power_db\n");
        for (i, p) in self.power_db.iter().enumerate() {
            out.push_str(&format!("{:.6},{:.6}\n", self.bin_center(i), p));
        }
        out
    }
}

fn lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Simulates one (averaged) OTDR acquisition on an open backscatter path.
pub fn raw_trace(
    config: &OtdrConfig,
    path: &FibrePath,
    rng: &mut RngStream,
) -> Result<OtdrTrace, OtdrError> {
    config.validate(path)?;
    let n_bins = config.bin_count(path);
    let length = path.length_m();
    let bin = config.bin_size_m;
    let launch = config.launch_power_dbm;
    let geo = |z: f64| path.one_way_attenuation(z).expect("bin centre within path");

    let mut signal_lin = vec![0.0f64; n_bins];
    let mut arrival = Vec::with_capacity(n_bins);
    let mut seg_idx = 0;
    let mut seg_end = path.segments()[0].length_m;
    for (i, s) in signal_lin.iter_mut().enumerate() {
        let z = (i as f64 + 0.5) * bin;
        let zc = z.min(length);
        arrival.push(path.round_trip_delay(zc).expect("clamped to path"));
        if z > length {
            continue;
        }
        while z > seg_end && seg_idx + 1 < path.segments().len() {
            seg_idx += 1;
            seg_end += path.segments()[seg_idx].length_m;
        }
        let b = config.backscatter_level_db(path.segments()[seg_idx].group_index);
        *s = lin(launch + b - 2.0 * geo(z));
    }
    for ev in path.reflective_events() {
        let idx = ((ev.position_m / bin).floor() as usize).min(n_bins - 1);
        signal_lin[idx] += lin(launch + ev.reflectance_db - 2.0 * geo(ev.position_m));
    }

    let floor = config.noise_floor_dbm;
    let floor_lin = lin(floor);
    let noise_sigma = config.num_averages.map(|n| floor_lin / (n as f64).sqrt());
    let power_db = signal_lin
        .into_iter()
        .map(|s| {
            let clipped = if s > 0.0 { s.min(lin(config.saturation_dbm)) } else { 0.0 };
            let v = match noise_sigma {
                Some(sigma) => {
                    let g: f64 = rng.sample(StandardNormal);
                    clipped + sigma * g
                }
                None => clipped,
            };
            if v > floor_lin {
                db(v).min(config.saturation_dbm)
            } else {
                floor
            }
        })
        .collect();

    Ok(OtdrTrace { bin_size_m: bin, power_db, arrival, config: config.clone(), gate_schedule: None })
}

/// Attenuates each bin by the schedule value at its arrival time and clamps
/// at the noise floor. Bins under zero attenuation are copied unchanged.
pub fn apply_gate(trace: &OtdrTrace, schedule: &GateSchedule) -> OtdrTrace {
    let floor = trace.config.noise_floor_dbm;
    let power_db = trace
        .power_db
        .iter()
        .zip(&trace.arrival)
        .map(|(&p, &t)| {
            let a = schedule.attenuation_at(t);
            if a == 0.0 {
                p
            } else {
                (p - a).max(floor)
            }
        })
        .collect();
    let gate_schedule = Some(match &trace.gate_schedule {
        Some(prev) => prev.combine(schedule, |a, b| a + b),
        None => schedule.clone(),
    });
    OtdrTrace { power_db, gate_schedule, ..trace.clone() }
}

/// One gated trace per constant attenuation level.
pub fn attenuation_sweep(
    trace: &OtdrTrace,
    levels_db: &[f64],
    technology: &GateTechnology,
    exec: Execution,
) -> Result<Vec<OtdrTrace>, OtdrError> {
    let schedules = levels_db
        .iter()
        .map(|&a| GateSchedule::constant(a, technology.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(exec.map_slice(&schedules, |s| apply_gate(trace, s)))
}

/// Maps a gate window `[delay, delay + duration]` after a pulse to the fibre
/// section it hides, clamped to the path.
pub fn obscuring_window_to_distance(
    delay: SimTime,
    duration: SimTime,
    path: &FibrePath,
) -> (f64, f64) {
    let len = path.length_m();
    let z1 = path.distance_at_round_trip(delay).clamp(0.0, len);
    let z2 = path.distance_at_round_trip(delay + duration).clamp(0.0, len);
    (z1, z2)
}

/// Inverse of [`obscuring_window_to_distance`]: the gate window that hides
/// `[z1, z2]`.
pub fn distance_to_obscuring_window(
    z1: f64,
    z2: f64,
    path: &FibrePath,
) -> Result<(SimTime, SimTime), crate::plant::PlantError> {
    let t1 = path.round_trip_delay(z1)?;
    let t2 = path.round_trip_delay(z2)?;
    Ok((t1, t2 - t1))
}

/// Fibre length whose backscatter returns before a gate that takes
/// `response_time` to close. Not clamped to the path length.
pub fn leaked_length(response_time: SimTime, path: &FibrePath) -> f64 {
    path.distance_at_round_trip(response_time)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub position_m: f64,
    pub bin: usize,
    pub kind: ReflectiveKind,
    /// Prominence over the local baseline, dB.
    pub magnitude_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureDetector {
    pub prominence_db: f64,
    /// Bins on each side used for the local baseline median.
    pub half_window: usize,
    /// A bin within this margin of the floor counts as floor.
    pub floor_tolerance_db: f64,
}

impl Default for FeatureDetector {
    fn default() -> Self {
        FeatureDetector { prominence_db: 2.0, half_window: 5, floor_tolerance_db: 0.5 }
    }
}

fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { 0.5 * (xs[m - 1] + xs[m]) })
}

impl FeatureDetector {
    pub fn detect(&self, trace: &OtdrTrace) -> Vec<Feature> {
        let p = trace.power_db();
        let n = p.len();
        let floor = trace.noise_floor_dbm();
        let at_floor = |x: f64| x <= floor + self.floor_tolerance_db;
        let mut spikes = Vec::new();
        for i in 0..n {
            if at_floor(p[i]) {
                continue;
            }
            if (i > 0 && p[i - 1] > p[i]) || (i + 1 < n && p[i + 1] > p[i]) {
                continue;
            }
            let lo = i.saturating_sub(self.half_window);
            let hi = (i + 1 + self.half_window).min(n);
            let left = median(&mut p[lo..i].to_vec());
            let right = median(&mut p[i + 1..hi].to_vec());
            let reference = match (left, right) {
                (Some(l), Some(r)) => l.max(r),
                (Some(x), None) | (None, Some(x)) => x,
                (None, None) => continue,
            };
            let prominence = p[i] - reference;
            if prominence >= self.prominence_db {
                spikes.push((i, prominence));
            }
        }
        let end_idx = spikes
            .last()
            .filter(|(i, _)| p[i + 1..].iter().all(|&x| at_floor(x)))
            .map(|(i, _)| *i);
        spikes
            .into_iter()
            .map(|(i, prominence)| Feature {
                position_m: trace.bin_center(i),
                bin: i,
                kind: if Some(i) == end_idx {
                    ReflectiveKind::FibreEnd
                } else {
                    ReflectiveKind::Connector
                },
                magnitude_db: prominence,
            })
            .collect()
    }
}

/// Reflective features with the default detector settings.
pub fn detect_features(trace: &OtdrTrace) -> Vec<Feature> {
    FeatureDetector::default().detect(trace)
}

/// Least-squares slope of `power_db` against distance in km over the bins
/// whose centres lie in `[z_lo, z_hi]`.
pub fn fitted_slope_db_per_km(trace: &OtdrTrace, z_lo: f64, z_hi: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = (0..trace.len())
        .map(|i| (trace.bin_center(i), trace.power_db()[i]))
        .filter(|(z, _)| *z >= z_lo && *z <= z_hi)
        .map(|(z, p)| (z / 1000.0, p))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{ConnectorEvent, FibreSegment};

    fn paper_plant() -> FibrePath {
        let seg = FibreSegment::new(12_800.0, 0.2, 1.468).unwrap();
        let c = ConnectorEvent { position_m: 1100.0, insertion_loss_db: 0.3, return_loss_db: 45.0 };
        FibrePath::new("plant", vec![seg], vec![c], 14.7).unwrap()
    }

    fn rng() -> RngStream {
        RngStream::new(1, "otdr-test")
    }

    #[test]
    fn backscatter_level_near_minus_50_db() {
        let b = OtdrConfig::default().backscatter_level_db(1.468);
        assert!((b + 49.9).abs() < 0.1, "{b}");
    }

    #[test]
    fn trace_length_is_ceil_of_plant_over_bin() {
        let t = raw_trace(&OtdrConfig::default(), &paper_plant(), &mut rng()).unwrap();
        assert_eq!(t.len(), 1280);
        let p = FibrePath::uniform("odd", 1005.0, 0.2, 1.468, 14.7).unwrap();
        let t = raw_trace(&OtdrConfig::default(), &p, &mut rng()).unwrap();
        assert_eq!(t.len(), 101);
        assert!(t.power_db().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn noiseless_slope_is_twice_attenuation() {
        let p = FibrePath::uniform("u", 10_000.0, 0.2, 1.468, 14.7).unwrap();
        let t = raw_trace(&OtdrConfig::default(), &p, &mut rng()).unwrap();
        let s = fitted_slope_db_per_km(&t, 100.0, 9_900.0).unwrap();
        assert!((s + 0.4).abs() < 1e-6, "{s}");
    }

    #[test]
    fn averaged_noisy_slope_within_tolerance() {
        let p = FibrePath::uniform("u", 10_000.0, 0.2, 1.468, 14.7).unwrap();
        let cfg = OtdrConfig { num_averages: Some(1024), ..OtdrConfig::default() };
        let t = raw_trace(&cfg, &p, &mut rng()).unwrap();
        let s = fitted_slope_db_per_km(&t, 100.0, 9_900.0).unwrap();
        assert!((s + 0.4).abs() < 0.01, "{s}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let p = paper_plant();
        let short = OtdrConfig { pulse_period: SimTime::from_us(100), ..OtdrConfig::default() };
        assert!(matches!(raw_trace(&short, &p, &mut rng()), Err(OtdrError::ConfigInvalid(_))));
        let zero_bin = OtdrConfig { bin_size_m: 0.0, ..OtdrConfig::default() };
        assert!(raw_trace(&zero_bin, &p, &mut rng()).is_err());
        let zero_pulse = OtdrConfig { pulse_width: SimTime::ZERO, ..OtdrConfig::default() };
        assert!(raw_trace(&zero_pulse, &p, &mut rng()).is_err());
        // A zero-length path cannot be built at all.
        assert!(FibrePath::uniform("z", 0.0, 0.2, 1.468, 14.7).is_err());
    }

    #[test]
    fn paper_plant_has_maxima_at_connector_and_end() {
        let t = raw_trace(&OtdrConfig::default(), &paper_plant(), &mut rng()).unwrap();
        let f = detect_features(&t);
        assert_eq!(f.len(), 2, "{f:?}");
        assert!((f[0].position_m - 1100.0).abs() <= 10.0);
        assert_eq!(f[0].kind, ReflectiveKind::Connector);
        assert!((f[1].position_m - 12_800.0).abs() <= 10.0);
        assert_eq!(f[1].kind, ReflectiveKind::FibreEnd);
    }

    #[test]
    fn zero_schedule_is_identity() {
        let t = raw_trace(&OtdrConfig::default(), &paper_plant(), &mut rng()).unwrap();
        let g = apply_gate(&t, &GateSchedule::open(GateTechnology::eo_switch()));
        assert_eq!(g.power_db(), t.power_db());
    }

    #[test]
    fn forty_db_reaches_floor() {
        let t = raw_trace(&OtdrConfig::default(), &paper_plant(), &mut rng()).unwrap();
        let s = GateSchedule::constant(40.0, GateTechnology::mems_voa()).unwrap();
        let g = apply_gate(&t, &s);
        assert!(g.power_db().iter().all(|&p| p == t.noise_floor_dbm()));
    }

    #[test]
    fn window_only_touches_its_bins() {
        let p = paper_plant();
        let t = raw_trace(&OtdrConfig::default(), &p, &mut rng()).unwrap();
        let t1 = p.round_trip_delay(5000.0).unwrap();
        let t2 = p.round_trip_delay(6000.0).unwrap();
        let s = GateSchedule::window(t1, t2, 40.0, GateTechnology::eo_switch()).unwrap();
        let g = apply_gate(&t, &s);
        for i in 0..t.len() {
            let rt = p.round_trip_delay(t.bin_center(i).min(p.length_m())).unwrap();
            if rt >= t1 && rt < t2 {
                assert_eq!(g.power_db()[i], t.noise_floor_dbm(), "bin {i}");
            } else {
                assert_eq!(g.power_db()[i], t.power_db()[i], "bin {i}");
            }
        }
    }

    #[test]
    fn transition_instant_uses_new_value() {
        let s = GateSchedule::window(
            SimTime::from_ns(10),
            SimTime::from_ns(20),
            40.0,
            GateTechnology::eo_switch(),
        )
        .unwrap();
        assert_eq!(s.attenuation_at(SimTime::from_ps(9_999)), 0.0);
        assert_eq!(s.attenuation_at(SimTime::from_ns(10)), 40.0);
        assert_eq!(s.attenuation_at(SimTime::from_ns(20)), 0.0);
    }

    #[test]
    fn schedule_validation() {
        let eo = GateTechnology::eo_switch;
        assert!(GateSchedule::new(vec![], eo()).is_err());
        assert!(GateSchedule::new(vec![(SimTime::from_ns(1), 0.0)], eo()).is_err());
        assert!(GateSchedule::new(
            vec![(SimTime::ZERO, 0.0), (SimTime::ZERO, 1.0)],
            eo()
        )
        .is_err());
        assert!(GateSchedule::new(vec![(SimTime::ZERO, -1.0)], eo()).is_err());
        assert!(GateTechnology::new("x", SimTime::ZERO, 40.0, false).is_err());
    }

    #[test]
    fn max_with_merges_windows() {
        let eo = GateTechnology::eo_switch;
        let a = GateSchedule::window(SimTime::from_ns(10), SimTime::from_ns(20), 40.0, eo()).unwrap();
        let b = GateSchedule::window(SimTime::from_ns(15), SimTime::from_ns(30), 40.0, eo()).unwrap();
        let m = a.max_with(&b);
        assert_eq!(
            m.steps(),
            &[(SimTime::ZERO, 0.0), (SimTime::from_ns(10), 40.0), (SimTime::from_ns(30), 0.0)]
        );
    }

    #[test]
    fn obscuring_window_examples() {
        let p = paper_plant();
        let (z1, z2) =
            obscuring_window_to_distance(SimTime::from_ns(48_970), SimTime::from_ns(9_790), &p);
        assert!((z1 - 5000.0).abs() < 1.0, "{z1}");
        assert!((z2 - 6000.0).abs() < 1.0, "{z2}");
        assert_eq!(obscuring_window_to_distance(SimTime::ZERO, SimTime::ZERO, &p), (0.0, 0.0));
        let (_, z2) =
            obscuring_window_to_distance(SimTime::from_us(120), SimTime::from_us(50), &p);
        assert_eq!(z2, 12_800.0);
    }

    #[test]
    fn leaked_length_examples() {
        let p = paper_plant();
        // (299792458 / 1.468) · 340e-9 / 2
        assert!((leaked_length(SimTime::from_ns(340), &p) - 34.717_110).abs() < 1e-5);
        assert_eq!(leaked_length(SimTime::ZERO, &p), 0.0);
        let mems = leaked_length(SimTime::from_ms(3), &p);
        assert!((mems - 306_327.44).abs() < 0.01);
        assert!(mems > p.length_m());
    }

    #[test]
    fn pure_noise_trace_has_no_features() {
        let p = paper_plant();
        let cfg = OtdrConfig { num_averages: Some(16), ..OtdrConfig::default() };
        let t = raw_trace(&cfg, &p, &mut rng()).unwrap();
        let g = apply_gate(&t, &GateSchedule::constant(60.0, GateTechnology::mems_voa()).unwrap());
        assert!(detect_features(&g).is_empty());
    }

    #[test]
    fn csv_format() {
        let p = FibrePath::uniform("u", 20.0, 0.2, 1.468, 14.7).unwrap();
        let t = raw_trace(&OtdrConfig::default(), &p, &mut rng()).unwrap();
        let csv = t.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "distance_m,power_db");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("5.000000,"));
        assert_eq!(lines[1].split(',').nth(1).unwrap().split('.').nth(1).unwrap().len(), 6);
    }
}
