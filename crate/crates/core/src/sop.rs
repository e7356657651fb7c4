//! State-of-polarization dynamics on the Poincaré sphere.
//!
//! Rotation sequences are per-sample increments: element `k` is the rotation
//! accumulated between sample `k-1` and sample `k` (element 0 acts before the
//! first sample). [`propagate_sop`] composes them into the observed trace
//! `s_k = S_k · E_k · s0`, where `S_k` and `E_k` are the running products of
//! the scrambler and event increments.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;
use crate::sim::{RngStream, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SopError {
    #[error("rotation sequences differ in length ({event} vs {scrambler})")]
    LengthMismatch { event: usize, scrambler: usize },
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("need at least {needed} traces per class, got {with_event} and {without_event}")]
    TooFewSamples { needed: usize, with_event: usize, without_event: usize },
    #[error("not a unit Stokes vector (norm {0})")]
    NotUnit(f64),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesVector {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub fn new(s1: f64, s2: f64, s3: f64) -> Result<Self, SopError> {
        let v = StokesVector { s1, s2, s3 };
        let n = v.norm();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(SopError::NotUnit(n));
        }
        Ok(v)
    }

    /// Projects an arbitrary non-zero 3-vector onto the sphere.
    pub fn normalized(s1: f64, s2: f64, s3: f64) -> Result<Self, SopError> {
        let n = (s1 * s1 + s2 * s2 + s3 * s3).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(SopError::NotUnit(n));
        }
        Ok(StokesVector { s1: s1 / n, s2: s2 / n, s3: s3 / n })
    }

    pub fn horizontal() -> Self {
        StokesVector { s1: 1.0, s2: 0.0, s3: 0.0 }
    }

    pub fn norm(&self) -> f64 {
        (self.s1 * self.s1 + self.s2 * self.s2 + self.s3 * self.s3).sqrt()
    }

    pub fn dot(&self, other: &StokesVector) -> f64 {
        self.s1 * other.s1 + self.s2 * other.s2 + self.s3 * other.s3
    }

    /// Great-circle angle to `other`, with the dot product clamped to [-1, 1].
    pub fn angle_to(&self, other: &StokesVector) -> f64 {
        self.dot(other).clamp(-1.0, 1.0).acos()
    }

    fn as_array(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }

    /// Uniformly distributed on the sphere.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let g: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            if let Ok(v) = StokesVector::normalized(g[0], g[1], g[2]) {
                return v;
            }
        }
    }
}

/// Rotation of Stokes space, stored as axis and (unwrapped) angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation3 {
    axis: [f64; 3],
    angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Quat {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Quat {
    const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    fn mul(self, o: Quat) -> Quat {
        Quat {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    fn normalize(self) -> Quat {
        let n = (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        Quat { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }
    }

    fn apply(self, v: [f64; 3]) -> [f64; 3] {
        let Quat { w, x, y, z } = self;
        let m = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }
}

fn apply_renormalized(q: Quat, s: &StokesVector) -> StokesVector {
    let r = q.apply(s.as_array());
    let n = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    StokesVector { s1: r[0] / n, s2: r[1] / n, s3: r[2] / n }
}

impl Rotation3 {
    pub const IDENTITY: Rotation3 = Rotation3 { axis: [1.0, 0.0, 0.0], angle: 0.0 };

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self, SopError> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !(n > 0.0 && n.is_finite() && angle.is_finite()) {
            return Err(SopError::Invalid("rotation axis must be a finite non-zero vector".into()));
        }
        Ok(Rotation3 { axis: [axis[0] / n, axis[1] / n, axis[2] / n], angle })
    }

    pub fn axis(&self) -> [f64; 3] {
        self.axis
    }

    /// Unwrapped rotation angle, radians.
    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn is_identity(&self) -> bool {
        self.angle == 0.0
    }

    fn quat(&self) -> Quat {
        let (s, c) = (self.angle / 2.0).sin_cos();
        Quat { w: c, x: s * self.axis[0], y: s * self.axis[1], z: s * self.axis[2] }
    }

    fn from_quat(q: Quat) -> Rotation3 {
        let q = q.normalize();
        let v = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        if v == 0.0 {
            return Rotation3::IDENTITY;
        }
        Rotation3 { axis: [q.x / v, q.y / v, q.z / v], angle: 2.0 * v.atan2(q.w) }
    }

    pub fn apply(&self, s: &StokesVector) -> StokesVector {
        apply_renormalized(self.quat(), s)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Rotation3) -> Rotation3 {
        Rotation3::from_quat(self.quat().mul(other.quat()))
    }

    pub fn inverse(&self) -> Rotation3 {
        Rotation3 { axis: self.axis, angle: -self.angle }
    }

    /// Uniform random axis with the given angle.
    pub fn random_axis<R: Rng + ?Sized>(rng: &mut R, angle: f64) -> Rotation3 {
        let a = StokesVector::random(rng);
        Rotation3 { axis: a.as_array(), angle }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SopTrace {
    pub sampling_period: SimTime,
    pub samples: Vec<StokesVector>,
    pub labels: Vec<bool>,
}

impl SopTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_labels(mut self, labels: Vec<bool>) -> Self {
        assert_eq!(labels.len(), self.samples.len(), "one label per sample");
        self.labels = labels;
        self
    }

    /// Applies one fixed rotation to every sample.
    pub fn rotated(&self, r: &Rotation3) -> SopTrace {
        SopTrace {
            samples: self.samples.iter().map(|s| r.apply(s)).collect(),
            ..self.clone()
        }
    }

    /// `t_s,s1,s2,s3,event_flag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,s1,s2,s3,event_flag\n");
        let dt = self.sampling_period.as_secs_f64();
        for (k, s) in self.samples.iter().enumerate() {
            let flag = u8::from(self.labels.get(k).copied().unwrap_or(false));
            out.push_str(&format!(
                "{:.6},{:.9},{:.9},{:.9},{}\n",
                k as f64 * dt,
                s.s1,
                s.s2,
                s.s3,
                flag
            ));
        }
        out
    }
}

/// Band-limited mechanical disturbance acting on the fibre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceProfile {
    pub start: SimTime,
    pub end: SimTime,
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub peak_rate_rad_s: f64,
}

impl DisturbanceProfile {
    pub fn validate(&self) -> Result<(), SopError> {
        if !(self.f_lo_hz > 0.0 && self.f_lo_hz < self.f_hi_hz && self.f_hi_hz.is_finite()) {
            return Err(SopError::Invalid(format!(
                "disturbance band ({}, {}) Hz",
                self.f_lo_hz, self.f_hi_hz
            )));
        }
        if !(self.peak_rate_rad_s > 0.0 && self.peak_rate_rad_s.is_finite()) {
            return Err(SopError::Invalid(format!("peak rate {}", self.peak_rate_rad_s)));
        }
        if self.end < self.start {
            return Err(SopError::Invalid("disturbance ends before it starts".into()));
        }
        Ok(())
    }

    pub fn contains(&self, t: SimTime) -> bool {
        t >= self.start && t <= self.end
    }

    /// Ground-truth flag per sample.
    pub fn labels(&self, dt: SimTime, n_samples: usize) -> Vec<bool> {
        (0..n_samples).map(|k| self.contains(sample_time(dt, k))).collect()
    }
}

fn sample_time(dt: SimTime, k: usize) -> SimTime {
    dt.checked_mul(k as i64).expect("sample time overflow")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScramblerConfig {
    /// Mean rotation rate, rotations per second.
    pub rate_hz: f64,
    pub activation_delay: SimTime,
    pub enabled: bool,
    /// Upper bound on `rate_hz` (transmission-penalty ceiling).
    pub max_rate_hz: f64,
}

impl ScramblerConfig {
    pub fn validate(&self) -> Result<(), SopError> {
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(SopError::Invalid(format!("scrambling rate {}", self.rate_hz)));
        }
        if self.rate_hz > self.max_rate_hz {
            return Err(SopError::Invalid(format!(
                "scrambling rate {} exceeds ceiling {}",
                self.rate_hz, self.max_rate_hz
            )));
        }
        if self.activation_delay < SimTime::ZERO {
            return Err(SopError::Invalid("negative activation delay".into()));
        }
        Ok(())
    }
}

fn check_dt(dt: SimTime) -> Result<(), SopError> {
    if dt <= SimTime::ZERO {
        return Err(SopError::Invalid("sampling period must be positive".into()));
    }
    Ok(())
}

const EVENT_TONES: usize = 8;
const AXIS_WALK_SIGMA: f64 = 0.1;

fn walk_axis<R: Rng + ?Sized>(axis: [f64; 3], rng: &mut R) -> [f64; 3] {
    let g: [f64; 3] =
        [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let v = [
        axis[0] + AXIS_WALK_SIGMA * g[0],
        axis[1] + AXIS_WALK_SIGMA * g[1],
        axis[2] + AXIS_WALK_SIGMA * g[2],
    ];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n > 0.0 {
        [v[0] / n, v[1] / n, v[2] / n]
    } else {
        axis
    }
}

/// Per-sample rotation increments of a mechanical disturbance: a sum of
/// random tones inside the band drives a signed angular rate bounded by the
/// peak rate, about an axis that random-walks on the sphere. Increments
/// outside the event window are identity.
pub fn event_rotation_sequence(
    profile: &DisturbanceProfile,
    dt: SimTime,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<Rotation3>, SopError> {
    check_dt(dt)?;
    if profile.peak_rate_rad_s == 0.0 {
        return Ok(vec![Rotation3::IDENTITY; n_samples]);
    }
    profile.validate()?;
    let tones: Vec<(f64, f64, f64)> = (0..EVENT_TONES)
        .map(|_| {
            let f = rng.random_range(profile.f_lo_hz..=profile.f_hi_hz);
            let phase = rng.random_range(0.0..TAU);
            let amp = rng.random_range(0.5..=1.0);
            (f, phase, amp)
        })
        .collect();
    let amp_sum: f64 = tones.iter().map(|t| t.2).sum();
    let mut axis = StokesVector::random(rng).as_array();
    let dt_s = dt.as_secs_f64();

    let mut out = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        if k == 0 {
            out.push(Rotation3::IDENTITY);
            continue;
        }
        let t_prev = sample_time(dt, k - 1);
        let t_now = sample_time(dt, k);
        if t_prev < profile.start || t_now > profile.end {
            out.push(Rotation3::IDENTITY);
            continue;
        }
        let t_mid = (t_prev.as_secs_f64() + t_now.as_secs_f64()) / 2.0;
        let drive: f64 =
            tones.iter().map(|(f, ph, a)| a * (TAU * f * t_mid + ph).sin()).sum::<f64>() / amp_sum;
        let rate = profile.peak_rate_rad_s * drive.clamp(-1.0, 1.0);
        axis = walk_axis(axis, rng);
        out.push(Rotation3 { axis, angle: rate * dt_s });
    }
    Ok(out)
}

/// Slow constant-rate drift about a wandering axis.
pub fn ambient_rotation_sequence(
    rate_rad_s: f64,
    dt: SimTime,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<Rotation3>, SopError> {
    check_dt(dt)?;
    if rate_rad_s == 0.0 {
        return Ok(vec![Rotation3::IDENTITY; n_samples]);
    }
    let mut axis = StokesVector::random(rng).as_array();
    Ok((0..n_samples)
        .map(|k| {
            if k == 0 {
                return Rotation3::IDENTITY;
            }
            axis = walk_axis(axis, rng);
            Rotation3 { axis, angle: rate_rad_s * dt.as_secs_f64() }
        })
        .collect())
}

/// Scrambler increments: a uniformly random axis per sample and an angle
/// drawn uniformly from `[0, 2·ω·dt]`, so the mean rate is `ω = 2π·rate_hz`.
/// Increments before `enabled_at + activation_delay` are identity.
pub fn scrambler_rotation_sequence(
    config: &ScramblerConfig,
    enabled_at: SimTime,
    dt: SimTime,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<Rotation3>, SopError> {
    check_dt(dt)?;
    if !config.enabled {
        return Ok(vec![Rotation3::IDENTITY; n_samples]);
    }
    config.validate()?;
    let active_from = enabled_at + config.activation_delay;
    let mean_angle = TAU * config.rate_hz * dt.as_secs_f64();
    Ok((0..n_samples)
        .map(|k| {
            if k == 0 || sample_time(dt, k) < active_from {
                return Rotation3::IDENTITY;
            }
            let angle = rng.random_range(0.0..=2.0 * mean_angle);
            Rotation3::random_axis(rng, angle)
        })
        .collect())
}

/// Composes event and scrambler increments and applies them to `s0`.
pub fn propagate_sop(
    s0: StokesVector,
    event_seq: &[Rotation3],
    scrambler_seq: &[Rotation3],
    sampling_period: SimTime,
) -> Result<SopTrace, SopError> {
    if event_seq.len() != scrambler_seq.len() {
        return Err(SopError::LengthMismatch {
            event: event_seq.len(),
            scrambler: scrambler_seq.len(),
        });
    }
    let mut e_cum = Quat::IDENTITY;
    let mut s_cum = Quat::IDENTITY;
    let samples = event_seq
        .iter()
        .zip(scrambler_seq)
        .map(|(e, s)| {
            if !e.is_identity() {
                e_cum = e.quat().mul(e_cum).normalize();
            }
            if !s.is_identity() {
                s_cum = s.quat().mul(s_cum).normalize();
            }
            apply_renormalized(s_cum.mul(e_cum), &s0)
        })
        .collect::<Vec<_>>();
    let labels = vec![false; samples.len()];
    Ok(SopTrace { sampling_period, samples, labels })
}

/// Angular speed between consecutive samples, rad/s.
pub fn angular_rate(trace: &SopTrace) -> Result<Vec<f64>, SopError> {
    if trace.samples.len() < 2 {
        return Err(SopError::TooShort(trace.samples.len()));
    }
    let dt = trace.sampling_period.as_secs_f64();
    Ok(trace.samples.windows(2).map(|w| w[0].angle_to(&w[1]) / dt).collect())
}

/// Inclusive range of sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleInterval {
    pub first: usize,
    pub last: usize,
}

impl SampleInterval {
    pub fn overlaps_labels(&self, labels: &[bool]) -> bool {
        labels.get(self.first..=self.last).is_some_and(|l| l.iter().any(|&x| x))
    }
}

/// Maximal runs of samples reached at an angular rate above `threshold`.
/// The rate between samples `j` and `j+1` is attributed to sample `j+1`.
pub fn detect_disturbance(
    trace: &SopTrace,
    threshold_rad_s: f64,
) -> Result<Vec<SampleInterval>, SopError> {
    if !(threshold_rad_s > 0.0) {
        return Err(SopError::Invalid(format!("threshold {threshold_rad_s}")));
    }
    let rates = angular_rate(trace)?;
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (j, r) in rates.iter().enumerate() {
        let sample = j + 1;
        match (open, *r > threshold_rad_s) {
            (None, true) => open = Some(sample),
            (Some(first), false) => {
                out.push(SampleInterval { first, last: sample - 1 });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(first) = open {
        out.push(SampleInterval { first, last: rates.len() });
    }
    Ok(out)
}

/// Area under the ROC curve for scores where `positive` should rank higher,
/// from average ranks (ties count half).
pub fn rank_auc(positive: &[f64], negative: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg_rank * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let np = positive.len() as f64;
    let nn = negative.len() as f64;
    (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn)
}

pub const MIN_TRACES_PER_CLASS: usize = 20;

/// AUC of the "maximum angular rate over the trace" classifier.
pub fn distinguishability(
    traces_with_event: &[SopTrace],
    traces_without_event: &[SopTrace],
) -> Result<f64, SopError> {
    if traces_with_event.len() < MIN_TRACES_PER_CLASS
        || traces_without_event.len() < MIN_TRACES_PER_CLASS
    {
        return Err(SopError::TooFewSamples {
            needed: MIN_TRACES_PER_CLASS,
            with_event: traces_with_event.len(),
            without_event: traces_without_event.len(),
        });
    }
    let score = |t: &SopTrace| -> Result<f64, SopError> {
        Ok(angular_rate(t)?.into_iter().fold(0.0, f64::max))
    };
    let pos = traces_with_event.iter().map(score).collect::<Result<Vec<_>, _>>()?;
    let neg = traces_without_event.iter().map(score).collect::<Result<Vec<_>, _>>()?;
    Ok(rank_auc(&pos, &neg))
}

/// A repeatable SoP monitoring experiment on one sensing path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SopExperiment {
    pub s0: StokesVector,
    pub sampling_period: SimTime,
    pub n_samples: usize,
    pub disturbance: DisturbanceProfile,
    pub ambient_rate_rad_s: f64,
    /// Scrambler and the time it was commanded on, when the path scrambles.
    pub scrambler: Option<(ScramblerConfig, SimTime)>,
    pub threshold_rad_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub trials: usize,
    /// Event traces with a flagged interval overlapping the ground truth.
    pub detected: usize,
    /// Flagged intervals on event-free traces.
    pub false_positive_intervals: usize,
    pub auc: f64,
}

impl SopExperiment {
    /// One trial. The stream label depends only on `(class, trial)`, so the
    /// result does not depend on execution order.
    pub fn trial(&self, seed: u64, label: &str, trial: usize, with_event: bool) -> Result<SopTrace, SopError> {
        let class = if with_event { "event" } else { "static" };
        let base = RngStream::new(seed, format!("{label}/{class}/{trial}"));
        let n = self.n_samples;
        let dt = self.sampling_period;
        let event = if with_event {
            event_rotation_sequence(&self.disturbance, dt, n, &mut base.substream("event"))?
        } else {
            vec![Rotation3::IDENTITY; n]
        };
        let ambient =
            ambient_rotation_sequence(self.ambient_rate_rad_s, dt, n, &mut base.substream("ambient"))?;
        let event: Vec<Rotation3> =
            event.iter().zip(&ambient).map(|(e, a)| e.compose(a)).collect();
        let scr = match &self.scrambler {
            Some((cfg, at)) => {
                scrambler_rotation_sequence(cfg, *at, dt, n, &mut base.substream("scrambler"))?
            }
            None => vec![Rotation3::IDENTITY; n],
        };
        let labels = if with_event { self.disturbance.labels(dt, n) } else { vec![false; n] };
        Ok(propagate_sop(self.s0, &event, &scr, dt)?.with_labels(labels))
    }

    pub fn ensemble(
        &self,
        seed: u64,
        label: &str,
        trials: usize,
        exec: Execution,
    ) -> Result<EnsembleStats, SopError> {
        if trials < MIN_TRACES_PER_CLASS {
            return Err(SopError::TooFewSamples {
                needed: MIN_TRACES_PER_CLASS,
                with_event: trials,
                without_event: trials,
            });
        }
        let results = exec.map_indices(2 * trials, |i| {
            let with_event = i < trials;
            let trace = self.trial(seed, label, i % trials, with_event)?;
            let flagged = detect_disturbance(&trace, self.threshold_rad_s)?;
            let max_rate = angular_rate(&trace)?.into_iter().fold(0.0, f64::max);
            let hit = flagged.iter().any(|iv| iv.overlaps_labels(&trace.labels));
            Ok::<_, SopError>((with_event, hit, flagged.len(), max_rate))
        });
        let mut detected = 0;
        let mut false_positive_intervals = 0;
        let mut pos = Vec::with_capacity(trials);
        let mut neg = Vec::with_capacity(trials);
        for r in results {
            let (with_event, hit, n_flags, max_rate) = r?;
            if with_event {
                detected += usize::from(hit);
                pos.push(max_rate);
            } else {
                false_positive_intervals += n_flags;
                neg.push(max_rate);
            }
        }
        Ok(EnsembleStats { trials, detected, false_positive_intervals, auc: rank_auc(&pos, &neg) })
    }
}
