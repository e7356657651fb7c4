//! Static fibre plant: spans, connectors, multi-core links and sensing
//! regions, plus the distance/time geometry used by the OTDR model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{SimError, SimTime, PS_PER_S};

/// Vacuum speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("distance {distance} m outside [0, {length}] m")]
    OutOfRange { distance: f64, length: f64 },
    #[error("invalid fibre segment: {0}")]
    InvalidSegment(String),
    #[error("invalid connector: {0}")]
    InvalidConnector(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error(transparent)]
    Time(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FibreSegment {
    pub length_m: f64,
    pub attenuation_db_per_km: f64,
    pub group_index: f64,
}

impl FibreSegment {
    pub fn new(
        length_m: f64,
        attenuation_db_per_km: f64,
        group_index: f64,
    ) -> Result<Self, PlantError> {
        let seg = FibreSegment { length_m, attenuation_db_per_km, group_index };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.length_m.is_finite() && self.length_m > 0.0) {
            return Err(PlantError::InvalidSegment(format!("length {} m", self.length_m)));
        }
        if !(self.attenuation_db_per_km.is_finite() && self.attenuation_db_per_km >= 0.0) {
            return Err(PlantError::InvalidSegment(format!(
                "attenuation {} dB/km",
                self.attenuation_db_per_km
            )));
        }
        if !(self.group_index > 1.0 && self.group_index < 2.0) {
            return Err(PlantError::InvalidSegment(format!("group index {}", self.group_index)));
        }
        Ok(())
    }

    /// Loss in dB per metre.
    pub fn attenuation_db_per_m(&self) -> f64 {
        self.attenuation_db_per_km / 1000.0
    }

    /// Group velocity, m/s.
    pub fn group_velocity(&self) -> f64 {
        SPEED_OF_LIGHT / self.group_index
    }
}

/// A discrete loss/reflection point. `return_loss_db = INFINITY` marks a
/// non-reflective event such as a fusion splice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectorEvent {
    pub position_m: f64,
    pub insertion_loss_db: f64,
    pub return_loss_db: f64,
}

impl ConnectorEvent {
    pub fn reflectance_db(&self) -> f64 {
        -self.return_loss_db
    }

    pub fn is_reflective(&self) -> bool {
        self.return_loss_db.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReflectiveKind {
    Connector,
    FibreEnd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectiveEvent {
    pub position_m: f64,
    pub reflectance_db: f64,
    pub kind: ReflectiveKind,
}

/// One sensed fibre (or one core of a multi-core link).
#[derive(Debug, Clone, PartialEq)]
pub struct FibrePath {
    id: String,
    segments: Vec<FibreSegment>,
    connectors: Vec<ConnectorEvent>,
    end_return_loss_db: f64,
    core_id: Option<u32>,
    // Cumulative start position and round-trip delay (seconds) of each segment.
    seg_start_m: Vec<f64>,
    seg_start_rt_s: Vec<f64>,
    length_m: f64,
}

impl FibrePath {
    pub fn new(
        id: impl Into<String>,
        segments: Vec<FibreSegment>,
        connectors: Vec<ConnectorEvent>,
        end_return_loss_db: f64,
    ) -> Result<Self, PlantError> {
        if segments.is_empty() {
            return Err(PlantError::InvalidPath("path has no segments".into()));
        }
        for s in &segments {
            s.validate()?;
        }
        let mut seg_start_m = Vec::with_capacity(segments.len());
        let mut seg_start_rt_s = Vec::with_capacity(segments.len());
        let mut z = 0.0;
        let mut rt = 0.0;
        for s in &segments {
            seg_start_m.push(z);
            seg_start_rt_s.push(rt);
            z += s.length_m;
            rt += 2.0 * s.length_m * s.group_index / SPEED_OF_LIGHT;
        }
        let length_m = z;
        for (i, c) in connectors.iter().enumerate() {
            if !(c.position_m >= 0.0 && c.position_m <= length_m) {
                return Err(PlantError::InvalidConnector(format!(
                    "connector {i} at {} m outside path of {length_m} m",
                    c.position_m
                )));
            }
            if !(c.insertion_loss_db >= 0.0 && c.insertion_loss_db.is_finite()) {
                return Err(PlantError::InvalidConnector(format!(
                    "connector {i} insertion loss {}",
                    c.insertion_loss_db
                )));
            }
            if !(c.return_loss_db > 0.0) {
                return Err(PlantError::InvalidConnector(format!(
                    "connector {i} return loss {}",
                    c.return_loss_db
                )));
            }
            if i > 0 && connectors[i - 1].position_m >= c.position_m {
                return Err(PlantError::InvalidConnector(
                    "connector positions must be strictly increasing".into(),
                ));
            }
        }
        if !(end_return_loss_db > 0.0) {
            return Err(PlantError::InvalidPath(format!("end return loss {end_return_loss_db}")));
        }
        Ok(FibrePath {
            id: id.into(),
            segments,
            connectors,
            end_return_loss_db,
            core_id: None,
            seg_start_m,
            seg_start_rt_s,
            length_m,
        })
    }

    /// Single uniform span.
    pub fn uniform(
        id: impl Into<String>,
        length_m: f64,
        attenuation_db_per_km: f64,
        group_index: f64,
        end_return_loss_db: f64,
    ) -> Result<Self, PlantError> {
        let seg = FibreSegment::new(length_m, attenuation_db_per_km, group_index)?;
        FibrePath::new(id, vec![seg], Vec::new(), end_return_loss_db)
    }

    pub fn with_core(mut self, core: u32) -> Self {
        self.core_id = Some(core);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn segments(&self) -> &[FibreSegment] {
        &self.segments
    }

    pub fn connectors(&self) -> &[ConnectorEvent] {
        &self.connectors
    }

    pub fn end_return_loss_db(&self) -> f64 {
        self.end_return_loss_db
    }

    pub fn core_id(&self) -> Option<u32> {
        self.core_id
    }

    pub fn length_m(&self) -> f64 {
        self.length_m
    }

    fn check_range(&self, distance: f64) -> Result<(), PlantError> {
        if distance.is_nan() || distance < 0.0 || distance > self.length_m {
            return Err(PlantError::OutOfRange { distance, length: self.length_m });
        }
        Ok(())
    }

    fn segment_index(&self, distance: f64) -> usize {
        // Last segment whose start is <= distance.
        self.seg_start_m.partition_point(|&s| s <= distance).saturating_sub(1)
    }

    /// Round-trip time of flight to `distance` in seconds, unrounded.
    pub fn round_trip_secs(&self, distance: f64) -> Result<f64, PlantError> {
        self.check_range(distance)?;
        let i = self.segment_index(distance);
        let seg = &self.segments[i];
        Ok(self.seg_start_rt_s[i]
            + 2.0 * (distance - self.seg_start_m[i]) * seg.group_index / SPEED_OF_LIGHT)
    }

    /// Round-trip time of flight `2·n·z/c`, rounded to the nearest tick.
    pub fn round_trip_delay(&self, distance: f64) -> Result<SimTime, PlantError> {
        Ok(SimTime::from_secs_f64(self.round_trip_secs(distance)?)?)
    }

    /// Inverse of [`round_trip_secs`](Self::round_trip_secs). Times beyond the
    /// fibre end extrapolate with the last segment's group index; negative
    /// times map to 0.
    pub fn distance_at_round_trip_secs(&self, secs: f64) -> f64 {
        if secs <= 0.0 {
            return 0.0;
        }
        let i = self.seg_start_rt_s.partition_point(|&s| s <= secs).saturating_sub(1);
        let seg = &self.segments[i];
        let local = (secs - self.seg_start_rt_s[i]) * SPEED_OF_LIGHT / (2.0 * seg.group_index);
        let within = self.seg_start_m[i] + local;
        if i + 1 < self.segments.len() {
            within.min(self.seg_start_m[i + 1])
        } else {
            within
        }
    }

    pub fn distance_at_round_trip(&self, t: SimTime) -> f64 {
        self.distance_at_round_trip_secs(t.as_ps() as f64 / PS_PER_S as f64)
    }

    /// Fibre loss plus insertion losses of connectors strictly before `distance`.
    pub fn one_way_attenuation(&self, distance: f64) -> Result<f64, PlantError> {
        self.check_range(distance)?;
        let mut loss = 0.0;
        for (seg, &start) in self.segments.iter().zip(&self.seg_start_m) {
            if start >= distance {
                break;
            }
            let covered = (distance - start).min(seg.length_m);
            loss += covered * seg.attenuation_db_per_m();
        }
        loss += self
            .connectors
            .iter()
            .filter(|c| c.position_m < distance)
            .map(|c| c.insertion_loss_db)
            .sum::<f64>();
        Ok(loss)
    }

    /// Reflective connectors plus the fibre end, sorted by position.
    pub fn reflective_events(&self) -> Vec<ReflectiveEvent> {
        let mut events: Vec<ReflectiveEvent> = self
            .connectors
            .iter()
            .filter(|c| c.is_reflective())
            .map(|c| ReflectiveEvent {
                position_m: c.position_m,
                reflectance_db: c.reflectance_db(),
                kind: ReflectiveKind::Connector,
            })
            .collect();
        if self.end_return_loss_db.is_finite() {
            events.push(ReflectiveEvent {
                position_m: self.length_m,
                reflectance_db: -self.end_return_loss_db,
                kind: ReflectiveKind::FibreEnd,
            });
        }
        events.sort_by(|a, b| a.position_m.total_cmp(&b.position_m));
        events
    }

    /// The same fibre seen from the far end.
    pub fn reversed(&self) -> FibrePath {
        let segments: Vec<_> = self.segments.iter().rev().copied().collect();
        let connectors: Vec<_> = self
            .connectors
            .iter()
            .rev()
            .map(|c| ConnectorEvent { position_m: self.length_m - c.position_m, ..*c })
            .collect();
        let mut p = FibrePath::new(
            format!("{}~rev", self.id),
            segments,
            connectors,
            self.end_return_loss_db,
        )
        .expect("reversal of a valid path is valid");
        p.core_id = self.core_id;
        p
    }
}

/// A bundle of uncoupled cores with identical geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoreLink {
    pub id: String,
    pub cores: Vec<FibrePath>,
}

impl MultiCoreLink {
    pub fn from_template(template: &FibrePath, core_count: u32) -> Self {
        let cores = (0..core_count)
            .map(|c| {
                let mut p = template.clone().with_core(c);
                p.id = format!("{}#{}", template.id, c);
                p
            })
            .collect();
        MultiCoreLink { id: template.id.clone(), cores }
    }

    pub fn core(&self, core: u32) -> Option<&FibrePath> {
        self.cores.iter().find(|p| p.core_id == Some(core))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpan {
    pub path_id: String,
    pub start_m: f64,
    pub end_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingRegion {
    pub region_id: String,
    pub fscd_ids: Vec<String>,
    pub spans: Vec<RegionSpan>,
}

/// Checks that no FSCD belongs to more than one region and that every listed
/// device appears in some region.
pub fn check_region_membership<'a>(
    regions: &[SensingRegion],
    devices: impl IntoIterator<Item = &'a str>,
) -> Result<(), PlantError> {
    let mut seen = std::collections::BTreeMap::new();
    for r in regions {
        for f in &r.fscd_ids {
            if let Some(prev) = seen.insert(f.as_str(), r.region_id.as_str()) {
                return Err(PlantError::InvalidPath(format!(
                    "FSCD {f} belongs to regions {prev} and {}",
                    r.region_id
                )));
            }
        }
    }
    for d in devices {
        if !seen.contains_key(d) {
            return Err(PlantError::InvalidPath(format!("FSCD {d} is in no sensing region")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_plant() -> FibrePath {
        let seg = FibreSegment::new(12_800.0, 0.2, 1.468).unwrap();
        let conn = ConnectorEvent { position_m: 1100.0, insertion_loss_db: 0.3, return_loss_db: 45.0 };
        FibrePath::new("plant", vec![seg], vec![conn], 14.7).unwrap()
    }

    #[test]
    fn round_trip_at_origin_is_zero() {
        assert_eq!(reference_plant().round_trip_delay(0.0).unwrap(), SimTime::ZERO);
    }

    #[test]
    fn round_trip_matches_hand_oracle() {
        let p = reference_plant();
        // 2·1100·1.468 / 299792458 s = 10.772786... µs
        let t = p.round_trip_delay(1100.0).unwrap().as_ps();
        assert_eq!(t, 10_772_786);
        let t = p.round_trip_delay(12_800.0).unwrap().as_ps();
        assert_eq!(t, 125_356_055);
    }

    #[test]
    fn round_trip_out_of_range() {
        let p = reference_plant();
        assert!(matches!(p.round_trip_delay(12_800.1), Err(PlantError::OutOfRange { .. })));
        assert!(matches!(p.one_way_attenuation(-1.0), Err(PlantError::OutOfRange { .. })));
    }

    #[test]
    fn attenuation_examples() {
        let p = FibrePath::uniform("u", 10_000.0, 0.2, 1.468, 14.7).unwrap();
        assert_eq!(p.one_way_attenuation(0.0).unwrap(), 0.0);
        assert!((p.one_way_attenuation(10_000.0).unwrap() - 2.0).abs() < 1e-12);

        let seg = FibreSegment::new(2000.0, 0.2, 1.468).unwrap();
        let c = ConnectorEvent { position_m: 1100.0, insertion_loss_db: 0.3, return_loss_db: 45.0 };
        let p = FibrePath::new("c", vec![seg], vec![c], 14.7).unwrap();
        assert!((p.one_way_attenuation(2000.0).unwrap() - 0.7).abs() < 1e-12);
        // Strictly before: the connector's own position excludes its loss.
        assert!((p.one_way_attenuation(1100.0).unwrap() - 0.22).abs() < 1e-12);
    }

    #[test]
    fn reflective_events_sorted() {
        let bare = FibrePath::uniform("b", 12_800.0, 0.2, 1.468, 14.7).unwrap();
        let ev = bare.reflective_events();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].position_m, 12_800.0);

        let ev = reference_plant().reflective_events();
        let pos: Vec<_> = ev.iter().map(|e| e.position_m).collect();
        assert_eq!(pos, vec![1100.0, 12_800.0]);
        assert_eq!(ev[0].kind, ReflectiveKind::Connector);
        assert_eq!(ev[1].kind, ReflectiveKind::FibreEnd);

        let seg = FibreSegment::new(5000.0, 0.2, 1.468).unwrap();
        let c1 = ConnectorEvent { position_m: 1000.0, insertion_loss_db: 0.3, return_loss_db: 45.0 };
        let splice = ConnectorEvent { position_m: 2000.0, insertion_loss_db: 0.05, return_loss_db: f64::INFINITY };
        let c2 = ConnectorEvent { position_m: 3000.0, insertion_loss_db: 0.3, return_loss_db: 50.0 };
        let p = FibrePath::new("x", vec![seg], vec![c1, splice, c2], 14.7).unwrap();
        let pos: Vec<_> = p.reflective_events().iter().map(|e| e.position_m).collect();
        assert_eq!(pos, vec![1000.0, 3000.0, 5000.0]);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(FibreSegment::new(0.0, 0.2, 1.468).is_err());
        assert!(FibreSegment::new(10.0, -0.1, 1.468).is_err());
        assert!(FibreSegment::new(10.0, 0.2, 2.0).is_err());
        let seg = FibreSegment::new(100.0, 0.2, 1.468).unwrap();
        let c = |p| ConnectorEvent { position_m: p, insertion_loss_db: 0.3, return_loss_db: 45.0 };
        assert!(FibrePath::new("x", vec![seg], vec![c(50.0), c(50.0)], 14.7).is_err());
        assert!(FibrePath::new("x", vec![seg], vec![c(150.0)], 14.7).is_err());
        assert!(FibrePath::new("x", vec![], vec![], 14.7).is_err());
    }

    #[test]
    fn multi_segment_geometry_is_continuous() {
        let a = FibreSegment::new(1000.0, 0.2, 1.468).unwrap();
        let b = FibreSegment::new(2000.0, 0.3, 1.47).unwrap();
        let p = FibrePath::new("m", vec![a, b], vec![], 14.7).unwrap();
        assert!((p.length_m() - 3000.0).abs() < 1e-12);
        let t = p.round_trip_secs(2500.0).unwrap();
        assert!((p.distance_at_round_trip_secs(t) - 2500.0).abs() < 1e-9);
        assert!((p.one_way_attenuation(3000.0).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn reversal_mirrors_connectors() {
        let r = reference_plant().reversed();
        assert_eq!(r.connectors()[0].position_m, 11_700.0);
        assert_eq!(r.length_m(), 12_800.0);
    }

    #[test]
    fn multicore_cores_share_geometry() {
        let t = FibrePath::uniform("mcf", 40_000.0, 0.2, 1.468, 14.7).unwrap();
        let link = MultiCoreLink::from_template(&t, 7);
        assert_eq!(link.cores.len(), 7);
        assert_eq!(link.core(3).unwrap().core_id(), Some(3));
        assert_eq!(link.core(3).unwrap().length_m(), 40_000.0);
    }

    #[test]
    fn region_membership_exclusive() {
        let r = |id: &str, f: &[&str]| SensingRegion {
            region_id: id.into(),
            fscd_ids: f.iter().map(|s| s.to_string()).collect(),
            spans: vec![],
        };
        assert!(check_region_membership(&[r("a", &["x"]), r("b", &["y"])], ["x", "y"]).is_ok());
        assert!(check_region_membership(&[r("a", &["x"]), r("b", &["x"])], ["x"]).is_err());
        assert!(check_region_membership(&[r("a", &["x"])], ["x", "z"]).is_err());
    }
}
