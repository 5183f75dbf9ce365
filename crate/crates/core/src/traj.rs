//! Trajectory data model shared by every stage of the engine.
//!
//! A [`Track`] is one object's ordered sequence of 10-component box states
//! (translation, orientation quaternion, box size) in the ego-vehicle frame.
//! A [`LogManifest`] groups the tracks of one driving log together with its
//! duration, frame rate and camera list.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of per-timestep features in a track state.
pub const STATE_DIM: usize = 10;

/// Tolerance on the quaternion norm.
pub const QUAT_NORM_TOL: f64 = 1e-6;

/// Lower clamp applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

const NS_PER_SEC: f64 = 1e9;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed log file at line {line}: {message}")]
    Format { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, TrajError>;

/// Converts seconds to integer nanoseconds, rounding to the nearest ns.
pub fn secs_to_ns(secs: f64) -> i64 {
    (secs * NS_PER_SEC).round() as i64
}

pub fn ns_to_secs(ns: i64) -> f64 {
    ns as f64 / NS_PER_SEC
}

/// Unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `yaw` radians about the vertical axis.
    pub fn from_yaw(yaw: f64) -> Self {
        let half = 0.5 * yaw;
        Self::new(half.cos(), 0.0, 0.0, half.sin())
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= QUAT_NORM_TOL
    }
}

impl std::ops::Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Heading about the vertical axis, in `(-pi, pi]`.
pub fn yaw_from_quaternion(q: Quaternion) -> Result<f64> {
    if !q.is_unit() {
        return Err(TrajError::InvalidInput(format!(
            "quaternion norm {} is not within {QUAT_NORM_TOL} of 1",
            q.norm()
        )));
    }
    let siny = 2.0 * (q.w * q.z + q.x * q.y);
    let cosy = 1.0 - 2.0 * (q.y * q.y + q.z * q.z);
    let yaw = siny.atan2(cosy);
    // atan2 returns -pi for a negative-zero sine; fold it onto +pi.
    Ok(if yaw <= -PI { PI } else { yaw })
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// One timestamped box state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub ts_ns: i64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    #[serde(rename = "l")]
    pub length: f64,
    #[serde(rename = "w")]
    pub width: f64,
    #[serde(rename = "h")]
    pub height: f64,
}

impl TrackState {
    /// Builds a validated state.
    pub fn new(ts_ns: i64, translation: [f64; 3], q: Quaternion, dims: [f64; 3]) -> Result<Self> {
        let s = Self {
            ts_ns,
            tx: translation[0],
            ty: translation[1],
            tz: translation[2],
            qw: q.w,
            qx: q.x,
            qy: q.y,
            qz: q.z,
            length: dims[0],
            width: dims[1],
            height: dims[2],
        };
        s.validate()?;
        Ok(s)
    }

    /// Planar convenience constructor: position `(x, y)` at height 0 with `yaw`.
    pub fn planar(ts_ns: i64, x: f64, y: f64, yaw: f64, dims: [f64; 3]) -> Result<Self> {
        Self::new(ts_ns, [x, y, 0.0], Quaternion::from_yaw(yaw), dims)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.quaternion().is_unit() {
            return Err(TrajError::InvalidInput(format!(
                "state at {} ns has non-unit quaternion (norm {})",
                self.ts_ns,
                self.quaternion().norm()
            )));
        }
        if !(self.length > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(TrajError::InvalidInput(format!(
                "state at {} ns has non-positive box dimensions",
                self.ts_ns
            )));
        }
        if !self.features().iter().all(|v| v.is_finite()) {
            return Err(TrajError::InvalidInput(format!(
                "state at {} ns has non-finite components",
                self.ts_ns
            )));
        }
        Ok(())
    }

    pub fn quaternion(&self) -> Quaternion {
        Quaternion::new(self.qw, self.qx, self.qy, self.qz)
    }

    pub fn position(&self) -> [f64; 3] {
        [self.tx, self.ty, self.tz]
    }

    /// Heading of the box. States are validated on construction, so the
    /// quaternion is always unit here.
    pub fn yaw(&self) -> f64 {
        yaw_from_quaternion(self.quaternion()).unwrap_or(0.0)
    }

    /// The 10-component feature vector `[tx, ty, tz, qw, qx, qy, qz, l, w, h]`.
    pub fn features(&self) -> [f64; STATE_DIM] {
        [
            self.tx,
            self.ty,
            self.tz,
            self.qw,
            self.qx,
            self.qy,
            self.qz,
            self.length,
            self.width,
            self.height,
        ]
    }
}

/// Default category vocabulary (Argoverse 2 annotation classes plus the
/// `VEHICLE` super-class used by scenario queries).
pub const DEFAULT_CATEGORIES: &[&str] = &[
    "VEHICLE",
    "REGULAR_VEHICLE",
    "LARGE_VEHICLE",
    "BUS",
    "BOX_TRUCK",
    "TRUCK",
    "TRUCK_CAB",
    "VEHICULAR_TRAILER",
    "SCHOOL_BUS",
    "ARTICULATED_BUS",
    "RAILED_VEHICLE",
    "MOTORCYCLE",
    "MOTORCYCLIST",
    "BICYCLE",
    "BICYCLIST",
    "WHEELED_DEVICE",
    "WHEELED_RIDER",
    "WHEELCHAIR",
    "STROLLER",
    "PEDESTRIAN",
    "DOG",
    "ANIMAL",
    "BOLLARD",
    "CONSTRUCTION_CONE",
    "CONSTRUCTION_BARREL",
    "STOP_SIGN",
    "SIGN",
    "MESSAGE_BOARD_TRAILER",
    "MOBILE_PEDESTRIAN_SIGN",
    "OFFICIAL_SIGNALER",
    "TRAFFIC_LIGHT_TRAILER",
    "EGO_VEHICLE",
];

/// Concrete classes that `VEHICLE` also matches.
pub const VEHICLE_GROUP: &[&str] = &[
    "REGULAR_VEHICLE",
    "LARGE_VEHICLE",
    "BUS",
    "BOX_TRUCK",
    "TRUCK",
    "TRUCK_CAB",
    "VEHICULAR_TRAILER",
    "SCHOOL_BUS",
    "ARTICULATED_BUS",
    "RAILED_VEHICLE",
];

/// Closed set of category names. `ANY` is always accepted as a wildcard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryVocabulary {
    pub categories: Vec<String>,
}

impl Default for CategoryVocabulary {
    fn default() -> Self {
        Self {
            categories: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CategoryVocabulary {
    pub fn contains(&self, name: &str) -> bool {
        name == "ANY" || self.categories.iter().any(|c| c == name)
    }

    /// Whether a track of class `track_category` answers a query for `wanted`.
    pub fn matches(wanted: &str, track_category: &str) -> bool {
        wanted == "ANY"
            || wanted == track_category
            || (wanted == "VEHICLE" && VEHICLE_GROUP.contains(&track_category))
    }
}

/// One object's time-ordered sequence of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: String,
    pub category: String,
    pub states: Vec<TrackState>,
}

impl Track {
    pub fn new(
        track_id: impl Into<String>,
        category: impl Into<String>,
        states: Vec<TrackState>,
    ) -> Result<Self> {
        let t = Self {
            track_id: track_id.into(),
            category: category.into(),
            states,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(TrajError::InvalidInput(format!(
                "track {} has no states",
                self.track_id
            )));
        }
        for s in &self.states {
            s.validate()?;
        }
        if self.states.windows(2).any(|w| w[1].ts_ns <= w[0].ts_ns) {
            return Err(TrajError::InvalidInput(format!(
                "track {} timestamps are not strictly increasing",
                self.track_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first_ts(&self) -> i64 {
        self.states[0].ts_ns
    }

    pub fn last_ts(&self) -> i64 {
        self.states[self.states.len() - 1].ts_ns
    }

    /// Index of the state at exactly `ts_ns`, if any.
    pub fn index_of(&self, ts_ns: i64) -> Option<usize> {
        self.states.binary_search_by_key(&ts_ns, |s| s.ts_ns).ok()
    }

    /// Row-major `len x 10` feature matrix.
    pub fn feature_matrix(&self) -> Vec<[f64; STATE_DIM]> {
        self.states.iter().map(TrackState::features).collect()
    }
}

/// A driving log: its tracks plus the sensor metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogManifest {
    pub log_id: String,
    /// Seconds.
    pub duration: f64,
    pub camera_ids: Vec<String>,
    /// Hz.
    pub frame_rate: f64,
    pub tracks: Vec<Track>,
}

impl LogManifest {
    pub fn new(
        log_id: impl Into<String>,
        duration: f64,
        camera_ids: Vec<String>,
        frame_rate: f64,
        tracks: Vec<Track>,
    ) -> Result<Self> {
        let m = Self {
            log_id: log_id.into(),
            duration,
            camera_ids,
            frame_rate,
            tracks,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(TrajError::InvalidInput(format!(
                "log {} has non-positive duration",
                self.log_id
            )));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(TrajError::InvalidInput(format!(
                "log {} has non-positive frame rate",
                self.log_id
            )));
        }
        let end = self.duration_ns();
        let mut seen = std::collections::HashSet::new();
        for t in &self.tracks {
            t.validate()?;
            if !seen.insert(t.track_id.as_str()) {
                return Err(TrajError::InvalidInput(format!(
                    "log {} has duplicate track id {}",
                    self.log_id, t.track_id
                )));
            }
            if t.first_ts() < 0 || t.last_ts() > end {
                return Err(TrajError::InvalidInput(format!(
                    "track {} has timestamps outside [0, {}] s",
                    t.track_id, self.duration
                )));
            }
        }
        Ok(())
    }

    pub fn duration_ns(&self) -> i64 {
        secs_to_ns(self.duration)
    }

    pub fn track(&self, track_id: &str) -> Option<&Track> {
        self.tracks.iter().find(|t| t.track_id == track_id)
    }

    /// Total number of `(track, timestamp)` points in the log.
    pub fn point_count(&self) -> usize {
        self.tracks.iter().map(Track::len).sum()
    }
}

/// Velocity of `track` at state `index`, by central differences in the
/// interior and one-sided differences at the ends (m/s).
pub fn estimate_velocity(track: &Track, index: usize) -> Result<[f64; 3]> {
    let n = track.len();
    if n < 2 {
        return Err(TrajError::InsufficientData(format!(
            "track {} has {n} state(s); velocity needs at least 2",
            track.track_id
        )));
    }
    if index >= n {
        return Err(TrajError::InvalidInput(format!(
            "index {index} out of range for track of length {n}"
        )));
    }
    let (a, b) = match index {
        0 => (0, 1),
        i if i == n - 1 => (n - 2, n - 1),
        i => (i - 1, i + 1),
    };
    let (sa, sb) = (&track.states[a], &track.states[b]);
    let dt = ns_to_secs(sb.ts_ns - sa.ts_ns);
    Ok([
        (sb.tx - sa.tx) / dt,
        (sb.ty - sa.ty) / dt,
        (sb.tz - sa.tz) / dt,
    ])
}

/// Per-dimension z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; STATE_DIM],
    pub std: [f64; STATE_DIM],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; STATE_DIM],
            std: [1.0; STATE_DIM],
        }
    }
}

/// Mean and population standard deviation of every feature over all
/// states of all tracks. Deviations are clamped below at [`STD_FLOOR`].
pub fn fit_norm_stats<'a, I>(tracks: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a Track>,
{
    // Welford accumulation, one pass.
    let mut count = 0usize;
    let mut mean = [0.0f64; STATE_DIM];
    let mut m2 = [0.0f64; STATE_DIM];
    for track in tracks {
        for s in &track.states {
            count += 1;
            let f = s.features();
            for d in 0..STATE_DIM {
                let delta = f[d] - mean[d];
                mean[d] += delta / count as f64;
                m2[d] += delta * (f[d] - mean[d]);
            }
        }
    }
    if count == 0 {
        return Err(TrajError::InvalidInput(
            "cannot fit normalization statistics on zero states".into(),
        ));
    }
    let mut std = [0.0f64; STATE_DIM];
    for d in 0..STATE_DIM {
        std[d] = (m2[d] / count as f64).sqrt().max(STD_FLOOR);
    }
    Ok(NormStats { mean, std })
}

pub fn apply_norm(stats: &NormStats, state: &TrackState) -> [f64; STATE_DIM] {
    normalize_features(stats, &state.features())
}

pub fn normalize_features(stats: &NormStats, f: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
    let mut out = [0.0; STATE_DIM];
    for d in 0..STATE_DIM {
        out[d] = (f[d] - stats.mean[d]) / stats.std[d];
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct LogHeaderRecord {
    log_id: String,
    duration: f64,
    frame_rate: f64,
    camera_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackRecord {
    log_id: String,
    track_id: String,
    category: String,
    states: Vec<TrackState>,
}

/// Writes a log as line-delimited JSON: a header line followed by one track per line.
pub fn write_log<W: Write>(log: &LogManifest, mut out: W) -> Result<()> {
    let header = LogHeaderRecord {
        log_id: log.log_id.clone(),
        duration: log.duration,
        frame_rate: log.frame_rate,
        camera_ids: log.camera_ids.clone(),
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for t in &log.tracks {
        let rec = TrackRecord {
            log_id: log.log_id.clone(),
            track_id: t.track_id.clone(),
            category: t.category.clone(),
            states: t.states.clone(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_log<R: BufRead>(input: R) -> Result<LogManifest> {
    let mut lines = input.lines().enumerate().filter(|(_, l)| match l {
        Ok(s) => !s.trim().is_empty(),
        Err(_) => true,
    });
    let (_, first) = lines.next().ok_or(TrajError::Format {
        line: 1,
        message: "empty log file".into(),
    })?;
    let header: LogHeaderRecord = serde_json::from_str(&first?).map_err(|e| TrajError::Format {
        line: 1,
        message: e.to_string(),
    })?;
    let mut tracks = Vec::new();
    for (i, line) in lines {
        let rec: TrackRecord = serde_json::from_str(&line?).map_err(|e| TrajError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.log_id != header.log_id {
            return Err(TrajError::Format {
                line: i + 1,
                message: format!(
                    "track belongs to log {} but header declares {}",
                    rec.log_id, header.log_id
                ),
            });
        }
        tracks.push(Track {
            track_id: rec.track_id,
            category: rec.category,
            states: rec.states,
        });
    }
    LogManifest::new(
        header.log_id,
        header.duration,
        header.camera_ids,
        header.frame_rate,
        tracks,
    )
}

pub fn save_log(log: &LogManifest, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_log(log, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_log(path: &Path) -> Result<LogManifest> {
    read_log(BufReader::new(File::open(path)?))
}
