//! Pen telemetry: the recording data model, manifest/recording loaders and
//! the kinematic channels derived from raw pen samples.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nominal tablet sampling rate.
pub const NOMINAL_SAMPLE_RATE_HZ: f64 = 250.0;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown group {value:?} at line {line}")]
    UnknownGroup { line: usize, value: String },
    #[error("unknown task {value:?} at line {line}")]
    UnknownTask { line: usize, value: String },
    #[error("line {line}: recording file {path} does not exist")]
    MissingFile { line: usize, path: PathBuf },
    #[error("line {line}: duplicate manifest entry for subject {subject_id}, task {task}")]
    DuplicateEntry {
        line: usize,
        subject_id: String,
        task: Task,
    },
    #[error("recording has {rows} usable sample(s); at least 2 are required")]
    TooShort { rows: usize },
    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },
    #[error("negative pressure at row {row}")]
    NegativePressure { row: usize },
    #[error("timestamp decreases at row {row}")]
    NonMonotonicTime { row: usize },
    #[error("all timestamps are equal")]
    DegenerateTime,
    #[error("channel length mismatch: {0}")]
    LengthMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TelemetryError>;

/// Diagnostic group of a participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "CTL")]
    Ctl,
    #[serde(rename = "PD")]
    Pd,
    #[serde(rename = "PDM")]
    Pdm,
    #[serde(rename = "AD")]
    Ad,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Ctl, Group::Pd, Group::Pdm, Group::Ad];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Ctl => "CTL",
            Group::Pd => "PD",
            Group::Pdm => "PDM",
            Group::Ad => "AD",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// A binary comparison: disease group (positive, label 1) against a
/// comparison group (negative, label 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentPair {
    #[serde(rename = "ad-ctl")]
    AdCtl,
    #[serde(rename = "pd-ctl")]
    PdCtl,
    #[serde(rename = "pd-pdm")]
    PdPdm,
}

impl ExperimentPair {
    pub const ALL: [ExperimentPair; 3] = [
        ExperimentPair::AdCtl,
        ExperimentPair::PdCtl,
        ExperimentPair::PdPdm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentPair::AdCtl => "ad-ctl",
            ExperimentPair::PdCtl => "pd-ctl",
            ExperimentPair::PdPdm => "pd-pdm",
        }
    }

    pub fn positive(self) -> Group {
        match self {
            ExperimentPair::AdCtl => Group::Ad,
            ExperimentPair::PdCtl | ExperimentPair::PdPdm => Group::Pd,
        }
    }

    pub fn negative(self) -> Group {
        match self {
            ExperimentPair::AdCtl | ExperimentPair::PdCtl => Group::Ctl,
            ExperimentPair::PdPdm => Group::Pdm,
        }
    }

    /// 1 for the positive group, 0 for the negative group, `None` otherwise.
    pub fn label(self, group: Group) -> Option<usize> {
        if group == self.positive() {
            Some(1)
        } else if group == self.negative() {
            Some(0)
        } else {
            None
        }
    }
}

impl fmt::Display for ExperimentPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentPair {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ExperimentPair::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown experiment pair {s:?} (expected ad-ctl, pd-ctl or pd-pdm)"))
    }
}

/// The fourteen recorded handwriting tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    PointRight,
    PointLeft,
    PointSustained,
    SpiralRight,
    SpiralLeft,
    SpiralPataka,
    CopyText,
    CopyReadText,
    FreeWrite,
    Numbers,
    CopyImage,
    CopyImageMemory,
    DrawClock,
    CopyCube,
}

impl Task {
    pub const ALL: [Task; 14] = [
        Task::PointRight,
        Task::PointLeft,
        Task::PointSustained,
        Task::SpiralRight,
        Task::SpiralLeft,
        Task::SpiralPataka,
        Task::CopyText,
        Task::CopyReadText,
        Task::FreeWrite,
        Task::Numbers,
        Task::CopyImage,
        Task::CopyImageMemory,
        Task::DrawClock,
        Task::CopyCube,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::PointRight => "PointRight",
            Task::PointLeft => "PointLeft",
            Task::PointSustained => "PointSustained",
            Task::SpiralRight => "SpiralRight",
            Task::SpiralLeft => "SpiralLeft",
            Task::SpiralPataka => "SpiralPataka",
            Task::CopyText => "CopyText",
            Task::CopyReadText => "CopyReadText",
            Task::FreeWrite => "FreeWrite",
            Task::Numbers => "Numbers",
            Task::CopyImage => "CopyImage",
            Task::CopyImageMemory => "CopyImageMemory",
            Task::DrawClock => "DrawClock",
            Task::CopyCube => "CopyCube",
        }
    }

    pub fn family(self) -> TaskFamily {
        match self {
            Task::PointRight | Task::PointLeft | Task::PointSustained => TaskFamily::Point,
            Task::SpiralRight | Task::SpiralLeft | Task::SpiralPataka => TaskFamily::Spiral,
            Task::CopyText | Task::CopyReadText | Task::FreeWrite | Task::Numbers => {
                TaskFamily::Writing
            }
            Task::CopyImage | Task::CopyImageMemory | Task::DrawClock | Task::CopyCube => {
                TaskFamily::Drawing
            }
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// Task groupings used for aggregate evaluation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskFamily {
    Spiral,
    Point,
    Writing,
    Drawing,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 4] = [
        TaskFamily::Spiral,
        TaskFamily::Point,
        TaskFamily::Writing,
        TaskFamily::Drawing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::Spiral => "SpiralTasks",
            TaskFamily::Point => "PointTasks",
            TaskFamily::Writing => "WritingTasks",
            TaskFamily::Drawing => "DrawingTasks",
        }
    }

    pub fn members(self) -> Vec<Task> {
        Task::ALL.into_iter().filter(|t| t.family() == self).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenSample {
    /// Seconds.
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Pressure in device units.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub group: Group,
    pub task: Task,
    pub sample_rate_hz: f64,
    pub samples: Vec<PenSample>,
}

impl Recording {
    /// Builds a recording after checking the per-sample invariants.
    pub fn new(
        subject_id: impl Into<String>,
        group: Group,
        task: Task,
        samples: Vec<PenSample>,
    ) -> Result<Self> {
        validate_samples(&samples)?;
        Ok(Self {
            subject_id: subject_id.into(),
            group,
            task,
            sample_rate_hz: NOMINAL_SAMPLE_RATE_HZ,
            samples,
        })
    }

    pub fn duration_s(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

fn validate_samples(samples: &[PenSample]) -> Result<()> {
    if samples.len() < 2 {
        return Err(TelemetryError::TooShort {
            rows: samples.len(),
        });
    }
    for (i, s) in samples.iter().enumerate() {
        let row = i + 1;
        if !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite() && s.p.is_finite()) {
            return Err(TelemetryError::NonFinite { row });
        }
        if s.p < 0.0 {
            return Err(TelemetryError::NegativePressure { row });
        }
        if i > 0 && s.t < samples[i - 1].t {
            return Err(TelemetryError::NonMonotonicTime { row });
        }
    }
    Ok(())
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub group: Group,
    pub task: Task,
    #[serde(alias = "data_path")]
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct RawEntry {
    subject_id: String,
    group: String,
    task: String,
    #[serde(alias = "data_path")]
    path: PathBuf,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct subjects with their group, sorted by subject id.
    pub fn subjects(&self) -> Vec<(String, Group)> {
        let mut seen = BTreeMap::new();
        for e in &self.entries {
            seen.entry(e.subject_id.clone()).or_insert(e.group);
        }
        seen.into_iter().collect()
    }

    /// Serializes the manifest as JSON lines.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
            out.push('\n');
        }
        out
    }
}

/// Reads a JSON-lines manifest. Relative recording paths are resolved
/// against the manifest's directory. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = fs::File::open(path).map_err(|source| TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| TelemetryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(&line).map_err(|e| TelemetryError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let group = raw
            .group
            .parse::<Group>()
            .map_err(|value| TelemetryError::UnknownGroup {
                line: line_no,
                value,
            })?;
        let task = raw
            .task
            .parse::<Task>()
            .map_err(|value| TelemetryError::UnknownTask {
                line: line_no,
                value,
            })?;
        let resolved = if raw.path.is_absolute() {
            raw.path.clone()
        } else {
            base.join(&raw.path)
        };
        if !resolved.is_file() {
            return Err(TelemetryError::MissingFile {
                line: line_no,
                path: resolved,
            });
        }
        if !seen.insert((raw.subject_id.clone(), task, raw.path.clone())) {
            return Err(TelemetryError::DuplicateEntry {
                line: line_no,
                subject_id: raw.subject_id,
                task,
            });
        }
        entries.push(ManifestEntry {
            subject_id: raw.subject_id,
            group,
            task,
            path: resolved,
        });
    }
    Ok(Manifest { entries })
}

/// Reads a `t,x,y,p` CSV recording.
pub fn load_recording(path: &Path, meta: &ManifestEntry) -> Result<Recording> {
    let bytes = fs::read(path).map_err(|source| TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let samples = parse_recording_csv(&bytes)?;
    Recording::new(meta.subject_id.clone(), meta.group, meta.task, samples)
}

/// Parses CSV bytes with the exact header `t,x,y,p`. Row numbers in errors
/// count data rows from 1.
pub fn parse_recording_csv(bytes: &[u8]) -> Result<Vec<PenSample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let headers = reader.headers().map_err(|e| TelemetryError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["t", "x", "y", "p"] {
        return Err(TelemetryError::Parse {
            line: 1,
            message: format!("expected header t,x,y,p, found {:?}", headers),
        });
    }
    let mut samples = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| TelemetryError::Parse {
            line: row + 1,
            message: e.to_string(),
        })?;
        if record.len() != 4 {
            return Err(TelemetryError::Parse {
                line: row + 1,
                message: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let mut vals = [0.0f64; 4];
        for (v, field) in vals.iter_mut().zip(record.iter()) {
            *v = field.trim().parse::<f64>().map_err(|e| TelemetryError::Parse {
                line: row + 1,
                message: format!("{field:?}: {e}"),
            })?;
            if !v.is_finite() {
                return Err(TelemetryError::NonFinite { row });
            }
        }
        samples.push(PenSample {
            t: vals[0],
            x: vals[1],
            y: vals[2],
            p: vals[3],
        });
    }
    if samples.len() < 2 {
        return Err(TelemetryError::TooShort {
            rows: samples.len(),
        });
    }
    Ok(samples)
}

/// Writes samples in the recording CSV format.
pub fn write_recording_csv(samples: &[PenSample]) -> String {
    let mut out = String::with_capacity(samples.len() * 32 + 8);
    out.push_str("t,x,y,p\n");
    for s in samples {
        out.push_str(&format!("{:.3},{:.5},{:.5},{:.5}\n", s.t, s.x, s.y, s.p));
    }
    out
}

/// Signals available as spectrogram inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    X,
    Y,
    P,
    Vx,
    Vy,
    Speed,
    Traj,
    Acc,
}

impl Channel {
    pub const ALL: [Channel; 8] = [
        Channel::X,
        Channel::Y,
        Channel::P,
        Channel::Vx,
        Channel::Vy,
        Channel::Speed,
        Channel::Traj,
        Channel::Acc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::X => "x",
            Channel::Y => "y",
            Channel::P => "p",
            Channel::Vx => "vx",
            Channel::Vy => "vy",
            Channel::Speed => "speed",
            Channel::Traj => "traj",
            Channel::Acc => "acc",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// Equal-length derived signals sharing one time base.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    channels: BTreeMap<Channel, Vec<f64>>,
    dt: f64,
}

impl ChannelSet {
    pub fn new(channels: BTreeMap<Channel, Vec<f64>>, dt: f64) -> Result<Self> {
        let mut lens = channels.values().map(Vec::len);
        if let Some(first) = lens.next() {
            if lens.any(|l| l != first) {
                let desc = channels
                    .iter()
                    .map(|(c, v)| format!("{c}={}", v.len()))
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(TelemetryError::LengthMismatch(desc));
            }
        }
        Ok(Self { channels, dt })
    }

    pub fn get(&self, channel: Channel) -> Option<&[f64]> {
        self.channels.get(&channel).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.channels.values().next().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Median sampling interval of the retained samples.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn names(&self) -> impl Iterator<Item = Channel> + '_ {
        self.channels.keys().copied()
    }
}

/// Drops every sample whose timestamp equals its retained predecessor's.
fn collapse_duplicate_times(samples: &[PenSample]) -> Vec<PenSample> {
    let mut out: Vec<PenSample> = Vec::with_capacity(samples.len());
    for s in samples {
        match out.last() {
            Some(prev) if s.t == prev.t => {}
            _ => out.push(*s),
        }
    }
    out
}

/// Differences the pen stream into all eight channels on the `n - 1` grid
/// of the retained samples.
pub fn derive_channels(rec: &Recording) -> Result<ChannelSet> {
    if rec.samples.len() < 2 {
        return Err(TelemetryError::TooShort {
            rows: rec.samples.len(),
        });
    }
    let s = collapse_duplicate_times(&rec.samples);
    if s.len() < 2 {
        return Err(TelemetryError::DegenerateTime);
    }
    let n_out = s.len() - 1;
    let mut x = Vec::with_capacity(n_out);
    let mut y = Vec::with_capacity(n_out);
    let mut p = Vec::with_capacity(n_out);
    let mut vx = Vec::with_capacity(n_out);
    let mut vy = Vec::with_capacity(n_out);
    let mut speed = Vec::with_capacity(n_out);
    let mut traj = Vec::with_capacity(n_out);
    let mut acc = Vec::with_capacity(n_out);
    let mut dts = Vec::with_capacity(n_out);

    let mut path_len = 0.0;
    for w in s.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dt = b.t - a.t;
        let dx = b.x - a.x;
        let dy = b.y - a.y;
        let (cur_vx, cur_vy) = (dx / dt, dy / dt);
        path_len += dx.hypot(dy);
        if let (Some(&pvx), Some(&pvy)) = (vx.last(), vy.last()) {
            let ax: f64 = (cur_vx - pvx) / dt;
            let ay: f64 = (cur_vy - pvy) / dt;
            acc.push(ax.hypot(ay));
        }
        x.push(b.x);
        y.push(b.y);
        p.push(b.p);
        vx.push(cur_vx);
        vy.push(cur_vy);
        speed.push(cur_vx.hypot(cur_vy));
        traj.push(path_len);
        dts.push(dt);
    }
    // Backward differences have no value at the first output index.
    let first_acc = acc.first().copied().unwrap_or(0.0);
    acc.insert(0, first_acc);

    dts.sort_by(f64::total_cmp);
    let dt = dts[dts.len() / 2];

    let channels = BTreeMap::from([
        (Channel::X, x),
        (Channel::Y, y),
        (Channel::P, p),
        (Channel::Vx, vx),
        (Channel::Vy, vy),
        (Channel::Speed, speed),
        (Channel::Traj, traj),
        (Channel::Acc, acc),
    ]);
    ChannelSet::new(channels, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn rec(samples: Vec<PenSample>) -> Recording {
        Recording::new("s1", Group::Ctl, Task::SpiralRight, samples).unwrap()
    }

    fn sample(t: f64, x: f64, y: f64, p: f64) -> PenSample {
        PenSample { t, x, y, p }
    }

    fn entry(path: &str) -> ManifestEntry {
        ManifestEntry {
            subject_id: "s1".into(),
            group: Group::Pd,
            task: Task::Numbers,
            path: path.into(),
        }
    }

    #[test]
    fn enum_names_round_trip() {
        for g in Group::ALL {
            assert_eq!(g.as_str().parse::<Group>().unwrap(), g);
        }
        for t in Task::ALL {
            assert_eq!(t.as_str().parse::<Task>().unwrap(), t);
        }
        for c in Channel::ALL {
            assert_eq!(c.as_str().parse::<Channel>().unwrap(), c);
        }
        assert!("HD".parse::<Group>().is_err());
        assert!("pointright".parse::<Task>().is_err());
    }

    #[test]
    fn task_families_partition_tasks() {
        let total: usize = TaskFamily::ALL.iter().map(|f| f.members().len()).sum();
        assert_eq!(total, 14);
        assert_eq!(TaskFamily::Writing.members().len(), 4);
        assert_eq!(TaskFamily::Point.members().len(), 3);
    }

    #[test]
    fn two_row_csv_parses() {
        let csv = b"t,x,y,p\n0.000,10,10,0.5\n0.004,11,10,0.5\n";
        let s = parse_recording_csv(csv).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1], sample(0.004, 11.0, 10.0, 0.5));
    }

    #[test]
    fn crlf_csv_parses() {
        let csv = b"t,x,y,p\r\n0.000,10,10,0.5\r\n0.004,11,10,0.5\r\n";
        assert_eq!(parse_recording_csv(csv).unwrap().len(), 2);
    }

    #[test]
    fn single_row_is_too_short() {
        let csv = b"t,x,y,p\n0.000,10,10,0.5\n";
        assert!(matches!(
            parse_recording_csv(csv),
            Err(TelemetryError::TooShort { rows: 1 })
        ));
    }

    #[test]
    fn nan_reports_row() {
        let csv = b"t,x,y,p\n0.000,NaN,10,0.5\n0.004,11,10,0.5\n";
        assert!(matches!(
            parse_recording_csv(csv),
            Err(TelemetryError::NonFinite { row: 1 })
        ));
    }

    #[test]
    fn wrong_header_rejected() {
        let csv = b"time,x,y,p\n0,1,1,1\n1,1,1,1\n";
        assert!(matches!(
            parse_recording_csv(csv),
            Err(TelemetryError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn load_recording_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        fs::write(&path, "t,x,y,p\n0.000,10,10,0.5\n0.004,11,10,0.5\n").unwrap();
        let r = load_recording(&path, &entry("r.csv")).unwrap();
        assert_eq!(r.samples.len(), 2);
        assert_eq!(r.group, Group::Pd);
        assert_eq!(r.task, Task::Numbers);
    }

    #[test]
    fn negative_pressure_rejected() {
        let err = Recording::new(
            "a",
            Group::Ctl,
            Task::CopyCube,
            vec![sample(0.0, 0.0, 0.0, 0.1), sample(0.004, 0.0, 0.0, -0.1)],
        )
        .unwrap_err();
        assert!(matches!(err, TelemetryError::NegativePressure { row: 2 }));
    }

    fn write_manifest(dir: &Path, lines: &[String]) -> PathBuf {
        let path = dir.join("manifest.jsonl");
        let mut f = fs::File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        path
    }

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), "t,x,y,p\n0,0,0,0\n0.004,1,0,0\n").unwrap();
    }

    #[test]
    fn manifest_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["a.csv", "b.csv", "c.csv"] {
            touch(dir.path(), n);
        }
        let lines = vec![
            r#"{"subject_id":"s1","group":"CTL","task":"PointRight","path":"a.csv"}"#.to_string(),
            r#"{"subject_id":"s1","group":"CTL","task":"PointLeft","path":"b.csv"}"#.to_string(),
            r#"{"subject_id":"s2","group":"AD","task":"DrawClock","path":"c.csv"}"#.to_string(),
        ];
        let m = load_manifest(&write_manifest(dir.path(), &lines)).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.entries[2].group, Group::Ad);
        assert_eq!(m.entries[2].task, Task::DrawClock);
        assert_eq!(m.subjects().len(), 2);
    }

    #[test]
    fn manifest_unknown_group_names_line() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.csv");
        let lines = vec![
            r#"{"subject_id":"s1","group":"CTL","task":"PointRight","path":"a.csv"}"#.to_string(),
            r#"{"subject_id":"s2","group":"HD","task":"PointRight","path":"a.csv"}"#.to_string(),
        ];
        let err = load_manifest(&write_manifest(dir.path(), &lines)).unwrap_err();
        match err {
            TelemetryError::UnknownGroup { line, value } => {
                assert_eq!(line, 2);
                assert_eq!(value, "HD");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.csv");
        let unknown_task =
            vec![r#"{"subject_id":"s","group":"PD","task":"Doodle","path":"a.csv"}"#.to_string()];
        assert!(matches!(
            load_manifest(&write_manifest(dir.path(), &unknown_task)),
            Err(TelemetryError::UnknownTask { line: 1, .. })
        ));
        let missing =
            vec![r#"{"subject_id":"s","group":"PD","task":"Numbers","path":"zz.csv"}"#.to_string()];
        assert!(matches!(
            load_manifest(&write_manifest(dir.path(), &missing)),
            Err(TelemetryError::MissingFile { line: 1, .. })
        ));
        let malformed = vec!["{not json".to_string()];
        assert!(matches!(
            load_manifest(&write_manifest(dir.path(), &malformed)),
            Err(TelemetryError::Parse { line: 1, .. })
        ));
        let dup = vec![
            r#"{"subject_id":"s","group":"PD","task":"Numbers","path":"a.csv"}"#.to_string(),
            r#"{"subject_id":"s","group":"PD","task":"Numbers","path":"a.csv"}"#.to_string(),
        ];
        assert!(matches!(
            load_manifest(&write_manifest(dir.path(), &dup)),
            Err(TelemetryError::DuplicateEntry { line: 2, .. })
        ));
    }

    #[test]
    fn manifest_accepts_data_path_alias() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.csv");
        let lines =
            vec![r#"{"subject_id":"s","group":"PDM","task":"FreeWrite","data_path":"a.csv"}"#
                .to_string()];
        let m = load_manifest(&write_manifest(dir.path(), &lines)).unwrap();
        assert_eq!(m.entries[0].group, Group::Pdm);
    }

    #[test]
    fn constant_velocity() {
        let samples: Vec<_> = (0..20)
            .map(|i| sample(i as f64 * 0.004, 4.0 * i as f64, 7.0, 0.3))
            .collect();
        let cs = derive_channels(&rec(samples)).unwrap();
        assert_eq!(cs.len(), 19);
        for i in 0..19 {
            assert!((cs.get(Channel::Vx).unwrap()[i] - 1000.0).abs() < 1e-6);
            assert_eq!(cs.get(Channel::Vy).unwrap()[i], 0.0);
            assert!((cs.get(Channel::Speed).unwrap()[i] - 1000.0).abs() < 1e-6);
            assert!(cs.get(Channel::Acc).unwrap()[i].abs() < 1e-3);
            assert!((cs.get(Channel::Traj).unwrap()[i] - 4.0 * (i + 1) as f64).abs() < 1e-9);
        }
        assert!((cs.dt() - 0.004).abs() < 1e-12);
    }

    #[test]
    fn stationary_pen_is_all_zero() {
        let samples: Vec<_> = (0..10)
            .map(|i| sample(i as f64 * 0.004, 3.0, -2.0, 0.8))
            .collect();
        let cs = derive_channels(&rec(samples)).unwrap();
        for c in [
            Channel::Vx,
            Channel::Vy,
            Channel::Speed,
            Channel::Acc,
            Channel::Traj,
        ] {
            assert!(cs.get(c).unwrap().iter().all(|&v| v == 0.0), "{c}");
        }
        assert!(cs.get(Channel::P).unwrap().iter().all(|&v| v == 0.8));
    }

    #[test]
    fn random_walk_traj_matches_termwise_sum() {
        // fixed 10-sample walk
        let pts = [
            (0.0, 0.0),
            (1.0, 0.5),
            (0.5, 2.0),
            (-1.0, 2.5),
            (-1.5, 1.0),
            (0.0, 0.0),
            (2.0, -1.0),
            (2.5, -3.0),
            (1.0, -2.0),
            (1.25, -2.25),
        ];
        let samples: Vec<_> = pts
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| sample(i as f64 * 0.004, x, y, 0.1))
            .collect();
        let cs = derive_channels(&rec(samples)).unwrap();
        let traj = cs.get(Channel::Traj).unwrap();
        let mut oracle = Vec::new();
        for k in 1..pts.len() {
            let mut total = 0.0;
            for j in 1..=k {
                let dx: f64 = pts[j].0 - pts[j - 1].0;
                let dy: f64 = pts[j].1 - pts[j - 1].1;
                total += (dx * dx + dy * dy).sqrt();
            }
            oracle.push(total);
        }
        for (a, b) in traj.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_timestamps_keep_first() {
        let samples = vec![
            sample(0.0, 0.0, 0.0, 0.1),
            sample(0.004, 1.0, 0.0, 0.1),
            sample(0.004, 99.0, 0.0, 0.1),
            sample(0.008, 2.0, 0.0, 0.1),
        ];
        let cs = derive_channels(&rec(samples)).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs.get(Channel::X).unwrap(), &[1.0, 2.0]);
        assert!((cs.get(Channel::Vx).unwrap()[1] - 250.0).abs() < 1e-9);
    }

    #[test]
    fn all_equal_times_are_degenerate() {
        let samples = vec![sample(1.0, 0.0, 0.0, 0.1), sample(1.0, 1.0, 0.0, 0.1)];
        assert!(matches!(
            derive_channels(&rec(samples)),
            Err(TelemetryError::DegenerateTime)
        ));
    }

    #[test]
    fn acc_first_value_copies_second() {
        let samples: Vec<_> = (0..6)
            .map(|i| {
                let t = i as f64 * 0.004;
                sample(t, (i * i) as f64, 0.0, 0.0)
            })
            .collect();
        let cs = derive_channels(&rec(samples)).unwrap();
        let acc = cs.get(Channel::Acc).unwrap();
        assert_eq!(acc[0], acc[1]);
        // x = i^2 → vx steps by 2 units per sample
        assert!((acc[1] - 2.0 / 0.004 / 0.004).abs() < 1e-6);
    }

    #[test]
    fn channel_set_rejects_mismatched_lengths() {
        let m = BTreeMap::from([(Channel::X, vec![1.0, 2.0]), (Channel::P, vec![1.0])]);
        assert!(ChannelSet::new(m, 0.004).is_err());
    }

    fn walk() -> impl Strategy<Value = Vec<PenSample>> {
        prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.0f64..1.0), 3..60).prop_map(
            |steps| {
                let (mut x, mut y) = (0.0, 0.0);
                steps
                    .into_iter()
                    .enumerate()
                    .map(|(i, (dx, dy, p))| {
                        x += dx;
                        y += dy;
                        sample(i as f64 * 0.004, x, y, p)
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn channel_invariants(samples in walk()) {
            let cs = derive_channels(&rec(samples.clone())).unwrap();
            let n = samples.len() - 1;
            for c in Channel::ALL {
                prop_assert_eq!(cs.get(c).unwrap().len(), n);
            }
            let (vx, vy, sp) = (cs.get(Channel::Vx).unwrap(), cs.get(Channel::Vy).unwrap(), cs.get(Channel::Speed).unwrap());
            for i in 0..n {
                let rhs = vx[i] * vx[i] + vy[i] * vy[i];
                prop_assert!((sp[i] * sp[i] - rhs).abs() <= 1e-9 * rhs.max(1e-300));
            }
            let traj = cs.get(Channel::Traj).unwrap();
            prop_assert!(traj.windows(2).all(|w| w[1] >= w[0]));
            let (a, b) = (samples[1], samples[samples.len() - 1]);
            prop_assert!(traj[n - 1] + 1e-9 >= (b.x - a.x).hypot(b.y - a.y));
        }

        #[test]
        fn translation_invariance(samples in walk(), ox in -100.0f64..100.0, oy in -100.0f64..100.0) {
            let shifted: Vec<_> = samples.iter().map(|s| sample(s.t, s.x + ox, s.y + oy, s.p)).collect();
            let a = derive_channels(&rec(samples)).unwrap();
            let b = derive_channels(&rec(shifted)).unwrap();
            for c in [Channel::Vx, Channel::Vy, Channel::Speed, Channel::Traj, Channel::Acc] {
                for (u, v) in a.get(c).unwrap().iter().zip(b.get(c).unwrap()) {
                    prop_assert!((u - v).abs() <= 1e-6 * (1.0 + u.abs()));
                }
            }
        }

        #[test]
        fn time_reversal_mirrors_abs_vx(samples in walk()) {
            let t_end = samples.last().unwrap().t;
            let reversed: Vec<_> = samples.iter().rev().map(|s| sample(t_end - s.t, s.x, s.y, s.p)).collect();
            let a = derive_channels(&rec(samples)).unwrap();
            let b = derive_channels(&rec(reversed)).unwrap();
            let fwd: Vec<f64> = a.get(Channel::Vx).unwrap().iter().map(|v| v.abs()).collect();
            let rev: Vec<f64> = b.get(Channel::Vx).unwrap().iter().rev().map(|v| v.abs()).collect();
            for (u, v) in fwd.iter().zip(&rev) {
                prop_assert!((u - v).abs() <= 1e-6 * (1.0 + u.abs()));
            }
        }
    }
}
