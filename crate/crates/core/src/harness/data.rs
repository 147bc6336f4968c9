use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::dsp::{
    build_with, fit_fixed_size, frame_decompose, read_spectrogram, write_spectrogram,
    ChannelSelection, FrameWindow, MultiSpectrogram, Stft, StftConfig, FIXED_COLUMNS,
};
use crate::micronet::Tensor;
use crate::telemetry::{
    derive_channels, load_recording, ExperimentPair, Group, Manifest, Recording, Task,
    TaskFamily,
};

/// How spectrograms become model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "window", rename_all = "lowercase")]
pub enum Pipeline {
    /// One C×129×65 input per recording.
    Fixed,
    /// Non-overlapping frames of the untruncated spectrogram.
    Frames(FrameWindow),
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Fixed => "fixed",
            Pipeline::Frames(_) => "frames",
        }
    }

    pub fn window(&self) -> Option<FrameWindow> {
        match *self {
            Pipeline::Fixed => None,
            Pipeline::Frames(w) => Some(w),
        }
    }
}

/// Which recordings take part in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TaskFilter {
    All,
    Task(Task),
    Family(TaskFamily),
}

impl TaskFilter {
    pub fn accepts(&self, task: Task) -> bool {
        match *self {
            TaskFilter::All => true,
            TaskFilter::Task(t) => t == task,
            TaskFilter::Family(f) => task.family() == f,
        }
    }

    /// The 14 individual tasks followed by the 4 family aggregates.
    pub fn sweep_rows() -> Vec<TaskFilter> {
        Task::ALL
            .into_iter()
            .map(TaskFilter::Task)
            .chain(TaskFamily::ALL.into_iter().map(TaskFilter::Family))
            .collect()
    }
}

impl fmt::Display for TaskFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskFilter::All => f.write_str("all"),
            TaskFilter::Task(t) => f.write_str(t.as_str()),
            TaskFilter::Family(fam) => f.write_str(fam.as_str()),
        }
    }
}

impl FromStr for TaskFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(TaskFilter::All);
        }
        if let Ok(t) = s.parse::<Task>() {
            return Ok(TaskFilter::Task(t));
        }
        TaskFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .map(TaskFilter::Family)
            .ok_or_else(|| format!("unknown task filter {s:?}"))
    }
}

impl From<TaskFilter> for String {
    fn from(t: TaskFilter) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for TaskFilter {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// One labelled classification unit (a recording) in model-input form.
#[derive(Debug, Clone)]
pub struct Sample {
    pub subject_id: String,
    pub group: Group,
    pub task: Task,
    pub label: usize,
    pub inputs: Vec<Tensor<f32>>,
}

/// A recording's stacked spectrogram, before pipeline shaping.
#[derive(Debug, Clone)]
pub struct SpecRecord {
    pub subject_id: String,
    pub group: Group,
    pub task: Task,
    pub ms: MultiSpectrogram,
}

#[derive(Debug, Clone)]
pub enum RecordingSource {
    Manifest(Manifest),
    Memory(Vec<Recording>),
}

/// Recordings plus the STFT settings and optional on-disk spectrogram cache.
#[derive(Debug, Clone)]
pub struct DataSource {
    pub source: RecordingSource,
    pub stft: StftConfig,
    pub cache_dir: Option<PathBuf>,
}

struct Item<'a> {
    subject_id: &'a str,
    group: Group,
    task: Task,
    recording: Result<&'a Recording, &'a Path>,
}

/// Cache file name for one recording under a channel selection and STFT
/// configuration.
pub fn cache_file_name(
    subject_id: &str,
    task: Task,
    selection: &ChannelSelection,
    stft: &StftConfig,
) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(stft).expect("config serializes"));
    let tag = hex::encode(&h.finalize()[..6]);
    let chans = selection.to_string().replace(',', "-");
    format!("{subject_id}_{task}_{chans}_{tag}.spec")
}

impl DataSource {
    pub fn from_recordings(recordings: Vec<Recording>) -> Self {
        Self {
            source: RecordingSource::Memory(recordings),
            stft: StftConfig::default(),
            cache_dir: None,
        }
    }

    pub fn from_manifest(manifest: Manifest, cache_dir: Option<PathBuf>) -> Self {
        Self {
            source: RecordingSource::Manifest(manifest),
            stft: StftConfig::default(),
            cache_dir,
        }
    }

    fn items(&self) -> Vec<Item<'_>> {
        match &self.source {
            RecordingSource::Manifest(m) => m
                .entries
                .iter()
                .map(|e| Item {
                    subject_id: &e.subject_id,
                    group: e.group,
                    task: e.task,
                    recording: Err(e.path.as_path()),
                })
                .collect(),
            RecordingSource::Memory(recs) => recs
                .iter()
                .map(|r| Item {
                    subject_id: &r.subject_id,
                    group: r.group,
                    task: r.task,
                    recording: Ok(r),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        match &self.source {
            RecordingSource::Manifest(m) => m.len(),
            RecordingSource::Memory(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn spectrogram(
        &self,
        item: &Item<'_>,
        selection: &ChannelSelection,
        stft: &Stft,
    ) -> Result<MultiSpectrogram, String> {
        let cached = self
            .cache_dir
            .as_ref()
            .map(|d| d.join(cache_file_name(item.subject_id, item.task, selection, &self.stft)));
        if let Some(path) = &cached {
            if let Ok(f) = fs::File::open(path) {
                if let Ok(ms) =
                    read_spectrogram(BufReader::new(f), self.stft.column_duration_s())
                {
                    return Ok(ms);
                }
            }
        }
        let owned;
        let rec = match item.recording {
            Ok(r) => r,
            Err(path) => {
                let meta = crate::telemetry::ManifestEntry {
                    subject_id: item.subject_id.to_string(),
                    group: item.group,
                    task: item.task,
                    path: path.to_path_buf(),
                };
                owned = load_recording(path, &meta).map_err(|e| e.to_string())?;
                &owned
            }
        };
        let cs = derive_channels(rec).map_err(|e| e.to_string())?;
        let ms = build_with(&cs, selection, stft).map_err(|e| e.to_string())?;
        if let Some(path) = &cached {
            write_cache(path, &ms).map_err(|e| format!("{}: {e}", path.display()))?;
        }
        Ok(ms)
    }

    /// Spectrograms of every recording in the pair's two groups that the
    /// task filter accepts, ordered by subject then task. With
    /// `max_cols`, longer spectrograms are truncated (fixed pipeline). All
    /// failing recordings are reported together.
    pub fn load(
        &self,
        pair: ExperimentPair,
        tasks: TaskFilter,
        selection: &ChannelSelection,
        max_cols: Option<usize>,
    ) -> Result<Vec<SpecRecord>, HarnessError> {
        self.load_where(|g| pair.label(g).is_some(), tasks, selection, max_cols)
    }

    /// Like [`DataSource::load`] but over every group.
    pub fn load_all(
        &self,
        tasks: TaskFilter,
        selection: &ChannelSelection,
        max_cols: Option<usize>,
    ) -> Result<Vec<SpecRecord>, HarnessError> {
        self.load_where(|_| true, tasks, selection, max_cols)
    }

    fn load_where(
        &self,
        keep: impl Fn(Group) -> bool,
        tasks: TaskFilter,
        selection: &ChannelSelection,
        max_cols: Option<usize>,
    ) -> Result<Vec<SpecRecord>, HarnessError> {
        let stft = Stft::new(self.stft.clone())?;
        if let Some(d) = &self.cache_dir {
            fs::create_dir_all(d).map_err(|e| HarnessError::Io(format!("{}: {e}", d.display())))?;
        }
        let mut items: Vec<Item<'_>> = self
            .items()
            .into_iter()
            .filter(|it| keep(it.group) && tasks.accepts(it.task))
            .collect();
        items.sort_by(|a, b| (a.subject_id, a.task).cmp(&(b.subject_id, b.task)));
        let results: Vec<Result<SpecRecord, String>> = items
            .par_iter()
            .map(|it| {
                let ms = self.spectrogram(it, selection, &stft).map_err(|e| {
                    let what = match it.recording {
                        Ok(_) => format!("{} {}", it.subject_id, it.task),
                        Err(p) => p.display().to_string(),
                    };
                    format!("{what}: {e}")
                })?;
                let ms = match max_cols {
                    Some(c) if ms.cols > c => fit_fixed_size(&ms, c),
                    _ => ms,
                };
                Ok(SpecRecord {
                    subject_id: it.subject_id.to_string(),
                    group: it.group,
                    task: it.task,
                    ms,
                })
            })
            .collect();
        let mut out = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for r in results {
            match r {
                Ok(s) => out.push(s),
                Err(e) => failures.push(e),
            }
        }
        if !failures.is_empty() {
            return Err(HarnessError::Data(failures));
        }
        Ok(out)
    }
}

fn write_cache(path: &Path, ms: &MultiSpectrogram) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let f = fs::File::create(&tmp)?;
        write_spectrogram(BufWriter::new(f), ms).map_err(std::io::Error::other)?;
    }
    fs::rename(&tmp, path)
}

/// Shapes spectrograms into labelled model inputs.
pub fn build_samples(
    records: &[SpecRecord],
    pair: ExperimentPair,
    pipeline: Pipeline,
) -> Result<Vec<Sample>, HarnessError> {
    records
        .iter()
        .filter_map(|r| pair.label(r.group).map(|l| (r, l)))
        .map(|(r, label)| {
            let inputs = match pipeline {
                Pipeline::Fixed => {
                    let ms = fit_fixed_size(&r.ms, FIXED_COLUMNS);
                    vec![Tensor::from_vec(&ms.shape(), ms.values)?]
                }
                Pipeline::Frames(w) => {
                    let fs = frame_decompose(&r.ms, w)?;
                    let shape = [fs.channels.len(), fs.bins, fs.width];
                    fs.frames
                        .into_iter()
                        .map(|f| Tensor::from_vec(&shape, f))
                        .collect::<Result<Vec<_>, _>>()?
                }
            };
            Ok(Sample {
                subject_id: r.subject_id.clone(),
                group: r.group,
                task: r.task,
                label,
                inputs,
            })
        })
        .collect()
}

/// Per-channel standardization fitted on training inputs only.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(samples: &[&Sample]) -> Self {
        let c = samples[0].inputs[0].shape()[0];
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        let mut n = vec![0usize; c];
        for s in samples {
            for t in &s.inputs {
                let plane = t.len() / c;
                for (ch, chunk) in t.data().chunks_exact(plane).enumerate() {
                    for &v in chunk {
                        sum[ch] += v as f64;
                        sq[ch] += (v as f64) * (v as f64);
                    }
                    n[ch] += plane;
                }
            }
        }
        let mean: Vec<f64> = sum.iter().zip(&n).map(|(s, &k)| s / k as f64).collect();
        let std = sq
            .iter()
            .zip(&n)
            .zip(&mean)
            .map(|((q, &k), m)| {
                let var = (q / k as f64 - m * m).max(0.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, s: &Sample) -> Sample {
        let c = self.mean.len();
        let inputs = s
            .inputs
            .iter()
            .map(|t| {
                let mut t = t.clone();
                let plane = t.len() / c;
                for (ch, chunk) in t.data_mut().chunks_exact_mut(plane).enumerate() {
                    let (m, sd) = (self.mean[ch], self.std[ch]);
                    for v in chunk {
                        *v = ((*v as f64 - m) / sd) as f32;
                    }
                }
                t
            })
            .collect();
        Sample {
            inputs,
            ..s.clone()
        }
    }
}
