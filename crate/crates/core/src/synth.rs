//! Synthetic cohorts with class-conditional handwriting signatures.
//!
//! Base pen motion is a Catmull-Rom spline through random velocity knots,
//! drawn the same way for every group. Group signatures are layered on
//! top in velocity space (tremor, slowing) and in pressure (irregularity);
//! positions are then integrated from velocity so that the differencing
//! in `telemetry` recovers them. The signatures are simple stand-ins for
//! exercising the pipeline, not a model of real patients.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{Stft, StftConfig};
use crate::seed::derive_seed;
use crate::telemetry::{
    derive_channels, write_recording_csv, Channel, ExperimentPair, Group, Manifest,
    ManifestEntry, PenSample, Recording, Task, TaskFamily, TelemetryError,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    /// Peak tremor velocity added to vx and vy (units/s).
    pub pd_amplitude: f64,
    pub pd_band_hz: (f64, f64),
    pub pdm_amplitude: f64,
    pub pdm_band_hz: (f64, f64),
    /// Standard deviation of the pressure irregularity process.
    pub ad_pressure_sigma: f64,
    /// Fractional reduction of base velocity.
    pub ad_speed_reduction: f64,
    /// When set, tremor is gated on for the first half of every period.
    pub burst_period_s: Option<f64>,
}

impl Default for Signature {
    fn default() -> Self {
        Self {
            pd_amplitude: 0.3,
            pd_band_hz: (4.0, 6.0),
            pdm_amplitude: 0.3,
            pdm_band_hz: (2.0, 4.0),
            ad_pressure_sigma: 0.15,
            ad_speed_reduction: 0.3,
            burst_period_s: None,
        }
    }
}

impl Signature {
    /// Every amplitude multiplied by `k`; `scaled(0.0)` makes all groups
    /// identically distributed.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            pd_amplitude: self.pd_amplitude * k,
            pdm_amplitude: self.pdm_amplitude * k,
            ad_pressure_sigma: self.ad_pressure_sigma * k,
            ad_speed_reduction: (self.ad_speed_reduction * k).min(0.95),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub ctl: usize,
    pub pd: usize,
    pub pdm: usize,
    pub ad: usize,
    pub tasks: Vec<Task>,
    pub duration_s: (f64, f64),
    pub sample_rate_hz: f64,
    /// Standard deviation of the base velocity knots (units/s).
    pub velocity_sigma: f64,
    pub signature: Signature,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            ctl: 42,
            pd: 35,
            pdm: 15,
            ad: 21,
            tasks: Task::ALL.to_vec(),
            duration_s: (10.0, 60.0),
            sample_rate_hz: 250.0,
            velocity_sigma: 1.0,
            signature: Signature::default(),
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn count(&self, g: Group) -> usize {
        match g {
            Group::Ctl => self.ctl,
            Group::Pd => self.pd,
            Group::Pdm => self.pdm,
            Group::Ad => self.ad,
        }
    }

    pub fn total_subjects(&self) -> usize {
        Group::ALL.iter().map(|&g| self.count(g)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.duration_s;
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(SynthError::InvalidSpec("sample rate must be positive".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(SynthError::InvalidSpec(format!(
                "duration range {lo}..{hi} is not ordered"
            )));
        }
        if (lo * self.sample_rate_hz).round() < 3.0 {
            return Err(SynthError::InvalidSpec(
                "shortest duration must give at least 3 samples".into(),
            ));
        }
        if self.tasks.is_empty() {
            return Err(SynthError::InvalidSpec("no tasks".into()));
        }
        let s = &self.signature;
        for (name, band) in [("pd", s.pd_band_hz), ("pdm", s.pdm_band_hz)] {
            if !(band.0 > 0.0 && band.0 <= band.1 && band.1 < self.sample_rate_hz / 2.0) {
                return Err(SynthError::InvalidSpec(format!("{name} band {band:?}")));
            }
        }
        if !(0.0..1.0).contains(&s.ad_speed_reduction) {
            return Err(SynthError::InvalidSpec(
                "ad_speed_reduction must lie in [0, 1)".into(),
            ));
        }
        if s.pd_amplitude < 0.0 || s.pdm_amplitude < 0.0 || s.ad_pressure_sigma < 0.0 {
            return Err(SynthError::InvalidSpec("amplitudes must be ≥ 0".into()));
        }
        if matches!(s.burst_period_s, Some(p) if !(p > 0.0)) {
            return Err(SynthError::InvalidSpec("burst period must be positive".into()));
        }
        Ok(())
    }

    /// (subject id, group, subject seed) in generation order.
    pub fn subjects(&self) -> Vec<(String, Group, u64)> {
        let mut out = Vec::with_capacity(self.total_subjects());
        for (gi, &g) in Group::ALL.iter().enumerate() {
            for i in 0..self.count(g) {
                out.push((
                    format!("{}{:03}", g.as_str(), i + 1),
                    g,
                    derive_seed(self.seed, &[gi as u64, i as u64]),
                ));
            }
        }
        out
    }
}

fn task_motion_scale(task: Task) -> f64 {
    match task.family() {
        TaskFamily::Point => 0.3,
        TaskFamily::Spiral => 1.0,
        TaskFamily::Writing => 1.2,
        TaskFamily::Drawing => 0.9,
    }
}

const KNOT_SPACING_S: f64 = 0.4;
const PRESSURE_KNOT_SPACING_S: f64 = 0.8;
const PRESSURE_MEAN: f64 = 1.0;
const PRESSURE_SIGMA: f64 = 0.1;
const IRREGULARITY_TAU_S: f64 = 0.1;

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Catmull-Rom interpolation through knots placed every `spacing` seconds.
fn catmull_rom(knots: &[f64], spacing: f64, t: f64) -> f64 {
    let pos = t / spacing;
    let j = pos.floor() as usize;
    let u = pos - j as f64;
    let at = |k: isize| knots[k.clamp(0, knots.len() as isize - 1) as usize];
    let j = j as isize;
    let (p0, p1, p2, p3) = (at(j - 1), at(j), at(j + 1), at(j + 2));
    0.5 * (2.0 * p1
        + (-p0 + p2) * u
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u * u * u)
}

/// Per-subject draws shared by all of a subject's recordings.
struct SubjectTraits {
    motion_scale: f64,
    tremor_factor: f64,
    pd_freq: f64,
    pdm_freq: f64,
}

impl SubjectTraits {
    fn draw(seed: u64, sig: &Signature) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let motion_scale = rng.random_range(0.8..1.2);
        let tremor_factor = rng.random_range(0.7..1.3);
        let u_pd: f64 = rng.random();
        let u_pdm: f64 = rng.random();
        Self {
            motion_scale,
            tremor_factor,
            pd_freq: sig.pd_band_hz.0 + u_pd * (sig.pd_band_hz.1 - sig.pd_band_hz.0),
            pdm_freq: sig.pdm_band_hz.0 + u_pdm * (sig.pdm_band_hz.1 - sig.pdm_band_hz.0),
        }
    }
}

/// Generates one recording. The sequence of random draws does not depend
/// on the group or on any amplitude, so changing a signature amplitude
/// changes only the signature term.
pub fn synthesize_recording(
    spec: &CohortSpec,
    subject_id: &str,
    group: Group,
    subject_seed: u64,
    task: Task,
) -> Result<Recording> {
    let sig = &spec.signature;
    let traits = SubjectTraits::draw(subject_seed, sig);
    let task_idx = Task::ALL.iter().position(|&t| t == task).expect("known task") as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(subject_seed, &[task_idx]));
    let fs = spec.sample_rate_hz;
    let dt = 1.0 / fs;

    let duration = rng.random_range(spec.duration_s.0..=spec.duration_s.1);
    let n = ((duration * fs).round() as usize).max(3);
    let span = n as f64 * dt;
    let n_knots = (span / KNOT_SPACING_S).ceil() as usize + 3;
    let n_pknots = (span / PRESSURE_KNOT_SPACING_S).ceil() as usize + 3;
    let kx = normals(&mut rng, n_knots);
    let ky = normals(&mut rng, n_knots);
    let kp = normals(&mut rng, n_pknots);
    let phases: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let irregular = normals(&mut rng, n);

    let mut motion = spec.velocity_sigma * traits.motion_scale * task_motion_scale(task);
    if group == Group::Ad {
        motion *= 1.0 - sig.ad_speed_reduction;
    }
    let (tremor_amp, tremor_freq, phase_x, phase_y) = match group {
        Group::Pd => (
            sig.pd_amplitude * traits.tremor_factor,
            traits.pd_freq,
            phases[0],
            phases[1],
        ),
        Group::Pdm => (
            sig.pdm_amplitude * traits.tremor_factor,
            traits.pdm_freq,
            phases[2],
            phases[3],
        ),
        _ => (0.0, 0.0, 0.0, 0.0),
    };
    let rho = (-dt / IRREGULARITY_TAU_S).exp();
    let innovation = (1.0 - rho * rho).sqrt();
    let irregularity_sigma = if group == Group::Ad {
        sig.ad_pressure_sigma
    } else {
        0.0
    };

    let mut samples = Vec::with_capacity(n);
    let (mut x, mut y) = (0.0f64, 0.0f64);
    let mut ou = irregular[0];
    for (i, &noise) in irregular.iter().enumerate() {
        let t = i as f64 * dt;
        if i > 0 {
            ou = rho * ou + innovation * noise;
        }
        let gate = match sig.burst_period_s {
            Some(p) if (t % p) >= p / 2.0 => 0.0,
            _ => 1.0,
        };
        let w = 2.0 * PI * tremor_freq * t;
        let vx = motion * catmull_rom(&kx, KNOT_SPACING_S, t)
            + gate * tremor_amp * (w + phase_x).cos();
        let vy = motion * catmull_rom(&ky, KNOT_SPACING_S, t)
            + gate * tremor_amp * (w + phase_y).cos();
        if i > 0 {
            x += vx * dt;
            y += vy * dt;
        }
        let p = PRESSURE_MEAN
            + PRESSURE_SIGMA * catmull_rom(&kp, PRESSURE_KNOT_SPACING_S, t)
            + irregularity_sigma * ou;
        samples.push(PenSample {
            t: i as f64 / fs,
            x,
            y,
            p: p.max(0.0),
        });
    }
    Ok(Recording::new(subject_id, group, task, samples)?)
}

/// All recordings of a cohort, ordered by subject then task.
pub fn generate_recordings(spec: &CohortSpec) -> Result<Vec<Recording>> {
    spec.validate()?;
    let per_subject: Vec<Vec<Recording>> = spec
        .subjects()
        .into_par_iter()
        .map(|(id, g, seed)| {
            spec.tasks
                .iter()
                .map(|&task| synthesize_recording(spec, &id, g, seed, task))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_subject.into_iter().flatten().collect())
}

#[derive(Debug, Clone)]
pub struct CohortFiles {
    pub manifest_path: PathBuf,
    /// Entries with paths resolved against the output directory.
    pub manifest: Manifest,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `recordings/<subject>_<task>.csv` and `manifest.jsonl` (with
/// relative paths) under `out_dir`.
pub fn generate_cohort(spec: &CohortSpec, out_dir: &Path) -> Result<CohortFiles> {
    spec.validate()?;
    let rec_dir = out_dir.join("recordings");
    fs::create_dir_all(&rec_dir).map_err(io_err(&rec_dir))?;
    let entries: Vec<Vec<ManifestEntry>> = spec
        .subjects()
        .into_par_iter()
        .map(|(id, g, seed)| {
            let mut out = Vec::with_capacity(spec.tasks.len());
            for &task in &spec.tasks {
                let rec = synthesize_recording(spec, &id, g, seed, task)?;
                let rel = PathBuf::from("recordings").join(format!("{id}_{task}.csv"));
                let path = out_dir.join(&rel);
                fs::write(&path, write_recording_csv(&rec.samples)).map_err(io_err(&path))?;
                out.push(ManifestEntry {
                    subject_id: id.clone(),
                    group: g,
                    task,
                    path: rel,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let relative = Manifest {
        entries: entries.into_iter().flatten().collect(),
    };
    let manifest_path = out_dir.join("manifest.jsonl");
    fs::write(&manifest_path, relative.to_jsonl()).map_err(io_err(&manifest_path))?;
    let manifest = Manifest {
        entries: relative
            .entries
            .into_iter()
            .map(|mut e| {
                e.path = out_dir.join(&e.path);
                e
            })
            .collect(),
    };
    Ok(CohortFiles {
        manifest_path,
        manifest,
    })
}

const PROBE_CHANNELS: [Channel; 4] = [Channel::Vx, Channel::Vy, Channel::Speed, Channel::P];
const PROBE_BANDS_HZ: [(f64, f64); 4] = [(0.5, 2.0), (2.0, 4.0), (4.0, 6.0), (6.0, 10.0)];

/// Mean spectral energy per (channel, band) for one recording.
pub fn band_energies(rec: &Recording, stft: &Stft) -> Result<Vec<f64>> {
    let cs = derive_channels(rec)?;
    let cfg = stft.config();
    let hz_per_bin = cfg.sample_rate_hz / cfg.n_fft as f64;
    let mut out = Vec::with_capacity(PROBE_CHANNELS.len() * PROBE_BANDS_HZ.len());
    for ch in PROBE_CHANNELS {
        let spec = stft
            .magnitude(cs.get(ch).expect("derived channel present"))
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        for (lo, hi) in PROBE_BANDS_HZ {
            let mut e = 0.0;
            for bin in 0..spec.bins {
                let f = bin as f64 * hz_per_bin;
                if f >= lo && f < hi {
                    e += (0..spec.cols).map(|c| spec.get(bin, c).powi(2)).sum::<f64>();
                }
            }
            out.push(e / spec.cols as f64);
        }
    }
    Ok(out)
}

/// Largest standardized difference in mean log band energy between the
/// two label groups, over all features.
fn contrast(log_features: &[Vec<f64>], labels: &[usize]) -> f64 {
    let dims = log_features[0].len();
    let mut best = 0.0f64;
    for d in 0..dims {
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for (f, &l) in log_features.iter().zip(labels) {
            sums[l] += f[d];
            counts[l] += 1;
        }
        if counts[0] < 2 || counts[1] < 2 {
            continue;
        }
        let means = [sums[0] / counts[0] as f64, sums[1] / counts[1] as f64];
        let ss: f64 = log_features
            .iter()
            .zip(labels)
            .map(|(f, &l)| (f[d] - means[l]).powi(2))
            .sum();
        let sd = (ss / (counts[0] + counts[1] - 2) as f64).sqrt();
        if sd > 0.0 {
            best = best.max((means[1] - means[0]).abs() / sd);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    /// Largest standardized contrast of log band energy over channel/band
    /// features.
    pub score: f64,
    /// Scores with subject labels randomly permuted.
    pub null_scores: Vec<f64>,
}

impl ProbeReport {
    pub fn null_max(&self) -> f64 {
        self.null_scores.iter().copied().fold(0.0, f64::max)
    }

    /// The observed score exceeds every permuted score.
    pub fn above_null(&self) -> bool {
        self.score > self.null_max()
    }
}

/// Model-free difficulty score for a pair: band-energy contrast between
/// the two groups, plus a permutation null obtained by shuffling group
/// labels across subjects.
pub fn separability_probe(
    recordings: &[Recording],
    pair: ExperimentPair,
    permutations: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let stft = Stft::new(StftConfig::default()).expect("default STFT config is valid");
    let chosen: Vec<&Recording> = recordings
        .iter()
        .filter(|r| pair.label(r.group).is_some())
        .collect();
    if chosen.is_empty() {
        return Err(SynthError::InvalidSpec(format!("no recordings for {pair}")));
    }
    let features = chosen
        .par_iter()
        .map(|r| {
            band_energies(r, &stft).map(|e| e.iter().map(|v| (v + 1e-12).ln()).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut subjects: Vec<&str> = chosen.iter().map(|r| r.subject_id.as_str()).collect();
    subjects.sort_unstable();
    subjects.dedup();
    let subject_index: Vec<usize> = chosen
        .iter()
        .map(|r| subjects.binary_search(&r.subject_id.as_str()).expect("present"))
        .collect();
    let mut subject_labels = vec![0usize; subjects.len()];
    for (r, &s) in chosen.iter().zip(&subject_index) {
        subject_labels[s] = pair.label(r.group).expect("filtered");
    }
    let expand = |sl: &[usize]| -> Vec<usize> { subject_index.iter().map(|&s| sl[s]).collect() };
    let score = contrast(&features, &expand(&subject_labels));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut null_scores = Vec::with_capacity(permutations);
    let mut perm = subject_labels.clone();
    for _ in 0..permutations {
        perm.shuffle(&mut rng);
        null_scores.push(contrast(&features, &expand(&perm)));
    }
    Ok(ProbeReport { score, null_scores })
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic critical value at α = 0.05.
pub fn ks_critical_05(n: usize, m: usize) -> f64 {
    1.36 * ((n + m) as f64 / (n * m) as f64).sqrt()
}
