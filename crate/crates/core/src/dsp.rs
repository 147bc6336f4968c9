//! Blackman-window STFT magnitude spectrograms, multi-channel stacking,
//! fixed-size fitting and sliding-window frame decomposition.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{Channel, ChannelSet};

/// Fixed-size pipeline width in spectrogram columns.
pub const FIXED_COLUMNS: usize = 65;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid window length {0}; need at least 2")]
    InvalidLength(usize),
    #[error("empty signal")]
    EmptySignal,
    #[error("invalid STFT configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("channel {0} selected twice")]
    DuplicateChannel(Channel),
    #[error("channel count {0} outside the supported range 2..=5")]
    InvalidChannelCount(usize),
    #[error("channel length mismatch")]
    LengthMismatch,
    #[error("invalid frame window: {0}")]
    InvalidWindow(String),
    #[error("spectrogram cache format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DspError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub sample_rate_hz: f64,
    pub center_pad: bool,
    /// Map magnitudes through `ln(1 + m)`.
    pub log_scale: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 256,
            hop: 128,
            n_fft: 256,
            sample_rate_hz: 250.0,
            center_pad: true,
            log_scale: false,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 {
            return Err(DspError::InvalidLength(self.window_len));
        }
        if self.hop == 0 || self.hop > self.window_len || self.window_len > self.n_fft {
            return Err(DspError::InvalidConfig(format!(
                "need 0 < hop ({}) <= window_len ({}) <= n_fft ({})",
                self.hop, self.window_len, self.n_fft
            )));
        }
        if self.n_fft % 2 != 0 {
            return Err(DspError::InvalidConfig(format!(
                "n_fft {} must be even",
                self.n_fft
            )));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(DspError::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Seconds between adjacent spectrogram columns.
    pub fn column_duration_s(&self) -> f64 {
        self.hop as f64 / self.sample_rate_hz
    }

    /// Number of columns produced for a signal of `n` samples.
    pub fn columns_for(&self, n: usize) -> usize {
        if self.center_pad {
            1 + n / self.hop
        } else if n < self.n_fft {
            1
        } else {
            1 + (n - self.n_fft) / self.hop
        }
    }
}

/// Symmetric Blackman window with the classic (0.42, 0.5, 0.08) coefficients.
pub fn blackman_window(len: usize) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(DspError::InvalidLength(len));
    }
    let denom = (len - 1) as f64;
    let mut w = vec![0.0; len];
    for k in 0..len.div_ceil(2) {
        let phase = std::f64::consts::TAU * k as f64 / denom;
        let v = 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos();
        w[k] = v;
        w[len - 1 - k] = v;
    }
    Ok(w)
}

/// Single-channel magnitude spectrogram stored bins × columns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub column_duration_s: f64,
}

impl Spectrogram {
    pub fn get(&self, bin: usize, col: usize) -> f64 {
        self.values[bin * self.cols + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.bins).map(|b| self.get(b, col)).collect()
    }
}

/// Reusable STFT plan: window coefficients plus the FFT kernel.
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let short = blackman_window(cfg.window_len)?;
        // window centred inside the n_fft buffer
        let mut window = vec![0.0; cfg.n_fft];
        let off = (cfg.n_fft - cfg.window_len) / 2;
        window[off..off + cfg.window_len].copy_from_slice(&short);
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self { cfg, window, fft })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn magnitude(&self, signal: &[f64]) -> Result<Spectrogram> {
        if signal.is_empty() {
            return Err(DspError::EmptySignal);
        }
        let cfg = &self.cfg;
        let n_fft = cfg.n_fft;
        let pad = if cfg.center_pad { n_fft / 2 } else { 0 };
        let cols = cfg.columns_for(signal.len());
        let bins = cfg.bins();
        let mut values = vec![0.0; bins * cols];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for col in 0..cols {
            let start = (col * cfg.hop) as isize - pad as isize;
            for (i, slot) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let v = if idx >= 0 && (idx as usize) < signal.len() {
                    signal[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex64::new(v * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (b, z) in buf.iter().take(bins).enumerate() {
                let m = z.norm();
                values[b * cols + col] = if cfg.log_scale { m.ln_1p() } else { m };
            }
        }
        Ok(Spectrogram {
            bins,
            cols,
            values,
            column_duration_s: cfg.column_duration_s(),
        })
    }
}

pub fn stft_magnitude(signal: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    Stft::new(cfg.clone())?.magnitude(signal)
}

/// Ordered, duplicate-free list of channels to stack.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelSelection(Vec<Channel>);

impl ChannelSelection {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(DspError::DuplicateChannel(*c));
            }
        }
        if !(2..=5).contains(&channels.len()) {
            return Err(DspError::InvalidChannelCount(channels.len()));
        }
        Ok(Self(channels))
    }

    /// `{speed, vx, vy, p}`.
    pub fn default_four() -> Self {
        Self(vec![Channel::Speed, Channel::Vx, Channel::Vy, Channel::P])
    }

    pub fn channels(&self) -> &[Channel] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromStr for ChannelSelection {
    type Err = DspError;

    /// Comma list such as `vx,vy,p`; braces and spaces are tolerated.
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_start_matches('{').trim_end_matches('}');
        let channels = trimmed
            .split(',')
            .map(|t| t.trim())
            .map(|t| {
                t.parse::<Channel>()
                    .map_err(|_| DspError::UnknownChannel(t.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(channels)
    }
}

impl fmt::Display for ChannelSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|c| c.as_str()).collect();
        f.write_str(&names.join(","))
    }
}

/// The ten channel combinations of the channel sweep, in sweep order.
pub fn sweep_channel_combinations() -> Vec<ChannelSelection> {
    use Channel::*;
    [
        vec![X, Y, P],
        vec![Traj, P],
        vec![Vx, Vy, P],
        vec![Speed, P],
        vec![Acc, P],
        vec![Traj, Vx, Vy, P],
        vec![Traj, Acc, P],
        vec![Speed, Vx, Vy, P],
        vec![Acc, Vx, Vy, P],
        vec![Speed, Acc, Vx, Vy, P],
    ]
    .into_iter()
    .map(ChannelSelection)
    .collect()
}

/// Stacked C × F × L magnitude spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSpectrogram {
    pub channels: Vec<Channel>,
    pub bins: usize,
    pub cols: usize,
    /// Row-major C × F × L.
    pub values: Vec<f32>,
    pub column_duration_s: f64,
}

impl MultiSpectrogram {
    pub fn shape(&self) -> [usize; 3] {
        [self.channels.len(), self.bins, self.cols]
    }

    pub fn get(&self, c: usize, bin: usize, col: usize) -> f32 {
        self.values[(c * self.bins + bin) * self.cols + col]
    }

    pub fn shape_string(&self) -> String {
        let [c, f, l] = self.shape();
        format!("{c}×{f}×{l}")
    }
}

pub fn build_multispectrogram(
    channels: &ChannelSet,
    selection: &ChannelSelection,
    cfg: &StftConfig,
) -> Result<MultiSpectrogram> {
    build_with(channels, selection, &Stft::new(cfg.clone())?)
}

/// As [`build_multispectrogram`] with a prepared STFT plan.
pub fn build_with(
    channels: &ChannelSet,
    selection: &ChannelSelection,
    stft: &Stft,
) -> Result<MultiSpectrogram> {
    let mut specs = Vec::with_capacity(selection.len());
    for &c in selection.channels() {
        let sig = channels
            .get(c)
            .ok_or_else(|| DspError::UnknownChannel(c.as_str().to_string()))?;
        specs.push(stft.magnitude(sig)?);
    }
    let (bins, cols) = (specs[0].bins, specs[0].cols);
    if specs.iter().any(|s| s.cols != cols) {
        return Err(DspError::LengthMismatch);
    }
    let mut values = Vec::with_capacity(specs.len() * bins * cols);
    for s in &specs {
        values.extend(s.values.iter().map(|&v| v as f32));
    }
    Ok(MultiSpectrogram {
        channels: selection.channels().to_vec(),
        bins,
        cols,
        values,
        column_duration_s: stft.config().column_duration_s(),
    })
}

/// Truncates (keeping the leading columns) or right-pads with zeros to
/// exactly `target_cols` columns.
pub fn fit_fixed_size(ms: &MultiSpectrogram, target_cols: usize) -> MultiSpectrogram {
    if ms.cols == target_cols {
        return ms.clone();
    }
    let rows = ms.channels.len() * ms.bins;
    let keep = ms.cols.min(target_cols);
    let mut values = vec![0.0f32; rows * target_cols];
    for r in 0..rows {
        values[r * target_cols..r * target_cols + keep]
            .copy_from_slice(&ms.values[r * ms.cols..r * ms.cols + keep]);
    }
    MultiSpectrogram {
        channels: ms.channels.clone(),
        bins: ms.bins,
        cols: target_cols,
        values,
        column_duration_s: ms.column_duration_s,
    }
}

/// Frame width request: an explicit column count or a duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum FrameWindow {
    Columns(usize),
    Milliseconds(f64),
}

impl FrameWindow {
    /// The five sweep durations: 25 ms, 100 ms, 500 ms, 1 s, 1.5 s.
    pub fn sweep_defaults() -> Vec<FrameWindow> {
        [25.0, 100.0, 500.0, 1000.0, 1500.0]
            .into_iter()
            .map(FrameWindow::Milliseconds)
            .collect()
    }

    /// Width in columns for a given column duration.
    pub fn columns(&self, column_duration_s: f64) -> Result<usize> {
        match *self {
            FrameWindow::Columns(0) => Err(DspError::InvalidWindow("0 columns".into())),
            FrameWindow::Columns(w) => Ok(w),
            FrameWindow::Milliseconds(ms) if !(ms.is_finite() && ms > 0.0) => {
                Err(DspError::InvalidWindow(format!("{ms} ms")))
            }
            FrameWindow::Milliseconds(ms) => {
                let w = (ms / 1000.0 / column_duration_s).round() as usize;
                Ok(w.max(1))
            }
        }
    }
}

impl fmt::Display for FrameWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FrameWindow::Columns(w) => write!(f, "cols:{w}"),
            FrameWindow::Milliseconds(ms) if ms >= 1000.0 => write!(f, "{}s", ms / 1000.0),
            FrameWindow::Milliseconds(ms) => write!(f, "{ms}ms"),
        }
    }
}

impl FromStr for FrameWindow {
    type Err = DspError;

    /// Accepts `cols:2`, `500ms`, `1s`, `1.5s`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || DspError::InvalidWindow(s.to_string());
        let win = if let Some(rest) = s.strip_prefix("cols:") {
            FrameWindow::Columns(rest.trim().parse().map_err(|_| bad())?)
        } else if let Some(rest) = s.strip_suffix("ms") {
            FrameWindow::Milliseconds(rest.trim().parse().map_err(|_| bad())?)
        } else if let Some(rest) = s.strip_suffix('s') {
            let secs: f64 = rest.trim().parse().map_err(|_| bad())?;
            FrameWindow::Milliseconds(secs * 1000.0)
        } else {
            return Err(bad());
        };
        // reject zero / negative eagerly
        win.columns(1.0)?;
        Ok(win)
    }
}

/// Non-overlapping equal-width frames cut from a multi-spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub channels: Vec<Channel>,
    pub bins: usize,
    pub width: usize,
    pub stride_cols: usize,
    pub pad_cols_last: usize,
    /// Each frame row-major C × F × width.
    pub frames: Vec<Vec<f32>>,
}

impl FrameStack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Concatenates frames along time and drops the trailing padding.
    pub fn reassemble(&self) -> MultiSpectrogram {
        let rows = self.channels.len() * self.bins;
        let total = self.frames.len() * self.width - self.pad_cols_last;
        let mut values = vec![0.0f32; rows * total];
        for (k, frame) in self.frames.iter().enumerate() {
            let c0 = k * self.width;
            let take = self.width.min(total - c0);
            for r in 0..rows {
                values[r * total + c0..r * total + c0 + take]
                    .copy_from_slice(&frame[r * self.width..r * self.width + take]);
            }
        }
        MultiSpectrogram {
            channels: self.channels.clone(),
            bins: self.bins,
            cols: total,
            values,
            column_duration_s: f64::NAN,
        }
    }
}

pub fn frame_decompose(ms: &MultiSpectrogram, window: FrameWindow) -> Result<FrameStack> {
    let width = window.columns(ms.column_duration_s)?;
    Ok(frame_by_columns(ms, width))
}

fn frame_by_columns(ms: &MultiSpectrogram, width: usize) -> FrameStack {
    let rows = ms.channels.len() * ms.bins;
    let n_frames = ms.cols.div_ceil(width).max(1);
    let pad = n_frames * width - ms.cols;
    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let c0 = k * width;
        let take = width.min(ms.cols.saturating_sub(c0));
        let mut f = vec![0.0f32; rows * width];
        for r in 0..rows {
            f[r * width..r * width + take]
                .copy_from_slice(&ms.values[r * ms.cols + c0..r * ms.cols + c0 + take]);
        }
        frames.push(f);
    }
    FrameStack {
        channels: ms.channels.clone(),
        bins: ms.bins,
        width,
        stride_cols: width,
        pad_cols_last: pad,
        frames,
    }
}

const SPEC_MAGIC: &[u8; 14] = b"GRAPHOCOG-SPEC";
const SPEC_VERSION: u16 = 1;

/// Binary cache layout: 14-byte magic, u16 version, u32 C/F/L, C·F·L f32
/// values, u32 name count, then each name as u32 length + UTF-8 bytes.
/// Everything little-endian.
pub fn write_spectrogram<W: Write>(mut w: W, ms: &MultiSpectrogram) -> Result<()> {
    w.write_all(SPEC_MAGIC)?;
    w.write_all(&SPEC_VERSION.to_le_bytes())?;
    for d in ms.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(ms.values.len() * 4);
    for v in &ms.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.write_all(&(ms.channels.len() as u32).to_le_bytes())?;
    for c in &ms.channels {
        let name = c.as_str().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a cache file. The column duration is not stored and comes from
/// the STFT configuration the cache was built with.
pub fn read_spectrogram<R: Read>(mut r: R, column_duration_s: f64) -> Result<MultiSpectrogram> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..14] != SPEC_MAGIC {
        return Err(DspError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[14], header[15]]);
    if version != SPEC_VERSION {
        return Err(DspError::Format(format!("unsupported version {version}")));
    }
    let c = read_u32(&mut r)? as usize;
    let f = read_u32(&mut r)? as usize;
    let l = read_u32(&mut r)? as usize;
    let n = c
        .checked_mul(f)
        .and_then(|v| v.checked_mul(l))
        .ok_or_else(|| DspError::Format("dimension overflow".into()))?;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)?;
    let values = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let names = read_u32(&mut r)? as usize;
    if names != c {
        return Err(DspError::Format(format!(
            "{names} channel names for {c} channels"
        )));
    }
    let mut channels = Vec::with_capacity(c);
    for _ in 0..names {
        let len = read_u32(&mut r)? as usize;
        let mut s = vec![0u8; len];
        r.read_exact(&mut s)?;
        let s = String::from_utf8(s).map_err(|e| DspError::Format(e.to_string()))?;
        channels.push(s.parse::<Channel>().map_err(DspError::UnknownChannel)?);
    }
    Ok(MultiSpectrogram {
        channels,
        bins: f,
        cols: l,
        values,
        column_duration_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    /// Naive DFT magnitude of one centre-padded column, independent of rustfft.
    fn naive_column(signal: &[f64], col: usize, cfg: &StftConfig) -> Vec<f64> {
        let n = cfg.n_fft;
        let w: Vec<f64> = (0..n)
            .map(|k| {
                let ph = 2.0 * PI * k as f64 / (n - 1) as f64;
                0.42 - 0.5 * ph.cos() + 0.08 * (2.0 * ph).cos()
            })
            .collect();
        let start = (col * cfg.hop) as isize - (n / 2) as isize;
        let seg: Vec<f64> = (0..n)
            .map(|i| {
                let idx = start + i as isize;
                if idx >= 0 && (idx as usize) < signal.len() {
                    signal[idx as usize] * w[i]
                } else {
                    0.0
                }
            })
            .collect();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in seg.iter().enumerate() {
                    let ang = -2.0 * PI * ((k * i) % n) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re.hypot(im)
            })
            .collect()
    }

    #[test]
    fn blackman_short() {
        let w = blackman_window(3).unwrap();
        assert!(w[0].abs() < 1.4e-16 && w[2].abs() < 1.4e-16);
        assert!((w[1] - 1.0).abs() < 1e-15);
        assert!(matches!(blackman_window(1), Err(DspError::InvalidLength(1))));
    }

    #[test]
    fn blackman_symmetric_and_summed() {
        for len in [2, 5, 64, 255, 256] {
            let w = blackman_window(len).unwrap();
            for k in 0..len {
                assert_eq!(w[k], w[len - 1 - k]);
            }
        }
        // direct summation reference: 107.1
        let sum: f64 = blackman_window(256).unwrap().iter().sum();
        assert!((sum - 107.1).abs() < 1e-9, "{sum}");
    }

    #[test]
    fn column_count_law_and_33_seconds() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.bins(), 129);
        assert!((cfg.column_duration_s() - 0.512).abs() < 1e-12);
        assert_eq!(stft_magnitude(&vec![0.1; 8250], &cfg).unwrap().cols, 65);
        for n in [1, 127, 128, 129, 255, 256, 1000] {
            let s = stft_magnitude(&vec![1.0; n], &cfg).unwrap();
            assert_eq!(s.cols, 1 + n / 128);
            assert_eq!(s.bins, 129);
        }
        assert!(matches!(
            stft_magnitude(&[], &cfg),
            Err(DspError::EmptySignal)
        ));
    }

    #[test]
    fn zero_signal_zero_spectrogram() {
        let s = stft_magnitude(&vec![0.0; 777], &StftConfig::default()).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sinusoid_peaks_at_bin_32() {
        let cfg = StftConfig::default();
        let f = 32.0 * 250.0 / 256.0;
        let sig: Vec<f64> = (0..2048)
            .map(|i| (2.0 * PI * f * i as f64 / 250.0).sin())
            .collect();
        let s = stft_magnitude(&sig, &cfg).unwrap();
        for col in 1..s.cols - 1 {
            let column = s.column(col);
            let argmax = (0..column.len())
                .max_by(|&a, &b| column[a].total_cmp(&column[b]))
                .unwrap();
            assert_eq!(argmax, 32, "column {col}");
            let oracle = naive_column(&sig, col, &cfg);
            for (a, b) in column.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-9));
            }
        }
    }

    #[test]
    fn parseval_one_column() {
        let cfg = StftConfig::default();
        let sig: Vec<f64> = (0..600).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let s = stft_magnitude(&sig, &cfg).unwrap();
        let col = 2;
        let w = blackman_window(256).unwrap();
        let start = col * 128 - 128;
        let energy_time: f64 = (0..256).map(|i| (sig[start + i] * w[i]).powi(2)).sum();
        // one-sided spectrum: interior bins count twice
        let mags = s.column(col);
        let energy_freq: f64 = mags
            .iter()
            .enumerate()
            .map(|(k, m)| if k == 0 || k == 128 { m * m } else { 2.0 * m * m })
            .sum::<f64>()
            / 256.0;
        assert!((energy_time - energy_freq).abs() <= 1e-6 * energy_time);
    }

    #[test]
    fn log_scale_maps_ln1p() {
        let sig: Vec<f64> = (0..300).map(|i| (i as f64 * 0.3).sin()).collect();
        let lin = stft_magnitude(&sig, &StftConfig::default()).unwrap();
        let cfg = StftConfig {
            log_scale: true,
            ..Default::default()
        };
        let log = stft_magnitude(&sig, &cfg).unwrap();
        for (a, b) in lin.values.iter().zip(&log.values) {
            assert!((a.ln_1p() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let bad = StftConfig {
            hop: 300,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let odd = StftConfig {
            n_fft: 257,
            window_len: 257,
            ..Default::default()
        };
        assert!(odd.validate().is_err());
    }

    fn channel_set(n: usize) -> ChannelSet {
        let mut m = BTreeMap::new();
        for (k, c) in Channel::ALL.into_iter().enumerate() {
            m.insert(c, (0..n).map(|i| ((i * (k + 3)) % 17) as f64).collect());
        }
        ChannelSet::new(m, 0.004).unwrap()
    }

    #[test]
    fn multispectrogram_shapes() {
        let cs = channel_set(1000);
        let cfg = StftConfig::default();
        let four = build_multispectrogram(&cs, &ChannelSelection::default_four(), &cfg).unwrap();
        assert_eq!(four.shape(), [4, 129, 1 + 1000 / 128]);
        let two = build_multispectrogram(&cs, &"traj,p".parse().unwrap(), &cfg).unwrap();
        assert_eq!(two.shape(), [2, 129, 8]);
        let single = stft_magnitude(cs.get(Channel::P).unwrap(), &cfg).unwrap();
        for b in 0..129 {
            for l in 0..8 {
                assert_eq!(two.get(1, b, l), single.get(b, l) as f32);
            }
        }
    }

    #[test]
    fn selection_parsing() {
        assert!(matches!(
            "foo,p".parse::<ChannelSelection>(),
            Err(DspError::UnknownChannel(n)) if n == "foo"
        ));
        assert!(matches!(
            "p,p".parse::<ChannelSelection>(),
            Err(DspError::DuplicateChannel(Channel::P))
        ));
        assert!("p".parse::<ChannelSelection>().is_err());
        let s: ChannelSelection = "{speed, acc, vx, vy, p}".parse().unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.to_string(), "speed,acc,vx,vy,p");
        assert_eq!(sweep_channel_combinations().len(), 10);
    }

    #[test]
    fn selection_missing_from_set() {
        let m = BTreeMap::from([(Channel::P, vec![1.0; 10]), (Channel::X, vec![1.0; 10])]);
        let cs = ChannelSet::new(m, 0.004).unwrap();
        let sel: ChannelSelection = "vx,p".parse().unwrap();
        assert!(matches!(
            build_multispectrogram(&cs, &sel, &StftConfig::default()),
            Err(DspError::UnknownChannel(_))
        ));
    }

    fn ramp(c: usize, f: usize, l: usize) -> MultiSpectrogram {
        MultiSpectrogram {
            channels: [Channel::Speed, Channel::Vx, Channel::Vy, Channel::P, Channel::Acc][..c]
                .to_vec(),
            bins: f,
            cols: l,
            values: (0..c * f * l).map(|i| i as f32 + 0.5).collect(),
            column_duration_s: 0.512,
        }
    }

    #[test]
    fn fixed_size_fit() {
        let same = ramp(4, 3, 65);
        assert_eq!(fit_fixed_size(&same, 65), same);
        let long = ramp(2, 3, 70);
        let cut = fit_fixed_size(&long, 65);
        assert_eq!(cut.cols, 65);
        for c in 0..2 {
            for b in 0..3 {
                for l in 0..65 {
                    assert_eq!(cut.get(c, b, l), long.get(c, b, l));
                }
            }
        }
        let short = ramp(3, 2, 60);
        let padded = fit_fixed_size(&short, 65);
        for c in 0..3 {
            for b in 0..2 {
                for l in 0..60 {
                    assert_eq!(padded.get(c, b, l), short.get(c, b, l));
                }
                for l in 60..65 {
                    assert_eq!(padded.get(c, b, l), 0.0);
                }
            }
        }
    }

    #[test]
    fn frame_window_conversion() {
        let d = 0.512;
        let widths: Vec<usize> = FrameWindow::sweep_defaults()
            .iter()
            .map(|w| w.columns(d).unwrap())
            .collect();
        assert_eq!(widths, vec![1, 1, 1, 2, 3]);
        assert!("0ms".parse::<FrameWindow>().is_err());
        assert!("cols:0".parse::<FrameWindow>().is_err());
        assert!("-1s".parse::<FrameWindow>().is_err());
        assert_eq!("cols:2".parse::<FrameWindow>().unwrap(), FrameWindow::Columns(2));
        assert_eq!(
            "1.5s".parse::<FrameWindow>().unwrap(),
            FrameWindow::Milliseconds(1500.0)
        );
        assert_eq!(
            "500ms".parse::<FrameWindow>().unwrap(),
            FrameWindow::Milliseconds(500.0)
        );
        assert_eq!(FrameWindow::Milliseconds(1500.0).to_string(), "1.5s");
    }

    #[test]
    fn framing_arithmetic() {
        let ms = ramp(4, 2, 65);
        // oracle: ceil(65 / w) frames, padding w * frames - 65
        for (win, w, frames, pad) in [
            (FrameWindow::Milliseconds(1000.0), 2, 33, 1),
            (FrameWindow::Milliseconds(1500.0), 3, 22, 1),
            (FrameWindow::Columns(65), 65, 1, 0),
        ] {
            let fs = frame_decompose(&ms, win).unwrap();
            assert_eq!(fs.width, w);
            assert_eq!(fs.stride_cols, w);
            assert_eq!(fs.len(), frames);
            assert_eq!(fs.pad_cols_last, pad);
        }
        let one = frame_decompose(&ms, FrameWindow::Columns(65)).unwrap();
        assert_eq!(one.frames[0], ms.values);
        let two = frame_decompose(&ms, FrameWindow::Columns(2)).unwrap();
        let last = two.frames.last().unwrap();
        for r in 0..8 {
            assert_eq!(last[r * 2 + 1], 0.0);
        }
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let mut ms = ramp(3, 4, 5);
        ms.values[3] = f32::MIN_POSITIVE / 3.0;
        ms.values[4] = 1.0e30;
        let mut buf = Vec::new();
        write_spectrogram(&mut buf, &ms).unwrap();
        assert_eq!(&buf[..14], b"GRAPHOCOG-SPEC");
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 3);
        let back = read_spectrogram(buf.as_slice(), 0.512).unwrap();
        assert_eq!(back.channels, ms.channels);
        assert_eq!(back.shape(), ms.shape());
        assert!(back
            .values
            .iter()
            .zip(&ms.values)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(read_spectrogram(corrupt.as_slice(), 0.512).is_err());
    }

    proptest! {
        #[test]
        fn reassembly_round_trip(c in 2usize..=5, l in 1usize..200, w in 1usize..200) {
            let ms = ramp(c, 3, l);
            let fs = frame_decompose(&ms, FrameWindow::Columns(w)).unwrap();
            prop_assert_eq!(fs.len(), l.div_ceil(w));
            let back = fs.reassemble();
            prop_assert_eq!(back.shape(), ms.shape());
            prop_assert!(back.values.iter().zip(&ms.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn magnitude_scales_linearly(alpha in 0.0f64..10.0, seed in 0u64..1000) {
            let sig: Vec<f64> = (0..400).map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f64) / 500.0 - 1.0).collect();
            let scaled: Vec<f64> = sig.iter().map(|v| v * alpha).collect();
            let cfg = StftConfig::default();
            let a = stft_magnitude(&sig, &cfg).unwrap();
            let b = stft_magnitude(&scaled, &cfg).unwrap();
            for (u, v) in a.values.iter().zip(&b.values) {
                prop_assert!(v.is_finite() && *v >= 0.0);
                prop_assert!((u * alpha - v).abs() <= 1e-9 * (1.0 + v.abs()));
            }
        }
    }
}
