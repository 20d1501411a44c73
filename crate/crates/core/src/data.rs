//! Canonical data model and on-disk formats.
//!
//! Recordings are stored as raw little-endian `f32` in time-major order
//! (one frame = all channels at one instant) next to a JSON sidecar.
//! Ground truth and sorting output are plain CSV.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DTYPE_F32LE: &str = "f32le";

/// Channel positions on the probe, in micrometres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeGeometry {
    pub channel_positions: Vec<[f64; 2]>,
}

impl ProbeGeometry {
    pub fn new(channel_positions: Vec<[f64; 2]>) -> Result<Self> {
        if channel_positions.is_empty() {
            return Err(Error::Invalid("probe must have at least one channel".into()));
        }
        for (i, p) in channel_positions.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::Invalid(format!("channel {i} has a non-finite position")));
            }
        }
        let mut sorted: Vec<(u64, u64, usize)> = channel_positions
            .iter()
            .enumerate()
            .map(|(i, p)| (p[0].to_bits(), p[1].to_bits(), i))
            .collect();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::Invalid(format!(
                    "channels {} and {} share a position",
                    w[0].2, w[1].2
                )));
            }
        }
        Ok(Self { channel_positions })
    }

    /// Rectangular grid, row-major: channel = row * cols + col, x = col·pitch, y = row·pitch.
    pub fn grid(rows: usize, cols: usize, pitch_um: f64) -> Result<Self> {
        let mut pos = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                pos.push([c as f64 * pitch_um, r as f64 * pitch_um]);
            }
        }
        Self::new(pos)
    }

    pub fn n_channels(&self) -> usize {
        self.channel_positions.len()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.channel_positions[a], self.channel_positions[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }

    pub fn distance_to(&self, ch: usize, point: [f64; 2]) -> f64 {
        let p = self.channel_positions[ch];
        ((p[0] - point[0]).powi(2) + (p[1] - point[1]).powi(2)).sqrt()
    }

    /// The `count` channels nearest to `center` (itself first), ties broken by index.
    pub fn nearest_channels(&self, center: usize, count: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n_channels()).collect();
        idx.sort_by(|&a, &b| {
            self.distance(center, a)
                .total_cmp(&self.distance(center, b))
                .then(a.cmp(&b))
        });
        idx.truncate(count);
        idx
    }

    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        Self::new(keep.iter().map(|&i| self.channel_positions[i]).collect())
    }
}

/// Multichannel voltage trace in microvolts, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub sample_rate_hz: f64,
    pub n_channels: usize,
    pub n_frames: usize,
    pub samples: Vec<f32>,
    pub geometry: ProbeGeometry,
}

impl Recording {
    pub fn new(
        sample_rate_hz: f64,
        n_frames: usize,
        samples: Vec<f32>,
        geometry: ProbeGeometry,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Invalid(format!("sample rate {sample_rate_hz} must be positive")));
        }
        let n_channels = geometry.n_channels();
        if n_frames == 0 {
            return Err(Error::Invalid("recording must have at least one frame".into()));
        }
        if samples.len() != n_frames * n_channels {
            return Err(Error::SizeMismatch {
                expected: n_frames * n_channels,
                found: samples.len(),
            });
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            sample_rate_hz,
            n_channels,
            n_frames,
            samples,
            geometry,
        })
    }

    pub fn zeros(sample_rate_hz: f64, n_frames: usize, geometry: ProbeGeometry) -> Result<Self> {
        let n = n_frames * geometry.n_channels();
        Self::new(sample_rate_hz, n_frames, vec![0.0; n], geometry)
    }

    #[inline]
    pub fn get(&self, frame: usize, channel: usize) -> f32 {
        self.samples[frame * self.n_channels + channel]
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 / self.sample_rate_hz
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.samples
            .iter()
            .skip(channel)
            .step_by(self.n_channels)
            .map(|&v| v as f64)
            .collect()
    }

    pub fn set_channel(&mut self, channel: usize, values: &[f64]) {
        assert_eq!(values.len(), self.n_frames);
        let nc = self.n_channels;
        for (f, &v) in values.iter().enumerate() {
            self.samples[f * nc + channel] = v as f32;
        }
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, keep: &[usize]) -> Result<Self> {
        let geometry = self.geometry.subset(keep)?;
        let mut samples = Vec::with_capacity(self.n_frames * keep.len());
        for f in 0..self.n_frames {
            let row = &self.samples[f * self.n_channels..(f + 1) * self.n_channels];
            samples.extend(keep.iter().map(|&c| row[c]));
        }
        Recording::new(self.sample_rate_hz, self.n_frames, samples, geometry)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordingSidecar {
    sample_rate_hz: f64,
    n_channels: usize,
    n_frames: usize,
    channel_positions: Vec<[f64; 2]>,
    dtype: String,
}

/// `<name>.bin` and `<name>.json` for any of `name`, `name.bin` or `name.json`.
pub fn binary_pair(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("bin"), path.with_extension("json"))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub(crate) fn write_f32_le(path: &Path, values: impl IntoIterator<Item = f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 16, file);
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f32_le(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len() as usize;
    if len % 4 != 0 || len / 4 != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: len / 4,
        });
    }
    let mut r = BufReader::with_capacity(1 << 16, file);
    let mut out = Vec::with_capacity(expected);
    let mut buf = vec![0u8; 1 << 16];
    let mut remaining = len;
    while remaining > 0 {
        let n = remaining.min(buf.len());
        r.read_exact(&mut buf[..n]).map_err(|e| Error::io(path, e))?;
        out.extend(
            buf[..n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        );
        remaining -= n;
    }
    Ok(out)
}

pub fn read_recording(path: &Path) -> Result<Recording> {
    let (bin, json) = binary_pair(path);
    if !json.exists() {
        return Err(Error::MissingSidecar(json));
    }
    let meta: RecordingSidecar = read_json(&json)?;
    if meta.dtype != DTYPE_F32LE {
        return Err(Error::Parse(format!("unsupported dtype {:?}", meta.dtype)));
    }
    if meta.channel_positions.len() != meta.n_channels {
        return Err(Error::Parse(format!(
            "sidecar lists {} positions for {} channels",
            meta.channel_positions.len(),
            meta.n_channels
        )));
    }
    let samples = read_f32_le(&bin, meta.n_frames * meta.n_channels)?;
    let geometry = ProbeGeometry::new(meta.channel_positions)?;
    Recording::new(meta.sample_rate_hz, meta.n_frames, samples, geometry)
}

pub fn write_recording(rec: &Recording, path: &Path) -> Result<()> {
    if let Some(i) = rec.samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let (bin, json) = binary_pair(path);
    write_f32_le(&bin, rec.samples.iter().copied())?;
    write_json(
        &json,
        &RecordingSidecar {
            sample_rate_hz: rec.sample_rate_hz,
            n_channels: rec.n_channels,
            n_frames: rec.n_frames,
            channel_positions: rec.geometry.channel_positions.clone(),
            dtype: DTYPE_F32LE.into(),
        },
    )
}

/// A detected spike: frame index, peak channel and signed peak amplitude (µV).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub frame: usize,
    pub channel: usize,
    pub amplitude: f64,
}

pub fn write_events(events: &[SpikeEvent], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    for e in events {
        w.serialize(e).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_events(path: &Path) -> Result<Vec<SpikeEvent>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

/// Ground-truth spike frames per unit, plus optional templates kept in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub units: BTreeMap<u32, Vec<usize>>,
    pub templates: BTreeMap<u32, Array2<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GtRow {
    unit_id: i64,
    frame: i64,
}

impl GroundTruth {
    pub fn from_units(units: BTreeMap<u32, Vec<usize>>) -> Result<Self> {
        let gt = Self {
            units,
            templates: BTreeMap::new(),
        };
        gt.check_sorted()?;
        Ok(gt)
    }

    fn check_sorted(&self) -> Result<()> {
        for (u, frames) in &self.units {
            if frames.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Invalid(format!("unit {u} frames not strictly increasing")));
            }
        }
        Ok(())
    }

    pub fn validate(&self, n_frames: usize) -> Result<()> {
        self.check_sorted()?;
        for (u, frames) in &self.units {
            if let Some(&last) = frames.last() {
                if last >= n_frames {
                    return Err(Error::Invalid(format!(
                        "unit {u} frame {last} beyond recording of {n_frames} frames"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_spikes(&self) -> usize {
        self.units.values().map(Vec::len).sum()
    }

    /// All (frame, unit) pairs sorted by frame then unit.
    pub fn events(&self) -> Vec<(usize, u32)> {
        let mut out: Vec<(usize, u32)> = self
            .units
            .iter()
            .flat_map(|(&u, fs)| fs.iter().map(move |&f| (f, u)))
            .collect();
        out.sort_unstable();
        out
    }
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let headers = r.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["unit_id", "frame"] {
        return Err(Error::Parse(format!("expected header unit_id,frame, got {headers:?}")));
    }
    let mut units: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (line, row) in r.deserialize::<GtRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))?;
        if row.frame < 0 || row.unit_id < 0 || row.unit_id > u32::MAX as i64 {
            return Err(Error::Parse(format!(
                "row {}: negative or out-of-range value ({}, {})",
                line + 1,
                row.unit_id,
                row.frame
            )));
        }
        units.entry(row.unit_id as u32).or_default().push(row.frame as usize);
    }
    for frames in units.values_mut() {
        frames.sort_unstable();
    }
    GroundTruth::from_units(units)
}

pub fn write_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    w.write_record(["unit_id", "frame"]).map_err(|e| Error::Parse(e.to_string()))?;
    for (&u, frames) in &gt.units {
        for &f in frames {
            w.write_record([u.to_string(), f.to_string()])
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Spike frames with contiguous unit labels `0..n_units`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SortingResult {
    pub events: Vec<(usize, u32)>,
}

#[derive(Debug, Deserialize)]
struct SortRow {
    frame: usize,
    unit_label: u32,
}

impl SortingResult {
    /// Builds a result from arbitrary labels, renumbering them to `0..k` in
    /// increasing order of the original label and sorting by frame.
    pub fn from_assignments(frames: &[usize], labels: &[usize]) -> Result<Self> {
        if frames.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} frames vs {} labels",
                frames.len(),
                labels.len()
            )));
        }
        let mut distinct: Vec<usize> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let mut events: Vec<(usize, u32)> = frames
            .iter()
            .zip(labels)
            .map(|(&f, l)| (f, distinct.binary_search(l).unwrap() as u32))
            .collect();
        events.sort_unstable();
        Ok(Self { events })
    }

    pub fn n_units(&self) -> usize {
        self.events.iter().map(|e| e.1 as usize + 1).max().unwrap_or(0)
    }

    pub fn spike_trains(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &(f, l) in &self.events {
            out.entry(l).or_default().push(f);
        }
        for v in out.values_mut() {
            v.sort_unstable();
        }
        out
    }

    fn check_contiguous(&self) -> Result<()> {
        let k = self.n_units();
        let mut seen = vec![false; k];
        for &(_, l) in &self.events {
            seen[l as usize] = true;
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err(Error::Invalid("unit labels are not contiguous from 0".into()))
        }
    }
}

pub fn write_sorting(sr: &SortingResult, path: &Path) -> Result<()> {
    sr.check_contiguous()?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    w.write_record(["frame", "unit_label"]).map_err(|e| Error::Parse(e.to_string()))?;
    for &(f, l) in &sr.events {
        w.write_record([f.to_string(), l.to_string()])
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sorting(path: &Path) -> Result<SortingResult> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let mut events = Vec::new();
    for row in r.deserialize::<SortRow>() {
        let row = row.map_err(|e| Error::Parse(e.to_string()))?;
        events.push((row.frame, row.unit_label));
    }
    let sr = SortingResult { events };
    sr.check_contiguous()?;
    Ok(sr)
}

/// T×C voltage window around one event, channels ordered by distance from the peak channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformSnippet {
    pub values: Array2<f64>,
    pub channels: Vec<usize>,
    pub peak_channel_global: usize,
    pub event_frame: usize,
}

/// A batch of equally-shaped snippets with optional unit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetSet {
    pub t: usize,
    pub c: usize,
    pub snippets: Vec<WaveformSnippet>,
    pub labels: Option<Vec<u32>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnippetSidecar {
    n_snippets: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "C")]
    c: usize,
    dtype: String,
    event_frames: Vec<usize>,
    peak_channels: Vec<usize>,
    channels: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u32>>,
}

impl SnippetSet {
    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    pub fn values(&self) -> Vec<Array2<f64>> {
        self.snippets.iter().map(|s| s.values.clone()).collect()
    }
}

pub fn write_snippets(set: &SnippetSet, path: &Path) -> Result<()> {
    let (bin, json) = binary_pair(path);
    for s in &set.snippets {
        if s.values.dim() != (set.t, set.c) {
            return Err(Error::Shape(format!("snippet {:?} in a {}x{} set", s.values.dim(), set.t, set.c)));
        }
    }
    write_f32_le(
        &bin,
        set.snippets.iter().flat_map(|s| s.values.iter().map(|&v| v as f32)),
    )?;
    write_json(
        &json,
        &SnippetSidecar {
            n_snippets: set.len(),
            t: set.t,
            c: set.c,
            dtype: DTYPE_F32LE.into(),
            event_frames: set.snippets.iter().map(|s| s.event_frame).collect(),
            peak_channels: set.snippets.iter().map(|s| s.peak_channel_global).collect(),
            channels: set.snippets.iter().map(|s| s.channels.clone()).collect(),
            labels: set.labels.clone(),
        },
    )
}

pub fn read_snippets(path: &Path) -> Result<SnippetSet> {
    let (bin, json) = binary_pair(path);
    if !json.exists() {
        return Err(Error::MissingSidecar(json));
    }
    let meta: SnippetSidecar = read_json(&json)?;
    let n = meta.n_snippets;
    if meta.event_frames.len() != n || meta.peak_channels.len() != n || meta.channels.len() != n {
        return Err(Error::Parse("snippet sidecar arrays disagree with n_snippets".into()));
    }
    let raw = read_f32_le(&bin, n * meta.t * meta.c)?;
    let per = meta.t * meta.c;
    let mut snippets = Vec::with_capacity(n);
    for i in 0..n {
        let values = Array2::from_shape_vec(
            (meta.t, meta.c),
            raw[i * per..(i + 1) * per].iter().map(|&v| v as f64).collect(),
        )
        .map_err(|e| Error::Shape(e.to_string()))?;
        snippets.push(WaveformSnippet {
            values,
            channels: meta.channels[i].clone(),
            peak_channel_global: meta.peak_channels[i],
            event_frame: meta.event_frames[i],
        });
    }
    Ok(SnippetSet {
        t: meta.t,
        c: meta.c,
        snippets,
        labels: meta.labels,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixSidecar {
    n_rows: usize,
    n_cols: usize,
    dtype: String,
}

/// Dense row-major matrix as raw `f32` + sidecar (used for embeddings).
pub fn write_matrix(m: &Array2<f64>, path: &Path) -> Result<()> {
    let (bin, json) = binary_pair(path);
    if let Some(i) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    write_f32_le(&bin, m.iter().map(|&v| v as f32))?;
    write_json(
        &json,
        &MatrixSidecar {
            n_rows: m.nrows(),
            n_cols: m.ncols(),
            dtype: DTYPE_F32LE.into(),
        },
    )
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let (bin, json) = binary_pair(path);
    if !json.exists() {
        return Err(Error::MissingSidecar(json));
    }
    let meta: MatrixSidecar = read_json(&json)?;
    let raw = read_f32_le(&bin, meta.n_rows * meta.n_cols)?;
    Array2::from_shape_vec((meta.n_rows, meta.n_cols), raw.into_iter().map(f64::from).collect())
        .map_err(|e| Error::Shape(e.to_string()))
}
