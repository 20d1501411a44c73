//! Subcommands behind the `spikerep` binary.
//!
//! Every command reads its inputs from files, writes its artifacts into one
//! output directory and records a [`RunManifest`] there as `run.json`,
//! whether it succeeded or not. Inputs default to the conventional file
//! names inside the output directory, so a chain of commands sharing one
//! `--out` needs no further flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::Serialize;

use crate::cluster::{flatten_rows, gmm_assign, gmm_fit, gmm_fit_bic, pca_fit, pca_transform};
use crate::config::{ClusterMethod, EmbedMethod, PipelineConfig};
use crate::data::{
    read_ground_truth, read_matrix, read_recording, read_snippets, read_sorting, write_events,
    write_ground_truth, write_matrix, write_recording, write_snippets, write_sorting, Recording,
    SnippetSet, SortingResult, SpikeEvent,
};
use crate::dsp::{bandpass_in_place, detect, extract_snippets, ground_truth_events, remove_bad_channels};
use crate::error::{Error, Result};
use crate::eval::{ablation_report, protocol_ari, score_sorting};
use crate::model::{embed, load_checkpoint, save_checkpoint, train, ModelState};
use crate::rng;
use crate::synth::generate_recording;

pub const RECORDING: &str = "recording.bin";
pub const PREPROCESSED: &str = "preprocessed.bin";
pub const GROUND_TRUTH: &str = "ground_truth.csv";
pub const EVENTS: &str = "events.csv";
pub const SNIPPETS: &str = "snippets.bin";
pub const CHECKPOINT: &str = "model.ckpt";
pub const EMBEDDINGS: &str = "embeddings.bin";
pub const SORTING: &str = "sorting.csv";
pub const MANIFEST: &str = "run.json";

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SPIKEREP_THREADS";

/// Radius around a unit's peak channel searched for the anchor channel when
/// snippets are cut at ground-truth spike times.
pub const GT_ANCHOR_RADIUS_UM: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Preprocess,
    Detect,
    Extract,
    Train,
    Embed,
    Sort,
    Eval,
    Ablate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::Detect => "detect",
            Command::Extract => "extract",
            Command::Train => "train",
            Command::Embed => "embed",
            Command::Sort => "sort",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
        }
    }
}

/// Optional input overrides. Unset paths fall back to the conventional
/// names inside the output directory.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub recording: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub snippets: Option<PathBuf>,
    pub test_snippets: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub sorting: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PipelineConfig,
    pub seed: u64,
    pub use_dae: bool,
    pub out: PathBuf,
    pub inputs: Inputs,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub status: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Derived per-stage seeds actually used.
    pub seeds: BTreeMap<String, u64>,
    pub use_dae: bool,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub stages: Vec<StageTiming>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
}

struct Run<'a> {
    opts: &'a RunOptions,
    manifest: RunManifest,
}

impl<'a> Run<'a> {
    fn cfg(&self) -> &PipelineConfig {
        &self.opts.config
    }

    fn seed(&mut self, name: &str) -> u64 {
        let s = rng::named(self.opts.seed, name);
        self.manifest.seeds.insert(name.to_string(), s);
        s
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let r = f(self);
        self.manifest.stages.push(StageTiming {
            stage: name.to_string(),
            wall_s: t0.elapsed().as_secs_f64(),
        });
        r
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.opts.out.join(name);
        self.manifest.outputs.push(p.clone());
        p
    }

    /// Records the written companion sidecar of a binary artifact.
    fn output_pair(&mut self, name: &str) -> PathBuf {
        let p = self.output(name);
        let (_, json) = crate::data::binary_pair(&p);
        self.manifest.outputs.push(json);
        p
    }

    fn input(&mut self, key: &str, given: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let p = given.clone().unwrap_or_else(|| self.opts.out.join(default));
        if !p.exists() {
            return Err(Error::Invalid(format!("missing input {key}: {}", p.display())));
        }
        self.manifest.inputs.insert(key.to_string(), p.clone());
        Ok(p)
    }

    /// The preprocessed recording when present, otherwise the raw one.
    fn recording_input(&mut self) -> Result<PathBuf> {
        if self.opts.inputs.recording.is_none() && self.opts.out.join(PREPROCESSED).exists() {
            return self.input("recording", &None, PREPROCESSED);
        }
        let given = self.opts.inputs.recording.clone();
        self.input("recording", &given, RECORDING)
    }

    fn load_model(&mut self) -> Result<ModelState> {
        let given = self.opts.inputs.checkpoint.clone();
        let p = self.input("checkpoint", &given, CHECKPOINT)?;
        let state = load_checkpoint(&p)?;
        if self.opts.use_dae && state.config.alpha == 0.0 {
            return Err(Error::Config("--use-dae needs a checkpoint trained with a denoising term (alpha > 0)".into()));
        }
        if (state.config.snippet_t, state.config.snippet_c) != (self.cfg().snippet_t, self.cfg().snippet_c) {
            return Err(Error::Config("checkpoint snippet shape differs from the config".into()));
        }
        Ok(state)
    }
}

/// Caps the global worker pool at `SPIKEREP_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    #[cfg(feature = "parallel")]
    {
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

/// Runs one subcommand and writes `run.json`. The manifest is returned
/// alongside the command's result.
pub fn run(cmd: Command, opts: &RunOptions) -> (RunManifest, Result<()>) {
    let mut run = Run {
        opts,
        manifest: RunManifest {
            subcommand: cmd.name().to_string(),
            status: "running".into(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: opts.config.to_json(),
            seed: opts.seed,
            seeds: BTreeMap::new(),
            use_dae: opts.use_dae,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            stages: Vec::new(),
            error: None,
        },
    };
    let result = std::fs::create_dir_all(&opts.out)
        .map_err(|e| Error::io(&opts.out, e))
        .and_then(|_| opts.config.validate())
        .and_then(|_| dispatch(cmd, &mut run));
    let mut manifest = run.manifest;
    match &result {
        Ok(()) => manifest.status = "ok".into(),
        Err(e) => {
            manifest.status = "error".into();
            manifest.error = Some(ErrorReport {
                kind: e.kind().to_string(),
                message: e.to_string(),
            });
        }
    }
    let path = opts.out.join(MANIFEST);
    let written = std::fs::create_dir_all(&opts.out)
        .map_err(|e| Error::io(&opts.out, e))
        .and_then(|_| write_json_pretty(&path, &manifest));
    let result = result.and(written);
    (manifest, result)
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dispatch(cmd: Command, run: &mut Run) -> Result<()> {
    if run.opts.use_dae && run.cfg().embed_method == EmbedMethod::Pca && matches!(cmd, Command::Embed | Command::Sort) {
        return Err(Error::Config("--use-dae requires embed_method \"model\"".into()));
    }
    match cmd {
        Command::Synth => cmd_synth(run),
        Command::Preprocess => cmd_preprocess(run),
        Command::Detect => cmd_detect(run),
        Command::Extract => cmd_extract(run),
        Command::Train => cmd_train(run),
        Command::Embed => cmd_embed(run),
        Command::Sort => cmd_sort(run),
        Command::Eval => cmd_eval(run),
        Command::Ablate => cmd_ablate(run),
    }
}

fn cmd_synth(run: &mut Run) -> Result<()> {
    let seed = run.seed("synth");
    let spec = run.cfg().synth_spec(seed);
    let (rec, gt) = run.stage("generate", |_| generate_recording(&spec))?;
    let rp = run.output_pair(RECORDING);
    let gp = run.output(GROUND_TRUTH);
    run.stage("write", |_| {
        write_recording(&rec, &rp)?;
        write_ground_truth(&gt, &gp)
    })
}

fn preprocess(run: &mut Run, mut rec: Recording) -> Result<(Recording, Vec<usize>)> {
    let cfg = run.cfg().clone();
    let mut removed = Vec::new();
    if cfg.remove_bad_channels {
        let (r, bad) = run.stage("bad_channels", |_| remove_bad_channels(&rec, cfg.bad_channel_factor))?;
        rec = r;
        removed = bad;
    }
    if cfg.bandpass_enabled {
        let spec = cfg.filter_spec();
        run.stage("bandpass", |_| bandpass_in_place(&mut rec, &spec))?;
    }
    Ok((rec, removed))
}

fn cmd_preprocess(run: &mut Run) -> Result<()> {
    let given = run.opts.inputs.recording.clone();
    let p = run.input("recording", &given, RECORDING)?;
    let rec = run.stage("read", |_| read_recording(&p))?;
    let (rec, removed) = preprocess(run, rec)?;
    let out = run.output_pair(PREPROCESSED);
    let removed_path = run.output("removed_channels.json");
    run.stage("write", |_| {
        write_recording(&rec, &out)?;
        write_json_pretty(&removed_path, &removed)
    })
}

fn detect_events(run: &mut Run, rec: &Recording) -> Result<Vec<SpikeEvent>> {
    let spec = run.cfg().detection_spec(rec.sample_rate_hz);
    run.stage("detect", |_| Ok(detect(rec, &spec)))
}

fn cmd_detect(run: &mut Run) -> Result<()> {
    let p = run.recording_input()?;
    let rec = run.stage("read", |_| read_recording(&p))?;
    let events = detect_events(run, &rec)?;
    let out = run.output(EVENTS);
    write_events(&events, &out)
}

fn cut(run: &mut Run, rec: &Recording, events: &[SpikeEvent], labels: Option<Vec<u32>>) -> Result<SnippetSet> {
    let (t, c) = (run.cfg().snippet_t, run.cfg().snippet_c);
    let ex = run.stage("extract", |_| extract_snippets(rec, events, t, c))?;
    let labels = labels.map(|l| ex.kept.iter().map(|&i| l[i]).collect());
    Ok(SnippetSet {
        t,
        c,
        snippets: ex.snippets,
        labels,
    })
}

/// Cuts snippets at detected events, or at ground-truth spike times (with
/// unit labels) when a ground-truth file is supplied.
fn cmd_extract(run: &mut Run) -> Result<()> {
    let p = run.recording_input()?;
    let rec = run.stage("read", |_| read_recording(&p))?;
    let set = if let Some(gt_path) = run.opts.inputs.ground_truth.clone() {
        let gp = run.input("ground_truth", &Some(gt_path), GROUND_TRUTH)?;
        let gt = read_ground_truth(&gp)?;
        let (events, labels) = run.stage("anchor", |_| ground_truth_events(&rec, &gt, GT_ANCHOR_RADIUS_UM))?;
        cut(run, &rec, &events, Some(labels))?
    } else {
        let given = run.opts.inputs.events.clone();
        let ep = run.input("events", &given, EVENTS)?;
        let events = crate::data::read_events(&ep)?;
        cut(run, &rec, &events, None)?
    };
    let out = run.output_pair(SNIPPETS);
    write_snippets(&set, &out)
}

fn snippet_input(run: &mut Run) -> Result<SnippetSet> {
    let given = run.opts.inputs.snippets.clone();
    let p = run.input("snippets", &given, SNIPPETS)?;
    let set = read_snippets(&p)?;
    if (set.t, set.c) != (run.cfg().snippet_t, run.cfg().snippet_c) {
        return Err(Error::Config(format!(
            "snippets are {}x{} but the config expects {}x{}",
            set.t,
            set.c,
            run.cfg().snippet_t,
            run.cfg().snippet_c
        )));
    }
    Ok(set)
}

/// Trains from scratch, or resumes when a checkpoint is given explicitly.
fn cmd_train(run: &mut Run) -> Result<()> {
    let set = snippet_input(run)?;
    let init = run.seed("init");
    let train_seed = run.seed("train");
    let cfg = run.cfg().clone();
    let mut state = match run.opts.inputs.checkpoint.clone() {
        Some(p) => {
            let p = run.input("checkpoint", &Some(p), CHECKPOINT)?;
            load_checkpoint(&p)?
        }
        None => ModelState::new(&cfg.model_config(), init)?,
    };
    let values = set.values();
    let tc = cfg.train_config(train_seed);
    let aug = cfg.augment_spec();
    let logs = run.stage("train", |_| train(&mut state, &values, &aug, &tc, |_| {}))?;
    let ckpt = run.output(CHECKPOINT);
    let (_, manifest) = crate::model::checkpoint_paths(&ckpt);
    run.manifest.outputs.push(manifest);
    save_checkpoint(&state, &ckpt)?;
    let log_path = run.output("train_log.csv");
    let mut w = csv::Writer::from_path(&log_path).map_err(|e| Error::Parse(e.to_string()))?;
    for l in &logs {
        w.serialize(l).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&log_path, e))
}

/// Representations of `values` according to the configured method.
fn represent(run: &mut Run, values: &[Array2<f64>]) -> Result<Array2<f64>> {
    if values.is_empty() {
        return Err(Error::Invalid("no snippets to embed".into()));
    }
    match run.cfg().embed_method {
        EmbedMethod::Model => {
            let state = run.load_model()?;
            let use_dae = run.opts.use_dae;
            run.stage("embed", |_| embed(&state, values, use_dae))
        }
        EmbedMethod::Pca => {
            let dims = run.cfg().pca_dims;
            run.stage("embed", |_| {
                let x = flatten_rows(values);
                let m = pca_fit(&x, dims)?;
                pca_transform(&m, &x)
            })
        }
    }
}

fn cmd_embed(run: &mut Run) -> Result<()> {
    let set = snippet_input(run)?;
    let reps = represent(run, &set.values())?;
    let out = run.output_pair(EMBEDDINGS);
    write_matrix(&reps, &out)
}

fn cluster(run: &mut Run, reps: &Array2<f64>) -> Result<Vec<usize>> {
    let seed = run.seed("cluster");
    let cfg = run.cfg().clone();
    let opts = cfg.gmm_options(seed);
    run.stage("cluster", |_| {
        let model = match cfg.cluster_method {
            ClusterMethod::Gmm => gmm_fit(reps, cfg.gmm_components.min(reps.nrows()), &opts)?,
            ClusterMethod::GmmBic => gmm_fit_bic(reps, cfg.gmm_k_max.min(reps.nrows()), &opts)?,
        };
        gmm_assign(&model, reps)
    })
}

fn cmd_sort(run: &mut Run) -> Result<()> {
    let given = run.opts.inputs.recording.clone();
    let p = run.input("recording", &given, RECORDING)?;
    let rec = run.stage("read", |_| read_recording(&p))?;
    let (rec, _) = preprocess(run, rec)?;
    let events = detect_events(run, &rec)?;
    let set = cut(run, &rec, &events, None)?;
    let reps = represent(run, &set.values())?;
    let labels = cluster(run, &reps)?;
    let frames: Vec<usize> = set.snippets.iter().map(|s| s.event_frame).collect();
    let sr = SortingResult::from_assignments(&frames, &labels)?;
    let ev_path = run.output(EVENTS);
    write_events(&events, &ev_path)?;
    let emb_path = run.output_pair(EMBEDDINGS);
    write_matrix(&reps, &emb_path)?;
    let out = run.output(SORTING);
    write_sorting(&sr, &out)
}

/// Scores a sorting against ground truth. When labelled snippets and their
/// embeddings are available, the unit-sampling ARI protocol is run as well.
fn cmd_eval(run: &mut Run) -> Result<()> {
    let cfg = run.cfg().clone();
    let mut did = false;
    let sorting_given = run.opts.inputs.sorting.clone();
    let sorting_path = sorting_given.clone().unwrap_or_else(|| run.opts.out.join(SORTING));
    if sorting_given.is_some() || sorting_path.exists() {
        let sp = run.input("sorting", &sorting_given, SORTING)?;
        let gt_given = run.opts.inputs.ground_truth.clone();
        let gp = run.input("ground_truth", &gt_given, GROUND_TRUTH)?;
        let rec_given = run.opts.inputs.recording.clone();
        let rp = run.input("recording", &rec_given, RECORDING)?;
        let (sr, gt, rec) = (read_sorting(&sp)?, read_ground_truth(&gp)?, read_recording(&rp)?);
        let delta = cfg.match_delta_samples(rec.sample_rate_hz);
        let report = run.stage("score", |_| score_sorting(&gt, &sr, delta, cfg.snr_floor, &rec))?;
        let j = run.output("eval.json");
        write_json_pretty(&j, &report)?;
        let t = run.output("eval.txt");
        write_text(&t, &report.to_table())?;
        did = true;
    }
    let emb_given = run.opts.inputs.embeddings.clone();
    let snip_given = run.opts.inputs.snippets.clone();
    let emb_path = emb_given.clone().unwrap_or_else(|| run.opts.out.join(EMBEDDINGS));
    let snip_path = snip_given.clone().unwrap_or_else(|| run.opts.out.join(SNIPPETS));
    if emb_path.exists() && snip_path.exists() {
        let set = read_snippets(&snip_path)?;
        if let Some(labels) = set.labels.clone() {
            let ep = run.input("embeddings", &emb_given, EMBEDDINGS)?;
            run.input("snippets", &snip_given, SNIPPETS)?;
            let reps = read_matrix(&ep)?;
            if reps.nrows() != labels.len() {
                return Err(Error::Shape(format!("{} embeddings for {} labelled snippets", reps.nrows(), labels.len())));
            }
            let pool = unit_pool(&reps, &labels);
            let seed = run.seed("protocol");
            let seeds: Vec<u64> = (0..cfg.protocol_seeds as u64).map(|i| rng::mix(seed, &[i])).collect();
            let opts = cfg.gmm_options(0);
            let n_units = cfg.protocol_n_units.min(pool.len());
            let res = run.stage("protocol", |_| protocol_ari(&pool, n_units, &seeds, cfg.protocol_gmm_runs, &opts))?;
            let j = run.output("protocol.json");
            write_json_pretty(&j, &res)?;
            let t = run.output("protocol.txt");
            let name = match cfg.embed_method {
                EmbedMethod::Model if run.opts.use_dae => "model+dae",
                EmbedMethod::Model => "model",
                EmbedMethod::Pca => "pca",
            };
            write_text(&t, &res.to_table(name))?;
            did = true;
        }
    }
    if !did {
        return Err(Error::Invalid(
            "nothing to evaluate: need sorting.csv with ground truth, or labelled snippets with embeddings".into(),
        ));
    }
    Ok(())
}

/// Groups representation rows by unit label, in label order.
pub fn unit_pool(reps: &Array2<f64>, labels: &[u32]) -> Vec<Array2<f64>> {
    let mut by: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by.entry(l).or_default().push(i);
    }
    by.values().map(|rows| reps.select(ndarray::Axis(0), rows)).collect()
}

/// Centroid shift of test representations relative to training ones, with
/// and without the denoiser in front of the encoder.
fn cmd_ablate(run: &mut Run) -> Result<()> {
    let cfg = run.cfg().clone();
    let train_set = snippet_input(run)?;
    let given = run.opts.inputs.test_snippets.clone();
    let tp = run.input("test_snippets", &given, "test_snippets.bin")?;
    let test_set = read_snippets(&tp)?;
    let state = run.load_model()?;
    let seed = run.seed("ablate");
    let opts = cfg.gmm_options(seed);
    let (train_v, test_v) = (train_set.values(), test_set.values());
    let train_reps = run.stage("embed_train", |_| embed(&state, &train_v, false))?;
    let mut reports = BTreeMap::new();
    for use_dae in [false, true] {
        let test_reps = run.stage(if use_dae { "embed_test_dae" } else { "embed_test" }, |_| {
            embed(&state, &test_v, use_dae)
        })?;
        let k = cfg.gmm_components;
        let rep = ablation_report(
            &train_reps,
            &test_reps,
            test_set.labels.as_deref(),
            k,
            cfg.ablation_pca_dims,
            &opts,
        )?;
        reports.insert(if use_dae { "with_dae" } else { "without_dae" }, rep);
    }
    let j = run.output("ablation.json");
    write_json_pretty(&j, &reports)?;
    let mut text = format!("{:<12} {:>10} {:>10} {:>8}\n", "variant", "distance", "silhouette", "ari");
    for (name, r) in &reports {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        text += &format!(
            "{:<12} {:>10.4} {:>10} {:>8}\n",
            name,
            r.centroid_distance,
            opt(r.silhouette),
            opt(r.ari)
        );
    }
    let t = run.output("ablation.txt");
    write_text(&t, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> PipelineConfig {
        PipelineConfig {
            synth_n_units: 3,
            synth_rows: 6,
            synth_cols: 2,
            synth_duration_s: 4.0,
            synth_noise_std_uv: 0.0,
            remove_bad_channels: false,
            bandpass_enabled: false,
            snippet_t: 31,
            snippet_c: 5,
            aug_crop_channels: 3,
            aug_temporal_jitter_max: 2,
            aug_collision_offset_max: 5,
            embed_method: EmbedMethod::Pca,
            gmm_components: 3,
            ..PipelineConfig::default()
        }
    }

    fn opts(dir: &Path) -> RunOptions {
        RunOptions {
            config: tiny_config(),
            seed: 7,
            use_dae: false,
            out: dir.to_path_buf(),
            inputs: Inputs::default(),
        }
    }

    #[test]
    fn manifest_written_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let (m, r) = run(Command::Detect, &opts(dir.path()));
        assert!(r.is_err());
        assert_eq!(m.status, "error");
        let text = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["error"]["kind"], "invalid");
    }

    #[test]
    fn chained_commands_share_the_output_directory() {
        let dir = tempfile::tempdir().unwrap();
        let o = opts(dir.path());
        for cmd in [Command::Synth, Command::Detect, Command::Extract, Command::Embed] {
            let (m, r) = run(cmd, &o);
            r.unwrap();
            assert!(m.outputs.iter().all(|p| p.exists()), "{:?}", m.outputs);
        }
        let set = read_snippets(&dir.path().join(SNIPPETS)).unwrap();
        assert_eq!(read_matrix(&dir.path().join(EMBEDDINGS)).unwrap().nrows(), set.len());
    }

    #[test]
    fn use_dae_conflicts_with_pca() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = opts(dir.path());
        run(Command::Synth, &o).1.unwrap();
        o.use_dae = true;
        let (m, r) = run(Command::Sort, &o);
        assert!(matches!(r, Err(Error::Config(_))));
        assert_eq!(m.error.unwrap().kind, "config");
    }

    #[test]
    fn unit_pool_groups_rows() {
        let reps = ndarray::array![[0.0], [1.0], [2.0], [3.0]];
        let pool = unit_pool(&reps, &[5, 1, 5, 1]);
        assert_eq!(pool[0], ndarray::array![[1.0], [3.0]]);
        assert_eq!(pool[1], ndarray::array![[0.0], [2.0]]);
    }
}
