//! Episode recording, loading, pruning and scoring.
//!
//! Layout of one episode directory:
//!
//! ```text
//! meta.json        task, instruction, scene, seed, config hash, run boundaries
//! actions.csv      t,vx,vy,vz,dvx,dvy,dvz with four decimals
//! states.jsonl     one full-precision sample record per line
//! frames/NNNNNN.png
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::actuation::{SafetyEnvelope, VoltageTriple};
use crate::render::SceneSpec;
use crate::robot::{self, RobotModel, RobotState, SimConfig, SimError};

pub const META_FILE: &str = "meta.json";
pub const ACTIONS_FILE: &str = "actions.csv";
pub const STATES_FILE: &str = "states.jsonl";
pub const FRAMES_DIR: &str = "frames";
pub const DEFAULT_KEEP_N: usize = 2;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("sample t={t} does not follow t={prev}")]
    OutOfOrder { prev: u64, t: u64 },
    #[error("invalid episode: {0}")]
    Invalid(String),
    #[error("length mismatch: {0} predictions vs {1} ground truth")]
    LengthMismatch(usize, usize),
    #[error("replay failed: {0}")]
    Replay(#[from] SimError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EpisodeError + '_ {
    move |source| EpisodeError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    GridMarker,
    WhiteLesion,
    YellowLesion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub task_category: TaskCategory,
    pub instruction: String,
    pub sample_rate_hz: f64,
    pub scene: SceneSpec,
    pub seed: u64,
    pub config_hash: String,
    /// Step indices of samples whose predecessor was pruned away.
    #[serde(default)]
    pub run_boundaries: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruned_keep_n: Option<usize>,
}

impl EpisodeMeta {
    pub fn new(task_category: TaskCategory, instruction: impl Into<String>, scene: SceneSpec, seed: u64, config_hash: String) -> Self {
        Self {
            task_category,
            instruction: instruction.into(),
            sample_rate_hz: robot::CONTROL_RATE_HZ,
            scene,
            seed,
            config_hash,
            run_boundaries: Vec::new(),
            pruned_keep_n: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: u64,
    pub frame_ref: String,
    pub state: RobotState,
    pub v: VoltageTriple,
    pub dv: VoltageTriple,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub meta: EpisodeMeta,
    pub samples: Vec<Sample>,
}

/// Hex SHA-256 of a value's JSON encoding.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub fn frame_name(t: u64) -> String {
    format!("{FRAMES_DIR}/{t:06}.png")
}

impl Episode {
    /// Structural checks that need no filesystem access.
    pub fn validate(&self) -> Result<(), EpisodeError> {
        let bad = |m: String| Err(EpisodeError::Invalid(m));
        if self.samples.is_empty() {
            return bad("no samples".into());
        }
        let env = SafetyEnvelope::default();
        let boundaries: BTreeSet<u64> = self.meta.run_boundaries.iter().copied().collect();
        for s in &self.samples {
            if !env.contains(&s.v) || !s.v.is_finite() || !s.dv.is_finite() {
                return bad(format!("t={}: voltage outside the safety envelope", s.t));
            }
            if s.state.v != s.v {
                return bad(format!("t={}: state voltage disagrees with the actions table", s.t));
            }
        }
        for w in self.samples.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.t <= a.t {
                return Err(EpisodeError::OutOfOrder { prev: a.t, t: b.t });
            }
            if b.t != a.t + 1 && !boundaries.contains(&b.t) {
                return bad(format!("gap before t={} not marked as a run boundary", b.t));
            }
            // pruned samples all had dv = 0, so this holds across boundaries too
            if (b.v - a.v).snapped() != b.dv {
                return bad(format!("t={}: dv inconsistent with consecutive voltages", b.t));
            }
        }
        Ok(())
    }

    pub fn dvs(&self) -> Vec<VoltageTriple> {
        self.samples.iter().map(|s| s.dv).collect()
    }
}

/// Single-writer recording sink. Frames go to disk as they arrive; the
/// tables are written on [`EpisodeWriter::finalize`].
#[derive(Debug)]
pub struct EpisodeWriter {
    dir: PathBuf,
    meta: EpisodeMeta,
    samples: Vec<Sample>,
}

impl EpisodeWriter {
    pub fn create(dir: impl Into<PathBuf>, meta: EpisodeMeta) -> Result<Self, EpisodeError> {
        let dir = dir.into();
        let frames = dir.join(FRAMES_DIR);
        fs::create_dir_all(&frames).map_err(io_err(&frames))?;
        Ok(Self { dir, meta, samples: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn append(&mut self, state: &RobotState, dv: VoltageTriple, frame_png: &[u8]) -> Result<(), EpisodeError> {
        if let Some(last) = self.samples.last() {
            if state.t <= last.t {
                return Err(EpisodeError::OutOfOrder { prev: last.t, t: state.t });
            }
        }
        let frame_ref = frame_name(state.t);
        let path = self.dir.join(&frame_ref);
        fs::write(&path, frame_png).map_err(io_err(&path))?;
        self.samples.push(Sample { t: state.t, frame_ref, state: state.clone(), v: state.v, dv });
        Ok(())
    }

    pub fn finalize(self) -> Result<Episode, EpisodeError> {
        let ep = Episode { meta: self.meta, samples: self.samples };
        ep.validate()?;
        write_tables(&self.dir, &ep)?;
        Ok(ep)
    }
}

fn write_tables(dir: &Path, ep: &Episode) -> Result<(), EpisodeError> {
    let meta_path = dir.join(META_FILE);
    let meta = serde_json::to_vec_pretty(&ep.meta).map_err(|source| EpisodeError::Json { path: meta_path.clone(), source })?;
    fs::write(&meta_path, meta).map_err(io_err(&meta_path))?;

    let actions_path = dir.join(ACTIONS_FILE);
    let csv_err = |source| EpisodeError::Csv { path: actions_path.clone(), source };
    let mut w = csv::Writer::from_path(&actions_path).map_err(csv_err)?;
    w.write_record(["t", "vx", "vy", "vz", "dvx", "dvy", "dvz"]).map_err(csv_err)?;
    for s in &ep.samples {
        let mut row = vec![s.t.to_string()];
        row.extend(s.v.to_array().iter().chain(s.dv.to_array().iter()).map(|x| format!("{x:.4}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&actions_path))?;

    let states_path = dir.join(STATES_FILE);
    let file = fs::File::create(&states_path).map_err(io_err(&states_path))?;
    let mut out = BufWriter::new(file);
    for s in &ep.samples {
        serde_json::to_writer(&mut out, s).map_err(|source| EpisodeError::Json { path: states_path.clone(), source })?;
        out.write_all(b"\n").map_err(io_err(&states_path))?;
    }
    out.flush().map_err(io_err(&states_path))
}

#[derive(Debug, Deserialize)]
struct ActionRow {
    t: u64,
    vx: f64,
    vy: f64,
    vz: f64,
    dvx: f64,
    dvy: f64,
    dvz: f64,
}

/// Loads an episode and cross-checks the actions table against the state log.
pub fn load_episode(dir: &Path) -> Result<Episode, EpisodeError> {
    let meta_path = dir.join(META_FILE);
    let meta_bytes = fs::read(&meta_path).map_err(io_err(&meta_path))?;
    let meta: EpisodeMeta = serde_json::from_slice(&meta_bytes).map_err(|source| EpisodeError::Json { path: meta_path, source })?;

    let states_path = dir.join(STATES_FILE);
    let file = fs::File::open(&states_path).map_err(io_err(&states_path))?;
    let mut samples = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(&states_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|source| EpisodeError::Json { path: states_path.clone(), source })?;
        samples.push(s);
    }

    let actions_path = dir.join(ACTIONS_FILE);
    let mut reader = csv::Reader::from_path(&actions_path).map_err(|source| EpisodeError::Csv { path: actions_path.clone(), source })?;
    let mut n = 0;
    for row in reader.deserialize::<ActionRow>() {
        let row = row.map_err(|source| EpisodeError::Csv { path: actions_path.clone(), source })?;
        let s = samples.get(n).ok_or_else(|| EpisodeError::Invalid("actions table longer than state log".into()))?;
        let v = VoltageTriple::new(row.vx, row.vy, row.vz);
        let dv = VoltageTriple::new(row.dvx, row.dvy, row.dvz);
        if row.t != s.t || v != s.v || dv != s.dv {
            return Err(EpisodeError::Invalid(format!("actions row t={} disagrees with state log", row.t)));
        }
        n += 1;
    }
    if n != samples.len() {
        return Err(EpisodeError::Invalid("actions table shorter than state log".into()));
    }
    let ep = Episode { meta, samples };
    ep.validate()?;
    Ok(ep)
}

/// Loads and additionally checks that every frame file exists.
pub fn validate_episode_dir(dir: &Path) -> Result<Episode, EpisodeError> {
    let ep = load_episode(dir)?;
    for s in &ep.samples {
        let p = dir.join(&s.frame_ref);
        if !p.is_file() {
            return Err(EpisodeError::Invalid(format!("missing frame {}", p.display())));
        }
    }
    Ok(ep)
}

/// Drops redundant samples from runs of zero increments, keeping the first
/// `keep_n` of each run. A run that reaches the final sample keeps its first
/// `keep_n - 1` samples plus the final one. The first and last samples are
/// always kept.
pub fn prune_static(ep: &Episode, keep_n: usize) -> Result<Episode, EpisodeError> {
    if keep_n < 2 {
        return Err(EpisodeError::Invalid("keep_n must be at least 2".into()));
    }
    let n = ep.samples.len();
    let mut keep = vec![true; n];
    let mut i = 0;
    while i < n {
        if !ep.samples[i].dv.is_zero() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && ep.samples[i].dv.is_zero() {
            i += 1;
        }
        let end = i;
        if end - start > keep_n {
            let kept_head = if end == n { keep_n - 1 } else { keep_n };
            for k in keep.iter_mut().take(end).skip(start + kept_head) {
                *k = false;
            }
        }
    }
    keep[0] = true;
    keep[n - 1] = true;

    let mut boundaries: BTreeSet<u64> = ep.meta.run_boundaries.iter().copied().collect();
    let mut samples = Vec::with_capacity(n);
    let mut dropped_before = false;
    for (s, k) in ep.samples.iter().zip(&keep) {
        if *k {
            if dropped_before {
                boundaries.insert(s.t);
            }
            samples.push(s.clone());
            dropped_before = false;
        } else {
            dropped_before = true;
        }
    }
    let mut meta = ep.meta.clone();
    meta.run_boundaries = boundaries.into_iter().collect();
    meta.pruned_keep_n = Some(keep_n);
    Ok(Episode { meta, samples })
}

/// Prunes the episode in `src` into `dst`, copying only retained frames.
pub fn prune_episode_dir(src: &Path, dst: &Path, keep_n: usize) -> Result<Episode, EpisodeError> {
    let ep = validate_episode_dir(src)?;
    let pruned = prune_static(&ep, keep_n)?;
    let frames = dst.join(FRAMES_DIR);
    fs::create_dir_all(&frames).map_err(io_err(&frames))?;
    for s in &pruned.samples {
        let to = dst.join(&s.frame_ref);
        fs::copy(src.join(&s.frame_ref), &to).map_err(io_err(&to))?;
    }
    write_tables(dst, &pruned)?;
    Ok(pruned)
}

/// Re-feeds the increment column into the simulator starting from the first
/// sample's state. Steps removed by pruning are replayed as zero increments.
pub fn replay(ep: &Episode, model: &RobotModel, cfg: &SimConfig) -> Result<RobotState, EpisodeError> {
    ep.validate()?;
    let mut state = ep.samples[0].state.clone();
    for s in &ep.samples[1..] {
        while state.t + 1 < s.t {
            state = robot::step(&state, state.v, cfg, model)?;
        }
        let v = (state.v + s.dv).snapped();
        state = robot::step(&state, v, cfg, model)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse_x: f64,
    pub mse_y: f64,
    pub mse_z: f64,
    pub mse_overall: f64,
    pub n: usize,
}

impl MetricsReport {
    pub const HEADER: &'static str = "motion,mse_x,mse_y,mse_z,overall";

    pub fn row(&self, motion: &str) -> String {
        format!("{motion},{},{},{},{}", self.mse_x, self.mse_y, self.mse_z, self.mse_overall)
    }
}

pub fn mse(pred: &[VoltageTriple], truth: &[VoltageTriple]) -> Result<MetricsReport, EpisodeError> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(EpisodeError::LengthMismatch(pred.len(), truth.len()));
    }
    let mut acc = [0.0; 3];
    for (p, t) in pred.iter().zip(truth) {
        let d = (*p - *t).to_array();
        for a in 0..3 {
            acc[a] += d[a] * d[a];
        }
    }
    let n = pred.len() as f64;
    let [mse_x, mse_y, mse_z] = acc.map(|s| s / n);
    Ok(MetricsReport { mse_x, mse_y, mse_z, mse_overall: (mse_x + mse_y + mse_z) / 3.0, n: pred.len() })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub episodes: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub episodes: usize,
    pub total_pairs: usize,
    pub per_category: BTreeMap<TaskCategory, CategoryCount>,
    pub corrupt: Vec<CorruptEpisode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptEpisode {
    pub path: PathBuf,
    pub reason: String,
}

/// Walks the episode directories directly under `root`, or just `root` when
/// it is itself an episode. Corrupt episodes are listed and excluded from
/// the totals.
pub fn summarize_dataset(root: &Path) -> Result<DatasetSummary, EpisodeError> {
    let mut dirs = Vec::new();
    if root.join(META_FILE).is_file() {
        dirs.push(root.to_path_buf());
    } else {
        for entry in fs::read_dir(root).map_err(io_err(root))? {
            let entry = entry.map_err(io_err(root))?;
            if entry.path().is_dir() {
                dirs.push(entry.path());
            }
        }
    }
    dirs.sort();
    let mut summary = DatasetSummary::default();
    for dir in dirs {
        match validate_episode_dir(&dir) {
            Ok(ep) => {
                summary.episodes += 1;
                summary.total_pairs += ep.samples.len();
                let c = summary.per_category.entry(ep.meta.task_category).or_default();
                c.episodes += 1;
                c.pairs += ep.samples.len();
            }
            Err(e) => summary.corrupt.push(CorruptEpisode { path: dir, reason: e.to_string() }),
        }
    }
    Ok(summary)
}

/// Reads voltage triples from a CSV with `vx,vy,vz` columns, or the
/// increment columns `dvx,dvy,dvz` when `increments` is set.
pub fn read_voltage_csv(path: &Path, increments: bool) -> Result<Vec<VoltageTriple>, EpisodeError> {
    let csv_err = |source| EpisodeError::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let names = if increments { ["dvx", "dvy", "dvz"] } else { ["vx", "vy", "vz"] };
    let idx = names.map(|n| headers.iter().position(|h| h.trim() == n));
    let [Some(ix), Some(iy), Some(iz)] = idx else {
        return Err(EpisodeError::Invalid(format!("{}: missing columns {names:?}", path.display())));
    };
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| -> Result<f64, EpisodeError> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| EpisodeError::Invalid(format!("{}: bad number in row {}", path.display(), out.len() + 1)))
        };
        out.push(VoltageTriple::new(field(ix)?, field(iy)?, field(iz)?));
    }
    Ok(out)
}
