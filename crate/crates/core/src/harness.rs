//! Sweep driver: stratified folds, cached simulation per (fold, value),
//! evaluator invocation per epoch, and result files.
//!
//! Loop order is folds → parameter values → epochs. Simulation happens once
//! per (fold, value) cell; epochs belong to the evaluator.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::formats::{self, EmbeddingSet};
use crate::imaging::{self, DatasetManifest, Raster, SensorConfig, Unit};
use crate::optics;
use crate::pipeline::{self, PreprocessMode, SimulationOptions};
use crate::recognition::{self, ScoreMatrix};
use crate::utility::{self, OptimalQ, SweepPoint};

/// Per-entry fold index, stratified by class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub folds: Vec<usize>,
    pub warnings: Vec<String>,
}

impl FoldAssignment {
    /// Entry indices in and out of fold `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..self.folds.len()).partition(|&i| self.folds[i] == fold);
        (train, test)
    }
}

fn class_rng(seed: u64, class: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(class.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Shuffles each class with its own seeded stream and deals the entries
/// round-robin, continuing the deal across classes so totals stay level.
pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_class.entry(e.class_label.as_str()).or_default().push(i);
    }
    let mut folds = vec![0; manifest.entries.len()];
    let mut warnings = Vec::new();
    let mut next = 0;
    for (class, mut members) in by_class {
        if members.len() < k {
            warnings.push(format!("class '{class}' has {} entries for {k} folds", members.len()));
        }
        members.shuffle(&mut class_rng(seed, class));
        for m in members {
            folds[m] = next % k;
            next += 1;
        }
    }
    Ok(FoldAssignment {
        k,
        seed,
        stratified: true,
        folds,
        warnings,
    })
}

/// Train and evaluation class groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub train: Vec<String>,
    pub eval: Vec<String>,
    pub disjoint: bool,
}

/// Zero-shot split; the lists must be disjoint and drawn from the manifest.
pub fn split_classes(manifest: &DatasetManifest, train: &[String], eval: &[String]) -> Result<ClassSplit> {
    for c in train.iter().chain(eval) {
        if manifest.class_index(c).is_none() {
            return Err(Error::InvalidArgument(format!("class '{c}' is not in the manifest")));
        }
    }
    let t: BTreeSet<&String> = train.iter().collect();
    if let Some(c) = eval.iter().find(|c| t.contains(c)) {
        return Err(Error::InvalidArgument(format!("class '{c}' appears in both train and eval groups")));
    }
    if eval.is_empty() {
        return Err(Error::InvalidArgument("eval class group is empty".into()));
    }
    Ok(ClassSplit {
        train: train.to_vec(),
        eval: eval.to_vec(),
        disjoint: true,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorSpec {
    Builtin,
    Command {
        command: String,
        #[serde(default = "default_timeout_s")]
        timeout_s: u64,
    },
}

fn default_timeout_s() -> u64 {
    3600
}

impl std::str::FromStr for EvaluatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "builtin" {
            Ok(EvaluatorSpec::Builtin)
        } else if let Some(cmd) = s.strip_prefix("cmd:") {
            Ok(EvaluatorSpec::Command {
                command: cmd.to_string(),
                timeout_s: default_timeout_s(),
            })
        } else {
            Err(Error::InvalidArgument(format!("evaluator must be 'builtin' or 'cmd:<command>', got {s:?}")))
        }
    }
}

/// A second swept parameter; each of its values gets its own curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamAxis {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    #[serde(default = "default_trial")]
    pub trial_id: String,
    pub param_name: String,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<ParamAxis>,
    pub config: SensorConfig,
    #[serde(default)]
    pub mode: PreprocessMode,
    pub evaluator: EvaluatorSpec,
    #[serde(default)]
    pub epochs: u32,
    /// Folds to run; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<Vec<usize>>,
    #[serde(default)]
    pub simulation: SimulationOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_shot: Option<ClassSplit>,
}

fn default_trial() -> String {
    "trial".into()
}

impl SweepPlan {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::load(path, e))
    }

    /// Every (group value, parameter value) cell in sweep order.
    fn cells(&self) -> Vec<(Option<f64>, f64)> {
        match &self.group {
            None => self.values.iter().map(|&v| (None, v)).collect(),
            Some(g) => g
                .values
                .iter()
                .flat_map(|&gv| self.values.iter().map(move |&v| (Some(gv), v)))
                .collect(),
        }
    }

    fn config_for(&self, group: Option<f64>, value: f64) -> Result<SensorConfig> {
        let mut cfg = self.config.clone();
        if let (Some(g), Some(axis)) = (group, &self.group) {
            cfg = cfg.with_param(&axis.name, g)?;
        }
        cfg.with_param(&self.param_name, value)
    }

    fn trial_for(&self, group: Option<f64>) -> String {
        match (group, &self.group) {
            (Some(g), Some(axis)) => format!("{}/{}={}", self.trial_id, axis.name, g),
            _ => self.trial_id.clone(),
        }
    }
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_values(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("cannot parse value list {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let nums: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        let (start, stop, step) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // rounded to 12 significant decimals so 0.1 + 3·0.1 prints as 0.4
        return Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect());
    }
    spec.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub trial_id: String,
    pub fold: usize,
    pub param_name: String,
    pub param_value: f64,
    pub epoch: u32,
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub group_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub fold: usize,
    pub param_value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub group_value: Option<f64>,
    pub error: String,
}

/// Content-addressed store of simulated reflectance images (BIMG bytes).
#[derive(Debug)]
pub struct SimulationCache {
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl SimulationCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(SimulationCache {
            dir,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn key(config: &SensorConfig, instance_id: &str, mode: PreprocessMode, options: &SimulationOptions) -> String {
        let mut h = Sha256::new();
        for part in [
            config.content_hash(),
            instance_id.to_string(),
            serde_json::to_string(&mode).expect("mode serializes"),
            options.seed.to_string(),
            serde_json::to_string(options).expect("options serialize"),
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    /// BIMG bytes of the simulated output for one entry, simulating on a miss.
    pub fn get_or_simulate(
        &self,
        manifest: &DatasetManifest,
        entry: usize,
        config: &SensorConfig,
        mode: PreprocessMode,
        options: &SimulationOptions,
    ) -> Result<Vec<u8>> {
        let e = &manifest.entries[entry];
        let path = self.dir.join(format!("{}.bimg", Self::key(config, &e.instance_id, mode, options)));
        if let Ok(bytes) = std::fs::read(&path) {
            if formats::decode_bimg(&bytes).is_ok() {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(bytes);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let (image, metadata) = imaging::load_image(&manifest.resolve(&e.image), &manifest.resolve(&e.metadata))?;
        let products = pipeline::simulate(&image, &metadata, config, mode, options)?;
        let bytes = formats::encode_bimg(products.output.bands(), Unit::ToaReflectance)?;
        formats::write_atomic(&path, &bytes)?;
        Ok(bytes)
    }
}

/// One simulated image handed to an evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedItem {
    pub id: String,
    pub label: String,
    pub bands: Vec<Raster>,
}

/// Mean squared detail coefficients of one Haar level, plus the
/// approximation for the next level.
fn haar_level(src: &Raster) -> ([f64; 3], Raster) {
    let (h, w) = (src.height() / 2, src.width() / 2);
    let mut e = [0.0; 3];
    let mut approx = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (a, b) = (src.get(2 * r, 2 * c), src.get(2 * r, 2 * c + 1));
            let (d, f) = (src.get(2 * r + 1, 2 * c), src.get(2 * r + 1, 2 * c + 1));
            approx[r * w + c] = (a + b + d + f) / 2.0;
            e[0] += ((a - b + d - f) / 2.0).powi(2);
            e[1] += ((a + b - d - f) / 2.0).powi(2);
            e[2] += ((a - b - d + f) / 2.0).powi(2);
        }
    }
    let n = (h * w).max(1) as f64;
    (e.map(|v| v / n), Raster::new(h, w, approx).expect("shape"))
}

/// Per band: mean, variance, and three Haar detail energies at each of two
/// levels (8 values per band, 24 for RGB).
pub fn baseline_features(bands: &[Raster]) -> Vec<f64> {
    let mut out = Vec::with_capacity(8 * bands.len());
    for b in bands {
        let mean = b.mean();
        let var = b.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b.data().len() as f64;
        out.extend([mean, var]);
        let (e1, a1) = haar_level(b);
        let (e2, _) = haar_level(&a1);
        out.extend(e1);
        out.extend(e2);
    }
    out
}

fn standardize(rows: &mut [Vec<f64>], reference: &[Vec<f64>]) {
    let Some(dim) = reference.first().map(Vec::len) else {
        return;
    };
    let n = reference.len() as f64;
    for j in 0..dim {
        let mean = reference.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (reference.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        for r in rows.iter_mut() {
            r[j] = (r[j] - mean) / sd;
        }
    }
}

/// Retrieval AP on `test`, plus nearest-centroid classification against
/// `train` when every test label is a train class.
pub fn embedding_metrics(train: Option<&EmbeddingSet>, test: &EmbeddingSet, prefix: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    out.insert(format!("{prefix}rap"), recognition::mean_rap(test)?.value);
    let Some(train) = train.filter(|t| !t.is_empty()) else {
        return Ok(out);
    };
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch(format!("train dim {} vs test dim {}", train.dim(), test.dim())));
    }
    let mut classes: Vec<String> = train.labels().to_vec();
    classes.sort();
    classes.dedup();
    let Some(labels) = test
        .labels()
        .iter()
        .map(|l| classes.iter().position(|c| c == l))
        .collect::<Option<Vec<usize>>>()
    else {
        return Ok(out);
    };
    let d = train.dim();
    let mut centroids = vec![vec![0.0; d]; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    for i in 0..train.len() {
        let c = classes.iter().position(|c| c == &train.labels()[i]).expect("train class");
        counts[c] += 1;
        for (acc, v) in centroids[c].iter_mut().zip(train.vector(i)) {
            *acc += v;
        }
    }
    for (cen, n) in centroids.iter_mut().zip(&counts) {
        cen.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let scores = (0..test.len())
        .flat_map(|i| {
            let q = test.vector(i);
            centroids
                .iter()
                .map(move |c| -c.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        })
        .collect();
    let m = ScoreMatrix::new(classes.clone(), scores, labels)?;
    out.insert(format!("{prefix}top1"), recognition::topk_accuracy(&m, 1)?);
    if classes.len() >= 3 {
        out.insert(format!("{prefix}top3"), recognition::topk_accuracy(&m, 3)?);
    }
    if let Ok(cap) = recognition::classification_ap(&m) {
        out.insert(format!("{prefix}cap"), cap.value);
    }
    if let Ok(auc) = recognition::roc_auc_macro(&m) {
        out.insert(format!("{prefix}auc"), auc.value);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinResult {
    pub metrics: BTreeMap<String, f64>,
    pub train_embeddings: EmbeddingSet,
    pub test_embeddings: EmbeddingSet,
}

/// Classical stand-in evaluator: fixed Haar/moment features, z-scored with
/// train statistics. Metric names carry a `baseline_` prefix.
pub fn builtin_evaluator(train: &[SimulatedItem], test: &[SimulatedItem]) -> Result<BuiltinResult> {
    if test.is_empty() {
        return Err(Error::Evaluator("empty test split".into()));
    }
    let mut train_rows: Vec<Vec<f64>> = train.par_iter().map(|t| baseline_features(&t.bands)).collect();
    let mut test_rows: Vec<Vec<f64>> = test.par_iter().map(|t| baseline_features(&t.bands)).collect();
    let reference = if train_rows.is_empty() { test_rows.clone() } else { train_rows.clone() };
    standardize(&mut train_rows, &reference);
    standardize(&mut test_rows, &reference);
    let set = |rows: Vec<Vec<f64>>, items: &[SimulatedItem]| -> Result<EmbeddingSet> {
        let dim = rows.first().map(Vec::len).unwrap_or(1);
        EmbeddingSet::new(
            dim,
            rows.concat(),
            items.iter().map(|i| i.id.clone()).collect(),
            items.iter().map(|i| i.label.clone()).collect(),
        )
    };
    let train_embeddings = set(train_rows, train)?;
    let test_embeddings = set(test_rows, test)?;
    let metrics = embedding_metrics(Some(&train_embeddings), &test_embeddings, "baseline_")?;
    Ok(BuiltinResult {
        metrics,
        train_embeddings,
        test_embeddings,
    })
}

/// Metrics file written by an external evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorMetrics {
    pub epochs: Vec<EpochMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
struct SplitManifest<'a> {
    classes: Vec<&'a str>,
    entries: Vec<SplitEntry<'a>>,
}

#[derive(Debug, Serialize)]
struct SplitEntry<'a> {
    id: &'a str,
    class: &'a str,
    file: String,
}

fn write_split(dir: &Path, items: &[(String, String, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut classes: Vec<&str> = items.iter().map(|i| i.1.as_str()).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut entries = Vec::new();
    for (id, class, bytes) in items {
        let file = format!("{id}.bimg");
        formats::write_atomic(&dir.join(&file), bytes)?;
        entries.push(SplitEntry { id, class, file });
    }
    formats::write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&SplitManifest { classes, entries })?)
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

/// Runs an external evaluator on one cell. The command gets
/// `--train-dir --test-dir --epochs --out` appended and either writes the
/// metrics file or per-epoch `epoch_{e}_test.emb1` files next to it.
pub fn run_external_evaluator(
    command: &str,
    timeout: Duration,
    cell_dir: &Path,
    train: &[(String, String, Vec<u8>)],
    test: &[(String, String, Vec<u8>)],
    epochs: u32,
) -> Result<Vec<EpochMetrics>> {
    let (train_dir, test_dir, out_dir) = (cell_dir.join("train"), cell_dir.join("test"), cell_dir.join("out"));
    write_split(&train_dir, train)?;
    write_split(&test_dir, test)?;
    std::fs::create_dir_all(&out_dir)?;
    let metrics_path = out_dir.join("metrics.json");
    let full = format!(
        "{command} --train-dir {} --test-dir {} --epochs {epochs} --out {}",
        shell_quote(&train_dir),
        shell_quote(&test_dir),
        shell_quote(&metrics_path)
    );
    let log = std::fs::File::create(cell_dir.join("evaluator.log"))?;
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&full)
        .stdin(Stdio::null())
        .stdout(log.try_clone()?)
        .stderr(log)
        .spawn()
        .map_err(|e| Error::Evaluator(format!("cannot start evaluator: {e}")))?;
    let start = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if start.elapsed() > timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::Evaluator(format!("timed out after {} s", timeout.as_secs())));
        }
        std::thread::sleep(Duration::from_millis(20));
    };
    if !status.success() {
        let mut tail = String::new();
        if let Ok(mut f) = std::fs::File::open(cell_dir.join("evaluator.log")) {
            let _ = f.read_to_string(&mut tail);
        }
        let tail: String = tail.lines().rev().take(5).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>().join(" | ");
        return Err(Error::Evaluator(format!("exit status {status}: {tail}")));
    }
    if metrics_path.exists() {
        let text = std::fs::read_to_string(&metrics_path)?;
        let parsed: EvaluatorMetrics = serde_json::from_str(&text)
            .map_err(|e| Error::Evaluator(format!("schema violation in metrics.json: {e}")))?;
        let mut seen = BTreeSet::new();
        for ep in &parsed.epochs {
            if ep.epoch > epochs || !seen.insert(ep.epoch) {
                return Err(Error::Evaluator(format!("schema violation: unexpected or repeated epoch {}", ep.epoch)));
            }
        }
        return Ok(parsed.epochs);
    }
    let mut out = Vec::new();
    for e in 0..=epochs {
        let test_path = out_dir.join(format!("epoch_{e}_test.emb1"));
        if !test_path.exists() {
            continue;
        }
        let test_set = EmbeddingSet::read(&test_path).map_err(|err| Error::Evaluator(err.to_string()))?;
        let train_path = out_dir.join(format!("epoch_{e}_train.emb1"));
        let train_set = if train_path.exists() {
            Some(EmbeddingSet::read(&train_path).map_err(|err| Error::Evaluator(err.to_string()))?)
        } else {
            None
        };
        out.push(EpochMetrics {
            epoch: e,
            metrics: embedding_metrics(train_set.as_ref(), &test_set, "")?,
        });
    }
    if out.is_empty() {
        return Err(Error::Evaluator("evaluator wrote neither metrics.json nor epoch EMB1 files".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Simulation worker threads; 0 lets the pool choose.
    pub workers: usize,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: Vec<MetricRecord>,
    pub failures: Vec<CellFailure>,
    pub warnings: Vec<String>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

impl SweepOutcome {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

fn sweep_warnings(plan: &SweepPlan, manifest: &DatasetManifest) -> Vec<String> {
    let mut out = Vec::new();
    let finest = manifest
        .entries
        .iter()
        .filter_map(|e| imaging::ImageMetadata::load(&manifest.resolve(&e.metadata)).ok())
        .map(|m| m.source_gsd_m)
        .fold(0.0f64, f64::max);
    for (g, v) in plan.cells() {
        if let Ok(b) = plan.config_for(g, v).and_then(|c| optics::frequency_budget(&c)) {
            if b.gsd_m < finest {
                out.push(format!(
                    "{}={v}: detector gsd {:.3} m is finer than source gsd {finest} m",
                    plan.param_name, b.gsd_m
                ));
            }
        }
    }
    out
}

type CellItems = Vec<(String, String, Vec<u8>)>;

fn simulate_split(
    pool: &rayon::ThreadPool,
    cache: &SimulationCache,
    manifest: &DatasetManifest,
    indices: &[usize],
    config: &SensorConfig,
    plan: &SweepPlan,
) -> Result<CellItems> {
    pool.install(|| {
        indices
            .par_iter()
            .map(|&i| {
                let e = &manifest.entries[i];
                cache
                    .get_or_simulate(manifest, i, config, plan.mode, &plan.simulation)
                    .map(|b| (e.instance_id.clone(), e.class_label.clone(), b))
                    .map_err(|err| Error::Evaluator(format!("simulation of '{}' failed: {err}", e.instance_id)))
            })
            .collect()
    })
}

fn decode_items(items: &CellItems) -> Result<Vec<SimulatedItem>> {
    items
        .iter()
        .map(|(id, label, bytes)| {
            formats::decode_bimg(bytes).map(|(bands, _)| SimulatedItem {
                id: id.clone(),
                label: label.clone(),
                bands,
            })
        })
        .collect()
}

fn run_cell(
    plan: &SweepPlan,
    manifest: &DatasetManifest,
    train_idx: &[usize],
    test_idx: &[usize],
    config: &SensorConfig,
    cache: &SimulationCache,
    pool: &rayon::ThreadPool,
    cell_dir: &Path,
) -> Result<Vec<EpochMetrics>> {
    let train = simulate_split(pool, cache, manifest, train_idx, config, plan)?;
    let test = simulate_split(pool, cache, manifest, test_idx, config, plan)?;
    match &plan.evaluator {
        EvaluatorSpec::Builtin => {
            let result = builtin_evaluator(&decode_items(&train)?, &decode_items(&test)?)?;
            std::fs::create_dir_all(cell_dir)?;
            result.test_embeddings.write(&cell_dir.join("epoch_0_test.emb1"))?;
            Ok((0..=plan.epochs)
                .map(|epoch| EpochMetrics {
                    epoch,
                    metrics: result.metrics.clone(),
                })
                .collect())
        }
        EvaluatorSpec::Command { command, timeout_s } => {
            run_external_evaluator(command, Duration::from_secs(*timeout_s), cell_dir, &train, &test, plan.epochs)
        }
    }
}

/// Runs the sweep. Cell failures are recorded and the sweep continues.
pub fn run_sweep(
    plan: &SweepPlan,
    folds: &FoldAssignment,
    manifest: &DatasetManifest,
    options: &RunOptions,
) -> Result<SweepOutcome> {
    if plan.values.is_empty() {
        return Err(Error::InvalidArgument("sweep has no parameter values".into()));
    }
    if folds.folds.len() != manifest.entries.len() {
        return Err(Error::DimensionMismatch("fold assignment does not match manifest".into()));
    }
    plan.config.validate()?;
    let fold_list: Vec<usize> = plan.folds.clone().unwrap_or_else(|| (0..folds.k).collect());
    if let Some(bad) = fold_list.iter().find(|&&f| f >= folds.k) {
        return Err(Error::InvalidArgument(format!("fold {bad} out of range for {} folds", folds.k)));
    }
    let cache = SimulationCache::new(options.cache_dir.clone().unwrap_or_else(|| options.out_dir.join("cache")))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let mut outcome = SweepOutcome {
        warnings: folds.warnings.iter().cloned().chain(sweep_warnings(plan, manifest)).collect(),
        ..Default::default()
    };
    let in_group = |i: usize, group: Option<&Vec<String>>| group.is_none_or(|g| g.contains(&manifest.entries[i].class_label));
    for &fold in &fold_list {
        let (train_all, test_all) = folds.split(fold);
        let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = match &plan.zero_shot {
            Some(split) => (
                train_all.into_iter().filter(|&i| in_group(i, Some(&split.train))).collect(),
                test_all.into_iter().filter(|&i| in_group(i, Some(&split.eval))).collect(),
            ),
            None => (train_all, test_all),
        };
        for (j, (group, value)) in plan.cells().into_iter().enumerate() {
            let cell_dir = options.out_dir.join("cells").join(format!("fold{fold}_cell{j}"));
            let result = plan
                .config_for(group, value)
                .and_then(|cfg| run_cell(plan, manifest, &train_idx, &test_idx, &cfg, &cache, &pool, &cell_dir));
            match result {
                Ok(epochs) => {
                    let trial = plan.trial_for(group);
                    for ep in epochs {
                        for (metric, v) in ep.metrics {
                            outcome.records.push(MetricRecord {
                                trial_id: trial.clone(),
                                fold,
                                param_name: plan.param_name.clone(),
                                param_value: value,
                                epoch: ep.epoch,
                                metric,
                                value: v,
                                group_value: group,
                            });
                        }
                    }
                }
                Err(e) => outcome.failures.push(CellFailure {
                    fold,
                    param_value: value,
                    group_value: group,
                    error: e.to_string(),
                }),
            }
        }
    }
    outcome.cache_hits = cache.hits();
    outcome.cache_misses = cache.misses();
    Ok(outcome)
}

/// Fold-averaged curve of one metric at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub trial_id: String,
    pub metric: String,
    pub epoch: u32,
    pub param_value: f64,
    pub mean: f64,
    pub std: f64,
    pub folds: usize,
    pub normalized: f64,
    /// Set when the curve is constant and the normalized column is zero by
    /// convention.
    pub constant: bool,
}

pub fn curves(records: &[MetricRecord]) -> Vec<CurvePoint> {
    let mut grouped: BTreeMap<(String, String, u32), BTreeMap<u64, (f64, Vec<f64>)>> = BTreeMap::new();
    for r in records {
        grouped
            .entry((r.trial_id.clone(), r.metric.clone(), r.epoch))
            .or_default()
            .entry(r.param_value.to_bits())
            .or_insert_with(|| (r.param_value, Vec::new()))
            .1
            .push(r.value);
    }
    let mut out = Vec::new();
    for ((trial, metric, epoch), by_value) in grouped {
        let mut pts: Vec<(f64, f64, f64, usize)> = by_value
            .into_values()
            .map(|(v, xs)| {
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                (v, mean, std, xs.len())
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let constant = hi == lo;
        for (v, mean, std, n) in pts {
            out.push(CurvePoint {
                trial_id: trial.clone(),
                metric: metric.clone(),
                epoch,
                param_value: v,
                mean,
                std,
                folds: n,
                normalized: if constant { 0.0 } else { (mean - lo) / (hi - lo) },
                constant,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Argmax {
    pub trial_id: String,
    pub metric: String,
    pub epoch: u32,
    pub param_value: f64,
    pub mean: f64,
}

/// Parameter value with the highest fold-mean per (trial, metric, epoch);
/// the smallest value wins ties.
pub fn argmax_summary(curves: &[CurvePoint]) -> Vec<Argmax> {
    let mut best: BTreeMap<(String, String, u32), Argmax> = BTreeMap::new();
    for c in curves {
        let key = (c.trial_id.clone(), c.metric.clone(), c.epoch);
        let replace = best.get(&key).is_none_or(|b| c.mean > b.mean);
        if replace {
            best.insert(
                key,
                Argmax {
                    trial_id: c.trial_id.clone(),
                    metric: c.metric.clone(),
                    epoch: c.epoch,
                    param_value: c.param_value,
                    mean: c.mean,
                },
            );
        }
    }
    best.into_values().collect()
}

/// Optimal-Q summary over the group axis, one entry per metric (final epoch).
pub fn optimal_q_table(plan: &SweepPlan, records: &[MetricRecord]) -> Result<Vec<OptimalQ>> {
    if plan.group.is_none() {
        return Ok(Vec::new());
    }
    let last = records.iter().map(|r| r.epoch).max().unwrap_or(0);
    let mut sums: BTreeMap<(String, u64, u64), (f64, f64, f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.epoch == last) {
        let g = r.group_value.unwrap_or(0.0);
        let s = sums
            .entry((r.metric.clone(), g.to_bits(), r.param_value.to_bits()))
            .or_insert((g, r.param_value, 0.0, 0));
        s.2 += r.value;
        s.3 += 1;
    }
    let mut by_metric: BTreeMap<String, Vec<SweepPoint>> = BTreeMap::new();
    let mut q_cache: HashMap<(u64, u64), f64> = HashMap::new();
    for ((metric, _, _), (g, v, sum, n)) in sums {
        let q = match q_cache.get(&(g.to_bits(), v.to_bits())) {
            Some(&q) => q,
            None => {
                let q = optics::frequency_budget(&plan.config_for(Some(g), v)?)?.q;
                q_cache.insert((g.to_bits(), v.to_bits()), q);
                q
            }
        };
        by_metric.entry(metric).or_default().push(SweepPoint {
            group: g,
            q,
            value: sum / n as f64,
        });
    }
    by_metric
        .into_iter()
        .map(|(m, pts)| utility::optimal_q(&m, &pts))
        .collect()
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    trial_id: &'a str,
    fold: usize,
    param_name: &'a str,
    param_value: f64,
    epoch: u32,
    metric: &'a str,
    value: f64,
}

/// Writes `records.csv` and `records.json`; with `plot_data` also
/// `curves.csv`, `argmax.json` and, for grouped sweeps, `optimal_q.json`.
pub fn emit_results(plan: &SweepPlan, outcome: &SweepOutcome, out_dir: &Path, plot_data: bool) -> Result<Vec<PathBuf>> {
    if outcome.records.is_empty() && outcome.failures.is_empty() {
        return Err(Error::InvalidArgument("no records to emit".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let csv_path = out_dir.join("records.csv");
    formats::write_atomic(&csv_path, &records_csv(&outcome.records)?)?;
    written.push(csv_path);
    let json_path = out_dir.join("records.json");
    formats::write_atomic(&json_path, &serde_json::to_vec_pretty(outcome)?)?;
    written.push(json_path);
    if plot_data {
        let c = curves(&outcome.records);
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &c {
            w.serialize(p).map_err(|e| Error::Format(e.to_string()))?;
        }
        let path = out_dir.join("curves.csv");
        formats::write_atomic(&path, &w.into_inner().map_err(|e| Error::Format(e.to_string()))?)?;
        written.push(path);
        let path = out_dir.join("argmax.json");
        formats::write_atomic(&path, &serde_json::to_vec_pretty(&argmax_summary(&c))?)?;
        written.push(path);
        if plan.group.is_some() {
            let path = out_dir.join("optimal_q.json");
            formats::write_atomic(&path, &serde_json::to_vec_pretty(&optimal_q_table(plan, &outcome.records)?)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// CSV bytes with header `trial_id,fold,param_name,param_value,epoch,metric,value`.
pub fn records_csv(records: &[MetricRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    if records.is_empty() {
        w.write_record(["trial_id", "fold", "param_name", "param_value", "epoch", "metric", "value"])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    for r in records {
        w.serialize(CsvRow {
            trial_id: &r.trial_id,
            fold: r.fold,
            param_name: &r.param_name,
            param_value: r.param_value,
            epoch: r.epoch,
            metric: &r.metric,
            value: r.value,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}
