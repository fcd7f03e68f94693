use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sensorsim::formats::{self, EmbeddingSet};
use sensorsim::harness::{self, EvaluatorSpec, RunOptions, SweepPlan};
use sensorsim::imaging::{self, DatasetManifest, SensorConfig};
use sensorsim::optics;
use sensorsim::pipeline::{self, BatchOptions, MtfMode, PreprocessMode, SimulationOptions};
use sensorsim::radiometry::NoiseMode;
use sensorsim::recognition::{self, ScoreMatrix};
use sensorsim::utility::{self, Giqe5Coefficients, SsimParams};

#[derive(Parser)]
#[command(name = "sensorsim", version, about = "Simulate space-borne imaging of overhead imagery and score the results")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate every manifest entry through a sensor configuration.
    Simulate(SimulateArgs),
    /// Predict NIIRS for a configuration, optionally over a parameter sweep.
    Giqe(GiqeArgs),
    /// Full-reference image quality between two directories.
    Iqa(IqaArgs),
    /// Recognition metrics from embeddings or score tables.
    Metrics(MetricsArgs),
    /// Cross-validated parameter sweep.
    Sweep(SweepArgs),
    /// Audit a dataset manifest.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SimOpts {
    #[arg(long, default_value = "gaussian")]
    noise: NoiseMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clamp TOA reflectance to [0, 1].
    #[arg(long)]
    clamp_reflectance: bool,
    /// Skip gain and quantization.
    #[arg(long)]
    no_quantize: bool,
    /// Replace the optical MTF with unity.
    #[arg(long)]
    unity_mtf: bool,
}

impl SimOpts {
    fn options(&self) -> SimulationOptions {
        SimulationOptions {
            noise: self.noise,
            quantize: !self.no_quantize,
            mtf: if self.unity_mtf { MtfMode::Unity } else { MtfMode::Diffraction },
            clamp_reflectance: self.clamp_reflectance,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "crop")]
    mode: PreprocessMode,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    dump_spectra: Option<PathBuf>,
    /// Print the frequency budget as JSON before simulating.
    #[arg(long)]
    explain: bool,
    #[command(flatten)]
    sim: SimOpts,
}

#[derive(Args)]
struct GiqeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Coefficient file; the bundled GIQE-5 set when omitted.
    #[arg(long)]
    coeffs: Option<PathBuf>,
    /// `name=start:stop:step` or `name=v1,v2,...`
    #[arg(long)]
    sweep: Option<String>,
    /// Include the frequency budget and per-term breakdown.
    #[arg(long)]
    explain: bool,
    /// Write JSON, or CSV when the path ends in .csv; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum IqaMetric {
    Psnr,
    Ssim,
}

#[derive(Args)]
struct IqaArgs {
    metric: IqaMetric,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    data_range: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RecMetric {
    Rap,
    Cap,
    Auc,
    Topk,
}

#[derive(Args)]
struct MetricsArgs {
    metric: RecMetric,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Score table: header `id,label,<class>...`, one row per sample.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Training embeddings for nearest-centroid scores.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `builtin` or `cmd:<command>`; overrides the plan.
    #[arg(long)]
    evaluator: Option<EvaluatorSpec>,
    #[arg(long)]
    out: PathBuf,
    /// Two files listing train and eval classes, one per line.
    #[arg(long, num_args = 2, value_names = ["TRAIN", "EVAL"])]
    zero_shot: Option<Vec<PathBuf>>,
    #[arg(long)]
    plot_data: bool,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    no_files: bool,
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => formats::write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let config = SensorConfig::load(&a.config)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    if a.explain {
        write_json(None, &serde_json::to_value(optics::frequency_budget(&config)?)?)?;
    }
    let options = BatchOptions {
        mode: a.mode,
        simulation: a.sim.options(),
        workers: a.workers,
        dump_spectra: a.dump_spectra,
    };
    let report = pipeline::simulate_batch(&manifest, &config, &options, &a.out)?;
    formats::write_atomic(&a.out.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;
    let failed: Vec<_> = report.failures().collect();
    for f in &failed {
        eprintln!("{}: {}", f.instance_id, f.error.as_deref().unwrap_or(""));
    }
    eprintln!("simulated {} of {} entries", report.entries.len() - failed.len(), report.entries.len());
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn giqe(a: GiqeArgs) -> Result<ExitCode> {
    let config = SensorConfig::load(&a.config)?;
    let coeffs = match &a.coeffs {
        Some(p) => Giqe5Coefficients::load(p)?,
        None => Giqe5Coefficients::bundled(),
    };
    let points: Vec<(Option<f64>, SensorConfig)> = match &a.sweep {
        None => vec![(None, config.clone())],
        Some(spec) => {
            let (name, values) = spec.split_once('=').context("--sweep expects name=values")?;
            harness::parse_values(values)?
                .into_iter()
                .map(|v| Ok((Some(v), config.with_param(name, v)?)))
                .collect::<Result<_>>()?
        }
    };
    let param = a.sweep.as_deref().and_then(|s| s.split_once('=')).map(|(n, _)| n.to_string());
    let mut rows = Vec::new();
    for (value, cfg) in &points {
        let budget = optics::frequency_budget(cfg)?;
        let b = utility::predict_niirs(cfg, &coeffs)?;
        let mut row = json!({ "q": budget.q, "gsd_m": b.gsd_m, "rer": b.rer, "snr": b.snr, "niirs": b.niirs });
        if let (Some(v), Some(n)) = (value, &param) {
            row[n.as_str()] = json!(v);
        }
        if a.explain {
            row["terms"] = json!(b.terms);
            row["budget"] = serde_json::to_value(budget)?;
        }
        rows.push(row);
    }
    match &a.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => {
            let mut w = csv::Writer::from_path(p)?;
            let mut header: Vec<String> = param.iter().cloned().collect();
            header.extend(["q", "gsd_m", "rer", "snr", "niirs"].map(String::from));
            w.write_record(&header)?;
            for r in &rows {
                w.write_record(header.iter().map(|h| r[h.as_str()].to_string()))?;
            }
            w.flush()?;
        }
        out => {
            let value = if a.sweep.is_none() { rows.remove(0) } else { json!(rows) };
            write_json(out.as_deref(), &value)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn raster_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        if matches!(ext, "bimg" | "tif" | "tiff") && !name.ends_with(".ref.bimg") && !name.ends_with(".spectrum.bimg") {
            out.insert(name.to_string(), path);
        }
    }
    Ok(out)
}

fn iqa(a: IqaArgs) -> Result<ExitCode> {
    let refs = raster_files(&a.reference)?;
    let tests = raster_files(&a.test)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["file", "metric", "value", "per_band"])?;
    let mut missing = 0;
    for (name, rp) in &refs {
        let Some(tp) = tests.get(name) else {
            eprintln!("{name}: no test image");
            missing += 1;
            continue;
        };
        let (r, _) = formats::read_raster_file(rp)?;
        let (t, _) = formats::read_raster_file(tp)?;
        let score = match a.metric {
            IqaMetric::Psnr => utility::psnr(&r, &t, a.data_range),
            IqaMetric::Ssim => utility::ssim(&r, &t, &SsimParams { data_range: a.data_range, ..SsimParams::default() }),
        }
        .with_context(|| name.clone())?;
        let per_band: Vec<String> = score.per_band.iter().map(f64::to_string).collect();
        w.write_record([name.as_str(), score.metric.as_str(), &score.value.to_string(), &per_band.join(";")])?;
    }
    w.flush()?;
    Ok(if missing == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn read_scores(path: &Path) -> Result<ScoreMatrix> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        bail!("score table header must be id,label,<class>...");
    }
    let classes: Vec<String> = header.iter().skip(2).map(String::from).collect();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let label = classes
            .iter()
            .position(|c| c == &rec[1])
            .with_context(|| format!("label {:?} is not a score column", &rec[1]))?;
        labels.push(label);
        for v in rec.iter().skip(2) {
            scores.push(v.trim().parse::<f64>().with_context(|| format!("bad score {v:?}"))?);
        }
    }
    Ok(ScoreMatrix::new(classes, scores, labels)?)
}

fn centroid_scores(train: &EmbeddingSet, test: &EmbeddingSet) -> Result<ScoreMatrix> {
    let mut classes: Vec<String> = train.labels().to_vec();
    classes.sort();
    classes.dedup();
    let mut centroids = vec![vec![0.0; train.dim()]; classes.len()];
    let mut counts = vec![0.0; classes.len()];
    for i in 0..train.len() {
        let c = classes.binary_search(&train.labels()[i]).expect("train class");
        counts[c] += 1.0;
        centroids[c].iter_mut().zip(train.vector(i)).for_each(|(a, v)| *a += v);
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n);
    }
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for i in 0..test.len() {
        labels.push(
            classes
                .binary_search(&test.labels()[i])
                .map_err(|_| anyhow::anyhow!("test label {:?} has no training samples", test.labels()[i]))?,
        );
        let q = test.vector(i);
        scores.extend(centroids.iter().map(|c| -c.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()));
    }
    Ok(ScoreMatrix::new(classes, scores, labels)?)
}

fn metrics(a: MetricsArgs) -> Result<ExitCode> {
    let result = match a.metric {
        RecMetric::Rap => {
            let path = a.embeddings.as_ref().context("rap needs --embeddings")?;
            let emb = EmbeddingSet::read(path)?;
            let r = recognition::mean_rap(&emb)?;
            json!({ "metric": "rap", "value": r.value, "probes": r.probes, "excluded": r.excluded,
                    "prevalence_baseline": recognition::prevalence_baseline(&emb) })
        }
        m => {
            let scores = match (&a.scores, &a.train, &a.embeddings) {
                (Some(s), _, _) => read_scores(s)?,
                (None, Some(t), Some(e)) => centroid_scores(&EmbeddingSet::read(t)?, &EmbeddingSet::read(e)?)?,
                _ => bail!("need --scores, or --train with --embeddings"),
            };
            match m {
                RecMetric::Topk => json!({ "metric": format!("top{}", a.k), "value": recognition::topk_accuracy(&scores, a.k)? }),
                RecMetric::Cap => {
                    let r = recognition::classification_ap(&scores)?;
                    json!({ "metric": "cap", "value": r.value, "per_class": r.per_class, "skipped": r.skipped })
                }
                _ => {
                    let r = recognition::roc_auc_macro(&scores)?;
                    json!({ "metric": "auc", "value": r.value, "per_class": r.per_class, "skipped": r.skipped })
                }
            }
        }
    };
    write_json(Some(&a.out), &result)?;
    Ok(ExitCode::SUCCESS)
}

fn read_class_list(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn sweep(a: SweepArgs) -> Result<ExitCode> {
    let mut plan = SweepPlan::load(&a.plan)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    if let Some(e) = a.evaluator {
        plan.evaluator = e;
    }
    if let Some(files) = &a.zero_shot {
        plan.zero_shot = Some(harness::split_classes(&manifest, &read_class_list(&files[0])?, &read_class_list(&files[1])?)?);
    }
    let folds = harness::make_folds(&manifest, a.folds, a.seed)?;
    let options = RunOptions {
        out_dir: a.out.clone(),
        workers: a.workers,
        cache_dir: a.cache,
    };
    let outcome = harness::run_sweep(&plan, &folds, &manifest, &options)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for f in &outcome.failures {
        eprintln!("failed: fold {} {}={}: {}", f.fold, plan.param_name, f.param_value, f.error);
    }
    harness::emit_results(&plan, &outcome, &a.out, a.plot_data)?;
    formats::write_atomic(&a.out.join("folds.json"), &serde_json::to_vec_pretty(&folds)?)?;
    eprintln!(
        "{} records, {} failed cells, cache {} hits / {} misses",
        outcome.records.len(),
        outcome.failures.len(),
        outcome.cache_hits,
        outcome.cache_misses
    );
    Ok(if outcome.is_success() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn validate(a: ValidateArgs) -> Result<ExitCode> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let report = imaging::validate_manifest(&manifest, a.folds, !a.no_files);
    for issue in &report.issues {
        println!("{issue}");
    }
    eprintln!("{} entries, {} issues", manifest.entries.len(), report.issues.len());
    Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Giqe(a) => giqe(a),
        Cmd::Iqa(a) => iqa(a),
        Cmd::Metrics(a) => metrics(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::Validate(a) => validate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
