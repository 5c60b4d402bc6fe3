//! `null` and `scan` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tstbench::deformations::DeformKind;
use tstbench::nulls::NullDistribution;
use tstbench::rng::RngStream;
use tstbench::scan::scan_alphas;
use tstbench::statistics::MetricKind;

use crate::cache::CacheStatus;
use crate::config::ExperimentConfig;
use crate::experiment::{scan_stream_label, write_atomic, CliError, Experiment, NullIndexEntry};
use crate::results::{results_csv, results_markdown, timings_csv, BoundCells, Outcome, ResultRow};

/// Confidence levels printed by `null`: 68%, 95% and 99%.
pub const SUMMARY_ALPHAS: [f64; 3] = [0.32, 0.05, 0.01];

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_MD: &str = "results.md";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const MANIFEST: &str = "manifest.json";
pub const NULL_SUMMARY: &str = "null_summary.csv";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub resume: bool,
}

/// Loads the config, applies command-line overrides and binds the data.
pub fn prepare(config_path: &Path, opts: &RunOptions) -> Result<Experiment, CliError> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = opts.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &opts.output {
        config.output_dir = out.clone();
    }
    let output = config.output_dir.clone();
    fs::create_dir_all(&output)?;
    Experiment::new(config, output)
}

#[derive(Clone, Debug, Serialize)]
pub struct NullSummaryRow {
    pub metric: MetricKind,
    pub n: usize,
    pub iterations: usize,
    pub thresholds: Vec<(f64, f64)>,
    pub insufficient_tail: bool,
    pub status: CacheStatus,
    pub file: PathBuf,
    pub seconds: f64,
}

fn null_metrics(exp: &Experiment) -> Vec<MetricKind> {
    exp.config.metrics.iter().copied().filter(|m| *m != MetricKind::LLR).collect()
}

/// Builds or reuses every fixed null of the configuration.
pub fn cmd_null(exp: &Experiment) -> Result<Vec<NullSummaryRow>, CliError> {
    let mut rows = Vec::new();
    let mut index = Vec::new();
    for &n in &exp.config.sample_sizes {
        for metric in null_metrics(exp) {
            let (null, status, file) = exp.null(metric, n)?;
            let mut thresholds = Vec::new();
            let mut insufficient = false;
            for a in SUMMARY_ALPHAS {
                let t = null.threshold(a)?;
                insufficient |= t.insufficient_tail;
                thresholds.push((a, t.t_alpha));
            }
            index.push(NullIndexEntry { metric, n, file: file.clone() });
            rows.push(NullSummaryRow {
                metric,
                n,
                iterations: null.iterations,
                thresholds,
                insufficient_tail: insufficient,
                status,
                file,
                seconds: null.elapsed_seconds,
            });
        }
    }
    exp.write_null_index(&index)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "n", "iterations", "t68", "t95", "t99", "insufficient_tail", "cache", "null_seconds"])
        .expect("in-memory write");
    for r in &rows {
        let mut rec = vec![r.metric.to_string(), r.n.to_string(), r.iterations.to_string()];
        rec.extend(r.thresholds.iter().map(|(_, t)| t.to_string()));
        rec.extend([
            r.insufficient_tail.to_string(),
            format!("{:?}", r.status).to_lowercase(),
            format!("{:.3}", r.seconds),
        ]);
        w.write_record(&rec).expect("in-memory write");
    }
    write_atomic(&exp.output.join(NULL_SUMMARY), &w.into_inner().expect("in-memory flush"))?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub model_id: String,
    /// Interpretation choices that affect the numbers.
    pub design: BTreeMap<String, String>,
    /// Stream labels, all derived from `config.master_seed`.
    pub streams: BTreeMap<String, String>,
    pub completed: Vec<ResultRow>,
}

fn config_digest(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.output_dir = PathBuf::new();
    hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
}

fn design_flags() -> BTreeMap<String, String> {
    [
        ("tolerance", "relative: bracket width / upper end and |gap| / |t_alpha|"),
        ("relaxed_fallback", "accepted after max_iterations"),
        ("eps_range", "(0, eps_max], eps_max doubled up to 3 times"),
        ("threshold", "smallest null value t with #{null >= t} <= floor(alpha N)"),
        ("p_value", "(1 + #{null >= t}) / (1 + N)"),
        ("deformation_directions", "frozen per scan"),
        ("bootstrap_shuffle", "refreshed every iteration"),
        ("dataset_deformation", "applied in standardized space, then mapped back"),
        ("rng", "ChaCha8 seeded from (master_seed, label, index)"),
        ("llr_null", "rebuilt at every probed epsilon"),
        ("timings", "timings.csv, kept out of results.csv"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn stream_labels() -> BTreeMap<String, String> {
    [
        ("model", "model/0"),
        ("null", "null/{metric}/{n}, iteration i -> child null-iter/i"),
        ("scan", "scan/{deformation}/{n}, shared by all metrics"),
        ("deformation", "scan stream child deform/0"),
        ("alternative", "scan stream child rep/r"),
        ("llr_null", "scan stream child llr-null/0"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

impl Manifest {
    fn new(exp: &Experiment) -> Self {
        Self {
            schema_version: crate::config::SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: config_digest(&exp.config),
            config: exp.config.clone(),
            model_id: exp.model_id.clone(),
            design: design_flags(),
            streams: stream_labels(),
            completed: Vec::new(),
        }
    }

    fn save(&self, dir: &Path) -> std::io::Result<()> {
        write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(self)?)
    }

    /// Rows from an earlier run of the same configuration in `dir`.
    fn previous(exp: &Experiment) -> Vec<ResultRow> {
        let path = exp.output.join(MANIFEST);
        let Ok(text) = fs::read_to_string(&path) else {
            return Vec::new();
        };
        match serde_json::from_str::<Manifest>(&text) {
            Ok(m) if m.config_digest == config_digest(&exp.config) => m.completed,
            Ok(_) => {
                warn!("{} belongs to a different configuration; starting over", path.display());
                Vec::new()
            }
            Err(e) => {
                warn!("unreadable manifest {}: {e}; starting over", path.display());
                Vec::new()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScanReport {
    pub rows: Vec<ResultRow>,
    /// Rows skipped thanks to `--resume`.
    pub resumed: usize,
    pub output: PathBuf,
}

impl ScanReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| matches!(r.outcome, Outcome::Failed { .. })).count()
    }
}

fn same_row(a: &ResultRow, model: &str, r: &(DeformKind, MetricKind, usize)) -> bool {
    a.model == model && a.deformation == r.0 && a.metric == r.1 && a.n == r.2
}

/// Runs every (deformation, metric, n) row. Failures are recorded in the row
/// and the run carries on.
pub fn cmd_scan(exp: &Experiment, resume: bool) -> Result<ScanReport, CliError> {
    let cfg = &exp.config;
    let previous = if resume { Manifest::previous(exp) } else { Vec::new() };
    let mut manifest = Manifest::new(exp);
    let mut nulls: BTreeMap<(MetricKind, usize), Result<NullDistribution, String>> = BTreeMap::new();
    let mut index = Vec::new();
    let mut rows = Vec::new();
    let mut resumed = 0;

    for &n in &cfg.sample_sizes {
        for &deform in &cfg.deformations {
            for &metric in &cfg.metrics {
                let key = (deform, metric, n);
                let done = previous
                    .iter()
                    .find(|r| same_row(r, &exp.model_id, &key) && !matches!(r.outcome, Outcome::Failed { .. }));
                if let Some(done) = done {
                    info!("resume: skipping {} {} n={n}", deform.name(), metric);
                    resumed += 1;
                    rows.push(done.clone());
                    manifest.completed.push(done.clone());
                    continue;
                }
                let row = run_row(exp, key, &mut nulls, &mut index);
                manifest.completed.push(row.clone());
                manifest.save(&exp.output)?;
                rows.push(row);
            }
        }
    }
    manifest.save(&exp.output)?;
    if !index.is_empty() {
        exp.write_null_index(&index)?;
    }
    write_atomic(&exp.output.join(RESULTS_CSV), &results_csv(&rows, &cfg.alphas))?;
    write_atomic(&exp.output.join(TIMINGS_CSV), &timings_csv(&rows))?;
    let title = format!("Upper bounds on ε, {}", exp.model_id);
    write_atomic(&exp.output.join(RESULTS_MD), results_markdown(&rows, &cfg.alphas, &title).as_bytes())?;
    Ok(ScanReport { rows, resumed, output: exp.output.clone() })
}

fn run_row(
    exp: &Experiment,
    (deform, metric, n): (DeformKind, MetricKind, usize),
    nulls: &mut BTreeMap<(MetricKind, usize), Result<NullDistribution, String>>,
    index: &mut Vec<NullIndexEntry>,
) -> ResultRow {
    let mut row = ResultRow {
        model: exp.model_id.clone(),
        deformation: deform,
        metric,
        n,
        outcome: Outcome::NotApplicable,
        scan_seconds: None,
        null_seconds: None,
    };
    if metric == MetricKind::LLR && !deform.is_bijective() {
        return row;
    }
    let null = if metric == MetricKind::LLR {
        None
    } else {
        let entry = nulls.entry((metric, n)).or_insert_with(|| match exp.null(metric, n) {
            Ok((null, _, file)) => {
                index.push(NullIndexEntry { metric, n, file });
                Ok(null)
            }
            Err(e) => Err(e.to_string()),
        });
        match entry {
            Ok(null) => {
                row.null_seconds = Some(null.elapsed_seconds);
                Some(&*null)
            }
            Err(e) => {
                row.outcome = Outcome::Failed { error: format!("null: {e}") };
                return row;
            }
        }
    };
    info!("scan {} {} n={n}", deform.name(), metric);
    let problem = exp.problem(deform, metric, n);
    let stream = RngStream::new(exp.config.master_seed, scan_stream_label(deform, n), 0);
    let start = Instant::now();
    row.outcome = match scan_alphas(&problem, null, &exp.config.alphas, &stream) {
        Ok(bounds) => Outcome::Done { bounds: bounds.iter().map(BoundCells::from).collect() },
        Err(e) => {
            warn!("{} {} n={n} failed: {e}", deform.name(), metric);
            Outcome::Failed { error: e.to_string() }
        }
    };
    row.scan_seconds = Some(start.elapsed().as_secs_f64());
    row
}

/// Human-readable null summary.
pub fn format_null_summary(rows: &[NullSummaryRow]) -> String {
    let mut out = String::from("metric      n        iters   t68          t95          t99          cache\n");
    for r in rows {
        let t: Vec<String> = r.thresholds.iter().map(|(_, t)| format!("{t:<12.6}")).collect();
        out.push_str(&format!(
            "{:<11} {:<8} {:<7} {} {:?}{}\n",
            r.metric.name(),
            r.n,
            r.iterations,
            t.join(" "),
            r.status,
            if r.insufficient_tail { " (thin tail)" } else { "" }
        ));
    }
    out
}

