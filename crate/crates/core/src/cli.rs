//! The `splatcost` command line.
//!
//! Every subcommand writes a `manifest.json` next to its outputs recording the
//! full configuration (defaults included), the seed, wall-clock bounds and a
//! SHA-256 of every artifact. Exit codes: 0 success, 1 internal error,
//! 2 usage or input error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{max_perturbation, naive_tv_attack, poison_dataset, AttackConfig};
use crate::error::{Error, Result};
use crate::profile::{correlate, summarize, sweep_gaussians_vs_cost, write_sweep_csv, CostMetrics};
use crate::scene::{
    gen_scene, load_dataset_with_background, read_attack_sidecar, save_dataset, save_like, write_attack_sidecar, SceneSpec,
    ATTACK_SIDECAR_FILE, STANDARD_TEXTURE_FREQUENCY, TRANSFORMS_FILE,
};
use crate::train::{train, TrainConfig};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "SPLATCOST_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_RECORD_FILE: &str = "train_record.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ATTACK_LOG_FILE: &str = "attack_log.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CORRELATIONS_FILE: &str = "correlations.csv";
pub const SWEEP_MEMORY_FILE: &str = "memory.csv";

/// Artifacts whose content depends on wall-clock measurements.
const TIMING_ARTIFACTS: [&str; 4] = [TRAIN_RECORD_FILE, METRICS_FILE, SWEEP_FILE, CORRELATIONS_FILE];

#[derive(Debug, Parser)]
#[command(name = "splatcost", version, about = "CPU Gaussian splatting and computation-cost poisoning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a victim model and record its cost.
    Train(TrainArgs),
    /// Poison a dataset to inflate the victim's training cost.
    Attack(AttackArgs),
    /// Compare the cost metrics of several runs against the first.
    Report(ReportArgs),
    /// Measure memory and iteration time across Gaussian counts.
    Sweep(SweepArgs),
    /// Render a synthetic multi-view dataset.
    Genscene(GenSceneArgs),
    /// Check a poisoned dataset's perturbation budget and camera poses.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON training config; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub max_gaussians: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON attack config; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-view TV ascent without a proxy model.
    #[arg(long)]
    pub naive: bool,
    /// L∞ budget: a number, a fraction such as `16/255`, or `inf`.
    #[arg(long, value_parser = parse_epsilon)]
    pub epsilon: Option<Budget>,
    /// Sign-ascent step size (same syntax as --epsilon, finite).
    #[arg(long, value_parser = parse_fraction)]
    pub eta: Option<f64>,
    /// Outer iterations.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Ascent steps per outer iteration.
    #[arg(long)]
    pub inner_steps: Option<usize>,
    /// Iterations for the proxy's warm-up training.
    #[arg(long)]
    pub proxy_iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories containing metrics.csv; ratios are taken against the first.
    #[arg(required = true, num_args = 2..)]
    pub runs: Vec<PathBuf>,
    /// Also write the table here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset to sweep on; the standard generated scene when omitted.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![500, 1000, 2000, 4000, 8000])]
    pub counts: Vec<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    /// JSON scene spec; the standard three-primitive scene when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub texture_frequency: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub poisoned: PathBuf,
    /// Budget to check; read from the poisoned dataset's attack.json when omitted.
    #[arg(long, value_parser = parse_epsilon)]
    pub epsilon: Option<Budget>,
}

/// `--epsilon` value: `None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget(pub Option<f64>);

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| format!("bad number '{a}'"))?, b.trim().parse().map_err(|_| format!("bad number '{b}'"))?);
            if b == 0.0 {
                return Err("division by zero".into());
            }
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("bad number '{s}'"))?,
    };
    if !(v.is_finite() && v >= 0.0) {
        return Err(format!("'{s}' must be finite and non-negative"));
    }
    Ok(v)
}

fn parse_epsilon(s: &str) -> std::result::Result<Budget, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "none" | "unbounded" => Ok(Budget(None)),
        _ => parse_fraction(s).map(|v| Budget(Some(v))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHash {
    pub sha256: String,
    pub timing_dependent: bool,
}

/// Provenance record written by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub dataset: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: Option<u64>,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Keyed by path relative to the output directory.
    pub artifacts: BTreeMap<String, ArtifactHash>,
}

impl RunManifest {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?)?)
    }

    /// Hashes of the artifacts that must be identical across seeded reruns.
    pub fn deterministic_hashes(&self) -> BTreeMap<&str, &str> {
        self.artifacts
            .iter()
            .filter(|(_, a)| !a.timing_dependent)
            .map(|(k, a)| (k.as_str(), a.sha256.as_str()))
            .collect()
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.strip_prefix(root).ok() != Some(Path::new(MANIFEST_FILE)) {
            out.push(path);
        }
    }
    Ok(())
}

struct Run {
    command: &'static str,
    argv: Vec<String>,
    started: f64,
}

impl Run {
    fn finish(self, config: impl Serialize, dataset: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
        let mut files = Vec::new();
        collect_files(out, out, &mut files)?;
        let mut artifacts = BTreeMap::new();
        for path in files {
            let rel = path.strip_prefix(out).expect("collected under out").to_string_lossy().replace('\\', "/");
            let timing_dependent = TIMING_ARTIFACTS.contains(&rel.as_str());
            artifacts.insert(rel, ArtifactHash { sha256: sha256_file(&path)?, timing_dependent });
        }
        let manifest = RunManifest {
            command: self.command.into(),
            argv: self.argv,
            config: serde_json::to_value(config)?,
            dataset: dataset.map(Path::to_path_buf),
            output: out.to_path_buf(),
            seed,
            threads: rayon::current_num_threads(),
            started_unix: self.started,
            finished_unix: unix_now(),
            artifacts,
        };
        fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

/// Reads a config file, which may also be a manifest whose snapshot is reused.
fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    if let Some(snapshot) = value.get("config").filter(|_| value.get("artifacts").is_some()) {
        value = snapshot.clone();
    }
    serde_json::from_value(value).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn write_csv_file(path: &Path, f: impl FnOnce(fs::File) -> Result<()>) -> Result<()> {
    f(fs::File::create(path)?)
}

fn cmd_train(args: TrainArgs, run: Run) -> Result<()> {
    let mut config: TrainConfig = read_config(args.config.as_deref())?;
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    if let Some(cap) = args.max_gaussians {
        config.max_gaussians = Some(cap);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let dataset = load_dataset_with_background(&args.dataset, config.background)?;
    fs::create_dir_all(&args.out)?;
    let (model, record) = train(&dataset, &config)?;
    let metrics = summarize(&record, &model, &dataset, &config)?;
    fs::write(args.out.join(MODEL_FILE), serde_json::to_string(&model.to_checkpoint())?)?;
    write_csv_file(&args.out.join(TRAIN_RECORD_FILE), |f| record.write_csv(f))?;
    write_csv_file(&args.out.join(METRICS_FILE), |f| metrics.write_csv(f))?;
    println!(
        "trained {} iterations: {} gaussians, {:.2} MB peak, {:.2} min, {:.2} dB",
        config.iterations,
        metrics.final_gaussians,
        metrics.peak_mem_bytes as f64 / 1e6,
        metrics.total_minutes,
        metrics.final_psnr_db
    );
    let seed = config.seed;
    run.finish(&config, Some(&args.dataset), &args.out, Some(seed))
}

fn cmd_attack(args: AttackArgs, run: Run) -> Result<()> {
    let mut config: AttackConfig = read_config(args.config.as_deref())?;
    if let Some(Budget(e)) = args.epsilon {
        config.epsilon = e;
    }
    if args.eta.is_some() {
        config.eta = args.eta;
    }
    if let Some(t) = args.steps {
        config.outer_iterations = t;
    }
    if let Some(t) = args.inner_steps {
        config.inner_steps = t;
    }
    if let Some(n) = args.proxy_iterations {
        config.proxy.iterations = n;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.proxy.seed = seed;
    }
    config.validate()?;
    let dataset = load_dataset_with_background(&args.dataset, config.proxy.background)?;
    fs::create_dir_all(&args.out)?;
    let poisoned = if args.naive {
        naive_tv_attack(&dataset, &config)?
    } else {
        let (poisoned, log) = poison_dataset(&dataset, &config)?;
        write_csv_file(&args.out.join(ATTACK_LOG_FILE), |f| log.write_csv(f))?;
        poisoned
    };
    save_like(&poisoned.dataset, &args.dataset, &args.out)?;
    write_attack_sidecar(&args.out, &poisoned.config)?;
    println!(
        "poisoned {} views: mean TV {:.1} -> {:.1}, max deviation {:.4}",
        dataset.len(),
        dataset.mean_tv(),
        poisoned.dataset.mean_tv(),
        max_perturbation(&dataset, &poisoned.dataset)?
    );
    #[derive(Serialize)]
    struct Snapshot<'a> {
        naive: bool,
        #[serde(flatten)]
        attack: &'a AttackConfig,
    }
    let seed = config.seed;
    run.finish(Snapshot { naive: args.naive, attack: &config }, Some(&args.dataset), &args.out, Some(seed))
}

/// One line per run with ratios against the first run, formatted to two decimals.
pub fn report_table(runs: &[(String, CostMetrics)]) -> Result<String> {
    let Some((_, base)) = runs.first() else { return Err(Error::InvalidArgument("no runs to report".into())) };
    let ratio = |a: f64, b: f64| if b == 0.0 { f64::NAN } else { a / b };
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record([
        "run",
        "gaussians",
        "peak_mem_bytes",
        "minutes",
        "fps",
        "psnr_db",
        "gaussians_ratio",
        "mem_ratio",
        "minutes_ratio",
        "fps_ratio",
    ])?;
    for (name, m) in runs {
        out.write_record([
            name.clone(),
            m.final_gaussians.to_string(),
            m.peak_mem_bytes.to_string(),
            format!("{:.4}", m.total_minutes),
            format!("{:.2}", m.render_fps),
            format!("{:.2}", m.final_psnr_db),
            format!("{:.2}", ratio(m.final_gaussians as f64, base.final_gaussians as f64)),
            format!("{:.2}", ratio(m.peak_mem_bytes as f64, base.peak_mem_bytes as f64)),
            format!("{:.2}", ratio(m.total_minutes, base.total_minutes)),
            format!("{:.2}", ratio(m.render_fps, base.render_fps)),
        ])?;
    }
    let bytes = out.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn cmd_report(args: ReportArgs, run: Run) -> Result<()> {
    let mut runs = Vec::with_capacity(args.runs.len());
    for dir in &args.runs {
        let path = dir.join(METRICS_FILE);
        let file = fs::File::open(&path)
            .map_err(|_| Error::InvalidArgument(format!("missing metrics file {}", path.display())))?;
        runs.push((dir.display().to_string(), CostMetrics::read_csv(file)?));
    }
    let table = report_table(&runs)?;
    print!("{table}");
    if let Some(out) = args.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(&out, &table)?;
        let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        // the report's directory may be shared, so only the table itself is hashed
        let mut artifacts = BTreeMap::new();
        let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        artifacts.insert(name, ArtifactHash { sha256: sha256_file(&out)?, timing_dependent: false });
        let manifest = RunManifest {
            command: run.command.into(),
            argv: run.argv,
            config: serde_json::json!({ "runs": args.runs }),
            dataset: None,
            output: out.clone(),
            seed: None,
            threads: rayon::current_num_threads(),
            started_unix: run.started,
            finished_unix: unix_now(),
            artifacts,
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs, run: Run) -> Result<()> {
    let mut config: TrainConfig = read_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    if args.counts.is_empty() || args.counts.contains(&0) {
        return Err(Error::InvalidArgument("counts must be positive".into()));
    }
    let dataset = match &args.dataset {
        Some(path) => load_dataset_with_background(path, config.background)?,
        None => gen_scene(&SceneSpec::standard(STANDARD_TEXTURE_FREQUENCY))?,
    };
    fs::create_dir_all(&args.out)?;
    let rows = sweep_gaussians_vs_cost(&dataset, &args.counts, &config)?;
    write_csv_file(&args.out.join(SWEEP_FILE), |f| write_sweep_csv(&rows, f))?;
    // the memory model is analytic, so this half of the sweep is reproducible
    let mut memory = csv::Writer::from_path(args.out.join(SWEEP_MEMORY_FILE))?;
    memory.write_record(["count", "mem_bytes"])?;
    for r in &rows {
        memory.write_record([r.count.to_string(), r.mem_bytes.to_string()])?;
    }
    memory.flush()?;
    if rows.len() >= 3 {
        let counts: Vec<f64> = rows.iter().map(|r| r.count as f64).collect();
        let mut out = csv::Writer::from_path(args.out.join(CORRELATIONS_FILE))?;
        out.write_record(["pair", "pearson_r", "spearman_rho"])?;
        for (name, ys) in [
            ("count_vs_mem_bytes", rows.iter().map(|r| r.mem_bytes as f64).collect::<Vec<_>>()),
            ("count_vs_ms_per_iter", rows.iter().map(|r| r.ms_per_iter).collect()),
            ("count_vs_fps", rows.iter().map(|r| r.fps).collect()),
        ] {
            let (r, rho) = correlate(&counts, &ys)?;
            println!("{name}: pearson {r:.4}, spearman {rho:.4}");
            out.write_record([name.to_string(), format!("{r:.6}"), format!("{rho:.6}")])?;
        }
        out.flush()?;
    }
    let seed = config.seed;
    #[derive(Serialize)]
    struct Snapshot<'a> {
        counts: &'a [usize],
        train: &'a TrainConfig,
    }
    run.finish(Snapshot { counts: &args.counts, train: &config }, args.dataset.as_deref(), &args.out, Some(seed))
}

fn cmd_genscene(args: GenSceneArgs, run: Run) -> Result<()> {
    let mut spec: SceneSpec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => SceneSpec::standard(STANDARD_TEXTURE_FREQUENCY),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(f) = args.texture_frequency {
        spec = spec.with_texture_frequency(f);
    }
    spec.validate()?;
    let dataset = gen_scene(&spec)?;
    save_dataset(&dataset, &args.out)?;
    println!("wrote {} views to {} (mean TV {:.1})", dataset.len(), args.out.display(), dataset.mean_tv());
    let seed = spec.seed;
    run.finish(&spec, None, &args.out, Some(seed))
}

/// Outcome of checking a poisoned dataset against its clean source.
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub views: usize,
    pub poses_identical: bool,
    pub max_deviation: f64,
    pub epsilon: Option<f64>,
}

impl Validation {
    pub fn passed(&self) -> bool {
        self.poses_identical && self.epsilon.is_none_or(|e| self.max_deviation <= e + 1e-9)
    }
}

fn transform_matrices(dir: &Path) -> Result<(serde_json::Value, Vec<serde_json::Value>)> {
    let path = dir.join(TRANSFORMS_FILE);
    if !path.is_file() {
        return Err(Error::DatasetNotFound(dir.to_path_buf()));
    }
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?)
        .map_err(|e| Error::MalformedDataset(format!("{}: {e}", path.display())))?;
    let frames = v["frames"]
        .as_array()
        .ok_or_else(|| Error::MalformedDataset(format!("{} has no frames", path.display())))?;
    Ok((v["camera_angle_x"].clone(), frames.iter().map(|f| f["transform_matrix"].clone()).collect()))
}

/// Checks that the poses in `transforms.json` match exactly and every 8-bit
/// pixel lies within `epsilon` of its clean counterpart.
pub fn validate_poisoned(clean: &Path, poisoned: &Path, epsilon: Option<f64>) -> Result<Validation> {
    let (angle_a, mats_a) = transform_matrices(clean)?;
    let (angle_b, mats_b) = transform_matrices(poisoned)?;
    let a = load_dataset_with_background(clean, [1.0; 3])?;
    let b = load_dataset_with_background(poisoned, [1.0; 3])?;
    if a.len() != b.len() {
        return Err(Error::dims(format!("{} views", a.len()), format!("{} views", b.len())));
    }
    let poses_identical = angle_a == angle_b && mats_a == mats_b && a.poses() == b.poses();
    Ok(Validation { views: a.len(), poses_identical, max_deviation: max_perturbation(&a, &b)?, epsilon })
}

fn cmd_validate(args: ValidateArgs) -> Result<bool> {
    let epsilon = match args.epsilon {
        Some(Budget(e)) => e,
        None => match read_attack_sidecar(&args.poisoned)? {
            Some(sidecar) => sidecar.epsilon,
            None => {
                return Err(Error::InvalidArgument(format!(
                    "no --epsilon given and no {ATTACK_SIDECAR_FILE} in {}",
                    args.poisoned.display()
                )))
            }
        },
    };
    let v = validate_poisoned(&args.clean, &args.poisoned, epsilon)?;
    let budget = epsilon.map_or("unbounded".to_string(), |e| format!("{e:.6}"));
    println!(
        "{}: {} views, poses {}, max deviation {:.6} (budget {budget})",
        if v.passed() { "PASS" } else { "FAIL" },
        v.views,
        if v.poses_identical { "identical" } else { "DIFFER" },
        v.max_deviation
    );
    Ok(v.passed())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    // a pool that already exists (repeated in-process calls) is kept
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() {
        2
    } else {
        1
    }
}

/// Parses `args` (program name first) and runs the command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    let argv = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let run_of = |command| Run { command, argv, started: unix_now() };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, run_of("train")),
        Command::Attack(a) => cmd_attack(a, run_of("attack")),
        Command::Report(a) => cmd_report(a, run_of("report")),
        Command::Sweep(a) => cmd_sweep(a, run_of("sweep")),
        Command::Genscene(a) => cmd_genscene(a, run_of("genscene")),
        Command::Validate(a) => match cmd_validate(a) {
            Ok(true) => Ok(()),
            Ok(false) => return 2,
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_syntax() {
        assert_eq!(parse_epsilon("16/255"), Ok(Budget(Some(16.0 / 255.0))));
        assert_eq!(parse_epsilon("0.1"), Ok(Budget(Some(0.1))));
        assert_eq!(parse_epsilon("inf"), Ok(Budget(None)));
        assert!(parse_epsilon("-1").is_err());
        assert!(parse_epsilon("1/0").is_err());
        assert!(parse_fraction("inf").is_err());
    }

    fn metrics(g: usize) -> CostMetrics {
        CostMetrics {
            peak_mem_bytes: 1000 * g as u64,
            total_minutes: g as f64,
            final_gaussians: g,
            render_fps: 10.0,
            final_psnr_db: 30.0,
            final_loss: 0.1,
        }
    }

    #[test]
    fn report_ratios_against_first_run() {
        let table = report_table(&[("clean".into(), metrics(185)), ("poisoned".into(), metrics(1147))]).unwrap();
        let lines: Vec<_> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with("1.00,1.00,1.00,1.00"));
        assert!(lines[2].contains(",6.20,6.20,6.20,1.00"), "{}", lines[2]);
    }

    #[test]
    fn identical_runs_report_unit_ratios() {
        let table = report_table(&[("a".into(), metrics(7)), ("b".into(), metrics(7)), ("c".into(), metrics(14))]).unwrap();
        let lines: Vec<_> = table.lines().collect();
        assert!(lines[2].ends_with("1.00,1.00,1.00,1.00"));
        assert!(lines[3].ends_with("2.00,2.00,2.00,1.00"));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["splatcost"]), 2);
        assert_eq!(run(["splatcost", "report", "only-one"]), 2);
        assert_eq!(run(["splatcost", "attack", "--dataset", "x", "--out", "y", "--epsilon", "abc"]), 2);
        assert_eq!(run(["splatcost", "--help"]), 0);
    }
}
