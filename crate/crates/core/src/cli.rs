//! Command-line front end: one JSON config, six subcommands, JSON reports.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::rademacher::{rademacher_estimate, ParametricClass, RademacherEstimate};
use crate::bounds::verify::{verify_all, PropositionOptions, VerificationReport, VerifyOptions};
use crate::bounds::{dudley_bound, theorem2_details, BoundReport, ClassSpec, DudleyOptions};
use crate::data::{generate, split, GeneratorSpec};
use crate::error::{Error, Result};
use crate::flows::FlowConfig;
use crate::model::{Dataset, ReconstructionMap};
use crate::sampling::derive_seed;
use crate::train::{fit, FitReport, HistoryEntry, ModelSpec, RestartOutcome, TrainConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATIONS: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "immersion", version, about = "Fit flow-composition reconstruction maps and bound their risk")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `output_dir` from the config.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its train/test split.
    Gen,
    /// Fit a reconstruction map on the training split.
    Fit,
    /// Evaluate a fitted model on both splits.
    Eval,
    /// Compute the entropy-integral bound and excess-risk certificate.
    Bound,
    /// Estimate the empirical Rademacher complexity of the model class.
    Rademacher,
    /// Run the sampled perturbation and net checks.
    Verify,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Synthetic data to generate.
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    /// Existing CSV file, relative to the config file.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RademacherSection {
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_inner_restarts")]
    pub restarts: usize,
    #[serde(default = "default_inner_iters")]
    pub max_iters: usize,
}

fn default_draws() -> usize {
    8
}

fn default_inner_restarts() -> usize {
    1
}

fn default_inner_iters() -> usize {
    300
}

impl Default for RademacherSection {
    fn default() -> Self {
        RademacherSection {
            draws: default_draws(),
            restarts: default_inner_restarts(),
            max_iters: default_inner_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    /// Explicit class description; derived from `model` when absent.
    #[serde(default)]
    pub class: Option<ClassSpec>,
    /// Sample size; defaults to the training split size.
    #[serde(default)]
    pub n: Option<usize>,
    /// Radius of `K`; defaults to the generator's radius bound, then to the
    /// data support radius.
    #[serde(default)]
    pub k_radius: Option<f64>,
    #[serde(default)]
    pub dudley: DudleyOptions,
    #[serde(default = "default_delta_conf")]
    pub delta_conf: f64,
    /// Rademacher value for the certificate; defaults to a previously
    /// written Rademacher estimate, then to the entropy-integral bound.
    #[serde(default)]
    pub rademacher_value: Option<f64>,
    #[serde(default)]
    pub rademacher: RademacherSection,
}

fn default_delta_conf() -> f64 {
    0.1
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection {
            class: None,
            n: None,
            k_radius: None,
            dudley: DudleyOptions::default(),
            delta_conf: default_delta_conf(),
            rademacher_value: None,
            rademacher: RademacherSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default)]
    pub lemmas: VerifyOptions,
    #[serde(default)]
    pub proposition: PropositionOptions,
}

/// The whole run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// Replaces `model.flow` when present.
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub bounds: Option<BoundsSection>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Parses a config document, reporting the path of the offending field.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            path,
            message: e.inner().to_string(),
        }
    })
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// A loaded config plus everything resolved from the command line.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub config_hash: String,
    pub output_dir: PathBuf,
    pub base_dir: PathBuf,
    pub seed: Option<u64>,
}

impl Run {
    pub fn load(config_path: &Path, output_dir: Option<PathBuf>, seed: Option<u64>) -> Result<Run> {
        let bytes = fs::read(config_path).map_err(|e| Error::io(config_path, e))?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| config_error("", "config is not UTF-8"))?;
        let config = parse_config(&text)?;
        let base_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let output_dir = match output_dir {
            Some(d) => d,
            None => base_dir.join(config.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))),
        };
        let seed = seed.or(config.seed);
        let run = Run {
            config,
            config_hash: sha256_hex(&bytes),
            output_dir,
            base_dir,
            seed,
        };
        run.validate()?;
        Ok(run)
    }

    /// Checks every present section before any computation runs.
    fn validate(&self) -> Result<()> {
        let c = &self.config;
        let at = |path: &'static str| move |e: Error| config_error(path, e.to_string());
        if let Some(d) = &c.data {
            if let Some(g) = &d.generator {
                g.validate().map_err(at("data.generator"))?;
            }
            if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
                return Err(config_error("data.train_fraction", "must lie in (0, 1)"));
            }
        }
        if let Some(m) = &c.model {
            m.validate(m.family.dim).map_err(at("model"))?;
        }
        if let Some(f) = &c.flow {
            f.validate().map_err(at("flow"))?;
        }
        if let Some(t) = &c.train {
            t.validate().map_err(at("train"))?;
        }
        if let Some(b) = &c.bounds {
            if let Some(cs) = &b.class {
                cs.validate().map_err(at("bounds.class"))?;
            }
            if !(b.delta_conf > 0.0 && b.delta_conf < 1.0) {
                return Err(config_error("bounds.delta_conf", "must lie in (0, 1)"));
            }
            if b.rademacher.draws < 2 {
                return Err(config_error("bounds.rademacher.draws", "must be at least 2"));
            }
        }
        if let Some(v) = &c.verify {
            v.lemmas.validate().map_err(at("verify.lemmas"))?;
        }
        Ok(())
    }

    fn data_section(&self) -> Result<&DataSection> {
        self.config.data.as_ref().ok_or_else(|| config_error("data", "section is required"))
    }

    fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = self
            .config
            .model
            .clone()
            .ok_or_else(|| config_error("model", "section is required"))?;
        if let Some(f) = self.config.flow {
            spec.flow = f;
        }
        Ok(spec)
    }

    fn train_config(&self) -> TrainConfig {
        let mut t = self.config.train.clone().unwrap_or_default();
        if let Some(s) = self.seed {
            t.seed = derive_seed(s, 1);
        }
        t
    }

    fn bounds(&self) -> BoundsSection {
        self.config.bounds.clone().unwrap_or_default()
    }

    fn seed_or(&self, stream: u64, fallback: u64) -> u64 {
        self.seed.map_or(fallback, |s| derive_seed(s, stream))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn generator(&self) -> Result<GeneratorSpec> {
        let mut g = self
            .data_section()?
            .generator
            .clone()
            .ok_or_else(|| config_error("data.generator", "needed to generate data"))?;
        if let Some(s) = self.seed {
            g.seed = s;
        }
        Ok(g)
    }

    fn split_seed(&self) -> Result<u64> {
        let g = self.data_section()?.generator.as_ref().map_or(0, |g| g.seed);
        Ok(self.seed_or(2, g))
    }

    /// Train and test splits: from `data.path` if given, else from the files
    /// written by `gen`, else generated in memory.
    fn splits(&self) -> Result<(Dataset, Dataset)> {
        let section = self.data_section()?;
        if let Some(p) = &section.path {
            let all = Dataset::load(&self.base_dir.join(p))?;
            return split(&all, section.train_fraction, self.split_seed()?);
        }
        let (train, test) = (self.out("train.csv"), self.out("test.csv"));
        if train.exists() && test.exists() {
            return Ok((Dataset::load(&train)?, Dataset::load(&test)?));
        }
        if section.generator.is_some() {
            let all = generate(&self.generator()?)?;
            return split(&all, section.train_fraction, self.split_seed()?);
        }
        Err(Error::io(&train, std::io::Error::new(std::io::ErrorKind::NotFound, "run `gen` first")))
    }

    fn envelope<T: Serialize>(&self, command: &str, report: T) -> Envelope<T> {
        Envelope {
            tool: "immersion".into(),
            version: VERSION.into(),
            command: command.into(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            report,
        }
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        write_atomic(&self.out(name), text.as_bytes())
    }
}

/// Common header of every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub report: T,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: GeneratorSpec,
    pub n: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub support_radius: f64,
    pub radius_bound: f64,
}

pub fn cmd_gen(run: &Run) -> Result<Manifest> {
    let spec = run.generator()?;
    let section = run.data_section()?;
    let all = generate(&spec)?;
    let split_seed = run.split_seed()?;
    let (train, test) = split(&all, section.train_fraction, split_seed)?;
    for (name, d) in [("data.csv", &all), ("train.csv", &train), ("test.csv", &test)] {
        write_atomic(&run.out(name), d.to_csv_string()?.as_bytes())?;
    }
    let manifest = Manifest {
        radius_bound: spec.radius_bound(),
        generator: spec,
        n: all.n(),
        n_train: train.n(),
        n_test: test.n(),
        train_fraction: section.train_fraction,
        split_seed,
        support_radius: all.support_radius(),
    };
    run.write_json("manifest.json", &run.envelope("gen", &manifest))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub final_empirical_risk: f64,
    pub n_train: usize,
    pub best_restart: usize,
    pub restart_risks: Vec<Option<f64>>,
    pub restarts: Vec<RestartOutcome>,
    pub iterations: usize,
    pub train: TrainConfig,
    pub model: ModelSpec,
    pub tolerances: FitTolerances,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitTolerances {
    pub gradient_tolerance: f64,
    pub flow_step_size_max: f64,
    pub flow_min_steps: usize,
}

fn history_csv(history: &[HistoryEntry]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for h in history {
        w.serialize(h)?;
    }
    w.into_inner().map_err(|e| Error::io("history.csv", e.into_error()))
}

pub fn cmd_fit(run: &Run) -> Result<FitSummary> {
    let spec = run.model_spec()?;
    let cfg = run.train_config();
    let (train, _) = run.splits()?;
    spec.validate(train.dim()).map_err(|e| config_error("model", e.to_string()))?;
    let report: FitReport = fit(&train, &spec, &cfg)?;
    let model = &report.best_model;
    run.write_json("model.json", model)?;
    write_atomic(&run.out("history.csv"), &history_csv(&report.history)?)?;
    let summary = FitSummary {
        final_empirical_risk: report.final_empirical_risk,
        n_train: train.n(),
        best_restart: report.best_restart,
        restart_risks: report.restart_risks.clone(),
        restarts: report.restarts.clone(),
        iterations: report.history.len(),
        tolerances: FitTolerances {
            gradient_tolerance: cfg.tolerance,
            flow_step_size_max: spec.flow.step_size_max,
            flow_min_steps: spec.flow.min_steps,
        },
        train: cfg,
        model: spec,
    };
    run.write_json("fit_report.json", &run.envelope("fit", &summary))?;
    Ok(summary)
}

fn load_model(run: &Run) -> Result<ReconstructionMap> {
    let path = run.out("model.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub train_risk: f64,
    pub test_risk: f64,
    pub generalization_gap: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub flow_step_size_max: f64,
}

pub fn cmd_eval(run: &Run) -> Result<EvalSummary> {
    let model = load_model(run)?;
    let (train, test) = run.splits()?;
    let train_risk = model.empirical_risk(&train)?;
    let test_risk = model.empirical_risk(&test)?;
    let summary = EvalSummary {
        train_risk,
        test_risk,
        generalization_gap: test_risk - train_risk,
        n_train: train.n(),
        n_test: test.n(),
        flow_step_size_max: model.flow_config().step_size_max,
    };
    run.write_json("eval_report.json", &run.envelope("eval", &summary))?;
    Ok(summary)
}

/// The class to bound and the default sample size.
fn class_for(run: &Run) -> Result<(ClassSpec, Option<usize>)> {
    let b = run.bounds();
    let n_train = run.config.data.as_ref().and_then(|_| run.splits().ok()).map(|(t, _)| t);
    if let Some(cs) = b.class {
        return Ok((cs, n_train.map(|t| t.n())));
    }
    let spec = run.model_spec()?;
    let generator_bound = run
        .config
        .data
        .as_ref()
        .and_then(|d| d.generator.as_ref())
        .map(|g| g.radius_bound());
    let radius = match (b.k_radius, generator_bound, &n_train) {
        (Some(r), _, _) => r,
        (None, Some(r), _) => r,
        (None, None, Some(t)) => t.support_radius(),
        (None, None, None) => return Err(config_error("bounds.k_radius", "needed when no data is configured")),
    };
    let block = run.train_config().weight_projection_radius;
    let cs = ClassSpec::for_model(&spec, radius, block).map_err(|e| config_error("model", e.to_string()))?;
    Ok((cs, n_train.map(|t| t.n())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundSummary {
    pub class: ClassSpec,
    pub rademacher_source: String,
    #[serde(flatten)]
    pub bound: BoundReport,
}

pub fn cmd_bound(run: &Run) -> Result<BoundSummary> {
    let b = run.bounds();
    let (class, n_default) = class_for(run)?;
    let n = b
        .n
        .or(n_default)
        .ok_or_else(|| config_error("bounds.n", "needed when no data is configured"))?;
    let mut report = dudley_bound(&class, n, &b.dudley).map_err(|e| config_error("bounds", e.to_string()))?;
    let (value, source) = match b.rademacher_value {
        Some(v) => (v, "config".to_string()),
        None => match read_rademacher(run) {
            Some(v) => (v, "rademacher_report.json (lower estimate)".to_string()),
            None => (report.dudley_value, "entropy integral bound".to_string()),
        },
    };
    report.theorem2 = Some(theorem2_details(report.diameter, n, b.delta_conf, value)?);
    let summary = BoundSummary {
        class,
        rademacher_source: source,
        bound: report,
    };
    run.write_json("bound_report.json", &run.envelope("bound", &summary))?;
    Ok(summary)
}

fn read_rademacher(run: &Run) -> Option<f64> {
    let text = fs::read_to_string(run.out("rademacher_report.json")).ok()?;
    let env: Envelope<RademacherSummary> = serde_json::from_str(&text).ok()?;
    (env.config_hash == run.config_hash).then_some(env.report.estimate.estimate)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RademacherSummary {
    pub estimate: RademacherEstimate,
    pub settings: RademacherSection,
    pub note: String,
}

pub fn cmd_rademacher(run: &Run) -> Result<RademacherSummary> {
    let b = run.bounds();
    let spec = run.model_spec()?;
    let (train, _) = run.splits()?;
    spec.validate(train.dim()).map_err(|e| config_error("model", e.to_string()))?;
    let inner = TrainConfig {
        restarts: b.rademacher.restarts,
        max_iters: b.rademacher.max_iters,
        ..run.train_config()
    };
    inner.validate().map_err(|e| config_error("bounds.rademacher", e.to_string()))?;
    let seed = run.seed_or(3, inner.seed);
    let class = ParametricClass {
        data: train,
        spec,
        train: inner,
    };
    let estimate = rademacher_estimate(&class, b.rademacher.draws, seed)?;
    let summary = RademacherSummary {
        estimate,
        settings: b.rademacher,
        note: "inner supremum found by optimization; the estimate is a lower estimate".into(),
    };
    run.write_json("rademacher_report.json", &run.envelope("rademacher", &summary))?;
    Ok(summary)
}

pub fn cmd_verify(run: &Run) -> Result<VerificationReport> {
    let v = run.config.verify.clone().unwrap_or_default();
    let report = verify_all(&v.lemmas, &v.proposition, run.seed_or(4, 0))?;
    run.write_json("verification_report.json", &run.envelope("verify", &report))?;
    Ok(report)
}

/// Maps an error onto the documented exit codes.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Io { .. } | Error::Csv(_) | Error::Json(_) => EXIT_IO,
        e if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

/// Runs one subcommand and returns the process exit code, printing a
/// one-line summary or the error.
pub fn run_command(cli: &Cli) -> i32 {
    let Some(config) = &cli.config else {
        eprintln!("error: --config is required");
        return EXIT_CONFIG;
    };
    let result = Run::load(config, cli.output_dir.clone(), cli.seed).and_then(|run| {
        Ok(match cli.command {
            Command::Gen => {
                let m = cmd_gen(&run)?;
                println!("generated {} points ({} train / {} test)", m.n, m.n_train, m.n_test);
                EXIT_OK
            }
            Command::Fit => {
                let s = cmd_fit(&run)?;
                println!("final empirical risk {}", s.final_empirical_risk);
                EXIT_OK
            }
            Command::Eval => {
                let s = cmd_eval(&run)?;
                println!("train risk {} test risk {}", s.train_risk, s.test_risk);
                EXIT_OK
            }
            Command::Bound => {
                let s = cmd_bound(&run)?;
                println!("entropy integral bound {} (up to absolute constant)", s.bound.dudley_value);
                EXIT_OK
            }
            Command::Rademacher => {
                let s = cmd_rademacher(&run)?;
                println!("rademacher estimate {} ± {}", s.estimate.estimate, s.estimate.std_err);
                EXIT_OK
            }
            Command::Verify => {
                let r = cmd_verify(&run)?;
                println!("{} violations", r.violations);
                if r.violations > 0 {
                    EXIT_VIOLATIONS
                } else {
                    EXIT_OK
                }
            }
        })
    });
    match result {
        Ok(code) => code,
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
    fn missing_field_reports_path() {
        let text = r#"{"data": {"generator": {"shape": "segment", "d": 2}}}"#;
        match parse_config(text) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "data.generator");
                assert!(message.contains("`n`"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = parse_config(r#"{"datta": {}}"#).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        let e = parse_config(r#"{"train": {"learning_rate": 0.1, "lr": 1}}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path.starts_with("train")));
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
