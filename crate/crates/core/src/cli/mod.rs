//! The `cpelab` command line: builds or loads a model, runs one experiment,
//! and writes `results.csv`, `effective-config.json` and `manifest.json`
//! under `<out>/<experiment>/<seed>/`.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime error,
//! 3 remote transport or protocol error.

mod config;

use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

pub use config::{
    load_config, parse_config, CollapseConfig, ConstructSource, CriticalPeriodConfig,
    ExperimentConfig, FileSource, IsolationConfig, ModelSource, ModulusConfig, NtsConfig,
    NtsPositionalConfig, PairSensitivityConfig, PeriodicConfig, RandomSource, RemoteSource,
    SsmaxCompareConfig, VerifyConfig,
};

use crate::constructive::{
    build_family_learner, build_single_learner, verify_eventual_learning, LearnabilityWitness,
    SingleLearnerSpec, DEFAULT_LEAK,
};
use crate::error::{Error, Result};
use crate::experiments::{
    collapse_probe, continuity_modulus, critical_period, fmt_f64, isolation_demo, nts_on,
    nts_positional, nts_zero, periodic_grid, ssmax_compare, ssmax_pair, write_csv, CsvTable,
    NextTokenModel, NTS_INSTRUCTION,
};
use crate::model::{random_model, TransformerModel};
use crate::remote::{prompt_pair_sensitivity, RemoteClient, RemoteModel, RequestRecord};
use crate::sequence::InfiniteSequenceSpec;
use crate::trainer::{train, TrainableConfig};

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Json(_) => 1,
        e if e.is_remote() => 3,
        _ => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    /// SHA-256 of the effective config JSON.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub code_version: String,
    /// How argmax ties are broken in every greedy prediction.
    pub tie_break: String,
    pub started: String,
    pub finished: String,
    /// Files written by the run, relative to the manifest.
    pub outputs: Vec<String>,
    /// Outbound requests, for remote models.
    pub requests: Vec<RequestRecord>,
}

#[derive(Parser, Debug)]
#[command(name = "cpelab", version, about = "Compact positional encoding transformer lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a constructive learner and write its model JSON
    #[command(subcommand)]
    Construct(ConstructCmd),
    /// Train a small model from a TrainableConfig JSON
    Train(TrainArgs),
    /// Next-token sensitivity to random perturbations of a base prompt
    Nts(NtsArgs),
    /// NTS with perturbation positions drawn from Beta-Binomial shapes
    NtsPositional(NtsPositionalArgs),
    /// Greedy continuation of periodic prompts over a (p, r) grid
    Periodic(PeriodicArgs),
    /// Smallest period whose continuation fails
    CriticalPeriod(CriticalPeriodArgs),
    /// Empirical continuity modulus D(gamma, n)
    Modulus(ModulusArgs),
    /// Agreement with a learned sequence's next token under perturbation
    Collapse(CollapseArgs),
    /// Refutation of sparse periodic targets by an all-zero learner
    Isolation(IsolationArgs),
    /// Paired NTS of a softmax model and its ssmax twin
    SsmaxCompare(SsmaxCompareArgs),
    /// Probability shift of the greedy token between prompt pairs (remote)
    PairSensitivity(PairSensitivityArgs),
    /// Check eventual learning of a sequence with margin epsilon
    Verify(VerifyArgs),
}

#[derive(Subcommand, Debug)]
enum ConstructCmd {
    /// Learner of one eventually periodic sequence
    Single {
        /// Target sequence, e.g. `constant0` or `periodic:001`
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = DEFAULT_LEAK)]
        leak: f64,
        /// Model JSON path; a manifest is written next to it
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Learner of every periodic sequence with a period in the list
    Family {
        #[arg(long, value_delimiter = ',', required = true)]
        periods: Vec<usize>,
        #[arg(long)]
        sharpness: Option<f64>,
        #[arg(long)]
        max_lag: Option<usize>,
        #[arg(long, short)]
        output: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config JSON; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// RNG seed; generated and printed when omitted
    #[arg(long)]
    seed: Option<u64>,
    /// Model JSON file, replacing the config's model source
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TrainableConfig JSON
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct NtsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    /// Base prompt sequence; all zeros by default
    #[arg(long)]
    base: Option<String>,
}

#[derive(Args, Debug)]
struct NtsPositionalArgs {
    #[command(flatten)]
    common: Common,
    /// Shape pairs `u:v`, comma separated
    #[arg(long, value_delimiter = ',', value_parser = parse_shape)]
    shapes: Option<Vec<(f64, f64)>>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
}

#[derive(Args, Debug)]
struct PeriodicArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    periods: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    repeats: Option<Vec<usize>>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct CriticalPeriodArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    p_max: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct ModulusArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    base: Option<String>,
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Debug)]
struct CollapseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    spec: Option<String>,
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct IsolationArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "N")]
    horizon: Option<usize>,
}

#[derive(Args, Debug)]
struct SsmaxCompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
}

#[derive(Args, Debug)]
struct PairSensitivityArgs {
    #[command(flatten)]
    common: Common,
    /// JSON file holding a list of `[alpha, beta]` prompt pairs
    #[arg(long)]
    pairs: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long = "N")]
    horizon: Option<usize>,
}

fn parse_shape(s: &str) -> std::result::Result<(f64, f64), String> {
    let (u, v) = s.split_once(':').ok_or_else(|| format!("expected u:v, got {s:?}"))?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok((num(u)?, num(v)?))
}

/// Flag overrides, keyed by config field.
type Overrides = Vec<(&'static str, Value)>;

fn push<T: Serialize>(o: &mut Overrides, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        o.push((key, serde_json::to_value(v).expect("plain values serialize")));
    }
}

fn experiment_args(cmd: &Command) -> Option<(&'static str, &Common, Overrides)> {
    let mut o = Overrides::new();
    let (name, common) = match cmd {
        Command::Nts(a) => {
            push(&mut o, "gamma", &a.gamma);
            push(&mut o, "samples", &a.samples);
            push(&mut o, "length", &a.length);
            push(&mut o, "base", &a.base);
            ("nts", &a.common)
        }
        Command::NtsPositional(a) => {
            push(&mut o, "shapes", &a.shapes);
            push(&mut o, "gamma", &a.gamma);
            push(&mut o, "samples", &a.samples);
            push(&mut o, "length", &a.length);
            ("nts-positional", &a.common)
        }
        Command::Periodic(a) => {
            push(&mut o, "periods", &a.periods);
            push(&mut o, "repeats", &a.repeats);
            push(&mut o, "steps", &a.steps);
            ("periodic", &a.common)
        }
        Command::CriticalPeriod(a) => {
            push(&mut o, "r", &a.r);
            push(&mut o, "p_max", &a.p_max);
            push(&mut o, "steps", &a.steps);
            ("critical-period", &a.common)
        }
        Command::Modulus(a) => {
            push(&mut o, "base", &a.base);
            push(&mut o, "gamma", &a.gamma);
            push(&mut o, "n", &a.n);
            push(&mut o, "samples", &a.samples);
            ("modulus", &a.common)
        }
        Command::Collapse(a) => {
            push(&mut o, "spec", &a.spec);
            push(&mut o, "gamma", &a.gamma);
            push(&mut o, "samples", &a.samples);
            push(&mut o, "n", &a.n);
            ("collapse", &a.common)
        }
        Command::Isolation(a) => {
            push(&mut o, "k", &a.k);
            push(&mut o, "epsilon", &a.eps);
            push(&mut o, "horizon", &a.horizon);
            ("isolation", &a.common)
        }
        Command::SsmaxCompare(a) => {
            push(&mut o, "s", &a.s);
            push(&mut o, "gamma", &a.gamma);
            push(&mut o, "samples", &a.samples);
            push(&mut o, "length", &a.length);
            ("ssmax-compare", &a.common)
        }
        Command::PairSensitivity(a) => ("pair-sensitivity", &a.common),
        Command::Verify(a) => {
            push(&mut o, "spec", &a.spec);
            push(&mut o, "epsilon", &a.eps);
            push(&mut o, "n0", &a.n0);
            push(&mut o, "horizon", &a.horizon);
            ("verify", &a.common)
        }
        Command::Construct(_) | Command::Train(_) => return None,
    };
    Some((name, common, o))
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code; diagnostics go to standard error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(&cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: &Command, argv: &[String]) -> Result<()> {
    match cmd {
        Command::Construct(c) => construct(c, argv),
        Command::Train(a) => run_train(a, argv),
        Command::PairSensitivity(a) => {
            let mut o = Overrides::new();
            if let Some(path) = &a.pairs {
                o.push(("pairs", config::read_json(path)?));
            }
            let config = assemble("pair-sensitivity", &a.common, o)?;
            execute(config, &a.common.out, argv)
        }
        _ => {
            let (name, common, o) = experiment_args(cmd).expect("experiment subcommand");
            let config = assemble(name, common, o)?;
            execute(config, &common.out, argv)
        }
    }
}

fn fresh_seed() -> u64 {
    let seed = u64::from(rand::random::<u32>());
    eprintln!("seed: {seed}");
    seed
}

/// Merges the config file, flag overrides and seed into a validated config.
fn assemble(name: &str, common: &Common, overrides: Overrides) -> Result<ExperimentConfig> {
    let mut value = match &common.config {
        Some(path) => config::read_json(path)?,
        None => json!({}),
    };
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
    match obj.get("experiment") {
        Some(Value::String(e)) if e != name => {
            return Err(Error::Config(format!(
                "config is for experiment `{e}`, not `{name}`"
            )))
        }
        Some(_) => {}
        None if common.config.is_none() => {
            obj.insert("experiment".into(), json!(name));
        }
        None => {}
    }
    for (k, v) in overrides {
        obj.insert(k.into(), v);
    }
    if let Some(m) = &common.model {
        obj.insert("model".into(), json!({ "file": m }));
    }
    if let Some(s) = common.seed {
        obj.insert("seed".into(), json!(s));
    }
    let mut config = parse_config(value)?;
    if config.seed().is_none() {
        config.set_seed(fresh_seed());
    }
    Ok(config)
}

enum Loaded {
    Local(TransformerModel),
    Remote(RemoteModel),
}

impl Loaded {
    fn as_dyn(&self) -> &dyn NextTokenModel {
        match self {
            Loaded::Local(m) => m,
            Loaded::Remote(m) => m,
        }
    }

    fn local(&self, experiment: &str) -> Result<&TransformerModel> {
        match self {
            Loaded::Local(m) => Ok(m),
            Loaded::Remote(_) => Err(Error::Config(format!(
                "{experiment} needs a local model, not a remote endpoint"
            ))),
        }
    }

    fn requests(&self) -> Vec<RequestRecord> {
        match self {
            Loaded::Local(_) => Vec::new(),
            Loaded::Remote(m) => m.client().records(),
        }
    }
}

fn load_model_file(path: &Path) -> Result<TransformerModel> {
    let text = std::fs::read_to_string(path)?;
    let model: TransformerModel = serde_json::from_str(&text)?;
    model.validate()?;
    Ok(model)
}

fn load_model(source: &ModelSource, run_seed: u64) -> Result<Loaded> {
    Ok(match source {
        ModelSource::Construct(c) => match c {
            ConstructSource::Family(spec) => Loaded::Local(build_family_learner(spec)?.model),
            single => Loaded::Local(build_single_learner(
                &single.single_spec().expect("single variant"),
            )?),
        },
        ModelSource::File(f) => Loaded::Local(load_model_file(&f.file)?),
        ModelSource::Random(r) => Loaded::Local(random_model(&r.random, r.seed.unwrap_or(run_seed))?),
        ModelSource::Remote(r) => Loaded::Remote(RemoteModel::new(
            RemoteClient::new(r.remote.clone())?,
            r.alphabet.clone(),
        )),
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> String {
    Utc::now().to_rfc3339()
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

struct MarginTable<'a>(&'a LearnabilityWitness);

impl CsvTable for MarginTable<'_> {
    fn header(&self) -> Vec<&'static str> {
        vec!["n", "margin", "checked", "passes"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        let w = self.0;
        w.margins
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let n = i + 1;
                let checked = n >= w.n0;
                vec![
                    n.to_string(),
                    fmt_f64(*m),
                    checked.to_string(),
                    (*m >= w.epsilon).to_string(),
                ]
            })
            .collect()
    }
}

struct LossCurve<'a>(&'a [f64]);

impl CsvTable for LossCurve<'_> {
    fn header(&self) -> Vec<&'static str> {
        vec!["step", "loss"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, l)| vec![i.to_string(), fmt_f64(*l)])
            .collect()
    }
}

fn execute(config: ExperimentConfig, out: &Path, argv: &[String]) -> Result<()> {
    let started = now();
    let seed = config.seed().expect("seed resolved before execution");
    let name = config.name();
    let dir = out.join(name).join(seed.to_string());
    std::fs::create_dir_all(&dir)?;
    let effective = serde_json::to_string_pretty(&config)? + "\n";
    std::fs::write(dir.join("effective-config.json"), &effective)?;
    let mut outputs = vec!["effective-config.json".to_string(), "results.csv".to_string()];

    let loaded = load_model(config.model(), seed)?;
    let model = loaded.as_dyn();
    let results = dir.join("results.csv");
    let outcome = (|| -> Result<()> {
        match &config {
            ExperimentConfig::Nts(c) => {
                let rows = match &c.base {
                    Some(spec) => nts_on(model, NTS_INSTRUCTION, &spec.prefix(c.length), &c.gamma, c.samples, seed)?,
                    None => nts_zero(model, &c.gamma, c.samples, c.length, seed)?,
                };
                write_csv(rows.as_slice(), &results)
            }
            ExperimentConfig::NtsPositional(c) => {
                let rows = nts_positional(model, &c.shapes, c.gamma, c.samples, c.length, seed)?;
                write_csv(rows.as_slice(), &results)
            }
            ExperimentConfig::Periodic(c) => {
                let rows = periodic_grid(model, &c.periods, &c.repeats, c.steps)?;
                write_csv(rows.as_slice(), &results)
            }
            ExperimentConfig::CriticalPeriod(c) => {
                let scan = critical_period(model, c.r, c.p_max, c.steps)?;
                match scan.critical {
                    Some(p) => println!("critical period: {p}"),
                    None => println!("critical period: none up to {}", c.p_max),
                }
                write_csv(&scan, &results)
            }
            ExperimentConfig::Modulus(c) => {
                let mut gammas = c.gamma.clone();
                gammas.sort_by(f64::total_cmp);
                let table = continuity_modulus(model, &c.base, &gammas, &c.n, c.samples, seed)?;
                write_csv(&table, &results)
            }
            ExperimentConfig::Collapse(c) => {
                let m = loaded.local(name)?;
                let r = collapse_probe(m, &c.spec, &c.gamma, c.samples, c.n, seed)?;
                for w in &r.warnings {
                    eprintln!("warning: {w}");
                }
                write_csv(&r, &results)
            }
            ExperimentConfig::Isolation(c) => {
                let m = loaded.local(name)?;
                let r = isolation_demo(m, &c.k, c.epsilon, c.horizon)?;
                for w in &r.warnings {
                    eprintln!("warning: {w}");
                }
                write_csv(&r, &results)
            }
            ExperimentConfig::SsmaxCompare(c) => {
                let m = loaded.local(name)?;
                let twin = ssmax_pair(m, c.s)?;
                let r = ssmax_compare(m, &twin, &c.gamma, c.samples, c.length, seed)?;
                println!(
                    "mean NTS softmax {} ssmax {} diff {}",
                    r.mean_softmax, r.mean_ssmax, r.mean_diff
                );
                write_csv(&r, &results)
            }
            ExperimentConfig::PairSensitivity(c) => {
                let Loaded::Remote(m) = &loaded else {
                    return Err(Error::Config("pair-sensitivity needs a remote model".into()));
                };
                let rows = prompt_pair_sensitivity(m.client(), &c.pairs)?;
                write_csv(rows.as_slice(), &results)
            }
            ExperimentConfig::Verify(c) => {
                let m = loaded.local(name)?;
                let w = verify_eventual_learning(m, &c.spec, c.epsilon, c.n0, c.horizon)?;
                write_json(&dir.join("witness.json"), &w)?;
                outputs.push("witness.json".into());
                let summary = json!({
                    "verdict": w.verdict,
                    "epsilon": w.epsilon,
                    "n0": w.n0,
                    "horizon": w.horizon,
                    "first_failing": w.first_failing,
                    "min_margin": w.min_margin(),
                });
                println!("{summary}");
                write_csv(&MarginTable(&w), &results)
            }
        }
    })();
    let requests = loaded.requests();
    // a remote failure still leaves the request log behind
    if outcome.is_err() && requests.is_empty() {
        return outcome;
    }
    if outcome.is_err() {
        outputs.retain(|o| o != "results.csv");
    }
    let manifest = RunManifest {
        command_line: argv.to_vec(),
        config_hash: sha256_hex(effective.as_bytes()),
        seed: Some(seed),
        code_version: env!("CARGO_PKG_VERSION").into(),
        tie_break: "lowest-index".into(),
        started,
        finished: now(),
        outputs,
        requests,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    outcome?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn construct(cmd: &ConstructCmd, argv: &[String]) -> Result<()> {
    let started = now();
    let (model, spec_json, output) = match cmd {
        ConstructCmd::Single {
            target,
            leak,
            output,
        } => {
            let target: InfiniteSequenceSpec = target.parse()?;
            let spec = SingleLearnerSpec::new(target, *leak);
            (build_single_learner(&spec)?, serde_json::to_value(&spec)?, output)
        }
        ConstructCmd::Family {
            periods,
            sharpness,
            max_lag,
            output,
        } => {
            let spec = config::family_spec(periods.clone(), *sharpness, *max_lag);
            let learner = build_family_learner(&spec)?;
            eprintln!("family learner epsilon: {}", learner.epsilon);
            (learner.model, serde_json::to_value(&spec)?, output)
        }
    };
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_json(output, &model)?;
    let manifest_path = output.with_extension("manifest.json");
    let manifest = RunManifest {
        command_line: argv.to_vec(),
        config_hash: sha256_hex(spec_json.to_string().as_bytes()),
        seed: None,
        code_version: env!("CARGO_PKG_VERSION").into(),
        tie_break: "lowest-index".into(),
        started,
        finished: now(),
        outputs: vec![file_name(output)],
        requests: Vec::new(),
    };
    write_json(&manifest_path, &manifest)?;
    eprintln!("wrote {}", output.display());
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn run_train(a: &TrainArgs, argv: &[String]) -> Result<()> {
    let started = now();
    let mut value = config::read_json(&a.config)?;
    let obj: &mut Map<String, Value> = value
        .as_object_mut()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
    if let Some(s) = a.seed {
        obj.insert("seed".into(), json!(s));
    }
    if !obj.contains_key("seed") {
        obj.insert("seed".into(), json!(fresh_seed()));
    }
    if let Some(s) = a.steps {
        obj.insert("steps".into(), json!(s));
    }
    if let Some(lr) = a.lr {
        obj.insert("lr".into(), json!(lr));
    }
    let config: TrainableConfig = serde_path_to_error::deserialize(value)
        .map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))?;
    config.validate()?;
    let dir = a.out.join("train").join(config.seed.to_string());
    std::fs::create_dir_all(&dir)?;
    let effective = serde_json::to_string_pretty(&config)? + "\n";
    std::fs::write(dir.join("effective-config.json"), &effective)?;
    let outcome = train(&config)?;
    write_json(&dir.join("model.json"), &outcome.model)?;
    write_csv(&LossCurve(&outcome.losses), &dir.join("losses.csv"))?;
    if outcome.clamp_hits > 0 {
        eprintln!("warning: attention score clamp hit {} times", outcome.clamp_hits);
    }
    if let Some(last) = outcome.losses.last() {
        println!("final loss {last}");
    }
    let manifest = RunManifest {
        command_line: argv.to_vec(),
        config_hash: sha256_hex(effective.as_bytes()),
        seed: Some(config.seed),
        code_version: env!("CARGO_PKG_VERSION").into(),
        tie_break: "lowest-index".into(),
        started,
        finished: now(),
        outputs: vec!["effective-config.json".into(), "model.json".into(), "losses.csv".into()],
        requests: Vec::new(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_cover_every_error() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 1);
        assert_eq!(exit_code(&Error::Transport("x".into())), 3);
        assert_eq!(exit_code(&Error::IncompatibleServer("x".into())), 3);
        assert_eq!(exit_code(&Error::AuthMissing("X".into())), 3);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 2);
        assert_eq!(exit_code(&Error::Divergence { step: 1, loss: f64::NAN }), 2);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 2);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["cpelab", "nts", "--bogus"]), 1);
        assert_eq!(run(["cpelab"]), 1);
        assert_eq!(run(["cpelab", "nts", "--help"]), 0);
    }

    #[test]
    fn shapes_parse() {
        assert_eq!(parse_shape("8:1").unwrap(), (8.0, 1.0));
        assert!(parse_shape("8").is_err());
    }
}
