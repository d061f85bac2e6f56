//! Command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::category::{parse_spec, signature, to_dot, CategoryError, TypeObject};
use crate::inference::{evaluate_elbo, structure_posterior, train, InferenceError, TrainConfig};
use crate::model::{Checkpoint, Model, ModelError, ParamStore};
use crate::numerics::{Matrix, Stream};
use crate::sampler::{feasibility_warnings, path_between, SamplerError, WalkConfig};
use crate::transition::{intuitive_distance, transition_matrix, ArrowGraph, TransitionError};

/// Stream keys for the independent parts of a run.
const INIT_KEY: u64 = 1;
const SPLIT_KEY: u64 = 2;
const TRAIN_KEY: u64 = 3;
const EVAL_KEY: u64 = 4;
const POSTERIOR_KEY: u64 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "freecat",
    version,
    about = "Sample and learn typed generative programs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a spec file and report counts and walk feasibility.
    Validate(ValidateArgs),
    /// Draw morphisms from the prior over programs.
    Sample(SampleArgs),
    /// Fit parameters and structure preferences to a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Print `-ln P[v, dst]` for every vertex.
    Distances(DistanceArgs),
}

#[derive(Debug, Args, Clone)]
pub struct WalkArgs {
    #[arg(long, default_value_t = 2)]
    pub min_generators: usize,
    #[arg(long, default_value_t = 64)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 3)]
    pub max_macro_depth: usize,
}

impl WalkArgs {
    fn config(&self) -> WalkConfig {
        WalkConfig {
            min_generators: self.min_generators,
            max_steps: self.max_steps,
            max_macro_depth: self.max_macro_depth,
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct HyperArgs {
    /// Fixed inverse temperature; drawn from its prior when absent.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Fill every entry of W with this value; drawn from the prior when
    /// neither this nor --w-file is given.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "w_file")]
    pub w: Option<f64>,
    /// JSON file holding W as a list of rows over the arrow-graph vertices.
    #[arg(long)]
    pub w_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub walk: WalkArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub walk: WalkArgs,
    /// Write one DOT file per distinct signature into this directory.
    #[arg(long)]
    pub dot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Comma-separated rows, one sample per line.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub step_size: f64,
    #[arg(long, default_value_t = 1)]
    pub elbo_samples: usize,
    #[command(flatten)]
    pub walk: WalkArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub elbo_samples: usize,
    #[arg(long, default_value_t = 1000)]
    pub posterior_samples: usize,
    #[command(flatten)]
    pub walk: WalkArgs,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Destination object; the data object by default.
    #[arg(long)]
    pub dst: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// A failure with its process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SAMPLING: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<CategoryError> for CliError {
    fn from(e: CategoryError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        let code = match e {
            SamplerError::Config(_)
            | SamplerError::UnknownObject(_)
            | SamplerError::Category(_) => EXIT_CONFIG,
            _ => EXIT_SAMPLING,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<TransitionError> for CliError {
    fn from(e: TransitionError) -> Self {
        let code = match e {
            TransitionError::Numerics(_) => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Sampler(s) => s.into(),
            ModelError::Transition(t) => t.into(),
            ModelError::Numerics(n) => CliError {
                code: EXIT_NUMERICAL,
                message: n.to_string(),
            },
            other => CliError::config(other.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Sampler(s) => s.into(),
            InferenceError::Model(m) => m.into(),
            InferenceError::Transition(t) => t.into(),
            InferenceError::NonFiniteGradient { .. }
            | InferenceError::NonFiniteElbo
            | InferenceError::PathTermMismatch(_) => CliError {
                code: EXIT_NUMERICAL,
                message: e.to_string(),
            },
            other => CliError::config(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Ok(Model::new(parse_spec(&read(path)?)?))
}

/// Header-free comma-separated rows of decimal floats. Blank lines are
/// skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<Vec<f64>>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            line.split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("line {}: `{}`: {e}", n + 1, f.trim()))
                })
                .collect()
        })
        .collect()
}

/// Writes rows with shortest round-trip formatting.
pub fn format_dataset(rows: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for r in rows {
        let fields: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

fn load_dataset(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let rows = parse_dataset(&read(path)?).map_err(CliError::config)?;
    if rows.is_empty() {
        return Err(CliError::config(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(CliError::config(format!(
                "row {} has {} values, the data object has {dim}",
                i + 1,
                r.len()
            )));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(CliError {
                code: EXIT_NUMERICAL,
                message: format!("row {} column {} is not finite ({})", i + 1, j + 1, r[j]),
            });
        }
    }
    Ok(rows)
}

/// Resolves `--beta`/`--w`/`--w-file`, drawing missing values from the
/// Gamma(1,1) prior.
struct Hyper {
    beta: Option<f64>,
    w: Option<Matrix>,
}

impl Hyper {
    fn new(args: &HyperArgs, n: usize) -> Result<Self, CliError> {
        let w = match (&args.w, &args.w_file) {
            (Some(v), _) => Some(Matrix::filled(n, n, *v)),
            (None, Some(path)) => {
                let rows: Vec<Vec<f64>> = serde_json::from_str(&read(path)?)
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(CliError::config(format!("W must be {n}×{n}")));
                }
                Some(Matrix::from_rows(&rows))
            }
            (None, None) => None,
        };
        Ok(Hyper { beta: args.beta, w })
    }

    fn draw(&self, n: usize, rng: &mut Stream) -> (f64, Matrix) {
        let mut exp1 = || -rng.uniform_open().ln();
        let w = match &self.w {
            Some(w) => w.clone(),
            None => Matrix::from_vec(n, n, (0..n * n).map(|_| exp1()).collect()),
        };
        let beta = self.beta.unwrap_or_else(exp1);
        (beta, w)
    }

    fn is_fixed(&self) -> bool {
        self.beta.is_some() && self.w.is_some()
    }
}

/// Runs a command and returns its standard output.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Validate(a) => validate(a),
        Command::Sample(a) => sample(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Distances(a) => distances(a),
    }
}

fn validate(a: &ValidateArgs) -> Result<String, CliError> {
    let model = load_model(&a.spec)?;
    let spec = model.spec();
    let cfg = a.walk.config();
    cfg.validate()?;
    let mut out = String::new();
    let user = spec.user_generators().count();
    let macros = spec.macros().count();
    writeln!(
        out,
        "{} objects, {user} generators, {macros} macros; OK",
        spec.objects().len()
    )
    .unwrap();
    let reach = spec.reachable_from(&TypeObject::Unit);
    writeln!(
        out,
        "reachable from unit: {}/{} objects; data object `{}` reachable",
        spec.objects()
            .iter()
            .filter(|o| reach.contains(&o.object))
            .count(),
        spec.objects().len(),
        spec.object_name(spec.data_object()).unwrap_or("?"),
    )
    .unwrap();
    for w in feasibility_warnings(model.graph(), &TypeObject::Unit, model.data_object(), &cfg)? {
        writeln!(out, "warning: {w}").unwrap();
    }
    Ok(out)
}

fn sanitize(sig: &str) -> String {
    sig.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn sample(a: &SampleArgs) -> Result<String, CliError> {
    let model = load_model(&a.spec)?;
    let cfg = a.walk.config();
    let graph = model.graph().clone();
    let hyper = Hyper::new(&a.hyper, graph.len())?;
    let mut rng = Stream::new(a.seed);
    let mut hyper_rng = rng.split(0);
    let fixed = if hyper.is_fixed() {
        let (beta, w) = hyper.draw(graph.len(), &mut hyper_rng);
        Some(transition_matrix(graph.clone(), w, beta)?)
    } else {
        None
    };
    let mut out = String::new();
    let mut dots: BTreeMap<String, String> = BTreeMap::new();
    for _ in 0..a.count {
        let drawn;
        let tm = match &fixed {
            Some(tm) => tm,
            None => {
                let (beta, w) = hyper.draw(graph.len(), &mut hyper_rng);
                drawn = transition_matrix(graph.clone(), w, beta)?;
                &drawn
            }
        };
        let (m, trace) = path_between(tm, &TypeObject::Unit, model.data_object(), &cfg, &mut rng)?;
        let sig = signature(&m);
        writeln!(out, "{sig}  logp={:.6}", trace.total_path_logprob + 0.0).unwrap();
        if a.dot.is_some() {
            dots.entry(sig).or_insert_with(|| to_dot(&m));
        }
    }
    if let Some(dir) = &a.dot {
        fs::create_dir_all(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
        let mut used = BTreeMap::new();
        for (sig, text) in &dots {
            let base = sanitize(sig);
            let k = used.entry(base.clone()).or_insert(0usize);
            let name = if *k == 0 {
                format!("{base}.dot")
            } else {
                format!("{base}_{k}.dot")
            };
            *k += 1;
            write(&dir.join(name), text)?;
        }
    }
    Ok(out)
}

/// Seeded 90/10 split into (train, held-out).
pub fn split_dataset(rows: &[Vec<f64>], seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let order = Stream::new(seed).split(SPLIT_KEY).permutation(rows.len());
    let n_train = if rows.len() < 2 {
        rows.len()
    } else {
        (rows.len() * 9).div_ceil(10).min(rows.len() - 1)
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    (pick(&order[..n_train]), pick(&order[n_train..]))
}

pub fn initial_params(model: &Model, seed: u64) -> ParamStore {
    ParamStore::init(model, &mut Stream::new(seed).split(INIT_KEY))
}

fn train_cmd(a: &TrainArgs) -> Result<String, CliError> {
    let model = load_model(&a.spec)?;
    let rows = load_dataset(&a.data, model.data_dim())?;
    let (train_rows, heldout) = split_dataset(&rows, a.seed);
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        step_size: a.step_size,
        elbo_samples: a.elbo_samples,
        walk: a.walk.config(),
        seed: Stream::new(a.seed).split(TRAIN_KEY).seed(),
        ..TrainConfig::default()
    };
    let out = train(&model, initial_params(&model, a.seed), &train_rows, &cfg)?;
    fs::create_dir_all(&a.out)
        .map_err(|e| CliError::config(format!("{}: {e}", a.out.display())))?;
    let ckpt = out
        .params
        .to_checkpoint(&model, a.seed, out.steps, out.baseline);
    write(&a.out.join("checkpoint.json"), &ckpt.to_json())?;
    let mut log = String::from("epoch\telbo\tpath_logprob\tbaseline\n");
    for m in &out.metrics {
        writeln!(
            log,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            m.epoch + 1,
            m.elbo,
            m.path_logprob,
            m.baseline
        )
        .unwrap();
    }
    write(&a.out.join("metrics.tsv"), &log)?;
    write(&a.out.join("heldout.csv"), &format_dataset(&heldout))?;
    let mut s = format!(
        "trained on {} rows ({} held out), {} steps\n",
        train_rows.len(),
        heldout.len(),
        out.steps
    );
    if let Some(last) = out.metrics.last() {
        writeln!(s, "final epoch elbo={:.6}", last.elbo).unwrap();
    }
    Ok(s)
}

fn eval(a: &EvalArgs) -> Result<String, CliError> {
    let model = load_model(&a.spec)?;
    let ckpt = Checkpoint::from_json(&read(&a.checkpoint)?)
        .map_err(|e| CliError::config(format!("{}: {e}", a.checkpoint.display())))?;
    let params = ParamStore::from_checkpoint(&model, &ckpt)?;
    let rows = load_dataset(&a.data, model.data_dim())?;
    let cfg = a.walk.config();
    let root = Stream::new(a.seed);
    let est = evaluate_elbo(
        &model,
        &params,
        &rows,
        &cfg,
        a.elbo_samples,
        root.split(EVAL_KEY).seed(),
    )?;
    let post = structure_posterior(
        &model,
        &params,
        &rows,
        &cfg,
        a.posterior_samples,
        root.split(POSTERIOR_KEY).seed(),
    )?;
    let mut out = format!(
        "elbo={:.6}  stderr={:.6}  rows={}\n",
        est.value,
        est.standard_error,
        rows.len()
    );
    out.push_str("signature\tfrequency\n");
    let mut table: Vec<_> = post.into_iter().collect();
    table.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    for (sig, f) in table {
        writeln!(out, "{sig}\t{f:.6}").unwrap();
    }
    Ok(out)
}

fn distances(a: &DistanceArgs) -> Result<String, CliError> {
    let model = load_model(&a.spec)?;
    let graph: Arc<ArrowGraph> = model.graph().clone();
    let dst_obj = match &a.dst {
        Some(name) => model
            .spec()
            .object(name)
            .cloned()
            .ok_or_else(|| CliError::config(format!("unknown object `{name}`")))?,
        None => model.data_object().clone(),
    };
    let dst = graph
        .object_vertex(&dst_obj)
        .ok_or_else(|| CliError::config(format!("`{dst_obj}` is not an arrow-graph vertex")))?;
    let hyper = Hyper::new(&a.hyper, graph.len())?;
    let (beta, w) = hyper.draw(graph.len(), &mut Stream::new(a.seed));
    let tm = transition_matrix(graph.clone(), w, beta)?;
    let d = intuitive_distance(&tm, dst)?;
    let mut out = format!("vertex\tdistance_to_{}\n", graph.name(dst));
    for (i, v) in d.iter().enumerate() {
        writeln!(out, "{}\t{v:.6}", graph.name(i)).unwrap();
    }
    Ok(out)
}
