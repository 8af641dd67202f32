//! Command-line front end: `gen-data`, `train`, `eval`, `inspect`, `gradcheck`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{default_data_dir, generate_synthetic_corpus, Corpus, SyntheticSpec, DATA_DIR_ENV};
use crate::error::Error;
use crate::eval::{fold_recall, fuse_scores, recall_at_k, Recall, DEFAULT_KS};
use crate::gradcheck::{check_joint_loss, toy_check_config, GradCheckOptions};
use crate::inspect::{inspect_pair, write_records};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::train::{train, write_log, LOG_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Gradient-check tolerance on the maximum relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "sgraf", about = "Image-text matching with similarity graph reasoning and attention filtration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus as ROOT/train and ROOT/val.
    GenData(GenDataArgs),
    /// Train a model (or two, under the split strategy) and write the epoch log.
    Train(Box<TrainArgs>),
    /// Print retrieval recall of one model, or of two fused models.
    Eval(EvalArgs),
    /// Dump filtration weights and reasoning influence for chosen pairs.
    Inspect(InspectArgs),
    /// Finite-difference check of the full joint loss on a toy model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Corpus root; defaults to $SGRAF_DATA_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    pairs: usize,
    /// Pairs kept for training; the rest go to ROOT/val.
    #[arg(long, default_value_t = 150)]
    train_pairs: usize,
    #[arg(long, default_value_t = 20)]
    concepts: usize,
    #[arg(long, default_value_t = 8)]
    regions: usize,
    #[arg(long, default_value_t = 32)]
    d_raw: usize,
    #[arg(long, default_value_t = 7)]
    caption_len: usize,
    #[arg(long, default_value_t = 0.3)]
    filler_fraction: f64,
}

/// Flags mirroring run-configuration keys; they override `--config`.
#[derive(Debug, Args, Default)]
struct ConfigFlags {
    /// `key = value` file; omitted keys take the toy defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    branch: Option<String>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    direction: Option<String>,
    #[arg(long)]
    similarity: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    graph_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    /// Any other key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => {
                let mut c = RunConfig::toy();
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                c.apply_str(&text)?;
                c
            }
            None => RunConfig::toy(),
        };
        let pairs: [(&str, Option<String>); 13] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("branch", self.branch.clone()),
            ("strategy", self.strategy.clone()),
            ("direction", self.direction.clone()),
            ("similarity", self.similarity.clone()),
            ("steps", self.steps.map(|v| v.to_string())),
            ("graph_dim", self.graph_dim.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("margin", self.margin.map(|v| v.to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Corpus root holding train/ and optionally val/; defaults to $SGRAF_DATA_DIR.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for model files and train_log.csv.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// One model file, or two with --fuse.
    #[arg(required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Corpus split under the data root.
    #[arg(long, default_value = "val")]
    split: String,
    /// Average the scores of two models.
    #[arg(long)]
    fuse: bool,
    /// Average recall over this many equal folds of images.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Args)]
struct InspectArgs {
    model: PathBuf,
    /// Pair ids as image:caption, or a caption index meaning its own image.
    #[arg(long, value_delimiter = ',', required = true)]
    pairs: Vec<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "val")]
    split: String,
    /// JSON-lines output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Only `toy` is available.
    #[arg(long, default_value = "toy")]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Entries checked per parameter tensor; all when absent.
    #[arg(long)]
    samples: Option<usize>,
}

/// Failure carrying its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Data(_) | Error::Io { .. } | Error::ModelFormat(..) => EXIT_DATA,
            Error::NonFinite(_) => EXIT_NUMERIC,
            Error::Config(_) | Error::Invalid(_) | Error::Tensor(_) => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(*a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Inspect(a) => inspect_cmd(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn data_root(given: Option<PathBuf>) -> Result<PathBuf, Failure> {
    given
        .or_else(default_data_dir)
        .ok_or_else(|| usage(format!("no data directory: pass --data/--out or set {DATA_DIR_ENV}")))
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Error::io(path, e).into()
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let root = data_root(a.out)?;
    let spec = SyntheticSpec {
        concepts: a.concepts,
        pairs: a.pairs,
        regions: a.regions,
        d_raw: a.d_raw,
        caption_len: a.caption_len,
        filler_fraction: a.filler_fraction,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    if a.train_pairs > a.pairs {
        return Err(usage(format!("--train-pairs {} exceeds --pairs {}", a.train_pairs, a.pairs)));
    }
    let synth = generate_synthetic_corpus(&spec).map_err(Error::from)?;
    let (tr, val) = synth.corpus.split(a.train_pairs).map_err(Error::from)?;
    tr.write_dir(root.join("train")).map_err(Error::from)?;
    val.write_dir(root.join("val")).map_err(Error::from)?;
    let _ = writeln!(
        out,
        "wrote {} training and {} validation pairs to {}",
        tr.captions.len(),
        val.captions.len(),
        root.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = a.flags.resolve()?;
    let root = data_root(a.data)?;
    let tr = Corpus::read_dir(root.join("train")).map_err(Error::from)?;
    let val_dir = root.join("val");
    let val = if val_dir.is_dir() {
        Some(Corpus::read_dir(&val_dir).map_err(Error::from)?)
    } else {
        None
    };
    let _ = writeln!(out, "{}", LOG_HEADER);
    let outcome = train(&tr, val.as_ref(), &cfg, &mut |e| {
        let _ = writeln!(out, "{}", e.csv_line());
    })?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    for m in &outcome.models {
        let path = a.out.join(format!("model_{}.json", m.name));
        m.save(&path)?;
        let _ = writeln!(out, "saved {}", path.display());
    }
    write_log(a.out.join("train_log.csv"), &outcome.log)?;
    Ok(())
}

fn scores_of(model: &Model, corpus: &Corpus, threads: usize) -> Result<Tensor, Error> {
    let images = corpus.images();
    let imgs: Vec<&Tensor> = images.iter().collect();
    let txts: Vec<&[usize]> = corpus.captions.iter().map(Vec::as_slice).collect();
    Ok(model.score_raw(&imgs, &txts, threads)?.combined()?)
}

fn print_recall(out: &mut dyn Write, name: &str, r: &Recall) {
    let _ = writeln!(out, "{name}\n{r}");
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.fuse && a.models.len() != 2 {
        return Err(usage(format!("--fuse needs exactly two model files, got {}", a.models.len())));
    }
    if a.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    let root = data_root(a.data)?;
    let corpus = Corpus::read_dir(root.join(&a.split)).map_err(Error::from)?;
    let models = a.models.iter().map(Model::load).collect::<Result<Vec<_>, _>>()?;
    let mut named: Vec<(String, Tensor)> = Vec::new();
    for m in &models {
        named.push((m.name.clone(), scores_of(m, &corpus, a.threads)?));
    }
    if a.fuse {
        let fused = fuse_scores(&named[0].1, &named[1].1).map_err(Error::from)?;
        named = vec![(format!("{}+{}", named[0].0, named[1].0), fused)];
    }
    let truth = corpus.image_of_text();
    let _ = writeln!(out, "{LOG_HEADER}");
    let mut tables = Vec::new();
    for (name, s) in &named {
        match a.folds {
            Some(f) => {
                let (mean, per) = fold_recall(s, &truth, f, &DEFAULT_KS)?;
                for (i, r) in per.iter().enumerate() {
                    let _ = writeln!(out, "fold{},{name},,{}", i + 1, r.csv_fields());
                }
                let _ = writeln!(out, "mean,{name},,{}", mean.csv_fields());
                tables.push((name.clone(), mean));
            }
            None => {
                let r = recall_at_k(s, &truth, &DEFAULT_KS)?;
                let _ = writeln!(out, ",{name},,{}", r.csv_fields());
                tables.push((name.clone(), r));
            }
        }
    }
    for (name, r) in &tables {
        print_recall(out, name, r);
    }
    Ok(())
}

fn parse_pair(s: &str, corpus: &Corpus) -> Result<(usize, usize), Failure> {
    let bad = || usage(format!("bad pair id `{s}`: expected IMAGE:CAPTION or CAPTION"));
    match s.split_once(':') {
        Some((i, c)) => Ok((i.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?)),
        None => {
            let c: usize = s.trim().parse().map_err(|_| bad())?;
            let owner = corpus
                .image_of_text()
                .get(c)
                .copied()
                .ok_or_else(|| usage(format!("caption {c} outside a corpus of {}", corpus.captions.len())))?;
            Ok((owner, c))
        }
    }
}

fn inspect_cmd(a: InspectArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let root = data_root(a.data)?;
    let corpus = Corpus::read_dir(root.join(&a.split)).map_err(Error::from)?;
    let model = Model::load(&a.model)?;
    let mut records = Vec::new();
    for p in &a.pairs {
        let (i, c) = parse_pair(p, &corpus)?;
        records.push(inspect_pair(&model, &corpus, i, c)?);
    }
    match &a.out {
        Some(path) => {
            write_records(path, &records)?;
            let _ = writeln!(out, "wrote {} records to {}", records.len(), path.display());
        }
        None => {
            for r in &records {
                let _ = writeln!(out, "{}", r.to_json_line());
            }
        }
    }
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.dims != "toy" {
        return Err(usage(format!("--dims `{}`: only `toy` is available", a.dims)));
    }
    let opts = GradCheckOptions {
        samples_per_param: a.samples,
        seed: a.seed,
        ..GradCheckOptions::default()
    };
    let report = check_joint_loss(&toy_check_config(), a.seed, &opts).map_err(Error::from)?;
    let _ = writeln!(out, "{report}");
    let worst = report.max_rel_error();
    if worst < GRADCHECK_TOL {
        let _ = writeln!(out, "PASS ({} entries, {} kinks)", report.checked(), report.non_comparable());
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERIC,
            message: format!("max relative error {worst:.3e} exceeds {GRADCHECK_TOL:e}"),
        })
    }
}
