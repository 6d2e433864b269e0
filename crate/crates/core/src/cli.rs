//! Command-line front end.
//!
//! Flags override an optional TOML config file; nothing is read from the
//! environment. Exit codes: 0 success, 1 usage, 2 data, 3 verification.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::TrainConfig;
use crate::data::{gen_synthetic, load_corpus, save_corpus, split, toy_embed, Corpus, SyntheticSpec};
use crate::detector::{detector_train, tiny_gradcheck, DetectorMode, DetectorModel, DomainSource, Prediction};
use crate::error::{Error, Result};
use crate::eval::{
    compare_modes, format_table, report, transfer_compare, EpochMetrics, EvalReport, HarnessOptions, ModeComparison,
};
use crate::membership::{membership_pretrain, DomainId, MembershipModel};
use crate::numcore::{Precision, Real};

#[derive(Debug, Parser)]
#[command(name = "fuzzy-fnd", version, about = "Multi-domain fake news detection with fuzzy domain labels")]
pub struct Cli {
    /// TOML training configuration; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Default, Args)]
struct Overrides {
    /// Adam learning rate.
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    membership_epochs: Option<usize>,
    #[arg(long, global = true)]
    membership_batch_size: Option<usize>,
    #[arg(long, global = true)]
    detector_epochs: Option<usize>,
    #[arg(long, global = true)]
    detector_batch_size: Option<usize>,
    /// Maximum sequence length including [CLS] and [SEP].
    #[arg(long, global = true)]
    max_len: Option<usize>,
    /// Comma-separated run seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    precision: Option<PrecisionArg>,
    /// Number of experts T.
    #[arg(long, global = true)]
    experts: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Standard,
    High,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Fuzzy,
    Baseline,
    Uniform,
}

impl From<ModeArg> for DetectorMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fuzzy => DetectorMode::Fuzzy,
            ModeArg::Baseline => DetectorMode::Baseline,
            ModeArg::Uniform => DetectorMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SourceArg {
    Gold,
    Membership,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    /// Every record of the corpus.
    All,
    /// The held-out part of the seeded training split.
    Validation,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus with embeddings.
    GenData(GenDataArgs),
    /// Fill missing embeddings from text with the toy embedder.
    Embed(EmbedArgs),
    /// Pretrain and freeze the membership function.
    TrainMembership(TrainMembershipArgs),
    /// Train experts, gate and classifier.
    TrainDetector(TrainDetectorArgs),
    /// Score checkpoints, or train and compare modes over all seeds.
    Evaluate(EvaluateArgs),
    /// Zero-shot evaluation on a corpus without domain labels.
    TransferEval(TransferArgs),
    /// Fake probability per item, optionally with g and alpha.
    Predict(PredictArgs),
    /// Finite-difference check of a tiny model in f64.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generator parameters as TOML; flags below override it.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    mixed_fraction: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    name: Option<String>,
    /// Use the domain-shifted companion spec (flat proportions, more mixing).
    #[arg(long)]
    shifted: bool,
    /// Drop domain labels from the written corpus.
    #[arg(long)]
    strip_domains: bool,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Write here instead of updating the corpus in place.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    /// Recompute embeddings that already exist.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct TrainMembershipArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Append per-epoch metrics as JSON lines.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainDetectorArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Frozen membership checkpoint; required in fuzzy mode.
    #[arg(long, value_name = "CKPT")]
    membership: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Detector checkpoints to score, one table row each.
    #[arg(long = "model", value_name = "CKPT")]
    models: Vec<PathBuf>,
    /// Train membership and every mode per seed instead of loading models.
    #[arg(long, conflicts_with = "models")]
    train: bool,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModeArg::Fuzzy, ModeArg::Baseline, ModeArg::Uniform])]
    modes: Vec<ModeArg>,
    #[arg(long, value_enum, default_value_t = SplitArg::Validation)]
    split: SplitArg,
    /// Seed of the split when scoring checkpoints.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SourceArg::Gold)]
    domain_source: SourceArg,
    /// Per-seed checkpoints of a --train run.
    #[arg(long)]
    workdir: Option<PathBuf>,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TransferArgs {
    /// Evaluation corpus; domain labels are ignored.
    #[arg(long)]
    corpus_b: PathBuf,
    #[arg(long, value_name = "CKPT", requires = "baseline")]
    fuzzy: Option<PathBuf>,
    #[arg(long, value_name = "CKPT", requires = "fuzzy")]
    baseline: Option<PathBuf>,
    /// Membership used by a baseline checkpoint that carries none.
    #[arg(long, value_name = "CKPT")]
    membership: Option<PathBuf>,
    /// Train on this corpus per seed instead of loading checkpoints.
    #[arg(long, conflicts_with_all = ["fuzzy", "baseline"])]
    corpus_a: Option<PathBuf>,
    #[arg(long)]
    workdir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    text: Option<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Domain label for a baseline model; otherwise the membership argmax.
    #[arg(long)]
    domain: Option<String>,
    /// Also print the fuzzy label g and the gate weights alpha.
    #[arg(long)]
    explain: bool,
    /// Print JSON lines instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(v) = o.lr {
        cfg.lr = v;
    }
    if let Some(v) = o.membership_epochs {
        cfg.membership.epochs = v;
    }
    if let Some(v) = o.membership_batch_size {
        cfg.membership.batch_size = v;
    }
    if let Some(v) = o.detector_epochs {
        cfg.detector.epochs = v;
    }
    if let Some(v) = o.detector_batch_size {
        cfg.detector.batch_size = v;
    }
    if let Some(v) = o.max_len {
        cfg.max_len = v;
    }
    if let Some(v) = &o.seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = o.precision {
        cfg.precision = match v {
            PrecisionArg::Standard => Precision::Standard,
            PrecisionArg::High => Precision::High,
        };
    }
    if let Some(v) = o.experts {
        cfg.model.experts = v;
    }
    if let Some(Command::TrainDetector(a)) = &cli.command {
        if let Some(m) = a.mode {
            cfg.mode = m.into();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::usage("no command given (try --help)"));
    };
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Embed(a) => embed(a, &cfg),
        Command::TrainMembership(a) => match cfg.precision {
            Precision::Standard => train_membership::<f32>(a, &cfg),
            Precision::High => train_membership::<f64>(a, &cfg),
        },
        Command::TrainDetector(a) => match cfg.precision {
            Precision::Standard => train_detector::<f32>(a, &cfg),
            Precision::High => train_detector::<f64>(a, &cfg),
        },
        Command::Evaluate(a) => match cfg.precision {
            Precision::Standard => evaluate::<f32>(a, &cfg),
            Precision::High => evaluate::<f64>(a, &cfg),
        },
        Command::TransferEval(a) => match cfg.precision {
            Precision::Standard => transfer::<f32>(a, &cfg),
            Precision::High => transfer::<f64>(a, &cfg),
        },
        Command::Predict(a) => match cfg.precision {
            Precision::Standard => predict::<f32>(a, &cfg),
            Precision::High => predict::<f64>(a, &cfg),
        },
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::usage(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(v) = a.n {
        spec.n = v;
    }
    if let Some(v) = a.mixed_fraction {
        spec.mixed_fraction = v;
    }
    if let Some(v) = a.dim {
        spec.dim = v;
    }
    if let Some(v) = a.name {
        spec.name = v;
    }
    if a.shifted {
        spec = spec.shifted();
    }
    let mut corpus = gen_synthetic(&spec, a.seed)?;
    if a.strip_domains {
        corpus = corpus.strip_domains();
    }
    save_corpus(&corpus, &a.out)?;
    let mixed = corpus.records.iter().filter(|r| r.is_mixed()).count();
    println!(
        "wrote {} records ({mixed} mixed, dim {}) to {}",
        corpus.len(),
        corpus.dim,
        a.out.display()
    );
    Ok(())
}

fn embed(a: EmbedArgs, cfg: &TrainConfig) -> Result<()> {
    let mut corpus = load_corpus(&a.corpus)?;
    let dim = a.dim.unwrap_or(if corpus.dim == 0 { cfg.model.dim } else { corpus.dim });
    if a.force {
        for r in &mut corpus.records {
            if r.text.is_some() {
                r.embeddings = None;
            }
        }
        corpus.dim = 0;
    }
    let filled = corpus.ensure_embeddings(dim, cfg.max_len)?;
    let out = a.out.as_deref().unwrap_or(&a.corpus);
    save_corpus(&corpus, out)?;
    println!("embedded {filled} of {} records (dim {dim}) into {}", corpus.len(), out.display());
    Ok(())
}

fn load_training_corpus(path: &Path, cfg: &TrainConfig) -> Result<Corpus> {
    let mut corpus = load_corpus(path)?;
    corpus.clip_embeddings(cfg.max_len)?;
    Ok(corpus)
}

fn append_log(path: Option<&Path>, logs: &[EpochMetrics]) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for m in logs {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn print_epochs(logs: &[EpochMetrics]) {
    for m in logs {
        println!(
            "{} seed {} epoch {:>2}  train_loss {:.4}  val_loss {:.4}  val_f1 {:.4}",
            m.phase, m.seed, m.epoch, m.train_loss, m.val_loss, m.val_f1
        );
    }
}

fn train_membership<S: Real>(a: TrainMembershipArgs, cfg: &TrainConfig) -> Result<()> {
    let corpus = load_training_corpus(&a.corpus, cfg)?;
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let (model, logs) = membership_pretrain::<S>(&corpus, cfg, seed)?;
    print_epochs(&logs);
    append_log(a.log.as_deref(), &logs)?;
    model.save(&a.out)?;
    println!("saved frozen membership model to {}", a.out.display());
    Ok(())
}

fn train_detector<S: Real>(a: TrainDetectorArgs, cfg: &TrainConfig) -> Result<()> {
    let membership = match &a.membership {
        Some(path) => Some(MembershipModel::<S>::load(path)?),
        None if cfg.mode == DetectorMode::Fuzzy => {
            return Err(Error::usage(
                "fuzzy mode needs a membership checkpoint: pass --membership (run train-membership first)",
            ))
        }
        None => None,
    };
    let corpus = load_training_corpus(&a.corpus, cfg)?;
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let (model, logs) = detector_train(&corpus, cfg, membership, seed)?;
    print_epochs(&logs);
    append_log(a.log.as_deref(), &logs)?;
    model.save(&a.out)?;
    println!("saved {} detector to {}", model.mode(), a.out.display());
    Ok(())
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn harness_logs(cmp: &ModeComparison) -> Vec<EpochMetrics> {
    cmp.outcomes.iter().flat_map(|o| o.logs.iter().cloned()).collect()
}

fn print_seed_lines(cmp: &ModeComparison, transfer: bool) {
    for o in &cmp.outcomes {
        let reports = if transfer { &o.transfer } else { &o.in_domain };
        let cells: Vec<String> = cmp
            .modes
            .iter()
            .zip(reports)
            .map(|(m, r)| {
                let mixed = r.mixed.f1.map_or("-".into(), |v| format!("{v:.4}"));
                format!("{m} {:.4} (mixed {mixed})", r.overall_f1())
            })
            .collect();
        println!("seed {}: membership macro-F1 {:.4}; {}", o.seed, o.membership_f1, cells.join("; "));
    }
}

fn evaluate<S: Real>(a: EvaluateArgs, cfg: &TrainConfig) -> Result<()> {
    let corpus = load_training_corpus(&a.corpus, cfg)?;
    if a.train {
        let opts = HarnessOptions {
            modes: a.modes.iter().map(|&m| m.into()).collect(),
            transfer: None,
            workdir: a.workdir.clone(),
            jobs: a.jobs,
        };
        let cmp = compare_modes::<S>(&corpus, cfg, &opts)?;
        append_log(a.log.as_deref(), &harness_logs(&cmp))?;
        print_seed_lines(&cmp, false);
        let means: Vec<EvalReport> = cmp.in_domain.iter().map(|r| r.mean.clone()).collect();
        print!("{}", format_table(&means));
        println!("mean membership macro-F1 {:.4}", cmp.mean_membership_f1());
        return write_json(a.json.as_deref(), &cmp.in_domain);
    }
    if a.models.is_empty() {
        return Err(Error::usage("evaluate needs --model CKPT or --train"));
    }
    let data = match a.split {
        SplitArg::All => corpus,
        SplitArg::Validation => split(&corpus, cfg.train_fraction, a.seed.unwrap_or(cfg.seeds[0]))?.1,
    };
    let source = match a.domain_source {
        SourceArg::Gold => DomainSource::Gold,
        SourceArg::Membership => DomainSource::Membership,
    };
    let reports = a
        .models
        .iter()
        .map(|path| report(&DetectorModel::<S>::load(path)?, &data, source))
        .collect::<Result<Vec<_>>>()?;
    print!("{}", format_table(&reports));
    write_json(a.json.as_deref(), &reports)
}

fn transfer<S: Real>(a: TransferArgs, cfg: &TrainConfig) -> Result<()> {
    let corpus_b = load_training_corpus(&a.corpus_b, cfg)?.strip_domains();
    if let Some(path_a) = &a.corpus_a {
        let corpus_a = load_training_corpus(path_a, cfg)?;
        let opts = HarnessOptions {
            modes: vec![DetectorMode::Fuzzy, DetectorMode::Baseline],
            transfer: Some(&corpus_b),
            workdir: a.workdir.clone(),
            jobs: a.jobs,
        };
        let cmp = compare_modes::<S>(&corpus_a, cfg, &opts)?;
        append_log(a.log.as_deref(), &harness_logs(&cmp))?;
        print_seed_lines(&cmp, true);
        let means: Vec<EvalReport> = cmp.transfer.iter().map(|r| r.mean.clone()).collect();
        print!("{}", format_table(&means));
        println!("fuzzy - baseline: {:+.4}", means[0].overall_f1() - means[1].overall_f1());
        return write_json(a.json.as_deref(), &cmp.transfer);
    }
    let (Some(fuzzy_path), Some(baseline_path)) = (&a.fuzzy, &a.baseline) else {
        return Err(Error::usage("transfer-eval needs --fuzzy and --baseline checkpoints, or --corpus-a"));
    };
    let fuzzy = DetectorModel::<S>::load(fuzzy_path)?;
    let mut baseline = DetectorModel::<S>::load(baseline_path)?;
    if baseline.membership().is_none() {
        let m = match &a.membership {
            Some(path) => MembershipModel::load(path)?,
            None => fuzzy.membership().expect("fuzzy checkpoints carry membership").clone(),
        };
        baseline.set_membership(m)?;
    }
    let cmp = transfer_compare(&fuzzy, &baseline, &corpus_b)?;
    print!("{}", format_table(&[cmp.fuzzy.clone(), cmp.baseline.clone()]));
    println!("fuzzy - baseline: {:+.4}", cmp.gap());
    write_json(a.json.as_deref(), &cmp)
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    prob: f64,
    fake: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    domain: Option<DomainId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    g: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<Vec<f64>>,
}

fn print_prediction(out: &mut impl Write, id: &str, p: &Prediction, explain: bool, json: bool) -> std::io::Result<()> {
    let fake = p.prob >= crate::eval::THRESHOLD;
    if json {
        let line = PredictionLine {
            id,
            prob: p.prob,
            fake,
            domain: p.domain,
            g: explain.then(|| p.fuzzy.map(|g| g.grades().to_vec())).flatten(),
            alpha: explain.then(|| p.alpha.as_slice().to_vec()),
        };
        return writeln!(out, "{}", serde_json::to_string(&line).expect("prediction serializes"));
    }
    writeln!(out, "{id}\t{:.6}\t{}", p.prob, if fake { "fake" } else { "real" })?;
    if explain {
        if let Some(g) = &p.fuzzy {
            let mut top: Vec<(DomainId, f64)> = DomainId::all().map(|d| (d, g.grade(d))).collect();
            top.sort_by(|a, b| b.1.total_cmp(&a.1));
            let shown: Vec<String> = top.iter().take(3).map(|(d, v)| format!("{d} {v:.3}")).collect();
            writeln!(out, "  g: {}", shown.join(", "))?;
        }
        if let Some(d) = p.domain {
            writeln!(out, "  domain: {d}")?;
        }
        let alpha: Vec<String> = p.alpha.as_slice().iter().map(|v| format!("{v:.3}")).collect();
        writeln!(out, "  alpha: [{}]", alpha.join(", "))?;
    }
    Ok(())
}

/// Stdout errors end the listing; a closed pipe is not a failure.
fn stdout_result(r: std::io::Result<()>) -> Result<()> {
    match r {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(|e| Error::io("<stdout>", e)),
    }
}

fn predict<S: Real>(a: PredictArgs, cfg: &TrainConfig) -> Result<()> {
    let model = DetectorModel::<S>::load(&a.model)?;
    let domain = a.domain.as_deref().map(DomainId::from_name).transpose()?;
    if let Some(text) = &a.text {
        let seq = toy_embed(text, model.dims().dim, cfg.max_len)?;
        let p = model.predict(&seq, domain)?;
        return stdout_result(print_prediction(&mut std::io::stdout().lock(), "input", &p, a.explain, a.json));
    }
    let path = a.corpus.as_ref().expect("clap requires text or corpus");
    let mut corpus = load_training_corpus(path, cfg)?;
    if let Some(d) = domain {
        corpus.records.iter_mut().for_each(|r| r.domain = Some(d));
    }
    let source = if corpus.missing_domains().is_empty() {
        DomainSource::Gold
    } else {
        DomainSource::Membership
    };
    let records: Vec<_> = corpus.records.iter().collect();
    let preds = model.predict_records(&records, source)?;
    let mut out = std::io::stdout().lock();
    let written = records
        .iter()
        .zip(&preds)
        .try_for_each(|(r, p)| print_prediction(&mut out, &r.id, p, a.explain, a.json));
    stdout_result(written.and_then(|()| out.flush()))
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let suite = tiny_gradcheck(a.h, a.seed)?;
    for (phase, r) in &suite.phases {
        let at = r
            .worst
            .as_ref()
            .map(|(name, j, _, _)| format!(" at {name}[{j}]"))
            .unwrap_or_default();
        println!(
            "{phase}: {} coordinates, worst relative error {:.3e}{at}",
            r.coordinates, r.max_rel_error
        );
    }
    let worst = suite.worst();
    if suite.passes(a.tol) {
        println!("PASS: worst relative error {worst:.3e} < {:.0e} (h = {:.0e})", a.tol, a.h);
        Ok(())
    } else {
        Err(Error::Verification(format!(
            "worst relative error {worst:.3e} >= {:.0e} (h = {:.0e})",
            a.tol, a.h
        )))
    }
}
