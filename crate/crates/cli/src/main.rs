//! `clir`: the cross-lingual retrieval pipeline from bitext to evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use clir_core::config::{seed_offset, PipelineConfig};
use clir_core::corpus::{self, Document, Query, Stopwords};
use clir_core::lexicon::{train_model1, TranslationTable};
use clir_core::metrics::{classification_report, Report};
use clir_core::neural::{self, pack_input, Example, ModelKind, SentenceModel, TokenMap};
use clir_core::probrank::{generative_score, occurrence_score, BackgroundModel};
use clir_core::ranker::{noisy_or_doc_score, produce_run, Run};
use clir_core::synth::SynthCorpus;
use clir_core::weaksup::{build_samples, load_samples, split_samples, write_samples, TrainingSample};

#[derive(Parser)]
#[command(name = "clir", version, about = "Cross-lingual retrieval from weak bitext supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration shared by every command. Precedence: defaults, then
/// `--config`, then `--set`, then `--seed` and the command's own flags.
#[derive(Args)]
struct Common {
    /// `key=value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Global seed; every stage derives its own from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded cipher-language corpus.
    SynthCorpus(SynthArgs),
    /// Label (query term, foreign sentence) pairs from bitext.
    BuildSamples(BuildSamplesArgs),
    /// Estimate an IBM Model 1 translation table with EM.
    TrainLexicon(TrainLexiconArgs),
    /// Train a neural relevance scorer on weak-supervision samples.
    TrainNeural(TrainNeuralArgs),
    /// Score every document for every query and write a run.
    Rank(RankArgs),
    /// MAP, AQWV and MQWV of a run against qrels.
    Evaluate(EvaluateArgs),
    /// Compare backpropagated and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Dump cross-encoder attention weights for one input as JSON.
    AttentionDump(AttentionArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BuildSamplesArgs {
    #[arg(long)]
    bitext: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    neg_per_pos: Option<usize>,
    #[arg(long)]
    min_freq: Option<u64>,
    /// One stopword per line; the built-in list otherwise.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainLexiconArgs {
    #[arg(long)]
    bitext: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    /// Drop table entries below this probability.
    #[arg(long)]
    prune_min_prob: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainNeuralArgs {
    #[arg(long)]
    samples: PathBuf,
    /// Checkpoint path; `.vocab`, `.curve.csv` and `.dev.tsv` companions
    /// are written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dev_fraction: Option<f64>,
    #[arg(long)]
    max_train_samples: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum KindArg {
    CrossEncoder,
    Qrann,
    DotProduct,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::CrossEncoder => ModelKind::CrossEncoder,
            KindArg::Qrann => ModelKind::Qrann,
            KindArg::DotProduct => ModelKind::DotProduct,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Scorer {
    Occurrence,
    Generative,
    CrossEncoder,
    Qrann,
    DotProduct,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long, value_enum)]
    scorer: Scorer,
    #[arg(long)]
    documents: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Translation table, for the probabilistic scorers.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Bitext whose English side forms the generative background model.
    #[arg(long)]
    bitext: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Defaults to the checkpoint path with `.vocab` appended.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    beta: Option<f64>,
    /// A fixed AQWV threshold, or `optimal`.
    #[arg(long)]
    threshold: Option<String>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// Number of seeds, starting at the configured seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Exit with status 1 when any error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// English query term.
    #[arg(long)]
    query: String,
    /// Foreign sentence, whitespace separated.
    #[arg(long)]
    sentence: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

impl Common {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        for assignment in &self.set {
            config.apply_override(assignment)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Saves the resolved configuration beside an output.
fn echo_config(output: &Path, config: &PipelineConfig) -> Result<()> {
    write_file(&with_suffix(output, ".config"), config.echo())
}

fn stopwords(config: &PipelineConfig) -> Result<Stopwords> {
    Ok(if config.stopwords_path.is_empty() {
        Stopwords::builtin()
    } else {
        Stopwords::load(&config.stopwords_path)?
    })
}

fn synth_corpus(args: SynthArgs) -> Result<()> {
    let config = args.common.resolve()?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let corpus = SynthCorpus::generate(&config.synth_config())?;
    let paths = corpus.write_to_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("config.txt"), config.echo())?;
    eprintln!(
        "{} pairs, {} documents, {} queries in {}",
        corpus.bitext.len(),
        corpus.documents.len(),
        corpus.queries.len(),
        paths.bitext.parent().unwrap_or(Path::new(".")).display()
    );
    Ok(())
}

fn build_samples_cmd(args: BuildSamplesArgs) -> Result<()> {
    let mut config = args.common.resolve()?;
    if let Some(n) = args.neg_per_pos {
        config.neg_per_pos = n;
    }
    if let Some(m) = args.min_freq {
        config.min_freq = m;
    }
    if let Some(p) = &args.stopwords {
        config.stopwords_path = p.display().to_string();
    }
    let bitext = corpus::load_bitext(&args.bitext)?;
    let vocab = corpus::build_vocabulary(bitext.english_sides(), &stopwords(&config)?, config.min_freq)?;
    let samples: Vec<TrainingSample> = build_samples(
        &bitext.pairs,
        &vocab,
        config.neg_per_pos,
        config.stage_seed(seed_offset::SAMPLES),
    )
    .collect::<clir_core::Result<_>>()?;
    let mut buf = Vec::new();
    write_samples(&mut buf, &samples)?;
    write_file(&args.out, buf)?;
    echo_config(&args.out, &config)?;
    let positives = samples.iter().filter(|s| s.label).count();
    eprintln!("{} samples ({} positive, {} negative)", samples.len(), positives, samples.len() - positives);
    Ok(())
}

fn train_lexicon(args: TrainLexiconArgs) -> Result<()> {
    let mut config = args.common.resolve()?;
    if let Some(n) = args.iterations {
        config.em_iterations = n;
    }
    if let Some(p) = args.prune_min_prob {
        config.prune_min_prob = p;
    }
    let bitext = corpus::load_bitext(&args.bitext)?;
    let (table, history) = train_model1(&bitext.pairs, config.model1_options())?;
    let table = table.prune(config.prune_min_prob)?;
    write_file(&args.out, table.to_tsv())?;
    let mut ll = String::from("iteration,log_likelihood\n");
    for (i, v) in history.iter().enumerate() {
        ll.push_str(&format!("{},{}\n", i + 1, clir_core::format_sig17(*v)));
    }
    write_file(&with_suffix(&args.out, ".ll.csv"), ll)?;
    echo_config(&args.out, &config)?;
    eprintln!("{} foreign types, {} EM iterations", table.len(), history.len());
    Ok(())
}

fn train_neural(args: TrainNeuralArgs) -> Result<()> {
    let mut config = args.common.resolve()?;
    if let Some(k) = args.kind {
        config.model_kind = k.into();
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(lr) = args.lr {
        config.lr = lr;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(d) = args.dev_fraction {
        config.dev_fraction = d;
    }
    if let Some(m) = args.max_train_samples {
        config.max_train_samples = m;
    }
    let samples = load_samples(&args.samples)?;
    let (mut train, dev) = split_samples(samples, config.dev_fraction, config.stage_seed(seed_offset::SPLIT))?;
    if config.max_train_samples > 0 {
        train.truncate(config.max_train_samples);
    }
    let tokens = TokenMap::from_samples(&train)?;
    let encode = |s: &[TrainingSample]| -> Vec<Example> { s.iter().map(|x| Example::encode(x, &tokens)).collect() };
    let (train_ex, dev_ex) = (encode(&train), encode(&dev));
    let model_config = config.model_config(tokens.english_len(), tokens.foreign_len());
    eprintln!(
        "training {} on {} samples ({} dev), vocabulary {}+{}",
        model_config.kind,
        train_ex.len(),
        dev_ex.len(),
        tokens.english_len(),
        tokens.foreign_len()
    );
    let (ckpt, curve) = neural::train_with(model_config, &train_ex, &dev_ex, &config.hyper(), |s| {
        let dev = s.dev_accuracy.map(|a| format!(" dev_acc={a:.4}")).unwrap_or_default();
        eprintln!("epoch {} loss={:.4} acc={:.4}{dev}", s.epoch, s.train_loss, s.train_accuracy);
    })?;

    ckpt.save(&args.out)?;
    let mut vocab = Vec::new();
    tokens.write(&mut vocab)?;
    write_file(&with_suffix(&args.out, ".vocab"), vocab)?;
    let mut csv = format!("{}\n", neural::EpochStats::CSV_HEADER);
    for s in &curve {
        csv.push_str(&s.csv_row());
        csv.push('\n');
    }
    write_file(&with_suffix(&args.out, ".curve.csv"), csv)?;
    if !dev_ex.is_empty() {
        let predictions = dev_ex
            .iter()
            .map(|e| neural::forward(&ckpt, e.q, &e.s))
            .collect::<clir_core::Result<Vec<_>>>()?;
        let labels: Vec<bool> = dev_ex.iter().map(|e| e.label).collect();
        let report = classification_report(&predictions, &labels, config.threshold)?;
        let tsv = Report::default().with_classification(&report).to_tsv();
        write_file(&with_suffix(&args.out, ".dev.tsv"), &tsv)?;
        print!("{tsv}");
    }
    echo_config(&args.out, &config)?;
    Ok(())
}

fn rank(args: RankArgs) -> Result<()> {
    let mut config = args.common.resolve()?;
    if let Some(a) = args.alpha {
        config.alpha = a;
    }
    let documents = corpus::load_documents(&args.documents)?;
    let queries = corpus::load_queries(&args.queries, &stopwords(&config)?)?;
    let table = || -> Result<TranslationTable> {
        let Some(path) = &args.table else { bail!("--table is required for this scorer") };
        Ok(TranslationTable::load(path)?)
    };
    let run = match args.scorer {
        Scorer::Occurrence => {
            let table = table()?;
            produce_run(&|q: &Query, d: &Document| Ok(occurrence_score(q, d, &table)), &queries, &documents)?
        }
        Scorer::Generative => {
            let table = table()?;
            let Some(path) = &args.bitext else { bail!("--bitext is required for the generative scorer") };
            let bitext = corpus::load_bitext(path)?;
            let background = BackgroundModel::from_sides(bitext.english_sides());
            let alpha = config.alpha;
            produce_run(
                &|q: &Query, d: &Document| Ok(generative_score(q, d, &table, &background, alpha)),
                &queries,
                &documents,
            )?
        }
        neural_kind => {
            let Some(ckpt_path) = &args.checkpoint else { bail!("--checkpoint is required for neural scorers") };
            let vocab = args.vocab.clone().unwrap_or_else(|| with_suffix(ckpt_path, ".vocab"));
            let model = SentenceModel::load(ckpt_path, &vocab)?;
            let wanted = match neural_kind {
                Scorer::CrossEncoder => ModelKind::CrossEncoder,
                Scorer::Qrann => ModelKind::Qrann,
                _ => ModelKind::DotProduct,
            };
            if model.ckpt.config.kind != wanted {
                bail!("checkpoint holds a {} model, not {}", model.ckpt.config.kind, wanted);
            }
            produce_run(&|q: &Query, d: &Document| noisy_or_doc_score(&model, q, d), &queries, &documents)?
        }
    };
    write_file(&args.out, run.to_tsv())?;
    echo_config(&args.out, &config)?;
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut config = args.common.resolve()?;
    if let Some(b) = args.beta {
        config.apply_override(&format!("beta={b}"))?;
    }
    if let Some(t) = &args.threshold {
        config.apply_override(&format!("aqwv_threshold={t}"))?;
    }
    let run = Run::load(&args.run)?;
    let qrels = corpus::load_qrels(&args.qrels)?;
    let report = Report::retrieval(&run, &qrels, &config.eval_config())?;
    let text = if args.json { format!("{}\n", report.to_json()) } else { report.to_tsv() };
    print!("{text}");
    if let Some(out) = &args.out {
        write_file(out, &text)?;
        echo_config(out, &config)?;
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let mut config = args.common.resolve()?;
    if let Some(k) = args.kind {
        config.model_kind = k.into();
    }
    if let Some(e) = args.epsilon {
        config.gradcheck_epsilon = e;
    }
    let mut worst: f64 = 0.0;
    for seed in config.seed..config.seed + args.seeds {
        let (model, example) = neural::probe(config.model_kind, seed);
        let err = neural::grad_check(&model, &example, config.gradcheck_epsilon)?;
        println!("{}\t{seed}\t{}", config.model_kind, clir_core::format_sig17(err));
        worst = worst.max(err);
    }
    Ok(if worst <= args.tolerance {
        ExitCode::SUCCESS
    } else {
        eprintln!("max relative error {worst:e} exceeds {:e}", args.tolerance);
        ExitCode::FAILURE
    })
}

fn attention_dump(args: AttentionArgs) -> Result<()> {
    let config = args.common.resolve()?;
    let vocab = args.vocab.clone().unwrap_or_else(|| with_suffix(&args.checkpoint, ".vocab"));
    let model = SentenceModel::load(&args.checkpoint, &vocab)?;
    let sentence = corpus::tokenize(&args.sentence, corpus::Normalization::default());
    let (q, s) = model.encode(&args.query, &sentence);
    let packed = pack_input(q, &s, model.ckpt.config.max_seq_len)?;
    let layers = neural::attention_trace(&model.ckpt, &packed)?;
    let tokens: Vec<&str> = packed.tokens.iter().map(|&t| model.tokens.token(t)).collect();
    let score = neural::forward(&model.ckpt, q, &s)?;
    let json = serde_json::json!({ "layers": layers, "tokens": tokens, "score": score });
    let text = format!("{json}\n");
    match &args.out {
        Some(out) => {
            write_file(out, &text)?;
            echo_config(out, &config)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::SynthCorpus(a) => synth_corpus(a)?,
        Command::BuildSamples(a) => build_samples_cmd(a)?,
        Command::TrainLexicon(a) => train_lexicon(a)?,
        Command::TrainNeural(a) => train_neural(a)?,
        Command::Rank(a) => rank(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Gradcheck(a) => return gradcheck(a),
        Command::AttentionDump(a) => attention_dump(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
