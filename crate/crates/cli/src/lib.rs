//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data
//! error. Data errors are reported on stderr as a single JSON line
//! `{"error": <kind>, "message": <text>}`.

pub mod config;

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use authorship_core::classifier::{
    classify_direct, classify_family, fuzzy_knn_classify, ClassificationRecord, FamilyClass, KnnConfig,
};
use authorship_core::corpus::{load_corpus, AuthorClass, FamilyTable, LabelCodes, Source, Split};
use authorship_core::encoder::{load_external_embeddings, EmbeddingSet};
use authorship_core::eval::{evaluate, ordering_diagnostic, LabelMetrics};
use authorship_core::index::VectorIndex;
use authorship_core::model::{classify_prob, load_params, project, save_params, ModelParams};
use authorship_core::pipeline::{corpus_embeddings, corpus_entries, index_entry, BaseEncoder};
use authorship_core::synth::generate_corpus;
use authorship_core::trainer::{train, TrainData};
use authorship_core::Error;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "authorship", version, about = "Fine-grained authorship detection")]
struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Inputs {
    /// Corpus file (JSON lines).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Precomputed base embeddings; defaults to the hashed n-gram encoder.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KnnArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        families: Option<usize>,
        #[arg(long)]
        docs_per_class: Option<usize>,
        #[arg(long)]
        style_strength: Option<f64>,
    },
    /// Write hashed n-gram base embeddings of a corpus.
    Embed {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the projection and classifier heads.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        /// Model file to write; defaults to `paths.model`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-step loss CSV; defaults to `<out>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        hidden_dim: Option<usize>,
        #[arg(long)]
        output_dim: Option<usize>,
    },
    /// Build the vector index from the train and val splits.
    Index {
        #[command(flatten)]
        inputs: Inputs,
        /// Index file to write; defaults to `paths.index`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify texts (one per line, or corpus records with labels ignored).
    Classify {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        knn: KnnArgs,
        #[arg(long)]
        input: PathBuf,
        /// JSON-lines output; defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add labeled records to the index overlay without retraining.
    Adapt {
        #[command(flatten)]
        inputs: Inputs,
        /// Splits of the corpus to add.
        #[arg(long, value_delimiter = ',', default_value = "train,val", value_parser = parse_split)]
        splits: Vec<Split>,
        /// Only add records of these families (human records are skipped).
        #[arg(long = "family", value_delimiter = ',')]
        only_families: Vec<String>,
        /// At most this many records per (class, family), in corpus order.
        #[arg(long)]
        per_class: Option<usize>,
        /// Index file to write; defaults to updating `--index` in place.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score the classifier on one split of a labeled corpus.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        knn: KnnArgs,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Metrics JSON; defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Three-class confusion matrix as CSV.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Mean similarities between LLM anchors and each population.
    Diagnose {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown split `{s}` (train, val or test)"))
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            2
        }
    }
}

fn execute(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match cli.command {
        Command::Synth { out, families, docs_per_class, style_strength } => {
            cfg.synth.n_families = families.unwrap_or(cfg.synth.n_families);
            cfg.synth.docs_per_class = docs_per_class.unwrap_or(cfg.synth.docs_per_class);
            cfg.synth.style_strength = style_strength.unwrap_or(cfg.synth.style_strength);
            cfg.validate()?;
            let ds = generate_corpus(&cfg.synth)?;
            ensure_parent(&out)?;
            ds.save(&out)?;
            write_meta(&out, "synth", &cfg, json!({}))?;
            say(format!("wrote {} records to {}", ds.len(), out.display()))?;
        }
        Command::Embed { inputs, out } => {
            cfg.validate()?;
            let corpus_path = require(&inputs.corpus, &cfg.paths.corpus, "--corpus")?;
            let ds = load_corpus(&corpus_path)?;
            let mut set = EmbeddingSet::new(cfg.encoder.dim);
            for r in &ds.records {
                set.insert(cfg.encoder.embed(&r.id, &r.text)?)?;
            }
            ensure_parent(&out)?;
            set.save(&out)?;
            write_meta(&out, "embed", &cfg, json!({ "corpus": corpus_path }))?;
            say(format!("wrote {} embeddings of width {} to {}", set.len(), set.dim(), out.display()))?;
        }
        Command::Train { inputs, out, history, epochs, batch_size, lr, hidden_dim, output_dim } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
            cfg.train.lr = lr.unwrap_or(cfg.train.lr);
            cfg.model.hidden_dim = hidden_dim.unwrap_or(cfg.model.hidden_dim);
            cfg.model.output_dim = output_dim.unwrap_or(cfg.model.output_dim);
            cfg.validate()?;
            let corpus_path = require(&inputs.corpus, &cfg.paths.corpus, "--corpus")?;
            let out = require(&out, &cfg.paths.model, "--out")?;
            let ds = load_corpus(&corpus_path)?;
            let encoder = encoder(&inputs, &cfg)?;
            cfg.model.input_dim = encoder.dim();
            let data = TrainData::from_corpus(&ds, &encoder)?;
            let outcome = train(&data, cfg.model, &cfg.train, &cfg.loss)?;
            ensure_parent(&out)?;
            save_params(&outcome.params, &out)?;
            let history = history.unwrap_or_else(|| suffixed(&out, "history.csv"));
            fs::write(&history, outcome.history.to_csv())?;
            write_meta(&out, "train", &cfg, json!({ "corpus": corpus_path, "epochs": outcome.history.epochs }))?;
            let last = outcome.history.steps.last();
            say(format!(
                "trained {} steps on {} examples; final loss {}; model {}",
                outcome.history.steps.len(),
                data.train.len(),
                last.map_or("n/a".into(), |s| format!("{:.4}", s.loss)),
                out.display()
            ))?;
        }
        Command::Index { inputs, out } => {
            cfg.validate()?;
            let corpus_path = require(&inputs.corpus, &cfg.paths.corpus, "--corpus")?;
            let out = require(&out, &cfg.paths.index, "--out")?;
            let params = load_model(&inputs, &cfg)?;
            let ds = load_corpus(&corpus_path)?;
            let encoder = encoder(&inputs, &cfg)?;
            let mut rows = ds.split_indices(Split::Train);
            rows.extend(ds.split_indices(Split::Val));
            let index = VectorIndex::build(corpus_entries(&params, &encoder, &ds, &rows)?)?;
            ensure_parent(&out)?;
            index.save(&out)?;
            save_families(&out, &ds.families)?;
            write_meta(&out, "index", &cfg, json!({ "corpus": corpus_path }))?;
            say(format!("indexed {} entries of width {} in {}", index.len(), index.dim(), out.display()))?;
        }
        Command::Classify { inputs, knn, input, out } => {
            let knn = knn_config(&cfg, &knn)?;
            let params = load_model(&inputs, &cfg)?;
            let (index, families) = load_index(&inputs, &cfg)?;
            let encoder = encoder(&inputs, &cfg)?;
            let mut sink: Box<dyn Write> = match &out {
                Some(p) => {
                    ensure_parent(p)?;
                    Box::new(std::io::BufWriter::new(fs::File::create(p)?))
                }
                None => Box::new(std::io::stdout().lock()),
            };
            for (id, text) in read_texts(&input)? {
                let e = project(&params, &encoder.encode(&id, &text)?)?;
                let v3 = fuzzy_knn_classify(&index, &e, &knn)?;
                let vf = classify_family(&index, &e, &knn)?;
                let rec = ClassificationRecord::new(id, &v3, &vf, classify_prob(&params, &e), &families);
                stdout_ok(writeln!(sink, "{}", serde_json::to_string(&rec).map_err(Error::from)?))?;
            }
            stdout_ok(sink.flush())?;
        }
        Command::Adapt { inputs, splits, only_families, per_class, out } => {
            cfg.validate()?;
            let corpus_path = require(&inputs.corpus, &cfg.paths.corpus, "--corpus")?;
            let index_path = require(&inputs.index, &cfg.paths.index, "--index")?;
            let params = load_model(&inputs, &cfg)?;
            let (mut index, mut families) = load_index(&inputs, &cfg)?;
            let ds = load_corpus(&corpus_path)?;
            let encoder = encoder(&inputs, &cfg)?;
            let mut entries = Vec::new();
            let mut taken: HashMap<(AuthorClass, Option<&str>), usize> = HashMap::new();
            for r in ds.records.iter().filter(|r| splits.contains(&r.split)) {
                let family = r.label.family.as_deref();
                if !only_families.is_empty() && !family.is_some_and(|f| only_families.iter().any(|o| o == f)) {
                    continue;
                }
                let seen = taken.entry((r.label.class(), family)).or_insert(0);
                if per_class.is_some_and(|cap| *seen >= cap) {
                    continue;
                }
                *seen += 1;
                let codes = remap(r.label.source, r.label.family.as_deref(), &mut families)?;
                entries.push(index_entry(&params, &encoder.encode_record(r)?, codes)?);
            }
            let added = entries.len();
            index.add_unseen(entries)?;
            let out = out.unwrap_or(index_path);
            ensure_parent(&out)?;
            index.save(&out)?;
            save_families(&out, &families)?;
            write_meta(&out, "adapt", &cfg, json!({ "corpus": corpus_path, "added": added }))?;
            say(format!("added {added} entries; overlay now holds {} of {}", index.overlay_len(), index.len()))?;
        }
        Command::Eval { inputs, knn, split, out, confusion } => {
            let knn = knn_config(&cfg, &knn)?;
            let corpus_path = require(&inputs.corpus, &cfg.paths.corpus, "--corpus")?;
            let params = load_model(&inputs, &cfg)?;
            let (index, families) = load_index(&inputs, &cfg)?;
            let ds = load_corpus(&corpus_path)?;
            let encoder = encoder(&inputs, &cfg)?;
            let rows = ds.split_indices(split);
            let embs = corpus_embeddings(&params, &encoder, &ds, &rows)?;
            let (mut pred, mut gold, mut fam_pred, mut fam_gold) = (vec![], vec![], vec![], vec![]);
            let (mut direct_hits, mut knn_hits) = (0usize, 0usize);
            for (&i, e) in rows.iter().zip(&embs) {
                let r = &ds.records[i];
                let class = r.label.class();
                let v3 = fuzzy_knn_classify(&index, e, &knn)?;
                let fully_llm = class == AuthorClass::Llm;
                direct_hits += (classify_direct(&params, e) == fully_llm) as usize;
                knn_hits += ((v3.predicted == AuthorClass::Llm) == fully_llm) as usize;
                pred.push(v3.predicted);
                gold.push(class);
                fam_pred.push(classify_family(&index, e, &knn)?.predicted.label(&families));
                fam_gold.push(match class {
                    AuthorClass::Human => FamilyClass::Human.label(&families),
                    _ => r.label.family.clone().unwrap_or_default(),
                });
            }
            let three = evaluate(&pred, &gold)?;
            let family = LabelMetrics::from_labels(&fam_pred, &fam_gold)?;
            let n = rows.len() as f64;
            let report = json!({
                "split": split,
                "three_class": three,
                "family": family,
                "fully_llm_decision": { "direct_accuracy": direct_hits as f64 / n, "knn_accuracy": knn_hits as f64 / n },
            });
            emit_json(out.as_deref(), &report)?;
            if let Some(p) = confusion {
                ensure_parent(&p)?;
                fs::write(p, three.metrics.confusion_csv())?;
            }
        }
        Command::Diagnose { inputs, split, out } => {
            let corpus_path = require(&inputs.corpus, &cfg.paths.corpus, "--corpus")?;
            let params = load_model(&inputs, &cfg)?;
            let ds = load_corpus(&corpus_path)?;
            let encoder = encoder(&inputs, &cfg)?;
            let rows = ds.split_indices(split);
            let embs = corpus_embeddings(&params, &encoder, &ds, &rows)?;
            let codes: Vec<LabelCodes> = rows.iter().map(|&i| ds.codes(&ds.records[i])).collect();
            let report = ordering_diagnostic(&embs, &codes)?;
            emit_json(out.as_deref(), &serde_json::to_value(&report).map_err(Error::from)?)?;
        }
    }
    Ok(())
}

fn require(flag: &Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Outcome<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| Failure::Usage(format!("missing {name} (no flag given and none in the config paths)")))
}

fn encoder(inputs: &Inputs, cfg: &Config) -> Outcome<BaseEncoder> {
    match inputs.embeddings.as_ref().or(cfg.paths.embeddings.as_ref()) {
        Some(p) => Ok(BaseEncoder::External(load_external_embeddings(p)?)),
        None => {
            cfg.encoder.validate()?;
            Ok(BaseEncoder::Hash(cfg.encoder))
        }
    }
}

fn load_model(inputs: &Inputs, cfg: &Config) -> Outcome<ModelParams> {
    Ok(load_params(require(&inputs.model, &cfg.paths.model, "--model")?)?)
}

fn families_path(index: &Path) -> PathBuf {
    suffixed(index, "families.json")
}

fn load_index(inputs: &Inputs, cfg: &Config) -> Outcome<(VectorIndex, FamilyTable)> {
    let path = require(&inputs.index, &cfg.paths.index, "--index")?;
    let index = VectorIndex::load(&path)?;
    let side = families_path(&path);
    let families = if side.exists() {
        let names: Vec<String> = serde_json::from_str(&fs::read_to_string(&side)?).map_err(Error::from)?;
        FamilyTable::from_names(names)?
    } else {
        FamilyTable::new()
    };
    Ok((index, families))
}

fn save_families(index: &Path, families: &FamilyTable) -> Outcome {
    fs::write(families_path(index), serde_json::to_string_pretty(families).map_err(Error::from)?)?;
    Ok(())
}

/// Label codes of a record under the index's family table, adding new
/// family names as they appear.
fn remap(source: Source, family: Option<&str>, families: &mut FamilyTable) -> Outcome<LabelCodes> {
    Ok(match (source, family) {
        (Source::Human, _) => LabelCodes::human(),
        (Source::Llm, Some(f)) => LabelCodes::llm(families.intern(f)?),
        (Source::Collab, Some(f)) => LabelCodes::collab(families.intern(f)?),
        (_, None) => return Err(Error::InvalidLabelCombination("record without family".into()).into()),
    })
}

fn knn_config(cfg: &Config, args: &KnnArgs) -> Outcome<KnnConfig> {
    let knn = KnnConfig { k: args.k.unwrap_or(cfg.knn.k), tau: args.tau.unwrap_or(cfg.knn.tau) };
    knn.validate()?;
    Ok(knn)
}

/// `(id, text)` pairs from corpus-format JSON lines or from plain lines,
/// which get ids `line-<n>`.
fn read_texts(path: &Path) -> Outcome<Vec<(String, String)>> {
    let content = fs::read_to_string(path)?;
    let json_lines = content.lines().find(|l| !l.trim().is_empty()).is_some_and(|l| l.trim_start().starts_with('{'));
    let mut out = Vec::new();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if json_lines {
            let malformed = |reason: String| Error::MalformedRecord { line: n + 1, reason };
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            let field = |k: &str| v.get(k).and_then(|x| x.as_str()).map(str::to_string);
            let text = field("text").ok_or_else(|| malformed("missing string field `text`".into()))?;
            out.push((field("id").unwrap_or_else(|| format!("line-{}", n + 1)), text));
        } else {
            out.push((format!("line-{}", n + 1), line.to_string()));
        }
    }
    Ok(out)
}

fn emit_json(out: Option<&Path>, value: &serde_json::Value) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    match out {
        Some(p) => {
            ensure_parent(p)?;
            fs::write(p, text)?
        }
        None => stdout_ok(std::io::stdout().lock().write_all(text.as_bytes()))?,
    }
    Ok(())
}

fn say(line: String) -> Outcome {
    stdout_ok(writeln!(std::io::stdout().lock(), "{line}"))
}

/// A closed stdout (as in `authorship eval | head`) is not an error.
fn stdout_ok(r: std::io::Result<()>) -> Outcome {
    match r {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn ensure_parent(path: &Path) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Run details next to an output file. Timestamps live only here, so the
/// outputs themselves stay byte-identical across repeated runs.
fn write_meta(out: &Path, command: &str, cfg: &Config, extra: serde_json::Value) -> Outcome {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": created,
        "config": cfg,
        "details": extra,
    });
    fs::write(suffixed(out, "meta.json"), serde_json::to_string_pretty(&meta).map_err(Error::from)? + "\n")?;
    Ok(())
}
