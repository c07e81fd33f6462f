//! Command implementations behind the `uttattn` binary.
//!
//! Exit codes: 0 success, 2 usage, 3 data (unreadable or malformed inputs,
//! bad checkpoints), 4 numeric (divergence, failed gradient check).

mod args;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use uttattn::checkpoint::Checkpoint;
use uttattn::corpus::{load_sessions, DialogueSession, EmbeddingTable, Vocabulary};
use uttattn::gradcheck::{check, suite, GradCheckConfig, GradCheckReport};
use uttattn::metrics::{
    collocation_rate, evaluate, load_generated, load_stoplist, token_frequency, EvalSession,
    GeneratedRecord,
};
use uttattn::trainer::{loss, Trainer};
use uttattn::{generate, Model};

pub use args::*;

pub const ECHO_FILE: &str = "run_config.json";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Bad flag values or combinations that clap cannot catch.
#[derive(Debug)]
pub struct UsageError(pub String);

/// A run that completed but failed a numeric check.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}
impl std::error::Error for UsageError {}

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}
impl std::error::Error for CheckFailed {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<CheckFailed>() {
            return EXIT_NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<uttattn::Error>() {
            return match e {
                uttattn::Error::Numeric(_) | uttattn::Error::Diverged { .. } => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// A path flag naming no file is a usage error; a file that fails to parse
/// is a data error later on.
fn require_file(flag: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("--{flag} {}: no such file", path.display())))
    }
}

#[derive(Serialize, Deserialize)]
struct Echo {
    version: String,
    #[serde(flatten)]
    command: Command,
}

/// Makes input paths absolute so an echo can be replayed from anywhere.
fn absolutize(p: &mut PathBuf) -> Result<()> {
    *p = std::path::absolute(&*p).with_context(|| format!("resolving {}", p.display()))?;
    Ok(())
}

fn write_echo(dir: &Path, command: &Command) -> Result<()> {
    let mut command = command.clone();
    match &mut command {
        Command::Train(a) => {
            absolutize(&mut a.corpus)?;
            if let Some(d) = &mut a.dev {
                absolutize(d)?;
            }
        }
        Command::Generate(a) => {
            absolutize(&mut a.checkpoint)?;
            absolutize(&mut a.test)?;
        }
        Command::Evaluate(a) => {
            absolutize(&mut a.generated)?;
            absolutize(&mut a.embeddings)?;
            if let Some(s) = &mut a.stoplist {
                absolutize(s)?;
            }
        }
        Command::Analyze(a) => {
            for g in &mut a.generated {
                absolutize(g)?;
            }
            if let Some(s) = &mut a.stoplist {
                absolutize(s)?;
            }
        }
        Command::Gradcheck(_) | Command::Replay(_) => {}
    }
    let echo = Echo {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command,
    };
    let mut text = serde_json::to_string_pretty(&echo)?;
    text.push('\n');
    write(&dir.join(ECHO_FILE), text)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train(&a),
        Command::Generate(a) => generate_cmd(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Analyze(a) => analyze(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Replay(a) => replay(&a),
    }
}

fn replay(a: &ReplayArgs) -> Result<()> {
    require_file("echo", &a.echo)?;
    let text = fs::read_to_string(&a.echo).with_context(|| format!("reading {}", a.echo.display()))?;
    let echo: Echo = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a run configuration", a.echo.display()))?;
    let out = match &a.out {
        Some(o) => o.clone(),
        None => a.echo.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let command = match echo.command {
        Command::Train(mut c) => {
            c.out = out;
            Command::Train(c)
        }
        Command::Generate(mut c) => {
            c.out = out;
            Command::Generate(c)
        }
        Command::Evaluate(mut c) => {
            c.out = out;
            Command::Evaluate(c)
        }
        Command::Analyze(mut c) => {
            c.out = out;
            Command::Analyze(c)
        }
        Command::Gradcheck(mut c) => {
            c.out = Some(out);
            Command::Gradcheck(c)
        }
        Command::Replay(_) => return Err(usage("a replay cannot replay another replay")),
    };
    run(command)
}

fn encode_all(
    text: &[uttattn::TextSession],
    vocab: &Vocabulary,
    pad_len: usize,
) -> Vec<DialogueSession> {
    text.iter()
        .map(|t| DialogueSession::encode(t, vocab).padded(pad_len))
        .collect()
}

fn train(a: &TrainArgs) -> Result<()> {
    require_file("corpus", &a.corpus)?;
    if let Some(d) = &a.dev {
        require_file("dev", d)?;
    }
    let train_cfg = a.optim.train_config();
    train_cfg.validate().map_err(|e| usage(e.to_string()))?;
    let text = load_sessions(&a.corpus, a.lowercase)?;
    if text.is_empty() {
        bail!(uttattn::Error::Validation(format!("{} has no sessions", a.corpus.display())));
    }
    let vocab = Vocabulary::build(&text, a.min_count);
    let model_cfg = a.model.model_config(vocab.len());
    model_cfg.validate().map_err(|e| usage(e.to_string()))?;
    let sessions = encode_all(&text, &vocab, model_cfg.pad_len);
    let dev = match &a.dev {
        Some(p) => {
            let d = encode_all(&load_sessions(p, a.lowercase)?, &vocab, model_cfg.pad_len);
            (!d.is_empty()).then_some(d)
        }
        None => None,
    };

    create_dir(&a.out)?;
    write_echo(&a.out, &Command::Train(a.clone()))?;
    vocab.save(&a.out.join("vocab.txt"))?;

    let model = Model::new(model_cfg, train_cfg.seed)?;
    let mut trainer = Trainer::new(model, train_cfg)?;
    let mut history = String::new();
    let mut dev_history = String::new();
    let mut best = trainer.checkpoint(&vocab).to_bytes();
    let mut best_dev = f64::INFINITY;
    if let Some(d) = &dev {
        best_dev = loss(trainer.model(), d)?;
        writeln!(dev_history, "0\t{best_dev}")?;
    }
    while trainer.epoch() < trainer.config().epochs {
        let l = trainer.train_epoch(&sessions)?;
        let epoch = trainer.epoch();
        writeln!(history, "{epoch}\t{l}")?;
        eprintln!("epoch {epoch}: train loss {l:.6}");
        match &dev {
            Some(d) => {
                let dl = loss(trainer.model(), d)?;
                writeln!(dev_history, "{epoch}\t{dl}")?;
                eprintln!("epoch {epoch}: dev loss {dl:.6}");
                if dl < best_dev {
                    best_dev = dl;
                    best = trainer.checkpoint(&vocab).to_bytes();
                }
            }
            None => best = trainer.checkpoint(&vocab).to_bytes(),
        }
    }
    write(&a.out.join("loss_history.tsv"), history)?;
    if dev.is_some() {
        write(&a.out.join("dev_loss.tsv"), dev_history)?;
    }
    write(&a.out.join("checkpoint.bin"), best)?;
    Ok(())
}

fn check_arch<T: PartialEq + std::fmt::Debug>(name: &str, expected: Option<T>, actual: T) -> Result<()> {
    match expected {
        Some(e) if e != actual => Err(uttattn::Error::Checkpoint(format!(
            "architecture mismatch: --{name} {e:?} but the checkpoint has {actual:?}"
        ))
        .into()),
        _ => Ok(()),
    }
}

fn generate_cmd(a: &GenerateArgs) -> Result<()> {
    require_file("checkpoint", &a.checkpoint)?;
    require_file("test", &a.test)?;
    let ckpt = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let mc = &ckpt.model_config;
    check_arch("attention", a.attention, mc.attention)?;
    check_arch("heads", a.heads, mc.heads)?;
    check_arch("direction", a.direction, mc.direction)?;
    check_arch("token-level", a.token_level, mc.token_level)?;
    check_arch("hidden", a.hidden, mc.hidden_dim)?;
    check_arch("emb-dim", a.emb_dim, mc.emb_dim)?;
    check_arch("pad-len", a.pad_len, mc.pad_len)?;
    let max_len = a.max_len.unwrap_or(mc.pad_len);
    if max_len == 0 {
        return Err(usage("--max-len must be at least 1"));
    }
    let model = ckpt.restore_model()?;
    let vocab = &ckpt.vocab;
    let text = load_sessions(&a.test, a.lowercase)?;

    create_dir(&a.out)?;
    write_echo(&a.out, &Command::Generate(a.clone()))?;
    let mut out = String::new();
    for t in &text {
        let session = DialogueSession::encode(t, vocab).padded(mc.pad_len);
        let ids = generate(&model, &session, max_len)?;
        let rec = GeneratedRecord {
            context: t.context.iter().map(|u| u.join(" ")).collect(),
            reference: t.response.join(" "),
            hypothesis: vocab.decode(&ids).join(" "),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    write(&a.out.join("generated.jsonl"), out)
}

fn stoplist(path: &Option<PathBuf>) -> Result<HashSet<String>> {
    match path {
        Some(p) => load_stoplist(p).with_context(|| format!("reading stop list {}", p.display())),
        None => Ok(HashSet::new()),
    }
}

fn load_eval_sessions(path: &Path) -> Result<Vec<EvalSession>> {
    let records = load_generated(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(records.iter().map(GeneratedRecord::tokenized).collect())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    require_file("generated", &a.generated)?;
    require_file("embeddings", &a.embeddings)?;
    if let Some(s) = &a.stoplist {
        require_file("stoplist", s)?;
    }
    let sessions = load_eval_sessions(&a.generated)?;
    let table = EmbeddingTable::load(&a.embeddings)
        .with_context(|| format!("embedding metrics need a readable table: {}", a.embeddings.display()))?;
    let stop = stoplist(&a.stoplist)?;
    let report = evaluate(&sessions, &table, &stop, a.collocation_scope);

    create_dir(&a.out)?;
    write_echo(&a.out, &Command::Evaluate(a.clone()))?;
    let text = report.to_text();
    print!("{text}");
    write(&a.out.join("report.txt"), text)?;
    write(&a.out.join("report.json"), report.to_json() + "\n")?;
    let mut freq = String::from("token\tcount\n");
    for (t, c) in &report.token_freq {
        writeln!(freq, "{t}\t{c}")?;
    }
    write(&a.out.join("token_freq.tsv"), freq)
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    if !a.names.is_empty() && a.names.len() != a.generated.len() {
        return Err(usage(format!(
            "{} --name values for {} --generated files",
            a.names.len(),
            a.generated.len()
        )));
    }
    let names: Vec<String> = if a.names.is_empty() {
        a.generated
            .iter()
            .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
            .collect()
    } else {
        a.names.clone()
    };
    for g in &a.generated {
        require_file("generated", g)?;
    }
    if let Some(s) = &a.stoplist {
        require_file("stoplist", s)?;
    }
    let stop = stoplist(&a.stoplist)?;
    let mut columns = Vec::new();
    let mut rates = Vec::new();
    for p in &a.generated {
        let sessions = load_eval_sessions(p)?;
        let hyps: Vec<&[String]> = sessions.iter().map(|s| s.hypothesis.as_slice()).collect();
        columns.push(token_frequency(&hyps, &stop).into_iter().collect::<BTreeMap<_, _>>());
        rates.push(collocation_rate(&sessions, &stop, a.collocation_scope));
    }

    // shared axis: every token of any model, by total count then token
    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    for col in &columns {
        for (t, c) in col {
            *totals.entry(t.as_str()).or_default() += c;
        }
    }
    let mut axis: Vec<(&str, usize)> = totals.into_iter().collect();
    axis.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(y.0)));
    if let Some(n) = a.top {
        axis.truncate(n);
    }

    create_dir(&a.out)?;
    write_echo(&a.out, &Command::Analyze(a.clone()))?;
    let mut freq = String::from("token");
    for n in &names {
        freq.push('\t');
        freq.push_str(n);
    }
    freq.push('\n');
    for (t, _) in &axis {
        freq.push_str(t);
        for col in &columns {
            write!(freq, "\t{}", col.get(*t).copied().unwrap_or(0))?;
        }
        freq.push('\n');
    }
    write(&a.out.join("frequency.tsv"), freq)?;

    let mut colloc = String::from("model\tcollocation_rate\tundefined\n");
    for (n, r) in names.iter().zip(&rates) {
        writeln!(colloc, "{n}\t{}\t{}", r.value, r.undefined)?;
        println!("{n}: collocation rate {:.6}", r.value);
    }
    write(&a.out.join("collocation.tsv"), colloc)
}

fn gradcheck_configs(a: &GradcheckArgs) -> Vec<GradCheckConfig> {
    let base = GradCheckConfig {
        attention: a.attention,
        heads: a.heads,
        direction: a.direction,
        token_level: a.token_level,
        emb_dim: a.emb_dim,
        hidden_dim: a.hidden,
        decoder_dim: a.decoder_dim.unwrap_or(a.hidden),
        utterances: a.utterances,
        pad_len: a.pad_len,
        vocab_size: a.vocab,
        seed: a.seed,
        tolerance: a.tolerance,
        inject_fault: a.inject_fault,
        ..GradCheckConfig::default()
    };
    if a.all {
        suite(&base)
    } else {
        vec![base]
    }
}

pub fn gradcheck_reports(a: &GradcheckArgs) -> Result<Vec<GradCheckReport>> {
    if a.utterances == 0 {
        return Err(usage("--utterances must be at least 1"));
    }
    gradcheck_configs(a)
        .iter()
        .map(|c| {
            c.model_config().validate().map_err(|e| usage(e.to_string()))?;
            Ok(check(c)?)
        })
        .collect()
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let reports = gradcheck_reports(a)?;
    let mut table = String::from("attention\theads\tdirection\ttoken_level\tparam\tscalars\tmax_rel_err\n");
    for r in &reports {
        println!("{}", r.summary());
        for p in &r.params {
            writeln!(
                table,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:e}",
                r.attention, r.heads, r.direction, r.token_level, p.name, p.scalars, p.max_rel_err
            )?;
        }
    }
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_echo(out, &Command::Gradcheck(a.clone()))?;
        write(&out.join("gradcheck.tsv"), table)?;
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CheckFailed(format!(
            "gradient check failed for {failed} of {} configurations",
            reports.len()
        ))
        .into());
    }
    Ok(())
}
