//! Automatic evaluation: embedding similarity (Average, Greedy, Extrema),
//! Distinct-n, context diversity, collocation reservation and token frequency.
//!
//! Tokens missing from the embedding table are skipped. A pair with no
//! embeddable token on one side is left out of the embedding averages and
//! counted in [`EmbeddingScores::excluded`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, EmbeddingTable};
use crate::error::{Error, Result};
use crate::tensor::cosine;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
}

/// A cosine score. `zero_norm` marks a pooled vector with zero norm, in
/// which case `value` is 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub value: f64,
    pub zero_norm: bool,
}

/// A ratio whose denominator may be empty; `undefined` is set when it is and
/// `value` is then 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
}

impl Ratio {
    fn of(num: usize, den: usize) -> Self {
        if den == 0 {
            Ratio {
                value: 0.0,
                undefined: true,
            }
        } else {
            Ratio {
                value: num as f64 / den as f64,
                undefined: false,
            }
        }
    }
}

fn embed<'t>(tokens: &[String], table: &'t EmbeddingTable) -> Vec<&'t [f64]> {
    tokens.iter().filter_map(|t| table.get(t)).collect()
}

fn scored(a: &[f64], b: &[f64]) -> Scored {
    let zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
    Scored {
        value: cosine(a, b),
        zero_norm: zero(a) || zero(b),
    }
}

fn both_sides<'t>(
    pair: &SentencePair,
    table: &'t EmbeddingTable,
) -> Option<(Vec<&'t [f64]>, Vec<&'t [f64]>)> {
    let h = embed(&pair.hypothesis, table);
    let r = embed(&pair.reference, table);
    (!h.is_empty() && !r.is_empty()).then_some((h, r))
}

fn mean_vector(vs: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; vs[0].len()];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let n = vs.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn max_vector(vs: &[&[f64]]) -> Vec<f64> {
    let mut out = vs[0].to_vec();
    for v in &vs[1..] {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o = o.max(*x);
        }
    }
    out
}

/// Cosine of the mean hypothesis vector and the mean reference vector.
/// `None` when either side has no embeddable token.
pub fn embedding_average(pair: &SentencePair, table: &EmbeddingTable) -> Option<Scored> {
    let (h, r) = both_sides(pair, table)?;
    Some(scored(&mean_vector(&h), &mean_vector(&r)))
}

/// Two-direction greedy matching: each token is scored by its best cosine
/// match on the other side, averaged per side, then the two sides averaged.
pub fn embedding_greedy(pair: &SentencePair, table: &EmbeddingTable) -> Option<Scored> {
    let (h, r) = both_sides(pair, table)?;
    let one_way = |xs: &[&[f64]], ys: &[&[f64]]| {
        xs.iter()
            .map(|x| {
                ys.iter()
                    .map(|y| cosine(x, y))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / xs.len() as f64
    };
    let zero_norm = h.iter().chain(&r).any(|v| v.iter().all(|x| *x == 0.0));
    Some(Scored {
        value: 0.5 * (one_way(&h, &r) + one_way(&r, &h)),
        zero_norm,
    })
}

/// Cosine of the per-dimension maxima of each side.
pub fn embedding_extrema(pair: &SentencePair, table: &EmbeddingTable) -> Option<Scored> {
    let (h, r) = both_sides(pair, table)?;
    Some(scored(&max_vector(&h), &max_vector(&r)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EmbeddingScores {
    pub average: f64,
    pub greedy: f64,
    pub extrema: f64,
    /// Pairs with no embeddable token on at least one side.
    pub excluded: usize,
    /// Pairs where some pooled vector had zero norm.
    pub zero_norm: usize,
}

/// Mean of the three embedding metrics over all non-excluded pairs.
pub fn embedding_scores(pairs: &[SentencePair], table: &EmbeddingTable) -> EmbeddingScores {
    let mut out = EmbeddingScores::default();
    let mut n = 0usize;
    for pair in pairs {
        let (Some(a), Some(g), Some(e)) = (
            embedding_average(pair, table),
            embedding_greedy(pair, table),
            embedding_extrema(pair, table),
        ) else {
            out.excluded += 1;
            continue;
        };
        n += 1;
        out.average += a.value;
        out.greedy += g.value;
        out.extrema += e.value;
        if a.zero_norm || g.zero_norm || e.zero_norm {
            out.zero_norm += 1;
        }
    }
    if n > 0 {
        out.average /= n as f64;
        out.greedy /= n as f64;
        out.extrema /= n as f64;
    }
    out
}

/// Corpus-level Distinct-n: distinct n-grams over all hypotheses divided by
/// the total number of n-grams. N-grams do not cross hypothesis boundaries.
pub fn distinct_n<S: AsRef<[String]>>(hypotheses: &[S], n: usize) -> Ratio {
    assert!(n >= 1, "n-gram order must be positive");
    let mut seen: HashSet<&[String]> = HashSet::new();
    let mut total = 0;
    for h in hypotheses {
        for gram in h.as_ref().windows(n) {
            total += 1;
            seen.insert(gram);
        }
    }
    Ratio::of(seen.len(), total)
}

/// Distinct hypothesis tokens over distinct tokens of context and hypothesis
/// together.
pub fn diversity(context: &[Vec<String>], hypothesis: &[String]) -> f64 {
    let hyp: HashSet<&String> = hypothesis.iter().collect();
    if hyp.is_empty() {
        return 0.0;
    }
    let mut all: HashSet<&String> = context.iter().flatten().collect();
    all.extend(hyp.iter().copied());
    hyp.len() as f64 / all.len() as f64
}

/// Which part of the context supplies the message side of a collocation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollocationScope {
    #[default]
    Context,
    Last,
}

impl std::str::FromStr for CollocationScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "context" => Ok(CollocationScope::Context),
            "last" => Ok(CollocationScope::Last),
            other => Err(Error::Validation(format!(
                "unknown collocation scope {other:?} (expected context or last)"
            ))),
        }
    }
}

/// One evaluated session: tokenized context, gold response and model output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalSession {
    pub context: Vec<Vec<String>>,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
}

impl EvalSession {
    fn message(&self, scope: CollocationScope) -> Vec<&String> {
        match scope {
            CollocationScope::Context => self.context.iter().flatten().collect(),
            CollocationScope::Last => self.context.last().into_iter().flatten().collect(),
        }
    }

    pub fn pair(&self) -> SentencePair {
        SentencePair {
            hypothesis: self.hypothesis.clone(),
            reference: self.reference.clone(),
        }
    }
}

/// Fraction of distinct (message token, reference token) pairs that the
/// model also realizes, i.e. whose response token occurs in the hypothesis of
/// a session where the pair is a reference collocation. Stop words are
/// excluded on both sides.
pub fn collocation_rate(
    sessions: &[EvalSession],
    stop: &HashSet<String>,
    scope: CollocationScope,
) -> Ratio {
    let mut reference: HashSet<(&str, &str)> = HashSet::new();
    let mut matched: HashSet<(&str, &str)> = HashSet::new();
    for s in sessions {
        let message: HashSet<&str> = s
            .message(scope)
            .into_iter()
            .filter(|t| !stop.contains(*t))
            .map(String::as_str)
            .collect();
        let hyp: HashSet<&str> = s.hypothesis.iter().map(String::as_str).collect();
        let gold: HashSet<&str> = s
            .reference
            .iter()
            .filter(|t| !stop.contains(*t))
            .map(String::as_str)
            .collect();
        for &m in &message {
            for &r in &gold {
                reference.insert((m, r));
                if hyp.contains(r) {
                    matched.insert((m, r));
                }
            }
        }
    }
    Ratio::of(matched.len(), reference.len())
}

/// Counts of non-stop tokens, sorted by count descending then token.
pub fn token_frequency<S: AsRef<[String]>>(
    hypotheses: &[S],
    stop: &HashSet<String>,
) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for h in hypotheses {
        for t in h.as_ref().iter().filter(|t| !stop.contains(*t)) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut out: Vec<(String, usize)> = counts
        .into_iter()
        .map(|(t, c)| (t.to_string(), c))
        .collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Reads a stop list: one token per line, blank lines and `#` comments ignored.
pub fn load_stoplist(path: &Path) -> Result<HashSet<String>> {
    let file = std::fs::File::open(path)?;
    let mut out = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.insert(t.to_string());
        }
    }
    Ok(out)
}

/// One line of a generated-output file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub context: Vec<String>,
    pub reference: String,
    pub hypothesis: String,
}

impl GeneratedRecord {
    pub fn tokenized(&self) -> EvalSession {
        EvalSession {
            context: self.context.iter().map(|u| tokenize(u, false)).collect(),
            reference: tokenize(&self.reference, false),
            hypothesis: tokenize(&self.hypothesis, false),
        }
    }
}

pub fn parse_generated(text: &str, source: &Path) -> Result<Vec<GeneratedRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: source.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_generated(path: &Path) -> Result<Vec<GeneratedRecord>> {
    parse_generated(&std::fs::read_to_string(path)?, path)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub sessions: usize,
    pub average: f64,
    pub greedy: f64,
    pub extrema: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    pub diversity: f64,
    pub collocation_rate: f64,
    pub excluded_pair_count: usize,
    pub zero_norm_pair_count: usize,
    /// Names of ratios whose denominator was empty.
    pub undefined: Vec<String>,
    #[serde(skip)]
    pub token_freq: Vec<(String, usize)>,
}

impl EvalReport {
    /// `key: value` lines; Distinct values are percentages.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(": ");
            s.push_str(&v);
            s.push('\n');
        };
        line("sessions", self.sessions.to_string());
        line("average", format!("{:.6}", self.average));
        line("greedy", format!("{:.6}", self.greedy));
        line("extrema", format!("{:.6}", self.extrema));
        line("distinct-1 (%)", format!("{:.4}", 100.0 * self.distinct1));
        line("distinct-2 (%)", format!("{:.4}", 100.0 * self.distinct2));
        line("diversity", format!("{:.6}", self.diversity));
        line("collocation_rate", format!("{:.6}", self.collocation_rate));
        line("excluded_pairs", self.excluded_pair_count.to_string());
        line("zero_norm_pairs", self.zero_norm_pair_count.to_string());
        if !self.undefined.is_empty() {
            line("undefined", self.undefined.join(","));
        }
        s
    }

    /// Single-line JSON record with full-precision values.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn token_freq_map(&self) -> BTreeMap<&str, usize> {
        self.token_freq.iter().map(|(t, c)| (t.as_str(), *c)).collect()
    }
}

/// Computes the full metric bundle over evaluated sessions.
pub fn evaluate(
    sessions: &[EvalSession],
    table: &EmbeddingTable,
    stop: &HashSet<String>,
    scope: CollocationScope,
) -> EvalReport {
    let pairs: Vec<SentencePair> = sessions.iter().map(EvalSession::pair).collect();
    let emb = embedding_scores(&pairs, table);
    let hyps: Vec<&[String]> = sessions.iter().map(|s| s.hypothesis.as_slice()).collect();
    let d1 = distinct_n(&hyps, 1);
    let d2 = distinct_n(&hyps, 2);
    let colloc = collocation_rate(sessions, stop, scope);
    let diversity = if sessions.is_empty() {
        0.0
    } else {
        sessions
            .iter()
            .map(|s| diversity(&s.context, &s.hypothesis))
            .sum::<f64>()
            / sessions.len() as f64
    };
    let mut undefined = Vec::new();
    for (name, r) in [("distinct1", d1), ("distinct2", d2), ("collocation_rate", colloc)] {
        if r.undefined {
            undefined.push(name.to_string());
        }
    }
    EvalReport {
        sessions: sessions.len(),
        average: emb.average,
        greedy: emb.greedy,
        extrema: emb.extrema,
        distinct1: d1.value,
        distinct2: d2.value,
        diversity,
        collocation_rate: colloc.value,
        excluded_pair_count: emb.excluded,
        zero_norm_pair_count: emb.zero_norm,
        undefined,
        token_freq: token_frequency(&hyps, stop),
    }
}
