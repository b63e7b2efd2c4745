//! Template-driven synthetic corpus with planted labels.
//!
//! Each case is built from sentences rendered from a [`TemplateSet`]. A case
//! carries exactly one signal sentence whose `{SIGNAL}` slot is filled from
//! the positive or negative signal terms according to its label; no other
//! text can contain a signal term. Lengths (in tokens under
//! [`token_count`](crate::clintext::token_count)) follow a log-normal with
//! the configured mean and standard deviation, clipped to
//! `[min_tokens, max_tokens]`, and are hit exactly by padding with filler
//! words.
//!
//! In long-range mode every case opens with the anchor token
//! [`LONG_RANGE_ANCHOR`] and the signal term is placed at least
//! `cue_separation` tokens after it, so a model that only sees a short prefix
//! has no label information.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{ClinicalCase, CorpusSplit};
use crate::clintext::{normalize_text, tokenize};
use crate::rng::{named_stream, stream, StreamRng};
use crate::{Error, Result};

pub const LONG_RANGE_ANCHOR: &str = "recheck";
const ANCHOR_SENTENCE: &str = "Recheck visit scheduled .";
/// Extra random offset added to the cue separation in long-range mode.
const CUE_JITTER: usize = 24;

/// Single-token words used to pad a case to its exact target length.
pub const FILLER_WORDS: &[&str] = &[
    "noted", "today", "again", "overall", "otherwise", "reviewed", "further", "currently",
    "documented", "observed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub target_mean_tokens: f64,
    pub target_sd_tokens: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub positive_rate: f64,
    pub long_range_mode: bool,
    /// Minimum token distance between the anchor and the signal term in
    /// long-range mode.
    pub cue_separation: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_train: 400,
            n_validation: 100,
            n_test: 100,
            target_mean_tokens: 287.0,
            target_sd_tokens: 156.0,
            min_tokens: 50,
            max_tokens: 1200,
            positive_rate: 0.5,
            long_range_mode: false,
            cue_separation: 256,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_train == 0 || self.n_validation == 0 || self.n_test == 0 {
            return bad("split counts must be positive".into());
        }
        if !(self.min_tokens as f64 <= self.target_mean_tokens
            && self.target_mean_tokens <= self.max_tokens as f64)
        {
            return bad(format!(
                "need min_tokens {} <= target_mean_tokens {} <= max_tokens {}",
                self.min_tokens, self.target_mean_tokens, self.max_tokens
            ));
        }
        if !(self.target_sd_tokens > 0.0 && self.target_sd_tokens.is_finite()) {
            return bad("target_sd_tokens must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.positive_rate) {
            return bad(format!("positive_rate {} outside [0, 1]", self.positive_rate));
        }
        Ok(())
    }

    /// Log-normal (mu, sigma) whose mean and sd equal the targets.
    pub fn lognormal_params(&self) -> (f64, f64) {
        let (m, s) = (self.target_mean_tokens, self.target_sd_tokens);
        let sigma2 = (1.0 + (s * s) / (m * m)).ln();
        (m.ln() - sigma2 / 2.0, sigma2.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Symptom,
    Entity,
    Meas,
    Signal,
}

impl Slot {
    fn parse(name: &str) -> Option<Slot> {
        Some(match name {
            "SYMPTOM" => Slot::Symptom,
            "ENTITY" => Slot::Entity,
            "MEAS" => Slot::Meas,
            "SIGNAL" => Slot::Signal,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
enum Piece {
    Text(String),
    Slot(Slot),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSet {
    /// Sentences with `{SYMPTOM}`, `{ENTITY}`, `{MEAS}` or `{SIGNAL}` slots.
    /// `{MEAS}` renders as a number followed by a unit term.
    pub templates: Vec<String>,
    pub symptom_terms: Vec<String>,
    pub entity_terms: Vec<String>,
    pub unit_terms: Vec<String>,
    pub positive_signal_terms: Vec<String>,
    pub negative_signal_terms: Vec<String>,
}

fn parse_template(t: &str) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let mut rest = t;
    while let Some(open) = rest.find('{') {
        let close = rest[open..]
            .find('}')
            .map(|c| open + c)
            .ok_or_else(|| Error::InvalidTemplates(format!("unclosed slot in {t:?}")))?;
        if open > 0 {
            pieces.push(Piece::Text(rest[..open].to_string()));
        }
        let name = &rest[open + 1..close];
        let slot = Slot::parse(name)
            .ok_or_else(|| Error::InvalidTemplates(format!("unknown slot {{{name}}} in {t:?}")))?;
        pieces.push(Piece::Slot(slot));
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest.to_string()));
    }
    Ok(pieces)
}

fn words(s: &str) -> Vec<String> {
    tokenize(&normalize_text(s))
}

impl TemplateSet {
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../../data/templates.json"))
            .expect("bundled template set is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::json(path.display().to_string(), e))
    }

    fn terms(&self, slot: Slot) -> &[String] {
        match slot {
            Slot::Symptom => &self.symptom_terms,
            Slot::Entity => &self.entity_terms,
            Slot::Meas => &self.unit_terms,
            Slot::Signal => &self.positive_signal_terms,
        }
    }

    /// Check slot coverage, signal-term disjointness and that no non-signal
    /// text can produce a signal token.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTemplates(m));
        if self.positive_signal_terms.is_empty() || self.negative_signal_terms.is_empty() {
            return bad("both signal term lists must be non-empty".into());
        }
        let mut signal: BTreeSet<String> = BTreeSet::new();
        for term in self.positive_signal_terms.iter().chain(&self.negative_signal_terms) {
            let w = words(term);
            if w.len() != 1 {
                return bad(format!("signal term {term:?} must be a single token"));
            }
            if !signal.insert(w[0].clone()) {
                return bad(format!("signal term {term:?} is listed twice"));
            }
        }
        let (mut n_signal, mut n_plain) = (0, 0);
        for t in &self.templates {
            let pieces = parse_template(t)?;
            let slots = pieces.iter().filter(|p| matches!(p, Piece::Slot(Slot::Signal))).count();
            match slots {
                0 => n_plain += 1,
                1 => n_signal += 1,
                _ => return bad(format!("template {t:?} has more than one {{SIGNAL}} slot")),
            }
            for p in &pieces {
                match p {
                    Piece::Slot(s) if self.terms(*s).is_empty() => {
                        return bad(format!("slot {s:?} used in {t:?} has no terms"));
                    }
                    Piece::Text(text) => {
                        if let Some(w) = words(text).into_iter().find(|w| signal.contains(w)) {
                            return bad(format!("template {t:?} contains signal term {w:?}"));
                        }
                        if !self.is_long_range_safe(text) {
                            return bad(format!("template {t:?} contains the anchor token"));
                        }
                    }
                    _ => {}
                }
            }
        }
        if n_signal == 0 || n_plain == 0 {
            return bad("need at least one {SIGNAL} template and one plain template".into());
        }
        for term in self
            .symptom_terms
            .iter()
            .chain(&self.entity_terms)
            .chain(&self.unit_terms)
            .map(String::as_str)
            .chain(FILLER_WORDS.iter().copied())
        {
            let w = words(term);
            if w.is_empty() {
                return bad("empty term".into());
            }
            if let Some(s) = w.iter().find(|w| signal.contains(*w)) {
                return bad(format!("term {term:?} contains signal term {s:?}"));
            }
            if !self.is_long_range_safe(term) {
                return bad(format!("term {term:?} contains the anchor token"));
            }
        }
        Ok(())
    }

    fn is_long_range_safe(&self, text: &str) -> bool {
        !words(text).iter().any(|w| w == LONG_RANGE_ANCHOR)
    }

    /// Upper bound on the token length of any rendered signal sentence.
    fn max_signal_sentence_len(&self) -> usize {
        let longest = |terms: &[String]| terms.iter().map(|t| words(t).len()).max().unwrap_or(0);
        self.templates
            .iter()
            .filter_map(|t| parse_template(t).ok())
            .filter(|p| p.iter().any(|p| matches!(p, Piece::Slot(Slot::Signal))))
            .map(|pieces| {
                pieces
                    .iter()
                    .map(|p| match p {
                        Piece::Text(s) => words(s).len(),
                        Piece::Slot(Slot::Meas) => 1 + longest(&self.unit_terms),
                        Piece::Slot(Slot::Signal) => 1,
                        Piece::Slot(s) => longest(self.terms(*s)),
                    })
                    .sum()
            })
            .max()
            .unwrap_or(0)
    }
}

/// A rendered sentence with its token count and the token offset of its
/// signal term, if any.
struct Sentence {
    text: String,
    len: usize,
    signal_offset: Option<usize>,
}

struct Renderer<'a> {
    templates: &'a TemplateSet,
    plain: Vec<Vec<Piece>>,
    signal: Vec<Vec<Piece>>,
}

impl<'a> Renderer<'a> {
    fn new(templates: &'a TemplateSet) -> Result<Self> {
        let mut plain = Vec::new();
        let mut signal = Vec::new();
        for t in &templates.templates {
            let pieces = parse_template(t)?;
            if pieces.iter().any(|p| matches!(p, Piece::Slot(Slot::Signal))) {
                signal.push(pieces);
            } else {
                plain.push(pieces);
            }
        }
        Ok(Self {
            templates,
            plain,
            signal,
        })
    }

    fn pick<'t>(rng: &mut StreamRng, terms: &'t [String]) -> &'t str {
        &terms[rng.random_range(0..terms.len())]
    }

    fn render(&self, pieces: &[Piece], label: bool, rng: &mut StreamRng) -> Sentence {
        let mut text = String::new();
        let mut signal_offset = None;
        for p in pieces {
            match p {
                Piece::Text(s) => text.push_str(s),
                Piece::Slot(Slot::Meas) => {
                    let whole = rng.random_range(1..=150u32);
                    if rng.random_bool(0.3) {
                        let tenth = rng.random_range(1..=9u32);
                        text.push_str(&format!("{}.{}", whole.min(30), tenth));
                    } else {
                        text.push_str(&whole.to_string());
                    }
                    text.push(' ');
                    text.push_str(Self::pick(rng, &self.templates.unit_terms));
                }
                Piece::Slot(Slot::Signal) => {
                    signal_offset = Some(words(&text).len());
                    let terms = if label {
                        &self.templates.positive_signal_terms
                    } else {
                        &self.templates.negative_signal_terms
                    };
                    text.push_str(Self::pick(rng, terms));
                }
                Piece::Slot(s) => text.push_str(Self::pick(rng, self.templates.terms(*s))),
            }
        }
        let mut chars = text.trim().chars();
        let text = match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
        Sentence {
            len: words(&text).len(),
            text,
            signal_offset,
        }
    }

    fn filler(&self, rng: &mut StreamRng) -> Sentence {
        let pieces = &self.plain[rng.random_range(0..self.plain.len())];
        self.render(pieces, false, rng)
    }

    fn signal(&self, label: bool, rng: &mut StreamRng) -> Sentence {
        let pieces = &self.signal[rng.random_range(0..self.signal.len())];
        self.render(pieces, label, rng)
    }
}

/// Accumulates sentences while tracking the token count.
#[derive(Default)]
struct CaseText {
    parts: Vec<String>,
    len: usize,
}

impl CaseText {
    fn push(&mut self, s: Sentence) {
        self.len += s.len;
        self.parts.push(s.text);
    }

    /// Add filler sentences, then filler words, until exactly `target` tokens.
    fn fill_to(&mut self, target: usize, renderer: &Renderer, rng: &mut StreamRng) {
        let mut misses = 0;
        while self.len < target && misses < 3 {
            let s = renderer.filler(rng);
            if self.len + s.len <= target {
                self.push(s);
            } else {
                misses += 1;
            }
        }
        if self.len < target {
            let pad: Vec<&str> = (self.len..target)
                .map(|_| FILLER_WORDS[rng.random_range(0..FILLER_WORDS.len())])
                .collect();
            self.len = target;
            self.parts.push(pad.join(" "));
        }
    }
}

struct Planner<'a> {
    cfg: &'a GeneratorConfig,
    renderer: Renderer<'a>,
    lengths: LogNormal<f64>,
    long_range_min: usize,
}

impl Planner<'_> {
    fn case(&self, index: usize, label: bool) -> ClinicalCase {
        let mut rng = stream(self.cfg.seed, index as u64);
        let drawn = self.lengths.sample(&mut rng).round();
        let mut target = (drawn.max(0.0) as usize).clamp(self.cfg.min_tokens, self.cfg.max_tokens);
        let mut text = CaseText::default();
        if self.cfg.long_range_mode {
            target = target.max(self.long_range_min);
            text.push(Sentence {
                text: ANCHOR_SENTENCE.to_string(),
                len: words(ANCHOR_SENTENCE).len(),
                signal_offset: None,
            });
            let sig = self.renderer.signal(label, &mut rng);
            let offset = sig.signal_offset.unwrap_or(0);
            let signal_pos = self.cfg.cue_separation + rng.random_range(0..CUE_JITTER);
            text.fill_to(signal_pos - offset, &self.renderer, &mut rng);
            text.push(sig);
        } else {
            let sig = self.renderer.signal(label, &mut rng);
            let mut prefix = rng.random_range(0..=2usize);
            while prefix > 0 {
                let s = self.renderer.filler(&mut rng);
                if text.len + s.len + sig.len <= target {
                    text.push(s);
                }
                prefix -= 1;
            }
            text.push(sig);
        }
        text.fill_to(target, &self.renderer, &mut rng);
        ClinicalCase::new(format!("Task101_case{}", index + 1), text.parts.join(" "), Some(label))
    }
}

/// Exactly `round(n * rate)` positives, positions shuffled by a named stream.
fn allocate_labels(n: usize, rate: f64, seed: u64, split: &str) -> Vec<bool> {
    let k = (n as f64 * rate).round() as usize;
    let mut labels: Vec<bool> = (0..n).map(|i| i < k).collect();
    labels.shuffle(&mut named_stream(seed, &format!("labels/{split}")));
    labels
}

pub fn generate_corpus(cfg: &GeneratorConfig, templates: &TemplateSet) -> Result<CorpusSplit> {
    cfg.validate()?;
    templates.validate()?;
    let max_sig = templates.max_signal_sentence_len();
    if cfg.min_tokens < max_sig + 2 {
        return Err(Error::Infeasible(format!(
            "min_tokens {} cannot hold a signal sentence of up to {max_sig} tokens",
            cfg.min_tokens
        )));
    }
    let anchor_len = words(ANCHOR_SENTENCE).len();
    let long_range_min = cfg.cue_separation + CUE_JITTER + max_sig + 1;
    if cfg.long_range_mode && (long_range_min > cfg.max_tokens || cfg.cue_separation < anchor_len + max_sig) {
        return Err(Error::Infeasible(format!(
            "cue separation {} needs cases of at least {long_range_min} tokens (max_tokens {})",
            cfg.cue_separation, cfg.max_tokens
        )));
    }
    let (mu, sigma) = cfg.lognormal_params();
    let planner = Planner {
        cfg,
        renderer: Renderer::new(templates)?,
        lengths: LogNormal::new(mu, sigma)
            .map_err(|e| Error::InvalidConfig(format!("length distribution: {e}")))?,
        long_range_min,
    };
    let mut next = 0usize;
    let mut split = |n: usize, name: &str| -> Vec<ClinicalCase> {
        let labels = allocate_labels(n, cfg.positive_rate, cfg.seed, name);
        let start = next;
        next += n;
        labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| planner.case(start + i, label))
            .collect()
    };
    Ok(CorpusSplit {
        train: split(cfg.n_train, "train"),
        validation: split(cfg.n_validation, "validation"),
        test: split(cfg.n_test, "test"),
    })
}
