//! Deterministic offline backends.
//!
//! [`ToyConditionalModel`] is an explicit next-token table: the probability of
//! a sequence is the product of each token's probability given everything
//! before it, and sampling draws one token at a time from the same table.
//! [`MockWorld`] builds such tables for survey prompts with a planted,
//! side-dependent valence effect, and for justification prompts with planted
//! side-dependent templates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::battery::Side;
use crate::error::{Error, Result};
use crate::justify::{JUSTIFICATION_CUE, LABEL_PROMPT_LEAD};

use super::{BackendError, CompletionBackend, EmbeddingBackend, SamplingParams};

/// End-of-sequence marker; never rendered.
pub const EOS: &str = "<eos>";

type Dist = Vec<(String, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConditionalModel {
    vocabulary: BTreeSet<String>,
    table: BTreeMap<Vec<String>, Dist>,
}

impl ToyConditionalModel {
    /// Validates that every distribution sums to 1 within 1e-9, has no
    /// negative mass, and only names vocabulary tokens.
    pub fn new(
        vocabulary: impl IntoIterator<Item = String>,
        table: BTreeMap<Vec<String>, Dist>,
    ) -> Result<Self> {
        let mut vocabulary: BTreeSet<String> = vocabulary.into_iter().collect();
        vocabulary.insert(EOS.to_string());
        for (context, dist) in &table {
            let total: f64 = dist.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "distribution after {context:?} sums to {total}"
                )));
            }
            for (tok, p) in dist {
                if !(*p >= 0.0) {
                    return Err(Error::Domain(format!("negative probability for {tok:?}")));
                }
                if !vocabulary.contains(tok) {
                    return Err(Error::Domain(format!("token {tok:?} not in vocabulary")));
                }
            }
            if let Some(t) = context.iter().find(|t| !vocabulary.contains(*t)) {
                return Err(Error::Domain(format!("context token {t:?} not in vocabulary")));
            }
        }
        Ok(ToyConditionalModel { vocabulary, table })
    }

    /// Builds conditionals from weighted complete sequences:
    /// p(next | prefix) = mass(prefix + next) / mass(prefix). Each sequence is
    /// terminated with [`EOS`].
    pub fn from_sequences(sequences: Vec<(Vec<String>, f64)>) -> Result<Self> {
        let mut mass: BTreeMap<Vec<String>, BTreeMap<String, f64>> = BTreeMap::new();
        let mut vocabulary = BTreeSet::new();
        for (mut seq, w) in sequences {
            if !(w > 0.0) {
                continue;
            }
            seq.push(EOS.to_string());
            for t in 0..seq.len() {
                vocabulary.insert(seq[t].clone());
                *mass
                    .entry(seq[..t].to_vec())
                    .or_default()
                    .entry(seq[t].clone())
                    .or_default() += w;
            }
        }
        if mass.is_empty() {
            return Err(Error::Domain("no sequences with positive weight".into()));
        }
        let table = mass
            .into_iter()
            .map(|(ctx, next)| {
                let total: f64 = next.values().sum();
                let dist = next.into_iter().map(|(t, m)| (t, m / total)).collect();
                (ctx, dist)
            })
            .collect();
        ToyConditionalModel::new(vocabulary, table)
    }

    /// Uniform next-token distribution over `vocab` for every context
    /// shorter than `length`.
    pub fn uniform(vocab: &[&str], length: usize) -> Self {
        let p = 1.0 / vocab.len() as f64;
        let mut table = BTreeMap::new();
        let mut frontier: Vec<Vec<String>> = vec![vec![]];
        for _ in 0..length {
            let mut next_frontier = Vec::new();
            for ctx in frontier {
                table.insert(
                    ctx.clone(),
                    vocab.iter().map(|t| (t.to_string(), p)).collect::<Dist>(),
                );
                for t in vocab {
                    let mut c = ctx.clone();
                    c.push(t.to_string());
                    next_frontier.push(c);
                }
            }
            frontier = next_frontier;
        }
        // Rounding in 1/V is far inside the 1e-9 tolerance.
        ToyConditionalModel::new(vocab.iter().map(|s| s.to_string()), table)
            .expect("uniform model is valid")
    }

    pub fn distribution(&self, context: &[String]) -> Option<&[(String, f64)]> {
        self.table.get(context).map(Vec::as_slice)
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.vocabulary.iter().map(String::as_str)
    }

    pub fn contexts(&self) -> impl Iterator<Item = (&Vec<String>, &Dist)> {
        self.table.iter()
    }
}

/// Probability of a token sequence as the product of its next-token
/// conditionals.
pub fn sequence_probability<S: AsRef<str>>(model: &ToyConditionalModel, tokens: &[S]) -> Result<f64> {
    let mut context: Vec<String> = Vec::with_capacity(tokens.len());
    let mut p = 1.0;
    for (pos, tok) in tokens.iter().enumerate() {
        let tok = tok.as_ref();
        if !model.vocabulary.contains(tok) {
            return Err(Error::Domain(format!(
                "token {tok:?} at position {pos} is not in the vocabulary"
            )));
        }
        let dist = model.distribution(&context).ok_or_else(|| {
            Error::Domain(format!("no distribution for the context before position {pos}"))
        })?;
        p *= dist
            .iter()
            .find(|(t, _)| t == tok)
            .map_or(0.0, |(_, q)| *q);
        context.push(tok.to_string());
    }
    Ok(p)
}

fn draw(dist: &[(String, f64)], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    if temperature <= 0.0 {
        let mut best = 0;
        for (i, (_, p)) in dist.iter().enumerate() {
            if *p > dist[best].1 {
                best = i;
            }
        }
        return best;
    }
    let weights: Vec<f64> = dist.iter().map(|(_, p)| p.powf(1.0 / temperature)).collect();
    let total: f64 = weights.iter().sum();
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if acc > target {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws tokens one at a time until [`EOS`], an unknown context, or `max_tokens`.
pub fn sample_tokens(
    model: &ToyConditionalModel,
    seed: u64,
    temperature: f64,
    max_tokens: usize,
) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < max_tokens {
        let Some(dist) = model.distribution(&tokens) else {
            break;
        };
        let tok = &dist[draw(dist, temperature, &mut rng)].0;
        if tok == EOS {
            break;
        }
        tokens.push(tok.clone());
    }
    tokens
}

/// Joins tokens as a continuation: a leading space, no space before
/// punctuation, none around newlines.
pub fn render(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut after_newline = false;
    for t in tokens {
        let attach = matches!(t.as_str(), "." | "," | "!" | "?" | ":" | ";" | "\n");
        if !attach && !after_newline {
            out.push(' ');
        }
        out.push_str(t);
        after_newline = t == "\n";
    }
    out
}

pub fn mock_complete(
    model: &ToyConditionalModel,
    seed: u64,
    temperature: f64,
    max_tokens: usize,
) -> String {
    render(&sample_tokens(model, seed, temperature, max_tokens))
}

/// Slots of alternatives; each alternative is space-separated tokens.
/// Expands to every combination with the product of weights.
pub fn expand_slots(slots: &[Vec<(String, f64)>]) -> Vec<(Vec<String>, f64)> {
    let mut out: Vec<(Vec<String>, f64)> = vec![(vec![], 1.0)];
    for slot in slots {
        let mut next = Vec::with_capacity(out.len() * slot.len());
        for (prefix, w) in &out {
            for (alt, aw) in slot {
                let mut seq = prefix.clone();
                seq.extend(alt.split(' ').filter(|s| !s.is_empty()).map(str::to_string));
                next.push((seq, w * aw));
            }
        }
        out = next;
    }
    out
}

fn uniform_slot(options: &[String]) -> Vec<(String, f64)> {
    let w = 1.0 / options.len() as f64;
    options.iter().map(|o| (o.clone(), w)).collect()
}

/// A side-dependent justification theme. Each slot picks one alternative
/// uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JustificationTemplate {
    pub name: String,
    pub slots: Vec<Vec<String>>,
    /// Relative chance of this template for liberal-primed prompts.
    pub liberal_weight: f64,
    pub conservative_weight: f64,
}

impl JustificationTemplate {
    pub fn weight(&self, side: Option<Side>) -> f64 {
        match side {
            Some(Side::Liberal) => self.liberal_weight,
            Some(Side::Conservative) => self.conservative_weight,
            None => 0.5 * (self.liberal_weight + self.conservative_weight),
        }
    }

    pub fn tokens(&self) -> BTreeSet<String> {
        self.slots
            .iter()
            .flatten()
            .flat_map(|alt| alt.split(' ').map(str::to_string).collect::<Vec<_>>())
            .filter(|s| s.chars().any(char::is_alphanumeric))
            .collect()
    }
}

fn opts(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Two lexically disjoint themes: individual liberty (80% of conservative
/// justifications) and protecting others (80% of liberal ones).
pub fn default_justification_templates() -> Vec<JustificationTemplate> {
    vec![
        JustificationTemplate {
            name: "individual liberty".into(),
            slots: vec![
                opts(&["people", "individuals", "citizens", "adults"]),
                opts(&["should be allowed to"]),
                opts(&["decide", "choose", "determine", "judge"]),
                opts(&["freely", "personally", "independently", "responsibly"]),
                opts(&["."]),
            ],
            liberal_weight: 0.2,
            conservative_weight: 0.8,
        },
        JustificationTemplate {
            name: "protecting others".into(),
            slots: vec![
                opts(&["it"]),
                opts(&["protects", "saves", "shields", "helps"]),
                opts(&["vulnerable", "elderly", "sick", "immunocompromised"]),
                opts(&["communities", "neighbors", "patients", "families"]),
                opts(&["from the"]),
                opts(&["virus", "disease", "pandemic", "infection"]),
                opts(&["."]),
            ],
            liberal_weight: 0.8,
            conservative_weight: 0.2,
        },
    ]
}

fn default_tails() -> Vec<String> {
    opts(&[
        "time will tell .",
        "many people feel strongly about that .",
        "we will see what happens .",
    ])
}

fn default_positive() -> String {
    "good idea".into()
}

fn default_negative() -> String {
    "bad idea".into()
}

fn half() -> f64 {
    0.5
}

/// A planted valence effect for prompts mentioning `issue_text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedIssue {
    pub issue_text: String,
    /// Liberal minus conservative probability of the positive phrase.
    pub effect: f64,
    /// Average probability of the positive phrase across sides.
    #[serde(default = "half")]
    pub baseline: f64,
    #[serde(default = "default_positive")]
    pub positive: String,
    #[serde(default = "default_negative")]
    pub negative: String,
}

impl PlantedIssue {
    pub fn new(issue_text: impl Into<String>, effect: f64) -> Self {
        PlantedIssue {
            issue_text: issue_text.into(),
            effect,
            baseline: 0.5,
            positive: default_positive(),
            negative: default_negative(),
        }
    }

    pub fn positive_probability(&self, side: Option<Side>) -> f64 {
        let shift = match side {
            Some(Side::Liberal) => 0.5 * self.effect,
            Some(Side::Conservative) => -0.5 * self.effect,
            None => 0.0,
        };
        (self.baseline + shift).clamp(0.0, 1.0)
    }
}

/// Configuration of the deterministic mock completion backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockWorld {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub issues: Vec<PlantedIssue>,
    #[serde(default = "default_justification_templates")]
    pub justification_templates: Vec<JustificationTemplate>,
    /// Closing sentences appended after the valence phrase.
    #[serde(default = "default_tails")]
    pub tails: Vec<String>,
    /// Chance that a survey completion runs on past a newline.
    #[serde(default = "default_run_on")]
    pub run_on_rate: f64,
    #[serde(default = "default_liberal_label")]
    pub liberal_label: String,
    #[serde(default = "default_conservative_label")]
    pub conservative_label: String,
}

fn default_run_on() -> f64 {
    0.2
}
fn default_liberal_label() -> String {
    "liberal".into()
}
fn default_conservative_label() -> String {
    "conservative".into()
}

impl MockWorld {
    pub fn new(seed: u64, issues: Vec<PlantedIssue>) -> Self {
        MockWorld {
            seed,
            issues,
            justification_templates: default_justification_templates(),
            tails: default_tails(),
            run_on_rate: default_run_on(),
            liberal_label: default_liberal_label(),
            conservative_label: default_conservative_label(),
        }
    }

    pub fn side_of(&self, prompt: &str) -> Option<Side> {
        const LEAD: &str = "I am a strong ";
        let start = prompt.find(LEAD)? + LEAD.len();
        let label = prompt[start..].split(' ').next()?;
        if label == self.liberal_label {
            Some(Side::Liberal)
        } else if label == self.conservative_label {
            Some(Side::Conservative)
        } else {
            None
        }
    }

    pub fn issue_of(&self, prompt: &str) -> Option<usize> {
        self.issues
            .iter()
            .position(|i| prompt.contains(&format!("around {}.", i.issue_text)))
    }

    /// Every token the world can emit, plus anchor-phrase tokens.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v: BTreeSet<String> = BTreeSet::new();
        for t in &self.justification_templates {
            v.extend(t.tokens());
        }
        for tail in &self.tails {
            v.extend(tail.split(' ').map(str::to_string));
        }
        for i in &self.issues {
            v.extend(i.positive.split(' ').map(str::to_string));
            v.extend(i.negative.split(' ').map(str::to_string));
        }
        v.extend(["good", "bad", "idea"].map(String::from));
        v.into_iter()
            .filter(|t| t.chars().any(char::is_alphanumeric))
            .map(|t| t.to_lowercase())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    fn valence_model(&self, issue: Option<usize>, side: Option<Side>) -> Result<ToyConditionalModel> {
        let fallback = PlantedIssue::new("", 0.0);
        let planted = issue.map_or(&fallback, |i| &self.issues[i]);
        let p = planted.positive_probability(side);
        let mut slots = vec![
            vec![
                (planted.positive.clone(), p),
                (planted.negative.clone(), 1.0 - p),
            ],
            vec![(".".to_string(), 1.0)],
        ];
        if !self.tails.is_empty() {
            slots.push(uniform_slot(&self.tails));
        }
        let run_on = self.run_on_rate.clamp(0.0, 1.0);
        slots.push(vec![
            (String::new(), 1.0 - run_on),
            ("\n what do you think ?".to_string(), run_on),
        ]);
        ToyConditionalModel::from_sequences(expand_slots(&slots))
    }

    fn justification_model(&self, side: Option<Side>) -> Result<ToyConditionalModel> {
        let total: f64 = self
            .justification_templates
            .iter()
            .map(|t| t.weight(side))
            .sum();
        let mut seqs = Vec::new();
        for t in &self.justification_templates {
            let w = t.weight(side) / total;
            let slots: Vec<Vec<(String, f64)>> = t.slots.iter().map(|s| uniform_slot(s)).collect();
            seqs.extend(expand_slots(&slots).into_iter().map(|(s, x)| (s, x * w)));
        }
        ToyConditionalModel::from_sequences(seqs)
    }

    /// Index of the template a justification text was drawn from.
    pub fn template_of(&self, text: &str) -> Option<usize> {
        let words: BTreeSet<String> = tokenize(text).collect();
        self.justification_templates
            .iter()
            .position(|t| t.tokens().iter().any(|tok| words.contains(tok)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum PromptKind {
    Survey(Option<usize>, Option<Side>),
    Justification(Option<Side>),
}

/// Mock completion backend over a [`MockWorld`].
#[derive(Debug)]
pub struct MockCompletionBackend {
    world: MockWorld,
    models: Mutex<HashMap<PromptKind, Arc<ToyConditionalModel>>>,
}

impl MockCompletionBackend {
    pub fn new(world: MockWorld) -> Self {
        MockCompletionBackend {
            world,
            models: Mutex::new(HashMap::new()),
        }
    }

    pub fn world(&self) -> &MockWorld {
        &self.world
    }

    fn model(&self, kind: PromptKind) -> Result<Arc<ToyConditionalModel>> {
        if let Some(m) = self.models.lock().expect("model cache").get(&kind) {
            return Ok(Arc::clone(m));
        }
        let model = Arc::new(match kind {
            PromptKind::Survey(issue, side) => self.world.valence_model(issue, side)?,
            PromptKind::Justification(side) => self.world.justification_model(side)?,
        });
        self.models
            .lock()
            .expect("model cache")
            .insert(kind, Arc::clone(&model));
        Ok(model)
    }

    fn sample_seed(&self, model_id: &str, prompt: &str, params: &SamplingParams, index: u32) -> u64 {
        let mut h = Sha256::new();
        h.update(self.world.seed.to_le_bytes());
        h.update(model_id.as_bytes());
        h.update([0]);
        h.update(prompt.as_bytes());
        h.update([0]);
        h.update(params.temperature.to_bits().to_le_bytes());
        h.update(params.max_tokens.to_le_bytes());
        h.update(index.to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
    }

    /// Generates one completion for `prompt`; identical inputs give identical text.
    pub fn generate(&self, model_id: &str, prompt: &str, params: &SamplingParams, index: u32) -> Result<String> {
        if prompt.starts_with(LABEL_PROMPT_LEAD) {
            return Ok(mock_labels(prompt));
        }
        let side = self.world.side_of(prompt);
        let kind = if prompt.trim_end().ends_with(JUSTIFICATION_CUE) {
            PromptKind::Justification(side)
        } else {
            PromptKind::Survey(self.world.issue_of(prompt), side)
        };
        let model = self.model(kind)?;
        let seed = self.sample_seed(model_id, prompt, params, index);
        Ok(mock_complete(
            &model,
            seed,
            params.temperature,
            params.max_tokens as usize,
        ))
    }
}

impl CompletionBackend for MockCompletionBackend {
    fn backend_id(&self) -> String {
        format!("mock:{}", self.world.seed)
    }

    fn complete(
        &self,
        prompt: &str,
        model_id: &str,
        params: &SamplingParams,
        sample_indices: &[u32],
    ) -> Result<Vec<String>, BackendError> {
        sample_indices
            .iter()
            .map(|&i| {
                self.generate(model_id, prompt, params, i)
                    .map_err(|e| BackendError::Permanent {
                        status: 400,
                        message: e.to_string(),
                    })
            })
            .collect()
    }
}

const STOPWORDS: &[&str] = &[
    "the", "a", "an", "and", "or", "to", "of", "it", "is", "be", "for", "on", "in", "that", "this",
    "from", "what", "their", "them", "they", "should", "with", "because",
];

/// Answers a cluster-labeling prompt with each cluster's most frequent
/// content words, one numbered line per cluster.
fn mock_labels(prompt: &str) -> String {
    let mut clusters: Vec<BTreeMap<String, usize>> = Vec::new();
    for line in prompt.lines() {
        let line = line.trim();
        if line.starts_with("Cluster ") && line.ends_with(':') {
            clusters.push(BTreeMap::new());
        } else if let (Some(text), Some(counts)) = (line.strip_prefix("- "), clusters.last_mut()) {
            for tok in tokenize(text) {
                if tok.len() > 2 && !STOPWORDS.contains(&tok.as_str()) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
    }
    clusters
        .iter()
        .enumerate()
        .map(|(i, counts)| {
            let mut ranked: Vec<(&String, &usize)> = counts.iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
            let words: Vec<&str> = ranked.iter().take(3).map(|(w, _)| w.as_str()).collect();
            let label = if words.is_empty() {
                "miscellaneous".to_string()
            } else {
                words.join(" ")
            };
            format!("{}. {}", i + 1, label)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
}

/// Bag-of-words embedder with unit-length output. Vocabulary tokens own one
/// dimension each, so texts sharing no vocabulary token are exactly
/// orthogonal; other tokens are hashed into the remaining dimensions.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    max_batch: usize,
    index: HashMap<String, usize>,
}

impl MockEmbedder {
    pub fn new(dim: usize, max_batch: usize, vocabulary: &[String]) -> Result<Self> {
        let mut index = HashMap::new();
        for tok in vocabulary {
            let next = index.len();
            index.entry(tok.to_lowercase()).or_insert(next);
        }
        if index.len() + 2 > dim {
            return Err(Error::Config(format!(
                "mock embedding dim {dim} too small for {} vocabulary tokens",
                index.len()
            )));
        }
        if max_batch == 0 {
            return Err(Error::Config("max_batch must be positive".into()));
        }
        Ok(MockEmbedder {
            dim,
            max_batch,
            index,
        })
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let reserved = self.index.len();
        let free = self.dim - reserved - 1;
        let mut any = false;
        for tok in tokenize(text) {
            any = true;
            let slot = match self.index.get(&tok) {
                Some(&i) => i,
                None => {
                    let h = Sha256::digest(tok.as_bytes());
                    let x = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
                    reserved + (x % free as u64) as usize
                }
            };
            v[slot] += 1.0;
        }
        if !any {
            // Token-free text still needs a nonzero vector.
            v[self.dim - 1] = 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl EmbeddingBackend for MockEmbedder {
    fn backend_id(&self) -> String {
        format!("mock-bow:{}", self.dim)
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn embed(&self, texts: &[String], _model_id: &str) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
