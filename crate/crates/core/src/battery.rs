//! Prompt battery composition.
//!
//! A prompt is three blocks joined by single spaces: a partisan priming, an
//! issue block (with or without the COVID-19 preamble), and a completion stem
//! that the model continues. [`Battery::expand`] enumerates every
//! side × issue × wording × stem combination in a fixed order.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::axis::AxisSpec;
use crate::error::{Error, Result};

pub const DEFAULT_STEM: &str = "I believe this is a";

const COVID_PASSAGE: &str = "Lately, one of the biggest political issues has been the COVID-19 pandemic caused by the new coronavirus.";
const ISSUE_LEAD: &str = "There is a lot of controversy around ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Liberal,
    Conservative,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Liberal, Side::Conservative];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Liberal => "liberal",
            Side::Conservative => "conservative",
        }
    }

    pub fn flipped(self) -> Side {
        match self {
            Side::Liberal => Side::Conservative,
            Side::Conservative => Side::Liberal,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    Covid,
    /// Same prompt with the COVID-19 passage removed.
    Validation,
}

/// Partisan identity stated at the top of every prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimingProfile {
    pub side: Side,
    pub ideology_label: String,
    pub party: String,
    pub candidate: String,
    pub out_party: String,
}

impl PrimingProfile {
    pub fn default_for(side: Side) -> Self {
        let (ideology, party, candidate, out_party) = match side {
            Side::Liberal => ("liberal", "Democrat", "Hillary Clinton", "Republicans"),
            Side::Conservative => ("conservative", "Republican", "Donald Trump", "Democrats"),
        };
        PrimingProfile {
            side,
            ideology_label: ideology.to_string(),
            party: party.to_string(),
            candidate: candidate.to_string(),
            out_party: out_party.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("ideology_label", &self.ideology_label),
            ("party", &self.party),
            ("candidate", &self.candidate),
            ("out_party", &self.out_party),
        ] {
            if value.trim().is_empty() {
                return Err(Error::Config(format!(
                    "{} priming has an empty {name}",
                    self.side
                )));
            }
        }
        Ok(())
    }
}

/// Optional per-field overrides of a side's default priming.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimingOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ideology_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub party: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_party: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimingOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub liberal: Option<PrimingOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conservative: Option<PrimingOverride>,
}

impl PrimingOverrides {
    pub fn profile(&self, side: Side) -> PrimingProfile {
        let mut profile = PrimingProfile::default_for(side);
        let over = match side {
            Side::Liberal => self.liberal.as_ref(),
            Side::Conservative => self.conservative.as_ref(),
        };
        if let Some(o) = over {
            if let Some(v) = &o.ideology_label {
                profile.ideology_label = v.clone();
            }
            if let Some(v) = &o.party {
                profile.party = v.clone();
            }
            if let Some(v) = &o.candidate {
                profile.candidate = v.clone();
            }
            if let Some(v) = &o.out_party {
                profile.out_party = v.clone();
            }
        }
        profile
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemVariant {
    pub stem_id: String,
    pub text: String,
}

impl StemVariant {
    /// Stem whose id is derived from its text, so it is stable under reordering.
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let stem_id = format!("stem-{}", &sha256_hex(text.as_bytes())[..8]);
        let stem = StemVariant { stem_id, text };
        stem.validate()?;
        Ok(stem)
    }

    pub fn validate(&self) -> Result<()> {
        let trimmed = self.text.trim_end();
        if trimmed.is_empty() {
            return Err(Error::Config(format!("stem {:?} is empty", self.stem_id)));
        }
        if trimmed.ends_with(['.', '!', '?']) {
            return Err(Error::Config(format!(
                "stem {:?} ends in sentence punctuation: {:?}",
                self.stem_id, self.text
            )));
        }
        Ok(())
    }
}

/// Stem in the config file: either bare text or an explicit id/text pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StemConfig {
    Text(String),
    Explicit { stem_id: String, text: String },
}

impl StemConfig {
    fn resolve(&self) -> Result<StemVariant> {
        match self {
            StemConfig::Text(t) => StemVariant::new(t.clone()),
            StemConfig::Explicit { stem_id, text } => {
                let s = StemVariant {
                    stem_id: stem_id.clone(),
                    text: text.clone(),
                };
                s.validate()?;
                Ok(s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordingConfig {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stems: Vec<StemConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssueSpec {
    pub issue_id: String,
    pub topic: String,
    pub axis_ref: String,
    pub wordings: Vec<WordingConfig>,
}

impl IssueSpec {
    /// Stems attached to wording `index`, falling back to [`DEFAULT_STEM`].
    pub fn stems(&self, index: usize) -> Result<Vec<StemVariant>> {
        let wording = &self.wordings[index];
        if wording.stems.is_empty() {
            return Ok(vec![StemVariant::new(DEFAULT_STEM)?]);
        }
        wording.stems.iter().map(StemConfig::resolve).collect()
    }
}

/// The JSON battery file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryConfig {
    pub battery_id: String,
    #[serde(default)]
    pub mode: PromptMode,
    #[serde(default, skip_serializing_if = "is_default_overrides")]
    pub primings: PrimingOverrides,
    #[serde(default = "both_sides")]
    pub sides: Vec<Side>,
    #[serde(default)]
    pub axes: Vec<AxisSpec>,
    pub issues: Vec<IssueSpec>,
}

fn is_default_overrides(o: &PrimingOverrides) -> bool {
    *o == PrimingOverrides::default()
}

fn both_sides() -> Vec<Side> {
    Side::BOTH.to_vec()
}

/// One fully composed prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub prompt_id: String,
    pub side: Side,
    pub issue_id: String,
    pub wording_index: usize,
    pub stem_id: String,
    pub full_text: String,
}

/// The three blocks of a composed prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptParts<'a> {
    pub priming: &'a str,
    pub issue_block: &'a str,
    pub stem: &'a str,
}

pub fn compose_priming(profile: &PrimingProfile) -> String {
    format!(
        "I am a strong {} and a lifelong {}. In 2016, I was proud to vote for {} and I think that the {} have been a disaster for this country.",
        profile.ideology_label, profile.party, profile.candidate, profile.out_party
    )
}

/// The issue sentence, preceded by the COVID-19 passage in [`PromptMode::Covid`].
pub fn compose_issue_block(issue_text: &str, mode: PromptMode) -> String {
    match mode {
        PromptMode::Covid => format!("{COVID_PASSAGE} {ISSUE_LEAD}{issue_text}."),
        PromptMode::Validation => format!("{ISSUE_LEAD}{issue_text}."),
    }
}

pub fn compose_prompt(
    profile: &PrimingProfile,
    issue_text: &str,
    stem: &StemVariant,
    mode: PromptMode,
) -> Result<String> {
    if issue_text.trim().is_empty() {
        return Err(Error::Config("issue text is empty".into()));
    }
    stem.validate()?;
    Ok(format!(
        "{} {} {}",
        compose_priming(profile),
        compose_issue_block(issue_text, mode),
        stem.text
    ))
}

/// Splits a composed prompt back into its blocks.
///
/// The priming ends at the first ". " after "this country", the stem starts
/// after the last ". " (stems never contain sentence punctuation).
pub fn split_prompt(text: &str) -> Option<PromptParts<'_>> {
    const PRIMING_END: &str = "have been a disaster for this country.";
    let p_end = text.find(PRIMING_END)? + PRIMING_END.len();
    let rest = text.get(p_end..)?.strip_prefix(' ')?;
    let stem_sep = rest.rfind(". ")?;
    let issue_block = &rest[..=stem_sep];
    let stem = &rest[stem_sep + 2..];
    if !issue_block.contains(ISSUE_LEAD) {
        return None;
    }
    Some(PromptParts {
        priming: &text[..p_end],
        issue_block,
        stem,
    })
}

/// Extracts the `{issue}` text from an issue block.
pub fn issue_text_of(issue_block: &str) -> Option<&str> {
    let start = issue_block.find(ISSUE_LEAD)? + ISSUE_LEAD.len();
    issue_block[start..].strip_suffix('.')
}

/// A validated battery ready for expansion.
#[derive(Debug, Clone)]
pub struct Battery {
    config: BatteryConfig,
}

impl Battery {
    pub fn new(config: BatteryConfig) -> Result<Self> {
        if config.battery_id.trim().is_empty() {
            return Err(Error::Config("battery_id is empty".into()));
        }
        if config.issues.is_empty() {
            return Err(Error::Config("battery has no issues".into()));
        }
        let mut sides = HashSet::new();
        for side in &config.sides {
            if !sides.insert(*side) {
                return Err(Error::Config(format!("side {side} listed twice")));
            }
            config.primings.profile(*side).validate()?;
        }
        if sides.is_empty() {
            return Err(Error::Config("no priming sides enabled".into()));
        }

        let mut axis_ids = HashSet::new();
        for axis in &config.axes {
            axis.validate()?;
            if !axis_ids.insert(axis.axis_id.as_str()) {
                return Err(Error::Config(format!("duplicate axis_id {:?}", axis.axis_id)));
            }
        }

        let mut seen = HashSet::new();
        for issue in &config.issues {
            if !seen.insert(issue.issue_id.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate issue_id {:?}",
                    issue.issue_id
                )));
            }
            if issue.wordings.is_empty() {
                return Err(Error::Config(format!(
                    "issue {:?} has no wordings",
                    issue.issue_id
                )));
            }
            if !config.axes.is_empty() && !axis_ids.contains(issue.axis_ref.as_str()) {
                return Err(Error::Config(format!(
                    "issue {:?} references unknown axis {:?}",
                    issue.issue_id, issue.axis_ref
                )));
            }
            for (i, w) in issue.wordings.iter().enumerate() {
                if w.text.trim().is_empty() {
                    return Err(Error::Config(format!(
                        "issue {:?} wording {i} is empty",
                        issue.issue_id
                    )));
                }
                let stems = issue.stems(i)?;
                let mut ids = HashSet::new();
                for s in &stems {
                    if !ids.insert(s.stem_id.clone()) {
                        return Err(Error::Config(format!(
                            "issue {:?} wording {i} repeats stem {:?}",
                            issue.issue_id, s.stem_id
                        )));
                    }
                }
            }
        }
        Ok(Battery { config })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: BatteryConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("battery: {e}")))?;
        Battery::new(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Battery::from_json(&text)
    }

    pub fn config(&self) -> &BatteryConfig {
        &self.config
    }

    pub fn id(&self) -> &str {
        &self.config.battery_id
    }

    pub fn mode(&self) -> PromptMode {
        self.config.mode
    }

    pub fn issues(&self) -> &[IssueSpec] {
        &self.config.issues
    }

    pub fn issue(&self, issue_id: &str) -> Option<&IssueSpec> {
        self.config.issues.iter().find(|i| i.issue_id == issue_id)
    }

    pub fn axis(&self, axis_id: &str) -> Option<&AxisSpec> {
        self.config.axes.iter().find(|a| a.axis_id == axis_id)
    }

    pub fn profile(&self, side: Side) -> PrimingProfile {
        self.config.primings.profile(side)
    }

    /// Number of wording × stem combinations (prompts per side).
    pub fn question_count(&self) -> usize {
        self.config
            .issues
            .iter()
            .map(|issue| {
                (0..issue.wordings.len())
                    .map(|i| issue.stems(i).map_or(0, |s| s.len()))
                    .sum::<usize>()
            })
            .sum()
    }

    pub fn prompt_count(&self) -> usize {
        self.config.sides.len() * self.question_count()
    }

    /// Completion calls needed to draw `n_samples` per prompt.
    pub fn planned_calls(&self, n_samples: usize) -> usize {
        self.prompt_count() * n_samples
    }

    /// SHA-256 of the canonical JSON form, used to pin a run to its battery.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.config).expect("battery serializes");
        sha256_hex(&canonical)
    }

    /// Every prompt, ordered by (side, issue, wording, stem).
    pub fn expand(&self) -> Result<Vec<PromptInstance>> {
        let mut out = Vec::with_capacity(self.prompt_count());
        for &side in &self.config.sides {
            let profile = self.profile(side);
            for issue in &self.config.issues {
                for (wi, wording) in issue.wordings.iter().enumerate() {
                    for stem in issue.stems(wi)? {
                        let full_text =
                            compose_prompt(&profile, &wording.text, &stem, self.config.mode)?;
                        out.push(PromptInstance {
                            prompt_id: prompt_id(
                                &self.config.battery_id,
                                side,
                                &issue.issue_id,
                                wi,
                                &stem.stem_id,
                            ),
                            side,
                            issue_id: issue.issue_id.clone(),
                            wording_index: wi,
                            stem_id: stem.stem_id.clone(),
                            full_text,
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Recomposes an instance's text from the battery; used to audit prompts.jsonl.
    pub fn recompose(&self, instance: &PromptInstance) -> Result<String> {
        let issue = self
            .issue(&instance.issue_id)
            .ok_or_else(|| Error::Config(format!("unknown issue {:?}", instance.issue_id)))?;
        let wording = issue.wordings.get(instance.wording_index).ok_or_else(|| {
            Error::Config(format!(
                "issue {:?} has no wording {}",
                instance.issue_id, instance.wording_index
            ))
        })?;
        let stem = issue
            .stems(instance.wording_index)?
            .into_iter()
            .find(|s| s.stem_id == instance.stem_id)
            .ok_or_else(|| Error::Config(format!("unknown stem {:?}", instance.stem_id)))?;
        compose_prompt(
            &self.profile(instance.side),
            &wording.text,
            &stem,
            self.config.mode,
        )
    }
}

pub fn prompt_id(
    battery_id: &str,
    side: Side,
    issue_id: &str,
    wording_index: usize,
    stem_id: &str,
) -> String {
    let canonical = serde_json::json!([battery_id, side.as_str(), issue_id, wording_index, stem_id]);
    sha256_hex(canonical.to_string().as_bytes())[..16].to_string()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Battery containing the issue wordings quoted verbatim in the source study.
pub fn starter_battery() -> BatteryConfig {
    serde_json::from_str(include_str!("../data/starter_battery.json"))
        .expect("bundled starter battery parses")
}
