//! Offline end-to-end run on a bundled planted-effect battery.

use std::path::Path;

use crate::axis::AxisSpec;
use crate::battery::{BatteryConfig, IssueSpec, PrimingOverrides, PromptMode, Side, WordingConfig};
use crate::error::{Error, Result};
use crate::gateway::mock::{MockWorld, PlantedIssue};
use crate::gateway::{RetryPolicy, SamplingParams};
use crate::stats::{ExpectedSign, GroundTruth, GroundTruthEntry};

use super::config::{
    BatterySource, CompletionBackendConfig, CompletionConfig, EmbeddingBackendConfig,
    EmbeddingConfig, JustifyConfig, LabelingConfig, RunConfig,
};
use super::{Run, StageOutcome};

/// A planted demo question: id, topic, wordings and liberal-minus-conservative
/// effect on the chance of answering "good idea".
pub struct DemoIssue {
    pub issue_id: &'static str,
    pub topic: &'static str,
    pub wordings: &'static [&'static str],
    pub effect: f64,
}

pub const DEMO_ISSUES: &[DemoIssue] = &[
    DemoIssue {
        issue_id: "mask_mandates",
        topic: "masks",
        wordings: &["requiring people to wear masks in public places"],
        effect: 0.4,
    },
    DemoIssue {
        issue_id: "worker_vaccination",
        topic: "vaccines",
        wordings: &[
            "requiring government workers to get vaccinated",
            "making vaccination mandatory for government employees",
        ],
        effect: 0.35,
    },
    DemoIssue {
        issue_id: "school_reopening",
        topic: "schools",
        wordings: &["reopening schools for in-person classes"],
        effect: -0.4,
    },
    DemoIssue {
        issue_id: "business_closures",
        topic: "economy",
        wordings: &["closing non-essential businesses"],
        effect: 0.3,
    },
    DemoIssue {
        issue_id: "travel_bans",
        topic: "travel",
        wordings: &["banning travel from countries with outbreaks"],
        effect: -0.3,
    },
    DemoIssue {
        issue_id: "vaccine_intent",
        topic: "vaccines",
        wordings: &["getting the vaccine as soon as it is available"],
        effect: 0.5,
    },
    DemoIssue {
        issue_id: "unapproved_treatments",
        topic: "treatments",
        wordings: &["treating the virus with unapproved drugs"],
        effect: -0.35,
    },
    DemoIssue {
        issue_id: "lockdown_protests",
        topic: "lockdowns",
        wordings: &["protesting against stay-at-home orders"],
        effect: -0.45,
    },
    DemoIssue {
        issue_id: "contact_tracing",
        topic: "tracing",
        wordings: &[
            "contact tracing by public health agencies",
            "public health agencies tracking contacts of infected people",
        ],
        effect: 0.3,
    },
    DemoIssue {
        issue_id: "worship_limits",
        topic: "lockdowns",
        wordings: &["limiting the size of religious gatherings"],
        effect: 0.35,
    },
    DemoIssue {
        issue_id: "hand_washing",
        topic: "hygiene",
        wordings: &["washing hands frequently"],
        effect: 0.0,
    },
    DemoIssue {
        issue_id: "stimulus_timing",
        topic: "economy",
        wordings: &["the timing of the next stimulus checks"],
        effect: 0.0,
    },
];

/// Issue whose justifications are generated and clustered.
pub const DEMO_JUSTIFY_ISSUE: &str = "mask_mandates";
pub const DEMO_SAMPLES: u32 = 500;

pub fn demo_battery() -> BatteryConfig {
    BatteryConfig {
        battery_id: "demo-planted".into(),
        mode: PromptMode::Covid,
        primings: PrimingOverrides::default(),
        sides: Side::BOTH.to_vec(),
        axes: vec![AxisSpec::new("good_bad", ["good idea"], ["bad idea"]).expect("valid axis")],
        issues: DEMO_ISSUES
            .iter()
            .map(|d| IssueSpec {
                issue_id: d.issue_id.into(),
                topic: d.topic.into(),
                axis_ref: "good_bad".into(),
                wordings: d
                    .wordings
                    .iter()
                    .map(|w| WordingConfig {
                        text: w.to_string(),
                        stems: Vec::new(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn demo_world() -> MockWorld {
    let planted = DEMO_ISSUES
        .iter()
        .flat_map(|d| d.wordings.iter().map(|w| PlantedIssue::new(*w, d.effect)))
        .collect();
    MockWorld::new(0, planted)
}

/// Expected signs for the directional issues; null issues have none.
pub fn demo_ground_truth() -> GroundTruth {
    GroundTruth::from_entries(DEMO_ISSUES.iter().filter(|d| d.effect != 0.0).map(|d| {
        GroundTruthEntry {
            issue_id: d.issue_id.into(),
            expected_sign: if d.effect > 0.0 {
                ExpectedSign::LiberalPositive
            } else {
                ExpectedSign::ConservativePositive
            },
            source: "planted".into(),
        }
    }))
    .expect("demo ground truth is valid")
}

/// Config for the demo with battery and ground truth stored as files next
/// to it.
pub fn demo_config(seed: u64) -> RunConfig {
    RunConfig {
        battery: BatterySource::Path("battery.json".into()),
        ground_truth: Some("ground_truth.csv".into()),
        n_samples: DEMO_SAMPLES,
        seed,
        completion: CompletionConfig {
            backend: CompletionBackendConfig::Mock(demo_world()),
            model_id: "mock-davinci".into(),
            params: SamplingParams::default(),
        },
        embedding: EmbeddingConfig {
            backend: EmbeddingBackendConfig::Mock { dim: 128 },
            model_id: "mock-embedding".into(),
            dim: Some(128),
            max_batch: 512,
        },
        labeling: LabelingConfig {
            model_id: "mock-labeler".into(),
            ..LabelingConfig::default()
        },
        justify: JustifyConfig {
            issues: vec![DEMO_JUSTIFY_ISSUE.into()],
            ..JustifyConfig::default()
        },
        max_in_flight: 8,
        retry: RetryPolicy::default(),
    }
}

fn write_if_same(path: &Path, content: &str) -> Result<()> {
    if path.exists() {
        let existing = std::fs::read_to_string(path)?;
        if existing != content {
            return Err(Error::Stage(format!(
                "{} exists with different content; use a new run id or another seed",
                path.display()
            )));
        }
        return Ok(());
    }
    std::fs::write(path, content)?;
    Ok(())
}

/// Writes the demo inputs into `runs_dir/run_id` and runs every stage.
pub fn run_demo(
    runs_dir: &Path,
    run_id: &str,
    seed: u64,
    force: bool,
) -> Result<(Run, Vec<StageOutcome>)> {
    let dir = runs_dir.join(run_id);
    std::fs::create_dir_all(&dir)?;
    let mut config_text = serde_json::to_string_pretty(&demo_config(seed))?;
    config_text.push('\n');
    let mut battery_text = serde_json::to_string_pretty(&demo_battery())?;
    battery_text.push('\n');
    write_if_same(&dir.join("config.json"), &config_text)?;
    write_if_same(&dir.join("battery.json"), &battery_text)?;
    write_if_same(&dir.join("ground_truth.csv"), &demo_ground_truth().to_csv()?)?;
    let config = RunConfig::load(&dir.join("config.json"))?;
    let mut run = Run::open(runs_dir, run_id, config)?;
    let outcomes = run.run_all(force)?;
    Ok((run, outcomes))
}
