//! Priming-effect regressions, significance tests, and direction scoring.

pub mod binomial;
pub mod ground_truth;
pub mod ols;
pub mod special;
pub mod verdict;

pub use binomial::{
    binomial_test, binomial_test_two_sided, two_proportion_exact, two_proportion_test,
    two_proportion_z, ProportionMethod, ProportionTest,
};
pub use ground_truth::{ExpectedSign, GroundTruth, GroundTruthEntry};
pub use ols::{ols_binary, OlsFit};
pub use verdict::{
    aggregate_question, direction_outcome, score_directions, summarize, Accuracy,
    AccuracySummary, DirectionOutcome, PredictedSign, QuestionStatus, QuestionVerdict,
    RegressionResult, SIGNIFICANCE,
};
