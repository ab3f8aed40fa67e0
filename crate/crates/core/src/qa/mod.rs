//! Question/answer pairs over timing diagrams.
//!
//! Analytic pairs carry a [`Grounding`]: the clauses their answer asserts.
//! Groundings are what make answers re-checkable and what reformatting into
//! true/false or multiple-choice items perturbs. They are dropped on export.

pub mod caption;
pub mod clause;
pub mod reasoning;
pub mod reformat;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use caption::{generate_caption_qas, generate_description_qas, CaptionQuota, CaptionTemplates};
pub use clause::{Clause, CountKind, SignalLookup};
pub use reasoning::{instantiate, template_registry, ReasoningTemplate};
pub use reformat::reformat;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QaError {
    #[error("cannot fill quota for {0}: no eligible signal")]
    QuotaInfeasible(Category),
    #[error("template `{template}` is not applicable: {reason}")]
    NotApplicable { template: String, reason: String },
    #[error("pair has no grounding to reformat")]
    UngroundedPair,
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("only {found} distractors could be built, 3 needed")]
    InsufficientDistractors { found: usize },
    #[error("template file: {0}")]
    Templates(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Value,
    Sequence,
    Transitions,
    RisingEdges,
    FallingEdges,
    Description,
    Caption,
    Summary,
    UseCase,
    #[serde(rename = "FSM")]
    Fsm,
    Counter,
    #[serde(rename = "CDC")]
    Cdc,
    #[serde(rename = "STA")]
    Sta,
    #[serde(rename = "CTA")]
    Cta,
}

impl Category {
    pub const ANALYTIC: [Category; 5] = [
        Category::Value,
        Category::Sequence,
        Category::Transitions,
        Category::RisingEdges,
        Category::FallingEdges,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Value => "Value",
            Category::Sequence => "Sequence",
            Category::Transitions => "Transitions",
            Category::RisingEdges => "RisingEdges",
            Category::FallingEdges => "FallingEdges",
            Category::Description => "Description",
            Category::Caption => "Caption",
            Category::Summary => "Summary",
            Category::UseCase => "UseCase",
            Category::Fsm => "FSM",
            Category::Counter => "Counter",
            Category::Cdc => "CDC",
            Category::Sta => "STA",
            Category::Cta => "CTA",
        }
    }

    /// Caption-side categories answer with a bare value rather than a sentence.
    pub fn is_analytic(self) -> bool {
        Self::ANALYTIC.contains(&self)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Format {
    Statement,
    TrueFalse,
    MultipleChoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grounding {
    /// Every checkable clause the answer asserts; all hold.
    pub facts: Vec<Clause>,
    /// The fact the question is about; reformatting perturbs this one.
    pub key: Clause,
    /// Multiple-choice options in display order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<Clause>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_index: Option<usize>,
    /// For a "False" item, the perturbed statement that was shown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refuted: Option<Clause>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub category: Category,
    pub format: Format,
    pub source_td: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<Grounding>,
}

/// "1st", "2nd", "3rd", "4th", "11th", "21st".
pub fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

/// Option letters for multiple-choice items.
pub const LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordinals() {
        let got: Vec<String> = [1, 2, 3, 4, 11, 12, 13, 21, 22, 23, 101, 111].map(ordinal).to_vec();
        assert_eq!(got, ["1st", "2nd", "3rd", "4th", "11th", "12th", "13th", "21st", "22nd", "23rd", "101st", "111th"]);
    }

    #[test]
    fn category_serde_names() {
        assert_eq!(serde_json::to_string(&Category::Fsm).unwrap(), "\"FSM\"");
        assert_eq!(serde_json::to_string(&Category::RisingEdges).unwrap(), "\"RisingEdges\"");
        for c in Category::ANALYTIC {
            let back: Category = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
            assert_eq!(back, c);
        }
    }
}
