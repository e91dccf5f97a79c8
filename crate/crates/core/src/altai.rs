//! Trustworthy-AI self-assessment checklist (seven requirements), mapped onto
//! study phases.
//!
//! Answers are human attestations. `yes` and `not_applicable` must carry
//! evidence text; anything else blocks the phase.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::Phase;

#[derive(Debug, Error, PartialEq)]
pub enum AltaiError {
    #[error("question bank has no items for requirement {0:?}")]
    IncompleteBank(AltaiRequirement),
    #[error("unknown checklist item {0}")]
    UnknownItem(String),
    #[error("duplicate checklist item {0}")]
    DuplicateItem(String),
    #[error("item {0}: `{1}` answers require evidence")]
    MissingEvidence(String, &'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AltaiRequirement {
    HumanAgencyOversight,
    TechnicalRobustnessSafety,
    PrivacyDataGovernance,
    Transparency,
    DiversityNonDiscriminationFairness,
    SocietalEnvironmentalWellbeing,
    Accountability,
}

impl AltaiRequirement {
    pub const ALL: [AltaiRequirement; 7] = [
        AltaiRequirement::HumanAgencyOversight,
        AltaiRequirement::TechnicalRobustnessSafety,
        AltaiRequirement::PrivacyDataGovernance,
        AltaiRequirement::Transparency,
        AltaiRequirement::DiversityNonDiscriminationFairness,
        AltaiRequirement::SocietalEnvironmentalWellbeing,
        AltaiRequirement::Accountability,
    ];

    /// 1-based position in the canonical order.
    pub fn number(self) -> usize {
        Self::ALL.iter().position(|&r| r == self).expect("listed") + 1
    }

    pub fn title(self) -> &'static str {
        match self {
            AltaiRequirement::HumanAgencyOversight => "Human agency and oversight",
            AltaiRequirement::TechnicalRobustnessSafety => "Technical robustness and safety",
            AltaiRequirement::PrivacyDataGovernance => "Privacy and data governance",
            AltaiRequirement::Transparency => "Transparency",
            AltaiRequirement::DiversityNonDiscriminationFairness => "Diversity, non-discrimination and fairness",
            AltaiRequirement::SocietalEnvironmentalWellbeing => "Societal and environmental well-being",
            AltaiRequirement::Accountability => "Accountability",
        }
    }
}

/// Requirements that must be satisfied before a phase can pass.
pub fn requirements_for(phase: Phase) -> &'static [AltaiRequirement] {
    use AltaiRequirement::*;
    match phase {
        Phase::PreEvaluation => &[
            PrivacyDataGovernance,
            DiversityNonDiscriminationFairness,
            SocietalEnvironmentalWellbeing,
        ],
        Phase::MachineCentred => &[TechnicalRobustnessSafety, Transparency],
        Phase::HumanCentred => &[HumanAgencyOversight],
        Phase::Operation => &AltaiRequirement::ALL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
    NotApplicable,
    #[default]
    Unanswered,
}

impl Answer {
    fn needs_evidence(self) -> bool {
        matches!(self, Answer::Yes | Answer::NotApplicable)
    }

    fn as_str(self) -> &'static str {
        match self {
            Answer::Yes => "yes",
            Answer::No => "no",
            Answer::NotApplicable => "not_applicable",
            Answer::Unanswered => "unanswered",
        }
    }
}

/// Question bank entry: `[{item_id, requirement, question}]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankEntry {
    pub item_id: String,
    pub requirement: AltaiRequirement,
    pub question: String,
}

/// Answer document entry: `[{item_id, answer, evidence}]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerEntry {
    pub item_id: String,
    pub answer: Answer,
    #[serde(default)]
    pub evidence: String,
}

impl AnswerEntry {
    pub fn validate(&self) -> Result<(), AltaiError> {
        if self.answer.needs_evidence() && self.evidence.trim().is_empty() {
            return Err(AltaiError::MissingEvidence(self.item_id.clone(), self.answer.as_str()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AltaiItem {
    pub item_id: String,
    pub requirement: AltaiRequirement,
    pub question: String,
    pub answer: Answer,
    pub evidence: String,
}

impl AltaiItem {
    fn satisfied(&self) -> bool {
        self.answer.needs_evidence() && !self.evidence.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub blocking: Vec<String>,
}

/// Two items per requirement; replace with the full official list as needed.
pub fn default_bank() -> Vec<BankEntry> {
    use AltaiRequirement::*;
    let items: [(&str, AltaiRequirement, &str); 14] = [
        ("hao-1", HumanAgencyOversight, "Are users informed at all times that they are interacting with an AI system?"),
        ("hao-2", HumanAgencyOversight, "Can a clinician review, override or ignore every prediction and explanation?"),
        ("trs-1", TechnicalRobustnessSafety, "Has explanation robustness been measured against small input perturbations and found within the accepted threshold?"),
        ("trs-2", TechnicalRobustnessSafety, "Has the system been assessed for adversarial inputs, novel data and cybersecurity risks?"),
        ("pdg-1", PrivacyDataGovernance, "Is the data anonymized, or is a legal basis such as consent documented for processing it?"),
        ("pdg-2", PrivacyDataGovernance, "Has a data governance body verified that data handling complies with applicable privacy law?"),
        ("tra-1", Transparency, "Does the system provide an explanation alongside each prediction?"),
        ("tra-2", Transparency, "Are the system's functions and limitations communicated to its users?"),
        ("dnf-1", DiversityNonDiscriminationFairness, "Has the training and evaluation data been reviewed for bias?"),
        ("dnf-2", DiversityNonDiscriminationFairness, "Were accessibility and universal design considered for the user interface?"),
        ("sew-1", SocietalEnvironmentalWellbeing, "Has the environmental impact of training and operating the system been assessed?"),
        ("sew-2", SocietalEnvironmentalWellbeing, "Have effects on society, employment and democratic processes been assessed?"),
        ("acc-1", Accountability, "Are risk management mechanisms and responsibilities defined across the system lifecycle?"),
        ("acc-2", Accountability, "Is the deployed system monitored so that errors and risky behaviour are detected?"),
    ];
    items
        .into_iter()
        .map(|(id, requirement, question)| BankEntry {
            item_id: id.into(),
            requirement,
            question: question.into(),
        })
        .collect()
}

/// Checks that the bank covers all seven requirements and has unique ids.
pub fn validate_bank(bank: &[BankEntry]) -> Result<(), AltaiError> {
    let mut ids = BTreeSet::new();
    for entry in bank {
        if !ids.insert(entry.item_id.as_str()) {
            return Err(AltaiError::DuplicateItem(entry.item_id.clone()));
        }
    }
    let covered: BTreeSet<_> = bank.iter().map(|e| e.requirement).collect();
    match AltaiRequirement::ALL.iter().find(|r| !covered.contains(r)) {
        Some(&missing) => Err(AltaiError::IncompleteBank(missing)),
        None => Ok(()),
    }
}

/// Bank items whose requirement applies to `phase`, in bank order, with any
/// recorded answers merged in.
pub fn items_for_phase(
    phase: Phase,
    bank: &[BankEntry],
    answers: &BTreeMap<String, AnswerEntry>,
) -> Result<Vec<AltaiItem>, AltaiError> {
    validate_bank(bank)?;
    let required = requirements_for(phase);
    Ok(bank
        .iter()
        .filter(|e| required.contains(&e.requirement))
        .map(|e| {
            let answer = answers.get(&e.item_id);
            AltaiItem {
                item_id: e.item_id.clone(),
                requirement: e.requirement,
                question: e.question.clone(),
                answer: answer.map_or(Answer::Unanswered, |a| a.answer),
                evidence: answer.map(|a| a.evidence.clone()).unwrap_or_default(),
            }
        })
        .collect())
}

/// Passes iff every item is `yes` or `not_applicable` with evidence.
pub fn evaluate_checklist(items: &[AltaiItem]) -> Verdict {
    let blocking: Vec<String> = items
        .iter()
        .filter(|i| !i.satisfied())
        .map(|i| i.item_id.clone())
        .collect();
    Verdict {
        pass: blocking.is_empty(),
        blocking,
    }
}

/// Validates an answer document against the bank.
pub fn validate_answers(bank: &[BankEntry], answers: &[AnswerEntry]) -> Result<(), AltaiError> {
    for a in answers {
        if !bank.iter().any(|e| e.item_id == a.item_id) {
            return Err(AltaiError::UnknownItem(a.item_id.clone()));
        }
        a.validate()?;
    }
    Ok(())
}
