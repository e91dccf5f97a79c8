use std::path::Path;

use xaihealth_core::altai::{default_bank, Answer, AnswerEntry};
use xaihealth_core::pipeline::{PerturbationSettings, StudyConfig};
use xaihealth_core::sab::{generate_sab, Region, SabConfig};
use xaihealth_core::{ExplainerSpec, GateConfig};

pub fn sab_config(num_cases: usize, noise_std: f64) -> SabConfig {
    SabConfig {
        side: 8,
        region: Region {
            top: 2,
            left: 3,
            height: 2,
            width: 2,
        },
        num_cases,
        noise_std,
        pattern_amplitude: 2.0,
        seed: 17,
        name: "fixture".into(),
    }
}

/// Writes data, model, answers and study.json for a SAB-backed study.
pub fn write_study(dir: &Path, sab: &SabConfig, explainer: ExplainerSpec) -> StudyConfig {
    let (dataset, model) = generate_sab(sab).unwrap();
    dataset.write_to_dir(&dir.join("data")).unwrap();
    std::fs::write(dir.join("model.json"), serde_json::to_string_pretty(&model).unwrap()).unwrap();
    let answers: Vec<AnswerEntry> = default_bank()
        .into_iter()
        .map(|e| AnswerEntry {
            item_id: e.item_id,
            answer: Answer::Yes,
            evidence: "reviewed by the study board".into(),
        })
        .collect();
    std::fs::write(
        dir.join("answers.json"),
        serde_json::to_string_pretty(&answers).unwrap(),
    )
    .unwrap();
    StudyConfig {
        study_id: "fixture-study".into(),
        dataset: "data".into(),
        model: "model.json".into(),
        explainer,
        gates: GateConfig::default(),
        perturbation: PerturbationSettings {
            epsilon: None,
            num_samples: 20,
            seed: 3,
        },
        randomisation_seed: 11,
        altai_bank: None,
        altai_answers: Some("answers.json".into()),
        session_seed: 5,
        trust_cases: Some(6),
        complexity_k: None,
    }
}
