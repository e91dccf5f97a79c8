#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use xaihealth_cli::server::{router, AppState};
use xaihealth_core::sab::{generate_sab, SabConfig};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/study")
}

/// Copies the bundled fixture study into a fresh directory and generates its data.
pub fn fixture_study() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for name in ["study.json", "sab.json", "answers.json"] {
        std::fs::copy(fixture_dir().join(name), dir.path().join(name)).unwrap();
    }
    let sab: SabConfig = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sab.json")).unwrap()).unwrap();
    let (dataset, model) = generate_sab(&sab).unwrap();
    let data = dir.path().join("data");
    dataset.write_to_dir(&data).unwrap();
    std::fs::write(data.join("model.json"), serde_json::to_string_pretty(&model).unwrap()).unwrap();
    dir
}

/// Starts the service on an ephemeral port and returns its base URL.
pub async fn start_server(study: &Path) -> String {
    let state = Arc::new(AppState::load(study).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router(state, None)).await.unwrap();
    });
    format!("http://{addr}")
}

/// Keys appearing anywhere in a JSON document.
pub fn keys(value: &serde_json::Value, out: &mut Vec<String>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                out.push(k.clone());
                keys(v, out);
            }
        }
        serde_json::Value::Array(items) => items.iter().for_each(|v| keys(v, out)),
        _ => {}
    }
}

pub const FORBIDDEN_KEYS: [&str; 7] = ["label", "correct", "precision", "recall", "f1", "confusion", "tp"];

pub fn assert_blind(value: &serde_json::Value) {
    let mut found = Vec::new();
    keys(value, &mut found);
    for k in found {
        assert!(!FORBIDDEN_KEYS.contains(&k.as_str()), "payload exposes `{k}`: {value}");
    }
}
