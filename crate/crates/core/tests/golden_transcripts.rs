//! Replays the recorded request streams in `docs/protocol/transcripts`
//! through the mock worker and compares the response streams byte for
//! byte. Set `ARENA_BLESS=1` to rewrite the expected responses.

use std::fs;
use std::path::PathBuf;

use arena_core::catalog::load_catalog;
use arena_core::mock::MockBackend;
use arena_core::protocol::{serve, MockWorker};

fn protocol_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/protocol")
}

fn replay(name: &str) {
    let dir = protocol_dir();
    let catalog = load_catalog(&dir.join("catalog.json")).unwrap();
    let worker = MockWorker::new(MockBackend::new(&catalog));
    let requests = fs::read(dir.join(format!("transcripts/{name}.request.jsonl"))).unwrap();
    let mut out = Vec::new();
    serve(&worker, requests.as_slice(), &mut out).unwrap();
    let expected_path = dir.join(format!("transcripts/{name}.response.jsonl"));
    if std::env::var_os("ARENA_BLESS").is_some() {
        fs::write(&expected_path, &out).unwrap();
        return;
    }
    let expected = fs::read(&expected_path).unwrap_or_else(|e| panic!("{}: {e}", expected_path.display()));
    assert_eq!(
        String::from_utf8(out).unwrap(),
        String::from_utf8(expected).unwrap(),
        "{name} transcript drifted"
    );
}

#[test]
fn generate_transcript() {
    replay("generate");
}

#[test]
fn proximity_transcript() {
    replay("proximity");
}

#[test]
fn error_transcript() {
    replay("error");
}
