//! Committed fixture files, protocol transcripts and CLI output.
//!
//! Run with `WORDFUSE_BLESS=1` to rewrite the committed files after an
//! intentional change.

use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use wordfuse::cli::run_captured;
use wordfuse::fixtures::{adversarial_pair, write_awesome_fixture, AWESOME, DISTRACTOR};
use wordfuse::protocol::{replay_transcript, serve, Connection, RemoteScorer, RemoteSelector, Service, DEFAULT_TIMEOUT};
use wordfuse::rerank::MarkerWordSelector;
use wordfuse::scoring::{ModelInput, Scorer};
use wordfuse::Selector;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn blessing() -> bool {
    std::env::var_os("WORDFUSE_BLESS").is_some()
}

fn check_or_bless(path: &Path, actual: &str) {
    if blessing() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{} differs from regenerated output", path.display());
}

/// A connection to a thread serving `scorer`.
fn scorer_connection(scorer: Box<dyn Scorer>) -> Connection {
    let (client_r, server_w) = std::io::pipe().unwrap();
    let (server_r, client_w) = std::io::pipe().unwrap();
    std::thread::spawn(move || {
        let _ = serve(Service::Scorer(scorer.as_ref()), BufReader::new(server_r), server_w);
    });
    Connection::from_streams("in-process", client_r, client_w, DEFAULT_TIMEOUT)
}

fn selector_connection(selector: Box<dyn Selector>) -> Connection {
    let (client_r, server_w) = std::io::pipe().unwrap();
    let (server_r, client_w) = std::io::pipe().unwrap();
    std::thread::spawn(move || {
        let _ = serve(Service::Selector(selector.as_ref()), BufReader::new(server_r), server_w);
    });
    Connection::from_streams("in-process", client_r, client_w, DEFAULT_TIMEOUT)
}

/// Every scorer method, on the target sentence and on the distractor.
fn scorer_session(conn: Connection) -> String {
    conn.record();
    let remote = RemoteScorer::from_connection(conn).unwrap();
    let tok = remote.tokenizer();
    let input = ModelInput::generator("a payload");
    let mut tokens = tok.tokenize(AWESOME).unwrap();
    tok.detokenize(&tokens).unwrap();
    tokens.push(tok.eos());
    remote.score_prefix(&input, &tokens).unwrap();
    for cut in [0, 3, 4, 5] {
        remote.next_distribution(&input, &tokens[..cut], 3).unwrap();
    }
    let distractor = tok.tokenize(DISTRACTOR).unwrap();
    remote.score_prefix(&input, &distractor).unwrap();
    remote.next_distribution(&input, &distractor, 2).unwrap();
    remote.connection().take_transcript()
}

fn selector_session(conn: Connection) -> String {
    conn.record();
    let remote = RemoteSelector::from_connection(conn).unwrap();
    let surfaces = [AWESOME.to_string(), DISTRACTOR.to_string()];
    remote.score(&ModelInput::ranker("a payload"), &surfaces).unwrap();
    remote.connection().take_transcript()
}

fn transcripts() -> Vec<(&'static str, String)> {
    let (g, r) = adversarial_pair();
    vec![
        ("generator.transcript", scorer_session(scorer_connection(Box::new(g)))),
        ("ranker.transcript", scorer_session(scorer_connection(Box::new(r)))),
        ("selector.transcript", selector_session(selector_connection(Box::new(MarkerWordSelector::new("awesome"))))),
    ]
}

#[test]
fn committed_awesome_fixture_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    write_awesome_fixture(dir.path()).unwrap();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let entry = entry.unwrap();
        let body = std::fs::read_to_string(entry.path()).unwrap();
        check_or_bless(&root().join("fixtures/awesome").join(entry.file_name()), &body);
    }
}

#[test]
fn transcripts_match_committed_files() {
    for (name, body) in transcripts() {
        check_or_bless(&root().join("fixtures/golden").join(name), &body);
    }
}

#[test]
fn committed_transcripts_replay_against_in_process_servers() {
    let (g, r) = adversarial_pair();
    let cases: Vec<(&str, Connection)> = vec![
        ("generator.transcript", scorer_connection(Box::new(g))),
        ("ranker.transcript", scorer_connection(Box::new(r))),
        ("selector.transcript", selector_connection(Box::new(MarkerWordSelector::new("awesome")))),
    ];
    for (name, conn) in cases {
        let text = std::fs::read_to_string(root().join("fixtures/golden").join(name)).unwrap();
        let report = replay_transcript(&text, &conn).unwrap();
        assert!(report.exchanges > 1, "{name}");
        assert!(report.is_clean(), "{name}: {:?}", report.mismatches);
    }
}

#[test]
fn committed_transcripts_replay_against_the_binary() {
    let config = root().join("fixtures/awesome/config.toml");
    for (role, name) in [("generator", "generator.transcript"), ("ranker", "ranker.transcript")] {
        let spec = format!("{} serve --config {} --role {role}", env!("CARGO_BIN_EXE_wordfuse"), config.display());
        let endpoint = wordfuse::protocol::Endpoint::parse(&spec).unwrap();
        let conn = Connection::connect(&endpoint, Duration::from_secs(30)).unwrap();
        let text = std::fs::read_to_string(root().join("fixtures/golden").join(name)).unwrap();
        let report = replay_transcript(&text, &conn).unwrap();
        assert!(report.is_clean(), "{name}: {:?}", report.mismatches);
    }
}

#[test]
fn decode_output_matches_golden_file() {
    let dir = root().join("fixtures/awesome");
    let config = dir.join("config.toml").display().to_string();
    let input = dir.join("inputs.txt").display().to_string();
    for (mode, file) in [("online", "awesome_online.jsonl"), ("offline", "awesome_offline.jsonl"), ("generator_only", "awesome_generator_only.jsonl")] {
        let (code, out, err) = run_captured(["wordfuse", "decode", "--config", &config, "--input", &input, "--mode", mode]);
        assert_eq!(code, 0, "{err}");
        check_or_bless(&root().join("fixtures/golden").join(file), &out);
    }
}

#[test]
fn explain_output_matches_golden_file() {
    let config = root().join("fixtures/awesome/config.toml").display().to_string();
    let (code, out, err) = run_captured(["wordfuse", "explain", "--config", &config, "--topk", "2", "--beams", "1", "a payload"]);
    assert_eq!(code, 0, "{err}");
    check_or_bless(&root().join("fixtures/golden/awesome_explain.txt"), &out);
}

#[test]
fn parallel_workers_do_not_change_output() {
    let dir = root().join("fixtures/awesome");
    let config = dir.join("config.toml").display().to_string();
    let input = dir.join("inputs.txt").display().to_string();
    let (_, one, _) = run_captured(["wordfuse", "decode", "--config", &config, "--input", &input]);
    let (_, four, _) = run_captured(["wordfuse", "decode", "--config", &config, "--input", &input, "--workers", "4"]);
    assert_eq!(one, four);
}
