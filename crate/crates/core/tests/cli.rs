//! The command-line front end, driven both in-process and as a child process.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use wordfuse::cli::config::GENERATOR_ENDPOINT_ENV;
use wordfuse::cli::metrics::exact_match;
use wordfuse::cli::run_captured;
use wordfuse::fixtures::grid_fixture;

const BIN: &str = env!("CARGO_BIN_EXE_wordfuse");

fn awesome(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/awesome").join(name).display().to_string()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden").join(name)).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

struct Grid {
    _dir: tempfile::TempDir,
    config: String,
    dev: String,
    references: Vec<String>,
}

fn grid_setup() -> Grid {
    let fixture = grid_fixture(11, 30, 0.6, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "generator.toml", &fixture.generator.to_toml_string());
    write(dir.path(), "ranker.toml", &fixture.ranker.to_toml_string());
    let dev_body: String = fixture.dev.iter().map(|d| format!("{}\n", serde_json::to_string(d).unwrap())).collect();
    let payloads: String = fixture.dev.iter().map(|d| format!("{}\n", d.payload)).collect();
    let dev = write(dir.path(), "dev.jsonl", &dev_body);
    write(dir.path(), "payloads.txt", &payloads);
    let config = write(
        dir.path(),
        "config.toml",
        "topk = 7\nmax_len = 8\nnbest = 6\n\n[generator]\nkind = \"table\"\npath = \"generator.toml\"\n\n\
         [ranker]\nkind = \"table\"\npath = \"ranker.toml\"\n",
    );
    Grid { references: fixture.dev.iter().map(|d| d.reference.clone()).collect(), _dir: dir, config, dev }
}

fn rows(report: &str) -> Vec<serde_json::Value> {
    let v: serde_json::Value = serde_json::from_str(report.trim()).unwrap();
    v["rows"].as_array().unwrap().clone()
}

#[test]
fn grid_alpha_one_row_matches_generator_only_decoding() {
    let g = grid_setup();
    let (code, report, err) = run_captured(["wordfuse", "grid-search", "--config", &g.config, "--dev", &g.dev, "--alphas", "1.0", "--json"]);
    assert_eq!(code, 0, "{err}");
    let payloads = Path::new(&g.dev).with_file_name("payloads.txt").display().to_string();
    let (code, out, err) = run_captured([
        "wordfuse", "decode", "--config", &g.config, "--input", &payloads, "--mode", "generator_only", "--beams", "6",
    ]);
    assert_eq!(code, 0, "{err}");
    let tops: Vec<String> = out
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["nbest"][0]["surface"].as_str().unwrap().to_string())
        .collect();
    let expected = tops.iter().zip(&g.references).map(|(h, r)| exact_match(h, r)).sum::<f64>() / tops.len() as f64;
    let row = &rows(&report)[0];
    assert_eq!(row["alpha"].as_f64(), Some(1.0));
    assert_eq!(row["exact_match"].as_f64(), Some(expected));
}

#[test]
fn grid_over_written_nbest_file_matches_grid_over_decoding() {
    let g = grid_setup();
    let dir = Path::new(&g.dev).parent().unwrap();
    let payloads = dir.join("payloads.txt").display().to_string();
    let tsv = dir.join("lists.tsv").display().to_string();
    let (code, _, err) = run_captured([
        "wordfuse", "decode", "--config", &g.config, "--input", &payloads, "--mode", "offline", "--nbest-file", &tsv,
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(std::fs::read_to_string(&tsv).unwrap().starts_with("input_id\t"));
    let base = ["wordfuse", "grid-search", "--config", &g.config, "--dev", &g.dev, "--json"];
    let (_, direct, _) = run_captured(base);
    let (code, from_file, err) = run_captured(base.iter().copied().chain(["--nbest-file", &tsv]));
    assert_eq!(code, 0, "{err}");
    assert_eq!(rows(&direct).len(), 11);
    assert_eq!(direct, from_file);
}

#[test]
fn table_report_lists_every_alpha() {
    let g = grid_setup();
    let (code, out, err) =
        run_captured(["wordfuse", "grid-search", "--config", &g.config, "--dev", &g.dev, "--alphas", "0,0.5,1", "--metric", "token_f1"]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "alpha\texact_match\ttoken_f1\tavg_merged");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("best_alpha\t"));
}

#[test]
fn bad_alpha_is_a_config_error() {
    let (code, _, err) = run_captured(["wordfuse", "decode", "--config", &awesome("config.toml"), "--input", &awesome("inputs.txt"), "--alpha", "1.5"]);
    assert_eq!(code, 2, "{err}");
    let (code, _, _) = run_captured(["wordfuse", "decode", "--config", &awesome("config.toml"), "--input", &awesome("inputs.txt"), "--preset", "nope"]);
    assert_eq!(code, 2);
}

#[test]
fn preset_flag_overrides_config_file() {
    let (code, out, err) = run_captured([
        "wordfuse", "decode", "--config", &awesome("config.toml"), "--input", &awesome("inputs.txt"), "--preset", "vision-ranker",
    ]);
    assert_eq!(code, 0, "{err}");
    for line in out.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["nbest"].as_array().unwrap().len() <= 3);
    }
}

#[test]
fn binary_reads_stdin_and_matches_in_process_output() {
    let mut child = Command::new(BIN)
        .args(["decode", "--config", &awesome("config.toml"), "--input", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(std::fs::read_to_string(awesome("inputs.txt")).unwrap().as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden("awesome_online.jsonl"));
}

#[test]
fn generator_endpoint_variable_swaps_in_a_remote_generator() {
    let endpoint = format!("{BIN} serve --config {} --role generator", awesome("config.toml"));
    let out = Command::new(BIN)
        .args(["decode", "--config", &awesome("config.toml"), "--input", &awesome("inputs.txt")])
        .env(GENERATOR_ENDPOINT_ENV, endpoint)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden("awesome_online.jsonl"));
}

#[test]
fn unreachable_endpoint_exits_with_scorer_failure() {
    let out = Command::new(BIN)
        .args(["decode", "--config", &awesome("config.toml"), "--input", &awesome("inputs.txt")])
        .env(GENERATOR_ENDPOINT_ENV, "tcp://127.0.0.1:1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_flags_a_broken_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = write(dir.path(), "broken.vocab", "<eos>\na\n_a\n");
    let samples = write(dir.path(), "samples.txt", "a b\n");
    let (code, out, _) = run_captured(["wordfuse", "validate", &vocab, "--samples", &samples]);
    assert_eq!(code, 1, "{out}");
    let (code, _, err) = run_captured(["wordfuse", "validate", &awesome("generator.vocab"), &awesome("ranker.vocab")]);
    assert_eq!(code, 0, "{err}");
}
