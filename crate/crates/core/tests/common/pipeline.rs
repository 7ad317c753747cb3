use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn relguide(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relguide"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn relguide")
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = relguide(dir, args);
    assert!(
        out.status.success(),
        "relguide {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// synth → stats → knowledge → train (three heads) → rank → eval on the
/// bundled config; returns the eval text report.
pub fn run_bundled(dir: &Path) -> String {
    let config = fixture("pipeline.json");
    let c = config.to_str().unwrap();
    ok(dir, &["--config", c, "synth", "--out-dir", "."]);
    ok(
        dir,
        &[
            "--config",
            c,
            "stats",
            "build",
            "--train",
            "train.jsonl",
            "--out",
            "stats.json",
        ],
    );
    ok(
        dir,
        &[
            "--config",
            c,
            "knowledge",
            "semantic",
            "--data",
            "train.jsonl",
            "--embeddings",
            "embeddings.txt",
            "--out",
            "semantic.json",
        ],
    );
    ok(
        dir,
        &[
            "--config",
            c,
            "train",
            "relevance",
            "--train",
            "train.jsonl",
            "--out",
            "relevance.head",
        ],
    );
    ok(
        dir,
        &[
            "--config",
            c,
            "train",
            "object",
            "--train",
            "train.jsonl",
            "--out",
            "object.head",
        ],
    );
    ok(
        dir,
        &[
            "--config",
            c,
            "train",
            "predicate",
            "--train",
            "train.jsonl",
            "--semantic",
            "semantic.json",
            "--stats",
            "stats.json",
            "--out",
            "predicate.head",
        ],
    );
    ok(
        dir,
        &[
            "--config",
            c,
            "rank",
            "--data",
            "test.jsonl",
            "--predicate",
            "predicate.head",
            "--relevance",
            "relevance.head",
            "--stats",
            "stats.json",
            "--out",
            "proposals.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "--config",
            c,
            "eval",
            "--data",
            "test.jsonl",
            "--proposals",
            "proposals.jsonl",
            "--stats",
            "stats.json",
            "--out",
            "report.json",
        ],
    )
}

/// Compares against the committed golden report; `RELGUIDE_BLESS=1`
/// rewrites it instead.
pub fn matches_golden(report: &str) -> bool {
    let golden = fixture("golden_report.txt");
    if std::env::var_os("RELGUIDE_BLESS").is_some() {
        std::fs::write(&golden, report).unwrap();
    }
    std::fs::read_to_string(golden)
        .map(|g| g == report)
        .unwrap_or(false)
}
