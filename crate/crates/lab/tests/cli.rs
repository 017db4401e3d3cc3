use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--n",
    "200",
    "--trials",
    "3",
    "--iterations",
    "2",
    "--mc-samples",
    "4000",
    "--gfa-replicates",
    "2",
];

fn sparsedyn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsedyn"))
        .args(args)
        .current_dir(dir)
        .env("SPARSE_DYN_WORKERS", "1")
        .output()
        .unwrap()
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(SMALL).copied().collect()
}

#[test]
fn run_writes_reports_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparsedyn(
        &with_small(&["run", "--csv", "a.csv", "--json", "a.json"]),
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = sparsedyn(&with_small(&["run", "--csv", "b.csv"]), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8(a)
        .unwrap()
        .starts_with("t,source,mse,stderr,tau2,extra\n"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(json["metadata"]["trial_seeds"].as_array().unwrap().len(), 3);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), "n = 200\ntrials = 2\niterations = 2\nmc_samples = 4000\ngfa_replicates = 1\nalgorithm = \"ist\"\ndenoiser = \"soft\"\n").unwrap();
    let out = sparsedyn(&["run", "--config", "exp.toml", "--kappa", "2"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.contains(",EMP,")).count(), 3);
}

#[test]
fn exit_codes_follow_thresholds_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let pass = sparsedyn(&with_small(&["run", "--max-rel-gap-se", "10"]), dir.path());
    assert_eq!(pass.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&pass.stdout).contains("PASS max_rel_gap_se"));
    let fail = sparsedyn(&with_small(&["run", "--max-rel-gap-se", "0"]), dir.path());
    assert_eq!(fail.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&fail.stdout).contains("FAIL max_rel_gap_se"));
    let bad = sparsedyn(&with_small(&["run", "--delta", "3"]), dir.path());
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("delta"));
    let missing = sparsedyn(&["run", "--config", "nope.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn se_and_gfa_print_traces() {
    let dir = tempfile::tempdir().unwrap();
    let se = sparsedyn(&["se", "--iterations", "3"], dir.path());
    assert_eq!(se.status.code(), Some(0));
    assert_eq!(String::from_utf8(se.stdout).unwrap().lines().count(), 5);
    let gfa = sparsedyn(&with_small(&["gfa", "--csv", "g.csv"]), dir.path());
    assert_eq!(gfa.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(",GFA,")).count(), 3);
}

#[test]
fn sweep_writes_a_summary_and_point_reports() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_small(&[
        "sweep",
        "--axis",
        "delta",
        "--values",
        "0.3,0.5",
        "--summary",
        "s.csv",
        "--out-dir",
        "pts",
    ]);
    let out = sparsedyn(&args, dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(dir.path().join("pts/point_1.csv").exists());
    let again = sparsedyn(&args, dir.path());
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(
        summary,
        std::fs::read_to_string(dir.path().join("s.csv")).unwrap()
    );
}

#[test]
fn verify_commands() {
    let dir = tempfile::tempdir().unwrap();
    let df = sparsedyn(
        &["verify-df", "--denoiser", "soft", "--epsilon", "0.3"],
        dir.path(),
    );
    assert_eq!(
        df.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&df.stdout)
    );
    assert_eq!(
        String::from_utf8(df.stdout)
            .unwrap()
            .lines()
            .filter(|l| l.contains("df(soft)"))
            .count(),
        4
    );
    let lemma = sparsedyn(
        &[
            "verify-lemma2",
            "--iterations",
            "3",
            "--mc-samples",
            "20000",
            "--replicates",
            "4",
        ],
        dir.path(),
    );
    let stdout = String::from_utf8(lemma.stdout).unwrap();
    assert_eq!(lemma.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 3);
}

#[test]
fn instance_dump_and_info() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparsedyn(
        &[
            "instance", "dump", "--n", "40", "--trial", "2", "--out", "i.bin",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let info = sparsedyn(&["instance", "info", "i.bin"], dir.path());
    assert_eq!(info.status.code(), Some(0));
    let text = String::from_utf8(info.stdout).unwrap();
    assert!(text.contains("20 x 40"), "{text}");
    std::fs::write(dir.path().join("junk.bin"), b"nonsense").unwrap();
    assert_eq!(
        sparsedyn(&["instance", "info", "junk.bin"], dir.path())
            .status
            .code(),
        Some(2)
    );
}
