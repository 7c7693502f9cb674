//! Acceptance: re-running any subcommand from its manifest reproduces the
//! original CSV/JSON outputs byte for byte.

use std::path::Path;
use std::process::Command;

fn habitforge(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_habitforge"))
        .args(args)
        .env_remove("HABITFORGE_SEED")
        .output()
        .expect("spawn habitforge")
}

fn run_ok(args: &[&str]) {
    let out = habitforge(args);
    assert!(
        out.status.success(),
        "habitforge {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

#[test]
fn criterion_10_manifest_reruns_are_byte_identical() {
    let start = std::time::Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let a_str = a.to_str().unwrap().to_string();
    let b_str = b.to_str().unwrap().to_string();

    // First pass: the full pipeline into directory a.
    run_ok(&["generate", "--n", "600", "--seed", "7", "--out", &a_str]);
    run_ok(&["cluster", "--k", "5", "--in", &a_str, "--out", &a_str]);
    run_ok(&["vectorize", "--in", &a_str, "--out", &a_str]);
    run_ok(&["survival", "--in", &a_str, "--out", &a_str]);
    run_ok(&["critical", "--in", &a_str, "--out", &a_str, "--weeks", "6..17"]);
    run_ok(&["deviations", "--in", &a_str, "--out", &a_str]);
    run_ok(&[
        "causal", "--in", &a_str, "--out", &a_str, "--treatment", "pt_sessions", "--level",
        "high", "--weeks", "6..8", "--refute", "3",
    ]);
    let report_a = tmp.path().join("report_a");
    run_ok(&[
        "report", "--in", &a_str, "--out", report_a.to_str().unwrap(), "--treatment",
        "pt_sessions", "--level", "high", "--weeks", "6..8",
    ]);

    // Second pass: replay every manifest into directory b.
    let outputs: &[(&str, &[&str])] = &[
        ("generate", &["members.csv", "visits.csv", "interventions.csv", "truth.json"]),
        (
            "cluster",
            &["cluster_model_w6.json", "transition_matrix.csv", "membership_cdf.csv"],
        ),
        ("vectorize", &["visit_matrix_w6.csv"]),
        (
            "survival",
            &[
                "survival_records.csv",
                "survival_cdf.csv",
                "survival_summary.csv",
                "gaps_per_week.csv",
                "gap_positions.csv",
                "gap_joint.csv",
                "intermediate_gap_cdf.csv",
            ],
        ),
        ("critical", &["critical_table.csv", "milestone_fit.json"]),
        ("deviations", &["deviations_gender.csv", "deviations_age.csv"]),
        ("causal", &["causal_estimates.csv", "binarization_cuts.json"]),
    ];
    for (subcommand, files) in outputs {
        let manifest = a.join(format!("manifest_{subcommand}.json"));
        run_ok(&[
            subcommand,
            "--config",
            manifest.to_str().unwrap(),
            "--out",
            &b_str,
        ]);
        for file in *files {
            assert_eq!(
                read(&a, file),
                read(&b, file),
                "{subcommand}: {file} differs between the run and its manifest replay"
            );
        }
    }
    // Replay the report from its manifest and compare every emitted file.
    let report_b = tmp.path().join("report_b");
    run_ok(&[
        "report",
        "--config",
        report_a.join("manifest_report.json").to_str().unwrap(),
        "--out",
        report_b.to_str().unwrap(),
    ]);
    for entry in std::fs::read_dir(&report_a).unwrap() {
        let name = entry.unwrap().file_name();
        let name = name.to_str().unwrap();
        if name.starts_with("manifest_") {
            continue; // differs in the out path by construction
        }
        assert_eq!(
            read(&report_a, name),
            read(&report_b, name),
            "report: {name} differs between the run and its manifest replay"
        );
    }

    println!(
        "acceptance criterion 10 (manifest replays byte-identical): PASS [{:.2?}]",
        start.elapsed()
    );
}
