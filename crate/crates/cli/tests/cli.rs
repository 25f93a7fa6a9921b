use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy")
}

/// Copies the toy inputs into a fresh directory so caches and outputs never
/// touch the repository.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("input")).unwrap();
    for e in fs::read_dir(toy().join("input")).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), dir.path().join("input").join(e.file_name())).unwrap();
    }
    dir
}

fn run(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_analogylab"))
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

const INPUTS: [&str; 10] = [
    "--embeddings",
    "input/embeddings.txt",
    "--stems",
    "input/stems.csv",
    "--responses",
    "input/responses.csv",
    "--ratings",
    "input/ratings.csv",
    "--wordfreq",
    "input/wordfreq.tsv",
];

fn with_inputs<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(INPUTS);
    v.extend(extra);
    v
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr is empty");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {text}"))
}

#[test]
fn report_matches_golden_files() {
    let dir = workspace();
    let out = run(
        dir.path(),
        &with_inputs(
            "report",
            &["--out-dir", "out", "--deterministic", "--no-cache"],
        ),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let reg = run(
        dir.path(),
        &[
            "regress",
            "--deltas",
            "out/deltas.csv",
            "--model",
            "custom",
            "--predictors",
            "parallelogram",
        ],
    );
    assert!(reg.status.success());
    fs::write(dir.path().join("out/regress_custom.json"), &reg.stdout).unwrap();

    let golden = toy().join("golden");
    let mut names: Vec<_> = fs::read_dir(&golden)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 9);
    for name in names {
        let want = fs::read(golden.join(&name)).unwrap();
        let got = fs::read(dir.path().join("out").join(&name)).unwrap();
        assert!(want == got, "{name:?} differs from golden");
    }
    assert!(!dir.path().join("input/embeddings.txt.alab").exists());
}

#[test]
fn cache_is_built_and_reused() {
    let dir = workspace();
    let first = run(
        dir.path(),
        &["ingest", "--embeddings", "input/embeddings.txt"],
    );
    assert!(first.status.success());
    let cache = dir.path().join("input/embeddings.txt.alab");
    assert!(cache.exists());
    let text: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    let again = run(
        dir.path(),
        &["ingest", "--embeddings", "input/embeddings.txt.alab"],
    );
    let cached: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(text["vocabulary"], 12);
    assert_eq!(cached["vocabulary"], 12);
    assert_eq!(cached["dim"], 4);

    // A report from the cache matches one from the text file.
    let a = run(
        dir.path(),
        &with_inputs("report", &["--out-dir", "a", "--deterministic"]),
    );
    assert!(a.status.success());
    let b = run(
        dir.path(),
        &with_inputs(
            "report",
            &["--out-dir", "b", "--deterministic", "--no-cache"],
        ),
    );
    assert!(b.status.success());
    for f in ["ranks.jsonl", "cpr.csv", "deltas.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn missing_ratings_is_a_usage_error() {
    let dir = workspace();
    let out = run(
        dir.path(),
        &[
            "regress",
            "--embeddings",
            "input/embeddings.txt",
            "--stems",
            "input/stems.csv",
            "--responses",
            "input/responses.csv",
            "--ratings",
            "input/nope.csv",
            "--wordfreq",
            "input/wordfreq.tsv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"]["class"], "usage");
    assert!(e["error"]["message"].as_str().unwrap().contains("ratings"));

    let mut args = vec!["report"];
    args.extend(&INPUTS[..6]);
    args.extend(["--out-dir", "o"]);
    let out = run(dir.path(), &args);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        !dir.path().join("o").exists(),
        "nothing is written before validation"
    );
}

#[test]
fn exit_codes_by_error_class() {
    let dir = workspace();
    assert_eq!(run(dir.path(), &["rank", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
    let bad_rule = run(dir.path(), &with_inputs("rank", &["--rule", "sideways"]));
    assert_eq!(bad_rule.status.code(), Some(1));
    assert_eq!(error_json(&bad_rule)["error"]["kind"], "usage");

    fs::write(dir.path().join("input/broken.txt"), "a 1 0\nb 1 0 0\n").unwrap();
    let out = run(
        dir.path(),
        &["ingest", "--embeddings", "input/broken.txt", "--no-cache"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "dimension_mismatch");

    fs::write(
        dir.path().join("input/flat.csv"),
        "# analogylab deltas.csv schema_version=1\n\
         stem_id,system,relation_category,rating_human,rating_llm,human_parallelogram,human_cd,human_nn,human_log_freq,llm_parallelogram,llm_cd,llm_nn,llm_log_freq,delta_parallelogram,delta_cd,delta_nn,delta_log_freq,delta_rating\n\
         s1,llm,,1,2,0,0,0,0,0,0,0,0,0.5,0,0,0,1\n\
         s2,llm,,1,2,0,0,0,0,0,0,0,0,0.5,0,0,0,2\n\
         s3,llm,,1,2,0,0,0,0,0,0,0,0,0.5,0,0,0,3\n",
    )
    .unwrap();
    let out = run(dir.path(), &["ttest", "--deltas", "input/flat.csv"]);
    assert!(out.status.success());
    let out = run(
        dir.path(),
        &[
            "regress",
            "--deltas",
            "input/flat.csv",
            "--model",
            "custom",
            "--predictors",
            "parallelogram",
        ],
    );
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        v["models"][0]["outcome"]["error"]["kind"],
        "constant_column"
    );

    // Raw offsets need the text file's norms; the cache has unit rows only.
    let ingest = run(
        dir.path(),
        &["ingest", "--embeddings", "input/embeddings.txt"],
    );
    assert!(ingest.status.success());
    let mut args = with_inputs("rank", &["--rule", "parallelogram", "--raw-offset"]);
    args[2] = "input/embeddings.txt.alab";
    assert_eq!(run(dir.path(), &args).status.code(), Some(1));
    args[2] = "input/embeddings.txt";
    assert!(run(dir.path(), &args).status.success());

    let out = run(
        dir.path(),
        &["synth", "--out-dir", "s", "--llm-modal-share", "0.99"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "infeasible");

    let out = Command::new(env!("CARGO_BIN_EXE_analogylab"))
        .current_dir(dir.path())
        .env("ANALOGYLAB_THREADS", "zero")
        .args(["ingest", "--embeddings", "input/embeddings.txt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn subcommands_write_their_outputs() {
    let dir = workspace();
    let p = dir.path();
    let rank = run(
        p,
        &with_inputs(
            "rank",
            &[
                "--rule",
                "nn",
                "--exclude-stem",
                "--top-k",
                "2",
                "--no-cache",
            ],
        ),
    );
    assert!(rank.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(rank.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["schema_version"], 1);
    assert!(lines[1..]
        .iter()
        .all(|l| l["rule"] == "nn" && l["exclude_stem"] == true));
    assert_eq!(lines.iter().filter(|l| l["kind"] == "top_k").count(), 4);

    for (cmd, file) in [
        ("cpr", "cpr.csv"),
        ("centroids", "centroids.csv"),
        ("predictors", "predictors.csv"),
    ] {
        let out = run(p, &with_inputs(cmd, &["--out-dir", cmd, "--no-cache"]));
        assert!(out.status.success(), "{cmd}");
        let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(summary["schema_version"], 1);
        let text = fs::read_to_string(p.join(cmd).join(file)).unwrap();
        assert!(text.starts_with(&format!("# analogylab {file} schema_version=1\n")));
    }
    // Predictors also writes deltas when ratings are given, matching the report.
    assert_eq!(
        fs::read(p.join("predictors/deltas.csv")).unwrap(),
        fs::read(toy().join("golden/deltas.csv")).unwrap()
    );
    // The exclusion-mode CPR rows equal the report's.
    let cpr = run(
        p,
        &with_inputs("cpr", &["--out-dir", "ex", "--exclude-stem", "--no-cache"]),
    );
    assert!(cpr.status.success());
    let golden = fs::read_to_string(toy().join("golden/cpr.csv")).unwrap();
    for line in fs::read_to_string(p.join("ex/cpr.csv"))
        .unwrap()
        .lines()
        .skip(2)
    {
        assert!(golden.lines().any(|g| g == line), "{line}");
    }

    let tt = run(
        p,
        &["ttest", "--deltas", "predictors/deltas.csv", "--by-system"],
    );
    let tt: serde_json::Value = serde_json::from_slice(&tt.stdout).unwrap();
    let golden: serde_json::Value =
        serde_json::from_slice(&fs::read(toy().join("golden/ttests.json")).unwrap()).unwrap();
    assert_eq!(tt["tests"], golden["tests"]);
}

#[test]
fn modal_only_changes_the_analysis() {
    let dir = workspace();
    let out = run(
        dir.path(),
        &with_inputs(
            "report",
            &[
                "--out-dir",
                "m",
                "--modal-only",
                "--deterministic",
                "--no-cache",
            ],
        ),
    );
    assert!(out.status.success());
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("m/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["modal_only"], true);
    let prep = &summary["preparation"];
    assert_eq!(
        prep["productions_out"].as_u64().unwrap(),
        prep["productions_in"].as_u64().unwrap()
            - prep["productions_removed_min_count"].as_u64().unwrap()
            - prep["productions_removed_modal"].as_u64().unwrap()
    );
    let preds = fs::read_to_string(dir.path().join("m/predictors.csv")).unwrap();
    assert!(!preds.contains(",girl,2,"));
    assert!(summary.get("generated_at_unix").is_none());
}
