use std::path::Path;
use std::process::{Command, Output};

fn ego(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ego"))
        .current_dir(dir)
        .env_remove("EGO_LIBRARY")
        .env_remove("EGO_TEMPLATES")
        .args(args)
        .output()
        .expect("spawn ego")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SCRIPTED: [&str; 4] = ["--backend", "scripted", "--script", "s/script.json"];

fn with_scripted<'a>(rest: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = SCRIPTED.to_vec();
    v.extend_from_slice(rest);
    v
}

/// Synthetic suite plus a one-layer calibration file.
fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = ego(dir.path(), &["synth", "s"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = ego(dir.path(), &with_scripted(&["--top-l", "1", "calibrate", "s/calibration.json"]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("selected layers: [2]"), "{}", stdout(&out));
    dir
}

#[test]
fn help_exits_zero_and_bad_flag_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ego(dir.path(), &["--help"])), 0);
    assert_eq!(code(&ego(dir.path(), &["--no-such-flag"])), 1);
    assert_eq!(code(&ego(dir.path(), &["run", "recognition"])), 1);
}

#[test]
fn enroll_run_and_duplicate() {
    let dir = prepared();
    let d = dir.path();
    let out = ego(
        d,
        &with_scripted(&[
            "--calibration",
            "layers.json",
            "enroll",
            "mug",
            "s/ref/mug_0.egoi",
            "s/ref/mug_1.egoi",
            "--dump-selection",
            "sel.json",
        ]),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(d.join("library.egoc").exists());
    let dump: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("sel.json")).unwrap()).unwrap();
    assert_eq!(dump["views"].as_array().unwrap().len(), 2);
    assert_eq!(dump["views"][0]["k_c"], 12);

    let again = ego(d, &with_scripted(&["--calibration", "layers.json", "enroll", "mug", "s/ref/mug_2.egoi"]));
    assert_eq!(code(&again), 4, "{}", stderr(&again));

    let out = ego(d, &with_scripted(&["run", "recognition", "s/query/mug_0.egoi"]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("mug: yes"));

    let out = ego(d, &with_scripted(&["run", "recognition", "s/query/bike_0.egoi"]));
    assert!(stdout(&out).contains("mug: no"));

    let out = ego(d, &["inspect", "--json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v[0]["name"], "mug");
    assert_eq!(v[0]["rows"], 24);
}

#[test]
fn usage_errors_exit_one() {
    let dir = prepared();
    let d = dir.path();
    let no_q = ego(d, &with_scripted(&["run", "vqa", "--no-concepts", "s/query/mug_0.egoi"]));
    assert_eq!(code(&no_q), 1, "{}", stderr(&no_q));
    let extra_q = ego(
        d,
        &with_scripted(&["run", "captioning", "--no-concepts", "--question", "why?", "s/query/mug_0.egoi"]),
    );
    assert_eq!(code(&extra_q), 1);
    let no_layers = ego(d, &with_scripted(&["enroll", "mug", "s/ref/mug_0.egoi"]));
    assert_eq!(code(&no_layers), 1, "{}", stderr(&no_layers));
    let no_script = ego(d, &["--backend", "scripted", "inspect"]);
    assert_eq!(code(&no_script), 1);
    let bad_fraction = ego(d, &with_scripted(&["--fraction", "0", "calibrate", "s/calibration.json"]));
    assert_eq!(code(&bad_fraction), 1);
}

#[test]
fn manifest_and_backend_errors() {
    let dir = prepared();
    let d = dir.path();
    let missing = ego(d, &with_scripted(&["--layers", "2", "eval", "nothere.json"]));
    assert_eq!(code(&missing), 2, "{}", stderr(&missing));
    std::fs::write(d.join("bad.json"), "{\"version\": 1, \"concepts\": [}").unwrap();
    let bad = ego(d, &with_scripted(&["--layers", "2", "eval", "bad.json"]));
    assert_eq!(code(&bad), 2);
    let no_samples = ego(d, &with_scripted(&["calibrate", "nothere.json"]));
    assert_eq!(code(&no_samples), 2);
    let no_session = ego(d, &["--backend", "adapter", "--adapter-session", "missing-session", "--adapter-timeout", "1", "inspect"]);
    // inspect never touches the backend; the library is missing instead
    assert_ne!(code(&no_session), 0);
    let adapter = ego(
        d,
        &["--backend", "adapter", "--adapter-session", "missing-session", "--adapter-timeout", "1", "run", "captioning", "--no-concepts", "s/query/mug_0.egoi"],
    );
    assert_eq!(code(&adapter), 3, "{}", stderr(&adapter));
}

#[test]
fn calibration_from_another_backend_is_rejected() {
    let dir = prepared();
    let out = ego(dir.path(), &["--calibration", "layers.json", "enroll", "mug", "s/ref/mug_0.egoi"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn context_overflow_exits_six() {
    let dir = prepared();
    let d = dir.path();
    let path = d.join("s/script.json");
    let mut script: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    script["config"]["max_context"] = serde_json::json!(460);
    std::fs::write(d.join("s/tight.json"), serde_json::to_vec(&script).unwrap()).unwrap();
    let tight = ["--backend", "scripted", "--script", "s/tight.json", "--layers", "2"];
    // each enrollment fits; four concepts of five views together do not
    for name in ["mug", "bike", "cat", "lamp"] {
        let views: Vec<String> = (0..5).map(|i| format!("s/ref/{name}_{i}.egoi")).collect();
        let mut args = tight.to_vec();
        args.extend(["enroll", name]);
        args.extend(views.iter().map(String::as_str));
        let out = ego(d, &args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let mut args = tight.to_vec();
    args.extend(["run", "recognition", "s/query/mug_0.egoi"]);
    let out = ego(d, &args);
    assert_eq!(code(&out), 6, "{}", stderr(&out));
}

#[test]
fn eval_reports_are_byte_identical_across_runs_and_jobs() {
    let dir = prepared();
    let d = dir.path();
    let run = |out: &str, jobs: &str| {
        let o = ego(
            d,
            &with_scripted(&["--calibration", "layers.json", "--jobs", jobs, "eval", "s/manifest.json", "--out", out]),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        o
    };
    let first = run("r1", "1");
    run("r2", "1");
    run("r3", "4");
    let a = std::fs::read(d.join("r1/report.json")).unwrap();
    assert_eq!(a, std::fs::read(d.join("r2/report.json")).unwrap());
    assert_eq!(a, std::fs::read(d.join("r3/report.json")).unwrap());
    assert_eq!(
        std::fs::read(d.join("r1/report.txt")).unwrap(),
        std::fs::read(d.join("r3/report.txt")).unwrap()
    );
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["recognition"]["f1"], 1.0);
    assert!(stdout(&first).contains("recognition"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = prepared();
    let d = dir.path();
    std::fs::write(
        d.join("ego.toml"),
        "backend = \"scripted\"\nscript = \"s/script.json\"\nlayers = [2]\nlibrary = \"from-config.egoc\"\n",
    )
    .unwrap();
    let out = ego(d, &["--config", "ego.toml", "enroll", "cat", "s/ref/cat_0.egoi"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(d.join("from-config.egoc").exists());
    let out = ego(d, &["--config", "ego.toml", "--library", "flag.egoc", "enroll", "cat", "s/ref/cat_0.egoi"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(d.join("flag.egoc").exists());
    let out = ego(d, &["--config", "ego.toml", "--verbose", "inspect"]);
    assert!(stderr(&out).contains("from-config.egoc"), "{}", stderr(&out));
}
