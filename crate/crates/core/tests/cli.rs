use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn plugnet(args: &[&str], cwd: &Path, env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_plugnet"));
    cmd.args(args)
        .current_dir(cwd)
        .env_remove("PLUGNET_OUTPUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("PLUGNET_OUTPUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap()
}

fn run_scenario(tmp: &TempDir, name: &str, seed: &str, sub: &str) -> (Output, std::path::PathBuf) {
    let out = tmp.path().join(sub);
    let o = plugnet(
        &[
            "scenario",
            "run",
            "--name",
            name,
            "--seed",
            seed,
            "--output-dir",
            out.to_str().unwrap(),
        ],
        tmp.path(),
        None,
    );
    (o, out)
}

#[test]
fn benign_run_writes_artifacts_and_exits_zero() {
    let tmp = TempDir::new().unwrap();
    let (o, out) = run_scenario(&tmp, "benign", "7", "b");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["trace.jsonl", "report.json", "final_states.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let r = report(&out);
    assert_eq!(r["scenario"], "benign");
    assert_eq!(r["seed"], 7);
    assert_eq!(r["outcome"], "Completed");
    let states: Value =
        serde_json::from_slice(&fs::read(out.join("final_states.json")).unwrap()).unwrap();
    assert_eq!(states, r["final_states"]);
}

#[test]
fn sharing_attack_reports_attacker_control() {
    let tmp = TempDir::new().unwrap();
    let (o, out) = run_scenario(&tmp, "sharing-attack", "7", "s");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(report(&out)["outcome"], "AttackerControls");
}

#[test]
fn patched_flag_turns_sharing_into_dos() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("p");
    let o = plugnet(
        &[
            "scenario",
            "run",
            "--name",
            "sharing-attack",
            "--seed",
            "7",
            "--patched",
            "--output-dir",
            out.to_str().unwrap(),
        ],
        tmp.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(report(&out)["outcome"], "VictimDoS");
    assert_eq!(report(&out)["patched"], true);
}

#[test]
fn same_command_twice_gives_identical_artifacts() {
    let tmp = TempDir::new().unwrap();
    for name in ["benign", "hijack"] {
        let (_, a) = run_scenario(&tmp, name, "11", &format!("{name}-a"));
        let (_, b) = run_scenario(&tmp, name, "11", &format!("{name}-b"));
        for f in ["trace.jsonl", "report.json", "final_states.json"] {
            assert_eq!(
                fs::read(a.join(f)).unwrap(),
                fs::read(b.join(f)).unwrap(),
                "{name} {f}"
            );
        }
    }
}

#[test]
fn usage_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let o = plugnet(
        &["scenario", "run", "--name", "nope", "--seed", "1"],
        tmp.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown scenario"));
    let o = plugnet(&["scenario", "run", "--name", "benign"], tmp.path(), None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--seed"));
    let o = plugnet(&["scenario", "bogus"], tmp.path(), None);
    assert_eq!(o.status.code(), Some(2));
    let o = plugnet(&["--help"], tmp.path(), None);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn failed_postconditions_exit_one() {
    // The wardriver looks for the wrong vendor and never finds the plug.
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    let o = plugnet(
        &[
            "scenario",
            "run",
            "--name",
            "sharing-attack",
            "--seed",
            "3",
            "--vendor-oui",
            "00:17:88",
            "--output-dir",
            out.to_str().unwrap(),
        ],
        tmp.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert_eq!(report(&out)["outcome"], "Failed");
    assert!(stdout(&o).contains("FAILED"));
}

#[test]
fn config_precedence() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("plugnet.conf");
    fs::write(
        &cfg,
        "# run settings\nscenario = local-control\nseed = 5\noutput_dir = from-config\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let env_dir = tmp.path().join("from-env");

    // Config supplies everything; it beats the environment.
    let o = plugnet(
        &["scenario", "run", "--config", cfg],
        tmp.path(),
        Some(&env_dir),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(&tmp.path().join("from-config"));
    assert_eq!(
        (r["scenario"].as_str(), r["seed"].as_u64()),
        (Some("local-control"), Some(5))
    );
    assert!(!env_dir.exists());

    // Flags beat the config.
    let o = plugnet(
        &[
            "scenario",
            "run",
            "--config",
            cfg,
            "--name",
            "benign",
            "--seed",
            "6",
            "--output-dir",
            "from-flag",
        ],
        tmp.path(),
        Some(&env_dir),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(&tmp.path().join("from-flag"));
    assert_eq!(
        (r["scenario"].as_str(), r["seed"].as_u64()),
        (Some("benign"), Some(6))
    );

    // Without flag or config, the environment names the directory.
    let o = plugnet(
        &["scenario", "run", "--name", "benign", "--seed", "6"],
        tmp.path(),
        Some(&env_dir),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(env_dir.join("report.json").is_file());

    // And without any of them, the default directory.
    let o = plugnet(
        &["scenario", "run", "--name", "benign", "--seed", "6"],
        tmp.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(tmp.path().join("plugnet-out/report.json").is_file());
}

#[test]
fn bad_config_exits_two_with_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.conf");
    fs::write(&cfg, "seed = 1\ncolour = blue\n").unwrap();
    let o = plugnet(
        &[
            "scenario",
            "run",
            "--name",
            "benign",
            "--config",
            cfg.to_str().unwrap(),
        ],
        tmp.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn analyze_entropy_reports_fields() {
    let tmp = TempDir::new().unwrap();
    let (_, out) = run_scenario(&tmp, "benign", "7", "b");
    let trace = out.join("trace.jsonl");
    let o = plugnet(
        &["analyze", "entropy", "--trace", trace.to_str().unwrap()],
        tmp.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let fields = v["fields"].as_array().unwrap();
    assert!(fields
        .iter()
        .filter(|f| f["name"].as_str().unwrap().ends_with("digest") && f["byte_count"] == 20)
        .all(|f| f["flagged"] == true));

    let o = plugnet(
        &[
            "analyze",
            "entropy",
            "--trace",
            trace.to_str().unwrap(),
            "--threshold",
            "8.01",
        ],
        tmp.path(),
        None,
    );
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["fields"]
        .as_array()
        .unwrap()
        .iter()
        .all(|f| f["flagged"] == false));
}

#[test]
fn analyze_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let o = plugnet(
        &["analyze", "fs-magic", "--blob", "missing.bin"],
        tmp.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "not json\n").unwrap();
    let o = plugnet(
        &["analyze", "entropy", "--trace", bad.to_str().unwrap()],
        tmp.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"));
}

#[test]
fn find_cert_and_fs_magic() {
    let tmp = TempDir::new().unwrap();
    let blob = tmp.path().join("fw.bin");
    let mut bytes = vec![0u8; 5000];
    bytes.extend_from_slice(b"-----BEGIN CERTIFICATE-----\nMIIB\n");
    fs::write(&blob, &bytes).unwrap();
    let o = plugnet(
        &["analyze", "find-cert", "--blob", blob.to_str().unwrap()],
        tmp.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["findings"][0]["offset"], 5000);
    assert_eq!(v["findings"].as_array().unwrap().len(), 1);

    let mut fw = fs::read(Path::new(FIXTURES).join("squashfs.img")).unwrap();
    let jffs2_at = fw.len();
    fw.extend(fs::read(Path::new(FIXTURES).join("jffs2.img")).unwrap());
    fs::write(&blob, &fw).unwrap();
    let o = plugnet(
        &["analyze", "fs-magic", "--blob", blob.to_str().unwrap()],
        tmp.path(),
        None,
    );
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let found: Vec<(u64, &str, &str)> = v["findings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            (
                f["offset"].as_u64().unwrap(),
                f["kind"].as_str().unwrap(),
                f["detail"].as_str().unwrap(),
            )
        })
        .collect();
    assert_eq!(
        found,
        vec![
            (0, "SquashFS", "read-only"),
            (jffs2_at as u64, "JFFS2", "writable")
        ]
    );
}

#[test]
fn trace_inspect_listing_and_filters() {
    let tmp = TempDir::new().unwrap();
    let (_, out) = run_scenario(&tmp, "benign", "7", "b");
    let trace = out.join("trace.jsonl");
    let t = trace.to_str().unwrap();
    let records = fs::read_to_string(&trace).unwrap().lines().count();

    let o = plugnet(&["trace", "inspect", "--trace", t], tmp.path(), None);
    assert_eq!(o.status.code(), Some(0));
    let listing = stdout(&o);
    assert_eq!(listing.lines().count(), records);
    assert!(listing.contains("wifi.passphrase=<redacted>"));
    assert!(!listing.contains("correct horse"));

    // The benign script sends exactly two remote commands.
    let o = plugnet(
        &[
            "trace",
            "inspect",
            "--trace",
            t,
            "--filter",
            "kind=ControlCommand",
        ],
        tmp.path(),
        None,
    );
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("action=01") && lines[1].contains("action=00"));

    let o = plugnet(
        &[
            "trace",
            "inspect",
            "--trace",
            t,
            "--filter",
            "src=phone",
            "--filter",
            "dst=https",
        ],
        tmp.path(),
        None,
    );
    assert!(stdout(&o).lines().count() >= 2);
    assert!(stdout(&o)
        .lines()
        .all(|l| l.contains(" phone(") && l.contains("-> https(")));

    let o = plugnet(
        &["trace", "inspect", "--trace", t, "--filter", "colour=red"],
        tmp.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn trace_inspect_empty_and_malformed() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = plugnet(
        &["trace", "inspect", "--trace", empty.to_str().unwrap()],
        tmp.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());

    let (_, out) = run_scenario(&tmp, "benign", "2", "b");
    let mut text = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    let n = text.lines().count();
    text.push_str("{\"seq\": 1}\n");
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, text).unwrap();
    let o = plugnet(
        &["trace", "inspect", "--trace", bad.to_str().unwrap()],
        tmp.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains(&format!("line {}", n + 1)),
        "{}",
        stderr(&o)
    );
    assert!(o.stdout.is_empty());
}
