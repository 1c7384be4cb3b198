use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tpa_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpa-lab"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small(out: &Path) -> Vec<String> {
    [
        "--out",
        out.to_str().unwrap(),
        "--set",
        "data.n_per_class=30",
        "--set",
        "data.dim=6",
        "--set",
        "attack.max_examples=8",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_in(out: &Path, cmd: &[&str]) -> Output {
    let mut args: Vec<String> = cmd.iter().map(|s| s.to_string()).collect();
    args.extend(small(out));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    tpa_lab(&refs)
}

#[test]
fn subcommands_chain_and_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for cmd in [
        vec!["gen-data"],
        vec!["train", "--data", d, "--role", "proxy"],
        vec!["train", "--data", d, "--role", "target"],
        vec![
            "attack",
            "--data",
            d,
            "--model",
            &format!("{d}/proxy.tpam"),
            "--attack",
            "tpa",
            "--iterations",
            "3",
        ],
    ] {
        let o = run_in(dir.path(), &cmd);
        assert_eq!(
            code(&o),
            0,
            "{cmd:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let results = format!("{d}/attack_tpa.json");
    let o = run_in(
        dir.path(),
        &[
            "evaluate",
            "--data",
            d,
            "--results",
            &results,
            "--target",
            &format!("{d}/target.tpam"),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("proxy -> target [tpa]"));
    let o = run_in(
        dir.path(),
        &[
            "bound",
            "--data",
            d,
            "--proxy",
            &format!("{d}/proxy.tpam"),
            "--target",
            &format!("{d}/target.tpam"),
            "--results",
            &results,
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("bound_tpa.json").exists());
}

#[test]
fn config_mistakes_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run_in(
            dir.path(),
            &["gen-data", "--set", "data.nonsense=1"]
        )),
        2
    );
    assert_eq!(
        code(&run_in(
            dir.path(),
            &["gen-data", "--set", "split.proxy=0.9"]
        )),
        2
    );
    assert_eq!(
        code(&run_in(
            dir.path(),
            &["gen-data", "--set", "no_equals_sign"]
        )),
        2
    );
    let o = run_in(
        dir.path(),
        &["attack", "--data", ".", "--model", "m", "--attack", "fgsm"],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fgsm"));
    assert_eq!(
        code(&run_in(
            dir.path(),
            &["train", "--data", ".", "--role", "critic"]
        )),
        2
    );
    assert_eq!(code(&tpa_lab(&["no-such-command"])), 2);
}

#[test]
fn missing_or_corrupt_files_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(
        code(&run_in(
            dir.path(),
            &["train", "--data", "/nonexistent", "--role", "proxy"]
        )),
        3
    );
    assert_eq!(code(&run_in(dir.path(), &["gen-data"])), 0);
    let bogus = dir.path().join("bogus.tpam");
    fs::write(&bogus, b"not a checkpoint").unwrap();
    let o = run_in(
        dir.path(),
        &[
            "attack",
            "--data",
            d,
            "--model",
            bogus.to_str().unwrap(),
            "--attack",
            "bim",
        ],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        code(&tpa_lab(&[
            "--config",
            "/nonexistent.cfg",
            "gen-data",
            "--out",
            d
        ])),
        3
    );
}

#[test]
fn demo_sin_reports_distinct_minimizers() {
    let dir = tempfile::tempdir().unwrap();
    let o = tpa_lab(&["demo-sin", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    let xs: Vec<f64> = text
        .lines()
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(xs.len(), 2);
    assert_ne!(xs[0], xs[1]);
    assert_eq!(
        fs::read_to_string(dir.path().join("sin_landscape.csv"))
            .unwrap()
            .lines()
            .count(),
        10_001
    );
}

#[test]
fn full_runs_are_byte_identical_across_directories_and_threads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = run_in(a.path(), &["run", "--threads", "1", "--seed", "3"]);
    let ob = run_in(b.path(), &["run", "--threads", "3", "--seed", "3"]);
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(code(&ob), 0);
    assert_eq!(oa.stdout, ob.stdout);
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 10);
    for n in names {
        assert_eq!(
            fs::read(a.path().join(&n)).unwrap(),
            fs::read(b.path().join(&n)).unwrap(),
            "{n:?}"
        );
    }
}
