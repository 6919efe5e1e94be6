use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn shapejig(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapejig"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn shapejig")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn smoke_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke");
    for f in ["data.cfg", "permset.cfg", "train.cfg", "diversify.cfg"] {
        fs::copy(src.join(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let o = shapejig(dir, args);
    assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    o
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn snapshot(root: &Path, skip: &[&str]) -> Vec<(PathBuf, Vec<u8>)> {
    files_under(root)
        .into_iter()
        .filter(|p| !skip.iter().any(|s| p.ends_with(s)))
        .map(|p| (p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = shapejig(dir.path(), &["train", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_ok(dir.path(), &["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in [
        "gen-data",
        "gen-permset",
        "diversify",
        "train",
        "eval",
        "shape-bias",
        "attention",
        "gradcheck",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn missing_dataset_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("t.cfg"), "permset = p.txt\nepochs = 1\n").unwrap();
    let o = shapejig(dir.path(), &["train", "t.cfg"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("dataset"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.cfg"), "grid = 3\npermutatoins = 30\n").unwrap();
    let o = shapejig(dir.path(), &["gen-permset", "p.cfg"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("permutatoins"), "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_is_a_runtime_failure() {
    let dir = smoke_dir();
    let d = dir.path();
    run_ok(d, &["gen-data", "data.cfg", "--out", "data"]);
    run_ok(d, &["gen-permset", "permset.cfg", "--out", "."]);
    assert_eq!(code(&shapejig(d, &["eval", "train.cfg", "--out", "nowhere"])), 2);
}

#[test]
fn gradcheck_passes_and_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_ok(dir.path(), &["gradcheck", "--seed", "0", "--out", "gc"]);
    let table = String::from_utf8_lossy(&o.stdout);
    for name in ["f.conv0.w", "c.b", "j.w"] {
        assert!(table.contains(name), "{table}");
    }
    let csv = fs::read_to_string(dir.path().join("gc/gradcheck.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let err: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(err < 1e-4, "{line}");
    }
}

#[test]
fn smoke_pipeline_runs_end_to_end() {
    let dir = smoke_dir();
    let d = dir.path();
    run_ok(d, &["gen-data", "data.cfg", "--out", "data"]);
    run_ok(d, &["gen-permset", "permset.cfg", "--out", "."]);
    run_ok(d, &["train", "train.cfg", "--out", "run"]);
    run_ok(d, &["eval", "train.cfg", "--out", "run"]);
    run_ok(d, &["shape-bias", "train.cfg", "--out", "run"]);
    run_ok(d, &["attention", "train.cfg", "--out", "run", "--count", "10"]);
    run_ok(d, &["diversify", "diversify.cfg", "--out", "div"]);

    let run = d.join("run");
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let eval = fs::read_to_string(run.join("eval.csv")).unwrap();
    assert!(eval.lines().any(|l| l.starts_with("target,")));
    assert_eq!(fs::read_to_string(run.join("eval.jsonl")).unwrap().lines().count(), 5);
    assert_eq!(fs::read_dir(run.join("attention")).unwrap().count(), 10);
    assert_eq!(fs::read_dir(d.join("div/diversified")).unwrap().count(), 8);

    // an incompatible dataset is refused before any evaluation
    fs::write(
        d.join("data4.cfg"),
        fs::read_to_string(d.join("data.cfg"))
            .unwrap()
            .replace("classes = 6", "classes = 4"),
    )
    .unwrap();
    run_ok(d, &["gen-data", "data4.cfg", "--out", "data4"]);
    fs::write(
        d.join("train4.cfg"),
        fs::read_to_string(d.join("train.cfg"))
            .unwrap()
            .replace("dataset = data", "dataset = data4"),
    )
    .unwrap();
    let o = shapejig(
        d,
        &[
            "eval",
            "train4.cfg",
            "--out",
            "run4",
            "--checkpoint",
            "run/checkpoint.bin",
        ],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn reruns_overwrite_out_identically() {
    let dir = smoke_dir();
    let d = dir.path();
    let steps: [&[&str]; 5] = [
        &["gen-data", "data.cfg", "--out", "data"],
        &["gen-permset", "permset.cfg", "--out", "."],
        &["train", "train.cfg", "--out", "run"],
        &["eval", "train.cfg", "--out", "run"],
        &["diversify", "diversify.cfg", "--out", "div"],
    ];
    for s in steps {
        run_ok(d, s);
    }
    let first = snapshot(d, &["timing.csv"]);
    for s in steps {
        run_ok(d, s);
    }
    let second = snapshot(d, &["timing.csv"]);
    assert_eq!(first.len(), second.len());
    for ((pa, a), (pb, b)) in first.iter().zip(&second) {
        assert_eq!(pa, pb);
        assert!(a == b, "{} changed on rerun", pa.display());
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = smoke_dir();
    let d = dir.path();
    run_ok(d, &["gen-permset", "permset.cfg", "--out", "a"]);
    run_ok(d, &["gen-permset", "permset.cfg", "--out", "b", "--seed", "5"]);
    assert_ne!(
        fs::read(d.join("a/permset.txt")).unwrap(),
        fs::read(d.join("b/permset.txt")).unwrap()
    );
}

#[test]
fn resume_flag_continues_a_run() {
    let dir = smoke_dir();
    let d = dir.path();
    run_ok(d, &["gen-data", "data.cfg", "--out", "data"]);
    run_ok(d, &["gen-permset", "permset.cfg", "--out", "."]);
    run_ok(d, &["train", "train.cfg", "--out", "full"]);
    fs::write(
        d.join("short.cfg"),
        fs::read_to_string(d.join("train.cfg"))
            .unwrap()
            .replace("epochs = 2", "epochs = 1"),
    )
    .unwrap();
    run_ok(d, &["train", "short.cfg", "--out", "part"]);
    run_ok(d, &["train", "train.cfg", "--out", "part", "--resume"]);
    assert_eq!(
        fs::read(d.join("full/metrics.csv")).unwrap(),
        fs::read(d.join("part/metrics.csv")).unwrap()
    );
}
