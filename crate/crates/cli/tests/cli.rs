//! Runs the `posekit` binary end to end on a small corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use posekit::skeleton::JOINT_NAMES;
use posekit_cli::posefile::parse_pose;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posekit"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    fn dataset(&self) -> PathBuf {
        self.root.join("data.npk")
    }
    fn models(&self) -> PathBuf {
        self.root.join("models")
    }
}

/// Corpus, dataset and a fully trained model directory at default settings.
fn workspace() -> &'static Workspace {
    static W: OnceLock<Workspace> = OnceLock::new();
    W.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let w = Workspace {
            root: dir.path().to_path_buf(),
            _dir: dir,
        };
        ok(&[
            "synth",
            "--out",
            s(&w.corpus()),
            "--clips",
            "12",
            "--frames",
            "30",
            "--seed",
            "3",
        ]);
        let map = w.corpus().join("cmu.map");
        ok(&[
            "ingest",
            "--input",
            s(&w.corpus()),
            "--mapping",
            s(&map),
            "--out",
            s(&w.dataset()),
        ]);
        ok(&[
            "train-ae",
            "--dataset",
            s(&w.dataset()),
            "--out",
            s(&w.models()),
        ]);
        ok(&[
            "train-solver",
            "--dataset",
            s(&w.dataset()),
            "--models",
            s(&w.models()),
        ]);
        w
    })
}

#[test]
fn ingest_of_empty_directory_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let map = dir.path().join("cmu.map");
    std::fs::write(&map, posekit::synth::CMU_MAPPING).unwrap();
    let out_file = dir.path().join("out.npk");
    let out = run(&[
        "ingest",
        "--input",
        s(&empty),
        "--mapping",
        s(&map),
        "--out",
        s(&out_file),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no .bvh files"));
    assert!(!out_file.exists());
}

#[test]
fn ingest_counts_and_is_reproducible() {
    let w = workspace();
    let again = w.root.join("again.npk");
    let map = w.corpus().join("cmu.map");
    let text = ok(&[
        "ingest",
        "--input",
        s(&w.corpus()),
        "--mapping",
        s(&map),
        "--out",
        s(&again),
    ]);
    assert!(
        text.contains("poses 360  clips 12  dropped_jittery 0"),
        "{text}"
    );
    assert_eq!(
        std::fs::read(&again).unwrap(),
        std::fs::read(w.dataset()).unwrap()
    );
}

#[test]
fn jittery_clips_are_counted_as_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, noisy) = (dir.path().join("clean"), dir.path().join("noisy"));
    ok(&[
        "synth",
        "--out",
        s(&clean),
        "--clips",
        "3",
        "--frames",
        "20",
    ]);
    ok(&[
        "synth",
        "--out",
        s(&noisy),
        "--clips",
        "2",
        "--frames",
        "20",
        "--jitter",
        "--seed",
        "1",
    ]);
    for entry in std::fs::read_dir(&noisy).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "bvh") {
            let name = format!("jitter_{}", p.file_name().unwrap().to_string_lossy());
            std::fs::copy(&p, clean.join(name)).unwrap();
        }
    }
    let out = dir.path().join("d.npk");
    let text = ok(&[
        "ingest",
        "--input",
        s(&clean),
        "--mapping",
        s(&clean.join("cmu.map")),
        "--out",
        s(&out),
    ]);
    assert!(
        text.contains("poses 60  clips 3  dropped_jittery 2"),
        "{text}"
    );
}

#[test]
fn training_echoes_defaults_and_is_seeded() {
    let w = workspace();
    let other = w.root.join("other");
    let echo = ok(&["train-ae", "--dataset", s(&w.dataset()), "--out", s(&other)]);
    let first = echo.lines().next().unwrap();
    for part in [
        "epochs=20",
        "batch_size=256",
        "learning_rate=0.0001",
        "latent_dim=64",
        "seed=0",
    ] {
        assert!(first.contains(part), "{first}");
    }
    assert_eq!(echo.lines().filter(|l| l.starts_with("epoch ")).count(), 20);
    assert_eq!(
        std::fs::read(other.join("ae.npw")).unwrap(),
        std::fs::read(w.models().join("ae.npw")).unwrap()
    );
    let log = std::fs::read_to_string(other.join("ae_loss.tsv")).unwrap();
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 20);

    let solver = ok(&[
        "train-solver",
        "--dataset",
        s(&w.dataset()),
        "--models",
        s(&other),
        "--joints",
        "hands",
    ]);
    let first = solver.lines().next().unwrap();
    assert!(
        first.contains("epochs=5") && first.contains("k=0.01"),
        "{first}"
    );
    let name = "solver_LeftHand_RightHand.npw";
    assert_eq!(
        std::fs::read(other.join(name)).unwrap(),
        std::fs::read(w.models().join(name)).unwrap()
    );

    let reseeded = w.root.join("reseeded");
    ok(&[
        "train-ae",
        "--dataset",
        s(&w.dataset()),
        "--out",
        s(&reseeded),
        "--seed",
        "9",
    ]);
    assert_ne!(
        std::fs::read(reseeded.join("ae.npw")).unwrap(),
        std::fs::read(w.models().join("ae.npw")).unwrap()
    );
}

#[test]
fn config_files_override_defaults_and_reject_unknown_keys() {
    let w = workspace();
    let cfg = w.root.join("short.cfg");
    std::fs::write(&cfg, "# quick run\nepochs = 2\nlearning_rate = 0.001\n").unwrap();
    let out_dir = w.root.join("short");
    let echo = ok(&[
        "train-ae",
        "--dataset",
        s(&w.dataset()),
        "--out",
        s(&out_dir),
        "--config",
        s(&cfg),
    ]);
    assert!(
        echo.contains("epochs=2") && echo.contains("learning_rate=0.001"),
        "{echo}"
    );

    std::fs::write(&cfg, "epoch = 2\n").unwrap();
    let out = run(&[
        "train-ae",
        "--dataset",
        s(&w.dataset()),
        "--out",
        s(&out_dir),
        "--config",
        s(&cfg),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key `epoch`"));
}

#[test]
fn solver_training_requires_an_autoencoder() {
    let w = workspace();
    let empty = w.root.join("no-models");
    let out = run(&[
        "train-solver",
        "--dataset",
        s(&w.dataset()),
        "--models",
        s(&empty),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ae.npw"));
}

fn residuals(stderr: &[u8]) -> Vec<(String, f64)> {
    String::from_utf8_lossy(stderr)
        .lines()
        .map(|l| {
            let parts: Vec<&str> = l.split_whitespace().collect();
            (parts[0].to_string(), parts[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn one_shot_solves_write_pose_files() {
    let w = workspace();
    let out_file = w.root.join("solved.pose");
    let targets = [
        "LeftHand=0.5,1.3,0.2",
        "RightHand=-0.5,1.3,0.2",
        "Head=0,1.7,0",
    ];
    let models = w.models();
    let mut args = vec![
        "solve",
        "--models",
        s(&models),
        "--post-process",
        "--out",
        s(&out_file),
    ];
    for t in &targets {
        args.extend(["--target", t]);
    }
    let out = run(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let pose = parse_pose(&std::fs::read_to_string(&out_file).unwrap()).unwrap();
    let reported = residuals(&out.stderr);
    assert_eq!(reported.len(), 3);
    for ((name, r), (joint, target)) in reported.iter().zip([
        (8, [0.5, 1.3, 0.2]),
        (12, [-0.5, 1.3, 0.2]),
        (4, [0.0, 1.7, 0.0]),
    ]) {
        assert_eq!(name, JOINT_NAMES[joint]);
        let d = pose
            .joint(joint)
            .distance(posekit::geom::Vec3::new(target[0], target[1], target[2]));
        assert!((d - r).abs() < 1e-5, "{name}: {d} vs {r}");
    }

    // The solved pose can seed the next solve, here with FABRIK to stdout.
    let text = ok(&[
        "solve",
        "--models",
        s(&w.models()),
        "--pose",
        s(&out_file),
        "--method",
        "fabrik",
        "--target",
        "LeftHand=0.3,1.2,0.3",
    ]);
    assert!(parse_pose(&text).is_ok());
}

#[test]
fn solve_rejects_targets_without_a_solver() {
    let w = workspace();
    for target in ["LeftHand=0,1,0", "Neck=0,1,0", "Tail=0,1,0", "Head=0,1"] {
        let out = run(&["solve", "--models", s(&w.models()), "--target", target]);
        assert!(!out.status.success(), "{target}");
    }
}

#[test]
fn bench_writes_one_row_per_method() {
    let w = workspace();
    let tsv = w.root.join("bench.tsv");
    let table = ok(&[
        "bench",
        "--models",
        s(&w.models()),
        "--dataset",
        s(&w.dataset()),
        "--iterations",
        "20",
        "--repeats",
        "2",
        "--out",
        s(&tsv),
    ]);
    for label in [
        "FABRIK(2)",
        "Ours(2)",
        "Ours(2)+post",
        "FABRIK(5)",
        "Ours(5)",
        "Ours(5)+post",
    ] {
        assert!(table.contains(label), "{table}");
    }
    let rows: Vec<Vec<String>> = std::fs::read_to_string(&tsv)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect();
    assert_eq!(
        rows[0],
        [
            "method",
            "effectors",
            "post_process",
            "mean_ms",
            "footprint_kb",
            "iterations"
        ]
    );
    assert_eq!(rows.len(), 7);
    assert!(rows[1..].iter().all(|r| r.len() == 6 && r[5] == "20"));
    let ours2: f64 = rows[2][4].parse().unwrap();
    assert!((ours2 - 461.6).abs() < 0.5, "{ours2}");
}
