//! End-to-end checks of the `adsm` binary: the full tiny-preset pipeline,
//! exit codes, manifest replay, schedule comparison, and SVG output.

use std::path::PathBuf;
use std::process::{Command, Output};
use std::sync::OnceLock;

fn adsm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adsm"))
}

fn run(args: &[&str]) -> Output {
    adsm().args(args).output().expect("spawn adsm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output, what: &str) {
    assert_eq!(
        o.status.code(),
        Some(0),
        "{what} failed\nstdout: {}\nstderr: {}",
        stdout(o),
        stderr(o)
    );
}

/// One shared pipeline run: generate → train(1 epoch) → score → eval.
struct Pipeline {
    _dir: tempfile::TempDir,
    data: PathBuf,
    ckpt: PathBuf,
    scores: PathBuf,
    report: PathBuf,
}

fn pipeline() -> &'static Pipeline {
    static PIPE: OnceLock<Pipeline> = OnceLock::new();
    PIPE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let data = dir.path().join("data");
        let ckpt = dir.path().join("model.ckpt");
        let scores = dir.path().join("scores");
        let report = dir.path().join("report.csv");
        let started = std::time::Instant::now();
        assert_ok(
            &run(&["generate", "--seed", "3", "--out", data.to_str().unwrap()]),
            "generate",
        );
        assert_ok(
            &run(&[
                "train",
                "--data",
                data.to_str().unwrap(),
                "--out",
                ckpt.to_str().unwrap(),
                "--epochs",
                "1",
                "--seed",
                "1",
            ]),
            "train",
        );
        assert_ok(
            &run(&[
                "score",
                "--ckpt",
                ckpt.to_str().unwrap(),
                "--data",
                data.to_str().unwrap(),
                "--seed",
                "1",
                "--out",
                scores.to_str().unwrap(),
            ]),
            "score",
        );
        assert_ok(
            &run(&[
                "eval",
                "--scores",
                scores.to_str().unwrap(),
                "--labels",
                data.join("test/labels.csv").to_str().unwrap(),
                "--out",
                report.to_str().unwrap(),
            ]),
            "eval",
        );
        assert!(
            started.elapsed() < std::time::Duration::from_secs(300),
            "tiny pipeline took {:?}, budget is 5 minutes",
            started.elapsed()
        );
        Pipeline {
            _dir: dir,
            data,
            ckpt,
            scores,
            report,
        }
    })
}

#[test]
fn full_pipeline_smoke_produces_all_artifacts() {
    let p = pipeline();
    for path in [
        p.data.join("train/scenes.csv"),
        p.data.join("test/labels.csv"),
        p.data.join("generate.manifest"),
        p.ckpt.clone(),
        p.ckpt.with_extension("manifest"),
        p.scores.join("scores_raw.csv"),
        p.scores.join("scores_final.csv"),
        p.scores.join("score.manifest"),
        p.report.clone(),
    ] {
        assert!(path.is_file(), "missing artifact {}", path.display());
    }
    let report = std::fs::read_to_string(&p.report).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next(),
        Some("variant,micro_auc,macro_auc,excluded_videos")
    );
    let row = lines.next().expect("report row");
    let micro: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&micro), "micro AUC {micro} out of range");
}

#[test]
fn same_seed_generates_identical_videos() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_ok(
            &run(&["generate", "--seed", "7", "--out", out.to_str().unwrap()]),
            "generate",
        );
    }
    // manifests differ in timing lines only; artifact bytes must be equal
    for split in ["train", "test"] {
        let mut names: Vec<_> = std::fs::read_dir(a.join(split))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let va = std::fs::read(a.join(split).join(&name)).unwrap();
            let vb = std::fs::read(b.join(split).join(&name)).unwrap();
            assert_eq!(va, vb, "{split}/{name:?} differs between equal seeds");
        }
    }
}

#[test]
fn missing_out_flag_is_a_usage_error() {
    let o = run(&["generate"]);
    assert_eq!(o.status.code(), Some(1), "stderr: {}", stderr(&o));
}

#[test]
fn unknown_schedule_is_a_usage_error() {
    let p = pipeline();
    let o = run(&[
        "score",
        "--ckpt",
        p.ckpt.to_str().unwrap(),
        "--data",
        p.data.to_str().unwrap(),
        "--schedule",
        "cubic",
        "--out",
        "/tmp/never-written",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("geometric or linear"));
}

#[test]
fn eval_on_single_class_labels_exits_with_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores");
    std::fs::create_dir_all(&scores).unwrap();
    std::fs::write(
        scores.join("scores_final.csv"),
        "video_id,frame_index,indicator\nv0,0,0.5\nv0,1,0.6\n",
    )
    .unwrap();
    let labels = dir.path().join("labels.csv");
    std::fs::write(&labels, "video_id,frame_index,label\nv0,0,0\nv0,1,0\n").unwrap();
    let o = run(&[
        "eval",
        "--scores",
        scores.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--out",
        dir.path().join("report.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "stderr: {}", stderr(&o));
    assert!(stderr(&o).contains("AUC undefined"));
}

#[test]
fn incompatible_checkpoint_geometry_names_both_fingerprints() {
    let p = pipeline();
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small");
    assert_ok(
        &run(&[
            "generate",
            "--size",
            "16",
            "--frames",
            "16",
            "--videos-per-scene",
            "1",
            "--out",
            small.to_str().unwrap(),
        ]),
        "generate 16px",
    );
    let o = run(&[
        "score",
        "--ckpt",
        p.ckpt.to_str().unwrap(),
        "--data",
        small.to_str().unwrap(),
        "--out",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("fingerprint"), "diagnostic: {err}");
    assert!(err.contains("16x16x3"), "diagnostic: {err}");
}

#[test]
fn geometric_and_linear_schedules_differ_and_are_recorded() {
    let p = pipeline();
    let dir = tempfile::tempdir().unwrap();
    let mut raws = Vec::new();
    for schedule in ["geometric", "linear"] {
        let out = dir.path().join(schedule);
        assert_ok(
            &run(&[
                "--jobs",
                "2",
                "score",
                "--ckpt",
                p.ckpt.to_str().unwrap(),
                "--data",
                p.data.to_str().unwrap(),
                "--levels",
                "5",
                "--schedule",
                schedule,
                "--seed",
                "1",
                "--out",
                out.to_str().unwrap(),
            ]),
            schedule,
        );
        let manifest = std::fs::read_to_string(out.join("score.manifest")).unwrap();
        assert!(
            manifest.contains(&format!("cfg.schedule={schedule}")),
            "manifest must record the schedule"
        );
        raws.push(std::fs::read_to_string(out.join("scores_raw.csv")).unwrap());
    }
    assert_ne!(raws[0], raws[1], "schedules must place different levels");
}

#[test]
fn manifest_replay_reproduces_score_outputs() {
    let p = pipeline();
    let manifest = p.scores.join("score.manifest");
    let o = run(&["--manifest", manifest.to_str().unwrap()]);
    assert_ok(&o, "replay");
    assert!(stdout(&o).contains("replay ok"));
}

#[test]
fn replay_refuses_a_command_alongside_the_manifest() {
    let p = pipeline();
    let manifest = p.scores.join("score.manifest");
    let o = run(&[
        "--manifest",
        manifest.to_str().unwrap(),
        "demo-modes",
        "--out",
        "/tmp/never-written",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn plots_cover_every_video_and_shade_the_injected_intervals() {
    let p = pipeline();
    let dir = tempfile::tempdir().unwrap();
    let plots = dir.path().join("plots");
    assert_ok(
        &run(&[
            "plot",
            "--scores",
            p.scores.to_str().unwrap(),
            "--labels",
            p.data.join("test/labels.csv").to_str().unwrap(),
            "--out",
            plots.to_str().unwrap(),
        ]),
        "plot",
    );
    let labels = std::fs::read_to_string(p.data.join("test/labels.csv")).unwrap();
    let mut videos: Vec<&str> = labels
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').next())
        .collect();
    videos.sort();
    videos.dedup();
    let mut any_shaded = false;
    for v in &videos {
        let path = plots.join(format!("{v}.svg"));
        let svg = std::fs::read_to_string(&path)
            .unwrap_or_else(|_| panic!("missing plot {}", path.display()));
        assert_well_formed(&svg);
        // more than the axes box means at least one shaded interval
        if svg.matches("<rect").count() > 1 {
            any_shaded = true;
        }
    }
    assert!(any_shaded, "no plot shows a ground-truth interval");
}

#[test]
fn demo_modes_emits_field_and_heat_map() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("modes");
    let o = run(&["demo-modes", "--grid", "6,41", "--out", out.to_str().unwrap()]);
    assert_ok(&o, "demo-modes");
    let text = stdout(&o);
    assert!(text.contains("blind spot"), "stdout: {text}");
    let field = std::fs::read_to_string(out.join("field.csv")).unwrap();
    assert_eq!(field.lines().count(), 1 + 41 * 41);
    assert_eq!(field.lines().next(), Some("x,y,density,score_x,score_y,score_norm"));
    let svg = std::fs::read_to_string(out.join("modes.svg")).unwrap();
    assert_well_formed(&svg);
}

#[test]
fn demo_modes_rejects_a_malformed_mixture() {
    let o = run(&[
        "demo-modes",
        "--mixture",
        "1.0,0.0,0.0",
        "--out",
        "/tmp/never-written",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

/// Tag-stack well-formedness scan, kept in sync with the unit-test copy.
fn assert_well_formed(xml: &str) {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = xml;
    while let Some(open) = rest.find('<') {
        rest = &rest[open + 1..];
        let close = rest.find('>').expect("unterminated tag");
        let tag = &rest[..close];
        rest = &rest[close + 1..];
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            assert_eq!(stack.pop().as_deref(), Some(name.trim()), "mismatched close");
        } else if !tag.ends_with('/') {
            let name = tag.split_whitespace().next().unwrap().to_string();
            stack.push(name);
        }
    }
    assert!(stack.is_empty(), "unclosed tags: {stack:?}");
    assert!(!xml.contains("NaN"), "NaN leaked into SVG");
}

/// Replaying the generate manifest must reproduce the dataset bit-for-bit
/// (the replay itself re-verifies the recorded output checksums).
#[test]
fn manifest_replay_regenerates_the_dataset() {
    let p = pipeline();
    let manifest = p.data.join("generate.manifest");
    let o = run(&["--manifest", manifest.to_str().unwrap()]);
    assert_ok(&o, "generate replay");
    assert!(stdout(&o).contains("replay ok"));
}
