mod common;

use serde_json::{json, Value};

use common::*;

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn clean_two_movers(seed: u64) -> Value {
    scenario(
        seed,
        20,
        vec![
            object(1, json!(9.0), json!(0.0), -20.0, 5.0, 0.2),
            object(2, json!(7.0), json!(0.04), 10.0, -10.0, 1.5),
        ],
        json!({}),
    )
}

#[test]
fn generate_writes_a_readable_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate(dir.path(), &clean_two_movers(1));
    for name in [
        "calibration.json",
        "ground_truth.json",
        "ground_truth_tracks.json",
        "scenario.json",
    ] {
        assert!(seq.join(name).is_file(), "{name}");
    }
    let back = trajlift::io::read_sequence(&seq).unwrap();
    assert_eq!(back.frames.len(), 20);
}

#[test]
fn generate_rejects_bad_probability_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = clean_two_movers(1);
    s["noise"]["dropout"] = json!(1.5);
    let config = write_scenario(dir.path(), &s);
    let out = trajlift()
        .args(["generate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("seq"))
        .assert()
        .code(2)
        .get_output()
        .clone();
    assert!(text(&out.stderr).contains("noise.dropout"), "{}", text(&out.stderr));
}

#[test]
fn generate_rejects_unknown_scenario_fields_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = clean_two_movers(1);
    s["noise"]["drop_out"] = json!(0.1);
    let config = write_scenario(dir.path(), &s);
    trajlift()
        .args(["generate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("seq"))
        .assert()
        .code(2);
}

#[test]
fn generate_is_byte_identical_across_reruns() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = generate(a.path(), &clean_two_movers(3));
    let sb = generate(b.path(), &clean_two_movers(3));
    assert!(same_tree(&sa, &sb));
}

#[test]
fn clean_run_smooths_everything_without_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate(dir.path(), &clean_two_movers(4));
    let out = dir.path().join("run");
    run(&seq, &out, &[]);

    let summary = read_value(&out.join("summary.json"));
    assert_eq!(summary["instances"], 2);
    assert_eq!(summary["smoothed"], 2);
    assert_eq!(summary["rejected_measurements"], 0);
    assert_eq!(summary["failed"], json!([]));

    let gt = read_value(&seq.join("ground_truth.json"));
    for obj in gt["objects"].as_array().unwrap() {
        let id = obj["id"].as_u64().unwrap();
        let smoothed = read_value(&out.join(format!("smoothed/{id:06}.json")));
        let states = smoothed["states"].as_array().unwrap();
        assert_eq!(states.len(), 20);
        for (s, g) in states.iter().zip(obj["states"].as_array().unwrap()) {
            let d: f64 = (0..3)
                .map(|i| s["pose"]["translation"][i].as_f64().unwrap() - g["pose"]["translation"][i].as_f64().unwrap())
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            assert!(d < 0.05, "instance {id}: {d}");
        }
    }
    for name in [
        "tracks.json",
        "events.jsonl",
        "trajectories.svg",
        "config.json",
        "timestamps.json",
    ] {
        assert!(out.join(name).is_file(), "{name}");
    }
}

#[test]
fn slow_mover_is_flagged_static() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(
        5,
        30,
        vec![
            object(1, json!(0.3), json!(0.0), -5.0, 5.0, 0.0),
            object(2, json!(8.0), json!(0.0), -10.0, -10.0, 0.0),
        ],
        json!({}),
    );
    let seq = generate(dir.path(), &s);
    let out = dir.path().join("run");
    run(&seq, &out, &[]);
    let summary = read_value(&out.join("summary.json"));
    assert_eq!(summary["static_count"], 1);
    assert_eq!(summary["per_instance"][0]["is_static"], true);
    assert_eq!(summary["per_instance"][1]["is_static"], false);
}

#[test]
fn run_on_empty_directory_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    trajlift()
        .args(["run", "--sequence"])
        .arg(&empty)
        .arg("--out")
        .arg(dir.path().join("out"))
        .assert()
        .code(1);
}

#[test]
fn invalid_overrides_exit_2_before_reading_input() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["cluster.eps=-1", "register.nonexistent=3", "smooth.max_iterations=lots"] {
        let out = trajlift()
            .args(["run", "--sequence", "/nonexistent", "--out"])
            .arg(dir.path())
            .args(["--set", bad])
            .assert()
            .code(2)
            .get_output()
            .clone();
        let field = bad.split('=').next().unwrap();
        let stderr = text(&out.stderr);
        assert!(stderr.contains(field) || stderr.contains("invalid type"), "{stderr}");
    }
}

#[test]
fn run_is_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(
        6,
        20,
        vec![
            object(1, json!(9.0), json!(0.02), -20.0, 5.0, 0.2),
            object(2, json!(7.0), json!(-0.03), 10.0, -10.0, 1.5),
        ],
        json!({"point_sigma": 0.01, "dropout": 0.1, "descriptor_sigma": 0.05, "visible_sector": [270.0, 360.0]}),
    );
    let seq = generate(dir.path(), &s);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&seq, &a, &["--workers", "1"]);
    run(&seq, &b, &["--workers", "3"]);
    assert!(same_tree(&a, &b));
}

#[test]
fn register_then_smooth_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate(dir.path(), &clean_two_movers(7));
    let full = dir.path().join("full");
    run(&seq, &full, &[]);

    let reg = dir.path().join("reg");
    trajlift()
        .args(["register", "--sequence"])
        .arg(&seq)
        .arg("--out")
        .arg(&reg)
        .assert()
        .success();
    let smoothed = dir.path().join("smoothed");
    trajlift()
        .args(["smooth", "--input"])
        .arg(&reg)
        .arg("--out")
        .arg(&smoothed)
        .assert()
        .success();

    assert!(same_tree(&full.join("measured"), &reg.join("measured")));
    assert!(same_tree(&full.join("smoothed"), &smoothed.join("smoothed")));
    for name in ["tracks.json", "summary.json"] {
        assert_eq!(
            std::fs::read(full.join(name)).unwrap(),
            std::fs::read(smoothed.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate(dir.path(), &clean_two_movers(8));
    let gt = seq.join("ground_truth_tracks.json");
    let report = dir.path().join("report.csv");
    let out = trajlift()
        .args(["eval", "--gt"])
        .arg(&gt)
        .arg("--pred")
        .arg(&gt)
        .arg("--out")
        .arg(&report)
        .assert()
        .success()
        .get_output()
        .clone();
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv, text(&out.stdout));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "threshold,frames,objects,predictions,matches,switches,fp,fn,mota,motp,recall,precision"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        assert_eq!(row[8], "1", "mota");
        assert_eq!(row[9], "0", "motp");
    }
}

#[test]
fn eval_with_mismatched_timestamps_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate(dir.path(), &clean_two_movers(9));
    let gt = seq.join("ground_truth_tracks.json");
    let mut pred = read_value(&gt);
    pred["frames"][3]["timestamp"] = json!(99.0);
    let pred_path = dir.path().join("pred.json");
    std::fs::write(&pred_path, pred.to_string()).unwrap();
    trajlift()
        .args(["eval", "--gt"])
        .arg(&gt)
        .arg("--pred")
        .arg(&pred_path)
        .assert()
        .code(1);
    trajlift()
        .args(["eval", "--gt"])
        .arg(&gt)
        .arg("--pred")
        .arg(&gt)
        .args(["--thresholds", "1,-2"])
        .assert()
        .code(2);
}

#[test]
fn plot_draws_runs_with_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate(dir.path(), &clean_two_movers(10));
    let out = dir.path().join("run");
    run(&seq, &out, &[]);
    let svg = dir.path().join("plot.svg");
    trajlift()
        .args(["plot", "--run"])
        .arg(&out)
        .arg("--out")
        .arg(&svg)
        .arg("--ground-truth")
        .arg(seq.join("ground_truth.json"))
        .assert()
        .success();
    let body = std::fs::read_to_string(&svg).unwrap();
    assert!(body.starts_with("<svg"));
    assert!(body.matches("<polyline").count() >= 4);
}

#[test]
fn events_are_ordered_frames_then_instances() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate(dir.path(), &clean_two_movers(11));
    let out = dir.path().join("run");
    run(&seq, &out, &[]);
    let events: Vec<Value> = std::fs::read_to_string(out.join("events.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let kinds: Vec<&str> = events.iter().map(|e| e["event"].as_str().unwrap()).collect();
    assert_eq!(kinds.iter().filter(|k| **k == "lift").count(), 20);
    assert_eq!(&kinds[20..], ["registered", "registered", "smoothed", "smoothed"]);
    assert_eq!(events[20]["id"], 1);
    assert_eq!(events[21]["id"], 2);
}
