//! End-to-end runs of the `amodal` binary.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use amodal_core::synth::SyntheticScene;
use serde_json::{json, Value};

fn amodal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amodal")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generate bundles for `seeds` and return their directories.
fn scenes(root: &Path, first: u64, count: u64) -> Vec<PathBuf> {
    let out = amodal(&["synth", "gen", "--seed", &first.to_string(), "--count", &count.to_string(), "--out-dir", s(root)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (first..first + count).map(|n| root.join(format!("scene-{n:04}"))).collect()
}

fn target(bundle: &Path) -> String {
    SyntheticScene::load_bundle(bundle).unwrap().target
}

#[test]
fn complete_with_mock_scene_writes_rgba() {
    let tmp = tempfile::tempdir().unwrap();
    let b = &scenes(&tmp.path().join("scenes"), 7, 1)[0];
    let out_dir = tmp.path().join("run");
    let o = amodal(&[
        "complete",
        "--image",
        s(&b.join("rendered.png")),
        "--query",
        &target(b),
        "--out",
        s(&out_dir),
        "--mock-scene",
        s(b),
        "--debug",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["result.png", "amodal.png", "trace.json", "timings.json", "visible.png"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let trace: Value = serde_json::from_slice(&std::fs::read(out_dir.join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["status"], "completed");
    assert!(trace.get("timings").is_none());
}

#[test]
fn unknown_query_exits_3_without_result() {
    let tmp = tempfile::tempdir().unwrap();
    let b = &scenes(&tmp.path().join("scenes"), 3, 1)[0];
    let out_dir = tmp.path().join("run");
    let o = amodal(&["complete", "--image", s(&b.join("rendered.png")), "--query", "zeppelin", "--out", s(&out_dir), "--mock-scene", s(b)]);
    assert_eq!(code(&o), 3);
    assert!(!out_dir.join("result.png").exists());
    assert!(out_dir.join("trace.json").exists());
}

#[test]
fn unreachable_endpoint_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let b = &scenes(&tmp.path().join("scenes"), 3, 1)[0];
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let started = std::time::Instant::now();
    let o = amodal(&[
        "complete",
        "--image",
        s(&b.join("rendered.png")),
        "--query",
        "x",
        "--out",
        s(&tmp.path().join("run")),
        "--endpoint",
        &format!("http://127.0.0.1:{port}"),
        "--timeout",
        "2",
        "--retries",
        "1",
    ]);
    assert_eq!(code(&o), 1);
    assert!(started.elapsed().as_secs_f64() < 2.0 * 2.0 + 5.0);
    let err: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("run/error.json")).unwrap()).unwrap();
    assert_eq!(err["status"], "backend_unavailable");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&amodal(&["complete", "--query", "x"])), 2);
    assert_eq!(code(&amodal(&["frobnicate"])), 2);
    let tmp = tempfile::tempdir().unwrap();
    // neither provider source given
    let o = amodal(&["complete", "--image", "nope.png", "--query", "x", "--out", s(tmp.path())]);
    assert_eq!(code(&o), 2);
}

fn write_manifest(path: &Path, body: &Value) {
    std::fs::write(path, serde_json::to_vec_pretty(body).unwrap()).unwrap();
}

#[test]
fn batch_counts_and_worker_independence() {
    let tmp = tempfile::tempdir().unwrap();
    let bundles = scenes(&tmp.path().join("scenes"), 20, 10);
    let jobs: Vec<Value> = bundles
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let query = if i == 3 || i == 8 { "zeppelin".to_string() } else { target(b) };
            json!({
                "id": format!("job-{i:02}"),
                "image_path": b.join("rendered.png"),
                "query": query,
                "dataset": if i % 2 == 0 { "even" } else { "odd" },
                "mock_scene": b,
            })
        })
        .collect();
    let manifest = tmp.path().join("manifest.json");
    write_manifest(&manifest, &json!({ "jobs": jobs }));

    let mut summaries = Vec::new();
    for workers in ["1", "4"] {
        let out_dir = tmp.path().join(format!("out-{workers}"));
        let o = amodal(&["batch", "--manifest", s(&manifest), "--out-dir", s(&out_dir), "--workers", workers]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let summary = std::fs::read(out_dir.join("summary.json")).unwrap();
        let v: Value = serde_json::from_slice(&summary).unwrap();
        assert_eq!(v["counts"], json!({"completed": 8, "target_not_found": 2}));
        let ids: Vec<&str> = v["jobs"].as_array().unwrap().iter().map(|j| j["id"].as_str().unwrap()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        summaries.push(summary);
    }
    assert_eq!(summaries[0], summaries[1]);

    // the eval report sees the same failures
    let truth = tmp.path().join("truth");
    std::fs::create_dir_all(&truth).unwrap();
    for (i, b) in bundles.iter().enumerate() {
        let dst = truth.join(format!("job-{i:02}"));
        std::fs::create_dir_all(&dst).unwrap();
        std::fs::copy(b.join("scene.json"), dst.join("scene.json")).unwrap();
    }
    let report = tmp.path().join("report.json");
    let o = amodal(&["eval", "run", "--results-dir", s(&tmp.path().join("out-1")), "--truth-dir", s(&truth), "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["failures"]["overall"]["failures"], 2);
    assert_eq!(v["failures"]["overall"]["total"], 10);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("20.0%"), "{table}");
}

#[test]
fn invalid_manifests_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let b = &scenes(&tmp.path().join("scenes"), 1, 1)[0];
    let job = |id: &str| json!({"id": id, "image_path": b.join("rendered.png"), "query": "x"});
    let cases = [
        json!({"jobs": [], "mock_scene": b}),
        json!({"jobs": [job("a"), job("a")], "mock_scene": b}),
        json!({"jobs": [{"id": "a", "image_path": "/no/such.png", "query": "x"}], "mock_scene": b}),
        json!({"jobs": [job("a")]}),
        json!({"jobs": [job("../escape")], "mock_scene": b}),
    ];
    for (i, m) in cases.iter().enumerate() {
        let path = tmp.path().join(format!("m{i}.json"));
        write_manifest(&path, m);
        let o = amodal(&["batch", "--manifest", s(&path), "--out-dir", s(&tmp.path().join("out"))]);
        assert_eq!(code(&o), 2, "case {i}: {}", String::from_utf8_lossy(&o.stderr));
    }
    std::fs::write(tmp.path().join("bad.json"), "{ nope").unwrap();
    assert_eq!(code(&amodal(&["batch", "--manifest", s(&tmp.path().join("bad.json")), "--out-dir", s(&tmp.path().join("out"))])), 2);
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = scenes(&tmp.path().join("a"), 7, 3);
    let b = scenes(&tmp.path().join("b"), 7, 3);
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        for f in ["scene.json", "rendered.png"] {
            assert_eq!(std::fs::read(x.join(f)).unwrap(), std::fs::read(y.join(f)).unwrap());
        }
    }
    let o = amodal(&["synth", "gen", "--seed", "1", "--count", "2", "--boundary", "--out-dir", s(&tmp.path().join("c"))]);
    assert_eq!(code(&o), 0);
}

#[test]
fn kappa_prints_three_decimals() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("ratings.csv");
    // rows (3,0) and (0,3)
    std::fs::write(&csv, "image_id,rater_id,chosen_method\ni1,r1,ours\ni1,r2,ours\ni1,r3,ours\ni2,r1,base\ni2,r2,base\ni2,r3,base\n").unwrap();
    let o = amodal(&["eval", "kappa", "--ratings", s(&csv)]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "1.000");

    // rows (2,1) and (1,2)
    std::fs::write(&csv, "i1,r1,a\ni1,r2,a\ni1,r3,b\ni2,r1,b\ni2,r2,b\ni2,r3,a\n").unwrap();
    let o = amodal(&["eval", "kappa", "--ratings", s(&csv)]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "-0.333");

    std::fs::write(&csv, "i1,r1\n").unwrap();
    assert_eq!(code(&amodal(&["eval", "kappa", "--ratings", s(&csv)])), 2);
}

struct Serve(Child);

impl Drop for Serve {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(bundle: &Path) -> (Serve, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_amodal"))
        .args(["mock-serve", "--scene-dir", s(bundle), "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("serving on ").expect("announces its address").to_string();
    (Serve(child), url)
}

#[test]
fn mock_serve_matches_in_process_run() {
    let tmp = tempfile::tempdir().unwrap();
    let b = &scenes(&tmp.path().join("scenes"), 12, 1)[0];
    let (_server, url) = serve(b);
    let image = b.join("rendered.png");
    let query = target(b);
    let local = tmp.path().join("local");
    let wired = tmp.path().join("wired");
    let o = amodal(&["complete", "--image", s(&image), "--query", &query, "--out", s(&local), "--mock-scene", s(b)]);
    assert_eq!(code(&o), 0);
    let o = amodal(&["complete", "--image", s(&image), "--query", &query, "--out", s(&wired), "--endpoint", &url]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["result.png", "amodal.png", "trace.json"] {
        assert_eq!(std::fs::read(local.join(f)).unwrap(), std::fs::read(wired.join(f)).unwrap(), "{f} differs");
    }
}
