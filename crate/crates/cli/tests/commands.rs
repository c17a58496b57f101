use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;
use unbend_core::{load_volume, make_bent_cylinder, normalized_l2, CylinderSpec, Rig, Sess, Volume};

fn unbend(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unbend")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn load(dir: &Path, stem: &str) -> Volume {
    load_volume(dir.join(format!("{stem}.raw")), dir.join(format!("{stem}.json"))).unwrap()
}

fn small_synth(dir: &Path) {
    let out = unbend(&["synth", "--dims", "40,40,64", "--radius", "4", "--amplitude", "5", "--periods", "1", "--out", path(dir)]);
    stdout_json(&out);
}

#[test]
fn eval_of_a_volume_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let (d, m) = (dir.path().join("bent.raw"), dir.path().join("bent.json"));
    let out = unbend(&["eval", path(&d), path(&m), path(&d), path(&m)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), r#"{"normalized_l2":0.0}"#);
}

#[test]
fn synth_artifacts_match_a_regenerated_cylinder() {
    let dir = tempfile::tempdir().unwrap();
    let out = unbend(&["synth", "--dims", "128", "--radius", "8", "--amplitude", "20", "--periods", "1.5", "--out", path(dir.path())]);
    let record = stdout_json(&out);
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("spec.json")).unwrap()).unwrap();
    assert_eq!(record, on_disk);

    let dims: [usize; 3] = serde_json::from_value(record["dims"].clone()).unwrap();
    let f = |k: &str| record[k].as_f64().unwrap();
    let spec = CylinderSpec::fitted(dims, f("radius"), f("amplitude"), f("periods")).unwrap();
    assert_eq!(spec.length, f("length"));
    let gt = make_bent_cylinder::<f64>(&spec).unwrap();

    let rig: Rig = serde_json::from_str(&std::fs::read_to_string(dir.path().join("rig.json")).unwrap()).unwrap();
    assert_eq!(rig, gt.true_rig);
    assert_eq!(rig.total_length(), f("axial_length"));
    for (stem, truth) in [("bent", &gt.bent), ("straight", &gt.straight)] {
        let v = load(dir.path(), stem);
        assert_eq!((v.dims, v.spacing, v.origin), (truth.dims, truth.spacing, truth.origin), "{stem}");
        let worst = v.data.iter().zip(&truth.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-7, "{stem}: {worst}");
    }
}

#[test]
fn explicit_default_flags_change_nothing() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let d = dir.path();
    let (data, meta, ends) = (d.join("bent.raw"), d.join("bent.json"), d.join("endpoints.json"));
    let (a, b) = (d.join("a"), d.join("b"));
    let implicit = stdout_json(&unbend(&["straighten", path(&data), path(&meta), path(&ends), "--out", path(&a)]));
    let explicit = stdout_json(&unbend(&[
        "straighten", path(&data), path(&meta), path(&ends), "--tau", "0.5", "--k", "100", "--s", "50", "--r", "10", "--out",
        path(&b),
    ]));
    assert_eq!(implicit["keyframes"], explicit["keyframes"]);
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a.join("straight.raw")), read(&b.join("straight.raw")));

    let session = Sess::load(a.join("session.json")).unwrap();
    assert!(session.check_provenance().is_empty());
    assert_eq!(session.rig().len() as u64, implicit["keyframes"].as_u64().unwrap());

    // the straightened tube lines up with the generator's straight counterpart
    let out = load(&a, "straight");
    let mid = out.get(out.dims[0] / 2, out.dims[1] / 2, out.dims[2] / 2);
    assert!(mid > 0.9, "{mid}");
}

#[test]
fn help_lists_the_defaults() {
    let out = unbend(&["straighten", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in ["--k <K>", "[default: 100]", "[default: 50]", "[default: 10]", "[default: 0.5]", "[default: 400000]"] {
        assert!(help.contains(flag), "missing {flag} in\n{help}");
    }
}

#[test]
fn skeleton_runs_between_the_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let d = dir.path();
    let out = unbend(&["skeleton", path(&d.join("bent.raw")), path(&d.join("bent.json")), path(&d.join("endpoints.json"))]);
    let skeleton = stdout_json(&out);
    let ends: Value = serde_json::from_str(&std::fs::read_to_string(d.join("endpoints.json")).unwrap()).unwrap();
    let verts = skeleton["vertices"].as_array().unwrap();
    assert_eq!(verts.len(), skeleton["frames"].as_array().unwrap().len());
    let dist = |a: &Value, b: &Value| {
        (0..3)
            .map(|i| (a[i].as_f64().unwrap() - b[i].as_f64().unwrap()).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    assert!(dist(&verts[0], &ends["points"][0]) < 3.0);
    assert!(dist(verts.last().unwrap(), &ends["points"][1]) < 3.0);
}

#[test]
fn bend_reproduces_the_synthetic_bent_volume() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let d = dir.path();
    let out_dir = d.join("rebent");
    stdout_json(&unbend(&[
        "bend",
        path(&d.join("straight.raw")),
        path(&d.join("straight.json")),
        path(&d.join("rig.json")),
        "--like",
        path(&d.join("bent.json")),
        "--out",
        path(&out_dir),
    ]));
    let (ours, theirs) = (load(&out_dir, "bent"), load(d, "bent"));
    assert!(normalized_l2(&ours, &theirs).unwrap() < 1e-6);

    let boxed = d.join("boxed");
    let reply = stdout_json(&unbend(&[
        "bend",
        path(&d.join("straight.raw")),
        path(&d.join("straight.json")),
        path(&d.join("rig.json")),
        "--out",
        path(&boxed),
    ]));
    let v = load(&boxed, "bent");
    assert_eq!(serde_json::to_value(v.dims).unwrap(), reply["dims"]);
    let mass = |v: &Volume| v.data.iter().sum::<f64>() * v.spacing.x * v.spacing.y * v.spacing.z;
    let (a, b) = (mass(&v), mass(&theirs));
    assert!((a - b).abs() < 1e-3 * b, "{a} vs {b}");
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &[][..],
        &["frobnicate"][..],
        &["eval", "a"][..],
        &["synth", "--out", "x", "--dims", "0"][..],
        &["synth", "--out", "x", "--bogus", "1"][..],
        &["straighten", "a", "b", "c", "--out", "o", "--k", "many"][..],
    ] {
        let out = unbend(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_unbend"))
        .args(["eval", "a", "b", "c", "d"])
        .env("UNBEND_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.raw");
    let out = unbend(&["eval", path(&missing), path(&missing), path(&missing), path(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    small_synth(dir.path());
    let d = dir.path();
    let bad = d.join("odd.json");
    std::fs::write(&bad, "[[1, 2, 3]]").unwrap();
    let out = unbend(&["skeleton", path(&d.join("bent.raw")), path(&d.join("bent.json")), path(&bad)]);
    assert_eq!(out.status.code(), Some(1));

    let out = unbend(&["synth", "--dims", "16", "--radius", "8", "--amplitude", "20", "--out", path(&d.join("tiny"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn thread_cap_gives_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let d = dir.path();
    let run = |threads: &str, name: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_unbend"))
            .args(["straighten", path(&d.join("bent.raw")), path(&d.join("bent.json")), path(&d.join("endpoints.json"))])
            .args(["--out", path(&d.join(name))])
            .env("UNBEND_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        std::fs::read(d.join(name).join("straight.raw")).unwrap()
    };
    assert_eq!(run("1", "one"), run("3", "three"));
}

fn http_get(port: u16, target: &str) -> Option<(String, String)> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(10))).ok()?;
    write!(s, "GET {target} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut text = String::new();
    s.read_to_string(&mut text).ok()?;
    let (head, body) = text.split_once("\r\n\r\n")?;
    Some((head.lines().next()?.to_string(), body.to_string()))
}

#[test]
fn serve_answers_rig_requests() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let d = dir.path();
    let out = d.join("run");
    stdout_json(&unbend(&[
        "straighten", path(&d.join("bent.raw")), path(&d.join("bent.json")), path(&d.join("endpoints.json")), "--out", path(&out),
    ]));
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_unbend"))
        .args(["serve", path(&out.join("session.json")), "--bind", &format!("127.0.0.1:{port}")])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(60);
    let reply = loop {
        if let Some(r) = http_get(port, "/rig") {
            break Some(r);
        }
        if Instant::now() > deadline || child.try_wait().unwrap().is_some() {
            break None;
        }
        std::thread::sleep(Duration::from_millis(100));
    };
    let _ = child.kill();
    let _ = child.wait();
    let (status, body) = reply.expect("service did not answer");
    assert!(status.contains("200"), "{status}");
    // chunked or plain, the rig object is the only JSON payload in the body
    let start = body.find('{').unwrap();
    let end = body.rfind('}').unwrap();
    let rig: Rig = serde_json::from_str(&body[start..=end]).unwrap();
    assert_eq!(&rig, Sess::load(out.join("session.json")).unwrap().rig());
}
