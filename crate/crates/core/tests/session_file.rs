mod common;

use std::path::Path;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unbend_core::*;

fn volume_files(dir: &Path) -> VolumeRef {
    let vol = Volume::from_fn([6, 5, 4], unit(), Vec3::zeros(), |i, j, k| (i + j + k) as f64 / 12.0);
    let (data, meta) = (dir.join("vol.raw"), dir.join("vol.json"));
    export_volume(&vol, &data, &meta).unwrap();
    VolumeRef::from_paths(&data, &meta).unwrap()
}

/// Session with awkward floats and a few random edits.
fn edited_session(dir: &Path, seed: u64) -> Sess {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec3> = (0..5)
        .map(|i| v(rng.gen::<f64>() / 3.0, 0.1 * i as f64 + rng.gen::<f64>(), 1.7 * i as f64))
        .collect();
    let ends = Endpoints::new(vec![pts[0], pts[4]]).unwrap();
    let mut s = Sess::new(volume_files(dir), ends, rig_through(&pts, std::f64::consts::PI));
    for _ in 0..12 {
        let n = s.rig().len();
        let i = rng.gen_range(0..n);
        let edit = match rng.gen_range(0..5) {
            0 => Edit::InsertAt { t: rng.gen_range(0.01..0.99) * s.rig().total_length() },
            1 if n > 3 => Edit::Remove { i },
            2 => Edit::Rotate { i, angle: rng.gen_range(-7.0..7.0) },
            3 => Edit::SetCenter { i, dx: rng.gen_range(-0.3..0.3), dy: rng.gen_range(-0.3..0.3) },
            _ => Edit::SetExtent { i, rx: rng.gen_range(0.1..5.0), ry: 1.0 / 3.0 },
        };
        let _ = s.apply_edit(edit);
    }
    s
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let s = edited_session(dir.path(), seed);
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        s.save(&a).unwrap();
        let loaded = Sess::load(&a).unwrap();
        loaded.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        // floats come back bit for bit
        assert_eq!(loaded, s);
    }
}

#[test]
fn replaying_the_log_reproduces_the_rig() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 10..15 {
        let s = edited_session(dir.path(), seed);
        let LogEvent::Initialize { mut rig } = s.edit_log()[0].event.clone() else {
            panic!("log starts with the initial rig");
        };
        // replay by hand, independently of Session::replay
        for entry in &s.edit_log()[1..] {
            match &entry.event {
                LogEvent::Edit(e) => rig = rig.apply_edit(e).unwrap(),
                LogEvent::Initialize { rig: r } => rig = r.clone(),
            }
        }
        assert!(rig_distance(&rig, s.rig()) <= 1e-9);
        assert!(rig_distance(&s.replay().unwrap(), s.rig()) <= 1e-9);
    }
}

#[test]
fn file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let text = edited_session(dir.path(), 3).to_canonical_json();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["edit_log", "endpoints", "format_version", "rig", "volume_ref"]);
    assert_eq!(json["format_version"], 1);
    assert!(json["edit_log"][0]["event"]["initialize"]["rig"]["keyframes"].is_array());
    assert!(json["edit_log"][0]["timestamp_ms"].is_u64());
}

fn tamper(text: &str, f: impl FnOnce(&mut serde_json::Value)) -> String {
    let mut json: serde_json::Value = serde_json::from_str(text).unwrap();
    f(&mut json);
    json.to_string()
}

#[test]
fn rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let text = edited_session(dir.path(), 4).to_canonical_json();

    let newer = tamper(&text, |j| j["format_version"] = 2.into());
    assert!(matches!(Sess::from_json_str(&newer), Err(Error::VersionUnsupported(2))));

    let skewed = tamper(&text, |j| j["rig"]["keyframes"][1]["R"][0][0] = 1.5.into());
    assert!(matches!(Sess::from_json_str(&skewed), Err(Error::SchemaInvalid(_))));

    let moved = tamper(&text, |j| {
        let x = j["rig"]["keyframes"][0]["e"][0].as_f64().unwrap();
        j["rig"]["keyframes"][0]["e"][0] = (x + 1e-6).into();
    });
    assert!(matches!(Sess::from_json_str(&moved), Err(Error::SchemaInvalid(_))));

    let extra = tamper(&text, |j| j["notes"] = "hi".into());
    assert!(matches!(Sess::from_json_str(&extra), Err(Error::SchemaInvalid(_))));

    let odd = tamper(&text, |j| j["endpoints"]["points"].as_array_mut().unwrap().truncate(1));
    assert!(matches!(Sess::from_json_str(&odd), Err(Error::SchemaInvalid(_))));

    assert!(matches!(Sess::from_json_str("[1, 2]"), Err(Error::SchemaInvalid(_))));
    assert!(matches!(Sess::from_json_str("{"), Err(Error::SchemaInvalid(_))));
}

#[test]
fn changed_volume_files_warn_but_load() {
    let dir = tempfile::tempdir().unwrap();
    let s = edited_session(dir.path(), 5);
    assert!(s.check_provenance().is_empty());
    let path = dir.path().join("s.json");
    s.save(&path).unwrap();
    std::fs::write(dir.path().join("vol.raw"), [0u8; 480]).unwrap();
    let loaded = Sess::load(&path).unwrap();
    let warnings = loaded.check_provenance();
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].contains("vol.raw"));
    std::fs::remove_file(dir.path().join("vol.json")).unwrap();
    assert_eq!(Sess::load(&path).unwrap().check_provenance().len(), 2);
}

#[test]
fn failed_edits_leave_the_session_alone() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = edited_session(dir.path(), 6);
    let before = (s.rig().clone(), s.edit_log().len());
    assert!(s.apply_edit(Edit::Remove { i: 999 }).is_err());
    assert!(s.apply_edit(Edit::SetExtent { i: 0, rx: 0.0, ry: 1.0 }).is_err());
    assert_eq!((s.rig().clone(), s.edit_log().len()), before);
}

#[test]
fn reinitialize_starts_a_new_replay_segment() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = edited_session(dir.path(), 7);
    let fresh = z_rig(Vec3::zeros(), 9.0, 2.0);
    let ends = rig_endpoints(&fresh).unwrap();
    s.reinitialize(ends, fresh.clone());
    s.apply_edit(Edit::Rotate { i: 1, angle: 0.25 }).unwrap();
    let loaded = Sess::from_json_str(&s.to_canonical_json()).unwrap();
    assert_eq!(loaded.rig(), &fresh.apply_edit(&Edit::Rotate { i: 1, angle: 0.25 }).unwrap());
}
