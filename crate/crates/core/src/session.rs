//! Editing sessions: volume provenance, endpoints, rig and the log of applied edits.
//!
//! Files are canonical JSON: object keys sorted, floats written with 17 significant digits,
//! so saving the same session twice yields identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rig::{DeformationRig, Edit};
use crate::scalar::Real;
use crate::skeleton::EndpointSelection;

pub const FORMAT_VERSION: u64 = 1;
/// Tolerance for the stored rig against the replayed edit log.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

const TOP_LEVEL_KEYS: [&str; 5] = ["edit_log", "endpoints", "format_version", "rig", "volume_ref"];

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeRef {
    pub data_path: String,
    pub meta_path: String,
    pub data_sha256: String,
    pub meta_sha256: String,
}

impl VolumeRef {
    /// Hashes both files.
    pub fn from_paths(data_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<Self> {
        let (data, meta) = (data_path.as_ref(), meta_path.as_ref());
        Ok(Self {
            data_path: data.to_string_lossy().into_owned(),
            meta_path: meta.to_string_lossy().into_owned(),
            data_sha256: sha256_file(data)?,
            meta_sha256: sha256_file(meta)?,
        })
    }

    /// Mismatched or unreadable files, one message each; empty when the references hold.
    pub fn check(&self) -> Vec<String> {
        [
            (&self.data_path, &self.data_sha256),
            (&self.meta_path, &self.meta_sha256),
        ]
        .into_iter()
        .filter_map(|(path, expected)| match sha256_file(Path::new(path)) {
            Ok(h) if &h == expected => None,
            Ok(h) => Some(format!("{path}: sha256 {h} differs from recorded {expected}")),
            Err(e) => Some(e.to_string()),
        })
        .collect()
    }
}

/// One entry of the edit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound(serialize = "T: Real", deserialize = "T: Real"))]
pub enum LogEvent<T> {
    /// The rig was (re)computed from scratch, e.g. after new endpoints.
    Initialize { rig: DeformationRig<T> },
    Edit(Edit),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct LogEntry<T> {
    pub timestamp_ms: u64,
    pub event: LogEvent<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Session<T> {
    pub format_version: u64,
    pub volume_ref: VolumeRef,
    pub endpoints: EndpointSelection<T>,
    rig: DeformationRig<T>,
    edit_log: Vec<LogEntry<T>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl<T: Real> Session<T> {
    pub fn new(volume_ref: VolumeRef, endpoints: EndpointSelection<T>, rig: DeformationRig<T>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            volume_ref,
            endpoints,
            edit_log: vec![LogEntry {
                timestamp_ms: now_ms(),
                event: LogEvent::Initialize { rig: rig.clone() },
            }],
            rig,
        }
    }

    pub fn rig(&self) -> &DeformationRig<T> {
        &self.rig
    }

    pub fn edit_log(&self) -> &[LogEntry<T>] {
        &self.edit_log
    }

    /// Applies `edit` and appends it to the log; on error the session is unchanged.
    pub fn apply_edit(&mut self, edit: Edit) -> Result<&DeformationRig<T>> {
        self.rig = self.rig.apply_edit(&edit)?;
        self.edit_log.push(LogEntry {
            timestamp_ms: now_ms(),
            event: LogEvent::Edit(edit),
        });
        Ok(&self.rig)
    }

    /// Replaces endpoints and rig, logging the new rig as a fresh starting point.
    pub fn reinitialize(&mut self, endpoints: EndpointSelection<T>, rig: DeformationRig<T>) {
        self.endpoints = endpoints;
        self.edit_log.push(LogEntry {
            timestamp_ms: now_ms(),
            event: LogEvent::Initialize { rig: rig.clone() },
        });
        self.rig = rig;
    }

    /// Rig obtained by replaying the edit log from its first entry.
    pub fn replay(&self) -> Result<DeformationRig<T>> {
        let mut rig: Option<DeformationRig<T>> = None;
        for (n, entry) in self.edit_log.iter().enumerate() {
            rig = Some(match (&entry.event, rig) {
                (LogEvent::Initialize { rig }, _) => rig.clone(),
                (LogEvent::Edit(edit), Some(r)) => r.apply_edit(edit)?,
                (LogEvent::Edit(_), None) => {
                    return Err(Error::SchemaInvalid(format!("edit_log entry {n} precedes any initialize entry")))
                }
            });
        }
        rig.ok_or_else(|| Error::SchemaInvalid("edit_log is empty".into()))
    }

    /// Provenance warnings for the referenced volume files.
    pub fn check_provenance(&self) -> Vec<String> {
        self.volume_ref.check()
    }

    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("session serializes");
        let mut out = String::new();
        write_canonical(&value, &mut out);
        out.push('\n');
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_canonical_json()).map_err(|e| Error::io(path, e))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::SchemaInvalid(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::SchemaInvalid("session must be a JSON object".into()))?;
        match obj.get("format_version").map(|v| v.as_u64()) {
            Some(Some(FORMAT_VERSION)) => {}
            Some(Some(v)) => return Err(Error::VersionUnsupported(v)),
            _ => return Err(Error::SchemaInvalid("format_version must be a non-negative integer".into())),
        }
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        if keys != TOP_LEVEL_KEYS {
            return Err(Error::SchemaInvalid(format!("top-level keys {keys:?}, expected {TOP_LEVEL_KEYS:?}")));
        }
        let session: Self = serde_json::from_value(value).map_err(|e| Error::SchemaInvalid(e.to_string()))?;
        EndpointSelection::new(session.endpoints.points.clone()).map_err(|e| Error::SchemaInvalid(e.to_string()))?;
        let replayed = session
            .replay()
            .map_err(|e| Error::SchemaInvalid(format!("edit_log does not replay: {e}")))?;
        let gap = rig_distance(&replayed, &session.rig);
        if gap > REPLAY_TOLERANCE {
            return Err(Error::SchemaInvalid(format!("stored rig differs from replayed edit_log by {gap:e}")));
        }
        Ok(session)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

/// Largest coordinate difference between two rigs; infinite if their sizes differ.
pub fn rig_distance<T: Real>(a: &DeformationRig<T>, b: &DeformationRig<T>) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.keyframes()
        .iter()
        .zip(b.keyframes())
        .map(|(x, y)| {
            let dp = (x.position - y.position).max_abs();
            let df = x.frame.max_abs_diff(&y.frame);
            let de = (x.extent[0] - y.extent[0]).abs().max((x.extent[1] - y.extent[1]).abs());
            dp.max(df).max(de).as_f64()
        })
        .fold(0.0, f64::max)
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_u64() {
                write!(out, "{i}").unwrap();
            } else if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else {
                let f = n.as_f64().expect("finite float");
                write!(out, "{f:.16e}").unwrap();
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push('{');
            for (i, (k, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push(':');
                write_canonical(item, out);
            }
            out.push('}');
        }
    }
}
