//! Line-delimited dataset files.
//!
//! The first line is a header record; every following line holds one
//! sequence:
//!
//! ```text
//! {"format":"stpp-dataset","version":1,"kernel":"1d-nonstat","mu":0.5,...}
//! {"T":100.0,"S":[],"events":[[0.53],[2.1],...]}
//! {"T":50.0,"S":[[-1.0,1.0],[-1.0,1.0]],"events":[[0.2,0.1,-0.4],...]}
//! ```
//!
//! An event is `[t, s_1, .., s_d]` followed by the mark index when the
//! header declares `num_marks > 0`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use crate::error::{Error, Result};
use crate::kernel::{Event, EventSequence};

pub const FORMAT: &str = "stpp-dataset";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub kernel: Option<String>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub spatial_dim: usize,
    #[serde(default)]
    pub num_marks: usize,
    pub horizon: f64,
    #[serde(default)]
    pub bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub lambda_bar: Option<f64>,
    pub sequences: usize,
}

impl DatasetMeta {
    pub fn new(spatial_dim: usize, horizon: f64, bounds: Vec<[f64; 2]>) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            kernel: None,
            mu: None,
            seed: None,
            spatial_dim,
            num_marks: 0,
            horizon,
            bounds,
            lambda_bar: None,
            sequences: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub sequences: Vec<EventSequence>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(rename = "S")]
    bounds: Vec<[f64; 2]>,
    events: Vec<Vec<Value>>,
}

fn num(x: f64) -> Result<Value> {
    Number::from_f64(x)
        .map(Value::Number)
        .ok_or_else(|| Error::Domain(format!("non-finite value {x} cannot be stored")))
}

impl Dataset {
    pub fn new(mut meta: DatasetMeta, sequences: Vec<EventSequence>) -> Result<Self> {
        meta.sequences = sequences.len();
        let ds = Self { meta, sequences };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn total_events(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.meta.format != FORMAT {
            return Err(Error::Parse(format!("unknown dataset format '{}'", self.meta.format)));
        }
        if self.meta.version != VERSION {
            return Err(Error::Parse(format!("unsupported dataset version {}", self.meta.version)));
        }
        if self.meta.sequences != self.sequences.len() {
            return Err(Error::Parse(format!(
                "header announces {} sequences, found {}",
                self.meta.sequences,
                self.sequences.len()
            )));
        }
        for (k, s) in self.sequences.iter().enumerate() {
            if s.spatial_dim() != self.meta.spatial_dim {
                return Err(Error::Parse(format!("sequence {k} has the wrong spatial dimension")));
            }
            for e in &s.events {
                match (e.mark, self.meta.num_marks) {
                    (None, 0) => {}
                    (Some(m), n) if m < n => {}
                    _ => return Err(Error::Parse(format!("sequence {k} has an invalid mark"))),
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        self.validate()?;
        let d = self.meta.spatial_dim;
        let mut out = serde_json::to_string(&self.meta)?;
        out.push('\n');
        for s in &self.sequences {
            let events = s
                .events
                .iter()
                .map(|e| {
                    let mut row = vec![num(e.t)?];
                    for x in &e.s[..d] {
                        row.push(num(*x)?);
                    }
                    if let Some(m) = e.mark {
                        row.push(Value::from(m as u64));
                    }
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()?;
            let rec = Record { horizon: s.horizon, bounds: s.bounds.clone(), events };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))?;
        let meta: DatasetMeta = serde_json::from_str(head)
            .map_err(|e| Error::Parse(format!("bad header: {e}")))?;
        let d = meta.spatial_dim;
        let marked = meta.num_marks > 0;
        let width = 1 + d + usize::from(marked);
        let mut sequences = Vec::new();
        for (ln, line) in lines {
            let rec: Record = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1)))?;
            let events = rec
                .events
                .iter()
                .map(|row| {
                    if row.len() != width {
                        return Err(Error::Parse(format!(
                            "line {}: event has {} fields, expected {width}",
                            ln + 1,
                            row.len()
                        )));
                    }
                    let f = |v: &Value| {
                        v.as_f64()
                            .ok_or_else(|| Error::Parse(format!("line {}: non-numeric field", ln + 1)))
                    };
                    let mut e = Event::temporal(f(&row[0])?);
                    for a in 0..d {
                        e.s[a] = f(&row[1 + a])?;
                    }
                    if marked {
                        let m = row[width - 1]
                            .as_u64()
                            .ok_or_else(|| Error::Parse(format!("line {}: mark is not an index", ln + 1)))?;
                        e.mark = Some(m as usize);
                    }
                    Ok(e)
                })
                .collect::<Result<Vec<_>>>()?;
            let seq = EventSequence::new(events, rec.horizon, rec.bounds)
                .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1)))?;
            sequences.push(seq);
        }
        let ds = Self { meta, sequences };
        ds.validate()?;
        Ok(ds)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}
