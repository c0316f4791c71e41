//! Line-delimited dataset manifests.
//!
//! The first line is a header `{"format":"act-manifest","version":1}`; every
//! following non-empty line is one [`ClipRecord`] as JSON.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{synthesize_event_clip, SoundEvent, Waveform};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
const MANIFEST_FORMAT: &str = "act-manifest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ClipSource {
    /// Path to a 16-bit PCM WAV file, relative to the manifest directory
    /// unless absolute.
    Wav(PathBuf),
    /// Rendered on load from an event list.
    Synthetic { seed: u64, events: Vec<SoundEvent> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub id: String,
    pub source: ClipSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub captions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ClipRecord>,
    /// Directory that relative WAV paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ClipRecord>, base_dir: PathBuf) -> Result<Self> {
        let m = DatasetManifest { records, base_dir };
        m.check_unique_ids()?;
        Ok(m)
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if r.id.is_empty() {
                return Err(Error::validation("manifest record with an empty clip id"));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::validation(format!("duplicate clip id {}", r.id)));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
        };
        let mut out = serde_json::to_string(&header).expect("header serialises");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialises"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::format(origin, "empty manifest: missing header line"))?;
        let header: Header =
            serde_json::from_str(first).map_err(|e| Error::format(origin, format!("bad manifest header: {e}")))?;
        if header.format != MANIFEST_FORMAT {
            return Err(Error::format(origin, format!("not an act manifest (format {:?})", header.format)));
        }
        if header.version != MANIFEST_VERSION {
            return Err(Error::format(
                origin,
                format!(
                    "unsupported manifest version {}; this build reads version {MANIFEST_VERSION}",
                    header.version
                ),
            ));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let r: ClipRecord =
                serde_json::from_str(line).map_err(|e| Error::format(origin, format!("line {}: {e}", i + 1)))?;
            records.push(r);
        }
        let base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(records, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, id: &str) -> Option<&ClipRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Records sorted by clip id.
    pub fn sorted(&self) -> Vec<&ClipRecord> {
        let mut v: Vec<&ClipRecord> = self.records.iter().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    /// Every record must carry 1 to 5 captions.
    pub fn require_captions(&self) -> Result<()> {
        for r in &self.records {
            if r.captions.is_empty() || r.captions.len() > 5 {
                return Err(Error::validation(format!(
                    "clip {} has {} captions; caption records need 1 to 5",
                    r.id,
                    r.captions.len()
                )));
            }
        }
        Ok(())
    }

    /// Every record must carry a tag list.
    pub fn require_tags(&self) -> Result<()> {
        match self.records.iter().find(|r| r.tags.is_none()) {
            Some(r) => Err(Error::validation(format!("clip {} has no tags; tagging records need them", r.id))),
            None => Ok(()),
        }
    }

    /// Sorted distinct tag names across the manifest.
    pub fn tag_names(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .records
            .iter()
            .flat_map(|r| r.tags.iter().flatten().map(String::as_str))
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn waveform(&self, record: &ClipRecord) -> Result<Waveform> {
        match &record.source {
            ClipSource::Wav(p) => {
                let path = if p.is_absolute() { p.clone() } else { self.base_dir.join(p) };
                crate::audio::read_wav(&path)
            }
            ClipSource::Synthetic { seed, events } => Ok(synthesize_event_clip(events, *seed)?.waveform),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::EventKind;

    fn sample() -> DatasetManifest {
        DatasetManifest::new(
            vec![
                ClipRecord {
                    id: "b".into(),
                    source: ClipSource::Wav("clips/b.wav".into()),
                    captions: vec!["a tone sounds".into()],
                    tags: Some(vec!["tone".into()]),
                },
                ClipRecord {
                    id: "a".into(),
                    source: ClipSource::Synthetic {
                        seed: 3,
                        events: vec![SoundEvent {
                            onset: 1.0,
                            duration: 2.0,
                            kind: EventKind::NoiseBurst,
                        }],
                    },
                    captions: vec!["a burst of noise".into()],
                    tags: None,
                },
            ],
            PathBuf::new(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let back = DatasetManifest::parse(&m.to_jsonl(), Path::new("m.jsonl")).unwrap();
        assert_eq!(back.records, m.records);
        assert_eq!(back.sorted()[0].id, "a");
        assert_eq!(back.tag_names(), vec!["tone".to_string()]);
        assert!(back.require_tags().is_err());
        assert!(back.require_captions().is_ok());
    }

    #[test]
    fn newer_version_rejected() {
        let text = sample().to_jsonl().replacen("\"version\":1", "\"version\":2", 1);
        let err = DatasetManifest::parse(&text, Path::new("m.jsonl")).unwrap_err();
        assert!(err.to_string().contains("unsupported manifest version 2"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut m = sample();
        m.records[1].id = "b".into();
        let text = m.to_jsonl();
        assert!(DatasetManifest::parse(&text, Path::new("m.jsonl")).is_err());
    }
}
