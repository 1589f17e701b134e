//! Labeled collections of event files described by a JSON manifest.

use crate::ann::Sample;
use crate::events::{frame_aggregate, load_events, DatasetStats, EventFormat, EventStream};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: usize,
    pub entries: Vec<ManifestEntry>,
    /// Whatever produced the dataset, echoed verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
    #[serde(skip)]
    root: PathBuf,
}

impl Manifest {
    pub fn new(classes: usize, entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Self {
        Manifest {
            classes,
            entries,
            generator: None,
            root: root.into(),
        }
    }

    /// Reads a manifest file, or `manifest.json` inside a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let joined;
        let path = if path.is_dir() {
            joined = path.join("manifest.json");
            joined.as_path()
        } else {
            path
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
            message: e.to_string(),
        })?;
        if m.classes == 0 {
            return Err(Error::validation(format!("{}: manifest declares no classes", path.display())));
        }
        if let Some(e) = m.entries.iter().find(|e| e.label >= m.classes) {
            return Err(Error::validation(format!(
                "{}: label {} of {} is outside 0..{}",
                path.display(),
                e.label,
                e.path.display(),
                m.classes
            )));
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Loads every stream of `split`, labeled.
    pub fn load_split(&self, split: Split) -> Result<Vec<EventStream>> {
        self.entries(split)
            .map(|e| {
                let path = self.resolve(e);
                Ok(load_events(&path, EventFormat::from_path(&path))?.with_label(e.label))
            })
            .collect()
    }
}

/// Frame-aggregated samples for training and statistics.
pub fn to_samples(streams: &[EventStream], frames: usize, stats: &DatasetStats) -> Result<Vec<Sample>> {
    streams
        .iter()
        .map(|s| {
            let label = s
                .label()
                .ok_or_else(|| Error::validation("stream has no label"))?;
            Ok(Sample {
                frames: frame_aggregate(s, frames, stats)?.frames,
                label,
            })
        })
        .collect()
}
