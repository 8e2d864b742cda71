use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cafnet_autograd::write_atomic;
use serde::{Deserialize, Serialize};

use super::{ClassLabel, ClipLabel};
use crate::error::{CoreError, Result};

pub const MANIFEST_HEADER: &str = "path,label,start_norm,end_norm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Stable tag mixed into per-clip seeds.
    pub fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub label: ClipLabel,
}

/// A labelled list of clips. The CSV holds the entries; split and seed live
/// in a `<stem>.meta.json` sidecar next to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
    pub master_seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct ManifestMeta {
    split: Split,
    master_seed: Option<u64>,
}

fn meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

impl Manifest {
    /// Directory that entry paths are relative to.
    pub fn resolve(manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&entry.path)
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for e in &self.entries {
            c[e.label.class.index()] += 1;
        }
        c
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if e.path.is_empty() || e.path.contains([',', '\n', '\r', '"']) {
                return Err(CoreError::Invalid(format!("manifest path {:?} cannot be written as a CSV field", e.path)));
            }
            if !seen.insert(&e.path) {
                return Err(CoreError::Invalid(format!("duplicate manifest path {:?}", e.path)));
            }
            match e.label.boundaries {
                Some((s, t)) => writeln!(out, "{},{},{s},{t}", e.path, e.label.class.index()),
                None => writeln!(out, "{},{},,", e.path, e.label.class.index()),
            }
            .expect("writing to a String");
        }
        Ok(out)
    }

    pub fn parse_csv(text: &str, split: Split, master_seed: Option<u64>) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            Some((_, h)) => return Err(format!("bad header {h:?}, expected {MANIFEST_HEADER:?}")),
            None => return Err("empty manifest".into()),
        }
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in lines {
            let row = n + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(format!("line {row}: expected 4 columns, found {}", fields.len()));
            }
            let class = fields[1]
                .parse::<usize>()
                .ok()
                .and_then(ClassLabel::from_index)
                .ok_or_else(|| format!("line {row}: label {:?} not in {{0,1,2}}", fields[1]))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| format!("line {row}: bad number {s:?}"));
            let boundaries = match (fields[2], fields[3]) {
                ("", "") => None,
                (a, b) if !a.is_empty() && !b.is_empty() => Some((num(a)?, num(b)?)),
                _ => return Err(format!("line {row}: boundary fields must both be present or both empty")),
            };
            let label = ClipLabel::new(class, boundaries).map_err(|e| format!("line {row}: {e}"))?;
            if fields[0].is_empty() || !seen.insert(fields[0].to_string()) {
                return Err(format!("line {row}: empty or duplicate path {:?}", fields[0]));
            }
            entries.push(ManifestEntry { path: fields[0].to_string(), label });
        }
        Ok(Self { entries, split, master_seed })
    }
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let csv = manifest.to_csv()?;
    let meta = serde_json::to_string_pretty(&ManifestMeta { split: manifest.split, master_seed: manifest.master_seed })
        .expect("manifest meta serialises");
    let mp = meta_path(path);
    write_atomic(&mp, meta.as_bytes()).map_err(|e| CoreError::io(&mp, e))?;
    write_atomic(path, csv.as_bytes()).map_err(|e| CoreError::io(path, e))
}

/// Read a manifest; without a sidecar the split is taken from the file stem
/// (defaulting to test) and the seed is unknown.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mp = meta_path(path);
    let (split, seed) = match std::fs::read_to_string(&mp) {
        Ok(m) => {
            let meta: ManifestMeta = serde_json::from_str(&m).map_err(|e| CoreError::format(&mp, e.to_string()))?;
            (meta.split, meta.master_seed)
        }
        Err(_) => {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (Split::from_name(&stem).unwrap_or(Split::Test), None)
        }
    };
    Manifest::parse_csv(&text, split, seed).map_err(|d| CoreError::format(path, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Manifest {
        Manifest {
            entries: vec![
                ManifestEntry { path: "a.wav".into(), label: ClipLabel::new(ClassLabel::HalfTruth, Some((0.3675, 0.6325))).unwrap() },
                ManifestEntry { path: "b.wav".into(), label: ClipLabel::real() },
                ManifestEntry { path: "sub/c.wav".into(), label: ClipLabel::fake() },
            ],
            split: Split::Val,
            master_seed: Some(42),
        }
    }

    #[test]
    fn parses_reference_rows() {
        let m = Manifest::parse_csv("path,label,start_norm,end_norm\na.wav,2,0.3675,0.6325\nb.wav,0,,\n", Split::Test, None).unwrap();
        assert_eq!(m.entries[0].label.class, ClassLabel::HalfTruth);
        assert_eq!(m.entries[0].label.boundaries, Some((0.3675, 0.6325)));
        assert_eq!(m.entries[1].label, ClipLabel::real());
    }

    #[test]
    fn rejects_schema_violations() {
        let h = "path,label,start_norm,end_norm\n";
        for bad in ["a.wav,0,0.1,0.2", "a.wav,2,0.6,0.4", "a.wav,2,,", "a.wav,3,,", "a.wav,1", "a.wav,2,0.1,"] {
            assert!(Manifest::parse_csv(&format!("{h}{bad}\n"), Split::Test, None).is_err(), "{bad}");
        }
        assert!(Manifest::parse_csv("file,label\n", Split::Test, None).is_err());
        assert!(Manifest::parse_csv(&format!("{h}a.wav,0,,\na.wav,1,,\n"), Split::Test, None).is_err());
    }

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("val.csv");
        let m = sample();
        write_manifest(&m, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("path,label,start_norm,end_norm\na.wav,2,0.3675,0.6325\nb.wav,0,,\n"));
    }

    #[test]
    fn duplicate_paths_cannot_be_written() {
        let mut m = sample();
        m.entries[1].path = "a.wav".into();
        assert!(m.to_csv().is_err());
    }
}
