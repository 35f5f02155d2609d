//! JSON-lines image manifests.
//!
//! One record per line with keys `id, image_path, label, method, group_id,
//! split, mask_path`. Paths are relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// 0 = real, 1 = fake.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Real => 0.0,
            Label::Fake => 1.0,
        }
    }

    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub image_path: String,
    pub label: Label,
    pub method: Option<usize>,
    pub group_id: String,
    pub split: Split,
    pub mask_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub records: Vec<ImageRecord>,
    pub num_methods: usize,
    /// `(height, width)`; `None` until an image has been inspected.
    pub image_size: Option<(usize, usize)>,
    /// Directory that relative paths resolve against.
    pub root: PathBuf,
}

impl Manifest {
    /// Validates records and builds a manifest; `num_methods` defaults to the
    /// largest observed method index plus one (at least 1).
    pub fn new(
        records: Vec<ImageRecord>,
        num_methods: Option<usize>,
        image_size: Option<(usize, usize)>,
        root: PathBuf,
    ) -> Result<Self> {
        let observed = records.iter().filter_map(|r| r.method).max().map_or(1, |m| m + 1);
        let num_methods = num_methods.unwrap_or(observed);
        if num_methods < observed {
            return Err(Error::invalid(format!(
                "method index {} exceeds num_methods {num_methods}",
                observed - 1
            )));
        }
        let m = Manifest {
            records,
            num_methods,
            image_size,
            root,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            let line = i + 1;
            if !ids.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            match r.label {
                Label::Real => {
                    if r.method.is_some() || r.mask_path.is_some() {
                        return Err(Error::ManifestLine {
                            line,
                            message: format!("real record {:?} must have null method and mask_path", r.id),
                        });
                    }
                }
                Label::Fake => {
                    if r.method.is_none() {
                        return Err(Error::ManifestLine {
                            line,
                            message: format!("fake record {:?} has no method", r.id),
                        });
                    }
                }
            }
        }
        let mut reals: HashMap<(&str, Split), usize> = HashMap::new();
        for r in self.records.iter().filter(|r| r.label == Label::Real) {
            *reals.entry((r.group_id.as_str(), r.split)).or_default() += 1;
        }
        for r in self.records.iter().filter(|r| r.label == Label::Fake) {
            if reals.get(&(r.group_id.as_str(), r.split)) != Some(&1) {
                return Err(Error::DanglingGroup {
                    id: r.id.clone(),
                    group: r.group_id.clone(),
                    split: r.split.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Group ids of a split in first-appearance order.
    pub fn groups(&self, split: Split) -> Vec<String> {
        let mut seen = HashSet::new();
        self.split_records(split)
            .filter(|r| seen.insert(r.group_id.clone()))
            .map(|r| r.group_id.clone())
            .collect()
    }

    /// Methods available for each group of a split (sorted, deduplicated).
    pub fn group_methods(&self, split: Split) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for r in self.split_records(split) {
            let entry = out.entry(r.group_id.clone()).or_default();
            if let Some(m) = r.method {
                if !entry.contains(&m) {
                    entry.push(m);
                }
            }
        }
        for v in out.values_mut() {
            v.sort_unstable();
        }
        out
    }

    /// Copy keeping only records for which `keep` holds; `num_methods` is kept.
    pub fn filtered(&self, keep: impl Fn(&ImageRecord) -> bool) -> Result<Manifest> {
        Manifest::new(
            self.records.iter().filter(|r| keep(r)).cloned().collect(),
            Some(self.num_methods),
            self.image_size,
            self.root.clone(),
        )
    }

    /// Canonical JSON-lines text.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str, root: PathBuf) -> Result<Manifest> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ImageRecord = serde_json::from_str(line).map_err(|e| Error::ManifestLine {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Manifest::new(records, None, None, root)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a manifest file; the image size is taken from the
/// first record's image header when that file is readable.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut m = Manifest::parse(&text, root)?;
    if let Some(first) = m.records.first() {
        if let Ok((w, h)) = image::image_dimensions(m.resolve(&first.image_path)) {
            m.image_size = Some((h as usize, w as usize));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, label: u8, method: Option<usize>, group: &str) -> String {
        let method = method.map_or("null".to_string(), |m| m.to_string());
        let mask = if label == 1 {
            format!("\"masks/{id}.png\"")
        } else {
            "null".into()
        };
        format!(
            r#"{{"id":"{id}","image_path":"images/{id}.png","label":{label},"method":{method},"group_id":"{group}","split":"train","mask_path":{mask}}}"#
        )
    }

    #[test]
    fn minimal_manifest() {
        let text = [line("r", 0, None, "g0"), line("f", 1, Some(0), "g0")].join("\n");
        let m = Manifest::parse(&text, PathBuf::new()).unwrap();
        assert_eq!(m.records.len(), 2);
        assert!(m.num_methods >= 1);
    }

    #[test]
    fn dangling_group() {
        let text = [line("r", 0, None, "g0"), line("f", 1, Some(0), "g1")].join("\n");
        assert!(matches!(
            Manifest::parse(&text, PathBuf::new()),
            Err(Error::DanglingGroup { .. })
        ));
    }

    #[test]
    fn fake_in_other_split_is_dangling() {
        let fake = line("f", 1, Some(0), "g0").replace("\"train\"", "\"test\"");
        let text = [line("r", 0, None, "g0"), fake].join("\n");
        assert!(Manifest::parse(&text, PathBuf::new()).is_err());
    }

    #[test]
    fn duplicate_id() {
        let text = [line("r", 0, None, "g0"), line("r", 0, None, "g1")].join("\n");
        assert!(matches!(
            Manifest::parse(&text, PathBuf::new()),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = [line("r", 0, None, "g0"), "{not json".to_string()].join("\n");
        match Manifest::parse(&text, PathBuf::new()) {
            Err(Error::ManifestLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let bad_label = line("r", 0, None, "g0").replace("\"label\":0", "\"label\":2");
        assert!(Manifest::parse(&bad_label, PathBuf::new()).is_err());
    }

    #[test]
    fn real_with_method_is_rejected() {
        let text = line("r", 0, None, "g0").replace("\"method\":null", "\"method\":1");
        assert!(Manifest::parse(&text, PathBuf::new()).is_err());
    }

    #[test]
    fn five_records_four_methods_roundtrip() {
        let mut lines = vec![line("r", 0, None, "g0")];
        for m in 0..4 {
            lines.push(line(&format!("f{m}"), 1, Some(m), "g0"));
        }
        let text = lines.join("\n") + "\n";
        let m = Manifest::parse(&text, PathBuf::new()).unwrap();
        assert_eq!(m.num_methods, 4);
        assert_eq!(m.to_jsonl().unwrap(), text);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_manifest(Path::new("/nonexistent/manifest.jsonl")),
            Err(Error::Io { .. })
        ));
    }
}
