//! In-memory view of a manifest's pixels, organised by group.

use std::collections::{HashMap, HashSet};

use super::image::{Image, Mask};
use super::manifest::{ImageRecord, Manifest, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct FakeEntry {
    pub id: String,
    pub method: usize,
    pub image: Image,
    pub mask: Option<Mask>,
}

#[derive(Clone, Debug)]
pub struct GroupEntry {
    pub group_id: String,
    pub split: Split,
    pub real_id: String,
    pub real: Image,
    /// Sorted by method index.
    pub fakes: Vec<FakeEntry>,
}

impl GroupEntry {
    pub fn fake(&self, method: usize) -> Option<&FakeEntry> {
        self.fakes.iter().find(|f| f.method == method)
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: Manifest,
    pub groups: Vec<GroupEntry>,
    index: HashMap<(String, Split), usize>,
}

impl Corpus {
    /// Loads every image (and mask) referenced by the manifest.
    pub fn load(manifest: &Manifest) -> Result<Corpus> {
        let mut groups: Vec<GroupEntry> = Vec::new();
        let mut index = HashMap::new();
        for r in manifest.records.iter().filter(|r| !r.label.is_fake()) {
            let real = Image::load_rgb(&manifest.resolve(&r.image_path))?;
            index.insert((r.group_id.clone(), r.split), groups.len());
            groups.push(GroupEntry {
                group_id: r.group_id.clone(),
                split: r.split,
                real_id: r.id.clone(),
                real,
                fakes: Vec::new(),
            });
        }
        for r in manifest.records.iter().filter(|r| r.label.is_fake()) {
            let g = &mut groups[index[&(r.group_id.clone(), r.split)]];
            let image = Image::load_rgb(&manifest.resolve(&r.image_path))?;
            if !image.same_shape(&g.real) {
                return Err(Error::shape(format!(
                    "{} is {}x{} but its group's real image is {}x{}",
                    r.id, image.height, image.width, g.real.height, g.real.width
                )));
            }
            let mask = match &r.mask_path {
                Some(p) => Some(Mask::load_png(&manifest.resolve(p))?),
                None => None,
            };
            g.fakes.push(FakeEntry {
                id: r.id.clone(),
                method: r.method.expect("validated"),
                image,
                mask,
            });
        }
        for g in &mut groups {
            g.fakes.sort_by_key(|f| f.method);
        }
        let mut manifest = manifest.clone();
        if let Some(g) = groups.first() {
            manifest.image_size = Some((g.real.height, g.real.width));
        }
        Ok(Corpus {
            manifest,
            groups,
            index,
        })
    }

    /// Copy keeping only the records for which `keep` holds. Groups whose
    /// real image is dropped disappear along with their fakes.
    pub fn filtered(&self, keep: impl Fn(&ImageRecord) -> bool) -> Result<Corpus> {
        let manifest = self.manifest.filtered(&keep)?;
        let kept: HashSet<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
        let mut groups = Vec::new();
        let mut index = HashMap::new();
        for g in self.groups.iter().filter(|g| kept.contains(g.real_id.as_str())) {
            let mut g = g.clone();
            g.fakes.retain(|f| kept.contains(f.id.as_str()));
            index.insert((g.group_id.clone(), g.split), groups.len());
            groups.push(g);
        }
        Ok(Corpus {
            manifest,
            groups,
            index,
        })
    }

    pub fn group(&self, group_id: &str, split: Split) -> Option<&GroupEntry> {
        self.index.get(&(group_id.to_string(), split)).map(|&i| &self.groups[i])
    }

    pub fn split_groups(&self, split: Split) -> impl Iterator<Item = &GroupEntry> {
        self.groups.iter().filter(move |g| g.split == split)
    }

    pub fn num_methods(&self) -> usize {
        self.manifest.num_methods
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.manifest.image_size
    }
}
