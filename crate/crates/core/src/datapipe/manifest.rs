//! JSON sample manifests.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datapipe::nifti::read_nifti;
use crate::datapipe::volume::{read_rimg, read_rvol, Image, Volume};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Mri,
    Us,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub patient_id: String,
    pub modality: Modality,
    /// 0 = normal, 1 = positive.
    pub label: u8,
    pub uri: String,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    pub patient_id: String,
    pub mri: String,
    pub us: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleManifest {
    pub version: u32,
    pub samples: Vec<Sample>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairing: Vec<Pairing>,
    /// Directory that relative URIs resolve against (not serialised).
    #[serde(skip)]
    pub root: PathBuf,
}

impl SampleManifest {
    pub fn new(samples: Vec<Sample>, pairing: Vec<Pairing>) -> Self {
        SampleManifest { version: MANIFEST_VERSION, samples, pairing, root: PathBuf::new() }
    }

    /// Check labels, ids, pairing consistency and patient-level disjointness.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Data(format!("unsupported manifest version {}", self.version)));
        }
        let mut split_of: HashMap<&str, Split> = HashMap::new();
        let mut by_uri: HashMap<&str, &Sample> = HashMap::new();
        for s in &self.samples {
            if s.patient_id.is_empty() {
                return Err(Error::Data(format!("sample {:?} has an empty patient_id", s.uri)));
            }
            if s.label > 1 {
                return Err(Error::Data(format!("sample {:?} has label {}", s.uri, s.label)));
            }
            if by_uri.insert(&s.uri, s).is_some() {
                return Err(Error::Data(format!("duplicate sample uri {:?}", s.uri)));
            }
            if s.split != Split::Unassigned {
                match split_of.insert(&s.patient_id, s.split) {
                    Some(prev) if prev != s.split => {
                        return Err(Error::Data(format!(
                            "patient {} appears in both {prev} and {}",
                            s.patient_id, s.split
                        )));
                    }
                    _ => {}
                }
            }
        }
        for p in &self.pairing {
            for (uri, modality) in [(&p.mri, Modality::Mri), (&p.us, Modality::Us)] {
                let s = by_uri
                    .get(uri.as_str())
                    .ok_or_else(|| Error::Data(format!("pairing references unknown sample {uri:?}")))?;
                if s.modality != modality || s.patient_id != p.patient_id || s.label != p.label {
                    return Err(Error::Data(format!(
                        "pairing for patient {} disagrees with sample {uri:?}",
                        p.patient_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: SampleManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: invalid manifest: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, uri: &str) -> PathBuf {
        let p = Path::new(uri);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn of_modality(&self, modality: Modality) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.modality == modality)
    }

    pub fn split_of_patient(&self, patient_id: &str) -> Split {
        self.samples
            .iter()
            .find(|s| s.patient_id == patient_id)
            .map(|s| s.split)
            .unwrap_or_default()
    }

    /// Per-split sample counts per label.
    pub fn split_counts(&self, modality: Option<Modality>) -> BTreeMap<Split, [usize; 2]> {
        let mut m = BTreeMap::new();
        for s in self.samples.iter().filter(|s| modality.is_none_or(|md| s.modality == md)) {
            m.entry(s.split).or_insert([0; 2])[s.label as usize] += 1;
        }
        m
    }

    /// Pairs whose patient sits in `split`.
    pub fn pairs_in(&self, split: Split) -> Vec<&Pairing> {
        let splits: HashMap<&str, Split> = self.samples.iter().map(|s| (s.uri.as_str(), s.split)).collect();
        self.pairing.iter().filter(|p| splits.get(p.mri.as_str()) == Some(&split)).collect()
    }
}

/// Read a raw volume by extension (`.nii` or `.rvol`).
pub fn load_volume(path: &Path) -> Result<Volume> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("nii") => read_nifti(path),
        Some("rvol") => read_rvol(path),
        _ => Err(Error::UnsupportedFormat(format!("volume file {}", path.display()))),
    }
}

/// Read a raw image (`.rimg`).
pub fn load_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("rimg") => read_rimg(path),
        _ => Err(Error::UnsupportedFormat(format!("image file {}", path.display()))),
    }
}
