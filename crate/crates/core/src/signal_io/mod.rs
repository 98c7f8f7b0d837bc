//! Recording and manifest types, plus the readers that produce them.
//!
//! A [`DatasetManifest`] is a list of patients; each patient carries one
//! binary label that applies to every one of its recordings. Recordings are
//! referenced either by path (read lazily with [`read_wav`]) or held in
//! memory, which is how synthetic cohorts travel through the pipeline.

mod manifest;
mod physionet;
mod split;
mod wav;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

pub use manifest::{read_manifest, write_manifest};
pub use physionet::{parse_physionet_patient, read_physionet_dir, PhysionetScan};
pub use split::{patient_split, SplitSpec};
pub use wav::{read_wav, read_wav_bytes, write_wav, write_wav_bytes};

/// Auscultation site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Site {
    AV,
    MV,
    PV,
    TV,
    Unknown,
}

impl Site {
    /// The four valve sites, in manifest order.
    pub const VALVES: [Site; 4] = [Site::AV, Site::MV, Site::PV, Site::TV];

    pub fn as_str(self) -> &'static str {
        match self {
            Site::AV => "AV",
            Site::MV => "MV",
            Site::PV => "PV",
            Site::TV => "TV",
            Site::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AV" => Ok(Site::AV),
            "MV" => Ok(Site::MV),
            "PV" => Ok(Site::PV),
            "TV" => Ok(Site::TV),
            "UNKNOWN" | "" => Ok(Site::Unknown),
            other => Err(Error::MalformedManifest(format!("unknown site {other:?}"))),
        }
    }
}

/// Recording quality as annotated by a clinician.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quality {
    Satisfactory,
    Unsatisfactory,
    Unrated,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Satisfactory => "satisfactory",
            Quality::Unsatisfactory => "unsatisfactory",
            Quality::Unrated => "unrated",
        }
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "satisfactory" => Ok(Quality::Satisfactory),
            "unsatisfactory" => Ok(Quality::Unsatisfactory),
            "unrated" => Ok(Quality::Unrated),
            other => Err(Error::MalformedManifest(format!(
                "unknown quality {other:?}"
            ))),
        }
    }
}

/// Patient-level diagnosis. Class index 0 is negative, 1 is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub const NUM_CLASSES: usize = 2;

    pub fn class_index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_class_index(index: usize) -> Self {
        if index == 0 {
            Label::Negative
        } else {
            Label::Positive
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            other => Err(Error::MalformedManifest(format!("unknown label {other:?}"))),
        }
    }
}

/// One auscultation-site signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub patient_id: String,
    pub site: Site,
    pub sample_rate_hz: u32,
    pub samples: Vec<f64>,
    pub quality: Quality,
}

impl Recording {
    pub fn new(sample_rate_hz: u32, samples: Vec<f64>) -> Self {
        Self {
            patient_id: String::new(),
            site: Site::Unknown,
            sample_rate_hz,
            samples,
            quality: Quality::Unrated,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }
}

#[derive(Debug, Clone)]
pub enum RecordingSource {
    File(PathBuf),
    Memory(Arc<Recording>),
}

/// A recording as referenced from a manifest.
#[derive(Debug, Clone)]
pub struct RecordingRef {
    pub site: Site,
    pub quality: Quality,
    pub source: RecordingSource,
}

impl RecordingRef {
    /// Reads (or clones) the signal and stamps it with the reference's
    /// patient, site and quality.
    pub fn load(&self, patient_id: &str) -> Result<Recording> {
        let mut rec = match &self.source {
            RecordingSource::File(path) => {
                if !path.exists() {
                    return Err(Error::MissingAudio(path.clone()));
                }
                read_wav(path)?
            }
            RecordingSource::Memory(rec) => rec.as_ref().clone(),
        };
        rec.patient_id = patient_id.to_string();
        rec.site = self.site;
        rec.quality = self.quality;
        Ok(rec)
    }
}

#[derive(Debug, Clone)]
pub struct PatientRecord {
    pub patient_id: String,
    pub label: Label,
    pub recordings: Vec<RecordingRef>,
    pub demographics: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Bangladesh,
    PhysioNet2022,
    PhysioNet2016,
    Synthetic,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<PatientRecord>,
    pub source: DataSource,
}

impl DatasetManifest {
    /// Builds a manifest, rejecting duplicate patient ids.
    pub fn new(entries: Vec<PatientRecord>, source: DataSource) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.patient_id.as_str()) {
                return Err(Error::MalformedManifest(format!(
                    "duplicate patient id {:?}",
                    e.patient_id
                )));
            }
        }
        Ok(Self { entries, source })
    }

    pub fn empty(source: DataSource) -> Self {
        Self {
            entries: Vec::new(),
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn recording_count(&self) -> usize {
        self.entries.iter().map(|p| p.recordings.len()).sum()
    }

    /// Patient counts as `[negative, positive]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for e in &self.entries {
            counts[e.label.class_index()] += 1;
        }
        counts
    }

    pub fn patient_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.patient_id.as_str()).collect()
    }

    /// Keeps only recordings matching `keep`; patients left without
    /// recordings are dropped.
    pub fn filter_recordings<F>(&self, mut keep: F) -> DatasetManifest
    where
        F: FnMut(&RecordingRef) -> bool,
    {
        let entries = self
            .entries
            .iter()
            .filter_map(|p| {
                let recordings: Vec<_> = p.recordings.iter().filter(|r| keep(r)).cloned().collect();
                (!recordings.is_empty()).then(|| PatientRecord {
                    recordings,
                    ..p.clone()
                })
            })
            .collect();
        DatasetManifest {
            entries,
            source: self.source,
        }
    }

    pub fn filter_site(&self, site: Site) -> DatasetManifest {
        self.filter_recordings(|r| r.site == site)
    }
}
