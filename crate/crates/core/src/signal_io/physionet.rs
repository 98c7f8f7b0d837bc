//! PhysioNet 2022 (CirCor) patient header files.
//!
//! ```text
//! 2530 4 4000
//! AV 2530_AV.hea 2530_AV.wav 2530_AV.tsv
//! ...
//! #Age: Child
//! #Murmur: Present
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{
    DataSource, DatasetManifest, Label, PatientRecord, Quality, RecordingRef, RecordingSource, Site,
};
use crate::error::{Error, Result};

const DEMOGRAPHIC_KEYS: [&str; 4] = ["Age", "Sex", "Height", "Weight"];

/// Parses one patient header. `resolve` maps a wav filename to a readable
/// path, or `None` when the file is absent.
///
/// Recordings at non-valve locations (e.g. `Phc`) are skipped.
pub fn parse_physionet_patient<F>(header_text: &str, mut resolve: F) -> Result<PatientRecord>
where
    F: FnMut(&str) -> Option<PathBuf>,
{
    let mut lines = header_text.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("empty header".into()))?;
    let mut head = first.split_whitespace();
    let (Some(patient_id), Some(n_loc), Some(fs)) = (head.next(), head.next(), head.next()) else {
        return Err(Error::MalformedHeader(format!("bad first line {first:?}")));
    };
    let n_loc: usize = n_loc
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad location count {n_loc:?}")))?;
    fs.parse::<u32>()
        .map_err(|_| Error::MalformedHeader(format!("bad sample rate {fs:?}")))?;

    let mut recordings = Vec::new();
    for _ in 0..n_loc {
        let line = lines.next().ok_or_else(|| {
            Error::MalformedHeader(format!("{patient_id}: missing recording lines"))
        })?;
        if line.starts_with('#') {
            return Err(Error::MalformedHeader(format!(
                "{patient_id}: expected {n_loc} recording lines"
            )));
        }
        let mut tokens = line.split_whitespace();
        let location = tokens.next().unwrap_or_default();
        let wav = tokens
            .find(|t| t.to_ascii_lowercase().ends_with(".wav"))
            .ok_or_else(|| Error::MalformedHeader(format!("{patient_id}: no wav in {line:?}")))?;
        let site = match location.parse::<Site>() {
            Ok(site) if site != Site::Unknown => site,
            _ => {
                log::debug!("{patient_id}: skipping recording at location {location}");
                continue;
            }
        };
        let path = resolve(wav).ok_or_else(|| Error::MissingAudio(PathBuf::from(wav)))?;
        recordings.push(RecordingRef {
            site,
            quality: Quality::Unrated,
            source: RecordingSource::File(path),
        });
    }

    let mut murmur = None;
    let mut demographics = BTreeMap::new();
    for line in lines {
        let Some(rest) = line.strip_prefix('#') else {
            continue;
        };
        let Some((key, value)) = rest.split_once(':') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if key == "Murmur" {
            murmur = Some(value.to_string());
        } else if DEMOGRAPHIC_KEYS.contains(&key) && value != "nan" {
            demographics.insert(key.to_ascii_lowercase(), value.to_string());
        }
    }

    let label = match murmur.as_deref() {
        Some("Present") => Label::Positive,
        Some("Absent") => Label::Negative,
        Some("Unknown") => return Err(Error::UnknownLabel(patient_id.to_string())),
        Some(other) => {
            return Err(Error::MalformedHeader(format!(
                "{patient_id}: murmur value {other:?}"
            )))
        }
        None => {
            return Err(Error::MalformedHeader(format!(
                "{patient_id}: no #Murmur line"
            )))
        }
    };
    if recordings.is_empty() {
        return Err(Error::MalformedHeader(format!(
            "{patient_id}: no valve-site recordings"
        )));
    }

    Ok(PatientRecord {
        patient_id: patient_id.to_string(),
        label,
        recordings,
        demographics,
    })
}

/// Result of scanning a PhysioNet 2022 training directory.
#[derive(Debug)]
pub struct PhysionetScan {
    pub manifest: DatasetManifest,
    pub skipped_unknown: usize,
}

/// Parses every `*.txt` header in `dir` (sorted by file name). Patients
/// labelled `Unknown` are counted and skipped.
pub fn read_physionet_dir(dir: &Path) -> Result<PhysionetScan> {
    let dir = dir.canonicalize()?;
    let mut headers: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    headers.sort();

    let mut entries = Vec::new();
    let mut skipped_unknown = 0;
    for header in headers {
        let text = fs::read_to_string(&header)?;
        let parsed = parse_physionet_patient(&text, |wav| {
            let p = dir.join(wav);
            p.is_file().then_some(p)
        });
        match parsed {
            Ok(patient) => entries.push(patient),
            Err(Error::UnknownLabel(id)) => {
                log::info!("skipping patient {id}: unknown murmur label");
                skipped_unknown += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PhysionetScan {
        manifest: DatasetManifest::new(entries, DataSource::PhysioNet2022)?,
        skipped_unknown,
    })
}
