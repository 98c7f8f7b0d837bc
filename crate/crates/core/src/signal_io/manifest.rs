//! Native manifest CSV: one row per recording,
//! `patient_id,site,label,quality,path`.
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{DataSource, DatasetManifest, Label, PatientRecord, RecordingRef, RecordingSource};
use crate::error::{Error, Result};

const HEADER: [&str; 5] = ["patient_id", "site", "label", "quality", "path"];

fn csv_err(e: csv::Error) -> Error {
    Error::MalformedManifest(e.to_string())
}

pub fn read_manifest(path: &Path, source: DataSource) -> Result<DatasetManifest> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_manifest(&text, base, source)
}

pub(crate) fn parse_manifest(
    text: &str,
    base: &Path,
    source: DataSource,
) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::MalformedManifest(format!(
            "expected header {}, found {}",
            HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut entries: Vec<PatientRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let patient_id = field(0);
        if patient_id.is_empty() {
            return Err(Error::MalformedManifest(format!(
                "row {}: empty patient id",
                row + 1
            )));
        }
        let label: Label = field(2).parse()?;
        let rel = Path::new(field(4));
        let path = if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            base.join(rel)
        };
        let recording = RecordingRef {
            site: field(1).parse()?,
            quality: field(3).parse()?,
            source: RecordingSource::File(path),
        };
        match index.get(patient_id) {
            Some(&i) => {
                if entries[i].label != label {
                    return Err(Error::MalformedManifest(format!(
                        "patient {patient_id} has conflicting labels"
                    )));
                }
                entries[i].recordings.push(recording);
            }
            None => {
                index.insert(patient_id.to_string(), entries.len());
                entries.push(PatientRecord {
                    patient_id: patient_id.to_string(),
                    label,
                    recordings: vec![recording],
                    demographics: BTreeMap::new(),
                });
            }
        }
    }
    DatasetManifest::new(entries, source)
}

/// Writes the manifest with paths exactly as stored. In-memory recordings
/// have no path and are rejected.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut buf = Vec::new();
    write_manifest_to(&mut buf, manifest)?;
    File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub(crate) fn write_manifest_to<W: Write>(out: W, manifest: &DatasetManifest) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(HEADER).map_err(csv_err)?;
    for patient in &manifest.entries {
        for rec in &patient.recordings {
            let RecordingSource::File(path) = &rec.source else {
                return Err(Error::MalformedManifest(format!(
                    "patient {} has an in-memory recording",
                    patient.patient_id
                )));
            };
            let path = path.to_string_lossy();
            writer
                .write_record([
                    patient.patient_id.as_str(),
                    rec.site.as_str(),
                    patient.label.as_str(),
                    rec.quality.as_str(),
                    path.as_ref(),
                ])
                .map_err(csv_err)?;
        }
    }
    writer.flush()?;
    Ok(())
}
