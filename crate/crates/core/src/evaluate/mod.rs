//! Confusion metrics, ROC/PR curves and AUROC, patient-level aggregation,
//! and the site and quality ablation protocols.
//!
//! Scores are positive-class probabilities. The decision threshold is
//! 0.5 with ties predicted positive. Rates whose denominator is zero, and
//! the AUROC of a single-class cohort, are reported as NaN.

mod curves;
mod protocol;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub use curves::{auroc, pr_points, roc_points, trapezoid};
pub use protocol::{ablate_sites, per_site_protocol, ProtocolConfig, SiteReport, Splits};

use crate::dataset::PreparedSet;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::signal_io::{DatasetManifest, Label, Quality, Site};
use crate::train::predict_set;

pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecording {
    pub patient_id: String,
    pub site: Site,
    pub probability_positive: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Recording,
    Patient,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Recording => "recording",
            Level::Patient => "patient",
        }
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recording" => Ok(Level::Recording),
            "patient" => Ok(Level::Patient),
            _ => Err(Error::ConfigInvalid(format!("unknown level {s:?}"))),
        }
    }
}

/// Mean of one patient's per-recording probabilities. Values are summed
/// in sorted order, so the result does not depend on recording order.
pub fn aggregate_patient(probabilities: &[f64]) -> Result<f64> {
    if probabilities.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut sorted = probabilities.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted.iter().sum::<f64>() / sorted.len() as f64)
}

/// One score per patient, in order of first appearance.
pub fn aggregate_by_patient(scores: &[ScoredRecording]) -> Result<Vec<(String, f64, Label)>> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<(&str, Vec<f64>, Label)> = Vec::new();
    for s in scores {
        let i = *slot.entry(&s.patient_id).or_insert_with(|| {
            groups.push((&s.patient_id, Vec::new(), s.label));
            groups.len() - 1
        });
        if groups[i].2 != s.label {
            return Err(Error::MalformedManifest(format!(
                "patient {} has conflicting labels",
                s.patient_id
            )));
        }
        groups[i].1.push(s.probability_positive);
    }
    groups
        .into_iter()
        .map(|(id, p, l)| Ok((id.to_string(), aggregate_patient(&p)?, l)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// Counts outcomes, predicting positive iff `score ≥ threshold`.
pub fn confusion(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Confusion> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    let mut c = Confusion::default();
    for (s, l) in scores.iter().zip(labels) {
        match (*s >= threshold, l.is_positive()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub level: Level,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub auroc: f64,
    pub roc_points: Vec<(f64, f64)>,
    pub pr_points: Vec<(f64, f64)>,
}

impl MetricsReport {
    pub fn from_scores(scores: &[f64], labels: &[Label], level: Level) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let c = confusion(scores, labels, THRESHOLD)?;
        let (auroc, roc, pr) = match auroc(scores, labels) {
            Ok(a) => (a, roc_points(scores, labels)?, pr_points(scores, labels)?),
            Err(Error::SingleClass) => (f64::NAN, Vec::new(), Vec::new()),
            Err(e) => return Err(e),
        };
        Ok(Self {
            level,
            confusion: c,
            accuracy: c.accuracy(),
            sensitivity: c.sensitivity(),
            specificity: c.specificity(),
            auroc,
            roc_points: roc,
            pr_points: pr,
        })
    }

    /// Builds the report at `level` from per-recording scores.
    pub fn from_recordings(scored: &[ScoredRecording], level: Level) -> Result<Self> {
        match level {
            Level::Recording => {
                let s: Vec<f64> = scored.iter().map(|r| r.probability_positive).collect();
                let l: Vec<Label> = scored.iter().map(|r| r.label).collect();
                Self::from_scores(&s, &l, level)
            }
            Level::Patient => {
                let (s, l): (Vec<f64>, Vec<Label>) = aggregate_by_patient(scored)?
                    .into_iter()
                    .map(|(_, s, l)| (s, l))
                    .unzip();
                Self::from_scores(&s, &l, level)
            }
        }
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let c = &self.confusion;
        let mut out = String::from("metric,value\n");
        let rows: [(&str, String); 10] = [
            ("level", self.level.as_str().to_string()),
            ("count", c.total().to_string()),
            ("tp", c.tp.to_string()),
            ("fp", c.fp.to_string()),
            ("tn", c.tn.to_string()),
            ("fn", c.fn_.to_string()),
            ("accuracy", self.accuracy.to_string()),
            ("sensitivity", self.sensitivity.to_string()),
            ("specificity", self.specificity.to_string()),
            ("auroc", self.auroc.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    /// Writes `report.csv`, `roc.csv` and `pr.csv` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.to_csv())?;
        fs::write(
            dir.join("roc.csv"),
            curve_csv("fpr", "tpr", &self.roc_points),
        )?;
        fs::write(
            dir.join("pr.csv"),
            curve_csv("recall", "precision", &self.pr_points),
        )?;
        Ok(())
    }
}

pub fn curve_csv(x: &str, y: &str, points: &[(f64, f64)]) -> String {
    let mut out = format!("{x},{y}\n");
    for (a, b) in points {
        let _ = writeln!(out, "{a},{b}");
    }
    out
}

/// Eval-mode scores for every recording of `set`.
pub fn score_set(model: &Model, set: &PreparedSet, chunk: usize) -> Result<Vec<ScoredRecording>> {
    let probs = predict_set(model, set, chunk)?;
    Ok(set
        .items
        .iter()
        .zip(probs)
        .map(|(item, p)| ScoredRecording {
            patient_id: item.patient_id.clone(),
            site: item.site,
            probability_positive: p,
            label: item.label,
        })
        .collect())
}

pub fn evaluate_cohort(model: &Model, set: &PreparedSet, level: Level) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    MetricsReport::from_recordings(&score_set(model, set, 16)?, level)
}

/// Recordings with the given quality flag.
pub fn quality_slice(manifest: &DatasetManifest, quality: Quality) -> DatasetManifest {
    manifest.filter_recordings(|r| r.quality == quality)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{DataSource, PatientRecord, Recording, RecordingRef, RecordingSource};
    use std::sync::Arc;
    use Label::{Negative as N, Positive as P};

    #[test]
    fn patient_mean() {
        assert!((aggregate_patient(&[0.9, 0.8, 0.7, 0.6]).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(aggregate_patient(&[0.3]).unwrap(), 0.3);
        assert_eq!(
            aggregate_patient(&[0.6, 0.9, 0.7, 0.8]).unwrap(),
            aggregate_patient(&[0.9, 0.8, 0.7, 0.6]).unwrap()
        );
        assert!(matches!(aggregate_patient(&[]), Err(Error::EmptyGroup)));
    }

    #[test]
    fn confusion_rules() {
        let c = confusion(&[0.9, 0.2], &[P, N], 0.5).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (1, 1, 0, 0));
        assert_eq!(confusion(&[0.5], &[N], 0.5).unwrap().fp, 1);
        assert_eq!(confusion(&[0.9; 5], &[N; 5], 0.5).unwrap().fp, 5);
        assert!(matches!(
            confusion(&[0.9], &[], 0.5),
            Err(Error::LengthMismatch(1, 0))
        ));
    }

    fn scored(id: &str, site: Site, p: f64, label: Label) -> ScoredRecording {
        ScoredRecording {
            patient_id: id.into(),
            site,
            probability_positive: p,
            label,
        }
    }

    #[test]
    fn report_consistency_and_levels() {
        let recs = vec![
            scored("a", Site::AV, 0.9, P),
            scored("a", Site::MV, 0.2, P),
            scored("b", Site::AV, 0.1, N),
            scored("b", Site::MV, 0.6, N),
            scored("c", Site::AV, 0.8, P),
        ];
        let rec = MetricsReport::from_recordings(&recs, Level::Recording).unwrap();
        assert_eq!(rec.confusion.total(), 5);
        let pat = MetricsReport::from_recordings(&recs, Level::Patient).unwrap();
        assert_eq!(
            pat.confusion,
            Confusion {
                tp: 2,
                fp: 0,
                tn: 1,
                fn_: 0
            }
        );
        assert_eq!(
            (pat.accuracy, pat.sensitivity, pat.specificity, pat.auroc),
            (1.0, 1.0, 1.0, 1.0)
        );
        let c = rec.confusion;
        assert_eq!(rec.accuracy, (c.tp + c.tn) as f64 / 5.0);
        assert_eq!(rec.sensitivity, c.tp as f64 / (c.tp + c.fn_) as f64);
    }

    #[test]
    fn duplicated_patients_leave_metrics_unchanged() {
        let base = vec![
            scored("a", Site::AV, 0.9, P),
            scored("b", Site::AV, 0.6, N),
            scored("c", Site::AV, 0.3, P),
            scored("d", Site::AV, 0.1, N),
        ];
        let mut doubled = base.clone();
        doubled.extend(base.iter().map(|s| ScoredRecording {
            patient_id: format!("{}2", s.patient_id),
            ..s.clone()
        }));
        let a = MetricsReport::from_recordings(&base, Level::Patient).unwrap();
        let b = MetricsReport::from_recordings(&doubled, Level::Patient).unwrap();
        assert_eq!(
            (a.accuracy, a.sensitivity, a.specificity, a.auroc),
            (b.accuracy, b.sensitivity, b.specificity, b.auroc)
        );
    }

    #[test]
    fn single_class_has_nan_auroc() {
        let r = MetricsReport::from_scores(&[0.2, 0.7], &[N, N], Level::Recording).unwrap();
        assert!(r.auroc.is_nan() && r.sensitivity.is_nan());
        assert_eq!(r.specificity, 0.5);
        assert!(r.roc_points.is_empty());
        assert!(matches!(
            MetricsReport::from_scores(&[], &[], Level::Patient),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn csv_layout() {
        let r = MetricsReport::from_scores(&[0.9, 0.1], &[P, N], Level::Patient).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,value\nlevel,patient\ncount,2\ntp,1\n"));
        assert!(csv.ends_with("auroc,1\n"));
        assert_eq!(
            curve_csv("fpr", "tpr", &r.roc_points),
            "fpr,tpr\n0,0\n0,1\n1,1\n"
        );
    }

    #[test]
    fn quality_slices_partition() {
        let rec = |q| RecordingRef {
            site: Site::AV,
            quality: q,
            source: RecordingSource::Memory(Arc::new(Recording::new(800, vec![0.0]))),
        };
        let patient = |id: &str, qs: &[Quality]| PatientRecord {
            patient_id: id.into(),
            label: P,
            recordings: qs.iter().map(|&q| rec(q)).collect(),
            demographics: Default::default(),
        };
        let m = DatasetManifest::new(
            vec![
                patient("a", &[Quality::Satisfactory, Quality::Unsatisfactory]),
                patient("b", &[Quality::Satisfactory]),
            ],
            DataSource::Synthetic,
        )
        .unwrap();
        let good = quality_slice(&m, Quality::Satisfactory);
        let bad = quality_slice(&m, Quality::Unsatisfactory);
        assert_eq!(
            good.recording_count() + bad.recording_count(),
            m.recording_count()
        );
        assert!(quality_slice(&m, Quality::Unrated).is_empty());
        assert_eq!(
            quality_slice(&good, Quality::Satisfactory).recording_count(),
            good.recording_count()
        );
    }
}
