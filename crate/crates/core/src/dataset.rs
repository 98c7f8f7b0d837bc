//! Preprocessed recordings ready for the network.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::dsp::Preprocessor;
use crate::error::{Error, Result};
use crate::signal_io::{DatasetManifest, Label, Quality, Site};

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecording {
    pub patient_id: String,
    pub site: Site,
    pub quality: Quality,
    pub label: Label,
    pub input: Vec<f64>,
}

/// Fixed-length network inputs with their provenance, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSet {
    pub input_len: usize,
    pub items: Vec<PreparedRecording>,
}

impl PreparedSet {
    pub fn new(input_len: usize) -> Self {
        Self {
            input_len,
            items: Vec::new(),
        }
    }

    /// Loads and preprocesses every recording of the manifest. Recordings
    /// are processed in parallel; output order follows the manifest.
    pub fn from_manifest(manifest: &DatasetManifest, pre: &Preprocessor) -> Result<Self> {
        let jobs: Vec<_> = manifest
            .entries
            .iter()
            .flat_map(|p| p.recordings.iter().map(move |r| (p, r)))
            .collect();
        let items = jobs
            .par_iter()
            .map(|(patient, rec)| {
                let loaded = rec.load(&patient.patient_id)?;
                Ok(PreparedRecording {
                    patient_id: patient.patient_id.clone(),
                    site: rec.site,
                    quality: rec.quality,
                    label: patient.label,
                    input: pre.apply(&loaded)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_len: pre.output_len(),
            items,
        })
    }

    pub fn push(&mut self, item: PreparedRecording) -> Result<()> {
        if item.input.len() != self.input_len {
            return Err(Error::ShapeMismatch(format!(
                "input of {} samples, set holds {}",
                item.input.len(),
                self.input_len
            )));
        }
        self.items.push(item);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn filter<F: FnMut(&PreparedRecording) -> bool>(&self, mut keep: F) -> Self {
        Self {
            input_len: self.input_len,
            items: self.items.iter().filter(|i| keep(i)).cloned().collect(),
        }
    }

    pub fn filter_site(&self, site: Site) -> Self {
        self.filter(|i| i.site == site)
    }

    pub fn filter_patients(&self, ids: &HashSet<&str>) -> Self {
        self.filter(|i| ids.contains(i.patient_id.as_str()))
    }

    /// Stacks the selected inputs into a `[B, 1, L]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.input_len);
        for &i in indices {
            data.extend_from_slice(&self.items[i].input);
        }
        Tensor::new([indices.len(), 1, self.input_len], data)
    }
}
