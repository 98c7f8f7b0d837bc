//! Seeded synthetic phonocardiograms.
//!
//! Each cardiac cycle of period `T = 60 / bpm` starts with an S1 burst at
//! `FIRST_BEAT_S + k·T`, followed by S2 at `SYSTOLE_FRACTION·T` later.
//! Bursts are exponentially damped sinusoids lasting `BURST_S`. A murmur
//! is band-limited noise under a Hann taper confined to the gap between
//! bursts, shrunk by `GUARD_S` on each side: systolic murmurs fill
//! S1→S2, diastolic murmurs fill S2→next S1. White noise is added at the
//! requested SNR and the result is scaled to a peak of `PEAK`.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::signal_io::{
    write_manifest, write_wav, DataSource, DatasetManifest, Label, PatientRecord, Quality,
    Recording, RecordingRef, RecordingSource, Site,
};

pub const FIRST_BEAT_S: f64 = 0.05;
pub const SYSTOLE_FRACTION: f64 = 0.35;
pub const BURST_S: f64 = 0.06;
pub const GUARD_S: f64 = 0.01;
pub const PEAK: f64 = 0.9;

const BURST_DECAY_S: f64 = 0.012;
const MURMUR_COMPONENTS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MurmurKind {
    None,
    Systolic,
    Diastolic,
}

impl FromStr for MurmurKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "systolic" => Ok(Self::Systolic),
            "diastolic" => Ok(Self::Diastolic),
            _ => Err(Error::InvalidSpec(format!("unknown murmur kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub heart_rate_bpm: f64,
    pub murmur: MurmurKind,
    pub murmur_band_hz: (f64, f64),
    /// Murmur RMS relative to the burst peak amplitude of 1.
    pub murmur_amplitude: f64,
    pub s1_hz: f64,
    pub s2_hz: f64,
    pub snr_db: f64,
    pub duration_s: f64,
    pub fs_hz: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            heart_rate_bpm: 72.0,
            murmur: MurmurKind::None,
            murmur_band_hz: (150.0, 400.0),
            murmur_amplitude: 0.25,
            s1_hz: 60.0,
            s2_hz: 90.0,
            snr_db: 20.0,
            duration_s: 5.0,
            fs_hz: 4000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = f64::from(self.fs_hz) / 2.0;
        let (lo, hi) = self.murmur_band_hz;
        let checks = [
            (
                (30.0..=220.0).contains(&self.heart_rate_bpm),
                "heart rate must be within 30..=220 bpm",
            ),
            (
                0.0 < lo && lo < hi && hi < nyquist,
                "murmur band must satisfy 0 < low < high < fs/2",
            ),
            (
                self.duration_s > 0.0 && self.duration_s.is_finite(),
                "duration must be positive",
            ),
            (self.fs_hz > 0, "sample rate must be positive"),
            (self.snr_db.is_finite(), "SNR must be finite"),
            (
                self.murmur_amplitude >= 0.0 && self.murmur_amplitude.is_finite(),
                "murmur amplitude must be non-negative",
            ),
            (
                self.s1_hz > 0.0
                    && self.s1_hz < nyquist
                    && self.s2_hz > 0.0
                    && self.s2_hz < nyquist,
                "burst frequencies must lie below fs/2",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidSpec((*msg).to_string())),
            None => Ok(()),
        }
    }

    pub fn period_s(&self) -> f64 {
        60.0 / self.heart_rate_bpm
    }

    /// S1 onset times inside the recording.
    pub fn s1_onsets(&self) -> Vec<f64> {
        let t = self.period_s();
        (0..)
            .map(|k| FIRST_BEAT_S + k as f64 * t)
            .take_while(|&s| s < self.duration_s)
            .collect()
    }

    /// `(start, end)` windows the murmur may occupy, in seconds.
    pub fn murmur_windows(&self, kind: MurmurKind) -> Vec<(f64, f64)> {
        let t = self.period_s();
        let windows = self.s1_onsets().into_iter().map(|s1| match kind {
            MurmurKind::None => (0.0, 0.0),
            MurmurKind::Systolic => (s1 + BURST_S + GUARD_S, s1 + SYSTOLE_FRACTION * t - GUARD_S),
            MurmurKind::Diastolic => (
                s1 + SYSTOLE_FRACTION * t + BURST_S + GUARD_S,
                s1 + t - GUARD_S,
            ),
        });
        windows
            .map(|(a, b)| (a, b.min(self.duration_s)))
            .filter(|(a, b)| b > a)
            .collect()
    }
}

fn add_burst(out: &mut [f64], fs: f64, onset: f64, freq: f64) {
    let start = (onset * fs).round() as usize;
    let len = (BURST_S * fs).round() as usize;
    for (i, x) in out.iter_mut().skip(start).take(len).enumerate() {
        let t = i as f64 / fs;
        *x += (-t / BURST_DECAY_S).exp() * (TAU * freq * t).sin();
    }
}

fn add_band_noise(
    out: &mut [f64],
    fs: f64,
    window: (f64, f64),
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
) {
    let (lo, hi) = spec.murmur_band_hz;
    let comps: Vec<(f64, f64)> = (0..MURMUR_COMPONENTS)
        .map(|_| (rng.gen_range(lo..hi), rng.gen_range(0.0..TAU)))
        .collect();
    // Sum of M unit sinusoids has RMS sqrt(M/2).
    let scale = spec.murmur_amplitude / (MURMUR_COMPONENTS as f64 / 2.0).sqrt();
    let start = (window.0 * fs).ceil() as usize;
    let end = ((window.1 * fs).floor() as usize).min(out.len());
    if end <= start + 1 {
        return;
    }
    let n = (end - start) as f64;
    for (i, x) in out[start..end].iter_mut().enumerate() {
        let t = (start + i) as f64 / fs;
        let taper = 0.5 - 0.5 * (TAU * i as f64 / (n - 1.0)).cos();
        let v: f64 = comps.iter().map(|(f, ph)| (TAU * f * t + ph).sin()).sum();
        *x += scale * taper * v;
    }
}

/// Renders one recording.
pub fn generate(spec: &SynthSpec) -> Result<Recording> {
    spec.validate()?;
    let fs = f64::from(spec.fs_hz);
    let n = (spec.duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = vec![0.0; n];
    for s1 in spec.s1_onsets() {
        add_burst(&mut x, fs, s1, spec.s1_hz);
        add_burst(
            &mut x,
            fs,
            s1 + SYSTOLE_FRACTION * spec.period_s(),
            spec.s2_hz,
        );
    }
    for w in spec.murmur_windows(spec.murmur) {
        add_band_noise(&mut x, fs, w, spec, &mut rng);
    }
    let power = x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
    let sigma = (power / 10f64.powf(spec.snr_db / 10.0)).sqrt();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        for v in &mut x {
            *v += normal.sample(&mut rng);
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    Ok(Recording::new(spec.fs_hz, x))
}

/// Which sites of a positive patient carry the murmur.
#[derive(Debug, Clone, PartialEq)]
pub enum MurmurSites {
    All,
    /// A per-patient random subset of this many sites.
    RandomSubset(usize),
    Only(Vec<Site>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub positive_fraction: f64,
    pub sites: Vec<Site>,
    /// Template for every recording. Positives use its murmur kind, or a
    /// systolic murmur when it is `None`.
    pub base: SynthSpec,
    pub seed: u64,
    /// Half-width of the uniform per-patient heart-rate jitter.
    pub heart_rate_jitter_bpm: f64,
    pub murmur_sites: MurmurSites,
    /// Chance that a recording is degraded by 10 dB of SNR and flagged
    /// unsatisfactory.
    pub unsatisfactory_fraction: f64,
}

impl CohortSpec {
    pub fn new(
        n_patients: usize,
        positive_fraction: f64,
        sites: Vec<Site>,
        base: SynthSpec,
        seed: u64,
    ) -> Self {
        Self {
            n_patients,
            positive_fraction,
            sites,
            base,
            seed,
            heart_rate_jitter_bpm: 12.0,
            murmur_sites: MurmurSites::All,
            unsatisfactory_fraction: 0.0,
        }
    }
}

/// Degradation applied to recordings flagged unsatisfactory.
pub const UNSATISFACTORY_SNR_DROP_DB: f64 = 10.0;

/// Generates a labelled cohort with in-memory recordings.
pub fn generate_cohort(
    n_patients: usize,
    positive_fraction: f64,
    sites: &[Site],
    base: &SynthSpec,
    seed: u64,
) -> Result<DatasetManifest> {
    generate_cohort_with(&CohortSpec::new(
        n_patients,
        positive_fraction,
        sites.to_vec(),
        base.clone(),
        seed,
    ))
}

pub fn generate_cohort_with(c: &CohortSpec) -> Result<DatasetManifest> {
    if c.n_patients < 2 {
        return Err(Error::InvalidSpec(
            "a cohort needs at least two patients".into(),
        ));
    }
    if !(c.positive_fraction > 0.0 && c.positive_fraction < 1.0) {
        return Err(Error::InvalidSpec(
            "positive fraction must lie in (0, 1)".into(),
        ));
    }
    if c.sites.is_empty() {
        return Err(Error::InvalidSpec("no sites".into()));
    }
    if !(0.0..=1.0).contains(&c.unsatisfactory_fraction) {
        return Err(Error::InvalidSpec(
            "unsatisfactory fraction must lie in [0, 1]".into(),
        ));
    }
    if let MurmurSites::RandomSubset(k) = c.murmur_sites {
        if k == 0 || k > c.sites.len() {
            return Err(Error::InvalidSpec(format!(
                "cannot pick {k} of {} sites",
                c.sites.len()
            )));
        }
    }
    c.base.validate()?;
    let positive_kind = match c.base.murmur {
        MurmurKind::None => MurmurKind::Systolic,
        k => k,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let n_pos = (c.n_patients as f64 * c.positive_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..c.n_patients)
        .map(|i| {
            if i < n_pos {
                Label::Positive
            } else {
                Label::Negative
            }
        })
        .collect();
    labels.shuffle(&mut rng);

    let mut entries = Vec::with_capacity(c.n_patients);
    for (i, &label) in labels.iter().enumerate() {
        let jitter = if c.heart_rate_jitter_bpm > 0.0 {
            rng.gen_range(-c.heart_rate_jitter_bpm..=c.heart_rate_jitter_bpm)
        } else {
            0.0
        };
        let hr = (c.base.heart_rate_bpm + jitter).clamp(30.0, 220.0);
        let murmur_sites: Vec<Site> = match &c.murmur_sites {
            MurmurSites::All => c.sites.clone(),
            MurmurSites::RandomSubset(k) => {
                c.sites.choose_multiple(&mut rng, *k).copied().collect()
            }
            MurmurSites::Only(s) => s.clone(),
        };
        let mut recordings = Vec::with_capacity(c.sites.len());
        for &site in &c.sites {
            let unsatisfactory = rng.gen_bool(c.unsatisfactory_fraction);
            let spec = SynthSpec {
                heart_rate_bpm: hr,
                murmur: if label.is_positive() && murmur_sites.contains(&site) {
                    positive_kind
                } else {
                    MurmurKind::None
                },
                snr_db: c.base.snr_db
                    - if unsatisfactory {
                        UNSATISFACTORY_SNR_DROP_DB
                    } else {
                        0.0
                    },
                seed: rng.gen(),
                ..c.base.clone()
            };
            recordings.push(RecordingRef {
                site,
                quality: if unsatisfactory {
                    Quality::Unsatisfactory
                } else {
                    Quality::Satisfactory
                },
                source: RecordingSource::Memory(Arc::new(generate(&spec)?)),
            });
        }
        entries.push(PatientRecord {
            patient_id: format!("p{i:04}"),
            label,
            recordings,
            demographics: Default::default(),
        });
    }
    DatasetManifest::new(entries, DataSource::Synthetic)
}

/// Writes every in-memory recording of `cohort` to `dir/wav/` and the
/// manifest to `dir/manifest.csv` with paths relative to `dir`. Returns
/// the file-backed manifest.
pub fn write_cohort(cohort: &DatasetManifest, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir.join("wav"))?;
    let mut relative = cohort.clone();
    for patient in &mut relative.entries {
        for rec in &mut patient.recordings {
            let RecordingSource::Memory(signal) = &rec.source else {
                continue;
            };
            let rel = Path::new("wav").join(format!("{}_{}.wav", patient.patient_id, rec.site));
            write_wav(dir.join(&rel), signal)?;
            rec.source = RecordingSource::File(rel);
        }
    }
    write_manifest(&dir.join("manifest.csv"), &relative)?;
    let mut absolute = relative;
    for rec in absolute
        .entries
        .iter_mut()
        .flat_map(|p| p.recordings.iter_mut())
    {
        if let RecordingSource::File(rel) = &rec.source {
            rec.source = RecordingSource::File(dir.join(rel));
        }
    }
    Ok(absolute)
}
