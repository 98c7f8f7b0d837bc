use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pcgnet_core::evaluate::{
    ablate_sites, quality_slice, score_set, Level, MetricsReport, ProtocolConfig, Splits,
};
use pcgnet_core::model::{load_weights, parse_pairs, save_weights, Model};
use pcgnet_core::signal_io::{
    patient_split, read_manifest, read_physionet_dir, write_manifest, DataSource, DatasetManifest,
    Quality, RecordingSource, Site,
};
use pcgnet_core::synth::{generate_cohort_with, write_cohort, CohortSpec, MurmurSites, SynthSpec};
use pcgnet_core::train::{class_weights, fit, write_history};
use pcgnet_core::{Error, PreparedSet, Result};

use crate::run_config::RunConfig;
use crate::{
    EvaluateArgs, Format, LevelArg, PrepareArgs, QualityArg, SiteArg, SynthArgs, TrainArgs,
};

fn absolute(path: &Path) -> Result<PathBuf> {
    Ok(path.canonicalize()?)
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    read_manifest(&absolute(path)?, DataSource::Bangladesh)
}

fn check_audio(manifest: &DatasetManifest) -> Result<()> {
    for rec in manifest.entries.iter().flat_map(|p| &p.recordings) {
        if let RecordingSource::File(path) = &rec.source {
            if !path.is_file() {
                return Err(Error::MissingAudio(path.clone()));
            }
        }
    }
    Ok(())
}

fn write_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let manifest = match args.format {
        Format::Physionet2022 => {
            let scan = read_physionet_dir(&args.dataset_dir)?;
            log::info!("skipped {} unknown", scan.skipped_unknown);
            scan.manifest
        }
        Format::Native => {
            let m = load_manifest(&args.dataset_dir.join("manifest.csv"))?;
            check_audio(&m)?;
            m
        }
    };
    if manifest.is_empty() {
        return Err(Error::ConfigInvalid(format!(
            "no patients found in {}",
            args.dataset_dir.display()
        )));
    }
    write_parent(&args.out)?;
    write_manifest(&args.out, &manifest)?;
    let [neg, pos] = manifest.class_counts();
    log::info!(
        "wrote {} patients ({pos} positive, {neg} negative), {} recordings to {}",
        manifest.len(),
        manifest.recording_count(),
        args.out.display()
    );
    Ok(())
}

/// Config file, then explicit flags, then `--set` overrides.
fn run_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut pairs = match &args.config {
        Some(path) => parse_pairs(&fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    let flags = [
        ("max_epochs", args.max_epochs.map(|v| v.to_string())),
        ("learning_rate", args.learning_rate.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            pairs.insert(k.to_string(), v);
        }
    }
    for item in &args.set {
        let (k, v) = item.split_once('=').ok_or_else(|| {
            Error::ConfigInvalid(format!("--set expects KEY=VALUE, got {item:?}"))
        })?;
        pairs.insert(k.trim().to_string(), v.trim().to_string());
    }
    pairs.insert(
        "manifest".into(),
        absolute(&args.manifest)?.display().to_string(),
    );
    pairs.insert("out_dir".into(), args.out.display().to_string());
    match &args.init_weights {
        Some(p) => pairs.insert("init_weights".into(), absolute(p)?.display().to_string()),
        None => pairs.remove("init_weights"),
    };
    RunConfig::from_pairs(&pairs)
}

struct Prepared {
    train: PreparedSet,
    val: PreparedSet,
    test: PreparedSet,
}

/// Splits the manifest, writes the three split manifests into the run
/// directory and preprocesses every recording.
fn split_and_prepare(cfg: &RunConfig) -> Result<Prepared> {
    let manifest = read_manifest(&cfg.manifest, DataSource::Bangladesh)?;
    let (train, val, test) = patient_split(&manifest, &cfg.split)?;
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        write_manifest(&cfg.out_dir.join(format!("{name}.csv")), part)?;
        log::info!(
            "{name}: {} patients, {} recordings",
            part.len(),
            part.recording_count()
        );
    }
    let started = Instant::now();
    let prepared = Prepared {
        train: PreparedSet::from_manifest(&train, &cfg.preprocess)?,
        val: PreparedSet::from_manifest(&val, &cfg.preprocess)?,
        test: PreparedSet::from_manifest(&test, &cfg.preprocess)?,
    };
    log::debug!(
        "preprocessing took {:.1} s",
        started.elapsed().as_secs_f64()
    );
    Ok(prepared)
}

pub fn train(args: &TrainArgs, finetune: bool) -> Result<()> {
    if finetune && args.init_weights.is_none() {
        return Err(Error::ConfigInvalid(
            "finetune requires --init-weights".into(),
        ));
    }
    let cfg = run_config(args)?;
    // Incompatible weights should fail before any data is loaded.
    let init = cfg
        .init_weights
        .as_ref()
        .map(|p| load_weights(p, &cfg.network))
        .transpose()?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    let data = split_and_prepare(&cfg)?;

    let mut model = Model::new(cfg.network.clone(), cfg.init_seed)?;
    if let Some(w) = &init {
        model.load_trunk(w)?;
        model.replace_head(cfg.network.num_classes)?;
    }
    log::info!(
        "{} trainable parameters, fingerprint {:016x}",
        model.trainable_count(),
        cfg.network.fingerprint()
    );
    let weights = class_weights(&data.train.labels())?;
    let outcome = fit(model, &data.train, &data.val, &cfg.train, &weights)?;
    write_history(cfg.out_dir.join("history.csv"), &outcome.history)?;
    save_weights(&outcome.best, cfg.out_dir.join("best.weights"))?;
    save_weights(&outcome.last, cfg.out_dir.join("final.weights"))?;
    log::info!(
        "best epoch {} of {}{}",
        outcome.best_epoch,
        outcome.history.len(),
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        }
    );
    if !data.test.is_empty() {
        let scored = score_set(&outcome.best, &data.test, 16)?;
        let report = MetricsReport::from_recordings(&scored, Level::Patient)?;
        report.write_dir(cfg.out_dir.join("test"))?;
        log_report("test", &report);
    }
    Ok(())
}

fn log_report(name: &str, r: &MetricsReport) {
    log::info!(
        "{name} ({}-level, n={}): accuracy {:.4}  sensitivity {:.4}  specificity {:.4}  auroc {:.4}",
        r.level.as_str(),
        r.confusion.total(),
        r.accuracy,
        r.sensitivity,
        r.specificity,
        r.auroc
    );
}

fn scores_csv(scored: &[pcgnet_core::evaluate::ScoredRecording]) -> String {
    let mut out = String::from("patient_id,site,label,probability\n");
    for s in scored {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.patient_id, s.site, s.label, s.probability_positive
        );
    }
    out
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let config_path = match &args.config {
        Some(p) => p.clone(),
        None => args
            .weights
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("config.txt"),
    };
    let cfg = RunConfig::read(&config_path)?;
    let model = Model::from_weights(
        cfg.network.clone(),
        &load_weights(&args.weights, &cfg.network)?,
    )?;

    let mut manifest = load_manifest(&args.manifest)?;
    let site = match args.site {
        SiteArg::Av => Some(Site::AV),
        SiteArg::Mv => Some(Site::MV),
        SiteArg::Pv => Some(Site::PV),
        SiteArg::Tv => Some(Site::TV),
        SiteArg::All => None,
    };
    if let Some(s) = site {
        manifest = manifest.filter_site(s);
    }
    match args.quality {
        QualityArg::Satisfactory => manifest = quality_slice(&manifest, Quality::Satisfactory),
        QualityArg::Unsatisfactory => manifest = quality_slice(&manifest, Quality::Unsatisfactory),
        QualityArg::All => {}
    }
    if manifest.is_empty() {
        log::error!("no recordings match the site and quality filters");
        return Err(Error::EmptyDataset);
    }
    let level = match args.level {
        LevelArg::Patient => Level::Patient,
        LevelArg::Recording => Level::Recording,
    };
    let set = PreparedSet::from_manifest(&manifest, &cfg.preprocess)?;
    let scored = score_set(&model, &set, 16)?;
    let report = MetricsReport::from_recordings(&scored, level)?;
    report.write_dir(&args.out)?;
    fs::write(args.out.join("scores.csv"), scores_csv(&scored))?;
    log_report("evaluation", &report);
    Ok(())
}

pub fn ablate(args: &TrainArgs) -> Result<()> {
    let cfg = run_config(args)?;
    let init = cfg
        .init_weights
        .as_ref()
        .map(|p| load_weights(p, &cfg.network))
        .transpose()?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    let data = split_and_prepare(&cfg)?;
    let splits = Splits {
        train: data.train,
        val: data.val,
        test: data.test,
    };
    let protocol = ProtocolConfig {
        network: cfg.network.clone(),
        train: cfg.train.clone(),
        init_seed: cfg.init_seed,
        init_weights: init,
    };
    let reports = ablate_sites(&splits, &protocol)?;
    let mut summary = String::from("site,patients,accuracy,sensitivity,specificity,auroc,epochs\n");
    for r in &reports {
        let name = r.site.map_or("all", |s| s.as_str());
        r.report.write_dir(cfg.out_dir.join(name))?;
        let m = &r.report;
        let _ = writeln!(
            summary,
            "{name},{},{},{},{},{},{}",
            m.confusion.total(),
            m.accuracy,
            m.sensitivity,
            m.specificity,
            m.auroc,
            r.epochs
        );
        log_report(name, m);
    }
    fs::write(cfg.out_dir.join("ablation.csv"), summary)?;
    Ok(())
}

fn parse_band(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidSpec(format!("murmur band must be LOW,HIGH, got {s:?}"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let sites = args
        .sites
        .split(',')
        .map(|s| match s.parse::<Site>() {
            Ok(Site::Unknown) | Err(_) => Err(Error::InvalidSpec(format!("unknown site {s:?}"))),
            Ok(site) => Ok(site),
        })
        .collect::<Result<Vec<_>>>()?;
    let base = SynthSpec {
        heart_rate_bpm: args.heart_rate,
        murmur: args.murmur.parse()?,
        murmur_band_hz: parse_band(&args.murmur_band)?,
        murmur_amplitude: args.murmur_amplitude,
        snr_db: args.snr_db,
        duration_s: args.duration_s,
        fs_hz: args.sample_rate,
        ..SynthSpec::default()
    };
    let murmur_sites = match args.murmur_sites.as_str() {
        "all" => MurmurSites::All,
        n => MurmurSites::RandomSubset(n.parse().map_err(|_| {
            Error::InvalidSpec(format!("murmur sites must be `all` or a count, got {n:?}"))
        })?),
    };
    let spec = CohortSpec {
        heart_rate_jitter_bpm: args.heart_rate_jitter,
        murmur_sites,
        unsatisfactory_fraction: args.unsatisfactory_fraction,
        ..CohortSpec::new(args.patients, args.positive, sites, base, args.seed)
    };
    let cohort = generate_cohort_with(&spec)?;
    write_cohort(&cohort, &args.out)?;
    let [neg, pos] = cohort.class_counts();
    log::info!(
        "wrote {} patients ({pos} positive, {neg} negative), {} recordings to {}",
        cohort.len(),
        cohort.recording_count(),
        args.out.display()
    );
    Ok(())
}
