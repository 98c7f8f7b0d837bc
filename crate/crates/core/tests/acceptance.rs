//! Acceptance criteria. Each test prints one `[PASS]` or `[FAIL]` line;
//! run with `--nocapture` to see them.

mod common;

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use common::{grad, print_line};
use pcgnet_core::dsp::{decimate, zscore, Preprocessor};
use pcgnet_core::evaluate::{
    aggregate_by_patient, aggregate_patient, auroc, evaluate_cohort, per_site_protocol, Level,
    ProtocolConfig, ScoredRecording, Splits,
};
use pcgnet_core::model::{HeadKind, InceptionModuleConfig, Model, ModelWeights, NetworkConfig};
use pcgnet_core::signal_io::{patient_split, DatasetManifest, Label, Recording, Site, SplitSpec};
use pcgnet_core::synth::{
    generate_cohort, generate_cohort_with, CohortSpec, MurmurKind, MurmurSites, SynthSpec,
};
use pcgnet_core::train::{class_weights, fit, TrainConfig};
use pcgnet_core::PreparedSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reduced network used wherever a model is trained here.
fn small_network(input_length: usize) -> NetworkConfig {
    NetworkConfig {
        depth: 3,
        residual_period: 3,
        module: InceptionModuleConfig {
            bottleneck_channels: 4,
            kernel_sizes: [5, 11, 21],
            filters_per_branch: 4,
            use_bottleneck: true,
        },
        use_batchnorm: true,
        num_classes: 2,
        head: HeadKind::Softmax,
        input_length,
        input_channels: 1,
    }
}

fn prepare(cohort: &DatasetManifest, split_seed: u64, pre: &Preprocessor) -> Splits {
    let spec = SplitSpec::new(0.8, 0.1, 0.1, split_seed).unwrap();
    let (train, val, test) = patient_split(cohort, &spec).unwrap();
    Splits {
        train: PreparedSet::from_manifest(&train, pre).unwrap(),
        val: PreparedSet::from_manifest(&val, pre).unwrap(),
        test: PreparedSet::from_manifest(&test, pre).unwrap(),
    }
}

fn synth_base(duration_s: f64, band: (f64, f64)) -> SynthSpec {
    SynthSpec {
        duration_s,
        murmur: MurmurKind::Systolic,
        murmur_band_hz: band,
        ..SynthSpec::default()
    }
}

// ---------------------------------------------------------------------------
// End to end on a synthetic cohort

const E2E_MIN_ACCURACY: f64 = 0.95;
const E2E_MIN_AUROC: f64 = 0.98;
const E2E_BUDGET: Duration = Duration::from_secs(600);

#[test]
fn end_to_end_synthetic_cohort() {
    let start = Instant::now();
    let pre = Preprocessor::new(800, 5.0);
    let net = small_network(pre.output_len());

    // Source task: murmur detection on an independent cohort.
    let source = generate_cohort(
        60,
        0.5,
        &Site::VALVES,
        &synth_base(5.0, (150.0, 400.0)),
        101,
    )
    .unwrap();
    let source = prepare(&source, 11, &pre);
    let pre_cfg = TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 3,
        patience: 2,
        batch_size: 16,
        seed: 1,
        ..TrainConfig::default()
    };
    let weights = class_weights(&source.train.labels()).unwrap();
    let pretrained = fit(
        Model::new(net.clone(), 1).unwrap(),
        &source.train,
        &source.val,
        &pre_cfg,
        &weights,
    )
    .unwrap();
    let trunk = ModelWeights::from_model(&pretrained.best);

    // Target task: 200 patients, 63:37, four sites, 5 s at 4000 Hz.
    let target = generate_cohort(
        200,
        0.63,
        &Site::VALVES,
        &synth_base(5.0, (150.0, 400.0)),
        202,
    )
    .unwrap();
    assert_eq!(target.len(), 200);
    assert_eq!(target.class_counts()[Label::Positive.class_index()], 126);
    let splits = prepare(&target, 22, &pre);
    let test_patients = splits
        .test
        .items
        .iter()
        .map(|i| i.patient_id.as_str())
        .collect::<std::collections::HashSet<_>>()
        .len();
    let cfg = ProtocolConfig {
        network: net,
        train: TrainConfig {
            learning_rate: 3e-3,
            max_epochs: 6,
            patience: 2,
            batch_size: 16,
            seed: 2,
            ..TrainConfig::default()
        },
        init_seed: 2,
        init_weights: Some(trunk),
    };
    let result = per_site_protocol(&splits, None, &cfg).unwrap();
    let elapsed = start.elapsed();
    let r = &result.report;
    let pass = test_patients == 20
        && r.accuracy >= E2E_MIN_ACCURACY
        && r.auroc >= E2E_MIN_AUROC
        && elapsed <= E2E_BUDGET;
    print_line(
        "end-to-end synthetic cohort",
        pass,
        &format!(
            "{test_patients} test patients, accuracy {:.4} (min {E2E_MIN_ACCURACY}), AUROC {:.4} (min {E2E_MIN_AUROC}), \
             sensitivity {:.4}, specificity {:.4}, {} fine-tune epochs, {:.0?} (budget {:.0?})",
            r.accuracy, r.auroc, r.sensitivity, r.specificity, result.epochs, elapsed, E2E_BUDGET
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Gradient correctness

#[test]
fn gradient_correctness() {
    let mut worst_op = ("", 0.0f64);
    for &(name, seed, case) in grad::CASES {
        let e = grad::worst(seed, case);
        if e >= worst_op.1 {
            worst_op = (name, e);
        }
    }
    let worst_net = [(HeadKind::Softmax, 21), (HeadKind::Sigmoid, 23)]
        .into_iter()
        .map(|(h, s)| grad::whole_network(h, s))
        .fold(0.0, f64::max);
    let pass =
        grad::SHAPES_PER_OP >= 20 && worst_op.1 <= grad::OP_TOL && worst_net <= grad::NET_TOL;
    print_line(
        "gradient correctness",
        pass,
        &format!(
            "{} ops x {} shapes, worst op {} at {:.2e} (limit {:e}); depth-2 network {:.2e} (limit {:e})",
            grad::CASES.len(),
            grad::SHAPES_PER_OP,
            worst_op.0,
            worst_op.1,
            grad::OP_TOL,
            worst_net,
            grad::NET_TOL
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Inverse-frequency class weights

#[test]
fn class_weight_oracle() {
    let labels: Vec<Label> = (0..100)
        .map(|i| {
            if i < 63 {
                Label::Negative
            } else {
                Label::Positive
            }
        })
        .collect();
    let w = class_weights(&labels).unwrap();
    // N / (K · count) for N = 100, K = 2.
    let expected = [100.0 / 126.0, 100.0 / 74.0];
    let err = w
        .weights
        .iter()
        .zip(expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let pass = w.weights.len() == 2 && err <= 1e-12;
    print_line(
        "class weights {63, 37}",
        pass,
        &format!(
            "got {:?}, expected {expected:?}, max error {err:.1e} (limit 1e-12)",
            w.weights
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// AUROC against pairwise concordance

fn concordance(scores: &[f64], labels: &[Label]) -> f64 {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.is_positive())
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| !l.is_positive())
        .map(|(s, _)| *s)
        .collect();
    let mut credit = 0.0;
    for p in &pos {
        for n in &neg {
            credit += match p.partial_cmp(n).unwrap() {
                Ordering::Greater => 1.0,
                Ordering::Equal => 0.5,
                Ordering::Less => 0.0,
            };
        }
    }
    credit / (pos.len() * neg.len()) as f64
}

#[test]
fn auroc_matches_pairwise_concordance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut cohorts = 0;
    for c in 0..100 {
        let n = rng.gen_range(2..=500);
        let mut labels: Vec<Label> = (0..n)
            .map(|_| {
                if rng.gen::<bool>() {
                    Label::Positive
                } else {
                    Label::Negative
                }
            })
            .collect();
        labels[0] = Label::Positive;
        labels[1] = Label::Negative;
        let scores: Vec<f64> = match c {
            0 => vec![0.5; n],
            1 => labels
                .iter()
                .map(|l| {
                    if l.is_positive() {
                        rng.gen_range(0.6..1.0)
                    } else {
                        rng.gen_range(0.0..0.4)
                    }
                })
                .collect(),
            2 => labels
                .iter()
                .map(|l| {
                    if l.is_positive() {
                        rng.gen_range(0.0..0.4)
                    } else {
                        rng.gen_range(0.6..1.0)
                    }
                })
                .collect(),
            _ if c % 2 == 0 => (0..n)
                .map(|_| f64::from(rng.gen_range(0..10u8)) / 10.0)
                .collect(),
            _ => (0..n).map(|_| rng.gen::<f64>()).collect(),
        };
        let got = auroc(&scores, &labels).unwrap();
        let want = concordance(&scores, &labels);
        match c {
            0 => assert_eq!(want, 0.5),
            1 => assert_eq!(want, 1.0),
            2 => assert_eq!(want, 0.0),
            _ => {}
        }
        worst = worst.max((got - want).abs());
        cohorts += 1;
    }
    let pass = cohorts == 100 && worst <= 1e-12;
    print_line(
        "AUROC equals pairwise concordance",
        pass,
        &format!("{cohorts} cohorts incl. all-tied and separated, max difference {worst:.1e} (limit 1e-12)"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Patient aggregation

#[test]
fn patient_aggregation_is_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut scored = Vec::new();
    let mut expected = std::collections::BTreeMap::new();
    for p in 0..200 {
        let id = format!("p{p:03}");
        let label = if rng.gen::<bool>() {
            Label::Positive
        } else {
            Label::Negative
        };
        let k = rng.gen_range(1..=4);
        let probs: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
        expected.insert(id.clone(), probs.iter().sum::<f64>() / k as f64);
        for (prob, site) in probs.into_iter().zip(Site::VALVES) {
            scored.push(ScoredRecording {
                patient_id: id.clone(),
                site,
                probability_positive: prob,
                label,
            });
        }
    }
    let base = aggregate_by_patient(&scored).unwrap();
    let mut mean_err: f64 = 0.0;
    for (id, prob, _) in &base {
        mean_err = mean_err.max((prob - expected[id]).abs());
    }
    let mut permutation_exact = true;
    for _ in 0..50 {
        scored.shuffle(&mut rng);
        let mut again = aggregate_by_patient(&scored).unwrap();
        again.sort_by(|a, b| a.0.cmp(&b.0));
        let mut sorted = base.clone();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        permutation_exact &= again
            .iter()
            .zip(&sorted)
            .all(|(a, b)| a.0 == b.0 && a.1.to_bits() == b.1.to_bits());
    }
    let single = aggregate_patient(&[0.2, 0.9, 0.4]).unwrap();
    let pass = base.len() == 200
        && mean_err <= 1e-12
        && permutation_exact
        && (single - 0.5).abs() <= 1e-12;
    print_line(
        "patient probability is the site mean",
        pass,
        &format!("200 patients, max deviation {mean_err:.1e} (limit 1e-12), permutation invariant: {permutation_exact}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Transfer learning

const TRANSFER_TARGET: f64 = 0.9;
const TRANSFER_SEEDS: u64 = 10;
const TRANSFER_MIN_WINS: usize = 8;

/// Faint murmurs in heavy noise: a regime where features learned on a
/// large source cohort matter.
fn faint(duration_s: f64, band: (f64, f64)) -> SynthSpec {
    SynthSpec {
        murmur_amplitude: 0.02,
        snr_db: 10.0,
        ..synth_base(duration_s, band)
    }
}

#[test]
fn pretrained_init_converges_faster() {
    let start = Instant::now();
    let pre = Preprocessor::new(800, 1.0);
    let net = small_network(pre.output_len());

    let source =
        generate_cohort(300, 0.5, &Site::VALVES, &faint(1.0, (150.0, 400.0)), 301).unwrap();
    let source = prepare(&source, 31, &pre);
    let src_cfg = TrainConfig {
        learning_rate: 2e-3,
        max_epochs: 8,
        patience: 8,
        batch_size: 16,
        seed: 3,
        ..TrainConfig::default()
    };
    let w = class_weights(&source.train.labels()).unwrap();
    let pretrained = fit(
        Model::new(net.clone(), 3).unwrap(),
        &source.train,
        &source.val,
        &src_cfg,
        &w,
    )
    .unwrap();
    let trunk = ModelWeights::from_model(&pretrained.best);

    let target =
        generate_cohort(60, 0.63, &Site::VALVES, &faint(1.0, (200.0, 450.0)), 302).unwrap();
    let spec = SplitSpec::new(0.7, 0.3, 0.0, 32).unwrap();
    let (train, val, _) = patient_split(&target, &spec).unwrap();
    let (train, val) = (
        PreparedSet::from_manifest(&train, &pre).unwrap(),
        PreparedSet::from_manifest(&val, &pre).unwrap(),
    );
    let w = class_weights(&train.labels()).unwrap();
    let max_epochs = 6;
    let mut wins = 0;
    let mut trace = Vec::new();
    for seed in 0..TRANSFER_SEEDS {
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            max_epochs,
            patience: max_epochs,
            batch_size: 8,
            seed: 100 + seed,
            ..TrainConfig::default()
        };
        let scratch = Model::new(net.clone(), 200 + seed).unwrap();
        let mut warm = scratch.clone();
        warm.load_trunk(&trunk).unwrap();
        warm.replace_head(2).unwrap();
        let reach = |m: Model| {
            fit(m, &train, &val, &cfg, &w)
                .unwrap()
                .epochs_to_reach(TRANSFER_TARGET)
        };
        let (t, s) = (reach(warm), reach(scratch));
        let won = match (t, s) {
            (Some(t), Some(s)) => t < s,
            (Some(_), None) => true,
            _ => false,
        };
        wins += usize::from(won);
        let show = |e: Option<usize>| e.map_or(format!(">{max_epochs}"), |e| e.to_string());
        trace.push(format!("{}/{}", show(t), show(s)));
    }
    let pass = wins >= TRANSFER_MIN_WINS;
    print_line(
        "pretrained init reaches 0.9 validation accuracy sooner",
        pass,
        &format!(
            "{wins}/{TRANSFER_SEEDS} paired seeds (min {TRANSFER_MIN_WINS}); epochs pretrained/scratch: {}; {:.0?}",
            trace.join(" "),
            start.elapsed()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Preprocessing

fn tone(freq: f64, fs: u32, n: usize) -> Recording {
    Recording::new(
        fs,
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / f64::from(fs)).sin())
            .collect(),
    )
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn preprocessing_invariants() {
    let long = tone(50.0, 4000, 60000);
    let down = decimate(&long, 800).unwrap();
    let length_ok = down.samples.len() == 12000 && down.sample_rate_hz == 800;

    // Stopband starts above the transition band of the 101-tap filter.
    let mut worst_db = f64::INFINITY;
    for f in [425.0, 500.0, 750.0, 1000.0, 1300.0, 1600.0, 1999.0] {
        let input = tone(f, 4000, 60000);
        let out = decimate(&input, 800).unwrap();
        // Skip the filter's start-up and tail.
        let core = &out.samples[100..out.samples.len() - 100];
        let db = 20.0 * (rms(&input.samples) / rms(core)).log10();
        worst_db = worst_db.min(db);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut z_err: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.gen_range(100..20000);
        let offset = rng.gen_range(-50.0..50.0);
        let scale = rng.gen_range(0.01..100.0);
        let x: Vec<f64> = (0..n)
            .map(|_| offset + scale * rng.gen_range(-1.0..1.0))
            .collect();
        let z = zscore(&x).unwrap();
        let mean = z.iter().sum::<f64>() / n as f64;
        let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        z_err = z_err.max(mean.abs()).max((std - 1.0).abs());
    }
    let pass = length_ok && worst_db >= 40.0 && z_err <= 1e-9;
    print_line(
        "preprocessing invariants",
        pass,
        &format!(
            "60000 @4000 Hz -> {} @{} Hz; min stopband attenuation {worst_db:.1} dB (min 40); z-score error {z_err:.1e} (limit 1e-9)",
            down.samples.len(),
            down.sample_rate_hz
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Site ablation

#[test]
fn combined_sites_beat_single_sites() {
    let pre = Preprocessor::new(800, 2.0);
    let mut spec = CohortSpec::new(
        120,
        0.63,
        Site::VALVES.to_vec(),
        synth_base(2.0, (150.0, 400.0)),
        401,
    );
    // Each positive patient's murmur is audible at three of the four
    // sites, so every site misses some positives that the others catch.
    spec.murmur_sites = MurmurSites::RandomSubset(3);
    let cohort = generate_cohort_with(&spec).unwrap();
    let spl = SplitSpec::new(0.6, 0.1, 0.3, 41).unwrap();
    let (train, val, test) = patient_split(&cohort, &spl).unwrap();
    let splits = Splits {
        train: PreparedSet::from_manifest(&train, &pre).unwrap(),
        val: PreparedSet::from_manifest(&val, &pre).unwrap(),
        test: PreparedSet::from_manifest(&test, &pre).unwrap(),
    };
    let cfg = ProtocolConfig {
        network: small_network(pre.output_len()),
        train: TrainConfig {
            learning_rate: 3e-3,
            max_epochs: 6,
            patience: 3,
            batch_size: 16,
            seed: 4,
            ..TrainConfig::default()
        },
        init_seed: 4,
        init_weights: None,
    };
    let combined = per_site_protocol(&splits, None, &cfg).unwrap();
    let mut lines = vec![format!("all {:.3}", combined.report.accuracy)];
    let mut best_single: f64 = 0.0;
    for site in Site::VALVES {
        let r = per_site_protocol(&splits, Some(site), &cfg).unwrap();
        lines.push(format!("{} {:.3}", site.as_str(), r.report.accuracy));
        best_single = best_single.max(r.report.accuracy);
    }
    let pass = combined.report.accuracy >= best_single;
    print_line(
        "combined-site accuracy >= every single site",
        pass,
        &format!("patient accuracy: {}", lines.join(", ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Public-data protocol, outside the blocking suite

/// Evaluates a model pretrained on the public murmur dataset on a
/// held-out 10% patient split. Needs `PCGNET_PHYSIONET_DIR` pointing at the
/// training data directory; run with `--ignored`.
#[test]
#[ignore]
fn physionet_heldout_protocol() {
    let Some(dir) = std::env::var_os("PCGNET_PHYSIONET_DIR") else {
        print_line(
            "public murmur dataset held-out accuracy",
            false,
            "PCGNET_PHYSIONET_DIR not set",
        );
        return;
    };
    let scan = pcgnet_core::signal_io::read_physionet_dir(std::path::Path::new(&dir)).unwrap();
    let pre = Preprocessor::default();
    let splits = prepare(&scan.manifest, 0, &pre);
    let cfg = TrainConfig {
        patience: 15,
        max_epochs: 100,
        ..TrainConfig::default()
    };
    let net = NetworkConfig::default();
    let w = class_weights(&splits.train.labels()).unwrap();
    let out = fit(
        Model::new(net, 0).unwrap(),
        &splits.train,
        &splits.val,
        &cfg,
        &w,
    )
    .unwrap();
    let report = evaluate_cohort(&out.best, &splits.test, Level::Patient).unwrap();
    let pass = (report.accuracy - 0.916).abs() <= 0.05;
    print_line(
        "public murmur dataset held-out accuracy",
        pass,
        &format!(
            "accuracy {:.4} (target 0.916 +/- 0.05), AUROC {:.4}",
            report.accuracy, report.auroc
        ),
    );
}
