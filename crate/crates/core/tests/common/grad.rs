//! Finite-difference gradient cases for every tape operation and a
//! small network.

use super::{
    away_from_zero, central_diff, distinct, max_rel_err, norm_rel_err, print_line, uniform,
};
use pcgnet_core::autodiff::{BnMode, Tape, Tensor, Var};
use pcgnet_core::model::{HeadKind, InceptionModuleConfig, Mode, Model, NetworkConfig, ParamKind};
use pcgnet_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SHAPES_PER_OP: usize = 25;
pub const OP_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-3;
const STEP: f64 = 1e-3;
/// Small enough that no ReLU or max-pool decision flips inside the stencil.
const NET_STEP: f64 = 1e-6;
const FLOOR: f64 = 1e-5;

/// Records `build` on a fresh tape and reduces its output to a scalar
/// with `coeffs` (or uses it directly when already scalar).
fn scalar_loss<F>(
    inputs: &[Tensor],
    grad: bool,
    coeffs: &[f64],
    build: &F,
) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
    let y = build(&mut tape, &vars)?;
    let loss = if tape.value(y).len() == 1 {
        y
    } else {
        tape.dot(y, coeffs)?
    };
    Ok((tape, vars, loss))
}

/// Maximum relative error between tape gradients and central differences
/// over every input listed in `check`.
fn check_op<F>(
    rng: &mut ChaCha8Rng,
    inputs: Vec<Tensor>,
    check: &[usize],
    step: f64,
    build: F,
) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let out_len = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let y = build(&mut tape, &vars).unwrap();
        tape.value(y).len()
    };
    let coeffs = uniform(rng, out_len, -1.0, 1.0);
    let (mut tape, vars, loss) = scalar_loss(&inputs, true, &coeffs, &build).unwrap();
    tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for &i in check {
        let analytic = tape.grad(vars[i]).unwrap().to_vec();
        let numeric = central_diff(
            |x| {
                let mut probe = inputs.clone();
                probe[i] = Tensor::new(inputs[i].shape().to_vec(), x.to_vec()).unwrap();
                let (t, _, l) = scalar_loss(&probe, false, &coeffs, &build).unwrap();
                t.value(l).data()[0]
            },
            inputs[i].data(),
            step,
        );
        worst = worst.max(max_rel_err(&analytic, &numeric, FLOOR));
    }
    worst
}

fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn report(name: &str, errors: &[f64]) {
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    let pass = errors.len() >= 20 && worst <= OP_TOL;
    print_line(
        &format!("gradcheck {name}"),
        pass,
        &format!(
            "{} shapes, max relative error {worst:.3e} (limit {OP_TOL:e})",
            errors.len()
        ),
    );
    assert!(pass, "{name}: max relative error {worst:e}");
}

pub fn run(name: &str, seed: u64, mut case: impl FnMut(&mut ChaCha8Rng) -> f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let errors: Vec<f64> = (0..SHAPES_PER_OP).map(|_| case(&mut rng)).collect();
    report(name, &errors);
}

fn dims3(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.gen_range(1..4),
        rng.gen_range(1..4),
        rng.gen_range(1..12),
    )
}

pub fn conv1d(rng: &mut ChaCha8Rng) -> f64 {
    let (b, c_in, len) = dims3(rng);
    let c_out = rng.gen_range(1..4);
    let k = rng.gen_range(1..8);
    let bias = rng.gen::<bool>();
    let mut inputs = vec![
        t(&[b, c_in, len], uniform(rng, b * c_in * len, -1.0, 1.0)),
        t(&[c_out, c_in, k], uniform(rng, c_out * c_in * k, -1.0, 1.0)),
    ];
    if bias {
        inputs.push(t(&[c_out], uniform(rng, c_out, -1.0, 1.0)));
    }
    let check: Vec<usize> = (0..inputs.len()).collect();
    check_op(rng, inputs, &check, STEP, move |tape, v| {
        tape.conv1d(v[0], v[1], v.get(2).copied())
    })
}

pub fn maxpool1d(rng: &mut ChaCha8Rng) -> f64 {
    let (b, c, len) = dims3(rng);
    let window = rng.gen_range(1..6);
    let x = distinct(rng, b * c * len, 0.01);
    check_op(rng, vec![t(&[b, c, len], x)], &[0], STEP, move |tape, v| {
        tape.maxpool1d(v[0], window)
    })
}

pub fn global_avg_pool(rng: &mut ChaCha8Rng) -> f64 {
    let (b, c, len) = dims3(rng);
    let x = uniform(rng, b * c * len, -1.0, 1.0);
    check_op(rng, vec![t(&[b, c, len], x)], &[0], STEP, |tape, v| {
        tape.global_avg_pool(v[0])
    })
}

pub fn batchnorm_train(rng: &mut ChaCha8Rng) -> f64 {
    let (b, c, len) = dims3(rng);
    // A group of two normalizes to ±1 with a gradient that is almost all
    // epsilon; keep at least four values per channel.
    let len = len.max(4usize.div_ceil(b));
    let inputs = vec![
        t(&[b, c, len], uniform(rng, b * c * len, -1.0, 1.0)),
        t(&[c], uniform(rng, c, 0.5, 1.5)),
        t(&[c], uniform(rng, c, -0.5, 0.5)),
    ];
    check_op(rng, inputs, &[0, 1, 2], STEP, |tape, v| {
        Ok(tape.batchnorm1d(v[0], v[1], v[2], BnMode::Train)?.0)
    })
}

pub fn batchnorm_eval(rng: &mut ChaCha8Rng) -> f64 {
    let (b, c, len) = dims3(rng);
    let mean = uniform(rng, c, -0.5, 0.5);
    let var = uniform(rng, c, 0.2, 2.0);
    let inputs = vec![
        t(&[b, c, len], uniform(rng, b * c * len, -1.0, 1.0)),
        t(&[c], uniform(rng, c, 0.5, 1.5)),
        t(&[c], uniform(rng, c, -0.5, 0.5)),
    ];
    check_op(rng, inputs, &[0, 1, 2], STEP, move |tape, v| {
        Ok(tape
            .batchnorm1d(
                v[0],
                v[1],
                v[2],
                BnMode::Eval {
                    mean: &mean,
                    var: &var,
                },
            )?
            .0)
    })
}

pub fn relu(rng: &mut ChaCha8Rng) -> f64 {
    let (b, c, len) = dims3(rng);
    let x = away_from_zero(rng, b * c * len, 0.01);
    check_op(rng, vec![t(&[b, c, len], x)], &[0], STEP, |tape, v| {
        Ok(tape.relu(v[0]))
    })
}

pub fn sigmoid(rng: &mut ChaCha8Rng) -> f64 {
    let (b, k) = (rng.gen_range(1..6), rng.gen_range(1..5));
    let x = uniform(rng, b * k, -6.0, 6.0);
    check_op(rng, vec![t(&[b, k], x)], &[0], STEP, |tape, v| {
        Ok(tape.sigmoid(v[0]))
    })
}

pub fn softmax(rng: &mut ChaCha8Rng) -> f64 {
    let (b, k) = (rng.gen_range(1..6), rng.gen_range(2..6));
    let x = uniform(rng, b * k, -4.0, 4.0);
    check_op(rng, vec![t(&[b, k], x)], &[0], STEP, |tape, v| {
        tape.softmax(v[0])
    })
}

pub fn add(rng: &mut ChaCha8Rng) -> f64 {
    let (b, c, len) = dims3(rng);
    let n = b * c * len;
    let inputs = vec![
        t(&[b, c, len], uniform(rng, n, -1.0, 1.0)),
        t(&[b, c, len], uniform(rng, n, -1.0, 1.0)),
    ];
    check_op(rng, inputs, &[0, 1], STEP, |tape, v| tape.add(v[0], v[1]))
}

pub fn concat_channels(rng: &mut ChaCha8Rng) -> f64 {
    let (b, _, len) = dims3(rng);
    let parts = rng.gen_range(1..4);
    let inputs: Vec<Tensor> = (0..parts)
        .map(|_| {
            let c = rng.gen_range(1..4);
            t(&[b, c, len], uniform(rng, b * c * len, -1.0, 1.0))
        })
        .collect();
    let check: Vec<usize> = (0..parts).collect();
    check_op(rng, inputs, &check, STEP, |tape, v| tape.concat_channels(v))
}

pub fn dense(rng: &mut ChaCha8Rng) -> f64 {
    let (b, f, k) = (
        rng.gen_range(1..5),
        rng.gen_range(1..8),
        rng.gen_range(1..4),
    );
    let bias = rng.gen::<bool>();
    let mut inputs = vec![
        t(&[b, f], uniform(rng, b * f, -1.0, 1.0)),
        t(&[k, f], uniform(rng, k * f, -1.0, 1.0)),
    ];
    if bias {
        inputs.push(t(&[k], uniform(rng, k, -1.0, 1.0)));
    }
    let check: Vec<usize> = (0..inputs.len()).collect();
    check_op(rng, inputs, &check, STEP, move |tape, v| {
        tape.dense(v[0], v[1], v.get(2).copied())
    })
}

fn one_hot(rng: &mut ChaCha8Rng, b: usize, k: usize) -> Tensor {
    let mut data = vec![0.0; b * k];
    for row in data.chunks_exact_mut(k) {
        row[rng.gen_range(0..k)] = 1.0;
    }
    t(&[b, k], data)
}

pub fn weighted_cce_through_softmax(rng: &mut ChaCha8Rng) -> f64 {
    let (b, k) = (rng.gen_range(1..6), rng.gen_range(2..5));
    let targets = one_hot(rng, b, k);
    let weights = uniform(rng, k, 0.3, 2.0);
    let logits = uniform(rng, b * k, -3.0, 3.0);
    check_op(rng, vec![t(&[b, k], logits)], &[0], STEP, move |tape, v| {
        let p = tape.softmax(v[0])?;
        tape.weighted_cce(p, &targets, &weights)
    })
}

pub fn weighted_cce_on_probabilities(rng: &mut ChaCha8Rng) -> f64 {
    let (b, k) = (rng.gen_range(1..6), rng.gen_range(2..5));
    let targets = one_hot(rng, b, k);
    let weights = uniform(rng, k, 0.3, 2.0);
    let mut p = uniform(rng, b * k, 0.2, 1.0);
    for row in p.chunks_exact_mut(k) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    check_op(rng, vec![t(&[b, k], p)], &[0], 1e-7, move |tape, v| {
        tape.weighted_cce(v[0], &targets, &weights)
    })
}

pub fn weighted_bce_through_sigmoid(rng: &mut ChaCha8Rng) -> f64 {
    let b = rng.gen_range(1..8);
    let targets: Vec<f64> = (0..b).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
    let weights = [rng.gen_range(0.3..2.0), rng.gen_range(0.3..2.0)];
    let logits = uniform(rng, b, -3.0, 3.0);
    check_op(rng, vec![t(&[b, 1], logits)], &[0], STEP, move |tape, v| {
        let p = tape.sigmoid(v[0]);
        tape.weighted_bce(p, &targets, weights)
    })
}

pub fn dot(rng: &mut ChaCha8Rng) -> f64 {
    let (b, c, len) = dims3(rng);
    let n = b * c * len;
    let coeffs = uniform(rng, n, -1.0, 1.0);
    let x = t(&[b, c, len], uniform(rng, n, -1.0, 1.0));
    check_op(rng, vec![x], &[0], STEP, move |tape, v| {
        tape.dot(v[0], &coeffs)
    })
}

fn toy_network(head: HeadKind) -> NetworkConfig {
    NetworkConfig {
        depth: 2,
        residual_period: 2,
        module: InceptionModuleConfig {
            bottleneck_channels: 2,
            kernel_sizes: [3, 5, 8],
            filters_per_branch: 2,
            use_bottleneck: true,
        },
        use_batchnorm: true,
        num_classes: if head == HeadKind::Softmax { 2 } else { 1 },
        head,
        input_length: 24,
        input_channels: 1,
    }
}

fn network_loss(
    model: &Model,
    input: &Tensor,
    targets: &Tensor,
    weights: &[f64],
    grads: bool,
) -> (f64, Vec<(usize, Vec<f64>)>) {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), false);
    let pass = model.forward(&mut tape, x, Mode::Train).unwrap();
    let loss = match model.config().head {
        HeadKind::Softmax => tape.weighted_cce(pass.probs, targets, weights).unwrap(),
        HeadKind::Sigmoid => {
            let t: Vec<f64> = targets.data().chunks_exact(2).map(|r| r[1]).collect();
            tape.weighted_bce(pass.probs, &t, [weights[0], weights[1]])
                .unwrap()
        }
    };
    let value = tape.value(loss).data()[0];
    if !grads {
        return (value, Vec::new());
    }
    tape.backward(loss).unwrap();
    let g = pass
        .param_vars
        .iter()
        .map(|(i, v)| (*i, tape.grad(*v).unwrap().to_vec()))
        .collect();
    (value, g)
}

pub fn whole_network(head: HeadKind, seed: u64) -> f64 {
    let cfg = toy_network(head);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::new(cfg.clone(), seed).unwrap();
    let batch = 3;
    let input = t(
        &[batch, 1, cfg.input_length],
        uniform(&mut rng, batch * cfg.input_length, -1.0, 1.0),
    );
    let targets = t(&[batch, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    let weights = [0.8, 1.4];
    let (_, analytic) = network_loss(&model, &input, &targets, &weights, true);
    let trainable = model
        .params()
        .iter()
        .filter(|p| p.kind == ParamKind::Trainable)
        .count();
    assert_eq!(analytic.len(), trainable);
    let mut all_a = Vec::new();
    let mut all_n = Vec::new();
    for (pi, grad) in &analytic {
        let pi = *pi;
        let base = model.params()[pi].value.data().to_vec();
        let numeric = central_diff(
            |x| {
                let mut m = model.clone();
                m.params_mut()[pi].value.data_mut().copy_from_slice(x);
                network_loss(&m, &input, &targets, &weights, false).0
            },
            &base,
            NET_STEP,
        );
        all_a.extend_from_slice(grad);
        all_n.extend(numeric);
    }
    norm_rel_err(&all_a, &all_n)
}

/// Case generators keyed by label and seed.
pub type Case = fn(&mut ChaCha8Rng) -> f64;

pub const CASES: &[(&str, u64, Case)] = &[
    ("conv1d", 1, conv1d),
    ("maxpool1d", 2, maxpool1d),
    ("global_avg_pool", 3, global_avg_pool),
    ("batchnorm1d (batch statistics)", 4, batchnorm_train),
    ("batchnorm1d (running statistics)", 5, batchnorm_eval),
    ("relu", 6, relu),
    ("sigmoid", 7, sigmoid),
    ("softmax", 8, softmax),
    ("add", 9, add),
    ("concat_channels", 10, concat_channels),
    ("dense", 11, dense),
    ("weighted_cce", 12, weighted_cce_through_softmax),
    ("weighted_cce (direct)", 13, weighted_cce_on_probabilities),
    ("weighted_bce", 14, weighted_bce_through_sigmoid),
    ("dot", 15, dot),
];

/// Worst error over all shapes of one case.
pub fn worst(seed: u64, case: Case) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..SHAPES_PER_OP)
        .map(|_| case(&mut rng))
        .fold(0.0, f64::max)
}
