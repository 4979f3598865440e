//! Finite-difference checks of each differentiable operation on randomized
//! small shapes, plus a sampled check of the full model.

use icad_core::matrix::Matrix;
use icad_core::model::{forward_on_tape, ModelConfig, ModelParams};
use icad_core::ndnum::{AttentionMask, AttentionWeights, Tape, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check, project, random_tensor, rel_err, Report, STEP};

pub const SEEDS: u64 = 20;

pub type OpCheck = fn(&mut ChaCha8Rng) -> Report;

pub fn op_checks() -> Vec<(&'static str, OpCheck)> {
    vec![
        ("linear", linear_gradients),
        ("gelu", gelu_gradients),
        ("softmax", softmax_gradients),
        ("layer_norm", layer_norm_gradients),
        ("masked_attention", masked_attention_gradients),
        ("cross_entropy", cross_entropy_gradients),
        ("select_rows", select_rows_and_residual_gradients),
        ("block", two_layer_block_gradients),
    ]
}

/// Runs `one` on seeds `0..SEEDS` and returns the worst report.
pub fn worst_over_seeds(mut one: impl FnMut(&mut ChaCha8Rng) -> Report) -> Report {
    let mut worst = Report {
        max_rel_err: 0.0,
        checked: 0,
    };
    for seed in 0..SEEDS {
        let r = one(&mut ChaCha8Rng::seed_from_u64(seed));
        worst.max_rel_err = worst.max_rel_err.max(r.max_rel_err);
        worst.checked += r.checked;
    }
    worst
}

pub fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> AttentionMask {
    let mut allowed: Vec<bool> = (0..n * n).map(|_| rng.random_bool(0.6)).collect();
    for i in 0..n {
        let j = rng.random_range(0..n);
        allowed[i * n + j] = true;
    }
    AttentionMask::new(n, allowed).unwrap()
}

pub fn linear_gradients(rng: &mut ChaCha8Rng) -> Report {
    let (n, p, q) = (
        rng.random_range(1..=8),
        rng.random_range(1..=8),
        rng.random_range(1..=8),
    );
    let proj = random_tensor(rng, &[n, q], 1.0);
    let inputs = [
        random_tensor(rng, &[n, p], 1.0),
        random_tensor(rng, &[p, q], 1.0),
        random_tensor(rng, &[q], 1.0),
    ];
    check(
        &inputs,
        |t, v| {
            let y = t.linear(v[0], v[1], v[2]).unwrap();
            project(t, y, &proj)
        },
        None,
        rng,
    )
}

pub fn gelu_gradients(rng: &mut ChaCha8Rng) -> Report {
    let shape = [rng.random_range(1..=8), rng.random_range(1..=8)];
    let proj = random_tensor(rng, &shape, 1.0);
    let inputs = [random_tensor(rng, &shape, 3.0)];
    check(
        &inputs,
        |t, v| {
            let y = t.gelu(v[0]);
            project(t, y, &proj)
        },
        None,
        rng,
    )
}

pub fn softmax_gradients(rng: &mut ChaCha8Rng) -> Report {
    let shape = [rng.random_range(1..=8), rng.random_range(1..=8)];
    let proj = random_tensor(rng, &shape, 1.0);
    let inputs = [random_tensor(rng, &shape, 3.0)];
    check(
        &inputs,
        |t, v| {
            let y = t.softmax(v[0]).unwrap();
            project(t, y, &proj)
        },
        None,
        rng,
    )
}

pub fn layer_norm_gradients(rng: &mut ChaCha8Rng) -> Report {
    let (n, h) = (rng.random_range(1..=8), rng.random_range(2..=8));
    let proj = random_tensor(rng, &[n, h], 1.0);
    let inputs = [
        random_tensor(rng, &[n, h], 2.0),
        random_tensor(rng, &[h], 1.5),
        random_tensor(rng, &[h], 1.0),
    ];
    check(
        &inputs,
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            project(t, y, &proj)
        },
        None,
        rng,
    )
}

pub fn masked_attention_gradients(rng: &mut ChaCha8Rng) -> Report {
    let heads = rng.random_range(1..=2);
    let h = heads * rng.random_range(1..=4);
    let n = rng.random_range(1..=8);
    let mask = random_mask(rng, n);
    let proj = random_tensor(rng, &[n, h], 1.0);
    let mut inputs = vec![random_tensor(rng, &[n, h], 1.0)];
    for _ in 0..4 {
        inputs.push(random_tensor(rng, &[h, h], 0.8));
        inputs.push(random_tensor(rng, &[h], 0.3));
    }
    check(
        &inputs,
        |t, v| {
            let w = AttentionWeights {
                wq: v[1],
                bq: v[2],
                wk: v[3],
                bk: v[4],
                wv: v[5],
                bv: v[6],
                wo: v[7],
                bo: v[8],
            };
            let y = t.masked_attention(v[0], &w, &mask, heads).unwrap();
            project(t, y, &proj)
        },
        None,
        rng,
    )
}

pub fn cross_entropy_gradients(rng: &mut ChaCha8Rng) -> Report {
    let n = rng.random_range(1..=8);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let inputs = [random_tensor(rng, &[n, 2], 4.0)];
    check(&inputs, |t, v| t.cross_entropy(v[0], &labels).unwrap(), None, rng)
}

pub fn select_rows_and_residual_gradients(rng: &mut ChaCha8Rng) -> Report {
    let (n, h) = (rng.random_range(2..=8), rng.random_range(1..=8));
    let rows: Vec<usize> = (0..rng.random_range(1..=n)).map(|_| rng.random_range(0..n)).collect();
    let proj = random_tensor(rng, &[rows.len(), h], 1.0);
    let inputs = [random_tensor(rng, &[n, h], 1.0), random_tensor(rng, &[n, h], 1.0)];
    check(
        &inputs,
        |t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            let g = t.gelu(s);
            let y = t.select_rows(g, &rows).unwrap();
            project(t, y, &proj)
        },
        None,
        rng,
    )
}

/// linear → gelu → layer_norm → linear → cross_entropy
pub fn two_layer_block(t: &mut Tape<f64>, v: &[Var], labels: &[usize]) -> Var {
    let h1 = t.linear(v[0], v[1], v[2]).unwrap();
    let a = t.gelu(h1);
    let n = t.layer_norm(a, v[3], v[4], 1e-5).unwrap();
    let logits = t.linear(n, v[5], v[6]).unwrap();
    t.cross_entropy(logits, labels).unwrap()
}

pub fn two_layer_block_gradients(rng: &mut ChaCha8Rng) -> Report {
    let (n, p, h) = (
        rng.random_range(1..=8),
        rng.random_range(1..=8),
        rng.random_range(2..=8),
    );
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let inputs = [
        random_tensor(rng, &[n, p], 1.0),
        random_tensor(rng, &[p, h], 1.0),
        random_tensor(rng, &[h], 0.5),
        random_tensor(rng, &[h], 1.5),
        random_tensor(rng, &[h], 0.5),
        random_tensor(rng, &[h, 2], 1.0),
        random_tensor(rng, &[2], 0.5),
    ];
    check(&inputs, |t, v| two_layer_block(t, v, &labels), None, rng)
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    Matrix::new(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Mean query cross-entropy of the full network in f64, checked on
/// `coords` random coordinates of every parameter tensor.
pub fn model_check(config: ModelConfig, coords: usize, rng: &mut ChaCha8Rng) -> Report {
    let mut params = ModelParams::<f64>::init(config.clone(), rng).unwrap();
    let d = rng.random_range(1..=config.d_max);
    let (n_ctx, n_q) = (8, 4);
    let context = random_rows(rng, n_ctx, d);
    let query = random_rows(rng, n_q, d);
    let labels: Vec<usize> = (0..n_q).map(|i| i % 2).collect();
    let loss_of = |p: &ModelParams<f64>, trainable: bool| {
        let mut tape = Tape::new();
        let vars = p.register(&mut tape, trainable);
        let logits = forward_on_tape(&mut tape, &vars, p.config(), &context, &query).unwrap();
        let loss = tape.cross_entropy(logits, &labels).unwrap();
        (tape, vars, loss)
    };
    let (tape, vars, loss) = loss_of(&params, true);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .all()
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| {
            grads
                .get(v)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();
    let eval = |p: &ModelParams<f64>| {
        let (tape, _, loss) = loss_of(p, false);
        tape.value(loss).data()[0]
    };
    let mut report = Report {
        max_rel_err: 0.0,
        checked: 0,
    };
    for (i, grad) in analytic.iter().enumerate() {
        let len = params.tensors()[i].len();
        for c in sample(rng, len, coords.min(len)).into_vec() {
            let orig = params.tensors()[i].data()[c];
            params.tensors_mut()[i].data_mut()[c] = orig + STEP;
            let up = eval(&params);
            params.tensors_mut()[i].data_mut()[c] = orig - STEP;
            let down = eval(&params);
            params.tensors_mut()[i].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            report.max_rel_err = report.max_rel_err.max(rel_err(grad[c], numeric));
            report.checked += 1;
        }
    }
    report
}
