//! Central finite-difference gradient oracle. It only ever evaluates forward
//! passes, so it is independent of the reverse sweep it checks.

use icad_core::ndnum::{Tape, Tensor, Var};
use rand::seq::index::sample;
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error; gradients smaller than this are
/// compared absolutely.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct Report {
    pub max_rel_err: f64,
    pub checked: usize,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Checks d(loss)/d(inputs) where `build` maps input vars to a scalar loss.
/// With `max_coords`, a random subset of coordinates per input is checked.
pub fn check<F, R>(inputs: &[Tensor<f64>], build: F, max_coords: Option<usize>, rng: &mut R) -> Report
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
    R: Rng,
{
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.constant(v.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("backward");

    let mut report = Report {
        max_rel_err: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        let coords: Vec<usize> = match max_coords {
            Some(m) if m < input.len() => sample(rng, input.len(), m).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for c in coords {
            let orig = input.data()[c];
            work[i].data_mut()[c] = orig + STEP;
            let up = eval(&work);
            work[i].data_mut()[c] = orig - STEP;
            let down = eval(&work);
            work[i].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            report.max_rel_err = report.max_rel_err.max(rel_err(analytic[c], numeric));
            report.checked += 1;
        }
    }
    report
}

/// Reduces a tensor-valued output to a scalar through a fixed random
/// projection so the whole Jacobian is exercised.
pub fn project(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Var {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).expect("projection shape");
    tape.sum(prod)
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}
