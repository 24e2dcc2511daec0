//! Finite-difference verification of analytic gradients.
//!
//! The check runs entirely in `f64`: the scalar probe loss is a fixed random
//! projection of the graph output, the analytic side is one backward pass,
//! and the numeric side is a Richardson-extrapolated central difference with
//! base step 1e-3. When the h and h/2 differences disagree the perturbation
//! straddles a relu/max-pool kink; the step is shrunk tenfold up to three
//! times, and if that does not help another entry is drawn.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{LayerGraph, Mode, ParamSet};
use crate::tensor::{Result, Tensor};

pub const FD_STEP: f64 = 1e-3;
const SAMPLES_PER_TENSOR: usize = 3;
const INPUT_SAMPLES: usize = 6;
const REDRAWS: usize = 8;
/// Step sizes tried per entry: FD_STEP, FD_STEP/10, ... while the two
/// differences still disagree.
const SHRINKS: i32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub samples: usize,
    /// Name of the entry with the largest error.
    pub worst: String,
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Param { node: usize, idx: usize },
    Input,
}

/// Max relative error between analytic and numeric gradients over sampled
/// parameter and input entries.
pub fn grad_check(graph: &LayerGraph, input: &Tensor<f32>, seed: u64) -> Result<f64> {
    grad_check_report(graph, input, seed).map(|r| r.max_rel_error)
}

pub fn grad_check_report(graph: &LayerGraph, input: &Tensor<f32>, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: ParamSet<'_, f64> = graph.param_set();
    let mut x: Tensor<f64> = input.cast();
    let out = graph.output();

    let trace = graph.forward_with(&params, &x, Mode::Train)?;
    let probe = Tensor::from_fn(trace.output_of(out).shape().to_vec(), |_| rng.gen_range(-1.0..1.0));
    let grads = graph.backward_with(&params, &trace, &[(out, &probe)])?;

    let mut targets = Vec::new();
    for (ni, node) in graph.nodes().iter().enumerate() {
        for (k, (slot, t)) in node.params.iter().enumerate() {
            if slot.trainable() {
                targets.push((Target::Param { node: ni, idx: k }, t.len(), format!("{}.{}", node.name, slot.name())));
            }
        }
    }
    targets.push((Target::Input, x.len(), "input".to_string()));

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        samples: 0,
        worst: String::new(),
    };
    for (target, len, name) in targets {
        let want = if matches!(target, Target::Input) { INPUT_SAMPLES } else { SAMPLES_PER_TENSOR };
        let picks = sample(&mut rng, len, want.min(len)).into_vec();
        for mut entry in picks {
            let mut attempt = 0;
            let (analytic, numeric) = 'entry: loop {
                let analytic = match target {
                    Target::Param { node, idx } => grads.params[node][idx].as_ref().map_or(0.0, |g| g.data()[entry]),
                    Target::Input => grads.input.data()[entry],
                };
                let mut eval = |delta: f64| -> Result<f64> {
                    let cell = match target {
                        Target::Param { node, idx } => &mut params.get_mut(node, idx).data_mut()[entry],
                        Target::Input => &mut x.data_mut()[entry],
                    };
                    let orig = *cell;
                    *cell = orig + delta;
                    let t = graph.forward_with(&params, &x, Mode::Train);
                    match target {
                        Target::Param { node, idx } => params.get_mut(node, idx).data_mut()[entry] = orig,
                        Target::Input => x.data_mut()[entry] = orig,
                    }
                    Ok(project(t?.output_of(out), &probe))
                };
                let mut numeric = 0.0;
                for k in 0..SHRINKS {
                    let h = FD_STEP / 10f64.powi(k);
                    let d1 = (eval(h)? - eval(-h)?) / (2.0 * h);
                    let d2 = (eval(h / 2.0)? - eval(-h / 2.0)?) / h;
                    numeric = (4.0 * d2 - d1) / 3.0;
                    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
                    if (d1 - d2).abs() <= 1e-4 * scale {
                        break 'entry (analytic, numeric);
                    }
                }
                attempt += 1;
                if attempt > REDRAWS {
                    break (analytic, numeric);
                }
                entry = rng.gen_range(0..len);
            };
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            report.samples += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{entry}]");
            }
        }
    }
    Ok(report)
}

fn project(y: &Tensor<f64>, probe: &Tensor<f64>) -> f64 {
    y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
}
