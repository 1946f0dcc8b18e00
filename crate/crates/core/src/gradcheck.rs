//! Central finite-difference gradient checking.
//!
//! The harness perturbs every coordinate of every parameter by ±h, rebuilds
//! the forward pass from scratch, and compares the analytic gradient from
//! one backward sweep against `(f(x+h) - f(x-h)) / 2h`. Relative error is
//! measured as `|a - f| / max(1, |a| + |f|)`.

use crate::tensor::{Tape, Tensor, ValueId};

pub const DEFAULT_STEP: f64 = 1e-5;
/// Tolerance for operations that are linear in their inputs.
pub const LINEAR_TOL: f64 = 1e-6;
/// Tolerance for nonlinear operations and composed modules.
pub const NONLINEAR_TOL: f64 = 1e-4;
/// Tolerance for softmax Jacobian-vector products.
pub const SOFTMAX_TOL: f64 = 1e-5;

/// Outcome of one named gradient check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1.0, analytic.abs() + numeric.abs())
}

/// Checks the gradients of a scalar-valued forward pass with respect to all
/// entries of `params`. `build` receives a fresh tape plus leaf ids for the
/// parameters (in order) and must return the scalar loss id.
pub fn check_gradients<F>(name: &str, params: &[Tensor], tolerance: f64, build: F) -> CheckResult
where
    F: Fn(&mut Tape, &[ValueId]) -> ValueId,
{
    check_gradients_with_step(name, params, tolerance, DEFAULT_STEP, build)
}

pub fn check_gradients_with_step<F>(
    name: &str,
    params: &[Tensor],
    tolerance: f64,
    h: f64,
    build: F,
) -> CheckResult
where
    F: Fn(&mut Tape, &[ValueId]) -> ValueId,
{
    let run = |tensors: &[Tensor]| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = tensors.iter().map(|t| tape.leaf(t)).collect();
        let loss = build(&mut tape, &ids);
        let value = tape.value(loss)[0];
        tape.backward(loss).expect("scalar loss");
        let grads = ids
            .iter()
            .map(|&id| tape.grad(id).expect("grad after backward").to_vec())
            .collect();
        (value, grads)
    };

    let (_, analytic) = run(params);

    let mut max_rel_err: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let original = work[p].data()[i];
            work[p].data_mut()[i] = original + h;
            let (f_plus, _) = run(&work);
            work[p].data_mut()[i] = original - h;
            let (f_minus, _) = run(&work);
            work[p].data_mut()[i] = original;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            max_rel_err = max_rel_err.max(relative_error(grad[i], numeric));
        }
    }

    CheckResult {
        name: name.to_string(),
        max_rel_err,
        tolerance,
    }
}

/// Uniform random tensor with entries in `[lo, hi)`, from a caller-owned RNG.
pub fn random_tensor<R: rand::Rng>(rng: &mut R, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("valid random tensor")
}

/// Like [`random_tensor`] but keeps every entry away from zero, for checks
/// on kinked functions such as relu where finite differences straddle the
/// non-differentiable point.
pub fn random_tensor_away_from_zero<R: rand::Rng>(
    rng: &mut R,
    shape: Vec<usize>,
    margin: f64,
) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.gen_range(margin..2.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("valid random tensor")
}

/// Granularity of a gradient-check run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Every primitive differentiable operation in isolation.
    Op,
    /// Composed subsystems: encoder block stack, pyramid fusion, graph
    /// propagation stack, classifier head.
    Module,
    /// The full pipeline on the reduced configuration.
    EndToEnd,
}

impl std::str::FromStr for Scope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "op" => Ok(Scope::Op),
            "module" => Ok(Scope::Module),
            "endtoend" => Ok(Scope::EndToEnd),
            other => Err(format!("unknown scope {other:?} (op|module|endtoend)")),
        }
    }
}

pub fn run_suite(scope: Scope) -> Vec<CheckResult> {
    match scope {
        Scope::Op => op_suite(),
        Scope::Module => module_suite(),
        Scope::EndToEnd => end_to_end_suite(),
    }
}

/// Scalarizes a rank-2 output against fixed random weights so every output
/// coordinate contributes a distinct term to the loss.
fn weighted_sum(tape: &mut Tape, id: ValueId, weights: &[f64]) -> ValueId {
    let shape = tape.shape_of(id).to_vec();
    let w = tape
        .constant(shape, weights.to_vec())
        .expect("weights sized to output");
    let prod = tape.mul(id, w).expect("same shape");
    let col = tape.sum_axis(prod, 0).expect("rank 2");
    tape.sum_axis(col, 1).expect("rank 2")
}

fn fixed_weights(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
    use rand::Rng;
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// One finite-difference check per primitive operation.
pub fn op_suite() -> Vec<CheckResult> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x0b5);
    let mut results = Vec::new();

    let a = random_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
    let b = random_tensor(&mut rng, vec![4, 2], -2.0, 2.0);
    let w = fixed_weights(&mut rng, 6);
    results.push(check_gradients("op.matmul", &[a, b], LINEAR_TOL, move |t, ids| {
        let out = t.matmul(ids[0], ids[1]).unwrap();
        weighted_sum(t, out, &w)
    }));

    let x = random_tensor(&mut rng, vec![2, 3], -2.0, 2.0);
    let y = random_tensor(&mut rng, vec![2, 3], -2.0, 2.0);
    let w = fixed_weights(&mut rng, 6);
    results.push(check_gradients("op.add", &[x, y], LINEAR_TOL, move |t, ids| {
        let out = t.add(ids[0], ids[1]).unwrap();
        weighted_sum(t, out, &w)
    }));

    let x = random_tensor(&mut rng, vec![2, 3], -2.0, 2.0);
    let y = random_tensor(&mut rng, vec![2, 3], -2.0, 2.0);
    let w = fixed_weights(&mut rng, 6);
    results.push(check_gradients("op.mul", &[x, y], NONLINEAR_TOL, move |t, ids| {
        let out = t.mul(ids[0], ids[1]).unwrap();
        weighted_sum(t, out, &w)
    }));

    let x = random_tensor_away_from_zero(&mut rng, vec![3, 3], 0.05);
    let w = fixed_weights(&mut rng, 9);
    results.push(check_gradients("op.relu", &[x], LINEAR_TOL, move |t, ids| {
        let out = t.relu(ids[0]);
        weighted_sum(t, out, &w)
    }));

    let x = random_tensor(&mut rng, vec![2, 4], -2.0, 2.0);
    let w = fixed_weights(&mut rng, 8);
    results.push(check_gradients("op.scale", &[x], LINEAR_TOL, move |t, ids| {
        let out = t.scale(ids[0], -1.75);
        weighted_sum(t, out, &w)
    }));

    let x = random_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
    let bias = random_tensor(&mut rng, vec![4], -1.0, 1.0);
    let w = fixed_weights(&mut rng, 12);
    results.push(check_gradients("op.add_row", &[x, bias], LINEAR_TOL, move |t, ids| {
        let out = t.add_row(ids[0], ids[1]).unwrap();
        weighted_sum(t, out, &w)
    }));

    let x = random_tensor(&mut rng, vec![2, 3], -2.0, 2.0);
    let w = fixed_weights(&mut rng, 6);
    results.push(check_gradients(
        "op.softmax_rows",
        &[x],
        SOFTMAX_TOL,
        move |t, ids| {
            let out = t.softmax_rows(ids[0]).unwrap();
            weighted_sum(t, out, &w)
        },
    ));

    for axis in 0..2usize {
        let x = random_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
        let w = fixed_weights(&mut rng, if axis == 0 { 4 } else { 3 });
        results.push(check_gradients(
            &format!("op.sum_axis{axis}"),
            &[x],
            LINEAR_TOL,
            move |t, ids| {
                let out = t.sum_axis(ids[0], axis).unwrap();
                weighted_sum(t, out, &w)
            },
        ));
        let x = random_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
        let w = fixed_weights(&mut rng, if axis == 0 { 4 } else { 3 });
        results.push(check_gradients(
            &format!("op.mean_axis{axis}"),
            &[x],
            LINEAR_TOL,
            move |t, ids| {
                let out = t.mean_axis(ids[0], axis).unwrap();
                weighted_sum(t, out, &w)
            },
        ));
    }

    let x = random_tensor(&mut rng, vec![2, 3], -2.0, 2.0);
    let y = random_tensor(&mut rng, vec![2, 5], -2.0, 2.0);
    let w = fixed_weights(&mut rng, 16);
    results.push(check_gradients(
        "op.concat_last",
        &[x, y],
        LINEAR_TOL,
        move |t, ids| {
            let out = t.concat_last(&[ids[0], ids[1]]).unwrap();
            weighted_sum(t, out, &w)
        },
    ));

    let x = random_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
    let w = fixed_weights(&mut rng, 12);
    results.push(check_gradients("op.transpose", &[x], LINEAR_TOL, move |t, ids| {
        let out = t.transpose(ids[0]).unwrap();
        weighted_sum(t, out, &w)
    }));

    let x = random_tensor(&mut rng, vec![3, 6], -2.0, 2.0);
    let w = fixed_weights(&mut rng, 9);
    results.push(check_gradients("op.slice_cols", &[x], LINEAR_TOL, move |t, ids| {
        let out = t.slice_cols(ids[0], 2, 3).unwrap();
        weighted_sum(t, out, &w)
    }));

    let table = random_tensor(&mut rng, vec![5, 3], -2.0, 2.0);
    let w = fixed_weights(&mut rng, 12);
    results.push(check_gradients(
        "op.gather_rows",
        &[table],
        LINEAR_TOL,
        move |t, ids| {
            let out = t.gather_rows(ids[0], &[4, 0, 2, 0]).unwrap();
            weighted_sum(t, out, &w)
        },
    ));

    let x = random_tensor(&mut rng, vec![3, 5], -2.0, 2.0);
    let gamma = random_tensor(&mut rng, vec![5], 0.5, 1.5);
    let beta = random_tensor(&mut rng, vec![5], -0.5, 0.5);
    let w = fixed_weights(&mut rng, 15);
    results.push(check_gradients(
        "op.layer_norm",
        &[x, gamma, beta],
        NONLINEAR_TOL,
        move |t, ids| {
            let out = t
                .layer_norm(ids[0], ids[1], ids[2], crate::encoder::LAYER_NORM_EPS)
                .unwrap();
            weighted_sum(t, out, &w)
        },
    ));

    let x = random_tensor(&mut rng, vec![5, 3], -2.0, 2.0);
    let w = fixed_weights(&mut rng, 9);
    results.push(check_gradients(
        "op.mean_pool_rows",
        &[x],
        LINEAR_TOL,
        move |t, ids| {
            let out = t.mean_pool_rows(ids[0], 2).unwrap();
            weighted_sum(t, out, &w)
        },
    ));

    let x = random_tensor(&mut rng, vec![3, 3], -2.0, 2.0);
    let w = fixed_weights(&mut rng, 15);
    results.push(check_gradients(
        "op.repeat_rows",
        &[x],
        LINEAR_TOL,
        move |t, ids| {
            let out = t.repeat_rows(ids[0], 2, 5).unwrap();
            weighted_sum(t, out, &w)
        },
    ));

    let logits = random_tensor(&mut rng, vec![1, 4], -2.0, 2.0);
    results.push(check_gradients(
        "op.cross_entropy_logits",
        &[logits],
        LINEAR_TOL,
        |t, ids| t.cross_entropy_logits(ids[0], 2).unwrap(),
    ));

    results
}

/// Composed-subsystem checks on tiny configurations.
pub fn module_suite() -> Vec<CheckResult> {
    use crate::encoder::{EncoderConfig, ParamKind};
    use crate::graph::{TextGraph, Topology};
    use crate::tensor::Activation;
    use rand::SeedableRng;
    use std::sync::Arc;

    let mut results = Vec::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x30d);

    // encoder: L=2, d=8, n=3
    {
        let config = EncoderConfig {
            layers: 2,
            dim: 8,
            heads: 2,
            max_len: 4,
        };
        let mut params = crate::encoder::EncoderParams::zeros(config, 3);
        params.for_each_mut(&mut |_, kind, t| {
            let shape = t.shape().to_vec();
            *t = match kind {
                ParamKind::Gain => crate::tensor::Tensor::filled(shape, 1.0),
                ParamKind::Bias => crate::tensor::Tensor::zeros(shape),
                _ => random_tensor(&mut rng, shape, -0.5, 0.5),
            };
        });
        let mut flat = Vec::new();
        params.for_each(&mut |_, _, t| flat.push(t.clone()));
        results.push(check_gradients(
            "module.encoder",
            &flat,
            NONLINEAR_TOL,
            move |tape, ids| {
                let enc_ids = crate::encoder::EncoderIds {
                    embedding: ids[0],
                    positional: ids[1],
                    layers: ids[2..]
                        .chunks(12)
                        .map(|c| crate::encoder::LayerIds {
                            w_q: c[0],
                            w_k: c[1],
                            w_v: c[2],
                            w_o: c[3],
                            ln1_gain: c[4],
                            ln1_bias: c[5],
                            ffn_w1: c[6],
                            ffn_b1: c[7],
                            ffn_w2: c[8],
                            ffn_b2: c[9],
                            ln2_gain: c[10],
                            ln2_bias: c[11],
                        })
                        .collect(),
                };
                let e = crate::encoder::embed(tape, &enc_ids, &[0, 1, 2]).unwrap();
                let states = crate::encoder::encode(tape, &config, &enc_ids, e).unwrap();
                let last = *states.0.last().unwrap();
                let sq = tape.mul(last, last).unwrap();
                let col = tape.sum_axis(sq, 0).unwrap();
                tape.sum_axis(col, 1).unwrap()
            },
        ));
    }

    // pyramid: L=2, n=3, d=4
    {
        let d = 4;
        let tensors = vec![
            random_tensor(&mut rng, vec![3, d], -1.0, 1.0),
            random_tensor(&mut rng, vec![3, d], -1.0, 1.0),
            random_tensor(&mut rng, vec![d, d], -0.5, 0.5),
            random_tensor(&mut rng, vec![d, d], -0.5, 0.5),
            random_tensor(&mut rng, vec![2 * d, d], -0.5, 0.5),
        ];
        results.push(check_gradients(
            "module.pyramid",
            &tensors,
            NONLINEAR_TOL,
            |tape, ids| {
                let pids = crate::pyramid::PyramidIds {
                    level_proj: vec![ids[2], ids[3]],
                    fuse_proj: ids[4],
                };
                let states = crate::encoder::LayerStates(vec![ids[0], ids[1]]);
                let levels =
                    crate::pyramid::top_down_fuse(tape, &states, &pids, Activation::Relu).unwrap();
                let fused =
                    crate::pyramid::fuse_all(tape, &levels, &pids, Activation::Relu).unwrap();
                let sq = tape.mul(fused.features, fused.features).unwrap();
                let col = tape.sum_axis(sq, 0).unwrap();
                tape.sum_axis(col, 1).unwrap()
            },
        ));
    }

    // gnn: |V|=4, K=2, d=3
    {
        let topology = Arc::new(Topology::from_edges(4, vec![(0, 1), (1, 2), (2, 3)]));
        let tensors = vec![
            random_tensor(&mut rng, vec![4, 3], -1.0, 1.0),
            random_tensor(&mut rng, vec![3, 3], -0.7, 0.7),
            random_tensor(&mut rng, vec![3, 3], -0.7, 0.7),
        ];
        results.push(check_gradients(
            "module.gnn",
            &tensors,
            NONLINEAR_TOL,
            move |tape, ids| {
                let graph = TextGraph {
                    node_features: tape.to_tensor(ids[0]),
                    topology: topology.clone(),
                };
                let out = crate::gnn::propagate_stack(
                    tape,
                    &graph,
                    ids[0],
                    &[ids[1], ids[2]],
                    Activation::Relu,
                )
                .unwrap();
                let sq = tape.mul(out, out).unwrap();
                let col = tape.sum_axis(sq, 0).unwrap();
                tape.sum_axis(col, 1).unwrap()
            },
        ));
    }

    // head: readout + classify + loss
    {
        let tensors = vec![
            random_tensor(&mut rng, vec![4, 3], -2.0, 2.0),
            random_tensor(&mut rng, vec![3, 3], -1.0, 1.0),
            random_tensor(&mut rng, vec![3], -0.5, 0.5),
        ];
        results.push(check_gradients(
            "module.head",
            &tensors,
            NONLINEAR_TOL,
            |tape, ids| {
                let z = crate::head::readout(tape, ids[0]).unwrap();
                let cids = crate::head::ClassifierIds {
                    weight: ids[1],
                    bias: ids[2],
                };
                let logits = crate::head::classify_logits(tape, z, &cids).unwrap();
                crate::head::cross_entropy(tape, logits, 1).unwrap()
            },
        ));
    }

    results
}

/// The full pipeline on the reduced configuration: encoder L=2 d=8 on a
/// 3-token sequence over a 3-word vocabulary, K=2 propagation, 3 classes.
pub fn end_to_end_suite() -> Vec<CheckResult> {
    use crate::model::{ModelConfig, ModelIds};
    use rand::SeedableRng;

    let config = ModelConfig {
        encoder: crate::encoder::EncoderConfig {
            layers: 2,
            dim: 8,
            heads: 2,
            max_len: 4,
        },
        pyramid_dim: 8,
        gnn_dims: vec![8, 8],
        graph_window: 3,
        knn: None,
        vocab_size: 3,
        num_classes: 3,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xe2e);
    let params = crate::train::init_params(&config, &mut rng);
    let mut flat = Vec::new();
    params.for_each(&mut |_, _, t| flat.push(t.clone()));

    let check_config = config.clone();
    vec![check_gradients(
        "endtoend.pipeline",
        &flat,
        NONLINEAR_TOL,
        move |tape, ids| {
            let model_ids = ModelIds::from_ordered(&check_config, ids);
            let pass = crate::model::forward(
                tape,
                &check_config,
                &model_ids,
                &[0, 1, 2],
                Some(1),
                None,
            )
            .unwrap();
            pass.loss.unwrap()
        },
    )]
}
