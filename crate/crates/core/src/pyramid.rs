//! Top-down feature pyramid over the encoder's per-layer states.
//!
//! Level l lives at scale 2^(l-1): its features have ceil(n / 2^(l-1))
//! rows, produced by mean-pooling the corresponding hidden state. Fusion
//! runs top-down — the coarsest level is projected first, then each finer
//! level adds an upsampled copy of the level above before the nonlinearity.
//! Finally every level is upsampled back to full resolution, concatenated
//! along the feature axis, and projected to the pyramid width.

use crate::encoder::{LayerStates, ParamKind};
use crate::tensor::{Activation, Tape, Tensor, TensorError, ValueId};
use serde::Serialize;

/// Scale factor of 1-based level `l`: tokens per pooled position.
pub fn level_scale(level: usize) -> usize {
    1 << (level - 1)
}

/// Row count of 1-based level `l` for an n-token input.
pub fn level_rows(n: usize, level: usize) -> usize {
    n.div_ceil(level_scale(level))
}

/// Per-level projections plus the cross-level fusion projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidParams {
    /// One dim -> pyramid_dim projection per level, index 0 = level 1.
    pub level_proj: Vec<Tensor>,
    /// (levels * pyramid_dim) -> pyramid_dim fusion projection.
    pub fuse_proj: Tensor,
}

impl PyramidParams {
    pub fn zeros(levels: usize, hidden_dim: usize, pyramid_dim: usize) -> Self {
        PyramidParams {
            level_proj: (0..levels)
                .map(|_| Tensor::zeros(vec![hidden_dim, pyramid_dim]))
                .collect(),
            fuse_proj: Tensor::zeros(vec![levels * pyramid_dim, pyramid_dim]),
        }
    }

    pub fn for_each(&self, f: &mut impl FnMut(String, ParamKind, &Tensor)) {
        for (i, t) in self.level_proj.iter().enumerate() {
            f(format!("pyramid.level{}.proj", i + 1), ParamKind::Weight, t);
        }
        f("pyramid.fuse_proj".into(), ParamKind::Weight, &self.fuse_proj);
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(String, ParamKind, &mut Tensor)) {
        for (i, t) in self.level_proj.iter_mut().enumerate() {
            f(format!("pyramid.level{}.proj", i + 1), ParamKind::Weight, t);
        }
        f("pyramid.fuse_proj".into(), ParamKind::Weight, &mut self.fuse_proj);
    }
}

#[derive(Debug, Clone)]
pub struct PyramidIds {
    pub level_proj: Vec<ValueId>,
    pub fuse_proj: ValueId,
}

pub fn register(tape: &mut Tape, params: &PyramidParams) -> PyramidIds {
    PyramidIds {
        level_proj: params.level_proj.iter().map(|t| tape.leaf(t)).collect(),
        fuse_proj: tape.leaf(&params.fuse_proj),
    }
}

/// One fused pyramid level.
#[derive(Debug, Clone, Copy)]
pub struct PyramidLevel {
    /// 1-based level index.
    pub level: usize,
    pub features: ValueId,
    /// Tokens per position at this level.
    pub scale: usize,
}

/// Fused per-position representation at full resolution.
#[derive(Debug, Clone, Copy)]
pub struct FusedFeatures {
    pub features: ValueId,
}

/// Mean-pools rows with non-overlapping windows of `scale`; the final
/// partial window is averaged over its actual length. `scale == 1` is the
/// identity.
pub fn downscale(tape: &mut Tape, h: ValueId, scale: usize) -> Result<ValueId, TensorError> {
    if scale == 1 {
        return Ok(h);
    }
    tape.mean_pool_rows(h, scale)
}

/// Nearest-neighbor upsampling to `target_n` rows: output row i repeats
/// input row i / scale.
pub fn up(
    tape: &mut Tape,
    f: ValueId,
    scale: usize,
    target_n: usize,
) -> Result<ValueId, TensorError> {
    if scale == 1 && tape.shape_of(f)[0] == target_n {
        return Ok(f);
    }
    tape.repeat_rows(f, scale, target_n)
}

/// Top-down fusion: the coarsest level is projected alone, every finer
/// level adds the upsampled level above inside the nonlinearity.
pub fn top_down_fuse(
    tape: &mut Tape,
    states: &LayerStates,
    ids: &PyramidIds,
    phi: Activation,
) -> Result<Vec<PyramidLevel>, TensorError> {
    let levels = states.len();
    assert_eq!(
        ids.level_proj.len(),
        levels,
        "one projection per pyramid level"
    );
    let n = tape.shape_of(states.0[0])[0];

    // coarsest first
    let mut fused_rev: Vec<PyramidLevel> = Vec::with_capacity(levels);
    for l in (1..=levels).rev() {
        let scale = level_scale(l);
        let pooled = downscale(tape, states.0[l - 1], scale)?;
        let projected = tape.matmul(pooled, ids.level_proj[l - 1])?;
        let pre = match fused_rev.last() {
            Some(above) => {
                let lifted = up(tape, above.features, 2, level_rows(n, l))?;
                tape.add(projected, lifted)?
            }
            None => projected,
        };
        let features = tape.activation(phi, pre);
        fused_rev.push(PyramidLevel { level: l, features, scale });
    }
    fused_rev.reverse();
    Ok(fused_rev)
}

/// Upsamples every level to full resolution, concatenates along the feature
/// axis ("splicing"), then applies the learned projection ("weighted
/// summation") with the nonlinearity.
pub fn fuse_all(
    tape: &mut Tape,
    levels: &[PyramidLevel],
    ids: &PyramidIds,
    phi: Activation,
) -> Result<FusedFeatures, TensorError> {
    assert!(!levels.is_empty(), "fuse_all needs at least one level");
    assert_eq!(levels[0].scale, 1, "level 1 comes first at full resolution");
    let n = tape.shape_of(levels[0].features)[0];
    let mut lifted = Vec::with_capacity(levels.len());
    for level in levels {
        lifted.push(up(tape, level.features, level.scale, n)?);
    }
    let spliced = tape.concat_last(&lifted)?;
    let projected = tape.matmul(spliced, ids.fuse_proj)?;
    Ok(FusedFeatures {
        features: tape.activation(phi, projected),
    })
}

/// Shape/norm summary of one level for the debug dump.
#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub level: usize,
    pub rows: usize,
    pub cols: usize,
    pub scale: usize,
    pub frobenius_norm: f64,
}

pub fn summarize(tape: &Tape, levels: &[PyramidLevel]) -> Vec<LevelSummary> {
    levels
        .iter()
        .map(|l| {
            let shape = tape.shape_of(l.features);
            LevelSummary {
                level: l.level,
                rows: shape[0],
                cols: shape[1],
                scale: l.scale,
                frobenius_norm: tape.to_tensor(l.features).norm(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scale_consistency_for_all_levels() {
        for n in 1..=64 {
            for l in 1..=4 {
                let mut tape = Tape::new();
                let h = tape.constant(vec![n, 2], vec![1.0; n * 2]).unwrap();
                let pooled = downscale(&mut tape, h, level_scale(l)).unwrap();
                assert_eq!(tape.shape_of(pooled)[0], level_rows(n, l), "n={n} l={l}");
            }
        }
    }

    #[test]
    fn downscale_identity_and_pairs() {
        let mut tape = Tape::new();
        let h = tape
            .constant(vec![4, 1], vec![1.0, 3.0, 5.0, 9.0])
            .unwrap();
        let same = downscale(&mut tape, h, 1).unwrap();
        assert_eq!(same, h);
        let halved = downscale(&mut tape, h, 2).unwrap();
        assert_eq!(tape.value(halved), &[2.0, 7.0]);
    }

    #[test]
    fn downscale_partial_window_is_plain_row() {
        let mut tape = Tape::new();
        let h = tape
            .constant(vec![5, 1], vec![2.0, 4.0, 6.0, 8.0, 11.0])
            .unwrap();
        let pooled = downscale(&mut tape, h, 2).unwrap();
        assert_eq!(tape.shape_of(pooled), &[3, 1]);
        assert_eq!(tape.value(pooled), &[3.0, 7.0, 11.0]);
    }

    #[test]
    fn up_repeats_rows() {
        let mut tape = Tape::new();
        let f = tape.constant(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let lifted = up(&mut tape, f, 2, 4).unwrap();
        assert_eq!(tape.value(lifted), &[1.0, 1.0, 2.0, 2.0]);
        let identity = up(&mut tape, f, 1, 2).unwrap();
        assert_eq!(identity, f);
    }

    #[test]
    fn down_after_up_recovers_exact_multiples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
        let mut tape = Tape::new();
        let f = tape.leaf(&t);
        let lifted = up(&mut tape, f, 2, 6).unwrap();
        let back = downscale(&mut tape, lifted, 2).unwrap();
        for (a, b) in tape.value(back).iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn identity_params(levels: usize, d: usize) -> PyramidParams {
        let mut eye = Tensor::zeros(vec![d, d]);
        for i in 0..d {
            eye.data_mut()[i * d + i] = 1.0;
        }
        let mut fuse = Tensor::zeros(vec![levels * d, d]);
        // pick out level 1's block
        for i in 0..d {
            fuse.data_mut()[i * d + i] = 1.0;
        }
        PyramidParams {
            level_proj: vec![eye; levels],
            fuse_proj: fuse,
        }
    }

    #[test]
    fn single_level_has_no_up_term() {
        let params = identity_params(1, 2);
        let mut tape = Tape::new();
        let ids = register(&mut tape, &params);
        let h = tape
            .constant(vec![2, 2], vec![1.0, -2.0, 3.0, -4.0])
            .unwrap();
        let levels =
            top_down_fuse(&mut tape, &LayerStates(vec![h]), &ids, Activation::Relu).unwrap();
        assert_eq!(levels.len(), 1);
        // relu(identity * H) == relu(H)
        assert_eq!(tape.value(levels[0].features), &[1.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn zero_upper_path_reduces_to_projected_pooling() {
        // phi = identity hook, identity W, H^2 = 0 => F^1 = down(H^1, 1) = H^1
        let params = identity_params(2, 2);
        let mut tape = Tape::new();
        let ids = register(&mut tape, &params);
        let h1 = tape
            .constant(vec![2, 2], vec![0.5, -1.5, 2.0, 4.0])
            .unwrap();
        let h2 = tape.constant(vec![2, 2], vec![0.0; 4]).unwrap();
        let levels = top_down_fuse(
            &mut tape,
            &LayerStates(vec![h1, h2]),
            &ids,
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(tape.value(levels[0].features), tape.value(h1));
    }

    #[test]
    fn hand_evaluated_two_level_fusion() {
        // n=2, d=2, identity projections, phi = identity:
        //   level 2 pools rows of H^2 -> one row, projected = the mean row
        //   level 1 = H^1 + up(level2) so each row gains the pooled mean
        let params = identity_params(2, 2);
        let mut tape = Tape::new();
        let ids = register(&mut tape, &params);
        let h1 = tape
            .constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        let h2 = tape
            .constant(vec![2, 2], vec![10.0, 20.0, 30.0, 40.0])
            .unwrap();
        let levels = top_down_fuse(
            &mut tape,
            &LayerStates(vec![h1, h2]),
            &ids,
            Activation::Identity,
        )
        .unwrap();
        // level 2: mean of rows = [20, 30]
        assert_eq!(tape.value(levels[1].features), &[20.0, 30.0]);
        // level 1: rows [1,2]+[20,30] and [3,4]+[20,30]
        assert_eq!(tape.value(levels[0].features), &[21.0, 32.0, 23.0, 34.0]);
    }

    #[test]
    fn fuse_all_single_level_shape() {
        let params = identity_params(1, 2);
        let mut tape = Tape::new();
        let ids = register(&mut tape, &params);
        let h = tape
            .constant(vec![3, 2], vec![1.0, -1.0, 2.0, -2.0, 3.0, -3.0])
            .unwrap();
        let levels =
            top_down_fuse(&mut tape, &LayerStates(vec![h]), &ids, Activation::Relu).unwrap();
        let fused = fuse_all(&mut tape, &levels, &ids, Activation::Relu).unwrap();
        assert_eq!(tape.shape_of(fused.features), &[3, 2]);
    }

    #[test]
    fn pre_projection_concat_width_law() {
        let levels_n = 3;
        let d = 2;
        let params = PyramidParams::zeros(levels_n, d, d);
        let mut tape = Tape::new();
        let ids = register(&mut tape, &params);
        let n = 5;
        let states = LayerStates(
            (0..levels_n)
                .map(|_| tape.constant(vec![n, d], vec![1.0; n * d]).unwrap())
                .collect(),
        );
        let levels = top_down_fuse(&mut tape, &states, &ids, Activation::Relu).unwrap();
        for level in &levels {
            assert_eq!(
                tape.shape_of(level.features)[0],
                level_rows(n, level.level)
            );
        }
        let lifted: Vec<ValueId> = levels
            .iter()
            .map(|l| up(&mut tape, l.features, l.scale, n).unwrap())
            .collect();
        let spliced = tape.concat_last(&lifted).unwrap();
        assert_eq!(tape.shape_of(spliced), &[n, levels_n * d]);
    }

    #[test]
    fn pyramid_gradients_match_finite_differences() {
        // L=2, n=3, d=4 as the oracle example prescribes
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = 4;
        let h1 = random_tensor(&mut rng, vec![3, d], -1.0, 1.0);
        let h2 = random_tensor(&mut rng, vec![3, d], -1.0, 1.0);
        let w1 = random_tensor(&mut rng, vec![d, d], -0.5, 0.5);
        let w2 = random_tensor(&mut rng, vec![d, d], -0.5, 0.5);
        let wf = random_tensor(&mut rng, vec![2 * d, d], -0.5, 0.5);
        let tensors = vec![h1, h2, w1, w2, wf];

        let result = gradcheck::check_gradients(
            "pyramid.fuse_all∘top_down_fuse",
            &tensors,
            gradcheck::NONLINEAR_TOL,
            |tape, ids| {
                let pids = PyramidIds {
                    level_proj: vec![ids[2], ids[3]],
                    fuse_proj: ids[4],
                };
                let states = LayerStates(vec![ids[0], ids[1]]);
                let levels = top_down_fuse(tape, &states, &pids, Activation::Relu).unwrap();
                let fused = fuse_all(tape, &levels, &pids, Activation::Relu).unwrap();
                let sq = tape.mul(fused.features, fused.features).unwrap();
                let col = tape.sum_axis(sq, 0).unwrap();
                tape.sum_axis(col, 1).unwrap()
            },
        );
        assert!(result.passed(), "max rel err {}", result.max_rel_err);
    }

    #[test]
    fn every_pyramid_weight_gets_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let d = 3;
        let levels_n = 3;
        let mut params = PyramidParams::zeros(levels_n, d, d);
        params.for_each_mut(&mut |_, _, t| {
            *t = random_tensor(&mut rng, t.shape().to_vec(), -0.5, 0.5);
        });
        let mut tape = Tape::new();
        let ids = register(&mut tape, &params);
        let states = LayerStates(
            (0..levels_n)
                .map(|_| {
                    let t = random_tensor(&mut rng, vec![5, d], -1.0, 1.0);
                    tape.leaf(&t)
                })
                .collect(),
        );
        let levels = top_down_fuse(&mut tape, &states, &ids, Activation::Relu).unwrap();
        let fused = fuse_all(&mut tape, &levels, &ids, Activation::Relu).unwrap();
        let pooled = tape.mean_axis(fused.features, 0).unwrap();
        let loss = tape.sum_axis(pooled, 1).unwrap();
        tape.backward(loss).unwrap();
        for (i, &w) in ids.level_proj.iter().enumerate() {
            assert!(
                tape.grad(w).unwrap().iter().any(|&g| g != 0.0),
                "level {} projection starved of gradient",
                i + 1
            );
        }
        assert!(tape.grad(ids.fuse_proj).unwrap().iter().any(|&g| g != 0.0));
    }
}
