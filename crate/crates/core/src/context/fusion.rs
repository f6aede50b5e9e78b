//! Fusion of an encoded context into decoder query content.
//!
//! ```text
//! tc   = relu([I, A, S] W1 + b1) W2 + b2          (D)
//! TC   = tc repeated K times                      (K x D)
//! Q_tc = softmax((Q0 Wq)(TC Wk)^T / sqrt(D)) (TC Wv) Wo
//! ```
//!
//! Single head, no residual, no normalization. Row vectors multiply on the left.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EncodedContext, CONTEXT_DIM};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite parameter in {0}")]
    NonFinite(String),
    #[error("parameter file error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
}

pub const TENSOR_NAMES: [&str; 8] = ["w1", "b1", "w2", "b2", "w_q", "w_k", "w_v", "w_o"];

impl FusionParams {
    pub fn zeros(d: usize, k: usize) -> Self {
        FusionParams {
            d,
            k,
            seed: 0,
            w1: Array2::zeros((CONTEXT_DIM, d)),
            b1: Array1::zeros(d),
            w2: Array2::zeros((d, d)),
            b2: Array1::zeros(d),
            w_q: Array2::zeros((d, d)),
            w_k: Array2::zeros((d, d)),
            w_v: Array2::zeros((d, d)),
            w_o: Array2::zeros((d, d)),
        }
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, seeded.
    pub fn init(d: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = FusionParams::zeros(d, k);
        p.seed = seed;
        let fan_ins = [CONTEXT_DIM, CONTEXT_DIM, d, d, d, d, d, d];
        for (slice, fan_in) in p.tensors_mut().into_iter().map(|(_, s)| s).zip(fan_ins) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in slice.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        p
    }

    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        vec![
            ("w1", self.w1.shape().to_vec(), self.w1.as_slice().expect("standard layout")),
            ("b1", self.b1.shape().to_vec(), self.b1.as_slice().expect("standard layout")),
            ("w2", self.w2.shape().to_vec(), self.w2.as_slice().expect("standard layout")),
            ("b2", self.b2.shape().to_vec(), self.b2.as_slice().expect("standard layout")),
            ("w_q", self.w_q.shape().to_vec(), self.w_q.as_slice().expect("standard layout")),
            ("w_k", self.w_k.shape().to_vec(), self.w_k.as_slice().expect("standard layout")),
            ("w_v", self.w_v.shape().to_vec(), self.w_v.as_slice().expect("standard layout")),
            ("w_o", self.w_o.shape().to_vec(), self.w_o.as_slice().expect("standard layout")),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w1", self.w1.as_slice_mut().expect("standard layout")),
            ("b1", self.b1.as_slice_mut().expect("standard layout")),
            ("w2", self.w2.as_slice_mut().expect("standard layout")),
            ("b2", self.b2.as_slice_mut().expect("standard layout")),
            ("w_q", self.w_q.as_slice_mut().expect("standard layout")),
            ("w_k", self.w_k.as_slice_mut().expect("standard layout")),
            ("w_v", self.w_v.as_slice_mut().expect("standard layout")),
            ("w_o", self.w_o.as_slice_mut().expect("standard layout")),
        ]
    }

    /// Makes every tensor contiguous in row-major order, as `tensors` requires.
    pub fn standardize_layout(&mut self) {
        fn fix2(a: &mut Array2<f64>) {
            if !a.is_standard_layout() {
                *a = a.as_standard_layout().into_owned();
            }
        }
        for a in [&mut self.w1, &mut self.w2, &mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o] {
            fix2(a);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, s)| s.len()).sum()
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.d == 0 || self.k == 0 {
            return Err(FusionError::Shape("D and K must be positive".into()));
        }
        let d = self.d;
        let expected: [&[usize]; 8] = [&[CONTEXT_DIM, d], &[d], &[d, d], &[d], &[d, d], &[d, d], &[d, d], &[d, d]];
        for ((name, shape, data), want) in self.tensors().into_iter().zip(expected) {
            if shape != want {
                return Err(FusionError::Shape(format!("{name} has shape {shape:?}, expected {want:?}")));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(FusionError::NonFinite(name.into()));
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> ParamFile {
        ParamFile {
            d: self.d,
            k: self.k,
            seed: self.seed,
            tensors: self
                .tensors()
                .into_iter()
                .map(|(name, shape, data)| TensorRecord { name: name.into(), shape, data: data.to_vec() })
                .collect(),
        }
    }

    pub fn from_file(file: &ParamFile) -> Result<Self, FusionError> {
        let mut p = FusionParams::zeros(file.d, file.k);
        p.seed = file.seed;
        for (name, slot) in p.tensors_mut() {
            let rec = file
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| FusionError::Io(format!("missing tensor {name}")))?;
            if rec.data.len() != slot.len() || rec.shape.iter().product::<usize>() != slot.len() {
                return Err(FusionError::Shape(format!("tensor {name} has {} values, expected {}", rec.data.len(), slot.len())));
            }
            slot.copy_from_slice(&rec.data);
        }
        p.validate()?;
        Ok(p)
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<(), FusionError> {
        let text = serde_json::to_string(&self.to_file()).map_err(|e| FusionError::Io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| FusionError::Io(e.to_string()))
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self, FusionError> {
        let text = std::fs::read(path).map_err(|e| FusionError::Io(e.to_string()))?;
        let file: ParamFile = serde_json::from_slice(&text).map_err(|e| FusionError::Io(e.to_string()))?;
        FusionParams::from_file(&file)
    }
}

/// On-disk form: a small header plus one shaped, row-major tensor per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryContent {
    pub q0: Array2<f64>,
    pub q_tc: Array2<f64>,
}

/// Intermediate values kept for the backward pass.
struct Forward {
    x: Array1<f64>,
    z1: Array1<f64>,
    h: Array1<f64>,
    tc_rows: Array2<f64>,
    q: Array2<f64>,
    keys: Array2<f64>,
    values: Array2<f64>,
    probs: Array2<f64>,
    attended: Array2<f64>,
    out: Array2<f64>,
}

fn check_shapes(q0: &Array2<f64>, p: &FusionParams) -> Result<(), FusionError> {
    p.validate()?;
    if q0.dim() != (p.k, p.d) {
        return Err(FusionError::Shape(format!("Q0 is {:?}, expected ({}, {})", q0.dim(), p.k, p.d)));
    }
    Ok(())
}

fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut p = scores.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

fn forward(ctx: &EncodedContext, q0: &Array2<f64>, p: &FusionParams) -> Forward {
    let x = Array1::from(ctx.concat().to_vec());
    let z1 = x.dot(&p.w1) + &p.b1;
    let h = z1.mapv(|v| v.max(0.0));
    let tc = h.dot(&p.w2) + &p.b2;
    let tc_rows = tc.broadcast((p.k, p.d)).expect("broadcast to K x D").to_owned();
    let q = q0.dot(&p.w_q);
    let keys = tc_rows.dot(&p.w_k);
    let values = tc_rows.dot(&p.w_v);
    let scale = 1.0 / (p.d as f64).sqrt();
    let probs = softmax_rows(&(q.dot(&keys.t()) * scale));
    let attended = probs.dot(&values);
    let out = attended.dot(&p.w_o);
    Forward { x, z1, h, tc_rows, q, keys, values, probs, attended, out }
}

/// Fuses the context into the initialized query content `q0` (K x D).
pub fn fuse(ctx: &EncodedContext, q0: &Array2<f64>, params: &FusionParams) -> Result<Array2<f64>, FusionError> {
    check_shapes(q0, params)?;
    Ok(forward(ctx, q0, params).out)
}

pub fn fuse_batch(
    items: &[(EncodedContext, Array2<f64>)],
    params: &FusionParams,
) -> Result<Vec<QueryContent>, FusionError> {
    items
        .par_iter()
        .map(|(ctx, q0)| fuse(ctx, q0, params).map(|q_tc| QueryContent { q0: q0.clone(), q_tc }))
        .collect()
}

/// A scalar loss over the fused query content.
pub trait FusionLoss {
    fn value(&self, q_tc: &Array2<f64>) -> f64;
    fn gradient(&self, q_tc: &Array2<f64>) -> Array2<f64>;
}

/// `sum(weights * Q_tc)`.
pub struct LinearLoss {
    pub weights: Array2<f64>,
}

impl FusionLoss for LinearLoss {
    fn value(&self, q_tc: &Array2<f64>) -> f64 {
        (&self.weights * q_tc).sum()
    }
    fn gradient(&self, _q_tc: &Array2<f64>) -> Array2<f64> {
        self.weights.clone()
    }
}

/// `0.5 * |Q_tc - target|^2`.
pub struct SquaredLoss {
    pub target: Array2<f64>,
}

impl FusionLoss for SquaredLoss {
    fn value(&self, q_tc: &Array2<f64>) -> f64 {
        0.5 * (q_tc - &self.target).mapv(|v| v * v).sum()
    }
    fn gradient(&self, q_tc: &Array2<f64>) -> Array2<f64> {
        q_tc - &self.target
    }
}

pub struct ConstantLoss(pub f64);

impl FusionLoss for ConstantLoss {
    fn value(&self, _q_tc: &Array2<f64>) -> f64 {
        self.0
    }
    fn gradient(&self, q_tc: &Array2<f64>) -> Array2<f64> {
        Array2::zeros(q_tc.raw_dim())
    }
}

/// Analytic gradient of `loss(fuse(ctx, q0, params))` with respect to every
/// parameter, returned in a params-shaped container.
pub fn gradients(
    ctx: &EncodedContext,
    q0: &Array2<f64>,
    params: &FusionParams,
    loss: &dyn FusionLoss,
) -> Result<FusionParams, FusionError> {
    check_shapes(q0, params)?;
    let f = forward(ctx, q0, params);
    let p = params;
    let scale = 1.0 / (p.d as f64).sqrt();
    let g_out = loss.gradient(&f.out);

    let mut g = FusionParams::zeros(p.d, p.k);
    g.w_o = f.attended.t().dot(&g_out);
    let g_att = g_out.dot(&p.w_o.t());
    let g_probs = g_att.dot(&f.values.t());
    let g_values = f.probs.t().dot(&g_att);
    g.w_v = f.tc_rows.t().dot(&g_values);

    // softmax backward, row by row
    let row_dot = (&g_probs * &f.probs).sum_axis(Axis(1)).insert_axis(Axis(1));
    let g_scores = &f.probs * &(&g_probs - &row_dot) * scale;

    let g_q = g_scores.dot(&f.keys);
    let g_keys = g_scores.t().dot(&f.q);
    g.w_q = q0.t().dot(&g_q);
    g.w_k = f.tc_rows.t().dot(&g_keys);

    let g_tc_rows = g_keys.dot(&p.w_k.t()) + g_values.dot(&p.w_v.t());
    let g_tc = g_tc_rows.sum_axis(Axis(0));
    g.b2 = g_tc.clone();
    g.w2 = outer(&f.h, &g_tc);
    let g_h = p.w2.dot(&g_tc);
    let g_z1 = &g_h * &f.z1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    g.b1 = g_z1.clone();
    g.w1 = outer(&f.x, &g_z1);
    g.standardize_layout();
    Ok(g)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}

pub const FD_STEP: f64 = 1e-5;

/// Comparison of one gradient entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradEntry {
    /// `|a - n| / max(|a|, |n|, floor)`; the floor keeps entries whose true
    /// gradient is zero from dividing finite-difference round-off by ~0.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / denom
    }
}

/// Denominator floor used by [`grad_check`]: the central-difference round-off
/// level `eps * max(1, scale) / h`, times a safety factor of 100. `scale` is
/// the magnitude of the differenced quantity.
pub fn fd_noise_floor(scale: f64) -> f64 {
    100.0 * f64::EPSILON * scale.abs().max(1.0) / FD_STEP
}

/// Central difference of the fused output along one parameter, contracted
/// with the loss gradient at the unperturbed output. Differencing the output
/// rather than the loss keeps a large loss offset out of the subtraction.
fn numeric_entry(
    ctx: &EncodedContext,
    q0: &Array2<f64>,
    params: &mut FusionParams,
    g_out: &Array2<f64>,
    tensor: usize,
    index: usize,
) -> f64 {
    let set = |p: &mut FusionParams, v: f64| p.tensors_mut()[tensor].1[index] = v;
    let orig = params.tensors()[tensor].2[index];
    set(params, orig + FD_STEP);
    let plus = forward(ctx, q0, params).out;
    set(params, orig - FD_STEP);
    let minus = forward(ctx, q0, params).out;
    set(params, orig);
    (g_out * &(plus - minus)).sum() / (2.0 * FD_STEP)
}

fn compare(
    ctx: &EncodedContext,
    q0: &Array2<f64>,
    params: &FusionParams,
    loss: &dyn FusionLoss,
    pick: &mut dyn FnMut(&[(&'static str, usize)]) -> Vec<(usize, usize)>,
) -> Result<(Vec<GradEntry>, f64), FusionError> {
    let analytic = gradients(ctx, q0, params, loss)?;
    let out = forward(ctx, q0, params).out;
    let g_out = loss.gradient(&out);
    let scale = (&g_out * &out).mapv(f64::abs).sum();
    let sizes: Vec<(&'static str, usize)> = params.tensors().iter().map(|(n, _, s)| (*n, s.len())).collect();
    let mut work = params.clone();
    let a_tensors = analytic.tensors();
    let entries = pick(&sizes)
        .into_iter()
        .map(|(t, i)| GradEntry {
            tensor: sizes[t].0,
            index: i,
            analytic: a_tensors[t].2[i],
            numeric: numeric_entry(ctx, q0, &mut work, &g_out, t, i),
        })
        .collect();
    Ok((entries, fd_noise_floor(scale)))
}

/// Checks every parameter's analytic gradient against central finite
/// differences and returns the largest relative error.
pub fn grad_check(
    params: &FusionParams,
    ctx: &EncodedContext,
    q0: &Array2<f64>,
    loss: &dyn FusionLoss,
) -> Result<f64, FusionError> {
    let (entries, floor) = compare(ctx, q0, params, loss, &mut |sizes| {
        sizes
            .iter()
            .enumerate()
            .flat_map(|(t, (_, n))| (0..*n).map(move |i| (t, i)))
            .collect()
    })?;
    Ok(entries.iter().map(|e| e.relative_error(floor)).fold(0.0, f64::max))
}

/// Like [`grad_check`] but over `samples` randomly chosen entries, for large D.
pub fn grad_check_sampled(
    params: &FusionParams,
    ctx: &EncodedContext,
    q0: &Array2<f64>,
    loss: &dyn FusionLoss,
    samples: usize,
    seed: u64,
) -> Result<f64, FusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (entries, floor) = compare(ctx, q0, params, loss, &mut |sizes| {
        (0..samples)
            .map(|s| {
                // cycle tensors so every one is covered
                let t = s % sizes.len();
                (t, rng.gen_range(0..sizes[t].1))
            })
            .collect()
    })?;
    Ok(entries.iter().map(|e| e.relative_error(floor)).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> EncodedContext {
        EncodedContext {
            intention: [0.0, 2.0, 0.0, 1.0, 0.0],
            affordance: [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            scenario: [1.0, 0.0, 0.0, 0.0],
        }
    }

    fn random(k: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0))
    }

    /// Independent evaluation of the same formulas with plain loops.
    fn reference(ctx: &EncodedContext, q0: &Array2<f64>, p: &FusionParams) -> Vec<Vec<f64>> {
        let x = ctx.concat();
        let (k, d) = (p.k, p.d);
        let mut h = vec![0.0; d];
        for j in 0..d {
            let mut s = p.b1[j];
            for i in 0..x.len() {
                s += x[i] * p.w1[[i, j]];
            }
            h[j] = if s > 0.0 { s } else { 0.0 };
        }
        let mut tc = vec![0.0; d];
        for j in 0..d {
            tc[j] = p.b2[j] + (0..d).map(|i| h[i] * p.w2[[i, j]]).sum::<f64>();
        }
        let proj = |rows: &dyn Fn(usize, usize) -> f64, w: &Array2<f64>| -> Vec<Vec<f64>> {
            (0..k).map(|r| (0..d).map(|j| (0..d).map(|i| rows(r, i) * w[[i, j]]).sum()).collect()).collect()
        };
        let q = proj(&|r, i| q0[[r, i]], &p.w_q);
        let kk = proj(&|_, i| tc[i], &p.w_k);
        let v = proj(&|_, i| tc[i], &p.w_v);
        let mut out = vec![vec![0.0; d]; k];
        for r in 0..k {
            let scores: Vec<f64> = (0..k)
                .map(|c| (0..d).map(|i| q[r][i] * kk[c][i]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let att: Vec<f64> = (0..d).map(|i| (0..k).map(|c| e[c] / z * v[c][i]).sum()).collect();
            for j in 0..d {
                out[r][j] = (0..d).map(|i| att[i] * p.w_o[[i, j]]).sum();
            }
        }
        out
    }

    #[test]
    fn matches_loop_reference() {
        for seed in 0..5 {
            let p = FusionParams::init(4, 2, seed);
            let q0 = random(2, 4, 100 + seed);
            let got = fuse(&ctx(), &q0, &p).unwrap();
            let want = reference(&ctx(), &q0, &p);
            for r in 0..2 {
                for c in 0..4 {
                    assert!((got[[r, c]] - want[r][c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = FusionParams::zeros(8, 3);
        let out = fuse(&ctx(), &random(3, 8, 1), &p).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rows_equal_and_independent_of_q0() {
        let p = FusionParams::init(16, 6, 7);
        let a = fuse(&ctx(), &random(6, 16, 1), &p).unwrap();
        let b = fuse(&ctx(), &random(6, 16, 2), &p).unwrap();
        for r in 0..6 {
            for c in 0..16 {
                assert!((a[[r, c]] - a[[0, c]]).abs() <= 1e-12);
                assert!((a[[r, c]] - b[[r, c]]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_reported() {
        let p = FusionParams::init(4, 2, 0);
        assert!(matches!(fuse(&ctx(), &random(3, 4, 0), &p), Err(FusionError::Shape(_))));
    }

    #[test]
    fn grad_check_linear_zero_params() {
        let p = FusionParams::zeros(4, 2);
        let loss = LinearLoss { weights: random(2, 4, 9) };
        assert!(grad_check(&p, &ctx(), &random(2, 4, 3), &loss).unwrap() < 1e-6);
    }

    #[test]
    fn grad_check_random_small() {
        for seed in 0..10 {
            let p = FusionParams::init(4, 2, seed);
            let q0 = random(2, 4, seed + 50);
            let loss = SquaredLoss { target: random(2, 4, seed + 90) };
            let err = grad_check(&p, &ctx(), &q0, &loss).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let p = FusionParams::init(4, 2, 1);
        let g = gradients(&ctx(), &random(2, 4, 0), &p, &ConstantLoss(3.0)).unwrap();
        assert!(g.tensors().iter().all(|(_, _, s)| s.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn param_file_round_trip() {
        let p = FusionParams::init(4, 2, 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.save_json(&path).unwrap();
        assert_eq!(FusionParams::load_json(&path).unwrap(), p);
    }
}
