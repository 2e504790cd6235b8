//! Numerical self-checks behind `attn-check`: attention rows sum to one,
//! zero relation tables reduce to plain attention, analytic gradients agree
//! with central finite differences, and permuting tokens permutes outputs.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::encoder::{Encoder, EncoderConfig};
use super::kernel::{attend, attend_with_cache, AttentionError, AttentionLayerParams, RelationEmbeddingTables};
use super::matrix::{dot, Matrix};
use crate::relation::RelationType;

pub const ROW_SUM_TOLERANCE: f64 = 1e-9;
pub const ZERO_EMBEDDING_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const PERMUTATION_TOLERANCE: f64 = 1e-9;
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of [`relative_error`]. Central differences with step
/// 1e-5 on O(1) losses resolve gradients only to about 1e-10 absolute, so
/// entries below this floor are compared at that resolution instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;
/// Instances whose feed-forward pre-activations come closer than this to the
/// ReLU kink are redrawn before finite differencing.
pub const RELU_MARGIN: f64 = 1e-3;
/// Instances where a layer norm divides by a standard deviation below
/// `1 / MAX_NORM_GAIN` are redrawn; their curvature swamps central differences.
pub const MAX_NORM_GAIN: f64 = 5.0;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Scaled dot-product self-attention without relation terms.
pub fn vanilla_attention(x: &Matrix<f64>, params: &AttentionLayerParams<f64>) -> Matrix<f64> {
    let n = x.rows();
    let d = params.head_dim();
    let scale = (d as f64).sqrt();
    let mut out = Matrix::zeros(n, params.model_dim);
    for (h, w) in params.heads.iter().enumerate() {
        let q = x.matmul(&w.query);
        let k = x.matmul(&w.key);
        let v = x.matmul(&w.value);
        for i in 0..n {
            let scores: Vec<f64> = (0..n).map(|j| dot(q.row(i), k.row(j)) / scale).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = e.iter().sum();
            for j in 0..n {
                for c in 0..d {
                    out[(i, h * d + c)] += e[j] / total * v[(j, c)];
                }
            }
        }
    }
    out
}

/// One randomized problem: an encoder, its inputs and an upstream gradient
/// defining the scalar loss `Σ upstream ⊙ encode(x, rel)`.
#[derive(Debug, Clone)]
pub struct CheckInstance {
    pub encoder: Encoder<f64>,
    pub x: Matrix<f64>,
    pub rel: Vec<u16>,
    pub upstream: Matrix<f64>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| gauss(rng))
}

/// Draws an instance with n ≤ 6 tokens and model width ≤ 8, redrawing
/// until it is well conditioned for finite differences.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Result<CheckInstance, AttentionError> {
    loop {
        let model_dim = 2 * rng.random_range(1..=4usize);
        let heads = rng.random_range(1..=2usize);
        let config = EncoderConfig {
            layers: rng.random_range(1..=2),
            model_dim,
            heads,
            ff_dim: rng.random_range(2..=8),
            seed: rng.random(),
            relation_init_scale: 0.5,
            layer_norm: true,
            feed_forward: true,
        };
        let mut encoder = Encoder::<f64>::new(config)?;
        // Move norms away from the identity so their gradients are exercised.
        for layer in &mut encoder.layers {
            for norm in [&mut layer.attention_norm, &mut layer.feed_forward_norm] {
                for g in &mut norm.gain {
                    *g += 0.3 * gauss(rng);
                }
                for b in &mut norm.bias {
                    *b = 0.3 * gauss(rng);
                }
            }
            for b in layer.feed_forward.b_in.iter_mut().chain(&mut layer.feed_forward.b_out) {
                *b = 0.1 * gauss(rng);
            }
        }
        let n = rng.random_range(1..=6usize);
        let x = normal_matrix(n, encoder.config.model_dim, rng);
        let rel: Vec<u16> = (0..n * n)
            .map(|_| rng.random_range(0..RelationType::COUNT as u16))
            .collect();
        let upstream = normal_matrix(n, encoder.config.model_dim, rng);
        let (_, cache) = encoder.encode_with_cache(&x, &rel)?;
        let well_conditioned = cache.relu_margin().is_none_or(|m| m > RELU_MARGIN)
            && cache.max_norm_gain().is_none_or(|g| g < MAX_NORM_GAIN);
        if well_conditioned {
            return Ok(CheckInstance { encoder, x, rel, upstream });
        }
    }
}

fn loss(encoder: &Encoder<f64>, x: &Matrix<f64>, rel: &[u16], upstream: &Matrix<f64>) -> Result<f64, AttentionError> {
    let y = encoder.encode(x, rel)?;
    Ok(y.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub max_relative_error: f64,
    pub worst_field: String,
    pub checked: usize,
}

impl GradientReport {
    fn record(&mut self, field: &str, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_relative_error {
            self.max_relative_error = err;
            self.worst_field = field.to_string();
        }
    }
}

/// Compares analytic gradients of every parameter and of the input against
/// central differences with step `step`. Table rows that no relation id
/// selects are required to have exactly zero analytic gradient.
pub fn gradient_check(instance: &CheckInstance, step: f64) -> Result<GradientReport, AttentionError> {
    let CheckInstance { encoder, x, rel, upstream } = instance;
    let (_, cache) = encoder.encode_with_cache(x, rel)?;
    let grads = encoder.backward(upstream, &cache)?;
    let mut report = GradientReport {
        max_relative_error: 0.0,
        worst_field: String::new(),
        checked: 0,
    };

    let names: Vec<(String, usize)> = encoder.fields().into_iter().map(|(n, (_, c), _)| (n, c)).collect();
    let analytic: Vec<Vec<f64>> = grads.blocks().into_iter().map(<[f64]>::to_vec).collect();
    let mut probe = encoder.clone();
    for (b, ((name, cols), grad)) in names.iter().zip(&analytic).enumerate() {
        let is_table = b < 2;
        for k in 0..grad.len() {
            if is_table && !rel.contains(&((k / cols) as u16)) {
                let err = if grad[k] == 0.0 { 0.0 } else { f64::INFINITY };
                report.checked += 1;
                if err > report.max_relative_error {
                    report.max_relative_error = err;
                    report.worst_field = name.clone();
                }
                continue;
            }
            let orig = probe.fields_mut()[b][k];
            probe.fields_mut()[b][k] = orig + step;
            let plus = loss(&probe, x, rel, upstream)?;
            probe.fields_mut()[b][k] = orig - step;
            let minus = loss(&probe, x, rel, upstream)?;
            probe.fields_mut()[b][k] = orig;
            report.record(name, grad[k], (plus - minus) / (2.0 * step));
        }
    }

    let mut xp = x.clone();
    for k in 0..x.as_slice().len() {
        let orig = xp.as_slice()[k];
        xp.as_mut_slice()[k] = orig + step;
        let plus = loss(encoder, &xp, rel, upstream)?;
        xp.as_mut_slice()[k] = orig - step;
        let minus = loss(encoder, &xp, rel, upstream)?;
        xp.as_mut_slice()[k] = orig;
        report.record("input", grads.input.as_slice()[k], (plus - minus) / (2.0 * step));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttnCheckReport {
    pub instances: usize,
    pub max_row_deviation: f64,
    pub zero_embedding_max_error: f64,
    pub gradient_max_relative_error: f64,
    pub gradient_worst_field: String,
    pub permutation_max_error: f64,
}

impl AttnCheckReport {
    pub fn passed(&self) -> bool {
        self.max_row_deviation < ROW_SUM_TOLERANCE
            && self.zero_embedding_max_error < ZERO_EMBEDDING_TOLERANCE
            && self.gradient_max_relative_error < GRADIENT_TOLERANCE
            && self.permutation_max_error < PERMUTATION_TOLERANCE
    }
}

/// Largest deviation between encoding permuted tokens and permuting the
/// encoding, for a random permutation of the instance's tokens.
pub fn permutation_error<R: rand::Rng>(inst: &CheckInstance, rng: &mut R) -> Result<f64, AttentionError> {
    let n = inst.x.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let xp = inst.x.permute_rows(&perm);
    let relp: Vec<u16> = (0..n * n).map(|k| inst.rel[perm[k / n] * n + perm[k % n]]).collect();
    let y = inst.encoder.encode(&inst.x, &inst.rel)?;
    let yp = inst.encoder.encode(&xp, &relp)?;
    Ok(yp.max_abs_diff(&y.permute_rows(&perm)))
}

/// Runs all four checks over `instances` random problems drawn from `seed`.
pub fn attn_check(seed: u64, instances: usize) -> Result<AttnCheckReport, AttentionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AttnCheckReport {
        instances,
        max_row_deviation: 0.0,
        zero_embedding_max_error: 0.0,
        gradient_max_relative_error: 0.0,
        gradient_worst_field: String::new(),
        permutation_max_error: 0.0,
    };
    for _ in 0..instances {
        let inst = random_instance(&mut rng)?;
        let (_, cache) = inst.encoder.encode_with_cache(&inst.x, &inst.rel)?;
        for l in 0..inst.encoder.layers.len() {
            let att = cache.attention(l);
            for h in 0..att.head_count() {
                for i in 0..inst.x.rows() {
                    let s: f64 = att.weights(h).row(i).iter().sum();
                    report.max_row_deviation = report.max_row_deviation.max((s - 1.0).abs());
                }
            }
        }

        let params = &inst.encoder.layers[0].attention;
        let zero = RelationEmbeddingTables::zeros(params.head_dim());
        let with_rel = attend(&inst.x, &inst.rel, params, &zero)?;
        let err = with_rel.max_abs_diff(&vanilla_attention(&inst.x, params));
        report.zero_embedding_max_error = report.zero_embedding_max_error.max(err);
        // The cached path must agree with the plain one.
        let (cached, _) = attend_with_cache(&inst.x, &inst.rel, params, &zero)?;
        report.zero_embedding_max_error = report.zero_embedding_max_error.max(cached.max_abs_diff(&with_rel));

        let g = gradient_check(&inst, FD_STEP)?;
        if g.max_relative_error > report.gradient_max_relative_error {
            report.gradient_max_relative_error = g.max_relative_error;
            report.gradient_worst_field = g.worst_field;
        }

        let err = permutation_error(&inst, &mut rng)?;
        report.permutation_max_error = report.permutation_max_error.max(err);
    }
    Ok(report)
}
