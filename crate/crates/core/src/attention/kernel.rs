//! Relation-aware multi-head self-attention.
//!
//! For head h with per-head width d = d_z / H:
//!
//! ```text
//! s_ij = x_i W_Q (x_j W_K + R_K[rel_ij])ᵀ / sqrt(d)
//! α_ij = softmax_j(s_ij)
//! z_i  = Σ_j α_ij (x_j W_V + R_V[rel_ij])
//! ```
//!
//! and the head outputs are concatenated.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use super::matrix::{dot, Matrix};
use super::Scalar;
use crate::relation::RelationType;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttentionError {
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("relation id {id} at ({row}, {col}) outside the {count}-row tables")]
    IdOutOfRange {
        id: u16,
        row: usize,
        col: usize,
        count: usize,
    },
    #[error("cached forward state does not match the current parameters or tables")]
    StaleCache,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn shape_err(msg: impl Into<String>) -> AttentionError {
    AttentionError::ShapeError(msg.into())
}

/// Relation embeddings added to keys and values, one row per relation label.
/// Key and value tables are independent parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationEmbeddingTables<T> {
    pub keys: Matrix<T>,
    pub values: Matrix<T>,
}

impl<T: Scalar> RelationEmbeddingTables<T> {
    pub fn zeros(head_dim: usize) -> Self {
        RelationEmbeddingTables {
            keys: Matrix::zeros(RelationType::COUNT, head_dim),
            values: Matrix::zeros(RelationType::COUNT, head_dim),
        }
    }

    pub fn new(keys: Matrix<T>, values: Matrix<T>) -> Result<Self, AttentionError> {
        let tables = RelationEmbeddingTables { keys, values };
        tables.validate()?;
        Ok(tables)
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        if self.keys.rows() != RelationType::COUNT || self.values.rows() != RelationType::COUNT {
            return Err(shape_err(format!(
                "relation tables need {} rows, got {} and {}",
                RelationType::COUNT,
                self.keys.rows(),
                self.values.rows()
            )));
        }
        if self.keys.cols() != self.values.cols() {
            return Err(shape_err("key and value tables differ in width"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.keys.cols()
    }

    fn hash_into<H: Hasher>(&self, state: &mut H) {
        hash_matrix(&self.keys, state);
        hash_matrix(&self.values, state);
    }
}

/// Projection weights of one head, each `d_x × d_kv`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights<T> {
    pub query: Matrix<T>,
    pub key: Matrix<T>,
    pub value: Matrix<T>,
}

impl<T: Scalar> HeadWeights<T> {
    pub fn zeros(input_dim: usize, head_dim: usize) -> Self {
        HeadWeights {
            query: Matrix::zeros(input_dim, head_dim),
            key: Matrix::zeros(input_dim, head_dim),
            value: Matrix::zeros(input_dim, head_dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayerParams<T> {
    pub heads: Vec<HeadWeights<T>>,
    pub model_dim: usize,
}

impl<T: Scalar> AttentionLayerParams<T> {
    pub fn zeros(input_dim: usize, model_dim: usize, heads: usize) -> Result<Self, AttentionError> {
        let head_dim = check_heads(model_dim, heads)?;
        Ok(AttentionLayerParams {
            heads: (0..heads).map(|_| HeadWeights::zeros(input_dim, head_dim)).collect(),
            model_dim,
        })
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads.len().max(1)
    }

    pub fn input_dim(&self) -> usize {
        self.heads.first().map_or(0, |h| h.query.rows())
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        let head_dim = check_heads(self.model_dim, self.heads.len())?;
        let d_x = self.input_dim();
        for (h, w) in self.heads.iter().enumerate() {
            for (name, m) in [("query", &w.query), ("key", &w.key), ("value", &w.value)] {
                if m.shape() != (d_x, head_dim) {
                    return Err(shape_err(format!(
                        "head {h} {name} weights are {:?}, expected ({d_x}, {head_dim})",
                        m.shape()
                    )));
                }
            }
        }
        Ok(())
    }

    fn hash_into<H: Hasher>(&self, state: &mut H) {
        self.model_dim.hash(state);
        for w in &self.heads {
            hash_matrix(&w.query, state);
            hash_matrix(&w.key, state);
            hash_matrix(&w.value, state);
        }
    }
}

pub(crate) fn check_heads(model_dim: usize, heads: usize) -> Result<usize, AttentionError> {
    if heads == 0 || model_dim == 0 || model_dim % heads != 0 {
        return Err(AttentionError::InvalidConfig(format!(
            "model width {model_dim} must be a positive multiple of head count {heads}"
        )));
    }
    Ok(model_dim / heads)
}

fn hash_matrix<T: Scalar, H: Hasher>(m: &Matrix<T>, state: &mut H) {
    m.shape().hash(state);
    for x in m.as_slice() {
        x.to_f64().unwrap_or(f64::NAN).to_bits().hash(state);
    }
}

fn fingerprint<T: Scalar>(params: &AttentionLayerParams<T>, tables: &RelationEmbeddingTables<T>) -> u64 {
    let mut h = DefaultHasher::new();
    params.hash_into(&mut h);
    tables.hash_into(&mut h);
    h.finish()
}

#[derive(Debug, Clone)]
struct HeadState<T> {
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    alpha: Matrix<T>,
}

/// Forward activations needed by [`attend_backward`].
#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    input: Matrix<T>,
    rel: Vec<u16>,
    heads: Vec<HeadState<T>>,
    fingerprint: u64,
}

impl<T: Scalar> AttentionCache<T> {
    /// Attention weights of head `h`, `n × n`.
    pub fn weights(&self, h: usize) -> &Matrix<T> {
        &self.heads[h].alpha
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn input(&self) -> &Matrix<T> {
        &self.input
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads<T> {
    pub input: Matrix<T>,
    pub heads: Vec<HeadWeights<T>>,
    pub tables: RelationEmbeddingTables<T>,
}

fn check_inputs<T: Scalar>(
    x: &Matrix<T>,
    rel: &[u16],
    params: &AttentionLayerParams<T>,
    tables: &RelationEmbeddingTables<T>,
) -> Result<(), AttentionError> {
    params.validate()?;
    tables.validate()?;
    let n = x.rows();
    if x.cols() != params.input_dim() {
        return Err(shape_err(format!(
            "inputs have width {}, weights expect {}",
            x.cols(),
            params.input_dim()
        )));
    }
    if rel.len() != n * n {
        return Err(shape_err(format!("{} relation ids for {n} tokens", rel.len())));
    }
    if tables.head_dim() != params.head_dim() {
        return Err(shape_err(format!(
            "relation tables have width {}, heads have {}",
            tables.head_dim(),
            params.head_dim()
        )));
    }
    let count = tables.keys.rows();
    if let Some(k) = rel.iter().position(|&id| id as usize >= count) {
        return Err(AttentionError::IdOutOfRange {
            id: rel[k],
            row: k / n,
            col: k % n,
            count,
        });
    }
    Ok(())
}

/// Runs the layer; `rel` holds `n × n` relation ids in row-major order.
pub fn attend<T: Scalar>(
    x: &Matrix<T>,
    rel: &[u16],
    params: &AttentionLayerParams<T>,
    tables: &RelationEmbeddingTables<T>,
) -> Result<Matrix<T>, AttentionError> {
    attend_with_cache(x, rel, params, tables).map(|(z, _)| z)
}

pub fn attend_with_cache<T: Scalar>(
    x: &Matrix<T>,
    rel: &[u16],
    params: &AttentionLayerParams<T>,
    tables: &RelationEmbeddingTables<T>,
) -> Result<(Matrix<T>, AttentionCache<T>), AttentionError> {
    check_inputs(x, rel, params, tables)?;
    let n = x.rows();
    let d = params.head_dim();
    let inv_scale = T::one() / T::lit(d as f64).sqrt();
    let mut out = Matrix::zeros(n, params.model_dim);
    let mut states = Vec::with_capacity(params.heads.len());

    for (h, w) in params.heads.iter().enumerate() {
        let q = x.matmul(&w.query);
        let k = x.matmul(&w.key);
        let v = x.matmul(&w.value);
        let mut alpha = Matrix::zeros(n, n);
        let mut key_j = vec![T::zero(); d];
        for i in 0..n {
            for j in 0..n {
                let r = rel[i * n + j] as usize;
                for ((kj, &a), &b) in key_j.iter_mut().zip(k.row(j)).zip(tables.keys.row(r)) {
                    *kj = a + b;
                }
                alpha[(i, j)] = dot(q.row(i), &key_j) * inv_scale;
            }
            softmax_in_place(alpha.row_mut(i));
            let z = &mut out.row_mut(i)[h * d..(h + 1) * d];
            for j in 0..n {
                let a = alpha[(i, j)];
                let r = rel[i * n + j] as usize;
                for ((o, &vj), &rv) in z.iter_mut().zip(v.row(j)).zip(tables.values.row(r)) {
                    *o = *o + a * (vj + rv);
                }
            }
        }
        states.push(HeadState { q, k, v, alpha });
    }

    let cache = AttentionCache {
        input: x.clone(),
        rel: rel.to_vec(),
        heads: states,
        fingerprint: fingerprint(params, tables),
    };
    Ok((out, cache))
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for s in row.iter_mut() {
        *s = (*s - max).exp();
        sum = sum + *s;
    }
    for s in row.iter_mut() {
        *s = *s / sum;
    }
}

/// Exact gradients of the forward map given the upstream gradient `grad_out`
/// (`n × d_z`). `params` and `tables` must be the ones the cache was built
/// with.
pub fn attend_backward<T: Scalar>(
    grad_out: &Matrix<T>,
    cache: &AttentionCache<T>,
    params: &AttentionLayerParams<T>,
    tables: &RelationEmbeddingTables<T>,
) -> Result<AttentionGrads<T>, AttentionError> {
    if cache.heads.len() != params.heads.len() || fingerprint(params, tables) != cache.fingerprint {
        return Err(AttentionError::StaleCache);
    }
    let x = &cache.input;
    let n = x.rows();
    if grad_out.shape() != (n, params.model_dim) {
        return Err(shape_err(format!(
            "upstream gradient is {:?}, expected ({n}, {})",
            grad_out.shape(),
            params.model_dim
        )));
    }
    let d = params.head_dim();
    let inv_scale = T::one() / T::lit(d as f64).sqrt();
    let mut grads = AttentionGrads {
        input: Matrix::zeros(n, x.cols()),
        heads: Vec::with_capacity(params.heads.len()),
        tables: RelationEmbeddingTables::zeros(d),
    };

    for (h, (w, st)) in params.heads.iter().zip(&cache.heads).enumerate() {
        let g = Matrix::from_fn(n, d, |i, c| grad_out[(i, h * d + c)]);
        let mut dq = Matrix::zeros(n, d);
        let mut dk = Matrix::zeros(n, d);
        let mut dv = Matrix::zeros(n, d);
        let mut d_alpha = vec![T::zero(); n];
        let mut tmp = vec![T::zero(); d];

        for i in 0..n {
            let gi = g.row(i);
            for (j, da) in d_alpha.iter_mut().enumerate() {
                let r = cache.rel[i * n + j] as usize;
                for ((t, &vj), &rv) in tmp.iter_mut().zip(st.v.row(j)).zip(tables.values.row(r)) {
                    *t = vj + rv;
                }
                *da = dot(gi, &tmp);
            }
            let mean: T = (0..n).map(|j| st.alpha[(i, j)] * d_alpha[j]).sum();
            for j in 0..n {
                let a = st.alpha[(i, j)];
                let r = cache.rel[i * n + j] as usize;
                // value path
                for (c, &gc) in gi.iter().enumerate() {
                    dv[(j, c)] = dv[(j, c)] + a * gc;
                    let cell = &mut grads.tables.values[(r, c)];
                    *cell = *cell + a * gc;
                }
                // score path
                let ds = a * (d_alpha[j] - mean) * inv_scale;
                for c in 0..d {
                    let key = st.k[(j, c)] + tables.keys[(r, c)];
                    dq[(i, c)] = dq[(i, c)] + ds * key;
                    let qc = ds * st.q[(i, c)];
                    dk[(j, c)] = dk[(j, c)] + qc;
                    let cell = &mut grads.tables.keys[(r, c)];
                    *cell = *cell + qc;
                }
            }
        }

        grads.input.add_assign(&dq.matmul_t(&w.query));
        grads.input.add_assign(&dk.matmul_t(&w.key));
        grads.input.add_assign(&dv.matmul_t(&w.value));
        grads.heads.push(HeadWeights {
            query: x.t_matmul(&dq),
            key: x.t_matmul(&dk),
            value: x.t_matmul(&dv),
        });
    }
    Ok(grads)
}
