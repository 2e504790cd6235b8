//! A small stack of pre-norm transformer blocks whose self-attention is the
//! relation-aware kernel. All layers read one shared pair of relation tables.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernel::{
    attend_backward, attend_with_cache, check_heads, AttentionCache, AttentionError,
    AttentionLayerParams, HeadWeights, RelationEmbeddingTables,
};
use super::matrix::Matrix;
use super::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-6;
pub const DEFAULT_RELATION_INIT_SCALE: f64 = 0.02;

// Weights and tables come from independent streams of the same seed.
const WEIGHT_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub seed: u64,
    /// Standard deviation of the relation-table initialization.
    pub relation_init_scale: f64,
    pub layer_norm: bool,
    /// When false the feed-forward sublayer is skipped and only its residual
    /// connection remains.
    pub feed_forward: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            model_dim: 8,
            heads: 2,
            ff_dim: 16,
            seed: 0,
            relation_init_scale: DEFAULT_RELATION_INIT_SCALE,
            layer_norm: true,
            feed_forward: true,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        if self.layers == 0 {
            return Err(AttentionError::InvalidConfig("at least one layer is required".into()));
        }
        if !(self.relation_init_scale >= 0.0 && self.relation_init_scale.is_finite()) {
            return Err(AttentionError::InvalidConfig(format!(
                "relation init scale {} must be finite and non-negative",
                self.relation_init_scale
            )));
        }
        if self.feed_forward && self.ff_dim == 0 {
            return Err(AttentionError::InvalidConfig("feed-forward width must be positive".into()));
        }
        check_heads(self.model_dim, self.heads).map(|_| ())
    }
}

/// Tables drawn i.i.d. from N(0, σ²) with σ = `relation_init_scale`.
pub fn init_tables<T: Scalar>(config: &EncoderConfig) -> RelationEmbeddingTables<T> {
    let d = config.head_dim();
    let mut tables = RelationEmbeddingTables::zeros(d);
    let sigma = config.relation_init_scale;
    if sigma == 0.0 || !sigma.is_finite() {
        return tables;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, sigma).expect("finite positive scale");
    fill_normal(tables.keys.as_mut_slice(), &normal, &mut rng);
    fill_normal(tables.values.as_mut_slice(), &normal, &mut rng);
    tables
}

fn fill_normal<T: Scalar>(out: &mut [T], normal: &Normal<f64>, rng: &mut ChaCha8Rng) {
    for x in out {
        *x = T::lit(normal.sample(rng));
    }
}

fn random_matrix<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let normal = Normal::new(0.0, 1.0 / (rows.max(1) as f64).sqrt()).expect("positive scale");
    let mut m = Matrix::zeros(rows, cols);
    fill_normal(m.as_mut_slice(), &normal, rng);
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn identity(dim: usize) -> Self {
        LayerNorm {
            gain: vec![T::one(); dim],
            bias: vec![T::zero(); dim],
        }
    }

    fn zeros(dim: usize) -> Self {
        LayerNorm {
            gain: vec![T::zero(); dim],
            bias: vec![T::zero(); dim],
        }
    }
}

#[derive(Debug, Clone)]
struct NormCache<T> {
    normalized: Matrix<T>,
    inv_std: Vec<T>,
}

fn layer_norm_forward<T: Scalar>(x: &Matrix<T>, ln: &LayerNorm<T>) -> (Matrix<T>, NormCache<T>) {
    let (n, d) = x.shape();
    let eps = T::lit(LAYER_NORM_EPS);
    let dim = T::lit(d as f64);
    let mut normalized = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() / dim;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dim;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for c in 0..d {
            let xh = (row[c] - mean) * inv;
            normalized[(i, c)] = xh;
            out[(i, c)] = ln.gain[c] * xh + ln.bias[c];
        }
    }
    (out, NormCache { normalized, inv_std })
}

/// Returns the input gradient and accumulates gain/bias gradients into `grad`.
fn layer_norm_backward<T: Scalar>(
    dy: &Matrix<T>,
    cache: &NormCache<T>,
    ln: &LayerNorm<T>,
    grad: &mut LayerNorm<T>,
) -> Matrix<T> {
    let (n, d) = dy.shape();
    let dim = T::lit(d as f64);
    let mut dx = Matrix::zeros(n, d);
    let mut dxh = vec![T::zero(); d];
    for i in 0..n {
        let xh = cache.normalized.row(i);
        for c in 0..d {
            let g = dy[(i, c)];
            grad.gain[c] = grad.gain[c] + g * xh[c];
            grad.bias[c] = grad.bias[c] + g;
            dxh[c] = g * ln.gain[c];
        }
        let sum: T = dxh.iter().copied().sum();
        let sum_xh: T = dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        let scale = cache.inv_std[i] / dim;
        for c in 0..d {
            dx[(i, c)] = scale * (dim * dxh[c] - sum - xh[c] * sum_xh);
        }
    }
    dx
}

/// Position-wise ReLU feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<T> {
    pub w_in: Matrix<T>,
    pub b_in: Vec<T>,
    pub w_out: Matrix<T>,
    pub b_out: Vec<T>,
}

impl<T: Scalar> FeedForward<T> {
    fn zeros(model_dim: usize, ff_dim: usize) -> Self {
        FeedForward {
            w_in: Matrix::zeros(model_dim, ff_dim),
            b_in: vec![T::zero(); ff_dim],
            w_out: Matrix::zeros(ff_dim, model_dim),
            b_out: vec![T::zero(); model_dim],
        }
    }
}

#[derive(Debug, Clone)]
struct FeedForwardCache<T> {
    input: Matrix<T>,
    pre: Matrix<T>,
    hidden: Matrix<T>,
}

fn add_bias<T: Scalar>(m: &mut Matrix<T>, b: &[T]) {
    for i in 0..m.rows() {
        for (v, &bb) in m.row_mut(i).iter_mut().zip(b) {
            *v = *v + bb;
        }
    }
}

fn feed_forward_forward<T: Scalar>(x: &Matrix<T>, ff: &FeedForward<T>) -> (Matrix<T>, FeedForwardCache<T>) {
    let mut pre = x.matmul(&ff.w_in);
    add_bias(&mut pre, &ff.b_in);
    let mut hidden = pre.clone();
    for v in hidden.as_mut_slice() {
        *v = v.max(T::zero());
    }
    let mut out = hidden.matmul(&ff.w_out);
    add_bias(&mut out, &ff.b_out);
    let cache = FeedForwardCache {
        input: x.clone(),
        pre,
        hidden,
    };
    (out, cache)
}

fn feed_forward_backward<T: Scalar>(
    dy: &Matrix<T>,
    cache: &FeedForwardCache<T>,
    ff: &FeedForward<T>,
    grad: &mut FeedForward<T>,
) -> Matrix<T> {
    grad.w_out.add_assign(&cache.hidden.t_matmul(dy));
    for i in 0..dy.rows() {
        for (b, &g) in grad.b_out.iter_mut().zip(dy.row(i)) {
            *b = *b + g;
        }
    }
    let mut dpre = dy.matmul_t(&ff.w_out);
    for (g, &p) in dpre.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
        if p <= T::zero() {
            *g = T::zero();
        }
    }
    grad.w_in.add_assign(&cache.input.t_matmul(&dpre));
    for i in 0..dpre.rows() {
        for (b, &g) in grad.b_in.iter_mut().zip(dpre.row(i)) {
            *b = *b + g;
        }
    }
    dpre.matmul_t(&ff.w_in)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub attention: AttentionLayerParams<T>,
    pub attention_norm: LayerNorm<T>,
    pub feed_forward: FeedForward<T>,
    pub feed_forward_norm: LayerNorm<T>,
}

impl<T: Scalar> EncoderLayer<T> {
    fn zeros(config: &EncoderConfig) -> Self {
        let d = config.model_dim;
        EncoderLayer {
            attention: AttentionLayerParams::zeros(d, d, config.heads).expect("validated config"),
            attention_norm: LayerNorm::zeros(d),
            feed_forward: FeedForward::zeros(d, config.ff_dim),
            feed_forward_norm: LayerNorm::zeros(d),
        }
    }

    fn random(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.model_dim;
        let hd = config.head_dim();
        let heads = (0..config.heads)
            .map(|_| HeadWeights {
                query: random_matrix(d, hd, rng),
                key: random_matrix(d, hd, rng),
                value: random_matrix(d, hd, rng),
            })
            .collect();
        EncoderLayer {
            attention: AttentionLayerParams { heads, model_dim: d },
            attention_norm: LayerNorm::identity(d),
            feed_forward: FeedForward {
                w_in: random_matrix(d, config.ff_dim, rng),
                b_in: vec![T::zero(); config.ff_dim],
                w_out: random_matrix(config.ff_dim, d, rng),
                b_out: vec![T::zero(); d],
            },
            feed_forward_norm: LayerNorm::identity(d),
        }
    }

    /// Every parameter block with a stable name and `(rows, cols)` shape.
    pub fn fields(&self) -> Vec<(String, (usize, usize), &[T])> {
        let d = self.attention_norm.gain.len();
        let mut out = Vec::new();
        for (h, w) in self.attention.heads.iter().enumerate() {
            out.push((format!("attention.{h}.query"), w.query.shape(), w.query.as_slice()));
            out.push((format!("attention.{h}.key"), w.key.shape(), w.key.as_slice()));
            out.push((format!("attention.{h}.value"), w.value.shape(), w.value.as_slice()));
        }
        let ff = &self.feed_forward;
        out.push(("attention_norm.gain".into(), (1, d), &self.attention_norm.gain[..]));
        out.push(("attention_norm.bias".into(), (1, d), &self.attention_norm.bias[..]));
        out.push(("feed_forward.w_in".into(), ff.w_in.shape(), ff.w_in.as_slice()));
        out.push(("feed_forward.b_in".into(), (1, ff.b_in.len()), &ff.b_in[..]));
        out.push(("feed_forward.w_out".into(), ff.w_out.shape(), ff.w_out.as_slice()));
        out.push(("feed_forward.b_out".into(), (1, ff.b_out.len()), &ff.b_out[..]));
        out.push(("feed_forward_norm.gain".into(), (1, d), &self.feed_forward_norm.gain[..]));
        out.push(("feed_forward_norm.bias".into(), (1, d), &self.feed_forward_norm.bias[..]));
        out
    }

    /// Mutable views in the same order as [`EncoderLayer::fields`].
    pub fn fields_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for w in &mut self.attention.heads {
            out.push(w.query.as_mut_slice());
            out.push(w.key.as_mut_slice());
            out.push(w.value.as_mut_slice());
        }
        let ff = &mut self.feed_forward;
        out.push(&mut self.attention_norm.gain);
        out.push(&mut self.attention_norm.bias);
        out.push(ff.w_in.as_mut_slice());
        out.push(&mut ff.b_in);
        out.push(ff.w_out.as_mut_slice());
        out.push(&mut ff.b_out);
        out.push(&mut self.feed_forward_norm.gain);
        out.push(&mut self.feed_forward_norm.bias);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub layers: Vec<EncoderLayer<T>>,
    /// The single pair of relation tables read by every layer and head.
    pub tables: RelationEmbeddingTables<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    attention_norm: Option<NormCache<T>>,
    attention: AttentionCache<T>,
    feed_forward_norm: Option<NormCache<T>>,
    feed_forward: Option<FeedForwardCache<T>>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    rows: usize,
    layers: Vec<LayerCache<T>>,
}

impl<T: Scalar> EncoderCache<T> {
    /// Forward state of layer `l`'s attention.
    pub fn attention(&self, l: usize) -> &AttentionCache<T> {
        &self.layers[l].attention
    }

    /// Largest inverse standard deviation applied by any layer norm, if one ran.
    pub fn max_norm_gain(&self) -> Option<T> {
        self.layers
            .iter()
            .flat_map(|l| [l.attention_norm.as_ref(), l.feed_forward_norm.as_ref()])
            .flatten()
            .flat_map(|c| c.inv_std.iter().copied())
            .reduce(T::max)
    }

    /// Smallest |pre-activation| of any feed-forward unit, if the sublayer ran.
    /// Finite-difference checks are unreliable when this is near zero.
    pub fn relu_margin(&self) -> Option<T> {
        self.layers
            .iter()
            .filter_map(|l| l.feed_forward.as_ref())
            .flat_map(|c| c.pre.as_slice().iter().map(|v| v.abs()))
            .reduce(T::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads<T> {
    pub input: Matrix<T>,
    pub layers: Vec<EncoderLayer<T>>,
    /// Sum of the per-layer contributions, accumulated from the last layer
    /// to the first.
    pub tables: RelationEmbeddingTables<T>,
    pub tables_by_layer: Vec<RelationEmbeddingTables<T>>,
}

impl<T: Scalar> Encoder<T> {
    /// Randomly initialized encoder; everything is a function of `config.seed`.
    pub fn new(config: EncoderConfig) -> Result<Self, AttentionError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ WEIGHT_STREAM);
        let layers = (0..config.layers).map(|_| EncoderLayer::random(&config, &mut rng)).collect();
        let tables = init_tables(&config);
        Ok(Encoder { config, layers, tables })
    }

    /// All-zero parameters of the right shapes.
    pub fn zeros(config: EncoderConfig) -> Result<Self, AttentionError> {
        config.validate()?;
        let layers = (0..config.layers).map(|_| EncoderLayer::zeros(&config)).collect();
        let tables = RelationEmbeddingTables::zeros(config.head_dim());
        Ok(Encoder { config, layers, tables })
    }

    /// Assembles an encoder from existing parameters, checking shapes.
    pub fn from_parts(
        config: EncoderConfig,
        layers: Vec<EncoderLayer<T>>,
        tables: RelationEmbeddingTables<T>,
    ) -> Result<Self, AttentionError> {
        let template = Self::zeros(config)?;
        if layers.len() != template.layers.len() {
            return Err(AttentionError::ShapeError(format!(
                "{} layers given, config has {}",
                layers.len(),
                template.layers.len()
            )));
        }
        let enc = Encoder {
            config: template.config.clone(),
            layers,
            tables,
        };
        let want = template.fields();
        let got = enc.fields();
        if want.len() != got.len() {
            return Err(AttentionError::ShapeError("layer structure differs from the config".into()));
        }
        for ((name, shape, _), (_, got_shape, data)) in want.iter().zip(&got) {
            if shape != got_shape || data.len() != shape.0 * shape.1 {
                return Err(AttentionError::ShapeError(format!(
                    "{name} is {got_shape:?}, expected {shape:?}"
                )));
            }
        }
        Ok(enc)
    }

    /// Parameter blocks in checkpoint order: tables first, then each layer.
    pub fn fields(&self) -> Vec<(String, (usize, usize), &[T])> {
        let mut out = vec![
            ("relation_keys".to_string(), self.tables.keys.shape(), self.tables.keys.as_slice()),
            ("relation_values".to_string(), self.tables.values.shape(), self.tables.values.as_slice()),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, shape, data) in layer.fields() {
                out.push((format!("layers.{l}.{name}"), shape, data));
            }
        }
        out
    }

    pub fn fields_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![self.tables.keys.as_mut_slice(), self.tables.values.as_mut_slice()];
        for layer in &mut self.layers {
            out.extend(layer.fields_mut());
        }
        out
    }

    pub fn encode(&self, x: &Matrix<T>, rel: &[u16]) -> Result<Matrix<T>, AttentionError> {
        self.encode_with_cache(x, rel).map(|(y, _)| y)
    }

    pub fn encode_with_cache(&self, x: &Matrix<T>, rel: &[u16]) -> Result<(Matrix<T>, EncoderCache<T>), AttentionError> {
        if x.cols() != self.config.model_dim {
            return Err(AttentionError::ShapeError(format!(
                "inputs have width {}, encoder expects {}",
                x.cols(),
                self.config.model_dim
            )));
        }
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (h_next, cache) = self.layer_forward(layer, &h, rel)?;
            h = h_next;
            caches.push(cache);
        }
        Ok((h, EncoderCache { rows: x.rows(), layers: caches }))
    }

    fn layer_forward(
        &self,
        layer: &EncoderLayer<T>,
        x: &Matrix<T>,
        rel: &[u16],
    ) -> Result<(Matrix<T>, LayerCache<T>), AttentionError> {
        let (a, attention_norm) = if self.config.layer_norm {
            let (a, c) = layer_norm_forward(x, &layer.attention_norm);
            (a, Some(c))
        } else {
            (x.clone(), None)
        };
        let (att, attention) = attend_with_cache(&a, rel, &layer.attention, &self.tables)?;
        let h = x.add(&att);
        if !self.config.feed_forward {
            let cache = LayerCache {
                attention_norm,
                attention,
                feed_forward_norm: None,
                feed_forward: None,
            };
            return Ok((h, cache));
        }
        let (b, feed_forward_norm) = if self.config.layer_norm {
            let (b, c) = layer_norm_forward(&h, &layer.feed_forward_norm);
            (b, Some(c))
        } else {
            (h.clone(), None)
        };
        let (f, ff_cache) = feed_forward_forward(&b, &layer.feed_forward);
        let cache = LayerCache {
            attention_norm,
            attention,
            feed_forward_norm,
            feed_forward: Some(ff_cache),
        };
        Ok((h.add(&f), cache))
    }

    /// Gradients of `Σ grad_out ⊙ encode(x, rel)` with respect to the input
    /// and every parameter.
    pub fn backward(&self, grad_out: &Matrix<T>, cache: &EncoderCache<T>) -> Result<EncoderGrads<T>, AttentionError> {
        if cache.layers.len() != self.layers.len() {
            return Err(AttentionError::StaleCache);
        }
        if grad_out.shape() != (cache.rows, self.config.model_dim) {
            return Err(AttentionError::ShapeError(format!(
                "upstream gradient is {:?}, expected ({}, {})",
                grad_out.shape(),
                cache.rows,
                self.config.model_dim
            )));
        }
        let mut layer_grads: Vec<EncoderLayer<T>> =
            (0..self.layers.len()).map(|_| EncoderLayer::zeros(&self.config)).collect();
        let mut tables_by_layer = vec![RelationEmbeddingTables::zeros(self.config.head_dim()); self.layers.len()];
        let mut tables = RelationEmbeddingTables::zeros(self.config.head_dim());
        let mut dy = grad_out.clone();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let lc = &cache.layers[l];
            let grad = &mut layer_grads[l];
            let mut dh = dy.clone();
            if let Some(ffc) = &lc.feed_forward {
                let db = feed_forward_backward(&dy, ffc, &layer.feed_forward, &mut grad.feed_forward);
                let dh_ff = match &lc.feed_forward_norm {
                    Some(nc) => layer_norm_backward(&db, nc, &layer.feed_forward_norm, &mut grad.feed_forward_norm),
                    None => db,
                };
                dh.add_assign(&dh_ff);
            }
            let ag = attend_backward(&dh, &lc.attention, &layer.attention, &self.tables)?;
            grad.attention.heads = ag.heads;
            let dx_att = match &lc.attention_norm {
                Some(nc) => layer_norm_backward(&ag.input, nc, &layer.attention_norm, &mut grad.attention_norm),
                None => ag.input,
            };
            dh.add_assign(&dx_att);
            tables.keys.add_assign(&ag.tables.keys);
            tables.values.add_assign(&ag.tables.values);
            tables_by_layer[l] = ag.tables;
            dy = dh;
        }

        Ok(EncoderGrads {
            input: dy,
            layers: layer_grads,
            tables,
            tables_by_layer,
        })
    }
}

impl<T: Scalar> EncoderGrads<T> {
    /// Gradient blocks in the same order as [`Encoder::fields`].
    pub fn blocks(&self) -> Vec<&[T]> {
        let mut out = vec![self.tables.keys.as_slice(), self.tables.values.as_slice()];
        for layer in &self.layers {
            out.extend(layer.fields().into_iter().map(|(_, _, d)| d));
        }
        out
    }
}

/// `encoder.encode(x, rel)`.
pub fn encode<T: Scalar>(x: &Matrix<T>, rel: &[u16], encoder: &Encoder<T>) -> Result<Matrix<T>, AttentionError> {
    encoder.encode(x, rel)
}
