//! Parameters, forward pass and manual backward pass of the attention network.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusGraph, EmbeddingMatrix, MetricFactorTensor, NodeFeatures, DEFAULT_EPSILON};
use crate::error::{GssError, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatConfig {
    pub input_dim: usize,
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Factor rank `r`.
    pub rank: usize,
    pub layers: usize,
    pub heads: usize,
    pub emb_hidden: usize,
    pub metric_hidden: usize,
    pub epsilon: f64,
}

impl GatConfig {
    /// Reference layer and head counts with a small width.
    pub fn toy(input_dim: usize, dim: usize, rank: usize) -> Self {
        GatConfig {
            input_dim,
            dim,
            rank,
            layers: 3,
            heads: 4,
            emb_hidden: 2 * dim,
            metric_hidden: 2 * dim,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input dim", self.input_dim),
            ("dim", self.dim),
            ("rank", self.rank),
            ("layers", self.layers),
            ("heads", self.heads),
            ("embedding hidden width", self.emb_hidden),
            ("metric hidden width", self.metric_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(GssError::InvalidParameter(format!("{name} must be positive")));
        }
        if self.rank > self.dim {
            return Err(GssError::InvalidParameter(format!(
                "rank {} exceeds dim {}",
                self.rank, self.dim
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(GssError::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.heads * self.dim
        }
    }

    fn layer_output(&self, layer: usize) -> usize {
        if layer + 1 == self.layers {
            self.dim
        } else {
            self.heads * self.dim
        }
    }
}

/// A `rows × cols` block of the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadSlots {
    pub w: Slot,
    /// `[a_left; a_right]`, length `2d`.
    pub a: Slot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub layers: Vec<Vec<HeadSlots>>,
    pub emb_w1: Slot,
    pub emb_b1: Slot,
    pub emb_w2: Slot,
    pub emb_b2: Slot,
    pub ln_gamma: Slot,
    pub ln_beta: Slot,
    pub met_w1: Slot,
    pub met_b1: Slot,
    pub met_w2: Slot,
    pub met_b2: Slot,
    pub total: usize,
}

impl Layout {
    pub fn new(c: &GatConfig) -> Self {
        let mut next = 0;
        let mut slot = |rows: usize, cols: usize| {
            let s = Slot { offset: next, rows, cols };
            next += rows * cols;
            s
        };
        let layers = (0..c.layers)
            .map(|l| {
                (0..c.heads)
                    .map(|_| HeadSlots {
                        w: slot(c.dim, c.layer_input(l)),
                        a: slot(1, 2 * c.dim),
                    })
                    .collect()
            })
            .collect();
        let emb_w1 = slot(c.emb_hidden, c.dim);
        let emb_b1 = slot(1, c.emb_hidden);
        let emb_w2 = slot(c.dim, c.emb_hidden);
        let emb_b2 = slot(1, c.dim);
        let ln_gamma = slot(1, c.dim);
        let ln_beta = slot(1, c.dim);
        let met_w1 = slot(c.metric_hidden, c.dim);
        let met_b1 = slot(1, c.metric_hidden);
        let met_w2 = slot(c.dim * c.rank, c.metric_hidden);
        let met_b2 = slot(1, c.dim * c.rank);
        Layout {
            layers,
            emb_w1,
            emb_b1,
            emb_w2,
            emb_b2,
            ln_gamma,
            ln_beta,
            met_w1,
            met_b1,
            met_w2,
            met_b2,
            total: next,
        }
    }

    /// Named parameter blocks, in storage order.
    pub fn groups(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        for (l, heads) in self.layers.iter().enumerate() {
            for (k, h) in heads.iter().enumerate() {
                out.push((format!("layer{l}.head{k}.w"), h.w.range()));
                out.push((format!("layer{l}.head{k}.a"), h.a.range()));
            }
        }
        for (name, s) in [
            ("emb.w1", self.emb_w1),
            ("emb.b1", self.emb_b1),
            ("emb.w2", self.emb_w2),
            ("emb.b2", self.emb_b2),
            ("ln.gamma", self.ln_gamma),
            ("ln.beta", self.ln_beta),
            ("metric.w1", self.met_w1),
            ("metric.b1", self.met_b1),
            ("metric.w2", self.met_w2),
            ("metric.b2", self.met_b2),
        ] {
            out.push((name.to_string(), s.range()));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatParams {
    pub config: GatConfig,
    pub layout: Layout,
    pub values: Vec<f64>,
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, out: &mut [f64]) {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.gen_range(-s..s);
    }
}

impl GatParams {
    /// Glorot-uniform weights, zero biases, unit LayerNorm scale.
    pub fn init(config: GatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut values = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for heads in &layout.layers {
            for h in heads {
                glorot(&mut rng, h.w.cols, h.w.rows, &mut values[h.w.range()]);
                glorot(&mut rng, 2 * config.dim, 1, &mut values[h.a.range()]);
            }
        }
        for s in [layout.emb_w1, layout.emb_w2, layout.met_w1, layout.met_w2] {
            glorot(&mut rng, s.cols, s.rows, &mut values[s.range()]);
        }
        values[layout.ln_gamma.range()].fill(1.0);
        Ok(GatParams { config, layout, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn get(&self, s: Slot) -> &[f64] {
        &self.values[s.range()]
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.layout.total);
        GatParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            values,
        }
    }
}

/// Self-inclusive neighbourhoods over the symmetric view, ascending ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Neighborhoods {
    pub fn new(graph: &CorpusGraph) -> Self {
        let view = graph.symmetric_view();
        let mut offsets = vec![0];
        let mut indices = Vec::with_capacity(view.edge_count() + view.node_count());
        for i in 0..view.node_count() {
            let nb = view.neighbors(i);
            let split = nb.partition_point(|&j| j < i);
            indices.extend_from_slice(&nb[..split]);
            indices.push(i);
            indices.extend_from_slice(&nb[split..]);
            offsets.push(indices.len());
        }
        Neighborhoods { offsets, indices }
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

#[derive(Clone, Debug)]
struct HeadCache {
    z: Vec<f64>,
    /// Attention weights aligned with the neighbourhood arrays.
    alpha: Vec<f64>,
    pre: Vec<f64>,
    o: Vec<f64>,
}

#[derive(Clone, Debug)]
struct LayerCache {
    input: Vec<f64>,
    heads: Vec<HeadCache>,
    /// Mean of head outputs, final layer only.
    mean: Vec<f64>,
}

/// Everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    nbr: Neighborhoods,
    layers: Vec<LayerCache>,
    hl: Vec<f64>,
    emb_u1: Vec<f64>,
    emb_a1: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    met_v1: Vec<f64>,
    met_a1: Vec<f64>,
}

impl ForwardCache {
    /// Attention weights of node `i` for `(layer, head)`, aligned with
    /// `neighborhoods().of(i)`.
    pub fn attention(&self, layer: usize, head: usize, i: usize) -> &[f64] {
        &self.layers[layer].heads[head].alpha[self.nbr.range(i)]
    }

    pub fn neighborhoods(&self) -> &Neighborhoods {
        &self.nbr
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub embeddings: Vec<f64>,
    /// `N × (d·r)`, slab-major like [`MetricFactorTensor`].
    pub factors: Vec<f64>,
    pub cache: ForwardCache,
}

impl ForwardOutput {
    pub fn to_tensors(&self, config: &GatConfig) -> Result<(EmbeddingMatrix<f64>, MetricFactorTensor<f64>)> {
        Ok((
            EmbeddingMatrix::new(config.dim, self.embeddings.clone(), "embeddings")?,
            MetricFactorTensor::new(config.dim, config.rank, config.epsilon, self.factors.clone())?,
        ))
    }
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[inline]
fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = W x + b` for row-major `W` of shape `out.len() × x.len()`.
fn affine(w: &[f64], b: Option<&[f64]>, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(&w[r * cols..(r + 1) * cols], x) + b.map_or(0.0, |b| b[r]);
    }
}

/// `dx += W^T dy`.
fn affine_back_input(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (r, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            for (d, &wv) in dx.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *d += wv * g;
            }
        }
    }
}

/// `dW += dy x^T`.
fn affine_back_weight(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            for (d, &xv) in dw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *d += g * xv;
            }
        }
    }
}

fn check_finite(values: &[f64], width: usize, stage: &str) -> Result<()> {
    if let Some(p) = values.iter().position(|v| !v.is_finite()) {
        return Err(GssError::Numeric(format!(
            "non-finite activation in {stage} at node {}",
            p / width.max(1)
        )));
    }
    Ok(())
}

pub fn forward(params: &GatParams, features: &NodeFeatures, graph: &CorpusGraph) -> Result<ForwardOutput> {
    let c = &params.config;
    if features.dim() != c.input_dim {
        return Err(GssError::mismatch("feature dim vs input layer", c.input_dim, features.dim()));
    }
    if features.len() != graph.node_count() {
        return Err(GssError::mismatch("feature rows vs graph nodes", graph.node_count(), features.len()));
    }
    let n = graph.node_count();
    let d = c.dim;
    let nbr = Neighborhoods::new(graph);
    let mut x: Vec<f64> = features.as_slice().iter().map(|&v| v as f64).collect();
    check_finite(&x, c.input_dim, "input features")?;

    let mut layers = Vec::with_capacity(c.layers);
    for (l, head_slots) in params.layout.layers.iter().enumerate() {
        let in_dim = c.layer_input(l);
        let out_dim = c.layer_output(l);
        let last = l + 1 == c.layers;
        let mut out = vec![0.0; n * out_dim];
        let mut mean = if last { vec![0.0; n * d] } else { Vec::new() };
        let mut heads = Vec::with_capacity(c.heads);
        for (k, hs) in head_slots.iter().enumerate() {
            let w = params.get(hs.w);
            let a = params.get(hs.a);
            let mut z = vec![0.0; n * d];
            for i in 0..n {
                affine(w, None, &x[i * in_dim..(i + 1) * in_dim], &mut z[i * d..(i + 1) * d]);
            }
            let s: Vec<f64> = (0..n).map(|i| dot(&a[..d], &z[i * d..(i + 1) * d])).collect();
            let t: Vec<f64> = (0..n).map(|i| dot(&a[d..], &z[i * d..(i + 1) * d])).collect();
            let mut alpha = vec![0.0; nbr.indices.len()];
            let mut pre = vec![0.0; nbr.indices.len()];
            let mut o = vec![0.0; n * d];
            for i in 0..n {
                let range = nbr.range(i);
                let mut max = f64::NEG_INFINITY;
                for p in range.clone() {
                    pre[p] = s[i] + t[nbr.indices[p]];
                    max = max.max(leaky(pre[p]));
                }
                let mut total = 0.0;
                for p in range.clone() {
                    alpha[p] = (leaky(pre[p]) - max).exp();
                    total += alpha[p];
                }
                for p in range {
                    alpha[p] /= total;
                    let j = nbr.indices[p];
                    for q in 0..d {
                        o[i * d + q] += alpha[p] * z[j * d + q];
                    }
                }
            }
            if last {
                for (m, &v) in mean.iter_mut().zip(&o) {
                    *m += v / c.heads as f64;
                }
            } else {
                for i in 0..n {
                    for q in 0..d {
                        out[i * out_dim + k * d + q] = elu(o[i * d + q]);
                    }
                }
            }
            heads.push(HeadCache { z, alpha, pre, o });
        }
        if last {
            for (dst, &m) in out.iter_mut().zip(&mean) {
                *dst = elu(m);
            }
        }
        check_finite(&out, out_dim, &format!("attention layer {l}"))?;
        layers.push(LayerCache {
            input: std::mem::replace(&mut x, out),
            heads,
            mean,
        });
    }
    let hl = x;

    let lay = &params.layout;
    let (eh, mh, dr) = (c.emb_hidden, c.metric_hidden, d * c.rank);
    let mut emb_u1 = vec![0.0; n * eh];
    let mut emb_a1 = vec![0.0; n * eh];
    let mut xhat = vec![0.0; n * d];
    let mut inv_std = vec![0.0; n];
    let mut embeddings = vec![0.0; n * d];
    let mut met_v1 = vec![0.0; n * mh];
    let mut met_a1 = vec![0.0; n * mh];
    let mut factors = vec![0.0; n * dr];
    let gamma = params.get(lay.ln_gamma);
    let beta = params.get(lay.ln_beta);
    let mut zrow = vec![0.0; d];
    for i in 0..n {
        let h = &hl[i * d..(i + 1) * d];
        let u1 = &mut emb_u1[i * eh..(i + 1) * eh];
        affine(params.get(lay.emb_w1), Some(params.get(lay.emb_b1)), h, u1);
        let a1 = &mut emb_a1[i * eh..(i + 1) * eh];
        for (a, &u) in a1.iter_mut().zip(u1.iter()) {
            *a = elu(u);
        }
        affine(params.get(lay.emb_w2), Some(params.get(lay.emb_b2)), a1, &mut zrow);
        for (zv, &hv) in zrow.iter_mut().zip(h) {
            *zv += hv;
        }
        let mu = zrow.iter().sum::<f64>() / d as f64;
        let var = zrow.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[i] = is;
        for q in 0..d {
            let xh = (zrow[q] - mu) * is;
            xhat[i * d + q] = xh;
            embeddings[i * d + q] = gamma[q] * xh + beta[q];
        }

        let v1 = &mut met_v1[i * mh..(i + 1) * mh];
        affine(params.get(lay.met_w1), Some(params.get(lay.met_b1)), h, v1);
        let b1 = &mut met_a1[i * mh..(i + 1) * mh];
        for (b, &v) in b1.iter_mut().zip(v1.iter()) {
            *b = elu(v);
        }
        affine(
            params.get(lay.met_w2),
            Some(params.get(lay.met_b2)),
            b1,
            &mut factors[i * dr..(i + 1) * dr],
        );
    }
    check_finite(&embeddings, d, "embedding head")?;
    check_finite(&factors, dr, "metric head")?;

    Ok(ForwardOutput {
        embeddings,
        factors,
        cache: ForwardCache {
            nbr,
            layers,
            hl,
            emb_u1,
            emb_a1,
            xhat,
            inv_std,
            met_v1,
            met_a1,
        },
    })
}

/// Gradient with respect to every parameter given upstream gradients on the
/// embeddings (`N × d`) and factors (`N × d·r`).
pub fn backward(params: &GatParams, cache: &ForwardCache, d_emb: &[f64], d_fac: &[f64]) -> Vec<f64> {
    let c = &params.config;
    let lay = &params.layout;
    let d = c.dim;
    let n = cache.inv_std.len();
    let (eh, mh, dr) = (c.emb_hidden, c.metric_hidden, d * c.rank);
    let mut g = vec![0.0; lay.total];
    let mut dhl = vec![0.0; n * d];

    let gamma = params.get(lay.ln_gamma);
    let mut dxhat = vec![0.0; d];
    let mut dz = vec![0.0; d];
    let mut da1 = vec![0.0; eh];
    let mut db1 = vec![0.0; mh];
    for i in 0..n {
        let h = &cache.hl[i * d..(i + 1) * d];
        let dh = &mut dhl[i * d..(i + 1) * d];

        let dout = &d_fac[i * dr..(i + 1) * dr];
        let a1 = &cache.met_a1[i * mh..(i + 1) * mh];
        affine_back_weight(&mut g[lay.met_w2.range()], dout, a1);
        for (gb, &v) in g[lay.met_b2.range()].iter_mut().zip(dout) {
            *gb += v;
        }
        db1.fill(0.0);
        affine_back_input(params.get(lay.met_w2), dout, &mut db1);
        for (b, &v) in db1.iter_mut().zip(&cache.met_v1[i * mh..(i + 1) * mh]) {
            *b *= elu_grad(v);
        }
        affine_back_weight(&mut g[lay.met_w1.range()], &db1, h);
        for (gb, &v) in g[lay.met_b1.range()].iter_mut().zip(&db1) {
            *gb += v;
        }
        affine_back_input(params.get(lay.met_w1), &db1, dh);

        let dy = &d_emb[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        {
            let gg = &mut g[lay.ln_gamma.range()];
            for q in 0..d {
                gg[q] += dy[q] * xh[q];
            }
        }
        for (gb, &v) in g[lay.ln_beta.range()].iter_mut().zip(dy) {
            *gb += v;
        }
        for q in 0..d {
            dxhat[q] = dy[q] * gamma[q];
        }
        let mean_dx = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for q in 0..d {
            dz[q] = cache.inv_std[i] * (dxhat[q] - mean_dx - xh[q] * mean_dxx);
        }
        for q in 0..d {
            dh[q] += dz[q];
        }
        let ea1 = &cache.emb_a1[i * eh..(i + 1) * eh];
        affine_back_weight(&mut g[lay.emb_w2.range()], &dz, ea1);
        for (gb, &v) in g[lay.emb_b2.range()].iter_mut().zip(&dz) {
            *gb += v;
        }
        da1.fill(0.0);
        affine_back_input(params.get(lay.emb_w2), &dz, &mut da1);
        for (a, &u) in da1.iter_mut().zip(&cache.emb_u1[i * eh..(i + 1) * eh]) {
            *a *= elu_grad(u);
        }
        affine_back_weight(&mut g[lay.emb_w1.range()], &da1, h);
        for (gb, &v) in g[lay.emb_b1.range()].iter_mut().zip(&da1) {
            *gb += v;
        }
        affine_back_input(params.get(lay.emb_w1), &da1, dh);
    }

    let nbr = &cache.nbr;
    let mut dout = dhl;
    for l in (0..c.layers).rev() {
        let lc = &cache.layers[l];
        let in_dim = c.layer_input(l);
        let out_dim = c.layer_output(l);
        let last = l + 1 == c.layers;
        let mut dx = vec![0.0; n * in_dim];
        for (k, hs) in lay.layers[l].iter().enumerate() {
            let hc = &lc.heads[k];
            let mut d_o = vec![0.0; n * d];
            for i in 0..n {
                for q in 0..d {
                    d_o[i * d + q] = if last {
                        dout[i * d + q] * elu_grad(lc.mean[i * d + q]) / c.heads as f64
                    } else {
                        dout[i * out_dim + k * d + q] * elu_grad(hc.o[i * d + q])
                    };
                }
            }
            let a = params.get(hs.a);
            let mut dzh = vec![0.0; n * d];
            let mut ds = vec![0.0; n];
            let mut dt = vec![0.0; n];
            for i in 0..n {
                let doi = &d_o[i * d..(i + 1) * d];
                let range = nbr.range(i);
                let mut weighted = 0.0;
                let mut dalpha = Vec::with_capacity(range.len());
                for p in range.clone() {
                    let j = nbr.indices[p];
                    for q in 0..d {
                        dzh[j * d + q] += hc.alpha[p] * doi[q];
                    }
                    let da = dot(doi, &hc.z[j * d..(j + 1) * d]);
                    weighted += hc.alpha[p] * da;
                    dalpha.push(da);
                }
                for (p, da) in range.zip(dalpha) {
                    let de = hc.alpha[p] * (da - weighted);
                    let dpre = de * leaky_grad(hc.pre[p]);
                    ds[i] += dpre;
                    dt[nbr.indices[p]] += dpre;
                }
            }
            {
                let ga = &mut g[hs.a.range()];
                for i in 0..n {
                    let zi = &hc.z[i * d..(i + 1) * d];
                    for q in 0..d {
                        ga[q] += ds[i] * zi[q];
                        ga[d + q] += dt[i] * zi[q];
                        dzh[i * d + q] += ds[i] * a[q] + dt[i] * a[d + q];
                    }
                }
            }
            let w = params.get(hs.w);
            for i in 0..n {
                let dzi = &dzh[i * d..(i + 1) * d];
                affine_back_weight(&mut g[hs.w.range()], dzi, &lc.input[i * in_dim..(i + 1) * in_dim]);
                if l > 0 {
                    affine_back_input(w, dzi, &mut dx[i * in_dim..(i + 1) * in_dim]);
                }
            }
        }
        dout = dx;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DenseRows;

    fn random_setup(n: usize, p: f64, seed: u64) -> (CorpusGraph, NodeFeatures) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.gen_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        let feats: Vec<f32> = (0..n * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (
            CorpusGraph::from_edges(n, &edges).unwrap(),
            DenseRows::new(5, feats, "features").unwrap(),
        )
    }

    fn small_config() -> GatConfig {
        GatConfig {
            input_dim: 5,
            dim: 4,
            rank: 2,
            layers: 2,
            heads: 3,
            emb_hidden: 6,
            metric_hidden: 5,
            epsilon: 0.01,
        }
    }

    #[test]
    fn layout_is_contiguous() {
        let p = GatParams::init(small_config(), 0).unwrap();
        let groups = p.layout.groups();
        let mut next = 0;
        for (_, r) in &groups {
            assert_eq!(r.start, next);
            next = r.end;
        }
        assert_eq!(next, p.len());
        // layer 1 consumes the concatenated heads of layer 0
        assert_eq!(p.layout.layers[1][0].w.cols, 12);
        assert_eq!(p.layout.met_w2.rows, 8);
    }

    #[test]
    fn singleton_node_attends_to_itself() {
        let graph = CorpusGraph::from_edges(1, &[]).unwrap();
        let feats = DenseRows::new(5, vec![0.3f32, -0.2, 0.5, 0.1, 0.0], "f").unwrap();
        let p = GatParams::init(small_config(), 1).unwrap();
        let out = forward(&p, &feats, &graph).unwrap();
        for l in 0..2 {
            for k in 0..3 {
                assert_eq!(out.cache.attention(l, k, 0), &[1.0]);
            }
        }
    }

    #[test]
    fn isolated_identical_nodes_get_identical_rows() {
        let graph = CorpusGraph::from_edges(2, &[]).unwrap();
        let row = [0.3f32, -0.2, 0.5, 0.1, 0.9];
        let feats = DenseRows::new(5, [row, row].concat(), "f").unwrap();
        let p = GatParams::init(small_config(), 2).unwrap();
        let out = forward(&p, &feats, &graph).unwrap();
        assert_eq!(out.embeddings[..4], out.embeddings[4..]);
        assert_eq!(out.factors[..8], out.factors[8..]);
    }

    #[test]
    fn attention_rows_match_softmax_oracle() {
        let (graph, feats) = random_setup(10, 0.2, 3);
        let p = GatParams::init(small_config(), 3).unwrap();
        let out = forward(&p, &feats, &graph).unwrap();
        let c = &p.config;
        // independent recomputation of the first layer's attention
        let x: Vec<Vec<f64>> = (0..10).map(|i| feats.row_f64(i)).collect();
        for (k, hs) in p.layout.layers[0].iter().enumerate() {
            let w = &p.values[hs.w.range()];
            let a = &p.values[hs.a.range()];
            let z: Vec<Vec<f64>> = x
                .iter()
                .map(|xi| (0..c.dim).map(|r| (0..5).map(|q| w[r * 5 + q] * xi[q]).sum()).collect())
                .collect();
            for i in 0..10 {
                let nb = out.cache.neighborhoods().of(i).to_vec();
                assert!(nb.contains(&i));
                let scores: Vec<f64> = nb
                    .iter()
                    .map(|&j| {
                        let e: f64 = (0..c.dim).map(|q| a[q] * z[i][q] + a[c.dim + q] * z[j][q]).sum();
                        if e > 0.0 {
                            e
                        } else {
                            0.2 * e
                        }
                    })
                    .collect();
                let denom: f64 = scores.iter().map(|s| s.exp()).sum();
                for (p, s) in scores.iter().enumerate() {
                    assert!((out.cache.attention(0, k, i)[p] - s.exp() / denom).abs() < 1e-12);
                }
            }
        }
        for l in 0..2 {
            for k in 0..3 {
                for i in 0..10 {
                    let sum: f64 = out.cache.attention(l, k, i).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn relabeling_permutes_outputs() {
        let (graph, feats) = random_setup(8, 0.3, 4);
        let perm = [3usize, 7, 0, 5, 1, 6, 2, 4];
        let edges: Vec<(usize, usize)> = graph.out_edges().edges().map(|(u, v)| (perm[u], perm[v])).collect();
        let mut pf = vec![0.0f32; 8 * 5];
        for i in 0..8 {
            pf[perm[i] * 5..perm[i] * 5 + 5].copy_from_slice(feats.row(i));
        }
        let pgraph = CorpusGraph::from_edges(8, &edges).unwrap();
        let pfeats = DenseRows::new(5, pf, "f").unwrap();
        let p = GatParams::init(small_config(), 5).unwrap();
        let a = forward(&p, &feats, &graph).unwrap();
        let b = forward(&p, &pfeats, &pgraph).unwrap();
        for i in 0..8 {
            for q in 0..4 {
                assert!((a.embeddings[i * 4 + q] - b.embeddings[perm[i] * 4 + q]).abs() < 1e-12);
            }
            for q in 0..8 {
                assert!((a.factors[i * 8 + q] - b.factors[perm[i] * 8 + q]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_of_a_linear_probe() {
        let (graph, feats) = random_setup(7, 0.3, 6);
        let p = GatParams::init(small_config(), 6).unwrap();
        let out = forward(&p, &feats, &graph).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let we: Vec<f64> = (0..out.embeddings.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wf: Vec<f64> = (0..out.factors.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let probe = |v: &[f64]| {
            let o = forward(&p.with_values(v.to_vec()), &feats, &graph).unwrap();
            dot(&o.embeddings, &we) + dot(&o.factors, &wf)
        };
        let grad = backward(&p, &out.cache, &we, &wf);
        let h = 1e-6;
        for (_, range) in p.layout.groups() {
            for idx in [range.start, range.end - 1] {
                let mut v = p.values.clone();
                v[idx] += h;
                let up = probe(&v);
                v[idx] -= 2.0 * h;
                let down = probe(&v);
                let fd = (up - down) / (2.0 * h);
                let err = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-6);
                assert!(err < 1e-5 || (fd - grad[idx]).abs() < 1e-9, "param {idx}: fd {fd} analytic {}", grad[idx]);
            }
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let (graph, _) = random_setup(4, 0.3, 8);
        let feats = DenseRows::new(3, vec![0.0f32; 12], "f").unwrap();
        let p = GatParams::init(small_config(), 0).unwrap();
        assert!(forward(&p, &feats, &graph).is_err());
    }
}
