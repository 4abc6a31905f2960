//! Masked neural conditional densities.
//!
//! Each node `j` gets a small MLP per regime-parameter set that maps the
//! masked sample `mask_col ⊙ x` to a Gaussian `(mean, log-variance)` head;
//! the node's log-density is evaluated at `x_j`. Gradients are exact
//! reverse-mode: [`forward`] records a [`GradientTape`], [`backward`] replays
//! it and returns parameter gradients plus the gradient with respect to the
//! masked input (which carries mask gradients).

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// Log-variance outputs are clamped to this symmetric range before use.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Network architecture shared by every per-node density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
}

fn default_hidden() -> Vec<usize> {
    vec![16]
}

fn default_slope() -> f64 {
    0.1
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { hidden: default_hidden(), leaky_slope: default_slope() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `in x out` weight matrix (row-vector convention).
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// One per-node density network; the final layer outputs `(mean, log-variance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

fn layer_dims(input_dim: usize, arch: &ArchConfig) -> Vec<(usize, usize)> {
    let mut dims = Vec::new();
    let mut prev = input_dim;
    for &h in &arch.hidden {
        dims.push((prev, h));
        prev = h;
    }
    dims.push((prev, 2));
    dims
}

impl Mlp {
    /// Uniform init in `±1/sqrt(fan_in)`.
    pub fn init(input_dim: usize, arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        let layers = layer_dims(input_dim, arch)
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (fan_in as f64).sqrt().recip();
                Layer {
                    w: Array2::from_shape_fn((fan_in, fan_out), |_| {
                        rng.random_range(-bound..=bound)
                    }),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    /// All-zero network (outputs `(0, 0)` for any input); also used as a
    /// gradient / optimizer-state container.
    pub fn zeros(input_dim: usize, arch: &ArchConfig) -> Self {
        let layers = layer_dims(input_dim, arch)
            .into_iter()
            .map(|(fan_in, fan_out)| Layer {
                w: Array2::zeros((fan_in, fan_out)),
                b: Array1::zeros(fan_out),
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { w: Array2::zeros(l.w.dim()), b: Array1::zeros(l.b.len()) })
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn get_param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.w.len() {
                return *l.w.iter().nth(idx).unwrap();
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, v: f64) {
        for l in &mut self.layers {
            if idx < l.w.len() {
                *l.w.iter_mut().nth(idx).unwrap() = v;
                return;
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                l.b[idx] = v;
                return;
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }
}

/// Visit `(param, grad, state)` triples in a fixed order.
pub fn zip_params(p: &mut Mlp, g: &Mlp, s: &mut Mlp, mut f: impl FnMut(&mut f64, f64, &mut f64)) {
    for ((pl, gl), sl) in p.layers.iter_mut().zip(&g.layers).zip(s.layers.iter_mut()) {
        for ((pv, &gv), sv) in pl.w.iter_mut().zip(gl.w.iter()).zip(sl.w.iter_mut()) {
            f(pv, gv, sv);
        }
        for ((pv, &gv), sv) in pl.b.iter_mut().zip(gl.b.iter()).zip(sl.b.iter_mut()) {
            f(pv, gv, sv);
        }
    }
}

/// Accumulate `acc += g`.
pub fn add_assign(acc: &mut Mlp, g: &Mlp) {
    for (al, gl) in acc.layers.iter_mut().zip(&g.layers) {
        al.w += &gl.w;
        al.b += &gl.b;
    }
}

/// Per-node, per-regime density parameters.
///
/// `obs[j]` is the observational net for node `j` (used everywhere the node
/// is not intervened). `interv[(q, j)]` holds the regime-`q` net for node `j`
/// and exists only for pairs that can actually be used, which keeps memory
/// bounded: lagged nodes are never interventional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    pub input_dim: usize,
    pub arch: ArchConfig,
    pub obs: Vec<Mlp>,
    #[serde(with = "interv_map")]
    pub interv: BTreeMap<(usize, usize), Mlp>,
}

/// Checkpoint encoding of the interventional nets: a list of
/// `{"regime", "node", "net"}` entries (JSON maps cannot key on pairs).
mod interv_map {
    use super::Mlp;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        regime: usize,
        node: usize,
        net: Mlp,
    }

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(usize, usize), Mlp>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = map
            .iter()
            .map(|(&(regime, node), net)| Entry { regime, node, net: net.clone() })
            .collect();
        entries.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<(usize, usize), Mlp>, D::Error> {
        let entries = Vec::<Entry>::deserialize(de)?;
        Ok(entries.into_iter().map(|e| ((e.regime, e.node), e.net)).collect())
    }
}

impl DensityParams {
    pub fn init(input_dim: usize, arch: ArchConfig, rng: &mut impl Rng) -> Self {
        let obs = (0..input_dim).map(|_| Mlp::init(input_dim, &arch, rng)).collect();
        DensityParams { input_dim, arch, obs, interv: BTreeMap::new() }
    }

    /// Allocate the regime-`q` net of node `j` on first use.
    pub fn ensure_interv(&mut self, q: usize, j: usize, rng: &mut impl Rng) {
        assert!(q >= 1, "regime 0 is observational");
        if !self.interv.contains_key(&(q, j)) {
            let net = Mlp::init(self.input_dim, &self.arch, rng);
            self.interv.insert((q, j), net);
        }
    }

    pub fn interv_net(&self, q: usize, j: usize) -> Result<&Mlp> {
        self.interv
            .get(&(q, j))
            .ok_or_else(|| Error::Config(format!("no interventional net for regime {q}, node {j}")))
    }

    pub fn zeros_like(&self) -> Self {
        DensityParams {
            input_dim: self.input_dim,
            arch: self.arch.clone(),
            obs: self.obs.iter().map(Mlp::zeros_like).collect(),
            interv: self.interv.iter().map(|(&k, m)| (k, m.zeros_like())).collect(),
        }
    }
}

/// Forward records for one node over a batch; consumed by [`backward`].
pub struct GradientTape {
    input: Array2<f64>,
    /// pre-activations per hidden layer
    zs: Vec<Array2<f64>>,
    /// activations per hidden layer
    hs: Vec<Array2<f64>>,
    mu: Array1<f64>,
    logv_raw: Array1<f64>,
    targets: Array1<f64>,
    /// per-sample log-density
    pub loglik: Array1<f64>,
}

/// Batched forward pass: `input` is the already-masked `B x n` matrix,
/// `targets` the node's own values per sample.
pub fn forward(mlp: &Mlp, slope: f64, input: Array2<f64>, targets: Array1<f64>) -> GradientTape {
    let b = input.nrows();
    debug_assert_eq!(b, targets.len());
    let n_hidden = mlp.layers.len() - 1;
    let mut zs = Vec::with_capacity(n_hidden);
    let mut hs = Vec::with_capacity(n_hidden);
    let mut cur = input.clone();
    for layer in &mlp.layers[..n_hidden] {
        let z = cur.dot(&layer.w) + &layer.b;
        let h = z.mapv(|v| if v > 0.0 { v } else { slope * v });
        zs.push(z);
        cur = h.clone();
        hs.push(h);
    }
    let out_layer = &mlp.layers[n_hidden];
    let out = cur.dot(&out_layer.w) + &out_layer.b;
    let mu = out.column(0).to_owned();
    let logv_raw = out.column(1).to_owned();
    let mut loglik = Array1::zeros(b);
    for i in 0..b {
        let logv = logv_raw[i].clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP);
        let e = targets[i] - mu[i];
        loglik[i] = -0.5 * (e * e * (-logv).exp() + logv + TAU.ln());
    }
    GradientTape { input, zs, hs, mu, logv_raw, targets, loglik }
}

/// Gradients produced by [`backward`].
pub struct NodeGrads {
    pub mlp: Mlp,
    /// `B x n` gradient w.r.t. the masked input rows.
    pub input: Array2<f64>,
}

/// Reverse pass for one node. `weight` is `dLoss/d(loglik_b)`, shared by all
/// samples of the batch (losses here are batch means times a regime factor).
pub fn backward(mlp: &Mlp, slope: f64, tape: &GradientTape, weight: f64) -> NodeGrads {
    let b = tape.input.nrows();
    let n_hidden = mlp.layers.len() - 1;
    let mut grads = mlp.zeros_like();

    // head: d loglik / d mu, d loglik / d logv_raw
    let mut delta = Array2::zeros((b, 2));
    for i in 0..b {
        let logv = tape.logv_raw[i].clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP);
        let inv = (-logv).exp();
        let e = tape.targets[i] - tape.mu[i];
        delta[[i, 0]] = weight * e * inv;
        let within = tape.logv_raw[i].abs() < LOGVAR_CLAMP;
        delta[[i, 1]] = if within { weight * 0.5 * (e * e * inv - 1.0) } else { 0.0 };
    }

    // output layer
    let below = if n_hidden == 0 { &tape.input } else { &tape.hs[n_hidden - 1] };
    grads.layers[n_hidden].w = below.t().dot(&delta);
    grads.layers[n_hidden].b = delta.sum_axis(Axis(0));
    let mut delta_below = delta.dot(&mlp.layers[n_hidden].w.t());

    // hidden layers
    for l in (0..n_hidden).rev() {
        let dz = &delta_below * &tape.zs[l].mapv(|v| if v > 0.0 { 1.0 } else { slope });
        let below = if l == 0 { &tape.input } else { &tape.hs[l - 1] };
        grads.layers[l].w = below.t().dot(&dz);
        grads.layers[l].b = dz.sum_axis(Axis(0));
        delta_below = dz.dot(&mlp.layers[l].w.t());
    }

    NodeGrads { mlp: grads, input: delta_below }
}

/// Log-density of node `j` under one network and one sample.
///
/// The mask column is applied to `x` before the network sees it, so
/// coordinates with a zero mask can never influence the result.
pub fn node_logdensity(
    x: ArrayView1<f64>,
    j: usize,
    mask_col: ArrayView1<f64>,
    mlp: &Mlp,
    slope: f64,
) -> Result<f64> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input sample".into()));
    }
    if j >= x.len() {
        return Err(Error::Config(format!("node {j} out of range 0..{}", x.len())));
    }
    let masked = Array2::from_shape_fn((1, x.len()), |(_, i)| mask_col[i] * x[i]);
    let tape = forward(mlp, slope, masked, Array1::from_elem(1, x[j]));
    Ok(tape.loglik[0])
}

/// Joint log-likelihood of one sample under regime `q` (0-based; regime 0 is
/// observational).
///
/// Per node, the observational and regime-`q` log-densities are blended
/// linearly by `r_row[j]` (hard samples make this an exact selection). With
/// `perfect_mode`, an intervened node's regime net sees an all-zero mask.
pub fn joint_loglikelihood(
    x: ArrayView1<f64>,
    mask: &Array2<f64>,
    r_row: ArrayView1<f64>,
    params: &DensityParams,
    q: usize,
    perfect_mode: bool,
) -> Result<f64> {
    let n = params.input_dim;
    if x.len() != n || mask.dim() != (n, n) || r_row.len() != n {
        return Err(Error::Config("joint_loglikelihood shape mismatch".into()));
    }
    let slope = params.arch.leaky_slope;
    let zero_col = Array1::zeros(n);
    let mut total = 0.0;
    for j in 0..n {
        let r = if q == 0 { 0.0 } else { r_row[j] };
        let mut ll = 0.0;
        if r != 1.0 {
            ll += (1.0 - r) * node_logdensity(x, j, mask.column(j), &params.obs[j], slope)?;
        }
        if r != 0.0 {
            let net = params.interv_net(q, j)?;
            let col = if perfect_mode { zero_col.view() } else { mask.column(j) };
            ll += r * node_logdensity(x, j, col, net, slope)?;
        }
        total += ll;
    }
    Ok(total)
}
