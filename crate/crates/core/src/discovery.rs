//! Joint learning of the causal graph and the interventional family.
//!
//! The relaxed score treats the binary adjacency mask `M` and the
//! interventional-family mask `R` as Bernoulli variables with logits `Λ`
//! (edge logits) and `Γ` (target logits). Hard samples drive the forward
//! likelihood; gradients flow through temperature-`τ` soft relaxations
//! (straight-through). The acyclicity constraint `trace(exp(σ(Λ))) - n = 0`
//! is enforced by an augmented-Lagrangian outer loop whose subproblems are
//! solved with RMSprop.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{self, ArchConfig, DensityParams};
use crate::error::{Error, Result};
use crate::graph::{self, GraphJson, TemporalGraph};
use crate::regime::RegimeDataset;

/// Active logits are clamped to this symmetric range after every update.
pub const LOGIT_CLAMP: f64 = 10.0;

const RMSPROP_DECAY: f64 = 0.9;
const RMSPROP_EPS: f64 = 1e-8;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Whether the interventional family is known in advance or learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Known,
    Unknown,
}

/// Optimization hyperparameters. External configs mirror the serde names.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Edge sparsity weight λ.
    #[serde(rename = "lambda")]
    pub edge_sparsity: f64,
    /// Target sparsity weight λ_R.
    #[serde(rename = "lambda_r")]
    pub target_sparsity: f64,
    /// Gumbel temperature τ.
    pub tau: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub subproblem_steps: usize,
    /// Max outer iterations U.
    pub max_outer: usize,
    pub mu_init: f64,
    pub gamma_init: f64,
    pub mu_growth: f64,
    /// The penalty grows when h exceeds this fraction of the previous h.
    pub progress_factor: f64,
    pub constraint_tol: f64,
    pub mode: TargetMode,
    /// Intervened nodes use an all-zero input mask in their regime nets.
    pub perfect_interventions: bool,
    /// Keep the fixed true family inside the likelihood while Γ is only
    /// regularized (the literal form of the relaxed score); needs targets.
    pub literal_eq6: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            edge_sparsity: 0.1,
            target_sparsity: 0.05,
            tau: 1.0,
            learning_rate: 1e-2,
            batch_size: 64,
            subproblem_steps: 1000,
            max_outer: 20,
            mu_init: 1e-3,
            gamma_init: 0.0,
            mu_growth: 10.0,
            progress_factor: 0.9,
            constraint_tol: 1e-8,
            mode: TargetMode::Unknown,
            perfect_interventions: false,
            literal_eq6: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.edge_sparsity < 0.0 || self.target_sparsity < 0.0 {
            return Err(Error::Config("sparsity weights must be nonnegative".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config("tau must be positive".into()));
        }
        if self.mu_growth <= 1.0 {
            return Err(Error::Config("mu_growth must exceed 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Learnable state: edge logits Λ, target logits Γ, and density parameters φ.
///
/// Structural masks are positional rules, not data: an edge logit is active
/// iff its column is contemporaneous and off the intra-slice diagonal; a
/// target logit is active iff its regime is interventional and its column
/// contemporaneous. Inactive positions stay at zero probability everywhere.
#[derive(Debug, Clone)]
pub struct ScoreParams {
    pub d: usize,
    pub p: usize,
    pub n_regimes: usize,
    pub edge_logits: Array2<f64>,
    pub target_logits: Array2<f64>,
    pub phi: DensityParams,
}

impl ScoreParams {
    pub fn n(&self) -> usize {
        (self.p + 1) * self.d
    }

    pub fn edge_active(&self, i: usize, j: usize) -> bool {
        j < self.d && i != j
    }

    pub fn target_active(&self, q: usize, j: usize) -> bool {
        q >= 1 && j < self.d
    }

    /// σ(Λ) over active entries, zero elsewhere.
    pub fn soft_adjacency(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.edge_logits.dim(), |(i, j)| {
            if self.edge_active(i, j) {
                sigmoid(self.edge_logits[[i, j]])
            } else {
                0.0
            }
        })
    }

    /// σ(Γ) over active entries, zero elsewhere.
    pub fn soft_targets(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.target_logits.dim(), |(q, j)| {
            if self.target_active(q, j) {
                sigmoid(self.target_logits[[q, j]])
            } else {
                0.0
            }
        })
    }
}

/// One straight-through sample of both masks.
#[derive(Debug, Clone)]
pub struct MaskSample {
    pub m_hard: Array2<f64>,
    pub m_soft: Array2<f64>,
    pub r_hard: Array2<f64>,
    pub r_soft: Array2<f64>,
}

/// Soft/hard relaxed-Bernoulli pair for one logit and one logistic-noise
/// draw: `soft = σ((logit + noise)/τ)`, `hard = [soft > 0.5]`.
pub fn relaxed_bernoulli(logit: f64, noise: f64, tau: f64) -> (f64, f64) {
    let soft = sigmoid((logit + noise) / tau);
    let hard = if soft > 0.5 { 1.0 } else { 0.0 };
    (soft, hard)
}

/// Logistic noise `ln u - ln(1-u)`.
fn logistic_noise(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    u.ln() - (1.0 - u).ln()
}

/// Sample masks with externally supplied noise matrices ([`sample_masks`]
/// draws the noise internally; gradient checks freeze it).
pub fn sample_masks_with_noise(
    score: &ScoreParams,
    tau: f64,
    noise_m: &Array2<f64>,
    noise_r: &Array2<f64>,
) -> MaskSample {
    let n = score.n();
    let q_count = score.n_regimes;
    let mut m_hard = Array2::zeros((n, n));
    let mut m_soft = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if score.edge_active(i, j) {
                let (s, h) = relaxed_bernoulli(score.edge_logits[[i, j]], noise_m[[i, j]], tau);
                m_soft[[i, j]] = s;
                m_hard[[i, j]] = h;
            }
        }
    }
    let mut r_hard = Array2::zeros((q_count, n));
    let mut r_soft = Array2::zeros((q_count, n));
    for q in 0..q_count {
        for j in 0..n {
            if score.target_active(q, j) {
                let (s, h) = relaxed_bernoulli(score.target_logits[[q, j]], noise_r[[q, j]], tau);
                r_soft[[q, j]] = s;
                r_hard[[q, j]] = h;
            }
        }
    }
    MaskSample { m_hard, m_soft, r_hard, r_soft }
}

pub fn sample_masks(score: &ScoreParams, tau: f64, rng: &mut impl Rng) -> MaskSample {
    let n = score.n();
    let noise_m = Array2::from_shape_fn((n, n), |_| logistic_noise(rng));
    let noise_r = Array2::from_shape_fn((score.n_regimes, n), |_| logistic_noise(rng));
    sample_masks_with_noise(score, tau, &noise_m, &noise_r)
}

/// Output of [`relaxed_loss`]: value plus gradients along the likelihood
/// path. Mask and R gradients are in mask-value space; [`chain_to_logits`]
/// carries them to logit space.
pub struct LossOutput {
    pub loss: f64,
    pub grad_phi: DensityParams,
    pub grad_mask: Array2<f64>,
    pub grad_rvals: Array2<f64>,
}

/// Negative mean log-likelihood summed over regimes plus expected sparsity
/// penalties on `σ(Λ)` and (in unknown mode) `σ(Γ)`.
///
/// `mask_vals`/`r_vals` may be hard samples (training) or soft relaxations
/// (gradient checks); the computation is identical. In unknown-targets mode
/// both parameter branches of every active `(q, j)` pair are evaluated so
/// the R gradient `-mean(loglik_int - loglik_obs)` exists even when the hard
/// sample picked one branch.
pub fn relaxed_loss(
    batches: &[Array2<f64>],
    mask_vals: &Array2<f64>,
    r_vals: &Array2<f64>,
    score: &ScoreParams,
    hp: &HyperParams,
    compute_grads: bool,
) -> Result<LossOutput> {
    let n = score.n();
    let n_regimes = score.n_regimes;
    if batches.len() != n_regimes {
        return Err(Error::Config(format!(
            "{} regime batches for {n_regimes} regimes",
            batches.len()
        )));
    }
    for (q, b) in batches.iter().enumerate() {
        if b.nrows() == 0 || b.ncols() != n {
            return Err(Error::Config(format!(
                "regime {q} batch must be non-empty with {n} columns"
            )));
        }
    }
    let slope = score.phi.arch.leaky_slope;
    let mut loss = 0.0;
    let mut grad_phi = score.phi.zeros_like();
    let mut grad_mask = Array2::zeros((n, n));
    let mut grad_rvals = Array2::zeros((n_regimes, n));
    let zero_col = Array1::zeros(n);

    for (q, x) in batches.iter().enumerate() {
        let b = x.nrows();
        let w = -1.0 / b as f64;
        for j in 0..n {
            let r = if q == 0 { 0.0 } else { r_vals[[q, j]] };
            let need_r_grad = compute_grads
                && hp.mode == TargetMode::Unknown
                && !hp.literal_eq6
                && score.target_active(q, j);
            let targets = x.column(j).to_owned();

            let mut obs_sum = 0.0;
            if r != 1.0 || need_r_grad {
                let masked = masked_input(x, mask_vals, j);
                let tape = density::forward(&score.phi.obs[j], slope, masked, targets.clone());
                obs_sum = tape.loglik.sum();
                if compute_grads && r != 1.0 {
                    let g = density::backward(&score.phi.obs[j], slope, &tape, w * (1.0 - r));
                    density::add_assign(&mut grad_phi.obs[j], &g.mlp);
                    accumulate_mask_grad(&mut grad_mask, &g.input, x, j);
                }
            }

            let mut int_sum = 0.0;
            if score.target_active(q, j) && (r != 0.0 || need_r_grad) {
                let net = score.phi.interv_net(q, j)?;
                let masked = if hp.perfect_interventions {
                    column_scaled(x, &zero_col)
                } else {
                    masked_input(x, mask_vals, j)
                };
                let tape = density::forward(net, slope, masked, targets);
                int_sum = tape.loglik.sum();
                if compute_grads && r != 0.0 {
                    let g = density::backward(net, slope, &tape, w * r);
                    density::add_assign(grad_phi.interv.get_mut(&(q, j)).unwrap(), &g.mlp);
                    if !hp.perfect_interventions {
                        accumulate_mask_grad(&mut grad_mask, &g.input, x, j);
                    }
                }
            }

            loss += w * ((1.0 - r) * obs_sum + r * int_sum);
            if need_r_grad {
                grad_rvals[[q, j]] = w * (int_sum - obs_sum);
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("likelihood diverged: loss = {loss}")));
    }

    // expected sparsity penalties use σ(logits), not the drawn samples
    for i in 0..n {
        for j in 0..n {
            if score.edge_active(i, j) {
                loss += hp.edge_sparsity * sigmoid(score.edge_logits[[i, j]]);
            }
        }
    }
    if hp.mode == TargetMode::Unknown {
        for q in 0..n_regimes {
            for j in 0..n {
                if score.target_active(q, j) {
                    loss += hp.target_sparsity * sigmoid(score.target_logits[[q, j]]);
                }
            }
        }
    }
    Ok(LossOutput { loss, grad_phi, grad_mask, grad_rvals })
}

/// `x` with every column `i` scaled by `mask_vals[i, j]` (node `j`'s parents).
fn masked_input(x: &Array2<f64>, mask_vals: &Array2<f64>, j: usize) -> Array2<f64> {
    let mut out = x.clone();
    for (i, mut col) in out.columns_mut().into_iter().enumerate() {
        let m = mask_vals[[i, j]];
        if m == 0.0 {
            col.fill(0.0);
        } else if m != 1.0 {
            col *= m;
        }
    }
    out
}

fn column_scaled(x: &Array2<f64>, col_mask: &Array1<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for (i, mut col) in out.columns_mut().into_iter().enumerate() {
        let m = col_mask[i];
        if m == 0.0 {
            col.fill(0.0);
        } else if m != 1.0 {
            col *= m;
        }
    }
    out
}

/// Fold an input gradient back onto mask column `j`:
/// `grad_mask[i, j] += Σ_b d_input[b, i] * x[b, i]`.
fn accumulate_mask_grad(
    grad_mask: &mut Array2<f64>,
    d_input: &Array2<f64>,
    x: &Array2<f64>,
    j: usize,
) {
    for i in 0..x.ncols() {
        grad_mask[[i, j]] += d_input.column(i).dot(&x.column(i));
    }
}

/// Chain gradients from mask-value space to logit space through the soft
/// relaxation: `∂soft/∂logit = soft(1-soft)/τ`.
pub fn chain_to_logits(grad_vals: &Array2<f64>, soft: &Array2<f64>, tau: f64) -> Array2<f64> {
    let mut out = grad_vals.clone();
    out.zip_mut_with(soft, |g, &s| *g *= s * (1.0 - s) / tau);
    out
}

/// Thresholded interventional family: regime 0 is always empty, regime `q`
/// collects the contemporaneous nodes with `σ(Γ_qj) > 0.5`.
pub fn extract_family(target_logits: &Array2<f64>, d: usize) -> Vec<Vec<usize>> {
    let mut family = Vec::with_capacity(target_logits.nrows());
    for q in 0..target_logits.nrows() {
        if q == 0 {
            family.push(Vec::new());
            continue;
        }
        let set: Vec<usize> = (0..d).filter(|&j| sigmoid(target_logits[[q, j]]) > 0.5).collect();
        family.push(set);
    }
    family
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub score: f64,
    pub h: f64,
    pub gamma: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryResult {
    /// Final soft adjacency σ(Λ).
    pub soft_adjacency: Array2<f64>,
    pub graph: TemporalGraph,
    /// Final soft family σ(Γ) (the fixed 0/1 family in known-targets mode).
    pub target_probs: Array2<f64>,
    pub family: Vec<Vec<usize>>,
    pub trace: Vec<TraceEntry>,
}

/// Serialized `result.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultJson {
    pub f_soft: Vec<Vec<f64>>,
    pub graph: GraphJson,
    pub target_probs: Vec<Vec<f64>>,
    pub family: Vec<Vec<usize>>,
    pub trace: Vec<TraceEntry>,
}

fn rows_vec(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl DiscoveryResult {
    pub fn to_json(&self) -> ResultJson {
        ResultJson {
            f_soft: rows_vec(&self.soft_adjacency),
            graph: self.graph.to_json(),
            target_probs: rows_vec(&self.target_probs),
            family: self.family.clone(),
            trace: self.trace.clone(),
        }
    }
}

struct RmsState {
    edge: Array2<f64>,
    target: Array2<f64>,
    phi: DensityParams,
}

fn rmsprop_scalar(p: &mut f64, g: f64, v: &mut f64, lr: f64) {
    *v = RMSPROP_DECAY * *v + (1.0 - RMSPROP_DECAY) * g * g;
    *p -= lr * g / (v.sqrt() + RMSPROP_EPS);
}

fn build_fixed_family(
    family: &[Vec<usize>],
    n_regimes: usize,
    d: usize,
    n: usize,
) -> Result<Array2<f64>> {
    if family.len() != n_regimes {
        return Err(Error::Config(format!(
            "family lists {} regimes, dataset has {n_regimes}",
            family.len()
        )));
    }
    if !family[0].is_empty() {
        return Err(Error::Config(
            "regime 0 is observational; its target set must be empty".into(),
        ));
    }
    let mut r = Array2::zeros((n_regimes, n));
    for (q, set) in family.iter().enumerate() {
        for &j in set {
            if j >= d {
                return Err(Error::Config(format!("target {j} out of range 0..{d}")));
            }
            r[[q, j]] = 1.0;
        }
    }
    Ok(r)
}

/// Run the full discovery loop on a dataset.
///
/// `edge_logits_init` seeds Λ (active positions only; pass the output of the
/// meta-initialization to bias the search). `true_family` supplies the fixed
/// interventional family for known-targets mode. Deterministic given `seed`.
pub fn fit(
    ds: &RegimeDataset,
    hp: &HyperParams,
    arch: &ArchConfig,
    edge_logits_init: Option<&Array2<f64>>,
    true_family: Option<&[Vec<usize>]>,
    seed: u64,
) -> Result<DiscoveryResult> {
    hp.validate()?;
    let d = ds.d();
    let p = ds.p();
    let n = ds.width();
    let n_regimes = ds.n_regimes();
    let needs_family = hp.mode == TargetMode::Known || hp.literal_eq6;
    if needs_family && true_family.is_none() {
        return Err(Error::Config(
            "known-targets mode (and literal_eq6) requires the true interventional family".into(),
        ));
    }
    // the likelihood uses the fixed family whenever one is required
    let use_fixed_r = needs_family;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = DensityParams::init(n, arch.clone(), &mut rng);
    let fixed_r = match true_family {
        Some(family) => Some(build_fixed_family(family, n_regimes, d, n)?),
        None => None,
    };
    // interventional nets for every pair that can be used
    for q in 1..n_regimes {
        for j in 0..d {
            let used = if hp.mode == TargetMode::Known {
                fixed_r.as_ref().unwrap()[[q, j]] == 1.0
            } else {
                true
            };
            if used {
                phi.ensure_interv(q, j, &mut rng);
            }
        }
    }

    let mut score = ScoreParams {
        d,
        p,
        n_regimes,
        edge_logits: Array2::zeros((n, n)),
        target_logits: Array2::zeros((n_regimes, n)),
        phi,
    };
    if let Some(init) = edge_logits_init {
        if init.dim() != (n, n) {
            return Err(Error::Config(format!(
                "edge logit init must be {n}x{n}, got {}x{}",
                init.nrows(),
                init.ncols()
            )));
        }
        for ((i, j), &v) in init.indexed_iter() {
            if score.edge_active(i, j) {
                score.edge_logits[[i, j]] = v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            } else if v != 0.0 {
                return Err(Error::Config(format!(
                    "edge logit init has value {v} at structurally masked position ({i},{j})"
                )));
            }
        }
    }

    let mut state = RmsState {
        edge: Array2::zeros((n, n)),
        target: Array2::zeros((n_regimes, n)),
        phi: score.phi.zeros_like(),
    };

    let mut gamma = hp.gamma_init;
    let mut mu = hp.mu_init;
    let mut h_prev = graph::acyclicity_value(&score.soft_adjacency())?;
    let mut trace = vec![TraceEntry {
        score: probe_score(ds, &score, hp, &fixed_r)?,
        h: h_prev,
        gamma,
        mu,
    }];

    let mut last_loss = trace[0].score;
    for _outer in 0..hp.max_outer {
        if h_prev <= hp.constraint_tol {
            break;
        }
        for _step in 0..hp.subproblem_steps {
            let batches: Vec<Array2<f64>> = (0..n_regimes)
                .map(|q| draw_batch(ds.regime(q).samples(), hp.batch_size, &mut rng))
                .collect();
            let masks = sample_masks(&score, hp.tau, &mut rng);
            let r_vals: &Array2<f64> = if use_fixed_r {
                fixed_r.as_ref().unwrap()
            } else {
                &masks.r_hard
            };
            let out =
                relaxed_loss(&batches, &masks.m_hard, r_vals, &score, hp, true).map_err(|e| {
                    match e {
                        Error::Numeric(msg) => Error::Numeric(format!(
                            "{msg} (last trace: {:?})",
                            trace.last().copied()
                        )),
                        other => other,
                    }
                })?;
            last_loss = out.loss;

            // constraint value and gradient at the current Λ
            let soft_adj = score.soft_adjacency();
            let h = graph::acyclicity_value(&soft_adj)?;
            let exp_t = matrix_exp(&soft_adj).reversed_axes();
            let factor = gamma + mu * h;

            let mut grad_edge = chain_to_logits(&out.grad_mask, &masks.m_soft, hp.tau);
            for i in 0..n {
                for j in 0..n {
                    if score.edge_active(i, j) {
                        let sig = sigmoid(score.edge_logits[[i, j]]);
                        let dsig = sig * (1.0 - sig);
                        grad_edge[[i, j]] +=
                            (hp.edge_sparsity + factor * exp_t[[i, j]]) * dsig;
                        rmsprop_scalar(
                            &mut score.edge_logits[[i, j]],
                            grad_edge[[i, j]],
                            &mut state.edge[[i, j]],
                            hp.learning_rate,
                        );
                        score.edge_logits[[i, j]] =
                            score.edge_logits[[i, j]].clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                    }
                }
            }

            if hp.mode == TargetMode::Unknown {
                let mut grad_target = chain_to_logits(&out.grad_rvals, &masks.r_soft, hp.tau);
                for q in 0..n_regimes {
                    for j in 0..n {
                        if score.target_active(q, j) {
                            let sig = sigmoid(score.target_logits[[q, j]]);
                            grad_target[[q, j]] += hp.target_sparsity * sig * (1.0 - sig);
                            rmsprop_scalar(
                                &mut score.target_logits[[q, j]],
                                grad_target[[q, j]],
                                &mut state.target[[q, j]],
                                hp.learning_rate,
                            );
                            score.target_logits[[q, j]] =
                                score.target_logits[[q, j]].clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                        }
                    }
                }
            }

            for ((pnet, gnet), snet) in
                score.phi.obs.iter_mut().zip(out.grad_phi.obs.iter()).zip(state.phi.obs.iter_mut())
            {
                density::zip_params(pnet, gnet, snet, |pv, gv, sv| {
                    rmsprop_scalar(pv, gv, sv, hp.learning_rate)
                });
            }
            for (key, gnet) in &out.grad_phi.interv {
                let pnet = score.phi.interv.get_mut(key).unwrap();
                let snet = state.phi.interv.get_mut(key).unwrap();
                density::zip_params(pnet, gnet, snet, |pv, gv, sv| {
                    rmsprop_scalar(pv, gv, sv, hp.learning_rate)
                });
            }
        }

        let h = graph::acyclicity_value(&score.soft_adjacency())?;
        gamma += mu * h;
        if h > hp.progress_factor * h_prev {
            mu *= hp.mu_growth;
        }
        trace.push(TraceEntry { score: last_loss, h, gamma, mu });
        h_prev = h;
    }

    let soft_adjacency = score.soft_adjacency();
    let graph = graph::threshold_extract(&soft_adjacency, d, p)?;
    let (target_probs, family) = if hp.mode == TargetMode::Known {
        (fixed_r.unwrap(), true_family.unwrap().to_vec())
    } else {
        (score.soft_targets(), extract_family(&score.target_logits, d))
    };
    Ok(DiscoveryResult { soft_adjacency, graph, target_probs, family, trace })
}

/// Deterministic score probe for the initial trace entry: expected (soft)
/// masks over the leading `batch_size` samples of each regime.
fn probe_score(
    ds: &RegimeDataset,
    score: &ScoreParams,
    hp: &HyperParams,
    fixed_r: &Option<Array2<f64>>,
) -> Result<f64> {
    let batches: Vec<Array2<f64>> = (0..ds.n_regimes())
        .map(|q| {
            let samples = ds.regime(q).samples();
            let take = hp.batch_size.min(samples.nrows());
            samples.slice(ndarray::s![0..take, ..]).to_owned()
        })
        .collect();
    let m = score.soft_adjacency();
    let owned;
    let r: &Array2<f64> = match fixed_r {
        Some(r) if hp.mode == TargetMode::Known || hp.literal_eq6 => r,
        _ => {
            owned = score.soft_targets();
            &owned
        }
    };
    Ok(relaxed_loss(&batches, &m, r, score, hp, false)?.loss)
}

fn draw_batch(samples: &Array2<f64>, batch: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let rows = samples.nrows();
    let mut out = Array2::zeros((batch, samples.ncols()));
    for r in 0..batch {
        let idx = rng.random_range(0..rows);
        out.row_mut(r).assign(&samples.row(idx));
    }
    out
}

/// Matrix exponential by the same truncated series as the acyclicity value.
fn matrix_exp(s: &Array2<f64>) -> Array2<f64> {
    let n = s.nrows();
    let mut acc = Array2::eye(n);
    let mut term = s.clone();
    let mut m = 1usize;
    loop {
        acc += &term;
        let max_entry = term.iter().fold(0.0f64, |a, &v| a.max(v));
        if max_entry < 1e-12 || m > 10_000 {
            break;
        }
        m += 1;
        term = term.dot(s) / m as f64;
    }
    acc
}
