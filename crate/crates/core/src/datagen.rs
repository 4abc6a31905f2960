//! Synthetic benchmark generation.
//!
//! Samples a weighted temporal DAG (Erdős–Rényi support, weights bounded away
//! from zero), simulates a linear SVAR `Y_0 = Y_0 W + Y_1 A_1 + ... + Y_p A_p + Z`,
//! and produces multi-regime datasets where each interventional regime is
//! generated under perfect interventions (parent dependencies of the targets
//! cut).

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, TemporalGraph};
use crate::regime::RegimeDataset;

/// Weighted temporal graph: intra-slice `W` and inter-slice `A_k`, all `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTemporalGraph {
    pub d: usize,
    pub p: usize,
    pub w: Array2<f64>,
    pub a: Vec<Array2<f64>>,
}

impl WeightedTemporalGraph {
    /// Binary support as an unrolled temporal graph.
    pub fn support(&self) -> Result<TemporalGraph> {
        let n = (self.p + 1) * self.d;
        let mut adj = Array2::zeros((n, n));
        for ((i, j), &v) in self.w.indexed_iter() {
            if v != 0.0 {
                adj[[i, j]] = 1;
            }
        }
        for (k, a) in self.a.iter().enumerate() {
            for ((i, j), &v) in a.indexed_iter() {
                if v != 0.0 {
                    adj[[(k + 1) * self.d + i, j]] = 1;
                }
            }
        }
        TemporalGraph::from_adjacency(self.d, self.p, adj)
    }

    fn w_support(&self) -> Array2<u8> {
        self.w.mapv(|v| u8::from(v != 0.0))
    }
}

/// Zero the `W` and `A_k` columns of every target: a perfect intervention
/// removes the targets' dependence on their parents and nothing else.
pub fn apply_perfect_intervention(
    g: &WeightedTemporalGraph,
    targets: &[usize],
) -> Result<WeightedTemporalGraph> {
    let mut out = g.clone();
    for &j in targets {
        if j >= g.d {
            return Err(Error::Config(format!(
                "intervention target {j} out of range 0..{} (only contemporaneous variables)",
                g.d
            )));
        }
        out.w.column_mut(j).fill(0.0);
        for a in &mut out.a {
            a.column_mut(j).fill(0.0);
        }
    }
    Ok(out)
}

/// Benchmark generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSpec {
    pub d: usize,
    pub p: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    /// Inter-slice weight decay base: lag-k magnitudes scale by `1/eta^k`.
    pub eta: f64,
    pub noise_std: f64,
    /// Emitted steps per regime (after burn-in).
    pub t_per_regime: usize,
    pub burn_in: usize,
    /// Regime count including the observational regime 0.
    pub n_regimes: usize,
    /// Interventional target sets for regimes `1..Q`; sampled when absent.
    #[serde(default)]
    pub targets: Option<Vec<Vec<usize>>>,
}

impl GenSpec {
    /// 5 variables, 1 lag, 5 single-target interventional regimes.
    pub fn dataset1() -> Self {
        GenSpec {
            d: 5,
            p: 1,
            intra_edge_prob: 0.5,
            inter_edge_prob: 0.2,
            eta: 1.0,
            noise_std: 1.0,
            t_per_regime: 1000,
            burn_in: 100,
            n_regimes: 6,
            targets: None,
        }
    }

    /// 10 variables, 1 lag, 10 single-target interventional regimes.
    pub fn dataset2() -> Self {
        GenSpec {
            d: 10,
            p: 1,
            intra_edge_prob: 2.0 / 9.0,
            inter_edge_prob: 0.1,
            eta: 1.0,
            noise_std: 1.0,
            t_per_regime: 1000,
            burn_in: 100,
            n_regimes: 11,
            targets: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        for (name, prob) in
            [("intra_edge_prob", self.intra_edge_prob), ("inter_edge_prob", self.inter_edge_prob)]
        {
            if !(0.0..=1.0).contains(&prob) {
                return Err(Error::Config(format!("{name}={prob} outside [0,1]")));
            }
        }
        if self.eta < 1.0 {
            return Err(Error::Config(format!("eta={} must be >= 1", self.eta)));
        }
        if self.noise_std <= 0.0 {
            return Err(Error::Config("noise_std must be positive".into()));
        }
        if self.n_regimes == 0 {
            return Err(Error::Config("need at least the observational regime".into()));
        }
        if self.t_per_regime <= self.p + self.burn_in {
            return Err(Error::Config(format!(
                "t_per_regime={} must exceed p+burn_in={}",
                self.t_per_regime,
                self.p + self.burn_in
            )));
        }
        if let Some(targets) = &self.targets {
            if targets.len() != self.n_regimes - 1 {
                return Err(Error::Config(format!(
                    "{} target sets for {} interventional regimes",
                    targets.len(),
                    self.n_regimes - 1
                )));
            }
            for (q, set) in targets.iter().enumerate() {
                for &j in set {
                    if j >= self.d {
                        return Err(Error::Config(format!(
                            "target {j} in regime {} out of range 0..{}",
                            q + 1,
                            self.d
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn draw_weight(rng: &mut impl Rng, scale: f64) -> f64 {
    let magnitude = rng.random_range(0.25..=1.0) * scale;
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

/// Sample a weighted temporal DAG.
///
/// A uniformly random node permutation orients the intra slice (guaranteeing
/// acyclicity); each ordered intra pair gets an edge with `intra_edge_prob`,
/// every inter pair (self-lags included) with `inter_edge_prob`. Nonzero
/// weights are uniform over `±[0.25, 1.0]`, inter-slice magnitudes scaled by
/// `1/eta^k`.
pub fn sample_weighted_graph(spec: &GenSpec, seed: u64) -> Result<WeightedTemporalGraph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.d;
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut rng);
    let mut w = Array2::zeros((d, d));
    for a in 0..d {
        for b in a + 1..d {
            if rng.random::<f64>() < spec.intra_edge_prob {
                w[[perm[a], perm[b]]] = draw_weight(&mut rng, 1.0);
            }
        }
    }
    let mut a_mats = Vec::with_capacity(spec.p);
    for k in 1..=spec.p {
        let scale = spec.eta.powi(k as i32).recip();
        let mut a = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                if rng.random::<f64>() < spec.inter_edge_prob {
                    a[[i, j]] = draw_weight(&mut rng, scale);
                }
            }
        }
        a_mats.push(a);
    }
    Ok(WeightedTemporalGraph { d, p: spec.p, w, a: a_mats })
}

/// Simulate the SVAR; returns `t` rows after discarding `burn_in` leading
/// steps. The contemporaneous system is solved by topological substitution,
/// so an acyclic `W` support is required.
pub fn generate_svar(
    g: &WeightedTemporalGraph,
    noise_std: f64,
    t: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let d = g.d;
    let order = graph::topological_order(&g.w_support())
        .map_err(|_| Error::Config("intra-slice weight support contains a cycle".into()))?;
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // ring buffer of the last p rows, newest first
    let mut history: Vec<Array1<f64>> = (0..g.p)
        .map(|_| Array1::from_shape_fn(d, |_| normal.sample(&mut rng)))
        .collect();
    let mut out = Array2::zeros((t, d));
    let total = burn_in + t;
    for step in 0..total {
        let mut row = Array1::from_shape_fn(d, |_| normal.sample(&mut rng));
        for (k, a) in g.a.iter().enumerate() {
            if let Some(lagged) = history.get(k) {
                // row += lagged * A_k  (row-vector convention)
                for j in 0..d {
                    let mut acc = 0.0;
                    for i in 0..d {
                        acc += lagged[i] * a[[i, j]];
                    }
                    row[j] += acc;
                }
            }
        }
        // contemporaneous solve: Y = Y W + rhs, parents resolved first
        for &j in &order {
            let mut acc = row[j];
            for i in 0..d {
                let wij = g.w[[i, j]];
                if wij != 0.0 {
                    acc += row[i] * wij;
                }
            }
            row[j] = acc;
        }
        if step >= burn_in {
            out.row_mut(step - burn_in).assign(&row);
        }
        if g.p > 0 {
            history.rotate_right(1);
            history[0] = row;
        }
    }
    Ok(out)
}

/// Ground truth emitted next to a generated benchmark.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub graph: TemporalGraph,
    /// Interventional family: one target set per regime, regime 0 empty.
    pub targets: Vec<Vec<usize>>,
}

/// Serialized `ground_truth.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthJson {
    pub graph: crate::graph::GraphJson,
    pub targets: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn to_json(&self) -> GroundTruthJson {
        GroundTruthJson { graph: self.graph.to_json(), targets: self.targets.clone() }
    }

    pub fn from_json(json: &GroundTruthJson) -> Result<Self> {
        Ok(GroundTruth {
            graph: TemporalGraph::from_json(&json.graph)?,
            targets: json.targets.clone(),
        })
    }
}

/// Generate a full benchmark: observational regime 0 plus one regime per
/// interventional target set, all seeded deterministically.
pub fn build_benchmark(spec: &GenSpec, seed: u64) -> Result<(RegimeDataset, GroundTruth)> {
    spec.validate()?;
    let g = sample_weighted_graph(spec, seed)?;
    let n_interv = spec.n_regimes - 1;
    let targets: Vec<Vec<usize>> = match &spec.targets {
        Some(t) => t.clone(),
        None => {
            if n_interv > spec.d {
                return Err(Error::Config(format!(
                    "cannot sample {n_interv} distinct single targets from {} variables",
                    spec.d
                )));
            }
            // distinct single targets, sampled from a dedicated stream
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX);
            let mut vars: Vec<usize> = (0..spec.d).collect();
            vars.shuffle(&mut rng);
            vars[..n_interv].iter().map(|&v| vec![v]).collect()
        }
    };
    let mut family = vec![Vec::new()];
    family.extend(targets.iter().cloned());

    let mut series = Vec::with_capacity(spec.n_regimes);
    for q in 0..spec.n_regimes {
        let regime_graph =
            if q == 0 { g.clone() } else { apply_perfect_intervention(&g, &family[q])? };
        let mut rng_seeded = ChaCha8Rng::seed_from_u64(seed);
        rng_seeded.set_stream(1 + q as u64);
        // per-regime series drawn from stream q+1 of the base seed
        let regime_seed = rng_seeded.random::<u64>();
        series.push(generate_svar(
            &regime_graph,
            spec.noise_std,
            spec.t_per_regime,
            spec.burn_in,
            regime_seed,
        )?);
    }
    let names = (0..spec.d).map(|i| format!("x{i}")).collect();
    let ds = RegimeDataset::from_series(spec.d, spec.p, names, series)?;
    Ok((ds, GroundTruth { graph: g.support()?, targets: family }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_graph(d: usize, p: usize) -> WeightedTemporalGraph {
        WeightedTemporalGraph {
            d,
            p,
            w: Array2::zeros((d, d)),
            a: (0..p).map(|_| Array2::zeros((d, d))).collect(),
        }
    }

    #[test]
    fn zero_probability_gives_empty_graph() {
        let spec = GenSpec { intra_edge_prob: 0.0, inter_edge_prob: 0.0, ..GenSpec::dataset1() };
        let g = sample_weighted_graph(&spec, 7).unwrap();
        assert!(g.w.iter().all(|&v| v == 0.0));
        assert!(g.a[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_probability_gives_complete_dag() {
        let spec = GenSpec {
            d: 3,
            intra_edge_prob: 1.0,
            inter_edge_prob: 0.0,
            n_regimes: 3,
            ..GenSpec::dataset1()
        };
        let g = sample_weighted_graph(&spec, 11).unwrap();
        assert_eq!(g.w.iter().filter(|&&v| v != 0.0).count(), 3);
        assert!(graph::is_acyclic(&g.support().unwrap().adjacency().mapv(|v| v)));
    }

    #[test]
    fn weights_stay_in_range() {
        let spec = GenSpec { intra_edge_prob: 0.9, inter_edge_prob: 0.9, ..GenSpec::dataset1() };
        let g = sample_weighted_graph(&spec, 3).unwrap();
        for &v in g.w.iter().chain(g.a[0].iter()) {
            if v != 0.0 {
                assert!((0.25..=1.0).contains(&v.abs()), "weight {v} out of range");
            }
        }
    }

    #[test]
    fn inter_weights_decay_with_eta() {
        let spec = GenSpec {
            d: 4,
            p: 2,
            eta: 2.0,
            intra_edge_prob: 0.0,
            inter_edge_prob: 1.0,
            t_per_regime: 500,
            n_regimes: 1,
            ..GenSpec::dataset1()
        };
        let g = sample_weighted_graph(&spec, 5).unwrap();
        for &v in g.a[0].iter() {
            assert!((0.125..=0.5).contains(&v.abs()), "lag-1 weight {v}");
        }
        for &v in g.a[1].iter() {
            assert!((0.0625..=0.25).contains(&v.abs()), "lag-2 weight {v}");
        }
    }

    #[test]
    fn svar_pure_noise_has_small_mean() {
        let g = empty_graph(3, 1);
        let t = 10_000;
        let series = generate_svar(&g, 1.0, t, 100, 99).unwrap();
        for j in 0..3 {
            let mean = series.column(j).sum() / t as f64;
            assert!(mean.abs() < 4.0 / (t as f64).sqrt(), "mean {mean}");
        }
    }

    #[test]
    fn svar_intra_edge_is_exact() {
        // with the same seed and no lag structure, the noise draws coincide,
        // so col1 = noise1 + 0.5 * col0 exactly
        let mut with_edge = empty_graph(2, 0);
        with_edge.w[[0, 1]] = 0.5;
        let without = empty_graph(2, 0);
        let a = generate_svar(&with_edge, 1.0, 200, 0, 42).unwrap();
        let b = generate_svar(&without, 1.0, 200, 0, 42).unwrap();
        for t in 0..200 {
            assert_eq!(a[[t, 0]], b[[t, 0]]);
            assert!((a[[t, 1]] - (b[[t, 1]] + 0.5 * a[[t, 0]])).abs() < 1e-12);
        }
    }

    #[test]
    fn svar_ar1_autocorrelation() {
        let mut g = empty_graph(1, 1);
        g.a[0][[0, 0]] = 0.5;
        let t = 10_000;
        let series = generate_svar(&g, 1.0, t, 200, 1234).unwrap();
        let col = series.column(0);
        let mean = col.sum() / t as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..t {
            let e = col[i] - mean;
            den += e * e;
            if i + 1 < t {
                num += e * (col[i + 1] - mean);
            }
        }
        let rho = num / den;
        assert!((rho - 0.5).abs() < 0.05, "lag-1 autocorrelation {rho}");
    }

    #[test]
    fn svar_rejects_cyclic_w() {
        let mut g = empty_graph(2, 0);
        g.w[[0, 1]] = 0.5;
        g.w[[1, 0]] = 0.5;
        assert!(generate_svar(&g, 1.0, 10, 0, 1).is_err());
    }

    #[test]
    fn intervention_zeroes_only_target_columns() {
        let spec = GenSpec { intra_edge_prob: 0.8, inter_edge_prob: 0.8, ..GenSpec::dataset1() };
        let g = sample_weighted_graph(&spec, 17).unwrap();
        let cut = apply_perfect_intervention(&g, &[0]).unwrap();
        assert!(cut.w.column(0).iter().all(|&v| v == 0.0));
        assert!(cut.a[0].column(0).iter().all(|&v| v == 0.0));
        for j in 1..5 {
            assert_eq!(g.w.column(j), cut.w.column(j));
            assert_eq!(g.a[0].column(j), cut.a[0].column(j));
        }
        let noop = apply_perfect_intervention(&g, &[]).unwrap();
        assert_eq!(noop, g);
        assert!(apply_perfect_intervention(&g, &[5]).is_err());
    }

    #[test]
    fn benchmark_shapes_and_determinism() {
        let spec = GenSpec { t_per_regime: 200, ..GenSpec::dataset1() };
        let (ds, truth) = build_benchmark(&spec, 5).unwrap();
        assert_eq!(ds.n_regimes(), 6);
        assert_eq!(ds.width(), 10);
        assert_eq!(truth.graph.n(), 10);
        // no edges into lagged columns
        for ((_, j), &v) in truth.graph.adjacency().indexed_iter() {
            if v == 1 {
                assert!(j < 5);
            }
        }
        assert_eq!(truth.targets.len(), 6);
        assert!(truth.targets[0].is_empty());
        let mut seen: Vec<usize> = truth.targets[1..].iter().flatten().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 5, "targets must be distinct singles");

        let (ds2, truth2) = build_benchmark(&spec, 5).unwrap();
        assert_eq!(ds, ds2);
        assert_eq!(truth.graph, truth2.graph);
        assert_eq!(truth.targets, truth2.targets);
    }

    #[test]
    fn benchmark_single_regime() {
        let spec = GenSpec { n_regimes: 1, t_per_regime: 150, ..GenSpec::dataset1() };
        let (ds, truth) = build_benchmark(&spec, 1).unwrap();
        assert_eq!(ds.n_regimes(), 1);
        assert_eq!(truth.targets, vec![Vec::<usize>::new()]);
    }

    #[test]
    fn benchmark_too_many_targets() {
        let spec = GenSpec { n_regimes: 8, ..GenSpec::dataset1() };
        assert!(build_benchmark(&spec, 1).is_err());
    }

    #[test]
    fn ols_recovers_generating_weights() {
        // regress each variable on its true parents in regime-0 samples
        let spec = GenSpec {
            t_per_regime: 10_000,
            n_regimes: 1,
            ..GenSpec::dataset1()
        };
        let (ds, truth) = build_benchmark(&spec, 21).unwrap();
        let g = sample_weighted_graph(&spec, 21).unwrap();
        let samples = ds.regime(0).samples();
        let n = ds.width();
        for j in 0..5 {
            let parents: Vec<usize> =
                (0..n).filter(|&i| truth.graph.has_edge(i, j)).collect();
            if parents.is_empty() {
                continue;
            }
            let coef = ols(samples, &parents, j);
            for (idx, &i) in parents.iter().enumerate() {
                let w_true = if i < 5 { g.w[[i, j]] } else { g.a[0][[i - 5, j]] };
                assert!(
                    (coef[idx] - w_true).abs() <= 0.05,
                    "weight ({i},{j}): ols {} vs true {w_true}",
                    coef[idx]
                );
            }
        }
    }

    // least squares via normal equations, small systems only
    fn ols(samples: &Array2<f64>, cols: &[usize], target: usize) -> Vec<f64> {
        let k = cols.len();
        let n = samples.nrows();
        let mut xtx = vec![vec![0.0; k]; k];
        let mut xty = vec![0.0; k];
        for r in 0..n {
            for (ai, &ci) in cols.iter().enumerate() {
                for (bi, &cj) in cols.iter().enumerate() {
                    xtx[ai][bi] += samples[[r, ci]] * samples[[r, cj]];
                }
                xty[ai] += samples[[r, ci]] * samples[[r, target]];
            }
        }
        // gaussian elimination with partial pivoting
        for col in 0..k {
            let pivot = (col..k).max_by(|&a, &b| xtx[a][col].abs().total_cmp(&xtx[b][col].abs())).unwrap();
            xtx.swap(col, pivot);
            xty.swap(col, pivot);
            let diag = xtx[col][col];
            for row in col + 1..k {
                let f = xtx[row][col] / diag;
                for c in col..k {
                    xtx[row][c] -= f * xtx[col][c];
                }
                xty[row] -= f * xty[col];
            }
        }
        let mut beta = vec![0.0; k];
        for row in (0..k).rev() {
            let mut acc = xty[row];
            for c in row + 1..k {
                acc -= xtx[row][c] * beta[c];
            }
            beta[row] = acc / xtx[row][row];
        }
        beta
    }
}
