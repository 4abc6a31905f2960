//! Graph-recovery and application metrics.
//!
//! SHD counts edge differences (a reversed pair counts once). SID counts
//! ordered node pairs whose parent set in the estimated graph is not a valid
//! adjustment set in the true graph, with validity decided by the adjustment
//! criterion (forbidden-set test plus d-separation in the proper back-door
//! graph). Layout metrics classify compressed edges against physical-layout
//! rules when no ground-truth graph exists.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{is_acyclic, SliceViews, TemporalGraph};

/// Structural Hamming distance over the full unrolled adjacency.
pub fn shd(g1: &TemporalGraph, g2: &TemporalGraph) -> Result<usize> {
    if g1.d() != g2.d() || g1.p() != g2.p() {
        return Err(Error::Config(format!(
            "graph shapes differ: d={},p={} vs d={},p={}",
            g1.d(),
            g1.p(),
            g2.d(),
            g2.p()
        )));
    }
    shd_adj(g1.adjacency(), g2.adjacency())
}

/// SHD on raw adjacency matrices: unordered pairs whose edge state
/// (none / forward / reverse) differs count one each.
pub fn shd_adj(a: &Array2<u8>, b: &Array2<u8>) -> Result<usize> {
    let n = a.nrows();
    if a.dim() != b.dim() || a.ncols() != n {
        return Err(Error::Config("adjacency shapes differ".into()));
    }
    let mut count = 0;
    for i in 0..n {
        for j in i + 1..n {
            let s1 = (a[[i, j]] != 0, a[[j, i]] != 0);
            let s2 = (b[[i, j]] != 0, b[[j, i]] != 0);
            if s1 != s2 {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Structural intervention distance on the full unrolled graphs.
pub fn sid(g_true: &TemporalGraph, g_est: &TemporalGraph) -> Result<usize> {
    if g_true.d() != g_est.d() || g_true.p() != g_est.p() {
        return Err(Error::Config("graph shapes differ".into()));
    }
    sid_adj(g_true.adjacency(), g_est.adjacency())
}

/// SID on raw DAG adjacency matrices.
///
/// Pair `(i, j)` counts as wrong when the estimated parents `Z = pa_est(i)`
/// mispredict the intervention effect of `i` on `j` in the true graph:
/// if `j ∈ Z` the estimate claims no effect, wrong iff `j` is a true
/// descendant of `i`; otherwise wrong iff `Z` fails the adjustment criterion.
pub fn sid_adj(true_adj: &Array2<u8>, est_adj: &Array2<u8>) -> Result<usize> {
    let n = true_adj.nrows();
    if true_adj.dim() != (n, n) || est_adj.dim() != true_adj.dim() {
        return Err(Error::Config("adjacency shapes differ".into()));
    }
    if !is_acyclic(true_adj) || !is_acyclic(est_adj) {
        return Err(Error::Config("SID requires acyclic graphs".into()));
    }
    let reach = reachability(true_adj);
    let mut count = 0;
    for i in 0..n {
        let z: Vec<bool> = (0..n).map(|k| est_adj[[k, i]] != 0).collect();
        for j in 0..n {
            if i == j {
                continue;
            }
            let correct = if z[j] {
                // estimated graph makes j a parent (cause) of i: it predicts
                // no effect of i on j, correct iff j is not a true descendant
                !reach[i][j]
            } else {
                adjustment_valid(true_adj, &reach, i, j, &z)
            };
            if !correct {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// `reach[i][j]`: directed path of length >= 1 from i to j.
fn reachability(adj: &Array2<u8>) -> Vec<Vec<bool>> {
    let n = adj.nrows();
    let mut reach = vec![vec![false; n]; n];
    for start in 0..n {
        let mut stack: Vec<usize> = (0..n).filter(|&j| adj[[start, j]] != 0).collect();
        while let Some(v) = stack.pop() {
            if !reach[start][v] {
                reach[start][v] = true;
                for w in 0..n {
                    if adj[[v, w]] != 0 && !reach[start][w] {
                        stack.push(w);
                    }
                }
            }
        }
    }
    reach
}

/// Adjustment criterion for `Z` relative to `(i, j)`:
/// no member of `Z` may descend from a node on a proper causal path, and `Z`
/// must d-separate `i` from `j` in the proper back-door graph.
fn adjustment_valid(
    adj: &Array2<u8>,
    reach: &[Vec<bool>],
    i: usize,
    j: usize,
    z: &[bool],
) -> bool {
    let n = adj.nrows();
    // causal nodes: w != i on some directed path i -> .. -> j
    let causal: Vec<bool> = (0..n)
        .map(|w| w != i && reach[i][w] && (w == j || reach[w][j]))
        .collect();
    // forbidden: causal nodes and their descendants
    for zi in 0..n {
        if !z[zi] {
            continue;
        }
        for w in 0..n {
            if causal[w] && (w == zi || reach[w][zi]) {
                return false;
            }
        }
    }
    // proper back-door graph: drop the first edge of every proper causal path
    let mut pbd = adj.clone();
    for c in 0..n {
        if pbd[[i, c]] != 0 && causal[c] {
            pbd[[i, c]] = 0;
        }
    }
    d_separated(&pbd, i, j, z)
}

/// d-separation of `x` and `y` given `Z` via the moralized ancestral graph.
fn d_separated(adj: &Array2<u8>, x: usize, y: usize, z: &[bool]) -> bool {
    let n = adj.nrows();
    // ancestral set of {x, y} ∪ Z
    let mut in_anc = vec![false; n];
    let mut stack: Vec<usize> =
        (0..n).filter(|&v| v == x || v == y || z[v]).collect();
    while let Some(v) = stack.pop() {
        if in_anc[v] {
            continue;
        }
        in_anc[v] = true;
        for u in 0..n {
            if adj[[u, v]] != 0 && !in_anc[u] {
                stack.push(u);
            }
        }
    }
    // moral graph: undirected edges for u -> v plus co-parent marriages
    let mut und = vec![vec![false; n]; n];
    for u in 0..n {
        for v in 0..n {
            if adj[[u, v]] != 0 && in_anc[u] && in_anc[v] {
                und[u][v] = true;
                und[v][u] = true;
            }
        }
    }
    for child in 0..n {
        if !in_anc[child] {
            continue;
        }
        let parents: Vec<usize> =
            (0..n).filter(|&u| adj[[u, child]] != 0 && in_anc[u]).collect();
        for a in 0..parents.len() {
            for b in a + 1..parents.len() {
                und[parents[a]][parents[b]] = true;
                und[parents[b]][parents[a]] = true;
            }
        }
    }
    // connectivity from x to y avoiding Z
    let mut seen = vec![false; n];
    let mut stack = vec![x];
    seen[x] = true;
    while let Some(v) = stack.pop() {
        if v == y {
            return false;
        }
        for w in 0..n {
            if und[v][w] && !seen[w] && !z[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    true
}

/// Compress intra and inter-slice relations into one `d x d` existence
/// matrix: entry 1 iff any of `W` or the `A_k` has the edge.
pub fn w_full(views: &SliceViews) -> Array2<u8> {
    let d = views.d();
    Array2::from_shape_fn((d, d), |(i, j)| {
        let total =
            views.w[[i, j]] as usize + views.a.iter().map(|a| a[[i, j]] as usize).sum::<usize>();
        u8::from(total > 0)
    })
}

/// Variable role in the physical layout: sources drive, sinks respond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "A")]
    Source,
    #[serde(rename = "C")]
    Sink,
}

/// Physical-layout rules: per-variable roles, adjacency pairs, and groups of
/// sink variables. Loaded from `rules.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutRules {
    pub roles: BTreeMap<String, Role>,
    pub adjacent: Vec<(String, String)>,
    pub groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayoutCounts {
    pub all_edges: usize,
    pub a2c_true: usize,
    pub a2a_true: usize,
    pub c2c_true: usize,
    pub c2a_false: usize,
}

/// Classify each edge of the compressed graph against the layout rules.
pub fn layout_eval(
    views: &SliceViews,
    names: &[String],
    rules: &LayoutRules,
) -> Result<LayoutCounts> {
    let d = views.d();
    if names.len() != d {
        return Err(Error::Config(format!("{} names for d={d}", names.len())));
    }
    let roles: Vec<Role> = names
        .iter()
        .map(|name| {
            rules
                .roles
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("variable {name} missing from role map")))
        })
        .collect::<Result<_>>()?;
    let index: BTreeMap<&str, usize> =
        names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut adjacent = vec![vec![false; d]; d];
    for (a, b) in &rules.adjacent {
        let (ia, ib) = match (index.get(a.as_str()), index.get(b.as_str())) {
            (Some(&ia), Some(&ib)) => (ia, ib),
            _ => {
                return Err(Error::Config(format!(
                    "adjacency pair ({a},{b}) references unknown variables"
                )))
            }
        };
        adjacent[ia][ib] = true;
        adjacent[ib][ia] = true;
    }
    let mut group = vec![usize::MAX; d];
    for (gid, members) in rules.groups.iter().enumerate() {
        for m in members {
            let &mi = index
                .get(m.as_str())
                .ok_or_else(|| Error::Config(format!("group member {m} unknown")))?;
            group[mi] = gid;
        }
    }

    let wf = w_full(views);
    let mut counts = LayoutCounts::default();
    for ((i, j), &v) in wf.indexed_iter() {
        if v == 0 {
            continue;
        }
        counts.all_edges += 1;
        match (roles[i], roles[j]) {
            (Role::Source, Role::Sink) if adjacent[i][j] => counts.a2c_true += 1,
            (Role::Source, Role::Source) if adjacent[i][j] => counts.a2a_true += 1,
            (Role::Sink, Role::Sink) if group[i] != usize::MAX && group[i] == group[j] => {
                counts.c2c_true += 1
            }
            (Role::Sink, Role::Source) => counts.c2a_false += 1,
            _ => {}
        }
    }
    Ok(counts)
}

/// Micro-averaged precision/recall/F1 over all interventional `(regime, node)`
/// cells of the two families.
pub fn intervention_f1(
    true_family: &[Vec<usize>],
    est_family: &[Vec<usize>],
) -> Result<(f64, f64, f64)> {
    if true_family.len() != est_family.len() {
        return Err(Error::Config(format!(
            "family lengths differ: {} vs {}",
            true_family.len(),
            est_family.len()
        )));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for q in 1..true_family.len() {
        let t: std::collections::BTreeSet<usize> = true_family[q].iter().copied().collect();
        let e: std::collections::BTreeSet<usize> = est_family[q].iter().copied().collect();
        tp += t.intersection(&e).count();
        fp += e.difference(&t).count();
        fn_ += t.difference(&e).count();
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}
