//! Unrolled temporal graph representation.
//!
//! A system of `d` variables observed over `p` time lags is modelled as one
//! graph over `(p+1)*d` nodes laid out `[contemporaneous | lag-1 | ... | lag-p]`.
//! Node `k*d + l` is the lag-`k` copy of variable `l`. Edges may only point
//! into contemporaneous columns, the intra-slice diagonal is empty, and the
//! whole graph is acyclic.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat node index of the lag-`k` copy of variable `l`.
pub fn unrolled_index(k: usize, l: usize, d: usize, p: usize) -> Result<usize> {
    if k > p {
        return Err(Error::Config(format!("lag {k} out of range 0..={p}")));
    }
    if l >= d {
        return Err(Error::Config(format!("variable {l} out of range 0..{d}")));
    }
    Ok(k * d + l)
}

/// Binary adjacency over the `(p+1)d` unrolled nodes.
///
/// Immutable after construction; all invariants are checked by the
/// constructors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalGraph {
    d: usize,
    p: usize,
    adj: Array2<u8>,
}

impl TemporalGraph {
    pub fn empty(d: usize, p: usize) -> Self {
        let n = (p + 1) * d;
        TemporalGraph { d, p, adj: Array2::zeros((n, n)) }
    }

    /// Build from a full adjacency matrix, validating every invariant.
    pub fn from_adjacency(d: usize, p: usize, adj: Array2<u8>) -> Result<Self> {
        let n = (p + 1) * d;
        if adj.dim() != (n, n) {
            return Err(Error::Config(format!(
                "adjacency must be {n}x{n}, got {}x{}",
                adj.nrows(),
                adj.ncols()
            )));
        }
        for ((i, j), &v) in adj.indexed_iter() {
            if v > 1 {
                return Err(Error::Config(format!("adjacency entry ({i},{j}) not binary")));
            }
            if v == 1 && j >= d {
                return Err(Error::Config(format!(
                    "edge ({i},{j}) enters a lagged column (columns >= {d} must be empty)"
                )));
            }
            if v == 1 && i == j {
                return Err(Error::Config(format!("self-edge ({i},{j}) in the intra slice")));
            }
        }
        if !is_acyclic(&adj) {
            return Err(Error::Config("adjacency contains a directed cycle".into()));
        }
        Ok(TemporalGraph { d, p, adj })
    }

    pub fn from_edges(d: usize, p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let n = (p + 1) * d;
        let mut adj = Array2::zeros((n, n));
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Config(format!("edge ({i},{j}) out of range for n={n}")));
            }
            adj[[i, j]] = 1;
        }
        Self::from_adjacency(d, p, adj)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Total node count `(p+1)d`.
    pub fn n(&self) -> usize {
        (self.p + 1) * self.d
    }

    pub fn adjacency(&self) -> &Array2<u8> {
        &self.adj
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[[i, j]] == 1
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&v| v == 1).count()
    }

    /// Edges as `(row, col)` pairs in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for ((i, j), &v) in self.adj.indexed_iter() {
            if v == 1 {
                out.push((i, j));
            }
        }
        out
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            d: self.d,
            p: self.p,
            edges: self.edges().into_iter().map(|(i, j)| (i, j)).collect(),
        }
    }

    pub fn from_json(json: &GraphJson) -> Result<Self> {
        Self::from_edges(json.d, json.p, &json.edges)
    }
}

/// Serialized form: `{"d": .., "p": .., "edges": [[i, j], ..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphJson {
    pub d: usize,
    pub p: usize,
    pub edges: Vec<(usize, usize)>,
}

/// Intra-slice matrix `W` plus one inter-slice matrix per lag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceViews {
    pub w: Array2<u8>,
    pub a: Vec<Array2<u8>>,
}

impl SliceViews {
    pub fn d(&self) -> usize {
        self.w.nrows()
    }

    pub fn p(&self) -> usize {
        self.a.len()
    }

    pub fn to_json(&self) -> SlicesJson {
        SlicesJson {
            w: self.w.rows().into_iter().map(|r| r.to_vec()).collect(),
            a: self
                .a
                .iter()
                .map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
        }
    }
}

/// Serialized form: `{"W": [[..]], "A": [[[..]]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlicesJson {
    #[serde(rename = "W")]
    pub w: Vec<Vec<u8>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<u8>>>,
}

/// Split the unrolled adjacency into `W` (rows/cols `0..d`) and
/// `A_k` (rows `kd..(k+1)d`, cols `0..d`). Lossless: `reassemble` restores
/// the full adjacency bit-exactly.
pub fn extract_slices(g: &TemporalGraph) -> SliceViews {
    let d = g.d;
    let w = g.adj.slice(s![0..d, 0..d]).to_owned();
    let a = (1..=g.p)
        .map(|k| g.adj.slice(s![k * d..(k + 1) * d, 0..d]).to_owned())
        .collect();
    SliceViews { w, a }
}

/// Rebuild the unrolled graph from slice views.
pub fn reassemble(views: &SliceViews) -> Result<TemporalGraph> {
    let d = views.d();
    let p = views.p();
    let n = (p + 1) * d;
    let mut adj = Array2::zeros((n, n));
    adj.slice_mut(s![0..d, 0..d]).assign(&views.w);
    for (k, a) in views.a.iter().enumerate() {
        if a.dim() != (d, d) {
            return Err(Error::Config(format!(
                "inter-slice matrix {} must be {d}x{d}, got {}x{}",
                k + 1,
                a.nrows(),
                a.ncols()
            )));
        }
        adj.slice_mut(s![(k + 1) * d..(k + 2) * d, 0..d]).assign(a);
    }
    TemporalGraph::from_adjacency(d, p, adj)
}

/// Smooth acyclicity functional `trace(exp(S)) - n` for a nonnegative matrix.
///
/// Computed as the truncated series `sum_{m>=1} trace(S^m)/m!`, adding terms
/// until the current term's largest entry drops below 1e-12. The value is
/// exactly zero for nilpotent `S` (no directed cycle in the support) because
/// every closed-walk sum is empty.
pub fn acyclicity_value(s_mat: &Array2<f64>) -> Result<f64> {
    let n = s_mat.nrows();
    if s_mat.ncols() != n {
        return Err(Error::Config(format!(
            "acyclicity input must be square, got {}x{}",
            s_mat.nrows(),
            s_mat.ncols()
        )));
    }
    if s_mat.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Config("acyclicity input must be nonnegative and finite".into()));
    }
    let mut term = s_mat.clone(); // S^m / m!
    let mut h = term.diag().sum();
    let mut m = 1usize;
    loop {
        let max_entry = term.iter().fold(0.0f64, |acc, &v| acc.max(v));
        if max_entry < 1e-12 {
            break;
        }
        m += 1;
        term = term.dot(s_mat) / m as f64;
        h += term.diag().sum();
        if m > 10_000 {
            return Err(Error::Numeric("acyclicity series failed to converge".into()));
        }
    }
    Ok(h)
}

/// Cycle test by Kahn-style topological elimination.
pub fn is_acyclic(adj: &Array2<u8>) -> bool {
    let n = adj.nrows();
    assert_eq!(n, adj.ncols(), "adjacency must be square");
    let mut indeg = vec![0usize; n];
    for ((_, j), &v) in adj.indexed_iter() {
        if v != 0 {
            indeg[j] += 1;
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&j| indeg[j] == 0).collect();
    let mut removed = 0;
    while let Some(i) = queue.pop() {
        removed += 1;
        for j in 0..n {
            if adj[[i, j]] != 0 {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    queue.push(j);
                }
            }
        }
    }
    removed == n
}

/// Topological order of a DAG adjacency (parents before children).
pub fn topological_order(adj: &Array2<u8>) -> Result<Vec<usize>> {
    let n = adj.nrows();
    let mut indeg = vec![0usize; n];
    for ((_, j), &v) in adj.indexed_iter() {
        if v != 0 {
            indeg[j] += 1;
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&j| indeg[j] == 0).collect();
    queue.sort_unstable();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = queue.pop() {
        order.push(i);
        for j in 0..n {
            if adj[[i, j]] != 0 {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    queue.push(j);
                }
            }
        }
    }
    if order.len() != n {
        return Err(Error::Config("graph contains a directed cycle".into()));
    }
    Ok(order)
}

/// Threshold soft edge weights into a valid temporal graph.
///
/// Entries above 0.5 are candidate edges. They are added in descending-weight
/// order (ties broken by row then column); any edge that would close a cycle
/// is skipped, so the highest-confidence edges win.
pub fn threshold_extract(f: &Array2<f64>, d: usize, p: usize) -> Result<TemporalGraph> {
    let n = (p + 1) * d;
    if f.dim() != (n, n) {
        return Err(Error::Config(format!(
            "soft matrix must be {n}x{n}, got {}x{}",
            f.nrows(),
            f.ncols()
        )));
    }
    for ((i, j), &v) in f.indexed_iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("soft weight ({i},{j})={v} outside [0,1]")));
        }
        if v != 0.0 && (j >= d || i == j) {
            return Err(Error::Config(format!(
                "soft weight ({i},{j}) nonzero in a structurally masked position"
            )));
        }
    }
    let mut candidates: Vec<(usize, usize)> = f
        .indexed_iter()
        .filter(|&(_, &v)| v > 0.5)
        .map(|((i, j), _)| (i, j))
        .collect();
    candidates.sort_by(|&(i1, j1), &(i2, j2)| {
        f[[i2, j2]]
            .partial_cmp(&f[[i1, j1]])
            .unwrap()
            .then((i1, j1).cmp(&(i2, j2)))
    });
    let mut adj: Array2<u8> = Array2::zeros((n, n));
    for (i, j) in candidates {
        adj[[i, j]] = 1;
        // inter-slice edges (i >= d) can never close a cycle
        if i < d && !is_acyclic(&adj) {
            adj[[i, j]] = 0;
        }
    }
    TemporalGraph::from_adjacency(d, p, adj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn unrolled_index_layout() {
        assert_eq!(unrolled_index(0, 0, 5, 2).unwrap(), 0);
        assert_eq!(unrolled_index(1, 2, 5, 2).unwrap(), 7);
        assert_eq!(unrolled_index(2, 4, 5, 2).unwrap(), 14);
        assert!(unrolled_index(3, 0, 5, 2).is_err());
        assert!(unrolled_index(0, 5, 5, 2).is_err());
    }

    #[test]
    fn acyclicity_zero_matrix() {
        let s = Array2::<f64>::zeros((4, 4));
        assert_eq!(acyclicity_value(&s).unwrap(), 0.0);
    }

    #[test]
    fn acyclicity_nilpotent_is_exactly_zero() {
        let s = array![[0.0, 1.0], [0.0, 0.0]];
        assert_eq!(acyclicity_value(&s).unwrap(), 0.0);
    }

    #[test]
    fn acyclicity_two_cycle() {
        let s = array![[0.0, 1.0], [1.0, 0.0]];
        let expected = 2.0 * 1.0f64.cosh() - 2.0; // trace(exp(S)) = 2 cosh(1)
        assert!((acyclicity_value(&s).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.0861612696304874).abs() < 1e-12);
    }

    #[test]
    fn acyclicity_rejects_bad_input() {
        let s = Array2::<f64>::zeros((2, 3));
        assert!(acyclicity_value(&s).is_err());
        let s = array![[0.0, -1.0], [0.0, 0.0]];
        assert!(acyclicity_value(&s).is_err());
    }

    #[test]
    fn kahn_cycle_detection() {
        let chain = array![[0u8, 1], [0, 0]];
        assert!(is_acyclic(&chain));
        let cycle = array![[0u8, 1], [1, 0]];
        assert!(!is_acyclic(&cycle));
        let empty = Array2::<u8>::zeros((5, 5));
        assert!(is_acyclic(&empty));
    }

    #[test]
    fn slice_extraction() {
        // d=2, p=1, single inter edge lag1-var0 -> var0
        let g = TemporalGraph::from_edges(2, 1, &[(2, 0)]).unwrap();
        let v = extract_slices(&g);
        assert_eq!(v.w, Array2::<u8>::zeros((2, 2)));
        assert_eq!(v.a[0], array![[1u8, 0], [0, 0]]);

        let g = TemporalGraph::from_edges(2, 1, &[(0, 1)]).unwrap();
        let v = extract_slices(&g);
        assert_eq!(v.w, array![[0u8, 1], [0, 0]]);
        assert_eq!(v.a[0], Array2::<u8>::zeros((2, 2)));

        let g = TemporalGraph::empty(2, 1);
        let v = extract_slices(&g);
        assert_eq!(v.w, Array2::<u8>::zeros((2, 2)));
        assert_eq!(v.a[0], Array2::<u8>::zeros((2, 2)));
    }

    #[test]
    fn slices_round_trip() {
        let g = TemporalGraph::from_edges(3, 2, &[(0, 1), (1, 2), (3, 0), (7, 2), (8, 0)]).unwrap();
        let back = reassemble(&extract_slices(&g)).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn threshold_below_half_is_empty() {
        let f = Array2::from_elem((4, 4), 0.4);
        let mut f = f;
        // zero out masked positions
        for i in 0..4 {
            for j in 0..4 {
                if j >= 2 || i == j {
                    f[[i, j]] = 0.0;
                }
            }
        }
        let g = threshold_extract(&f, 2, 1).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn threshold_keeps_strongest_direction() {
        let mut f = Array2::zeros((2, 2));
        f[[0, 1]] = 0.9;
        f[[1, 0]] = 0.8;
        let g = threshold_extract(&f, 2, 0).unwrap();
        assert!(g.has_edge(0, 1));
        assert!(!g.has_edge(1, 0));
    }

    #[test]
    fn threshold_inter_slice_edge() {
        let mut f = Array2::zeros((4, 4));
        f[[2, 0]] = 0.95;
        let g = threshold_extract(&f, 2, 1).unwrap();
        let v = extract_slices(&g);
        assert_eq!(v.a[0][[0, 0]], 1);
        assert_eq!(v.w, Array2::<u8>::zeros((2, 2)));
    }

    #[test]
    fn threshold_rejects_out_of_range() {
        let mut f = Array2::zeros((2, 2));
        f[[0, 1]] = 1.2;
        assert!(threshold_extract(&f, 2, 0).is_err());
    }

    #[test]
    fn graph_invariants_enforced() {
        // edge into a lagged column
        assert!(TemporalGraph::from_edges(2, 1, &[(0, 2)]).is_err());
        // intra self edge
        assert!(TemporalGraph::from_edges(2, 1, &[(1, 1)]).is_err());
        // intra cycle
        assert!(TemporalGraph::from_edges(2, 1, &[(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn graph_json_round_trip() {
        let g = TemporalGraph::from_edges(3, 1, &[(0, 1), (4, 2)]).unwrap();
        let json = serde_json::to_string(&g.to_json()).unwrap();
        let back: GraphJson = serde_json::from_str(&json).unwrap();
        assert_eq!(TemporalGraph::from_json(&back).unwrap(), g);
    }
}
