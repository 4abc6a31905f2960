//! Property tests for the structural invariants.

use ndarray::Array2;
use proptest::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use tcd_core::graph::{
    acyclicity_value, extract_slices, is_acyclic, reassemble, threshold_extract, TemporalGraph,
};
use tcd_core::metainit::{parse_answer, render_answer, Strictness};
use tcd_core::metrics::{shd, sid_adj};
use tcd_core::regime::{window, RegimeDataset};

fn arb_temporal_graph(d: usize, p: usize) -> impl Strategy<Value = TemporalGraph> {
    let n = (p + 1) * d;
    proptest::collection::vec(any::<bool>(), n * d).prop_map(move |bits| {
        let mut adj = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..d {
                // keep the intra slice upper-triangular so it stays acyclic
                let ok = if i < d { i < j } else { i != j };
                if ok && bits[i * d + j] {
                    adj[[i, j]] = 1;
                }
            }
        }
        TemporalGraph::from_adjacency(d, p, adj).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slices_reassemble_bit_exactly(g in arb_temporal_graph(4, 2)) {
        let views = extract_slices(&g);
        let back = reassemble(&views).unwrap();
        prop_assert_eq!(g, back);
    }

    #[test]
    fn acyclicity_zero_on_permuted_triangular(perm_seed in any::<u64>(), bits in proptest::collection::vec(0.0f64..1.0, 36)) {
        // random strictly-triangular support under a random permutation is
        // nilpotent, so the series must vanish exactly
        let n = 6;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        order.shuffle(&mut rng);
        let mut s = Array2::zeros((n, n));
        for a in 0..n {
            for b in a + 1..n {
                s[[order[a], order[b]]] = bits[a * n + b];
            }
        }
        prop_assert_eq!(acyclicity_value(&s).unwrap(), 0.0);
    }

    #[test]
    fn acyclicity_positive_with_cycle(weight in 0.1f64..1.0, extra in proptest::collection::vec(0.0f64..0.5, 16)) {
        let mut s = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.0 } else { extra[i * 4 + j] });
        s[[0, 1]] = weight;
        s[[1, 0]] = weight;
        prop_assert!(acyclicity_value(&s).unwrap() > 0.0);
    }

    #[test]
    fn threshold_extract_is_acyclic_and_above_half(vals in proptest::collection::vec(0.0f64..1.0, 36)) {
        let d = 3;
        let p = 1;
        let n = 6;
        let mut f = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..d {
                if i != j {
                    f[[i, j]] = vals[i * n + j];
                }
            }
        }
        let g = threshold_extract(&f, d, p).unwrap();
        prop_assert!(is_acyclic(g.adjacency()));
        for (i, j) in g.edges() {
            prop_assert!(f[[i, j]] > 0.5);
        }
    }

    #[test]
    fn window_reconstructs_series(rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 2), 4..12)) {
        let t = rows.len();
        let series = Array2::from_shape_fn((t, 2), |(r, c)| rows[r][c]);
        let p = 2;
        let w = window(&series, p).unwrap();
        // contemporaneous columns plus the first p rows rebuild the input
        let mut rebuilt = Array2::zeros((t, 2));
        for k in 0..p {
            for c in 0..2 {
                rebuilt[[k, c]] = w[[0, (p - k) * 2 + c]];
            }
        }
        for r in 0..t - p {
            for c in 0..2 {
                rebuilt[[r + p, c]] = w[[r, c]];
            }
        }
        prop_assert_eq!(series, rebuilt);
    }

    #[test]
    fn normalize_idempotent(rows in proptest::collection::vec(-100.0f64..100.0, 8..40)) {
        prop_assume!(rows.iter().any(|&v| (v - rows[0]).abs() > 1e-6));
        let t = rows.len();
        let series = Array2::from_shape_fn((t, 1), |(r, _)| rows[r]);
        let ds = RegimeDataset::from_series(1, 0, vec!["x0".into()], vec![series]).unwrap();
        let (once, _) = ds.normalize(false).unwrap();
        let (twice, _) = once.normalize(false).unwrap();
        for (a, b) in once.regime(0).samples().iter().zip(twice.regime(0).samples().iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn shd_is_a_metric_on_edge_states(a in arb_temporal_graph(3, 1), b in arb_temporal_graph(3, 1), c in arb_temporal_graph(3, 1)) {
        let dab = shd(&a, &b).unwrap();
        let dba = shd(&b, &a).unwrap();
        prop_assert_eq!(dab, dba);
        prop_assert_eq!(shd(&a, &a).unwrap(), 0);
        if dab == 0 {
            prop_assert_eq!(a.adjacency(), b.adjacency());
        }
        let dac = shd(&a, &c).unwrap();
        let dcb = shd(&c, &b).unwrap();
        prop_assert!(dab <= dac + dcb);
    }

    #[test]
    fn sid_diagonal_zero_and_bounded(a in arb_temporal_graph(3, 1), b in arb_temporal_graph(3, 1)) {
        let n = 6;
        prop_assert_eq!(sid_adj(a.adjacency(), a.adjacency()).unwrap(), 0);
        let v = sid_adj(a.adjacency(), b.adjacency()).unwrap();
        prop_assert!(v <= n * (n - 1));
    }

    #[test]
    fn parse_render_round_trip(pairs in proptest::collection::vec((0usize..4, 0usize..4, 0usize..3), 0..12)) {
        let names: Vec<String> = (0..4).map(|i| format!("v{i}")).collect();
        let tuples: std::collections::BTreeSet<(usize, usize, usize)> = pairs
            .into_iter()
            .filter(|&(u, v, t)| !(t == 0 && u == v))
            .collect();
        let text = render_answer(&tuples, &names);
        let parsed = parse_answer(&text, &names, 4, 2, Strictness::Strict, None).unwrap();
        prop_assert_eq!(parsed.tuples, tuples);
    }
}

#[test]
fn acyclicity_matches_scaling_and_squaring() {
    // independent oracle: scale S by 2^k, short series, then square k times
    fn expm_scaling_squaring(s: &Array2<f64>) -> Array2<f64> {
        let n = s.nrows();
        let norm = s
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        let k = norm.log2().ceil().max(0.0) as u32 + 1;
        let scaled = s / 2f64.powi(k as i32);
        let mut acc = Array2::eye(n);
        let mut term = Array2::eye(n);
        for m in 1..=30 {
            term = term.dot(&scaled) / m as f64;
            acc += &term;
        }
        let mut out = acc;
        for _ in 0..k {
            out = out.dot(&out);
        }
        out
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let n = rng.random_range(2..=20);
        let s = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0));
        let fast = acyclicity_value(&s).unwrap();
        let oracle = expm_scaling_squaring(&s).diag().sum() - n as f64;
        assert!(
            (fast - oracle).abs() <= 1e-8,
            "case {case}: n={n} fast={fast} oracle={oracle}"
        );
    }
}
