use bubbles_core::experiment::{
    classify_fate, read_series_csv, read_snapshot_csv, write_series_csv, write_snapshot_csv, Fate, Snapshot,
};
use bubbles_core::oracle::{evolve_exact, DenseState, ExactOptions};
use bubbles_core::tdvp::Sample;
use bubbles_core::{
    build_terms, classical_energy, hilbert_ordering, IsingParams, LatticeGeometry, ShapeMask, SiteOrdering, TreeState,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mask_strategy(w: usize, h: usize) -> impl Strategy<Value = ShapeMask> {
    prop::collection::vec(any::<bool>(), w * h)
        .prop_map(move |cells| ShapeMask::from_cells(&LatticeGeometry::new(w, h).unwrap(), cells).unwrap())
}

fn brute_bond_perimeter(m: &ShapeMask) -> usize {
    let g = m.geometry();
    g.bonds().iter().filter(|&&(a, b)| m.is_set(a) != m.is_set(b)).count()
}

fn sample(t: f64, v: [f64; 4]) -> Sample {
    Sample {
        t,
        avg_x: v[0],
        energy: v[1],
        norm: v[2],
        max_entropy: v[3],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fate_is_antisymmetric(values in prop::collection::vec(-1.0f64..1.0, 2..40), frac in 0.05f64..1.0, threshold in 0.0f64..0.5) {
        let n = values.len();
        let series: Vec<Sample> = values.iter().enumerate().map(|(k, &v)| sample(k as f64 * 0.1, [v, 0.0, 1.0, 0.0])).collect();
        let negated: Vec<Sample> = series.iter().map(|s| Sample { avg_x: -s.avg_x, ..*s }).collect();
        let window = frac * (n - 1) as f64 * 0.1;
        let a = classify_fate(&series, window, threshold).unwrap();
        let b = classify_fate(&negated, window, threshold).unwrap();
        prop_assert_eq!(b.fate, a.fate.negated());
        prop_assert_eq!(b.window_mean, -a.window_mean);
    }

    #[test]
    fn constant_series_fate(v in -1.0f64..1.0) {
        prop_assume!((v.abs() - 0.1).abs() > 1e-12);
        let series: Vec<Sample> = (0..11).map(|k| sample(k as f64, [v, 0.0, 1.0, 0.0])).collect();
        let fate = classify_fate(&series, 2.0, 0.1).unwrap().fate;
        let expected = if v > 0.1 { Fate::Shrinking } else if v < -0.1 { Fate::Expanding } else { Fate::Undecided };
        prop_assert_eq!(fate, expected);
    }

    #[test]
    fn series_files_round_trip(rows in prop::collection::vec((any::<f64>(), any::<[f64; 4]>()), 0..20)) {
        let series: Vec<Sample> = rows.iter().map(|&(t, v)| sample(t, v)).filter(|s| {
            [s.t, s.avg_x, s.energy, s.norm, s.max_entropy].iter().all(|x| x.is_finite())
        }).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("series.csv");
        write_series_csv(&p, &series).unwrap();
        let back = read_series_csv(&p).unwrap();
        prop_assert_eq!(back.len(), series.len());
        for (a, b) in back.iter().zip(&series) {
            for (x, y) in [(a.t, b.t), (a.avg_x, b.avg_x), (a.energy, b.energy), (a.norm, b.norm), (a.max_entropy, b.max_entropy)] {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn snapshot_files_round_trip(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let snap = Snapshot { t: 1.25, width: w, height: h, values: (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_snapshot_csv(&p, &snap).unwrap();
        prop_assert_eq!(read_snapshot_csv(&p, 1.25).unwrap(), snap);
    }

    #[test]
    fn perimeters_are_symmetric(m in mask_strategy(8, 8)) {
        let pb = m.bond_perimeter();
        prop_assert_eq!(pb, brute_bond_perimeter(&m));
        prop_assert_eq!(m.complement().bond_perimeter(), pb);
        let r = m.rotate90();
        prop_assert_eq!((r.area(), r.bond_perimeter(), r.site_perimeter()), (m.area(), pb, m.site_perimeter()));
        let f = m.reflect_x();
        prop_assert_eq!((f.area(), f.bond_perimeter(), f.site_perimeter()), (m.area(), pb, m.site_perimeter()));
        prop_assert_eq!(m.rotate90().rotate90().rotate90().rotate90(), m.clone());
        for moved in m.corner_moves() {
            prop_assert_eq!(moved.bond_perimeter(), pb);
        }
    }

    #[test]
    fn classical_energy_matches_the_product_state(m in mask_strategy(4, 2), h_par in -0.5f64..0.5) {
        let params = IsingParams::new(1.0, 0.0, h_par).unwrap();
        let terms = build_terms(&m.geometry(), &params);
        let psi = DenseState::product(&m).unwrap();
        prop_assert!((psi.energy(&terms).unwrap() - classical_energy(&m, &params)).abs() < 1e-10);
    }

    #[test]
    fn exact_evolution_is_unitary(h_perp in 0.0f64..3.0, h_par in -0.5f64..0.5, m in mask_strategy(2, 4)) {
        let params = IsingParams::new(1.0, h_perp, h_par).unwrap();
        let terms = build_terms(&m.geometry(), &params);
        let psi0 = DenseState::product(&m).unwrap();
        let e0 = psi0.energy(&terms).unwrap();
        let out = evolve_exact(&psi0, &terms, &[0.7, 1.9], &ExactOptions::default()).unwrap();
        for psi in &out {
            prop_assert!((psi.norm() - 1.0).abs() < 1e-10);
            prop_assert!((psi.energy(&terms).unwrap() - e0).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gauge_moves_do_not_change_the_state(seed in any::<u64>(), chi in 1usize..9, target in 1usize..8) {
        let g = LatticeGeometry::new(4, 2).unwrap();
        let ord = SiteOrdering::row_major(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = TreeState::random(&ord, chi, &mut rng).unwrap();
        let before = state.flatten().unwrap();
        let x = state.local_x();
        state.move_center(target).unwrap();
        prop_assert_eq!(state.center(), target);
        prop_assert!(state.isometry_defect() < 1e-10);
        let after = state.flatten().unwrap();
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).norm() < 1e-10);
        }
        for (a, b) in x.iter().zip(state.local_x()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn hilbert_path_is_a_nearest_neighbor_walk(k in 1u32..5) {
        let n = 1usize << k;
        let g = LatticeGeometry::new(n, n).unwrap();
        let ord = hilbert_ordering(&g).unwrap();
        let mut seen = vec![false; n * n];
        for leaf in 0..n * n {
            let s = ord.site_of_leaf(leaf);
            prop_assert!(!seen[s]);
            seen[s] = true;
            prop_assert_eq!(ord.leaf_of_site(s), leaf);
            if leaf > 0 {
                prop_assert_eq!(ord.to_grid(leaf - 1).manhattan(ord.to_grid(leaf)), 1);
            }
        }
    }
}
