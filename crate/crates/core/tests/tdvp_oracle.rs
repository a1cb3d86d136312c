use bubbles_core::hamiltonian::OneSiteTerm;
use bubbles_core::oracle::{evolve_exact, DenseState, ExactOptions};
use bubbles_core::{build_terms, hilbert_ordering, IsingParams, LatticeGeometry, Pauli, ShapeMask, SiteOrdering, TdvpConfig, TdvpEngine, TermList, TreeState};
use faer::c64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(dt: f64, chi: usize) -> TdvpConfig {
    TdvpConfig {
        dt,
        chi,
        ..TdvpConfig::default()
    }
}

fn mask_of(g: &LatticeGeometry, sites: &[usize]) -> ShapeMask {
    ShapeMask::from_sites(g, sites.iter().map(|&s| g.coord(s))).unwrap()
}

fn fidelity(a: &[c64], b: &[c64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (c64::new(0.0, 0.0), 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x.conj() * y;
        aa += x.norm_sqr();
        bb += y.norm_sqr();
    }
    ab.norm_sqr() / (aa * bb)
}

#[test]
fn two_by_two_matches_exact_evolution() {
    let g = LatticeGeometry::new(2, 2).unwrap();
    let ord = hilbert_ordering(&g).unwrap();
    let terms = build_terms(&g, &IsingParams::default());
    let mask = mask_of(&g, &[0, 3]);
    let state = TreeState::product_state(&ord, &mask, 4).unwrap();
    let mut engine = TdvpEngine::new(state, &terms, cfg(0.05, 4)).unwrap();
    let times: Vec<f64> = (1..=40).map(|k| k as f64 * 0.05).collect();
    let exact = evolve_exact(&DenseState::product(&mask).unwrap(), &terms, &times, &ExactOptions::default()).unwrap();
    for ex in &exact {
        engine.step().unwrap();
        let psi = engine.state().flatten().unwrap();
        assert!(1.0 - fidelity(&psi, ex.amplitudes()) < 1e-10);
        assert!((engine.state().average_x() - ex.average_x()).abs() < 1e-9);
    }
}

#[test]
fn random_state_on_rectangle_matches_exact() {
    let g = LatticeGeometry::new(4, 2).unwrap();
    let ord = SiteOrdering::row_major(&g);
    let terms = build_terms(&g, &IsingParams::new(1.0, 1.7, -0.3).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let state = TreeState::random(&ord, 16, &mut rng).unwrap();
    let psi0 = DenseState::from_amplitudes(8, state.flatten().unwrap()).unwrap();
    let mut engine = TdvpEngine::new(state, &terms, cfg(0.1, 16)).unwrap();
    let times: Vec<f64> = (1..=10).map(|k| k as f64 * 0.1).collect();
    let exact = evolve_exact(&psi0, &terms, &times, &ExactOptions::default()).unwrap();
    for ex in &exact {
        engine.step().unwrap();
        assert!(1.0 - fidelity(&engine.state().flatten().unwrap(), ex.amplitudes()) < 1e-10);
    }
}

#[test]
fn zero_hamiltonian_leaves_state_unchanged() {
    let g = LatticeGeometry::new(4, 4).unwrap();
    let ord = hilbert_ordering(&g).unwrap();
    let terms = TermList {
        num_sites: 16,
        one_site: vec![],
        two_site: vec![],
    };
    let mask = mask_of(&g, &[5, 6, 9, 10]);
    let state = TreeState::product_state(&ord, &mask, 8).unwrap();
    let before = state.local_x();
    let mut engine = TdvpEngine::new(state, &terms, cfg(0.1, 8)).unwrap();
    for _ in 0..5 {
        engine.step().unwrap();
    }
    for (a, b) in engine.state().local_x().iter().zip(&before) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn x_eigenstate_is_stationary_without_transverse_field() {
    // With h_perp = 0 every X-basis product state is an eigenstate.
    let g = LatticeGeometry::new(4, 4).unwrap();
    let ord = hilbert_ordering(&g).unwrap();
    let terms = build_terms(&g, &IsingParams::new(1.0, 0.0, -0.15).unwrap());
    let mask = mask_of(&g, &[5, 6, 9]);
    let state = TreeState::product_state(&ord, &mask, 8).unwrap();
    let before = state.local_x();
    let e0 = state.energy(&terms).unwrap();
    let mut engine = TdvpEngine::new(state, &terms, cfg(0.1, 8)).unwrap();
    for _ in 0..5 {
        engine.step().unwrap();
    }
    assert!((engine.energy() - e0).abs() < 1e-10);
    for (a, b) in engine.state().local_x().iter().zip(&before) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn environments_agree_at_every_node() {
    let g = LatticeGeometry::new(4, 4).unwrap();
    let ord = hilbert_ordering(&g).unwrap();
    let terms = build_terms(&g, &IsingParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let state = TreeState::random(&ord, 6, &mut rng).unwrap();
    let reference = state.energy(&terms).unwrap();
    let mut engine = TdvpEngine::new(state, &terms, cfg(0.05, 6)).unwrap();
    for e in engine.energies_at_all_nodes().unwrap() {
        assert!((e - reference).abs() < 1e-9, "{e} vs {reference}");
    }
    engine.step().unwrap();
    let after = engine.state().energy(&terms).unwrap();
    for e in engine.energies_at_all_nodes().unwrap() {
        assert!((e - after).abs() < 1e-9);
    }
}

#[test]
fn truncated_evolution_conserves_norm_and_energy() {
    let g = LatticeGeometry::new(4, 4).unwrap();
    let ord = hilbert_ordering(&g).unwrap();
    let terms = build_terms(&g, &IsingParams::default());
    let mask = mask_of(&g, &[5, 6, 9, 10]);
    let state = TreeState::product_state(&ord, &mask, 8).unwrap();
    let e0 = state.energy(&terms).unwrap();
    let mut engine = TdvpEngine::new(state, &terms, cfg(0.05, 8)).unwrap();
    for _ in 0..20 {
        let n = engine.step().unwrap();
        assert!((n - 1.0).abs() < 1e-9);
    }
    assert!((engine.accumulated_norm() - 1.0).abs() < 1e-8);
    assert!((engine.energy() - e0).abs() < 1e-8);
    assert!(engine.state().max_bond_dim() <= 8);
}

#[test]
fn single_field_term_precesses() {
    let g = LatticeGeometry::new(2, 2).unwrap();
    let ord = SiteOrdering::row_major(&g);
    let terms = TermList {
        num_sites: 4,
        one_site: vec![OneSiteTerm {
            site: 1,
            coef: -0.6,
            op: Pauli::Z,
        }],
        two_site: vec![],
    };
    let state = TreeState::product_state(&ord, &ShapeMask::empty(&g), 2).unwrap();
    let mut engine = TdvpEngine::new(state, &terms, cfg(0.1, 4)).unwrap();
    for k in 1..=10 {
        engine.step().unwrap();
        let x = engine.state().local_x();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[2] - 1.0).abs() < 1e-12);
        assert!((x[1] - (1.2 * 0.1 * k as f64).cos()).abs() < 1e-10);
    }
}
