use std::collections::BTreeSet;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kagome_gibbs::analysis::{
    mixing_time, reset_beta_star, triangle_zz, zne_fit, ObservableSeries, PairTable, SeriesMeta, ZneKind, ZneModel,
    ZnePoint,
};
use kagome_gibbs::channel::{filter_values, run_ensemble, ChannelConfig, EnsembleOptions, NoiseSpec, TrotterOrder};
use kagome_gibbs::hexcompile::{
    embed_kagome, fold_for_zne, schedule_trotter_step, GateSchedule, Orientations, ALL_LABELINGS,
};
use kagome_gibbs::lattice::{build_kagome, KagomeSpec};
use kagome_gibbs::operators::{
    build_tfim_chain, Axis, HamiltonianTerms, InitialKind, JumpFamily, PauliString, SpinModel, TermGroup,
};
use kagome_gibbs::oracle::{channel_superoperator, dense_hamiltonian, SuperopOptions};
use kagome_gibbs::statevec::StateVector;

fn axis() -> impl Strategy<Value = Axis> {
    prop_oneof![Just(Axis::X), Just(Axis::Y), Just(Axis::Z)]
}

fn pauli(n: usize) -> impl Strategy<Value = PauliString> {
    (-2.0..2.0f64, prop::collection::btree_map(0..n, axis(), 1..=n)).prop_map(|(c, f)| PauliString::new(c, f))
}

fn chain_config(beta: f64, noise: NoiseSpec) -> ChannelConfig {
    ChannelConfig {
        alpha: 1.0,
        t_total: 1.0,
        dt: 0.25,
        sigma: 0.5,
        omega_max: 6.0,
        beta,
        n_env: 1,
        jump_family: JumpFamily::SinglePauliOnly,
        trotter: TrotterOrder::SecondOrder,
        noise,
        seed: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pauli_rotations_preserve_norm(seed in any::<u64>(), ops in prop::collection::vec((pauli(5), -3.0..3.0f64), 1..12)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = StateVector::random(5, &mut rng);
        for (p, angle) in &ops {
            s.apply_pauli_exp(p, *angle).unwrap();
        }
        prop_assert!((s.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measurement_keeps_unit_norm(seed in any::<u64>(), qubits in prop::collection::btree_set(0..5usize, 1..4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = StateVector::random(5, &mut rng);
        let q: Vec<usize> = qubits.into_iter().collect();
        s.measure_and_reset(&q, &mut rng).unwrap();
        prop_assert!((s.norm() - 1.0).abs() < 1e-12);
        for &k in &q {
            prop_assert!(s.prob_one(k) < 1e-12);
        }
    }

    #[test]
    fn pauli_sums_are_hermitian(seed in any::<u64>(), terms in prop::collection::vec(pauli(4), 1..8)) {
        let mut h = HamiltonianTerms::new();
        for p in terms {
            h.push(TermGroup::classify(&p), p);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = StateVector::random(4, &mut rng);
        let hv = s.apply_hamiltonian(&h).unwrap();
        let e: Complex64 = s.amplitudes().iter().zip(&hv).map(|(a, b)| a.conj() * b).sum();
        prop_assert!(e.im.abs() < 1e-10);
        prop_assert!((e.re - s.expectation(&h).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn real_hamiltonians_are_symmetric(n in 2..6usize, g in -2.0..2.0f64, periodic in any::<bool>()) {
        let h = build_tfim_chain(n, 1.0, g, periodic);
        let d = 1 << n;
        let a = dense_hamiltonian(&h, n).unwrap();
        for i in 0..d {
            for j in 0..i {
                prop_assert_eq!(a[i * d + j], a[j * d + i]);
            }
        }
    }

    #[test]
    fn filter_is_normalized(steps in 1..400usize, dt in 0.01..0.5f64, sigma in prop_oneof![Just(f64::INFINITY), 0.05..2.0f64]) {
        let t = steps as f64 * dt;
        let f = filter_values(t, dt, sigma).unwrap();
        prop_assert_eq!(f.len(), steps);
        let total: f64 = f.iter().map(|x| dt * x * x).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for k in 0..steps {
            prop_assert!((f[k] - f[steps - 1 - k]).abs() < 1e-9 * f[k].abs().max(1.0));
        }
    }

    #[test]
    fn zne_recovers_synthetic_exponentials(o in prop_oneof![-2.0..-0.05f64, 0.05..2.0f64], lambda in 0.01..1.0f64) {
        let points: Vec<ZnePoint> = [0.0, 0.25, 0.5, 1.0]
            .iter()
            .map(|&p| ZnePoint { p, value: o * (-lambda * (1.0 + 2.0 * p)).exp(), stderr: 1e-4 })
            .collect();
        let fit = zne_fit(&points, ZneModel::Exponential).unwrap();
        prop_assert_eq!(fit.kind, ZneKind::Exponential);
        prop_assert!((fit.value - o).abs() < 1e-8 * o.abs().max(1.0));
        prop_assert!((fit.rate - lambda).abs() < 1e-8);
    }

    #[test]
    fn triangle_correlator_is_flip_invariant(
        z in prop::array::uniform3(-1.0..1.0f64),
        zz in prop::array::uniform3(-1.0..1.0f64),
    ) {
        let mut pairs = PairTable::new();
        pairs.insert(0, 1, zz[0]);
        pairs.insert(1, 2, zz[1]);
        pairs.insert(0, 2, zz[2]);
        let flipped: Vec<f64> = z.iter().map(|v| -v).collect();
        let a = triangle_zz(&z, &pairs, [0, 1, 2]).unwrap();
        let b = triangle_zz(&flipped, &pairs, [2, 0, 1]).unwrap();
        prop_assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn mixing_time_is_monotone_in_threshold(
        steps in prop::collection::vec((0.0..0.1f64, 0.0..0.05f64), 3..40),
        t1 in 0.05..0.9f64,
        dt in 0.0..0.5f64,
    ) {
        let mut f = 0.0;
        let (mut mean, mut se) = (Vec::new(), Vec::new());
        for (df, s) in &steps {
            f = (f + df).min(1.0);
            mean.push(f);
            se.push(*s);
        }
        let x: Vec<f64> = (0..mean.len()).map(|i| (3 * i) as f64).collect();
        let meta = SeriesMeta { n_sys: 12, n_env: 1, beta: 1.0, model: "synthetic".into() };
        let series = ObservableSeries::new(x, mean, se, meta).unwrap();
        let lo = mixing_time(&series, t1, 1, 12).unwrap();
        let hi = mixing_time(&series, (t1 + dt).min(0.99), 1, 12).unwrap();
        prop_assert!(lo.tau <= hi.tau);
        prop_assert!(lo.lower <= lo.tau && lo.tau <= lo.upper);
    }

    #[test]
    fn perfect_reset_keeps_target(beta in 0.05..5.0f64, omega in 1.0..10.0f64) {
        let r = reset_beta_star([[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0], beta, omega).unwrap();
        prop_assert!(!r.negative_temperature);
        prop_assert!((r.beta_star - beta).abs() < 1e-6 * beta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn depth_is_stable_under_qubit_relabeling(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let lat = build_kagome(&KagomeSpec::periodic(2, 2)).unwrap();
        let (graph, emb) = embed_kagome(&lat, 4).unwrap();
        let orient = Orientations::canonical(&lat);
        let base = schedule_trotter_step(&lat, &emb, &orient).unwrap();
        let mut perm: Vec<usize> = (0..graph.n_qubits).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let moved = emb.relabel(&perm);
        moved.validate(&graph.relabel(&perm).unwrap(), &lat).unwrap();
        let step = schedule_trotter_step(&lat, &moved, &orient).unwrap();
        prop_assert_eq!(step.schedule.depth(), base.schedule.depth());
        prop_assert_eq!(step.zz_depth, base.zz_depth);
        prop_assert_eq!(step.zz_gates, base.zz_gates);
    }

    #[test]
    fn depth_respects_orientation_choice(seed in any::<u64>()) {
        use rand::seq::IndexedRandom;
        let lat = build_kagome(&KagomeSpec::periodic(2, 2)).unwrap();
        let (_, emb) = embed_kagome(&lat, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut orient = Orientations::canonical(&lat);
        for l in orient.up.iter_mut().chain(orient.down.iter_mut()) {
            *l = *ALL_LABELINGS.choose(&mut rng).unwrap();
        }
        let step = schedule_trotter_step(&lat, &emb, &orient).unwrap();
        prop_assert_eq!(step.zz_gates, 88);
        prop_assert!(step.zz_depth >= 17);
        step.schedule.validate().unwrap();
    }

    #[test]
    fn folding_is_valid(p in 0.0..1.0f64, seed in any::<u64>()) {
        let lat = build_kagome(&KagomeSpec::open(2, 1)).unwrap();
        let (graph, emb) = embed_kagome(&lat, 2).unwrap();
        let step = schedule_trotter_step(&lat, &emb, &Orientations::canonical(&lat)).unwrap();
        let folded = fold_for_zne(&step.schedule, p, seed).unwrap();
        folded.validate().unwrap();
        folded.check_couplings(&graph).unwrap();
        let extra = folded.gate_count() - step.schedule.gate_count();
        prop_assert_eq!(extra % 2, 0);
        prop_assert!(extra <= 2 * step.schedule.gate_count());
        prop_assert_eq!(fold_for_zne(&step.schedule, p, seed).unwrap(), folded);
        let again: GateSchedule = fold_for_zne(&step.schedule, 0.0, seed).unwrap();
        prop_assert_eq!(again.gate_count(), step.schedule.gate_count());
    }
}

#[test]
fn replay_is_deterministic() {
    let model = SpinModel::chain("tfim", 4, false, build_tfim_chain(4, 1.0, 1.5, false));
    let noise = NoiseSpec { local_depolarizing_rate: 0.05, ..NoiseSpec::default() };
    let cfg = chain_config(1.0, noise);
    let opts = |workers| EnsembleOptions {
        n_traj: 6,
        n_resets: 5,
        initial: InitialKind::RandomProduct,
        master_seed: 42,
        workers,
        retain_final_states: true,
    };
    let a = run_ensemble(&cfg, &model, &opts(1)).unwrap();
    let b = run_ensemble(&cfg, &model, &opts(3)).unwrap();
    assert_eq!(a.stats, b.stats);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.seed, y.seed);
        assert_eq!(x.rows, y.rows);
        assert_eq!(x.final_state, y.final_state);
    }
    let seeds: BTreeSet<u64> = a.records.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), 6);
}

#[test]
fn channel_maps_density_matrices_to_density_matrices() {
    let model = SpinModel::chain("tfim", 2, false, build_tfim_chain(2, 1.0, 0.7, false));
    let cfg = chain_config(2.0, NoiseSpec::default());
    let opts = SuperopOptions { batch: 8, min_batches: 2, max_samples: 64, rel_tol: 1.0, seed: 3 };
    let s = channel_superoperator(&cfg, &model, &opts).unwrap();
    assert!(s.trace_defect() < 1e-10);
    let d = s.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let psi = StateVector::random(2, &mut rng);
    let a = psi.amplitudes();
    let rho: Vec<Complex64> = (0..d * d).map(|k| a[k / d] * a[k % d].conj()).collect();
    let out = s.apply(&rho);
    let trace: Complex64 = (0..d).map(|i| out[i * d + i]).sum();
    assert!((trace - 1.0).norm() < 1e-10);
    for i in 0..d {
        assert!(out[i * d + i].re > -1e-12 && out[i * d + i].im.abs() < 1e-12);
        for j in 0..d {
            assert!((out[i * d + j] - out[j * d + i].conj()).norm() < 1e-12);
        }
    }
}
