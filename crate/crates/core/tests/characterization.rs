use paragate::characterization::superop::gates;
use paragate::characterization::tomography::{outcome_fraction, PauliBasis, PrepState};
use paragate::characterization::*;
use paragate::linalg::{frobenius, identity, vec_cols, CMat};
use rand::Rng;

fn setting_id(s: &TomographySettings, prep: [PrepState; 2], meas: [PauliBasis; 2]) -> usize {
    let j = s.preparations.iter().position(|p| *p == prep).unwrap();
    let m = s.measurements.iter().position(|p| *p == meas).unwrap();
    j * s.measurements.len() + m
}

const ZZ: [PauliBasis; 2] = [PauliBasis::Z, PauliBasis::Z];

#[test]
fn identity_channel_with_perfect_readout_reports_prepared_state() {
    let s = TomographySettings::standard();
    let data =
        synthesize_tomography_data(&Superoperator::identity(4), &s, 500, &ConfusionMatrix::perfect(), 1).unwrap();
    assert_eq!(data.counts[setting_id(&s, [PrepState::Zero, PrepState::Zero], ZZ)], [500, 0, 0, 0]);
}

#[test]
fn readout_errors_multiply_for_the_ground_state() {
    let s = TomographySettings::standard();
    let conf = ConfusionMatrix::from_fidelities(0.85, 0.92).unwrap();
    let shots = 100_000;
    let data = synthesize_tomography_data(&Superoperator::identity(4), &s, shots, &conf, 2).unwrap();
    let f = outcome_fraction(&data, setting_id(&s, [PrepState::Zero, PrepState::Zero], ZZ), 0);
    let p = 0.85 * 0.92;
    let sigma = (p * (1.0 - p) / shots as f64).sqrt();
    assert!((f - p).abs() < 4.0 * sigma, "{f} vs {p}");
}

#[test]
fn iswap_moves_the_excitation() {
    let s = TomographySettings::standard();
    let ch = Superoperator::from_unitary(&gates::iswap());
    let data = synthesize_tomography_data(&ch, &s, 300, &ConfusionMatrix::perfect(), 3).unwrap();
    assert_eq!(data.counts[setting_id(&s, [PrepState::One, PrepState::Zero], ZZ)], [0, 300, 0, 0]);
}

#[test]
fn incomplete_settings_are_rejected() {
    let mut s = TomographySettings::standard();
    s.measurements.retain(|m| m[0] == PauliBasis::Z);
    let err = synthesize_tomography_data(&Superoperator::identity(4), &s, 10, &ConfusionMatrix::perfect(), 0);
    assert!(err.is_err());
    let mut s = TomographySettings::standard();
    s.preparations.retain(|p| p[1] != PrepState::PlusI);
    assert!(s.validate().is_err());
}

#[test]
fn sampling_is_seed_deterministic() {
    let s = TomographySettings::standard();
    let ch = Superoperator::depolarizing(4, 0.8);
    let conf = ConfusionMatrix::from_fidelities(0.9, 0.95).unwrap();
    let a = synthesize_tomography_data(&ch, &s, 1000, &conf, 42).unwrap();
    let b = synthesize_tomography_data(&ch, &s, 1000, &conf, 42).unwrap();
    let c = synthesize_tomography_data(&ch, &s, 1000, &conf, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("setting_id,prep_label,meas_label,outcome,count\n0,00,XX,00,"));
    assert_eq!(text.lines().count(), 1 + 144 * 4);
}

fn qpt(
    channel: &Superoperator,
    target: &CMat,
    shots: u64,
    conf: ConfusionMatrix,
    compensate: bool,
    seed: u64,
) -> QptOutcome {
    let cfg = QptConfig { shots, confusion: conf, compensate, seed, mle: MleOptions::default() };
    run_qpt(channel, target, &cfg).unwrap().1
}

#[test]
fn mle_recovers_ideal_cz() {
    let cz = Superoperator::from_unitary(&gates::cz());
    let q = qpt(&cz, &gates::cz(), 10_000, ConfusionMatrix::perfect(), true, 5);
    assert!(q.fidelity >= 0.99, "{}", q.fidelity);
    assert!(q.reconstruction.channel.min_choi_eigenvalue() > -1e-7);
    assert!(q.reconstruction.channel.trace_defect() < 1e-8);
}

#[test]
fn readout_compensation_matters() {
    let cz = Superoperator::from_unitary(&gates::cz());
    let conf = ConfusionMatrix::from_fidelities(0.85, 0.92).unwrap();
    let on = qpt(&cz, &gates::cz(), 10_000, conf.clone(), true, 6);
    let off = qpt(&cz, &gates::cz(), 10_000, conf, false, 6);
    assert!(on.fidelity >= 0.98, "{}", on.fidelity);
    assert!(off.fidelity < on.fidelity - 0.1, "{} vs {}", off.fidelity, on.fidelity);
}

#[test]
fn fully_depolarizing_channel_reconstructs_as_maximally_mixed() {
    let dep = Superoperator::depolarizing(4, 0.0);
    let q = qpt(&dep, &identity(4), 10_000, ConfusionMatrix::perfect(), true, 7);
    assert!((q.fidelity - 0.25).abs() < 0.01, "{}", q.fidelity);
    let id = vec_cols(&identity(4));
    let expected = CMat::from_fn(16, 16, |r, c| id[r] * id[c] / 4.0);
    let worst = (&q.reconstruction.channel.liouville - expected).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(worst < 0.03, "{worst}");
}

#[test]
fn estimator_error_shrinks_with_shots() {
    let truth = Superoperator::depolarizing(4, 0.9).compose(&Superoperator::from_unitary(&gates::cz()));
    let f_true = average_gate_fidelity(&truth, &gates::cz()).unwrap();
    let err = |shots| {
        (0..3)
            .map(|seed| {
                (qpt(&truth, &gates::cz(), shots, ConfusionMatrix::perfect(), true, 100 + seed).fidelity - f_true).abs()
            })
            .sum::<f64>()
            / 3.0
    };
    let (e2, e3, e4) = (err(100), err(1000), err(10_000));
    assert!(e4 < e2, "{e2} {e3} {e4}");
    assert!(e4 < 0.01);
}

#[test]
fn fidelity_formula_limits() {
    let u = gates::iswap();
    assert!((average_gate_fidelity(&Superoperator::from_unitary(&u), &u).unwrap() - 1.0).abs() < 1e-14);
    // the output never depends on the input, so tr[(U* (x) U)^dag E] = 1
    let dep = Superoperator::depolarizing(4, 0.0);
    assert!((average_gate_fidelity(&dep, &u).unwrap() - 0.25).abs() < 1e-14);
    let e = Superoperator::depolarizing(4, 0.7).compose(&Superoperator::from_unitary(&u));
    let f = average_gate_fidelity(&e, &u).unwrap();
    let g = average_gate_fidelity(&e, &u.map(|z| z * num_complex::Complex64::from_polar(1.0, 0.77))).unwrap();
    assert!((f - g).abs() < 1e-12);
}

#[test]
fn bounds_of_unitary_and_depolarizing_channels() {
    let b = unitarity_bounds(&Superoperator::from_unitary(&gates::iswap())).unwrap();
    assert!((b.procrustean - 1.0).abs() < 1e-12 && (b.interferometric - 1.0).abs() < 1e-12);
    for p in [0.0, 0.2, 0.5, 0.8, 1.0] {
        let b = unitarity_bounds(&Superoperator::depolarizing(4, p)).unwrap();
        // singular values: 1 once, p fifteen times
        let closed = (1.0 + 15.0 * p + 4.0) / 20.0;
        assert!((b.procrustean - closed).abs() < 1e-12);
    }
    // strictly decreasing in the depolarizing strength 1 - p
    let strengths: Vec<f64> = [1.0, 0.8, 0.5, 0.2, 0.0]
        .iter()
        .map(|&p| unitarity_bounds(&Superoperator::depolarizing(4, p)).unwrap().procrustean)
        .collect();
    assert!(strengths.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn degenerate_kraus_weights_are_flagged() {
    // equal mixture of two Hilbert-Schmidt orthogonal unitaries
    let a = Superoperator::from_unitary(&gates::cz());
    let b = Superoperator::from_unitary(&gates::iswap());
    let mix = Superoperator::from_liouville((&a.liouville + &b.liouville).scale(0.5), true, true).unwrap();
    let b1 = unitarity_bounds(&mix).unwrap();
    let b2 = unitarity_bounds(&mix).unwrap();
    assert!(b1.leading_kraus_tie);
    assert_eq!(b1, b2);
}

#[test]
fn reconstructions_respect_bound_ordering() {
    let conf = ConfusionMatrix::from_fidelities(0.85, 0.92).unwrap();
    for (k, p) in [0.95, 0.85, 0.7].into_iter().enumerate() {
        let truth = Superoperator::depolarizing(4, p).compose(&Superoperator::from_unitary(&gates::iswap()));
        let q = qpt(&truth, &gates::iswap(), 10_000, conf.clone(), true, 20 + k as u64);
        assert!(q.fidelity <= q.bounds.procrustean + 2e-3, "{} > {}", q.fidelity, q.bounds.procrustean);
        assert!(q.reconstruction.channel.min_choi_eigenvalue() > -1e-7);
    }
}

#[test]
fn clifford_random_walk_stays_in_the_group() {
    let g = CliffordGroup::two_qubit();
    let mut rng = paragate::characterization::tomography::task_rng(9, 0);
    let mut k = g.find(&identity(4)).unwrap();
    let mut u = identity(4);
    for _ in 0..1000 {
        let j = rng.gen_range(0..g.len());
        k = g.compose(k, j);
        u = &g.elements[j].unitary * u;
        assert_eq!(g.find(&u), Some(k));
    }
}

#[test]
fn compiled_cliffords_match_their_unitaries() {
    let g = CliffordGroup::two_qubit();
    for e in g.elements.iter().step_by(97) {
        let mut u = identity(4);
        for op in &e.ops {
            u = match op {
                NativeOp::Local(m) => m * u,
                NativeOp::Entangler(Native::Iswap) => gates::iswap() * u,
                NativeOp::Entangler(Native::Cz) => gates::cz() * u,
            };
        }
        assert!(frobenius(&(u - &e.unitary)) < 1e-12);
    }
}

fn interleaved(eps: f64) -> InterleavedGate {
    let u = gates::iswap();
    let channel = Superoperator::depolarizing_with_infidelity(4, eps).compose(&Superoperator::from_unitary(&u));
    InterleavedGate { name: "iswap".into(), channel, target: u }
}

#[test]
fn noiseless_irb_does_not_decay() {
    let g = CliffordGroup::two_qubit();
    let cfg = RbConfig { sequences_per_length: 5, shots: None, ..Default::default() };
    let rb = run_irb(&g, &NativeGates::ideal(), Some(&interleaved(0.0)), &cfg).unwrap();
    assert!((rb.fit_reference.p - 1.0).abs() < 1e-9);
    assert!(rb.irb_fidelity().unwrap() >= 0.999);
}

#[test]
fn irb_recovers_injected_error() {
    let g = CliffordGroup::two_qubit();
    for (k, eps) in [0.02, 0.1].into_iter().enumerate() {
        let cfg = RbConfig { seed: 50 + k as u64, ..Default::default() };
        let rb = run_irb(&g, &NativeGates::ideal(), Some(&interleaved(eps)), &cfg).unwrap();
        let est = 1.0 - rb.irb_fidelity().unwrap();
        assert!((est - eps).abs() <= 0.2 * eps, "{eps}: {est}");
    }
}

#[test]
fn rb_survival_csv_and_config_checks() {
    let g = CliffordGroup::two_qubit();
    let cfg =
        RbConfig { lengths: vec![1, 3], sequences_per_length: 2, shots: Some(100), seed: 1, bootstrap_samples: 0 };
    let natives = NativeGates {
        iswap: Superoperator::depolarizing(4, 0.9).compose(&Superoperator::from_unitary(&gates::iswap())),
        cz: Superoperator::from_unitary(&gates::cz()),
    };
    let rb = run_irb(&g, &natives, None, &cfg).unwrap();
    let mut csv = Vec::new();
    rb.write_csv(false, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("length,sequence_index,survival\n1,0,"));
    let bad = RbConfig { lengths: vec![4, 2], ..Default::default() };
    assert!(run_irb(&g, &natives, None, &bad).is_err());
    let bad = RbConfig { shots: Some(0), ..Default::default() };
    assert!(run_irb(&g, &natives, None, &bad).is_err());
}

#[test]
fn report_uses_table_row_names() {
    let r = FidelityReport {
        gate: "cz02".into(),
        qpt_fidelity: Some(0.92),
        unitarity_bound: Some(0.945),
        ..Default::default()
    };
    let v = serde_json::to_value(&r).unwrap();
    assert_eq!(v["QPT fidelity"], 0.92);
    assert_eq!(v["unitarity bound"], 0.945);
    r.validate().unwrap();
    let bad = FidelityReport { irb_fidelity: Some(1.5), ..Default::default() };
    assert!(bad.validate().is_err());
}
