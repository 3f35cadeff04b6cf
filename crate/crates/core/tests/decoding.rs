use proptest::prelude::*;
use sjd_core::oracle::{collect, gof_test, tv_to_exact};
use sjd_core::{
    enumerate_sequence_distribution, CouplerKind, Decoder, ModelSpec, RandomSource, RejectionMode,
    SamplingParams, SjdConfig, TabularModel,
};

fn coupler() -> impl Strategy<Value = CouplerKind> {
    prop_oneof![
        Just(CouplerKind::Independent),
        Just(CouplerKind::MaximalCoupling),
        Just(CouplerKind::GumbelSharing)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decode_invariants(
        vocab in 1usize..12,
        order in 0usize..3,
        flatness in 0.2f64..5.0,
        len in 0usize..40,
        window in 1usize..12,
        kind in coupler(),
        redraft in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let model = TabularModel::from_spec(&ModelSpec { vocab_size: vocab, context_order: order, flatness, seed, ..Default::default() }).unwrap();
        let rejection = if redraft { RejectionMode::Redraft } else { RejectionMode::Finalize };
        let cfg = SjdConfig::new(window, kind).with_rejection(rejection);
        let rng = RandomSource::new(seed);
        let (seq, stats) = Decoder::Jacobi(cfg).decode(&model, &SamplingParams::default(), len, &rng).unwrap();
        prop_assert_eq!(seq.len(), len);
        prop_assert!(seq.iter().all(|&t| t < vocab));
        prop_assert_eq!(stats.iterations.iter().map(|it| it.accepted).sum::<usize>(), len);
        prop_assert!(stats.nfe >= len.div_ceil(window));
        if rejection == RejectionMode::Finalize {
            prop_assert!(stats.nfe <= len);
        }
        for b in stats.beta_trajectories.iter().flatten() {
            prop_assert!((0.0..=1.0 + 1e-12).contains(b));
        }
        let again = Decoder::Jacobi(cfg).decode(&model, &SamplingParams::default(), len, &rng).unwrap();
        prop_assert_eq!(again.0, seq);
    }

    #[test]
    fn greedy_output_is_decoder_independent(
        vocab in 2usize..10,
        len in 1usize..30,
        window in 1usize..10,
        kind in coupler(),
        seed in any::<u64>(),
    ) {
        let model = TabularModel::from_spec(&ModelSpec { vocab_size: vocab, seed, ..Default::default() }).unwrap();
        let greedy = SamplingParams::greedy();
        let rng = RandomSource::new(seed);
        let (want, _) = Decoder::Vanilla.decode(&model, &greedy, len, &rng).unwrap();
        let (got, _) = Decoder::Jacobi(SjdConfig::new(window, kind)).decode(&model, &greedy, len, &rng).unwrap();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn output_law_matches_enumeration_across_models() {
    // Several models, windows and samplers; each decoder's empirical law
    // must pass the goodness-of-fit test against the exact law.
    let cases = [
        (3, 1, 1.0, 4, 2, SamplingParams::default()),
        (2, 2, 0.5, 5, 3, SamplingParams::default()),
        (
            3,
            0,
            2.0,
            4,
            4,
            SamplingParams {
                temperature: 0.7,
                ..SamplingParams::default()
            },
        ),
        (
            4,
            1,
            1.0,
            3,
            2,
            SamplingParams {
                top_k: Some(2),
                ..SamplingParams::default()
            },
        ),
        (
            3,
            1,
            1.0,
            4,
            3,
            SamplingParams {
                cfg_scale: 1.5,
                ..SamplingParams::default()
            },
        ),
    ];
    for (i, (vocab, order, flatness, len, window, sampling)) in cases.into_iter().enumerate() {
        let model = TabularModel::from_spec(&ModelSpec {
            vocab_size: vocab,
            context_order: order,
            flatness,
            seed: i as u64,
            ..Default::default()
        })
        .unwrap();
        let exact = enumerate_sequence_distribution(&model, &sampling, len).unwrap();
        for kind in CouplerKind::ALL {
            for rejection in [RejectionMode::Finalize, RejectionMode::Redraft] {
                let decoder =
                    Decoder::Jacobi(SjdConfig::new(window, kind).with_rejection(rejection));
                let emp = collect(
                    &model,
                    &sampling,
                    &decoder,
                    len,
                    40_000,
                    &RandomSource::new(100 + i as u64),
                )
                .unwrap();
                let report = gof_test(&emp, &exact);
                assert!(
                    report.passed,
                    "case {i} {}: {report} tv={}",
                    decoder.label(),
                    tv_to_exact(&emp, &exact)
                );
            }
        }
    }
}
