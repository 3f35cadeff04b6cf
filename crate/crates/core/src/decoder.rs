//! Vanilla autoregressive decoding and speculative Jacobi decoding.
//!
//! The Jacobi engine keeps a window of at most `L` draft tokens past the
//! accepted prefix. Every iteration:
//!
//! 1. redraws each draft that has a fresh model distribution, using the
//!    configured [`CouplerKind`] to couple it with the previous draft;
//! 2. evaluates the whole window in one model call (one NFE);
//! 3. verifies left to right with modified rejection sampling, stopping at
//!    the first rejection;
//! 4. slides the window past every finalized token and tops it up with
//!    freshly initialized positions.
//!
//! Whatever the coupler, each draft is marginally distributed as its draft
//! distribution, so the finalized sequence has exactly the vanilla law.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::couplers::{gumbel_argmax, mrs, sample_gumbel_noise, sample_independent, GumbelVector};
use crate::error::{param, Result};
use crate::model::{target_distribution, target_window, ArModel, TokenSequence};
use crate::prob::{tv_distance, Categorical, SamplingParams, Token};
use crate::rng::RandomSource;

const STREAM_DRAFT: u64 = 1;
const STREAM_VERIFY: u64 = 2;
const STREAM_GUMBEL: u64 = 3;
const STREAM_VANILLA: u64 = 4;

/// How a draft token is redrawn from its new distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CouplerKind {
    /// Fresh independent draw (standard SJD).
    #[serde(rename = "independent")]
    Independent,
    /// Modified rejection sampling against the previous draft.
    #[serde(rename = "maximal")]
    MaximalCoupling,
    /// Gumbel-max with noise fixed per position.
    #[serde(rename = "gumbel")]
    GumbelSharing,
}

impl CouplerKind {
    pub const ALL: [CouplerKind; 3] = [
        Self::Independent,
        Self::MaximalCoupling,
        Self::GumbelSharing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Independent => "independent",
            Self::MaximalCoupling => "maximal",
            Self::GumbelSharing => "gumbel",
        }
    }
}

/// What happens to the residual token drawn at the first rejection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RejectionMode {
    /// Emit it and start the next window after it.
    #[default]
    Finalize,
    /// Keep it as the draft of the same position and verify it again next
    /// iteration (where it is accepted with certainty).
    Redraft,
}

/// Deliberate verifier defects, used to prove the losslessness checks have
/// detection power.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyFault {
    #[default]
    None,
    /// On rejection, draw from the target law instead of the residual.
    SkipResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SjdConfig {
    pub window: usize,
    pub coupler: CouplerKind,
    pub rejection: RejectionMode,
    #[doc(hidden)]
    pub fault: VerifyFault,
}

impl SjdConfig {
    pub fn new(window: usize, coupler: CouplerKind) -> Self {
        Self {
            window,
            coupler,
            rejection: RejectionMode::Finalize,
            fault: VerifyFault::None,
        }
    }

    pub fn with_rejection(mut self, rejection: RejectionMode) -> Self {
        self.rejection = rejection;
        self
    }
}

/// Either decoder, as selected by configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoder {
    Vanilla,
    Jacobi(SjdConfig),
}

impl Decoder {
    pub fn decode<M: ArModel + ?Sized>(
        &self,
        model: &M,
        sampling: &SamplingParams,
        len: usize,
        rng: &RandomSource,
    ) -> Result<(TokenSequence, DecodeStats)> {
        match self {
            Decoder::Vanilla => decode_vanilla(model, sampling, len, rng),
            Decoder::Jacobi(cfg) => decode_sjd(model, sampling, len, cfg, rng),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Decoder::Vanilla => "vanilla".to_string(),
            Decoder::Jacobi(cfg) => {
                let mut s = cfg.coupler.name().to_string();
                if cfg.rejection == RejectionMode::Redraft {
                    s.push_str("+redraft");
                }
                if cfg.fault != VerifyFault::None {
                    s.push_str("+faulty");
                }
                s
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationStats {
    /// Tokens finalized by this iteration.
    pub accepted: usize,
    /// Drafts that changed versus the previous iteration, if any position
    /// could be compared.
    pub hamming: Option<usize>,
    /// Positions compared for `hamming`.
    pub compared: usize,
    /// `(position, β)` for every window position with two evaluated laws.
    pub betas: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodeStats {
    pub nfe: usize,
    pub iterations: Vec<IterationStats>,
    /// `beta_trajectories[i]` lists `1 − TV(p_i^t, p_i^{t−1})` over iterations.
    pub beta_trajectories: Vec<Vec<f64>>,
    pub total_tokens: usize,
}

impl DecodeStats {
    pub fn accepted_per_iteration(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.total_tokens as f64 / self.iterations.len() as f64
    }

    /// Mean over iterations that had comparable drafts; `None` if none did.
    pub fn mean_hamming(&self) -> Option<f64> {
        let recorded: Vec<usize> = self.iterations.iter().filter_map(|it| it.hamming).collect();
        if recorded.is_empty() {
            return None;
        }
        Some(recorded.iter().sum::<usize>() as f64 / recorded.len() as f64)
    }

    pub fn mean_beta(&self) -> Option<f64> {
        let all: Vec<f64> = self.beta_trajectories.iter().flatten().copied().collect();
        if all.is_empty() {
            return None;
        }
        Some(all.iter().sum::<f64>() / all.len() as f64)
    }
}

/// Standard one-token-per-call sampling.
pub fn decode_vanilla<M: ArModel + ?Sized>(
    model: &M,
    sampling: &SamplingParams,
    len: usize,
    rng: &RandomSource,
) -> Result<(TokenSequence, DecodeStats)> {
    sampling.validate(model.vocab_size())?;
    let streams = rng.derive(STREAM_VANILLA);
    let mut seq = Vec::with_capacity(len);
    let mut stats = DecodeStats {
        total_tokens: len,
        beta_trajectories: vec![Vec::new(); len],
        ..Default::default()
    };
    for i in 0..len {
        let p = target_distribution(model, &seq, sampling)?;
        stats.nfe += 1;
        seq.push(sample_independent(&p, &mut streams.derive(i as u64)));
        stats.iterations.push(IterationStats {
            accepted: 1,
            ..Default::default()
        });
    }
    Ok((seq, stats))
}

/// The draft and distribution a position held in the previous iteration.
#[derive(Debug, Clone)]
pub struct PreviousDraft {
    pub token: Token,
    pub dist: Categorical,
    evaluated: bool,
}

#[derive(Debug, Clone)]
struct Slot {
    pos: usize,
    token: Token,
    /// Law `token` was drawn from.
    dist: Categorical,
    /// False while `dist` is still the uniform initialization.
    evaluated: bool,
    prev: Option<PreviousDraft>,
    /// Law produced by the latest evaluation, not yet used for drafting.
    fresh: Option<Categorical>,
    gumbel: Option<GumbelVector>,
    draft_rng: RandomSource,
    verify_rng: RandomSource,
}

/// The Jacobi window together with the accepted prefix.
#[derive(Debug, Clone)]
pub struct DecodeState {
    accepted: TokenSequence,
    slots: VecDeque<Slot>,
    iteration: usize,
    vocab: usize,
    rng: RandomSource,
}

impl DecodeState {
    fn new(vocab: usize, rng: &RandomSource) -> Self {
        Self {
            accepted: Vec::new(),
            slots: VecDeque::new(),
            iteration: 0,
            vocab,
            rng: rng.clone(),
        }
    }

    pub fn accepted(&self) -> &[Token] {
        &self.accepted
    }

    pub fn window_start(&self) -> usize {
        self.accepted.len()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn window_drafts(&self) -> Vec<Token> {
        self.slots.iter().map(|s| s.token).collect()
    }

    pub fn draft_dists(&self) -> Vec<&Categorical> {
        self.slots.iter().map(|s| &s.dist).collect()
    }

    pub fn previous(&self) -> Vec<Option<&PreviousDraft>> {
        self.slots.iter().map(|s| s.prev.as_ref()).collect()
    }

    pub fn gumbel_noise(&self) -> Vec<Option<&GumbelVector>> {
        self.slots.iter().map(|s| s.gumbel.as_ref()).collect()
    }

    /// Analytic acceptance rate `1 − TV(p^t, p^{t−1})` for each window
    /// position whose current and previous draft laws both came from the
    /// model.
    pub fn record_beta(&self) -> Vec<(usize, f64)> {
        self.slots
            .iter()
            .filter_map(|s| {
                let prev = s.prev.as_ref().filter(|p| p.evaluated && s.evaluated)?;
                let tv = tv_distance(&s.dist, &prev.dist).ok()?;
                Some((s.pos, 1.0 - tv))
            })
            .collect()
    }

    /// Drafts that changed since the previous iteration, over positions
    /// present in both windows.
    pub fn record_hamming(&self) -> Option<usize> {
        let compared: Vec<&Slot> = self.slots.iter().filter(|s| s.prev.is_some()).collect();
        if compared.is_empty() {
            return None;
        }
        Some(
            compared
                .iter()
                .filter(|s| s.prev.as_ref().is_some_and(|p| p.token != s.token))
                .count(),
        )
    }

    fn compared_positions(&self) -> usize {
        self.slots.iter().filter(|s| s.prev.is_some()).count()
    }

    /// Tops the window up to `window` positions, never past `len`.
    fn fill(&mut self, window: usize, len: usize, coupler: CouplerKind) -> Result<()> {
        let mut next = self.accepted.len() + self.slots.len();
        while self.slots.len() < window && next < len {
            let mut draft_rng = self.rng.derive2(STREAM_DRAFT, next as u64);
            let verify_rng = self.rng.derive2(STREAM_VERIFY, next as u64);
            let dist = Categorical::uniform(self.vocab)?;
            let (token, gumbel) = match coupler {
                CouplerKind::GumbelSharing => {
                    let g = sample_gumbel_noise(
                        self.vocab,
                        &mut self.rng.derive2(STREAM_GUMBEL, next as u64),
                    )?;
                    (gumbel_argmax(&dist, &g)?, Some(g))
                }
                _ => (sample_independent(&dist, &mut draft_rng), None),
            };
            self.slots.push_back(Slot {
                pos: next,
                token,
                dist,
                evaluated: false,
                prev: None,
                fresh: None,
                gumbel,
                draft_rng,
                verify_rng,
            });
            next += 1;
        }
        Ok(())
    }

    /// Redraws every draft that has a fresh law, coupled with its previous
    /// draft. Positions without one keep their draft and lose `prev`.
    fn draft(&mut self, coupler: CouplerKind) -> Result<()> {
        for slot in self.slots.iter_mut() {
            let Some(fresh) = slot.fresh.take() else {
                slot.prev = None;
                continue;
            };
            let token = match coupler {
                CouplerKind::Independent => sample_independent(&fresh, &mut slot.draft_rng),
                CouplerKind::MaximalCoupling => {
                    mrs(&fresh, &slot.dist, slot.token, &mut slot.draft_rng)?.token
                }
                CouplerKind::GumbelSharing => {
                    let g = slot
                        .gumbel
                        .as_ref()
                        .expect("gumbel noise is created with the slot");
                    gumbel_argmax(&fresh, g)?
                }
            };
            let old_dist = std::mem::replace(&mut slot.dist, fresh);
            slot.prev = Some(PreviousDraft {
                token: slot.token,
                dist: old_dist,
                evaluated: slot.evaluated,
            });
            slot.evaluated = true;
            slot.token = token;
        }
        Ok(())
    }
}

/// Speculative Jacobi decoding of `len` tokens.
pub fn decode_sjd<M: ArModel + ?Sized>(
    model: &M,
    sampling: &SamplingParams,
    len: usize,
    cfg: &SjdConfig,
    rng: &RandomSource,
) -> Result<(TokenSequence, DecodeStats)> {
    if cfg.window == 0 {
        return Err(param("decode.window", "must be >= 1"));
    }
    sampling.validate(model.vocab_size())?;
    let mut state = DecodeState::new(model.vocab_size(), rng);
    let mut stats = DecodeStats {
        total_tokens: len,
        beta_trajectories: vec![Vec::new(); len],
        ..Default::default()
    };

    while state.accepted.len() < len {
        state.fill(cfg.window, len, cfg.coupler)?;
        state.draft(cfg.coupler)?;

        let mut iter_stats = IterationStats {
            hamming: state.record_hamming(),
            compared: state.compared_positions(),
            betas: state.record_beta(),
            ..Default::default()
        };
        for &(pos, beta) in &iter_stats.betas {
            stats.beta_trajectories[pos].push(beta);
        }

        let drafts = state.window_drafts();
        let targets = target_window(model, &state.accepted, &drafts, sampling)?;
        stats.nfe += 1;
        for (slot, target) in state.slots.iter_mut().zip(targets) {
            slot.fresh = Some(target);
        }

        let mut finalized = 0;
        for slot in state.slots.iter_mut() {
            let target = slot.fresh.as_ref().expect("evaluated above");
            let outcome = mrs(target, &slot.dist, slot.token, &mut slot.verify_rng)?;
            if outcome.accepted {
                state.accepted.push(slot.token);
                finalized += 1;
                continue;
            }
            let token = match cfg.fault {
                VerifyFault::None => outcome.token,
                VerifyFault::SkipResidual => sample_independent(target, &mut slot.verify_rng),
            };
            match cfg.rejection {
                RejectionMode::Finalize => {
                    state.accepted.push(token);
                    finalized += 1;
                }
                RejectionMode::Redraft => {
                    // the residual token is a draft of the target law it was drawn
                    // against; the next evaluation reproduces that law exactly
                    slot.dist = slot.fresh.take().expect("evaluated above");
                    slot.evaluated = true;
                    slot.token = token;
                    slot.prev = None;
                }
            }
            break;
        }
        state.slots.drain(..finalized);
        state.iteration += 1;
        iter_stats.accepted = finalized;
        stats.iterations.push(iter_stats);
    }
    Ok((state.accepted, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, TabularModel};

    fn model(vocab: usize, flatness: f64, seed: u64) -> TabularModel {
        TabularModel::from_spec(&ModelSpec {
            vocab_size: vocab,
            flatness,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn all_decoders(window: usize) -> Vec<Decoder> {
        let mut v = vec![Decoder::Vanilla];
        for c in CouplerKind::ALL {
            v.push(Decoder::Jacobi(SjdConfig::new(window, c)));
            v.push(Decoder::Jacobi(
                SjdConfig::new(window, c).with_rejection(RejectionMode::Redraft),
            ));
        }
        v
    }

    #[test]
    fn vanilla_one_token() {
        let m = model(4, 1.0, 0);
        let (seq, stats) =
            decode_vanilla(&m, &SamplingParams::default(), 1, &RandomSource::new(0)).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(stats.nfe, 1);
    }

    #[test]
    fn greedy_is_seed_independent_for_every_decoder() {
        let m = model(6, 1.0, 3);
        let greedy = SamplingParams::greedy();
        let reference = decode_vanilla(&m, &greedy, 12, &RandomSource::new(0))
            .unwrap()
            .0;
        for decoder in all_decoders(4) {
            for seed in 0..5 {
                let (seq, stats) = decoder
                    .decode(&m, &greedy, 12, &RandomSource::new(seed))
                    .unwrap();
                assert_eq!(seq, reference, "{}", decoder.label());
                if let Decoder::Jacobi(cfg) = decoder {
                    if cfg.rejection == RejectionMode::Finalize {
                        assert!(stats.nfe <= 12);
                    }
                }
            }
        }
    }

    #[test]
    fn unit_window_costs_one_call_per_token() {
        let m = model(5, 2.0, 1);
        for coupler in CouplerKind::ALL {
            let (seq, stats) = decode_sjd(
                &m,
                &SamplingParams::default(),
                9,
                &SjdConfig::new(1, coupler),
                &RandomSource::new(4),
            )
            .unwrap();
            assert_eq!(seq.len(), 9);
            assert_eq!(stats.nfe, 9);
            assert!(stats.iterations.iter().all(|it| it.accepted == 1));
        }
    }

    #[test]
    fn progress_and_accounting_invariants() {
        let m = model(8, 3.0, 2);
        let s = SamplingParams::default();
        for window in [1, 3, 8, 40] {
            for decoder in all_decoders(window) {
                for seed in 0..4 {
                    let (seq, stats) = decoder
                        .decode(&m, &s, 30, &RandomSource::new(seed))
                        .unwrap();
                    assert_eq!(seq.len(), 30);
                    assert_eq!(
                        stats.iterations.iter().map(|i| i.accepted).sum::<usize>(),
                        30
                    );
                    assert_eq!(stats.nfe, stats.iterations.len());
                    let redraft = matches!(decoder, Decoder::Jacobi(c) if c.rejection == RejectionMode::Redraft);
                    if !redraft {
                        assert!(stats.nfe <= 30, "{} nfe {}", decoder.label(), stats.nfe);
                        assert!(stats.iterations.iter().all(|i| i.accepted >= 1));
                    }
                    for traj in stats.beta_trajectories.iter().flatten() {
                        assert!((0.0..=1.0).contains(traj));
                    }
                }
            }
        }
    }

    #[test]
    fn determinism() {
        let m = model(8, 2.0, 5);
        let s = SamplingParams {
            top_p: Some(0.9),
            ..Default::default()
        };
        for decoder in all_decoders(6) {
            let a = decoder.decode(&m, &s, 25, &RandomSource::new(77)).unwrap();
            let b = decoder.decode(&m, &s, 25, &RandomSource::new(77)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_zero_window() {
        let m = model(4, 1.0, 0);
        assert!(decode_sjd(
            &m,
            &SamplingParams::default(),
            3,
            &SjdConfig::new(0, CouplerKind::Independent),
            &RandomSource::new(0)
        )
        .is_err());
    }

    #[test]
    fn zero_length_decodes_are_empty() {
        let m = model(4, 1.0, 0);
        for decoder in all_decoders(4) {
            let (seq, stats) = decoder
                .decode(&m, &SamplingParams::default(), 0, &RandomSource::new(0))
                .unwrap();
            assert!(seq.is_empty());
            assert_eq!(stats.nfe, 0);
        }
    }

    /// A model whose next-token law ignores the prefix: every evaluation of a
    /// position returns the same law.
    struct Constant(Vec<f64>);

    impl ArModel for Constant {
        fn vocab_size(&self) -> usize {
            self.0.len()
        }
        fn max_len(&self) -> usize {
            1 << 20
        }
        fn eval_next(&self, _prefix: &[Token]) -> Result<crate::prob::Logits> {
            crate::prob::Logits::new(self.0.clone())
        }
    }

    #[test]
    fn maximal_coupling_keeps_drafts_under_stationary_laws() {
        // uniform laws everywhere, including the initialization, so
        // p^t = p^{t-1} at every compared position
        let m = Constant(vec![0.0; 4]);
        let cfg = SjdConfig::new(8, CouplerKind::MaximalCoupling);
        let (_, stats) = decode_sjd(
            &m,
            &SamplingParams::default(),
            40,
            &cfg,
            &RandomSource::new(3),
        )
        .unwrap();
        assert!(stats
            .iterations
            .iter()
            .all(|it| it.hamming.unwrap_or(0) == 0));

        let mut state = DecodeState::new(4, &RandomSource::new(4));
        state.fill(4, 100, CouplerKind::MaximalCoupling).unwrap();
        let p = Categorical::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        for _ in 0..50 {
            for slot in state.slots.iter_mut() {
                slot.fresh = Some(p.clone());
            }
            let before = state.window_drafts();
            state.draft(CouplerKind::MaximalCoupling).unwrap();
            if state.slots[0].prev.as_ref().unwrap().evaluated {
                assert_eq!(state.record_hamming(), Some(0));
                assert_eq!(state.window_drafts(), before);
                assert!(state
                    .record_beta()
                    .iter()
                    .all(|&(_, b)| (b - 1.0).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn independent_hamming_on_uniform_laws() {
        // four comparable uniform-8 positions: each draft changes w.p. 7/8
        let mut state = DecodeState::new(8, &RandomSource::new(11));
        state.fill(4, 100, CouplerKind::Independent).unwrap();
        let uniform = Categorical::uniform(8).unwrap();
        let iterations = 10_000;
        let mut changes = 0usize;
        for _ in 0..iterations {
            for slot in state.slots.iter_mut() {
                slot.fresh = Some(uniform.clone());
            }
            state.draft(CouplerKind::Independent).unwrap();
            changes += state.record_hamming().unwrap();
        }
        let mean = changes as f64 / iterations as f64;
        let sigma = (4.0 * 7.0 / 8.0 * 1.0 / 8.0 / iterations as f64).sqrt();
        assert!((mean - 3.5).abs() <= 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn state_records() {
        let rng = RandomSource::new(1);
        let mut state = DecodeState::new(4, &rng);
        state.fill(3, 10, CouplerKind::MaximalCoupling).unwrap();
        assert_eq!(state.window_drafts().len(), 3);
        // all-new window: nothing to compare
        assert_eq!(state.record_hamming(), None);
        assert!(state.record_beta().is_empty());

        let p = Categorical::new(vec![0.6, 0.4, 0.0, 0.0]).unwrap();
        let q = Categorical::new(vec![0.4, 0.6, 0.0, 0.0]).unwrap();
        let slot = &mut state.slots[0];
        slot.prev = Some(PreviousDraft {
            token: 0,
            dist: q.clone(),
            evaluated: true,
        });
        slot.dist = p.clone();
        slot.evaluated = true;
        slot.token = 0;
        let betas = state.record_beta();
        assert_eq!(betas.len(), 1);
        assert!((betas[0].1 - 0.8).abs() < 1e-12);
        assert_eq!(state.record_hamming(), Some(0));

        state.slots[0].prev = Some(PreviousDraft {
            token: 1,
            dist: p.clone(),
            evaluated: true,
        });
        assert_eq!(state.record_beta()[0].1, 1.0);
        assert_eq!(state.record_hamming(), Some(1));

        let disjoint = Categorical::new(vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        state.slots[0].prev = Some(PreviousDraft {
            token: 2,
            dist: disjoint,
            evaluated: true,
        });
        assert_eq!(state.record_beta()[0].1, 0.0);
    }

    #[test]
    fn gumbel_noise_is_fixed_per_position() {
        let rng = RandomSource::new(5);
        let mut a = DecodeState::new(6, &rng);
        a.fill(4, 20, CouplerKind::GumbelSharing).unwrap();
        let before: Vec<GumbelVector> = a
            .gumbel_noise()
            .into_iter()
            .map(|g| g.unwrap().clone())
            .collect();
        a.slots.pop_front();
        a.accepted.push(0);
        a.fill(4, 20, CouplerKind::GumbelSharing).unwrap();
        let after: Vec<GumbelVector> = a
            .gumbel_noise()
            .into_iter()
            .map(|g| g.unwrap().clone())
            .collect();
        assert_eq!(&before[1..], &after[..3]);
    }
}
