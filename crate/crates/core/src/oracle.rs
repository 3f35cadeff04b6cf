//! Ground truth for the decoders: empirical laws collected from many runs,
//! distances to the enumerated law, and the statistical checks that turn
//! those into pass/fail reports.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::couplers::{
    gs_couple, maximal_coupling_cost, mrs, sample_gumbel_noise, sample_independent,
};
use crate::decoder::{CouplerKind, DecodeStats, Decoder, SjdConfig};
use crate::error::{param, Result};
use crate::model::{enumerate_sequence_distribution, ArModel, SequenceLaw, TokenSequence};
use crate::prob::{
    independent_collision, renyi2_collision_bound, renyi2_entropy, tv_distance, Categorical,
    Logits, SamplingParams,
};
use crate::rng::RandomSource;

/// Significance level of the goodness-of-fit test.
pub const GOF_ALPHA: f64 = 0.001;
/// Relative slack on top of the vanilla-calibrated TV noise band.
pub const TV_BAND_MARGIN: f64 = 0.2;
/// Minimum expected count per chi-square cell; smaller cells are pooled.
pub const MIN_EXPECTED_COUNT: f64 = 5.0;

/// Occurrence counts of decoded sequences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EmpiricalLaw {
    counts: BTreeMap<TokenSequence, u64>,
    total: u64,
}

impl EmpiricalLaw {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, seq: TokenSequence) {
        *self.counts.entry(seq).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn add_count(&mut self, seq: TokenSequence, count: u64) {
        if count > 0 {
            *self.counts.entry(seq).or_insert(0) += count;
            self.total += count;
        }
    }

    pub fn merge(mut self, other: EmpiricalLaw) -> Self {
        for (seq, c) in other.counts {
            self.add_count(seq, c);
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, seq: &[usize]) -> u64 {
        self.counts.get(seq).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TokenSequence, u64)> {
        self.counts.iter().map(|(s, &c)| (s, c))
    }
}

/// Runs `decoder` once per trial, trial `k` on substream `rng.derive(k)`,
/// and returns the results in trial order.
pub fn run_trials<M: ArModel + ?Sized>(
    model: &M,
    sampling: &SamplingParams,
    decoder: &Decoder,
    len: usize,
    runs: usize,
    rng: &RandomSource,
) -> Result<Vec<(TokenSequence, DecodeStats)>> {
    (0..runs)
        .into_par_iter()
        .map(|k| decoder.decode(model, sampling, len, &rng.derive(k as u64)))
        .collect()
}

/// Empirical law of `runs` independent decodes.
pub fn collect<M: ArModel + ?Sized>(
    model: &M,
    sampling: &SamplingParams,
    decoder: &Decoder,
    len: usize,
    runs: usize,
    rng: &RandomSource,
) -> Result<EmpiricalLaw> {
    if runs == 0 {
        return Err(param("run.trials", "must be >= 1"));
    }
    (0..runs)
        .into_par_iter()
        .try_fold(EmpiricalLaw::new, |mut law, k| {
            let (seq, _) = decoder.decode(model, sampling, len, &rng.derive(k as u64))?;
            law.add(seq);
            Ok(law)
        })
        .try_reduce(EmpiricalLaw::new, |a, b| Ok(a.merge(b)))
}

/// Draws `runs` sequences straight from an exact law.
pub fn sample_exact(law: &SequenceLaw, runs: usize, rng: &RandomSource) -> Result<EmpiricalLaw> {
    let cells = Categorical::from_weights(law.probs().to_vec())?;
    let mut stream = rng.clone();
    let mut counts = vec![0u64; law.num_cells()];
    for _ in 0..runs {
        counts[sample_independent(&cells, &mut stream)] += 1;
    }
    let mut emp = EmpiricalLaw::new();
    for (i, c) in counts.into_iter().enumerate() {
        emp.add_count(law.sequence_at(i), c);
    }
    Ok(emp)
}

/// `½ Σ_s |emp(s)/total − exact(s)|`. Observed sequences outside the exact
/// law's index space count in full.
pub fn tv_to_exact(emp: &EmpiricalLaw, exact: &SequenceLaw) -> f64 {
    if emp.total == 0 {
        return 1.0;
    }
    let total = emp.total as f64;
    let mut seen = vec![0u64; exact.num_cells()];
    let mut stray = 0.0;
    for (seq, c) in emp.iter() {
        match exact.index_of(seq) {
            Some(i) => seen[i] += c,
            None => stray += c as f64 / total,
        }
    }
    let l1: f64 = exact
        .probs()
        .iter()
        .zip(&seen)
        .map(|(p, &c)| (c as f64 / total - p).abs())
        .sum();
    0.5 * (l1 + stray)
}

/// Outcome of one statistical or analytic check.
#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub name: String,
    pub statistic: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    pub skipped: bool,
    pub samples: u64,
    pub notes: String,
}

impl TestReport {
    pub fn new(
        name: impl Into<String>,
        statistic: impl Into<String>,
        value: f64,
        threshold: f64,
        passed: bool,
    ) -> Self {
        Self {
            name: name.into(),
            statistic: statistic.into(),
            value,
            threshold,
            passed,
            skipped: false,
            samples: 0,
            notes: String::new(),
        }
    }

    pub fn with_samples(mut self, samples: u64) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = notes.into();
        self
    }

    pub fn verdict(&self) -> &'static str {
        match (self.skipped, self.passed) {
            (true, _) => "skip",
            (false, true) => "pass",
            (false, false) => "fail",
        }
    }
}

impl fmt::Display for TestReport {
    /// `name=value` lines, one block per report.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name={}", self.name)?;
        writeln!(f, "statistic={}", self.statistic)?;
        writeln!(f, "value={}", self.value)?;
        writeln!(f, "threshold={}", self.threshold)?;
        writeln!(f, "result={}", self.verdict())?;
        writeln!(f, "samples={}", self.samples)?;
        writeln!(f, "notes={}", self.notes)
    }
}

/// Pearson chi-square of `emp` against `exact`. Cells whose expected count
/// is under [`MIN_EXPECTED_COUNT`] are pooled into one tail cell; passes iff
/// the p-value exceeds [`GOF_ALPHA`].
pub fn gof_test(emp: &EmpiricalLaw, exact: &SequenceLaw) -> TestReport {
    let total = emp.total as f64;
    let mut observed = vec![0u64; exact.num_cells()];
    let mut stray = 0u64;
    for (seq, c) in emp.iter() {
        match exact.index_of(seq) {
            Some(i) => observed[i] += c,
            None => stray += c,
        }
    }

    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut tail_exp, mut tail_obs) = (0.0, stray as f64);
    for (&p, &o) in exact.probs().iter().zip(&observed) {
        let e = p * total;
        if e < MIN_EXPECTED_COUNT {
            tail_exp += e;
            tail_obs += o as f64;
        } else {
            cells.push((e, o as f64));
        }
    }
    if tail_exp > 0.0 || tail_obs > 0.0 {
        cells.push((tail_exp, tail_obs));
    }

    let samples = emp.total;
    if cells.len() <= 1 || total == 0.0 {
        let passed = total > 0.0
            && cells
                .first()
                .is_none_or(|&(e, o)| (e - o).abs() < 1e-9 * total.max(1.0));
        return TestReport::new(
            "gof",
            "chi2_p_value",
            if passed { 1.0 } else { 0.0 },
            GOF_ALPHA,
            passed,
        )
        .with_samples(samples)
        .with_notes("degenerate exact law");
    }

    let mut chi2 = 0.0;
    for &(e, o) in &cells {
        if e > 0.0 {
            chi2 += (o - e).powi(2) / e;
        } else if o > 0.0 {
            chi2 = f64::INFINITY;
        }
    }
    let df = (cells.len() - 1) as f64;
    let p_value = if chi2.is_finite() {
        ChiSquared::new(df).map(|d| d.sf(chi2)).unwrap_or(0.0)
    } else {
        0.0
    };
    TestReport::new(
        "gof",
        "chi2_p_value",
        p_value,
        GOF_ALPHA,
        p_value > GOF_ALPHA,
    )
    .with_samples(samples)
    .with_notes(format!("chi2={chi2:.4} df={df}"))
}

/// Samples `x ~ q`, runs [`mrs`] and compares the acceptance frequency with
/// `1 − TV(p, q)`; passes within three binomial standard errors.
pub fn acceptance_rate_check(
    p: &Categorical,
    q: &Categorical,
    trials: usize,
    rng: &RandomSource,
) -> Result<TestReport> {
    if trials < 1000 {
        return Err(param("trials", "must be >= 1000"));
    }
    let beta = maximal_coupling_cost(p, q)?;
    let mut stream = rng.clone();
    let mut accepted = 0usize;
    for _ in 0..trials {
        let x = sample_independent(q, &mut stream);
        if mrs(p, q, x, &mut stream)?.accepted {
            accepted += 1;
        }
    }
    let rate = accepted as f64 / trials as f64;
    let tol = 3.0 * (beta * (1.0 - beta) / trials as f64).sqrt();
    let diff = (rate - beta).abs();
    Ok(TestReport::new(
        "mrs_acceptance_rate",
        "abs(rate - (1 - tv))",
        diff,
        tol,
        diff <= tol + 1e-12,
    )
    .with_samples(trials as u64)
    .with_notes(format!("rate={rate:.6} expected={beta:.6}")))
}

/// Analytic and Monte Carlo collision statistics for one `(p, q)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCollisions {
    pub vocab_size: usize,
    pub tv: f64,
    pub renyi2_p: f64,
    pub renyi2_q: f64,
    pub independent_analytic: f64,
    pub independent_empirical: f64,
    pub renyi2_bound: f64,
    pub maximal_cost: f64,
    pub maximal_empirical: f64,
    pub gumbel_empirical: f64,
    pub gumbel_lower_bound: f64,
    pub trials: usize,
}

/// `(1 − TV) / (1 + TV)`, the worst-case collision of Gumbel sharing.
pub fn gumbel_lower_bound(tv: f64) -> f64 {
    (1.0 - tv) / (1.0 + tv)
}

/// Estimates `Pr[X = Y]` for independent streams, MRS and shared Gumbel
/// noise, each from its own substream of `rng`.
pub fn estimate_collisions(
    p: &Categorical,
    q: &Categorical,
    trials: usize,
    rng: &RandomSource,
) -> Result<PairCollisions> {
    let tv = tv_distance(p, q)?;
    let mut s_p = rng.derive(1);
    let mut s_q = rng.derive(2);
    let mut s_mrs = rng.derive(3);
    let mut s_gumbel = rng.derive(4);
    let (mut indep, mut maximal, mut gumbel) = (0usize, 0usize, 0usize);
    for _ in 0..trials {
        if sample_independent(p, &mut s_p) == sample_independent(q, &mut s_q) {
            indep += 1;
        }
        let y = sample_independent(q, &mut s_mrs);
        if mrs(p, q, y, &mut s_mrs)?.token == y {
            maximal += 1;
        }
        let g = sample_gumbel_noise(p.vocab_size(), &mut s_gumbel)?;
        let (a, b) = gs_couple(p, q, &g)?;
        if a == b {
            gumbel += 1;
        }
    }
    let n = trials as f64;
    Ok(PairCollisions {
        vocab_size: p.vocab_size(),
        tv,
        renyi2_p: renyi2_entropy(p),
        renyi2_q: renyi2_entropy(q),
        independent_analytic: independent_collision(p, q)?,
        independent_empirical: indep as f64 / n,
        renyi2_bound: renyi2_collision_bound(p, q),
        maximal_cost: 1.0 - tv,
        maximal_empirical: maximal as f64 / n,
        gumbel_empirical: gumbel as f64 / n,
        gumbel_lower_bound: gumbel_lower_bound(tv),
        trials,
    })
}

/// Binomial standard error, taking the larger of the observed and the
/// reference rate so a degenerate estimate does not collapse the band.
fn binomial_se(observed: f64, reference: f64, n: usize) -> f64 {
    let v = (observed * (1.0 - observed)).max(reference * (1.0 - reference));
    (v / n as f64).sqrt()
}

/// Random pairs spanning entropy regimes: `p = softmax(z / f)` with the
/// flatness `f` log-uniform in `flatness`, and `q` a perturbation of `p`
/// whose strength is uniform in `[0, 2)`.
pub fn random_pairs(
    count: usize,
    vocab_sizes: &[usize],
    flatness: (f64, f64),
    rng: &RandomSource,
) -> Result<Vec<(Categorical, Categorical)>> {
    if vocab_sizes.is_empty() {
        return Err(param("vocab", "at least one vocabulary size is required"));
    }
    let (lo, hi) = flatness;
    if !(lo > 0.0 && hi >= lo) {
        return Err(param("flatness", "range must satisfy 0 < min <= max"));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut s = rng.derive(i as u64);
        let vocab = vocab_sizes[i % vocab_sizes.len()];
        let f = (lo.ln() + (hi.ln() - lo.ln()) * s.draw_uniform01()).exp();
        let strength = 2.0 * s.draw_uniform01();
        let base: Vec<f64> = (0..vocab).map(|_| standard_normal(&mut s)).collect();
        let shifted: Vec<f64> = base
            .iter()
            .map(|z| z + strength * standard_normal(&mut s))
            .collect();
        let p = Logits::new(base.iter().map(|z| z / f).collect())?.softmax();
        let q = Logits::new(shifted.iter().map(|z| z / f).collect())?.softmax();
        out.push((p, q));
    }
    Ok(out)
}

fn standard_normal(rng: &mut RandomSource) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// Per pair: Gumbel collision inside `[(1 − TV)/(1 + TV), 1 − TV]` (3σ
/// slack each side), independent collision within 3σ of `Σ p·q`, and the
/// analytic Rényi-2 ceiling on `Σ p·q`.
pub fn coupling_bound_sweep(
    pairs: &[(Categorical, Categorical)],
    trials: usize,
    rng: &RandomSource,
) -> Result<Vec<TestReport>> {
    let mut reports = Vec::with_capacity(pairs.len() * 4);
    for (i, (p, q)) in pairs.iter().enumerate() {
        let c = estimate_collisions(p, q, trials, &rng.derive(i as u64))?;
        let n = trials as u64;
        let tag = format!("pair={i} vocab={} tv={:.6}", c.vocab_size, c.tv);

        let lo = c.gumbel_lower_bound
            - 3.0 * binomial_se(c.gumbel_empirical, c.gumbel_lower_bound, trials);
        reports.push(
            TestReport::new(
                "gumbel_lower_bound",
                "gumbel_collision",
                c.gumbel_empirical,
                lo,
                c.gumbel_empirical >= lo,
            )
            .with_samples(n)
            .with_notes(tag.clone()),
        );
        let hi = c.maximal_cost + 3.0 * binomial_se(c.gumbel_empirical, c.maximal_cost, trials);
        reports.push(
            TestReport::new(
                "gumbel_upper_bound",
                "gumbel_collision",
                c.gumbel_empirical,
                hi,
                c.gumbel_empirical <= hi,
            )
            .with_samples(n)
            .with_notes(tag.clone()),
        );
        let diff = (c.independent_empirical - c.independent_analytic).abs();
        let tol = 3.0 * binomial_se(c.independent_analytic, c.independent_analytic, trials);
        reports.push(
            TestReport::new(
                "independent_collision",
                "abs(empirical - sum p*q)",
                diff,
                tol,
                diff <= tol + 1e-12,
            )
            .with_samples(n)
            .with_notes(tag.clone()),
        );
        reports.push(
            TestReport::new(
                "renyi2_bound",
                "sum p*q",
                c.independent_analytic,
                c.renyi2_bound,
                c.independent_analytic <= c.renyi2_bound + 1e-12,
            )
            .with_notes(tag),
        );
    }
    Ok(reports)
}

/// Sample Pearson correlation; `None` if either input has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Correlation threshold between per-run mean Hamming distance and NFE.
pub const HAMMING_NFE_MIN_R: f64 = 0.3;

/// Correlation report over `(mean hamming, nfe)` points.
pub fn correlation_report(hamming: &[f64], nfe: &[f64]) -> TestReport {
    let samples = hamming.len() as u64;
    match pearson(hamming, nfe) {
        Some(r) => TestReport::new(
            "hamming_nfe_correlation",
            "pearson_r",
            r,
            HAMMING_NFE_MIN_R,
            r > HAMMING_NFE_MIN_R,
        )
        .with_samples(samples),
        None => {
            let mut report = TestReport::new(
                "hamming_nfe_correlation",
                "pearson_r",
                f64::NAN,
                HAMMING_NFE_MIN_R,
                true,
            )
            .with_samples(samples)
            .with_notes("skipped: zero variance");
            report.skipped = true;
            report
        }
    }
}

/// Runs `runs` Jacobi decodes and correlates each run's mean draft Hamming
/// distance with its NFE.
#[allow(clippy::too_many_arguments)]
pub fn hamming_nfe_correlation<M: ArModel + ?Sized>(
    model: &M,
    sampling: &SamplingParams,
    len: usize,
    window: usize,
    coupler: CouplerKind,
    runs: usize,
    rng: &RandomSource,
) -> Result<TestReport> {
    if runs < 100 {
        return Err(param("run.trials", "at least 100 runs are required"));
    }
    let decoder = Decoder::Jacobi(SjdConfig::new(window, coupler));
    let results = run_trials(model, sampling, &decoder, len, runs, rng)?;
    let (hamming, nfe): (Vec<f64>, Vec<f64>) = results
        .iter()
        .map(|(_, s)| (s.mean_hamming().unwrap_or(0.0), s.nfe as f64))
        .unzip();
    Ok(correlation_report(&hamming, &nfe)
        .with_notes(format!("coupler={} window={window}", coupler.name())))
}

/// One-sided paired t-test of `mean(a − b) < 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedComparison {
    pub mean_diff: f64,
    pub std_err: f64,
    pub t: f64,
    /// `P[T <= t]` under the null of zero mean difference.
    pub p_less: f64,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<PairedComparison> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std_err = (var / n as f64).sqrt();
    if std_err == 0.0 {
        let p_less = if mean < 0.0 { 0.0 } else { 1.0 };
        return Some(PairedComparison {
            mean_diff: mean,
            std_err,
            t: f64::NAN,
            p_less,
        });
    }
    let t = mean / std_err;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?;
    Some(PairedComparison {
        mean_diff: mean,
        std_err,
        t,
        p_less: dist.cdf(t),
    })
}

/// Pooled within-trajectory variance and overall mean of β across runs:
/// `Σ (β − β̄_traj)² / Σ (len_traj − 1)` over trajectories with ≥ 2 entries.
pub fn pooled_beta_stats(stats: &[DecodeStats]) -> (f64, f64) {
    let (mut ss, mut dof, mut sum, mut count) = (0.0, 0usize, 0.0, 0usize);
    for traj in stats.iter().flat_map(|s| &s.beta_trajectories) {
        sum += traj.iter().sum::<f64>();
        count += traj.len();
        if traj.len() >= 2 {
            let m = traj.iter().sum::<f64>() / traj.len() as f64;
            ss += traj.iter().map(|b| (b - m).powi(2)).sum::<f64>();
            dof += traj.len() - 1;
        }
    }
    let var = if dof > 0 { ss / dof as f64 } else { 0.0 };
    let mean = if count > 0 {
        sum / count as f64
    } else {
        f64::NAN
    };
    (var, mean)
}

/// Verdicts of the losslessness suite for one decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LosslessVerdict {
    pub decoder: String,
    pub tv: TestReport,
    pub gof: TestReport,
}

impl LosslessVerdict {
    pub fn passed(&self) -> bool {
        self.tv.passed && self.gof.passed
    }
}

/// Compares each decoder's empirical law with the enumerated law.
///
/// Vanilla decoding runs first and fixes the TV band: every decoder must
/// stay under `(1 + TV_BAND_MARGIN) · tv_vanilla` and pass [`gof_test`].
pub fn verify_lossless<M: ArModel + ?Sized>(
    model: &M,
    sampling: &SamplingParams,
    len: usize,
    runs: usize,
    decoders: &[Decoder],
    rng: &RandomSource,
) -> Result<Vec<LosslessVerdict>> {
    let exact = enumerate_sequence_distribution(model, sampling, len)?;
    let vanilla = collect(model, sampling, &Decoder::Vanilla, len, runs, rng)?;
    let band = tv_to_exact(&vanilla, &exact);
    let threshold = band * (1.0 + TV_BAND_MARGIN);

    let mut verdicts = Vec::with_capacity(decoders.len() + 1);
    let mut judge = |label: String, emp: &EmpiricalLaw| {
        let tv = tv_to_exact(emp, &exact);
        let tv_report = TestReport::new(
            format!("lossless_tv[{label}]"),
            "tv_to_exact",
            tv,
            threshold,
            tv <= threshold,
        )
        .with_samples(emp.total())
        .with_notes(format!(
            "vanilla_band={band:.6} cells={}",
            exact.num_cells()
        ));
        let mut gof = gof_test(emp, &exact);
        gof.name = format!("lossless_gof[{label}]");
        verdicts.push(LosslessVerdict {
            decoder: label,
            tv: tv_report,
            gof,
        });
    };
    judge("vanilla".to_string(), &vanilla);
    for decoder in decoders.iter().filter(|d| **d != Decoder::Vanilla) {
        let emp = collect(model, sampling, decoder, len, runs, rng)?;
        judge(decoder.label(), &emp);
    }
    Ok(verdicts)
}
