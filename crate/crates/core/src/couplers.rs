//! Draft samplers: independent draws, modified rejection sampling (the
//! maximal coupling) and Gumbel noise sharing.

use crate::error::{Error, Result};
use crate::prob::{argmax_lowest, residual_weights, tv_distance, Categorical, Token};
use crate::rng::RandomSource;

/// Result of one modified-rejection-sampling step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MrsOutcome {
    pub accepted: bool,
    pub token: Token,
}

/// One Gumbel(0, 1) variate per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelVector {
    noise: Vec<f64>,
}

impl GumbelVector {
    pub fn from_noise(noise: Vec<f64>) -> Result<Self> {
        if noise.is_empty() || noise.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidDistribution(
                "gumbel noise must be finite and non-empty".into(),
            ));
        }
        Ok(Self { noise })
    }

    pub fn vocab_size(&self) -> usize {
        self.noise.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.noise
    }
}

pub fn sample_independent(p: &Categorical, rng: &mut RandomSource) -> Token {
    p.sample_with_uniform(rng.draw_uniform01())
}

/// Accept `x ~ q` with probability `min(1, p(x)/q(x))`, otherwise draw from
/// the residual `norm(max(0, p − q))`. The output token is `p`-distributed.
///
/// Consumes one uniform for the accept test and, on rejection, one more for
/// the residual draw.
pub fn mrs(
    p: &Categorical,
    q: &Categorical,
    x: Token,
    rng: &mut RandomSource,
) -> Result<MrsOutcome> {
    if p.vocab_size() != q.vocab_size() {
        return Err(Error::Dimension {
            expected: p.vocab_size(),
            actual: q.vocab_size(),
        });
    }
    if x >= q.vocab_size() {
        return Err(Error::TokenOutOfRange {
            token: x,
            vocab_size: q.vocab_size(),
        });
    }
    let qx = q.prob(x);
    if qx <= 0.0 {
        return Err(Error::ZeroDraftProbability { token: x });
    }
    let alpha = (p.prob(x) / qx).min(1.0);
    if rng.draw_uniform01() < alpha {
        return Ok(MrsOutcome {
            accepted: true,
            token: x,
        });
    }
    let u = rng.draw_uniform01();
    let token = match Categorical::from_weights(residual_weights(p, q)?) {
        Ok(residual) => residual.sample_with_uniform(u),
        // p(x) < q(x) only by rounding: the residual vanished numerically
        Err(Error::ZeroMass) => p.sample_with_uniform(u),
        Err(e) => return Err(e),
    };
    Ok(MrsOutcome {
        accepted: false,
        token,
    })
}

/// Largest double strictly below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// `−ln(−ln u)` with `u` clamped into `[MIN_POSITIVE, 1 − ulp]`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP);
    -(-u.ln()).ln()
}

pub fn sample_gumbel_noise(vocab_size: usize, rng: &mut RandomSource) -> Result<GumbelVector> {
    if vocab_size == 0 {
        return Err(Error::InvalidDistribution("empty vocabulary".into()));
    }
    let noise = (0..vocab_size)
        .map(|_| gumbel_from_uniform(rng.draw_uniform01()))
        .collect();
    Ok(GumbelVector { noise })
}

/// Gumbel-max argmax of `ln p + g`; zero-probability tokens never win.
pub fn gumbel_argmax(p: &Categorical, g: &GumbelVector) -> Result<Token> {
    if p.vocab_size() != g.vocab_size() {
        return Err(Error::Dimension {
            expected: p.vocab_size(),
            actual: g.vocab_size(),
        });
    }
    let scores: Vec<f64> = p
        .probs()
        .iter()
        .zip(&g.noise)
        .map(|(&pi, &gi)| {
            if pi > 0.0 {
                pi.ln() + gi
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    Ok(argmax_lowest(&scores))
}

/// Couples a draw from `p` with a draw from `q` by sharing the noise `g`.
pub fn gs_couple(p: &Categorical, q: &Categorical, g: &GumbelVector) -> Result<(Token, Token)> {
    if p.vocab_size() != q.vocab_size() {
        return Err(Error::Dimension {
            expected: p.vocab_size(),
            actual: q.vocab_size(),
        });
    }
    Ok((gumbel_argmax(p, g)?, gumbel_argmax(q, g)?))
}

/// `1 − TV(p, q)`: collision probability of [`mrs`] and the ceiling for any
/// coupling of `p` and `q`.
pub fn maximal_coupling_cost(p: &Categorical, q: &Categorical) -> Result<f64> {
    Ok(1.0 - tv_distance(p, q)?)
}

/// Pairs enumerated by default before [`mrs_joint_distribution`] refuses.
pub const JOINT_BUDGET: usize = 1 << 20;

/// Dense joint law over `(input, output)` token pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    vocab: usize,
    mass: Vec<f64>,
}

impl JointTable {
    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn at(&self, x: Token, y: Token) -> f64 {
        self.mass[x * self.vocab + y]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.mass
            .chunks(self.vocab)
            .map(|row| row.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut cols = vec![0.0; self.vocab];
        for row in self.mass.chunks(self.vocab) {
            for (c, v) in cols.iter_mut().zip(row) {
                *c += v;
            }
        }
        cols
    }

    pub fn diagonal_mass(&self) -> f64 {
        (0..self.vocab).map(|i| self.at(i, i)).sum()
    }
}

/// Exact joint law of `(x, mrs(p, q, x))` for `x ~ q`:
/// `f(x, y) = q(x) [α(x) δ_x(y) + (1 − α(x)) r(y)]`, `α = min(1, p/q)`.
pub fn mrs_joint_distribution(p: &Categorical, q: &Categorical) -> Result<JointTable> {
    mrs_joint_distribution_with_budget(p, q, JOINT_BUDGET)
}

pub fn mrs_joint_distribution_with_budget(
    p: &Categorical,
    q: &Categorical,
    budget: usize,
) -> Result<JointTable> {
    let v = p.vocab_size();
    if v != q.vocab_size() {
        return Err(Error::Dimension {
            expected: v,
            actual: q.vocab_size(),
        });
    }
    let cells = v.checked_mul(v).unwrap_or(usize::MAX);
    if cells > budget {
        return Err(Error::Size {
            requested: cells as f64,
            budget,
        });
    }
    let weights = residual_weights(p, q)?;
    let mass_r: f64 = weights.iter().sum();
    let mut mass = vec![0.0; v * v];
    for x in 0..v {
        let qx = q.prob(x);
        if qx <= 0.0 {
            continue;
        }
        let alpha = (p.prob(x) / qx).min(1.0);
        mass[x * v + x] += qx * alpha;
        let reject = qx * (1.0 - alpha);
        if reject > 0.0 && mass_r > 0.0 {
            for (y, w) in weights.iter().enumerate() {
                mass[x * v + y] += reject * w / mass_r;
            }
        }
    }
    Ok(JointTable { vocab: v, mass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::independent_collision;
    use proptest::prelude::*;

    fn cat(p: &[f64]) -> Categorical {
        Categorical::new(p.to_vec()).unwrap()
    }

    /// `|x − μ| ≤ 3σ` for a Bernoulli frequency over `n` trials.
    fn within_3_sigma(freq: f64, mu: f64, n: usize) -> bool {
        (freq - mu).abs() <= 3.0 * (mu * (1.0 - mu) / n as f64).sqrt()
    }

    #[test]
    fn independent_examples() {
        let mut rng = RandomSource::new(0);
        let point = Categorical::point_mass(4, 2).unwrap();
        assert!((0..100).all(|_| sample_independent(&point, &mut rng) == 2));

        let n = 1_000_000;
        let u = Categorical::uniform(4).unwrap();
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_independent(&u, &mut rng)] += 1;
        }
        for c in counts {
            assert!(within_3_sigma(c as f64 / n as f64, 0.25, n), "{counts:?}");
        }
    }

    #[test]
    fn mrs_examples() {
        let mut rng = RandomSource::new(1);
        let p = cat(&[0.3, 0.5, 0.2]);
        for x in 0..3 {
            assert_eq!(
                mrs(&p, &p, x, &mut rng).unwrap(),
                MrsOutcome {
                    accepted: true,
                    token: x
                }
            );
        }
        let out = mrs(&cat(&[1.0, 0.0]), &cat(&[0.0, 1.0]), 1, &mut rng).unwrap();
        assert_eq!(
            out,
            MrsOutcome {
                accepted: false,
                token: 0
            }
        );

        let (p, q) = (cat(&[0.6, 0.4]), cat(&[0.4, 0.6]));
        let m = 100_000;
        let accepted = (0..m)
            .filter(|_| {
                let x = sample_independent(&q, &mut rng);
                mrs(&p, &q, x, &mut rng).unwrap().accepted
            })
            .count();
        assert!(within_3_sigma(accepted as f64 / m as f64, 0.8, m));
    }

    #[test]
    fn mrs_rejects_zero_draft_probability() {
        let mut rng = RandomSource::new(2);
        let err = mrs(&cat(&[0.5, 0.5]), &cat(&[1.0, 0.0]), 1, &mut rng).unwrap_err();
        assert_eq!(err, Error::ZeroDraftProbability { token: 1 });
        assert!(mrs(&cat(&[0.5, 0.5]), &cat(&[1.0, 0.0]), 5, &mut rng).is_err());
        assert!(mrs(&cat(&[1.0]), &cat(&[1.0, 0.0]), 0, &mut rng).is_err());
    }

    #[test]
    fn mrs_consumes_fixed_uniforms() {
        let (p, q) = (cat(&[1.0, 0.0]), cat(&[0.0, 1.0]));
        let mut a = RandomSource::new(3);
        mrs(&p, &q, 1, &mut a).unwrap();
        let mut b = RandomSource::new(3);
        b.draw_uniform01();
        b.draw_uniform01();
        assert_eq!(a.next_u64(), b.next_u64());

        let mut a = RandomSource::new(3);
        mrs(&q, &q, 1, &mut a).unwrap();
        let mut b = RandomSource::new(3);
        b.draw_uniform01();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn mrs_output_law_matches_target_empirically() {
        let (p, q) = (cat(&[0.1, 0.2, 0.3, 0.4]), cat(&[0.4, 0.3, 0.2, 0.1]));
        let mut rng = RandomSource::new(4);
        let n = 400_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let x = sample_independent(&q, &mut rng);
            counts[mrs(&p, &q, x, &mut rng).unwrap().token] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            assert!(
                within_3_sigma(*c as f64 / n as f64, p.prob(i), n),
                "{counts:?}"
            );
        }
    }

    #[test]
    fn gumbel_examples() {
        assert!(gumbel_from_uniform(1.0 / std::f64::consts::E).abs() < 1e-15);
        assert!(gumbel_from_uniform(0.0).is_finite());
        assert!(gumbel_from_uniform(1.0).is_finite());

        let mut rng = RandomSource::new(5);
        let n = 1_000_000;
        let g = sample_gumbel_noise(n, &mut rng).unwrap();
        let mean = g.values().iter().sum::<f64>() / n as f64;
        let var = g.values().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let euler_gamma = 0.577_215_664_901_532_9;
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!(
            (mean - euler_gamma).abs() <= 3.0 * (pi2_6 / n as f64).sqrt(),
            "mean {mean}"
        );
        // sample variance has variance (μ4 − σ⁴)/n; Gumbel excess kurtosis is 12/5,
        // so μ4 − σ⁴ = σ⁴ (2 + 12/5)
        let var_se = (pi2_6 * pi2_6 * (2.0 + 12.0 / 5.0) / n as f64).sqrt();
        assert!((var - pi2_6).abs() <= 3.0 * var_se, "var {var}");
        assert!(sample_gumbel_noise(0, &mut rng).is_err());
    }

    #[test]
    fn gs_identical_inputs_collide() {
        let mut rng = RandomSource::new(6);
        let p = cat(&[0.2, 0.3, 0.5]);
        for _ in 0..1000 {
            let g = sample_gumbel_noise(3, &mut rng).unwrap();
            let (x, y) = gs_couple(&p, &p, &g).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn gs_masked_tokens_never_win() {
        let p = cat(&[0.0, 1.0]);
        let g = GumbelVector::from_noise(vec![1e6, 0.0]).unwrap();
        assert_eq!(gumbel_argmax(&p, &g).unwrap(), 1);
        let tie = GumbelVector::from_noise(vec![0.0, 0.0]).unwrap();
        assert_eq!(gumbel_argmax(&cat(&[0.5, 0.5]), &tie).unwrap(), 0);
    }

    #[test]
    fn gs_binary_collision_is_maximal() {
        let (p, q) = (cat(&[0.6, 0.4]), cat(&[0.4, 0.6]));
        let mut rng = RandomSource::new(7);
        let m = 100_000;
        let hits = (0..m)
            .filter(|_| {
                let g = sample_gumbel_noise(2, &mut rng).unwrap();
                let (x, y) = gs_couple(&p, &q, &g).unwrap();
                x == y
            })
            .count();
        let freq = hits as f64 / m as f64;
        assert!(within_3_sigma(freq, 0.8, m), "freq {freq}");
        let lower = (1.0 - 0.2) / (1.0 + 0.2);
        assert!(freq >= lower - 3.0 * (lower * (1.0 - lower) / m as f64).sqrt());
    }

    #[test]
    fn gs_binary_closed_form_via_logistic() {
        // X = 0 iff g0 − g1 > ln(p1/p0); g0 − g1 is standard logistic.
        // P[X = Y] = P[D > max(a, b)] + P[D < min(a, b)].
        let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (p0, q0) = (0.6f64, 0.4f64);
        let a = ((1.0 - p0) / p0).ln();
        let b = ((1.0 - q0) / q0).ln();
        let collide = (1.0 - sigmoid(a.max(b))) + sigmoid(a.min(b));
        assert!((collide - 0.8).abs() < 1e-12);
    }

    #[test]
    fn maximal_cost_examples() {
        let p = cat(&[0.3, 0.7]);
        assert_eq!(maximal_coupling_cost(&p, &p).unwrap(), 1.0);
        assert_eq!(
            maximal_coupling_cost(&cat(&[1.0, 0.0]), &cat(&[0.0, 1.0])).unwrap(),
            0.0
        );
        assert!(
            (maximal_coupling_cost(&cat(&[0.6, 0.4]), &cat(&[0.4, 0.6])).unwrap() - 0.8).abs()
                < 1e-12
        );
    }

    #[test]
    fn joint_examples() {
        let j = mrs_joint_distribution(&cat(&[0.5, 0.5]), &cat(&[0.5, 0.5])).unwrap();
        assert_eq!(
            (j.at(0, 0), j.at(0, 1), j.at(1, 0), j.at(1, 1)),
            (0.5, 0.0, 0.0, 0.5)
        );

        let j = mrs_joint_distribution(&cat(&[1.0, 0.0]), &cat(&[0.0, 1.0])).unwrap();
        assert_eq!(j.at(1, 0), 1.0);
        assert_eq!(j.at(0, 0) + j.at(0, 1) + j.at(1, 1), 0.0);

        let (p, q) = (cat(&[0.6, 0.4]), cat(&[0.4, 0.6]));
        let j = mrs_joint_distribution(&p, &q).unwrap();
        assert!((j.diagonal_mass() - 0.8).abs() < 1e-12);
        for (r, e) in j.row_sums().iter().zip(q.probs()) {
            assert!((r - e).abs() < 1e-12);
        }
        for (c, e) in j.col_sums().iter().zip(p.probs()) {
            assert!((c - e).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_budget() {
        let u = Categorical::uniform(8).unwrap();
        assert!(matches!(
            mrs_joint_distribution_with_budget(&u, &u, 63),
            Err(Error::Size { .. })
        ));
        assert!(mrs_joint_distribution_with_budget(&u, &u, 64).is_ok());
    }

    #[test]
    fn joint_matches_simulated_mrs() {
        // independent route: tabulate simulated (x, y) pairs
        let (p, q) = (cat(&[0.5, 0.1, 0.4]), cat(&[0.2, 0.6, 0.2]));
        let j = mrs_joint_distribution(&p, &q).unwrap();
        let mut rng = RandomSource::new(8);
        let n = 300_000;
        let mut counts = [[0usize; 3]; 3];
        for _ in 0..n {
            let x = sample_independent(&q, &mut rng);
            counts[x][mrs(&p, &q, x, &mut rng).unwrap().token] += 1;
        }
        for x in 0..3 {
            for y in 0..3 {
                let f = counts[x][y] as f64 / n as f64;
                let mu = j.at(x, y);
                assert!(
                    (f - mu).abs() <= 3.5 * (mu * (1.0 - mu) / n as f64).sqrt() + 1e-12,
                    "({x},{y})"
                );
            }
        }
    }

    fn arb_pair() -> impl Strategy<Value = (Categorical, Categorical)> {
        (1usize..7).prop_flat_map(|v| {
            let c = || {
                proptest::collection::vec(0.0f64..1.0, v)
                    .prop_filter_map("mass", |w| Categorical::from_weights(w).ok())
            };
            (c(), c())
        })
    }

    proptest! {
        #[test]
        fn joint_is_maximal_coupling((p, q) in arb_pair()) {
            let j = mrs_joint_distribution(&p, &q).unwrap();
            for (r, e) in j.row_sums().iter().zip(q.probs()) {
                prop_assert!((r - e).abs() < 1e-12);
            }
            for (c, e) in j.col_sums().iter().zip(p.probs()) {
                prop_assert!((c - e).abs() < 1e-12);
            }
            prop_assert!((j.diagonal_mass() - maximal_coupling_cost(&p, &q).unwrap()).abs() < 1e-12);
            prop_assert!(independent_collision(&p, &q).unwrap() <= j.diagonal_mass() + 1e-12);
        }

        #[test]
        fn seeded_replay(seed in any::<u64>()) {
            let p = cat(&[0.2, 0.3, 0.5]);
            let q = cat(&[0.5, 0.3, 0.2]);
            let run = |seed| {
                let mut rng = RandomSource::new(seed);
                let g = sample_gumbel_noise(3, &mut rng).unwrap();
                let x = sample_independent(&q, &mut rng);
                (gs_couple(&p, &q, &g).unwrap(), mrs(&p, &q, x, &mut rng).unwrap(), g)
            };
            prop_assert_eq!(run(seed), run(seed));
        }
    }
}
