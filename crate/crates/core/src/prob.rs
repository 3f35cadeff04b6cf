//! Finite categorical distributions and the quantities the couplers are
//! judged by: total variation, Rényi-2 entropy, collision probability and
//! the residual law left over after a rejection.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Token id. Always `< vocab_size` of whatever distribution or model it is
/// used with.
pub type Token = usize;

/// Tolerance on `Σp − 1` accepted (and then renormalized away) at construction.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Normalized probability vector over a finite vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Builds a distribution from probabilities that already sum to one
    /// (within [`NORMALIZATION_TOLERANCE`]).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty vocabulary".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {bad} is not a finite non-negative probability"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(Self {
            probs: probs.into_iter().map(|p| p / sum).collect(),
        })
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("empty vocabulary".into()));
        }
        if let Some(bad) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "weight {bad} is not finite and non-negative"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::ZeroMass);
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    pub fn uniform(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidDistribution("empty vocabulary".into()));
        }
        Ok(Self {
            probs: vec![1.0 / vocab_size as f64; vocab_size],
        })
    }

    pub fn point_mass(vocab_size: usize, token: Token) -> Result<Self> {
        if token >= vocab_size {
            return Err(Error::TokenOutOfRange { token, vocab_size });
        }
        let mut probs = vec![0.0; vocab_size];
        probs[token] = 1.0;
        Ok(Self { probs })
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, token: Token) -> f64 {
        self.probs.get(token).copied().unwrap_or(0.0)
    }

    /// Inverse-CDF lookup: the first token whose cumulative mass exceeds
    /// `u ∈ [0, 1)`. Zero-probability tokens are never returned.
    pub fn sample_with_uniform(&self, u: f64) -> Token {
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (token, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            cum += p;
            last_positive = token;
            if u < cum {
                return token;
            }
        }
        // rounding left the total a hair under u
        last_positive
    }

    pub fn argmax(&self) -> Token {
        argmax_lowest(&self.probs)
    }

    fn check_same_size(&self, other: &Categorical) -> Result<()> {
        if self.vocab_size() != other.vocab_size() {
            return Err(Error::Dimension {
                expected: self.vocab_size(),
                actual: other.vocab_size(),
            });
        }
        Ok(())
    }
}

/// Index of the largest value, lowest index on ties. NaN never wins.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] || values[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Unnormalized log-odds. `-inf` marks a masked token.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    values: Vec<f64>,
}

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidLogits("empty vocabulary".into()));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidLogits(
                "entries must be finite or -inf".into(),
            ));
        }
        if values.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::InvalidLogits("every token is masked".into()));
        }
        Ok(Self { values })
    }

    pub fn vocab_size(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn softmax(&self) -> Categorical {
        let max = self
            .values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = self
            .values
            .iter()
            .map(|&v| {
                if v == f64::NEG_INFINITY {
                    0.0
                } else {
                    (v - max).exp()
                }
            })
            .collect();
        let sum: f64 = weights.iter().sum();
        Categorical {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        }
    }
}

/// `½ Σ |p(v) − q(v)|`.
pub fn tv_distance(p: &Categorical, q: &Categorical) -> Result<f64> {
    p.check_same_size(q)?;
    let l1: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok((0.5 * l1).clamp(0.0, 1.0))
}

/// `−ln Σ p(x)²`, in nats.
pub fn renyi2_entropy(p: &Categorical) -> f64 {
    let sum_sq: f64 = p.probs.iter().map(|x| x * x).sum();
    (-sum_sq.ln()).max(0.0)
}

/// Collision probability of two independent draws, `Σ p(x) q(x)`.
pub fn independent_collision(p: &Categorical, q: &Categorical) -> Result<f64> {
    p.check_same_size(q)?;
    Ok(p.probs.iter().zip(&q.probs).map(|(a, b)| a * b).sum())
}

/// `exp(−½ (H₂(p) + H₂(q)))`, the Cauchy–Schwarz ceiling on
/// [`independent_collision`].
pub fn renyi2_collision_bound(p: &Categorical, q: &Categorical) -> f64 {
    (-0.5 * (renyi2_entropy(p) + renyi2_entropy(q))).exp()
}

/// Positive part of `p − q`, unnormalized. Its mass equals `tv_distance(p, q)`.
pub fn residual_weights(p: &Categorical, q: &Categorical) -> Result<Vec<f64>> {
    p.check_same_size(q)?;
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| (a - b).max(0.0))
        .collect())
}

/// `norm(max(0, p − q))`. Fails with [`Error::ZeroMass`] when `p = q`.
pub fn residual_distribution(p: &Categorical, q: &Categorical) -> Result<Categorical> {
    Categorical::from_weights(residual_weights(p, q)?)
}

/// Classifier-free guidance: `(1 + λ)·c − λ·u`. Masked entries stay masked.
pub fn mix_cfg(cond: &Logits, uncond: &Logits, scale: f64) -> Result<Logits> {
    if cond.vocab_size() != uncond.vocab_size() {
        return Err(Error::Dimension {
            expected: cond.vocab_size(),
            actual: uncond.vocab_size(),
        });
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(param(
            "cfg_scale",
            format!("must be finite and >= 0, got {scale}"),
        ));
    }
    if scale == 0.0 {
        return Ok(cond.clone());
    }
    let values = cond
        .values
        .iter()
        .zip(&uncond.values)
        .map(|(&c, &u)| {
            if c == f64::NEG_INFINITY || u == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                (1.0 + scale) * c - scale * u
            }
        })
        .collect();
    Logits::new(values)
}

/// Sampling knobs applied on top of the raw model logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default)]
    pub cfg_scale: f64,
}

fn default_temperature() -> f64 {
    1.0
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: None,
            top_p: None,
            cfg_scale: 0.0,
        }
    }
}

impl SamplingParams {
    pub fn greedy() -> Self {
        Self {
            top_k: Some(1),
            ..Self::default()
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(param(
                "sampling.temperature",
                "must be a positive finite number",
            ));
        }
        if let Some(k) = self.top_k {
            if k == 0 || k > vocab_size {
                return Err(param(
                    "sampling.top_k",
                    format!("must lie in [1, {vocab_size}], got {k}"),
                ));
            }
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(param(
                    "sampling.top_p",
                    format!("must lie in (0, 1], got {p}"),
                ));
            }
        }
        if !(self.cfg_scale >= 0.0 && self.cfg_scale.is_finite()) {
            return Err(param("sampling.cfg_scale", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Temperature, then top-k, then top-p, then softmax.
pub fn apply_processors(
    logits: &Logits,
    temperature: f64,
    top_k: Option<usize>,
    top_p: Option<f64>,
) -> Result<Categorical> {
    let vocab = logits.vocab_size();
    SamplingParams {
        temperature,
        top_k,
        top_p,
        cfg_scale: 0.0,
    }
    .validate(vocab)?;

    let mut values: Vec<f64> = logits.values.iter().map(|v| v / temperature).collect();

    if let Some(k) = top_k {
        if k < vocab {
            let order = sorted_desc(&values);
            for &token in &order[k..] {
                values[token] = f64::NEG_INFINITY;
            }
        }
    }

    if let Some(p) = top_p {
        if p < 1.0 {
            let probs = Logits {
                values: values.clone(),
            }
            .softmax();
            let order = sorted_desc(&probs.probs);
            let mut cum = 0.0;
            let mut keep = order.len();
            for (rank, &token) in order.iter().enumerate() {
                cum += probs.probs[token];
                if cum >= p - 1e-12 {
                    keep = rank + 1;
                    break;
                }
            }
            for &token in &order[keep..] {
                values[token] = f64::NEG_INFINITY;
            }
        }
    }

    Ok(Logits { values }.softmax())
}

/// Token ids sorted by value descending, lower id first on ties.
fn sorted_desc(values: &[f64]) -> Vec<Token> {
    let mut order: Vec<Token> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}
