//! Autoregressive models and the exact sequence law they induce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::prob::{apply_processors, mix_cfg, Categorical, Logits, SamplingParams, Token};

pub type TokenSequence = Vec<Token>;

/// Largest logit table (contexts × vocabulary) a tabular model will allocate.
pub const MAX_TABLE_ENTRIES: usize = 1 << 26;

/// Default enumeration budget, in sequences.
pub const ENUMERATION_BUDGET: usize = 1_000_000;

/// Next-token model `p(· | prefix)`.
pub trait ArModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Maximum sequence length `N`.
    fn max_len(&self) -> usize;

    fn eval_next(&self, prefix: &[Token]) -> Result<Logits>;

    /// Logits of the guidance-free variant used for CFG, if the model has one.
    fn eval_unconditional(&self, _prefix: &[Token]) -> Result<Option<Logits>> {
        Ok(None)
    }

    /// Logits for every window position, each conditioned on `context`
    /// followed by the window tokens strictly before it.
    fn eval_window(&self, context: &[Token], window: &[Token]) -> Result<Vec<Logits>> {
        check_window_len(self.max_len(), context.len(), window.len())?;
        let mut prefix = Vec::with_capacity(context.len() + window.len());
        prefix.extend_from_slice(context);
        let mut out = Vec::with_capacity(window.len());
        for &token in window {
            out.push(self.eval_next(&prefix)?);
            prefix.push(token);
        }
        Ok(out)
    }
}

fn check_window_len(max_len: usize, context: usize, window: usize) -> Result<()> {
    if context + window > max_len {
        return Err(Error::Length {
            len: context + window,
            max: max_len,
        });
    }
    Ok(())
}

/// Configuration of a [`TabularModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub vocab_size: usize,
    /// Tokens of history the model conditions on.
    #[serde(default = "default_context_order")]
    pub context_order: usize,
    /// Divisor applied to the stored logits; larger is flatter.
    #[serde(default = "default_flatness")]
    pub flatness: f64,
    #[serde(default)]
    pub seed: u64,
    /// Seed of the unconditional table used for guidance; `seed + 1` if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncond_seed: Option<u64>,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_context_order() -> usize {
    1
}
fn default_flatness() -> f64 {
    1.0
}
fn default_max_len() -> usize {
    1024
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            vocab_size: 4,
            context_order: default_context_order(),
            flatness: default_flatness(),
            seed: 0,
            uncond_seed: None,
            max_len: default_max_len(),
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 1 {
            return Err(param("model.vocab_size", "must be >= 1"));
        }
        if !(self.flatness > 0.0 && self.flatness.is_finite()) {
            return Err(param("model.flatness", "must be a positive finite number"));
        }
        if self.max_len == 0 {
            return Err(param("model.max_len", "must be >= 1"));
        }
        let entries = table_entries(self.vocab_size, self.context_order);
        if entries.is_none_or(|e| e > MAX_TABLE_ENTRIES) {
            return Err(param(
                "model.context_order",
                format!("(vocab_size + 1)^context_order · vocab_size exceeds {MAX_TABLE_ENTRIES} entries"),
            ));
        }
        Ok(())
    }
}

fn table_entries(vocab: usize, order: usize) -> Option<usize> {
    (vocab + 1).checked_pow(order as u32)?.checked_mul(vocab)
}

/// Order-k Markov model backed by a table of standard-normal logits.
///
/// Histories shorter than `k` are left-padded with a begin-of-sequence
/// symbol (id `vocab_size`), so every position has a well-defined context.
#[derive(Debug, Clone)]
pub struct TabularModel {
    vocab: usize,
    order: usize,
    max_len: usize,
    cond: Vec<f64>,
    uncond: Option<Vec<f64>>,
}

impl TabularModel {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let cond = random_table(
            spec.vocab_size,
            spec.context_order,
            spec.seed,
            spec.flatness,
        );
        let uncond_seed = spec.uncond_seed.unwrap_or(spec.seed.wrapping_add(1));
        let uncond = random_table(
            spec.vocab_size,
            spec.context_order,
            uncond_seed,
            spec.flatness,
        );
        Ok(Self {
            vocab: spec.vocab_size,
            order: spec.context_order,
            max_len: spec.max_len,
            cond,
            uncond: Some(uncond),
        })
    }

    /// Builds a model from explicit tables laid out context-major; see
    /// [`TabularModel::context_index`].
    pub fn from_tables(
        vocab: usize,
        order: usize,
        max_len: usize,
        cond: Vec<f64>,
        uncond: Option<Vec<f64>>,
    ) -> Result<Self> {
        let entries = table_entries(vocab, order)
            .ok_or_else(|| param("model.context_order", "table too large"))?;
        if cond.len() != entries || uncond.as_ref().is_some_and(|u| u.len() != entries) {
            return Err(param("table", format!("expected {entries} entries")));
        }
        Ok(Self {
            vocab,
            order,
            max_len,
            cond,
            uncond,
        })
    }

    pub fn context_order(&self) -> usize {
        self.order
    }

    pub fn num_contexts(&self) -> usize {
        (self.vocab + 1).pow(self.order as u32)
    }

    /// Row of the table used after `prefix`: the last `k` tokens, most recent
    /// first, read as base-`(V + 1)` digits.
    pub fn context_index(&self, prefix: &[Token]) -> usize {
        let base = self.vocab + 1;
        let mut index = 0;
        let mut scale = 1;
        for back in 0..self.order {
            let sym = if back < prefix.len() {
                prefix[prefix.len() - 1 - back]
            } else {
                self.vocab
            };
            index += sym * scale;
            scale *= base;
        }
        index
    }

    /// Logits of table row `context` directly.
    pub fn row(&self, context: usize) -> Result<Logits> {
        Logits::new(self.cond[context * self.vocab..(context + 1) * self.vocab].to_vec())
    }

    fn check_prefix(&self, prefix: &[Token]) -> Result<()> {
        if prefix.len() >= self.max_len {
            return Err(Error::Length {
                len: prefix.len() + 1,
                max: self.max_len,
            });
        }
        if let Some(&token) = prefix.iter().find(|&&t| t >= self.vocab) {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: self.vocab,
            });
        }
        Ok(())
    }

    fn lookup(&self, table: &[f64], prefix: &[Token]) -> Result<Logits> {
        let row = self.context_index(prefix);
        Logits::new(table[row * self.vocab..(row + 1) * self.vocab].to_vec())
    }
}

fn random_table(vocab: usize, order: usize, seed: u64, flatness: f64) -> Vec<f64> {
    let entries = table_entries(vocab, order).expect("validated table size");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..entries)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / flatness
        })
        .collect()
}

impl ArModel for TabularModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn eval_next(&self, prefix: &[Token]) -> Result<Logits> {
        self.check_prefix(prefix)?;
        self.lookup(&self.cond, prefix)
    }

    fn eval_unconditional(&self, prefix: &[Token]) -> Result<Option<Logits>> {
        self.check_prefix(prefix)?;
        self.uncond
            .as_ref()
            .map(|t| self.lookup(t, prefix))
            .transpose()
    }
}

/// CFG mixing followed by the sampling processors.
pub fn process_logits<M: ArModel + ?Sized>(
    model: &M,
    cond: &Logits,
    prefix: &[Token],
    sampling: &SamplingParams,
) -> Result<Categorical> {
    let mixed = if sampling.cfg_scale > 0.0 {
        let uncond = model
            .eval_unconditional(prefix)?
            .ok_or(Error::MissingUnconditional(sampling.cfg_scale))?;
        mix_cfg(cond, &uncond, sampling.cfg_scale)?
    } else {
        cond.clone()
    };
    apply_processors(&mixed, sampling.temperature, sampling.top_k, sampling.top_p)
}

/// The law every decoder must reproduce at the position after `prefix`.
pub fn target_distribution<M: ArModel + ?Sized>(
    model: &M,
    prefix: &[Token],
    sampling: &SamplingParams,
) -> Result<Categorical> {
    let cond = model.eval_next(prefix)?;
    process_logits(model, &cond, prefix, sampling)
}

/// Target laws for every window position from one parallel evaluation.
pub fn target_window<M: ArModel + ?Sized>(
    model: &M,
    context: &[Token],
    window: &[Token],
    sampling: &SamplingParams,
) -> Result<Vec<Categorical>> {
    let logits = model.eval_window(context, window)?;
    let mut prefix = context.to_vec();
    let mut out = Vec::with_capacity(window.len());
    for (cond, &token) in logits.iter().zip(window) {
        out.push(process_logits(model, cond, &prefix, sampling)?);
        prefix.push(token);
    }
    Ok(out)
}

/// Exact probabilities of every sequence of one fixed length, stored densely
/// with the first token as the most significant base-`V` digit.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLaw {
    vocab: usize,
    len: usize,
    probs: Vec<f64>,
}

impl SequenceLaw {
    pub fn from_probs(vocab: usize, len: usize, probs: Vec<f64>) -> Result<Self> {
        let cells = (vocab as f64).powi(len as i32);
        if probs.len() as f64 != cells {
            return Err(param(
                "probs",
                format!("expected {cells} cells, got {}", probs.len()),
            ));
        }
        Ok(Self { vocab, len, probs })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn num_cells(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn index_of(&self, seq: &[Token]) -> Option<usize> {
        if seq.len() != self.len || seq.iter().any(|&t| t >= self.vocab) {
            return None;
        }
        Some(seq.iter().fold(0, |acc, &t| acc * self.vocab + t))
    }

    pub fn sequence_at(&self, mut index: usize) -> TokenSequence {
        let mut seq = vec![0; self.len];
        for slot in seq.iter_mut().rev() {
            *slot = index % self.vocab;
            index /= self.vocab;
        }
        seq
    }

    pub fn prob(&self, seq: &[Token]) -> f64 {
        self.index_of(seq).map_or(0.0, |i| self.probs[i])
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Sums out the final token.
    pub fn marginalize_last(&self) -> Option<SequenceLaw> {
        if self.len == 0 {
            return None;
        }
        let probs = self
            .probs
            .chunks(self.vocab)
            .map(|c| c.iter().sum())
            .collect();
        Some(SequenceLaw {
            vocab: self.vocab,
            len: self.len - 1,
            probs,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenSequence, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (self.sequence_at(i), p))
    }
}

pub fn enumerate_sequence_distribution<M: ArModel + ?Sized>(
    model: &M,
    sampling: &SamplingParams,
    len: usize,
) -> Result<SequenceLaw> {
    enumerate_with_budget(model, sampling, len, ENUMERATION_BUDGET)
}

/// Chain-rule expansion `∏ p(x_i | x_<i)` over every sequence of length `len`.
pub fn enumerate_with_budget<M: ArModel + ?Sized>(
    model: &M,
    sampling: &SamplingParams,
    len: usize,
    budget: usize,
) -> Result<SequenceLaw> {
    let vocab = model.vocab_size();
    let requested = (vocab as f64).powi(len as i32);
    if requested > budget as f64 {
        return Err(Error::Size { requested, budget });
    }
    if len > model.max_len() {
        return Err(Error::Length {
            len,
            max: model.max_len(),
        });
    }
    sampling.validate(vocab)?;
    let mut probs = Vec::with_capacity(requested as usize);
    let mut prefix = Vec::with_capacity(len);
    expand(model, sampling, len, &mut prefix, 1.0, &mut probs)?;
    Ok(SequenceLaw { vocab, len, probs })
}

fn expand<M: ArModel + ?Sized>(
    model: &M,
    sampling: &SamplingParams,
    len: usize,
    prefix: &mut TokenSequence,
    mass: f64,
    out: &mut Vec<f64>,
) -> Result<()> {
    if prefix.len() == len {
        out.push(mass);
        return Ok(());
    }
    let vocab = model.vocab_size();
    if mass == 0.0 {
        let remaining = vocab.pow((len - prefix.len()) as u32);
        out.extend(std::iter::repeat_n(0.0, remaining));
        return Ok(());
    }
    let next = target_distribution(model, prefix, sampling)?;
    for token in 0..vocab {
        prefix.push(token);
        expand(model, sampling, len, prefix, mass * next.prob(token), out)?;
        prefix.pop();
    }
    Ok(())
}
