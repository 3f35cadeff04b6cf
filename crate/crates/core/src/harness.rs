//! Experiment plumbing behind the command-line tool: configuration with
//! field-path overrides, the four commands, and CSV / report rendering.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::{CouplerKind, DecodeStats, Decoder, RejectionMode, SjdConfig, VerifyFault};
use crate::error::Error;
use crate::model::{ModelSpec, TabularModel, ENUMERATION_BUDGET};
use crate::oracle::{
    estimate_collisions, random_pairs, verify_lossless, PairCollisions, TestReport,
};
use crate::prob::{Categorical, SamplingParams};
use crate::rng::RandomSource;

const STREAM_PAIRS: u64 = 1;
const STREAM_COLLISIONS: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Io { .. } => 3,
        }
    }
}

impl From<Error> for HarnessError {
    fn from(e: Error) -> Self {
        HarnessError::Config(e.to_string())
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

/// Which decoder `generate` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplerSetting {
    Vanilla,
    Independent,
    Maximal,
    Gumbel,
}

impl CouplerSetting {
    pub fn kind(self) -> Option<CouplerKind> {
        match self {
            Self::Vanilla => None,
            Self::Independent => Some(CouplerKind::Independent),
            Self::Maximal => Some(CouplerKind::MaximalCoupling),
            Self::Gumbel => Some(CouplerKind::GumbelSharing),
        }
    }

    pub fn name(self) -> &'static str {
        self.kind().map_or("vanilla", CouplerKind::name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    /// Sequence length `n`.
    pub length: usize,
    /// Jacobi window `L`.
    pub window: usize,
    pub coupler: CouplerSetting,
    pub rejection: RejectionMode,
    #[doc(hidden)]
    pub fault: VerifyFault,
}

impl DecodeConfig {
    pub fn decoder(&self) -> Decoder {
        match self.coupler.kind() {
            None => Decoder::Vanilla,
            Some(kind) => Decoder::Jacobi(self.sjd(kind)),
        }
    }

    fn sjd(&self, kind: CouplerKind) -> SjdConfig {
        SjdConfig {
            fault: self.fault,
            ..SjdConfig::new(self.window, kind).with_rejection(self.rejection)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Report,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub format: OutputFormat,
    /// Destination file; standard output when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Fill the `wall_ms` column. Off by default so that reruns are
    /// byte-identical.
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub pairs: usize,
    /// Vocabulary sizes, used round-robin over the pairs.
    pub vocab: Vec<usize>,
    /// Log-uniform range of the flatness applied to the pair logits.
    pub flatness_range: [f64; 2],
    pub trials: usize,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            pairs: 50,
            vocab: vec![2, 8, 64],
            flatness_range: [0.25, 4.0],
            trials: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[serde(alias = "L")]
    Window,
    CfgScale,
    Flatness,
    Coupler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<toml::Value>,
    /// Decoders run at every sweep point (ignored when sweeping the coupler).
    pub couplers: Vec<CouplerSetting>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Window,
            values: [4, 8, 16, 32]
                .into_iter()
                .map(toml::Value::Integer)
                .collect(),
            couplers: vec![
                CouplerSetting::Independent,
                CouplerSetting::Maximal,
                CouplerSetting::Gumbel,
            ],
        }
    }
}

/// Everything a command needs. The default is the small losslessness setup
/// (vocabulary 4, five tokens, window 4, flatness 2, 2·10⁵ trials).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub sampling: SamplingParams,
    pub decode: DecodeConfig,
    pub run: RunConfig,
    pub output: OutputConfig,
    pub coupling: CouplingConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec {
                vocab_size: 4,
                flatness: 2.0,
                ..ModelSpec::default()
            },
            sampling: SamplingParams::default(),
            decode: DecodeConfig {
                length: 5,
                window: 4,
                coupler: CouplerSetting::Maximal,
                rejection: RejectionMode::Finalize,
                fault: VerifyFault::None,
            },
            run: RunConfig {
                trials: 200_000,
                seed: 0,
            },
            output: OutputConfig::default(),
            coupling: CouplingConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Builds a configuration from optional TOML text and `(field.path,
    /// value)` overrides. Missing fields take their defaults; override values
    /// are parsed as TOML literals and fall back to plain strings.
    pub fn load(text: Option<&str>, overrides: &[(String, String)]) -> HarnessResult<Self> {
        let mut tree = toml::Value::try_from(Self::default())
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(text) = text {
            let file: toml::Table =
                toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
            merge(&mut tree, toml::Value::Table(file));
        }
        for (path, raw) in overrides {
            set_path(&mut tree, path, parse_literal(raw))?;
        }
        let cfg: Self = tree
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> HarnessResult<()> {
        self.model.validate()?;
        self.sampling.validate(self.model.vocab_size)?;
        if self.decode.window == 0 {
            return Err(config("decode.window", "must be >= 1"));
        }
        if self.decode.length >= self.model.max_len {
            return Err(config(
                "decode.length",
                format!("must be below model.max_len = {}", self.model.max_len),
            ));
        }
        if self.run.trials == 0 {
            return Err(config("run.trials", "must be >= 1"));
        }
        let [lo, hi] = self.coupling.flatness_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(config(
                "coupling.flatness_range",
                "must satisfy 0 < min <= max",
            ));
        }
        if self.coupling.vocab.is_empty() || self.coupling.vocab.contains(&0) {
            return Err(config(
                "coupling.vocab",
                "must list positive vocabulary sizes",
            ));
        }
        if self.coupling.trials == 0 {
            return Err(config("coupling.trials", "must be >= 1"));
        }
        Ok(())
    }

    /// Hash of the fields that determine `generate` / `verify-lossless`
    /// results. The seed and output settings are excluded.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Identity<'a> {
            model: &'a ModelSpec,
            sampling: &'a SamplingParams,
            decode: &'a DecodeConfig,
            trials: usize,
        }
        digest(&Identity {
            model: &self.model,
            sampling: &self.sampling,
            decode: &self.decode,
            trials: self.run.trials,
        })
    }

    fn coupling_fingerprint(&self) -> String {
        digest(&self.coupling)
    }

    fn sweep_fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Identity<'a> {
            base: String,
            sweep: &'a SweepConfig,
        }
        digest(&Identity {
            base: self.fingerprint(),
            sweep: &self.sweep,
        })
    }

    fn model(&self) -> HarnessResult<TabularModel> {
        Ok(TabularModel::from_spec(&self.model)?)
    }
}

fn config(field: &str, reason: impl fmt::Display) -> HarnessError {
    HarnessError::Config(format!("invalid parameter `{field}`: {reason}"))
}

fn digest<T: Serialize>(value: &T) -> String {
    let canonical = toml::to_string(value).expect("configuration serializes to TOML");
    let hash = Sha256::digest(canonical.as_bytes());
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(tree: &mut toml::Value, path: &str, value: toml::Value) -> HarnessResult<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(HarnessError::Config(format!(
            "override `--{path}` must name a field as section.field"
        )));
    }
    let mut node = tree;
    for key in &keys[..keys.len() - 1] {
        let table = node.as_table_mut().expect("sections are tables");
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if !node.is_table() {
            return Err(HarnessError::Config(format!(
                "override `--{path}`: `{key}` is not a section"
            )));
        }
    }
    let table = node.as_table_mut().expect("checked above");
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Rows with a fixed column set.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

/// Result of one command: its rows plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub command: &'static str,
    pub seed: u64,
    pub fingerprint: String,
    pub table: Table,
    /// False iff a verification command found a failing check.
    pub passed: bool,
}

impl CommandOutput {
    /// CSV with a header row (seed and fingerprint as leading columns), or
    /// `name=value` blocks separated by blank lines.
    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                let mut header = vec!["seed", "fingerprint"];
                header.extend(&self.table.header);
                w.write_record(&header).expect("in-memory write");
                let seed = self.seed.to_string();
                for row in &self.table.rows {
                    let mut rec = vec![seed.as_str(), self.fingerprint.as_str()];
                    rec.extend(row.iter().map(String::as_str));
                    w.write_record(&rec).expect("in-memory write");
                }
                String::from_utf8(w.into_inner().expect("in-memory flush"))
                    .expect("csv output is utf-8")
            }
            OutputFormat::Report => {
                let mut out = format!(
                    "command={}\nseed={}\nfingerprint={}\n",
                    self.command, self.seed, self.fingerprint
                );
                for row in &self.table.rows {
                    out.push('\n');
                    for (k, v) in self.table.header.iter().zip(row) {
                        out.push_str(&format!("{k}={v}\n"));
                    }
                }
                out
            }
        }
    }
}

/// One trial or aggregate line of `generate` / `sweep` output.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub kind: &'static str,
    pub trial: Option<usize>,
    pub coupler: &'static str,
    pub window: Option<usize>,
    pub rejection: RejectionMode,
    pub cfg_scale: f64,
    pub flatness: f64,
    pub nfe_mean: f64,
    pub nfe_std: f64,
    pub accepted_per_iteration: f64,
    pub mean_hamming: Option<f64>,
    pub mean_beta: Option<f64>,
    pub wall_ms: Option<f64>,
    pub trials: usize,
    pub sequence: Option<Vec<usize>>,
}

impl ResultRow {
    pub const HEADER: [&'static str; 15] = [
        "kind",
        "trial",
        "coupler",
        "window",
        "rejection",
        "cfg_scale",
        "flatness",
        "nfe_mean",
        "nfe_std",
        "accepted_per_iteration",
        "mean_hamming",
        "mean_beta",
        "wall_ms",
        "trials",
        "sequence",
    ];

    fn cells(&self) -> Vec<String> {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let rejection = match self.rejection {
            RejectionMode::Finalize => "finalize",
            RejectionMode::Redraft => "redraft",
        };
        vec![
            self.kind.to_string(),
            opt(self.trial),
            self.coupler.to_string(),
            opt(self.window),
            rejection.to_string(),
            self.cfg_scale.to_string(),
            self.flatness.to_string(),
            self.nfe_mean.to_string(),
            self.nfe_std.to_string(),
            self.accepted_per_iteration.to_string(),
            opt(self.mean_hamming),
            opt(self.mean_beta),
            opt(self.wall_ms),
            self.trials.to_string(),
            self.sequence
                .as_ref()
                .map(|s| {
                    s.iter()
                        .map(|t| t.to_string())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .unwrap_or_default(),
        ]
    }
}

fn table(header: &[&'static str], rows: Vec<Vec<String>>) -> Table {
    Table {
        header: header.to_vec(),
        rows,
    }
}

struct Trial {
    seq: Vec<usize>,
    stats: DecodeStats,
    wall_ms: f64,
}

fn run(cfg: &ExperimentConfig) -> HarnessResult<Vec<Trial>> {
    let model = cfg.model()?;
    let decoder = cfg.decode.decoder();
    let master = RandomSource::new(cfg.run.seed);
    let trials: crate::Result<Vec<Trial>> = (0..cfg.run.trials)
        .into_par_iter()
        .map(|k| {
            let start = Instant::now();
            let (seq, stats) = decoder.decode(
                &model,
                &cfg.sampling,
                cfg.decode.length,
                &master.derive(k as u64),
            )?;
            Ok(Trial {
                seq,
                stats,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect();
    Ok(trials?)
}

fn row_template(cfg: &ExperimentConfig) -> ResultRow {
    ResultRow {
        kind: "aggregate",
        trial: None,
        coupler: cfg.decode.coupler.name(),
        window: cfg.decode.coupler.kind().map(|_| cfg.decode.window),
        rejection: cfg.decode.rejection,
        cfg_scale: cfg.sampling.cfg_scale,
        flatness: cfg.model.flatness,
        nfe_mean: 0.0,
        nfe_std: 0.0,
        accepted_per_iteration: 0.0,
        mean_hamming: None,
        mean_beta: None,
        wall_ms: None,
        trials: 0,
        sequence: None,
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn aggregate(cfg: &ExperimentConfig, trials: &[Trial]) -> ResultRow {
    let nfe: Vec<f64> = trials.iter().map(|t| t.stats.nfe as f64).collect();
    let m = mean(&nfe).unwrap_or(0.0);
    let std = if nfe.len() > 1 {
        (nfe.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nfe.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let api: Vec<f64> = trials
        .iter()
        .map(|t| t.stats.accepted_per_iteration())
        .collect();
    let ham: Vec<f64> = trials
        .iter()
        .filter_map(|t| t.stats.mean_hamming())
        .collect();
    let beta: Vec<f64> = trials.iter().filter_map(|t| t.stats.mean_beta()).collect();
    ResultRow {
        nfe_mean: m,
        nfe_std: std,
        accepted_per_iteration: mean(&api).unwrap_or(0.0),
        mean_hamming: mean(&ham),
        mean_beta: mean(&beta),
        wall_ms: cfg
            .output
            .timing
            .then(|| trials.iter().map(|t| t.wall_ms).sum()),
        trials: trials.len(),
        ..row_template(cfg)
    }
}

/// Runs `run.trials` decodes; one row per trial followed by an aggregate row.
pub fn cmd_generate(cfg: &ExperimentConfig) -> HarnessResult<CommandOutput> {
    let trials = run(cfg)?;
    let mut rows: Vec<Vec<String>> = trials
        .iter()
        .enumerate()
        .map(|(k, t)| {
            ResultRow {
                kind: "trial",
                trial: Some(k),
                nfe_mean: t.stats.nfe as f64,
                accepted_per_iteration: t.stats.accepted_per_iteration(),
                mean_hamming: t.stats.mean_hamming(),
                mean_beta: t.stats.mean_beta(),
                wall_ms: cfg.output.timing.then_some(t.wall_ms),
                trials: 1,
                sequence: Some(t.seq.clone()),
                ..row_template(cfg)
            }
            .cells()
        })
        .collect();
    rows.push(aggregate(cfg, &trials).cells());
    Ok(CommandOutput {
        command: "generate",
        seed: cfg.run.seed,
        fingerprint: cfg.fingerprint(),
        table: table(&ResultRow::HEADER, rows),
        passed: true,
    })
}

/// Decoders checked by `verify-lossless`: vanilla, then every coupler under
/// both rejection conventions.
pub fn lossless_decoders(cfg: &ExperimentConfig) -> Vec<Decoder> {
    let mut out = vec![Decoder::Vanilla];
    for rejection in [RejectionMode::Finalize, RejectionMode::Redraft] {
        for kind in CouplerKind::ALL {
            let decode = DecodeConfig {
                rejection,
                ..cfg.decode.clone()
            };
            out.push(Decoder::Jacobi(decode.sjd(kind)));
        }
    }
    out
}

pub const REPORT_HEADER: [&str; 7] = [
    "name",
    "statistic",
    "value",
    "threshold",
    "result",
    "samples",
    "notes",
];

fn report_cells(r: &TestReport) -> Vec<String> {
    vec![
        r.name.clone(),
        r.statistic.clone(),
        r.value.to_string(),
        r.threshold.to_string(),
        r.verdict().to_string(),
        r.samples.to_string(),
        r.notes.clone(),
    ]
}

/// Empirical law of every decoder against the enumerated law; `passed`
/// iff every TV and goodness-of-fit check passes.
pub fn cmd_verify_lossless(cfg: &ExperimentConfig) -> HarnessResult<CommandOutput> {
    let model = cfg.model()?;
    let cells = (cfg.model.vocab_size as f64).powi(cfg.decode.length as i32);
    if cells > ENUMERATION_BUDGET as f64 {
        let n_max = (ENUMERATION_BUDGET as f64).ln() / (cfg.model.vocab_size as f64).ln();
        let v_max = (ENUMERATION_BUDGET as f64).powf(1.0 / cfg.decode.length as f64);
        return Err(HarnessError::Config(format!(
            "enumeration of {cells} sequences exceeds budget of {ENUMERATION_BUDGET}; \
             use decode.length <= {} at this vocabulary or model.vocab_size <= {} at this length",
            n_max.floor() as usize,
            v_max.floor() as usize
        )));
    }
    let master = RandomSource::new(cfg.run.seed);
    let verdicts = verify_lossless(
        &model,
        &cfg.sampling,
        cfg.decode.length,
        cfg.run.trials,
        &lossless_decoders(cfg),
        &master,
    )?;
    let passed = verdicts.iter().all(|v| v.passed());
    let rows = verdicts
        .iter()
        .flat_map(|v| [report_cells(&v.tv), report_cells(&v.gof)])
        .collect();
    Ok(CommandOutput {
        command: "verify-lossless",
        seed: cfg.run.seed,
        fingerprint: cfg.fingerprint(),
        table: table(&REPORT_HEADER, rows),
        passed,
    })
}

pub const COUPLING_HEADER: [&str; 13] = [
    "pair",
    "vocab",
    "tv",
    "renyi2_p",
    "renyi2_q",
    "independent_analytic",
    "independent_empirical",
    "renyi2_bound",
    "maximal_cost",
    "maximal_empirical",
    "gumbel_empirical",
    "gumbel_lower_bound",
    "trials",
];

/// Collision statistics for each pair, sorted by TV (ties by pair index).
pub fn coupling_rows(
    pairs: &[(Categorical, Categorical)],
    trials: usize,
    rng: &RandomSource,
) -> crate::Result<Vec<(usize, PairCollisions)>> {
    let mut rows: Vec<(usize, PairCollisions)> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (p, q))| estimate_collisions(p, q, trials, &rng.derive(i as u64)).map(|c| (i, c)))
        .collect::<crate::Result<_>>()?;
    rows.sort_by(|a, b| a.1.tv.total_cmp(&b.1.tv).then(a.0.cmp(&b.0)));
    Ok(rows)
}

fn collision_cells(i: usize, c: &PairCollisions) -> Vec<String> {
    vec![
        i.to_string(),
        c.vocab_size.to_string(),
        c.tv.to_string(),
        c.renyi2_p.to_string(),
        c.renyi2_q.to_string(),
        c.independent_analytic.to_string(),
        c.independent_empirical.to_string(),
        c.renyi2_bound.to_string(),
        c.maximal_cost.to_string(),
        c.maximal_empirical.to_string(),
        c.gumbel_empirical.to_string(),
        c.gumbel_lower_bound.to_string(),
        c.trials.to_string(),
    ]
}

/// Random pairs per the `coupling` section, one row per pair.
pub fn cmd_coupling_stats(cfg: &ExperimentConfig) -> HarnessResult<CommandOutput> {
    let c = &cfg.coupling;
    let master = RandomSource::new(cfg.run.seed);
    let pairs = random_pairs(
        c.pairs,
        &c.vocab,
        (c.flatness_range[0], c.flatness_range[1]),
        &master.derive(STREAM_PAIRS),
    )?;
    let rows = coupling_rows(&pairs, c.trials, &master.derive(STREAM_COLLISIONS))?;
    Ok(CommandOutput {
        command: "coupling-stats",
        seed: cfg.run.seed,
        fingerprint: cfg.coupling_fingerprint(),
        table: table(
            &COUPLING_HEADER,
            rows.iter().map(|(i, c)| collision_cells(*i, c)).collect(),
        ),
        passed: true,
    })
}

/// Configurations visited by a sweep, in output order.
pub fn sweep_points(cfg: &ExperimentConfig) -> HarnessResult<Vec<ExperimentConfig>> {
    let s = &cfg.sweep;
    if s.values.is_empty() {
        return Err(config("sweep.values", "must not be empty"));
    }
    let couplers = if s.axis == SweepAxis::Coupler {
        vec![cfg.decode.coupler]
    } else {
        s.couplers.clone()
    };
    if couplers.is_empty() {
        return Err(config("sweep.couplers", "must not be empty"));
    }
    let mut points = Vec::new();
    for value in &s.values {
        for &coupler in &couplers {
            let mut point = cfg.clone();
            point.decode.coupler = coupler;
            match s.axis {
                SweepAxis::Window => {
                    let w = value
                        .as_integer()
                        .filter(|w| *w >= 1)
                        .ok_or_else(|| bad_value(value, "a positive integer"))?;
                    point.decode.window = w as usize;
                }
                SweepAxis::CfgScale => point.sampling.cfg_scale = as_float(value)?,
                SweepAxis::Flatness => point.model.flatness = as_float(value)?,
                SweepAxis::Coupler => {
                    point.decode.coupler = value
                        .clone()
                        .try_into()
                        .map_err(|_| bad_value(value, "vanilla|independent|maximal|gumbel"))?;
                }
            }
            point.validate()?;
            points.push(point);
        }
    }
    Ok(points)
}

fn as_float(v: &toml::Value) -> HarnessResult<f64> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| bad_value(v, "a number"))
}

fn bad_value(v: &toml::Value, expected: &str) -> HarnessError {
    config("sweep.values", format!("expected {expected}, got {v}"))
}

/// One aggregate row per (value, coupler). Every point reuses the same
/// master seed, so trial `k` shares its substream across the sweep.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> HarnessResult<CommandOutput> {
    let mut rows = Vec::new();
    for point in sweep_points(cfg)? {
        let trials = run(&point)?;
        rows.push(aggregate(&point, &trials).cells());
    }
    Ok(CommandOutput {
        command: "sweep",
        seed: cfg.run.seed,
        fingerprint: cfg.sweep_fingerprint(),
        table: table(&ResultRow::HEADER, rows),
        passed: true,
    })
}
