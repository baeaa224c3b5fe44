//! Experiment configuration in a strict INI-style format.
//!
//! Grammar, one construct per line:
//!
//! ```text
//! # comment            ; comment
//! [section]
//! key = value
//! ```
//!
//! Sections `[experiment]`, `[training]`, `[model]`, `[difficulty]` and
//! `[output]` may appear at most once. Each `[client]` section adds a training
//! client and exactly one `[test]` section describes the held-out centre.
//! Unknown sections or keys, duplicate keys, and malformed values are parse
//! errors; values that parse but break an invariant are validation errors.
//! List values are comma separated; ranges are written `lo..hi` (inclusive);
//! image sizes `HxW`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::difficulty::{DifficultyConfig, Regime};
use crate::error::{Error, Result};
use crate::fl::{StrategyConfig, StrategyKind, TrainingSetup};
use crate::model::ArchDescriptor;
use crate::morphology::{Connectivity, StructuringElement};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::synth::{default_federation_specs, ClientDataSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub strategies: Vec<StrategyKind>,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub arch: ArchDescriptor,
    pub optimizer: OptimizerConfig<f64>,
    pub difficulty: DifficultyConfig<f64>,
    /// Probability cut-off for binarising predictions during evaluation.
    pub eval_threshold: f64,
    /// Training clients followed by the test centre.
    pub clients: Vec<ClientDataSpec>,
    pub output_dir: PathBuf,
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            rounds: 20,
            strategies: vec![StrategyKind::FedGs, StrategyKind::FedAvg],
            batch_size: 4,
            local_epochs: 2,
            arch: ArchDescriptor::default(),
            optimizer: OptimizerConfig::adamw(1e-4),
            difficulty: DifficultyConfig {
                threshold: 18.0,
                ..DifficultyConfig::polyp()
            },
            eval_threshold: 0.5,
            clients: default_federation_specs(),
            output_dir: PathBuf::from("results"),
            record_wall_time: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Validation("at least one seed is required".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Validation("rounds must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Validation("at least one strategy is required".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.strategies.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Validation(format!("strategy {} listed twice", dup.name())));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Validation(format!("seed {dup} listed twice")));
        }
        if !(self.eval_threshold > 0.0 && self.eval_threshold < 1.0) {
            return Err(Error::Validation(format!(
                "eval_threshold {} must lie in (0, 1)",
                self.eval_threshold
            )));
        }
        if self.clients.len() < 2 {
            return Err(Error::Validation("need at least one [client] and one [test] section".into()));
        }
        for spec in &self.clients {
            spec.validate()?;
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.clients.iter().find(|c| !seen.insert(c.seed_offset)) {
            return Err(Error::Validation(format!("duplicate seed_offset {}", dup.seed_offset)));
        }
        self.setup(StrategyKind::FedGs).validate()
    }

    pub fn setup(&self, kind: StrategyKind) -> TrainingSetup<f64> {
        TrainingSetup {
            arch: self.arch,
            optimizer: self.optimizer,
            strategy: StrategyConfig {
                kind,
                difficulty: self.difficulty,
                batch_size: self.batch_size,
                local_epochs: self.local_epochs,
            },
        }
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_ini(&self) -> String {
        let list = |v: Vec<String>| v.join(", ");
        let mut s = String::new();
        s.push_str("# fedgs-sim experiment configuration\n");
        s.push_str("# Unknown keys or sections are rejected. Lists are comma separated,\n");
        s.push_str("# ranges are lo..hi (inclusive), image sizes are HxW.\n\n");

        s.push_str("[experiment]\n");
        s.push_str("# one full run per (seed, strategy)\n");
        s.push_str(&format!(
            "seeds = {}\n",
            list(self.seeds.iter().map(u64::to_string).collect())
        ));
        s.push_str(&format!("rounds = {}\n", self.rounds));
        s.push_str("# fedgs and/or fedavg\n");
        s.push_str(&format!(
            "strategies = {}\n",
            list(self.strategies.iter().map(|k| k.name().to_string()).collect())
        ));
        s.push_str("# predictions >= eval_threshold count as foreground\n");
        s.push_str(&format!("eval_threshold = {}\n\n", self.eval_threshold));

        s.push_str("[training]\n");
        s.push_str(&format!("batch_size = {}\n", self.batch_size));
        s.push_str(&format!("local_epochs = {}\n", self.local_epochs));
        s.push_str("# sgd or adamw; the adam keys are ignored for sgd\n");
        s.push_str(&format!("optimizer = {}\n", optimizer_name(self.optimizer.kind)));
        s.push_str(&format!("learning_rate = {}\n", fmt_f64(self.optimizer.learning_rate)));
        s.push_str(&format!("beta1 = {}\n", fmt_f64(self.optimizer.beta1)));
        s.push_str(&format!("beta2 = {}\n", fmt_f64(self.optimizer.beta2)));
        s.push_str(&format!("epsilon = {}\n", fmt_f64(self.optimizer.epsilon)));
        s.push_str(&format!("weight_decay = {}\n\n", fmt_f64(self.optimizer.weight_decay)));

        s.push_str("[model]\n");
        s.push_str(&format!("hidden_channels = {}\n\n", self.arch.hidden_channels));

        s.push_str("[difficulty]\n");
        s.push_str("# blob_split (erode, use smallest lesion) or whole_mask\n");
        s.push_str(&format!("regime = {}\n", regime_name(self.difficulty.regime)));
        s.push_str(&format!("log_base = {}\n", fmt_f64(self.difficulty.log_base)));
        s.push_str("# inverse relative area at or above which a mask counts as small\n");
        s.push_str(&format!("threshold = {}\n", fmt_f64(self.difficulty.threshold)));
        s.push_str(&format!("erosion_iterations = {}\n", self.difficulty.erosion_iterations));
        s.push_str("# square3 or cross3\n");
        s.push_str(&format!(
            "structuring_element = {}\n",
            element_name(self.difficulty.structuring_element)
        ));
        s.push_str("# four or eight\n");
        s.push_str(&format!(
            "connectivity = {}\n\n",
            connectivity_name(self.difficulty.connectivity)
        ));

        s.push_str("[output]\n");
        s.push_str(&format!("dir = {}\n", self.output_dir.display()));
        s.push_str("# false writes 0 in the wall_ms column so reruns are byte-identical\n");
        s.push_str(&format!("record_wall_time = {}\n", self.record_wall_time));

        let (test, train) = self.clients.split_last().expect("at least one client");
        for spec in train {
            s.push_str("\n[client]\n");
            write_spec(&mut s, spec);
        }
        s.push_str("\n# held-out centre, never trains\n[test]\n");
        write_spec(&mut s, test);
        s
    }
}

fn write_spec(s: &mut String, spec: &ClientDataSpec) {
    s.push_str(&format!("seed_offset = {}\n", spec.seed_offset));
    s.push_str(&format!("n_samples = {}\n", spec.n_samples));
    s.push_str(&format!("image_size = {}x{}\n", spec.height, spec.width));
    s.push_str(&format!(
        "lesions_per_image = {}..{}\n",
        spec.lesions_per_image.0, spec.lesions_per_image.1
    ));
    s.push_str(&format!("small_fraction = {}\n", fmt_f64(spec.small_fraction)));
    s.push_str(&format!(
        "small_radius = {}..{}\n",
        fmt_f64(spec.small_radius.0),
        fmt_f64(spec.small_radius.1)
    ));
    s.push_str(&format!(
        "large_radius = {}..{}\n",
        fmt_f64(spec.large_radius.0),
        fmt_f64(spec.large_radius.1)
    ));
    s.push_str(&format!("noise_std = {}\n", fmt_f64(spec.noise_std)));
    s.push_str(&format!("lesion_intensity = {}\n", fmt_f64(spec.lesion_intensity)));
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v:?}")
}

fn optimizer_name(k: OptimizerKind) -> &'static str {
    match k {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::AdamW => "adamw",
    }
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::BlobSplit => "blob_split",
        Regime::WholeMask => "whole_mask",
    }
}

fn element_name(e: StructuringElement) -> &'static str {
    match e {
        StructuringElement::Square3 => "square3",
        StructuringElement::Cross3 => "cross3",
    }
}

fn connectivity_name(c: Connectivity) -> &'static str {
    match c {
        Connectivity::Four => "four",
        Connectivity::Eight => "eight",
    }
}

/// Reads and parses a config file, then validates it.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// Parses and validates config text. Keys left out keep their defaults,
/// except that listing any `[client]`/`[test]` section replaces the default
/// federation.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut parser = Parser::default();
    let mut clients: Vec<ClientDataSpec> = Vec::new();
    let mut test: Option<ClientDataSpec> = None;
    let mut section: Option<Section> = None;
    let mut seen_sections: HashSet<&'static str> = HashSet::new();
    let mut seen_keys: HashSet<String> = HashSet::new();
    let mut test_offset_given = false;

    for (idx, raw) in text.lines().enumerate() {
        parser.line = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| parser.err(format!("unterminated section header {line:?}")))?
                .trim();
            let sec = Section::from_name(name).ok_or_else(|| parser.err(format!("unknown section [{name}]")))?;
            match sec {
                Section::Client => {
                    let seed_offset = clients.len() as u64;
                    clients.push(ClientDataSpec {
                        seed_offset,
                        ..ClientDataSpec::default()
                    });
                }
                Section::Test => {
                    if test.is_some() {
                        return Err(parser.err("section [test] appears twice".into()));
                    }
                    test = Some(ClientDataSpec::default());
                }
                other => {
                    if !seen_sections.insert(other.name()) {
                        return Err(parser.err(format!("section [{}] appears twice", other.name())));
                    }
                }
            }
            seen_keys.clear();
            section = Some(sec);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parser.err(format!("expected `key = value`, found {line:?}")))?;
        let key = key.trim();
        let value = value.trim();
        let sec = section.ok_or_else(|| parser.err(format!("key `{key}` outside of any section")))?;
        if !seen_keys.insert(key.to_string()) {
            return Err(parser.err(format!("duplicate key `{key}` in [{}]", sec.name())));
        }
        match sec {
            Section::Experiment => parser.experiment_key(&mut cfg, key, value)?,
            Section::Training => parser.training_key(&mut cfg, key, value)?,
            Section::Model => match key {
                "hidden_channels" => cfg.arch.hidden_channels = parser.value(key, value)?,
                _ => return Err(parser.unknown(key, sec)),
            },
            Section::Difficulty => parser.difficulty_key(&mut cfg, key, value)?,
            Section::Output => match key {
                "dir" => cfg.output_dir = PathBuf::from(value),
                "record_wall_time" => cfg.record_wall_time = parser.value(key, value)?,
                _ => return Err(parser.unknown(key, sec)),
            },
            Section::Client => {
                let spec = clients.last_mut().expect("a [client] section is open");
                parser.client_key(spec, key, value, sec)?;
            }
            Section::Test => {
                let spec = test.as_mut().expect("the [test] section is open");
                parser.client_key(spec, key, value, sec)?;
                test_offset_given |= key == "seed_offset";
            }
        }
    }

    match (clients.is_empty(), test) {
        (true, None) => {}
        (false, Some(mut t)) => {
            if !test_offset_given {
                t.seed_offset = clients.len() as u64;
            }
            clients.push(t);
            cfg.clients = clients;
        }
        (false, None) => return Err(Error::Validation("[client] sections given without a [test] section".into())),
        (true, Some(_)) => return Err(Error::Validation("[test] section given without any [client] section".into())),
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Experiment,
    Training,
    Model,
    Difficulty,
    Output,
    Client,
    Test,
}

impl Section {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "experiment" => Section::Experiment,
            "training" => Section::Training,
            "model" => Section::Model,
            "difficulty" => Section::Difficulty,
            "output" => Section::Output,
            "client" => Section::Client,
            "test" => Section::Test,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Section::Experiment => "experiment",
            Section::Training => "training",
            Section::Model => "model",
            Section::Difficulty => "difficulty",
            Section::Output => "output",
            Section::Client => "client",
            Section::Test => "test",
        }
    }
}

#[derive(Default)]
struct Parser {
    line: usize,
}

impl Parser {
    fn err(&self, message: String) -> Error {
        Error::Parse {
            line: self.line,
            message,
        }
    }

    fn unknown(&self, key: &str, sec: Section) -> Error {
        self.err(format!("unknown key `{key}` in [{}]", sec.name()))
    }

    fn value<V: FromStr>(&self, key: &str, value: &str) -> Result<V> {
        value
            .parse()
            .map_err(|_| self.err(format!("invalid value {value:?} for `{key}`")))
    }

    fn list<V: FromStr>(&self, key: &str, value: &str) -> Result<Vec<V>> {
        value
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| self.value(key, v))
            .collect()
    }

    fn range<V: FromStr>(&self, key: &str, value: &str) -> Result<(V, V)> {
        let (lo, hi) = value
            .split_once("..")
            .ok_or_else(|| self.err(format!("`{key}` expects lo..hi, found {value:?}")))?;
        Ok((self.value(key, lo.trim())?, self.value(key, hi.trim())?))
    }

    fn choice<V: Copy>(&self, key: &str, value: &str, options: &[(&str, V)]) -> Result<V> {
        options
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(value))
            .map(|&(_, v)| v)
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.err(format!(
                    "invalid value {value:?} for `{key}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }

    fn experiment_key(&self, cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
        match key {
            "seeds" => cfg.seeds = self.list(key, value)?,
            "rounds" => cfg.rounds = self.value(key, value)?,
            "strategies" => {
                cfg.strategies = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| v.parse::<StrategyKind>().map_err(|e| self.err(e)))
                    .collect::<Result<_>>()?
            }
            "eval_threshold" => cfg.eval_threshold = self.value(key, value)?,
            _ => return Err(self.unknown(key, Section::Experiment)),
        }
        Ok(())
    }

    fn training_key(&self, cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
        let opt = &mut cfg.optimizer;
        match key {
            "batch_size" => cfg.batch_size = self.value(key, value)?,
            "local_epochs" => cfg.local_epochs = self.value(key, value)?,
            "optimizer" => {
                opt.kind = self.choice(key, value, &[("sgd", OptimizerKind::Sgd), ("adamw", OptimizerKind::AdamW)])?
            }
            "learning_rate" => opt.learning_rate = self.value(key, value)?,
            "beta1" => opt.beta1 = self.value(key, value)?,
            "beta2" => opt.beta2 = self.value(key, value)?,
            "epsilon" => opt.epsilon = self.value(key, value)?,
            "weight_decay" => opt.weight_decay = self.value(key, value)?,
            _ => return Err(self.unknown(key, Section::Training)),
        }
        Ok(())
    }

    fn difficulty_key(&self, cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
        let d = &mut cfg.difficulty;
        match key {
            "regime" => {
                d.regime = self.choice(
                    key,
                    value,
                    &[("blob_split", Regime::BlobSplit), ("whole_mask", Regime::WholeMask)],
                )?
            }
            "log_base" => d.log_base = self.value(key, value)?,
            "threshold" => d.threshold = self.value(key, value)?,
            "erosion_iterations" => d.erosion_iterations = self.value(key, value)?,
            "structuring_element" => {
                d.structuring_element = self.choice(
                    key,
                    value,
                    &[
                        ("square3", StructuringElement::Square3),
                        ("cross3", StructuringElement::Cross3),
                    ],
                )?
            }
            "connectivity" => {
                d.connectivity = self.choice(
                    key,
                    value,
                    &[("four", Connectivity::Four), ("eight", Connectivity::Eight)],
                )?
            }
            _ => return Err(self.unknown(key, Section::Difficulty)),
        }
        Ok(())
    }

    fn client_key(&self, spec: &mut ClientDataSpec, key: &str, value: &str, sec: Section) -> Result<()> {
        match key {
            "seed_offset" => spec.seed_offset = self.value(key, value)?,
            "n_samples" => spec.n_samples = self.value(key, value)?,
            "image_size" => {
                let (h, w) = value
                    .split_once(['x', 'X'])
                    .ok_or_else(|| self.err(format!("`{key}` expects HxW, found {value:?}")))?;
                spec.height = self.value(key, h.trim())?;
                spec.width = self.value(key, w.trim())?;
            }
            "lesions_per_image" => spec.lesions_per_image = self.range(key, value)?,
            "small_fraction" => spec.small_fraction = self.value(key, value)?,
            "small_radius" => spec.small_radius = self.range(key, value)?,
            "large_radius" => spec.large_radius = self.range(key, value)?,
            "noise_std" => spec.noise_std = self.value(key, value)?,
            "lesion_intensity" => spec.lesion_intensity = self.value(key, value)?,
            _ => return Err(self.unknown(key, sec)),
        }
        Ok(())
    }
}
