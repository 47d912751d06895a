//! Experiment configuration: a TOML tree with a default for every key.
//!
//! Resolution order is defaults, then the config file, then `--override`
//! dotted paths, then the seed override. Unknown keys are rejected with the
//! nearest valid key in the message.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Value;

use vflkit_core::attacks::{AttackConfig, AttackKind, Budget, HeadArch};
use vflkit_core::data::{PartyBlock, SyntheticSpec};
use vflkit_core::defenses::GradientDefense;
use vflkit_core::dimip::DimipConfig;
use vflkit_core::engine::{AmcHook, Defense, FederationConfig};
use vflkit_core::standalone::SinglePartyConfig;

use crate::error::{AppError, AppResult};

pub const ENV_OUTPUT_ROOT: &str = "VFLKIT_OUTPUT_ROOT";
pub const ENV_SEED: &str = "VFLKIT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Label used in run ids and reports.
    pub name: String,
    /// One run per seed.
    pub seeds: Vec<u64>,
    /// Root for records, checkpoints and traces (overridden by `--out` or the
    /// output-root environment variable).
    pub output_dir: String,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub defense: DefenseConfig,
    pub dimip: DimipSection,
    pub attacks: Vec<AttackSection>,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// "synthetic" or "csv".
    pub source: String,
    pub samples: usize,
    pub classes: usize,
    /// Feature width per party, active party first.
    pub dims: Vec<usize>,
    pub informativeness: Vec<f64>,
    pub class_separation: f64,
    pub noise_std: f64,
    /// Scale of the two key columns; 0 disables the key.
    pub paired_key: f64,
    pub shared_confusion: f64,
    /// Scale of party 1's parity hint column; 0 disables it.
    pub parity_hint: f64,
    pub test_fraction: f64,
    /// Added to the run seed to get the data seed.
    pub seed_offset: u64,
    /// CSV source: file path and label column name. Features are the
    /// remaining columns in file order, split into parties by `dims`.
    pub path: String,
    pub label_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub extractor_hidden: Vec<usize>,
    pub rep_dim: usize,
    pub head_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// One drop probability per passive party.
    pub dropout_p: Vec<f64>,
    pub multi_head: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    /// "none", "ng", "gc", "ppdl", "dsgd" or "dimip" (settings in `[dimip]`).
    pub kind: String,
    pub ng_scale: f64,
    pub gc_rate: f64,
    pub ppdl_tau: f64,
    pub ppdl_theta: f64,
    pub ppdl_noise: f64,
    pub dsgd_levels: u32,
    pub dsgd_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DimipSection {
    pub lambda: f64,
    pub aux_hidden: Vec<usize>,
    pub aux_lr: f64,
    pub aux_steps: usize,
    pub rep_loss: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BudgetSpec {
    Count(usize),
    Word(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub name: String,
    /// "pmc" or "amc".
    pub kind: String,
    /// "mlp" or "mlp_sim".
    pub head: String,
    /// Labeled rows, or "all".
    pub budget: BudgetSpec,
    pub epochs: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub mlp_hidden: Vec<usize>,
    pub amc_boost: f64,
    pub amc_adaptive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Train the active party's own model as the quit-accuracy reference.
    pub standalone: bool,
    /// Train party 2 alone with all labels (the leakage ceiling).
    pub scratch: bool,
    /// Every this many epochs, measure a full-label completion attack on
    /// party 2's current extractor; 0 disables the curve.
    pub attack_curve_every: u64,
    pub curve_attack_epochs: u64,
    pub checkpoints: bool,
    pub round_trace: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seeds: vec![0],
            output_dir: "runs".into(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            defense: DefenseConfig::default(),
            dimip: DimipSection::default(),
            attacks: vec![
                AttackSection::default(),
                AttackSection {
                    name: "pmc_all".into(),
                    budget: BudgetSpec::Word("all".into()),
                    epochs: 20,
                    ..AttackSection::default()
                },
            ],
            eval: EvalConfig::default(),
        }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let s = SyntheticSpec::two_party_default();
        Self {
            source: "synthetic".into(),
            samples: s.samples,
            classes: s.classes,
            dims: s.parties.iter().map(|p| p.dim).collect(),
            informativeness: s.parties.iter().map(|p| p.informativeness).collect(),
            class_separation: s.class_separation,
            noise_std: s.noise_std,
            paired_key: s.paired_key.unwrap_or(0.0),
            shared_confusion: s.shared_confusion,
            parity_hint: s.parity_hint.unwrap_or(0.0),
            test_fraction: s.test_fraction,
            seed_offset: 0,
            path: String::new(),
            label_column: "label".into(),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            extractor_hidden: vec![32],
            rep_dim: 16,
            head_hidden: vec![32],
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 0.05,
            dropout_p: vec![0.0],
            multi_head: false,
        }
    }
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            kind: "none".into(),
            ng_scale: 0.1,
            gc_rate: 0.99,
            ppdl_tau: 0.0,
            ppdl_theta: 0.1,
            ppdl_noise: 0.01,
            dsgd_levels: 4,
            dsgd_noise: 0.0,
        }
    }
}

impl Default for DimipSection {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            aux_hidden: vec![64, 64],
            aux_lr: 0.05,
            aux_steps: 1,
            rep_loss: true,
        }
    }
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            name: "pmc40".into(),
            kind: "pmc".into(),
            head: "mlp".into(),
            budget: BudgetSpec::Count(40),
            epochs: a.epochs,
            lr: a.lr,
            batch_size: a.batch_size,
            mlp_hidden: a.mlp_hidden,
            amc_boost: a.amc_boost,
            amc_adaptive: a.amc_adaptive,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            standalone: true,
            scratch: true,
            attack_curve_every: 0,
            curve_attack_epochs: 10,
            checkpoints: true,
            round_trace: true,
        }
    }
}

/// Reads a config file and applies overrides; `None` means defaults only.
pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> AppResult<ExperimentConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(AppError::io(p))?,
        None => String::new(),
    };
    let origin = path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string());
    resolve(&text, &origin, overrides, seed)
}

/// Defaults + `text` + overrides + seed, validated.
pub fn resolve(text: &str, origin: &str, overrides: &[String], seed: Option<u64>) -> AppResult<ExperimentConfig> {
    let user: toml::Table = toml::from_str(text).map_err(|e| AppError::Config(format!("{origin}: {}", e.message())))?;
    let schema = schema();
    check_keys(&Value::Table(user.clone()), &schema, "")?;

    let mut tree = Value::try_from(ExperimentConfig::default()).expect("defaults serialize");
    merge(&mut tree, Value::Table(user));
    for o in overrides {
        apply_override(&mut tree, &schema, o)?;
    }
    let mut cfg: ExperimentConfig = tree
        .try_into()
        .map_err(|e: toml::de::Error| AppError::Config(format!("{origin}: {}", e.message())))?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Every key and the shape of every value.
fn schema() -> Value {
    Value::try_from(ExperimentConfig::default()).expect("defaults serialize")
}

fn nearest<'a>(key: &str, candidates: impl Iterator<Item = &'a String>) -> Option<&'a String> {
    candidates
        .map(|c| (strsim::normalized_damerau_levenshtein(key, c), c))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn check_keys(user: &Value, schema: &Value, prefix: &str) -> AppResult<()> {
    match (user, schema) {
        (Value::Table(u), Value::Table(s)) => {
            for (k, v) in u {
                match s.get(k) {
                    Some(sv) => check_keys(v, sv, &join(prefix, k))?,
                    None => {
                        let hint = nearest(k, s.keys())
                            .map(|n| format!("; nearest valid key is `{}`", join(prefix, n)))
                            .unwrap_or_default();
                        return Err(AppError::Config(format!("unknown key `{}`{hint}", join(prefix, k))));
                    }
                }
            }
            Ok(())
        }
        (Value::Array(items), Value::Array(s)) => match s.first() {
            Some(template @ Value::Table(_)) => {
                for (i, item) in items.iter().enumerate() {
                    check_keys(item, template, &join(prefix, &i.to_string()))?;
                }
                Ok(())
            }
            _ => Ok(()),
        },
        _ => Ok(()),
    }
}

/// Tables merge key by key; anything else is replaced.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b.c=value`; the value is TOML (`0.5`, `[0.05]`, `true`,
/// `"x"`) or, failing that, a bare string.
pub fn parse_override(text: &str) -> AppResult<(Vec<String>, Value)> {
    let (path, raw) = text
        .split_once('=')
        .ok_or_else(|| AppError::Config(format!("override `{text}` is not of the form path=value")))?;
    let path: Vec<String> = path.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(AppError::Config(format!("override `{text}` has an empty path segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(tree: &mut Value, schema: &Value, text: &str) -> AppResult<()> {
    let (path, value) = parse_override(text)?;
    set_path(tree, schema, &path, value)
}

/// Sets `path` inside `tree`, checking each segment against the schema.
pub fn set_path(tree: &mut Value, schema: &Value, path: &[String], value: Value) -> AppResult<()> {
    let mut node = tree;
    let mut shape = schema;
    let mut walked = String::new();
    for (depth, seg) in path.iter().enumerate() {
        let last = depth + 1 == path.len();
        match (node, shape) {
            (Value::Table(t), Value::Table(s)) => {
                let Some(next_shape) = s.get(seg) else {
                    let hint = nearest(seg, s.keys())
                        .map(|n| format!("; nearest valid key is `{}`", join(&walked, n)))
                        .unwrap_or_default();
                    return Err(AppError::Config(format!("unknown key `{}`{hint}", join(&walked, seg))));
                };
                if last {
                    if matches!(next_shape, Value::Table(_)) {
                        return Err(AppError::Config(format!("`{}` is a section, not a value", join(&walked, seg))));
                    }
                    t.insert(seg.clone(), value);
                    return Ok(());
                }
                shape = next_shape;
                node = t.entry(seg.clone()).or_insert_with(|| Value::Table(toml::Table::new()));
            }
            (Value::Array(items), Value::Array(s)) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| AppError::Config(format!("`{}` needs a numeric index, got `{seg}`", walked)))?;
                let len = items.len();
                let item = items
                    .get_mut(idx)
                    .ok_or_else(|| AppError::Config(format!("`{walked}` has {len} entries; index {idx} out of range")))?;
                if last {
                    *item = value;
                    return Ok(());
                }
                let Some(first) = s.first() else {
                    return Err(AppError::Config(format!("`{walked}` entries have no fields")));
                };
                shape = first;
                node = item;
            }
            _ => {
                return Err(AppError::Config(format!("`{walked}` is a value; cannot descend into `{seg}`")));
            }
        }
        walked = join(&walked, seg);
    }
    Ok(())
}

/// Scalar type of the schema node at `path`, for sweep axes.
pub fn is_scalar_path(path: &str) -> bool {
    let mut node = &schema();
    for seg in path.split('.') {
        node = match node {
            Value::Table(t) => match t.get(seg) {
                Some(n) => n,
                None => return false,
            },
            Value::Array(a) => match (seg.parse::<usize>(), a.first()) {
                (Ok(_), Some(n)) => n,
                _ => return false,
            },
            _ => return false,
        };
    }
    !matches!(node, Value::Table(_) | Value::Array(_))
}

fn bad(path: &str, why: impl std::fmt::Display) -> AppError {
    AppError::Config(format!("{path}: {why}"))
}

impl ExperimentConfig {
    /// Canonical TOML of the fully resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`Self::to_toml`] ignoring the seed list and output
    /// location, which do not change what a single run computes.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        c.output_dir.clear();
        hex(&Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn parties(&self) -> usize {
        self.dataset.dims.len()
    }

    pub fn validate(&self) -> AppResult<()> {
        let d = &self.dataset;
        match d.source.as_str() {
            "synthetic" => {
                if d.informativeness.len() != d.dims.len() {
                    return Err(bad("dataset.informativeness", format!("{} values for {} parties", d.informativeness.len(), d.dims.len())));
                }
                self.synthetic_spec(0).map_err(|e| bad("dataset", e))?;
            }
            "csv" => {
                if d.path.is_empty() {
                    return Err(bad("dataset.path", "required for a csv source"));
                }
                if d.dims.contains(&0) {
                    return Err(bad("dataset.dims", "every party needs at least one column"));
                }
                if !(0.0..1.0).contains(&d.test_fraction) {
                    return Err(bad("dataset.test_fraction", "must be in [0, 1)"));
                }
            }
            other => return Err(bad("dataset.source", format!("`{other}` is not one of synthetic, csv"))),
        }
        if self.parties() == 0 {
            return Err(bad("dataset.dims", "at least one party"));
        }
        if self.train.batch_size == 0 {
            return Err(bad("train.batch_size", "must be >= 1"));
        }
        self.federation_config(0)?.validate().map_err(|e| bad("train/model/defense", e))?;
        for (i, a) in self.attacks.iter().enumerate() {
            let cfg = self.attack_config(i, 0)?;
            if a.name.is_empty() || !a.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(bad(&format!("attacks.{i}.name"), "use letters, digits and underscores"));
            }
            if cfg.kind == AttackKind::Amc && self.parties() < 2 {
                return Err(bad(&format!("attacks.{i}.kind"), "amc needs a passive party"));
            }
            if !(a.lr >= 0.0) || a.batch_size == 0 {
                return Err(bad(&format!("attacks.{i}"), "lr must be >= 0 and batch_size >= 1"));
            }
            if !(a.amc_boost > 0.0) {
                return Err(bad(&format!("attacks.{i}.amc_boost"), "must be positive"));
            }
        }
        let mut names: Vec<&str> = self.attacks.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(bad("attacks", "attack names must be unique"));
        }
        if !self.attacks.is_empty() && self.parties() < 2 {
            return Err(bad("attacks", "attacks target party 2; need at least two parties"));
        }
        Ok(())
    }

    pub fn synthetic_spec(&self, run_seed: u64) -> Result<SyntheticSpec, String> {
        let d = &self.dataset;
        if d.informativeness.len() != d.dims.len() {
            return Err("informativeness and dims differ in length".into());
        }
        let spec = SyntheticSpec {
            samples: d.samples,
            classes: d.classes,
            parties: d
                .dims
                .iter()
                .zip(&d.informativeness)
                .map(|(&dim, &informativeness)| PartyBlock { dim, informativeness })
                .collect(),
            class_separation: d.class_separation,
            noise_std: d.noise_std,
            paired_key: (d.paired_key > 0.0).then_some(d.paired_key),
            shared_confusion: d.shared_confusion,
            parity_hint: (d.parity_hint > 0.0).then_some(d.parity_hint),
            test_fraction: d.test_fraction,
            seed: run_seed.wrapping_add(d.seed_offset),
        };
        // generating the real thing is the only complete validation; a tiny
        // copy exercises the same checks cheaply
        let probe = SyntheticSpec {
            samples: spec.classes.max(2),
            ..spec.clone()
        };
        vflkit_core::data::generate_synthetic(&probe).map_err(|e| e.to_string())?;
        Ok(spec)
    }

    pub fn defense(&self) -> AppResult<Defense> {
        let d = &self.defense;
        Ok(match d.kind.as_str() {
            "none" => Defense::None,
            "ng" => Defense::Gradient(GradientDefense::Ng { scale: d.ng_scale }),
            "gc" => Defense::Gradient(GradientDefense::Gc { rate: d.gc_rate }),
            "ppdl" => Defense::Gradient(GradientDefense::Ppdl {
                tau: d.ppdl_tau,
                theta: d.ppdl_theta,
                noise: d.ppdl_noise,
            }),
            "dsgd" => Defense::Gradient(GradientDefense::Dsgd {
                levels: d.dsgd_levels,
                noise: d.dsgd_noise,
            }),
            "dimip" => Defense::Dimip(DimipConfig {
                lambda: self.dimip.lambda,
                aux_hidden: self.dimip.aux_hidden.clone(),
                aux_lr: Some(self.dimip.aux_lr),
                aux_steps: self.dimip.aux_steps,
                use_rep_loss: self.dimip.rep_loss,
            }),
            other => {
                return Err(bad("defense.kind", format!("`{other}` is not one of none, ng, gc, ppdl, dsgd, dimip")));
            }
        })
    }

    /// The defense's strength knob as a number, for trade-off curves.
    pub fn defense_level(&self) -> f64 {
        let d = &self.defense;
        match d.kind.as_str() {
            "ng" => d.ng_scale,
            "gc" => d.gc_rate,
            "ppdl" => d.ppdl_theta,
            "dsgd" => f64::from(d.dsgd_levels),
            "dimip" => self.dimip.lambda,
            _ => 0.0,
        }
    }

    pub fn federation_config(&self, seed: u64) -> AppResult<FederationConfig> {
        Ok(FederationConfig {
            party_dims: self.dataset.dims.clone(),
            classes: self.dataset.classes,
            extractor_hidden: self.model.extractor_hidden.clone(),
            rep_dim: self.model.rep_dim,
            head_hidden: self.model.head_hidden.clone(),
            lr: self.train.lr,
            dropout_p: self.train.dropout_p.clone(),
            defense: self.defense()?,
            multi_head: self.train.multi_head,
            amc: None,
            seed,
        })
    }

    pub fn attack_config(&self, index: usize, seed: u64) -> AppResult<AttackConfig> {
        let a = &self.attacks[index];
        let at = |field: &str| format!("attacks.{index}.{field}");
        let kind = match a.kind.as_str() {
            "pmc" => AttackKind::Pmc,
            "amc" => AttackKind::Amc,
            other => return Err(bad(&at("kind"), format!("`{other}` is not one of pmc, amc"))),
        };
        let head = match a.head.as_str() {
            "mlp" => HeadArch::Mlp,
            "mlp_sim" => HeadArch::MlpSim,
            other => return Err(bad(&at("head"), format!("`{other}` is not one of mlp, mlp_sim"))),
        };
        let budget = match &a.budget {
            BudgetSpec::Count(0) => return Err(bad(&at("budget"), "must be positive")),
            BudgetSpec::Count(n) => Budget::Count(*n),
            BudgetSpec::Word(w) if w == "all" => Budget::All,
            BudgetSpec::Word(w) => return Err(bad(&at("budget"), format!("`{w}` is neither a count nor \"all\""))),
        };
        Ok(AttackConfig {
            kind,
            head,
            budget,
            epochs: a.epochs,
            lr: a.lr,
            batch_size: a.batch_size,
            mlp_hidden: a.mlp_hidden.clone(),
            amc_boost: a.amc_boost,
            amc_adaptive: a.amc_adaptive,
            seed,
        })
    }

    pub fn amc_hook(&self, index: usize) -> Option<AmcHook> {
        self.attack_config(index, 0).ok().and_then(|a| a.amc_hook())
    }

    pub fn single_party_config(&self, seed: u64) -> SinglePartyConfig {
        SinglePartyConfig {
            extractor_hidden: self.model.extractor_hidden.clone(),
            rep_dim: self.model.rep_dim,
            head_hidden: self.model.head_hidden.clone(),
            lr: self.train.lr,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed,
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
