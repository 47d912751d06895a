//! Runs experiments: training, quit evaluation, reference models, attacks,
//! and the files each run leaves behind.
//!
//! Layout under the output root:
//!
//! ```text
//! records/<run_id>.tsv      one result record per run (deterministic)
//! runs/<run_id>/            config.toml, trace.tsv, checkpoint.txt,
//!                           manifest.toml, curve.tsv, timing.txt
//! sweeps/<name>-<axis>.tsv  tidy table of a sweep
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use vflkit_core::attacks::{amc, pmc, AttackConfig, AttackKind, Budget, HeadArch};
use vflkit_core::data::{generate_synthetic, Split, VerticalDataset};
use vflkit_core::engine::{Federation, Presence, RoundReport};
use vflkit_core::standalone::train_single_party;

use crate::checkpoint;
use crate::config::{self, hex, ExperimentConfig};
use crate::error::{AppError, AppResult, Context};
use crate::tabular;

pub const RECORD_HEADER: &str = "# vflkit record 1";

/// Sink for `key=value` progress lines.
pub type Progress<'a> = &'a (dyn Fn(&str) + Sync);

pub fn silent(_: &str) {}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output root; `None` computes without writing anything.
    pub out: Option<PathBuf>,
    /// Sweep axis and value this run belongs to.
    pub sweep_point: Option<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub name: String,
    pub kind: &'static str,
    pub labeled: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: String,
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub data_digest: String,
    pub defense: String,
    pub defense_level: f64,
    pub dropout_p: Vec<f64>,
    pub rounds: u64,
    pub acc_all: f64,
    /// `(absent parties, accuracy)`, e.g. `("2", 0.41)`.
    pub acc_quit: Vec<(String, f64)>,
    pub acc_standalone: Option<f64>,
    pub acc_scratch: Option<f64>,
    pub attacks: Vec<AttackOutcome>,
    /// Mean task loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// `(epoch, accuracy)` of the periodic full-label completion attack.
    pub curve: Vec<(u64, f64)>,
    pub sweep_point: Option<(String, String)>,
    pub wall_seconds: f64,
}

impl RunResult {
    pub fn quit(&self, absent: &str) -> Option<f64> {
        self.acc_quit.iter().find(|(k, _)| k == absent).map(|(_, v)| *v)
    }

    pub fn attack(&self, name: &str) -> Option<f64> {
        self.attacks.iter().find(|a| a.name == name).map(|a| a.accuracy)
    }

    /// The deterministic result record (no wall time, no paths).
    pub fn record(&self) -> String {
        let mut s = String::new();
        s.push_str(RECORD_HEADER);
        s.push('\n');
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}\t{v}");
        };
        kv("run_id", self.run_id.clone());
        kv("name", self.name.clone());
        kv("seed", self.seed.to_string());
        kv("config_hash", self.config_hash.clone());
        kv("data_digest", self.data_digest.clone());
        if let Some((axis, value)) = &self.sweep_point {
            kv("sweep_axis", axis.clone());
            kv("sweep_value", value.clone());
        }
        kv("defense", self.defense.clone());
        kv("defense_level", self.defense_level.to_string());
        kv("dropout_p", join_f64(&self.dropout_p));
        kv("rounds", self.rounds.to_string());
        kv("acc_all", self.acc_all.to_string());
        for (absent, acc) in &self.acc_quit {
            kv(&format!("acc_quit_{absent}"), acc.to_string());
        }
        if let Some(v) = self.acc_standalone {
            kv("acc_standalone", v.to_string());
        }
        if let Some(v) = self.acc_scratch {
            kv("acc_scratch", v.to_string());
        }
        for a in &self.attacks {
            kv(&format!("attack_{}", a.name), a.accuracy.to_string());
            kv(&format!("attack_{}_kind", a.name), a.kind.to_string());
            kv(&format!("attack_{}_labeled", a.name), a.labeled.to_string());
        }
        if let Some(l) = self.epoch_loss.last() {
            kv("final_loss", l.to_string());
        }
        if !self.curve.is_empty() {
            let c: Vec<String> = self.curve.iter().map(|(e, a)| format!("{e}:{a}")).collect();
            kv("attack_curve", c.join(","));
        }
        s
    }
}

pub fn join_f64(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

pub fn run_id(cfg: &ExperimentConfig, seed: u64) -> String {
    let name: String = cfg
        .name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{name}-{}-s{seed}", &cfg.hash()[..10])
}

/// Generates or reads the dataset for one run.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> AppResult<VerticalDataset> {
    let d = &cfg.dataset;
    let data_seed = seed.wrapping_add(d.seed_offset);
    match d.source.as_str() {
        "csv" => tabular::read_csv(Path::new(&d.path), &d.label_column, &d.dims, d.test_fraction, data_seed),
        _ => {
            let spec = cfg.synthetic_spec(seed).map_err(|e| AppError::Config(format!("dataset: {e}")))?;
            generate_synthetic(&spec).context("dataset")
        }
    }
}

/// Git-style content digest: SHA-256 over `blob <len>\0<content>`, where the
/// content is the labels, split membership and feature bits.
pub fn data_digest(ds: &VerticalDataset) -> String {
    let mut content = Vec::new();
    for d in ds.party_dims() {
        content.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &y in ds.labels() {
        content.extend_from_slice(&(y as u64).to_le_bytes());
    }
    for split in [Split::Train, Split::Test] {
        content.extend_from_slice(&(ds.indices(split).len() as u64).to_le_bytes());
        for &i in ds.indices(split) {
            content.extend_from_slice(&(i as u64).to_le_bytes());
        }
    }
    for k in 0..ds.parties() {
        for v in ds.party(k).data() {
            content.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(&content);
    hex(&h.finalize())
}

/// Absent-party subsets in mask order, labelled by 1-based party numbers.
pub fn quit_patterns(parties: usize) -> Vec<(String, Presence)> {
    let passive = parties.saturating_sub(1);
    (1u32..(1 << passive))
        .map(|mask| {
            let mut present = Presence::all(parties);
            let mut label = Vec::new();
            for j in 0..passive {
                if mask & (1 << j) != 0 {
                    present = present.without(j + 1);
                    label.push((j + 2).to_string());
                }
            }
            (label.join("_"), present)
        })
        .collect()
}

fn curve_attack(cfg: &ExperimentConfig, seed: u64) -> AttackConfig {
    AttackConfig {
        kind: AttackKind::Pmc,
        head: HeadArch::MlpSim,
        budget: Budget::All,
        epochs: cfg.eval.curve_attack_epochs,
        seed,
        ..AttackConfig::default()
    }
}

fn train(
    cfg: &ExperimentConfig,
    fed: &mut Federation,
    ds: &VerticalDataset,
    seed: u64,
    mut on_round: impl FnMut(&RoundReport),
    mut on_epoch: impl FnMut(u64, f64, &Federation) -> AppResult<()>,
) -> AppResult<Vec<f64>> {
    let mut losses = Vec::with_capacity(cfg.train.epochs as usize);
    for epoch in 0..cfg.train.epochs {
        let reports = fed
            .train_epoch(ds, cfg.train.batch_size, epoch)
            .context(&format!("train epoch {epoch} (seed {seed})"))?;
        reports.iter().for_each(&mut on_round);
        let mean = reports.iter().map(|r| r.loss_c).sum::<f64>() / reports.len().max(1) as f64;
        losses.push(mean);
        on_epoch(epoch, mean, fed)?;
    }
    Ok(losses)
}

fn trace_line(r: &RoundReport) -> String {
    let mask: String = r.mask.bits().iter().map(|&d| if d { '1' } else { '0' }).collect();
    let (la, lr, v) = r.dimip.as_ref().map_or((String::new(), String::new(), String::new()), |d| {
        (d.loss_a.to_string(), d.loss_r.to_string(), d.vclub_s.to_string())
    });
    format!("{}\t{mask}\t{}\t{la}\t{lr}\t{v}\n", r.round, r.loss_c)
}

/// One full run for one seed.
pub fn run(cfg: &ExperimentConfig, seed: u64, opts: &RunOptions, progress: Progress) -> AppResult<RunResult> {
    let started = Instant::now();
    let id = run_id(cfg, seed);
    let ds = load_dataset(cfg, seed)?;
    if ds.party_dims() != cfg.dataset.dims {
        return Err(AppError::Config(format!(
            "dataset.dims {:?} but the data has parties of width {:?}",
            cfg.dataset.dims,
            ds.party_dims()
        )));
    }
    let digest = data_digest(&ds);
    progress(&format!("event=run_start run_id={id} seed={seed} data_digest={}", &digest[..16]));

    let mut fcfg = cfg.federation_config(seed)?;
    fcfg.classes = ds.classes();
    let mut fed = Federation::new(fcfg.clone()).context("federation")?;
    let mut trace = String::from("round\tdropped\tloss_c\tloss_a\tloss_r\tvclub_s\n");
    let mut curve = Vec::new();
    let every = cfg.eval.attack_curve_every;
    let epoch_loss = train(
        cfg,
        &mut fed,
        &ds,
        seed,
        |r| {
            if cfg.eval.round_trace {
                trace.push_str(&trace_line(r));
            }
        },
        |epoch, loss, fed| {
            let mut line = format!("event=epoch run_id={id} epoch={epoch} loss={loss:.6}");
            if every > 0 && (epoch + 1) % every == 0 {
                let acc = pmc(fed.passive(1).extractor(), &ds, 1, &curve_attack(cfg, seed))
                    .context(&format!("attack curve epoch {epoch}"))?
                    .accuracy;
                curve.push((epoch + 1, acc));
                let _ = write!(line, " curve_attack={acc:.4}");
            }
            progress(&line);
            Ok(())
        },
    )?;

    let acc_all = fed.evaluate(&ds, Split::Test, Presence::all(fed.parties())).context("evaluate")?;
    let mut acc_quit = Vec::new();
    for (label, present) in quit_patterns(fed.parties()) {
        acc_quit.push((label, fed.evaluate(&ds, Split::Test, present).context("evaluate quit")?));
    }

    let single = cfg.single_party_config(seed);
    let acc_standalone = if cfg.eval.standalone {
        let m = train_single_party(&ds, 0, &single).context("standalone model")?;
        Some(m.evaluate(&ds, Split::Test).context("standalone model")?)
    } else {
        None
    };
    let acc_scratch = if cfg.eval.scratch && ds.parties() > 1 {
        let m = train_single_party(&ds, 1, &single).context("scratch model")?;
        Some(m.evaluate(&ds, Split::Test).context("scratch model")?)
    } else {
        None
    };

    let mut attacks = Vec::new();
    for (i, a) in cfg.attacks.iter().enumerate() {
        let acfg = cfg.attack_config(i, seed)?;
        let what = format!("attacks.{i} ({})", a.name);
        let r = match acfg.kind {
            AttackKind::Pmc => pmc(fed.passive(1).extractor(), &ds, 1, &acfg).context(&what)?,
            AttackKind::Amc => {
                let mut hooked_cfg = fcfg.clone();
                hooked_cfg.amc = acfg.amc_hook();
                let mut hooked = Federation::new(hooked_cfg).context(&what)?;
                train(cfg, &mut hooked, &ds, seed, |_| {}, |_, _, _| Ok(()))?;
                amc(&hooked, &ds, &acfg).context(&what)?
            }
        };
        progress(&format!("event=attack run_id={id} attack={} accuracy={:.4} labeled={}", a.name, r.accuracy, r.labeled));
        attacks.push(AttackOutcome {
            name: a.name.clone(),
            kind: if acfg.kind == AttackKind::Pmc { "pmc" } else { "amc" },
            labeled: r.labeled,
            accuracy: r.accuracy,
        });
    }

    let result = RunResult {
        run_id: id.clone(),
        name: cfg.name.clone(),
        seed,
        config_hash: cfg.hash(),
        data_digest: digest,
        defense: cfg.defense.kind.clone(),
        defense_level: cfg.defense_level(),
        dropout_p: cfg.train.dropout_p.clone(),
        rounds: fed.round(),
        acc_all,
        acc_quit,
        acc_standalone,
        acc_scratch,
        attacks,
        epoch_loss,
        curve,
        sweep_point: opts.sweep_point.clone(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };

    if let Some(out) = &opts.out {
        write_run(out, cfg, &result, &fed, &trace)?;
    }
    let mut line = format!("event=run_done run_id={id} acc_all={:.4}", result.acc_all);
    for (k, v) in &result.acc_quit {
        let _ = write!(line, " acc_quit_{k}={v:.4}");
    }
    if let Some(v) = result.acc_standalone {
        let _ = write!(line, " acc_standalone={v:.4}");
    }
    progress(&line);
    Ok(result)
}

fn write_file(path: &Path, text: &str) -> AppResult<()> {
    std::fs::write(path, text).map_err(AppError::io(path))
}

/// Writes `text` to a temporary sibling and renames it into place, so a
/// crash never leaves a half-written record.
fn write_atomic(path: &Path, text: &str) -> AppResult<()> {
    let tmp = path.with_extension("tmp");
    write_file(&tmp, text)?;
    std::fs::rename(&tmp, path).map_err(AppError::io(path))
}

fn mkdir(path: &Path) -> AppResult<()> {
    std::fs::create_dir_all(path).map_err(AppError::io(path))
}

fn write_run(out: &Path, cfg: &ExperimentConfig, r: &RunResult, fed: &Federation, trace: &str) -> AppResult<()> {
    let records = out.join("records");
    let dir = out.join("runs").join(&r.run_id);
    mkdir(&records)?;
    mkdir(&dir)?;
    let mut resolved = cfg.clone();
    resolved.seeds = vec![r.seed];
    write_file(&dir.join("config.toml"), &resolved.to_toml())?;
    if cfg.eval.round_trace {
        write_file(&dir.join("trace.tsv"), trace)?;
    }
    if cfg.eval.checkpoints {
        checkpoint::save(&dir.join("checkpoint.txt"), &checkpoint::from_federation(fed))?;
        write_file(&dir.join("manifest.toml"), &manifest(r, fed))?;
    }
    if !r.curve.is_empty() {
        let mut c = String::from("epoch\tattack_accuracy\n");
        for (e, a) in &r.curve {
            let _ = writeln!(c, "{e}\t{a}");
        }
        write_file(&dir.join("curve.tsv"), &c)?;
    }
    write_file(&dir.join("timing.txt"), &format!("wall_seconds\t{:.3}\n", r.wall_seconds))?;
    write_atomic(&records.join(format!("{}.tsv", r.run_id)), &r.record())
}

fn manifest(r: &RunResult, fed: &Federation) -> String {
    use toml::{Table, Value};
    let cfg = fed.config();
    let mut t = Table::new();
    t.insert("run_id".into(), Value::String(r.run_id.clone()));
    t.insert("config_hash".into(), Value::String(r.config_hash.clone()));
    t.insert("data_digest".into(), Value::String(r.data_digest.clone()));
    t.insert("seed".into(), Value::Integer(r.seed as i64));
    t.insert("rounds".into(), Value::Integer(fed.round() as i64));
    t.insert("checkpoint".into(), Value::String("checkpoint.txt".into()));
    let parties: Vec<Value> = (0..fed.parties())
        .map(|k| {
            let mut p = Table::new();
            p.insert("id".into(), Value::Integer(k as i64 + 1));
            p.insert("role".into(), Value::String(if k == 0 { "active" } else { "passive" }.into()));
            p.insert("dim".into(), Value::Integer(cfg.party_dims[k] as i64));
            p.insert("rep_dim".into(), Value::Integer(cfg.rep_dim as i64));
            let drop = if k == 0 { 0.0 } else { cfg.dropout_p[k - 1] };
            p.insert("dropout_p".into(), Value::Float(drop));
            let net = if k == 0 { "active_extractor".to_string() } else { checkpoint::passive_name(k) };
            p.insert("network".into(), Value::String(net));
            Value::Table(p)
        })
        .collect();
    t.insert("party".into(), Value::Array(parties));
    let mut heads = vec![Value::String("head".into())];
    heads.extend(fed.extra_heads().keys().map(|m| Value::String(format!("head_absent_{m}"))));
    let mut head = Table::new();
    head.insert("input".into(), Value::Integer((cfg.rep_dim * fed.parties()) as i64));
    head.insert("classes".into(), Value::Integer(cfg.classes as i64));
    head.insert("networks".into(), Value::Array(heads));
    head.insert("absent_parties_are".into(), Value::String("zero_imputed".into()));
    t.insert("head".into(), Value::Table(head));
    toml::to_string(&t).expect("manifest serializes")
}

fn pool(jobs: usize) -> AppResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| AppError::Runtime(format!("thread pool: {e}")))
}

/// Runs every configured seed; results come back in seed order.
pub fn run_seeds(cfg: &ExperimentConfig, opts: &RunOptions, jobs: usize, progress: Progress) -> AppResult<Vec<AppResult<RunResult>>> {
    let pool = pool(jobs)?;
    Ok(pool.install(|| cfg.seeds.par_iter().map(|&s| run(cfg, s, opts, progress)).collect()))
}

/// One resolved configuration per sweep value, checked before any work.
pub fn sweep_configs(base: &ExperimentConfig, axis: &str, values: &[String]) -> AppResult<Vec<ExperimentConfig>> {
    if !config::is_scalar_path(axis) {
        return Err(AppError::Config(format!("sweep axis `{axis}` is not a scalar config field")));
    }
    values
        .iter()
        .map(|v| {
            let text = base.to_toml();
            let mut c = config::resolve(&text, "sweep base", &[format!("{axis}={v}")], None)?;
            c.seeds = base.seeds.clone();
            c.output_dir = base.output_dir.clone();
            Ok(c)
        })
        .collect()
}

#[derive(Debug)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub outcome: Result<RunResult, String>,
}

#[derive(Debug)]
pub struct SweepTable {
    pub axis: String,
    pub quit_labels: Vec<String>,
    pub attack_names: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn render(&self) -> String {
        let mut s = String::from("axis\tvalue\tseed\trun_id\tstatus\tacc_all");
        for q in &self.quit_labels {
            let _ = write!(s, "\tacc_quit_{q}");
        }
        s.push_str("\tacc_standalone\tacc_scratch");
        for a in &self.attack_names {
            let _ = write!(s, "\tattack_{a}");
        }
        s.push('\n');
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        for row in &self.rows {
            let _ = write!(s, "{}\t{}\t{}", self.axis, row.value, row.seed);
            match &row.outcome {
                Ok(r) => {
                    let _ = write!(s, "\t{}\tok\t{}", r.run_id, r.acc_all);
                    for q in &self.quit_labels {
                        let _ = write!(s, "\t{}", opt(r.quit(q)));
                    }
                    let _ = write!(s, "\t{}\t{}", opt(r.acc_standalone), opt(r.acc_scratch));
                    for a in &self.attack_names {
                        let _ = write!(s, "\t{}", opt(r.attack(a)));
                    }
                }
                Err(e) => {
                    let msg: String = e.chars().map(|c| if c == '\t' || c == '\n' { ' ' } else { c }).collect();
                    let _ = write!(s, "\tNA\terror: {msg}\tNA");
                    for _ in 0..self.quit_labels.len() + 2 + self.attack_names.len() {
                        s.push_str("\tNA");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

/// One run per value per seed. A failing run becomes an error row and the
/// sweep continues; configuration problems stop it before anything runs.
pub fn sweep(
    base: &ExperimentConfig,
    axis: &str,
    values: &[String],
    opts: &RunOptions,
    jobs: usize,
    progress: Progress,
) -> AppResult<SweepTable> {
    let configs = sweep_configs(base, axis, values)?;
    let points: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| base.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let pool = pool(jobs)?;
    let outcomes: Vec<AppResult<RunResult>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(i, seed)| {
                let o = RunOptions {
                    out: opts.out.clone(),
                    sweep_point: Some((axis.to_string(), values[i].clone())),
                };
                run(&configs[i], seed, &o, progress)
            })
            .collect()
    });
    let rows = points
        .iter()
        .zip(outcomes)
        .map(|(&(i, seed), outcome)| {
            if let Err(e) = &outcome {
                progress(&format!("event=run_failed axis={axis} value={} seed={seed} error=\"{e}\"", values[i]));
            }
            SweepRow {
                value: values[i].clone(),
                seed,
                outcome: outcome.map_err(|e| e.to_string()),
            }
        })
        .collect();
    let table = SweepTable {
        axis: axis.to_string(),
        quit_labels: quit_patterns(base.parties()).into_iter().map(|(l, _)| l).collect(),
        attack_names: base.attacks.iter().map(|a| a.name.clone()).collect(),
        rows,
    };
    if let Some(out) = &opts.out {
        let dir = out.join("sweeps");
        mkdir(&dir)?;
        write_atomic(&dir.join(format!("{}-{}.tsv", base.name, axis)), &table.render())?;
    }
    Ok(table)
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}
