//! Aggregates result records into summary tables and trade-off curve data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{AppError, AppResult};
use crate::harness::{mean, RECORD_HEADER};

const REQUIRED: [&str; 7] = ["run_id", "config_hash", "seed", "defense", "defense_level", "dropout_p", "acc_all"];

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub file: String,
    pub fields: BTreeMap<String, String>,
}

impl Record {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }

    pub fn num(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }
}

pub fn parse_record(text: &str, file: &str) -> Result<Record, String> {
    let mut lines = text.lines();
    if lines.next() != Some(RECORD_HEADER) {
        return Err("missing record header".into());
    }
    let mut fields = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let (k, v) = line.split_once('\t').ok_or_else(|| format!("line {}: no tab", i + 2))?;
        if fields.insert(k.to_string(), v.to_string()).is_some() {
            return Err(format!("line {}: duplicate key `{k}`", i + 2));
        }
    }
    for k in REQUIRED {
        if !fields.contains_key(k) {
            return Err(format!("missing `{k}`"));
        }
    }
    for (k, v) in &fields {
        let numeric = k == "seed" || k == "defense_level" || k.starts_with("acc_") || (k.starts_with("attack_") && !k.ends_with("_kind") && k != "attack_curve");
        if numeric && v.parse::<f64>().is_err() {
            return Err(format!("`{k}` is not numeric: `{v}`"));
        }
    }
    Ok(Record {
        file: file.to_string(),
        fields,
    })
}

#[derive(Debug, Default)]
pub struct Loaded {
    pub records: Vec<Record>,
    /// `(file, reason)` for every unreadable record.
    pub corrupt: Vec<(String, String)>,
}

/// `dir` is an output root (with a `records/` directory) or a records
/// directory itself.
pub fn records_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("records");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

pub fn load_records(dir: &Path) -> AppResult<Loaded> {
    let rdir = records_dir(dir);
    let entries = std::fs::read_dir(&rdir).map_err(AppError::io(&rdir))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    files.sort();
    let mut out = Loaded::default();
    for p in files {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match std::fs::read_to_string(&p) {
            Ok(text) => match parse_record(&text, &name) {
                Ok(r) => out.records.push(r),
                Err(e) => out.corrupt.push((name, e)),
            },
            Err(e) => out.corrupt.push((name, e.to_string())),
        }
    }
    Ok(out)
}

fn pct(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{:.2}", 100.0 * v)
    }
}

fn column_means(group: &[&Record], key: &str) -> f64 {
    mean(group.iter().filter_map(|r| r.num(key)))
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |out: &mut String, cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(out, header);
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    line(out, &rule);
    for r in rows {
        line(out, r);
    }
}

fn keys_with(records: &[Record], prefix: &str, skip: impl Fn(&str) -> bool) -> Vec<String> {
    let set: BTreeSet<String> = records
        .iter()
        .flat_map(|r| r.fields.keys())
        .filter(|k| k.starts_with(prefix) && !skip(k))
        .cloned()
        .collect();
    set.into_iter().collect()
}

#[derive(Debug)]
pub struct Report {
    pub summary: String,
    pub curve: String,
    pub corrupt: Vec<(String, String)>,
    pub runs: usize,
}

pub fn build(loaded: &Loaded) -> Report {
    let recs = &loaded.records;
    let quit = keys_with(recs, "acc_quit_", |_| false);
    let attacks = keys_with(recs, "attack_", |k| k.ends_with("_kind") || k.ends_with("_labeled") || k == "attack_curve");

    // one group per configuration (seeds pooled)
    let mut groups: BTreeMap<(String, String), Vec<&Record>> = BTreeMap::new();
    for r in recs {
        let label = format!("{}/{}", r.get("name").unwrap_or("?"), &r.get("config_hash").unwrap_or("")[..10.min(r.get("config_hash").unwrap_or("").len())]);
        groups.entry((label, r.get("config_hash").unwrap_or("").to_string())).or_default().push(r);
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "runs: {}  configurations: {}  corrupt records: {}", recs.len(), groups.len(), loaded.corrupt.len());
    summary.push_str("\nModel accuracy (%), mean over seeds; quit = listed parties absent, zero-imputed\n\n");
    let mut header: Vec<String> = ["config", "defense", "level", "dropout_p", "seeds", "all_present"].iter().map(|s| s.to_string()).collect();
    header.extend(quit.iter().map(|q| q.trim_start_matches("acc_").to_string()));
    header.push("standalone".into());
    let mut rows = Vec::new();
    for ((label, _), g) in &groups {
        let mut row = vec![
            label.clone(),
            g[0].get("defense").unwrap_or("").to_string(),
            g[0].get("defense_level").unwrap_or("").to_string(),
            g[0].get("dropout_p").unwrap_or("").to_string(),
            g.len().to_string(),
            pct(column_means(g, "acc_all")),
        ];
        row.extend(quit.iter().map(|q| pct(column_means(g, q))));
        row.push(pct(column_means(g, "acc_standalone")));
        rows.push(row);
    }
    table(&mut summary, &header, &rows);

    summary.push_str("\nAttack accuracy (%) on party 2's extractor; scratch = party 2 trained alone with all labels\n\n");
    let mut header: Vec<String> = ["config", "defense", "level", "seeds", "scratch"].iter().map(|s| s.to_string()).collect();
    header.extend(attacks.iter().map(|a| a.trim_start_matches("attack_").to_string()));
    let mut rows = Vec::new();
    for ((label, _), g) in &groups {
        let mut row = vec![
            label.clone(),
            g[0].get("defense").unwrap_or("").to_string(),
            g[0].get("defense_level").unwrap_or("").to_string(),
            g.len().to_string(),
            pct(column_means(g, "acc_scratch")),
        ];
        row.extend(attacks.iter().map(|a| pct(column_means(g, a))));
        rows.push(row);
    }
    table(&mut summary, &header, &rows);

    if !loaded.corrupt.is_empty() {
        summary.push_str("\nCorrupt or unreadable records (skipped)\n\n");
        for (f, why) in &loaded.corrupt {
            let _ = writeln!(summary, "{f}: {why}");
        }
    }

    // trade-off curve: one row per (defense, level, dropout), seeds pooled
    let mut points: BTreeMap<(String, String, String), Vec<&Record>> = BTreeMap::new();
    for r in recs {
        let level: f64 = r.num("defense_level").unwrap_or(f64::NAN);
        points
            .entry((r.get("defense").unwrap_or("").to_string(), format!("{level:020.10}"), r.get("dropout_p").unwrap_or("").to_string()))
            .or_default()
            .push(r);
    }
    let mut curve = String::from("defense\tlevel\tdropout_p\tseeds\tacc_all");
    for q in &quit {
        let _ = write!(curve, "\t{q}");
    }
    for a in &attacks {
        let _ = write!(curve, "\t{a}");
    }
    curve.push('\n');
    let num = |v: f64| if v.is_nan() { "NA".to_string() } else { format!("{v:.6}") };
    for ((defense, _, dropout), g) in &points {
        let _ = write!(curve, "{defense}\t{}\t{dropout}\t{}\t{}", g[0].get("defense_level").unwrap_or(""), g.len(), num(column_means(g, "acc_all")));
        for k in quit.iter().chain(&attacks) {
            let _ = write!(curve, "\t{}", num(column_means(g, k)));
        }
        curve.push('\n');
    }

    Report {
        summary,
        curve,
        corrupt: loaded.corrupt.clone(),
        runs: recs.len(),
    }
}

/// Reads `dir`, writes `report/summary.txt` and `report/curve.tsv` under it.
pub fn report(dir: &Path) -> AppResult<Report> {
    let loaded = load_records(dir)?;
    let rep = build(&loaded);
    let out = dir.join("report");
    std::fs::create_dir_all(&out).map_err(AppError::io(&out))?;
    for (name, text) in [("summary.txt", &rep.summary), ("curve.tsv", &rep.curve)] {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(AppError::io(&p))?;
    }
    Ok(rep)
}
