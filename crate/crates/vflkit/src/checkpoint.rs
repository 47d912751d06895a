//! Text checkpoints that reload bit-exactly.
//!
//! ```text
//! vflkit-checkpoint 1
//! network passive_2 input 8
//! dense 8 32
//! w 1.25e-1 -3.5e-2 ...      (one line per weight row)
//! b 0e0 ...
//! relu
//! end
//! ```
//!
//! Floats use Rust's shortest round-trip exponent form, so parsing gives
//! back the identical bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use vflkit_core::engine::Federation;
use vflkit_core::nn::{DenseParams, LayerSpec, Network};
use vflkit_core::Tensor;

use crate::error::{AppError, AppResult, Context};

pub const MAGIC: &str = "vflkit-checkpoint 1";

/// Named networks in a stable order.
pub type Checkpoint = BTreeMap<String, Network>;

pub fn passive_name(k: usize) -> String {
    format!("passive_{}", k + 1)
}

/// Every network the federation holds.
pub fn from_federation(fed: &Federation) -> Checkpoint {
    let mut out = Checkpoint::new();
    out.insert("active_extractor".into(), fed.active_extractor().clone());
    out.insert("head".into(), fed.head().clone());
    for (mask, head) in fed.extra_heads() {
        out.insert(format!("head_absent_{mask}"), head.clone());
    }
    for k in 1..fed.parties() {
        out.insert(passive_name(k), fed.passive(k).extractor().clone());
    }
    if let Some(d) = fed.dimip() {
        out.insert("aux_predictor".into(), d.aux_predictor().clone());
    }
    out
}

pub fn render(ckpt: &Checkpoint) -> String {
    let mut s = String::new();
    s.push_str(MAGIC);
    s.push('\n');
    for (name, net) in ckpt {
        let _ = writeln!(s, "network {name} input {}", net.input_dim());
        let mut params = net.params().iter();
        for layer in net.layers() {
            match *layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let p = params.next().expect("one parameter block per dense layer");
                    let _ = writeln!(s, "dense {in_dim} {out_dim}");
                    for r in 0..p.weight.rows() {
                        row_line(&mut s, "w", p.weight.row(r));
                    }
                    row_line(&mut s, "b", p.bias.row(0));
                }
                LayerSpec::Relu => s.push_str("relu\n"),
                LayerSpec::SoftmaxOutput => s.push_str("softmax\n"),
            }
        }
        s.push_str("end\n");
    }
    s
}

fn row_line(s: &mut String, tag: &str, row: &[f64]) {
    s.push_str(tag);
    for v in row {
        let _ = write!(s, " {v:e}");
    }
    s.push('\n');
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> AppResult<()> {
    std::fs::write(path, render(ckpt)).map_err(AppError::io(path))
}

pub fn load(path: &Path) -> AppResult<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(AppError::io(path))?;
    parse(&text, &path.display().to_string())
}

pub fn parse(text: &str, origin: &str) -> AppResult<Checkpoint> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
    let err = |line: usize, detail: String| AppError::Parse {
        path: origin.to_string(),
        line,
        detail,
    };
    match lines.next() {
        Some((_, MAGIC)) => {}
        Some((n, other)) => return Err(err(n, format!("expected `{MAGIC}`, found `{other}`"))),
        None => return Err(err(0, "empty file".into())),
    }
    let mut out = Checkpoint::new();
    while let Some((n, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let head: Vec<&str> = line.split_whitespace().collect();
        let (name, input) = match head.as_slice() {
            ["network", name, "input", d] => (name.to_string(), parse_usize(d).map_err(|e| err(n, e))?),
            _ => return Err(err(n, format!("expected `network <name> input <dim>`, found `{line}`"))),
        };
        let mut layers = Vec::new();
        let mut params = Vec::new();
        loop {
            let Some((n, line)) = lines.next() else {
                return Err(err(n, format!("network `{name}` has no `end`")));
            };
            let tok: Vec<&str> = line.split_whitespace().collect();
            match tok.as_slice() {
                ["end"] => break,
                ["relu"] => layers.push(LayerSpec::Relu),
                ["softmax"] => layers.push(LayerSpec::SoftmaxOutput),
                ["dense", i, o] => {
                    let (i, o) = (parse_usize(i).map_err(|e| err(n, e))?, parse_usize(o).map_err(|e| err(n, e))?);
                    let mut w = Vec::with_capacity(i * o);
                    for _ in 0..i {
                        let (m, l) = lines.next().ok_or_else(|| err(n, "truncated weight block".into()))?;
                        w.extend(values(l, "w", o).map_err(|e| err(m, e))?);
                    }
                    let (m, l) = lines.next().ok_or_else(|| err(n, "missing bias row".into()))?;
                    let b = values(l, "b", o).map_err(|e| err(m, e))?;
                    layers.push(LayerSpec::dense(i, o));
                    params.push(DenseParams {
                        weight: Tensor::matrix(i, o, w).context("checkpoint weight")?,
                        bias: Tensor::matrix(1, o, b).context("checkpoint bias")?,
                    });
                }
                _ => return Err(err(n, format!("unexpected line `{line}`"))),
            }
        }
        let net = Network::from_parts(input, layers, params).context(&format!("{origin}: network `{name}`"))?;
        if out.insert(name.clone(), net).is_some() {
            return Err(err(n, format!("network `{name}` appears twice")));
        }
    }
    Ok(out)
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.parse().map_err(|_| format!("`{s}` is not a non-negative integer"))
}

fn values(line: &str, tag: &str, expect: usize) -> Result<Vec<f64>, String> {
    let mut tok = line.split_whitespace();
    if tok.next() != Some(tag) {
        return Err(format!("expected a `{tag}` row"));
    }
    let v: Vec<f64> = tok
        .map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect::<Result<_, _>>()?;
    if v.len() != expect {
        return Err(format!("`{tag}` row has {} values, expected {expect}", v.len()));
    }
    Ok(v)
}
