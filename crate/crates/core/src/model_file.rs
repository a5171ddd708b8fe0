//! Model file: a text header followed by the retained draws in binary.
//!
//! ```text
//! horserule-model v1
//! {"format_version":1, "config":..., "rules":[...], ...}   (one JSON line)
//! draws <R> <C>
//! <R records of (2 + C) little-endian f64: sigma2, tau2, beta[0..C]>
//! ```
//!
//! The header stores every rule both as text and as structured conditions.
//! Floats in the header round-trip exactly, so a model read back predicts
//! bit-identically to the one written.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::data::{Schema, ScalingInfo};
use crate::design::ColumnMeta;
use crate::error::{Error, Result};
use crate::model::{FitConfig, FittedModel};
use crate::rules::Rule;
use crate::sampler::{PosteriorDraws, PriorSpec};

pub const MAGIC: &str = "horserule-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RuleEntry {
    text: String,
    #[serde(flatten)]
    rule: Rule,
}

#[derive(Serialize, Deserialize)]
struct SamplerInfo {
    niter: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    target: String,
    n_train: usize,
    n_raw_rules: usize,
    config: FitConfig,
    schema: Schema,
    scaling: ScalingInfo,
    columns: Vec<ColumnMeta>,
    rules: Vec<RuleEntry>,
    prior: PriorSpec,
    sampler: SamplerInfo,
}

pub fn write_model_to<W: Write>(model: &FittedModel, mut out: W) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        target: model.target.clone(),
        n_train: model.n_train,
        n_raw_rules: model.n_raw_rules,
        config: model.config.clone(),
        schema: model.schema.clone(),
        scaling: model.scaling.clone(),
        columns: model.columns.clone(),
        rules: model
            .rules
            .iter()
            .map(|r| RuleEntry {
                text: r.render(&model.schema.features),
                rule: r.clone(),
            })
            .collect(),
        prior: model.prior.clone(),
        sampler: SamplerInfo {
            niter: model.draws.niter,
            burnin: model.draws.burnin,
            thin: model.draws.thin,
            seed: model.draws.seed,
        },
    };
    let json = serde_json::to_string(&header).map_err(|e| Error::ModelFile(e.to_string()))?;
    let d = &model.draws;
    let (r, c) = (d.n_draws(), d.n_columns());
    let mut buf = Vec::with_capacity(json.len() + 64 + 8 * r * (c + 2));
    writeln!(buf, "{MAGIC} v{FORMAT_VERSION}").expect("write to Vec");
    buf.extend_from_slice(json.as_bytes());
    buf.push(b'\n');
    writeln!(buf, "draws {r} {c}").expect("write to Vec");
    for k in 0..r {
        buf.extend_from_slice(&d.sigma2[k].to_le_bytes());
        buf.extend_from_slice(&d.tau2[k].to_le_bytes());
        for j in 0..c {
            buf.extend_from_slice(&d.beta[(k, j)].to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(|e| Error::ModelFile(e.to_string()))
}

pub fn write_model(model: &FittedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_model_to(model, std::io::BufWriter::new(file))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFile(msg.into())
}

fn read_line<R: BufRead>(input: &mut R) -> Result<String> {
    let mut line = String::new();
    input.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
    if !line.ends_with('\n') {
        return Err(bad("truncated header"));
    }
    line.pop();
    Ok(line)
}

pub fn read_model_from<R: BufRead>(mut input: R) -> Result<FittedModel> {
    let magic = read_line(&mut input)?;
    let version = magic
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().strip_prefix('v'))
        .ok_or_else(|| bad("not a horserule model file"))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(bad(format!("unsupported format version {version} (expected {FORMAT_VERSION})")));
    }
    let header: Header = serde_json::from_str(&read_line(&mut input)?).map_err(|e| bad(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!("header format version {} does not match", header.format_version)));
    }
    let dims = read_line(&mut input)?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    let (r, c) = match parts.as_slice() {
        ["draws", r, c] => (
            r.parse::<usize>().map_err(|_| bad("bad draw count"))?,
            c.parse::<usize>().map_err(|_| bad("bad column count"))?,
        ),
        _ => return Err(bad("missing draws line")),
    };
    if c != header.columns.len() {
        return Err(bad(format!("{c} coefficient columns but {} design columns", header.columns.len())));
    }
    if header.prior.scales.len() != c {
        return Err(bad("prior length does not match the design"));
    }

    let mut block = Vec::new();
    input.read_to_end(&mut block).map_err(|e| bad(e.to_string()))?;
    if block.len() != 8 * r * (c + 2) {
        return Err(bad(format!("draw block has {} bytes, expected {}", block.len(), 8 * r * (c + 2))));
    }
    let values: Vec<f64> = block
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let stride = c + 2;
    let draws = PosteriorDraws {
        beta: Mat::from_fn(r, c, |k, j| values[k * stride + 2 + j]),
        sigma2: (0..r).map(|k| values[k * stride]).collect(),
        tau2: (0..r).map(|k| values[k * stride + 1]).collect(),
        lambda2: None,
        niter: header.sampler.niter,
        burnin: header.sampler.burnin,
        thin: header.sampler.thin,
        seed: header.sampler.seed,
    };
    let rules: Vec<Rule> = header.rules.into_iter().map(|e| e.rule).collect();
    for meta in &header.columns {
        if let crate::design::ColumnRole::Rule(k) = meta.role {
            if k >= rules.len() {
                return Err(bad(format!("column refers to missing rule {k}")));
            }
        }
    }
    Ok(FittedModel {
        config: header.config,
        schema: header.schema,
        target: header.target,
        scaling: header.scaling,
        columns: header.columns,
        rules,
        prior: header.prior,
        draws,
        n_train: header.n_train,
        n_raw_rules: header.n_raw_rules,
    })
}

pub fn read_model(path: impl AsRef<Path>) -> Result<FittedModel> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model_from(std::io::BufReader::new(file))
}
