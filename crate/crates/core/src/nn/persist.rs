//! Versioned text persistence for networks.
//!
//! Layout (`ratein-net v1`):
//!
//! ```text
//! ratein-net v1
//! seed <u64>
//! layers <count>
//! dense <in> <out>  |  relu <dim>  |  dropout <dim> <site_id>
//! params <dense_index> <out> <in>
//! <out lines of <in> space-separated weights>
//! bias <dense_index> <out>
//! <one line of <out> space-separated values>
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! `load(save(net))` reproduces bit-identical forward outputs. Lines
//! starting with `#` are comments and are ignored.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{DenseParams, LayerKind, LayerSpec, Network};
use crate::error::{Error, Result};

const MAGIC: &str = "ratein-net v1";

impl Network {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with_comment(path, None)
    }

    /// Save with an optional provenance comment placed under the magic line.
    pub fn save_with_comment(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        if let Some(c) = comment {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str(&format!("seed {}\n", self.rng_seed()));
        out.push_str(&format!("layers {}\n", self.layers().len()));
        for l in self.layers() {
            match l.kind {
                LayerKind::Dense => out.push_str(&format!("dense {} {}\n", l.in_dim, l.out_dim)),
                LayerKind::Relu => out.push_str(&format!("relu {}\n", l.in_dim)),
                LayerKind::DropoutSite => out.push_str(&format!(
                    "dropout {} {}\n",
                    l.in_dim,
                    l.site_id.as_deref().expect("site id")
                )),
            }
        }
        for (i, p) in self.dense_params().iter().enumerate() {
            out.push_str(&format!("params {} {} {}\n", i, p.out_dim, p.in_dim));
            for r in 0..p.out_dim {
                let row = &p.weights[r * p.in_dim..(r + 1) * p.in_dim];
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
            out.push_str(&format!("bias {} {}\n", i, p.out_dim));
            let line: Vec<String> = p.bias.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Network> {
        let f = std::fs::File::open(path)?;
        let mut lines = BufReader::new(f)
            .lines()
            .collect::<std::io::Result<Vec<String>>>()?
            .into_iter()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty());

        let magic = lines.next().ok_or_else(|| bad("empty file"))?;
        if magic.trim() != MAGIC {
            return Err(bad(format!("unsupported header `{magic}`")));
        }
        let seed_line = lines.next().ok_or_else(|| bad("missing seed"))?;
        let seed: u64 = field(&seed_line, "seed")?.parse().map_err(|_| bad("bad seed"))?;
        let count_line = lines.next().ok_or_else(|| bad("missing layer count"))?;
        let n_layers: usize = field(&count_line, "layers")?
            .parse()
            .map_err(|_| bad("bad layer count"))?;

        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let line = lines.next().ok_or_else(|| bad("truncated layer list"))?;
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("dense") => {
                    let i = parse_usize(tok.next(), "dense in_dim")?;
                    let o = parse_usize(tok.next(), "dense out_dim")?;
                    layers.push(LayerSpec::dense(i, o));
                }
                Some("relu") => {
                    let d = parse_usize(tok.next(), "relu dim")?;
                    layers.push(LayerSpec::relu(d));
                }
                Some("dropout") => {
                    let d = parse_usize(tok.next(), "dropout dim")?;
                    let id = tok.next().ok_or_else(|| bad("dropout missing site id"))?;
                    layers.push(LayerSpec::dropout_site(d, id));
                }
                other => return Err(bad(format!("unknown layer kind {other:?}"))),
            }
        }

        let n_dense = layers.iter().filter(|l| l.kind == LayerKind::Dense).count();
        let mut dense = Vec::with_capacity(n_dense);
        for di in 0..n_dense {
            let header = lines.next().ok_or_else(|| bad("missing params block"))?;
            let mut tok = header.split_whitespace();
            if tok.next() != Some("params") {
                return Err(bad(format!("expected params block, got `{header}`")));
            }
            let idx = parse_usize(tok.next(), "params index")?;
            if idx != di {
                return Err(bad(format!("params block {idx} out of order")));
            }
            let out_dim = parse_usize(tok.next(), "params out_dim")?;
            let in_dim = parse_usize(tok.next(), "params in_dim")?;
            let mut weights = Vec::with_capacity(in_dim * out_dim);
            for _ in 0..out_dim {
                let row = lines.next().ok_or_else(|| bad("truncated weight rows"))?;
                let vals = parse_floats(&row, in_dim)?;
                weights.extend(vals);
            }
            let bias_header = lines.next().ok_or_else(|| bad("missing bias block"))?;
            let mut tok = bias_header.split_whitespace();
            if tok.next() != Some("bias") || parse_usize(tok.next(), "bias index")? != di {
                return Err(bad(format!("expected bias block, got `{bias_header}`")));
            }
            let bias_len = parse_usize(tok.next(), "bias len")?;
            let bias_row = lines.next().ok_or_else(|| bad("truncated bias row"))?;
            let bias = parse_floats(&bias_row, bias_len)?;
            dense.push(DenseParams {
                weights,
                bias,
                in_dim,
                out_dim,
            });
        }

        Network::from_parts(layers, dense, seed)
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    let mut tok = line.split_whitespace();
    if tok.next() != Some(key) {
        return Err(bad(format!("expected `{key}` line, got `{line}`")));
    }
    tok.next().ok_or_else(|| bad(format!("missing {key} value")))
}

fn parse_usize(tok: Option<&str>, what: &str) -> Result<usize> {
    tok.and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad {what}")))
}

fn parse_floats(line: &str, expected: usize) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        line.split_whitespace().map(str::parse::<f64>).collect();
    let vals = vals.map_err(|_| bad("bad float"))?;
    if vals.len() != expected {
        return Err(bad(format!(
            "expected {expected} values per row, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}
