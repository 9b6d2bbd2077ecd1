//! Versioned report envelopes, input hashing, and file I/O.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use bppeps::cluster::SCHEMA;
use bppeps::graph::Graph;
use bppeps::peps::{random_hermitian, PepsNetwork};
use bppeps::rng::GENERATOR;
use bppeps::{Error, Matrix, Result};

use crate::GraphArgs;

/// Keys that name outputs rather than inputs; excluded from the hash.
const OUTPUT_KEYS: [&str; 2] = ["output", "csv"];

/// SHA-256 over the resolved config (minus output paths) and the raw bytes
/// of every input file, in order.
pub fn input_hash(config: &impl Serialize, inputs: &[Vec<u8>]) -> Result<String> {
    let cfg = resolved_config(config)?;
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&cfg)?);
    for bytes in inputs {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Resolved config without output destinations, so a report does not
/// depend on where it is written.
fn resolved_config(config: &impl Serialize) -> Result<Value> {
    let mut cfg = serde_json::to_value(config)?;
    if let Value::Object(map) = &mut cfg {
        for k in OUTPUT_KEYS {
            map.remove(k);
        }
    }
    Ok(cfg)
}

pub fn envelope(command: &str, config: &impl Serialize, inputs: &[Vec<u8>], result: Value) -> Result<Value> {
    Ok(json!({
        "schema": SCHEMA,
        "command": command,
        "generator": GENERATOR,
        "config": resolved_config(config)?,
        "input_hash": input_hash(config, inputs)?,
        "result": result,
    }))
}

/// Pretty JSON to `path`, or stdout when absent.
pub fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))
}

/// A network file is either a `generate` report or a bare network object.
pub fn load_network(path: &Path) -> Result<(Vec<u8>, PepsNetwork)> {
    let bytes = read(path)?;
    let mut value: Value = serde_json::from_slice(&bytes)?;
    let inner =
        value.pointer_mut("/result/network").map(Value::take).or_else(|| value.get_mut("network").map(Value::take));
    if let Some(v) = inner {
        value = v;
    }
    Ok((bytes, serde_json::from_value(value)?))
}

pub fn load_graph(args: &GraphArgs) -> Result<(Vec<u8>, Graph)> {
    match (&args.graph, &args.graph_file) {
        (Some(spec), None) => Ok((Vec::new(), Graph::parse_spec(spec)?)),
        (None, Some(path)) => {
            let bytes = read(path)?;
            let g: Graph = serde_json::from_slice(&bytes)?;
            Ok((bytes, g))
        }
        _ => Err(Error::Invalid("exactly one of --graph or --graph-file is required".into())),
    }
}

/// `identity`, `random-hermitian:SEED`, or a path to a matrix JSON file.
pub fn load_operator(spec: &str, d: usize) -> Result<(Vec<u8>, Matrix)> {
    if spec == "identity" {
        return Ok((Vec::new(), Matrix::identity(d)));
    }
    if let Some(seed) = spec.strip_prefix("random-hermitian:") {
        let seed: u64 = seed.parse().map_err(|_| Error::Invalid(format!("bad operator seed in {spec:?}")))?;
        return Ok((Vec::new(), random_hermitian(d, seed)));
    }
    let bytes = read(Path::new(spec))?;
    let m: Matrix = serde_json::from_slice(&bytes)?;
    if m.rows() != d || m.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "operator {spec} is {}x{}, physical dimension is {d}",
            m.rows(),
            m.cols()
        )));
    }
    Ok((bytes, m))
}

/// Six significant digits for human-facing summaries.
pub fn sig6(x: f64) -> String {
    format!("{x:.5e}")
}
