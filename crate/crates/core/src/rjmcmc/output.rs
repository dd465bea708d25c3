//! Chain artifacts: `chain.jsonl` (one snapshot per line), `trace.csv` and
//! `diag.json`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChainConfig, ChainDiagnostics, Ensemble};
use crate::tree::{NodeRecord, Tree};

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotLine {
    iteration: usize,
    split_count: usize,
    nodes: Vec<NodeRecord>,
}

/// `diag.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub acceptance_rate: f64,
    pub resample_rate: f64,
    pub proposed: u64,
    pub accepted: u64,
    /// Unavailable draws thrown back for another draw.
    #[serde(rename = "resampled_count")]
    pub unavailable: u64,
    #[serde(rename = "swept_count")]
    pub swept: u64,
    pub stalled: u64,
    pub ensemble_size: usize,
    pub mean_split_count: f64,
    pub config: ChainConfig,
}

impl ChainSummary {
    pub fn new(e: &Ensemble, d: &ChainDiagnostics) -> Self {
        ChainSummary {
            acceptance_rate: d.acceptance_rate,
            resample_rate: d.resample_rate,
            proposed: d.proposed,
            accepted: d.accepted,
            unavailable: d.unavailable,
            swept: d.swept,
            stalled: d.stalled,
            ensemble_size: e.len(),
            mean_split_count: e.mean_split_count(),
            config: e.config.clone(),
        }
    }
}

pub fn write_chain_dir(dir: &Path, e: &Ensemble, d: &ChainDiagnostics) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut out = BufWriter::new(File::create(dir.join("chain.jsonl"))?);
    for (t, &iteration) in e.trees.iter().zip(&e.iterations) {
        let line = SnapshotLine {
            iteration,
            split_count: t.split_count(),
            nodes: t.to_record(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let mut trace = csv::Writer::from_path(dir.join("trace.csv"))?;
    trace.write_record(["iteration", "log_lik", "split_count", "accepted", "unavailable", "move", "swept"])?;
    for r in &d.trace {
        trace.write_record([
            r.iteration.to_string(),
            format!("{:.10}", r.log_likelihood),
            r.split_count.to_string(),
            u8::from(r.accepted).to_string(),
            r.unavailable.to_string(),
            r.kind.map_or("none", |k| k.name()).to_string(),
            u8::from(r.swept).to_string(),
        ])?;
    }
    trace.flush()?;

    let f = BufWriter::new(File::create(dir.join("diag.json"))?);
    serde_json::to_writer_pretty(f, &ChainSummary::new(e, d))?;
    Ok(())
}

/// Reads snapshots back as membership-free trees.
pub fn read_chain_jsonl(path: &Path, class_count: usize) -> std::io::Result<Vec<(usize, Tree)>> {
    let bad = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SnapshotLine = serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
        let t = Tree::from_record(&s.nodes, class_count)
            .ok_or_else(|| bad(format!("line {}: malformed tree", i + 1)))?;
        out.push((s.iteration, t));
    }
    Ok(out)
}
