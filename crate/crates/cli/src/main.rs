use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use bdt_core::balance::{self, BalanceSpec};
use bdt_core::crossval::{self, crossval};
use bdt_core::dataset::{gen_xor3, load_csv, CsvOptions, Dataset, Schema};
use bdt_core::envelope::write_datum_csv;
use bdt_core::rjmcmc::{run_chain, write_chain_dir};
use bdt_core::{ChainConfig, PriorConfig, ProposalConfig, Strategy, TreePrior};

mod manifest;

use manifest::{DataSource, Run, RunManifest, Seeds, Timings};

/// Default parent of run directories when `--out-dir` is not given.
const OUTPUT_ROOT_VAR: &str = "BDT_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "bdt", version, about = "Bayesian decision trees by reversible-jump MCMC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the XOR3 data set with its schema sidecar.
    GenXor3 {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV path; the schema goes next to it with a `.schema` extension.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        header: bool,
    },
    /// Run one chain and write chain.jsonl, trace.csv, diag.json, manifest.json.
    Sample {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// k-fold cross-validation scored with the uncertainty envelope.
    Crossval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = bdt_core::envelope::DEFAULT_GAMMA0)]
        gamma0: f64,
        /// Also write every fold's chain.jsonl and trace.csv.
        #[arg(long)]
        keep_chains: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Emulate the executed move mix under unavailable proposals.
    Emulate {
        #[arg(long, default_value_t = 0.2)]
        p_b: f64,
        #[arg(long, default_value_t = 0.2)]
        p_d: f64,
        #[arg(long, default_value_t = 0.6)]
        p_c: f64,
        /// Probability mass of unavailable births.
        #[arg(long, default_value_t = 0.1)]
        p_bu: f64,
        /// Probability mass of unavailable changes.
        #[arg(long, default_value_t = 0.3)]
        p_cu: f64,
        #[arg(long, default_value = "standard")]
        mode: Strategy,
        /// Sweeping: share of unavailable changes resampled instead of swept.
        #[arg(long, default_value_t = 0.0)]
        case3_frac: f64,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a `sample` or `crossval` from its manifest.
    Replay {
        /// manifest.json or the run directory holding it.
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Defaults to the data path with a `.schema` extension.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// The CSV's first row is a header.
    #[arg(long)]
    header: bool,
    /// Cell value marking "not applicable".
    #[arg(long)]
    sentinel: Option<f64>,
}

#[derive(Args, Clone)]
struct ChainArgs {
    #[arg(long, default_value = "sweeping")]
    strategy: Strategy,
    #[arg(long, default_value_t = 5)]
    p_min: usize,
    #[arg(long, default_value_t = 20_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 10_000)]
    post: usize,
    #[arg(long, default_value_t = 7)]
    thin: usize,
    /// Dirichlet prior, comma separated, one value per class (default all 1).
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.1)]
    p_birth: f64,
    #[arg(long, default_value_t = 0.1)]
    p_death: f64,
    #[arg(long, default_value_t = 0.2)]
    p_change_split: f64,
    #[arg(long, default_value_t = 0.6)]
    p_change_rule: f64,
    /// Step size of the sweeping change-rule walk.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Depth-dependent split prior `gamma,delta` instead of the uniform one.
    #[arg(long, value_delimiter = ',', num_args = 2, value_names = ["GAMMA", "DELTA"])]
    chipman: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// A bad flag value or combination, reported as `"error": "validation"`.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Invalid(String);

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

impl ChainArgs {
    fn config(&self, class_count: usize) -> anyhow::Result<ChainConfig> {
        let mut prior = PriorConfig::new(class_count, self.p_min);
        if let Some(alpha) = &self.alpha {
            prior.alpha = alpha.clone();
        }
        if let Some(c) = &self.chipman {
            prior.tree_prior = TreePrior::Chipman { gamma: c[0], delta: c[1] };
        }
        let cfg = ChainConfig {
            burn_in: self.burn_in,
            post_burn_in: self.post,
            thin: self.thin,
            seed: self.seed,
            strategy: self.strategy,
            prior,
            proposal: ProposalConfig {
                p_birth: self.p_birth,
                p_death: self.p_death,
                p_change_split: self.p_change_split,
                p_change_rule: self.p_change_rule,
                sigma: self.sigma,
            },
        };
        cfg.validate(class_count).map_err(invalid)?;
        Ok(cfg)
    }
}

impl DataArgs {
    fn source(&self) -> anyhow::Result<DataSource> {
        let schema = self.schema.clone().unwrap_or_else(|| self.data.with_extension("schema"));
        let abs = |p: &Path| std::fs::canonicalize(p).with_context(|| format!("cannot open {}", p.display()));
        Ok(DataSource {
            path: abs(&self.data)?,
            schema: abs(&schema)?,
            header: self.header,
            sentinel: self.sentinel,
        })
    }
}

fn load(src: &DataSource) -> anyhow::Result<Dataset> {
    let schema = Schema::from_file(&src.schema).with_context(|| format!("schema {}", src.schema.display()))?;
    let opts = CsvOptions {
        has_header: src.header,
        sentinel: src.sentinel,
    };
    load_csv(&src.path, &schema, opts).with_context(|| format!("data {}", src.path.display()))
}

fn default_out_dir(kind: &str, cfg: &ChainConfig) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    let strategy = match cfg.strategy {
        Strategy::Standard => "standard",
        Strategy::Sweeping => "sweeping",
    };
    root.join(format!("{kind}-{strategy}-seed{}", cfg.seed))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Runs the job described by `m` into `dir`, filling in seeds and timings.
fn execute(m: &mut RunManifest, d: &Dataset, dir: &Path) -> anyhow::Result<serde_json::Value> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let t0 = Instant::now();
    let summary = match m.run.clone() {
        Run::Sample => {
            let (ensemble, diag) = run_chain(d, &m.config)?;
            m.timings.run_secs = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            write_chain_dir(dir, &ensemble, &diag)?;
            m.timings.write_secs = t1.elapsed().as_secs_f64();
            m.seeds = Seeds {
                master: m.config.seed,
                folds: None,
                chains: vec![m.config.seed],
            };
            json!({
                "out_dir": dir,
                "ensemble_size": ensemble.len(),
                "mean_split_count": ensemble.mean_split_count(),
                "acceptance_rate": diag.acceptance_rate,
                "resample_rate": diag.resample_rate,
            })
        }
        Run::Crossval { folds, gamma0, keep_chains } => {
            let r = crossval(d, folds, gamma0, &m.config)?;
            m.timings.run_secs = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            write_json(&dir.join("report.json"), &r.report)?;
            for f in &r.folds {
                let fold_dir = dir.join(format!("fold-{}", f.fold));
                std::fs::create_dir_all(&fold_dir)?;
                let rows: Vec<_> = f
                    .datums
                    .iter()
                    .map(|row| bdt_core::envelope::DatumResult {
                        index: f.test[row.index],
                        ..row.clone()
                    })
                    .collect();
                let out = BufWriter::new(File::create(fold_dir.join("datums.csv"))?);
                write_datum_csv(out, &rows, d.class_names())?;
                if keep_chains {
                    write_chain_dir(&fold_dir, &f.ensemble, &f.diagnostics)?;
                } else {
                    let s = bdt_core::rjmcmc::ChainSummary::new(&f.ensemble, &f.diagnostics);
                    write_json(&fold_dir.join("diag.json"), &s)?;
                }
            }
            m.timings.write_secs = t1.elapsed().as_secs_f64();
            m.seeds = Seeds {
                master: m.config.seed,
                folds: Some(crossval::fold_seed(m.config.seed)),
                chains: (0..folds).map(|j| crossval::chain_seed(m.config.seed, j)).collect(),
            };
            let a = &r.report.aggregate;
            json!({
                "out_dir": dir,
                "accuracy": a.accuracy.mean,
                "nodes": a.nodes.mean,
                "sure_correct": a.cc.mean,
                "uncertain": a.u.mean,
                "sure_incorrect": a.ci.mean,
            })
        }
    };
    m.write(dir)?;
    Ok(summary)
}

fn start(run: Run, data: &DataArgs, chain: &ChainArgs, out_dir: Option<PathBuf>) -> anyhow::Result<serde_json::Value> {
    if let Run::Crossval { folds, .. } = run {
        if folds < 2 {
            return Err(invalid(format!(
                "--folds must be at least 2, got {folds}; use `bdt sample` to train a single chain on all data"
            )));
        }
    }
    // flag validation that does not need the data comes first
    if chain.p_min == 0 {
        return Err(invalid("--p-min must be at least 1"));
    }
    let t0 = Instant::now();
    let src = data.source()?;
    let d = load(&src)?;
    let load_secs = t0.elapsed().as_secs_f64();
    let config = chain.config(d.class_count())?;
    let kind = match run {
        Run::Sample => "sample",
        Run::Crossval { .. } => "crossval",
    };
    let dir = out_dir.unwrap_or_else(|| default_out_dir(kind, &config));
    let mut m = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        run,
        data: src,
        fingerprint: d.fingerprint(),
        config,
        seeds: Seeds {
            master: chain.seed,
            folds: None,
            chains: Vec::new(),
        },
        timings: Timings {
            load_secs,
            ..Timings::default()
        },
    };
    execute(&mut m, &d, &dir)
}

fn replay(path: &Path, out_dir: &Path) -> anyhow::Result<serde_json::Value> {
    let mut m = RunManifest::read(path)?;
    let t0 = Instant::now();
    let d = load(&m.data)?;
    if d.fingerprint() != m.fingerprint {
        bail!(
            "data {} no longer matches the manifest fingerprint (sha256 {} expected, {} found)",
            m.data.path.display(),
            m.fingerprint.sha256,
            d.fingerprint().sha256
        );
    }
    m.config.validate(d.class_count()).map_err(invalid)?;
    m.timings = Timings {
        load_secs: t0.elapsed().as_secs_f64(),
        ..Timings::default()
    };
    execute(&mut m, &d, out_dir)
}

fn gen(n: usize, seed: u64, out: &Path, header: bool) -> anyhow::Result<serde_json::Value> {
    let d = gen_xor3(n, seed).map_err(|e| invalid(e.to_string()))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    d.write_csv(&mut w, header)?;
    w.flush()?;
    let schema = out.with_extension("schema");
    std::fs::write(&schema, Schema::of(&d).render())?;
    Ok(json!({ "data": out, "schema": schema, "rows": d.n() }))
}

fn emulate(spec: BalanceSpec, seed: u64, out: Option<&Path>) -> anyhow::Result<serde_json::Value> {
    spec.validate().map_err(invalid)?;
    let r = balance::emulate(&spec, seed).map_err(invalid)?;
    match out {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            balance::write_csv(BufWriter::new(f), &spec, &r)?;
            Ok(json!({ "out": path, "realized": r.realized, "analytic": spec.analytic(), "resample_fraction": r.resample_fraction }))
        }
        None => {
            balance::write_csv(std::io::stdout().lock(), &spec, &r)?;
            Ok(serde_json::Value::Null)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    match cli.command {
        Command::GenXor3 { n, seed, out, header } => gen(n, seed, &out, header),
        Command::Sample { data, chain, out_dir } => start(Run::Sample, &data, &chain, out_dir),
        Command::Crossval {
            data,
            chain,
            folds,
            gamma0,
            keep_chains,
            out_dir,
        } => start(Run::Crossval { folds, gamma0, keep_chains }, &data, &chain, out_dir),
        Command::Emulate {
            p_b,
            p_d,
            p_c,
            p_bu,
            p_cu,
            mode,
            case3_frac,
            draws,
            seed,
            out,
        } => {
            let spec = BalanceSpec {
                p_b,
                p_d,
                p_c,
                p_bu,
                p_cu,
                mode,
                case3_frac,
                draws,
            };
            emulate(spec, seed, out.as_deref())
        }
        Command::Replay { manifest, out_dir } => replay(&manifest, &out_dir),
    }
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(if kind == "usage" { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail("usage", first.trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = if e.downcast_ref::<Invalid>().is_some() { "validation" } else { "runtime" };
            fail(kind, &format!("{e:#}"))
        }
    }
}
