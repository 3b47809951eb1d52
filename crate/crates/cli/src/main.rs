use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use vbblocks::io::{write_cost_trace, write_posteriors, TraceRow};
use vbblocks::learning::train_with;
use vbblocks::models::{predict_next, predictive_perplexity, synth_sequence, DynModel, ModelSpec, MotionProfile, SynthParams};
use vbblocks::structure::{prune, CascadePolicy};
use vbblocks::{DataFormat, DataMatrix, Error, ModelGraph, Network, TrainConfig};

#[derive(Parser)]
#[command(name = "vbblocks", version, about = "Variational Bayesian building blocks: train, predict, generate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

impl From<Format> for DataFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => DataFormat::Csv,
            Format::Bin => DataFormat::Bin,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a model from a JSON spec, train it on a data matrix (rows are
    /// samples) and write the cost trace, posteriors, graph and manifest.
    Train {
        spec: PathBuf,
        data: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        sweeps: usize,
        /// Relative cost change below which training counts as converged.
        #[arg(long, default_value_t = 1e-6, allow_negative_numbers = true)]
        tol: f64,
        /// Pattern search after every N sweeps; 0 turns it off.
        #[arg(long = "pattern-every", default_value_t = 10)]
        pattern_every: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Prune after every N sweeps; 0 turns it off.
        #[arg(long = "prune-every", default_value_t = 0)]
        prune_every: usize,
        /// Data format; by default `.bin` files are binary, others CSV.
        #[arg(long)]
        format: Option<Format>,
    },
    /// One-step predictions from a trained DynVar or DynSrc graph.
    Predict {
        graph: PathBuf,
        data: PathBuf,
        out: PathBuf,
        #[arg(long)]
        format: Option<Format>,
    },
    /// Synthetic sequence with a known innovation-variance profile.
    Gen {
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        xdim: usize,
        #[arg(long, default_value_t = 4)]
        sdim: usize,
        #[arg(long, default_value_t = 300)]
        tdim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "noise-logprec", default_value_t = 4.0, allow_negative_numbers = true)]
        noise_logprec: f64,
        #[arg(long)]
        radius: Option<f64>,
        /// Log-precision profile as JSON, for example
        /// `{"kind":"step","before":1,"after":-1,"at":150}`. Defaults to a
        /// high-variance middle third.
        #[arg(long)]
        profile: Option<String>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Compare two perplexity.csv files frame by frame.
    Compare { a: PathBuf, b: PathBuf },
}

struct Failure {
    code: u8,
    msg: String,
}

type CliResult<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

/// Validation problems exit with 3, bad input with 2, anything that goes
/// wrong during the numerics with 1.
fn classify(context: &str, e: Error) -> Failure {
    let code = match &e {
        Error::Invalid(_) | Error::IllegalRole { .. } | Error::ScalarChildVectorParent { .. } | Error::UnresolvedProxy(_) => 3,
        Error::MissingExpStat | Error::NonPositiveQuad(_) => 1,
        _ => 2,
    };
    let msg = if code == 3 && !e.to_string().contains("allowed-connectivity table") {
        format!("{context}: model violates the allowed-connectivity table: {e}")
    } else {
        format!("{context}: {e}")
    };
    Failure { code, msg }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    usage(format!("{}: {e}", path.display()))
}

fn sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes to a sibling temporary file, then renames over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Failure { code: 1, msg: format!("{}: {e}", tmp.display()) })?;
    fs::rename(&tmp, path).map_err(|e| Failure { code: 1, msg: format!("{}: {e}", path.display()) })
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| Failure { code: 1, msg: format!("{}: {e}", dir.display()) })?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn manifest(&mut self, mut m: Value) -> CliResult<()> {
        self.written.push("manifest.json".into());
        m["outputs"] = json!(self.written);
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        write_atomic(&self.dir.join("manifest.json"), text.as_bytes())
    }
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn parse_data(path: &Path, bytes: &[u8], format: Option<Format>) -> CliResult<DataMatrix> {
    let format = format.map(DataFormat::from).unwrap_or_else(|| DataFormat::from_path(path));
    let parsed = match format {
        DataFormat::Csv => DataMatrix::read_csv(bytes),
        DataFormat::Bin => DataMatrix::read_bin(bytes),
    };
    parsed.map_err(|e| classify(&format!("data {}", path.display()), e))
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> vbblocks::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| Failure { code: 1, msg: e.to_string() })?;
    Ok(buf)
}

fn cost_json(total: f64, bits: f64) -> Value {
    json!({ "nats": total, "bits_per_sample": bits })
}

fn cmd_train(
    spec_path: &Path,
    data_path: &Path,
    out: &Path,
    config: TrainConfig,
    prune_every: usize,
    format: Option<Format>,
) -> CliResult<()> {
    let t0 = Instant::now();
    config.check().map_err(|e| classify("--tol", e))?;
    let spec_bytes = read_input(spec_path)?;
    let spec: ModelSpec = serde_json::from_slice(&spec_bytes)
        .map_err(|e| usage(format!("model spec {}: {e}", spec_path.display())))?;
    let data_bytes = read_input(data_path)?;
    let data = parse_data(data_path, &data_bytes, format)?;
    let mut net = spec.build(&data, config.seed).map_err(|e| classify("model spec", e))?;

    let policy = CascadePolicy::default();
    let mut prunes = Vec::new();
    let mut rows = Vec::new();
    let n0 = net.graph().node_count();
    let trace = train_with(&mut net, &config, |k, net| {
        if prune_every > 0 && k % prune_every == 0 {
            prunes.extend(prune(net, 0.0, &policy)?.into_iter().map(|r| (k, r)));
        }
        let c = net.cost()?;
        rows.push(TraceRow {
            sweep: k,
            total_nats: c.total,
            bits_per_sample: c.bits_per_sample,
            n_nodes: net.graph().node_count(),
        });
        Ok(())
    })
    .map_err(|e| classify("training", e))?;
    rows.insert(
        0,
        TraceRow { sweep: 0, total_nats: trace.initial.total, bits_per_sample: trace.initial.bits_per_sample, n_nodes: n0 },
    );

    let mut o = Outputs::new(out)?;
    o.put("cost_trace.csv", &csv_bytes(|b| write_cost_trace(b, &rows))?)?;
    o.put("posteriors.csv", &csv_bytes(|b| write_posteriors(b, &net))?)?;
    let graph = net.graph().to_json(true).map_err(|e| classify("graph", e))?;
    o.put("graph.json", graph.as_bytes())?;
    if !prunes.is_empty() {
        let lines: String = prunes
            .iter()
            .map(|(k, r)| {
                let mut v: Value = serde_json::from_str(&r.to_json_line()).expect("report line is JSON");
                v["sweep"] = json!(k);
                format!("{v}\n")
            })
            .collect();
        o.put("prune_log.jsonl", lines.as_bytes())?;
    }
    let fin = trace.final_cost();
    o.manifest(json!({
        "command": "train",
        "config": {
            "spec": serde_json::from_slice::<Value>(&spec_bytes).unwrap_or(Value::Null),
            "sweeps": config.max_sweeps,
            "tol": config.rel_tol,
            "pattern_every": config.pattern_search_every,
            "prune_every": prune_every,
            "format": format.map(|f| match f { Format::Csv => "csv", Format::Bin => "bin" }),
        },
        "seed": config.seed,
        "inputs": {
            spec_path.display().to_string(): sha256(&spec_bytes),
            data_path.display().to_string(): sha256(&data_bytes),
        },
        "sweeps_run": trace.sweeps.len(),
        "converged": trace.converged,
        "wall_time_s": t0.elapsed().as_secs_f64(),
        "final_cost": cost_json(fin.total, fin.bits_per_sample),
    }))
}

fn cmd_predict(graph_path: &Path, data_path: &Path, out: &Path, format: Option<Format>) -> CliResult<()> {
    let t0 = Instant::now();
    let graph_bytes = read_input(graph_path)?;
    let text = std::str::from_utf8(&graph_bytes).map_err(|e| io_err(graph_path, e))?;
    let g = ModelGraph::<f64>::from_json(text).map_err(|e| classify(&format!("graph {}", graph_path.display()), e))?;
    let model = DynModel::locate(&g).map_err(|e| classify(&format!("graph {}", graph_path.display()), e))?;
    let net = Network::new(g).map_err(|e| classify(&format!("graph {}", graph_path.display()), e))?;
    let data_bytes = read_input(data_path)?;
    let data = parse_data(data_path, &data_bytes, format)?;
    let tdim = net.graph().sample_count();
    if data.cols != model.xdim {
        return Err(usage(format!("data {}: dimension mismatch in columns: expected {}, got {}", data_path.display(), model.xdim, data.cols)));
    }
    if data.rows != tdim {
        return Err(usage(format!("data {}: dimension mismatch in rows: expected {tdim}, got {}", data_path.display(), data.rows)));
    }

    let mut pred_csv = String::from("t,dim,mean,variance\n");
    let mut ppl_csv = String::from("t,perplexity\n");
    let mut total = 0.0;
    for t in 0..tdim.saturating_sub(1) {
        let p = predict_next(&net, &model, t).map_err(|e| classify("prediction", e))?;
        for (i, (m, v)) in p.mean.iter().zip(&p.var).enumerate() {
            pred_csv.push_str(&format!("{},{i},{m},{v}\n", t + 1));
        }
        let ppl = predictive_perplexity(&p, data.row(t + 1)).map_err(|e| classify("perplexity", e))?;
        total += ppl;
        ppl_csv.push_str(&format!("{},{ppl}\n", t + 1));
    }
    let mut o = Outputs::new(out)?;
    o.put("predictions.csv", pred_csv.as_bytes())?;
    o.put("perplexity.csv", ppl_csv.as_bytes())?;
    let frames = tdim.saturating_sub(1);
    o.manifest(json!({
        "command": "predict",
        "config": { "model": format!("{:?}", model.kind) },
        "seed": Value::Null,
        "inputs": {
            graph_path.display().to_string(): sha256(&graph_bytes),
            data_path.display().to_string(): sha256(&data_bytes),
        },
        "wall_time_s": t0.elapsed().as_secs_f64(),
        "mean_perplexity": if frames > 0 { json!(total / frames as f64) } else { Value::Null },
    }))
}

fn cmd_gen(out: &Path, params: SynthParams, format: Format) -> CliResult<()> {
    let t0 = Instant::now();
    let syn = synth_sequence(&params).map_err(|e| classify("gen", e))?;
    let fmt = DataFormat::from(format);
    let ext = match format {
        Format::Csv => "csv",
        Format::Bin => "bin",
    };
    let bytes = |m: &DataMatrix| m.to_bytes(fmt).map_err(|e| Failure { code: 1, msg: e.to_string() });
    let mut o = Outputs::new(out)?;
    o.put(&format!("data.{ext}"), &bytes(&syn.data)?)?;
    o.put(&format!("truth_u.{ext}"), &bytes(&syn.u)?)?;
    o.put(&format!("truth_s.{ext}"), &bytes(&syn.s)?)?;
    o.put(&format!("truth_a.{ext}"), &bytes(&syn.a)?)?;
    let mask = DataMatrix::new(
        params.xdim,
        params.sdim,
        syn.mask.iter().flatten().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )
    .map_err(|e| Failure { code: 1, msg: e.to_string() })?;
    o.put(&format!("truth_mask.{ext}"), &bytes(&mask)?)?;
    o.manifest(json!({
        "command": "gen",
        "config": params,
        "seed": params.seed,
        "inputs": {},
        "wall_time_s": t0.elapsed().as_secs_f64(),
    }))
}

fn read_perplexity(path: &Path) -> CliResult<Vec<(usize, f64)>> {
    let text = String::from_utf8(read_input(path)?).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("t,perplexity") {
        return Err(usage(format!("{}: header must be `t,perplexity`", path.display())));
    }
    lines
        .enumerate()
        .map(|(k, l)| {
            let bad = || usage(format!("{}: row {}: expected `t,perplexity`, got `{l}`", path.display(), k + 1));
            let (t, p) = l.split_once(',').ok_or_else(bad)?;
            Ok((t.trim().parse().map_err(|_| bad())?, p.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

fn cmd_compare(a: &Path, b: &Path) -> CliResult<()> {
    let (ra, rb) = (read_perplexity(a)?, read_perplexity(b)?);
    if ra.len() != rb.len() || ra.iter().zip(&rb).any(|(x, y)| x.0 != y.0) {
        return Err(usage(format!("{} and {} cover different frames", a.display(), b.display())));
    }
    if ra.is_empty() {
        return Err(usage("no frames to compare"));
    }
    let n = ra.len() as f64;
    let mean = |r: &[(usize, f64)]| r.iter().map(|x| x.1).sum::<f64>() / n;
    let lower = ra.iter().zip(&rb).filter(|(x, y)| x.1 < y.1).count();
    let log_ratio = ra.iter().zip(&rb).map(|(x, y)| (x.1 / y.1).ln()).sum::<f64>() / n;
    println!(
        "{}",
        json!({
            "frames": ra.len(),
            "mean_a": mean(&ra),
            "mean_b": mean(&rb),
            "frames_a_lower": lower,
            "mean_log_ratio": log_ratio,
        })
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { spec, data, out, sweeps, tol, pattern_every, seed, prune_every, format } => {
            let config = TrainConfig { max_sweeps: sweeps, rel_tol: tol, pattern_search_every: pattern_every, seed };
            cmd_train(&spec, &data, &out, config, prune_every, format)
        }
        Command::Predict { graph, data, out, format } => cmd_predict(&graph, &data, &out, format),
        Command::Gen { out, xdim, sdim, tdim, seed, noise_logprec, radius, profile, format } => {
            let profile = match profile {
                Some(p) => serde_json::from_str::<MotionProfile>(&p).map_err(|e| usage(format!("--profile: {e}")))?,
                None => MotionProfile::middle_window(tdim),
            };
            cmd_gen(&out, SynthParams { xdim, sdim, tdim, seed, profile, noise_logprec, radius }, format)
        }
        Command::Compare { a, b } => cmd_compare(&a, &b),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
