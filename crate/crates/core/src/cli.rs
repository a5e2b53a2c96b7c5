//! `vlfb` command-line front end.
//!
//! Exit codes: 0 ok, 1 verification failure, 2 invalid input, 3 runtime
//! anomaly (abort rate above 1%, I/O failure, replay mismatch).

use std::f64::consts::LN_2;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dmc::{channel_constants, Channel, ChannelConstants, DEFAULT_BA_TOLERANCE};
use crate::exponents::{
    classical_curves, default_delta_grid, default_rate_grid, delta_schedule, optimize_delta,
    BoundReport,
};
use crate::harness::{run_verify, VerifyConfig};
use crate::yischeme::{episodes_csv, simulate, simulate_with_episodes, YiConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_ANOMALY: i32 = 3;

/// Abort fraction above which `simulate` exits with [`EXIT_ANOMALY`].
const MAX_ABORT_RATE: f64 = 0.01;

#[derive(Debug, Parser)]
#[command(
    name = "vlfb",
    version,
    about = "Variable-length coding with feedback: constants, bounds, simulation"
)]
struct Cli {
    /// Base seed for every randomized command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Display information quantities in bits instead of nats.
    #[arg(long, global = true)]
    bits: bool,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Capacity, C1, lambda, best pair and optimal input distribution.
    ChannelInfo { channel: String },
    /// Burnashev and classical exponent curves as CSV.
    Curves {
        channel: String,
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// Leave the Burnashev column empty (allows channels with zero transitions).
        #[arg(long)]
        no_burnashev: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lower bound on the expected decoding time.
    Bound {
        channel: String,
        #[arg(long)]
        m: u64,
        #[arg(long)]
        pe: f64,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Monte Carlo campaign of the two-phase scheme.
    Simulate {
        channel: String,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n1: usize,
        #[arg(long)]
        n2: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        code_seed: u64,
        #[arg(long, default_value_t = crate::yischeme::DEFAULT_MAX_ROUNDS)]
        max_rounds: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        episodes_csv: Option<PathBuf>,
    },
    /// Exact tree slices and statistical process checks.
    Verify {
        /// Depth of the exhaustive tree slice.
        #[arg(long)]
        depth: Option<usize>,
        /// Exhaustive slice at depth 3 unless --depth says otherwise.
        #[arg(long)]
        exhaustive: bool,
        /// JSON file overriding gates and trial counts.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a manifest and compare its outputs byte for byte.
    Replay { manifest: PathBuf },
}

/// Written next to every artifact as `<out>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub argv: Vec<String>,
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

fn invalid(message: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_INVALID_INPUT,
        message: message.to_string(),
    }
}

fn anomaly(message: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_ANOMALY,
        message: message.to_string(),
    }
}

type CmdResult = Result<i32, CliError>;

struct Ctx {
    seed: u64,
    json: bool,
    bits: bool,
    argv: Vec<String>,
}

impl Ctx {
    fn unit(&self) -> &'static str {
        if self.bits {
            "bits"
        } else {
            "nats"
        }
    }

    fn info(&self, v: f64) -> f64 {
        if self.bits {
            v / LN_2
        } else {
            v
        }
    }
}

/// JSON number, or `"inf"`/`"-inf"` for infinities.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else if v < 0.0 {
        json!("-inf")
    } else {
        Value::Null
    }
}

/// Output sinks; write failures on them are ignored like a closed pipe.
struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

macro_rules! say {
    ($w:expr, $($t:tt)*) => {{
        let _ = writeln!($w, $($t)*);
    }};
}

/// Parses `args` (program name first), runs the command on stdout/stderr,
/// returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr())
}

/// [`run`] with explicit output sinks.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let io = &mut Io { out, err };
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = io.err.write_all(text.as_bytes());
                EXIT_INVALID_INPUT
            } else {
                let _ = io.out.write_all(text.as_bytes());
                EXIT_OK
            };
        }
    };
    if let Some(n) = cli.workers {
        // a second call (replay) finds the pool already built
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let ctx = Ctx {
        seed: cli.seed,
        json: cli.json,
        bits: cli.bits,
        argv: args
            .iter()
            .skip(1)
            .map(|a| a.to_string_lossy().into_owned())
            .collect(),
    };
    let result = match &cli.command {
        Command::ChannelInfo { channel } => cmd_channel_info(&ctx, io, channel),
        Command::Curves {
            channel,
            points,
            no_burnashev,
            out,
        } => cmd_curves(&ctx, io, channel, *points, *no_burnashev, out.as_deref()),
        Command::Bound {
            channel,
            m,
            pe,
            delta,
        } => cmd_bound(&ctx, io, channel, *m, *pe, *delta),
        Command::Simulate {
            channel,
            m,
            n1,
            n2,
            threshold,
            code_seed,
            max_rounds,
            trials,
            out,
            episodes_csv,
        } => {
            let cfg = YiConfig {
                m: *m,
                n1: *n1,
                n2: *n2,
                threshold: *threshold,
                code_seed: *code_seed,
                max_rounds: *max_rounds,
            };
            cmd_simulate(
                &ctx,
                io,
                channel,
                cfg,
                *trials,
                out.as_deref(),
                episodes_csv.as_deref(),
            )
        }
        Command::Verify {
            depth,
            exhaustive,
            config,
            out,
        } => cmd_verify(
            &ctx,
            io,
            *depth,
            *exhaustive,
            config.as_deref(),
            out.as_deref(),
        ),
        Command::Replay { manifest } => cmd_replay(io, manifest),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            say!(io.err, "error: {}", e.message);
            e.code
        }
    }
}

fn load_channel(spec: &str) -> Result<(Channel, ChannelConstants), CliError> {
    let ch = Channel::from_spec(spec).map_err(|e| invalid(format!("channel {spec}: {e}")))?;
    let consts = channel_constants(&ch, DEFAULT_BA_TOLERANCE)
        .map_err(|e| anomaly(format!("channel {spec}: {e}")))?;
    Ok((ch, consts))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| anomaly(format!("writing {}: {e}", path.display())))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(
    ctx: &Ctx,
    command: &str,
    config: Value,
    out: &Path,
    outputs: &[&Path],
) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: command.to_string(),
        config,
        seed: ctx.seed,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        argv: ctx.argv.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&manifest_path(out), &text)
}

fn cmd_channel_info(ctx: &Ctx, io: &mut Io, spec: &str) -> CmdResult {
    let (ch, k) = load_channel(spec)?;
    let mut warnings = Vec::new();
    if !k.c1_is_finite() {
        warnings.push("C1 is infinite: Burnashev bounds do not apply to this channel".to_string());
    }
    if k.capacity_nats <= 0.0 {
        warnings.push("channel has zero capacity".to_string());
    }
    if ctx.json {
        let mut v = json!({
            "channel": spec,
            "inputs": ch.input_size(),
            "outputs": ch.output_size(),
            "capacity_nats": num(k.capacity_nats),
            "c1_nats": num(k.c1_nats),
            "lambda": k.lambda,
            "best_pair": k.best_pair,
            "optimal_input_dist": k.optimal_input_dist,
            "capacity_upper_nats": num(k.capacity_upper_nats),
            "ba_iterations": k.iterations,
            "c1_finite": k.c1_is_finite(),
            "warnings": warnings,
        });
        if ctx.bits {
            v["capacity_bits"] = num(k.capacity_nats / LN_2);
            v["c1_bits"] = num(k.c1_nats / LN_2);
        }
        say!(
            io.out,
            "{}",
            serde_json::to_string_pretty(&v).expect("json")
        );
    } else {
        let u = ctx.unit();
        say!(
            io.out,
            "channel   {spec} ({} inputs, {} outputs)",
            ch.input_size(),
            ch.output_size()
        );
        say!(io.out, "C         {:.10} {u}", ctx.info(k.capacity_nats));
        say!(io.out, "C1        {:.10} {u}", ctx.info(k.c1_nats));
        say!(io.out, "lambda    {}", k.lambda);
        match k.best_pair {
            Some((a, b)) => say!(io.out, "best pair ({a}, {b})"),
            None => say!(io.out, "best pair none"),
        }
        say!(io.out, "input law {:?}", k.optimal_input_dist);
        for w in &warnings {
            say!(io.out, "warning: {w}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_curves(
    ctx: &Ctx,
    io: &mut Io,
    spec: &str,
    points: usize,
    no_burnashev: bool,
    out: Option<&Path>,
) -> CmdResult {
    let (ch, k) = load_channel(spec)?;
    if points < 2 {
        return Err(invalid("--points must be at least 2"));
    }
    if k.capacity_nats <= 0.0 {
        return Err(invalid("curves need a channel with positive capacity"));
    }
    if !no_burnashev && (!k.c1_is_finite() || k.lambda <= 0.0) {
        return Err(invalid(
            "the Burnashev column needs lambda > 0; pass --no-burnashev for this channel",
        ));
    }
    let grid = default_rate_grid(k.capacity_nats, points);
    let mut curves = classical_curves(&ch, &k, &grid).map_err(invalid)?;
    if no_burnashev {
        curves.points.iter_mut().for_each(|p| p.e_burnashev = None);
    }
    let csv = curves.to_csv();
    let capped = curves.points.iter().filter(|p| p.sp_capped).count();
    let summary = json!({
        "channel": spec,
        "rows": curves.points.len(),
        "capacity_nats": k.capacity_nats,
        "c1_nats": num(k.c1_nats),
        "critical_rate_nats": curves.critical_rate,
        "zero_rate_expurgated": curves.zero_rate_expurgated,
        "tangent_rate_nats": curves.tangent_rate,
        "sphere_packing_capped_rows": capped,
    });
    match out {
        Some(path) => {
            write_file(path, &csv)?;
            let config = json!({
                "channel": spec, "points": points, "burnashev": !no_burnashev,
            });
            write_manifest(ctx, "curves", config, path, &[path])?;
            if ctx.json {
                say!(
                    io.out,
                    "{}",
                    serde_json::to_string_pretty(&summary).expect("json")
                );
            } else {
                let u = ctx.unit();
                say!(
                    io.out,
                    "wrote {} rows to {}",
                    curves.points.len(),
                    path.display()
                );
                say!(
                    io.out,
                    "R_crit        {:.9} {u}",
                    ctx.info(curves.critical_rate)
                );
                say!(
                    io.out,
                    "E_ex(0)       {:.9} {u}",
                    ctx.info(curves.zero_rate_expurgated)
                );
                say!(
                    io.out,
                    "tangent rate  {:.9} {u}",
                    ctx.info(curves.tangent_rate)
                );
                if capped > 0 {
                    say!(io.out, "sphere packing capped on {capped} rows");
                }
            }
        }
        None => {
            let _ = io.out.write_all(csv.as_bytes());
            say!(io.err, "{}", serde_json::to_string(&summary).expect("json"));
        }
    }
    Ok(EXIT_OK)
}

fn report_json(label: &str, r: &BoundReport) -> Value {
    json!({
        "label": label,
        "delta": r.delta,
        "communication": r.breakdown.communication,
        "confirmation": r.breakdown.confirmation,
        "entropy_penalty": r.breakdown.entropy_penalty,
        "partition_penalty": r.breakdown.partition_penalty,
        "total_raw": r.total,
        "total_display": r.total.max(0.0),
        "tau_bound_raw": r.tau_bound,
    })
}

fn cmd_bound(ctx: &Ctx, io: &mut Io, spec: &str, m: u64, pe: f64, delta: Option<f64>) -> CmdResult {
    let (_, k) = load_channel(spec)?;
    if !k.c1_is_finite() {
        return Err(invalid("C1 is infinite: the bound does not apply"));
    }
    let reports: Vec<(&str, BoundReport)> = match delta {
        Some(d) => vec![(
            "user",
            BoundReport::evaluate(&k, m, pe, d).map_err(invalid)?,
        )],
        None => vec![
            (
                "schedule",
                BoundReport::evaluate(&k, m, pe, delta_schedule(pe)).map_err(invalid)?,
            ),
            (
                "grid",
                optimize_delta(&k, m, pe, &default_delta_grid()).map_err(invalid)?,
            ),
        ],
    };
    let reference = (m as f64).ln() / k.capacity_nats - pe.ln() / k.c1_nats;
    if ctx.json {
        let v = json!({
            "channel": spec,
            "m": m,
            "pe": pe,
            "capacity_nats": k.capacity_nats,
            "c1_nats": k.c1_nats,
            "lambda": k.lambda,
            "reference": reference,
            "evaluations": reports.iter().map(|(l, r)| report_json(l, r)).collect::<Vec<_>>(),
        });
        say!(
            io.out,
            "{}",
            serde_json::to_string_pretty(&v).expect("json")
        );
    } else {
        say!(
            io.out,
            "E[T] lower bound, M = {m}, P_e = {pe}, channel {spec}"
        );
        for (label, r) in &reports {
            let b = &r.breakdown;
            say!(io.out, "delta = {:.6} ({label})", r.delta);
            say!(io.out, "  communication      {:>14.6}", b.communication);
            say!(io.out, "  confirmation       {:>14.6}", b.confirmation);
            say!(io.out, "  entropy penalty    {:>14.6}", b.entropy_penalty);
            say!(io.out, "  partition penalty  {:>14.6}", b.partition_penalty);
            say!(
                io.out,
                "  total              {:>14.6}  (raw {})",
                r.total.max(0.0),
                r.total
            );
            say!(
                io.out,
                "  E[tau] bound       {:>14.6}  (raw {})",
                r.tau_bound.max(0.0),
                r.tau_bound
            );
        }
        say!(
            io.out,
            "ln M / C - ln P_e / C1 = {reference:.6}, ratio {:.6}",
            reports[0].1.total / reference
        );
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(
    ctx: &Ctx,
    io: &mut Io,
    spec: &str,
    cfg: YiConfig,
    trials: u64,
    out: Option<&Path>,
    episodes: Option<&Path>,
) -> CmdResult {
    let (ch, k) = load_channel(spec)?;
    if !k.c1_is_finite() {
        return Err(invalid(
            "C1 is infinite: the confirmation phase is undefined",
        ));
    }
    let (stats, rows) = match episodes {
        Some(_) => {
            let (s, rows) =
                simulate_with_episodes(&cfg, &ch, &k, trials, ctx.seed).map_err(invalid)?;
            (s, Some(rows))
        }
        None => (
            simulate(&cfg, &ch, &k, trials, ctx.seed).map_err(invalid)?,
            None,
        ),
    };
    let text = serde_json::to_string_pretty(&stats).expect("json") + "\n";
    let mut outputs: Vec<&Path> = Vec::new();
    if let Some(path) = out {
        write_file(path, &text)?;
        outputs.push(path);
    }
    if let (Some(path), Some(rows)) = (episodes, rows.as_ref()) {
        write_file(path, &episodes_csv(rows))?;
        outputs.push(path);
    }
    if let Some(path) = out {
        let mut config = serde_json::to_value(&cfg).expect("config");
        config["channel"] = json!(spec);
        config["trials"] = json!(trials);
        write_manifest(ctx, "simulate", config, path, &outputs)?;
    }
    let respected = stats.theorem_bound.map(|b| stats.respects_bound(b, 3.0));
    if ctx.json {
        if out.is_none() {
            let _ = io.out.write_all(text.as_bytes());
        } else {
            say!(
                io.out,
                "{}",
                json!({ "bound_respected": respected, "out": out.map(|p| p.display().to_string()) })
            );
        }
    } else {
        say!(
            io.out,
            "m = {} n1 = {} n2 = {} threshold = {} trials = {} seed = {}",
            stats.m,
            stats.n1,
            stats.n2,
            stats.threshold,
            stats.trials,
            stats.seed
        );
        say!(
            io.out,
            "P_e   {:.6e}  95% CI [{:.6e}, {:.6e}]",
            stats.pe_hat,
            stats.pe_ci95[0],
            stats.pe_ci95[1]
        );
        say!(io.out, "E[T]  {:.4} +- {:.4}", stats.et_hat, stats.et_se);
        say!(
            io.out,
            "rate  {:.6} {}/use",
            ctx.info(stats.rate_nats),
            ctx.unit()
        );
        say!(
            io.out,
            "aborts {}  feedback mismatches {}",
            stats.aborts,
            stats.feedback_mismatches
        );
        match (stats.theorem_bound, stats.delta, respected) {
            (Some(b), Some(d), Some(ok)) => say!(
                io.out,
                "converse bound {b:.4} (delta {d:.4}): {}",
                if ok { "respected" } else { "VIOLATED" }
            ),
            _ => say!(io.out, "converse bound not evaluable at this error level"),
        }
    }
    if stats.abort_rate() > MAX_ABORT_RATE {
        say!(
            io.err,
            "abort rate {:.4} exceeds {MAX_ABORT_RATE}; raise --max-rounds",
            stats.abort_rate()
        );
        return Ok(EXIT_ANOMALY);
    }
    Ok(EXIT_OK)
}

fn cmd_verify(
    ctx: &Ctx,
    io: &mut Io,
    depth: Option<usize>,
    exhaustive: bool,
    config: Option<&Path>,
    out: Option<&Path>,
) -> CmdResult {
    let cfg: VerifyConfig = match config {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => VerifyConfig::default(),
    };
    let depth = depth.or(exhaustive.then_some(3));
    let reports = run_verify(&cfg, ctx.seed, depth).map_err(invalid)?;
    let all_pass = reports.iter().all(|r| r.pass);
    let text = serde_json::to_string_pretty(&reports).expect("json") + "\n";
    if let Some(path) = out {
        write_file(path, &text)?;
        let mut resolved = serde_json::to_value(&cfg).expect("config");
        resolved["depth"] = json!(depth.unwrap_or(cfg.quick_depth));
        write_manifest(ctx, "verify", resolved, path, &[path])?;
    }
    if ctx.json {
        let _ = io.out.write_all(text.as_bytes());
    } else {
        for r in &reports {
            say!(
                io.out,
                "{} {:<40} statistic {:>14.6e} threshold {:>14.6e} trials {}",
                if r.pass { "PASS" } else { "FAIL" },
                r.check,
                r.statistic,
                r.threshold,
                r.trials
            );
        }
        let failed = reports.iter().filter(|r| !r.pass).count();
        say!(io.out, "{} checks, {failed} failed", reports.len());
    }
    Ok(if all_pass {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

fn cmd_replay(io: &mut Io, path: &Path) -> CmdResult {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let before: Vec<Option<Vec<u8>>> = manifest.outputs.iter().map(|p| fs::read(p).ok()).collect();
    let mut argv = vec!["vlfb".to_string()];
    argv.extend(manifest.argv.iter().cloned());
    let code = run_with(argv, io.out, io.err);
    if code != EXIT_OK {
        return Ok(code);
    }
    let mut identical = true;
    for (p, old) in manifest.outputs.iter().zip(before) {
        let new = fs::read(p).ok();
        let same = old.is_some() && old == new;
        identical &= same;
        say!(io.err, "{} {p}", if same { "identical" } else { "changed" });
    }
    Ok(if identical { EXIT_OK } else { EXIT_ANOMALY })
}
