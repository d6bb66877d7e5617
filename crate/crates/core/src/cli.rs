//! `idapbc` command line: `simulate`, `verify`, `roa`, `experiments`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{error, info, warn};
use serde::Serialize;

use crate::config::Config;
use crate::control::ControllerSpec;
use crate::error::{Error, Result};
use crate::lyapunov::{best_level, scan_levels, ConstantCheck, LyapunovFn};
use crate::models::ConverterModel;
use crate::plot;
use crate::sim::{self, fmt_num, ExperimentKind};
use crate::verifier::{verify_all, VerificationReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MODEL: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "idapbc", version, about = "Voltage-feedback IDA-PBC for DC-DC converters")]
struct Cli {
    /// Output directory (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the optional measurement noise.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured scenario; writes <id>.csv and <id>.svg.
    Simulate { config: PathBuf, out_dir: Option<PathBuf> },
    /// Check the stability conditions; writes verify_<id>.json.
    Verify { config: PathBuf, out_dir: Option<PathBuf> },
    /// Level sets and region-of-attraction probes; writes roa_<id>.* files.
    Roa { config: PathBuf, out_dir: Option<PathBuf> },
    /// Normalized re-creations of the bench experiments (a kind or `all`).
    Experiments { kind: String, out_dir: Option<PathBuf> },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("thread pool already configured: {e}");
        }
    }
    let pick = |pos: &Option<PathBuf>| pos.clone().or_else(|| cli.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    let outcome = match &cli.command {
        Command::Simulate { config, out_dir } => cmd_simulate(config, &pick(out_dir), cli.seed),
        Command::Verify { config, out_dir } => cmd_verify(config, &pick(out_dir)),
        Command::Roa { config, out_dir } => cmd_roa(config, &pick(out_dir)),
        Command::Experiments { kind, out_dir } => cmd_experiments(kind, &pick(out_dir)),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn exit_code_for(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) => EXIT_USAGE,
        Error::NoPassingLevel => EXIT_CHECK_FAILED,
        _ => EXIT_MODEL,
    }
}

fn config_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

/// Writes through a temporary file in the same directory and renames it.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let io = |e: std::io::Error| Error::Config(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| io(e.error))?;
    Ok(path)
}

pub fn cmd_simulate(config: &Path, out: &Path, seed: u64) -> Result<i32> {
    let cfg = Config::load(config)?;
    let id = config_id(config);
    let scn = cfg.scenario(&id, seed)?;
    let tr = sim::run(&scn)?;
    write_atomic(out, &format!("{id}.csv"), &tr.to_csv())?;
    write_atomic(out, &format!("{id}.svg"), &plot::time_series_svg(&tr))?;
    info!("{id}: final state {:?} at t = {}", tr.final_state, tr.final_t);
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct VerifyOutput<'a> {
    #[serde(flatten)]
    report: &'a VerificationReport,
    /// Boost only: constant enforcing P(x*) = 0 against the printed one.
    #[serde(skip_serializing_if = "Option::is_none")]
    energy_constant: Option<ConstantCheck>,
}

pub fn cmd_verify(config: &Path, out: &Path) -> Result<i32> {
    let cfg = Config::load(config)?;
    let id = config_id(config);
    let model = ConverterModel::from_physical(cfg.converter, &cfg.physical());
    let spec = ControllerSpec::new_unchecked(&model, cfg.controller.k, cfg.x2_star()?)?;
    let region = cfg.verification_region(spec.eq.state())?;
    let report = verify_all(&model, &spec, &region);
    let energy_constant = LyapunovFn::new(&spec).ok().and_then(|f| f.boost_constant_check());
    if let Some(c) = energy_constant.filter(|c| !c.consistent) {
        warn!(
            "printed Boost energy constant {} differs from the value {} that gives P(x*) = 0",
            c.printed, c.derived
        );
    }
    let text = serde_json::to_string_pretty(&VerifyOutput {
        report: &report,
        energy_constant,
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(out, &format!("verify_{id}.json"), &text)?;
    Ok(if report.all_pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

pub fn cmd_roa(config: &Path, out: &Path) -> Result<i32> {
    let cfg = Config::load(config)?;
    let id = config_id(config);
    let model = ConverterModel::from_physical(cfg.converter, &cfg.physical());
    let spec = ControllerSpec::new(&model, cfg.controller.k, cfg.x2_star()?)?;
    let (rect, p_bars, opts) = cfg.roa_setup(spec.eq.state())?;
    let lf = LyapunovFn::new(&spec)?;
    let levels = scan_levels(&lf, &model, &rect, &p_bars, &opts, false)?;
    let best = best_level(&levels);

    let mut curves = String::from("p_bar,curve,closed,x1,x2\n");
    for l in &levels {
        for (ci, c) in l.contours.iter().enumerate() {
            for p in &c.points {
                let _ = writeln!(curves, "{},{ci},{},{},{}", fmt_num(l.p_bar), u8::from(c.closed), fmt_num(p[0]), fmt_num(p[1]));
            }
        }
    }
    let mut probes = String::from("p_bar,probe,x1,x2\n");
    let shown = levels.iter().find(|l| Some(l.p_bar) == best.map(|b| b.p_bar));
    if let Some(l) = shown {
        for (pi, p) in l.probes.iter().enumerate() {
            for x in &p.trace {
                let _ = writeln!(probes, "{},{pi},{},{}", fmt_num(l.p_bar), fmt_num(x[0]), fmt_num(x[1]));
            }
        }
    }
    let summary = serde_json::json!({
        "best": best,
        "levels": levels.iter().map(|l| serde_json::json!({
            "p_bar": l.p_bar,
            "contained": l.contained,
            "closed_curve_around_equilibrium": l.enclosing.is_some(),
            "probes": l.probes.len(),
            "all_converged": l.all_converged,
            "passed": l.passed,
        })).collect::<Vec<_>>(),
    });
    let drawn: Vec<(f64, &[crate::contour::Polyline])> = levels.iter().map(|l| (l.p_bar, l.contours.as_slice())).collect();
    let traces: Vec<_> = shown.map(|l| l.probes.iter().map(|p| p.trace.clone()).collect()).unwrap_or_default();
    let svg = plot::phase_portrait_svg(&format!("{id}: level sets of P"), &rect, &drawn, &traces, spec.eq.state());

    write_atomic(out, &format!("roa_{id}_levels.csv"), &curves)?;
    write_atomic(out, &format!("roa_{id}_probes.csv"), &probes)?;
    write_atomic(out, &format!("roa_{id}.json"), &serde_json::to_string_pretty(&summary).expect("json"))?;
    write_atomic(out, &format!("roa_{id}.svg"), &svg)?;
    match best {
        Some(b) => {
            info!("{id}: largest passing level {}", b.p_bar);
            Ok(EXIT_OK)
        }
        None => {
            eprintln!("error: {}", Error::NoPassingLevel);
            Ok(EXIT_CHECK_FAILED)
        }
    }
}

pub fn cmd_experiments(kind: &str, out: &Path) -> Result<i32> {
    let kinds: Vec<ExperimentKind> = if kind == "all" {
        ExperimentKind::ALL.to_vec()
    } else {
        vec![ExperimentKind::parse(kind).ok_or_else(|| {
            let names: Vec<_> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown experiment '{kind}', expected one of {} or all", names.join(", ")))
        })?]
    };
    let mut code = EXIT_OK;
    for (k, res) in sim::run_experiment_suite(&kinds) {
        match res {
            Ok(tr) => {
                write_atomic(out, &format!("{}.csv", k.name()), &tr.to_csv())?;
                write_atomic(out, &format!("{}.svg", k.name()), &plot::time_series_svg(&tr))?;
            }
            Err(e) => {
                eprintln!("error: {}: {e}", k.name());
                code = code.max(exit_code_for(&e));
            }
        }
    }
    Ok(code)
}
