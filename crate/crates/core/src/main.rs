use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use lprev_cbf::config::RunConfig;
use lprev_cbf::filter::Policy;
use lprev_cbf::sim::{
    metrics, min_safe_um, scenario_names, simulate, sweep_um, write_gnuplot, write_metrics_csv,
    write_trace_csv, RunMetrics, VIOLATION_TOL,
};

/// Thresholds reported for the lane-keeping comparison.
const LANE_REFERENCE: [(Policy, f64); 3] = [(Policy::Prev, 0.09), (Policy::LPrev, 0.14), (Policy::Standard, 0.18)];

#[derive(Parser)]
#[command(name = "lprev", version, about = "Limited-preview CBF safety filter simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario under one policy.
    Run(RunArgs),
    /// Run all filters over a grid of input bounds.
    Sweep(RunArgs),
    /// Print the effective configuration as TOML.
    DumpConfig(RunArgs),
    /// List the built-in scenarios.
    ListScenarios,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    /// none | standard | lprev | prev
    #[arg(long)]
    policy: Option<String>,
    /// Input bound u_m.
    #[arg(long)]
    um: Option<f64>,
    /// Preview horizon T_p (s).
    #[arg(long)]
    tp: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Gain of alpha(h) = alpha * h.
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory.
    #[arg(long, env = "LPREV_OUT_DIR")]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = &self.scenario {
            cfg.scenario = s.clone();
        }
        if let Some(p) = &self.policy {
            cfg.policy = p.parse()?;
        }
        cfg.um = self.um.or(cfg.um);
        cfg.tp = self.tp.or(cfg.tp);
        cfg.step = self.step.or(cfg.step);
        cfg.duration = self.duration.or(cfg.duration);
        cfg.alpha = self.alpha.unwrap_or(cfg.alpha);
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("lprev-out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_run(cfg: &RunConfig) -> Result<ExitCode> {
    let scn = cfg.build_scenario()?;
    let dir = out_dir(cfg)?;
    let (trace, m) = match simulate(&scn, cfg.policy, cfg.alpha) {
        Ok(tr) => {
            let m = metrics(&tr, VIOLATION_TOL);
            (tr, m)
        }
        Err(fail) => {
            let m = metrics(&fail.trace, VIOLATION_TOL).with_failure(fail.to_string());
            (*fail.trace, m)
        }
    };
    write_trace_csv(&trace, create(&dir, "trace.csv")?)?;
    write_metrics_csv(std::slice::from_ref(&m), create(&dir, "metrics.csv")?)?;
    write_gnuplot(&dir, "trace.csv", &trace)?;

    let fmt = |v: Option<f64>| v.map_or("-".into(), |t| format!("{t:.4} s"));
    if let Some(f) = &m.failure {
        println!("FAILED {} {} u_m={}: {f}", scn.name, cfg.policy, scn.u_m());
        return Ok(ExitCode::from(1));
    }
    if m.violated() {
        println!(
            "VIOLATION {} {} u_m={}: |y| > {} at {}",
            scn.name,
            cfg.policy,
            scn.u_m(),
            scn.system.y_m(),
            fmt(m.violation_time)
        );
        return Ok(ExitCode::from(1));
    }
    println!(
        "SAFE {} {} u_m={}: T_1 = {}, min h = {}, max |u| = {:.4}",
        scn.name,
        cfg.policy,
        scn.u_m(),
        fmt(m.t1),
        m.min_h.map_or("-".into(), |h| format!("{h:.4e}")),
        m.max_abs_u
    );
    Ok(ExitCode::SUCCESS)
}

fn cell(rows: &[RunMetrics], p: Policy, u: f64) -> Option<&RunMetrics> {
    rows.iter().find(|m| m.policy == p && m.u_m == u)
}

fn cmd_sweep(cfg: &RunConfig) -> Result<ExitCode> {
    let scn = cfg.build_scenario()?;
    let dir = out_dir(cfg)?;
    let grid = cfg.grid();
    let rows = sweep_um(&scn, &Policy::FILTERS, &grid, cfg.alpha);
    write_metrics_csv(&rows, create(&dir, "sweep.csv")?)?;

    let mut report = String::new();
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    report.push_str(&format!("scenario {} ({} runs)\n\n", scn.name, rows.len()));
    report.push_str("u_m      status(std/lprev/prev)      T_1 std  T_1 lprev  T_1 prev   med T_s std  lprev   prev\n");
    let mut ordered = true;
    for &u in &grid {
        let get = |p| cell(&rows, p, u);
        let [s, l, p] = [Policy::Standard, Policy::LPrev, Policy::Prev].map(get);
        let status = |m: Option<&RunMetrics>| match m {
            Some(m) if m.safe() => "safe",
            Some(m) if m.failure.is_some() => "failed",
            _ => "violated",
        };
        let t1 = |m: Option<&RunMetrics>| m.and_then(|m| m.t1);
        let ts = |m: Option<&RunMetrics>| m.and_then(|m| m.t_s.map(|q| q.median));
        let ok = match (t1(s), t1(l), t1(p)) {
            (Some(a), Some(b), Some(c)) => a <= b && b <= c,
            _ => false,
        };
        ordered &= ok;
        report.push_str(&format!(
            "{u:<8} {:<8}/{:<8}/{:<8} {:>9} {:>9} {:>9}   {:>9} {:>7} {:>7}{}\n",
            status(s),
            status(l),
            status(p),
            show(t1(s)),
            show(t1(l)),
            show(t1(p)),
            show(ts(s)),
            show(ts(l)),
            show(ts(p)),
            if ok { "" } else { "  (T_1 order broken)" }
        ));
    }
    report.push_str(&format!(
        "\nT_1 ordering standard <= lprev <= prev at every point: {}\n",
        if ordered { "yes" } else { "no" }
    ));

    if scn.name == "lane" {
        report.push_str("\nminimum safe u_m (0.01 resolution)\npolicy     obtained  reference\n");
        let [lo, hi] = cfg.min_safe_range;
        let mut found = Vec::new();
        for (p, reference) in LANE_REFERENCE {
            let v = min_safe_um(&scn, p, lo, hi, 0.01, cfg.alpha)?;
            found.push(v);
            report.push_str(&format!("{:<10} {:>8} {:>10}\n", p.name(), show(v), reference));
        }
        let partial = matches!(found[..], [Some(a), Some(b), Some(c)] if a < b && b < c);
        report.push_str(&format!(
            "partial order prev < lprev < standard: {}\n",
            if partial { "yes" } else { "no" }
        ));
    }
    fs::write(dir.join("report.txt"), &report)?;
    print!("{report}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let args = match &cli.command {
        Command::ListScenarios => {
            for name in scenario_names() {
                println!("{name}");
            }
            return ExitCode::SUCCESS;
        }
        Command::Run(a) | Command::Sweep(a) | Command::DumpConfig(a) => a,
    };
    let cfg = match args.resolve().and_then(|c| c.build_scenario().map(|_| c).map_err(Into::into)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Run(_) => cmd_run(&cfg),
        Command::Sweep(_) => cmd_sweep(&cfg),
        Command::DumpConfig(_) => cfg.dump().map(|t| {
            print!("{t}");
            ExitCode::SUCCESS
        }).map_err(Into::into),
        Command::ListScenarios => unreachable!(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
