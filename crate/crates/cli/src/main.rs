mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::Settings;
use lipshape::experiments::{self, Problem, LAPLACE_BALL_ENERGY, MANUFACTURED_CLAIM, MANUFACTURED_EXACT};
use lipshape::export::{domains_svg, energy_svg, fmt_float};
use lipshape::optimize::{Method, OptimizerConfig};
use lipshape::transport::SinkhornOptions;

#[derive(Parser, Debug)]
#[command(name = "lipshape", version, about = "Lipschitz steepest descent experiments")]
struct Cli {
    /// key = value file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    rings: Option<usize>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Relaxation gap as p grows, with the transport row.
    PSweep,
    /// Grid convergence on the manufactured atoms.
    HManufactured,
    /// First descent on refined meshes of the initial square.
    HShape,
    /// Armijo descent from the initial square.
    Optimize {
        /// nopde or laplace
        #[arg(long)]
        problem: Option<String>,
        /// p2, p4, sinkhorn or all
        #[arg(long)]
        method: Option<String>,
    },
    /// Solvers against their oracles; exits nonzero on any failure.
    OracleCheck,
}

fn settings(cli: &Cli) -> Result<Settings> {
    let mut s = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(o) = &cli.out {
        s.set("out", &o.to_string_lossy())?;
    }
    for (key, v) in [("n", cli.n), ("rings", cli.rings), ("steps", cli.steps)] {
        if let Some(v) = v {
            s.set(key, &v.to_string())?;
        }
    }
    if let Some(seed) = cli.seed {
        s.set("seed", &seed.to_string())?;
    }
    if let Command::Optimize { problem, method } = &cli.command {
        if let Some(p) = problem {
            s.set("problem", p)?;
        }
        if let Some(m) = method {
            s.set("method", m)?;
        }
    }
    Ok(s)
}

fn sinkhorn_options(s: &Settings) -> Result<SinkhornOptions> {
    sinkhorn_options_from(s, SinkhornOptions::default())
}

fn sinkhorn_options_from(s: &Settings, d: SinkhornOptions) -> Result<SinkhornOptions> {
    Ok(SinkhornOptions {
        eps_start: s.get_or("eps_start", d.eps_start)?,
        eps_min: s.get_or("eps_min", d.eps_min)?,
        tol: s.get_or("tol", d.tol)?,
        max_iter: s.get_or("max_iter", d.max_iter)?,
        relaxation: s.get_or("relaxation", d.relaxation)?,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn p_sweep(s: &Settings, out: &Path) -> Result<bool> {
    let n = s.get_or("n", 512)?;
    let ps = s.list("ps")?.unwrap_or_else(|| vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0]);
    let rows = experiments::p_sweep(n, &ps, &sinkhorn_options(s)?)?;
    experiments::p_sweep_table(&rows).save(out.join("table.csv"))?;
    let mut summary = format!("p-sweep n = {n}\n");
    for r in &rows {
        let p = r.p.map_or("inf".into(), fmt_float);
        match &r.error {
            Some(e) => writeln!(summary, "p = {p}: failed: {e}")?,
            None => writeln!(summary, "p = {p}: gap {:.9}", r.gap)?,
        }
    }
    write(out, "summary.txt", &summary)?;
    Ok(rows.iter().all(|r| r.error.is_none()))
}

fn h_manufactured(s: &Settings, out: &Path) -> Result<bool> {
    let ns = s.list("ns")?.unwrap_or_else(|| vec![16, 32, 64, 128, 256]);
    let rows = experiments::h_manufactured(&ns, &sinkhorn_options(s)?)?;
    experiments::h_table(&rows, Some("error_vs_oracle")).save(out.join("table.csv"))?;
    let mut summary = format!(
        "manufactured atoms: claimed W1 {}, oracle W1 {}\n",
        fmt_float(MANUFACTURED_CLAIM),
        fmt_float(MANUFACTURED_EXACT)
    );
    for r in &rows {
        writeln!(summary, "n = {}: descent {:.12}", r.n, r.value)?;
    }
    write(out, "summary.txt", &summary)?;
    Ok(true)
}

fn h_shape(s: &Settings, out: &Path) -> Result<bool> {
    let ns = s.list("ns")?.unwrap_or_else(|| vec![16, 32, 64, 128, 256, 512]);
    let divisor = s.get_or("ring_divisor", 4)?;
    if divisor == 0 {
        bail!("ring_divisor must be positive");
    }
    let rows = experiments::h_shape(&ns, divisor, &sinkhorn_options(s)?)?;
    experiments::h_table(&rows, None).save(out.join("table.csv"))?;
    let mut summary = format!("first descent, rings = n / {divisor}\n");
    for r in &rows {
        writeln!(summary, "n = {}: {:.12}", r.n, r.value)?;
    }
    write(out, "summary.txt", &summary)?;
    Ok(true)
}

fn optimize(s: &Settings, out: &Path) -> Result<bool> {
    let problem = Problem::parse(&s.get_or("problem", "laplace".to_string())?)?;
    let method: String = s.get_or("method", "all".to_string())?;
    let methods = if method == "all" {
        vec![Method::PLaplace(2.0), Method::PLaplace(4.0), Method::Sinkhorn]
    } else {
        vec![Method::parse(&method)?]
    };
    let n = s.get_or("n", 128)?;
    let rings = s.get_or("rings", (n / 4).max(1))?;
    let every = s.get_or("snapshot_every", 10)?;
    let d = OptimizerConfig::default();
    let base = OptimizerConfig {
        gamma: s.get_or("gamma", d.gamma)?,
        max_step: s.get_or("max_step", d.max_step)?,
        max_steps: s.get_or("steps", d.max_steps)?,
        sinkhorn: sinkhorn_options_from(s, d.sinkhorn)?,
        ..d
    };
    let logs = experiments::optimize(problem, &methods, n, rings, &base, every)?;
    let mut summary = format!("optimize {} n = {n} rings = {rings}\n", problem.label());
    if problem == Problem::Laplace {
        writeln!(summary, "reference ball energy {}", fmt_float(LAPLACE_BALL_ENERGY))?;
    }
    let mut traces = Vec::new();
    let mut ok = true;
    for log in &logs {
        let label = log.method.label();
        experiments::trace_table(log).save(out.join(format!("trace_{label}.csv")))?;
        for (step, f) in &log.snapshots {
            write(out, &format!("domain_{label}_{step}.svg"), &domains_svg(&[(label.as_str(), f)]))?;
        }
        writeln!(
            summary,
            "{label}: steps {} final energy {} status {:?}",
            log.records.len(),
            fmt_float(log.final_energy()),
            log.status
        )?;
        ok &= !matches!(log.status, lipshape::optimize::Status::Failed(_));
        let mut e = vec![log.initial_energy];
        e.extend(log.records.iter().map(|r| r.energy_post));
        traces.push((label, e));
    }
    let refs: Vec<(&str, &[f64])> = traces.iter().map(|(l, e)| (l.as_str(), e.as_slice())).collect();
    write(out, "energy.svg", &energy_svg(&refs))?;
    let finals: Vec<(&str, &lipshape::RadialFunction)> = logs
        .iter()
        .zip(&traces)
        .map(|(log, (l, _))| (l.as_str(), &log.f))
        .collect();
    write(out, "domains_final.svg", &domains_svg(&finals))?;
    write(out, "summary.txt", &summary)?;
    Ok(ok)
}

fn oracle_check(s: &Settings, out: &Path) -> Result<bool> {
    let seed = s.get_or("seed", 0u64)?;
    let checks = experiments::oracle_check(seed)?;
    let mut summary = format!("oracle-check seed = {seed}\n");
    for c in &checks {
        writeln!(summary, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    write(out, "summary.txt", &summary)?;
    print!("{summary}");
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let s = settings(&cli)?;
    let out = s.out_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ok = match cli.command {
        Command::PSweep => p_sweep(&s, &out)?,
        Command::HManufactured => h_manufactured(&s, &out)?,
        Command::HShape => h_shape(&s, &out)?,
        Command::Optimize { .. } => optimize(&s, &out)?,
        Command::OracleCheck => oracle_check(&s, &out)?,
    };
    if !ok {
        std::process::exit(1);
    }
    Ok(())
}
