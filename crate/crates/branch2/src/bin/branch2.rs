use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use branch2::dual::simulate_dual;
use branch2::error::{Error, Result};
use branch2::harness::{
    check_duality, check_gamma_scaling, check_generator, check_longterm, check_moments,
    check_residuals, check_yule, check_yule_moments, CheckReport, DualityConfig, ForwardModel,
};
use branch2::limit::simulate_limit;
use branch2::params::Params;
use branch2::particle::simulate_particle;
use branch2::rng::replicate_rng;
use branch2::state::{DualState, LimitState, ParticleState};

#[derive(Parser)]
#[command(name = "branch2", version, about = "Two-level branching model laboratory")]
struct Cli {
    /// JSON config file; explicit flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap on worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ParamFlags {
    /// Baseline cell split rate r
    #[arg(long)]
    r: Option<f64>,
    /// Split-rate exponent p in r(z) = r(1 + z^p)
    #[arg(long)]
    p: Option<u32>,
    /// Binomial allocation probability
    #[arg(long)]
    theta: Option<f64>,
    /// Branching diffusivity sigma
    #[arg(long)]
    sigma: Option<f64>,
    /// Net growth rate K
    #[arg(long)]
    k: Option<f64>,
    /// Competition strength lambda
    #[arg(long)]
    lambda: Option<f64>,
    /// Particle mass zeta
    #[arg(long)]
    zeta: Option<f64>,
}

#[derive(Args)]
struct CommonFlags {
    /// Replicate count
    #[arg(long)]
    n: Option<usize>,
    /// Master seed (falls back to BRANCH2_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact Gillespie simulation of the particle model
    SimulateParticle {
        #[command(flatten)]
        params: ParamFlags,
        #[command(flatten)]
        common: CommonFlags,
        /// Initial particle counts per cell, comma separated
        #[arg(long, value_delimiter = ',')]
        init: Option<Vec<u64>>,
        #[arg(long)]
        t_end: Option<f64>,
        /// Snapshot times, comma separated (default: t_end only)
        #[arg(long, value_delimiter = ',')]
        obs: Option<Vec<f64>>,
    },
    /// Euler-Maruyama simulation of the limit model
    SimulateLimit {
        #[command(flatten)]
        params: ParamFlags,
        #[command(flatten)]
        common: CommonFlags,
        /// Initial cell masses, comma separated
        #[arg(long, value_delimiter = ',')]
        init: Option<Vec<f64>>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        obs: Option<Vec<f64>>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Simulation of the dual process (q, marks, weight)
    SimulateDual {
        #[command(flatten)]
        params: ParamFlags,
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        q0: Option<f64>,
        /// Initial marks, comma separated
        #[arg(long, value_delimiter = ',')]
        marks: Option<Vec<f64>>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Monte-Carlo duality check over the pinned grid
    CheckDuality {
        #[command(flatten)]
        params: ParamFlags,
        #[command(flatten)]
        common: CommonFlags,
        /// Grid name (only "default")
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Yule pgf (or rising-factorial-moment) check
    CheckYule {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        w: Option<u32>,
        #[arg(long)]
        z: Option<f64>,
        /// Check rising factorial moments of these orders instead of the pgf
        #[arg(long, value_delimiter = ',')]
        moments: Option<Vec<u32>>,
    },
    /// KS test of e^{-rt} W_t against Gamma(w,1)
    CheckGamma {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        w: Option<u32>,
    },
    /// Long-term limit-model behavior: Gamma law and infected fraction
    CheckLongterm {
        #[command(flatten)]
        params: ParamFlags,
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long, value_delimiter = ',')]
        init: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        ts: Option<Vec<f64>>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Generator convergence over the zeta ladder, plus exact residuals
    CheckGenerator {
        #[command(flatten)]
        params: ParamFlags,
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long, value_delimiter = ',')]
        zetas: Option<Vec<f64>>,
    },
    /// Empirical moment against the closed-form bound
    CheckMoments {
        #[command(flatten)]
        params: ParamFlags,
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long, value_delimiter = ',')]
        init: Option<Vec<u64>>,
        /// Moment order p
        #[arg(long)]
        order: Option<u32>,
        #[arg(long)]
        t: Option<f64>,
    },
}

/// Optional values read from a JSON config file. Flags win over these.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    r: Option<f64>,
    p: Option<u32>,
    theta: Option<f64>,
    sigma: Option<f64>,
    k: Option<f64>,
    lambda: Option<f64>,
    zeta: Option<f64>,
    init_counts: Option<Vec<u64>>,
    init_masses: Option<Vec<f64>>,
    t_end: Option<f64>,
    obs: Option<Vec<f64>>,
    ts: Option<Vec<f64>>,
    t: Option<f64>,
    n: Option<usize>,
    dt: Option<f64>,
    seed: Option<u64>,
    q0: Option<f64>,
    marks: Option<Vec<f64>>,
    w: Option<u32>,
    z: Option<f64>,
    eps: Option<f64>,
    zetas: Option<Vec<f64>>,
    order: Option<u32>,
    out: Option<String>,
    threads: Option<usize>,
}

fn pick<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var("BRANCH2_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| Error::InvalidParams(format!("BRANCH2_SEED is not an integer: {v}"))),
        Err(_) => Ok(0),
    }
}

fn resolve_params(flags: &ParamFlags, file: &FileConfig, default_zeta: f64) -> Result<Params> {
    Params::new(
        pick(flags.r, file.r, 1.0),
        pick(flags.p, file.p, 0),
        pick(flags.theta, file.theta, 0.5),
        pick(flags.sigma, file.sigma, 1.0),
        pick(flags.k, file.k, 0.5),
        pick(flags.lambda, file.lambda, 1.0),
        pick(flags.zeta, file.zeta, default_zeta),
    )
}

fn write_output(out: &Option<PathBuf>, contents: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, contents)?,
        None => std::io::stdout().write_all(contents.as_bytes())?,
    }
    Ok(())
}

fn report_output(
    subcommand: &str,
    run_config: serde_json::Value,
    report: &CheckReport,
    out: &Option<PathBuf>,
) -> Result<bool> {
    let doc = serde_json::json!({
        "subcommand": subcommand,
        "run_config": run_config,
        "report": report,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_output(out, &text)?;
    for item in &report.items {
        eprintln!(
            "[{}] {}: {}",
            if item.passed { "pass" } else { "FAIL" },
            report.name,
            item.label
        );
    }
    Ok(report.passed)
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    let file: FileConfig = match &cli.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => FileConfig::default(),
    };
    if let Some(threads) = cli.threads.or(file.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?;
    }
    let file_out = file.out.clone().map(PathBuf::from);

    match &cli.command {
        Command::SimulateParticle {
            params,
            common,
            init,
            t_end,
            obs,
        } => {
            let p = resolve_params(params, &file, 1.0)?;
            p.validate_particle()?;
            let counts = pick(init.clone(), file.init_counts.clone(), vec![1]);
            let t_end = pick(*t_end, file.t_end, 1.0);
            let obs = pick(obs.clone(), file.obs.clone(), vec![t_end]);
            let n = pick(common.n, file.n, 1);
            let seed = resolve_seed(common.seed, file.seed)?;
            let out = common.out.clone().or(file_out);
            let run_config = serde_json::json!({
                "subcommand": "simulate-particle", "params": p, "init": counts,
                "t_end": t_end, "obs": obs, "n": n, "seed": seed,
            });
            let init_state = ParticleState::new(counts);
            let mut csv = format!("# config: {}\n", serde_json::to_string(&run_config)?);
            csv.push_str("replicate,time,cell_index,particle_count\n");
            for i in 0..n as u64 {
                let mut rng = replicate_rng(seed, i);
                let traj = simulate_particle(&init_state, &p, t_end, &obs, &mut rng, false)?;
                for (t, s) in &traj.snapshots {
                    for (ci, c) in s.counts.iter().enumerate() {
                        csv.push_str(&format!("{i},{t},{ci},{c}\n"));
                    }
                }
            }
            write_output(&out, &csv)?;
            Ok(true)
        }
        Command::SimulateLimit {
            params,
            common,
            init,
            t_end,
            obs,
            dt,
        } => {
            let p = resolve_params(params, &file, 1.0)?;
            let masses = pick(init.clone(), file.init_masses.clone(), vec![1.0]);
            let t_end = pick(*t_end, file.t_end, 1.0);
            let obs = pick(obs.clone(), file.obs.clone(), vec![t_end]);
            let dt = pick(*dt, file.dt, 1e-3);
            let n = pick(common.n, file.n, 1);
            let seed = resolve_seed(common.seed, file.seed)?;
            let out = common.out.clone().or(file_out);
            let run_config = serde_json::json!({
                "subcommand": "simulate-limit", "params": p, "init": masses,
                "t_end": t_end, "obs": obs, "dt": dt, "n": n, "seed": seed,
            });
            let init_state = LimitState::new(masses)?;
            let mut csv = format!("# config: {}\n", serde_json::to_string(&run_config)?);
            csv.push_str("replicate,time,cell_index,mass\n");
            for i in 0..n as u64 {
                let mut rng = replicate_rng(seed, i);
                let traj = simulate_limit(&init_state, &p, t_end, dt, &obs, &mut rng)?;
                for (t, s) in &traj.snapshots {
                    for (ci, m) in s.masses.iter().enumerate() {
                        csv.push_str(&format!("{i},{t},{ci},{m}\n"));
                    }
                }
            }
            write_output(&out, &csv)?;
            Ok(true)
        }
        Command::SimulateDual {
            params,
            common,
            q0,
            marks,
            t_end,
            dt,
        } => {
            let p = resolve_params(params, &file, 1.0)?;
            let q0 = pick(*q0, file.q0, 1.0);
            let marks = pick(marks.clone(), file.marks.clone(), vec![0.5]);
            let t_end = pick(*t_end, file.t_end, 1.0);
            let dt = pick(*dt, file.dt, 1e-3);
            let n = pick(common.n, file.n, 1);
            let seed = resolve_seed(common.seed, file.seed)?;
            let out = common.out.clone().or(file_out);
            let run_config = serde_json::json!({
                "subcommand": "simulate-dual", "params": p, "q0": q0, "marks": marks,
                "t_end": t_end, "dt": dt, "n": n, "seed": seed,
            });
            let init = DualState::new(q0, marks)?;
            let mut lines = format!("{}\n", serde_json::to_string(&run_config)?);
            for i in 0..n as u64 {
                let mut rng = replicate_rng(seed, i);
                let traj = simulate_dual(&init, &p, t_end, dt, &mut rng)?;
                for (si, (t, s)) in traj.snapshots.iter().enumerate() {
                    let event = if si < traj.events.len() {
                        serde_json::to_value(traj.events[si].kind)?
                    } else {
                        serde_json::Value::Null
                    };
                    lines.push_str(&format!(
                        "{}\n",
                        serde_json::to_string(&serde_json::json!({
                            "replicate": i, "time": t, "q": s.q, "marks": s.marks,
                            "log_weight": s.log_weight, "event": event,
                        }))?
                    ));
                }
            }
            write_output(&out, &lines)?;
            Ok(true)
        }
        Command::CheckDuality {
            params,
            common,
            grid,
            dt,
        } => {
            if grid != "default" {
                return Err(Error::InvalidParams(format!("unknown grid {grid}")));
            }
            let p = resolve_params(params, &file, 0.02)?;
            let mut cfg = DualityConfig {
                forward: ForwardModel::Particle { zeta: p.zeta },
                ..DualityConfig::default()
            };
            cfg.replicates = pick(common.n, file.n, cfg.replicates);
            cfg.dual_dt = pick(*dt, file.dt, cfg.dual_dt);
            cfg.seed = resolve_seed(common.seed, file.seed)?;
            let run_config = serde_json::json!({"params": p, "grid": cfg});
            let report = check_duality(&p, &cfg)?;
            report_output(
                "check-duality",
                run_config,
                &report,
                &common.out.clone().or(file_out),
            )
        }
        Command::CheckYule {
            common,
            r,
            t,
            w,
            z,
            moments,
        } => {
            let r = pick(*r, file.r, 1.0);
            let t = pick(*t, file.t, 1.0);
            let w = pick(*w, file.w, 1);
            let n = pick(common.n, file.n, 100_000);
            let seed = resolve_seed(common.seed, file.seed)?;
            let report = match moments {
                Some(orders) => check_yule_moments(w, r, t, orders, n, seed)?,
                None => {
                    let z = pick(*z, file.z, 0.5);
                    check_yule(w, r, t, z, n, seed)?
                }
            };
            let run_config = serde_json::json!({
                "r": r, "t": t, "w": w, "z": z, "moments": moments, "n": n, "seed": seed,
            });
            report_output(
                "check-yule",
                run_config,
                &report,
                &common.out.clone().or(file_out),
            )
        }
        Command::CheckGamma { common, r, t, w } => {
            let r = pick(*r, file.r, 1.0);
            let t = pick(*t, file.t, 8.0);
            let w = pick(*w, file.w, 1);
            let n = pick(common.n, file.n, 10_000);
            let seed = resolve_seed(common.seed, file.seed)?;
            let report = check_gamma_scaling(w, r, t, n, seed)?;
            let run_config =
                serde_json::json!({"r": r, "t": t, "w": w, "n": n, "seed": seed});
            report_output(
                "check-gamma",
                run_config,
                &report,
                &common.out.clone().or(file_out),
            )
        }
        Command::CheckLongterm {
            params,
            common,
            init,
            ts,
            eps,
            dt,
        } => {
            let p = resolve_params(params, &file, 1.0)?;
            let masses = pick(init.clone(), file.init_masses.clone(), vec![1.0]);
            let ts = pick(ts.clone(), file.ts.clone(), vec![2.0, 4.0, 6.0]);
            let eps = pick(*eps, file.eps, 0.01);
            let dt = pick(*dt, file.dt, 1e-2);
            let n = pick(common.n, file.n, 5_000);
            let seed = resolve_seed(common.seed, file.seed)?;
            let run_config = serde_json::json!({
                "params": p, "init": masses, "ts": ts, "eps": eps, "dt": dt,
                "n": n, "seed": seed,
            });
            let report = check_longterm(&masses, &p, &ts, n, eps, dt, seed)?;
            report_output(
                "check-longterm",
                run_config,
                &report,
                &common.out.clone().or(file_out),
            )
        }
        Command::CheckGenerator {
            params,
            common,
            zetas,
        } => {
            let p = resolve_params(params, &file, 1.0)?;
            let zetas = pick(
                zetas.clone(),
                file.zetas.clone(),
                vec![0.1, 0.05, 0.02, 0.01],
            );
            let seed = resolve_seed(common.seed, file.seed)?;
            let run_config = serde_json::json!({"params": p, "zetas": zetas, "seed": seed});
            let mut report = check_generator(&p, &zetas)?;
            // exact pointwise identity rides along as a single line
            let residual = check_residuals(100, seed, &p)?;
            report.items.push(residual.clone());
            report.passed = report.passed && residual.passed;
            report_output(
                "check-generator",
                run_config,
                &report,
                &common.out.clone().or(file_out),
            )
        }
        Command::CheckMoments {
            params,
            common,
            init,
            order,
            t,
        } => {
            let p = resolve_params(params, &file, 0.05)?;
            let counts = pick(init.clone(), file.init_counts.clone(), vec![20]);
            let order = pick(*order, file.order, 2);
            let t = pick(*t, file.t, 1.0);
            let n = pick(common.n, file.n, 10_000);
            let seed = resolve_seed(common.seed, file.seed)?;
            let run_config = serde_json::json!({
                "params": p, "init": counts, "order": order, "t": t, "n": n, "seed": seed,
            });
            let report = check_moments(&counts, &p, order, t, n, seed)?;
            report_output(
                "check-moments",
                run_config,
                &report,
                &common.out.clone().or(file_out),
            )
        }
    }
}

fn main() {
    std::process::exit(match run() {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    });
}
