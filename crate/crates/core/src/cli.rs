//! Command-line front end. Every command reads an [`ExperimentConfig`]
//! (a JSON file or a named preset) and writes plain CSV and JSON files
//! stamped with the config hash and tool version.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::datagen::{generate_dataset, Dataset, Provenance};
use crate::dynamics::{FreeState, Model};
use crate::error::{Error, Result};
use crate::evalharness::{compare_report, noise_sweep, policy_latency, sweep, AlgoResult, BoundednessMetrics};
use crate::expert::{find_periodic_orbit, Expert, MpcExpert, ReferenceOrbit};
use crate::imitation::{behavior_cloning, coil, dagger, dart, IlReport};
use crate::integrate::{orthogonality_history, Method};
use crate::io::{hash_json, read_json, write_csv, write_json, TOOL_VERSION};
use crate::policy::{NeuralPolicy, PolicyFile};
use crate::wingkin::U_LAYOUT_VERSION;

#[derive(Parser, Debug)]
#[command(name = "flapwing", version, about = "Flapping-wing simulation, expert control and imitation learning")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment configuration (JSON). Overrides --preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named configuration preset.
    #[arg(long, global = true, default_value = "desk")]
    pub preset: String,
    /// Output directory (overrides the configured one).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Bc,
    Dagger,
    Dart,
    Coil,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Bc => "bc",
            Algo::Dagger => "dagger",
            Algo::Dart => "dart",
            Algo::Coil => "coil",
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the resolved configuration as JSON.
    InitConfig {
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Search for the periodic hover orbit; writes orbit.json.
    FindOrbit,
    /// Label sampled state errors with the expert; writes dataset.csv.
    GenData {
        #[arg(long)]
        orbit: Option<PathBuf>,
    },
    /// Train a policy; writes policy_<algo>.json and train_<algo>.csv.
    Train {
        algo: Algo,
        #[arg(long)]
        orbit: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Closed-loop sweep of a trained policy; writes eval_<algo>.json and
    /// envelope_<algo>.csv, plus noise_<algo>.csv with --noise.
    Evaluate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        orbit: Option<PathBuf>,
        /// Weighted input-noise scale; without a value the configured one.
        #[arg(long, num_args = 0..=1, default_missing_value = "-1")]
        noise: Option<f64>,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Comparison table from evaluation files; writes compare.csv and
    /// compare.txt.
    Compare {
        #[arg(required = true)]
        evals: Vec<PathBuf>,
    },
    /// Attitude orthogonality error of the Lie-group and RK4 integrators;
    /// writes orthogonality.csv.
    IntegratorBench {
        /// Start from the orbit's initial state instead of rest.
        #[arg(long)]
        orbit: Option<PathBuf>,
    },
}

/// Persisted orbit with provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitFile {
    pub orbit: ReferenceOrbit,
    pub config_hash: String,
    pub tool_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub sigma: f64,
    pub median_slope: f64,
}

/// Persisted evaluation of one policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub result: AlgoResult,
    pub n_traj: usize,
    pub horizon: usize,
    pub failures: usize,
    pub latency_s: f64,
    pub noise: Option<NoiseSummary>,
    pub policy_hash: String,
    pub config_hash: String,
    pub tool_version: String,
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub hash: String,
}

impl Context {
    pub fn load(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => read_json::<ExperimentConfig>(p)?,
            None => ExperimentConfig::preset(&common.preset)?,
        };
        if let Some(o) = &common.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        let hash = cfg.hash();
        Ok(Self { cfg, hash })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn stamp(&self) -> Vec<(&'static str, String)> {
        vec![("config_hash", self.hash.clone()), ("tool_version", TOOL_VERSION.to_string())]
    }

    fn load_orbit(&self, path: &Option<PathBuf>) -> Result<ReferenceOrbit> {
        let p = path.clone().unwrap_or_else(|| self.path("orbit.json"));
        Ok(read_json::<OrbitFile>(&p)?.orbit)
    }
}

pub fn cmd_find_orbit(ctx: &Context) -> Result<PathBuf> {
    let t = Instant::now();
    let orbit = find_periodic_orbit(&ctx.cfg.morphology, &ctx.cfg.reference_seed, &ctx.cfg.orbit)?;
    log::info!("orbit defect {:.3e}, f = {:.4} Hz, in {:.1?}", orbit.defect, orbit.frequency(), t.elapsed());
    let path = ctx.path("orbit.json");
    write_json(&path, &OrbitFile { orbit, config_hash: ctx.hash.clone(), tool_version: TOOL_VERSION.into() })?;
    Ok(path)
}

pub fn cmd_gen_data(ctx: &Context, orbit: &Option<PathBuf>) -> Result<PathBuf> {
    let orbit = ctx.load_orbit(orbit)?;
    let expert = MpcExpert::new(&orbit, ctx.cfg.weights.clone(), ctx.cfg.mpc.clone());
    let n_samples = ctx.cfg.algorithms.max_data() - ctx.cfg.n_zero;
    let t = Instant::now();
    let ds = generate_dataset(n_samples, ctx.cfg.n_zero, &orbit, &expert, &ctx.cfg.block_scales, ctx.cfg.data_seed)?;
    log::info!("{} pairs ({} expert calls) in {:.1?}", ds.len(), expert.calls(), t.elapsed());
    let path = ctx.path("dataset.csv");
    ds.write(&path, &ctx.stamp())?;
    Ok(path)
}

/// The first `n_data - n_zero` sampled pairs plus the zero pairs.
pub fn take_dataset(ds: &Dataset, n_data: usize, n_zero: usize) -> Dataset {
    let mut out = Dataset::empty(ds.seed, ds.orbit_hash.clone());
    let mut sampled = 0;
    for i in 0..ds.len() {
        let keep = match ds.provenance[i] {
            Provenance::Zero => true,
            _ if sampled < n_data.saturating_sub(n_zero) => {
                sampled += 1;
                true
            }
            _ => false,
        };
        if keep {
            out.push(ds.x[i], ds.y[i].clone(), ds.provenance[i], ds.cost[i]);
        }
    }
    out
}

pub fn cmd_train(ctx: &Context, algo: Algo, orbit: &Option<PathBuf>, dataset: &Option<PathBuf>) -> Result<PathBuf> {
    let name = algo.name();
    let settings = ctx.cfg.algorithms.get(name)?;
    let full = Dataset::read(&dataset.clone().unwrap_or_else(|| ctx.path("dataset.csv")))?;
    let ds = take_dataset(&full, settings.n_data, ctx.cfg.n_zero);
    let arch = ctx.cfg.arch(name)?;
    let il = &ctx.cfg.il;
    let (policy, report): (NeuralPolicy, IlReport) = match algo {
        Algo::Bc => behavior_cloning(&ds, arch, il)?,
        Algo::Coil => coil(&ds, arch, il)?,
        Algo::Dagger | Algo::Dart => {
            let orbit = ctx.load_orbit(orbit)?;
            if hash_json(&orbit) != ds.orbit_hash {
                return Err(Error::Invalid("dataset was labelled on a different orbit".into()));
            }
            let expert = MpcExpert::new(&orbit, ctx.cfg.weights.clone(), ctx.cfg.mpc.clone());
            if algo == Algo::Dagger {
                dagger(&ds, arch, il, &expert, &orbit)?
            } else {
                dart(&ds, arch, il, &expert, &orbit)?
            }
        }
    };
    log::info!("{name}: mse {:.4e}, {} expert calls, {:.1} s", report.final_mse, report.expert_calls, report.wall_time_s);
    let file = PolicyFile {
        zero_output_norm: policy.output_at_zero().iter().map(|v| v * v).sum::<f64>().sqrt(),
        policy,
        algorithm: name.into(),
        seed: il.seed,
        mse: report.final_mse,
        wall_time_s: report.wall_time_s,
        expert_calls: report.expert_calls,
        dataset_size: report.dataset_size,
        u_layout_version: U_LAYOUT_VERSION,
        config_hash: ctx.hash.clone(),
        tool_version: TOOL_VERSION.into(),
    };
    write_csv(&ctx.path(&format!("train_{name}.csv")), &ctx.stamp(), &report.to_csv())?;
    let path = ctx.path(&format!("policy_{name}.json"));
    write_json(&path, &file)?;
    Ok(path)
}

pub fn cmd_evaluate(
    ctx: &Context,
    policy: &Path,
    orbit: &Option<PathBuf>,
    noise: Option<f64>,
    trajectories: Option<usize>,
    horizon: Option<usize>,
) -> Result<PathBuf> {
    let pf: PolicyFile = read_json(policy)?;
    if pf.u_layout_version != U_LAYOUT_VERSION {
        return Err(Error::Invalid(format!("policy uses u layout {}, expected {U_LAYOUT_VERSION}", pf.u_layout_version)));
    }
    let orbit = ctx.load_orbit(orbit)?;
    let mut opts = ctx.cfg.sweep.clone();
    opts.n_traj = trajectories.unwrap_or(opts.n_traj);
    opts.horizon = horizon.unwrap_or(opts.horizon);
    let name = pf.algorithm.clone();
    let sw = sweep(&pf.policy, &orbit, &opts)?;
    write_csv(&ctx.path(&format!("envelope_{name}.csv")), &ctx.stamp(), &sw.envelope_csv())?;
    let noise = match noise {
        Some(s) => {
            let sigma = if s < 0.0 { ctx.cfg.noise_sigma } else { s };
            let ns = noise_sweep(&pf.policy, &orbit, sigma, &opts)?;
            write_csv(&ctx.path(&format!("noise_{name}.csv")), &ctx.stamp(), &ns.to_csv())?;
            Some(NoiseSummary { sigma, median_slope: ns.median_slope })
        }
        None => None,
    };
    let metrics: BoundednessMetrics = sw.metrics.clone();
    log::info!("{name}: b = {:?}, gamma = {:.4}, t_T = {}, {} failed runs", metrics.b, metrics.gamma, metrics.t_t, sw.failures);
    let ef = EvalFile {
        result: AlgoResult {
            algorithm: name.clone(),
            wall_time_s: pf.wall_time_s,
            metrics,
            zero_output_norm: pf.zero_output_norm,
            mse: pf.mse,
            expert_calls: pf.expert_calls,
            u_layout_version: pf.u_layout_version,
        },
        n_traj: opts.n_traj,
        horizon: opts.horizon,
        failures: sw.failures,
        latency_s: policy_latency(&pf.policy, 1001),
        noise,
        policy_hash: hash_json(&pf.policy),
        config_hash: ctx.hash.clone(),
        tool_version: TOOL_VERSION.into(),
    };
    let path = ctx.path(&format!("eval_{name}.json"));
    write_json(&path, &ef)?;
    Ok(path)
}

pub fn cmd_compare(ctx: &Context, evals: &[PathBuf]) -> Result<(PathBuf, String)> {
    let files: Vec<EvalFile> = evals.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    let results: Vec<AlgoResult> = files.iter().map(|f| f.result.clone()).collect();
    let (csv, text) = compare_report(&results)?;
    let path = ctx.path("compare.csv");
    write_csv(&path, &ctx.stamp(), &csv)?;
    let header: String = ctx.stamp().iter().map(|(k, v)| format!("# {k}={v}\n")).collect();
    std::fs::write(ctx.path("compare.txt"), format!("{header}{text}"))?;
    Ok((path, text))
}

pub fn cmd_integrator_bench(ctx: &Context, orbit: &Option<PathBuf>) -> Result<PathBuf> {
    let (model, start) = match orbit {
        Some(p) => {
            let o = read_json::<OrbitFile>(p)?.orbit;
            (o.model.clone(), o.initial)
        }
        None => (Model::new(ctx.cfg.morphology.clone(), ctx.cfg.reference_seed), FreeState::at_rest()),
    };
    let (n, spp) = (ctx.cfg.bench_periods, ctx.cfg.bench_steps_per_period);
    let cg = orthogonality_history(&start, n, spp, &model, &Method::default())?;
    let rk = orthogonality_history(&start, n, spp, &model, &Method::Rk4)?;
    let mut body = String::from("t,cg4,rk4\n");
    for (a, b) in cg.iter().zip(&rk) {
        body.push_str(&format!("{},{},{}\n", a.0, a.1, b.1));
    }
    log::info!(
        "max orthogonality error: cg4 {:.3e}, rk4 {:.3e}",
        cg.iter().map(|v| v.1).fold(0.0, f64::max),
        rk.iter().map(|v| v.1).fold(0.0, f64::max)
    );
    let path = ctx.path("orthogonality.csv");
    write_csv(&path, &ctx.stamp(), &body)?;
    Ok(path)
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    let ctx = Context::load(&cli.common)?;
    let out = match &cli.command {
        Command::InitConfig { output } => {
            write_json(output, &ctx.cfg)?;
            output.clone()
        }
        Command::FindOrbit => cmd_find_orbit(&ctx)?,
        Command::GenData { orbit } => cmd_gen_data(&ctx, orbit)?,
        Command::Train { algo, orbit, dataset } => cmd_train(&ctx, *algo, orbit, dataset)?,
        Command::Evaluate { policy, orbit, noise, trajectories, horizon } => {
            cmd_evaluate(&ctx, policy, orbit, *noise, *trajectories, *horizon)?
        }
        Command::Compare { evals } => {
            let (p, text) = cmd_compare(&ctx, evals)?;
            print!("{text}");
            p
        }
        Command::IntegratorBench { orbit } => cmd_integrator_bench(&ctx, orbit)?,
    };
    println!("wrote {}", out.display());
    Ok(())
}

/// Parses `args` and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_and_usage_exit_codes() {
        assert_eq!(main_with_args(["flapwing", "--help"]), 0);
        for sub in ["find-orbit", "gen-data", "train", "evaluate", "compare", "integrator-bench", "init-config"] {
            assert_eq!(main_with_args(["flapwing", sub, "--help"]), 0, "{sub}");
        }
        assert_eq!(main_with_args(["flapwing", "train", "ppo"]), 1);
        assert_eq!(main_with_args(["flapwing", "--preset", "huge", "find-orbit"]), 1);
    }

    #[test]
    fn dataset_subset_keeps_zero_pairs() {
        let mut ds = Dataset::empty(1, "h".into());
        for i in 0..5 {
            ds.push([i as f64; 12], vec![0.1; crate::wingkin::U_LEN], Provenance::Sampled, (1.0, 2.0));
        }
        for _ in 0..2 {
            ds.push([0.0; 12], vec![0.0; crate::wingkin::U_LEN], Provenance::Zero, (0.0, 0.0));
        }
        let s = take_dataset(&ds, 5, 2);
        assert_eq!(s.len(), 5);
        assert_eq!(s.n_zero(), 2);
        assert_eq!(s.x[2][0], 2.0);
    }
}
