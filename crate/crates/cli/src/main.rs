//! `chemo`: solve, train, evaluate and compare chemotherapy schedules.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use chemo_core::dynamics::{simulate, ConstantDose, DiffusionSpec, DoseSource, SimMode, SimOptions, U_MAX};
use chemo_core::environment::ActionSpace;
use chemo_core::experiments::{
    evaluate_episode, r1_policy_robustness, sampling_jobs, sampling_study, stochastic_mc, t0_robustness,
    Contender, EvalReport, Method, Policy, SweepResult,
};
use chemo_core::io::{write_episode_csv, write_oc_solution_csv, write_trajectory_csv, OutputDir};
use chemo_core::learn::{train_with, Algo, LearnedPolicy};
use chemo_core::ocp::{make_openloop_policy, solve_ocp, OcProblem, OcSolution, OcStatus, OcSummary};
use chemo_core::{Case, Error, RunConfig, StateVec};

#[derive(Debug)]
enum Failure {
    Runtime(String),
    Config(String),
    Infeasible(String),
    Diverged(String),
    Missing(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Config(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Diverged(_) => 4,
            Failure::Missing(_) => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Runtime(m) => write!(f, "error: {m}"),
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Infeasible(m) => write!(f, "optimal control problem not solved: {m}"),
            Failure::Diverged(m) => write!(f, "training diverged: {m}"),
            Failure::Missing(m) => write!(f, "missing prerequisite: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::InvalidParams(_) => Failure::Config(e.to_string()),
            Error::Diverged { .. } => Failure::Diverged(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(name = "chemo", version, about = "Chemotherapy scheduling with optimal control, DQN and DDPG")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to `runs/<case>/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    case: Option<CaseArg>,
    /// Worker threads for sweeps and Monte Carlo runs.
    #[arg(long, global = true, env = "CHEMO_WORKERS")]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    Case0,
    Patient,
}

impl From<CaseArg> for Case {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::Case0 => Case::Case0,
            CaseArg::Patient => Case::Patient,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Dqn,
    Ddpg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    R1,
    T0,
    Mc,
    Sampling,
}

/// Patient overrides shared by several commands.
#[derive(Args)]
struct PatientOverride {
    /// Tumor growth rate.
    #[arg(long)]
    r1: Option<f64>,
    /// Initial tumor size.
    #[arg(long)]
    t0: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Roll the model forward under a constant dose or a saved policy.
    #[command(group(ArgGroup::new("source").required(true).args(["dose", "policy"])))]
    Simulate {
        /// Constant infusion rate in [0, 10].
        #[arg(long)]
        dose: Option<f64>,
        /// Checkpoint (`policy.json`) or optimal control solution (`oc_solution.json`).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Horizon in days; defaults to the episode length.
        #[arg(long)]
        days: Option<f64>,
        /// Noise magnitude on the tumor equation.
        #[arg(long, default_value_t = 0.0)]
        g: f64,
        #[arg(long)]
        stop_at_cure: bool,
        #[command(flatten)]
        patient: PatientOverride,
    },
    /// Solve the optimal control problem by direct collocation.
    SolveOcp {
        #[command(flatten)]
        patient: PatientOverride,
    },
    /// Train a DQN or DDPG agent.
    Train {
        #[arg(long, value_enum)]
        algo: AlgoArg,
        /// Number of dose levels for DQN.
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Play a saved policy once through the environment.
    Evaluate {
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        patient: PatientOverride,
    },
    /// Run a comparison study across the three methods.
    Experiment {
        #[arg(value_enum)]
        which: Which,
        /// Directory holding `solve-ocp/`, `train-dqn/` and `train-ddpg/`;
        /// defaults to `runs/<case>`.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        oc: Option<PathBuf>,
        #[arg(long)]
        dqn: Option<PathBuf>,
        #[arg(long)]
        ddpg: Option<PathBuf>,
        /// Noise magnitude for `mc`.
        #[arg(long)]
        g: Option<f64>,
        /// Monte Carlo runs for `mc`.
        #[arg(long)]
        runs: Option<usize>,
        /// Training episodes per configuration for `sampling`.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        eval_every: Option<usize>,
    },
}

fn case_dir(case: Case) -> &'static str {
    match case {
        Case::Case0 => "case0",
        Case::Patient => "patient",
    }
}

struct Ctx {
    cfg: RunConfig,
    out: Option<PathBuf>,
    started: Instant,
}

impl Ctx {
    fn new(common: &Common) -> CliResult<Self> {
        let mut cfg = match &common.config {
            Some(path) => {
                if !path.exists() {
                    return Err(Failure::Config(format!("config file {} not found", path.display())));
                }
                RunConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(case) = common.case {
            cfg.case = case.into();
        }
        if let Some(w) = common.workers {
            cfg.workers = w;
        }
        Ok(Ctx { cfg, out: common.out.clone(), started: Instant::now() })
    }

    fn apply(&mut self, p: &PatientOverride) {
        if let Some(r1) = p.r1 {
            self.cfg.patient.params.r1 = r1;
        }
        if let Some(t0) = p.t0 {
            self.cfg.patient.x0.t = t0;
        }
    }

    fn validate(&self) -> CliResult<()> {
        self.cfg.validate().map_err(|e| Failure::Config(e.to_string()))
    }

    fn base(&self) -> PathBuf {
        PathBuf::from("runs").join(case_dir(self.cfg.case))
    }

    fn output(&self, name: &str) -> CliResult<OutputDir> {
        let root = self.out.clone().unwrap_or_else(|| self.base().join(name));
        Ok(OutputDir::create(&root)?)
    }

    fn finish(&self, dir: OutputDir, command: &str) -> CliResult<PathBuf> {
        let root = dir.path().to_path_buf();
        dir.finish(command, self.cfg.seed, self.cfg.to_value(), self.started.elapsed().as_secs_f64())?;
        Ok(root)
    }

    fn x0(&self) -> StateVec<f64> {
        self.cfg.patient.x0
    }
}

fn load_policy(path: &Path, hint: &str) -> CliResult<Policy> {
    if !path.exists() {
        return Err(Failure::Missing(format!("{} not found; {hint}", path.display())));
    }
    let text = std::fs::read_to_string(path)?;
    if let Ok(p) = LearnedPolicy::from_json(&text) {
        return Ok(Policy::Learned(p));
    }
    match serde_json::from_str::<OcSolution>(&text) {
        Ok(sol) => Ok(Policy::OpenLoop(make_openloop_policy(&sol)?)),
        Err(_) => Err(Failure::Runtime(format!(
            "{} is neither a checkpoint nor an optimal control solution",
            path.display()
        ))),
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn cmd_simulate(
    mut ctx: Ctx,
    dose: Option<f64>,
    policy: Option<PathBuf>,
    days: Option<f64>,
    g: f64,
    stop_at_cure: bool,
    patient: &PatientOverride,
) -> CliResult<PathBuf> {
    ctx.apply(patient);
    ctx.validate()?;
    let source: Box<dyn DoseSource> = match (dose, policy) {
        (Some(u), _) => {
            if !(0.0..=U_MAX).contains(&u) {
                return Err(Failure::Config(format!("dose must lie in [0, {U_MAX}], got {u}")));
            }
            Box::new(ConstantDose(u))
        }
        (None, Some(path)) => Box::new(load_policy(&path, "pass a file written by `train` or `solve-ocp`")?),
        (None, None) => unreachable!("clap requires a dose source"),
    };
    let env = ctx.cfg.env_config(ActionSpace::Continuous);
    let mode = if g > 0.0 { SimMode::stochastic(DiffusionSpec::new(g, ctx.cfg.seed)?) } else { SimMode::deterministic() };
    let opts = SimOptions {
        dt: env.dt,
        max_days: days.unwrap_or(env.dt * env.max_steps as f64),
        mode,
        u_min: 0.0,
        u_max: env.u_max,
        cure_threshold: env.cure_threshold,
        stop_at_cure,
    };
    let traj = simulate(&ctx.cfg.patient.params, source.as_ref(), ctx.x0(), &opts)?;
    let mut dir = ctx.output("simulate")?;
    dir.write_with("trajectory.csv", |buf| write_trajectory_csv(&traj, buf))?;
    match traj.cure_time {
        Some(t) => println!("cured at day {t:.2}"),
        None => println!("not cured; final T = {:.4}", traj.states.last().map_or(f64::NAN, |x| x.t)),
    }
    ctx.finish(dir, "simulate")
}

#[derive(Serialize)]
struct SolveReport {
    #[serde(flatten)]
    summary: OcSummary,
    max_violation: f64,
    r1: f64,
    x0: StateVec<f64>,
    replay: Option<EvalReport>,
}

fn cmd_solve_ocp(mut ctx: Ctx, patient: &PatientOverride) -> CliResult<PathBuf> {
    ctx.apply(patient);
    ctx.validate()?;
    let params = ctx.cfg.patient.params;
    let problem = OcProblem::new(params, ctx.x0(), ctx.cfg.case);
    let sol = solve_ocp(&problem, &ctx.cfg.ocp)?;
    let mut dir = ctx.output("solve-ocp")?;
    dir.write_with("oc_solution.csv", |buf| write_oc_solution_csv(&sol, buf))?;
    let mut replay = None;
    if sol.status == OcStatus::Optimal {
        dir.write_json("oc_solution.json", &sol)?;
        let policy = make_openloop_policy(&sol)?;
        let ep = evaluate_episode(&policy, &params, ctx.x0(), &ctx.cfg.env_config(ActionSpace::Continuous))?;
        dir.write_with("oc_episode.csv", |buf| write_episode_csv(&ep, buf))?;
        replay = Some(EvalReport::from_episode(&ep, ctx.cfg.env.dt));
    }
    let report = SolveReport { summary: sol.summary(), max_violation: sol.max_violation, r1: params.r1, x0: ctx.x0(), replay };
    dir.write_json("oc_summary.json", &report)?;
    let root = ctx.finish(dir, "solve-ocp")?;
    println!(
        "{:?}: tf = {:.3} d, objective = {:.4}, max violation = {:.1e}",
        sol.status, sol.tf, sol.objective, sol.max_violation
    );
    if sol.status != OcStatus::Optimal {
        return Err(Failure::Infeasible(format!("status {:?} at r1 = {}", sol.status, params.r1)));
    }
    Ok(root)
}

#[derive(Serialize)]
struct PolicyReport {
    method: Method,
    #[serde(flatten)]
    report: EvalReport,
}

fn cmd_train(mut ctx: Ctx, algo: AlgoArg, nodes: Option<usize>, episodes: Option<usize>) -> CliResult<PathBuf> {
    if let Some(n) = nodes {
        if matches!(algo, AlgoArg::Ddpg) {
            return Err(Failure::Config("--nodes applies to DQN only".into()));
        }
        ctx.cfg.dqn.n_actions = n;
    }
    let episodes = episodes.unwrap_or(ctx.cfg.experiments.train_episodes);
    if episodes == 0 {
        return Err(Failure::Config("--episodes must be at least 1".into()));
    }
    ctx.cfg.experiments.train_episodes = episodes;
    ctx.validate()?;
    let (algo, name) = match algo {
        AlgoArg::Dqn => (Algo::Dqn(ctx.cfg.dqn.clone()), "train-dqn"),
        AlgoArg::Ddpg => (Algo::Ddpg(ctx.cfg.ddpg.clone()), "train-ddpg"),
    };
    let config = ctx.cfg.env_config(algo.action_space());
    let params = ctx.cfg.patient.params;
    let mut env = chemo_core::environment::Env::new(params, config)?;
    env.reset(Some(ctx.x0()))?;
    let outcome = train_with(env, algo, episodes, ctx.cfg.seed, |_, point| {
        if (point.episode + 1) % 100 == 0 {
            eprintln!("episode {:5}  return {:9.3}", point.episode + 1, point.ret);
        }
        Ok(())
    })?;
    let mut dir = ctx.output(name)?;
    dir.write_with("learning_curve.csv", |buf| outcome.curve.write_csv(buf))?;
    if let Some(ep) = outcome.diverged_at {
        ctx.finish(dir, name)?;
        return Err(Failure::Diverged(format!("non-finite loss at episode {ep}; learning curve kept")));
    }
    dir.write_bytes("policy.json", outcome.policy.to_json()?.as_bytes())?;
    let policy = Policy::Learned(outcome.policy);
    let ep = evaluate_episode(&policy, &params, ctx.x0(), &config)?;
    dir.write_with("episode.csv", |buf| write_episode_csv(&ep, buf))?;
    let report = EvalReport::from_episode(&ep, config.dt);
    dir.write_json("report.json", &PolicyReport { method: policy.method(), report })?;
    println!("greedy policy: cost {:.4}, cured {}", report.cost, report.cured);
    ctx.finish(dir, name)
}

fn cmd_evaluate(mut ctx: Ctx, path: &Path, patient: &PatientOverride) -> CliResult<PathBuf> {
    ctx.apply(patient);
    ctx.validate()?;
    let policy = load_policy(path, "pass a file written by `train` or `solve-ocp`")?;
    let config = ctx.cfg.env_config(ActionSpace::Continuous);
    let ep = evaluate_episode(&policy, &ctx.cfg.patient.params, ctx.x0(), &config)?;
    let report = EvalReport::from_episode(&ep, config.dt);
    let mut dir = ctx.output("evaluate")?;
    dir.write_with("episode.csv", |buf| write_episode_csv(&ep, buf))?;
    dir.write_json("report.json", &PolicyReport { method: policy.method(), report })?;
    println!(
        "{}: cost {:.4}, cured {}, min N {:.3}, min I {:.3}",
        policy.method(),
        report.cost,
        report.cured,
        report.min_n,
        report.min_i
    );
    ctx.finish(dir, "evaluate")
}

struct Sources {
    oc: PathBuf,
    dqn: PathBuf,
    ddpg: PathBuf,
}

impl Sources {
    fn oc_solution(&self) -> CliResult<OcSolution> {
        if !self.oc.exists() {
            return Err(Failure::Missing(format!(
                "{} not found; run `chemo solve-ocp` first",
                self.oc.display()
            )));
        }
        serde_json::from_str(&std::fs::read_to_string(&self.oc)?)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", self.oc.display())))
    }

    fn policies(&self) -> CliResult<Vec<Policy>> {
        let expect = [
            (&self.oc, Method::Oc, "run `chemo solve-ocp` first"),
            (&self.dqn, Method::Dqn, "run `chemo train --algo dqn` first"),
            (&self.ddpg, Method::Ddpg, "run `chemo train --algo ddpg` first"),
        ];
        let mut out = Vec::new();
        for (path, method, hint) in expect {
            let p = load_policy(path, hint)?;
            if p.method() != method {
                return Err(Failure::Config(format!("{} holds a {} policy, expected {method}", path.display(), p.method())));
            }
            out.push(p);
        }
        Ok(out)
    }
}

fn write_sweep(dir: &mut OutputDir, sweep: &SweepResult) -> CliResult<()> {
    dir.write_with(&format!("sweep_{}.csv", sweep.parameter), |buf| sweep.write_csv(buf))?;
    for e in &sweep.entries {
        if let Some(ep) = &e.episode {
            dir.write_with(&format!("{}_{}_{}.csv", e.method, sweep.parameter, e.value), |buf| {
                write_episode_csv(ep, buf)
            })?;
        }
    }
    for e in &sweep.entries {
        println!(
            "{:5} {}={:<5} cured {:5} cost {:8.4}",
            e.method.to_string(),
            sweep.parameter,
            e.value,
            e.report.cured,
            e.report.cost
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    mut ctx: Ctx,
    which: Which,
    sources: Sources,
    g: Option<f64>,
    runs: Option<usize>,
    episodes: Option<usize>,
    eval_every: Option<usize>,
) -> CliResult<PathBuf> {
    let e = &mut ctx.cfg.experiments;
    if let Some(g) = g {
        e.g = g;
    }
    if let Some(n) = runs {
        e.mc_runs = n;
    }
    if let Some(n) = episodes {
        e.sampling_episodes = n;
    }
    if let Some(n) = eval_every {
        e.eval_every = n;
    }
    ctx.validate()?;
    let params = ctx.cfg.patient.params;
    let config = ctx.cfg.env_config(ActionSpace::Continuous);
    let workers = ctx.cfg.workers;
    let name = match which {
        Which::R1 => "experiment-r1",
        Which::T0 => "experiment-t0",
        Which::Mc => "experiment-mc",
        Which::Sampling => "experiment-sampling",
    };
    if let Which::Sampling = which {
        let sol = sources.oc_solution()?;
        if sol.status != OcStatus::Optimal {
            return Err(Failure::Infeasible("baseline solution is not optimal".into()));
        }
        let e = &ctx.cfg.experiments;
        let jobs = sampling_jobs(&e.sampling_grids, &ctx.cfg.dqn, &ctx.cfg.ddpg, ctx.cfg.seed);
        let results =
            sampling_study(&jobs, &params, ctx.x0(), ctx.cfg.case, e.sampling_episodes, e.eval_every, sol.objective, workers);
        let mut dir = ctx.output(name)?;
        let mut summary = String::from("label,seed,first_within_10pct,final_cost,oc_cost,diverged_at\n");
        for (job, run) in jobs.iter().zip(results) {
            let run = run?;
            let c = &run.curve;
            dir.write_with(&format!("sampling_{}.csv", job.label), |buf| c.write_csv(buf))?;
            let last = c.points.last().map_or(f64::NAN, |p| p.cost);
            let within = c.first_within(0.10).map(|v| v.to_string()).unwrap_or_default();
            let div = c.diverged_at.map(|v| v.to_string()).unwrap_or_default();
            summary.push_str(&format!("{},{},{within},{last},{},{div}\n", c.label, c.seed, sol.objective));
            println!("{:7} final cost {:8.4} (oc {:.4})", c.label, last, sol.objective);
        }
        dir.write_bytes("summary.csv", summary.as_bytes())?;
        return ctx.finish(dir, name);
    }
    let policies = sources.policies()?;
    let contenders: Vec<Contender<'_>> =
        policies.iter().map(|p| Contender { method: p.method(), policy: p }).collect();
    let e = &ctx.cfg.experiments;
    let mut dir = ctx.output(name)?;
    match which {
        Which::R1 => {
            let sweep = r1_policy_robustness(&contenders, &params, ctx.x0(), &e.r1_values, &config, workers)?;
            write_sweep(&mut dir, &sweep)?;
        }
        Which::T0 => {
            let sweep = t0_robustness(&contenders, &params, ctx.x0(), &e.t0_values, &config, workers)?;
            write_sweep(&mut dir, &sweep)?;
        }
        Which::Mc => {
            let mc = stochastic_mc(&contenders, &params, ctx.x0(), &config, e.mc_days, e.g, e.mc_runs, e.mc_seed, workers)?;
            dir.write_with("mc_stats.csv", |buf| mc.write_csv(buf))?;
            dir.write_with("mc_final.csv", |buf| mc.write_final_csv(buf))?;
            for m in &mc.methods {
                dir.write_with(&format!("mc_runs_{}.csv", m.method), |buf| mc.write_runs_csv(m.method, buf))?;
                println!("{:5} final mean T {:.4} (std {:.4}), {} of {} cured", m.method.to_string(), m.final_mean, m.final_std, m.cured, mc.n_runs);
            }
        }
        Which::Sampling => unreachable!("handled above"),
    }
    ctx.finish(dir, name)
}

fn run(cli: Cli) -> CliResult<PathBuf> {
    let ctx = Ctx::new(&cli.common)?;
    match cli.command {
        Command::Simulate { dose, policy, days, g, stop_at_cure, patient } => {
            cmd_simulate(ctx, dose, policy, days, g, stop_at_cure, &patient)
        }
        Command::SolveOcp { patient } => cmd_solve_ocp(ctx, &patient),
        Command::Train { algo, nodes, episodes } => cmd_train(ctx, algo, nodes, episodes),
        Command::Evaluate { policy, patient } => cmd_evaluate(ctx, &policy, &patient),
        Command::Experiment { which, from, oc, dqn, ddpg, g, runs, episodes, eval_every } => {
            let from = from.unwrap_or_else(|| ctx.base());
            let sources = Sources {
                oc: oc.unwrap_or_else(|| from.join("solve-ocp").join("oc_solution.json")),
                dqn: dqn.unwrap_or_else(|| from.join("train-dqn").join("policy.json")),
                ddpg: ddpg.unwrap_or_else(|| from.join("train-ddpg").join("policy.json")),
            };
            cmd_experiment(ctx, which, sources, g, runs, episodes, eval_every)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}
