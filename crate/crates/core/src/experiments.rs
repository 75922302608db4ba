//! Comparative studies: evaluation of frozen policies, growth-rate and
//! initial-tumor sweeps, stochastic Monte Carlo, and learning efficiency.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, Case, DiffusionSpec, DoseSource, PatientParams, SimMode, SimOptions, StateVec, PATH_FLOOR};
use crate::environment::{Done, Env, EnvConfig, Episode};
use crate::error::{Error, Result};
use crate::learn::{Algo, DdpgConfig, DqnConfig, LearnedPolicy, LearningCurve, Trainer};
use crate::ocp::OpenLoopPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oc,
    Dqn,
    Ddpg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Oc => "oc",
            Method::Dqn => "dqn",
            Method::Ddpg => "ddpg",
        }
    }

    pub fn is_learned(self) -> bool {
        self != Method::Oc
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Any of the three schedulers behind one dose interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Policy {
    OpenLoop(OpenLoopPolicy),
    Learned(LearnedPolicy),
}

impl Policy {
    pub fn method(&self) -> Method {
        match self {
            Policy::OpenLoop(_) => Method::Oc,
            Policy::Learned(p) => match p.algo {
                crate::learn::AlgoKind::Dqn => Method::Dqn,
                crate::learn::AlgoKind::Ddpg => Method::Ddpg,
            },
        }
    }
}

impl DoseSource for Policy {
    fn dose(&self, t: f64, x: &StateVec<f64>, dt: f64) -> f64 {
        match self {
            Policy::OpenLoop(p) => p.dose(t, x, dt),
            Policy::Learned(p) => p.dose(t, x, dt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Minus the episode return.
    pub cost: f64,
    pub cured: bool,
    pub days_to_cure: Option<f64>,
    pub min_n: f64,
    pub min_i: f64,
    /// Days spent below the floor, counted per control interval.
    pub n_violation_days: f64,
    pub i_violation_days: f64,
    pub final_t: f64,
}

impl EvalReport {
    pub fn from_episode(ep: &Episode, dt: f64) -> Self {
        let min = |f: fn(&StateVec<f64>) -> f64| ep.states.iter().map(f).fold(f64::INFINITY, f64::min);
        let below = |f: fn(&StateVec<f64>) -> f64| {
            dt * ep.states[1..].iter().filter(|x| f(x) < PATH_FLOOR).count() as f64
        };
        EvalReport {
            cost: ep.cost(),
            cured: ep.done == Done::Cured,
            days_to_cure: ep.cure_time(),
            min_n: min(|x| x.n),
            min_i: min(|x| x.i),
            n_violation_days: below(|x| x.n),
            i_violation_days: below(|x| x.i),
            final_t: ep.states.last().expect("episode has a start").t,
        }
    }
}

/// Plays `policy` through a fresh environment from `x0`.
pub fn evaluate_episode(
    policy: &dyn DoseSource,
    params: &PatientParams<f64>,
    x0: StateVec<f64>,
    config: &EnvConfig,
) -> Result<Episode> {
    let mut env = Env::new(*params, *config)?;
    env.reset(Some(x0))?;
    let dt = config.dt;
    let mut ep = Episode {
        times: vec![0.0],
        states: vec![x0],
        doses: Vec::new(),
        rewards: Vec::new(),
        done: Done::Running,
    };
    if x0.t <= config.cure_threshold {
        ep.done = Done::Cured;
        return Ok(ep);
    }
    loop {
        let u = policy.dose(env.time(), &env.state(), dt);
        let step = env.step_dose(u)?;
        ep.times.push(env.time());
        ep.states.push(step.info.state);
        ep.doses.push(step.info.dose);
        ep.rewards.push(step.reward);
        if step.done.is_over() {
            ep.done = step.done;
            return Ok(ep);
        }
    }
}

pub fn evaluate(
    policy: &dyn DoseSource,
    params: &PatientParams<f64>,
    x0: StateVec<f64>,
    config: &EnvConfig,
) -> Result<EvalReport> {
    Ok(EvalReport::from_episode(&evaluate_episode(policy, params, x0, config)?, config.dt))
}

/// Maps `f` over `items` on up to `workers` threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= items.len() {
                    break;
                }
                let r = f(&items[k]);
                slots.lock().expect("worker panicked")[k] = Some(r);
            });
        }
    });
    slots.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// A frozen policy under test.
pub struct Contender<'a> {
    pub method: Method,
    pub policy: &'a (dyn DoseSource + Sync),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub method: Method,
    pub value: f64,
    pub report: EvalReport,
    #[serde(skip)]
    pub episode: Option<Episode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: String,
    pub values: Vec<f64>,
    /// Method-major, values in grid order.
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    pub fn get(&self, method: Method, value: f64) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.method == method && e.value == value)
    }

    /// `method,<parameter>,cost,cured,days_to_cure,min_n,min_i,n_violation_days,i_violation_days,final_t`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            self.parameter.as_str(),
            "cost",
            "cured",
            "days_to_cure",
            "min_n",
            "min_i",
            "n_violation_days",
            "i_violation_days",
            "final_t",
        ])?;
        for e in &self.entries {
            let r = &e.report;
            w.write_record([
                e.method.to_string(),
                e.value.to_string(),
                r.cost.to_string(),
                r.cured.to_string(),
                r.days_to_cure.map(|d| d.to_string()).unwrap_or_default(),
                r.min_n.to_string(),
                r.min_i.to_string(),
                r.n_violation_days.to_string(),
                r.i_violation_days.to_string(),
                r.final_t.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sweep(
    parameter: &str,
    contenders: &[Contender<'_>],
    values: &[f64],
    config: &EnvConfig,
    workers: usize,
    setup: impl Fn(f64) -> Result<(PatientParams<f64>, StateVec<f64>)> + Sync,
) -> Result<SweepResult> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{parameter} grid must be finite")));
    }
    let jobs: Vec<(usize, f64)> =
        (0..contenders.len()).flat_map(|m| values.iter().map(move |&v| (m, v))).collect();
    let results = par_map(&jobs, workers, |&(m, v)| -> Result<SweepEntry> {
        let (params, x0) = setup(v)?;
        let ep = evaluate_episode(contenders[m].policy, &params, x0, config)?;
        Ok(SweepEntry {
            method: contenders[m].method,
            value: v,
            report: EvalReport::from_episode(&ep, config.dt),
            episode: Some(ep),
        })
    });
    Ok(SweepResult {
        parameter: parameter.to_string(),
        values: values.to_vec(),
        entries: results.into_iter().collect::<Result<_>>()?,
    })
}

/// Nominal policies on patients with a different tumor growth rate.
pub fn r1_policy_robustness(
    contenders: &[Contender<'_>],
    params: &PatientParams<f64>,
    x0: StateVec<f64>,
    values: &[f64],
    config: &EnvConfig,
    workers: usize,
) -> Result<SweepResult> {
    sweep("r1", contenders, values, config, workers, |r1| {
        let mut p = *params;
        p.r1 = r1;
        p.validate()?;
        Ok((p, x0))
    })
}

/// Nominal policies from `(N0, T0, I0, C0)` with a perturbed `T0`.
pub fn t0_robustness(
    contenders: &[Contender<'_>],
    params: &PatientParams<f64>,
    x0: StateVec<f64>,
    values: &[f64],
    config: &EnvConfig,
    workers: usize,
) -> Result<SweepResult> {
    sweep("t0", contenders, values, config, workers, |t0| {
        if t0 < 0.0 {
            return Err(Error::InvalidArgument(format!("T0 must be non-negative, got {t0}")));
        }
        Ok((*params, StateVec { t: t0, ..x0 }))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McMethod {
    pub method: Method,
    /// Tumor size per run on the common time grid.
    pub runs: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
    /// Runs whose tumor reached the cure threshold.
    pub cured: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub g: f64,
    pub n_runs: usize,
    pub base_seed: u64,
    pub horizon_days: f64,
    pub times: Vec<f64>,
    pub methods: Vec<McMethod>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let Some(&shift) = values.first() else { return (f64::NAN, f64::NAN) };
    // shifted by the first sample, so identical runs give an exact mean and zero spread
    let offset = values.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - shift - offset).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (shift + offset, var.sqrt())
}

fn column_stats(runs: &[Vec<f64>], len: usize) -> (Vec<f64>, Vec<f64>) {
    (0..len)
        .map(|k| mean_std(&runs.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .unzip()
}

impl McSummary {
    pub fn method(&self, method: Method) -> Option<&McMethod> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// `t` then `mean_T_<method>,std_T_<method>` per method.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for m in &self.methods {
            header.push(format!("mean_T_{}", m.method));
            header.push(format!("std_T_{}", m.method));
        }
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            for m in &self.methods {
                row.push(m.mean[k].to_string());
                row.push(m.std[k].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `t,run_0,run_1,...` for one method.
    pub fn write_runs_csv<W: Write>(&self, method: Method, out: W) -> Result<()> {
        let m = self
            .method(method)
            .ok_or_else(|| Error::InvalidArgument(format!("no runs for {method}")))?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..m.runs.len()).map(|k| format!("run_{k}")));
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(m.runs.iter().map(|r| r[k].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `method,final_mean_T,final_std_T,cured,n_runs`.
    pub fn write_final_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "final_mean_T", "final_std_T", "cured", "n_runs"])?;
        for m in &self.methods {
            w.write_record([
                m.method.to_string(),
                m.final_mean.to_string(),
                m.final_std.to_string(),
                m.cured.to_string(),
                self.n_runs.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Each policy is run `n_runs` times with Euler-Maruyama noise of size `g` on
/// the tumor equation over a fixed horizon, continuing past the cure
/// threshold. Run `k` uses seed `base_seed + k` for every method.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_mc(
    contenders: &[Contender<'_>],
    params: &PatientParams<f64>,
    x0: StateVec<f64>,
    config: &EnvConfig,
    horizon_days: f64,
    g: f64,
    n_runs: usize,
    base_seed: u64,
    workers: usize,
) -> Result<McSummary> {
    if n_runs < 2 {
        return Err(Error::InvalidArgument(format!("Monte Carlo needs at least 2 runs, got {n_runs}")));
    }
    DiffusionSpec::new(g, base_seed)?;
    let opts = |seed: u64| -> Result<SimOptions> {
        Ok(SimOptions {
            dt: config.dt,
            max_days: horizon_days,
            mode: SimMode::stochastic(DiffusionSpec::new(g, seed)?),
            u_min: 0.0,
            u_max: config.u_max,
            cure_threshold: config.cure_threshold,
            stop_at_cure: false,
        })
    };
    let times: Vec<f64> = (0..=opts(base_seed)?.n_steps()).map(|k| k as f64 * config.dt).collect();
    let jobs: Vec<(usize, usize)> = (0..contenders.len()).flat_map(|m| (0..n_runs).map(move |k| (m, k))).collect();
    let runs = par_map(&jobs, workers, |&(m, k)| -> Result<(Vec<f64>, bool)> {
        let traj = simulate(params, contenders[m].policy, x0, &opts(base_seed.wrapping_add(k as u64))?)?;
        Ok((traj.states.iter().map(|x| x.t).collect(), traj.cure_time.is_some()))
    });
    let len = times.len();
    let mut runs = runs.into_iter();
    let mut methods = Vec::with_capacity(contenders.len());
    for c in contenders {
        let mut series = Vec::with_capacity(n_runs);
        let mut cured = 0;
        for _ in 0..n_runs {
            let (s, ok) = runs.next().expect("one result per job")?;
            cured += ok as usize;
            series.push(s);
        }
        let (mean, std) = column_stats(&series, len);
        methods.push(McMethod {
            method: c.method,
            final_mean: mean[len - 1],
            final_std: std[len - 1],
            mean,
            std,
            runs: series,
            cured,
        });
    }
    Ok(McSummary { g, n_runs, base_seed, horizon_days, times, methods })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPoint {
    /// Training episodes completed before the evaluation.
    pub episode: usize,
    pub cost: f64,
    pub cured: bool,
    pub oc_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingCurve {
    pub label: String,
    pub seed: u64,
    pub points: Vec<SamplingPoint>,
    pub diverged_at: Option<usize>,
}

impl SamplingCurve {
    /// First evaluated episode whose cost is within `rel` of the baseline.
    pub fn first_within(&self, rel: f64) -> Option<usize> {
        self.points.iter().find(|p| p.cost <= p.oc_cost * (1.0 + rel)).map(|p| p.episode)
    }

    /// `episode,cost,cured,oc_cost`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Configuration of one learning-efficiency run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingJob {
    pub label: String,
    pub algo: Algo,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SamplingRun {
    pub curve: SamplingCurve,
    pub learning: LearningCurve,
    pub policy: LearnedPolicy,
}

/// Trains `job`, evaluating the greedy policy before training, every
/// `eval_every` episodes, and after the last episode.
pub fn sampling_curve(
    job: &SamplingJob,
    params: &PatientParams<f64>,
    x0: StateVec<f64>,
    case: Case,
    episodes: usize,
    eval_every: usize,
    oc_cost: f64,
) -> Result<SamplingRun> {
    if eval_every == 0 || episodes == 0 {
        return Err(Error::InvalidArgument("episodes and evaluation cadence must be positive".into()));
    }
    let config = EnvConfig::new(case, job.algo.action_space(), params);
    let probe = |policy: &LearnedPolicy, episode: usize| -> Result<SamplingPoint> {
        let r = evaluate(policy, params, x0, &config)?;
        Ok(SamplingPoint { episode, cost: r.cost, cured: r.cured, oc_cost })
    };
    let mut env = Env::new(*params, config)?;
    env.reset(Some(x0))?;
    let mut trainer = Trainer::<f32>::new(env, job.algo.clone(), job.seed)?;
    let mut points = vec![probe(&trainer.policy(), 0)?];
    let mut diverged_at = None;
    for _ in 0..episodes {
        match trainer.run_episode() {
            Ok(point) => {
                let done = point.episode + 1;
                if done % eval_every == 0 || done == episodes {
                    points.push(probe(&trainer.policy(), done)?);
                }
            }
            Err(Error::Diverged { episode }) => {
                diverged_at = Some(episode);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let policy = trainer.policy();
    Ok(SamplingRun {
        curve: SamplingCurve { label: job.label.clone(), seed: job.seed, points, diverged_at },
        learning: trainer.into_curve(),
        policy,
    })
}

/// Runs every job, `workers` at a time.
#[allow(clippy::too_many_arguments)]
pub fn sampling_study(
    jobs: &[SamplingJob],
    params: &PatientParams<f64>,
    x0: StateVec<f64>,
    case: Case,
    episodes: usize,
    eval_every: usize,
    oc_cost: f64,
    workers: usize,
) -> Vec<Result<SamplingRun>> {
    par_map(jobs, workers, |job| sampling_curve(job, params, x0, case, episodes, eval_every, oc_cost))
}

/// DQN with each grid size, then DDPG.
pub fn sampling_jobs(grids: &[usize], dqn: &DqnConfig, ddpg: &DdpgConfig, seed: u64) -> Vec<SamplingJob> {
    let mut jobs: Vec<SamplingJob> = grids
        .iter()
        .map(|&n| SamplingJob {
            label: format!("dqn{n}"),
            algo: Algo::Dqn(DqnConfig { n_actions: n, ..dqn.clone() }),
            seed,
        })
        .collect();
    jobs.push(SamplingJob { label: "ddpg".into(), algo: Algo::Ddpg(ddpg.clone()), seed });
    jobs
}
