use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use funcq::bspline::BSplineBasis;
use funcq::density::{lqd_forward, lqd_inverse, mean_steps, sample_to_lqd, DensityEstimate, KdeOptions, LqdFunction, StepSample};
use funcq::env::{
    generate_dataset, rollout_value, Environment, RolloutEstimate, SyntheticEnv, SyntheticEnvSpec, TabularEmbedEnv,
    TabularSpec,
};
use funcq::fqe::{fqe_run, resolve_spec, PolicyHandle};
use funcq::fqi::{candidate_config, fqi_run, select_hyperparams, FqiResult, FunctionalLinearPolicy, PolicyRecord};
use funcq::ingest::{ingest, IngestOptions, RawRecords};
use funcq::io::{dataset_files, read_curve, read_dataset, read_json, read_table, write_curve, write_dataset, write_json, write_table};
use funcq::kernel::KernelSpec;
use funcq::util::derive_seed;
use funcq::{Dataset, Grid, RunConfig};

use crate::manifest::Recorder;
use crate::{
    Cli, Command, EnvKind, EnvPolicy, FqeArgs, FqiArgs, ForwardArgs, IngestArgs, InverseArgs, ReportArgs,
    SimulateArgs, TransformCommand, TuneArgs,
};

const ENV_FILE: &str = "env.json";
const ROLLOUT_STREAM: u64 = 0x636c_69;

/// Simulator description stored next to a simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum EnvConfig {
    Synthetic(SyntheticEnvSpec),
    Tabular(TabularSpec),
}

enum Simulator {
    Synthetic(SyntheticEnv),
    Tabular(TabularEmbedEnv),
}

impl Simulator {
    fn new(cfg: &EnvConfig) -> Result<Self> {
        Ok(match cfg {
            EnvConfig::Synthetic(s) => Simulator::Synthetic(SyntheticEnv::new(s.clone())?),
            EnvConfig::Tabular(s) => Simulator::Tabular(TabularEmbedEnv::new(s.clone())?),
        })
    }

    fn env(&self) -> &dyn Environment {
        match self {
            Simulator::Synthetic(e) => e,
            Simulator::Tabular(e) => e,
        }
    }

    fn policy(&self, which: EnvPolicy) -> Result<PolicyHandle> {
        Ok(match (self, which) {
            (Simulator::Synthetic(e), EnvPolicy::Behavior) => e.behavior_handle(),
            (Simulator::Synthetic(e), EnvPolicy::Optimal) => e.optimal_handle(),
            (Simulator::Synthetic(_), EnvPolicy::Uniform) => {
                bail!("the synthetic environment has no uniform policy; use behavior or optimal")
            }
            (Simulator::Tabular(e), EnvPolicy::Behavior | EnvPolicy::Uniform) => e.uniform_policy(),
            (Simulator::Tabular(_), EnvPolicy::Optimal) => {
                bail!("the tabular environment has no planted optimum; use behavior or uniform")
            }
        })
    }
}

struct RunContext {
    config: RunConfig,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn load_dataset(dir: &Path, rec: &mut Recorder) -> Result<Dataset> {
    if !dir.is_dir() {
        bail!("dataset directory {} does not exist", dir.display());
    }
    let files = dataset_files(dir);
    for f in &files {
        if !f.is_file() {
            bail!("missing dataset file {}", f.display());
        }
    }
    rec.inputs(files.iter())?;
    Ok(read_dataset(dir)?)
}

fn load_policy(path: &Path, rec: &mut Recorder) -> Result<FunctionalLinearPolicy> {
    if !path.is_file() {
        bail!("missing policy file {}", path.display());
    }
    rec.input(path)?;
    let record: PolicyRecord = read_json(path)?;
    FunctionalLinearPolicy::from_record(&record).with_context(|| format!("loading policy {}", path.display()))
}

fn load_json_input<T: serde::de::DeserializeOwned>(path: &Path, rec: &mut Recorder) -> Result<T> {
    if !path.is_file() {
        bail!("missing file {}", path.display());
    }
    rec.input(path)?;
    Ok(read_json(path)?)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let ctx = RunContext {
        config: load_config(&cli)?,
    };
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Fqe(a) => cmd_fqe(&ctx, a),
        Command::Fqi(a) => cmd_fqi(&ctx, a),
        Command::Tune(a) => cmd_tune(&ctx, a),
        Command::Transform(TransformCommand::Forward(a)) => cmd_forward(&ctx, a),
        Command::Transform(TransformCommand::Inverse(a)) => cmd_inverse(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

fn cmd_ingest(ctx: &RunContext, a: &IngestArgs) -> Result<()> {
    let mut rec = Recorder::new(&a.out)?;
    for p in [&a.steps, &a.biomarkers, &a.demographics] {
        if !p.is_file() {
            bail!("missing input file {}", p.display());
        }
    }
    rec.inputs([&a.steps, &a.biomarkers, &a.demographics])?;
    let opts: IngestOptions = match &a.options {
        Some(p) => load_json_input(p, &mut rec)?,
        None => IngestOptions::default(),
    };
    let raw = RawRecords::read(&a.steps, &a.biomarkers, &a.demographics)?;
    let (data, report) = ingest(&raw, &opts)?;
    write_dataset(&a.out, &data)?;
    rec.outputs(dataset_files(&a.out));
    let path = rec.out("ingest_report.json");
    write_json(&path, &report)?;
    rec.output(path);
    log::info!(
        "{} subjects retained of {}, {} transitions",
        report.subjects_retained,
        report.subjects_seen,
        report.transitions
    );
    rec.finish("ingest", ctx.config.seed, &ctx.config, (a, opts))?;
    Ok(())
}

fn cmd_simulate(ctx: &RunContext, a: &SimulateArgs) -> Result<()> {
    let mut rec = Recorder::new(&a.out)?;
    let cfg = match (&a.env_config, a.env) {
        (Some(p), EnvKind::Synthetic) => EnvConfig::Synthetic(load_json_input(p, &mut rec)?),
        (Some(p), EnvKind::Tabular) => EnvConfig::Tabular(load_json_input(p, &mut rec)?),
        (None, EnvKind::Synthetic) => EnvConfig::Synthetic(SyntheticEnvSpec::default()),
        (None, EnvKind::Tabular) => EnvConfig::Tabular(TabularSpec::default()),
    };
    let sim = Simulator::new(&cfg)?;
    let policy = sim.policy(a.policy)?;
    let data = generate_dataset(sim.env(), &policy, a.subjects, a.horizon, ctx.config.seed)?;
    write_dataset(&a.out, &data)?;
    rec.outputs(dataset_files(&a.out));
    let path = rec.out(ENV_FILE);
    write_json(&path, &cfg)?;
    rec.output(path);
    rec.finish("simulate", ctx.config.seed, &ctx.config, a)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct FqeOutput {
    value: f64,
    out_of_range: bool,
    iterations: usize,
    final_residual: Option<f64>,
    spec: KernelSpec,
    rollout: Option<RolloutEstimate>,
}

fn cmd_fqe(ctx: &RunContext, a: &FqeArgs) -> Result<()> {
    let mut rec = Recorder::new(&a.out)?;
    let data = load_dataset(&a.data, &mut rec)?;
    let sim = match &a.env {
        Some(p) => Some(Simulator::new(&load_json_input::<EnvConfig>(p, &mut rec)?)?),
        None => None,
    };
    let handle = match (&a.policy, a.env_policy, &sim) {
        (Some(p), _, _) => PolicyHandle::deterministic(load_policy(p, &mut rec)?),
        (None, Some(which), Some(sim)) => sim.policy(which)?,
        _ => bail!("one of --policy or --env-policy with --env is required"),
    };
    let config = &ctx.config;
    let spec = resolve_spec(&data, config)?;
    let result = fqe_run(&data, &handle, config, spec)?;
    let rollout = match &sim {
        Some(sim) => Some(rollout_value(
            sim.env(),
            &handle,
            a.episodes,
            None,
            config.gamma,
            derive_seed(config.seed, &[ROLLOUT_STREAM]),
        )?),
        None => None,
    };
    let out = FqeOutput {
        value: result.value,
        out_of_range: result.out_of_range,
        iterations: result.residuals.len(),
        final_residual: result.residuals.last().copied(),
        spec,
        rollout,
    };
    let path = rec.out("fqe.json");
    write_json(&path, &out)?;
    rec.output(path);
    let path = rec.out("residuals.csv");
    let rows: Vec<Vec<f64>> = result
        .residuals
        .iter()
        .enumerate()
        .map(|(m, r)| vec![(m + 1) as f64, *r])
        .collect();
    write_table(&path, &["iteration".into(), "residual".into()], &rows)?;
    rec.output(path);
    let path = rec.out("q_hat.json");
    write_json(&path, &result.q_hat.to_record())?;
    rec.output(path);
    println!("{}", result.value);
    rec.finish("fqe", config.seed, config, a)?;
    Ok(())
}

fn write_fit(rec: &mut Recorder, fit: &FqiResult) -> Result<()> {
    let path = rec.out("policy.json");
    write_json(&path, &fit.policy.to_record())?;
    rec.output(path);
    let path = rec.out("q_hat.json");
    write_json(&path, &fit.q_hat.to_record())?;
    rec.output(path);
    let path = rec.out("diagnostics.csv");
    let rows: Vec<Vec<f64>> = fit
        .diagnostics()
        .iter()
        .map(|d| vec![d.iteration as f64, d.objective, d.policy_change, d.optimizer_steps as f64])
        .collect();
    let header = ["iteration", "objective", "policy_change", "optimizer_steps"].map(String::from);
    write_table(&path, &header, &rows)?;
    rec.output(path);
    if fit.diverged {
        log::warn!("policy objective fell for five consecutive iterations");
    }
    Ok(())
}

fn cmd_fqi(ctx: &RunContext, a: &FqiArgs) -> Result<()> {
    let mut rec = Recorder::new(&a.out)?;
    let data = load_dataset(&a.data, &mut rec)?;
    let mut config = ctx.config.clone();
    if let Some(eta) = a.eta {
        config.eta = eta;
    }
    if let Some(lambda) = a.lambda {
        config.lambda = lambda;
    }
    config.validate()?;
    let spec = resolve_spec(&data, &config)?;
    let basis = BSplineBasis::uniform(config.interior_knots);
    let fit = fqi_run(&data, &config, spec, &basis, config.eta)?;
    write_fit(&mut rec, &fit)?;
    rec.finish("fqi", config.seed, &config, a)?;
    Ok(())
}

fn cmd_tune(ctx: &RunContext, a: &TuneArgs) -> Result<()> {
    let mut rec = Recorder::new(&a.out)?;
    let data = load_dataset(&a.data, &mut rec)?;
    let config = &ctx.config;
    let basis = BSplineBasis::uniform(config.interior_knots);
    let sel = select_hyperparams(&data, &a.lambdas, &a.etas, &a.multipliers, config, &basis)?;
    let path = rec.out("selection.json");
    write_json(&path, &sel)?;
    rec.output(path);
    let chosen = candidate_config(config, &sel.chosen);
    if !a.no_refit {
        let spec = resolve_spec(&data, &chosen)?;
        let fit = fqi_run(&data, &chosen, spec, &basis, chosen.eta)?;
        write_fit(&mut rec, &fit)?;
    }
    println!(
        "lambda={} eta={} multiplier={}",
        sel.chosen.lambda, sel.chosen.eta, sel.chosen.bandwidth_multiplier
    );
    rec.finish("tune", config.seed, &chosen, a)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct LqdSummary {
    anchor: f64,
    mean_steps: f64,
}

fn cmd_forward(ctx: &RunContext, a: &ForwardArgs) -> Result<()> {
    let mut rec = Recorder::new(&a.out)?;
    let grid = Grid::uniform(a.grid_points)?;
    let lqd = match (&a.sample, &a.density) {
        (Some(p), _) => {
            let values = one_column(p, &mut rec)?;
            sample_to_lqd(&StepSample::new(values, p.display().to_string())?, &KdeOptions::default(), &grid)?
        }
        (None, Some(p)) => {
            let (x, f) = two_columns(p, &mut rec)?;
            lqd_forward(&DensityEstimate::new(x, f)?, &grid)?
        }
        (None, None) => bail!("one of --sample or --density is required"),
    };
    let path = rec.out("lqd.csv");
    write_curve(&path, lqd.function())?;
    rec.output(path);
    let path = rec.out("lqd.json");
    write_json(
        &path,
        &LqdSummary {
            anchor: lqd.anchor(),
            mean_steps: mean_steps(&lqd)?,
        },
    )?;
    rec.output(path);
    rec.finish("transform forward", ctx.config.seed, &ctx.config, a)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct InverseSummary {
    mean_steps: f64,
    capped: bool,
}

fn cmd_inverse(ctx: &RunContext, a: &InverseArgs) -> Result<()> {
    let mut rec = Recorder::new(&a.out)?;
    if !a.lqd.is_file() {
        bail!("missing LQD file {}", a.lqd.display());
    }
    rec.input(&a.lqd)?;
    let f = read_curve(&a.lqd)?;
    let inv = lqd_inverse(&LqdFunction::new(f, a.anchor)?)?;
    let path = rec.out("quantile.csv");
    write_curve(&path, inv.quantile.function())?;
    rec.output(path);
    let path = rec.out("density.csv");
    let rows: Vec<Vec<f64>> = inv
        .density
        .support()
        .iter()
        .zip(inv.density.values())
        .map(|(&x, &v)| vec![x, v])
        .collect();
    write_table(&path, &["x".into(), "density".into()], &rows)?;
    rec.output(path);
    if inv.capped {
        log::warn!("LQD values were capped before inversion");
    }
    let path = rec.out("inverse.json");
    write_json(
        &path,
        &InverseSummary {
            mean_steps: inv.quantile.mean(),
            capped: inv.capped,
        },
    )?;
    rec.output(path);
    rec.finish("transform inverse", ctx.config.seed, &ctx.config, a)?;
    Ok(())
}

fn cmd_report(ctx: &RunContext, a: &ReportArgs) -> Result<()> {
    let mut rec = Recorder::new(&a.out)?;
    let data = load_dataset(&a.data, &mut rec)?;
    let policy = load_policy(&a.policy, &mut rec)?;
    let report = funcq::report::report(&policy, &data)?;
    rec.outputs(funcq::report::write_report(&a.out, &report)?);
    let path = rec.out("report.json");
    write_json(&path, &report)?;
    rec.output(path);
    rec.finish("report", ctx.config.seed, &ctx.config, a)?;
    Ok(())
}

fn read_numeric(path: &Path, rec: &mut Recorder) -> Result<Vec<Vec<f64>>> {
    if !path.is_file() {
        bail!("missing input file {}", path.display());
    }
    rec.input(path)?;
    Ok(read_table(path)?.1)
}

fn one_column(path: &PathBuf, rec: &mut Recorder) -> Result<Vec<f64>> {
    let rows = read_numeric(path, rec)?;
    rows.into_iter()
        .map(|r| match r.as_slice() {
            [v] => Ok(*v),
            _ => bail!("{}: expected one column", path.display()),
        })
        .collect()
}

fn two_columns(path: &PathBuf, rec: &mut Recorder) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = read_numeric(path, rec)?;
    let mut x = Vec::with_capacity(rows.len());
    let mut f = Vec::with_capacity(rows.len());
    for r in rows {
        match r.as_slice() {
            [a, b] => {
                x.push(*a);
                f.push(*b);
            }
            _ => bail!("{}: expected two columns", path.display()),
        }
    }
    Ok((x, f))
}
