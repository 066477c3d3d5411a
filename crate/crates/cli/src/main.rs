use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use modeshift::data::{summarize_by_treatment, write_dataset};
use modeshift::diagnostics::{overlap_svg, write_balance_csv};
use modeshift::impact::ImpactConfig;
use modeshift::impute::impute_chained_with;
use modeshift::synth::{generate_population, true_ate, Confounding, DgpConfig};
use modeshift::Error;
use modeshift_cli::pipeline::{self, Stage, StageResult};
use modeshift_cli::{Method, PipelineConfig, RunOptions, Target};

#[derive(Parser)]
#[command(name = "modeshift", version, about = "Effect of a fare-free arrival offer on guests' travel mode")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (flat TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Survey CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long, value_enum)]
    target: Option<Target>,
    /// Add the common-support trimmed matching estimate.
    #[arg(long)]
    trim: bool,
    /// Add the multiple-imputation branch.
    #[arg(long)]
    impute: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Calibrated,
    Randomized,
    Strong,
    Null,
    TwoGroup,
}

#[derive(Subcommand)]
enum Command {
    /// Apply the eligibility rules and write the retained records.
    Filter(Common),
    /// Means and standard deviations by information status.
    Describe(Common),
    /// Effect estimates.
    Estimate(Common),
    /// Covariate balance before and after matching.
    Balance(Common),
    /// Propensity-score overlap report.
    Overlap(Common),
    /// Refit the forest on a subgroup and compare CATEs.
    Stability(Common),
    /// Multiple imputation of missing covariates.
    Impute(Common),
    /// Generate a synthetic population and its oracle sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "calibrated")]
        preset: Preset,
        #[arg(long, default_value_t = 4000)]
        n: usize,
        /// Constant effect (two-group preset: effect in the flagged group).
        #[arg(long, default_value_t = 0.15)]
        effect: f64,
        /// Also compute the population ATE from this many fresh draws.
        #[arg(long)]
        truth_draws: Option<usize>,
    },
    /// CO2 and attribution figures for an effect.
    Impact {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ate: f64,
    },
    /// Full pipeline.
    Run(Common),
}

fn settings(c: &Common) -> StageResult<PipelineConfig> {
    let mut cfg = pipeline::load_config(c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = c.method {
        cfg.method = m;
    }
    if let Some(t) = c.target {
        cfg.targets = vec![t];
    }
    cfg.trim |= c.trim;
    cfg.impute |= c.impute;
    cfg.validate().stage("config")?;
    if let Some(w) = c.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be positive".into())).stage("config");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))
            .stage("config")?;
    }
    Ok(cfg)
}

fn input(c: &Common) -> StageResult<&Path> {
    c.input
        .as_deref()
        .ok_or_else(|| Error::Config("--input is required".into()))
        .stage("input")
}

fn write(path: &Path, bytes: &[u8]) -> StageResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::from).stage("output")?;
    }
    fs::write(path, bytes).map_err(Error::from).stage("output")
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> StageResult<()> {
    let mut bytes = serde_json::to_vec_pretty(v).map_err(Error::from).stage("output")?;
    bytes.push(b'\n');
    write(path, &bytes)
}

fn filtered(c: &Common, cfg: &PipelineConfig) -> StageResult<modeshift::Dataset> {
    let raw = pipeline::load_input(input(c)?)?;
    pipeline::filter(&raw, cfg)
}

fn execute(cmd: Command) -> StageResult<()> {
    match cmd {
        Command::Filter(c) => {
            let cfg = settings(&c)?;
            let d = filtered(&c, &cfg)?;
            let mut buf = Vec::new();
            write_dataset(&d, &mut buf).stage("output")?;
            write(&c.out.join("filtered.csv"), &buf)?;
            write_json(&c.out.join("filter_log.json"), &pipeline::SampleAccounting::new(&d))
        }
        Command::Describe(c) => {
            let cfg = settings(&c)?;
            let d = filtered(&c, &cfg)?;
            let s = summarize_by_treatment(&d).stage("describe")?;
            write_json(&c.out.join("descriptives.json"), &s)
        }
        Command::Estimate(c) => {
            let cfg = settings(&c)?;
            let d = filtered(&c, &cfg)?;
            let logit = pipeline::psm_estimator(&cfg).fit_propensity(&d).stage("logit")?;
            let est = pipeline::estimate(&d, &cfg, Some(&logit))?;
            for e in &est.estimates {
                println!("{e}");
            }
            write_json(&c.out.join("estimates.json"), &est.estimates)
        }
        Command::Balance(c) => {
            let cfg = settings(&c)?;
            let d = filtered(&c, &cfg)?;
            let est = pipeline::estimate(&d, &PipelineConfig { method: Method::Psm, ..cfg.clone() }, None)?;
            let rows = pipeline::balance(&d, &cfg, &est)?;
            let mut buf = Vec::new();
            write_balance_csv(&rows, &mut buf).stage("output")?;
            write(&c.out.join("balance.csv"), &buf)?;
            write_json(&c.out.join("balance.json"), &rows)
        }
        Command::Overlap(c) => {
            let cfg = settings(&c)?;
            let d = filtered(&c, &cfg)?;
            let logit = pipeline::psm_estimator(&cfg).fit_propensity(&d).stage("logit")?;
            let rep = pipeline::overlap(&logit.fitted, &d, &cfg)?;
            write(&c.out.join("overlap.svg"), overlap_svg(&rep).as_bytes())?;
            write_json(&c.out.join("overlap.json"), &rep)
        }
        Command::Stability(c) => {
            let cfg = settings(&c)?;
            let d = filtered(&c, &cfg)?;
            let s = pipeline::stability(&d, &cfg)?;
            println!("mean difference {:.5} (p = {:.4})", s.mean_difference, s.p_value);
            write_json(&c.out.join("stability.json"), &s)
        }
        Command::Impute(c) => {
            let mut cfg = settings(&c)?;
            cfg.missing_policy = modeshift::data::MissingPolicy::PassThrough;
            let d = filtered(&c, &cfg)?;
            let done = impute_chained_with(&d, &cfg.impute_options()).stage("imputation")?;
            for (k, completed) in done.iter().enumerate() {
                let mut buf = Vec::new();
                write_dataset(completed, &mut buf).stage("output")?;
                write(&c.out.join(format!("imputed_{}.csv", k + 1)), &buf)?;
            }
            Ok(())
        }
        Command::Simulate {
            common,
            preset,
            n,
            effect,
            truth_draws,
        } => {
            let cfg = settings(&common)?;
            let dgp = match preset {
                Preset::Calibrated => DgpConfig::with_confounding(Confounding::Mild, effect, n, cfg.seed),
                Preset::Randomized => DgpConfig::randomized(effect, n, cfg.seed),
                Preset::Strong => DgpConfig::with_confounding(Confounding::Strong, effect, n, cfg.seed),
                Preset::Null => DgpConfig::null(n, cfg.seed),
                Preset::TwoGroup => DgpConfig::two_group(effect, Confounding::Mild, n, cfg.seed),
            };
            let pop = generate_population(&dgp).stage("simulate")?;
            let mut buf = Vec::new();
            write_dataset(&pop.dataset, &mut buf).stage("output")?;
            write(&common.out.join("data.csv"), &buf)?;
            let mut buf = Vec::new();
            pop.write_oracle(&mut buf).stage("output")?;
            write(&common.out.join("oracle.csv"), &buf)?;
            if let Some(draws) = truth_draws {
                let t = true_ate(&dgp, draws).stage("simulate")?;
                println!("true ATE {:.5} (mc se {:.5})", t.ate, t.mc_se);
                write_json(&common.out.join("truth.json"), &t)?;
            }
            Ok(())
        }
        Command::Impact { common, ate } => {
            let cfg = settings(&common)?;
            let ic: ImpactConfig = cfg.impact();
            let s = ic.summarize("input", ate).stage("impact")?;
            println!(
                "{:.1} kg CO2 per switcher; {:.1}% of offer users attributable; {:.2}% of annual per-capita transport emissions",
                s.savings_kg_per_switcher,
                100.0 * s.attributed_share,
                100.0 * s.national_share
            );
            write_json(&common.out.join("impact.json"), &s)
        }
        Command::Run(c) => {
            let cfg = settings(&c)?;
            let report = pipeline::run_pipeline(&RunOptions {
                input: input(&c)?.to_path_buf(),
                out: c.out.clone(),
                config: cfg,
            })?;
            for e in &report.estimates {
                println!("{e}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
