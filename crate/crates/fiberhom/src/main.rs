use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fiberhom::config::{validate, Experiment, ExperimentConfig};
use fiberhom::experiments;
use fiberhom::output::Manifest;

#[derive(Parser)]
#[command(name = "fiberhom", version, about = "High-contrast fiber homogenization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the homogenized pair and the 3D problem at one epsilon.
    Homogenize(Common),
    /// Fourier-modal stack and regularity gaps.
    Modal(Common),
    /// Corrector energy across an epsilon sweep.
    Corrector(Common),
    /// Blow-up functional near the fibers.
    Blowup(Common),
    /// Sup-norm estimate probe.
    Supest(Common),
    /// Counterexample lower bound.
    Counterexample(Common),
    /// Weighted Sobolev ratio of the test function.
    Sobolev(Common),
    /// Bessel checks and calibration constants.
    Bessel(Common),
    /// Small-volume defect sweep and polarization tensors.
    Defect(Common),
    /// Print the canonical configuration of an experiment as TOML.
    Canonical {
        #[arg(value_enum)]
        experiment: ExperimentArg,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration; canonical defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ExperimentArg {
    Homogenize,
    Modal,
    Corrector,
    Blowup,
    Supest,
    Counterexample,
    Sobolev,
    Bessel,
    Defect,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Homogenize => Experiment::Homogenize,
            ExperimentArg::Modal => Experiment::Modal,
            ExperimentArg::Corrector => Experiment::Corrector,
            ExperimentArg::Blowup => Experiment::Blowup,
            ExperimentArg::Supest => Experiment::Supest,
            ExperimentArg::Counterexample => Experiment::Counterexample,
            ExperimentArg::Sobolev => Experiment::Sobolev,
            ExperimentArg::Bessel => Experiment::Bessel,
            ExperimentArg::Defect => Experiment::Defect,
        }
    }
}

fn execute(exp: Experiment, c: Common) -> anyhow::Result<bool> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::canonical(exp),
    };
    anyhow::ensure!(
        cfg.experiment == exp,
        "configuration is for `{}`, not `{}`",
        cfg.experiment.name(),
        exp.name()
    );
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let violations = validate(&cfg);
    if !violations.is_empty() {
        for v in &violations {
            log::error!("{v}");
            eprintln!("invalid configuration: {v}");
        }
        anyhow::bail!("{} constraint violation(s), first: {}", violations.len(), violations[0].code);
    }
    if let Some(j) = c.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().context("configuring the thread pool")?;
    }
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    let hash = cfg.short_hash();
    log::info!("running {} (config {hash})", exp.name());
    let outcome = experiments::run(&cfg)?;
    let mut files = Vec::new();
    for t in &outcome.tables {
        let p = t.write(&c.out, &hash)?;
        files.push(p.file_name().unwrap().to_string_lossy().into_owned());
    }
    for (name, text) in &outcome.files {
        std::fs::write(c.out.join(name), text)?;
        files.push(name.clone());
    }
    std::fs::write(c.out.join("config.toml"), cfg.to_toml())?;
    files.push("config.toml".into());
    let manifest = Manifest {
        experiment: exp.name().into(),
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        files,
        wall_times: outcome.wall_times.iter().cloned().collect::<BTreeMap<_, _>>(),
        notes: outcome.notes.clone(),
        pass: outcome.pass,
    };
    manifest.write(&c.out)?;
    for n in &outcome.notes {
        log::warn!("{n}");
    }
    println!("{}: {}", exp.name(), if outcome.pass { "pass" } else { "fail" });
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (exp, common) = match cli.command {
        Command::Canonical { experiment } => {
            print!("{}", ExperimentConfig::canonical(experiment.into()).to_toml());
            return ExitCode::SUCCESS;
        }
        Command::Homogenize(c) => (Experiment::Homogenize, c),
        Command::Modal(c) => (Experiment::Modal, c),
        Command::Corrector(c) => (Experiment::Corrector, c),
        Command::Blowup(c) => (Experiment::Blowup, c),
        Command::Supest(c) => (Experiment::Supest, c),
        Command::Counterexample(c) => (Experiment::Counterexample, c),
        Command::Sobolev(c) => (Experiment::Sobolev, c),
        Command::Bessel(c) => (Experiment::Bessel, c),
        Command::Defect(c) => (Experiment::Defect, c),
    };
    match execute(exp, common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
