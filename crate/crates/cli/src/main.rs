use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use rtedmd_core::experiments::{
    self, estimate_method, reconstruct, run_filtered_resolvent_ablation, run_lv_experiment,
    run_ou_experiment, simulate_trial, trial_seeds, write_identified, write_reconstruction,
    ExperimentConfig, Method,
};
use rtedmd_core::spectral::{eigendecompose, match_and_mae};
use rtedmd_core::sysid::IdentifiedModel;
use rtedmd_core::{Error, GeneratorMatrix, Result, TrajectoryEnsemble};

#[derive(Parser, Debug)]
#[command(
    name = "rtedmd",
    version,
    about = "Generator estimation from stopped SDE paths"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the configured ensemble and write it as JSON and CSV.
    Simulate(Common),
    /// Fit generator matrices and write them as JSON.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Previously simulated ensemble (JSON); simulated afresh when absent.
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Eigenvalues of a generator matrix, scored against the reference spectrum.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generator: PathBuf,
    },
    /// Recover drift and diffusion polynomials.
    Sysid {
        #[command(flatten)]
        common: Common,
        /// Generator to identify; fitted from fresh data when absent.
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Identify, then re-simulate under the same noise as the true model.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Multi-trial experiments.
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Subcommand, Debug)]
enum Experiment {
    /// Ornstein-Uhlenbeck spectrum sweep.
    Ou(Common),
    /// Lotka-Volterra principal-pair sweep.
    Lv(Common),
    /// Stopped versus filtered resolvent estimator.
    Ablation(Common),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML experiment configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config and RTEDMD_OUT_DIR.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Restrict to one method: rt, rt_mod, edmd or gedmd.
    #[arg(long)]
    method: Option<String>,
    /// Sampling frequency in Hz.
    #[arg(long)]
    freq: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config is required".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(f) = self.freq {
            cfg.sweep.frequencies = vec![f];
            if let Some(s) = cfg.sysid.as_mut() {
                s.frequency = Some(f);
            }
            if let Some(a) = cfg.ablation.as_mut() {
                a.frequency = f;
            }
        }
        if let Some(t) = self.trials {
            cfg.sweep.trials = t;
        }
        if let Some(m) = &self.method {
            let m = Method::parse(m)?;
            cfg.estimators.methods = vec![m];
            if let Some(s) = cfg.sysid.as_mut() {
                s.method = m;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: Option<&ExperimentConfig>) -> PathBuf {
        match cfg {
            Some(c) => c.resolve_output_dir(self.out_dir.as_deref()),
            None => ExperimentConfig::default_output_dir(self.out_dir.as_deref()),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

fn simulate(cfg: &ExperimentConfig) -> Result<TrajectoryEnsemble> {
    let model = cfg.model.build();
    simulate_trial(
        cfg,
        &model,
        cfg.sweep.frequencies[0],
        cfg.sampling.paths_per_state,
        trial_seeds(cfg.seed, 0),
    )
}

fn identify(cfg: &ExperimentConfig, generator: Option<&Path>) -> Result<IdentifiedModel> {
    let l = match generator {
        Some(p) => GeneratorMatrix::read(p)?,
        None => experiments::fit_sysid_generator(cfg)?,
    };
    IdentifiedModel::identify(&l)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = common.load()?;
            let dir = common.out_dir(Some(&cfg));
            create_dir(&dir)?;
            let ens = simulate(&cfg)?;
            ens.save_json(dir.join("ensemble.json"))?;
            ens.save_csv(dir.join("ensemble.csv"))?;
            info!("exit fraction {:.4}", ens.exit_fraction());
            println!("{}", dir.join("ensemble.json").display());
        }
        Command::Estimate { common, ensemble } => {
            let cfg = common.load()?;
            let dir = common.out_dir(Some(&cfg));
            create_dir(&dir)?;
            let ens = match ensemble {
                Some(p) => TrajectoryEnsemble::load_json(p)?,
                None => simulate(&cfg)?,
            };
            let dict = cfg.dictionary.build(ens.dim())?;
            for &m in &cfg.estimators.methods {
                let l = estimate_method(m, &ens, &dict, &cfg.estimators)?;
                let path = dir.join(format!("generator_{}.json", m.id()));
                l.write(&path)?;
                println!("{}", path.display());
            }
        }
        Command::Spectrum { common, generator } => {
            let cfg = common.config.as_ref().map(|_| common.load()).transpose()?;
            let dir = common.out_dir(cfg.as_ref());
            create_dir(&dir)?;
            let l = GeneratorMatrix::read(&generator)?;
            let method = l.provenance().method_id();
            let spectrum = eigendecompose(&l)?;
            let mut matched = vec![None; spectrum.eigenvalues.len()];
            let mut mae_line = None;
            if let Some(cfg) = &cfg {
                let reference = cfg.reference_spectrum()?;
                let n_match = cfg.n_match(l.len())?;
                let m = match_and_mae(
                    &reference,
                    &spectrum.eigenvalues,
                    n_match,
                    cfg.spectrum.matching,
                )?;
                let mut sorted = reference.clone();
                sorted.sort_by(rtedmd_core::linalg::spectral_order);
                for &(t, e) in &m.pairs {
                    matched[e] = Some(sorted[t]);
                }
                mae_line = Some(format!("{method},{n_match},{:?}\n", m.mae));
            }
            let mut csv = String::from("index,re,im,ref_re,ref_im,abs_err\n");
            for (k, (v, r)) in spectrum.eigenvalues.iter().zip(&matched).enumerate() {
                match r {
                    Some(r) => csv.push_str(&format!(
                        "{k},{:?},{:?},{:?},{:?},{:?}\n",
                        v.re,
                        v.im,
                        r.re,
                        r.im,
                        (v - r).norm()
                    )),
                    None => csv.push_str(&format!("{k},{:?},{:?},,,\n", v.re, v.im)),
                }
            }
            write(dir.join(format!("spectrum_{method}.csv")), &csv)?;
            match mae_line {
                Some(line) => {
                    write(
                        dir.join(format!("mae_{method}.csv")),
                        &format!("method,n_match,mae\n{line}"),
                    )?;
                    print!("{line}");
                }
                None => warn!("no --config given; eigenvalues written without scoring"),
            }
        }
        Command::Sysid { common, generator } => {
            let cfg = common.load()?;
            let dir = common.out_dir(Some(&cfg));
            let id = identify(&cfg, generator.as_deref())?;
            for f in write_identified(&id, None, &dir)? {
                println!("{}", f.display());
            }
            print!("{}", id.report());
        }
        Command::Reconstruct { common, generator } => {
            let cfg = common.load()?;
            let dir = common.out_dir(Some(&cfg));
            let id = identify(&cfg, generator.as_deref())?;
            let (reference, recon, err) = reconstruct(&cfg, &id)?;
            let note = format!(
                "reconstruction mean abs error {:e}, max {:e}",
                err.mean_abs, err.max_abs
            );
            write_identified(&id, Some(&note), &dir)?;
            write_reconstruction(&reference, &recon, &dir)?;
            println!("{note}");
        }
        Command::Experiment(exp) => match exp {
            Experiment::Ou(common) => {
                let cfg = common.load()?;
                let out = run_ou_experiment(&cfg, &common.out_dir(Some(&cfg)))?;
                print_summary(&out.report);
            }
            Experiment::Lv(common) => {
                let cfg = common.load()?;
                let out = run_lv_experiment(&cfg, &common.out_dir(Some(&cfg)))?;
                print_summary(&out.report);
            }
            Experiment::Ablation(common) => {
                let cfg = common.load()?;
                let dir = common.out_dir(Some(&cfg));
                let report = run_filtered_resolvent_ablation(&cfg, Some(&dir))?;
                print!("{}", report.csv());
            }
        },
    }
    Ok(())
}

fn print_summary(report: &rtedmd_core::experiments::SweepReport) {
    println!("method,frequency,paths_per_state,median_mae,failed");
    for (m, f, j) in report.groups() {
        let failed = report
            .records
            .iter()
            .filter(|r| {
                r.method == m && r.frequency == f && r.paths_per_state == j && r.mae().is_none()
            })
            .count();
        let median = report
            .median(&m, f, j)
            .map(|v| format!("{v:e}"))
            .unwrap_or_default();
        println!("{m},{f},{j},{median},{failed}");
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
