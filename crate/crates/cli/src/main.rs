//! `swrc`: run reservoir experiments and render their outputs.
//!
//! Exit status: 0 on success, 1 when the configuration or arguments are
//! invalid, 2 when a run fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use swrc_core::experiment::{self, ExperimentReport};
use swrc_core::io::{self, Heatmap};
use swrc_core::{Error, ExperimentConfig, Profile};

#[derive(Debug, Parser)]
#[command(name = "swrc", version, about = "Spin-wave reservoir computing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file; keys not given take the profile defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Parameter profile, overriding the config file's.
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
    /// Master seed for schedules and random layouts.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads for the field sweep (0: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Drive the relaxed film and write s_x snapshots.
    Simulate(Common),
    /// Train and test one readout on the configured layout.
    Classify(Common),
    /// Electrode-count sweep over arrangements.
    Sweep(Common),
    /// Compartment sweep.
    Compartments(Common),
    /// Train at two frequencies, test across a frequency range.
    Freqgen(Common),
    /// Re-render a heatmap from a weights CSV or a snapshot file.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Weights CSV written by `classify`.
    #[arg(long, conflicts_with = "snapshot", required_unless_present = "snapshot")]
    weights: Option<PathBuf>,
    /// Binary snapshot file written by `simulate`.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Output image (default: input path with a .ppm extension).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: swrc_core::ConfigError| e.to_string())
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, self.profile)?,
            None => ExperimentConfig::profile(self.profile.unwrap_or_default()),
        };
        if let Some(s) = self.seed {
            cfg.experiment.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.integrator.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, name: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| Path::new("runs").join(name))
    }
}

fn print_aggregates(report: &ExperimentReport) {
    println!(
        "{:<14} {:>5} {:>8} {:>7} {:>5} {:>17} {:>17}",
        "arrangement", "n_o", "f (GHz)", "wave", "runs", "rmse", "correct rate"
    );
    for a in &report.aggregates {
        println!(
            "{:<14} {:>5} {:>8.3} {:>7} {:>5} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}",
            a.arrangement, a.n_o, a.frequency_ghz, a.waveform, a.runs, a.rmse_mean, a.rmse_std, a.rate_mean, a.rate_std
        );
    }
}

fn render(args: &RenderArgs) -> Result<(), Error> {
    if let Some(w) = &args.weights {
        let rows = io::read_weights(w)?;
        let out = args.out.clone().unwrap_or_else(|| w.with_extension("ppm"));
        let map = Heatmap::from_weights(&rows)?;
        map.write_ppm(&out)?;
        println!("{} ({}×{})", out.display(), map.width, map.height);
    }
    if let Some(s) = &args.snapshot {
        let frames = io::read_snapshots(s)?;
        for f in &frames {
            let out = match &args.out {
                Some(o) if frames.len() == 1 => o.clone(),
                Some(o) => o.with_file_name(format!("{}_{:06}.ppm", stem(o), f.frame_index)),
                None if frames.len() == 1 => s.with_extension("ppm"),
                None => s.with_file_name(format!("{}_{:06}.ppm", stem(s), f.frame_index)),
            };
            Heatmap::from_frame(f).write_ppm(&out)?;
            io::write_frame_csv(&out.with_extension("csv"), f)?;
            println!("{} ({}×{})", out.display(), f.nx, f.ny);
        }
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.config()?;
            let out = c.out_dir("simulate");
            let frames = experiment::simulate_snapshots(&cfg, Some(&out))?;
            println!("wrote {} frames to {}", frames.len(), out.join("snapshots").display());
        }
        Command::Classify(c) => {
            let cfg = c.config()?;
            let out = c.out_dir("classify");
            let (run, _) = experiment::classify(&cfg, Some(&out))?;
            let r = &run.record;
            println!("{} n_o = {}: test rmse {:.4}, correct rate {:.4} (steady {:.4})", r.arrangement, r.n_o, r.rmse, r.correct_rate, r.correct_rate_steady);
            println!("train rmse {:.4}, correct rate {:.4}", r.train_rmse, r.train_correct_rate);
            println!("corr(|W|, mean envelope) = {:.4}", experiment::weight_texture_correlation(&run));
            println!("results in {}", out.display());
        }
        Command::Sweep(c) => {
            let cfg = c.config()?;
            let out = c.out_dir("sweep");
            print_aggregates(&experiment::sweep_electrode_count(&cfg, Some(&out))?);
            println!("results in {}", out.display());
        }
        Command::Compartments(c) => {
            let cfg = c.config()?;
            let out = c.out_dir("compartments");
            print_aggregates(&experiment::sweep_compartments(&cfg, Some(&out))?);
            println!("results in {}", out.display());
        }
        Command::Freqgen(c) => {
            let cfg = c.config()?;
            let out = c.out_dir("freqgen");
            print_aggregates(&experiment::frequency_generalization(&cfg, Some(&out))?);
            println!("results in {}", out.display());
        }
        Command::Render(r) => render(&r)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    info!("{}", experiment::VERSION);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
