use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use hires_bench::bench::{loglog_slope, run_bench, BenchSpec};
use hires_bench::commands::{ablate, flops_csv, generate, ABLATION_FILE};
use hires_bench::config::resolve;
use hires_bench::{with_threads, ConfigError};
use hires_core::flops::{FlopsParams, Method};

#[derive(Parser)]
#[command(name = "hires", version, about = "Training-free high-resolution diffusion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shipped preset to use instead of a config file.
    #[arg(long, value_parser = ["sdxl-like", "flux-like"])]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; does not affect results.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the multi-stage pipeline and write latents, pixmaps and a manifest.
    Generate(RunArgs),
    /// Run the 2x2 LFM/SG ablation grid.
    Ablate(RunArgs),
    /// Time one denoiser forward per mode and scale; write CSV.
    Bench {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        scales: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, value_delimiter = ',', default_value = "base,multidiffusion,npa")]
        modes: Vec<Method>,
        #[arg(long, default_value_t = 32)]
        native: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Print analytic per-class costs for all three methods as CSV.
    Flops {
        #[arg(long, default_value_t = 2)]
        s: u64,
        #[arg(long, default_value_t = 16)]
        h: u64,
        #[arg(long, default_value_t = 16)]
        w: u64,
        #[arg(long, default_value_t = 8)]
        d: u64,
        #[arg(long, default_value_t = 3)]
        k: u64,
        #[arg(long, default_value_t = 4)]
        l: u64,
        /// Report FLOPs (two per multiply-accumulate) instead of MACs.
        #[arg(long)]
        flops: bool,
        /// Also write flops.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let cfg = resolve(a.config.as_deref(), a.preset.as_deref(), a.seed)?;
            let (manifest, _) = with_threads(a.threads, || generate(&cfg, &a.out))??;
            for st in &manifest.stages {
                eprintln!(
                    "stage {} ({}x{}): {:.3}s -> {}",
                    st.index, st.height, st.width, st.seconds, st.latent
                );
            }
            eprintln!("wrote {} files to {}", manifest.files.len(), a.out.display());
        }
        Command::Ablate(a) => {
            let cfg = resolve(a.config.as_deref(), a.preset.as_deref(), a.seed)?;
            let report = with_threads(a.threads, || ablate(&cfg, &a.out))??;
            eprintln!("wrote {}", a.out.join(ABLATION_FILE).display());
            if !report.shared_stage0 {
                bail!("ablation runs do not share the stage-0 latent");
            }
            if !report.identical_pairs.is_empty() {
                bail!("bitwise identical outputs: {:?}", report.identical_pairs);
            }
            eprintln!("four distinct outputs; low-band distance {:.3e}", report.low_band_distance);
        }
        Command::Bench {
            out,
            scales,
            repeats,
            modes,
            native,
            hidden,
            seed,
            threads,
        } => {
            let spec = BenchSpec {
                native,
                hidden,
                scales,
                repeats,
                modes,
                seed,
                ..Default::default()
            };
            std::fs::create_dir_all(&out)?;
            let path = out.join("bench.csv");
            let mut file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            let outcome = with_threads(Some(threads), || run_bench(&spec, &mut file, true))??;
            if let Some(row) = &outcome.noisy {
                bail!(
                    "timing too noisy at {} s={} (spread {:.2} of median); partial CSV kept at {}",
                    row.mode,
                    row.s,
                    row.spread,
                    path.display()
                );
            }
            let fit: Vec<usize> = spec.scales.iter().copied().filter(|&s| s >= 2).collect();
            for m in &spec.modes {
                if let Some(slope) = loglog_slope(&outcome.rows, *m, &fit) {
                    eprintln!("{m}: log-log slope {slope:.3} over s = {fit:?}");
                }
            }
            eprintln!("wrote {}", path.display());
        }
        Command::Flops {
            s,
            h,
            w,
            d,
            k,
            l,
            flops,
            out,
        } => {
            let text = flops_csv(FlopsParams { s, h, w, d, k, l }, flops);
            print!("{text}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("flops.csv"), &text)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
