use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seaplan::scenario::{
    EXIT_ERROR, EXIT_FLAGGED, EXIT_OK, Overrides, RunConfig, exit_code, load_config, run, summary,
    synth_terrain_file, validate_file,
};

#[derive(Debug, Parser)]
#[command(name = "seaplan", version, about = "Plan surface and underwater vehicle missions over a known seafloor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Args)]
struct Flags {
    /// Override the scenario seed (the terrain seed for synth-terrain).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of chained horizons.
    #[arg(long, global = true)]
    horizons: Option<usize>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan a mission and write its artifacts.
    Plan { config: PathBuf },
    /// Plan the first horizon and the sampling baseline side by side.
    Compare { config: PathBuf },
    /// Write the configured synthetic terrain.
    SynthTerrain { config: PathBuf },
    /// Re-check a written trajectory file.
    Validate { trajectory: PathBuf, config: PathBuf },
}

fn load(path: &PathBuf, flags: &Flags, synth_seed: bool) -> Result<RunConfig, String> {
    let mut cfg = load_config(path).map_err(|e| e.to_string())?;
    let mut o = Overrides {
        seed: flags.seed,
        out: flags.out.clone(),
        horizons: flags.horizons,
    };
    if synth_seed {
        if let (Some(seed), Some(sy)) = (o.seed.take(), cfg.terrain.synth.as_mut()) {
            sy.seed = seed;
        }
    }
    cfg.apply(&o).map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<i32, String> {
    let flags = &cli.flags;
    match &cli.command {
        Command::Plan { config } | Command::Compare { config } => {
            let mut cfg = load(config, flags, false)?;
            if matches!(cli.command, Command::Compare { .. }) {
                cfg.compare.enabled = true;
                cfg.validate().map_err(|e| e.to_string())?;
            }
            let result = run(&cfg);
            match &result {
                Ok(outcome) => {
                    if !flags.quiet {
                        print!("{}", summary(outcome));
                    }
                    for h in &outcome.mission.horizons {
                        for f in &h.flags {
                            eprintln!("flag: {f}");
                        }
                    }
                }
                Err(e) => return Err(e.to_string()),
            }
            Ok(exit_code(&result))
        }
        Command::SynthTerrain { config } => {
            let cfg = load(config, flags, true)?;
            let path = synth_terrain_file(&cfg).map_err(|e| e.to_string())?;
            if !flags.quiet {
                println!("{}", path.display());
            }
            Ok(EXIT_OK)
        }
        Command::Validate { trajectory, config } => {
            let cfg = load(config, flags, false)?;
            let reports = validate_file(trajectory, &cfg).map_err(|e| e.to_string())?;
            let all_pass = reports.iter().all(|(_, r)| r.all_pass());
            for (h, r) in &reports {
                if !flags.quiet || !r.all_pass() {
                    println!("horizon {h}");
                    print!("{}", r.to_table());
                }
            }
            Ok(if all_pass { EXIT_OK } else { EXIT_FLAGGED })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = execute(&cli).unwrap_or_else(|msg| {
        eprintln!("seaplan: {msg}");
        EXIT_ERROR
    });
    ExitCode::from(code as u8)
}
