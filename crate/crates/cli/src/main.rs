use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use softavatar_cli::commands::{self, SimulateArgs};

#[derive(Parser)]
#[command(name = "softavatar", version, about = "Articulated and soft-tissue avatar simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic body file.
    Generate {
        /// Body description (TOML with `preset` or a `[body]` table).
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scene and write meshes and metrics.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Static solve per frame instead of dynamic steps.
        #[arg(long = "static")]
        static_mode: bool,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Run the numerical check suite; prints a JSON report.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random states per finite-difference check.
        #[arg(long, default_value_t = 20)]
        states: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time generation and stepping of the three models.
    Benchmark {
        /// Body file or body TOML; defaults to the humanoid preset.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { scene, out, seed } => {
            let c = commands::generate(scene.as_deref(), &out, seed)?;
            println!(
                "bones {} tet_vertices {} tets {} surface_vertices {} surface_triangles {}",
                c.bones, c.tet_vertices, c.tets, c.surface_vertices, c.surface_triangles
            );
            Ok(true)
        }
        Command::Simulate {
            scene,
            out,
            seed,
            static_mode,
            frames,
        } => {
            let s = commands::simulate(
                &scene,
                &SimulateArgs {
                    out,
                    seed,
                    static_mode,
                    frames,
                },
            )?;
            let failed = s.frames.iter().filter(|f| !f.converged).count();
            println!("wrote {} frames to {} ({failed} not converged)", s.frames.len(), s.out.display());
            Ok(true)
        }
        Command::Validate { seed, states, out } => {
            let report = commands::validate(seed, states)?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(p) = out {
                std::fs::write(p, &json)?;
            }
            println!("{json}");
            Ok(report.all_passed())
        }
        Command::Benchmark { scene, frames, seed, out } => {
            let table = commands::benchmark(scene.as_deref(), frames, seed, out.as_deref())?;
            print!("{}", table.to_text());
            let step = table.step_order_holds();
            let generation = table.generation_order_holds();
            println!("step order articulated < rom < fem: {}", if step { "ok" } else { "violated" });
            println!("generation order articulated < fem < rom: {}", if generation { "ok" } else { "violated" });
            println!("rom speedup over fem: {:.1}x", table.reduced_speedup());
            Ok(step && generation)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
