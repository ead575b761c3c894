mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use electrolyte::fem::SpeciesVariables;
use electrolyte::scenario::{
    load_preset, preset_names, BiasUnits, Bulk, CapacitanceSpec, CompareSpec, ConvergenceSpec, Geometry, RunKind,
    Scenario, ScenarioError,
};

/// Stationary electrolyte solver: potential, pressure and mole fractions
/// near electrodes and in 2D channels.
#[derive(Parser)]
#[command(name = "electrolyte", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario as described by its `kind`.
    Run(RunArgs),
    /// List the embedded presets.
    PresetList,
    /// Sweep the electrode potential and write Q and C_dl.
    Capacitance(RunArgs),
    /// Mesh convergence study against a fine reference solution.
    Convergence(RunArgs),
    /// Full model next to the classical Poisson-Boltzmann model.
    CompareNp(RunArgs),
    /// 2D diode channel with surface-charge stripes.
    Diode2d(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Embedded preset name (see `preset-list`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Scenario TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Applied bias.
    #[arg(long, allow_hyphen_values = true)]
    bias: Option<f64>,
    /// Unit of the bias: thermal (kT/e) or volts.
    #[arg(long, value_parser = ["thermal", "volts"])]
    bias_units: Option<String>,
    /// Bulk molarity (mol/L) of every charged species.
    #[arg(long)]
    molarity: Option<f64>,
    /// Solvation number of every ion.
    #[arg(long)]
    kappa: Option<f64>,
    /// Bulk modulus; makes the mixture compressible.
    #[arg(long)]
    bulk_modulus: Option<f64>,
    /// Number of cells of the 1D mesh.
    #[arg(long)]
    cells: Option<usize>,
    /// Newton damping factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Charged-species unknowns: log-ratio or mole-fraction.
    #[arg(long, value_parser = ["log-ratio", "mole-fraction"])]
    species_variables: Option<String>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_IO: u8 = 4;

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn scenario_error(e: ScenarioError) -> ExitCode {
    let code = match e {
        ScenarioError::Solver { .. } => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    };
    fail(code, e)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, kind) = match cli.command {
        Command::PresetList => {
            for name in preset_names() {
                let s = load_preset(&name).expect("embedded presets are valid");
                println!("{name:<22} {:?}", s.kind);
            }
            return ExitCode::SUCCESS;
        }
        Command::Run(a) => (a, None),
        Command::Capacitance(a) => (a, Some(RunKind::Capacitance)),
        Command::Convergence(a) => (a, Some(RunKind::Convergence)),
        Command::CompareNp(a) => (a, Some(RunKind::CompareNp)),
        Command::Diode2d(a) => (a, Some(RunKind::Diode2d)),
    };
    let scenario = match build_scenario(&args, kind) {
        Ok(s) => s,
        Err(e) => return scenario_error(e),
    };
    let start = Instant::now();
    let out = match scenario.execute() {
        Ok(o) => o,
        Err(e) => return scenario_error(e),
    };
    let wall = start.elapsed().as_secs_f64();
    match output::write_all(&args.out, &scenario, &out, wall) {
        Ok(files) => {
            println!("{} ({:?}) finished in {wall:.2} s", scenario.name, scenario.kind);
            for f in files {
                println!("  {}", args.out.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_IO, e),
    }
}

fn config(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Config(msg.into())
}

fn build_scenario(args: &RunArgs, kind: Option<RunKind>) -> Result<Scenario, ScenarioError> {
    let mut s = match (&args.preset, &args.config) {
        (Some(name), _) => load_preset(name)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
            Scenario::from_toml(&text)?
        }
        (None, None) if kind == Some(RunKind::Diode2d) => load_preset("diode")?,
        (None, None) if kind == Some(RunKind::Capacitance) => load_preset("capacitance")?,
        (None, None) if kind == Some(RunKind::CompareNp) => load_preset("ternary-np-compare")?,
        (None, None) => load_preset("ternary-default")?,
    };
    if let Some(kind) = kind {
        s.kind = kind;
        match kind {
            RunKind::Capacitance if s.capacitance.is_none() => {
                s.capacitance = Some(CapacitanceSpec {
                    min: -10.0,
                    max: 10.0,
                    step: 0.1,
                })
            }
            RunKind::Convergence if s.convergence.is_none() => {
                s.convergence = Some(ConvergenceSpec {
                    cells: vec![128, 256, 512, 1024, 2048],
                    reference: 65536,
                })
            }
            RunKind::CompareNp if s.compare.is_none() => {
                s.compare = Some(CompareSpec {
                    kappas: vec![s.mixture.kappa],
                })
            }
            _ => {}
        }
    }
    if let Some(b) = args.bias {
        s.bias = b;
    }
    if let Some(u) = &args.bias_units {
        s.bias_units = if u == "volts" {
            BiasUnits::Volts
        } else {
            BiasUnits::Thermal
        };
    }
    if let Some(k) = args.kappa {
        s.mixture.kappa = k;
        if let Some(c) = &mut s.compare {
            if !c.kappas.contains(&k) {
                c.kappas = vec![k];
            }
        }
    }
    if let Some(k) = args.bulk_modulus {
        s.mixture.bulk_modulus = Some(k);
    }
    if let Some(g) = args.gamma {
        s.solver.gamma = g;
    }
    if let Some(v) = &args.species_variables {
        s.species_variables = if v == "mole-fraction" {
            SpeciesVariables::MoleFraction
        } else {
            SpeciesVariables::LogRatio
        };
    }
    match &mut s.geometry {
        Geometry::Channel { cells, bulk, .. } => {
            if let Some(n) = args.cells {
                *cells = n;
            }
            if let Some(m) = args.molarity {
                *bulk = Bulk::Molarity(m);
            }
        }
        Geometry::Diode { bath, .. } => {
            if args.cells.is_some() {
                return Err(config("--cells applies to 1D channels only"));
            }
            if let Some(m) = args.molarity {
                *bath = electrolyte::physics::molarity_to_fraction(m);
            }
        }
    }
    s.validate()?;
    Ok(s)
}
