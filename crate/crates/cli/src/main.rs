//! `cspt`: indices of catalog or saved states, parent Hamiltonians, exact
//! diagonalisation, iTEBD runs and (λ, U) phase-diagram sweeps.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use cspt::ed::ground_from_spectrum;
use cspt::itebd::{find_ground_states, write_residual_csv, EvolutionConfig};
use cspt::mps::UnitCellMps;
use cspt::parent::{assemble_dense, dump_terms, hamiltonian_spec};
use cspt::spt::{classify_pair, es_doublet_split, extract_indices, IndexReport};
use cspt::sweep::{self, SweepConfig};
use cspt::symmetry::{catalog_state, StateName};

#[derive(Parser)]
#[command(name = "cspt", version, about = "Composite SPT phases of non-Hermitian spin-1 chains")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// SPT indices (ω, β, γ(gx), γ(gz)) of a catalog state or a saved MPS.
    Indices {
        /// Catalog name (psi0, psix, psiy, psiz, trivial) or MPS file.
        state: String,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Build the parent Hamiltonian H(λ, U) and report its local terms.
    Parent {
        #[command(flatten)]
        point: Point,
        /// Print every local term as JSON.
        #[arg(long)]
        dump: bool,
    },
    /// Dense biorthogonal exact diagonalisation on N sites.
    Ed {
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        point: Point,
        /// Periodic boundary conditions.
        #[arg(long)]
        pbc: bool,
        /// Write the full spectrum as CSV.
        #[arg(long)]
        spectrum: Option<PathBuf>,
    },
    /// Biorthogonal iTEBD for the left and right ground states.
    Evolve {
        #[command(flatten)]
        point: Point,
        #[command(flatten)]
        evolution: EvolutionArgs,
        /// Save the right ground state here.
        #[arg(long)]
        save_right: Option<PathBuf>,
        /// Save the left ground state here.
        #[arg(long)]
        save_left: Option<PathBuf>,
        /// Write the residual history as CSV.
        #[arg(long)]
        residuals: Option<PathBuf>,
    },
    /// Phase-diagram sweep from a TOML configuration.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Redraw the SVG maps from a sweep's CSV or JSON output.
    Plot {
        #[arg(long)]
        input: PathBuf,
        /// Directory for the SVG files (defaults to the input's directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Point {
    #[arg(long, allow_negative_numbers = true)]
    lambda: f64,
    #[arg(long, allow_negative_numbers = true)]
    u: f64,
}

#[derive(Args)]
struct EvolutionArgs {
    /// TOML file with evolution settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bond_dim: Option<usize>,
    #[arg(long)]
    dtau: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trotter scheme (first-order, second-order).
    #[arg(long)]
    trotter: Option<String>,
    /// Initial state (random or a catalog name).
    #[arg(long)]
    init: Option<String>,
    /// Truncation scheme (svd, multiplet).
    #[arg(long)]
    truncation: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    resume: Option<PathBuf>,
}

/// Error kinds mapped to the exit codes 2 (usage) and 1 (computation).
enum Failure {
    Usage(String),
    Compute(cspt::Error),
}

impl From<cspt::Error> for Failure {
    fn from(e: cspt::Error) -> Self {
        match e {
            cspt::Error::Config(_) | cspt::Error::Unknown { .. } => Failure::Usage(e.to_string()),
            e => Failure::Compute(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Compute(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Indices { state, json } => indices(&state, json),
        Command::Parent { point, dump } => parent(&point, dump),
        Command::Ed {
            n,
            point,
            pbc,
            spectrum,
        } => ed(n, &point, pbc, spectrum.as_deref()),
        Command::Evolve {
            point,
            evolution,
            save_right,
            save_left,
            residuals,
        } => evolve(&point, &evolution, save_right, save_left, residuals),
        Command::Sweep { config } => sweep_cmd(&config),
        Command::Plot { input, output } => plot(&input, output),
    }
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("no such file: {}", path.display())))
    }
}

fn signs_row(r: &IndexReport) -> String {
    let s = r.signs();
    format!(
        "{:+} {:+} {:+} {:+}",
        s.omega, s.beta, s.gamma_gx, s.gamma_gz
    )
}

fn indices(state: &str, json: bool) -> Outcome {
    let mps = match StateName::from_str(state) {
        Ok(name) => UnitCellMps::from_tensor(&catalog_state(name).tensor(), 1)?,
        Err(_) => {
            let path = Path::new(state);
            require_file(path)?;
            UnitCellMps::read_from(&mut BufReader::new(File::open(path)?))?
        }
    };
    let report = extract_indices(&mps)?;
    if json {
        println!("{}", report.to_json()?);
        return Ok(());
    }
    println!("omega beta gamma_gx gamma_gz");
    println!("{}", signs_row(&report));
    let raw = |v: &cspt::spt::IndexValue| format!("{:+.9}{:+.9}i", v.raw.re, v.raw.im);
    println!(
        "raw: {} {} {} {}",
        raw(&report.omega),
        raw(&report.beta),
        raw(&report.gamma_gx),
        raw(&report.gamma_gz)
    );
    println!("max distance from ±1: {:.3e}", report.max_distance());
    Ok(())
}

fn parent(point: &Point, dump: bool) -> Outcome {
    let spec = hamiltonian_spec(point.lambda, point.u)?;
    if dump {
        println!("{}", dump_terms(&spec)?);
        return Ok(());
    }
    let local = spec.local_term();
    println!("lambda = {}, U = {}, span = {}", spec.lambda, spec.u_strength, spec.k);
    for (name, c) in [("Pi(psi0,psi0)", &spec.condition_00), ("Pi(psix,psi0)", &spec.condition_x0)] {
        println!(
            "{name}: metric rank {}/{}, condition number {:.3e}",
            c.rank,
            c.dim,
            c.condition_number()
        );
    }
    println!("local term {}x{}, hermitian: {}", local.matrix.nrows(), local.matrix.ncols(), local.matrix.is_hermitian(1e-12));
    Ok(())
}

fn ed(n: usize, point: &Point, pbc: bool, spectrum: Option<&Path>) -> Outcome {
    let spec = hamiltonian_spec(point.lambda, point.u)?;
    let h = assemble_dense(&spec, n, pbc)?;
    let full = cspt::ed::full_spectrum(&h)?;
    let g = ground_from_spectrum(&full);
    println!(
        "N = {n} ({}), lambda = {}, U = {}",
        if pbc { "periodic" } else { "open" },
        point.lambda,
        point.u
    );
    println!("E0 = {:.12} {:+.3e}i", g.energy.re, g.energy.im);
    println!("E0 / N = {:.12}", g.energy.re / n as f64);
    println!("ground manifold dimension = {}", g.manifold.len());
    println!("real gap = {:.6e}", g.gap_real);
    if full.exceptional_point {
        println!("warning: spectrum is close to an exceptional point");
    }
    if let Some(path) = spectrum {
        full.write_csv(BufWriter::new(File::create(path)?))?;
    }
    Ok(())
}

fn evolution_config(args: &EvolutionArgs) -> Result<EvolutionConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            require_file(path)?;
            toml_evolution(&fs::read_to_string(path)?)?
        }
        None => EvolutionConfig::default(),
    };
    macro_rules! set {
        ($($field:ident <- $arg:expr),* $(,)?) => {
            $(if let Some(v) = $arg.clone() { cfg.$field = v; })*
        };
    }
    set!(
        bond_dim <- args.bond_dim,
        dtau <- args.dtau,
        epsilon <- args.epsilon,
        max_steps <- args.max_steps,
        seed <- args.seed,
        trotter <- args.trotter,
        init <- args.init,
        truncation <- args.truncation,
        checkpoint_every <- args.checkpoint_every,
    );
    if args.checkpoint.is_some() {
        cfg.checkpoint_path = args.checkpoint.clone();
    }
    if args.resume.is_some() {
        cfg.resume_from = args.resume.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Accepts either a bare evolution table or a sweep file's `[evolution]`.
fn toml_evolution(text: &str) -> Result<EvolutionConfig, Failure> {
    if text.lines().any(|l| l.trim() == "[evolution]") {
        Ok(SweepConfig::from_toml(text)?.evolution)
    } else {
        Ok(EvolutionConfig::from_toml(text)?)
    }
}

fn evolve(
    point: &Point,
    args: &EvolutionArgs,
    save_right: Option<PathBuf>,
    save_left: Option<PathBuf>,
    residuals: Option<PathBuf>,
) -> Outcome {
    let cfg = evolution_config(args)?;
    let spec = hamiltonian_spec(point.lambda, point.u)?;
    let run = find_ground_states(&spec, &cfg)?;
    for (path, state) in [(save_right, &run.right), (save_left, &run.left)] {
        if let Some(p) = path {
            state.write_to(&mut BufWriter::new(File::create(p)?))?;
        }
    }
    if let Some(p) = residuals {
        write_residual_csv(&run.residual_history, BufWriter::new(File::create(p)?))?;
    }
    println!(
        "steps = {}, converged = {}, verdicts (L, R) = ({:?}, {:?})",
        run.steps_used, run.converged, run.verdict_left.verdict, run.verdict_right.verdict
    );
    println!(
        "energy per site = {:.12} {:+.3e}i",
        run.energy_per_site.re, run.energy_per_site.im
    );
    println!(
        "ES doublet split (L, R) = ({:.3e}, {:.3e})",
        es_doublet_split(&run.left),
        es_doublet_split(&run.right)
    );
    let left = extract_indices(&run.left);
    let right = extract_indices(&run.right);
    for (side, r) in [("L", &left), ("R", &right)] {
        match r {
            Ok(r) => println!("{side}: omega beta gamma_gx gamma_gz = {}", signs_row(r)),
            Err(e) => println!("{side}: indices unavailable ({e})"),
        }
    }
    let label = match (&left, &right) {
        _ if !run.converged => "unconverged".to_string(),
        (Ok(l), Ok(r)) => classify_pair(l, r).to_string(),
        _ => "unclassified".to_string(),
    };
    println!("label = {label}");
    Ok(())
}

fn sweep_cmd(config: &Path) -> Outcome {
    require_file(config)?;
    let cfg = SweepConfig::load(config)?;
    let (points, files) = sweep::run_sweep(&cfg)?;
    for p in &points {
        println!("{:>6} {:>6}  {}", p.lambda, p.u, p.phase_label);
    }
    println!("wrote {} and {}", files.csv.display(), files.json.display());
    if let (Some(a), Some(b)) = (&files.phase_svg, &files.residual_svg) {
        println!("wrote {} and {}", a.display(), b.display());
    }
    Ok(())
}

fn plot(input: &Path, output: Option<PathBuf>) -> Outcome {
    require_file(input)?;
    let reader = BufReader::new(File::open(input)?);
    let points = if input.extension().is_some_and(|e| e == "json") {
        sweep::read_json(reader)?
    } else {
        sweep::points_from_csv(&sweep::read_csv(reader)?)
    };
    let maps = sweep::emit_svg(&points)?;
    let dir = output.unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&dir)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("phase");
    let phase = dir.join(format!("{stem}.svg"));
    let residual = dir.join(format!("{stem}-residual.svg"));
    fs::write(&phase, maps.phase)?;
    fs::write(&residual, maps.residual)?;
    println!("wrote {} and {}", phase.display(), residual.display());
    Ok(())
}
