use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mftransfer::meanfield::SpatialFactor;
use mftransfer::ulam::StochasticMatrix;
use mftransfer::{Error, Result};
use mftransfer_cli::config::ExperimentConfig;
use mftransfer_cli::formats::{GridDump, Provenance};
use mftransfer_cli::run::{self, Setup};
use mftransfer_cli::{exit_code, EXIT_OK};
use tracing::{info, warn};

/// Transfer-operator eigenpairs of molecular models, full and mean-field.
///
/// Exit codes: 0 success, 1 I/O or file format, 2 configuration, 3 model,
/// 4 assembly, 5 spectral solver, 6 comparison.
#[derive(Parser)]
#[command(name = "mftransfer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the full spatial transfer operator.
    AssembleFull(Common),
    /// Dominant eigenpairs of a stored matrix.
    Eigs {
        #[command(flatten)]
        common: Common,
        /// Triplet file written by assemble-full or assemble-mf.
        #[arg(long)]
        matrix: PathBuf,
        /// Subsystem whose partition the matrix lives on (full space if omitted).
        #[arg(long)]
        subsystem: Option<usize>,
    },
    /// Self-consistent mean-field iteration; writes factors per sweep.
    Roothaan(Common),
    /// Component maps for fixed factors (initial marginals if none are given).
    AssembleMf {
        #[command(flatten)]
        common: Common,
        /// Directory holding mf_w<i>.grid factor files.
        #[arg(long)]
        factors: Option<PathBuf>,
    },
    /// Compare mean-field products with full eigenvectors.
    Compare {
        #[arg(long)]
        full: PathBuf,
        #[arg(long)]
        mf: PathBuf,
        #[arg(long, env = "MFTRANSFER_OUT")]
        out: Option<PathBuf>,
    },
    /// Full and mean-field runs plus comparison for united-atom butane.
    RunPaperButane(Common),
    /// Full and mean-field runs plus comparison for the coupled 2D double well.
    #[command(name = "run-paper-2d")]
    RunPaper2d(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment config; its values take precedence over flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// butane | double_well_2d
    #[arg(long)]
    preset: Option<String>,
    /// Integration time in model units, or seconds with an `s` suffix.
    #[arg(long = "T")]
    t_final: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    /// euler | rk4 | velocity-verlet
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Kelvin.
    #[arg(long)]
    temperature: Option<f64>,
    /// Samples per cell for the full operator.
    #[arg(long = "K")]
    samples: Option<usize>,
    /// Samples per cell for the mean-field component maps.
    #[arg(long)]
    mf_samples: Option<usize>,
    /// Cells per axis: one number for all axes or a comma-separated list.
    #[arg(long)]
    grid: Option<String>,
    /// Mean-field sweeps.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    eigenpairs: Option<usize>,
    /// Worker threads (all cores if omitted).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, env = "MFTRANSFER_OUT")]
    out: Option<PathBuf>,
}

impl Common {
    fn has_overrides(&self) -> bool {
        self.preset.is_some()
            || self.t_final.is_some()
            || self.steps.is_some()
            || self.scheme.is_some()
            || self.seed.is_some()
            || self.temperature.is_some()
            || self.samples.is_some()
            || self.mf_samples.is_some()
            || self.grid.is_some()
            || self.iters.is_some()
            || self.eigenpairs.is_some()
    }

    fn resolve(&self, default_preset: &str) -> Result<ExperimentConfig> {
        if let Some(path) = &self.config {
            if self.has_overrides() {
                warn!("--config given; parameter flags are ignored");
            }
            return ExperimentConfig::load(path);
        }
        let mut cfg = ExperimentConfig::preset(self.preset.as_deref().unwrap_or(default_preset))?;
        if let Some(s) = &self.scheme {
            cfg.set_scheme(s)?;
        }
        if let Some(n) = self.steps {
            cfg.integrator.steps = n;
        }
        if let Some(t) = &self.t_final {
            cfg.set_time(t)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.temperature {
            cfg.temperature = Some(t);
            cfg.beta = None;
        }
        if let Some(k) = self.samples {
            cfg.samples = k;
        }
        if let Some(k) = self.mf_samples {
            cfg.mf_samples = k;
        }
        if let Some(g) = &self.grid {
            let cells: Vec<usize> = g
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("cannot parse grid {g:?}")))?;
            cfg.grid = if cells.len() == 1 {
                vec![cells[0]; cfg.grid.len()]
            } else {
                cells
            };
        }
        if let Some(n) = self.iters {
            cfg.roothaan_iters = n;
        }
        if let Some(n) = self.eigenpairs {
            cfg.eigenpairs = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        run::output_dir(cfg, self.out.as_deref())
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn save_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut c = cfg.clone();
    c.output_dir = None;
    std::fs::write(dir.join("config.toml"), c.to_toml()?)?;
    Ok(())
}

fn load_factors(
    dir: &Path,
    system: &mftransfer::meanfield::MeanFieldSystem,
) -> Result<Vec<SpatialFactor>> {
    (0..system.n_subsystems())
        .map(|i| {
            let g = GridDump::load(&dir.join(format!("mf_w{i}.grid")))?;
            let part = &system.parts[i];
            if g.values.len() != part.n_cells() || g.shape != part.shape() {
                return Err(Error::Layout(format!(
                    "factor file for subsystem {i} does not match the grid"
                )));
            }
            SpatialFactor::new(i, part.clone(), g.values)
        })
        .collect()
}

fn pipeline_run(common: &Common, preset: &str) -> Result<()> {
    let cfg = common.resolve(preset)?;
    let dir = common.out_dir(&cfg);
    let full = run::run_full(&cfg)?;
    run::write_full(&cfg, &full, &dir)?;
    println!("full eigenvalues: {:?}", full.spectrum.real_values());
    let mf = run::run_meanfield(&cfg)?;
    run::write_meanfield(&cfg, &mf, &dir)?;
    for (i, c) in mf.components.iter().enumerate() {
        println!("component {i} eigenvalues: {:?}", c.real_values());
    }
    let report = run::compare_runs(&full, &mf)?;
    let prov = Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    run::write_report(&report, prov.header(), &dir)?;
    print!("{}", report.render());
    info!(dir = %dir.display(), "artifacts written");
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::AssembleFull(c) => {
            init_threads(c.threads)?;
            let cfg = c.resolve("butane")?;
            let dir = c.out_dir(&cfg);
            let setup = Setup::new(&cfg)?;
            let p = run::assemble_full(&cfg, &setup)?;
            save_config(&cfg, &dir)?;
            p.save_triplets(&dir.join("full_matrix.txt"), &setup.provenance.header())?;
            println!("{}", dir.join("full_matrix.txt").display());
        }
        Command::Eigs {
            common,
            matrix,
            subsystem,
        } => {
            init_threads(common.threads)?;
            let cfg = common.resolve("butane")?;
            let dir = common.out_dir(&cfg);
            let setup = Setup::new(&cfg)?;
            let part = match subsystem {
                None => setup.part.clone(),
                Some(i) => run::meanfield_system(&cfg, &setup)?
                    .parts
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("no subsystem {i}")))?,
            };
            let p = StochasticMatrix::load_triplets(&matrix)?;
            if p.n() != part.n_cells() {
                return Err(Error::Config(format!(
                    "matrix of size {} does not fit a grid of {} cells",
                    p.n(),
                    part.n_cells()
                )));
            }
            let (spec, _) = run::eigs(&p, cfg.eigenpairs)?;
            let stem = matrix
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("matrix")
                .to_string();
            std::fs::create_dir_all(&dir)?;
            let header = setup.provenance.header();
            run::eigenvalue_table(header.clone(), &spec)
                .save(&dir.join(format!("{stem}_eigenvalues.csv")))?;
            for k in 0..spec.values.len() {
                let mut h = header.clone();
                h.push(("label".into(), format!("v{}", k + 1)));
                h.push(("eigenvalue".into(), format!("{:?}", spec.values[k].re)));
                GridDump::new(&part, spec.vectors[k].clone(), h)
                    .save(&dir.join(format!("{stem}_v{}.grid", k + 1)))?;
            }
            println!("eigenvalues: {:?}", spec.real_values());
        }
        Command::Roothaan(c) => {
            init_threads(c.threads)?;
            let cfg = c.resolve("butane")?;
            let dir = c.out_dir(&cfg);
            let setup = Setup::new(&cfg)?;
            let system = run::meanfield_system(&cfg, &setup)?;
            let res = run::roothaan(&cfg, &setup, &system)?;
            save_config(&cfg, &dir)?;
            run::write_factors(&cfg, &system, &res, &dir)?;
            run::write_components(&cfg, &res.matrices, &dir)?;
            println!("residuals: {:?}", res.residuals);
        }
        Command::AssembleMf { common, factors } => {
            init_threads(common.threads)?;
            let cfg = common.resolve("butane")?;
            let dir = common.out_dir(&cfg);
            let setup = Setup::new(&cfg)?;
            let system = run::meanfield_system(&cfg, &setup)?;
            let w = match &factors {
                Some(d) => load_factors(d, &system)?,
                None => system.initial_factors(2)?,
            };
            let matrices = (0..system.n_subsystems())
                .map(|i| {
                    system.assemble_component(i, &w, cfg.mf_samples, &cfg.integrator, &setup.rng)
                })
                .collect::<Result<Vec<_>>>()?;
            save_config(&cfg, &dir)?;
            run::write_components(&cfg, &matrices, &dir)?;
        }
        Command::Compare { full, mf, out } => {
            let report = run::compare_dirs(&full, &mf)?;
            let dir = out.unwrap_or_else(|| mf.clone());
            let pi = GridDump::load(&full.join("full_invariant.grid"))?;
            let header = pi
                .header
                .into_iter()
                .filter(|(k, _)| k == "config_hash" || k == "seed")
                .collect();
            run::write_report(&report, header, &dir)?;
            print!("{}", report.render());
        }
        Command::RunPaperButane(c) => {
            init_threads(c.threads)?;
            pipeline_run(&c, "butane")?;
        }
        Command::RunPaper2d(c) => {
            init_threads(c.threads)?;
            pipeline_run(&c, "double_well_2d")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let level = std::env::var("RUST_LOG")
        .ok()
        .and_then(|l| l.parse::<tracing::Level>().ok())
        .unwrap_or(tracing::Level::INFO);
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error (exit {code}): {e}");
            ExitCode::from(code as u8)
        }
    }
}
