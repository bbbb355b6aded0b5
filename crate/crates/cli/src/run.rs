//! Experiment drivers: full-operator runs, mean-field runs and their artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mftransfer::meanfield::{
    product_eigenfunction, product_eigenvalue, MeanFieldSystem, RoothaanOptions, RoothaanResult,
    SpatialFactor,
};
use mftransfer::model::{HamiltonianModel, ModelSpec};
use mftransfer::partition::TensorPartition;
use mftransfer::rng::RngSpec;
use mftransfer::sampling::CanonicalEnsemble;
use mftransfer::spectral::{
    almost_invariant_sets, dominant_eigs, invariance_ratio, invariant_vector, EigsOptions,
    SpectralResult,
};
use mftransfer::ulam::{assemble_full_spatial, StochasticMatrix};
use mftransfer::{Error, Result};
use tracing::{info, warn};

use crate::compare::{ComparisonReport, Eigenfunction};
use crate::config::ExperimentConfig;
use crate::formats::{GridDump, Provenance, Table};

/// Sub-cells per axis when integrating canonical cell masses for the initial factors.
const INITIAL_FACTOR_SUBDIVISION: usize = 2;

pub struct Setup {
    pub model: Arc<dyn HamiltonianModel>,
    pub ens: CanonicalEnsemble,
    pub part: TensorPartition,
    pub rng: RngSpec,
    pub provenance: Provenance,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.model.build();
        let ens = CanonicalEnsemble::new(model.clone(), cfg.beta()?, cfg.convention)?;
        let part = TensorPartition::from_domain(model.domain(), &cfg.grid)?;
        Ok(Self {
            model,
            ens,
            part,
            rng: RngSpec::new(cfg.seed),
            provenance: Provenance {
                config_hash: cfg.hash(),
                seed: cfg.seed,
            },
        })
    }
}

pub struct FullRun {
    pub part: TensorPartition,
    pub matrix: StochasticMatrix,
    pub spectrum: SpectralResult,
    /// Unit-mass invariant vector (cell masses).
    pub invariant: Vec<f64>,
}

impl FullRun {
    /// Non-trivial eigenvectors 2, 3, … as labelled eigenfunctions.
    pub fn eigenfunctions(&self) -> Vec<Eigenfunction> {
        (1..self.spectrum.values.len())
            .map(|k| Eigenfunction {
                label: format!("v{}", k + 1),
                value: self.spectrum.values[k].re,
                values: self.spectrum.vectors[k].clone(),
            })
            .collect()
    }
}

pub fn assemble_full(cfg: &ExperimentConfig, setup: &Setup) -> Result<StochasticMatrix> {
    info!(grid = ?cfg.grid, samples = cfg.samples, "assembling full spatial operator");
    let p = assemble_full_spatial(
        &setup.ens,
        &setup.part,
        cfg.samples,
        &cfg.integrator,
        &setup.rng,
    )?;
    if p.max_lost() > 0.0 {
        warn!(max_lost = p.max_lost(), "samples left the domain");
    }
    Ok(p)
}

pub fn eigs(matrix: &StochasticMatrix, k: usize) -> Result<(SpectralResult, Vec<f64>)> {
    let opts = EigsOptions::default();
    let k = k.min(matrix.n());
    let spectrum = dominant_eigs(matrix, k, &opts)?;
    let invariant = invariant_vector(matrix, &opts)?;
    Ok((spectrum, invariant))
}

pub fn run_full(cfg: &ExperimentConfig) -> Result<FullRun> {
    let setup = Setup::new(cfg)?;
    let matrix = assemble_full(cfg, &setup)?;
    let (spectrum, invariant) = eigs(&matrix, cfg.eigenpairs)?;
    info!(values = ?spectrum.real_values(), "full operator eigenvalues");
    Ok(FullRun {
        part: setup.part,
        matrix,
        spectrum,
        invariant,
    })
}

/// `(ρ(A⁺), ρ(A⁻))`: invariance ratios of the sign supports of `v`, weighted by |v|.
pub fn sign_set_invariance(p: &StochasticMatrix, v: &[f64]) -> Result<(f64, f64)> {
    let (plus, minus) = almost_invariant_sets(v, None)?;
    let w: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    Ok((
        invariance_ratio(p, &plus, &w)?,
        invariance_ratio(p, &minus, &w)?,
    ))
}

pub struct ProductRun {
    pub selection: Vec<usize>,
    pub label: String,
    pub value: f64,
    pub part: TensorPartition,
    pub values: Vec<f64>,
}

impl ProductRun {
    pub fn eigenfunction(&self) -> Eigenfunction {
        Eigenfunction {
            label: self.label.clone(),
            value: self.value,
            values: self.values.clone(),
        }
    }

    pub fn file_stem(&self) -> String {
        let s: Vec<String> = self.selection.iter().map(|k| k.to_string()).collect();
        format!("product_{}", s.join("-"))
    }
}

pub fn product_label(selection: &[usize]) -> String {
    selection
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            if k == 0 {
                format!("w{i}")
            } else {
                format!("v{i}.{}", k + 1)
            }
        })
        .collect::<Vec<_>>()
        .join(" x ")
}

pub struct MeanFieldRun {
    pub system: MeanFieldSystem,
    pub roothaan: RoothaanResult,
    pub components: Vec<SpectralResult>,
    pub products: Vec<ProductRun>,
}

pub fn meanfield_system(cfg: &ExperimentConfig, setup: &Setup) -> Result<MeanFieldSystem> {
    MeanFieldSystem::new(setup.ens.clone(), setup.part.clone(), cfg.table_refine)
}

pub fn roothaan(
    cfg: &ExperimentConfig,
    setup: &Setup,
    system: &MeanFieldSystem,
) -> Result<RoothaanResult> {
    let init = system.initial_factors(INITIAL_FACTOR_SUBDIVISION)?;
    let opts = RoothaanOptions {
        iters: cfg.roothaan_iters,
        samples: cfg.mf_samples,
        spec: cfg.integrator,
        order: cfg.sweep_order.clone(),
    };
    info!(
        iters = opts.iters,
        samples = opts.samples,
        "self-consistent mean-field iteration"
    );
    let res = system.roothaan(init, &opts, &setup.rng)?;
    if res.oscillating {
        warn!("mean-field iteration oscillates between sweeps");
    }
    Ok(res)
}

/// Product eigenfunctions for the configured selections. Entry `k = 0` takes the
/// self-consistent density factor, `k ≥ 1` the eigenvector of the (k+1)-th
/// eigenvalue of that subsystem's component map.
pub fn products(
    cfg: &ExperimentConfig,
    system: &MeanFieldSystem,
    roothaan: &RoothaanResult,
    components: &[SpectralResult],
) -> Result<Vec<ProductRun>> {
    cfg.products
        .iter()
        .map(|sel| {
            let mut factors = Vec::with_capacity(sel.len());
            let mut values = Vec::with_capacity(sel.len());
            for (i, &k) in sel.iter().enumerate() {
                let comp = &components[i];
                if k >= comp.values.len() {
                    return Err(Error::Config(format!(
                        "subsystem {i} has only {} eigenpairs",
                        comp.values.len()
                    )));
                }
                values.push(comp.values[k].re);
                factors.push(if k == 0 {
                    roothaan.factors[i].clone()
                } else {
                    SpatialFactor::new(i, system.parts[i].clone(), comp.vectors[k].clone())?
                });
            }
            let refs: Vec<&SpatialFactor> = factors.iter().collect();
            let (part, v) = product_eigenfunction(&refs)?;
            Ok(ProductRun {
                selection: sel.clone(),
                label: product_label(sel),
                value: product_eigenvalue(&values),
                part,
                values: v,
            })
        })
        .collect()
}

pub fn run_meanfield(cfg: &ExperimentConfig) -> Result<MeanFieldRun> {
    let setup = Setup::new(cfg)?;
    let system = meanfield_system(cfg, &setup)?;
    let roothaan = roothaan(cfg, &setup, &system)?;
    let components: Vec<SpectralResult> = roothaan
        .matrices
        .iter()
        .map(|m| eigs(m, cfg.eigenpairs).map(|r| r.0))
        .collect::<Result<_>>()?;
    for (i, c) in components.iter().enumerate() {
        info!(subsystem = i, values = ?c.real_values(), "component eigenvalues");
    }
    let products = products(cfg, &system, &roothaan, &components)?;
    Ok(MeanFieldRun {
        system,
        roothaan,
        components,
        products,
    })
}

/// Output directory: explicit argument, then the config, then `out/<preset>`.
pub fn output_dir(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.model.preset_name()))
}

fn with(header: &[(String, String)], extra: &[(&str, String)]) -> Vec<(String, String)> {
    let mut h = header.to_vec();
    h.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    h
}

/// Per-cell values of the slice through the first axis at coordinate `x`.
pub fn slice_first_axis(
    part: &TensorPartition,
    values: &[f64],
    x: f64,
) -> Result<(TensorPartition, Vec<f64>)> {
    let axis = part.axes()[0];
    let c = axis
        .locate(x)
        .ok_or_else(|| Error::Partition(format!("slice coordinate {x} outside the first axis")))?;
    let rest = part.sub(1..part.dim())?;
    let n = rest.n_cells();
    Ok((rest, values[c * n..(c + 1) * n].to_vec()))
}

/// Writes a grid dump, plus the θ₁ = π/2 slice for butane.
fn dump(
    cfg: &ExperimentConfig,
    dir: &Path,
    stem: &str,
    part: &TensorPartition,
    values: &[f64],
    header: Vec<(String, String)>,
) -> Result<()> {
    GridDump::new(part, values.to_vec(), header.clone()).save(&dir.join(format!("{stem}.grid")))?;
    if matches!(cfg.model, ModelSpec::ButaneUa(_)) && part.dim() == 3 {
        let x = std::f64::consts::FRAC_PI_2;
        let (sp, sv) = slice_first_axis(part, values, x)?;
        let h = with(&header, &[("slice", format!("axis 0 at {x:?}"))]);
        GridDump::new(&sp, sv, h).save(&dir.join(format!("{stem}_slice.grid")))?;
    }
    Ok(())
}

fn config_copy(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let mut c = cfg.clone();
    c.output_dir = None;
    fs::write(dir.join("config.toml"), c.to_toml()?)?;
    Ok(())
}

pub fn eigenvalue_table(header: Vec<(String, String)>, r: &SpectralResult) -> Table {
    let mut t = Table::new(header, &["index", "re", "im", "residual"]);
    for (k, v) in r.values.iter().enumerate() {
        t.push(vec![
            (k + 1).to_string(),
            format!("{:?}", v.re),
            format!("{:?}", v.im),
            format!("{:?}", r.residuals[k]),
        ]);
    }
    t
}

pub fn write_full(cfg: &ExperimentConfig, run: &FullRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header = Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
    .header();
    config_copy(cfg, dir)?;
    run.matrix
        .save_triplets(&dir.join("full_matrix.txt"), &header)?;
    eigenvalue_table(header.clone(), &run.spectrum).save(&dir.join("full_eigenvalues.csv"))?;
    dump(
        cfg,
        dir,
        "full_invariant",
        &run.part,
        &run.invariant,
        with(&header, &[("label", "invariant".into())]),
    )?;
    for k in 1..run.spectrum.values.len() {
        if !run.spectrum.is_real(k) {
            continue;
        }
        let h = with(
            &header,
            &[
                ("label", format!("v{}", k + 1)),
                ("eigenvalue", format!("{:?}", run.spectrum.values[k].re)),
            ],
        );
        dump(
            cfg,
            dir,
            &format!("full_v{}", k + 1),
            &run.part,
            &run.spectrum.vectors[k],
            h,
        )?;
    }
    let mut t = Table::new(
        header,
        &[
            "index",
            "eigenvalue",
            "rho_plus",
            "rho_minus",
            "lambda_plus_one",
        ],
    );
    for k in 1..run.spectrum.values.len() {
        if !run.spectrum.is_real(k) {
            continue;
        }
        if let Ok((a, b)) = sign_set_invariance(&run.matrix, &run.spectrum.vectors[k]) {
            let l = run.spectrum.values[k].re;
            t.push(vec![
                (k + 1).to_string(),
                format!("{l:?}"),
                format!("{a:?}"),
                format!("{b:?}"),
                format!("{:?}", l + 1.0),
            ]);
        }
    }
    t.save(&dir.join("full_sign_sets.csv"))?;
    Ok(())
}

pub fn write_factors(
    cfg: &ExperimentConfig,
    system: &MeanFieldSystem,
    res: &RoothaanResult,
    dir: &Path,
) -> Result<()> {
    let header = Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
    .header();
    let fdir = dir.join("factors");
    fs::create_dir_all(&fdir)?;
    let mut diag = Table::new(
        header.clone(),
        &["sweep", "subsystem", "position", "change"],
    );
    for d in &res.diagnostics {
        for (pos, &i) in d.order.iter().enumerate() {
            diag.push(vec![
                d.sweep.to_string(),
                i.to_string(),
                pos.to_string(),
                format!("{:?}", d.changes[i]),
            ]);
        }
        for (i, f) in d.factors.iter().enumerate() {
            let h = with(
                &header,
                &[("subsystem", i.to_string()), ("sweep", d.sweep.to_string())],
            );
            GridDump::new(&system.parts[i], f.clone(), h)
                .save(&fdir.join(format!("sweep{:02}_w{i}.grid", d.sweep)))?;
        }
    }
    diag.save(&dir.join("mf_diagnostics.csv"))?;
    let mut resid = Table::new(
        with(&header, &[("oscillating", res.oscillating.to_string())]),
        &["subsystem", "residual"],
    );
    for (i, r) in res.residuals.iter().enumerate() {
        resid.push(vec![i.to_string(), format!("{r:?}")]);
    }
    resid.save(&dir.join("mf_residuals.csv"))?;
    for f in &res.factors {
        let h = with(
            &header,
            &[
                ("subsystem", f.subsystem.to_string()),
                ("label", "final".into()),
            ],
        );
        GridDump::new(&f.part, f.values.clone(), h)
            .save(&dir.join(format!("mf_w{}.grid", f.subsystem)))?;
    }
    Ok(())
}

pub fn write_components(
    cfg: &ExperimentConfig,
    matrices: &[StochasticMatrix],
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header = Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
    .header();
    for (i, m) in matrices.iter().enumerate() {
        let h = with(&header, &[("subsystem", i.to_string())]);
        m.save_triplets(&dir.join(format!("mf_component{i}_matrix.txt")), &h)?;
    }
    Ok(())
}

pub fn write_meanfield(cfg: &ExperimentConfig, run: &MeanFieldRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    config_copy(cfg, dir)?;
    let header = Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
    .header();
    write_factors(cfg, &run.system, &run.roothaan, dir)?;
    write_components(cfg, &run.roothaan.matrices, dir)?;
    for (i, c) in run.components.iter().enumerate() {
        let h = with(&header, &[("subsystem", i.to_string())]);
        eigenvalue_table(h.clone(), c)
            .save(&dir.join(format!("mf_component{i}_eigenvalues.csv")))?;
        for k in 0..c.values.len() {
            let hk = with(
                &h,
                &[
                    ("label", format!("v{i}.{}", k + 1)),
                    ("eigenvalue", format!("{:?}", c.values[k].re)),
                ],
            );
            GridDump::new(&run.system.parts[i], c.vectors[k].clone(), hk)
                .save(&dir.join(format!("mf_component{i}_v{}.grid", k + 1)))?;
        }
    }
    let mut t = Table::new(header.clone(), &["selection", "label", "eigenvalue"]);
    for p in &run.products {
        let h = with(
            &header,
            &[
                ("label", p.label.clone()),
                ("eigenvalue", format!("{:?}", p.value)),
            ],
        );
        dump(cfg, dir, &p.file_stem(), &p.part, &p.values, h)?;
        t.push(vec![
            p.file_stem(),
            p.label.clone(),
            format!("{:?}", p.value),
        ]);
    }
    t.save(&dir.join("mf_products.csv"))?;
    Ok(())
}

pub fn compare_runs(full: &FullRun, mf: &MeanFieldRun) -> Result<ComparisonReport> {
    if let Some(p) = mf.products.iter().find(|p| !p.part.same_grid(&full.part)) {
        return Err(Error::Comparison(format!(
            "product {} lives on a different grid",
            p.label
        )));
    }
    let products: Vec<Eigenfunction> = mf.products.iter().map(ProductRun::eigenfunction).collect();
    ComparisonReport::build(&full.invariant, &full.eigenfunctions(), &products)
}

fn load_labelled(path: &Path) -> Result<(GridDump, Eigenfunction)> {
    let g = GridDump::load(path)?;
    let value = g
        .get("eigenvalue")
        .ok_or_else(|| Error::Format(format!("{} has no eigenvalue header", path.display())))?
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("bad eigenvalue in {}", path.display())))?;
    let label = g.get("label").unwrap_or("?").to_string();
    let values = g.values.clone();
    Ok((
        g,
        Eigenfunction {
            label,
            value,
            values,
        },
    ))
}

fn sorted_matches(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| {
                n.starts_with(prefix) && n.ends_with(".grid") && !n.ends_with("_slice.grid")
            })
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Compares artifacts written by [`write_full`] and [`write_meanfield`].
pub fn compare_dirs(full_dir: &Path, mf_dir: &Path) -> Result<ComparisonReport> {
    let pi = GridDump::load(&full_dir.join("full_invariant.grid"))?;
    let mut full = Vec::new();
    for p in sorted_matches(full_dir, "full_v")? {
        let (g, e) = load_labelled(&p)?;
        if !g.same_grid(&pi) {
            return Err(Error::Comparison(format!(
                "{} is on a different grid",
                p.display()
            )));
        }
        full.push(e);
    }
    full.sort_by(|a, b| b.value.total_cmp(&a.value));
    let mut products = Vec::new();
    for p in sorted_matches(mf_dir, "product_")? {
        let (g, e) = load_labelled(&p)?;
        if !g.same_grid(&pi) {
            return Err(Error::Comparison(format!(
                "{} is on a different grid",
                p.display()
            )));
        }
        products.push(e);
    }
    ComparisonReport::build(&pi.values, &full, &products)
}

pub fn write_report(
    report: &ComparisonReport,
    header: Vec<(String, String)>,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    report.to_table(header).save(&dir.join("comparison.csv"))?;
    fs::write(dir.join("comparison.txt"), report.render())?;
    Ok(())
}
