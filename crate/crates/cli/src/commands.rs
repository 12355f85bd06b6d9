//! Implementations of the data-producing commands. Each handler merges its
//! flags with the config (flags win), runs the library, writes its files,
//! and reports an [`Outcome`]; threshold violations come back as failing
//! check rows rather than hard errors so the caller can serialize them.

use std::path::Path;

use clap::Args;
use serde::Serialize;

use taugas::correspond::{Correspondence, RLimitStudy};
use taugas::gas::{Confining, GasSpec};
use taugas::geometry::BoundaryGeometry;
use taugas::matrix_model::ZChain;
use taugas::soliton::{EvalMode, EvalOptions, HierarchyKind, SolitonSystem};
use taugas::tau::TauValue;
use taugas::{Sampler64, TimesVector64, C64};

use crate::config::{self, ExperimentConfig};
use crate::output::{self, Cell, CheckRow, Meta, Outcome, Table, SCHEMA_VERSION};
use crate::CliError;

/// Everything a handler needs besides its own flags.
pub struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub cfg_dir: Option<&'a Path>,
    pub out_dir: &'a Path,
    pub seed: u64,
    pub deterministic: bool,
}

impl Ctx<'_> {
    fn meta(&self) -> Option<Meta> {
        output::meta(self.deterministic)
    }

    /// Explicit sites from the config, if any.
    fn config_sites(&self) -> Result<Option<Vec<C64>>, CliError> {
        match &self.cfg.lattice {
            Some(section) => config::load_sites(section, self.cfg_dir),
            None => Ok(None),
        }
    }

    /// Explicit times from the config, if any.
    fn config_times(&self) -> Result<Option<TimesVector64>, CliError> {
        match &self.cfg.times {
            Some(section) => config::build_times(section).map(Some),
            None => Ok(None),
        }
    }
}

/// `flag` wins over the config value, which wins over the default.
pub fn resolve<T: Copy>(flag: Option<T>, cfg: Option<T>, default: T) -> T {
    flag.or(cfg).unwrap_or(default)
}

fn complex_strings(zs: &[C64]) -> Vec<String> {
    zs.iter().map(|&z| config::format_complex(z)).collect()
}

fn pos_components(times: &TimesVector64) -> Vec<C64> {
    (1..=times.pos_len()).map(|p| times.pos(p)).collect()
}

fn neg_components(times: &TimesVector64) -> Vec<C64> {
    (1..=times.neg_len()).map(|p| times.neg(p)).collect()
}

/// Large superpositions run on the worker pool in chunked, index-ordered
/// form, so results are bit-identical for any worker count.
fn eval_options(n: usize) -> EvalOptions {
    EvalOptions {
        mode: if n >= 15 {
            EvalMode::Parallel
        } else {
            EvalMode::Gray
        },
        ..EvalOptions::default()
    }
}

pub(crate) fn forbid_lattice(ctx: &Ctx, command: &str) -> Result<(), CliError> {
    if ctx.cfg.lattice.is_some() {
        return Err(CliError::input(format!(
            "[lattice] does not apply to `{command}`, which draws from the seed"
        )));
    }
    Ok(())
}

pub(crate) fn forbid_times(ctx: &Ctx, command: &str) -> Result<(), CliError> {
    if ctx.cfg.times.is_some() {
        return Err(CliError::input(format!(
            "[times] does not apply to `{command}`, which draws from the seed"
        )));
    }
    Ok(())
}

/// Reject per-site weights for the commands that have no use for them, so a
/// config mistake does not silently change the experiment.
fn forbid_log_weights(ctx: &Ctx, command: &str) -> Result<(), CliError> {
    if let Some(lattice) = &ctx.cfg.lattice {
        if lattice.log_weights.is_some() {
            return Err(CliError::input(format!(
                "[lattice].log_weights only applies to `nmm`, not `{command}`"
            )));
        }
    }
    Ok(())
}

/// Sites for a gas-style command: explicit from the config, or drawn inside
/// the geometry. An explicit lattice must agree with an explicit `n`.
fn gas_sites(
    ctx: &Ctx,
    sampler: &mut Sampler64,
    geometry: &BoundaryGeometry<f64>,
    n_flag: Option<usize>,
) -> Result<Vec<C64>, CliError> {
    let n_cfg = ctx.cfg.params.n;
    match ctx.config_sites()? {
        Some(sites) => {
            let n = resolve(n_flag, n_cfg, sites.len());
            if n != sites.len() {
                return Err(CliError::input(format!(
                    "the lattice lists {} sites but n = {n}",
                    sites.len()
                )));
            }
            Ok(sites)
        }
        None => {
            let n = resolve(n_flag, n_cfg, 6);
            Ok(sampler.interior_sites(geometry, n, 0.15)?)
        }
    }
}

// ---------------------------------------------------------------------------
// tau
// ---------------------------------------------------------------------------

/// Evaluate an N-soliton tau-function on seeded momenta and offsets.
#[derive(Args, Debug, Default)]
pub struct TauArgs {
    /// Hierarchy: kp, bkp, or toda.
    #[arg(long)]
    pub hierarchy: Option<String>,
    /// Soliton count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Toda lattice index carried by the times.
    #[arg(long)]
    pub m: Option<i64>,
    /// Highest flow index of the sampled times.
    #[arg(long)]
    pub p_max: Option<usize>,
    /// Magnitude scale of the sampled times.
    #[arg(long)]
    pub time_scale: Option<f64>,
}

#[derive(Serialize)]
struct TauReport {
    schema_version: u32,
    command: &'static str,
    hierarchy: &'static str,
    n: usize,
    seed: u64,
    log_magnitude: f64,
    phase_re: f64,
    phase_im: f64,
    times_m: i64,
    momenta_a: Vec<String>,
    momenta_b: Vec<String>,
    phase_offsets: Vec<String>,
    times_pos: Vec<String>,
    times_neg: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<Meta>,
}

pub fn tau(ctx: &Ctx, args: &TauArgs) -> Result<Outcome, CliError> {
    forbid_lattice(ctx, "tau")?;
    let p = &ctx.cfg.params;
    let kind = config::parse_hierarchy(
        args.hierarchy
            .as_deref()
            .or(p.hierarchy.as_deref())
            .unwrap_or("kp"),
    )?;
    let n = resolve(args.n, p.n, 4);
    let m = args.m.or(p.m);
    if m.is_some() && kind != HierarchyKind::Toda2d {
        return Err(CliError::input(
            "the lattice index m applies to the Toda hierarchy only".into(),
        ));
    }
    let p_max = resolve(args.p_max, p.p_max, 3);
    let scale = resolve(args.time_scale, p.time_scale, 0.3);

    let mut sampler = Sampler64::from_seed(ctx.seed);
    let pairs = sampler.banded_momenta(n, 0.75, 1.8)?;
    let offsets = sampler.phase_offsets(n, 1.0);
    let system = SolitonSystem::new(kind, pairs, offsets)?;
    let mut times = match ctx.config_times()? {
        Some(times) => times,
        None => sampler.admissible_times(kind, p_max, scale),
    };
    if let Some(m) = m {
        times = times.with_m(m);
    }

    let opts = eval_options(n);
    let value = system.tau_with(&times, &opts)?;

    let mut rows = Vec::with_capacity(n + 1);
    for occupied in 0..=n {
        let sector = system.tau_sector_with(&times, occupied, &opts)?;
        rows.push(vec![
            Cell::Uint(occupied as u64),
            Cell::Float(sector.log_magnitude()),
            Cell::Float(sector.phase().re),
            Cell::Float(sector.phase().im),
        ]);
    }
    let table = Table {
        name: "tau_sectors",
        columns: &["occupied", "log_magnitude", "phase_re", "phase_im"],
        rows,
    };

    let report = TauReport {
        schema_version: SCHEMA_VERSION,
        command: "tau",
        hierarchy: config::hierarchy_label(kind),
        n,
        seed: ctx.seed,
        log_magnitude: value.log_magnitude(),
        phase_re: value.phase().re,
        phase_im: value.phase().im,
        times_m: times.m,
        momenta_a: complex_strings(&system.momenta().iter().map(|p| p.a).collect::<Vec<_>>()),
        momenta_b: complex_strings(&system.momenta().iter().map(|p| p.b).collect::<Vec<_>>()),
        phase_offsets: complex_strings(system.phase_offsets()),
        times_pos: complex_strings(&pos_components(&times)),
        times_neg: complex_strings(&neg_components(&times)),
        meta: ctx.meta(),
    };

    let files = vec![
        output::write_table(ctx.out_dir, &table)?,
        output::write_report(ctx.out_dir, "tau_report", &report)?,
    ];
    let summary = format!(
        "tau[{}]: n = {n}, log|tau| = {:e}",
        config::hierarchy_label(kind),
        value.log_magnitude()
    );
    Ok(Outcome::new(files, summary))
}

// ---------------------------------------------------------------------------
// gas
// ---------------------------------------------------------------------------

/// Grand and canonical partition functions of a lattice Coulomb gas.
#[derive(Args, Debug, Default)]
pub struct GasArgs {
    /// Geometry: free-plane, half-plane, quarter-plane, disc:R, scaled-exterior:R.
    #[arg(long)]
    pub geometry: Option<String>,
    /// Number of lattice sites.
    #[arg(long)]
    pub n: Option<usize>,
    /// Inverse temperature.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Chemical potential.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Highest flow index of the sampled background times.
    #[arg(long)]
    pub p_max: Option<usize>,
    /// Strength of the quadratic confining potential.
    #[arg(long)]
    pub quadratic: Option<f64>,
}

#[derive(Serialize)]
struct GasReport {
    schema_version: u32,
    command: &'static str,
    geometry: String,
    n: usize,
    beta: f64,
    mu: f64,
    quadratic: f64,
    seed: u64,
    grand_log_magnitude: f64,
    grand_phase_re: f64,
    grand_phase_im: f64,
    reassembly_rel_diff: f64,
    times_m: i64,
    sites: Vec<String>,
    times_pos: Vec<String>,
    times_neg: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<Meta>,
}

/// The gas specification shared by `gas` and `observables`.
fn build_spec(
    ctx: &Ctx,
    args: &GasArgs,
) -> Result<(GasSpec<f64>, String, usize, f64, f64, f64), CliError> {
    let p = &ctx.cfg.params;
    let geometry = config::parse_geometry(
        args.geometry
            .as_deref()
            .or(p.geometry.as_deref())
            .unwrap_or("half-plane"),
    )?;
    let beta = resolve(args.beta, p.beta, 2.0);
    let mu = resolve(args.mu, p.mu, 0.0);
    let quadratic = resolve(args.quadratic, p.quadratic, 0.15);
    let p_max = resolve(args.p_max, p.p_max, 2);
    let scale = p.time_scale.unwrap_or(0.3);

    let mut sampler = Sampler64::from_seed(ctx.seed);
    let sites = gas_sites(ctx, &mut sampler, &geometry, args.n)?;
    let n = sites.len();
    let times = match ctx.config_times()? {
        Some(times) => times,
        None => sampler.admissible_times(geometry.natural_hierarchy(), p_max, scale),
    };
    let label = config::geometry_label(&geometry);
    let spec = GasSpec::new(geometry, sites)
        .beta(beta)
        .mu(mu)
        .confining(Confining::Quadratic {
            strength: quadratic,
        })
        .times(times);
    Ok((spec, label, n, beta, mu, quadratic))
}

pub fn gas(ctx: &Ctx, args: &GasArgs) -> Result<Outcome, CliError> {
    forbid_log_weights(ctx, "gas")?;
    let (spec, label, n, beta, mu, quadratic) = build_spec(ctx, args)?;
    let sites = complex_strings(&spec.sites);
    let times_m = spec.times.m;
    let times_pos = complex_strings(&pos_components(&spec.times));
    let times_neg = complex_strings(&neg_components(&spec.times));
    let gas = spec.build()?;
    let decomposition = gas.sector_decomposition()?;

    let rows = decomposition
        .sectors
        .iter()
        .enumerate()
        .map(|(occupied, sector)| {
            vec![
                Cell::Uint(occupied as u64),
                Cell::Float(sector.log_magnitude()),
                Cell::Float(sector.phase().re),
                Cell::Float(sector.phase().im),
            ]
        })
        .collect();
    let table = Table {
        name: "gas_sectors",
        columns: &["occupied", "log_magnitude", "phase_re", "phase_im"],
        rows,
    };

    let grand = &decomposition.grand;
    let report = GasReport {
        schema_version: SCHEMA_VERSION,
        command: "gas",
        geometry: label.clone(),
        n,
        beta,
        mu,
        quadratic,
        seed: ctx.seed,
        grand_log_magnitude: grand.log_magnitude(),
        grand_phase_re: grand.phase().re,
        grand_phase_im: grand.phase().im,
        reassembly_rel_diff: decomposition.reassembly_rel_diff(),
        times_m,
        sites,
        times_pos,
        times_neg,
        meta: ctx.meta(),
    };

    let files = vec![
        output::write_table(ctx.out_dir, &table)?,
        output::write_report(ctx.out_dir, "gas_report", &report)?,
    ];
    let summary = format!(
        "gas[{label}]: n = {n}, log|grand| = {:e}, reassembly rel diff = {:e}",
        grand.log_magnitude(),
        decomposition.reassembly_rel_diff()
    );
    Ok(Outcome::new(files, summary))
}

// ---------------------------------------------------------------------------
// observables
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ObservablesReport {
    schema_version: u32,
    command: &'static str,
    geometry: String,
    n: usize,
    beta: f64,
    mu: f64,
    quadratic: f64,
    seed: u64,
    grand_log_magnitude: f64,
    mean_count_re: f64,
    mean_count_im: f64,
    mean_energy_re: f64,
    mean_energy_im: f64,
    sites: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<Meta>,
}

pub fn observables(ctx: &Ctx, args: &GasArgs) -> Result<Outcome, CliError> {
    forbid_log_weights(ctx, "observables")?;
    let (spec, label, n, beta, mu, quadratic) = build_spec(ctx, args)?;
    let sites = spec.sites.clone();
    let gas = spec.build()?;
    let grand = gas.grand_partition()?;
    let obs = gas.observables()?;

    let rows = sites
        .iter()
        .zip(&obs.occupancy)
        .enumerate()
        .map(|(i, (site, occ))| {
            vec![
                Cell::Uint(i as u64),
                Cell::Float(site.re),
                Cell::Float(site.im),
                Cell::Float(occ.re),
                Cell::Float(occ.im),
            ]
        })
        .collect();
    let table = Table {
        name: "occupancy",
        columns: &["site", "x", "y", "occupancy_re", "occupancy_im"],
        rows,
    };

    let report = ObservablesReport {
        schema_version: SCHEMA_VERSION,
        command: "observables",
        geometry: label.clone(),
        n,
        beta,
        mu,
        quadratic,
        seed: ctx.seed,
        grand_log_magnitude: grand.log_magnitude(),
        mean_count_re: obs.mean_count.re,
        mean_count_im: obs.mean_count.im,
        mean_energy_re: obs.mean_energy.re,
        mean_energy_im: obs.mean_energy.im,
        sites: complex_strings(&sites),
        meta: ctx.meta(),
    };

    let files = vec![
        output::write_table(ctx.out_dir, &table)?,
        output::write_report(ctx.out_dir, "observables_report", &report)?,
    ];
    let summary = format!(
        "observables[{label}]: n = {n}, <count> = {:e}, <energy> = {:e}",
        obs.mean_count.re, obs.mean_energy.re
    );
    Ok(Outcome::new(files, summary))
}

// ---------------------------------------------------------------------------
// correspond
// ---------------------------------------------------------------------------

/// Cross-check the soliton tau-function against the grand partition function
/// of the matching gas (the identity holds at beta = 2).
#[derive(Args, Debug, Default)]
pub struct CorrespondArgs {
    /// Geometry with a soliton representation (not free-plane).
    #[arg(long)]
    pub geometry: Option<String>,
    /// Number of lattice sites.
    #[arg(long)]
    pub n: Option<usize>,
    /// Chemical potential.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Highest flow index of the sampled times.
    #[arg(long)]
    pub p_max: Option<usize>,
    /// Strength of the quadratic confining potential.
    #[arg(long)]
    pub quadratic: Option<f64>,
    /// Largest admissible relative difference.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Serialize)]
struct CorrespondReport {
    schema_version: u32,
    command: &'static str,
    geometry: String,
    hierarchy: &'static str,
    n: usize,
    mu: f64,
    quadratic: f64,
    seed: u64,
    tau_log_magnitude: f64,
    grand_log_magnitude: f64,
    rel_diff: f64,
    tol: f64,
    status: String,
    sites: Vec<String>,
    times_pos: Vec<String>,
    times_neg: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    failing_checks: Vec<CheckRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<Meta>,
}

pub fn correspond(ctx: &Ctx, args: &CorrespondArgs) -> Result<Outcome, CliError> {
    forbid_log_weights(ctx, "correspond")?;
    let p = &ctx.cfg.params;
    let geometry = config::parse_geometry(
        args.geometry
            .as_deref()
            .or(p.geometry.as_deref())
            .unwrap_or("half-plane"),
    )?;
    let mu = resolve(args.mu, p.mu, 0.0);
    let quadratic = resolve(args.quadratic, p.quadratic, 0.15);
    let p_max = resolve(args.p_max, p.p_max, 2);
    let scale = p.time_scale.unwrap_or(0.3);
    let tol = resolve(args.tol, p.tol, 1e-11);

    let mut sampler = Sampler64::from_seed(ctx.seed);
    let sites = gas_sites(ctx, &mut sampler, &geometry, args.n)?;
    let n = sites.len();
    let times = match ctx.config_times()? {
        Some(times) => times,
        None => sampler.admissible_times(geometry.natural_hierarchy(), p_max, scale),
    };
    let label = config::geometry_label(&geometry);

    let corr = Correspondence::new(geometry, sites.clone())
        .with_mu(mu)
        .with_confining(Confining::Quadratic {
            strength: quadratic,
        });
    let system = corr.build_system()?;
    let opts = eval_options(n);
    let tau = system.tau_with(&times, &opts)?;
    let gas = corr.build_gas(&times)?;
    let decomposition = gas.sector_decomposition()?;
    let grand = &decomposition.grand;
    let rel = TauValue::rel_diff(&tau, grand);

    let mut rows = Vec::with_capacity(n + 1);
    for (occupied, gas_sector) in decomposition.sectors.iter().enumerate() {
        let tau_sector = system.tau_sector_with(&times, occupied, &opts)?;
        rows.push(vec![
            Cell::Uint(occupied as u64),
            Cell::Float(tau_sector.log_magnitude()),
            Cell::Float(gas_sector.log_magnitude()),
            Cell::Float(TauValue::rel_diff(&tau_sector, gas_sector)),
        ]);
    }
    let table = Table {
        name: "correspond_sectors",
        columns: &["occupied", "tau_log_magnitude", "gas_log_magnitude", "rel_diff"],
        rows,
    };

    let check = CheckRow::gate(
        "soliton-gas-identity",
        rel,
        tol,
        rel,
        1.0,
        rel,
        format!(
            "log-space comparison of the {} soliton tau and the {label} grand partition, n = {n}",
            config::hierarchy_label(system.kind())
        ),
    );
    let failures: Vec<CheckRow> = if check.passed() {
        vec![]
    } else {
        vec![check.clone()]
    };

    let report = CorrespondReport {
        schema_version: SCHEMA_VERSION,
        command: "correspond",
        geometry: label.clone(),
        hierarchy: config::hierarchy_label(system.kind()),
        n,
        mu,
        quadratic,
        seed: ctx.seed,
        tau_log_magnitude: tau.log_magnitude(),
        grand_log_magnitude: grand.log_magnitude(),
        rel_diff: rel,
        tol,
        status: check.status.clone(),
        sites: complex_strings(&sites),
        times_pos: complex_strings(&pos_components(&times)),
        times_neg: complex_strings(&neg_components(&times)),
        failing_checks: failures.clone(),
        meta: ctx.meta(),
    };

    let files = vec![
        output::write_table(ctx.out_dir, &table)?,
        output::write_report(ctx.out_dir, "correspond_report", &report)?,
    ];
    let summary = format!(
        "correspond[{label}]: n = {n}, tau vs grand rel diff = {rel:e} (tol {tol:e}) — {}",
        check.status
    );
    Ok(Outcome {
        files,
        summary,
        failures,
    })
}

// ---------------------------------------------------------------------------
// limit-study
// ---------------------------------------------------------------------------

/// Drive the conducting-disc radius to zero and measure the approach of the
/// normalised gauge tau to the partition chain.
#[derive(Args, Debug, Default)]
pub struct LimitStudyArgs {
    /// Comma-separated disc radii, conventionally decreasing.
    #[arg(long = "r", value_delimiter = ',')]
    pub r: Option<Vec<f64>>,
    /// Number of lattice sites.
    #[arg(long)]
    pub n: Option<usize>,
    /// Partition-chain index being extracted.
    #[arg(long)]
    pub m: Option<i64>,
    /// Sector offset of the gauge-ready convention.
    #[arg(long)]
    pub ell: Option<i64>,
    /// Chemical potential.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Strength of the quadratic confining potential.
    #[arg(long)]
    pub quadratic: Option<f64>,
    /// Highest flow index of the sampled times.
    #[arg(long)]
    pub p_max: Option<usize>,
}

#[derive(Serialize)]
struct LimitStudyReport {
    schema_version: u32,
    command: &'static str,
    n: usize,
    m: i64,
    ell: i64,
    mu: f64,
    quadratic: f64,
    seed: u64,
    order: f64,
    target_log_magnitude: f64,
    radii: Vec<f64>,
    deviations: Vec<f64>,
    deviation_ratios: Vec<f64>,
    sites: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<Meta>,
}

pub fn limit_study(ctx: &Ctx, args: &LimitStudyArgs) -> Result<Outcome, CliError> {
    forbid_log_weights(ctx, "limit-study")?;
    let p = &ctx.cfg.params;
    let radii = args
        .r
        .clone()
        .or_else(|| p.r.clone())
        .unwrap_or_else(|| vec![1e-2, 1e-3, 1e-4]);
    if radii.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(CliError::input(format!(
            "radii must be positive and finite, got {radii:?}"
        )));
    }
    let rmax = radii.iter().fold(0.0f64, |a, &b| a.max(b));
    let m = resolve(args.m, p.m, 3);
    let ell = resolve(args.ell, p.ell, 0);
    let mu = resolve(args.mu, p.mu, 0.0);
    let quadratic = resolve(args.quadratic, p.quadratic, 0.1);
    let p_max = resolve(args.p_max, p.p_max, 2);
    let scale = p.time_scale.unwrap_or(0.3);

    let mut sampler = Sampler64::from_seed(ctx.seed);
    let sites = match ctx.config_sites()? {
        Some(sites) => {
            if let Some(inside) = sites.iter().find(|z| z.norm() <= rmax) {
                return Err(CliError::validation(
                    "DomainError",
                    format!(
                        "site {} lies inside the largest study radius {rmax}",
                        config::format_complex(*inside)
                    ),
                ));
            }
            sites
        }
        None => {
            let n = resolve(args.n, p.n, 6);
            let staging = BoundaryGeometry::disc_exterior(rmax)?;
            sampler.interior_sites(&staging, n, 0.25)?
        }
    };
    let n = sites.len();
    if let Some(n_given) = args.n.or(p.n) {
        if n_given != n {
            return Err(CliError::input(format!(
                "the lattice lists {n} sites but n = {n_given}"
            )));
        }
    }
    if m < 0 || m as usize > n {
        return Err(CliError::range(format!(
            "lattice point m = {m} outside the chain range 0..={n}"
        )));
    }
    let times = match ctx.config_times()? {
        Some(times) => times,
        None => sampler.admissible_times(HierarchyKind::Toda2d, p_max, scale),
    };

    let study = RLimitStudy {
        sites: sites.clone(),
        confining: Confining::Quadratic {
            strength: quadratic,
        },
        mu,
        ell,
        m,
        times,
        radii: radii.clone(),
        sectors: (0..=n).collect(),
    };
    let report = study.run()?;

    let ratios: Vec<f64> = report
        .deviations
        .windows(2)
        .map(|w| w[1] / w[0])
        .collect();

    let deviation_rows = radii
        .iter()
        .zip(report.deviations.iter())
        .zip(report.values.iter())
        .map(|((&radius, &deviation), value)| {
            vec![
                Cell::Float(radius),
                Cell::Float(deviation),
                Cell::Float(value.log_magnitude()),
            ]
        })
        .collect();
    let deviation_table = Table {
        name: "limit_deviation",
        columns: &["radius", "deviation", "log_magnitude"],
        rows: deviation_rows,
    };

    let sector_rows = report
        .sector_slopes
        .iter()
        .map(|slope| {
            vec![
                Cell::Uint(slope.sector as u64),
                Cell::Float(slope.slope),
                Cell::Float(slope.predicted),
            ]
        })
        .collect();
    let sector_table = Table {
        name: "limit_sectors",
        columns: &["sector", "slope", "predicted"],
        rows: sector_rows,
    };

    let toml_report = LimitStudyReport {
        schema_version: SCHEMA_VERSION,
        command: "limit-study",
        n,
        m,
        ell,
        mu,
        quadratic,
        seed: ctx.seed,
        order: report.order,
        target_log_magnitude: report.target.log_magnitude(),
        radii,
        deviations: report.deviations.clone(),
        deviation_ratios: ratios.clone(),
        sites: complex_strings(&sites),
        meta: ctx.meta(),
    };

    let files = vec![
        output::write_table(ctx.out_dir, &deviation_table)?,
        output::write_table(ctx.out_dir, &sector_table)?,
        output::write_report(ctx.out_dir, "limit_study_report", &toml_report)?,
    ];
    let ratio_text = ratios
        .iter()
        .map(|r| format!("{r:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    let summary = format!(
        "limit-study: n = {n}, m = {m}, deviation order {:.3}, successive ratios [{ratio_text}]",
        report.order
    );
    Ok(Outcome::new(files, summary))
}

// ---------------------------------------------------------------------------
// nmm
// ---------------------------------------------------------------------------

/// Evaluate the discrete normal-matrix partition chain by subset enumeration
/// and by the moment determinant, and gate their agreement.
#[derive(Args, Debug, Default)]
pub struct NmmArgs {
    /// Number of lattice sites.
    #[arg(long)]
    pub n: Option<usize>,
    /// Single chain index to evaluate (default: the whole chain 0..=n).
    #[arg(long)]
    pub m: Option<i64>,
    /// Highest flow index of the sampled times.
    #[arg(long)]
    pub p_max: Option<usize>,
    /// Magnitude scale of the sampled times.
    #[arg(long)]
    pub time_scale: Option<f64>,
    /// Largest admissible route disagreement.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Serialize)]
struct NmmReport {
    schema_version: u32,
    command: &'static str,
    n: usize,
    seed: u64,
    tol: f64,
    worst_rel_diff: f64,
    status: String,
    times_m: i64,
    log_weights: Vec<f64>,
    sites: Vec<String>,
    times_pos: Vec<String>,
    times_neg: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    failing_checks: Vec<CheckRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<Meta>,
}

pub fn nmm(ctx: &Ctx, args: &NmmArgs) -> Result<Outcome, CliError> {
    let p = &ctx.cfg.params;
    let p_max = resolve(args.p_max, p.p_max, 2);
    let scale = resolve(args.time_scale, p.time_scale, 0.35);
    let tol = resolve(args.tol, p.tol, 1e-10);

    let mut sampler = Sampler64::from_seed(ctx.seed);
    let (sites, weights) = match ctx.config_sites()? {
        Some(sites) => {
            if let Some(n_given) = args.n.or(p.n) {
                if n_given != sites.len() {
                    return Err(CliError::input(format!(
                        "the lattice lists {} sites but n = {n_given}",
                        sites.len()
                    )));
                }
            }
            let weights = match ctx.cfg.lattice.as_ref().and_then(|l| l.log_weights.clone()) {
                Some(w) => w,
                None => vec![0.0; sites.len()],
            };
            (sites, weights)
        }
        None => {
            if ctx
                .cfg
                .lattice
                .as_ref()
                .is_some_and(|l| l.log_weights.is_some())
            {
                return Err(CliError::input(
                    "[lattice].log_weights needs explicit sites".into(),
                ));
            }
            let n = resolve(args.n, p.n, 6);
            let sites = sampler.sites_in_box(n, 2.0, 0.2)?;
            let weights = sampler.log_weights(n, 0.8);
            (sites, weights)
        }
    };
    let n = sites.len();
    let ms: Vec<usize> = match args.m.or(p.m) {
        Some(m) => {
            if m < 0 || m as usize > n {
                return Err(CliError::range(format!(
                    "lattice point m = {m} outside the chain range 0..={n}"
                )));
            }
            vec![m as usize]
        }
        None => (0..=n).collect(),
    };
    let times = match ctx.config_times()? {
        Some(times) => times,
        None => sampler.complex_times(p_max, scale),
    };

    let chain = ZChain::new(sites.clone(), weights.clone())?;
    let mut rows = Vec::with_capacity(ms.len());
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for &m in &ms {
        let enumerated = chain.partition(m, &times)?;
        let determinant = chain.determinant_partition(m, &times)?;
        let rel = TauValue::rel_diff(&enumerated, &determinant);
        worst = worst.max(rel);
        rows.push(vec![
            Cell::Uint(m as u64),
            Cell::Float(enumerated.log_magnitude()),
            Cell::Float(enumerated.phase().re),
            Cell::Float(enumerated.phase().im),
            Cell::Float(rel),
        ]);
        let check = CheckRow::gate(
            format!("route-agreement m={m}"),
            rel,
            tol,
            rel,
            1.0,
            rel,
            format!("subset enumeration vs orthonormalised moment determinant, n = {n}"),
        );
        if !check.passed() {
            failures.push(check);
        }
    }
    let table = Table {
        name: "nmm_chain",
        columns: &["m", "log_magnitude", "phase_re", "phase_im", "route_rel_diff"],
        rows,
    };

    let status = if failures.is_empty() { "PASS" } else { "FAIL" };
    let report = NmmReport {
        schema_version: SCHEMA_VERSION,
        command: "nmm",
        n,
        seed: ctx.seed,
        tol,
        worst_rel_diff: worst,
        status: status.into(),
        times_m: times.m,
        log_weights: weights,
        sites: complex_strings(&sites),
        times_pos: complex_strings(&pos_components(&times)),
        times_neg: complex_strings(&neg_components(&times)),
        failing_checks: failures.clone(),
        meta: ctx.meta(),
    };

    let files = vec![
        output::write_table(ctx.out_dir, &table)?,
        output::write_report(ctx.out_dir, "nmm_report", &report)?,
    ];
    let summary = format!(
        "nmm: n = {n}, {} chain value(s), worst route rel diff = {worst:e} (tol {tol:e}) — {status}",
        ms.len()
    );
    Ok(Outcome {
        files,
        summary,
        failures,
    })
}
