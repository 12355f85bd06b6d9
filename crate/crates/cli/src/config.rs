//! Experiment configuration: one structured-text file with nested sections.
//!
//! Command-line flags always win over config values; the config in turn wins
//! over built-in defaults. Complex numbers are written as `"re+imi"` strings,
//! lattices either inline (`sites = ["0.2+0.9i", …]`) or as a CSV file with
//! columns `x,y`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use taugas::geometry::{BoundaryGeometry, ConformalMap};
use taugas::soliton::HierarchyKind;
use taugas::{C64, TimesVector64};

use crate::output::SCHEMA_VERSION;
use crate::CliError;

/// Full experiment description. Every field is optional so the same file can
/// drive any command; a `command` key makes the file self-contained for
/// `taugas run`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: Option<u32>,
    /// One of: tau, gas, correspond, limit-study, verify, nmm, observables.
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub deterministic: Option<bool>,
    /// Directory for result files.
    pub output: Option<PathBuf>,
    /// Worker threads for large superposition sums.
    pub workers: Option<usize>,
    #[serde(default)]
    pub params: Params,
    pub lattice: Option<LatticeSection>,
    pub times: Option<TimesSection>,
}

/// Numeric parameters shared by the commands; each command documents which
/// ones it reads.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Lattice size / soliton count.
    pub n: Option<usize>,
    /// Charge-sector or Toda lattice index.
    pub m: Option<i64>,
    pub beta: Option<f64>,
    pub mu: Option<f64>,
    /// Disc radii for the shrinking-disc study.
    pub r: Option<Vec<f64>>,
    /// Highest flow index of sampled times.
    pub p_max: Option<usize>,
    /// Finite-difference step.
    pub h: Option<f64>,
    /// Quadrature nodes per contour.
    pub points: Option<usize>,
    /// Sector offset of the gauge-ready convention.
    pub ell: Option<i64>,
    /// Pass/fail threshold for verification checks.
    pub tol: Option<f64>,
    /// Magnitude scale of sampled times.
    pub time_scale: Option<f64>,
    /// Strength of the quadratic confining potential.
    pub quadratic: Option<f64>,
    /// kp, bkp, or toda.
    pub hierarchy: Option<String>,
    /// free-plane, half-plane, quarter-plane, disc:R, or scaled-exterior:R.
    pub geometry: Option<String>,
    /// Verification suite name.
    pub suite: Option<String>,
}

/// Explicit charge lattice: inline complex sites or a CSV file, plus
/// per-site log-weights for the partition chain.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    /// Inline sites as "re+imi" strings.
    pub sites: Option<Vec<String>>,
    /// CSV file with header `x,y`, one site per row.
    pub sites_csv: Option<PathBuf>,
    /// Log-weights for the partition chain (nmm only).
    pub log_weights: Option<Vec<f64>>,
}

/// Explicit times: positive and negative flow families plus the lattice
/// index carried by the vector.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimesSection {
    pub m: Option<i64>,
    pub pos: Option<Vec<String>>,
    pub neg: Option<Vec<String>>,
}

/// Read and validate a config file.
pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), &e))?;
    let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| {
        CliError::config(format!("parsing {}: {e}", path.display()))
    })?;
    if let Some(v) = cfg.schema_version {
        if v != SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "config schema version {v} is not supported (expected {SCHEMA_VERSION})"
            )));
        }
    }
    if let Some(lattice) = &cfg.lattice {
        if lattice.sites.is_some() && lattice.sites_csv.is_some() {
            return Err(CliError::config(
                "[lattice] sets both `sites` and `sites_csv`; pick one".into(),
            ));
        }
    }
    Ok(cfg)
}

/// Parse `"re+imi"` (also plain reals, pure imaginaries, and `±i`).
pub fn parse_complex(s: &str) -> Result<C64, CliError> {
    let bad = |why: &str| {
        CliError::input(format!("cannot parse complex number \"{s}\": {why}"))
    };
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if t.is_empty() {
        return Err(bad("empty string"));
    }
    let Some(u) = t.strip_suffix(['i', 'I']) else {
        // Purely real.
        return t
            .parse::<f64>()
            .map(|re| C64::new(re, 0.0))
            .map_err(|_| bad("not a real number"));
    };
    // Split the imaginary part off at the last sign that is not an exponent
    // sign (i.e. not directly preceded by `e`/`E`).
    let bytes = u.as_bytes();
    let mut split = None;
    for i in (1..bytes.len()).rev() {
        if (bytes[i] == b'+' || bytes[i] == b'-')
            && !matches!(bytes[i - 1], b'e' | b'E')
        {
            split = Some(i);
            break;
        }
    }
    let signed_unit = |part: &str| -> Result<f64, CliError> {
        match part {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => part.parse::<f64>().map_err(|_| bad("bad imaginary part")),
        }
    };
    match split {
        None => Ok(C64::new(0.0, signed_unit(u)?)),
        Some(i) => {
            let re = u[..i]
                .parse::<f64>()
                .map_err(|_| bad("bad real part"))?;
            Ok(C64::new(re, signed_unit(&u[i..])?))
        }
    }
}

/// Format a complex number in the `"re+imi"` form used by config files and
/// reports; both parts use shortest round-trip formatting.
pub fn format_complex(z: C64) -> String {
    if z.im.is_sign_negative() {
        format!("{}{}i", z.re, z.im)
    } else {
        format!("{}+{}i", z.re, z.im)
    }
}

/// Sites from a `[lattice]` section; `sites_csv` paths resolve relative to
/// the config file's directory.
pub fn load_sites(
    section: &LatticeSection,
    cfg_dir: Option<&Path>,
) -> Result<Option<Vec<C64>>, CliError> {
    if let Some(strings) = &section.sites {
        let sites: Result<Vec<C64>, CliError> =
            strings.iter().map(|s| parse_complex(s)).collect();
        return sites.map(Some);
    }
    let Some(rel) = &section.sites_csv else {
        return Ok(None);
    };
    let path = match cfg_dir {
        Some(dir) if rel.is_relative() => dir.join(rel),
        _ => rel.clone(),
    };
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| CliError::input(format!("reading {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::input(format!("reading {}: {e}", path.display())))?;
    let names: Vec<String> = headers
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    if names != ["x", "y"] {
        return Err(CliError::input(format!(
            "{} must have the header `x,y`, found `{}`",
            path.display(),
            names.join(",")
        )));
    }
    let mut sites = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::input(format!("{} row {row}: {e}", path.display())))?;
        let field = |k: usize| -> Result<f64, CliError> {
            record
                .get(k)
                .ok_or_else(|| {
                    CliError::input(format!("{} row {row}: missing column", path.display()))
                })?
                .trim()
                .parse::<f64>()
                .map_err(|_| {
                    CliError::input(format!("{} row {row}: not a number", path.display()))
                })
        };
        sites.push(C64::new(field(0)?, field(1)?));
    }
    Ok(Some(sites))
}

/// Build a times vector from a `[times]` section.
pub fn build_times(section: &TimesSection) -> Result<TimesVector64, CliError> {
    let family = |entries: &Option<Vec<String>>| -> Result<Vec<C64>, CliError> {
        entries
            .iter()
            .flatten()
            .map(|s| parse_complex(s))
            .collect()
    };
    Ok(TimesVector64::new(
        section.m.unwrap_or(0),
        family(&section.pos)?,
        family(&section.neg)?,
    ))
}

/// Parse a geometry label.
pub fn parse_geometry(s: &str) -> Result<BoundaryGeometry<f64>, CliError> {
    let t = s.trim().to_ascii_lowercase();
    let radius_of = |spec: &str| -> Result<f64, CliError> {
        spec.parse::<f64>()
            .map_err(|_| CliError::input(format!("bad radius in geometry \"{s}\"")))
    };
    match t.as_str() {
        "free" | "free-plane" => Ok(BoundaryGeometry::FreePlane),
        "half" | "half-plane" => Ok(BoundaryGeometry::HalfPlaneConductor),
        "quarter" | "quarter-plane" => Ok(BoundaryGeometry::QuarterPlane),
        _ => {
            if let Some(spec) = t.strip_prefix("disc:") {
                return Ok(BoundaryGeometry::disc_exterior(radius_of(spec)?)?);
            }
            if let Some(spec) = t.strip_prefix("scaled-exterior:") {
                return Ok(BoundaryGeometry::conformal_exterior(ConformalMap::Scale {
                    radius: radius_of(spec)?,
                }));
            }
            Err(CliError::input(format!(
                "unknown geometry \"{s}\" (expected free-plane, half-plane, quarter-plane, \
                 disc:R, or scaled-exterior:R)"
            )))
        }
    }
}

/// Label for a geometry, inverse to [`parse_geometry`] where possible.
pub fn geometry_label(geometry: &BoundaryGeometry<f64>) -> String {
    match geometry {
        BoundaryGeometry::FreePlane => "free-plane".into(),
        BoundaryGeometry::HalfPlaneConductor => "half-plane".into(),
        BoundaryGeometry::QuarterPlane => "quarter-plane".into(),
        BoundaryGeometry::DiscExteriorConductor { radius } => format!("disc:{radius}"),
        BoundaryGeometry::ConformalExterior { map } => match map {
            ConformalMap::Scale { radius } => format!("scaled-exterior:{radius}"),
            _ => "conformal-exterior".into(),
        },
    }
}

/// Parse a hierarchy label.
pub fn parse_hierarchy(s: &str) -> Result<HierarchyKind, CliError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "kp" => Ok(HierarchyKind::Kp),
        "bkp" => Ok(HierarchyKind::Bkp),
        "toda" | "toda2d" | "2dtl" => Ok(HierarchyKind::Toda2d),
        _ => Err(CliError::input(format!(
            "unknown hierarchy \"{s}\" (expected kp, bkp, or toda)"
        ))),
    }
}

/// Label for a hierarchy, inverse to [`parse_hierarchy`].
pub fn hierarchy_label(kind: HierarchyKind) -> &'static str {
    match kind {
        HierarchyKind::Kp => "kp",
        HierarchyKind::Bkp => "bkp",
        HierarchyKind::Toda2d => "toda",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_strings_round_trip() {
        for s in [
            "1.5", "-2", "i", "-i", "+i", "2i", "-0.25i", "1+2i", "1-2i", "-1.5e-3+4e2i",
            "0+0i", "3e-7-1e-9i",
        ] {
            let z = parse_complex(s).unwrap();
            let back = parse_complex(&format_complex(z)).unwrap();
            assert_eq!(z, back, "{s}");
        }
        assert_eq!(parse_complex("1e-3+2e-4i").unwrap(), C64::new(1e-3, 2e-4));
        assert_eq!(parse_complex(" 0.5 - 0.25 i ").unwrap(), C64::new(0.5, -0.25));
        assert!(parse_complex("").is_err());
        assert!(parse_complex("1+2j").is_err());
        assert!(parse_complex("i2").is_err());
    }

    #[test]
    fn geometry_labels_round_trip() {
        for s in ["free-plane", "half-plane", "quarter-plane", "disc:0.7", "scaled-exterior:0.8"]
        {
            let g = parse_geometry(s).unwrap();
            assert_eq!(geometry_label(&g), s);
        }
        assert!(parse_geometry("annulus").is_err());
        assert!(parse_geometry("disc:-1").is_err());
    }
}
