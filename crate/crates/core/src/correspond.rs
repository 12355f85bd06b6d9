//! The soliton ↔ Coulomb-gas dictionary.
//!
//! A lattice gas at β = 2 in one of the image-charge geometries *is* a
//! multi-soliton tau-function once each site `ζ` is mapped to a momentum pair
//! `(a, b)` of the geometry's natural hierarchy:
//!
//! * upper half plane (conductor) → KP with `a = ζ`, `b = −ζ̄`;
//! * quarter plane (mixed walls) → BKP with `a = ζ`, `b = ζ̄`;
//! * disc exterior of radius `R` → 2D Toda with `a = ζ/R`, `b = R/ζ̄`,
//!   and more generally `a = w`, `b = 1/w̄` for the unit-disc image
//!   `w = f(ζ)` of a conformal exterior.
//!
//! Under these maps the hierarchy phase shift reproduces the pair interaction
//! exactly, `A_ij = ln L_ij = −2 V_ij`, and the time-dependent part of each
//! soliton phase reproduces the harmonic background `−2 𝒲(ζ_i, t)`, so the
//! Hirota sum over occupation patterns coincides term by term with the grand
//! partition sum. The static part of the phase carries the remaining
//! one-body energies; see [`PhaseConvention`].
//!
//! For the disc geometry the module also implements the shrinking-disc
//! machinery: the gauge-adapted tau [`Correspondence::gauge_tau`]
//!
//! ```text
//!   τ̃(m, t; R) = R^{m²} · τ(lattice index m−1, times {R^p t_p, R^p t̄_p})
//! ```
//!
//! splits into charge sectors with `n` occupied sites scaling as
//! `R^{(n−(m−ℓ))² + ℓ(2m−ℓ)}`, so as `R → 0` only the `n = m − ℓ` sector
//! survives and `R^{−ℓ(2m−ℓ)} τ̃ → Z_m^{(ℓ)}`, the `(m−ℓ)`-point partition
//! value of the discretised normal matrix model with weights
//! `|ζ|^{2ℓ} e^{−2U − 2𝒰₀}`. [`RLimitStudy`] measures those exponents.

use crate::gas::{Confining, GasSpec, LatticeGas};
use crate::geometry::BoundaryGeometry;
use crate::matrix_model::ZChain;
use crate::scalar::{fit_order, Cplx, Real};
use crate::soliton::{HierarchyKind, MomentumPair, SolitonSystem, TimesVector};
use crate::tau::TauValue;
use crate::{Error, Result};

/// How the static (time-independent) part of each soliton phase is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseConvention {
    /// The defining identification: `φ⁰ = −β (Ṽ + U − μ)` at `β = 2`, so the
    /// tau-function equals the grand partition sum with every physical
    /// one-body energy (image self-energy `Ṽ`, confinement `U`) in place.
    Physical,
    /// Disc exterior only: `φ⁰ = −2(U − μ) + (2ℓ−1) ln R`. Drops the
    /// self-energy and replaces it by the `R`-power that makes the shrinking
    /// disc select the charge sector `n = m − ℓ`; the paired gas uses
    /// `include_self_energy = false` with the same constant as an external
    /// offset. `ell = 0` is the plain partition-chain normalisation.
    GaugeReady {
        /// Sector offset `ℓ ≥ 0` (the surviving sector is `m − ℓ`).
        ell: i64,
    },
}

/// A gas/soliton pairing: geometry, sites and one-body data, from which both
/// sides of the identification can be built and compared.
#[derive(Debug, Clone)]
pub struct Correspondence<T: Real> {
    pub geometry: BoundaryGeometry<T>,
    pub sites: Vec<Cplx<T>>,
    pub mu: T,
    pub confining: Confining<T>,
    pub convention: PhaseConvention,
}

impl<T: Real> Correspondence<T> {
    /// Pair a geometry with a set of admissible sites (physical convention,
    /// `μ = 0`, no confinement).
    pub fn new(geometry: BoundaryGeometry<T>, sites: Vec<Cplx<T>>) -> Self {
        Self {
            geometry,
            sites,
            mu: T::zero(),
            confining: Confining::Zero,
            convention: PhaseConvention::Physical,
        }
    }

    pub fn with_mu(mut self, mu: T) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_confining(mut self, confining: Confining<T>) -> Self {
        self.confining = confining;
        self
    }

    pub fn with_convention(mut self, convention: PhaseConvention) -> Self {
        self.convention = convention;
        self
    }

    /// Hierarchy selected by the geometry.
    pub fn hierarchy(&self) -> HierarchyKind {
        self.geometry.natural_hierarchy()
    }

    /// Momentum pair of the soliton representing a charge at `z`.
    pub fn momentum_pair(&self, z: Cplx<T>) -> Result<MomentumPair<T>> {
        self.geometry.check_site(z)?;
        match &self.geometry {
            BoundaryGeometry::FreePlane => Err(Error::Unsupported(
                "the free plane has no soliton representation; it only arises as the \
                 shrinking-disc limit of the exterior geometry"
                    .to_string(),
            )),
            BoundaryGeometry::HalfPlaneConductor => Ok(MomentumPair::new(z, -z.conj())),
            BoundaryGeometry::QuarterPlane => Ok(MomentumPair::new(z, z.conj())),
            BoundaryGeometry::DiscExteriorConductor { .. }
            | BoundaryGeometry::ConformalExterior { .. } => {
                let w = self
                    .geometry
                    .unit_disc_image(z)
                    .expect("exterior geometries define a unit-disc image");
                Ok(MomentumPair::new(w, w.conj().inv()))
            }
        }
    }

    /// Static phase `φ⁰` of the soliton representing a charge at `z`.
    pub fn phase_offset(&self, z: Cplx<T>) -> Result<Cplx<T>> {
        let two = T::lit(2.0);
        let u = self.confining.eval(z);
        match self.convention {
            PhaseConvention::Physical => {
                let vtilde = self.geometry.self_potential(z)?;
                Ok(Cplx::new(-two * (vtilde + u - self.mu), T::zero()))
            }
            PhaseConvention::GaugeReady { ell } => {
                let r = self.gauge_radius()?;
                let coeff = T::from_i64(2 * ell - 1).unwrap();
                Ok(Cplx::new(-two * (u - self.mu) + coeff * r.ln(), T::zero()))
            }
        }
    }

    /// The disc radius, available only where the gauge machinery applies.
    fn gauge_radius(&self) -> Result<T> {
        match &self.geometry {
            BoundaryGeometry::DiscExteriorConductor { radius } => Ok(*radius),
            _ => Err(Error::Mode(
                "the gauge-adapted convention needs an explicit disc radius; use the \
                 disc-exterior geometry"
                    .to_string(),
            )),
        }
    }

    /// Build the soliton side of the identification.
    pub fn build_system(&self) -> Result<SolitonSystem<T>> {
        let pairs = self
            .sites
            .iter()
            .map(|&z| self.momentum_pair(z))
            .collect::<Result<Vec<_>>>()?;
        let offsets = self
            .sites
            .iter()
            .map(|&z| self.phase_offset(z))
            .collect::<Result<Vec<_>>>()?;
        SolitonSystem::new(self.hierarchy(), pairs, offsets)
    }

    /// Build the gas side of the identification at the given times.
    pub fn build_gas(&self, times: &TimesVector<T>) -> Result<LatticeGas<T>> {
        let spec = GasSpec::new(self.geometry.clone(), self.sites.clone())
            .mu(self.mu)
            .confining(self.confining.clone())
            .times(times.clone());
        let spec = match self.convention {
            PhaseConvention::Physical => spec,
            PhaseConvention::GaugeReady { ell } => {
                let r = self.gauge_radius()?;
                let coeff = T::from_i64(2 * ell - 1).unwrap();
                spec.include_self_energy(false)
                    .external_offset(Cplx::new(coeff * r.ln(), T::zero()))
            }
        };
        spec.build()
    }

    /// Partition chain targeted by the shrinking-disc limit: free-plane sites
    /// with weights `|ζ|^{2ℓ} e^{−2(U − μ)}` (times are supplied per call).
    pub fn limit_chain(&self) -> Result<ZChain<T>> {
        let ell = match self.convention {
            PhaseConvention::GaugeReady { ell } => ell,
            PhaseConvention::Physical => 0,
        };
        let two = T::lit(2.0);
        let log_weights = self
            .sites
            .iter()
            .map(|&z| -two * (self.confining.eval(z) - self.mu))
            .collect();
        ZChain::new(self.sites.clone(), log_weights)?.charge_weighted(ell)
    }

    /// Gauge-adapted tau `τ̃(m, t; R) = R^{m²} τ(m−1, {R^p t_p, R^p t̄_p})`.
    ///
    /// Requires the gauge-ready convention on a disc exterior. The times
    /// argument carries the *unscaled* `t_p, t̄_p`; its lattice index is
    /// ignored in favour of `m`.
    pub fn gauge_tau(&self, m: i64, times: &TimesVector<T>) -> Result<TauValue<T>> {
        let (system, eval_times, prefactor) = self.gauge_setup(m, times)?;
        Ok(system.tau(&eval_times)?.scale_exp(prefactor))
    }

    /// Single charge sector of [`Correspondence::gauge_tau`] (`occupied`
    /// sites), carrying the same `R^{m²}` prefactor.
    pub fn gauge_tau_sector(
        &self,
        m: i64,
        occupied: usize,
        times: &TimesVector<T>,
    ) -> Result<TauValue<T>> {
        let (system, eval_times, prefactor) = self.gauge_setup(m, times)?;
        Ok(system
            .tau_sector(&eval_times, occupied)?
            .scale_exp(prefactor))
    }

    fn gauge_setup(
        &self,
        m: i64,
        times: &TimesVector<T>,
    ) -> Result<(SolitonSystem<T>, TimesVector<T>, Cplx<T>)> {
        if !matches!(self.convention, PhaseConvention::GaugeReady { .. }) {
            return Err(Error::Mode(
                "gauge-adapted tau requires the gauge-ready phase convention".to_string(),
            ));
        }
        if m < 0 {
            return Err(Error::Range(format!(
                "partition-chain index must be nonnegative, got {m}"
            )));
        }
        let r = self.gauge_radius()?;
        let system = self.build_system()?;
        let eval_times = times.scaled(r).with_m(m - 1);
        let m2 = T::from_i64(m * m).unwrap();
        Ok((system, eval_times, Cplx::new(m2 * r.ln(), T::zero())))
    }
}

/// One measured charge-sector scaling exponent.
#[derive(Debug, Clone, Copy)]
pub struct SectorSlope<T> {
    /// Number of occupied sites in the sector.
    pub sector: usize,
    /// Fitted exponent of `R` in the sector magnitude.
    pub slope: T,
    /// Predicted exponent `(n − (m−ℓ))²` after normalisation.
    pub predicted: T,
}

/// Shrinking-disc study: drive `R → 0` at fixed sites and times and measure
/// both the convergence rate of the normalised gauge tau towards the
/// partition chain and the per-sector scaling exponents.
#[derive(Debug, Clone)]
pub struct RLimitStudy<T: Real> {
    /// Fixed charge positions (must stay outside every radius in `radii`).
    pub sites: Vec<Cplx<T>>,
    pub confining: Confining<T>,
    pub mu: T,
    /// Sector offset of the gauge-ready convention.
    pub ell: i64,
    /// Partition-chain index being extracted.
    pub m: i64,
    /// Unscaled times.
    pub times: TimesVector<T>,
    /// Disc radii, conventionally decreasing.
    pub radii: Vec<T>,
    /// Charge sectors whose scaling exponents to measure.
    pub sectors: Vec<usize>,
}

/// Results of an [`RLimitStudy`].
#[derive(Debug, Clone)]
pub struct RLimitReport<T: Real> {
    /// The partition-chain value `Z_m^{(ℓ)}` being approached.
    pub target: TauValue<T>,
    /// Normalised gauge-tau values `R^{−ℓ(2m−ℓ)} τ̃(m, t; R)`, one per radius.
    pub values: Vec<TauValue<T>>,
    /// Relative deviations from the target, one per radius.
    pub deviations: Vec<T>,
    /// Fitted order of the deviation in `R` (expected ≈ 1).
    pub order: T,
    /// Fitted vs predicted sector exponents.
    pub sector_slopes: Vec<SectorSlope<T>>,
}

impl<T: Real> RLimitStudy<T> {
    pub fn run(&self) -> Result<RLimitReport<T>> {
        if self.ell < 0 || self.ell > self.m {
            return Err(Error::Range(format!(
                "sector offset must satisfy 0 ≤ ℓ ≤ m, got ℓ = {}, m = {}",
                self.ell, self.m
            )));
        }
        if self.radii.len() < 2 {
            return Err(Error::Input(
                "need at least two radii to fit a convergence order".to_string(),
            ));
        }
        if self.times.m != 0 {
            return Err(Error::Mode(
                "the study times carry no lattice index; set times.m = 0".to_string(),
            ));
        }
        // ℓ(2m−ℓ): overall R-power removed before comparing with the chain.
        let norm_power = T::from_i64(self.ell * (2 * self.m - self.ell)).unwrap();
        let template = |radius: T| -> Result<Correspondence<T>> {
            Ok(
                Correspondence::new(BoundaryGeometry::disc_exterior(radius)?, self.sites.clone())
                    .with_mu(self.mu)
                    .with_confining(self.confining.clone())
                    .with_convention(PhaseConvention::GaugeReady { ell: self.ell }),
            )
        };
        let chain = template(self.radii[0])?.limit_chain()?;
        let target = chain.partition((self.m - self.ell) as usize, &self.times)?;
        if target.is_zero() {
            return Err(Error::Degenerate(
                "the limiting partition value vanishes; deviations are not relative".to_string(),
            ));
        }
        let mut values = Vec::with_capacity(self.radii.len());
        let mut deviations = Vec::with_capacity(self.radii.len());
        let mut sector_mags: Vec<Vec<T>> = vec![Vec::new(); self.sectors.len()];
        for &r in &self.radii {
            if !r.is_finite() || r <= T::zero() {
                return Err(Error::Input("radii must be positive".to_string()));
            }
            let corr = template(r)?;
            let value = corr
                .gauge_tau(self.m, &self.times)?
                .scale_exp(Cplx::new(-norm_power * r.ln(), T::zero()));
            deviations.push(TauValue::rel_diff(&value, &target));
            values.push(value);
            for (slot, &n) in self.sectors.iter().enumerate() {
                let sector = corr
                    .gauge_tau_sector(self.m, n, &self.times)?
                    .scale_exp(Cplx::new(-norm_power * r.ln(), T::zero()));
                if sector.is_zero() {
                    return Err(Error::Degenerate(format!(
                        "sector {n} vanishes identically; its exponent is undefined"
                    )));
                }
                sector_mags[slot].push(sector.log_magnitude().exp());
            }
        }
        let order = fit_order(&self.radii, &deviations)?;
        let mut sector_slopes = Vec::with_capacity(self.sectors.len());
        for (slot, &n) in self.sectors.iter().enumerate() {
            let slope = fit_order(&self.radii, &sector_mags[slot])?;
            let d = T::from_i64(n as i64 - (self.m - self.ell)).unwrap();
            sector_slopes.push(SectorSlope {
                sector: n,
                slope,
                predicted: d * d,
            });
        }
        Ok(RLimitReport {
            target,
            values,
            deviations,
            order,
            sector_slopes,
        })
    }
}
