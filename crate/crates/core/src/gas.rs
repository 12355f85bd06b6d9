//! Lattice Coulomb gas on a finite set of plane sites.
//!
//! Each of K sites either holds a unit charge or is empty. A configuration's
//! energy is the sum of pairwise boundary-aware Coulomb interactions, the
//! self-interaction of each charge with its boundary images, a confining
//! potential, and a harmonic multipole background. The grand partition sum
//! runs over all 2^K occupation patterns with fugacity `e^{βμ}` per charge.
//!
//! Everything here is composed directly from the geometry's potentials with
//! plain nested loops — deliberately independent of the soliton tau-function
//! evaluator, so the two sides of the correspondence can be compared as
//! genuinely separate computations.

use crate::geometry::BoundaryGeometry;
use crate::scalar::{Cplx, Real};
use crate::soliton::TimesVector;
use crate::tau::{LogSum, TauValue};
use crate::{Error, Result};
use itertools::Itertools;
use std::fmt;
use std::sync::Arc;

/// Hard cap on the number of sites: sums enumerate 2^K configurations.
pub const MAX_SITES: usize = 24;

/// Confining (non-harmonic) single-particle potential.
#[derive(Clone)]
pub enum Confining<T> {
    Zero,
    /// `U(z) = strength · |z|²`.
    Quadratic { strength: T },
    Custom(Arc<dyn Fn(Cplx<T>) -> T + Send + Sync>),
}

impl<T: Real> Confining<T> {
    pub fn eval(&self, z: Cplx<T>) -> T {
        match self {
            Confining::Zero => T::zero(),
            Confining::Quadratic { strength } => *strength * z.norm_sqr(),
            Confining::Custom(f) => f(z),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Confining<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Confining::Zero => f.write_str("Zero"),
            Confining::Quadratic { strength } => {
                f.debug_struct("Quadratic").field("strength", strength).finish()
            }
            Confining::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Full description of a gas; build one with [`GasSpec::new`] and adjust
/// fields with the fluent setters, then validate into a [`LatticeGas`].
#[derive(Debug, Clone)]
pub struct GasSpec<T> {
    pub geometry: BoundaryGeometry<T>,
    pub sites: Vec<Cplx<T>>,
    /// Inverse temperature; the soliton correspondence lives at `beta = 2`.
    pub beta: T,
    /// Chemical potential (fugacity `e^{βμ}` per charge).
    pub mu: T,
    pub confining: Confining<T>,
    /// Harmonic background parameters (multipole times, lattice index).
    pub times: TimesVector<T>,
    /// Include the charge–image self-interaction in the one-body weight.
    pub include_self_energy: bool,
    /// Extra constant added to each occupied site's log-weight, on top of
    /// `βμ` (used by gauge-adapted identifications).
    pub external_offset: Cplx<T>,
}

impl<T: Real> GasSpec<T> {
    pub fn new(geometry: BoundaryGeometry<T>, sites: Vec<Cplx<T>>) -> Self {
        Self {
            geometry,
            sites,
            beta: T::lit(2.0),
            mu: T::zero(),
            confining: Confining::Zero,
            times: TimesVector::zero(),
            include_self_energy: true,
            external_offset: Cplx::new(T::zero(), T::zero()),
        }
    }

    pub fn beta(mut self, beta: T) -> Self {
        self.beta = beta;
        self
    }

    pub fn mu(mut self, mu: T) -> Self {
        self.mu = mu;
        self
    }

    pub fn confining(mut self, confining: Confining<T>) -> Self {
        self.confining = confining;
        self
    }

    pub fn times(mut self, times: TimesVector<T>) -> Self {
        self.times = times;
        self
    }

    pub fn include_self_energy(mut self, include: bool) -> Self {
        self.include_self_energy = include;
        self
    }

    pub fn external_offset(mut self, offset: Cplx<T>) -> Self {
        self.external_offset = offset;
        self
    }

    pub fn build(self) -> Result<LatticeGas<T>> {
        LatticeGas::build(self)
    }
}

/// Energy of one occupation pattern, split by origin. Components that are
/// always real are stored real; the harmonic background is complex for
/// general times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown<T> {
    pub pair: T,
    pub self_image: T,
    pub confining: T,
    pub harmonic: Cplx<T>,
}

impl<T: Real> EnergyBreakdown<T> {
    pub fn total(&self) -> Cplx<T> {
        self.harmonic + Cplx::new(self.pair + self.self_image + self.confining, T::zero())
    }
}

/// Ensemble averages over the grand sum.
#[derive(Debug, Clone)]
pub struct Observables<T> {
    /// ⟨n⟩, the mean charge count.
    pub mean_count: Cplx<T>,
    /// ⟨E⟩, the mean total energy.
    pub mean_energy: Cplx<T>,
    /// ⟨ν_i⟩ per site.
    pub occupancy: Vec<Cplx<T>>,
}

/// Canonical sectors of the grand sum (fugacity and offset factors
/// included, so the sectors add up to the grand partition value).
#[derive(Debug, Clone)]
pub struct SectorDecomposition<T> {
    pub sectors: Vec<TauValue<T>>,
    pub grand: TauValue<T>,
}

impl<T: Real> SectorDecomposition<T> {
    /// Re-sum the sectors (should reproduce `grand` to rounding).
    pub fn reassembled(&self) -> TauValue<T> {
        let mut acc = LogSum::new();
        for s in &self.sectors {
            acc.push_value(s);
        }
        acc.total()
    }

    pub fn reassembly_rel_diff(&self) -> T {
        TauValue::rel_diff(&self.reassembled(), &self.grand)
    }
}

/// A validated gas with cached one- and two-body energies.
#[derive(Debug, Clone)]
pub struct LatticeGas<T> {
    spec: GasSpec<T>,
    /// Pairwise potentials, K×K row-major (diagonal unused).
    vmat: Vec<T>,
    self_image: Vec<T>,
    confining: Vec<T>,
    harmonic: Vec<Cplx<T>>,
}

impl<T: Real> LatticeGas<T> {
    pub fn build(spec: GasSpec<T>) -> Result<Self> {
        let k = spec.sites.len();
        if k > MAX_SITES {
            return Err(Error::Size { n: k, cap: MAX_SITES });
        }
        if !spec.beta.is_finite() || !spec.mu.is_finite() {
            return Err(Error::Input("beta and mu must be finite".into()));
        }
        let mut vmat = vec![T::zero(); k * k];
        for i in 0..k {
            spec.geometry.check_site(spec.sites[i])?;
            for j in (i + 1)..k {
                let v = spec.geometry.pair_potential(spec.sites[i], spec.sites[j])?;
                vmat[i * k + j] = v;
                vmat[j * k + i] = v;
            }
        }
        let self_image = spec
            .sites
            .iter()
            .map(|&z| {
                if spec.include_self_energy {
                    spec.geometry.self_potential(z)
                } else {
                    Ok(T::zero())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let confining = spec.sites.iter().map(|&z| spec.confining.eval(z)).collect();
        let harmonic = spec
            .sites
            .iter()
            .map(|&z| spec.geometry.harmonic_potential(z, &spec.times))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            vmat,
            self_image,
            confining,
            harmonic,
        })
    }

    pub fn spec(&self) -> &GasSpec<T> {
        &self.spec
    }

    pub fn site_count(&self) -> usize {
        self.spec.sites.len()
    }

    pub fn sites(&self) -> &[Cplx<T>] {
        &self.spec.sites
    }

    /// Pairwise potential between two distinct sites (cached).
    pub fn pair_energy(&self, i: usize, j: usize) -> T {
        assert!(i != j, "pair energy needs distinct sites");
        self.vmat[i * self.site_count() + j]
    }

    /// One-body log-weight of an occupied site:
    /// `φ_i = −β(Ṽ_i + W_i + U_i − μ) + offset`.
    pub fn site_log_weight(&self, i: usize) -> Cplx<T> {
        let real_part = self.self_image[i] + self.confining[i] - self.spec.mu;
        let energy = self.harmonic[i] + Cplx::new(real_part, T::zero());
        self.spec.external_offset - energy * self.spec.beta
    }

    /// Two-body log-weight: `A_ij = −β V_ij`.
    pub fn pair_log_weight(&self, i: usize, j: usize) -> T {
        -self.spec.beta * self.pair_energy(i, j)
    }

    fn check_occupied(&self, occupied: &[usize]) -> Result<()> {
        let k = self.site_count();
        let mut seen = 0u32;
        for &i in occupied {
            if i >= k {
                return Err(Error::Range(format!("site index {i} out of range (K = {k})")));
            }
            let bit = 1u32 << i;
            if seen & bit != 0 {
                return Err(Error::Input(format!("site index {i} listed twice")));
            }
            seen |= bit;
        }
        Ok(())
    }

    /// Energy of one configuration, split by origin.
    pub fn energy(&self, occupied: &[usize]) -> Result<EnergyBreakdown<T>> {
        self.check_occupied(occupied)?;
        Ok(self.energy_unchecked(occupied))
    }

    fn energy_unchecked(&self, occupied: &[usize]) -> EnergyBreakdown<T> {
        let mut pair = T::zero();
        for (a, &i) in occupied.iter().enumerate() {
            for &j in &occupied[a + 1..] {
                pair += self.vmat[i * self.site_count() + j];
            }
        }
        let mut self_image = T::zero();
        let mut confining = T::zero();
        let mut harmonic = Cplx::new(T::zero(), T::zero());
        for &i in occupied {
            self_image += self.self_image[i];
            confining += self.confining[i];
            harmonic += self.harmonic[i];
        }
        EnergyBreakdown {
            pair,
            self_image,
            confining,
            harmonic,
        }
    }

    /// Log of the statistical weight of one configuration:
    /// `−β E + (βμ + offset) n`.
    pub fn config_log_weight(&self, occupied: &[usize]) -> Result<Cplx<T>> {
        self.check_occupied(occupied)?;
        Ok(self.config_log_weight_unchecked(occupied))
    }

    fn config_log_weight_unchecked(&self, occupied: &[usize]) -> Cplx<T> {
        let e = self.energy_unchecked(occupied);
        let n = T::from_usize(occupied.len()).unwrap();
        let fugacity = (self.spec.external_offset
            + Cplx::new(self.spec.beta * self.spec.mu, T::zero()))
            * n;
        fugacity - e.total() * self.spec.beta
    }

    fn for_each_subset(&self, mut visit: impl FnMut(&[usize])) {
        let k = self.site_count();
        let mut occupied = Vec::with_capacity(k);
        for mask in 0u64..(1u64 << k) {
            occupied.clear();
            let mut mm = mask;
            while mm != 0 {
                occupied.push(mm.trailing_zeros() as usize);
                mm &= mm - 1;
            }
            visit(&occupied);
        }
    }

    /// Grand partition sum over all 2^K occupation patterns.
    pub fn grand_partition(&self) -> Result<TauValue<T>> {
        let mut acc = LogSum::new();
        self.for_each_subset(|occ| {
            let x = self.config_log_weight_unchecked(occ);
            let (s, c) = x.im.sin_cos();
            acc.push(x.re, Cplx::new(c, s));
        });
        Ok(acc.total())
    }

    /// Canonical partition sum over patterns with exactly `n` charges
    /// (fugacity factors included, as in the grand sum).
    pub fn canonical_partition(&self, n: usize) -> Result<TauValue<T>> {
        let k = self.site_count();
        if n > k {
            return Err(Error::Range(format!("sector {n} exceeds site count {k}")));
        }
        let mut acc = LogSum::new();
        for occ in (0..k).combinations(n) {
            let x = self.config_log_weight_unchecked(&occ);
            let (s, c) = x.im.sin_cos();
            acc.push(x.re, Cplx::new(c, s));
        }
        Ok(acc.total())
    }

    /// All canonical sectors plus the grand sum.
    pub fn sector_decomposition(&self) -> Result<SectorDecomposition<T>> {
        let sectors = (0..=self.site_count())
            .map(|n| self.canonical_partition(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(SectorDecomposition {
            sectors,
            grand: self.grand_partition()?,
        })
    }

    /// Ensemble averages over the grand sum.
    pub fn observables(&self) -> Result<Observables<T>> {
        let k = self.site_count();
        let mut z = LogSum::new();
        let mut count = LogSum::new();
        let mut energy = LogSum::new();
        let mut occ_acc: Vec<LogSum<T>> = (0..k).map(|_| LogSum::new()).collect();
        self.for_each_subset(|occ| {
            let x = self.config_log_weight_unchecked(occ);
            let (s, c) = x.im.sin_cos();
            let unit = Cplx::new(c, s);
            z.push(x.re, unit);
            let n = occ.len();
            if n > 0 {
                count.push(x.re + T::from_usize(n).unwrap().ln(), unit);
                let e = self.energy_unchecked(occ).total();
                let en = e.norm();
                if en > T::zero() {
                    energy.push(x.re + en.ln(), unit * (e / en));
                }
                for &i in occ {
                    occ_acc[i].push(x.re, unit);
                }
            }
        });
        let z = z.total();
        if z.is_zero() {
            return Err(Error::Degenerate("grand partition sum is zero".into()));
        }
        let mean_count = count.total().ratio(&z)?;
        let mean_energy = energy.total().ratio(&z)?;
        let occupancy = occ_acc
            .into_iter()
            .map(|acc| acc.total().ratio(&z))
            .collect::<Result<Vec<_>>>()?;
        Ok(Observables {
            mean_count,
            mean_energy,
            occupancy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn free_gas(sites: Vec<C64>) -> LatticeGas<f64> {
        GasSpec::new(BoundaryGeometry::FreePlane, sites).build().unwrap()
    }

    #[test]
    fn two_free_charges_hand_value() {
        // Sites {0, 2}: V = −log 2, so the doubly occupied weight is
        // e^{−2V} = 4 and Ξ = 1 + 1 + 1 + 4 = 7 at β = 2, μ = 0.
        let gas = free_gas(vec![c(0.0, 0.0), c(2.0, 0.0)]);
        let z = gas.grand_partition().unwrap().to_complex();
        assert!((z - c(7.0, 0.0)).norm() < 1e-14);
        let d = gas.sector_decomposition().unwrap();
        assert!((d.sectors[0].to_complex() - c(1.0, 0.0)).norm() < 1e-15);
        assert!((d.sectors[1].to_complex() - c(2.0, 0.0)).norm() < 1e-15);
        assert!((d.sectors[2].to_complex() - c(4.0, 0.0)).norm() < 1e-15);
        assert!(d.reassembly_rel_diff() < 1e-15);
    }

    #[test]
    fn vandermonde_sectors_on_three_roots() {
        // Sites {1, i, −1}: Σ_{|S|=2} Π|Δ|² = 2 + 4 + 2 = 8 and the full
        // triple gives |Δ|² product 16.
        let gas = free_gas(vec![c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0)]);
        let z2 = gas.canonical_partition(2).unwrap().to_complex();
        assert!((z2 - c(8.0, 0.0)).norm() < 1e-13, "z2 = {z2}");
        let z3 = gas.canonical_partition(3).unwrap().to_complex();
        assert!((z3 - c(16.0, 0.0)).norm() < 1e-13, "z3 = {z3}");
    }

    #[test]
    fn chemical_potential_scales_sectors() {
        let mu = 0.3;
        let gas0 = free_gas(vec![c(0.0, 0.0), c(2.0, 0.0)]);
        let gas = GasSpec::new(BoundaryGeometry::FreePlane, vec![c(0.0, 0.0), c(2.0, 0.0)])
            .mu(mu)
            .build()
            .unwrap();
        for n in 0..=2 {
            let z0 = gas0.canonical_partition(n).unwrap();
            let z1 = gas.canonical_partition(n).unwrap();
            let expected = z0.scale_exp(c(2.0 * mu * n as f64, 0.0));
            assert!(TauValue::rel_diff(&z1, &expected) < 1e-14);
        }
        // ⟨n⟩ by hand: (2e^{0.6} + 8e^{1.2}) / (1 + 2e^{0.6} + 4e^{1.2}).
        let obs = gas.observables().unwrap();
        let e6 = 0.6f64.exp();
        let e12 = 1.2f64.exp();
        let expected = (2.0 * e6 + 8.0 * e12) / (1.0 + 2.0 * e6 + 4.0 * e12);
        assert!((obs.mean_count - c(expected, 0.0)).norm() < 1e-13);
        // Symmetric sites share their occupancy, each giving half the mean.
        assert!((obs.occupancy[0] - obs.occupancy[1]).norm() < 1e-14);
        assert!((obs.occupancy[0] * 2.0 - obs.mean_count).norm() < 1e-13);
    }

    #[test]
    fn confining_potential_enters_the_one_body_weight() {
        let gas = GasSpec::new(BoundaryGeometry::FreePlane, vec![c(2.0, 0.0)])
            .confining(Confining::Quadratic { strength: 0.25 })
            .build()
            .unwrap();
        // φ = −β·U = −2·0.25·4 = −2.
        let phi = gas.site_log_weight(0);
        assert!((phi - c(-2.0, 0.0)).norm() < 1e-15);
        let z = gas.grand_partition().unwrap().to_complex();
        assert!((z - c(1.0 + (-2.0f64).exp(), 0.0)).norm() < 1e-15);
        let e = gas.energy(&[0]).unwrap();
        assert!((e.confining - 1.0).abs() < 1e-15);
        assert_eq!(e.pair, 0.0);
    }

    #[test]
    fn half_plane_with_imaginary_times_stays_real() {
        let g = BoundaryGeometry::HalfPlaneConductor;
        let times = crate::soliton::TimesVector::from_pos(vec![c(0.0, 0.25)]);
        g.validate_real_times(&times).unwrap();
        let gas = GasSpec::new(g, vec![c(0.4, 0.8), c(-0.3, 1.1), c(0.9, 0.5)])
            .times(times)
            .build()
            .unwrap();
        let z = gas.grand_partition().unwrap();
        assert!(z.is_positive_real(1e-14), "phase = {:?}", z.phase());
        let obs = gas.observables().unwrap();
        assert!(obs.mean_count.im.abs() < 1e-14);
        assert!(obs.mean_energy.im.abs() < 1e-13);
    }

    #[test]
    fn self_energy_flag_and_offset() {
        let g = BoundaryGeometry::HalfPlaneConductor;
        let site = c(0.0, 1.0); // Ṽ = log 2
        let with = GasSpec::new(g.clone(), vec![site]).build().unwrap();
        let phi = with.site_log_weight(0);
        assert!((phi - c(-2.0 * 2f64.ln(), 0.0)).norm() < 1e-15);
        let without = GasSpec::new(g, vec![site])
            .include_self_energy(false)
            .external_offset(c(0.7, -0.2))
            .build()
            .unwrap();
        let phi = without.site_log_weight(0);
        assert!((phi - c(0.7, -0.2)).norm() < 1e-15);
    }

    #[test]
    fn validation_errors() {
        let err = GasSpec::new(
            BoundaryGeometry::HalfPlaneConductor,
            vec![c(0.0, 1.0), c(0.5, -0.1)],
        )
        .build()
        .unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");

        let err = free_gas(vec![c(0.0, 0.0), c(2.0, 0.0)])
            .canonical_partition(3)
            .unwrap_err();
        assert!(matches!(err, Error::Range(_)), "{err}");

        let gas = free_gas(vec![c(0.0, 0.0), c(2.0, 0.0)]);
        let err = gas.energy(&[0, 0]).unwrap_err();
        assert!(matches!(err, Error::Input(_)), "{err}");

        let err = GasSpec::new(BoundaryGeometry::FreePlane, vec![c(1.0, 0.0), c(1.0, 0.0)])
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::Coincidence(_)), "{err}");
    }
}
