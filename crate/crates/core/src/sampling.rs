//! Seeded random generation of gas configurations and soliton data.
//!
//! Random regression tests and command-line studies both need the same
//! draws: well-separated sites strictly inside a wall geometry, points on
//! the walls themselves, flow times that keep the mapped gas weights real,
//! and momentum data for soliton systems. [`Sampler`] packages them behind
//! one deterministic stream — a fixed seed fully determines every draw, so
//! any reported configuration can be regenerated exactly.

use std::marker::PhantomData;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{BoundaryGeometry, ConformalMap};
use crate::scalar::{Cplx, Real};
use crate::soliton::{HierarchyKind, MomentumPair, TimesVector};
use crate::{Error, Result};

/// Rejection budget per requested site before sampling reports failure.
const ATTEMPTS_PER_SITE: usize = 400;

/// Deterministic random source for gas and soliton configurations.
///
/// All draws derive from one counter-based stream, so two samplers built
/// from the same seed produce identical sequences on every platform.
#[derive(Debug, Clone)]
pub struct Sampler<T> {
    rng: ChaCha8Rng,
    _scalar: PhantomData<T>,
}

impl<T: Real> Sampler<T> {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            _scalar: PhantomData,
        }
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: T, hi: T) -> T {
        lo + (hi - lo) * T::lit(self.rng.random::<f64>())
    }

    /// Uniform draw from the centered square with the given half-width.
    pub fn complex_in_box(&mut self, half_width: T) -> Cplx<T> {
        Cplx::new(
            self.uniform(-half_width, half_width),
            self.uniform(-half_width, half_width),
        )
    }

    /// Uniform draw from the circle of the given radius.
    pub fn on_circle(&mut self, radius: T) -> Cplx<T> {
        let theta = self.uniform(T::zero(), T::lit(2.0) * T::PI());
        Cplx::from_polar(radius, theta)
    }

    fn candidate_site(&mut self, geometry: &BoundaryGeometry<T>) -> Cplx<T> {
        match geometry {
            BoundaryGeometry::FreePlane => self.complex_in_box(T::lit(2.0)),
            BoundaryGeometry::HalfPlaneConductor => Cplx::new(
                self.uniform(T::lit(-2.0), T::lit(2.0)),
                self.uniform(T::lit(0.2), T::lit(2.2)),
            ),
            BoundaryGeometry::QuarterPlane => Cplx::new(
                self.uniform(T::lit(0.2), T::lit(2.2)),
                self.uniform(T::lit(0.2), T::lit(2.2)),
            ),
            BoundaryGeometry::DiscExteriorConductor { radius } => {
                let s = radius.max(T::one());
                let r = *radius + s * self.uniform(T::lit(0.2), T::lit(1.8));
                self.on_circle(r)
            }
            BoundaryGeometry::ConformalExterior { .. } => self.complex_in_box(T::lit(3.0)),
        }
    }

    fn clears_wall(geometry: &BoundaryGeometry<T>, z: Cplx<T>) -> bool {
        match geometry {
            // The box distributions above already keep a margin; mapped
            // exteriors need it enforced in the image, where the wall is
            // the unit circle.
            BoundaryGeometry::ConformalExterior { map } => {
                map.eval(z).norm() > T::lit(1.1)
            }
            _ => geometry.contains(z),
        }
    }

    /// `n` sites strictly inside the geometry's domain, each keeping a
    /// safety margin from the walls and at least `min_separation` from
    /// every other site. Fails with [`Error::NonConvergence`] when the
    /// rejection budget runs out (separation too large for the domain).
    pub fn interior_sites(
        &mut self,
        geometry: &BoundaryGeometry<T>,
        n: usize,
        min_separation: T,
    ) -> Result<Vec<Cplx<T>>> {
        if !(min_separation >= T::zero()) || !min_separation.is_finite() {
            return Err(Error::Input(format!(
                "minimum separation must be a nonnegative real, got {min_separation}"
            )));
        }
        let mut sites: Vec<Cplx<T>> = Vec::with_capacity(n);
        let mut attempts = 0usize;
        let budget = ATTEMPTS_PER_SITE * n.max(1);
        while sites.len() < n {
            if attempts >= budget {
                return Err(Error::NonConvergence(format!(
                    "placed {} of {n} sites in {} ({budget} draws); \
                     the separation {min_separation} may not fit the domain",
                    sites.len(),
                    geometry.name(),
                )));
            }
            attempts += 1;
            let z = self.candidate_site(geometry);
            if !Self::clears_wall(geometry, z) {
                continue;
            }
            if sites.iter().any(|&w| (z - w).norm() < min_separation) {
                continue;
            }
            sites.push(z);
        }
        Ok(sites)
    }

    /// `n` points on the grounded wall of the geometry - where the pair
    /// potential vanishes. Supported for the walls with a closed-form
    /// parameterization: the half-plane's real axis, the quarter-plane's
    /// vertical axis, exterior circles, and scale-mapped exteriors.
    pub fn conductor_wall_points(
        &mut self,
        geometry: &BoundaryGeometry<T>,
        n: usize,
    ) -> Result<Vec<Cplx<T>>> {
        let mut out = Vec::with_capacity(n);
        match geometry {
            BoundaryGeometry::FreePlane => {
                return Err(Error::Unsupported(
                    "the free plane has no wall to sample".into(),
                ))
            }
            BoundaryGeometry::HalfPlaneConductor => {
                for _ in 0..n {
                    out.push(Cplx::new(self.uniform(T::lit(-3.0), T::lit(3.0)), T::zero()));
                }
            }
            BoundaryGeometry::QuarterPlane => {
                for _ in 0..n {
                    out.push(Cplx::new(T::zero(), self.uniform(T::lit(0.05), T::lit(3.0))));
                }
            }
            BoundaryGeometry::DiscExteriorConductor { radius } => {
                for _ in 0..n {
                    let p = self.on_circle(*radius);
                    out.push(p);
                }
            }
            BoundaryGeometry::ConformalExterior { map } => match map {
                ConformalMap::Scale { radius } => {
                    for _ in 0..n {
                        let p = self.on_circle(*radius);
                        out.push(p);
                    }
                }
                _ => {
                    return Err(Error::Unsupported(
                        "this mapped wall has no closed-form parameterization to sample"
                            .into(),
                    ))
                }
            },
        }
        Ok(out)
    }

    /// `n` points on the reflecting wall, where the normal derivative of
    /// the pair potential vanishes. Only the quarter-plane has one (its
    /// horizontal axis).
    pub fn dielectric_wall_points(
        &mut self,
        geometry: &BoundaryGeometry<T>,
        n: usize,
    ) -> Result<Vec<Cplx<T>>> {
        match geometry {
            BoundaryGeometry::QuarterPlane => Ok((0..n)
                .map(|_| Cplx::new(self.uniform(T::lit(0.05), T::lit(3.0)), T::zero()))
                .collect()),
            _ => Err(Error::Unsupported(format!(
                "{} has no reflecting wall",
                geometry.name()
            ))),
        }
    }

    /// Random flow times under which the mapped gas weights stay real:
    /// purely imaginary entries for KP, real odd-indexed entries for BKP,
    /// and conjugate-paired families for the Toda lattice. Magnitudes
    /// shrink as `scale/p²` so high flows stay numerically tame.
    pub fn admissible_times(
        &mut self,
        kind: HierarchyKind,
        p_max: usize,
        scale: T,
    ) -> TimesVector<T> {
        let decay = |p: usize, s: &mut Self| {
            let cap = scale / T::from_usize(p * p).unwrap();
            s.uniform(-cap, cap)
        };
        match kind {
            HierarchyKind::Kp => TimesVector::from_pos(
                (1..=p_max)
                    .map(|p| Cplx::new(T::zero(), decay(p, self)))
                    .collect(),
            ),
            HierarchyKind::Bkp => TimesVector::from_pos(
                (1..=p_max)
                    .map(|p| {
                        if p % 2 == 1 {
                            Cplx::new(decay(p, self), T::zero())
                        } else {
                            Cplx::new(T::zero(), T::zero())
                        }
                    })
                    .collect(),
            ),
            HierarchyKind::Toda2d => {
                let pos: Vec<Cplx<T>> = (1..=p_max)
                    .map(|p| Cplx::new(decay(p, self), decay(p, self)))
                    .collect();
                let neg = pos.iter().map(|t| t.conj()).collect();
                TimesVector::new(0, pos, neg)
            }
        }
    }

    /// Unconstrained complex times in both families, magnitudes shrinking
    /// as `scale/p²`, lattice index zero.
    pub fn complex_times(&mut self, p_max: usize, scale: T) -> TimesVector<T> {
        let draw = |s: &mut Self| -> Vec<Cplx<T>> {
            (1..=p_max)
                .map(|p| {
                    let cap = scale / T::from_usize(p * p).unwrap();
                    Cplx::new(s.uniform(-cap, cap), s.uniform(-cap, cap))
                })
                .collect()
        };
        let pos = draw(self);
        let neg = draw(self);
        TimesVector::new(0, pos, neg)
    }

    /// `n` momentum pairs with magnitudes confined to `[lo, hi]` and
    /// uniform arguments, so every pole of a shifted tau-function lies in
    /// that annulus and contours fit cleanly on both sides.
    pub fn banded_momenta(&mut self, n: usize, lo: T, hi: T) -> Result<Vec<MomentumPair<T>>> {
        if !(lo > T::zero() && hi > lo) {
            return Err(Error::Input(format!(
                "momentum band needs 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok((0..n)
            .map(|_| {
                let ra = self.uniform(lo, hi);
                let a = self.on_circle(ra);
                let rb = self.uniform(lo, hi);
                let b = self.on_circle(rb);
                MomentumPair::new(a, b)
            })
            .collect())
    }

    /// `n` momentum pairs on the positive real axis in `[lo, hi]`,
    /// suitable for real-valued tau-functions.
    pub fn real_momenta(&mut self, n: usize, lo: T, hi: T) -> Result<Vec<MomentumPair<T>>> {
        if !(lo > T::zero() && hi > lo) {
            return Err(Error::Input(format!(
                "momentum range needs 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok((0..n)
            .map(|_| {
                MomentumPair::new(
                    Cplx::new(self.uniform(lo, hi), T::zero()),
                    Cplx::new(self.uniform(lo, hi), T::zero()),
                )
            })
            .collect())
    }

    /// `n` complex phase offsets with real and imaginary parts in
    /// `[-scale, scale]`.
    pub fn phase_offsets(&mut self, n: usize, scale: T) -> Vec<Cplx<T>> {
        (0..n)
            .map(|_| Cplx::new(self.uniform(-scale, scale), self.uniform(-scale, scale)))
            .collect()
    }

    /// `n` real log-weights in `[-scale, scale]`.
    pub fn log_weights(&mut self, n: usize, scale: T) -> Vec<T> {
        (0..n).map(|_| self.uniform(-scale, scale)).collect()
    }

    /// `n` generic complex sites in a centered box, pairwise separated by
    /// at least `min_separation` (for discrete measures away from any wall
    /// geometry).
    pub fn sites_in_box(
        &mut self,
        n: usize,
        half_width: T,
        min_separation: T,
    ) -> Result<Vec<Cplx<T>>> {
        self.interior_sites(&BoundaryGeometry::FreePlane, n, min_separation)
            .map(|sites| {
                let rescale = half_width / T::lit(2.0);
                sites.into_iter().map(|z| z * rescale).collect()
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;

    fn geometries() -> Vec<BoundaryGeometry<f64>> {
        vec![
            BoundaryGeometry::FreePlane,
            BoundaryGeometry::HalfPlaneConductor,
            BoundaryGeometry::QuarterPlane,
            BoundaryGeometry::disc_exterior(0.7).unwrap(),
            BoundaryGeometry::conformal_exterior(ConformalMap::Scale { radius: 0.8 }),
            BoundaryGeometry::conformal_exterior(ConformalMap::JoukowskiInverse),
        ]
    }

    #[test]
    fn a_seed_determines_every_draw() {
        let mut a = Sampler::<f64>::from_seed(7);
        let mut b = Sampler::<f64>::from_seed(7);
        let geo = BoundaryGeometry::disc_exterior(0.5).unwrap();
        assert_eq!(
            a.interior_sites(&geo, 6, 0.05).unwrap(),
            b.interior_sites(&geo, 6, 0.05).unwrap()
        );
        assert_eq!(
            a.admissible_times(HierarchyKind::Toda2d, 4, 0.5),
            b.admissible_times(HierarchyKind::Toda2d, 4, 0.5)
        );
        let mut c = Sampler::<f64>::from_seed(8);
        assert_ne!(
            c.interior_sites(&geo, 6, 0.05).unwrap(),
            b.interior_sites(&geo, 6, 0.05).unwrap()
        );
    }

    #[test]
    fn interior_sites_respect_domain_and_separation() {
        for geo in geometries() {
            let mut s = Sampler::<f64>::from_seed(11);
            let sites = s.interior_sites(&geo, 8, 0.08).unwrap();
            assert_eq!(sites.len(), 8, "{}", geo.name());
            for (i, &z) in sites.iter().enumerate() {
                assert!(geo.contains(z), "{} produced {z} outside", geo.name());
                for &w in &sites[..i] {
                    assert!(
                        (z - w).norm() >= 0.08,
                        "{}: sites {z} and {w} too close",
                        geo.name()
                    );
                }
            }
        }
    }

    #[test]
    fn impossible_separation_reports_nonconvergence() {
        let mut s = Sampler::<f64>::from_seed(13);
        let err = s
            .interior_sites(&BoundaryGeometry::QuarterPlane, 40, 3.0)
            .unwrap_err();
        assert!(matches!(err, Error::NonConvergence(_)));
    }

    #[test]
    fn wall_points_lie_on_the_grounded_wall() {
        let mut s = Sampler::<f64>::from_seed(17);

        let wall = s
            .conductor_wall_points(&BoundaryGeometry::HalfPlaneConductor, 30)
            .unwrap();
        assert!(wall.iter().all(|p| p.im == 0.0));

        let wall = s
            .conductor_wall_points(&BoundaryGeometry::QuarterPlane, 30)
            .unwrap();
        assert!(wall.iter().all(|p| p.re == 0.0 && p.im > 0.0));

        let disc = BoundaryGeometry::disc_exterior(0.7).unwrap();
        let wall = s.conductor_wall_points(&disc, 30).unwrap();
        assert!(wall.iter().all(|p| (p.norm() - 0.7).abs() <= 1e-12));

        let scaled =
            BoundaryGeometry::conformal_exterior(ConformalMap::Scale { radius: 0.8 });
        let wall = s.conductor_wall_points(&scaled, 30).unwrap();
        assert!(wall.iter().all(|p| (p.norm() - 0.8).abs() <= 1e-12));

        // And the potential indeed vanishes there, against a few charges.
        let charges = s.interior_sites(&disc, 3, 0.1).unwrap();
        for &p in &s.conductor_wall_points(&disc, 10).unwrap() {
            for &w in &charges {
                assert!(disc.pair_potential_on_closure(p, w).unwrap().abs() <= 1e-12);
            }
        }

        assert!(matches!(
            s.conductor_wall_points(&BoundaryGeometry::FreePlane, 3),
            Err(Error::Unsupported(_))
        ));
        let joukowski =
            BoundaryGeometry::conformal_exterior(ConformalMap::<f64>::JoukowskiInverse);
        assert!(matches!(
            s.conductor_wall_points(&joukowski, 3),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn dielectric_points_cover_only_the_reflecting_wall() {
        let mut s = Sampler::<f64>::from_seed(19);
        let pts = s
            .dielectric_wall_points(&BoundaryGeometry::QuarterPlane, 20)
            .unwrap();
        assert!(pts.iter().all(|p| p.im == 0.0 && p.re > 0.0));
        assert!(matches!(
            s.dielectric_wall_points(&BoundaryGeometry::HalfPlaneConductor, 3),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn admissible_times_keep_each_hierarchy_real() {
        let mut s = Sampler::<f64>::from_seed(23);

        let kp = s.admissible_times(HierarchyKind::Kp, 4, 0.6);
        assert_eq!(kp.pos_len(), 4);
        assert_eq!(kp.neg_len(), 0);
        for p in 1..=4 {
            assert_eq!(kp.pos(p).re, 0.0);
        }

        let bkp = s.admissible_times(HierarchyKind::Bkp, 4, 0.6);
        for p in 1..=4 {
            if p % 2 == 0 {
                assert_eq!(bkp.pos(p), C64::new(0.0, 0.0));
            } else {
                assert_eq!(bkp.pos(p).im, 0.0);
                assert!(bkp.pos(p).re != 0.0);
            }
        }

        let toda = s.admissible_times(HierarchyKind::Toda2d, 3, 0.6);
        for p in 1..=3 {
            assert_eq!(toda.neg(p), toda.pos(p).conj());
        }
    }

    #[test]
    fn momentum_draws_stay_in_their_bands() {
        let mut s = Sampler::<f64>::from_seed(29);
        for pair in s.banded_momenta(10, 0.7, 1.9).unwrap() {
            assert!((0.7..=1.9).contains(&pair.a.norm()));
            assert!((0.7..=1.9).contains(&pair.b.norm()));
        }
        for pair in s.real_momenta(10, 0.5, 2.0).unwrap() {
            assert!(pair.a.im == 0.0 && (0.5..=2.0).contains(&pair.a.re));
            assert!(pair.b.im == 0.0 && (0.5..=2.0).contains(&pair.b.re));
        }
        assert!(s.banded_momenta(2, 0.0, 1.0).is_err());
        assert!(s.real_momenta(2, 2.0, 1.0).is_err());
    }
}
