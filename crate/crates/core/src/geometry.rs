//! Plane domains with boundary image charges.
//!
//! Each geometry defines the three ingredients of a two-dimensional Coulomb
//! energy at inverse temperature β:
//!
//! * a pair potential `V(z, z′)` — the bare `−log|z−z′|` plus the image
//!   terms the boundary induces,
//! * a self-interaction `Ṽ(z)` — the energy of a charge against its own
//!   images,
//! * a harmonic external potential — the multipole background controlled by
//!   the times vector (and, for exterior geometries, the lattice index `m`).
//!
//! Conductor walls pin `V` to zero on the wall; insulating walls make the
//! normal derivative vanish. The exterior-of-a-disc geometry is exactly the
//! conformal exterior geometry under the scaling map `ζ ↦ ζ/R`, which the
//! tests assert.

use crate::scalar::{Cplx, Real};
use crate::soliton::{HierarchyKind, TimesVector};
use crate::{Error, Result};
use std::fmt;
use std::sync::Arc;

/// A conformal map from a physical exterior domain onto the exterior of the
/// unit disc (`|f(ζ)| > 1` inside the domain).
#[derive(Clone)]
pub enum ConformalMap<T> {
    /// `f(ζ) = ζ / radius`: the exterior of a disc of that radius.
    Scale { radius: T },
    /// Inverse of `w ↦ w + 1/w`: the exterior of the segment `[−2, 2]`,
    /// taking the branch with `|f| ≥ 1`.
    JoukowskiInverse,
    /// User-supplied map; the caller is responsible for `|f| > 1` on its
    /// intended domain.
    Custom(Arc<dyn Fn(Cplx<T>) -> Cplx<T> + Send + Sync>),
}

impl<T: Real> ConformalMap<T> {
    pub fn eval(&self, z: Cplx<T>) -> Cplx<T> {
        let one = Cplx::new(T::one(), T::zero());
        match self {
            ConformalMap::Scale { radius } => z / *radius,
            ConformalMap::JoukowskiInverse => {
                // Both candidates w± = z/2 ± sqrt(z²/4 − 1) multiply to 1;
                // keep the exterior one.
                let s = (z * z * T::lit(0.25) - one).sqrt();
                let half = z * T::lit(0.5);
                let w_plus = half + s;
                let w_minus = half - s;
                if w_plus.norm() >= w_minus.norm() {
                    w_plus
                } else {
                    w_minus
                }
            }
            ConformalMap::Custom(f) => f(z),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for ConformalMap<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConformalMap::Scale { radius } => f.debug_struct("Scale").field("radius", radius).finish(),
            ConformalMap::JoukowskiInverse => f.write_str("JoukowskiInverse"),
            ConformalMap::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// A plane domain together with its boundary condition.
#[derive(Debug, Clone)]
pub enum BoundaryGeometry<T> {
    /// The whole plane, no boundary.
    FreePlane,
    /// Upper half-plane `Im z > 0`, grounded conductor on the real axis.
    HalfPlaneConductor,
    /// First quadrant `Re z > 0, Im z > 0`: grounded conductor on the
    /// imaginary axis, insulating wall on the real axis.
    QuarterPlane,
    /// Exterior `|z| > R` of a grounded conducting disc.
    DiscExteriorConductor { radius: T },
    /// Exterior of a grounded conductor described by a conformal map onto
    /// the exterior of the unit disc.
    ConformalExterior { map: ConformalMap<T> },
}

impl<T: Real> BoundaryGeometry<T> {
    pub fn disc_exterior(radius: T) -> Result<Self> {
        if !(radius > T::zero()) || !radius.is_finite() {
            return Err(Error::Input(format!(
                "disc radius must be positive and finite (got {radius})"
            )));
        }
        Ok(Self::DiscExteriorConductor { radius })
    }

    pub fn conformal_exterior(map: ConformalMap<T>) -> Self {
        Self::ConformalExterior { map }
    }

    /// The hierarchy whose soliton tau-function realises a gas in this
    /// geometry.
    pub fn natural_hierarchy(&self) -> HierarchyKind {
        match self {
            BoundaryGeometry::FreePlane => HierarchyKind::Toda2d,
            BoundaryGeometry::HalfPlaneConductor => HierarchyKind::Kp,
            BoundaryGeometry::QuarterPlane => HierarchyKind::Bkp,
            BoundaryGeometry::DiscExteriorConductor { .. }
            | BoundaryGeometry::ConformalExterior { .. } => HierarchyKind::Toda2d,
        }
    }

    pub fn contains(&self, z: Cplx<T>) -> bool {
        match self {
            BoundaryGeometry::FreePlane => z.re.is_finite() && z.im.is_finite(),
            BoundaryGeometry::HalfPlaneConductor => z.im > T::zero(),
            BoundaryGeometry::QuarterPlane => z.re > T::zero() && z.im > T::zero(),
            BoundaryGeometry::DiscExteriorConductor { radius } => z.norm() > *radius,
            BoundaryGeometry::ConformalExterior { map } => map.eval(z).norm() > T::one(),
        }
    }

    pub fn check_site(&self, z: Cplx<T>) -> Result<()> {
        if self.contains(z) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "site {z} lies outside the {} domain",
                self.name()
            )))
        }
    }

    /// Short kebab-case label, used in error messages and reports.
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryGeometry::FreePlane => "free-plane",
            BoundaryGeometry::HalfPlaneConductor => "half-plane",
            BoundaryGeometry::QuarterPlane => "quarter-plane",
            BoundaryGeometry::DiscExteriorConductor { .. } => "disc-exterior",
            BoundaryGeometry::ConformalExterior { .. } => "conformal-exterior",
        }
    }

    /// Image of a site on the exterior of the unit disc, for geometries
    /// that are conformally equivalent to it.
    pub fn unit_disc_image(&self, z: Cplx<T>) -> Option<Cplx<T>> {
        match self {
            BoundaryGeometry::DiscExteriorConductor { radius } => Some(z / *radius),
            BoundaryGeometry::ConformalExterior { map } => Some(map.eval(z)),
            _ => None,
        }
    }

    /// Pair potential `V(z, w)`: bare logarithmic repulsion plus boundary
    /// images. Symmetric in its arguments for every geometry.
    pub fn pair_potential(&self, z: Cplx<T>, w: Cplx<T>) -> Result<T> {
        self.check_site(z)?;
        self.check_site(w)?;
        self.pair_potential_formula(z, w)
    }

    /// Pair potential extended by continuity to the closure of the domain:
    /// same closed form as [`BoundaryGeometry::pair_potential`] but without
    /// the interior check on `z`, so it can be evaluated with `z` on a wall
    /// (where a conductor potential vanishes and a dielectric one has zero
    /// normal derivative). The charge `w` must still be an interior point;
    /// that keeps every image singularity away from the boundary.
    pub fn pair_potential_on_closure(&self, z: Cplx<T>, w: Cplx<T>) -> Result<T> {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::Domain(format!("evaluation point {z} is not finite")));
        }
        self.check_site(w)?;
        self.pair_potential_formula(z, w)
    }

    fn pair_potential_formula(&self, z: Cplx<T>, w: Cplx<T>) -> Result<T> {
        let scale = z.norm() + w.norm() + T::one();
        if (z - w).norm() <= T::coincidence_tol() * scale {
            return Err(Error::Coincidence(format!(
                "pair potential diverges: sites {z} and {w} coincide"
            )));
        }
        let one = Cplx::new(T::one(), T::zero());
        Ok(match self {
            BoundaryGeometry::FreePlane => -(z - w).norm().ln(),
            BoundaryGeometry::HalfPlaneConductor => {
                -(z - w).norm().ln() + (z.conj() - w).norm().ln()
            }
            BoundaryGeometry::QuarterPlane => {
                -(z - w).norm().ln() - (z.conj() - w).norm().ln()
                    + (z + w).norm().ln()
                    + (z.conj() + w).norm().ln()
            }
            BoundaryGeometry::DiscExteriorConductor { radius } => {
                let r = *radius;
                -(z - w).norm().ln() + (z.conj() * w - Cplx::new(r * r, T::zero())).norm().ln()
                    - r.ln()
            }
            BoundaryGeometry::ConformalExterior { map } => {
                let fz = map.eval(z);
                let fw = map.eval(w);
                if (fz - fw).norm() <= T::coincidence_tol() * (fz.norm() + fw.norm() + T::one()) {
                    return Err(Error::Coincidence(format!(
                        "conformal images of {z} and {w} coincide"
                    )));
                }
                -(fz - fw).norm().ln() + (fz.conj() * fw - one).norm().ln()
            }
        })
    }

    /// Self-interaction `Ṽ(z)` of a charge with its own boundary images
    /// (zero in the free plane).
    pub fn self_potential(&self, z: Cplx<T>) -> Result<T> {
        self.check_site(z)?;
        let one = Cplx::new(T::one(), T::zero());
        let two = T::lit(2.0);
        Ok(match self {
            BoundaryGeometry::FreePlane => T::zero(),
            BoundaryGeometry::HalfPlaneConductor => (z.conj() - z).norm().ln(),
            BoundaryGeometry::QuarterPlane => {
                (z.conj() - z).norm().ln() - (z.conj() + z).norm().ln() - (two * z.norm()).ln()
            }
            BoundaryGeometry::DiscExteriorConductor { radius } => {
                let r = *radius;
                (z - Cplx::new(r * r, T::zero()) / z.conj()).norm().ln() - r.ln()
            }
            BoundaryGeometry::ConformalExterior { map } => {
                let fz = map.eval(z);
                (fz - one / fz.conj()).norm().ln()
            }
        })
    }

    /// External harmonic potential at `z` for the given times. Real-valued
    /// whenever the times satisfy [`BoundaryGeometry::validate_real_times`];
    /// complex in general.
    pub fn harmonic_potential(&self, z: Cplx<T>, times: &TimesVector<T>) -> Result<Cplx<T>> {
        self.check_site(z)?;
        let half = T::lit(0.5);
        let zero = Cplx::new(T::zero(), T::zero());
        match self {
            BoundaryGeometry::FreePlane => {
                self.reject_lattice_index(times)?;
                // −(1/2) Σ_p (z^p t_p + z̄^p t̄_p)
                let mut acc = zero;
                let zb = z.conj();
                let mut zp = Cplx::new(T::one(), T::zero());
                let mut zbp = zp;
                for p in 1..=times.pos_len().max(times.neg_len()) {
                    zp *= z;
                    zbp *= zb;
                    acc += zp * times.pos(p) + zbp * times.neg(p);
                }
                Ok(-acc * half)
            }
            BoundaryGeometry::HalfPlaneConductor => {
                self.reject_lattice_index(times)?;
                self.reject_negative_times(times)?;
                // −(1/2) Σ_p (z^p − z̄^p) t_p
                let mut acc = zero;
                let zb = z.conj();
                let mut zp = Cplx::new(T::one(), T::zero());
                let mut zbp = zp;
                for p in 1..=times.pos_len() {
                    zp *= z;
                    zbp *= zb;
                    acc += (zp - zbp) * times.pos(p);
                }
                Ok(-acc * half)
            }
            BoundaryGeometry::QuarterPlane => {
                self.reject_lattice_index(times)?;
                self.reject_negative_times(times)?;
                // −(1/2) Σ_{p odd} (z^p + z̄^p) t_p
                let mut acc = zero;
                let zb = z.conj();
                let mut zp = Cplx::new(T::one(), T::zero());
                let mut zbp = zp;
                for p in 1..=times.pos_len() {
                    zp *= z;
                    zbp *= zb;
                    if p % 2 == 1 {
                        acc += (zp + zbp) * times.pos(p);
                    } else if times.pos(p) != zero {
                        return Err(Error::Mode(format!(
                            "the quadrant background uses odd multipoles only; t_{p} must vanish"
                        )));
                    }
                }
                Ok(-acc * half)
            }
            BoundaryGeometry::DiscExteriorConductor { .. }
            | BoundaryGeometry::ConformalExterior { .. } => {
                let f = self.unit_disc_image(z).expect("exterior geometry");
                Ok(exterior_harmonic(f, times))
            }
        }
    }

    fn reject_lattice_index(&self, times: &TimesVector<T>) -> Result<()> {
        if times.m != 0 {
            return Err(Error::Mode(format!(
                "the {} background carries no lattice index; m must be 0",
                self.name()
            )));
        }
        Ok(())
    }

    fn reject_negative_times(&self, times: &TimesVector<T>) -> Result<()> {
        let zero = Cplx::new(T::zero(), T::zero());
        for p in 1..=times.neg_len() {
            if times.neg(p) != zero {
                return Err(Error::Mode(format!(
                    "the {} background has no negative times; t̄_{p} must vanish",
                    self.name()
                )));
            }
        }
        Ok(())
    }

    /// Check the reality conditions under which the harmonic potential (and
    /// hence the whole gas energy) is real in this geometry:
    ///
    /// * free plane and exteriors: `t̄_p = conj(t_p)`;
    /// * half-plane: purely imaginary `t_p`, no negative times;
    /// * quadrant: real odd `t_p`, no negative times.
    pub fn validate_real_times(&self, times: &TimesVector<T>) -> Result<()> {
        let tol = T::coincidence_tol();
        match self {
            BoundaryGeometry::FreePlane
            | BoundaryGeometry::DiscExteriorConductor { .. }
            | BoundaryGeometry::ConformalExterior { .. } => {
                for p in 1..=times.pos_len().max(times.neg_len()) {
                    let t = times.pos(p);
                    let tb = times.neg(p);
                    if (tb - t.conj()).norm() > tol * (t.norm() + T::one()) {
                        return Err(Error::Mode(format!(
                            "real exterior background needs t̄_{p} = conj(t_{p})"
                        )));
                    }
                }
                Ok(())
            }
            BoundaryGeometry::HalfPlaneConductor => {
                self.reject_lattice_index(times)?;
                self.reject_negative_times(times)?;
                for p in 1..=times.pos_len() {
                    let t = times.pos(p);
                    if t.re.abs() > tol * (t.norm() + T::one()) {
                        return Err(Error::Mode(format!(
                            "real half-plane background needs purely imaginary t_{p}"
                        )));
                    }
                }
                Ok(())
            }
            BoundaryGeometry::QuarterPlane => {
                self.reject_lattice_index(times)?;
                self.reject_negative_times(times)?;
                for p in 1..=times.pos_len() {
                    let t = times.pos(p);
                    if p % 2 == 0 {
                        if t != Cplx::new(T::zero(), T::zero()) {
                            return Err(Error::Mode(format!(
                                "the quadrant background uses odd multipoles only; t_{p} must vanish"
                            )));
                        }
                    } else if t.im.abs() > tol * (t.norm() + T::one()) {
                        return Err(Error::Mode(format!(
                            "real quadrant background needs real t_{p}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Harmonic background on the exterior of the unit disc, expressed through
/// the conformal image `f` of the site:
///
/// ```text
/// W(f) = −m·log|f| − (1/2) Σ_p [ (f^p − conj(f)^{−p}) t_p + conj(f^p − conj(f)^{−p}) t̄_p ]
/// ```
fn exterior_harmonic<T: Real>(f: Cplx<T>, times: &TimesVector<T>) -> Cplx<T> {
    let half = T::lit(0.5);
    let mut acc = Cplx::new(T::zero(), T::zero());
    let u = Cplx::new(T::one(), T::zero()) / f.conj();
    let mut fp = Cplx::new(T::one(), T::zero());
    let mut up = fp;
    for p in 1..=times.pos_len().max(times.neg_len()) {
        fp *= f;
        up *= u;
        let c = fp - up;
        acc += c * times.pos(p) + c.conj() * times.neg(p);
    }
    let mut w = -acc * half;
    if times.m != 0 {
        w -= Cplx::new(T::from_i64(times.m).unwrap() * f.norm().ln(), T::zero());
    }
    w
}
