//! Partition chain of a discretised normal matrix model.
//!
//! For lattice sites `ζ_i` carrying one-body weights `w_i = e^{ω_i}` and
//! multipole times `(t, t̄)` the `m`-point partition value is the canonical
//! β = 2 Coulomb sector in a flat background,
//!
//! ```text
//!   Z_m = Σ_{|S|=m} Π_{i<j∈S} |ζ_i − ζ_j|²  Π_{i∈S} w_i e^{Σ_p (ζ_i^p t_p + ζ̄_i^p t̄_p)} ,
//! ```
//!
//! with `Z_0 = 1`. By Cauchy–Binet the same sum is the determinant of the
//! `m × m` moment matrix `M_jk = Σ_i ζ_i^j ζ̄_i^k w_i e^{…}`. This module
//! implements both routes independently — subset enumeration ([`ZChain`]) and
//! an equilibrated log-space LU determinant — plus a quadrature route
//! ([`continuous_partition`]) for continuous weight densities, so each can
//! serve as an oracle for the others and for the charge-sector limit of the
//! Toda tau-chain.
//!
//! Time derivatives of `Z_m` are exact: each occupied subset contributes an
//! exponential in the times, so `∂_{t_p}` multiplies its term by the power sum
//! `Σ_{i∈S} ζ_i^p` (and `∂_{t̄_p}` by `Σ_{i∈S} ζ̄_i^p`).

use crate::gas::Confining;
use crate::scalar::{powi, Cplx, Real};
use crate::soliton::{TimeIndex, TimesVector, MAX_SOLITONS};
use crate::tau::{LogSum, TauValue};
use crate::{Error, Result};
use itertools::Itertools;
use std::sync::Arc;

/// Largest site count accepted by the enumeration routes (2^K configurations).
pub const MAX_SITES: usize = MAX_SOLITONS;

/// Discrete measure: weighted sites in the complex plane.
///
/// `log_weights[i]` is `ω_i = ln w_i`; the time-dependent part of the weight
/// is supplied per call through a [`TimesVector`] (which must carry no lattice
/// index: `times.m == 0`).
#[derive(Clone, Debug)]
pub struct ZChain<T: Real> {
    sites: Vec<Cplx<T>>,
    log_weights: Vec<T>,
    /// Cached `2 ln|ζ_i − ζ_j|` for i < j (row-major upper triangle).
    pair_log: Vec<T>,
}

impl<T: Real> ZChain<T> {
    /// Build a chain from sites and per-site log-weights.
    pub fn new(sites: Vec<Cplx<T>>, log_weights: Vec<T>) -> Result<Self> {
        if sites.len() != log_weights.len() {
            return Err(Error::Input(format!(
                "{} sites but {} log-weights",
                sites.len(),
                log_weights.len()
            )));
        }
        if sites.len() > MAX_SITES {
            return Err(Error::Size {
                n: sites.len(),
                cap: MAX_SITES,
            });
        }
        for (i, z) in sites.iter().enumerate() {
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::Input(format!("site {i} is not finite")));
            }
        }
        for (i, w) in log_weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::Input(format!("log-weight {i} is not finite")));
            }
        }
        let n = sites.len();
        let mut pair_log = vec![T::zero(); n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (sites[i] - sites[j]).norm();
                if d <= T::coincidence_tol() * (sites[i].norm() + sites[j].norm() + T::one()) {
                    return Err(Error::Coincidence(format!(
                        "sites {i} and {j} coincide; the Vandermonde weight vanishes"
                    )));
                }
                let two = T::lit(2.0);
                pair_log[i * n + j] = two * d.ln();
                pair_log[j * n + i] = pair_log[i * n + j];
            }
        }
        Ok(Self {
            sites,
            log_weights,
            pair_log,
        })
    }

    /// Chain whose weights are `e^{−2 U(ζ_i)}` for a confining potential `U`.
    pub fn from_confining(sites: Vec<Cplx<T>>, confining: &Confining<T>) -> Result<Self> {
        let log_weights = sites
            .iter()
            .map(|&z| -T::lit(2.0) * confining.eval(z))
            .collect();
        Self::new(sites, log_weights)
    }

    /// Multiply every weight by `|ζ_i|^{2ℓ}` (the charge-sector side weight
    /// that survives an off-center sector extraction).
    pub fn charge_weighted(mut self, ell: i64) -> Result<Self> {
        if ell != 0 {
            for (w, z) in self.log_weights.iter_mut().zip(self.sites.iter()) {
                let r = z.norm();
                if r == T::zero() {
                    return Err(Error::Domain(
                        "charge weighting |ζ|^{2ℓ} needs nonzero sites".to_string(),
                    ));
                }
                *w += T::lit(2.0) * T::from_i64(ell).unwrap() * r.ln();
            }
        }
        Ok(self)
    }

    /// Number of sites.
    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    /// The sites.
    pub fn sites(&self) -> &[Cplx<T>] {
        &self.sites
    }

    /// Static log-weights (without the time-dependent factor).
    pub fn log_weights(&self) -> &[T] {
        &self.log_weights
    }

    /// Full one-body exponent `ω_i + Σ_p (ζ_i^p t_p + ζ̄_i^p t̄_p)`.
    pub fn site_exponent(&self, i: usize, times: &TimesVector<T>) -> Cplx<T> {
        let z = self.sites[i];
        let zb = z.conj();
        let mut acc = Cplx::new(self.log_weights[i], T::zero());
        let mut zp = Cplx::new(T::one(), T::zero());
        for p in 1..=times.pos_len() {
            zp *= z;
            acc += zp * times.pos(p);
        }
        let mut zbp = Cplx::new(T::one(), T::zero());
        for p in 1..=times.neg_len() {
            zbp *= zb;
            acc += zbp * times.neg(p);
        }
        acc
    }

    pub fn check_times(&self, times: &TimesVector<T>) -> Result<()> {
        if times.m != 0 {
            return Err(Error::Mode(
                "partition-chain times carry no lattice index; set times.m = 0".to_string(),
            ));
        }
        Ok(())
    }

    /// `Z_m` by direct subset enumeration.
    pub fn partition(&self, m: usize, times: &TimesVector<T>) -> Result<TauValue<T>> {
        self.partition_derivative(m, times, &[])
    }

    /// `Z_m` with `m` allowed to run off the chain (negative or beyond the
    /// site count), where the partition value is exactly zero.
    pub fn partition_signed(&self, m: i64, times: &TimesVector<T>) -> Result<TauValue<T>> {
        if m < 0 || m as usize > self.site_count() {
            self.check_times(times)?;
            return Ok(TauValue::zero());
        }
        self.partition(m as usize, times)
    }

    /// Exact derivative `∂_{q_1} … ∂_{q_k} Z_m` with respect to the listed
    /// times (`Pos(p)` ↦ `t_p`, `Neg(p)` ↦ `t̄_p`). An empty list gives `Z_m`.
    pub fn partition_derivative(
        &self,
        m: usize,
        times: &TimesVector<T>,
        orders: &[TimeIndex],
    ) -> Result<TauValue<T>> {
        self.check_times(times)?;
        let n = self.site_count();
        if m > n {
            return Ok(TauValue::zero());
        }
        let expo: Vec<Cplx<T>> = (0..n).map(|i| self.site_exponent(i, times)).collect();
        // Per-site derivative slopes for each requested order.
        let slopes: Vec<Vec<Cplx<T>>> = orders
            .iter()
            .map(|&q| {
                self.sites
                    .iter()
                    .map(|&z| match q {
                        TimeIndex::Pos(p) => powi(z, p as i64),
                        TimeIndex::Neg(p) => powi(z.conj(), p as i64),
                    })
                    .collect()
            })
            .collect();
        let mut acc = LogSum::new();
        for subset in (0..n).combinations(m) {
            let mut log_re = T::zero();
            let mut log_im = T::zero();
            for (a, &i) in subset.iter().enumerate() {
                log_re += expo[i].re;
                log_im += expo[i].im;
                for &j in subset.iter().skip(a + 1) {
                    log_re += self.pair_log[i * n + j];
                }
            }
            let mut weight = Cplx::new(T::one(), T::zero());
            for slope in &slopes {
                let mut s = Cplx::new(T::zero(), T::zero());
                for &i in &subset {
                    s += slope[i];
                }
                weight *= s;
            }
            let phase = Cplx::from_polar(T::one(), log_im) * weight;
            acc.push(log_re, phase);
        }
        Ok(acc.total())
    }

    /// Moment matrix `M_jk = Σ_i ζ_i^j ζ̄_i^k w_i e^{…}` for `j, k < m`,
    /// returned as `e^{log_prefactor} · entries` (row-major).
    pub fn moment_matrix(&self, m: usize, times: &TimesVector<T>) -> Result<MomentMatrix<T>> {
        self.check_times(times)?;
        let n = self.site_count();
        let mut entries = vec![Cplx::new(T::zero(), T::zero()); m * m];
        if m == 0 {
            return Ok(MomentMatrix {
                dim: 0,
                entries,
                log_prefactor: T::zero(),
            });
        }
        let expo: Vec<Cplx<T>> = (0..n).map(|i| self.site_exponent(i, times)).collect();
        let log_prefactor = expo
            .iter()
            .map(|e| e.re)
            .fold(T::neg_infinity(), T::max)
            .max(T::zero().ln_1p()); // −∞ only when there are no sites
        let log_prefactor = if log_prefactor.is_finite() {
            log_prefactor
        } else {
            T::zero()
        };
        for i in 0..n {
            let w = (expo[i] - Cplx::new(log_prefactor, T::zero())).exp();
            let z = self.sites[i];
            let mut pj = vec![Cplx::new(T::one(), T::zero()); m];
            for j in 1..m {
                pj[j] = pj[j - 1] * z;
            }
            for j in 0..m {
                let row = w * pj[j];
                for (k, p) in pj.iter().enumerate() {
                    entries[j * m + k] += row * p.conj();
                }
            }
        }
        Ok(MomentMatrix {
            dim: m,
            entries,
            log_prefactor,
        })
    }

    /// `Z_m` through the Cauchy–Binet determinant of the moment matrix.
    ///
    /// The determinant is evaluated in a polynomial basis orthonormalised
    /// against the magnitude of the one-body factors (Stieltjes recurrence
    /// with full modified Gram–Schmidt). The change of basis is triangular
    /// with known diagonal, so the determinant transforms by an exactly
    /// compensated factor while the matrix itself stays far from the
    /// monomial basis's exponential ill-conditioning.
    pub fn determinant_partition(&self, m: usize, times: &TimesVector<T>) -> Result<TauValue<T>> {
        self.check_times(times)?;
        if m == 0 {
            return Ok(TauValue::one());
        }
        let n = self.site_count();
        if m > n {
            // Rank of the moment matrix is at most the site count.
            return Ok(TauValue::zero());
        }
        let scale = self
            .sites
            .iter()
            .map(|z| z.norm())
            .fold(T::zero(), T::max);
        let scale = if scale > T::zero() { scale } else { T::one() };
        let expo: Vec<Cplx<T>> = (0..n).map(|i| self.site_exponent(i, times)).collect();
        let shift = expo.iter().map(|e| e.re).fold(T::neg_infinity(), T::max);
        let u: Vec<Cplx<T>> = expo
            .iter()
            .map(|&e| (e - Cplx::new(shift, T::zero())).exp())
            .collect();
        let rho: Vec<T> = u.iter().map(|w| w.norm()).collect();
        let zs: Vec<Cplx<T>> = self.sites.iter().map(|&z| z / scale).collect();

        // Monic-then-normalised basis vectors sampled on the sites:
        // q_j = (z·q_{j−1} − Σ_k ⟨q_k, z·q_{j−1}⟩_ρ q_k) / ν_j, built with the
        // positive inner product ⟨x, y⟩_ρ = Σ_i ρ_i conj(x_i) y_i.
        let dot = |x: &[Cplx<T>], y: &[Cplx<T>]| -> Cplx<T> {
            let mut acc = Cplx::new(T::zero(), T::zero());
            for i in 0..n {
                acc += x[i].conj() * y[i] * rho[i];
            }
            acc
        };
        let mut basis: Vec<Vec<Cplx<T>>> = Vec::with_capacity(m);
        // Sum of log(ν_j · leading-coefficient ratios): the determinant in
        // the q-basis differs from the monic one by Π ν_j² Π λ_j², where λ_j
        // is the accumulated normalisation of the degree-raising seed.
        let mut log_basis_det = T::zero();
        for j in 0..m {
            let mut v: Vec<Cplx<T>> = if let Some(prev) = basis.last() {
                zs.iter().zip(prev).map(|(&z, &q)| z * q).collect()
            } else {
                vec![Cplx::new(T::one(), T::zero()); n]
            };
            for q in &basis {
                let c = dot(q, &v);
                for i in 0..n {
                    v[i] -= q[i] * c;
                }
            }
            let nu = dot(&v, &v).re.max(T::zero()).sqrt();
            if !(nu > T::zero()) || !nu.is_finite() {
                // Degenerate measure (all magnitudes collapsed): fall back on
                // the rank statement — the determinant vanishes.
                return Ok(TauValue::zero());
            }
            for x in v.iter_mut() {
                *x = *x / nu;
            }
            // The seed z·q_{j−1} has leading coefficient equal to q_{j−1}'s,
            // so after normalisation the leading coefficient of q_j is
            // (leading of q_{j−1})/ν_j; the monic determinant compensation
            // therefore accumulates every ν with multiplicity (m − j).
            log_basis_det += T::from_usize(m - j).unwrap() * nu.ln();
            basis.push(v);
        }

        let mut entries = vec![Cplx::new(T::zero(), T::zero()); m * m];
        for i in 0..n {
            for j in 0..m {
                let row = u[i] * basis[j][i];
                for k in 0..m {
                    entries[j * m + k] += row * basis[k][i].conj();
                }
            }
        }
        let det = log_det_lu(entries, m);
        let mf = T::from_usize(m).unwrap();
        // Undo the equilibration and the basis normalisation:
        // Z_m = e^{m·shift} · scale^{m(m−1)} · (Π_j ν-factors)² · det.
        Ok(det.scale_exp(Cplx::new(
            mf * shift
                + mf * (mf - T::one()) * scale.ln()
                + T::lit(2.0) * log_basis_det,
            T::zero(),
        )))
    }
}

/// Moment matrix scaled so its entries stay in ordinary floating range:
/// the true matrix is `e^{log_prefactor} · entries`.
#[derive(Clone, Debug)]
pub struct MomentMatrix<T: Real> {
    /// Dimension `m`.
    pub dim: usize,
    /// Row-major scaled entries.
    pub entries: Vec<Cplx<T>>,
    /// Common log-scale factored out of every entry.
    pub log_prefactor: T,
}

impl<T: Real> MomentMatrix<T> {
    /// Entry `(j, k)` of the scaled matrix.
    pub fn entry(&self, j: usize, k: usize) -> Cplx<T> {
        self.entries[j * self.dim + k]
    }

    /// Determinant of the *true* matrix, in log-space.
    pub fn determinant(&self) -> TauValue<T> {
        let det = log_det_lu(self.entries.clone(), self.dim);
        det.scale_exp(Cplx::new(
            T::from_usize(self.dim).unwrap() * self.log_prefactor,
            T::zero(),
        ))
    }
}

/// LU determinant with partial pivoting, accumulated in log-space.
///
/// A pivot collapsing below `coincidence_tol` times the initial entry scale is
/// treated as structural rank deficiency and yields an exact zero.
fn log_det_lu<T: Real>(mut a: Vec<Cplx<T>>, n: usize) -> TauValue<T> {
    if n == 0 {
        return TauValue::one();
    }
    debug_assert_eq!(a.len(), n * n);
    let scale0 = a.iter().map(|c| c.norm()).fold(T::zero(), T::max);
    if scale0 == T::zero() || !scale0.is_finite() {
        return TauValue::zero();
    }
    let tol = scale0 * T::coincidence_tol();
    let mut log_mag = T::zero();
    let mut phase = Cplx::new(T::one(), T::zero());
    for col in 0..n {
        let mut best = col;
        let mut best_v = a[col * n + col].norm();
        for r in (col + 1)..n {
            let v = a[r * n + col].norm();
            if v > best_v {
                best = r;
                best_v = v;
            }
        }
        if best_v <= tol {
            return TauValue::zero();
        }
        if best != col {
            for c2 in 0..n {
                a.swap(col * n + c2, best * n + c2);
            }
            phase = -phase;
        }
        let piv = a[col * n + col];
        let piv_norm = piv.norm();
        log_mag += piv_norm.ln();
        phase *= piv / piv_norm;
        for r in (col + 1)..n {
            let f = a[r * n + col] / piv;
            if f.norm() > T::zero() {
                for c2 in (col + 1)..n {
                    let sub = f * a[col * n + c2];
                    a[r * n + c2] -= sub;
                }
            }
        }
    }
    TauValue::from_polar_log(log_mag, phase)
}

/// Continuous weight density sampled on a square midpoint grid.
#[derive(Clone)]
pub struct GriddedDensity<T: Real> {
    /// Nonnegative weight `w(z)`; fold any hard cutoff into the closure.
    pub weight: Arc<dyn Fn(Cplx<T>) -> T + Send + Sync>,
    /// Centre of the integration square.
    pub center: Cplx<T>,
    /// Half side length of the integration square.
    pub half_width: T,
}

impl<T: Real> std::fmt::Debug for GriddedDensity<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GriddedDensity")
            .field("center", &self.center)
            .field("half_width", &self.half_width)
            .finish_non_exhaustive()
    }
}

/// Grid-refinement controls for [`continuous_partition`].
#[derive(Clone, Debug)]
pub struct RefineOptions<T: Real> {
    /// Cells per side on the coarsest grid.
    pub initial_cells: usize,
    /// How many times the linear resolution may be doubled.
    pub max_doublings: usize,
    /// Relative agreement between successive levels that counts as converged.
    pub rel_tol: T,
}

impl<T: Real> Default for RefineOptions<T> {
    fn default() -> Self {
        Self {
            initial_cells: 64,
            max_doublings: 4,
            rel_tol: T::lit(1e-5),
        }
    }
}

/// `Z_m` for a continuous weight density, via the moment-matrix determinant
/// on successively refined midpoint grids.
///
/// Fails with [`Error::NonConvergence`] when the last two refinement levels
/// still disagree by more than `opts.rel_tol`.
pub fn continuous_partition<T: Real>(
    density: &GriddedDensity<T>,
    m: usize,
    times: &TimesVector<T>,
    opts: &RefineOptions<T>,
) -> Result<TauValue<T>> {
    if times.m != 0 {
        return Err(Error::Mode(
            "partition-chain times carry no lattice index; set times.m = 0".to_string(),
        ));
    }
    if density.half_width <= T::zero() || !density.half_width.is_finite() {
        return Err(Error::Input("integration half-width must be positive".to_string()));
    }
    if opts.initial_cells < 2 {
        return Err(Error::Input("need at least 2 cells per side".to_string()));
    }
    if m == 0 {
        return Ok(TauValue::one());
    }
    let mut cells = opts.initial_cells;
    let mut previous: Option<TauValue<T>> = None;
    let mut last_rel = T::infinity();
    for _ in 0..=opts.max_doublings {
        let value = grid_determinant(density, m, times, cells);
        if let Some(prev) = &previous {
            last_rel = TauValue::rel_diff(prev, &value);
            if last_rel <= opts.rel_tol {
                return Ok(value);
            }
        }
        previous = Some(value);
        cells *= 2;
    }
    Err(Error::NonConvergence(format!(
        "moment determinant still moving by {last_rel:e} after {} doublings",
        opts.max_doublings
    )))
}

fn grid_determinant<T: Real>(
    density: &GriddedDensity<T>,
    m: usize,
    times: &TimesVector<T>,
    cells: usize,
) -> TauValue<T> {
    let h = density.half_width * T::lit(2.0) / T::from_usize(cells).unwrap();
    let area = h * h;
    let scale = density.half_width;
    let mut entries = vec![Cplx::new(T::zero(), T::zero()); m * m];
    let mut pj = vec![Cplx::new(T::one(), T::zero()); m];
    for u in 0..cells {
        let x = density.center.re - density.half_width
            + h * (T::from_usize(u).unwrap() + T::lit(0.5));
        for v in 0..cells {
            let y = density.center.im - density.half_width
                + h * (T::from_usize(v).unwrap() + T::lit(0.5));
            let z = Cplx::new(x, y);
            let w = (density.weight)(z);
            if w <= T::zero() {
                continue;
            }
            // Time-dependent part of the one-body weight.
            let mut texp = Cplx::new(T::zero(), T::zero());
            let mut zp = Cplx::new(T::one(), T::zero());
            for p in 1..=times.pos_len() {
                zp *= z;
                texp += zp * times.pos(p);
            }
            let mut zbp = Cplx::new(T::one(), T::zero());
            let zb = z.conj();
            for p in 1..=times.neg_len() {
                zbp *= zb;
                texp += zbp * times.neg(p);
            }
            let cell_w = texp.exp() * (w * area);
            let zs = z / scale;
            pj[0] = Cplx::new(T::one(), T::zero());
            for j in 1..m {
                pj[j] = pj[j - 1] * zs;
            }
            for j in 0..m {
                let row = cell_w * pj[j];
                for (k, p) in pj.iter().enumerate() {
                    entries[j * m + k] += row * p.conj();
                }
            }
        }
    }
    let det = log_det_lu(entries, m);
    let mf = T::from_usize(m).unwrap();
    det.scale_exp(Cplx::new(mf * (mf - T::one()) * scale.ln(), T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn cube_roots_chain() -> ZChain<f64> {
        ZChain::new(vec![c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0)], vec![0.0; 3]).unwrap()
    }

    #[test]
    fn vandermonde_sums_match_hand_values() {
        let chain = cube_roots_chain();
        let t = TimesVector::zero();
        // Pairs {1,i}, {1,−1}, {i,−1}: |Δ|² = 2, 4, 2 → Z_2 = 8.
        let z2 = chain.partition(2, &t).unwrap();
        assert_relative_eq!(z2.to_complex().re, 8.0, max_relative = 1e-13);
        // Full triple: 2·4·2 = 16.
        let z3 = chain.partition(3, &t).unwrap();
        assert_relative_eq!(z3.to_complex().re, 16.0, max_relative = 1e-13);
        assert!(chain.partition(0, &t).unwrap().is_positive_real(1e-15));
        assert_relative_eq!(chain.partition(0, &t).unwrap().to_complex().re, 1.0);
    }

    #[test]
    fn moment_matrix_matches_hand_values() {
        let chain = cube_roots_chain();
        let t = TimesVector::zero();
        let mm = chain.moment_matrix(2, &t).unwrap();
        assert_relative_eq!(mm.log_prefactor, 0.0);
        assert_relative_eq!(mm.entry(0, 0).re, 3.0, max_relative = 1e-14);
        assert_relative_eq!(mm.entry(0, 1).im, -1.0, max_relative = 1e-14);
        assert!(mm.entry(0, 1).re.abs() < 1e-14);
        assert_relative_eq!(mm.entry(1, 0).im, 1.0, max_relative = 1e-14);
        assert_relative_eq!(mm.entry(1, 1).re, 3.0, max_relative = 1e-14);
        // det [[3, −i], [i, 3]] = 8 = Z_2.
        let det = mm.determinant();
        assert_relative_eq!(det.to_complex().re, 8.0, max_relative = 1e-13);
    }

    #[test]
    fn determinant_route_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sites: Vec<C64> = (0..6)
            .map(|_| {
                let r = 0.5 + rng.random::<f64>();
                let th = rng.random::<f64>() * std::f64::consts::TAU;
                C64::from_polar(r, th)
            })
            .collect();
        let weights: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
        let chain = ZChain::new(sites, weights).unwrap();
        let mut t = TimesVector::zero();
        t.set_pos(1, c(0.21, 0.13));
        t.set_pos(2, c(-0.05, 0.04));
        t.set_neg(1, c(0.21, -0.13));
        t.set_neg(2, c(-0.05, -0.04));
        for m in 0..=6 {
            let byenum = chain.partition(m, &t).unwrap();
            let bydet = chain.determinant_partition(m, &t).unwrap();
            assert!(
                TauValue::rel_diff(&byenum, &bydet) < 1e-12,
                "m = {m}: enumeration vs determinant"
            );
        }
    }

    #[test]
    fn equilibration_handles_widely_scaled_sites() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sites: Vec<C64> = (0..7)
            .map(|_| {
                let r = 30.0 + 40.0 * rng.random::<f64>();
                let th = rng.random::<f64>() * std::f64::consts::TAU;
                C64::from_polar(r, th)
            })
            .collect();
        let chain = ZChain::new(sites, vec![0.0; 7]).unwrap();
        let t = TimesVector::zero();
        for m in [3usize, 5, 7] {
            let byenum = chain.partition(m, &t).unwrap();
            let bydet = chain.determinant_partition(m, &t).unwrap();
            assert!(
                TauValue::rel_diff(&byenum, &bydet) < 1e-10,
                "m = {m}: scaled-site determinant drifted"
            );
        }
    }

    #[test]
    fn chain_derivatives_are_exact() {
        // Two sites: Z_1(t) = Σ_i w_i e^{ζ_i t_1 + ζ̄_i t̄_1}.
        let sites = vec![c(1.0, 0.0), c(0.0, 1.0)];
        let chain = ZChain::new(sites.clone(), vec![0.2, -0.1]).unwrap();
        let mut t = TimesVector::zero();
        t.set_pos(1, c(0.2, 0.0));
        t.set_neg(1, c(0.2, 0.0));
        let hand = |slope: fn(C64) -> C64| -> C64 {
            let mut acc = c(0.0, 0.0);
            for (i, &z) in sites.iter().enumerate() {
                let w = if i == 0 { 0.2f64 } else { -0.1 };
                let e = z * c(0.2, 0.0) + z.conj() * c(0.2, 0.0);
                acc += slope(z) * (w + e.re).exp() * C64::from_polar(1.0, e.im);
            }
            acc
        };
        let d1 = chain
            .partition_derivative(1, &t, &[TimeIndex::Pos(1)])
            .unwrap();
        assert!((d1.to_complex() - hand(|z| z)).norm() < 1e-13);
        let dbar = chain
            .partition_derivative(1, &t, &[TimeIndex::Neg(1)])
            .unwrap();
        assert!((dbar.to_complex() - hand(|z| z.conj())).norm() < 1e-13);
        let dmix = chain
            .partition_derivative(1, &t, &[TimeIndex::Pos(1), TimeIndex::Neg(1)])
            .unwrap();
        assert!((dmix.to_complex() - hand(|z| z * z.conj())).norm() < 1e-13);
    }

    #[test]
    fn off_chain_sectors_vanish_structurally() {
        let chain = cube_roots_chain();
        let t = TimesVector::zero();
        assert!(chain.partition(4, &t).unwrap().is_zero());
        assert!(chain.partition_signed(-1, &t).unwrap().is_zero());
        assert!(chain.determinant_partition(4, &t).unwrap().is_zero());
    }

    #[test]
    fn charge_weighting_multiplies_site_moduli() {
        let sites = vec![c(2.0, 0.0), c(0.0, 3.0)];
        let plain = ZChain::new(sites.clone(), vec![0.0; 2]).unwrap();
        let weighted = ZChain::new(sites, vec![0.0; 2])
            .unwrap()
            .charge_weighted(1)
            .unwrap();
        let t = TimesVector::zero();
        // Z_1 gains Σ w_i |ζ_i|²: 4 + 9 vs 2 + 3 … compare against a direct sum.
        let z1 = weighted.partition(1, &t).unwrap().to_complex().re;
        assert_relative_eq!(z1, 4.0 + 9.0, max_relative = 1e-13);
        let z1_plain = plain.partition(1, &t).unwrap().to_complex().re;
        assert_relative_eq!(z1_plain, 2.0, max_relative = 1e-13);
    }

    #[test]
    fn gaussian_weight_reproduces_factorial_moments() {
        // w(z) = e^{−|z|²}: ∫ z^j z̄^k w = π · j! · δ_jk → Z_2 = π².
        let density = GriddedDensity {
            weight: Arc::new(|z: C64| (-z.norm_sqr()).exp()),
            center: c(0.0, 0.0),
            half_width: 5.0,
        };
        let opts = RefineOptions {
            initial_cells: 64,
            max_doublings: 3,
            rel_tol: 1e-5,
        };
        let z2 = continuous_partition(&density, 2, &TimesVector::zero(), &opts).unwrap();
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        assert!(
            (z2.to_complex().re - pi2).abs() / pi2 < 1e-3,
            "Z_2 = {} vs π² = {}",
            z2.to_complex().re,
            pi2
        );
    }

    #[test]
    fn refinement_failure_is_reported() {
        // An oscillation at the cell scale keeps successive levels apart.
        let density = GriddedDensity {
            weight: Arc::new(|z: C64| 1.0 + 0.9 * (53.0 * z.re + 0.7).sin()),
            center: c(0.0, 0.0),
            half_width: 2.0,
        };
        let opts = RefineOptions {
            initial_cells: 4,
            max_doublings: 1,
            rel_tol: 1e-12,
        };
        let err = continuous_partition(&density, 1, &TimesVector::zero(), &opts).unwrap_err();
        assert!(matches!(err, Error::NonConvergence(_)));
    }

    #[test]
    fn input_validation_rejects_bad_chains() {
        let err = ZChain::new(vec![c(1.0, 0.0)], vec![]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        let err = ZChain::new(vec![c(1.0, 0.0), c(1.0, 0.0)], vec![0.0; 2]).unwrap_err();
        assert!(matches!(err, Error::Coincidence(_)));
        let chain = cube_roots_chain();
        let mut t = TimesVector::zero();
        t.m = 1;
        assert!(matches!(
            chain.partition(1, &t).unwrap_err(),
            Error::Mode(_)
        ));
    }
}
