//! N-soliton tau-functions of the KP, BKP, and two-dimensional Toda
//! hierarchies in Hirota form.
//!
//! A system is a list of momentum pairs `(a_i, b_i)` plus constant phase
//! offsets; its tau-function is the 2^N-term superposition
//!
//! ```text
//! tau = Σ_{ν ∈ {0,1}^N} exp( Σ_{i<j} A_ij ν_i ν_j + Σ_i φ_i(t) ν_i )
//! ```
//!
//! where `e^{A_ij}` is the pairwise phase shift of the hierarchy and
//! `φ_i(t)` is the linear soliton phase. The sum is evaluated in log-space
//! with a Gray-code walk (one bit flips between consecutive subsets, so each
//! term costs O(N) updates), with periodic from-scratch refreshes to stop
//! floating-point drift, and an optional deterministic parallel mode.

use crate::scalar::{powi, Cplx, Real};
use crate::tau::{LogSum, TauValue};
use crate::{Error, Result};
use rayon::prelude::*;

/// Hard cap on the soliton count: the evaluator enumerates 2^N subsets.
pub const MAX_SOLITONS: usize = 24;

/// Which integrable hierarchy the system belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HierarchyKind {
    /// Kadomtsev–Petviashvili: times `t_1, t_2, …`.
    Kp,
    /// B-type KP: odd times `t_1, t_3, …` only.
    Bkp,
    /// Two-dimensional Toda lattice: an integer index `m`, positive times
    /// `t_p`, and negative times `t̄_p`.
    Toda2d,
}

/// One soliton's momentum pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumPair<T> {
    pub a: Cplx<T>,
    pub b: Cplx<T>,
}

impl<T: Real> MomentumPair<T> {
    pub fn new(a: Cplx<T>, b: Cplx<T>) -> Self {
        Self { a, b }
    }
}

/// Evolution parameters of a tau-function evaluation.
///
/// `pos[p-1]` holds `t_p`, `neg[p-1]` holds `t̄_p` (Toda only), and `m` is
/// the Toda lattice index. Entries beyond the stored length are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TimesVector<T> {
    pub m: i64,
    pos: Vec<Cplx<T>>,
    neg: Vec<Cplx<T>>,
}

impl<T: Real> TimesVector<T> {
    pub fn new(m: i64, pos: Vec<Cplx<T>>, neg: Vec<Cplx<T>>) -> Self {
        Self { m, pos, neg }
    }

    /// KP/BKP-style times: no lattice index, no negative times.
    pub fn from_pos(pos: Vec<Cplx<T>>) -> Self {
        Self::new(0, pos, Vec::new())
    }

    pub fn zero() -> Self {
        Self::new(0, Vec::new(), Vec::new())
    }

    /// `t_p` (1-indexed); zero beyond the stored range.
    pub fn pos(&self, p: usize) -> Cplx<T> {
        assert!(p >= 1, "times are 1-indexed");
        self.pos
            .get(p - 1)
            .copied()
            .unwrap_or_else(|| Cplx::new(T::zero(), T::zero()))
    }

    /// `t̄_p` (1-indexed); zero beyond the stored range.
    pub fn neg(&self, p: usize) -> Cplx<T> {
        assert!(p >= 1, "times are 1-indexed");
        self.neg
            .get(p - 1)
            .copied()
            .unwrap_or_else(|| Cplx::new(T::zero(), T::zero()))
    }

    pub fn pos_len(&self) -> usize {
        self.pos.len()
    }

    pub fn neg_len(&self) -> usize {
        self.neg.len()
    }

    pub fn set_pos(&mut self, p: usize, value: Cplx<T>) {
        assert!(p >= 1, "times are 1-indexed");
        if self.pos.len() < p {
            self.pos.resize(p, Cplx::new(T::zero(), T::zero()));
        }
        self.pos[p - 1] = value;
    }

    pub fn set_neg(&mut self, p: usize, value: Cplx<T>) {
        assert!(p >= 1, "times are 1-indexed");
        if self.neg.len() < p {
            self.neg.resize(p, Cplx::new(T::zero(), T::zero()));
        }
        self.neg[p - 1] = value;
    }

    /// Copy with a different lattice index.
    pub fn with_m(&self, m: i64) -> Self {
        let mut out = self.clone();
        out.m = m;
        out
    }

    /// Copy with `t_p` replaced.
    pub fn with_pos(&self, p: usize, value: Cplx<T>) -> Self {
        let mut out = self.clone();
        out.set_pos(p, value);
        out
    }

    /// Copy with `t̄_p` replaced.
    pub fn with_neg(&self, p: usize, value: Cplx<T>) -> Self {
        let mut out = self.clone();
        out.set_neg(p, value);
        out
    }

    /// Copy with every time rescaled by its degree: `t_p → r^p t_p` and
    /// `t̄_p → r^p t̄_p` (the lattice index is kept). This is the time
    /// dilation that accompanies shrinking the excluded disc of radius `r`.
    pub fn scaled(&self, r: T) -> Self {
        let mut out = self.clone();
        let mut rp = T::one();
        for p in 1..=out.pos.len().max(out.neg.len()) {
            rp *= r;
            if p <= out.pos.len() {
                out.pos[p - 1] = out.pos[p - 1] * rp;
            }
            if p <= out.neg.len() {
                out.neg[p - 1] = out.neg[p - 1] * rp;
            }
        }
        out
    }

    /// Apply a Miwa shift as a literal truncated series on the time entries:
    /// positive shifts add `sign·steps·z^{-p}/p` to `t_p` and negative shifts
    /// add `sign·z^{p}/p` to `t̄_p`, for `p ≤ p_max` (odd `p` only when
    /// `odd_only` is set). This is the slowly-converging counterpart of the
    /// closed-form factors in [`SolitonSystem::shift_factor`], kept as an
    /// independent cross-check.
    pub fn shifted_by_series(&self, shift: &TimeShift<T>, p_max: usize, odd_only: bool) -> Self {
        let mut out = self.clone();
        match *shift {
            TimeShift::Pos { z, sign, steps } => {
                let amp = T::from_i32(sign as i32 * steps as i32).unwrap();
                let zinv = Cplx::new(T::one(), T::zero()) / z;
                let mut zp = Cplx::new(T::one(), T::zero());
                for p in 1..=p_max {
                    zp *= zinv;
                    if odd_only && p % 2 == 0 {
                        continue;
                    }
                    let delta = zp * (amp / T::from_usize(p).unwrap());
                    out.set_pos(p, out.pos(p) + delta);
                }
            }
            TimeShift::Neg { z, sign } => {
                let amp = T::from_i32(sign as i32).unwrap();
                let mut zp = Cplx::new(T::one(), T::zero());
                for p in 1..=p_max {
                    zp *= z;
                    if odd_only && p % 2 == 0 {
                        continue;
                    }
                    let delta = zp * (amp / T::from_usize(p).unwrap());
                    out.set_neg(p, out.neg(p) + delta);
                }
            }
        }
        out
    }
}

/// A Miwa time shift with a closed-form effect on each soliton factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeShift<T> {
    /// `t → t + sign·steps·[z⁻¹]`, i.e. `t_p += sign·steps·z^{-p}/p`.
    /// BKP flows act on odd times only and require `steps == 2` (a single
    /// step would introduce a square-root branch).
    Pos { z: Cplx<T>, sign: i8, steps: u8 },
    /// `t̄ → t̄ + sign·[z]`, i.e. `t̄_p += sign·z^{p}/p` (Toda only).
    Neg { z: Cplx<T>, sign: i8 },
}

/// Which time a derivative or phase-slope request refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeIndex {
    /// `t_p`, 1-indexed.
    Pos(usize),
    /// `t̄_p`, 1-indexed (Toda only).
    Neg(usize),
}

/// How the 2^N superposition is enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Gray-code walk, O(N) incremental updates per term (default).
    Gray,
    /// Recompute every term from scratch in binary order — an independent
    /// ordering/composition used to cross-check the incremental walk.
    Naive,
    /// Gray-code walk over fixed-size chunks combined in index order, so the
    /// result is bit-identical regardless of how many worker threads run.
    Parallel,
}

/// Evaluation tuning knobs.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub mode: EvalMode,
    /// Recompute the incremental exponent from scratch every this many terms
    /// to bound floating-point drift (0 = never).
    pub refresh_every: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: EvalMode::Gray,
            refresh_every: 1024,
        }
    }
}

/// An N-soliton system with precomputed pairwise phase shifts.
#[derive(Debug, Clone)]
pub struct SolitonSystem<T> {
    kind: HierarchyKind,
    pairs: Vec<MomentumPair<T>>,
    phase_offsets: Vec<Cplx<T>>,
    /// Pairwise phase-shift coefficients `e^{A_ij}`, flattened row-major.
    lmat: Vec<Cplx<T>>,
    /// Principal logs `A_ij` of the phase shifts.
    amat: Vec<Cplx<T>>,
}

impl<T: Real> SolitonSystem<T> {
    /// Build a system, computing all pairwise phase shifts up front.
    ///
    /// Fails if two solitons coincide (vanishing phase-shift numerator), if a
    /// momentum combination sits on a pole of the phase-shift formula, or —
    /// for the Toda hierarchy — if any momentum is zero.
    pub fn new(
        kind: HierarchyKind,
        pairs: Vec<MomentumPair<T>>,
        phase_offsets: Vec<Cplx<T>>,
    ) -> Result<Self> {
        let n = pairs.len();
        if phase_offsets.len() != n {
            return Err(Error::Input(format!(
                "{} momentum pairs but {} phase offsets",
                n,
                phase_offsets.len()
            )));
        }
        if n > MAX_SOLITONS {
            return Err(Error::Size {
                n,
                cap: MAX_SOLITONS,
            });
        }
        if kind == HierarchyKind::Toda2d {
            for (i, p) in pairs.iter().enumerate() {
                let tol = T::coincidence_tol();
                if p.a.norm() <= tol || p.b.norm() <= tol {
                    return Err(Error::Domain(format!(
                        "Toda momenta must be nonzero (soliton {i})"
                    )));
                }
            }
        }
        let mut lmat = vec![Cplx::new(T::zero(), T::zero()); n * n];
        let mut amat = vec![Cplx::new(T::zero(), T::zero()); n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let l = pair_phase_shift(kind, &pairs[i], &pairs[j], i, j)?;
                let a = l.ln();
                lmat[i * n + j] = l;
                lmat[j * n + i] = l;
                amat[i * n + j] = a;
                amat[j * n + i] = a;
            }
        }
        Ok(Self {
            kind,
            pairs,
            phase_offsets,
            lmat,
            amat,
        })
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn kind(&self) -> HierarchyKind {
        self.kind
    }

    pub fn momenta(&self) -> &[MomentumPair<T>] {
        &self.pairs
    }

    pub fn phase_offsets(&self) -> &[Cplx<T>] {
        &self.phase_offsets
    }

    /// Copy with different constant phase offsets (same momenta and shifts).
    pub fn with_phase_offsets(&self, phase_offsets: Vec<Cplx<T>>) -> Result<Self> {
        if phase_offsets.len() != self.n() {
            return Err(Error::Input(format!(
                "{} momentum pairs but {} phase offsets",
                self.n(),
                phase_offsets.len()
            )));
        }
        let mut out = self.clone();
        out.phase_offsets = phase_offsets;
        Ok(out)
    }

    /// Pairwise phase-shift coefficient `e^{A_ij}`, `i ≠ j`.
    pub fn phase_shift(&self, i: usize, j: usize) -> Cplx<T> {
        assert!(i != j, "phase shift is defined for distinct solitons");
        self.lmat[i * self.n() + j]
    }

    /// Principal log `A_ij` of the pairwise phase shift.
    pub fn log_phase_shift(&self, i: usize, j: usize) -> Cplx<T> {
        assert!(i != j, "phase shift is defined for distinct solitons");
        self.amat[i * self.n() + j]
    }

    /// Smallest and largest momentum magnitude over all `|a_i|, |b_i|` —
    /// the pole radii of the closed-form shift factors. `None` for N = 0.
    pub fn momentum_radii(&self) -> Option<(T, T)> {
        if self.pairs.is_empty() {
            return None;
        }
        let mut lo = T::infinity();
        let mut hi = T::zero();
        for p in &self.pairs {
            for r in [p.a.norm(), p.b.norm()] {
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        Some((lo, hi))
    }

    /// Reject times vectors that are structurally invalid for the hierarchy.
    pub fn check_times(&self, times: &TimesVector<T>) -> Result<()> {
        let zero = Cplx::new(T::zero(), T::zero());
        match self.kind {
            HierarchyKind::Kp | HierarchyKind::Bkp => {
                if times.m != 0 {
                    return Err(Error::Mode(
                        "only the Toda hierarchy carries a lattice index m".into(),
                    ));
                }
                if times.neg.iter().any(|&c| c != zero) {
                    return Err(Error::Mode(
                        "only the Toda hierarchy carries negative times".into(),
                    ));
                }
                if self.kind == HierarchyKind::Bkp {
                    for (k, &c) in times.pos.iter().enumerate() {
                        if (k + 1) % 2 == 0 && c != zero {
                            return Err(Error::Mode(format!(
                                "BKP flows are odd-indexed; t_{} must vanish",
                                k + 1
                            )));
                        }
                    }
                }
                Ok(())
            }
            HierarchyKind::Toda2d => Ok(()),
        }
    }

    /// Linear soliton phase `φ_i(t)` including the constant offset.
    pub fn soliton_phase(&self, i: usize, times: &TimesVector<T>) -> Result<Cplx<T>> {
        self.check_times(times)?;
        Ok(self.soliton_phase_raw(i, times))
    }

    fn soliton_phase_raw(&self, i: usize, times: &TimesVector<T>) -> Cplx<T> {
        let MomentumPair { a, b } = self.pairs[i];
        let one = Cplx::new(T::one(), T::zero());
        let mut phi = self.phase_offsets[i];
        match self.kind {
            HierarchyKind::Kp => {
                // φ += Σ_p (a^p − (−b)^p) t_p
                let mut ap = one;
                let mut bp = one;
                for (k, &t) in times.pos.iter().enumerate() {
                    let _ = k;
                    ap *= a;
                    bp *= -b;
                    phi += (ap - bp) * t;
                }
            }
            HierarchyKind::Bkp => {
                // φ += Σ_{p odd} (a^p + b^p) t_p
                let mut ap = one;
                let mut bp = one;
                for (k, &t) in times.pos.iter().enumerate() {
                    ap *= a;
                    bp *= b;
                    if (k + 1) % 2 == 1 {
                        phi += (ap + bp) * t;
                    }
                }
            }
            HierarchyKind::Toda2d => {
                // φ += m·Log(a/b) + Σ_p (a^p − b^p) t_p − Σ_p (a^{-p} − b^{-p}) t̄_p.
                // The principal log is safe: e^{m·Log(a/b)} = (a/b)^m exactly
                // for integer m, whatever the branch.
                if times.m != 0 {
                    phi += (a / b).ln() * T::from_i64(times.m).unwrap();
                }
                let mut ap = one;
                let mut bp = one;
                for &t in &times.pos {
                    ap *= a;
                    bp *= b;
                    phi += (ap - bp) * t;
                }
                let ainv = one / a;
                let binv = one / b;
                let mut aip = one;
                let mut bip = one;
                for &tb in &times.neg {
                    aip *= ainv;
                    bip *= binv;
                    phi -= (aip - bip) * tb;
                }
            }
        }
        phi
    }

    /// Slope `∂φ_i/∂t` of the soliton phase with respect to one time.
    pub fn phase_derivative(&self, i: usize, which: TimeIndex) -> Result<Cplx<T>> {
        let MomentumPair { a, b } = self.pairs[i];
        match (self.kind, which) {
            (_, TimeIndex::Pos(0)) | (_, TimeIndex::Neg(0)) => {
                Err(Error::Input("times are 1-indexed".into()))
            }
            (HierarchyKind::Kp, TimeIndex::Pos(p)) => {
                Ok(powi(a, p as i64) - powi(-b, p as i64))
            }
            (HierarchyKind::Bkp, TimeIndex::Pos(p)) => {
                if p % 2 == 0 {
                    Err(Error::Mode(format!(
                        "BKP flows are odd-indexed; t_{p} is not a flow"
                    )))
                } else {
                    Ok(powi(a, p as i64) + powi(b, p as i64))
                }
            }
            (HierarchyKind::Toda2d, TimeIndex::Pos(p)) => {
                Ok(powi(a, p as i64) - powi(b, p as i64))
            }
            (HierarchyKind::Toda2d, TimeIndex::Neg(p)) => {
                Ok(powi(b, -(p as i64)) - powi(a, -(p as i64)))
            }
            (_, TimeIndex::Neg(_)) => Err(Error::Mode(
                "only the Toda hierarchy carries negative times".into(),
            )),
        }
    }

    /// Closed-form multiplicative factor a Miwa shift applies to soliton `i`:
    /// `exp(φ_i(t + shift) − φ_i(t))`, exact to all orders.
    ///
    /// Fails when `z` lands on a zero or pole of the factor (either one makes
    /// the shifted superposition degenerate).
    pub fn shift_factor(&self, i: usize, shift: &TimeShift<T>) -> Result<Cplx<T>> {
        let MomentumPair { a, b } = self.pairs[i];
        let check = |factors: &[Cplx<T>], z: Cplx<T>| -> Result<()> {
            let scale = z.norm() + a.norm() + b.norm() + T::one();
            for f in factors {
                if f.norm() <= T::coincidence_tol() * scale {
                    return Err(Error::Pole(format!(
                        "shift point z = {z} sits on a zero or pole of the factor for soliton {i}"
                    )));
                }
            }
            Ok(())
        };
        match (self.kind, *shift) {
            (_, TimeShift::Pos { sign, steps, .. })
                if !(sign == 1 || sign == -1) || !(steps == 1 || steps == 2) =>
            {
                Err(Error::Input(format!(
                    "shift sign must be ±1 and steps 1 or 2 (got sign {sign}, steps {steps})"
                )))
            }
            (_, TimeShift::Neg { sign, .. }) if !(sign == 1 || sign == -1) => Err(Error::Input(
                format!("shift sign must be ±1 (got {sign})"),
            )),
            (HierarchyKind::Kp, TimeShift::Pos { z, sign, steps }) => {
                // t + [z⁻¹] multiplies e^{φ} by (1 + b/z)/(1 − a/z).
                let num = z + b;
                let den = z - a;
                check(&[num, den], z)?;
                Ok(powi(num / den, sign as i64 * steps as i64))
            }
            (HierarchyKind::Bkp, TimeShift::Pos { z, sign, steps }) => {
                if steps != 2 {
                    return Err(Error::Unsupported(
                        "odd-time flows shift in double Miwa steps; a single step \
                         would need a square-root branch"
                            .into(),
                    ));
                }
                // t + 2[z⁻¹] (odd p) multiplies e^{φ} by (z+a)(z+b)/((z−a)(z−b)).
                let f = [z + a, z - a, z + b, z - b];
                check(&f, z)?;
                Ok(powi((f[0] * f[2]) / (f[1] * f[3]), sign as i64))
            }
            (HierarchyKind::Toda2d, TimeShift::Pos { z, sign, steps }) => {
                // t + [z⁻¹] multiplies e^{φ} by (1 − b/z)/(1 − a/z).
                let num = z - b;
                let den = z - a;
                check(&[num, den], z)?;
                Ok(powi(num / den, sign as i64 * steps as i64))
            }
            (HierarchyKind::Toda2d, TimeShift::Neg { z, sign }) => {
                // t̄ + [z] multiplies e^{φ} by (1 − z/a)/(1 − z/b).
                let num = a - z;
                let den = b - z;
                check(&[num, den], z)?;
                Ok(powi((num * b) / (den * a), sign as i64))
            }
            (HierarchyKind::Kp | HierarchyKind::Bkp, TimeShift::Neg { .. }) => Err(Error::Mode(
                "only the Toda hierarchy carries negative times".into(),
            )),
        }
    }

    /// Tau-function at the given times (default evaluation options).
    pub fn tau(&self, times: &TimesVector<T>) -> Result<TauValue<T>> {
        self.tau_with(times, &EvalOptions::default())
    }

    pub fn tau_with(&self, times: &TimesVector<T>, opts: &EvalOptions) -> Result<TauValue<T>> {
        self.check_times(times)?;
        let phi = self.phases_all(times);
        Ok(self.enumerate(&phi, &[], None, opts))
    }

    /// Restriction of the superposition to subsets of exactly `occupied`
    /// solitons (the canonical sector of the associated lattice gas).
    pub fn tau_sector(&self, times: &TimesVector<T>, occupied: usize) -> Result<TauValue<T>> {
        self.tau_sector_with(times, occupied, &EvalOptions::default())
    }

    pub fn tau_sector_with(
        &self,
        times: &TimesVector<T>,
        occupied: usize,
        opts: &EvalOptions,
    ) -> Result<TauValue<T>> {
        self.check_times(times)?;
        if occupied > self.n() {
            return Err(Error::Range(format!(
                "sector {} exceeds soliton count {}",
                occupied,
                self.n()
            )));
        }
        let phi = self.phases_all(times);
        Ok(self.enumerate(&phi, &[], Some(occupied as u32), opts))
    }

    /// Exact partial derivative of the tau-function: one `TimeIndex` entry
    /// per derivative order (repeat an index for higher orders, mix indices
    /// for mixed partials). Each subset term is weighted by the product of
    /// its phase slopes, which is exact — no finite differencing.
    pub fn tau_derivative(
        &self,
        times: &TimesVector<T>,
        orders: &[TimeIndex],
    ) -> Result<TauValue<T>> {
        self.tau_derivative_with(times, orders, &EvalOptions::default())
    }

    pub fn tau_derivative_with(
        &self,
        times: &TimesVector<T>,
        orders: &[TimeIndex],
        opts: &EvalOptions,
    ) -> Result<TauValue<T>> {
        self.check_times(times)?;
        let phi = self.phases_all(times);
        let mut dphi = Vec::with_capacity(orders.len());
        for &q in orders {
            let slopes: Result<Vec<Cplx<T>>> =
                (0..self.n()).map(|i| self.phase_derivative(i, q)).collect();
            dphi.push(slopes?);
        }
        Ok(self.enumerate(&phi, &dphi, None, opts))
    }

    /// Tau-function at Miwa-shifted times, using the exact closed-form
    /// factor for each soliton (no series truncation).
    pub fn tau_shifted(
        &self,
        times: &TimesVector<T>,
        shifts: &[TimeShift<T>],
    ) -> Result<TauValue<T>> {
        self.tau_shifted_with(times, shifts, &EvalOptions::default())
    }

    pub fn tau_shifted_with(
        &self,
        times: &TimesVector<T>,
        shifts: &[TimeShift<T>],
        opts: &EvalOptions,
    ) -> Result<TauValue<T>> {
        self.check_times(times)?;
        let mut phi = self.phases_all(times);
        for shift in shifts {
            for (i, p) in phi.iter_mut().enumerate() {
                *p += self.shift_factor(i, shift)?.ln();
            }
        }
        Ok(self.enumerate(&phi, &[], None, opts))
    }

    fn phases_all(&self, times: &TimesVector<T>) -> Vec<Cplx<T>> {
        (0..self.n())
            .map(|i| self.soliton_phase_raw(i, times))
            .collect()
    }

    fn enumerate(
        &self,
        phi: &[Cplx<T>],
        dphi: &[Vec<Cplx<T>>],
        sector: Option<u32>,
        opts: &EvalOptions,
    ) -> TauValue<T> {
        let ctx = EnumCtx {
            n: self.n(),
            amat: &self.amat,
            phi,
            dphi,
            sector,
            refresh_every: opts.refresh_every,
        };
        let total = 1u64 << self.n();
        match opts.mode {
            EvalMode::Gray => {
                let mut acc = LogSum::new();
                ctx.run_gray(0, total, &mut acc);
                acc.total()
            }
            EvalMode::Naive => {
                let mut acc = LogSum::new();
                for k in 0..total {
                    ctx.push_from_scratch(k as u32, &mut acc);
                }
                acc.total()
            }
            EvalMode::Parallel => {
                let chunk_bits = 14u32.min(self.n() as u32);
                let chunks = total >> chunk_bits;
                let parts: Vec<LogSum<T>> = (0..chunks)
                    .into_par_iter()
                    .map(|c| {
                        let mut acc = LogSum::new();
                        ctx.run_gray(c << chunk_bits, (c + 1) << chunk_bits, &mut acc);
                        acc
                    })
                    .collect();
                let mut acc = LogSum::new();
                for part in &parts {
                    acc.merge(part);
                }
                acc.total()
            }
        }
    }
}

/// Toda coupling exponent `Σ_p p·t_p·t̄_p`: the full Toda tau-function is
/// `e^{Σ_p p·t_p·t̄_p}` times the Hirota superposition. The prefactor is
/// occupancy-independent, so it cancels in every gas identification but is
/// required by the bilinear lattice identities.
pub fn toda_coupling_log<T: Real>(times: &TimesVector<T>) -> Cplx<T> {
    let mut s = Cplx::new(T::zero(), T::zero());
    let len = times.pos_len().min(times.neg_len());
    for p in 1..=len {
        s += times.pos(p) * times.neg(p) * T::from_usize(p).unwrap();
    }
    s
}

/// Pairwise phase-shift coefficient of the hierarchy, with coincidence and
/// pole detection.
fn pair_phase_shift<T: Real>(
    kind: HierarchyKind,
    pi: &MomentumPair<T>,
    pj: &MomentumPair<T>,
    i: usize,
    j: usize,
) -> Result<Cplx<T>> {
    let (a1, b1, a2, b2) = (pi.a, pi.b, pj.a, pj.b);
    let scale = a1.norm() + b1.norm() + a2.norm() + b2.norm() + T::one();
    let tol = T::coincidence_tol() * scale;
    let check_num = |factors: &[Cplx<T>]| -> Result<()> {
        for f in factors {
            if f.norm() <= tol {
                return Err(Error::Coincidence(format!(
                    "solitons {i} and {j} coincide: pairwise phase shift vanishes"
                )));
            }
        }
        Ok(())
    };
    let check_den = |factors: &[Cplx<T>]| -> Result<()> {
        for f in factors {
            if f.norm() <= tol {
                return Err(Error::Pole(format!(
                    "momenta of solitons {i} and {j} sit on a pole of the phase-shift formula"
                )));
            }
        }
        Ok(())
    };
    match kind {
        HierarchyKind::Kp => {
            let num = [a1 - a2, b1 - b2];
            let den = [a1 + b2, b1 + a2];
            check_num(&num)?;
            check_den(&den)?;
            Ok((num[0] * num[1]) / (den[0] * den[1]))
        }
        HierarchyKind::Bkp => {
            let num = [a1 - a2, b1 - b2, a1 - b2, b1 - a2];
            let den = [a1 + a2, b1 + b2, a1 + b2, b1 + a2];
            check_num(&num)?;
            check_den(&den)?;
            Ok((num[0] * num[1] * num[2] * num[3]) / (den[0] * den[1] * den[2] * den[3]))
        }
        HierarchyKind::Toda2d => {
            let num = [a1 - a2, b1 - b2];
            let den = [a1 - b2, b1 - a2];
            check_num(&num)?;
            check_den(&den)?;
            Ok((num[0] * num[1]) / (den[0] * den[1]))
        }
    }
}

/// Shared state for the subset enumeration.
struct EnumCtx<'a, T> {
    n: usize,
    amat: &'a [Cplx<T>],
    phi: &'a [Cplx<T>],
    dphi: &'a [Vec<Cplx<T>>],
    sector: Option<u32>,
    refresh_every: usize,
}

impl<T: Real> EnumCtx<'_, T> {
    /// Exponent and derivative weights of one subset, from scratch.
    fn state_for(&self, mask: u32) -> (Cplx<T>, Vec<Cplx<T>>) {
        let zero = Cplx::new(T::zero(), T::zero());
        let mut expo = zero;
        let mut mm = mask;
        while mm != 0 {
            let i = mm.trailing_zeros() as usize;
            mm &= mm - 1;
            expo += self.phi[i];
            let mut rest = mm;
            while rest != 0 {
                let j = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                expo += self.amat[i * self.n + j];
            }
        }
        let weights = self
            .dphi
            .iter()
            .map(|slopes| {
                let mut w = zero;
                let mut mm = mask;
                while mm != 0 {
                    let i = mm.trailing_zeros() as usize;
                    mm &= mm - 1;
                    w += slopes[i];
                }
                w
            })
            .collect();
        (expo, weights)
    }

    fn push_term(&self, mask: u32, expo: Cplx<T>, weights: &[Cplx<T>], acc: &mut LogSum<T>) {
        if let Some(s) = self.sector {
            if mask.count_ones() != s {
                return;
            }
        }
        let (sin_im, cos_im) = expo.im.sin_cos();
        let unit = Cplx::new(cos_im, sin_im);
        if weights.is_empty() {
            acc.push(expo.re, unit);
            return;
        }
        let mut w = Cplx::new(T::one(), T::zero());
        for &ws in weights {
            w *= ws;
        }
        let wn = w.norm();
        if wn == T::zero() {
            return;
        }
        acc.push(expo.re + wn.ln(), unit * (w / wn));
    }

    fn push_from_scratch(&self, mask: u32, acc: &mut LogSum<T>) {
        let (expo, weights) = self.state_for(mask);
        self.push_term(mask, expo, &weights, acc);
    }

    /// Walk subsets `ν(k) = k ^ (k >> 1)` for `k ∈ [k0, k1)`, flipping one
    /// bit per step.
    fn run_gray(&self, k0: u64, k1: u64, acc: &mut LogSum<T>) {
        let mut mask = (k0 ^ (k0 >> 1)) as u32;
        let (mut expo, mut weights) = self.state_for(mask);
        let mut since_refresh = 0usize;
        for k in k0..k1 {
            if self.refresh_every > 0 && since_refresh >= self.refresh_every {
                let (e, w) = self.state_for(mask);
                expo = e;
                weights = w;
                since_refresh = 0;
            }
            since_refresh += 1;
            self.push_term(mask, expo, &weights, acc);
            let next = k + 1;
            if next < k1 {
                let j = next.trailing_zeros() as usize;
                let bit = 1u32 << j;
                let turning_on = mask & bit == 0;
                let rest = mask & !bit;
                let mut delta = self.phi[j];
                let mut mm = rest;
                while mm != 0 {
                    let i = mm.trailing_zeros() as usize;
                    mm &= mm - 1;
                    delta += self.amat[j * self.n + i];
                }
                if turning_on {
                    expo += delta;
                    mask |= bit;
                } else {
                    expo -= delta;
                    mask = rest;
                }
                for (slot, w) in weights.iter_mut().enumerate() {
                    if turning_on {
                        *w += self.dphi[slot][j];
                    } else {
                        *w -= self.dphi[slot][j];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn kp_system(a: &[C64], b: &[C64], phi0: &[C64]) -> SolitonSystem<f64> {
        let pairs = a
            .iter()
            .zip(b)
            .map(|(&a, &b)| MomentumPair::new(a, b))
            .collect();
        SolitonSystem::new(HierarchyKind::Kp, pairs, phi0.to_vec()).unwrap()
    }

    #[test]
    fn kp_phase_shift_known_value() {
        // a = b = (1, 2): shift (1−2)² / ((1+2)(2+1)) = 1/9.
        let sys = kp_system(
            &[c(1.0, 0.0), c(2.0, 0.0)],
            &[c(1.0, 0.0), c(2.0, 0.0)],
            &[c(0.0, 0.0), c(0.0, 0.0)],
        );
        let l = sys.phase_shift(0, 1);
        assert!((l - c(1.0 / 9.0, 0.0)).norm() < 1e-15);
        // At zero times and zero offsets: τ = 1 + 1 + 1 + 1/9 = 28/9.
        let tau = sys.tau(&TimesVector::zero()).unwrap().to_complex();
        assert!((tau - c(28.0 / 9.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn toda_phase_shift_known_value() {
        // a = (2, 2i), b = (1/2, i/2): shift = 8/17.
        let pairs = vec![
            MomentumPair::new(c(2.0, 0.0), c(0.5, 0.0)),
            MomentumPair::new(c(0.0, 2.0), c(0.0, 0.5)),
        ];
        let sys = SolitonSystem::new(
            HierarchyKind::Toda2d,
            pairs,
            vec![c(0.0, 0.0), c(0.0, 0.0)],
        )
        .unwrap();
        let l = sys.phase_shift(0, 1);
        assert!((l - c(8.0 / 17.0, 0.0)).norm() < 1e-15, "l = {l}");
    }

    #[test]
    fn bkp_with_equal_momenta_squares_the_kdv_shift() {
        let aa = [c(1.3, 0.0), c(0.6, 0.2), c(2.1, -0.4)];
        for i in 0..3 {
            for j in (i + 1)..3 {
                let pi = MomentumPair::new(aa[i], aa[i]);
                let pj = MomentumPair::new(aa[j], aa[j]);
                let kdv = pair_phase_shift(HierarchyKind::Kp, &pi, &pj, i, j).unwrap();
                let bkp = pair_phase_shift(HierarchyKind::Bkp, &pi, &pj, i, j).unwrap();
                assert!((bkp - kdv * kdv).norm() < 1e-14 * bkp.norm().max(1.0));
            }
        }
    }

    #[test]
    fn one_soliton_tau_is_one_plus_exponential() {
        let a = c(0.9, 0.1);
        let b = c(0.4, -0.3);
        let phi0 = c(0.2, -0.5);
        let sys = kp_system(&[a], &[b], &[phi0]);
        let times = TimesVector::from_pos(vec![c(0.3, 0.2), c(-0.1, 0.05), c(0.02, -0.04)]);
        let phi = phi0
            + (a - (-b)) * times.pos(1)
            + (a * a - b * b) * times.pos(2)
            + (a * a * a - (-b) * (-b) * (-b)) * times.pos(3);
        let expected = c(1.0, 0.0) + phi.exp();
        let tau = sys.tau(&times).unwrap().to_complex();
        assert!((tau - expected).norm() < 1e-13 * expected.norm());
    }

    #[test]
    fn toda_lattice_index_is_exact_integer_power() {
        // a on the negative real axis exercises the log branch: with m = 3,
        // e^{3·Log(a/b)} must equal (a/b)³ exactly.
        let a = c(-2.0, 0.0);
        let b = c(0.5, 0.0);
        let sys = SolitonSystem::new(
            HierarchyKind::Toda2d,
            vec![MomentumPair::new(a, b)],
            vec![c(0.0, 0.0)],
        )
        .unwrap();
        let times = TimesVector::new(3, vec![], vec![]);
        let tau = sys.tau(&times).unwrap().to_complex();
        let expected = c(1.0, 0.0) + (a / b).powu(3); // 1 + (−4)³ = −63
        assert!((tau - expected).norm() < 1e-12 * expected.norm());
        assert!((expected - c(-63.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn sector_sums_reassemble_the_full_tau() {
        let sys = kp_system(
            &[c(0.9, 0.05), c(0.7, -0.1), c(0.5, 0.2), c(1.2, 0.0), c(0.3, -0.3)],
            &[c(0.4, 0.1), c(0.6, 0.0), c(0.8, -0.15), c(0.2, 0.25), c(1.1, 0.05)],
            &[c(0.1, 0.0), c(-0.2, 0.3), c(0.0, -0.1), c(0.3, 0.2), c(-0.1, -0.2)],
        );
        let times = TimesVector::from_pos(vec![c(0.1, -0.2), c(0.05, 0.03)]);
        let total = sys.tau(&times).unwrap();
        let mut acc = crate::tau::LogSum::new();
        for k in 0..=5 {
            acc.push_value(&sys.tau_sector(&times, k).unwrap());
        }
        assert!(TauValue::rel_diff(&total, &acc.total()) < 1e-13);
        // The one-particle sector is Σ_i e^{φ_i}.
        let by_hand: C64 = (0..5)
            .map(|i| sys.soliton_phase(i, &times).unwrap().exp())
            .sum();
        let sector1 = sys.tau_sector(&times, 1).unwrap().to_complex();
        assert!((sector1 - by_hand).norm() < 1e-13 * by_hand.norm());
    }

    #[test]
    fn evaluation_modes_agree() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 16;
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut phi0 = Vec::new();
        for _ in 0..n {
            a.push(c(0.5 + rng.random::<f64>(), 0.4 * rng.random::<f64>() - 0.2));
            b.push(c(0.3 + rng.random::<f64>(), 0.4 * rng.random::<f64>() - 0.2));
            phi0.push(c(
                2.0 * rng.random::<f64>() - 1.0,
                2.0 * rng.random::<f64>() - 1.0,
            ));
        }
        let sys = kp_system(&a, &b, &phi0);
        let times = TimesVector::from_pos(vec![c(0.2, 0.1), c(-0.05, 0.02), c(0.01, -0.03)]);
        let gray = sys.tau(&times).unwrap();
        let naive = sys
            .tau_with(
                &times,
                &EvalOptions {
                    mode: EvalMode::Naive,
                    refresh_every: 0,
                },
            )
            .unwrap();
        let par = sys
            .tau_with(
                &times,
                &EvalOptions {
                    mode: EvalMode::Parallel,
                    ..Default::default()
                },
            )
            .unwrap();
        assert!(TauValue::rel_diff(&gray, &naive) < 1e-12);
        assert!(TauValue::rel_diff(&gray, &par) < 1e-12);
    }

    #[test]
    fn exact_derivative_matches_hand_assembled_sum() {
        let a = [c(0.8, 0.0), c(0.6, 0.3)];
        let b = [c(0.5, 0.0), c(0.4, -0.2)];
        let phi0 = [c(0.1, -0.2), c(-0.3, 0.15)];
        let sys = kp_system(&a, &b, &phi0);
        let times = TimesVector::from_pos(vec![c(0.2, 0.1)]);
        let l = sys.phase_shift(0, 1);
        let f: Vec<C64> = (0..2)
            .map(|i| sys.soliton_phase(i, &times).unwrap().exp())
            .collect();
        let slope: Vec<C64> = (0..2).map(|i| a[i] + b[i]).collect();
        let d1 = slope[0] * f[0] + slope[1] * f[1] + (slope[0] + slope[1]) * l * f[0] * f[1];
        let got1 = sys
            .tau_derivative(&times, &[TimeIndex::Pos(1)])
            .unwrap()
            .to_complex();
        assert!((got1 - d1).norm() < 1e-13 * d1.norm());
        let d2 = slope[0] * slope[0] * f[0]
            + slope[1] * slope[1] * f[1]
            + (slope[0] + slope[1]) * (slope[0] + slope[1]) * l * f[0] * f[1];
        let got2 = sys
            .tau_derivative(&times, &[TimeIndex::Pos(1), TimeIndex::Pos(1)])
            .unwrap()
            .to_complex();
        assert!((got2 - d2).norm() < 1e-13 * d2.norm());
    }

    #[test]
    fn toda_mixed_derivative_one_soliton() {
        let a = c(1.5, 0.0);
        let b = c(0.6, 0.0);
        let sys = SolitonSystem::new(
            HierarchyKind::Toda2d,
            vec![MomentumPair::new(a, b)],
            vec![c(0.05, 0.0)],
        )
        .unwrap();
        let times = TimesVector::new(2, vec![c(0.3, 0.0)], vec![c(0.3, 0.0)]);
        let phi = sys.soliton_phase(0, &times).unwrap();
        let cpos = a - b;
        let cneg = c(1.0, 0.0) / b - c(1.0, 0.0) / a;
        let expected = cpos * cneg * phi.exp();
        let got = sys
            .tau_derivative(&times, &[TimeIndex::Pos(1), TimeIndex::Neg(1)])
            .unwrap()
            .to_complex();
        assert!((got - expected).norm() < 1e-13 * expected.norm());
    }

    #[test]
    fn closed_form_shift_factors_match_truncated_series() {
        // KP, positive shift, both signs.
        let sys = kp_system(
            &[c(0.7, 0.0), c(0.5, 0.2)],
            &[c(0.4, 0.0), c(0.3, -0.1)],
            &[c(0.1, 0.05), c(-0.2, 0.1)],
        );
        let times = TimesVector::from_pos(vec![c(0.15, -0.1), c(0.02, 0.03), c(-0.01, 0.01)]);
        for sign in [1i8, -1] {
            let shift = TimeShift::Pos {
                z: c(3.0, 0.5),
                sign,
                steps: 1,
            };
            let exact = sys.tau_shifted(&times, &[shift]).unwrap();
            let series = sys
                .tau(&times.shifted_by_series(&shift, 200, false))
                .unwrap();
            assert!(
                TauValue::rel_diff(&exact, &series) < 1e-12,
                "kp sign {sign}"
            );
        }

        // BKP, double step on odd times.
        let bkp = SolitonSystem::new(
            HierarchyKind::Bkp,
            vec![
                MomentumPair::new(c(0.7, 0.0), c(0.4, 0.0)),
                MomentumPair::new(c(0.5, 0.0), c(0.6, 0.0)),
            ],
            vec![c(0.1, 0.0), c(-0.15, 0.0)],
        )
        .unwrap();
        let btimes = TimesVector::from_pos(vec![c(0.2, 0.0), c(0.0, 0.0), c(0.03, 0.0)]);
        let bshift = TimeShift::Pos {
            z: c(3.0, 0.0),
            sign: 1,
            steps: 2,
        };
        let exact = bkp.tau_shifted(&btimes, &[bshift]).unwrap();
        let series = bkp
            .tau(&btimes.shifted_by_series(&bshift, 200, true))
            .unwrap();
        assert!(TauValue::rel_diff(&exact, &series) < 1e-12);

        // Toda, positive (|z| large) and negative (|z| small) shifts.
        let toda = SolitonSystem::new(
            HierarchyKind::Toda2d,
            vec![
                MomentumPair::new(c(1.4, 0.2), c(0.5, -0.1)),
                MomentumPair::new(c(0.9, -0.3), c(0.45, 0.15)),
            ],
            vec![c(0.05, 0.1), c(-0.1, 0.02)],
        )
        .unwrap();
        let ttimes = TimesVector::new(1, vec![c(0.1, 0.05)], vec![c(0.1, -0.05)]);
        let pos = TimeShift::Pos {
            z: c(4.0, 1.0),
            sign: 1,
            steps: 1,
        };
        let exact = toda.tau_shifted(&ttimes, &[pos]).unwrap();
        let series = toda.tau(&ttimes.shifted_by_series(&pos, 200, false)).unwrap();
        assert!(TauValue::rel_diff(&exact, &series) < 1e-12);
        let neg = TimeShift::Neg {
            z: c(0.08, 0.03),
            sign: -1,
        };
        let exact = toda.tau_shifted(&ttimes, &[neg]).unwrap();
        let series = toda.tau(&ttimes.shifted_by_series(&neg, 200, false)).unwrap();
        assert!(TauValue::rel_diff(&exact, &series) < 1e-12);
    }

    #[test]
    fn structural_validation_errors() {
        // Coinciding momenta.
        let err = SolitonSystem::new(
            HierarchyKind::Kp,
            vec![
                MomentumPair::new(c(1.0, 0.0), c(0.5, 0.0)),
                MomentumPair::new(c(1.0, 0.0), c(0.7, 0.0)),
            ],
            vec![c(0.0, 0.0); 2],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Coincidence(_)), "{err}");

        // Pole of the phase-shift formula (KP: a_1 = −b_2).
        let err = SolitonSystem::new(
            HierarchyKind::Kp,
            vec![
                MomentumPair::new(c(1.0, 0.0), c(0.5, 0.0)),
                MomentumPair::new(c(2.0, 0.0), c(-1.0, 0.0)),
            ],
            vec![c(0.0, 0.0); 2],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Pole(_)), "{err}");

        // Toda momenta must be nonzero.
        let err = SolitonSystem::new(
            HierarchyKind::Toda2d,
            vec![MomentumPair::new(c(0.0, 0.0), c(1.0, 0.0))],
            vec![c(0.0, 0.0)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");

        // Size cap.
        let many = vec![MomentumPair::new(c(1.0, 0.0), c(0.5, 0.0)); 25];
        let err = SolitonSystem::new(HierarchyKind::Kp, many, vec![c(0.0, 0.0); 25]).unwrap_err();
        assert!(matches!(err, Error::Size { n: 25, cap: 24 }), "{err}");

        // Hierarchy/time mismatches.
        let kp = kp_system(&[c(1.0, 0.0)], &[c(0.5, 0.0)], &[c(0.0, 0.0)]);
        let err = kp
            .tau(&TimesVector::new(1, vec![], vec![]))
            .unwrap_err();
        assert!(matches!(err, Error::Mode(_)), "{err}");
        let err = kp
            .tau(&TimesVector::new(0, vec![], vec![c(0.1, 0.0)]))
            .unwrap_err();
        assert!(matches!(err, Error::Mode(_)), "{err}");

        let bkp = SolitonSystem::new(
            HierarchyKind::Bkp,
            vec![MomentumPair::new(c(1.0, 0.0), c(0.5, 0.0))],
            vec![c(0.0, 0.0)],
        )
        .unwrap();
        let err = bkp
            .tau(&TimesVector::from_pos(vec![c(0.0, 0.0), c(0.1, 0.0)]))
            .unwrap_err();
        assert!(matches!(err, Error::Mode(_)), "{err}");
        let err = bkp
            .shift_factor(
                0,
                &TimeShift::Pos {
                    z: c(3.0, 0.0),
                    sign: 1,
                    steps: 1,
                },
            )
            .unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)), "{err}");

        // Shift point on a momentum.
        let err = kp
            .shift_factor(
                0,
                &TimeShift::Pos {
                    z: c(1.0, 0.0),
                    sign: 1,
                    steps: 1,
                },
            )
            .unwrap_err();
        assert!(matches!(err, Error::Pole(_)), "{err}");
    }

    #[test]
    fn momentum_radii_cover_all_poles() {
        let sys = kp_system(
            &[c(0.9, 0.0), c(0.0, 2.5)],
            &[c(0.4, 0.3), c(1.0, 0.0)],
            &[c(0.0, 0.0); 2],
        );
        let (lo, hi) = sys.momentum_radii().unwrap();
        assert!((lo - 0.5).abs() < 1e-15);
        assert!((hi - 2.5).abs() < 1e-15);
    }

    #[test]
    fn toda_coupling_log_sums_weighted_products() {
        let times = TimesVector::new(
            0,
            vec![c(0.5, 0.1), c(0.2, 0.0)],
            vec![c(0.5, -0.1), c(0.2, 0.0)],
        );
        let g = toda_coupling_log(&times);
        let expected = c(0.5, 0.1) * c(0.5, -0.1) + c(0.2, 0.0) * c(0.2, 0.0) * 2.0;
        assert!((g - expected).norm() < 1e-15);
    }
}
