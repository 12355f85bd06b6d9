//! Log-space representation of tau-function and partition-sum values.
//!
//! A 2^N-term exponential sum can span thousands of orders of magnitude, so
//! values are carried as `magnitude = e^{log_magnitude}` times a unit phase
//! factor, with an explicit flag for exact zero. Sums are accumulated with a
//! running-maximum rescaling (a streaming log-sum-exp) plus Kahan
//! compensation, which keeps every partial sum O(1) and makes the all-real
//! case return a phase of exactly +1.

use crate::scalar::{powi, Cplx, Real};

/// A possibly huge or tiny complex value stored as `phase · e^{log_magnitude}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauValue<T> {
    log_magnitude: T,
    phase: Cplx<T>,
    is_zero: bool,
}

impl<T: Real> TauValue<T> {
    /// Exact zero.
    pub fn zero() -> Self {
        Self {
            log_magnitude: T::neg_infinity(),
            phase: Cplx::new(T::one(), T::zero()),
            is_zero: true,
        }
    }

    /// Exact one.
    pub fn one() -> Self {
        Self::from_log(Cplx::new(T::zero(), T::zero()))
    }

    /// Value `e^w` for a complex log `w` (real part: log-magnitude,
    /// imaginary part: argument).
    pub fn from_log(w: Cplx<T>) -> Self {
        let (im_sin, im_cos) = w.im.sin_cos();
        Self {
            log_magnitude: w.re,
            phase: Cplx::new(im_cos, im_sin),
            is_zero: false,
        }
    }

    /// Assemble from a log-magnitude and a phase factor (normalised here).
    pub fn from_polar_log(log_magnitude: T, phase: Cplx<T>) -> Self {
        let n = phase.norm();
        if n == T::zero() {
            return Self::zero();
        }
        Self {
            log_magnitude,
            phase: phase / n,
            is_zero: false,
        }
    }

    /// Wrap an ordinary complex number.
    pub fn from_complex(c: Cplx<T>) -> Self {
        let m = c.norm();
        if m == T::zero() {
            return Self::zero();
        }
        Self {
            log_magnitude: m.ln(),
            phase: c / m,
            is_zero: false,
        }
    }

    /// Wrap a real number (sign goes into the phase factor).
    pub fn from_real(x: T) -> Self {
        Self::from_complex(Cplx::new(x, T::zero()))
    }

    pub fn is_zero(&self) -> bool {
        self.is_zero
    }

    /// Natural log of the magnitude (`-∞` for zero).
    pub fn log_magnitude(&self) -> T {
        if self.is_zero {
            T::neg_infinity()
        } else {
            self.log_magnitude
        }
    }

    /// Unit phase factor (`+1` for values accumulated from all-real terms).
    pub fn phase(&self) -> Cplx<T> {
        self.phase
    }

    /// Principal complex log (real part: log-magnitude, imaginary: argument).
    pub fn log_complex(&self) -> Cplx<T> {
        Cplx::new(self.log_magnitude(), self.phase.arg())
    }

    /// Materialise as a plain complex number. Overflows to ±∞ if the
    /// magnitude exceeds the scalar's range; callers that care stay in
    /// log-space instead.
    pub fn to_complex(&self) -> Cplx<T> {
        if self.is_zero {
            return Cplx::new(T::zero(), T::zero());
        }
        self.phase * self.log_magnitude.exp()
    }

    /// True if the phase factor deviates from +1 by at most `tol`.
    pub fn is_positive_real(&self, tol: T) -> bool {
        !self.is_zero && (self.phase - Cplx::new(T::one(), T::zero())).norm() <= tol
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero || other.is_zero {
            return Self::zero();
        }
        let phase = self.phase * other.phase;
        let n = phase.norm();
        Self {
            log_magnitude: self.log_magnitude + other.log_magnitude,
            phase: phase / n,
            is_zero: false,
        }
    }

    pub fn div(&self, other: &Self) -> crate::Result<Self> {
        if other.is_zero {
            return Err(crate::Error::Degenerate("division by exact zero".into()));
        }
        Ok(self.mul(&Self {
            log_magnitude: -other.log_magnitude,
            phase: other.phase.conj(),
            is_zero: false,
        }))
    }

    /// Multiply by `e^c` for complex `c` (exact in log-space).
    pub fn scale_exp(&self, c: Cplx<T>) -> Self {
        if self.is_zero {
            return Self::zero();
        }
        self.mul(&Self::from_log(c))
    }

    pub fn neg(&self) -> Self {
        if self.is_zero {
            return Self::zero();
        }
        Self {
            log_magnitude: self.log_magnitude,
            phase: -self.phase,
            is_zero: false,
        }
    }

    /// Integer power (log-space, branch-free).
    pub fn powi(&self, n: i64) -> Self {
        if self.is_zero {
            return if n == 0 { Self::one() } else { Self::zero() };
        }
        let phase = powi(self.phase, n);
        let m = phase.norm();
        Self {
            log_magnitude: self.log_magnitude * T::from_i64(n).unwrap(),
            phase: phase / m,
            is_zero: false,
        }
    }

    /// Ratio `self / other` as a plain complex number (overflow if the
    /// log-magnitudes differ by hundreds).
    pub fn ratio(&self, other: &Self) -> crate::Result<Cplx<T>> {
        let r = self.div(other)?;
        Ok(r.to_complex())
    }

    /// Relative difference `|a - b| / max(|a|, |b|)`, computed at the scale
    /// of the larger magnitude so nothing overflows.
    pub fn rel_diff(a: &Self, b: &Self) -> T {
        match (a.is_zero, b.is_zero) {
            (true, true) => T::zero(),
            (true, false) | (false, true) => T::one(),
            (false, false) => {
                let l = a.log_magnitude.max(b.log_magnitude);
                let va = a.phase * (a.log_magnitude - l).exp();
                let vb = b.phase * (b.log_magnitude - l).exp();
                (va - vb).norm()
            }
        }
    }
}

/// Streaming log-sum-exp accumulator for `Σ phase_k · e^{log_k}`.
///
/// Keeps a running maximum of the logs; earlier contributions are rescaled
/// when the maximum grows, so the working sum stays O(1). Kahan compensation
/// keeps the fixed-order sequential sum accurate to a few ulps even over
/// millions of terms. All-real input (phases exactly +1, logs real) yields an
/// exactly real accumulator.
#[derive(Debug, Clone)]
pub struct LogSum<T> {
    max_log: T,
    acc: Cplx<T>,
    comp: Cplx<T>,
    terms: usize,
}

impl<T: Real> Default for LogSum<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> LogSum<T> {
    pub fn new() -> Self {
        Self {
            max_log: T::neg_infinity(),
            acc: Cplx::new(T::zero(), T::zero()),
            comp: Cplx::new(T::zero(), T::zero()),
            terms: 0,
        }
    }

    /// Add `phase · e^{log}`. `phase` need not be unit: derivative sums push
    /// arbitrary complex weights here.
    pub fn push(&mut self, log: T, phase: Cplx<T>) {
        self.terms += 1;
        if log == T::neg_infinity() || phase == Cplx::new(T::zero(), T::zero()) {
            return;
        }
        if log > self.max_log {
            let shrink = (self.max_log - log).exp(); // 0 on the first push
            let s = if self.max_log == T::neg_infinity() {
                T::zero()
            } else {
                shrink
            };
            self.acc = self.acc * s;
            self.comp = self.comp * s;
            self.max_log = log;
        }
        let term = phase * (log - self.max_log).exp();
        // Kahan step.
        let y = term - self.comp;
        let t = self.acc + y;
        self.comp = (t - self.acc) - y;
        self.acc = t;
    }

    /// Add an existing log-space value, optionally weighted by a plain
    /// complex factor.
    pub fn push_value(&mut self, v: &TauValue<T>) {
        if !v.is_zero() {
            self.push(v.log_magnitude(), v.phase());
        } else {
            self.terms += 1;
        }
    }

    pub fn push_weighted(&mut self, v: &TauValue<T>, weight: Cplx<T>) {
        if !v.is_zero() {
            self.push(v.log_magnitude(), v.phase() * weight);
        } else {
            self.terms += 1;
        }
    }

    /// Merge another accumulator (deterministic given a fixed merge order).
    pub fn merge(&mut self, other: &Self) {
        if other.terms == 0 {
            return;
        }
        self.terms += other.terms;
        if other.acc == Cplx::new(T::zero(), T::zero()) {
            return;
        }
        // Fold the other partial in at the coarser of the two scales.
        if other.max_log > self.max_log {
            let s = if self.max_log == T::neg_infinity() {
                T::zero()
            } else {
                (self.max_log - other.max_log).exp()
            };
            self.acc = self.acc * s + other.acc;
            self.comp = self.comp * s;
            self.max_log = other.max_log;
        } else {
            let s = (other.max_log - self.max_log).exp();
            self.acc += other.acc * s;
        }
    }

    pub fn terms(&self) -> usize {
        self.terms
    }

    /// Final value.
    pub fn total(&self) -> TauValue<T> {
        let m = self.acc.norm();
        if self.terms == 0 || m == T::zero() || self.max_log == T::neg_infinity() {
            return TauValue::zero();
        }
        TauValue {
            log_magnitude: self.max_log + m.ln(),
            phase: self.acc / m,
            is_zero: false,
        }
    }
}

/// Residual of a signed combination `Σ_k values_k` measured against the
/// largest magnitude among the summands: returns `(residual, scale,
/// residual/scale)` with everything evaluated at a common log-scale.
pub fn signed_residual<T: Real>(values: &[TauValue<T>]) -> (T, T, T) {
    let scale_log = values
        .iter()
        .filter(|v| !v.is_zero())
        .map(|v| v.log_magnitude())
        .fold(T::neg_infinity(), T::max);
    if scale_log == T::neg_infinity() {
        return (T::zero(), T::zero(), T::zero());
    }
    let mut sum = Cplx::new(T::zero(), T::zero());
    for v in values {
        if !v.is_zero() {
            sum += v.phase() * (v.log_magnitude() - scale_log).exp();
        }
    }
    let scale = scale_log.exp();
    let rel = sum.norm();
    (rel * scale, scale, rel)
}
