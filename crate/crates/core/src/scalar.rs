//! Generic real scalar underlying all numerics.
//!
//! Everything downstream works with `Complex<T>` where `T: Real`; `f64` is
//! the precision the default tolerances are calibrated for, `f32` exists to
//! keep the code honest about genericity.

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Real scalar: IEEE float with the conversions and bounds the engine needs.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Shorthand for converting an `f64` literal into `Self`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Tolerance below which two parameters count as coincident, relative to
    /// their magnitude scale. Calibrated to 1e-13 at double precision and
    /// widened proportionally for shorter mantissas.
    fn coincidence_tol() -> Self {
        let at_f64 = Self::lit(1e-13);
        let widened = Self::epsilon() * Self::lit(1e-13 / f64::EPSILON);
        at_f64.max(widened)
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + NumAssign
        + Sum
        + Debug
        + Display
        + LowerExp
        + Send
        + Sync
        + 'static
{
}

/// Complex value over the generic scalar.
pub type Cplx<T> = Complex<T>;

/// Integer power of a complex number (exact repeated squaring, no logs, so
/// branch cuts never enter).
pub fn powi<T: Real>(z: Cplx<T>, n: i64) -> Cplx<T> {
    if n >= 0 {
        z.powu(n as u32)
    } else {
        z.powu((-n) as u32).inv()
    }
}

/// Least-squares slope of `log(err)` against `log(h)`: the observed
/// convergence order of a refinement sequence. Entries with non-finite or
/// zero error are rejected.
pub fn fit_order<T: Real>(hs: &[T], errs: &[T]) -> crate::Result<T> {
    if hs.len() != errs.len() || hs.len() < 2 {
        return Err(crate::Error::Input(
            "order fit needs at least two (h, err) pairs".into(),
        ));
    }
    let mut xs = Vec::with_capacity(hs.len());
    let mut ys = Vec::with_capacity(hs.len());
    for (&h, &e) in hs.iter().zip(errs) {
        if !(h > T::zero()) || !(e > T::zero()) || !e.is_finite() {
            return Err(crate::Error::Degenerate(format!(
                "order fit with nonpositive or non-finite sample: h={h}, err={e}"
            )));
        }
        xs.push(h.ln());
        ys.push(e.ln());
    }
    let n = T::from_usize(xs.len()).unwrap();
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let mut num = T::zero();
    let mut den = T::zero();
    for (x, y) in xs.iter().zip(&ys) {
        num += (*x - mx) * (*y - my);
        den += (*x - mx) * (*x - mx);
    }
    Ok(num / den)
}
