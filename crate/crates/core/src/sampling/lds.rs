//! Local low-discrepancy grid sequence on (0,1).
//!
//! With `r(M) = (b/2) M^{-(1+η)/3}` and `h(M) = 2r(M)(M+1)` (the ball
//! diameter in grid units), `M₁ = 1` and `M_m` is the first integer above
//! `M_{m-1}` with `h(M−1) ≤ ⌊h(M)⌋ < h(M)`. The set is `{i/(M+1)}`.

use std::cmp::Ordering;

use num_bigint::BigUint;

use super::{ManifoldTag, SamplingSet};
use crate::error::SamplingError;
use crate::manifold::IntervalPoint;

/// Largest grid that [`interval_lds`] will materialise.
pub const MAX_MATERIALISED: u128 = 50_000_000;

const TIE_REL: f64 = 1e-9;

/// Continued-fraction rational approximation `p/q ≈ x` with `q ≤ max_den`.
fn rational(x: f64, max_den: u64) -> Option<(u64, u64)> {
    if !(x > 0.0) || !x.is_finite() {
        return None;
    }
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a > 1e15 {
            break;
        }
        let a = a as u64;
        let (p2, q2) = (a.checked_mul(p1)?.checked_add(p0)?, a.checked_mul(q1)?.checked_add(q0)?);
        if q2 > max_den {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        if ((p1 as f64 / q1 as f64) - x).abs() <= 1e-14 * x.max(1.0) {
            return Some((p1, q1));
        }
        let frac = r - a as f64;
        if frac < 1e-15 {
            break;
        }
        r = 1.0 / frac;
    }
    (q1 > 0 && ((p1 as f64 / q1 as f64) - x).abs() <= 1e-14 * x.max(1.0)).then_some((p1, q1))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rational form of the parameters for exact tie-breaking.
#[derive(Clone, Debug)]
struct Exact {
    b_num: u64,
    b_den: u64,
    e_num: u32,
    e_den: u32,
}

/// Sequence sizes `M_m` for fixed `(η, b)`, computed lazily.
#[derive(Clone, Debug)]
pub struct IntervalLds {
    eta: f64,
    b: f64,
    exact: Option<Exact>,
    sizes: Vec<u128>,
}

impl IntervalLds {
    pub fn new(eta: f64, b: f64) -> Result<Self, SamplingError> {
        if !(eta > 0.0 && eta < 2.0) {
            return Err(SamplingError::InvalidParameter(format!("eta must lie in (0,2), got {eta}")));
        }
        if !(b > 0.0) || !b.is_finite() {
            return Err(SamplingError::InvalidParameter(format!("b must be positive, got {b}")));
        }
        let exact = (|| {
            let (p, q) = rational(eta, 1_000_000)?;
            let (b_num, b_den) = rational(b, 1_000_000)?;
            let (num, den) = (q + p, 3 * q);
            let g = gcd(num, den);
            Some(Exact { b_num, b_den, e_num: u32::try_from(num / g).ok()?, e_den: u32::try_from(den / g).ok()? })
        })();
        Ok(IntervalLds { eta, b, exact, sizes: vec![1] })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    fn exponent(&self) -> f64 {
        (1.0 + self.eta) / 3.0
    }

    /// `r(M) = (b/2) M^{-(1+η)/3}`.
    pub fn radius(&self, m: u128) -> f64 {
        0.5 * self.b * (-(self.exponent()) * (m as f64).ln()).exp()
    }

    /// `h(M) = 2 r(M) (M+1)`.
    pub fn diameter_in_cells(&self, m: u128) -> f64 {
        self.b * ((m as f64 + 1.0).ln() - self.exponent() * (m as f64).ln()).exp()
    }

    /// Compares `h(M)` with the integer `k`, exactly when the float value is
    /// too close to call.
    fn cmp_h(&self, m: u128, k: u128) -> Result<Ordering, SamplingError> {
        if k == 0 {
            return Ok(Ordering::Greater);
        }
        let hf = self.diameter_in_cells(m);
        let kf = k as f64;
        if (hf - kf).abs() > TIE_REL * kf.max(1.0) {
            return Ok(hf.partial_cmp(&kf).unwrap_or(Ordering::Equal));
        }
        let ex = self.exact.as_ref().ok_or(SamplingError::PrecisionExhausted { eta: self.eta, b: self.b })?;
        // b(M+1)M^{-en/ed} vs k  ⇔  (b_n(M+1))^{ed} vs (k b_d)^{ed} M^{en}
        let lhs = (BigUint::from(ex.b_num) * BigUint::from(m + 1)).pow(ex.e_den);
        let rhs = (BigUint::from(k) * BigUint::from(ex.b_den)).pow(ex.e_den) * BigUint::from(m).pow(ex.e_num);
        Ok(lhs.cmp(&rhs))
    }

    fn floor_h(&self, m: u128) -> Result<u128, SamplingError> {
        let mut k = self.diameter_in_cells(m).floor().max(0.0) as u128;
        while k > 0 && self.cmp_h(m, k)? == Ordering::Less {
            k -= 1;
        }
        while self.cmp_h(m, k + 1)? != Ordering::Less {
            k += 1;
        }
        Ok(k)
    }

    /// `(⌊h(M)⌋, h(M) − ⌊h(M)⌋)`, with the fractional part accurate even when
    /// it is far below the float resolution of `h`.
    pub fn split_diameter(&self, m: u128) -> Result<(u128, f64), SamplingError> {
        let k = self.floor_h(m)?;
        let hf = self.diameter_in_cells(m);
        let coarse = hf - k as f64;
        let Some(ex) = self.exact.as_ref() else {
            return Ok((k, coarse.clamp(0.0, 1.0)));
        };
        if k == 0 || coarse > 1e-6 {
            return Ok((k, coarse.clamp(0.0, 1.0)));
        }
        // (h/k)^{ed} = 1 + ε exactly; δ = k((1+ε)^{1/ed} − 1).
        let lhs = (BigUint::from(ex.b_num) * BigUint::from(m + 1)).pow(ex.e_den);
        let rhs = (BigUint::from(k) * BigUint::from(ex.b_den)).pow(ex.e_den) * BigUint::from(m).pow(ex.e_num);
        if lhs <= rhs {
            return Ok((k, 0.0));
        }
        let num = lhs - &rhs;
        let shift = (rhs.bits() + 64).saturating_sub(num.bits());
        let q = (num << shift) / &rhs;
        let mut qf = 0.0f64;
        for (i, d) in q.to_u64_digits().iter().enumerate() {
            qf += *d as f64 * 2f64.powi(64 * i as i32);
        }
        let eps = qf * 2f64.powi(-(shift as i32));
        Ok((k, (k as f64 * (eps.ln_1p() / ex.e_den as f64).exp_m1()).clamp(0.0, 1.0)))
    }

    /// `h(M−1) ≤ ⌊h(M)⌋ < h(M)`.
    pub fn admissible(&self, m: u128) -> Result<bool, SamplingError> {
        if m < 2 {
            return Ok(false);
        }
        let k = self.floor_h(m)?;
        Ok(self.cmp_h(m - 1, k)? != Ordering::Greater && self.cmp_h(m, k)? == Ordering::Greater)
    }

    fn next_size(&self, prev: u128) -> Result<u128, SamplingError> {
        let e = self.exponent();
        // h is increasing for M > e/(1−e).
        let mono = (e / (1.0 - e)).ceil() as u128 + 2;
        let scan_end = (prev + 64).max(mono);
        let mut m = prev + 1;
        while m <= scan_end {
            if self.admissible(m)? {
                return Ok(m);
            }
            m += 1;
        }
        let m0 = scan_end;
        let fk = self.floor_h(m0)?;
        let k = if self.cmp_h(m0, fk)? == Ordering::Equal { fk } else { fk + 1 };
        let mut lo = m0;
        let mut step: u128 = 1;
        let mut hi = m0 + step;
        while self.cmp_h(hi, k)? != Ordering::Greater {
            lo = hi;
            step = step.checked_mul(2).ok_or(SamplingError::TooLarge(u128::MAX))?;
            hi = m0.checked_add(step).ok_or(SamplingError::TooLarge(u128::MAX))?;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.cmp_h(mid, k)? == Ordering::Greater {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if !self.admissible(hi)? {
            return Err(SamplingError::InvalidParameter(format!("no admissible size found after {prev}")));
        }
        Ok(hi)
    }

    /// `M_m` for `m ≥ 1`.
    pub fn size(&mut self, m: usize) -> Result<u128, SamplingError> {
        if m == 0 {
            return Err(SamplingError::InvalidParameter("sequence index starts at 1".into()));
        }
        while self.sizes.len() < m {
            let next = self.next_size(*self.sizes.last().unwrap())?;
            self.sizes.push(next);
        }
        Ok(self.sizes[m - 1])
    }

    /// Equispaced interior grid of level `m`.
    pub fn points(&mut self, m: usize) -> Result<SamplingSet<IntervalPoint>, SamplingError> {
        let size = self.size(m)?;
        if size > MAX_MATERIALISED {
            return Err(SamplingError::TooLarge(size));
        }
        let denom = (size + 1) as f64;
        let pts = (1..=size).map(|i| IntervalPoint::new(i as f64 / denom)).collect::<Result<Vec<_>, _>>()?;
        Ok(SamplingSet::new(pts, m, ManifoldTag::Interval))
    }
}

/// The m-th grid of the sequence for `(η, b)`.
pub fn interval_lds(eta: f64, b: f64, m: usize) -> Result<SamplingSet<IntervalPoint>, SamplingError> {
    IntervalLds::new(eta, b)?.points(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_level_is_midpoint() {
        let s = interval_lds(0.5, 1.0, 1).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].value(), 0.5);
    }

    #[test]
    fn rationals() {
        assert_eq!(rational(1.9, 1_000_000), Some((19, 10)));
        assert_eq!(rational(0.66, 1_000_000), Some((33, 50)));
        assert_eq!(rational(1.0, 1_000_000), Some((1, 1)));
        assert_eq!(rational(std::f64::consts::PI, 1_000_000), None);
    }

    #[test]
    fn exact_tie_at_one() {
        // h(1) = 2b exactly.
        let l = IntervalLds::new(0.5, 1.0).unwrap();
        assert_eq!(l.cmp_h(1, 2).unwrap(), Ordering::Equal);
        assert_eq!(l.floor_h(1).unwrap(), 2);
    }

    #[test]
    fn sizes_strictly_increase() {
        for eta in [0.3, 0.5, 1.0, 1.9] {
            let mut l = IntervalLds::new(eta, 1.0).unwrap();
            let mut prev = 0;
            for m in 1..=7 {
                let s = l.size(m).unwrap();
                assert!(s > prev);
                prev = s;
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(IntervalLds::new(2.0, 1.0).is_err());
        assert!(IntervalLds::new(0.0, 1.0).is_err());
        assert!(IntervalLds::new(0.5, -1.0).is_err());
    }
}
