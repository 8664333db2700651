//! Selection sets: per-component finite unions of disjoint intervals, combined
//! as a Cartesian product across components.

use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::normal::{std_cdf, std_ccdf, std_interval_prob, std_inv_cdf, std_inv_ccdf, std_pdf};

/// Closed interval with endpoints in R plus infinities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::ParamDomain(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let lo = if self.lo.is_finite() { Some(self.lo) } else { None };
        let hi = if self.hi.is_finite() { Some(self.hi) } else { None };
        [lo, hi].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [lo, hi] = <[Option<f64>; 2]>::deserialize(d)?;
        Interval::new(
            lo.unwrap_or(f64::NEG_INFINITY),
            hi.unwrap_or(f64::INFINITY),
        )
        .map_err(D::Error::custom)
    }
}

/// Ordered union of strictly disjoint intervals for one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Interval>", into = "Vec<Interval>")]
pub struct IntervalUnion {
    intervals: Vec<Interval>,
}

impl TryFrom<Vec<Interval>> for IntervalUnion {
    type Error = Error;
    fn try_from(v: Vec<Interval>) -> Result<Self> {
        IntervalUnion::new(v)
    }
}

impl From<IntervalUnion> for Vec<Interval> {
    fn from(u: IntervalUnion) -> Self {
        u.intervals
    }
}

impl IntervalUnion {
    pub fn new(intervals: Vec<Interval>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::ParamDomain("empty interval union".into()));
        }
        for w in intervals.windows(2) {
            if !(w[0].hi < w[1].lo) {
                return Err(Error::ParamDomain(
                    "intervals must be sorted and strictly disjoint".into(),
                ));
            }
        }
        Ok(Self { intervals })
    }

    /// The whole real line; selection inactive for this component.
    pub fn full() -> Self {
        Self {
            intervals: vec![Interval {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            }],
        }
    }

    /// (-inf, -a] u [a, inf) for a >= 0; degenerates to the full line at a = 0.
    pub fn two_sided(a: f64) -> Result<Self> {
        if !(a >= 0.0) {
            return Err(Error::ParamDomain(format!("two-sided threshold {a} < 0")));
        }
        if a == 0.0 {
            return Ok(Self::full());
        }
        Self::new(vec![
            Interval::new(f64::NEG_INFINITY, -a)?,
            Interval::new(a, f64::INFINITY)?,
        ])
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_full(&self) -> bool {
        self.intervals.len() == 1
            && self.intervals[0].lo == f64::NEG_INFINITY
            && self.intervals[0].hi == f64::INFINITY
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|iv| iv.contains(x))
    }

    /// Point of the union closest to `x`.
    pub fn nearest_point(&self, x: f64) -> f64 {
        if self.contains(x) {
            return x;
        }
        let mut best = f64::NAN;
        let mut best_d = f64::INFINITY;
        for iv in &self.intervals {
            for e in [iv.lo, iv.hi] {
                if e.is_finite() {
                    let d = (x - e).abs();
                    if d < best_d {
                        best_d = d;
                        best = e;
                    }
                }
            }
        }
        // a union with no finite endpoint is the full line, handled above
        best
    }

    /// Some finite point inside the union, used for degenerate fallbacks.
    pub fn finite_anchor(&self) -> f64 {
        let iv = self.intervals[0];
        if iv.lo.is_finite() && iv.hi.is_finite() {
            0.5 * (iv.lo + iv.hi)
        } else if iv.lo.is_finite() {
            iv.lo
        } else if iv.hi.is_finite() {
            iv.hi
        } else {
            0.0
        }
    }

    /// P(X in union) for X ~ N(mean, sd^2).
    pub fn mass_under_normal(&self, mean: f64, sd: f64) -> f64 {
        if self.is_full() {
            return 1.0;
        }
        if sd <= 0.0 {
            // point mass: indicator of membership
            return if self.contains(mean) { 1.0 } else { 0.0 };
        }
        self.intervals
            .iter()
            .map(|iv| std_interval_prob((iv.lo - mean) / sd, (iv.hi - mean) / sd))
            .sum()
    }

    /// Mean of N(mean, sd^2) truncated to the union.
    pub fn truncated_normal_mean(&self, mean: f64, sd: f64) -> f64 {
        let mut mass = 0.0;
        let mut acc = 0.0;
        for iv in &self.intervals {
            let a = (iv.lo - mean) / sd;
            let b = (iv.hi - mean) / sd;
            let z = std_interval_prob(a, b);
            if z > 0.0 {
                let pa = if a.is_finite() { std_pdf(a) } else { 0.0 };
                let pb = if b.is_finite() { std_pdf(b) } else { 0.0 };
                acc += z * (mean + sd * (pa - pb) / z);
                mass += z;
            }
        }
        if mass > 0.0 {
            acc / mass
        } else {
            self.nearest_point(mean)
        }
    }

    /// The interval carrying the most mass under N(mean, sd^2); ties keep the
    /// leftmost. Returns (interval, its mass, total mass).
    pub fn dominant_interval(&self, mean: f64, sd: f64) -> (Interval, f64, f64) {
        let mut best = self.intervals[0];
        let mut best_p = -1.0;
        let mut total = 0.0;
        for iv in &self.intervals {
            let p = std_interval_prob((iv.lo - mean) / sd, (iv.hi - mean) / sd);
            total += p;
            if p > best_p {
                best_p = p;
                best = *iv;
            }
        }
        (best, best_p.max(0.0), total)
    }

    /// Inverse-cdf draw from N(mean, sd^2) truncated to the union, driven by a
    /// uniform u in [0, 1).
    ///
    /// Returns (sample, total mass, underflow flag). When the total mass
    /// underflows to zero, the nearest finite endpoint is proposed and the
    /// flag is set.
    pub fn sample_truncated_normal(&self, mean: f64, sd: f64, u: f64) -> (f64, f64, bool) {
        if self.is_full() {
            return (mean + sd * std_inv_cdf(u), 1.0, false);
        }
        let masses: Vec<f64> = self
            .intervals
            .iter()
            .map(|iv| std_interval_prob((iv.lo - mean) / sd, (iv.hi - mean) / sd))
            .collect();
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return (self.nearest_point(mean), 0.0, true);
        }
        let mut target = u * total;
        let mut chosen = self.intervals.len() - 1;
        for (k, &m) in masses.iter().enumerate() {
            if target < m {
                chosen = k;
                break;
            }
            target -= m;
        }
        let iv = self.intervals[chosen];
        let a = (iv.lo - mean) / sd;
        let b = (iv.hi - mean) / sd;
        let frac = (target / masses[chosen]).clamp(0.0, 1.0 - 1e-16);
        let z = draw_in_interval(a, b, frac);
        let x = (mean + sd * z).clamp(
            if iv.lo.is_finite() { iv.lo } else { f64::NEG_INFINITY },
            if iv.hi.is_finite() { iv.hi } else { f64::INFINITY },
        );
        (x, total, false)
    }
}

/// Inverse-cdf draw of a standard normal restricted to [a, b] at quantile
/// fraction `frac`; complementary arithmetic keeps the tails stable.
fn draw_in_interval(a: f64, b: f64, frac: f64) -> f64 {
    if a >= 0.0 {
        let pa = std_ccdf(a);
        let pb = std_ccdf(b);
        std_inv_ccdf(pa - frac * (pa - pb))
    } else if b <= 0.0 {
        let pa = std_cdf(a);
        let pb = std_cdf(b);
        std_inv_cdf(pa + frac * (pb - pa))
    } else {
        let pa = std_cdf(a);
        let pb = std_cdf(b);
        std_inv_cdf(pa + frac * (pb - pa))
    }
}

/// Product selection set over q components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SelectionSet {
    pub components: Vec<IntervalUnion>,
}

impl SelectionSet {
    pub fn new(components: Vec<IntervalUnion>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::ParamDomain("selection set with no components".into()));
        }
        Ok(Self { components })
    }

    /// The same per-component union replicated over n components.
    pub fn replicated(union: IntervalUnion, n: usize) -> Result<Self> {
        Self::new(vec![union; n])
    }

    pub fn full(n: usize) -> Self {
        Self {
            components: vec![IntervalUnion::full(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn is_full(&self) -> bool {
        self.components.iter().all(IntervalUnion::is_full)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.components)
                .all(|(&xi, u)| u.contains(xi))
    }
}
