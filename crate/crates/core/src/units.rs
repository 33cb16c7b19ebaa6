// SPDX-License-Identifier: Apache-2.0

//! Exact bandwidth and latency quantities.
//!
//! Documents and payloads carry Mbps and milliseconds as decimal numbers.
//! Internally both are integers (kilobits per second and microseconds) so that
//! reserve/release pairs and latency sums are bit-exact.

use std::fmt;
use std::iter::Sum;
use std::ops::Add;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Rejected decimal quantity.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnitError {
    #[error("{0} is not a finite non-negative number")]
    OutOfRange(f64),
    #[error("{0} has more precision than the 0.001 resolution")]
    TooPrecise(f64),
}

fn thousandths(value: f64) -> Result<u64, UnitError> {
    if !value.is_finite() || !(0.0..=9.0e12).contains(&value) {
        return Err(UnitError::OutOfRange(value));
    }
    let scaled = value * 1000.0;
    let rounded = scaled.round();
    if (scaled - rounded).abs() > 1e-6 * scaled.max(1.0) {
        return Err(UnitError::TooPrecise(value));
    }
    Ok(rounded as u64)
}

fn fmt_thousandths(v: u64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let whole = v / 1000;
    let frac = v % 1000;
    if frac == 0 {
        write!(f, "{whole}")
    } else {
        let s = format!("{frac:03}");
        write!(f, "{whole}.{}", s.trim_end_matches('0'))
    }
}

/// Bandwidth stored as integer kilobits per second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Bandwidth(u64);

impl Bandwidth {
    pub const ZERO: Bandwidth = Bandwidth(0);

    pub const fn from_kbps(kbps: u64) -> Self {
        Bandwidth(kbps)
    }

    pub const fn from_whole_mbps(mbps: u64) -> Self {
        Bandwidth(mbps * 1000)
    }

    /// Converts a decimal Mbps amount. Sub-kbps precision is rejected rather
    /// than rounded away.
    pub fn from_mbps(mbps: f64) -> Result<Self, UnitError> {
        thousandths(mbps).map(Bandwidth)
    }

    pub const fn kbps(self) -> u64 {
        self.0
    }

    pub fn mbps(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: Bandwidth) -> Option<Bandwidth> {
        self.0.checked_add(other.0).map(Bandwidth)
    }

    pub fn checked_sub(self, other: Bandwidth) -> Option<Bandwidth> {
        self.0.checked_sub(other.0).map(Bandwidth)
    }

    pub fn saturating_sub(self, other: Bandwidth) -> Bandwidth {
        Bandwidth(self.0.saturating_sub(other.0))
    }

    /// `self * num / den`, rounded down.
    pub fn scale(self, num: Bandwidth, den: Bandwidth) -> Bandwidth {
        if den.0 == 0 {
            return Bandwidth::ZERO;
        }
        Bandwidth((self.0 as u128 * num.0 as u128 / den.0 as u128) as u64)
    }
}

impl Add for Bandwidth {
    type Output = Bandwidth;
    fn add(self, rhs: Bandwidth) -> Bandwidth {
        Bandwidth(self.0 + rhs.0)
    }
}

impl Sum for Bandwidth {
    fn sum<I: Iterator<Item = Bandwidth>>(iter: I) -> Self {
        iter.fold(Bandwidth::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_thousandths(self.0, f)
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.mbps())
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Bandwidth::from_mbps(v).map_err(serde::de::Error::custom)
    }
}

/// Latency stored as integer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Latency(u64);

impl Latency {
    pub const ZERO: Latency = Latency(0);

    pub const fn from_micros(us: u64) -> Self {
        Latency(us)
    }

    pub const fn from_whole_ms(ms: u64) -> Self {
        Latency(ms * 1000)
    }

    pub fn from_ms(ms: f64) -> Result<Self, UnitError> {
        thousandths(ms).map(Latency)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn ms(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl Add for Latency {
    type Output = Latency;
    fn add(self, rhs: Latency) -> Latency {
        Latency(self.0 + rhs.0)
    }
}

impl Sum for Latency {
    fn sum<I: Iterator<Item = Latency>>(iter: I) -> Self {
        iter.fold(Latency::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Latency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_thousandths(self.0, f)
    }
}

impl Serialize for Latency {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.ms())
    }
}

impl<'de> Deserialize<'de> for Latency {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Latency::from_ms(v).map_err(serde::de::Error::custom)
    }
}

/// Minimum residual along a path. An empty path has no constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bottleneck {
    Unconstrained,
    Limited(Bandwidth),
}

impl Bottleneck {
    pub fn with(self, residual: Bandwidth) -> Bottleneck {
        match self {
            Bottleneck::Unconstrained => Bottleneck::Limited(residual),
            Bottleneck::Limited(b) => Bottleneck::Limited(b.min(residual)),
        }
    }

    pub fn admits(self, amount: Bandwidth) -> bool {
        match self {
            Bottleneck::Unconstrained => true,
            Bottleneck::Limited(b) => b >= amount,
        }
    }

    pub fn limit(self) -> Option<Bandwidth> {
        match self {
            Bottleneck::Unconstrained => None,
            Bottleneck::Limited(b) => Some(b),
        }
    }
}

impl fmt::Display for Bottleneck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bottleneck::Unconstrained => f.write_str("unconstrained"),
            Bottleneck::Limited(b) => write!(f, "{b}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_mbps_is_exact() {
        assert_eq!(Bandwidth::from_mbps(1000.01).unwrap().kbps(), 1_000_010);
        assert_eq!(Bandwidth::from_mbps(0.001).unwrap().kbps(), 1);
        assert!(matches!(Bandwidth::from_mbps(0.0004), Err(UnitError::TooPrecise(_))));
        assert!(Bandwidth::from_mbps(-1.0).is_err());
        assert!(Bandwidth::from_mbps(f64::NAN).is_err());
    }

    #[test]
    fn display_trims_zeros() {
        assert_eq!(Bandwidth::from_kbps(100_000).to_string(), "100");
        assert_eq!(Bandwidth::from_kbps(1_000_010).to_string(), "1000.01");
        assert_eq!(Latency::from_micros(12_500).to_string(), "12.5");
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let b = Bandwidth::from_kbps(123_457);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "123.457");
        assert_eq!(serde_json::from_str::<Bandwidth>(&s).unwrap(), b);
    }

    #[test]
    fn proportional_scale() {
        let cap = Bandwidth::from_whole_mbps(100);
        let share = cap.scale(Bandwidth::from_whole_mbps(30), Bandwidth::from_whole_mbps(120));
        assert_eq!(share, Bandwidth::from_whole_mbps(25));
    }

    #[test]
    fn bottleneck_folds_minimum() {
        let b = Bottleneck::Unconstrained
            .with(Bandwidth::from_whole_mbps(5))
            .with(Bandwidth::from_whole_mbps(3));
        assert_eq!(b, Bottleneck::Limited(Bandwidth::from_whole_mbps(3)));
        assert!(Bottleneck::Unconstrained.admits(Bandwidth::from_whole_mbps(1 << 20)));
    }
}
