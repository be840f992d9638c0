//! Fixed-point quantities with three fractional digits.
//!
//! Energy (kWh), power (kW) and money all use [`Fixed3`] so billing
//! arithmetic stays exact and serializes to the same string on every run.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A decimal value stored as an integer number of thousandths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fixed3(i64);

pub type Kwh = Fixed3;
pub type Kw = Fixed3;
pub type Money = Fixed3;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid fixed-point decimal {0:?}")]
pub struct ParseFixedError(pub String);

impl Fixed3 {
    pub const ZERO: Fixed3 = Fixed3(0);

    pub const fn from_milli(milli: i64) -> Self {
        Fixed3(milli)
    }

    pub const fn from_int(units: i64) -> Self {
        Fixed3(units * 1000)
    }

    pub const fn milli(self) -> i64 {
        self.0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    /// Divides into `parts` equal shares, flooring to the nearest thousandth.
    pub fn split_floor(self, parts: u32) -> Fixed3 {
        if parts == 0 {
            return Fixed3::ZERO;
        }
        Fixed3(self.0.div_euclid(i64::from(parts)))
    }
}

impl Add for Fixed3 {
    type Output = Fixed3;
    fn add(self, rhs: Fixed3) -> Fixed3 {
        Fixed3(self.0 + rhs.0)
    }
}

/// Truncates toward negative infinity to three digits.
impl Mul for Fixed3 {
    type Output = Fixed3;
    fn mul(self, other: Fixed3) -> Fixed3 {
        let wide = i128::from(self.0) * i128::from(other.0);
        Fixed3(wide.div_euclid(1000) as i64)
    }
}

impl Sub for Fixed3 {
    type Output = Fixed3;
    fn sub(self, rhs: Fixed3) -> Fixed3 {
        Fixed3(self.0 - rhs.0)
    }
}

impl std::iter::Sum for Fixed3 {
    fn sum<I: Iterator<Item = Fixed3>>(iter: I) -> Fixed3 {
        iter.fold(Fixed3::ZERO, Add::add)
    }
}

impl fmt::Display for Fixed3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:03}", abs / 1000, abs % 1000)
    }
}

impl FromStr for Fixed3 {
    type Err = ParseFixedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseFixedError(s.to_string());
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty()
            || frac_part.len() > 3
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(err());
        }
        let units: i64 = int_part.parse().map_err(|_| err())?;
        let mut frac: i64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| err())?
        };
        for _ in frac_part.len()..3 {
            frac *= 10;
        }
        let milli = units
            .checked_mul(1000)
            .and_then(|m| m.checked_add(frac))
            .ok_or_else(err)?;
        Ok(Fixed3(if negative { -milli } else { milli }))
    }
}

impl Serialize for Fixed3 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fixed3 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}
