//! Two-decimal fixed-point values.
//!
//! Every continuous measurement in the system is carried as an integer count
//! of hundredths. Means are kept as exact rationals over those counts and only
//! rounded (half-up) when presented.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Slack added before flooring so that decimal literals such as `1.005`, whose
/// binary image sits just below the tie, still round up.
const HALF_UP_SLACK: f64 = 1e-6;

/// A value with 0.01 resolution, stored as hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Centi(i64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid decimal {input:?}: {reason}")]
pub struct ParseCentiError {
    input: String,
    reason: &'static str,
}

impl Centi {
    pub const ZERO: Centi = Centi(0);

    pub const fn from_hundredths(hundredths: i64) -> Self {
        Centi(hundredths)
    }

    pub const fn from_units(units: i64) -> Self {
        Centi(units * 100)
    }

    pub const fn hundredths(self) -> i64 {
        self.0
    }

    /// Converts with round-half-up on the scaled value. Non-finite input maps
    /// to `None`.
    pub fn from_f64(value: f64) -> Option<Self> {
        if !value.is_finite() {
            return None;
        }
        let scaled = (value * 100.0 + 0.5 + HALF_UP_SLACK).floor();
        if scaled.abs() > i64::MAX as f64 / 2.0 {
            return None;
        }
        Some(Centi(scaled as i64))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Half-up rounding to a whole number of units.
    pub fn round_units(self) -> i64 {
        div_floor(2 * self.0 + 100, 200)
    }

    /// Half-up rounding to tenths, returned as a count of tenths.
    pub fn round_tenths(self) -> i64 {
        div_floor(2 * self.0 + 10, 20)
    }

    pub fn as_ratio(self) -> Ratio<i128> {
        Ratio::from_integer(self.0 as i128)
    }
}

impl fmt::Display for Centi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl FromStr for Centi {
    type Err = ParseCentiError;

    /// Parses a plain decimal literal exactly. More than two fractional
    /// digits are rejected rather than silently rounded.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| ParseCentiError {
            input: s.to_string(),
            reason,
        };
        let trimmed = s.trim();
        let (negative, body) = match trimmed.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, trimmed.strip_prefix('+').unwrap_or(trimmed)),
        };
        if body.is_empty() {
            return Err(err("empty"));
        }
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if frac_part.len() > 2 {
            return Err(err("more than two fractional digits"));
        }
        let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
        if int_part.is_empty() || !all_digits(int_part) || !all_digits(frac_part) {
            return Err(err("not a decimal number"));
        }
        let units: i64 = int_part.parse().map_err(|_| err("out of range"))?;
        let mut frac: i64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| err("not a decimal number"))?
        };
        if frac_part.len() == 1 {
            frac *= 10;
        }
        let magnitude = units
            .checked_mul(100)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(|| err("out of range"))?;
        Ok(Centi(if negative { -magnitude } else { magnitude }))
    }
}

impl std::ops::Add for Centi {
    type Output = Centi;
    fn add(self, rhs: Centi) -> Centi {
        Centi(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Centi {
    type Output = Centi;
    fn sub(self, rhs: Centi) -> Centi {
        Centi(self.0 - rhs.0)
    }
}

impl Serialize for Centi {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Centi {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Centi::from_f64(value)
            .ok_or_else(|| serde::de::Error::custom(format!("{value} is not a finite number")))
    }
}

fn div_floor(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

/// Half-up rounding of an exact rational to the nearest integer.
pub fn round_half_up(value: Ratio<i128>) -> i128 {
    (value + Ratio::new(1, 2)).floor().to_integer()
}

/// Exact arithmetic mean of rationals. `None` on empty input.
pub fn exact_mean<I>(values: I) -> Option<Ratio<i128>>
where
    I: IntoIterator<Item = Ratio<i128>>,
{
    let mut sum = Ratio::zero();
    let mut count: i128 = 0;
    for v in values {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / Ratio::from_integer(count))
}

/// Lossy view of a rational, for presentation and plotting only.
pub fn ratio_to_f64(value: Ratio<i128>) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_table_literals_exactly() {
        assert_eq!("34.19".parse::<Centi>().unwrap().hundredths(), 3419);
        assert_eq!("389.4".parse::<Centi>().unwrap().hundredths(), 38940);
        assert_eq!("-12.05".parse::<Centi>().unwrap().hundredths(), -1205);
        assert_eq!("68".parse::<Centi>().unwrap().hundredths(), 6800);
        assert!("1.005".parse::<Centi>().is_err());
        assert!("abc".parse::<Centi>().is_err());
        assert!("".parse::<Centi>().is_err());
    }

    #[test]
    fn display_keeps_two_decimals() {
        assert_eq!(Centi::from_hundredths(3410).to_string(), "34.10");
        assert_eq!(Centi::from_hundredths(-5).to_string(), "-0.05");
        assert_eq!(Centi::from_hundredths(0).to_string(), "0.00");
    }

    #[test]
    fn float_conversion_rounds_half_up() {
        assert_eq!(Centi::from_f64(73.51).unwrap().hundredths(), 7351);
        assert_eq!(Centi::from_f64(1.005).unwrap().hundredths(), 101);
        assert_eq!(Centi::from_f64(-0.005).unwrap().hundredths(), 0);
        assert_eq!(Centi::from_f64(f64::NAN), None);
    }

    #[test]
    fn unit_and_tenth_rounding() {
        assert_eq!(Centi::from_hundredths(9450).round_units(), 95);
        assert_eq!(Centi::from_hundredths(9449).round_units(), 94);
        assert_eq!(Centi::from_hundredths(-50).round_units(), 0);
        assert_eq!(Centi::from_hundredths(7351).round_tenths(), 735);
        assert_eq!(Centi::from_hundredths(7355).round_tenths(), 736);
        assert_eq!(Centi::from_hundredths(-1205).round_tenths(), -120);
    }

    #[test]
    fn rational_rounding() {
        assert_eq!(round_half_up(Ratio::new(189, 2)), 95);
        assert_eq!(round_half_up(Ratio::new(-1, 2)), 0);
        assert_eq!(exact_mean(Vec::new()), None);
        assert_eq!(
            exact_mean([Ratio::from_integer(1), Ratio::from_integer(2)]),
            Some(Ratio::new(3, 2))
        );
    }
}
