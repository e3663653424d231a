//! Exact non-negative rationals written as `"a/b"` or as a decimal string.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fraction(Ratio<u64>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{0}` is not a non-negative fraction (expected `a/b` or a decimal)")]
pub struct ParseFractionError(String);

impl Fraction {
    pub fn new(numer: u64, denom: u64) -> Self {
        assert!(denom != 0, "zero denominator");
        Fraction(Ratio::new(numer, denom))
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    pub fn to_f64(self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn is_zero(&self) -> bool {
        self.numer() == 0
    }

    /// `round(n * self)` with ties away from zero, in exact integer arithmetic.
    pub fn round_mul(&self, n: u64) -> u64 {
        let num = n as u128 * self.numer() as u128;
        let den = self.denom() as u128;
        ((2 * num + den) / (2 * den)) as u64
    }
}

impl FromStr for Fraction {
    type Err = ParseFractionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseFractionError(s.to_string());
        let t = s.trim();
        if let Some((a, b)) = t.split_once('/') {
            let a: u64 = a.trim().parse().map_err(|_| err())?;
            let b: u64 = b.trim().parse().map_err(|_| err())?;
            if b == 0 {
                return Err(err());
            }
            return Ok(Fraction::new(a, b));
        }
        let (int, frac) = t.split_once('.').unwrap_or((t, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(err());
        }
        let all_digits = |p: &str| p.bytes().all(|c| c.is_ascii_digit());
        if !all_digits(int) || !all_digits(frac) || frac.len() > 18 {
            return Err(err());
        }
        let denom = 10u64.checked_pow(frac.len() as u32).ok_or_else(err)?;
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| err())? };
        let frac_v: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| err())? };
        let numer = int
            .checked_mul(denom)
            .and_then(|v| v.checked_add(frac_v))
            .ok_or_else(err)?;
        Ok(Fraction::new(numer, denom))
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Int(u64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::Int(n) => Ok(Fraction::new(n, 1)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fraction_and_decimal_forms() {
        let a: Fraction = "1/1024".parse().unwrap();
        let b: Fraction = "0.0009765625".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_f64(), 1.0 / 1024.0);
        assert_eq!("1".parse::<Fraction>().unwrap(), Fraction::new(1, 1));
        assert_eq!(".5".parse::<Fraction>().unwrap(), Fraction::new(1, 2));
        assert_eq!("2/16".parse::<Fraction>().unwrap().to_string(), "1/8");
    }

    #[test]
    fn rejects_garbage() {
        for s in ["", "/", "1/0", "-1/2", "abc", "1.2.3", "1e-3", "."] {
            assert!(s.parse::<Fraction>().is_err(), "{s}");
        }
    }

    #[test]
    fn round_mul_ties_away_from_zero() {
        let half = Fraction::new(1, 2);
        assert_eq!(half.round_mul(5), 3);
        assert_eq!(half.round_mul(4), 2);
        assert_eq!(Fraction::new(1, 8).round_mul(100), 13);
        assert_eq!(Fraction::new(1, 8).round_mul(4), 1);
    }

    #[test]
    fn serde_as_string() {
        let f = Fraction::new(1, 8);
        assert_eq!(serde_json::to_string(&f).unwrap(), "\"1/8\"");
        let back: Fraction = serde_json::from_str("\"0.125\"").unwrap();
        assert_eq!(back, f);
    }
}
