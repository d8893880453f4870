use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// A calendar quarter such as `2008Q1`.
///
/// Quarters are totally ordered and support integer offsets, so the target of
/// a forecast issued at `origin` with horizon `h` is `origin + (h - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    year: i32,
    q: u8,
}

impl Quarter {
    pub fn new(year: i32, q: u8) -> Result<Self, Error> {
        if !(1..=4).contains(&q) {
            return Err(Error::Parse(format!("quarter index {q} outside 1..=4")));
        }
        Ok(Quarter { year, q })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn q(self) -> u8 {
        self.q
    }

    /// Quarter containing the given calendar month (1..=12).
    pub fn of_month(month: Month) -> Self {
        Quarter {
            year: month.year,
            q: (month.month - 1) / 3 + 1,
        }
    }

    /// First month of the quarter.
    pub fn first_month(self) -> Month {
        Month {
            year: self.year,
            month: (self.q - 1) * 3 + 1,
        }
    }

    fn index(self) -> i64 {
        self.year as i64 * 4 + (self.q as i64 - 1)
    }

    fn from_index(idx: i64) -> Self {
        Quarter {
            year: idx.div_euclid(4) as i32,
            q: idx.rem_euclid(4) as u8 + 1,
        }
    }

    /// Signed number of quarters from `other` to `self`.
    pub fn diff(self, other: Quarter) -> i64 {
        self.index() - other.index()
    }

    /// Inclusive range of quarters, empty when `end < start`.
    pub fn range_inclusive(start: Quarter, end: Quarter) -> impl Iterator<Item = Quarter> {
        (start.index()..=end.index()).map(Quarter::from_index)
    }
}

impl Add<i64> for Quarter {
    type Output = Quarter;
    fn add(self, rhs: i64) -> Quarter {
        Quarter::from_index(self.index() + rhs)
    }
}

impl Sub<i64> for Quarter {
    type Output = Quarter;
    fn sub(self, rhs: i64) -> Quarter {
        Quarter::from_index(self.index() - rhs)
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.q)
    }
}

impl FromStr for Quarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        let bad = || Error::Parse(format!("invalid quarter {s:?}, expected YYYYQn"));
        let (year, q) = s.split_once(['Q', 'q']).ok_or_else(bad)?;
        let year: i32 = year.parse().map_err(|_| bad())?;
        let q: u8 = q.parse().map_err(|_| bad())?;
        Quarter::new(year, q)
    }
}

impl Serialize for Quarter {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quarter {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A calendar month, `YYYY-MM` on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    year: i32,
    month: u8,
}

impl Month {
    pub fn new(year: i32, month: u8) -> Result<Self, Error> {
        if !(1..=12).contains(&month) {
            return Err(Error::Parse(format!("month {month} outside 1..=12")));
        }
        Ok(Month { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u8 {
        self.month
    }

    fn index(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn next(self) -> Month {
        let idx = self.index() + 1;
        Month {
            year: idx.div_euclid(12) as i32,
            month: idx.rem_euclid(12) as u8 + 1,
        }
    }

    pub fn diff(self, other: Month) -> i64 {
        self.index() - other.index()
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{:02}", self.year, self.month)
    }
}

impl FromStr for Month {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        let bad = || Error::Parse(format!("invalid month {s:?}, expected YYYY-MM"));
        let (year, month) = s.split_once('-').ok_or_else(bad)?;
        Month::new(
            year.parse().map_err(|_| bad())?,
            month.parse().map_err(|_| bad())?,
        )
    }
}

impl Serialize for Month {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Quarter {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(q("2008Q1").to_string(), "2008Q1");
        assert_eq!(q(" 1995q3 ").to_string(), "1995Q3");
        assert!("2008Q5".parse::<Quarter>().is_err());
        assert!("2008-1".parse::<Quarter>().is_err());
    }

    #[test]
    fn arithmetic_wraps_years() {
        assert_eq!(q("2008Q4") + 1, q("2009Q1"));
        assert_eq!(q("2009Q1") - 1, q("2008Q4"));
        assert_eq!(q("2008Q1") + 4, q("2009Q1"));
        assert_eq!(q("2010Q1").diff(q("1995Q3")), 58);
        assert_eq!(Quarter::range_inclusive(q("1995Q3"), q("2010Q1")).count(), 59);
    }

    #[test]
    fn months_map_to_quarters() {
        let m: Month = "2010-04".parse().unwrap();
        assert_eq!(Quarter::of_month(m), q("2010Q2"));
        assert_eq!(q("2010Q2").first_month(), m);
        assert_eq!("2009-12".parse::<Month>().unwrap().next().to_string(), "2010-01");
        assert!("2009-13".parse::<Month>().is_err());
    }
}
