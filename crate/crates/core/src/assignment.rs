//! Packed binary assignment vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest number of units an assignment vector can hold.
pub const MAX_UNITS: usize = 64;

/// A length-`n` treatment allocation. Unit 0 sits in the most significant used bit, so the
/// derived ordering is lexicographic in the bit string ("0011" < "0101" < ... < "1100").
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment {
    bits: u64,
    n: u8,
}

impl Assignment {
    fn full_mask(n: usize) -> u64 {
        if n == 64 {
            u64::MAX
        } else {
            (1u64 << n) - 1
        }
    }

    #[inline]
    fn mask(&self, i: usize) -> u64 {
        1u64 << (self.n as usize - 1 - i)
    }

    /// All-control vector.
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_UNITS {
            return Err(Error::invalid(format!(
                "assignment length must be in 1..={MAX_UNITS}, got {n}"
            )));
        }
        Ok(Self { bits: 0, n: n as u8 })
    }

    /// Builds from raw bits where unit `i` is bit `n - 1 - i`.
    pub fn from_raw(n: usize, bits: u64) -> Result<Self> {
        let z = Self::zeros(n)?;
        if bits & !Self::full_mask(n) != 0 {
            return Err(Error::invalid("bits set beyond the vector length"));
        }
        Ok(Self { bits, ..z })
    }

    pub(crate) fn from_raw_unchecked(n: usize, bits: u64) -> Self {
        Self { bits, n: n as u8 }
    }

    pub fn from_bools(w: &[bool]) -> Result<Self> {
        let mut a = Self::zeros(w.len())?;
        for (i, &b) in w.iter().enumerate() {
            if b {
                a.bits |= a.mask(i);
            }
        }
        Ok(a)
    }

    /// Builds from 0/1 indicators; any other value is rejected.
    pub fn from_indicators(w: &[u8]) -> Result<Self> {
        let mut a = Self::zeros(w.len())?;
        for (i, &b) in w.iter().enumerate() {
            match b {
                0 => {}
                1 => a.bits |= a.mask(i),
                v => return Err(Error::invalid(format!("indicator {v} at unit {i} is not 0 or 1"))),
            }
        }
        Ok(a)
    }

    pub fn from_treated(n: usize, treated: &[usize]) -> Result<Self> {
        let mut a = Self::zeros(n)?;
        for &i in treated {
            if i >= n {
                return Err(Error::OutOfRange { index: i, n });
            }
            a.bits |= a.mask(i);
        }
        Ok(a)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n as usize
    }

    #[inline]
    pub fn raw(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.n());
        self.bits & self.mask(i) != 0
    }

    #[inline]
    pub fn indicator(&self, i: usize) -> f64 {
        if self.get(i) {
            1.0
        } else {
            0.0
        }
    }

    pub fn with(mut self, i: usize, treated: bool) -> Self {
        let m = self.mask(i);
        if treated {
            self.bits |= m;
        } else {
            self.bits &= !m;
        }
        self
    }

    #[inline]
    pub fn n_treated(&self) -> usize {
        self.bits.count_ones() as usize
    }

    #[inline]
    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    /// Label-switched vector 1 - w.
    #[inline]
    pub fn complement(&self) -> Self {
        Self {
            bits: !self.bits & Self::full_mask(self.n()),
            n: self.n,
        }
    }

    /// Number of units treated under both vectors.
    #[inline]
    pub fn common_treated(&self, other: &Assignment) -> usize {
        (self.bits & other.bits).count_ones() as usize
    }

    /// Number of units treated under `other` that are controls under `self`.
    #[inline]
    pub fn treated_among_controls(&self, other: &Assignment) -> usize {
        (!self.bits & other.bits & Self::full_mask(self.n())).count_ones() as usize
    }

    pub fn treated(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&i| self.get(i))
    }

    pub fn controls(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&i| !self.get(i))
    }

    pub fn to_indicators(&self) -> Vec<u8> {
        (0..self.n()).map(|i| self.get(i) as u8).collect()
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n() {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Assignment({self})")
    }
}

impl FromStr for Assignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes: Vec<u8> = s
            .trim()
            .bytes()
            .map(|b| match b {
                b'0' => Ok(0),
                b'1' => Ok(1),
                _ => Err(Error::invalid(format!("bad assignment string {s:?}"))),
            })
            .collect::<Result<_>>()?;
        Self::from_indicators(&bytes)
    }
}

impl Serialize for Assignment {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Assignment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Calls `f` with every `len`-bit mask holding exactly `k` ones, in increasing numeric order.
pub fn for_each_combination(len: usize, k: usize, mut f: impl FnMut(u64)) {
    if k > len {
        return;
    }
    if k == 0 {
        f(0);
        return;
    }
    let limit: u128 = 1u128 << len;
    let mut x: u128 = (1u128 << k) - 1;
    while x < limit {
        f(x as u64);
        let c = x & x.wrapping_neg();
        let r = x + c;
        x = (((r ^ x) >> 2) / c) | r;
    }
}

/// Maps bit `b` of `mask` (counted from the least significant end) onto unit
/// `units[units.len() - 1 - b]`, so ascending masks give lexicographic vectors.
pub fn scatter(n: usize, mask: u64, units: &[usize]) -> u64 {
    let len = units.len();
    let mut bits = 0u64;
    let mut m = mask;
    while m != 0 {
        let b = m.trailing_zeros() as usize;
        let unit = units[len - 1 - b];
        bits |= 1u64 << (n - 1 - unit);
        m &= m - 1;
    }
    bits
}

/// Binomial coefficient as u128; saturates on overflow.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}
