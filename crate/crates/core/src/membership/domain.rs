use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const NUM_DOMAINS: usize = 9;

/// Canonical domain order.
pub const DOMAIN_NAMES: [&str; NUM_DOMAINS] = [
    "Science",
    "Military",
    "Education",
    "Accidents",
    "Politics",
    "Health",
    "Finance",
    "Entertainment",
    "Society",
];

/// One of the nine news domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainId(u8);

impl DomainId {
    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_DOMAINS {
            Ok(DomainId(index as u8))
        } else {
            Err(Error::Bounds {
                what: "domain index",
                value: index,
                min: 0,
                max: NUM_DOMAINS - 1,
            })
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        DOMAIN_NAMES[self.index()]
    }

    /// Case-insensitive lookup of a canonical name.
    pub fn from_name(name: &str) -> Result<Self> {
        DOMAIN_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name.trim()))
            .map(|i| DomainId(i as u8))
            .ok_or_else(|| Error::input(format!("unknown domain {name:?}")))
    }

    pub fn all() -> impl Iterator<Item = DomainId> {
        (0..NUM_DOMAINS as u8).map(DomainId)
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for DomainId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for DomainId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        DomainId::from_name(&name).map_err(serde::de::Error::custom)
    }
}

/// Membership grades over the nine domains; a point on the probability
/// simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzyDomainLabel {
    grades: [f64; NUM_DOMAINS],
}

/// Simplex tolerance for grade sums.
pub const SIMPLEX_TOL: f64 = 1e-6;

impl FuzzyDomainLabel {
    pub fn new(grades: [f64; NUM_DOMAINS]) -> Result<Self> {
        let total: f64 = grades.iter().sum();
        if grades.iter().any(|g| !(0.0..=1.0).contains(g)) || (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::input(format!("not a fuzzy domain label: {grades:?}")));
        }
        Ok(FuzzyDomainLabel { grades })
    }

    pub fn from_slice(grades: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_DOMAINS] = grades
            .try_into()
            .map_err(|_| Error::input(format!("expected {NUM_DOMAINS} grades, got {}", grades.len())))?;
        Self::new(arr)
    }

    pub fn one_hot(domain: DomainId) -> Self {
        let mut grades = [0.0; NUM_DOMAINS];
        grades[domain.index()] = 1.0;
        FuzzyDomainLabel { grades }
    }

    pub fn uniform() -> Self {
        FuzzyDomainLabel {
            grades: [1.0 / NUM_DOMAINS as f64; NUM_DOMAINS],
        }
    }

    pub fn grades(&self) -> &[f64; NUM_DOMAINS] {
        &self.grades
    }

    pub fn grade(&self, domain: DomainId) -> f64 {
        self.grades[domain.index()]
    }

    /// Domain with the largest grade; ties go to the lowest index.
    pub fn argmax(&self) -> DomainId {
        let mut best = 0;
        for (i, &g) in self.grades.iter().enumerate().skip(1) {
            if g > self.grades[best] {
                best = i;
            }
        }
        DomainId(best as u8)
    }
}

/// Single-domain assignment used where a hard label is required.
pub fn argmax_domain(g: &FuzzyDomainLabel) -> DomainId {
    g.argmax()
}
