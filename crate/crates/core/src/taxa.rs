//! Seven-rank taxonomic labels: kingdom, phylum, class, order, family,
//! genus, species. A label may be truncated, but only from the tail, so a
//! taxon is simply a nonempty prefix of rank names.

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

pub const RANK_COUNT: usize = 7;
pub const RANK_NAMES: [&str; RANK_COUNT] =
    ["kingdom", "phylum", "class", "order", "family", "genus", "species"];

/// Index into the rank hierarchy, 0 = kingdom .. 6 = species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankLevel(u8);

impl RankLevel {
    pub const KINGDOM: RankLevel = RankLevel(0);
    pub const PHYLUM: RankLevel = RankLevel(1);
    pub const CLASS: RankLevel = RankLevel(2);
    pub const ORDER: RankLevel = RankLevel(3);
    pub const FAMILY: RankLevel = RankLevel(4);
    pub const GENUS: RankLevel = RankLevel(5);
    pub const SPECIES: RankLevel = RankLevel(6);

    pub fn new(index: usize) -> Result<Self> {
        if index >= RANK_COUNT {
            return Err(Error::IndexOutOfRange { index, len: RANK_COUNT });
        }
        Ok(RankLevel(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        RANK_NAMES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = RankLevel> {
        (0..RANK_COUNT).map(|i| RankLevel(i as u8))
    }
}

/// A root-anchored rank path. `names[0]` is the kingdom; truncation is only
/// ever at the tail, so `names.len()` is the taxon's depth.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Taxon {
    names: Vec<String>,
}

impl Taxon {
    /// Build from rank names ordered kingdom-first. Rejects empty input,
    /// more than seven ranks, and names that are empty or hold whitespace.
    pub fn from_parts(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::EmptyLabel);
        }
        if names.len() > RANK_COUNT {
            return Err(Error::TooManyRanks { got: names.len() });
        }
        for n in &names {
            if n.is_empty() {
                return Err(Error::InvalidTaxon { reason: "empty rank name".into() });
            }
            if n.chars().any(|c| c.is_whitespace()) {
                return Err(Error::InvalidTaxon {
                    reason: format!("rank name {n:?} contains whitespace"),
                });
            }
        }
        Ok(Taxon { names })
    }

    /// Parse a whitespace-separated label, kingdom first.
    pub fn parse_label(label: &str) -> Result<Self> {
        let parts: Vec<String> = label.split_whitespace().map(str::to_owned).collect();
        Self::from_parts(parts)
    }

    /// Names joined with single spaces, kingdom first.
    pub fn canonical_string(&self) -> String {
        self.names.join(" ")
    }

    /// Number of ranks present.
    pub fn depth(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name_at(&self, rank: RankLevel) -> Option<&str> {
        self.names.get(rank.index()).map(String::as_str)
    }

    /// (rank, name) pairs actually present.
    pub fn present(&self) -> impl Iterator<Item = (RankLevel, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (RankLevel(i as u8), n.as_str()))
    }

    pub fn is_full(&self) -> bool {
        self.names.len() == RANK_COUNT
    }
}

/// Deepest rank at which `a` and `b` agree on every slot from the kingdom
/// down; `None` when even the kingdoms differ. A slot present on one side
/// and absent on the other counts as disagreement.
pub fn lowest_common_rank(a: &Taxon, b: &Taxon) -> Option<RankLevel> {
    let mut common: Option<RankLevel> = None;
    for i in 0..RANK_COUNT {
        match (a.names.get(i), b.names.get(i)) {
            (Some(x), Some(y)) if x == y => common = Some(RankLevel(i as u8)),
            _ => break,
        }
    }
    common
}

impl std::fmt::Display for Taxon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.canonical_string())
    }
}

impl Serialize for Taxon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.canonical_string())
    }
}

impl<'de> Deserialize<'de> for Taxon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Taxon::parse_label(&raw).map_err(de::Error::custom)
    }
}
