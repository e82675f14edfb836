//! Bounded, eventually periodic external addresses.
//!
//! An address is an infinite integer sequence `s1 s2 s3 ...` stored as a finite
//! preperiod followed by a period block repeated forever. Construction always
//! canonicalizes (primitive block, minimal preperiod), so structural equality
//! and hashing coincide with equality of the represented sequences.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest magnitude accepted for a single entry. Keeps `2π·M` and the
/// enumeration arithmetic far away from overflow.
pub const MAX_ENTRY: i64 = 1 << 40;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AddressError {
    #[error("period block must be nonempty")]
    EmptyBlock,
    #[error("entry {0} exceeds the supported magnitude")]
    EntryOutOfRange(i64),
    #[error("malformed address `{0}`: expected `pre|block` with comma-separated integers")]
    Syntax(String),
}

/// An eventually periodic external address in canonical form.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ExternalAddress {
    preperiod: Vec<i64>,
    block: Vec<i64>,
}

impl ExternalAddress {
    pub fn new(preperiod: Vec<i64>, block: Vec<i64>) -> Result<Self, AddressError> {
        if block.is_empty() {
            return Err(AddressError::EmptyBlock);
        }
        if let Some(&bad) = preperiod
            .iter()
            .chain(block.iter())
            .find(|e| e.unsigned_abs() > MAX_ENTRY as u64)
        {
            return Err(AddressError::EntryOutOfRange(bad));
        }
        Ok(Self::canonical(preperiod, block))
    }

    /// Purely periodic address repeating `block`.
    pub fn periodic(block: &[i64]) -> Result<Self, AddressError> {
        Self::new(Vec::new(), block.to_vec())
    }

    /// The constant sequence `k k k ...`.
    pub fn constant(k: i64) -> Self {
        Self::new(Vec::new(), vec![k]).expect("constant address in range")
    }

    fn canonical(mut pre: Vec<i64>, block: Vec<i64>) -> Self {
        let mut block = primitive_root(block);
        // Fold trailing preperiod entries into the cycle.
        while let Some(&last) = pre.last() {
            if last != *block.last().unwrap() {
                break;
            }
            pre.pop();
            block.rotate_right(1);
        }
        Self { preperiod: pre, block }
    }

    pub fn preperiod(&self) -> &[i64] {
        &self.preperiod
    }

    pub fn period_block(&self) -> &[i64] {
        &self.block
    }

    /// `s_n` for `n >= 1`.
    pub fn entry(&self, n: usize) -> i64 {
        assert!(n >= 1, "address entries are 1-indexed");
        let i = n - 1;
        if i < self.preperiod.len() {
            self.preperiod[i]
        } else {
            self.block[(i - self.preperiod.len()) % self.block.len()]
        }
    }

    /// The shift σ: drops the first entry.
    pub fn shift(&self) -> Self {
        if self.preperiod.is_empty() {
            let mut block = self.block.clone();
            block.rotate_left(1);
            Self { preperiod: Vec::new(), block }
        } else {
            Self {
                preperiod: self.preperiod[1..].to_vec(),
                block: self.block.clone(),
            }
        }
    }

    /// σ applied `k` times.
    pub fn shift_by(&self, k: usize) -> Self {
        if k <= self.preperiod.len() {
            return Self {
                preperiod: self.preperiod[k..].to_vec(),
                block: self.block.clone(),
            };
        }
        let mut block = self.block.clone();
        let r = (k - self.preperiod.len()) % block.len();
        block.rotate_left(r);
        Self { preperiod: Vec::new(), block }
    }

    /// Exact period when purely periodic, `None` for strictly preperiodic addresses.
    pub fn exact_period(&self) -> Option<usize> {
        self.preperiod.is_empty().then_some(self.block.len())
    }

    /// `M(s) = max |s_k|`.
    pub fn max_abs_entry(&self) -> i64 {
        self.preperiod
            .iter()
            .chain(self.block.iter())
            .map(|e| e.abs())
            .max()
            .unwrap_or(0)
    }

    /// Number of leading entries that must be compared to decide equality
    /// against `other`.
    fn decisive_length(&self, other: &Self) -> usize {
        self.preperiod.len().max(other.preperiod.len()) + lcm(self.block.len(), other.block.len())
    }

    /// Index (1-based) of the first entry where the two sequences differ.
    pub fn first_difference(&self, other: &Self) -> Option<usize> {
        (1..=self.decisive_length(other)).find(|&n| self.entry(n) != other.entry(n))
    }

    /// Lexicographic comparison of the represented sequences.
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        match self.first_difference(other) {
            Some(n) => self.entry(n).cmp(&other.entry(n)),
            None => Ordering::Equal,
        }
    }

    /// `lo < self < hi` in lexicographic order.
    pub fn in_open_interval(&self, lo: &Self, hi: &Self) -> bool {
        debug_assert_eq!(lo.lex_cmp(hi), Ordering::Less);
        lo.lex_cmp(self) == Ordering::Less && self.lex_cmp(hi) == Ordering::Less
    }
}

impl PartialOrd for ExternalAddress {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExternalAddress {
    fn cmp(&self, other: &Self) -> Ordering {
        self.lex_cmp(other)
    }
}

/// All addresses with period dividing `n` and entries in `[-m, m]`, in
/// lexicographic order of their length-`n` blocks. Always `(2m+1)^n` items.
pub fn enumerate_periodic(n: usize, m: u32) -> Vec<ExternalAddress> {
    assert!(n >= 1);
    let m = i64::from(m);
    let width = (2 * m + 1) as usize;
    let total = width.checked_pow(n as u32).expect("enumeration too large");
    let mut out = Vec::with_capacity(total);
    let mut block = vec![-m; n];
    for _ in 0..total {
        out.push(ExternalAddress::canonical(Vec::new(), block.clone()));
        // odometer increment, last position fastest
        for pos in (0..n).rev() {
            if block[pos] < m {
                block[pos] += 1;
                break;
            }
            block[pos] = -m;
        }
    }
    out
}

fn primitive_root(block: Vec<i64>) -> Vec<i64> {
    let len = block.len();
    for d in 1..len {
        if len.is_multiple_of(d) && (d..len).all(|i| block[i] == block[i - d]) {
            return block[..d].to_vec();
        }
    }
    block
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

fn join(entries: &[i64]) -> String {
    entries
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl fmt::Display for ExternalAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", join(&self.preperiod), join(&self.block))
    }
}

impl fmt::Debug for ExternalAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExternalAddress({self})")
    }
}

impl FromStr for ExternalAddress {
    type Err = AddressError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let syntax = || AddressError::Syntax(text.to_string());
        let (pre, block) = text.split_once('|').ok_or_else(syntax)?;
        let parse_list = |part: &str| -> Result<Vec<i64>, AddressError> {
            if part.is_empty() {
                return Ok(Vec::new());
            }
            part.split(',')
                .map(|tok| tok.parse::<i64>().map_err(|_| syntax()))
                .collect()
        };
        let pre = parse_list(pre)?;
        let block = parse_list(block)?;
        Self::new(pre, block)
    }
}

impl Serialize for ExternalAddress {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExternalAddress {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn addr(text: &str) -> ExternalAddress {
        text.parse().unwrap()
    }

    #[test]
    fn entries() {
        assert_eq!(addr("|0").entry(5), 0);
        assert_eq!(addr("|1,0").entry(3), 1);
        assert_eq!(addr("2|0,1").entry(1), 2);
        assert_eq!(addr("2|0,1").entry(2), 0);
        assert_eq!(addr("2|0,1").entry(3), 1);
    }

    #[test]
    fn shift_examples() {
        assert_eq!(addr("|1,0").shift(), addr("|0,1"));
        assert_eq!(addr("2|0").shift(), addr("|0"));
        let s = addr("|3,-1,2");
        assert_eq!(s.shift().shift().shift(), s);
        assert_eq!(s.shift_by(3), s);
        assert_eq!(s.shift_by(4), s.shift());
    }

    #[test]
    fn lex_examples() {
        assert_eq!(addr("|0,1").lex_cmp(&addr("|1,0")), Ordering::Less);
        assert_eq!(addr("|0,1").lex_cmp(&addr("|0,1")), Ordering::Equal);
        assert_eq!(addr("|0").lex_cmp(&addr("0|0,1")), Ordering::Less);
    }

    #[test]
    fn periods() {
        assert_eq!(addr("|0,1,1").exact_period(), Some(3));
        assert_eq!(addr("|0").exact_period(), Some(1));
        assert_eq!(addr("1|0").exact_period(), None);
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(addr("|0,1,0,1"), addr("|0,1"));
        assert_eq!(addr("1|0,1"), addr("|1,0"));
        assert_eq!(addr("0,1,0|1,0"), addr("|0,1"));
        assert_eq!(addr("3|0,0"), addr("3|0"));
        assert_eq!(addr("1,0,1|0,1").to_string(), "|1,0");
        assert_eq!(addr("2|0,1").to_string(), "2|0,1");
    }

    #[test]
    fn parse_errors() {
        assert_eq!("1|".parse::<ExternalAddress>(), Err(AddressError::EmptyBlock));
        assert!(matches!("0,1".parse::<ExternalAddress>(), Err(AddressError::Syntax(_))));
        assert!(matches!("|a".parse::<ExternalAddress>(), Err(AddressError::Syntax(_))));
        assert!(matches!(
            "|99999999999999999999".parse::<ExternalAddress>(),
            Err(AddressError::Syntax(_))
        ));
        assert!(matches!(
            format!("|{}", MAX_ENTRY + 1).parse::<ExternalAddress>(),
            Err(AddressError::EntryOutOfRange(_))
        ));
    }

    #[test]
    fn enumeration_counts() {
        let one = enumerate_periodic(1, 1);
        assert_eq!(one, vec![addr("|-1"), addr("|0"), addr("|1")]);

        let two = enumerate_periodic(2, 1);
        assert_eq!(two.len(), 9);
        assert_eq!(two.iter().filter(|a| a.exact_period() == Some(2)).count(), 6);
        let mut dedup = two.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 9);

        assert_eq!(enumerate_periodic(2, 0), vec![addr("|0")]);
        assert_eq!(enumerate_periodic(3, 2).len(), 125);
    }

    #[test]
    fn open_interval() {
        let (lo, hi) = (addr("|0"), addr("|1"));
        assert!(addr("|0,1").in_open_interval(&lo, &hi));
        assert!(!lo.in_open_interval(&lo, &hi));
        assert!(!addr("|2").in_open_interval(&lo, &hi));
    }

    #[test]
    fn serde_as_text() {
        let s = addr("2|0,-1");
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "\"2|0,-1\"");
        assert_eq!(serde_json::from_str::<ExternalAddress>(&json).unwrap(), s);
    }

    fn any_address() -> impl Strategy<Value = ExternalAddress> {
        (
            prop::collection::vec(-3i64..=3, 0..4),
            prop::collection::vec(-3i64..=3, 1..5),
        )
            .prop_map(|(pre, block)| ExternalAddress::new(pre, block).unwrap())
    }

    proptest! {
        #[test]
        fn shift_matches_entries(s in any_address()) {
            let shifted = s.shift();
            for n in 1..=50 {
                prop_assert_eq!(shifted.entry(n), s.entry(n + 1));
            }
        }

        #[test]
        fn periodic_shift_cycles(block in prop::collection::vec(-3i64..=3, 1..6)) {
            let s = ExternalAddress::periodic(&block).unwrap();
            let p = s.exact_period().unwrap();
            let mut r = s.clone();
            for _ in 0..p {
                r = r.shift();
            }
            prop_assert_eq!(r, s);
        }

        #[test]
        fn canonicalization_idempotent(s in any_address()) {
            let again = ExternalAddress::new(s.preperiod().to_vec(), s.period_block().to_vec()).unwrap();
            prop_assert_eq!(&again, &s);
            let reparsed: ExternalAddress = s.to_string().parse().unwrap();
            prop_assert_eq!(reparsed, s);
        }

        #[test]
        fn equal_sequences_equal_values(a in any_address(), b in any_address()) {
            let same_prefix = (1..=60).all(|n| a.entry(n) == b.entry(n));
            prop_assert_eq!(same_prefix, a == b);
        }

        #[test]
        fn lex_is_total_order(a in any_address(), b in any_address(), c in any_address()) {
            prop_assert_eq!(a.lex_cmp(&b), b.lex_cmp(&a).reverse());
            if a.lex_cmp(&b) != Ordering::Greater && b.lex_cmp(&c) != Ordering::Greater {
                prop_assert_ne!(a.lex_cmp(&c), Ordering::Greater);
            }
            prop_assert_eq!(a.lex_cmp(&b) == Ordering::Equal, a == b);
        }
    }
}
