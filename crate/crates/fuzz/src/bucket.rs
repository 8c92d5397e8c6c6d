//! Hit-count buckets and novelty detection.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wafl_exec::{TraceMap, MAP_SIZE};

/// One-hot bucket bit for a raw hit count.
pub const fn bucket(count: u8) -> u8 {
    match count {
        0 => 0,
        1 => 1,
        2 => 2,
        3 => 4,
        4..=7 => 8,
        8..=15 => 16,
        16..=31 => 32,
        32..=127 => 64,
        128..=255 => 128,
    }
}

const BUCKETS: [u8; 256] = {
    let mut t = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        t[i] = bucket(i as u8);
        i += 1;
    }
    t
};

/// A trace map with every counter replaced by its bucket bit.
#[derive(Clone, PartialEq, Eq)]
pub struct BucketMap(Box<[u8]>);

pub fn classify_counts(t: &TraceMap) -> BucketMap {
    BucketMap(t.iter().map(|c| BUCKETS[*c as usize]).collect())
}

impl BucketMap {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Sparse (index, bucket) form, for storage.
    pub fn signature(&self) -> Signature {
        Signature(
            self.0
                .iter()
                .enumerate()
                .filter(|(_, b)| **b != 0)
                .map(|(i, b)| (i as u32, *b))
                .collect(),
        )
    }

    pub fn edges(&self) -> usize {
        self.0.iter().filter(|b| **b != 0).count()
    }
}

impl std::fmt::Debug for BucketMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BucketMap({} edges)", self.edges())
    }
}

/// Sparse bucketed coverage of one execution.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Signature(pub Vec<(u32, u8)>);

impl Signature {
    pub fn to_map(&self) -> BucketMap {
        let mut m = vec![0u8; MAP_SIZE];
        for (i, b) in &self.0 {
            m[*i as usize] = *b;
        }
        BucketMap(m.into_boxed_slice())
    }

    pub fn edges(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().map(|(i, _)| *i)
    }

    /// Hex SHA-256 over the dense bucket map.
    pub fn digest(&self) -> String {
        digest(&self.to_map())
    }
}

pub fn digest(m: &BucketMap) -> String {
    Sha256::digest(m.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Novelty {
    None,
    NewBucket,
    NewEdge,
}

/// Union of all bucket bits seen so far.
#[derive(Clone)]
pub struct Virgin {
    seen: Box<[u8]>,
}

impl Default for Virgin {
    fn default() -> Self {
        Virgin {
            seen: vec![0; MAP_SIZE].into_boxed_slice(),
        }
    }
}

impl Virgin {
    pub fn bits(&self) -> usize {
        self.seen.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn edges(&self) -> usize {
        self.seen.iter().filter(|b| **b != 0).count()
    }
}

/// Classifies `b` against the accumulator and merges it in.
pub fn has_new_bits(virgin: &mut Virgin, b: &BucketMap) -> Novelty {
    let mut result = Novelty::None;
    for (seen_chunk, new_chunk) in virgin.seen.chunks_exact_mut(8).zip(b.0.chunks_exact(8)) {
        let s = u64::from_le_bytes(seen_chunk.try_into().unwrap());
        let n = u64::from_le_bytes(new_chunk.try_into().unwrap());
        if n & !s == 0 {
            continue;
        }
        for (sb, nb) in seen_chunk.iter_mut().zip(new_chunk) {
            if nb & !*sb != 0 {
                result = result.max(if *sb == 0 { Novelty::NewEdge } else { Novelty::NewBucket });
                *sb |= nb;
            }
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(entries: &[(usize, u8)]) -> TraceMap {
        let mut m = vec![0u8; MAP_SIZE];
        for (i, c) in entries {
            m[*i] = *c;
        }
        TraceMap::from_slice(&m)
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(bucket(0), 0);
        assert_eq!(bucket(5), 8);
        let b = classify_counts(&map(&[(10, 1), (20, 200)]));
        assert_eq!((b.as_bytes()[10], b.as_bytes()[20]), (1, 128));
    }

    #[test]
    fn novelty_examples() {
        let mut v = Virgin::default();
        let a = classify_counts(&map(&[(3, 1)]));
        assert_eq!(has_new_bits(&mut v, &a), Novelty::NewEdge);
        assert_eq!(has_new_bits(&mut v, &a), Novelty::None);
        let b = classify_counts(&map(&[(3, 9)]));
        assert_eq!(has_new_bits(&mut v, &b), Novelty::NewBucket);
        assert_eq!(has_new_bits(&mut v, &classify_counts(&map(&[]))), Novelty::None);
        // A new edge dominates a new bucket elsewhere in the same map.
        let c = classify_counts(&map(&[(3, 40), (9000, 1)]));
        assert_eq!(has_new_bits(&mut v, &c), Novelty::NewEdge);
        assert_eq!(v.edges(), 2);
        assert_eq!(v.bits(), 4);
    }

    #[test]
    fn signature_round_trips() {
        let b = classify_counts(&map(&[(0, 3), (65535, 17)]));
        let s = b.signature();
        assert_eq!(s.0, vec![(0, 4), (65535, 32)]);
        assert_eq!(s.to_map(), b);
        assert_eq!(s.digest(), digest(&b));
    }
}
