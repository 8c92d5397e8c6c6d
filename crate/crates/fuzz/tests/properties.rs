use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wafl_exec::{TraceMap, MAP_SIZE};
use wafl_fuzz::{bucket, classify_counts, has_new_bits, havoc, mutate, Novelty, Stage, Virgin};

/// Bucket by range, written independently of the lookup table.
fn bucket_oracle(c: u8) -> u8 {
    let ranges: [(u32, u32); 8] = [(1, 1), (2, 2), (3, 3), (4, 7), (8, 15), (16, 31), (32, 127), (128, 255)];
    ranges
        .iter()
        .position(|(lo, hi)| (*lo..=*hi).contains(&(c as u32)))
        .map_or(0, |i| 1 << i)
}

#[test]
fn bucket_table_matches_ranges() {
    for c in 0..=255u8 {
        assert_eq!(bucket(c), bucket_oracle(c), "count {c}");
        assert!(bucket(c) == 0 || bucket(c).is_power_of_two());
    }
}

fn sparse_map() -> impl Strategy<Value = BTreeMap<usize, u8>> {
    prop::collection::btree_map(0..MAP_SIZE, 1..=255u8, 0..40)
}

fn dense(m: &BTreeMap<usize, u8>) -> TraceMap {
    let mut v = vec![0u8; MAP_SIZE];
    for (i, c) in m {
        v[*i] = *c;
    }
    TraceMap::from_slice(&v)
}

proptest! {
    #[test]
    fn novelty_matches_set_oracle(maps in prop::collection::vec(sparse_map(), 1..8)) {
        let mut virgin = Virgin::default();
        let mut seen: BTreeSet<(usize, u8)> = BTreeSet::new();
        let mut bits = 0;
        for m in &maps {
            let expected = if m.keys().any(|i| !seen.iter().any(|(j, _)| j == i)) {
                Novelty::NewEdge
            } else if m.iter().any(|(i, c)| !seen.contains(&(*i, bucket_oracle(*c)))) {
                Novelty::NewBucket
            } else {
                Novelty::None
            };
            let got = has_new_bits(&mut virgin, &classify_counts(&dense(m)));
            prop_assert_eq!(got, expected);
            seen.extend(m.iter().map(|(i, c)| (*i, bucket_oracle(*c))));
            prop_assert_eq!(virgin.bits(), seen.len());
            prop_assert!(virgin.bits() >= bits);
            bits = virgin.bits();
            prop_assert_eq!(has_new_bits(&mut virgin, &classify_counts(&dense(m))), Novelty::None);
        }
    }

    #[test]
    fn mutations_are_deterministic_and_bounded(
        input in prop::collection::vec(any::<u8>(), 0..200),
        other in prop::collection::vec(any::<u8>(), 0..200),
        seed in any::<u64>(),
        stage in prop::sample::select(vec![
            Stage::BitFlip(1), Stage::BitFlip(4), Stage::ByteFlip(2), Stage::Arith(1), Stage::Arith(4),
            Stage::Interesting(2), Stage::Havoc, Stage::Splice,
        ]),
        max_len in 1usize..300,
    ) {
        let a = mutate(&input, &mut ChaCha8Rng::seed_from_u64(seed), stage, Some(&other), max_len);
        let b = mutate(&input, &mut ChaCha8Rng::seed_from_u64(seed), stage, Some(&other), max_len);
        prop_assert_eq!(&a, &b);
        if stage.is_deterministic() {
            prop_assert_eq!(a.len(), input.len());
        } else {
            prop_assert!(a.len() <= max_len);
        }
    }

    #[test]
    fn single_bit_flips_differ_in_one_bit(input in prop::collection::vec(any::<u8>(), 1..16)) {
        let variants: Vec<Vec<u8>> = Stage::BitFlip(1).variants(&input).collect();
        prop_assert_eq!(variants.len(), input.len() * 8);
        let distinct: BTreeSet<&Vec<u8>> = variants.iter().collect();
        prop_assert_eq!(distinct.len(), variants.len());
        for v in &variants {
            let diff: u32 = v.iter().zip(&input).map(|(x, y)| (x ^ y).count_ones()).sum();
            prop_assert_eq!(diff, 1);
        }
    }

    #[test]
    fn havoc_changes_something_eventually(input in prop::collection::vec(any::<u8>(), 1..32), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let changed = (0..8).any(|_| havoc(&input, &mut rng, 1 << 20) != input);
        prop_assert!(changed);
    }
}
