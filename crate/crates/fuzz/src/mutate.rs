//! Input mutation: deterministic walking stages, stacked havoc and splicing.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const ARITH_MAX: u32 = 35;
pub const DEFAULT_MAX_INPUT_LEN: usize = 1 << 20;

pub const INTERESTING_8: [i8; 9] = [-128, -1, 0, 1, 16, 32, 64, 100, 127];
pub const INTERESTING_16: [i16; 10] = [-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767];
pub const INTERESTING_32: [i32; 8] = [i32::MIN, -100663046, -32769, 32768, 65535, 65536, 100663045, i32::MAX];

fn interesting(width: usize) -> Vec<i64> {
    let mut v: Vec<i64> = INTERESTING_8.iter().map(|x| *x as i64).collect();
    if width >= 2 {
        v.extend(INTERESTING_16.iter().map(|x| *x as i64));
    }
    if width >= 4 {
        v.extend(INTERESTING_32.iter().map(|x| *x as i64));
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Flip 1, 2 or 4 adjacent bits at every bit position.
    BitFlip(u8),
    /// Invert 1, 2 or 4 adjacent bytes.
    ByteFlip(u8),
    /// Add and subtract 1..=35 to 1-, 2- or 4-byte words, both endians.
    Arith(u8),
    /// Overwrite 1-, 2- or 4-byte words with boundary values, both endians.
    Interesting(u8),
    Havoc,
    Splice,
}

impl Stage {
    pub const DETERMINISTIC: [Stage; 12] = [
        Stage::BitFlip(1),
        Stage::BitFlip(2),
        Stage::BitFlip(4),
        Stage::ByteFlip(1),
        Stage::ByteFlip(2),
        Stage::ByteFlip(4),
        Stage::Arith(1),
        Stage::Arith(2),
        Stage::Arith(4),
        Stage::Interesting(1),
        Stage::Interesting(2),
        Stage::Interesting(4),
    ];

    pub fn is_deterministic(self) -> bool {
        !matches!(self, Stage::Havoc | Stage::Splice)
    }

    fn endians(width: usize) -> usize {
        if width > 1 {
            2
        } else {
            1
        }
    }

    /// Variants per position and number of positions for an input length.
    fn shape(self, len: usize) -> (usize, usize) {
        let positions = |unit: usize, total: usize| (total + 1).saturating_sub(unit);
        match self {
            Stage::BitFlip(n) => (1, positions(n as usize, len * 8)),
            Stage::ByteFlip(n) => (1, positions(n as usize, len)),
            Stage::Arith(w) => {
                let w = w as usize;
                (2 * ARITH_MAX as usize * Self::endians(w), positions(w, len))
            }
            Stage::Interesting(w) => {
                let w = w as usize;
                (interesting(w).len() * Self::endians(w), positions(w, len))
            }
            Stage::Havoc | Stage::Splice => (0, 0),
        }
    }

    /// Number of variants a deterministic stage yields for `len` bytes.
    pub fn variant_count(self, len: usize) -> usize {
        let (per, pos) = self.shape(len);
        per * pos
    }

    /// Every variant of `input` under a deterministic stage, in order.
    pub fn variants(self, input: &[u8]) -> Variants<'_> {
        Variants {
            stage: self,
            input,
            next: 0,
            count: self.variant_count(input.len()),
            values: match self {
                Stage::Interesting(w) => interesting(w as usize),
                _ => Vec::new(),
            },
        }
    }
}

pub struct Variants<'a> {
    stage: Stage,
    input: &'a [u8],
    next: usize,
    count: usize,
    values: Vec<i64>,
}

fn write_word(buf: &mut [u8], width: usize, value: u64, big_endian: bool) {
    let le = value.to_le_bytes();
    for i in 0..width {
        buf[i] = if big_endian { le[width - 1 - i] } else { le[i] };
    }
}

fn read_word(buf: &[u8], width: usize, big_endian: bool) -> u64 {
    let mut v = 0u64;
    for i in 0..width {
        let byte = if big_endian { buf[i] } else { buf[width - 1 - i] };
        v = (v << 8) | byte as u64;
    }
    v
}

impl Variants<'_> {
    fn nth_variant(&self, i: usize) -> Vec<u8> {
        let mut out = self.input.to_vec();
        let (per, _) = self.stage.shape(self.input.len());
        let (pos, k) = (i / per, i % per);
        match self.stage {
            Stage::BitFlip(n) => {
                for bit in pos..pos + n as usize {
                    out[bit / 8] ^= 0x80 >> (bit % 8);
                }
            }
            Stage::ByteFlip(n) => {
                for b in &mut out[pos..pos + n as usize] {
                    *b ^= 0xFF;
                }
            }
            Stage::Arith(w) => {
                let w = w as usize;
                let endians = Stage::endians(w);
                let (delta, rest) = (k / (2 * endians), k % (2 * endians));
                let (sub, big) = (rest / endians == 1, rest % endians == 1);
                let delta = delta as u64 + 1;
                let word = read_word(&out[pos..], w, big);
                let v = if sub { word.wrapping_sub(delta) } else { word.wrapping_add(delta) };
                write_word(&mut out[pos..], w, v, big);
            }
            Stage::Interesting(w) => {
                let w = w as usize;
                let endians = Stage::endians(w);
                let v = self.values[k / endians] as u64;
                write_word(&mut out[pos..], w, v, k % endians == 1);
            }
            Stage::Havoc | Stage::Splice => unreachable!(),
        }
        out
    }
}

impl Iterator for Variants<'_> {
    type Item = Vec<u8>;

    fn next(&mut self) -> Option<Vec<u8>> {
        if self.next >= self.count {
            return None;
        }
        self.next += 1;
        Some(self.nth_variant(self.next - 1))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.count - self.next;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Variants<'_> {}

fn block_len(rng: &mut impl Rng, limit: usize) -> usize {
    let cap = match rng.gen_range(0..10) {
        0..=5 => 32,
        6..=8 => 128,
        _ => 1500,
    };
    rng.gen_range(1..=limit.min(cap).max(1))
}

/// One havoc round: 2 to 128 random edits stacked on a copy of `input`.
pub fn havoc(input: &[u8], rng: &mut impl Rng, max_len: usize) -> Vec<u8> {
    let mut out = input.to_vec();
    let rounds = 1usize << rng.gen_range(1..=7);
    for _ in 0..rounds {
        havoc_op(&mut out, rng, max_len);
    }
    out.truncate(max_len);
    out
}

fn havoc_op(out: &mut Vec<u8>, rng: &mut impl Rng, max_len: usize) {
    let len = out.len();
    let op = if len == 0 { 11 } else { rng.gen_range(0..15) };
    let word = |rng: &mut dyn rand::RngCore, w: usize| -> Option<(usize, bool)> {
        (len >= w).then(|| (rng.gen_range(0..=len - w), rng.gen::<bool>()))
    };
    match op {
        0 => {
            let bit = rng.gen_range(0..len * 8);
            out[bit / 8] ^= 0x80 >> (bit % 8);
        }
        1..=3 => {
            let w = [1, 2, 4][op - 1];
            if let Some((pos, big)) = word(rng, w) {
                let values = interesting(w);
                let v = values[rng.gen_range(0..values.len())] as u64;
                write_word(&mut out[pos..], w, v, big);
            }
        }
        4..=6 => {
            let w = [1, 2, 4][op - 4];
            if let Some((pos, big)) = word(rng, w) {
                let delta = rng.gen_range(1..=ARITH_MAX) as u64;
                let v = read_word(&out[pos..], w, big);
                let v = if rng.gen() { v.wrapping_add(delta) } else { v.wrapping_sub(delta) };
                write_word(&mut out[pos..], w, v, big);
            }
        }
        7 | 8 => {
            let pos = rng.gen_range(0..len);
            out[pos] ^= rng.gen_range(1..=255u8);
        }
        9 | 10 => {
            if len > 1 {
                let n = block_len(rng, len - 1);
                let from = rng.gen_range(0..=len - n);
                out.drain(from..from + n);
            }
        }
        11 | 12 => {
            if len < max_len {
                let clone = len > 0 && rng.gen_range(0..4) != 0;
                let n = block_len(rng, if clone { len } else { 128 }).min(max_len - len);
                let block: Vec<u8> = if clone {
                    let from = rng.gen_range(0..=len - n.min(len));
                    out[from..from + n.min(len)].to_vec()
                } else {
                    let b = if rng.gen() { rng.gen() } else { out.get(rng.gen_range(0..len.max(1))).copied().unwrap_or(0) };
                    vec![b; n]
                };
                let at = rng.gen_range(0..=len);
                out.splice(at..at, block);
            }
        }
        _ => {
            if len > 1 {
                let n = block_len(rng, len - 1);
                let to = rng.gen_range(0..=len - n);
                if rng.gen_range(0..4) != 0 {
                    let from = rng.gen_range(0..=len - n);
                    out.copy_within(from..from + n, to);
                } else {
                    let b = rng.gen();
                    out[to..to + n].fill(b);
                }
            }
        }
    }
}

/// Crossover: a prefix of `a` followed by the suffix of `b`, split strictly
/// inside the range where the two differ. `None` if they differ in fewer than
/// two bytes.
pub fn splice(a: &[u8], b: &[u8], rng: &mut impl Rng) -> Option<Vec<u8>> {
    let n = a.len().min(b.len());
    let first = (0..n).find(|&i| a[i] != b[i])?;
    let last = (0..n).rev().find(|&i| a[i] != b[i])?;
    if last <= first {
        return None;
    }
    let split = rng.gen_range(first + 1..=last);
    let mut out = a[..split].to_vec();
    out.extend_from_slice(&b[split..]);
    Some(out)
}

/// One mutation of `input` under `stage`. Deterministic stages yield a
/// random one of their variants; splice falls back to havoc without a
/// usable partner.
pub fn mutate(input: &[u8], rng: &mut impl Rng, stage: Stage, other: Option<&[u8]>, max_len: usize) -> Vec<u8> {
    match stage {
        Stage::Havoc => havoc(input, rng, max_len),
        Stage::Splice => match other.and_then(|o| splice(input, o, rng)) {
            Some(s) => havoc(&s, rng, max_len),
            None => havoc(input, rng, max_len),
        },
        det => {
            let count = det.variant_count(input.len());
            if count == 0 {
                return input.to_vec();
            }
            let i = rng.gen_range(0..count);
            let mut v = det.variants(input);
            v.next = i;
            v.next().unwrap()
        }
    }
}
