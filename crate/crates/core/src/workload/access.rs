use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::baselines::MemoryRange;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AccessPattern {
    SeqRead,
    SeqWrite,
    RandRead,
    RandWrite,
}

impl AccessPattern {
    pub const ALL: [AccessPattern; 4] = [
        AccessPattern::SeqRead,
        AccessPattern::SeqWrite,
        AccessPattern::RandRead,
        AccessPattern::RandWrite,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AccessPattern::SeqRead => "seq-read",
            AccessPattern::SeqWrite => "seq-write",
            AccessPattern::RandRead => "rand-read",
            AccessPattern::RandWrite => "rand-write",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccessResult {
    pub elapsed: Duration,
    pub accesses: u64,
    pub checksum: u64,
}

/// The byte offsets a random pattern visits.
pub fn random_offsets(seed: u64, len: usize, count: u64) -> impl Iterator<Item = usize> {
    let mut rng = SmallRng::seed_from_u64(seed);
    (0..count).map(move |_| rng.gen_range(0..len))
}

/// Runs `pattern` over `range`. Sequential patterns touch every byte front to
/// back and ignore `count`; random ones touch `count` bytes.
///
/// # Safety
/// `range` must be mapped read-write, and no other thread may access it.
pub unsafe fn run_access_pattern<R: MemoryRange + ?Sized>(
    range: &R,
    pattern: AccessPattern,
    count: u64,
    seed: u64,
) -> AccessResult {
    let len = range.len();
    let base = range.base() as *mut u8;
    if len == 0 {
        return AccessResult {
            elapsed: Duration::ZERO,
            accesses: 0,
            checksum: 0,
        };
    }
    let bytes = std::slice::from_raw_parts_mut(base, len);
    let start = Instant::now();
    let (accesses, checksum) = match pattern {
        AccessPattern::SeqRead => {
            let sum = bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(b as u64));
            (len as u64, sum)
        }
        AccessPattern::SeqWrite => {
            let salt = seed as u8;
            for (i, b) in bytes.iter_mut().enumerate() {
                *b = (i as u8) ^ salt;
            }
            (len as u64, bytes[len - 1] as u64)
        }
        AccessPattern::RandRead => {
            let mut sum = 0u64;
            for off in random_offsets(seed, len, count) {
                sum = sum.wrapping_add(base.add(off).read_volatile() as u64);
            }
            (count, sum)
        }
        AccessPattern::RandWrite => {
            let mut last = 0u8;
            for off in random_offsets(seed, len, count) {
                last = (off as u8).wrapping_add(last);
                base.add(off).write_volatile(last);
            }
            (count, last as u64)
        }
    };
    let elapsed = start.elapsed();
    AccessResult {
        elapsed,
        accesses,
        checksum: black_box(checksum),
    }
}
