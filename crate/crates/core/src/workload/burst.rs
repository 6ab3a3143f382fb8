//! Open-loop paced random 8-byte writes.

use std::ops::Range;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use super::journal::{JournalEntry, WriteJournal};
use super::WorkloadError;
use crate::baselines::MemoryRange;

const WORD: usize = 8;
const MAX_BATCH: u64 = 4096;

#[derive(Clone, Debug, PartialEq)]
pub enum Distribution {
    Uniform,
    /// `hot_fraction` of the writes go uniformly into `hot`, the rest
    /// uniformly into the remainder of the target range.
    Skewed {
        hot_fraction: f64,
        hot: Range<usize>,
    },
}

#[derive(Clone, Debug)]
pub struct BurstSpec {
    /// Requested writes per second over all threads; infinite means unpaced.
    pub rate: f64,
    /// `None` runs until stopped or until `max_writes` is reached.
    pub duration: Option<Duration>,
    pub max_writes: Option<u64>,
    pub distribution: Distribution,
    /// Byte range that receives writes; the whole region when `None`.
    pub target: Option<Range<usize>>,
    pub journaled: bool,
    pub threads: usize,
    pub seed: u64,
}

impl BurstSpec {
    pub fn uniform(rate: f64) -> Self {
        BurstSpec {
            rate,
            duration: None,
            max_writes: None,
            distribution: Distribution::Uniform,
            target: None,
            journaled: false,
            threads: 1,
            seed: 0,
        }
    }

    pub fn skewed(rate: f64, hot_fraction: f64, hot: Range<usize>) -> Self {
        BurstSpec {
            distribution: Distribution::Skewed { hot_fraction, hot },
            ..Self::uniform(rate)
        }
    }

    pub fn duration(mut self, d: Duration) -> Self {
        self.duration = Some(d);
        self
    }

    pub fn max_writes(mut self, n: u64) -> Self {
        self.max_writes = Some(n);
        self
    }

    pub fn journaled(mut self, on: bool) -> Self {
        self.journaled = on;
        self
    }

    pub fn threads(mut self, n: usize) -> Self {
        self.threads = n;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn target(mut self, range: Range<usize>) -> Self {
        self.target = Some(range);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThroughputSample {
    pub requested: f64,
    pub achieved: f64,
    pub achieved_pct: f64,
}

impl ThroughputSample {
    pub fn new(requested: f64, writes: u64, window: Duration) -> Self {
        let secs = window.as_secs_f64();
        let achieved = if secs > 0.0 { writes as f64 / secs } else { 0.0 };
        let achieved_pct = if requested.is_finite() {
            100.0 * achieved / requested
        } else {
            100.0
        };
        ThroughputSample {
            requested,
            achieved,
            achieved_pct,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BurstOutcome {
    pub sample: ThroughputSample,
    pub writes: u64,
    pub window: Duration,
    pub journal: Option<WriteJournal>,
}

/// Word picker over the target range.
struct Picker {
    lo: usize,
    words: usize,
    hot: Option<(f64, usize, usize)>,
}

impl Picker {
    fn new(target: &Range<usize>, dist: &Distribution) -> Result<Self, WorkloadError> {
        let lo = target.start.div_ceil(WORD);
        let words = (target.end / WORD).saturating_sub(lo);
        if words == 0 {
            return Err(WorkloadError::RegionTooSmall {
                needed: WORD,
                available: target.len(),
            });
        }
        let hot = match dist {
            Distribution::Uniform => None,
            Distribution::Skewed { hot_fraction, hot } => {
                if !(*hot_fraction > 0.0 && *hot_fraction < 1.0) {
                    return Err(WorkloadError::InvalidSkew(format!(
                        "hot fraction {hot_fraction} outside (0, 1)"
                    )));
                }
                let (hlo, hhi) = (hot.start.div_ceil(WORD), hot.end / WORD);
                if hlo < lo || hhi > lo + words || hhi <= hlo || hhi - hlo >= words {
                    return Err(WorkloadError::InvalidSkew(format!(
                        "hot range {hot:?} must be a non-empty proper part of {target:?}"
                    )));
                }
                Some((*hot_fraction, hlo - lo, hhi - hlo))
            }
        };
        Ok(Picker { lo, words, hot })
    }

    fn pick(&self, rng: &mut SmallRng) -> usize {
        let word = match self.hot {
            None => rng.gen_range(0..self.words),
            Some((p, start, len)) => {
                if rng.gen_bool(p) {
                    start + rng.gen_range(0..len)
                } else {
                    let w = rng.gen_range(0..self.words - len);
                    if w < start {
                        w
                    } else {
                        w + len
                    }
                }
            }
        };
        (self.lo + word) * WORD
    }
}

/// Fires `spec` at `region` until its duration or write limit is reached or
/// `stop` is raised. Blocks the caller; writer threads are scoped. The range
/// must stay mapped read-write (or write-protected by a migration job) for
/// the whole call.
pub fn run_burst<R: MemoryRange + Sync + ?Sized>(
    region: &R,
    spec: &BurstSpec,
    stop: &AtomicBool,
) -> Result<BurstOutcome, WorkloadError> {
    if spec.rate.is_nan() || spec.rate <= 0.0 {
        return Err(WorkloadError::InvalidRate(spec.rate));
    }
    if spec.threads == 0 {
        return Err(WorkloadError::NoThreads);
    }
    let target = spec.target.clone().unwrap_or(0..region.len());
    if target.end > region.len() {
        return Err(WorkloadError::RegionTooSmall {
            needed: target.end,
            available: region.len(),
        });
    }
    if spec.max_writes == Some(0) {
        return Ok(BurstOutcome {
            sample: ThroughputSample::new(spec.rate, 0, Duration::ZERO),
            writes: 0,
            window: Duration::ZERO,
            journal: spec.journaled.then(WriteJournal::default),
        });
    }
    let picker = Picker::new(&target, &spec.distribution)?;
    let seq = AtomicU64::new(0);
    let per_thread_rate = spec.rate / spec.threads as f64;
    let start = Instant::now();

    let parts: Vec<(u64, Vec<JournalEntry>)> = thread::scope(|s| {
        let handles: Vec<_> = (0..spec.threads)
            .map(|t| {
                let quota = spec.max_writes.map(|m| {
                    let n = spec.threads as u64;
                    m / n + u64::from((t as u64) < m % n)
                });
                let (picker, seq) = (&picker, &seq);
                s.spawn(move || writer(region, spec, picker, seq, stop, t as u32, per_thread_rate, quota, start))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("writer thread panicked"))
            .collect()
    });
    let window = start.elapsed();
    let writes: u64 = parts.iter().map(|p| p.0).sum();
    let journal = spec
        .journaled
        .then(|| WriteJournal::merge(parts.into_iter().map(|p| p.1).collect()));
    if let Some(j) = &journal {
        debug_assert_eq!(j.len() as u64, writes);
    }
    Ok(BurstOutcome {
        sample: ThroughputSample::new(spec.rate, writes, window),
        writes,
        window,
        journal,
    })
}

#[allow(clippy::too_many_arguments)]
fn writer<R: MemoryRange + ?Sized>(
    region: &R,
    spec: &BurstSpec,
    picker: &Picker,
    seq: &AtomicU64,
    stop: &AtomicBool,
    thread: u32,
    rate: f64,
    quota: Option<u64>,
    start: Instant,
) -> (u64, Vec<JournalEntry>) {
    let mut rng = SmallRng::seed_from_u64(spec.seed ^ (u64::from(thread) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut log = Vec::new();
    let interval = if rate.is_finite() { 1e9 / rate } else { 0.0 };
    let limit = quota.unwrap_or(u64::MAX);
    let end = spec.duration.map(|d| d.as_nanos() as f64);
    let word = |offset: usize| unsafe { &*((region.base() + offset) as *const AtomicU64) };
    let mut done = 0u64;
    while done < limit && !stop.load(Ordering::Relaxed) {
        let now = start.elapsed().as_nanos() as f64;
        if end.is_some_and(|e| now >= e) {
            break;
        }
        let due = if interval == 0.0 {
            done + MAX_BATCH
        } else {
            let horizon = end.map_or(now, |e| now.min(e));
            (horizon / interval) as u64 + 1
        };
        if done >= due {
            let wait = (done as f64 * interval - now).max(0.0);
            if wait > 200_000.0 {
                thread::sleep(Duration::from_nanos((wait - 100_000.0) as u64));
            } else {
                thread::yield_now();
            }
            continue;
        }
        let batch = (due - done).min(MAX_BATCH).min(limit - done);
        for _ in 0..batch {
            let offset = picker.pick(&mut rng);
            if spec.journaled {
                let s = seq.fetch_add(1, Ordering::Relaxed);
                let new = (1 << 63) | s;
                let old = word(offset).swap(new, Ordering::Relaxed);
                log.push(JournalEntry {
                    seq: s,
                    offset: offset as u64,
                    old,
                    new,
                    thread,
                });
            } else {
                word(offset).store(done, Ordering::Relaxed);
            }
        }
        done += batch;
    }
    (done, log)
}
