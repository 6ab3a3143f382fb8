//! Record of every word written by a burst, and its replay.
//!
//! Writers swap values atomically and log what they replaced. Every written
//! value is unique, so the per-word history is a chain `old -> new -> ...`
//! starting at the snapshot value. A write dropped by the memory system shows
//! up as two entries replacing the same value, as a chain that cannot be
//! completed, or as a final value that differs from the replay.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use thiserror::Error;

use super::WorkloadError;

/// seq, offset, old, new as u64 and thread as u32, little-endian.
pub const RECORD_BYTES: usize = 36;
const MAGIC: &[u8; 8] = b"PLJRNL01";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JournalEntry {
    pub seq: u64,
    pub offset: u64,
    pub old: u64,
    pub new: u64,
    pub thread: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("entry {seq} writes offset {offset:#x} beyond the {len} byte snapshot")]
    OutOfBounds { seq: u64, offset: u64, len: usize },
    #[error("offset {offset:#x}: value {value:#x} was replaced twice")]
    Fork { offset: u64, value: u64 },
    #[error("offset {offset:#x}: {remaining} write(s) do not continue from value {value:#x}")]
    Broken { offset: u64, value: u64, remaining: usize },
    #[error("offset {offset:#x}: expected {expected:#x} after replay, found {found:#x}")]
    Mismatch { offset: u64, expected: u64, found: u64 },
    #[error("memory lengths differ: snapshot {snapshot}, final {final_len}")]
    LengthMismatch { snapshot: usize, final_len: usize },
}

/// Entries ordered by global sequence number.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WriteJournal {
    entries: Vec<JournalEntry>,
}

fn read_word(mem: &[u8], offset: usize) -> u64 {
    u64::from_ne_bytes(mem[offset..offset + 8].try_into().expect("8 bytes"))
}

impl WriteJournal {
    /// Merges per-thread logs by sequence number.
    pub fn merge(parts: Vec<Vec<JournalEntry>>) -> Self {
        let mut entries: Vec<_> = parts.into_iter().flatten().collect();
        entries.sort_unstable_by_key(|e| e.seq);
        WriteJournal { entries }
    }

    pub fn entries(&self) -> &[JournalEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct word offsets written.
    pub fn offsets(&self) -> Vec<u64> {
        let mut o: Vec<_> = self.entries.iter().map(|e| e.offset).collect();
        o.sort_unstable();
        o.dedup();
        o
    }

    /// Applies the journal to `snapshot` in place, following each word's
    /// replacement chain.
    pub fn replay(&self, snapshot: &mut [u8]) -> Result<(), ReplayError> {
        let mut by_offset: BTreeMap<u64, Vec<&JournalEntry>> = BTreeMap::new();
        for e in &self.entries {
            if e.offset as usize + 8 > snapshot.len() {
                return Err(ReplayError::OutOfBounds {
                    seq: e.seq,
                    offset: e.offset,
                    len: snapshot.len(),
                });
            }
            by_offset.entry(e.offset).or_default().push(e);
        }
        for (offset, writes) in by_offset {
            let mut next: HashMap<u64, u64> = HashMap::with_capacity(writes.len());
            for e in &writes {
                if next.insert(e.old, e.new).is_some() {
                    return Err(ReplayError::Fork { offset, value: e.old });
                }
            }
            let at = offset as usize;
            let mut value = read_word(snapshot, at);
            let mut applied = 0;
            while let Some(new) = next.remove(&value) {
                value = new;
                applied += 1;
            }
            if applied != writes.len() {
                return Err(ReplayError::Broken {
                    offset,
                    value,
                    remaining: writes.len() - applied,
                });
            }
            snapshot[at..at + 8].copy_from_slice(&value.to_ne_bytes());
        }
        Ok(())
    }

    /// Checks that `final_mem` equals the replay of the journal over
    /// `snapshot`.
    pub fn verify(&self, snapshot: &[u8], final_mem: &[u8]) -> Result<(), ReplayError> {
        if snapshot.len() != final_mem.len() {
            return Err(ReplayError::LengthMismatch {
                snapshot: snapshot.len(),
                final_len: final_mem.len(),
            });
        }
        let mut expected = snapshot.to_vec();
        self.replay(&mut expected)?;
        if expected == final_mem {
            return Ok(());
        }
        let word = expected
            .chunks(8)
            .zip(final_mem.chunks(8))
            .position(|(a, b)| a != b)
            .expect("buffers differ");
        let at = word * 8;
        let tail = |m: &[u8]| {
            let mut w = [0u8; 8];
            let n = (m.len() - at).min(8);
            w[..n].copy_from_slice(&m[at..at + n]);
            u64::from_ne_bytes(w)
        };
        Err(ReplayError::Mismatch {
            offset: at as u64,
            expected: tail(&expected),
            found: tail(final_mem),
        })
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<(), WorkloadError> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            let mut rec = [0u8; RECORD_BYTES];
            rec[0..8].copy_from_slice(&e.seq.to_le_bytes());
            rec[8..16].copy_from_slice(&e.offset.to_le_bytes());
            rec[16..24].copy_from_slice(&e.old.to_le_bytes());
            rec[24..32].copy_from_slice(&e.new.to_le_bytes());
            rec[32..36].copy_from_slice(&e.thread.to_le_bytes());
            out.write_all(&rec)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self, WorkloadError> {
        let mut head = [0u8; 16];
        input.read_exact(&mut head)?;
        if &head[..8] != MAGIC {
            return Err(WorkloadError::CorruptJournal("bad magic".into()));
        }
        let count = u64::from_le_bytes(head[8..].try_into().expect("8 bytes"));
        let mut entries = Vec::new();
        let mut rec = [0u8; RECORD_BYTES];
        for i in 0..count {
            input
                .read_exact(&mut rec)
                .map_err(|e| WorkloadError::CorruptJournal(format!("record {i}: {e}")))?;
            let u = |r: std::ops::Range<usize>| u64::from_le_bytes(rec[r].try_into().expect("8 bytes"));
            entries.push(JournalEntry {
                seq: u(0..8),
                offset: u(8..16),
                old: u(16..24),
                new: u(24..32),
                thread: u32::from_le_bytes(rec[32..36].try_into().expect("4 bytes")),
            });
        }
        if entries.windows(2).any(|w| w[0].seq >= w[1].seq) {
            return Err(WorkloadError::CorruptJournal("sequence numbers not increasing".into()));
        }
        Ok(WriteJournal { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(seq: u64, offset: u64, old: u64, new: u64) -> JournalEntry {
        JournalEntry {
            seq,
            offset,
            old,
            new,
            thread: 0,
        }
    }

    fn words(v: &[u64]) -> Vec<u8> {
        v.iter().flat_map(|w| w.to_ne_bytes()).collect()
    }

    #[test]
    fn chain_order_beats_sequence_order() {
        // Thread B swapped first but drew the larger sequence number.
        let j = WriteJournal::merge(vec![vec![e(1, 8, 100, 7)], vec![e(2, 8, 5, 100)]]);
        let mut mem = words(&[0, 5]);
        j.replay(&mut mem).unwrap();
        assert_eq!(mem, words(&[0, 7]));
    }

    #[test]
    fn lost_write_is_a_fork() {
        let j = WriteJournal::merge(vec![vec![e(1, 0, 5, 10), e(2, 0, 5, 11)]]);
        assert_eq!(
            j.replay(&mut words(&[5])),
            Err(ReplayError::Fork { offset: 0, value: 5 })
        );
    }

    #[test]
    fn dropped_final_write_is_a_mismatch() {
        let j = WriteJournal::merge(vec![vec![e(1, 0, 5, 10)]]);
        assert!(matches!(
            j.verify(&words(&[5]), &words(&[5])),
            Err(ReplayError::Mismatch {
                offset: 0,
                expected: 10,
                found: 5
            })
        ));
        assert!(j.verify(&words(&[5]), &words(&[10])).is_ok());
    }

    #[test]
    fn unreachable_write_is_broken() {
        let j = WriteJournal::merge(vec![vec![e(1, 0, 6, 10)]]);
        assert!(matches!(j.replay(&mut words(&[5])), Err(ReplayError::Broken { .. })));
        assert!(matches!(
            j.replay(&mut words(&[])),
            Err(ReplayError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn empty_journal_is_identity() {
        let j = WriteJournal::default();
        assert!(j.verify(&words(&[1, 2]), &words(&[1, 2])).is_ok());
    }

    proptest! {
        #[test]
        fn binary_round_trip(raw in prop::collection::vec((any::<u64>(), any::<u64>(), any::<u64>(), any::<u32>()), 0..50)) {
            let entries: Vec<_> = raw.iter().enumerate().map(|(i, &(o, a, b, t))| JournalEntry {
                seq: i as u64, offset: o, old: a, new: b, thread: t,
            }).collect();
            let j = WriteJournal::merge(vec![entries]);
            let mut buf = Vec::new();
            j.write_binary(&mut buf).unwrap();
            prop_assert_eq!(buf.len(), 16 + j.len() * RECORD_BYTES);
            prop_assert_eq!(WriteJournal::read_binary(&buf[..]).unwrap(), j);
        }

        #[test]
        fn sequential_model_replays_exactly(writes in prop::collection::vec((0usize..16, 0u8..4), 0..200)) {
            let mut mem = vec![0u8; 128];
            for (i, w) in mem.chunks_mut(8).enumerate() {
                w.copy_from_slice(&(i as u64).to_ne_bytes());
            }
            let snapshot = mem.clone();
            let mut entries = Vec::new();
            for (seq, &(word, thread)) in writes.iter().enumerate() {
                let new = (1 << 63) | seq as u64;
                let old = read_word(&mem, word * 8);
                mem[word * 8..word * 8 + 8].copy_from_slice(&new.to_ne_bytes());
                entries.push(JournalEntry { seq: seq as u64, offset: (word * 8) as u64, old, new, thread: thread as u32 });
            }
            let j = WriteJournal::merge(vec![entries]);
            prop_assert!(j.verify(&snapshot, &mem).is_ok());
        }
    }
}
