//! Per-area migration state, advanced only by compare-and-swap.
//!
//! The state and a generation counter share one 64-bit word. Every successful
//! transition bumps the generation, which lets tests reconstruct the exact
//! per-area transition history from concurrent logs.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum AreaState {
    Idle = 0,
    Copying = 1,
    Sealed = 2,
    Remapping = 3,
    Remapped = 4,
    Dirty = 5,
}

impl AreaState {
    pub const ALL: [AreaState; 6] = [
        AreaState::Idle,
        AreaState::Copying,
        AreaState::Sealed,
        AreaState::Remapping,
        AreaState::Remapped,
        AreaState::Dirty,
    ];

    fn from_bits(bits: u8) -> AreaState {
        match bits {
            0 => AreaState::Idle,
            1 => AreaState::Copying,
            2 => AreaState::Sealed,
            3 => AreaState::Remapping,
            4 => AreaState::Remapped,
            5 => AreaState::Dirty,
            _ => unreachable!("corrupt area state {bits}"),
        }
    }
}

impl fmt::Display for AreaState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Whether `from -> to` is a transition the engine may ever perform.
///
/// * `Idle -> Copying`, `Copying -> Sealed`, `Sealed -> Remapping`,
///   `Remapping -> Remapped`: the migrator's happy path.
/// * `Copying -> Dirty`: a write hit the area while it was being copied.
/// * `Sealed -> Dirty`: the fault handler gave up waiting for the remap.
/// * `Remapping -> Dirty`: the remap call itself failed.
/// * `Dirty -> Idle`: the area is requeued.
pub const fn is_legal(from: AreaState, to: AreaState) -> bool {
    use AreaState::*;
    matches!(
        (from, to),
        (Idle, Copying)
            | (Copying, Sealed)
            | (Copying, Dirty)
            | (Sealed, Remapping)
            | (Sealed, Dirty)
            | (Remapping, Remapped)
            | (Remapping, Dirty)
            | (Dirty, Idle)
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransitionError {
    /// The pair is never allowed; the cell was not touched.
    Illegal { from: AreaState, to: AreaState },
    /// The cell was not in `expected`.
    Conflict { expected: AreaState, actual: AreaState },
}

/// An atomic area state with a transition generation.
#[derive(Default)]
pub struct AreaCell {
    word: AtomicU64,
}

const STATE_BITS: u64 = 8;
const STATE_MASK: u64 = (1 << STATE_BITS) - 1;

impl AreaCell {
    pub fn new() -> Self {
        AreaCell::default()
    }

    pub fn load(&self) -> AreaState {
        AreaState::from_bits((self.word.load(Ordering::SeqCst) & STATE_MASK) as u8)
    }

    /// State and number of transitions performed so far.
    pub fn load_with_generation(&self) -> (AreaState, u64) {
        let w = self.word.load(Ordering::SeqCst);
        (AreaState::from_bits((w & STATE_MASK) as u8), w >> STATE_BITS)
    }

    /// Atomically moves `from -> to`. On success returns the generation the
    /// cell had before the transition.
    pub fn transition(&self, from: AreaState, to: AreaState) -> Result<u64, TransitionError> {
        if !is_legal(from, to) {
            return Err(TransitionError::Illegal { from, to });
        }
        let mut current = self.word.load(Ordering::SeqCst);
        loop {
            let state = AreaState::from_bits((current & STATE_MASK) as u8);
            if state != from {
                return Err(TransitionError::Conflict {
                    expected: from,
                    actual: state,
                });
            }
            let generation = current >> STATE_BITS;
            let next = ((generation + 1) << STATE_BITS) | to as u64;
            match self
                .word
                .compare_exchange_weak(current, next, Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => return Ok(generation),
                Err(actual) => current = actual,
            }
        }
    }
}

impl fmt::Debug for AreaCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (s, g) = self.load_with_generation();
        write!(f, "AreaCell({s}, gen {g})")
    }
}
