//! Lowest-offset first-fit extent allocator with eager coalescing.

use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReleaseError {
    /// Part of the range is already free.
    DoubleRelease,
    /// The range is not covered by a live allocation.
    NotAllocated,
}

/// Book-keeping for a `[0, capacity)` space carved into `unit`-aligned
/// extents. Free and live extents are both kept so that releases can be
/// validated; together they always tile the whole space.
#[derive(Clone, Debug)]
pub struct FreeList {
    capacity: usize,
    unit: usize,
    free: BTreeMap<usize, usize>,
    live: BTreeMap<usize, usize>,
    free_bytes: usize,
}

impl FreeList {
    pub fn new(capacity: usize, unit: usize) -> Self {
        assert!(unit > 0 && capacity.is_multiple_of(unit));
        let mut free = BTreeMap::new();
        if capacity > 0 {
            free.insert(0, capacity);
        }
        FreeList {
            capacity,
            unit,
            free,
            live: BTreeMap::new(),
            free_bytes: capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn free_bytes(&self) -> usize {
        self.free_bytes
    }

    pub fn used_bytes(&self) -> usize {
        self.capacity - self.free_bytes
    }

    pub fn free_extents(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.free.iter().map(|(&o, &l)| (o, l))
    }

    pub fn live_extents(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.live.iter().map(|(&o, &l)| (o, l))
    }

    pub fn largest_free(&self) -> usize {
        self.free.values().copied().max().unwrap_or(0)
    }

    /// Takes the lowest-offset free extent that fits `len`.
    pub fn allocate(&mut self, len: usize) -> Option<usize> {
        debug_assert!(len > 0 && len.is_multiple_of(self.unit));
        let (&offset, &flen) = self.free.iter().find(|(_, &l)| l >= len)?;
        self.free.remove(&offset);
        if flen > len {
            self.free.insert(offset + len, flen - len);
        }
        self.live.insert(offset, len);
        self.free_bytes -= len;
        Some(offset)
    }

    /// Returns `[offset, offset + len)` to the free list. The range may be any
    /// unit-aligned sub-range of one live allocation; the remainder of that
    /// allocation stays live.
    pub fn release(&mut self, offset: usize, len: usize) -> Result<(), ReleaseError> {
        debug_assert!(len > 0 && offset.is_multiple_of(self.unit) && len.is_multiple_of(self.unit));
        let end = offset + len;
        let owner = self
            .live
            .range(..=offset)
            .next_back()
            .map(|(&o, &l)| (o, l))
            .filter(|&(o, l)| end <= o + l);
        let Some((lo, llen)) = owner else {
            return Err(if self.overlaps_free(offset, end) {
                ReleaseError::DoubleRelease
            } else {
                ReleaseError::NotAllocated
            });
        };

        self.live.remove(&lo);
        if lo < offset {
            self.live.insert(lo, offset - lo);
        }
        if end < lo + llen {
            self.live.insert(end, lo + llen - end);
        }

        let mut start = offset;
        let mut stop = end;
        if let Some((&po, &pl)) = self.free.range(..offset).next_back() {
            if po + pl == offset {
                self.free.remove(&po);
                start = po;
            }
        }
        if let Some(nl) = self.free.remove(&end) {
            stop = end + nl;
        }
        self.free.insert(start, stop - start);
        self.free_bytes += len;
        Ok(())
    }

    fn overlaps_free(&self, start: usize, end: usize) -> bool {
        if let Some((&o, &l)) = self.free.range(..end).next_back() {
            if o + l > start {
                return true;
            }
        }
        false
    }
}
