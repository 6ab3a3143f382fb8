//! Job state shared between the migration worker and the fault handler, and
//! the worker itself.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use log::{debug, warn};

use super::area::{AreaCell, AreaState};
use super::fault::{self, FaultResolution, Registration};
use super::split::{child_containing, split_area, Area};
use super::{AreaSummary, EngineError, MigrationOptions, MigrationReport, MigrationStats, MigrationStatus, PageStatus};
use crate::mem_file::PhysicalStore;
use crate::sys::{self, Protection};
use crate::vmap::VirtualRegion;

const CHUNK: usize = 1024;
const NO_CHILD: u32 = u32::MAX;

#[derive(Default)]
pub(crate) struct AreaSlot {
    voffset: AtomicUsize,
    length: AtomicUsize,
    retries: AtomicU32,
    cell: AreaCell,
    first_child: AtomicU32,
    child_count: AtomicU32,
    /// Handlers currently between marking the area dirty and restoring write
    /// access.
    unprotecting: AtomicU32,
}

impl AreaSlot {
    fn area(&self) -> Area {
        Area {
            voffset: self.voffset.load(Ordering::Relaxed),
            length: self.length.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            state: self.cell.load(),
        }
    }
}

/// Append-only slot storage whose slots never move, so the fault handler can
/// read them without locks. Only the worker appends.
pub(crate) struct Arena {
    chunks: Box<[AtomicPtr<AreaSlot>]>,
    len: AtomicUsize,
}

impl Arena {
    fn with_capacity(slots: usize) -> Self {
        let chunks = slots.div_ceil(CHUNK).max(1);
        Arena {
            chunks: (0..chunks).map(|_| AtomicPtr::new(std::ptr::null_mut())).collect(),
            len: AtomicUsize::new(0),
        }
    }

    fn get(&self, idx: u32) -> &AreaSlot {
        let idx = idx as usize;
        let chunk = self.chunks[idx / CHUNK].load(Ordering::Acquire);
        debug_assert!(!chunk.is_null());
        unsafe { &*chunk.add(idx % CHUNK) }
    }

    fn len(&self) -> usize {
        self.len.load(Ordering::Acquire)
    }

    fn push(&self, area: Area) -> u32 {
        let idx = self.len.load(Ordering::Relaxed);
        let chunk_idx = idx / CHUNK;
        assert!(chunk_idx < self.chunks.len(), "area arena exhausted");
        if self.chunks[chunk_idx].load(Ordering::Relaxed).is_null() {
            let chunk: Box<[AreaSlot]> = (0..CHUNK).map(|_| AreaSlot::default()).collect();
            self.chunks[chunk_idx].store(Box::into_raw(chunk) as *mut AreaSlot, Ordering::Release);
        }
        let slot = self.get(idx as u32);
        slot.voffset.store(area.voffset, Ordering::Relaxed);
        slot.length.store(area.length, Ordering::Relaxed);
        slot.retries.store(area.retries, Ordering::Relaxed);
        slot.first_child.store(NO_CHILD, Ordering::Relaxed);
        self.len.store(idx + 1, Ordering::Release);
        idx as u32
    }
}

impl Drop for Arena {
    fn drop(&mut self) {
        for c in self.chunks.iter() {
            let p = c.load(Ordering::Acquire);
            if !p.is_null() {
                drop(unsafe { Box::from_raw(std::ptr::slice_from_raw_parts_mut(p, CHUNK)) });
            }
        }
    }
}

#[derive(Default)]
pub(crate) struct Counters {
    pub bytes_copied_total: AtomicU64,
    pub bytes_copied_extra: AtomicU64,
    pub retries: AtomicU64,
    pub areas_split: AtomicU64,
    pub pages_migrated: AtomicUsize,
    pub dirty_faults: AtomicU64,
    pub waited_faults: AtomicU64,
    pub spin_timeouts: AtomicU64,
}

pub(crate) struct JobShared {
    pub base: usize,
    pub length: usize,
    pub page: usize,
    initial_area: usize,
    factor: usize,
    spin_bound_ns: u64,
    roots: usize,
    arena: Arena,
    pub counters: Counters,
    pub stop: AtomicBool,
    pub report: Mutex<Option<MigrationReport>>,
    pub done: Condvar,
}

impl JobShared {
    pub fn new(region: &VirtualRegion, options: &MigrationOptions) -> Self {
        let page = region.page_size().bytes();
        let pages = region.page_count();
        let roots = region.len().div_ceil(options.initial_area);
        // Every split turns one leaf into at least two, and leaves are disjoint
        // pages, so the split forest never exceeds roots + pages slots.
        let arena = Arena::with_capacity(roots + pages);
        for a in super::split::initial_areas(region.len(), options.initial_area) {
            arena.push(a);
        }
        JobShared {
            base: region.base(),
            length: region.len(),
            page,
            initial_area: options.initial_area,
            factor: options.reduction_factor,
            spin_bound_ns: options.handler_spin_bound.as_nanos() as u64,
            roots,
            arena,
            counters: Counters::default(),
            stop: AtomicBool::new(false),
            report: Mutex::new(None),
            done: Condvar::new(),
        }
    }

    /// Current leaf area holding byte `offset`.
    fn find_leaf(&self, offset: usize) -> u32 {
        let mut idx = (offset / self.initial_area) as u32;
        loop {
            let slot = self.arena.get(idx);
            let count = slot.child_count.load(Ordering::Acquire) as usize;
            if count == 0 {
                return idx;
            }
            let first = slot.first_child.load(Ordering::Relaxed);
            let voffset = slot.voffset.load(Ordering::Relaxed);
            let pages = slot.length.load(Ordering::Relaxed) / self.page;
            let rel = (offset - voffset) / self.page;
            idx = first + child_containing(pages, self.factor, rel) as u32;
        }
    }

    fn unprotect(&self, slot: &AreaSlot) {
        let voffset = slot.voffset.load(Ordering::Relaxed);
        let length = slot.length.load(Ordering::Relaxed);
        sys::protect_raw(self.base + voffset, length, Protection::ReadWrite);
    }

    /// Fault-handler side of the protocol. Async-signal-safe.
    pub fn resolve_fault(&self, offset: usize) -> FaultResolution {
        let slot = self.arena.get(self.find_leaf(offset));
        loop {
            match slot.cell.load() {
                AreaState::Copying => {
                    slot.unprotecting.fetch_add(1, Ordering::SeqCst);
                    let marked = slot.cell.transition(AreaState::Copying, AreaState::Dirty).is_ok();
                    if marked {
                        self.unprotect(slot);
                        self.counters.dirty_faults.fetch_add(1, Ordering::Relaxed);
                    }
                    slot.unprotecting.fetch_sub(1, Ordering::SeqCst);
                    if marked {
                        return FaultResolution::MarkedDirty;
                    }
                }
                AreaState::Sealed | AreaState::Remapping => return self.wait_for_remap(slot),
                AreaState::Remapped => return FaultResolution::Retry,
                AreaState::Idle | AreaState::Dirty => {
                    sys::yield_now();
                    return FaultResolution::Retry;
                }
            }
        }
    }

    fn wait_for_remap(&self, slot: &AreaSlot) -> FaultResolution {
        let start = sys::monotonic_nanos();
        let mut spins = 0u32;
        loop {
            match slot.cell.load() {
                AreaState::Remapped => {
                    self.counters.waited_faults.fetch_add(1, Ordering::Relaxed);
                    return FaultResolution::WaitedForRemap;
                }
                AreaState::Sealed if sys::monotonic_nanos() - start > self.spin_bound_ns => {
                    slot.unprotecting.fetch_add(1, Ordering::SeqCst);
                    let marked = slot.cell.transition(AreaState::Sealed, AreaState::Dirty).is_ok();
                    if marked {
                        self.unprotect(slot);
                        self.counters.dirty_faults.fetch_add(1, Ordering::Relaxed);
                        self.counters.spin_timeouts.fetch_add(1, Ordering::Relaxed);
                    }
                    slot.unprotecting.fetch_sub(1, Ordering::SeqCst);
                    if marked {
                        return FaultResolution::SpinTimeoutDirty;
                    }
                }
                // Remapping is bounded by one map call; keep waiting.
                AreaState::Sealed | AreaState::Remapping => {}
                _ => return FaultResolution::Retry,
            }
            spins += 1;
            if spins.is_multiple_of(64) {
                sys::yield_now();
            } else {
                std::hint::spin_loop();
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AreaOutcome {
    Remapped,
    Requeued,
}

pub(crate) struct Worker {
    pub shared: Arc<JobShared>,
    region: VirtualRegion,
    dst: PhysicalStore,
    options: MigrationOptions,
    queue: VecDeque<u32>,
    started: Instant,
    _registration: Registration,
}

impl Worker {
    pub fn new(
        shared: Arc<JobShared>,
        region: VirtualRegion,
        dst: PhysicalStore,
        options: MigrationOptions,
    ) -> Result<Self, EngineError> {
        let registration = fault::register(&shared)?;
        let queue = (0..shared.roots as u32).collect();
        Ok(Worker {
            shared,
            region,
            dst,
            options,
            queue,
            started: Instant::now(),
            _registration: registration,
        })
    }

    /// Migrates queued areas until the queue drains, the deadline passes or a
    /// stop is requested, then publishes the report.
    pub fn run(mut self) -> MigrationReport {
        let deadline = self.started.checked_add(self.options.timeout);
        let mut failure = None;
        let status = loop {
            if self.shared.stop.load(Ordering::SeqCst) || deadline.is_some_and(|d| Instant::now() >= d) {
                break MigrationStatus::TimedOut;
            }
            let Some(idx) = self.queue.pop_front() else {
                break MigrationStatus::Complete;
            };
            if let Err(e) = self.migrate_area(idx) {
                warn!("migration failed: {e}");
                failure = Some(e.to_string());
                break MigrationStatus::Failed;
            }
        };
        self.finish(status, failure)
    }

    /// One copy-seal-remap attempt for the queued area `idx`.
    pub fn migrate_area(&mut self, idx: u32) -> Result<AreaOutcome, EngineError> {
        let shared = Arc::clone(&self.shared);
        let slot = shared.arena.get(idx);
        let area = slot.area();
        let (voffset, length) = (area.voffset, area.length);

        let dst = match self.dst.allocate_extent(length, self.options.dst_prefault_required) {
            Ok(e) => e,
            Err(e) => {
                self.queue.push_front(idx);
                return Err(EngineError::DestinationExhausted(e));
            }
        };
        let sources = self.region.extents_in(voffset, length)?;

        slot.cell
            .transition(AreaState::Idle, AreaState::Copying)
            .expect("queued areas are idle");
        self.region.protect_range(voffset, length, Protection::ReadOnly)?;
        unsafe {
            std::ptr::copy_nonoverlapping((shared.base + voffset) as *const u8, dst.as_ptr(), length);
        }
        shared
            .counters
            .bytes_copied_total
            .fetch_add(length as u64, Ordering::Relaxed);
        if area.retries > 0 {
            shared
                .counters
                .bytes_copied_extra
                .fetch_add(length as u64, Ordering::Relaxed);
        }
        if let Some(hook) = &self.options.hooks.after_copy {
            hook(&self.region, area);
        }

        if slot.cell.transition(AreaState::Copying, AreaState::Sealed).is_ok() {
            if let Some(hook) = &self.options.hooks.after_seal {
                hook(&self.region, area);
            }
            if slot.cell.transition(AreaState::Sealed, AreaState::Remapping).is_ok() {
                if let Err(e) = self.region.map_range(voffset, &dst, Protection::ReadWrite) {
                    let _ = self.region.protect_range(voffset, length, Protection::ReadWrite);
                    let _ = slot.cell.transition(AreaState::Remapping, AreaState::Dirty);
                    let _ = self.dst.release_extent(&dst);
                    self.requeue(idx, slot);
                    return Err(e.into());
                }
                slot.cell
                    .transition(AreaState::Remapping, AreaState::Remapped)
                    .expect("only the worker leaves Remapping");
                for src in &sources {
                    if let Err(e) = src.store().release_extent(src) {
                        warn!("could not return {src:?} to its pool: {e}");
                    }
                }
                shared
                    .counters
                    .pages_migrated
                    .fetch_add(length / shared.page, Ordering::Relaxed);
                return Ok(AreaOutcome::Remapped);
            }
        }

        // Dirty: wait until the handler that flagged it has restored write
        // access before anything else touches the range's protection.
        while slot.unprotecting.load(Ordering::SeqCst) != 0 {
            sys::yield_now();
        }
        self.dst.release_extent(&dst)?;
        self.requeue(idx, slot);
        Ok(AreaOutcome::Requeued)
    }

    fn requeue(&mut self, idx: u32, slot: &AreaSlot) {
        let shared = &self.shared;
        shared.counters.retries.fetch_add(1, Ordering::Relaxed);
        let area = slot.area();
        let children = split_area(&area, shared.factor, shared.page);
        if children.len() == 1 {
            slot.retries.fetch_add(1, Ordering::Relaxed);
            slot.cell
                .transition(AreaState::Dirty, AreaState::Idle)
                .expect("requeued area is dirty");
            self.queue.push_back(idx);
            return;
        }
        shared.counters.areas_split.fetch_add(1, Ordering::Relaxed);
        let first = shared.arena.len() as u32;
        for child in &children {
            let c = shared.arena.push(*child);
            self.queue.push_back(c);
        }
        slot.first_child.store(first, Ordering::Relaxed);
        slot.child_count.store(children.len() as u32, Ordering::Release);
        debug!(
            "split area {:#x}+{:#x} into {} (retry {})",
            area.voffset,
            area.length,
            children.len(),
            area.retries + 1
        );
    }

    fn finish(self, status: MigrationStatus, failure: Option<String>) -> MigrationReport {
        let shared = &self.shared;
        // Never leave any part of the region read-only once the job ends,
        // whatever step an error interrupted.
        for i in 0..shared.arena.len() {
            let slot = shared.arena.get(i as u32);
            if slot.child_count.load(Ordering::Acquire) != 0 || slot.cell.load() == AreaState::Remapped {
                continue;
            }
            let a = slot.area();
            if let Err(e) = self.region.protect_range(a.voffset, a.length, Protection::ReadWrite) {
                warn!("could not restore write access at {:#x}: {e}", a.voffset);
            }
        }

        let mut page_status = vec![PageStatus::Migrated; self.region.page_count()];
        let mut final_areas = Vec::new();
        for i in 0..shared.arena.len() {
            let slot = shared.arena.get(i as u32);
            if slot.child_count.load(Ordering::Acquire) != 0 {
                continue;
            }
            let a = slot.area();
            let migrated = a.state == AreaState::Remapped;
            if !migrated {
                page_status[a.voffset / shared.page..a.end() / shared.page].fill(PageStatus::Pending);
            }
            final_areas.push(AreaSummary {
                voffset: a.voffset,
                length: a.length,
                retries: a.retries,
                migrated,
            });
        }
        final_areas.sort_by_key(|a| a.voffset);
        let pages_migrated = page_status.iter().filter(|s| **s == PageStatus::Migrated).count();
        let c = &shared.counters;
        MigrationReport {
            status,
            failure,
            pages_migrated,
            pages_pending: page_status.len() - pages_migrated,
            page_status,
            final_areas,
            stats: MigrationStats {
                bytes_copied_total: c.bytes_copied_total.load(Ordering::Relaxed),
                bytes_copied_extra: c.bytes_copied_extra.load(Ordering::Relaxed),
                retries: c.retries.load(Ordering::Relaxed),
                areas_split: c.areas_split.load(Ordering::Relaxed),
                dirty_faults: c.dirty_faults.load(Ordering::Relaxed),
                waited_faults: c.waited_faults.load(Ordering::Relaxed),
                spin_timeouts: c.spin_timeouts.load(Ordering::Relaxed),
                initial_areas: shared.roots,
                elapsed: self.started.elapsed(),
            },
        }
    }
}
