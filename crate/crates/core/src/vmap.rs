//! Virtual regions whose pages are rewired onto store offsets at runtime.
//!
//! A region is a reserved, contiguous address range. Each page is either
//! unmapped or mapped to an offset of some [`PhysicalStore`]. Replacing a
//! mapping is a single fixed-address file mapping over the whole range, so
//! concurrent readers observe either the old or the new backing but never a
//! hole.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock, Weak};

use thiserror::Error;

use crate::mem_file::{Extent, PageSize, PhysicalStore};
use crate::sys;

pub use crate::sys::Protection;

#[derive(Debug, Error)]
pub enum VmapError {
    #[error("{what} {value:#x} is not aligned to the {page} byte page size")]
    Misaligned {
        what: &'static str,
        value: usize,
        page: usize,
    },
    #[error("extent page size {extent:?} does not match region page size {region:?}")]
    PageSizeMismatch { extent: PageSize, region: PageSize },
    #[error("range {offset:#x}+{length:#x} exceeds region length {region_len:#x}")]
    OutOfBounds {
        offset: usize,
        length: usize,
        region_len: usize,
    },
    #[error("page at offset {0:#x} is not mapped")]
    Unmapped(usize),
    #[error("os error: {0}")]
    Os(#[from] std::io::Error),
}

/// Current backing of one virtual page.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PageMapping {
    pub store: PhysicalStore,
    pub offset: usize,
}

#[derive(Clone, Copy)]
struct Entry {
    store: u32,
    offset: usize,
}

struct Table {
    entries: Vec<Option<Entry>>,
    stores: Vec<PhysicalStore>,
}

impl Table {
    fn store_index(&mut self, store: &PhysicalStore) -> u32 {
        match self.stores.iter().position(|s| s == store) {
            Some(i) => i as u32,
            None => {
                self.stores.push(store.clone());
                (self.stores.len() - 1) as u32
            }
        }
    }
}

/// Serializes mutations of overlapping byte ranges.
#[derive(Default)]
struct RangeLocks {
    held: Mutex<Vec<(usize, usize)>>,
    released: Condvar,
}

struct RangeGuard<'a> {
    locks: &'a RangeLocks,
    range: (usize, usize),
}

impl RangeLocks {
    fn lock(&self, start: usize, end: usize) -> RangeGuard<'_> {
        let mut held = self.held.lock().unwrap_or_else(|e| e.into_inner());
        while held.iter().any(|&(s, e)| s < end && start < e) {
            held = self.released.wait(held).unwrap_or_else(|e| e.into_inner());
        }
        held.push((start, end));
        RangeGuard {
            locks: self,
            range: (start, end),
        }
    }
}

impl Drop for RangeGuard<'_> {
    fn drop(&mut self) {
        let mut held = self.locks.held.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(i) = held.iter().position(|&r| r == self.range) {
            held.swap_remove(i);
        }
        self.locks.released.notify_all();
    }
}

struct RegionInner {
    id: u64,
    base: usize,
    length: usize,
    page_size: PageSize,
    reservation: (usize, usize),
    table: Mutex<Table>,
    locks: RangeLocks,
    map_calls: AtomicU64,
}

impl Drop for RegionInner {
    fn drop(&mut self) {
        if let Ok(mut reg) = REGISTRY.write() {
            reg.remove(&self.base);
        }
        if self.reservation.1 > 0 {
            let _ = sys::unmap(self.reservation.0 as *mut u8, self.reservation.1);
        }
    }
}

static NEXT_REGION_ID: AtomicU64 = AtomicU64::new(1);
static REGISTRY: RwLock<BTreeMap<usize, Weak<RegionInner>>> = RwLock::new(BTreeMap::new());

/// Finds the region containing `addr` and the byte offset of `addr` in it.
pub fn lookup_address(addr: usize) -> Option<(VirtualRegion, usize)> {
    let reg = REGISTRY.read().ok()?;
    let (_, weak) = reg.range(..=addr).next_back()?;
    let inner = weak.upgrade()?;
    if addr < inner.base + inner.length {
        let off = addr - inner.base;
        Some((VirtualRegion { inner }, off))
    } else {
        None
    }
}

/// A contiguous virtual range with a rewireable page table.
///
/// Cloning yields another handle to the same range; the range is released
/// when the last handle drops.
#[derive(Clone)]
pub struct VirtualRegion {
    inner: Arc<RegionInner>,
}

impl fmt::Debug for VirtualRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VirtualRegion")
            .field("id", &self.inner.id)
            .field("base", &format_args!("{:#x}", self.inner.base))
            .field("length", &self.inner.length)
            .field("page_size", &self.inner.page_size)
            .finish()
    }
}

impl PartialEq for VirtualRegion {
    fn eq(&self, other: &Self) -> bool {
        self.inner.id == other.inner.id
    }
}

impl VirtualRegion {
    /// Reserves `length` bytes of address space. Every page starts unmapped
    /// and faults on access.
    pub fn reserve(length: usize, page_size: PageSize) -> Result<Self, VmapError> {
        let page = page_size.bytes();
        if !length.is_multiple_of(page) {
            return Err(VmapError::Misaligned {
                what: "length",
                value: length,
                page,
            });
        }
        let (base, reservation) = if length == 0 {
            (std::ptr::NonNull::<u8>::dangling().as_ptr() as usize, (0, 0))
        } else if page == sys::system_page_size() {
            let p = sys::reserve(length)? as usize;
            (p, (p, length))
        } else {
            // over-reserve and align so huge pages can be mapped at the base
            let total = length + page;
            let p = sys::reserve(total)? as usize;
            let aligned = (p + page - 1) & !(page - 1);
            (aligned, (p, total))
        };
        let inner = Arc::new(RegionInner {
            id: NEXT_REGION_ID.fetch_add(1, Ordering::Relaxed),
            base,
            length,
            page_size,
            reservation,
            table: Mutex::new(Table {
                entries: vec![None; length / page],
                stores: Vec::new(),
            }),
            locks: RangeLocks::default(),
            map_calls: AtomicU64::new(0),
        });
        if length > 0 {
            REGISTRY
                .write()
                .unwrap_or_else(|e| e.into_inner())
                .insert(base, Arc::downgrade(&inner));
        }
        Ok(VirtualRegion { inner })
    }

    /// Reserves a region and maps it onto one fresh extent of `store`.
    pub fn backed_by(store: &PhysicalStore, length: usize, prefault: bool) -> Result<Self, crate::Error> {
        let region = Self::reserve(length, store.page_size())?;
        if length > 0 {
            let extent = store.allocate_extent(length, prefault)?;
            region.map_range(0, &extent, Protection::ReadWrite)?;
        }
        Ok(region)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn base(&self) -> usize {
        self.inner.base
    }

    pub fn as_ptr(&self) -> *mut u8 {
        self.inner.base as *mut u8
    }

    pub fn len(&self) -> usize {
        self.inner.length
    }

    pub fn is_empty(&self) -> bool {
        self.inner.length == 0
    }

    pub fn page_size(&self) -> PageSize {
        self.inner.page_size
    }

    pub fn page_count(&self) -> usize {
        self.inner.length / self.inner.page_size.bytes()
    }

    pub fn contains(&self, addr: usize) -> bool {
        addr >= self.inner.base && addr < self.inner.base + self.inner.length
    }

    /// Number of fixed-address map calls issued so far.
    pub fn os_map_calls(&self) -> u64 {
        self.inner.map_calls.load(Ordering::Relaxed)
    }

    fn table(&self) -> MutexGuard<'_, Table> {
        self.inner.table.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn check_range(&self, voffset: usize, length: usize) -> Result<(), VmapError> {
        let page = self.inner.page_size.bytes();
        if !voffset.is_multiple_of(page) {
            return Err(VmapError::Misaligned {
                what: "offset",
                value: voffset,
                page,
            });
        }
        if !length.is_multiple_of(page) {
            return Err(VmapError::Misaligned {
                what: "length",
                value: length,
                page,
            });
        }
        if voffset.checked_add(length).is_none_or(|end| end > self.inner.length) {
            return Err(VmapError::OutOfBounds {
                offset: voffset,
                length,
                region_len: self.inner.length,
            });
        }
        Ok(())
    }

    /// Points `[voffset, voffset + extent.len())` at `extent` with a single
    /// fixed-address map call and applies `protection` in the same call.
    pub fn map_range(&self, voffset: usize, extent: &Extent, protection: Protection) -> Result<(), VmapError> {
        if extent.store().page_size() != self.inner.page_size {
            return Err(VmapError::PageSizeMismatch {
                extent: extent.store().page_size(),
                region: self.inner.page_size,
            });
        }
        self.check_range(voffset, extent.len())?;
        if extent.is_empty() {
            return Ok(());
        }
        let _guard = self.inner.locks.lock(voffset, voffset + extent.len());
        sys::map_fixed(
            (self.inner.base + voffset) as *mut u8,
            extent.len(),
            protection,
            extent.store().fd(),
            extent.offset() as u64,
        )?;
        self.inner.map_calls.fetch_add(1, Ordering::Relaxed);

        let page = self.inner.page_size.bytes();
        let mut table = self.table();
        let store = table.store_index(extent.store());
        let first = voffset / page;
        for (i, entry) in table.entries[first..first + extent.len() / page].iter_mut().enumerate() {
            *entry = Some(Entry {
                store,
                offset: extent.offset() + i * page,
            });
        }
        Ok(())
    }

    /// Changes the protection of a mapped range. Writes to a read-only range
    /// raise a write fault; reads always succeed.
    pub fn protect_range(&self, voffset: usize, length: usize, protection: Protection) -> Result<(), VmapError> {
        self.check_range(voffset, length)?;
        if length == 0 {
            return Ok(());
        }
        {
            let page = self.inner.page_size.bytes();
            let table = self.table();
            if let Some(i) = table.entries[voffset / page..(voffset + length) / page]
                .iter()
                .position(Option::is_none)
            {
                return Err(VmapError::Unmapped(voffset + i * page));
            }
        }
        let _guard = self.inner.locks.lock(voffset, voffset + length);
        sys::protect((self.inner.base + voffset) as *mut u8, length, protection)?;
        Ok(())
    }

    /// The store and offset currently backing the page at `voffset`.
    pub fn mapping_of(&self, voffset: usize) -> Option<PageMapping> {
        let page = self.inner.page_size.bytes();
        assert!(
            voffset.is_multiple_of(page) && voffset < self.inner.length,
            "offset {voffset:#x} out of range"
        );
        let table = self.table();
        table.entries[voffset / page].map(|e| PageMapping {
            store: table.stores[e.store as usize].clone(),
            offset: e.offset,
        })
    }

    pub fn is_fully_mapped(&self) -> bool {
        self.table().entries.iter().all(Option::is_some)
    }

    /// The backing of `[voffset, voffset + length)` as maximal runs of
    /// contiguous store offsets, in address order.
    pub fn extents_in(&self, voffset: usize, length: usize) -> Result<Vec<Extent>, VmapError> {
        self.check_range(voffset, length)?;
        let page = self.inner.page_size.bytes();
        let table = self.table();
        let mut out: Vec<(u32, usize, usize)> = Vec::new();
        for (i, e) in table.entries[voffset / page..(voffset + length) / page]
            .iter()
            .enumerate()
        {
            let e = e.ok_or(VmapError::Unmapped(voffset + i * page))?;
            match out.last_mut() {
                Some((s, o, l)) if *s == e.store && *o + *l == e.offset => *l += page,
                _ => out.push((e.store, e.offset, page)),
            }
        }
        Ok(out
            .into_iter()
            .map(|(s, o, l)| Extent::from_parts(table.stores[s as usize].clone(), o, l))
            .collect())
    }

    pub fn load_u64(&self, offset: usize) -> u64 {
        self.word(offset).load(Ordering::Relaxed)
    }

    pub fn store_u64(&self, offset: usize, value: u64) {
        self.word(offset).store(value, Ordering::Relaxed)
    }

    /// Atomically replaces the word at `offset`, returning the previous value.
    pub fn swap_u64(&self, offset: usize, value: u64) -> u64 {
        self.word(offset).swap(value, Ordering::Relaxed)
    }

    fn word(&self, offset: usize) -> &std::sync::atomic::AtomicU64 {
        assert!(
            offset.is_multiple_of(8) && offset + 8 <= self.inner.length,
            "word offset {offset:#x}"
        );
        unsafe { &*((self.inner.base + offset) as *const std::sync::atomic::AtomicU64) }
    }

    pub fn read_bytes(&self, offset: usize, buf: &mut [u8]) {
        assert!(offset + buf.len() <= self.inner.length);
        unsafe { std::ptr::copy_nonoverlapping((self.inner.base + offset) as *const u8, buf.as_mut_ptr(), buf.len()) }
    }

    pub fn write_bytes(&self, offset: usize, data: &[u8]) {
        assert!(offset + data.len() <= self.inner.length);
        unsafe { std::ptr::copy_nonoverlapping(data.as_ptr(), (self.inner.base + offset) as *mut u8, data.len()) }
    }

    /// Copies the whole region into a fresh buffer.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.inner.length];
        self.read_bytes(0, &mut out);
        out
    }

    /// The region's bytes.
    ///
    /// # Safety
    /// Concurrent writers make the contents racy; callers must tolerate that
    /// or exclude writers.
    pub unsafe fn as_slice(&self) -> &[u8] {
        if self.inner.length == 0 {
            return &[];
        }
        std::slice::from_raw_parts(self.inner.base as *const u8, self.inner.length)
    }

    /// Mutable view of the region's bytes.
    ///
    /// # Safety
    /// The caller must be the only accessor for the lifetime of the slice.
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn as_mut_slice(&self) -> &mut [u8] {
        if self.inner.length == 0 {
            return &mut [];
        }
        std::slice::from_raw_parts_mut(self.inner.base as *mut u8, self.inner.length)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem_file::{StoreSpec, SMALL_PAGE};
    use crate::numa_topo::{detect_topology, NodeId};
    use proptest::prelude::*;

    const MIB: usize = 1024 * 1024;

    fn store(node: u32, capacity: usize) -> PhysicalStore {
        PhysicalStore::create(
            &detect_topology(false),
            StoreSpec::new(NodeId(node), PageSize::Small, capacity),
        )
        .unwrap()
    }

    #[test]
    fn reserve_arithmetic_and_alignment() {
        let r = VirtualRegion::reserve(4 * 1024 * MIB, PageSize::Small).unwrap();
        assert_eq!(r.page_count(), 1_048_576);
        assert!(r.mapping_of(0).is_none());
        assert!(matches!(
            VirtualRegion::reserve(3 * 1024, PageSize::Small),
            Err(VmapError::Misaligned { .. })
        ));
    }

    #[test]
    fn reservations_are_disjoint() {
        let a = VirtualRegion::reserve(MIB, PageSize::Small).unwrap();
        let b = VirtualRegion::reserve(MIB, PageSize::Small).unwrap();
        assert!(a.base() + a.len() <= b.base() || b.base() + b.len() <= a.base());
    }

    #[test]
    fn copy_then_remap_preserves_bytes() {
        let sa = store(0, MIB);
        let sb = store(1, MIB);
        let r = VirtualRegion::reserve(MIB, PageSize::Small).unwrap();
        let a = sa.allocate_extent(MIB, true).unwrap();
        r.map_range(0, &a, Protection::ReadWrite).unwrap();
        r.write_bytes(0, &[0xab]);
        let b = sb.allocate_extent(MIB, true).unwrap();
        unsafe { std::ptr::copy_nonoverlapping(a.as_ptr(), b.as_ptr(), MIB) };
        r.map_range(0, &b, Protection::ReadWrite).unwrap();
        let mut byte = [0u8];
        r.read_bytes(0, &mut byte);
        assert_eq!(byte[0], 0xab);
        assert_eq!(r.mapping_of(0).unwrap().store, sb);
    }

    #[test]
    fn page_size_mismatch() {
        let s = store(0, MIB);
        let r = VirtualRegion::reserve(4 * MIB, PageSize::Huge).unwrap_or_else(|_| unreachable!());
        let e = s.allocate_extent(MIB, false).unwrap();
        assert!(matches!(
            r.map_range(0, &e, Protection::ReadWrite),
            Err(VmapError::PageSizeMismatch { .. })
        ));
    }

    #[test]
    fn one_map_call_per_range() {
        let s = store(0, 32 * MIB);
        let r = VirtualRegion::reserve(32 * MIB, PageSize::Small).unwrap();
        let e = s.allocate_extent(16 * MIB, false).unwrap();
        let before = r.os_map_calls();
        r.map_range(16 * MIB, &e, Protection::ReadWrite).unwrap();
        assert_eq!(r.os_map_calls() - before, 1);
        assert_eq!(e.len() / SMALL_PAGE, 4096);
        assert!(r.mapping_of(16 * MIB).is_some());
        assert!(r.mapping_of(16 * MIB - SMALL_PAGE).is_none());
    }

    #[test]
    fn range_errors() {
        let s = store(0, MIB);
        let r = VirtualRegion::reserve(MIB, PageSize::Small).unwrap();
        let e = s.allocate_extent(MIB, false).unwrap();
        assert!(matches!(
            r.map_range(100, &e, Protection::ReadWrite),
            Err(VmapError::Misaligned { .. })
        ));
        assert!(matches!(
            r.map_range(SMALL_PAGE, &e, Protection::ReadWrite),
            Err(VmapError::OutOfBounds { .. })
        ));
        assert!(matches!(
            r.protect_range(0, SMALL_PAGE, Protection::ReadOnly),
            Err(VmapError::Unmapped(0))
        ));
    }

    #[test]
    fn mapping_of_tracks_remaps() {
        let sa = store(0, MIB);
        let sb = store(1, MIB);
        let r = VirtualRegion::reserve(MIB, PageSize::Small).unwrap();
        let a = sa
            .allocate_extent(2 * SMALL_PAGE, false)
            .unwrap()
            .sub(SMALL_PAGE, SMALL_PAGE);
        r.map_range(0, &a, Protection::ReadWrite).unwrap();
        let m = r.mapping_of(0).unwrap();
        assert_eq!((m.store.id(), m.offset), (sa.id(), SMALL_PAGE));
        let b = sb.allocate_extent(SMALL_PAGE, false).unwrap();
        r.map_range(0, &b, Protection::ReadWrite).unwrap();
        assert_eq!(r.mapping_of(0).unwrap().store, sb);
    }

    #[test]
    fn read_only_range_is_readable() {
        let s = store(0, MIB);
        let r = VirtualRegion::backed_by(&s, MIB, true).unwrap();
        r.store_u64(64, 77);
        r.protect_range(0, MIB, Protection::ReadOnly).unwrap();
        assert_eq!(r.load_u64(64), 77);
        r.protect_range(0, MIB, Protection::ReadWrite).unwrap();
        r.store_u64(64, 78);
        assert_eq!(r.load_u64(64), 78);
    }

    #[test]
    fn extents_coalesce() {
        let s = store(0, MIB);
        let r = VirtualRegion::backed_by(&s, 64 * SMALL_PAGE, false).unwrap();
        let ex = r.extents_in(0, r.len()).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].len(), r.len());
        let ex = r.extents_in(SMALL_PAGE, 2 * SMALL_PAGE).unwrap();
        assert_eq!((ex[0].offset(), ex[0].len()), (SMALL_PAGE, 2 * SMALL_PAGE));
    }

    #[test]
    fn lookup_by_address() {
        let s = store(0, MIB);
        let r = VirtualRegion::backed_by(&s, MIB, false).unwrap();
        let (found, off) = lookup_address(r.base() + 5000).unwrap();
        assert_eq!(found, r);
        assert_eq!(off, 5000);
        let base = r.base();
        drop((r, found));
        assert!(lookup_address(base).is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn alias_coherence(writes in prop::collection::vec((0usize..64, 0usize..512, any::<u64>()), 1..64)) {
            let s = store(0, 64 * SMALL_PAGE);
            let r = VirtualRegion::backed_by(&s, 64 * SMALL_PAGE, false).unwrap();
            for (page, word, value) in writes {
                let off = page * SMALL_PAGE + word * 8;
                r.store_u64(off, value);
                let m = r.mapping_of(page * SMALL_PAGE).unwrap();
                let through_alias = unsafe { (m.store.alias_ptr(m.offset + word * 8) as *const u64).read_volatile() };
                prop_assert_eq!(through_alias, value);
                unsafe { (m.store.alias_ptr(m.offset + word * 8) as *mut u64).write_volatile(!value) };
                prop_assert_eq!(r.load_u64(off), !value);
            }
        }
    }
}
