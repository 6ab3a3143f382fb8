//! Per-node physical memory held as offsets into main-memory files.
//!
//! A [`PhysicalStore`] owns one memory-backed file (a shared-memory file for
//! small pages, a huge-page file for 2 MiB pages) whose pages are bound to a
//! NUMA node. Virtual regions are rewired onto offsets of these files, so the
//! store is the user-space handle to physical memory. Extents are handed out
//! by a first-fit pool; released extents stay faulted so later users skip the
//! page-fault cost.

mod free_list;

pub use free_list::{FreeList, ReleaseError};

use std::ffi::CString;
use std::fmt;
use std::io;
use std::os::fd::{FromRawFd, IntoRawFd, OwnedFd};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use bitvec::vec::BitVec;
use thiserror::Error;

use crate::numa_topo::{self, NodeId, Topology};
use crate::sys::{self, Protection};

pub const SMALL_PAGE: usize = 4096;
pub const HUGE_PAGE: usize = 2 * 1024 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PageSize {
    /// 4 KiB.
    Small,
    /// 2 MiB.
    Huge,
}

impl PageSize {
    pub const fn bytes(self) -> usize {
        match self {
            PageSize::Small => SMALL_PAGE,
            PageSize::Huge => HUGE_PAGE,
        }
    }

    pub fn from_bytes(bytes: usize) -> Option<Self> {
        match bytes {
            SMALL_PAGE => Some(PageSize::Small),
            HUGE_PAGE => Some(PageSize::Huge),
            _ => None,
        }
    }

    pub fn default_backing(self) -> Backing {
        match self {
            PageSize::Small => Backing::SharedMemoryFile,
            PageSize::Huge => Backing::HugePageFile,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backing {
    SharedMemoryFile,
    HugePageFile,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0} is not part of the topology")]
    UnknownNode(NodeId),
    #[error("{what} of {value} bytes is not a multiple of the {page} byte page size")]
    Misaligned {
        what: &'static str,
        value: usize,
        page: usize,
    },
    #[error("{backing:?} backing cannot hold {page_size:?} pages")]
    BackingMismatch { backing: Backing, page_size: PageSize },
    #[error("insufficient huge pages on {node}: need {needed}, {available} reserved and free")]
    InsufficientHugePages { node: NodeId, needed: u64, available: u64 },
    #[error("out of capacity: requested {requested} bytes, largest free extent is {largest_free} bytes")]
    OutOfCapacity { requested: usize, largest_free: usize },
    #[error("extent at offset {offset:#x} was already released")]
    DoubleRelease { offset: usize },
    #[error("extent does not belong to a live allocation of this store")]
    ForeignExtent,
    #[error("os error: {0}")]
    Os(#[from] io::Error),
}

/// Parameters of a store.
#[derive(Clone, Debug)]
pub struct StoreSpec {
    pub node: NodeId,
    pub page_size: PageSize,
    pub capacity: usize,
    pub backing: Backing,
    /// Directory of a mounted huge-page filesystem. When unset, huge-page
    /// stores use an anonymous huge-page memory file instead.
    pub hugetlbfs_mount: Option<PathBuf>,
}

impl StoreSpec {
    pub fn new(node: NodeId, page_size: PageSize, capacity: usize) -> Self {
        StoreSpec {
            node,
            page_size,
            capacity,
            backing: page_size.default_backing(),
            hugetlbfs_mount: None,
        }
    }

    pub fn hugetlbfs_mount(mut self, path: impl Into<PathBuf>) -> Self {
        self.hugetlbfs_mount = Some(path.into());
        self
    }
}

/// Snapshot of a store's pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolStats {
    pub free_bytes: usize,
    pub used_bytes: usize,
    pub prefaulted_pages: usize,
}

struct Pool {
    extents: FreeList,
    prefaulted: BitVec,
    prefaulted_count: usize,
}

struct StoreInner {
    id: u64,
    node: NodeId,
    page_size: PageSize,
    capacity: usize,
    backing: Backing,
    simulated: bool,
    fd: OwnedFd,
    alias: *mut u8,
    pool: Mutex<Pool>,
}

// The alias pointer is a process-wide shared mapping owned by the store.
unsafe impl Send for StoreInner {}
unsafe impl Sync for StoreInner {}

impl Drop for StoreInner {
    fn drop(&mut self) {
        if self.capacity > 0 {
            let _ = sys::unmap(self.alias, self.capacity);
        }
    }
}

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Physical memory of one NUMA node, addressed by file offset.
///
/// Cloning is cheap and yields another handle to the same store.
#[derive(Clone)]
pub struct PhysicalStore {
    inner: Arc<StoreInner>,
}

impl fmt::Debug for PhysicalStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhysicalStore")
            .field("id", &self.inner.id)
            .field("node", &self.inner.node)
            .field("page_size", &self.inner.page_size)
            .field("capacity", &self.inner.capacity)
            .finish()
    }
}

impl PartialEq for PhysicalStore {
    fn eq(&self, other: &Self) -> bool {
        self.inner.id == other.inner.id
    }
}

impl Eq for PhysicalStore {}

impl PhysicalStore {
    /// Creates a store of `spec.capacity` bytes bound to `spec.node`. The whole
    /// range starts out free and nothing is faulted in.
    pub fn create(topology: &Topology, spec: StoreSpec) -> Result<Self, StoreError> {
        let page = spec.page_size.bytes();
        if !topology.contains(spec.node) {
            return Err(StoreError::UnknownNode(spec.node));
        }
        if !spec.capacity.is_multiple_of(page) {
            return Err(StoreError::Misaligned {
                what: "capacity",
                value: spec.capacity,
                page,
            });
        }
        if spec.backing != spec.page_size.default_backing() {
            return Err(StoreError::BackingMismatch {
                backing: spec.backing,
                page_size: spec.page_size,
            });
        }
        let physical = topology.physical_node(spec.node);
        if spec.page_size == PageSize::Huge {
            let node = physical.unwrap_or(NodeId(0));
            let needed = (spec.capacity / HUGE_PAGE) as u64;
            let available = numa_topo::free_huge_pages(node);
            if available < needed {
                return Err(StoreError::InsufficientHugePages {
                    node,
                    needed,
                    available,
                });
            }
        }

        let id = NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed);
        let fd = open_backing(id, &spec)?;
        sys::ftruncate(&fd, spec.capacity as u64)?;
        let alias = if spec.capacity > 0 {
            let alias = sys::map_shared(&fd, spec.capacity, Protection::ReadWrite)?;
            if let Some(node) = physical {
                sys::mbind(alias, spec.capacity, node.0)?;
            }
            alias
        } else {
            std::ptr::NonNull::dangling().as_ptr()
        };

        let pages = spec.capacity / page;
        Ok(PhysicalStore {
            inner: Arc::new(StoreInner {
                id,
                node: spec.node,
                page_size: spec.page_size,
                capacity: spec.capacity,
                backing: spec.backing,
                simulated: physical.is_none(),
                fd,
                alias,
                pool: Mutex::new(Pool {
                    extents: FreeList::new(spec.capacity, page),
                    prefaulted: BitVec::repeat(false, pages),
                    prefaulted_count: 0,
                }),
            }),
        })
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn node(&self) -> NodeId {
        self.inner.node
    }

    pub fn page_size(&self) -> PageSize {
        self.inner.page_size
    }

    pub fn capacity(&self) -> usize {
        self.inner.capacity
    }

    pub fn backing(&self) -> Backing {
        self.inner.backing
    }

    /// Whether node binding was skipped because the topology is simulated.
    pub fn is_simulated(&self) -> bool {
        self.inner.simulated
    }

    pub fn page_slots(&self) -> usize {
        self.inner.capacity / self.inner.page_size.bytes()
    }

    pub(crate) fn fd(&self) -> &OwnedFd {
        &self.inner.fd
    }

    /// Address of `offset` inside the store's own full-length mapping.
    pub fn alias_ptr(&self, offset: usize) -> *mut u8 {
        assert!(offset <= self.inner.capacity);
        unsafe { self.inner.alias.add(offset) }
    }

    fn pool(&self) -> MutexGuard<'_, Pool> {
        self.inner.pool.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Allocates `length` bytes at the lowest fitting offset. With `prefault`
    /// every not-yet-faulted page of the extent is touched once, so later
    /// first accesses take no soft fault.
    pub fn allocate_extent(&self, length: usize, prefault: bool) -> Result<Extent, StoreError> {
        let page = self.inner.page_size.bytes();
        if length == 0 || !length.is_multiple_of(page) {
            return Err(StoreError::Misaligned {
                what: "extent length",
                value: length,
                page,
            });
        }
        let mut pool = self.pool();
        let offset = pool.extents.allocate(length).ok_or(StoreError::OutOfCapacity {
            requested: length,
            largest_free: pool.extents.largest_free(),
        })?;
        if prefault {
            self.prefault_locked(&mut pool, offset, length);
        }
        Ok(Extent {
            store: self.clone(),
            offset,
            length,
        })
    }

    fn prefault_locked(&self, pool: &mut Pool, offset: usize, length: usize) {
        let page = self.inner.page_size.bytes();
        for p in offset / page..(offset + length) / page {
            if pool.prefaulted[p] {
                continue;
            }
            // A same-value write faults the page in writable without
            // changing its contents.
            unsafe {
                let ptr = self.inner.alias.add(p * page);
                ptr.write_volatile(ptr.read_volatile());
            }
            pool.prefaulted.set(p, true);
            pool.prefaulted_count += 1;
        }
    }

    /// Returns an extent to the pool. Its pages stay faulted. Any page-aligned
    /// sub-range of a live allocation may be released on its own.
    pub fn release_extent(&self, extent: &Extent) -> Result<(), StoreError> {
        if extent.store != *self {
            return Err(StoreError::ForeignExtent);
        }
        self.pool()
            .extents
            .release(extent.offset, extent.length)
            .map_err(|e| match e {
                ReleaseError::DoubleRelease => StoreError::DoubleRelease { offset: extent.offset },
                ReleaseError::NotAllocated => StoreError::ForeignExtent,
            })
    }

    pub fn pool_stats(&self) -> PoolStats {
        let pool = self.pool();
        PoolStats {
            free_bytes: pool.extents.free_bytes(),
            used_bytes: pool.extents.used_bytes(),
            prefaulted_pages: pool.prefaulted_count,
        }
    }

    /// Bytes that are both free and already faulted in.
    pub fn free_prefaulted_bytes(&self) -> usize {
        let pool = self.pool();
        let page = self.inner.page_size.bytes();
        pool.extents
            .free_extents()
            .map(|(o, l)| pool.prefaulted[o / page..(o + l) / page].count_ones() * page)
            .sum()
    }

    /// Faults in every free page, turning the whole free space into pooled
    /// memory.
    pub fn warm_pool(&self) {
        let mut pool = self.pool();
        let free: Vec<_> = pool.extents.free_extents().collect();
        for (o, l) in free {
            self.prefault_locked(&mut pool, o, l);
        }
    }

    /// Drops the physical pages behind `extent` so the next access faults in
    /// fresh memory. Used to model copying into never-touched memory.
    pub(crate) fn discard_pages(&self, extent: &Extent) -> Result<(), StoreError> {
        let page = self.inner.page_size.bytes();
        let mut pool = self.pool();
        sys::punch_hole(&self.inner.fd, extent.offset as u64, extent.length as u64)?;
        for p in extent.offset / page..(extent.offset + extent.length) / page {
            if pool.prefaulted[p] {
                pool.prefaulted.set(p, false);
                pool.prefaulted_count -= 1;
            }
        }
        Ok(())
    }

    pub fn free_extents(&self) -> Vec<(usize, usize)> {
        self.pool().extents.free_extents().collect()
    }
}

fn open_backing(id: u64, spec: &StoreSpec) -> Result<OwnedFd, StoreError> {
    let name = CString::new(format!("page-leap-{}-{}", spec.node.0, id)).expect("no nul");
    match (spec.backing, &spec.hugetlbfs_mount) {
        (Backing::SharedMemoryFile, _) => Ok(sys::memfd(&name, false)?),
        (Backing::HugePageFile, None) => Ok(sys::memfd(&name, true)?),
        (Backing::HugePageFile, Some(mount)) => Ok(hugetlbfs_file(mount)?),
    }
}

fn hugetlbfs_file(mount: &Path) -> io::Result<OwnedFd> {
    let file = tempfile::tempfile_in(mount)?;
    let fd = file.into_raw_fd();
    debug_assert!(fd >= 0);
    Ok(unsafe { OwnedFd::from_raw_fd(fd) })
}

/// A page-aligned range of a store.
#[derive(Clone, PartialEq, Eq)]
pub struct Extent {
    store: PhysicalStore,
    offset: usize,
    length: usize,
}

impl fmt::Debug for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Extent {{ store: {}, offset: {:#x}, length: {:#x} }}",
            self.store.id(),
            self.offset,
            self.length
        )
    }
}

impl Extent {
    pub fn store(&self) -> &PhysicalStore {
        &self.store
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn as_ptr(&self) -> *mut u8 {
        self.store.alias_ptr(self.offset)
    }

    /// A page-aligned piece of this extent.
    pub fn sub(&self, offset: usize, length: usize) -> Extent {
        let page = self.store.page_size().bytes();
        assert!(offset.is_multiple_of(page) && length.is_multiple_of(page) && length > 0);
        assert!(offset + length <= self.length);
        Extent {
            store: self.store.clone(),
            offset: self.offset + offset,
            length,
        }
    }

    /// Byte view through the store's alias mapping.
    ///
    /// # Safety
    /// No one may write the extent's pages while the slice is alive.
    pub unsafe fn as_slice(&self) -> &[u8] {
        std::slice::from_raw_parts(self.as_ptr(), self.length)
    }

    pub(crate) fn from_parts(store: PhysicalStore, offset: usize, length: usize) -> Extent {
        Extent { store, offset, length }
    }
}
