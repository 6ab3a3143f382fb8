//! Competitors and optima for the migration engine: plain copies into fresh
//! or pooled memory, the kernel's explicit page-move call, and an observer of
//! the kernel's automatic balancing.

use std::collections::BTreeMap;
use std::io;
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::SmallRng;
use rand::{RngCore, SeedableRng};
use thiserror::Error;

use crate::mem_file::{Extent, PageSize, PhysicalStore, StoreError};
use crate::numa_topo::{self, NodeId, TopoError, Topology};
use crate::sys;
use crate::vmap::VirtualRegion;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("poll interval must be positive")]
    InvalidInterval,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Topology(#[from] TopoError),
    #[error("os error: {0}")]
    Os(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaselineMethod {
    RawCopyFresh,
    RawCopyPooled,
    OsMovePages,
    AutoBalanceObserve,
}

impl BaselineMethod {
    pub fn label(self) -> &'static str {
        match self {
            BaselineMethod::RawCopyFresh => "raw-copy-fresh",
            BaselineMethod::RawCopyPooled => "raw-copy-pooled",
            BaselineMethod::OsMovePages => "os-move-pages",
            BaselineMethod::AutoBalanceObserve => "auto-balance-observe",
        }
    }
}

/// Per-page result. Negative kernel statuses are kept as they were returned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PageOutcome {
    Moved,
    /// The page is resident on another node.
    NotMoved {
        node: i32,
    },
    /// Negative errno reported for the page.
    Failed(i32),
}

impl PageOutcome {
    fn from_status(status: i32, dst: i32) -> Self {
        match status {
            s if s == dst => PageOutcome::Moved,
            s if s >= 0 => PageOutcome::NotMoved { node: s },
            s => PageOutcome::Failed(s),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub method: BaselineMethod,
    pub elapsed: Duration,
    pub outcomes: Vec<PageOutcome>,
    /// Why the method could not run on this host.
    pub skipped: Option<String>,
    pub timed_out: bool,
}

impl BaselineResult {
    fn skipped(method: BaselineMethod, reason: impl Into<String>) -> Self {
        BaselineResult {
            method,
            elapsed: Duration::ZERO,
            outcomes: Vec::new(),
            skipped: Some(reason.into()),
            timed_out: false,
        }
    }

    pub fn is_skipped(&self) -> bool {
        self.skipped.is_some()
    }

    pub fn moved(&self) -> usize {
        self.outcomes.iter().filter(|o| **o == PageOutcome::Moved).count()
    }

    pub fn histogram(&self) -> BTreeMap<PageOutcome, usize> {
        let mut h = BTreeMap::new();
        for o in &self.outcomes {
            *h.entry(*o).or_insert(0) += 1;
        }
        h
    }
}

/// A contiguous, page-aligned span of this process's memory.
pub trait MemoryRange {
    fn base(&self) -> usize;
    fn len(&self) -> usize;
    fn page_bytes(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn page_addresses(&self) -> Vec<usize> {
        (self.base()..self.base() + self.len())
            .step_by(self.page_bytes())
            .collect()
    }
}

impl MemoryRange for VirtualRegion {
    fn base(&self) -> usize {
        VirtualRegion::base(self)
    }
    fn len(&self) -> usize {
        VirtualRegion::len(self)
    }
    fn page_bytes(&self) -> usize {
        self.page_size().bytes()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnonKind {
    Small,
    /// Small pages with transparent huge pages requested.
    TransparentHuge,
    /// Reserved 2 MiB pages.
    HugeTlb,
}

/// Private anonymous memory. Unlike file-backed regions the kernel may move
/// or auto-balance it.
pub struct AnonRegion {
    ptr: *mut u8,
    len: usize,
    kind: AnonKind,
}

unsafe impl Send for AnonRegion {}
unsafe impl Sync for AnonRegion {}

impl AnonRegion {
    pub fn new(len: usize, kind: AnonKind) -> io::Result<Self> {
        if len == 0 {
            return Ok(AnonRegion {
                ptr: std::ptr::NonNull::dangling().as_ptr(),
                len,
                kind,
            });
        }
        let ptr = sys::map_anonymous(len, kind == AnonKind::HugeTlb)?;
        if kind == AnonKind::TransparentHuge {
            // Best effort; THP may be disabled system-wide.
            let _ = sys::madvise(ptr, len, libc::MADV_HUGEPAGE);
        }
        Ok(AnonRegion { ptr, len, kind })
    }

    pub fn kind(&self) -> AnonKind {
        self.kind
    }

    pub fn as_ptr(&self) -> *mut u8 {
        self.ptr
    }

    /// Binds future faults of the range to a physical node.
    pub fn bind(&self, node: u32) -> io::Result<()> {
        if self.len == 0 {
            return Ok(());
        }
        sys::mbind(self.ptr, self.len, node)
    }

    /// Writes seeded random bytes over the whole range, faulting it in.
    pub fn fill_random(&self, seed: u64) {
        let mut rng = SmallRng::seed_from_u64(seed);
        rng.fill_bytes(unsafe { self.as_mut_slice() });
    }

    /// # Safety
    /// No one may write the range while the slice is alive.
    pub unsafe fn as_slice(&self) -> &[u8] {
        std::slice::from_raw_parts(self.ptr, self.len)
    }

    /// # Safety
    /// The caller must be the only accessor while the slice is alive.
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn as_mut_slice(&self) -> &mut [u8] {
        std::slice::from_raw_parts_mut(self.ptr, self.len)
    }
}

impl MemoryRange for AnonRegion {
    fn base(&self) -> usize {
        self.ptr as usize
    }
    fn len(&self) -> usize {
        self.len
    }
    fn page_bytes(&self) -> usize {
        match self.kind {
            AnonKind::HugeTlb => PageSize::Huge.bytes(),
            _ => PageSize::Small.bytes(),
        }
    }
}

impl Drop for AnonRegion {
    fn drop(&mut self) {
        if self.len > 0 {
            let _ = sys::unmap(self.ptr, self.len);
        }
    }
}

/// Copies `range` into a new extent of `dst` without any remapping. Fresh
/// copies first drop the extent's physical pages so every destination page
/// faults during the copy; pooled copies pre-fault them beforehand. Only the
/// copy itself is timed. The caller owns the returned extent.
pub fn raw_copy<R: MemoryRange + ?Sized>(
    range: &R,
    dst: &PhysicalStore,
    pooled: bool,
) -> Result<(BaselineResult, Option<Extent>), BaselineError> {
    raw_copy_areas(range, dst, pooled, range.len().max(1))
}

/// Like [`raw_copy`], issuing one copy per `area` bytes.
pub fn raw_copy_areas<R: MemoryRange + ?Sized>(
    range: &R,
    dst: &PhysicalStore,
    pooled: bool,
    area: usize,
) -> Result<(BaselineResult, Option<Extent>), BaselineError> {
    let method = if pooled {
        BaselineMethod::RawCopyPooled
    } else {
        BaselineMethod::RawCopyFresh
    };
    let pages = range.len() / range.page_bytes();
    if range.is_empty() {
        return Ok((
            BaselineResult {
                method,
                elapsed: Duration::ZERO,
                outcomes: Vec::new(),
                skipped: None,
                timed_out: false,
            },
            None,
        ));
    }
    let extent = dst.allocate_extent(range.len(), pooled)?;
    if !pooled {
        dst.discard_pages(&extent)?;
    }
    let src = range.base() as *const u8;
    let start = Instant::now();
    let mut off = 0;
    while off < range.len() {
        let n = area.min(range.len() - off);
        unsafe { std::ptr::copy_nonoverlapping(src.add(off), extent.as_ptr().add(off), n) };
        off += n;
    }
    let elapsed = start.elapsed();
    Ok((
        BaselineResult {
            method,
            elapsed,
            outcomes: vec![PageOutcome::Moved; pages],
            skipped: None,
            timed_out: false,
        },
        Some(extent),
    ))
}

/// The kernel's explicit page-move call towards `dst` of `topology`. Skipped
/// on simulated topologies, where both logical nodes share one physical node.
pub fn os_move_pages<R: MemoryRange + ?Sized>(
    range: &R,
    topology: &Topology,
    dst: NodeId,
) -> Result<BaselineResult, BaselineError> {
    if !topology.contains(dst) {
        return Err(TopoError::UnknownNode(dst).into());
    }
    match topology.physical_node(dst) {
        Some(node) => move_pages_to(range, node.0),
        None => Ok(BaselineResult::skipped(
            BaselineMethod::OsMovePages,
            "simulated topology: no physical node to move to",
        )),
    }
}

/// Moves every page of `range` to physical node `node` in a single call and
/// records the per-page statuses the kernel returns.
pub fn move_pages_to<R: MemoryRange + ?Sized>(range: &R, node: u32) -> Result<BaselineResult, BaselineError> {
    let pages = range.page_addresses();
    let nodes = vec![node as libc::c_int; pages.len()];
    let mut status = vec![0; pages.len()];
    let start = Instant::now();
    sys::move_pages(&pages, Some(&nodes), &mut status, sys::MPOL_MF_MOVE)?;
    let elapsed = start.elapsed();
    Ok(BaselineResult {
        method: BaselineMethod::OsMovePages,
        elapsed,
        outcomes: status
            .iter()
            .map(|&s| PageOutcome::from_status(s, node as i32))
            .collect(),
        skipped: None,
        timed_out: false,
    })
}

/// Polls page locations every `poll` until all pages of `range` sit on `dst`
/// or `timeout` passes. The elapsed time is that of the first successful
/// poll tick.
pub fn observe_autobalance<R: MemoryRange + ?Sized>(
    range: &R,
    topology: &Topology,
    dst: NodeId,
    poll: Duration,
    timeout: Duration,
) -> Result<BaselineResult, BaselineError> {
    if poll.is_zero() {
        return Err(BaselineError::InvalidInterval);
    }
    if !topology.contains(dst) {
        return Err(TopoError::UnknownNode(dst).into());
    }
    let method = BaselineMethod::AutoBalanceObserve;
    let Some(node) = topology.physical_node(dst) else {
        return Ok(BaselineResult::skipped(method, "simulated topology"));
    };
    if numa_topo::numa_balancing_enabled() != Some(true) {
        return Ok(BaselineResult::skipped(method, "kernel.numa_balancing is not enabled"));
    }
    observe_until(range, node.0 as i32, poll, timeout)
}

fn observe_until<R: MemoryRange + ?Sized>(
    range: &R,
    node: i32,
    poll: Duration,
    timeout: Duration,
) -> Result<BaselineResult, BaselineError> {
    let pages = range.page_addresses();
    let mut ticks = 0u32;
    loop {
        let status = numa_topo::query_page_nodes(&pages)?;
        let elapsed = poll * ticks;
        let done = status.iter().all(|&s| s == node);
        if done || elapsed >= timeout {
            return Ok(BaselineResult {
                method: BaselineMethod::AutoBalanceObserve,
                elapsed,
                outcomes: status.iter().map(|&s| PageOutcome::from_status(s, node)).collect(),
                skipped: None,
                timed_out: !done,
            });
        }
        thread::sleep(poll);
        ticks += 1;
    }
}
