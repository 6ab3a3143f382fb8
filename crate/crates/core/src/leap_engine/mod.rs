//! Asynchronous area-wise migration of a [`VirtualRegion`] onto a destination
//! [`PhysicalStore`].
//!
//! Each area is write-protected, copied, sealed and then remapped in a single
//! map call. Writes that hit an area while it is being copied mark it dirty;
//! dirty areas are split and retried from a FIFO queue until everything is
//! remapped or the timeout passes.

mod area;
mod fault;
mod job;
mod split;

use std::fmt;
use std::io;
use std::sync::atomic::Ordering;
use std::sync::{Arc, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use crate::mem_file::{PhysicalStore, StoreError};
use crate::numa_topo::{NodeId, TopoError, Topology};
use crate::vmap::{VirtualRegion, VmapError};

pub use area::{is_legal, AreaCell, AreaState, TransitionError};
pub use fault::{
    active_jobs, ensure_fault_handler, install_fault_handler, is_installed, on_write_fault, uninstall_fault_handler,
    FaultResolution,
};
pub use job::AreaOutcome;
pub use split::{child_containing, child_pages, initial_areas, split_area, Area};

use job::{JobShared, Worker};

pub const MIB: usize = 1024 * 1024;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("fault handler is not installed")]
    HandlerNotInstalled,
    #[error("fault handler is already installed")]
    HandlerAlreadyInstalled,
    #[error("{0} migration job(s) still in flight")]
    JobsInFlight(usize),
    #[error("region overlaps an active migration job")]
    RegionBusy,
    #[error("at most {0} concurrent jobs are supported")]
    TooManyJobs(usize),
    #[error("region is not fully mapped")]
    RegionNotMapped,
    #[error("destination page size {dst:?} differs from region page size {region:?}")]
    PageSizeMismatch {
        region: crate::mem_file::PageSize,
        dst: crate::mem_file::PageSize,
    },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("destination pool exhausted: {0}")]
    DestinationExhausted(StoreError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Vmap(#[from] VmapError),
    #[error(transparent)]
    Topology(#[from] TopoError),
    #[error("os error: {0}")]
    Os(io::Error),
}

type Hook = Arc<dyn Fn(&VirtualRegion, Area) + Send + Sync>;

/// Callbacks run by the worker at fixed protocol points, for driving exact
/// interleavings in tests and demos.
#[derive(Clone, Default)]
pub struct ProtocolHooks {
    /// After the bytes of an area are copied, before the seal attempt.
    pub after_copy: Option<Hook>,
    /// After a successful seal, before the remap.
    pub after_seal: Option<Hook>,
}

impl fmt::Debug for ProtocolHooks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProtocolHooks")
            .field("after_copy", &self.after_copy.is_some())
            .field("after_seal", &self.after_seal.is_some())
            .finish()
    }
}

#[derive(Clone, Debug)]
pub struct MigrationOptions {
    pub initial_area: usize,
    pub reduction_factor: usize,
    /// `Duration::MAX` disables the timeout.
    pub timeout: Duration,
    /// Destination extents are pre-faulted before the copy, and the job is
    /// refused unless the destination can hold the whole region.
    pub dst_prefault_required: bool,
    /// How long a write to a sealed area waits for the remap before it marks
    /// the area dirty instead.
    pub handler_spin_bound: Duration,
    /// Core the worker pins itself to.
    pub worker_core: Option<usize>,
    pub hooks: ProtocolHooks,
}

impl Default for MigrationOptions {
    fn default() -> Self {
        MigrationOptions {
            initial_area: 16 * MIB,
            reduction_factor: 2,
            timeout: Duration::from_secs(10),
            dst_prefault_required: true,
            handler_spin_bound: Duration::from_millis(10),
            worker_core: None,
            hooks: ProtocolHooks::default(),
        }
    }
}

impl MigrationOptions {
    pub fn initial_area(mut self, bytes: usize) -> Self {
        self.initial_area = bytes;
        self
    }

    pub fn reduction_factor(mut self, factor: usize) -> Self {
        self.reduction_factor = factor;
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn no_timeout(self) -> Self {
        self.timeout(Duration::MAX)
    }

    pub fn hooks(mut self, hooks: ProtocolHooks) -> Self {
        self.hooks = hooks;
        self
    }

    /// Pins the worker to the first core of `node`.
    pub fn pin_to(mut self, topology: &Topology, node: NodeId) -> Result<Self, TopoError> {
        self.worker_core = topology.cores_of(node)?.first().copied();
        Ok(self)
    }

    fn validate(&self, page: usize) -> Result<(), EngineError> {
        if self.reduction_factor < 2 {
            return Err(EngineError::InvalidOptions(format!(
                "reduction factor {} is below 2",
                self.reduction_factor
            )));
        }
        if self.initial_area < page || !self.initial_area.is_multiple_of(page) {
            return Err(EngineError::InvalidOptions(format!(
                "initial area {} is not a positive multiple of the {page} byte page",
                self.initial_area
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MigrationStatus {
    Complete,
    TimedOut,
    /// The worker hit an unrecoverable error; see [`MigrationReport::failure`].
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PageStatus {
    Migrated,
    Pending,
}

/// A leaf of the split forest at the end of the job.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AreaSummary {
    pub voffset: usize,
    pub length: usize,
    pub retries: u32,
    pub migrated: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MigrationStats {
    pub bytes_copied_total: u64,
    /// Bytes copied by retried attempts.
    pub bytes_copied_extra: u64,
    /// Failed attempts.
    pub retries: u64,
    pub areas_split: u64,
    /// Writes that turned an area dirty.
    pub dirty_faults: u64,
    /// Writes that waited for a remap and then landed on the destination.
    pub waited_faults: u64,
    /// Writes to sealed areas that gave up waiting and marked them dirty.
    pub spin_timeouts: u64,
    pub initial_areas: usize,
    pub elapsed: Duration,
}

#[derive(Clone, Debug)]
pub struct MigrationReport {
    pub status: MigrationStatus,
    pub failure: Option<String>,
    pub pages_migrated: usize,
    pub pages_pending: usize,
    pub page_status: Vec<PageStatus>,
    /// Final areas in address order.
    pub final_areas: Vec<AreaSummary>,
    pub stats: MigrationStats,
}

/// Live counters of a running job.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Progress {
    pub pages_migrated: usize,
    pub pages_total: usize,
    pub retries: u64,
}

/// Handle of a running job. Dropping it stops the job and waits for the
/// worker to restore the region.
pub struct JobHandle {
    shared: Arc<JobShared>,
    pages_total: usize,
    worker: Option<JoinHandle<()>>,
}

impl fmt::Debug for JobHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JobHandle").field("progress", &self.progress()).finish()
    }
}

/// Starts migrating `region` onto `dst` on a dedicated worker thread and
/// returns immediately.
pub fn start_migration(
    region: &VirtualRegion,
    dst: &PhysicalStore,
    options: MigrationOptions,
) -> Result<JobHandle, EngineError> {
    if !fault::is_installed() {
        return Err(EngineError::HandlerNotInstalled);
    }
    let page = region.page_size().bytes();
    if dst.page_size() != region.page_size() {
        return Err(EngineError::PageSizeMismatch {
            region: region.page_size(),
            dst: dst.page_size(),
        });
    }
    options.validate(page)?;
    if !region.is_fully_mapped() {
        return Err(EngineError::RegionNotMapped);
    }
    let free = dst.pool_stats().free_bytes;
    if options.dst_prefault_required && free < region.len() {
        return Err(EngineError::DestinationExhausted(StoreError::OutOfCapacity {
            requested: region.len(),
            largest_free: free,
        }));
    }

    let shared = Arc::new(JobShared::new(region, &options));
    let core = options.worker_core;
    let worker = Worker::new(Arc::clone(&shared), region.clone(), dst.clone(), options)?;
    let handle = std::thread::Builder::new()
        .name("page-leap-worker".into())
        .spawn(move || {
            if let Some(core) = core {
                if let Err(e) = crate::sys::set_affinity(core) {
                    log::warn!("could not pin worker to core {core}: {e}");
                }
            }
            let shared = Arc::clone(&worker.shared);
            let report = worker.run();
            *lock(&shared) = Some(report);
            shared.done.notify_all();
        })
        .map_err(EngineError::Os)?;
    Ok(JobHandle {
        shared,
        pages_total: region.page_count(),
        worker: Some(handle),
    })
}

fn lock(shared: &JobShared) -> MutexGuard<'_, Option<MigrationReport>> {
    shared.report.lock().unwrap_or_else(|e| e.into_inner())
}

impl JobHandle {
    /// Blocks until the job ends.
    pub fn wait(mut self) -> MigrationReport {
        self.join();
        lock(&self.shared).clone().expect("worker publishes a report")
    }

    /// Waits at most `poll` for the job to end.
    pub fn wait_timeout(&self, poll: Duration) -> Option<MigrationReport> {
        let guard = lock(&self.shared);
        let (guard, _) = self
            .shared
            .done
            .wait_timeout_while(guard, poll, |r| r.is_none())
            .unwrap_or_else(|e| e.into_inner());
        guard.clone()
    }

    pub fn is_finished(&self) -> bool {
        lock(&self.shared).is_some()
    }

    pub fn progress(&self) -> Progress {
        let c = &self.shared.counters;
        Progress {
            pages_migrated: c.pages_migrated.load(Ordering::Relaxed),
            pages_total: self.pages_total,
            retries: c.retries.load(Ordering::Relaxed),
        }
    }

    /// Asks the worker to stop after its current area. The job then reports
    /// `TimedOut`.
    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }

    fn join(&mut self) {
        if let Some(w) = self.worker.take() {
            if w.join().is_err() {
                log::error!("migration worker panicked");
            }
        }
    }
}

impl Drop for JobHandle {
    fn drop(&mut self) {
        if self.worker.is_some() {
            self.stop();
            self.join();
        }
    }
}

/// Starts a migration and waits for its report.
pub fn migrate_blocking(
    region: &VirtualRegion,
    dst: &PhysicalStore,
    options: MigrationOptions,
) -> Result<MigrationReport, EngineError> {
    Ok(start_migration(region, dst, options)?.wait())
}
