//! Process-wide write-fault hook and the registry it resolves addresses in.
//!
//! Everything reachable from [`handle_sigsegv`] is async-signal-safe: atomic
//! loads and stores, `mprotect`, `sched_yield` and `clock_gettime`. No
//! allocation, no locks.

use std::cell::UnsafeCell;
use std::mem::MaybeUninit;
use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicUsize, Ordering};
use std::sync::Mutex;

use super::job::JobShared;
use super::EngineError;

const MAX_JOBS: usize = 64;
const SEGV_ACCERR: libc::c_int = 2;

/// What the handler did with a fault.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultResolution {
    /// Not inside any active job; passed on to the previous handler.
    Foreign,
    /// The area was being copied. It is now dirty and writable again.
    MarkedDirty,
    /// The area was sealed or being remapped; the handler waited for the
    /// remap so the write lands on the destination.
    WaitedForRemap,
    /// The wait for a sealed area exceeded its bound; the area was marked
    /// dirty instead.
    SpinTimeoutDirty,
    /// Nothing to do; the write is simply retried.
    Retry,
}

struct Slot {
    job: AtomicPtr<JobShared>,
    readers: AtomicUsize,
}

#[allow(clippy::declare_interior_mutable_const)]
const EMPTY_SLOT: Slot = Slot {
    job: AtomicPtr::new(ptr::null_mut()),
    readers: AtomicUsize::new(0),
};

static SLOTS: [Slot; MAX_JOBS] = [EMPTY_SLOT; MAX_JOBS];
static REGISTER_LOCK: Mutex<()> = Mutex::new(());

/// Registration of a job's address range; unregisters on drop after every
/// in-flight handler has left the job.
pub(crate) struct Registration {
    slot: usize,
}

pub(crate) fn register(job: &JobShared) -> Result<Registration, EngineError> {
    let _guard = REGISTER_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let (start, end) = (job.base, job.base + job.length);
    let mut free = None;
    for (i, slot) in SLOTS.iter().enumerate() {
        let p = slot.job.load(Ordering::SeqCst);
        if p.is_null() {
            free.get_or_insert(i);
            continue;
        }
        let other = unsafe { &*p };
        if other.base < end && start < other.base + other.length {
            return Err(EngineError::RegionBusy);
        }
    }
    let slot = free.ok_or(EngineError::TooManyJobs(MAX_JOBS))?;
    SLOTS[slot]
        .job
        .store(job as *const JobShared as *mut JobShared, Ordering::SeqCst);
    Ok(Registration { slot })
}

impl Drop for Registration {
    fn drop(&mut self) {
        let slot = &SLOTS[self.slot];
        slot.job.store(ptr::null_mut(), Ordering::SeqCst);
        while slot.readers.load(Ordering::SeqCst) != 0 {
            crate::sys::yield_now();
        }
    }
}

/// Number of jobs currently registered.
pub fn active_jobs() -> usize {
    SLOTS.iter().filter(|s| !s.job.load(Ordering::SeqCst).is_null()).count()
}

/// Resolves a write fault at `addr` against the active jobs.
///
/// Called by the signal handler, and callable directly to drive the protocol
/// without a real fault.
pub fn on_write_fault(addr: usize) -> FaultResolution {
    for slot in SLOTS.iter() {
        let p = slot.job.load(Ordering::SeqCst);
        if p.is_null() {
            continue;
        }
        slot.readers.fetch_add(1, Ordering::SeqCst);
        if slot.job.load(Ordering::SeqCst) != p {
            slot.readers.fetch_sub(1, Ordering::SeqCst);
            continue;
        }
        let job = unsafe { &*p };
        let hit = addr >= job.base && addr < job.base + job.length;
        let resolution = hit.then(|| job.resolve_fault(addr - job.base));
        slot.readers.fetch_sub(1, Ordering::SeqCst);
        if let Some(r) = resolution {
            return r;
        }
    }
    FaultResolution::Foreign
}

struct SavedAction(UnsafeCell<MaybeUninit<libc::sigaction>>);

// Written only under INSTALL_LOCK while the handler is not installed.
unsafe impl Sync for SavedAction {}

static PREVIOUS: SavedAction = SavedAction(UnsafeCell::new(MaybeUninit::uninit()));
static INSTALLED: AtomicBool = AtomicBool::new(false);
static INSTALL_LOCK: Mutex<()> = Mutex::new(());

pub fn is_installed() -> bool {
    INSTALLED.load(Ordering::SeqCst)
}

/// Installs the write-fault handler for the whole process. Faults outside
/// active jobs are forwarded to whatever handler was installed before.
pub fn install_fault_handler() -> Result<(), EngineError> {
    let _guard = INSTALL_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    if INSTALLED.load(Ordering::SeqCst) {
        return Err(EngineError::HandlerAlreadyInstalled);
    }
    unsafe {
        let mut action: libc::sigaction = std::mem::zeroed();
        action.sa_sigaction = handle_sigsegv as *const () as usize;
        action.sa_flags = libc::SA_SIGINFO | libc::SA_ONSTACK;
        libc::sigemptyset(&mut action.sa_mask);
        let previous = (*PREVIOUS.0.get()).as_mut_ptr();
        if libc::sigaction(libc::SIGSEGV, &action, previous) != 0 {
            return Err(EngineError::Os(std::io::Error::last_os_error()));
        }
    }
    INSTALLED.store(true, Ordering::SeqCst);
    Ok(())
}

/// Installs the handler unless it already is.
pub fn ensure_fault_handler() -> Result<(), EngineError> {
    match install_fault_handler() {
        Err(EngineError::HandlerAlreadyInstalled) => Ok(()),
        other => other,
    }
}

/// Restores the previous handler. Refused while any job is in flight.
pub fn uninstall_fault_handler() -> Result<(), EngineError> {
    let _guard = INSTALL_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    if !INSTALLED.load(Ordering::SeqCst) {
        return Err(EngineError::HandlerNotInstalled);
    }
    let jobs = active_jobs();
    if jobs > 0 {
        return Err(EngineError::JobsInFlight(jobs));
    }
    unsafe {
        let previous = (*PREVIOUS.0.get()).as_ptr();
        if libc::sigaction(libc::SIGSEGV, previous, ptr::null_mut()) != 0 {
            return Err(EngineError::Os(std::io::Error::last_os_error()));
        }
    }
    INSTALLED.store(false, Ordering::SeqCst);
    Ok(())
}

extern "C" fn handle_sigsegv(sig: libc::c_int, info: *mut libc::siginfo_t, ctx: *mut libc::c_void) {
    unsafe {
        let errno = *libc::__errno_location();
        let addr = (*info).si_addr() as usize;
        let ours = (*info).si_code == SEGV_ACCERR && on_write_fault(addr) != FaultResolution::Foreign;
        *libc::__errno_location() = errno;
        if !ours {
            forward(sig, info, ctx);
        }
    }
}

unsafe fn forward(sig: libc::c_int, info: *mut libc::siginfo_t, ctx: *mut libc::c_void) {
    let previous = (*PREVIOUS.0.get()).as_ptr();
    let handler = (*previous).sa_sigaction;
    if handler == libc::SIG_DFL || handler == libc::SIG_IGN {
        // Reinstate the default action; the faulting access re-executes and
        // takes it.
        libc::sigaction(sig, previous, ptr::null_mut());
        return;
    }
    if (*previous).sa_flags & libc::SA_SIGINFO != 0 {
        let f: extern "C" fn(libc::c_int, *mut libc::siginfo_t, *mut libc::c_void) = std::mem::transmute(handler);
        f(sig, info, ctx);
    } else {
        let f: extern "C" fn(libc::c_int) = std::mem::transmute(handler);
        f(sig);
    }
}
