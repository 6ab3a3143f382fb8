//! Handler installation is process-wide, so these tests serialize on a lock
//! and live in their own test binary.

use std::os::unix::process::ExitStatusExt;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use page_leap::leap_engine::{
    self, install_fault_handler, on_write_fault, start_migration, uninstall_fault_handler, EngineError,
    FaultResolution, MigrationOptions, MigrationStatus, ProtocolHooks,
};
use page_leap::sys::{self, Protection};
use page_leap::{detect_topology, NodeId, PageSize, PhysicalStore, StoreSpec, VirtualRegion};

const P: usize = 4096;
static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn region(pages: usize) -> (VirtualRegion, PhysicalStore) {
    let topo = detect_topology(false);
    let src = PhysicalStore::create(&topo, StoreSpec::new(NodeId(0), PageSize::Small, pages * P)).unwrap();
    let dst = PhysicalStore::create(&topo, StoreSpec::new(NodeId(1), PageSize::Small, pages * P)).unwrap();
    (VirtualRegion::backed_by(&src, pages * P, true).unwrap(), dst)
}

#[test]
fn lifecycle() {
    let _g = serial();
    let _ = uninstall_fault_handler();
    let (r, dst) = region(4);
    assert!(matches!(
        start_migration(&r, &dst, MigrationOptions::default()),
        Err(EngineError::HandlerNotInstalled)
    ));
    install_fault_handler().unwrap();
    assert!(matches!(
        install_fault_handler(),
        Err(EngineError::HandlerAlreadyInstalled)
    ));

    let gate = Arc::new(AtomicUsize::new(0));
    let g = Arc::clone(&gate);
    let hooks = ProtocolHooks {
        after_copy: Some(Arc::new(move |_: &VirtualRegion, _| {
            if g.compare_exchange(0, 1, Ordering::SeqCst, Ordering::SeqCst).is_err() {
                return;
            }
            while g.load(Ordering::SeqCst) != 2 {
                std::thread::yield_now();
            }
        })),
        after_seal: None,
    };
    let job = start_migration(&r, &dst, MigrationOptions::default().initial_area(4 * P).hooks(hooks)).unwrap();
    while gate.load(Ordering::SeqCst) != 1 {
        std::thread::yield_now();
    }
    assert!(matches!(uninstall_fault_handler(), Err(EngineError::JobsInFlight(1))));
    // A real write into the copying area goes through the installed handler.
    r.store_u64(P, 77);
    gate.store(2, Ordering::SeqCst);
    let report = job.wait();
    assert_eq!(report.status, MigrationStatus::Complete);
    assert_eq!(report.stats.dirty_faults, 1);
    assert_eq!(r.load_u64(P), 77);

    assert_eq!(leap_engine::active_jobs(), 0);
    uninstall_fault_handler().unwrap();
    assert!(matches!(
        uninstall_fault_handler(),
        Err(EngineError::HandlerNotInstalled)
    ));
}

#[test]
fn direct_resolution_outside_jobs_is_foreign() {
    let _g = serial();
    let (r, _) = region(1);
    assert_eq!(on_write_fault(r.base()), FaultResolution::Foreign);
    assert_eq!(on_write_fault(0), FaultResolution::Foreign);
}

static CHAINED: AtomicUsize = AtomicUsize::new(0);

extern "C" fn prior(_: libc::c_int, info: *mut libc::siginfo_t, _: *mut libc::c_void) {
    let addr = unsafe { (*info).si_addr() } as usize;
    CHAINED.fetch_add(1, Ordering::SeqCst);
    sys::protect_raw(addr & !(P - 1), P, Protection::ReadWrite);
}

#[test]
fn foreign_faults_reach_the_previous_handler() {
    let _g = serial();
    let _ = uninstall_fault_handler();
    let old = unsafe {
        let mut action: libc::sigaction = std::mem::zeroed();
        action.sa_sigaction = prior as *const () as usize;
        action.sa_flags = libc::SA_SIGINFO;
        let mut old: libc::sigaction = std::mem::zeroed();
        assert_eq!(libc::sigaction(libc::SIGSEGV, &action, &mut old), 0);
        old
    };
    install_fault_handler().unwrap();
    let page = sys::map_anonymous(P, false).unwrap();
    sys::protect(page, P, Protection::ReadOnly).unwrap();
    unsafe { page.write_volatile(5) };
    assert_eq!(CHAINED.load(Ordering::SeqCst), 1);
    assert_eq!(unsafe { page.read_volatile() }, 5);
    uninstall_fault_handler().unwrap();
    unsafe { libc::sigaction(libc::SIGSEGV, &old, std::ptr::null_mut()) };
    sys::unmap(page, P).unwrap();
}

const CHILD_ENV: &str = "PAGE_LEAP_FOREIGN_FAULT_CHILD";

#[test]
fn foreign_fault_child() {
    if std::env::var_os(CHILD_ENV).is_none() {
        return;
    }
    leap_engine::ensure_fault_handler().unwrap();
    let page = sys::map_anonymous(P, false).unwrap();
    sys::protect(page, P, Protection::ReadOnly).unwrap();
    unsafe { page.write_volatile(1) };
    unreachable!("write to a read-only page outside any job succeeded");
}

#[test]
fn foreign_fault_crashes_with_sigsegv() {
    let status = Command::new(std::env::current_exe().unwrap())
        .args(["--exact", "foreign_fault_child", "--nocapture", "--test-threads=1"])
        .env(CHILD_ENV, "1")
        .output()
        .unwrap()
        .status;
    assert_eq!(status.signal(), Some(libc::SIGSEGV), "{status:?}");
}
