use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use page_leap::leap_engine::{self, start_migration, MigrationOptions, MigrationStatus, ProtocolHooks};
use page_leap::workload::{run_burst, BurstSpec};
use page_leap::{detect_topology, NodeId, PageSize, PhysicalStore, StoreSpec, VirtualRegion};

const MIB: usize = 1 << 20;

struct Run {
    status: MigrationStatus,
    writes: u64,
    retries: u64,
}

fn migrate_under_burst(len: usize, burst: BurstSpec, options: MigrationOptions) -> Run {
    leap_engine::ensure_fault_handler().unwrap();
    let topo = detect_topology(false);
    let src = PhysicalStore::create(&topo, StoreSpec::new(NodeId(0), PageSize::Small, len)).unwrap();
    let dst = PhysicalStore::create(&topo, StoreSpec::new(NodeId(1), PageSize::Small, len)).unwrap();
    dst.warm_pool();
    let region = VirtualRegion::backed_by(&src, len, true).unwrap();
    for off in (0..len).step_by(8) {
        region.store_u64(off, off as u64);
    }
    let snapshot = region.snapshot();
    let stop = AtomicBool::new(false);
    let (report, outcome) = thread::scope(|s| {
        let writer = s.spawn(|| run_burst(&region, &burst, &stop).unwrap());
        thread::sleep(Duration::from_millis(2));
        let report = start_migration(&region, &dst, options).unwrap().wait();
        stop.store(true, Ordering::SeqCst);
        (report, writer.join().unwrap())
    });
    let journal = outcome.journal.unwrap();
    assert_eq!(journal.len() as u64, outcome.writes);
    journal.verify(&snapshot, &region.snapshot()).unwrap();
    assert_eq!(report.pages_migrated + report.pages_pending, region.page_count());
    Run {
        status: report.status,
        writes: outcome.writes,
        retries: report.stats.retries,
    }
}

#[test]
fn four_writers_during_migration() {
    for seed in 0..5 {
        let burst = BurstSpec::uniform(100_000.0).threads(4).journaled(true).seed(seed);
        let run = migrate_under_burst(
            16 * MIB,
            burst,
            MigrationOptions::default().initial_area(MIB).no_timeout(),
        );
        assert_eq!(run.status, MigrationStatus::Complete);
        assert!(run.writes > 0);
    }
}

#[test]
fn unpaced_writers_force_page_sized_retries() {
    let burst = BurstSpec::uniform(f64::INFINITY)
        .threads(2)
        .journaled(true)
        .seed(9)
        .target(0..64 * 1024);
    // Hand the CPU to the writers while each copy is in flight.
    let hooks = ProtocolHooks {
        after_copy: Some(Arc::new(|_: &VirtualRegion, _| {
            thread::sleep(Duration::from_micros(200))
        })),
        after_seal: None,
    };
    let options = MigrationOptions::default()
        .initial_area(MIB)
        .timeout(Duration::from_millis(500))
        .hooks(hooks);
    let run = migrate_under_burst(4 * MIB, burst, options);
    assert!(run.retries > 0);
}

#[test]
fn tiny_spin_bound_still_loses_nothing() {
    let burst = BurstSpec::uniform(200_000.0).threads(3).journaled(true).seed(4);
    let mut options = MigrationOptions::default().initial_area(256 * 1024).no_timeout();
    options.handler_spin_bound = Duration::ZERO;
    let run = migrate_under_burst(8 * MIB, burst, options);
    assert_eq!(run.status, MigrationStatus::Complete);
}
