//! Migrate while four threads write into the region, then check every
//! write against the journal.

use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;

use page_leap::leap_engine::MIB;
use page_leap::workload::{run_burst, BurstSpec};
use page_leap::{
    detect_topology, ensure_fault_handler, start_migration, MigrationOptions, NodeId, PageSize, PhysicalStore,
    StoreSpec, VirtualRegion,
};

fn main() -> page_leap::Result<()> {
    ensure_fault_handler()?;
    let topo = detect_topology(true);
    let len = 32 * MIB;
    let src = PhysicalStore::create(&topo, StoreSpec::new(NodeId(0), PageSize::Small, len))?;
    let dst = PhysicalStore::create(&topo, StoreSpec::new(NodeId(1), PageSize::Small, len))?;
    let region = VirtualRegion::backed_by(&src, len, true)?;
    let before = region.snapshot();

    let burst = BurstSpec::skewed(200_000.0, 0.75, 0..4 * MIB)
        .threads(4)
        .journaled(true)
        .seed(3);
    let stop = AtomicBool::new(false);
    let (report, writes) = thread::scope(|s| -> page_leap::Result<_> {
        let writers = s.spawn(|| run_burst(&region, &burst, &stop));
        let job = start_migration(&region, &dst, MigrationOptions::default().initial_area(MIB))?;
        let report = job.wait();
        stop.store(true, Ordering::SeqCst);
        Ok((report, writers.join().expect("writer thread")?))
    })?;

    println!("{:?} after {:?}", report.status, report.stats.elapsed);
    println!(
        "{} writes at {:.0}/s, {} retries, {} splits, {} extra bytes",
        writes.writes,
        writes.sample.achieved,
        report.stats.retries,
        report.stats.areas_split,
        report.stats.bytes_copied_extra
    );
    for a in report.final_areas.iter().filter(|a| a.retries > 0).take(8) {
        println!(
            "  retried area +{:#x} len {:#x} ({} retries)",
            a.voffset, a.length, a.retries
        );
    }
    let journal = writes.journal.expect("journaled burst");
    match journal.verify(&before, &region.snapshot()) {
        Ok(()) => println!("all {} writes survived", journal.len()),
        Err(e) => println!("lost write: {e}"),
    }
    Ok(())
}
