//! Migrate an idle region between nodes and print the report.

use page_leap::leap_engine::MIB;
use page_leap::{
    detect_topology, ensure_fault_handler, migrate_blocking, MigrationOptions, NodeId, PageSize, PhysicalStore,
    StoreSpec, VirtualRegion,
};

fn main() -> page_leap::Result<()> {
    ensure_fault_handler()?;
    let topo = detect_topology(true);
    let len = 64 * MIB;
    let src = PhysicalStore::create(&topo, StoreSpec::new(NodeId(0), PageSize::Small, len))?;
    let dst = PhysicalStore::create(&topo, StoreSpec::new(NodeId(1), PageSize::Small, len))?;
    dst.warm_pool();

    let region = VirtualRegion::backed_by(&src, len, true)?;
    region.write_bytes(12345, b"still here");

    let report = migrate_blocking(&region, &dst, MigrationOptions::default().initial_area(4 * MIB))?;
    println!(
        "{:?}: {} pages moved in {:?}",
        report.status, report.pages_migrated, report.stats.elapsed
    );
    println!(
        "copied {} bytes, {} extra, {} areas",
        report.stats.bytes_copied_total,
        report.stats.bytes_copied_extra,
        report.final_areas.len()
    );

    let mut buf = [0u8; 10];
    region.read_bytes(12345, &mut buf);
    println!("{}", String::from_utf8_lossy(&buf));
    println!("source pool {:?}", src.pool_stats());
    Ok(())
}
