//! Generate a columnar lineitem table and run the pricing summary and
//! revenue forecast scans before and after moving it.

use page_leap::leap_engine::MIB;
use page_leap::workload::{date, q1_scan, q6_scan, LineitemTable, Q6Params, Q1_DEFAULT_CUTOFF};
use page_leap::{
    detect_topology, ensure_fault_handler, migrate_blocking, MigrationOptions, NodeId, PageSize, PhysicalStore,
    StoreSpec, VirtualRegion,
};

fn main() -> page_leap::Result<()> {
    ensure_fault_handler()?;
    let topo = detect_topology(true);
    let len = 16 * MIB;
    let src = PhysicalStore::create(&topo, StoreSpec::new(NodeId(0), PageSize::Small, len))?;
    let dst = PhysicalStore::create(&topo, StoreSpec::new(NodeId(1), PageSize::Small, len))?;
    let region = VirtualRegion::backed_by(&src, len, true)?;
    let table = LineitemTable::generate(&region, len, 7)?;
    println!("{} rows", table.rows());
    let (y, m, d) = Q1_DEFAULT_CUTOFF;
    let cutoff = date(y, m, d);

    let q1 = q1_scan(&table, cutoff);
    for ((flag, status), g) in &q1 {
        println!(
            "  {}{} count {:>7} sum_qty {:>12.2} avg_price {:>10.2} sum_charge {:>18.6}",
            *flag as char,
            *status as char,
            g.count,
            g.sum_qty(),
            g.avg_price(),
            g.sum_charge()
        );
    }
    let q6 = q6_scan(&table, &Q6Params::default());
    println!("revenue {:.4}", q6 as f64 / 1e4);

    migrate_blocking(&region, &dst, MigrationOptions::default())?;
    assert_eq!(q1_scan(&table, cutoff), q1);
    assert_eq!(q6_scan(&table, &Q6Params::default()), q6);
    println!("same answers after migration");
    Ok(())
}
