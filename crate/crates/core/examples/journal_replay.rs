//! Record a burst of writes, save the journal, load it back and replay it.

use std::sync::atomic::AtomicBool;

use page_leap::workload::{run_burst, BurstSpec, WriteJournal};
use page_leap::{detect_topology, NodeId, PageSize, PhysicalStore, StoreSpec, VirtualRegion};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let topo = detect_topology(true);
    let store = PhysicalStore::create(&topo, StoreSpec::new(NodeId(0), PageSize::Small, 1 << 20))?;
    let region = VirtualRegion::backed_by(&store, 1 << 20, true)?;
    let before = region.snapshot();

    let spec = BurstSpec::uniform(f64::INFINITY)
        .threads(2)
        .max_writes(10_000)
        .journaled(true);
    let out = run_burst(&region, &spec, &AtomicBool::new(false))?;
    let journal = out.journal.expect("journaled burst");
    println!("{} writes to {} distinct words", journal.len(), journal.offsets().len());

    let path = std::env::temp_dir().join(format!("page-leap-{}.journal", std::process::id()));
    journal.write_binary(std::fs::File::create(&path)?)?;
    let loaded = WriteJournal::read_binary(std::fs::File::open(&path)?)?;
    std::fs::remove_file(&path)?;

    let mut replayed = before.clone();
    loaded.replay(&mut replayed)?;
    println!("replay matches memory: {}", replayed == region.snapshot());

    // A write the journal never saw shows up as a mismatch.
    region.store_u64(0, 42);
    println!(
        "after a stray write: {:?}",
        loaded.verify(&before, &region.snapshot()).err()
    );
    Ok(())
}
