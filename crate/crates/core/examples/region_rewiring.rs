//! Point part of a virtual region at different physical pages without
//! moving its address.

use page_leap::{detect_topology, NodeId, PageSize, PhysicalStore, Protection, StoreSpec, VirtualRegion};

fn main() -> page_leap::Result<()> {
    let topo = detect_topology(true);
    let near = PhysicalStore::create(&topo, StoreSpec::new(NodeId(0), PageSize::Small, 1 << 20))?;
    let far = PhysicalStore::create(&topo, StoreSpec::new(NodeId(1), PageSize::Small, 1 << 20))?;

    let region = VirtualRegion::backed_by(&near, 64 << 10, true)?;
    region.write_bytes(0, b"hello from node 0");
    let base = region.base();

    // Copy the first 16 KiB over, then rewire those pages.
    let extent = far.allocate_extent(16 << 10, true)?;
    unsafe { std::ptr::copy_nonoverlapping(region.as_ptr(), extent.as_ptr(), extent.len()) };
    let old = region.extents_in(0, extent.len())?;
    region.map_range(0, &extent, Protection::ReadWrite)?;
    for e in old {
        near.release_extent(&e)?;
    }

    let mut buf = [0u8; 17];
    region.read_bytes(0, &mut buf);
    assert_eq!(region.base(), base);
    println!("{} (same address {base:#x})", String::from_utf8_lossy(&buf));
    for off in (0..region.len()).step_by(16 << 10) {
        let m = region.mapping_of(off).expect("mapped");
        println!("  +{off:#07x} -> node {:?} offset {:#x}", m.store.node(), m.offset);
    }
    println!("{} map calls so far", region.os_map_calls());
    Ok(())
}
