//! Carve extents out of a node-local physical store and return them to its
//! pool.

use page_leap::{detect_topology, NodeId, PageSize, PhysicalStore, StoreSpec};

fn main() -> page_leap::Result<()> {
    let topo = detect_topology(false);
    println!("nodes {:?}, simulated {}", topo.nodes(), topo.is_simulated());

    let store = PhysicalStore::create(&topo, StoreSpec::new(NodeId(0), PageSize::Small, 8 << 20))?;
    println!("backing {:?}, capacity {} bytes", store.backing(), store.capacity());

    let a = store.allocate_extent(1 << 20, true)?;
    let b = store.allocate_extent(3 << 20, false)?;
    println!(
        "a at {:#x}, b at {:#x}: {:?}",
        a.offset(),
        b.offset(),
        store.pool_stats()
    );

    unsafe { a.as_ptr().write_bytes(0xab, a.len()) };
    store.release_extent(&a)?;
    store.release_extent(&b)?;
    println!("after release: {:?}", store.pool_stats());
    println!("free extents {:?}", store.free_extents());

    store.warm_pool();
    println!("warmed: {} bytes prefaulted", store.free_prefaulted_bytes());
    Ok(())
}
