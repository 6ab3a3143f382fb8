//! Reference movers: raw copies into fresh and pooled memory, and the
//! kernel's per-page move call.

use page_leap::baselines::{self, AnonKind, AnonRegion};
use page_leap::leap_engine::MIB;
use page_leap::{detect_topology, NodeId, PageSize, PhysicalStore, StoreSpec, VirtualRegion};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let topo = detect_topology(false);
    let len = 32 * MIB;
    let src = PhysicalStore::create(&topo, StoreSpec::new(NodeId(0), PageSize::Small, len))?;
    let region = VirtualRegion::backed_by(&src, len, true)?;
    let far = *topo.nodes().last().expect("at least one node");
    let dst = PhysicalStore::create(&topo, StoreSpec::new(far, PageSize::Small, len))?;

    for pooled in [false, true] {
        let (r, extent) = baselines::raw_copy(&region, &dst, pooled)?;
        println!("{:<18} {:?}", r.method.label(), r.elapsed);
        if let Some(e) = extent {
            dst.release_extent(&e)?;
        }
    }

    let anon = AnonRegion::new(len, AnonKind::Small)?;
    anon.fill_random(1);
    let r = baselines::os_move_pages(&anon, &topo, far)?;
    match &r.skipped {
        Some(why) => println!("{:<18} skipped: {why}", r.method.label()),
        None => println!("{:<18} {:?} {:?}", r.method.label(), r.elapsed, r.histogram()),
    }
    Ok(())
}
