use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::Duration;

use page_leap::leap_engine::{
    child_containing, ensure_fault_handler, initial_areas, is_legal, split_area, start_migration, Area, AreaCell,
    AreaState, MigrationOptions, MigrationStatus, TransitionError,
};
use page_leap::workload::{run_burst, BurstSpec};
use page_leap::{detect_topology, NodeId, PageSize, PhysicalStore, StoreSpec, VirtualRegion};
use proptest::prelude::*;

const P: usize = 4096;

fn state() -> impl Strategy<Value = AreaState> {
    (0..6usize).prop_map(|i| AreaState::ALL[i])
}

proptest! {
    #[test]
    fn cell_matches_a_sequential_model(ops in prop::collection::vec((state(), state()), 0..200)) {
        let cell = AreaCell::new();
        let (mut model, mut gen) = (AreaState::Idle, 0u64);
        for (from, to) in ops {
            let got = cell.transition(from, to);
            if !is_legal(from, to) {
                prop_assert_eq!(got, Err(TransitionError::Illegal { from, to }));
            } else if from != model {
                prop_assert_eq!(got, Err(TransitionError::Conflict { expected: from, actual: model }));
            } else {
                prop_assert_eq!(got, Ok(gen));
                model = to;
                gen += 1;
            }
            prop_assert_eq!(cell.load_with_generation(), (model, gen));
        }
    }

    #[test]
    fn remapped_is_terminal(to in state()) {
        let cell = AreaCell::new();
        for (a, b) in [
            (AreaState::Idle, AreaState::Copying),
            (AreaState::Copying, AreaState::Sealed),
            (AreaState::Sealed, AreaState::Remapping),
            (AreaState::Remapping, AreaState::Remapped),
        ] {
            cell.transition(a, b).unwrap();
        }
        prop_assert!(cell.transition(AreaState::Remapped, to).is_err());
        prop_assert_eq!(cell.load(), AreaState::Remapped);
    }

    #[test]
    fn split_partitions_its_parent(pages in 1usize..2048, factor in 2usize..16, at in 0usize..1024, retries in 0u32..8) {
        let parent = Area { voffset: at * P, length: pages * P, retries, state: AreaState::Dirty };
        let kids = split_area(&parent, factor, P);
        prop_assert_eq!(kids.len(), factor.min(pages));
        prop_assert_eq!(kids[0].voffset, parent.voffset);
        prop_assert_eq!(kids.last().unwrap().end(), parent.end());
        for w in kids.windows(2) {
            prop_assert_eq!(w[0].end(), w[1].voffset);
            prop_assert!(w[0].length >= w[1].length);
            prop_assert!(w[0].length - w[1].length <= P);
        }
        for k in &kids {
            prop_assert!(k.length >= P && k.length % P == 0);
            prop_assert_eq!((k.retries, k.state), (retries + 1, AreaState::Idle));
        }
        let page = (at * 7919) % pages;
        let k = kids[child_containing(pages, factor, page)];
        let addr = parent.voffset + page * P;
        prop_assert!(k.voffset <= addr && addr < k.end());
    }

    #[test]
    fn repeated_splits_keep_exact_coverage(pages in 1usize..512, initial_pages in 1usize..64, factor in 2usize..6, picks in prop::collection::vec(any::<usize>(), 0..64)) {
        let mut areas = initial_areas(pages * P, initial_pages * P);
        for pick in picks {
            let i = pick % areas.len();
            let victim = areas.remove(i);
            for (j, k) in split_area(&victim, factor, P).into_iter().enumerate() {
                areas.insert(i + j, k);
            }
        }
        let mut at = 0;
        for a in &areas {
            prop_assert_eq!(a.voffset, at);
            at = a.end();
        }
        prop_assert_eq!(at, pages * P);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    /// Writes confined to one byte range can only dirty areas that overlap
    /// it, and no write is lost.
    #[test]
    fn confined_burst_only_splits_overlapping_areas(
        first in 0usize..48, span in 1usize..16, initial_kib in prop::sample::select(vec![64usize, 128, 256]), seed in any::<u64>(),
    ) {
        ensure_fault_handler().unwrap();
        let len = 4 << 20;
        let target = first * 64 * 1024..(first + span) * 64 * 1024;
        let topo = detect_topology(true);
        let src = PhysicalStore::create(&topo, StoreSpec::new(NodeId(0), PageSize::Small, len)).unwrap();
        let dst = PhysicalStore::create(&topo, StoreSpec::new(NodeId(1), PageSize::Small, len)).unwrap();
        let region = VirtualRegion::backed_by(&src, len, true).unwrap();
        let snapshot = region.snapshot();
        let stop = AtomicBool::new(false);
        let burst = BurstSpec::uniform(f64::INFINITY).target(target.clone()).journaled(true).seed(seed);
        let hook_region = region.id();
        let options = MigrationOptions::default()
            .initial_area(initial_kib * 1024)
            .hooks(page_leap::leap_engine::ProtocolHooks {
                after_copy: Some(std::sync::Arc::new(move |r: &VirtualRegion, _| {
                    if r.id() == hook_region {
                        thread::sleep(Duration::from_micros(50));
                    }
                })),
                after_seal: None,
            });
        let (report, out) = thread::scope(|s| {
            let w = s.spawn(|| run_burst(&region, &burst, &stop).unwrap());
            let report = start_migration(&region, &dst, options).unwrap().wait();
            stop.store(true, Ordering::SeqCst);
            (report, w.join().unwrap())
        });
        prop_assert_eq!(report.status, MigrationStatus::Complete);
        let initial = initial_kib * 1024;
        let touched: BTreeSet<usize> = out.journal.as_ref().unwrap().offsets().iter().map(|&o| o as usize / initial).collect();
        for a in &report.final_areas {
            if a.length < initial || a.retries > 0 {
                let root = a.voffset / initial * initial;
                prop_assert!(root < target.end && target.start < root + initial, "{:?} outside {:?}", a, target);
                prop_assert!(touched.contains(&(a.voffset / initial)));
            }
        }
        prop_assert!(out.journal.unwrap().verify(&snapshot, &region.snapshot()).is_ok());
    }
}
