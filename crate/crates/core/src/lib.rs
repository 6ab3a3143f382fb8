//! User-space NUMA page migration by memory rewiring.
//!
//! Physical memory lives in per-node main-memory files ([`mem_file`]).
//! Application data lives in [`vmap::VirtualRegion`]s whose pages are mapped
//! onto file offsets and can be rewired at runtime. [`leap_engine`] moves a
//! region to another node by copying it area by area into pooled destination
//! memory and remapping, while application threads keep writing.

pub mod baselines;
pub mod leap_engine;
pub mod mem_file;
pub mod numa_topo;
pub mod sys;
pub mod vmap;
pub mod workload;

use thiserror::Error;

pub use leap_engine::{
    ensure_fault_handler, install_fault_handler, migrate_blocking, start_migration, uninstall_fault_handler,
    EngineError, JobHandle, MigrationOptions, MigrationReport, MigrationStatus, PageStatus,
};
pub use mem_file::{Backing, Extent, PageSize, PhysicalStore, StoreError, StoreSpec};
pub use numa_topo::{detect_topology, NodeId, TopoError, Topology};
pub use vmap::{Protection, VirtualRegion, VmapError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Vmap(#[from] VmapError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Topology(#[from] TopoError),
    #[error(transparent)]
    Baseline(#[from] baselines::BaselineError),
    #[error(transparent)]
    Workload(#[from] workload::WorkloadError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
