//! Host inspection: what the machine offers and which experiment arms can
//! run on it.

use std::fmt;
use std::fs;
use std::path::PathBuf;

use page_leap::numa_topo::{free_huge_pages, numa_balancing_enabled};
use page_leap::{detect_topology, PageSize, Topology};
use serde::Serialize;

use crate::config::{Experiment, Mode};

/// Overrides hugetlbfs mount discovery.
pub const HUGETLBFS_ENV: &str = "LEAP_BENCH_HUGETLBFS";

const HUGE_HINT: &str =
    "reserve pages with `echo N > /sys/devices/system/node/nodeX/hugepages/hugepages-2048kB/nr_hugepages` on each node";

#[derive(Clone, Debug, Serialize)]
pub struct ArmAvailability {
    pub experiment: String,
    pub arm: String,
    pub runnable: bool,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvReport {
    pub physical_nodes: usize,
    pub simulated: bool,
    pub cpus: usize,
    pub hugetlbfs_mount: Option<PathBuf>,
    /// (physical node, free 2 MiB pages)
    pub free_huge_pages: Vec<(u32, u64)>,
    pub numa_balancing: Option<bool>,
    pub arms: Vec<ArmAvailability>,
}

/// First hugetlbfs mount listed in /proc/mounts, unless the environment
/// names one.
pub fn hugetlbfs_mount() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os(HUGETLBFS_ENV) {
        return Some(PathBuf::from(p));
    }
    let mounts = fs::read_to_string("/proc/mounts").ok()?;
    mounts.lines().find_map(|l| {
        let mut f = l.split_whitespace();
        let (_, path, kind) = (f.next()?, f.next()?, f.next()?);
        (kind == "hugetlbfs").then(|| PathBuf::from(path))
    })
}

/// Topology the bench runs on for `mode`.
pub fn topology_for(mode: Mode) -> Topology {
    detect_topology(mode == Mode::Simulated)
}

/// Why an arm cannot run, or `None` when it can.
pub fn arm_skip_reason(
    topo: &Topology,
    mode: Mode,
    page: PageSize,
    arm: &str,
    free_huge: u64,
    huge_needed: u64,
    balancing: Option<bool>,
) -> Option<String> {
    if mode == Mode::RealNuma && topo.is_simulated() {
        return Some("real-numa mode requested but the host has fewer than two NUMA nodes".into());
    }
    if page == PageSize::Huge && free_huge < huge_needed {
        return Some(format!(
            "needs {huge_needed} free huge pages, {free_huge} reserved; {HUGE_HINT}"
        ));
    }
    match arm {
        "os-move-pages" | "remote" if topo.is_simulated() => {
            Some("simulated topology: both logical nodes share one physical node".into())
        }
        "auto-balance" if topo.is_simulated() => Some("simulated topology: nothing to balance across".into()),
        "auto-balance" if balancing != Some(true) => {
            Some("kernel.numa_balancing is off; enable with `sysctl kernel.numa_balancing=1`".into())
        }
        _ => None,
    }
}

/// Arms of each experiment, in run order.
pub fn arms(experiment: Experiment) -> &'static [&'static str] {
    match experiment {
        Experiment::Access => &["local", "remote"],
        Experiment::Baseline => &["os-move-pages", "raw-copy-fresh", "raw-copy-pooled"],
        Experiment::QuietSweep => &["page-leap", "os-move-pages", "raw-copy-pooled"],
        Experiment::Burst | Experiment::Sustained => &["page-leap", "os-move-pages", "auto-balance"],
        Experiment::Overhead => &["page-leap"],
        Experiment::Tpch => &["no-migration", "page-leap", "os-move-pages", "auto-balance"],
    }
}

pub fn env_check(mode: Mode, page: PageSize, region_bytes: usize) -> EnvReport {
    let topo = topology_for(mode);
    let physical = detect_topology(false);
    let physical_nodes = if physical.is_simulated() {
        1
    } else {
        physical.nodes().len()
    };
    let free: Vec<(u32, u64)> = (0..physical_nodes as u32)
        .map(|n| (n, free_huge_pages(page_leap::NodeId(n))))
        .collect();
    let min_free = free.iter().map(|f| f.1).min().unwrap_or(0);
    // Two stores of the region, at most one of them per physical node when
    // simulated.
    let per_store = region_bytes.div_ceil(PageSize::Huge.bytes()) as u64;
    let needed = if physical_nodes == 1 { 2 * per_store } else { per_store };
    let balancing = numa_balancing_enabled();
    let arms = Experiment::ALL
        .iter()
        .flat_map(|&e| {
            let topo = &topo;
            arms(e).iter().map(move |arm| {
                let reason = arm_skip_reason(topo, mode, page, arm, min_free, needed, balancing);
                ArmAvailability {
                    experiment: e.id().into(),
                    arm: arm.to_string(),
                    runnable: reason.is_none(),
                    reason: reason.unwrap_or_default(),
                }
            })
        })
        .collect();
    EnvReport {
        physical_nodes,
        simulated: topo.is_simulated(),
        cpus: topo.all_cores().len(),
        hugetlbfs_mount: hugetlbfs_mount(),
        free_huge_pages: free,
        numa_balancing: balancing,
        arms,
    }
}

impl fmt::Display for EnvReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "physical nodes: {}{}",
            self.physical_nodes,
            if self.simulated {
                " (running on two simulated nodes)"
            } else {
                ""
            }
        )?;
        writeln!(f, "cpus: {}", self.cpus)?;
        match &self.hugetlbfs_mount {
            Some(p) => writeln!(f, "hugetlbfs: {}", p.display())?,
            None => writeln!(f, "hugetlbfs: not mounted (anonymous huge-page files are used instead)")?,
        }
        for (node, n) in &self.free_huge_pages {
            writeln!(f, "node {node}: {n} free 2 MiB pages")?;
        }
        let bal = match self.numa_balancing {
            Some(true) => "on",
            Some(false) => "off",
            None => "unknown",
        };
        writeln!(f, "numa balancing: {bal}")?;
        for a in &self.arms {
            if a.runnable {
                writeln!(f, "  {:<15} {:<15} runnable", a.experiment, a.arm)?;
            } else {
                writeln!(f, "  {:<15} {:<15} skipped: {}", a.experiment, a.arm, a.reason)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use page_leap::Topology;

    fn sim() -> Topology {
        detect_topology(true)
    }

    #[test]
    fn simulated_host_skips_real_numa_arms_only() {
        let t = sim();
        let r = |arm| arm_skip_reason(&t, Mode::Auto, PageSize::Small, arm, 0, 0, Some(true));
        assert!(r("page-leap").is_none());
        assert!(r("raw-copy-pooled").is_none());
        assert!(r("local").is_none());
        assert!(r("os-move-pages").is_some());
        assert!(r("remote").is_some());
        assert!(r("auto-balance").is_some());
    }

    #[test]
    fn real_numa_mode_on_one_node_skips_everything() {
        let t = sim();
        assert!(arm_skip_reason(&t, Mode::RealNuma, PageSize::Small, "page-leap", 0, 0, None).is_some());
    }

    #[test]
    fn missing_huge_pages_give_a_hint() {
        let t = sim();
        let r = arm_skip_reason(&t, Mode::Auto, PageSize::Huge, "page-leap", 3, 256, None).unwrap();
        assert!(r.contains("nr_hugepages"), "{r}");
        assert!(arm_skip_reason(&t, Mode::Auto, PageSize::Huge, "page-leap", 256, 256, None).is_none());
    }

    #[test]
    fn report_lists_every_arm() {
        let rep = env_check(Mode::Simulated, PageSize::Small, 1 << 20);
        let total: usize = Experiment::ALL.iter().map(|e| arms(*e).len()).sum();
        assert_eq!(rep.arms.len(), total);
        assert!(rep.simulated);
        assert!(rep.to_string().contains("E4-burst"));
    }
}
