//! NUMA topology discovery, thread pinning and page-location queries.
//!
//! Hosts with fewer than two physical nodes get a simulated topology: two
//! logical nodes that share physical node 0. In that mode page locations are
//! answered from the rewiring table instead of the kernel.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::sys;
use crate::vmap;

const NODE_SYSFS: &str = "/sys/devices/system/node";

/// A NUMA node (region) identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum TopoError {
    #[error("core {0} does not exist")]
    UnknownCore(usize),
    #[error("{0} does not exist")]
    UnknownNode(NodeId),
    #[error("address {0:#x} is not mapped")]
    Unmapped(usize),
    #[error("os error: {0}")]
    Os(#[from] std::io::Error),
}

/// Where a page currently lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PageLocation {
    Node(NodeId),
    NotResident,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    nodes: Vec<NodeId>,
    cores_per_node: BTreeMap<NodeId, Vec<usize>>,
    simulated: bool,
}

impl Topology {
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn is_simulated(&self) -> bool {
        self.simulated
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains(&node)
    }

    pub fn cores_of(&self, node: NodeId) -> Result<&[usize], TopoError> {
        self.cores_per_node
            .get(&node)
            .map(Vec::as_slice)
            .ok_or(TopoError::UnknownNode(node))
    }

    pub fn all_cores(&self) -> Vec<usize> {
        let mut cores: Vec<usize> = self.cores_per_node.values().flatten().copied().collect();
        cores.sort_unstable();
        cores.dedup();
        cores
    }

    /// The kernel node that actually backs `node`, or `None` in simulated
    /// mode where binding is skipped.
    pub fn physical_node(&self, node: NodeId) -> Option<NodeId> {
        if self.simulated {
            None
        } else {
            Some(node)
        }
    }

    /// Restricts the calling thread to `core`.
    pub fn pin_current_thread(&self, core: usize) -> Result<(), TopoError> {
        if !self.cores_per_node.values().any(|c| c.contains(&core)) {
            return Err(TopoError::UnknownCore(core));
        }
        sys::set_affinity(core)?;
        Ok(())
    }

    /// Pins the calling thread to the first core of `node`.
    pub fn pin_to_node(&self, node: NodeId) -> Result<usize, TopoError> {
        let core = *self.cores_of(node)?.first().ok_or(TopoError::UnknownNode(node))?;
        self.pin_current_thread(core)?;
        Ok(core)
    }

    /// Node currently backing the page containing `addr`.
    ///
    /// Addresses inside a rewired region are answered from the region table
    /// in simulated mode; residency itself always comes from the kernel.
    pub fn node_of_page(&self, addr: usize) -> Result<PageLocation, TopoError> {
        let page = addr & !(sys::system_page_size() - 1);
        let table_node = match vmap::lookup_address(addr) {
            Some((region, voffset)) => {
                let aligned = voffset - voffset % region.page_size().bytes();
                match region.mapping_of(aligned) {
                    Some(m) => Some(m.store.node()),
                    None => return Err(TopoError::Unmapped(addr)),
                }
            }
            None => None,
        };
        let status = query_page_nodes(&[page])?[0];
        match status {
            s if s >= 0 => match (self.simulated, table_node) {
                (true, Some(node)) => Ok(PageLocation::Node(node)),
                (true, None) => Ok(PageLocation::Node(NodeId(0))),
                (false, _) => Ok(PageLocation::Node(NodeId(s as u32))),
            },
            s if s == -libc::ENOENT => Ok(PageLocation::NotResident),
            s if s == -libc::EFAULT => Err(TopoError::Unmapped(addr)),
            s => Err(TopoError::Os(std::io::Error::from_raw_os_error(-s))),
        }
    }
}

/// Raw kernel location statuses for a batch of page addresses: the node id,
/// or a negative errno (`-ENOENT` for pages never faulted).
pub fn query_page_nodes(pages: &[usize]) -> Result<Vec<i32>, TopoError> {
    let mut status = vec![0; pages.len()];
    sys::move_pages(pages, None, &mut status, 0)?;
    Ok(status)
}

/// Enumerates NUMA nodes. With fewer than two physical nodes, or when
/// `force_simulated` is set, two logical nodes over physical node 0 are
/// exposed instead.
pub fn detect_topology(force_simulated: bool) -> Topology {
    let physical = read_sysfs_nodes(Path::new(NODE_SYSFS)).unwrap_or_default();
    let physical = if physical.is_empty() {
        let cores = sys::affinity().unwrap_or_else(|_| vec![0]);
        BTreeMap::from([(NodeId(0), cores)])
    } else {
        physical
    };

    if physical.len() >= 2 && !force_simulated {
        return Topology {
            nodes: physical.keys().copied().collect(),
            cores_per_node: physical,
            simulated: false,
        };
    }

    let mut cores: Vec<usize> = physical.values().flatten().copied().collect();
    cores.sort_unstable();
    cores.dedup();
    let (first, second) = if cores.len() >= 2 {
        let (a, b) = cores.split_at(cores.len() / 2);
        (a.to_vec(), b.to_vec())
    } else {
        (cores.clone(), cores)
    };
    Topology {
        nodes: vec![NodeId(0), NodeId(1)],
        cores_per_node: BTreeMap::from([(NodeId(0), first), (NodeId(1), second)]),
        simulated: true,
    }
}

fn read_sysfs_nodes(root: &Path) -> std::io::Result<BTreeMap<NodeId, Vec<usize>>> {
    let mut nodes = BTreeMap::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(id) = name
            .to_str()
            .and_then(|n| n.strip_prefix("node"))
            .and_then(|n| n.parse::<u32>().ok())
        else {
            continue;
        };
        let cpulist = fs::read_to_string(entry.path().join("cpulist")).unwrap_or_default();
        let cores = parse_cpu_list(&cpulist);
        // memory-only nodes still count as nodes
        nodes.insert(NodeId(id), cores);
    }
    Ok(nodes)
}

/// Parses the kernel's `0-3,8,10-11` list format.
pub fn parse_cpu_list(list: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for part in list.trim().split(',').filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                if let (Ok(lo), Ok(hi)) = (lo.parse::<usize>(), hi.parse::<usize>()) {
                    out.extend(lo..=hi);
                }
            }
            None => {
                if let Ok(c) = part.parse() {
                    out.push(c);
                }
            }
        }
    }
    out
}

/// Free 2 MiB huge pages reserved on a physical node, from sysfs.
pub fn free_huge_pages(node: NodeId) -> u64 {
    let path = format!("{NODE_SYSFS}/node{}/hugepages/hugepages-2048kB/free_hugepages", node.0);
    fs::read_to_string(path)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}

/// State of the kernel auto-balancing toggle, `None` when unreadable.
pub fn numa_balancing_enabled() -> Option<bool> {
    fs::read_to_string("/proc/sys/kernel/numa_balancing")
        .ok()
        .and_then(|s| s.trim().parse::<u32>().ok())
        .map(|v| v != 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cpu_list_formats() {
        assert_eq!(parse_cpu_list("0-3,8,10-11\n"), vec![0, 1, 2, 3, 8, 10, 11]);
        assert_eq!(parse_cpu_list(""), Vec::<usize>::new());
        assert_eq!(parse_cpu_list("5"), vec![5]);
    }

    #[test]
    fn forced_simulation_exposes_two_nodes() {
        let topo = detect_topology(true);
        assert!(topo.is_simulated());
        assert_eq!(topo.nodes(), &[NodeId(0), NodeId(1)]);
        assert!(topo.physical_node(NodeId(1)).is_none());
        assert!(!topo.cores_of(NodeId(1)).unwrap().is_empty());
    }

    #[test]
    fn detected_topology_has_two_logical_nodes() {
        let topo = detect_topology(false);
        assert!(topo.nodes().len() >= 2);
        let physical = read_sysfs_nodes(Path::new(NODE_SYSFS)).map(|n| n.len()).unwrap_or(1);
        assert_eq!(topo.is_simulated(), physical < 2);
    }

    #[test]
    fn pinning() {
        let topo = detect_topology(false);
        let core = topo.cores_of(NodeId(0)).unwrap()[0];
        std::thread::spawn(move || {
            topo.pin_current_thread(core).unwrap();
            assert_eq!(sys::affinity().unwrap(), vec![core]);
            assert!(matches!(
                topo.pin_current_thread(100_000),
                Err(TopoError::UnknownCore(100_000))
            ));
        })
        .join()
        .unwrap();
    }

    #[test]
    fn anonymous_page_residency() {
        let topo = detect_topology(false);
        let len = 2 * sys::system_page_size();
        let p = sys::map_anonymous(len, false).unwrap();
        let untouched = p as usize + sys::system_page_size();
        assert_eq!(topo.node_of_page(untouched).unwrap(), PageLocation::NotResident);
        unsafe { p.write_volatile(1) };
        assert!(matches!(topo.node_of_page(p as usize).unwrap(), PageLocation::Node(_)));
        sys::unmap(p, len).unwrap();
    }
}
