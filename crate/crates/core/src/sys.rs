//! Thin wrappers over the Linux memory-management and NUMA system calls.
//!
//! Everything here is a direct translation of a libc call into `io::Result`.
//! Functions marked async-signal-safe are called from the write-fault handler
//! and must stay free of allocation and locking.

use std::ffi::CStr;
use std::io;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::ptr;

pub const MPOL_BIND: libc::c_int = 2;
const MPOL_MF_STRICT: libc::c_uint = 1 << 0;
pub const MPOL_MF_MOVE: libc::c_int = 1 << 1;

/// Node mask width handed to `mbind`, in bits.
const NODE_MASK_BITS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protection {
    None,
    ReadOnly,
    ReadWrite,
}

impl Protection {
    pub fn to_prot(self) -> libc::c_int {
        match self {
            Protection::None => libc::PROT_NONE,
            Protection::ReadOnly => libc::PROT_READ,
            Protection::ReadWrite => libc::PROT_READ | libc::PROT_WRITE,
        }
    }
}

fn check(ret: libc::c_int) -> io::Result<()> {
    if ret == -1 {
        Err(io::Error::last_os_error())
    } else {
        Ok(())
    }
}

pub fn memfd(name: &CStr, hugetlb: bool) -> io::Result<OwnedFd> {
    let mut flags = libc::MFD_CLOEXEC;
    if hugetlb {
        flags |= libc::MFD_HUGETLB | libc::MFD_HUGE_2MB;
    }
    let fd = unsafe { libc::memfd_create(name.as_ptr(), flags) };
    if fd < 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(unsafe { OwnedFd::from_raw_fd(fd) })
}

pub fn ftruncate(fd: &OwnedFd, len: u64) -> io::Result<()> {
    check(unsafe { libc::ftruncate(fd.as_raw_fd(), len as libc::off_t) })
}

/// Drops the backing pages of `[offset, offset + len)` so the next access
/// faults in fresh memory.
pub fn punch_hole(fd: &OwnedFd, offset: u64, len: u64) -> io::Result<()> {
    check(unsafe {
        libc::fallocate(
            fd.as_raw_fd(),
            libc::FALLOC_FL_PUNCH_HOLE | libc::FALLOC_FL_KEEP_SIZE,
            offset as libc::off_t,
            len as libc::off_t,
        )
    })
}

/// Maps `len` bytes of `fd` at a kernel-chosen address.
pub fn map_shared(fd: &OwnedFd, len: usize, prot: Protection) -> io::Result<*mut u8> {
    let addr = unsafe {
        libc::mmap(
            ptr::null_mut(),
            len,
            prot.to_prot(),
            libc::MAP_SHARED | libc::MAP_NORESERVE,
            fd.as_raw_fd(),
            0,
        )
    };
    if addr == libc::MAP_FAILED {
        return Err(io::Error::last_os_error());
    }
    Ok(addr.cast())
}

/// Reserves address space with no access rights and no backing.
pub fn reserve(len: usize) -> io::Result<*mut u8> {
    let addr = unsafe {
        libc::mmap(
            ptr::null_mut(),
            len,
            libc::PROT_NONE,
            libc::MAP_PRIVATE | libc::MAP_ANONYMOUS | libc::MAP_NORESERVE,
            -1,
            0,
        )
    };
    if addr == libc::MAP_FAILED {
        return Err(io::Error::last_os_error());
    }
    Ok(addr.cast())
}

/// Anonymous private read-write memory.
pub fn map_anonymous(len: usize, hugetlb: bool) -> io::Result<*mut u8> {
    let mut flags = libc::MAP_PRIVATE | libc::MAP_ANONYMOUS;
    if hugetlb {
        flags |= libc::MAP_HUGETLB | libc::MAP_HUGE_2MB;
    }
    let addr = unsafe { libc::mmap(ptr::null_mut(), len, libc::PROT_READ | libc::PROT_WRITE, flags, -1, 0) };
    if addr == libc::MAP_FAILED {
        return Err(io::Error::last_os_error());
    }
    Ok(addr.cast())
}

/// Replaces whatever is mapped at `addr` with `len` bytes of `fd` starting at
/// `offset`, applying `prot` in the same call. Page tables are populated
/// eagerly so later accesses through the range take no soft faults.
pub fn map_fixed(addr: *mut u8, len: usize, prot: Protection, fd: &OwnedFd, offset: u64) -> io::Result<()> {
    let ret = unsafe {
        libc::mmap(
            addr.cast(),
            len,
            prot.to_prot(),
            libc::MAP_SHARED | libc::MAP_FIXED | libc::MAP_POPULATE,
            fd.as_raw_fd(),
            offset as libc::off_t,
        )
    };
    if ret == libc::MAP_FAILED {
        return Err(io::Error::last_os_error());
    }
    debug_assert_eq!(ret.cast::<u8>(), addr);
    Ok(())
}

pub fn unmap(addr: *mut u8, len: usize) -> io::Result<()> {
    check(unsafe { libc::munmap(addr.cast(), len) })
}

/// Async-signal-safe.
pub fn protect(addr: *mut u8, len: usize, prot: Protection) -> io::Result<()> {
    check(unsafe { libc::mprotect(addr.cast(), len, prot.to_prot()) })
}

/// Async-signal-safe variant of [`protect`] that reports only success.
pub fn protect_raw(addr: usize, len: usize, prot: Protection) -> bool {
    unsafe { libc::mprotect(addr as *mut libc::c_void, len, prot.to_prot()) == 0 }
}

pub fn madvise(addr: *mut u8, len: usize, advice: libc::c_int) -> io::Result<()> {
    check(unsafe { libc::madvise(addr.cast(), len, advice) })
}

/// Binds the pages of `[addr, addr + len)` to `node`.
pub fn mbind(addr: *mut u8, len: usize, node: u32) -> io::Result<()> {
    if node as usize >= NODE_MASK_BITS {
        return Err(io::Error::from_raw_os_error(libc::EINVAL));
    }
    let mask: u64 = 1 << node;
    let ret = unsafe {
        libc::syscall(
            libc::SYS_mbind,
            addr as usize,
            len,
            MPOL_BIND,
            &mask as *const u64,
            NODE_MASK_BITS + 1,
            MPOL_MF_STRICT,
        )
    };
    if ret == -1 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

/// Raw `move_pages` for the calling process. With `nodes == None` the call is
/// a pure location query and `status` receives the node of each page or a
/// negative errno.
pub fn move_pages(
    pages: &[usize],
    nodes: Option<&[libc::c_int]>,
    status: &mut [libc::c_int],
    flags: libc::c_int,
) -> io::Result<()> {
    assert_eq!(pages.len(), status.len());
    if let Some(nodes) = nodes {
        assert_eq!(pages.len(), nodes.len());
    }
    if pages.is_empty() {
        return Ok(());
    }
    let ret = unsafe {
        libc::syscall(
            libc::SYS_move_pages,
            0,
            pages.len() as libc::c_ulong,
            pages.as_ptr(),
            nodes.map_or(ptr::null(), |n| n.as_ptr()),
            status.as_mut_ptr(),
            flags,
        )
    };
    if ret < 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

pub fn set_affinity(core: usize) -> io::Result<()> {
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(core, &mut set);
        check(libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set))
    }
}

pub fn affinity() -> io::Result<Vec<usize>> {
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        check(libc::sched_getaffinity(
            0,
            std::mem::size_of::<libc::cpu_set_t>(),
            &mut set,
        ))?;
        Ok((0..libc::CPU_SETSIZE as usize)
            .filter(|&c| libc::CPU_ISSET(c, &set))
            .collect())
    }
}

/// Async-signal-safe.
pub fn yield_now() {
    unsafe {
        libc::sched_yield();
    }
}

/// Async-signal-safe monotonic clock in nanoseconds.
pub fn monotonic_nanos() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    unsafe {
        libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts);
    }
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

/// Minor (soft) page faults taken by the calling thread so far.
pub fn thread_minor_faults() -> u64 {
    unsafe {
        let mut usage: libc::rusage = std::mem::zeroed();
        libc::getrusage(libc::RUSAGE_THREAD, &mut usage);
        usage.ru_minflt as u64
    }
}

pub fn system_page_size() -> usize {
    unsafe { libc::sysconf(libc::_SC_PAGESIZE) as usize }
}
