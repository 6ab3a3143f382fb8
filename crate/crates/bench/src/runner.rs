//! Experiment drivers. Each produces one record per (method, parameter
//! point, repetition); averages are appended by the caller.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info};
use page_leap::baselines::{self, AnonKind, AnonRegion, BaselineResult, PageOutcome};
use page_leap::numa_topo::free_huge_pages;
use page_leap::workload::{
    date, orderkey_writer, q1_scan, q6_scan, run_access_pattern, run_burst, AccessPattern, BurstOutcome, BurstSpec,
    LineitemTable, Q1Result, Q6Params, Q1_DEFAULT_CUTOFF,
};
use page_leap::{
    ensure_fault_handler, start_migration, MigrationOptions, MigrationReport, MigrationStatus, NodeId, PageSize,
    PageStatus, PhysicalStore, StoreSpec, Topology, VirtualRegion,
};

use crate::config::{page_size_label, Experiment, ExperimentConfig, Mode, Skew};
use crate::env::{arm_skip_reason, hugetlbfs_mount, topology_for};
use crate::record::{histogram_string, Record};
use crate::BenchError;

/// Poll interval of the auto-balance observer.
pub const BALANCE_POLL: Duration = Duration::from_millis(100);
/// Queries run back to back after each migration call.
pub const QUERY_RUNS: u32 = 5;

fn rt(e: impl Display) -> BenchError {
    BenchError::Runtime(e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Load {
    Quiet,
    Uniform(f64),
    Skewed(f64, Skew),
}

impl Load {
    fn label(self) -> &'static str {
        match self {
            Load::Quiet => "quiet",
            Load::Uniform(_) => "uniform",
            Load::Skewed(..) => "skewed",
        }
    }

    fn burst(self, seed: u64) -> Option<BurstSpec> {
        match self {
            Load::Quiet => None,
            Load::Uniform(rate) => Some(BurstSpec::uniform(rate).seed(seed)),
            Load::Skewed(rate, s) => Some(BurstSpec::skewed(rate, s.fraction, 0..s.bytes).seed(seed)),
        }
    }
}

struct Bench<'a> {
    cfg: &'a ExperimentConfig,
    topo: Topology,
    src: NodeId,
    dst: NodeId,
    free_huge: u64,
    huge_needed: u64,
    balancing: Option<bool>,
}

impl<'a> Bench<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        let topo = topology_for(cfg.mode);
        let (src, dst) = (topo.nodes()[0], topo.nodes()[1]);
        let physical: Vec<NodeId> = topo.nodes().iter().filter_map(|&n| topo.physical_node(n)).collect();
        let free_huge = physical.iter().map(|&n| free_huge_pages(n)).min().unwrap_or(0);
        let per_store = cfg.region_bytes.div_ceil(PageSize::Huge.bytes()) as u64;
        // Simulated nodes put both stores on one physical node; the overhead
        // experiment needs a second pair for its matched copies.
        let stores = if cfg.experiment == Experiment::Overhead { 2 } else { 1 };
        let huge_needed = per_store * stores * if topo.is_simulated() { 2 } else { 1 };
        Bench {
            cfg,
            topo,
            src,
            dst,
            free_huge,
            huge_needed,
            balancing: page_leap::numa_topo::numa_balancing_enabled(),
        }
    }

    fn mode_label(&self) -> &'static str {
        if self.topo.is_simulated() {
            "simulated"
        } else {
            "real-numa"
        }
    }

    fn skip_reason(&self, arm: &str) -> Option<String> {
        arm_skip_reason(
            &self.topo,
            self.cfg.mode,
            self.cfg.page_size,
            arm,
            self.free_huge,
            self.huge_needed,
            self.balancing,
        )
    }

    fn record(&self, method: &str, rep: u32) -> Record {
        let c = self.cfg;
        Record {
            experiment: c.experiment.id().into(),
            method: method.into(),
            mode: self.mode_label().into(),
            page_size: page_size_label(c.page_size).into(),
            region_bytes: c.region_bytes as u64,
            load: "quiet".into(),
            seed: c.seed,
            reduction_factor: c.reduction_factor as u64,
            timeout_s: c.timeout.as_secs_f64(),
            rep: rep.to_string(),
            ..Record::default()
        }
    }

    fn with_load(&self, mut r: Record, load: Load) -> Record {
        r.load = load.label().into();
        match load {
            Load::Quiet => {}
            Load::Uniform(rate) => r.rate = Some(rate),
            Load::Skewed(rate, s) => {
                r.rate = Some(rate);
                r.skew_fraction = Some(s.fraction);
                r.skew_bytes = Some(s.bytes as u64);
            }
        }
        r
    }

    fn skipped(mut r: Record, reason: String) -> Record {
        r.status = "skipped".into();
        r.skip_reason = reason;
        r
    }

    fn store(&self, node: NodeId) -> Result<PhysicalStore, BenchError> {
        let mut spec = StoreSpec::new(node, self.cfg.page_size, self.cfg.region_bytes);
        if self.cfg.page_size == PageSize::Huge {
            if let Some(m) = self.cfg.hugetlbfs_mount.clone().or_else(hugetlbfs_mount) {
                spec = spec.hugetlbfs_mount(m);
            }
        }
        PhysicalStore::create(&self.topo, spec).map_err(rt)
    }

    fn source_region(&self) -> Result<(PhysicalStore, VirtualRegion), BenchError> {
        let store = self.store(self.src)?;
        let region = VirtualRegion::backed_by(&store, self.cfg.region_bytes, true).map_err(rt)?;
        Ok((store, region))
    }

    fn pooled_destination(&self) -> Result<PhysicalStore, BenchError> {
        let dst = self.store(self.dst)?;
        dst.warm_pool();
        Ok(dst)
    }

    /// Private memory on the source node, filled so every page is resident.
    fn anon(&self, seed: u64) -> Result<AnonRegion, BenchError> {
        let kind = match self.cfg.page_size {
            PageSize::Small => AnonKind::Small,
            PageSize::Huge => AnonKind::HugeTlb,
        };
        let anon = AnonRegion::new(self.cfg.region_bytes, kind).map_err(rt)?;
        if let Some(node) = self.topo.physical_node(self.src) {
            anon.bind(node.0).map_err(rt)?;
        }
        anon.fill_random(seed);
        Ok(anon)
    }

    fn options(&self, area: usize) -> Result<MigrationOptions, BenchError> {
        MigrationOptions::default()
            .initial_area(area)
            .reduction_factor(self.cfg.reduction_factor)
            .timeout(self.cfg.timeout)
            .pin_to(&self.topo, self.dst)
            .map_err(rt)
    }

    fn pin(&self, node: NodeId) {
        if let Err(e) = self.topo.pin_to_node(node) {
            debug!("could not pin to {node:?}: {e}");
        }
    }
}

fn status_label(s: MigrationStatus) -> &'static str {
    match s {
        MigrationStatus::Complete => "complete",
        MigrationStatus::TimedOut => "timed-out",
        MigrationStatus::Failed => "failed",
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn fill_report(r: &mut Record, rep: &MigrationReport) {
    r.status = status_label(rep.status).into();
    if let Some(f) = &rep.failure {
        r.skip_reason = f.clone();
    }
    let s = &rep.stats;
    r.elapsed_ms = Some(ms(s.elapsed));
    r.pages_total = Some(rep.page_status.len() as u64);
    r.pages_migrated = Some(rep.pages_migrated as u64);
    r.pages_pending = Some(rep.pages_pending as u64);
    let mut h = BTreeMap::new();
    for p in &rep.page_status {
        *h.entry(match p {
            PageStatus::Migrated => "migrated",
            PageStatus::Pending => "pending",
        })
        .or_insert(0) += 1;
    }
    r.page_status = histogram_string(&h);
    r.bytes_copied_total = Some(s.bytes_copied_total);
    r.bytes_copied_extra = Some(s.bytes_copied_extra);
    r.extra_pct = Some(100.0 * s.bytes_copied_extra as f64 / r.region_bytes.max(1) as f64);
    r.retries = Some(s.retries);
    r.areas_split = Some(s.areas_split);
    r.dirty_faults = Some(s.dirty_faults);
    r.spin_timeouts = Some(s.spin_timeouts);
}

fn outcome_label(o: &PageOutcome) -> String {
    match o {
        PageOutcome::Moved => "moved".into(),
        PageOutcome::NotMoved { node } => format!("on-node-{node}"),
        PageOutcome::Failed(errno) => format!("failed({errno})"),
    }
}

fn fill_baseline(r: &mut Record, b: &BaselineResult) {
    r.status = if b.timed_out { "timed-out" } else { "complete" }.into();
    r.elapsed_ms = Some(ms(b.elapsed));
    if !b.outcomes.is_empty() {
        let total = b.outcomes.len() as u64;
        let moved = b.moved() as u64;
        r.pages_total = Some(total);
        r.pages_migrated = Some(moved);
        r.pages_pending = Some(total - moved);
        let h: BTreeMap<String, usize> = b.histogram().iter().map(|(k, v)| (outcome_label(k), *v)).collect();
        r.page_status = histogram_string(&h);
    }
}

fn fill_burst(r: &mut Record, b: &BurstOutcome) {
    r.writes = Some(b.writes);
    r.achieved_rate = Some(b.sample.achieved);
    r.achieved_pct = Some(b.sample.achieved_pct);
}

/// Runs `mover` while `load` fires at `range`. The burst stops when the
/// mover returns unless `sustained`, in which case it runs for the whole
/// timeout.
fn under_load<R, T>(
    range: &R,
    load: Load,
    seed: u64,
    sustained: Option<Duration>,
    mover: impl FnOnce() -> Result<T, BenchError>,
) -> Result<(T, Option<BurstOutcome>), BenchError>
where
    R: baselines::MemoryRange + Sync + ?Sized,
{
    let Some(mut spec) = load.burst(seed) else {
        return Ok((mover()?, None));
    };
    if let Some(d) = sustained {
        spec = spec.duration(d);
    }
    let stop = AtomicBool::new(false);
    thread::scope(|s| {
        let writer = s.spawn(|| run_burst(range, &spec, &stop));
        let moved = mover();
        if sustained.is_none() {
            stop.store(true, Ordering::SeqCst);
        }
        let burst = writer.join().map_err(|_| rt("writer thread panicked"))?.map_err(rt)?;
        Ok((moved?, Some(burst)))
    })
}

impl Bench<'_> {
    fn loads(&self) -> Vec<Load> {
        let mut out = Vec::new();
        for rate in self.cfg.rate_list() {
            if rate == 0.0 {
                out.push(Load::Quiet);
                continue;
            }
            out.push(Load::Uniform(rate));
            if let Some(s) = self.cfg.skew {
                out.push(Load::Skewed(rate, s));
            }
        }
        out.dedup();
        out
    }

    fn seed(&self, rep: u32) -> u64 {
        self.cfg.seed.wrapping_add(rep as u64)
    }

    fn leap_arm(&self, area: usize, load: Load, rep: u32, sustained: bool) -> Result<Record, BenchError> {
        let mut r = self.with_load(self.record("page-leap", rep), load);
        r.area_bytes = Some(area as u64);
        if let Some(why) = self.skip_reason("page-leap") {
            return Ok(Self::skipped(r, why));
        }
        let (_src, region) = self.source_region()?;
        let dst = self.pooled_destination()?;
        let options = self.options(area)?;
        let sustain = sustained.then_some(self.cfg.timeout);
        let (report, burst) = under_load(&region, load, self.seed(rep), sustain, || {
            Ok(start_migration(&region, &dst, options).map_err(rt)?.wait())
        })?;
        fill_report(&mut r, &report);
        if let Some(b) = &burst {
            fill_burst(&mut r, b);
        }
        Ok(r)
    }

    fn move_pages_arm(&self, load: Load, rep: u32, sustained: bool) -> Result<Record, BenchError> {
        let mut r = self.with_load(self.record("os-move-pages", rep), load);
        if let Some(why) = self.skip_reason("os-move-pages") {
            return Ok(Self::skipped(r, why));
        }
        let anon = self.anon(self.seed(rep))?;
        self.pin(self.dst);
        let sustain = sustained.then_some(self.cfg.timeout);
        let (res, burst) = under_load(&anon, load, self.seed(rep), sustain, || {
            baselines::os_move_pages(&anon, &self.topo, self.dst).map_err(rt)
        })?;
        fill_baseline(&mut r, &res);
        if let Some(b) = &burst {
            fill_burst(&mut r, b);
        }
        Ok(r)
    }

    fn balance_arm(&self, load: Load, rep: u32, sustained: bool) -> Result<Record, BenchError> {
        let mut r = self.with_load(self.record("auto-balance", rep), load);
        if let Some(why) = self.skip_reason("auto-balance") {
            return Ok(Self::skipped(r, why));
        }
        let anon = self.anon(self.seed(rep))?;
        let sustain = sustained.then_some(self.cfg.timeout);
        let (res, burst) = under_load(&anon, load, self.seed(rep), sustain, || {
            baselines::observe_autobalance(&anon, &self.topo, self.dst, BALANCE_POLL, self.cfg.timeout).map_err(rt)
        })?;
        fill_baseline(&mut r, &res);
        if let Some(b) = &burst {
            fill_burst(&mut r, b);
        }
        Ok(r)
    }

    fn raw_copy_arm(&self, pooled: bool, rep: u32) -> Result<Record, BenchError> {
        let method = if pooled { "raw-copy-pooled" } else { "raw-copy-fresh" };
        let mut r = self.record(method, rep);
        if let Some(why) = self.skip_reason(method) {
            return Ok(Self::skipped(r, why));
        }
        let (_src, region) = self.source_region()?;
        let dst = self.store(self.dst)?;
        self.pin(self.dst);
        let (res, extent) = baselines::raw_copy(&region, &dst, pooled).map_err(rt)?;
        if let Some(e) = extent {
            dst.release_extent(&e).map_err(rt)?;
        }
        fill_baseline(&mut r, &res);
        r.bytes_copied_total = Some(region.len() as u64);
        Ok(r)
    }

    fn access(&self) -> Result<Vec<Record>, BenchError> {
        let mut out = Vec::new();
        for (arm, node) in [("local", self.src), ("remote", self.dst)] {
            for pattern in AccessPattern::ALL {
                for rep in 0..self.cfg.reps {
                    let mut r = self.record(arm, rep);
                    r.query = pattern.label().into();
                    if let Some(why) = self.skip_reason(arm) {
                        out.push(Self::skipped(r, why));
                        continue;
                    }
                    let anon = self.anon(self.seed(rep))?;
                    self.pin(node);
                    let count = (self.cfg.region_bytes / 64) as u64;
                    // The range is private to this thread for the call.
                    let res = unsafe { run_access_pattern(&anon, pattern, count, self.seed(rep)) };
                    r.status = "ok".into();
                    r.elapsed_ms = Some(ms(res.elapsed));
                    r.writes = Some(res.accesses);
                    r.achieved_rate = Some(res.accesses as f64 / res.elapsed.as_secs_f64().max(1e-9));
                    r.query_result = res.checksum.to_string();
                    out.push(r);
                }
            }
        }
        Ok(out)
    }

    fn baseline(&self) -> Result<Vec<Record>, BenchError> {
        let mut out = Vec::new();
        for rep in 0..self.cfg.reps {
            out.push(self.move_pages_arm(Load::Quiet, rep, false)?);
        }
        for pooled in [false, true] {
            for rep in 0..self.cfg.reps {
                out.push(self.raw_copy_arm(pooled, rep)?);
            }
        }
        Ok(out)
    }

    fn quiet_sweep(&self) -> Result<Vec<Record>, BenchError> {
        let mut out = Vec::new();
        for area in self.cfg.area_list() {
            for rep in 0..self.cfg.reps {
                info!("quiet sweep: area {area}, rep {rep}");
                out.push(self.leap_arm(area, Load::Quiet, rep, false)?);
            }
        }
        for rep in 0..self.cfg.reps {
            out.push(self.move_pages_arm(Load::Quiet, rep, false)?);
        }
        for rep in 0..self.cfg.reps {
            out.push(self.raw_copy_arm(true, rep)?);
        }
        Ok(out)
    }

    fn burst(&self, sustained: bool) -> Result<Vec<Record>, BenchError> {
        let mut out = Vec::new();
        for load in self.loads() {
            for area in self.cfg.area_list() {
                for rep in 0..self.cfg.reps {
                    info!("{:?}: area {area}, rep {rep}", load);
                    out.push(self.leap_arm(area, load, rep, sustained)?);
                }
            }
            for rep in 0..self.cfg.reps {
                out.push(self.move_pages_arm(load, rep, sustained)?);
            }
            for rep in 0..self.cfg.reps {
                out.push(self.balance_arm(load, rep, sustained)?);
            }
        }
        Ok(out)
    }

    /// Copies `total` bytes from a source-node region into pooled
    /// destination memory in `area` sized pieces, wrapping around the
    /// region. Returns the copy time.
    fn matched_copy(&self, total: u64, area: usize) -> Result<Duration, BenchError> {
        let (_src, region) = self.source_region()?;
        let dst = self.store(self.dst)?;
        let extent = dst.allocate_extent(region.len(), true).map_err(rt)?;
        self.pin(self.dst);
        let len = region.len();
        let mut done = 0u64;
        let mut at = 0usize;
        let start = Instant::now();
        while done < total {
            let n = area.min(len - at).min((total - done) as usize);
            unsafe { std::ptr::copy_nonoverlapping(region.as_ptr().add(at), extent.as_ptr().add(at), n) };
            done += n as u64;
            at = (at + n) % len;
        }
        let elapsed = start.elapsed();
        dst.release_extent(&extent).map_err(rt)?;
        Ok(elapsed)
    }

    fn overhead(&self) -> Result<Vec<Record>, BenchError> {
        let mut out = Vec::new();
        for load in self.loads() {
            for area in self.cfg.area_list() {
                for rep in 0..self.cfg.reps {
                    let mut r = self.leap_arm(area, load, rep, false)?;
                    if let (Some(total), Some(elapsed)) = (r.bytes_copied_total, r.elapsed_ms) {
                        let copy = ms(self.matched_copy(total, area)?);
                        r.copy_ms = Some(copy);
                        r.overhead_ms = Some(elapsed - copy);
                        r.overhead_pct = Some(100.0 * (elapsed - copy) / copy.max(1e-9));
                    }
                    out.push(r);
                }
            }
        }
        Ok(out)
    }
}

/// Q1 and Q6 answers in a compact, comparable form.
fn q1_digest(q: &Q1Result) -> String {
    q.iter()
        .map(|((f, s), g)| format!("{}{}:{}:{}", *f as char, *s as char, g.count, g.sum_charge))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Clone, Copy, PartialEq)]
enum Query {
    Q1,
    Q6,
}

impl Query {
    fn label(self) -> &'static str {
        match self {
            Query::Q1 => "Q1",
            Query::Q6 => "Q6",
        }
    }

    fn run(self, table: &LineitemTable) -> String {
        match self {
            Query::Q1 => {
                let (y, m, d) = Q1_DEFAULT_CUTOFF;
                q1_digest(&q1_scan(table, date(y, m, d)))
            }
            Query::Q6 => q6_scan(table, &Q6Params::default()).to_string(),
        }
    }
}

/// What runs between building the table and answering queries.
enum Mover<'a> {
    None,
    Leap(&'a PhysicalStore, MigrationOptions),
    MovePages,
    Balance,
}

impl Bench<'_> {
    /// Builds the table, fires the migration call, then answers the query
    /// `QUERY_RUNS` times, optionally under concurrent orderkey writes.
    #[allow(clippy::too_many_arguments)]
    fn tpch_runs(
        &self,
        base: Record,
        table: &LineitemTable,
        mover: Mover<'_>,
        region: Option<&VirtualRegion>,
        anon: Option<&AnonRegion>,
        writes: u64,
        query: Query,
        expected: &str,
    ) -> Result<Vec<Record>, BenchError> {
        let stop = AtomicBool::new(false);
        let seed = base.seed;
        thread::scope(|s| {
            let writer = (writes > 0).then(|| s.spawn(|| orderkey_writer(table, writes, None, seed, &stop)));
            self.pin(self.dst);
            let call_start = Instant::now();
            let mut job = None;
            let mut move_result = None;
            match mover {
                Mover::None | Mover::Balance => {}
                Mover::Leap(dst, options) => {
                    let region = region.expect("page-leap runs on a region");
                    job = Some(start_migration(region, dst, options).map_err(rt)?);
                }
                Mover::MovePages => {
                    let anon = anon.expect("kernel moves run on private memory");
                    move_result = Some(baselines::os_move_pages(anon, &self.topo, self.dst).map_err(rt)?);
                }
            }
            let call = call_start.elapsed();
            let mut out = Vec::new();
            for run in 1..=QUERY_RUNS {
                let t = Instant::now();
                let answer = query.run(table);
                let mut r = base.clone();
                r.query = query.label().into();
                r.query_run = Some(run);
                r.query_ms = Some(ms(t.elapsed()));
                r.elapsed_ms = Some(ms(call_start.elapsed()));
                r.status = "ok".into();
                if answer != expected {
                    r.status = "failed".into();
                    r.skip_reason = "query result differs from the unmigrated table".into();
                }
                r.query_result = answer;
                out.push(r);
            }
            let report = job.map(|j| j.wait());
            stop.store(true, Ordering::SeqCst);
            let journal = match writer {
                Some(w) => Some(w.join().map_err(|_| rt("writer thread panicked"))?.map_err(rt)?),
                None => None,
            };
            let migration_failed = report.as_ref().is_some_and(|x| x.status == MigrationStatus::Failed);
            for r in &mut out {
                let (status, reason) = (r.status.clone(), r.skip_reason.clone());
                if let Some(rep) = &report {
                    fill_report(r, rep);
                }
                if let Some(m) = &move_result {
                    fill_baseline(r, m);
                }
                if let Some(j) = &journal {
                    r.writes = Some(j.len() as u64);
                }
                r.status = if status == "failed" || migration_failed {
                    "failed"
                } else {
                    "ok"
                }
                .into();
                if !reason.is_empty() {
                    r.skip_reason = reason;
                }
            }
            // Elapsed is wall time from the call to the end of each run.
            let mut t = ms(call);
            for r in &mut out {
                t += r.query_ms.unwrap_or(0.0);
                r.elapsed_ms = Some(t);
            }
            Ok(out)
        })
    }

    fn tpch(&self) -> Result<Vec<Record>, BenchError> {
        ensure_fault_handler().map_err(rt)?;
        let bytes = self.cfg.region_bytes;
        let seed = self.cfg.seed;
        let expected: Vec<(Query, String)> = {
            let (_s, region) = self.source_region()?;
            let table = LineitemTable::generate(&region, bytes, seed).map_err(rt)?;
            [Query::Q1, Query::Q6].into_iter().map(|q| (q, q.run(&table))).collect()
        };
        let mut out = Vec::new();
        for writes in [0, self.cfg.orderkey_writes()] {
            let load = if writes == 0 { "quiet" } else { "orderkey" };
            for (query, answer) in &expected {
                let mut methods: Vec<(&str, Option<usize>)> = vec![("no-migration", None)];
                methods.extend(self.cfg.area_list().into_iter().map(|a| ("page-leap", Some(a))));
                methods.push(("os-move-pages", None));
                methods.push(("auto-balance", None));
                for (method, area) in methods {
                    for rep in 0..self.cfg.reps {
                        let mut base = self.record(method, rep);
                        base.load = load.into();
                        base.area_bytes = area.map(|a| a as u64);
                        base.seed = seed;
                        if let Some(why) = self.skip_reason(method) {
                            for run in 1..=QUERY_RUNS {
                                let mut r = Self::skipped(base.clone(), why.clone());
                                r.query = query.label().into();
                                r.query_run = Some(run);
                                out.push(r);
                            }
                            continue;
                        }
                        info!("lineitem {method} {load} {}", query.label());
                        let recs = match method {
                            "no-migration" | "page-leap" => {
                                let (_src, region) = self.source_region()?;
                                let table = LineitemTable::generate(&region, bytes, seed).map_err(rt)?;
                                let dst;
                                let mover = match area {
                                    Some(a) => {
                                        dst = self.pooled_destination()?;
                                        Mover::Leap(&dst, self.options(a)?)
                                    }
                                    None => Mover::None,
                                };
                                self.tpch_runs(base, &table, mover, Some(&region), None, writes, *query, answer)?
                            }
                            _ => {
                                let anon = self.anon(seed)?;
                                // The table is dropped before `anon` at the end of this arm.
                                let table = unsafe { LineitemTable::generate_in(&anon, bytes, seed) }.map_err(rt)?;
                                let mover = if method == "os-move-pages" {
                                    Mover::MovePages
                                } else {
                                    Mover::Balance
                                };
                                self.tpch_runs(base, &table, mover, None, Some(&anon), writes, *query, answer)?
                            }
                        };
                        out.extend(recs);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Runs the configured experiment and returns its raw records (without
/// averages).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Record>, BenchError> {
    cfg.validate()?;
    let bench = Bench::new(cfg);
    if cfg.mode == Mode::RealNuma && bench.topo.is_simulated() {
        info!("real-numa mode on a single-node host: every arm is recorded as skipped");
    }
    ensure_fault_handler().map_err(rt)?;
    match cfg.experiment {
        Experiment::Access => bench.access(),
        Experiment::Baseline => bench.baseline(),
        Experiment::QuietSweep => bench.quiet_sweep(),
        Experiment::Burst => bench.burst(false),
        Experiment::Sustained => bench.burst(true),
        Experiment::Overhead => bench.overhead(),
        Experiment::Tpch => bench.tpch(),
    }
}
