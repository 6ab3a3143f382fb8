//! A generated, columnar lineitem table laid over a region, with hand-written
//! Q1 and Q6 scans.
//!
//! Decimal columns are fixed point with two fractional digits. Column order
//! inside the region: orderkey, quantity, extendedprice, discount, tax (all
//! 8 bytes), shipdate (4 bytes), returnflag, linestatus (1 byte each).

use std::collections::BTreeMap;
use std::sync::atomic::AtomicBool;

use chrono::NaiveDate;
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use super::burst::{run_burst, BurstSpec};
use super::journal::WriteJournal;
use super::WorkloadError;
use crate::baselines::MemoryRange;
use crate::vmap::VirtualRegion;

pub const BYTES_PER_ROW: usize = 8 * 5 + 4 + 1 + 1;

/// Days since 1970-01-01.
pub fn date(y: i32, m: u32, d: u32) -> i32 {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
    let day = NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
    (day - epoch).num_days() as i32
}

/// 1998-12-01 minus 90 days.
pub const Q1_DEFAULT_CUTOFF: (i32, u32, u32) = (1998, 9, 2);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Row {
    pub orderkey: u64,
    /// Hundredths.
    pub quantity: i64,
    pub extendedprice: i64,
    pub discount: i64,
    pub tax: i64,
    pub shipdate: i32,
    pub returnflag: u8,
    pub linestatus: u8,
}

/// A table laid over a memory range. Tables over a [`VirtualRegion`] keep
/// the region alive; tables over other ranges borrow them unchecked.
#[derive(Clone, Debug)]
pub struct LineitemTable {
    base: usize,
    len: usize,
    page_bytes: usize,
    rows: usize,
    region: Option<VirtualRegion>,
}

impl LineitemTable {
    /// Fills `region` with `floor(target_bytes / BYTES_PER_ROW)` seeded rows.
    pub fn generate(region: &VirtualRegion, target_bytes: usize, seed: u64) -> Result<Self, WorkloadError> {
        let mut table = Self::over(region, target_bytes / BYTES_PER_ROW)?;
        table.region = Some(region.clone());
        table.fill(seed);
        Ok(table)
    }

    /// Like [`generate`](LineitemTable::generate) for any writable range.
    ///
    /// # Safety
    /// `range` must stay mapped read-write for the lifetime of the table and
    /// of every clone of it.
    pub unsafe fn generate_in<R: MemoryRange + ?Sized>(
        range: &R,
        target_bytes: usize,
        seed: u64,
    ) -> Result<Self, WorkloadError> {
        let table = Self::over(range, target_bytes / BYTES_PER_ROW)?;
        table.fill(seed);
        Ok(table)
    }

    fn over<R: MemoryRange + ?Sized>(range: &R, rows: usize) -> Result<Self, WorkloadError> {
        let needed = rows * BYTES_PER_ROW;
        if needed > range.len() {
            return Err(WorkloadError::RegionTooSmall {
                needed,
                available: range.len(),
            });
        }
        Ok(LineitemTable {
            base: range.base(),
            len: range.len(),
            page_bytes: range.page_bytes(),
            rows,
            region: None,
        })
    }

    fn fill(&self, seed: u64) {
        let mut rng = SmallRng::seed_from_u64(seed);
        let (lo, hi) = (date(1992, 1, 2), date(1998, 12, 1));
        let receipt_cutoff = date(1995, 6, 17);
        for i in 0..self.rows {
            let quantity = rng.gen_range(1..=50i64) * 100;
            let unit_price = rng.gen_range(90_000..=209_999i64);
            let shipdate = rng.gen_range(lo..=hi);
            let shipped = shipdate + rng.gen_range(1..=30) <= receipt_cutoff;
            let row = Row {
                orderkey: (i / 4 + 1) as u64,
                quantity,
                extendedprice: unit_price * quantity / 100,
                discount: rng.gen_range(0..=10),
                tax: rng.gen_range(0..=8),
                shipdate,
                returnflag: if shipped {
                    if rng.gen_bool(0.5) {
                        b'R'
                    } else {
                        b'A'
                    }
                } else {
                    b'N'
                },
                linestatus: if shipdate > receipt_cutoff { b'O' } else { b'F' },
            };
            self.set_row(i, &row);
        }
    }

    /// A table over rows written by the caller, e.g. with [`set_row`].
    ///
    /// [`set_row`]: LineitemTable::set_row
    pub fn with_rows(region: &VirtualRegion, rows: usize) -> Result<Self, WorkloadError> {
        let mut table = Self::over(region, rows)?;
        table.region = Some(region.clone());
        Ok(table)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// The region the table lives in, unless it was built over raw memory.
    pub fn region(&self) -> Option<&VirtualRegion> {
        self.region.as_ref()
    }

    /// Byte range of the orderkey column.
    pub fn orderkey_range(&self) -> std::ops::Range<usize> {
        0..8 * self.rows
    }

    fn col8(&self, col: usize) -> *const i64 {
        (self.base + col * 8 * self.rows) as *const i64
    }

    fn shipdates(&self) -> *const i32 {
        (self.base + 40 * self.rows) as *const i32
    }

    fn flags(&self) -> *const u8 {
        (self.base + 44 * self.rows) as *const u8
    }

    fn statuses(&self) -> *const u8 {
        (self.base + 45 * self.rows) as *const u8
    }

    pub fn set_row(&self, i: usize, row: &Row) {
        assert!(i < self.rows);
        let base = self.base;
        let n = self.rows;
        unsafe {
            for (col, v) in [
                row.orderkey as i64,
                row.quantity,
                row.extendedprice,
                row.discount,
                row.tax,
            ]
            .into_iter()
            .enumerate()
            {
                (self.col8(col) as *mut i64).add(i).write_volatile(v);
            }
            ((base + 40 * n) as *mut i32).add(i).write_volatile(row.shipdate);
            ((base + 44 * n) as *mut u8).add(i).write_volatile(row.returnflag);
            ((base + 45 * n) as *mut u8).add(i).write_volatile(row.linestatus);
        }
    }

    pub fn row(&self, i: usize) -> Row {
        assert!(i < self.rows);
        unsafe {
            Row {
                orderkey: self.col8(0).add(i).read_volatile() as u64,
                quantity: self.col8(1).add(i).read_volatile(),
                extendedprice: self.col8(2).add(i).read_volatile(),
                discount: self.col8(3).add(i).read_volatile(),
                tax: self.col8(4).add(i).read_volatile(),
                shipdate: self.shipdates().add(i).read_volatile(),
                returnflag: self.flags().add(i).read_volatile(),
                linestatus: self.statuses().add(i).read_volatile(),
            }
        }
    }
}

impl MemoryRange for LineitemTable {
    fn base(&self) -> usize {
        self.base
    }
    fn len(&self) -> usize {
        self.len
    }
    fn page_bytes(&self) -> usize {
        self.page_bytes
    }
}

/// Aggregates of one (returnflag, linestatus) group. Sums are exact: prices
/// and quantities have scale 100, `sum_disc_price` scale 10^4 and
/// `sum_charge` scale 10^6.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Q1Group {
    pub sum_qty: i128,
    pub sum_base_price: i128,
    pub sum_disc_price: i128,
    pub sum_charge: i128,
    pub sum_disc: i128,
    pub count: u64,
}

impl Q1Group {
    pub fn sum_qty(&self) -> f64 {
        self.sum_qty as f64 / 1e2
    }
    pub fn sum_base_price(&self) -> f64 {
        self.sum_base_price as f64 / 1e2
    }
    pub fn sum_disc_price(&self) -> f64 {
        self.sum_disc_price as f64 / 1e4
    }
    pub fn sum_charge(&self) -> f64 {
        self.sum_charge as f64 / 1e6
    }
    pub fn avg_qty(&self) -> f64 {
        self.sum_qty() / self.count as f64
    }
    pub fn avg_price(&self) -> f64 {
        self.sum_base_price() / self.count as f64
    }
    pub fn avg_disc(&self) -> f64 {
        self.sum_disc as f64 / 1e2 / self.count as f64
    }
}

pub type Q1Result = BTreeMap<(u8, u8), Q1Group>;

/// Q1 over rows shipped on or before `cutoff` (days since epoch).
pub fn q1_scan(table: &LineitemTable, cutoff: i32) -> Q1Result {
    // Dense accumulators indexed by the two flag bytes.
    let mut acc = vec![Q1Group::default(); 256 * 256];
    let n = table.rows;
    unsafe {
        let (qty, price, disc, tax) = (table.col8(1), table.col8(2), table.col8(3), table.col8(4));
        let (ship, flag, status) = (table.shipdates(), table.flags(), table.statuses());
        for i in 0..n {
            if *ship.add(i) > cutoff {
                continue;
            }
            let g = &mut acc[(*flag.add(i) as usize) << 8 | *status.add(i) as usize];
            let (p, d) = (*price.add(i) as i128, *disc.add(i) as i128);
            let disc_price = p * (100 - d);
            g.sum_qty += *qty.add(i) as i128;
            g.sum_base_price += p;
            g.sum_disc_price += disc_price;
            g.sum_charge += disc_price * (100 + *tax.add(i) as i128);
            g.sum_disc += d;
            g.count += 1;
        }
    }
    acc.into_iter()
        .enumerate()
        .filter(|(_, g)| g.count > 0)
        .map(|(k, g)| (((k >> 8) as u8, k as u8), g))
        .collect()
}

/// Q6 predicate bounds. Discounts and quantities in hundredths; the
/// discount range is inclusive, the date range half-open.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Q6Params {
    pub date_lo: i32,
    pub date_hi: i32,
    pub disc_lo: i64,
    pub disc_hi: i64,
    pub qty_max: i64,
}

impl Default for Q6Params {
    fn default() -> Self {
        Q6Params {
            date_lo: date(1994, 1, 1),
            date_hi: date(1995, 1, 1),
            disc_lo: 5,
            disc_hi: 7,
            qty_max: 2400,
        }
    }
}

/// Q6 revenue, scale 10^4.
pub fn q6_scan(table: &LineitemTable, p: &Q6Params) -> i128 {
    let mut revenue = 0i128;
    unsafe {
        let (qty, price, disc, ship) = (table.col8(1), table.col8(2), table.col8(3), table.shipdates());
        for i in 0..table.rows {
            let s = *ship.add(i);
            let d = *disc.add(i);
            if s >= p.date_lo && s < p.date_hi && d >= p.disc_lo && d <= p.disc_hi && *qty.add(i) < p.qty_max {
                revenue += *price.add(i) as i128 * d as i128;
            }
        }
    }
    revenue
}

/// `count` journaled writes into the orderkey column of uniformly chosen
/// rows, paced at `rate` writes per second or unpaced when `rate` is `None`.
pub fn orderkey_writer(
    table: &LineitemTable,
    count: u64,
    rate: Option<f64>,
    seed: u64,
    stop: &AtomicBool,
) -> Result<WriteJournal, WorkloadError> {
    if count == 0 || table.rows == 0 {
        return Ok(WriteJournal::default());
    }
    let spec = BurstSpec::uniform(rate.unwrap_or(f64::INFINITY))
        .max_writes(count)
        .target(table.orderkey_range())
        .journaled(true)
        .seed(seed);
    Ok(run_burst(table, &spec, stop)?.journal.expect("journaled burst"))
}
