//! Output records. One struct, one fixed column order, shared by CSV and
//! JSON.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::BenchError;

/// Value of `rep` on the averaged record of a parameter point.
pub const AVERAGE: &str = "avg";

/// One measurement. Empty optional columns mean "not applicable to this
/// experiment or method". On averaged records integer columns hold rounded
/// means.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub experiment: String,
    pub method: String,
    /// Resolved mode: `simulated` or `real-numa`.
    pub mode: String,
    pub page_size: String,
    pub region_bytes: u64,
    pub area_bytes: Option<u64>,
    /// `quiet`, `uniform`, `skewed` or `orderkey`.
    pub load: String,
    pub rate: Option<f64>,
    pub skew_fraction: Option<f64>,
    pub skew_bytes: Option<u64>,
    /// Access pattern (access experiment) or query name (lineitem).
    pub query: String,
    /// Position of the query in its sequence, from 1.
    pub query_run: Option<u32>,
    pub seed: u64,
    pub reduction_factor: u64,
    pub timeout_s: f64,
    /// Repetition index, or `avg`.
    pub rep: String,
    /// `complete`, `timed-out`, `failed`, `ok` or `skipped`.
    pub status: String,
    pub skip_reason: String,
    pub elapsed_ms: Option<f64>,
    pub writes: Option<u64>,
    /// Achieved writes or accesses per second.
    pub achieved_rate: Option<f64>,
    pub achieved_pct: Option<f64>,
    pub pages_total: Option<u64>,
    pub pages_migrated: Option<u64>,
    pub pages_pending: Option<u64>,
    /// `outcome=count` pairs joined by `;`.
    pub page_status: String,
    pub bytes_copied_total: Option<u64>,
    pub bytes_copied_extra: Option<u64>,
    pub extra_pct: Option<f64>,
    pub retries: Option<u64>,
    pub areas_split: Option<u64>,
    pub dirty_faults: Option<u64>,
    pub spin_timeouts: Option<u64>,
    /// Raw copy of the same byte count, area by area.
    pub copy_ms: Option<f64>,
    pub overhead_ms: Option<f64>,
    pub overhead_pct: Option<f64>,
    pub query_ms: Option<f64>,
    pub query_result: String,
}

/// Column names in output order.
pub const COLUMNS: &[&str] = &[
    "experiment",
    "method",
    "mode",
    "page_size",
    "region_bytes",
    "area_bytes",
    "load",
    "rate",
    "skew_fraction",
    "skew_bytes",
    "query",
    "query_run",
    "seed",
    "reduction_factor",
    "timeout_s",
    "rep",
    "status",
    "skip_reason",
    "elapsed_ms",
    "writes",
    "achieved_rate",
    "achieved_pct",
    "pages_total",
    "pages_migrated",
    "pages_pending",
    "page_status",
    "bytes_copied_total",
    "bytes_copied_extra",
    "extra_pct",
    "retries",
    "areas_split",
    "dirty_faults",
    "spin_timeouts",
    "copy_ms",
    "overhead_ms",
    "overhead_pct",
    "query_ms",
    "query_result",
];

impl Record {
    pub fn is_skipped(&self) -> bool {
        self.status == "skipped"
    }

    /// Fields that identify a parameter point.
    fn point(&self) -> impl PartialEq + '_ {
        (
            (&self.method, self.area_bytes, &self.load),
            (self.rate.map(f64::to_bits), &self.query, self.query_run),
        )
    }
}

pub fn histogram_string<K: std::fmt::Display>(h: &BTreeMap<K, usize>) -> String {
    h.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

fn mean_f(vals: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = vals.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_u(vals: &[Option<u64>]) -> Option<u64> {
    let v: Vec<u64> = vals.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| (v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64).round() as u64)
}

/// Appends, after the repetitions of each parameter point, a record with
/// the mean over its non-skipped repetitions. Points keep first-seen order.
pub fn with_averages(records: Vec<Record>) -> Vec<Record> {
    let mut groups: Vec<Vec<Record>> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|g| g[0].point() == r.point()) {
            Some(g) => g.push(r),
            None => groups.push(vec![r]),
        }
    }
    let mut out = Vec::new();
    for g in groups {
        let measured: Vec<&Record> = g.iter().filter(|r| !r.is_skipped()).collect();
        let mut avg = g[0].clone();
        avg.rep = AVERAGE.into();
        if measured.is_empty() {
            out.extend(g);
            out.push(avg);
            continue;
        }
        macro_rules! avg_f {
            ($($f:ident),*) => { $( avg.$f = mean_f(&measured.iter().map(|r| r.$f).collect::<Vec<_>>()); )* };
        }
        macro_rules! avg_u {
            ($($f:ident),*) => { $( avg.$f = mean_u(&measured.iter().map(|r| r.$f).collect::<Vec<_>>()); )* };
        }
        avg_f!(
            elapsed_ms,
            achieved_rate,
            achieved_pct,
            extra_pct,
            copy_ms,
            overhead_ms,
            overhead_pct,
            query_ms
        );
        avg_u!(
            writes,
            pages_total,
            pages_migrated,
            pages_pending,
            bytes_copied_total,
            bytes_copied_extra,
            retries,
            areas_split,
            dirty_faults,
            spin_timeouts
        );
        let statuses: Vec<&str> = measured.iter().map(|r| r.status.as_str()).collect();
        avg.status = if statuses.iter().all(|s| *s == statuses[0]) {
            statuses[0].to_string()
        } else {
            "mixed".into()
        };
        avg.skip_reason.clear();
        avg.page_status.clear();
        let results: Vec<&str> = measured.iter().map(|r| r.query_result.as_str()).collect();
        if !results.iter().all(|q| *q == results[0]) {
            avg.query_result = "mixed".into();
        }
        out.extend(g);
        out.push(avg);
    }
    out
}

pub fn write_records<W: Write>(records: &[Record], format: Format, out: W) -> Result<(), BenchError> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            if records.is_empty() {
                w.write_record(COLUMNS)?;
            }
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, records)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<Record>, BenchError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(COLUMNS.iter().copied()) {
        return Err(BenchError::Config(format!("unexpected csv header {headers:?}")));
    }
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, rep: &str, elapsed: f64) -> Record {
        Record {
            experiment: "E3-quiet-sweep".into(),
            method: method.into(),
            rep: rep.into(),
            status: "complete".into(),
            elapsed_ms: Some(elapsed),
            pages_pending: Some(0),
            retries: Some(1),
            ..Record::default()
        }
    }

    #[test]
    fn csv_header_matches_column_list() {
        let mut buf = Vec::new();
        write_records(&[Record::default()], Format::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
    }

    #[test]
    fn json_keys_follow_column_order() {
        let text = serde_json::to_string(&Record::default()).unwrap();
        let mut at = 0;
        for c in COLUMNS {
            let pos = text.find(&format!("\"{c}\":")).unwrap();
            assert!(pos >= at, "{c} out of order");
            at = pos;
        }
    }

    #[test]
    fn csv_round_trip() {
        let rs = with_averages(vec![rec("page-leap", "0", 1.0), rec("page-leap", "1", 3.0)]);
        let mut buf = Vec::new();
        write_records(&rs, Format::Csv, &mut buf).unwrap();
        assert_eq!(read_csv(&buf[..]).unwrap(), rs);
    }

    #[test]
    fn averages_per_point() {
        let mut skipped = rec("os-move-pages", "0", 0.0);
        skipped.status = "skipped".into();
        skipped.elapsed_ms = None;
        let rs = with_averages(vec![rec("page-leap", "0", 2.0), skipped, rec("page-leap", "1", 4.0)]);
        assert_eq!(rs.len(), 5);
        assert_eq!(rs[2].rep, AVERAGE);
        assert_eq!(rs[2].elapsed_ms, Some(3.0));
        assert_eq!(rs[2].retries, Some(1));
        assert_eq!(rs[4].status, "skipped");
        assert_eq!(rs[4].elapsed_ms, None);
    }
}
