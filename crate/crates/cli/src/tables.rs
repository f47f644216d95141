//! CSV layouts of the CLI outputs and their readers.

use std::io::{Read, Write};

use divkernel::conditioning::{BinRow, ConditionalTable};

/// A binned table with a label, stored as consecutive rows of one CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTable {
    pub name: String,
    pub table: ConditionalTable,
}

pub const SERIES_HEADER: [&str; 7] = ["series", "bin_left", "bin_right", "count", "mean", "se", "log_density"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: impl std::fmt::Display) -> String {
    format!("csv: {e}")
}

/// `series,bin_left,bin_right,count,mean,se,log_density`; missing values
/// are empty fields.
pub fn write_series<W: Write>(w: W, tables: &[NamedTable]) -> Result<(), String> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SERIES_HEADER).map_err(csv_err)?;
    for t in tables {
        for r in &t.table.rows {
            wr.write_record([t.name.clone(), r.left.to_string(), r.right.to_string(), r.count.to_string(), opt(r.mean), opt(r.se), opt(r.log_density)])
                .map_err(csv_err)?;
        }
    }
    wr.flush().map_err(csv_err)
}

/// Reads [`write_series`] output back. Out-of-range counts are not stored,
/// so each table's total is the sum of its bin counts.
pub fn read_series<R: Read>(r: R) -> Result<Vec<NamedTable>, String> {
    let mut rd = csv::Reader::from_reader(r);
    if rd.headers().map_err(csv_err)?.iter().ne(SERIES_HEADER) {
        return Err("unexpected header".into());
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s}: {e}"));
    let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
    let mut out: Vec<NamedTable> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let row = BinRow {
            left: num(&rec[1])?,
            right: num(&rec[2])?,
            count: rec[3].parse().map_err(|e| format!("{}: {e}", &rec[3]))?,
            mean: opt(&rec[4])?,
            se: opt(&rec[5])?,
            log_density: opt(&rec[6])?,
        };
        match out.last_mut() {
            Some(t) if t.name == rec[0] => t.table.rows.push(row),
            _ => out.push(NamedTable { name: rec[0].to_string(), table: ConditionalTable { rows: vec![row], out_of_range: 0, total: 0 } }),
        }
    }
    for t in &mut out {
        t.table.total = t.table.rows.iter().map(|r| r.count).sum();
    }
    Ok(out)
}

/// One row of the ergodic output.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicRow {
    /// Orbit index, `combined`, or `fd`.
    pub label: String,
    pub direction: usize,
    pub phi_avg: Option<f64>,
    pub response: f64,
    pub se: Option<f64>,
}

pub const ERGODIC_HEADER: [&str; 5] = ["label", "direction", "phi_avg", "response", "se"];

pub fn write_ergodic<W: Write>(w: W, rows: &[ErgodicRow]) -> Result<(), String> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(ERGODIC_HEADER).map_err(csv_err)?;
    for r in rows {
        wr.write_record([r.label.clone(), r.direction.to_string(), opt(r.phi_avg), r.response.to_string(), opt(r.se)]).map_err(csv_err)?;
    }
    wr.flush().map_err(csv_err)
}

pub fn read_ergodic<R: Read>(r: R) -> Result<Vec<ErgodicRow>, String> {
    let mut rd = csv::Reader::from_reader(r);
    if rd.headers().map_err(csv_err)?.iter().ne(ERGODIC_HEADER) {
        return Err("unexpected header".into());
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s}: {e}"));
    let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
    rd.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(ErgodicRow {
                label: rec[0].to_string(),
                direction: rec[1].parse().map_err(|e| format!("{}: {e}", &rec[1]))?,
                phi_avg: opt(&rec[2])?,
                response: num(&rec[3])?,
                se: opt(&rec[4])?,
            })
        })
        .collect()
}
