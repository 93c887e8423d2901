//! CSV tables and gnuplot data files.

use std::io::Write;
use std::path::{Path, PathBuf};

use stcutfem::diagnostics::RunReport;

pub const CSV_HEADER: [&str; 10] = ["h", "dt", "slab", "t", "err_l2_final", "err_l2l2", "e_c", "nnz", "cond", "newton_iters"];

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Shortest round-trip scientific form; empty when absent.
fn sci(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// One row per slab; errors the run did not measure stay empty.
pub fn report_rows(report: &RunReport, errors_measured: bool) -> Vec<[String; 10]> {
    let mut acc = 0.0;
    let last = report.records.len().saturating_sub(1);
    report
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            acc += r.l2l2_increment;
            let final_err = match r.l2_error {
                Some(e) => Some(e),
                None if errors_measured && i == last => Some(report.final_l2_error),
                None => None,
            };
            [
                report.h.to_string(),
                r.dt.to_string(),
                r.slab.to_string(),
                r.t.to_string(),
                sci(final_err),
                sci(errors_measured.then(|| acc.sqrt())),
                sci(Some(r.e_c)),
                r.nnz.to_string(),
                sci(r.cond),
                cell(r.newton_iters),
            ]
        })
        .collect()
}

pub fn write_csv(path: &Path, rows: &[[String; 10]]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

/// `out.csv` with label `tau10` becomes `out.tau10.csv`.
pub fn labelled(path: &Path, label: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{label}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{label}"),
    };
    path.with_file_name(name)
}

/// Whitespace-separated columns; blocks are separated by two blank lines
/// so gnuplot can address them with `index`.
#[derive(Default)]
pub struct PlotData {
    text: String,
}

impl PlotData {
    pub fn block(&mut self, title: &str, columns: &[&str], rows: &[Vec<f64>]) {
        if !self.text.is_empty() {
            self.text.push_str("\n\n");
        }
        self.text.push_str(&format!("# {title}\n# {}\n", columns.join(" ")));
        for r in rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.12e}")).collect();
            self.text.push_str(&cells.join(" "));
            self.text.push('\n');
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::File::create(path)?.write_all(self.text.as_bytes())
    }
}
