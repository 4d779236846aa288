//! Aggregation of per-frame result files into summary tables.
//!
//! Input files must carry the exact column schema written by the tracker;
//! anything else is rejected rather than guessed at.  Rows from multiple
//! files are concatenated before aggregation, grouped by method, and
//! reported as mean ± std in millimeters and degrees.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use arcpose::stats;

use crate::error::{CliError, Result};
use crate::tracker::result_header;

/// One parsed row of a results file; absent cells become `None`.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub frame: usize,
    pub method: String,
    pub status: String,
    pub e_t: Option<f64>,
    pub e_r: Option<f64>,
    pub e_x: Option<f64>,
    pub e_y: Option<f64>,
    pub e_z: Option<f64>,
    pub e_rx: Option<f64>,
    pub e_ry: Option<f64>,
    pub e_rz: Option<f64>,
    pub q95_t: Option<f64>,
    pub q95_r: Option<f64>,
    pub nll_s_t: Option<f64>,
    pub nll_s_r: Option<f64>,
    pub is_t: Option<f64>,
    pub is_r: Option<f64>,
    pub modality: Option<String>,
    pub minor_weight: Option<f64>,
    pub ashman_d: Option<f64>,
    pub gt_in_dominant: Option<bool>,
    pub iterations: Option<usize>,
    pub stop_reason: Option<String>,
    pub wall_time_ms: Option<f64>,
}

fn parse_opt_f64(cell: &str, what: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|_| CliError::data(format!("bad {what} value {cell:?}")))
}

fn parse_opt_str(cell: &str) -> Option<String> {
    if cell.is_empty() {
        None
    } else {
        Some(cell.to_string())
    }
}

/// Parses a results CSV, enforcing the exact tracker schema and the
/// per-frame consistency of the axis decomposition with the total error.
pub fn parse_results(text: &str, origin: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::data(format!("{origin}: empty results file")))?;
    if header != result_header() {
        return Err(CliError::data(format!(
            "{origin}: unknown results schema (header mismatch)"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 24 {
            return Err(CliError::data(format!(
                "{origin}: row {lineno}: expected 24 cells, got {}",
                cells.len()
            )));
        }
        let row = ResultRow {
            frame: cells[0]
                .parse()
                .map_err(|_| CliError::data(format!("{origin}: bad frame index")))?,
            method: cells[1].to_string(),
            status: cells[2].to_string(),
            e_t: parse_opt_f64(cells[3], "e_t_m")?,
            e_r: parse_opt_f64(cells[4], "e_r_rad")?,
            e_x: parse_opt_f64(cells[5], "e_x_m")?,
            e_y: parse_opt_f64(cells[6], "e_y_m")?,
            e_z: parse_opt_f64(cells[7], "e_z_m")?,
            e_rx: parse_opt_f64(cells[8], "e_rx_rad")?,
            e_ry: parse_opt_f64(cells[9], "e_ry_rad")?,
            e_rz: parse_opt_f64(cells[10], "e_rz_rad")?,
            q95_t: parse_opt_f64(cells[11], "q95_t_m")?,
            q95_r: parse_opt_f64(cells[12], "q95_r_rad")?,
            nll_s_t: parse_opt_f64(cells[13], "nll_s_t")?,
            nll_s_r: parse_opt_f64(cells[14], "nll_s_r")?,
            is_t: parse_opt_f64(cells[15], "is_t")?,
            is_r: parse_opt_f64(cells[16], "is_r")?,
            modality: parse_opt_str(cells[17]),
            minor_weight: parse_opt_f64(cells[18], "minor_weight")?,
            ashman_d: parse_opt_f64(cells[19], "ashman_d")?,
            gt_in_dominant: match cells[20] {
                "" => None,
                "1" => Some(true),
                "0" => Some(false),
                other => {
                    return Err(CliError::data(format!(
                        "{origin}: bad gt_in_dominant value {other:?}"
                    )))
                }
            },
            iterations: if cells[21].is_empty() {
                None
            } else {
                Some(cells[21].parse().map_err(|_| {
                    CliError::data(format!("{origin}: bad iterations value"))
                })?)
            },
            stop_reason: parse_opt_str(cells[22]),
            wall_time_ms: parse_opt_f64(cells[23], "wall_time_ms")?,
        };
        if let (Some(e_t), Some(x), Some(y), Some(z)) = (row.e_t, row.e_x, row.e_y, row.e_z) {
            let norm = (x * x + y * y + z * z).sqrt();
            if (norm - e_t).abs() > 1e-9 {
                return Err(CliError::data(format!(
                    "{origin}: row {lineno}: axis decomposition norm {norm} \
                     disagrees with e_t {e_t}"
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path)?;
    parse_results(&text, &path.display().to_string())
}

/// Mean and sample standard deviation of a metric over the rows that carry
/// it, after applying `map` (unit conversion, absolute value).
fn stat(rows: &[&ResultRow], get: impl Fn(&ResultRow) -> Option<f64>) -> Option<(f64, f64)> {
    let values: Vec<f64> = rows.iter().filter_map(|r| get(r)).collect();
    if values.is_empty() {
        return None;
    }
    Some((stats::mean(&values), stats::sample_std(&values)))
}

const MM: f64 = 1e3;
const DEG: f64 = 180.0 / core::f64::consts::PI;

/// Aggregate over one method's rows.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: String,
    pub n_frames: usize,
    pub n_with_gt: usize,
    pub n_ok: usize,
    /// (mean, std) pairs in millimeters.
    pub e_t_mm: Option<(f64, f64)>,
    pub e_x_mm: Option<(f64, f64)>,
    pub e_y_mm: Option<(f64, f64)>,
    pub e_z_mm: Option<(f64, f64)>,
    /// (mean, std) pairs in degrees.
    pub e_r_deg: Option<(f64, f64)>,
    pub e_rx_deg: Option<(f64, f64)>,
    pub e_ry_deg: Option<(f64, f64)>,
    pub e_rz_deg: Option<(f64, f64)>,
    pub q95_t_mm: Option<(f64, f64)>,
    pub q95_r_deg: Option<(f64, f64)>,
    pub nll_s_t: Option<(f64, f64)>,
    pub nll_s_r: Option<(f64, f64)>,
    pub is_t_mm: Option<(f64, f64)>,
    pub is_r_deg: Option<(f64, f64)>,
    /// Fraction of classified frames labeled bimodal.
    pub bimodal_rate: Option<f64>,
    /// Fraction of assignable bimodal frames whose gt fell in the dominant
    /// mode.
    pub gt_in_dominant_rate: Option<f64>,
}

fn summarize_method(method: &str, rows: &[&ResultRow]) -> MethodSummary {
    let scaled = |get: fn(&ResultRow) -> Option<f64>, k: f64| {
        move |r: &ResultRow| get(r).map(|v| v * k)
    };
    let abs_scaled = |get: fn(&ResultRow) -> Option<f64>, k: f64| {
        move |r: &ResultRow| get(r).map(|v| v.abs() * k)
    };

    let classified: Vec<&&ResultRow> = rows.iter().filter(|r| r.modality.is_some()).collect();
    let bimodal = classified
        .iter()
        .filter(|r| r.modality.as_deref() == Some("bimodal"))
        .count();
    let assignable: Vec<&&ResultRow> = rows
        .iter()
        .filter(|r| r.gt_in_dominant.is_some())
        .collect();
    let in_dominant = assignable
        .iter()
        .filter(|r| r.gt_in_dominant == Some(true))
        .count();

    MethodSummary {
        method: method.to_string(),
        n_frames: rows.len(),
        n_with_gt: rows.iter().filter(|r| r.e_t.is_some()).count(),
        n_ok: rows.iter().filter(|r| r.status == "ok").count(),
        e_t_mm: stat(rows, scaled(|r| r.e_t, MM)),
        e_x_mm: stat(rows, abs_scaled(|r| r.e_x, MM)),
        e_y_mm: stat(rows, abs_scaled(|r| r.e_y, MM)),
        e_z_mm: stat(rows, abs_scaled(|r| r.e_z, MM)),
        e_r_deg: stat(rows, scaled(|r| r.e_r, DEG)),
        e_rx_deg: stat(rows, abs_scaled(|r| r.e_rx, DEG)),
        e_ry_deg: stat(rows, abs_scaled(|r| r.e_ry, DEG)),
        e_rz_deg: stat(rows, abs_scaled(|r| r.e_rz, DEG)),
        q95_t_mm: stat(rows, scaled(|r| r.q95_t, MM)),
        q95_r_deg: stat(rows, scaled(|r| r.q95_r, DEG)),
        nll_s_t: stat(rows, scaled(|r| r.nll_s_t, 1.0)),
        nll_s_r: stat(rows, scaled(|r| r.nll_s_r, 1.0)),
        is_t_mm: stat(rows, scaled(|r| r.is_t, MM)),
        is_r_deg: stat(rows, scaled(|r| r.is_r, DEG)),
        bimodal_rate: (!classified.is_empty())
            .then(|| bimodal as f64 / classified.len() as f64),
        gt_in_dominant_rate: (!assignable.is_empty())
            .then(|| in_dominant as f64 / assignable.len() as f64),
    }
}

/// Groups rows by method (first-seen order) and aggregates each group.
pub fn summarize(rows: &[ResultRow]) -> Vec<MethodSummary> {
    let mut order: Vec<String> = Vec::new();
    for row in rows {
        if !order.contains(&row.method) {
            order.push(row.method.clone());
        }
    }
    order
        .iter()
        .map(|method| {
            let group: Vec<&ResultRow> =
                rows.iter().filter(|r| &r.method == method).collect();
            summarize_method(method, &group)
        })
        .collect()
}

fn csv_pair(cell: Option<(f64, f64)>) -> String {
    match cell {
        Some((m, s)) => format!("{m:.6e},{s:.6e}"),
        None => ",".to_string(),
    }
}

fn csv_rate(cell: Option<f64>) -> String {
    cell.map(|v| format!("{v:.6e}")).unwrap_or_default()
}

pub const SUMMARY_HEADER: &str = "method,n_frames,n_with_gt,n_ok,\
mean_e_t_mm,std_e_t_mm,mean_e_r_deg,std_e_r_deg,\
mean_abs_e_x_mm,std_abs_e_x_mm,mean_abs_e_y_mm,std_abs_e_y_mm,\
mean_abs_e_z_mm,std_abs_e_z_mm,\
mean_abs_e_rx_deg,std_abs_e_rx_deg,mean_abs_e_ry_deg,std_abs_e_ry_deg,\
mean_abs_e_rz_deg,std_abs_e_rz_deg,\
mean_q95_t_mm,std_q95_t_mm,mean_q95_r_deg,std_q95_r_deg,\
mean_nll_s_t,std_nll_s_t,mean_nll_s_r,std_nll_s_r,\
mean_is_t_mm,std_is_t_mm,mean_is_r_deg,std_is_r_deg,\
bimodal_rate,gt_in_dominant_rate";

pub fn summary_csv(summaries: &[MethodSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summaries {
        let cells = [
            s.method.clone(),
            s.n_frames.to_string(),
            s.n_with_gt.to_string(),
            s.n_ok.to_string(),
            csv_pair(s.e_t_mm),
            csv_pair(s.e_r_deg),
            csv_pair(s.e_x_mm),
            csv_pair(s.e_y_mm),
            csv_pair(s.e_z_mm),
            csv_pair(s.e_rx_deg),
            csv_pair(s.e_ry_deg),
            csv_pair(s.e_rz_deg),
            csv_pair(s.q95_t_mm),
            csv_pair(s.q95_r_deg),
            csv_pair(s.nll_s_t),
            csv_pair(s.nll_s_r),
            csv_pair(s.is_t_mm),
            csv_pair(s.is_r_deg),
            csv_rate(s.bimodal_rate),
            csv_rate(s.gt_in_dominant_rate),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn text_pair(cell: Option<(f64, f64)>) -> String {
    match cell {
        Some((m, s)) => format!("{m:8.3} \u{b1} {s:7.3}"),
        None => format!("{:18}", "-"),
    }
}

fn text_rate(cell: Option<f64>) -> String {
    match cell {
        Some(v) => format!("{:6.1}%", v * 100.0),
        None => format!("{:7}", "-"),
    }
}

/// Renders an aligned plain-text table, one block per metric family.
pub fn summary_text(summaries: &[MethodSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>7} {:>8} {:>5}  {:<18} {:<18} {:<18} {:<18}",
        "method", "frames", "with_gt", "ok", "e_t (mm)", "e_r (deg)", "q95_t (mm)", "q95_r (deg)"
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>8} {:>5}  {} {} {} {}",
            s.method,
            s.n_frames,
            s.n_with_gt,
            s.n_ok,
            text_pair(s.e_t_mm),
            text_pair(s.e_r_deg),
            text_pair(s.q95_t_mm),
            text_pair(s.q95_r_deg),
        );
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<8} {:<18} {:<18} {:<18} {:<18} {:<18} {:<18}",
        "method",
        "|e_x| (mm)",
        "|e_y| (mm)",
        "|e_z| (mm)",
        "|e_rx| (deg)",
        "|e_ry| (deg)",
        "|e_rz| (deg)"
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<8} {} {} {} {} {} {}",
            s.method,
            text_pair(s.e_x_mm),
            text_pair(s.e_y_mm),
            text_pair(s.e_z_mm),
            text_pair(s.e_rx_deg),
            text_pair(s.e_ry_deg),
            text_pair(s.e_rz_deg),
        );
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<8} {:<18} {:<18} {:<18} {:<18} {:>8} {:>11}",
        "method",
        "nll_s_t",
        "nll_s_r",
        "is_t (mm)",
        "is_r (deg)",
        "bimodal",
        "gt_in_dom"
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<8} {} {} {} {} {:>8} {:>11}",
            s.method,
            text_pair(s.nll_s_t),
            text_pair(s.nll_s_r),
            text_pair(s.is_t_mm),
            text_pair(s.is_r_deg),
            text_rate(s.bimodal_rate),
            text_rate(s.gt_in_dominant_rate),
        );
    }
    out
}

pub struct EvalOutput {
    pub summary_csv: String,
    pub summary_text: String,
}

pub fn run_eval(paths: &[std::path::PathBuf]) -> Result<EvalOutput> {
    if paths.is_empty() {
        return Err(CliError::data("eval requires at least one results file"));
    }
    let mut rows = Vec::new();
    for path in paths {
        rows.extend(load_results(path)?);
    }
    let summaries = summarize(&rows);
    Ok(EvalOutput {
        summary_csv: summary_csv(&summaries),
        summary_text: summary_text(&summaries),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_row_csv() -> String {
        let mut csv = result_header();
        csv.push('\n');
        // 3-4-0 triangle: e_t = 5 mm.
        csv.push_str(
            "0,svn,ok,5.000000000000e-3,1.000000000000e-1,\
             3.000000000000e-3,4.000000000000e-3,0.000000000000e0,\
             1.000000000000e-1,0.000000000000e0,0.000000000000e0,\
             6.000000000000e-3,1.200000000000e-1,1.0,1.1,2.0e-3,1.5e-1,\
             unimodal,0.0,,,12,converged,\n",
        );
        csv
    }

    #[test]
    fn single_row_mean_equals_value_and_std_zero() {
        let rows = parse_results(&one_row_csv(), "test").unwrap();
        let summaries = summarize(&rows);
        assert_eq!(summaries.len(), 1);
        let s = &summaries[0];
        let (mean, std) = s.e_t_mm.unwrap();
        assert!((mean - 5.0).abs() < 1e-12);
        assert_eq!(std, 0.0);
        assert_eq!(s.bimodal_rate, Some(0.0));
        assert_eq!(s.gt_in_dominant_rate, None);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let text = "frame,method\n0,svn\n";
        assert!(parse_results(text, "test").is_err());
    }

    #[test]
    fn axis_norm_inconsistency_is_rejected() {
        let bad = one_row_csv().replace("3.000000000000e-3", "9.000000000000e-3");
        assert!(parse_results(&bad, "test").is_err());
    }

    #[test]
    fn concatenation_groups_by_method() {
        let rows_a = parse_results(&one_row_csv(), "a").unwrap();
        let pf_csv = one_row_csv().replace(",svn,", ",pf,");
        let rows_b = parse_results(&pf_csv, "b").unwrap();
        let mut all = rows_a;
        all.extend(rows_b);
        let summaries = summarize(&all);
        assert_eq!(summaries.len(), 2);
        assert_eq!(summaries[0].method, "svn");
        assert_eq!(summaries[1].method, "pf");
    }
}
