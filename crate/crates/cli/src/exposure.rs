use std::io::Write;

use rlbd_core::benders::TRACE_HEADER;
use rlbd_core::model::EvInstance;

use crate::error::CliError;

pub const EXPOSURE_HEADER: &str = "rank,scenario,NC,total_demand,penalty_exposure,revenue_exposure";

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureRow {
    pub rank: usize,
    pub scenario: usize,
    pub count: usize,
    pub total_demand: f64,
    pub penalty_exposure: f64,
    pub revenue_exposure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureReport {
    /// Sorted by selection count, most selected first.
    pub rows: Vec<ExposureRow>,
    /// Rank correlation between selection rank and total demand.
    pub spearman: f64,
}

/// Selection counts per scenario recovered from a trace CSV.
pub fn counts_from_trace(text: &str, n_scenarios: usize) -> Result<Vec<usize>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(CliError::Config("trace: unexpected header".into()));
    }
    let mut counts = vec![0; n_scenarios];
    for (row, line) in lines.enumerate() {
        let selected = line
            .rsplit(',')
            .next()
            .ok_or_else(|| CliError::Config(format!("trace row {}: empty", row + 1)))?;
        if selected == "aggregate" || selected.is_empty() {
            continue;
        }
        for w in selected.split(';') {
            let w: usize = w
                .parse()
                .map_err(|_| CliError::Config(format!("trace row {}: bad scenario '{w}'", row + 1)))?;
            if w >= n_scenarios {
                return Err(CliError::Config(format!(
                    "trace row {}: scenario {w} out of range",
                    row + 1
                )));
            }
            counts[w] += 1;
        }
    }
    Ok(counts)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of tie-averaged ranks; NaN when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return f64::NAN;
    }
    cov / (va * vb).sqrt()
}

pub fn exposure_report(instance: &EvInstance, counts: &[usize]) -> ExposureReport {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let rows = order
        .iter()
        .enumerate()
        .map(|(pos, &w)| {
            let (total, penalty, revenue) = instance.exposure(w);
            ExposureRow {
                rank: pos + 1,
                scenario: w,
                count: counts[w],
                total_demand: total,
                penalty_exposure: penalty,
                revenue_exposure: revenue,
            }
        })
        .collect();
    // Rank 1 is the most selected scenario.
    let neg_counts: Vec<f64> = counts.iter().map(|&c| -(c as f64)).collect();
    let demand: Vec<f64> = (0..counts.len()).map(|w| instance.exposure(w).0).collect();
    ExposureReport {
        rows,
        spearman: spearman(&neg_counts, &demand),
    }
}

pub fn write_exposure_csv<W: Write>(mut out: W, report: &ExposureReport) -> std::io::Result<()> {
    writeln!(out, "{EXPOSURE_HEADER}")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.rank, r.scenario, r.count, r.total_demand, r.penalty_exposure, r.revenue_exposure
        )?;
    }
    Ok(())
}
