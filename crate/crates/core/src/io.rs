//! CSV formats for parameters and metrics.
//!
//! Parameters: a `widths,d_0,…,d_L` row followed by one row per layer with
//! the d_{i+1}×d_i matrix in row-major order. Metrics: a header row with
//! [`METRICS_COLUMNS`] followed by one row per [`MetricsRecord`].

use std::path::Path;

use crate::data::{csv_err, fmt_f64};
use crate::diagnostics::{MetricsRecord, METRICS_COLUMNS};
use crate::error::{Error, Result};
use crate::network::{Matrix, Params};

pub fn write_params_csv(path: &Path, theta: &Params) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut header = vec!["widths".to_string()];
    if let Some(first) = theta.layers.first() {
        header.push(first.cols.to_string());
    }
    header.extend(theta.layers.iter().map(|m| m.rows.to_string()));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for m in &theta.layers {
        w.write_record(m.data.iter().map(|v| fmt_f64(*v)))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_params_csv(path: &Path) -> Result<Params> {
    let ctx = path.display().to_string();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut rows = r.records();
    let header = rows
        .next()
        .ok_or_else(|| Error::parse(&ctx, "missing widths row"))?
        .map_err(|e| csv_err(path, e))?;
    if header.get(0).map(str::trim) != Some("widths") {
        return Err(Error::parse(&ctx, "first row must start with 'widths'"));
    }
    let widths = header
        .iter()
        .skip(1)
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::parse(&ctx, format!("width '{s}': {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if widths.len() < 2 {
        return Err(Error::parse(&ctx, "need at least two widths"));
    }
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for (i, pair) in widths.windows(2).enumerate() {
        let row_ctx = format!("{ctx} layer {i}");
        let rec = rows
            .next()
            .ok_or_else(|| Error::parse(&row_ctx, "missing row"))?
            .map_err(|e| csv_err(path, e))?;
        let data = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(&row_ctx, format!("'{s}': {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if data.len() != pair[0] * pair[1] {
            return Err(Error::parse(
                &row_ctx,
                format!("expected {}×{} = {} values, got {}", pair[1], pair[0], pair[0] * pair[1], data.len()),
            ));
        }
        layers.push(Matrix {
            rows: pair[1],
            cols: pair[0],
            data,
        });
    }
    if rows.next().is_some() {
        return Err(Error::parse(&ctx, "trailing rows after the last layer"));
    }
    Ok(Params { layers })
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(METRICS_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in records {
        let mut row = vec![r.step.to_string()];
        row.extend(
            [
                r.time,
                r.eta_eff,
                r.log_loss,
                r.q_min,
                r.q_soft_margin,
                r.q_margin,
                r.margin_l1,
                r.margin_l2,
                r.margin_lp,
                r.horizon_margin,
                r.multi_q_margin,
                r.balance_drift_max,
                r.beta,
                r.e_tan,
                r.kkt_eps,
                r.kkt_delta,
                r.alignment_gap,
                r.active_neurons,
                r.objective_alpha_half,
            ]
            .map(fmt_f64),
        );
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let ctx = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() != METRICS_COLUMNS.len() || header.iter().zip(METRICS_COLUMNS).any(|(a, b)| a.trim() != b) {
        return Err(Error::parse(&ctx, format!("header must be {}", METRICS_COLUMNS.join(","))));
    }
    r.deserialize()
        .enumerate()
        .map(|(row, rec)| rec.map_err(|e| Error::parse(format!("{ctx} row {row}"), e.to_string())))
        .collect()
}
