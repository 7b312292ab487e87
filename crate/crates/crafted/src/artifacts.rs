//! CSV and PNG artifacts. All CSVs have a header row, comma delimiters and
//! shortest round-trip decimal floats, so values parse back bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use crafted_core::attack::AttackLog;
use crafted_core::eval::MetricMatrix;
use image::{Rgb, RgbImage};

/// Header of the first column in metric matrices.
pub const ROW_HEADER: &str = "attack_target";

pub const ATTACK_LOG_COLUMNS: [&str; 7] =
    ["epoch", "loss", "delta_norm", "grad_norm_pre", "grad_norm_post", "grad_proj_fired", "param_proj_fired"];

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.trim().parse().with_context(|| format!("{}: bad number {s:?}", path.display()))
}

pub fn write_loss_curve(path: &Path, losses: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn read_loss_curve(path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for rec in reader(path)?.records() {
        let rec = rec?;
        out.push(parse_f64(rec.get(1).ok_or_else(|| anyhow!("{}: short row", path.display()))?, path)?);
    }
    Ok(out)
}

pub fn write_attack_log(path: &Path, log: &AttackLog) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(ATTACK_LOG_COLUMNS)?;
    for r in &log.records {
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            r.delta_norm.to_string(),
            r.grad_norm_pre.to_string(),
            r.grad_norm_post.to_string(),
            r.grad_proj_fired.to_string(),
            r.param_proj_fired.to_string(),
        ])?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

/// One attack-log row as `(epoch, loss, delta_norm)`.
pub fn read_attack_log(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let mut r = reader(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != ATTACK_LOG_COLUMNS {
        bail!("{}: unexpected attack-log header", path.display());
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let epoch = rec[0].parse().with_context(|| format!("{}: bad epoch", path.display()))?;
        out.push((epoch, parse_f64(&rec[1], path)?, parse_f64(&rec[2], path)?));
    }
    Ok(out)
}

pub fn write_matrix(path: &Path, m: &MetricMatrix) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec![ROW_HEADER.to_string()];
    header.extend(m.col_labels().iter().cloned());
    w.write_record(&header)?;
    for (label, row) in m.row_labels().iter().zip(m.rows()) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn read_matrix(path: &Path) -> Result<MetricMatrix> {
    let mut r = reader(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some(ROW_HEADER) {
        bail!("{}: first column must be {ROW_HEADER}", path.display());
    }
    let cols: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let (mut labels, mut rows) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        labels.push(rec[0].to_string());
        rows.push(rec.iter().skip(1).map(|v| parse_f64(v, path)).collect::<Result<Vec<_>>>()?);
    }
    MetricMatrix::new(labels, cols, rows).map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// `(label, value)` pairs with a two-column header.
pub fn write_pairs(path: &Path, header: [&str; 2], pairs: &[(String, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for (k, v) in pairs {
        w.write_record([k.clone(), v.to_string()])?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for rec in reader(path)?.records() {
        let rec = rec?;
        out.push((rec[0].to_string(), parse_f64(&rec[1], path)?));
    }
    Ok(out)
}

/// Pixel size of one heatmap cell.
const CELL: u32 = 24;

fn colour(t: f64) -> Rgb<u8> {
    // dark blue -> yellow
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([lerp(30.0, 250.0), lerp(40.0, 220.0), lerp(110.0, 40.0)])
}

/// Renders `m` as a grid of colour cells scaled between the matrix min and max.
/// Labels are not drawn; they live in the matching CSV.
pub fn render_heatmap(m: &MetricMatrix) -> Option<RgbImage> {
    let rows = m.rows();
    let ncols = m.col_labels().len();
    if rows.is_empty() || ncols == 0 {
        return None;
    }
    let all = rows.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = RgbImage::new(ncols as u32 * CELL, rows.len() as u32 * CELL);
    for (y, px) in img.enumerate_rows_mut() {
        for (x, _, p) in px {
            let v = rows[(y / CELL) as usize][(x / CELL) as usize];
            let border = x % CELL == 0 || y % CELL == 0;
            *p = if border { Rgb([255, 255, 255]) } else { colour((v - lo) / span) };
        }
    }
    Some(img)
}

/// Writes a heatmap PNG next to the CSV. Returns `None` when there is nothing
/// to draw or encoding fails, in which case the CSV remains the only output.
pub fn write_heatmap(path: &Path, m: &MetricMatrix) -> Option<PathBuf> {
    let img = render_heatmap(m)?;
    img.save_with_format(path, image::ImageFormat::Png).ok()?;
    Some(path.to_path_buf())
}
