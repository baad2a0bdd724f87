//! CSV and static-image emitters for diagnostic outputs.
//!
//! Curves and histograms go to CSV; a small hand-rolled SVG writer turns
//! curve CSV data into line plots, and sample batches render to PNG grids.

use ndarray::Array2;
use std::path::Path;

use super::{GradNormHistogram, StabilityCurve};
use crate::datamodel::write_png;
use crate::error::{Error, Result};

pub fn write_curve_csv(curve: &StabilityCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("csv: {e}")))?;
    w.write_record(["scale", "misprediction_rate"])
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    for (s, r) in curve.scales.iter().zip(&curve.misprediction_rate) {
        w.write_record([format!("{s}"), format!("{r}")])
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_histogram_csv(hists: &[GradNormHistogram], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("csv: {e}")))?;
    w.write_record(["set", "bin_upper_edge", "count"])
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    for h in hists {
        for (i, &count) in h.counts.iter().enumerate() {
            let edge = h
                .edges
                .get(i)
                .map_or("inf".to_string(), |e| format!("{e}"));
            w.write_record([h.name.clone(), edge, format!("{count}")])
                .map_err(|e| Error::Format(format!("csv: {e}")))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_matrix_csv(grid: &Array2<f64>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("csv: {e}")))?;
    for row in grid.rows() {
        let rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        w.write_record(&rec)
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_probe_csv(rows: &[(f64, f64)], header: (&str, &str), path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("csv: {e}")))?;
    w.write_record([header.0, header.1])
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    for (a, b) in rows {
        w.write_record([format!("{a}"), format!("{b}")])
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Minimal SVG line plot of one or more named series.
pub fn write_svg_curves(
    series: &[(String, Vec<(f64, f64)>)],
    title: &str,
    path: &Path,
) -> Result<()> {
    let (w, h) = (640.0, 400.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 40.0, 50.0);
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (_, pts) in series {
        for &(x, y) in pts {
            xs.push(x);
            ys.push(y);
        }
    }
    if xs.is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let xr = (x1 - x0).max(1e-12);
    let yr = (y1 - y0).max(1e-12);
    let px = |x: f64| ml + (x - x0) / xr * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / yr * (h - mt - mb);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        w / 2.0
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr,
        h - mb,
        h - mb
    ));
    svg.push_str(&format!(
        "<text x=\"{ml}\" y=\"{}\" font-size=\"11\">{x0:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{x1:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{y0:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{y1:.3}</text>\n",
        h - mb + 16.0,
        w - mr,
        h - mb + 16.0,
        ml - 4.0,
        h - mb,
        ml - 4.0,
        mt + 10.0
    ));
    for (i, (name, pts)) in series.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = colors[i % colors.len()];
        let d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| {
                format!("{}{:.2},{:.2}", if k == 0 { "M" } else { "L" }, px(x), py(y))
            })
            .collect();
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            d.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            w - mr - 150.0,
            mt + 16.0 * (i as f64 + 1.0)
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Render flat images as a PNG grid with 1-pixel separators.
pub fn write_image_grid_png(
    images: &Array2<f64>,
    shape: (usize, usize, usize),
    cols: usize,
    path: &Path,
) -> Result<()> {
    let (h, w, c) = shape;
    let n = images.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let cols = cols.max(1).min(n);
    let rows = n.div_ceil(cols);
    let gw = cols * (w + 1) + 1;
    let gh = rows * (h + 1) + 1;
    let mut grid = ndarray::Array3::<f32>::from_elem((gh, gw, c), 1.0);
    for (i, img) in images.rows().into_iter().enumerate() {
        let (r, col) = (i / cols, i % cols);
        let (oy, ox) = (r * (h + 1) + 1, col * (w + 1) + 1);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    grid[[oy + y, ox + x, ch]] = img[(y * w + x) * c + ch].clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    write_png(path, &grid, gh, gw, c)
}
