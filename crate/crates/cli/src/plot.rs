use std::path::Path;

use anyhow::{anyhow, bail, Result};
use plotters::prelude::*;

use crate::record::Series;

/// Writes a speedup-vs-L line chart with one series per (algorithm, graph).
pub fn speedup_svg(path: &Path, series: &[Series]) -> Result<()> {
    if series.is_empty() {
        bail!("nothing to plot: no data rows");
    }
    let points: Vec<Vec<(usize, f64)>> = series.iter().map(Series::speedups).collect();
    let max_l = points.iter().flatten().map(|&(l, _)| l).max().unwrap_or(1);
    let max_s = points
        .iter()
        .flatten()
        .map(|&(_, s)| s)
        .filter(|s| s.is_finite())
        .fold(1.0, f64::max);

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Speedup over the smallest locality count", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(55)
        .build_cartesian_2d(0.5f64..max_l as f64 + 0.5, 0f64..max_s * 1.15)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("localities (L)")
        .y_desc("speedup")
        .draw()
        .map_err(draw_err)?;

    for (i, (s, pts)) in series.iter().zip(&points).enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let xy: Vec<(f64, f64)> = pts.iter().map(|&(l, v)| (l as f64, v)).collect();
        chart
            .draw_series(LineSeries::new(xy.clone(), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(format!(
                "{} {} (vs L={})",
                s.algorithm,
                s.graph,
                s.baseline().unwrap_or(1)
            ))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart
            .draw_series(xy.into_iter().map(|p| Circle::new(p, 4, color.filled())))
            .map_err(draw_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

fn draw_err<E: std::error::Error + Send + Sync + 'static>(e: DrawingAreaErrorKind<E>) -> anyhow::Error {
    anyhow!("drawing chart: {e}")
}
