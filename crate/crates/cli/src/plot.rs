//! SVG plots of histograms and trajectory fans.

use std::path::Path;

use bohmlab_core::experiments::NamedHistogram;
use bohmlab_core::guidance::TrajectoryEnsemble;
use bohmlab_core::{Error, Result};
use plotters::prelude::*;

const SIZE: (u32, u32) = (800, 500);

fn plot_error<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(format!("plot: {e}")))
}

/// Bars for `bars`, with `line` (same binning) drawn over them.
pub fn histogram(path: &Path, bars: &NamedHistogram, line: Option<&NamedHistogram>) -> Result<()> {
    let edges = &bars.histogram.edges[0];
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let top = bars
        .histogram
        .values
        .iter()
        .chain(line.map_or(&[][..], |l| &l.histogram.values[..]))
        .cloned()
        .fold(0.0, f64::max)
        .max(1e-12)
        * 1.1;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(&bars.name, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(lo..hi, 0.0..top)
        .map_err(plot_error)?;
    chart.configure_mesh().draw().map_err(plot_error)?;
    chart
        .draw_series(
            bars.histogram
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| Rectangle::new([(edges[i], 0.0), (edges[i + 1], *v)], BLUE.mix(0.4).filled())),
        )
        .map_err(plot_error)?;
    if let Some(l) = line {
        let e = &l.histogram.edges[0];
        let pts = l.histogram.values.iter().enumerate().map(|(i, v)| (0.5 * (e[i] + e[i + 1]), *v));
        chart.draw_series(LineSeries::new(pts, RED.stroke_width(2))).map_err(plot_error)?;
    }
    root.present().map_err(plot_error)?;
    Ok(())
}

/// Coordinate `axis` of the first `max` trajectories against time.
pub fn trajectory_fan(path: &Path, ens: &TrajectoryEnsemble, axis: usize, max: usize) -> Result<()> {
    let shown = &ens.trajectories[..ens.len().min(max)];
    let (t0, t1) = (ens.times[0], ens.times[ens.times.len() - 1].max(ens.times[0] + 1e-12));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in shown {
        for x in &t.samples {
            lo = lo.min(x.get(axis));
            hi = hi.max(x.get(axis));
        }
    }
    if !(lo < hi) {
        lo -= 1.0;
        hi += 1.0;
    }
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("trajectories, axis {axis}"), ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(t0..t1, lo..hi)
        .map_err(plot_error)?;
    chart.configure_mesh().x_desc("t").draw().map_err(plot_error)?;
    for t in shown {
        let pts = t.times.iter().zip(&t.samples).map(|(s, x)| (*s, x.get(axis)));
        chart
            .draw_series(LineSeries::new(pts, BLACK.mix(0.35)))
            .map_err(plot_error)?;
    }
    root.present().map_err(plot_error)?;
    Ok(())
}
