use std::path::Path;

use plotters::prelude::*;

use super::experiment::ComparisonTable;
use super::{HarnessError, Result};
use crate::analysis::floor_threshold;
use crate::solvers::Method;

fn colour(method: Method) -> RGBColor {
    match method {
        Method::Sarah => RGBColor(200, 30, 30),
        Method::Svrg => RGBColor(30, 80, 200),
        Method::Sgd => RGBColor(30, 150, 60),
    }
}

fn plot_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Plot(e.to_string())
}

/// Renders mean `‖F‖²` against oracle calls on a log scale, one line per
/// method. Values at or below the numeric floor are drawn on a dashed floor
/// line and flagged in the legend.
pub fn emit_plot(table: &ComparisonTable, path: &Path) -> Result<()> {
    if table.series.is_empty() {
        return Err(HarnessError::Plot("table has no series".into()));
    }
    if let Some(s) = table.series.iter().find(|s| s.stats.grid.is_empty()) {
        return Err(HarnessError::Plot(format!("{} series is empty", s.method)));
    }
    let scale = table
        .series
        .iter()
        .filter_map(|s| s.stats.mean_residual_sq.first())
        .fold(0.0f64, |a, &b| a.max(b));
    let floor = floor_threshold(scale).max(f64::MIN_POSITIVE);
    let mut clamped = false;
    let curves: Vec<(Method, Vec<(f64, f64)>)> = table
        .series
        .iter()
        .map(|s| {
            let pts = s
                .stats
                .grid
                .iter()
                .zip(&s.stats.mean_residual_sq)
                .filter(|(_, r)| r.is_finite())
                .map(|(&x, &r)| {
                    if r <= floor {
                        clamped = true;
                    }
                    (x as f64, r.max(floor))
                })
                .collect();
            (s.method, pts)
        })
        .collect();
    let (lo, hi) = curves
        .iter()
        .flat_map(|(_, p)| p.iter().map(|q| q.1))
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if !lo.is_finite() {
        return Err(HarnessError::Plot("no finite values to draw".into()));
    }
    let x_max = table.grid.last().copied().unwrap_or(1).max(1) as f64;
    let y_range = (lo / 3.0)..(hi.max(lo * 10.0) * 3.0);

    let caption = match table.regime {
        Some(r) => format!("{r} ell (ell = {:.3e}, n = {}, d = {})", table.ell, table.n, table.d),
        None => format!("ell = {:.3e}, n = {}, d = {}", table.ell, table.n, table.d),
    };
    let root = SVGBackend::new(path, (900, 620)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(80)
        .build_cartesian_2d(0.0..x_max, y_range.log_scale())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("oracle calls")
        .y_desc("||F(z)||^2")
        .x_label_formatter(&|x| format!("{x:.0e}"))
        .y_label_formatter(&|y| format!("{y:.0e}"))
        .draw()
        .map_err(plot_err)?;

    for (method, pts) in curves {
        let c = colour(method);
        chart
            .draw_series(LineSeries::new(pts, c.stroke_width(2)))
            .map_err(plot_err)?
            .label(method.label())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(2)));
    }
    if clamped {
        let grey = RGBColor(110, 110, 110);
        let dashes = (0..40).map(|k| {
            let a = x_max * k as f64 / 40.0;
            PathElement::new(vec![(a, floor), (a + x_max / 80.0, floor)], grey)
        });
        chart
            .draw_series(dashes)
            .map_err(plot_err)?
            .label("numeric floor (smaller values clamped)")
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], grey));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperRight)
        .background_style(WHITE.mix(0.9))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
