use std::path::Path;

use plotters::prelude::*;

use trajlift::synthgen::GroundTruthRecord;

use crate::pipeline::SmoothedRecord;

/// Top-down SVG of smoothed trajectories, with measured states as dots and
/// optional ground truth drawn underneath in gray.
pub fn plot_trajectories(
    path: &Path,
    smoothed: &[SmoothedRecord],
    truth: Option<&GroundTruthRecord>,
) -> anyhow::Result<()> {
    let mut xy: Vec<(f64, f64)> = smoothed
        .iter()
        .flat_map(|s| {
            s.states
                .iter()
                .map(|st| (st.pose.translation[0], st.pose.translation[1]))
        })
        .collect();
    if let Some(gt) = truth {
        xy.extend(gt.objects.iter().flat_map(|o| {
            o.states
                .iter()
                .map(|st| (st.pose.translation[0], st.pose.translation[1]))
        }));
    }
    let (mut x0, mut x1, mut y0, mut y1) = xy.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if xy.is_empty() {
        (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
    }
    let pad = 0.05 * (x1 - x0).max(y1 - y0).max(1.0);

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let root = SVGBackend::new(path, (800, 800)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(x0 - pad..x1 + pad, y0 - pad..y1 + pad)?;
    chart.configure_mesh().x_desc("x [m]").y_desc("y [m]").draw()?;

    if let Some(gt) = truth {
        for o in &gt.objects {
            let line = o
                .states
                .iter()
                .map(|st| (st.pose.translation[0], st.pose.translation[1]));
            chart.draw_series(LineSeries::new(line, RGBColor(170, 170, 170).stroke_width(3)))?;
        }
    }
    for (i, s) in smoothed.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let line = s
            .states
            .iter()
            .map(|st| (st.pose.translation[0], st.pose.translation[1]));
        chart.draw_series(LineSeries::new(line, color.stroke_width(2)))?;
        let dots = s
            .states
            .iter()
            .filter(|st| st.measured)
            .map(|st| Circle::new((st.pose.translation[0], st.pose.translation[1]), 2, color.filled()));
        chart.draw_series(dots)?;
    }
    root.present()?;
    Ok(())
}
