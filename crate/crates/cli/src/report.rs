//! Static SVG figures from telemetry logs.

use std::path::{Path, PathBuf};

use neuroflight::flight::{FlightMode, TelemetryLog};
use plotters::prelude::*;

use crate::CliError;

type Series = (&'static str, fn(&neuroflight::flight::TelemetryRow) -> f64, RGBColor);

const POSITION: [Series; 6] = [
    ("x", |r| r.position[0], RED),
    ("y", |r| r.position[1], BLUE),
    ("z", |r| r.position[2], GREEN),
    ("x setpoint", |r| r.setpoint[0], RGBColor(240, 150, 150)),
    ("y setpoint", |r| r.setpoint[1], RGBColor(150, 150, 240)),
    ("z setpoint", |r| r.setpoint[2], RGBColor(150, 220, 150)),
];

const VELOCITY: [Series; 3] = [
    ("vx", |r| r.velocity[0], RED),
    ("vy", |r| r.velocity[1], BLUE),
    ("vz", |r| r.velocity[2], GREEN),
];

const MOTORS: [Series; 4] = [
    ("m1", |r| r.motors[0], RED),
    ("m2", |r| r.motors[1], BLUE),
    ("m3", |r| r.motors[2], GREEN),
    ("m4", |r| r.motors[3], MAGENTA),
];

const WIDTH: u32 = 900;
const HEIGHT: u32 = 500;

fn plot_err<E: std::error::Error>(e: E) -> CliError {
    CliError::Plot(e.to_string())
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

fn draw_panel<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    title: &str,
    y_label: &str,
    log: &TelemetryLog,
    series: &[Series],
) -> Result<(), CliError>
where
    DB::ErrorType: 'static,
{
    let rows = &log.rows;
    let t_end = rows.last().map_or(1.0, |r| r.time.max(1e-3));
    let (lo, hi) = range(rows.iter().flat_map(|r| series.iter().map(move |s| (s.1)(r))));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..t_end, lo..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("time [s]")
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;

    // shade neural-mode intervals
    let mut start = None;
    let mut spans = Vec::new();
    for r in rows {
        match (r.mode == FlightMode::NeuralMode, start) {
            (true, None) => start = Some(r.time),
            (false, Some(s)) => {
                spans.push((s, r.time));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, t_end));
    }
    chart
        .draw_series(
            spans
                .iter()
                .map(|&(a, b)| Rectangle::new([(a, lo), (b, hi)], RGBColor(235, 235, 235).filled())),
        )
        .map_err(plot_err)?;

    for &(name, f, color) in series {
        chart
            .draw_series(LineSeries::new(rows.iter().map(|r| (r.time, f(r))), color))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    Ok(())
}

fn figure(
    path: &Path,
    quantity: &str,
    y_label: &str,
    logs: &[(String, TelemetryLog)],
    series: &[Series],
) -> Result<(), CliError> {
    let root = SVGBackend::new(path, (WIDTH * logs.len() as u32, HEIGHT)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, logs.len()));
    for (area, (name, log)) in panels.iter().zip(logs) {
        draw_panel(area, &format!("{quantity}: {name}"), y_label, log, series)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Top-down trajectories of every log over their setpoints.
fn comparison(path: &Path, logs: &[(String, TelemetryLog)]) -> Result<(), CliError> {
    let root = SVGBackend::new(path, (HEIGHT + 100, HEIGHT + 100)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let xs = logs.iter().flat_map(|(_, l)| l.rows.iter().flat_map(|r| [r.position[0], r.setpoint[0]]));
    let ys = logs.iter().flat_map(|(_, l)| l.rows.iter().flat_map(|r| [r.position[1], r.setpoint[1]]));
    let (x0, x1) = range(xs);
    let (y0, y1) = range(ys);
    let mut chart = ChartBuilder::on(&root)
        .caption("trajectory, top view", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(y0..y1, x0..x1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("east [m]")
        .y_desc("north [m]")
        .draw()
        .map_err(plot_err)?;
    let colors = [RED, BLUE, GREEN, MAGENTA];
    for (i, (name, log)) in logs.iter().enumerate() {
        let color = colors[i % colors.len()];
        chart
            .draw_series(LineSeries::new(log.rows.iter().map(|r| (r.position[1], r.position[0])), color))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
    }
    if let Some((_, log)) = logs.first() {
        chart
            .draw_series(LineSeries::new(
                log.rows.iter().map(|r| (r.setpoint[1], r.setpoint[0])),
                BLACK.mix(0.4),
            ))
            .map_err(plot_err)?
            .label("setpoint")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], BLACK));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

pub fn load_log(path: &Path) -> Result<TelemetryLog, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    TelemetryLog::from_csv(&text).map_err(|e| CliError::Core(neuroflight::Error::Schema(format!("{}: {e}", path.display()))))
}

/// Writes position, velocity and motor figures, plus a top-view comparison
/// when more than one log is given. Returns the written paths.
pub fn render(logs: &[(String, TelemetryLog)], out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut written = Vec::new();
    let figures: [(&str, &str, &str, &[Series]); 3] = [
        ("position.svg", "position", "m (NED)", &POSITION),
        ("velocity.svg", "velocity", "m/s (NED)", &VELOCITY),
        ("motors.svg", "motor commands", "normalized speed", &MOTORS),
    ];
    for (file, quantity, unit, series) in figures {
        let path = out_dir.join(file);
        figure(&path, quantity, unit, logs, series)?;
        written.push(path);
    }
    if logs.len() > 1 {
        let path = out_dir.join("comparison.svg");
        comparison(&path, logs)?;
        written.push(path);
    }
    Ok(written)
}
