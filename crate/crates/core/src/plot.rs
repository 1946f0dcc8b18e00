//! Static SVG rendering of the learning-rate sweep: log-scale rate on the
//! x axis, final AUC on the y axis, one polyline through the sweep points.
//! Emitted directly as text so there is no plotting dependency and output
//! bytes are a pure function of the report.

use crate::train::SweepReport;
use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Renders the sweep as a standalone SVG document with exactly one polyline.
pub fn sweep_svg(report: &SweepReport) -> String {
    assert!(!report.rows.is_empty(), "sweep has at least two rows");
    let xs: Vec<f64> = report.rows.iter().map(|r| r.learning_rate.log10()).collect();
    let ys: Vec<f64> = report.rows.iter().map(|r| r.final_auc).collect();

    let x_min = xs.iter().cloned().fold(f64::MAX, f64::min);
    let x_max = xs.iter().cloned().fold(f64::MIN, f64::max);
    let x_span = if (x_max - x_min).abs() < 1e-12 { 1.0 } else { x_max - x_min };
    // AUC axis fixed to [0, 1]: comparable across sweeps
    let (y_min, y_max) = (0.0, 1.0);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_x = |x: f64| MARGIN_LEFT + (x - x_min) / x_span * plot_w;
    let to_y = |y: f64| MARGIN_TOP + (y_max - y) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        svg,
        "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">Learning-rate sensitivity (final AUC)</text>",
        WIDTH / 2.0
    );

    // axes
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    let _ = writeln!(
        svg,
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );

    // y ticks every 0.25
    for i in 0..=4 {
        let v = i as f64 * 0.25;
        let y = to_y(v);
        let _ = writeln!(
            svg,
            "  <line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"black\"/>",
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            x0 - 9.0,
            y + 4.0,
            fmt(v)
        );
    }

    // x tick per sweep point, labeled with the raw rate
    for (row, &x) in report.rows.iter().zip(&xs) {
        let xp = to_x(x);
        let _ = writeln!(
            svg,
            "  <line x1=\"{xp}\" y1=\"{y0}\" x2=\"{xp}\" y2=\"{}\" stroke=\"black\"/>",
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{xp}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{:e}</text>",
            y0 + 20.0,
            row.learning_rate
        );
    }
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">learning rate (log scale)</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        svg,
        "  <text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 {})\">AUC</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    // the data: one polyline plus point markers
    let points: Vec<String> = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| format!("{:.2},{:.2}", to_x(x), to_y(y)))
        .collect();
    let _ = writeln!(
        svg,
        "  <polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"{}\"/>",
        points.join(" ")
    );
    for ((&x, &y), row) in xs.iter().zip(&ys).zip(&report.rows) {
        let (cx, cy) = (to_x(x), to_y(y));
        let fill = if row.learning_rate == report.best_rate {
            "#d62728"
        } else {
            "#1f6fb2"
        };
        let _ = writeln!(svg, "  <circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"{fill}\"/>");
        let _ = writeln!(
            svg,
            "  <text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            cy - 9.0,
            fmt(y)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::SweepRow;

    fn sample() -> SweepReport {
        SweepReport {
            rows: vec![
                SweepRow {
                    learning_rate: 1e-5,
                    final_auc: 0.91,
                    final_accuracy: 0.8,
                },
                SweepRow {
                    learning_rate: 1e-4,
                    final_auc: 0.97,
                    final_accuracy: 0.9,
                },
                SweepRow {
                    learning_rate: 1e-3,
                    final_auc: 0.93,
                    final_accuracy: 0.85,
                },
            ],
            best_rate: 1e-4,
        }
    }

    #[test]
    fn one_polyline_with_one_point_per_rate() {
        let svg = sweep_svg(&sample());
        assert_eq!(svg.matches("<polyline").count(), 1);
        let line = svg
            .lines()
            .find(|l| l.contains("<polyline"))
            .unwrap();
        let points = line.split("points=\"").nth(1).unwrap();
        let points = points.split('"').next().unwrap();
        assert_eq!(points.split(' ').count(), 3);
    }

    #[test]
    fn svg_is_deterministic_and_well_formed() {
        let a = sweep_svg(&sample());
        let b = sweep_svg(&sample());
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<circle").count(), 3);
        assert!(a.contains("1e-4") || a.contains("1e-04") || a.contains("0.0001"));
    }
}
