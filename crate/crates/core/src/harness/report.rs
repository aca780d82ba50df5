//! CSV tables, JSON summaries and SVG scaling plots.

use crate::fit::LineFit;
use crate::Result;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

/// Writes `header` then one record per row. The header is written even when `rows` is empty,
/// so every table has a declared schema.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Linear,
    Log,
}

impl Axis {
    fn map(self, v: f64) -> Option<f64> {
        match self {
            Axis::Linear => v.is_finite().then_some(v),
            Axis::Log => (v > 0.0 && v.is_finite()).then(|| v.log10()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Fitted line in log-log coordinates, drawn over the data range.
    pub fit: Option<LineFit>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), points, fit: None }
    }

    pub fn with_fit(mut self, fit: LineFit) -> Self {
        self.fit = Some(fit);
        self
    }
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_axis: Axis,
    pub y_axis: Axis,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;
const COLOURS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

impl Plot {
    pub fn loglog(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_axis: Axis::Log,
            y_axis: Axis::Log,
            series: Vec::new(),
        }
    }

    pub fn axes(mut self, x: Axis, y: Axis) -> Self {
        self.x_axis = x;
        self.y_axis = y;
        self
    }

    pub fn push(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    /// Standalone SVG document. Points outside an axis' domain (non-positive on a log axis)
    /// are skipped.
    pub fn to_svg(&self) -> String {
        let mapped: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| s.points.iter().filter_map(|&(x, y)| Some((self.x_axis.map(x)?, self.y_axis.map(y)?))).collect())
            .collect();
        let all = mapped.iter().flatten();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            (x0, x1) = (x0 - 0.5, x1 + 0.5);
        }
        if y1 - y0 < 1e-12 {
            (y0, y1) = (y0 - 0.5, y1 + 0.5);
        }
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        let tick = |axis: Axis, v: f64| match axis {
            Axis::Log => format!("1e{v:.1}"),
            Axis::Linear => format!("{v:.3}"),
        };

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        );
        for (v, anchor) in [(x0, "start"), (x1, "end")] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{}</text>"#,
                sx(v),
                HEIGHT - MARGIN + 16.0,
                tick(self.x_axis, v)
            );
        }
        for v in [y0, y1] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN - 6.0,
                sy(v) + 4.0,
                tick(self.y_axis, v)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );

        let loglog = self.x_axis == Axis::Log && self.y_axis == Axis::Log;
        for (i, (s, pts)) in self.series.iter().zip(&mapped).enumerate() {
            let colour = COLOURS[i % COLOURS.len()];
            for &(x, y) in pts {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, sx(x), sy(y));
            }
            if let (Some(fit), true, false) = (s.fit, loglog, pts.is_empty()) {
                let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
                let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
                // The fit is in natural logs; the plot in base 10.
                let line = |x: f64| (fit.slope * x * std::f64::consts::LN_10 + fit.intercept) / std::f64::consts::LN_10;
                let _ = writeln!(
                    svg,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-dasharray="4 3"/>"#,
                    sx(lo),
                    sy(line(lo)),
                    sx(hi),
                    sy(line(hi))
                );
            }
            let label = match s.fit {
                Some(fit) => format!("{} (slope {:.3})", s.label, fit.slope),
                None => s.label.clone(),
            };
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" fill="{colour}">{}</text>"#,
                MARGIN + 8.0,
                MARGIN + 16.0 * (i as f64 + 1.0),
                escape(&label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_svg())?;
        Ok(())
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::loglog_fit;

    #[derive(Serialize)]
    struct Row {
        a: f64,
        b: usize,
    }

    #[test]
    fn empty_table_keeps_its_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv::<Row>(&path, &["a", "b"], &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n");
        write_csv(&path, &["a", "b"], &[Row { a: 0.5, b: 3 }]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n0.5,3\n");
    }

    #[test]
    fn svg_is_well_formed_and_skips_bad_points() {
        let xs = [1e-4, 1e-3, 1e-2];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| x.sqrt()).collect();
        let fit = loglog_fit(&xs, &ys).unwrap();
        let pts = xs.iter().copied().zip(ys.iter().copied()).chain([(0.0, 1.0), (1.0, f64::NAN)]).collect();
        let svg = Plot::loglog("a < b", "x", "y").push(Series::new("sqrt", pts).with_fit(fit)).to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("a &lt; b") && svg.contains("slope 0.500"));
        let empty = Plot::loglog("none", "x", "y").to_svg();
        assert!(empty.contains("</svg>"));
    }

    #[test]
    fn unwritable_directory_is_an_io_error() {
        let err = write_json(Path::new("/nonexistent/dir/x.json"), &1).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
