//! Static SVG charts. Output depends only on the input tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::output::{read_table, Table, AGGREGATE_SCHEMA, AUDIT_AGGREGATE_SCHEMA, PROBES_SCHEMA, SWEEP_SCHEMA};
use super::HarnessError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Tick labels replacing numeric x ticks at integer positions.
    pub x_categories: Option<Vec<String>>,
    /// Draw as right-continuous steps.
    pub step: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let (x0, x1) = range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let (y0, y1) = range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">"
        );
        let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
        );
        for i in 0..=5 {
            let f = i as f64 / 5.0;
            let yv = y0 + f * (y1 - y0);
            let y = sy(yv);
            let _ = writeln!(
                s,
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{LEFT}\" y2=\"{y:.1}\" stroke=\"black\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{yv:.3}</text>",
                LEFT - 4.0,
                LEFT - 6.0,
                y + 4.0
            );
        }
        match &self.x_categories {
            Some(cats) => {
                for (i, c) in cats.iter().enumerate() {
                    let x = sx(i as f64);
                    let _ = writeln!(
                        s,
                        "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/><text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                        TOP + ph,
                        TOP + ph + 4.0,
                        TOP + ph + 16.0,
                        escape(c)
                    );
                }
            }
            None => {
                for i in 0..=5 {
                    let xv = x0 + i as f64 / 5.0 * (x1 - x0);
                    let x = sx(xv);
                    let _ = writeln!(
                        s,
                        "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/><text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{xv:.3}</text>",
                        TOP + ph,
                        TOP + ph + 4.0,
                        TOP + ph + 16.0
                    );
                }
            }
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, series) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let mut pts = String::new();
            let mut prev: Option<(f64, f64)> = None;
            for &(x, y) in series.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                if self.step {
                    if let Some((_, py)) = prev {
                        let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(py));
                    }
                }
                let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
                prev = Some((x, y));
            }
            let _ = writeln!(
                s,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                pts.trim_end()
            );
            if !self.step {
                for &(x, y) in series.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                    let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>", sx(x), sy(y));
                }
            }
            let ly = TOP + 12.0 + 16.0 * k as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                s,
                "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
                lx + 18.0,
                lx + 24.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Empirical CDF as step points, starting at `(min, 1/n)`.
pub fn cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let y = (i + 1) as f64 / n;
        match pts.last_mut() {
            Some(last) if last.0 == *x => last.1 = y,
            _ => pts.push((*x, y)),
        }
    }
    pts
}

const PLOTTED_METRICS: [(&str, &str); 5] = [
    ("group_coverage", "Group Coverage"),
    ("average_coverage", "Average Coverage"),
    ("average_size", "Average Size"),
    ("wsc", "WSC"),
    ("wsc_plus", "WSC+"),
];

fn grouped(t: &Table, key: usize) -> BTreeMap<String, Vec<usize>> {
    let mut m: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in t.rows.iter().enumerate() {
        m.entry(r[key].clone()).or_default().push(i);
    }
    m
}

/// Keeps series in first-appearance order.
fn series_order(t: &Table, key: usize) -> Vec<String> {
    let mut order: Vec<String> = Vec::new();
    for r in &t.rows {
        if !order.contains(&r[key]) {
            order.push(r[key].clone());
        }
    }
    order
}

fn charts_for(t: &Table, stem: &str) -> Result<Vec<(String, Chart)>, HarnessError> {
    let mut out = Vec::new();
    match t.schema.as_str() {
        SWEEP_SCHEMA => {
            let p = t.column("parameter")?;
            let v = t.column("value")?;
            let m = t.column("method")?;
            let param = t.rows.first().map(|r| r[p].clone()).unwrap_or_else(|| "value".into());
            let groups = grouped(t, m);
            for (col, title) in PLOTTED_METRICS {
                let c = t.column(&format!("{col}_mean"))?;
                let mut series = Vec::new();
                for name in series_order(t, m) {
                    let mut points = Vec::new();
                    for &i in &groups[&name] {
                        points.push((t.number(i, v)?, t.number(i, c)?));
                    }
                    series.push(Series { name, points });
                }
                out.push((
                    format!("{stem}_{col}.svg"),
                    Chart {
                        title: format!("{title} vs {param}"),
                        x_label: param.clone(),
                        y_label: title.into(),
                        series,
                        x_categories: None,
                        step: false,
                    },
                ));
            }
        }
        AGGREGATE_SCHEMA => {
            let m = t.column("method")?;
            let cats: Vec<String> = t.rows.iter().map(|r| r[m].clone()).collect();
            let mut series = Vec::new();
            for (col, title) in PLOTTED_METRICS.iter().filter(|(c, _)| *c != "average_size") {
                let c = t.column(&format!("{col}_mean"))?;
                let points = (0..t.rows.len())
                    .map(|i| Ok((i as f64, t.number(i, c)?)))
                    .collect::<Result<Vec<_>, HarnessError>>()?;
                series.push(Series {
                    name: title.to_string(),
                    points,
                });
            }
            out.push((
                format!("{stem}.svg"),
                Chart {
                    title: "Coverage by method".into(),
                    x_label: "method".into(),
                    y_label: "coverage".into(),
                    series,
                    x_categories: Some(cats),
                    step: false,
                },
            ));
        }
        PROBES_SCHEMA => {
            let m = t.column("method")?;
            let k = t.column("kind")?;
            let c = t.column("coverage")?;
            for kind in ["linear", "quadratic"] {
                let mut series = Vec::new();
                for name in series_order(t, m) {
                    let vals = (0..t.rows.len())
                        .filter(|&i| t.rows[i][m] == name && t.rows[i][k] == kind)
                        .map(|i| t.number(i, c))
                        .collect::<Result<Vec<_>, _>>()?;
                    if !vals.is_empty() {
                        series.push(Series {
                            name,
                            points: cdf_points(&vals),
                        });
                    }
                }
                out.push((
                    format!("{stem}_cdf_{kind}.svg"),
                    Chart {
                        title: format!("CDF of worst-slab coverage ({kind})"),
                        x_label: "worst-slab coverage".into(),
                        y_label: "fraction of probes".into(),
                        series,
                        x_categories: None,
                        step: true,
                    },
                ));
            }
        }
        AUDIT_AGGREGATE_SCHEMA => {
            let d = t.column("delta")?;
            let k = t.column("kind")?;
            let mean = t.column("mean")?;
            let groups = grouped(t, k);
            let mut series = Vec::new();
            for name in series_order(t, k) {
                let points = groups[&name]
                    .iter()
                    .map(|&i| Ok((t.number(i, d)?, t.number(i, mean)?)))
                    .collect::<Result<Vec<_>, HarnessError>>()?;
                series.push(Series { name, points });
            }
            out.push((
                format!("{stem}.svg"),
                Chart {
                    title: "Worst-slab coverage vs slab mass".into(),
                    x_label: "delta".into(),
                    y_label: "mean worst-slab coverage".into(),
                    series,
                    x_categories: None,
                    step: false,
                },
            ));
        }
        other => return Err(HarnessError::Format(format!("cannot plot schema {other:?}"))),
    }
    Ok(out)
}

/// Writes a chart set per input table into `out_dir`.
pub fn emit_plots(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::Io(format!("{}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    for input in inputs {
        let table = read_table(input)?;
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("chart");
        for (name, chart) in charts_for(&table, stem)? {
            let p = out_dir.join(name);
            std::fs::write(&p, chart.to_svg()).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
            written.push(p);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_chart_has_axes() {
        let c = Chart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![],
            x_categories: None,
            step: false,
        };
        let svg = c.to_svg();
        assert!(svg.starts_with("<svg") && svg.contains("<rect x="));
        assert_eq!(svg, c.to_svg());
    }

    #[test]
    fn cdf_is_monotone() {
        let pts = cdf_points(&[0.5, 0.2, 0.9, 0.2, 0.7]);
        assert_eq!(pts.first().unwrap(), &(0.2, 0.4));
        assert_eq!(pts.last().unwrap().1, 1.0);
        for w in pts.windows(2) {
            assert!(w[1].0 > w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn unknown_schema_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "# fairconf nothing v9\na\n1\n").unwrap();
        assert!(matches!(emit_plots(&[p], dir.path()), Err(HarnessError::Format(_))));
        let q = dir.path().join("y.csv");
        std::fs::write(&q, "a,b\n").unwrap();
        assert!(matches!(emit_plots(&[q], dir.path()), Err(HarnessError::Format(_))));
    }
}
