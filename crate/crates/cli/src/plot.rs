//! Static SVG line charts, rendered from the run's CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use weisslab_core::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub label: String,
    pub lower: Vec<(f64, f64)>,
    pub upper: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    pub band: Option<Band>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if (1e-2..1e4).contains(&v.abs()) {
        format!("{}", (v * 1e3).round() / 1e3)
    } else {
        format!("{v:.1e}")
    }
}

impl Chart {
    fn tx(&self, v: f64, log: bool) -> Option<f64> {
        let t = if log { v.log10() } else { v };
        t.is_finite().then_some(t)
    }

    pub fn to_svg(&self) -> String {
        let mut pts: Vec<(f64, f64)> = self.series.iter().flat_map(|s| s.points.iter().copied()).collect();
        if let Some(b) = &self.band {
            pts.extend(b.lower.iter().chain(&b.upper).copied());
        }
        let pts: Vec<(f64, f64)> = pts
            .into_iter()
            .filter_map(|(x, y)| Some((self.tx(x, self.log_x)?, self.tx(y, self.log_y)?)))
            .collect();
        let range = |f: fn(&(f64, f64)) -> f64| {
            let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 * lo.abs().max(1.0) {
                let pad = 0.05 * lo.abs().max(1e-3);
                (lo - pad, hi + pad)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let (x0, x1) = range(|p| p.0);
        let (y0, y1) = range(|p| p.1);
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
        let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);
        let map = |(x, y): (f64, f64)| -> Option<(f64, f64)> { Some((px(self.tx(x, self.log_x)?), py(self.tx(y, self.log_y)?))) };

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(&self.title));
        let (ax0, ax1, ay0, ay1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
        let _ = writeln!(s, r#"<polyline fill="none" stroke="black" points="{ax0},{ay1} {ax0},{ay0} {ax1},{ay0}"/>"#);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (tx, ty) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let (vx, vy) = (if self.log_x { 10f64.powf(tx) } else { tx }, if self.log_y { 10f64.powf(ty) } else { ty });
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, px(tx), ay0 + 16.0, tick_label(vx));
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, ax0 - 6.0, py(ty) + 4.0, tick_label(vy));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (ax0 + ax1) / 2.0, H - 10.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            (ay0 + ay1) / 2.0,
            (ay0 + ay1) / 2.0,
            esc(&self.y_label)
        );
        if let Some(b) = &self.band {
            let poly: Vec<String> = b
                .lower
                .iter()
                .chain(b.upper.iter().rev())
                .filter_map(|&p| map(p))
                .map(|(x, y)| format!("{x:.2},{y:.2}"))
                .collect();
            let _ = writeln!(s, r##"<polygon fill="#cccccc" fill-opacity="0.6" stroke="none" points="{}"/>"##, poly.join(" "));
        }
        for (k, ser) in self.series.iter().enumerate() {
            let c = COLORS[k % COLORS.len()];
            let line: Vec<String> = ser.points.iter().filter_map(|&p| map(p)).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, line.join(" "));
            for p in &line {
                let (x, y) = p.split_once(',').expect("formatted pair");
                let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{c}"/>"#);
            }
        }
        let mut legend: Vec<(String, &str)> = self.series.iter().enumerate().map(|(k, ser)| (ser.label.clone(), COLORS[k % COLORS.len()])).collect();
        if let Some(b) = &self.band {
            legend.push((b.label.clone(), "#cccccc"));
        }
        for (k, (label, c)) in legend.iter().enumerate() {
            let y = TOP + 8.0 + 16.0 * k as f64;
            let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="8" fill="{c}"/>"#, ax1 - 150.0, y - 8.0);
            let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, ax1 - 132.0, esc(label));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn col(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::invalid(path.display().to_string(), format!("missing column {name}")))
}

fn num(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::invalid("csv", format!("not a number: {s}")))
}

pub fn weiss_chart(profile_csv: &Path) -> Result<Chart> {
    let (h, rows) = read_columns(profile_csv)?;
    let (r, a, g) = (col(&h, "r", profile_csv)?, col(&h, "A", profile_csv)?, col(&h, "G_cum", profile_csv)?);
    let mut line = Vec::new();
    let mut upper = Vec::new();
    for row in &rows {
        let (rv, av, gv) = (num(&row[r])?, num(&row[a])?, num(&row[g])?);
        line.push((rv, av));
        upper.push((rv, av + gv));
    }
    Ok(Chart {
        title: "Weiss profile".into(),
        x_label: "r".into(),
        y_label: "A(r)".into(),
        series: vec![Series { label: "A(r)".into(), points: line.clone() }],
        band: Some(Band {
            label: "A(r) + int g".into(),
            lower: line,
            upper,
        }),
        ..Chart::default()
    })
}

pub fn cone_distance_chart(blowup_csv: &Path) -> Result<Chart> {
    let (h, rows) = read_columns(blowup_csv)?;
    let (x, y, r, d) = (col(&h, "x", blowup_csv)?, col(&h, "y", blowup_csv)?, col(&h, "r", blowup_csv)?, col(&h, "cone_dist", blowup_csv)?);
    let mut groups: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    let mut order = Vec::new();
    for row in &rows {
        let key = (row[x].clone(), row[y].clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push((num(&row[r])?, num(&row[d])?));
    }
    let series = order
        .into_iter()
        .map(|k| Series {
            label: format!("x0=({}, {})", k.0, k.1),
            points: groups[&k].clone(),
        })
        .collect();
    Ok(Chart {
        title: "Cone distance of blow-ups".into(),
        x_label: "r".into(),
        y_label: "distance".into(),
        log_x: true,
        series,
        ..Chart::default()
    })
}

pub fn boxcount_chart(boxcount_csv: &Path) -> Result<Chart> {
    let (h, rows) = read_columns(boxcount_csv)?;
    let (e, n) = (col(&h, "eps", boxcount_csv)?, col(&h, "N", boxcount_csv)?);
    let points = rows.iter().map(|row| Ok((num(&row[e])?, num(&row[n])?))).collect::<Result<Vec<_>>>()?;
    Ok(Chart {
        title: "Box counting".into(),
        x_label: "eps".into(),
        y_label: "N(eps)".into(),
        log_x: true,
        log_y: true,
        series: vec![Series { label: "N(eps)".into(), points }],
        ..Chart::default()
    })
}

/// Writes `plots/*.svg` for every known CSV present in `dir`.
pub fn render_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    type Builder = fn(&Path) -> Result<Chart>;
    let jobs: [(&str, &str, Builder); 3] = [
        ("profile.csv", "weiss_profile.svg", weiss_chart),
        ("blowup.csv", "cone_distance.svg", cone_distance_chart),
        ("boxcount.csv", "boxcount.svg", boxcount_chart),
    ];
    let mut written = Vec::new();
    for (csv_name, svg_name, build) in jobs {
        let src = dir.join(csv_name);
        if !src.exists() {
            continue;
        }
        let chart = build(&src)?;
        let out = dir.join("plots");
        std::fs::create_dir_all(&out)?;
        let path = out.join(svg_name);
        std::fs::write(&path, chart.to_svg())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_contains_series_and_band() {
        let c = Chart {
            title: "t <1>".into(),
            series: vec![Series {
                label: "a".into(),
                points: vec![(0.1, 1.0), (0.2, 2.0)],
            }],
            band: Some(Band {
                label: "b".into(),
                lower: vec![(0.1, 1.0), (0.2, 2.0)],
                upper: vec![(0.1, 1.5), (0.2, 2.5)],
            }),
            ..Chart::default()
        };
        let s = c.to_svg();
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("t &lt;1&gt;"));
        assert_eq!(s.matches("<circle").count(), 2);
        assert_eq!(s.matches("<polygon").count(), 1);
    }

    #[test]
    fn log_axes_drop_nonpositive_points() {
        let c = Chart {
            log_x: true,
            log_y: true,
            series: vec![Series {
                label: "n".into(),
                points: vec![(0.0, 1.0), (0.1, 10.0), (0.01, 100.0)],
            }],
            ..Chart::default()
        };
        assert_eq!(c.to_svg().matches("<circle").count(), 2);
    }

    #[test]
    fn renders_from_csv_alone() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("boxcount.csv"), "eps,N,product\n0.125,20,2.5\n0.0625,41,2.5625\n").unwrap();
        std::fs::write(dir.path().join("profile.csv"), "r,A,H,g,G_cum\n0.1,0.5,0.0,0.0,0.0\n0.2,0.5,0.0,0.0,0.0\n").unwrap();
        let out = render_dir(dir.path()).unwrap();
        assert_eq!(out.len(), 2);
        let again = render_dir(dir.path()).unwrap();
        assert_eq!(out, again);
        assert!(std::fs::read_to_string(&out[0]).unwrap().contains("Weiss profile"));
    }
}
