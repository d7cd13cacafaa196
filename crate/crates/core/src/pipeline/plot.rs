//! FID-vs-kimg figures as standalone SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(u64, f64)>,
}

/// Parses a `fid_log.txt`: `#` comments, then `kimg<TAB>fid` lines.
pub fn parse_fid_log(text: &str) -> Result<Vec<(u64, f64)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let mut f = l.split_whitespace();
            let k = f.next().and_then(|v| v.parse().ok());
            let v = f.next().and_then(|v| v.parse().ok());
            match (k, v, f.next()) {
                (Some(k), Some(v), None) => Ok((k, v)),
                _ => Err(Error::parse("fid log", format!("bad line '{l}'"))),
            }
        })
        .collect()
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Renders FID against kimg. A legend is drawn only for more than one series.
pub fn render_svg(title: &str, series: &[Series]) -> Result<String> {
    let all: Vec<(u64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::EmptyInput("no FID points to plot".into()));
    }
    if all.iter().any(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidConfig("FID log contains non-finite values".into()));
    }
    let x_max = all.iter().map(|p| p.0).max().unwrap_or(0).max(1) as f64;
    let y_top = all.iter().map(|p| p.1).fold(0.0, f64::max);
    let y_step = nice_step(if y_top > 0.0 { y_top } else { 1.0 });
    let y_max = (y_top / y_step).ceil().max(1.0) * y_step;
    let x_step = nice_step(x_max).max(1.0);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |x: f64| LEFT + x / x_max * pw;
    let sy = |y: f64| TOP + ph - y / y_max * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    let mut x = 0.0;
    while x <= x_max + 1e-9 {
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="black"/><text x="{0:.2}" y="{3}" text-anchor="middle">{4}</text>"#,
            sx(x),
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 19.0,
            fmt_tick(x)
        );
        x += x_step;
    }
    let mut y = 0.0;
    while y <= y_max + 1e-9 {
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{1:.2}" x2="{2}" y2="{1:.2}" stroke="black"/><text x="{3}" y="{4:.2}" text-anchor="end">{5}</text>"#,
            LEFT - 5.0,
            sy(y),
            LEFT,
            LEFT - 8.0,
            sy(y) + 4.0,
            fmt_tick(y)
        );
        y += y_step;
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">kimg</text>"#, LEFT + pw / 2.0, H - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">FID</text>"#,
        TOP + ph / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(k, v)| format!("{:.2},{:.2}", sx(k as f64), sy(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (cx, cy) = p.split_once(',').expect("formatted above");
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
    }
    if series.len() > 1 {
        for (i, ser) in series.iter().enumerate() {
            let y = TOP + 12.0 + 18.0 * i as f64;
            let x = LEFT + pw - 170.0;
            let _ = writeln!(
                s,
                r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                x + 24.0,
                COLORS[i % COLORS.len()],
                x + 30.0,
                y + 4.0,
                escape(&ser.label)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_svg(path: &Path, title: &str, series: &[Series]) -> Result<()> {
    let svg = render_svg(title, series)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(label: &str, pts: &[(u64, f64)]) -> Series {
        Series {
            label: label.into(),
            points: pts.to_vec(),
        }
    }

    #[test]
    fn parses_written_log() {
        let log = "# kimg\tfid\n0\t17.5\n1\t9.25\n";
        assert_eq!(parse_fid_log(log).unwrap(), vec![(0, 17.5), (1, 9.25)]);
        assert!(parse_fid_log("0 1 2\n").is_err());
    }

    #[test]
    fn two_series_get_a_legend() {
        let svg = render_svg(
            "fraction 0.1",
            &[series("cropped", &[(0, 20.0), (4, 8.0)]), series("uncropped", &[(0, 20.0), (4, 12.0)])],
        )
        .unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">cropped</text>") && svg.contains(">uncropped</text>"));
    }

    #[test]
    fn single_series_has_no_legend() {
        let svg = render_svg("t", &[series("only", &[(0, 3.0)])]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains(">only</text>"));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(render_svg("t", &[]), Err(Error::EmptyInput(_))));
        assert!(matches!(render_svg("t", &[series("a", &[])]), Err(Error::EmptyInput(_))));
    }
}
