//! Trace CSVs and SVG line charts.
//!
//! CSVs carry the fixed header [`TRACE_HEADER`], shortest round-trip
//! decimal renderings of every `f64` and LF line endings, so re-parsing
//! gives identical bits. SVGs are plain polyline charts whose text depends
//! only on the plotted numbers.

use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::monotone::TraceRows;

pub const TRACE_HEADER: [&str; 8] = ["r", "A_plus", "A_minus", "B_plus", "B_minus", "phi", "phi_F", "verdict"];

/// One parsed trace row.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub values: [f64; 7],
    pub pass: bool,
}

pub fn emit_csv<W: Write>(trace: &dyn TraceRows, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(TRACE_HEADER)?;
    let verdicts = trace.row_verdicts();
    for (i, row) in trace.rows().iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(if verdicts.get(i).copied().unwrap_or(true) { "pass" } else { "fail" }.into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(Error::Config(format!("unexpected trace header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut values = [0.0; 7];
        for (i, v) in values.iter_mut().enumerate() {
            *v = rec[i].parse().map_err(|_| Error::Config(format!("bad number '{}' in trace", &rec[i])))?;
        }
        let pass = match &rec[7] {
            "pass" => true,
            "fail" => false,
            other => return Err(Error::Config(format!("bad verdict '{other}' in trace"))),
        };
        rows.push(TraceRow { values, pass });
    }
    Ok(rows)
}

/// Named series of `(x, y)` points.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const TICKS: usize = 5;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn render(&self) -> String {
        let tx = |x: f64| if self.log_x { x.ln() } else { x };
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_x || *x > 0.0))
            .map(|(x, y)| (tx(*x), *y))
            .collect();
        let (mut x0, mut x1, mut y0, mut y1) = (0.0, 1.0, 0.0, 1.0);
        if !pts.is_empty() {
            x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            y0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            y1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        }
        if x1 - x0 <= 0.0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 <= 1e-12 * y1.abs().max(1e-300) {
            let pad = if y1 == 0.0 { 1.0 } else { 0.05 * y1.abs() };
            y0 -= pad;
            y1 += pad;
        } else {
            let pad = 0.05 * (y1 - y0);
            y0 -= pad;
            y1 += pad;
        }
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&self.title));
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=TICKS {
            let f = i as f64 / TICKS as f64;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let label = if self.log_x { fmt_num(xv.exp()) } else { fmt_num(xv) };
            let (gx, gy) = (px(xv), py(yv));
            let _ = writeln!(
                s,
                r##"<line x1="{gx:.2}" y1="{MARGIN_T}" x2="{gx:.2}" y2="{:.2}" stroke="#dddddd"/>"##,
                MARGIN_T + ph
            );
            let _ = writeln!(s, r#"<text x="{gx:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, MARGIN_T + ph + 16.0);
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_L}" y1="{gy:.2}" x2="{:.2}" y2="{gy:.2}" stroke="#dddddd"/>"##,
                MARGIN_L + pw
            );
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, MARGIN_L - 6.0, gy + 4.0, fmt_num(yv));
        }
        let xl = if self.log_x { format!("{} (log scale)", self.x_label) } else { self.x_label.clone() };
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, MARGIN_L + pw / 2.0, HEIGHT - 12.0, escape(&xl));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            MARGIN_T + ph / 2.0,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let colour = COLOURS[i % COLOURS.len()];
            let coords: Vec<String> = series
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_x || *x > 0.0))
                .map(|(x, y)| format!("{:.2},{:.2}", px(tx(*x)), py(*y)))
                .collect();
            if !coords.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
                    coords.join(" ")
                );
            }
            let ly = MARGIN_T + 14.0 + 18.0 * i as f64;
            let lx = MARGIN_L + pw + 12.0;
            let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, lx + 20.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&series.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

/// `phi` and `phi_F` against `r`.
pub fn phi_chart(trace: &dyn TraceRows, title: &str, log_x: bool) -> Chart {
    let rows = trace.rows();
    Chart {
        title: title.into(),
        x_label: "r".into(),
        y_label: "value".into(),
        log_x,
        series: vec![
            Series { label: "phi".into(), points: rows.iter().map(|r| (r[0], r[5])).collect() },
            Series { label: "phi_F".into(), points: rows.iter().map(|r| (r[0], r[6])).collect() },
        ],
    }
}

pub fn emit_svg<W: Write>(chart: &Chart, mut out: W) -> Result<()> {
    out.write_all(chart.render().as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monotone::MonotonicityTrace;

    fn trace(rows: usize) -> MonotonicityTrace {
        let mut t = MonotonicityTrace::empty(0.0, 1e-3);
        for i in 0..rows {
            let r = 0.1 * (i + 1) as f64;
            t.radii.push(r);
            t.a_plus.push(r / 3.0);
            t.a_minus.push(r * std::f64::consts::PI);
            t.b_plus.push(1.0 / 7.0);
            t.b_minus.push(0.0);
            t.a_plus_f.push(r.sqrt());
            t.a_minus_f.push(1e-300);
            t.phi.push(r.exp());
            t.phi_f.push(-r);
            t.log_derivative.push(0.0);
            t.verdicts.push(i != 1);
        }
        t
    }

    fn render(t: &MonotonicityTrace) -> String {
        let mut buf = Vec::new();
        emit_csv(t, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_trace_is_header_only() {
        assert_eq!(render(&trace(0)), "r,A_plus,A_minus,B_plus,B_minus,phi,phi_F,verdict\n");
    }

    #[test]
    fn rows_round_trip_bit_for_bit() {
        let t = trace(3);
        let text = render(&t);
        assert_eq!(text.lines().count(), 4);
        assert!(!text.contains('\r'));
        let rows = read_trace_csv(text.as_bytes()).unwrap();
        let expected = t.rows();
        assert_eq!(rows.len(), 3);
        for (row, exp) in rows.iter().zip(&expected) {
            for (a, b) in row.values.iter().zip(exp) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!(rows.iter().map(|r| r.pass).collect::<Vec<_>>(), vec![true, false, true]);
    }

    #[test]
    fn svg_is_deterministic_and_escaped() {
        let t = trace(5);
        let a = phi_chart(&t, "a < b & c", true).render();
        assert_eq!(a, phi_chart(&t, "a < b & c", true).render());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a &lt; b &amp; c") && a.matches("<polyline").count() == 2);
    }

    #[test]
    fn empty_chart_renders() {
        let c = Chart { title: "t".into(), x_label: "x".into(), y_label: "y".into(), log_x: false, series: vec![] };
        assert!(c.render().contains("</svg>"));
    }
}
