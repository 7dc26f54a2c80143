//! Minimal SVG line plots and matching gnuplot scripts.

use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    /// Non-finite coordinates break the polyline.
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub dashed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Dashed vertical lines `(x, label)`.
    pub vlines: Vec<(f64, String)>,
    /// Marked values on the vertical axis.
    pub yticks: Vec<(f64, String)>,
    /// Comment embedded at the top of the file.
    pub comment: String,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 64.0;
const MR: f64 = 120.0;
const MT: f64 = 36.0;
const MB: f64 = 48.0;

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-300);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let mut xs: Vec<f64> = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        let mut ys: Vec<f64> = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
        xs.extend(self.vlines.iter().map(|v| v.0));
        ys.extend(self.yticks.iter().map(|v| v.0));
        let range = |v: &[f64]| {
            let f: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
            let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 * (1.0 + lo.abs()) {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        (range(&xs), range(&ys))
    }

    pub fn to_svg(&self) -> String {
        let ((x0, x1), (y0, y1)) = self.bounds();
        let sx = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
        let sy = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        if !self.comment.is_empty() {
            let _ = writeln!(s, "<!-- {} -->", self.comment.replace("--", "-"));
        }
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(&self.title));
        let (bx, by, bw, bh) = (ML, MT, W - ML - MR, H - MT - MB);
        let _ = writeln!(s, r#"<rect x="{bx}" y="{by}" width="{bw}" height="{bh}" fill="none" stroke="black"/>"#);
        for t in nice_ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                H - MB,
                H - MB + 5.0,
                H - MB + 18.0,
                fmt_tick(t)
            );
        }
        for t in nice_ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{ML}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                ML - 5.0,
                ML - 8.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, ML + bw / 2.0, H - 10.0, escape(&self.x_label));
        let _ = writeln!(s, r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#, MT + bh / 2.0, MT + bh / 2.0, escape(&self.y_label));
        for (x, label) in &self.vlines {
            let px = sx(*x);
            let _ = writeln!(
                s,
                r#"<line x1="{px:.2}" y1="{MT}" x2="{px:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="6 4"/><text x="{:.2}" y="{:.2}" fill="gray">{}</text>"#,
                H - MB,
                px + 4.0,
                MT + 14.0,
                escape(label)
            );
        }
        for (y, label) in &self.yticks {
            let py = sy(*y);
            let _ = writeln!(
                s,
                r#"<line x1="{ML}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="gray" stroke-width="3"/><text x="{:.2}" y="{:.2}" fill="gray">{}</text>"#,
                ML + 12.0,
                ML + 16.0,
                py + 4.0,
                escape(label)
            );
        }
        for (i, ser) in self.series.iter().enumerate() {
            let mut d = String::new();
            let mut pen = false;
            for &(x, y) in &ser.points {
                if !(x.is_finite() && y.is_finite()) {
                    pen = false;
                    continue;
                }
                let _ = write!(d, "{}{:.2},{:.2} ", if pen { "L" } else { "M" }, sx(x), sy(y));
                pen = true;
            }
            let dash = if ser.dashed { r#" stroke-dasharray="4 3""# } else { "" };
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.6"{dash}/>"#, d.trim_end(), ser.color);
            for &(x, y) in ser.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}"/>"#, sx(x), sy(y), ser.color);
            }
            let ly = MT + 16.0 + 18.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}">{}</text>"#,
                W - MR + 10.0,
                W - MR + 34.0,
                ser.color,
                W - MR + 40.0,
                ly + 4.0,
                escape(&ser.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Gnuplot script plotting `columns` (1-based, x first) of `csv`.
    pub fn gnuplot(&self, csv: &str, columns: &[(usize, usize, &str)]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.comment);
        let _ = writeln!(s, "set datafile separator ','\nset datafile missing ''\nset key outside right");
        let _ = writeln!(s, "set title '{}'\nset xlabel '{}'\nset ylabel '{}'", self.title, self.x_label, self.y_label);
        for (i, (x, label)) in self.vlines.iter().enumerate() {
            let _ =
                writeln!(s, "set arrow {} from {x:.16e}, graph 0 to {x:.16e}, graph 1 nohead dashtype 2 lc 'gray'\nset label {} '{label}' at {x:.16e}, graph 0.95", i + 1, i + 1);
        }
        for (y, label) in &self.yticks {
            let _ = writeln!(s, "set ytics add ('{label}' {y:.16e})");
        }
        let parts: Vec<String> = columns.iter().map(|(x, y, t)| format!("'{csv}' every ::2 using {x}:{y} with linespoints title '{t}'")).collect();
        let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
        s
    }
}

fn fmt_tick(t: f64) -> String {
    let s = format!("{t:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}
