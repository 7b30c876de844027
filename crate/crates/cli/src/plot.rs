//! Minimal static SVG figures: log-log line plots with interquartile bands,
//! scatter overlays, and decade tick marks. No plotting dependency; the
//! output is plain vector markup.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chaotic_averages::experiments::SummaryRow;
use chaotic_averages::measures::MeasureKind;
use chaotic_averages::weights::Method;

const W: f64 = 640.0;
const H: f64 = 480.0;
const ML: f64 = 70.0; // margins
const MR: f64 = 20.0;
const MT: f64 = 36.0;
const MB: f64 = 56.0;

struct Axes {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Axes {
    fn from_log_ranges(xs: &[f64], ys: &[f64]) -> Axes {
        let lo = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut y_lo, y_hi) = (lo(ys).log10().floor(), hi(ys).log10().ceil());
        if y_hi - y_lo < 1.0 {
            y_lo -= 1.0;
        }
        Axes {
            x_lo: lo(xs).log10().floor(),
            x_hi: hi(xs).log10().ceil(),
            y_lo,
            y_hi,
        }
    }

    fn px(&self, x_log: f64) -> f64 {
        ML + (x_log - self.x_lo) / (self.x_hi - self.x_lo) * (W - ML - MR)
    }

    fn py(&self, y_log: f64) -> f64 {
        H - MB - (y_log - self.y_lo) / (self.y_hi - self.y_lo) * (H - MT - MB)
    }
}

struct Svg {
    body: String,
    axes: Axes,
}

impl Svg {
    fn new(axes: Axes, title: &str, x_label: &str, y_label: &str) -> Svg {
        let mut body = String::new();
        write!(
            body,
            r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{tx}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">{title}</text>
"##,
            tx = W / 2.0,
        )
        .unwrap();
        // Frame and decade ticks.
        write!(
            body,
            r##"<rect x="{ML}" y="{MT}" width="{w}" height="{h}" fill="none" stroke="black"/>
"##,
            w = W - ML - MR,
            h = H - MT - MB,
        )
        .unwrap();
        let mut d = axes.x_lo;
        while d <= axes.x_hi + 1e-9 {
            let x = axes.px(d);
            write!(
                body,
                r##"<line x1="{x:.1}" y1="{y0}" x2="{x:.1}" y2="{y1}" stroke="#cccccc" stroke-width="0.5"/>
<text x="{x:.1}" y="{ty}" font-family="sans-serif" font-size="11" text-anchor="middle">1e{d:.0}</text>
"##,
                y0 = MT,
                y1 = H - MB,
                ty = H - MB + 16.0,
            )
            .unwrap();
            d += 1.0;
        }
        let mut d = axes.y_lo;
        while d <= axes.y_hi + 1e-9 {
            let y = axes.py(d);
            write!(
                body,
                r##"<line x1="{ML}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#cccccc" stroke-width="0.5"/>
<text x="{tx}" y="{yy:.1}" font-family="sans-serif" font-size="11" text-anchor="end">1e{d:.0}</text>
"##,
                x1 = W - MR,
                tx = ML - 6.0,
                yy = y + 4.0,
            )
            .unwrap();
            d += 1.0;
        }
        write!(
            body,
            r##"<text x="{cx}" y="{cy}" font-family="sans-serif" font-size="13" text-anchor="middle">{x_label}</text>
<text x="16" y="{my}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 16 {my})">{y_label}</text>
"##,
            cx = W / 2.0,
            cy = H - 14.0,
            my = H / 2.0,
        )
        .unwrap();
        Svg { body, axes }
    }

    fn clamp_log(v: f64) -> f64 {
        v.max(1e-300).log10()
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, dash: &str) {
        if pts.len() < 2 {
            return;
        }
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    self.axes.px(Self::clamp_log(x)),
                    self.axes.py(Self::clamp_log(y))
                )
            })
            .collect();
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(r##" stroke-dasharray="{dash}""##)
        };
        write!(
            self.body,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{dash_attr}/>
"##,
            path.join(" ")
        )
        .unwrap();
    }

    fn band(&mut self, xs: &[f64], lo: &[f64], hi: &[f64], color: &str) {
        if xs.len() < 2 {
            return;
        }
        let mut pts = Vec::new();
        for (x, y) in xs.iter().zip(hi) {
            pts.push(format!(
                "{:.2},{:.2}",
                self.axes.px(Self::clamp_log(*x)),
                self.axes.py(Self::clamp_log(*y))
            ));
        }
        for (x, y) in xs.iter().zip(lo).rev() {
            pts.push(format!(
                "{:.2},{:.2}",
                self.axes.px(Self::clamp_log(*x)),
                self.axes.py(Self::clamp_log(*y))
            ));
        }
        write!(
            self.body,
            r##"<polygon points="{}" fill="{color}" opacity="0.15" stroke="none"/>
"##,
            pts.join(" ")
        )
        .unwrap();
    }

    fn markers(&mut self, pts: &[(f64, f64)], color: &str, diamond: bool) {
        for &(x, y) in pts {
            let (px, py) = (
                self.axes.px(Self::clamp_log(x)),
                self.axes.py(Self::clamp_log(y)),
            );
            if diamond {
                write!(
                    self.body,
                    r##"<path d="M {px:.1} {t:.1} L {r:.1} {py:.1} L {px:.1} {b:.1} L {l:.1} {py:.1} Z" fill="{color}"/>
"##,
                    t = py - 5.0,
                    b = py + 5.0,
                    l = px - 5.0,
                    r = px + 5.0,
                )
                .unwrap();
            } else {
                write!(
                    self.body,
                    r##"<circle cx="{px:.1}" cy="{py:.1}" r="3" fill="{color}"/>
"##
                )
                .unwrap();
            }
        }
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = MT + 16.0 + 16.0 * i as f64;
            write!(
                self.body,
                r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="{color}" stroke-width="2.5"/>
<text x="{tx}" y="{ty:.1}" font-family="sans-serif" font-size="12">{label}</text>
"##,
                x0 = ML + 10.0,
                x1 = ML + 34.0,
                tx = ML + 40.0,
                ty = y + 4.0,
            )
            .unwrap();
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn method_color(m: Method) -> &'static str {
    match m {
        Method::Lsw => "#648fff",
        Method::Nnls => "#2e9e62",
        Method::Constrained => "#8a5bb8",
        Method::Markov => "#785ef0",
        Method::Uniform => "#ffb000",
        Method::Pot => "#dc267f",
    }
}

/// Render every figure supported by the available inputs; returns the
/// written paths.
pub fn render_all(
    summary: &[SummaryRow],
    theta_scan_csv: Option<&Path>,
    weights_path: Option<&Path>,
    library_path: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for kind in [MeasureKind::Orbit, MeasureKind::Snippet] {
        if let Some(svg) = error_vs_n(summary, kind) {
            let path = out_dir.join(format!("error_vs_N_{}.svg", kind.tag()));
            std::fs::write(&path, svg)?;
            written.push(path);
        }
        if let Some(svg) = error_vs_p(summary, kind) {
            let path = out_dir.join(format!("error_vs_P_{}.svg", kind.tag()));
            std::fs::write(&path, svg)?;
            written.push(path);
        }
    }
    if let Some(csv) = theta_scan_csv {
        let path = out_dir.join("theta_scan.svg");
        std::fs::write(&path, theta_scan_figure(csv)?)?;
        written.push(path);
    }
    if let (Some(wp), Some(lp)) = (weights_path, library_path) {
        let path = out_dir.join("weights_vs_lambda.svg");
        std::fs::write(&path, weights_figure(wp, lp)?)?;
        written.push(path);
    }
    Ok(written)
}

fn emax_series(
    summary: &[SummaryRow],
    kind: MeasureKind,
    method: Method,
) -> Vec<(usize, usize, f64, f64, f64)> {
    let mut rows: Vec<_> = summary
        .iter()
        .filter(|s| {
            s.kind == kind && s.method == method && s.observable == "emax" && s.median > 0.0
        })
        .map(|s| (s.p, s.n, s.median, s.q25, s.q75))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    rows
}

fn error_vs_n(summary: &[SummaryRow], kind: MeasureKind) -> Option<String> {
    let methods = [Method::Lsw, Method::Nnls, Method::Markov, Method::Uniform];
    let p_max = summary
        .iter()
        .filter(|s| s.kind == kind && s.observable == "emax")
        .map(|s| s.p)
        .max()?;
    let mut all_x = Vec::new();
    let mut all_y = Vec::new();
    let mut series = Vec::new();
    for m in methods {
        let rows: Vec<_> = emax_series(summary, kind, m)
            .into_iter()
            .filter(|r| r.0 == p_max)
            .collect();
        if rows.len() >= 2 {
            for r in &rows {
                all_x.push(r.1 as f64);
                all_y.push(r.3);
                all_y.push(r.4);
            }
            series.push((m, rows));
        }
    }
    if series.is_empty() {
        return None;
    }
    let axes = Axes::from_log_ranges(&all_x, &all_y);
    let mut svg = Svg::new(
        axes,
        &format!("E_max vs N ({}, P = {p_max})", kind.tag()),
        "N (chaotic samples)",
        "median E_max",
    );
    let mut legend = Vec::new();
    for (m, rows) in &series {
        let xs: Vec<f64> = rows.iter().map(|r| r.1 as f64).collect();
        let med: Vec<(f64, f64)> = rows.iter().map(|r| (r.1 as f64, r.2)).collect();
        let lo: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let hi: Vec<f64> = rows.iter().map(|r| r.4).collect();
        svg.band(&xs, &lo, &hi, method_color(*m));
        svg.polyline(&med, method_color(*m), "");
        legend.push((m.tag(), method_color(*m)));
    }
    // N^{-1/2} guide anchored at the first LSW point.
    if let Some((_, rows)) = series.iter().find(|(m, _)| *m == Method::Lsw) {
        let (n0, e0) = (rows[0].1 as f64, rows[0].2);
        let n1 = rows.last().unwrap().1 as f64;
        let guide = vec![(n0, e0), (n1, e0 * (n0 / n1).sqrt())];
        svg.polyline(&guide, "black", "6,4");
        legend.push(("N^-1/2", "black"));
    }
    svg.legend(&legend);
    Some(svg.finish())
}

fn error_vs_p(summary: &[SummaryRow], kind: MeasureKind) -> Option<String> {
    let methods = [Method::Lsw, Method::Nnls, Method::Markov, Method::Uniform];
    let n_max = summary
        .iter()
        .filter(|s| s.kind == kind && s.observable == "emax" && s.method != Method::Pot)
        .map(|s| s.n)
        .max()?;
    let mut all_x = Vec::new();
    let mut all_y = Vec::new();
    let mut series = Vec::new();
    for m in methods {
        let rows: Vec<_> = emax_series(summary, kind, m)
            .into_iter()
            .filter(|r| r.1 == n_max)
            .collect();
        if rows.len() >= 2 {
            for r in &rows {
                all_x.push(r.0 as f64);
                all_y.push(r.3);
                all_y.push(r.4);
            }
            series.push((m, rows));
        }
    }
    if series.is_empty() {
        return None;
    }
    let pot_rows = emax_series(summary, kind, Method::Pot);
    for r in &pot_rows {
        all_x.push(r.0 as f64);
        all_y.push(r.2);
    }
    let axes = Axes::from_log_ranges(&all_x, &all_y);
    let mut svg = Svg::new(
        axes,
        &format!("E_max vs P ({}, N = {n_max})", kind.tag()),
        "P (library size)",
        "median E_max",
    );
    let mut legend = Vec::new();
    for (m, rows) in &series {
        let xs: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
        let med: Vec<(f64, f64)> = rows.iter().map(|r| (r.0 as f64, r.2)).collect();
        let lo: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let hi: Vec<f64> = rows.iter().map(|r| r.4).collect();
        svg.band(&xs, &lo, &hi, method_color(*m));
        svg.polyline(&med, method_color(*m), "");
        legend.push((m.tag(), method_color(*m)));
    }
    if !pot_rows.is_empty() {
        let pts: Vec<(f64, f64)> = pot_rows.iter().map(|r| (r.0 as f64, r.2)).collect();
        svg.markers(&pts, method_color(Method::Pot), true);
        legend.push(("pot", method_color(Method::Pot)));
    }
    svg.legend(&legend);
    Some(svg.finish())
}

fn theta_scan_figure(csv: &Path) -> Result<String> {
    let text = std::fs::read_to_string(csv)
        .with_context(|| format!("reading theta scan {}", csv.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            anyhow::bail!("theta scan line {}: expected 3 fields", i + 1);
        }
        rows.push((
            f[0].parse::<f64>()?,
            f[1].parse::<f64>()?,
            f[2].parse::<f64>()?,
        ));
    }
    anyhow::ensure!(rows.len() >= 2, "theta scan needs at least two rows");
    let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut ys: Vec<f64> = rows.iter().map(|r| r.1.max(1e-12)).collect();
    ys.extend(rows.iter().map(|r| r.2.max(1e-12)));
    let axes = Axes::from_log_ranges(&xs, &ys);
    let mut svg = Svg::new(
        axes,
        "Frobenius distance of A(theta) to the two degenerate limits",
        "theta",
        "Frobenius distance",
    );
    let ones: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.1.max(1e-12))).collect();
    let ident: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.2.max(1e-12))).collect();
    svg.polyline(&ones, "#1f77b4", "5,3");
    svg.polyline(&ident, "#ff7f0e", "");
    svg.legend(&[("||A - ones||", "#1f77b4"), ("||A - I||", "#ff7f0e")]);
    Ok(svg.finish())
}

fn weights_figure(weights_path: &Path, library_path: &Path) -> Result<String> {
    let wv = chaotic_averages::weights::load_weights(weights_path)?;
    let lib = chaotic_averages::orbits::load_library(library_path)?;
    anyhow::ensure!(
        wv.w.len() == lib.len(),
        "weight vector ({}) and library ({}) sizes differ",
        wv.w.len(),
        lib.len()
    );
    let pts: Vec<(f64, f64)> = lib
        .orbits
        .iter()
        .zip(&wv.w)
        .map(|(o, &w)| (o.floquet_exponent, w))
        .collect();

    // Linear axes here: exponents span less than a decade and weights may
    // be negative.
    let (x_lo, x_hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, _)| {
            (lo.min(x), hi.max(x))
        });
    let (y_lo, y_hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| {
            (lo.min(y), hi.max(y))
        });
    let pad_x = 0.05 * (x_hi - x_lo).max(1e-3);
    let pad_y = 0.1 * (y_hi - y_lo).max(1e-6);
    let (x_lo, x_hi) = (x_lo - pad_x, x_hi + pad_x);
    let (y_lo, y_hi) = (y_lo - pad_y, y_hi + pad_y);
    let px = |x: f64| ML + (x - x_lo) / (x_hi - x_lo) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y_lo) / (y_hi - y_lo) * (H - MT - MB);

    let mut body = String::new();
    write!(
        body,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{tx}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">{} weights vs Floquet exponent (P = {})</text>
<rect x="{ML}" y="{MT}" width="{w}" height="{h}" fill="none" stroke="black"/>
"##,
        wv.method.tag(),
        lib.len(),
        tx = W / 2.0,
        w = W - ML - MR,
        h = H - MT - MB,
    )
    .unwrap();
    if y_lo < 0.0 && y_hi > 0.0 {
        let y0 = py(0.0);
        write!(
            body,
            r##"<line x1="{ML}" y1="{y0:.1}" x2="{x1}" y2="{y0:.1}" stroke="#999999" stroke-dasharray="4,3"/>
"##,
            x1 = W - MR
        )
        .unwrap();
    }
    for &(x, y) in &pts {
        write!(
            body,
            r##"<circle cx="{:.1}" cy="{:.1}" r="4" fill="#648fff" opacity="0.8"/>
"##,
            px(x),
            py(y)
        )
        .unwrap();
    }
    write!(
        body,
        r##"<text x="{cx}" y="{cy}" font-family="sans-serif" font-size="13" text-anchor="middle">Floquet exponent</text>
<text x="16" y="{my}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 16 {my})">weight</text>
<text x="{ML}" y="{by}" font-family="sans-serif" font-size="11">x: [{x_lo:.3}, {x_hi:.3}]  y: [{y_lo:.4}, {y_hi:.4}]</text>
</svg>
"##,
        cx = W / 2.0,
        cy = H - 14.0,
        my = H / 2.0,
        by = H - 2.0,
    )
    .unwrap();
    Ok(body)
}
