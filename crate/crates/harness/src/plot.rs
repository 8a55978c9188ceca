//! Deterministic SVG figures: one file per triplet, one row per `H`, with an
//! MVFE-vs-ln n panel and a VGE-vs-1/n panel.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::report::{aggregate, GroupKey, GroupSummary, NStats};
use crate::sweep::CellResult;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const LEGEND_H: f64 = 18.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// Default `n` range that every MVFE axis covers.
pub const N_RANGE: (f64, f64) = (1000.0, 5012.0);

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// An affine map from data to pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub px_lo: f64,
    pub px_hi: f64,
}

impl Axis {
    pub fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span <= 0.0 {
        let w = lo.abs().max(1.0) * 0.05;
        return (lo - w, hi + w);
    }
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// Up to about six round tick values inside `[lo, hi]`.
pub fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    if !(raw > 0.0 && raw.is_finite()) {
        return vec![lo];
    }
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Panel<'a> {
    title: String,
    x_label: &'a str,
    y_label: &'a str,
    ox: f64,
    oy: f64,
}

struct Series<'a> {
    label: String,
    color: &'static str,
    points: Vec<(f64, f64, f64, f64)>,
    fit: Option<&'a dyn Fn(f64) -> f64>,
}

fn draw_frame(svg: &mut String, p: &Panel, xa: Axis, ya: Axis) {
    let (x0, x1) = (p.ox + MARGIN_L, p.ox + PANEL_W - MARGIN_R);
    let (y0, y1) = (p.oy + MARGIN_T, p.oy + PANEL_H - MARGIN_B);
    let _ = writeln!(
        svg,
        r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#000"/>"##,
        x1 - x0,
        y1 - y0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
        (x0 + x1) / 2.0,
        p.oy + 22.0,
        esc(&p.title)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#,
        (x0 + x1) / 2.0,
        y1 + 38.0,
        esc(p.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        p.ox + 16.0,
        (y0 + y1) / 2.0,
        p.ox + 16.0,
        (y0 + y1) / 2.0,
        esc(p.y_label)
    );
    for t in ticks(xa.lo, xa.hi) {
        let x = xa.map(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{y1:.2}" x2="{x:.2}" y2="{:.2}" stroke="#000"/><text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"##,
            y1 + 5.0,
            y1 + 17.0,
            fmt_tick(t)
        );
    }
    for t in ticks(ya.lo, ya.hi) {
        let y = ya.map(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="#000"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"##,
            x0 - 5.0,
            x0 - 7.0,
            y + 3.5,
            fmt_tick(t)
        );
    }
}

fn placeholder(svg: &mut String, p: &Panel, note: &str) {
    let (x0, x1) = (p.ox + MARGIN_L, p.ox + PANEL_W - MARGIN_R);
    let (y0, y1) = (p.oy + MARGIN_T, p.oy + PANEL_H - MARGIN_B);
    let _ = writeln!(
        svg,
        r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#999" stroke-dasharray="4 3"/>"##,
        x1 - x0,
        y1 - y0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
        (x0 + x1) / 2.0,
        p.oy + 22.0,
        esc(&p.title)
    );
    let _ = writeln!(
        svg,
        r##"<text class="placeholder" x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12" fill="#666">{}</text>"##,
        (x0 + x1) / 2.0,
        (y0 + y1) / 2.0,
        esc(note)
    );
}

fn draw_panel(svg: &mut String, p: &Panel, series: &[Series], x_range: (f64, f64)) {
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for s in series {
        for &(_, lo, _, hi) in &s.points {
            y_lo = y_lo.min(lo);
            y_hi = y_hi.max(hi);
        }
    }
    let (xl, xh) = x_range;
    let (yl, yh) = padded(y_lo, y_hi);
    let xa = Axis {
        lo: xl,
        hi: xh,
        px_lo: p.ox + MARGIN_L,
        px_hi: p.ox + PANEL_W - MARGIN_R,
    };
    let ya = Axis {
        lo: yl,
        hi: yh,
        px_lo: p.oy + PANEL_H - MARGIN_B,
        px_hi: p.oy + MARGIN_T,
    };
    draw_frame(svg, p, xa, ya);
    let clip_id = format!("clip{}_{}", p.ox as i64, p.oy as i64);
    let _ = writeln!(
        svg,
        r#"<clipPath id="{clip_id}"><rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/></clipPath>"#,
        xa.px_lo,
        ya.px_hi,
        xa.px_hi - xa.px_lo,
        ya.px_lo - ya.px_hi
    );
    for (si, s) in series.iter().enumerate() {
        let _ = writeln!(svg, r#"<g class="series" clip-path="url(#{clip_id})">"#);
        for &(x, lo, mean, hi) in &s.points {
            let px = xa.map(x);
            let _ = writeln!(
                svg,
                r#"<line class="whisker" x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="{}"/><circle cx="{px:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#,
                ya.map(lo),
                ya.map(hi),
                s.color,
                ya.map(mean),
                s.color
            );
        }
        if let Some(f) = s.fit {
            let steps = 60;
            let mut d = String::new();
            for i in 0..=steps {
                let x = xl + (xh - xl) * i as f64 / steps as f64;
                let y = f(x);
                let _ = write!(
                    d,
                    "{}{:.2},{:.2} ",
                    if i == 0 { "M" } else { "L" },
                    xa.map(x),
                    ya.map(y)
                );
            }
            let _ = writeln!(
                svg,
                r#"<path class="fit" d="{}" fill="none" stroke="{}" stroke-dasharray="6 4"/>"#,
                d.trim_end(),
                s.color
            );
        }
        let _ = writeln!(svg, "</g>");
        let ly = p.oy + MARGIN_T + 14.0 + LEGEND_H * si as f64;
        let lx = xa.px_lo + 8.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-dasharray="6 4"/><text class="legend" x="{:.2}" y="{ly:.2}" font-size="10">{}</text>"#,
            ly - 3.5,
            lx + 18.0,
            ly - 3.5,
            s.color,
            lx + 22.0,
            esc(&s.label)
        );
    }
}

fn mvfe_legend(key: &GroupKey, fit: Option<&GroupSummary>) -> String {
    let base = format!("{} {}_{}", key.base, key.coupling_pairs, key.hidden);
    match fit {
        Some(s) if s.status == "ok" => format!("{base}: λ_vfe={:.3} R²={:.3}", s.lambda_vfe, s.r2_vfe),
        _ => format!("{base}: no fit"),
    }
}

fn vge_legend(key: &GroupKey, fit: Option<&GroupSummary>) -> String {
    let base = format!("{} {}_{}", key.base, key.coupling_pairs, key.hidden);
    match fit {
        Some(s) if s.status == "ok" => format!("{base}: λ_vge={:.3} R²={:.3}", s.lambda_vge, s.r2_vge),
        _ => format!("{base}: no fit"),
    }
}

fn svg_open(width: f64, height: f64, title: &str) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    let _ = writeln!(
        svg,
        r#"<text class="header" x="10" y="20" font-size="15">{}</text>"#,
        esc(title)
    );
    svg
}

/// Header-only figure used when there is nothing to plot.
pub fn empty_svg(note: &str) -> String {
    let mut svg = svg_open(2.0 * PANEL_W, 80.0, "variational free energy and generalization error");
    let _ = writeln!(
        svg,
        r##"<text class="placeholder" x="10" y="50" font-size="13" fill="#666">{}</text>"##,
        esc(note)
    );
    svg.push_str("</svg>\n");
    svg
}

/// x extents of the two panels for the plotted sample sizes; both always
/// include [`N_RANGE`].
pub fn axis_ranges(ns: &[usize]) -> ((f64, f64), (f64, f64)) {
    let mut ln_lo = N_RANGE.0.ln();
    let mut ln_hi = N_RANGE.1.ln();
    let mut inv_hi = 1.0 / N_RANGE.0;
    for &n in ns {
        let l = (n as f64).ln();
        ln_lo = ln_lo.min(l);
        ln_hi = ln_hi.max(l);
        inv_hi = inv_hi.max(1.0 / n as f64);
    }
    let span = ln_hi - ln_lo;
    ((ln_lo - 0.05 * span, ln_hi + 0.05 * span), (0.0, inv_hi * 1.05))
}

/// Renders one triplet's figure. `groups` holds every group of that triplet.
pub fn triplet_svg(triplet: &str, groups: &BTreeMap<GroupKey, Vec<NStats>>, summary: &[GroupSummary]) -> String {
    let mut by_h: BTreeMap<usize, Vec<(&GroupKey, &Vec<NStats>)>> = BTreeMap::new();
    for (k, v) in groups.iter().filter(|(k, _)| k.triplet == triplet) {
        by_h.entry(k.h).or_default().push((k, v));
    }
    for s in summary.iter().filter(|s| s.key.triplet == triplet) {
        by_h.entry(s.key.h).or_default();
    }
    let rows = by_h.len().max(1);
    let top = 30.0;
    let mut svg = svg_open(2.0 * PANEL_W, top + PANEL_H * rows as f64, triplet);
    for (row, (h, gs)) in by_h.iter().enumerate() {
        let oy = top + PANEL_H * row as f64;
        let mvfe_panel = Panel {
            title: format!("{triplet} H={h}: MVFE"),
            x_label: "ln n",
            y_label: "MVFE",
            ox: 0.0,
            oy,
        };
        let vge_panel = Panel {
            title: format!("{triplet} H={h}: VGE"),
            x_label: "1/n",
            y_label: "VGE",
            ox: PANEL_W,
            oy,
        };
        let live: Vec<_> = gs.iter().filter(|(_, v)| !v.is_empty()).collect();
        if live.is_empty() {
            placeholder(&mut svg, &mvfe_panel, "no completed cells for this group");
            placeholder(&mut svg, &vge_panel, "no completed cells for this group");
            continue;
        }
        let fits: Vec<Option<&GroupSummary>> = live
            .iter()
            .map(|(k, _)| summary.iter().find(|s| &s.key == *k))
            .collect();
        let mvfe_lines: Vec<Box<dyn Fn(f64) -> f64>> = fits
            .iter()
            .map(|f| match f {
                Some(s) if s.status == "ok" => {
                    let (a, b) = (s.lambda_vfe, s.intercept_vfe);
                    Box::new(move |x: f64| a * x + b) as Box<dyn Fn(f64) -> f64>
                }
                _ => Box::new(|_| f64::NAN) as Box<dyn Fn(f64) -> f64>,
            })
            .collect();
        let vge_lines: Vec<Box<dyn Fn(f64) -> f64>> = fits
            .iter()
            .map(|f| match f {
                Some(s) if s.status == "ok" => {
                    let a = s.lambda_vge;
                    Box::new(move |x: f64| a * x) as Box<dyn Fn(f64) -> f64>
                }
                _ => Box::new(|_| f64::NAN) as Box<dyn Fn(f64) -> f64>,
            })
            .collect();
        let has_fit = |i: usize| matches!(fits[i], Some(s) if s.status == "ok");

        let ns: Vec<usize> = live.iter().flat_map(|(_, v)| v.iter().map(|s| s.n)).collect();
        let (mvfe_x, vge_x) = axis_ranges(&ns);

        let mvfe_series: Vec<Series> = live
            .iter()
            .enumerate()
            .map(|(i, (k, v))| Series {
                label: mvfe_legend(k, fits[i]),
                color: PALETTE[i % PALETTE.len()],
                points: v
                    .iter()
                    .map(|s| ((s.n as f64).ln(), s.mvfe.min, s.mvfe.mean, s.mvfe.max))
                    .collect(),
                fit: has_fit(i).then(|| mvfe_lines[i].as_ref()),
            })
            .collect();
        let vge_series: Vec<Series> = live
            .iter()
            .enumerate()
            .map(|(i, (k, v))| Series {
                label: vge_legend(k, fits[i]),
                color: PALETTE[i % PALETTE.len()],
                points: v
                    .iter()
                    .map(|s| (1.0 / s.n as f64, s.vge.min, s.vge.mean, s.vge.max))
                    .collect(),
                fit: has_fit(i).then(|| vge_lines[i].as_ref()),
            })
            .collect();
        draw_panel(&mut svg, &mvfe_panel, &mvfe_series, mvfe_x);
        draw_panel(&mut svg, &vge_panel, &vge_series, vge_x);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `plots/<triplet>.svg` for every triplet present, or
/// `plots/empty.svg` when there are no rows. Returns the written paths.
pub fn emit_plots(rows: &[CellResult], summary: &[GroupSummary], plot_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(plot_dir)?;
    let groups = aggregate(rows);
    let mut triplets: Vec<&str> = groups.keys().map(|k| k.triplet.as_str()).collect();
    triplets.extend(summary.iter().map(|s| s.key.triplet.as_str()));
    triplets.sort_unstable();
    triplets.dedup();
    if triplets.is_empty() {
        let p = plot_dir.join("empty.svg");
        fs::write(&p, empty_svg("no results to plot"))?;
        return Ok(vec![p]);
    }
    let mut out = Vec::new();
    for t in triplets {
        let p = plot_dir.join(format!("{t}.svg"));
        fs::write(&p, triplet_svg(t, &groups, summary))?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks(0.0, 1.0), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        let t = ticks(6.8, 8.6);
        assert!(t.iter().all(|v| (6.8..=8.6).contains(v)));
        assert!(t.len() >= 3);
    }

    #[test]
    fn axis_maps_endpoints() {
        let a = Axis {
            lo: 1.0,
            hi: 3.0,
            px_lo: 100.0,
            px_hi: 0.0,
        };
        assert_eq!(a.map(1.0), 100.0);
        assert_eq!(a.map(3.0), 0.0);
        assert_eq!(a.map(2.0), 50.0);
    }

    #[test]
    fn empty_is_annotated() {
        let s = empty_svg("nothing");
        assert!(s.starts_with("<svg"));
        assert!(s.contains("nothing"));
        assert!(!s.contains("class=\"series\""));
    }

    #[test]
    fn tick_labels() {
        assert_eq!(fmt_tick(0.0), "0");
        assert_eq!(fmt_tick(7.5), "7.5");
        assert_eq!(fmt_tick(0.0002), "2.0e-4");
    }
}
