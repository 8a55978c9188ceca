//! Posterior contour grids for the two-parameter tanh regression and their
//! SVG rendering by marching squares.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sltvi::asymptotics::{posterior_grid, GridSpec, PosteriorGrid};

use crate::error::Result;
use crate::sweep::stable_hash;

/// Rows of the figure: the true `(a₀, b₀)`.
pub const TRUTHS: [(f64, f64); 2] = [(0.5, 1.0), (0.0, 0.0)];
/// Columns of the figure: sample sizes.
pub const SAMPLE_SIZES: [usize; 3] = [50, 500, 5000];
/// Contour levels as fractions of each panel's peak density.
pub const LEVELS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

pub fn grid_seed(a0: f64, b0: f64, n: usize, global_seed: u64) -> u64 {
    stable_hash(&[
        "contour",
        &a0.to_string(),
        &b0.to_string(),
        &n.to_string(),
        &global_seed.to_string(),
    ])
}

pub fn grid_csv(g: &PosteriorGrid) -> String {
    let mut s = String::from("a,b,density\n");
    for (i, a) in g.a.iter().enumerate() {
        for (j, b) in g.b.iter().enumerate() {
            let _ = writeln!(s, "{a},{b},{}", g.at(i, j));
        }
    }
    s
}

/// Line segments of the `level` set of `f` sampled on `xs × ys`, where
/// `f(i, j)` is the value at `(xs[i], ys[j])`. Saddle cells are resolved by
/// the cell-centre average.
pub fn marching_squares(
    xs: &[f64],
    ys: &[f64],
    f: impl Fn(usize, usize) -> f64,
    level: f64,
) -> Vec<((f64, f64), (f64, f64))> {
    let mut segs = Vec::new();
    for i in 0..xs.len().saturating_sub(1) {
        for j in 0..ys.len().saturating_sub(1) {
            // corners counter-clockwise from (i, j)
            let c = [
                (xs[i], ys[j], f(i, j)),
                (xs[i + 1], ys[j], f(i + 1, j)),
                (xs[i + 1], ys[j + 1], f(i + 1, j + 1)),
                (xs[i], ys[j + 1], f(i, j + 1)),
            ];
            let idx = c
                .iter()
                .enumerate()
                .fold(0usize, |m, (k, p)| m | (((p.2 > level) as usize) << k));
            if idx == 0 || idx == 15 {
                continue;
            }
            let edge = |e: usize| {
                let (p, q) = (c[e], c[(e + 1) % 4]);
                let t = (level - p.2) / (q.2 - p.2);
                (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
            };
            // edge e joins corner e and corner e+1
            let pairs: &[(usize, usize)] = match idx {
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                5 | 10 => {
                    let centre = c.iter().map(|p| p.2).sum::<f64>() / 4.0 > level;
                    // corners 0 and 2 above when idx == 5
                    if (idx == 5) == centre {
                        &[(3, 2), (0, 1)]
                    } else {
                        &[(3, 0), (1, 2)]
                    }
                }
                _ => unreachable!(),
            };
            for &(e1, e2) in pairs {
                segs.push((edge(e1), edge(e2)));
            }
        }
    }
    segs
}

const CELL: f64 = 260.0;
const PAD: f64 = 40.0;

fn panel(svg: &mut String, g: &PosteriorGrid, ox: f64, oy: f64, title: &str) {
    let inner = CELL - PAD - 30.0;
    let (x0, y0) = (ox + PAD, oy + 30.0);
    let lo = g.a[0];
    let hi = *g.a.last().unwrap();
    let mx = |a: f64| x0 + (a - lo) / (hi - lo) * inner;
    let my = |b: f64| y0 + inner - (b - g.b[0]) / (g.b.last().unwrap() - g.b[0]) * inner;
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{title}</text>"#,
        x0 + inner / 2.0,
        oy + 20.0
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{x0:.2}" y="{y0:.2}" width="{inner:.2}" height="{inner:.2}" fill="none" stroke="#000"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">a</text>"#,
        x0 + inner / 2.0,
        y0 + inner + 24.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="10">b</text>"#,
        x0 - 30.0,
        y0 + inner / 2.0
    );
    for t in [lo, 0.0, hi] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9">{t}</text>"#,
            mx(t),
            y0 + inner + 12.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="9">{t}</text>"#,
            x0 - 4.0,
            my(t) + 3.0
        );
    }
    let peak = g.density.iter().copied().fold(0.0, f64::max);
    for (li, frac) in LEVELS.iter().enumerate() {
        let segs = marching_squares(&g.a, &g.b, |i, j| g.at(i, j), frac * peak);
        let mut d = String::new();
        for ((ax, ay), (bx, by)) in segs {
            let _ = write!(d, "M{:.2},{:.2}L{:.2},{:.2}", mx(ax), my(ay), mx(bx), my(by));
        }
        let shade = 200 - 40 * li;
        let _ = writeln!(
            svg,
            r#"<path class="contour" d="{d}" fill="none" stroke="rgb({shade},{},{})" stroke-width="1"/>"#,
            shade / 3,
            255 - shade
        );
    }
}

/// Writes one CSV per `(truth, n)` and a single figure `contour.svg`.
pub fn write_contours(out_dir: &Path, grid: GridSpec, global_seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let width = CELL * SAMPLE_SIZES.len() as f64;
    let height = CELL * TRUTHS.len() as f64 + 30.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    let _ = writeln!(
        svg,
        r#"<text x="10" y="20" font-size="14">posterior density of (a, b), y = a tanh(bx) + N(0, 1)</text>"#
    );
    let mut paths = Vec::new();
    for (r, &(a0, b0)) in TRUTHS.iter().enumerate() {
        for (c, &n) in SAMPLE_SIZES.iter().enumerate() {
            let g = posterior_grid(a0, b0, n, grid_seed(a0, b0, n, global_seed), grid)?;
            let p = out_dir.join(format!("contour_a{a0}_b{b0}_n{n}.csv"));
            fs::write(&p, grid_csv(&g))?;
            paths.push(p);
            panel(
                &mut svg,
                &g,
                CELL * c as f64,
                30.0 + CELL * r as f64,
                &format!("a₀={a0}, b₀={b0}, n={n}"),
            );
        }
    }
    svg.push_str("</svg>\n");
    let p = out_dir.join("contour.svg");
    fs::write(&p, svg)?;
    paths.push(p);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_level_set() {
        let xs: Vec<f64> = (0..81).map(|i| -2.0 + 0.05 * i as f64).collect();
        let segs = marching_squares(&xs, &xs, |i, j| -(xs[i] * xs[i] + xs[j] * xs[j]), -1.0);
        assert!(!segs.is_empty());
        for ((ax, ay), (bx, by)) in &segs {
            assert!(((ax * ax + ay * ay).sqrt() - 1.0).abs() < 5e-3);
            assert!(((bx * bx + by * by).sqrt() - 1.0).abs() < 5e-3);
        }
        let length: f64 = segs
            .iter()
            .map(|((ax, ay), (bx, by))| ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt())
            .sum();
        assert!((length - 2.0 * std::f64::consts::PI).abs() < 0.01);
    }

    #[test]
    fn saddle_cell_gives_two_segments() {
        let xs = [0.0, 1.0];
        let v = [[1.0, 0.0], [0.0, 1.0]];
        let segs = marching_squares(&xs, &xs, |i, j| v[i][j], 0.5);
        assert_eq!(segs.len(), 2);
    }

    #[test]
    fn flat_field_has_no_segments() {
        let xs = [0.0, 1.0, 2.0];
        assert!(marching_squares(&xs, &xs, |_, _| 3.0, 1.0).is_empty());
    }
}
