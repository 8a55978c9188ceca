//! Seed aggregation and coefficient fits over a results file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sltvi::asymptotics::{fit_mvfe_coeff, fit_vge_coeff};
use sltvi::triplets::{Triplet, TripletKind};

use crate::error::{HarnessError, Result};
use crate::sweep::CellResult;

pub const SUMMARY_HEADER: &str =
    "triplet,H,base,coupling_pairs,hidden,status,n_values,lambda_vfe,intercept_vfe,r2_vfe,lambda_vge,r2_vge,true_lambda";
pub const SUMMARY_FILE: &str = "summary.csv";

/// `(triplet, H, base, coupling_pairs, hidden)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub triplet: String,
    pub h: usize,
    pub base: String,
    pub coupling_pairs: usize,
    pub hidden: usize,
}

impl GroupKey {
    pub fn of(r: &CellResult) -> Self {
        Self {
            triplet: r.key.triplet.clone(),
            h: r.key.h,
            base: r.key.base.clone(),
            coupling_pairs: r.key.coupling_pairs,
            hidden: r.key.hidden,
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{} H={} {} {}_{}",
            self.triplet, self.h, self.base, self.coupling_pairs, self.hidden
        )
    }
}

/// min / mean / max of one quantity across seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spread {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            min,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max,
        }
    }
}

/// Seed statistics at one `n`, over `ok` seeds only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NStats {
    pub n: usize,
    pub ok_seeds: usize,
    pub mvfe: Spread,
    pub vge: Spread,
}

/// Groups `ok` rows and aggregates over seeds. Groups whose rows all
/// diverged still appear, with an empty series.
pub fn aggregate(rows: &[CellResult]) -> BTreeMap<GroupKey, Vec<NStats>> {
    let mut by: BTreeMap<GroupKey, BTreeMap<usize, Vec<&CellResult>>> = BTreeMap::new();
    for r in rows {
        let g = by.entry(GroupKey::of(r)).or_default();
        let cell = g.entry(r.key.n).or_default();
        if r.status == "ok" && r.mvfe.is_finite() && r.vge.is_finite() {
            cell.push(r);
        }
    }
    by.into_iter()
        .map(|(k, ns)| {
            let series = ns
                .into_iter()
                .filter(|(_, rs)| !rs.is_empty())
                .map(|(n, rs)| NStats {
                    n,
                    ok_seeds: rs.len(),
                    mvfe: Spread::of(&rs.iter().map(|r| r.mvfe).collect::<Vec<_>>()),
                    vge: Spread::of(&rs.iter().map(|r| r.vge).collect::<Vec<_>>()),
                })
                .collect();
            (k, series)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub key: GroupKey,
    /// `ok`, or `skipped` with fewer than three usable `n` values.
    pub status: String,
    pub n_values: usize,
    pub lambda_vfe: f64,
    pub intercept_vfe: f64,
    pub r2_vfe: f64,
    pub lambda_vge: f64,
    pub r2_vge: f64,
    pub true_lambda: Option<f64>,
}

impl GroupSummary {
    fn to_csv_line(&self) -> String {
        let k = &self.key;
        let tl = self.true_lambda.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            k.triplet,
            k.h,
            k.base,
            k.coupling_pairs,
            k.hidden,
            self.status,
            self.n_values,
            self.lambda_vfe,
            self.intercept_vfe,
            self.r2_vfe,
            self.lambda_vge,
            self.r2_vge,
            tl
        )
    }
}

fn true_lambda(triplet: &str, h: usize) -> Option<f64> {
    let kind = TripletKind::parse(triplet).ok()?;
    Triplet::new(kind, h, 0).ok()?.true_rlct().map(|r| r.value())
}

/// Fits both coefficients per group on the seed means.
pub fn summarize(rows: &[CellResult]) -> Vec<GroupSummary> {
    aggregate(rows)
        .into_iter()
        .map(|(key, series)| {
            let mvfe: Vec<(f64, f64)> = series.iter().map(|s| (s.n as f64, s.mvfe.mean)).collect();
            let vge: Vec<(f64, f64)> = series.iter().map(|s| (s.n as f64, s.vge.mean)).collect();
            let truth = true_lambda(&key.triplet, key.h);
            match (fit_mvfe_coeff(&mvfe), fit_vge_coeff(&vge)) {
                (Ok(f), Ok(g)) => GroupSummary {
                    key,
                    status: "ok".into(),
                    n_values: series.len(),
                    lambda_vfe: f.slope,
                    intercept_vfe: f.intercept,
                    r2_vfe: f.r_squared,
                    lambda_vge: g.slope,
                    r2_vge: g.r_squared,
                    true_lambda: truth,
                },
                _ => GroupSummary {
                    key,
                    status: "skipped".into(),
                    n_values: series.len(),
                    lambda_vfe: f64::NAN,
                    intercept_vfe: f64::NAN,
                    r2_vfe: f64::NAN,
                    lambda_vge: f64::NAN,
                    r2_vge: f64::NAN,
                    true_lambda: truth,
                },
            }
        })
        .collect()
}

pub fn write_summary(path: impl AsRef<Path>, summary: &[GroupSummary]) -> Result<()> {
    let mut text = format!("{SUMMARY_HEADER}\n");
    for s in summary {
        text.push_str(&s.to_csv_line());
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Vec<GroupSummary>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != SUMMARY_HEADER {
        return Err(HarnessError::Schema {
            found: header,
            expected: SUMMARY_HEADER.into(),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = || HarnessError::Config(format!("malformed summary row: {rec:?}"));
        let uint = |i: usize| rec[i].parse::<usize>().map_err(|_| bad());
        let float = |i: usize| rec[i].parse::<f64>().map_err(|_| bad());
        out.push(GroupSummary {
            key: GroupKey {
                triplet: rec[0].into(),
                h: uint(1)?,
                base: rec[2].into(),
                coupling_pairs: uint(3)?,
                hidden: uint(4)?,
            },
            status: rec[5].into(),
            n_values: uint(6)?,
            lambda_vfe: float(7)?,
            intercept_vfe: float(8)?,
            r2_vfe: float(9)?,
            lambda_vge: float(10)?,
            r2_vge: float(11)?,
            true_lambda: if rec[12].is_empty() { None } else { Some(float(12)?) },
        });
    }
    Ok(out)
}

/// Reads `results`, writes the summary next to it, and returns it. Skipped
/// groups are reported on stderr.
pub fn fit_and_report(results: impl AsRef<Path>, summary_path: impl AsRef<Path>) -> Result<Vec<GroupSummary>> {
    let rows = crate::sweep::read_results(results)?;
    let summary = summarize(&rows);
    for s in summary.iter().filter(|s| s.status != "ok") {
        eprintln!(
            "warning: {} has {} usable n values; fit skipped",
            s.key.label(),
            s.n_values
        );
    }
    write_summary(summary_path, &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::CellKey;

    pub(crate) fn row(triplet: &str, h: usize, base: &str, n: usize, seed: u64, mvfe: f64, vge: f64) -> CellResult {
        CellResult {
            key: CellKey {
                triplet: triplet.into(),
                h,
                base: base.into(),
                coupling_pairs: 2,
                hidden: 4,
                n,
                seed,
            },
            status: "ok".into(),
            elbo_final: -1.0,
            mvfe,
            vge,
            wall_seconds: 0.5,
        }
    }

    #[test]
    fn exact_line_recovers_slope() {
        let mut rows = Vec::new();
        for &n in &[1000usize, 2000, 4000, 5012] {
            let nf = n as f64;
            rows.push(row(
                "reduced_rank",
                2,
                "gengamma",
                n,
                0,
                5.0 * nf.ln() + 1.0 - 0.1,
                3.0 / nf,
            ));
            rows.push(row(
                "reduced_rank",
                2,
                "gengamma",
                n,
                1,
                5.0 * nf.ln() + 1.0 + 0.1,
                3.0 / nf,
            ));
        }
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].status, "ok");
        assert!((s[0].lambda_vfe - 5.0).abs() < 1e-10);
        assert!((s[0].intercept_vfe - 1.0).abs() < 1e-8);
        assert!((s[0].lambda_vge - 3.0).abs() < 1e-10);
        assert_eq!(s[0].true_lambda, Some(5.0));
    }

    #[test]
    fn two_n_values_are_skipped() {
        let rows = vec![
            row("tanh", 1, "gaussian", 1000, 0, 1.0, 0.1),
            row("tanh", 1, "gaussian", 2000, 0, 2.0, 0.05),
        ];
        let s = summarize(&rows);
        assert_eq!(s[0].status, "skipped");
        assert_eq!(s[0].n_values, 2);
        assert!(s[0].lambda_vfe.is_nan());
    }

    #[test]
    fn diverged_rows_are_excluded() {
        let mut bad = row("reduced_rank", 2, "gaussian", 1000, 1, f64::NAN, f64::NAN);
        bad.status = "diverged".into();
        let rows = vec![row("reduced_rank", 2, "gaussian", 1000, 0, 7.0, 0.1), bad];
        let agg = aggregate(&rows);
        let series = agg.values().next().unwrap();
        assert_eq!(series[0].ok_seeds, 1);
        assert_eq!(series[0].mvfe.mean, 7.0);
    }

    #[test]
    fn summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows: Vec<_> = [1000usize, 1500, 3000]
            .iter()
            .map(|&n| row("ffrelu", 40, "gaussian", n, 0, n as f64 / 100.0, 1.0 / n as f64))
            .collect();
        let s = summarize(&rows);
        write_summary(&p, &s).unwrap();
        let back = read_summary(&p).unwrap();
        assert_eq!(back[0].true_lambda, None);
        assert_eq!(back[0].lambda_vfe, s[0].lambda_vfe);
        assert_eq!(back[0].key, s[0].key);
    }
}
