//! Sweep orchestration: cell enumeration, seeding, a worker pool feeding a
//! single CSV writer, and resume-by-key.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use sha2::{Digest, Sha256};
use sltvi::basedist::BaseKind;
use sltvi::flow::FlowSpec;
use sltvi::train_eval::{run_cell, CellOutcome, CellSeeds, EvalConfig, TrainConfig, TrainStatus};
use sltvi::triplets::Triplet;

use crate::config::SweepConfig;
use crate::error::{HarnessError, Result};

pub const RESULTS_HEADER: &str = "triplet,H,base,coupling_pairs,hidden,n,seed,status,elbo_final,mvfe,vge,wall_seconds";
pub const RESULTS_FILE: &str = "results.csv";

/// Identity of one experiment cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub triplet: String,
    pub h: usize,
    pub base: String,
    pub coupling_pairs: usize,
    pub hidden: usize,
    pub n: usize,
    pub seed: u64,
}

impl CellKey {
    fn canonical(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.triplet, self.h, self.base, self.coupling_pairs, self.hidden, self.n, self.seed
        )
    }
}

/// First eight bytes (little-endian) of SHA-256 over `parts` joined by `|`.
pub fn stable_hash(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(parts.join("|").as_bytes());
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

/// Seeds of a cell. Data seeds ignore the base and flow so that every base
/// and flow sees the same training and test sets for a given `(n, seed)`.
pub fn cell_seeds(key: &CellKey, global_seed: u64) -> CellSeeds {
    let g = global_seed.to_string();
    let data_key = format!("{},{},{},{}", key.triplet, key.h, key.n, key.seed);
    CellSeeds {
        data: stable_hash(&["data", &data_key, &g]),
        test: stable_hash(&["test", &data_key, &g]),
        train: stable_hash(&["train", &key.canonical(), &g]),
    }
}

/// One results row.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub key: CellKey,
    pub status: String,
    pub elbo_final: f64,
    pub mvfe: f64,
    pub vge: f64,
    pub wall_seconds: f64,
}

impl CellResult {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}\n",
            self.key.canonical(),
            self.status,
            self.elbo_final,
            self.mvfe,
            self.vge,
            self.wall_seconds
        )
    }

    pub fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        let bad = |what: &str| HarnessError::Config(format!("malformed results row ({what}): {rec:?}"));
        if rec.len() != 12 {
            return Err(bad("field count"));
        }
        let uint = |i: usize| rec[i].parse::<usize>().map_err(|_| bad("integer field"));
        let float = |i: usize| rec[i].parse::<f64>().map_err(|_| bad("float field"));
        Ok(Self {
            key: CellKey {
                triplet: rec[0].to_string(),
                h: uint(1)?,
                base: rec[2].to_string(),
                coupling_pairs: uint(3)?,
                hidden: uint(4)?,
                n: uint(5)?,
                seed: rec[6].parse().map_err(|_| bad("seed"))?,
            },
            status: rec[7].to_string(),
            elbo_final: float(8)?,
            mvfe: float(9)?,
            vge: float(10)?,
            wall_seconds: float(11)?,
        })
    }
}

/// Reads every row of a results file.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<CellResult>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != RESULTS_HEADER {
        return Err(HarnessError::Schema {
            found: header,
            expected: RESULTS_HEADER.into(),
        });
    }
    r.records().map(|rec| CellResult::from_record(&rec?)).collect()
}

/// Everything needed to run one cell.
#[derive(Clone, Debug)]
pub struct CellJob {
    pub key: CellKey,
    pub triplet: Triplet,
    pub base: BaseKind,
    pub spec: FlowSpec,
}

/// All cells of a config, in a fixed order.
pub fn enumerate_cells(cfg: &SweepConfig) -> Result<Vec<CellJob>> {
    let mut jobs = Vec::new();
    for &h in &cfg.hs {
        let triplet = cfg.triplet(h)?;
        for base in cfg.base_kinds()? {
            for spec in cfg.flow_specs(triplet.dim_w())? {
                for &n in &cfg.n_grid {
                    for seed in 0..cfg.seeds {
                        jobs.push(CellJob {
                            key: CellKey {
                                triplet: triplet.kind.name().into(),
                                h,
                                base: base.name().into(),
                                coupling_pairs: spec.coupling_pairs,
                                hidden: spec.hidden,
                                n,
                                seed,
                            },
                            triplet: triplet.clone(),
                            base,
                            spec,
                        });
                    }
                }
            }
        }
    }
    Ok(jobs)
}

/// Summary of a sweep invocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepReport {
    pub results_path: PathBuf,
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Runs one cell; any error is folded into a `diverged` row so the sweep
/// continues.
pub fn execute(job: &CellJob, global_seed: u64, train: &TrainConfig, eval: &EvalConfig) -> CellResult {
    let start = Instant::now();
    let seeds = cell_seeds(&job.key, global_seed);
    let outcome = run_cell(&job.triplet, job.base, job.spec, job.key.n, seeds, train, eval);
    let wall_seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(CellOutcome {
            status,
            elbo_final,
            mvfe,
            vge,
            ..
        }) => CellResult {
            key: job.key.clone(),
            status: status.label().into(),
            elbo_final,
            mvfe,
            vge,
            wall_seconds,
        },
        Err(_) => CellResult {
            key: job.key.clone(),
            status: TrainStatus::Diverged { epoch: 0 }.label().into(),
            elbo_final: f64::NAN,
            mvfe: f64::NAN,
            vge: f64::NAN,
            wall_seconds,
        },
    }
}

fn existing_keys(path: &Path) -> Result<HashSet<CellKey>> {
    if !path.exists() {
        return Ok(HashSet::new());
    }
    Ok(read_results(path)?.into_iter().map(|r| r.key).collect())
}

/// Opens `results.csv` for appending, writing the header if the file is new.
/// Fails before any work if the directory or file cannot be written.
fn open_results(out_dir: &Path) -> Result<(PathBuf, File)> {
    let unwritable = |source| HarnessError::Unwritable {
        path: out_dir.display().to_string(),
        source,
    };
    fs::create_dir_all(out_dir).map_err(unwritable)?;
    let path = out_dir.join(RESULTS_FILE);
    let fresh = !path.exists() || fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    if !fresh {
        let mut first = String::new();
        BufReader::new(File::open(&path)?).read_line(&mut first)?;
        if first.trim_end() != RESULTS_HEADER {
            return Err(HarnessError::Schema {
                found: first.trim_end().into(),
                expected: RESULTS_HEADER.into(),
            });
        }
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(unwritable)?;
    if fresh {
        file.write_all(format!("{RESULTS_HEADER}\n").as_bytes())
            .map_err(unwritable)?;
        file.flush()?;
    }
    Ok((path, file))
}

/// Default worker count: the available hardware parallelism.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs every cell of `cfg` not already present in `out_dir/results.csv`.
/// Each finished row is appended with a single write and flushed.
pub fn run_sweep(cfg: &SweepConfig, out_dir: &Path, workers: usize) -> Result<SweepReport> {
    cfg.validate()?;
    let (results_path, mut file) = open_results(out_dir)?;
    let done = existing_keys(&results_path)?;
    let jobs: Vec<CellJob> = enumerate_cells(cfg)?
        .into_iter()
        .filter(|j| !done.contains(&j.key))
        .collect();
    let skipped = enumerate_cells(cfg)?.len() - jobs.len();
    let train = cfg.train_config();
    let eval = cfg.eval_config();
    let workers = workers.max(1).min(jobs.len().max(1));

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<CellResult>();
    let mut executed = 0;
    let mut failed = 0;
    let mut write_err = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next, train, eval) = (&jobs, &next, &train, &eval);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                if tx.send(execute(job, cfg.global_seed, train, eval)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for row in rx {
            executed += 1;
            if row.status != "ok" {
                failed += 1;
            }
            if write_err.is_none() {
                if let Err(e) = file.write_all(row.to_csv_line().as_bytes()).and_then(|_| file.flush()) {
                    write_err = Some(e);
                    // stop handing out work
                    next.store(usize::MAX / 2, Ordering::Relaxed);
                }
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e.into());
    }
    Ok(SweepReport {
        results_path,
        executed,
        skipped,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(base: &str, seed: u64) -> CellKey {
        CellKey {
            triplet: "reduced_rank".into(),
            h: 2,
            base: base.into(),
            coupling_pairs: 2,
            hidden: 4,
            n: 1000,
            seed,
        }
    }

    #[test]
    fn seeds_are_stable_and_data_is_shared_across_bases() {
        let a = cell_seeds(&key("gengamma", 0), 7);
        let b = cell_seeds(&key("gaussian", 0), 7);
        assert_eq!(a, cell_seeds(&key("gengamma", 0), 7));
        assert_eq!(a.data, b.data);
        assert_eq!(a.test, b.test);
        assert_ne!(a.train, b.train);
        assert_ne!(a.data, cell_seeds(&key("gengamma", 1), 7).data);
        assert_ne!(a.data, cell_seeds(&key("gengamma", 0), 8).data);
    }

    #[test]
    fn known_hash_value() {
        // first 8 bytes of sha256("abc") = ba 78 16 bf 8f 01 cf ea
        assert_eq!(
            stable_hash(&["abc"]),
            u64::from_le_bytes([0xba, 0x78, 0x16, 0xbf, 0x8f, 0x01, 0xcf, 0xea])
        );
    }

    #[test]
    fn csv_line_round_trip() {
        let r = CellResult {
            key: key("gengamma", 3),
            status: "ok".into(),
            elbo_final: -2877.5612,
            mvfe: 51.675,
            vge: 0.003_66,
            wall_seconds: 1.25,
        };
        let line = r.to_csv_line();
        assert_eq!(
            line,
            "reduced_rank,2,gengamma,2,4,1000,3,ok,-2877.5612,51.675,0.00366,1.25\n"
        );
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(line.as_bytes());
        let rec = rd.records().next().unwrap().unwrap();
        assert_eq!(CellResult::from_record(&rec).unwrap(), r);
    }

    #[test]
    fn cell_enumeration_counts() {
        let cfg = SweepConfig {
            hs: vec![2],
            flows: vec!["2_4".into()],
            seeds: 5,
            ..SweepConfig::default()
        };
        let jobs = enumerate_cells(&cfg).unwrap();
        assert_eq!(jobs.len(), 2 * 10 * 5);
        let keys: HashSet<_> = jobs.iter().map(|j| j.key.clone()).collect();
        assert_eq!(keys.len(), jobs.len());
    }
}
