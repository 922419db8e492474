//! Sweep driver: runs every job of a configuration, writes one directory per
//! run and a root `summary.csv` of pooled quartiles per grid cell.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::batch::{jobs, run_all, Job};
use crate::config::ExperimentConfig;
use crate::controller::write_trace_csv;
use crate::error::{ConfigError, SimError};
use crate::metrics::{quartile_rows, write_summary_csv, Histogram, SummaryRow};
use crate::policies::{Policy, PolicyParams};
use crate::sim::{run, write_buffers_csv, write_packets_csv, RunConfig, RunOutput};
use crate::topology::NodeId;

const DONE_MARKER: &str = "done";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("run {run} of {policy}/{s_udp}/{t_alloc} failed: {source}")]
    Run { policy: Policy, s_udp: u32, t_alloc: u64, run: usize, source: SimError },
}

fn io_err(path: &Path, e: impl ToString) -> ExperimentError {
    ExperimentError::Io { path: path.display().to_string(), reason: e.to_string() }
}

/// Command-line values that replace config keys one for one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub policy: Option<Policy>,
    pub s_udp: Option<u32>,
    pub t_alloc: Option<u64>,
    pub runs: Option<usize>,
    pub t_sim_s: Option<f64>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), ConfigError> {
        if let Some(p) = self.policy {
            cfg.sweep.policies = vec![p];
        }
        if let Some(s) = self.s_udp {
            cfg.sweep.s_udp = vec![s];
        }
        if let Some(t) = self.t_alloc {
            cfg.sweep.t_alloc = vec![t];
        }
        if let Some(n) = self.runs {
            cfg.sweep.runs = n;
        }
        if let Some(t) = self.t_sim_s {
            cfg.run.t_sim_s = t;
        }
        if let Some(s) = self.seed {
            cfg.sweep.master_seed = s;
        }
        cfg.validate()
    }
}

pub fn run_dir(out: &Path, job: &Job) -> PathBuf {
    out.join(job.policy.name())
        .join(job.s_udp.to_string())
        .join(job.t_alloc.to_string())
        .join(format!("run_{}", job.run))
}

/// Per-run reduction kept in memory for the summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunDigest {
    pub throughput_mbps: Vec<f64>,
    /// End-to-end delays in subframes.
    pub delay: Histogram,
    /// Buffer occupancy in bytes keyed by `kind:<ue|node>` and `depth:<d>`.
    pub buffers: BTreeMap<String, Histogram>,
}

struct PacketRow {
    ue: NodeId,
    size: u32,
    created: u64,
    delivered: Option<u64>,
}

struct BufferRow {
    subframe: u64,
    kind: String,
    depth: u32,
    occupancy: u64,
}

fn digest(ues: &[NodeId], packets: &[PacketRow], buffers: &[BufferRow], cfg: &RunConfig) -> RunDigest {
    let from = cfg.warmup_subframes();
    let to = cfg.subframes();
    let mut bits: BTreeMap<NodeId, f64> = ues.iter().map(|&u| (u, 0.0)).collect();
    let mut delay = Histogram::default();
    for p in packets {
        if let Some(d) = p.delivered {
            if d >= from && d < to {
                *bits.entry(p.ue).or_default() += p.size as f64 * 8.0;
            }
            if p.created >= from {
                delay.push(d - p.created);
            }
        }
    }
    let span = (to - from) as f64 * cfg.subframe_s();
    let throughput_mbps = bits.values().map(|b| b / span / 1e6).collect();
    let mut groups: BTreeMap<String, Histogram> = BTreeMap::new();
    for b in buffers.iter().filter(|b| b.subframe >= from) {
        groups.entry(format!("kind:{}", b.kind)).or_default().push(b.occupancy);
        groups.entry(format!("depth:{}", b.depth)).or_default().push(b.occupancy);
    }
    RunDigest { throughput_mbps, delay, buffers: groups }
}

fn run_config(cfg: &ExperimentConfig, job: &Job) -> RunConfig {
    RunConfig { s_udp: job.s_udp, t_alloc: job.t_alloc, seed: job.seed, ..cfg.run.clone() }
}

fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

/// Runs one job and writes its directory, or reloads it when `resume` is set
/// and the directory is complete.
pub fn execute_job(cfg: &ExperimentConfig, job: &Job, out: &Path, resume: bool) -> Result<RunDigest, ExperimentError> {
    let dir = run_dir(out, job);
    let rc = run_config(cfg, job);
    if resume && dir.join(DONE_MARKER).is_file() {
        return load_digest(&dir, &rc);
    }
    let policy = PolicyParams { policy: job.policy, ..cfg.policy.clone() };
    let output = run(&cfg.scenario, &cfg.channel, &policy, &rc).map_err(|source| ExperimentError::Run {
        policy: job.policy,
        s_udp: job.s_udp,
        t_alloc: job.t_alloc,
        run: job.run,
        source,
    })?;
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let _ = fs::remove_file(dir.join(DONE_MARKER));
    let path = dir.join("packets.csv");
    write_packets_csv(&output.packets, create(&path)?).map_err(|e| io_err(&path, e))?;
    let path = dir.join("buffers.csv");
    write_buffers_csv(&output.buffers, create(&path)?).map_err(|e| io_err(&path, e))?;
    let path = dir.join("controller.csv");
    write_trace_csv(&output.trace, create(&path)?).map_err(|e| io_err(&path, e))?;
    let path = dir.join("topology.csv");
    output.topology.write_csv(create(&path)?).map_err(|e| io_err(&path, e))?;
    let path = dir.join("seed");
    fs::write(&path, format!("{}\n", job.seed)).map_err(|e| io_err(&path, e))?;
    let path = dir.join(DONE_MARKER);
    fs::write(&path, "").map_err(|e| io_err(&path, e))?;
    Ok(digest_output(&output, &rc))
}

/// Reduces an in-memory run the same way a run directory is reduced.
pub fn digest_output(output: &RunOutput, rc: &RunConfig) -> RunDigest {
    let ues: Vec<NodeId> = output.topology.ues().map(|n| n.id).collect();
    let packets: Vec<PacketRow> = output
        .packets
        .iter()
        .map(|p| PacketRow { ue: p.ue, size: p.size, created: p.created, delivered: p.delivered })
        .collect();
    let buffers: Vec<BufferRow> = output
        .buffers
        .iter()
        .map(|b| BufferRow { subframe: b.subframe, kind: b.kind.label().to_string(), depth: b.depth, occupancy: b.occupancy })
        .collect();
    digest(&ues, &packets, &buffers, rc)
}

fn reader(path: &Path) -> Result<csv::Reader<BufReader<File>>, ExperimentError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Reader::from_reader(BufReader::new(f)))
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T, ExperimentError> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| io_err(path, format!("bad column {i} in record {:?}", rec)))
}

fn load_digest(dir: &Path, rc: &RunConfig) -> Result<RunDigest, ExperimentError> {
    let path = dir.join("topology.csv");
    let mut ues = Vec::new();
    for rec in reader(&path)?.records() {
        let rec = rec.map_err(|e| io_err(&path, e))?;
        if rec.get(1) == Some("ue") {
            ues.push(NodeId(field(&path, &rec, 0)?));
        }
    }
    let path = dir.join("packets.csv");
    let mut packets = Vec::new();
    for rec in reader(&path)?.records() {
        let rec = rec.map_err(|e| io_err(&path, e))?;
        let delivered = match rec.get(4) {
            Some("") => None,
            _ => Some(field(&path, &rec, 4)?),
        };
        packets.push(PacketRow {
            ue: NodeId(field(&path, &rec, 1)?),
            size: field(&path, &rec, 2)?,
            created: field(&path, &rec, 3)?,
            delivered,
        });
    }
    let path = dir.join("buffers.csv");
    let mut buffers = Vec::new();
    for rec in reader(&path)?.records() {
        let rec = rec.map_err(|e| io_err(&path, e))?;
        buffers.push(BufferRow {
            subframe: field(&path, &rec, 0)?,
            kind: field(&path, &rec, 2)?,
            depth: field(&path, &rec, 3)?,
            occupancy: field(&path, &rec, 4)?,
        });
    }
    Ok(digest(&ues, &packets, &buffers, rc))
}

/// Pooled statistics of one grid cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellDigest {
    pub runs: usize,
    pub throughput_mbps: Vec<f64>,
    pub delay: Histogram,
    pub buffers: BTreeMap<String, Histogram>,
}

impl CellDigest {
    pub fn absorb(&mut self, d: &RunDigest) {
        self.runs += 1;
        self.throughput_mbps.extend_from_slice(&d.throughput_mbps);
        self.delay.merge(&d.delay);
        for (k, h) in &d.buffers {
            self.buffers.entry(k.clone()).or_default().merge(h);
        }
    }

    pub fn delay_ms(&self, p: f64, subframe_s: f64) -> Option<f64> {
        self.delay.quantile(p).map(|sf| sf as f64 * subframe_s * 1e3)
    }

    pub fn rows(&self, policy: Policy, s_udp: u32, t_alloc: u64, subframe_s: f64) -> Vec<SummaryRow> {
        let name = policy.name();
        let mut rows = quartile_rows(name, t_alloc, s_udp, "throughput_mbps", "all", &self.throughput_mbps);
        let hist_rows = |metric: &'static str, group: &str, h: &Histogram, scale: f64| {
            [0.25, 0.5, 0.75]
                .into_iter()
                .filter_map(|p| {
                    h.quantile(p).map(|v| SummaryRow {
                        policy: name.to_string(),
                        t_alloc,
                        s_udp,
                        metric,
                        group: group.to_string(),
                        quantile: p,
                        value: v as f64 * scale,
                    })
                })
                .collect::<Vec<_>>()
        };
        rows.extend(hist_rows("delay_ms", "all", &self.delay, subframe_s * 1e3));
        for (k, h) in &self.buffers {
            rows.extend(hist_rows("buffer_B", k, h, 1.0));
        }
        rows
    }
}

pub type CellKey = (Policy, u32, u64);

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub cells: BTreeMap<CellKey, CellDigest>,
    pub rows: Vec<SummaryRow>,
    pub executed: usize,
}

/// Runs the whole sweep on `threads` workers (0 = one per core), writing run
/// directories and `summary.csv` under `out`. Completed runs are reloaded
/// instead of re-simulated when `resume` is set.
pub fn run_experiments(
    cfg: &ExperimentConfig,
    out: &Path,
    threads: usize,
    resume: bool,
) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let jobs = jobs(&cfg.sweep);
    let results = run_all(&jobs, threads, |job| execute_job(cfg, job, out, resume));
    let mut report = ExperimentReport { executed: jobs.len(), ..Default::default() };
    let mut order: Vec<CellKey> = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        let digest = result?;
        let key = (job.policy, job.s_udp, job.t_alloc);
        if !report.cells.contains_key(&key) {
            order.push(key);
        }
        report.cells.entry(key).or_default().absorb(&digest);
    }
    let subframe_s = cfg.run.subframe_s();
    for key in order {
        report.rows.extend(report.cells[&key].rows(key.0, key.1, key.2, subframe_s));
    }
    let path = out.join("summary.csv");
    let mut w = create(&path)?;
    write_summary_csv(&report.rows, &mut w).map_err(|e| io_err(&path, e))?;
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(report)
}
