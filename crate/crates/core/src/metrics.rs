//! Throughput, delay and buffer statistics over run outputs.

use std::collections::BTreeMap;
use std::io::Write;

use crate::sim::{BufferSample, Packet};
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeThroughput {
    pub ue: NodeId,
    pub run: usize,
    /// Bits per second.
    pub s_app: f64,
}

/// Application throughput of every UE in `ues`: bits of packets delivered in
/// `[from, to)` subframes divided by the window length.
pub fn throughput_per_ue(
    packets: &[Packet],
    ues: &[NodeId],
    run: usize,
    from: u64,
    to: u64,
    subframe_s: f64,
) -> Vec<UeThroughput> {
    let mut bits: BTreeMap<NodeId, f64> = ues.iter().map(|&u| (u, 0.0)).collect();
    for p in packets {
        if let Some(d) = p.delivered {
            if d >= from && d < to {
                *bits.entry(p.ue).or_default() += p.size as f64 * 8.0;
            }
        }
    }
    let span = (to.saturating_sub(from)) as f64 * subframe_s;
    bits.into_iter()
        .map(|(ue, b)| UeThroughput { ue, run, s_app: if span > 0.0 { b / span } else { 0.0 } })
        .collect()
}

/// End-to-end delay in milliseconds of every delivered packet created at or
/// after `from`.
pub fn delay_samples(packets: &[Packet], from: u64, subframe_s: f64) -> Vec<f64> {
    packets
        .iter()
        .filter(|p| p.created >= from)
        .filter_map(|p| p.delivered.map(|d| (d - p.created) as f64 * subframe_s * 1e3))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferGrouping {
    EdgeKind,
    Depth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(v: &[f64]) -> Option<Self> {
        Some(Self { q1: quantile(v, 0.25)?, median: quantile(v, 0.5)?, q3: quantile(v, 0.75)? })
    }
}

/// Buffer occupancy quartiles per group, over samples taken at or after `from`.
pub fn buffer_stats(samples: &[BufferSample], grouping: BufferGrouping, from: u64) -> BTreeMap<String, Quartiles> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.subframe >= from) {
        let key = match grouping {
            BufferGrouping::EdgeKind => s.kind.label().to_string(),
            BufferGrouping::Depth => s.depth.to_string(),
        };
        groups.entry(key).or_default().push(s.occupancy as f64);
    }
    groups.into_iter().filter_map(|(k, v)| Quartiles::of(&v).map(|q| (k, q))).collect()
}

/// Nearest-rank quantile: the order statistic of rank `min(floor(p*N) + 1, N)`.
pub fn quantile(v: &[f64], p: f64) -> Option<f64> {
    if v.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p * n as f64).floor() as usize + 1).min(n);
    Some(sorted[rank - 1])
}

/// Exact multiset of non-negative integers, for pooling large sample sets
/// (delays in subframes, buffer bytes) across runs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Histogram {
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl Histogram {
    pub fn push(&mut self, v: u64) {
        *self.counts.entry(v).or_default() += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (&v, &c) in &other.counts {
            *self.counts.entry(v).or_default() += c;
        }
        self.total += other.total;
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Same convention as [`quantile`].
    pub fn quantile(&self, p: f64) -> Option<u64> {
        if self.total == 0 || !(0.0..=1.0).contains(&p) {
            return None;
        }
        let rank = ((p * self.total as f64).floor() as u64 + 1).min(self.total);
        let mut seen = 0;
        for (&v, &c) in &self.counts {
            seen += c;
            if seen >= rank {
                return Some(v);
            }
        }
        None
    }
}

impl FromIterator<u64> for Histogram {
    fn from_iter<I: IntoIterator<Item = u64>>(iter: I) -> Self {
        let mut h = Histogram::default();
        for v in iter {
            h.push(v);
        }
        h
    }
}

/// Right-continuous empirical CDF as `(value, fraction <= value)` steps.
pub fn ecdf(v: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    out
}

/// One row of the aggregated results table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    pub t_alloc: u64,
    pub s_udp: u32,
    pub metric: &'static str,
    pub group: String,
    pub quantile: f64,
    pub value: f64,
}

pub const SUMMARY_HEADER: [&str; 7] = ["policy", "T_alloc", "s_UDP", "metric", "group", "quantile", "value"];

/// Quartile rows for one sample vector.
pub fn quartile_rows(
    policy: &str,
    t_alloc: u64,
    s_udp: u32,
    metric: &'static str,
    group: &str,
    v: &[f64],
) -> Vec<SummaryRow> {
    [0.25, 0.5, 0.75]
        .into_iter()
        .filter_map(|p| {
            quantile(v, p).map(|value| SummaryRow {
                policy: policy.to_string(),
                t_alloc,
                s_udp,
                metric,
                group: group.to_string(),
                quantile: p,
                value,
            })
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.policy.clone(),
            r.t_alloc.to_string(),
            r.s_udp.to_string(),
            r.metric.to_string(),
            r.group.clone(),
            r.quantile.to_string(),
            format!("{:.6}", r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::EdgeKind;

    fn packet(ue: u32, size: u32, created: u64, delivered: Option<u64>) -> Packet {
        Packet { id: 0, ue: NodeId(ue), size, created, delivered, hop_done: vec![delivered] }
    }

    #[test]
    fn one_mbps_ue() {
        // 3e6 bits in 3 s: 7500 packets of 50 B over 30 000 subframes.
        let packets: Vec<Packet> = (0..7500).map(|i| packet(7, 50, i * 4, Some(i * 4 + 1))).collect();
        let s = throughput_per_ue(&packets, &[NodeId(7), NodeId(8)], 0, 0, 30_000, 100e-6);
        assert_eq!(s.len(), 2);
        assert!((s[0].s_app - 1e6).abs() < 1e-6);
        assert_eq!(s[1].s_app, 0.0);
    }

    #[test]
    fn delay_in_ms() {
        let d = delay_samples(&[packet(1, 10, 100, Some(130)), packet(1, 10, 5, Some(6)), packet(1, 10, 200, None)], 50, 100e-6);
        assert_eq!(d.len(), 1);
        assert!((d[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_rank_upper_median() {
        let v = [30.0, 0.0, 20.0, 10.0];
        assert_eq!(quantile(&v, 0.5), Some(20.0));
        assert_eq!(quantile(&v, 0.0), Some(0.0));
        assert_eq!(quantile(&v, 1.0), Some(30.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn histogram_matches_sorted_quantile() {
        let v: Vec<u64> = (0..997u64).map(|i| (i * 7919) % 211).collect();
        let h: Histogram = v.iter().copied().collect();
        let f: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        for p in [0.0, 0.25, 0.5, 0.75, 0.999, 1.0] {
            assert_eq!(h.quantile(p).map(|x| x as f64), quantile(&f, p));
        }
        let mut a: Histogram = [1, 2].into_iter().collect();
        a.merge(&[3, 3].into_iter().collect());
        assert_eq!(a.len(), 4);
        assert_eq!(a.quantile(0.5), Some(3));
        assert_eq!(Histogram::default().quantile(0.5), None);
    }

    #[test]
    fn ecdf_steps() {
        assert_eq!(ecdf(&[1.0, 2.0, 3.0]), vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
        assert_eq!(ecdf(&[5.0, 5.0]), vec![(5.0, 1.0)]);
        assert_eq!(ecdf(&[4.0, 9.0, 1.0]).last().unwrap().1, 1.0);
        assert!(ecdf(&[]).is_empty());
    }

    #[test]
    fn buffer_grouping() {
        let s = |subframe, depth, kind, occupancy| BufferSample { subframe, gnb: NodeId(depth), kind, depth, occupancy };
        let samples = vec![
            s(0, 0, EdgeKind::Node, 999),
            s(10, 0, EdgeKind::Node, 0),
            s(10, 0, EdgeKind::Node, 10),
            s(10, 1, EdgeKind::Ue, 20),
            s(10, 1, EdgeKind::Ue, 30),
        ];
        let by_depth = buffer_stats(&samples, BufferGrouping::Depth, 5);
        assert_eq!(by_depth["0"].median, 10.0);
        assert_eq!(by_depth["1"].q3, 30.0);
        let by_kind = buffer_stats(&samples, BufferGrouping::EdgeKind, 0);
        assert_eq!(by_kind["node"].q3, 999.0);
    }

    #[test]
    fn quartiles_ignore_run_order() {
        let a = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let mut b = a;
        b.reverse();
        assert_eq!(Quartiles::of(&a), Quartiles::of(&b));
    }

    #[test]
    fn summary_csv_contract() {
        let rows = quartile_rows("mrba", 1, 100, "throughput_mbps", "all", &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rows.len(), 3);
        let mut buf = Vec::new();
        write_summary_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("policy,T_alloc,s_UDP,metric,group,quantile,value\nmrba,1,100,throughput_mbps,all,0.25,2.000000\n"));
    }
}
