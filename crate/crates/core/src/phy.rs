//! Channel and capacity chain: geometry, path loss, SNR, CQI, link capacity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::PhyError;
use crate::topology::{Node, NodeKind, Position};

const BOLTZMANN_DBM_PER_HZ: f64 = -174.0;

/// CQI index, 0 meaning out of range.
pub type Cqi = u8;

pub const MAX_CQI: Cqi = 15;

/// Spectral efficiency per CQI index and the SNR needed to reach each index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CqiTable {
    /// Sixteen entries, bits per second per Hz. Entry 0 must be zero.
    pub efficiency: Vec<f64>,
    /// Fifteen strictly increasing thresholds in dB for indices 1..=15.
    pub sinr_threshold_db: Vec<f64>,
}

impl Default for CqiTable {
    fn default() -> Self {
        Self {
            efficiency: vec![
                0.0, 0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141, 2.4063, 2.7305, 3.3223,
                3.9023, 4.5234, 5.1152, 5.5547,
            ],
            sinr_threshold_db: vec![
                -6.7, -4.7, -2.3, 0.2, 2.4, 4.3, 5.9, 8.1, 10.3, 11.7, 14.1, 16.3, 18.7, 21.0, 22.7,
            ],
        }
    }
}

impl CqiTable {
    pub fn validate(&self) -> Result<(), PhyError> {
        let bad = |key, reason: &str| Err(PhyError::InvalidParam { key, reason: reason.into() });
        if self.efficiency.len() != MAX_CQI as usize + 1 {
            return bad("cqi.efficiency", "needs 16 entries");
        }
        if self.sinr_threshold_db.len() != MAX_CQI as usize {
            return bad("cqi.sinr_threshold_db", "needs 15 entries");
        }
        if self.efficiency[0] != 0.0 {
            return bad("cqi.efficiency", "entry 0 must be 0");
        }
        if self.efficiency.windows(2).any(|w| !(w[1] >= w[0]) || !w[1].is_finite()) {
            return bad("cqi.efficiency", "must be finite and non-decreasing");
        }
        if self.sinr_threshold_db.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("cqi.sinr_threshold_db", "must be strictly increasing");
        }
        Ok(())
    }

    pub fn efficiency(&self, cqi: Cqi) -> f64 {
        self.efficiency[cqi.min(MAX_CQI) as usize]
    }
}

/// Highest index whose threshold does not exceed `sinr_db`.
pub fn sinr_to_cqi(sinr_db: f64, table: &CqiTable) -> Cqi {
    table.sinr_threshold_db.iter().take_while(|&&t| t <= sinr_db).count() as Cqi
}

/// Radio constants of the evaluation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub carrier_ghz: f64,
    pub bandwidth_mhz: f64,
    pub symbols_per_subframe: usize,
    pub symbol_duration_us: f64,
    pub noise_figure_gnb_db: f64,
    pub noise_figure_ue_db: f64,
    pub los_alpha_db: f64,
    pub los_beta: f64,
    pub nlos_alpha_db: f64,
    pub nlos_beta: f64,
    pub shadow_los_db: f64,
    pub shadow_nlos_db: f64,
    pub gnb_tx_dbm: f64,
    pub ue_tx_dbm: f64,
    pub gnb_elements: u32,
    pub ue_elements: u32,
    /// Penetration and body loss added on every gNB-UE link.
    pub access_extra_loss_db: f64,
    pub cqi: CqiTable,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_ghz: 28.0,
            bandwidth_mhz: 400.0,
            symbols_per_subframe: 24,
            symbol_duration_us: 100.0 / 24.0,
            noise_figure_gnb_db: 5.0,
            noise_figure_ue_db: 7.0,
            los_alpha_db: 32.4,
            los_beta: 2.1,
            nlos_alpha_db: 32.4,
            nlos_beta: 3.19,
            shadow_los_db: 4.0,
            shadow_nlos_db: 8.2,
            gnb_tx_dbm: 33.0,
            ue_tx_dbm: 23.0,
            gnb_elements: 64,
            ue_elements: 16,
            access_extra_loss_db: 25.0,
            cqi: CqiTable::default(),
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), PhyError> {
        let bad = |key, reason: &str| Err(PhyError::InvalidParam { key, reason: reason.into() });
        if !(self.bandwidth_mhz > 0.0) {
            return bad("bandwidth_mhz", "must be positive");
        }
        if !(self.carrier_ghz > 0.0) {
            return bad("carrier_ghz", "must be positive");
        }
        if self.symbols_per_subframe == 0 {
            return bad("symbols_per_subframe", "must be positive");
        }
        if !(self.symbol_duration_us > 0.0) {
            return bad("symbol_duration_us", "must be positive");
        }
        if self.gnb_elements == 0 || self.ue_elements == 0 {
            return bad("gnb_elements", "antenna element counts must be positive");
        }
        let coeffs = [
            self.los_alpha_db,
            self.los_beta,
            self.nlos_alpha_db,
            self.nlos_beta,
            self.shadow_los_db,
            self.shadow_nlos_db,
            self.access_extra_loss_db,
            self.noise_figure_gnb_db,
            self.noise_figure_ue_db,
            self.gnb_tx_dbm,
            self.ue_tx_dbm,
        ];
        if coeffs.iter().any(|c| !c.is_finite()) {
            return bad("los_alpha_db", "path-loss and power constants must be finite");
        }
        if self.shadow_los_db < 0.0 || self.shadow_nlos_db < 0.0 {
            return bad("shadow_los_db", "shadowing deviation must be non-negative");
        }
        self.cqi.validate()
    }

    /// Bits carried by one symbol at the given CQI.
    pub fn bits_per_symbol(&self, cqi: Cqi) -> f64 {
        self.cqi.efficiency(cqi) * self.bandwidth_mhz * 1e6 * self.symbol_duration_us * 1e-6
    }
}

/// Capacity of a link in bits per subframe.
pub fn cqi_to_capacity(cqi: Cqi, symbols: usize, p: &ChannelParams) -> f64 {
    p.bits_per_symbol(cqi) * symbols as f64
}

/// Propagation state of one link within a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDraw {
    pub los: bool,
    pub shadow_db: f64,
}

impl LinkDraw {
    pub fn mean(los: bool) -> Self {
        Self { los, shadow_db: 0.0 }
    }
}

/// Log-distance path loss in dB.
pub fn path_loss(a: Position, b: Position, p: &ChannelParams, draw: LinkDraw) -> Result<f64, PhyError> {
    let d = a.distance(&b);
    if !(d > 0.0) {
        return Err(PhyError::Coincident { x: a.x, y: a.y });
    }
    let (alpha, beta) = if draw.los { (p.los_alpha_db, p.los_beta) } else { (p.nlos_alpha_db, p.nlos_beta) };
    Ok(alpha + beta * 10.0 * d.log10() + 20.0 * p.carrier_ghz.log10() + draw.shadow_db)
}

/// Street-canyon LOS probability for a ground-level link of length `d`.
pub fn ue_los_probability(d: f64) -> f64 {
    (18.0 / d).min(1.0) * (1.0 - (-d / 36.0).exp()) + (-d / 36.0).exp()
}

/// gNBs are on street intersections: they see each other iff they share a street.
pub fn backhaul_los(a: Position, b: Position) -> bool {
    const EPS: f64 = 1e-6;
    (a.x - b.x).abs() < EPS || (a.y - b.y).abs() < EPS
}

fn gain_db(elements: u32) -> f64 {
    10.0 * (elements as f64).log10()
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-run channel. Shadowing and LOS states are drawn once per unordered
/// node pair from the run seed, so they stay frozen for the whole run.
#[derive(Debug, Clone)]
pub struct Channel {
    params: ChannelParams,
    seed: u64,
}

impl Channel {
    pub fn new(params: ChannelParams, seed: u64) -> Result<Self, PhyError> {
        params.validate()?;
        Ok(Self { params, seed })
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    /// Downlink link draw from `tx` to `rx`.
    pub fn draw(&self, tx: &Node, rx: &Node) -> LinkDraw {
        let (lo, hi) = if tx.id <= rx.id { (tx.id.0, rx.id.0) } else { (rx.id.0, tx.id.0) };
        let key = mix(self.seed ^ mix(((lo as u64) << 32) | hi as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let los = if is_access(tx, rx) {
            rng.random::<f64>() < ue_los_probability(tx.pos.distance(&rx.pos))
        } else {
            backhaul_los(tx.pos, rx.pos)
        };
        let sigma = if los { self.params.shadow_los_db } else { self.params.shadow_nlos_db };
        let shadow_db = Normal::new(0.0, sigma).expect("validated deviation").sample(&mut rng);
        LinkDraw { los, shadow_db }
    }

    /// SNR of the downlink from `tx` to `rx` under a given draw.
    pub fn snr_db_with(&self, tx: &Node, rx: &Node, draw: LinkDraw) -> Result<f64, PhyError> {
        let p = &self.params;
        let access = is_access(tx, rx);
        let (rx_gain, nf) = if access {
            (gain_db(p.ue_elements), p.noise_figure_ue_db)
        } else {
            (gain_db(p.gnb_elements), p.noise_figure_gnb_db)
        };
        let extra = if access { p.access_extra_loss_db } else { 0.0 };
        let loss = path_loss(tx.pos, rx.pos, p, draw)? + extra;
        let noise = BOLTZMANN_DBM_PER_HZ + 10.0 * (p.bandwidth_mhz * 1e6).log10() + nf;
        Ok(p.gnb_tx_dbm + gain_db(p.gnb_elements) + rx_gain - loss - noise)
    }

    pub fn snr_db(&self, tx: &Node, rx: &Node) -> Result<f64, PhyError> {
        self.snr_db_with(tx, rx, self.draw(tx, rx))
    }

    fn mean_draw(tx: &Node, rx: &Node) -> LinkDraw {
        let los = if is_access(tx, rx) {
            ue_los_probability(tx.pos.distance(&rx.pos)) >= 0.5
        } else {
            backhaul_los(tx.pos, rx.pos)
        };
        LinkDraw::mean(los)
    }

    /// Shadowing-free SNR.
    pub fn mean_snr_db(&self, tx: &Node, rx: &Node) -> Result<f64, PhyError> {
        self.snr_db_with(tx, rx, Self::mean_draw(tx, rx))
    }

    /// Negative shadowing-free path loss. Used for attachment decisions, which
    /// must not vary between runs or with the radio budget.
    pub fn mean_gain_db(&self, tx: &Node, rx: &Node) -> Result<f64, PhyError> {
        let extra = if is_access(tx, rx) { self.params.access_extra_loss_db } else { 0.0 };
        Ok(-path_loss(tx.pos, rx.pos, &self.params, Self::mean_draw(tx, rx))? - extra)
    }

    pub fn cqi(&self, tx: &Node, rx: &Node) -> Result<Cqi, PhyError> {
        Ok(sinr_to_cqi(self.snr_db(tx, rx)?, &self.params.cqi))
    }
}

fn is_access(a: &Node, b: &Node) -> bool {
    matches!(a.kind, NodeKind::Ue | NodeKind::UeCluster) || matches!(b.kind, NodeKind::Ue | NodeKind::UeCluster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::NodeId;

    fn node(id: u32, kind: NodeKind, x: f64, y: f64) -> Node {
        Node { id: NodeId(id), kind, pos: Position::new(x, y), depth: None, home: None }
    }

    #[test]
    fn los_path_loss_at_100m_28ghz() {
        let p = ChannelParams::default();
        let pl = path_loss(Position::ORIGIN, Position::new(100.0, 0.0), &p, LinkDraw::mean(true)).unwrap();
        let expected = 32.4 + 2.1 * 10.0 * 2.0 + 20.0 * 28f64.log10();
        assert!((pl - expected).abs() < 1e-12);
        assert!((pl - 103.343).abs() < 1e-3);
    }

    #[test]
    fn doubling_distance_adds_beta_times_3db() {
        let p = ChannelParams::default();
        for los in [true, false] {
            let near = path_loss(Position::ORIGIN, Position::new(40.0, 0.0), &p, LinkDraw::mean(los)).unwrap();
            let far = path_loss(Position::ORIGIN, Position::new(80.0, 0.0), &p, LinkDraw::mean(los)).unwrap();
            let beta = if los { p.los_beta } else { p.nlos_beta };
            assert!((far - near - beta * 10.0 * 2f64.log10()).abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_positions_rejected() {
        let p = ChannelParams::default();
        let err = path_loss(Position::new(3.0, 4.0), Position::new(3.0, 4.0), &p, LinkDraw::mean(true));
        assert_eq!(err, Err(PhyError::Coincident { x: 3.0, y: 4.0 }));
    }

    #[test]
    fn cqi_mapping_edges() {
        let t = CqiTable::default();
        assert_eq!(sinr_to_cqi(-30.0, &t), 0);
        assert_eq!(sinr_to_cqi(40.0, &t), 15);
        assert_eq!(sinr_to_cqi(-6.7, &t), 1);
        assert_eq!(sinr_to_cqi(8.0, &t), 7);
        let p = ChannelParams::default();
        assert_eq!(cqi_to_capacity(0, 24, &p), 0.0);
    }

    #[test]
    fn capacity_of_cqi7_at_400mhz() {
        let mut p = ChannelParams { bandwidth_mhz: 400.0, symbol_duration_us: 4.17, ..Default::default() };
        p.cqi.efficiency[7] = 1.48;
        let c = cqi_to_capacity(7, 24, &p);
        assert!((c - 1.48 * 4e8 * 4.17e-6 * 24.0).abs() < 1e-6);
        assert!((c - 5.92e4).abs() / 5.92e4 < 0.005);
    }

    #[test]
    fn capacity_monotone_in_sinr() {
        let p = ChannelParams::default();
        let mut last = 0.0;
        for tenth in -100..300 {
            let c = cqi_to_capacity(sinr_to_cqi(tenth as f64 / 10.0, &p.cqi), 24, &p);
            assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn table_validation() {
        let mut t = CqiTable::default();
        t.validate().unwrap();
        t.sinr_threshold_db[3] = t.sinr_threshold_db[2];
        assert!(t.validate().is_err());
        let p = ChannelParams { bandwidth_mhz: 0.0, ..Default::default() };
        assert!(matches!(p.validate(), Err(PhyError::InvalidParam { key: "bandwidth_mhz", .. })));
    }

    #[test]
    fn draws_are_frozen_and_symmetric() {
        let ch = Channel::new(ChannelParams::default(), 42).unwrap();
        let g = node(1, NodeKind::IabNode, 100.0, 0.0);
        let u = node(9, NodeKind::Ue, 120.0, 13.0);
        assert_eq!(ch.draw(&g, &u), ch.draw(&g, &u));
        assert_eq!(ch.draw(&g, &u), ch.draw(&u, &g));
        let other = Channel::new(ChannelParams::default(), 43).unwrap();
        assert_ne!(ch.draw(&g, &u), other.draw(&g, &u));
    }

    #[test]
    fn street_rule_for_backhaul() {
        assert!(backhaul_los(Position::ORIGIN, Position::new(0.0, 100.0)));
        assert!(!backhaul_los(Position::ORIGIN, Position::new(100.0, 100.0)));
        let ch = Channel::new(ChannelParams::default(), 0).unwrap();
        let d = node(0, NodeKind::Donor, 0.0, 0.0);
        let a = node(1, NodeKind::IabNode, 100.0, 0.0);
        let b = node(2, NodeKind::IabNode, 100.0, 100.0);
        assert!(ch.draw(&d, &a).los);
        assert!(!ch.draw(&d, &b).los);
        assert!(ch.mean_snr_db(&d, &a).unwrap() > ch.mean_snr_db(&d, &b).unwrap());
        assert!((ch.mean_gain_db(&d, &a).unwrap() + 103.343).abs() < 1e-3);
    }

    #[test]
    fn ue_los_probability_shape() {
        assert!((ue_los_probability(10.0) - 1.0).abs() < 1e-12);
        assert!(ue_los_probability(100.0) < ue_los_probability(30.0));
        assert!(ue_los_probability(1000.0) > 0.0);
    }
}
