//! Network description, per-slot randomness, and the physical-layer formulas.
//!
//! All dB/dBm quantities in [`NetworkConfig`] are converted to linear units on
//! use. Internal units are bits, Hz, seconds, Joules and CPU cycles.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const EARTH_RADIUS_KM: f64 = 6371.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// dBm to Watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Bs,
    Hap,
    Satellite,
}

impl Tier {
    /// Only BSs and HAPs host an edge server; satellites relay.
    pub fn can_compute(self) -> bool {
        !matches!(self, Tier::Satellite)
    }

    fn rank(self) -> u8 {
        match self {
            Tier::Bs => 0,
            Tier::Hap => 1,
            Tier::Satellite => 2,
        }
    }
}

/// Where an AP sits. Fixed positions are in km inside the service area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    Fixed {
        x_km: f64,
        y_km: f64,
        z_km: f64,
    },
    /// Periodic visibility window. The pass period is the orbital period
    /// `2π(R_E + h)/v`; the satellite is visible while the orbital phase is
    /// below `duty_cycle`. Slant range is approximated by the altitude.
    Orbit {
        altitude_km: f64,
        velocity_km_s: f64,
        duty_cycle: f64,
        phase: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApProfile {
    pub tier: Tier,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub max_cpu_hz: f64,
    pub switched_capacitance: f64,
    pub bandwidth_fraction_bounds: [f64; 2],
    pub cpu_bounds: [f64; 2],
    pub backhaul_rate_bps: f64,
    pub energy_budget_j: f64,
    pub antenna_gain_dbi: f64,
    pub carrier_freq_hz: f64,
    pub placement: Placement,
    #[serde(default)]
    pub blockage_prob: f64,
    /// Rician K-factor in dB; `None` selects Rayleigh fading.
    #[serde(default)]
    pub rician_k_db: Option<f64>,
}

impl ApProfile {
    pub fn base_station(x_km: f64, y_km: f64) -> Self {
        ApProfile {
            tier: Tier::Bs,
            bandwidth_hz: 10e6,
            tx_power_dbm: 41.0,
            max_cpu_hz: 2e10,
            switched_capacitance: 1e-28,
            bandwidth_fraction_bounds: [0.01, 1.0],
            cpu_bounds: [1e8, 1e10],
            backhaul_rate_bps: 1e9,
            energy_budget_j: 12.0,
            antenna_gain_dbi: 10.0,
            carrier_freq_hz: 5e9,
            placement: Placement::Fixed {
                x_km,
                y_km,
                z_km: 0.025,
            },
            blockage_prob: 0.2,
            rician_k_db: None,
        }
    }

    pub fn hap(x_km: f64, y_km: f64) -> Self {
        ApProfile {
            tier: Tier::Hap,
            bandwidth_hz: 400e6,
            tx_power_dbm: 41.0,
            max_cpu_hz: 1e10,
            switched_capacitance: 1e-28,
            bandwidth_fraction_bounds: [0.01, 1.0],
            cpu_bounds: [1e8, 1e10],
            backhaul_rate_bps: 5e8,
            energy_budget_j: 9.0,
            antenna_gain_dbi: 15.0,
            carrier_freq_hz: 38e9,
            placement: Placement::Fixed {
                x_km,
                y_km,
                z_km: 20.0,
            },
            blockage_prob: 0.05,
            rician_k_db: Some(10.0),
        }
    }

    pub fn satellite() -> Self {
        ApProfile {
            tier: Tier::Satellite,
            bandwidth_hz: 800e6,
            tx_power_dbm: 42.0,
            max_cpu_hz: 0.0,
            switched_capacitance: 1e-28,
            bandwidth_fraction_bounds: [0.01, 1.0],
            cpu_bounds: [0.0, 0.0],
            backhaul_rate_bps: 1e8,
            energy_budget_j: 6.0,
            antenna_gain_dbi: 50.0,
            carrier_freq_hz: 30e9,
            placement: Placement::Orbit {
                altitude_km: 780.0,
                velocity_km_s: 4.0,
                duty_cycle: 0.5,
                phase: 0.0,
            },
            blockage_prob: 0.0,
            rician_k_db: Some(10.0),
        }
    }

    pub fn tx_power_w(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    /// Largest per-task CPU frequency, honoring both the per-task and the AP cap.
    pub fn cpu_upper(&self) -> f64 {
        self.cpu_bounds[1].min(self.max_cpu_hz)
    }
}

/// Per-user task generation ranges (uniform).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRanges {
    pub data_bits: [f64; 2],
    pub cycles_per_bit: [f64; 2],
}

impl Default for TaskRanges {
    fn default() -> Self {
        TaskRanges {
            data_bits: [1e6, 6e6],
            cycles_per_bit: [100.0, 500.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub user_count: usize,
    /// Side of the square service area.
    pub area_km: f64,
    pub ap_profiles: Vec<ApProfile>,
    pub noise_spectral_density_dbm_hz: f64,
    pub user_tx_power_dbm: f64,
    pub slot_duration_s: f64,
    pub horizon: usize,
    pub cloud_cpu_per_user_hz: f64,
    #[serde(default)]
    pub tasks: TaskRanges,
    pub rng_seed: u64,
}

impl NetworkConfig {
    /// Full-scale reference network: 35 users, four BSs on the area corners,
    /// two HAPs and one LEO satellite.
    pub fn reference() -> Self {
        let mut aps = vec![
            ApProfile::base_station(0.0, 0.0),
            ApProfile::base_station(1.0, 0.0),
            ApProfile::base_station(1.0, 1.0),
            ApProfile::base_station(0.0, 1.0),
        ];
        aps.push(ApProfile::hap(0.2, 0.8));
        aps.push(ApProfile::hap(0.8, 0.2));
        aps.push(ApProfile::satellite());
        NetworkConfig {
            user_count: 35,
            area_km: 1.0,
            ap_profiles: aps,
            noise_spectral_density_dbm_hz: -174.0,
            user_tx_power_dbm: 30.0,
            slot_duration_s: 5.0,
            horizon: 500,
            cloud_cpu_per_user_hz: 4e9,
            tasks: TaskRanges::default(),
            rng_seed: 1,
        }
    }

    /// Desk-scale network: 6 users, two BSs, one HAP, one satellite.
    pub fn downsized() -> Self {
        NetworkConfig {
            user_count: 6,
            ap_profiles: vec![
                ApProfile::base_station(0.0, 0.0),
                ApProfile::base_station(1.0, 1.0),
                ApProfile::hap(0.2, 0.8),
                ApProfile::satellite(),
            ],
            horizon: 200,
            ..Self::reference()
        }
    }

    /// Smallest instance family: one AP per tier.
    pub fn tiny(users: usize) -> Self {
        NetworkConfig {
            user_count: users,
            ap_profiles: vec![
                ApProfile::base_station(0.5, 0.5),
                ApProfile::hap(0.2, 0.8),
                ApProfile::satellite(),
            ],
            horizon: 50,
            ..Self::reference()
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: NetworkConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ap_count(&self) -> usize {
        self.ap_profiles.len()
    }

    pub fn tier(&self, m: usize) -> Tier {
        self.ap_profiles[m].tier
    }

    pub fn user_tx_power_w(&self) -> f64 {
        dbm_to_watts(self.user_tx_power_dbm)
    }

    /// Noise power over the full band of AP `m`, in Watts.
    pub fn noise_power_w(&self, m: usize) -> f64 {
        dbm_to_watts(self.noise_spectral_density_dbm_hz) * self.ap_profiles[m].bandwidth_hz
    }

    pub fn energy_budgets(&self) -> Vec<f64> {
        self.ap_profiles.iter().map(|ap| ap.energy_budget_j).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let finite = |path: String, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(path, "must be finite"))
            }
        };
        if self.user_count == 0 {
            return Err(ConfigError::invalid("user_count", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(ConfigError::invalid("horizon", "must be at least 1"));
        }
        if self.ap_profiles.is_empty() {
            return Err(ConfigError::invalid("ap_profiles", "must not be empty"));
        }
        finite("noise_spectral_density_dbm_hz".into(), self.noise_spectral_density_dbm_hz)?;
        finite("user_tx_power_dbm".into(), self.user_tx_power_dbm)?;
        if !(self.slot_duration_s > 0.0 && self.slot_duration_s.is_finite()) {
            return Err(ConfigError::invalid("slot_duration_s", "must be positive"));
        }
        if !(self.cloud_cpu_per_user_hz > 0.0 && self.cloud_cpu_per_user_hz.is_finite()) {
            return Err(ConfigError::invalid("cloud_cpu_per_user_hz", "must be positive"));
        }
        if !(self.area_km > 0.0 && self.area_km.is_finite()) {
            return Err(ConfigError::invalid("area_km", "must be positive"));
        }
        for (name, [lo, hi]) in [
            ("tasks.data_bits", self.tasks.data_bits),
            ("tasks.cycles_per_bit", self.tasks.cycles_per_bit),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(ConfigError::invalid(name, "need 0 < lo <= hi < inf"));
            }
        }
        let mut last_rank = 0;
        for (m, ap) in self.ap_profiles.iter().enumerate() {
            let p = |field: &str| format!("ap_profiles[{m}].{field}");
            if ap.tier.rank() < last_rank {
                return Err(ConfigError::invalid(
                    p("tier"),
                    "tiers must be ordered BS, then HAP, then satellite",
                ));
            }
            last_rank = ap.tier.rank();
            finite(p("tx_power_dbm"), ap.tx_power_dbm)?;
            finite(p("antenna_gain_dbi"), ap.antenna_gain_dbi)?;
            if !(ap.bandwidth_hz > 0.0 && ap.bandwidth_hz.is_finite()) {
                return Err(ConfigError::invalid(p("bandwidth_hz"), "must be positive"));
            }
            if !(ap.carrier_freq_hz > 0.0 && ap.carrier_freq_hz.is_finite()) {
                return Err(ConfigError::invalid(p("carrier_freq_hz"), "must be positive"));
            }
            if !(ap.backhaul_rate_bps > 0.0 && ap.backhaul_rate_bps.is_finite()) {
                return Err(ConfigError::invalid(p("backhaul_rate_bps"), "must be positive"));
            }
            if !(ap.energy_budget_j > 0.0 && ap.energy_budget_j.is_finite()) {
                return Err(ConfigError::invalid(p("energy_budget_j"), "must be positive"));
            }
            if !(ap.switched_capacitance >= 0.0 && ap.switched_capacitance.is_finite()) {
                return Err(ConfigError::invalid(p("switched_capacitance"), "must be >= 0"));
            }
            let [bmin, bmax] = ap.bandwidth_fraction_bounds;
            if !(0.0 <= bmin && bmin <= bmax && bmax <= 1.0) || bmax <= 0.0 {
                return Err(ConfigError::invalid(
                    p("bandwidth_fraction_bounds"),
                    "need 0 <= min <= max <= 1 and max > 0",
                ));
            }
            if ap.tier.can_compute() {
                let [fmin, fmax] = ap.cpu_bounds;
                if !(0.0 <= fmin && fmin <= fmax && fmax <= ap.max_cpu_hz) || fmax <= 0.0 {
                    return Err(ConfigError::invalid(
                        p("cpu_bounds"),
                        "need 0 <= min <= max <= max_cpu_hz and max > 0",
                    ));
                }
                if fmin == 0.0 {
                    return Err(ConfigError::invalid(
                        p("cpu_bounds"),
                        "minimum CPU share must be positive for computing tiers",
                    ));
                }
            }
            if !(0.0..=1.0).contains(&ap.blockage_prob) {
                return Err(ConfigError::invalid(p("blockage_prob"), "must lie in [0, 1]"));
            }
            if let Some(k) = ap.rician_k_db {
                finite(p("rician_k_db"), k)?;
            }
            match ap.placement {
                Placement::Fixed { x_km, y_km, z_km } => {
                    finite(p("placement.x_km"), x_km)?;
                    finite(p("placement.y_km"), y_km)?;
                    finite(p("placement.z_km"), z_km)?;
                }
                Placement::Orbit {
                    altitude_km,
                    velocity_km_s,
                    duty_cycle,
                    phase,
                } => {
                    if !(altitude_km > 0.0 && velocity_km_s > 0.0) {
                        return Err(ConfigError::invalid(
                            p("placement"),
                            "altitude and velocity must be positive",
                        ));
                    }
                    if !(0.0..=1.0).contains(&duty_cycle) || !phase.is_finite() {
                        return Err(ConfigError::invalid(
                            p("placement.duty_cycle"),
                            "must lie in [0, 1]",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Fixed user positions (km), drawn once from the configuration seed.
    pub fn user_positions(&self) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(0);
        (0..self.user_count)
            .map(|_| {
                (
                    rng.random_range(0.0..self.area_km),
                    rng.random_range(0.0..self.area_km),
                )
            })
            .collect()
    }

    /// Whether AP `m` is reachable at all at slot `t` (satellite visibility).
    pub fn visible(&self, m: usize, t: usize) -> bool {
        match self.ap_profiles[m].placement {
            Placement::Fixed { .. } => true,
            Placement::Orbit {
                altitude_km,
                velocity_km_s,
                duty_cycle,
                phase,
            } => {
                let period_s = 2.0 * PI * (EARTH_RADIUS_KM + altitude_km) / velocity_km_s;
                let pos = (t as f64 * self.slot_duration_s / period_s + phase).rem_euclid(1.0);
                pos < duty_cycle
            }
        }
    }

    /// Large-scale gain (antenna gain times free-space loss), linear.
    fn path_gain(&self, m: usize, user: (f64, f64)) -> f64 {
        let ap = &self.ap_profiles[m];
        let dist_m = match ap.placement {
            Placement::Fixed { x_km, y_km, z_km } => {
                let dx = x_km - user.0;
                let dy = y_km - user.1;
                (dx * dx + dy * dy + z_km * z_km).sqrt().max(1e-3) * 1e3
            }
            Placement::Orbit { altitude_km, .. } => altitude_km * 1e3,
        };
        let wavelength = SPEED_OF_LIGHT / ap.carrier_freq_hz;
        let fspl = (wavelength / (4.0 * PI * dist_m)).powi(2);
        db_to_linear(ap.antenna_gain_dbi) * fspl
    }

    /// Linear signal-to-noise ratio for user power over AP `m`'s band.
    pub fn snr(&self, m: usize, gain: f64) -> f64 {
        self.user_tx_power_w() * gain / self.noise_power_w(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub data_bits: f64,
    pub cycles_per_bit: f64,
}

impl Task {
    /// Total CPU cycles `D·C`.
    pub fn cycles(&self) -> f64 {
        self.data_bits * self.cycles_per_bit
    }
}

/// Realized randomness of one time slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotState {
    pub t: usize,
    pub connectivity: Vec<Vec<bool>>,
    pub gain: Vec<Vec<f64>>,
    pub tasks: Vec<Task>,
    /// Users with no available AP this slot; non-empty flags the slot infeasible.
    pub unserved: Vec<usize>,
}

impl SlotState {
    pub fn users(&self) -> usize {
        self.tasks.len()
    }

    pub fn aps(&self) -> usize {
        self.connectivity.first().map_or(0, |r| r.len())
    }

    pub fn is_feasible(&self) -> bool {
        self.unserved.is_empty()
    }

    pub fn available(&self, u: usize, m: usize) -> bool {
        self.connectivity[u][m]
    }

    pub fn is_served(&self, u: usize) -> bool {
        self.connectivity[u].iter().any(|&a| a)
    }

    /// Copy with the unserved users' rows dropped from consideration: they keep
    /// their index but have no available AP, and the slot is treated as
    /// feasible for the remaining users.
    pub fn served_view(&self) -> SlotState {
        let mut s = self.clone();
        s.unserved.clear();
        s
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn recompute_unserved(&mut self) {
        self.unserved = (0..self.users()).filter(|&u| !self.is_served(u)).collect();
    }
}

/// Draws the randomness of slot `t`. Pure in `(cfg, t)`: each slot uses its own
/// ChaCha stream of the configuration seed.
pub fn sample_slot(cfg: &NetworkConfig, t: usize) -> SlotState {
    let positions = cfg.user_positions();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(t as u64 + 1);
    let m_count = cfg.ap_count();
    let mut connectivity = vec![vec![false; m_count]; cfg.user_count];
    let mut gain = vec![vec![0.0; m_count]; cfg.user_count];
    for (u, pos) in positions.iter().enumerate() {
        for (m, ap) in cfg.ap_profiles.iter().enumerate() {
            // Draws happen unconditionally so the stream layout is independent
            // of the outcome.
            let blocked = rng.random::<f64>() < ap.blockage_prob;
            let fading = match ap.rician_k_db {
                None => Exp1.sample(&mut rng),
                Some(k_db) => {
                    let k = db_to_linear(k_db);
                    let los = (k / (k + 1.0)).sqrt();
                    let sigma = (0.5 / (k + 1.0)).sqrt();
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    (los + sigma * re).powi(2) + (sigma * im).powi(2)
                }
            };
            connectivity[u][m] = !blocked && cfg.visible(m, t);
            gain[u][m] = cfg.path_gain(m, *pos) * fading;
        }
    }
    let tasks = (0..cfg.user_count)
        .map(|_| Task {
            data_bits: rng.random_range(cfg.tasks.data_bits[0]..=cfg.tasks.data_bits[1]),
            cycles_per_bit: rng
                .random_range(cfg.tasks.cycles_per_bit[0]..=cfg.tasks.cycles_per_bit[1]),
        })
        .collect();
    let mut slot = SlotState {
        t,
        connectivity,
        gain,
        tasks,
        unserved: Vec::new(),
    };
    slot.recompute_unserved();
    slot
}

/// Shannon rate `β·B·log2(1 + P_u·g/σ²)` in bit/s.
pub fn data_rate(beta: f64, ap: &ApProfile, gain: f64, cfg: &NetworkConfig) -> f64 {
    let noise = dbm_to_watts(cfg.noise_spectral_density_dbm_hz) * ap.bandwidth_hz;
    let snr = cfg.user_tx_power_w() * gain / noise;
    beta * ap.bandwidth_hz * (1.0 + snr).log2()
}

/// Spectral efficiency `B·log2(1+SNR)` of the full band (rate at β = 1).
pub fn full_band_rate(cfg: &NetworkConfig, slot: &SlotState, u: usize, m: usize) -> f64 {
    data_rate(1.0, &cfg.ap_profiles[m], slot.gain[u][m], cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_snr_cfg() -> (NetworkConfig, ApProfile, f64) {
        let cfg = NetworkConfig::tiny(1);
        let ap = cfg.ap_profiles[0].clone();
        let noise = dbm_to_watts(cfg.noise_spectral_density_dbm_hz) * ap.bandwidth_hz;
        // gain giving P_u·g/σ² = 1
        let g = noise / cfg.user_tx_power_w();
        (cfg, ap, g)
    }

    #[test]
    fn rate_examples() {
        let (cfg, ap, g) = unit_snr_cfg();
        assert_eq!(ap.bandwidth_hz, 10e6);
        let r = data_rate(1.0, &ap, g, &cfg);
        assert!((r - 10e6).abs() < 1e-3);
        assert_eq!(data_rate(0.0, &ap, g, &cfg), 0.0);
        let r = data_rate(0.5, &ap, 3.0 * g, &cfg);
        assert!((r - 10e6).abs() < 1e-3);
    }

    #[test]
    fn all_blocked_slot_is_flagged() {
        let mut cfg = NetworkConfig::tiny(3);
        for ap in &mut cfg.ap_profiles {
            ap.blockage_prob = 1.0;
            if let Placement::Orbit { duty_cycle, .. } = &mut ap.placement {
                *duty_cycle = 0.0;
            }
        }
        let slot = sample_slot(&cfg, 0);
        assert!(slot.connectivity.iter().all(|row| row.iter().all(|&a| !a)));
        assert!(!slot.is_feasible());
        assert_eq!(slot.unserved, vec![0, 1, 2]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = NetworkConfig::downsized();
        let a = sample_slot(&cfg, 17);
        let b = sample_slot(&cfg, 17);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = sample_slot(&cfg, 18);
        assert_ne!(a, c);
    }

    #[test]
    fn mean_task_size_matches_uniform_mean() {
        let cfg = NetworkConfig::reference();
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in 0..500 {
            for task in sample_slot(&cfg, t).tasks {
                assert!((1e6..=6e6).contains(&task.data_bits));
                assert!((100.0..=500.0).contains(&task.cycles_per_bit));
                sum += task.data_bits;
                n += 1;
            }
        }
        let mean_mbit = sum / n as f64 / 1e6;
        assert!((3.4..=3.6).contains(&mean_mbit), "mean {mean_mbit}");
    }

    #[test]
    fn validation_reports_field_paths() {
        let mut cfg = NetworkConfig::downsized();
        cfg.ap_profiles[1].bandwidth_fraction_bounds = [0.6, 0.5];
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("ap_profiles[1].bandwidth_fraction_bounds"), "{err}");

        let mut cfg = NetworkConfig::downsized();
        cfg.ap_profiles.swap(0, 3);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("tier"), "{err}");

        assert!(NetworkConfig::reference().validate().is_ok());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = NetworkConfig::reference();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert!(text.contains("\"energy_budget_j\""));
        let back: NetworkConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn satellite_window_switches_off() {
        let mut cfg = NetworkConfig::tiny(1);
        if let Placement::Orbit { duty_cycle, .. } = &mut cfg.ap_profiles[2].placement {
            *duty_cycle = 0.1;
        }
        // period ≈ 11233 s ≈ 2247 slots of 5 s
        assert!(cfg.visible(2, 0));
        assert!(cfg.visible(2, 200));
        assert!(!cfg.visible(2, 300));
        assert!(cfg.visible(2, 2247));
    }

    proptest::proptest! {
        #[test]
        fn rate_monotone_and_linear_in_beta(
            b1 in 0.0f64..1.0, b2 in 0.0f64..1.0, g1 in 0.0f64..1e-8, g2 in 0.0f64..1e-8
        ) {
            let cfg = NetworkConfig::tiny(1);
            let ap = &cfg.ap_profiles[0];
            let (blo, bhi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let (glo, ghi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            proptest::prop_assert!(data_rate(blo, ap, g1, &cfg) <= data_rate(bhi, ap, g1, &cfg));
            proptest::prop_assert!(data_rate(b1, ap, glo, &cfg) <= data_rate(b1, ap, ghi, &cfg));
            let full = data_rate(1.0, ap, g1, &cfg);
            let r = data_rate(b1, ap, g1, &cfg);
            proptest::prop_assert!((r - b1 * full).abs() <= 1e-9 * full.max(1.0));
        }
    }
}
