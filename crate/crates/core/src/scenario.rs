//! Seeded random network generation.
//!
//! Transmitters are uniform on a square, each receiver is uniform on a disc
//! around its own transmitter, gains follow `1/d^exponent`, and budgets are
//! a fixed multiple of the interference-free minimum power. With the
//! default multiplier of 2 every generated instance normalizes to `b = 0.5e`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{JpacError, Result};
use crate::network::{Geometry, NetworkInstance};
use crate::rng::ChaCha8Rng;
use rand::SeedableRng;

/// Parameters of the random deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    #[serde(rename = "K")]
    pub k: usize,
    /// Side of the deployment square, meters.
    pub square_side: f64,
    /// Radius of the receiver disc around each transmitter, meters.
    pub rx_radius: f64,
    pub pathloss_exponent: f64,
    pub sinr_target_db: f64,
    pub noise_dbm: f64,
    pub budget_multiplier: f64,
    /// Uniform shrink factor applied to every coordinate (Setup2 uses 0.707).
    pub distance_scale: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            k: 10,
            square_side: 2000.0,
            rx_radius: 400.0,
            pathloss_exponent: 4.0,
            sinr_target_db: 2.0,
            noise_dbm: -90.0,
            budget_multiplier: 2.0,
            distance_scale: 1.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn with_links(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("square_side", self.square_side),
            ("rx_radius", self.rx_radius),
            ("pathloss_exponent", self.pathloss_exponent),
            ("budget_multiplier", self.budget_multiplier),
        ];
        if self.k == 0 {
            return Err(JpacError::InvalidParameter("K must be at least 1".into()));
        }
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(JpacError::InvalidParameter(format!("{name} = {v}")));
            }
        }
        if !(self.distance_scale > 0.0 && self.distance_scale <= 1.0) {
            return Err(JpacError::InvalidParameter(format!(
                "distance_scale = {} must lie in (0, 1]",
                self.distance_scale
            )));
        }
        if !self.sinr_target_db.is_finite() || !self.noise_dbm.is_finite() {
            return Err(JpacError::InvalidParameter("non-finite dB value".into()));
        }
        Ok(())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Draws one instance; identical configs give bit-identical instances.
pub fn generate(config: &ScenarioConfig) -> Result<NetworkInstance> {
    config.validate()?;
    let k = config.k;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let side = config.square_side;
    let transmitters: Vec<[f64; 2]> = (0..k)
        .map(|_| [rng.gen::<f64>() * side, rng.gen::<f64>() * side])
        .collect();
    let mut receivers = Vec::with_capacity(k);
    for tx in &transmitters {
        receivers.push(draw_receiver(&mut rng, tx, config.rx_radius));
    }
    // Coincident points would give an infinite gain.
    for kk in 0..k {
        while transmitters.iter().any(|tx| distance(&receivers[kk], tx) == 0.0) {
            receivers[kk] = draw_receiver(&mut rng, &transmitters[kk], config.rx_radius);
        }
    }

    let s = config.distance_scale;
    let scale = |p: &[f64; 2]| [p[0] * s, p[1] * s];
    let transmitters: Vec<[f64; 2]> = transmitters.iter().map(scale).collect();
    let receivers: Vec<[f64; 2]> = receivers.iter().map(scale).collect();

    let gains = DMatrix::from_fn(k, k, |rx, tx| {
        distance(&receivers[rx], &transmitters[tx]).powf(-config.pathloss_exponent)
    });
    let gamma = db_to_linear(config.sinr_target_db);
    let eta = dbm_to_watts(config.noise_dbm);
    let budgets = DVector::from_fn(k, |i, _| config.budget_multiplier * (gamma * eta / gains[(i, i)]));
    NetworkInstance::new(
        gains,
        DVector::from_element(k, eta),
        DVector::from_element(k, gamma),
        budgets,
        Some(Geometry {
            transmitters,
            receivers,
        }),
    )
}

fn draw_receiver(rng: &mut ChaCha8Rng, tx: &[f64; 2], radius: f64) -> [f64; 2] {
    let r = radius * rng.gen::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.gen::<f64>();
    [tx[0] + r * theta.cos(), tx[1] + r * theta.sin()]
}

fn distance(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
