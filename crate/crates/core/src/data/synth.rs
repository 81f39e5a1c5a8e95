//! Synthetic commuter-style flow system.
//!
//! A latent mass vector moves over a unit grid by a row-stochastic transfer
//! matrix. During the first half of each period mass is attracted toward
//! "commercial" nodes, during the second half toward the remaining
//! "residential" nodes. Attraction strength is redrawn every half period,
//! so the system never settles into a fixed cycle.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

use super::dataset::{Geometry, SeriesDataset};
use super::geometry::{distance_matrix, DistanceMetric};

fn default_mobility() -> f64 {
    0.15
}

fn default_intensity() -> [f64; 2] {
    [2.0, 8.0]
}

fn default_initial_mass() -> [f64; 2] {
    [50.0, 150.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub node_count: usize,
    pub rows: usize,
    pub cols: usize,
    pub steps: usize,
    /// Time steps per commercial/residential cycle.
    pub period: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Share of nodes acting as daytime destinations.
    pub commercial_fraction: f64,
    /// Share of each node's mass that moves per step.
    #[serde(default = "default_mobility")]
    pub mobility: f64,
    /// Range of the per-half-period attraction multiplier.
    #[serde(default = "default_intensity")]
    pub intensity: [f64; 2],
    #[serde(default = "default_initial_mass")]
    pub initial_mass: [f64; 2],
}

impl SynthSpec {
    pub fn grid(rows: usize, cols: usize, steps: usize, period: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            node_count: rows * cols,
            rows,
            cols,
            steps,
            period,
            noise_sigma,
            seed,
            commercial_fraction: 0.25,
            mobility: default_mobility(),
            intensity: default_intensity(),
            initial_mass: default_initial_mass(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rows == 0 || self.cols == 0 || self.node_count != self.rows * self.cols {
            return bad(format!("node_count {} must equal rows × cols = {} × {}", self.node_count, self.rows, self.cols));
        }
        if self.node_count < 2 {
            return bad("need at least two nodes".into());
        }
        if self.period < 2 {
            return bad(format!("period must be at least 2, got {}", self.period));
        }
        if self.steps < 2 {
            return bad(format!("steps must be at least 2, got {}", self.steps));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be nonnegative, got {}", self.noise_sigma));
        }
        if !(self.commercial_fraction > 0.0 && self.commercial_fraction < 1.0) {
            return bad(format!("commercial_fraction must lie in (0, 1), got {}", self.commercial_fraction));
        }
        if !(self.mobility > 0.0 && self.mobility <= 1.0) {
            return bad(format!("mobility must lie in (0, 1], got {}", self.mobility));
        }
        let [lo, hi] = self.intensity;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("intensity range {lo}..{hi} is invalid"));
        }
        let [m0, m1] = self.initial_mass;
        if !(m0 > 0.0 && m0 <= m1) {
            return bad(format!("initial mass range {m0}..{m1} is invalid"));
        }
        Ok(())
    }

    /// Whether step `t` lies in the commercial-attraction half of its period.
    pub fn commercial_phase(&self, t: usize) -> bool {
        t % self.period < self.period / 2
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: SeriesDataset,
    /// Noise-free masses `[T, N]`.
    pub masses: Tensor<f64>,
    /// `transfers[t]` moves `masses[t]` to `masses[t + 1]`; shape `[T − 1, N, N]`.
    pub transfers: Tensor<f64>,
    pub commercial: Vec<bool>,
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let n = spec.node_count;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let coords = Tensor::from_fn(&[n, 2], |k| {
        let node = k / 2;
        if k % 2 == 0 { (node % spec.cols) as f64 } else { (node / spec.cols) as f64 }
    });
    let dist = distance_matrix(&coords, DistanceMetric::Euclidean)?;

    let n_commercial = ((spec.commercial_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut commercial = vec![false; n];
    for &i in &order[..n_commercial] {
        commercial[i] = true;
    }

    let [m_lo, m_hi] = spec.initial_mass;
    let mut mass: Vec<f64> = (0..n).map(|_| rng.gen_range(m_lo..=m_hi)).collect();
    let decay: Vec<f64> = dist.data().iter().map(|d| (-d).exp()).collect();

    let steps = spec.steps;
    let mut masses = Vec::with_capacity(steps * n);
    let mut transfers = Vec::with_capacity((steps - 1) * n * n);
    let half = (spec.period / 2).max(1);
    let mut intensity = 1.0;
    let [s_lo, s_hi] = spec.intensity;
    let mut kernel = vec![0.0; n * n];

    for t in 0..steps {
        masses.extend_from_slice(&mass);
        if t + 1 == steps {
            break;
        }
        let phase_start = t % spec.period == 0 || t % spec.period == half;
        if t == 0 || phase_start {
            intensity = rng.gen_range(s_lo..=s_hi);
        }
        let toward_commercial = spec.commercial_phase(t);
        for i in 0..n {
            let row = &mut kernel[i * n..(i + 1) * n];
            let mut z = 0.0;
            for j in 0..n {
                let attract = if commercial[j] == toward_commercial { intensity } else { 1.0 };
                row[j] = decay[i * n + j] * attract;
                z += row[j];
            }
            for (j, v) in row.iter_mut().enumerate() {
                let stay = if i == j { 1.0 - spec.mobility } else { 0.0 };
                *v = stay + spec.mobility * *v / z;
            }
        }
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[j] += mass[i] * kernel[i * n + j];
            }
        }
        mass = next;
        transfers.extend_from_slice(&kernel);
    }

    let masses = Tensor::new(vec![steps, n], masses)?;
    let mut observed = masses.clone();
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in observed.data_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    let ids = (0..n).map(|i| format!("node_{i}")).collect();
    let mut dataset = SeriesDataset::new("synthetic", observed, ids, Geometry::Coordinates(coords))?;
    dataset.resolution = Some("1 step".into());
    Ok(SynthOutput { dataset, masses, transfers: Tensor::new(vec![steps - 1, n, n], transfers)?, commercial })
}

impl SynthOutput {
    /// Net mass moved onto commercial nodes by `transfers[t]`.
    pub fn commercial_net_flux(&self, t: usize) -> f64 {
        let n = self.commercial.len();
        let m = &self.masses.data()[t * n..(t + 1) * n];
        let p = &self.transfers.data()[t * n * n..(t + 1) * n * n];
        let mut flux = 0.0;
        for i in 0..n {
            for j in 0..n {
                match (self.commercial[i], self.commercial[j]) {
                    (false, true) => flux += m[i] * p[i * n + j],
                    (true, false) => flux -= m[i] * p[i * n + j],
                    _ => {}
                }
            }
        }
        flux
    }
}
