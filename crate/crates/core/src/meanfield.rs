//! Histogram discretization of the state distribution, per-bin Gaussian
//! decision rules and particle-ensemble mean-field propagation.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::sim_core::{clip_to_disc, step_swarm, ActionBatch, SpaceConfig, SwarmState, Vec2};

/// Largest admissible decision-rule standard deviation.
pub const SIGMA_MAX: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub bins_per_axis: usize,
    pub box_half_width: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            bins_per_axis: 6,
            box_half_width: 2.0,
        }
    }
}

impl GridSpec {
    pub fn total_bins(&self) -> usize {
        self.bins_per_axis * self.bins_per_axis
    }

    pub fn bin_width(&self) -> f64 {
        2.0 * self.box_half_width / self.bins_per_axis as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins_per_axis == 0 {
            return Err(Error::InvalidConfig("bins_per_axis must be at least 1".into()));
        }
        if !(self.box_half_width > 0.0) {
            return Err(Error::InvalidConfig("box_half_width must be positive".into()));
        }
        Ok(())
    }

    fn axis_cell(&self, v: f64) -> usize {
        let n = self.bins_per_axis;
        let m = self.box_half_width;
        // (v + m) * n / (2m) keeps interior edges exact for the usual grids
        let k = ((v + m) * n as f64 / (2.0 * m)).floor();
        (k.max(0.0) as usize).min(n - 1)
    }

    /// Centre of bin `b` in row-major order.
    pub fn bin_center(&self, b: usize) -> Vec2 {
        let n = self.bins_per_axis;
        let w = self.bin_width();
        let (row, col) = (b / n, b % n);
        Vec2::new(
            -self.box_half_width + (col as f64 + 0.5) * w,
            -self.box_half_width + (row as f64 + 0.5) * w,
        )
    }
}

/// Row-major index of the half-open cell containing `x`; the upper box
/// boundary belongs to the last cell.
pub fn bin_index(x: Vec2, grid: &GridSpec) -> Result<usize> {
    let m = grid.box_half_width;
    if !(x.x.abs() <= m && x.y.abs() <= m) {
        return Err(Error::OutOfBox {
            x: x.x,
            y: x.y,
            half_width: m,
        });
    }
    Ok(grid.axis_cell(x.y) * grid.bins_per_axis + grid.axis_cell(x.x))
}

/// Probability vector over the grid cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn uniform(bins: usize) -> Self {
        Histogram {
            mass: vec![1.0 / bins as f64; bins],
        }
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn l1_distance(&self, other: &Histogram) -> f64 {
        self.mass.iter().zip(&other.mass).map(|(a, b)| (a - b).abs()).sum()
    }
}

pub fn empirical_histogram(state: &SwarmState, grid: &GridSpec) -> Result<Histogram> {
    histogram_of_points(&state.positions, grid)
}

pub fn histogram_of_points(points: &[Vec2], grid: &GridSpec) -> Result<Histogram> {
    if points.is_empty() {
        return Err(Error::TooFewAgents { required: 1, got: 0 });
    }
    let mut counts = vec![0usize; grid.total_bins()];
    for &p in points {
        counts[bin_index(p, grid)?] += 1;
    }
    let n = points.len() as f64;
    Ok(Histogram {
        mass: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// Gaussian movement rule of one bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRule {
    pub mean: Vec2,
    pub std: [f64; 2],
}

impl BinRule {
    pub fn sample(&self, radius: f64, seed: SeedStream) -> Vec2 {
        let mut rng = seed.rng();
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let u = Vec2::new(self.mean.x + self.std[0] * z1, self.mean.y + self.std[1] * z2);
        clip_to_disc(u, radius)
    }
}

/// Decision rule `h_t`: one Gaussian per histogram bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldAction {
    pub rules: Vec<BinRule>,
}

impl MeanFieldAction {
    pub fn uniform(bins: usize, rule: BinRule) -> Self {
        MeanFieldAction {
            rules: vec![rule; bins],
        }
    }

    /// Checks the mean square `[-bound, bound]^2` and `std in (0, SIGMA_MAX]`.
    pub fn validate(&self, mean_bound: f64) -> Result<()> {
        for (b, r) in self.rules.iter().enumerate() {
            if !(r.mean.x.abs() <= mean_bound && r.mean.y.abs() <= mean_bound) {
                return Err(Error::InvalidConfig(format!("bin {b}: mean outside the action square")));
            }
            if !r.std.iter().all(|&s| s > 0.0 && s <= SIGMA_MAX) {
                return Err(Error::InvalidConfig(format!("bin {b}: std outside (0, {SIGMA_MAX}]")));
            }
        }
        Ok(())
    }
}

/// Draws `u ~ h(.|x)` and clips it to the action disc.
pub fn sample_decision_rule(
    h: &MeanFieldAction,
    x: Vec2,
    grid: &GridSpec,
    action_radius: f64,
    seed: SeedStream,
) -> Result<Vec2> {
    let b = bin_index(x, grid)?;
    let rule = h.rules.get(b).ok_or(Error::LengthMismatch {
        expected: grid.total_bins(),
        got: h.rules.len(),
    })?;
    Ok(rule.sample(action_radius, seed))
}

/// Samples every agent's action from `h`; agent `i` uses `seed.child(i)`.
pub fn sample_actions(
    h: &MeanFieldAction,
    state: &SwarmState,
    grid: &GridSpec,
    action_radius: f64,
    seed: SeedStream,
) -> Result<ActionBatch> {
    if h.rules.len() != grid.total_bins() {
        return Err(Error::LengthMismatch {
            expected: grid.total_bins(),
            got: h.rules.len(),
        });
    }
    let actions = state
        .positions
        .iter()
        .enumerate()
        .map(|(i, &x)| sample_decision_rule(h, x, grid, action_radius, seed.child(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ActionBatch::new(actions))
}

const ACTION_TAG: u64 = 0x11;
const NOISE_TAG: u64 = 0x22;

/// Particle-ensemble realization of the mean-field transition `T^h`.
pub fn mf_transition(
    particles: &SwarmState,
    h: &MeanFieldAction,
    space: &SpaceConfig,
    grid: &GridSpec,
    seed: SeedStream,
) -> Result<SwarmState> {
    if particles.is_empty() {
        return Err(Error::TooFewAgents { required: 1, got: 0 });
    }
    let acts = sample_actions(h, particles, grid, space.action_radius, seed.child(ACTION_TAG))?;
    step_swarm(particles, &acts, space, seed.child(NOISE_TAG))
}

/// Pre-recorded decision rules `h_0, h_1, ...` for decentralized replay.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenLoopSequence {
    pub grid: GridSpec,
    pub actions: Vec<MeanFieldAction>,
    pub initial_histogram: Histogram,
}

pub use crate::control::replay_open_loop;

pub const OPEN_LOOP_FORMAT: &str = "mfswarm-openloop";
pub const OPEN_LOOP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct OpenLoopDoc {
    format: String,
    version: u32,
    grid: GridSpec,
    horizon: usize,
    steps: Vec<OpenLoopStepDoc>,
    initial_histogram: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OpenLoopStepDoc {
    /// Row-major bins, `[mx_0, my_0, mx_1, my_1, ...]`.
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl OpenLoopSequence {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let steps = self
            .actions
            .iter()
            .map(|h| OpenLoopStepDoc {
                mean: h.rules.iter().flat_map(|r| [r.mean.x, r.mean.y]).collect(),
                std: h.rules.iter().flat_map(|r| r.std).collect(),
            })
            .collect();
        let doc = OpenLoopDoc {
            format: OPEN_LOOP_FORMAT.into(),
            version: OPEN_LOOP_VERSION,
            grid: self.grid,
            horizon: self.actions.len(),
            steps,
            initial_histogram: self.initial_histogram.mass.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: OpenLoopDoc = serde_json::from_str(s)?;
        if doc.format != OPEN_LOOP_FORMAT || doc.version != OPEN_LOOP_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported open-loop document {} v{}",
                doc.format, doc.version
            )));
        }
        let bins = doc.grid.total_bins();
        if doc.steps.len() != doc.horizon || doc.horizon == 0 {
            return Err(Error::InvalidConfig("open-loop horizon does not match step count".into()));
        }
        let actions = doc
            .steps
            .iter()
            .map(|s| {
                if s.mean.len() != 2 * bins || s.std.len() != 2 * bins {
                    return Err(Error::LengthMismatch {
                        expected: 2 * bins,
                        got: s.mean.len().min(s.std.len()),
                    });
                }
                Ok(MeanFieldAction {
                    rules: (0..bins)
                        .map(|b| BinRule {
                            mean: Vec2::new(s.mean[2 * b], s.mean[2 * b + 1]),
                            std: [s.std[2 * b], s.std[2 * b + 1]],
                        })
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OpenLoopSequence {
            grid: doc.grid,
            actions,
            initial_histogram: Histogram {
                mass: doc.initial_histogram,
            },
        })
    }
}
