//! Finite N-agent kinematics on the box `[-m, m]^2`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Default cap on rejection rounds in [`sample_initial`].
pub const DEFAULT_REJECTION_ROUNDS: usize = 10_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// State box, action disc and transition noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpaceConfig {
    pub box_half_width: f64,
    pub action_radius: f64,
    pub noise_std: [f64; 2],
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            box_half_width: 2.0,
            action_radius: 0.2,
            noise_std: [0.0, 0.0],
        }
    }
}

impl SpaceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.box_half_width > 0.0) {
            return Err(Error::InvalidConfig("box_half_width must be positive".into()));
        }
        if !(self.action_radius > 0.0) {
            return Err(Error::InvalidConfig("action_radius must be positive".into()));
        }
        if !(self.noise_std[0] >= 0.0 && self.noise_std[1] >= 0.0) {
            return Err(Error::InvalidConfig("noise_std must be non-negative".into()));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_std == [0.0, 0.0]
    }

    /// Componentwise projection onto the box.
    pub fn clip_box(&self, p: Vec2) -> Vec2 {
        let m = self.box_half_width;
        Vec2::new(p.x.clamp(-m, m), p.y.clamp(-m, m))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let m = self.box_half_width;
        p.x.abs() <= m && p.y.abs() <= m
    }

    pub fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec2 {
        let m = self.box_half_width;
        Vec2::new(rng.random_range(-m..=m), rng.random_range(-m..=m))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub positions: Vec<Vec2>,
    pub time_index: usize,
}

impl SwarmState {
    pub fn new(positions: Vec<Vec2>) -> Self {
        SwarmState {
            positions,
            time_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn mean_position(&self) -> Vec2 {
        let n = self.positions.len() as f64;
        let s = self.positions.iter().fold(Vec2::ZERO, |a, &p| a + p);
        s * (1.0 / n)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionBatch {
    pub actions: Vec<Vec2>,
}

impl ActionBatch {
    pub fn new(actions: Vec<Vec2>) -> Self {
        ActionBatch { actions }
    }

    pub fn zeros(n: usize) -> Self {
        ActionBatch {
            actions: vec![Vec2::ZERO; n],
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Draws `n` uniform positions on the box.
///
/// With `min_separation > 0`, agents involved in a violating pair are redrawn
/// (the higher index of each pair) until every pairwise distance exceeds
/// `min_separation`, for at most `max_rounds` rounds.
pub fn sample_initial(
    n: usize,
    space: &SpaceConfig,
    min_separation: f64,
    max_rounds: usize,
    seed: SeedStream,
) -> Result<SwarmState> {
    if n == 0 {
        return Err(Error::TooFewAgents { required: 1, got: 0 });
    }
    if !(min_separation >= 0.0) {
        return Err(Error::InvalidConfig("min_separation must be non-negative".into()));
    }
    let mut rng = seed.rng();
    let mut positions: Vec<Vec2> = (0..n).map(|_| space.uniform_point(&mut rng)).collect();
    if min_separation > 0.0 && n > 1 {
        let s2 = min_separation * min_separation;
        let mut redraw = vec![false; n];
        let mut rounds = 0;
        loop {
            let mut any = false;
            for i in 0..n {
                for j in (i + 1)..n {
                    if (positions[i] - positions[j]).norm_sq() <= s2 {
                        redraw[j] = true;
                        any = true;
                    }
                }
            }
            if !any {
                break;
            }
            if rounds == max_rounds {
                return Err(Error::InfeasibleSeparation {
                    n,
                    min_separation,
                    rounds,
                });
            }
            rounds += 1;
            for (p, r) in positions.iter_mut().zip(redraw.iter_mut()) {
                if *r {
                    *p = space.uniform_point(&mut rng);
                    *r = false;
                }
            }
        }
    }
    Ok(SwarmState::new(positions))
}

/// Radial projection onto the closed disc of the given radius.
pub fn clip_to_disc(u: Vec2, radius: f64) -> Vec2 {
    let n = u.norm();
    if n <= radius {
        return u;
    }
    let mut c = u * (radius / n);
    // rounding can leave the scaled vector a few ulps outside
    while c.norm() > radius {
        c = c * (1.0 - f64::EPSILON);
    }
    c
}

/// One transition `x <- clip_box(x + u + eps)`.
///
/// Noise for agent `i` is drawn from `seed.child(i)`.
pub fn step_swarm(
    state: &SwarmState,
    acts: &ActionBatch,
    space: &SpaceConfig,
    seed: SeedStream,
) -> Result<SwarmState> {
    if acts.len() != state.len() {
        return Err(Error::LengthMismatch {
            expected: state.len(),
            got: acts.len(),
        });
    }
    let noiseless = space.is_noiseless();
    let positions = state
        .positions
        .iter()
        .zip(&acts.actions)
        .enumerate()
        .map(|(i, (&x, &u))| {
            let mut next = x + u;
            if !noiseless {
                let mut rng = seed.child(i as u64).rng();
                let e1: f64 = StandardNormal.sample(&mut rng);
                let e2: f64 = StandardNormal.sample(&mut rng);
                next += Vec2::new(e1 * space.noise_std[0], e2 * space.noise_std[1]);
            }
            space.clip_box(next)
        })
        .collect();
    Ok(SwarmState {
        positions,
        time_index: state.time_index + 1,
    })
}

pub fn min_pairwise_distance(state: &SwarmState) -> Result<f64> {
    min_distance(&state.positions)
}

pub fn min_distance(points: &[Vec2]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::TooFewAgents {
            required: 2,
            got: points.len(),
        });
    }
    let mut best = f64::INFINITY;
    for (i, &p) in points.iter().enumerate() {
        for &q in &points[i + 1..] {
            best = best.min((p - q).norm_sq());
        }
    }
    Ok(best.sqrt())
}
