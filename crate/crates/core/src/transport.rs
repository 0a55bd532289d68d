//! Exact Wasserstein-1 distance between weighted point clouds.
//!
//! The transportation problem on the complete bipartite graph is solved by
//! successive shortest augmenting paths with Johnson potentials, starting from
//! a greedy flow on zero-reduced-cost edges. Each Dijkstra search starts at one
//! source with remaining supply and stops at the first sink with unmet demand.
//! The final potentials are an optimal dual solution.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::sim_core::{SpaceConfig, Vec2};

const NORMALIZATION_TOL: f64 = 1e-9;
const MASS_EPS: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
}

impl PointCloud {
    pub fn uniform(points: Vec<Vec2>) -> Self {
        let w = 1.0 / points.len().max(1) as f64;
        let weights = vec![w; points.len()];
        PointCloud { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, v: Vec2) -> Self {
        PointCloud {
            points: self.points.iter().map(|&p| p + v).collect(),
            weights: self.weights.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if self.points.len() != self.weights.len() {
            return Err(Error::LengthMismatch {
                expected: self.points.len(),
                got: self.weights.len(),
            });
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Unnormalized { sum });
        }
        Ok(())
    }
}

/// Optimal coupling together with a dual certificate.
///
/// `source_dual[i] + sink_dual[j] <= cost(i, j)` holds for every pair, with
/// equality wherever the plan carries mass.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub cost: f64,
    pub flows: Vec<(usize, usize, f64)>,
    pub source_dual: Vec<f64>,
    pub sink_dual: Vec<f64>,
}

pub fn wasserstein1(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(optimal_transport(a, b)?.cost)
}

pub fn optimal_transport(a: &PointCloud, b: &PointCloud) -> Result<TransportPlan> {
    a.validate()?;
    b.validate()?;
    let n = a.len();
    let m = b.len();
    let mut cost = Vec::with_capacity(n * m);
    for &p in &a.points {
        for &q in &b.points {
            cost.push((p - q).norm());
        }
    }
    let sa: f64 = a.weights.iter().sum();
    let sb: f64 = b.weights.iter().sum();
    let supply: Vec<f64> = a.weights.iter().map(|w| w / sa).collect();
    let demand: Vec<f64> = b.weights.iter().map(|w| w / sb).collect();
    Ok(Solver::new(n, m, cost, supply, demand).run())
}

struct Solver {
    n: usize,
    m: usize,
    cost: Vec<f64>,
    supply: Vec<f64>,
    demand: Vec<f64>,
    flow: Vec<f64>,
    /// Sources carrying positive flow into each sink.
    inflow: Vec<Vec<usize>>,
    /// Sources, then sinks.
    potential: Vec<f64>,
    dist: Vec<f64>,
    /// Predecessor of each node on the current shortest-path tree.
    pred: Vec<usize>,
    settled: Vec<bool>,
    touched: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl Solver {
    fn new(n: usize, m: usize, cost: Vec<f64>, supply: Vec<f64>, demand: Vec<f64>) -> Self {
        let v = n + m;
        let mut potential = vec![0.0; v];
        for j in 0..m {
            potential[n + j] = (0..n).map(|i| cost[i * m + j]).fold(f64::INFINITY, f64::min);
        }
        Solver {
            n,
            m,
            cost,
            supply,
            demand,
            flow: vec![0.0; n * m],
            inflow: vec![Vec::new(); m],
            potential,
            dist: vec![f64::INFINITY; v],
            pred: vec![NONE; v],
            settled: vec![false; v],
            touched: Vec::new(),
        }
    }

    /// Saturates each sink's cheapest edge where supply remains. These edges
    /// have zero reduced cost, so the partial flow is optimal for its value.
    fn greedy_start(&mut self) {
        let (n, m) = (self.n, self.m);
        for j in 0..m {
            let col_min = self.potential[n + j];
            let Some(i) = (0..n).find(|&i| self.cost[i * m + j] == col_min) else {
                continue;
            };
            let delta = self.supply[i].min(self.demand[j]);
            if delta <= 0.0 {
                continue;
            }
            self.flow[i * m + j] = delta;
            self.inflow[j].push(i);
            self.supply[i] = settle(self.supply[i] - delta);
            self.demand[j] = settle(self.demand[j] - delta);
        }
    }

    /// Tightens the potential of each source with remaining supply and ships
    /// along its cheapest reduced edge when that sink still has demand.
    fn row_reduction(&mut self) {
        let (n, m) = (self.n, self.m);
        for i in 0..n {
            if self.supply[i] <= 0.0 {
                continue;
            }
            let row = &self.cost[i * m..(i + 1) * m];
            let pot = &self.potential[n..];
            let (mut best, mut arg) = (f64::INFINITY, 0);
            for j in 0..m {
                let r = row[j] - pot[j];
                if r < best {
                    best = r;
                    arg = j;
                }
            }
            if self.flow[i * m..(i + 1) * m].iter().all(|&f| f == 0.0) {
                self.potential[i] = -best;
            } else {
                continue;
            }
            let delta = self.supply[i].min(self.demand[arg]);
            if delta > 0.0 {
                self.flow[i * m + arg] = delta;
                self.inflow[arg].push(i);
                self.supply[i] = settle(self.supply[i] - delta);
                self.demand[arg] = settle(self.demand[arg] - delta);
            }
        }
    }

    fn run(mut self) -> TransportPlan {
        self.greedy_start();
        self.row_reduction();
        for root in 0..self.n {
            while self.supply[root] > 0.0 {
                match self.shortest_path(root) {
                    Some(sink) => self.augment(root, sink),
                    None => break,
                }
            }
        }
        let (n, m) = (self.n, self.m);
        let mut flows = Vec::new();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..m {
                let f = self.flow[i * m + j];
                if f > 0.0 {
                    total += f * self.cost[i * m + j];
                    flows.push((i, j, f));
                }
            }
        }
        TransportPlan {
            cost: total,
            flows,
            source_dual: self.potential[..n].iter().map(|p| -p).collect(),
            sink_dual: self.potential[n..].to_vec(),
        }
    }

    fn visit_source(&mut self, i: usize, d: f64) {
        let (n, m) = (self.n, self.m);
        self.settled[i] = true;
        self.dist[i] = d;
        self.touched.push(i);
        let pi = self.potential[i];
        let row = &self.cost[i * m..(i + 1) * m];
        let (dist, pot, settled) = (&mut self.dist[n..], &self.potential[n..], &self.settled[n..]);
        for j in 0..m {
            let nd = d + row[j] + pi - pot[j];
            if nd < dist[j] && !settled[j] {
                dist[j] = nd;
                self.pred[n + j] = i;
            }
        }
    }

    /// Dense Dijkstra on reduced costs from `root` to the nearest sink with
    /// unmet demand; updates the potentials and returns that sink.
    fn shortest_path(&mut self, root: usize) -> Option<usize> {
        let n = self.n;
        self.dist.fill(f64::INFINITY);
        self.pred.fill(NONE);
        self.settled.fill(false);
        self.touched.clear();
        self.visit_source(root, 0.0);
        let found = loop {
            let mut v = NONE;
            let mut best = f64::INFINITY;
            for (j, (&d, &s)) in self.dist[n..].iter().zip(&self.settled[n..]).enumerate() {
                if !s && d < best {
                    best = d;
                    v = j;
                }
            }
            if v == NONE {
                break None;
            }
            self.settled[n + v] = true;
            self.touched.push(n + v);
            if self.demand[v] > 0.0 {
                break Some(v);
            }
            let pv = self.potential[n + v];
            for k in 0..self.inflow[v].len() {
                let i = self.inflow[v][k];
                if self.settled[i] {
                    continue;
                }
                // Reverse edges of the flow have zero reduced cost up to rounding.
                let r = (pv - self.cost[i * self.m + v] - self.potential[i]).max(0.0);
                self.pred[i] = n + v;
                self.visit_source(i, best + r);
            }
        };
        let sink = found?;
        let dt = self.dist[n + sink];
        for p in self.potential.iter_mut() {
            *p += dt;
        }
        for &v in &self.touched {
            self.potential[v] += self.dist[v] - dt;
        }
        Some(sink)
    }

    fn augment(&mut self, root: usize, sink: usize) {
        let (n, m) = (self.n, self.m);
        let mut delta = self.demand[sink].min(self.supply[root]);
        let mut v = n + sink;
        loop {
            // v is a sink reached from source i by a forward edge
            let i = self.pred[v];
            if i == root {
                break;
            }
            let prev = self.pred[i];
            delta = delta.min(self.flow[i * m + (prev - n)]);
            v = prev;
        }
        self.demand[sink] = settle(self.demand[sink] - delta);
        self.supply[root] = settle(self.supply[root] - delta);
        let mut v = n + sink;
        loop {
            let i = self.pred[v];
            let j = v - n;
            let k = i * m + j;
            if self.flow[k] == 0.0 {
                self.inflow[j].push(i);
            }
            self.flow[k] += delta;
            if i == root {
                break;
            }
            let pj = self.pred[i] - n;
            let pk = i * m + pj;
            self.flow[pk] = settle(self.flow[pk] - delta);
            if self.flow[pk] == 0.0 {
                self.inflow[pj].retain(|&s| s != i);
            }
            v = n + pj;
        }
    }
}

fn settle(x: f64) -> f64 {
    if x <= MASS_EPS {
        0.0
    } else {
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec2,
    /// Diagonal covariance entries (variances).
    pub cov_diag: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
}

impl Default for MixtureSpec {
    /// Two equal modes at `+e1` and `-e1` with covariance `diag(0.05, 0.05)`.
    fn default() -> Self {
        let c = |x: f64| MixtureComponent {
            weight: 0.5,
            mean: Vec2::new(x, 0.0),
            cov_diag: [0.05, 0.05],
        };
        MixtureSpec {
            components: vec![c(1.0), c(-1.0)],
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidConfig("mixture has no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if self.components.iter().any(|c| !(c.weight >= 0.0)) || (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidConfig(format!("mixture weights sum to {total}")));
        }
        if self.components.iter().any(|c| !(c.cov_diag[0] > 0.0 && c.cov_diag[1] > 0.0)) {
            return Err(Error::InvalidConfig("mixture covariance must be positive".into()));
        }
        Ok(())
    }
}

/// `n` i.i.d. mixture samples clipped to the box, with uniform weights.
pub fn sample_gaussian_mixture(
    spec: &MixtureSpec,
    n: usize,
    space: &SpaceConfig,
    seed: SeedStream,
) -> Result<PointCloud> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut rng = seed.rng();
    let points = (0..n)
        .map(|_| {
            let mut r: f64 = rng.random();
            let mut comp = spec.components.last().unwrap();
            for c in &spec.components {
                if r < c.weight {
                    comp = c;
                    break;
                }
                r -= c.weight;
            }
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            space.clip_box(Vec2::new(
                comp.mean.x + comp.cov_diag[0].sqrt() * z1,
                comp.mean.y + comp.cov_diag[1].sqrt() * z2,
            ))
        })
        .collect();
    Ok(PointCloud::uniform(points))
}
