//! Genetic-algorithm estimation of the eight-gene vector
//! `(B, beta, delta, alpha, iota, gamma, V0, D0)` from a virion titer time
//! series.
//!
//! The cost is the natural log of a chi-square-like residual sum on log
//! titers plus a sigmoid penalty on surviving cells at a check time,
//! floored so a perfect fit stays finite. Candidate simulations run in raw
//! particle units. Evaluations are embarrassingly parallel and gathered in
//! population order; selection, crossover and mutation run sequentially on
//! one seeded stream, so results are bit-identical for a fixed seed
//! regardless of worker count.

use crate::integrator::{integrate_at_times, IntegrateError, IntegratorConfig};
use crate::model::{ModelParams, ParamError, State};
use crate::scans::AxisScale;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const GENES: usize = 8;
/// Gene order used by every flattened view.
pub const GENE_NAMES: [&str; GENES] = ["B", "beta", "delta", "alpha", "iota", "gamma", "V0", "D0"];

const FLOOR: f64 = 1e-30;

/// One point in gene space. `v0`/`d0` are raw particle counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    #[serde(rename = "B")]
    pub b: f64,
    pub beta: f64,
    pub delta: f64,
    pub alpha: f64,
    pub iota: f64,
    pub gamma: f64,
    #[serde(rename = "V0")]
    pub v0: f64,
    #[serde(rename = "D0")]
    pub d0: f64,
}

impl Candidate {
    pub fn genes(&self) -> [f64; GENES] {
        [self.b, self.beta, self.delta, self.alpha, self.iota, self.gamma, self.v0, self.d0]
    }

    pub fn from_genes(g: [f64; GENES]) -> Self {
        Candidate { b: g[0], beta: g[1], delta: g[2], alpha: g[3], iota: g[4], gamma: g[5], v0: g[6], d0: g[7] }
    }

    fn params(&self) -> Result<ModelParams, ParamError> {
        ModelParams::new(self.b, self.beta, self.delta, self.iota, self.alpha)?.with_decay(self.gamma)
    }
}

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("need at least 2 data points, got {0}")]
    TooFew(usize),
    #[error("times must be strictly increasing (violated at row {0})")]
    TimeOrder(usize),
    #[error("titer at row {0} must be finite and > 0, got {1}")]
    Titer(usize, f64),
    #[error("time at row {0} must be finite and >= 0, got {1}")]
    Time(usize, f64),
    #[error("scale must be finite and > 0, got {0}")]
    Scale(f64),
    #[error("initial cell count must be finite and > 0, got {0}")]
    Cells(f64),
}

/// A titer time series plus the metadata needed to place it in raw particle
/// units: `scale` converts both titers and the cell count, so the simulated
/// monolayer holds `cells * scale` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset", into = "RawDataset")]
pub struct Dataset {
    points: Vec<(f64, f64)>,
    moi_label: f64,
    scale: f64,
    cells: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    points: Vec<(f64, f64)>,
    moi_label: f64,
    #[serde(default = "one")]
    scale: f64,
    #[serde(default = "one", rename = "C0")]
    cells: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawDataset> for Dataset {
    type Error = DatasetError;
    fn try_from(r: RawDataset) -> Result<Self, DatasetError> {
        Dataset::new(r.points, r.moi_label, r.scale, r.cells)
    }
}

impl From<Dataset> for RawDataset {
    fn from(d: Dataset) -> Self {
        RawDataset { points: d.points, moi_label: d.moi_label, scale: d.scale, cells: d.cells }
    }
}

impl Dataset {
    /// `points` are `(t hours, titer)` rows in strictly increasing time with
    /// positive titers (their log is taken).
    pub fn new(points: Vec<(f64, f64)>, moi_label: f64, scale: f64, cells: f64) -> Result<Self, DatasetError> {
        if points.len() < 2 {
            return Err(DatasetError::TooFew(points.len()));
        }
        for (i, &(t, v)) in points.iter().enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(DatasetError::Time(i, t));
            }
            if i > 0 && t <= points[i - 1].0 {
                return Err(DatasetError::TimeOrder(i));
            }
            if !v.is_finite() || v <= 0.0 {
                return Err(DatasetError::Titer(i, v));
            }
        }
        if !scale.is_finite() || scale <= 0.0 {
            return Err(DatasetError::Scale(scale));
        }
        if !cells.is_finite() || cells <= 0.0 {
            return Err(DatasetError::Cells(cells));
        }
        Ok(Dataset { points, moi_label, scale, cells })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn moi_label(&self) -> f64 {
        self.moi_label
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn cells(&self) -> f64 {
        self.cells
    }
}

/// Sigmoid penalty on the log of surviving cells at `t_check`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Penalty {
    pub k: f64,
    pub x_star: f64,
    pub p: f64,
    pub t_check: f64,
}

impl Default for Penalty {
    fn default() -> Self {
        Penalty { k: 5.0, x_star: -1.0, p: 10.0, t_check: 65.0 }
    }
}

impl Penalty {
    /// `p / (1 + exp(-k (x - x_star)))`: 0 far below `x_star`, `p/2` at it,
    /// `p` far above.
    pub fn sigmoid(&self, x: f64) -> f64 {
        self.p / (1.0 + (-self.k * (x - self.x_star)).exp())
    }
}

/// Sampling range of one gene. Log-scaled genes are drawn uniformly in log
/// space; values are clamped back into `[min, max]` so rounding can never
/// escape the range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneRange {
    pub min: f64,
    pub max: f64,
    pub scale: AxisScale,
}

impl GeneRange {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let v = match self.scale {
            AxisScale::Linear => rng.gen_range(self.min..=self.max),
            AxisScale::Log => rng.gen_range(self.min.ln()..=self.max.ln()).exp(),
        };
        v.clamp(self.min, self.max)
    }

    fn valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && 0.0 < self.min && self.min < self.max
    }
}

/// Per-gene search ranges. The defaults are the published ranges for the
/// MOI 1.8 passage experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ranges {
    #[serde(rename = "B")]
    pub b: GeneRange,
    pub beta: GeneRange,
    pub delta: GeneRange,
    pub alpha: GeneRange,
    pub iota: GeneRange,
    pub gamma: GeneRange,
    #[serde(rename = "V0")]
    pub v0: GeneRange,
    #[serde(rename = "D0")]
    pub d0: GeneRange,
}

impl Default for Ranges {
    fn default() -> Self {
        let log = |min, max| GeneRange { min, max, scale: AxisScale::Log };
        let lin = |min, max| GeneRange { min, max, scale: AxisScale::Linear };
        Ranges {
            b: log(10.0, 1e4),
            beta: log(1e-8, 1.0),
            delta: lin(1.0, 200.0),
            alpha: log(1e-3, 10.0),
            iota: log(1e-5, 1.0),
            gamma: lin(0.01, 0.10),
            v0: log(1e5, 1e7),
            d0: log(1.0, 1e7),
        }
    }
}

impl Ranges {
    fn gene(&self, i: usize) -> &GeneRange {
        [&self.b, &self.beta, &self.delta, &self.alpha, &self.iota, &self.gamma, &self.v0, &self.d0][i]
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Candidate {
        let mut g = [0.0; GENES];
        for (i, slot) in g.iter_mut().enumerate() {
            *slot = self.gene(i).sample(rng);
        }
        Candidate::from_genes(g)
    }

    pub fn contains(&self, c: &Candidate) -> bool {
        c.genes().iter().enumerate().all(|(i, &v)| {
            let r = self.gene(i);
            (r.min..=r.max).contains(&v)
        })
    }
}

/// Integrator profile for candidate evaluation. Raw particle units make the
/// kinetics stiff (absorption rates reach iota*C0 ~ 1e3/h), so this trades
/// accuracy far beyond the measurement noise for speed, clamps cell
/// compartments at a tenth of a cell (above the absolute-error noise floor,
/// which would otherwise leave a dormant stiff mode oscillating around zero
/// forever), and cuts runaway candidates off at the step cap rather than
/// integrating them to the bitter end; they are culled with an infinite
/// cost.
pub fn fit_integrator_defaults() -> IntegratorConfig {
    IntegratorConfig {
        rel_tol: 1e-4,
        abs_tol: 1e-2,
        extinction_threshold: 0.1,
        max_steps: 6_000,
        ..IntegratorConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub ranges: Ranges,
    pub population: usize,
    pub generations: usize,
    pub elite_frac: f64,
    pub crossover_frac: f64,
    pub mutation_frac: f64,
    pub penalty: Penalty,
    pub batches: usize,
    pub rng_seed: u64,
    pub integrator: IntegratorConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            ranges: Ranges::default(),
            population: 600,
            generations: 10_000,
            elite_frac: 0.05,
            crossover_frac: 0.80,
            mutation_frac: 0.15,
            penalty: Penalty::default(),
            batches: 5,
            rng_seed: 0,
            integrator: fit_integrator_defaults(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("selection fractions sum to {0}, expected 1")]
    Fractions(f64),
    #[error("population {population} cannot be split into elite {elite} + crossover {crossover} + mutation strata")]
    Strata { population: usize, elite: usize, crossover: usize },
    #[error("generations must be >= 1")]
    Generations,
    #[error("gene {0} has an invalid range (need 0 < min < max, both finite)")]
    Range(&'static str),
    #[error("penalty shape must be finite with k > 0, p > 0, t_check >= 0")]
    Penalty,
    #[error("batch count {0} must be >= 2")]
    Batches(usize),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

impl FitConfig {
    /// (elite, crossover) head counts; the remainder of the population is
    /// resampled each generation.
    fn strata(&self) -> (usize, usize) {
        let n = self.population as f64;
        (((self.elite_frac * n).round()) as usize, ((self.crossover_frac * n).round()) as usize)
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let sum = self.elite_frac + self.crossover_frac + self.mutation_frac;
        if !((sum - 1.0).abs() <= 1e-9) {
            return Err(FitError::Fractions(sum));
        }
        let (elite, crossover) = self.strata();
        if elite == 0 || crossover == 0 || elite + crossover > self.population {
            return Err(FitError::Strata { population: self.population, elite, crossover });
        }
        if self.generations == 0 {
            return Err(FitError::Generations);
        }
        for (i, name) in GENE_NAMES.iter().enumerate() {
            if !self.ranges.gene(i).valid() {
                return Err(FitError::Range(name));
            }
        }
        let pen = &self.penalty;
        if !(pen.k > 0.0 && pen.p > 0.0 && pen.t_check >= 0.0)
            || ![pen.k, pen.x_star, pen.p, pen.t_check].iter().all(|x| x.is_finite())
        {
            return Err(FitError::Penalty);
        }
        self.integrator.validate()?;
        Ok(())
    }
}

/// Cost of one candidate against the dataset:
/// `ln( sum_i ln(V_i/Vhat_i)^2 + sigmoid(ln(surviving cell fraction at t_check)) )`.
/// The fraction is total cells over the initial monolayer, so the penalty
/// midpoint sits at ~37% survival in any unit system; log arguments are
/// floored at 1e-30, which keeps a perfect fit with a dead monolayer finite
/// at `ln(sigmoid(ln 1e-30))`. Candidates whose simulation fails (invalid
/// parameters, step-cap overrun, non-finite state) or produces a
/// non-positive predicted titer cost +inf and are culled by selection.
pub fn fit_cost(candidate: &Candidate, dataset: &Dataset, penalty: &Penalty, integ: &IntegratorConfig) -> f64 {
    let Ok(p) = candidate.params() else { return f64::INFINITY };
    let monolayer = dataset.cells * dataset.scale;
    let state0 = State {
        cells: monolayer,
        cells_v: 0.0,
        cells_d: 0.0,
        cells_dv: 0.0,
        virions: candidate.v0,
        dvgs: candidate.d0,
    };
    let mut times: Vec<f64> = dataset.points.iter().map(|&(t, _)| t).collect();
    let pos = times.partition_point(|t| *t < penalty.t_check);
    if times.get(pos) != Some(&penalty.t_check) {
        times.insert(pos, penalty.t_check);
    }
    let Ok(traj) = integrate_at_times(&p, &state0, integ, &times) else { return f64::INFINITY };

    let mut residual_sum = 0.0;
    let mut cells_at_check = f64::NAN;
    let mut row = 0;
    for sample in &traj.samples {
        let s = &sample.state;
        if sample.t == penalty.t_check {
            cells_at_check = s.cells + s.cells_v + s.cells_d + s.cells_dv;
        }
        if row < dataset.points.len() && sample.t == dataset.points[row].0 {
            let vhat = s.virions;
            if !(vhat > 0.0) {
                return f64::INFINITY;
            }
            let r = (dataset.points[row].1 * dataset.scale / vhat).ln();
            residual_sum += r * r;
            row += 1;
        }
    }
    debug_assert_eq!(row, dataset.points.len());
    debug_assert!(cells_at_check >= 0.0);
    let pen = penalty.sigmoid((cells_at_check / monolayer).max(FLOOR).ln());
    let arg = residual_sum + pen;
    // pen > 0 for every reachable state, so arg = 0 needs pen to underflow;
    // guard anyway rather than hand selection a -inf
    if arg > 0.0 { arg.ln() } else { FLOOR.ln() }
}

/// Per-generation population statistics. `mean` averages finite costs only
/// (culled candidates would otherwise poison it); `min` is exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenStat {
    pub mean: f64,
    pub min: f64,
}

/// Cross-batch spread of the winning candidates, keyed like [`GENE_NAMES`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchStats {
    pub winners: Vec<Candidate>,
    pub costs: Vec<f64>,
    /// Per-batch generation history, one entry per batch in seed order.
    pub histories: Vec<Vec<GenStat>>,
    pub mean: [f64; GENES],
    /// Sample standard deviation (n-1 denominator) across batch winners.
    pub std: [f64; GENES],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub best: Candidate,
    pub cost: f64,
    pub history: Vec<GenStat>,
    pub batch_stats: Option<BatchStats>,
}

fn ranked(costs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..costs.len()).collect();
    idx.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    idx
}

fn gene_bits(c: &Candidate) -> [u64; GENES] {
    let g = c.genes();
    let mut k = [0u64; GENES];
    for i in 0..GENES {
        k[i] = g[i].to_bits();
    }
    k
}

/// Evaluate a population slice through an exact memo cache. Converged
/// populations are full of bitwise-identical candidates, so only the unique
/// misses hit the integrator (in parallel, gathered in first-seen order —
/// the result is independent of worker count because the cost is a pure
/// function of the genes).
fn eval_into(
    pop: &[Candidate],
    costs: &mut [f64],
    cache: &mut std::collections::HashMap<[u64; GENES], f64>,
    dataset: &Dataset,
    cfg: &FitConfig,
) {
    if cache.len() > 2_000_000 {
        cache.clear(); // memory valve; costs are recomputable
    }
    let mut misses: Vec<Candidate> = Vec::new();
    for c in pop {
        if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(gene_bits(c)) {
            e.insert(f64::NAN); // claimed; filled below
            misses.push(*c);
        }
    }
    let fresh: Vec<f64> = misses
        .par_iter()
        .map(|c| fit_cost(c, dataset, &cfg.penalty, &cfg.integrator))
        .collect();
    for (c, v) in misses.iter().zip(fresh) {
        cache.insert(gene_bits(c), v);
    }
    for (slot, c) in costs.iter_mut().zip(pop) {
        *slot = cache[&gene_bits(c)];
    }
}

fn run_ga(dataset: &Dataset, cfg: &FitConfig, rng: &mut ChaCha8Rng) -> FitResult {
    let (n_elite, n_cross) = cfg.strata();
    let stratum = n_elite + n_cross; // crossover parents come from here
    let mut cache = std::collections::HashMap::new();

    let mut pop: Vec<Candidate> = (0..cfg.population).map(|_| cfg.ranges.sample(rng)).collect();
    let mut costs = vec![f64::INFINITY; cfg.population];
    eval_into(&pop, &mut costs, &mut cache, dataset, cfg);

    let mut history = Vec::with_capacity(cfg.generations);
    let mut order = ranked(&costs);
    for gen in 0..cfg.generations {
        let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
        history.push(GenStat {
            mean: finite.iter().sum::<f64>() / finite.len() as f64,
            min: costs[order[0]],
        });
        if gen + 1 == cfg.generations {
            break;
        }

        let mut next = Vec::with_capacity(cfg.population);
        let mut next_costs = Vec::with_capacity(cfg.population);
        for &i in &order[..n_elite] {
            next.push(pop[i]);
            next_costs.push(costs[i]); // evaluation is pure; reuse verbatim
        }
        for _ in 0..n_cross {
            let pa = pop[order[rng.gen_range(0..stratum)]].genes();
            let pb = pop[order[rng.gen_range(0..stratum)]].genes();
            let mut g = [0.0; GENES];
            for (k, slot) in g.iter_mut().enumerate() {
                // Blend-with-expansion in the gene's own scale: each child gene
                // is uniform on the parents' interval widened by half its span
                // on both sides, clamped to the box. Children can land between
                // the parents (walking connected valleys) or beyond them
                // (keeping the population from contracting onto an early
                // leader); a pure convex blend stalls within a few hundred
                // generations.
                let range = cfg.ranges.gene(k);
                let u: f64 = rng.gen();
                let blx = |a: f64, b: f64, lo: f64, hi: f64| {
                    let w = (b - a).abs();
                    (a.min(b) - 0.5 * w + u * 2.0 * w).clamp(lo, hi)
                };
                *slot = match range.scale {
                    AxisScale::Linear => blx(pa[k], pb[k], range.min, range.max),
                    AxisScale::Log => {
                        blx(pa[k].ln(), pb[k].ln(), range.min.ln(), range.max.ln()).exp()
                    }
                };
            }
            next.push(Candidate::from_genes(g));
            next_costs.push(f64::INFINITY);
        }
        for &i in &order[stratum..] {
            // The worst stratum is mutated in place rather than replaced:
            // once the population has converged (when blending degenerates
            // to cloning) it is full of near-champion copies, so jitter
            // turns into local refinement; replacement-by-redraw would
            // leave the run frozen at whatever basin selection found first.
            // Two step scales: coarse mutants (5% of the gene span, plus
            // occasional fresh gene redraws) keep exploring, fine mutants
            // (0.5%, coherent across genes) walk narrow correlated valleys
            // that coarse steps overshoot.
            let coarse = rng.gen::<f64>() < 0.5;
            let width = if coarse { 0.05 } else { 0.005 };
            let mut g = pop[i].genes();
            for (k, slot) in g.iter_mut().enumerate() {
                let range = cfg.ranges.gene(k);
                if coarse && rng.gen::<f64>() < 0.1 {
                    *slot = range.sample(rng);
                    continue;
                }
                let u: f64 = rng.gen_range(-1.0..=1.0);
                *slot = match range.scale {
                    AxisScale::Linear => {
                        (*slot + u * width * (range.max - range.min)).clamp(range.min, range.max)
                    }
                    AxisScale::Log => (slot.ln()
                        + u * width * (range.max.ln() - range.min.ln()))
                    .exp()
                    .clamp(range.min, range.max),
                };
            }
            next.push(Candidate::from_genes(g));
            next_costs.push(f64::INFINITY);
        }

        let mut fresh = vec![f64::INFINITY; cfg.population - n_elite];
        eval_into(&next[n_elite..], &mut fresh, &mut cache, dataset, cfg);
        next_costs[n_elite..].copy_from_slice(&fresh);

        pop = next;
        costs = next_costs;
        order = ranked(&costs);
    }

    FitResult { best: pop[order[0]], cost: costs[order[0]], history, batch_stats: None }
}

/// Single GA run, deterministic for a fixed `cfg.rng_seed`.
pub fn ga_fit(dataset: &Dataset, cfg: &FitConfig) -> Result<FitResult, FitError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    Ok(run_ga(dataset, cfg, &mut rng))
}

/// `cfg.batches` independent GA runs with seeds drawn from one master
/// stream; reports the overall winner plus per-gene spread across batch
/// winners.
pub fn batch_fit(dataset: &Dataset, cfg: &FitConfig) -> Result<FitResult, FitError> {
    cfg.validate()?;
    if cfg.batches < 2 {
        return Err(FitError::Batches(cfg.batches));
    }
    let mut master = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let seeds: Vec<u64> = (0..cfg.batches).map(|_| master.gen()).collect();
    let runs: Vec<FitResult> = seeds
        .iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            run_ga(dataset, cfg, &mut rng)
        })
        .collect();

    let winners: Vec<Candidate> = runs.iter().map(|r| r.best).collect();
    let costs: Vec<f64> = runs.iter().map(|r| r.cost).collect();
    let n = winners.len() as f64;
    let mut mean = [0.0; GENES];
    let mut std = [0.0; GENES];
    for i in 0..GENES {
        let vals: Vec<f64> = winners.iter().map(|w| w.genes()[i]).collect();
        mean[i] = vals.iter().sum::<f64>() / n;
        std[i] = (vals.iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    }
    let champion = ranked(&costs)[0];
    let histories: Vec<Vec<GenStat>> = runs.iter().map(|r| r.history.clone()).collect();
    Ok(FitResult {
        best: runs[champion].best,
        cost: runs[champion].cost,
        history: runs[champion].history.clone(),
        batch_stats: Some(BatchStats { winners, costs, histories, mean, std }),
    })
}
