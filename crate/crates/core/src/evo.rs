//! Genetic search over loss-coefficient genomes.
//!
//! One generation runs: sort by fitness, pick the fittest as parents, breed
//! `floor(N/2)` children by per-gene convex blending, give every member of
//! the population and every child a `P_m` percent chance of spawning a
//! single-gene mutant, evaluate the newcomers, and spin a roulette wheel over
//! the whole pool to choose the next `N` members. The best candidate always
//! keeps slot 0, so the best loss in the population never gets worse.
//!
//! Randomness comes from ChaCha8 streams keyed by `(seed, generation, role,
//! index)`. Each individual owns its stream, so results do not depend on how
//! fitness evaluations are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::COMPONENT_COUNT;

/// Inclusive per-gene range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct GeneBounds {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for GeneBounds {
    fn from(v: [f64; 2]) -> Self {
        Self { lo: v[0], hi: v[1] }
    }
}

impl From<GeneBounds> for [f64; 2] {
    fn from(b: GeneBounds) -> Self {
        [b.lo, b.hi]
    }
}

impl GeneBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate(0)?;
        Ok(b)
    }

    fn validate(&self, gene: usize) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && 0.0 <= self.lo && self.lo < self.hi) {
            return Err(Error::Config(format!(
                "gene {gene} bounds [{}, {}] must satisfy 0 <= lo < hi",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        rng.gen_range(self.lo..=self.hi)
    }
}

/// Default search box for loss coefficients: every gene in `[0, 2]`.
pub fn default_bounds() -> Vec<GeneBounds> {
    vec![GeneBounds { lo: 0.0, hi: 2.0 }; COMPONENT_COUNT]
}

/// A vector of nonnegative coefficients together with its search box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub weights: Vec<f64>,
    pub bounds: Vec<GeneBounds>,
}

impl Genome {
    pub fn new(weights: Vec<f64>, bounds: Vec<GeneBounds>) -> Result<Self> {
        if weights.len() != bounds.len() {
            return Err(Error::Config(format!(
                "{} weights but {} bounds",
                weights.len(),
                bounds.len()
            )));
        }
        for (i, (w, b)) in weights.iter().zip(&bounds).enumerate() {
            b.validate(i)?;
            if !b.contains(*w) {
                return Err(Error::Config(format!(
                    "gene {i} = {w} outside [{}, {}]",
                    b.lo, b.hi
                )));
            }
        }
        Ok(Self { weights, bounds })
    }

    pub fn random(bounds: &[GeneBounds], rng: &mut impl Rng) -> Self {
        Self {
            weights: bounds.iter().map(|b| b.sample(rng)).collect(),
            bounds: bounds.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn within_bounds(&self) -> bool {
        self.weights
            .iter()
            .zip(&self.bounds)
            .all(|(w, b)| b.contains(*w))
    }
}

/// Engine settings; also the on-disk `evo.json` schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvoConfig {
    pub population: usize,
    pub iterations: usize,
    pub mutation_percent: f64,
    pub parent_fraction: f64,
    pub seed: u64,
    pub bounds: Vec<GeneBounds>,
}

impl EvoConfig {
    /// Population 5, 5 iterations, 10 % mutation.
    pub fn standard(seed: u64) -> Self {
        Self {
            population: 5,
            iterations: 5,
            mutation_percent: 10.0,
            parent_fraction: 0.4,
            seed,
            bounds: default_bounds(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config(format!(
                "population {} must be at least 2",
                self.population
            )));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(0.0..=100.0).contains(&self.mutation_percent) {
            return Err(Error::Config(format!(
                "mutation_percent {} outside [0, 100]",
                self.mutation_percent
            )));
        }
        if !(self.parent_fraction > 0.0 && self.parent_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "parent_fraction {} outside (0, 1]",
                self.parent_fraction
            )));
        }
        if self.bounds.is_empty() {
            return Err(Error::Config("bounds must list at least one gene".into()));
        }
        for (i, b) in self.bounds.iter().enumerate() {
            b.validate(i)?;
        }
        Ok(())
    }

    /// Children bred per generation.
    pub fn offspring_per_generation(&self) -> usize {
        self.population / 2
    }
}

/// How an evaluated genome came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Initial,
    Crossover,
    Mutation,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Initial => "initial",
            Origin::Crossover => "crossover",
            Origin::Mutation => "mutation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub genome: Genome,
    pub loss: f64,
    pub fitness: f64,
    pub generation: usize,
    pub origin: Origin,
}

/// Maps a loss to a positive fitness; lower loss means higher fitness.
pub fn fitness_of(loss: f64) -> Result<f64> {
    if !loss.is_finite() {
        return Err(Error::UndefinedStatistic(format!("loss {loss} is not finite")));
    }
    Ok(1.0 / (1.0 + loss.max(0.0)))
}

/// The fittest `ceil(fraction * N)` records (at least two).
pub fn select_parents(population: &[EvalRecord], fraction: f64) -> Result<&[EvalRecord]> {
    if population.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 individuals to pick parents, have {}",
            population.len()
        )));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("parent fraction {fraction} outside (0, 1]")));
    }
    if population.windows(2).any(|w| w[0].fitness < w[1].fitness) {
        return Err(Error::Config(
            "population must be sorted by fitness, descending".into(),
        ));
    }
    let n = ((fraction * population.len() as f64).ceil() as usize).clamp(2, population.len());
    Ok(&population[..n])
}

/// Per-gene convex blend `alpha * a + (1 - alpha) * b`, fresh `alpha` per gene.
pub fn crossover(a: &Genome, b: &Genome, rng: &mut impl Rng) -> Result<Genome> {
    if a.bounds != b.bounds {
        return Err(Error::Config("parents have different gene bounds".into()));
    }
    let weights = a
        .weights
        .iter()
        .zip(&b.weights)
        .zip(&a.bounds)
        .map(|((x, y), bd)| {
            let alpha: f64 = rng.gen();
            // Convex combination; the clamp only absorbs rounding.
            (alpha * x + (1.0 - alpha) * y).clamp(bd.lo, bd.hi)
        })
        .collect();
    Ok(Genome {
        weights,
        bounds: a.bounds.clone(),
    })
}

/// With probability `percent / 100`, returns a copy with one uniformly chosen
/// gene resampled inside its bounds; otherwise `None`.
pub fn mutate(genome: &Genome, percent: f64, rng: &mut impl Rng) -> Option<Genome> {
    let x = rng.gen::<f64>() * 100.0;
    if x >= percent {
        return None;
    }
    let mut out = genome.clone();
    let gene = rng.gen_range(0..out.len());
    out.weights[gene] = out.bounds[gene].sample(rng);
    Some(out)
}

/// Index of the slot that `r` lands in on a wheel with the given weights.
pub fn roulette_index(fitness: &[f64], r: f64) -> usize {
    let total: f64 = fitness.iter().sum();
    let mut cumulative = 0.0;
    for (k, f) in fitness.iter().enumerate() {
        cumulative += f / total;
        if r <= cumulative {
            return k;
        }
    }
    // r was within rounding of 1.0.
    fitness.len() - 1
}

/// Picks `count` survivors: the best candidate in slot 0, the rest by
/// fitness-proportional draws with replacement.
pub fn roulette_select(
    candidates: &[EvalRecord],
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<EvalRecord>> {
    if candidates.is_empty() {
        return Err(Error::Config("roulette over an empty pool".into()));
    }
    let fitness: Vec<f64> = candidates.iter().map(|c| c.fitness).collect();
    if !(fitness.iter().sum::<f64>() > 0.0) {
        return Err(Error::Config("roulette pool has zero total fitness".into()));
    }
    let best = best_index(candidates);
    let mut out = Vec::with_capacity(count);
    if count > 0 {
        out.push(candidates[best].clone());
    }
    for _ in 1..count {
        let r: f64 = rng.gen();
        out.push(candidates[roulette_index(&fitness, r)].clone());
    }
    Ok(out)
}

/// Lowest loss; ties go to the earliest record.
fn best_index(records: &[EvalRecord]) -> usize {
    let mut best = 0;
    for (i, r) in records.iter().enumerate().skip(1) {
        if r.loss < records[best].loss {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Role {
    Init = 0,
    Crossover = 1,
    Mutation = 2,
    Selection = 3,
}

/// Deterministic per-individual random stream.
fn stream(seed: u64, generation: usize, role: Role, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) | ((role as u64) << 24) | index as u64);
    rng
}

/// Result of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvoOutcome {
    /// Best record ever evaluated.
    pub best: EvalRecord,
    /// Every evaluation, in evaluation order.
    pub history: Vec<EvalRecord>,
    /// Best-ever loss after initialization and after each generation.
    pub best_loss_by_generation: Vec<f64>,
    /// Lowest loss inside the surviving population, same indexing.
    pub population_best_by_generation: Vec<f64>,
}

/// Stateful engine; the population persists between calls to [`Evolver::step`].
#[derive(Debug, Clone)]
pub struct Evolver {
    config: EvoConfig,
    population: Vec<EvalRecord>,
    best: EvalRecord,
    history: Vec<EvalRecord>,
    generation: usize,
    best_by_gen: Vec<f64>,
    pop_best_by_gen: Vec<f64>,
}

fn evaluate_batch<F>(
    genomes: Vec<(Genome, Origin)>,
    generation: usize,
    evaluate: &F,
) -> Result<Vec<EvalRecord>>
where
    F: Fn(&Genome) -> Result<f64> + Sync,
{
    genomes
        .into_par_iter()
        .map(|(genome, origin)| {
            let loss = evaluate(&genome).map_err(|e| Error::Evaluation {
                genome: genome.weights.clone(),
                reason: e.to_string(),
            })?;
            let fitness = fitness_of(loss).map_err(|e| Error::Evaluation {
                genome: genome.weights.clone(),
                reason: e.to_string(),
            })?;
            Ok(EvalRecord {
                genome,
                loss,
                fitness,
                generation,
                origin,
            })
        })
        .collect()
}

impl Evolver {
    /// Draws and evaluates the initial population.
    pub fn new<F>(config: EvoConfig, evaluate: &F) -> Result<Self>
    where
        F: Fn(&Genome) -> Result<f64> + Sync,
    {
        config.validate()?;
        let initial: Vec<(Genome, Origin)> = (0..config.population)
            .map(|k| {
                let mut rng = stream(config.seed, 0, Role::Init, k);
                (Genome::random(&config.bounds, &mut rng), Origin::Initial)
            })
            .collect();
        let population = evaluate_batch(initial, 0, evaluate)?;
        let best = population[best_index(&population)].clone();
        let history = population.clone();
        Ok(Self {
            best_by_gen: vec![best.loss],
            pop_best_by_gen: vec![best.loss],
            config,
            population,
            best,
            history,
            generation: 0,
        })
    }

    pub fn config(&self) -> &EvoConfig {
        &self.config
    }

    pub fn population(&self) -> &[EvalRecord] {
        &self.population
    }

    pub fn best(&self) -> &EvalRecord {
        &self.best
    }

    pub fn history(&self) -> &[EvalRecord] {
        &self.history
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Runs one generation.
    pub fn step<F>(&mut self, evaluate: &F) -> Result<()>
    where
        F: Fn(&Genome) -> Result<f64> + Sync,
    {
        let t = self.generation + 1;
        let cfg = &self.config;

        // Stable sort keeps ties in their current order.
        self.population
            .sort_by(|a, b| b.fitness.total_cmp(&a.fitness));
        let parents = select_parents(&self.population, cfg.parent_fraction)?;

        let mut children = Vec::with_capacity(cfg.offspring_per_generation());
        for k in 0..cfg.offspring_per_generation() {
            let mut rng = stream(cfg.seed, t, Role::Crossover, k);
            let i = rng.gen_range(0..parents.len());
            let mut j = rng.gen_range(0..parents.len() - 1);
            if j >= i {
                j += 1;
            }
            children.push(crossover(&parents[i].genome, &parents[j].genome, &mut rng)?);
        }

        let mut mutants = Vec::new();
        let pool = self
            .population
            .iter()
            .map(|r| &r.genome)
            .chain(children.iter());
        for (k, g) in pool.enumerate() {
            let mut rng = stream(cfg.seed, t, Role::Mutation, k);
            if let Some(m) = mutate(g, cfg.mutation_percent, &mut rng) {
                mutants.push(m);
            }
        }

        let fresh: Vec<(Genome, Origin)> = children
            .into_iter()
            .map(|g| (g, Origin::Crossover))
            .chain(mutants.into_iter().map(|g| (g, Origin::Mutation)))
            .collect();
        let fresh = evaluate_batch(fresh, t, evaluate)?;
        self.history.extend(fresh.iter().cloned());

        let mut candidates = std::mem::take(&mut self.population);
        candidates.extend(fresh);
        let mut rng = stream(cfg.seed, t, Role::Selection, 0);
        self.population = roulette_select(&candidates, cfg.population, &mut rng)?;

        let pool_best = &candidates[best_index(&candidates)];
        if pool_best.loss < self.best.loss {
            self.best = pool_best.clone();
        }
        let pop_best = self.population[best_index(&self.population)].loss;
        let prev_pop_best = *self.pop_best_by_gen.last().expect("initialized");
        assert!(
            pop_best <= prev_pop_best,
            "elitism violated: population best rose from {prev_pop_best} to {pop_best}"
        );
        self.best_by_gen.push(self.best.loss);
        self.pop_best_by_gen.push(pop_best);
        self.generation = t;
        Ok(())
    }

    pub fn outcome(&self) -> EvoOutcome {
        EvoOutcome {
            best: self.best.clone(),
            history: self.history.clone(),
            best_loss_by_generation: self.best_by_gen.clone(),
            population_best_by_generation: self.pop_best_by_gen.clone(),
        }
    }
}

/// Initializes and runs `config.iterations` generations.
pub fn run<F>(config: &EvoConfig, evaluate: F) -> Result<EvoOutcome>
where
    F: Fn(&Genome) -> Result<f64> + Sync,
{
    let mut evolver = Evolver::new(config.clone(), &evaluate)?;
    for _ in 0..config.iterations {
        evolver.step(&evaluate)?;
    }
    Ok(evolver.outcome())
}

/// `loss(g) = sum c_i g_i + sum (g_i - t_i)^2`, a cheap objective with a
/// known grid optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableObjective {
    pub c: Vec<f64>,
    pub t: Vec<f64>,
}

impl SeparableObjective {
    /// Draws `c_i ~ U(0, 1)` and `t_i ~ U(lo_i, hi_i)`.
    pub fn random(bounds: &[GeneBounds], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = bounds.iter().map(|_| rng.gen::<f64>()).collect();
        let t = bounds.iter().map(|b| b.sample(&mut rng)).collect();
        Self { c, t }
    }

    pub fn eval(&self, g: &[f64]) -> f64 {
        g.iter()
            .zip(self.c.iter().zip(&self.t))
            .map(|(g, (c, t))| c * g + (g - t) * (g - t))
            .sum()
    }

    /// Minimum over a `points`-per-gene grid spanning each gene's bounds.
    /// The objective separates, so the full grid search reduces to one
    /// search per gene.
    pub fn grid_optimum(&self, bounds: &[GeneBounds], points: usize) -> f64 {
        assert!(points >= 2);
        bounds
            .iter()
            .zip(self.c.iter().zip(&self.t))
            .map(|(b, (c, t))| {
                (0..points)
                    .map(|k| {
                        let g = b.lo + (b.hi - b.lo) * k as f64 / (points - 1) as f64;
                        c * g + (g - t) * (g - t)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    }
}
