//! Real-coded GA over `(Kp, Ki)`.
//!
//! Fitness is the sample average of the loop cost over `M` network seeds
//! that stay fixed for the whole run (common random numbers), so two
//! evaluations of the same gains agree bitwise and elitism makes the
//! per-generation best monotone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::controller::PiGains;
use crate::error::{ensure, ConfigError};
use crate::objective::{score_run, ObjectiveWeights};
use crate::plant::PlantParams;
use crate::sim::{run_closed_loop, SimConfig};

const STREAM_GA: u64 = 10;
const STREAM_EVAL_SEEDS: u64 = 11;
const STREAM_VALIDATION_SEEDS: u64 = 12;

/// Half-width extension of the blend-crossover interval (BLX-0.5).
const BLEND_ALPHA: f64 = 0.5;
/// Per-gene mutation probability (one over the number of genes).
const GENE_MUTATION_PROB: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainBounds {
    pub kp_min: f64,
    pub kp_max: f64,
    pub ki_min: f64,
    pub ki_max: f64,
}

impl Default for GainBounds {
    fn default() -> Self {
        Self {
            kp_min: 0.0,
            kp_max: 2.0,
            ki_min: 0.0,
            ki_max: 2.0,
        }
    }
}

impl GainBounds {
    fn ranges(&self) -> [(f64, f64); 2] {
        [(self.kp_min, self.kp_max), (self.ki_min, self.ki_max)]
    }

    pub fn contains(&self, g: &PiGains) -> bool {
        (self.kp_min..=self.kp_max).contains(&g.kp) && (self.ki_min..=self.ki_max).contains(&g.ki)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub pop_size: usize,
    pub generations: usize,
    pub bounds: GainBounds,
    pub crossover_prob: f64,
    /// Gaussian mutation standard deviation as a fraction of each gain range.
    pub mutation_std: f64,
    pub elitism_count: usize,
    /// Network seeds averaged per fitness evaluation.
    pub realizations: usize,
    pub master_seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            pop_size: 20,
            generations: 30,
            bounds: GainBounds::default(),
            crossover_prob: 0.9,
            mutation_std: 0.1,
            elitism_count: 2,
            realizations: 4,
            master_seed: 2011,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.pop_size >= 2, "ga.pop_size", "must be >= 2")?;
        ensure(self.elitism_count >= 1, "ga.elitism_count", "must be >= 1")?;
        ensure(
            self.elitism_count <= self.pop_size,
            "ga.elitism_count",
            "must not exceed pop_size",
        )?;
        ensure(self.realizations >= 1, "ga.realizations", "must be >= 1")?;
        ensure(
            (0.0..=1.0).contains(&self.crossover_prob),
            "ga.crossover_prob",
            "must lie in [0, 1]",
        )?;
        ensure(
            self.mutation_std.is_finite() && self.mutation_std >= 0.0,
            "ga.mutation_std",
            "must be finite and >= 0",
        )?;
        for (name, (lo, hi)) in ["kp", "ki"].iter().zip(self.bounds.ranges()) {
            ensure(
                lo.is_finite() && hi.is_finite() && lo < hi,
                &format!("ga.bounds.{name}_min"),
                format!("bounds must be finite with min < max, got [{lo}, {hi}]"),
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub best_j: f64,
    pub mean_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best_gains: PiGains,
    pub best_j: f64,
    /// Generation 0 (the random initial population) first.
    pub history: Vec<GenerationStats>,
    pub eval_seeds: Vec<u64>,
}

/// `count` seeds from an independent ChaCha stream of `master`.
pub fn derive_seeds(master: u64, stream: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    (0..count).map(|_| rng.random()).collect()
}

/// The common-random-number seeds a tune run evaluates against.
pub fn eval_seeds(ga: &GaConfig) -> Vec<u64> {
    derive_seeds(ga.master_seed, STREAM_EVAL_SEEDS, ga.realizations)
}

/// Fresh seeds, disjoint in stream from the training ones, for
/// out-of-sample scoring of tuned gains.
pub fn validation_seeds(master_seed: u64, count: usize) -> Vec<u64> {
    derive_seeds(master_seed, STREAM_VALIDATION_SEEDS, count)
}

/// Mean loop cost of `gains` over the given network seeds.
pub fn evaluate_fitness(
    gains: &PiGains,
    plant: &PlantParams,
    chan_cfg: &ChannelConfig,
    sim: &SimConfig,
    w: &ObjectiveWeights,
    seeds: &[u64],
) -> Result<f64, ConfigError> {
    w.validate()?;
    ensure(!seeds.is_empty(), "ga.realizations", "at least one evaluation seed is required")?;
    let mut total = 0.0;
    for &seed in seeds {
        let run = run_closed_loop(plant, gains, chan_cfg, &SimConfig { seed, ..*sim })?;
        total += score_run(&run, sim.horizon, w).expect("a validated sim has at least one row");
    }
    Ok(total / seeds.len() as f64)
}

#[derive(Debug, Clone, Copy)]
struct Individual {
    genes: [f64; 2],
    fitness: f64,
}

impl Individual {
    fn gains(&self) -> PiGains {
        PiGains::new(self.genes[0], self.genes[1])
    }
}

fn evaluate_all<F>(genes: Vec<[f64; 2]>, fitness: &F) -> Vec<Individual>
where
    F: Fn(&PiGains) -> f64 + Sync,
{
    // collect() keeps index order, so results do not depend on scheduling
    genes
        .into_par_iter()
        .map(|genes| Individual {
            genes,
            fitness: fitness(&PiGains::new(genes[0], genes[1])),
        })
        .collect()
}

fn stats(pop: &[Individual]) -> GenerationStats {
    let best_j = pop.iter().map(|i| i.fitness).fold(f64::INFINITY, f64::min);
    let mean_j = pop.iter().map(|i| i.fitness).sum::<f64>() / pop.len() as f64;
    GenerationStats { best_j, mean_j }
}

fn tournament<'a>(pop: &'a [Individual], rng: &mut ChaCha8Rng) -> &'a Individual {
    let a = &pop[rng.random_range(0..pop.len())];
    let b = &pop[rng.random_range(0..pop.len())];
    if b.fitness < a.fitness {
        b
    } else {
        a
    }
}

/// Minimizes an arbitrary fitness over the configured gain box.
///
/// `ga_tune` plugs the loop simulator in here; tests plug in closed-form
/// surrogates. Selection is binary tournament, recombination is BLX-0.5
/// blend crossover, mutation is clipped Gaussian, and the best
/// `elitism_count` individuals survive unchanged.
pub fn ga_minimize<F>(cfg: &GaConfig, fitness: F) -> Result<TuneResult, ConfigError>
where
    F: Fn(&PiGains) -> f64 + Sync,
{
    cfg.validate()?;
    let ranges = cfg.bounds.ranges();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    rng.set_stream(STREAM_GA);

    let initial: Vec<[f64; 2]> = (0..cfg.pop_size)
        .map(|_| ranges.map(|(lo, hi)| rng.random_range(lo..=hi)))
        .collect();
    let mut pop = evaluate_all(initial, &fitness);
    let mut history = vec![stats(&pop)];

    let clip = |genes: [f64; 2]| -> [f64; 2] {
        let mut out = genes;
        for (g, (lo, hi)) in out.iter_mut().zip(ranges) {
            *g = g.clamp(lo, hi);
        }
        out
    };
    let mutators: Vec<Normal<f64>> = ranges
        .iter()
        .map(|(lo, hi)| Normal::new(0.0, cfg.mutation_std * (hi - lo)).expect("finite std"))
        .collect();

    for _ in 0..cfg.generations {
        // stable: equal fitness keeps the earlier index first
        pop.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
        let elites: Vec<Individual> = pop[..cfg.elitism_count].to_vec();

        let mut offspring: Vec<[f64; 2]> = Vec::with_capacity(cfg.pop_size - cfg.elitism_count);
        while offspring.len() < cfg.pop_size - cfg.elitism_count {
            let p1 = tournament(&pop, &mut rng).genes;
            let p2 = tournament(&pop, &mut rng).genes;
            let (mut c1, mut c2) = (p1, p2);
            if rng.random::<f64>() < cfg.crossover_prob {
                for i in 0..2 {
                    let (lo, hi) = (p1[i].min(p2[i]), p1[i].max(p2[i]));
                    let ext = BLEND_ALPHA * (hi - lo);
                    c1[i] = rng.random_range(lo - ext..=hi + ext);
                    c2[i] = rng.random_range(lo - ext..=hi + ext);
                }
            }
            for child in [&mut c1, &mut c2] {
                for (g, m) in child.iter_mut().zip(&mutators) {
                    if rng.random::<f64>() < GENE_MUTATION_PROB {
                        *g += m.sample(&mut rng);
                    }
                }
            }
            offspring.push(clip(c1));
            if offspring.len() < cfg.pop_size - cfg.elitism_count {
                offspring.push(clip(c2));
            }
        }

        let mut next = elites;
        next.extend(evaluate_all(offspring, &fitness));
        pop = next;
        history.push(stats(&pop));
    }

    let best = pop
        .iter()
        .min_by(|a, b| a.fitness.total_cmp(&b.fitness))
        .expect("population is never empty");
    Ok(TuneResult {
        best_gains: best.gains(),
        best_j: best.fitness,
        history,
        eval_seeds: Vec::new(),
    })
}

/// Tunes PI gains for the loop against `M` fixed network realizations.
pub fn ga_tune(
    plant: &PlantParams,
    chan_cfg: &ChannelConfig,
    sim: &SimConfig,
    w: &ObjectiveWeights,
    ga: &GaConfig,
) -> Result<TuneResult, ConfigError> {
    ga.validate()?;
    w.validate()?;
    chan_cfg.validate()?;
    sim.validate()?;
    plant.validate_for_tick(sim.tick())?;

    let seeds = eval_seeds(ga);
    let fitness = |g: &PiGains| {
        evaluate_fitness(g, plant, chan_cfg, sim, w, &seeds).expect("configs validated up front")
    };
    let mut result = ga_minimize(ga, fitness)?;
    result.eval_seeds = seeds;
    Ok(result)
}
