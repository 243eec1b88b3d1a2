//! Genetic search over training hyperparameters and the fused-feature mask.
//!
//! One chromosome carries both: learning rate, batch size, conv depth,
//! base filter count, dense width and a 46-bit feature mask. Fitness is the
//! mean k-fold validation variety accuracy of a network built from the genome.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FEATURE_COUNT;
use crate::neuralmodel::{kfold_cv, ConvBlock, ModelConfig, TrainingSample};
use crate::seed;

pub const LR_LOG10_RANGE: (f64, f64) = (-4.0, -1.0);
pub const BATCH_SIZES: [usize; 4] = [8, 16, 32, 64];
pub const CONV_BLOCKS: [usize; 3] = [1, 2, 3];
pub const FILTER_BASES: [usize; 3] = [4, 8, 16];
pub const DENSE_WIDTHS: [usize; 3] = [32, 64, 128];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Genome {
    pub lr_log10: f64,
    pub batch_size: usize,
    pub conv_blocks: usize,
    pub filters_base: usize,
    pub dense_width: usize,
    pub feature_mask: Vec<bool>,
}

/// Hashable identity of a genome (the learning rate by bit pattern).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GenomeKey {
    lr_bits: u64,
    batch_size: usize,
    conv_blocks: usize,
    filters_base: usize,
    dense_width: usize,
    mask: u64,
}

fn pick<T: Copy>(options: &[T], rng: &mut ChaCha8Rng) -> T {
    options[rng.random_range(0..options.len())]
}

fn random_lr(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(LR_LOG10_RANGE.0..=LR_LOG10_RANGE.1)
}

fn random_mask(rng: &mut ChaCha8Rng) -> Vec<bool> {
    loop {
        let mask: Vec<bool> = (0..FEATURE_COUNT).map(|_| rng.random::<bool>()).collect();
        if mask.iter().any(|&b| b) {
            return mask;
        }
    }
}

/// Uniform over every gene domain; the mask is never all-zero.
pub fn random_genome(seed_value: u64) -> Genome {
    let mut rng = seed::rng(seed_value);
    Genome {
        lr_log10: random_lr(&mut rng),
        batch_size: pick(&BATCH_SIZES, &mut rng),
        conv_blocks: pick(&CONV_BLOCKS, &mut rng),
        filters_base: pick(&FILTER_BASES, &mut rng),
        dense_width: pick(&DENSE_WIDTHS, &mut rng),
        feature_mask: random_mask(&mut rng),
    }
}

impl Genome {
    pub fn key(&self) -> GenomeKey {
        let mask = self
            .feature_mask
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &b)| acc | (u64::from(b) << i));
        GenomeKey {
            lr_bits: self.lr_log10.to_bits(),
            batch_size: self.batch_size,
            conv_blocks: self.conv_blocks,
            filters_base: self.filters_base,
            dense_width: self.dense_width,
            mask,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGaConfig(m));
        let (lo, hi) = LR_LOG10_RANGE;
        if !(lo..=hi).contains(&self.lr_log10) {
            return bad(format!("lr_log10 {} outside [{lo}, {hi}]", self.lr_log10));
        }
        if !BATCH_SIZES.contains(&self.batch_size) {
            return bad(format!("batch_size {} not in {BATCH_SIZES:?}", self.batch_size));
        }
        if !CONV_BLOCKS.contains(&self.conv_blocks) {
            return bad(format!("conv_blocks {} not in {CONV_BLOCKS:?}", self.conv_blocks));
        }
        if !FILTER_BASES.contains(&self.filters_base) {
            return bad(format!("filters_base {} not in {FILTER_BASES:?}", self.filters_base));
        }
        if !DENSE_WIDTHS.contains(&self.dense_width) {
            return bad(format!("dense_width {} not in {DENSE_WIDTHS:?}", self.dense_width));
        }
        if self.feature_mask.len() != FEATURE_COUNT {
            return bad(format!("feature_mask has {} bits, expected {FEATURE_COUNT}", self.feature_mask.len()));
        }
        if !self.feature_mask.iter().any(|&b| b) {
            return bad("feature_mask selects no feature".into());
        }
        Ok(())
    }

    pub fn learning_rate(&self) -> f64 {
        10f64.powf(self.lr_log10)
    }

    /// `base` with this genome's hyperparameters; block `i` has
    /// `filters_base * 2^i` 3×3 filters.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            learning_rate: self.learning_rate(),
            batch_size: self.batch_size,
            conv_blocks: (0..self.conv_blocks)
                .map(|i| ConvBlock {
                    filters: self.filters_base << i,
                    kernel: 3,
                })
                .collect(),
            dense_widths: vec![self.dense_width],
            feature_mask: Some(self.feature_mask.clone()),
            ..base.clone()
        }
    }

    pub fn mask_string(&self) -> String {
        self.feature_mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism_count: usize,
    /// Folds per fitness evaluation.
    pub k: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 8,
            generations: 5,
            tournament_size: 3,
            crossover_rate: 0.9,
            mutation_rate: 0.05,
            elitism_count: 1,
            k: 3,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGaConfig(m));
        if self.population_size < 4 {
            return bad(format!("population_size {} must be at least 4", self.population_size));
        }
        if self.generations == 0 {
            return bad("generations must be at least 1".into());
        }
        if self.elitism_count >= self.population_size {
            return bad(format!(
                "elitism_count {} must be below population_size {}",
                self.elitism_count, self.population_size
            ));
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return bad(format!("tournament_size {} must lie in [1, population_size]", self.tournament_size));
        }
        for (name, v) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.k < 2 {
            return bad(format!("k {} must be at least 2", self.k));
        }
        Ok(())
    }
}

/// Anything that scores a genome; higher is better.
pub trait Fitness: Sync {
    fn evaluate(&self, genome: &Genome) -> Result<f64>;

    /// Identifies the data and protocol behind the scores, so cached values
    /// are never reused across datasets or fold counts.
    fn context(&self) -> u64;
}

/// Mean k-fold validation variety accuracy.
pub struct CvFitness<'a> {
    data: &'a [TrainingSample],
    base: ModelConfig,
    k: usize,
    dataset_hash: u64,
}

pub fn dataset_hash(data: &[TrainingSample]) -> u64 {
    let mut bytes = Vec::new();
    for s in data {
        bytes.extend_from_slice(&(s.variety as u64).to_le_bytes());
        bytes.push(u8::from(s.spoiled));
        bytes.extend_from_slice(&s.days.to_bits().to_le_bytes());
        for v in s.image.iter().chain(&s.features) {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    seed::fnv1a64(&bytes)
}

impl<'a> CvFitness<'a> {
    pub fn new(data: &'a [TrainingSample], base: ModelConfig, k: usize) -> Self {
        Self {
            dataset_hash: dataset_hash(data),
            data,
            base,
            k,
        }
    }
}

impl Fitness for CvFitness<'_> {
    fn evaluate(&self, genome: &Genome) -> Result<f64> {
        genome.validate()?;
        let config = genome.model_config(&self.base);
        match kfold_cv(self.data, &config, self.k) {
            Ok(report) => Ok(report.mean_accuracy),
            Err(Error::NumericalDivergence(msg)) => {
                log::warn!("genome diverged, fitness 0: {msg}");
                Ok(0.0)
            }
            Err(e) => Err(e),
        }
    }

    fn context(&self) -> u64 {
        seed::derive_indexed(self.dataset_hash, self.k as u64)
    }
}

/// Fitness cache keyed by genome and fitness context.
#[derive(Debug, Default)]
pub struct FitnessMemo {
    values: HashMap<(GenomeKey, u64), f64>,
    evaluations: usize,
}

impl FitnessMemo {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total number of real (uncached) evaluations so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Score every genome, evaluating each distinct uncached genome once
    /// (concurrently). Returns the scores and the number of new evaluations.
    pub fn score(&mut self, fitness: &dyn Fitness, genomes: &[Genome]) -> Result<(Vec<f64>, usize)> {
        let ctx = fitness.context();
        let mut pending: Vec<&Genome> = Vec::new();
        for g in genomes {
            let key = (g.key(), ctx);
            if !self.values.contains_key(&key) && !pending.iter().any(|p| p.key() == key.0) {
                pending.push(g);
            }
        }
        let fresh: Vec<f64> = pending
            .par_iter()
            .map(|g| fitness.evaluate(g))
            .collect::<Result<_>>()?;
        for (g, f) in pending.iter().zip(&fresh) {
            self.values.insert((g.key(), ctx), *f);
        }
        self.evaluations += fresh.len();
        let scores = genomes.iter().map(|g| self.values[&(g.key(), ctx)]).collect();
        Ok((scores, fresh.len()))
    }
}

/// Index of the fittest genome; ties go to the earliest.
fn argmax(fitnesses: &[f64], candidates: impl IntoIterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for i in candidates {
        best = match best {
            Some(b) if fitnesses[i] > fitnesses[b] || (fitnesses[i] == fitnesses[b] && i < b) => Some(i),
            Some(b) => Some(b),
            None => Some(i),
        };
    }
    best.expect("non-empty candidate set")
}

/// Tournament without replacement.
fn tournament(fitnesses: &[f64], size: usize, rng: &mut ChaCha8Rng) -> usize {
    let picks = sample(rng, fitnesses.len(), size);
    argmax(fitnesses, picks.iter())
}

fn crossover(a: &Genome, b: &Genome, rng: &mut ChaCha8Rng) -> Genome {
    let mut from_b = || rng.random::<bool>();
    Genome {
        lr_log10: if from_b() { b.lr_log10 } else { a.lr_log10 },
        batch_size: if from_b() { b.batch_size } else { a.batch_size },
        conv_blocks: if from_b() { b.conv_blocks } else { a.conv_blocks },
        filters_base: if from_b() { b.filters_base } else { a.filters_base },
        dense_width: if from_b() { b.dense_width } else { a.dense_width },
        feature_mask: a
            .feature_mask
            .iter()
            .zip(&b.feature_mask)
            .map(|(&x, &y)| if from_b() { y } else { x })
            .collect(),
    }
}

/// Each gene is redrawn from its domain with probability `rate`; mask bits
/// are redrawn as fair coins. An emptied mask gets one random bit back.
pub fn mutate(genome: &mut Genome, rate: f64, rng: &mut ChaCha8Rng) {
    let hit = |rng: &mut ChaCha8Rng| rng.random::<f64>() < rate;
    if hit(rng) {
        genome.lr_log10 = random_lr(rng);
    }
    if hit(rng) {
        genome.batch_size = pick(&BATCH_SIZES, rng);
    }
    if hit(rng) {
        genome.conv_blocks = pick(&CONV_BLOCKS, rng);
    }
    if hit(rng) {
        genome.filters_base = pick(&FILTER_BASES, rng);
    }
    if hit(rng) {
        genome.dense_width = pick(&DENSE_WIDTHS, rng);
    }
    for i in 0..genome.feature_mask.len() {
        if hit(rng) {
            genome.feature_mask[i] = rng.random::<bool>();
        }
    }
    if !genome.feature_mask.iter().any(|&b| b) {
        let i = rng.random_range(0..genome.feature_mask.len());
        genome.feature_mask[i] = true;
    }
}

/// Elites first (fitness order), then tournament children.
pub fn evolve_generation(
    population: &[Genome],
    fitnesses: &[f64],
    config: &GaConfig,
    seed_value: u64,
) -> Result<Vec<Genome>> {
    config.validate()?;
    if population.len() != config.population_size || fitnesses.len() != population.len() {
        return Err(Error::InvalidGaConfig(format!(
            "population of {} with {} fitnesses, expected {}",
            population.len(),
            fitnesses.len(),
            config.population_size
        )));
    }
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| fitnesses[b].total_cmp(&fitnesses[a]).then(a.cmp(&b)));
    let mut next: Vec<Genome> = order[..config.elitism_count]
        .iter()
        .map(|&i| population[i].clone())
        .collect();
    let mut rng = seed::rng(seed_value);
    while next.len() < config.population_size {
        let a = tournament(fitnesses, config.tournament_size, &mut rng);
        let b = tournament(fitnesses, config.tournament_size, &mut rng);
        let mut child = if rng.random::<f64>() < config.crossover_rate {
            crossover(&population[a], &population[b], &mut rng)
        } else {
            population[a].clone()
        };
        mutate(&mut child, config.mutation_rate, &mut rng);
        next.push(child);
    }
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    /// Fitness evaluations performed for this generation (cache misses).
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaReport {
    pub config: GaConfig,
    pub generations: Vec<GenerationStats>,
    pub best_genome: Genome,
    pub best_fitness: f64,
    pub evaluations: usize,
}

impl GaReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("generation,best,mean,evaluations\n");
        for g in &self.generations {
            let _ = writeln!(out, "{},{},{},{}", g.generation, g.best, g.mean, g.evaluations);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn run_ga(fitness: &dyn Fitness, config: &GaConfig) -> Result<GaReport> {
    config.validate()?;
    let init_root = seed::derive(config.seed, "ga-init");
    let gen_root = seed::derive(config.seed, "ga-generation");
    let mut population: Vec<Genome> = (0..config.population_size)
        .map(|i| random_genome(seed::derive_indexed(init_root, i as u64)))
        .collect();
    let mut memo = FitnessMemo::new();
    let mut stats = Vec::with_capacity(config.generations);
    let mut best = (population[0].clone(), f64::NEG_INFINITY);
    for g in 0..config.generations {
        let (scores, fresh) = memo.score(fitness, &population)?;
        let top = argmax(&scores, 0..scores.len());
        if scores[top] > best.1 {
            best = (population[top].clone(), scores[top]);
        }
        stats.push(GenerationStats {
            generation: g,
            best: scores[top],
            mean: scores.iter().sum::<f64>() / scores.len() as f64,
            evaluations: fresh,
        });
        log::info!("generation {g}: best {:.4}, {fresh} evaluations", scores[top]);
        if g + 1 < config.generations {
            population = evolve_generation(&population, &scores, config, seed::derive_indexed(gen_root, g as u64))?;
        }
    }
    Ok(GaReport {
        config: config.clone(),
        generations: stats,
        best_genome: best.0,
        best_fitness: best.1,
        evaluations: memo.evaluations(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Surrogate;

    impl Fitness for Surrogate {
        fn evaluate(&self, g: &Genome) -> Result<f64> {
            Ok(-(g.lr_log10 + 2.0).powi(2))
        }
        fn context(&self) -> u64 {
            1
        }
    }

    struct Counting(AtomicUsize);

    impl Fitness for Counting {
        fn evaluate(&self, g: &Genome) -> Result<f64> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(g.feature_mask.iter().filter(|&&b| b).count() as f64 / FEATURE_COUNT as f64)
        }
        fn context(&self) -> u64 {
            2
        }
    }

    fn population(n: usize, root: u64) -> Vec<Genome> {
        (0..n).map(|i| random_genome(seed::derive_indexed(root, i as u64))).collect()
    }

    #[test]
    fn random_genome_is_deterministic_and_valid() {
        assert_eq!(random_genome(5), random_genome(5));
        assert_ne!(random_genome(5), random_genome(6));
        for i in 0..10_000 {
            let g = random_genome(seed::derive_indexed(77, i));
            g.validate().unwrap();
        }
    }

    #[test]
    fn batch_sizes_are_uniform() {
        let n = 10_000;
        let mut counts = HashMap::new();
        for i in 0..n {
            *counts.entry(random_genome(seed::derive_indexed(3, i)).batch_size).or_insert(0usize) += 1;
        }
        for b in BATCH_SIZES {
            let f = counts[&b] as f64 / n as f64;
            assert!((f - 0.25).abs() <= 0.02, "{b}: {f}");
        }
    }

    #[test]
    fn genome_maps_onto_model_config() {
        let g = Genome {
            lr_log10: -2.0,
            batch_size: 32,
            conv_blocks: 3,
            filters_base: 4,
            dense_width: 128,
            feature_mask: (0..FEATURE_COUNT).map(|i| i % 2 == 0).collect(),
        };
        let c = g.model_config(&ModelConfig::default());
        assert!((c.learning_rate - 0.01).abs() < 1e-15);
        let filters: Vec<usize> = c.conv_blocks.iter().map(|b| b.filters).collect();
        assert_eq!(filters, vec![4, 8, 16]);
        assert_eq!(c.dense_widths, vec![128]);
        assert_eq!(c.selected_features().len(), 23);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_genomes_and_configs_are_rejected() {
        let mut g = random_genome(1);
        g.lr_log10 = -5.0;
        assert!(g.validate().is_err());
        let mut g = random_genome(1);
        g.feature_mask = vec![false; FEATURE_COUNT];
        assert!(g.validate().is_err());
        let mut g = random_genome(1);
        g.batch_size = 12;
        assert!(g.validate().is_err());
        for c in [
            GaConfig { population_size: 3, ..GaConfig::default() },
            GaConfig { elitism_count: 8, ..GaConfig::default() },
            GaConfig { mutation_rate: 1.5, ..GaConfig::default() },
            GaConfig { generations: 0, ..GaConfig::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::InvalidGaConfig(_))));
        }
    }

    #[test]
    fn degenerate_operators_clone_the_best() {
        let pop = population(6, 9);
        let fit = [0.1, 0.5, 0.9, 0.3, 0.9, 0.2];
        let config = GaConfig {
            population_size: 6,
            tournament_size: 6,
            crossover_rate: 0.0,
            mutation_rate: 0.0,
            ..GaConfig::default()
        };
        let next = evolve_generation(&pop, &fit, &config, 4).unwrap();
        assert_eq!(next.len(), 6);
        assert!(next.iter().all(|g| *g == pop[2]));
    }

    #[test]
    fn elite_survives_unchanged() {
        let pop = population(8, 10);
        let fit: Vec<f64> = (0..8).map(|i| (i * 37 % 11) as f64).collect();
        let best = argmax(&fit, 0..8);
        let next = evolve_generation(&pop, &fit, &GaConfig { mutation_rate: 0.5, ..GaConfig::default() }, 1).unwrap();
        assert_eq!(next[0], pop[best]);
    }

    #[test]
    fn full_mask_mutation_flips_half_the_bits() {
        let mut rng = seed::rng(12);
        let trials = 2000;
        let mut total = 0usize;
        for i in 0..trials {
            let parent = random_genome(seed::derive_indexed(13, i));
            let mut child = parent.clone();
            mutate(&mut child, 1.0, &mut rng);
            child.validate().unwrap();
            total += parent.feature_mask.iter().zip(&child.feature_mask).filter(|(a, b)| a != b).count();
        }
        let mean = total as f64 / trials as f64;
        // Binomial(46, 1/2): standard error of the mean is ~0.076.
        assert!((mean - 23.0).abs() < 0.4, "{mean}");
    }

    #[test]
    fn offspring_stay_in_domain() {
        let mut pop = population(10, 14);
        let config = GaConfig {
            population_size: 10,
            mutation_rate: 0.5,
            ..GaConfig::default()
        };
        for g in 0..50 {
            let fit: Vec<f64> = pop.iter().map(|x| x.lr_log10).collect();
            pop = evolve_generation(&pop, &fit, &config, g).unwrap();
            for x in &pop {
                x.validate().unwrap();
            }
        }
    }

    #[test]
    fn memo_evaluates_each_genome_once() {
        let f = Counting(AtomicUsize::new(0));
        let g = random_genome(1);
        let h = random_genome(2);
        let mut memo = FitnessMemo::new();
        let (scores, fresh) = memo.score(&f, &[g.clone(), g.clone(), h.clone()]).unwrap();
        assert_eq!(fresh, 2);
        assert_eq!(scores[0], scores[1]);
        let (_, fresh) = memo.score(&f, &[h, g]).unwrap();
        assert_eq!(fresh, 0);
        assert_eq!(f.0.load(Ordering::SeqCst), 2);
        assert_eq!(memo.evaluations(), 2);
    }

    #[test]
    fn single_generation_costs_one_evaluation_per_genome() {
        let f = Counting(AtomicUsize::new(0));
        let config = GaConfig {
            population_size: 4,
            generations: 1,
            ..GaConfig::default()
        };
        let report = run_ga(&f, &config).unwrap();
        assert_eq!(report.evaluations, 4);
        assert_eq!(report.generations.len(), 1);
        assert_eq!(report.to_csv().lines().count(), 2);
    }

    #[test]
    fn surrogate_converges_and_best_is_monotone() {
        let config = GaConfig {
            population_size: 20,
            generations: 30,
            seed: 42,
            ..GaConfig::default()
        };
        let report = run_ga(&Surrogate, &config).unwrap();
        for w in report.generations.windows(2) {
            assert!(w[1].best >= w[0].best);
        }
        assert!((report.best_genome.lr_log10 + 2.0).abs() <= 0.1, "{:?}", report.best_genome);
        assert_eq!(report, run_ga(&Surrogate, &config).unwrap());
    }
}
