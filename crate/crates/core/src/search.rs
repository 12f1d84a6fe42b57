//! Architecture search over a trained super-network: evolutionary search on
//! one-shot validation accuracy, and the first-order bilevel update for the
//! continuous relaxation.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::imbalance::weighted_cross_entropy_grad;
use crate::nn::{NormMode, Selection, Sgd};
use crate::rng::{purpose, stream, RandomStream};
use crate::space::{softmax_backward, Genotype, MixtureParams, SearchSpace};
use crate::supernet::{extract_subnet, SuperNetwork};
use crate::tensor::Tensor;

/// Redraws allowed per population slot before a duplicate is accepted.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoConfig {
    pub generations: usize,
    pub population: usize,
    pub crossover_count: usize,
    pub mutation_count: usize,
    pub mutation_prob: f64,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            generations: 20,
            population: 50,
            crossover_count: 25,
            mutation_count: 25,
            mutation_prob: 0.1,
            top_k: 10,
            seed: 0,
        }
    }
}

impl EvoConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        EvoConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.generations == 0 || self.population == 0 || self.top_k == 0 {
            return Err(Error::Config("generations, population and top_k must be positive".into()));
        }
        if self.top_k > self.population {
            return Err(Error::Config(format!(
                "top_k {} exceeds population {}",
                self.top_k, self.population
            )));
        }
        if self.crossover_count + self.mutation_count > self.population {
            return Err(Error::Config(format!(
                "crossover_count + mutation_count = {} exceeds population {}",
                self.crossover_count + self.mutation_count,
                self.population
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::Config(format!("mutation_prob {} outside [0, 1]", self.mutation_prob)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredGenotype {
    pub genotype: Genotype,
    pub fitness: f64,
    /// Generation in which the genotype was first evaluated.
    pub eval_epoch: usize,
}

/// One-shot validation accuracy of `g`: the chosen blocks get private
/// normalization statistics from `calib` before scoring on `val`.
pub fn evaluate_fitness(
    net: &SuperNetwork,
    g: &Genotype,
    val: &LabeledDataset,
    calib: &LabeledDataset,
) -> Result<ScoredGenotype> {
    check_classes(net, val)?;
    let mut sub = extract_subnet(net, g)?;
    sub.calibrate(calib)?;
    Ok(ScoredGenotype {
        genotype: g.clone(),
        fitness: sub.accuracy(val)?,
        eval_epoch: 0,
    })
}

fn check_classes(net: &SuperNetwork, val: &LabeledDataset) -> Result<()> {
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    if val.num_classes() != net.space.num_classes {
        return Err(Error::Config(format!(
            "validation set has {} classes, network has {}",
            val.num_classes(),
            net.space.num_classes
        )));
    }
    Ok(())
}

/// Uniform crossover: each gene comes from `a` or `b` with probability 1/2.
pub fn crossover<R: Rng + ?Sized>(a: &Genotype, b: &Genotype, rng: &mut R) -> Result<Genotype> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("parents have lengths {} and {}", a.len(), b.len())));
    }
    Ok(Genotype(
        a.ops()
            .iter()
            .zip(b.ops())
            .map(|(&x, &y)| if rng.random_bool(0.5) { x } else { y })
            .collect(),
    ))
}

/// Resamples each gene uniformly over `num_ops` with probability `p`.
pub fn mutate<R: Rng + ?Sized>(g: &Genotype, p: f64, num_ops: usize, rng: &mut R) -> Genotype {
    Genotype(
        g.ops()
            .iter()
            .map(|&x| if rng.random_bool(p) { rng.random_range(0..num_ops) } else { x })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best fitness found so far.
    pub best_fitness: f64,
    /// Mean fitness of this generation's population.
    pub mean_fitness: f64,
    pub best_genotype_token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Best `top_k` genotypes, fitness descending, earlier discovery first on
    /// ties.
    pub top: Vec<ScoredGenotype>,
    pub history: Vec<GenerationRecord>,
    /// Distinct genotypes evaluated.
    pub evaluations: usize,
}

impl SearchOutcome {
    pub fn best(&self) -> &ScoredGenotype {
        &self.top[0]
    }
}

struct Archive {
    /// token -> (fitness, discovery order, generation)
    cache: HashMap<String, (f64, usize, usize)>,
    /// Indices into `entries`, best first.
    entries: Vec<(Genotype, f64, usize, usize)>,
}

impl Archive {
    fn ranked(&self, k: usize) -> Vec<&(Genotype, f64, usize, usize)> {
        let mut order: Vec<_> = self.entries.iter().collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
        order.truncate(k);
        order
    }
}

/// Evolutionary search with an arbitrary fitness function.
///
/// Every generation after the first is built from `crossover_count` children
/// of random top-k pairs, `mutation_count` mutants of random top-k members and
/// fresh uniform genotypes up to `population`. The top-k are taken over every
/// genotype evaluated so far, so the best fitness never decreases.
pub fn evolve_with<F>(space: &SearchSpace, cfg: &EvoConfig, fitness: F) -> Result<SearchOutcome>
where
    F: Fn(&Genotype) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let mut rng = stream(cfg.seed, purpose::SEARCH);
    let mut archive = Archive {
        cache: HashMap::new(),
        entries: Vec::new(),
    };
    let mut history = Vec::with_capacity(cfg.generations);

    for generation in 0..cfg.generations {
        let parents: Vec<Genotype> = archive.ranked(cfg.top_k).into_iter().map(|e| e.0.clone()).collect();
        let mut members: Vec<Genotype> = Vec::with_capacity(cfg.population);
        let mut seen: HashSet<String> = HashSet::new();
        for slot in 0..cfg.population {
            let draw = |rng: &mut RandomStream| -> Result<Genotype> {
                if generation == 0 || slot >= cfg.crossover_count + cfg.mutation_count {
                    return Ok(space.random_genotype(rng));
                }
                let pick = |rng: &mut RandomStream| &parents[rng.random_range(0..parents.len())];
                if slot < cfg.crossover_count {
                    let (a, b) = (pick(rng), pick(rng));
                    crossover(a, b, rng)
                } else {
                    let p = pick(rng);
                    Ok(mutate(p, cfg.mutation_prob, space.num_ops(), rng))
                }
            };
            let mut candidate = draw(&mut rng)?;
            for _ in 0..MAX_REDRAWS {
                let token = candidate.encode();
                if !seen.contains(&token) && !archive.cache.contains_key(&token) {
                    break;
                }
                candidate = draw(&mut rng)?;
            }
            seen.insert(candidate.encode());
            members.push(candidate);
        }

        let mut fresh: Vec<&Genotype> = Vec::new();
        let mut fresh_tokens = HashSet::new();
        for g in &members {
            let token = g.encode();
            if !archive.cache.contains_key(&token) && fresh_tokens.insert(token) {
                fresh.push(g);
            }
        }
        let scores: Vec<f64> = fresh.par_iter().map(|g| fitness(g)).collect::<Result<_>>()?;
        for (g, f) in fresh.into_iter().zip(scores) {
            if !f.is_finite() {
                return Err(Error::Numeric(format!("fitness of {g} is {f}")));
            }
            let order = archive.entries.len();
            archive.cache.insert(g.encode(), (f, order, generation));
            archive.entries.push((g.clone(), f, order, generation));
        }

        let mean = members.iter().map(|g| archive.cache[&g.encode()].0).sum::<f64>() / members.len() as f64;
        let best = archive.ranked(1)[0];
        history.push(GenerationRecord {
            generation,
            best_fitness: best.1,
            mean_fitness: mean,
            best_genotype_token: best.0.encode(),
        });
    }

    let top = archive
        .ranked(cfg.top_k)
        .into_iter()
        .map(|(g, f, _, gen)| ScoredGenotype {
            genotype: g.clone(),
            fitness: *f,
            eval_epoch: *gen,
        })
        .collect();
    Ok(SearchOutcome {
        top,
        history,
        evaluations: archive.entries.len(),
    })
}

/// Evolutionary search scored by one-shot validation accuracy.
pub fn evolve(
    net: &SuperNetwork,
    val: &LabeledDataset,
    calib: &LabeledDataset,
    cfg: &EvoConfig,
) -> Result<SearchOutcome> {
    check_classes(net, val)?;
    evolve_with(&net.space, cfg, |g| Ok(evaluate_fitness(net, g, val, calib)?.fitness))
}

/// Appends one JSON object per generation.
pub fn write_history(path: &Path, history: &[GenerationRecord]) -> Result<()> {
    let mut out = String::new();
    for record in history {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub rank: usize,
    pub genotype_token: String,
    pub fitness: f64,
}

pub fn write_results(path: &Path, top: &[ScoredGenotype]) -> Result<()> {
    let rows: Vec<RankedResult> = top
        .iter()
        .enumerate()
        .map(|(i, s)| RankedResult {
            rank: i + 1,
            genotype_token: s.genotype.encode(),
            fitness: s.fitness,
        })
        .collect();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, &rows)?;
    writeln!(file).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<RankedResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilevelState {
    pub mixture: MixtureParams,
    pub arch_lr: f64,
    pub weight_lr: f64,
    pub step_counter: u64,
}

impl BilevelState {
    pub fn new(space: &SearchSpace, arch_lr: f64, weight_lr: f64) -> Self {
        BilevelState {
            mixture: MixtureParams::zeros(space),
            arch_lr,
            weight_lr,
            step_counter: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilevelLosses {
    pub train: f64,
    pub val: f64,
}

/// Mixture-forward loss on a batch (batch statistics) and its gradient with
/// respect to the architecture logits.
pub fn alpha_gradient(
    net: &SuperNetwork,
    mixture: &MixtureParams,
    x: &Tensor,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<(f64, Vec<Vec<f64>>)> {
    mixture.check_finite()?;
    let probs = mixture.probabilities()?;
    let trace = net.net.forward(x, Selection::Mixture(&probs), NormMode::Batch)?;
    let (loss, grad) = weighted_cross_entropy_grad(&trace.logits, labels, class_weights)?;
    let back = net.net.backward(&trace, &grad, true);
    let grad_probs = back.mixture_grads.expect("mixture forward yields mixture gradients");
    let grads = probs
        .iter()
        .zip(&grad_probs)
        .map(|(p, g)| softmax_backward(p, g))
        .collect();
    Ok((loss, grads))
}

/// Mixture-forward loss on a batch under batch statistics.
pub fn mixture_loss(
    net: &SuperNetwork,
    mixture: &MixtureParams,
    x: &Tensor,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<f64> {
    let probs = mixture.probabilities()?;
    let logits = net.net.logits(x, Selection::Mixture(&probs), NormMode::Batch)?;
    crate::imbalance::weighted_cross_entropy(&logits, labels, class_weights)
}

/// First-order alternation: one SGD step on the network weights over the
/// training batch with the mixture fixed, then one gradient step on the
/// architecture logits over the validation batch with the weights fixed.
/// On error neither `net` nor `state` is modified.
pub fn bilevel_step(
    net: &mut SuperNetwork,
    state: &mut BilevelState,
    train: (&Tensor, &[usize]),
    val: (&Tensor, &[usize]),
    class_weights: &[f64],
) -> Result<BilevelLosses> {
    state.mixture.check_finite()?;
    if !state.mixture.matches(&net.space) {
        return Err(Error::Shape("mixture parameters do not match the space".into()));
    }
    let probs = state.mixture.probabilities()?;
    let trace = net.net.forward(train.0, Selection::Mixture(&probs), NormMode::Batch)?;
    let (train_loss, grad) = weighted_cross_entropy_grad(&trace.logits, train.1, class_weights)?;
    if !train_loss.is_finite() {
        return Err(Error::Numeric(format!("training loss is {train_loss}")));
    }
    let back = net.net.backward(&trace, &grad, true);
    let mut updated = net.clone();
    Sgd::new(0.0, 0.0).step(&mut updated.net, &back.grads, state.weight_lr);

    let (val_loss, alpha_grad) = alpha_gradient(&updated, &state.mixture, val.0, val.1, class_weights)?;
    if !val_loss.is_finite() {
        return Err(Error::Numeric(format!("validation loss is {val_loss}")));
    }
    let mut mixture = state.mixture.clone();
    for (e, g) in alpha_grad.iter().enumerate() {
        for (a, d) in mixture.row_mut(e).iter_mut().zip(g) {
            *a -= state.arch_lr * d;
        }
    }
    mixture.check_finite()?;
    *net = updated;
    state.mixture = mixture;
    state.step_counter += 1;
    Ok(BilevelLosses {
        train: train_loss,
        val: val_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::{synth_dataset, SynthSpec};
    use crate::space::build_search_space;
    use crate::supernet::init_supernet;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny_space() -> SearchSpace {
        build_search_space(1, 3, &["zero", "skip"], 4, 3).unwrap().with_input_channels(2)
    }

    #[test]
    fn config_validation() {
        assert!(EvoConfig::default().validate().is_ok());
        let bad = EvoConfig {
            top_k: 51,
            ..EvoConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = EvoConfig {
            crossover_count: 30,
            ..EvoConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn crossover_contracts() {
        let mut rng = stream(0, 0);
        let a = Genotype(vec![2, 0, 1, 3]);
        assert_eq!(crossover(&a, &a, &mut rng).unwrap(), a);
        let b = Genotype(vec![1, 1, 1, 1]);
        for _ in 0..50 {
            let c = crossover(&a, &b, &mut rng).unwrap();
            assert!(c.ops().iter().enumerate().all(|(i, &x)| x == a.0[i] || x == b.0[i]));
        }
        assert!(crossover(&a, &Genotype(vec![0]), &mut rng).is_err());
    }

    #[test]
    fn crossover_golden_pattern() {
        let child = crossover(&Genotype(vec![0; 8]), &Genotype(vec![1; 8]), &mut stream(42, 0)).unwrap();
        let again = crossover(&Genotype(vec![0; 8]), &Genotype(vec![1; 8]), &mut stream(42, 0)).unwrap();
        assert_eq!(child, again);
        let mut rng = stream(42, 0);
        let oracle: Vec<usize> = (0..8).map(|_| if rng.random_bool(0.5) { 0 } else { 1 }).collect();
        assert_eq!(child.0, oracle);
        assert_eq!(child.encode(), "1-1-0-1-0-0-0-1");
    }

    #[test]
    fn mutation_contracts() {
        let mut rng = stream(1, 0);
        let g = Genotype(vec![0, 0, 0]);
        assert_eq!(mutate(&g, 0.0, 6, &mut rng), g);
        assert_eq!(mutate(&g, 1.0, 1, &mut rng), g);
        let long = Genotype(vec![3; 100]);
        let same: usize = (0..1000)
            .map(|_| mutate(&long, 1.0, 10, &mut rng).ops().iter().filter(|&&x| x == 3).count())
            .sum();
        let frac = same as f64 / 100_000.0;
        // binomial(1e5, 0.1): sd ~ 0.00095
        assert!((frac - 0.1).abs() < 0.004, "{frac}");
    }

    fn oracle(g: &Genotype) -> f64 {
        // deterministic, distinct values per genotype
        g.ops().iter().enumerate().map(|(i, &o)| ((o * 7 + i * 3) % 11) as f64).sum::<f64>() / 100.0
    }

    #[test]
    fn evolve_finds_brute_force_optimum() {
        let space = tiny_space();
        let best = space
            .enumerate_genotypes()
            .into_iter()
            .map(|g| oracle(&g))
            .fold(f64::MIN, f64::max);
        let cfg = EvoConfig {
            generations: 3,
            population: 4,
            crossover_count: 2,
            mutation_count: 1,
            top_k: 2,
            ..EvoConfig::default()
        };
        let out = evolve_with(&space, &cfg, |g| Ok(oracle(g))).unwrap();
        assert_eq!(out.best().fitness, best);
        for w in out.history.windows(2) {
            assert!(w[1].best_fitness >= w[0].best_fitness);
        }
        assert_eq!(out.top.len(), 2);
    }

    #[test]
    fn single_generation_is_top_of_initial_population() {
        let space = build_search_space(2, 3, &["zero", "skip", "avg-pool-3x3"], 4, 3).unwrap();
        let cfg = EvoConfig {
            generations: 1,
            population: 10,
            top_k: 3,
            crossover_count: 0,
            mutation_count: 0,
            ..EvoConfig::default()
        };
        let out = evolve_with(&space, &cfg, |g| Ok(oracle(g))).unwrap();
        let mut rng = stream(cfg.seed, purpose::SEARCH);
        let mut initial: Vec<Genotype> = Vec::new();
        while initial.len() < 10 {
            let g = space.random_genotype(&mut rng);
            if !initial.contains(&g) {
                initial.push(g);
            }
        }
        let mut scored: Vec<(usize, f64)> = initial.iter().map(oracle).enumerate().collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let expect: Vec<&Genotype> = scored[..3].iter().map(|(i, _)| &initial[*i]).collect();
        let got: Vec<&Genotype> = out.top.iter().map(|s| &s.genotype).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn evaluation_is_deterministic_and_chance_level() {
        let space = build_search_space(1, 3, &["skip", "separable-conv-3x3", "max-pool-3x3"], 4, 4)
            .unwrap()
            .with_input_channels(2);
        let net = init_supernet(&space, &mut stream(3, 0));
        let spec = SynthSpec {
            classes: 4,
            per_class: 100,
            shape: [2, 4, 4],
            separation: 0.0,
            seed: 5,
            sample_seed: None,
        };
        let val = synth_dataset(&spec).unwrap();
        let g = Genotype(vec![1, 2, 0]);
        let a = evaluate_fitness(&net, &g, &val, &val).unwrap();
        let b = evaluate_fitness(&net, &g, &val, &val).unwrap();
        assert_eq!(a, b);
        // 400 examples: 0.25 +/- 4 sd
        assert!((a.fitness - 0.25).abs() < 0.087, "{}", a.fitness);
        let wrong = synth_dataset(&SynthSpec { classes: 3, ..spec }).unwrap();
        assert!(matches!(evaluate_fitness(&net, &g, &wrong, &wrong), Err(Error::Config(_))));
    }

    #[test]
    fn perfect_head_scores_one() {
        let space = build_search_space(1, 2, &["skip"], 2, 2).unwrap().with_input_channels(2);
        let mut net = init_supernet(&space, &mut stream(0, 0));
        // stem is the identity; normalized channel means are opposite per class
        net.net.stem_weight = vec![1.0, 0.0, 0.0, 1.0];
        net.net.head_weight = vec![1.0, 0.0, 0.0, 1.0];
        let features: Vec<f32> = (0..20)
            .flat_map(|i| {
                let y = i % 2;
                let v = if y == 0 { [1.0f32, -1.0] } else { [-1.0, 1.0] };
                [v[0]; 4].into_iter().chain([v[1]; 4])
            })
            .collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let val = LabeledDataset::new(features, [2, 2, 2], labels, 2).unwrap();
        let s = evaluate_fitness(&net, &Genotype(vec![0]), &val, &val).unwrap();
        assert_eq!(s.fitness, 1.0);
    }

    fn bilevel_setup() -> (SuperNetwork, Tensor, Vec<usize>, Tensor, Vec<usize>) {
        let space = build_search_space(1, 3, &["skip", "separable-conv-3x3", "avg-pool-3x3"], 4, 3)
            .unwrap()
            .with_input_channels(2);
        let net = init_supernet(&space, &mut stream(8, 0));
        let data = synth_dataset(&SynthSpec {
            classes: 3,
            per_class: 4,
            shape: [2, 4, 4],
            separation: 1.0,
            seed: 2,
            sample_seed: None,
        })
        .unwrap();
        let (x, y) = data.batch(&[0, 4, 8, 1, 5, 9]);
        let (vx, vy) = data.batch(&[2, 6, 10, 3, 7, 11]);
        (net, x, y, vx, vy)
    }

    #[test]
    fn bilevel_respects_learning_rates() {
        let (net, x, y, vx, vy) = bilevel_setup();
        let w = [1.0, 2.0, 0.5];
        let mut rng = stream(1, 0);
        let mut state = BilevelState::new(&net.space, 0.0, 0.0);
        for v in state.mixture.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut n0 = net.clone();
        let s0 = state.clone();
        bilevel_step(&mut n0, &mut state, (&x, &y), (&vx, &vy), &w).unwrap();
        assert_eq!(n0, net);
        assert_eq!(state.mixture, s0.mixture);
        assert_eq!(state.step_counter, 1);

        state.weight_lr = 0.1;
        let mut n1 = net.clone();
        bilevel_step(&mut n1, &mut state, (&x, &y), (&vx, &vy), &w).unwrap();
        assert_ne!(n1, net);
        assert_eq!(state.mixture, s0.mixture);

        state.weight_lr = 0.0;
        state.arch_lr = 0.5;
        let mut n2 = net.clone();
        bilevel_step(&mut n2, &mut state, (&x, &y), (&vx, &vy), &w).unwrap();
        assert_eq!(n2, net);
        assert_ne!(state.mixture, s0.mixture);
        assert!(state.mixture.check_finite().is_ok());
    }

    #[test]
    fn bilevel_nan_leaves_state() {
        let (net, x, y, vx, vy) = bilevel_setup();
        let mut state = BilevelState::new(&net.space, 0.1, 0.1);
        state.mixture.as_mut_slice()[1] = f64::NAN;
        let mut n = net.clone();
        let before = state.clone();
        assert!(bilevel_step(&mut n, &mut state, (&x, &y), (&vx, &vy), &[1.0; 3]).is_err());
        assert_eq!(n, net);
        assert_eq!(format!("{before:?}"), format!("{state:?}"));
    }

    #[test]
    fn alpha_gradient_matches_finite_differences() {
        let (net, _, _, vx, vy) = bilevel_setup();
        let w = [1.0, 1.5, 0.7];
        let mut rng = stream(4, 0);
        let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mix = MixtureParams::from_rows(rows).unwrap();
        let (_, grad) = alpha_gradient(&net, &mix, &vx, &vy, &w).unwrap();
        let h = 1e-5;
        for e in 0..3 {
            for o in 0..3 {
                let mut p = mix.clone();
                p.row_mut(e)[o] += h;
                let mut m = mix.clone();
                m.row_mut(e)[o] -= h;
                let fd = (mixture_loss(&net, &p, &vx, &vy, &w).unwrap() - mixture_loss(&net, &m, &vx, &vy, &w).unwrap())
                    / (2.0 * h);
                let g = grad[e][o];
                assert!((g - fd).abs() <= 1e-3 * g.abs().max(fd.abs()).max(1e-6), "{e},{o}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn history_and_results_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = evolve_with(&tiny_space(), &EvoConfig { generations: 2, population: 4, crossover_count: 1, mutation_count: 1, top_k: 2, ..EvoConfig::default() }, |g| Ok(oracle(g))).unwrap();
        write_history(&dir.path().join("h.jsonl"), &out.history).unwrap();
        let text = std::fs::read_to_string(dir.path().join("h.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 2);
        let rec: GenerationRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(rec.generation, 0);
        write_results(&dir.path().join("r.json"), &out.top).unwrap();
        let rows = read_results(&dir.path().join("r.json")).unwrap();
        assert_eq!(rows[0].rank, 1);
        assert_eq!(rows[0].genotype_token, out.top[0].genotype.encode());
    }

    proptest! {
        #[test]
        fn operators_stay_in_range(seed in any::<u64>(), len in 1usize..12, ops in 1usize..7, p in 0.0f64..=1.0) {
            let mut rng = stream(seed, 0);
            let a = Genotype((0..len).map(|_| rng.random_range(0..ops)).collect());
            let b = Genotype((0..len).map(|_| rng.random_range(0..ops)).collect());
            let c = crossover(&a, &b, &mut rng).unwrap();
            let m = mutate(&c, p, ops, &mut rng);
            prop_assert!(c.ops().iter().chain(m.ops()).all(|&x| x < ops));
        }
    }
}
