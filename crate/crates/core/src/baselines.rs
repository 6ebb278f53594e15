//! Comparison methods run under the same evaluation budget as the RL search.

use rand::seq::{IndexedRandom, index};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candidate::CandidateSet;
use crate::dut::{QuantizedModel, RepDataset};
use crate::error::{Error, Result};
use crate::fault::{CriticalOracle, FaultSet, FaultSite};
use crate::search::{reward, Evaluator, SearchResult};
use crate::sensitivity::hybrid_scores;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rfi,
    Magnitude,
    Gradient,
    Evolutionary,
    Rift,
}

impl Method {
    pub const BASELINES: [Method; 4] = [Method::Rfi, Method::Magnitude, Method::Gradient, Method::Evolutionary];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rfi => "rfi",
            Method::Magnitude => "magnitude",
            Method::Gradient => "gradient",
            Method::Evolutionary => "evolutionary",
            Method::Rift => "rift",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Method::Rfi, Method::Magnitude, Method::Gradient, Method::Evolutionary, Method::Rift]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_budget(budget: u64) -> Result<()> {
    if budget == 0 {
        return Err(Error::InvalidArgument("evaluation budget must be at least 1".into()));
    }
    Ok(())
}

/// Random fault injection: each evaluation draws a set of `1..=max_k` distinct
/// sites uniformly from all `n_params * 8` bits.
pub fn run_rfi(
    model: &mut QuantizedModel,
    data: &RepDataset,
    budget: u64,
    max_k: usize,
    tau: f64,
    seed: u64,
) -> Result<SearchResult> {
    check_budget(budget)?;
    let space = model.n_params() * 8;
    if max_k == 0 || max_k > space {
        return Err(Error::InvalidArgument(format!("max_k must be in 1..={space}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ev = Evaluator::new(model, data, budget, tau);
    for _ in 0..budget {
        let m = rng.random_range(1..=max_k);
        let f: FaultSet = index::sample(&mut rng, space, m)
            .into_iter()
            .map(|b| FaultSite::new(b / 8, (b % 8) as u8))
            .collect();
        ev.eval(&f)?;
    }
    Ok(ev.finish(Method::Rfi.as_str()))
}

/// Flips the MSBs of cumulative prefixes `1, 2, ...` of `order`, one
/// evaluation per prefix.
pub fn run_ranked_prefixes(
    model: &mut QuantizedModel,
    data: &RepDataset,
    order: &[usize],
    budget: u64,
    tau: f64,
    method: Method,
) -> Result<SearchResult> {
    check_budget(budget)?;
    if budget as usize > order.len() {
        return Err(Error::InvalidArgument(format!("budget {budget} exceeds the {} ranked parameters", order.len())));
    }
    let mut ev = Evaluator::new(model, data, budget, tau);
    let mut f = FaultSet::new();
    for &p in &order[..budget as usize] {
        f.insert(FaultSite::msb(p));
        ev.eval(&f)?;
    }
    Ok(ev.finish(method.as_str()))
}

/// Greedy prefixes in descending `|w|` order.
pub fn run_magnitude(model: &mut QuantizedModel, data: &RepDataset, budget: u64, tau: f64) -> Result<SearchResult> {
    let order = hybrid_scores(model, data, 0.0)?.ranking;
    run_ranked_prefixes(model, data, &order, budget, tau, Method::Magnitude)
}

/// Greedy prefixes in descending `|grad|` order.
pub fn run_gradient(model: &mut QuantizedModel, data: &RepDataset, budget: u64, tau: f64) -> Result<SearchResult> {
    let order = hybrid_scores(model, data, 1.0)?.ranking;
    run_ranked_prefixes(model, data, &order, budget, tau, Method::Gradient)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoConfig {
    pub population: usize,
    /// Probability that an offspring has one random candidate site toggled.
    pub mutation_rate: f64,
    /// Probability that an offspring mixes two parents instead of copying one.
    pub crossover_rate: f64,
    pub tournament_size: usize,
    /// Initial genomes draw `1..=init_max_size` candidate sites.
    pub init_max_size: usize,
    /// Best genomes carried unchanged into the next generation.
    pub elitism: usize,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig { population: 20, mutation_rate: 0.5, crossover_rate: 0.7, tournament_size: 3, init_max_size: 1, elitism: 1 }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("mutation_rate and crossover_rate must be in [0, 1]");
        }
        if self.tournament_size == 0 || self.init_max_size == 0 {
            return bad("tournament_size and init_max_size must be positive");
        }
        if self.elitism >= self.population {
            return bad("elitism must be smaller than the population");
        }
        Ok(())
    }
}

/// `-reward`: impact per flip.
pub fn fitness(accuracy: f64, set_size: usize) -> f64 {
    -reward(accuracy, set_size)
}

#[derive(Debug, Clone)]
pub struct EvoOutcome {
    pub result: SearchResult,
    /// Final population with fitness values.
    pub population: Vec<(FaultSet, f64)>,
    pub generations: usize,
}

fn tournament<'p>(pop: &'p [(FaultSet, f64)], size: usize, rng: &mut ChaCha8Rng) -> &'p FaultSet {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..size {
        let c = &pop[rng.random_range(0..pop.len())];
        if c.1 > best.1 {
            best = c;
        }
    }
    &best.0
}

fn crossover(a: &FaultSet, b: &FaultSet, rng: &mut ChaCha8Rng) -> FaultSet {
    let mut child: Vec<FaultSite> = Vec::new();
    for s in a.sites() {
        if b.contains(s) || rng.random::<bool>() {
            child.push(*s);
        }
    }
    for s in b.sites() {
        if !a.contains(s) && rng.random::<bool>() {
            child.push(*s);
        }
    }
    FaultSet::from_sites(child)
}

/// Generational genetic search over MSB sets of the candidates.
pub fn run_evolutionary(
    model: &mut QuantizedModel,
    data: &RepDataset,
    cands: &CandidateSet,
    evo: &EvoConfig,
    budget: u64,
    tau: f64,
    seed: u64,
) -> Result<SearchResult> {
    run_evolutionary_from(model, data, cands, evo, budget, tau, seed, None).map(|o| o.result)
}

/// As [`run_evolutionary`], optionally starting from a given population.
#[allow(clippy::too_many_arguments)]
pub fn run_evolutionary_from(
    model: &mut QuantizedModel,
    data: &RepDataset,
    cands: &CandidateSet,
    evo: &EvoConfig,
    budget: u64,
    tau: f64,
    seed: u64,
    initial: Option<Vec<FaultSet>>,
) -> Result<EvoOutcome> {
    evo.validate()?;
    if cands.indices.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if budget < evo.population as u64 {
        return Err(Error::InvalidArgument(format!("budget {budget} is below the population size {}", evo.population)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let genomes = match initial {
        Some(g) if g.len() != evo.population => {
            return Err(Error::InvalidArgument("initial population has the wrong size".into()));
        }
        Some(g) => g,
        None => (0..evo.population)
            .map(|_| {
                let m = rng.random_range(1..=evo.init_max_size.min(cands.k()));
                FaultSet::msb_of(cands.indices.choose_multiple(&mut rng, m).copied())
            })
            .collect(),
    };
    let mut ev = Evaluator::new(model, data, budget, tau);
    let mut pop = Vec::with_capacity(evo.population);
    for g in genomes {
        let (acc, _) = ev.eval(&g)?;
        let fit = fitness(acc, g.len());
        pop.push((g, fit));
    }
    let mut generations = 0;
    while ev.remaining() > 0 {
        let mut ranked: Vec<&(FaultSet, f64)> = pop.iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.len().cmp(&b.0.len())).then(a.0.cmp(&b.0)));
        let mut next: Vec<(FaultSet, f64)> = ranked[..evo.elitism].iter().map(|&x| x.clone()).collect();
        while next.len() < evo.population && ev.remaining() > 0 {
            let p1 = tournament(&pop, evo.tournament_size, &mut rng);
            let mut child = if rng.random::<f64>() < evo.crossover_rate {
                let p2 = tournament(&pop, evo.tournament_size, &mut rng);
                crossover(p1, p2, &mut rng)
            } else {
                p1.clone()
            };
            if rng.random::<f64>() < evo.mutation_rate {
                let site = FaultSite::msb(*cands.indices.choose(&mut rng).expect("non-empty"));
                if !child.remove(&site) {
                    child.insert(site);
                }
            }
            let (acc, _) = ev.eval(&child)?;
            let fit = fitness(acc, child.len());
            next.push((child, fit));
        }
        if next.len() < evo.population {
            // Budget ran out mid-generation; keep the fittest survivors.
            let missing = evo.population - next.len();
            next.extend(ranked[evo.elitism..evo.elitism + missing].iter().map(|&x| x.clone()));
        }
        pop = next;
        generations += 1;
    }
    Ok(EvoOutcome { result: ev.finish(Method::Evolutionary.as_str()), population: pop, generations })
}

/// Fraction of the oracle's critical singletons identified by any of the
/// runs. `None` when the oracle is empty.
pub fn coverage<'r>(runs: impl IntoIterator<Item = &'r SearchResult>, oracle: &CriticalOracle) -> Option<f64> {
    if oracle.critical_singletons.is_empty() {
        return None;
    }
    let mut found = std::collections::HashSet::new();
    for r in runs {
        found.extend(r.identified_sites(|acc| oracle.is_critical_accuracy(acc)));
    }
    let hit = oracle.critical_singletons.iter().filter(|s| found.contains(s)).count();
    Some(hit as f64 / oracle.critical_singletons.len() as f64)
}
