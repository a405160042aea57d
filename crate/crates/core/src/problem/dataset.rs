//! Dataset construction for the numerical and multilingual tasks.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::rng::{SeededRng, Stream};

use super::expr::{
    gen_expression, nth_expression, problem_space_exact, Expression, ProblemInstance,
};
use super::vocab::{Language, Task, NUM_LANGUAGES};

/// Expressions per (length, pair) at base scale.
pub fn base_count(k: usize) -> usize {
    if k == 2 {
        210
    } else {
        700
    }
}

pub const NUMERICAL_LENGTHS: std::ops::RangeInclusive<usize> = 2..=10;
pub const MULTILINGUAL_LENGTHS: std::ops::RangeInclusive<usize> = 2..=5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    /// Language pairs never seen in training.
    HeldOut,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::HeldOut => "heldout",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "heldout" => Ok(Split::HeldOut),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LanguagePair {
    pub src: Language,
    pub tgt: Language,
}

impl LanguagePair {
    pub fn new(src: Language, tgt: Language) -> Self {
        LanguagePair { src, tgt }
    }

    pub fn numerals() -> Self {
        LanguagePair::new(Language::NUMERALS, Language::NUMERALS)
    }
}

impl fmt::Display for LanguagePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}>{}", self.src, self.tgt)
    }
}

impl FromStr for LanguagePair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('>')
            .ok_or_else(|| Error::parse("language pair", s.to_string()))?;
        let lang = |x: &str| {
            x.parse::<usize>()
                .map_err(|e| Error::parse("language pair", e.to_string()))
                .and_then(Language::new)
        };
        Ok(LanguagePair::new(lang(a)?, lang(b)?))
    }
}

/// Split of the 25 ordered language pairs into 20 training pairs and 5
/// held-out pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSplit {
    pub train: Vec<LanguagePair>,
    pub held_out: Vec<LanguagePair>,
}

impl PairSplit {
    pub fn numerical() -> Self {
        PairSplit {
            train: vec![LanguagePair::numerals()],
            held_out: Vec::new(),
        }
    }
}

/// Hold out a random perfect matching: source `i` is paired with target
/// `σ(i)` for a uniformly random permutation `σ`, so every language appears
/// once as a held-out source and once as a held-out target, and is seen with
/// four targets (and four sources) in training.
pub fn select_language_pairs(rng: &mut SeededRng) -> PairSplit {
    let mut perm: Vec<usize> = (0..NUM_LANGUAGES).collect();
    rng.shuffle(&mut perm);
    let lang = |i: usize| Language::new(i).expect("in range");
    let held_out: Vec<LanguagePair> = perm
        .iter()
        .enumerate()
        .map(|(s, &t)| LanguagePair::new(lang(s), lang(t)))
        .collect();
    let train = Language::all()
        .flat_map(|s| Language::all().map(move |t| LanguagePair::new(s, t)))
        .filter(|p| !held_out.contains(p))
        .collect();
    PairSplit { train, held_out }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitPools {
    pub train: Vec<ProblemInstance>,
    pub val: Vec<ProblemInstance>,
    pub test: Vec<ProblemInstance>,
}

impl SplitPools {
    pub fn get(&self, split: Split) -> &[ProblemInstance] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
            Split::HeldOut => &[],
        }
    }

    pub fn get_mut(&mut self, split: Split) -> &mut Vec<ProblemInstance> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
            Split::HeldOut => panic!("held-out instances live outside split pools"),
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Sizes of the three splits of `n` instances: 70% / 15% / rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (0.7 * n as f64).round() as usize;
    let val = (0.15 * n as f64).round() as usize;
    (train, val, n - train - val)
}

/// Requested count that exceeded the problem space and was capped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CappedCount {
    pub length: usize,
    pub requested: usize,
    pub cap: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub seed: u64,
    pub scale: usize,
    pub pairs: PairSplit,
    /// Instances for training pairs, keyed by (length, pair).
    pub pools: BTreeMap<(usize, LanguagePair), SplitPools>,
    /// Instances for held-out pairs, keyed by (length, pair).
    pub held_out: BTreeMap<(usize, LanguagePair), Vec<ProblemInstance>>,
    pub capped: Vec<CappedCount>,
}

impl Dataset {
    pub fn lengths(&self) -> Vec<usize> {
        let mut ls: Vec<usize> = self.pools.keys().map(|(l, _)| *l).collect();
        ls.dedup();
        ls
    }

    pub fn instances(&self, split: Split) -> Vec<&ProblemInstance> {
        match split {
            Split::HeldOut => self.held_out.values().flatten().collect(),
            s => self.pools.values().flat_map(|p| p.get(s)).collect(),
        }
    }

    /// Instances of one split grouped by (length, pair).
    pub fn grouped(&self, split: Split) -> BTreeMap<(usize, LanguagePair), Vec<ProblemInstance>> {
        match split {
            Split::HeldOut => self.held_out.clone(),
            s => self
                .pools
                .iter()
                .map(|(k, p)| (*k, p.get(s).to_vec()))
                .collect(),
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::HeldOut => self.held_out.values().map(Vec::len).sum(),
            s => self.pools.values().map(|p| p.get(s).len()).sum(),
        }
    }

    /// Instances across train/val/test of the training pairs.
    pub fn total(&self) -> usize {
        self.pools.values().map(SplitPools::total).sum()
    }

    pub fn count_for_length(&self, k: usize) -> usize {
        self.pools
            .iter()
            .filter(|((l, _), _)| *l == k)
            .map(|(_, p)| p.total())
            .sum()
    }

    /// Keep only lengths within `lengths`.
    pub fn restrict_lengths(&mut self, lengths: std::ops::RangeInclusive<usize>) {
        self.pools.retain(|(l, _), _| lengths.contains(l));
        self.held_out
            .retain(|(l, _), _| lengths.contains(l) || *l > *lengths.end());
    }
}

fn pool_stream_index(k: usize, pair: LanguagePair) -> u64 {
    (k as u64) << 16 | (pair.src.id() as u64) << 8 | pair.tgt.id() as u64
}

/// `count` distinct expressions of `k` terms (capped at the problem space).
fn sample_distinct(k: usize, count: usize, rng: &mut SeededRng) -> Result<Vec<Expression>> {
    let space = problem_space_exact(k);
    if let Some(space) = space {
        if space <= 4 * count as u64 {
            let mut all: Vec<Expression> = (0..space).map(|i| nth_expression(k, i)).collect();
            rng.shuffle(&mut all);
            all.truncate(count.min(space as usize));
            return Ok(all);
        }
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let e = gen_expression(k, rng)?;
        if seen.insert(e.clone()) {
            out.push(e);
        }
    }
    Ok(out)
}

fn build_pool(
    k: usize,
    pair: LanguagePair,
    count: usize,
    seed: u64,
    capped: &mut Vec<CappedCount>,
) -> Result<SplitPools> {
    let cap = problem_space_exact(k).map_or(usize::MAX, |s| s.min(usize::MAX as u64) as usize);
    let n = if count > cap {
        capped.push(CappedCount {
            length: k,
            requested: count,
            cap,
        });
        cap
    } else {
        count
    };
    let mut rng = SeededRng::new(seed, Stream::Dataset, pool_stream_index(k, pair));
    let exprs = sample_distinct(k, n, &mut rng)?;
    let (n_train, n_val, _) = split_sizes(exprs.len());
    let mut pools = SplitPools::default();
    for (i, e) in exprs.into_iter().enumerate() {
        let inst = ProblemInstance::new(e, pair.src, pair.tgt);
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        pools.get_mut(split).push(inst);
    }
    Ok(pools)
}

/// Numerical dataset: 210 expressions of 2 terms and 700 of each longer
/// length, times `scale` (1 or 10), each pool split 70/15/15.
pub fn build_numerical_dataset(
    scale: usize,
    lengths: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Result<Dataset> {
    if scale == 0 {
        return Err(Error::InvalidArgument("data scale must be positive".into()));
    }
    if *lengths.start() < 2 {
        return Err(Error::InvalidArgument(
            "dataset lengths start at 2 terms".into(),
        ));
    }
    let pair = LanguagePair::numerals();
    let mut capped = Vec::new();
    let mut pools = BTreeMap::new();
    for k in lengths {
        pools.insert(
            (k, pair),
            build_pool(k, pair, base_count(k) * scale, seed, &mut capped)?,
        );
    }
    Ok(Dataset {
        task: Task::Numerical,
        seed,
        scale,
        pairs: PairSplit::numerical(),
        pools,
        held_out: BTreeMap::new(),
        capped,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultilingualSpec {
    pub scale: usize,
    pub lengths: std::ops::RangeInclusive<usize>,
    /// Lengths generated for the held-out language pairs.
    pub held_out_lengths: Vec<usize>,
    pub held_out_count: usize,
}

impl Default for MultilingualSpec {
    fn default() -> Self {
        MultilingualSpec {
            scale: 1,
            lengths: MULTILINGUAL_LENGTHS,
            held_out_lengths: vec![2, 3, 4, 5, 10],
            held_out_count: 100,
        }
    }
}

/// Multilingual dataset: for each of the 20 training pairs, 210 expressions
/// of 2 terms and 700 of 3, 4 and 5 terms; plus fresh pools for the five
/// held-out pairs.
pub fn build_multilingual_dataset(spec: &MultilingualSpec, seed: u64) -> Result<Dataset> {
    if spec.scale == 0 {
        return Err(Error::InvalidArgument("data scale must be positive".into()));
    }
    let pairs = select_language_pairs(&mut SeededRng::new(seed, Stream::PairSplit, 0));
    let mut capped = Vec::new();
    let mut pools = BTreeMap::new();
    for k in spec.lengths.clone() {
        for &pair in &pairs.train {
            let pool = build_pool(k, pair, base_count(k) * spec.scale, seed, &mut capped)?;
            pools.insert((k, pair), pool);
        }
    }
    let mut held_out = BTreeMap::new();
    for &k in &spec.held_out_lengths {
        for &pair in &pairs.held_out {
            let mut rng = SeededRng::new(seed, Stream::Dataset, pool_stream_index(k, pair));
            let count = problem_space_exact(k).map_or(spec.held_out_count, |s| {
                spec.held_out_count.min(s.min(usize::MAX as u64) as usize)
            });
            let exprs = sample_distinct(k, count, &mut rng)?;
            held_out.insert(
                (k, pair),
                exprs
                    .into_iter()
                    .map(|e| ProblemInstance::new(e, pair.src, pair.tgt))
                    .collect(),
            );
        }
    }
    Ok(Dataset {
        task: Task::Multilingual,
        seed,
        scale: spec.scale,
        pairs,
        pools,
        held_out,
        capped,
    })
}

/// `n` fresh instances per (length, pair), for lengths beyond training.
/// Problem spaces at these lengths dwarf any training set, so overlap is
/// negligible and not checked.
pub fn gen_extrapolation_set(
    lengths: &[usize],
    pairs: &[LanguagePair],
    n: usize,
    seed: u64,
) -> Result<BTreeMap<(usize, LanguagePair), Vec<ProblemInstance>>> {
    let mut out = BTreeMap::new();
    for &k in lengths {
        for &pair in pairs {
            let mut rng = SeededRng::new(seed, Stream::Extrapolation, pool_stream_index(k, pair));
            let insts = (0..n)
                .map(|_| {
                    gen_expression(k, &mut rng).map(|e| ProblemInstance::new(e, pair.src, pair.tgt))
                })
                .collect::<Result<Vec<_>>>()?;
            out.insert((k, pair), insts);
        }
    }
    Ok(out)
}
