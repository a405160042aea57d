use crate::error::{Error, Result};
use crate::numeric::rng::SeededRng;

use super::dataset::{Dataset, Split};
use super::expr::ProblemInstance;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurriculumStage {
    pub index: usize,
    pub max_len: usize,
}

/// The expanding training pool. Instances are sorted by length, so the pool
/// of every stage is a prefix of the next one.
#[derive(Clone, Debug)]
pub struct Curriculum {
    lengths: Vec<usize>,
    instances: Vec<ProblemInstance>,
    stage_ends: Vec<usize>,
}

impl Curriculum {
    /// Stages admit one more expression length each, over the lengths present
    /// in the dataset's training split.
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let lengths = dataset.lengths();
        let mut instances: Vec<ProblemInstance> = Vec::new();
        let mut stage_ends = Vec::with_capacity(lengths.len());
        for &k in &lengths {
            for ((len, _), pools) in &dataset.pools {
                if *len == k {
                    instances.extend(pools.get(Split::Train).iter().cloned());
                }
            }
            stage_ends.push(instances.len());
        }
        if instances.is_empty() {
            return Err(Error::InvalidArgument("empty training split".into()));
        }
        Ok(Curriculum {
            lengths,
            instances,
            stage_ends,
        })
    }

    pub fn num_stages(&self) -> usize {
        self.lengths.len()
    }

    pub fn stage(&self, index: usize) -> CurriculumStage {
        let index = index.min(self.lengths.len() - 1);
        CurriculumStage {
            index,
            max_len: self.lengths[index],
        }
    }

    pub fn final_stage(&self) -> CurriculumStage {
        self.stage(self.lengths.len() - 1)
    }

    /// Everything admitted up to and including `stage`.
    pub fn pool(&self, stage: CurriculumStage) -> &[ProblemInstance] {
        &self.instances[..self.stage_ends[stage.index]]
    }

    pub fn sample<'a>(
        &'a self,
        stage: CurriculumStage,
        rng: &mut SeededRng,
    ) -> &'a ProblemInstance {
        let pool = self.pool(stage);
        &pool[rng.below(pool.len())]
    }
}
