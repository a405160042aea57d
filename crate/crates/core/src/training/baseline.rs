//! Sequence-to-sequence recurrent baseline: a GRU reads the expression and a
//! one-step GRU decoder emits the answer distribution.

use crate::error::{Error, Result};
use crate::numeric::adam::AdamState;
use crate::numeric::checkpoint::Checkpoint;
use crate::numeric::graph::{Graph, NodeId};
use crate::numeric::gru::{gru_cell, gru_sequence, GruParams};
use crate::numeric::init::{init_params, Init};
use crate::numeric::params::{ParamId, ParamStore};
use crate::numeric::rng::{SeededRng, Stream};
use crate::numeric::tensor::{argmax, Tensor};
use crate::problem::expr::ProblemInstance;
use crate::problem::vocab::{Task, NUM_LANGUAGES, STOP_TOKEN};

#[derive(Clone, Debug)]
pub struct Baseline {
    pub task: Task,
    pub hidden: usize,
    pub store: ParamStore,
    encoder: GruParams,
    decoder: GruParams,
    out_w: ParamId,
    out_b: ParamId,
}

impl Baseline {
    pub fn new(task: Task, hidden: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(seed, Stream::Baseline, 0);
        let v = task.vocab_width();
        let encoder = GruParams::register(
            &mut store,
            "baseline.enc",
            Self::input_width_for(task),
            hidden,
            &mut rng,
        )?;
        let decoder = GruParams::register(&mut store, "baseline.dec", v, hidden, &mut rng)?;
        let out_w = store.add(
            "baseline.out.w",
            init_params(&[v, hidden], Init::UniformXavier, &mut rng),
        )?;
        let out_b = store.add("baseline.out.b", init_params(&[v], Init::Zeros, &mut rng))?;
        Ok(Baseline {
            task,
            hidden,
            store,
            encoder,
            decoder,
            out_w,
            out_b,
        })
    }

    pub fn from_checkpoint(task: Task, hidden: usize, ckpt: &Checkpoint) -> Result<Self> {
        let mut b = Baseline::new(task, hidden, 0)?;
        let loaded = ckpt.store_with_prefix("baseline.")?;
        b.store.copy_from(&loaded)?;
        Ok(b)
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.add_store(&self.store);
    }

    fn input_width_for(task: Task) -> usize {
        match task {
            Task::Numerical => task.vocab_width(),
            Task::Multilingual => task.vocab_width() + NUM_LANGUAGES,
        }
    }

    pub fn input_width(&self) -> usize {
        Self::input_width_for(self.task)
    }

    /// Encoder input rows. Multilingual inputs start with a row holding the
    /// target-language one-hot and end with `STOP`.
    pub fn input_rows(&self, p: &ProblemInstance) -> Vec<Vec<f64>> {
        let w = self.input_width();
        let one_hot = |i: usize| {
            let mut r = vec![0.0; w];
            r[i] = 1.0;
            r
        };
        let tokens = p.input_ids().into_iter().map(one_hot);
        match self.task {
            Task::Numerical => tokens.collect(),
            Task::Multilingual => std::iter::once(one_hot(self.task.vocab_width() + p.tgt.id()))
                .chain(tokens)
                .chain(std::iter::once(one_hot(STOP_TOKEN)))
                .collect(),
        }
    }

    /// Log-probabilities over the vocabulary for the answer token.
    pub fn answer_logp(&self, g: &mut Graph, p: &ProblemInstance) -> Result<NodeId> {
        let inputs: Vec<NodeId> = self
            .input_rows(p)
            .into_iter()
            .map(|r| g.constant(Tensor::vector(r)))
            .collect();
        let h0 = g.constant(Tensor::zeros(&[self.hidden]));
        let states = gru_sequence(g, &self.encoder, &inputs, h0)?;
        let last = *states
            .last()
            .ok_or_else(|| Error::InvalidArgument("empty input".into()))?;
        let go = g.constant(Tensor::zeros(&[self.task.vocab_width()]));
        let h = gru_cell(g, &self.decoder, go, last)?;
        let w = g.param(self.out_w);
        let b = g.param(self.out_b);
        let logits = g.matmul(w, h)?;
        let logits = g.add(logits, b)?;
        g.row_log_softmax(logits)
    }

    pub fn predict(&self, p: &ProblemInstance) -> Result<usize> {
        let mut g = Graph::new(&self.store);
        let logp = self.answer_logp(&mut g, p)?;
        Ok(argmax(g.value(logp).data()))
    }

    /// Mean cross-entropy over `batch`.
    pub fn batch_loss(&self, g: &mut Graph, batch: &[&ProblemInstance]) -> Result<NodeId> {
        let losses = batch
            .iter()
            .map(|p| {
                let logp = self.answer_logp(g, p)?;
                g.nll(logp, p.answer_id())
            })
            .collect::<Result<Vec<_>>>()?;
        let total = g.add_all(&losses)?;
        g.scale(total, 1.0 / batch.len() as f64)
    }

    /// One Adam step on `batch`; returns the loss before the step. Non-finite
    /// losses leave the parameters alone and return `None`.
    pub fn train_step(
        &mut self,
        adam: &mut AdamState,
        batch: &[&ProblemInstance],
    ) -> Result<Option<f64>> {
        let (grads, loss) = {
            let mut g = Graph::new(&self.store);
            let loss = match self.batch_loss(&mut g, batch) {
                Ok(l) => l,
                Err(Error::NonFinite { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            (g.backward(loss)?, g.value(loss).item())
        };
        if !grads.all_finite() {
            return Ok(None);
        }
        adam.step(&mut self.store, &grads)?;
        Ok(Some(loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::adam::AdamConfig;
    use crate::problem::vocab::Language;

    #[test]
    fn multilingual_input_has_target_and_stop() {
        let b = Baseline::new(Task::Multilingual, 8, 0).unwrap();
        let p = ProblemInstance::new(
            "3+4".parse().unwrap(),
            Language::new(1).unwrap(),
            Language::new(2).unwrap(),
        );
        let rows = b.input_rows(&p);
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].len(), 71);
        assert_eq!(argmax(&rows[0]), 66 + 2);
        assert_eq!(argmax(&rows[4]), STOP_TOKEN);
        let n = Baseline::new(Task::Numerical, 8, 0).unwrap();
        assert_eq!(
            n.input_rows(&ProblemInstance::numerical("3+4".parse().unwrap()))
                .len(),
            3
        );
    }

    #[test]
    fn fits_a_single_example() {
        let mut b = Baseline::new(Task::Numerical, 8, 0).unwrap();
        let p = ProblemInstance::numerical("3+4*7".parse().unwrap());
        let mut adam = AdamState::new(&b.store, AdamConfig::with_lr(0.05));
        let mut loss = f64::INFINITY;
        for _ in 0..200 {
            loss = b.train_step(&mut adam, &[&p]).unwrap().unwrap();
        }
        assert!(loss < 0.01, "{loss}");
        assert_eq!(b.predict(&p).unwrap(), p.answer_id());
    }
}
