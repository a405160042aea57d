//! The module set: reducers collapse a three-token window into one token,
//! translators re-represent every token of a sequence with one shared map.
//!
//! Modules only ever see token rows. Nothing about the target language
//! reaches them.

use crate::error::{Error, Result};
use crate::numeric::checkpoint::Checkpoint;
use crate::numeric::graph::{Graph, NodeId};
use crate::numeric::init::{init_params, Init};
use crate::numeric::params::{ParamId, ParamStore};
use crate::numeric::rng::{SeededRng, Stream};
use crate::numeric::tensor::argmax;
use crate::problem::vocab::{decode_token, token_id, Language, Symbol, TokenSeq};

pub const DEFAULT_REDUCER_HIDDEN: usize = 128;

/// Two-layer ReLU network from three concatenated rows to one row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReducerParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reducer {
    Learned(ReducerParams),
    /// Exact modular arithmetic on the argmax-decoded window.
    Hardcoded,
}

/// A `V x V` linear map applied to every row, followed by a softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TranslatorParams {
    pub w: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModuleConfig {
    pub reducers: usize,
    pub translators: usize,
    pub hidden: usize,
    pub hardcoded_reducers: bool,
}

impl ModuleConfig {
    pub fn numerical(reducers: usize) -> Self {
        ModuleConfig {
            reducers,
            translators: 0,
            hidden: DEFAULT_REDUCER_HIDDEN,
            hardcoded_reducers: false,
        }
    }

    pub fn multilingual() -> Self {
        ModuleConfig {
            reducers: 3,
            translators: 5,
            hidden: DEFAULT_REDUCER_HIDDEN,
            hardcoded_reducers: false,
        }
    }

    /// Four reducers and no translators: enough to fit the training pairs by
    /// specializing each reducer to a target language, which overfits.
    pub fn pathological() -> Self {
        ModuleConfig {
            reducers: 4,
            translators: 0,
            ..Self::multilingual()
        }
    }

    /// `{1, 3}` reducers by `{5, 8}` translators.
    pub fn variation_grid() -> Vec<Self> {
        let mut out = Vec::new();
        for reducers in [1, 3] {
            for translators in [5, 8] {
                out.push(ModuleConfig {
                    reducers,
                    translators,
                    ..Self::multilingual()
                });
            }
        }
        out
    }

    pub fn hardcoded() -> Self {
        ModuleConfig {
            reducers: 1,
            translators: 0,
            hidden: DEFAULT_REDUCER_HIDDEN,
            hardcoded_reducers: true,
        }
    }
}

/// A probability row in a graph, with the logits it came from when it was
/// produced by a module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SoftRow {
    pub probs: NodeId,
    pub logits: Option<NodeId>,
}

impl SoftRow {
    pub fn input(probs: NodeId) -> Self {
        SoftRow {
            probs,
            logits: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModuleSet {
    pub config: ModuleConfig,
    pub width: usize,
    pub store: ParamStore,
    reducers: Vec<Reducer>,
    translators: Vec<TranslatorParams>,
}

impl ModuleSet {
    /// Independently initialized modules, each from its own random stream.
    pub fn new(config: ModuleConfig, width: usize, seed: u64) -> Result<Self> {
        if config.reducers == 0 {
            return Err(Error::InvalidArgument(
                "at least one reducer is required".into(),
            ));
        }
        let mut store = ParamStore::new();
        let h = config.hidden;
        let mut reducers = Vec::with_capacity(config.reducers);
        for i in 0..config.reducers {
            if config.hardcoded_reducers {
                reducers.push(Reducer::Hardcoded);
                continue;
            }
            let mut rng = SeededRng::new(seed, Stream::ModuleInit, i as u64);
            let w1 = store.add(
                format!("reducer.{i}.w1"),
                init_params(&[h, 3 * width], Init::UniformXavier, &mut rng),
            )?;
            let b1 = store.add(
                format!("reducer.{i}.b1"),
                init_params(&[h], Init::Zeros, &mut rng),
            )?;
            let w2 = store.add(
                format!("reducer.{i}.w2"),
                init_params(&[width, h], Init::UniformXavier, &mut rng),
            )?;
            let b2 = store.add(
                format!("reducer.{i}.b2"),
                init_params(&[width], Init::Zeros, &mut rng),
            )?;
            reducers.push(Reducer::Learned(ReducerParams { w1, b1, w2, b2 }));
        }
        let mut translators = Vec::with_capacity(config.translators);
        for j in 0..config.translators {
            let mut rng = SeededRng::new(seed, Stream::ModuleInit, 1_000 + j as u64);
            let w = store.add(
                format!("translator.{j}.w"),
                init_params(&[width, width], Init::UniformXavier, &mut rng),
            )?;
            translators.push(TranslatorParams { w });
        }
        Ok(ModuleSet {
            config,
            width,
            store,
            reducers,
            translators,
        })
    }

    /// Rebuild from a checkpoint holding `reducer.*` / `translator.*` entries.
    pub fn from_checkpoint(config: ModuleConfig, width: usize, ckpt: &Checkpoint) -> Result<Self> {
        let mut set = ModuleSet::new(config, width, 0)?;
        for id in set.store.ids().collect::<Vec<_>>() {
            let name = set.store.name(id).to_string();
            let t = ckpt
                .get(&name)
                .ok_or_else(|| Error::parse("checkpoint", format!("missing {name}")))?;
            if t.shape() != set.store.get(id).shape() {
                return Err(Error::Shape {
                    op: "load modules",
                    shapes: vec![t.shape().to_vec(), set.store.get(id).shape().to_vec()],
                });
            }
            *set.store.get_mut(id) = t.clone();
        }
        Ok(set)
    }

    pub fn num_reducers(&self) -> usize {
        self.reducers.len()
    }

    pub fn num_translators(&self) -> usize {
        self.translators.len()
    }

    pub fn reducer(&self, id: usize) -> Result<Reducer> {
        self.reducers.get(id).copied().ok_or(Error::UnknownModule {
            kind: "reducer",
            id,
            available: self.reducers.len(),
        })
    }

    pub fn translator(&self, id: usize) -> Result<TranslatorParams> {
        self.translators
            .get(id)
            .copied()
            .ok_or(Error::UnknownModule {
                kind: "translator",
                id,
                available: self.translators.len(),
            })
    }

    pub fn has_learned_params(&self) -> bool {
        !self.store.is_empty()
    }

    /// `row_softmax(W2 · relu(W1 · concat(window) + b1) + b2)` recorded on `g`.
    pub fn reduce_on(
        &self,
        g: &mut Graph,
        params: &ReducerParams,
        window: [NodeId; 3],
    ) -> Result<SoftRow> {
        for &r in &window {
            if g.shape(r) != [self.width] {
                return Err(Error::VocabMismatch {
                    expected: self.width,
                    found: g.value(r).len(),
                });
            }
        }
        let x = g.concat(&window)?;
        let w1 = g.param(params.w1);
        let b1 = g.param(params.b1);
        let hidden = g.matmul(w1, x)?;
        let hidden = g.add(hidden, b1)?;
        let hidden = g.relu(hidden)?;
        let w2 = g.param(params.w2);
        let b2 = g.param(params.b2);
        let logits = g.matmul(w2, hidden)?;
        let logits = g.add(logits, b2)?;
        let probs = g.row_softmax(logits)?;
        Ok(SoftRow {
            probs,
            logits: Some(logits),
        })
    }

    /// `row_softmax(W · row)` recorded on `g`.
    pub fn translate_on(
        &self,
        g: &mut Graph,
        params: &TranslatorParams,
        row: NodeId,
    ) -> Result<SoftRow> {
        if g.shape(row) != [self.width] {
            return Err(Error::VocabMismatch {
                expected: self.width,
                found: g.value(row).len(),
            });
        }
        let w = g.param(params.w);
        let logits = g.matmul(w, row)?;
        let probs = g.row_softmax(logits)?;
        Ok(SoftRow {
            probs,
            logits: Some(logits),
        })
    }

    /// Apply reducer `id` to three rows. `Ok(None)` means a hardcoded reducer
    /// found no `(digit, operator, digit)` pattern and the window is invalid.
    pub fn reducer_apply(&self, id: usize, window: [&[f64]; 3]) -> Result<Option<Vec<f64>>> {
        match self.reducer(id)? {
            Reducer::Hardcoded => Ok(hardcoded_reduce(window, self.width)),
            Reducer::Learned(p) => {
                let mut g = Graph::new(&self.store);
                let nodes =
                    window.map(|r| g.constant(crate::numeric::tensor::Tensor::vector(r.to_vec())));
                let out = self.reduce_on(&mut g, &p, nodes)?;
                Ok(Some(g.value(out.probs).data().to_vec()))
            }
        }
    }

    /// Apply translator `id` to every row of `seq`.
    pub fn translator_apply(&self, id: usize, seq: &TokenSeq) -> Result<TokenSeq> {
        let p = self.translator(id)?;
        if seq.width() != self.width {
            return Err(Error::VocabMismatch {
                expected: self.width,
                found: seq.width(),
            });
        }
        let mut g = Graph::new(&self.store);
        let mut rows = Vec::with_capacity(seq.len());
        for r in seq.rows() {
            let n = g.constant(crate::numeric::tensor::Tensor::vector(r.to_vec()));
            let out = self.translate_on(&mut g, &p, n)?;
            rows.push(g.value(out.probs).data().to_vec());
        }
        TokenSeq::from_rows(self.width, rows)
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.add_store(&self.store);
    }
}

/// Exact evaluation of a `(digit, operator, digit)` window in the numerals
/// block, emitted as a one-hot row. `None` for any other pattern.
pub fn hardcoded_reduce(window: [&[f64]; 3], width: usize) -> Option<Vec<f64>> {
    let decoded = window.map(|r| decode_token(argmax(r)));
    match decoded {
        [Some((la, Symbol::Digit(a))), Some((lo, Symbol::Op(op))), Some((lb, Symbol::Digit(b)))]
            if la == Language::NUMERALS && lo == Language::NUMERALS && lb == Language::NUMERALS =>
        {
            let mut row = vec![0.0; width];
            row[token_id(Language::NUMERALS, Symbol::Digit(op.apply(a, b)))] = 1.0;
            Some(row)
        }
        _ => None,
    }
}
