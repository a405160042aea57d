//! Vocabularies, expressions, the ground-truth evaluator, and dataset and
//! curriculum construction.

pub mod curriculum;
pub mod dataset;
pub mod expr;
pub mod io;
pub mod vocab;

pub use curriculum::{Curriculum, CurriculumStage};
pub use dataset::{
    build_multilingual_dataset, build_numerical_dataset, gen_extrapolation_set,
    select_language_pairs, Dataset, LanguagePair, MultilingualSpec, PairSplit, Split,
};
pub use expr::{gen_expression, Expression, ProblemInstance};
pub use vocab::{encode, Language, Operator, Task, TokenSeq};
