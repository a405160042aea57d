//! Token vocabularies.
//!
//! Every language owns a block of 13 ids: digits `0..=9` at local ids 0–9,
//! then `+`, `×`, `−` at 10, 11, 12. Token id = `13 * language + local`.
//! The multilingual vocabulary has five blocks plus a `STOP` token (66 ids);
//! the numerical vocabulary is block 0 alone (13 ids).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::tensor::argmax;

pub const BLOCK_SIZE: usize = 13;
pub const NUM_LANGUAGES: usize = 5;
pub const STOP_TOKEN: usize = BLOCK_SIZE * NUM_LANGUAGES;
pub const MULTILINGUAL_WIDTH: usize = BLOCK_SIZE * NUM_LANGUAGES + 1;
pub const NUMERICAL_WIDTH: usize = BLOCK_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Numerical,
    Multilingual,
}

impl Task {
    /// Width of a token row.
    pub fn vocab_width(self) -> usize {
        match self {
            Task::Numerical => NUMERICAL_WIDTH,
            Task::Multilingual => MULTILINGUAL_WIDTH,
        }
    }

    pub fn num_languages(self) -> usize {
        match self {
            Task::Numerical => 1,
            Task::Multilingual => NUM_LANGUAGES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Numerical => "numerical",
            Task::Multilingual => "multilingual",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "numerical" => Ok(Task::Numerical),
            "multilingual" => Ok(Task::Multilingual),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Language(u8);

impl Language {
    pub const NUMERALS: Language = Language(0);

    pub fn new(id: usize) -> Result<Self> {
        if id < NUM_LANGUAGES {
            Ok(Language(id as u8))
        } else {
            Err(Error::InvalidArgument(format!(
                "language id {id} out of range"
            )))
        }
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = Language> {
        (0..NUM_LANGUAGES as u8).map(Language)
    }

    pub fn name(self) -> &'static str {
        LANGUAGE_NAMES[self.id()]
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operator {
    Add,
    Mul,
    Sub,
}

impl Operator {
    pub const ALL: [Operator; 3] = [Operator::Add, Operator::Mul, Operator::Sub];

    pub fn local_id(self) -> usize {
        match self {
            Operator::Add => 10,
            Operator::Mul => 11,
            Operator::Sub => 12,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Operator::Add => '+',
            Operator::Mul => '*',
            Operator::Sub => '-',
        }
    }

    /// `a op b` reduced into `[0, 9]`.
    pub fn apply(self, a: u8, b: u8) -> u8 {
        let (a, b) = (a as i32, b as i32);
        let v = match self {
            Operator::Add => a + b,
            Operator::Mul => a * b,
            Operator::Sub => a - b,
        };
        v.rem_euclid(10) as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Symbol {
    Digit(u8),
    Op(Operator),
}

impl Symbol {
    pub fn local_id(self) -> usize {
        match self {
            Symbol::Digit(d) => d as usize,
            Symbol::Op(op) => op.local_id(),
        }
    }

    pub fn from_local(local: usize) -> Option<Symbol> {
        match local {
            0..=9 => Some(Symbol::Digit(local as u8)),
            10 => Some(Symbol::Op(Operator::Add)),
            11 => Some(Symbol::Op(Operator::Mul)),
            12 => Some(Symbol::Op(Operator::Sub)),
            _ => None,
        }
    }
}

pub fn token_id(lang: Language, sym: Symbol) -> usize {
    BLOCK_SIZE * lang.id() + sym.local_id()
}

/// Language and symbol of a token id; `None` for `STOP` or out-of-range ids.
pub fn decode_token(id: usize) -> Option<(Language, Symbol)> {
    if id >= STOP_TOKEN {
        return None;
    }
    let lang = Language((id / BLOCK_SIZE) as u8);
    Symbol::from_local(id % BLOCK_SIZE).map(|s| (lang, s))
}

const LANGUAGE_NAMES: [&str; NUM_LANGUAGES] =
    ["numerals", "english", "spanish", "piglatin", "synthetic"];

const SURFACE: [[&str; BLOCK_SIZE]; NUM_LANGUAGES] = [
    [
        "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "*", "-",
    ],
    [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "plus",
        "times", "minus",
    ],
    [
        "cero", "uno", "dos", "tres", "cuatro", "cinco", "seis", "siete", "ocho", "nueve", "mas",
        "por", "menos",
    ],
    [
        "erozay", "oneway", "otway", "eethray", "ourfay", "ivefay", "ixsay", "evensay", "eightway",
        "inenay", "lusplay", "imestay", "inusmay",
    ],
    [
        "ka", "ki", "ku", "ke", "ko", "sa", "si", "su", "se", "so", "pa", "ta", "na",
    ],
];

/// Display word for a token id.
pub fn surface(id: usize) -> &'static str {
    if id == STOP_TOKEN {
        return "STOP";
    }
    match decode_token(id) {
        Some((lang, sym)) => SURFACE[lang.id()][sym.local_id()],
        None => "?",
    }
}

/// Render token ids: numerals are written compactly (`3+4*7`), any other
/// language is space separated.
pub fn render_ids(ids: &[usize]) -> String {
    if ids.iter().all(|&id| id < BLOCK_SIZE) {
        ids.iter().map(|&id| surface(id)).collect()
    } else {
        ids.iter()
            .map(|&id| surface(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A sequence of probability rows over the vocabulary: the state of a
/// computation. Rows are stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSeq {
    width: usize,
    data: Vec<f64>,
}

impl TokenSeq {
    pub fn from_rows(width: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::VocabMismatch {
                    expected: width,
                    found: r.len(),
                });
            }
            data.extend(r);
        }
        Ok(TokenSeq { width, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width)
    }

    /// Most likely token at each position.
    pub fn argmax_ids(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }

    /// Replace rows `[start, start + 3)` with a single row.
    pub fn splice_window(&mut self, start: usize, row: &[f64]) {
        assert_eq!(row.len(), self.width);
        assert!(start + 3 <= self.len(), "window out of range");
        let w = self.width;
        self.data
            .splice(start * w..(start + 3) * w, row.iter().copied());
    }

    pub fn replace_all(&mut self, rows: Vec<Vec<f64>>) {
        assert_eq!(rows.len(), self.len());
        self.data = rows.into_iter().flatten().collect();
    }

    pub fn render(&self) -> String {
        render_ids(&self.argmax_ids())
    }
}

/// One-hot encode token ids into rows of `width`.
pub fn encode(ids: &[usize], width: usize) -> Result<TokenSeq> {
    let mut data = vec![0.0; ids.len() * width];
    for (i, &id) in ids.iter().enumerate() {
        if id >= width {
            return Err(Error::TokenOutOfRange { id, width });
        }
        data[i * width + id] = 1.0;
    }
    Ok(TokenSeq { width, data })
}

pub fn decode(seq: &TokenSeq) -> Vec<usize> {
    seq.argmax_ids()
}
