use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::rng::SeededRng;

use super::vocab::{decode_token, token_id, Language, Operator, Symbol};

/// `k` digit terms joined by `k - 1` operators.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expression {
    terms: Vec<u8>,
    ops: Vec<Operator>,
}

impl Expression {
    pub fn new(terms: Vec<u8>, ops: Vec<Operator>) -> Result<Self> {
        if terms.is_empty() || ops.len() + 1 != terms.len() {
            return Err(Error::InvalidArgument(format!(
                "{} terms need {} operators, got {}",
                terms.len(),
                terms.len().saturating_sub(1),
                ops.len()
            )));
        }
        if let Some(t) = terms.iter().find(|&&t| t > 9) {
            return Err(Error::InvalidArgument(format!("term {t} is not a digit")));
        }
        Ok(Expression { terms, ops })
    }

    pub fn terms(&self) -> &[u8] {
        &self.terms
    }

    pub fn ops(&self) -> &[Operator] {
        &self.ops
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Length of the token sequence, `2k - 1`.
    pub fn token_len(&self) -> usize {
        2 * self.terms.len() - 1
    }

    pub fn symbols(&self) -> Vec<Symbol> {
        let mut out = Vec::with_capacity(self.token_len());
        out.push(Symbol::Digit(self.terms[0]));
        for (op, &t) in self.ops.iter().zip(&self.terms[1..]) {
            out.push(Symbol::Op(*op));
            out.push(Symbol::Digit(t));
        }
        out
    }

    /// Token ids in the block of `lang`.
    pub fn tokens(&self, lang: Language) -> Vec<usize> {
        self.symbols()
            .into_iter()
            .map(|s| token_id(lang, s))
            .collect()
    }

    /// Parse token ids that all belong to one language block.
    pub fn from_tokens(ids: &[usize]) -> Result<(Language, Expression)> {
        let bad = |msg: String| Error::parse("expression tokens", msg);
        let mut lang = None;
        let mut terms = Vec::new();
        let mut ops = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            let (l, sym) =
                decode_token(id).ok_or_else(|| bad(format!("token {id} is not a symbol")))?;
            if *lang.get_or_insert(l) != l {
                return Err(bad(format!("token {id} switches language")));
            }
            match (i % 2, sym) {
                (0, Symbol::Digit(d)) => terms.push(d),
                (1, Symbol::Op(op)) => ops.push(op),
                _ => return Err(bad(format!("token {id} out of place at position {i}"))),
            }
        }
        let lang = lang.ok_or_else(|| bad("empty expression".into()))?;
        Ok((lang, Expression::new(terms, ops)?))
    }

    /// Value modulo 10 under the usual precedence: `×` binds tighter than
    /// `+`/`−`, which associate left to right. Every intermediate is reduced
    /// into `[0, 9]`.
    pub fn eval_mod10(&self) -> u8 {
        let mut total = 0u8;
        let mut pending = Operator::Add;
        let mut product = self.terms[0];
        for (op, &t) in self.ops.iter().zip(&self.terms[1..]) {
            match op {
                Operator::Mul => product = Operator::Mul.apply(product, t),
                add_or_sub => {
                    total = pending.apply(total, product);
                    pending = *add_or_sub;
                    product = t;
                }
            }
        }
        pending.apply(total, product)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for sym in self.symbols() {
            match sym {
                Symbol::Digit(d) => write!(f, "{d}")?,
                Symbol::Op(op) => write!(f, "{}", op.symbol())?,
            }
        }
        Ok(())
    }
}

impl FromStr for Expression {
    type Err = Error;

    /// Accepts `3+4*7`, with `x`/`×` for multiplication and `−` for
    /// subtraction; whitespace is ignored.
    fn from_str(s: &str) -> Result<Self> {
        let mut terms = Vec::new();
        let mut ops = Vec::new();
        for c in s.chars().filter(|c| !c.is_whitespace()) {
            let expect_digit = terms.len() == ops.len();
            match c {
                '0'..='9' if expect_digit => terms.push(c as u8 - b'0'),
                '+' if !expect_digit => ops.push(Operator::Add),
                '*' | 'x' | '×' if !expect_digit => ops.push(Operator::Mul),
                '-' | '−' if !expect_digit => ops.push(Operator::Sub),
                _ => {
                    return Err(Error::parse(
                        "expression",
                        format!("unexpected {c:?} in {s:?}"),
                    ))
                }
            }
        }
        Expression::new(terms, ops).map_err(|e| Error::parse("expression", e.to_string()))
    }
}

/// Digits and operators drawn uniformly.
pub fn gen_expression(k: usize, rng: &mut SeededRng) -> Result<Expression> {
    if k < 1 {
        return Err(Error::InvalidArgument(
            "expressions need at least one term".into(),
        ));
    }
    let mut terms = Vec::with_capacity(k);
    let mut ops = Vec::with_capacity(k - 1);
    terms.push(rng.below(10) as u8);
    for _ in 1..k {
        ops.push(Operator::ALL[rng.below(3)]);
        terms.push(rng.below(10) as u8);
    }
    Expression::new(terms, ops)
}

/// The `index`-th expression of `k` terms in a fixed enumeration of all
/// `10^k · 3^(k-1)` of them.
pub fn nth_expression(k: usize, mut index: u64) -> Expression {
    let mut terms = Vec::with_capacity(k);
    let mut ops = Vec::with_capacity(k.saturating_sub(1));
    terms.push((index % 10) as u8);
    index /= 10;
    for _ in 1..k {
        ops.push(Operator::ALL[(index % 3) as usize]);
        index /= 3;
        terms.push((index % 10) as u8);
        index /= 10;
    }
    Expression { terms, ops }
}

/// Number of distinct `k`-term expressions times the number of language pairs.
pub fn problem_space(k: usize, pairs: usize) -> f64 {
    10f64.powi(k as i32) * 3f64.powi(k as i32 - 1) * pairs as f64
}

/// Exact problem space when it fits in a `u64`.
pub fn problem_space_exact(k: usize) -> Option<u64> {
    let digits = 10u64.checked_pow(k as u32)?;
    let ops = 3u64.checked_pow(k.checked_sub(1)? as u32)?;
    digits.checked_mul(ops)
}

/// One problem: an expression written in `src`, to be answered in `tgt`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProblemInstance {
    pub expr: Expression,
    pub src: Language,
    pub tgt: Language,
}

impl ProblemInstance {
    pub fn new(expr: Expression, src: Language, tgt: Language) -> Self {
        ProblemInstance { expr, src, tgt }
    }

    pub fn numerical(expr: Expression) -> Self {
        ProblemInstance::new(expr, Language::NUMERALS, Language::NUMERALS)
    }

    pub fn input_ids(&self) -> Vec<usize> {
        self.expr.tokens(self.src)
    }

    pub fn answer_digit(&self) -> u8 {
        self.expr.eval_mod10()
    }

    /// Answer digit rendered in the target-language block.
    pub fn answer_id(&self) -> usize {
        token_id(self.tgt, Symbol::Digit(self.answer_digit()))
    }

    pub fn num_terms(&self) -> usize {
        self.expr.num_terms()
    }
}
