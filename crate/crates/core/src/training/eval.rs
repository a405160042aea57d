use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mdp::{run_episode, Env, Policy};
use crate::numeric::rng::{SeededRng, Stream};
use crate::problem::dataset::{LanguagePair, Split};
use crate::problem::expr::ProblemInstance;
use crate::problem::vocab::Language;

use super::baseline::Baseline;

pub const CSV_HEADER: &str = "episodes,split,length,src_lang,tgt_lang,seed,accuracy";
pub const AGGREGATE_HEADER: &str = "episodes,split,length,seeds,p10,p50,p90";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub episodes: u64,
    pub split: Split,
    pub length: usize,
    pub pair: LanguagePair,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn extend(&mut self, rows: impl IntoIterator<Item = EvalRow>) {
        self.rows.extend(rows);
    }

    pub fn last_episodes(&self) -> Option<u64> {
        self.rows.iter().map(|r| r.episodes).max()
    }

    /// Mean accuracy over language pairs at one evaluation point.
    pub fn accuracy(&self, episodes: u64, split: Split, length: usize) -> Option<f64> {
        let accs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.episodes == episodes && r.split == split && r.length == length)
            .map(|r| r.accuracy)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    /// Accuracy at the latest evaluation point.
    pub fn final_accuracy(&self, split: Split, length: usize) -> Option<f64> {
        self.accuracy(self.last_episodes()?, split, length)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format_row(r));
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::parse("eval csv", "missing header"));
        }
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(parse_row)
            .collect::<Result<_>>()?;
        Ok(EvalReport { rows })
    }
}

pub fn format_row(r: &EvalRow) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.episodes,
        r.split,
        r.length,
        r.pair.src.name(),
        r.pair.tgt.name(),
        r.seed,
        r.accuracy
    )
}

fn language_by_name(s: &str) -> Result<Language> {
    Language::all()
        .find(|l| l.name() == s)
        .ok_or_else(|| Error::parse("eval csv", format!("unknown language {s:?}")))
}

fn parse_row(line: &str) -> Result<EvalRow> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 7 {
        return Err(Error::parse(
            "eval csv",
            format!("expected 7 fields: {line:?}"),
        ));
    }
    let num = |s: &str| {
        s.parse::<u64>()
            .map_err(|e| Error::parse("eval csv", e.to_string()))
    };
    Ok(EvalRow {
        episodes: num(f[0])?,
        split: f[1].parse()?,
        length: num(f[2])? as usize,
        pair: LanguagePair::new(language_by_name(f[3])?, language_by_name(f[4])?),
        seed: num(f[5])?,
        accuracy: f[6]
            .parse()
            .map_err(|e: std::num::ParseFloatError| Error::parse("eval csv", e.to_string()))?,
    })
}

/// Anything that answers problems.
pub trait Solver {
    fn solve(&self, p: &ProblemInstance, index: u64) -> Result<bool>;
}

pub struct EpisodeSolver<'a> {
    pub env: Env<'a>,
    pub policy: &'a dyn Policy,
    pub seed: u64,
}

impl Solver for EpisodeSolver<'_> {
    fn solve(&self, p: &ProblemInstance, index: u64) -> Result<bool> {
        let mut rng = SeededRng::new(self.seed, Stream::Evaluation, index);
        Ok(run_episode(&self.env, self.policy, p, &mut rng)?.correct())
    }
}

impl Solver for Baseline {
    fn solve(&self, p: &ProblemInstance, _index: u64) -> Result<bool> {
        Ok(self.predict(p)? == p.answer_id())
    }
}

/// Accuracy per group, using at most `max_per_group` instances of each.
pub fn evaluate(
    solver: &dyn Solver,
    groups: &BTreeMap<(usize, LanguagePair), Vec<ProblemInstance>>,
    split: Split,
    episodes: u64,
    seed: u64,
    max_per_group: Option<usize>,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(groups.len());
    let mut index = 0u64;
    for (&(length, pair), insts) in groups {
        let take = max_per_group.unwrap_or(usize::MAX).min(insts.len());
        if take == 0 {
            continue;
        }
        let mut correct = 0usize;
        for p in &insts[..take] {
            if solver.solve(p, index)? {
                correct += 1;
            }
            index += 1;
        }
        rows.push(EvalRow {
            episodes,
            split,
            length,
            pair,
            seed,
            accuracy: correct as f64 / take as f64,
        });
    }
    Ok(rows)
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub episodes: u64,
    pub split: Split,
    pub length: usize,
    pub seeds: usize,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

/// Percentiles over seeds of the pair-averaged accuracy per
/// (episodes, split, length).
pub fn aggregate(reports: &[EvalReport]) -> Result<Vec<AggregateRow>> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no runs to aggregate".into()));
    }
    let mut by_key: BTreeMap<(u64, Split, usize), Vec<f64>> = BTreeMap::new();
    for report in reports {
        let mut keys: Vec<(u64, Split, usize)> = report
            .rows
            .iter()
            .map(|r| (r.episodes, r.split, r.length))
            .collect();
        keys.sort();
        keys.dedup();
        for (e, s, l) in keys {
            let acc = report.accuracy(e, s, l).expect("key comes from the report");
            by_key.entry((e, s, l)).or_default().push(acc);
        }
    }
    Ok(by_key
        .into_iter()
        .map(|((episodes, split, length), mut accs)| {
            accs.sort_by(f64::total_cmp);
            AggregateRow {
                episodes,
                split,
                length,
                seeds: accs.len(),
                p10: percentile(&accs, 0.1),
                p50: percentile(&accs, 0.5),
                p90: percentile(&accs, 0.9),
            }
        })
        .collect())
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.episodes, r.split, r.length, r.seeds, r.p10, r.p50, r.p90
        );
    }
    out
}
