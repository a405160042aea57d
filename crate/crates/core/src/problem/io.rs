//! Dataset files.
//!
//! One instance per line: `src<TAB>tgt<TAB>space-separated token ids<TAB>answer id`.
//! A directory holds `train.tsv`, `val.tsv`, `test.tsv`, `heldout.tsv` and a
//! `manifest.txt` of `key=value` lines recording how the data was built.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::dataset::{CappedCount, Dataset, LanguagePair, PairSplit, Split, SplitPools};
use super::expr::{Expression, ProblemInstance};
use super::vocab::{Language, Task};

pub const MANIFEST: &str = "manifest.txt";

pub fn split_file(split: Split) -> String {
    format!("{}.tsv", split.name())
}

pub fn format_instance(inst: &ProblemInstance) -> String {
    let ids: Vec<String> = inst.input_ids().iter().map(usize::to_string).collect();
    format!(
        "{}\t{}\t{}\t{}",
        inst.src,
        inst.tgt,
        ids.join(" "),
        inst.answer_id()
    )
}

pub fn parse_instance(line: &str) -> Result<ProblemInstance> {
    let bad = |msg: String| Error::parse("dataset line", format!("{msg}: {line:?}"));
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(bad(format!("expected 4 fields, found {}", fields.len())));
    }
    let lang = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| bad(e.to_string()))
            .and_then(Language::new)
    };
    let (src, tgt) = (lang(fields[0])?, lang(fields[1])?);
    let ids = fields[2]
        .split(' ')
        .map(|t| t.parse::<usize>().map_err(|e| bad(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let answer: usize = fields[3]
        .parse()
        .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
    let (lang_in, expr) = Expression::from_tokens(&ids)?;
    if lang_in != src {
        return Err(bad("tokens are not in the source language".into()));
    }
    let inst = ProblemInstance::new(expr, src, tgt);
    if inst.answer_id() != answer {
        return Err(bad(format!(
            "answer {answer} disagrees with evaluation {}",
            inst.answer_id()
        )));
    }
    Ok(inst)
}

fn pairs_to_string(pairs: &[LanguagePair]) -> String {
    pairs
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_pairs(s: &str) -> Result<Vec<LanguagePair>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(str::parse).collect()
}

pub fn manifest_text(ds: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "task={}", ds.task);
    let _ = writeln!(out, "seed={}", ds.seed);
    let _ = writeln!(out, "scale={}", ds.scale);
    let lengths: Vec<String> = ds.lengths().iter().map(usize::to_string).collect();
    let _ = writeln!(out, "lengths={}", lengths.join(","));
    let _ = writeln!(out, "train_pairs={}", pairs_to_string(&ds.pairs.train));
    let _ = writeln!(out, "heldout_pairs={}", pairs_to_string(&ds.pairs.held_out));
    let capped: Vec<String> = ds
        .capped
        .iter()
        .map(|c| format!("{}:{}:{}", c.length, c.requested, c.cap))
        .collect();
    let _ = writeln!(out, "capped={}", capped.join(","));
    for ((k, pair), pools) in &ds.pools {
        let _ = writeln!(
            out,
            "count.{k}.{pair}={},{},{}",
            pools.train.len(),
            pools.val.len(),
            pools.test.len()
        );
    }
    for ((k, pair), insts) in &ds.held_out {
        let _ = writeln!(out, "heldout.{k}.{pair}={}", insts.len());
    }
    for split in [Split::Train, Split::Val, Split::Test, Split::HeldOut] {
        let _ = writeln!(out, "lines.{split}={}", ds.count(split));
    }
    let _ = writeln!(out, "total={}", ds.total());
    out
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for split in [Split::Train, Split::Val, Split::Test, Split::HeldOut] {
        if split == Split::HeldOut && ds.held_out.is_empty() {
            continue;
        }
        let mut text = String::new();
        for inst in ds.instances(split) {
            text.push_str(&format_instance(inst));
            text.push('\n');
        }
        let path = dir.join(split_file(split));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest_text(ds)).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let get = |k: &str| {
        manifest
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::parse("manifest", format!("missing {k}")))
    };
    let num = |k: &str| {
        get(k)?
            .parse::<u64>()
            .map_err(|e| Error::parse("manifest", format!("{k}: {e}")))
    };
    let task: Task = get("task")?.parse()?;
    let pairs = PairSplit {
        train: parse_pairs(get("train_pairs")?)?,
        held_out: parse_pairs(get("heldout_pairs")?)?,
    };
    let capped = get("capped")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            let parts: Vec<usize> = s.split(':').filter_map(|p| p.parse().ok()).collect();
            match parts[..] {
                [length, requested, cap] => Ok(CappedCount {
                    length,
                    requested,
                    cap,
                }),
                _ => Err(Error::parse("manifest", format!("bad capped entry {s}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pools: BTreeMap<(usize, LanguagePair), SplitPools> = BTreeMap::new();
    let mut held_out: BTreeMap<(usize, LanguagePair), Vec<ProblemInstance>> = BTreeMap::new();
    for split in [Split::Train, Split::Val, Split::Test, Split::HeldOut] {
        let path = dir.join(split_file(split));
        if split == Split::HeldOut && !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for line in text.lines().filter(|l| !l.is_empty()) {
            let inst = parse_instance(line)?;
            let key = (inst.num_terms(), LanguagePair::new(inst.src, inst.tgt));
            match split {
                Split::HeldOut => held_out.entry(key).or_default().push(inst),
                s => pools.entry(key).or_default().get_mut(s).push(inst),
            }
        }
    }
    let ds = Dataset {
        task,
        seed: num("seed")?,
        scale: num("scale")? as usize,
        pairs,
        pools,
        held_out,
        capped,
    };
    if let Ok(total) = num("total") {
        if total as usize != ds.total() {
            return Err(Error::parse(
                "dataset",
                format!("manifest total {total} but files hold {}", ds.total()),
            ));
        }
    }
    Ok(ds)
}
