use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::controller::SelectMode;
use crate::error::{Error, Result};
use crate::mdp::{render_trace, run_episode, trace_header, Env};
use crate::numeric::checkpoint::Checkpoint;
use crate::numeric::rng::{SeededRng, Stream};
use crate::problem::dataset::{gen_extrapolation_set, Dataset, LanguagePair, Split};
use crate::problem::expr::ProblemInstance;
use crate::problem::io::{read_dataset, write_dataset};
use crate::problem::vocab::{Language, Task};
use crate::training::eval::{format_row, CSV_HEADER};
use crate::training::{
    aggregate, aggregate_csv, train as train_seed, EvalReport, EvalRow, Learner, Observer,
};

use super::config::{parse_length_list, parse_pairs, ExperimentConfig};
use super::{EvalArgs, ExportArgs, GenerateArgs, TraceArgs, TrainArgs};

pub const CONFIG_FILE: &str = "config.txt";
pub const SOURCE_CONFIG_FILE: &str = "config.source.txt";
pub const EVAL_FILE: &str = "eval.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const LOG_FILE: &str = "log.txt";

pub fn seed_dir_name(seed: u64) -> String {
    format!("seed_{seed}")
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Refuse to reuse a non-empty location unless forced.
fn claim_output(path: &Path, force: bool) -> Result<()> {
    let occupied = match std::fs::read_dir(path) {
        Ok(mut entries) => entries.next().is_some(),
        Err(_) => path.exists(),
    };
    if occupied && !force {
        return Err(Error::OutputExists(path.to_path_buf()));
    }
    create_dir(path)
}

fn check_task(expected: Task, found: Task) -> Result<()> {
    if expected != found {
        return Err(Error::VocabMismatch {
            expected: expected.vocab_width(),
            found: found.vocab_width(),
        });
    }
    Ok(())
}

fn default_data_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join("data").join(format!(
        "{}-x{}-s{}",
        cfg.train.task, cfg.data_scale, cfg.data_seed
    ))
}

fn default_run_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let mut name = format!("{}-{}", cfg.train.task, cfg.train.model);
    if cfg.data_scale != 1 {
        name += &format!("-x{}", cfg.data_scale);
    }
    if !cfg.train.curriculum {
        name += "-nocurr";
    }
    root.join(name)
}

pub fn generate(args: &GenerateArgs, root: &Path) -> Result<()> {
    let (cfg, _) = args.config.resolve()?;
    let dir = cfg
        .output
        .clone()
        .unwrap_or_else(|| default_data_dir(root, &cfg));
    claim_output(&dir, args.force)?;
    let ds = cfg.dataset()?;
    write_dataset(&dir, &ds)?;
    println!("wrote {} instances to {}", ds.total(), dir.display());
    Ok(())
}

/// Streams eval rows and checkpoints of one seed into its directory.
struct SeedObserver {
    dir: PathBuf,
    seed: u64,
    eval: File,
    log: File,
    quiet: bool,
    failure: Option<Error>,
}

impl SeedObserver {
    fn new(dir: PathBuf, seed: u64, quiet: bool) -> Result<Self> {
        let open = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map_err(|e| Error::io(p, e))
        };
        let mut eval = open(EVAL_FILE)?;
        writeln!(eval, "{CSV_HEADER}").map_err(|e| Error::io(dir.join(EVAL_FILE), e))?;
        let log = open(LOG_FILE)?;
        Ok(SeedObserver {
            eval,
            log,
            dir,
            seed,
            quiet,
            failure: None,
        })
    }

    fn record(&mut self, result: std::io::Result<()>, name: &str) {
        if let Err(e) = result {
            self.failure
                .get_or_insert(Error::io(self.dir.join(name), e));
        }
    }
}

impl Observer for SeedObserver {
    fn on_eval(&mut self, rows: &[EvalRow]) {
        let mut text = String::new();
        for r in rows {
            text.push_str(&format_row(r));
            text.push('\n');
        }
        let res = self
            .eval
            .write_all(text.as_bytes())
            .and_then(|_| self.eval.flush());
        self.record(res, EVAL_FILE);
        if !self.quiet {
            if let Some(first) = rows.first() {
                let summary: Vec<String> = summarize(rows)
                    .into_iter()
                    .map(|((split, len), acc)| format!("{split}{len}={acc:.2}"))
                    .collect();
                eprintln!(
                    "seed {} episodes {}: {}",
                    self.seed,
                    first.episodes,
                    summary.join(" ")
                );
            }
        }
    }

    fn on_checkpoint(&mut self, episodes: u64, learner: &Learner) -> Result<()> {
        let dir = self.dir.join("checkpoints");
        create_dir(&dir)?;
        seed_checkpoint(learner, episodes, self.seed).save(&dir.join(format!("ep_{episodes}.ckpt")))
    }

    fn on_event(&mut self, message: &str) {
        let res = writeln!(self.log, "{message}");
        self.record(res, LOG_FILE);
        if !self.quiet {
            eprintln!("seed {}: {message}", self.seed);
        }
    }
}

/// Mean accuracy per (split, length) over language pairs.
fn summarize(rows: &[EvalRow]) -> BTreeMap<(Split, usize), f64> {
    let mut acc: BTreeMap<(Split, usize), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.split, r.length)).or_default();
        e.0 += r.accuracy;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

fn seed_checkpoint(learner: &Learner, episodes: u64, seed: u64) -> Checkpoint {
    learner
        .to_checkpoint()
        .with_meta("episodes", episodes)
        .with_meta("seed", seed)
}

fn train_one(
    cfg: &ExperimentConfig,
    data: &Dataset,
    run_dir: &Path,
    seed: u64,
    quiet: bool,
) -> Result<()> {
    let dir = run_dir.join(seed_dir_name(seed));
    create_dir(&dir)?;
    let mut seed_cfg = cfg.clone();
    seed_cfg.seed = seed;
    seed_cfg.seeds = 1;
    write(&dir.join(CONFIG_FILE), &seed_cfg.to_text())?;
    let mut observer = SeedObserver::new(dir.clone(), seed, quiet)?;
    let outcome = train_seed(&cfg.train, data, seed, &mut observer)?;
    if let Some(e) = observer.failure.take() {
        return Err(e);
    }
    let mut log = format!(
        "episodes={}\nall_data_added_at={}\n",
        outcome.episodes, outcome.all_data_added_at
    );
    if let Some(at) = outcome.target_reached_at {
        log += &format!("target_reached_at={at}\n");
    }
    write(&dir.join("summary.txt"), &log)?;
    write(&dir.join(EVAL_FILE), &outcome.report.to_csv())?;
    seed_checkpoint(&outcome.learner, outcome.episodes, seed).save(&dir.join(CHECKPOINT_FILE))
}

pub fn train(args: &TrainArgs, root: &Path) -> Result<()> {
    let (cfg, source) = args.config.resolve()?;
    if cfg.seeds == 0 {
        return Err(Error::Config("seeds must be at least 1".into()));
    }
    let run_dir = cfg
        .output
        .clone()
        .unwrap_or_else(|| default_run_dir(root, &cfg));
    let data = match &cfg.data {
        Some(dir) => {
            let mut ds = read_dataset(dir)?;
            check_task(cfg.train.task, ds.task)?;
            ds.restrict_lengths(cfg.lengths.clone());
            ds
        }
        None => cfg.dataset()?,
    };
    claim_output(&run_dir, args.force)?;
    write(&run_dir.join(CONFIG_FILE), &cfg.to_text())?;
    if let Some(text) = source {
        write(&run_dir.join(SOURCE_CONFIG_FILE), &text)?;
    }
    if cfg.data.is_none() {
        write_dataset(&run_dir.join("data"), &data)?;
    }

    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| cfg.seed + i).collect();
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&seed) = seeds.get(i) else { break };
        if let Err(e) = train_one(&cfg, &data, &run_dir, seed, args.quiet) {
            failure.lock().expect("poisoned").get_or_insert(e);
            break;
        }
    };
    std::thread::scope(|s| {
        for _ in 0..args.jobs.clamp(1, seeds.len()) {
            s.spawn(worker);
        }
    });
    if let Some(e) = failure.into_inner().expect("poisoned") {
        return Err(e);
    }
    println!("trained {} seed(s) in {}", seeds.len(), run_dir.display());
    Ok(())
}

fn load_learner(path: &Path) -> Result<(Learner, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    Ok((Learner::from_checkpoint(&ckpt)?, ckpt))
}

fn meta_u64(ckpt: &Checkpoint, key: &str) -> u64 {
    ckpt.meta.get(key).and_then(|v| v.parse().ok()).unwrap_or(0)
}

fn all_pairs() -> Vec<LanguagePair> {
    Language::all()
        .flat_map(|s| Language::all().map(move |t| LanguagePair::new(s, t)))
        .collect()
}

/// Language pairs to evaluate: from the dataset when given, otherwise every
/// pair the task allows.
fn eval_pairs(task: Task, data: Option<&Dataset>, heldout_only: bool) -> Result<Vec<LanguagePair>> {
    match (task, data) {
        (_, Some(ds)) if heldout_only => Ok(ds.pairs.held_out.clone()),
        (_, Some(ds)) => Ok(ds.pairs.train.clone()),
        (Task::Numerical, None) => Ok(vec![LanguagePair::numerals()]),
        (Task::Multilingual, None) if heldout_only => Err(Error::Config(
            "held-out pairs are defined by a dataset; pass --data".into(),
        )),
        (Task::Multilingual, None) => Ok(all_pairs()),
    }
}

type Groups = BTreeMap<(usize, LanguagePair), Vec<ProblemInstance>>;

fn dataset_groups(ds: &Dataset, split: Split, heldout_only: bool) -> Groups {
    if heldout_only {
        ds.grouped(Split::HeldOut)
    } else {
        ds.grouped(split)
    }
}

fn load_data(dir: Option<&PathBuf>, task: Task) -> Result<Option<Dataset>> {
    dir.map(|d| {
        let ds = read_dataset(d)?;
        check_task(task, ds.task)?;
        Ok(ds)
    })
    .transpose()
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let (learner, ckpt) = load_learner(&args.checkpoint)?;
    let data = load_data(args.data.as_ref(), learner.task)?;
    let split: Split = if args.heldout_only {
        Split::HeldOut
    } else {
        args.split.parse()?
    };
    let groups = match (&args.lengths, &data) {
        (Some(lengths), _) => {
            let pairs = eval_pairs(learner.task, data.as_ref(), args.heldout_only)?;
            gen_extrapolation_set(&parse_length_list(lengths)?, &pairs, args.n, args.data_seed)?
        }
        (None, Some(ds)) => dataset_groups(ds, split, args.heldout_only),
        (None, None) => return Err(Error::Config("pass --data or --lengths".into())),
    };
    let seed = args.seed.unwrap_or_else(|| meta_u64(&ckpt, "seed"));
    let rows = learner.evaluate_groups(
        &groups,
        split,
        meta_u64(&ckpt, "episodes"),
        seed,
        args.max_per_group,
    )?;
    let mut report = EvalReport::default();
    report.extend(rows);
    emit(args.out.as_ref(), &report.to_csv())
}

pub fn trace(args: &TraceArgs) -> Result<()> {
    let (learner, _) = load_learner(&args.checkpoint)?;
    if learner.baseline.is_some() {
        return Err(Error::InvalidArgument(
            "the recurrent baseline answers in one step and has no execution trace".into(),
        ));
    }
    let problems: Vec<ProblemInstance> = if !args.expr.is_empty() {
        let pair = match &args.pair {
            Some(p) => p.parse()?,
            None => LanguagePair::numerals(),
        };
        args.expr
            .iter()
            .map(|e| Ok(ProblemInstance::new(e.parse()?, pair.src, pair.tgt)))
            .collect::<Result<_>>()?
    } else {
        let data = load_data(args.data.as_ref(), learner.task)?;
        let lengths = args.lengths.as_deref().map(parse_length_list).transpose()?;
        let mut pool: Vec<ProblemInstance> = match (&data, &lengths) {
            (Some(ds), _) => {
                let split: Split = args.split.parse()?;
                dataset_groups(ds, split, split == Split::HeldOut)
                    .into_iter()
                    .filter(|((l, _), _)| lengths.as_ref().is_none_or(|ls| ls.contains(l)))
                    .flat_map(|(_, v)| v)
                    .collect()
            }
            (None, Some(ls)) => {
                let pairs = eval_pairs(learner.task, None, false)?;
                gen_extrapolation_set(ls, &pairs, args.n, args.seed)?
                    .into_values()
                    .flatten()
                    .collect()
            }
            (None, None) => return Err(Error::Config("pass --data, --lengths or --expr".into())),
        };
        let mut rng = SeededRng::new(args.seed, Stream::Trace, 0);
        rng.shuffle(&mut pool);
        pool.truncate(args.n);
        pool
    };
    let mode = if args.sample {
        SelectMode::Sample
    } else {
        SelectMode::Greedy
    };
    let policy = learner.policy(mode);
    let env = Env::new(&learner.modules, learner.horizon);
    let mut out = String::new();
    for (i, p) in problems.iter().enumerate() {
        let mut rng = SeededRng::new(args.seed, Stream::Trace, 1 + i as u64);
        let trace = run_episode(&env, policy.as_ref(), p, &mut rng)?;
        out.push_str(&trace_header(&trace, args.seed));
        out.push('\n');
        out.push_str(&render_trace(&trace));
        out.push('\n');
    }
    emit(args.out.as_ref(), &out)
}

/// Config of a seed run with the per-seed keys removed.
fn shared_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = parse_pairs(&text)?;
    pairs.remove("seed");
    pairs.remove("seeds");
    Ok(pairs)
}

pub fn export(args: &ExportArgs) -> Result<()> {
    let entries = std::fs::read_dir(&args.run).map_err(|e| Error::io(&args.run, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seed_"))
                && p.join(EVAL_FILE).is_file()
        })
        .collect();
    dirs.sort();
    let Some(first) = dirs.first() else {
        return Err(Error::NoRuns(args.run.clone()));
    };
    let reference = shared_config(&first.join(CONFIG_FILE))?;
    let mut reports = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        let cfg = shared_config(&dir.join(CONFIG_FILE))?;
        if let Some(key) = reference
            .keys()
            .chain(cfg.keys())
            .find(|k| reference.get(*k) != cfg.get(*k))
        {
            return Err(Error::InconsistentRuns(format!(
                "{} and {} differ in {key}",
                first.display(),
                dir.display()
            )));
        }
        let path = dir.join(EVAL_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        reports.push(EvalReport::parse_csv(&text)?);
    }
    let text = aggregate_csv(&aggregate(&reports)?);
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.run.join(AGGREGATE_FILE));
    write(&out, &text)?;
    println!(
        "aggregated {} seed(s) into {}",
        reports.len(),
        out.display()
    );
    Ok(())
}
