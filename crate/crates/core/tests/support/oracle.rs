//! An independent recursive-descent evaluator, and a recorded 20-term
//! execution replayed step by step with exact reducers.

use crl_core::controller::{Action, ActionSample};
use crl_core::mdp::{render_trace, run_episode, Env, EnvState, HorizonMode, Policy};
use crl_core::modules::{ModuleConfig, ModuleSet};
use crl_core::numeric::rng::{SeededRng, Stream};
use crl_core::problem::expr::{gen_expression, Expression, ProblemInstance};
use crl_core::problem::vocab::NUMERICAL_WIDTH;
use crl_core::Result;

/// expr := term (('+' | '-') term)*, term := digit ('*' digit)*, evaluated
/// exactly in i128 and reduced mod 10 only at the end.
struct Parser<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
}

impl Parser<'_> {
    fn digit(&mut self) -> i128 {
        let c = self.chars.next().expect("digit expected");
        c.to_digit(10).expect("digit expected") as i128
    }

    fn term(&mut self) -> i128 {
        let mut v = self.digit();
        while self.chars.peek() == Some(&'*') {
            self.chars.next();
            v *= self.digit();
        }
        v
    }

    fn expr(&mut self) -> i128 {
        let mut v = self.term();
        while let Some(&op) = self.chars.peek() {
            self.chars.next();
            let t = self.term();
            match op {
                '+' => v += t,
                '-' => v -= t,
                other => panic!("unexpected {other}"),
            }
        }
        v
    }
}

pub fn oracle(s: &str) -> u8 {
    let mut p = Parser {
        chars: s.chars().peekable(),
    };
    let v = p.expr();
    assert!(p.chars.next().is_none());
    v.rem_euclid(10) as u8
}

/// `n` random expressions of 1 to 20 terms; also checks that printing and
/// parsing round-trips.
pub fn random_expressions_match(n: u64) {
    let mut rng = SeededRng::new(2024, Stream::Test, 0);
    for i in 0..n {
        let k = 1 + rng.below(20);
        let e = gen_expression(k, &mut rng).unwrap();
        let s = e.to_string();
        assert_eq!(e.eval_mod10(), oracle(&s), "expression {i}: {s}");
        let reparsed: Expression = s.parse().unwrap();
        assert_eq!(reparsed, e);
    }
}

pub const SOLVED: &str = "6*1*3-4+6*0*0+1-7-3+3+3*4+1+1+3+3+6+2+7";
pub const FAILED: &str = "5+6-4+5*7*3*3*8*0*1-4+6-3*5*3+6-0+0-4-6";

pub fn recorded_inputs_evaluate() {
    for (s, want) in [(SOLVED, 3), (FAILED, 0)] {
        let e: Expression = s.parse().unwrap();
        assert_eq!(e.num_terms(), 20);
        assert_eq!(e.eval_mod10(), want);
        assert_eq!(oracle(s), want);
    }
}

/// The recorded execution of `SOLVED`: the state before each action, the
/// window acted on (`None` for HALT), and the reduction it reports.
const RECORDED: &[(&str, Option<&str>, &str)] = &[
    (
        "6*1*3-4+6*0*0+1-7-3+3+[3*4]+1+1+3+3+6+2+7",
        Some("3*4"),
        "3 * 4 = 2",
    ),
    (
        "6*1*3-4+6*0*0+1-7-3+[3+2]+1+1+3+3+6+2+7",
        Some("3+2"),
        "3 + 2 = 5",
    ),
    (
        "6*1*3-4+6*0*0+[1-7]-3+5+1+1+3+3+6+2+7",
        Some("1-7"),
        "1 - 7 = 4",
    ),
    (
        "6*1*3-4+6*[0*0]+4-3+5+1+1+3+3+6+2+7",
        Some("0*0"),
        "0 * 0 = 0",
    ),
    (
        "6*1*3-4+6*0+[4-3]+5+1+1+3+3+6+2+7",
        Some("4-3"),
        "4 - 3 = 1",
    ),
    ("6*1*3-4+6*0+1+5+1+[1+3]+3+6+2+7", Some("1+3"), "1 + 3 = 4"),
    ("6*1*3-4+6*0+1+[5+1]+4+3+6+2+7", Some("5+1"), "5 + 1 = 6"),
    ("6*1*3-4+6*0+[1+6]+4+3+6+2+7", Some("1+6"), "1 + 6 = 7"),
    ("6*1*3-4+6*0+7+4+3+6+[2+7]", Some("2+7"), "2 + 7 = 9"),
    ("6*1*3-4+6*0+7+4+[3+6]+9", Some("3+6"), "3 + 6 = 9"),
    ("6*1*3-4+[6*0]+7+4+9+9", Some("6*0"), "6 * 0 = 0"),
    ("6*1*3-4+0+7+4+9+9", None, "tried to HALT"),
    ("6*1*3-4+0+7+4+[9+9]", Some("9+9"), "9 + 9 = 8"),
    ("6*[1*3]-4+0+7+4+8", Some("1*3"), "1 * 3 = 3"),
    ("6*3-4+[0+7]+4+8", Some("0+7"), "0 + 7 = 7"),
    ("[6*3]-4+7+4+8", Some("6*3"), "6 * 3 = 8"),
    ("[8-4]+7+4+8", Some("8-4"), "8 - 4 = 4"),
    ("[4+7]+4+8", Some("4+7"), "4 + 7 = 1"),
    ("[1+4]+8", Some("1+4"), "1 + 4 = 5"),
    ("[5+8]", Some("5+8"), "5 + 8 = 3"),
    ("3", None, "HALT"),
];

/// Replays the recorded choices: reduce at the bracketed position, else HALT.
struct Scripted;

impl Policy for Scripted {
    fn act(&self, state: &EnvState, _rng: &mut SeededRng) -> Result<ActionSample> {
        let (line, window, _) = RECORDED[state.step];
        let action = match window {
            Some(_) => Action::Reduce {
                reducer: 0,
                window: Some(line.find('[').unwrap()),
            },
            None => Action::Halt,
        };
        Ok(ActionSample {
            action,
            log_prob: 0.0,
            entropy: 0.0,
            value: 0.0,
        })
    }
}

pub fn recorded_execution_replays() {
    let modules = ModuleSet::new(ModuleConfig::hardcoded(), NUMERICAL_WIDTH, 0).unwrap();
    let env = Env::new(&modules, HorizonMode::default());
    let problem = ProblemInstance::numerical(SOLVED.parse().unwrap());
    let mut rng = SeededRng::new(0, Stream::Test, 0);
    let trace = run_episode(&env, &Scripted, &problem, &mut rng).unwrap();

    assert!(trace.correct());
    assert!(trace.halted_by_policy);
    assert_eq!(trace.steps.len(), RECORDED.len());
    // 21 actions, the last a terminating HALT: 20 charged steps.
    assert!((trace.total_return - (1.0 - 0.01 * 20.0)).abs() < 1e-12);

    let text = render_trace(&trace);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), RECORDED.len() + 1);
    assert_eq!(lines.last(), Some(&"END"));
    for (line, (state, window, note)) in lines.iter().zip(RECORDED) {
        let (shown, comment) = line.split_once('#').unwrap();
        assert_eq!(shown.trim_end(), *state);
        assert!(comment.trim().starts_with(note), "{line}");
        if let Some(w) = window {
            assert!(shown.contains(&format!("[{w}]")));
        }
    }
}
