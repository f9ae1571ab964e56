//! Ground-truth tier: the five rewrite rules applied one step at a time.
//!
//! A state `(a_ell, ..., a_1, a_0)` is written leading entry first, but stored
//! low index first so that `entries[i] == a_i`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::{pow2, GrayDigits};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct State {
    entries: Vec<i64>,
}

impl State {
    /// Builds a state from entries listed leading entry first.
    pub fn from_leading_first(entries: &[i64]) -> Result<Self> {
        Self::from_indexed(entries.iter().rev().copied().collect())
    }

    /// Builds a state from entries listed by index (`entries[i] == a_i`).
    pub fn from_indexed(entries: Vec<i64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidState(format!("need at least two entries, got {}", entries.len())));
        }
        if entries[0] < -1 {
            return Err(Error::InvalidState(format!("a_0 = {} is below -1", entries[0])));
        }
        if let Some(i) = entries.iter().skip(1).position(|&a| a < 0) {
            return Err(Error::InvalidState(format!("a_{} = {} is negative", i + 1, entries[i + 1])));
        }
        Ok(State { entries })
    }

    /// `S_k = (0, 2, 4, ..., 2^(2k), 0)`.
    pub fn start(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::Precondition("epochs start at k = 1".into()));
        }
        let mut entries = vec![0i64];
        for e in (1..=2 * k).rev() {
            entries.push(pow2(e)? as i64);
        }
        entries.push(0);
        Ok(State { entries })
    }

    /// `ell = |S| - 1`.
    pub fn ell(&self) -> usize {
        self.entries.len() - 1
    }

    /// `a_i`.
    pub fn get(&self, i: usize) -> i64 {
        self.entries[i]
    }

    /// Entries by index, `a_0` first.
    pub fn indexed(&self) -> &[i64] {
        &self.entries
    }

    pub fn leading_first(&self) -> Vec<i64> {
        self.entries.iter().rev().copied().collect()
    }

    pub(crate) fn add_at(&mut self, i: usize, delta: i64) -> Result<()> {
        let ell = self.ell();
        let slot = self.entries.get_mut(i).ok_or(Error::IndexOutOfRange { index: i, ell })?;
        *slot = slot.checked_add(delta).ok_or(Error::Overflow("entry update"))?;
        Ok(())
    }

    pub fn vars(&self) -> Result<StateVars> {
        state_vars(self)
    }

    pub fn classify(&self) -> RuleKind {
        classify(self)
    }

    /// Empty: `n = 0`, `sigma = -1` and the next rule is Zero rather than Halt.
    pub fn is_empty(&self) -> bool {
        is_empty(self)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (pos, a) in self.entries.iter().rev().enumerate() {
            if pos > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({self})")
    }
}

impl FromStr for State {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let body = text.trim().trim_start_matches('(').trim_end_matches(')');
        let entries = body
            .split(',')
            .map(|tok| tok.trim().parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { text: text.to_string(), reason: e.to_string() })?;
        State::from_leading_first(&entries).map_err(|e| Error::Parse { text: text.to_string(), reason: e.to_string() })
    }
}

impl Serialize for State {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for State {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// The five rules, in precedence order.
///
/// The state-variable table calls the Zero rule "Empty"; they are the same rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleKind {
    Overflow,
    Halt,
    Zero,
    Halve,
    Increment,
}

impl RuleKind {
    pub const ALL: [RuleKind; 5] = [
        RuleKind::Overflow,
        RuleKind::Halt,
        RuleKind::Zero,
        RuleKind::Halve,
        RuleKind::Increment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::Overflow => "Overflow",
            RuleKind::Halt => "Halt",
            RuleKind::Zero => "Zero",
            RuleKind::Halve => "Halve",
            RuleKind::Increment => "Increment",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sigma {
    Minus,
    Plus,
}

impl Sigma {
    pub fn as_i64(self) -> i64 {
        match self {
            Sigma::Minus => -1,
            Sigma::Plus => 1,
        }
    }

    pub fn flip(self) -> Sigma {
        match self {
            Sigma::Minus => Sigma::Plus,
            Sigma::Plus => Sigma::Minus,
        }
    }
}

impl Serialize for Sigma {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_i64(self.as_i64())
    }
}

/// `(n, ell, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct StateVars {
    pub n: u64,
    pub ell: u32,
    pub sigma: Sigma,
}

pub fn state_vars(s: &State) -> Result<StateVars> {
    let parities = s.entries[1..].iter().map(|a| a & 1 == 1).collect();
    let n = GrayDigits::from_low_first(parities)?.decode();
    let odd_sum = s.entries.iter().fold(false, |acc, a| acc ^ (a & 1 == 1));
    Ok(StateVars {
        n,
        ell: s.ell() as u32,
        sigma: if odd_sum { Sigma::Plus } else { Sigma::Minus },
    })
}

pub fn classify(s: &State) -> RuleKind {
    classify_with(s, Mutation::None)
}

fn classify_with(s: &State, mutation: Mutation) -> RuleKind {
    let ell = s.ell();
    let lead = s.entries[ell];
    let rest_even = s.entries[..ell].iter().all(|a| a & 1 == 0);
    if rest_even && lead & 1 == 1 {
        return RuleKind::Overflow;
    }
    if rest_even {
        // Zero's guard is the complement of the Halt pattern: the two LEADING
        // entries must not both vanish. Read literally, "(a_1, a_2) != (0, 0)"
        // would name the two lowest entries instead, which contradicts the
        // Halt pattern and the n = 2^ell - 1 value Zero must produce.
        let halt = match mutation {
            Mutation::HaltIgnoresSecondEntry => lead == 0,
            _ => lead == 0 && s.entries[ell - 1] == 0,
        };
        return if halt { RuleKind::Halt } else { RuleKind::Zero };
    }
    if s.entries[0] == -1 {
        RuleKind::Halve
    } else {
        RuleKind::Increment
    }
}

pub fn is_empty(s: &State) -> bool {
    // n = 0 and sigma = -1 together mean every entry is even.
    s.entries.iter().all(|a| a & 1 == 0) && classify(s) == RuleKind::Zero
}

/// Deliberate single-rule perturbations, used only to show the verification
/// suites can tell a broken rule set from the real one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Overflow prepends the 0 but forgets to increment the old leading entry.
    OverflowSkipsIncrement,
    /// Halt fires whenever the leading entry is 0.
    HaltIgnoresSecondEntry,
    /// Zero leaves `a_0` alone instead of decrementing it.
    ZeroKeepsLastEntry,
    /// Halve drops `a_1` instead of `a_0`.
    HalveDropsWrongEntry,
    /// Increment bumps the odd entry `a_i` itself instead of `a_{i+1}`.
    IncrementBumpsOddEntry,
}

impl Mutation {
    pub const PERTURBED: [Mutation; 5] = [
        Mutation::OverflowSkipsIncrement,
        Mutation::HaltIgnoresSecondEntry,
        Mutation::ZeroKeepsLastEntry,
        Mutation::HalveDropsWrongEntry,
        Mutation::IncrementBumpsOddEntry,
    ];
}

/// Applies one rule in place and returns it. On Halt the state is left untouched.
pub fn step_in_place(s: &mut State) -> Result<RuleKind> {
    step_in_place_with(s, Mutation::None)
}

pub fn step_in_place_with(s: &mut State, mutation: Mutation) -> Result<RuleKind> {
    let rule = classify_with(s, mutation);
    let ell = s.ell();
    match rule {
        RuleKind::Overflow => {
            if mutation != Mutation::OverflowSkipsIncrement {
                s.add_at(ell, 1)?;
            }
            s.entries.push(0);
        }
        RuleKind::Halt => {}
        RuleKind::Zero => {
            s.add_at(ell, 1)?;
            s.entries.extend([0, 0]);
            if mutation != Mutation::ZeroKeepsLastEntry {
                s.add_at(0, -1)?;
            }
        }
        RuleKind::Halve => {
            let drop = if mutation == Mutation::HalveDropsWrongEntry { 1 } else { 0 };
            s.entries.remove(drop);
            if s.entries.len() < 2 {
                return Err(Error::InvalidState(format!("Halve left {} entries", s.entries.len())));
            }
        }
        RuleKind::Increment => {
            let i = s
                .entries
                .iter()
                .position(|a| a & 1 == 1)
                .ok_or_else(|| Error::Unreachable { what: "Increment without an odd entry", state: s.clone() })?;
            if i == ell {
                return Err(Error::Unreachable { what: "Increment at the leading index", state: s.clone() });
            }
            let target = if mutation == Mutation::IncrementBumpsOddEntry { i } else { i + 1 };
            s.add_at(target, 1)?;
            s.add_at(0, -1)?;
        }
    }
    Ok(rule)
}

pub enum Step {
    Next(RuleKind, State),
    Halt,
}

/// `P(S)`.
pub fn step(s: &State) -> Result<Step> {
    let mut next = s.clone();
    match step_in_place(&mut next)? {
        RuleKind::Halt => Ok(Step::Halt),
        rule => Ok(Step::Next(rule, next)),
    }
}

/// One applied rule (or, in batched runs, a run of `count` identical Increments).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StepEvent {
    pub rule: RuleKind,
    pub count: u64,
    pub before: StateVars,
    /// `None` after Halt.
    pub after: Option<StateVars>,
}

/// Streaming consumer of step events. `step` is the index of the last step in the event.
pub trait TraceSink {
    fn record(&mut self, step: u64, event: &StepEvent, state: &State) -> Result<()>;
}

/// Discards every event.
pub struct NoTrace;

impl TraceSink for NoTrace {
    fn record(&mut self, _: u64, _: &StepEvent, _: &State) -> Result<()> {
        Ok(())
    }
}

impl<F: FnMut(u64, &StepEvent, &State) -> Result<()>> TraceSink for F {
    fn record(&mut self, step: u64, event: &StepEvent, state: &State) -> Result<()> {
        self(step, event, state)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RuleCounts {
    pub overflow: u64,
    pub halt: u64,
    pub zero: u64,
    pub halve: u64,
    pub increment: u64,
}

impl RuleCounts {
    pub fn add(&mut self, rule: RuleKind, count: u64) {
        let slot = match rule {
            RuleKind::Overflow => &mut self.overflow,
            RuleKind::Halt => &mut self.halt,
            RuleKind::Zero => &mut self.zero,
            RuleKind::Halve => &mut self.halve,
            RuleKind::Increment => &mut self.increment,
        };
        *slot += count;
    }

    pub fn get(&self, rule: RuleKind) -> u64 {
        match rule {
            RuleKind::Overflow => self.overflow,
            RuleKind::Halt => self.halt,
            RuleKind::Zero => self.zero,
            RuleKind::Halve => self.halve,
            RuleKind::Increment => self.increment,
        }
    }

    /// Steps taken, Halt excluded.
    pub fn steps(&self) -> u64 {
        self.overflow + self.zero + self.halve + self.increment
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Running(State),
    /// `step` is the 0-based index at which Halt was the applicable rule.
    Halted { step: u64, state: State },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub outcome: Outcome,
    pub counts: RuleCounts,
}

/// Steps `start` up to `max_steps` times, streaming one event per step.
pub fn run_naive(start: &State, max_steps: u64, sink: &mut impl TraceSink) -> Result<Run> {
    let mut state = start.clone();
    let mut counts = RuleCounts::default();
    for step in 0..max_steps {
        let before = state.vars()?;
        let rule = step_in_place(&mut state)?;
        if rule == RuleKind::Halt {
            counts.add(RuleKind::Halt, 1);
            sink.record(step, &StepEvent { rule, count: 1, before, after: None }, &state)?;
            return Ok(Run { outcome: Outcome::Halted { step, state }, counts });
        }
        counts.add(rule, 1);
        let event = StepEvent { rule, count: 1, before, after: Some(state.vars()?) };
        sink.record(step + 1, &event, &state)?;
    }
    Ok(Run { outcome: Outcome::Running(state), counts })
}

/// Checks one step's `(n, ell, sigma)` change against the state-variable table,
/// including the configuration the rule requires beforehand.
pub fn table_row_holds(rule: RuleKind, before: StateVars, after: Option<StateVars>) -> bool {
    let full = |ell: u32| pow2(ell).map(|p| p - 1).ok();
    match (rule, after) {
        (RuleKind::Halt, None) => before.n == 0 && before.sigma == Sigma::Minus,
        (RuleKind::Halt, Some(_)) | (_, None) => false,
        (RuleKind::Overflow, Some(a)) => {
            Some(before.n) == full(before.ell)
                && before.sigma == Sigma::Plus
                && a.n == 0
                && a.ell == before.ell + 1
                && a.sigma == Sigma::Minus
        }
        (RuleKind::Zero, Some(a)) => {
            before.n == 0
                && before.sigma == Sigma::Minus
                && Some(a.n) == full(before.ell)
                && a.ell == before.ell + 2
                && a.sigma == Sigma::Minus
        }
        (RuleKind::Halve, Some(a)) => {
            a.n == before.n / 2 && before.ell >= 1 && a.ell == before.ell - 1 && a.sigma == before.sigma.flip()
        }
        (RuleKind::Increment, Some(a)) => {
            let n = before.n as i128 + i128::from(before.sigma.as_i64());
            a.n as i128 == n && a.ell == before.ell && a.sigma == before.sigma
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(text: &str) -> State {
        text.parse().unwrap()
    }

    fn next(s: &State) -> State {
        match step(s).unwrap() {
            Step::Next(_, t) => t,
            Step::Halt => panic!("unexpected halt at {s}"),
        }
    }

    #[test]
    fn text_format_round_trips() {
        let s = st("0,2,4,0");
        assert_eq!(s.to_string(), "0,2,4,0");
        assert_eq!(s.get(1), 4);
        assert_eq!(s.ell(), 3);
        assert_eq!(st(" (1, 1,4,4,11,17,-1) ").to_string(), "1,1,4,4,11,17,-1");
    }

    #[test]
    fn malformed_states_rejected() {
        assert!("5".parse::<State>().is_err());
        assert!("".parse::<State>().is_err());
        assert!("0,x,1".parse::<State>().is_err());
        assert!("0,-1,2".parse::<State>().is_err());
        assert!("0,2,-2".parse::<State>().is_err());
        assert!(State::from_indexed(vec![3]).is_err());
    }

    #[test]
    fn start_states() {
        assert_eq!(State::start(1).unwrap(), st("0,2,4,0"));
        assert_eq!(State::start(2).unwrap(), st("0,2,4,8,16,0"));
        assert!(State::start(0).is_err());
    }

    #[test]
    fn state_vars_examples() {
        let v = st("0,2,4,0").vars().unwrap();
        assert_eq!((v.n, v.ell, v.sigma), (0, 3, Sigma::Minus));
        let v = st("0,0,3,2,6,8,18,-1").vars().unwrap();
        assert_eq!((v.n, v.ell, v.sigma), (31, 7, Sigma::Minus));
        let v = st("1,1,4,4,11,17,-1").vars().unwrap();
        assert_eq!((v.n, v.ell, v.sigma), (34, 6, Sigma::Plus));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(st("2,2,6,8,18,0").classify(), RuleKind::Zero);
        assert_eq!(st("0,0,3,2,6,8,18,-1").classify(), RuleKind::Halve);
        assert_eq!(st("0,0,2,4").classify(), RuleKind::Halt);
        assert_eq!(st("1,2,4,0").classify(), RuleKind::Overflow);
        assert_eq!(st("0,0,3,2,6,8,18").classify(), RuleKind::Increment);
        // a lone odd a_0 = -1 that is not all-even goes to Halve, not Overflow
        assert_eq!(st("0,2,-1").classify(), RuleKind::Halve);
    }

    #[test]
    fn step_examples() {
        let s1 = next(&st("2,2,6,8,18,0"));
        assert_eq!(s1, st("0,0,3,2,6,8,18,-1"));
        let s2 = next(&s1);
        assert_eq!(s2, st("0,0,3,2,6,8,18"));
        let s3 = next(&s2);
        assert_eq!(s3, st("0,1,3,2,6,8,17"));
        assert_eq!(s2.vars().unwrap().n, 15);
        assert_eq!(s3.vars().unwrap().n, 16);
        assert_eq!(next(&st("1,2,4,0")), st("0,2,2,4,0"));
        assert!(matches!(step(&st("0,0,2,4")).unwrap(), Step::Halt));
    }

    #[test]
    fn emptiness() {
        assert!(st("0,2,4,0").is_empty());
        assert!(!st("0,0,2,4").is_empty());
        assert!(!st("0,0,3,2,6,8,18").is_empty());
        assert!(st("2,2,6,8,18,0").is_empty());
    }

    #[test]
    fn run_naive_first_step_is_zero() {
        let run = run_naive(&st("0,2,4,0"), 1, &mut NoTrace).unwrap();
        assert_eq!(run.outcome, Outcome::Running(st("0,0,1,2,4,-1")));
        assert_eq!(run.counts.zero, 1);
    }

    #[test]
    fn run_naive_zero_budget_is_identity() {
        let run = run_naive(&st("0,2,4,0"), 0, &mut NoTrace).unwrap();
        assert_eq!(run.outcome, Outcome::Running(st("0,2,4,0")));
    }

    #[test]
    fn run_naive_reports_halt() {
        let run = run_naive(&st("0,0,2,4"), 1, &mut NoTrace).unwrap();
        assert_eq!(run.outcome, Outcome::Halted { step: 0, state: st("0,0,2,4") });
    }

    #[test]
    fn run_naive_never_halts_from_s1_and_obeys_table() {
        let mut checked = 0u64;
        let mut sink = |_: u64, ev: &StepEvent, s: &State| -> Result<()> {
            assert!(table_row_holds(ev.rule, ev.before, ev.after), "{ev:?} at {s}");
            if ev.rule == RuleKind::Increment {
                assert_eq!(ev.before.sigma, ev.after.unwrap().sigma);
            }
            checked += 1;
            Ok(())
        };
        let run = run_naive(&State::start(1).unwrap(), 200_000, &mut sink).unwrap();
        assert!(matches!(run.outcome, Outcome::Running(_)));
        assert_eq!(checked, 200_000);
    }

    #[test]
    fn mutations_change_behaviour() {
        let mut s = st("2,2,6,8,18,0");
        step_in_place_with(&mut s, Mutation::ZeroKeepsLastEntry).unwrap();
        assert_eq!(s, st("0,0,3,2,6,8,18,0"));
        let mut s = st("0,2,4,0");
        assert_eq!(step_in_place_with(&mut s, Mutation::HaltIgnoresSecondEntry).unwrap(), RuleKind::Halt);
    }
}
