//! Tiers T1 and T2.
//!
//! T1 replaces each maximal run of Increments by a single jump computed from
//! the Gray-code distance `d_j`, and walks from one empty state to the next.
//! T2 skips transits entirely: along rooted embanked states the next bump
//! index and the new `h` tuple follow from 2-adic valuations alone.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::machine::{step_in_place, NoTrace, Outcome, RuleCounts, RuleKind, Run, Sigma, State, StepEvent, TraceSink};
use crate::numerics::{d, nu2, pow2};

/// An `(h_1, h_2)` or `(s_1, s_2)` tuple.
pub type Pair = (u64, u64);

/// Number of consecutive Increments starting at `s`.
///
/// The run ends at whichever boundary comes first: `a_0` reaching -1 (Halve),
/// `n` reaching 0 with `sigma = -1` (Zero/Halt), or `n` reaching `2^ell - 1`
/// with `sigma = +1` (Overflow). The first and the other two never coincide.
pub fn increment_run_length(s: &State) -> Result<u64> {
    if s.classify() != RuleKind::Increment {
        return Err(Error::Precondition(format!("{s} does not start an Increment run")));
    }
    let vars = s.vars()?;
    let to_halve = u64::try_from(s.get(0) + 1).map_err(|_| Error::Unreachable { what: "Increment with a_0 < 0", state: s.clone() })?;
    let to_edge = match vars.sigma {
        Sigma::Plus => pow2(vars.ell)? - 1 - vars.n,
        Sigma::Minus => vars.n,
    };
    if to_halve == to_edge {
        return Err(Error::Unreachable { what: "two Increment boundaries coincide", state: s.clone() });
    }
    let count = to_halve.min(to_edge);
    if count == 0 {
        return Err(Error::Unreachable { what: "empty Increment run", state: s.clone() });
    }
    Ok(count)
}

/// Applies `count` Increments in one jump: `a_i += d_i(n, n')` for `i >= 1`
/// and `a_0 -= count`, where `n' = n + sigma * count`.
pub fn increment_by(s: &State, count: u64) -> Result<State> {
    if count == 0 {
        return Ok(s.clone());
    }
    let limit = increment_run_length(s)?;
    if count > limit {
        return Err(Error::Precondition(format!("{count} Increments requested from {s}, run has {limit}")));
    }
    let vars = s.vars()?;
    let n_next = match vars.sigma {
        Sigma::Plus => vars.n + count,
        Sigma::Minus => vars.n - count,
    };
    let mut entries = s.indexed().to_vec();
    entries[0] = entries[0].checked_sub(count as i64).ok_or(Error::Overflow("increment_by"))?;
    for (i, a) in entries.iter_mut().enumerate().skip(1) {
        let delta = i64::try_from(d(i as u32, vars.n, n_next)).map_err(|_| Error::Overflow("increment_by"))?;
        *a = a.checked_add(delta).ok_or(Error::Overflow("increment_by"))?;
    }
    State::from_indexed(entries)
}

/// A maximal Increment run in one jump. Returns the state where the run stops.
pub fn batch_increments(s: &State) -> Result<(State, u64)> {
    let count = increment_run_length(s)?;
    Ok((increment_by(s, count)?, count))
}

/// [`run_naive`](crate::machine::run_naive) with Increment runs batched.
/// Stops at exactly `max_steps` steps, splitting a run if needed.
pub fn run_batched(start: &State, max_steps: u64, sink: &mut impl TraceSink) -> Result<Run> {
    let mut state = start.clone();
    let mut counts = RuleCounts::default();
    let mut done = 0u64;
    while done < max_steps {
        let before = state.vars()?;
        let rule = state.classify();
        let count = match rule {
            RuleKind::Increment => {
                let count = increment_run_length(&state)?.min(max_steps - done);
                state = increment_by(&state, count)?;
                count
            }
            RuleKind::Halt => {
                counts.add(RuleKind::Halt, 1);
                sink.record(done, &StepEvent { rule, count: 1, before, after: None }, &state)?;
                return Ok(Run { outcome: Outcome::Halted { step: done, state }, counts });
            }
            _ => {
                step_in_place(&mut state)?;
                1
            }
        };
        done += count;
        counts.add(rule, count);
        sink.record(done, &StepEvent { rule, count, before, after: Some(state.vars()?) }, &state)?;
    }
    Ok(Run { outcome: Outcome::Running(state), counts })
}

/// States seen at the rule boundaries of a transit that matter for the endgame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Milestones {
    pub post_zero: State,
    /// `(before, after)` the first Halve.
    pub first_halve: Option<(State, State)>,
    pub pre_overflow: Option<State>,
}

/// What happened between an empty state `E` and `N(E)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransitSummary {
    pub start: State,
    pub successor: State,
    /// `(s_i, h_i)` at each of the first two Halves.
    pub halves: Vec<(u64, u64)>,
    pub halve_count: u64,
    pub saw_overflow: bool,
    pub weakly_embanked: bool,
    pub embanked: bool,
    /// The `i` with `N(E) = E[i]`, when the successor has that shape.
    pub bump_index: Option<usize>,
    pub step_count: u64,
    pub counts: RuleCounts,
    pub milestones: Milestones,
}

impl TransitSummary {
    pub fn h(&self) -> Option<Pair> {
        match self.halves[..] {
            [(_, h1), (_, h2), ..] => Some((h1, h2)),
            _ => None,
        }
    }

    pub fn s(&self) -> Option<Pair> {
        match self.halves[..] {
            [(s1, _), (s2, _), ..] => Some((s1, s2)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitMode {
    /// T0: one rule at a time.
    Naive,
    /// T1: Increment runs in one jump.
    Batched,
}

/// `T_E` via T1. Fails with [`Error::Halted`] if Halt is reached.
pub fn next_empty(e: &State) -> Result<TransitSummary> {
    transit(e, TransitMode::Batched, &mut NoTrace)
}

/// `T_E` via T0, streaming every step to `sink`.
pub fn next_empty_naive(e: &State, sink: &mut impl TraceSink) -> Result<TransitSummary> {
    transit(e, TransitMode::Naive, sink)
}

pub fn transit(e: &State, mode: TransitMode, sink: &mut impl TraceSink) -> Result<TransitSummary> {
    if !e.is_empty() {
        return Err(Error::Precondition(format!("{e} is not empty")));
    }
    let mut state = e.clone();
    let mut counts = RuleCounts::default();
    let mut steps = 0u64;
    let mut halves = Vec::with_capacity(2);
    let mut clean_to_second_halve = true;
    let mut post_zero = None;
    let mut first_halve = None;
    let mut pre_overflow = None;

    loop {
        let rule = state.classify();
        let before = state.vars()?;
        let count = match (rule, mode) {
            (RuleKind::Halt, _) => return Err(Error::Halted { state }),
            (RuleKind::Increment, TransitMode::Batched) => {
                let (next, count) = batch_increments(&state)?;
                state = next;
                count
            }
            (RuleKind::Increment, TransitMode::Naive) => {
                step_in_place(&mut state)?;
                1
            }
            _ => {
                let prior = state.clone();
                step_in_place(&mut state)?;
                match rule {
                    RuleKind::Zero => post_zero = Some(state.clone()),
                    RuleKind::Halve => {
                        if halves.len() < 2 {
                            halves.push((before.n, state.vars()?.n));
                        }
                        if first_halve.is_none() {
                            first_halve = Some((prior, state.clone()));
                        }
                    }
                    RuleKind::Overflow => pre_overflow = Some(prior),
                    _ => {}
                }
                let permitted = (rule == RuleKind::Zero && steps == 0) || rule == RuleKind::Halve;
                if !permitted && halves.len() < 2 {
                    clean_to_second_halve = false;
                }
                1
            }
        };
        steps += count;
        counts.add(rule, count);
        sink.record(steps, &StepEvent { rule, count, before, after: Some(state.vars()?) }, &state)?;
        if state.is_empty() {
            break;
        }
    }

    let weakly_embanked = clean_to_second_halve && counts.halve >= 2;
    let embanked = weakly_embanked && counts.halve == 2 && counts.overflow == 0 && counts.zero == 1;
    let bump_index = bump_index_between(e, &state);
    Ok(TransitSummary {
        start: e.clone(),
        successor: state,
        halves,
        halve_count: counts.halve,
        saw_overflow: counts.overflow > 0,
        weakly_embanked,
        embanked,
        bump_index,
        step_count: steps,
        counts,
        milestones: Milestones {
            post_zero: post_zero.ok_or_else(|| Error::Unreachable { what: "transit without Zero", state: e.clone() })?,
            first_halve,
            pre_overflow,
        },
    })
}

/// The unique `i` with `to == from[i]`, if any.
pub fn bump_index_between(from: &State, to: &State) -> Option<usize> {
    if from.ell() != to.ell() {
        return None;
    }
    let mut found = None;
    for (i, (a, b)) in from.indexed().iter().zip(to.indexed()).enumerate() {
        match b - a {
            0 => {}
            2 if found.is_none() => found = Some(i),
            _ => return None,
        }
    }
    found
}

/// One point of the `n` curve across a transit. `rule` is `None` for the start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CurvePoint {
    pub step: u64,
    pub n: u64,
    pub sigma: i64,
    pub rule: Option<RuleKind>,
}

/// `n` and `sigma` after every step of `T_E`, starting with `E` itself.
pub fn n_curve(e: &State) -> Result<Vec<CurvePoint>> {
    let v = e.vars()?;
    let mut points = vec![CurvePoint { step: 0, n: v.n, sigma: v.sigma.as_i64(), rule: None }];
    let mut sink = |step: u64, ev: &StepEvent, _: &State| -> Result<()> {
        let after = ev.after.expect("transits never record Halt");
        points.push(CurvePoint { step, n: after.n, sigma: after.sigma.as_i64(), rule: Some(ev.rule) });
        Ok(())
    };
    next_empty_naive(e, &mut sink)?;
    Ok(points)
}

/// Epoch index of an empty state, from `ell = 2k + 1`.
pub fn epoch_of(e: &State) -> Result<u32> {
    let ell = e.ell();
    if ell.is_multiple_of(2) {
        return Err(Error::Precondition(format!("{e} has even ell = {ell}; no epoch defined")));
    }
    Ok((ell as u32 - 1) / 2)
}

/// `a_0 < 2^(2k+1) - 1` and `a_1 < 3 * 2^(2k) - 1`, with `ell = 2k + 1`.
///
/// For an empty state this is equivalent to weak embankment.
pub fn weak_bounds(e: &State) -> Result<bool> {
    let k = epoch_of(e)?;
    let a0_limit = i128::from(pow2(2 * k + 1)?) - 1;
    let a1_limit = 3 * i128::from(pow2(2 * k)?) - 1;
    Ok(i128::from(e.get(0)) < a0_limit && i128::from(e.get(1)) < a1_limit)
}

/// `E[i]`: entry `i` plus 2.
pub fn bump(e: &State, i: usize) -> Result<State> {
    let mut out = e.clone();
    out.add_at(i, 2)?;
    Ok(out)
}

/// `(h, s)` of `E[i]` given those of an embanked `E`, assuming `E[i]` is weakly embanked.
pub fn h_after_bump(h: Pair, s: Pair, i: usize) -> Result<(Pair, Pair)> {
    let underflow = || Error::Overflow("h_after_bump");
    Ok(match i {
        0 => (
            (h.0.checked_sub(1).ok_or_else(underflow)?, h.1),
            (s.0.checked_sub(2).ok_or_else(underflow)?, s.1),
        ),
        1 => ((h.0, h.1 + 1), (s.0, s.1 + 2)),
        _ => (h, s),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum RootTag {
    Zero,
    One,
}

impl RootTag {
    pub fn index(self) -> usize {
        match self {
            RootTag::Zero => 0,
            RootTag::One => 1,
        }
    }

    pub fn of_bump(j: usize) -> RootTag {
        if j.is_multiple_of(2) {
            RootTag::Zero
        } else {
            RootTag::One
        }
    }
}

/// For an `i`-rooted state whose predecessor has `h = h_pred`, the index `j`
/// with `N(E) = E[j]`.
pub fn next_bump_index(tag: RootTag, h_pred: Pair) -> Result<usize> {
    Ok(match tag {
        RootTag::Zero => nu2(h_pred.0)? as usize,
        RootTag::One => nu2(h_pred.1.checked_add(1).ok_or(Error::Overflow("next_bump_index"))?)? as usize + 1,
    })
}

/// `j, j - 2, ..., j mod 2`: the bumps one `N'` performs when it starts at `j`.
pub fn cascade(j: usize) -> impl Iterator<Item = usize> {
    (j % 2..=j).rev().step_by(2)
}

/// Per-index count of `N` applications that bumped that index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct KappaVector(Vec<u64>);

impl KappaVector {
    pub fn zeros(len: usize) -> Self {
        KappaVector(vec![0; len])
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        KappaVector(counts)
    }

    pub fn record(&mut self, j: usize) -> Result<()> {
        let len = self.0.len();
        let slot = self.0.get_mut(j).ok_or(Error::IndexOutOfRange { index: j, ell: len.saturating_sub(1) })?;
        *slot += 1;
        Ok(())
    }

    pub fn add_at(&mut self, j: usize, count: u64) -> Result<()> {
        let len = self.0.len();
        let slot = self.0.get_mut(j).ok_or(Error::IndexOutOfRange { index: j, ell: len.saturating_sub(1) })?;
        *slot += count;
        Ok(())
    }

    pub fn get(&self, j: usize) -> u64 {
        self.0[j]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.0
    }

    /// Total number of `N` applications counted.
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// `self - earlier`, index-wise. Counts only grow, so `earlier <= self`.
    pub fn since(&self, earlier: &KappaVector) -> Result<KappaVector> {
        if self.len() != earlier.len() {
            return Err(Error::Precondition("kappa vectors of different epochs".into()));
        }
        self.0
            .iter()
            .zip(&earlier.0)
            .map(|(a, b)| a.checked_sub(*b).ok_or(Error::Overflow("kappa difference")))
            .collect::<Result<_>>()
            .map(KappaVector)
    }
}

/// A rooted embanked state with what T2 needs to predict its future.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RootedCursor {
    pub state: State,
    pub tag: RootTag,
    /// `h(N^{-1}(state))`.
    pub h_pred: Pair,
    /// `s(N^{-1}(state))`.
    pub s_pred: Pair,
    pub k: u32,
    /// Bumps since `S_k`.
    pub kappa: KappaVector,
    pub nprime_count: u64,
}

impl RootedCursor {
    /// `(h, s)` of the cursor's own state.
    pub fn predicted_h_s(&self) -> Result<(Pair, Pair)> {
        h_after_bump(self.h_pred, self.s_pred, self.tag.index())
    }

    /// Bump indices of the `N` applications the next `N'` consists of.
    pub fn planned_bumps(&self) -> Result<Vec<usize>> {
        let j = next_bump_index(self.tag, self.h_pred)?;
        if j > self.state.ell() {
            return Err(Error::IndexOutOfRange { index: j, ell: self.state.ell() });
        }
        Ok(cascade(j).collect())
    }
}

/// Builds the first rooted cursor of epoch `k`: observes `T_{S_k}` once with
/// T1, checks `h(S_k) = (2^(2k) - 1, 2^(2k))` and `N(S_k) = S_k[2k+1]`, then
/// completes that cascade down to index 1.
pub fn seed_cursor(k: u32) -> Result<RootedCursor> {
    let start = State::start(k)?;
    let observed = next_empty(&start)?;
    let big = pow2(2 * k)?;
    let top = 2 * k as usize + 1;
    crate::error::ensure_eq("h(S_k)", &Some((big - 1, big)), &observed.h())?;
    crate::error::ensure_eq("N(S_k) bump index", &Some(top), &observed.bump_index)?;
    crate::error::ensure_eq("S_k embanked", &true, &observed.embanked)?;

    let mut kappa = KappaVector::zeros(top + 1);
    let mut state = start;
    for j in cascade(top) {
        state = bump(&state, j)?;
        kappa.record(j)?;
    }
    Ok(RootedCursor {
        state,
        tag: RootTag::One,
        h_pred: observed.h().expect("checked above"),
        s_pred: observed.s().expect("embanked transits have two Halves"),
        k,
        kappa,
        nprime_count: 1,
    })
}

/// One `N'` application predicted from `h_pred` alone.
///
/// With `check`, the cursor's state must satisfy [`weak_bounds`]; the bumps of
/// one cascade above index 1 leave entries 0 and 1 alone, so that single check
/// covers every state the cascade passes through except the last, which the
/// next call checks.
pub fn nprime_step(c: &RootedCursor, check: bool) -> Result<RootedCursor> {
    if check && !weak_bounds(&c.state)? {
        return Err(Error::BoundsViolation { state: c.state.clone() });
    }
    let bumps = c.planned_bumps()?;
    let mut state = c.state.clone();
    let mut kappa = c.kappa.clone();
    for &j in &bumps {
        state = bump(&state, j)?;
        kappa.record(j)?;
    }
    let (h_pred, s_pred) = c.predicted_h_s()?;
    Ok(RootedCursor {
        state,
        tag: RootTag::of_bump(bumps[0]),
        h_pred,
        s_pred,
        k: c.k,
        kappa,
        nprime_count: c.nprime_count + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{step, Step};

    fn st(text: &str) -> State {
        text.parse().unwrap()
    }

    /// Oracle: iterate `step` while the rule stays Increment.
    fn iterate_increments(s: &State) -> (State, u64) {
        let mut cur = s.clone();
        let mut count = 0;
        while cur.classify() == RuleKind::Increment {
            cur = match step(&cur).unwrap() {
                Step::Next(_, t) => t,
                Step::Halt => unreachable!(),
            };
            count += 1;
        }
        (cur, count)
    }

    #[test]
    fn batch_examples() {
        assert_eq!(batch_increments(&st("0,0,3,2,6,8,18")).unwrap(), (st("1,1,4,4,11,17,-1"), 19));
        assert_eq!(batch_increments(&st("1,1,4,4,11,17")).unwrap(), (st("2,2,6,8,20,0"), 17));
        for s in ["0,0,3,2,6,8,18", "1,1,4,4,11,17", "0,0,1,2,4,3", "0,0,5,0,3"] {
            assert_eq!(batch_increments(&st(s)).unwrap(), iterate_increments(&st(s)), "{s}");
        }
    }

    #[test]
    fn batch_with_empty_a0_and_falling_n_takes_one_step() {
        // n = 2, sigma = -1, a_0 = 0
        let s = st("0,1,1,0");
        let v = s.vars().unwrap();
        assert_eq!((v.n, v.sigma), (2, Sigma::Minus));
        assert_eq!(batch_increments(&s).unwrap().1, 1);
    }

    #[test]
    fn batch_rejects_non_increment() {
        assert!(batch_increments(&st("2,2,6,8,18,0")).is_err());
    }

    #[test]
    fn partial_increment_runs_match_steps() {
        let s = st("0,0,3,2,6,8,18");
        let mut cur = s.clone();
        for c in 0..=19 {
            assert_eq!(increment_by(&s, c).unwrap(), cur);
            if c < 19 {
                cur = match step(&cur).unwrap() {
                    Step::Next(_, t) => t,
                    Step::Halt => unreachable!(),
                };
            }
        }
        assert!(increment_by(&s, 20).is_err());
    }

    #[test]
    fn transit_of_worked_example() {
        let t = next_empty(&st("2,2,6,8,18,0")).unwrap();
        assert_eq!(t.successor, st("2,2,6,8,20,0"));
        assert_eq!(t.h(), Some((15, 17)));
        assert_eq!(t.s(), Some((31, 34)));
        assert!(t.embanked && t.weakly_embanked && !t.saw_overflow);
        assert_eq!(t.bump_index, Some(1));
        assert_eq!(t.halve_count, 2);
        assert_eq!(t.milestones.post_zero, st("0,0,3,2,6,8,18,-1"));
        assert_eq!(t.milestones.first_halve, Some((st("0,0,3,2,6,8,18,-1"), st("0,0,3,2,6,8,18"))));
        let naive = next_empty_naive(&st("2,2,6,8,18,0"), &mut NoTrace).unwrap();
        assert_eq!(naive, t);
    }

    #[test]
    fn transit_of_s1() {
        let t = next_empty(&st("0,2,4,0")).unwrap();
        assert_eq!(t.successor, st("2,2,4,0"));
        assert_eq!(t.h(), Some((3, 4)));
        assert!(t.embanked);
        assert_eq!(t.bump_index, Some(3));
    }

    #[test]
    fn transit_of_e2_for_k1_overflows_early() {
        let t = next_empty(&st("2,4,12,4")).unwrap();
        assert!(t.saw_overflow);
        assert_eq!(t.halve_count, 1);
        assert!(!t.weakly_embanked && !t.embanked);
        assert_eq!(t.successor, st("0,2,2,8,12,0"));
        assert_eq!(t.bump_index, None);
    }

    #[test]
    fn transit_needs_empty_start() {
        assert!(next_empty(&st("0,0,3,2,6,8,18")).is_err());
        assert!(next_empty(&st("0,0,2,4")).is_err());
    }

    #[test]
    fn n_curve_of_s1() {
        let curve = n_curve(&st("0,2,4,0")).unwrap();
        // Zero lifts n to 2^3 - 1; after the first Halve it climbs to s_2 = 8.
        assert_eq!(curve[1].n, 7);
        assert_eq!(curve.iter().map(|p| p.n).max(), Some(8));
        assert_eq!(curve.first().unwrap().n, 0);
        assert_eq!(curve.last().unwrap().n, 0);
    }

    #[test]
    fn weak_bounds_examples() {
        assert!(weak_bounds(&st("0,2,4,0")).unwrap());
        assert!(!weak_bounds(&st("2,4,12,4")).unwrap());
        assert!(weak_bounds(&st("0,2,2,8,12,0")).unwrap());
        assert!(weak_bounds(&st("0,2,4,8,0")).is_err());
    }

    #[test]
    fn bump_examples() {
        assert_eq!(bump(&st("2,2,6,8,18,0"), 1).unwrap(), st("2,2,6,8,20,0"));
        assert_eq!(bump(&st("0,2,4,0"), 3).unwrap(), st("2,2,4,0"));
        assert!(bump(&st("0,2,4,0"), 4).is_err());
        let s = st("2,2,6,8,18,0");
        for i in 0..=s.ell() {
            assert_eq!(bump(&s, i).unwrap().vars().unwrap(), s.vars().unwrap());
        }
    }

    #[test]
    fn h_after_bump_rows() {
        let s = (31, 34);
        assert_eq!(h_after_bump((15, 17), s, 1).unwrap(), ((15, 18), (31, 36)));
        assert_eq!(h_after_bump((15, 17), s, 0).unwrap(), ((14, 17), (29, 34)));
        assert_eq!(h_after_bump((15, 17), s, 7).unwrap(), ((15, 17), s));
    }

    #[test]
    fn next_bump_index_examples() {
        assert_eq!(next_bump_index(RootTag::One, (15, 17)).unwrap(), 2);
        assert_eq!(next_bump_index(RootTag::Zero, (12, 99)).unwrap(), 2);
        assert_eq!(next_bump_index(RootTag::Zero, (0, 99)), Err(Error::ZeroValuation));
        // m + 1 of even valuation: (2^(2k) - m - 1, 2^(2k) + m) with k = 2, m = 2
        assert_eq!(next_bump_index(RootTag::One, (13, 18)).unwrap(), 1);
        // cross-check the first example against the observed transit of E' = E[1]
        let t = next_empty(&st("2,2,6,8,20,0")).unwrap();
        assert_eq!(t.bump_index, Some(2));
    }

    #[test]
    fn cascade_indices() {
        assert_eq!(cascade(5).collect::<Vec<_>>(), vec![5, 3, 1]);
        assert_eq!(cascade(4).collect::<Vec<_>>(), vec![4, 2, 0]);
        assert_eq!(cascade(0).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn seed_examples() {
        let c = seed_cursor(1).unwrap();
        assert_eq!(c.state, st("2,2,6,0"));
        assert_eq!(c.tag, RootTag::One);
        assert_eq!(c.h_pred, (3, 4));
        assert_eq!(c.kappa.counts(), &[0, 1, 0, 1]);
        let c2 = seed_cursor(2).unwrap();
        assert_eq!(c2.h_pred, (15, 16));
        assert_eq!(c2.kappa.counts(), &[0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn seed_matches_two_observed_transits_for_k1() {
        let first = next_empty(&st("0,2,4,0")).unwrap();
        let second = next_empty(&first.successor).unwrap();
        assert_eq!(second.bump_index, Some(1));
        assert_eq!(second.successor, seed_cursor(1).unwrap().state);
    }

    #[test]
    fn five_nprime_steps_reach_m_equals_2() {
        for k in 1..=4u32 {
            let big = 1u64 << (2 * k);
            let mut c = seed_cursor(k).unwrap();
            for _ in 0..4 {
                c = nprime_step(&c, true).unwrap();
            }
            assert_eq!(c.nprime_count, 5);
            assert_eq!(c.tag, RootTag::One);
            assert_eq!(c.h_pred, (big - 3, big + 2), "k={k}");
        }
    }

    #[test]
    fn nprime_step_single_bump_at_e_prime() {
        let k = 2;
        let big = 1u64 << (2 * k);
        let c = RootedCursor {
            state: st("2,2,6,8,20,0"),
            tag: RootTag::One,
            h_pred: (1, 2 * big - 2),
            s_pred: (3, 4 * big - 4),
            k,
            kappa: KappaVector::zeros(6),
            nprime_count: 0,
        };
        let next = nprime_step(&c, false).unwrap();
        assert_eq!(next.state, st("2,2,6,8,22,0"));
        assert_eq!(next.h_pred, (1, 2 * big - 1));
        assert_eq!(next.kappa.counts(), &[0, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn nprime_step_with_check_rejects_out_of_bounds_cursor() {
        let c = RootedCursor {
            state: st("2,4,12,4"),
            tag: RootTag::One,
            h_pred: (1, 7),
            s_pred: (3, 14),
            k: 1,
            kappa: KappaVector::zeros(4),
            nprime_count: 0,
        };
        assert_eq!(nprime_step(&c, true), Err(Error::BoundsViolation { state: st("2,4,12,4") }));
    }

    #[test]
    fn run_batched_agrees_with_run_naive() {
        let s = State::start(2).unwrap();
        for budget in [0, 1, 7, 100, 3933, 5000] {
            let a = crate::machine::run_naive(&s, budget, &mut NoTrace).unwrap();
            let b = run_batched(&s, budget, &mut NoTrace).unwrap();
            assert_eq!(a, b, "budget {budget}");
        }
    }
}
