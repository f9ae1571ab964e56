//! Whole epochs `S_k -> S_(k+1)` and the closed-form tier T3.
//!
//! Every tier produces the same [`EpochReport`]; the lower tiers observe
//! landmarks by walking empty states, the upper tiers predict them. All of
//! them then pass through the same closed-form checks in `finalize`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::accel::{
    batch_increments, next_empty, nprime_step, seed_cursor, transit, weak_bounds, KappaVector, Pair, RootTag, RootedCursor,
    TransitMode, TransitSummary,
};
use crate::error::{ensure_eq, Error, Result};
use crate::machine::{step_in_place, NoTrace, RuleKind, Sigma, State, TraceSink};
use crate::numerics::{nu2, pow2};

pub mod landmark {
    pub const E: &str = "E";
    pub const E1: &str = "E'";
    pub const E2: &str = "E''";
    pub const POST_ZERO: &str = "E''+Zero";
    pub const PRE_HALVE: &str = "E''+Zero+Increments";
    pub const POST_HALVE: &str = "E''+Zero+Increments+Halve";
    pub const PRE_OVERFLOW: &str = "E''+...+Increments";
    pub const E_FINAL: &str = "E_final";
    pub const E1_FINAL: &str = "E'_final";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    T0,
    T1,
    T2,
    T3,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::T0, Tier::T1, Tier::T2, Tier::T3];
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::T0 => "t0",
            Tier::T1 => "t1",
            Tier::T2 => "t2",
            Tier::T3 => "t3",
        })
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t0" => Ok(Tier::T0),
            "t1" => Ok(Tier::T1),
            "t2" => Ok(Tier::T2),
            "t3" => Ok(Tier::T3),
            _ => Err(Error::Parse { text: s.to_string(), reason: "expected t0, t1, t2 or t3".into() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochOptions {
    pub tier: Tier,
    /// Check weak-embankment bounds on every cursor T2/T3 visits.
    pub check: bool,
}

impl EpochOptions {
    pub fn new(tier: Tier) -> Self {
        EpochOptions { tier, check: true }
    }
}

/// Certificate for one epoch. Every field except `tier` and `naive_step_total`
/// must be identical across tiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpochReport {
    pub k: u32,
    pub tier: Tier,
    pub s_next: State,
    /// `kappa_{S_k -> E''}`.
    pub kappa_total: KappaVector,
    /// `S_k->E`, `E->E'` and `E'->E''`.
    pub kappa_parts: BTreeMap<String, KappaVector>,
    pub overflow_count: u64,
    pub landmarks: BTreeMap<String, State>,
    pub tiers_agree: BTreeMap<String, bool>,
    /// `N'` applications from `S_k` to `E''`.
    pub nprime_total: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive_step_total: Option<u64>,
}

impl EpochReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields always serialize")
    }

    /// Names of the tier-independent fields on which `self` and `other` differ.
    pub fn disagreements(&self, other: &EpochReport) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.k != other.k {
            out.push("k");
        }
        if self.s_next != other.s_next {
            out.push("s_next");
        }
        if self.kappa_total != other.kappa_total {
            out.push("kappa_total");
        }
        if self.kappa_parts != other.kappa_parts {
            out.push("kappa_parts");
        }
        if self.overflow_count != other.overflow_count {
            out.push("overflow_count");
        }
        if self.landmarks != other.landmarks {
            out.push("landmarks");
        }
        if self.nprime_total != other.nprime_total {
            out.push("nprime_total");
        }
        out
    }
}

/// `[m, m']` between consecutive numbers of odd 2-adic valuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub m: u64,
    pub m_next: u64,
    pub d: u64,
}

impl Segment {
    pub fn starting_at(m: u64) -> Result<Segment> {
        let m_next = next_odd_val(m)?;
        Ok(Segment { m, m_next, d: m_next - m })
    }
}

fn has_odd_valuation(m: u64) -> bool {
    nu2(m).map(|v| v % 2 == 1).unwrap_or(false)
}

/// Smallest `m' > m` with odd 2-adic valuation.
pub fn next_odd_val(m: u64) -> Result<u64> {
    if m < 2 || !has_odd_valuation(m) {
        return Err(Error::Precondition(format!("{m} does not have odd 2-adic valuation")));
    }
    // one of m+1..=m+4 is 2 mod 4
    ((m + 1)..=(m + 4))
        .find(|&x| has_odd_valuation(x))
        .ok_or(Error::Overflow("next_odd_val"))
}

/// `#{e in [m+1, m'] : max(1, 2^(j-1)) | e}`.
pub fn kappa_segment(m: u64, m_next: u64, j: u32) -> u64 {
    if j <= 1 {
        return m_next - m;
    }
    match 1u64.checked_shl(j - 1) {
        Some(q) => m_next / q - m / q,
        None => 0,
    }
}

fn h_at(k: u32, m: u64) -> Result<Pair> {
    let big = pow2(2 * k)?;
    Ok((big - m - 1, big + m))
}

/// Jumps a 1-rooted cursor with `h_pred = (2^(2k) - m - 1, 2^(2k) + m)` to the
/// next 1-rooted cursor, at `m'`, without visiting the `2d` cursors between.
pub fn segment_jump(c: &RootedCursor, seg: &Segment) -> Result<RootedCursor> {
    let k = c.k;
    let big = pow2(2 * k)?;
    if seg.m_next != next_odd_val(seg.m)? || seg.d != seg.m_next - seg.m || seg.m_next > big - 2 {
        return Err(Error::Precondition(format!("{seg:?} is not a segment of epoch {k}")));
    }
    if c.tag != RootTag::One || c.h_pred != h_at(k, seg.m)? {
        return Err(Error::check(
            "segment start",
            format!("1-rooted with h_pred {:?}", h_at(k, seg.m)?),
            format!("{:?}-rooted with h_pred {:?}", c.tag, c.h_pred),
        ));
    }
    let mut state = c.state.clone();
    let mut kappa = c.kappa.clone();
    for j in 0..=(2 * k + 1) {
        let count = kappa_segment(seg.m, seg.m_next, j);
        if count > 0 {
            state.add_at(j as usize, 2 * i64::try_from(count).map_err(|_| Error::Overflow("segment_jump"))?)?;
            kappa.add_at(j as usize, count)?;
        }
    }
    let shift = 2 * seg.d;
    Ok(RootedCursor {
        state,
        tag: RootTag::One,
        h_pred: h_at(k, seg.m_next)?,
        s_pred: (
            c.s_pred.0.checked_sub(shift).ok_or(Error::Overflow("segment_jump"))?,
            c.s_pred.1 + shift,
        ),
        k,
        kappa,
        nprime_count: c.nprime_count + shift,
    })
}

fn state_from_fn(len: usize, entry: impl Fn(u32) -> Result<i64>) -> Result<State> {
    State::from_indexed((0..len as u32).map(entry).collect::<Result<_>>()?)
}

fn p2(e: u32) -> Result<i64> {
    Ok(pow2(e)? as i64)
}

/// `E''` built directly: `a_j(S_k) + 2 kappa_{S_k -> E''}(j)` in closed form.
pub fn construct_e2(k: u32) -> Result<State> {
    check_k(k)?;
    state_from_fn(2 * k as usize + 2, |j| match j {
        0 => Ok(p2(2 * k + 1)? - 4),
        1 => Ok(3 * p2(2 * k)?),
        j if j == 2 * k + 1 => Ok(2),
        j => Ok(3 * p2(2 * k - j + 1)? - 2 + 2 * i64::from(j % 2)),
    })
}

fn check_k(k: u32) -> Result<()> {
    if k == 0 {
        Err(Error::Precondition("epochs start at k = 1".into()))
    } else {
        Ok(())
    }
}

fn kappa_from_fn(k: u32, f: impl Fn(u32) -> Result<u64>) -> Result<KappaVector> {
    Ok(KappaVector::from_counts((0..=2 * k + 1).map(f).collect::<Result<_>>()?))
}

/// `kappa_{S_k -> E}`, `E` being the fifth `N'` iterate of `S_k`.
pub fn kappa_to_e_closed(k: u32) -> Result<KappaVector> {
    kappa_from_fn(k, |j| {
        Ok(match j {
            0 => 2,
            1 => 3,
            2 => 1,
            j => u64::from(j % 2),
        })
    })
}

/// `kappa_{E -> E'}`, summed over every odd-valuation segment.
pub fn kappa_e_to_e1_closed(k: u32) -> Result<KappaVector> {
    let big = pow2(2 * k)?;
    kappa_from_fn(k, |j| {
        Ok(match j {
            0 | 1 => big - 4,
            2 => pow2(2 * k - 1)? - 2,
            j if j == 2 * k + 1 => 0,
            j => pow2(2 * k - j + 1)? - 1,
        })
    })
}

/// `kappa_{E' -> E''}`: a single bump at index 1.
pub fn kappa_e1_to_e2_closed(k: u32) -> Result<KappaVector> {
    kappa_from_fn(k, |j| Ok(u64::from(j == 1)))
}

/// `kappa_{S_k -> E''}`.
pub fn kappa_to_e2_closed(k: u32) -> Result<KappaVector> {
    let big = pow2(2 * k)?;
    kappa_from_fn(k, |j| {
        Ok(match j {
            0 => big - 2,
            1 => big,
            j if j == 2 * k + 1 => 1,
            j => pow2(2 * k - j + 1)? - 1 + u64::from(j % 2),
        })
    })
}

/// Closed-form endgame states, one per landmark after `E''`, with the
/// `(n, sigma)` each must carry.
pub fn endgame_displays(k: u32) -> Result<Vec<(&'static str, State, u64, Sigma)>> {
    check_k(k)?;
    let top = 2 * k + 3;
    let odd = |j: u32| i64::from(j % 2);
    let even = |j: u32| i64::from(j.is_multiple_of(2));

    let post_zero = state_from_fn(top as usize + 1, |j| match j {
        0 => Ok(p2(2 * k + 1)? - 5),
        1 => Ok(3 * p2(2 * k)?),
        j if j == 2 * k + 1 => Ok(3),
        j if j > 2 * k + 1 => Ok(0),
        j => Ok(3 * p2(2 * k + 1 - j)? - 2 * even(j)),
    })?;
    let pre_halve = state_from_fn(top as usize + 1, |j| match j {
        0 => Ok(-1),
        1 => Ok(p2(2 * k + 2)? - 2),
        2 => Ok(p2(2 * k + 1)? - 3),
        j if j > 2 * k + 1 => Ok(0),
        j => Ok(p2(2 * k + 3 - j)? - 2 * even(j)),
    })?;
    let post_halve = State::from_indexed(pre_halve.indexed()[1..].to_vec())?;
    let pre_overflow = state_from_fn(top as usize, |j| match j {
        0 => Ok(0),
        1 => Ok(p2(2 * k + 2)? - 4),
        j if j == 2 * k + 2 => Ok(1),
        j => Ok(p2(2 * k + 3 - j)? - 2 * odd(j)),
    })?;
    let e_final = state_from_fn(top as usize + 1, |j| match j {
        0 => Ok(0),
        1 => Ok(p2(2 * k + 2)? - 4),
        j if j == 2 * k + 3 => Ok(0),
        j if j == 2 * k + 2 => Ok(2),
        j => Ok(p2(2 * k + 3 - j)? - 2 * odd(j)),
    })?;
    let e1_final = state_from_fn(top as usize + 1, |j| match j {
        0 => Ok(0),
        1 => Ok(p2(2 * k + 2)? - 2),
        j if j == 2 * k + 3 => Ok(0),
        j => Ok(p2(2 * k + 3 - j)?),
    })?;
    Ok(vec![
        (landmark::POST_ZERO, post_zero, pow2(2 * k + 1)? - 1, Sigma::Minus),
        (landmark::PRE_HALVE, pre_halve, 3, Sigma::Minus),
        (landmark::POST_HALVE, post_halve, 1, Sigma::Plus),
        (landmark::PRE_OVERFLOW, pre_overflow, pow2(2 * k + 2)? - 1, Sigma::Plus),
        (landmark::E_FINAL, e_final, 0, Sigma::Minus),
        (landmark::E1_FINAL, e1_final, 0, Sigma::Minus),
    ])
}

/// What the explicit analysis after `E''` produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endgame {
    pub s_next: State,
    pub overflow_seen: bool,
    pub landmarks: Vec<(&'static str, State)>,
    pub h_e_final: Pair,
    pub h_e1_final: Pair,
}

/// Runs `E''` forward rule by rule (Increment runs batched) to `S_(k+1)`,
/// checking every rule count on the way.
pub fn endgame(e2: &State) -> Result<Endgame> {
    let k = crate::accel::epoch_of(e2)?;
    check_k(k)?;
    if !e2.is_empty() {
        return Err(Error::Precondition(format!("{e2} is not empty")));
    }
    let mut landmarks = Vec::new();
    let mut state = e2.clone();

    let apply = |state: &mut State, expect: RuleKind| -> Result<()> {
        let rule = step_in_place(state)?;
        ensure_eq("endgame rule", &expect, &rule)
    };
    let increments = |state: &mut State, expected: u64| -> Result<()> {
        let (next, count) = batch_increments(state)?;
        ensure_eq("endgame Increment count", &expected, &count)?;
        *state = next;
        Ok(())
    };

    apply(&mut state, RuleKind::Zero)?;
    landmarks.push((landmark::POST_ZERO, state.clone()));
    increments(&mut state, pow2(2 * k + 1)? - 4)?;
    landmarks.push((landmark::PRE_HALVE, state.clone()));
    apply(&mut state, RuleKind::Halve)?;
    landmarks.push((landmark::POST_HALVE, state.clone()));
    increments(&mut state, pow2(2 * k + 2)? - 2)?;
    landmarks.push((landmark::PRE_OVERFLOW, state.clone()));
    apply(&mut state, RuleKind::Overflow)?;
    landmarks.push((landmark::E_FINAL, state.clone()));
    ensure_eq("E_final empty", &true, &state.is_empty())?;

    let (h_e_final, e1_final, s_next) = finish_after_overflow(k, &state)?;
    landmarks.push((landmark::E1_FINAL, e1_final));
    Ok(Endgame { s_next, overflow_seen: true, landmarks, h_e_final, h_e1_final: h_after_e1(k)? })
}

fn h_after_e1(k: u32) -> Result<Pair> {
    let p = pow2(2 * k + 2)?;
    Ok((p - 1, p - 1))
}

/// From `E_final`: one `N'` (bumps `2k+1, 2k-1, ..., 1`) then one `N` (bump 1),
/// all observed with T1. Returns `h(E_final)`, `E'_final` and `S_(k+1)`.
fn finish_after_overflow(k: u32, e_final: &State) -> Result<(Pair, State, State)> {
    let p = pow2(2 * k + 2)?;
    let first = next_empty(e_final)?;
    ensure_eq("E_final embanked", &true, &first.embanked)?;
    ensure_eq("h(E_final)", &Some((p - 1, p - 2)), &first.h())?;
    let mut state = e_final.clone();
    for j in crate::accel::cascade(2 * k as usize + 1) {
        let t = next_empty(&state)?;
        ensure_eq("N'(E_final) bump index", &Some(j), &t.bump_index)?;
        state = t.successor;
    }
    let e1_final = state;
    let last = next_empty(&e1_final)?;
    ensure_eq("h(E'_final)", &Some(h_after_e1(k)?), &last.h())?;
    ensure_eq("N(E'_final) bump index", &Some(1), &last.bump_index)?;
    Ok((first.h().expect("checked"), e1_final, last.successor))
}

/// Everything a tier observed or predicted, before the shared checks.
struct Observed {
    e: State,
    e1: State,
    e2: State,
    kappa_e: KappaVector,
    kappa_e1: KappaVector,
    kappa_e2: KappaVector,
    endgame: Vec<(&'static str, State)>,
    h_e_final: Pair,
    h_e1_final: Pair,
    s_next: State,
    overflow_count: u64,
    nprime_total: u64,
    naive_step_total: Option<u64>,
}

pub fn run_epoch(k: u32, opts: EpochOptions) -> Result<EpochReport> {
    run_epoch_traced(k, opts, &mut NoTrace)
}

/// [`run_epoch`], streaming step events to `sink` for the tiers that take steps (T0, T1).
pub fn run_epoch_traced(k: u32, opts: EpochOptions, sink: &mut impl TraceSink) -> Result<EpochReport> {
    check_k(k)?;
    let observed = match opts.tier {
        Tier::T0 => walk_transits(k, TransitMode::Naive, sink)?,
        Tier::T1 => walk_transits(k, TransitMode::Batched, sink)?,
        Tier::T2 => walk_cursors(k, opts.check)?,
        Tier::T3 => jump_segments(k, opts.check)?,
    };
    finalize(k, opts.tier, observed)
}

/// Upper bound on empty states per epoch, far above the `~2^(2k+1)` actually visited.
fn transit_budget(k: u32) -> Result<u64> {
    Ok(8 * pow2(2 * k + 1)? + 64)
}

fn walk_transits(k: u32, mode: TransitMode, sink: &mut impl TraceSink) -> Result<Observed> {
    let target = State::start(k + 1)?;
    let width = 2 * k as usize + 2;
    let mut cur = State::start(k)?;
    let mut kappa = KappaVector::zeros(width);
    let mut rooted = 0u64;
    // the two most recent rooted states with their kappa snapshots
    let mut last_rooted: Option<(State, KappaVector)> = None;
    let mut prior_rooted: Option<(State, KappaVector)> = None;
    let mut five: Option<(State, KappaVector)> = None;
    let mut before_overflow: Option<(State, TransitSummary, u64)> = None;
    let mut after: Vec<TransitSummary> = Vec::new();
    let mut overflow_count = 0;
    let mut steps = 0u64;
    let budget = transit_budget(k)?;

    for _ in 0..budget {
        if cur == target {
            break;
        }
        let t = transit(&cur, mode, sink)?;
        steps += t.step_count;
        overflow_count += t.counts.overflow;
        if before_overflow.is_some() {
            after.push(t.clone());
        } else if t.saw_overflow {
            before_overflow = Some((cur.clone(), t.clone(), rooted));
        } else {
            let j = t
                .bump_index
                .ok_or_else(|| Error::check("N(E) = E[i] before the Overflow", "a bump", format!("{} -> {}", t.start, t.successor)))?;
            kappa.record(j)?;
            if j <= 1 {
                rooted += 1;
                prior_rooted = last_rooted.take();
                last_rooted = Some((t.successor.clone(), kappa.clone()));
                if rooted == 5 {
                    five = last_rooted.clone();
                }
            }
        }
        cur = t.successor;
    }
    ensure_eq("reached S_(k+1)", &target, &cur)?;

    let missing = |what: &str| Error::check(what, "observed", "never reached");
    let (e2, e2_transit, nprime_total) = before_overflow.ok_or_else(|| missing("Overflow"))?;
    let (last_state, kappa_e2) = last_rooted.ok_or_else(|| missing("rooted state"))?;
    ensure_eq("E'' is the last rooted state", &e2, &last_state)?;
    let (e1, kappa_e1) = prior_rooted.ok_or_else(|| missing("E'"))?;
    let (e, kappa_e) = five.ok_or_else(|| missing("E"))?;

    let incs = pow2(2 * k + 1)? - 4 + pow2(2 * k + 2)? - 2;
    ensure_eq("Increments in T_E''", &incs, &e2_transit.counts.increment)?;
    ensure_eq("Halves in T_E''", &1, &e2_transit.counts.halve)?;
    let m = &e2_transit.milestones;
    let (pre_halve, post_halve) = m.first_halve.clone().ok_or_else(|| missing("Halve in T_E''"))?;
    let pre_overflow = m.pre_overflow.clone().ok_or_else(|| missing("Overflow in T_E''"))?;

    let after_bumps: Vec<Option<usize>> = after.iter().map(|t| t.bump_index).collect();
    let mut expected: Vec<Option<usize>> = crate::accel::cascade(2 * k as usize + 1).map(Some).collect();
    expected.push(Some(1));
    ensure_eq("bumps after the Overflow", &expected, &after_bumps)?;
    let e_final = e2_transit.successor.clone();
    let e1_final = after[after.len() - 2].successor.clone();
    let h_e_final = after[0].h().ok_or_else(|| missing("h(E_final)"))?;
    let h_e1_final = after[after.len() - 1].h().ok_or_else(|| missing("h(E'_final)"))?;

    Ok(Observed {
        e,
        e1,
        e2,
        kappa_e,
        kappa_e1,
        kappa_e2: kappa_e2.clone(),
        endgame: vec![
            (landmark::POST_ZERO, m.post_zero.clone()),
            (landmark::PRE_HALVE, pre_halve),
            (landmark::POST_HALVE, post_halve),
            (landmark::PRE_OVERFLOW, pre_overflow),
            (landmark::E_FINAL, e_final),
            (landmark::E1_FINAL, e1_final),
        ],
        h_e_final,
        h_e1_final,
        s_next: cur,
        overflow_count,
        nprime_total,
        naive_step_total: Some(steps),
    })
}

fn from_endgame(e: &RootedCursor, e1: &RootedCursor, e2: &RootedCursor) -> Result<Observed> {
    let end = endgame(&e2.state)?;
    Ok(Observed {
        e: e.state.clone(),
        e1: e1.state.clone(),
        e2: e2.state.clone(),
        kappa_e: e.kappa.clone(),
        kappa_e1: e1.kappa.clone(),
        kappa_e2: e2.kappa.clone(),
        endgame: end.landmarks,
        h_e_final: end.h_e_final,
        h_e1_final: end.h_e1_final,
        s_next: end.s_next,
        overflow_count: u64::from(end.overflow_seen),
        nprime_total: e2.nprime_count,
        naive_step_total: None,
    })
}

/// `h_pred` of `E''`: `(1, 2^(2k+1) - 1)`.
fn e2_h_pred(k: u32) -> Result<Pair> {
    Ok((1, pow2(2 * k + 1)? - 1))
}

fn walk_cursors(k: u32, check: bool) -> Result<Observed> {
    let stop = e2_h_pred(k)?;
    let mut c = seed_cursor(k)?;
    let mut prev: Option<RootedCursor> = None;
    let mut five = None;
    for _ in 0..transit_budget(k)? {
        if c.nprime_count == 5 {
            five = Some(c.clone());
        }
        if !check && c.tag == RootTag::One && c.h_pred == stop {
            break;
        }
        match nprime_step(&c, check) {
            Ok(next) => prev = Some(std::mem::replace(&mut c, next)),
            Err(Error::BoundsViolation { .. }) if check => break,
            Err(e) => return Err(e),
        }
    }
    ensure_eq("h_pred at E''", &stop, &c.h_pred)?;
    let e = five.ok_or_else(|| Error::check("E", "five N' steps", "fewer"))?;
    let e1 = prev.ok_or_else(|| Error::check("E'", "a cursor before E''", "none"))?;
    from_endgame(&e, &e1, &c)
}

fn jump_segments(k: u32, check: bool) -> Result<Observed> {
    let big = pow2(2 * k)?;
    let mut c = seed_cursor(k)?;
    for _ in 0..4 {
        c = nprime_step(&c, check)?;
    }
    let e = c.clone();
    let mut m = 2;
    while m < big - 2 {
        let seg = Segment::starting_at(m)?;
        c = segment_jump(&c, &seg)?;
        // a_0 and a_1 only grow, so bounds at the segment end cover the whole segment
        if check && !weak_bounds(&c.state)? {
            return Err(Error::BoundsViolation { state: c.state });
        }
        m = seg.m_next;
    }
    ensure_eq("h_pred at E'", &(1, 2 * big - 2), &c.h_pred)?;
    let e2 = nprime_step(&c, check)?;
    if check && weak_bounds(&e2.state)? {
        return Err(Error::check("E'' leaves the weak bounds", false, true));
    }
    from_endgame(&e, &c, &e2)
}

fn finalize(k: u32, tier: Tier, o: Observed) -> Result<EpochReport> {
    let mut agree = BTreeMap::new();
    let mut record = |name: &str, result: Result<()>| -> Result<()> {
        result?;
        agree.insert(name.to_string(), true);
        Ok(())
    };

    record("E'' = closed form", ensure_eq("E''", &construct_e2(k)?, &o.e2))?;
    record("kappa S_k->E'' = closed form", ensure_eq("kappa S_k->E''", &kappa_to_e2_closed(k)?, &o.kappa_e2))?;
    let part_e = o.kappa_e.clone();
    let part_e1 = o.kappa_e1.since(&o.kappa_e)?;
    let part_e2 = o.kappa_e2.since(&o.kappa_e1)?;
    record("kappa S_k->E = closed form", ensure_eq("kappa S_k->E", &kappa_to_e_closed(k)?, &part_e))?;
    record("kappa E->E' = closed form", ensure_eq("kappa E->E'", &kappa_e_to_e1_closed(k)?, &part_e1))?;
    record("kappa E'->E'' = closed form", ensure_eq("kappa E'->E''", &kappa_e1_to_e2_closed(k)?, &part_e2))?;

    let start = State::start(k)?;
    let rebuilt = State::from_indexed(
        (0..start.indexed().len())
            .map(|j| start.get(j) + 2 * o.kappa_e2.get(j) as i64)
            .collect(),
    )?;
    record("a_j(E'') = a_j(S_k) + 2 kappa_j", ensure_eq("a_j(E'')", &rebuilt, &o.e2))?;

    let displays = endgame_displays(k)?;
    let observed: BTreeMap<_, _> = o.endgame.iter().cloned().collect();
    for (name, display, n, sigma) in &displays {
        let got = observed.get(name).ok_or_else(|| Error::check(*name, "landmark", "missing"))?;
        record(&format!("{name} = display"), ensure_eq(name, display, got))?;
        let v = got.vars()?;
        record(&format!("{name} (n, sigma)"), ensure_eq(name, &(*n, *sigma), &(v.n, v.sigma)))?;
    }
    let p = pow2(2 * k + 2)?;
    record("h(E_final)", ensure_eq("h(E_final)", &(p - 1, p - 2), &o.h_e_final))?;
    record("h(E'_final)", ensure_eq("h(E'_final)", &(p - 1, p - 1), &o.h_e1_final))?;
    record("s_next = S_(k+1)", ensure_eq("s_next", &State::start(k + 1)?, &o.s_next))?;
    record("one Overflow", ensure_eq("Overflow count", &1, &o.overflow_count))?;

    let mut landmarks: BTreeMap<String, State> = o.endgame.into_iter().map(|(n, s)| (n.to_string(), s)).collect();
    landmarks.insert(landmark::E.into(), o.e);
    landmarks.insert(landmark::E1.into(), o.e1);
    landmarks.insert(landmark::E2.into(), o.e2);

    let mut kappa_parts = BTreeMap::new();
    kappa_parts.insert("S_k->E".to_string(), part_e);
    kappa_parts.insert("E->E'".to_string(), part_e1);
    kappa_parts.insert("E'->E''".to_string(), part_e2);

    Ok(EpochReport {
        k,
        tier,
        s_next: o.s_next,
        kappa_total: o.kappa_e2,
        kappa_parts,
        overflow_count: o.overflow_count,
        landmarks,
        tiers_agree: agree,
        nprime_total: o.nprime_total,
        naive_step_total: o.naive_step_total,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NonhaltSummary {
    pub epochs: Vec<EpochReport>,
    pub overflow_total: u64,
}

/// Chains epochs `1..=k_max`, checking that each one ends where the next begins.
pub fn prove_nonhalt(k_max: u32, tier_for: impl Fn(u32) -> Tier, check: bool) -> Result<NonhaltSummary> {
    check_k(k_max)?;
    let mut epochs: Vec<EpochReport> = Vec::new();
    for k in 1..=k_max {
        if let Some(prev) = epochs.last() {
            ensure_eq("epoch chaining", &State::start(k)?, &prev.s_next)?;
        }
        epochs.push(run_epoch(k, EpochOptions { tier: tier_for(k), check })?);
    }
    let overflow_total = epochs.iter().map(|r| r.overflow_count).sum();
    Ok(NonhaltSummary { epochs, overflow_total })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(text: &str) -> State {
        text.parse().unwrap()
    }

    /// Brute force count over `[m+1, m']`.
    fn count_divisible(m: u64, m_next: u64, j: u32) -> u64 {
        let q = if j == 0 { 1 } else { 1u64 << (j - 1) };
        (m + 1..=m_next).filter(|e| e % q == 0).count() as u64
    }

    #[test]
    fn next_odd_val_examples() {
        assert_eq!(next_odd_val(2).unwrap(), 6);
        assert_eq!(next_odd_val(6).unwrap(), 8);
        assert_eq!(next_odd_val(8).unwrap(), 10);
        assert!(next_odd_val(4).is_err());
        assert!(next_odd_val(0).is_err());
    }

    #[test]
    fn next_odd_val_matches_search() {
        let mut m = 2;
        while m < 5000 {
            let n = next_odd_val(m).unwrap();
            assert!((m + 1..n).all(|x| x.trailing_zeros() % 2 == 0));
            assert_eq!(n.trailing_zeros() % 2, 1);
            m = n;
        }
    }

    #[test]
    fn kappa_segment_examples() {
        assert_eq!(kappa_segment(2, 6, 0), 4);
        assert_eq!(kappa_segment(2, 6, 1), 4);
        assert_eq!(kappa_segment(2, 6, 3), 1);
        for m in [2u64, 6, 8, 10, 14, 22, 24, 30, 32] {
            let n = next_odd_val(m).unwrap();
            for j in 0..12 {
                assert_eq!(kappa_segment(m, n, j), count_divisible(m, n, j), "m={m} j={j}");
            }
        }
    }

    #[test]
    fn e_to_e1_closed_form_is_the_segment_sum() {
        for k in 1..=6u32 {
            let big = 1u64 << (2 * k);
            let closed = kappa_e_to_e1_closed(k).unwrap();
            for j in 0..=2 * k + 1 {
                let mut total = 0;
                let mut m = 2;
                while m < big - 2 {
                    let n = next_odd_val(m).unwrap();
                    total += count_divisible(m, n, j);
                    m = n;
                }
                assert_eq!(closed.get(j as usize), total, "k={k} j={j}");
            }
        }
    }

    #[test]
    fn kappa_parts_sum_to_total() {
        for k in 1..=8 {
            let a = kappa_to_e_closed(k).unwrap();
            let b = kappa_e_to_e1_closed(k).unwrap();
            let c = kappa_e1_to_e2_closed(k).unwrap();
            let total = kappa_to_e2_closed(k).unwrap();
            for j in 0..total.len() {
                assert_eq!(a.get(j) + b.get(j) + c.get(j), total.get(j), "k={k} j={j}");
            }
        }
        assert_eq!(kappa_to_e2_closed(1).unwrap().counts(), &[2, 4, 1, 1]);
    }

    #[test]
    fn construct_e2_examples() {
        assert_eq!(construct_e2(1).unwrap(), st("2,4,12,4"));
        assert_eq!(construct_e2(2).unwrap(), st("2,4,12,22,48,28"));
        for k in 1..=8 {
            let e2 = construct_e2(k).unwrap();
            assert!(e2.is_empty());
            let big = 1i64 << (2 * k);
            // only the a_1 clause of the bounds fails
            assert!(e2.get(0) < 2 * big - 1);
            assert!(e2.get(1) >= 3 * big - 1);
            assert!(!weak_bounds(&e2).unwrap());
        }
    }

    #[test]
    fn endgame_k1() {
        let end = endgame(&st("2,4,12,4")).unwrap();
        assert_eq!(end.s_next, st("0,2,4,8,16,0"));
        assert!(end.overflow_seen);
        let marks: BTreeMap<_, _> = end.landmarks.into_iter().collect();
        assert_eq!(marks[landmark::E_FINAL], st("0,2,2,8,12,0"));
        assert_eq!(end.h_e_final, (15, 14));
    }

    #[test]
    fn displays_match_endgame_execution() {
        for k in 1..=6 {
            let end = endgame(&construct_e2(k).unwrap()).unwrap();
            let marks: BTreeMap<_, _> = end.landmarks.into_iter().collect();
            for (name, display, _, _) in endgame_displays(k).unwrap() {
                assert_eq!(marks[name], display, "k={k} {name}");
            }
        }
    }

    #[test]
    fn segment_jump_k2_first_segment() {
        let mut c = seed_cursor(2).unwrap();
        for _ in 0..4 {
            c = nprime_step(&c, true).unwrap();
        }
        assert_eq!(c.h_pred, (13, 18));
        let seg = Segment::starting_at(2).unwrap();
        let jumped = segment_jump(&c, &seg).unwrap();
        assert_eq!(jumped.h_pred, (9, 22));
        assert_eq!(jumped.state.get(0), c.state.get(0) + 8);
        assert_eq!(jumped.state.get(1), c.state.get(1) + 8);

        let mut walked = c.clone();
        while walked.nprime_count < jumped.nprime_count {
            walked = nprime_step(&walked, true).unwrap();
        }
        assert_eq!(walked, jumped);
    }

    #[test]
    fn segment_jump_rejects_wrong_start() {
        let c = seed_cursor(2).unwrap();
        assert!(segment_jump(&c, &Segment::starting_at(2).unwrap()).is_err());
    }

    #[test]
    fn k1_has_no_segments() {
        let mut c = seed_cursor(1).unwrap();
        for _ in 0..4 {
            c = nprime_step(&c, true).unwrap();
        }
        assert_eq!(c.h_pred, (1, 6));
    }

    #[test]
    fn epoch_k1_every_tier() {
        let reports: Vec<_> = Tier::ALL.iter().map(|&t| run_epoch(1, EpochOptions::new(t)).unwrap()).collect();
        for r in &reports {
            assert_eq!(r.s_next, st("0,2,4,8,16,0"));
            assert_eq!(r.overflow_count, 1);
            assert_eq!(r.kappa_total.counts(), &[2, 4, 1, 1]);
            assert!(r.tiers_agree.values().all(|&b| b));
            assert!(reports[0].disagreements(r).is_empty(), "{:?}", r.tier);
        }
        assert_eq!(reports[0].naive_step_total, Some(261));
        assert_eq!(reports[1].naive_step_total, Some(261));
        assert_eq!(reports[3].naive_step_total, None);
    }

    #[test]
    fn prove_nonhalt_chains() {
        let summary = prove_nonhalt(3, |k| if k == 1 { Tier::T0 } else { Tier::T3 }, true).unwrap();
        assert_eq!(summary.epochs.len(), 3);
        assert_eq!(summary.overflow_total, 3);
        assert_eq!(summary.epochs[2].s_next, State::start(4).unwrap());
        assert!(prove_nonhalt(0, |_| Tier::T3, true).is_err());
    }

    #[test]
    fn report_json_shape() {
        let r = run_epoch(1, EpochOptions::new(Tier::T3)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["k"], 1);
        assert_eq!(v["tier"], "t3");
        assert_eq!(v["s_next"], "0,2,4,8,16,0");
        assert_eq!(v["kappa_total"], serde_json::json!([2, 4, 1, 1]));
        assert_eq!(v["overflow_count"], 1);
        assert_eq!(v["landmarks"]["E''"], "2,4,12,4");
        assert!(v.get("naive_step_total").is_none());
    }

    #[test]
    fn tier_text() {
        assert_eq!("T2".parse::<Tier>().unwrap(), Tier::T2);
        assert_eq!(Tier::T3.to_string(), "t3");
        assert!("t4".parse::<Tier>().is_err());
    }
}
