//! Property suites: each one replays a trajectory with a slow tier (or an
//! exhaustive enumeration) and compares a faster tier or closed form against it.

use std::fmt;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::accel::{
    batch_increments, bump, h_after_bump, next_empty, nprime_step, seed_cursor, weak_bounds, RootTag, RootedCursor,
    TransitSummary,
};
use crate::epoch::{next_odd_val, run_epoch, segment_jump, EpochOptions, EpochReport, Segment, Tier};
use crate::error::{Error, Result};
use crate::machine::{step_in_place_with, table_row_holds, Mutation, RuleKind, State};
use crate::numerics::{d, gray_digit, nu2, pow2, GrayDigits};

/// Failures kept per suite; the rest are only counted.
const MAX_RECORDED: usize = 25;

pub const SUITES: [&str; 5] = ["table", "gray", "incr", "embanked", "epoch"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub input: String,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub cases: u64,
    pub failed_cases: u64,
    pub failures: Vec<Failure>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failed_cases == 0
    }
}

impl PartialEq for SuiteResult {
    /// Timing is ignored.
    fn eq(&self, other: &Self) -> bool {
        (&self.suite, self.cases, self.failed_cases, &self.failures)
            == (&other.suite, other.cases, other.failed_cases, &other.failures)
    }
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(f, "suite {}: {verdict} ({} cases, {} failed)", self.suite, self.cases, self.failed_cases)?;
        for fail in &self.failures {
            writeln!(f, "  input:    {}", fail.input)?;
            writeln!(f, "  expected: {}", fail.expected)?;
            writeln!(f, "  actual:   {}", fail.actual)?;
        }
        if self.failed_cases > self.failures.len() as u64 {
            writeln!(f, "  ... {} more", self.failed_cases - self.failures.len() as u64)?;
        }
        Ok(())
    }
}

struct Recorder {
    suite: &'static str,
    cases: u64,
    failed: u64,
    failures: Vec<Failure>,
    started: Instant,
}

impl Recorder {
    fn new(suite: &'static str) -> Self {
        Recorder { suite, cases: 0, failed: 0, failures: Vec::new(), started: Instant::now() }
    }

    fn fail(&mut self, input: String, expected: String, actual: String) {
        self.failed += 1;
        if self.failures.len() < MAX_RECORDED {
            self.failures.push(Failure { input, expected, actual });
        }
    }

    /// One case; the input description is only built on failure.
    fn check<T: PartialEq + fmt::Debug>(&mut self, input: impl FnOnce() -> String, expected: T, actual: T) -> bool {
        self.cases += 1;
        if expected != actual {
            self.fail(input(), format!("{expected:?}"), format!("{actual:?}"));
            false
        } else {
            true
        }
    }

    fn error(&mut self, input: impl fmt::Display, err: &Error) {
        self.cases += 1;
        self.fail(input.to_string(), "no error".into(), err.to_string());
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            suite: self.suite.to_string(),
            cases: self.cases,
            failed_cases: self.failed,
            failures: self.failures,
            elapsed: self.started.elapsed(),
        }
    }
}

fn require_k(k_max: u32) -> Result<()> {
    if k_max == 0 {
        Err(Error::Precondition("k_max must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Steps allowed for a T0 replay of epochs `1..=k_max` (the real count is about `16^(k_max+1) / 17`).
fn naive_budget(k_max: u32) -> u64 {
    2 * 16u64.pow(k_max + 1) + 1000
}

/// Walks T0 from `S_1` to `S_(k_max+1)`, calling `visit(before, rule, after)` on every step.
fn walk_naive(
    rec: &mut Recorder,
    k_max: u32,
    mutation: Mutation,
    mut visit: impl FnMut(&mut Recorder, &State, RuleKind, &State),
) -> Result<()> {
    let target = State::start(k_max + 1)?;
    let mut state = State::start(1)?;
    for _ in 0..naive_budget(k_max) {
        if state == target {
            return Ok(());
        }
        let before = state.clone();
        match step_in_place_with(&mut state, mutation) {
            Ok(RuleKind::Halt) => {
                rec.error(&before, &Error::Halted { state: before.clone() });
                return Ok(());
            }
            Ok(rule) => visit(rec, &before, rule, &state),
            Err(e) => {
                rec.error(&before, &e);
                return Ok(());
            }
        }
    }
    rec.error(format!("T0 replay of epochs 1..={k_max}"), &Error::check("reach S_(k+1)", &target, "step budget exhausted"));
    Ok(())
}

/// Every step's `(n, ell, sigma)` change matches the state-variable table,
/// entries keep their signs, and Increment lowers `a_0` by exactly one.
pub fn suite_table(k_max: u32, mutation: Mutation) -> Result<SuiteResult> {
    require_k(k_max)?;
    let mut rec = Recorder::new("table");

    // Zero row on S_1: 0 -> 2^3 - 1, ell 3 -> 5
    let mut s1 = State::start(1)?;
    let before = s1.vars()?;
    let rule = step_in_place_with(&mut s1, mutation);
    rec.check(|| "Zero on S_1".into(), Ok((RuleKind::Zero, 7, 5)), rule.map(|r| (r, s1.vars().map(|v| v.n).unwrap_or(0), s1.ell())));
    rec.check(|| "Zero row on S_1".into(), true, table_row_holds(RuleKind::Zero, before, s1.vars().ok()));

    walk_naive(&mut rec, k_max, mutation, |rec, before, rule, after| {
        let (vb, va) = match (before.vars(), after.vars()) {
            (Ok(b), Ok(a)) => (b, a),
            (Err(e), _) | (_, Err(e)) => return rec.error(before, &e),
        };
        rec.check(|| format!("{rule} from {before}"), true, table_row_holds(rule, vb, Some(va)));
        let signs = after.get(0) >= -1 && after.indexed()[1..].iter().all(|&a| a >= 0) && after.ell() >= 1;
        rec.check(|| format!("entry signs after {rule} from {before}"), true, signs);
        if rule == RuleKind::Increment {
            rec.check(|| format!("a_0 after Increment from {before}"), before.get(0) - 1, after.get(0));
        }
    })?;
    Ok(rec.finish())
}

/// Gray-code round trip, adjacency and shift law for `n < 2^bits`, plus the
/// `d_(j+1)(n+2, n) = d_j(n/2 + 1, n/2)` identity for `n < 2^12`, `j <= 14`.
pub fn suite_gray(bits: u32) -> SuiteResult {
    let mut rec = Recorder::new("gray");
    let width = bits as usize + 2;
    for n in 0..1u64 << bits {
        let len = 64 - n.leading_zeros() as usize;
        for extra in [0, 2] {
            let decoded = GrayDigits::of(n, len + extra).map(|g| g.decode());
            rec.check(|| format!("round trip n={n} len={}", len + extra), Ok(n), decoded);
        }
        let flips = (1..=width as u32).filter(|&i| gray_digit(n, i) != gray_digit(n + 1, i)).count();
        rec.check(|| format!("adjacency n={n}"), 1, flips);
        let shifted = (1..=width as u32).all(|i| gray_digit(n, i + 1) == gray_digit(n / 2, i));
        rec.check(|| format!("shift law n={n}"), true, shifted);
    }
    for n in 0..1u64 << 12 {
        for j in 0..=14 {
            rec.check(|| format!("d identity n={n} j={j}"), d(j, n / 2 + 1, n / 2), d(j + 1, n + 2, n));
        }
    }
    rec.finish()
}

/// Batched Increment runs against iterated steps, for every run in epochs `1..=k_max`.
pub fn suite_incr(k_max: u32) -> Result<SuiteResult> {
    require_k(k_max)?;
    let mut rec = Recorder::new("incr");

    let examples = [("0,0,3,2,6,8,18", "1,1,4,4,11,17,-1", 19), ("1,1,4,4,11,17", "2,2,6,8,20,0", 17)];
    for (from, to, count) in examples {
        let from: State = from.parse()?;
        rec.check(|| format!("batch from {from}"), Ok((to.parse::<State>()?, count)), batch_increments(&from));
    }

    // (run start, predicted end, steps so far)
    type OpenRun = (State, Result<(State, u64)>, u64);
    let mut open: Option<OpenRun> = None;
    let mut endings = [0u64; 3]; // Halve, Zero, Overflow
    walk_naive(&mut rec, k_max, Mutation::None, |rec, before, rule, after| {
        if rule == RuleKind::Increment {
            let run = open.get_or_insert_with(|| (before.clone(), batch_increments(before), 0));
            run.2 += 1;
        }
        if after.classify() != RuleKind::Increment {
            if let Some((start, predicted, steps)) = open.take() {
                let observed = Ok((after.clone(), steps));
                rec.check(|| format!("Increment run from {start}"), predicted, observed);
                match after.classify() {
                    RuleKind::Halve => endings[0] += 1,
                    RuleKind::Zero | RuleKind::Halt => endings[1] += 1,
                    RuleKind::Overflow => endings[2] += 1,
                    RuleKind::Increment => unreachable!(),
                }
            }
        }
    })?;
    for (what, seen) in ["a_0 = -1", "n = 0 with sigma = -1", "n = 2^ell - 1 with sigma = +1"].iter().zip(endings) {
        rec.check(|| format!("some run ends at {what}"), true, seen > 0);
    }
    Ok(rec.finish())
}

fn observe(rec: &mut Recorder, e: &State) -> Option<TransitSummary> {
    match next_empty(e) {
        Ok(t) => Some(t),
        Err(err) => {
            rec.error(e, &err);
            None
        }
    }
}

/// Prediction of the next bump index from an embanked `E` with `N(E) = E[i]`.
fn predicted_next_bump(i: usize, h: (u64, u64)) -> Result<usize> {
    Ok(match i {
        0 => nu2(h.0)? as usize,
        1 => nu2(h.1 + 1)? as usize + 1,
        i => i - 2,
    })
}

/// Weak-embankment bounds both ways, `h`/`s` updates under a bump, the next
/// bump index, and T2 cursor predictions against T1 observations, over every
/// empty state of epochs `1..=k_max`.
pub fn suite_embanked(k_max: u32) -> Result<SuiteResult> {
    require_k(k_max)?;
    let mut rec = Recorder::new("embanked");

    let example: State = "2,2,6,8,18,0".parse()?;
    if let Some(t) = observe(&mut rec, &example) {
        rec.check(|| "worked example".into(), (Some((15, 17)), true, Some(1)), (t.h(), t.embanked, t.bump_index));
    }
    let e2: State = "2,4,12,4".parse()?;
    rec.check(|| "E'' for k=1 fails the bounds".into(), Ok(false), weak_bounds(&e2));
    if let Some(t) = observe(&mut rec, &e2) {
        rec.check(|| "E'' for k=1 is not weakly embanked".into(), (false, true), (t.weakly_embanked, t.saw_overflow));
    }

    for k in 1..=k_max {
        let target = State::start(k + 1)?;
        let mut prev: Option<TransitSummary> = None;
        let mut cur = State::start(k)?;
        let mut visited = 0u64;
        while cur != target {
            let Some(t) = observe(&mut rec, &cur) else { break };
            visited += 1;
            if visited > 16 * pow2(2 * k + 1)? {
                rec.error(format!("epoch {k}"), &Error::check("reach S_(k+1)", &target, "too many transits"));
                break;
            }
            match weak_bounds(&cur) {
                Ok(wb) => {
                    rec.check(|| format!("bounds <=> weakly embanked at {cur}"), t.weakly_embanked, wb);
                }
                Err(e) => rec.error(&cur, &e),
            }
            rec.check(|| format!("embanked => weakly at {cur}"), true, !t.embanked || t.weakly_embanked);
            if let (Some(h), Some(s)) = (t.h(), t.s()) {
                rec.check(|| format!("h = floor(s/2) at {cur}"), (s.0 / 2, s.1 / 2), h);
            }

            if let Some(p) = prev.as_ref().filter(|p| p.embanked) {
                if let (Some(i), true) = (p.bump_index, t.weakly_embanked) {
                    // p.start = E, cur = N(E) = E[i]
                    let (h, s) = (p.h().expect("embanked"), p.s().expect("embanked"));
                    match h_after_bump(h, s, i) {
                        Ok(hs) => {
                            rec.check(|| format!("h, s after bump {i} of {}", p.start), Some(hs), t.h().zip(t.s()));
                        }
                        Err(e) => rec.error(&p.start, &e),
                    }
                    rec.check(|| format!("{cur} upgrades to embanked"), true, t.embanked);
                    match predicted_next_bump(i, h) {
                        Ok(j) => {
                            rec.check(|| format!("next bump after {cur}"), Some(j), t.bump_index);
                        }
                        Err(e) => rec.error(&cur, &e),
                    }
                }
            }
            cur = t.successor.clone();
            prev = Some(t);
        }

        cursor_against_transits(&mut rec, k)?;
    }
    Ok(rec.finish())
}

/// Every `N` inside every `N'` predicted by T2 is replayed with T1.
fn cursor_against_transits(rec: &mut Recorder, k: u32) -> Result<()> {
    let mut c = match seed_cursor(k) {
        Ok(c) => c,
        Err(e) => {
            rec.error(format!("seed k={k}"), &e);
            return Ok(());
        }
    };
    let big = pow2(2 * k)?;
    rec.check(|| format!("seed h_pred k={k}"), (big - 1, big), c.h_pred);
    for _ in 0..16 * pow2(2 * k + 1)? {
        if !weak_bounds(&c.state)? {
            // E'': the walk ends here and T2 must refuse to continue
            let Some(t) = observe(rec, &c.state) else { return Ok(()) };
            rec.check(|| format!("{} fails the bounds", c.state), (false, (1, 2 * big - 1)), (t.weakly_embanked, c.h_pred));
            rec.check(|| format!("T2 stops at {}", c.state), true, matches!(nprime_step(&c, true), Err(Error::BoundsViolation { .. })));
            return Ok(());
        }
        let bumps = match c.planned_bumps() {
            Ok(b) => b,
            Err(e) => {
                rec.error(&c.state, &e);
                return Ok(());
            }
        };
        let predicted = c.predicted_h_s()?;
        let mut state = c.state.clone();
        for &j in &bumps {
            let Some(t) = observe(rec, &state) else { return Ok(()) };
            if !t.weakly_embanked {
                // E'': T2 must refuse to continue here
                rec.check(|| format!("T2 stops at {state}"), true, matches!(nprime_step(&c, true), Err(Error::BoundsViolation { .. })));
                return Ok(());
            }
            rec.check(|| format!("bump index of {state}"), Some(j), t.bump_index);
            rec.check(|| format!("h, s of {state}"), Some(predicted), t.h().zip(t.s()));
            state = bump(&state, j)?;
            rec.check(|| format!("N of {}", t.start), &state, &t.successor);
        }
        match nprime_step(&c, true) {
            Ok(next) => {
                rec.check(|| format!("N' of {}", c.state), &state, &next.state);
                c = next;
            }
            Err(e) => {
                rec.error(&c.state, &e);
                return Ok(());
            }
        }
    }
    rec.error(format!("cursor walk k={k}"), &Error::check("reach E''", "bounds violation", "budget exhausted"));
    Ok(())
}

fn compare_reports(rec: &mut Recorder, k: u32, base: &EpochReport, other: &EpochReport) {
    let diff = base.disagreements(other);
    rec.check(|| format!("k={k} {} vs {}", base.tier, other.tier), Vec::<&str>::new(), diff);
}

fn epoch_report(rec: &mut Recorder, k: u32, tier: Tier) -> Option<EpochReport> {
    match run_epoch(k, EpochOptions::new(tier)) {
        Ok(r) => {
            rec.check(|| format!("k={k} {tier} closed-form checks"), true, r.tiers_agree.values().all(|&b| b));
            rec.check(|| format!("k={k} {tier} Overflow count"), 1, r.overflow_count);
            Some(r)
        }
        Err(e) => {
            rec.error(format!("epoch k={k} tier {tier}"), &e);
            None
        }
    }
}

/// Segment jumps against repeated `N'`: endpoints, entry deltas, `kappa` and `N'` counts.
fn segments_against_cursors(rec: &mut Recorder, k: u32) -> Result<()> {
    let big = pow2(2 * k)?;
    let mut c = seed_cursor(k)?;
    for _ in 0..4 {
        c = nprime_step(&c, true)?;
    }
    let mut m = 2u64;
    while m < big - 2 {
        let seg = Segment::starting_at(m)?;
        let jumped = segment_jump(&c, &seg)?;
        let mut walked: RootedCursor = c.clone();
        while walked.nprime_count < jumped.nprime_count {
            walked = nprime_step(&walked, true)?;
        }
        rec.check(|| format!("k={k} segment {m}->{}", seg.m_next), (RootTag::One, (big - seg.m_next - 1, big + seg.m_next)), (walked.tag, walked.h_pred));
        rec.check(|| format!("k={k} segment {m}->{} cursor", seg.m_next), &jumped, &walked);
        rec.check(|| format!("k={k} segment {m} a_0, a_1 deltas"), (2 * seg.d as i64, 2 * seg.d as i64), (walked.state.get(0) - c.state.get(0), walked.state.get(1) - c.state.get(1)));
        c = walked;
        m = next_odd_val(m)?;
    }
    Ok(())
}

/// Whole epochs at every tier: T0 = T1 = T2 = T3 for `k <= min(k_max, 3)`,
/// T2 = T3 for larger `k`, plus segment jumps against repeated `N'`.
pub fn suite_epoch(k_max: u32) -> Result<SuiteResult> {
    require_k(k_max)?;
    let mut rec = Recorder::new("epoch");
    for k in 1..=k_max {
        let tiers: &[Tier] = if k <= 3 { &Tier::ALL } else { &[Tier::T2, Tier::T3] };
        let reports: Vec<_> = tiers.iter().filter_map(|&t| epoch_report(&mut rec, k, t)).collect();
        if let Some(base) = reports.first() {
            for other in &reports[1..] {
                compare_reports(&mut rec, k, base, other);
            }
        }
        if let Err(e) = segments_against_cursors(&mut rec, k) {
            rec.error(format!("segments k={k}"), &e);
        }
    }
    Ok(rec.finish())
}

pub fn run_suite(name: &str, k_max: u32) -> Result<SuiteResult> {
    match name {
        "table" => suite_table(k_max.min(4), Mutation::None),
        "gray" => Ok(suite_gray(16)),
        "incr" => suite_incr(k_max.min(4)),
        "embanked" => suite_embanked(k_max),
        "epoch" => suite_epoch(k_max),
        other => Err(Error::Precondition(format!("unknown suite {other:?}; known: {}", SUITES.join(", ")))),
    }
}

/// Every suite, run in parallel.
pub fn suite_all(k_max: u32) -> Result<Vec<SuiteResult>> {
    require_k(k_max)?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = SUITES.iter().map(|name| scope.spawn(move || run_suite(name, k_max))).collect();
        handles.into_iter().map(|h| h.join().expect("suite thread panicked")).collect()
    })
}

/// Whether the suites that replay the rules (table, and through it every
/// T0 walk) catch a perturbed rule set.
pub fn mutation_detected(mutation: Mutation, k_max: u32) -> Result<bool> {
    Ok(!suite_table(k_max, mutation)?.passed())
}
