//! Aggregated verdicts: the stable JSON report consumed by users and the
//! test suite, the overall safety gate, and witness replay.

use serde::{Deserialize, Serialize};

use crate::calculus::{Action, Choice, Configuration, Process, Protocol, Rep, Trace};
use crate::conditions::{CondClass, FrameOpacityVerdict, WaReport};
use crate::explorer::{Bounds, ExploreStats, InclusionVerdict};
use crate::terms::Theory;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolMeta {
    pub name: String,
    pub shared: bool,
    pub rep_i: String,
    pub rep_r: String,
    pub ids: Vec<String>,
    pub id_subset: Vec<String>,
    pub sess_i: Vec<String>,
    pub sess_r: Vec<String>,
    pub channel_i: String,
    pub channel_r: String,
}

fn rep_str(r: Rep) -> String {
    match r {
        Rep::Bang => "bang".into(),
        Rep::Repeat => "repeat".into(),
    }
}

impl ProtocolMeta {
    pub fn of(p: &Protocol) -> ProtocolMeta {
        ProtocolMeta {
            name: p.name.clone(),
            shared: p.shared,
            rep_i: rep_str(p.rep_i),
            rep_r: rep_str(p.rep_r),
            ids: p.ids.clone(),
            id_subset: p.id_subset.clone(),
            sess_i: p.sess_i.clone(),
            sess_r: p.sess_r.clone(),
            channel_i: p.channel_i.clone(),
            channel_r: p.channel_r.clone(),
        }
    }
}

/// Frame-opacity verdict under one idealisation heuristic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoEntry {
    pub heuristic: String,
    pub verdict: FrameOpacityVerdict,
}

/// Both inclusion directions of the bounded trace-equivalence oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub property: String,
    pub forward: InclusionVerdict,
    pub backward: InclusionVerdict,
}

impl OracleReport {
    pub fn holds(&self) -> bool {
        self.forward.holds() && self.backward.holds()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timings {
    pub classify_ms: u64,
    pub conditions_ms: u64,
    pub oracle_ms: u64,
    pub total_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Both sufficient conditions hold at the bound: privacy follows.
    Safe,
    /// Some condition is violated, with a witness.
    Violated,
    /// Nothing violated, but not everything could be established.
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Safe => write!(f, "safe"),
            Verdict::Violated => write!(f, "violated"),
            Verdict::Inconclusive => write!(f, "inconclusive"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub protocol: ProtocolMeta,
    pub bounds: Bounds,
    pub property: String,
    pub conditionals: Vec<CondClass>,
    pub frame_opacity: Vec<FoEntry>,
    pub well_authentication: Option<WaReport>,
    pub oracle: Option<OracleReport>,
    pub stats: ExploreStats,
    pub timings: Timings,
    pub verdict: Verdict,
}

/// The Theorem 1 gate: `safe` only when frame opacity holds under every
/// requested heuristic and both parts of well-authentication hold; a single
/// violated sub-verdict makes the whole report `violated`; anything merely
/// undefined or unchecked leaves it `inconclusive`.
pub fn overall_verdict(
    fo: &[FoEntry],
    wa: Option<&WaReport>,
    oracle: Option<&OracleReport>,
) -> Verdict {
    use crate::conditions::WaVerdict;
    let fo_violated = fo.iter().any(|f| matches!(f.verdict, FrameOpacityVerdict::Violated { .. }));
    let wa_violated = wa.is_some_and(|w| {
        w.per_cond.iter().any(|(_, v)| matches!(v, WaVerdict::Violated(_)))
            || matches!(w.wa_ii, WaVerdict::Violated(_))
    });
    let oracle_violated = oracle.is_some_and(|o| !o.holds());
    if fo_violated || wa_violated || oracle_violated {
        return Verdict::Violated;
    }
    let fo_ok = !fo.is_empty() && fo.iter().all(|f| f.verdict.holds());
    let wa_ok = wa.is_some_and(|w| w.holds());
    if fo_ok && wa_ok {
        Verdict::Safe
    } else {
        Verdict::Inconclusive
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

// ---------------------------------------------------------------------------
// Witness replay
// ---------------------------------------------------------------------------

/// Cap on configurations kept per replayed action, and on silent steps
/// explored between two actions; replayed witnesses are shallow.
const REPLAY_WIDTH: usize = 64;
const REPLAY_SILENT: usize = 4096;

fn actions_match(got: &Action, want: &Action) -> bool {
    got == want
}

/// Re-execute a recorded trace against a scenario: every recorded action
/// must be reproducible in order, with silent steps (spawns and unfoldings)
/// interleaved freely. Returns false when the trace cannot be replayed.
pub fn replay_trace(scenario: Process, trace: &[Action], th: &Theory, b: &Bounds) -> bool {
    let mut frontier = vec![Configuration::initial(scenario)];
    for want in trace {
        let mut matched: Vec<Configuration> = Vec::new();
        let mut queue = std::mem::take(&mut frontier);
        let mut silent_budget = REPLAY_SILENT;
        while let Some(c) = queue.pop() {
            for choice in c.choices(th, b.max_identities, b.max_sessions) {
                let recipe = match (&choice, want) {
                    (Choice::Input { .. }, Action::In { recipe, .. }) => Some(recipe),
                    (Choice::Input { .. }, _) => continue,
                    _ => None,
                };
                match c.perform(&choice, recipe, th) {
                    Ok((c2, Some(a))) => {
                        if actions_match(&a, want) && matched.len() < REPLAY_WIDTH {
                            matched.push(c2);
                        }
                    }
                    Ok((c2, None)) => {
                        if silent_budget > 0 {
                            silent_budget -= 1;
                            queue.push(c2);
                        }
                    }
                    Err(_) => {}
                }
            }
        }
        if matched.is_empty() {
            return false;
        }
        frontier = matched;
    }
    true
}

/// Convenience: replay every witness trace found in a report against the
/// given scenario builder. Returns the traces that failed to replay.
pub fn failed_replays<'a>(
    traces: impl IntoIterator<Item = &'a Trace>,
    scenario: &Process,
    th: &Theory,
    b: &Bounds,
) -> Vec<Trace> {
    traces
        .into_iter()
        .filter(|t| !replay_trace(scenario.clone(), t, th, b))
        .cloned()
        .collect()
}

/// All witness traces recorded in a report, for replay checking.
pub fn witness_traces(r: &Report) -> Vec<&Trace> {
    let mut out = Vec::new();
    for f in &r.frame_opacity {
        match &f.verdict {
            FrameOpacityVerdict::Violated { trace, .. } => out.push(trace),
            FrameOpacityVerdict::Undefined { trace, .. } => out.push(trace),
            FrameOpacityVerdict::HoldsAtBound => {}
        }
    }
    if let Some(w) = &r.well_authentication {
        for (_, v) in &w.per_cond {
            if let crate::conditions::WaVerdict::Violated(viol) = v {
                out.push(&viol.trace);
            }
        }
        if let crate::conditions::WaVerdict::Violated(viol) = &w.wa_ii {
            out.push(&viol.trace);
        }
    }
    if let Some(o) = &r.oracle {
        for side in [&o.forward, &o.backward] {
            if let Some(w) = &side.witness {
                out.push(&w.trace);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{build_scenario, honest_trace, ScenarioKind};
    use crate::conditions::WaVerdict;
    use crate::fixtures::feldhofer;

    #[test]
    fn the_honest_trace_replays_in_the_multi_scenario() {
        let (p, th) = feldhofer();
        let (ta, _) = honest_trace(&p, &th).unwrap();
        // The honest trace is annotated with concrete agents that exist in
        // the multi-session scenario after two spawns per role.
        let scenario = build_scenario(&p, ScenarioKind::Multi);
        let b = Bounds::default();
        assert!(replay_trace(scenario, &ta, &th, &b));
    }

    #[test]
    fn a_corrupted_trace_does_not_replay() {
        let (p, th) = feldhofer();
        let (mut ta, _) = honest_trace(&p, &th).unwrap();
        // Flip an input message so no recipe computation can match it.
        for a in ta.iter_mut() {
            if let Action::In { message, .. } = a {
                *message = crate::terms::Term::name("bogus#");
                break;
            }
        }
        let scenario = build_scenario(&p, ScenarioKind::Multi);
        assert!(!replay_trace(scenario, &ta, &th, &Bounds::default()));
    }

    #[test]
    fn the_safety_gate_requires_every_subverdict_to_hold() {
        let fo_ok = vec![FoEntry {
            heuristic: "syntactic".into(),
            verdict: FrameOpacityVerdict::HoldsAtBound,
        }];
        let wa_ok = WaReport {
            per_cond: vec![(0, WaVerdict::HoldsAtBound)],
            wa_ii: WaVerdict::HoldsAtBound,
            responder_first_safe: true,
            shape_ok: vec![true],
        };
        assert_eq!(overall_verdict(&fo_ok, Some(&wa_ok), None), Verdict::Safe);
        // Missing either side downgrades to inconclusive, never safe.
        assert_eq!(overall_verdict(&[], Some(&wa_ok), None), Verdict::Inconclusive);
        assert_eq!(overall_verdict(&fo_ok, None, None), Verdict::Inconclusive);
        // Uniqueness is vacuous outside the shared case: still safe.
        let mut wa_na = wa_ok.clone();
        wa_na.wa_ii = WaVerdict::NotApplicable;
        assert_eq!(overall_verdict(&fo_ok, Some(&wa_na), None), Verdict::Safe);
        // An undefined frame-opacity verdict blocks safety without being a
        // violation.
        let fo_undef = vec![FoEntry {
            heuristic: "syntactic".into(),
            verdict: FrameOpacityVerdict::Undefined { trace: Vec::new(), label: "l1".into() },
        }];
        assert_eq!(overall_verdict(&fo_undef, Some(&wa_ok), None), Verdict::Inconclusive);
    }

    #[test]
    fn reports_serialize_with_snake_case_fields_and_schema_one() {
        let (p, _th) = feldhofer();
        let r = Report {
            schema: SCHEMA_VERSION,
            protocol: ProtocolMeta::of(&p),
            bounds: Bounds::default(),
            property: "unlinkability".into(),
            conditionals: Vec::new(),
            frame_opacity: Vec::new(),
            well_authentication: None,
            oracle: None,
            stats: ExploreStats::default(),
            timings: Timings { classify_ms: 0, conditions_ms: 0, oracle_ms: 0, total_ms: 0 },
            verdict: Verdict::Inconclusive,
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["verdict"], "inconclusive");
        assert_eq!(v["protocol"]["rep_i"], "bang");
        assert!(v["bounds"]["max_identities"].is_number());
    }
}
