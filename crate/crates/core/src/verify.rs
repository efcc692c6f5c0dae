//! Draft verification: self-evaluation, NLI conflict checks against trusted
//! reference documents, and their combination into one score.

use std::fmt::Write as _;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::{Entailment, GenerationRequest, Generator};
use crate::graph::DependencyGraph;
use crate::memory::MemoryStore;
use crate::prompts;
use crate::source::{Granularity, UnitKey};
use crate::{Error, Result};

/// References must score strictly above this to be trusted.
pub const TRUST_THRESHOLD: f64 = 0.9;
pub const DEFAULT_ACCEPT_THRESHOLD: f64 = 0.9;
pub const DEFAULT_TAU_NLI: f64 = 0.5;
/// Slack on the inclusive acceptance comparison so that a score such as
/// (0.8 + 1.0) / 2 is not rejected for float rounding.
const ACCEPT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConflictMode {
    /// Conflict when no reference entails the hypothesis with probability at
    /// least τ_nli.
    #[default]
    Literal,
    /// Conflict only when every reference judges the hypothesis contradiction-dominant.
    Strict,
}

impl std::str::FromStr for ConflictMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(ConflictMode::Literal),
            "strict" => Ok(ConflictMode::Strict),
            other => Err(Error::Config(format!("unknown conflict mode `{other}` (literal or strict)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfEvaluation {
    pub consistency: f64,
    pub completeness: f64,
    pub helpfulness: f64,
}

impl SelfEvaluation {
    pub fn new(consistency: f64, completeness: f64, helpfulness: f64) -> Result<Self> {
        let e = Self {
            consistency,
            completeness,
            helpfulness,
        };
        if [consistency, completeness, helpfulness].iter().all(|s| (0.0..=1.0).contains(s)) {
            Ok(e)
        } else {
            Err(Error::Verifier(format!("self-evaluation scores outside [0, 1]: {e:?}")))
        }
    }

    pub fn score(&self) -> f64 {
        (self.consistency + self.completeness + self.helpfulness) / 3.0
    }
}

fn parse_self_evaluation(reply: &str) -> Option<SelfEvaluation> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    let v: serde_json::Value = serde_json::from_str(reply.get(start..=end)?).ok()?;
    let get = |k: &str| v.get(k)?.as_f64();
    SelfEvaluation::new(get("consistency")?, get("completeness")?, get("helpfulness")?).ok()
}

/// Ask the generator for the three self-scores; one reprompt on an unusable reply.
pub fn self_evaluate(unit: &str, draft: &str, generator: &dyn Generator) -> Result<SelfEvaluation> {
    if draft.trim().is_empty() {
        return Err(Error::Verifier("empty draft".into()));
    }
    let mut request = GenerationRequest::new(prompts::SELF_EVAL_SYSTEM, prompts::self_eval_prompt(unit, draft));
    for attempt in 0..2 {
        if let Some(e) = parse_self_evaluation(&generator.generate(&request)?) {
            return Ok(e);
        }
        if attempt == 0 {
            request.user.push_str(prompts::REPROMPT_SUFFIX);
        }
    }
    Err(Error::Verifier("self-evaluation reply lacks one of the three scores".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDoc {
    pub unit: UnitKey,
    pub document: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub candidates: Vec<ReferenceDoc>,
    pub trusted: Vec<ReferenceDoc>,
}

impl ReferenceSet {
    /// Split candidates into the trusted subset by score.
    pub fn from_candidates(candidates: Vec<ReferenceDoc>) -> Self {
        let trusted = candidates.iter().filter(|r| r.score > TRUST_THRESHOLD).cloned().collect();
        Self { candidates, trusted }
    }
}

/// Candidate references are the unit's graph successors: dependencies for a
/// component, children for a module, parentless units for the repository.
/// Successors without a committed record (possible inside a cycle) are left
/// out, and flagged records are never trusted.
pub fn build_reference_set(unit: &UnitKey, graph: &DependencyGraph, memory: &MemoryStore) -> ReferenceSet {
    let candidates = graph
        .successors(unit)
        .unwrap_or_default()
        .into_iter()
        .filter_map(|succ| {
            let record = memory.get_unit(succ)?;
            Some(ReferenceDoc {
                unit: succ.clone(),
                document: record.document().to_string(),
                // a below-threshold commit can carry any score; treat it as untrusted
                score: if record.flagged() { 0.0 } else { record.verification_score() },
            })
        })
        .collect();
    ReferenceSet::from_candidates(candidates)
}

fn parse_claims(reply: &str) -> Option<Vec<String>> {
    let start = reply.find('[')?;
    let end = reply.rfind(']')?;
    let claims: Vec<String> = serde_json::from_str(reply.get(start..=end)?).ok()?;
    Some(claims.into_iter().map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect())
}

/// Decompose a draft into atomic claims. Two unusable replies give an empty
/// list and a warning.
pub fn extract_claims(draft: &str, generator: &dyn Generator) -> Result<Vec<String>> {
    if draft.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut request = GenerationRequest::new(prompts::CLAIM_SYSTEM, prompts::claim_prompt(draft));
    for attempt in 0..2 {
        if let Some(claims) = parse_claims(&generator.generate(&request)?) {
            return Ok(claims);
        }
        if attempt == 0 {
            request.user.push_str(prompts::REPROMPT_SUFFIX);
        }
    }
    tracing::warn!("claim extraction reply is not a JSON array of strings; no claims kept");
    Ok(Vec::new())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub claims: Vec<String>,
    pub hypotheses: Vec<String>,
}

/// Names a reference answers to: the full id, its final segment and, for
/// dotted ids, the last two segments (`Class.method`). Module paths also
/// answer to their dotted form.
pub fn reference_names(unit: &UnitKey) -> Vec<String> {
    let id = unit.id.as_str();
    let mut names = vec![id.to_string()];
    let dotted = if unit.granularity == Granularity::Module { id.replace('/', ".") } else { id.to_string() };
    if dotted != id {
        names.push(dotted.clone());
    }
    let segments: Vec<&str> = dotted.split('.').collect();
    if segments.len() >= 2 {
        names.push(segments[segments.len() - 2..].join("."));
    }
    names.push(segments[segments.len() - 1].to_string());
    names.sort();
    names.dedup();
    names
}

pub fn filter_hypotheses(claims: &[String], references: &ReferenceSet) -> HypothesisSet {
    let patterns: Vec<Regex> = references
        .trusted
        .iter()
        .flat_map(|r| reference_names(&r.unit))
        .map(|name| Regex::new(&format!(r"\b{}\b", regex::escape(&name))).expect("escaped name"))
        .collect();
    let hypotheses = claims
        .iter()
        .filter(|c| patterns.iter().any(|p| p.is_match(c)))
        .cloned()
        .collect();
    HypothesisSet {
        claims: claims.to_vec(),
        hypotheses,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisJudgment {
    pub hypothesis: String,
    pub best_entailment: f64,
    pub nearest: UnitKey,
    pub conflict: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConflictReport {
    pub judgments: Vec<HypothesisJudgment>,
    pub conflicts: Vec<String>,
    pub s_conflict: f64,
}

impl ConflictReport {
    pub fn from_counts(hypotheses: usize, conflicts: usize) -> f64 {
        if hypotheses == 0 {
            0.0
        } else {
            conflicts as f64 / hypotheses as f64
        }
    }
}

/// Judge every hypothesis against every trusted reference.
pub fn check_conflicts(
    hypotheses: &HypothesisSet,
    references: &ReferenceSet,
    tau_nli: f64,
    mode: ConflictMode,
    nli: &dyn Entailment,
) -> Result<ConflictReport> {
    if references.trusted.is_empty() || hypotheses.hypotheses.is_empty() {
        return Ok(ConflictReport::default());
    }
    let mut judgments = Vec::with_capacity(hypotheses.hypotheses.len());
    for h in &hypotheses.hypotheses {
        let mut best: Option<(f64, &UnitKey)> = None;
        let mut contradicted_everywhere = true;
        for r in &references.trusted {
            let j = nli.entail(&r.document, h)?;
            if best.is_none_or(|(e, _)| j.entailment > e) {
                best = Some((j.entailment, &r.unit));
            }
            if j.label() != crate::backends::NliLabel::Contradiction {
                contradicted_everywhere = false;
            }
        }
        let (best_entailment, nearest) = best.expect("trusted set is non-empty");
        let conflict = match mode {
            ConflictMode::Literal => best_entailment < tau_nli,
            ConflictMode::Strict => contradicted_everywhere,
        };
        judgments.push(HypothesisJudgment {
            hypothesis: h.clone(),
            best_entailment,
            nearest: nearest.clone(),
            conflict,
        });
    }
    let conflicts: Vec<String> = judgments.iter().filter(|j| j.conflict).map(|j| j.hypothesis.clone()).collect();
    let s_conflict = ConflictReport::from_counts(judgments.len(), conflicts.len());
    Ok(ConflictReport {
        judgments,
        conflicts,
        s_conflict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub self_evaluation: SelfEvaluation,
    pub conflict: ConflictReport,
    pub score: f64,
    pub passed: bool,
    pub threshold: f64,
    pub tau_nli: f64,
    /// Every decomposed claim of the draft, before filtering.
    pub claims: Vec<String>,
}

pub fn combined_score(s_self: f64, s_conflict: f64) -> f64 {
    (s_self + (1.0 - s_conflict)) / 2.0
}

pub fn passes(score: f64, threshold: f64) -> bool {
    score + ACCEPT_EPSILON >= threshold
}

pub fn combine(self_evaluation: SelfEvaluation, conflict: ConflictReport, threshold: f64) -> VerificationOutcome {
    let score = combined_score(self_evaluation.score(), conflict.s_conflict);
    VerificationOutcome {
        self_evaluation,
        conflict,
        score,
        passed: passes(score, threshold),
        threshold,
        tau_nli: DEFAULT_TAU_NLI,
        claims: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verifier {
    pub threshold: f64,
    pub tau_nli: f64,
    pub mode: ConflictMode,
}

impl Default for Verifier {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_ACCEPT_THRESHOLD,
            tau_nli: DEFAULT_TAU_NLI,
            mode: ConflictMode::Literal,
        }
    }
}

impl Verifier {
    pub fn verify(
        &self,
        unit: &UnitKey,
        draft: &str,
        graph: &DependencyGraph,
        memory: &MemoryStore,
        generator: &dyn Generator,
        nli: &dyn Entailment,
    ) -> Result<VerificationOutcome> {
        let self_evaluation = self_evaluate(unit.id.as_str(), draft, generator)?;
        let claims = extract_claims(draft, generator)?;
        let references = build_reference_set(unit, graph, memory);
        let hypotheses = filter_hypotheses(&claims, &references);
        let conflict = check_conflicts(&hypotheses, &references, self.tau_nli, self.mode, nli)?;
        let mut outcome = combine(self_evaluation, conflict, self.threshold);
        outcome.tau_nli = self.tau_nli;
        outcome.claims = claims;
        Ok(outcome)
    }
}

/// Observation text for the agent.
pub fn render_report(outcome: &VerificationOutcome) -> String {
    let mut out = String::new();
    let verdict = if outcome.passed { "passed" } else { "failed" };
    let s = &outcome.self_evaluation;
    let _ = writeln!(
        out,
        "verification {verdict}, score={:.4} (threshold {:.2})",
        outcome.score, outcome.threshold
    );
    let _ = writeln!(
        out,
        "self-evaluation: consistency={:.2} completeness={:.2} helpfulness={:.2} mean={:.4}",
        s.consistency,
        s.completeness,
        s.helpfulness,
        s.score()
    );
    let _ = writeln!(
        out,
        "conflict score: {:.4} ({} of {} checked claims unsupported)",
        outcome.conflict.s_conflict,
        outcome.conflict.conflicts.len(),
        outcome.conflict.judgments.len()
    );
    for j in outcome.conflict.judgments.iter().filter(|j| j.conflict) {
        let _ = writeln!(
            out,
            "- unsupported: \"{}\" (best entailment {:.3}, nearest reference {})",
            j.hypothesis, j.best_entailment, j.nearest
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_evaluation_means() {
        assert!((SelfEvaluation::new(0.9, 0.9, 0.9).unwrap().score() - 0.9).abs() < 1e-12);
        assert!((SelfEvaluation::new(1.0, 0.8, 0.7).unwrap().score() - 2.5 / 3.0).abs() < 1e-12);
        assert!(SelfEvaluation::new(1.2, 0.8, 0.7).is_err());
    }

    #[test]
    fn replies_are_parsed_leniently() {
        let e = parse_self_evaluation("Sure: {\"consistency\": 1, \"completeness\": 0.5, \"helpfulness\": 0}").unwrap();
        assert_eq!(e.completeness, 0.5);
        assert!(parse_self_evaluation("{\"consistency\": 1, \"completeness\": 0.5}").is_none());
        assert_eq!(parse_claims("```json\n[\"a b c\", \" \"]\n```"), Some(vec!["a b c".to_string()]));
        assert_eq!(parse_claims("{\"claims\": 1}"), None);
    }

    #[test]
    fn combination_boundaries() {
        let o = combine(SelfEvaluation::new(1.0, 1.0, 1.0).unwrap(), ConflictReport::default(), 0.9);
        assert_eq!((o.score, o.passed), (1.0, true));
        assert!((combined_score(0.9, 0.2) - 0.85).abs() < 1e-12);
        assert!(!passes(combined_score(0.9, 0.2), 0.9));
        assert!(passes(combined_score(0.8, 0.0), 0.9));
        assert!(!passes(0.8999, 0.9));
    }

    #[test]
    fn reference_names_cover_tails() {
        let names = reference_names(&UnitKey::component("pkg.data.DataProcessor.process"));
        assert!(names.contains(&"DataProcessor.process".to_string()));
        assert!(names.contains(&"process".to_string()));
        let names = reference_names(&UnitKey::module("pkg/sub"));
        assert_eq!(names, vec!["pkg.sub", "pkg/sub", "sub"]);
    }

    #[test]
    fn filtering_uses_word_boundaries() {
        let refs = ReferenceSet::from_candidates(vec![ReferenceDoc {
            unit: UnitKey::component("app.data.Loader.fetch"),
            document: "doc".into(),
            score: 0.95,
        }]);
        let claims: Vec<String> = [
            "report calls Loader.fetch for rows.",
            "fetch_all is unrelated.",
            "It calls app.data.Loader.fetch once.",
            "The loader caches nothing.",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let h = filter_hypotheses(&claims, &refs);
        assert_eq!(h.hypotheses, vec![claims[0].clone(), claims[2].clone()]);
        assert_eq!(h.claims.len(), 4);
    }

    #[test]
    fn untrusted_references_are_dropped() {
        let doc = |id: &str, score| ReferenceDoc {
            unit: UnitKey::component(id),
            document: String::new(),
            score,
        };
        let set = ReferenceSet::from_candidates(vec![doc("a", 0.95), doc("b", 0.85), doc("c", 0.9)]);
        assert_eq!(set.trusted.len(), 1);
        assert_eq!(set.trusted[0].unit, UnitKey::component("a"));
    }
}
