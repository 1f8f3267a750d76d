use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::manifest::{Manifest, ManifestRow};
use super::segment::{ContextSegment, Provenance, SegmentKind};
use crate::environment::EntryVerifier;
use crate::governance::AuditLog;
use crate::memory::{MemoryError, MemoryStore, VerificationOutcome};
use crate::Timestamp;

/// Retrieved-memory segments below this freshness are re-verified on
/// refresh.
pub const REFRESH_FRESHNESS_THRESHOLD: f64 = 0.5;

const W_RELEVANCE: f64 = 0.5;
const W_FRESHNESS: f64 = 0.3;
const W_VERBOSITY: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("mandatory-overflow: segment {segment} brings mandatory context to {required} tokens, budget {budget}")]
    MandatoryOverflow { segment: String, required: usize, budget: usize },
    #[error("malformed segment: {0}")]
    Malformed(String),
    #[error("duplicate segment id {0}")]
    DuplicateSegment(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextAssembly {
    pub segments: Vec<ContextSegment>,
    pub budget: usize,
    pub total_tokens: usize,
    pub manifest: Manifest,
}

impl ContextAssembly {
    pub fn manifest_of(&self) -> &Manifest {
        &self.manifest
    }

    /// Segments joined in order, as presented to the substrate.
    pub fn render(&self) -> String {
        self.segments.iter().map(|s| s.content.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn segment(&self, id: &str) -> Option<&ContextSegment> {
        self.segments.iter().find(|s| s.id == id)
    }
}

/// `0.5·relevance + 0.3·freshness − 0.2·min(1, tokens/budget)`.
pub fn score_segment(segment: &ContextSegment, budget: usize) -> f64 {
    let verbosity = if budget == 0 {
        1.0
    } else {
        (segment.token_count as f64 / budget as f64).min(1.0)
    };
    W_RELEVANCE * segment.relevance + W_FRESHNESS * segment.freshness - W_VERBOSITY * verbosity
}

struct Scored<'a> {
    segment: &'a ContextSegment,
    score: f64,
}

impl Scored<'_> {
    fn density(&self) -> f64 {
        self.score / self.segment.token_count.max(1) as f64
    }
}

/// Chooses optional segments under `residual` tokens: greedy by score
/// density, then compared against the best single segment that fits; the
/// better of the two wins (ties keep the greedy set). Returns picks in
/// selection order.
fn select<'a>(mut pool: Vec<Scored<'a>>, residual: usize) -> Vec<Scored<'a>> {
    pool.retain(|c| c.score > 0.0);
    pool.sort_by(|a, b| {
        b.density()
            .total_cmp(&a.density())
            .then_with(|| b.score.total_cmp(&a.score))
            .then_with(|| a.segment.id.cmp(&b.segment.id))
    });

    let mut used = 0;
    let mut greedy = Vec::new();
    let mut rest = Vec::new();
    for c in pool {
        if used + c.segment.token_count <= residual {
            used += c.segment.token_count;
            greedy.push(c);
        } else {
            rest.push(c);
        }
    }

    let greedy_total: f64 = greedy.iter().map(|c| c.score).sum();
    let best_single = rest
        .into_iter()
        .filter(|c| c.segment.token_count <= residual)
        .max_by(|a, b| a.score.total_cmp(&b.score).then_with(|| b.segment.id.cmp(&a.segment.id)));
    match best_single {
        Some(single) if single.score > greedy_total => vec![single],
        _ => greedy,
    }
}

/// Highest and second-highest scores at the two ends of the block, the rest
/// in descending score between them.
fn edge_placement<'a>(picks: &[Scored<'a>]) -> Vec<&'a ContextSegment> {
    let mut ranked: Vec<&Scored<'a>> = picks.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.segment.id.cmp(&b.segment.id)));
    let mut ordered: Vec<&ContextSegment> = Vec::with_capacity(ranked.len());
    if let Some(first) = ranked.first() {
        ordered.push(first.segment);
    }
    ordered.extend(ranked.iter().skip(2).map(|c| c.segment));
    if let Some(second) = ranked.get(1) {
        ordered.push(second.segment);
    }
    ordered
}

fn row(segment: &ContextSegment, score: f64) -> ManifestRow {
    ManifestRow {
        segment_id: segment.id.clone(),
        kind: segment.kind,
        provenance: segment.provenance.clone(),
        score,
        token_count: segment.token_count,
    }
}

/// Builds the turn's context.
///
/// Pinned priors and the task are always included (a task segment is made
/// from `task_text` unless one is supplied). The remaining budget goes to
/// optional candidates with positive score, chosen by score density.
pub fn assemble(task_text: &str, candidates: &[ContextSegment], budget: usize) -> Result<ContextAssembly, ContextError> {
    if budget == 0 {
        return Err(ContextError::ZeroBudget);
    }
    let mut seen = BTreeSet::new();
    for c in candidates {
        c.validate().map_err(ContextError::Malformed)?;
        if !seen.insert(c.id.as_str()) {
            return Err(ContextError::DuplicateSegment(c.id.clone()));
        }
    }

    let synthesized;
    let mut mandatory: Vec<&ContextSegment> =
        candidates.iter().filter(|c| c.kind == SegmentKind::PinnedPrior).collect();
    let supplied_tasks: Vec<&ContextSegment> = candidates.iter().filter(|c| c.kind == SegmentKind::Task).collect();
    if supplied_tasks.is_empty() {
        synthesized = ContextSegment::task(task_text);
        if seen.contains(synthesized.id.as_str()) {
            return Err(ContextError::DuplicateSegment(synthesized.id));
        }
        mandatory.push(&synthesized);
    } else {
        mandatory.extend(supplied_tasks);
    }

    let mut used = 0;
    for segment in &mandatory {
        used += segment.token_count;
        if used > budget {
            return Err(ContextError::MandatoryOverflow {
                segment: segment.id.clone(),
                required: used,
                budget,
            });
        }
    }

    let pool: Vec<Scored> = candidates
        .iter()
        .filter(|c| !c.kind.is_mandatory())
        .map(|segment| Scored {
            segment,
            score: score_segment(segment, budget),
        })
        .collect();
    let picks = select(pool, budget - used);

    let mut manifest = Manifest::default();
    let mut segments = Vec::new();
    for segment in &mandatory {
        manifest.rows.push(row(segment, score_segment(segment, budget)));
        segments.push((*segment).clone());
    }
    for pick in &picks {
        manifest.rows.push(row(pick.segment, pick.score));
    }
    segments.extend(edge_placement(&picks).into_iter().cloned());
    let total_tokens = segments.iter().map(|s| s.token_count).sum();

    Ok(ContextAssembly {
        segments,
        budget,
        total_tokens,
        manifest,
    })
}

/// What a refresh did, by memory entry id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefreshReport {
    pub verified: Vec<String>,
    pub removed: Vec<String>,
    pub indeterminate: Vec<String>,
    pub skipped: bool,
}

/// Re-verifies stale retrieved-memory segments against the environment.
///
/// Segments whose entry fails verification are dropped (and annotated in
/// the manifest); passing ones become fully fresh. Without an available
/// verifier the assembly is returned unchanged apart from a
/// `refresh-skipped` annotation.
pub fn refresh(
    assembly: &ContextAssembly,
    store: &mut MemoryStore,
    verifier: Option<&dyn EntryVerifier>,
    audit: &mut AuditLog,
    now: Timestamp,
) -> Result<(ContextAssembly, RefreshReport), ContextError> {
    let mut next = assembly.clone();
    let mut report = RefreshReport::default();
    let stale: Vec<(String, String)> = assembly
        .segments
        .iter()
        .filter(|s| s.kind == SegmentKind::RetrievedMemory && s.freshness < REFRESH_FRESHNESS_THRESHOLD)
        .filter_map(|s| match &s.provenance {
            Provenance::Memory(entry) => Some((s.id.clone(), entry.clone())),
            _ => None,
        })
        .collect();
    if stale.is_empty() {
        return Ok((next, report));
    }
    let Some(verifier) = verifier.filter(|v| v.available()) else {
        next.manifest.annotate("refresh-skipped", None);
        report.skipped = true;
        return Ok((next, report));
    };

    for (segment_id, entry_id) in stale {
        match store.verify_entry(&entry_id, verifier, audit, now)? {
            VerificationOutcome::Passed { .. } => {
                if let Some(s) = next.segments.iter_mut().find(|s| s.id == segment_id) {
                    s.freshness = 1.0;
                }
                next.manifest.annotate("refresh-verified", Some(&segment_id));
                report.verified.push(entry_id);
            }
            VerificationOutcome::Failed { .. } => {
                next.segments.retain(|s| s.id != segment_id);
                next.manifest.rows.retain(|r| r.segment_id != segment_id);
                next.manifest.annotate("refresh-removed", Some(&segment_id));
                report.removed.push(entry_id);
            }
            VerificationOutcome::Indeterminate => {
                next.manifest.annotate("refresh-indeterminate", Some(&segment_id));
                report.indeterminate.push(entry_id);
            }
        }
    }
    next.total_tokens = next.segments.iter().map(|s| s.token_count).sum();
    Ok((next, report))
}
