//! Independent audit of a produced student checkpoint.
//!
//! Provenance is re-derived by brute-force position mapping (deliberately a
//! separate code path from the executor's gather) and compared bitwise, zero
//! tolerance. Consistency is audited from tensor contents, not by trusting
//! the plan's claimed index sets: per-axis index sets are recovered by
//! matching student slices against teacher slices, then cross-checked per
//! dimension group. A plan that lies about its indices surfaces either as a
//! provenance mismatch or as disagreeing recovered sets.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::plan::{AxisDirective, SelectionPlan, TensorDirective};
use crate::store::{Checkpoint, TensorRecord};

const MAX_REPORTED_POSITIONS: usize = 8;

/// Where a student tensor's values came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Provenance {
    AllMatched,
    Mismatch {
        count: usize,
        /// First few mismatching flat positions.
        positions: Vec<usize>,
    },
    /// Tensor could not be compared element-wise (missing or mis-shaped).
    Structural {
        detail: String,
    },
    Skipped {
        reason: String,
    },
}

/// Result of recovering one axis index set from values.
#[derive(Debug, Clone, PartialEq)]
pub enum InferredIndices {
    Recovered(Vec<usize>),
    /// Duplicate teacher slices prevent unique recovery; per student
    /// position, the candidate teacher indices.
    Ambiguous {
        candidates: Vec<Vec<usize>>,
    },
    /// Some student slice matches no teacher slice at all.
    NoMatch {
        position: usize,
    },
}

impl InferredIndices {
    fn candidates(&self) -> Option<Vec<Vec<usize>>> {
        match self {
            InferredIndices::Recovered(idx) => Some(idx.iter().map(|&i| vec![i]).collect()),
            InferredIndices::Ambiguous { candidates } => Some(candidates.clone()),
            InferredIndices::NoMatch { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GroupConsistency {
    /// All tensors in the group select the same recovered index set.
    Consistent { indices: Vec<usize> },
    /// At least two tensors select provably different indices.
    Inconsistent { witnesses: Vec<String> },
    /// Duplicate content prevents recovery (e.g. constant tensors).
    Undetermined { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorAudit {
    pub name: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub plan_digest: String,
    /// Whether the student metadata carries this plan's digest; `None` when
    /// no digest is recorded.
    pub digest_matched: Option<bool>,
    pub tensors: Vec<TensorAudit>,
    pub groups: BTreeMap<String, GroupConsistency>,
    pub fixed_axis_failures: Vec<String>,
    pub warnings: Vec<String>,
    pub verdict: Verdict,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// One human-readable line per finding, for CLI output.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        let matched = self
            .tensors
            .iter()
            .filter(|t| t.provenance == Provenance::AllMatched)
            .count();
        lines.push(format!(
            "provenance: {matched}/{} tensors matched bitwise",
            self.tensors.len()
        ));
        for t in &self.tensors {
            match &t.provenance {
                Provenance::AllMatched => {}
                Provenance::Mismatch { count, positions } => lines.push(format!(
                    "  MISMATCH {}: {count} positions differ (first: {positions:?})",
                    t.name
                )),
                Provenance::Structural { detail } => {
                    lines.push(format!("  STRUCTURAL {}: {detail}", t.name))
                }
                Provenance::Skipped { reason } => {
                    lines.push(format!("  skipped {}: {reason}", t.name))
                }
            }
        }
        for (group, status) in &self.groups {
            match status {
                GroupConsistency::Consistent { indices } => lines.push(format!(
                    "group {group}: consistent ({} indices)",
                    indices.len()
                )),
                GroupConsistency::Inconsistent { witnesses } => lines.push(format!(
                    "group {group}: INCONSISTENT (witnesses: {})",
                    witnesses.join(", ")
                )),
                GroupConsistency::Undetermined { reason } => {
                    lines.push(format!("group {group}: undetermined ({reason})"))
                }
            }
        }
        for f in &self.fixed_axis_failures {
            lines.push(format!("fixed-axis FAIL: {f}"));
        }
        for w in &self.warnings {
            lines.push(format!("warning: {w}"));
        }
        lines.push(format!(
            "verdict: {}",
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        lines
    }
}

/// Recover which teacher slice each student slice came from by exact content
/// match. `Recovered` when every student slice matches exactly one teacher
/// slice; `Ambiguous` when duplicates leave several candidates.
pub fn infer_indices(student_slices: &[Vec<u8>], teacher_slices: &[Vec<u8>]) -> InferredIndices {
    let mut by_content: HashMap<&[u8], Vec<usize>> = HashMap::new();
    for (i, slice) in teacher_slices.iter().enumerate() {
        by_content.entry(slice.as_slice()).or_default().push(i);
    }
    let mut candidates = Vec::with_capacity(student_slices.len());
    let mut unique = true;
    for (j, slice) in student_slices.iter().enumerate() {
        match by_content.get(slice.as_slice()) {
            None => return InferredIndices::NoMatch { position: j },
            Some(matches) => {
                if matches.len() > 1 {
                    unique = false;
                }
                candidates.push(matches.clone());
            }
        }
    }
    if unique {
        InferredIndices::Recovered(candidates.iter().map(|c| c[0]).collect())
    } else {
        InferredIndices::Ambiguous { candidates }
    }
}

/// Audit a student checkpoint against its teacher and plan. Never fails on
/// findings; everything lands in the report.
pub fn verify(
    student: &Checkpoint,
    teacher: &Checkpoint,
    plan: &SelectionPlan,
) -> Result<VerificationReport> {
    let digest = plan.digest();
    let digest_matched = student.metadata().get("plan_digest").map(|d| d == &digest);
    let mut warnings = Vec::new();
    match digest_matched {
        Some(true) => {}
        Some(false) => warnings.push("student metadata records a different plan digest".into()),
        None => warnings.push("student metadata records no plan digest".into()),
    }

    // Per-tensor audits are independent; run them in parallel and reduce in
    // plan order so the report is deterministic.
    struct DirectiveAudit {
        audit: TensorAudit,
        witnesses: Vec<(String, String, InferredIndices)>,
        fixed_failures: Vec<String>,
    }

    let audits: Vec<DirectiveAudit> = plan
        .tensors
        .par_iter()
        .map(|directive| {
            let mut fixed_failures = Vec::new();
            let mut witnesses = Vec::new();
            let provenance = match (
                student.get(&directive.student),
                teacher.get(&directive.source),
            ) {
                (None, _) => Provenance::Structural {
                    detail: format!("student tensor {:?} is missing", directive.student),
                },
                (_, None) => Provenance::Structural {
                    detail: format!("teacher tensor {:?} is missing", directive.source),
                },
                (Some(s_rec), Some(t_rec)) => {
                    match check_structure(directive, s_rec, t_rec, &mut fixed_failures) {
                        Err(detail) => Provenance::Structural { detail },
                        Ok(()) => {
                            let prov = compare_values(directive, s_rec, t_rec);
                            for (axis, ax) in directive.axes.iter().enumerate() {
                                if let AxisDirective::Select { group, .. } = ax {
                                    let inferred = infer_axis(directive, s_rec, t_rec, axis);
                                    witnesses.push((
                                        group.clone(),
                                        format!("{}[axis {axis}]", directive.student),
                                        inferred,
                                    ));
                                }
                            }
                            prov
                        }
                    }
                }
            };
            DirectiveAudit {
                audit: TensorAudit {
                    name: directive.student.clone(),
                    provenance,
                },
                witnesses,
                fixed_failures,
            }
        })
        .collect();

    let mut tensors = Vec::new();
    let mut fixed_axis_failures = Vec::new();
    let mut group_witnesses: Vec<(String, String, InferredIndices)> = Vec::new();
    for a in audits {
        tensors.push(a.audit);
        group_witnesses.extend(a.witnesses);
        fixed_axis_failures.extend(a.fixed_failures);
    }

    for fresh in &plan.fresh {
        let provenance = if student.contains(&fresh.name) {
            Provenance::Skipped {
                reason: "freshly initialized (not selected from teacher)".into(),
            }
        } else {
            Provenance::Structural {
                detail: format!("fresh tensor {:?} is missing", fresh.name),
            }
        };
        tensors.push(TensorAudit {
            name: fresh.name.clone(),
            provenance,
        });
    }

    let covered: std::collections::HashSet<&str> = plan
        .tensors
        .iter()
        .map(|d| d.student.as_str())
        .chain(plan.fresh.iter().map(|f| f.name.as_str()))
        .collect();
    for name in student.names() {
        if !covered.contains(name) {
            warnings.push(format!(
                "student tensor {name:?} is not covered by the plan"
            ));
        }
    }

    let groups = audit_groups(&group_witnesses, plan, &mut warnings);

    let provenance_ok = tensors.iter().all(|t| {
        matches!(
            t.provenance,
            Provenance::AllMatched | Provenance::Skipped { .. }
        )
    });
    let consistency_ok = !plan.element_method.requires_consistency()
        || groups
            .values()
            .all(|g| !matches!(g, GroupConsistency::Inconsistent { .. }));
    let verdict = if provenance_ok && consistency_ok && fixed_axis_failures.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };

    Ok(VerificationReport {
        plan_digest: digest,
        digest_matched,
        tensors,
        groups,
        fixed_axis_failures,
        warnings,
        verdict,
    })
}

/// Shape-level checks; fixed-axis findings accumulate in `failures`.
fn check_structure(
    directive: &TensorDirective,
    s_rec: &TensorRecord,
    t_rec: &TensorRecord,
    failures: &mut Vec<String>,
) -> std::result::Result<(), String> {
    if s_rec.dtype() != t_rec.dtype() {
        return Err(format!(
            "dtype differs: student {}, teacher {}",
            s_rec.dtype(),
            t_rec.dtype()
        ));
    }
    if s_rec.rank() != directive.axes.len() || t_rec.rank() != directive.axes.len() {
        return Err(format!(
            "rank differs from plan: student {}, teacher {}, plan {}",
            s_rec.rank(),
            t_rec.rank(),
            directive.axes.len()
        ));
    }
    for (axis, ax) in directive.axes.iter().enumerate() {
        let (s_len, t_len) = (s_rec.shape()[axis], t_rec.shape()[axis]);
        match ax {
            AxisDirective::Fixed { len } => {
                if s_len != *len || t_len != *len {
                    failures.push(format!(
                        "{} axis {axis}: required {len}, student {s_len}, teacher {t_len}",
                        directive.student
                    ));
                }
            }
            AxisDirective::Select {
                indices,
                teacher_width,
                ..
            } => {
                if s_len != indices.len() {
                    return Err(format!(
                        "axis {axis}: student length {s_len} != {} planned indices",
                        indices.len()
                    ));
                }
                if t_len != *teacher_width {
                    return Err(format!(
                        "axis {axis}: teacher length {t_len} != planned width {teacher_width}"
                    ));
                }
                if indices.iter().any(|&i| i >= *teacher_width) {
                    return Err(format!("axis {axis}: plan index out of teacher range"));
                }
            }
        }
    }
    Ok(())
}

/// Brute-force element comparison: walk every student position, map each
/// coordinate through the plan, compare bytes.
fn compare_values(
    directive: &TensorDirective,
    s_rec: &TensorRecord,
    t_rec: &TensorRecord,
) -> Provenance {
    let rank = directive.axes.len();
    let s_shape = s_rec.shape();
    let t_shape = t_rec.shape();

    let mut t_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        t_strides[i] = t_strides[i + 1] * t_shape[i + 1];
    }

    let esize = s_rec.dtype().size();
    let s_data = s_rec.data();
    let t_data = t_rec.data();
    let total = s_rec.num_elements();

    let mut mismatches = 0usize;
    let mut positions = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let mut t_flat = 0usize;
        for axis in (0..rank).rev() {
            let coord = rem % s_shape[axis];
            rem /= s_shape[axis];
            let t_coord = match &directive.axes[axis] {
                AxisDirective::Fixed { .. } => coord,
                AxisDirective::Select { indices, .. } => indices[coord],
            };
            t_flat += t_coord * t_strides[axis];
        }
        if s_data[flat * esize..(flat + 1) * esize] != t_data[t_flat * esize..(t_flat + 1) * esize]
        {
            if positions.len() < MAX_REPORTED_POSITIONS {
                positions.push(flat);
            }
            mismatches += 1;
        }
    }
    if mismatches == 0 {
        Provenance::AllMatched
    } else {
        Provenance::Mismatch {
            count: mismatches,
            positions,
        }
    }
}

/// Recover the index set actually used on `axis` from tensor contents.
///
/// Other axes of the teacher are gathered through the plan so slices become
/// comparable; the axis under inference is matched purely by content. If the
/// plan lies about several axes at once the slices match nothing and the
/// result is `NoMatch`, so a lying plan cannot audit clean.
fn infer_axis(
    directive: &TensorDirective,
    s_rec: &TensorRecord,
    t_rec: &TensorRecord,
    axis: usize,
) -> InferredIndices {
    let t_len = t_rec.shape()[axis];
    let s_len = s_rec.shape()[axis];

    let teacher_tables: Vec<Vec<usize>> = directive
        .axes
        .iter()
        .enumerate()
        .map(|(a, ax)| {
            if a == axis {
                vec![] // filled per slice
            } else {
                match ax {
                    AxisDirective::Fixed { len } => (0..*len).collect(),
                    AxisDirective::Select { indices, .. } => indices.clone(),
                }
            }
        })
        .collect();
    let student_tables: Vec<Vec<usize>> = s_rec
        .shape()
        .iter()
        .enumerate()
        .map(|(a, &len)| {
            if a == axis {
                vec![]
            } else {
                (0..len).collect()
            }
        })
        .collect();

    let teacher_slices: Vec<Vec<u8>> = (0..t_len)
        .map(|i| extract_slice(t_rec, axis, i, &teacher_tables))
        .collect();
    let student_slices: Vec<Vec<u8>> = (0..s_len)
        .map(|j| extract_slice(s_rec, axis, j, &student_tables))
        .collect();

    infer_indices(&student_slices, &teacher_slices)
}

/// Bytes of one slice: fix `axis` at `fixed_index`, walk the other axes
/// through `tables` in row-major order.
fn extract_slice(
    record: &TensorRecord,
    axis: usize,
    fixed_index: usize,
    tables: &[Vec<usize>],
) -> Vec<u8> {
    let rank = record.rank();
    let shape = record.shape();
    let mut strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }

    let other_axes: Vec<usize> = (0..rank).filter(|&a| a != axis).collect();
    let count: usize = other_axes.iter().map(|&a| tables[a].len()).product();
    let esize = record.dtype().size();
    let data = record.data();
    let mut out = Vec::with_capacity(count * esize);

    let base = fixed_index * strides[axis];
    let mut coords = vec![0usize; other_axes.len()];
    loop {
        let mut flat = base;
        for (k, &a) in other_axes.iter().enumerate() {
            flat += tables[a][coords[k]] * strides[a];
        }
        out.extend_from_slice(&data[flat * esize..(flat + 1) * esize]);

        let mut k = other_axes.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            coords[k] += 1;
            if coords[k] < tables[other_axes[k]].len() {
                break;
            }
            coords[k] = 0;
        }
    }
}

/// Cross-check the recovered per-tensor index sets within each dim group.
fn audit_groups(
    witnesses: &[(String, String, InferredIndices)],
    plan: &SelectionPlan,
    warnings: &mut Vec<String>,
) -> BTreeMap<String, GroupConsistency> {
    let mut by_group: BTreeMap<&str, Vec<(&str, &InferredIndices)>> = BTreeMap::new();
    for (group, tensor, inferred) in witnesses {
        by_group.entry(group).or_default().push((tensor, inferred));
    }

    let mut out = BTreeMap::new();
    for (group, members) in by_group {
        out.insert(
            group.to_string(),
            audit_one_group(group, &members, plan, warnings),
        );
    }
    out
}

fn audit_one_group(
    group: &str,
    members: &[(&str, &InferredIndices)],
    plan: &SelectionPlan,
    warnings: &mut Vec<String>,
) -> GroupConsistency {
    // Content that is not from the teacher at all is inconsistent by itself.
    let no_match: Vec<String> = members
        .iter()
        .filter(|(_, inf)| matches!(inf, InferredIndices::NoMatch { .. }))
        .map(|(name, _)| name.to_string())
        .collect();
    if !no_match.is_empty() {
        return GroupConsistency::Inconsistent {
            witnesses: no_match,
        };
    }

    let candidate_sets: Vec<(&str, Vec<Vec<usize>>)> = members
        .iter()
        .map(|(name, inf)| (*name, inf.candidates().expect("no-match handled above")))
        .collect();
    let positions = candidate_sets[0].1.len();
    if candidate_sets.iter().any(|(_, c)| c.len() != positions) {
        // Student widths differ within one group: descriptors disagree with
        // the checkpoints; provenance checks will already have failed.
        return GroupConsistency::Undetermined {
            reason: "member tensors have differing student widths".into(),
        };
    }

    let mut consensus: Vec<Vec<usize>> = Vec::with_capacity(positions);
    for pos in 0..positions {
        let mut intersection: Option<Vec<usize>> = None;
        for (_, candidates) in &candidate_sets {
            let cs = &candidates[pos];
            intersection = Some(match intersection {
                None => cs.clone(),
                Some(acc) => acc.into_iter().filter(|i| cs.contains(i)).collect(),
            });
        }
        let intersection = intersection.unwrap_or_default();
        if intersection.is_empty() {
            // Find a concrete pair of disagreeing tensors to report.
            let witnesses = disagreeing_pair(&candidate_sets, pos);
            return GroupConsistency::Inconsistent { witnesses };
        }
        consensus.push(intersection);
    }

    if consensus.iter().all(|c| c.len() == 1) {
        let indices: Vec<usize> = consensus.iter().map(|c| c[0]).collect();
        if let Some(planned) = plan.group_indices.get(group) {
            if planned.indices != indices {
                warnings.push(format!(
                    "group {group}: recovered indices differ from the plan's claim"
                ));
            }
        }
        GroupConsistency::Consistent { indices }
    } else {
        GroupConsistency::Undetermined {
            reason: "duplicate teacher slices prevent unique recovery".into(),
        }
    }
}

fn disagreeing_pair(candidate_sets: &[(&str, Vec<Vec<usize>>)], pos: usize) -> Vec<String> {
    for (i, (name_a, ca)) in candidate_sets.iter().enumerate() {
        for (name_b, cb) in candidate_sets.iter().skip(i + 1) {
            let disjoint = ca[pos].iter().all(|x| !cb[pos].contains(x));
            if disjoint {
                return vec![name_a.to_string(), name_b.to_string()];
            }
        }
    }
    candidate_sets.iter().map(|(n, _)| n.to_string()).collect()
}
