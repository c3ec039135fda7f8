//! Selection planning: layer mapping, index-set generation, and the
//! serializable `SelectionPlan` that fully determines a selection run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{ArchDescriptor, AxisRole, ExpandedTensor, TensorSite};
use crate::error::{Error, Result};
use crate::rng::{rng_for, sample_sorted};

/// Which teacher layers source the student layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerStrategy {
    FirstN,
    Uniform,
    MidN,
    LastN,
}

impl fmt::Display for LayerStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerStrategy::FirstN => "first_n",
            LayerStrategy::Uniform => "uniform",
            LayerStrategy::MidN => "mid_n",
            LayerStrategy::LastN => "last_n",
        };
        f.write_str(s)
    }
}

impl FromStr for LayerStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first_n" => Ok(LayerStrategy::FirstN),
            "uniform" => Ok(LayerStrategy::Uniform),
            "mid_n" => Ok(LayerStrategy::MidN),
            "last_n" => Ok(LayerStrategy::LastN),
            other => Err(Error::InvalidArgument(format!(
                "unknown layer strategy {other:?} (first_n|uniform|mid_n|last_n)"
            ))),
        }
    }
}

/// How slices are picked along each scaling axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementMethod {
    Uniform,
    Consecutive,
    RandomConsistent,
    RandomInconsistent,
    /// Pruning baseline: per-tensor, per-axis top slices by L1 norm.
    L1Prune,
}

impl ElementMethod {
    /// Whether the method promises one shared index set per dim_group.
    pub fn requires_consistency(self) -> bool {
        matches!(
            self,
            ElementMethod::Uniform | ElementMethod::Consecutive | ElementMethod::RandomConsistent
        )
    }

    pub fn needs_seed(self) -> bool {
        matches!(
            self,
            ElementMethod::RandomConsistent | ElementMethod::RandomInconsistent
        )
    }
}

impl fmt::Display for ElementMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ElementMethod::Uniform => "uniform",
            ElementMethod::Consecutive => "consecutive",
            ElementMethod::RandomConsistent => "random_consistent",
            ElementMethod::RandomInconsistent => "random_inconsistent",
            ElementMethod::L1Prune => "l1",
        };
        f.write_str(s)
    }
}

impl FromStr for ElementMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(ElementMethod::Uniform),
            "consecutive" => Ok(ElementMethod::Consecutive),
            "random_consistent" => Ok(ElementMethod::RandomConsistent),
            "random_inconsistent" => Ok(ElementMethod::RandomInconsistent),
            "l1" => Ok(ElementMethod::L1Prune),
            other => Err(Error::InvalidArgument(format!(
                "unknown element method {other:?}"
            ))),
        }
    }
}

/// `s` evenly spaced indices out of `[0, t)`: `indices[i] = floor(i*t/s)`.
///
/// Degenerates to the identity at `s == t`, always starts at 0, and is
/// strictly increasing because consecutive values differ by at least
/// `t/s >= 1`.
pub fn even_indices(t: usize, s: usize) -> Result<Vec<usize>> {
    if s == 0 || s > t {
        return Err(Error::SelectionTooWide {
            wanted: s,
            available: t,
        });
    }
    Ok((0..s).map(|i| i * t / s).collect())
}

/// Teacher layer for each student layer of a single stage.
pub fn select_layers(
    depth_t: usize,
    depth_s: usize,
    strategy: LayerStrategy,
) -> Result<Vec<usize>> {
    if depth_s == 0 || depth_s > depth_t {
        return Err(Error::SelectionTooWide {
            wanted: depth_s,
            available: depth_t,
        });
    }
    let layers = match strategy {
        LayerStrategy::FirstN => (0..depth_s).collect(),
        LayerStrategy::LastN => (depth_t - depth_s..depth_t).collect(),
        // Centered contiguous block; offset rounds down when the margin is odd.
        LayerStrategy::MidN => {
            let offset = (depth_t - depth_s) / 2;
            (offset..offset + depth_s).collect()
        }
        LayerStrategy::Uniform => even_indices(depth_t, depth_s)?,
    };
    Ok(layers)
}

/// Strictly increasing index set for one dimension group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    pub group: String,
    pub teacher_width: usize,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLayerMap {
    pub stage_id: String,
    /// Indexed by student layer; value is the sourcing teacher layer.
    pub teacher_layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub strategy: LayerStrategy,
    pub stages: Vec<StageLayerMap>,
}

/// Per-axis slice directive for one tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisDirective {
    /// Copy the axis as-is; teacher and student lengths both equal `len`.
    Fixed { len: usize },
    /// Keep `indices` (strictly increasing) out of the teacher axis.
    Select {
        group: String,
        teacher_width: usize,
        indices: Vec<usize>,
    },
}

impl AxisDirective {
    pub fn student_len(&self) -> usize {
        match self {
            AxisDirective::Fixed { len } => *len,
            AxisDirective::Select { indices, .. } => indices.len(),
        }
    }

    pub fn teacher_len(&self) -> usize {
        match self {
            AxisDirective::Fixed { len } => *len,
            AxisDirective::Select { teacher_width, .. } => *teacher_width,
        }
    }
}

/// Complete slice recipe for one student tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDirective {
    pub student: String,
    pub source: String,
    pub axes: Vec<AxisDirective>,
}

/// Student tensor excluded from selection and freshly initialized instead
/// (classifier head with a different label space).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreshInit {
    pub name: String,
    pub std: f64,
}

/// Reproducible record of one selection run: layer mapping, index sets, and
/// per-tensor slice directives. Serializes to JSON; re-executing a plan on
/// the same teacher yields byte-identical output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub version: u32,
    pub family: String,
    pub layer_strategy: LayerStrategy,
    pub element_method: ElementMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub teacher: ArchDescriptor,
    pub student: ArchDescriptor,
    pub layer_plan: LayerPlan,
    /// One shared index set per dim_group; empty for methods that select per
    /// tensor (random without consistency, L1 pruning).
    pub group_indices: BTreeMap<String, IndexSet>,
    pub tensors: Vec<TensorDirective>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fresh: Vec<FreshInit>,
}

pub const PLAN_VERSION: u32 = 1;

impl SelectionPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: SelectionPlan = serde_json::from_str(text)?;
        plan.teacher.validate()?;
        plan.student.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SelectionPlan::from_json(&text)
    }

    /// Content hash of the canonical plan encoding, embedded in output
    /// checkpoint metadata for audit.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("plan serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in hash {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

/// Pairing of one student tensor with its teacher source, before the
/// element method fills in index sets.
pub(crate) struct PairedTensor<'d> {
    pub student: ExpandedTensor<'d>,
    pub source_name: String,
}

/// Structural compatibility checks plus layer mapping: everything the
/// element methods have in common.
pub(crate) struct PlanSkeleton<'d> {
    pub layer_plan: LayerPlan,
    pub pairs: Vec<PairedTensor<'d>>,
    pub fresh: Vec<FreshInit>,
}

const FRESH_HEAD_STD: f64 = 0.02;

pub(crate) fn build_skeleton<'d>(
    teacher: &'d ArchDescriptor,
    student: &'d ArchDescriptor,
    strategy: LayerStrategy,
) -> Result<PlanSkeleton<'d>> {
    if teacher.family != student.family {
        return Err(Error::FamilyMismatch {
            teacher: teacher.family.clone(),
            student: student.family.clone(),
        });
    }
    if teacher.topology != student.topology || teacher.stages.len() != student.stages.len() {
        return Err(Error::IncompatibleDescriptors(
            "topology or stage count differs".into(),
        ));
    }
    for (ts, ss) in teacher.stages.iter().zip(&student.stages) {
        if ts.stage_id != ss.stage_id {
            return Err(Error::IncompatibleDescriptors(format!(
                "stage ids differ: {:?} vs {:?}",
                ts.stage_id, ss.stage_id
            )));
        }
        check_same_components(&ts.per_layer, &ss.per_layer, &ts.stage_id)?;
    }
    check_same_components(&teacher.globals, &student.globals, "globals")?;
    for (group, &s_width) in &student.dim_groups {
        let t_width = teacher
            .group_width(group)
            .ok_or_else(|| Error::DanglingDimGroup(group.clone()))?;
        if s_width > t_width {
            return Err(Error::StudentWiderThanTeacher {
                group: group.clone(),
                teacher: t_width,
                student: s_width,
            });
        }
    }

    // Fixed axes must agree, except on head tensors where a differing class
    // axis switches the tensor to fresh initialization.
    let mut fresh_sites = Vec::new();
    for (t_spec, s_spec, where_) in spec_pairs(teacher, student) {
        for (axis, (t_role, s_role)) in t_spec.axes.iter().zip(&s_spec.axes).enumerate() {
            if let (AxisRole::Fixed { len: t_len }, AxisRole::Fixed { len: s_len }) =
                (t_role, s_role)
            {
                if t_len != s_len {
                    if s_spec.head {
                        fresh_sites.push(s_spec.name_template.clone());
                        break;
                    }
                    return Err(Error::FixedAxisMismatch {
                        name: format!("{} ({where_})", s_spec.name_template),
                        axis,
                        teacher: *t_len,
                        student: *s_len,
                    });
                }
            }
        }
    }

    // Per-stage layer mapping.
    let mut stages = Vec::new();
    for (ts, ss) in teacher.stages.iter().zip(&student.stages) {
        if ss.depth > ts.depth {
            return Err(Error::StudentDeeperThanTeacher {
                stage: ss.stage_id.clone(),
                teacher: ts.depth,
                student: ss.depth,
            });
        }
        stages.push(StageLayerMap {
            stage_id: ss.stage_id.clone(),
            teacher_layers: select_layers(ts.depth, ss.depth, strategy)?,
        });
    }
    let layer_plan = LayerPlan { strategy, stages };

    let mut pairs = Vec::new();
    let mut fresh = Vec::new();
    for expanded in student.expand() {
        if fresh_sites.contains(&expanded.spec.name_template) {
            fresh.push(FreshInit {
                name: expanded.name.clone(),
                std: FRESH_HEAD_STD,
            });
            continue;
        }
        let source_name = match expanded.site {
            TensorSite::Global { .. } => expanded.name.clone(),
            TensorSite::Layer { stage, layer, .. } => {
                let teacher_layer = layer_plan.stages[stage].teacher_layers[layer];
                teacher.expand_name(
                    &expanded.spec.name_template,
                    &teacher.stages[stage].stage_id,
                    teacher_layer,
                )
            }
        };
        pairs.push(PairedTensor {
            student: expanded,
            source_name,
        });
    }
    Ok(PlanSkeleton {
        layer_plan,
        pairs,
        fresh,
    })
}

fn spec_pairs<'d>(
    teacher: &'d ArchDescriptor,
    student: &'d ArchDescriptor,
) -> Vec<(
    &'d crate::arch::TensorSpec,
    &'d crate::arch::TensorSpec,
    String,
)> {
    let mut out = Vec::new();
    for (t, s) in teacher.globals.iter().zip(&student.globals) {
        out.push((t, s, "global".to_string()));
    }
    for (ts, ss) in teacher.stages.iter().zip(&student.stages) {
        for (t, s) in ts.per_layer.iter().zip(&ss.per_layer) {
            out.push((t, s, format!("stage {}", ts.stage_id)));
        }
    }
    out
}

fn check_same_components(
    teacher: &[crate::arch::TensorSpec],
    student: &[crate::arch::TensorSpec],
    where_: &str,
) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::IncompatibleDescriptors(format!(
            "{where_}: teacher has {} components, student {}",
            teacher.len(),
            student.len()
        )));
    }
    for (t, s) in teacher.iter().zip(student) {
        if t.name_template != s.name_template {
            return Err(Error::IncompatibleDescriptors(format!(
                "{where_}: component {:?} vs {:?}",
                t.name_template, s.name_template
            )));
        }
        if t.axes.len() != s.axes.len() {
            return Err(Error::IncompatibleDescriptors(format!(
                "{where_}: {:?} has rank {} vs {}",
                t.name_template,
                t.axes.len(),
                s.axes.len()
            )));
        }
        for (axis, (tr, sr)) in t.axes.iter().zip(&s.axes).enumerate() {
            let compatible = match (tr, sr) {
                (AxisRole::Embed { group: g1 }, AxisRole::Embed { group: g2 }) => g1 == g2,
                (AxisRole::Fixed { .. }, AxisRole::Fixed { .. }) => true, // lengths checked separately
                _ => false,
            };
            if !compatible {
                return Err(Error::IncompatibleDescriptors(format!(
                    "{where_}: {:?} axis {axis} has role {tr} vs {sr}",
                    t.name_template
                )));
            }
        }
    }
    Ok(())
}

/// Build a selection plan for the four selection methods. The L1 pruning
/// baseline needs teacher values and is planned by `baselines::init_l1_prune`.
pub fn build_plan(
    teacher: &ArchDescriptor,
    student: &ArchDescriptor,
    strategy: LayerStrategy,
    method: ElementMethod,
    seed: Option<u64>,
) -> Result<SelectionPlan> {
    if method == ElementMethod::L1Prune {
        return Err(Error::InvalidArgument(
            "l1 plans are built from teacher values; use init_l1_prune".into(),
        ));
    }
    if method.needs_seed() && seed.is_none() {
        return Err(Error::SeedRequired(method.to_string()));
    }
    let skeleton = build_skeleton(teacher, student, strategy)?;

    // One index set per dim_group for the consistent methods.
    let mut group_indices = BTreeMap::new();
    if method != ElementMethod::RandomInconsistent {
        for (group, &s_width) in &student.dim_groups {
            let t_width = teacher.dim_groups[group];
            let indices = match method {
                ElementMethod::Uniform => even_indices(t_width, s_width)?,
                ElementMethod::Consecutive => (0..s_width).collect(),
                ElementMethod::RandomConsistent => {
                    let mut rng = rng_for(seed.unwrap(), &["group", group]);
                    sample_sorted(&mut rng, t_width, s_width)
                }
                ElementMethod::RandomInconsistent | ElementMethod::L1Prune => unreachable!(),
            };
            group_indices.insert(
                group.clone(),
                IndexSet {
                    group: group.clone(),
                    teacher_width: t_width,
                    indices,
                },
            );
        }
    }

    let mut tensors = Vec::new();
    for pair in &skeleton.pairs {
        let mut axes = Vec::new();
        for (axis, role) in pair.student.spec.axes.iter().enumerate() {
            let directive = match role {
                AxisRole::Fixed { len } => AxisDirective::Fixed { len: *len },
                AxisRole::Embed { group } => {
                    let t_width = teacher.dim_groups[group];
                    let s_width = student.dim_groups[group];
                    let indices = if method == ElementMethod::RandomInconsistent {
                        let mut rng = rng_for(
                            seed.unwrap(),
                            &["tensor", &pair.student.name, &axis.to_string()],
                        );
                        sample_sorted(&mut rng, t_width, s_width)
                    } else {
                        group_indices[group].indices.clone()
                    };
                    AxisDirective::Select {
                        group: group.clone(),
                        teacher_width: t_width,
                        indices,
                    }
                }
            };
            axes.push(directive);
        }
        tensors.push(TensorDirective {
            student: pair.student.name.clone(),
            source: pair.source_name.clone(),
            axes,
        });
    }

    Ok(SelectionPlan {
        version: PLAN_VERSION,
        family: student.family.clone(),
        layer_strategy: strategy,
        element_method: method,
        seed,
        teacher: teacher.clone(),
        student: student.clone(),
        layer_plan: skeleton.layer_plan,
        group_indices,
        tensors,
        fresh: skeleton.fresh,
    })
}
