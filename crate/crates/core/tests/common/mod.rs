//! Shared test support: a brute-force selection oracle and a generator of
//! random small model families. Each integration test binary compiles this
//! module separately and uses its own subset.
#![allow(dead_code)]
//!
//! The oracle re-derives every student element with its own layer-mapping
//! and index math, independent of the library's planner and executor, and
//! compares byte-for-byte.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use weightsel_core::arch::{ArchDescriptor, AxisRole, StageSpec, TensorSite, TensorSpec, Topology};
use weightsel_core::plan::{AxisDirective, LayerStrategy, SelectionPlan};
use weightsel_core::store::Checkpoint;
use weightsel_core::ElementMethod;

/// Random teacher/student descriptor pair: rank <= 4, dims <= 8.
pub fn random_family(rng: &mut ChaCha8Rng) -> (ArchDescriptor, ArchDescriptor) {
    let n_groups = rng.random_range(1..=3);
    let mut teacher_groups = BTreeMap::new();
    let mut student_groups = BTreeMap::new();
    for g in 0..n_groups {
        let t_width = rng.random_range(1..=8usize);
        let s_width = rng.random_range(1..=t_width);
        teacher_groups.insert(format!("g{g}"), t_width);
        student_groups.insert(format!("g{g}"), s_width);
    }
    let group_names: Vec<String> = teacher_groups.keys().cloned().collect();

    let make_axes = |rng: &mut ChaCha8Rng| -> Vec<AxisRole> {
        let rank = rng.random_range(1..=4usize);
        (0..rank)
            .map(|_| {
                if rng.random_bool(0.7) {
                    let g = &group_names[rng.random_range(0..group_names.len())];
                    AxisRole::embed(g)
                } else {
                    AxisRole::fixed(rng.random_range(1..=4usize))
                }
            })
            .collect()
    };

    let hierarchical = rng.random_bool(0.4);
    let n_stages = if hierarchical {
        rng.random_range(2..=3)
    } else {
        1
    };

    let mut t_stages = Vec::new();
    let mut s_stages = Vec::new();
    for si in 0..n_stages {
        let t_depth = rng.random_range(1..=4usize);
        let s_depth = rng.random_range(1..=t_depth);
        let n_components = rng.random_range(1..=3usize);
        let per_layer: Vec<TensorSpec> = (0..n_components)
            .map(|ci| TensorSpec {
                name_template: format!("stage{si}.{{layer}}.comp{ci}"),
                axes: make_axes(rng),
                init: None,
                head: false,
            })
            .collect();
        t_stages.push(StageSpec {
            stage_id: si.to_string(),
            depth: t_depth,
            per_layer: per_layer.clone(),
        });
        s_stages.push(StageSpec {
            stage_id: si.to_string(),
            depth: s_depth,
            per_layer,
        });
    }

    let n_globals = rng.random_range(0..=2usize);
    let globals: Vec<TensorSpec> = (0..n_globals)
        .map(|i| TensorSpec {
            name_template: format!("global{i}"),
            axes: make_axes(rng),
            init: None,
            head: false,
        })
        .collect();

    let topology = if n_stages == 1 {
        Topology::Isotropic
    } else {
        Topology::Hierarchical
    };
    let teacher = ArchDescriptor {
        family: "randfam".into(),
        topology,
        dim_groups: teacher_groups,
        globals: globals.clone(),
        stages: t_stages,
        attention: None,
    };
    let student = ArchDescriptor {
        family: "randfam".into(),
        topology,
        dim_groups: student_groups,
        globals,
        stages: s_stages,
        attention: None,
    };
    teacher.validate().expect("generated teacher is valid");
    student.validate().expect("generated student is valid");
    (teacher, student)
}

/// Oracle layer mapping, written from the definitions (not shared with the
/// library).
pub fn oracle_layer(
    depth_t: usize,
    depth_s: usize,
    strategy: LayerStrategy,
    s_layer: usize,
) -> usize {
    match strategy {
        LayerStrategy::FirstN => s_layer,
        LayerStrategy::LastN => depth_t - depth_s + s_layer,
        LayerStrategy::MidN => (depth_t - depth_s) / 2 + s_layer,
        LayerStrategy::Uniform => s_layer * depth_t / depth_s,
    }
}

/// Oracle evenly-spaced indices.
pub fn oracle_even(t: usize, s: usize) -> Vec<usize> {
    (0..s).map(|i| i * t / s).collect()
}

fn directive_indices<'p>(plan: &'p SelectionPlan, student_name: &str, axis: usize) -> &'p [usize] {
    let directive = plan
        .tensors
        .iter()
        .find(|d| d.student == student_name)
        .unwrap_or_else(|| panic!("plan has no directive for {student_name}"));
    match &directive.axes[axis] {
        AxisDirective::Select { indices, .. } => indices,
        AxisDirective::Fixed { .. } => panic!("axis {axis} of {student_name} is fixed"),
    }
}

/// Check every element of `student` against the teacher by brute force.
/// Index sets for the deterministic methods are recomputed here; for the
/// random methods they are read from the plan but validated (sorted,
/// distinct, in range, and shared per group when consistency is promised).
pub fn check_against_oracle(
    teacher_ckpt: &Checkpoint,
    student_ckpt: &Checkpoint,
    teacher_desc: &ArchDescriptor,
    student_desc: &ArchDescriptor,
    strategy: LayerStrategy,
    method: ElementMethod,
    plan: &SelectionPlan,
) {
    // Consistency promise: one set per group across the whole plan.
    if method.requires_consistency() {
        for directive in &plan.tensors {
            for ax in &directive.axes {
                if let AxisDirective::Select { group, indices, .. } = ax {
                    assert_eq!(
                        indices, &plan.group_indices[group].indices,
                        "tensor {} deviates from group {group}",
                        directive.student
                    );
                }
            }
        }
    }

    for tensor in student_desc.expand() {
        let s_rec = student_ckpt
            .get(&tensor.name)
            .unwrap_or_else(|| panic!("student is missing {}", tensor.name));
        let source_name = match tensor.site {
            TensorSite::Global { .. } => tensor.name.clone(),
            TensorSite::Layer { stage, layer, .. } => {
                let t_stage = &teacher_desc.stages[stage];
                let s_stage = &student_desc.stages[stage];
                let t_layer = oracle_layer(t_stage.depth, s_stage.depth, strategy, layer);
                teacher_desc.expand_name(&tensor.spec.name_template, &t_stage.stage_id, t_layer)
            }
        };
        let t_rec = teacher_ckpt
            .get(&source_name)
            .unwrap_or_else(|| panic!("teacher is missing {source_name}"));

        // Per-axis index lists.
        let tables: Vec<Vec<usize>> = tensor
            .spec
            .axes
            .iter()
            .enumerate()
            .map(|(axis, role)| match role {
                AxisRole::Fixed { len } => (0..*len).collect(),
                AxisRole::Embed { group } => {
                    let t_w = teacher_desc.dim_groups[group];
                    let s_w = student_desc.dim_groups[group];
                    match method {
                        ElementMethod::Uniform => oracle_even(t_w, s_w),
                        ElementMethod::Consecutive => (0..s_w).collect(),
                        ElementMethod::RandomConsistent | ElementMethod::RandomInconsistent => {
                            let indices = directive_indices(plan, &tensor.name, axis).to_vec();
                            assert_eq!(indices.len(), s_w);
                            assert!(indices.windows(2).all(|w| w[0] < w[1]), "not sorted");
                            assert!(indices.iter().all(|&i| i < t_w), "out of range");
                            indices
                        }
                        ElementMethod::L1Prune => unreachable!("oracle covers selection methods"),
                    }
                }
            })
            .collect();

        let out_shape: Vec<usize> = tables.iter().map(Vec::len).collect();
        assert_eq!(s_rec.shape(), out_shape.as_slice(), "{}", tensor.name);

        let rank = tables.len();
        let t_shape = t_rec.shape();
        let mut t_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            t_strides[i] = t_strides[i + 1] * t_shape[i + 1];
        }
        let total: usize = out_shape.iter().product();
        for flat in 0..total {
            let mut rem = flat;
            let mut t_flat = 0;
            for axis in (0..rank).rev() {
                let coord = rem % out_shape[axis];
                rem /= out_shape[axis];
                t_flat += tables[axis][coord] * t_strides[axis];
            }
            assert_eq!(
                s_rec.elem_bytes(flat),
                t_rec.elem_bytes(t_flat),
                "{} position {flat}",
                tensor.name
            );
        }
    }
}
