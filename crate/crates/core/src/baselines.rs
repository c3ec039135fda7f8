//! Comparison initializers: classic random inits and the two pruning-derived
//! selection baselines.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::arch::{ArchDescriptor, AxisRole, InitClass};
use crate::error::{Error, Result};
use crate::execute::execute_plan;
use crate::plan::{
    build_skeleton, AxisDirective, ElementMethod, LayerStrategy, SelectionPlan, TensorDirective,
    PLAN_VERSION,
};
use crate::rng::rng_for;
use crate::store::{Checkpoint, TensorRecord};

/// Classic random initialization methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RandomInit {
    /// Normal(0, std) resampled until within ±2·std.
    TruncNormal { std: f64 },
    /// Uniform(±sqrt(6 / (fan_in + fan_out))).
    XavierUniform,
    /// Normal(0, sqrt(2 / fan_in)).
    KaimingNormal,
}

impl RandomInit {
    pub fn name(&self) -> &'static str {
        match self {
            RandomInit::TruncNormal { .. } => "trunc_normal",
            RandomInit::XavierUniform => "xavier",
            RandomInit::KaimingNormal => "kaiming",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub method: RandomInit,
    pub seed: u64,
}

pub const DEFAULT_TRUNC_STD: f64 = 0.02;

/// Sample `n` values from Normal(0, std) truncated to ±2·std by resampling.
pub(crate) fn trunc_normal_f32(rng: &mut ChaCha8Rng, std: f64, n: usize) -> Vec<f32> {
    let dist = Normal::new(0.0, std).expect("std validated positive");
    let bound = 2.0 * std;
    (0..n)
        .map(|_| loop {
            let v = dist.sample(rng);
            if v.abs() <= bound {
                return v as f32;
            }
        })
        .collect()
}

/// Input/output fan. The leading axis is the output axis; everything else
/// (input channels and any kernel dims) folds into fan_in.
fn fans(shape: &[usize]) -> (f64, f64) {
    if shape.len() == 1 {
        return (shape[0] as f64, shape[0] as f64);
    }
    let fan_out = shape[0] as f64;
    let fan_in: usize = shape[1..].iter().product();
    (fan_in as f64, fan_out)
}

/// Fill a whole student checkpoint with one of the classic initializers.
/// Weight tensors get the method's distribution; biases and norm shifts are
/// zero, norm scales one. Deterministic under the seed.
pub fn init_random(student: &ArchDescriptor, spec: &InitSpec) -> Result<Checkpoint> {
    if let RandomInit::TruncNormal { std } = spec.method {
        if std <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "std must be > 0, got {std}"
            )));
        }
    }
    let expanded = student.expand();
    let records: Vec<TensorRecord> = expanded
        .par_iter()
        .map(|tensor| {
            let shape = student.shape_of(tensor.spec);
            let n: usize = shape.iter().product();
            let values: Vec<f32> = match tensor.spec.init_class() {
                InitClass::Zero => vec![0.0; n],
                InitClass::One => vec![1.0; n],
                InitClass::Weight => {
                    let mut rng = rng_for(spec.seed, &["init", &tensor.name]);
                    match spec.method {
                        RandomInit::TruncNormal { std } => trunc_normal_f32(&mut rng, std, n),
                        RandomInit::XavierUniform => {
                            let (fan_in, fan_out) = fans(&shape);
                            let bound = (6.0 / (fan_in + fan_out)).sqrt();
                            (0..n)
                                .map(|_| rng.random_range(-bound..bound) as f32)
                                .collect()
                        }
                        RandomInit::KaimingNormal => {
                            let (fan_in, _) = fans(&shape);
                            let dist =
                                Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                            (0..n).map(|_| dist.sample(&mut rng) as f32).collect()
                        }
                    }
                }
            };
            TensorRecord::from_f32(tensor.name.clone(), shape, &values)
        })
        .collect::<Result<_>>()?;

    let mut ckpt = Checkpoint::new();
    for record in records {
        ckpt.insert(record)?;
    }
    ckpt.set_metadata("producer", "weightsel");
    ckpt.set_metadata("init_method", spec.method.name());
    if let RandomInit::TruncNormal { std } = spec.method {
        ckpt.set_metadata("init_std", format!("{std}"));
    }
    ckpt.set_metadata("init_seed", spec.seed.to_string());
    Ok(ckpt)
}

/// L1-norm structured pruning baseline.
///
/// Per tensor and per scaling axis independently, keeps the student-width
/// slices with the highest L1 norm (sum of |values| over the slice), indices
/// sorted ascending, ties broken toward lower index. Selecting per tensor is
/// what breaks cross-tensor consistency, which the returned plan records for
/// audit.
pub fn init_l1_prune(
    teacher: &Checkpoint,
    teacher_desc: &ArchDescriptor,
    student_desc: &ArchDescriptor,
    strategy: LayerStrategy,
) -> Result<(Checkpoint, SelectionPlan)> {
    let skeleton = build_skeleton(teacher_desc, student_desc, strategy)?;

    let mut tensors = Vec::new();
    for pair in &skeleton.pairs {
        let source = teacher
            .get(&pair.source_name)
            .ok_or_else(|| Error::MissingTensor {
                name: pair.source_name.clone(),
                template: pair.student.spec.name_template.clone(),
            })?;
        if source.rank() != pair.student.spec.rank() {
            return Err(Error::RankMismatch {
                name: pair.source_name.clone(),
                expected: pair.student.spec.rank(),
                actual: source.rank(),
            });
        }
        let values = source.to_f64_vec();
        let shape = source.shape();
        let mut axes = Vec::new();
        for (axis, role) in pair.student.spec.axes.iter().enumerate() {
            match role {
                AxisRole::Fixed { len } => axes.push(AxisDirective::Fixed { len: *len }),
                AxisRole::Embed { group } => {
                    let t_width = shape[axis];
                    let s_width = student_desc.dim_groups[group];
                    let scores = axis_l1_scores(&values, shape, axis);
                    axes.push(AxisDirective::Select {
                        group: group.clone(),
                        teacher_width: t_width,
                        indices: top_k_sorted(&scores, s_width),
                    });
                }
            }
        }
        tensors.push(TensorDirective {
            student: pair.student.name.clone(),
            source: pair.source_name.clone(),
            axes,
        });
    }

    let plan = SelectionPlan {
        version: PLAN_VERSION,
        family: student_desc.family.clone(),
        layer_strategy: strategy,
        element_method: ElementMethod::L1Prune,
        seed: None,
        teacher: teacher_desc.clone(),
        student: student_desc.clone(),
        layer_plan: skeleton.layer_plan,
        group_indices: Default::default(),
        tensors,
        fresh: skeleton.fresh,
    };
    let student = execute_plan(teacher, &plan)?;
    Ok((student, plan))
}

/// Sum of |values| over each slice along `axis`.
fn axis_l1_scores(values: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let mut scores = vec![0.0; len];
    for (flat, v) in values.iter().enumerate() {
        scores[(flat / stride) % len] += v.abs();
    }
    scores
}

/// Indices of the `k` largest scores, ties toward lower index, returned
/// sorted ascending.
fn top_k_sorted(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| a.cmp(&b)));
    let mut kept: Vec<usize> = order.into_iter().take(k).collect();
    kept.sort_unstable();
    kept
}

/// Magnitude pruning baseline: per tensor, keep the student-element-count
/// largest-magnitude teacher elements in row-major order and squeeze them
/// into the student shape. Ties at the boundary keep the earlier position.
pub fn init_magnitude_prune(
    teacher: &Checkpoint,
    teacher_desc: &ArchDescriptor,
    student_desc: &ArchDescriptor,
    strategy: LayerStrategy,
) -> Result<Checkpoint> {
    let skeleton = build_skeleton(teacher_desc, student_desc, strategy)?;

    let records: Vec<TensorRecord> = skeleton
        .pairs
        .par_iter()
        .map(|pair| {
            let source = teacher
                .get(&pair.source_name)
                .ok_or_else(|| Error::MissingTensor {
                    name: pair.source_name.clone(),
                    template: pair.student.spec.name_template.clone(),
                })?;
            let out_shape = student_desc.shape_of(pair.student.spec);
            let k: usize = out_shape.iter().product();
            let values = source.to_f64_vec();

            let mut order: Vec<usize> = (0..values.len()).collect();
            let key = |i: usize| {
                let v = values[i];
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    v.abs()
                }
            };
            order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then_with(|| a.cmp(&b)));
            let mut kept: Vec<usize> = order.into_iter().take(k).collect();
            kept.sort_unstable();

            let esize = source.dtype().size();
            let mut data = Vec::with_capacity(k * esize);
            for flat in kept {
                data.extend_from_slice(source.elem_bytes(flat));
            }
            TensorRecord::new(pair.student.name.clone(), source.dtype(), out_shape, data)
        })
        .collect::<Result<_>>()?;

    let fresh: Vec<TensorRecord> = skeleton
        .fresh
        .iter()
        .map(|f| {
            let spec = student_desc
                .expand()
                .into_iter()
                .find(|t| t.name == f.name)
                .expect("fresh names come from the student expansion");
            let shape = student_desc.shape_of(spec.spec);
            let n: usize = shape.iter().product();
            let mut rng = rng_for(0, &["fresh", &f.name]);
            TensorRecord::from_f32(f.name.clone(), shape, &trunc_normal_f32(&mut rng, f.std, n))
        })
        .collect::<Result<_>>()?;

    let mut ckpt = Checkpoint::new();
    for record in records.into_iter().chain(fresh) {
        ckpt.insert(record)?;
    }
    ckpt.set_metadata("producer", "weightsel");
    ckpt.set_metadata("init_method", "magnitude_prune");
    ckpt.set_metadata("layer_strategy", strategy.to_string());
    Ok(ckpt)
}
