//! Plan execution: slice the teacher checkpoint into the student.
//!
//! Selection never transforms values: every output element is a byte-for-byte
//! copy of some teacher element. Tensors are sliced independently, so the work
//! parallelizes per tensor; output bytes do not depend on thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::plan::{AxisDirective, SelectionPlan, TensorDirective};
use crate::rng::rng_for;
use crate::store::{Checkpoint, DType, TensorRecord};

/// Execute a plan against a teacher checkpoint, producing the student.
///
/// The teacher must bind against the descriptor embedded in the plan. Output
/// metadata records the plan digest for later audit.
pub fn execute_plan(teacher: &Checkpoint, plan: &SelectionPlan) -> Result<Checkpoint> {
    plan.teacher.bind(teacher)?;

    let sliced: Vec<TensorRecord> = plan
        .tensors
        .par_iter()
        .map(|directive| slice_tensor(teacher, directive))
        .collect::<Result<_>>()?;

    let fresh: Vec<TensorRecord> = plan
        .fresh
        .par_iter()
        .map(|f| {
            let spec = plan
                .student
                .expand()
                .into_iter()
                .find(|t| t.name == f.name)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "fresh tensor {:?} not in student descriptor",
                        f.name
                    ))
                })?;
            let shape = plan.student.shape_of(spec.spec);
            let n: usize = shape.iter().product();
            let mut rng = rng_for(plan.seed.unwrap_or(0), &["fresh", &f.name]);
            let values = crate::baselines::trunc_normal_f32(&mut rng, f.std, n);
            // keep the dtype of the teacher's own head so the output stays
            // uniform even for f16/f64 checkpoints
            let dtype = teacher
                .get(&f.name)
                .map(|t| t.dtype())
                .unwrap_or(DType::F32);
            encode_record(f.name.clone(), dtype, shape, &values)
        })
        .collect::<Result<_>>()?;

    let mut student = Checkpoint::new();
    for record in sliced.into_iter().chain(fresh) {
        student.insert(record)?;
    }
    student.set_metadata("producer", "weightsel");
    student.set_metadata("plan_digest", plan.digest());
    student.set_metadata("element_method", plan.element_method.to_string());
    student.set_metadata("layer_strategy", plan.layer_strategy.to_string());
    Ok(student)
}

fn encode_record(
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    values: &[f32],
) -> Result<TensorRecord> {
    let mut data = Vec::with_capacity(values.len() * dtype.size());
    for &v in values {
        match dtype {
            DType::F32 => data.extend_from_slice(&v.to_le_bytes()),
            DType::F16 => data.extend_from_slice(&half::f16::from_f32(v).to_le_bytes()),
            DType::F64 => data.extend_from_slice(&(v as f64).to_le_bytes()),
        }
    }
    TensorRecord::new(name, dtype, shape, data)
}

fn slice_tensor(teacher: &Checkpoint, directive: &TensorDirective) -> Result<TensorRecord> {
    let source = teacher
        .get(&directive.source)
        .ok_or_else(|| Error::MissingTensor {
            name: directive.source.clone(),
            template: directive.student.clone(),
        })?;
    if source.rank() != directive.axes.len() {
        return Err(Error::RankMismatch {
            name: directive.source.clone(),
            expected: directive.axes.len(),
            actual: source.rank(),
        });
    }

    let rank = directive.axes.len();
    let src_shape = source.shape();
    let mut tables: Vec<Vec<usize>> = Vec::with_capacity(rank);
    for (axis, ax) in directive.axes.iter().enumerate() {
        if ax.teacher_len() != src_shape[axis] {
            return Err(Error::AxisLengthMismatch {
                name: directive.source.clone(),
                axis,
                expected: ax.teacher_len(),
                actual: src_shape[axis],
            });
        }
        let table = match ax {
            AxisDirective::Fixed { len } => (0..*len).collect(),
            AxisDirective::Select {
                indices,
                teacher_width,
                ..
            } => {
                let mut prev = None;
                for &index in indices {
                    if index >= *teacher_width || prev.is_some_and(|p| index <= p) {
                        return Err(Error::IndexOutOfRange {
                            name: directive.student.clone(),
                            axis,
                            index,
                            width: *teacher_width,
                        });
                    }
                    prev = Some(index);
                }
                indices.clone()
            }
        };
        tables.push(table);
    }

    let out_shape: Vec<usize> = directive.axes.iter().map(|a| a.student_len()).collect();
    let data = gather(source, &tables, &out_shape);
    TensorRecord::new(directive.student.clone(), source.dtype(), out_shape, data)
}

/// Row-major gather of `source` through per-axis index tables. Trailing axes
/// whose table is the identity are copied as contiguous runs.
fn gather(source: &TensorRecord, tables: &[Vec<usize>], out_shape: &[usize]) -> Vec<u8> {
    let rank = tables.len();
    let esize = source.dtype().size();
    let src_shape = source.shape();

    let mut src_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * src_shape[i + 1];
    }

    // Identity suffix: a table of full length is necessarily 0..len because
    // index sets are strictly increasing and in range.
    let mut split = rank;
    while split > 0 && tables[split - 1].len() == src_shape[split - 1] {
        split -= 1;
    }

    let out_elems: usize = out_shape.iter().product();
    let run_elems: usize = out_shape[split..].iter().product();
    let run_bytes = run_elems * esize;
    let mut out = Vec::with_capacity(out_elems * esize);

    if split == 0 {
        out.extend_from_slice(source.data());
        return out;
    }

    let src = source.data();
    let mut coords = vec![0usize; split];
    loop {
        let mut base = 0usize;
        for a in 0..split {
            base += tables[a][coords[a]] * src_strides[a];
        }
        let start = base * esize;
        out.extend_from_slice(&src[start..start + run_bytes]);

        // odometer over the non-identity prefix
        let mut axis = split;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            coords[axis] += 1;
            if coords[axis] < out_shape[axis] {
                break;
            }
            coords[axis] = 0;
        }
    }
}
