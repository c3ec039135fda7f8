//! Forward-only numerical evaluators: attention-product structure metrics and
//! the distillation loss terms. Pure functions, f64 throughout.

use crate::arch::ArchDescriptor;
use crate::error::{Error, Result};
use crate::store::{Checkpoint, TensorRecord};

/// Per-head attention weight products and their diagonal-dominance scores.
///
/// Pretrained self-attention layers show strong diagonals in both products;
/// freshly initialized ones do not, and weight-selected students inherit the
/// structure from their teacher.
#[derive(Debug, Clone)]
pub struct AttnProducts {
    pub layer: usize,
    pub head: usize,
    pub head_dim: usize,
    /// `W_q · W_k^T` for this head, `head_dim × head_dim` row-major.
    pub qk: Vec<f64>,
    /// `W_v · W_proj` for this head, `head_dim × head_dim` row-major.
    pub vproj: Vec<f64>,
    pub diag_score_qk: f64,
    pub diag_score_vproj: f64,
}

/// mean |diagonal| / mean |off-diagonal| of a square matrix.
///
/// Returns `f64::INFINITY` when the off-diagonal mass is exactly zero
/// (identity-like inputs are legitimate, e.g. planted-diagonal tests).
pub fn diag_score(matrix: &[f64], n: usize) -> f64 {
    assert_eq!(matrix.len(), n * n, "matrix must be n x n");
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = matrix[i * n + j].abs();
            if i == j {
                diag += v;
            } else {
                off += v;
            }
        }
    }
    let diag_mean = diag / n as f64;
    if n <= 1 {
        return f64::INFINITY;
    }
    let off_mean = off / (n * n - n) as f64;
    if off_mean == 0.0 {
        return f64::INFINITY;
    }
    diag_mean / off_mean
}

fn matrix_f64(record: &TensorRecord, rows: usize, cols: usize) -> Result<Vec<f64>> {
    if record.shape() != [rows, cols] {
        return Err(Error::AxisLengthMismatch {
            name: record.name().to_string(),
            axis: 0,
            expected: rows,
            actual: record.shape()[0],
        });
    }
    Ok(record.to_f64_vec())
}

/// Compute the per-head products `W_q W_k^T` and `W_v W_proj` for one
/// attention block, in the head subspace.
///
/// Works with both storage layouts the descriptor can declare: a fused
/// `[3*embed, embed]` QKV tensor or separate `[embed, embed]` Q/K/V tensors;
/// the results are mathematically identical.
pub fn attn_products(
    ckpt: &Checkpoint,
    desc: &ArchDescriptor,
    layer: usize,
    head: usize,
) -> Result<AttnProducts> {
    let attn = desc.attention.as_ref().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "descriptor {:?} has no attention section",
            desc.family
        ))
    })?;
    let stage = &desc.stages[0];
    if layer >= stage.depth {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} out of range (depth {})",
            stage.depth
        )));
    }
    let embed = desc
        .group_width(&attn.embed_group)
        .ok_or_else(|| Error::DanglingDimGroup(attn.embed_group.clone()))?;
    let head_dim = desc
        .group_width(&attn.head_dim_group)
        .ok_or_else(|| Error::DanglingDimGroup(attn.head_dim_group.clone()))?;
    let heads = embed / head_dim;
    if head >= heads {
        return Err(Error::InvalidArgument(format!(
            "head {head} out of range ({heads} heads of width {head_dim})"
        )));
    }

    let fetch = |template: &str| -> Result<&TensorRecord> {
        let name = desc.expand_name(template, &stage.stage_id, layer);
        ckpt.get(&name).ok_or(Error::MissingTensor {
            name,
            template: template.to_string(),
        })
    };

    // q/k/v as embed x embed matrices, whichever layout is stored.
    let (q, k, v) = if let Some(qkv_template) = &attn.qkv_template {
        let qkv = matrix_f64(fetch(qkv_template)?, 3 * embed, embed)?;
        let section = |s: usize| qkv[s * embed * embed..(s + 1) * embed * embed].to_vec();
        (section(0), section(1), section(2))
    } else {
        let q = matrix_f64(fetch(attn.q_template.as_ref().unwrap())?, embed, embed)?;
        let k = matrix_f64(fetch(attn.k_template.as_ref().unwrap())?, embed, embed)?;
        let v = matrix_f64(fetch(attn.v_template.as_ref().unwrap())?, embed, embed)?;
        (q, k, v)
    };
    let proj = matrix_f64(fetch(&attn.proj_template)?, embed, embed)?;

    let row0 = head * head_dim;
    let mut qk = vec![0.0; head_dim * head_dim];
    let mut vproj = vec![0.0; head_dim * head_dim];
    for i in 0..head_dim {
        for j in 0..head_dim {
            let mut qk_sum = 0.0;
            let mut vp_sum = 0.0;
            for e in 0..embed {
                qk_sum += q[(row0 + i) * embed + e] * k[(row0 + j) * embed + e];
                vp_sum += v[(row0 + i) * embed + e] * proj[e * embed + row0 + j];
            }
            qk[i * head_dim + j] = qk_sum;
            vproj[i * head_dim + j] = vp_sum;
        }
    }

    Ok(AttnProducts {
        layer,
        head,
        head_dim,
        diag_score_qk: diag_score(&qk, head_dim),
        diag_score_vproj: diag_score(&vproj, head_dim),
        qk,
        vproj,
    })
}

fn check_probability_vector(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "probability vector has negative or non-finite entries".into(),
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

/// `alpha * KL(p_t || p_s)`: the distillation term of the logit-matching
/// loss. Returns `f64::INFINITY` when the student assigns zero probability
/// where the teacher does not.
pub fn kl_distill_loss(p_t: &[f64], p_s: &[f64], alpha: f64) -> Result<f64> {
    if alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    if p_t.len() != p_s.len() {
        return Err(Error::LengthMismatch {
            left: p_t.len(),
            right: p_s.len(),
        });
    }
    check_probability_vector(p_t)?;
    check_probability_vector(p_s)?;
    if alpha == 0.0 {
        return Ok(0.0);
    }
    let mut kl = 0.0;
    for (&t, &s) in p_t.iter().zip(p_s) {
        if t == 0.0 {
            continue; // 0 * ln(0/x) = 0
        }
        if s == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += t * (t / s).ln();
    }
    Ok(alpha * kl)
}

/// `alpha * mean(|o_t - o_s|)`: the feature-matching term, taking an
/// already-projected student output.
pub fn l1_feature_loss(o_t: &[f64], o_s_projected: &[f64], alpha: f64) -> Result<f64> {
    if alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    if o_t.len() != o_s_projected.len() {
        return Err(Error::LengthMismatch {
            left: o_t.len(),
            right: o_s_projected.len(),
        });
    }
    if o_t.is_empty() {
        return Err(Error::InvalidArgument("feature vectors are empty".into()));
    }
    let total: f64 = o_t
        .iter()
        .zip(o_s_projected)
        .map(|(&a, &b)| (a - b).abs())
        .sum();
    Ok(alpha * total / o_t.len() as f64)
}
