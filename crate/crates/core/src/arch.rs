//! Declarative model-family descriptors.
//!
//! A descriptor names every tensor of a family member through templates,
//! labels each tensor axis with its scaling role, and records the widths of
//! the named dimension groups. Two descriptors of the same family differ only
//! in their `dim_groups` widths and stage depths, which is what makes the
//! teacher→student component mapping a one-to-one rename.
//!
//! Axis roles in descriptor JSON are strings: `"embed:<group>"` for an axis
//! that scales with a dimension group, `"fixed:<len>"` for an axis whose
//! length is part of the family contract (kernel sizes, RGB channels, the
//! token axis of position embeddings) and must match between teacher and
//! student.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{Checkpoint, DType, TensorRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Isotropic,
    Hierarchical,
}

/// Scaling role of one tensor axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AxisRole {
    /// Axis length equals the width of a named dimension group.
    Embed { group: String },
    /// Axis length is fixed for the whole family.
    Fixed { len: usize },
}

impl AxisRole {
    pub fn embed(group: &str) -> Self {
        AxisRole::Embed {
            group: group.to_string(),
        }
    }

    pub fn fixed(len: usize) -> Self {
        AxisRole::Fixed { len }
    }

    pub fn group(&self) -> Option<&str> {
        match self {
            AxisRole::Embed { group } => Some(group),
            AxisRole::Fixed { .. } => None,
        }
    }
}

impl fmt::Display for AxisRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisRole::Embed { group } => write!(f, "embed:{group}"),
            AxisRole::Fixed { len } => write!(f, "fixed:{len}"),
        }
    }
}

impl FromStr for AxisRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(group) = s.strip_prefix("embed:") {
            if group.is_empty() {
                return Err(Error::DescriptorSchema(
                    "empty dim_group in axis role".into(),
                ));
            }
            return Ok(AxisRole::embed(group));
        }
        if let Some(len) = s.strip_prefix("fixed:") {
            let len: usize = len
                .parse()
                .map_err(|_| Error::DescriptorSchema(format!("bad fixed axis length in {s:?}")))?;
            return Ok(AxisRole::Fixed { len });
        }
        Err(Error::DescriptorSchema(format!(
            "axis role {s:?} must be \"embed:<group>\" or \"fixed:<len>\""
        )))
    }
}

impl Serialize for AxisRole {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AxisRole {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How a tensor is filled by the classic random initializers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitClass {
    /// Weight matrix: filled by the chosen random method.
    Weight,
    /// Bias / norm shift: zeros.
    Zero,
    /// Norm scale: ones.
    One,
}

/// One tensor template: a name with optional `{stage}` / `{layer}`
/// placeholders plus one axis role per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name_template: String,
    pub axes: Vec<AxisRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitClass>,
    /// Classifier-head tensor: its fixed class axis may legitimately differ
    /// between teacher and student (new label space), in which case the
    /// tensor is freshly initialized instead of selected.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub head: bool,
}

impl TensorSpec {
    pub fn rank(&self) -> usize {
        self.axes.len()
    }

    /// Effective init class: explicit marker, else weights for rank >= 2 and
    /// zeros for vectors.
    pub fn init_class(&self) -> InitClass {
        self.init.unwrap_or(if self.rank() >= 2 {
            InitClass::Weight
        } else {
            InitClass::Zero
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage_id: String,
    pub depth: usize,
    pub per_layer: Vec<TensorSpec>,
}

/// Where the self-attention tensors live and how heads are laid out, for the
/// attention-product diagnostics. `head_dim_group` gives the per-head width;
/// the number of heads is `embed / head_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub embed_group: String,
    pub head_dim_group: String,
    /// Fused storage: one `[3*embed, embed]` tensor holding Q, K, V stacked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qkv_template: Option<String>,
    /// Unfused storage: separate `[embed, embed]` tensors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_template: Option<String>,
    pub proj_template: String,
}

/// Machine-readable description of one model-family member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub family: String,
    pub topology: Topology,
    pub dim_groups: BTreeMap<String, usize>,
    pub globals: Vec<TensorSpec>,
    pub stages: Vec<StageSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionSpec>,
}

/// Where an expanded tensor came from in its descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorSite {
    Global {
        index: usize,
    },
    Layer {
        stage: usize,
        layer: usize,
        component: usize,
    },
}

/// One concrete tensor name produced by template expansion.
#[derive(Debug, Clone)]
pub struct ExpandedTensor<'d> {
    pub name: String,
    pub spec: &'d TensorSpec,
    pub site: TensorSite,
}

/// Descriptor bound against a concrete checkpoint: every expanded name
/// resolved to its record.
#[derive(Debug)]
pub struct BoundModel<'a> {
    pub entries: Vec<(ExpandedTensor<'a>, &'a TensorRecord)>,
    /// Tensors present in the checkpoint but not claimed by the descriptor
    /// (reported, not fatal).
    pub unmatched: Vec<String>,
}

const BUNDLED: &[(&str, &str)] = &[
    ("vit_t", include_str!("../descriptors/vit_t.json")),
    ("vit_s", include_str!("../descriptors/vit_s.json")),
    ("vit_b", include_str!("../descriptors/vit_b.json")),
    ("vit_l", include_str!("../descriptors/vit_l.json")),
    ("convnext_f", include_str!("../descriptors/convnext_f.json")),
    ("convnext_t", include_str!("../descriptors/convnext_t.json")),
];

impl ArchDescriptor {
    /// Parse and validate a descriptor from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let desc: ArchDescriptor = serde_json::from_str(text)?;
        desc.validate()?;
        Ok(desc)
    }

    /// Load a descriptor from a JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ArchDescriptor::from_json(&text)
    }

    /// Names of the descriptors shipped with the toolkit.
    pub fn bundled_names() -> Vec<&'static str> {
        BUNDLED.iter().map(|(n, _)| *n).collect()
    }

    /// Fetch a bundled descriptor by name.
    pub fn bundled(name: &str) -> Result<Self> {
        for (n, text) in BUNDLED {
            if *n == name {
                return ArchDescriptor::from_json(text);
            }
        }
        Err(Error::DescriptorSchema(format!(
            "no bundled descriptor named {name:?} (available: {})",
            ArchDescriptor::bundled_names().join(", ")
        )))
    }

    /// Bundled name or path to a JSON file.
    pub fn resolve(spec: &str) -> Result<Self> {
        if BUNDLED.iter().any(|(n, _)| *n == spec) {
            ArchDescriptor::bundled(spec)
        } else {
            ArchDescriptor::load(spec)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family.is_empty() {
            return Err(Error::DescriptorSchema("family must be non-empty".into()));
        }
        match self.topology {
            Topology::Isotropic if self.stages.len() != 1 => {
                return Err(Error::DescriptorSchema(format!(
                    "isotropic descriptors have exactly 1 stage, found {}",
                    self.stages.len()
                )));
            }
            Topology::Hierarchical if self.stages.len() < 2 => {
                return Err(Error::DescriptorSchema(format!(
                    "hierarchical descriptors have >= 2 stages, found {}",
                    self.stages.len()
                )));
            }
            _ => {}
        }
        for (group, width) in &self.dim_groups {
            if *width == 0 {
                return Err(Error::DescriptorSchema(format!(
                    "dim_group {group:?} has zero width"
                )));
            }
        }
        let mut stage_ids = HashSet::new();
        for stage in &self.stages {
            if stage.depth == 0 {
                return Err(Error::DescriptorSchema(format!(
                    "stage {:?} has zero depth",
                    stage.stage_id
                )));
            }
            if !stage_ids.insert(stage.stage_id.as_str()) {
                return Err(Error::DescriptorSchema(format!(
                    "duplicate stage_id {:?}",
                    stage.stage_id
                )));
            }
            for spec in &stage.per_layer {
                if !spec.name_template.contains("{layer}") {
                    return Err(Error::DescriptorSchema(format!(
                        "per-layer template {:?} must contain {{layer}}",
                        spec.name_template
                    )));
                }
                self.validate_spec(spec)?;
            }
        }
        for spec in &self.globals {
            if spec.name_template.contains("{layer}") || spec.name_template.contains("{stage}") {
                return Err(Error::DescriptorSchema(format!(
                    "global template {:?} must not contain placeholders",
                    spec.name_template
                )));
            }
            self.validate_spec(spec)?;
        }
        // Expanded names must be unique.
        let mut names = HashSet::new();
        for t in self.expand() {
            if !names.insert(t.name.clone()) {
                return Err(Error::DescriptorSchema(format!(
                    "templates expand to duplicate tensor name {:?}",
                    t.name
                )));
            }
        }
        if let Some(attn) = &self.attention {
            let embed = self
                .group_width(&attn.embed_group)
                .ok_or_else(|| Error::DanglingDimGroup(attn.embed_group.clone()))?;
            let head_dim = self
                .group_width(&attn.head_dim_group)
                .ok_or_else(|| Error::DanglingDimGroup(attn.head_dim_group.clone()))?;
            if embed % head_dim != 0 {
                return Err(Error::DescriptorSchema(format!(
                    "embed width {embed} is not a multiple of head_dim {head_dim}"
                )));
            }
            let fused = attn.qkv_template.is_some();
            let unfused =
                attn.q_template.is_some() && attn.k_template.is_some() && attn.v_template.is_some();
            if !fused && !unfused {
                return Err(Error::DescriptorSchema(
                    "attention needs qkv_template or all of q/k/v templates".into(),
                ));
            }
        }
        Ok(())
    }

    fn validate_spec(&self, spec: &TensorSpec) -> Result<()> {
        if spec.axes.is_empty() {
            return Err(Error::DescriptorSchema(format!(
                "tensor {:?} has no axes",
                spec.name_template
            )));
        }
        for role in &spec.axes {
            match role {
                AxisRole::Embed { group } => {
                    if !self.dim_groups.contains_key(group) {
                        return Err(Error::DanglingDimGroup(group.clone()));
                    }
                }
                AxisRole::Fixed { len } => {
                    if *len == 0 {
                        return Err(Error::DescriptorSchema(format!(
                            "tensor {:?} has a zero-length fixed axis",
                            spec.name_template
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn group_width(&self, group: &str) -> Option<usize> {
        self.dim_groups.get(group).copied()
    }

    /// Length of an axis in this member.
    pub fn axis_len(&self, role: &AxisRole) -> usize {
        match role {
            AxisRole::Embed { group } => self.dim_groups[group],
            AxisRole::Fixed { len } => *len,
        }
    }

    /// Concrete shape of a tensor spec in this member.
    pub fn shape_of(&self, spec: &TensorSpec) -> Vec<usize> {
        spec.axes.iter().map(|r| self.axis_len(r)).collect()
    }

    pub fn expand_name(&self, template: &str, stage_id: &str, layer: usize) -> String {
        template
            .replace("{stage}", stage_id)
            .replace("{layer}", &layer.to_string())
    }

    /// Enumerate every concrete tensor of this member: globals first, then
    /// stages in order, layers in order, components in template order.
    pub fn expand(&self) -> Vec<ExpandedTensor<'_>> {
        let mut out = Vec::new();
        for (index, spec) in self.globals.iter().enumerate() {
            out.push(ExpandedTensor {
                name: spec.name_template.clone(),
                spec,
                site: TensorSite::Global { index },
            });
        }
        for (si, stage) in self.stages.iter().enumerate() {
            for layer in 0..stage.depth {
                for (ci, spec) in stage.per_layer.iter().enumerate() {
                    out.push(ExpandedTensor {
                        name: self.expand_name(&spec.name_template, &stage.stage_id, layer),
                        spec,
                        site: TensorSite::Layer {
                            stage: si,
                            layer,
                            component: ci,
                        },
                    });
                }
            }
        }
        out
    }

    /// Total parameter count of this member.
    pub fn num_parameters(&self) -> usize {
        self.expand()
            .iter()
            .map(|t| self.shape_of(t.spec).iter().product::<usize>())
            .sum()
    }

    /// Resolve every expanded tensor against a checkpoint, checking rank and
    /// all axis lengths. Extra tensors are collected as warnings.
    pub fn bind<'a>(&'a self, ckpt: &'a Checkpoint) -> Result<BoundModel<'a>> {
        let mut entries = Vec::new();
        let mut claimed = HashSet::new();
        for tensor in self.expand() {
            let record = ckpt.get(&tensor.name).ok_or_else(|| Error::MissingTensor {
                name: tensor.name.clone(),
                template: tensor.spec.name_template.clone(),
            })?;
            if record.rank() != tensor.spec.rank() {
                return Err(Error::RankMismatch {
                    name: tensor.name.clone(),
                    expected: tensor.spec.rank(),
                    actual: record.rank(),
                });
            }
            for (axis, role) in tensor.spec.axes.iter().enumerate() {
                let expected = self.axis_len(role);
                let actual = record.shape()[axis];
                if expected != actual {
                    return Err(Error::AxisLengthMismatch {
                        name: tensor.name.clone(),
                        axis,
                        expected,
                        actual,
                    });
                }
            }
            claimed.insert(tensor.name.clone());
            entries.push((tensor, record));
        }
        let unmatched = ckpt
            .names()
            .filter(|n| !claimed.contains(*n))
            .map(str::to_string)
            .collect();
        Ok(BoundModel { entries, unmatched })
    }

    /// Generate a random checkpoint conforming to this descriptor. Values are
    /// spread over a wide range of float bit patterns so that slices are
    /// distinct with high probability, which the content-based verifier
    /// relies on.
    pub fn synthesize(&self, seed: u64, dtype: DType) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for tensor in self.expand() {
            let shape = self.shape_of(tensor.spec);
            let elems: usize = shape.iter().product();
            let mut rng = crate::rng::rng_for(seed, &["synth", &tensor.name]);
            let mut data = Vec::with_capacity(elems * dtype.size());
            for _ in 0..elems {
                let v = synth_value(&mut rng);
                match dtype {
                    DType::F32 => data.extend_from_slice(&(v as f32).to_le_bytes()),
                    DType::F16 => data.extend_from_slice(&half::f16::from_f64(v).to_le_bytes()),
                    DType::F64 => data.extend_from_slice(&v.to_le_bytes()),
                }
            }
            let record = TensorRecord::new(tensor.name, dtype, shape, data)
                .expect("synthesized tensor is valid by construction");
            ckpt.insert(record).expect("expanded names are unique");
        }
        ckpt.set_metadata("producer", "weightsel");
        ckpt.set_metadata("synthetic_seed", seed.to_string());
        ckpt
    }
}

/// Random value with entropy in both mantissa and exponent, sign included.
fn synth_value(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let bits = rng.next_u64();
    let mantissa = 1.0 + (bits & 0xfffff) as f64 / 0x100000 as f64; // [1, 2)
    let exp = ((bits >> 20) & 0x7) as i32 - 4; // [-4, 3]
    let sign = if bits >> 63 == 0 { 1.0 } else { -1.0 };
    sign * mantissa * (exp as f64).exp2()
}
