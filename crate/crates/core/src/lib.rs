//! weightsel-core: initialize a smaller "student" model by selecting a
//! subset of weights from a pretrained larger "teacher" of the same family.
//!
//! The pipeline is three steps: map student layers to teacher layers, match
//! components one-to-one through the family descriptor, then pick slices
//! along every scaling axis. Selection only copies values, never transforms
//! them, so every run is reproducible from its
//! [`plan::SelectionPlan`] and auditable bitwise by [`verify::verify`].
//!
//! Modules:
//! - [`store`]: the `.wsck` tensor container format
//! - [`arch`]: model-family descriptors and template expansion
//! - [`plan`] / [`execute`]: selection planning and execution
//! - [`baselines`]: classic random inits and pruning-derived baselines
//! - [`diag`]: attention-product diagnostics and distillation loss terms
//! - [`mod@verify`]: independent bitwise audit of produced checkpoints
//!
//! ```
//! use weightsel_core::{build_plan, execute_plan, ArchDescriptor, DType};
//! use weightsel_core::plan::{ElementMethod, LayerStrategy};
//!
//! let teacher_desc = ArchDescriptor::bundled("vit_s")?;
//! let student_desc = ArchDescriptor::bundled("vit_t")?;
//! let teacher = teacher_desc.synthesize(1, DType::F32); // stand-in for a converted checkpoint
//!
//! let plan = build_plan(&teacher_desc, &student_desc,
//!                       LayerStrategy::FirstN, ElementMethod::Uniform, None)?;
//! let student = execute_plan(&teacher, &plan)?;
//! assert_eq!(student.get("blocks.0.attn.qkv.weight").unwrap().shape(), &[576, 192]);
//!
//! let report = weightsel_core::verify::verify(&student, &teacher, &plan)?;
//! assert!(report.passed());
//! # Ok::<(), weightsel_core::Error>(())
//! ```

pub mod arch;
pub mod baselines;
pub mod diag;
pub mod error;
pub mod execute;
pub mod plan;
pub mod rng;
pub mod store;
pub mod verify;

pub use arch::ArchDescriptor;
pub use error::{Error, Result};
pub use execute::execute_plan;
pub use plan::{
    build_plan, even_indices, select_layers, ElementMethod, LayerStrategy, SelectionPlan,
};
pub use store::{read_checkpoint, write_checkpoint, Checkpoint, DType, TensorRecord};
pub use verify::{verify, VerificationReport};
