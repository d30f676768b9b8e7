//! From a config tree to constructed, shared component instances.
//!
//! Resolving one experiment runs these steps:
//!
//! 1. [`fill_defaults`] checks every tagged node against its schema and
//!    writes out omitted arguments (`ExpGlobal` first, so settings such as
//!    `default_layer_dim` can be copied from it).
//! 2. The result is kept as the dumpable spec, `{EXP}` still in place.
//! 3. [`substitute_placeholders`] replaces `{EXP}` with the experiment
//!    name.
//! 4. [`resolve_references`] orders construction so that components come
//!    after their children and after everything they `!Ref`.
//! 5. Components are built bottom-up; a `!Ref` to a component yields the
//!    very instance built at the target path.
//!
//! Arguments governed by `default_layer_dim` when omitted: `emb_dim` of
//! both word embedders, `hidden_dim` of both encoders, the attender and
//! the decoder, and the decoder's `mlp_hidden_dim` unless a vocabulary
//! projector is set (then it follows the projector's `emb_dim`).

mod builtins;
mod expand;
mod experiment;
mod overwrite;
mod refs;
mod registry;
mod value;

pub use builtins::builtin_registry;
pub use expand::{fill_defaults, EXPERIMENT_TAG};
pub use experiment::{
    dump_spec, instantiate_graph, prepare, resolve_load, ComponentGraph, ExpGlobal, Experiment, ExperimentParts,
    Prepared, Seeding,
};
pub use overwrite::{apply_overwrites, parse_overwrites, substitute_placeholders, Overwrite, PLACEHOLDER};
pub use refs::{navigate, resolve_references, Plan};
pub use registry::{
    join_path, ref_node, ArgDefault, ArgSpec, BuildCtx, BuildFn, ComponentSchema, DefaultCtx, Registry,
};
pub use value::{Args, Instance, InstanceBuilder, Value};
