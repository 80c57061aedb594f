//! Stage graph, lazy recomputation and project persistence.

mod engine;
mod masks;
mod project;
mod stage;

pub use engine::{Engine, StageTiming, TimingReport};
pub use masks::{decode_label_png, encode_label_png, import_stroke_masks, sha256_hex, FileRef};
pub use project::{
    overlap, BlurSettings, BlurState, Cache, ClipSource, ColorSettings, Params, Project, Stamped, DEFAULT_BLEND_WIDTH,
    SCHEMA_VERSION,
};
pub use stage::{invalidate, Stage, INPUTS};
