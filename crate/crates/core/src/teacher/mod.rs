//! Teacher attention maps: the morphological oracle built from the clean
//! digit, and the file format for maps produced elsewhere.

mod bundle;
mod maps;
mod morph;

pub use bundle::{
    decode_bundle, encode_bundle, load_external_maps, save_external_maps, BUNDLE_MAGIC, BUNDLE_VERSION,
};
pub use maps::{
    build_teacher, downsample_teacher, normalize_map, normalize_mask, teacher_mask, MorphParams, PromptMeta,
    TeacherMap, TeacherSource,
};
pub use morph::{dilate, edge_band, erode, morphological_gradient, oracle_mask, BinaryMask};
