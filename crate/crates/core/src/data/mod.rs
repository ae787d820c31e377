//! MNIST loading and the ColoredMNIST / DecoyMNIST generators.

mod idx;
mod ppm;
mod split;
mod synth;

pub use idx::{encode_idx, load_idx, parse_idx, read_maybe_gz, MnistRaw, IMAGES_MAGIC, LABELS_MAGIC};
pub use ppm::{decode_netpbm, encode_pgm, encode_ppm, export_examples_ppm, quantize, write_file};
pub use split::{split_train_val, stratified_partition};
pub use synth::{
    colored_example, colorize, decoy_example, decoy_intensity, synth_colored_mnist, synth_decoy_mnist,
    synthesize, BiasMeta, BiasedExample, Corner, DatasetKind, DatasetSplit, Palette, Rgb, SynthOptions,
    PATCH_SIDE,
};
