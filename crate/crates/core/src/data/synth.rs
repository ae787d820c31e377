use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};

use super::idx::MnistRaw;
use super::split::split_train_val;

pub type Rgb = [f64; 3];

/// Ten class colors. The test split of ColoredMNIST gives class `y` the
/// training color of class `9 − y`, a permutation with no fixed points.
#[derive(Clone, Debug, PartialEq)]
pub struct Palette(pub [Rgb; 10]);

impl Default for Palette {
    fn default() -> Self {
        Palette([
            [1.0, 0.0, 0.0], // red
            [0.0, 1.0, 0.0], // green
            [0.0, 0.0, 1.0], // blue
            [1.0, 1.0, 0.0], // yellow
            [1.0, 0.0, 1.0], // magenta
            [0.0, 1.0, 1.0], // cyan
            [1.0, 0.5, 0.0], // orange
            [0.5, 0.0, 1.0], // violet
            [1.0, 1.0, 1.0], // white
            [0.0, 1.0, 0.5], // spring green
        ])
    }
}

impl Palette {
    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.0.iter().enumerate() {
            if a.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Config(format!("palette entry {i} outside [0,1]: {a:?}")));
            }
            for (j, b) in self.0.iter().enumerate().skip(i + 1) {
                if a == b {
                    return Err(Error::Config(format!("palette entries {i} and {j} are identical")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Colored,
    Decoy,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Colored => "colored",
            DatasetKind::Decoy => "decoy",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "colored" | "color" | "coloredmnist" | "colormnist" => Ok(DatasetKind::Colored),
            "decoy" | "decoymnist" => Ok(DatasetKind::Decoy),
            other => Err(Error::Config(format!("unknown dataset '{other}' (colored|decoy)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::TopLeft, Corner::TopRight, Corner::BottomLeft, Corner::BottomRight];

    /// Top-left pixel of the corner's patch.
    pub fn origin(self) -> (usize, usize) {
        let far = 28 - PATCH_SIDE;
        match self {
            Corner::TopLeft => (0, 0),
            Corner::TopRight => (0, far),
            Corner::BottomLeft => (far, 0),
            Corner::BottomRight => (far, far),
        }
    }

    pub fn index(self) -> usize {
        Corner::ALL.iter().position(|&c| c == self).unwrap()
    }
}

pub const PATCH_SIDE: usize = 4;

/// Gray level of the class-`y` decoy patch: `(255 − 25y) / 255`.
pub fn decoy_intensity(class: usize) -> f64 {
    (255.0 - 25.0 * class as f64) / 255.0
}

#[derive(Clone, Debug, PartialEq)]
pub enum BiasMeta {
    Color { palette_index: usize },
    Patch { corner: Corner, intensity_index: usize },
}

#[derive(Clone, Debug)]
pub struct BiasedExample {
    /// `[3, 28, 28]` in `[0, 1]`
    pub image: Tensor,
    pub label: usize,
    /// The untouched source digit, `[28, 28]`.
    pub clean_digit: Tensor,
    pub bias: BiasMeta,
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub kind: DatasetKind,
    pub seed: u64,
    pub provenance: String,
    pub train: Vec<BiasedExample>,
    pub val: Vec<BiasedExample>,
    pub test: Vec<BiasedExample>,
}

/// Sizing knobs shared by both generators.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub val_fraction: f64,
    /// Use only the first `n` training digits.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            val_fraction: 0.1,
            train_limit: None,
            test_limit: None,
        }
    }
}

/// Foreground tinting: channel `c` of pixel `(h, w)` is `digit[h, w] · rgb[c]`.
pub fn colorize(digit: &Tensor, rgb: &Rgb) -> Tensor {
    let mut data = Vec::with_capacity(3 * digit.len());
    for &c in rgb {
        data.extend(digit.data().iter().map(|&v| v * c));
    }
    Tensor::new(vec![3, 28, 28], data).expect("28x28 digit")
}

pub fn colored_example(digit: Tensor, label: usize, palette: &Palette, reversed: bool) -> BiasedExample {
    let palette_index = if reversed { 9 - label } else { label };
    BiasedExample {
        image: colorize(&digit, &palette.0[palette_index]),
        label,
        clean_digit: digit,
        bias: BiasMeta::Color { palette_index },
    }
}

/// Writes a uniform gray patch into `corner` and stacks to three channels.
pub fn decoy_example(digit: Tensor, label: usize, corner: Corner, intensity_index: usize) -> BiasedExample {
    let mut gray = digit.clone();
    let (oy, ox) = corner.origin();
    let level = decoy_intensity(intensity_index);
    for y in oy..oy + PATCH_SIDE {
        for x in ox..ox + PATCH_SIDE {
            gray.set(&[y, x], level);
        }
    }
    let mut data = Vec::with_capacity(3 * 784);
    for _ in 0..3 {
        data.extend_from_slice(gray.data());
    }
    BiasedExample {
        image: Tensor::new(vec![3, 28, 28], data).expect("28x28 digit"),
        label,
        clean_digit: digit,
        bias: BiasMeta::Patch { corner, intensity_index },
    }
}

fn check_raw(raw: &MnistRaw, what: &str) -> Result<()> {
    if raw.is_empty() {
        return Err(Error::Config(format!("{what} set is empty")));
    }
    Ok(())
}

pub fn synth_colored_mnist(
    train: &MnistRaw,
    test: &MnistRaw,
    seed: u64,
    palette: &Palette,
    opts: &SynthOptions,
) -> Result<DatasetSplit> {
    palette.validate()?;
    let train = train.truncated(opts.train_limit);
    let test = test.truncated(opts.test_limit);
    check_raw(&train, "training")?;
    check_raw(&test, "test")?;
    let biased: Vec<_> = (0..train.len())
        .map(|i| colored_example(train.digit(i), usize::from(train.labels[i]), palette, false))
        .collect();
    let (train_ex, val_ex) = split_train_val(biased, opts.val_fraction, seed)?;
    let test_ex = (0..test.len())
        .map(|i| colored_example(test.digit(i), usize::from(test.labels[i]), palette, true))
        .collect();
    Ok(DatasetSplit {
        kind: DatasetKind::Colored,
        seed,
        provenance: format!("colored seed={seed} palette={:?}", palette.0),
        train: train_ex,
        val: val_ex,
        test: test_ex,
    })
}

pub fn synth_decoy_mnist(train: &MnistRaw, test: &MnistRaw, seed: u64, opts: &SynthOptions) -> Result<DatasetSplit> {
    let train = train.truncated(opts.train_limit);
    let test = test.truncated(opts.test_limit);
    check_raw(&train, "training")?;
    check_raw(&test, "test")?;
    let root = SeededRng::new(seed);
    let train_rng = root.child("decoy-train");
    let test_rng = root.child("decoy-test");
    let biased: Vec<_> = (0..train.len())
        .map(|i| {
            let mut r = train_rng.child_u64(i as u64);
            let corner = Corner::ALL[r.below(4)];
            let label = usize::from(train.labels[i]);
            decoy_example(train.digit(i), label, corner, label)
        })
        .collect();
    let (train_ex, val_ex) = split_train_val(biased, opts.val_fraction, seed)?;
    let test_ex = (0..test.len())
        .map(|i| {
            let mut r = test_rng.child_u64(i as u64);
            let corner = Corner::ALL[r.below(4)];
            let intensity = r.below(10);
            decoy_example(test.digit(i), usize::from(test.labels[i]), corner, intensity)
        })
        .collect();
    Ok(DatasetSplit {
        kind: DatasetKind::Decoy,
        seed,
        provenance: format!("decoy seed={seed} patch={PATCH_SIDE}x{PATCH_SIDE} intensity=(255-25y)/255"),
        train: train_ex,
        val: val_ex,
        test: test_ex,
    })
}

pub fn synthesize(
    kind: DatasetKind,
    train: &MnistRaw,
    test: &MnistRaw,
    seed: u64,
    palette: &Palette,
    opts: &SynthOptions,
) -> Result<DatasetSplit> {
    match kind {
        DatasetKind::Colored => synth_colored_mnist(train, test, seed, palette, opts),
        DatasetKind::Decoy => synth_decoy_mnist(train, test, seed, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_raw(n: usize, seed: u64) -> MnistRaw {
        let mut rng = SeededRng::new(seed);
        let mut images = Tensor::zeros(&[n, 28, 28]);
        for i in 0..n {
            // A blob in the middle, never touching the 4-pixel border.
            for y in 8..20 {
                for x in 9..19 {
                    images.set(&[i, y, x], rng.uniform());
                }
            }
        }
        MnistRaw {
            images,
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
        }
    }

    #[test]
    fn palette_validation() {
        Palette::default().validate().unwrap();
        let mut p = Palette::default();
        p.0[7] = p.0[2];
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_digit_stays_black() {
        let ex = colored_example(Tensor::zeros(&[28, 28]), 3, &Palette::default(), false);
        assert!(ex.image.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_color_is_class_color() {
        let raw = toy_raw(20, 1);
        let ex = colored_example(raw.digit(3), 3, &Palette::default(), false);
        let rgb = Palette::default().0[3];
        for p in 0..784 {
            let d = ex.clean_digit.data()[p];
            for (c, &k) in rgb.iter().enumerate() {
                assert_eq!(ex.image.data()[c * 784 + p], d * k);
            }
        }
    }

    #[test]
    fn reversal_matches_mirrored_train_class() {
        let raw = toy_raw(1, 2);
        let pal = Palette::default();
        for y in 0..10 {
            let train = colored_example(raw.digit(0), y, &pal, false);
            let test = colored_example(raw.digit(0), 9 - y, &pal, true);
            assert_eq!(train.image, test.image);
        }
    }

    #[test]
    fn decoy_patch_levels() {
        assert_eq!(decoy_intensity(0), 1.0);
        assert!((decoy_intensity(9) - 30.0 / 255.0).abs() < 1e-15);
        let ex = decoy_example(Tensor::zeros(&[28, 28]), 9, Corner::BottomRight, 9);
        assert_eq!(ex.image.at(&[2, 27, 27]), decoy_intensity(9));
        assert_eq!(ex.image.at(&[0, 23, 23]), 0.0);
        assert!(ex.clean_digit.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn synthesis_is_deterministic_and_in_range() {
        let raw = toy_raw(200, 3);
        let opts = SynthOptions::default();
        let a = synth_decoy_mnist(&raw, &raw, 11, &opts).unwrap();
        let b = synth_decoy_mnist(&raw, &raw, 11, &opts).unwrap();
        assert_eq!(a.train.len() + a.val.len(), 200);
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.bias, y.bias);
        }
        for ex in a.train.iter().chain(&a.val).chain(&a.test) {
            assert!(ex.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let c = synth_colored_mnist(&raw, &raw, 11, &Palette::default(), &opts).unwrap();
        for ex in &c.val {
            assert_eq!(ex.bias, BiasMeta::Color { palette_index: ex.label });
        }
        for ex in &c.test {
            assert_eq!(ex.bias, BiasMeta::Color { palette_index: 9 - ex.label });
        }
    }

    #[test]
    fn dataset_names() {
        assert_eq!("colored".parse::<DatasetKind>().unwrap(), DatasetKind::Colored);
        assert_eq!("Decoy".parse::<DatasetKind>().unwrap(), DatasetKind::Decoy);
        assert!("cifar".parse::<DatasetKind>().is_err());
    }
}
