// Float math for `no_std` builds; std's inherent methods shadow it when std is linked.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, SeedRole};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Procedural shape classes, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Frame,
    Cross,
    Bars,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Disk, ShapeKind::Frame, ShapeKind::Cross, ShapeKind::Bars];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Frame => "frame",
            ShapeKind::Cross => "cross",
            ShapeKind::Bars => "bars",
        }
    }

    // signed coverage margin at offset (dx, dy) from the centre; > 0 is inside
    fn margin(self, dx: f64, dy: f64, r: f64, stroke: f64) -> f64 {
        let (ax, ay) = (dx.abs(), dy.abs());
        match self {
            ShapeKind::Disk => r - (dx * dx + dy * dy).sqrt(),
            ShapeKind::Frame => {
                let m = ax.max(ay);
                (r - m).min(m - (r - stroke))
            }
            ShapeKind::Cross => (stroke * 0.5 - ax).min(r - ay).max((stroke * 0.5 - ay).min(r - ax)),
            ShapeKind::Bars => (r - ax).min(stroke * 0.5 - (ay - 0.55 * r).abs()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapesConfig {
    pub num_classes: usize,
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<S> {
    pub image: Tensor<S>,
    pub label: usize,
    pub split: Split,
}

/// Labelled grayscale images in `[0, 1]`, shaped `[1, size, size]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    samples: Vec<Sample<S>>,
    class_names: Vec<String>,
}

/// Renders one anti-aliased shape with random centre jitter, size and
/// intensity.
pub fn render_shape<S: Scalar, R: Rng + ?Sized>(kind: ShapeKind, size: usize, rng: &mut R) -> Tensor<S> {
    let s = size as f64;
    let cx = s / 2.0 + rng.random_range(-0.1..0.1) * s;
    let cy = s / 2.0 + rng.random_range(-0.1..0.1) * s;
    let r = rng.random_range(0.24..0.34) * s;
    let stroke = rng.random_range(0.12..0.17) * s;
    let amp = rng.random_range(0.75..1.0);
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let m = kind.margin(x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r, stroke);
            data.push(S::lit(amp * (m + 0.5).clamp(0.0, 1.0)));
        }
    }
    Tensor::new(&[1, size, size], data).expect("square image")
}

impl<S: Scalar> Dataset<S> {
    pub fn new(samples: Vec<Sample<S>>, class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::InvalidArgument("a dataset needs at least 2 classes".into()));
        }
        if let Some(s) = samples.iter().find(|s| s.label >= class_names.len()) {
            return Err(Error::ClassOutOfRange { class: s.label, num_classes: class_names.len() });
        }
        Ok(Self { samples, class_names })
    }

    /// Balanced shapes dataset; train and test images use separate seed roles.
    pub fn shapes(cfg: &ShapesConfig, seed_base: u64) -> Result<Self> {
        if !(2..=ShapeKind::ALL.len()).contains(&cfg.num_classes) {
            return Err(Error::InvalidArgument(alloc::format!(
                "shapes dataset supports 2..=4 classes, got {}",
                cfg.num_classes
            )));
        }
        if cfg.image_size < 4 {
            return Err(Error::InvalidArgument("image_size must be at least 4".into()));
        }
        let mut samples = Vec::new();
        for (split, role, per_class) in [
            (Split::Train, SeedRole::DatasetTrain, cfg.train_per_class),
            (Split::Test, SeedRole::DatasetTest, cfg.test_per_class),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed_base, role, 0)?);
            for _ in 0..per_class {
                for (label, kind) in ShapeKind::ALL[..cfg.num_classes].iter().enumerate() {
                    samples.push(Sample { image: render_shape(*kind, cfg.image_size, &mut rng), label, split });
                }
            }
        }
        let names = ShapeKind::ALL[..cfg.num_classes].iter().map(|k| k.name().to_string()).collect();
        Self::new(samples, names)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn samples(&self) -> &[Sample<S>] {
        &self.samples
    }

    pub fn split(&self, split: Split) -> Vec<&Sample<S>> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.image.shape())
    }
}
