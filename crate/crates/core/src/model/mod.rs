//! The three classifiers: a GRU over the feature sequence, a two-layer CNN
//! over the scan-path image, and the parallel fusion of both, each topped by
//! a one-hidden-layer classification head.

mod checkpoint;
mod network;
mod selfcheck;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use network::{Cnn, Gradients};
pub use selfcheck::{gradient_suite, CheckResult};
pub use train::{format_history, EpochRecord};

use crate::nn::{Gru, Linear, NnError, Tensor};
use crate::preprocess::N_FEATURES;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    GruOnly,
    CnnOnly,
    Vtnet,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::GruOnly, Variant::CnnOnly, Variant::Vtnet];

    pub fn has_gru(self) -> bool {
        self != Variant::CnnOnly
    }

    pub fn has_cnn(self) -> bool {
        self != Variant::GruOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::GruOnly => "gru_only",
            Variant::CnnOnly => "cnn_only",
            Variant::Vtnet => "vtnet",
        }
    }

    /// Short name used in tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::GruOnly => "GRU",
            Variant::CnnOnly => "CNN",
            Variant::Vtnet => "VTNet",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gru_only" | "gru" => Ok(Variant::GruOnly),
            "cnn_only" | "cnn" => Ok(Variant::CnnOnly),
            "vtnet" => Ok(Variant::Vtnet),
            other => Err(format!("unknown variant `{other}` (expected gru_only, cnn_only or vtnet)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VtnetConfig {
    pub variant: Variant,
    pub input_size: usize,
    pub hidden_size: usize,
    pub conv_filters: (usize, usize),
    pub kernel_size: usize,
    /// Scan-path image size the CNN is built for.
    pub image_width: usize,
    pub image_height: usize,
    pub head_hidden: usize,
    pub classes: usize,
    pub max_epochs: usize,
    pub lr0: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for VtnetConfig {
    fn default() -> Self {
        VtnetConfig {
            variant: Variant::Vtnet,
            input_size: N_FEATURES,
            hidden_size: 256,
            conv_filters: (6, 16),
            kernel_size: 5,
            image_width: 214,
            image_height: 171,
            head_hidden: 256,
            classes: 2,
            max_epochs: 100,
            lr0: 1e-3,
            batch_size: 64,
            patience: 10,
            seed: 0,
        }
    }
}

impl VtnetConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_size", self.input_size),
            ("hidden_size", self.hidden_size),
            ("conv_filters.0", self.conv_filters.0),
            ("conv_filters.1", self.conv_filters.1),
            ("kernel_size", self.kernel_size),
            ("head_hidden", self.head_hidden),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.classes != 2 {
            return Err(ModelError::InvalidConfig("only two classes are supported".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.variant.has_cnn() && self.cnn_output_shape().is_none() {
            return Err(ModelError::InvalidConfig(format!(
                "image {}x{} is too small for two conv/pool stages",
                self.image_width, self.image_height
            )));
        }
        Ok(())
    }

    /// `(channels, height, width)` of the CNN branch output.
    pub fn cnn_output_shape(&self) -> Option<(usize, usize, usize)> {
        let k = self.kernel_size;
        let stage = |s: usize| (s >= k && s - k + 1 >= 2).then(|| (s - k + 1) / 2);
        let h = stage(stage(self.image_height)?)?;
        let w = stage(stage(self.image_width)?)?;
        Some((self.conv_filters.1, h, w))
    }

    /// Width of the fused vector entering the head.
    pub fn head_input_width(&self) -> usize {
        let gru = if self.variant.has_gru() { self.hidden_size } else { 0 };
        let cnn = if self.variant.has_cnn() {
            self.cnn_output_shape().map_or(0, |(c, h, w)| c * h * w)
        } else {
            0
        };
        gru + cnn
    }

    /// Learning rate for zero-based epoch `e`.
    pub fn lr_at(&self, e: usize) -> f64 {
        self.lr0 * (1.0 - e as f64 / self.max_epochs as f64)
    }
}

/// Class score for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    pub task_id: String,
    /// Probability of the confused class.
    pub score: f64,
    pub label: crate::data::Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VtnetModel {
    pub config: VtnetConfig,
    pub gru: Option<Gru>,
    pub cnn: Option<Cnn>,
    pub fc1: Linear,
    pub fc2: Linear,
    pub history: Vec<EpochRecord>,
}

/// Allocates a model with seeded uniform weights and zero biases.
pub fn init_model(cfg: &VtnetConfig) -> Result<VtnetModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gru = cfg
        .variant
        .has_gru()
        .then(|| Gru::new(cfg.input_size, cfg.hidden_size, &mut rng));
    let cnn = cfg.variant.has_cnn().then(|| Cnn::new(cfg, &mut rng));
    let fc1 = Linear::new(cfg.head_input_width(), cfg.head_hidden, &mut rng);
    let fc2 = Linear::new(cfg.head_hidden, cfg.classes, &mut rng);
    Ok(VtnetModel {
        config: cfg.clone(),
        gru,
        cnn,
        fc1,
        fc2,
        history: Vec::new(),
    })
}

impl VtnetModel {
    /// Every parameter tensor with a stable name, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(g) = &self.gru {
            out.extend(g.named().into_iter().map(|(n, t)| (format!("gru.{n}"), t)));
        }
        if let Some(c) = &self.cnn {
            out.push(("cnn.conv1.kernel".to_string(), &c.conv1.kernel));
            out.push(("cnn.conv1.bias".to_string(), &c.conv1.bias));
            out.push(("cnn.conv2.kernel".to_string(), &c.conv2.kernel));
            out.push(("cnn.conv2.bias".to_string(), &c.conv2.bias));
        }
        out.push(("head.fc1.weight".to_string(), &self.fc1.weight));
        out.push(("head.fc1.bias".to_string(), &self.fc1.bias));
        out.push(("head.fc2.weight".to_string(), &self.fc2.weight));
        out.push(("head.fc2.bias".to_string(), &self.fc2.bias));
        out
    }

    /// Mutable counterpart of [`VtnetModel::named_params`], same order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(g) = &mut self.gru {
            out.extend(g.named_mut().into_iter().map(|(_, t)| t));
        }
        if let Some(c) = &mut self.cnn {
            out.push(&mut c.conv1.kernel);
            out.push(&mut c.conv1.bias);
            out.push(&mut c.conv2.kernel);
            out.push(&mut c.conv2.bias);
        }
        out.push(&mut self.fc1.weight);
        out.push(&mut self.fc1.bias);
        out.push(&mut self.fc2.weight);
        out.push(&mut self.fc2.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Copy with every parameter set to zero.
    pub fn zeroed(&self) -> VtnetModel {
        let mut z = self.clone();
        z.history.clear();
        for t in z.params_mut() {
            t.fill(0.0);
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_head_width() {
        let cfg = VtnetConfig::default();
        assert_eq!(cfg.cnn_output_shape(), Some((16, 39, 50)));
        assert_eq!(cfg.head_input_width(), 256 + 16 * 39 * 50);
        let gru = VtnetConfig { variant: Variant::GruOnly, ..cfg.clone() };
        assert_eq!(gru.head_input_width(), 256);
        let cnn = VtnetConfig { variant: Variant::CnnOnly, ..cfg };
        assert_eq!(cnn.head_input_width(), 16 * 39 * 50);
    }

    #[test]
    fn gru_only_allocates_no_conv() {
        let cfg = VtnetConfig {
            variant: Variant::GruOnly,
            hidden_size: 8,
            head_hidden: 4,
            ..VtnetConfig::default()
        };
        let m = init_model(&cfg).unwrap();
        assert!(m.cnn.is_none());
        assert!(m.named_params().iter().all(|(n, _)| !n.starts_with("cnn")));
        assert_eq!(m.fc1.in_dim(), 8);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = VtnetConfig {
            hidden_size: 6,
            head_hidden: 5,
            image_width: 30,
            image_height: 24,
            seed: 11,
            ..VtnetConfig::default()
        };
        let a = init_model(&cfg).unwrap();
        let b = init_model(&cfg).unwrap();
        assert_eq!(a, b);
        let c = init_model(&VtnetConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, c);
        assert!(a.fc1.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        let ok = VtnetConfig::default();
        assert!(ok.validate().is_ok());
        assert!(VtnetConfig { lr0: 0.0, ..ok.clone() }.validate().is_err());
        assert!(VtnetConfig { hidden_size: 0, ..ok.clone() }.validate().is_err());
        assert!(VtnetConfig { image_width: 12, ..ok.clone() }.validate().is_err());
        let gru_small = VtnetConfig { image_width: 1, variant: Variant::GruOnly, ..ok };
        assert!(gru_small.validate().is_ok());
    }

    #[test]
    fn lr_schedule_is_linear() {
        let cfg = VtnetConfig::default();
        for e in 0..100 {
            assert_eq!(cfg.lr_at(e), 1e-3 * (1.0 - e as f64 / 100.0));
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("trane".parse::<Variant>().is_err());
    }
}
