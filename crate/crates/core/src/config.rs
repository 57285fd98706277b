//! Declarative network and run configuration, parsed strictly from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{ConvTopology, ReadoutMode};
use crate::error::{Error, Result};
use crate::filters::FilterMode;
use crate::pooling::MsaPoolConfig;

/// One `conv → batch norm → ReLU → (pool)` block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    /// Channels per rotation order.
    pub channels: usize,
    #[serde(default = "yes")]
    pub batchnorm: bool,
    /// Mean pool window (= stride) after the block; 0 or absent for none.
    #[serde(default)]
    pub pool: usize,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Gap,
    Zernike,
    Msa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// Maximum Zernike degree.
    pub zernike_degree: usize,
    pub msa_heads: usize,
    pub msa_key_width: usize,
    pub msa_buckets: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            kind: HeadKind::Gap,
            zernike_degree: 8,
            msa_heads: 2,
            msa_key_width: 4,
            msa_buckets: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Side length of the (square) input images.
    pub input_size: usize,
    pub upscale: usize,
    pub mask: bool,
    /// Streams carry orders `0..=max_order`.
    pub max_order: i32,
    pub filter_size: usize,
    pub rings: usize,
    pub filter_mode: FilterMode,
    pub blocks: Vec<BlockConfig>,
    pub readout: ReadoutMode,
    pub head: HeadConfig,
    pub classes: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Phasor smoothing for the magnitude ops; 0 is exact.
    pub phase_eps: f64,
    /// Gaussian prefilter (pixels) applied to inputs before up-scaling;
    /// 0 disables it.
    pub input_blur: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: 28,
            upscale: 2,
            mask: true,
            max_order: 2,
            filter_size: 15,
            rings: 3,
            filter_mode: FilterMode::HNext,
            blocks: vec![
                BlockConfig { channels: 4, batchnorm: true, pool: 0 },
                BlockConfig { channels: 4, batchnorm: true, pool: 2 },
                BlockConfig { channels: 4, batchnorm: true, pool: 0 },
            ],
            readout: ReadoutMode::Wide,
            head: HeadConfig::default(),
            classes: 10,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            phase_eps: 0.1,
            input_blur: 0.0,
        }
    }
}

/// Spatial size and stream layout entering each block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLayout {
    pub topology: ConvTopology,
    pub size: usize,
    /// Size after the optional pool.
    pub pooled_size: usize,
}

impl NetworkConfig {
    pub fn orders(&self) -> Vec<i32> {
        (0..=self.max_order).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.upscale == 0 {
            return Err(Error::Config("input_size and upscale must be >= 1".into()));
        }
        if self.max_order < 0 {
            return Err(Error::Config("max_order must be >= 0".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::Config("bn_eps must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.phase_eps >= 0.0) {
            return Err(Error::Config("bn_momentum must be in [0, 1], phase_eps >= 0".into()));
        }
        if !(self.input_blur >= 0.0) || !self.input_blur.is_finite() {
            return Err(Error::Config("input_blur must be a finite value >= 0".into()));
        }
        if self.blocks.iter().any(|b| b.channels == 0) {
            return Err(Error::Config("block channel counts must be >= 1".into()));
        }
        self.layouts()?;
        self.head_input_channels()?;
        if self.head.kind == HeadKind::Zernike && self.final_size() < 8 {
            return Err(Error::Config("zernike head needs a final grid of at least 8".into()));
        }
        if self.head.kind == HeadKind::Msa {
            self.msa_config()?.validate()?;
        }
        Ok(())
    }

    pub fn layouts(&self) -> Result<Vec<BlockLayout>> {
        let mut size = self.input_size * self.upscale;
        let mut in_orders = vec![0];
        let mut in_channels = vec![1];
        let mut out = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let orders = self.orders();
            let topology = ConvTopology::dense(
                in_orders.clone(),
                in_channels.clone(),
                orders.clone(),
                vec![b.channels; orders.len()],
                self.filter_size,
                self.rings,
                self.filter_mode,
            );
            topology.validate().map_err(|e| Error::Config(format!("block {i}: {e}")))?;
            if self.filter_size > size {
                return Err(Error::Config(format!(
                    "block {i}: filter size {} exceeds grid {size}",
                    self.filter_size
                )));
            }
            let pooled_size = if b.pool > 0 {
                if b.pool > size || !(size - b.pool).is_multiple_of(b.pool) {
                    return Err(Error::Config(format!(
                        "block {i}: pool {} does not tile grid {size}",
                        b.pool
                    )));
                }
                (size - b.pool) / b.pool + 1
            } else {
                size
            };
            in_orders = topology.out_orders.clone();
            in_channels = topology.out_channels.clone();
            out.push(BlockLayout { topology, size, pooled_size });
            size = pooled_size;
        }
        Ok(out)
    }

    /// Grid side entering the readout.
    pub fn final_size(&self) -> usize {
        self.layouts()
            .ok()
            .and_then(|l| l.last().map(|b| b.pooled_size))
            .unwrap_or(self.input_size * self.upscale)
    }

    fn final_layout(&self) -> Result<(Vec<i32>, Vec<usize>)> {
        Ok(match self.blocks.last() {
            Some(b) => (self.orders(), vec![b.channels; self.orders().len()]),
            None => (vec![0], vec![1]),
        })
    }

    pub fn readout_channels(&self) -> Result<usize> {
        let (orders, channels) = self.final_layout()?;
        self.readout
            .output_channels(&orders, &channels)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn msa_config(&self) -> Result<MsaPoolConfig> {
        Ok(MsaPoolConfig {
            heads: self.head.msa_heads,
            model_width: self.readout_channels()?,
            key_width: self.head.msa_key_width,
            buckets: self.head.msa_buckets,
        })
    }

    /// Width of the pooled feature vector fed to the classifier.
    pub fn head_input_channels(&self) -> Result<usize> {
        self.readout_channels()
    }

    pub fn feature_width(&self) -> Result<usize> {
        let d = self.readout_channels()?;
        Ok(match self.head.kind {
            HeadKind::Gap | HeadKind::Msa => d,
            HeadKind::Zernike => {
                let n = self.head.zernike_degree;
                d * (0..=n).map(|k| k / 2 + 1).sum::<usize>()
            }
        })
    }

    /// Short description for reports: upscale, mask, filter mode.
    pub fn fingerprint(&self) -> String {
        format!(
            "up{}-{}-{}-k{}-n{}-M{}",
            self.upscale,
            if self.mask { "mask" } else { "nomask" },
            self.filter_mode.as_str(),
            self.filter_size,
            self.rings,
            self.max_order
        )
    }
}

/// Trainable parameter count of a network.
pub fn count_parameters(config: &NetworkConfig) -> Result<usize> {
    config.validate()?;
    let mut total = 0;
    for (b, layout) in config.blocks.iter().zip(config.layouts()?) {
        let channels: usize = layout.topology.out_channels.iter().sum();
        total += layout.topology.parameter_count();
        total += channels;
        if b.batchnorm {
            total += 2 * channels;
        }
    }
    if config.head.kind == HeadKind::Msa {
        total += config.msa_config()?.parameter_count();
    }
    let d = config.feature_width()?;
    total += d * config.classes + config.classes;
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Learning rate factor applied once per epoch.
    pub lr_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Use only the first `n` training samples; 0 means all.
    pub train_subset: usize,
    /// Use only the first `n` validation samples for per-epoch metrics;
    /// 0 means all.
    pub valid_subset: usize,
    /// Batches of leading training samples used to re-estimate the
    /// batch-norm statistics after every epoch; 0 keeps the running
    /// averages.
    pub bn_calibration_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lr_decay: 1.0,
            batch: 64,
            epochs: 10,
            seed: 0,
            train_subset: 0,
            valid_subset: 0,
            bn_calibration_batches: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    MnistRotTest,
    SwnGcnMnist,
    RotMnist,
    CifarRotTest,
    SwnGcnCifar,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::MnistRotTest => "mnist-rot-test",
            Variant::SwnGcnMnist => "swn-gcn-mnist",
            Variant::RotMnist => "rot-mnist",
            Variant::CifarRotTest => "cifar-rot-test",
            Variant::SwnGcnCifar => "swn-gcn-cifar",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            Variant::MnistRotTest,
            Variant::SwnGcnMnist,
            Variant::RotMnist,
            Variant::CifarRotTest,
            Variant::SwnGcnCifar,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| Error::Parameter(format!("unknown dataset variant '{s}'")))
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [
            Variant::MnistRotTest,
            Variant::SwnGcnMnist,
            Variant::RotMnist,
            Variant::CifarRotTest,
            Variant::SwnGcnCifar,
        ]
        .into_iter()
        .find(|v| v.code() == code)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub variant: Variant,
    pub seed: u64,
    /// Directory holding the MNIST IDX files (plain or `.gz`). Relative
    /// paths resolve against the data root.
    pub source: PathBuf,
    /// Directory of generated split archives, relative to the data root.
    pub dataset: PathBuf,
    /// Exchange the valid and test sizes of rot-mnist.
    pub swap_rot_mnist_sizes: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            variant: Variant::MnistRotTest,
            seed: 0,
            source: PathBuf::from("mnist"),
            dataset: PathBuf::from("generated"),
            swap_rot_mnist_sizes: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Random inputs per angle for the equivariance report.
    pub inputs: usize,
    /// Hard threshold for quarter-turn residuals.
    pub hard_threshold: f64,
    /// Angles (degrees) probed beyond the quarter turns.
    pub soft_angles: Vec<f64>,
    /// Bound on the mean relative change of the invariant features at
    /// `soft_angles`; checked only when set.
    pub soft_threshold: Option<f64>,
    /// Angles (degrees) of the invariance table.
    pub table_angles: Vec<f64>,
    /// Samples used for accuracy reports; 0 means the whole split.
    pub samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            inputs: 8,
            hard_threshold: 1e-8,
            soft_angles: vec![45.0],
            soft_threshold: None,
            table_angles: (0..12).map(|k| 30.0 * k as f64).collect(),
            samples: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Data root; falls back to `HNEXT_DATA_DIR`, then `data`.
    pub data_root: Option<PathBuf>,
    /// Output directory for checkpoints and reports.
    pub out: Option<PathBuf>,
    /// Checkpoint for eval/verify; defaults to `<out>/checkpoint.bin`.
    pub checkpoint: Option<PathBuf>,
}

/// A complete experiment description.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub verify: VerifyConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.network.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

impl NetworkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: NetworkConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_backbone_counts_classifier_only() {
        let cfg = NetworkConfig { blocks: vec![], readout: ReadoutMode::M0, ..Default::default() };
        let d = cfg.feature_width().unwrap();
        assert_eq!(d, 1);
        assert_eq!(count_parameters(&cfg).unwrap(), 10 * d + 10);
    }

    #[test]
    fn single_filter_counts_rings_plus_phase() {
        let cfg = NetworkConfig {
            max_order: 0,
            rings: 8,
            blocks: vec![BlockConfig { channels: 1, batchnorm: false, pool: 0 }],
            readout: ReadoutMode::M0,
            ..Default::default()
        };
        // 9 filter parameters + 1 ReLU bias + classifier 1 -> 10.
        assert_eq!(count_parameters(&cfg).unwrap(), 9 + 1 + 20);
    }

    #[test]
    fn strict_parsing() {
        assert!(RunConfig::from_toml("").is_ok());
        assert!(matches!(RunConfig::from_toml("[network]\nbogus = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("nope = 1\n"), Err(Error::Config(_))));
        let cfg = RunConfig::from_toml(
            "[network]\nupscale = 1\nmask = false\nfilter_mode = \"hnet\"\nfilter_size = 5\n\
             [[network.blocks]]\nchannels = 3\npool = 2\n[train]\nepochs = 2\n[data]\nvariant = \"swn-gcn-mnist\"\n",
        )
        .unwrap();
        assert_eq!(cfg.network.blocks.len(), 1);
        assert_eq!(cfg.network.filter_mode, FilterMode::HNet);
        assert_eq!(cfg.data.variant, Variant::SwnGcnMnist);
        assert_eq!(cfg.train.epochs, 2);
        let round = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn layout_checks() {
        let mut cfg = NetworkConfig::default();
        cfg.blocks[1].pool = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = NetworkConfig { input_size: 6, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = NetworkConfig::default();
        let l = cfg.layouts().unwrap();
        assert_eq!(l.iter().map(|b| (b.size, b.pooled_size)).collect::<Vec<_>>(), vec![(56, 56), (56, 28), (28, 28)]);
        assert_eq!(cfg.feature_width().unwrap(), 12);
    }

    #[test]
    fn zernike_width() {
        let cfg = NetworkConfig {
            head: HeadConfig { kind: HeadKind::Zernike, ..Default::default() },
            ..Default::default()
        };
        assert_eq!(cfg.feature_width().unwrap(), 12 * 25);
    }

    #[test]
    fn variant_names() {
        for v in ["mnist-rot-test", "swn-gcn-mnist", "rot-mnist", "cifar-rot-test", "swn-gcn-cifar"] {
            let parsed = Variant::parse(v).unwrap();
            assert_eq!(parsed.as_str(), v);
            assert_eq!(Variant::from_code(parsed.code()), Some(parsed));
        }
        assert!(matches!(Variant::parse("fashion"), Err(Error::Parameter(_))));
    }
}
