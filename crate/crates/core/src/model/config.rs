use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub patch: usize,
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Channel width of the conv heads and tails.
    pub channels: usize,
    /// Convolutions per head and per tail.
    pub conv_layers: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub seg_classes: usize,
    pub icn_epsilon: f64,
    pub foreground_fraction: f64,
    /// Largest input side; sizes the learnable position table.
    pub image_size: usize,
    pub ffn_ratio: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch: 16,
            embed_dim: 384,
            encoder_layers: 12,
            decoder_layers: 4,
            heads: 8,
            head_dim: 48,
            channels: 32,
            conv_layers: 2,
            in_channels: 6,
            out_channels: 3,
            seg_classes: 4,
            icn_epsilon: 1e-5,
            foreground_fraction: 0.05,
            image_size: 224,
            ffn_ratio: 4,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains on a single CPU core in minutes.
    pub fn desk() -> Self {
        ModelConfig {
            patch: 8,
            embed_dim: 64,
            encoder_layers: 2,
            decoder_layers: 1,
            heads: 2,
            head_dim: 32,
            channels: 16,
            image_size: 64,
            ffn_ratio: 2,
            ..ModelConfig::default()
        }
    }

    /// The two-layer, `D = 8`, two-head configuration used for gradient checks.
    pub fn reduced() -> Self {
        ModelConfig {
            patch: 4,
            embed_dim: 8,
            encoder_layers: 2,
            decoder_layers: 1,
            heads: 2,
            head_dim: 4,
            channels: 4,
            in_channels: 2,
            out_channels: 1,
            seg_classes: 3,
            image_size: 32,
            ffn_ratio: 2,
            init_std: 0.3,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("patch", self.patch),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("channels", self.channels),
            ("conv_layers", self.conv_layers),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("seg_classes", self.seg_classes),
            ("image_size", self.image_size),
            ("ffn_ratio", self.ffn_ratio),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.heads * self.head_dim != self.embed_dim {
            return Err(Error::config(format!(
                "heads ({}) x head_dim ({}) must equal embed_dim ({})",
                self.heads, self.head_dim, self.embed_dim
            )));
        }
        if !self.image_size.is_multiple_of(self.patch) {
            return Err(Error::config(format!(
                "patch {} does not divide image_size {}",
                self.patch, self.image_size
            )));
        }
        if !(self.icn_epsilon > 0.0) || !(0.0..1.0).contains(&self.foreground_fraction) {
            return Err(Error::config(
                "icn_epsilon must be > 0 and foreground_fraction in [0, 1)",
            ));
        }
        Ok(())
    }

    pub fn max_grid(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn ffn_hidden(&self) -> usize {
        self.ffn_ratio * self.embed_dim
    }

    /// Key/value pairs in a stable order, shared by checkpoints and run configs.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("patch", self.patch.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("encoder_layers", self.encoder_layers.to_string()),
            ("decoder_layers", self.decoder_layers.to_string()),
            ("heads", self.heads.to_string()),
            ("head_dim", self.head_dim.to_string()),
            ("channels", self.channels.to_string()),
            ("conv_layers", self.conv_layers.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("out_channels", self.out_channels.to_string()),
            ("seg_classes", self.seg_classes.to_string()),
            ("icn_epsilon", self.icn_epsilon.to_string()),
            ("foreground_fraction", self.foreground_fraction.to_string()),
            ("image_size", self.image_size.to_string()),
            ("ffn_ratio", self.ffn_ratio.to_string()),
            ("init_std", self.init_std.to_string()),
        ]
    }

    /// Applies one `key = value` override; returns `false` for keys this type does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "patch" => self.patch = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "encoder_layers" => self.encoder_layers = parse(key, value)?,
            "decoder_layers" => self.decoder_layers = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "head_dim" => self.head_dim = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "conv_layers" => self.conv_layers = parse(key, value)?,
            "in_channels" => self.in_channels = parse(key, value)?,
            "out_channels" => self.out_channels = parse(key, value)?,
            "seg_classes" => self.seg_classes = parse(key, value)?,
            "icn_epsilon" => self.icn_epsilon = parse(key, value)?,
            "foreground_fraction" => self.foreground_fraction = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "ffn_ratio" => self.ffn_ratio = parse(key, value)?,
            "init_std" => self.init_std = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
