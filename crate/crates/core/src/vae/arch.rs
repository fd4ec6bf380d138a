use crate::error::{Error, Result};
use crate::kv::KvDocument;
use crate::tensor::ConvSpec;

/// Layer geometry of the shared encoder-decoder pair.
///
/// The encoder runs `encoder_channels.len() - 1` stride-`stride` stages.
/// The decoder mirrors them with the same number of transposed stages
/// (forced back onto the encoder's intermediate extents), then consumes the
/// rest of `decoder_channels` with stride-1 layers; the last of those has
/// no bias and a tanh head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchitectureConfig {
    pub input_extents: [usize; 3],
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub latent_dim: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ArchitectureConfig {
    /// Full-size layout for 53×63×52 volumes.
    pub fn full_size(latent_dim: usize) -> Self {
        Self {
            input_extents: [53, 63, 52],
            encoder_channels: vec![1, 64, 128, 256, 512],
            decoder_channels: vec![512, 256, 128, 64, 32, 16, 1],
            latent_dim,
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }

    /// Desk-scale layout: 24×28×24 volumes, channel widths divided by 8.
    pub fn desk(latent_dim: usize) -> Self {
        Self {
            input_extents: [24, 28, 24],
            encoder_channels: vec![1, 8, 16, 32, 64],
            decoder_channels: vec![64, 32, 16, 8, 4, 2, 1],
            latent_dim,
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }

    pub fn encoder_stages(&self) -> usize {
        self.encoder_channels.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.encoder_stages();
        if stages == 0 {
            return Err(Error::Config("encoder_channels needs at least two entries".into()));
        }
        if self.encoder_channels[0] != 1 {
            return Err(Error::Config("encoder_channels must start at 1 (single-channel volumes)".into()));
        }
        if self.decoder_channels.len() < stages + 2 {
            return Err(Error::Config(format!(
                "decoder_channels needs at least {} entries for {stages} upsampling stages plus a stride-1 output layer",
                stages + 2
            )));
        }
        if *self.decoder_channels.last().unwrap() != 1 {
            return Err(Error::Config("decoder_channels must end at 1".into()));
        }
        if self.encoder_channels.iter().chain(&self.decoder_channels).any(|&c| c == 0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config("kernel and stride must be positive".into()));
        }
        if self.kernel != 2 * self.padding + 1 {
            return Err(Error::Config(
                "stride-1 decoder layers keep their extents only when kernel = 2 * padding + 1".into(),
            ));
        }
        self.stage_extents().map(|_| ())
    }

    /// Spatial extents at the input and after every encoder stage.
    pub fn stage_extents(&self) -> Result<Vec<[usize; 3]>> {
        let mut out = vec![self.input_extents];
        for stage in 0..self.encoder_stages() {
            let spec = self.encoder_spec(stage);
            let next = spec
                .output_extents(*out.last().unwrap())
                .map_err(|e| Error::Config(format!("encoder stage {stage}: {e}")))?;
            out.push(next);
        }
        Ok(out)
    }

    pub fn bottleneck_extents(&self) -> Result<[usize; 3]> {
        Ok(*self.stage_extents()?.last().unwrap())
    }

    /// Length of the flattened encoder output fed to the μ / log σ² heads.
    pub fn flat_size(&self) -> Result<usize> {
        let ext = self.bottleneck_extents()?;
        Ok(ext.iter().product::<usize>() * self.encoder_channels[self.encoder_stages()])
    }

    /// Length of the decoder stem output reshaped to the bottleneck grid.
    pub fn stem_size(&self) -> Result<usize> {
        let ext = self.bottleneck_extents()?;
        Ok(ext.iter().product::<usize>() * self.decoder_channels[0])
    }

    pub fn encoder_spec(&self, stage: usize) -> ConvSpec {
        ConvSpec::cubic(
            self.encoder_channels[stage],
            self.encoder_channels[stage + 1],
            self.kernel,
            self.stride,
            self.padding,
            true,
        )
    }

    pub fn upsample_spec(&self, stage: usize) -> ConvSpec {
        ConvSpec::cubic(
            self.decoder_channels[stage],
            self.decoder_channels[stage + 1],
            self.kernel,
            self.stride,
            self.padding,
            true,
        )
    }

    /// Stride-1 layers after the upsampling path; index 0 is the first one.
    pub fn refine_layers(&self) -> usize {
        self.decoder_channels.len() - 1 - self.encoder_stages()
    }

    pub fn refine_spec(&self, layer: usize) -> ConvSpec {
        let i = self.encoder_stages() + layer;
        let last = layer + 1 == self.refine_layers();
        ConvSpec::cubic(
            self.decoder_channels[i],
            self.decoder_channels[i + 1],
            self.kernel,
            1,
            self.padding,
            !last,
        )
    }

    pub fn voxels(&self) -> usize {
        self.input_extents.iter().product()
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.push_list("input_extents", &self.input_extents);
        doc.push_list("encoder_channels", &self.encoder_channels);
        doc.push_list("decoder_channels", &self.decoder_channels);
        doc.push("latent_dim", self.latent_dim);
        doc.push("kernel", self.kernel);
        doc.push("stride", self.stride);
        doc.push("padding", self.padding);
        doc
    }

    pub fn from_kv(doc: &KvDocument) -> Result<Self> {
        let ext: Vec<usize> = doc.parse_list("input_extents")?;
        let input_extents: [usize; 3] = ext
            .try_into()
            .map_err(|_| Error::Config("input_extents needs exactly three values".into()))?;
        let arch = Self {
            input_extents,
            encoder_channels: doc.parse_list("encoder_channels")?,
            decoder_channels: doc.parse_list("decoder_channels")?,
            latent_dim: doc.parse_value("latent_dim")?,
            kernel: doc.parse_value("kernel")?,
            stride: doc.parse_value("stride")?,
            padding: doc.parse_value("padding")?,
        };
        arch.validate()?;
        Ok(arch)
    }
}
