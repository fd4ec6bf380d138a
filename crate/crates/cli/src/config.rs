//! One flat `key = value` document drives every subcommand.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mmvae_core::analysis::SvmOptions;
use mmvae_core::data::CohortSpec;
use mmvae_core::kv::{parse_list, parse_scalar, KvDocument};
use mmvae_core::projection::TsneOptions;
use mmvae_core::training::TrainingConfig;
use mmvae_core::vae::ArchitectureConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    /// Base seed for splits, initialization, t-SNE and permutations.
    pub seed: u64,
    pub cohort_seed: u64,
    pub cohort: CohortSpec,
    /// `input_extents` is taken from the cohort actually on disk.
    pub arch: ArchitectureConfig,
    pub training: TrainingConfig,
    pub svm: SvmOptions,
    pub tsne: TsneOptions,
    pub quantile: f64,
    pub top_k: usize,
    pub permutations: usize,
    pub sweep_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cohort = CohortSpec::desk();
        let arch = ArchitectureConfig { input_extents: cohort.extents, ..ArchitectureConfig::desk(16) };
        RunConfig {
            out: PathBuf::from("run"),
            seed: 0,
            cohort_seed: 0,
            cohort,
            arch,
            training: TrainingConfig::default(),
            svm: SvmOptions::default(),
            tsne: TsneOptions::default(),
            quantile: 0.99,
            top_k: 5,
            permutations: 100,
            sweep_seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

const KEYS: &[&str] = &[
    "out",
    "seed",
    "cohort_seed",
    "n_subjects",
    "n_modalities",
    "extents",
    "effect_modalities",
    "effect_size",
    "effect_center",
    "effect_sigma",
    "sz_fraction",
    "structural_modality",
    "gain_sd",
    "smooth_noise_sd",
    "noise_sd",
    "encoder_channels",
    "decoder_channels",
    "latent_dim",
    "kernel",
    "stride",
    "padding",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "epochs",
    "kl_weight",
    "folds",
    "validation_fraction",
    "svm_c",
    "svm_iterations",
    "tsne_perplexity",
    "tsne_iterations",
    "tsne_learning_rate",
    "tsne_exaggeration",
    "quantile",
    "top_k",
    "permutations",
    "sweep_seeds",
];

fn three<T: std::str::FromStr + Copy>(key: &str, v: &str) -> Result<[T; 3]> {
    let list: Vec<T> = parse_list(key, v)?;
    match list.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => bail!("`{key}` needs exactly three values"),
    }
}

impl RunConfig {
    /// Reads the optional config file, applies `overrides` on top and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[(&str, String)]) -> Result<Self> {
        let doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                KvDocument::parse(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => KvDocument::new(),
        };
        Self::from_kv(&doc, overrides)
    }

    pub fn from_kv(doc: &KvDocument, overrides: &[(&str, String)]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (k, _) in doc.entries() {
            if !KEYS.contains(&k.as_str()) {
                bail!("unknown config key `{k}`");
            }
            if !seen.insert(k.as_str()) {
                bail!("config key `{k}` given more than once");
            }
        }
        let mut entries: Vec<(String, String)> = doc.entries().to_vec();
        for (k, v) in overrides {
            entries.retain(|(key, _)| key != k);
            entries.push((k.to_string(), v.clone()));
        }

        let mut cfg = RunConfig::default();
        let mut center = None;
        let mut cohort_seed = None;
        for (k, v) in &entries {
            let v = v.as_str();
            let k = k.as_str();
            match k {
                "out" => cfg.out = PathBuf::from(v),
                "seed" => cfg.seed = parse_scalar(k, v)?,
                "cohort_seed" => cohort_seed = Some(parse_scalar(k, v)?),
                "n_subjects" => cfg.cohort.n_subjects = parse_scalar(k, v)?,
                "n_modalities" => cfg.cohort.n_modalities = parse_scalar(k, v)?,
                "extents" => cfg.cohort.extents = three(k, v)?,
                "effect_modalities" => cfg.cohort.effect_modalities = parse_list(k, v)?,
                "effect_size" => cfg.cohort.effect_size = parse_scalar(k, v)?,
                "effect_center" => center = Some(three(k, v)?),
                "effect_sigma" => cfg.cohort.effect_sigma = parse_scalar(k, v)?,
                "sz_fraction" => cfg.cohort.sz_fraction = parse_scalar(k, v)?,
                "structural_modality" => {
                    cfg.cohort.structural_modality = match v {
                        "none" => None,
                        s => Some(parse_scalar(k, s)?),
                    }
                }
                "gain_sd" => cfg.cohort.gain_sd = parse_scalar(k, v)?,
                "smooth_noise_sd" => cfg.cohort.smooth_noise_sd = parse_scalar(k, v)?,
                "noise_sd" => cfg.cohort.noise_sd = parse_scalar(k, v)?,
                "encoder_channels" => cfg.arch.encoder_channels = parse_list(k, v)?,
                "decoder_channels" => cfg.arch.decoder_channels = parse_list(k, v)?,
                "latent_dim" => cfg.arch.latent_dim = parse_scalar(k, v)?,
                "kernel" => cfg.arch.kernel = parse_scalar(k, v)?,
                "stride" => cfg.arch.stride = parse_scalar(k, v)?,
                "padding" => cfg.arch.padding = parse_scalar(k, v)?,
                "learning_rate" => cfg.training.learning_rate = parse_scalar(k, v)?,
                "adam_beta1" => cfg.training.adam_beta1 = parse_scalar(k, v)?,
                "adam_beta2" => cfg.training.adam_beta2 = parse_scalar(k, v)?,
                "adam_eps" => cfg.training.adam_eps = parse_scalar(k, v)?,
                "epochs" => cfg.training.epochs = parse_scalar(k, v)?,
                "kl_weight" => cfg.training.kl_weight = parse_scalar(k, v)?,
                "folds" => cfg.training.folds = parse_scalar(k, v)?,
                "validation_fraction" => cfg.training.validation_fraction = parse_scalar(k, v)?,
                "svm_c" => cfg.svm.c = parse_scalar(k, v)?,
                "svm_iterations" => cfg.svm.iterations = parse_scalar(k, v)?,
                "tsne_perplexity" => cfg.tsne.perplexity = parse_scalar(k, v)?,
                "tsne_iterations" => cfg.tsne.iterations = parse_scalar(k, v)?,
                "tsne_learning_rate" => cfg.tsne.learning_rate = parse_scalar(k, v)?,
                "tsne_exaggeration" => cfg.tsne.exaggeration = parse_scalar(k, v)?,
                "quantile" => cfg.quantile = parse_scalar(k, v)?,
                "top_k" => cfg.top_k = parse_scalar(k, v)?,
                "permutations" => cfg.permutations = parse_scalar(k, v)?,
                "sweep_seeds" => cfg.sweep_seeds = parse_list(k, v)?,
                other => bail!("unknown config key `{other}`"),
            }
        }
        let extents = cfg.cohort.extents;
        cfg.cohort = cfg.cohort.with_extents(extents);
        if let Some(c) = center {
            cfg.cohort.effect_center = c;
        }
        cfg.cohort_seed = cohort_seed.unwrap_or(cfg.seed);
        cfg.arch.input_extents = extents;
        cfg.training.seed = cfg.seed;
        cfg.tsne.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate().context("cohort settings")?;
        self.arch.validate().context("architecture settings")?;
        self.training.validate().context("training settings")?;
        self.tsne.validate().context("t-SNE settings")?;
        if !(self.svm.c > 0.0 && self.svm.c.is_finite()) {
            bail!("svm_c must be positive, got {}", self.svm.c);
        }
        if self.svm.iterations == 0 {
            bail!("svm_iterations must be positive");
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            bail!("quantile must lie in (0, 1), got {}", self.quantile);
        }
        if self.top_k == 0 || self.top_k > self.cohort.n_modalities {
            bail!("top_k must lie in 1..={}, got {}", self.cohort.n_modalities, self.top_k);
        }
        if self.permutations == 0 {
            bail!("permutations must be positive");
        }
        if self.sweep_seeds.len() < 2 {
            bail!("sweep_seeds needs at least two seeds");
        }
        Ok(())
    }

    /// The architecture applied to volumes of the given extents.
    pub fn arch_for(&self, extents: [usize; 3]) -> Result<ArchitectureConfig> {
        let arch = ArchitectureConfig { input_extents: extents, ..self.arch.clone() };
        arch.validate().with_context(|| format!("architecture on cohort extents {extents:?}"))?;
        Ok(arch)
    }

    /// Every setting as a config document that [`RunConfig::from_kv`]
    /// reads back to the same value.
    pub fn to_kv(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.push("out", self.out.display());
        doc.push("seed", self.seed);
        doc.push("cohort_seed", self.cohort_seed);
        for (k, v) in self.cohort.to_kv().entries() {
            doc.push(k, v);
        }
        doc.push_list("encoder_channels", &self.arch.encoder_channels);
        doc.push_list("decoder_channels", &self.arch.decoder_channels);
        doc.push("latent_dim", self.arch.latent_dim);
        doc.push("kernel", self.arch.kernel);
        doc.push("stride", self.arch.stride);
        doc.push("padding", self.arch.padding);
        for (k, v) in self.training.to_kv().entries() {
            if k != "seed" {
                doc.push(k, v);
            }
        }
        doc.push("svm_c", self.svm.c);
        doc.push("svm_iterations", self.svm.iterations);
        doc.push("tsne_perplexity", self.tsne.perplexity);
        doc.push("tsne_iterations", self.tsne.iterations);
        doc.push("tsne_learning_rate", self.tsne.learning_rate);
        doc.push("tsne_exaggeration", self.tsne.exaggeration);
        doc.push("quantile", self.quantile);
        doc.push("top_k", self.top_k);
        doc.push("permutations", self.permutations);
        doc.push_list("sweep_seeds", &self.sweep_seeds);
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_kv(&KvDocument::parse(text).unwrap(), &[])
    }

    #[test]
    fn empty_config_is_the_desk_default() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.cohort.n_subjects, 64);
        assert_eq!(cfg.training.folds, 10);
    }

    #[test]
    fn unknown_and_repeated_keys_are_rejected() {
        assert!(parse("latent_dims = 3").is_err());
        assert!(parse("seed = 1\nseed = 2").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "folds = 1",
            "validation_fraction = 1.5",
            "extents = 24 28",
            "effect_modalities = 1 99",
            "quantile = 1",
            "top_k = 13",
            "svm_c = 0",
            "tsne_perplexity = 0.5",
            "sweep_seeds = 4",
            "latent_dim = abc",
            "decoder_channels = 64 32 1",
        ] {
            assert!(parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn overrides_replace_file_values() {
        let doc = KvDocument::parse("seed = 3\nlatent_dim = 8").unwrap();
        let cfg = RunConfig::from_kv(&doc, &[("latent_dim", "32".into()), ("folds", "5".into())]).unwrap();
        assert_eq!(cfg.arch.latent_dim, 32);
        assert_eq!(cfg.training.folds, 5);
        assert_eq!((cfg.seed, cfg.cohort_seed, cfg.training.seed), (3, 3, 3));
    }

    #[test]
    fn extents_move_the_effect_site() {
        let cfg = parse("extents = 12 14 12").unwrap();
        assert_eq!(cfg.arch.input_extents, [12, 14, 12]);
        assert_eq!(cfg.cohort.effect_center, CohortSpec::desk().with_extents([12, 14, 12]).effect_center);
    }

    #[test]
    fn rendering_round_trips() {
        let cfg = parse("seed = 4\ncohort_seed = 9\nextents = 16 20 16\nstructural_modality = none\nepochs = 3").unwrap();
        assert_eq!(RunConfig::from_kv(&cfg.to_kv(), &[]).unwrap(), cfg);
    }
}
