use super::volume::{gaussian_smooth, maxabs_scale, Volume};
use crate::error::{Error, Result};
use crate::kv::{parse_list, KvDocument};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Hc,
    Sz,
}

impl Group {
    /// Binary label with SZ as the positive class.
    pub fn label(self) -> u8 {
        match self {
            Group::Hc => 0,
            Group::Sz => 1,
        }
    }

    pub fn from_label(label: u8) -> Self {
        if label == 0 {
            Group::Hc
        } else {
            Group::Sz
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Hc => "HC",
            Group::Sz => "SZ",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "HC" => Ok(Group::Hc),
            "SZ" => Ok(Group::Sz),
            other => Err(Error::Format(format!("unknown group `{other}` (expected HC or SZ)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub group: Group,
    pub volumes: Vec<Volume>,
}

/// Generator parameters.
///
/// Every modality except `structural_modality` is a sum of one or two
/// smoothed Gaussian bumps; the structural one is an ellipsoidal whole-volume
/// pattern. Each effect modality has a secondary bump on the effect site.
/// Subjects scale each template by a random gain and add smooth and white
/// noise. SZ subjects additionally get `-effect_size` times a Gaussian of
/// width `effect_sigma` centred on `effect_center` in every effect modality,
/// i.e. a local loss of amplitude inside those networks.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub n_modalities: usize,
    pub extents: [usize; 3],
    pub effect_modalities: Vec<usize>,
    pub effect_size: f32,
    /// Voxel coordinates (z, y, x) of the effect site.
    pub effect_center: [f32; 3],
    pub effect_sigma: f32,
    pub sz_fraction: f32,
    pub structural_modality: Option<usize>,
    pub gain_sd: f32,
    pub smooth_noise_sd: f32,
    pub noise_sd: f32,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl CohortSpec {
    pub fn desk() -> Self {
        let extents = [24, 28, 24];
        Self {
            n_subjects: 64,
            n_modalities: 12,
            extents,
            effect_modalities: vec![1, 4, 7],
            effect_size: 0.5,
            effect_center: default_center(extents),
            effect_sigma: 3.0,
            sz_fraction: 0.5,
            structural_modality: Some(11),
            gain_sd: 0.15,
            smooth_noise_sd: 0.05,
            noise_sd: 0.02,
        }
    }

    /// Same settings on a different grid, with the effect site moved to the
    /// matching relative position.
    pub fn with_extents(self, extents: [usize; 3]) -> Self {
        Self { extents, effect_center: default_center(extents), ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_subjects < 4 {
            return bad(format!("n_subjects must be at least 4, got {}", self.n_subjects));
        }
        if self.n_modalities < 2 {
            return bad(format!("n_modalities must be at least 2, got {}", self.n_modalities));
        }
        if self.extents.iter().any(|&e| e == 0) {
            return bad(format!("extents {:?} must be positive", self.extents));
        }
        if self.effect_modalities.is_empty() {
            return bad("effect_modalities must not be empty".into());
        }
        if let Some(&m) = self.effect_modalities.iter().find(|&&m| m >= self.n_modalities) {
            return bad(format!("effect modality {m} is outside 0..{}", self.n_modalities));
        }
        let mut sorted = self.effect_modalities.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.effect_modalities.len() {
            return bad("effect_modalities contains duplicates".into());
        }
        if !(self.effect_size >= 0.0) || !self.effect_size.is_finite() {
            return bad(format!("effect_size must be non-negative, got {}", self.effect_size));
        }
        if !(self.effect_sigma > 0.0) {
            return bad("effect_sigma must be positive".into());
        }
        let outside = self
            .effect_center
            .iter()
            .zip(self.extents)
            .any(|(&c, e)| !(c >= 0.0 && c <= (e - 1) as f32));
        if outside {
            return bad(format!("effect_center {:?} lies outside extents {:?}", self.effect_center, self.extents));
        }
        if let Some(s) = self.structural_modality {
            if s >= self.n_modalities {
                return bad(format!("structural modality {s} is outside 0..{}", self.n_modalities));
            }
        }
        let n_sz = self.n_sz();
        if n_sz == 0 || n_sz == self.n_subjects {
            return bad(format!("sz_fraction {} leaves one group empty", self.sz_fraction));
        }
        for (name, v) in [("gain_sd", self.gain_sd), ("smooth_noise_sd", self.smooth_noise_sd), ("noise_sd", self.noise_sd)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }

    pub fn n_sz(&self) -> usize {
        (self.n_subjects as f32 * self.sz_fraction).round() as usize
    }

    /// Unnormalised effect kernel in [0, 1], peaking at the effect site.
    pub fn effect_kernel(&self) -> Volume {
        gaussian_blob(self.extents, self.effect_center, self.effect_sigma)
    }

    /// Ground-truth effect site: voxels where the kernel is at least half its peak.
    pub fn effect_mask(&self) -> Vec<bool> {
        self.effect_kernel().values().iter().map(|&k| k >= 0.5).collect()
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.push("n_subjects", self.n_subjects);
        doc.push("n_modalities", self.n_modalities);
        doc.push_list("extents", &self.extents);
        doc.push_list("effect_modalities", &self.effect_modalities);
        doc.push("effect_size", self.effect_size);
        doc.push_list("effect_center", &self.effect_center);
        doc.push("effect_sigma", self.effect_sigma);
        doc.push("sz_fraction", self.sz_fraction);
        doc.push(
            "structural_modality",
            self.structural_modality.map_or("none".to_string(), |s| s.to_string()),
        );
        doc.push("gain_sd", self.gain_sd);
        doc.push("smooth_noise_sd", self.smooth_noise_sd);
        doc.push("noise_sd", self.noise_sd);
        doc
    }

    pub fn from_kv(doc: &KvDocument) -> Result<Self> {
        let three = |key: &str| -> Result<Vec<f32>> {
            let v: Vec<f32> = doc.parse_list(key)?;
            if v.len() != 3 {
                return Err(Error::Config(format!("`{key}` needs exactly three values")));
            }
            Ok(v)
        };
        let ext = three("extents")?;
        let center = three("effect_center")?;
        let structural = match doc.require("structural_modality")? {
            "none" => None,
            s => Some(crate::kv::parse_scalar("structural_modality", s)?),
        };
        let spec = Self {
            n_subjects: doc.parse_value("n_subjects")?,
            n_modalities: doc.parse_value("n_modalities")?,
            extents: [ext[0] as usize, ext[1] as usize, ext[2] as usize],
            effect_modalities: doc.parse_list("effect_modalities")?,
            effect_size: doc.parse_value("effect_size")?,
            effect_center: [center[0], center[1], center[2]],
            effect_sigma: doc.parse_value("effect_sigma")?,
            sz_fraction: doc.parse_value("sz_fraction")?,
            structural_modality: structural,
            gain_sd: doc.parse_value("gain_sd")?,
            smooth_noise_sd: doc.parse_value("smooth_noise_sd")?,
            noise_sd: doc.parse_value("noise_sd")?,
        };
        Ok(spec)
    }
}

/// Slightly off-centre site so it does not coincide with the grid midpoint.
pub(crate) fn default_center(extents: [usize; 3]) -> [f32; 3] {
    [extents[0] as f32 * 0.5, extents[1] as f32 * 0.6, extents[2] as f32 * 0.4]
}

fn gaussian_blob(extents: [usize; 3], center: [f32; 3], sigma: f32) -> Volume {
    let [d, h, w] = extents;
    let mut values = Vec::with_capacity(d * h * w);
    let s2 = 2.0 * sigma * sigma;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let r2 = (z as f32 - center[0]).powi(2)
                    + (y as f32 - center[1]).powi(2)
                    + (x as f32 - center[2]).powi(2);
                values.push((-r2 / s2).exp());
            }
        }
    }
    Volume::new(extents, values).expect("extents are positive")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub spec: CohortSpec,
    pub seed: u64,
    pub subjects: Vec<Subject>,
}

impl Cohort {
    pub fn n_modalities(&self) -> usize {
        self.spec.n_modalities
    }

    pub fn extents(&self) -> [usize; 3] {
        self.spec.extents
    }

    pub fn ground_truth(&self) -> &[usize] {
        &self.spec.effect_modalities
    }

    pub fn labels(&self) -> Vec<u8> {
        self.subjects.iter().map(|s| s.group.label()).collect()
    }

    pub fn effect_mask(&self) -> Vec<bool> {
        self.spec.effect_mask()
    }

    /// Checks the structural invariants of a (possibly loaded) cohort.
    pub fn validate(&self) -> Result<()> {
        let n = self.spec.n_modalities;
        for s in &self.subjects {
            if s.volumes.len() != n {
                return Err(Error::Format(format!(
                    "subject {} has {} volumes, expected {n}",
                    s.id,
                    s.volumes.len()
                )));
            }
            if let Some(v) = s.volumes.iter().find(|v| v.extents() != self.spec.extents) {
                return Err(Error::Format(format!(
                    "subject {} has a volume with extents {:?}, expected {:?}",
                    s.id,
                    v.extents(),
                    self.spec.extents
                )));
            }
        }
        let sz = self.subjects.iter().filter(|s| s.group == Group::Sz).count();
        if sz == 0 || sz == self.subjects.len() {
            return Err(Error::Format("cohort labels are degenerate (one group only)".into()));
        }
        Ok(())
    }
}

fn templates(spec: &CohortSpec, rng: &mut ChaCha8Rng) -> Vec<Volume> {
    let ext = spec.extents;
    (0..spec.n_modalities)
        .map(|m| {
            if spec.structural_modality == Some(m) {
                return structural_template(ext, rng);
            }
            let effect = spec.effect_modalities.contains(&m);
            let bumps = if effect { 2 } else { rng.gen_range(1..=2) };
            let mut acc = Volume::zeros(ext);
            for b in 0..bumps {
                let mut center = [0, 1, 2].map(|a| ext[a] as f32 * rng.gen_range(0.2..0.8));
                let mut sigma = rng.gen_range(1.5..3.0) * ext.iter().copied().min().unwrap() as f32 / 24.0;
                let mut amp = if b == 0 { 1.0 } else { rng.gen_range(0.5..0.9) };
                // Effect networks carry a secondary lobe on the effect site;
                // the primary lobe elsewhere keeps setting the volume's
                // maximum, so scaling does not undo the group offset.
                if b == 1 && effect {
                    center = spec.effect_center;
                    sigma = spec.effect_sigma * rng.gen_range(1.0..1.3);
                    amp = 0.7;
                }
                let blob = gaussian_blob(ext, center, sigma);
                acc.values_mut().iter_mut().zip(blob.values()).for_each(|(a, v)| *a += amp * v);
            }
            let smooth = gaussian_smooth(&acc, 0.7);
            maxabs_scale(&smooth)
        })
        .collect()
}

/// Ellipsoidal "brain" with a smooth random texture.
fn structural_template(ext: [usize; 3], rng: &mut ChaCha8Rng) -> Volume {
    let noise: Vec<f32> = (0..ext.iter().product::<usize>()).map(|_| rng.sample(StandardNormal)).collect();
    let texture = maxabs_scale(&gaussian_smooth(&Volume::new(ext, noise).unwrap(), 1.5));
    let mut out = Volume::zeros(ext);
    let [d, h, w] = ext;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let r = [(z, d), (y, h), (x, w)]
                    .iter()
                    .map(|&(p, n)| ((p as f32 + 0.5) / n as f32 - 0.5) / 0.42)
                    .map(|u| u * u)
                    .sum::<f32>();
                if r <= 1.0 {
                    let i = out.index(z, y, x);
                    out.values_mut()[i] = 0.6 + 0.3 * texture.values()[i];
                }
            }
        }
    }
    gaussian_smooth(&out, 0.7)
}

/// Pure function of `(spec, seed)`. The random draws of a subject do not
/// depend on its group, so with the effect removed both groups are
/// identically distributed.
pub fn generate_cohort(spec: &CohortSpec, seed: u64) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates = templates(spec, &mut rng);

    let n = spec.n_subjects;
    let mut groups: Vec<Group> = (0..n).map(|i| if i < spec.n_sz() { Group::Sz } else { Group::Hc }).collect();
    groups.shuffle(&mut rng);

    let kernel = spec.effect_kernel();
    let subjects = groups
        .iter()
        .enumerate()
        .map(|(j, &group)| {
            let mut srng = ChaCha8Rng::seed_from_u64(seed);
            srng.set_stream(j as u64 + 1);
            let volumes = templates
                .iter()
                .enumerate()
                .map(|(m, t)| {
                    let gain = 1.0 + spec.gain_sd * srng.sample::<f32, _>(StandardNormal);
                    let raw: Vec<f32> = (0..t.len()).map(|_| srng.sample(StandardNormal)).collect();
                    let smooth = gaussian_smooth(&Volume::new(t.extents(), raw).unwrap(), 1.5);
                    let sd = (smooth.values().iter().map(|v| (*v as f64).powi(2)).sum::<f64>()
                        / smooth.len() as f64)
                        .sqrt()
                        .max(1e-12) as f32;
                    let affected = group == Group::Sz && spec.effect_modalities.contains(&m);
                    let values = t
                        .values()
                        .iter()
                        .zip(smooth.values())
                        .zip(kernel.values())
                        .map(|((&tv, &sv), &kv)| {
                            let white: f32 = srng.sample(StandardNormal);
                            let mut v = gain * tv + spec.smooth_noise_sd * sv / sd + spec.noise_sd * white;
                            if affected {
                                v -= spec.effect_size * kv;
                            }
                            v
                        })
                        .collect();
                    Volume::new(t.extents(), values).unwrap()
                })
                .collect();
            Subject { id: format!("sub-{j:03}"), group, volumes }
        })
        .collect();
    Ok(Cohort { spec: spec.clone(), seed, subjects })
}

/// The `n` scaled volumes of one subject, in modality order.
#[derive(Clone, Debug)]
pub struct SubjectBatch {
    pub volumes: Vec<Tensor>,
}

impl SubjectBatch {
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
}

pub fn subject_batch(subject: &Subject, n_modalities: usize) -> Result<SubjectBatch> {
    if subject.volumes.len() != n_modalities {
        return Err(Error::InvalidArgument(format!(
            "subject {} has {} of {n_modalities} modalities",
            subject.id,
            subject.volumes.len()
        )));
    }
    Ok(SubjectBatch { volumes: subject.volumes.iter().map(|v| maxabs_scale(v).to_tensor()).collect() })
}

const MANIFEST: &str = "manifest.txt";

/// Writes `manifest.txt` plus one `.vvol` file per subject and modality.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("volumes"))?;
    let mut doc = KvDocument::new();
    doc.push("seed", cohort.seed);
    for (k, v) in cohort.spec.to_kv().entries() {
        doc.push(k, v);
    }
    for s in &cohort.subjects {
        let mut line = format!("{} {}", s.id, s.group.as_str());
        for (m, v) in s.volumes.iter().enumerate() {
            let rel = format!("volumes/{}_m{m:02}.vvol", s.id);
            v.write(&dir.join(&rel))?;
            line.push(' ');
            line.push_str(&rel);
        }
        doc.push("subject", line);
    }
    std::fs::write(dir.join(MANIFEST), doc.render())?;
    Ok(())
}

pub fn load_cohort(dir: &Path) -> Result<Cohort> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))?;
    let doc = KvDocument::parse(&text)?;
    let seed = doc.parse_value("seed")?;
    let spec = CohortSpec::from_kv(&doc)?;
    let mut subjects = Vec::new();
    for line in doc.get_all("subject") {
        let parts: Vec<String> = parse_list("subject", line)?;
        if parts.len() < 2 {
            return Err(Error::Format(format!("subject line `{line}` needs an id and a group")));
        }
        let volumes = parts[2..]
            .iter()
            .map(|p| Volume::read(&dir.join(p)))
            .collect::<Result<Vec<_>>>()?;
        subjects.push(Subject { id: parts[0].clone(), group: Group::parse(&parts[1])?, volumes });
    }
    if subjects.len() != spec.n_subjects {
        return Err(Error::Format(format!(
            "manifest lists {} subjects, header says {}",
            subjects.len(),
            spec.n_subjects
        )));
    }
    let cohort = Cohort { spec, seed, subjects };
    cohort.validate()?;
    Ok(cohort)
}
