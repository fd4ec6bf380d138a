use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mmvae_core::analysis::{
    cosine_similarity, cv_classification_embedded, dice, embed_dataset, group_difference_map, mean_std,
    modality_importance, permute_within_folds, train_linear_svm, voxelwise_group_difference, EmbeddingMatrix,
};
use mmvae_core::data::{generate_cohort, load_cohort, Cohort};
use mmvae_core::projection::{cluster_score_null, latent_points, modality_cluster_score, project_embeddings};
use mmvae_core::training::{
    cross_validate, stratified_kfold, summarize_sweep, train_fold, write_history, Fold, FoldSplit, TrainingConfig,
};
use mmvae_core::vae::{read_checkpoint, write_checkpoint, VaeParameters};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::svg;

// Distinct streams derived from the base seed for each permutation null.
const AUC_NULL_SALT: u64 = 0x6175_635f_6e75_6c6c;
const DIFFMAP_NULL_SALT: u64 = 0x6469_6666_5f6e_756c;
const CLUSTER_NULL_SALT: u64 = 0x636c_7573_5f6e_756c;

/// Where each command reads and writes under the output directory.
struct Paths {
    root: PathBuf,
}

impl Paths {
    fn new(cfg: &RunConfig) -> Self {
        Paths { root: cfg.out.clone() }
    }

    fn cohort(&self) -> PathBuf {
        self.root.join("cohort")
    }

    fn train(&self) -> PathBuf {
        self.root.join("train")
    }

    fn checkpoint(&self, k: usize) -> PathBuf {
        self.train().join(format!("fold{k}.ckpt"))
    }

    fn history(&self, k: usize) -> PathBuf {
        self.train().join(format!("fold{k}_history.tsv"))
    }

    fn split(&self) -> PathBuf {
        self.train().join("split.tsv")
    }

    fn failed(&self) -> PathBuf {
        self.train().join("FAILED")
    }

    fn stage(&self, name: &str) -> Result<PathBuf> {
        let dir = self.root.join(name);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load(paths: &Paths) -> Result<Cohort> {
    let dir = paths.cohort();
    load_cohort(&dir).with_context(|| format!("loading cohort from {} (run `synth` first)", dir.display()))
}

fn load_checkpoint(paths: &Paths, k: usize) -> Result<VaeParameters> {
    let p = paths.checkpoint(k);
    if !p.exists() {
        bail!("missing checkpoint {} (run `train` first)", p.display());
    }
    read_checkpoint(&p).with_context(|| format!("reading checkpoint {}", p.display()))
}

fn modality_name(m: usize) -> String {
    format!("m{m:02}")
}

/// Smallest value at or above which a `q` fraction of the sorted values lie.
fn upper_percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}

/// One-sided permutation p-value with the observed statistic counted once.
fn permutation_p(observed: f64, null: &[f64]) -> f64 {
    let hits = null.iter().filter(|&&v| v >= observed).count();
    (hits + 1) as f64 / (null.len() + 1) as f64
}

fn write_split(path: &Path, split: &FoldSplit, cohort: &Cohort) -> Result<()> {
    let mut out = String::from("fold\trole\tsubjects\n");
    for (k, fold) in split.folds.iter().enumerate() {
        for (role, idx) in [("train", &fold.train), ("validation", &fold.validation), ("test", &fold.test)] {
            let ids: Vec<&str> = idx.iter().map(|&i| cohort.subjects[i].id.as_str()).collect();
            let _ = writeln!(out, "{k}\t{role}\t{}", ids.join(","));
        }
    }
    write(path, out)
}

fn read_split(path: &Path, cohort: &Cohort) -> Result<FoldSplit> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {} (run `train` first)", path.display()))?;
    let index = |id: &str| -> Result<usize> {
        cohort
            .subjects
            .iter()
            .position(|s| s.id == id)
            .with_context(|| format!("split refers to unknown subject `{id}`"))
    };
    let mut folds: Vec<Fold> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            bail!("{}: line {} needs three columns", path.display(), n + 1);
        }
        let k: usize = cols[0].parse().with_context(|| format!("{}: bad fold index", path.display()))?;
        if k == folds.len() {
            folds.push(Fold { train: vec![], validation: vec![], test: vec![] });
        } else if k + 1 != folds.len() {
            bail!("{}: folds out of order at line {}", path.display(), n + 1);
        }
        let idx = cols[2].split(',').filter(|s| !s.is_empty()).map(index).collect::<Result<Vec<_>>>()?;
        let fold = folds.last_mut().unwrap();
        match cols[1] {
            "train" => fold.train = idx,
            "validation" => fold.validation = idx,
            "test" => fold.test = idx,
            other => bail!("{}: unknown role `{other}`", path.display()),
        }
    }
    if folds.len() < 2 {
        bail!("{} lists fewer than two folds", path.display());
    }
    Ok(FoldSplit { folds })
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let cohort = generate_cohort(&cfg.cohort, cfg.cohort_seed)?;
    let dir = paths.cohort();
    mmvae_core::data::save_cohort(&cohort, &dir).with_context(|| format!("writing cohort to {}", dir.display()))?;
    println!(
        "cohort: {} subjects x {} modalities, extents {:?}, effect modalities {:?}, seed {} -> {}",
        cohort.subjects.len(),
        cohort.n_modalities(),
        cohort.extents(),
        cohort.ground_truth(),
        cohort.seed,
        dir.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let cohort = load(&paths)?;
    let arch = cfg.arch_for(cohort.extents())?;
    let labels = cohort.labels();
    let split = stratified_kfold(&labels, cfg.training.folds, cfg.training.validation_fraction, cfg.seed)
        .context("splitting the cohort into folds")?;
    let dir = paths.stage("train")?;
    let _ = fs::remove_file(paths.failed());
    write_split(&paths.split(), &split, &cohort)?;
    write(&dir.join("config.txt"), cfg.to_kv().render())?;
    for (k, fold) in split.folds.iter().enumerate() {
        eprintln!(
            "fold {}/{}: {} train, {} validation subjects",
            k + 1,
            split.len(),
            fold.train.len(),
            fold.validation.len()
        );
        let outcome = match train_fold(&cohort, fold, k, &arch, &cfg.training) {
            Ok(o) => o,
            Err(e) => {
                let note = format!("training incomplete: fold {k} failed: {e}\nfolds 0..{k} finished\n");
                write(&paths.failed(), note)?;
                return Err(e).with_context(|| format!("training fold {k}"));
            }
        };
        write_checkpoint(&paths.checkpoint(k), &outcome.params)?;
        write_history(&paths.history(k), &outcome.history)?;
        let last = outcome.history.last().expect("history has the initial row");
        println!(
            "fold {k}: epochs {}, best epoch {}, train recon {:.3}, kl {:.3}{}",
            cfg.training.epochs,
            outcome.best_epoch,
            last.train.recon,
            last.train.kl,
            last.validation.map_or(String::new(), |v| format!(", validation total {:.3}", v.total))
        );
    }
    Ok(())
}

fn fold_embeddings(paths: &Paths, cohort: &Cohort, split: &FoldSplit) -> Result<Vec<EmbeddingMatrix>> {
    (0..split.len())
        .map(|k| {
            let params = load_checkpoint(paths, k)?;
            embed_dataset(&cohort.subjects, &params).with_context(|| format!("embedding with fold {k}"))
        })
        .collect()
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let cohort = load(&paths)?;
    let split = read_split(&paths.split(), &cohort)?;
    let labels = cohort.labels();
    let embeddings = fold_embeddings(&paths, &cohort, &split)?;
    let cls = cv_classification_embedded(&embeddings, &labels, &split, &cfg.svm)?;
    let null_labels = permute_within_folds(&labels, &split, cfg.seed ^ AUC_NULL_SALT);
    let null = cv_classification_embedded(&embeddings, &null_labels, &split, &cfg.svm)?;
    let dir = paths.stage("evaluate")?;

    let mut auc = String::from("fold\tauc\tpermuted_auc\n");
    for (k, (a, b)) in cls.fold_auc.iter().zip(&null.fold_auc).enumerate() {
        let _ = writeln!(auc, "{k}\t{a}\t{b}");
    }
    let _ = writeln!(auc, "mean\t{}\t{}", cls.mean_auc, null.mean_auc);
    let _ = writeln!(auc, "std\t{}\t{}", cls.std_auc, null.std_auc);
    write(&dir.join("auc.tsv"), auc)?;

    let n = cohort.n_modalities();
    let stats: Vec<(f64, f64)> = (0..n)
        .map(|m| mean_std(&cls.importance.iter().map(|r| r.values[m]).collect::<Vec<_>>()))
        .collect();
    let mut table = String::from("modality\tmean\tstd");
    for k in 0..split.len() {
        let _ = write!(table, "\tfold{k}");
    }
    table.push('\n');
    for (m, (mean, std)) in stats.iter().enumerate() {
        let _ = write!(table, "{m}\t{mean}\t{std}");
        for r in &cls.importance {
            let _ = write!(table, "\t{}", r.values[m]);
        }
        table.push('\n');
    }
    write(&dir.join("importance.tsv"), table)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| stats[b].0.total_cmp(&stats[a].0).then(a.cmp(&b)));
    order.truncate(10);
    order.reverse();
    let bars: Vec<(String, f64, f64)> = order.iter().map(|&m| (modality_name(m), stats[m].0, stats[m].1)).collect();
    let chart = svg::bar_chart("Modality importance (mean over folds, whiskers: std)", "importance", &bars);
    write(&dir.join("importance.svg"), chart)?;

    let fold_list: Vec<String> = cls.fold_auc.iter().map(|a| format!("{a:.4}")).collect();
    println!("fold AUC: {}", fold_list.join(" "));
    println!("mean AUC {:.4} (std {:.4}); permuted labels {:.4}", cls.mean_auc, cls.std_auc, null.mean_auc);
    let top: Vec<String> = order.iter().rev().take(cfg.top_k).map(|&m| modality_name(m)).collect();
    println!("most important modalities: {}", top.join(" "));
    Ok(())
}

pub fn diffmap(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let cohort = load(&paths)?;
    let split = read_split(&paths.split(), &cohort)?;
    let labels = cohort.labels();
    let params = load_checkpoint(&paths, 0)?;
    let emb = embed_dataset(&cohort.subjects, &params)?;

    // Modalities ranked by the fold-0 classifier.
    let fold = &split.folds[0];
    let fit: Vec<usize> = fold.train.iter().chain(&fold.validation).copied().collect();
    let fit_y: Vec<u8> = fit.iter().map(|&i| labels[i]).collect();
    let model = train_linear_svm(&emb.rows_f64(&fit), &fit_y, &cfg.svm)?;
    let top = modality_importance(&model, emb.n_modalities, emb.latent_dim)?.top(cfg.top_k);

    let vae = group_difference_map(&params, &emb, &labels, &top, cfg.quantile)?;
    let vox = voxelwise_group_difference(&cohort, &labels, &top, cfg.quantile)?;
    let dir = paths.stage("diffmap")?;
    vae.volume.write(&dir.join("vae.vvol"))?;
    vox.volume.write(&dir.join("voxel.vvol"))?;

    let mask = cohort.effect_mask();
    let observed = dice(&vae.support(), &mask);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DIFFMAP_NULL_SALT);
    let mut shuffled = labels.clone();
    let mut null = Vec::with_capacity(cfg.permutations);
    for _ in 0..cfg.permutations {
        shuffled.shuffle(&mut rng);
        let m = group_difference_map(&params, &emb, &shuffled, &top, cfg.quantile)?;
        null.push(dice(&m.support(), &mask));
    }
    let null95 = upper_percentile(&null, 0.95);
    let sum_raw = |maps: &[mmvae_core::data::Volume]| -> Vec<f32> {
        let mut acc = vec![0.0f32; maps[0].len()];
        for v in maps {
            acc.iter_mut().zip(v.values()).for_each(|(a, &b)| *a += b);
        }
        acc
    };
    let cosine = cosine_similarity(vae.volume.values(), vox.volume.values());
    let cosine_raw = cosine_similarity(&sum_raw(&vae.raw), &sum_raw(&vox.raw));

    let names: Vec<String> = top.iter().map(|&m| m.to_string()).collect();
    let mut s = String::new();
    let _ = writeln!(s, "modalities\t{}", names.join(","));
    let _ = writeln!(s, "quantile\t{}", cfg.quantile);
    let _ = writeln!(s, "vae_support\t{}", vae.support().iter().filter(|&&b| b).count());
    let _ = writeln!(s, "voxel_support\t{}", vox.support().iter().filter(|&&b| b).count());
    let _ = writeln!(s, "effect_site_voxels\t{}", mask.iter().filter(|&&b| b).count());
    let _ = writeln!(s, "cosine_thresholded\t{cosine}");
    let _ = writeln!(s, "cosine_unthresholded\t{cosine_raw}");
    let _ = writeln!(s, "dice_vae\t{observed}");
    let _ = writeln!(s, "dice_voxel\t{}", dice(&vox.support(), &mask));
    let _ = writeln!(s, "null_permutations\t{}", cfg.permutations);
    let _ = writeln!(s, "null_dice_p95\t{null95}");
    let _ = writeln!(s, "null_dice_p_value\t{}", permutation_p(observed, &null));
    write(&dir.join("summary.tsv"), s)?;

    println!("top modalities: {}", names.join(" "));
    println!(
        "effect-site Dice: VAE map {observed:.3}, voxelwise {:.3}; permutation null 95th percentile {null95:.3}",
        dice(&vox.support(), &mask)
    );
    println!("cosine similarity VAE vs voxelwise: {cosine:.3} thresholded, {cosine_raw:.3} unthresholded");
    Ok(())
}

pub fn project(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let cohort = load(&paths)?;
    let params = load_checkpoint(&paths, 0)?;
    let emb = embed_dataset(&cohort.subjects, &params)?;
    let result = project_embeddings(&emb, &cfg.tsne).context("t-SNE projection")?;
    let dir = paths.stage("project")?;

    let mut table = String::from("x\ty\tsubject\tmodality\n");
    for (c, p) in result.layout.coords.iter().zip(&result.points) {
        let _ = writeln!(table, "{}\t{}\t{}\t{}", c[0], c[1], p.subject, p.modality);
    }
    write(&dir.join("projection.tsv"), table)?;
    let pts: Vec<(f64, f64, usize)> =
        result.layout.coords.iter().zip(&result.points).map(|(c, p)| (c[0], c[1], p.modality)).collect();
    let names: Vec<String> = (0..cohort.n_modalities()).map(modality_name).collect();
    write(&dir.join("projection.svg"), svg::scatter("t-SNE of latent means by modality", &pts, &names))?;

    let (points, labels) = latent_points(&emb);
    let mods: Vec<usize> = labels.iter().map(|l| l.modality).collect();
    let score = modality_cluster_score(&points, &mods)?;
    let null = cluster_score_null(&points, &mods, cfg.permutations, cfg.seed ^ CLUSTER_NULL_SALT)?;
    let null95 = upper_percentile(&null, 0.95);
    let projected = modality_cluster_score(&result.coordinates(), &mods)?;

    let mut s = String::new();
    let _ = writeln!(s, "points\t{}", points.len());
    let _ = writeln!(s, "silhouette_latent\t{}", score.score);
    let _ = writeln!(s, "silhouette_projection\t{}", projected.score);
    let _ = writeln!(s, "null_permutations\t{}", cfg.permutations);
    let _ = writeln!(s, "null_silhouette_p95\t{null95}");
    let _ = writeln!(s, "null_silhouette_p_value\t{}", permutation_p(score.score, &null));
    let _ = writeln!(s, "tsne_initial_kl\t{}", result.layout.initial_objective);
    let _ = writeln!(s, "tsne_final_kl\t{}", result.layout.objective);
    let _ = writeln!(s, "jittered\t{}", result.jittered);
    write(&dir.join("summary.tsv"), s)?;

    println!("{} points projected, final KL {:.4}", points.len(), result.layout.objective);
    println!(
        "silhouette by modality: latent {:.4} (shuffled-label 95th percentile {null95:.4}), projection {:.4}",
        score.score, projected.score
    );
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let cohort = load(&paths)?;
    let arch = cfg.arch_for(cohort.extents())?;
    let mut rows = Vec::new();
    for &seed in &cfg.sweep_seeds {
        eprintln!("seed {seed}: {}-fold cross-validation", cfg.training.folds);
        let run = cross_validate(&cohort, &arch, &TrainingConfig { seed, ..cfg.training.clone() }, &cfg.svm)
            .with_context(|| format!("seed {seed}"))?;
        println!("seed {seed}: mean AUC {:.4}", run.classification.mean_auc);
        rows.push((seed, run.classification.mean_auc, run.classification.std_auc));
    }
    let report = summarize_sweep(&cfg.sweep_seeds, rows.iter().map(|r| r.1).collect())?;
    let dir = paths.stage("sweep")?;
    let mut t = String::from("seed\tmean_auc\tfold_std\n");
    for (seed, mean, std) in &rows {
        let _ = writeln!(t, "{seed}\t{mean}\t{std}");
    }
    let _ = writeln!(t, "mean\t{}\t", report.mean);
    let _ = writeln!(t, "std\t{}\t", report.std);
    write(&dir.join("sweep.tsv"), t)?;
    println!("AUC over {} seeds: mean {:.4}, std {:.4}", report.seeds.len(), report.mean, report.std);
    Ok(())
}
