//! Empirical entropy, diversity-controlled glyph datasets and the experiment
//! that tracks the negative β-ELBO while the dataset's diversity is raised and
//! then lowered.

use std::collections::HashMap;
use std::fs::File;
use std::hash::Hash;
use std::io::{self, BufReader, Read};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image, ImageShape};
use crate::nn::AdamConfig;
use crate::scalar::{derive_seed, Scalar};
use crate::vae::{kl_to_unit_gaussian, ElboReport, VaeConfig, VaeError, VaeModel, VaeOptimizer};

pub const GLYPH_CLASSES: usize = 16;
pub const GLYPH_SIDE: usize = 16;
pub const GLYPH_SHAPE: ImageShape = ImageShape::new(1, GLYPH_SIDE, GLYPH_SIDE);

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DiversityError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed IDX file: {0}")]
    Format(String),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Entropy in nats of the empirical distribution induced by `items`.
pub fn empirical_entropy<K, I>(items: I) -> Result<f64, DiversityError>
where
    K: Hash + Eq,
    I: IntoIterator<Item = K>,
{
    let mut counts: HashMap<K, usize> = HashMap::new();
    let mut n = 0usize;
    for item in items {
        *counts.entry(item).or_insert(0) += 1;
        n += 1;
    }
    if n == 0 {
        return Err(DiversityError::EmptyInput);
    }
    let n = n as f64;
    // sort for a summation order independent of hashing
    let mut probs: Vec<f64> = counts.values().map(|&c| c as f64 / n).collect();
    probs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(-probs.iter().map(|p| p * p.ln()).sum::<f64>())
}

/// Entropy of a set of images, treating bitwise-identical images as one value.
pub fn image_entropy<T: Scalar>(images: &[Image<T>]) -> Result<f64, DiversityError> {
    empirical_entropy(images.iter().map(Image::key))
}

pub fn distinct_images<T: Scalar>(images: &[Image<T>]) -> usize {
    let mut keys: Vec<Vec<u64>> = images.iter().map(Image::key).collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

fn fill(img: &mut [bool], rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) {
    for r in rows {
        for c in cols.clone() {
            img[r * GLYPH_SIDE + c] = true;
        }
    }
}

/// Procedural 16×16 prototype for `class` in `0..16`: bars, crosses, corners
/// and blocks.
pub fn glyph_prototype<T: Scalar>(class: usize) -> Image<T> {
    assert!(class < GLYPH_CLASSES, "glyph class {class} out of range");
    let mut on = vec![false; GLYPH_SIDE * GLYPH_SIDE];
    match class {
        0 => fill(&mut on, 7..9, 2..14),
        1 => fill(&mut on, 2..14, 7..9),
        2 => {
            fill(&mut on, 7..9, 2..14);
            fill(&mut on, 2..14, 7..9);
        }
        3 => {
            for i in 2..14 {
                fill(&mut on, i..i + 1, i..i + 1);
                fill(&mut on, i..i + 1, 15 - i..16 - i);
            }
        }
        4 => {
            fill(&mut on, 2..4, 2..14);
            fill(&mut on, 2..14, 2..4);
        }
        5 => {
            fill(&mut on, 2..4, 2..14);
            fill(&mut on, 2..14, 12..14);
        }
        6 => {
            fill(&mut on, 12..14, 2..14);
            fill(&mut on, 2..14, 2..4);
        }
        7 => {
            fill(&mut on, 12..14, 2..14);
            fill(&mut on, 2..14, 12..14);
        }
        8 => fill(&mut on, 2..8, 2..8),
        9 => fill(&mut on, 2..8, 8..14),
        10 => fill(&mut on, 8..14, 2..8),
        11 => fill(&mut on, 8..14, 8..14),
        12 => {
            fill(&mut on, 2..4, 2..14);
            fill(&mut on, 12..14, 2..14);
            fill(&mut on, 2..14, 2..4);
            fill(&mut on, 2..14, 12..14);
        }
        13 => fill(&mut on, 5..11, 5..11),
        14 => {
            fill(&mut on, 3..5, 2..14);
            fill(&mut on, 11..13, 2..14);
        }
        _ => {
            fill(&mut on, 2..14, 3..5);
            fill(&mut on, 2..14, 11..13);
        }
    }
    Image::from_pixels(
        GLYPH_SHAPE,
        on.into_iter()
            .map(|b| if b { T::one() } else { T::zero() })
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct GlyphDataset<T> {
    pub images: Vec<Image<T>>,
    /// `None` marks a blank padding image.
    pub labels: Vec<Option<usize>>,
    pub class_count: usize,
}

impl<T: Scalar> GlyphDataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn pixel_slices(&self) -> Vec<&[T]> {
        self.images.iter().map(|i| i.pixels()).collect()
    }
}

fn flip_noise<T: Scalar, R: Rng + ?Sized>(img: &mut Image<T>, noise_prob: f64, rng: &mut R) {
    if noise_prob <= 0.0 {
        return;
    }
    for p in img.pixels_mut() {
        if rng.random::<f64>() < noise_prob {
            *p = T::one() - *p;
        }
    }
}

/// `per_class` copies of every glyph in `class_set` and `per_class` blank
/// images for every class left out, so the size is always `16 · per_class`.
/// Each pixel is flipped independently with probability `noise_prob`.
pub fn make_glyph_dataset<T: Scalar>(
    class_set: &[usize],
    per_class: usize,
    noise_prob: f64,
    seed: u64,
) -> Result<GlyphDataset<T>, DiversityError> {
    if per_class < 1 {
        return Err(DiversityError::InvalidArgument("per_class must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&noise_prob) {
        return Err(DiversityError::InvalidArgument(format!(
            "noise_prob must lie in [0, 1], got {noise_prob}"
        )));
    }
    if let Some(&bad) = class_set.iter().find(|&&c| c >= GLYPH_CLASSES) {
        return Err(DiversityError::InvalidArgument(format!(
            "glyph class {bad} outside 0..{GLYPH_CLASSES}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(GLYPH_CLASSES * per_class);
    let mut labels = Vec::with_capacity(GLYPH_CLASSES * per_class);
    let mut included = [false; GLYPH_CLASSES];
    for &c in class_set {
        included[c] = true;
    }
    for (class, &present) in included.iter().enumerate() {
        for _ in 0..per_class {
            let mut img = if present {
                glyph_prototype(class)
            } else {
                Image::zeros(GLYPH_SHAPE)
            };
            flip_noise(&mut img, noise_prob, &mut rng);
            images.push(img);
            labels.push(present.then_some(class));
        }
    }
    Ok(GlyphDataset {
        images,
        labels,
        class_count: included.iter().filter(|&&p| p).count(),
    })
}

/// Ordered stages of class sets; stage `i` starts at `i · epochs_per_stage`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversitySchedule {
    pub stages: Vec<(usize, Vec<usize>)>,
    pub epochs_per_stage: usize,
}

impl DiversitySchedule {
    pub fn new(stages: Vec<(usize, Vec<usize>)>, epochs_per_stage: usize) -> Result<Self, DiversityError> {
        if stages.is_empty() {
            return Err(DiversityError::InvalidArgument("schedule needs a stage".into()));
        }
        if epochs_per_stage == 0 {
            return Err(DiversityError::InvalidArgument("epochs_per_stage must be >= 1".into()));
        }
        if stages[0].0 != 0 {
            return Err(DiversityError::InvalidArgument("first stage must start at epoch 0".into()));
        }
        if stages.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(DiversityError::InvalidArgument(
                "stage start epochs must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            stages,
            epochs_per_stage,
        })
    }

    /// One stage per class set, evenly spaced.
    pub fn uniform(class_sets: Vec<Vec<usize>>, epochs_per_stage: usize) -> Result<Self, DiversityError> {
        let stages = class_sets
            .into_iter()
            .enumerate()
            .map(|(i, s)| (i * epochs_per_stage, s))
            .collect();
        Self::new(stages, epochs_per_stage)
    }

    /// Prefix class sets `{0..k}` grown from `low` to `high` classes one at a
    /// time, then shrunk back to `low`.
    pub fn add_then_remove(low: usize, high: usize, epochs_per_stage: usize) -> Result<Self, DiversityError> {
        if low < 1 || high < low || high > GLYPH_CLASSES {
            return Err(DiversityError::InvalidArgument(format!(
                "need 1 <= low <= high <= {GLYPH_CLASSES}, got {low}..{high}"
            )));
        }
        let counts = (low..=high).chain((low..high).rev());
        Self::uniform(counts.map(|k| (0..k).collect()).collect(), epochs_per_stage)
    }

    /// Stage active at `epoch`.
    pub fn stage_at(&self, epoch: usize) -> usize {
        self.stages
            .iter()
            .rposition(|(start, _)| *start <= epoch)
            .unwrap_or(0)
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.last().unwrap().0 + self.epochs_per_stage
    }
}

/// Knobs of the diversity experiment other than the VAE and the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiversityConfig {
    /// Stage class counts `k`; stage uses classes `0..k`.
    pub class_counts: Vec<usize>,
    pub epochs_per_stage: usize,
    pub steps_per_epoch: usize,
    pub per_class: usize,
    pub noise_prob: f64,
    pub seeds: Vec<u64>,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            class_counts: (2..=10).chain((2..10).rev()).collect(),
            epochs_per_stage: 20,
            steps_per_epoch: 50,
            per_class: 4,
            noise_prob: 0.05,
            seeds: (0..6).collect(),
        }
    }
}

impl DiversityConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.class_counts.is_empty() {
            return Err("class_counts must not be empty".into());
        }
        if let Some(k) = self.class_counts.iter().find(|&&k| k > GLYPH_CLASSES) {
            return Err(format!("class count {k} exceeds {GLYPH_CLASSES}"));
        }
        if self.epochs_per_stage == 0 || self.steps_per_epoch == 0 || self.per_class == 0 {
            return Err("epochs_per_stage, steps_per_epoch and per_class must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise_prob) {
            return Err("noise_prob must lie in [0, 1]".into());
        }
        if self.seeds.is_empty() {
            return Err("at least one seed is required".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiversitySchedule, DiversityError> {
        DiversitySchedule::uniform(
            self.class_counts.iter().map(|&k| (0..k).collect()).collect(),
            self.epochs_per_stage,
        )
    }
}

/// Converged values of one (stage, seed) pair, in nats per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub stage: usize,
    pub class_count: usize,
    pub seed: u64,
    pub neg_beta_elbo: f64,
    pub kl_term: f64,
    pub recon_nll: f64,
}

/// Mean of the last 10% (at least one) of `reports`.
pub fn converged<T: Scalar>(reports: &[ElboReport<T>]) -> (f64, f64, f64) {
    assert!(!reports.is_empty());
    let tail = (reports.len() / 10).max(1);
    let window = &reports[reports.len() - tail..];
    let n = window.len() as f64;
    let mean = |f: fn(&ElboReport<T>) -> T| window.iter().map(|r| f(r).as_f64()).sum::<f64>() / n;
    (
        mean(|r| r.neg_beta_elbo),
        mean(|r| r.kl_term),
        mean(|r| r.recon_nll),
    )
}

fn run_single_seed<T: Scalar>(
    schedule: &DiversitySchedule,
    vae_config: &VaeConfig,
    params: &DiversityConfig,
    seed: u64,
) -> Result<Vec<DiversityRow>, DiversityError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xD1]));
    let mut model: VaeModel<T> = VaeModel::new(vae_config, GLYPH_SHAPE, &mut rng)?;
    let mut opt = VaeOptimizer::new(&model, AdamConfig::with_learning_rate(vae_config.learning_rate));
    let mut rows = Vec::with_capacity(schedule.stages.len());
    for (stage, (start, classes)) in schedule.stages.iter().enumerate() {
        let end = schedule
            .stages
            .get(stage + 1)
            .map_or(start + schedule.epochs_per_stage, |s| s.0);
        let train: GlyphDataset<T> = make_glyph_dataset(
            classes,
            params.per_class,
            params.noise_prob,
            derive_seed(seed, &[1, stage as u64]),
        )?;
        let test: GlyphDataset<T> = make_glyph_dataset(
            classes,
            params.per_class,
            params.noise_prob,
            derive_seed(seed, &[2, stage as u64]),
        )?;
        let train_px = train.pixel_slices();
        let test_px = test.pixel_slices();
        let mut evals = Vec::with_capacity(end - start);
        for _ in *start..end {
            model.fit(&train_px, params.steps_per_epoch, vae_config.batch_size, &mut opt, &mut rng)?;
            evals.push(model.evaluate_elbo(&test_px, vae_config.eval_mc_samples, &mut rng)?);
        }
        let (neg, kl, rec) = converged(&evals);
        rows.push(DiversityRow {
            stage,
            class_count: train.class_count,
            seed,
            neg_beta_elbo: neg,
            kl_term: kl,
            recon_nll: rec,
        });
    }
    Ok(rows)
}

/// Trains one VAE per seed through every stage (continuing across stages)
/// and records the converged test-set report of each stage. Seeds run in
/// parallel; rows come back ordered by seed then stage.
pub fn run_diversity_experiment<T: Scalar>(
    schedule: &DiversitySchedule,
    vae_config: &VaeConfig,
    params: &DiversityConfig,
    seeds: &[u64],
) -> Result<Vec<DiversityRow>, DiversityError> {
    if seeds.is_empty() {
        return Err(DiversityError::InvalidArgument("at least one seed is required".into()));
    }
    let per_seed: Vec<Result<Vec<DiversityRow>, DiversityError>> = seeds
        .par_iter()
        .map(|&s| run_single_seed::<T>(schedule, vae_config, params, s))
        .collect();
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Seed-mean of each stage: `(stage, class_count, neg_elbo, kl, recon_nll)`
/// plus the per-stage standard deviation of the negative ELBO.
pub fn stage_means(rows: &[DiversityRow]) -> Vec<(usize, usize, f64, f64, f64, f64)> {
    let stages = rows.iter().map(|r| r.stage).max().map_or(0, |m| m + 1);
    (0..stages)
        .filter_map(|s| {
            let group: Vec<&DiversityRow> = rows.iter().filter(|r| r.stage == s).collect();
            if group.is_empty() {
                return None;
            }
            let n = group.len() as f64;
            let neg = group.iter().map(|r| r.neg_beta_elbo).sum::<f64>() / n;
            let kl = group.iter().map(|r| r.kl_term).sum::<f64>() / n;
            let rec = group.iter().map(|r| r.recon_nll).sum::<f64>() / n;
            let var = group.iter().map(|r| (r.neg_beta_elbo - neg).powi(2)).sum::<f64>() / n;
            Some((s, group[0].class_count, neg, kl, rec, var.sqrt()))
        })
        .collect()
}

pub fn write_diversity_csv(path: &Path, rows: &[DiversityRow]) -> Result<(), DiversityError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stage", "class_count", "seed", "neg_beta_elbo", "kl_term", "recon_nll"])?;
    for r in rows {
        w.write_record([
            r.stage.to_string(),
            r.class_count.to_string(),
            r.seed.to_string(),
            r.neg_beta_elbo.to_string(),
            r.kl_term.to_string(),
            r.recon_nll.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean KL of the encoder posterior to the unit Gaussian over `images`, the
/// variational upper bound on the mutual information between data and latent.
pub fn mi_upper_bound<T: Scalar>(model: &VaeModel<T>, images: &[&[T]]) -> Result<T, DiversityError> {
    if images.is_empty() {
        return Err(DiversityError::EmptyInput);
    }
    let mut sum = T::zero();
    for x in images {
        sum += kl_to_unit_gaussian(&model.encode(x)?);
    }
    Ok(sum / T::c(images.len() as f64))
}

fn read_be_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

/// Reads an IDX image file (magic `0x00000803`) into single-channel images
/// scaled to `[0, 1]`.
pub fn read_idx_images<T: Scalar, R: Read>(mut r: R) -> Result<Vec<Image<T>>, DiversityError> {
    let magic = read_be_u32(&mut r)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DiversityError::Format(format!("expected magic 0x803, got {magic:#x}")));
    }
    let n = read_be_u32(&mut r)? as usize;
    let rows = read_be_u32(&mut r)? as usize;
    let cols = read_be_u32(&mut r)? as usize;
    let shape = ImageShape::new(1, rows, cols);
    let mut buf = vec![0u8; shape.len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf)
            .map_err(|e| DiversityError::Format(format!("truncated pixel data: {e}")))?;
        out.push(Image::from_pixels(
            shape,
            buf.iter().map(|&b| T::c(b as f64 / 255.0)).collect(),
        ));
    }
    Ok(out)
}

/// Reads an IDX label file (magic `0x00000801`).
pub fn read_idx_labels<R: Read>(mut r: R) -> Result<Vec<u8>, DiversityError> {
    let magic = read_be_u32(&mut r)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DiversityError::Format(format!("expected magic 0x801, got {magic:#x}")));
    }
    let n = read_be_u32(&mut r)? as usize;
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels)
        .map_err(|e| DiversityError::Format(format!("truncated labels: {e}")))?;
    Ok(labels)
}

pub fn load_idx_images<T: Scalar>(path: &Path) -> Result<Vec<Image<T>>, DiversityError> {
    read_idx_images(BufReader::new(File::open(path)?))
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>, DiversityError> {
    read_idx_labels(BufReader::new(File::open(path)?))
}

/// Class-restricted subset of a labelled image collection, padded with blank
/// images to `num_classes · per_class` so its size does not depend on
/// `class_set`. Takes the first `per_class` images of each included class.
pub fn labelled_subset<T: Scalar>(
    images: &[Image<T>],
    labels: &[u8],
    class_set: &[usize],
    per_class: usize,
    num_classes: usize,
) -> Result<Vec<Image<T>>, DiversityError> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(DiversityError::InvalidArgument(
            "images and labels must be nonempty and of equal length".into(),
        ));
    }
    let shape = images[0].shape();
    let mut out = Vec::with_capacity(num_classes * per_class);
    for class in 0..num_classes {
        if class_set.contains(&class) {
            let picked: Vec<&Image<T>> = images
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l as usize == class)
                .map(|(i, _)| i)
                .take(per_class)
                .collect();
            if picked.len() < per_class {
                return Err(DiversityError::InvalidArgument(format!(
                    "class {class} has only {} images",
                    picked.len()
                )));
            }
            out.extend(picked.into_iter().cloned());
        } else {
            out.extend(std::iter::repeat_n(Image::zeros(shape), per_class));
        }
    }
    Ok(out)
}
