use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{read_json, write_json, PipelineConfig, Provenance};
use super::*;
use crate::assets::procedural::{demo_library, ProceduralSpec};
use crate::assets::{load_library, Manifest, ManifestEntry};
use crate::dataio::{
    self, read_feature_table, read_hht, read_label_table, read_labels_png, read_rgb, read_score_map,
    write_feature_table, write_hht, write_jpeg, write_label_table, write_labels_png, write_score_map,
    FeatureRow, FeatureTable, LabelTable, ScenePaths,
};
use crate::refseg::{PrototypeAccumulator, PrototypeModel, SegError};
use crate::ridge::{self, autolabel as predict_table, biomass_targets, label_targets, RidgeModel, RidgeParams};
use crate::rng::rng_from_seed;
use crate::robust::{estimate_sigma, train_linear, MixedDataset, Sample};
use crate::segfeat::{extract_features, FeatureError, FeatureMode};
use crate::synth::height::HEIGHT_PERCENTILE;
use crate::synth::{generate_parallel, HeightHistogram, HeightNormalizer};

/// A JSON artifact with its provenance alongside the payload fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    #[serde(flatten)]
    pub value: T,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

/// `dataset.json` written by `generate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub species: Vec<String>,
    pub generator: crate::synth::GenConfig,
    pub height_percentile: f64,
    /// Raw stack height mapped to 1.0; `None` for an empty run.
    pub clip_value: Option<f64>,
    pub images: Vec<String>,
}

pub fn image_id(index: u64) -> String {
    format!("img_{index:05}")
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Sorted ids of files in `dir` named `<id><suffix>`.
fn list_ids(dir: &Path, suffix: &str) -> Result<Vec<String>, CliError> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if let Some(id) = entry.file_name().to_str().and_then(|n| n.strip_suffix(suffix)) {
            if !id.is_empty() {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

pub fn assets(a: AssetsArgs) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let species = cfg.species.resolve()?;
    let spec = ProceduralSpec {
        samples_per_species: a.per_species,
        sample_size: a.sample_size,
        n_backgrounds: a.backgrounds,
        background_size: a.background_size,
        seed: a.seed.unwrap_or(0),
    };
    if spec.samples_per_species == 0 || spec.n_backgrounds == 0 {
        return Err(CliError::Config("need at least one sample per species and one background".into()));
    }
    if spec.sample_size.0 == 0 || spec.sample_size.0 > spec.sample_size.1 {
        return Err(CliError::Config(format!("bad sample size range {:?}", spec.sample_size)));
    }
    let lib = demo_library(&species, &spec);
    create_dir(&a.out)?;

    let mut manifest = Manifest {
        assets: Default::default(),
    };
    for bg in lib.backgrounds() {
        let file = PathBuf::from(format!("{}.png", bg.id));
        dataio::write_rgb_png(&bg.rgb, &a.out.join(&file))?;
        manifest.assets.insert(
            bg.id.clone(),
            ManifestEntry {
                file,
                species: "soil".into(),
                mask: None,
            },
        );
    }
    for id in species.species_ids() {
        for s in lib.samples_of(id) {
            let file = PathBuf::from(format!("{}.png", s.id));
            let mut rgba = image::RgbaImage::new(s.width() as u32, s.height() as u32);
            for (x, y, px) in rgba.enumerate_pixels_mut() {
                let (x, y) = (x as usize, y as usize);
                let [r, g, b] = *s.rgb.get(x, y);
                *px = image::Rgba([r, g, b, *s.alpha.get(x, y)]);
            }
            let path = a.out.join(&file);
            rgba.save(&path).map_err(|e| dataio::DataError::image(&path, e))?;
            manifest.assets.insert(
                s.id.clone(),
                ManifestEntry {
                    file,
                    species: species.name(id).expect("known species").to_string(),
                    mask: None,
                },
            );
        }
    }
    write_json(&a.out.join("manifest.json"), &manifest)?;
    println!("wrote {} assets to {}", manifest.assets.len(), a.out.display());
    Ok(())
}

fn raw_height_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_height.raw.hht"))
}

pub fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::load(a.config.as_deref())?;
    if let Some(p) = a.assets {
        cfg.assets = Some(p);
    }
    let g = &mut cfg.generator;
    if let Some(n) = a.n {
        g.n_images = n;
    }
    if let Some(s) = a.seed {
        g.master_seed = s;
    }
    if let Some((w, h)) = a.canvas {
        g.canvas_size = [w, h];
    }
    if let Some((lo, hi)) = a.paste_count {
        g.paste_count_range = [lo, hi];
    }
    let species = cfg.species.resolve()?;
    let g = cfg.generator.clone();
    g.validate(species.n_species())?;
    let provenance = Provenance::new("generate", &(&cfg.species, &g), Some(g.master_seed));
    create_dir(&a.out)?;
    let out = a.out.as_path();
    let mut dataset = DatasetManifest {
        species: species.names().to_vec(),
        generator: g.clone(),
        height_percentile: HEIGHT_PERCENTILE,
        clip_value: None,
        images: Vec::new(),
    };
    let manifest_path = out.join("dataset.json");

    if g.n_images == 0 {
        warn!("n_images = 0: writing the dataset manifest only");
        return write_json(
            &manifest_path,
            &Stamped {
                value: dataset,
                provenance: Some(provenance),
            },
        );
    }
    let assets = cfg
        .assets
        .clone()
        .ok_or_else(|| CliError::Config("no asset manifest: pass --assets or set \"assets\"".into()))?;
    let lib = load_library(&assets, &species)?;
    let jobs = a.jobs.unwrap_or(0);

    let hists = generate_parallel(&lib, &g, 0..g.n_images as u64, jobs, |i, scene| {
        let id = image_id(i);
        let write = || -> Result<HeightHistogram, dataio::DataError> {
            let p = ScenePaths::new(out, &id);
            write_jpeg(&scene.rgb, &p.rgb)?;
            write_labels_png(&scene.labels, &p.labels)?;
            write_hht(&scene.raw_height.map(|&v| v as f32), &raw_height_path(out, &id))?;
            let mut h = HeightHistogram::new();
            h.add_raster(&scene.raw_height);
            Ok(h)
        };
        Ok(write())
    })?;
    let mut hist = HeightHistogram::new();
    for h in hists {
        hist.merge(&h?);
    }
    let norm = HeightNormalizer::from_histogram(&hist)?;
    info!("height clip value {}", norm.clip_value);

    dataset.images = (0..g.n_images as u64).map(image_id).collect();
    pool(jobs)?.install(|| {
        dataset.images.par_iter().try_for_each(|id| -> Result<(), CliError> {
            let raw_path = raw_height_path(out, id);
            let raw = read_hht(&raw_path)?;
            let h = raw.map(|&v| norm.normalize(v as u32));
            write_hht(&h, &ScenePaths::new(out, id).height)?;
            fs::remove_file(&raw_path).map_err(io_err(&raw_path))
        })
    })?;
    dataset.clip_value = Some(norm.clip_value);
    write_json(
        &manifest_path,
        &Stamped {
            value: dataset,
            provenance: Some(provenance),
        },
    )?;
    println!("generated {} scenes in {}", g.n_images, out.display());
    Ok(())
}

pub fn segment(a: SegmentArgs) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let species = cfg.species.resolve()?;
    let temperature = a.temperature.unwrap_or(cfg.temperature);
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(SegError::Temperature(temperature).into());
    }
    create_dir(&a.out)?;

    let model = match (&a.model, &a.fit_on) {
        (Some(path), _) => {
            let mut m: Stamped<PrototypeModel> = read_json(path)?;
            if a.temperature.is_some() {
                m.value.temperature = temperature;
            }
            m.value
        }
        (None, Some(dir)) => {
            let ids = list_ids(dir, "_labels.png")?;
            if ids.is_empty() {
                return Err(CliError::Input(format!("no <id>_labels.png files in {}", dir.display())));
            }
            let mut acc = PrototypeAccumulator::new(species.n_classes());
            for id in &ids {
                let p = ScenePaths::new(dir, id);
                acc.add(&read_rgb(&p.rgb)?, &read_labels_png(&p.labels)?)?;
            }
            let m = acc.finish(species.names(), temperature)?;
            let provenance = Provenance::new("segment", &(&cfg.species, temperature, &ids), None);
            write_json(
                &a.out.join("prototypes.json"),
                &Stamped {
                    value: m.clone(),
                    provenance: Some(provenance),
                },
            )?;
            m
        }
        (None, None) => return Err(CliError::Config("pass --model or --fit-on".into())),
    };

    let ids = list_ids(&a.images, ".jpg")?;
    if ids.is_empty() {
        warn!("no .jpg images in {}", a.images.display());
    }
    ids.par_iter().try_for_each(|id| -> Result<(), CliError> {
        let img = read_rgb(&a.images.join(format!("{id}.jpg")))?;
        write_score_map(&model.segment(&img), &a.out.join(format!("{id}.smp")))?;
        Ok(())
    })?;
    println!("segmented {} images into {}", ids.len(), a.out.display());
    Ok(())
}

pub fn features(a: FeaturesArgs) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let species = cfg.species.resolve()?;
    let mode = match &a.mode {
        Some(m) => m.parse::<FeatureMode>().map_err(CliError::Config)?,
        None => cfg.feature_mode,
    };
    if mode.uses_height() && a.heights.is_none() {
        return Err(FeatureError::MissingHeight(mode).into());
    }
    let ids = list_ids(&a.scores, ".smp")?;
    let rows = ids
        .par_iter()
        .map(|id| -> Result<FeatureRow, CliError> {
            let s = read_score_map(&a.scores.join(format!("{id}.smp")))?;
            if s.n_classes() != species.n_classes() {
                return Err(CliError::Input(format!(
                    "{id}: score map has {} classes, expected {}",
                    s.n_classes(),
                    species.n_classes()
                )));
            }
            let h = match (&a.heights, mode.uses_height()) {
                (Some(dir), true) => Some(read_hht(&ScenePaths::new(dir, id).height)?),
                _ => None,
            };
            let f = extract_features(&s, h.as_ref(), mode)?;
            Ok(FeatureRow {
                image_id: id.clone(),
                values: f.flatten(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let table = FeatureTable {
        mode,
        classes: species.names().to_vec(),
        rows,
    };
    write_feature_table(&table, &a.out)?;
    Provenance::new("features", &(&cfg.species, mode), None)
        .write_sidecar(&a.out, serde_json::json!({ "mode": mode, "n_rows": table.rows.len() }))?;
    println!("wrote {} feature rows ({mode}) to {}", table.rows.len(), a.out.display());
    Ok(())
}

/// Column indices of `sub` inside a table built with `mode`, if present.
pub fn sub_mode_columns(mode: FeatureMode, sub: FeatureMode, n_classes: usize) -> Option<Vec<usize>> {
    if (sub.uses_hl() && !mode.uses_hl()) || (sub.uses_sl() && !mode.uses_sl()) || (sub.uses_height() && !mode.uses_height()) {
        return None;
    }
    let sl_off = if mode.uses_hl() { n_classes } else { 0 };
    let mut cols = Vec::new();
    if sub.uses_hl() {
        cols.extend(0..n_classes);
    }
    if sub.uses_sl() {
        cols.extend(sl_off..sl_off + n_classes);
    }
    if sub.uses_height() {
        cols.push(mode.len(n_classes) - 1);
    }
    Some(cols)
}

type Joined = (Vec<String>, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Feature rows and targets for every labelled image, in label-table order.
fn join(features: &FeatureTable, labels: &LabelTable) -> Result<Joined, CliError> {
    let by_id: HashMap<&str, &FeatureRow> = features.rows.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut ids = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for row in &labels.rows {
        let f = by_id
            .get(row.image_id.as_str())
            .ok_or_else(|| CliError::Input(format!("no features for labelled image {}", row.image_id)))?;
        ids.push(row.image_id.clone());
        x.push(f.values.clone());
        y.push(label_targets(row));
    }
    Ok((ids, x, y))
}

fn ridge_params(cfg: &PipelineConfig, f: &RidgeFlags) -> RidgeParams {
    let mut p = cfg.ridge;
    if let Some(l) = f.lambda {
        p.lambda = l;
    }
    p.standardize &= !f.no_standardize;
    p.fit_intercept &= !f.no_intercept;
    p.renormalize_pct |= f.renormalize;
    p
}

fn truth_subset(labels: &LabelTable, keep: &[usize]) -> LabelTable {
    LabelTable {
        species: labels.species.clone(),
        rows: keep.iter().map(|&i| labels.rows[i].clone()).collect(),
    }
}

pub fn fit(a: FitArgs) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let params = ridge_params(&cfg, &a.ridge);
    let table = read_feature_table(&a.features)?;
    let labels = read_label_table(&a.labels)?;
    let (ids, x, y) = join(&table, &labels)?;
    let (names, kinds) = biomass_targets(&labels.species);
    let seed = a.seed.unwrap_or(0);

    let n = ids.len();
    if n >= 4 && a.val_fraction > 0.0 && a.val_fraction < 1.0 {
        let n_val = ((n as f64 * a.val_fraction).round() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_from_seed(seed));
        let (val, train) = idx.split_at(n_val);
        let c = table.classes.len();
        println!("validation on {} of {n} labelled images (fit on {})", val.len(), train.len());
        for sub in FeatureMode::ALL {
            let Some(cols) = sub_mode_columns(table.mode, sub, c) else {
                continue;
            };
            let pick = |rows: &[usize]| -> Vec<Vec<f64>> {
                rows.iter().map(|&i| cols.iter().map(|&j| x[i][j]).collect()).collect()
            };
            let ty: Vec<Vec<f64>> = train.iter().map(|&i| y[i].clone()).collect();
            let m = ridge::fit(&pick(train), &ty, &names, &kinds, params)?;
            let val_ids: Vec<String> = val.iter().map(|&i| ids[i].clone()).collect();
            let pred = predict_table(&m, &val_ids, &pick(val))?;
            let report = crate::metrics::evaluate(&pred.table, &truth_subset(&labels, val))?;
            print!("{}", report.to_table(&sub.to_string()));
        }
    } else {
        warn!("skipping validation report: {n} labelled rows, fraction {}", a.val_fraction);
    }

    let mut model = ridge::fit(&x, &y, &names, &kinds, params)?;
    model.feature_mode = Some(table.mode);
    model.feature_names = table.columns();
    let provenance = Provenance::new("fit", &(params, table.mode, &ids), Some(seed));
    write_json(
        &a.out,
        &Stamped {
            value: model,
            provenance: Some(provenance),
        },
    )?;
    println!("fitted ridge (lambda {}) on {n} images -> {}", params.lambda, a.out.display());
    Ok(())
}

fn check_columns(model: &RidgeModel, table: &FeatureTable) -> Result<(), CliError> {
    let cols = table.columns();
    if !model.feature_names.is_empty() && model.feature_names != cols {
        return Err(CliError::Input(format!(
            "feature columns {:?} do not match the model's {:?}",
            cols, model.feature_names
        )));
    }
    Ok(())
}

pub fn autolabel(a: AutolabelArgs) -> Result<(), CliError> {
    let model: Stamped<RidgeModel> = read_json(&a.model)?;
    let model = model.value;
    let table = read_feature_table(&a.features)?;
    check_columns(&model, &table)?;
    let skip: HashSet<String> = match &a.exclude {
        Some(p) => read_label_table(p)?.rows.into_iter().map(|r| r.image_id).collect(),
        None => HashSet::new(),
    };
    let rows: Vec<&FeatureRow> = table.rows.iter().filter(|r| !skip.contains(&r.image_id)).collect();
    let ids: Vec<String> = rows.iter().map(|r| r.image_id.clone()).collect();
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
    let labels = predict_table(&model, &ids, &x)?;
    write_label_table(&labels.table, &a.out)?;
    Provenance::new("autolabel", &labels.model_hash, None).write_sidecar(
        &a.out,
        serde_json::json!({ "model_hash": labels.model_hash, "n_rows": ids.len() }),
    )?;
    println!("auto-labelled {} images -> {}", ids.len(), a.out.display());
    Ok(())
}

fn samples(ids: Vec<String>, x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> Vec<Sample> {
    ids.into_iter()
        .zip(x)
        .zip(y)
        .map(|((image_id, features), targets)| Sample {
            image_id,
            features,
            targets,
        })
        .collect()
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let mut tc = cfg.train.clone();
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(lr) = a.lr {
        tc.lr = lr;
    }
    if let Some(b) = a.batch_size {
        tc.batch.batch_size = b;
    }
    if let Some(f) = a.trusted_fraction {
        tc.batch.trusted_fraction = f;
    }
    tc.batch.allow_pure_automatic |= a.allow_pure_automatic;
    tc.perturb &= !a.no_perturb;
    if let Some(s) = a.sigma {
        tc.sigma_override = Some(s);
    }
    if let Some(s) = a.seed {
        tc.seed = s;
    }

    let table = read_feature_table(&a.features)?;
    let trusted = read_label_table(&a.trusted)?;
    let (names, kinds) = biomass_targets(&trusted.species);
    let (tid, tx, ty) = join(&table, &trusted)?;
    let automatic = match &a.automatic {
        Some(p) => {
            let t = read_label_table(p)?;
            if t.species != trusted.species {
                return Err(CliError::Input("trusted and automatic tables list different species".into()));
            }
            let (ids, x, y) = join(&table, &t)?;
            samples(ids, x, y)
        }
        None => Vec::new(),
    };

    let sigma = if automatic.is_empty() || !tc.perturb || tc.sigma_override.is_some() {
        vec![0.0; names.len()]
    } else {
        let s = estimate_sigma(&tx, &ty, &names, &kinds, cfg.ridge, cfg.sigma_val_fraction, tc.seed)?;
        info!("estimated label sigma {s:?}");
        s
    };
    let ds = MixedDataset::new(samples(tid, tx, ty), automatic, names, kinds, sigma)?;
    let outcome = train_linear(&ds, &tc)?;
    let mut model = outcome.model;
    model.feature_mode = Some(table.mode);
    model.feature_names = table.columns();

    if let Some(log_path) = &a.log {
        let mut w = csv::Writer::from_path(log_path).map_err(|e| dataio::DataError::csv(log_path, e))?;
        for row in &outcome.log {
            w.serialize(row).map_err(|e| dataio::DataError::csv(log_path, e))?;
        }
        w.flush().map_err(io_err(log_path))?;
    }
    let provenance = Provenance::new("train", &(&tc, &ds.per_target_sigma), Some(tc.seed));
    write_json(
        &a.out,
        &Stamped {
            value: model,
            provenance: Some(provenance),
        },
    )?;
    let last = outcome.log.last().map_or(f64::NAN, |l| l.train_mse);
    println!(
        "trained on {} trusted + {} automatic rows for {} epochs (final mse {last:.4}) -> {}",
        ds.trusted.len(),
        ds.automatic.len(),
        tc.epochs,
        a.out.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut pred = read_label_table(&a.pred)?;
    let truth = read_label_table(&a.truth)?;
    if a.truth_only {
        let keep: HashSet<&str> = truth.rows.iter().map(|r| r.image_id.as_str()).collect();
        pred.rows.retain(|r| keep.contains(r.image_id.as_str()));
    }
    let report = crate::metrics::evaluate(&pred, &truth)?;
    print!("{}", report.to_table(&a.name));
    if let Some(out) = &a.out {
        let provenance = Provenance::new("eval", &(&a.pred, &a.truth), None);
        write_json(
            out,
            &Stamped {
                value: report,
                provenance: Some(provenance),
            },
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_mode_columns_pick_blocks() {
        use FeatureMode::*;
        assert_eq!(sub_mode_columns(HlSlH, Hl, 2), Some(vec![0, 1]));
        assert_eq!(sub_mode_columns(HlSlH, Sl, 2), Some(vec![2, 3]));
        assert_eq!(sub_mode_columns(HlSlH, HlSlH, 2), Some(vec![0, 1, 2, 3, 4]));
        assert_eq!(sub_mode_columns(Sl, Sl, 2), Some(vec![0, 1]));
        assert_eq!(sub_mode_columns(HlSl, HlSlH, 2), None);
        assert_eq!(sub_mode_columns(Sl, Hl, 2), None);
    }
}
