use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;
use woodvol_core::biomass::{
    agb_from_diameter, agb_from_height_with, aggregate_tiles, site_csv_row, volume_to_carbon, AllometricTable,
    PlotEstimate, M2_PER_HA, SITE_CSV_HEADER,
};
use woodvol_core::cloud::io::{read_ply, read_xyz, write_ply, write_xyz};
use woodvol_core::cloud::{spatial_metrics, tile, PointCloud};
use woodvol_core::config::{parse_toml, ConfigError, PipelineConfig};
use woodvol_core::dataset::{downsample, sample_id_of, sample_seed, SampleMethod};
use woodvol_core::encoders::Architecture;
use woodvol_core::forest::{default_archetypes, generate_plot, plot_seed, ForestPlot, AUGMENT_ANGLES};
use woodvol_core::lidar::{scan_scene, ScannerConfig};
use woodvol_core::mesh::{read_obj, write_obj, TriangleMesh};
use woodvol_core::seed;
use woodvol_core::training::{cross_validate, curve_csv, Checkpoint, MeanStd, Sample, TrainError};

use crate::error::{CliError, CliResult};
use crate::manifest::{self, Entry, Manifest, Sampling, Stage, MANIFEST_FILE, MANIFEST_FORMAT};

pub const SUMMARY_FORMAT: &str = "woodvol-train-summary/1";
pub const REPORT_FORMAT: &str = "woodvol-predict-report/1";
pub const METRICS_CSV_HEADER: &str = "plot_id,area_m2,volume_m3,density_m2,density_m3,avg_spacing_m";
pub const ESTIMATES_CSV_HEADER: &str =
    "tile_id,ix,iy,points,predicted_volume_m3,agb_t,carbon_t,area_ha,agb_t_ha,carbon_t_ha,density_kg_m3";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CloudFormat {
    Xyz,
    Ply,
}

impl CloudFormat {
    fn ext(self) -> &'static str {
        match self {
            Self::Xyz => "xyz",
            Self::Ply => "ply",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AllometryMode {
    Diameter,
    Height,
}

fn mkdir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

/// Explicit config file, else `fallback`, else defaults.
fn config_or(path: Option<&Path>, fallback: Option<&PipelineConfig>) -> CliResult<PipelineConfig> {
    match (path, fallback) {
        (Some(p), _) => Ok(PipelineConfig::load(p)?),
        (None, Some(c)) => {
            c.validate()?;
            Ok(c.clone())
        }
        (None, None) => Ok(PipelineConfig::default()),
    }
}

fn read_cloud(path: &Path) -> CliResult<PointCloud> {
    let record = path.display().to_string();
    let file = File::open(path).map_err(|e| CliError::data(&record, e))?;
    let r = BufReader::new(file);
    let ply = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    let cloud = if ply { read_ply(r) } else { read_xyz(r) };
    cloud.map_err(|e| CliError::data(&record, e))
}

fn write_cloud(path: &Path, cloud: &PointCloud, format: CloudFormat) -> CliResult<()> {
    write_with(path, |w| match format {
        CloudFormat::Xyz => write_xyz(cloud, w),
        CloudFormat::Ply => write_ply(cloud, w),
    })
}

fn read_mesh(path: &Path) -> CliResult<TriangleMesh> {
    let record = path.display().to_string();
    let file = File::open(path).map_err(|e| CliError::data(&record, e))?;
    read_obj(BufReader::new(file)).map_err(|e| CliError::data(&record, e))
}

fn enum_name<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|x| x.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn generate(config: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = config_or(config, None)?;
    let arch = default_archetypes();
    let ids: Vec<u64> = (0..cfg.dataset.base_plots).collect();
    let plots: Vec<ForestPlot> = ids
        .par_iter()
        .map(|&id| {
            generate_plot(&cfg.forest, &arch, id, plot_seed(cfg.seed, id))
                .map_err(|e| CliError::data(format!("plot {id}"), e))
        })
        .collect::<CliResult<_>>()?;
    let mesh_dir = out.join("meshes");
    mkdir(&mesh_dir)?;
    let entries: Vec<Vec<Entry>> = plots
        .par_iter()
        .map(|p| {
            let wood = format!("meshes/{}.wood.obj", p.plot_id);
            write_with(&out.join(&wood), |w| write_obj(&p.wood_mesh(), w))?;
            let leaves = p.leaf_mesh();
            let leaf = if leaves.is_empty() {
                None
            } else {
                let rel = format!("meshes/{}.leaves.obj", p.plot_id);
                write_with(&out.join(&rel), |w| write_obj(&leaves, w))?;
                Some(rel)
            };
            let tags = std::iter::once(0.0).chain(if cfg.dataset.augment {
                AUGMENT_ANGLES.to_vec()
            } else {
                vec![]
            });
            Ok(tags
                .map(|tag| Entry {
                    id: sample_id_of(p.plot_id, tag),
                    plot_id: p.plot_id,
                    seed: plot_seed(cfg.seed, p.plot_id),
                    rotation_tag: tag,
                    width: p.width,
                    depth: p.depth,
                    ground_truth_volume: p.ground_truth_volume,
                    tree_count: p.trees.len(),
                    wood_mesh: Some(wood.clone()),
                    leaf_mesh: leaf.clone(),
                    cloud: None,
                    points: None,
                    pulses: None,
                })
                .collect())
        })
        .collect::<CliResult<_>>()?;
    let m = Manifest {
        format: MANIFEST_FORMAT.into(),
        stage: Stage::Plots,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        source_hash: None,
        sampling: None,
        config: cfg,
        entries: entries.into_iter().flatten().collect(),
    };
    write(&out.join(MANIFEST_FILE), manifest::to_json(&m))
}

fn footprint(e: &Entry) -> [[f64; 2]; 4] {
    ForestPlot {
        plot_id: e.plot_id,
        width: e.width,
        depth: e.depth,
        rotation_tag: e.rotation_tag,
        trees: Vec::new(),
        ground_truth_volume: e.ground_truth_volume,
    }
    .footprint()
}

pub fn scan(
    manifest_path: &Path,
    config: Option<&Path>,
    scanner_config: Option<&Path>,
    out: &Path,
    format: CloudFormat,
) -> CliResult<()> {
    let src = manifest::load(manifest_path, Stage::Plots)?;
    let mut cfg = config_or(config, Some(&src.manifest.config))?;
    if let Some(p) = scanner_config {
        let text = std::fs::read_to_string(p).map_err(|e| ConfigError {
            path: ".".into(),
            message: format!("cannot read {}: {e}", p.display()),
            line: None,
        })?;
        let s: ScannerConfig = parse_toml(&text).map_err(|e| ConfigError {
            path: format!("scanner.{}", e.path),
            ..e
        })?;
        cfg.scanner = s;
        cfg.validate()?;
    }
    let cloud_dir = out.join("clouds");
    mkdir(&cloud_dir)?;
    // entries of one base plot share meshes: load them once per plot
    let mut groups: Vec<Vec<&Entry>> = Vec::new();
    for e in &src.manifest.entries {
        match groups.last_mut() {
            Some(g) if g[0].plot_id == e.plot_id => g.push(e),
            _ => groups.push(vec![e]),
        }
    }
    let scanned: Vec<Vec<Entry>> = groups
        .par_iter()
        .map(|g| {
            let base = g[0];
            let wood = match &base.wood_mesh {
                Some(p) => read_mesh(&src.resolve(p))?,
                None => return Err(CliError::data(&base.id, "entry has no wood mesh")),
            };
            let leaves = match &base.leaf_mesh {
                Some(p) => read_mesh(&src.resolve(p))?,
                None => TriangleMesh::empty(),
            };
            g.iter()
                .map(|e| {
                    let (cx, cy) = (e.width / 2.0, e.depth / 2.0);
                    let turn = |m: &TriangleMesh| {
                        if e.rotation_tag == 0.0 {
                            m.clone()
                        } else {
                            m.rotate_about(e.rotation_tag, cx, cy)
                        }
                    };
                    let (w, l) = (turn(&wood), turn(&leaves));
                    let scene: Vec<&TriangleMesh> = [&w, &l].into_iter().filter(|m| !m.is_empty()).collect();
                    let r = scan_scene(&scene, &footprint(e), &cfg.scanner, true)
                        .map_err(|err| CliError::data(&e.id, err))?;
                    let rel = format!("clouds/{}.{}", e.id, format.ext());
                    write_cloud(&out.join(&rel), &r.cloud, format)?;
                    Ok(Entry {
                        wood_mesh: None,
                        leaf_mesh: None,
                        cloud: Some(rel),
                        points: Some(r.cloud.len()),
                        pulses: Some(r.pulse_count),
                        ..(*e).clone()
                    })
                })
                .collect()
        })
        .collect::<CliResult<_>>()?;
    let m = Manifest {
        format: MANIFEST_FORMAT.into(),
        stage: Stage::Clouds,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        source_hash: Some(src.hash),
        sampling: None,
        config: cfg,
        entries: scanned.into_iter().flatten().collect(),
    };
    write(&out.join(MANIFEST_FILE), manifest::to_json(&m))
}

pub fn sample(
    input: &Path,
    config: Option<&Path>,
    method: Option<SampleMethod>,
    n: Option<usize>,
    out: &Path,
    format: CloudFormat,
) -> CliResult<()> {
    let src = manifest::load(input, Stage::Clouds)?;
    let mut cfg = config_or(config, Some(&src.manifest.config))?;
    if let Some(m) = method {
        cfg.sampling.method = m;
    }
    if let Some(n) = n {
        cfg.sampling.num_points = n;
    }
    cfg.validate()?;
    let (method, n) = (cfg.sampling.method, cfg.sampling.num_points);
    mkdir(&out.join("clouds"))?;
    let rows: Vec<(Entry, String)> = src
        .manifest
        .entries
        .par_iter()
        .map(|e| {
            let path = match &e.cloud {
                Some(p) => src.resolve(p),
                None => return Err(CliError::data(&e.id, "entry has no cloud")),
            };
            let cloud = read_cloud(&path)?;
            let s = downsample(&cloud, n, method, sample_seed(cfg.seed, e.plot_id, e.rotation_tag))
                .map_err(|err| CliError::data(&e.id, err))?;
            let m = spatial_metrics(&s).map_err(|err| CliError::data(&e.id, err))?;
            let rel = format!("clouds/{}.{}", e.id, format.ext());
            write_cloud(&out.join(&rel), &s, format)?;
            let row = format!(
                "{},{},{},{},{},{}",
                e.id, m.area, m.volume, m.density_area, m.density_volume, m.avg_spacing
            );
            let entry = Entry {
                cloud: Some(rel),
                points: Some(s.len()),
                ..e.clone()
            };
            Ok((entry, row))
        })
        .collect::<CliResult<_>>()?;
    let mut csv = String::from(METRICS_CSV_HEADER);
    csv.push('\n');
    for (_, r) in &rows {
        csv.push_str(r);
        csv.push('\n');
    }
    write(&out.join("metrics.csv"), csv)?;
    let m = Manifest {
        format: MANIFEST_FORMAT.into(),
        stage: Stage::Samples,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        source_hash: Some(src.hash),
        sampling: Some(Sampling { method, num_points: n }),
        config: cfg,
        entries: rows.into_iter().map(|r| r.0).collect(),
    };
    write(&out.join(MANIFEST_FILE), manifest::to_json(&m))
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(m) => CliError::Config(ConfigError {
            path: "training".into(),
            message: m,
            line: None,
        }),
        TrainError::NonFinite {
            fold,
            epoch,
            batch,
            detail,
        } => CliError::data(format!("fold {fold} epoch {epoch} batch {batch}"), detail),
        other => CliError::data("dataset", other),
    }
}

pub fn train(
    dataset: &Path,
    arch: Option<Architecture>,
    config: Option<&Path>,
    out: &Path,
    quiet: bool,
) -> CliResult<()> {
    let src = manifest::load(dataset, Stage::Samples)?;
    let mut cfg = config_or(config, Some(&src.manifest.config))?;
    if let Some(a) = arch {
        cfg.model.architecture = a;
    }
    cfg.validate()?;
    let sampling = src
        .manifest
        .sampling
        .clone()
        .ok_or_else(|| CliError::data(dataset.display().to_string(), "samples manifest lacks sampling info"))?;
    if sampling.num_points != cfg.sampling.num_points {
        return Err(CliError::data(
            dataset.display().to_string(),
            format!(
                "dataset clouds have {} points but sampling.num_points is {}",
                sampling.num_points, cfg.sampling.num_points
            ),
        ));
    }
    let data: Vec<Sample> = src
        .manifest
        .entries
        .par_iter()
        .map(|e| {
            let path = e
                .cloud
                .as_ref()
                .map(|p| src.resolve(p))
                .ok_or_else(|| CliError::data(&e.id, "entry has no cloud"))?;
            let cloud = read_cloud(&path)?;
            if cloud.len() != sampling.num_points {
                return Err(CliError::data(
                    &e.id,
                    format!("{} points, expected {}", cloud.len(), sampling.num_points),
                ));
            }
            if !(e.ground_truth_volume > 0.0) {
                return Err(CliError::data(
                    &e.id,
                    format!("label {} is not positive", e.ground_truth_volume),
                ));
            }
            Ok(Sample {
                id: e.id.clone(),
                group: e.plot_id,
                label: e.ground_truth_volume,
                points: cloud.points,
            })
        })
        .collect::<CliResult<_>>()?;
    let spec = cfg.model_spec();
    mkdir(out)?;
    let report = cross_validate(&spec, &data, &cfg.training, |fold, r| {
        if !quiet {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            eprintln!(
                "fold {fold} epoch {} lr {:.3e} train_loss {:.4} val_loss {} val_mape {}",
                r.epoch,
                r.learning_rate,
                r.train_loss,
                opt(r.val_loss),
                opt(r.val_mape)
            );
        }
    })
    .map_err(train_error)?;
    let mut folds = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    for r in &report.folds {
        let curve = format!("fold_{}.csv", r.fold);
        let ckpt = format!("fold_{}.ckpt.json", r.fold);
        write(&out.join(&curve), curve_csv(&r.curve))?;
        write(&out.join(&ckpt), Checkpoint::from_fold(r, cfg.training.seed).to_json())?;
        let score = r.best_val_loss.unwrap_or(f64::INFINITY);
        if best.is_none_or(|b| score < b.0) {
            best = Some((score, r.fold));
        }
        folds.push(json!({
            "fold": r.fold,
            "train_size": r.train.len(),
            "val_size": r.val.len(),
            "best_epoch": r.best_epoch,
            "best_val_loss": r.best_val_loss,
            "best_val_mape": r.best_val_mape,
            "baseline_val_mape": r.baseline_val_mape,
            "curve": curve,
            "checkpoint": ckpt,
        }));
    }
    let best_fold = best.map(|b| b.1).unwrap_or(0);
    let best_ckpt = Checkpoint::from_fold(&report.folds[best_fold], cfg.training.seed);
    write(&out.join("best.ckpt.json"), best_ckpt.to_json())?;
    write(&out.join("model.txt"), report.folds[best_fold].model.describe())?;
    let ms = |m: &MeanStd| json!({ "mean": m.mean, "std": m.std });
    let summary = json!({
        "format": SUMMARY_FORMAT,
        "architecture": cfg.model.architecture.name(),
        "preset": enum_name(&cfg.model.preset),
        "num_points": cfg.sampling.num_points,
        "samples": data.len(),
        "config_hash": cfg.hash(),
        "dataset_hash": src.hash,
        "seed": cfg.training.seed,
        "data_seed": cfg.seed,
        "fold_mode": enum_name(&cfg.training.fold_mode),
        "sampling_method": sampling.method.name(),
        "wood_density": cfg.biomass.wood_density,
        "epochs": cfg.training.epochs,
        "jitter": cfg.training.jitter,
        "validation_jitter": false,
        "selection": "lowest validation loss",
        "folds": folds,
        "val_loss": ms(&report.val_loss),
        "val_mape": ms(&report.val_mape),
        "baseline_val_mape": ms(&report.baseline_val_mape),
        "best_fold": best_fold,
    });
    write(&out.join("summary.json"), pretty(&summary))
}

/// Exactly `n` points: downsampled when larger, repeated cyclically when smaller.
fn fit_points(cloud: &PointCloud, n: usize, method: SampleMethod, seed: u64) -> CliResult<(Vec<[f64; 3]>, bool)> {
    if cloud.len() >= n {
        let s = downsample(cloud, n, method, seed).map_err(|e| CliError::data("tile", e))?;
        return Ok((s.points, false));
    }
    Ok(((0..n).map(|i| cloud.points[i % cloud.len()]).collect(), true))
}

#[allow(clippy::too_many_arguments)]
pub fn predict(
    cloud_path: &Path,
    checkpoint: &Path,
    config: Option<&Path>,
    tile_edge: Option<f64>,
    density: Option<f64>,
    min_points: Option<usize>,
    out: &Path,
) -> CliResult<()> {
    let mut cfg = config_or(config, None)?;
    if let Some(e) = tile_edge {
        cfg.biomass.tile_edge = e;
    }
    if let Some(d) = density {
        cfg.biomass.wood_density = d;
    }
    if let Some(m) = min_points {
        cfg.biomass.tile_min_points = m;
    }
    cfg.validate()?;
    let ckpt_record = checkpoint.display().to_string();
    let ckpt_bytes = std::fs::read(checkpoint).map_err(|e| CliError::data(&ckpt_record, e))?;
    let ckpt = std::str::from_utf8(&ckpt_bytes)
        .map_err(|e| CliError::data(&ckpt_record, e))
        .and_then(|s| Checkpoint::from_json(s).map_err(|e| CliError::data(&ckpt_record, e)))?;
    let model = ckpt.model().map_err(|e| CliError::data(&ckpt_record, e))?;
    let n = ckpt.spec.num_points;
    let cloud = read_cloud(cloud_path)?;
    let cloud_bytes = std::fs::read(cloud_path).map_err(|e| CliError::data(cloud_path.display().to_string(), e))?;
    let tiling = tile(&cloud, cfg.biomass.tile_edge, cfg.biomass.tile_min_points)
        .map_err(|e| CliError::data(cloud_path.display().to_string(), e))?;
    if tiling.tiles.is_empty() {
        return Err(CliError::data(
            cloud_path.display().to_string(),
            format!("no tile holds {} or more points", cfg.biomass.tile_min_points),
        ));
    }
    let mut inputs = Vec::with_capacity(tiling.tiles.len());
    let mut padded = 0;
    for t in &tiling.tiles {
        let s = seed::derive(cfg.seed, &[0x711E, t.ix as u64, t.iy as u64]);
        let (pts, pad) = fit_points(&t.cloud, n, cfg.sampling.method, s)?;
        padded += usize::from(pad);
        inputs.push(pts);
    }
    let mut volumes = Vec::with_capacity(inputs.len());
    let mut clamped = 0;
    for chunk in inputs.chunks(cfg.training.batch_size.max(1)) {
        let refs: Vec<&[[f64; 3]]> = chunk.iter().map(|c| c.as_slice()).collect();
        let (v, c) = model.predict(&refs).map_err(|e| CliError::data(&ckpt_record, e))?;
        volumes.extend(v);
        clamped += c;
    }
    let density = cfg.biomass.wood_density;
    let estimates: Vec<PlotEstimate> = tiling
        .tiles
        .iter()
        .zip(&volumes)
        .map(|(t, &v)| volume_to_carbon(format!("{}_{}", t.ix, t.iy), v, density, t.area / M2_PER_HA))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::data(cloud_path.display().to_string(), e))?;
    let site = aggregate_tiles(&estimates, false).map_err(|e| CliError::data("tiles", e))?;

    mkdir(out)?;
    let mut csv = String::from(ESTIMATES_CSV_HEADER);
    csv.push('\n');
    for (e, t) in estimates.iter().zip(&tiling.tiles) {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            e.id,
            t.ix,
            t.iy,
            t.cloud.len(),
            e.predicted_volume,
            e.agb,
            e.carbon,
            e.area,
            e.agb_per_ha,
            e.carbon_per_ha,
            e.wood_density
        ));
    }
    write(&out.join("estimates.csv"), csv)?;
    let site_name = cloud_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "site".into());
    let method = ckpt.spec.architecture().name();
    write(
        &out.join("site.csv"),
        format!("{SITE_CSV_HEADER}\n{}\n", site_csv_row(&site_name, method, &site)),
    )?;
    let dropped: Vec<_> = tiling
        .dropped
        .iter()
        .map(|&(ix, iy, points)| json!({ "ix": ix, "iy": iy, "points": points }))
        .collect();
    let report = json!({
        "format": REPORT_FORMAT,
        "site": site_name,
        "cloud_sha256": manifest::sha256_hex(&cloud_bytes),
        "checkpoint_sha256": manifest::sha256_hex(&ckpt_bytes),
        "architecture": method,
        "num_points": n,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "sampling_method": cfg.sampling.method.name(),
        "fold_mode": enum_name(&cfg.training.fold_mode),
        "wood_density": density,
        "tile_edge_m": cfg.biomass.tile_edge,
        "tile_min_points": cfg.biomass.tile_min_points,
        "tiles": estimates.len(),
        "padded_tiles": padded,
        "dropped_tiles": dropped,
        "clamped_predictions": clamped,
        "totals": site,
    });
    write(&out.join("report.json"), pretty(&report))
}

pub fn allometry(
    mode: AllometryMode,
    model: &str,
    values: &[f64],
    table: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let table = match table {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::data(p.display().to_string(), e))?;
            AllometricTable::parse(&text).map_err(|e| CliError::data(p.display().to_string(), e))?
        }
        None => AllometricTable::bundled(),
    };
    let mut csv = String::from("mode,model,value,agb_kg\n");
    for &v in values {
        let (name, agb) = match mode {
            AllometryMode::Diameter => {
                let m = table.get(model).map_err(|e| CliError::data(model, e))?;
                ("diameter", agb_from_diameter(m, v))
            }
            AllometryMode::Height => ("height", agb_from_height_with(&table.height, v)),
        };
        let agb = agb.map_err(|e| CliError::data(format!("value {v}"), e))?;
        let label = if mode == AllometryMode::Height { "height" } else { model };
        csv.push_str(&format!("{name},{label},{v},{agb}\n"));
    }
    match out {
        Some(p) => write(p, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
