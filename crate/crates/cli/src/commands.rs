//! Subcommand implementations: read NPY stacks, run the library per image
//! (in input order, whatever the worker count), write outputs.

use crate::config::PipelineConfig;
use crate::outputs::OutputTracker;
use crate::report::{
    evaluate_csv, ranking_csv, sig6, EvaluateReport, MpqSection, PerImagePq, R2Section,
    TypeEntry, TypesFile,
};
use crate::{Cli, Command};
use anyhow::{bail, Context};
use nucleoforge_core::array_io::{
    self, binary_stack_to_tensor, channel_stack_from_tensor, channel_stack_to_tensor,
    hv_stack_from_tensor, hv_stack_to_tensor, image_stack_from_tensor,
    instance_stack_from_tensor, instance_stack_to_tensor, label_stack_from_tensor,
    scalar_stack_from_tensor, stain_stack_to_tensor, Tensor,
};
use nucleoforge_core::foldstats::{instance_classes, rank_folds, FoldInput};
use nucleoforge_core::losses::{tp_branch_loss, DiceOptions, TpLossParams};
use nucleoforge_core::metrics::{count_per_class, mpq_plus, multi_r2, pq, CountsTable};
use nucleoforge_core::postproc::{postprocess, PredictionBundle, TypedInstances};
use nucleoforge_core::stain::{haematoxylin_norm, rgb_to_hed, SmoothingMode};
use nucleoforge_core::targets::make_training_targets;
use nucleoforge_core::{ChannelField, ImageTile, InstanceMap};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub fn run(cli: &Cli, tracker: &mut OutputTracker) -> anyhow::Result<()> {
    let config = PipelineConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Deconvolve { images, out, ppm } => {
            cmd_deconvolve(cli, tracker, images, out.as_deref(), *ppm)
        }
        Command::Targets {
            images,
            labels,
            np_out,
            hv_out,
            tp_out,
            num_classes,
        } => cmd_targets(
            cli,
            tracker,
            &config,
            images,
            labels,
            np_out.as_deref(),
            hv_out.as_deref(),
            tp_out.as_deref(),
            *num_classes,
        ),
        Command::Postprocess {
            np,
            hv,
            tp,
            inst_out,
            types_out,
        } => cmd_postprocess(
            cli,
            tracker,
            &config,
            np,
            hv,
            tp,
            inst_out.as_deref(),
            types_out.as_deref(),
        ),
        Command::Evaluate {
            gt_labels,
            pred_inst,
            pred_types,
            report_json,
            report_csv,
            num_classes,
        } => cmd_evaluate(
            cli,
            tracker,
            &config,
            gt_labels,
            pred_inst,
            pred_types,
            report_json.as_deref(),
            report_csv.as_deref(),
            *num_classes,
        ),
        Command::Foldselect {
            folds,
            out,
            num_classes,
        } => cmd_foldselect(cli, tracker, &config, folds, out.as_deref(), *num_classes),
        Command::Loss {
            pred,
            target,
            gamma,
            eps,
        } => cmd_loss(&config, pred, target, *gamma, *eps),
    }
}

fn default_path(cli: &Cli, explicit: Option<&Path>, name: &str) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out_dir.join(name))
}

fn read_tensor(path: &Path) -> anyhow::Result<Tensor> {
    array_io::read_npy(path).with_context(|| format!("reading {}", path.display()))
}

/// Runs `f` over every index, in parallel, and reassembles results in input
/// order so outputs do not depend on the worker count.
fn per_image<T: Send, F: Fn(usize) -> anyhow::Result<T> + Sync + Send>(
    n: usize,
    f: F,
) -> anyhow::Result<Vec<T>> {
    let results: Vec<anyhow::Result<T>> = (0..n).into_par_iter().map(f).collect();
    let mut out = Vec::with_capacity(n);
    for r in results {
        out.push(r?);
    }
    Ok(out)
}

fn cmd_deconvolve(
    cli: &Cli,
    tracker: &mut OutputTracker,
    images: &Path,
    out: Option<&Path>,
    ppm: bool,
) -> anyhow::Result<()> {
    let tiles = image_stack_from_tensor(&read_tensor(images)?)
        .with_context(|| format!("interpreting {}", images.display()))?;
    let hed = per_image(tiles.len(), |i| Ok(rgb_to_hed::<f32>(&tiles[i])))?;
    let out_path = default_path(cli, out, "hed.npy");
    tracker.write_npy(&out_path, &stain_stack_to_tensor(&hed)?)?;
    if ppm {
        for (i, stains) in hed.iter().enumerate() {
            let hn = haematoxylin_norm(stains);
            let (h, w) = hn.dims();
            let mut panel = ImageTile::filled(h, w, [0, 0, 0]);
            for r in 0..h {
                for c in 0..w {
                    let v = (hn.at(r, c) * 255.0).round().clamp(0.0, 255.0) as u8;
                    panel.set_pixel(r, c, [v, v, v]);
                }
            }
            tracker.write_ppm(&cli.out_dir.join(format!("h_{i:04}.ppm")), &panel)?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_targets(
    cli: &Cli,
    tracker: &mut OutputTracker,
    config: &PipelineConfig,
    images: &Path,
    labels: &Path,
    np_out: Option<&Path>,
    hv_out: Option<&Path>,
    tp_out: Option<&Path>,
    num_classes: Option<u32>,
) -> anyhow::Result<()> {
    let num_classes = config.num_classes(num_classes)?;
    let tiles = image_stack_from_tensor(&read_tensor(images)?)
        .with_context(|| format!("interpreting {}", images.display()))?;
    let label_maps = label_stack_from_tensor(&read_tensor(labels)?)
        .with_context(|| format!("interpreting {}", labels.display()))?;
    if tiles.len() != label_maps.len() {
        bail!(
            "{} holds {} images but {} holds {} label maps",
            images.display(),
            tiles.len(),
            labels.display(),
            label_maps.len()
        );
    }
    let targets = per_image(tiles.len(), |i| {
        let (inst, cls) = &label_maps[i];
        make_training_targets::<f32>(inst, cls, &tiles[i], num_classes, SmoothingMode::AllChannels)
            .with_context(|| format!("building targets for image {i}"))
    })?;
    let np: Vec<_> = targets.iter().map(|t| t.np.clone()).collect();
    let hv: Vec<_> = targets.iter().map(|t| t.hv.clone()).collect();
    let tp: Vec<_> = targets.iter().map(|t| t.tp.clone()).collect();
    tracker.write_npy(
        &default_path(cli, np_out, "np.npy"),
        &binary_stack_to_tensor(&np)?,
    )?;
    tracker.write_npy(
        &default_path(cli, hv_out, "hv.npy"),
        &hv_stack_to_tensor(&hv)?,
    )?;
    tracker.write_npy(
        &default_path(cli, tp_out, "tp.npy"),
        &channel_stack_to_tensor(&tp)?,
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_postprocess(
    cli: &Cli,
    tracker: &mut OutputTracker,
    config: &PipelineConfig,
    np: &Path,
    hv: &Path,
    tp: &Path,
    inst_out: Option<&Path>,
    types_out: Option<&Path>,
) -> anyhow::Result<()> {
    config
        .postproc
        .validate()
        .context("invalid postproc config")?;
    let np_maps = scalar_stack_from_tensor(&read_tensor(np)?)
        .with_context(|| format!("interpreting {}", np.display()))?;
    let hv_maps = hv_stack_from_tensor(&read_tensor(hv)?)
        .with_context(|| format!("interpreting {}", hv.display()))?;
    let tp_maps = channel_stack_from_tensor(&read_tensor(tp)?)
        .with_context(|| format!("interpreting {}", tp.display()))?;
    if np_maps.len() != hv_maps.len() || np_maps.len() != tp_maps.len() {
        bail!(
            "stack sizes differ: np {} / hv {} / tp {}",
            np_maps.len(),
            hv_maps.len(),
            tp_maps.len()
        );
    }
    let typed = per_image(np_maps.len(), |i| {
        let bundle = PredictionBundle {
            np_prob: np_maps[i].clone(),
            hv: hv_maps[i].clone(),
            tp_prob: tp_maps[i].clone(),
        };
        postprocess(&bundle, &config.postproc).with_context(|| format!("post-processing image {i}"))
    })?;
    let inst_maps: Vec<InstanceMap> = typed.iter().map(|t| t.inst.clone()).collect();
    tracker.write_npy(
        &default_path(cli, inst_out, "inst.npy"),
        &instance_stack_to_tensor(&inst_maps)?,
    )?;
    let mut types: TypesFile = BTreeMap::new();
    for (i, t) in typed.iter().enumerate() {
        let mut per_inst = BTreeMap::new();
        for (&id, &class) in &t.types {
            per_inst.insert(
                id,
                TypeEntry {
                    class,
                    score: sig6(t.type_scores[&id]),
                },
            );
        }
        types.insert(i as u32, per_inst);
    }
    let json = serde_json::to_string_pretty(&types)?;
    tracker.write_text(&default_path(cli, types_out, "types.json"), &json)?;
    Ok(())
}

fn typed_from_files(
    inst_maps: Vec<InstanceMap>,
    types: &TypesFile,
    source: &Path,
) -> anyhow::Result<Vec<TypedInstances>> {
    let mut out = Vec::with_capacity(inst_maps.len());
    for (i, inst) in inst_maps.into_iter().enumerate() {
        let entries = types.get(&(i as u32));
        let mut type_map = BTreeMap::new();
        let mut score_map = BTreeMap::new();
        let mut ids: Vec<u32> = inst.data().iter().copied().filter(|&v| v > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        for id in ids {
            let entry = entries.and_then(|m| m.get(&id)).with_context(|| {
                format!(
                    "{} has no type entry for instance {id} of image {i}",
                    source.display()
                )
            })?;
            type_map.insert(id, entry.class);
            score_map.insert(id, entry.score);
        }
        out.push(TypedInstances {
            inst,
            types: type_map,
            type_scores: score_map,
        });
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    cli: &Cli,
    tracker: &mut OutputTracker,
    config: &PipelineConfig,
    gt_labels: &Path,
    pred_inst: &Path,
    pred_types: &Path,
    report_json: Option<&Path>,
    report_csv: Option<&Path>,
    num_classes: Option<u32>,
) -> anyhow::Result<()> {
    let num_classes = config.num_classes(num_classes)?;
    let gt_maps = label_stack_from_tensor(&read_tensor(gt_labels)?)
        .with_context(|| format!("interpreting {}", gt_labels.display()))?;
    let pred_maps = instance_stack_from_tensor(&read_tensor(pred_inst)?)
        .with_context(|| format!("interpreting {}", pred_inst.display()))?;
    if gt_maps.len() != pred_maps.len() {
        bail!(
            "{} holds {} images but {} holds {}",
            gt_labels.display(),
            gt_maps.len(),
            pred_inst.display(),
            pred_maps.len()
        );
    }
    let types_text = std::fs::read_to_string(pred_types)
        .with_context(|| format!("reading {}", pred_types.display()))?;
    let types: TypesFile = serde_json::from_str(&types_text)
        .with_context(|| format!("parsing {}", pred_types.display()))?;

    let gt_typed: Vec<TypedInstances> = {
        let built = per_image(gt_maps.len(), |i| {
            let (inst, cls) = &gt_maps[i];
            let classes = instance_classes(inst, cls)
                .with_context(|| format!("typing ground-truth image {i}"))?;
            let scores = classes.keys().map(|&k| (k, 1.0)).collect();
            Ok(TypedInstances {
                inst: inst.clone(),
                types: classes,
                type_scores: scores,
            })
        })?;
        built
    };
    let pred_typed = typed_from_files(pred_maps, &types, pred_types)?;

    let per_image_pq = per_image(gt_typed.len(), |i| {
        pq(&gt_typed[i].inst, &pred_typed[i].inst)
            .with_context(|| format!("matching image {i}"))
    })?;
    let mpq = mpq_plus(&gt_typed, &pred_typed, num_classes)?;
    let mut gt_counts = CountsTable::new(num_classes as usize);
    let mut pred_counts = CountsTable::new(num_classes as usize);
    for (g, p) in gt_typed.iter().zip(&pred_typed) {
        gt_counts.push(count_per_class(g, num_classes))?;
        pred_counts.push(count_per_class(p, num_classes))?;
    }
    let r2 = multi_r2(&gt_counts, &pred_counts)?;

    let pq_mean = if per_image_pq.is_empty() {
        0.0
    } else {
        per_image_pq.iter().map(|r| r.pq).sum::<f64>() / per_image_pq.len() as f64
    };
    let report = EvaluateReport {
        num_images: gt_typed.len(),
        num_classes,
        per_image: per_image_pq
            .iter()
            .enumerate()
            .map(|(i, r)| PerImagePq::from_result(i, r))
            .collect(),
        pq_mean: sig6(pq_mean),
        mpq_plus: MpqSection::from_result(&mpq),
        multi_r2: R2Section::from_result(&r2),
    };
    let json = serde_json::to_string_pretty(&report)?;
    tracker.write_text(&default_path(cli, report_json, "report.json"), &json)?;
    tracker.write_text(
        &default_path(cli, report_csv, "report.csv"),
        &evaluate_csv(&report),
    )?;
    Ok(())
}

fn parse_fold_filename(name: &str) -> Option<(u32, bool)> {
    let stem = name.strip_suffix("_labels.npy")?;
    let (id_part, split) = if let Some(s) = stem.strip_suffix("_train") {
        (s, true)
    } else if let Some(s) = stem.strip_suffix("_valid") {
        (s, false)
    } else {
        return None;
    };
    let id = id_part.strip_prefix("fold_")?.parse::<u32>().ok()?;
    Some((id, split))
}

fn cmd_foldselect(
    cli: &Cli,
    tracker: &mut OutputTracker,
    config: &PipelineConfig,
    folds_dir: &Path,
    out: Option<&Path>,
    num_classes: Option<u32>,
) -> anyhow::Result<()> {
    let num_classes = config.num_classes(num_classes)?;
    let mut train_files: BTreeMap<u32, PathBuf> = BTreeMap::new();
    let mut valid_files: BTreeMap<u32, PathBuf> = BTreeMap::new();
    let entries = std::fs::read_dir(folds_dir)
        .with_context(|| format!("listing {}", folds_dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if !name.starts_with("fold_") {
            continue;
        }
        match parse_fold_filename(name) {
            Some((id, true)) => {
                train_files.insert(id, path);
            }
            Some((id, false)) => {
                valid_files.insert(id, path);
            }
            None => {
                eprintln!("warning: ignoring malformed fold file name '{name}'");
            }
        }
    }
    let mut folds = Vec::new();
    for (&id, train_path) in &train_files {
        let Some(valid_path) = valid_files.get(&id) else {
            eprintln!("warning: fold {id} has no valid split, skipping");
            continue;
        };
        let train = label_stack_from_tensor(&read_tensor(train_path)?)
            .with_context(|| format!("interpreting {}", train_path.display()))?;
        let valid = label_stack_from_tensor(&read_tensor(valid_path)?)
            .with_context(|| format!("interpreting {}", valid_path.display()))?;
        folds.push(FoldInput { id, train, valid });
    }
    for &id in valid_files.keys() {
        if !train_files.contains_key(&id) {
            eprintln!("warning: fold {id} has no train split, skipping");
        }
    }
    if folds.is_empty() {
        bail!("no complete folds found in {}", folds_dir.display());
    }
    let ranked = rank_folds(&folds, num_classes)?;
    tracker.write_text(&default_path(cli, out, "ranking.csv"), &ranking_csv(&ranked))?;
    Ok(())
}

fn flat_channel_field(t: &Tensor, path: &Path) -> anyhow::Result<ChannelField<f64>> {
    let data = t
        .as_f32()
        .with_context(|| format!("{} must hold f32 data", path.display()))?;
    let channels = t.shape().last().copied().unwrap_or(1).max(1);
    let rows = data.len() / channels;
    Ok(ChannelField::from_vec(
        rows,
        1,
        channels,
        data.iter().map(|&v| v as f64).collect(),
    ))
}

fn cmd_loss(
    config: &PipelineConfig,
    pred: &Path,
    target: &Path,
    gamma: Option<f64>,
    eps: Option<f64>,
) -> anyhow::Result<()> {
    let p = read_tensor(pred)?;
    let y = read_tensor(target)?;
    if p.shape() != y.shape() {
        bail!(
            "shapes differ: {} is {:?}, {} is {:?}",
            pred.display(),
            p.shape(),
            target.display(),
            y.shape()
        );
    }
    let gamma = gamma.unwrap_or(config.loss.gamma);
    let eps = eps.unwrap_or(config.loss.eps);
    let params = TpLossParams {
        gamma,
        dice: DiceOptions {
            eps,
            ..DiceOptions::default()
        },
    };
    let pf = flat_channel_field(&p, pred)?;
    let yf = flat_channel_field(&y, target)?;
    let loss = tp_branch_loss(&pf, &yf, &params)?;
    let mut out = BTreeMap::new();
    out.insert("dice", sig6(loss.dice));
    out.insert("focal", sig6(loss.focal));
    out.insert("gamma", gamma);
    out.insert("eps", eps);
    out.insert("loss_tp", sig6(loss.value));
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
