use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{encode_ppm, export_examples_ppm, load_idx, synthesize, write_file, BiasMeta, DatasetSplit, Palette};
use crate::error::{Error, Result};
use crate::nn::{cam_from_features, load_checkpoint, model_infer, save_checkpoint, ModelParams};
use crate::teacher::{build_teacher, load_external_maps, save_external_maps, TeacherMap};
use crate::tensor::Tensor;
use crate::training::{
    aggregate_seeds, evaluate, run_grid, train_two_phase, write_report, GridResult, Teachers, TrainReport,
};

use super::config::RunConfig;

pub fn load_split(cfg: &RunConfig, seed: u64) -> Result<DatasetSplit> {
    let m = cfg.mnist_paths()?;
    let train = load_idx(&m.train_images, &m.train_labels)?;
    let test = load_idx(&m.test_images, &m.test_labels)?;
    synthesize(cfg.train.dataset, &train, &test, seed, &Palette::default(), &cfg.synth)
}

/// Oracle teachers, or the bundles under `external_teachers`.
pub fn load_teachers(cfg: &RunConfig, split: &DatasetSplit) -> Result<Teachers> {
    match &cfg.external_teachers {
        None => Ok(Teachers::oracle(split, &cfg.train.morph)),
        Some(dir) => {
            let train = load_external_maps(&dir.join("train.attn"), Some(split.train.len()))?;
            let val = load_external_maps(&dir.join("val.attn"), Some(split.val.len()))?;
            let test_path = dir.join("test.attn");
            let test = if test_path.is_file() {
                Some(load_external_maps(&test_path, Some(split.test.len()))?)
            } else {
                None
            };
            Teachers::from_maps(&train, &val, test.as_deref())
        }
    }
}

fn dataset_stats(split: &DatasetSplit) -> String {
    let mut s = String::new();
    writeln!(s, "provenance = {}", split.provenance).unwrap();
    for (name, exs) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let mut per_class = [0usize; 10];
        let mut per_bias = [0usize; 10];
        let mut aligned = 0;
        for ex in exs.iter() {
            per_class[ex.label] += 1;
            let b = match ex.bias {
                BiasMeta::Color { palette_index } => palette_index,
                BiasMeta::Patch { intensity_index, .. } => intensity_index,
            };
            per_bias[b] += 1;
            aligned += usize::from(b == ex.label);
        }
        writeln!(s, "{name}.count = {}", exs.len()).unwrap();
        writeln!(s, "{name}.per_class = {per_class:?}").unwrap();
        writeln!(s, "{name}.per_bias = {per_bias:?}").unwrap();
        writeln!(s, "{name}.bias_matches_label = {aligned}").unwrap();
    }
    s
}

/// Writes image previews and dataset statistics; with
/// `write_teacher_bundles`, also the 28×28 oracle maps as bundle files.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    cfg.check_inputs(true, &[])?;
    let split = load_split(cfg, cfg.train.seed)?;
    cfg.prepare_output()?;
    export_examples_ppm(&split, &cfg.out.join("previews"), cfg.export_count)?;
    let stats = cfg.out.join("dataset_stats.txt");
    fs::write(&stats, dataset_stats(&split)).map_err(|e| Error::io(&stats, e))?;
    if cfg.write_teacher_bundles {
        let dir = cfg.out.join("teachers");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (name, exs) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
            let maps: Vec<TeacherMap> = exs.iter().map(|ex| build_teacher(ex, split.kind, &cfg.train.morph)).collect();
            save_external_maps(&maps, &dir.join(format!("{name}.attn")))?;
        }
    }
    println!(
        "synthesized {} train / {} val / {} test {} examples into {}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        split.kind,
        cfg.out.display()
    );
    Ok(())
}

fn prepared(cfg: &RunConfig, seed: u64) -> Result<(DatasetSplit, Teachers)> {
    let split = load_split(cfg, seed)?;
    let teachers = load_teachers(cfg, &split)?;
    Ok((split, teachers))
}

fn train_one(cfg: &RunConfig, seed: u64, data: (DatasetSplit, Teachers), dir: &Path) -> Result<TrainReport> {
    let (split, teachers) = data;
    let tc = crate::training::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let run = train_two_phase(&tc, &split, &teachers)?;
    let mut report = run.report;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt = dir.join("model.ckpt");
    save_checkpoint(&run.params, &ckpt)?;
    report.checkpoint_path = Some(ckpt);
    write_report(&report, dir)?;
    println!("seed {seed}: test_acc = {}", report.final_test_acc);
    Ok(report)
}

/// Trains once (or once per entry of `seeds`, under `seed_<s>/`) and writes
/// metrics, a checkpoint and a summary per run.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<TrainReport>> {
    cfg.check_inputs(true, &[])?;
    let seeds = if cfg.seeds.is_empty() { vec![cfg.train.seed] } else { cfg.seeds.clone() };
    // Loading the first split also validates the teacher inputs before any
    // output is written.
    let mut first = Some(prepared(cfg, seeds[0])?);
    cfg.prepare_output()?;
    let mut reports = Vec::with_capacity(seeds.len());
    for &s in &seeds {
        let data = match first.take() {
            Some(d) => d,
            None => prepared(cfg, s)?,
        };
        let dir = if cfg.seeds.is_empty() { cfg.out.clone() } else { cfg.out.join(format!("seed_{s}")) };
        reports.push(train_one(cfg, s, data, &dir)?);
    }
    if reports.len() >= 2 {
        let (mean, sd) = aggregate_seeds(&reports)?;
        let mut s = String::new();
        for r in &reports {
            writeln!(s, "seed {} test_acc = {}", r.config.seed, r.final_test_acc).unwrap();
        }
        writeln!(s, "mean = {mean}\nsd = {sd}").unwrap();
        let p = cfg.out.join("seeds_summary.txt");
        fs::write(&p, &s).map_err(|e| Error::io(&p, e))?;
        println!("test_acc over {} seeds: {:.4} ± {:.4}", reports.len(), mean, sd);
    }
    Ok(reports)
}

/// Grid search over `grid_lambdas × grid_e_attns`.
pub fn cmd_grid(cfg: &RunConfig, jobs: usize) -> Result<GridResult> {
    cfg.check_inputs(true, &[])?;
    let (split, teachers) = prepared(cfg, cfg.train.seed)?;
    cfg.prepare_output()?;
    let grid = run_grid(&cfg.grid_lambdas, &cfg.grid_e_attns, &cfg.train, &split, &teachers, jobs)?;
    grid.write_heatmaps(&cfg.out)?;
    let mut cells = String::from("lambda0,e_attn,seed,best_optim_value,final_test_acc,error\n");
    for c in &grid.cells {
        let (acc, err) = match &c.outcome {
            Ok(r) => (r.final_test_acc.to_string(), String::new()),
            Err(e) => (String::new(), e.replace([',', '\n'], ";")),
        };
        writeln!(cells, "{},{},{},{:e},{acc},{err}", c.lambda0, c.e_attn, c.seed, c.best_optim_value()).unwrap();
    }
    let best = grid.best_cell();
    writeln!(cells, "# chosen lambda0={} e_attn={}", best.lambda0, best.e_attn).unwrap();
    let p = cfg.out.join("grid_cells.csv");
    fs::write(&p, cells).map_err(|e| Error::io(&p, e))?;
    println!(
        "chosen lambda0 = {}, e_attn = {} (best optim value {})",
        best.lambda0,
        best.e_attn,
        best.best_optim_value()
    );
    Ok(grid)
}

/// Test accuracy of `checkpoint` on the configured dataset.
pub fn cmd_eval(cfg: &RunConfig) -> Result<f64> {
    cfg.check_inputs(true, &[("checkpoint", &cfg.checkpoint)])?;
    let params = load_checkpoint(cfg.checkpoint.as_ref().expect("checked"))?;
    let split = load_split(cfg, cfg.train.seed)?;
    let teachers = load_teachers(cfg, &split)?;
    let res = evaluate(&params, &split.test, teachers.test.as_deref(), cfg.train.eps_kl)?;
    println!("test_acc = {}", res.accuracy);
    if let Some(a) = res.mean_attn {
        println!("test_attn = {a}");
    }
    Ok(res.accuracy)
}

/// Gray CAM at 28×28 by nearest-neighbor upsampling, scaled so the maximum
/// cell is white.
fn cam_panel(grid: &Tensor) -> Tensor {
    let side = grid.shape()[0];
    let scale = 28 / side;
    let max = grid.max_value();
    let mut data = Vec::with_capacity(3 * 784);
    for _ in 0..3 {
        for y in 0..28 {
            for x in 0..28 {
                data.push(grid.at(&[y / scale, x / scale]) / max);
            }
        }
    }
    Tensor::new(vec![3, 28, 28], data).expect("28x28 panel")
}

/// Concatenates `[3, H, W_i]` images left to right.
fn hconcat(panels: &[Tensor]) -> Tensor {
    let h = panels[0].shape()[1];
    let total_w: usize = panels.iter().map(|p| p.shape()[2]).sum();
    let mut out = Tensor::zeros(&[3, h, total_w]);
    let mut x0 = 0;
    for p in panels {
        let w = p.shape()[2];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out.set(&[c, y, x0 + x], p.at(&[c, y, x]));
                }
            }
        }
        x0 += w;
    }
    out
}

fn vconcat(rows: &[Tensor]) -> Tensor {
    let w = rows[0].shape()[2];
    let h: usize = rows.iter().map(|r| r.shape()[1]).sum();
    let mut data = vec![0.0; 3 * h * w];
    let mut y0 = 0;
    for r in rows {
        let rh = r.shape()[1];
        for c in 0..3 {
            let src = &r.data()[c * rh * w..(c + 1) * rh * w];
            data[c * h * w + y0 * w..c * h * w + (y0 + rh) * w].copy_from_slice(src);
        }
        y0 += rh;
    }
    Tensor::new(vec![3, h, w], data).expect("consistent widths")
}

/// Triptychs of (input, baseline CAM, aligned CAM) for the first
/// `saliency_count` test images, plus all of them stacked in one sheet.
pub fn cmd_saliency(cfg: &RunConfig) -> Result<()> {
    cfg.check_inputs(
        true,
        &[
            ("baseline_checkpoint", &cfg.baseline_checkpoint),
            ("aligned_checkpoint", &cfg.aligned_checkpoint),
        ],
    )?;
    let base = load_checkpoint(cfg.baseline_checkpoint.as_ref().expect("checked"))?;
    let aligned = load_checkpoint(cfg.aligned_checkpoint.as_ref().expect("checked"))?;
    let split = load_split(cfg, cfg.train.seed)?;
    cfg.prepare_output()?;
    let n = cfg.saliency_count.min(split.test.len());
    if n == 0 {
        return Err(Error::Config("saliency_count must be at least 1".into()));
    }
    let exs = &split.test[..n];
    let x = Tensor::stack(&exs.iter().map(|e| &e.image).collect::<Vec<_>>())?;
    let cams = |p: &ModelParams| -> Result<Vec<Tensor>> {
        let (_, feats) = model_infer(p, &x)?;
        (0..n)
            .map(|i| Ok(cam_from_features(&feats, &p.head, i, exs[i].label, cfg.train.eps_kl)?.grid().clone()))
            .collect()
    };
    let (base_cams, aligned_cams) = (cams(&base)?, cams(&aligned)?);
    let dir = cfg.out.join("saliency");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let row = hconcat(&[exs[i].image.clone(), cam_panel(&base_cams[i]), cam_panel(&aligned_cams[i])]);
        write_file(&dir.join(format!("triptych_{i:03}_y{}.ppm", exs[i].label)), &encode_ppm(&row)?)?;
        rows.push(row);
    }
    write_file(&dir.join("sheet.ppm"), &encode_ppm(&vconcat(&rows))?)?;
    println!("wrote {n} saliency triptychs to {}", dir.display());
    Ok(())
}
