use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vsr_core::backbone::{Generator, WindowModel};
use vsr_core::data::io::{load_flows, write_json, write_png};
use vsr_core::data::{
    clip_dir_name, list_clip_dirs, load_clip, save_clip, save_training_clip, DegradationConfig, SceneTemplate,
    TrainingClip, VideoClip,
};
use vsr_core::eval::{evaluate_clip, temporal_profile, write_summary_csv, EvalConfig, MetricReport};
use vsr_core::flow::FlowField;
use vsr_core::trainer::{infer_clip, required_padding, train, ClipFlows, FlowAlignment, TrainConfig};
use vsr_core::{Result, VsrError};

use crate::manifest::RunManifest;
use crate::overrides::resolve;
use crate::{EvalArgs, GenDataArgs, InferArgs, ProfileArgs, TrainArgs};

/// Contents of the `--scenes` file of `gen-data`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDataConfig {
    pub scenes: SceneTemplate,
    pub degradation: DegradationConfig,
}

fn read_config_file(path: &Path) -> Result<Value> {
    if !path.is_file() {
        return Err(VsrError::Config(format!("config file {} does not exist", path.display())));
    }
    let text = fs::read_to_string(path).map_err(|e| VsrError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| VsrError::Config(format!("{}: {e}", path.display())))
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(VsrError::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| VsrError::Config(format!("cannot start {jobs} worker threads: {e}")))
}

/// Appends the manifest when `dir` exists, then passes `result` through.
fn finish<T>(mut manifest: RunManifest, dir: &Path, result: Result<T>) -> Result<T> {
    if let Err(e) = &result {
        manifest.status = format!("error: {e}");
    }
    if dir.is_dir() {
        manifest.append(dir)?;
    }
    result
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Per-clip scene seed; distinct clips never share a draw.
fn clip_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

pub fn cmd_gen_data(a: &GenDataArgs, raw: Vec<String>) -> Result<Value> {
    let mut m = RunManifest::start("gen-data", raw);
    m.seed = Some(a.seed);
    let base = match &a.scenes {
        Some(p) => {
            m.inputs.push(p.clone());
            read_config_file(p)?
        }
        None => json!({}),
    };
    let mut cfg: GenDataConfig = resolve(base, &a.sets)?;
    cfg.scenes.validate()?;
    cfg.degradation.seed ^= a.seed;
    cfg.degradation.validate()?;
    m.config = to_value(&cfg);
    let pool = thread_pool(a.jobs)?;
    fs::create_dir_all(&a.out).map_err(|e| VsrError::io(&a.out, e))?;
    let result = pool.install(|| {
        (0..a.count)
            .into_par_iter()
            .map(|i| {
                let spec = cfg.scenes.sample(clip_seed(a.seed, i));
                let (clip, params) = TrainingClip::synthesize(&spec, &cfg.degradation)?;
                let dir = a.out.join(clip_dir_name(i));
                save_training_clip(&dir, &clip, &spec, &params)?;
                Ok(dir)
            })
            .collect::<Result<Vec<PathBuf>>>()
    });
    if let Ok(dirs) = &result {
        m.outputs = dirs.clone();
    }
    let dirs = finish(m, &a.out, result)?;
    Ok(json!({ "command": "gen-data", "clips": dirs.len(), "out": a.out }))
}

pub fn cmd_train(a: &TrainArgs, raw: Vec<String>) -> Result<Value> {
    let mut m = RunManifest::start("train", raw);
    let base = match (&a.config, &a.resume) {
        (Some(p), _) => {
            m.inputs.push(p.clone());
            read_config_file(p)?
        }
        (None, Some(_)) if a.out.join("config.json").is_file() => read_config_file(&a.out.join("config.json"))?,
        _ => json!({}),
    };
    let mut cfg: TrainConfig = resolve(base, &a.sets)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ab = &mut cfg.ablation;
    ab.temporal_loss &= !a.no_temporal_loss;
    ab.recurrent &= !a.no_recurrent;
    ab.latent_disc &= !a.no_latent_disc;
    ab.pixel_disc &= !a.no_pixel_disc;
    cfg.validate()?;
    m.seed = Some(cfg.seed);
    m.config = to_value(&cfg);
    m.inputs.push(a.data.clone());
    if let Some(r) = &a.resume {
        m.inputs.push(r.clone());
    }
    let result = train(&cfg, &a.data, &a.out, a.resume.as_deref());
    if let Ok(s) = &result {
        m.outputs = vec![s.checkpoint.clone(), a.out.join("metrics.jsonl")];
    }
    let s = finish(m, &a.out, result)?;
    Ok(json!({
        "command": "train",
        "checkpoint": s.checkpoint,
        "steps_run": s.steps_run,
        "final_step": s.final_step,
        "final_epoch": s.final_epoch,
    }))
}

fn generator_dir(ckpt: &Path) -> PathBuf {
    let nested = ckpt.join("generator");
    if nested.join("config.json").is_file() {
        nested
    } else {
        ckpt.to_path_buf()
    }
}

/// A clip directory, or the `sub` clip of a training clip directory.
fn clip_in(dir: &Path, sub: &str) -> PathBuf {
    if dir.join("manifest.json").is_file() {
        dir.to_path_buf()
    } else {
        dir.join(sub)
    }
}

fn is_single_clip(dir: &Path, sub: &str) -> bool {
    clip_in(dir, sub).join("manifest.json").is_file()
}

fn infer_one(generator: &Generator, lr: &VideoClip, recurrent: bool) -> Result<VideoClip> {
    let (h, w, _) = lr.shape();
    let mult = generator.config().size_multiple();
    let (ph, pw) = required_padding(h, w, mult);
    if ph != 0 || pw != 0 {
        return Err(VsrError::Config(format!(
            "LR frames are {h}x{w} but must be a multiple of {mult}; pad by {ph} rows and {pw} columns (to {}x{})",
            h + ph,
            w + pw
        )));
    }
    let flows = ClipFlows::estimate(lr.frames())?;
    let align = FlowAlignment { items: vec![&flows] };
    infer_clip(generator, lr, &align, recurrent)
}

pub fn cmd_infer(a: &InferArgs, raw: Vec<String>) -> Result<Value> {
    let mut m = RunManifest::start("infer", raw);
    let gdir = generator_dir(&a.ckpt);
    m.inputs = vec![gdir.clone(), a.input.clone()];
    let generator = Generator::load(&gdir)?;
    let recurrent = !a.no_recurrent;
    m.config = json!({ "recurrent": recurrent, "model": to_value(generator.config()) });
    let jobs: Vec<(PathBuf, PathBuf)> = if is_single_clip(&a.input, "lr") {
        vec![(clip_in(&a.input, "lr"), a.out.clone())]
    } else {
        let dirs = list_clip_dirs(&a.input)?;
        if dirs.is_empty() {
            return Err(VsrError::Config(format!("{} holds no clip", a.input.display())));
        }
        dirs.iter()
            .map(|d| (clip_in(d, "lr"), a.out.join(d.file_name().expect("clip dir name"))))
            .collect()
    };
    let lrs = jobs.iter().map(|(src, _)| load_clip(src)).collect::<Result<Vec<_>>>()?;
    let result = (|| {
        let mut frames = 0;
        for ((_, dst), lr) in jobs.iter().zip(&lrs) {
            let sr = infer_one(&generator, lr, recurrent)?;
            frames += sr.len();
            save_clip(&sr, dst)?;
        }
        Ok(frames)
    })();
    m.outputs = jobs.iter().map(|(_, d)| d.clone()).collect();
    let frames = finish(m, &a.out, result)?;
    Ok(json!({
        "command": "infer",
        "clips": jobs.len(),
        "frames": frames,
        "recurrent": recurrent,
        "context_radius": generator.context_radius(),
        "out": a.out,
    }))
}

fn load_eval_pair(sr_dir: &Path, gt_dir: &Path, flows_dir: Option<&Path>) -> Result<(VideoClip, VideoClip, Option<Vec<FlowField>>)> {
    let sr = load_clip(&clip_in(sr_dir, "hr"))?;
    let gt = load_clip(&clip_in(gt_dir, "hr"))?;
    let flows = match flows_dir {
        Some(f) => Some(load_flows(f)?),
        None if gt_dir.join("flow_bwd").is_dir() => Some(load_flows(&gt_dir.join("flow_bwd"))?),
        None => None,
    };
    if sr.len() != gt.len() {
        return Err(VsrError::Contract(format!(
            "{} has {} frames but {} has {}",
            sr_dir.display(),
            sr.len(),
            gt_dir.display(),
            gt.len()
        )));
    }
    Ok((sr, gt, flows))
}

fn evaluate_dirs(sr_dir: &Path, gt_dir: &Path, flows_dir: Option<&Path>, cfg: &EvalConfig) -> Result<MetricReport> {
    let (sr, gt, flows) = load_eval_pair(sr_dir, gt_dir, flows_dir)?;
    evaluate_clip(&sr, &gt, flows.as_deref(), cfg)
}

pub fn cmd_eval(a: &EvalArgs, raw: Vec<String>) -> Result<Value> {
    let mut m = RunManifest::start("eval", raw);
    let mut cfg: EvalConfig = resolve(json!({}), &a.sets)?;
    cfg.quantize_8bit |= a.quantize_8bit;
    m.config = to_value(&cfg);
    m.inputs = vec![a.sr.clone(), a.gt.clone()];
    if is_single_clip(&a.sr, "hr") {
        let report = evaluate_dirs(&a.sr, &a.gt, a.flows.as_deref(), &cfg)?;
        let parent = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| VsrError::io(parent, e))?;
        let result = write_json(&a.out, &report);
        m.outputs = vec![a.out.clone()];
        finish(m, parent, result)?;
        return Ok(json!({ "command": "eval", "clips": 1, "report": report }));
    }
    let sr_dirs = list_clip_dirs(&a.sr)?;
    let names: Vec<_> = sr_dirs.iter().map(|d| d.file_name().expect("clip dir name").to_owned()).collect();
    for n in &names {
        if !a.gt.join(n).is_dir() {
            return Err(VsrError::Contract(format!(
                "{} has no ground truth for {}",
                a.gt.display(),
                n.to_string_lossy()
            )));
        }
    }
    let pool = thread_pool(a.jobs)?;
    let reports = pool.install(|| {
        names
            .par_iter()
            .map(|n| {
                let flows = a.flows.as_ref().map(|f| f.join(n));
                evaluate_dirs(&a.sr.join(n), &a.gt.join(n), flows.as_deref(), &cfg)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    fs::create_dir_all(&a.out).map_err(|e| VsrError::io(&a.out, e))?;
    let result = (|| {
        for (n, r) in names.iter().zip(&reports) {
            write_json(&a.out.join(format!("{}.json", n.to_string_lossy())), r)?;
        }
        write_summary_csv(&a.out.join("summary.csv"), &reports)
    })();
    m.outputs = vec![a.out.join("summary.csv")];
    finish(m, &a.out, result)?;
    Ok(json!({ "command": "eval", "clips": reports.len(), "summary": a.out.join("summary.csv") }))
}

pub fn cmd_profile(a: &ProfileArgs, raw: Vec<String>) -> Result<Value> {
    let mut m = RunManifest::start("profile", raw);
    m.config = json!({ "row": a.row });
    let src = clip_in(&a.clip, "hr");
    m.inputs = vec![src.clone()];
    let clip = load_clip(&src)?;
    let profile = temporal_profile(&clip, a.row)?;
    let parent = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| VsrError::io(parent, e))?;
    let result = write_png(&a.out, &profile, 8);
    m.outputs = vec![a.out.clone()];
    finish(m, parent, result)?;
    let (h, w, _) = profile.shape();
    Ok(json!({ "command": "profile", "rows": h, "width": w, "out": a.out }))
}
