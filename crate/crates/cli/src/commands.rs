//! One function per subcommand. Each writes its artifacts into `dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hvm_core::evalkit::{
    above_trend, fit_loglinear, sample_kshot, subset_report, topk_accuracy, tsne, FewShotSpec, Registry,
    ScalingPoint, TsneOptions,
};
use hvm_core::numcore::{read_checkpoint, Checkpoint, Tensor};
use hvm_core::par::Exec;
use hvm_core::stmae::{ModelParts, ParamStore, StMae};
use hvm_core::synth::{synthgen, LabelSet, Split, SynthSpec, SynthTask};
use hvm_core::trainloop::{
    eval_logits, finetune, pretrain, resume_pretrain, FinetuneData, FinetuneInit, FinetuneOptions, LoopOptions,
    PretrainData, PretrainOptions, RunRecord, Schedule,
};
use hvm_core::vidpipe::{
    build_manifest, classify_segment, manifest_stats, Manifest, RawClip, SegmentStatus, RAWCLIP_EXTENSION,
};

use crate::config::{path_of, RunConfig};

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub dir: &'a Path,
    pub exec: Exec,
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn schedule(text: &str) -> Result<Schedule> {
    text.parse().map_err(|e| anyhow!("{e}"))
}

fn looping(ctx: &Ctx, schedule: Schedule) -> LoopOptions {
    LoopOptions {
        optimizer: ctx.cfg.optimizer(),
        warmup_steps: ctx.cfg.optim.warmup_steps,
        exec: ctx.exec,
        ..LoopOptions::new(schedule, ctx.cfg.seed)
    }
}

fn read_png_frames(dir: &Path, fps: f64) -> Result<RawClip> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    frames.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    frames.sort();
    if frames.is_empty() {
        bail!("{}: no PNG frames", dir.display());
    }
    let mut pixels = Vec::new();
    let mut dims = None;
    for f in &frames {
        let img = image::open(f).with_context(|| format!("decoding {}", f.display()))?.to_rgb8();
        let (w, h) = img.dimensions();
        if *dims.get_or_insert((w, h)) != (w, h) {
            bail!("{}: frame size {w}x{h} differs from the first frame", f.display());
        }
        for c in 0..3 {
            pixels.extend(img.pixels().map(|p| p.0[c]));
        }
    }
    let (w, h) = dims.expect("at least one frame");
    Ok(RawClip::new(frames.len(), 3, h as usize, w as usize, fps as f32, pixels)?)
}

pub fn ingest(ctx: &Ctx) -> Result<String> {
    let ing = &ctx.cfg.ingest;
    let root = path_of("ingest.root", &ing.root)?;
    let scan_root = if ing.frame_dirs {
        let clips = ctx.dir.join("clips");
        fs::create_dir_all(&clips)?;
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
            .with_context(|| format!("reading {}", root.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        dirs.retain(|p| p.is_dir());
        dirs.sort();
        for d in dirs {
            let clip = read_png_frames(&d, ing.fps)?;
            let name = d.file_name().expect("directory name").to_string_lossy();
            clip.write(&clips.join(format!("{name}.{RAWCLIP_EXTENSION}")))?;
        }
        clips
    } else {
        root
    };
    let scan = build_manifest(&scan_root)?;
    let mut kept = Manifest::default();
    let mut rejected: Vec<(PathBuf, String)> = scan.rejected;
    for e in scan.manifest.entries {
        match classify_segment(&e.path, ing.blank_threshold) {
            SegmentStatus::Ok => kept.entries.push(e),
            SegmentStatus::Blank => rejected.push((e.path, "blank".into())),
            SegmentStatus::Corrupted(why) => rejected.push((e.path, why)),
        }
    }
    kept.save(&ctx.dir.join("manifest.tsv"))?;
    let mut rej = String::new();
    for (p, why) in &rejected {
        writeln!(rej, "{}\t{why}", p.display())?;
    }
    write(&ctx.dir.join("rejected.tsv"), rej)?;
    let mut stats = String::new();
    if !kept.is_empty() {
        let s = manifest_stats(&kept)?;
        writeln!(stats, "segments\t{}", kept.len())?;
        writeln!(stats, "total_hours\t{}", s.total_hours)?;
        writeln!(stats, "mean_segment_minutes\t{}", s.mean_segment_minutes)?;
        for (src, h) in &s.per_source_hours {
            writeln!(stats, "source_hours\t{src}\t{h}")?;
        }
    }
    write(&ctx.dir.join("stats.txt"), &stats)?;
    Ok(format!("{} segments kept, {} rejected", kept.len(), rejected.len()))
}

pub fn synth(ctx: &Ctx) -> Result<String> {
    let s = &ctx.cfg.synth;
    let task = SynthTask::parse(&s.task, s.classes)?;
    let m = &ctx.cfg.model;
    let spec = SynthSpec {
        frames: m.frames,
        size: m.size,
        channels: m.channels,
        fps: ctx.cfg.data.target_fps as f32,
        test_every: s.test_every,
        ..SynthSpec::new(task, s.n, ctx.cfg.seed)
    };
    let out = synthgen(&spec, ctx.dir)?;
    Ok(format!(
        "{} clips of {} ({} classes) in {}",
        out.manifest.len(),
        task.name(),
        task.n_classes(),
        ctx.dir.display()
    ))
}

pub fn pretrain_cmd(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let manifest = Manifest::load(&path_of("data.manifest", &cfg.data.manifest)?)?;
    let data = PretrainData::from_manifest(&manifest)?;
    let opts = PretrainOptions {
        model: cfg.model_config(None)?,
        sample: cfg.sample_params(),
        batch_size: cfg.pretrain.batch_size,
        repeat_factor: cfg.pretrain.repeat_factor,
        looping: looping(ctx, schedule(&cfg.pretrain.schedule)?),
    };
    let (record, _) = if cfg.pretrain.resume.is_empty() {
        pretrain(&opts, &data, ctx.dir)?
    } else {
        resume_pretrain(Path::new(&cfg.pretrain.resume), &opts, &data, ctx.dir)?
    };
    record.save(&ctx.dir.join("record.txt"))?;
    let last = record.epochs.last().map_or("none".to_string(), |e| format!("{:.6}", e.loss));
    Ok(format!("{} epochs, final loss {last}", record.epochs.len()))
}

fn labels(cfg: &RunConfig) -> Result<LabelSet> {
    Ok(LabelSet::load(&path_of("data.labels", &cfg.data.labels)?)?)
}

fn metrics_text(logits: &Tensor, labels: &[usize], n_classes: usize) -> Result<String> {
    let mut out = String::new();
    for k in [1, 5] {
        if k <= n_classes {
            writeln!(out, "top{k}\t{}", topk_accuracy(logits, labels, k)?)?;
        }
    }
    writeln!(out, "chance_top1\t{}", 1.0 / n_classes as f64)?;
    writeln!(out, "n\t{}", labels.len())?;
    Ok(out)
}

pub fn finetune_cmd(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let set = labels(cfg)?;
    let train_all: Vec<_> = set.split(Split::Train).collect();
    let train_labels: Vec<usize> = train_all.iter().map(|e| e.label).collect();
    let spec = FewShotSpec {
        k: cfg.finetune.k,
        classes: (0..set.n_classes).collect(),
        seed: cfg.seed,
    };
    let shot = sample_kshot(&train_labels, &spec)?;
    for w in shot.warnings() {
        eprintln!("warning: {w}");
    }
    let chosen: Vec<_> = shot.indices.iter().map(|&i| train_all[i]).collect();
    let mut listing = String::new();
    for e in &chosen {
        writeln!(listing, "{}\t{}", e.path.display(), e.label)?;
    }
    write(&ctx.dir.join("kshot.tsv"), listing)?;
    let train = FinetuneData::from_entries(chosen, set.n_classes)?;
    let test = FinetuneData::from_entries(set.split(Split::Test), set.n_classes)?;
    let opts = FinetuneOptions {
        model: cfg.model_config(Some(set.n_classes))?,
        sample: cfg.sample_params(),
        augment: cfg.augment(),
        batch_size: cfg.finetune.batch_size,
        looping: looping(ctx, schedule(&cfg.finetune.schedule)?),
    };
    let ckpt;
    let init = if cfg.finetune.init.is_empty() {
        FinetuneInit::Scratch
    } else {
        ckpt = read_checkpoint(Path::new(&cfg.finetune.init))?;
        FinetuneInit::Pretrained(&ckpt)
    };
    let eval = (!test.is_empty()).then_some(&test);
    let (record, state) = finetune(init, &train, eval, &opts, ctx.dir)?;
    record.save(&ctx.dir.join("record.txt"))?;
    let mut summary = format!("{} training clips", train.len());
    if let Some(test) = eval {
        let logits = eval_logits(&state.model, test, &opts.sample, ctx.exec)?;
        let text = metrics_text(&logits, &test.labels, test.n_classes)?;
        write(&ctx.dir.join("metrics.txt"), &text)?;
        summary.push_str(&format!("; test {}", text.lines().next().unwrap_or("")));
    }
    Ok(summary)
}

/// Encoder (and head, when the checkpoint has one) from a `model/…` checkpoint.
fn model_from(cfg: &RunConfig, ckpt: &Checkpoint, n_classes: Option<usize>) -> Result<StMae> {
    let head = n_classes.is_some() && ckpt.get("model/head.w").is_some();
    let config = cfg.model_config(n_classes.filter(|_| head))?;
    let mut params = ParamStore::init(&config, ModelParts { decoder: false, head }, 0)?;
    let wanted = params.len();
    let loaded = params.load_matching(ckpt, "model/", None)?;
    if loaded != wanted {
        bail!("checkpoint provides {loaded} of the {wanted} tensors this model needs");
    }
    Ok(StMae::from_params(config, params)?)
}

fn checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    Ok(read_checkpoint(&path_of("eval.checkpoint", &cfg.eval.checkpoint)?)?)
}

pub fn eval(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let set = labels(cfg)?;
    let model = model_from(cfg, &checkpoint(cfg)?, Some(set.n_classes))?;
    if !model.has_head() {
        bail!("eval.checkpoint has no classification head; finetune first");
    }
    let test = FinetuneData::from_entries(set.split(Split::Test), set.n_classes)?;
    if test.is_empty() {
        bail!("label file has no test split");
    }
    let logits = eval_logits(&model, &test, &cfg.sample_params(), ctx.exec)?;
    let mut text = metrics_text(&logits, &test.labels, test.n_classes)?;
    if !cfg.eval.subset_classes.is_empty() {
        let k = 5.min(test.n_classes);
        let r = subset_report(&logits, &test.labels, &cfg.eval.subset_classes, k)?;
        writeln!(text, "subset_top{k}\t{}", r.subset_acc)?;
        match r.rest_acc {
            Some(v) => writeln!(text, "rest_top{k}\t{v}")?,
            None => writeln!(text, "rest_top{k}\tabsent")?,
        }
    }
    write(&ctx.dir.join("metrics.txt"), &text)?;
    let mut preds = String::from("index,label,prediction\n");
    for (i, &y) in test.labels.iter().enumerate() {
        let row = logits.row(i);
        let p = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        writeln!(preds, "{i},{y},{p}")?;
    }
    write(&ctx.dir.join("predictions.csv"), preds)?;
    Ok(text.lines().next().unwrap_or_default().to_string())
}

pub fn embed(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let set = labels(cfg)?;
    let model = model_from(cfg, &checkpoint(cfg)?, None)?;
    let data = FinetuneData::from_entries(&set.entries, set.n_classes)?;
    let sample = cfg.sample_params();
    let rows = hvm_core::par::map_indexed(ctx.exec, data.len(), |i| -> Result<Tensor> {
        let clip = hvm_core::vidpipe::sample_clip_at(&data.clips[i], "", 0, &sample)?;
        Ok(model.embed(&clip.frames)?)
    });
    let mut csv = String::new();
    for (i, r) in rows.into_iter().enumerate() {
        let v = r?;
        let values: Vec<String> = v.data().iter().map(|x| format!("{x:e}")).collect();
        writeln!(csv, "{i},{},{}", data.labels[i], values.join(","))?;
    }
    write(&ctx.dir.join("embeddings.csv"), csv)?;
    Ok(format!("{} embeddings", data.len()))
}

fn read_embeddings(path: &Path) -> Result<(Tensor, Vec<usize>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut data, mut labels, mut dim) = (Vec::new(), Vec::new(), None);
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 3 {
            bail!("{}:{}: expected index,label,values…", path.display(), n + 1);
        }
        labels.push(f[1].parse().with_context(|| format!("line {}", n + 1))?);
        let row: Vec<f64> = f[2..].iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
        if *dim.get_or_insert(row.len()) != row.len() {
            bail!("{}:{}: ragged embedding row", path.display(), n + 1);
        }
        data.extend(row);
    }
    let d = dim.ok_or_else(|| anyhow!("{}: no embeddings", path.display()))?;
    Ok((Tensor::new([labels.len(), d], data)?, labels))
}

pub fn tsne_cmd(ctx: &Ctx) -> Result<String> {
    let t = &ctx.cfg.tsne;
    let (x, labels) = read_embeddings(&path_of("tsne.embeddings", &t.embeddings)?)?;
    let opts = TsneOptions {
        perplexity: t.perplexity,
        iters: t.iters,
        seed: ctx.cfg.seed,
        early_exaggeration: t.early_exaggeration,
        exaggeration_iters: t.exaggeration_iters,
        learning_rate: None,
        exec: ctx.exec,
    };
    let r = tsne(&x, &opts)?;
    let mut csv = String::from("index,x,y,label\n");
    for (i, l) in labels.iter().enumerate() {
        let p = r.coords.row(i);
        writeln!(csv, "{i},{:e},{:e},{l}", p[0], p[1])?;
    }
    write(&ctx.dir.join("tsne.csv"), csv)?;
    write(
        &ctx.dir.join("kl.txt"),
        format!("kl_first\t{:e}\nkl_final\t{:e}\njittered\t{}\n", r.kl_first, r.kl_final, r.jittered),
    )?;
    Ok(format!("KL {:.4} -> {:.4}", r.kl_first, r.kl_final))
}

fn read_points(path: &Path) -> Result<Vec<ScalingPoint>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() < 2 {
                bail!("{}:{}: expected hours<TAB>accuracy[<TAB>condition]", path.display(), n + 1);
            }
            Ok(ScalingPoint::new(
                f[0].trim().parse()?,
                f[1].trim().parse()?,
                f.get(2).map_or("", |s| s.trim()),
            ))
        })
        .collect()
}

pub fn fit_scaling(ctx: &Ctx) -> Result<String> {
    let s = &ctx.cfg.scaling;
    let points = read_points(&path_of("scaling.points", &s.points)?)?;
    let fit = fit_loglinear(&points)?;
    let mut out = String::new();
    writeln!(out, "slope_per_decade\t{:e}", fit.slope)?;
    writeln!(out, "intercept\t{:e}", fit.intercept)?;
    if let (Some(a), Some(b)) = (fit.slope_ci(), fit.intercept_ci()) {
        writeln!(out, "slope_ci95\t{:e}\t{:e}", a.0, a.1)?;
        writeln!(out, "intercept_ci95\t{:e}\t{:e}", b.0, b.1)?;
    }
    for (p, r) in points.iter().zip(&fit.residuals) {
        writeln!(out, "residual\t{}\t{:e}", p.data_hours, r)?;
    }
    if !s.candidates.is_empty() {
        for c in read_points(Path::new(&s.candidates))? {
            let pred = fit.predict(c.data_hours);
            writeln!(
                out,
                "candidate\t{}\t{}\t{}\tabove_trend={}\textrapolated={}",
                c.data_hours,
                c.accuracy,
                c.condition,
                above_trend(&c, &fit),
                pred.extrapolated
            )?;
        }
    }
    write(&ctx.dir.join("fit.txt"), &out)?;
    Ok(format!("slope {:.4}/decade, intercept {:.4}", fit.slope, fit.intercept))
}

pub fn report(ctx: &Ctx) -> Result<String> {
    let reg = Registry::bundled();
    let mut md = String::from("# Desk-scale results and published values\n\n");
    md.push_str(
        "The two tables below are NOT comparable. Published numbers come from \
         633M-parameter encoders pretrained on thousands of hours of video and \
         evaluated on SSV2, Kinetics and ImageNet. Desk-scale numbers come from \
         small models trained for minutes on synthetic clips.\n\n",
    );
    md.push_str("## Desk-scale runs\n\n| run | metric | value |\n|---|---|---|\n");
    let mut n_runs = 0;
    for run in &ctx.cfg.report.runs {
        let dir = Path::new(run);
        let metrics = dir.join("metrics.txt");
        let text = fs::read_to_string(&metrics).with_context(|| format!("reading {}", metrics.display()))?;
        let name = dir.file_name().map_or(run.clone(), |n| n.to_string_lossy().into_owned());
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('\t') {
                writeln!(md, "| {name} | {k} | {v} |")?;
            }
        }
        if let Ok(rec) = RunRecord::load(&dir.join("record.txt")) {
            if let Some(last) = rec.epochs.last() {
                writeln!(md, "| {name} | final train loss | {:.6} |", last.loss)?;
            }
        }
        n_runs += 1;
    }
    md.push_str("\n## Published top-5 accuracy (%)\n\n| benchmark | condition | model | top-5 % |\n|---|---|---|---|\n");
    for e in reg.entries() {
        writeln!(md, "| {} | {} | {} | {:.1} |", e.benchmark, e.condition, e.model, e.percent)?;
    }
    write(&ctx.dir.join("report.md"), md)?;
    Ok(format!("report over {n_runs} runs and {} published values", reg.entries().len()))
}
