use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};

use super::config::LabConfig;
use super::{Command, Common};
use crate::attacks::AttackConfig;
use crate::benchgen::{compute_stats, generate_dataset, read_shards, write_shards, DatasetStats, SampleRecord};
use crate::cpsim::{derive_seed, train_detector_logged, DetectorModel, Perception};
use crate::eval::{
    classification_metrics, consensus_baseline, eval_frames, evaluate_detection, fps_benchmark, leave_one_out,
    pair_distance_samples, pair_distances, plot, receive, write_csv, AttackScenario, Defense, Metric, MetricsReport,
    ReceivedFrame, SliceMetrics,
};
use crate::guard::{defend, score_records, train_guard_logged, GuardModel, GuardScores};

struct Ctx {
    name: &'static str,
    cfg: LabConfig,
    seed: u64,
    digest: String,
    out: PathBuf,
    start: Instant,
}

impl Ctx {
    fn new(name: &'static str, common: &Common) -> Result<Self> {
        let cfg = LabConfig::load(common.config.as_deref(), &common.overrides)?;
        let seed = common.seed.or(cfg.seed).unwrap_or(0);
        let digest = cfg.digest(seed)?;
        fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
        fs::write(common.out.join("config.toml"), cfg.to_toml()?)?;
        eprintln!("cpguard {name}: seed={seed} config_digest={digest}");
        Ok(Self { name, cfg, seed, digest, out: common.out.clone(), start: Instant::now() })
    }

    fn report(&self) -> MetricsReport {
        MetricsReport::new(self.name, self.seed, &self.digest)
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn svg(&self, file: &str, body: String) -> Result<()> {
        fs::write(self.path(file), body).with_context(|| format!("writing {file}"))
    }

    fn finish(&self, report: &MetricsReport) -> Result<()> {
        report.save(&self.path("report.toml"))?;
        let timing = format!("command = \"{}\"\nelapsed_seconds = {}\n", self.name, self.start.elapsed().as_secs_f64());
        fs::write(self.path("timing.toml"), timing)?;
        eprintln!("cpguard {}: report written to {}", self.name, self.path("report.toml").display());
        Ok(())
    }
}

pub(super) fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::TrainDetector { common } => train_detector(Ctx::new("train-detector", &common)?),
        Command::GenData { common, detector } => gen_data(Ctx::new("gen-data", &common)?, &detector),
        Command::Stats { common, data } => stats(Ctx::new("stats", &common)?, &data),
        Command::TrainGuard { common, data } => train_guard_cmd(Ctx::new("train-guard", &common)?, &data),
        Command::Attack { common, detector } => attack(Ctx::new("attack", &common)?, &detector),
        Command::Eval { common, detector, guard, data } => eval(Ctx::new("eval", &common)?, &detector, &guard, data.as_deref()),
        Command::BenchFps { common, detector, guard } => bench_fps(Ctx::new("bench-fps", &common)?, &detector, &guard),
        Command::LeaveOneOut { common, data } => loo(Ctx::new("leave-one-out", &common)?, &data),
    }
}

fn load_detector(path: &Path) -> Result<DetectorModel> {
    DetectorModel::load(path).with_context(|| format!("loading detector {}", path.display()))
}

fn load_guard(path: &Path) -> Result<GuardModel> {
    GuardModel::load(path).with_context(|| format!("loading guard {}", path.display()))
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn train_detector(ctx: Ctx) -> Result<()> {
    let c = &ctx.cfg;
    let frames = eval_frames(&c.frame, c.detector.train_frames, c.detector.agents, derive_seed(ctx.seed, 1))?;
    let train = crate::cpsim::DetectorTrainConfig { seed: ctx.seed, ..c.detector.train.clone() };
    let (model, losses) = train_detector_logged(&frames, c.frame.pipeline.clone(), &train)?;
    model.save(&ctx.path("detector.ckpt"))?;
    let test = eval_frames(&c.frame, c.detector.eval_frames, c.detector.agents, derive_seed(ctx.seed, 2))?;
    let clean = evaluate_detection(&model, &test, None, Defense::None, c.attack.score_threshold, ctx.seed)?;
    let mut r = ctx.report();
    r.ap_050 = clean.ap_050.into();
    r.ap_070 = clean.ap_070.into();
    r.extra.insert("final_loss".into(), losses.last().map(|&l| l as f64).into());
    let rows: Vec<Vec<String>> = losses.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), fmt(*l as f64)]).collect();
    write_csv(&ctx.path("loss.csv"), &["epoch", "loss"], &rows)?;
    let pts = losses.iter().enumerate().map(|(i, &l)| ((i + 1) as f64, l as f64)).collect();
    ctx.svg("loss.svg", plot::line_chart("Detector training loss", "epoch", "loss", &[("loss", pts)]))?;
    println!("detector AP@0.5 {:.4}  AP@0.7 {:.4}", clean.ap_050, clean.ap_070);
    ctx.finish(&r)
}

fn print_stats(s: &DatasetStats) {
    println!("frames {}  records {}", s.frames, s.records);
    println!("collaborators per frame:");
    for (k, v) in &s.collaborator_counts {
        println!("  {k}: {v} ({:.1}%)", 100.0 * *v as f64 / s.frames.max(1) as f64);
    }
    println!("attack types (attacked records):");
    for (k, v) in s.attack_type_shares() {
        println!("  {k}: {} ({:.1}%)", s.attack_types[&k], 100.0 * v);
    }
    println!("benign records: {}", s.attack_types.get("none").copied().unwrap_or(0));
    println!("attack ratio: min {:.2}  mean {:.2}  max {:.2}", s.attack_ratio_min, s.attack_ratio_mean, s.attack_ratio_max);
}

fn stats_outputs(ctx: &Ctx, s: &DatasetStats, r: &mut MetricsReport) -> Result<()> {
    r.extra.insert("frames".into(), (s.frames as f64).into());
    r.extra.insert("records".into(), (s.records as f64).into());
    r.extra.insert("attack_ratio_min".into(), s.attack_ratio_min.into());
    r.extra.insert("attack_ratio_mean".into(), s.attack_ratio_mean.into());
    r.extra.insert("attack_ratio_max".into(), s.attack_ratio_max.into());
    for (k, v) in &s.collaborator_counts {
        r.extra.insert(format!("collaborators_{k}"), (*v as f64).into());
    }
    for (k, v) in &s.attack_types {
        r.per_attack.insert(k.clone(), SliceMetrics { samples: *v, ..SliceMetrics::default() });
    }
    let rows: Vec<Vec<String>> = s.collaborator_counts.iter().map(|(k, v)| vec![k.clone(), v.to_string()]).collect();
    write_csv(&ctx.path("collaborators.csv"), &["collaborators", "frames"], &rows)?;
    let rows: Vec<Vec<String>> = s.attack_types.iter().map(|(k, v)| vec![k.clone(), v.to_string()]).collect();
    write_csv(&ctx.path("attack_types.csv"), &["attack", "records"], &rows)?;
    let bars: Vec<(&str, f64)> = s.collaborator_counts.iter().map(|(k, v)| (k.as_str(), *v as f64)).collect();
    ctx.svg("collaborators.svg", plot::bar_chart("Collaborators per frame", "frames", &bars))?;
    let shares = s.attack_type_shares();
    let bars: Vec<(&str, f64)> = shares.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    ctx.svg("attack_types.svg", plot::bar_chart("Attack types", "share", &bars))?;
    Ok(())
}

fn gen_data(ctx: Ctx, detector: &Path) -> Result<()> {
    let det = load_detector(detector)?;
    let gen = crate::benchgen::GenConfig { frame: ctx.cfg.frame.clone(), ..ctx.cfg.gen.clone() };
    if gen.frame.pipeline != det.config {
        bail!("the [frame.pipeline] section does not match the detector checkpoint");
    }
    let ds = generate_dataset(&det, &gen, ctx.seed)?;
    write_shards(&ds, &ctx.out)?;
    let mut r = ctx.report();
    stats_outputs(&ctx, &ds.manifest.stats, &mut r)?;
    print_stats(&ds.manifest.stats);
    ctx.finish(&r)
}

fn stats(ctx: Ctx, data: &Path) -> Result<()> {
    let ds = read_shards(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let s = compute_stats(&ds.records);
    let mut r = ctx.report();
    stats_outputs(&ctx, &s, &mut r)?;
    print_stats(&s);
    ctx.finish(&r)
}

/// Per-attack slices of a classified record set; `none` holds the benign
/// records.
fn attack_slices(records: &[SampleRecord], scores: &GuardScores, threshold: f32) -> Result<BTreeMap<String, SliceMetrics>> {
    let verdicts = scores.verdicts(threshold);
    let mut groups: BTreeMap<String, (Vec<bool>, Vec<bool>)> = BTreeMap::new();
    for (rec, (&v, &l)) in records.iter().zip(verdicts.iter().zip(&scores.labels)) {
        let key = rec.attack.map_or("none".to_string(), |k| k.to_string());
        let g = groups.entry(key).or_default();
        g.0.push(v);
        g.1.push(l);
    }
    groups
        .into_iter()
        .map(|(k, (v, l))| Ok((k, SliceMetrics::from_classification(&classification_metrics(&v, &l)?))))
        .collect()
}

fn train_guard_cmd(ctx: Ctx, data: &Path) -> Result<()> {
    let ds = read_shards(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let g = &ctx.cfg.guard;
    let (model, hist) = train_guard_logged(ds.train(), g, ctx.seed)?;
    model.save(&ctx.path("guard.ckpt"))?;
    let mut r = ctx.report();
    if !ds.val().is_empty() {
        let s = score_records(&model, ds.val())?;
        let m = classification_metrics(&s.verdicts(g.threshold), &s.labels)?;
        r.extra.insert("val_accuracy".into(), m.accuracy.into());
    }
    let s = score_records(&model, ds.test())?;
    r.set_classification(&classification_metrics(&s.verdicts(g.threshold), &s.labels)?);
    r.per_attack = attack_slices(ds.test(), &s, g.threshold)?;
    let d = pair_distances(&s.embeddings, &s.labels)?;
    r.extra.insert("distance_positive".into(), d.positive.into());
    r.extra.insert("distance_negative".into(), d.negative.into());
    let rows: Vec<Vec<String>> = (0..hist.loss.len())
        .map(|i| vec![(i + 1).to_string(), fmt(hist.loss[i] as f64), fmt(hist.cross_entropy[i] as f64), fmt(hist.dcc[i] as f64)])
        .collect();
    write_csv(&ctx.path("history.csv"), &["epoch", "loss", "cross_entropy", "dcc"], &rows)?;
    let pts = |v: &[f32]| v.iter().enumerate().map(|(i, &x)| ((i + 1) as f64, x as f64)).collect::<Vec<_>>();
    ctx.svg(
        "loss.svg",
        plot::line_chart("Guard training", "epoch", "loss", &[("total", pts(&hist.loss)), ("CE", pts(&hist.cross_entropy)), ("DCC", pts(&hist.dcc))]),
    )?;
    let (pos, neg) = pair_distance_samples(&s.embeddings, &s.labels)?;
    ctx.svg(
        "distances.svg",
        plot::histogram("Embedding cosine distance", "1 - cos", &[("same class", &pos), ("different class", &neg)], 30),
    )?;
    println!("test accuracy {}  TPR {}  FPR {}  F1 {}", r.accuracy, r.tpr, r.fpr, r.f1);
    ctx.finish(&r)
}

fn attack(ctx: Ctx, detector: &Path) -> Result<()> {
    let det = load_detector(detector)?;
    let a = &ctx.cfg.attack;
    let frames = eval_frames(&ctx.cfg.frame, a.frames, a.agents, derive_seed(ctx.seed, 4))?;
    let clean = evaluate_detection(&det, &frames, None, Defense::None, a.score_threshold, ctx.seed)?;
    let mut r = ctx.report();
    r.ap_050 = clean.ap_050.into();
    r.ap_070 = clean.ap_070.into();
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for &kind in &a.kinds {
        let mut pts = Vec::new();
        for &budget in &a.budgets {
            let scenario = AttackScenario { attack: AttackConfig { kind, budget, ..a.settings.clone() }, attackers: a.attackers };
            let e = evaluate_detection(&det, &frames, Some(&scenario), Defense::None, a.score_threshold, ctx.seed)?;
            r.per_attack.insert(
                format!("{kind}@{budget}"),
                SliceMetrics { samples: frames.len() as u64, ap_050: e.ap_050.into(), ap_070: e.ap_070.into(), ..SliceMetrics::default() },
            );
            rows.push(vec![kind.to_string(), budget.to_string(), fmt(e.ap_050), fmt(e.ap_070)]);
            pts.push((budget as f64, e.ap_050));
            println!("{kind:>4} budget {budget:<5} AP@0.5 {:.4}  AP@0.7 {:.4}", e.ap_050, e.ap_070);
        }
        series.push((kind.name(), pts));
    }
    println!("clean AP@0.5 {:.4}", clean.ap_050);
    write_csv(&ctx.path("ap_vs_budget.csv"), &["attack", "budget", "ap_050", "ap_070"], &rows)?;
    ctx.svg("ap_vs_budget.svg", plot::line_chart("AP@0.5 under attack", "budget", "AP@0.5", &series))?;
    ctx.finish(&r)
}

fn eval(ctx: Ctx, detector: &Path, guard: &Path, data: Option<&Path>) -> Result<()> {
    let det = load_detector(detector)?;
    let model = load_guard(guard)?;
    let (a, threshold) = (&ctx.cfg.attack, ctx.cfg.guard.threshold);
    let mut r = ctx.report();
    if let Some(data) = data {
        let ds = read_shards(data).with_context(|| format!("reading dataset {}", data.display()))?;
        let s = score_records(&model, ds.test())?;
        r.set_classification(&classification_metrics(&s.verdicts(threshold), &s.labels)?);
        r.per_attack = attack_slices(ds.test(), &s, threshold)?;
    }
    let frames = eval_frames(&ctx.cfg.frame, a.frames, a.agents, derive_seed(ctx.seed, 4))?;
    let scenario = AttackScenario {
        attack: AttackConfig { kind: a.eval_kind, budget: a.eval_budget, ..a.settings.clone() },
        attackers: a.attackers,
    };
    let clean = evaluate_detection(&det, &frames, None, Defense::None, a.score_threshold, ctx.seed)?;
    let attacked = evaluate_detection(&det, &frames, Some(&scenario), Defense::None, a.score_threshold, ctx.seed)?;
    let guard_def = Defense::Guard { model: &model, threshold };
    let defended = evaluate_detection(&det, &frames, Some(&scenario), guard_def, a.score_threshold, ctx.seed)?;
    r.ap_050 = defended.ap_050.into();
    r.ap_070 = defended.ap_070.into();
    let frame_metrics = classification_metrics(&defended.verdicts, &defended.labels)?;
    if data.is_none() {
        r.set_classification(&frame_metrics);
    }
    for (k, v) in [
        ("clean_ap_050", clean.ap_050),
        ("clean_ap_070", clean.ap_070),
        ("attacked_ap_050", attacked.ap_050),
        ("attacked_ap_070", attacked.ap_070),
    ] {
        r.extra.insert(k.into(), v.into());
    }
    let ratio = (clean.ap_050 > 0.0).then(|| defended.ap_050 / clean.ap_050);
    r.extra.insert("recovery_ratio".into(), ratio.into());
    r.extra.insert("frame_tpr".into(), frame_metrics.tpr.into());
    r.extra.insert("frame_fpr".into(), frame_metrics.fpr.into());
    println!(
        "AP@0.5 clean {:.4}  attacked {:.4}  defended {:.4}  (ratio {})",
        clean.ap_050,
        attacked.ap_050,
        defended.ap_050,
        Metric::from(ratio)
    );
    ctx.finish(&r)
}

fn bench_fps(ctx: Ctx, detector: &Path, guard: &Path) -> Result<()> {
    let det = load_detector(detector)?;
    let model = load_guard(guard)?;
    let (a, b) = (&ctx.cfg.attack, &ctx.cfg.bench);
    let threshold = ctx.cfg.guard.threshold;
    let frames = eval_frames(&ctx.cfg.frame, b.frames, b.collaborators + 1, derive_seed(ctx.seed, 5))?;
    let scenario = AttackScenario {
        attack: AttackConfig { kind: a.eval_kind, budget: a.eval_budget, ..a.settings.clone() },
        attackers: a.attackers.min(b.collaborators),
    };
    let received: Vec<ReceivedFrame> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| receive(&det, f, Some(&scenario), derive_seed(ctx.seed, i as u64)))
        .collect::<crate::Result<_>>()?;
    let perception = Perception::new(&det);
    let guard_fps = fps_benchmark(|f: &ReceivedFrame| defend(&f.ego, &f.received, &model, &perception, threshold).map(|_| ()), &received, b.warmup)?;
    let base_fps = fps_benchmark(
        |f: &ReceivedFrame| consensus_baseline(&f.ego, &f.received, &perception, &b.baseline, ctx.seed).map(|_| ()),
        &received,
        b.warmup,
    )?;
    perception.reset();
    for f in &received {
        defend(&f.ego, &f.received, &model, &perception, threshold)?;
    }
    let guard_calls = perception.calls() as f64 / received.len() as f64;
    perception.reset();
    let mut attempts = 0;
    for f in &received {
        attempts += consensus_baseline(&f.ego, &f.received, &perception, &b.baseline, ctx.seed)?.attempts;
    }
    let base_calls = perception.calls() as f64 / received.len() as f64;
    let mut r = ctx.report();
    r.fps = guard_fps.fps.into();
    r.extra.insert("fps_baseline".into(), base_fps.fps.into());
    r.extra.insert("fps_ratio".into(), (guard_fps.fps / base_fps.fps).into());
    r.extra.insert("fuse_decode_per_frame".into(), guard_calls.into());
    r.extra.insert("fuse_decode_per_frame_baseline".into(), base_calls.into());
    r.extra.insert("baseline_attempts_per_frame".into(), (attempts as f64 / received.len() as f64).into());
    ctx.svg("fps.svg", plot::bar_chart("Frames per second", "FPS", &[("baseline", base_fps.fps), ("guard", guard_fps.fps)]))?;
    println!(
        "FPS guard {:.1}  baseline {:.1}  ratio {:.2}; fuse+decode per frame {guard_calls:.2} vs {base_calls:.2}",
        guard_fps.fps,
        base_fps.fps,
        guard_fps.fps / base_fps.fps
    );
    ctx.finish(&r)
}

fn loo(ctx: Ctx, data: &Path) -> Result<()> {
    let ds = read_shards(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let rep = leave_one_out(&ds, &ctx.cfg.guard, &ctx.cfg.attack.kinds, ctx.seed)?;
    let mut r = ctx.report();
    r.set_classification(&rep.upper_bound);
    let mut rows = Vec::new();
    for f in &rep.folds {
        let k = f.held_out.to_string();
        r.per_attack.insert(k.clone(), SliceMetrics::from_classification(&f.metrics));
        r.per_attack.insert(format!("{k}/upper_bound"), SliceMetrics::from_classification(&f.upper_bound));
        let acc = |m: &crate::eval::ClassificationMetrics| Metric::from(m.accuracy).to_string();
        rows.push(vec![k.clone(), acc(&f.metrics), Metric::from(f.metrics.tpr).to_string(), acc(&f.upper_bound)]);
        println!("held out {k:>4}: accuracy {}  TPR {}  | upper bound {}", acc(&f.metrics), Metric::from(f.metrics.tpr), acc(&f.upper_bound));
    }
    write_csv(&ctx.path("leave_one_out.csv"), &["held_out", "accuracy", "tpr", "upper_bound_accuracy"], &rows)?;
    ctx.finish(&r)
}
