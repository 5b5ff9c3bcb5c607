//! Subcommand implementations.

use std::path::Path;

use anyhow::anyhow;
use serde::Serialize;
use serde_json::json;

use evofuse_core::attention::{CdeBlock, PatchSpec, ProjectionWeights};
use evofuse_core::enhancer::{discriminative_enhance, modulation_stats};
use evofuse_core::evo::{self, EvalRecord, EvoConfig, EvoOutcome, Genome, SeparableObjective};
use evofuse_core::grid::bilinear_resize;
use evofuse_core::losses::{evaluate_losses, DecoSlot, DetectionSample, LossBreakdown};
use evofuse_core::metrics::{self, MetricReport};
use evofuse_core::pipeline::{
    cooperative_run, evaluate_genome, inner_optimize, pair_breakdown, ArmReport, CoopOptions,
    FusionPair, FusionParams, InnerConfig, PreparedPair,
};
use evofuse_core::{io, FeatureMap, Image};

use crate::inputs::{
    self, load_image, load_pairs, parse_genome, parse_patch, read_boxes, read_json, require_dir,
    require_file, resolve_seed, SeedSource, ShapeDescriptor,
};
use crate::output::{emit_json, fmt9, history_csv, write_json, write_text};
use crate::{
    Cli, CliResult, Command, CoopArgs, DemoCdeArgs, EnhanceArgs, EvolveArgs, Failure, FuseArgs,
    LossesArgs, MetricsArgs, Task,
};

pub fn dispatch(cli: &Cli) -> CliResult {
    let verbose = cli.verbose;
    match &cli.command {
        Command::Enhance(a) => enhance(a),
        Command::DemoCde(a) => demo_cde(a),
        Command::Losses(a) => losses(a),
        Command::Evolve(a) => evolve(a, verbose),
        Command::Coop(a) => coop(a, verbose),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Fuse(a) => fuse(a),
    }
}

fn enhance(a: &EnhanceArgs) -> CliResult {
    require_file(&a.input, "input image")?;
    let img = load_image(&a.input)?;
    let fm = img.to_feature_map();
    let out = discriminative_enhance(&fm);
    let (h, w) = img.dims();
    io::save_image(&a.out, &Image::clamped(h, w, out.into_data())?)?;
    if a.stats {
        let s = modulation_stats(&fm)?;
        emit_json(
            None,
            &json!({
                "mean_mu": s.mean_mu,
                "mean_mu_y": s.mean_mu_y,
                "modulation_raw": s.modulation_raw,
                "modulation_boosted": s.modulation_boosted,
            }),
        )?;
    }
    Ok(())
}

fn crop(img: &Image, top: usize, left: usize, h: usize, w: usize) -> CliResult<FeatureMap> {
    let (ih, iw) = img.dims();
    if h == 0 || w == 0 || top + h > ih || left + w > iw {
        return Err(Failure::Usage(format!(
            "--patch {top},{left},{h},{w} does not fit the {ih}x{iw} image"
        )));
    }
    let mut data = Vec::with_capacity(h * w);
    for r in top..top + h {
        for c in left..left + w {
            data.push(img.get(r, c));
        }
    }
    Ok(FeatureMap::new(1, h, w, data)?)
}

fn demo_cde(a: &DemoCdeArgs) -> CliResult {
    require_file(&a.ir, "infrared image")?;
    require_file(&a.vis, "visible image")?;
    let det = inputs::read_features(&a.det)?;
    let [top, left, h, w] = parse_patch(&a.patch)?;
    if a.stride == 0 {
        return Err(Failure::Usage("--stride must be >= 1".into()));
    }
    if a.d_model == 0 {
        return Err(Failure::Usage("--d-model must be >= 1".into()));
    }
    let ir = load_image(&a.ir)?;
    let vis = load_image(&a.vis)?;
    ir.ensure_same_dims(&vis, "infrared vs visible")?;

    let spec = PatchSpec::from_image_crop(top, left, h, w, a.stride)?;
    spec.validate(det.height(), det.width())?;
    let ir_patch = bilinear_resize(&crop(&ir, top, left, h, w)?, spec.height, spec.width)?;
    let vis_patch = bilinear_resize(&crop(&vis, top, left, h, w)?, spec.height, spec.width)?;

    let (seed, source) = resolve_seed(a.seed, 0)?;
    let weights = ProjectionWeights::seeded(det.channels(), 1, 1, a.d_model, seed)?;
    let out = CdeBlock::new(weights).forward(&det, &spec, &ir_patch, &vis_patch)?;

    let bytes: Vec<u8> = out
        .data()
        .iter()
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect();
    let bin = a.out.join("cde.bin");
    std::fs::create_dir_all(&a.out)
        .map_err(|e| Failure::Runtime(anyhow!("creating {}: {e}", a.out.display())))?;
    std::fs::write(&bin, bytes)
        .map_err(|e| Failure::Runtime(anyhow!("writing {}: {e}", bin.display())))?;
    let (channels, height, width) = out.shape();
    write_json(
        &inputs::sidecar_path(&bin),
        &ShapeDescriptor {
            channels,
            height,
            width,
        },
    )?;
    emit_json(
        None,
        &json!({
            "output": bin.display().to_string(),
            "shape": [channels, height, width],
            "patch": {"top": spec.top, "left": spec.left, "height": spec.height, "width": spec.width, "stride": spec.stride},
            "seed": seed,
            "seed_source": source,
        }),
    )
}

fn losses(a: &LossesArgs) -> CliResult {
    require_file(&a.fused, "fused image")?;
    require_file(&a.ir, "infrared image")?;
    require_file(&a.vis, "visible image")?;
    if let Some(b) = &a.boxes {
        require_file(b, "boxes file")?;
    }
    let genome = parse_genome(a.genome.as_deref())?;
    let fused = load_image(&a.fused)?;
    let ir = load_image(&a.ir)?;
    let vis = load_image(&a.vis)?;
    let samples: Vec<DetectionSample> = match &a.boxes {
        Some(p) => read_json(p)?,
        None => Vec::new(),
    };
    let breakdown = evaluate_losses(&fused, &ir, &vis, &samples, &DecoSlot::default(), &genome)?;
    emit_json(a.out.as_deref(), &breakdown)
}

#[derive(Serialize)]
struct BestRecord<'a> {
    genome: &'a [f64],
    loss: f64,
    fitness: f64,
    generation: usize,
    origin: &'a str,
}

impl<'a> From<&'a EvalRecord> for BestRecord<'a> {
    fn from(r: &'a EvalRecord) -> Self {
        Self {
            genome: &r.genome.weights,
            loss: r.loss,
            fitness: r.fitness,
            generation: r.generation,
            origin: r.origin.as_str(),
        }
    }
}

fn load_evo(path: &Path, flag: Option<u64>) -> CliResult<(EvoConfig, SeedSource)> {
    let mut cfg: EvoConfig = read_json(path)?;
    let (seed, source) = resolve_seed(flag, cfg.seed)?;
    cfg.seed = seed;
    cfg.validate()
        .map_err(|e| Failure::Runtime(anyhow!("{}: {e}", path.display())))?;
    Ok((cfg, source))
}

fn load_inner(path: Option<&Path>, seed_override: Option<u64>) -> CliResult<InnerConfig> {
    let mut cfg = match path {
        Some(p) => read_json::<InnerConfig>(p)?,
        None => InnerConfig::default(),
    };
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| {
        let name = path.map_or("inner settings".to_string(), |p| p.display().to_string());
        Failure::Runtime(anyhow!("{name}: {e}"))
    })?;
    Ok(cfg)
}

fn write_history(out: &Path, outcome: &EvoOutcome, genes: usize) -> CliResult {
    write_text(&out.join("history.csv"), &history_csv(&outcome.history, genes))
}

fn evolve(a: &EvolveArgs, verbose: bool) -> CliResult {
    require_file(&a.config, "evo config")?;
    if let Some(p) = &a.pairs {
        require_dir(p, "pair directory")?;
    }
    if let Some(p) = &a.inner {
        require_file(p, "inner config")?;
    }
    let (cfg, source) = load_evo(&a.config, a.seed)?;
    let genes = cfg.bounds.len();
    let report = match a.task {
        Task::Synthetic => {
            let obj = SeparableObjective::random(&cfg.bounds, cfg.seed);
            let outcome = evo::run(&cfg, |g: &Genome| Ok(obj.eval(&g.weights)))?;
            write_history(&a.out, &outcome, genes)?;
            json!({
                "task": "synthetic",
                "seed": cfg.seed,
                "seed_source": source,
                "best": BestRecord::from(&outcome.best),
                "best_loss_by_generation": outcome.best_loss_by_generation,
                "evaluations": outcome.history.len(),
                "objective": obj,
                "grid_optimum": obj.grid_optimum(&cfg.bounds, 21),
            })
        }
        Task::Fusion => {
            let dir = a.pairs.as_deref().ok_or_else(|| {
                Failure::Usage("--task fusion needs --pairs <dir>".into())
            })?;
            let override_seed = (source != SeedSource::File).then_some(cfg.seed);
            let inner = load_inner(a.inner.as_deref(), override_seed)?;
            let pairs = load_pairs(dir)?;
            let prepared: Vec<PreparedPair> = pairs
                .into_iter()
                .map(PreparedPair::new)
                .collect::<Result<_, _>>()?;
            let deco = DecoSlot::default();
            let outcome = evo::run(&cfg, |g: &Genome| {
                let loss = evaluate_genome(&prepared, &inner, &g.weights, &deco);
                if verbose {
                    if let Ok(l) = &loss {
                        eprintln!("genome {:?} -> {}", g.weights, fmt9(*l));
                    }
                }
                loss
            })?;
            write_history(&a.out, &outcome, genes)?;
            json!({
                "task": "fusion",
                "seed": cfg.seed,
                "seed_source": source,
                "best": BestRecord::from(&outcome.best),
                "best_loss_by_generation": outcome.best_loss_by_generation,
                "evaluations": outcome.history.len(),
                "inner": inner,
            })
        }
    };
    write_json(&a.out.join("best.json"), &report)
}

/// Column order shared by the metric CSV files.
const METRIC_COLUMNS: [&str; 10] = [
    "mi",
    "mi_fused_ir",
    "mi_fused_vis",
    "ssim",
    "ssim_fused_ir",
    "ssim_fused_vis",
    "vif",
    "vif_fused_ir",
    "vif_fused_vis",
    "qabf",
];

fn metric_cells(m: &MetricReport) -> String {
    [
        m.mi,
        m.mi_fused_ir,
        m.mi_fused_vis,
        m.ssim,
        m.ssim_fused_ir,
        m.ssim_fused_vis,
        m.vif,
        m.vif_fused_ir,
        m.vif_fused_vis,
        m.qabf,
    ]
    .iter()
    .map(|v| fmt9(*v))
    .collect::<Vec<_>>()
    .join(",")
}

#[derive(Serialize)]
struct PairSummary<'a> {
    name: &'a str,
    combined: f64,
    reference_loss: f64,
    breakdown: &'a LossBreakdown,
    final_grid: &'a [f64],
}

#[derive(Serialize)]
struct ArmSummary<'a> {
    genome: &'a [f64],
    mean_combined_loss: f64,
    mean_reference_loss: f64,
    pairs: Vec<PairSummary<'a>>,
}

impl<'a> From<&'a ArmReport> for ArmSummary<'a> {
    fn from(arm: &'a ArmReport) -> Self {
        Self {
            genome: &arm.genome,
            mean_combined_loss: arm.mean_combined_loss,
            mean_reference_loss: arm.mean_reference_loss,
            pairs: arm
                .pairs
                .iter()
                .map(|p| PairSummary {
                    name: &p.name,
                    combined: p.breakdown.combined,
                    reference_loss: p.reference_loss,
                    breakdown: &p.breakdown,
                    final_grid: &p.params.weights,
                })
                .collect(),
        }
    }
}

fn coop(a: &CoopArgs, verbose: bool) -> CliResult {
    require_dir(&a.pairs, "pair directory")?;
    require_file(&a.evo, "evo config")?;
    require_file(&a.inner, "inner config")?;
    if a.bins < 2 {
        return Err(Failure::Usage(format!("--bins {} must be >= 2", a.bins)));
    }
    let (evo_cfg, source) = load_evo(&a.evo, a.seed)?;
    let override_seed = (source != SeedSource::File).then_some(evo_cfg.seed);
    let inner = load_inner(Some(&a.inner), override_seed)?;
    let pairs = load_pairs(&a.pairs)?;
    if verbose {
        eprintln!("{} pairs, seed {} ({:?})", pairs.len(), evo_cfg.seed, source);
    }

    let options = CoopOptions {
        metrics: !a.no_metrics,
        mi_bins: a.bins,
    };
    let report = cooperative_run(&pairs, &evo_cfg, &inner, &DecoSlot::default(), options)?;

    let out = &a.out;
    let fused_dir = out.join("fused");
    std::fs::create_dir_all(&fused_dir)
        .map_err(|e| Failure::Runtime(anyhow!("creating {}: {e}", fused_dir.display())))?;
    for (arm_name, arm) in report.arms() {
        for p in &arm.pairs {
            let path = fused_dir.join(format!("{arm_name}_{}.png", p.name));
            io::save_image(&path, &p.fused)?;
        }
    }
    write_history(out, &report.evo, evo_cfg.bounds.len())?;

    let arms = json!({
        "experience": ArmSummary::from(&report.experience),
        "equals": ArmSummary::from(&report.equals),
        "evolved": ArmSummary::from(&report.evolved),
    });
    write_json(&out.join("arms.json"), &arms)?;

    let mut metrics_csv = format!("arm,pair,{}\n", METRIC_COLUMNS.join(","));
    let mut curves_csv = String::from("arm,pair,step,loss\n");
    for (arm_name, arm) in report.arms() {
        for p in &arm.pairs {
            if let Some(m) = &p.metrics {
                metrics_csv.push_str(&format!("{arm_name},{},{}\n", p.name, metric_cells(m)));
            }
            for (step, l) in p.curve.iter().enumerate() {
                curves_csv.push_str(&format!("{arm_name},{},{step},{}\n", p.name, fmt9(*l)));
            }
        }
    }
    write_text(&out.join("metrics.csv"), &metrics_csv)?;
    write_text(&out.join("curves.csv"), &curves_csv)?;

    let t = report.timings;
    write_json(
        &out.join("run.json"),
        &json!({
            "seed": evo_cfg.seed,
            "seed_source": source,
            "evo": evo_cfg,
            "inner": inner,
            "pairs": pairs.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(),
            "deco_stubbed": true,
            "metric_variant": metrics::METRIC_VARIANT,
            "best": BestRecord::from(&report.evo.best),
            "wall_clock_seconds": {
                "evolve": t.evolve.as_secs_f64(),
                "arms": t.arms.as_secs_f64(),
                "metrics": t.metrics.as_secs_f64(),
            },
        }),
    )?;
    if verbose {
        eprintln!(
            "equals {} / evolved {}",
            fmt9(report.equals.mean_combined_loss),
            fmt9(report.evolved.mean_combined_loss)
        );
    }
    Ok(())
}

fn metrics_cmd(a: &MetricsArgs) -> CliResult {
    if a.bins < 2 {
        return Err(Failure::Usage(format!("--bins {} must be >= 2", a.bins)));
    }
    if let Some(dir) = &a.dir {
        require_dir(dir, "metrics directory")?;
        let mut csv = format!("name,{}\n", METRIC_COLUMNS.join(","));
        for name in inputs::stems_with_suffix(dir, "_fused")? {
            let find = |suffix: &str| {
                ["pgm", "png"]
                    .iter()
                    .map(|e| dir.join(format!("{name}_{suffix}.{e}")))
                    .find(|p| p.is_file())
                    .ok_or_else(|| {
                        Failure::Runtime(anyhow!(
                            "{}: missing {name}_{suffix}.pgm or .png",
                            dir.display()
                        ))
                    })
            };
            let fused = load_image(&find("fused")?)?;
            let ir = load_image(&find("ir")?)?;
            let vis = load_image(&find("vis")?)?;
            let m = metrics::evaluate(&fused, &ir, &vis, a.bins)
                .map_err(|e| Failure::Runtime(anyhow!("{name}: {e}")))?;
            csv.push_str(&format!("{name},{}\n", metric_cells(&m)));
        }
        return match &a.out {
            Some(p) => write_text(p, &csv),
            None => {
                print!("{csv}");
                Ok(())
            }
        };
    }
    let (fused, ir, vis) = match (&a.fused, &a.ir, &a.vis) {
        (Some(f), Some(i), Some(v)) => (f, i, v),
        _ => return Err(Failure::Usage("need --fused, --ir and --vis, or --dir".into())),
    };
    require_file(fused, "fused image")?;
    require_file(ir, "infrared image")?;
    require_file(vis, "visible image")?;
    let m = metrics::evaluate(&load_image(fused)?, &load_image(ir)?, &load_image(vis)?, a.bins)?;
    emit_json(a.out.as_deref(), &m)
}

fn fuse(a: &FuseArgs) -> CliResult {
    require_file(&a.ir, "infrared image")?;
    require_file(&a.vis, "visible image")?;
    if let Some(b) = &a.boxes {
        require_file(b, "boxes file")?;
    }
    if let Some(p) = &a.inner {
        require_file(p, "inner config")?;
    }
    let genome = parse_genome(a.genome.as_deref())?;
    let file_seed = match &a.inner {
        Some(p) => read_json::<InnerConfig>(p)?.seed,
        None => InnerConfig::default().seed,
    };
    let (seed, source) = resolve_seed(a.seed, file_seed)?;
    let inner = load_inner(a.inner.as_deref(), Some(seed))?;
    let boxes = match &a.boxes {
        Some(p) => read_boxes(p)?,
        None => Vec::new(),
    };
    let pair = FusionPair::new("input", load_image(&a.ir)?, load_image(&a.vis)?, boxes)?;
    let prep = PreparedPair::new(pair)?;
    let deco = DecoSlot::default();
    let init = FusionParams::initial(&inner)?;
    let r = inner_optimize(&init, &prep, &genome, &deco, inner.fd_step)?;
    let (breakdown, fused) = pair_breakdown(&r.params, &prep, &genome, &deco)?;
    io::save_image(&a.out, &fused)?;
    emit_json(
        None,
        &json!({
            "output": a.out.display().to_string(),
            "seed": seed,
            "seed_source": source,
            "breakdown": breakdown,
            "curve": r.curve,
            "final_grid": r.params.weights,
        }),
    )
}
