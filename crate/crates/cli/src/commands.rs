use std::path::Path;

use serde::Serialize;
use tta_seg::adaptation::{
    ablation_suite, adapt_with, generate_pseudo_labels, pretrain_with, AdaptEpoch, PretrainEpoch, PseudoLabel, Sweep,
};
use tta_seg::imaging::{save_dataset, Dataset, DomainParams, CLASS_NAMES};
use tta_seg::losses::BoundaryScheduleConfig;
use tta_seg::metrics::{self, MetricsReport};
use tta_seg::network::{CheckpointMeta, Model};
use tta_seg::report;

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::rundir::RunDir;
use crate::{
    AblateArgs, AdaptArgs, AdaptationArgs, DataArgs, EvaluateArgs, Failure, PretrainArgs, PseudoLabelArgs, RunArgs,
    SweepChoice, SynthArgs,
};

type CmdResult = Result<(), Failure>;

fn apply_data(args: &DataArgs, spec: &mut DatasetSpec) {
    if let Some(d) = &args.dataset {
        spec.set_from_flag(d);
    }
    if let Some(s) = args.data_seed {
        spec.seed = s;
    }
    if let Some(n) = args.count {
        spec.count = n;
    }
}

fn apply_adaptation(args: &AdaptationArgs, config: &mut ExperimentConfig) {
    let a = &mut config.adaptation;
    if let Some(v) = args.alpha {
        a.weights.alpha = v;
    }
    if let Some(v) = args.beta {
        a.weights.beta = v;
    }
    if let Some(v) = args.lr {
        a.lr = v;
    }
    if let Some(v) = args.epochs {
        a.epochs = v;
    }
    if let Some(v) = args.batch_size {
        a.batch_size = v;
    }
    if let Some(v) = args.seed {
        a.seed = v;
    }
    a.tseg_positive_only |= args.tseg_positive_only;
    a.soft_pseudo_labels |= args.soft_pseudo_labels;
}

fn open_run(config: &ExperimentConfig, run: &RunArgs, command: &str) -> Result<RunDir, Failure> {
    let requested = match &run.run_dir {
        Some(p) => p.clone(),
        None => config.output_root(run.output_root.as_deref()).join(command),
    };
    let dir = RunDir::create(&requested, run.force)?;
    dir.write("config.toml", config.to_toml())?;
    Ok(dir)
}

fn finish(dir: RunDir) -> CmdResult {
    let path = dir.finish()?;
    println!("run directory: {}", path.display());
    Ok(())
}

/// Loads a checkpoint; when a config file was given its architecture must match.
fn load_checkpoint(path: &Path, config: &ExperimentConfig, explicit_config: bool) -> Result<(Model, String), Failure> {
    if !path.is_file() {
        return Err(Failure::usage(format!("checkpoint {} does not exist", path.display())));
    }
    let (model, meta) = Model::load(path)?;
    if explicit_config && model.arch() != &config.arch {
        return Err(Failure::usage(format!(
            "checkpoint {} architecture {:?} does not match config arch {:?}",
            path.display(),
            model.arch(),
            config.arch
        )));
    }
    let id = if meta.label.is_empty() {
        path.display().to_string()
    } else {
        meta.label
    };
    Ok((model, id))
}

fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoints/epoch-{epoch:04}.ck")
}

fn labeled_masks(data: &Dataset, what: &str) -> Result<Vec<tta_seg::imaging::ClassMask>, Failure> {
    data.masks
        .clone()
        .ok_or_else(|| Failure::usage(format!("{what} has no masks; a labeled set is required")))
}

pub fn synth(args: SynthArgs) -> CmdResult {
    let params = DomainParams::preset(&args.preset).ok_or_else(|| {
        Failure::usage(format!(
            "unknown preset {:?} (known: {})",
            args.preset,
            DomainParams::PRESETS.join(", ")
        ))
    })?;
    if args.count == 0 {
        return Err(Failure::usage("--count must be at least 1"));
    }
    let spec = DatasetSpec {
        dir: None,
        preset: Some(args.preset.clone()),
        seed: args.seed,
        count: args.count,
    };
    let data = spec.resolve()?;
    let dir = RunDir::create(&args.out, args.force)?;
    save_dataset(dir.path(), &data)?;
    dir.write_json("params.json", &params)?;
    log::info!("wrote {} {} images", data.len(), args.preset);
    finish(dir)
}

pub fn pretrain(args: PretrainArgs) -> CmdResult {
    let mut config = ExperimentConfig::load(args.run.config.as_deref())?;
    apply_data(&args.data, &mut config.source);
    if let Some(seed) = args.seed {
        config.pretrain.seed = seed;
        config.arch.init_seed = seed;
    }
    if let Some(n) = args.epochs {
        config.pretrain.schedule = BoundaryScheduleConfig::scaled(n);
    }
    if let Some(b) = args.batch_size {
        config.pretrain.batch_size = b;
    }
    if let Some(lr) = args.lr {
        config.pretrain.lr = lr;
    }
    config.validate()?;
    let data = config.source.resolve()?;
    let samples = data.samples().map_err(|_| Failure::usage("source dataset has no masks"))?;
    log::info!(
        "pretraining on {} for {} epochs",
        config.source.describe(),
        config.pretrain.schedule.total()
    );

    let dir = open_run(&config, &args.run, "pretrain")?;
    let every = config.report.checkpoint_every;
    let total = config.pretrain.schedule.total();
    let (model, record) = pretrain_with(&config.arch, &samples, &config.pretrain, None, |model, epoch| {
        let checkpoint = (every > 0 && epoch.epoch % every == 0 && epoch.epoch < total).then(|| checkpoint_name(epoch.epoch));
        if let Some(rel) = &checkpoint {
            let meta = CheckpointMeta {
                label: format!("source-epoch-{}", epoch.epoch),
                epoch: Some(epoch.epoch),
                parent: None,
            };
            model.save(&dir.file(rel)?, &meta)?;
        }
        let logged = PretrainEpoch {
            checkpoint: checkpoint.clone(),
            ..epoch.clone()
        };
        dir.append_jsonl("record.jsonl", &logged)?;
        Ok(checkpoint)
    })?;
    let meta = CheckpointMeta {
        label: "source".into(),
        epoch: Some(total),
        parent: None,
    };
    model.save(&dir.file("source.ck")?, &meta)?;
    dir.write_json("summary.json", &record)?;
    finish(dir)
}

#[derive(Serialize)]
struct PseudoSummary<'a> {
    source: &'a str,
    threshold: f64,
    images: Vec<PseudoImage<'a>>,
}

#[derive(Serialize)]
struct PseudoImage<'a> {
    name: &'a str,
    /// Foreground pixels per class, in `classes` order.
    pixels: Vec<usize>,
    classes: [&'static str; 2],
    empty: bool,
}

fn pseudo_summary<'a>(source: &'a str, threshold: f64, names: &'a [String], pseudo: &[PseudoLabel]) -> PseudoSummary<'a> {
    PseudoSummary {
        source,
        threshold,
        images: names
            .iter()
            .zip(pseudo)
            .map(|(name, p)| PseudoImage {
                name,
                pixels: (0..p.hard.classes()).map(|c| p.hard.count(c)).collect(),
                classes: CLASS_NAMES,
                empty: p.is_empty(),
            })
            .collect(),
    }
}

pub fn pseudo_label(args: PseudoLabelArgs) -> CmdResult {
    let mut config = ExperimentConfig::load(args.run.config.as_deref())?;
    apply_data(&args.data, &mut config.target);
    config.validate()?;
    let (source, source_id) = load_checkpoint(&args.checkpoint, &config, args.run.config.is_some())?;
    let data = config.target.resolve()?;
    let threshold = config.adaptation.seg_threshold;
    let pseudo = generate_pseudo_labels(&source, &source_id, &data.images, threshold)?;

    let dir = open_run(&config, &args.run, "pseudo-label")?;
    let labeled = Dataset {
        names: data.names.clone(),
        images: data.images.clone(),
        masks: Some(pseudo.iter().map(|p| p.hard.clone()).collect()),
    };
    save_dataset(dir.path(), &labeled)?;
    let summary = pseudo_summary(&source_id, threshold, &data.names, &pseudo);
    let empty = summary.images.iter().filter(|i| i.empty).count();
    dir.write_json("pseudo_labels.json", &summary)?;
    println!("{} pseudo labels ({empty} empty)", pseudo.len());
    finish(dir)
}

pub fn adapt(args: AdaptArgs) -> CmdResult {
    let mut config = ExperimentConfig::load(args.run.config.as_deref())?;
    apply_data(&args.data, &mut config.target);
    apply_adaptation(&args.adaptation, &mut config);
    config.validate()?;
    let (source, source_id) = load_checkpoint(&args.checkpoint, &config, args.run.config.is_some())?;
    let data = config.target.resolve()?;
    let pseudo = generate_pseudo_labels(&source, &source_id, &data.images, config.adaptation.seg_threshold)?;

    let dir = open_run(&config, &args.run, "adapt")?;
    dir.write_json(
        "pseudo_labels.json",
        &pseudo_summary(&source_id, config.adaptation.seg_threshold, &data.names, &pseudo),
    )?;
    let (adapted, record) = adapt_with(
        &source,
        &data.images,
        &pseudo,
        &config.adaptation,
        data.masks.as_deref(),
        |model, epoch| {
            let rel = checkpoint_name(epoch.epoch);
            let meta = CheckpointMeta {
                label: format!("adapted-epoch-{}", epoch.epoch),
                epoch: Some(epoch.epoch),
                parent: Some(source_id.clone()),
            };
            model.save(&dir.file(&rel)?, &meta)?;
            let logged = AdaptEpoch {
                checkpoint: Some(rel.clone()),
                ..epoch.clone()
            };
            dir.append_jsonl("record.jsonl", &logged)?;
            Ok(Some(rel))
        },
    )?;
    let meta = CheckpointMeta {
        label: "adapted".into(),
        epoch: Some(record.epochs.len()),
        parent: Some(source_id.clone()),
    };
    adapted.save(&dir.file("adapted.ck")?, &meta)?;
    dir.write_json("summary.json", &record)?;
    if let Some(table) = report::comparison_from_record(&record) {
        dir.write("comparison.md", &table)?;
        println!("{table}");
    }
    finish(dir)
}

#[derive(Serialize)]
struct EvaluationDoc<'a> {
    dataset: String,
    checkpoint: &'a Path,
    metrics: &'a MetricsReport,
    baseline_checkpoint: Option<&'a Path>,
    baseline: Option<&'a MetricsReport>,
}

pub fn evaluate(args: EvaluateArgs) -> CmdResult {
    let mut config = ExperimentConfig::load(args.run.config.as_deref())?;
    apply_data(&args.data, &mut config.target);
    config.validate()?;
    let explicit = args.run.config.is_some();
    let (model, _) = load_checkpoint(&args.checkpoint, &config, explicit)?;
    let baseline_model = match &args.baseline {
        Some(p) => Some(load_checkpoint(p, &config, explicit)?.0),
        None => None,
    };
    let data = config.target.resolve()?;
    if !data.is_labeled() {
        return Err(Failure::usage(format!(
            "evaluation set {} is unlabeled (no masks/ directory)",
            config.target.describe()
        )));
    }
    let threshold = config.adaptation.seg_threshold as f32;
    let metrics = metrics::evaluate(&model, &data, threshold)?;
    let baseline = match &baseline_model {
        Some(m) => Some(metrics::evaluate(m, &data, threshold)?),
        None => None,
    };

    let dir = open_run(&config, &args.run, "evaluate")?;
    let table = match &baseline {
        Some(b) => report::comparison_table(b, &metrics),
        None => report::metrics_table(&[(&args.checkpoint.display().to_string(), &metrics)]),
    };
    dir.write_json(
        "metrics.json",
        &EvaluationDoc {
            dataset: config.target.describe(),
            checkpoint: &args.checkpoint,
            metrics: &metrics,
            baseline_checkpoint: args.baseline.as_deref(),
            baseline: baseline.as_ref(),
        },
    )?;
    dir.write("table.md", &table)?;
    println!("{table}");
    finish(dir)
}

pub fn ablate(args: AblateArgs) -> CmdResult {
    let mut config = ExperimentConfig::load(args.run.config.as_deref())?;
    apply_data(&args.data, &mut config.target);
    apply_adaptation(&args.adaptation, &mut config);
    if let Some(choice) = args.sweep {
        config.report.sweeps = match choice {
            SweepChoice::Alpha => vec![Sweep::Alpha],
            SweepChoice::Beta => vec![Sweep::Beta],
            SweepChoice::Both => vec![Sweep::Alpha, Sweep::Beta],
            SweepChoice::None => vec![],
        };
    }
    config.validate()?;
    let (source, source_id) = load_checkpoint(&args.checkpoint, &config, args.run.config.is_some())?;
    let data = config.target.resolve()?;
    let masks = labeled_masks(&data, "ablation set")?;
    let pseudo = generate_pseudo_labels(&source, &source_id, &data.images, config.adaptation.seg_threshold)?;

    let dir = open_run(&config, &args.run, "ablate")?;
    let result = ablation_suite(
        &source,
        &data.images,
        &masks,
        &pseudo,
        &config.adaptation,
        &config.report.sweeps,
    )?;
    dir.write_json("ablation.json", &result)?;
    let mut text = report::ablation_table(&result);
    for sweep in &result.sweeps {
        let stem = report::sweep_stem(sweep.sweep);
        let table = report::sweep_table(sweep);
        dir.write(&format!("{stem}.md"), &table)?;
        dir.write(&format!("{stem}.svg"), report::sweep_plot_svg(sweep))?;
        text.push('\n');
        text.push_str(&table);
    }
    dir.write("ablation.md", &text)?;
    println!("{text}");
    finish(dir)
}
