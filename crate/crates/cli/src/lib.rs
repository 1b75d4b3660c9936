//! Command-line front end: dataset generation, training, grid search,
//! preset ranking, evaluation, data-scaling runs and the annotation service.

pub mod annotate;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use cyborg::ablations::{mask_to_saliency, SaliencySubstitute, SubstitutePlan};
use cyborg::datasets::{
    generate_spurious_dataset, scale_dataset, Dataset, SpuriousConfig, SyntheticSource,
};
use cyborg::evaluation::{
    append_results, average_cam, cam_human_agreement, mean_std, render_curves, save_heatmap_png,
    scaling_crossover, Crossover, ResultRow,
};
use cyborg::loss::{CamClass, CyborgTerm, MeasureKind};
use cyborg::manifest::{ManifestOptions, Split};
use cyborg::model::{Architecture, Checkpoint, CheckpointMetrics, ToyCnn};
use cyborg::saliency::EyetrackConfig;
use cyborg::search::{
    grid_search, rank_arch, rank_gen, rank_opt, shipped, Domain, Preset, SearchGrid, SearchTable,
};
use cyborg::training::{
    score_split, train_repeated, write_curves_csv, write_test_scores_csv, RunSummary,
    SelectionMetric, TrainConfig,
};
use cyborg::{Error, Result};
use serde::Serialize;

/// Exit status for a training set lacking the saliency the loss needs.
pub const EXIT_MISSING_SALIENCY: i32 = 2;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::MissingSaliency(_) => EXIT_MISSING_SALIENCY,
        _ => 1,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "cyborg",
    version,
    about = "Saliency-guided classifier training experiments"
)]
pub struct Cli {
    /// Root for generated datasets and annotation stores.
    #[arg(long, env = "CYBORG_DATA_DIR", default_value = "data", global = true)]
    pub data_dir: PathBuf,
    /// Root for training, search and scaling outputs.
    #[arg(long, env = "CYBORG_RUNS_DIR", default_value = "runs", global = true)]
    pub runs_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic shortcut benchmark.
    MakeData(MakeDataArgs),
    /// Train repeated runs and append a results row.
    Train(TrainArgs),
    /// Grid search over α and distance measure.
    Search(SearchArgs),
    /// Derive a preset from search tables by rank sums.
    Rank(RankArgs),
    /// Evaluate a checkpoint and render its average CAM.
    Eval(EvalArgs),
    /// Find the training-set multiple at which traditional training catches up.
    Scale(ScaleArgs),
    /// Serve the annotation-collection HTTP API.
    AnnotateServe(ServeArgs),
}

#[derive(Args, Debug)]
pub struct MakeDataArgs {
    /// Output directory; defaults to `<data-dir>/spurious`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 100)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 50)]
    pub val_per_class: usize,
    #[arg(long, default_value_t = 100)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    pub train_rho: f64,
    #[arg(long, default_value_t = 0.0)]
    pub test_rho: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetTier {
    Gen,
    Arch,
    Opt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CamChoice {
    TrueLabel,
    Predicted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Schedule {
    /// lr 0.005, ×0.1 every 12 epochs, 50 epochs.
    Standard,
    /// lr 0.1, ×0.1 every 12 epochs, 30 epochs; suited to the toy CNN.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Selection {
    ValAccuracy,
    ValAuc,
}

/// Loss settings shared by every training command.
#[derive(Args, Debug, Clone)]
pub struct TermArgs {
    /// Shipped preset tier. Without a preset or `--alpha`, the general preset is used.
    #[arg(long, value_enum)]
    pub preset: Option<PresetTier>,
    /// TOML preset file; overrides `--preset`.
    #[arg(long)]
    pub preset_file: Option<PathBuf>,
    /// Architecture whose shipped arch/opt preset to use.
    #[arg(long, default_value = "densenet121")]
    pub preset_arch: Architecture,
    /// Domain whose shipped opt preset to use.
    #[arg(long, default_value = "face")]
    pub preset_domain: Domain,
    /// Blend weight; 1.0 is cross-entropy only.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub measure: Option<MeasureKind>,
    #[arg(long, value_enum, default_value = "true-label")]
    pub cam_class: CamChoice,
}

impl TermArgs {
    /// Resolved loss term and the setting label used in results tables.
    pub fn resolve(&self) -> Result<(CyborgTerm, String)> {
        let preset = if let Some(path) = &self.preset_file {
            Some(Preset::load(path)?)
        } else {
            match self.preset {
                Some(PresetTier::Gen) => Some(shipped::gen()),
                Some(PresetTier::Arch) => {
                    Some(shipped::arch(self.preset_arch).ok_or_else(|| {
                        Error::ConfigInvalid(format!(
                            "no shipped arch preset for {}",
                            self.preset_arch
                        ))
                    })?)
                }
                Some(PresetTier::Opt) => Some(
                    shipped::opt(self.preset_arch, self.preset_domain).ok_or_else(|| {
                        Error::ConfigInvalid(format!(
                            "no shipped opt preset for {}",
                            self.preset_arch
                        ))
                    })?,
                ),
                None if self.alpha.is_none() => Some(shipped::gen()),
                None => None,
            }
        };
        let alpha = self
            .alpha
            .or(preset.as_ref().map(|p| p.alpha))
            .unwrap_or(1.0);
        let measure = self
            .measure
            .or(preset.as_ref().map(|p| p.measure))
            .unwrap_or(MeasureKind::Ssim);
        let mut term = CyborgTerm::new(alpha, measure)?;
        term.cam_class = match self.cam_class {
            CamChoice::TrueLabel => CamClass::TrueLabel,
            CamChoice::Predicted => CamClass::Predicted,
        };
        let overridden = self.alpha.is_some() || self.measure.is_some();
        let setting = match (&preset, overridden) {
            _ if !term.uses_saliency() => "traditional".to_string(),
            (Some(p), false) => format!("cyborg_{}", p.tier),
            _ => format!("cyborg_{}_{}", measure.name(), alpha),
        };
        Ok((term, setting))
    }
}

#[derive(Args, Debug, Clone)]
pub struct ScheduleArgs {
    #[arg(long, value_enum, default_value = "standard")]
    pub schedule: Schedule,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "val-accuracy")]
    pub selection: Selection,
}

impl ScheduleArgs {
    pub fn config(&self, term: CyborgTerm) -> TrainConfig {
        let base = match self.schedule {
            Schedule::Standard => TrainConfig::default(),
            Schedule::Desk => TrainConfig::desk_scale(),
        };
        TrainConfig {
            term,
            lr: self.lr.unwrap_or(base.lr),
            max_epochs: self.epochs.unwrap_or(base.max_epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            runs: self.runs,
            seed: self.seed,
            selection: match self.selection {
                Selection::ValAccuracy => SelectionMetric::ValAccuracy,
                Selection::ValAuc => SelectionMetric::ValAuc,
            },
            ..base
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset manifest; defaults to `<data-dir>/spurious/manifest.csv`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Run name; outputs go to `<runs-dir>/<name>`.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value = "toy_cnn")]
    pub arch: Architecture,
    #[arg(long, default_value = "synthetic")]
    pub domain: String,
    #[command(flatten)]
    pub term: TermArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Where training saliency comes from.
    #[arg(long, default_value = "human")]
    pub saliency_source: SaliencySubstitute,
    /// Directory of `<id>.png` segmentation masks for `--saliency-source mask`.
    #[arg(long)]
    pub mask_dir: Option<PathBuf>,
    /// Directory of `<id>.csv` fixation logs replacing training saliency.
    #[arg(long)]
    pub fixation_dir: Option<PathBuf>,
    /// Gaussian width for fixation heatmaps, in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub fixation_sigma: f64,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Use the full 0.05-step α grid instead of {0.25, 0.5, 0.75, 1.0}.
    #[arg(long)]
    pub full_grid: bool,
    #[arg(long, default_value = "toy_cnn")]
    pub arch: Architecture,
    #[arg(long, default_value = "synthetic")]
    pub domain: String,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Output CSV; defaults to `<runs-dir>/search/<arch>_<domain>.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    /// Search table as `ARCH:DOMAIN:PATH`; repeat for each table.
    #[arg(long = "table", required = true)]
    pub tables: Vec<String>,
    #[arg(long, value_enum)]
    pub tier: PresetTier,
    /// Write the preset as TOML here; printed to stdout regardless.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, value_enum, default_value = "true-label")]
    pub cam_class: CamChoice,
    /// Defaults to the checkpoint's directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScaleArgs {
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 100)]
    pub train_per_class: usize,
    /// Training-set multiples for the traditional runs.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub multiples: Vec<f64>,
    #[command(flatten)]
    pub term: TermArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, default_value = "scaling")]
    pub name: String,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Manifest of images to annotate, with true labels.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Defaults to `<data-dir>/annotations`.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value_t = annotate::DEFAULT_MIN_REGIONS)]
    pub min_regions: usize,
}

fn default_manifest(cli: &Cli, given: &Option<PathBuf>) -> PathBuf {
    given
        .clone()
        .unwrap_or_else(|| cli.data_dir.join("spurious").join("manifest.csv"))
}

fn toy_factory(arch: Architecture, input: usize) -> Result<impl Fn(u64) -> Result<ToyCnn>> {
    if arch != Architecture::ToyCnn {
        return Err(Error::BackboneUnavailable(format!(
            "{arch} needs pretrained weights that are not bundled; use toy_cnn"
        )));
    }
    Ok(move |seed| ToyCnn::new(seed, input, 2))
}

fn input_size(ds: &Dataset) -> Result<usize> {
    let (w, h) = ds
        .image_size()
        .ok_or_else(|| Error::EmptySplit("dataset has no images".into()))?;
    if w != h {
        return Err(Error::ConfigInvalid(format!(
            "toy CNN needs square images, got {w}x{h}"
        )));
    }
    Ok(w)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::MakeData(a) => make_data(cli, a).map(|p| println!("{}", p.display())),
        Command::Train(a) => train(cli, a).map(|s| {
            println!(
                "test AUC {:.4} ± {:.4}, AP {:.4} ± {:.4} over {} runs",
                s.mean_auc, s.std_auc, s.mean_ap, s.std_ap, s.runs
            )
        }),
        Command::Search(a) => search(cli, a).map(|p| println!("{}", p.display())),
        Command::Rank(a) => rank(a).map(|p| print!("{}", p.to_toml().unwrap_or_default())),
        Command::Eval(a) => eval(cli, a)
            .map(|r| println!("{}", serde_json::to_string_pretty(&r).unwrap_or_default())),
        Command::Scale(a) => scale(cli, a).map(|c| match c {
            Crossover::At(m) => println!("crossover at {m:.3}x"),
            Crossover::NotReached => println!("crossover not reached"),
        }),
        Command::AnnotateServe(a) => serve(cli, a),
    }
}

pub fn make_data(cli: &Cli, a: &MakeDataArgs) -> Result<PathBuf> {
    let mut cfg = SpuriousConfig::new(a.size, a.seed);
    cfg.per_class.train = a.train_per_class;
    cfg.per_class.val = a.val_per_class;
    cfg.per_class.test = a.test_per_class;
    cfg.train_rho = a.train_rho;
    cfg.test_rho = a.test_rho;
    let ds = generate_spurious_dataset(&cfg)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| cli.data_dir.join("spurious"));
    ds.write_to_dir(&out)
}

fn load_training_data(manifest: &Path, a: &TrainArgs, needs_saliency: bool) -> Result<Dataset> {
    let mut ds = Dataset::load(
        manifest,
        ManifestOptions {
            strict_saliency: false,
        },
    )?;
    if let Some(dir) = &a.fixation_dir {
        let dropped = ds.attach_fixations(dir, &EyetrackConfig::new(a.fixation_sigma)?)?;
        if !dropped.is_empty() {
            log::warn!("{} training samples had no usable fixations", dropped.len());
        }
    }
    if a.saliency_source == SaliencySubstitute::Mask {
        let dir = a.mask_dir.as_ref().ok_or_else(|| {
            Error::ConfigInvalid("--saliency-source mask needs --mask-dir".into())
        })?;
        for s in &mut ds.train {
            s.saliency = Some(mask_to_saliency(&dir.join(format!("{}.png", s.id)))?);
        }
    }
    if needs_saliency
        && matches!(
            a.saliency_source,
            SaliencySubstitute::Human | SaliencySubstitute::Inverted
        )
    {
        if let Some(s) = ds.train.iter().find(|s| s.saliency.is_none()) {
            return Err(Error::MissingSaliency(s.id.clone()));
        }
    }
    Ok(ds)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    setting: &'a str,
    architecture: String,
    domain: &'a str,
    saliency_source: String,
    config: &'a TrainConfig,
    summary: &'a RunSummary,
}

pub fn train(cli: &Cli, a: &TrainArgs) -> Result<RunSummary> {
    let (term, mut setting) = a.term.resolve()?;
    if a.saliency_source != SaliencySubstitute::Human && term.uses_saliency() {
        setting = format!("{setting}+{}", a.saliency_source);
    }
    let ds = load_training_data(&default_manifest(cli, &a.manifest), a, term.uses_saliency())?;
    let factory = toy_factory(a.arch, input_size(&ds)?)?;
    let mut cfg = a.schedule.config(term);
    cfg.saliency = SubstitutePlan {
        source: a.saliency_source,
        base_seed: a.schedule.seed,
        ..SubstitutePlan::default()
    };
    let rep = train_repeated(&cfg, &ds, factory)?;

    let name = a.name.clone().unwrap_or_else(|| setting.clone());
    let root = cli.runs_dir.join(&name);
    for (i, run) in rep.runs.iter().enumerate() {
        let dir = root.join(format!("run_{i}"));
        fs::create_dir_all(&dir)?;
        let best = run.result.best_record();
        run.best_model
            .to_checkpoint(
                run.result.best_epoch,
                CheckpointMetrics {
                    val_acc: best.val_acc,
                    val_auc: best.val_auc,
                },
            )
            .save(&dir.join("checkpoint"))?;
        write_curves_csv(&run.result, &dir.join("curves.csv"))?;
        write_test_scores_csv(&run.result, &dir.join("test_scores.csv"))?;
    }
    let meta = RunManifest {
        setting: &setting,
        architecture: a.arch.to_string(),
        domain: &a.domain,
        saliency_source: a.saliency_source.to_string(),
        config: &cfg,
        summary: &rep.summary,
    };
    fs::write(root.join("run.json"), serde_json::to_string_pretty(&meta)?)?;
    append_results(
        &cli.runs_dir.join("results.csv"),
        &[ResultRow {
            domain: a.domain.clone(),
            architecture: a.arch.to_string(),
            setting,
            mean_auc: rep.summary.mean_auc,
            std_auc: rep.summary.std_auc,
            mean_ap: rep.summary.mean_ap,
            std_ap: rep.summary.std_ap,
        }],
    )?;
    Ok(rep.summary)
}

pub fn search(cli: &Cli, a: &SearchArgs) -> Result<PathBuf> {
    let ds = Dataset::load(
        &default_manifest(cli, &a.manifest),
        ManifestOptions {
            strict_saliency: true,
        },
    )?;
    let factory = toy_factory(a.arch, input_size(&ds)?)?;
    let grid = if a.full_grid {
        SearchGrid::full()
    } else {
        SearchGrid::coarse()
    };
    let template = a.schedule.config(CyborgTerm::traditional());
    let table = grid_search(&template, &ds, &grid, a.arch.id(), &a.domain, factory)?;
    let out = a.out.clone().unwrap_or_else(|| {
        cli.runs_dir
            .join("search")
            .join(format!("{}_{}.csv", a.arch, a.domain))
    });
    table.save_csv(&out)?;
    Ok(out)
}

pub fn rank(a: &RankArgs) -> Result<Preset> {
    let tables = a
        .tables
        .iter()
        .map(|spec| {
            let mut parts = spec.splitn(3, ':');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(arch), Some(domain), Some(path)) => {
                    SearchTable::load_csv(Path::new(path), arch, domain)
                }
                _ => Err(Error::ConfigInvalid(format!(
                    "table {spec:?} is not ARCH:DOMAIN:PATH"
                ))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let preset = match a.tier {
        PresetTier::Gen => rank_gen(&tables)?,
        PresetTier::Arch => rank_arch(&tables)?,
        PresetTier::Opt => {
            if tables.len() != 1 {
                return Err(Error::ConfigInvalid(
                    "opt ranking takes exactly one table".into(),
                ));
            }
            rank_opt(&tables[0])?
        }
    };
    if let Some(out) = &a.out {
        preset.save(out)?;
    }
    Ok(preset)
}

#[derive(Serialize, Debug)]
pub struct EvalReport {
    pub split: String,
    pub samples: usize,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub cam_agreement: Option<std::collections::BTreeMap<MeasureKind, f64>>,
}

pub fn eval(cli: &Cli, a: &EvalArgs) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ToyCnn::from_checkpoint(&ckpt)?;
    let ds = Dataset::load(
        &default_manifest(cli, &a.manifest),
        ManifestOptions {
            strict_saliency: false,
        },
    )?;
    let samples = ds.split(a.split);
    let cam_class = match a.cam_class {
        CamChoice::TrueLabel => CamClass::TrueLabel,
        CamChoice::Predicted => CamClass::Predicted,
    };
    let (_, auc, ap) = score_split(&model, samples)?;
    let out = a.out_dir.clone().unwrap_or_else(|| {
        a.checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    fs::create_dir_all(&out)?;
    let cam = average_cam(&model, samples, cam_class)?;
    save_heatmap_png(
        cam.values(),
        16,
        &out.join(format!("average_cam_{}.png", a.split)),
    )?;
    let agreement = if samples.iter().all(|s| s.saliency.is_some()) {
        Some(cam_human_agreement(&model, samples, cam_class)?)
    } else {
        None
    };
    let report = EvalReport {
        split: a.split.to_string(),
        samples: samples.len(),
        auc,
        ap,
        cam_agreement: agreement,
    };
    fs::write(
        out.join(format!("eval_{}.json", a.split)),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

pub fn scale(cli: &Cli, a: &ScaleArgs) -> Result<Crossover> {
    let (term, _) = a.term.resolve()?;
    let mut data = SpuriousConfig::new(a.size, a.schedule.seed);
    data.per_class.train = a.train_per_class;
    let base = generate_spurious_dataset(&data)?;
    let factory = toy_factory(Architecture::ToyCnn, a.size)?;

    let cyborg = train_repeated(&a.schedule.config(term), &base, &factory)?;
    let target = cyborg.summary.mean_auc;
    let traditional = a.schedule.config(CyborgTerm::traditional());
    let mut series = Vec::new();
    let mut source = SyntheticSource::new(data)?;
    for &m in &a.multiples {
        let ds = scale_dataset(&base, m, &mut source)?;
        let rep = train_repeated(&traditional, &ds, &factory)?;
        log::info!("{m}x: traditional AUC {:.4}", rep.summary.mean_auc);
        series.push((m, rep.summary.mean_auc, rep.summary.std_auc));
    }
    let points: Vec<(f64, f64)> = series.iter().map(|&(m, auc, _)| (m, auc)).collect();
    let crossover = scaling_crossover(target, &points)?;

    let root = cli.runs_dir.join(&a.name);
    fs::create_dir_all(&root)?;
    let mut w = csv::Writer::from_path(root.join("scaling.csv"))?;
    w.write_record(["multiple", "setting", "mean_auc", "std_auc"])?;
    w.write_record([
        "1".to_string(),
        "cyborg".to_string(),
        target.to_string(),
        cyborg.summary.std_auc.to_string(),
    ])?;
    for (m, auc, std) in &series {
        w.write_record([
            m.to_string(),
            "traditional".into(),
            auc.to_string(),
            std.to_string(),
        ])?;
    }
    w.flush()?;
    let trad: Vec<f64> = points.iter().map(|p| p.1).collect();
    let flat = vec![target; trad.len()];
    render_curves(&[&trad, &flat], 480, 320)
        .save(root.join("scaling.png"))
        .map_err(Error::from)?;
    let summary = match crossover {
        Crossover::At(m) => serde_json::json!({ "target_auc": target, "crossover": m }),
        Crossover::NotReached => {
            serde_json::json!({ "target_auc": target, "crossover": "not reached" })
        }
    };
    fs::write(
        root.join("crossover.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    let (mean, _) = mean_std(&trad);
    log::info!("mean traditional AUC across multiples {mean:.4}");
    Ok(crossover)
}

pub fn serve(cli: &Cli, a: &ServeArgs) -> Result<()> {
    let cfg = annotate::ServiceConfig {
        manifest: default_manifest(cli, &a.manifest),
        store_dir: a
            .store
            .clone()
            .unwrap_or_else(|| cli.data_dir.join("annotations")),
        min_regions: a.min_regions,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(annotate::serve(&cfg, a.addr))
}
