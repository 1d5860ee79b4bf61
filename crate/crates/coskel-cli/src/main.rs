//! Command-line front end: batch runs, evaluation, ground-truth building,
//! overlay rendering and flow cache warm-up.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 data, 3 internal.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coskel::error::Error;
use coskel::eval::{evaluate_image, ingest_dataset, write_report, Layout, MetricsRow};
use coskel::flow::{ComputedFlows, DirectoryFlows, FlowProvider};
use coskel::io;
use coskel::neighbors::Mode;
use coskel::pipeline::{
    plan_flows, render_overlay, run, CollectionImage, Providers, RunConfig,
};
use coskel::prune::SkeletonEnergyConfig;
use coskel::raster::PixelNeighborhood;
use coskel::saliency::{BuiltinSaliency, DirectorySaliency, SaliencyConfig};

#[derive(Parser)]
#[command(name = "coskel", version, about = "Joint skeleton and segmentation extraction over image collections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the batch engine on a dataset.
    Run(RunArgs),
    /// Score predictions against ground truth into a CSV report.
    Eval(EvalArgs),
    /// Build skeleton annotations from segmentation masks.
    BuildGt(BuildGtArgs),
    /// Render segmentation + skeleton composites.
    Overlay(OverlayArgs),
    /// Precompute and cache the flows a run would need.
    FlowCache(FlowCacheArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    use_key_priors: bool,
    /// Decouple the two tasks (segmentation-only iterations).
    #[arg(long)]
    no_interdependence: bool,
    #[arg(long)]
    k_clusters: Option<usize>,
    #[arg(long)]
    k_nn: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => parse_config_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(mode) = &self.mode {
            cfg.mode = mode.parse::<Mode>().map_err(|e| Failure::Usage(e.to_string()))?;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.max_iterations {
            cfg.max_iterations = v;
        }
        if self.use_key_priors {
            cfg.use_key_priors = true;
        }
        if self.no_interdependence {
            cfg.interdependence = false;
        }
        if self.k_clusters.is_some() {
            cfg.k_clusters = self.k_clusters;
        }
        if self.k_nn.is_some() {
            cfg.k_nn = self.k_nn;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset root (images/, optional masks/, skeletons/, train_list.txt).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for masks, skeletons, overlays and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Dump fused priors every iteration.
    #[arg(long)]
    dump_priors: bool,
    /// Directory of precomputed 16-bit saliency maps keyed by stem.
    #[arg(long)]
    saliency_dir: Option<PathBuf>,
    /// Directory of precomputed `<src>__<dst>.flow` fields.
    #[arg(long)]
    flow_dir: Option<PathBuf>,
    /// On-disk flow cache directory.
    #[arg(long)]
    flow_cache: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction directory (skeletons/ and/or segmentations/).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth dataset root (skeletons/ and/or masks/).
    #[arg(long)]
    gt: PathBuf,
    /// Report CSV path (default: <pred>/report.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildGtArgs {
    /// Directory of segmentation masks (recursed).
    #[arg(long)]
    masks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reconstruction weight of the pruning energy.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct OverlayArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    masks: PathBuf,
    #[arg(long)]
    skeletons: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FlowCacheArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    /// Cache directory to fill.
    #[arg(long)]
    cache: PathBuf,
}

enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Internal(m) => m,
        }
    }
}

fn parse_config_file(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = RunConfig::default();
    let mut saliency_bins = cfg.saliency.color_bins_per_channel();
    let mut saliency_weight = cfg.saliency.spatial_weight();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Failure::Usage(format!(
                "{}:{}: expected key = value",
                path.display(),
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| {
            Failure::Usage(format!(
                "{}:{}: invalid {what} '{value}'",
                path.display(),
                lineno + 1
            ))
        };
        macro_rules! parse {
            ($ty:ty, $what:expr) => {
                value.parse::<$ty>().map_err(|_| bad($what))?
            };
        }
        match key {
            "mode" => cfg.mode = value.parse::<Mode>().map_err(|_| bad("mode"))?,
            "lambda" => cfg.lambda = parse!(f64, "number"),
            "max_iterations" => cfg.max_iterations = parse!(usize, "integer"),
            "use_key_priors" => cfg.use_key_priors = parse!(bool, "bool"),
            "interdependence" => cfg.interdependence = parse!(bool, "bool"),
            "k_clusters" => cfg.k_clusters = Some(parse!(usize, "integer")),
            "k_nn" => cfg.k_nn = Some(parse!(usize, "integer")),
            "seed" => cfg.seed = parse!(u64, "integer"),
            "workers" => cfg.workers = parse!(usize, "integer"),
            "dump_priors" => cfg.dump_priors = parse!(bool, "bool"),
            "saliency.color_bins_per_channel" => saliency_bins = parse!(usize, "integer"),
            "saliency.spatial_weight" => saliency_weight = parse!(f64, "number"),
            "skeleton.alpha" => cfg.skeleton.alpha = parse!(f64, "number"),
            "skeleton.epsilon" => cfg.skeleton.epsilon = parse!(f64, "number"),
            "skeleton.neighborhood_radius" => {
                cfg.skeleton.neighborhood = PixelNeighborhood::new(parse!(usize, "integer"))
            }
            "segmentation.gamma" => cfg.segmentation.gamma = parse!(f64, "number"),
            "segmentation.beta" => {
                cfg.segmentation.beta = if value == "auto" {
                    None
                } else {
                    Some(parse!(f64, "number"))
                }
            }
            "segmentation.gmm_components" => {
                cfg.segmentation.gmm_components = parse!(usize, "integer")
            }
            "segmentation.graphcut_rounds" => {
                cfg.segmentation.graphcut_rounds = parse!(usize, "integer")
            }
            "segmentation.neighborhood_radius" => {
                cfg.segmentation.neighborhood = PixelNeighborhood::new(parse!(usize, "integer"))
            }
            "flow.descriptor_cell" => cfg.flow.descriptor_cell = parse!(usize, "integer"),
            "flow.pyramid_levels" => cfg.flow.pyramid_levels = parse!(usize, "integer"),
            "flow.smoothness_weight" => cfg.flow.smoothness_weight = parse!(f64, "number"),
            "flow.max_displacement_per_level" => {
                cfg.flow.max_displacement_per_level = parse!(usize, "integer")
            }
            "flow.iterations_per_level" => {
                cfg.flow.iterations_per_level = parse!(usize, "integer")
            }
            "flow.working_resolution" => cfg.flow.working_resolution = parse!(usize, "integer"),
            other => {
                return Err(Failure::Usage(format!(
                    "{}:{}: unknown key '{other}'",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    cfg.saliency = SaliencyConfig::new(saliency_bins, saliency_weight)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = args.config.build()?;
    cfg.dump_priors |= args.dump_priors;
    let (entries, reports) = ingest_dataset(&args.data, Layout::Auto)?;
    for report in &reports {
        eprintln!("rejected: {report}");
    }
    if entries.is_empty() {
        return Err(Failure::Data(format!(
            "no usable images under {}",
            args.data.display()
        )));
    }
    let collection = CollectionImage::from_entries(entries);
    let saliency: Box<dyn coskel::saliency::SaliencyProvider> = match &args.saliency_dir {
        Some(dir) => Box::new(DirectorySaliency { dir: dir.clone() }),
        None => Box::new(BuiltinSaliency {
            config: cfg.saliency,
        }),
    };
    let flows: Box<dyn FlowProvider> = match &args.flow_dir {
        Some(dir) => Box::new(DirectoryFlows { dir: dir.clone() }),
        None => Box::new(ComputedFlows {
            config: cfg.resolved().flow,
            cache_dir: args.flow_cache.clone(),
        }),
    };
    let providers = Providers { saliency, flows };
    let outcome = run(&collection, &cfg, &providers, Some(&args.out))?;
    let flagged: Vec<&str> = outcome
        .manifest
        .images
        .iter()
        .filter(|img| img.flagged)
        .map(|img| img.stem.as_str())
        .collect();
    for stem in &flagged {
        eprintln!("flagged (kept previous iterate): {stem}");
    }
    println!(
        "processed {} images, {} flows, manifest at {}",
        outcome.images.len(),
        outcome.manifest.flow_count,
        args.out.join("manifest.json").display()
    );
    Ok(())
}

/// Recursively collects images under `dir` keyed by their path relative to
/// it, without extension.
fn collect_tree(dir: &Path) -> Vec<(String, PathBuf)> {
    fn walk(dir: &Path, prefix: &str, out: &mut Vec<(String, PathBuf)>) {
        let Ok(entries) = std::fs::read_dir(dir) else {
            return;
        };
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths {
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            if path.is_dir() {
                walk(&path, &format!("{prefix}{name}/"), out);
            } else if matches!(
                path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
            ) {
                let stem = path.file_stem().unwrap().to_string_lossy();
                out.push((format!("{prefix}{stem}"), path));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, "", &mut out);
    out
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let pred_skeletons = collect_tree(&args.pred.join("skeletons"));
    let gt_skeletons = collect_tree(&args.gt.join("skeletons"));
    let pred_masks = collect_tree(&args.pred.join("segmentations"));
    let gt_masks = collect_tree(&args.gt.join("masks"));

    let lookup = |list: &[(String, PathBuf)], stem: &str| -> Option<PathBuf> {
        list.iter().find(|(s, _)| s == stem).map(|(_, p)| p.clone())
    };
    let mut stems: Vec<String> = pred_skeletons
        .iter()
        .chain(pred_masks.iter())
        .map(|(s, _)| s.clone())
        .collect();
    stems.sort();
    stems.dedup();

    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut matched = 0usize;
    for stem in &stems {
        let skeleton_pair = match (lookup(&pred_skeletons, stem), lookup(&gt_skeletons, stem)) {
            (Some(p), Some(g)) => Some((io::load_mask(&p)?, io::load_mask(&g)?)),
            (Some(_), None) => {
                eprintln!("no ground-truth skeleton for {stem}");
                None
            }
            _ => None,
        };
        let mask_pair = match (lookup(&pred_masks, stem), lookup(&gt_masks, stem)) {
            (Some(p), Some(g)) => Some((io::load_mask(&p)?, io::load_mask(&g)?)),
            (Some(_), None) => {
                eprintln!("no ground-truth mask for {stem}");
                None
            }
            _ => None,
        };
        if skeleton_pair.is_none() && mask_pair.is_none() {
            continue;
        }
        matched += 1;
        let category = stem.rsplit_once('/').map(|(c, _)| c).unwrap_or("");
        let short = stem.rsplit_once('/').map(|(_, s)| s).unwrap_or(stem);
        let row = evaluate_image(
            short,
            if category.is_empty() { None } else { Some(category) },
            skeleton_pair.as_ref().map(|(p, g)| (p, g)),
            mask_pair.as_ref().map(|(p, g)| (p, g)),
        )?;
        rows.push(row);
    }
    if matched == 0 {
        return Err(Failure::Data(
            "no prediction/ground-truth pairs share a stem".into(),
        ));
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.pred.join("report.csv"));
    write_report(&rows, &out)?;
    println!("scored {matched} images into {}", out.display());
    Ok(())
}

fn cmd_build_gt(args: BuildGtArgs) -> Result<(), Failure> {
    let masks = collect_tree(&args.masks);
    if masks.is_empty() {
        return Err(Failure::Data(format!(
            "no masks under {}",
            args.masks.display()
        )));
    }
    let cfg = SkeletonEnergyConfig {
        alpha: args.alpha.unwrap_or(SkeletonEnergyConfig::default().alpha),
        ..Default::default()
    };
    let results: Vec<(String, Result<(), Error>)> = {
        use rayon::prelude::*;
        masks
            .par_iter()
            .map(|(stem, path)| {
                let work = || -> Result<(), Error> {
                    let mask = io::load_mask(path)?;
                    let skeleton = coskel::eval::build_skeleton_groundtruth(&mask, &cfg)?;
                    io::save_mask(args.out.join(format!("{stem}.png")), &skeleton)
                };
                (stem.clone(), work())
            })
            .collect()
    };
    let mut ok = 0usize;
    for (stem, result) in results {
        match result {
            Ok(()) => ok += 1,
            Err(e) => eprintln!("skipped {stem}: {e}"),
        }
    }
    if ok == 0 {
        return Err(Failure::Data("no skeletons could be built".into()));
    }
    println!("built {ok} skeletons into {}", args.out.display());
    Ok(())
}

fn cmd_overlay(args: OverlayArgs) -> Result<(), Failure> {
    let images = collect_tree(&args.images);
    let masks = collect_tree(&args.masks);
    let skeletons = collect_tree(&args.skeletons);
    let lookup = |list: &[(String, PathBuf)], stem: &str| -> Option<PathBuf> {
        list.iter().find(|(s, _)| s == stem).map(|(_, p)| p.clone())
    };
    let mut rendered = 0usize;
    for (stem, img_path) in &images {
        let (Some(mask_path), Some(skel_path)) =
            (lookup(&masks, stem), lookup(&skeletons, stem))
        else {
            eprintln!("missing mask or skeleton for {stem}");
            continue;
        };
        let img = io::load_raster(img_path)?;
        let mask = io::load_mask(&mask_path)?;
        let skeleton = io::load_mask(&skel_path)?;
        let overlay = render_overlay(&img, &mask, &skeleton);
        io::save_raster(args.out.join(format!("{stem}.png")), &overlay)?;
        rendered += 1;
    }
    if rendered == 0 {
        return Err(Failure::Data("no complete image/mask/skeleton triples".into()));
    }
    println!("rendered {rendered} overlays into {}", args.out.display());
    Ok(())
}

fn cmd_flow_cache(args: FlowCacheArgs) -> Result<(), Failure> {
    let cfg = args.config.build()?;
    let (entries, reports) = ingest_dataset(&args.data, Layout::Auto)?;
    for report in &reports {
        eprintln!("rejected: {report}");
    }
    let collection = CollectionImage::from_entries(entries);
    if collection.is_empty() {
        return Err(Failure::Data("no usable images".into()));
    }
    let (_, pairs) = plan_flows(&collection, &cfg.resolved())?;
    let provider = ComputedFlows {
        config: cfg.resolved().flow,
        cache_dir: Some(args.cache.clone()),
    };
    std::fs::create_dir_all(&args.cache)
        .map_err(|e| Failure::Data(format!("cannot create cache dir: {e}")))?;
    {
        use rayon::prelude::*;
        pairs
            .par_iter()
            .map(|&(a, b)| {
                provider
                    .flow(
                        &collection[a].stem,
                        &collection[a].raster,
                        &collection[b].stem,
                        &collection[b].raster,
                    )
                    .map(|_| ())
            })
            .collect::<Result<Vec<()>, Error>>()?;
    }
    println!("cached {} flows into {}", pairs.len(), args.cache.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = std::panic::catch_unwind(move || match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::BuildGt(args) => cmd_build_gt(args),
        Command::Overlay(args) => cmd_overlay(args),
        Command::FlowCache(args) => cmd_flow_cache(args),
    })
    .unwrap_or_else(|panic| {
        let what = panic
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| panic.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure::Internal(what))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
