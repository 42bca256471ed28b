use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use closeup::fusion::FusionThresholds;
use closeup::metrics::{CloseupLimits, CloseupMode, DEFAULT_LAMBDA};
use closeup::occlusion::DEFAULT_TAU_D;
use closeup::pipeline::{self, MetricsInputs, PipelineConfig, PipelineError, Summary, WarpStage};
use closeup::scene_io::{load_dataset, read_cameras};
use closeup::warp::{HierarchicalParams, LowResScale};

#[derive(Parser)]
#[command(name = "closeup", version, about = "Geometric conditioning for close-up novel view synthesis")]
struct Cli {
    /// Worker threads (0 = one per core)
    #[arg(long, global = true, env = "CLOSEUP_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render an analytic scene description into a dataset
    Synth {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hierarchically warp reference views into target cameras
    Warp {
        #[command(flatten)]
        io: TargetIo,
        #[command(flatten)]
        refs: RefArgs,
        #[command(flatten)]
        warp: WarpArgs,
    },
    /// Occlusion-aware suppression of warped images written by `warp`
    Suppress {
        /// Directory holding <target>.rgb.png/.depth.pfm/.flags.png
        #[arg(long)]
        warp_dir: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Depth-difference threshold, dataset depth units
        #[arg(long, default_value_t = DEFAULT_TAU_D)]
        tau_d: f64,
    },
    /// Fuse all views into a consistency-filtered point cloud
    Fuse {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        fusion: FusionArgs,
        /// Keep one point per voxel of this edge length
        #[arg(long)]
        dedup: Option<f64>,
    },
    /// Project a fused point cloud into target cameras
    Project {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pixel and image confidence weights from fusion counts
    Confidence {
        #[command(flatten)]
        io: TargetIo,
        /// Directory of per-view count rasters written by `fuse`
        #[arg(long)]
        counts: PathBuf,
        #[command(flatten)]
        refs: RefArgs,
        /// Consistent-view count giving full pixel confidence
        #[arg(long, default_value_t = 10)]
        tau_num: u32,
    },
    /// Close-up target cameras derived from dataset views
    CloseupCams {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        factor: f64,
        /// Source view ids (comma separated); all views when omitted
        #[arg(long, value_delimiter = ',')]
        views: Vec<String>,
        /// Output camera list
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        zoom_min: f64,
        #[arg(long, default_value_t = 5.0)]
        zoom_max: f64,
        #[arg(long, default_value_t = 0.5)]
        dolly_min: f64,
        #[arg(long, default_value_t = 0.6)]
        dolly_max: f64,
    },
    /// PSNR, SSIM and confidence-weighted loss of a render against a reference image
    Metrics {
        #[arg(long)]
        render: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Valid-pixel mask PNG
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Pixel weight raster (PFM)
        #[arg(long)]
        pixel_weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        w_image: f64,
        /// SSIM share of the loss
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// warp → suppress → fuse → project → confidence
    Pipeline {
        #[command(flatten)]
        io: TargetIo,
        #[command(flatten)]
        refs: RefArgs,
        #[command(flatten)]
        warp: WarpArgs,
        /// Skip occlusion suppression (training-data mode)
        #[arg(long)]
        no_suppress: bool,
        #[arg(long, default_value_t = DEFAULT_TAU_D)]
        tau_d: f64,
        #[command(flatten)]
        fusion: FusionArgs,
        #[arg(long)]
        dedup: Option<f64>,
    },
}

#[derive(Args)]
struct TargetIo {
    #[arg(long)]
    manifest: PathBuf,
    /// Target camera list
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefArgs {
    /// Reference view ids (comma separated); the first two views when omitted
    #[arg(long, value_delimiter = ',')]
    refs: Vec<String>,
}

#[derive(Args)]
struct WarpArgs {
    /// Lower confidence quantile kept as reliable
    #[arg(long, default_value_t = 0.9)]
    confidence_quantile: f64,
    /// Depth-edge threshold relative to local depth
    #[arg(long, default_value_t = 0.05)]
    grad_threshold: f64,
    /// Low-resolution scale: auto, or a fixed integer factor
    #[arg(long, default_value = "auto", value_parser = parse_scale)]
    low_res_scale: LowResScale,
}

#[derive(Args)]
struct FusionArgs {
    /// 3D distance threshold, scene units
    #[arg(long, default_value_t = 0.01)]
    tau_g: f64,
    /// RGB distance threshold
    #[arg(long, default_value_t = 0.1)]
    tau_c: f64,
    /// Minimum consistent views for a fused point
    #[arg(long, default_value_t = 10)]
    tau_num: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Zoom,
    Dolly,
}

fn parse_scale(s: &str) -> Result<LowResScale, String> {
    if s == "auto" {
        return Ok(LowResScale::Adaptive);
    }
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(LowResScale::Fixed(n)),
        _ => Err(format!("expected 'auto' or a positive integer, got '{s}'")),
    }
}

impl WarpArgs {
    fn params(&self) -> Result<HierarchicalParams, PipelineError> {
        if !(0.0..=1.0).contains(&self.confidence_quantile) {
            return Err(PipelineError::Input(format!(
                "confidence-quantile must lie in [0, 1], got {}",
                self.confidence_quantile
            )));
        }
        if !(self.grad_threshold.is_finite() && self.grad_threshold >= 0.0) {
            return Err(PipelineError::Input(format!(
                "grad-threshold must be nonnegative, got {}",
                self.grad_threshold
            )));
        }
        Ok(HierarchicalParams {
            confidence_quantile: self.confidence_quantile,
            grad_rel_threshold: self.grad_threshold,
            scale: self.low_res_scale,
        })
    }
}

impl FusionArgs {
    fn thresholds(&self) -> Result<FusionThresholds, PipelineError> {
        Ok(FusionThresholds::new(self.tau_g, self.tau_c, self.tau_num)?)
    }
}

fn refs_opt(r: &RefArgs) -> Option<&[String]> {
    (!r.refs.is_empty()).then_some(r.refs.as_slice())
}

fn run(command: Command) -> Result<Vec<Summary>, PipelineError> {
    let one = |s: Summary| vec![s];
    Ok(match command {
        Command::Synth { scene, out } => one(pipeline::stage_synth(&scene, &out)?),
        Command::Warp { io, refs, warp } => {
            let params = warp.params()?;
            let views = load_dataset(&io.manifest)?;
            let targets = read_cameras(&io.targets)?;
            let refs = pipeline::select_refs(&views, refs_opt(&refs))?;
            let stage = WarpStage {
                views: &views,
                refs: &refs,
                targets: &targets,
                params,
            };
            one(stage.run(&io.out)?.1)
        }
        Command::Suppress {
            warp_dir,
            targets,
            out,
            tau_d,
        } => {
            let ids: Vec<String> = read_cameras(&targets)?.into_iter().map(|(id, _)| id).collect();
            let warps = ids
                .iter()
                .map(|id| pipeline::read_warp(&warp_dir, id))
                .collect::<Result<Vec<_>, _>>()?;
            one(pipeline::stage_suppress(&warps, &ids, tau_d, &out)?.1)
        }
        Command::Fuse {
            manifest,
            out,
            fusion,
            dedup,
        } => {
            let th = fusion.thresholds()?;
            let views = load_dataset(&manifest)?;
            one(pipeline::stage_fuse(&views, &th, dedup, &out)?)
        }
        Command::Project {
            cloud,
            targets,
            out,
        } => {
            let targets = read_cameras(&targets)?;
            one(pipeline::stage_project(&cloud, &targets, &out)?)
        }
        Command::Confidence {
            io,
            counts,
            refs,
            tau_num,
        } => {
            let views = load_dataset(&io.manifest)?;
            let targets = read_cameras(&io.targets)?;
            let refs = pipeline::select_refs(&views, refs_opt(&refs))?;
            let maps = pipeline::read_counts(&counts, &views)?;
            one(pipeline::stage_confidence(
                &views, &maps, &refs, &targets, tau_num, &io.out,
            )?)
        }
        Command::CloseupCams {
            manifest,
            mode,
            factor,
            views,
            out,
            zoom_min,
            zoom_max,
            dolly_min,
            dolly_max,
        } => {
            let mode = match mode {
                ModeArg::Zoom => CloseupMode::Zoom,
                ModeArg::Dolly => CloseupMode::Dolly,
            };
            let limits = CloseupLimits {
                zoom: zoom_min..=zoom_max,
                dolly: dolly_min..=dolly_max,
            };
            one(pipeline::stage_closeup_cams(
                &manifest, &views, mode, factor, &limits, &out,
            )?)
        }
        Command::Metrics {
            render,
            reference,
            mask,
            pixel_weights,
            w_image,
            lambda,
            out,
        } => {
            let inputs = MetricsInputs {
                render: &render,
                reference: &reference,
                mask: mask.as_deref(),
                pixel_weights: pixel_weights.as_deref(),
                w_image,
                lambda,
            };
            one(pipeline::stage_metrics(&inputs, &out)?)
        }
        Command::Pipeline {
            io,
            refs,
            warp,
            no_suppress,
            tau_d,
            fusion,
            dedup,
        } => {
            let config = PipelineConfig {
                refs: refs_opt(&refs).map(<[String]>::to_vec),
                warp: warp.params()?,
                suppress: !no_suppress,
                tau_d,
                fusion: fusion.thresholds()?,
                dedup,
            };
            pipeline::run_pipeline(&io.manifest, &io.targets, &io.out, &config)?
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(summaries) => {
            for s in summaries {
                println!("{s}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
