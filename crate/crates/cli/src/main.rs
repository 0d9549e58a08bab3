use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use ltprune::config::KeyValues;
use ltprune::cost_model::{estimate, ModelSpec};
use ltprune::pipeline::prune_visual;
use ltprune::similarity::{cls_similarity, sort_descending};
use ltprune::tensor_io::{load_mask, load_matrix, save_mask};
use ltprune::viz::{parse_grid, render_mask, render_over_image, GrayImage};
use ltprune::{
    run_pipeline, run_stream, EmbeddingMatrix, EvictionBudget, EvictionConfig, PipelineConfig,
    RoleTag, SmoothingMode,
};

/// Exit status 2: bad flags or unreadable inputs. Exit status 1: failures
/// after inputs were accepted.
enum Failure {
    Usage(anyhow::Error),
    Compute(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Compute(e.into())
    }
}

type CmdResult = Result<(), Failure>;

trait UsageContext<T> {
    fn usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UsageContext<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}

#[derive(Parser)]
#[command(
    name = "ltprune",
    version,
    about = "Two-stage dynamic token pruning toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: keep the head of the CLS-similarity curve
    Prune {
        /// 1 x d CLS embedding (LTP1 or CSV)
        cls: PathBuf,
        /// n x d visual token embeddings
        visual: PathBuf,
        #[arg(long, default_value_t = 0.24)]
        alpha: f64,
        #[arg(long, default_value = "multiply")]
        mode: String,
        /// Writes stage1.mask and split.csv here
        #[arg(short, long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Stage 2: heavy/recent budget eviction over a token stream
    Evict {
        tokens: PathBuf,
        /// Index of the first text token
        #[arg(long, default_value_t = 0)]
        boundary: usize,
        /// Recent budget M
        #[arg(long)]
        recent: usize,
        /// Heavy budget N
        #[arg(long)]
        heavy: usize,
        /// Do not credit arriving tokens with their self-attention
        #[arg(long)]
        exclude_self: bool,
        /// Writes stage2.mask and eviction_log.csv here
        #[arg(short, long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Both stages end to end
    Pipeline {
        cls: PathBuf,
        visual: PathBuf,
        /// Text token embeddings; omit for an image-only input
        text: Option<PathBuf>,
        /// key=value file: alpha, mode, heavy, recent, heavy_ratio,
        /// recent_ratio, cache_budget, include_self, projection
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Prefill FLOPs, latency and memory estimate
    Cost {
        /// Built-in name or a <name>.preset file in $LTP_PRESET_DIR
        #[arg(long, default_value = "vicuna-7b-fp16")]
        preset: String,
        #[arg(long)]
        tokens: usize,
        /// Overrides the preset's utilization
        #[arg(long)]
        utilization: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Sorted CLS-similarity curve as CSV (rank, similarity, original_index)
    Analyze {
        cls: PathBuf,
        visual: PathBuf,
        /// Output file; stdout when absent
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Render a mask on a patch grid as binary PGM
    Viz {
        mask: PathBuf,
        /// Patch grid, e.g. 24x24
        #[arg(long)]
        grid: String,
        /// P5 image to grey out instead of a one-pixel-per-patch map
        #[arg(long)]
        patch_image: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

fn load(path: &Path, role: RoleTag) -> Result<EmbeddingMatrix, Failure> {
    load_matrix(path)
        .map(|m| m.with_role(role))
        .with_context(|| format!("loading {}", path.display()))
        .usage()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .usage()
}

fn prune(cls: &Path, visual: &Path, alpha: f64, mode: &str, out_dir: &Path) -> CmdResult {
    let mode: SmoothingMode = mode.parse().usage()?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Failure::Usage(anyhow!(
            "--alpha must be positive, got {alpha}"
        )));
    }
    let cls = load(cls, RoleTag::Cls)?;
    let visual = load(visual, RoleTag::Visual)?;
    ensure_dir(out_dir)?;
    let (split, mask) = prune_visual(&cls, &visual, alpha, mode)?;
    if split.keeps_all() {
        eprintln!(
            "warning: similarity curve has no split point; keeping all {} tokens",
            mask.total()
        );
    }
    save_mask(&mask, out_dir.join("stage1.mask"))?;
    let mut csv = Vec::new();
    split.write_objective_csv(&mut csv)?;
    write(&out_dir.join("split.csv"), csv)?;
    let i_star = split
        .i_star
        .map_or_else(|| "none".to_string(), |i| i.to_string());
    println!(
        "kept {} of {} visual tokens (i* = {i_star}, alpha = {alpha}, mode = {mode})",
        mask.len(),
        mask.total()
    );
    Ok(())
}

fn evict(
    tokens: &Path,
    boundary: usize,
    recent: usize,
    heavy: usize,
    exclude_self: bool,
    out_dir: &Path,
) -> CmdResult {
    let config = EvictionConfig::new(heavy, recent)
        .usage()?
        .with_include_self(!exclude_self);
    let tokens = load(tokens, RoleTag::Text)?;
    if boundary > tokens.rows() {
        return Err(Failure::Usage(anyhow!(
            "--boundary {boundary} exceeds the {} input tokens",
            tokens.rows()
        )));
    }
    ensure_dir(out_dir)?;
    let result = run_stream(&tokens, boundary, config)?;
    save_mask(&result.mask, out_dir.join("stage2.mask"))?;
    let mut csv = Vec::new();
    result.state.write_log_csv(&mut csv)?;
    write(&out_dir.join("eviction_log.csv"), csv)?;
    println!(
        "kept {} of {} tokens ({} visual, {} text), {} evicted",
        result.mask.len(),
        result.mask.total(),
        result.kept_visual(),
        result.kept_text(),
        result.state.evicted().len()
    );
    Ok(())
}

const PIPELINE_KEYS: &[&str] = &[
    "alpha",
    "mode",
    "heavy",
    "recent",
    "heavy_ratio",
    "recent_ratio",
    "cache_budget",
    "include_self",
    "projection",
];

fn pipeline_config(path: &Path) -> anyhow::Result<PipelineConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let kv = KeyValues::parse(&text).with_context(|| format!("in {}", path.display()))?;
    kv.reject_unknown(PIPELINE_KEYS)
        .with_context(|| format!("in {}", path.display()))?;
    let mut config = PipelineConfig::default();
    if let Some(alpha) = kv.parsed("alpha")? {
        config.alpha = alpha;
    }
    if let Some(mode) = kv.get("mode") {
        config.smoothing_mode = mode.parse()?;
    }
    let include_self = kv.parsed("include_self")?.unwrap_or(true);
    let heavy: Option<usize> = kv.parsed("heavy")?;
    let recent: Option<usize> = kv.parsed("recent")?;
    config.eviction = match (heavy, recent) {
        (Some(h), Some(r)) => {
            EvictionBudget::Fixed(EvictionConfig::new(h, r)?.with_include_self(include_self))
        }
        (None, None) => EvictionBudget::Ratios {
            heavy_ratio: kv.parsed("heavy_ratio")?.unwrap_or(0.5),
            recent_ratio: kv.parsed("recent_ratio")?.unwrap_or(0.5),
            cache_budget: kv.parsed("cache_budget")?,
            include_self,
        },
        _ => return Err(anyhow!("heavy and recent must be given together")),
    };
    if let Some(p) = kv.get("projection") {
        let base = path.parent().unwrap_or(Path::new("."));
        let proj_path = base.join(p);
        config.projection = Some(
            load_matrix(&proj_path)
                .with_context(|| format!("loading {}", proj_path.display()))?
                .with_role(RoleTag::Projection),
        );
    }
    if !(config.alpha.is_finite() && config.alpha > 0.0) {
        return Err(anyhow!("alpha must be positive, got {}", config.alpha));
    }
    Ok(config)
}

fn pipeline(
    cls: &Path,
    visual: &Path,
    text: Option<&Path>,
    config: Option<&Path>,
    out_dir: &Path,
) -> CmdResult {
    let config = match config {
        Some(p) => pipeline_config(p).usage()?,
        None => PipelineConfig::default(),
    };
    let cls = load(cls, RoleTag::Cls)?;
    let visual = load(visual, RoleTag::Visual)?;
    let text = text.map(|p| load(p, RoleTag::Text)).transpose()?;
    ensure_dir(out_dir)?;
    let report = run_pipeline(&cls, &visual, text.as_ref(), &config)?;
    if report.split.keeps_all() {
        eprintln!("warning: similarity curve has no split point; stage 1 kept every token");
    }
    save_mask(&report.stage1_mask, out_dir.join("stage1.mask"))?;
    save_mask(&report.stage2_mask, out_dir.join("stage2.mask"))?;
    let mut csv = Vec::new();
    report.split.write_objective_csv(&mut csv)?;
    write(&out_dir.join("split.csv"), csv)?;
    let mut csv = Vec::new();
    report.eviction.write_log_csv(&mut csv)?;
    write(&out_dir.join("eviction_log.csv"), csv)?;
    write(&out_dir.join("report.csv"), report.counts.to_csv())?;
    let summary = report.counts.to_text();
    write(&out_dir.join("report.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn resolve_preset(name: &str) -> anyhow::Result<ModelSpec> {
    if let Some(dir) = std::env::var_os("LTP_PRESET_DIR") {
        let path = Path::new(&dir).join(format!("{name}.preset"));
        if path.is_file() {
            return ModelSpec::load(&path).with_context(|| format!("in {}", path.display()));
        }
    }
    ModelSpec::builtin(name).ok_or_else(|| {
        anyhow!(
            "unknown preset '{name}' (built-in: {})",
            ModelSpec::builtin_names().join(", ")
        )
    })
}

fn cost(preset: &str, tokens: usize, utilization: Option<f64>, format: Format) -> CmdResult {
    let mut spec = resolve_preset(preset).usage()?;
    if let Some(u) = utilization {
        spec.utilization = u;
    }
    spec.validate().usage()?;
    let report = estimate(&spec, tokens).usage()?;
    match format {
        Format::Text => print!("{}", report.to_text(&spec)),
        Format::Csv => print!("{}", report.to_csv(&spec)),
    }
    Ok(())
}

fn analyze(cls: &Path, visual: &Path, output: Option<&Path>) -> CmdResult {
    let cls = load(cls, RoleTag::Cls)?;
    let visual = load(visual, RoleTag::Visual)?;
    let curve = sort_descending(&cls_similarity(&cls, &visual)?)?;
    let mut csv = String::from("rank,similarity,original_index\n");
    for (rank, (v, src)) in curve.values().iter().zip(curve.source_index()).enumerate() {
        csv.push_str(&format!("{},{},{}\n", rank + 1, v, src));
    }
    match output {
        Some(path) => write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn viz(mask: &Path, grid: &str, patch_image: Option<&Path>, output: &Path) -> CmdResult {
    let (w, h) = parse_grid(grid).usage()?;
    let mask = load_mask(mask)
        .with_context(|| format!("loading {}", mask.display()))
        .usage()?;
    if w * h != mask.total() {
        return Err(Failure::Usage(anyhow!(
            "grid {w}x{h} has {} cells but the mask covers {} tokens",
            w * h,
            mask.total()
        )));
    }
    let image = match patch_image {
        Some(p) => {
            let src = GrayImage::load(p)
                .with_context(|| format!("loading {}", p.display()))
                .usage()?;
            render_over_image(&mask, w, h, &src).usage()?
        }
        None => render_mask(&mask, w, h)?,
    };
    image.save(output)?;
    println!(
        "{}x{} image, {} of {} patches pruned",
        image.width,
        image.height,
        mask.pruned(),
        mask.total()
    );
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Prune {
            cls,
            visual,
            alpha,
            mode,
            out_dir,
        } => prune(&cls, &visual, alpha, &mode, &out_dir),
        Command::Evict {
            tokens,
            boundary,
            recent,
            heavy,
            exclude_self,
            out_dir,
        } => evict(&tokens, boundary, recent, heavy, exclude_self, &out_dir),
        Command::Pipeline {
            cls,
            visual,
            text,
            config,
            out_dir,
        } => pipeline(&cls, &visual, text.as_deref(), config.as_deref(), &out_dir),
        Command::Cost {
            preset,
            tokens,
            utilization,
            format,
        } => cost(&preset, tokens, utilization, format),
        Command::Analyze {
            cls,
            visual,
            output,
        } => analyze(&cls, &visual, output.as_deref()),
        Command::Viz {
            mask,
            grid,
            patch_image,
            output,
        } => viz(&mask, &grid, patch_image.as_deref(), &output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
