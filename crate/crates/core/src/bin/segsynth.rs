use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use segsynth::backend::server::MockServer;
use segsynth::backend::MockBackend;
use segsynth::config::{ConfigError, Overrides, Paths, PipelineConfig, Resolution};
use segsynth::dataset_io::{decode_label, Layout};
use segsynth::pipeline::{self, PipelineError, RUN_CONFIG_FILE};
use segsynth::prompting::{build_class_aware_prompt, build_inpaint_prompt};
use segsynth::qa::{verify_run, QA_REPORT_FILE};
use segsynth::visual_prior::{blend, edges_from_image, prior_from_label};

const EXIT_OK: u8 = 0;
const EXIT_FAILURES: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;

#[derive(Parser)]
#[command(name = "segsynth", version, about = "Synthesize segmentation training data from a labelled dataset")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate d1/d2 images and the manifest.
    Generate(GenerateArgs),
    /// Re-check a finished run against its source dataset.
    Verify(VerifyArgs),
    /// Write the image, label and blended structure priors as PNGs.
    Prior(PriorArgs),
    /// Print the prompt built for a set of classes.
    Prompt(PromptArgs),
    /// Serve the deterministic mock backend over HTTP.
    ServeMock(ServeArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    layout: Option<Layout>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, ConfigError> {
        match &self.config {
            Some(p) => PipelineConfig::from_file(p),
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    out_root: Option<PathBuf>,
    /// "mock" or a worker base URL.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// d1, d2 or both.
    #[arg(long)]
    paths: Option<Paths>,
    #[arg(long)]
    variants: Option<u32>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    class_weight: Option<f64>,
    /// Samples processed concurrently.
    #[arg(long, short = 'j')]
    parallelism: Option<usize>,
    /// Generation size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<Resolution>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    out_root: PathBuf,
    /// Defaults to the data root recorded with the run.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Defaults to the config recorded with the run.
    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct PriorArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    label: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct PromptArgs {
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    #[arg(long)]
    caption: Option<String>,
    #[arg(long, default_value_t = segsynth::prompting::DEFAULT_CLASS_WEIGHT)]
    weight: f64,
    /// Build the per-class inpainting prompt for each class instead.
    #[arg(long)]
    inpaint: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8088)]
    port: u16,
    #[arg(long, default_value_t = 4)]
    threads: usize,
}

fn parse_resolution(s: &str) -> Result<Resolution, String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("{s:?} is not WIDTHxHEIGHT"))?;
    let num = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok(Resolution {
        width: num(w)?,
        height: num(h)?,
    })
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn generate(args: GenerateArgs) -> ExitCode {
    let overrides = Overrides {
        data_root: args.data_root,
        out_root: args.out_root,
        backend: args.backend,
        run_seed: args.seed,
        paths: args.paths,
        variants_per_image: args.variants,
        alpha: args.alpha,
        class_weight: args.class_weight,
        parallelism: args.parallelism,
        gen_resolution: args.resolution,
        layout: args.common.layout,
    };
    let cfg = match args.common.load().and_then(|c| overrides.apply(c)) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    match pipeline::run(&cfg) {
        Ok(report) => {
            let c = &report.counts;
            println!(
                "samples={} d1_ok={} d2_ok={} d2_skipped={} failed={} class_failures={} load_issues={} wall_clock={:.2}s",
                c.samples, c.d1_ok, c.d2_ok, c.d2_skipped, c.failed, c.class_failures, c.load_issues, report.wall_clock_secs
            );
            println!("manifest: {}", report.manifest_path.display());
            for f in &report.failures {
                eprintln!("failure: {} {:?} {:?} {:?}: {}", f.sample_id, f.path_tag, f.variant, f.class_id, f.message);
            }
            ExitCode::from(if report.has_failures() { EXIT_FAILURES } else { EXIT_OK })
        }
        Err(e @ PipelineError::Backend(_)) => fail(EXIT_TRANSPORT, e),
        Err(e @ PipelineError::Io { .. }) => fail(EXIT_FAILURES, e),
        Err(e) => fail(EXIT_CONFIG, e),
    }
}

fn verify(args: VerifyArgs) -> ExitCode {
    let recorded = args.out_root.join(RUN_CONFIG_FILE);
    let cfg = match (&args.common.config, recorded.exists()) {
        (Some(p), _) => PipelineConfig::from_file(p),
        (None, true) => PipelineConfig::from_file(&recorded),
        (None, false) => Ok(PipelineConfig::default()),
    };
    let mut cfg = match cfg {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Some(l) = args.common.layout {
        cfg.dataset.layout = l;
    }
    let Some(data_root) = args.data_root.or(cfg.data_root.clone()) else {
        return fail(EXIT_CONFIG, "no --data-root given and none recorded with the run");
    };
    let class_map = match cfg.dataset.class_map.resolve() {
        Ok(m) => m,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    match verify_run(&args.out_root, &data_root, cfg.dataset.layout, &class_map) {
        Ok(report) => {
            for e in report.entries.iter().filter(|e| !e.passed()) {
                eprintln!("FAIL {}: {}", e.synthetic_id, e.problems.join("; "));
            }
            let a = &report.aggregate;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            println!(
                "entries={} failures={} mean_abs_pixel_diff_d1={} changed_pixel_ratio_d2={}",
                a.entries,
                a.failures,
                fmt(a.mean_abs_pixel_diff_d1),
                fmt(a.changed_pixel_ratio_d2)
            );
            println!("report: {}", args.out_root.join(QA_REPORT_FILE).display());
            ExitCode::from(if report.passed() { EXIT_OK } else { EXIT_FAILURES })
        }
        Err(e) => fail(EXIT_CONFIG, e),
    }
}

fn write_gray(dir: &Path, name: &str, prior: &segsynth::visual_prior::VisualPrior) -> Result<(), String> {
    let path = dir.join(name);
    prior
        .to_gray()
        .save(&path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn prior(args: PriorArgs) -> ExitCode {
    let mut cfg = match args.common.load() {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Some(l) = args.common.layout {
        cfg.dataset.layout = l;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Err(e) = cfg.validate() {
        return fail(EXIT_CONFIG, e);
    }
    let class_map = match cfg.dataset.class_map.resolve() {
        Ok(m) => m,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let result = (|| -> Result<(), String> {
        let image = image::open(&args.image)
            .map_err(|e| format!("{}: {e}", args.image.display()))?
            .to_rgb8();
        let bytes = std::fs::read(&args.label).map_err(|e| format!("{}: {e}", args.label.display()))?;
        let label = decode_label(&bytes, cfg.dataset.layout, &class_map)?;
        label.validate(&class_map).map_err(|e| e.to_string())?;
        if label.dims() != image.dimensions() {
            return Err(format!("label is {:?}, image is {:?}", label.dims(), image.dimensions()));
        }
        let vi = edges_from_image(&image, &cfg.edge_params).map_err(|e| e.to_string())?;
        let vs = prior_from_label(&label, &class_map, cfg.boundary_width).map_err(|e| e.to_string())?;
        let blended = blend(&vi, &vs, cfg.alpha).map_err(|e| e.to_string())?;
        std::fs::create_dir_all(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
        write_gray(&args.out, "image_prior.png", &vi)?;
        write_gray(&args.out, "label_prior.png", &vs)?;
        write_gray(&args.out, "blended_prior.png", &blended)
    })();
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => fail(EXIT_FAILURES, e),
    }
}

fn prompt(args: PromptArgs) -> ExitCode {
    if !(args.weight.is_finite() && args.weight >= 1.0) {
        return fail(EXIT_CONFIG, format!("weight {} must be >= 1", args.weight));
    }
    let names: Vec<&str> = args.classes.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    let specs = if args.inpaint {
        names
            .iter()
            .map(|n| build_inpaint_prompt(n, args.caption.as_deref(), args.weight))
            .collect()
    } else {
        vec![build_class_aware_prompt(args.caption.as_deref().unwrap_or(""), &names, args.weight)]
    };
    for spec in specs {
        println!("plain:    {}", spec.plain_text());
        println!("weighted: {}", spec.rendered());
    }
    ExitCode::from(EXIT_OK)
}

fn serve_mock(args: ServeArgs) -> ExitCode {
    let addr = format!("{}:{}", args.host, args.port);
    match MockServer::start(&addr, Arc::new(MockBackend::new()), args.threads) {
        Ok(server) => {
            println!("listening on {}", server.url());
            server.join();
            ExitCode::from(EXIT_OK)
        }
        Err(e) => fail(EXIT_CONFIG, format!("cannot bind {addr}: {e}")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Generate(a) => generate(a),
        Command::Verify(a) => verify(a),
        Command::Prior(a) => prior(a),
        Command::Prompt(a) => prompt(a),
        Command::ServeMock(a) => serve_mock(a),
    }
}
