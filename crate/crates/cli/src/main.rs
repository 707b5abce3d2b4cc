use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use despeckle_core::config::{Algorithm, RunConfig};
use despeckle_core::io::{read_image, write_image, ImageFormat};
use despeckle_core::patch::{block_match, write_groups_csv};
use despeckle_core::solver::{parm_fixed, parm_practical_with, write_diagnostics_csv, PracticalOptions};
use despeckle_core::{
    apply_gamma_noise, clip_positive, enl, from_log, psnr, ratio_image, ssim, IntensityImage,
    NoiseSpec, Region,
};

#[derive(Parser)]
#[command(name = "despeckle", version, about = "Remove multiplicative speckle noise from images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multiply an image by seeded L-look Gamma speckle.
    AddNoise(AddNoiseArgs),
    /// Restore a speckled image.
    Denoise(DenoiseArgs),
    /// Compare a reference image with a candidate.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct AddNoiseArgs {
    /// Clean image (PGM or NLR1).
    input: PathBuf,
    /// Noisy output, written as NLR1.
    output: PathBuf,
    /// Number of looks.
    #[arg(short = 'L', long)]
    looks: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Noisy image (PGM or NLR1).
    input: PathBuf,
    /// Restored intensity image, written as NLR1.
    output: PathBuf,
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named parameter preset, e.g. `L3-standard` or `fixed-L1-remote`.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Override one key, e.g. `--set lambda=1.2`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also write an 8-bit PGM preview.
    #[arg(long)]
    preview: Option<PathBuf>,
    /// Write per-iteration diagnostics as CSV (enables objective tracking).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Write the final patch groups as CSV.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Initial estimate for the fixed-group algorithm.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Write the effective configuration.
    #[arg(long)]
    dump_config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct MetricsArgs {
    reference: PathBuf,
    candidate: PathBuf,
    #[arg(long)]
    psnr: bool,
    #[arg(long)]
    ssim: bool,
    /// ENL of the candidate over `top,left,height,width`.
    #[arg(long, value_name = "TOP,LEFT,H,W")]
    enl: Option<String>,
    /// Write the ratio image reference / candidate as NLR1.
    #[arg(long)]
    ratio: Option<PathBuf>,
    /// Append `reference,candidate,metric,value` rows to a CSV file.
    #[arg(long)]
    report: Option<PathBuf>,
}

type CliResult<T> = Result<T, String>;

fn with_path<T>(path: &Path, r: despeckle_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> CliResult<IntensityImage> {
    with_path(path, read_image(path))
}

fn write_nlr1(path: &Path, img: &IntensityImage) -> CliResult<()> {
    with_path(path, write_image(path, img, ImageFormat::Nlr1))
}

fn create(path: &Path) -> CliResult<fs::File> {
    fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn add_noise(args: &AddNoiseArgs) -> CliResult<()> {
    let u = read(&args.input)?;
    let spec = NoiseSpec::new(args.looks, args.seed).map_err(|e| e.to_string())?;
    let v = with_path(&args.input, apply_gamma_noise(&u, spec))?;
    write_nlr1(&args.output, &v)?;
    println!("seed={}", args.seed);
    Ok(())
}

fn load_config(args: &DenoiseArgs) -> CliResult<RunConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            with_path(path, RunConfig::parse(&text))?
        }
        (None, Some(name)) => RunConfig::preset(name).map_err(|e| e.to_string())?,
        (None, None) => RunConfig::preset("L3-standard").expect("builtin preset"),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v).map_err(|e| e.to_string())?;
    }
    if args.diagnostics.is_some() {
        cfg.diagnostics = true;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Practical-algorithm settings used to initialize a fixed-group run when no
/// `--init` image is given.
fn init_config(cfg: &RunConfig) -> RunConfig {
    let mut init = RunConfig::preset(&format!("L{}-standard", cfg.looks)).unwrap_or_else(|_| {
        let mut c = cfg.clone();
        c.algorithm = Algorithm::Practical;
        c
    });
    init.center = cfg.center;
    init.clip_floor = cfg.clip_floor;
    init.diagnostics = false;
    init
}

fn denoise(args: &DenoiseArgs) -> CliResult<()> {
    let cfg = load_config(args)?;
    if let Some(path) = &args.dump_config {
        fs::write(path, cfg.serialize()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(w) = cfg.model().fidelity().ok().and_then(|f| f.convexity_warning()) {
        eprintln!("warning: {w}");
    }
    let v = read(&args.input)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| e.to_string())?;
    let run = pool.install(|| -> CliResult<_> {
        let opts = PracticalOptions {
            rematch: true,
            clip_floor: cfg.clip_floor,
        };
        match cfg.algorithm {
            Algorithm::Practical => with_path(
                &args.input,
                parm_practical_with(&v, &cfg.model(), &cfg.algo(), &cfg.block_match(), &opts),
            ),
            Algorithm::Fixed => {
                let v = with_path(&args.input, clip_positive(&v, cfg.clip_floor))?;
                let init = match &args.init {
                    Some(path) => read(path)?,
                    None => {
                        let ic = init_config(&cfg);
                        let first = with_path(
                            &args.input,
                            parm_practical_with(&v, &ic.model(), &ic.algo(), &ic.block_match(), &opts),
                        )?;
                        from_log(&first.x)
                    }
                };
                let init = with_path(&args.input, clip_positive(&init, cfg.clip_floor))?;
                let groups = with_path(&args.input, block_match(&init, &cfg.block_match()))?;
                with_path(
                    &args.input,
                    parm_fixed(&v, &init, &groups, &cfg.model(), &cfg.algo()),
                )
            }
        }
    })?;

    let u_hat = from_log(&run.x);
    write_nlr1(&args.output, &u_hat)?;
    if let Some(path) = &args.preview {
        with_path(path, write_image(path, &u_hat, ImageFormat::PgmBinary))?;
    }
    if let Some(path) = &args.diagnostics {
        let mut f = create(path)?;
        write_diagnostics_csv(&mut f, &run.diagnostics).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(path) = &args.groups {
        let mut f = create(path)?;
        write_groups_csv(&mut f, &run.groups).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    println!("iterations={}", run.diagnostics.len());
    Ok(())
}

fn parse_region(s: &str) -> CliResult<Region> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("--enl expects TOP,LEFT,H,W, got `{s}`"))?;
    match parts[..] {
        [top, left, height, width] => Ok(Region::new(top, left, height, width)),
        _ => Err(format!("--enl expects TOP,LEFT,H,W, got `{s}`")),
    }
}

fn metrics(args: &MetricsArgs) -> CliResult<()> {
    let reference = read(&args.reference)?;
    let candidate = read(&args.candidate)?;
    let shape_err = |e: despeckle_core::Error| {
        format!("{} vs {}: {e}", args.reference.display(), args.candidate.display())
    };
    let any = args.psnr || args.ssim || args.enl.is_some() || args.ratio.is_some();
    let mut results: Vec<(&str, f64)> = Vec::new();
    if args.psnr || !any {
        results.push(("psnr", psnr(&reference, &candidate).map_err(shape_err)?));
    }
    if args.ssim || !any {
        results.push(("ssim", ssim(&reference, &candidate).map_err(shape_err)?));
    }
    if let Some(spec) = &args.enl {
        let region = parse_region(spec)?;
        results.push(("enl", with_path(&args.candidate, enl(&candidate, &region))?));
    }
    if let Some(path) = &args.ratio {
        let ratio = ratio_image(&reference, &candidate).map_err(shape_err)?;
        write_nlr1(path, &ratio)?;
    }
    for (name, value) in &results {
        println!("{name}={value}");
    }
    if let Some(path) = &args.report {
        let fresh = !path.exists();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let mut text = String::new();
        if fresh {
            text.push_str("reference,candidate,metric,value\n");
        }
        for (name, value) in &results {
            text.push_str(&format!(
                "{},{},{name},{value}\n",
                args.reference.display(),
                args.candidate.display()
            ));
        }
        f.write_all(text.as_bytes()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::AddNoise(a) => add_noise(a),
        Command::Denoise(a) => denoise(a),
        Command::Metrics(a) => metrics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
