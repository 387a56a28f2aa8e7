//! Command-line front end.

use std::error::Error;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsl::{emit_gallery_script, emit_sim_gallery, parse_program, CadProgram};
use crate::geom::{evaluate_program, Point3};
use crate::metrics::{
    baseline_ap1_no_sketch, baseline_ap1_with_sketch, load_pairs, report, MetricsReport,
    ReportConfig, DEFAULT_ETA, DEFAULT_PREFIX_MAX,
};
use crate::render::{render, Camera};
use crate::synth::{
    instantiate_template, parse_counts, synthesize_dataset, templates, Mode, SynthConfig,
    DEFAULT_COUNTS,
};
use crate::vector::{devectorize, quantize_program, vectorize, MatrixDoc};

pub const MAX_IMAGE_SIDE: usize = 512;
pub const THREADS_ENV: &str = "CADSEQ_THREADS";

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (matrix format 1, manifest format 1, voxel format 1)"
);

type CliResult = Result<(), Box<dyn Error>>;

#[derive(Debug, Parser)]
#[command(name = "cadseq", version = VERSION, about = "Sketch-and-extrude CAD sequence toolkit")]
struct Cli {
    /// Print planned writes instead of performing them.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Output {
    /// Destination file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Raster {
    /// Voxels per lattice axis.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(1..=1024))]
    resolution: u32,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, default_value = "128x128", value_parser = parse_size)]
    size: (usize, usize),
    /// Camera eye position as x,y,z.
    #[arg(long, default_value = "20,20,20", value_parser = parse_camera)]
    camera: Point3,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EmitFormat {
    /// One `add_*` call per operation.
    Sim,
    /// Full client script with sketch and profile handles.
    Gallery,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an image/matrix dataset from the template shapes.
    Synth {
        #[arg(long, value_parser = parse_mode, default_value = "random")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Samples per sequence, e.g. "TS1=60,*=20".
        #[arg(long, default_value = DEFAULT_COUNTS)]
        counts: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        raster: Raster,
    },
    /// Parse program text and print it as JSON.
    Parse {
        input: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Print a program as text.
    Emit {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = EmitFormat::Sim)]
        format: EmitFormat,
        #[command(flatten)]
        output: Output,
    },
    /// Encode a program as a feature matrix document.
    Vectorize {
        input: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Decode a feature matrix document into program text.
    Devectorize {
        input: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Evaluate a program into solids and print a summary.
    Evaluate {
        input: PathBuf,
        #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(1..=1024))]
        resolution: u32,
        /// Also write an ASCII STL of the render meshes.
        #[arg(long)]
        stl: Option<PathBuf>,
        /// Also write the run-length encoded voxel occupancy.
        #[arg(long)]
        voxels: Option<PathBuf>,
    },
    /// Render a program to a PGM image.
    Render {
        input: PathBuf,
        #[command(flatten)]
        raster: Raster,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a directory of predicted matrices against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ETA, value_parser = clap::value_parser!(i64).range(0..=255))]
        eta: i64,
        #[arg(long, default_value_t = DEFAULT_PREFIX_MAX, value_parser = parse_prefix)]
        prefix_max: usize,
        #[command(flatten)]
        raster: Raster,
        /// JSON report destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the random-guess AP¹ baselines.
    Baseline {
        /// Single tolerance; the full 0..=255 table when omitted.
        #[arg(long, value_parser = clap::value_parser!(i64).range(0..=255))]
        eta: Option<i64>,
        /// Print the variant that includes sketch-plane slots.
        #[arg(long)]
        with_sketch: bool,
    },
    /// Print a saved JSON report as text tables.
    Report {
        input: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Check the matrix round trip on random template instantiations.
    RoundtripCheck {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_mode, default_value = "random")]
        mode: Mode,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let side = |v: &str| -> Result<usize, String> {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| format!("bad image side {v:?}"))?;
        if n == 0 || n > MAX_IMAGE_SIDE {
            return Err(format!("image side {n} outside 1..={MAX_IMAGE_SIDE}"));
        }
        Ok(n)
    };
    Ok((side(w)?, side(h)?))
}

fn parse_camera(s: &str) -> Result<Point3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad coordinate {p:?}"))
        })
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Point3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got {s:?}")),
    }
}

fn parse_prefix(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if (1..=crate::vector::ROWS).contains(&n) => Ok(n),
        _ => Err(format!(
            "prefix length must be in 1..={}",
            crate::vector::ROWS
        )),
    }
}

fn read_text(path: &Path) -> Result<String, Box<dyn Error>> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

/// Loads a program from JSON (`.json`) or program text (anything else).
fn load_program(path: &Path) -> Result<CadProgram, Box<dyn Error>> {
    let text = read_text(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
    } else {
        Ok(parse_program(&text).map_err(|e| format!("{}: {e}", path.display()))?)
    }
}

fn load_matrix(path: &Path) -> Result<MatrixDoc, Box<dyn Error>> {
    Ok(serde_json::from_str(&read_text(path)?).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn write_file(path: &Path, bytes: &[u8], dry_run: bool) -> CliResult {
    if dry_run {
        println!("would write {} bytes to {}", bytes.len(), path.display());
        return Ok(());
    }
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn deliver(output: &Output, text: &str, dry_run: bool) -> CliResult {
    match &output.out {
        Some(path) => write_file(path, text.as_bytes(), dry_run),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn camera(raster: &Raster) -> Result<Camera, Box<dyn Error>> {
    let cam = Camera::with_eye(raster.camera);
    cam.validate()?;
    Ok(cam)
}

fn execute(cli: Cli) -> CliResult {
    let dry = cli.dry_run;
    match cli.command {
        Command::Synth {
            mode,
            seed,
            counts,
            out,
            raster,
        } => {
            let config = SynthConfig {
                mode,
                seed,
                counts: parse_counts(&counts)?,
                resolution: raster.resolution as usize,
                width: raster.size.0,
                height: raster.size.1,
            };
            let total: usize = config.counts.values().sum();
            if dry {
                println!("would synthesize {total} samples into {}", out.display());
                for (id, n) in &config.counts {
                    println!("  {id}: {n}");
                }
                return Ok(());
            }
            let manifest = synthesize_dataset(&config, &out)?;
            println!(
                "wrote {} samples to {}",
                manifest.records.len(),
                out.display()
            );
        }
        Command::Parse { input, output } => {
            let program = parse_program(&read_text(&input)?)
                .map_err(|e| format!("{}: {e}", input.display()))?;
            let report = crate::dsl::validate_grammar(&program);
            if !report.ok() {
                return Err(format!("{}: {report}", input.display()).into());
            }
            deliver(
                &output,
                &(serde_json::to_string_pretty(&program)? + "\n"),
                dry,
            )?;
        }
        Command::Emit {
            input,
            format,
            output,
        } => {
            let program = load_program(&input)?;
            let text = match format {
                EmitFormat::Sim => emit_sim_gallery(&program)?,
                EmitFormat::Gallery => emit_gallery_script(&program)?,
            };
            deliver(&output, &text, dry)?;
        }
        Command::Vectorize { input, output } => {
            let matrix = vectorize(&load_program(&input)?)?;
            deliver(
                &output,
                &(serde_json::to_string(&MatrixDoc { matrix })? + "\n"),
                dry,
            )?;
        }
        Command::Devectorize { input, output } => {
            let program = devectorize(&load_matrix(&input)?.matrix)?;
            deliver(&output, &emit_sim_gallery(&program)?, dry)?;
        }
        Command::Evaluate {
            input,
            resolution,
            stl,
            voxels,
        } => {
            let scene = evaluate_program(&load_program(&input)?, resolution as usize)?;
            let occ = scene.occupancy();
            println!("bodies: {}", scene.bodies.len());
            println!("voxels: {} of {}", occ.count(), occ.lattice.cell_count());
            println!("volume: {:.6}", occ.volume());
            if let Some(path) = stl {
                write_file(&path, scene.mesh().to_ascii_stl("cadseq").as_bytes(), dry)?;
            }
            if let Some(path) = voxels {
                write_file(&path, &occ.to_rle_bytes(), dry)?;
            }
        }
        Command::Render { input, raster, out } => {
            let scene = evaluate_program(&load_program(&input)?, raster.resolution as usize)?;
            let img = render(&scene, &camera(&raster)?, raster.size.0, raster.size.1)?;
            write_file(&out, &img.to_pgm(), dry)?;
        }
        Command::Eval {
            gt,
            pred,
            eta,
            prefix_max,
            raster,
            out,
        } => {
            let (_, pairs) = load_pairs(&gt, &pred)?;
            let config = ReportConfig {
                eta,
                prefix_max,
                resolution: raster.resolution as usize,
                width: raster.size.0,
                height: raster.size.1,
                camera: camera(&raster)?,
            };
            let rep = report(&pairs, &config)?;
            print!("{}", rep.to_text());
            if let Some(path) = out {
                write_file(
                    &path,
                    (serde_json::to_string_pretty(&rep)? + "\n").as_bytes(),
                    dry,
                )?;
            }
        }
        Command::Baseline { eta, with_sketch } => {
            let f = if with_sketch {
                baseline_ap1_with_sketch
            } else {
                baseline_ap1_no_sketch
            };
            match eta {
                Some(e) => println!("{}", f(e)?),
                None => {
                    println!("{:>3} {:>12} {:>12}", "eta", "no_sketch", "with_sketch");
                    for e in 0..=255 {
                        println!(
                            "{e:>3} {:>12.8} {:>12.8}",
                            baseline_ap1_no_sketch(e)?,
                            baseline_ap1_with_sketch(e)?
                        );
                    }
                }
            }
        }
        Command::Report { input, output } => {
            let rep: MetricsReport = serde_json::from_str(&read_text(&input)?)
                .map_err(|e| format!("{}: {e}", input.display()))?;
            deliver(&output, &rep.to_text(), dry)?;
        }
        Command::RoundtripCheck { count, seed, mode } => {
            let seqs = templates();
            let mut failures = 0;
            for i in 0..count {
                let seq = &seqs[i % seqs.len()];
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let program = instantiate_template(seq, mode, &mut rng, 16)?;
                let matrix = vectorize(&program)?;
                let back = devectorize(&matrix)?;
                if back != quantize_program(&program)? || vectorize(&back)? != matrix {
                    failures += 1;
                    eprintln!("round trip mismatch for {} sample {i}", seq.id());
                }
            }
            println!(
                "{} of {count} programs round-trip exactly",
                count - failures
            );
            if failures > 0 {
                return Err(format!("{failures} round-trip failures").into());
            }
        }
    }
    Ok(())
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    // a pool may already exist when embedded; the cap then stays as it was
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Runs the command line and returns the process exit code:
/// 0 on success, 1 on a domain error, 2 on a usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return 2;
    }
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
