use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use forge_core::bloch::{simulate, SimConfig};
use forge_core::container::{self, Meta, MsdData};
use forge_core::dataset::{self, DatasetConfig, GenOptions};
use forge_core::fields::{gen_b1_seeded, gen_velocity_field, B1_BOUNDS, MotionSpec, NoiseSpec, NonIdealSet};
use forge_core::grid::{ComplexImage, Grid2};
use forge_core::metrics::{gsr, linreg, nrmse, nrmse_complex, Roi};
use forge_core::mriops::{coil_combine_rss, reconstruct_image, DatasetKind};
use forge_core::phantom::{synthetic_head, templates_from_weighted, WeightedImage};
use forge_core::presets::Preset;
use forge_core::sequence::{build_se, build_se_moled, from_text, to_text, validate_program, SeParams, SequenceProgram};
use forge_core::validate::{format_report, run_suite, Suite};
use forge_core::{Scalar, StoreScalar};

#[derive(Parser)]
#[command(name = "forge", version, about = "Synthetic overlapping-echo MRI data generator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build parametric templates (M0, T2).
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// Generate B1+ or velocity maps.
    #[command(subcommand)]
    Fields(FieldsCmd),
    /// Build, dump or check sequence programs.
    #[command(subcommand)]
    Seq(SeqCmd),
    /// Run the Bloch simulation for one template set.
    Simulate(SimulateArgs),
    /// Generate a paired dataset with a manifest.
    GenDataset(GenArgs),
    /// Run the built-in check suite, or verify a dataset directory.
    Validate(ValidateArgs),
    /// Image-quality and regression metrics.
    #[command(subcommand)]
    Metrics(MetricsCmd),
}

#[derive(Subcommand)]
enum PhantomCmd {
    /// Procedural head phantom.
    Head {
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        variant: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert registered PD- and T2-weighted images (MSD float [rows, cols]).
    Invert {
        #[arg(long)]
        pd: PathBuf,
        #[arg(long)]
        t2w: PathBuf,
        /// TE of the T2-weighted image, ms.
        #[arg(long)]
        te: f64,
        /// TR of the T2-weighted image, ms.
        #[arg(long)]
        tr: f64,
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Intensity scale applied to the T2-weighted image.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum FieldsCmd {
    /// Random normalized B1+ map.
    B1 {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        poly_order: usize,
        #[arg(long, default_value_t = 1)]
        gaussians: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rigid-motion velocity maps, written as float [2, n, n] (RO then PE).
    Velocity {
        #[command(flatten)]
        motion: MotionArgs,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 22.0)]
        fov: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Copy)]
struct MotionArgs {
    /// cm/s
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    v_ro: f64,
    /// cm/s
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    v_pe: f64,
    /// degrees/s
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    omega: f64,
}

impl MotionArgs {
    fn spec(self) -> MotionSpec {
        if self.v_ro == 0.0 && self.v_pe == 0.0 && self.omega == 0.0 {
            MotionSpec::disabled()
        } else {
            MotionSpec::new(self.v_ro, self.v_pe, self.omega)
        }
    }
}

#[derive(Subcommand)]
enum SeqCmd {
    /// SE-MOLED program of a preset.
    Moled {
        #[arg(long, default_value = "desk")]
        preset: String,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single-echo spin echo with an EPI readout.
    Se {
        #[arg(long)]
        te: f64,
        #[arg(long, default_value_t = 3000.0)]
        tr: f64,
        #[arg(long, default_value_t = 64)]
        matrix: usize,
        #[arg(long, default_value_t = 22.0)]
        fov: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate an event-list file; exit 1 on violations.
    Check { file: PathBuf },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Event-list file; defaults to the preset's SE-MOLED program.
    #[arg(long)]
    seq: Option<PathBuf>,
    /// Template file (float [2, n, n]); defaults to a head phantom at the
    /// preset's spin grid.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    head_variant: u64,
    #[command(flatten)]
    motion: MotionArgs,
    /// Draw a random B1+ map with this seed.
    #[arg(long)]
    b1_seed: Option<u64>,
    /// Add noise at this SNR (dB) to the image.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Raw k-space output.
    #[arg(long)]
    out: PathBuf,
    /// Reconstructed image output.
    #[arg(long)]
    image: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    #[value(name = "Dp", alias = "dp")]
    Dp,
    #[value(name = "Dm", alias = "dm")]
    Dm,
}

#[derive(Args)]
struct GenArgs {
    kind: KindArg,
    #[arg(long)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plain-text key = value config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value = "dataset")]
    out: PathBuf,
    /// Required for the paper-scale preset.
    #[arg(long)]
    allow_paper: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Analytic,
    Full,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, value_enum, default_value = "analytic")]
    suite: SuiteArg,
    /// Verify hashes and completeness of a generated dataset instead.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MetricsCmd {
    /// nRMSE in percent between two MSD arrays of equal shape.
    Nrmse {
        x: PathBuf,
        reference: PathBuf,
    },
    /// Ghost-to-signal ratio of an image (coil planes are RSS-combined).
    Gsr {
        image: PathBuf,
        /// row,col,height,width
        #[arg(long)]
        signal: String,
        /// row,col,height,width; defaults to the signal ROI shifted by FOV/2.
        #[arg(long)]
        ghost: Option<String>,
    },
    /// Least-squares line through a two-column CSV (x,y).
    Linreg { csv: PathBuf },
}

/// Usage errors exit with 2, validation failures and runtime errors with 1.
fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn preset(name: &str) -> Result<Preset> {
    Preset::by_name(name).ok_or_else(|| usage(format!("unknown preset '{name}' (desk or paper)")))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => container::write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Phantom(c) => phantom(c),
        Cmd::Fields(c) => fields(c),
        Cmd::Seq(c) => seq(c),
        Cmd::Simulate(a) => simulate_cmd(a),
        Cmd::GenDataset(a) => gen(a),
        Cmd::Validate(a) => validate(a),
        Cmd::Metrics(c) => metrics(c),
    }
}

fn phantom(c: PhantomCmd) -> Result<bool> {
    let (set, out) = match c {
        PhantomCmd::Head { size, variant, out } => (synthetic_head::<Scalar>(size, variant)?, out),
        PhantomCmd::Invert {
            pd,
            t2w,
            te,
            tr,
            size,
            scale,
            out,
        } => {
            let read = |p: &Path, te: f64, tr: f64| -> Result<WeightedImage<Scalar>> {
                let g = container::read_msd(p)?.to_grid()?;
                Ok(WeightedImage::new(g, te, tr)?)
            };
            // The PD-weighted image only provides M0, so its timing is nominal.
            let pd = read(&pd, 0.0, tr)?;
            let t2w = read(&t2w, te, tr)?;
            let prov = format!("weighted(te={te},tr={tr},scale={scale})");
            (templates_from_weighted(&pd, &t2w, size, scale, &prov)?, out)
        }
    };
    dataset::write_templates(&out, &set)?;
    eprintln!("wrote {} ({}x{})", out.display(), set.dims().0, set.dims().1);
    Ok(true)
}

fn fields(c: FieldsCmd) -> Result<bool> {
    match c {
        FieldsCmd::B1 {
            seed,
            size,
            poly_order,
            gaussians,
            out,
        } => {
            let m = gen_b1_seeded::<StoreScalar>(poly_order, gaussians, B1_BOUNDS, size, size, seed)?;
            let mut meta = Meta::new();
            meta.insert("seed".into(), Value::from(seed));
            container::write_grid(&out, m.data(), &meta)?;
        }
        FieldsCmd::Velocity { motion, size, fov, out } => {
            let v = gen_velocity_field::<StoreScalar>(&motion.spec(), size, size, fov)?;
            let mut data = v.v_ro.data().to_vec();
            data.extend_from_slice(v.v_pe.data());
            let mut meta = Meta::new();
            meta.insert("units".into(), Value::from("cm/s"));
            container::write_atomic(&out, &container::encode_real(&[2, size, size], &data, &meta)?)?;
        }
    }
    Ok(true)
}

fn seq(c: SeqCmd) -> Result<bool> {
    match c {
        SeqCmd::Moled { preset: name, out } => {
            let p = build_se_moled(&preset(&name)?.moled_params())?;
            emit(&to_text(&p), out.as_deref())?;
        }
        SeqCmd::Se {
            te,
            tr,
            matrix,
            fov,
            out,
        } => {
            let p = build_se(&SeParams::new(te, tr, matrix, fov))?;
            emit(&to_text(&p), out.as_deref())?;
        }
        SeqCmd::Check { file } => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let rep = validate_program(&from_text(&text)?);
            for v in &rep.violations {
                println!("{v}");
            }
            println!("{} violation(s)", rep.violations.len());
            return Ok(rep.is_ok());
        }
    }
    Ok(true)
}

fn load_program(preset: &Preset, seq: Option<&Path>) -> Result<SequenceProgram> {
    Ok(match seq {
        Some(p) => from_text(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => build_se_moled(&preset.moled_params())?,
    })
}

fn simulate_cmd(a: SimulateArgs) -> Result<bool> {
    let p = preset(&a.preset)?;
    let program = load_program(&p, a.seq.as_deref())?;
    let rep = validate_program(&program);
    if !rep.is_ok() {
        for v in &rep.violations {
            eprintln!("{v}");
        }
        bail!("sequence program is invalid");
    }
    let t = match &a.templates {
        Some(path) => dataset::read_templates::<Scalar>(path)?,
        None => synthetic_head(p.spin_grid, a.head_variant)?,
    };
    let n = t.dims().0;
    let ni = NonIdealSet {
        b1: a
            .b1_seed
            .map(|s| gen_b1_seeded(2, 1, B1_BOUNDS, n, n, s))
            .transpose()?,
        motion: a.motion.spec(),
        grad_fluct: Vec::new(),
        noise: NoiseSpec {
            snr_db: a.snr,
            seed: a.noise_seed,
        },
    };
    let k = simulate(&program, &t, &ni, &SimConfig::default())?;
    let meta = Meta::new();
    let k32: ComplexImage<StoreScalar> = k.data.cast();
    container::write_images(&a.out, std::slice::from_ref(&k32), &meta)?;
    if let Some(path) = &a.image {
        let img = forge_core::fields::add_noise(&reconstruct_image(&k)?, &ni.noise);
        container::write_images(path, &[img.cast::<StoreScalar>()], &meta)?;
    }
    Ok(true)
}

fn gen(a: GenArgs) -> Result<bool> {
    let config = match &a.config {
        Some(p) => DatasetConfig::parse(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => DatasetConfig::default(),
    };
    if config.preset.name == "paper" {
        if !a.allow_paper {
            return Err(usage("the paper preset takes hours per thousand samples; pass --allow-paper to run it"));
        }
        eprintln!("warning: paper-scale generation is expensive (512x512 spins per sample)");
    }
    let kind = match a.kind {
        KindArg::Dp => DatasetKind::Dp,
        KindArg::Dm => DatasetKind::Dm,
    };
    let m = dataset::gen_dataset(&GenOptions {
        kind,
        count: a.count,
        seed: a.seed,
        out_dir: a.out.clone(),
        workers: a.workers,
        config,
    })?;
    eprintln!("{} samples in {}", m.samples.len(), a.out.display());
    Ok(true)
}

fn validate(a: ValidateArgs) -> Result<bool> {
    if let Some(dir) = a.dataset {
        let rep = dataset::verify_dataset(&dir)?;
        for p in &rep.missing_or_damaged {
            println!("FAIL  damaged or missing  {p}");
        }
        for p in &rep.unlisted {
            println!("FAIL  not in manifest     {p}");
        }
        if rep.is_ok() {
            println!("PASS  dataset {}", dir.display());
        }
        return Ok(rep.is_ok());
    }
    let suite = match a.suite {
        SuiteArg::Analytic => Suite::Analytic,
        SuiteArg::Full => Suite::Full,
    };
    let rep = run_suite(suite);
    print!("{}", format_report(&rep));
    Ok(rep.iter().all(|c| c.pass))
}

enum Loaded {
    Real(Grid2<Scalar>),
    Complex(Vec<ComplexImage<Scalar>>),
}

fn load_array(path: &Path) -> Result<(Vec<usize>, Loaded)> {
    let f = container::read_msd(path)?;
    let dims = f.header.dims.clone();
    let loaded = match &f.data {
        MsdData::F32(_) | MsdData::F64(_) => {
            let cols = *dims.last().unwrap_or(&0);
            let data = f.data.to_real::<Scalar>()?;
            let rows = if cols == 0 { 0 } else { data.len() / cols };
            Loaded::Real(Grid2::new(rows, cols, data)?)
        }
        _ => Loaded::Complex(f.to_complex_images()?),
    };
    Ok((dims, loaded))
}

fn parse_roi(s: &str) -> Result<Roi> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("bad ROI '{s}', expected row,col,height,width")))?;
    match v[..] {
        [r, c, h, w] => Ok(Roi::new(r, c, h, w)),
        _ => Err(usage(format!("bad ROI '{s}', expected row,col,height,width"))),
    }
}

fn metrics(c: MetricsCmd) -> Result<bool> {
    match c {
        MetricsCmd::Nrmse { x, reference } => {
            let (dx, a) = load_array(&x)?;
            let (dr, b) = load_array(&reference)?;
            if dx != dr {
                bail!("shape mismatch: {dx:?} vs {dr:?}");
            }
            let v = match (a, b) {
                (Loaded::Real(a), Loaded::Real(b)) => nrmse(&a, &b)?,
                (Loaded::Complex(a), Loaded::Complex(b)) => {
                    let (mut d, mut r) = (0.0, 0.0);
                    for (p, q) in a.iter().zip(&b) {
                        let e = nrmse_complex(p, q)? / 100.0;
                        let rq = q.energy();
                        d += e * e * rq;
                        r += rq;
                    }
                    100.0 * (d / r).sqrt()
                }
                _ => bail!("cannot compare a real array with a complex one"),
            };
            println!("metric,value\nnrmse_percent,{v}");
        }
        MetricsCmd::Gsr { image, signal, ghost } => {
            let mag = match load_array(&image)?.1 {
                Loaded::Real(g) => g,
                Loaded::Complex(planes) => coil_combine_rss(&planes)?,
            };
            let signal = parse_roi(&signal)?;
            let ghost = ghost.as_deref().map(parse_roi).transpose()?;
            println!("metric,value\ngsr,{}", gsr(&mag, &signal, ghost.as_ref())?);
        }
        MetricsCmd::Linreg { csv } => {
            let text = std::fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut it = line.split(',').map(|t| t.trim().parse::<f64>());
                match (it.next(), it.next()) {
                    (Some(Ok(x)), Some(Ok(y))) => {
                        xs.push(x);
                        ys.push(y);
                    }
                    // A header line.
                    _ if i == 0 => {}
                    _ => bail!("{}:{}: expected x,y", csv.display(), i + 1),
                }
            }
            let l = linreg(&xs, &ys)?;
            println!("slope,intercept,r2\n{},{},{}", l.slope, l.intercept, l.r2);
        }
    }
    Ok(true)
}
