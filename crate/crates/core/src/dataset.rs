//! Paired dataset generation with a resumable, hash-verified manifest.
//!
//! Each sample `i` lives in `sample_{i:06}/` and is a pure function of the
//! configuration, the master seed and `i`. Files are written atomically and
//! the manifest is rewritten after each completed sample, so an interrupted
//! run can be resumed and only missing or damaged samples are regenerated.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::bloch::SimConfig;
use crate::container::{self, Meta};
use crate::error::{ForgeError, Result};
use crate::fields::{gen_b1, MotionSpec, NonIdealSet};
use crate::grid::{ComplexImage, Grid2};
use crate::mriops::{
    analytic_coils, forward_motion_pair, forward_parallel_pair, CoilSet, DatasetKind, LabelData, MotionPairSizes,
    SamplePair, SamplingMask,
};
use crate::num::Real;
use crate::phantom::{augment, synthetic_head, MapKind, ParametricMap, ParametricTemplateSet};
use crate::presets::Preset;
use crate::randomize::{sample_with_pools, scale_t2_distribution, RandomizationBounds, RandomizationDraw};
use crate::sequence::{build_se_moled, SequenceProgram};
use crate::{Scalar, StoreScalar};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "forge-dataset";
pub const MANIFEST_VERSION: u32 = 1;

/// Where parametric templates come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSource {
    /// `pool` procedural head phantoms.
    SyntheticHead { pool: usize },
    /// Every `*.msd` file in a directory: float arrays `[2, n, n]` holding M0
    /// then T2.
    Dir { path: PathBuf },
}

/// Where coil sensitivities come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoilSource {
    /// `pool` analytic arrays of the preset's coil count.
    Analytic { pool: usize },
    /// Every `*.msd` file in a directory: complex arrays `[coils, n, n]`.
    Dir { path: PathBuf },
}

/// Everything that determines the content of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub preset: Preset,
    pub bounds: RandomizationBounds,
    pub templates: TemplateSource,
    pub coils: CoilSource,
    pub mask_offset: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            preset: Preset::desk(),
            bounds: RandomizationBounds::default(),
            templates: TemplateSource::SyntheticHead { pool: 8 },
            coils: CoilSource::Analytic { pool: 4 },
            mask_offset: 0,
        }
    }
}

impl DatasetConfig {
    /// Parses a plain-text config. Dataset keys are `preset`,
    /// `template_pool`, `template_dir`, `coil_pool`, `coil_dir`, `num_coils`,
    /// `acceleration` and `mask_offset`; every other key is a randomization
    /// bound.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut rest = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            let Some((k, v)) = content.split_once('=') else {
                rest.push_str(raw);
                rest.push('\n');
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            let err = |msg: String| ForgeError::Config { line, msg };
            let int = || v.parse::<usize>().map_err(|_| err(format!("{k}: expected an integer")));
            match k {
                "preset" => {
                    let keep = (cfg.preset.num_coils, cfg.preset.acceleration);
                    cfg.preset = Preset::by_name(v).ok_or_else(|| err(format!("unknown preset '{v}'")))?;
                    let _ = keep;
                }
                "template_pool" => cfg.templates = TemplateSource::SyntheticHead { pool: int()? },
                "template_dir" => cfg.templates = TemplateSource::Dir { path: v.into() },
                "coil_pool" => cfg.coils = CoilSource::Analytic { pool: int()? },
                "coil_dir" => cfg.coils = CoilSource::Dir { path: v.into() },
                "num_coils" => cfg.preset.num_coils = int()?,
                "acceleration" => cfg.preset.acceleration = int()?,
                "mask_offset" => cfg.mask_offset = int()?,
                _ => {
                    rest.push_str(raw);
                    rest.push('\n');
                    continue;
                }
            }
            // Keep line numbers of the remaining keys stable.
            rest.push('\n');
        }
        cfg.bounds = RandomizationBounds::parse(&rest)?;
        Ok(cfg)
    }
}

/// Loaded template and coil pools plus the sequence, shared by all samples.
pub struct Context<T> {
    pub kind: DatasetKind,
    pub seed: u64,
    pub config: DatasetConfig,
    pub templates: Vec<ParametricTemplateSet<T>>,
    pub coils: Vec<CoilSet<T>>,
    pub program: SequenceProgram,
    pub sim: SimConfig,
}

fn msd_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ForgeError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "msd"))
        .collect();
    v.sort();
    Ok(v)
}

/// Reads a template file: a float array `[2, n, n]` holding M0 then T2.
pub fn read_templates<T: Real>(path: &Path) -> Result<ParametricTemplateSet<T>> {
    let f = container::read_msd(path)?;
    let d = &f.header.dims;
    if d.len() != 3 || d[0] != 2 {
        return Err(ForgeError::CorruptHeader(format!("{}: template needs dims [2, n, n]", path.display())));
    }
    let vals: Vec<T> = f.data.to_real()?;
    let plane = d[1] * d[2];
    let m0 = Grid2::new(d[1], d[2], vals[..plane].to_vec())?;
    let t2 = Grid2::new(d[1], d[2], vals[plane..].to_vec())?;
    let prov = f
        .header
        .meta
        .get("provenance")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .unwrap_or_else(|| path.display().to_string());
    ParametricTemplateSet::new(ParametricMap::new(MapKind::M0, m0)?, ParametricMap::new(MapKind::T2, t2)?, prov)
}

/// Writes templates in the format read by [`read_templates`].
pub fn write_templates<T: Real>(path: &Path, set: &ParametricTemplateSet<T>) -> Result<()> {
    let (r, c) = set.dims();
    let mut data: Vec<StoreScalar> = Vec::with_capacity(2 * r * c);
    data.extend(set.m0().data().data().iter().map(|v| v.as_f64() as StoreScalar));
    data.extend(set.t2().data().data().iter().map(|v| v.as_f64() as StoreScalar));
    let mut meta = Meta::new();
    meta.insert("provenance".into(), Value::from(set.provenance()));
    meta.insert("t1_ms".into(), Value::from(set.t1_fixed_ms()));
    container::write_atomic(path, &container::encode_real(&[2, r, c], &data, &meta)?)
}

fn load_templates<T: Real>(src: &TemplateSource, n: usize) -> Result<Vec<ParametricTemplateSet<T>>> {
    let pool = match src {
        TemplateSource::SyntheticHead { pool } => (0..*pool as u64).map(|v| synthetic_head(n, v)).collect::<Result<Vec<_>>>()?,
        TemplateSource::Dir { path } => msd_files(path)?
            .iter()
            .map(|p| read_templates(p))
            .collect::<Result<Vec<_>>>()?,
    };
    if pool.is_empty() {
        return Err(ForgeError::EmptyPool("templates"));
    }
    for t in &pool {
        if t.dims() != (n, n) {
            return Err(ForgeError::DimMismatch {
                expected: (n, n),
                got: t.dims(),
            });
        }
    }
    Ok(pool)
}

fn load_coils<T: Real>(src: &CoilSource, n: usize, num_coils: usize, seed: u64) -> Result<Vec<CoilSet<T>>> {
    let pool = match src {
        CoilSource::Analytic { pool } => (0..*pool as u64)
            .map(|i| analytic_coils(num_coils, n, seed, i))
            .collect::<Result<Vec<_>>>()?,
        CoilSource::Dir { path } => msd_files(path)?
            .iter()
            .map(|p| CoilSet::new(container::read_msd(p)?.to_complex_images()?))
            .collect::<Result<Vec<_>>>()?,
    };
    if pool.is_empty() {
        return Err(ForgeError::EmptyPool("coil sets"));
    }
    for c in &pool {
        if c.dims() != (n, n) {
            return Err(ForgeError::DimMismatch {
                expected: (n, n),
                got: c.dims(),
            });
        }
    }
    Ok(pool)
}

/// Coil geometry is keyed by this seed, not the master seed, so the analytic
/// pool is the same across datasets.
const COIL_POOL_SEED: u64 = 0x636f_696c;

impl<T: Real> Context<T> {
    pub fn new(kind: DatasetKind, seed: u64, config: DatasetConfig) -> Result<Self> {
        config.bounds.validate()?;
        let p = &config.preset;
        let templates = load_templates(&config.templates, p.spin_grid)?;
        let coils = match kind {
            DatasetKind::Dp => load_coils(&config.coils, p.matrix, p.num_coils, COIL_POOL_SEED)?,
            DatasetKind::Dm => Vec::new(),
        };
        let program = build_se_moled(&p.moled_params())?;
        Ok(Self {
            kind,
            seed,
            config,
            templates,
            coils,
            program,
            sim: SimConfig::default(),
        })
    }

    pub fn draw(&self, index: u64) -> Result<RandomizationDraw> {
        sample_with_pools(&self.config.bounds, self.seed, index, self.templates.len(), self.coils.len().max(1))
    }

    /// Runs the forward model for a draw.
    pub fn simulate_draw(&self, draw: &RandomizationDraw) -> Result<SamplePair<T>> {
        let p = &self.config.preset;
        let base = self
            .templates
            .get(draw.template_id)
            .ok_or_else(|| ForgeError::invalid(format!("template id {} out of range", draw.template_id)))?;
        let tpl = scale_t2_distribution(&augment(base, draw.rotation, draw.flip)?, draw.t2_scale)?;
        let n = p.spin_grid;
        let b1 = draw.b1.as_ref().map(|s| gen_b1(s, n, n)).transpose()?;
        let mut ni = NonIdealSet {
            b1,
            motion: draw.motion,
            grad_fluct: draw.grad_fluct.clone(),
            noise: draw.noise(),
        };
        match self.kind {
            DatasetKind::Dm => forward_motion_pair(
                &tpl,
                &ni,
                &self.program,
                MotionPairSizes {
                    label: p.label_size,
                    pad: p.pad_size,
                },
                &self.sim,
            ),
            DatasetKind::Dp => {
                ni.motion = MotionSpec::disabled();
                let coils = self
                    .coils
                    .get(draw.coil_set_id)
                    .ok_or_else(|| ForgeError::invalid(format!("coil set id {} out of range", draw.coil_set_id)))?;
                let mask = SamplingMask::uniform(p.matrix, p.matrix, p.acceleration, self.config.mask_offset)?;
                forward_parallel_pair(&tpl, coils, &mask, &ni, &self.program, &self.sim)
            }
        }
    }
}

/// One file of a sample as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the dataset root.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub index: u64,
    pub files: Vec<FileEntry>,
    pub draw: RandomizationDraw,
}

/// Dataset manifest. Serialized with sorted keys and no timestamps, so
/// identical inputs give an identical manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: DatasetKind,
    pub seed: u64,
    pub count: u64,
    pub config: DatasetConfig,
    pub samples: Vec<SampleEntry>,
}

impl Manifest {
    fn same_inputs(&self, other: &Manifest) -> bool {
        self.format == other.format
            && self.version == other.version
            && self.kind == other.kind
            && self.seed == other.seed
            && self.config == other.config
    }

    pub fn to_json(&self) -> Result<String> {
        // Round-trip through Value to get sorted object keys.
        let v: Value = serde_json::to_value(self)?;
        let mut s = serde_json::to_string_pretty(&v)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&p).map_err(|e| ForgeError::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sample_dir_name(index: u64) -> String {
    format!("sample_{index:06}")
}

fn to_store<T: Real>(imgs: &[ComplexImage<T>]) -> Vec<ComplexImage<StoreScalar>> {
    imgs.iter().map(|i| i.cast()).collect()
}

/// Serialized files of a pair: `(file name, bytes)`.
pub fn encode_pair<T: Real>(pair: &SamplePair<T>, draw: &RandomizationDraw) -> Result<Vec<(String, Vec<u8>)>> {
    let mut meta = Meta::new();
    meta.insert("kind".into(), Value::from(pair.kind.as_str()));
    meta.insert("index".into(), Value::from(draw.index));
    meta.insert("seed".into(), Value::from(draw.seed));
    let mut out = vec![(
        "input.msd".to_string(),
        container::encode_images(&to_store(&pair.input), &meta)?,
    )];
    for (kind, data) in &pair.labels {
        let mut m = meta.clone();
        m.insert("label".into(), Value::from(kind.file_stem()));
        let bytes = match data {
            LabelData::Real(g) => {
                let g: Grid2<StoreScalar> = g.cast();
                container::encode_real(&[g.rows(), g.cols()], g.data(), &m)?
            }
            LabelData::Coils(c) => container::encode_images(&to_store(c), &m)?,
        };
        out.push((format!("{}.msd", kind.file_stem()), bytes));
    }
    Ok(out)
}

/// Options of one generation run.
#[derive(Debug, Clone)]
pub struct GenOptions {
    pub kind: DatasetKind,
    pub count: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub config: DatasetConfig,
}

fn entry_is_intact(root: &Path, e: &SampleEntry) -> bool {
    !e.files.is_empty()
        && e.files.iter().all(|f| {
            fs::read(root.join(&f.path))
                .map(|b| b.len() as u64 == f.bytes && sha256_hex(&b) == f.sha256)
                .unwrap_or(false)
        })
}

fn generate_one(ctx: &Context<Scalar>, root: &Path, index: u64) -> Result<SampleEntry> {
    let draw = ctx.draw(index)?;
    let pair = ctx.simulate_draw(&draw)?;
    let dir_name = sample_dir_name(index);
    let dir = root.join(&dir_name);
    fs::create_dir_all(&dir).map_err(|e| ForgeError::io(&dir, e))?;
    let mut files = Vec::new();
    for (name, bytes) in encode_pair(&pair, &draw)? {
        container::write_atomic(&dir.join(&name), &bytes)?;
        files.push(FileEntry {
            path: format!("{dir_name}/{name}"),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
    }
    Ok(SampleEntry { index, files, draw })
}

/// Generates (or completes) a dataset and returns its manifest.
pub fn gen_dataset(opts: &GenOptions) -> Result<Manifest> {
    let root = &opts.out_dir;
    fs::create_dir_all(root).map_err(|e| ForgeError::io(root, e))?;
    let mut manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        kind: opts.kind,
        seed: opts.seed,
        count: opts.count,
        config: opts.config.clone(),
        samples: Vec::new(),
    };
    let mut done: BTreeMap<u64, SampleEntry> = BTreeMap::new();
    if root.join(MANIFEST_NAME).exists() {
        let old = Manifest::load(root)?;
        if !old.same_inputs(&manifest) {
            return Err(ForgeError::invalid(format!(
                "{} holds a dataset with different inputs",
                root.display()
            )));
        }
        for e in old.samples {
            if e.index < opts.count && entry_is_intact(root, &e) {
                done.insert(e.index, e);
            }
        }
    }
    let todo: Vec<u64> = (0..opts.count).filter(|i| !done.contains_key(i)).collect();
    let shared = Mutex::new(done);
    let write_manifest = |entries: &BTreeMap<u64, SampleEntry>| -> Result<()> {
        let m = Manifest {
            samples: entries.values().cloned().collect(),
            ..manifest.clone()
        };
        container::write_atomic(&root.join(MANIFEST_NAME), m.to_json()?.as_bytes())
    };

    if !todo.is_empty() {
        let ctx = Context::<Scalar>::new(opts.kind, opts.seed, opts.config.clone())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers.max(1))
            .build()
            .map_err(|e| ForgeError::invalid(format!("thread pool: {e}")))?;
        pool.install(|| {
            todo.par_iter().try_for_each(|&i| -> Result<()> {
                let entry = generate_one(&ctx, root, i).map_err(|e| ForgeError::Sample {
                    index: i,
                    source: Box::new(e),
                })?;
                let mut g = shared.lock().expect("manifest lock");
                g.insert(i, entry);
                write_manifest(&g)
            })
        })?;
    }
    let entries = shared.into_inner().expect("manifest lock");
    write_manifest(&entries)?;
    manifest.samples = entries.into_values().collect();
    Ok(manifest)
}

/// Problems found by [`verify_dataset`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetReport {
    pub missing_or_damaged: Vec<String>,
    pub unlisted: Vec<String>,
}

impl DatasetReport {
    pub fn is_ok(&self) -> bool {
        self.missing_or_damaged.is_empty() && self.unlisted.is_empty()
    }
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for e in fs::read_dir(dir).map_err(|e| ForgeError::io(dir, e))? {
        let p = e.map_err(|e| ForgeError::io(dir, e))?.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else if let Ok(rel) = p.strip_prefix(root) {
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Checks that every listed file exists with its recorded hash and that no
/// unlisted file is present.
pub fn verify_dataset(root: &Path) -> Result<DatasetReport> {
    let m = Manifest::load(root)?;
    let mut report = DatasetReport::default();
    let mut listed = std::collections::BTreeSet::new();
    for s in &m.samples {
        for f in &s.files {
            listed.insert(f.path.clone());
            let ok = fs::read(root.join(&f.path))
                .map(|b| sha256_hex(&b) == f.sha256)
                .unwrap_or(false);
            if !ok {
                report.missing_or_damaged.push(f.path.clone());
            }
        }
    }
    let mut on_disk = Vec::new();
    walk(root, root, &mut on_disk)?;
    for p in on_disk {
        if p != MANIFEST_NAME && !listed.contains(&p) {
            report.unlisted.push(p);
        }
    }
    report.unlisted.sort();
    Ok(report)
}

/// Re-simulates a listed sample from its stored draw and compares the
/// encoded files with the manifest hashes.
pub fn resimulate_matches(root: &Path, index: u64) -> Result<bool> {
    let m = Manifest::load(root)?;
    let entry = m
        .samples
        .iter()
        .find(|s| s.index == index)
        .ok_or_else(|| ForgeError::invalid(format!("sample {index} not in manifest")))?;
    let ctx = Context::<Scalar>::new(m.kind, m.seed, m.config.clone())?;
    let pair = ctx.simulate_draw(&entry.draw)?;
    let files = encode_pair(&pair, &entry.draw)?;
    let dir = sample_dir_name(index);
    Ok(files.len() == entry.files.len()
        && files.iter().zip(&entry.files).all(|((name, bytes), f)| {
            f.path == format!("{dir}/{name}") && sha256_hex(bytes) == f.sha256
        }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parse_splits_keys() {
        let c = DatasetConfig::parse("preset = desk\ncoil_pool = 2\nv_ro = [-1, 1]\nnum_coils = 4\n").unwrap();
        assert_eq!(c.coils, CoilSource::Analytic { pool: 2 });
        assert_eq!(c.bounds.v_ro, (-1.0, 1.0));
        assert_eq!(c.preset.num_coils, 4);
        assert!(matches!(
            DatasetConfig::parse("preset = huge"),
            Err(ForgeError::Config { line: 1, .. })
        ));
        assert!(matches!(
            DatasetConfig::parse("\n\nnope = 3"),
            Err(ForgeError::Config { line: 3, .. })
        ));
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let m = gen_dataset(&GenOptions {
            kind: DatasetKind::Dm,
            count: 0,
            seed: 1,
            out_dir: dir.path().to_path_buf(),
            workers: 1,
            config: DatasetConfig::default(),
        })
        .unwrap();
        assert!(m.samples.is_empty());
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from(MANIFEST_NAME)]);
    }

    #[test]
    fn manifest_json_round_trip_is_exact() {
        let b = RandomizationBounds::default();
        let samples = (0..20)
            .map(|i| SampleEntry {
                index: i,
                files: vec![],
                draw: crate::randomize::sample_config(&b, 3, i),
            })
            .collect();
        let m = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            kind: DatasetKind::Dm,
            seed: 3,
            count: 20,
            config: DatasetConfig::default(),
            samples,
        };
        let text = m.to_json().unwrap();
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn sha_hex() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
