//! The `blessmark` command-line front end.
//!
//! Every run parameter can come from a flat `key=value` file given with
//! `--config`; a flag with the same name (dashes instead of underscores)
//! overrides the file. Exit codes: 0 success, 2 usage, 3 capacity,
//! 4 model/config mismatch, 5 I/O.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{capacity, embed, extract, CodecConfig, LengthMode, Watermark};
use crate::error::{Error, Result};
use crate::metrics::{bpp, EvaluationReport, CSV_HEADER};
use crate::nn::{load_weights, save_weights};
use crate::pixel::{read_image, write_image, Image};
use crate::restore::{build_detector_training_set, train_detector, recover, DenseDetector, DetectorConfig};
use crate::segment::{train_segmenter, CnnSegmenter, LabeledImage, SegTrainConfig, Segmenter, ThresholdSegmenter};
use crate::synthetic::{try_generate, SyntheticSpec};
use crate::transform::EmbedParams;

#[derive(Debug, Parser)]
#[command(name = "blessmark", version, about = "Blind ROI-preserving image watermarking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write seeded image/mask pairs (NAME.pgm|ppm + NAME_mask.pgm).
    GenSynthetic {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long)]
        color: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a seeded random watermark of `--bits` bits.
    GenWatermark {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the CNN segmenter on image/mask pairs.
    TrainSeg {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the distortion detector on cover images.
    TrainDet {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Report payload capacity of an image.
    Capacity {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        input: PathBuf,
    },
    /// Embed a watermark file into a cover image.
    Embed {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        watermark: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Embedding report (key=value).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Read the watermark back from a watermarked image alone.
    Extract {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Roll back the blocks the detector flags as distorted.
    Recover {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        input: PathBuf,
        /// Watermark previously extracted from `--input`.
        #[arg(long)]
        watermark: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Quality metrics for a cover/watermarked/recovered triple.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        cover: PathBuf,
        #[arg(long)]
        watermarked: PathBuf,
        #[arg(long)]
        recovered: PathBuf,
        /// Ground-truth ROI mask (255 = ROI).
        #[arg(long)]
        mask: PathBuf,
        /// Embedding report to take capacity and switched-block figures from.
        #[arg(long)]
        embed_report: Option<PathBuf>,
        #[arg(long)]
        csv: bool,
    },
}

/// Flags shared by every subcommand; unset ones fall back to `--config`, then defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub block_size: Option<usize>,
    /// 1-based coefficient index i of the pair c(i,i+1), c(i+1,i).
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// `cnn` or `threshold`.
    #[arg(long)]
    pub segmenter: Option<String>,
    /// Intensity cut for the threshold segmenter.
    #[arg(long)]
    pub seg_threshold: Option<u8>,
    #[arg(long)]
    pub seg_weights: Option<PathBuf>,
    #[arg(long)]
    pub det_weights: Option<PathBuf>,
    /// `external` or `header`.
    #[arg(long)]
    pub length_mode: Option<String>,
    #[arg(long)]
    pub bits: Option<usize>,
    #[arg(long)]
    pub guard_retries: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmenterKind {
    Cnn,
    Threshold,
}

/// Fully resolved run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub block_size: usize,
    pub index: usize,
    pub threshold: f64,
    pub segmenter: SegmenterKind,
    pub seg_threshold: u8,
    pub seg_weights: Option<PathBuf>,
    pub det_weights: Option<PathBuf>,
    pub length_mode: LengthMode,
    pub bits: Option<usize>,
    pub guard_retries: usize,
    pub max_iterations: usize,
    pub epochs: Option<usize>,
    pub lr: f64,
}

const CONFIG_KEYS: &[&str] = &[
    "seed",
    "block_size",
    "index",
    "threshold",
    "segmenter",
    "seg_threshold",
    "seg_weights",
    "det_weights",
    "length_mode",
    "bits",
    "guard_retries",
    "max_iterations",
    "epochs",
    "lr",
];

/// Parses a flat `key=value` file; `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key=value", n + 1)))?;
        let key = k.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::InvalidArgument(format!("config line {}: unknown key {key:?}", n + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value {raw:?} for {key}")))
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => parse_config(&read_text(path)?)?,
            None => BTreeMap::new(),
        };
        fn pick<T: std::str::FromStr + Clone>(
            flag: &Option<T>,
            file: &BTreeMap<String, String>,
            key: &str,
        ) -> Result<Option<T>> {
            match flag {
                Some(v) => Ok(Some(v.clone())),
                None => file.get(key).map(|raw| parse_value(key, raw)).transpose(),
            }
        }
        let block_size = pick(&self.block_size, &file, "block_size")?.unwrap_or(6);
        let segmenter = match pick(&self.segmenter, &file, "segmenter")?.as_deref() {
            None | Some("cnn") => SegmenterKind::Cnn,
            Some("threshold") => SegmenterKind::Threshold,
            Some(other) => return Err(Error::InvalidArgument(format!("unknown segmenter {other:?}"))),
        };
        let length_mode = match pick(&self.length_mode, &file, "length_mode")? {
            Some(s) => s.parse()?,
            None => LengthMode::External,
        };
        let config = RunConfig {
            seed: pick(&self.seed, &file, "seed")?.unwrap_or(0),
            block_size,
            index: pick(&self.index, &file, "index")?.unwrap_or(block_size.saturating_sub(1)),
            threshold: pick(&self.threshold, &file, "threshold")?.unwrap_or(0.01),
            segmenter,
            seg_threshold: pick(&self.seg_threshold, &file, "seg_threshold")?.unwrap_or(128),
            seg_weights: pick(&self.seg_weights, &file, "seg_weights")?,
            det_weights: pick(&self.det_weights, &file, "det_weights")?,
            length_mode,
            bits: pick(&self.bits, &file, "bits")?,
            guard_retries: pick(&self.guard_retries, &file, "guard_retries")?.unwrap_or(64),
            max_iterations: pick(&self.max_iterations, &file, "max_iterations")?.unwrap_or(10_000),
            epochs: pick(&self.epochs, &file, "epochs")?,
            lr: pick(&self.lr, &file, "lr")?.unwrap_or(0.01),
        };
        config.codec()?;
        Ok(config)
    }
}

impl RunConfig {
    pub fn codec(&self) -> Result<CodecConfig> {
        let mut codec = CodecConfig::new(EmbedParams::new(self.block_size, self.index, self.threshold)?);
        codec.guard_retries = self.guard_retries;
        codec.max_iterations = self.max_iterations;
        codec.length_mode = self.length_mode;
        Ok(codec)
    }

    pub fn load_segmenter(&self) -> Result<Box<dyn Segmenter>> {
        match self.segmenter {
            SegmenterKind::Threshold => Ok(Box::new(ThresholdSegmenter {
                threshold: self.seg_threshold,
            })),
            SegmenterKind::Cnn => {
                let path = self
                    .seg_weights
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("--seg-weights is required with --segmenter cnn".into()))?;
                let seg = CnnSegmenter::from_weights(&load_weights(&read_bytes(path)?)?)?;
                match seg.block_size() {
                    Some(m) if m != self.block_size => Err(Error::ModelMismatch(format!(
                        "segmenter weights were trained for m={m}, config has m={}",
                        self.block_size
                    ))),
                    _ => Ok(Box::new(seg)),
                }
            }
        }
    }

    pub fn load_detector(&self) -> Result<DenseDetector> {
        let path = self
            .det_weights
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--det-weights is required".into()))?;
        let det = DenseDetector::from_weights(&load_weights(&read_bytes(path)?)?)?;
        if det.m() != self.block_size {
            return Err(Error::ModelMismatch(format!(
                "detector weights expect m={}, config has m={}",
                det.m(),
                self.block_size
            )));
        }
        Ok(det)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?).map_err(|_| Error::InvalidArgument(format!("{} is not UTF-8", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_image(path: &Path) -> Result<Image> {
    read_image(&read_bytes(path)?)
}

fn load_watermark(path: &Path) -> Result<Watermark> {
    read_text(path)?.parse()
}

/// Command definition, for help output and interface inspection.
pub fn command() -> clap::Command {
    Cli::command()
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = write!(out, "{e}");
                return 0;
            }
            let text = e.to_string();
            let _ = writeln!(err, "{}", text.lines().next().unwrap_or("error: bad usage"));
            return 2;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenSynthetic {
            run,
            count,
            width,
            height,
            color,
            out_dir,
        } => {
            let cfg = run.resolve()?;
            if count == 0 {
                return Err(Error::InvalidArgument("--count must be at least 1".into()));
            }
            fs::create_dir_all(&out_dir)?;
            for k in 0..count {
                let seed = cfg.seed.wrapping_add(k as u64);
                let spec = if color {
                    SyntheticSpec::color(seed, width, height)
                } else {
                    SyntheticSpec::gray(seed, width, height)
                };
                let s = try_generate(&spec)?;
                let name = format!("synthetic_{k:04}");
                let ext = if color { "ppm" } else { "pgm" };
                write_bytes(&out_dir.join(format!("{name}.{ext}")), &write_image(&s.image))?;
                write_bytes(&out_dir.join(format!("{name}_mask.pgm")), &write_image(&s.mask))?;
            }
            writeln!(out, "images={count}")?;
        }
        Command::GenWatermark { run, output } => {
            let cfg = run.resolve()?;
            let bits = cfg
                .bits
                .ok_or_else(|| Error::InvalidArgument("--bits is required".into()))?;
            write_bytes(&output, Watermark::random(cfg.seed, bits).to_text().as_bytes())?;
            writeln!(out, "bits={bits}")?;
        }
        Command::TrainSeg { run, data, output } => {
            let cfg = run.resolve()?;
            let pairs = load_labeled_dir(&data)?;
            let (train_set, held_out) = split(pairs, cfg.seed);
            let mut tc = SegTrainConfig::new(cfg.block_size);
            tc.seed = cfg.seed;
            tc.lr = cfg.lr;
            if let Some(e) = cfg.epochs {
                tc.epochs = e;
            }
            let outcome = train_segmenter(&train_set, &held_out, &tc, |_, _| {})?;
            write_bytes(&output, &save_weights(&outcome.weights))?;
            writeln!(out, "train_images={}\nheld_out_images={}", train_set.len(), held_out.len())?;
            writeln!(out, "held_out_dice={:.6}", outcome.held_out_dice)?;
        }
        Command::TrainDet { run, data, output } => {
            let cfg = run.resolve()?;
            let codec = cfg.codec()?;
            let seg = cfg.load_segmenter()?;
            let covers = load_cover_dir(&data)?;
            let (train_imgs, held_imgs) = split(covers, cfg.seed);
            if held_imgs.is_empty() {
                return Err(Error::TrainingData("need at least two cover images for a held-out split".into()));
            }
            let train_set = build_detector_training_set(&train_imgs, &seg, &codec)?;
            let held_out = build_detector_training_set(&held_imgs, &seg, &codec)?;
            let mut dc = DetectorConfig::new(cfg.block_size);
            if let Some(e) = cfg.epochs {
                dc.epochs = e;
            }
            let outcome = train_detector(&train_set, &held_out, &dc, cfg.seed, |_, _| {})?;
            write_bytes(&output, &save_weights(&outcome.weights))?;
            writeln!(out, "train_blocks={}\nheld_out_blocks={}", train_set.len(), held_out.len())?;
            writeln!(out, "held_out_accuracy={:.6}", outcome.held_out_accuracy)?;
        }
        Command::Capacity { run, input } => {
            let cfg = run.resolve()?;
            let seg = cfg.load_segmenter()?;
            let report = capacity(&load_image(&input)?, &seg, &cfg.codec()?)?;
            writeln!(out, "slots={}\nbits={}\nbpp={:.6}", report.slots, report.bits, report.bpp)?;
        }
        Command::Embed {
            run,
            input,
            watermark,
            output,
            report,
        } => {
            let cfg = run.resolve()?;
            let seg = cfg.load_segmenter()?;
            let cover = load_image(&input)?;
            let (marked, rep) = embed(&cover, &load_watermark(&watermark)?, &seg, &cfg.codec()?)?;
            write_bytes(&output, &write_image(&marked))?;
            let text = format!(
                "{}capacity_bpp={:.6}\n",
                rep.to_key_value(),
                bpp(rep.bits_embedded, cover.width(), cover.height())
            );
            if let Some(path) = report {
                write_bytes(&path, text.as_bytes())?;
            }
            write!(out, "{text}")?;
        }
        Command::Extract { run, input, output } => {
            let cfg = run.resolve()?;
            let seg = cfg.load_segmenter()?;
            let codec = cfg.codec()?;
            let length = match codec.length_mode {
                LengthMode::Header => None,
                LengthMode::External => Some(cfg.bits.ok_or_else(|| {
                    Error::InvalidArgument("--bits is required with --length-mode external".into())
                })?),
            };
            let w = extract(&load_image(&input)?, &seg, &codec, length)?;
            write_bytes(&output, w.to_text().as_bytes())?;
            writeln!(out, "bits={}", w.len())?;
        }
        Command::Recover {
            run,
            input,
            watermark,
            output,
        } => {
            let cfg = run.resolve()?;
            let seg = cfg.load_segmenter()?;
            let det = cfg.load_detector()?;
            let (img, rep) = recover(&load_image(&input)?, &load_watermark(&watermark)?, &seg, &det, &cfg.codec()?)?;
            write_bytes(&output, &write_image(&img))?;
            writeln!(out, "candidates={}\nrecovered={}", rep.candidates, rep.recovered)?;
        }
        Command::Evaluate {
            run,
            cover,
            watermarked,
            recovered,
            mask,
            embed_report,
            csv,
        } => {
            run.resolve()?;
            let cover = load_image(&cover)?;
            let mask = load_image(&mask)?;
            if mask.channels() != 1 || mask.width() != cover.width() || mask.height() != cover.height() {
                return Err(Error::Shape("mask must be a single-channel image the size of the cover".into()));
            }
            let (bpp_value, switched) = match embed_report {
                Some(path) => {
                    let kv = parse_report(&read_text(&path)?);
                    let num = |k: &str| kv.get(k).and_then(|v| v.parse::<f64>().ok());
                    (num("capacity_bpp").unwrap_or(f64::NAN), num("switched_percent").unwrap_or(f64::NAN))
                }
                None => (f64::NAN, f64::NAN),
            };
            let roi: Vec<bool> = mask.samples().iter().map(|&v| v >= 128).collect();
            let report = EvaluationReport::compute(
                &cover,
                &load_image(&watermarked)?,
                &load_image(&recovered)?,
                &roi,
                bpp_value,
                switched,
            )?;
            if csv {
                writeln!(out, "{CSV_HEADER}\n{}", report.to_csv_row())?;
            } else {
                write!(out, "{}", report.to_key_value())?;
            }
        }
    }
    Ok(())
}

fn parse_report(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn is_image_file(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm" | "pnm"))
}

fn mask_path(path: &Path) -> Option<PathBuf> {
    let stem = path.file_stem()?.to_str()?;
    Some(path.with_file_name(format!("{stem}_mask.pgm")))
}

fn is_mask(path: &Path) -> bool {
    path.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.ends_with("_mask"))
}

/// Image files of `dir` sorted by file name, masks excluded.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p) && !is_mask(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::TrainingData(format!("no images in {}", dir.display())));
    }
    Ok(files)
}

fn load_labeled_dir(dir: &Path) -> Result<Vec<LabeledImage>> {
    list_images(dir)?
        .into_iter()
        .map(|p| {
            let mp = mask_path(&p).filter(|m| m.is_file()).ok_or_else(|| {
                Error::TrainingData(format!("{} has no matching *_mask.pgm", p.display()))
            })?;
            LabeledImage::new(load_image(&p)?, load_image(&mp)?)
        })
        .collect()
}

fn load_cover_dir(dir: &Path) -> Result<Vec<Image>> {
    list_images(dir)?.iter().map(|p| load_image(p)).collect()
}

/// First half of the sorted list trains, the rest is held out; each half is then shuffled.
fn split<T>(mut items: Vec<T>, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut held = items.split_off(items.len().div_ceil(2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    held.shuffle(&mut rng);
    (items, held)
}
