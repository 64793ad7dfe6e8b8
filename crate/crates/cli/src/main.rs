mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use intrinsic::annotations::{
    augment_judgments, sample_cgi_ordinals, slic_superpixels, OrdinalFile, SawAnnotationSet,
};
use intrinsic::eval::{mit_metrics, saw_pr, saw_pr_brute_force, whdr, PrCurve};
use intrinsic::image::{intensity, Decomposition, LinearImage};
use intrinsic::io::{
    make_ground_truth, read_image, read_mask_png, write_atomic, write_mask_png, write_pfm,
    write_png, PngDepth,
};
use intrinsic::solver::{decompose, score, Annotations, GroundTruth};
use intrinsic::tonemap::tonemap;
use serde::Serialize;
use serde_json::json;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "intrinsic", version, about = "Intrinsic image decomposition tools")]
struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run single-threaded with byte-reproducible outputs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tone-map linear HDR radiance to a PNG.
    Tonemap {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long)]
        anchor: Option<f64>,
        /// PNG bit depth, 8 or 16.
        #[arg(long, default_value_t = 16)]
        depth: u8,
    },
    /// Derive ground-truth shading S = I / R with a validity mask.
    MakeGt {
        image: PathBuf,
        reflectance: PathBuf,
        #[arg(long)]
        light_mask: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Solve for reflectance and shading of one image.
    Decompose {
        image: PathBuf,
        /// Ordinal (`pairs`) or SAW (`smooth_regions` ...) annotation JSON;
        /// may be given twice, once per kind.
        #[arg(long)]
        annotations: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Evaluate every applicable loss term for a given decomposition.
    Score {
        image: PathBuf,
        reflectance: PathBuf,
        shading: PathBuf,
        #[arg(long)]
        annotations: Vec<PathBuf>,
        #[arg(long, requires = "gt_shading")]
        gt_reflectance: Option<PathBuf>,
        #[arg(long, requires = "gt_reflectance")]
        gt_shading: Option<PathBuf>,
        /// Use the dense smoothness operator instead of the factored one.
        #[arg(long)]
        oracle: bool,
    },
    /// Weighted human disagreement rate of a reflectance image.
    EvalWhdr {
        reflectance: PathBuf,
        judgments: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Shading precision/recall against SAW annotations.
    EvalSaw {
        shading: PathBuf,
        image: PathBuf,
        annotations: PathBuf,
        /// Weight smooth-region pixels by their mean image gradient.
        #[arg(long)]
        challenge: bool,
        /// Recount every operating point directly.
        #[arg(long)]
        oracle: bool,
        /// Also write the PR points as CSV.
        #[arg(long)]
        pr_csv: Option<PathBuf>,
    },
    /// MSE, LMSE and DSSIM against ground truth.
    EvalMit {
        reflectance: PathBuf,
        shading: PathBuf,
        gt_reflectance: PathBuf,
        gt_shading: PathBuf,
    },
    /// Close an ordinal judgment file under transitivity.
    AugmentJudgments { input: PathBuf, output: PathBuf },
    /// SLIC superpixel labels, optionally with sampled ordinal pairs.
    Superpixels {
        image: PathBuf,
        output: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        compactness: Option<f64>,
        /// Write judgments sampled from `--gt-reflectance` here.
        #[arg(long, requires = "gt_reflectance")]
        sample_ordinals: Option<PathBuf>,
        #[arg(long)]
        gt_reflectance: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<intrinsic::Error> for Failure {
    fn from(e: intrinsic::Error) -> Self {
        match e {
            intrinsic::Error::InvalidParameter { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn context<T>(r: intrinsic::Result<T>, what: &Path) -> Result<T, Failure> {
    r.map_err(|e| match e {
        intrinsic::Error::InvalidParameter { .. } => Failure::Usage(e.to_string()),
        _ => Failure::Runtime(format!("{}: {e}", what.display())),
    })
}

fn emit<T: Serialize>(value: &T) -> Outcome {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    context(write_atomic(path, &bytes), path)
}

fn load(path: &Path) -> Result<LinearImage, Failure> {
    context(read_image(path), path)
}

/// Sorts annotation files by their top-level keys.
fn load_annotations(paths: &[PathBuf]) -> Result<Annotations, Failure> {
    let mut out = Annotations::default();
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        let is_ordinal = value.get("pairs").is_some();
        let bad = |e: serde_json::Error| Failure::Runtime(format!("{}: {e}", path.display()));
        if is_ordinal {
            let file: OrdinalFile = serde_json::from_value(value).map_err(bad)?;
            out.judgments.get_or_insert_with(Vec::new).extend(file.pairs);
        } else {
            let set: SawAnnotationSet = serde_json::from_value(value).map_err(bad)?;
            if out.saw.replace(set).is_some() {
                return Err(Failure::Usage("more than one SAW annotation file".into()));
            }
        }
    }
    Ok(out)
}

fn decomposition(r: &Path, s: &Path) -> Result<Decomposition, Failure> {
    let r = load(r)?;
    let s = load(s)?;
    Ok(Decomposition::new(r.to_log(), s.to_log())?)
}

fn write_field(img: &LinearImage, dir: &Path, stem: &str) -> Outcome {
    let pfm = dir.join(format!("{stem}.pfm"));
    context(write_pfm(img, &pfm), &pfm)?;
    let png = dir.join(format!("{stem}.png"));
    context(write_png(img, &png, PngDepth::Sixteen), &png)?;
    let mask = dir.join(format!("{stem}.mask.png"));
    context(write_mask_png(img.mask(), &mask), &mask)
}

fn pr_json(curve: &PrCurve) -> serde_json::Value {
    json!({ "ap": curve.ap, "operating_points": curve.points.len() })
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Tonemap {
            input,
            output,
            gamma,
            percentile,
            anchor,
            depth,
        } => {
            let mut params = cfg.tonemap;
            params.gamma = gamma.unwrap_or(params.gamma);
            params.percentile = percentile.unwrap_or(params.percentile);
            params.anchor = anchor.unwrap_or(params.anchor);
            params.validate()?;
            let depth = match depth {
                8 => PngDepth::Eight,
                16 => PngDepth::Sixteen,
                _ => return Err(Failure::Usage("--depth must be 8 or 16".into())),
            };
            let hdr = load(&input)?;
            let out = context(tonemap(&hdr, &params), &input)?;
            context(write_png(&out.image, &output, depth), &output)?;
            emit(&json!({
                "image": input,
                "reference": out.reference,
                "alpha": out.alpha,
                "saturated_fraction": out.saturated_fraction,
            }))
        }
        Command::MakeGt {
            image,
            reflectance,
            light_mask,
            out_dir,
        } => {
            let img = load(&image)?;
            let refl = load(&reflectance)?;
            let lights = match &light_mask {
                Some(p) => Some(context(read_mask_png(p), p)?),
                None => None,
            };
            let gt = context(make_ground_truth(&img, &refl, lights.as_ref()), &image)?;
            write_field(&gt.shading, &out_dir, "shading")?;
            write_field(&gt.reflectance, &out_dir, "reflectance")?;
            emit(&json!({
                "image": image,
                "valid_pixels": gt.shading.valid_count(),
                "pixels": gt.shading.pixel_count(),
            }))
        }
        Command::Decompose {
            image,
            annotations,
            out_dir,
        } => {
            cfg.validate()?;
            let img = load(&image)?;
            let ann = load_annotations(&annotations)?;
            let (pred, report) = context(decompose(&img, &cfg.solve_config(), &ann), &image)?;
            write_field(&pred.log_r.exp(), &out_dir, "reflectance")?;
            write_field(&pred.log_s.exp(), &out_dir, "shading")?;
            write_json(&out_dir.join("report.json"), &report)?;
            emit(&json!({
                "image": image,
                "iterations": report.iterations,
                "objective": report.objective,
                "converged": report.converged,
            }))
        }
        Command::Score {
            image,
            reflectance,
            shading,
            annotations,
            gt_reflectance,
            gt_shading,
            oracle,
        } => {
            cfg.validate()?;
            let img = load(&image)?;
            let pred = decomposition(&reflectance, &shading)?;
            let ann = load_annotations(&annotations)?;
            let gt = match (gt_reflectance, gt_shading) {
                (Some(r), Some(s)) => {
                    let reflectance = load(&r)?;
                    let mut shading = load(&s)?;
                    if shading.channels() != pred.log_s.channels() && pred.log_s.channels() == 1 {
                        shading = intensity(&shading);
                    }
                    Some(GroundTruth { reflectance, shading })
                }
                _ => None,
            };
            let total = context(
                score(&img, &pred, &ann, gt.as_ref(), &cfg.solve_config(), oracle),
                &image,
            )?;
            emit(&json!({
                "image": image,
                "objective": total.result.value,
                "terms": total.terms,
            }))
        }
        Command::EvalWhdr {
            reflectance,
            judgments,
            delta,
        } => {
            let r = load(&reflectance)?;
            let file = context(OrdinalFile::read(&judgments), &judgments)?;
            context(file.validate(r.width(), r.height()), &judgments)?;
            let delta = delta.unwrap_or(cfg.eval.whdr_delta);
            let value = context(whdr(&r.to_log(), &file.pairs, delta), &judgments)?;
            emit(&json!({ "image": reflectance, "whdr": value, "pairs": file.pairs.len() }))
        }
        Command::EvalSaw {
            shading,
            image,
            annotations,
            challenge,
            oracle,
            pr_csv,
        } => {
            let s = load(&shading)?;
            let img = load(&image)?;
            let set = context(SawAnnotationSet::read(&annotations), &annotations)?;
            let f = if oracle { saw_pr_brute_force } else { saw_pr };
            let curve = context(f(&s.to_log(), &img, &set, challenge), &annotations)?;
            if let Some(path) = &pr_csv {
                let mut csv = String::from("threshold,precision,recall\n");
                for p in &curve.points {
                    csv.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
                }
                context(write_atomic(path, csv.as_bytes()), path)?;
            }
            let mut line = pr_json(&curve);
            line["image"] = json!(image);
            line["challenge"] = json!(challenge);
            emit(&line)
        }
        Command::EvalMit {
            reflectance,
            shading,
            gt_reflectance,
            gt_shading,
        } => {
            let pred = decomposition(&reflectance, &shading)?;
            let gr = load(&gt_reflectance)?;
            let mut gs = load(&gt_shading)?;
            if gs.channels() != pred.log_s.channels() && pred.log_s.channels() == 1 {
                gs = intensity(&gs);
            }
            let m = context(mit_metrics(&pred, &gr, &gs), &reflectance)?;
            let mut line = serde_json::to_value(m)?;
            line["image"] = json!(reflectance);
            emit(&line)
        }
        Command::AugmentJudgments { input, output } => {
            let mut file = context(OrdinalFile::read(&input), &input)?;
            let before = file.pairs.len();
            file.pairs = augment_judgments(&file.pairs);
            write_json(&output, &file)?;
            emit(&json!({ "image": file.image, "input_pairs": before, "output_pairs": file.pairs.len() }))
        }
        Command::Superpixels {
            image,
            output,
            k,
            compactness,
            sample_ordinals,
            gt_reflectance,
        } => {
            let mut params = cfg.slic;
            params.k = k.unwrap_or(params.k);
            params.compactness = compactness.unwrap_or(params.compactness);
            params.validate()?;
            let img = load(&image)?;
            let labels = context(slic_superpixels(&img, &params), &image)?;
            write_json(&output, &labels)?;
            let mut line = json!({ "image": image, "segments": labels.count });
            if let (Some(out), Some(gt)) = (&sample_ordinals, &gt_reflectance) {
                let r = load(gt)?;
                let pairs = context(
                    sample_cgi_ordinals(&r, &labels, cfg.seed, cfg.eval.equal_delta),
                    gt,
                )?;
                line["pairs"] = json!(pairs.len());
                let file = OrdinalFile {
                    image: image.display().to_string(),
                    pairs,
                };
                write_json(out, &file)?;
            }
            emit(&line)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
