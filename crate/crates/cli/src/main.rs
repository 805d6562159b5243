use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use posterforge::baselines::{mmcq_predict, ClassifierBaseline, ColorLibrary, MmcqConfig, RandomBaseline};
use posterforge::design::{
    attach_taglines, heuristic_layout, parse_annotation, serialize_annotation, BBox, ElementCategory, GraphicElement,
    PosterSpec, Tagline,
};
use posterforge::eval::{
    ablation_report, baseline_report, dominant_accuracy, sap_predictions, style_metrics, LabeledPoster, MetricsTable,
    COLUMNS,
};
use posterforge::pipeline::{load_assets, load_model, render_annotation, run_pipeline, save_model, PipelineConfig};
use posterforge::raster::{load_image_file, save_image_file};
use posterforge::retarget::{ft_saliency, retarget, ExtendStrategy, RetargetOptions};
use posterforge::sap::{train, Mode, SapConfig};
use posterforge::synth::{generate_dataset, load_dataset, sample_tagline, CharTable, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Content-aware advertising poster composition.
#[derive(Parser)]
#[command(name = "posterforge", version)]
struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resize a product image to a new size, keeping the product intact.
    Retarget {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        /// Grayscale mask of text or logos to erase first (nonzero = erase).
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Canvas extension: mirror, edge or blur.
        #[arg(long, default_value = "mirror")]
        strategy: String,
        /// Crop without the product-protection fallback.
        #[arg(long)]
        no_protect: bool,
    },
    /// Build a rule-based layout annotation for a background image.
    Layout {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// One tagline per line; otherwise --count lines are synthesized.
        #[arg(long)]
        taglines: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        count: usize,
        #[arg(long)]
        logo: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fill in element styles with a trained model.
    Predict {
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Render an annotation over the background it names.
    Render {
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the style predictor on a synthetic dataset.
    TrainSap {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path; its config and mode go to a .json side file.
        #[arg(long)]
        out: PathBuf,
        /// JSON model/training config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "nar")]
        mode: String,
        /// Last N samples are held out and scored after training.
        #[arg(long, default_value_t = 0)]
        holdout: usize,
        /// Per-step loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with planted style rules.
    SynthData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// "codepoint,probability" CSV replacing the English table.
        #[arg(long)]
        chars: Option<PathBuf>,
    },
    /// Produce the ablation or baseline metrics table as CSV.
    Eval {
        #[arg(long, value_enum)]
        report: Report,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 64)]
        holdout: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Trained model for the SAP row of the baseline report; trained
        /// from the config when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one comparison predictor and write per-element predictions.
    Baselines {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 64)]
        holdout: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to store the retrieval library.
        #[arg(long)]
        library_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Report {
    Ablation,
    Baselines,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mmcq,
    Retrieval,
    Classifier,
    Random,
}

/// Prints "STAGE <name> OK|FAIL <ms>" lines on stderr.
fn log_stage(name: &str, ok: bool, ms: u128) {
    eprintln!("STAGE {name} {} {ms}", if ok { "OK" } else { "FAIL" });
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let r = f();
    log_stage(name, r.is_ok(), t.elapsed().as_millis());
    r.with_context(|| format!("stage {name} failed"))
}

fn sap_config(path: Option<&Path>, steps: Option<usize>, seed: Option<u64>) -> Result<SapConfig> {
    let mut cfg = match path {
        Some(p) => {
            serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("reading {}", p.display()))?
        }
        None => SapConfig::default(),
    };
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Manifest order; the last `holdout` samples form the test split.
fn split(data: &Path, holdout: usize) -> Result<(Vec<LabeledPoster>, Vec<LabeledPoster>)> {
    let all: Vec<LabeledPoster> = load_dataset(data)?.iter().map(LabeledPoster::from).collect();
    if holdout >= all.len() {
        bail!("holdout {holdout} leaves no training samples out of {}", all.len());
    }
    let mut train = all;
    let test = train.split_off(train.len() - holdout);
    Ok((train, test))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn annotation_dir(p: &Path) -> &Path {
    p.parent().unwrap_or(Path::new("."))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Retarget { input, output, width, height, mask, strategy, no_protect } => {
            let opts = RetargetOptions {
                extend_strategy: strategy.parse::<ExtendStrategy>()?,
                protect_product: !no_protect,
                ..RetargetOptions::default()
            };
            let (img, mask) = stage("load", || {
                let img = load_image_file(&input)?;
                let mask = mask.as_deref().map(load_image_file).transpose()?;
                Ok((img, mask))
            })?;
            let out = stage("retarget", || Ok(retarget(&img, mask.as_ref(), width, height, &opts)?))?;
            stage("save", || Ok(save_image_file(&out, &output)?))
        }
        Command::Layout { input, output, taglines, count, logo, seed } => {
            let img = stage("load", || Ok(load_image_file(&input)?))?;
            let texts: Vec<Tagline> = stage("taglines", || match &taglines {
                Some(p) => std::fs::read_to_string(p)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(|l| Ok(Tagline::new(l)?))
                    .collect(),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    (0..count.max(1)).map(|_| Ok(sample_tagline(&SynthConfig::default(), &mut rng)?)).collect()
                }
            })?;
            stage("layout", || {
                let mut els =
                    vec![GraphicElement::new(ElementCategory::BackgroundImage, BBox::new(0.0, 0.0, 1.0, 1.0))];
                els.extend(heuristic_layout(&ft_saliency(&img)?, texts.len(), logo)?);
                attach_taglines(&mut els, &texts);
                let spec = PosterSpec {
                    width: img.width(),
                    height: img.height(),
                    image: input.to_string_lossy().into_owned(),
                    elements: els,
                };
                std::fs::write(&output, serialize_annotation(&spec))?;
                Ok(())
            })
        }
        Command::Predict { annotation, checkpoint, output } => {
            let (mut spec, bg, model) = stage("load", || {
                let parsed = parse_annotation(&std::fs::read_to_string(&annotation)?)?;
                let bg = load_image_file(annotation_dir(&annotation).join(&parsed.spec.image))?;
                Ok((parsed.spec, bg, load_model(&checkpoint)?))
            })?;
            stage("predict", || {
                let styles = model.0.predict(&bg, &spec.elements, model.1)?;
                for (e, s) in spec.elements.iter_mut().zip(styles) {
                    if s.is_some() {
                        e.style = s;
                    }
                }
                spec.validate()?;
                Ok(std::fs::write(&output, serialize_annotation(&spec))?)
            })
        }
        Command::Render { annotation, output } => {
            let assets = stage("load", || Ok(load_assets()?))?;
            let (img, warnings) = stage("render", || Ok(render_annotation(&annotation, &assets)?))?;
            for w in warnings {
                log::warn!("{w}");
            }
            stage("save", || Ok(save_image_file(&img, &output)?))
        }
        Command::TrainSap { data, out, config, steps, seed, mode, holdout, log } => {
            let mode: Mode = mode.parse()?;
            let cfg = sap_config(config.as_deref(), steps, seed)?;
            let (train_set, test) = stage("load", || split(&data, holdout))?;
            let samples = stage("prepare", || Ok(posterforge::eval::sap_samples(&train_set, cfg.input_size)?))?;
            let (model, steps_log) = stage("train", || Ok(train(&samples, &cfg, mode)?))?;
            stage("save", || {
                save_model(&model, mode, &out)?;
                if let Some(p) = &log {
                    steps_log.write_csv(std::fs::File::create(p)?)?;
                }
                Ok(())
            })?;
            println!(
                "loss {:.4} -> {:.4} over {} steps",
                steps_log.first_loss().unwrap_or(f64::NAN),
                steps_log.last_loss().unwrap_or(f64::NAN),
                steps_log.rows.len()
            );
            if !test.is_empty() {
                stage("evaluate", || {
                    let (p, t) = sap_predictions(&model, mode, &test)?;
                    let acc = dominant_accuracy(&p, &t)?;
                    println!(
                        "held-out dominant accuracy: light {:.3}, ab {:.3} ({} taglines)",
                        acc.light,
                        acc.ab,
                        t.len()
                    );
                    Ok(())
                })?;
            }
            Ok(())
        }
        Command::SynthData { n, seed, out, size, chars } => {
            let mut cfg = SynthConfig { size, ..SynthConfig::default() };
            if let Some(p) = chars {
                cfg.chars = CharTable::parse_csv(&std::fs::read_to_string(&p)?)?;
            }
            let assets = stage("load", || Ok(load_assets()?))?;
            let rows = stage("generate", || Ok(generate_dataset(&cfg, n, seed, &out, &assets)?))?;
            println!("wrote {} samples to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Eval { report, data, holdout, config, steps, checkpoint, out } => {
            let cfg = sap_config(config.as_deref(), steps, None)?;
            let (train_set, test) = stage("load", || split(&data, holdout))?;
            if test.is_empty() {
                bail!("evaluation needs --holdout > 0");
            }
            let table = match report {
                Report::Ablation => stage("ablation", || Ok(ablation_report(&train_set, &test, &cfg)?.table))?,
                Report::Baselines => {
                    let (model, mode) = match &checkpoint {
                        Some(p) => stage("load-model", || Ok(load_model(p)?))?,
                        None => {
                            let s = posterforge::eval::sap_samples(&train_set, cfg.input_size)?;
                            stage("train", || Ok((train(&s, &cfg, Mode::Nar)?.0, Mode::Nar)))?
                        }
                    };
                    stage("baselines", || Ok(baseline_report(&train_set, &test, &cfg, (&model, mode))?))?
                }
            };
            write_or_print(out.as_deref(), &table.to_csv())
        }
        Command::Baselines { method, data, holdout, config, seed, library_out, out } => {
            let (train_set, test) = stage("load", || split(&data, holdout))?;
            if test.is_empty() {
                bail!("baselines need --holdout > 0");
            }
            let mut rows = String::from("poster,element,ab,light\n");
            let (mut preds, mut gts) = (Vec::new(), Vec::new());
            let mut predictor: Box<dyn FnMut(&LabeledPoster, &GraphicElement) -> Result<posterforge::color::QColor>> =
                match method {
                    Method::Mmcq => {
                        let mm = MmcqConfig::default();
                        Box::new(move |p, e| Ok(mmcq_predict(&p.image, e.bbox, &mm)?))
                    }
                    Method::Retrieval => {
                        let lib = stage("build", || Ok(ColorLibrary::build(&train_set)?))?;
                        if let Some(p) = &library_out {
                            lib.write(std::fs::File::create(p)?)?;
                        }
                        Box::new(move |p, e| Ok(lib.predict(&p.image, e.bbox)?))
                    }
                    Method::Classifier => {
                        let cfg = sap_config(config.as_deref(), None, Some(seed))?;
                        let (cls, _) = stage("train", || Ok(ClassifierBaseline::train(&train_set, &cfg)?))?;
                        Box::new(move |p, e| Ok(cls.classify(&p.image, e.bbox, e.category)?))
                    }
                    Method::Random => {
                        let mut r = RandomBaseline::new(seed);
                        Box::new(move |_, _| Ok(r.color()))
                    }
                };
            stage("predict", || {
                for (pi, p) in test.iter().enumerate() {
                    for i in p.scored() {
                        let e = &p.elements[i];
                        let q = predictor(p, e)?;
                        rows.push_str(&format!("{pi},{i},{},{}\n", q.ab, q.light));
                        preds.push(posterforge::design::StyleAttributes::solid(q));
                        gts.push(e.style.expect("scored elements are styled"));
                    }
                }
                Ok(())
            })?;
            let m = style_metrics(&preds, &gts)?;
            let table =
                MetricsTable { columns: COLUMNS[..2].to_vec(), rows: vec![(method_name(method).to_string(), m)] };
            eprint!("{}", table.to_csv());
            write_or_print(out.as_deref(), &rows)
        }
        Command::Run { config } => {
            let cfg = stage("config", || Ok(PipelineConfig::from_file(&config)?))?;
            let assets = stage("assets", || Ok(load_assets()?))?;
            let outs = run_pipeline(&cfg, &assets, &mut log_stage)?;
            for o in outs {
                for w in &o.warnings {
                    log::warn!("{w}");
                }
                println!("{} {}", o.poster.display(), o.annotation.display());
            }
            Ok(())
        }
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Mmcq => "MMCQ",
        Method::Retrieval => "Retrieval",
        Method::Classifier => "Classifier",
        Method::Random => "Random",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
