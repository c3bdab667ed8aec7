use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use wop::cnn::{CnnConfig, CnnModel, ConvBlock, EpochRecord, Precision, Scalar};
use wop::dataset::{subsample, Sampling};
use wop::metrics::{staff_eval, write_csv, EvalResult};
use wop::selection::{self, GridData, GridSpec, Subsample};
use wop::synth::{generate_corpus, Corpus, Degradation, Split, SynthConfig};
use wop::{extract_dataset, fit_table, pbm, AnyModel, ApplyMode, Error, LocalFunction, PatchDataset, Result, Window};

use crate::args::*;
use crate::manifest::Recorder;

fn snapshot<T: serde::Serialize>(a: &T) -> serde_json::Value {
    serde_json::to_value(a).expect("arguments serialize")
}

fn pair(v: &[usize], what: &str) -> Result<(usize, usize)> {
    match v {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::InvalidArgument(format!("--{what} takes min,max"))),
    }
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "validation" | "val" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => Err(Error::InvalidArgument(format!(
            "unknown split '{other}' (expected train, validation or test)"
        ))),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

pub fn run(cmd: &Command, threads: Option<usize>) -> Result<Recorder> {
    match cmd {
        Command::Gen(a) => gen(a, threads),
        Command::Extract(a) => extract(a, threads),
        Command::Train(a) => train(a, threads),
        Command::Select(a) => select(a, threads),
        Command::Apply(a) => apply(a, threads),
        Command::Eval(a) => eval(a, threads),
    }
}

fn gen(a: &GenArgs, threads: Option<usize>) -> Result<Recorder> {
    let mut rec = Recorder::new("gen", snapshot(a), threads);
    let cfg = SynthConfig {
        width: a.width,
        height: a.height,
        staves: a.staves,
        lines_per_staff: a.lines_per_staff,
        line_thickness: pair(&a.line_thickness, "line-thickness")?,
        line_spacing: pair(&a.line_spacing, "line-spacing")?,
        symbols_per_staff: pair(&a.symbols_per_staff, "symbols-per-staff")?,
        degradation: Degradation {
            pepper: a.pepper,
            line_breaks: a.line_breaks,
        },
        seed: a.seed,
    };
    let corpus = generate_corpus(&cfg, a.images, a.seed)?;
    corpus.write(&a.out)?;
    rec.seed("corpus", a.seed);
    rec.output(&a.out);
    let s = corpus.split_spec();
    println!(
        "wrote {} images to {} (train {}, validation {}, test {})",
        a.images,
        a.out.display(),
        s.train.len(),
        s.validation.len(),
        s.test.len()
    );
    Ok(rec)
}

fn extract(a: &ExtractArgs, threads: Option<usize>) -> Result<Recorder> {
    let mut rec = Recorder::new("extract", snapshot(a), threads);
    let corpus = Corpus::load(&a.corpus)?;
    rec.input(&a.corpus);
    let pairs = corpus.pairs(parse_split(&a.split)?);
    if pairs.is_empty() {
        return Err(Error::Data(format!("split '{}' has no images", a.split)));
    }
    let window = Window::rect(a.window, a.window_h.unwrap_or(a.window))?;
    let sampling: Sampling = a.sampling.parse()?;
    let mut ds = extract_dataset(&pairs, &window, sampling)?;
    if let Some(n) = a.subsample {
        if n < ds.len() {
            ds = subsample(&ds, n, a.subsample_seed)?;
            rec.seed("subsample", a.subsample_seed);
        }
    }
    ds.save(&a.out)?;
    rec.output(&a.out);
    let st = ds.stats();
    println!(
        "{} patches ({} distinct, {} conflicting) -> {}",
        st.total,
        st.distinct,
        st.conflicting,
        a.out.display()
    );
    Ok(rec)
}

fn cnn_config(arch: &ArchArgs, window: &Window) -> Result<CnnConfig> {
    let (w, h) = window
        .rect_dims()
        .ok_or_else(|| Error::InvalidArgument("the CNN needs a rectangular window".into()))?;
    if arch.masks.len() != arch.block_mask_sizes.len() {
        return Err(Error::InvalidArgument(
            "--masks and --block-mask-sizes need one entry per block".into(),
        ));
    }
    Ok(CnnConfig {
        window_w: w,
        window_h: h,
        blocks: arch
            .masks
            .iter()
            .zip(&arch.block_mask_sizes)
            .map(|(&masks, &mask_size)| ConvBlock { masks, mask_size })
            .collect(),
        fc_hidden: arch.fc_hidden,
        batch_size: arch.batch_size,
        seed: arch.seed,
        precision: arch.precision.parse::<Precision>()?,
        ..CnnConfig::default()
    })
}

fn log_line(r: &EpochRecord) -> String {
    let val = r.val_mae.map(|v| format!("{v:.6}")).unwrap_or_default();
    format!(
        "{},{:.6},{:.6},{}\n",
        r.epoch, r.train_loss, r.train_accuracy, val
    )
}

fn train_cnn<T: Scalar>(
    cfg: CnnConfig,
    train: &PatchDataset,
    val: Option<&PatchDataset>,
    log: &Path,
) -> Result<AnyModel>
where
    AnyModel: From<CnnModel<T>>,
{
    let mut file = fs::File::create(log).map_err(|e| Error::Io {
        path: log.to_path_buf(),
        source: e,
    })?;
    let io = |e| Error::Io {
        path: log.to_path_buf(),
        source: e,
    };
    file.write_all(b"epoch,train_loss,train_accuracy,val_mae\n").map_err(io)?;
    let mut model = CnnModel::<T>::new(cfg)?;
    model.train(train, val, |r, _| {
        let line = log_line(r);
        print!("epoch {line}");
        file.write_all(line.as_bytes()).map_err(io)
    })?;
    Ok(model.into())
}

fn train(a: &TrainArgs, threads: Option<usize>) -> Result<Recorder> {
    let mut rec = Recorder::new("train", snapshot(a), threads);
    let ds = PatchDataset::load(&a.data)?;
    rec.input(&a.data);
    let model = if a.table {
        fit_table(&ds)?.into()
    } else {
        let val = match &a.val {
            Some(p) => {
                rec.input(p);
                Some(PatchDataset::load(p)?)
            }
            None => None,
        };
        let mut cfg = cnn_config(&a.arch, ds.window())?;
        cfg.learning_rate = a.lr;
        cfg.dropout_rate = a.dropout;
        cfg.epochs = a.epochs;
        rec.seed("model", cfg.seed);
        rec.cnn_defaults();
        let log = a.log.clone().unwrap_or_else(|| {
            let mut s = a.out.as_os_str().to_owned();
            s.push(".log.csv");
            PathBuf::from(s)
        });
        let model = match cfg.precision {
            Precision::F32 => train_cnn::<f32>(cfg, &ds, val.as_ref(), &log)?,
            Precision::F64 => train_cnn::<f64>(cfg, &ds, val.as_ref(), &log)?,
        };
        rec.output(&log);
        model
    };
    model.save(&a.out)?;
    rec.output(&a.out);
    println!("{} model -> {}", model.kind(), a.out.display());
    Ok(rec)
}

fn select(a: &SelectArgs, threads: Option<usize>) -> Result<Recorder> {
    let mut rec = Recorder::new("select", snapshot(a), threads);
    let corpus = Corpus::load(&a.corpus)?;
    rec.input(&a.corpus);
    corpus.split_spec().validate_for_selection()?;
    let train = corpus.pairs(Split::Train);
    let val = corpus.pairs(Split::Validation);
    let base = cnn_config(&a.arch, &Window::square(a.windows.first().copied().unwrap_or(9))?)?;
    let spec = GridSpec {
        window_sizes: a.windows.clone(),
        learning_rates: a.lrs.clone(),
        dropout_rates: a.dropouts.clone(),
        mask_sizes: a.mask_sizes.clone(),
        epochs: a.epochs,
        train_subsample: Subsample {
            count: a.train_subsample,
            seed: a.subsample_seed,
        },
        val_subsample: Subsample {
            count: a.val_subsample,
            seed: a.subsample_seed,
        },
        rel_tol: a.rel_tol,
        narrow_steps: a.narrow_steps,
        sampling: a.sampling.parse()?,
        base,
    };
    rec.seed("model", spec.base.seed);
    rec.seed("subsample", a.subsample_seed);
    rec.cnn_defaults();
    let data = GridData {
        train: &train,
        validation: &val,
    };
    let report = selection::run_grid_with(&spec, &data, Some(&a.out), |k, recs| {
        let best = recs
            .iter()
            .map(|r| r.val_mae)
            .fold(f64::INFINITY, f64::min);
        println!(
            "cell w={} lr={:e} dropout={} mask={}: best val MAE {best:.6}",
            k.window, k.learning_rate, k.dropout, k.mask_size
        );
    })?;
    for w in &report.windows {
        for b in &w.best_per_mask {
            println!(
                "window {} mask {}: val MAE {:.6} (lr {:e}, dropout {}, epoch {})",
                w.window, b.cell.mask_size, b.val_mae, b.cell.learning_rate, b.cell.dropout, b.epoch
            );
        }
    }
    let best = selection::select_best(&report)?;
    println!(
        "best: window {} lr {:e} dropout {} mask {} epoch {} val MAE {:.6}",
        best.cell.window,
        best.cell.learning_rate,
        best.cell.dropout,
        best.cell.mask_size,
        best.epoch,
        best.val_mae
    );
    rec.output(a.out.join(selection::REPORT_FILE));
    if !a.no_retrain {
        let model = selection::retrain_final(&spec, &best, &train)?;
        let path = a.out.join("final.wopm");
        model.save(&path)?;
        rec.output(&path);
        println!("final model -> {}", path.display());
    }
    Ok(rec)
}

fn apply(a: &ApplyArgs, threads: Option<usize>) -> Result<Recorder> {
    let mut rec = Recorder::new("apply", snapshot(a), threads);
    let mode: ApplyMode = a.mode.parse()?;
    let model = AnyModel::load(&a.model)?;
    rec.input(&a.model);
    let func = LocalFunction::new(model.window(), Arc::new(model))?;
    let inputs: Vec<PathBuf> = match (&a.corpus, &a.split) {
        (Some(dir), Some(split)) => {
            if !a.inputs.is_empty() {
                return Err(Error::InvalidArgument(
                    "give either --corpus/--split or input files, not both".into(),
                ));
            }
            let corpus = Corpus::load(dir)?;
            let split = parse_split(split)?;
            corpus
                .manifest
                .images
                .iter()
                .filter(|e| e.split == split)
                .map(|e| dir.join(&e.input))
                .collect()
        }
        _ => a.inputs.clone(),
    };
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no input images".into()));
    }
    create_dir(&a.out)?;
    for p in &inputs {
        let img = pbm::read_image(p)?;
        let out = wop::apply(&func, &img, mode)?;
        let name = p
            .file_name()
            .ok_or_else(|| Error::InvalidArgument(format!("{}: not a file", p.display())))?;
        let dest = a.out.join(name);
        pbm::write_image(&out, &dest)?;
        rec.input(p);
        rec.output(&dest);
    }
    println!("applied to {} images -> {}", inputs.len(), a.out.display());
    Ok(rec)
}

fn eval(a: &EvalArgs, threads: Option<usize>) -> Result<Recorder> {
    let mut rec = Recorder::new("eval", snapshot(a), threads);
    // (id, input, predicted, expected)
    let mut triples: Vec<(String, PathBuf, PathBuf, PathBuf)> = Vec::new();
    if let (Some(dir), Some(split)) = (&a.corpus, &a.split) {
        let pred_dir = a.predicted_dir.as_ref().ok_or_else(|| {
            Error::InvalidArgument("--corpus needs --predicted-dir".into())
        })?;
        let corpus = Corpus::load(dir)?;
        let split = parse_split(split)?;
        for e in corpus.manifest.images.iter().filter(|e| e.split == split) {
            let name = e.input.file_name().expect("manifest file name");
            triples.push((e.id.clone(), dir.join(&e.input), pred_dir.join(name), dir.join(&e.output)));
        }
    }
    if a.input.len() != a.predicted.len() || a.input.len() != a.expected.len() {
        return Err(Error::InvalidArgument(
            "--input, --predicted and --expected must be given the same number of times".into(),
        ));
    }
    for ((i, p), e) in a.input.iter().zip(&a.predicted).zip(&a.expected) {
        let id = i
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        triples.push((id, i.clone(), p.clone(), e.clone()));
    }
    if triples.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let mut rows: Vec<(String, EvalResult)> = Vec::with_capacity(triples.len());
    for (id, i, p, e) in &triples {
        let r = staff_eval(&pbm::read_image(i)?, &pbm::read_image(p)?, &pbm::read_image(e)?)?;
        for f in [i, p, e] {
            rec.input(f);
        }
        rows.push((id.clone(), r));
    }
    match &a.out {
        Some(path) => {
            let f = fs::File::create(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            write_csv(std::io::BufWriter::new(f), &rows)?;
            rec.output(path);
            let (pooled, _) = wop::metrics::aggregate(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
            println!(
                "accuracy {:.4} specificity {:.4} recall {:.4} over {} pixels -> {}",
                pooled.accuracy,
                pooled.specificity,
                pooled.recall,
                pooled.pixels_evaluated,
                path.display()
            );
        }
        None => write_csv(std::io::stdout().lock(), &rows)?,
    }
    Ok(rec)
}
