use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use spectral_diffusion::diffusion::{ddpm_sample_batch, sample_batch};
use spectral_diffusion::io::{load_idx, load_image_dir, save_pnm, Dataset, RunConfig};
use spectral_diffusion::schedule::{NoiseSchedule, DEFAULT_TERMINAL_EPS};
use spectral_diffusion::spectral::{to_pixel, to_spectral_batch};
use spectral_diffusion::stats::{count_invariant, fit_class_stats, power_law_fit, ClassStats, InvarianceReport};
use spectral_diffusion::training::{loss_history_csv, train_loop, Checkpoint, StatsScope, TrainingSet};
use spectral_diffusion::verify::{run_suite, Suite};
use spectral_diffusion::{Error, PixelField};

use crate::{AnalyzeArgs, Baseline, Failure, Globals, SampleArgs, TrainArgs, VerifyArgs};

type CmdResult = Result<(), Failure>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON value serializes");
    s.push('\n');
    s
}

/// A stats file holds one object or an array of per-class objects.
pub fn read_stats(path: &Path) -> Result<Vec<ClassStats>, Error> {
    let text = read_text(path)?;
    let value: Value = serde_json::from_str(&text)?;
    let entries = match value {
        Value::Array(items) => items,
        other => vec![other],
    };
    if entries.is_empty() {
        return Err(Error::Empty { what: "stats file" });
    }
    entries
        .into_iter()
        .map(|v| ClassStats::from_json(&v.to_string()))
        .collect()
}

fn stats_document(stats: &[ClassStats]) -> Result<String, Error> {
    let mut s = if stats.len() == 1 {
        serde_json::to_string(&stats[0])?
    } else {
        serde_json::to_string(stats)?
    };
    s.push('\n');
    Ok(s)
}

/// `dir/stem-suffix` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("stats");
    path.with_file_name(format!("{stem}-{suffix}"))
}

fn load_data(args: &AnalyzeArgs) -> Result<Dataset, Error> {
    if args.data.is_dir() {
        if args.labels.is_some() || args.pad_to.is_some() {
            return Err(Error::InvalidParameter(
                "--labels and --pad-to apply to IDX input only".into(),
            ));
        }
        load_image_dir(&args.data, args.layout.into())
    } else {
        load_idx(&args.data, args.labels.as_deref(), args.pad_to)
    }
}

pub fn analyze(args: &AnalyzeArgs, g: &Globals) -> CmdResult {
    let data = load_data(args)?;
    g.say(format!("loaded {} images of shape {}", data.len(), data.shape));
    let spectra = to_spectral_batch(&data.images)?;
    let mut pooled = fit_class_stats(&spectra, None)?;
    pooled.padding = data.padding;
    let mut entries = vec![pooled];
    if args.per_class {
        let labels = data
            .labels
            .as_ref()
            .ok_or_else(|| Failure::Usage("--per-class needs labelled data".into()))?;
        for (label, _) in data.by_class() {
            let members = spectra.iter().zip(labels).filter(|(_, l)| **l == label).map(|(s, _)| s);
            let mut st = fit_class_stats(members, Some(data.class_name(label)))?;
            st.padding = data.padding;
            entries.push(st);
        }
    }

    let shape = data.shape;
    let bins = args.bins.unwrap_or(shape.height.min(shape.width) / 2).max(1);
    let k_max = (shape.height.min(shape.width) / 2) as f64;
    let mut invariance = format!("{}\n", InvarianceReport::CSV_HEADER);
    let mut radial = String::from("label,radius,power,std,count\n");
    let mut fits = Vec::new();
    for st in &entries {
        let name = st.label.as_deref().unwrap_or("all");
        let report = count_invariant(st, args.threshold)?;
        invariance.push_str(&report.csv_row());
        invariance.push('\n');
        let power = st.power_profile(bins)?;
        let std = st.std_profile(bins)?;
        for (p, s) in power.bins.iter().zip(&std.bins) {
            radial.push_str(&format!(
                "{name},{:e},{:e},{:e},{}\n",
                p.radius, p.power, s.power, p.count
            ));
        }
        let fit = match power_law_fit(&power, 1.0, k_max) {
            Ok(f) => serde_json::to_value(f).expect("fit serializes"),
            Err(e) => json!({ "error": e.to_string() }),
        };
        g.say(format!(
            "{name}: n={} exact_zero={} near_zero={} of {} exponent={}",
            st.n, report.exact_zero, report.near_zero, report.total, fit["exponent"]
        ));
        fits.push(json!({ "label": name, "fit": fit, "invariance": report }));
    }

    // the per-class file carries only the classes; the pooled entry is in
    // the CSVs either way
    let stats_out: &[ClassStats] = if args.per_class { &entries[1..] } else { &entries };
    write(&args.out, stats_document(stats_out)?)?;
    write(&sibling(&args.out, "invariance.csv"), invariance)?;
    write(&sibling(&args.out, "radial.csv"), radial)?;
    write(&sibling(&args.out, "fit.json"), pretty(&Value::Array(fits)))?;
    let resolved = json!({
        "command": "analyze",
        "data": args.data,
        "labels": args.labels,
        "layout": format!("{:?}", args.layout).to_lowercase(),
        "pad_to": args.pad_to,
        "per_class": args.per_class,
        "threshold": args.threshold,
        "bins": bins,
        "images": data.len(),
        "shape": data.shape,
    });
    write(&sibling(&args.out, "config.json"), pretty(&resolved))?;
    Ok(())
}

pub fn train(args: &TrainArgs, g: &Globals) -> CmdResult {
    let seed = g.require_seed("train")?;
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.resolve_seed(Some(seed));
    cfg.train.validate()?;
    let data = cfg.data.load()?;
    let sched = cfg.schedule.build()?;
    g.say(format!(
        "training on {} images of shape {}, {} iterations",
        data.len(),
        data.shape,
        cfg.train.iterations
    ));
    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    let mut set = TrainingSet::new(data.images.clone(), data.labels.as_deref(), cfg.train.stats_scope)?;
    for s in &mut set.stats {
        if cfg.train.stats_scope == StatsScope::PerClass {
            // numeric label ids become the dataset's class names
            if let Some(id) = s.label.as_deref().and_then(|l| l.parse::<u32>().ok()) {
                s.label = Some(data.class_name(id));
            }
        }
        s.padding = data.padding;
    }

    let out = cfg.output_dir.clone();
    let mut on_ckpt = |c: &Checkpoint| -> Result<(), Error> {
        let path = out.join(format!("checkpoint-{:06}.bin", c.header.iteration));
        write(&path, c.to_bytes())?;
        g.say(format!("wrote {}", path.display()));
        Ok(())
    };
    let outcome = train_loop(&cfg.train, &set, &sched, resume.as_ref(), &mut on_ckpt)?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        g.say(format!("loss {:.6e} -> {:.6e}", first.1, last.1));
    }

    write(&out.join("checkpoint.bin"), outcome.checkpoint(&cfg.train).to_bytes())?;
    write(&out.join("loss.csv"), loss_history_csv(&outcome.history))?;
    write(&out.join("stats.json"), stats_document(&set.stats)?)?;
    write(&out.join("schedule.json"), sched.to_json()? + "\n")?;
    write(&out.join("run.json"), cfg.to_json()? + "\n")?;
    Ok(())
}

fn pick_stats(mut all: Vec<ClassStats>, label: Option<&str>) -> Result<ClassStats, Failure> {
    match label {
        Some(l) => {
            let i = all
                .iter()
                .position(|s| s.label.as_deref() == Some(l))
                .ok_or_else(|| Failure::Usage(format!("no statistics with label {l:?}")))?;
            Ok(all.swap_remove(i))
        }
        None if all.len() == 1 => Ok(all.remove(0)),
        None => Err(Failure::Usage(
            "stats file has several classes; choose one with --label".into(),
        )),
    }
}

fn resolve_schedule(args: &SampleArgs) -> Result<(NoiseSchedule, Value), Error> {
    if let Some(steps) = args.steps {
        let s = NoiseSchedule::cosine(steps, DEFAULT_TERMINAL_EPS)?;
        return Ok((
            s,
            json!({ "kind": "cosine", "steps": steps, "terminal_eps": DEFAULT_TERMINAL_EPS }),
        ));
    }
    let path = match &args.schedule {
        Some(p) => p.clone(),
        None => args.ckpt.with_file_name("schedule.json"),
    };
    if args.schedule.is_none() && !path.exists() {
        let s = spectral_diffusion::verify::default_schedule();
        return Ok((
            s,
            json!({ "kind": "cosine", "steps": 1000, "terminal_eps": DEFAULT_TERMINAL_EPS }),
        ));
    }
    let s = NoiseSchedule::from_json(&read_text(&path)?)?;
    Ok((s, json!({ "file": path })))
}

pub fn sample(args: &SampleArgs, g: &Globals) -> CmdResult {
    let seed = g.require_seed("sample")?;
    if args.n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    if args.trajectory && args.baseline == Baseline::Ddpm {
        return Err(Failure::Usage(
            "--trajectory is only recorded by the spectral sampler".into(),
        ));
    }
    let stats = pick_stats(read_stats(&args.stats)?, args.label.as_deref())?;
    let model = Checkpoint::load(&args.ckpt)?.model()?;
    let arch = model.architecture();
    if arch.shape != stats.shape {
        return Err(Error::ShapeMismatch {
            expected: arch.shape,
            actual: stats.shape,
        }
        .into());
    }
    let (sched, schedule_desc) = resolve_schedule(args)?;
    g.say(format!("sampling {} images over {} steps", args.n, sched.steps()));

    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let ext = if stats.shape.channels == 1 { "pgm" } else { "ppm" };
    let mut files = Vec::new();
    let mut save = |name: String, img: &PixelField| -> Result<(), Error> {
        let path = args.out.join(&name);
        save_pnm(&path, img)?;
        files.push(name);
        Ok(())
    };
    match args.baseline {
        Baseline::Inspect => {
            let outs = sample_batch(&model, &stats, &sched, seed, args.n, args.trajectory)?;
            for (i, o) in outs.iter().enumerate() {
                save(format!("sample-{i:04}.{ext}"), &o.image)?;
                for snap in &o.trajectory {
                    save(
                        format!("trajectory-{i:04}-t{:05}.{ext}", snap.step),
                        &to_pixel(&snap.x)?,
                    )?;
                }
            }
        }
        Baseline::Ddpm => {
            let outs = ddpm_sample_batch(&model, stats.shape, &sched, seed, args.n)?;
            for (i, img) in outs.iter().enumerate() {
                save(format!("sample-{i:04}.{ext}"), img)?;
            }
        }
    }

    let manifest = json!({
        "command": "sample",
        "seed": seed,
        "n": args.n,
        "stats": args.stats,
        "label": stats.label,
        "ckpt": args.ckpt,
        "baseline": format!("{:?}", args.baseline).to_lowercase(),
        "schedule": schedule_desc,
        "steps": sched.steps(),
        "trajectory": args.trajectory,
        "shape": stats.shape,
        "files": files,
    });
    write(&args.out.join("manifest.json"), pretty(&manifest))?;
    Ok(())
}

pub fn verify(args: &VerifyArgs, g: &Globals) -> CmdResult {
    let suite: Suite = args.suite.parse()?;
    let seed = g.seed.unwrap_or(0);
    let reports = run_suite(suite, seed)?;
    let mut lines = String::new();
    for r in &reports {
        lines.push_str(&r.to_json_line());
        lines.push('\n');
    }
    print!("{lines}");
    if let Some(path) = &args.report {
        write(path, &lines)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.check.as_str()).collect();
    if failed.is_empty() {
        g.say(format!("{} checks passed", reports.len()));
        Ok(())
    } else {
        Err(Failure::Check(format!("failed checks: {}", failed.join(", "))))
    }
}
