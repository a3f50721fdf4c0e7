use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

use eeg_jepa::config::{load_recordings, load_windows, prepare_run_dir, RunConfig, RECORDING_EXT, WINDOWS_EXT};
use eeg_jepa::interpret::{
    attention_rollout, export_embeddings, head_average, project_pca, psd_default, relative_band_power, rollout_heatmap,
    write_matrix_csv, write_pgm, BandPower, BAND_NAMES,
};
use eeg_jepa::probe::{finetune, train_probe, EvalReport, MetricSummary};
use eeg_jepa::signal::{
    import_csv, preprocess, read_windows, sample_clip, synth_generate, write_recording, write_windows, ClipConfig,
    Recording,
};
use eeg_jepa::tensor::Graph;
use eeg_jepa::train::{load_checkpoint, pretrain, StepStats, Trainer};
use eeg_jepa::Error;

#[derive(Parser)]
#[command(name = "eeg-jepa", version, about = "Latent masked-prediction pretraining for EEG clips")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Reuse a non-empty run directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labelled synthetic recordings.
    Synth {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Confine the class signal to the first four channels.
        #[arg(long)]
        focal: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Crop, resample, filter, window and normalize recordings.
    Preprocess {
        /// Folder of recordings (.eegr or .csv) or a single file.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sampling rate of CSV inputs.
        #[arg(long, default_value_t = 200.0)]
        csv_rate: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Self-supervised pretraining.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Attention-probe evaluation on held-out subjects.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train the context encoder together with the head.
        #[arg(long)]
        finetune: bool,
        /// Independent runs with seeds 0..N; mean ± std is reported.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Attention-rollout heatmap for one clip.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Windowed recording (.eegw).
        #[arg(long)]
        clip: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Welch spectra and relative band power.
    Psd {
        /// Folder of recordings (.eegr) or a single file.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean-pooled recording embeddings with a 2-D PCA projection.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Usage problems exit with 2, runtime failures with 1.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {}", one_line(&msg));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            match &e {
                Error::NonFinite {
                    last_checkpoint: Some(p),
                    ..
                } => eprintln!("error: {} (last checkpoint: {})", one_line(&e.to_string()), p.display()),
                _ => eprintln!("error: {}", one_line(&e.to_string())),
            }
            ExitCode::from(1)
        }
    }
}

/// Diagnostics are printed on a single line.
fn one_line(msg: &str) -> String {
    msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ")
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(Failure::from),
        None => Ok(RunConfig::default()),
    }
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> Outcome {
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn write_log(dir: &Path, header: &str, rows: &[String]) -> Outcome {
    let mut f = BufWriter::new(File::create(dir.join("log.csv"))?);
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    f.flush()?;
    Ok(())
}

fn require_exists(path: &Path) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{} does not exist", path.display())))
    }
}

fn run(cli: Cli) -> Outcome {
    let force = cli.force;
    match cli.command {
        Command::Synth {
            n,
            out,
            seed,
            focal,
            config,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.synth.n_recordings = n;
            cfg.synth.seed = seed;
            cfg.synth.focal_channels |= focal;
            prepare_run_dir(&out, force)?;
            let recs = synth_generate(&cfg.synth)?;
            let mut rows = Vec::new();
            for r in &recs {
                write_recording(&out.join(format!("{}.{RECORDING_EXT}", r.id)), r)?;
                rows.push(format!(
                    "{},{},{},{}",
                    r.id,
                    r.label.map_or(String::new(), |l| l.index().to_string()),
                    r.num_channels(),
                    r.num_samples()
                ));
            }
            echo_config(&out, &cfg)?;
            write_log(&out, "id,label,channels,samples", &rows)?;
            println!("wrote {} recordings to {}", recs.len(), out.display());
        }
        Command::Preprocess {
            input,
            out,
            csv_rate,
            config,
        } => {
            require_exists(&input)?;
            let cfg = load_config(config.as_deref())?;
            let recs = read_inputs(&input, csv_rate)?;
            prepare_run_dir(&out, force)?;
            let mut rows = Vec::new();
            for r in &recs {
                let w = preprocess(r, &cfg.preprocess)?;
                write_windows(&out.join(format!("{}.{WINDOWS_EXT}", w.id)), &w)?;
                rows.push(format!("{},{},{},{}", w.id, w.num_windows(), w.channels(), w.width()));
            }
            echo_config(&out, &cfg)?;
            write_log(&out, "id,windows,channels,width", &rows)?;
            println!("preprocessed {} recordings into {}", recs.len(), out.display());
        }
        Command::Pretrain {
            config,
            data,
            out,
            resume,
        } => {
            let mut cfg = RunConfig::load(&config).map_err(Failure::from)?;
            if data.is_some() {
                cfg.data = data;
            }
            if out.is_some() {
                cfg.out = out;
            }
            let data = cfg.data.clone().ok_or_else(|| Failure::Usage("no data folder (set `data` or --data)".into()))?;
            let out = cfg.out.clone().ok_or_else(|| Failure::Usage("no run directory (set `out` or --out)".into()))?;
            require_exists(&data)?;
            let dataset = load_windows(&data)?;
            let mut trainer = match &resume {
                Some(p) => load_checkpoint(p)?,
                None => Trainer::new(cfg.model.clone(), cfg.train.clone())?,
            };
            if resume.is_none() {
                prepare_run_dir(&out, force)?;
            } else {
                fs::create_dir_all(&out)?;
            }
            echo_config(&out, &cfg)?;
            let report = pretrain(&mut trainer, &dataset, Some(&out), |s: &StepStats| {
                if s.step % 10 == 0 {
                    eprintln!("step {} loss {:.4} collapse {:.3} lr {:.2e}", s.step, s.loss, s.collapse, s.lr);
                }
            })?;
            for (e, l) in report.epoch_losses.iter().enumerate() {
                println!("epoch {} loss {l:.5} min collapse {:.3}", e + 1, report.epoch_min_collapse[e]);
            }
            if let Some(p) = report.last_checkpoint {
                println!("checkpoint {}", p.display());
            }
        }
        Command::Probe {
            checkpoint,
            data,
            out,
            finetune: tune,
            seeds,
            config,
        } => {
            require_exists(&checkpoint)?;
            require_exists(&data)?;
            let mut cfg = load_config(config.as_deref())?;
            if seeds == 0 {
                return Err(Failure::Usage("--seeds must be at least 1".into()));
            }
            let trainer = load_checkpoint(&checkpoint)?;
            cfg.model = trainer.model.config.clone();
            let dataset = load_windows(&data)?;
            let mut reports = Vec::new();
            for seed in 0..seeds {
                let mut pc = cfg.probe.clone();
                pc.seed = cfg.probe.seed + seed;
                let outcome = if tune {
                    let mut model = trainer.model.clone();
                    finetune(&mut model, &dataset, &pc)?
                } else {
                    train_probe(&trainer.model, &dataset, &pc)?
                };
                reports.push(outcome.report);
            }
            if let [r] = reports.as_slice() {
                for line in r.lines() {
                    println!("{line}");
                }
            } else {
                for line in MetricSummary::from_reports(&reports)?.lines() {
                    println!("{line}");
                }
            }
            if let Some(out) = out {
                prepare_run_dir(&out, force)?;
                echo_config(&out, &cfg)?;
                let rows: Vec<String> = reports.iter().map(EvalReport::csv_row).collect();
                write_log(&out, EvalReport::CSV_HEADER, &rows)?;
                let text = toml::to_string(&ReportFile { report: reports }).map_err(|e| Failure::Runtime(Error::Contract(e.to_string())))?;
                fs::write(out.join("report.toml"), text)?;
            }
        }
        Command::Rollout {
            checkpoint,
            clip,
            index,
            out,
        } => {
            require_exists(&checkpoint)?;
            require_exists(&clip)?;
            let trainer = load_checkpoint(&checkpoint)?;
            let model = &trainer.model;
            let rec = read_windows(&clip)?;
            let clip_cfg = ClipConfig {
                frames: model.config.frames,
                sampling_rate: trainer.config.sampling_rate,
                num_clips: index + 1,
                tubelet: model.config.tubelet,
            };
            let c = sample_clip(&rec, &clip_cfg, index)?;
            let patches = model.patches(&c.data)?;
            let mut g = Graph::no_grad();
            let enc = model.encode(&mut g, &patches)?;
            let stack = enc.attention.iter().map(head_average).collect::<eeg_jepa::Result<Vec<_>>>()?;
            let rollout = attention_rollout(&stack)?;
            let heat = rollout_heatmap(&rollout, model.grid(), model.config.tubelet)?;
            prepare_run_dir(&out, force)?;
            let mut cfg = RunConfig::default();
            cfg.model = model.config.clone();
            cfg.train = trainer.config.clone();
            echo_config(&out, &cfg)?;
            write_pgm(&heat.upsampled, BufWriter::new(File::create(out.join("heatmap.pgm"))?))?;
            write_matrix_csv(&heat.upsampled, BufWriter::new(File::create(out.join("heatmap.csv"))?))?;
            write_matrix_csv(&heat.cells, BufWriter::new(File::create(out.join("heatmap_cells.csv"))?))?;
            let rows: Vec<String> = heat
                .cells
                .row_iter()
                .enumerate()
                .map(|(i, r)| format!("{i},{}", r.sum() / r.len() as f64))
                .collect();
            write_log(&out, "channel_cell,mean_mass", &rows)?;
            println!("rollout over {} layers, {} tokens -> {}", stack.len(), rollout.nrows(), out.display());
        }
        Command::Psd { input, out } => {
            require_exists(&input)?;
            let recs = load_recordings(&input)?;
            prepare_run_dir(&out, force)?;
            let mut rows = Vec::new();
            for r in &recs {
                let mut per_channel = Vec::new();
                let mut spectra = Vec::new();
                for x in &r.samples {
                    let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                    let s = psd_default(&x, r.sample_rate)?;
                    per_channel.push(relative_band_power(&s));
                    spectra.push(s);
                }
                let freqs = spectra[0].freqs.clone();
                let psd = DMatrix::from_fn(freqs.len(), spectra.len() + 1, |i, j| {
                    if j == 0 {
                        freqs[i]
                    } else {
                        spectra[j - 1].psd[i]
                    }
                });
                let mut f = BufWriter::new(File::create(out.join(format!("{}_psd.csv", r.id)))?);
                writeln!(f, "freq,{}", r.channel_names.join(","))?;
                write_matrix_csv(&psd, &mut f)?;
                let mean = BandPower::mean(&per_channel);
                let vals: Vec<String> = mean.as_array().iter().map(f64::to_string).collect();
                rows.push(format!(
                    "{},{},{}",
                    r.id,
                    r.label.map_or(String::new(), |l| l.index().to_string()),
                    vals.join(",")
                ));
            }
            echo_config(&out, &RunConfig::default())?;
            let header = format!("id,label,{}", BAND_NAMES.join(","));
            fs::write(out.join("band_power.csv"), format!("{header}\n{}\n", rows.join("\n")))?;
            write_log(&out, &header, &rows)?;
            println!("spectra for {} recordings -> {}", recs.len(), out.display());
        }
        Command::ExportEmbeddings { checkpoint, data, out } => {
            require_exists(&checkpoint)?;
            require_exists(&data)?;
            let trainer = load_checkpoint(&checkpoint)?;
            let dataset = load_windows(&data)?;
            let clip = ClipConfig {
                frames: trainer.model.config.frames,
                sampling_rate: trainer.config.sampling_rate,
                num_clips: trainer.config.num_clips,
                tubelet: trainer.model.config.tubelet,
            };
            let table = export_embeddings(&trainer.model, &dataset, &clip)?;
            prepare_run_dir(&out, force)?;
            table.write_csv(BufWriter::new(File::create(out.join("embeddings.csv"))?))?;
            let mut rows = Vec::new();
            if table.ids.len() >= 2 {
                let pca = project_pca(&table.embeddings, 2)?;
                for (i, id) in table.ids.iter().enumerate() {
                    rows.push(format!(
                        "{id},{},{},{}",
                        table.labels[i].map_or(String::new(), |l| l.to_string()),
                        pca.coords[(i, 0)],
                        pca.coords[(i, 1)]
                    ));
                }
                fs::write(out.join("pca.csv"), format!("id,label,pc1,pc2\n{}\n", rows.join("\n")))?;
            }
            let mut cfg = RunConfig::default();
            cfg.model = trainer.model.config.clone();
            cfg.train = trainer.config.clone();
            cfg.data = Some(data);
            echo_config(&out, &cfg)?;
            write_log(&out, "id,label,pc1,pc2", &rows)?;
            println!("{} embeddings of width {} -> {}", table.ids.len(), table.embeddings.ncols(), out.display());
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct ReportFile {
    report: Vec<EvalReport>,
}

/// `.eegr` containers from a folder, else its `.csv` files, or a single file.
fn read_inputs(input: &Path, csv_rate: f64) -> Result<Vec<Recording>, Failure> {
    let is_csv = |p: &Path| p.extension().is_some_and(|e| e == "csv");
    if input.is_file() {
        return Ok(vec![if is_csv(input) {
            import_csv(input, csv_rate)?
        } else {
            load_recordings(input)?.remove(0)
        }]);
    }
    let entries: Vec<PathBuf> = fs::read_dir(input)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    if entries.iter().any(|p| p.extension().is_some_and(|e| e == RECORDING_EXT)) {
        return Ok(load_recordings(input)?);
    }
    let mut csvs: Vec<PathBuf> = entries.into_iter().filter(|p| is_csv(p) && !p.ends_with("log.csv")).collect();
    csvs.sort();
    Ok(csvs.iter().map(|p| import_csv(p, csv_rate)).collect::<eeg_jepa::Result<_>>()?)
}
