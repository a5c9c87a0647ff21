use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use admmnet::admm::{admm_solve_traced, lin_to_db, nmse_linear, AdmmCache, SolverParams, StoppingRule};
use admmnet::bench::{self, Context, ExperimentConfig, ExperimentKind, ReportFormat, ResultTable};
use admmnet::net::{Network, NetInitConfig};
use admmnet::radar::{Dictionary, Setup};
use admmnet::scene::{generate_dataset, Dataset, GenConfig};
use admmnet::train::{train_with_progress, TrainConfig};
use admmnet::{Error, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "admmnet", version, about = "Sparse radar imaging with interference removal")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run ADMM on every sample and write the dataset-mean trace.
    Solve {
        #[arg(long)]
        dataset: PathBuf,
        /// Solver parameters (TOML); defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Radar setup (TOML); the standard setup when omitted.
        #[arg(long)]
        setup: Option<PathBuf>,
        /// `oracle`, `fixed:K` or `residual[:tol]`.
        #[arg(long, default_value = "oracle")]
        stop: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an unfolded network.
    Train {
        #[arg(long)]
        net_init: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        train_cfg: Option<PathBuf>,
        /// Hold out this many trailing samples for validation.
        #[arg(long, default_value_t = 0)]
        val: usize,
        #[arg(long)]
        ckpt_out: PathBuf,
        #[arg(long)]
        history_out: Option<PathBuf>,
    },
    /// Run a trained network on a dataset and write per-sample NMSE.
    Infer {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment; exits nonzero if any configured bound fails.
    Bench {
        /// stages, snr, sir, sparsity-w, sparsity-b, image or time.
        kind: String,
        #[arg(long)]
        config: PathBuf,
        /// `.json` writes JSON, anything else CSV plus a `.meta.json` sidecar.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the dictionary of a setup to disk.
    Dictionary {
        #[arg(long)]
        setup: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_setup(path: Option<&Path>) -> Result<Dictionary> {
    match path {
        Some(p) => Setup::load(p)?.dictionary(),
        None => Ok(Dictionary::standard()),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Gen { config, n, seed, out } => {
            let cfg = GenConfig::load(&config)?;
            let dict = cfg.setup.dictionary()?;
            let data = generate_dataset(&dict, &cfg.scene, n, seed)?;
            data.save(&out)?;
            println!("{} samples, dictionary {}", data.len(), data.dict_hash);
        }
        Cmd::Solve {
            dataset,
            params,
            setup,
            stop,
            out,
        } => {
            let data = Dataset::load(&dataset)?;
            let dict = load_setup(setup.as_deref())?;
            data.check_dictionary(&dict)?;
            let params = match params {
                Some(p) => SolverParams::from_toml(&std::fs::read_to_string(p)?)?,
                None => SolverParams::default(),
            };
            let stop = StoppingRule::parse(&stop)?;
            solve(&dict, &data, &params, &stop, &out)?;
        }
        Cmd::Train {
            net_init,
            dataset,
            train_cfg,
            val,
            ckpt_out,
            history_out,
        } => {
            let init = NetInitConfig::load(&net_init)?;
            let dict = init.setup.dictionary()?;
            let data = Dataset::load(&dataset)?;
            data.check_dictionary(&dict)?;
            let cfg = match train_cfg {
                Some(p) => TrainConfig::from_toml(&std::fs::read_to_string(p)?)?,
                None => TrainConfig::default(),
            };
            let data_hash = data.content_hash();
            let (data, val_set) = if val > 0 {
                let (a, b) = data.split_tail(val);
                (a, Some(b))
            } else {
                (data, None)
            };
            let net = init.build(&dict)?;
            let (mut net, hist) = train_with_progress(net, &data, val_set.as_ref(), &cfg, |r| {
                let val = r.val_nmse_db.map(|v| format!(" val {v:.2} dB")).unwrap_or_default();
                eprintln!("epoch {} loss {:.5}{val} lr {} {:.1}s", r.epoch, r.loss, r.lr, r.seconds);
            })?;
            net.provenance.training = Some(serde_json::json!({
                "config": cfg,
                "dataset_hash": data_hash,
                "n_train": data.len(),
                "n_val": val,
                "selected_epoch": hist.selected_epoch,
            }));
            net.save(&ckpt_out)?;
            if let Some(h) = history_out {
                hist.save_csv(&h)?;
            }
            println!("saved {} (epoch {})", ckpt_out.display(), hist.selected_epoch);
        }
        Cmd::Infer { net, dataset, out } => {
            let net = Network::load(&net)?;
            let data = Dataset::load(&dataset)?;
            if net.provenance.dict_hash != data.dict_hash {
                return Err(Error::Format("network and dataset use different dictionaries".into()));
            }
            let ratios: Vec<f64> = data
                .samples
                .par_iter()
                .map(|s| nmse_linear(net.infer(s.y.view())?.view(), s.x().view()))
                .collect::<Result<_>>()?;
            let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
            writeln!(w, "sample,nmse_db")?;
            for (i, r) in ratios.iter().enumerate() {
                writeln!(w, "{i},{}", lin_to_db(*r))?;
            }
            let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
            println!("nmse {:.3} dB over {} samples", lin_to_db(mean), ratios.len());
        }
        Cmd::Bench { kind, config, out } => {
            let kind = ExperimentKind::parse(&kind)?;
            let cfg = ExperimentConfig::load(&config)?;
            if cfg.kind != kind {
                return Err(Error::Config(format!("config describes {:?}, not {kind:?}", cfg.kind)));
            }
            let dict = cfg.setup.dictionary()?;
            let ctx = Context {
                dict: &dict,
                base_dir: config.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            let format = if out.extension().is_some_and(|e| e == "json") {
                ReportFormat::Json
            } else {
                ReportFormat::Csv
            };
            let table = if kind == ExperimentKind::ImageDemo {
                let demo = bench::image_demo(&cfg, &ctx)?;
                let mut side = out.as_os_str().to_owned();
                side.push(".slices.json");
                std::fs::write(PathBuf::from(side), serde_json::to_vec_pretty(&demo.slices)?)?;
                demo.table
            } else {
                bench::run_experiment(&cfg, &ctx)?
            };
            bench::emit_report(&table, format, &out)?;
            summarize(&table);
            if !table.all_passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Dictionary { setup, out } => {
            let dict = load_setup(setup.as_deref())?;
            dict.export(&out)?;
            println!("{} × {} dictionary {}", dict.n_meas(), dict.n_atoms(), dict.hash());
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Mean trace over the dataset. Samples that stop early hold their final
/// values for the remaining rows.
fn solve(dict: &Dictionary, data: &Dataset, params: &SolverParams, stop: &StoppingRule, out: &Path) -> Result<()> {
    let cache = AdmmCache::two_penalty(dict, params.rho)?;
    let sols: Vec<_> = data
        .samples
        .par_iter()
        .map(|s| admm_solve_traced(&cache, s.y.view(), params, stop, Some(s.x().view())))
        .collect::<Result<_>>()?;
    let longest = sols.iter().map(|s| s.trace.len()).max().unwrap_or(0);
    let n = sols.len().max(1) as f64;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    writeln!(w, "iter,nmse_db,objective")?;
    for k in 0..longest {
        let (mut lin, mut obj) = (0.0, 0.0);
        for s in &sols {
            let row = &s.trace[k.min(s.trace.len() - 1)];
            lin += row.nmse_db.map_or(f64::NAN, |v| 10f64.powf(v / 10.0));
            obj += row.objective.unwrap_or(f64::NAN);
        }
        writeln!(w, "{},{},{}", k + 1, lin_to_db(lin / n), obj / n)?;
    }
    let iters: f64 = sols.iter().map(|s| s.iters as f64).sum::<f64>() / n;
    let converged = sols.iter().filter(|s| s.converged).count();
    let ratios: Vec<f64> = sols
        .iter()
        .zip(&data.samples)
        .map(|(s, d)| nmse_linear(s.x_hat.view(), d.x().view()))
        .collect::<Result<_>>()?;
    let mean = ratios.iter().sum::<f64>() / n;
    println!(
        "nmse {:.3} dB, mean {iters:.1} iterations, {converged}/{} converged",
        lin_to_db(mean),
        sols.len()
    );
    Ok(())
}

fn summarize(table: &ResultTable) {
    for r in &table.rows {
        let nmse = r.nmse_db.map(|v| format!("{v:.2} dB")).unwrap_or_else(|| "-".into());
        let rt = r.runtime_ms.map(|v| format!(" {v:.3} ms")).unwrap_or_default();
        let note = r.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default();
        println!("{:>8} {:<24} {nmse}{rt}{note}", r.sweep, r.method);
    }
    for b in &table.bounds {
        println!("{} {:?}: {}", if b.passed { "PASS" } else { "FAIL" }, b.bound, b.detail);
    }
}
