//! `hnext {generate|train|eval|verify} --config <path> [--seed N] [--force]
//! [--random-weights] [--out <dir>]`
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or input error.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hnext_core::config::{count_parameters, RunConfig};
use hnext_core::data::{archive_name, generate_dataset, load_mnist, read_split, write_split};
use hnext_core::manifest::{Manifest, MANIFEST_NAME};
use hnext_core::network::{load_checkpoint, save_checkpoint, train, Network, ParamStore, TrainRecord};
use hnext_core::verify::{
    equivariance_report, feature_residual, fixed_angle_table, invariance_gap, probe_inputs, pseudo_labelled, random_params,
    InvarianceReport,
};
use hnext_core::{RotatedDataset, Split};

pub const DATA_DIR_ENV: &str = "HNEXT_DATA_DIR";
pub const CHECKPOINT_NAME: &str = "checkpoint.bin";
pub const METRICS_NAME: &str = "metrics.csv";
pub const EQUIVARIANCE_NAME: &str = "equivariance.csv";
pub const INVARIANCE_NAME: &str = "invariance.csv";
pub const SUMMARY_NAME: &str = "summary.csv";
pub const CONFIG_NAME: &str = "config.toml";

const QUARTER_TURNS: [f64; 3] = [90.0, 180.0, 270.0];
const EVAL_BATCH: usize = 64;

#[derive(Debug, Parser)]
#[command(name = "hnext", version, about = "Rotation invariant harmonic networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the split archives of the configured dataset variant.
    Generate(CommonArgs),
    /// Train on the generated dataset and write a checkpoint.
    Train(CommonArgs),
    /// Accuracy, invariance gap and fixed-angle table of a checkpoint.
    Eval(CommonArgs),
    /// Equivariance and invariance reports with pass/fail gates.
    Verify(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the data seed (generate) or the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
    /// Verify seeded random parameters instead of a checkpoint.
    #[arg(long)]
    pub random_weights: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Default data root when the config names none.
    #[arg(long, env = DATA_DIR_ENV, hide_env_values = true)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    VerificationFailed,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Generate(a) => Session::new(a)?.generate(),
        Command::Train(a) => Session::new(a)?.train(),
        Command::Eval(a) => Session::new(a)?.eval(),
        Command::Verify(a) => Session::new(a)?.verify(),
    }
}

struct Session<'a> {
    args: &'a CommonArgs,
    cfg: RunConfig,
    data_root: PathBuf,
}

impl<'a> Session<'a> {
    fn new(args: &'a CommonArgs) -> Result<Self> {
        let mut cfg = RunConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            cfg.data.seed = seed;
            cfg.train.seed = seed;
        }
        let data_root = cfg
            .paths
            .data_root
            .clone()
            .or_else(|| args.data_dir.clone())
            .unwrap_or_else(|| PathBuf::from("data"));
        Ok(Self { args, cfg, data_root })
    }

    fn dataset_dir(&self) -> PathBuf {
        self.data_root.join(&self.cfg.data.dataset)
    }

    fn out_dir(&self) -> PathBuf {
        self.args.out.clone().or_else(|| self.cfg.paths.out.clone()).unwrap_or_else(|| PathBuf::from("runs"))
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.cfg.paths.checkpoint.clone().unwrap_or_else(|| self.out_dir().join(CHECKPOINT_NAME))
    }

    /// Creates `dir`, refusing to reuse one that already holds a manifest
    /// unless `--force` is given.
    fn prepare(&self, dir: &Path) -> Result<()> {
        if dir.join(MANIFEST_NAME).exists() && !self.args.force {
            bail!("{} already holds outputs; pass --force to overwrite", dir.display());
        }
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
    }

    fn generate(&self) -> Result<Outcome> {
        let out = self.args.out.clone().unwrap_or_else(|| self.dataset_dir());
        let source = self.data_root.join(&self.cfg.data.source);
        let mnist = load_mnist(&source)?;
        let d = &self.cfg.data;
        let splits = generate_dataset(d.variant, d.seed, &mnist, d.swap_rot_mnist_sizes)?;
        self.prepare(&out)?;
        let mut manifest = Manifest::default();
        manifest.meta.insert("variant".into(), d.variant.as_str().into());
        manifest.meta.insert("seed".into(), d.seed.to_string());
        for split in Split::ALL {
            let data = splits.get(split);
            let name = archive_name(split);
            let bytes = write_split(&out.join(&name), data)?;
            manifest.add_bytes(&name, &bytes, Some(data.len() as u64));
            manifest.meta.insert(format!("{split}_samples"), data.len().to_string());
            println!("{split}: {} samples", data.len());
        }
        manifest.write(&out)?;
        println!("wrote {}", out.display());
        Ok(Outcome::Success)
    }

    fn load_split(&self, split: Split) -> Result<RotatedDataset> {
        let dir = self.dataset_dir();
        let manifest = Manifest::read(&dir).with_context(|| format!("no generated dataset in {}", dir.display()))?;
        let name = archive_name(split);
        let path = dir.join(&name);
        let data = read_split(&path)?;
        if manifest.artifacts.get(&name).and_then(|a| a.samples) != Some(data.len() as u64) {
            bail!("{} does not match the manifest in {}", path.display(), dir.display());
        }
        if data.variant != self.cfg.data.variant {
            bail!(
                "{} holds variant '{}' but the config asks for '{}'",
                path.display(),
                data.variant.as_str(),
                self.cfg.data.variant.as_str()
            );
        }
        let n = self.cfg.network.input_size;
        if (data.height, data.width) != (n, n) {
            bail!("{} has {}x{} images, the network expects {n}x{n}", path.display(), data.height, data.width);
        }
        Ok(data)
    }

    fn train(&self) -> Result<Outcome> {
        let train_set = self.load_split(Split::Train)?;
        let valid = self.load_split(Split::Valid)?;
        let out = self.out_dir();
        self.prepare(&out)?;
        let net = Network::<f32>::new(&self.cfg.network)?;
        println!("parameters: {}", count_parameters(&self.cfg.network)?);
        let (params, records) = train(&net, &self.cfg.train, &train_set, &valid, |r| {
            println!(
                "epoch {} loss {:.4} acc@0 {:.4} acc@45 {:.4} ({:.1}s)",
                r.epoch, r.loss, r.acc_0, r.acc_45, r.seconds
            )
        })?;
        let ckpt = out.join(CHECKPOINT_NAME);
        save_checkpoint(&ckpt, &self.cfg.network, &params)?;
        let mut csv = format!("{}\n", TrainRecord::CSV_HEADER);
        for r in &records {
            csv += &r.csv_row();
            csv.push('\n');
        }
        write(&out.join(METRICS_NAME), &csv)?;
        write(&out.join(CONFIG_NAME), &self.cfg.to_toml())?;
        // The metrics file carries wall-clock time and stays out of the manifest.
        let mut manifest = Manifest::default();
        manifest.meta.insert("seed".into(), self.cfg.train.seed.to_string());
        manifest.meta.insert("parameters".into(), count_parameters(&self.cfg.network)?.to_string());
        manifest.add_file(&out, CHECKPOINT_NAME, None)?;
        manifest.add_file(&out, CONFIG_NAME, None)?;
        manifest.write(&out)?;
        println!("wrote {}", ckpt.display());
        Ok(Outcome::Success)
    }

    fn load_model(&self) -> Result<(Network<f64>, ParamStore<f64>)> {
        let path = self.checkpoint_path();
        let (net_cfg, params) = load_checkpoint::<f64>(&path)?;
        if net_cfg != self.cfg.network {
            bail!("{} was trained with a different network config", path.display());
        }
        Ok((Network::new(&net_cfg)?, params))
    }

    fn limit(&self, data: RotatedDataset) -> RotatedDataset {
        data.head(self.cfg.verify.samples)
    }

    /// Samples stored at 0°: the upright part of the test split, else of
    /// the valid split.
    fn upright_reference(&self) -> Result<Option<RotatedDataset>> {
        for split in [Split::Test, Split::Valid] {
            let d = upright(&self.load_split(split)?);
            if !d.is_empty() {
                return Ok(Some(self.limit(d)));
            }
        }
        Ok(None)
    }

    fn eval(&self) -> Result<Outcome> {
        let (net, params) = self.load_model()?;
        let test = self.limit(self.load_split(Split::Test)?);
        let valid = self.limit(upright(&self.load_split(Split::Valid)?));
        let out = self.out_dir();
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let test_acc = hnext_core::network::accuracy(&net, &params, &test, 0.0, EVAL_BATCH)?;
        let mut summary = format!("metric,value\ntest_accuracy,{test_acc}\n");
        println!("test accuracy {test_acc:.4}");
        if !valid.is_empty() {
            let gap = invariance_gap(&net, &params, &valid, EVAL_BATCH)?;
            summary += &format!("invariance_gap,{gap}\n");
            println!("invariance gap {gap:.4}");
        }
        if let Some(reference) = self.upright_reference()? {
            let table = fixed_angle_table(&net, &params, &reference, &self.cfg.verify.table_angles, EVAL_BATCH)?;
            print_table(&table);
            summary += &format!("oa,{}\n", table.overall_accuracy());
            write(&out.join(INVARIANCE_NAME), &table.to_csv())?;
        }
        write(&out.join(SUMMARY_NAME), &summary)?;
        Ok(Outcome::Success)
    }

    fn verify(&self) -> Result<Outcome> {
        let v = &self.cfg.verify;
        let (net, params) = if self.args.random_weights {
            let net = Network::<f64>::new(&self.cfg.network)?;
            let params = random_params(&net, self.cfg.train.seed)?;
            (net, params)
        } else {
            let path = self.checkpoint_path();
            if !path.exists() {
                bail!("checkpoint {} not found (use --random-weights to verify without one)", path.display());
            }
            self.load_model()?
        };
        let n = self.cfg.network.input_size;
        let inputs = probe_inputs::<f64>(v.inputs, n, self.cfg.train.seed, self.cfg.network.mask)?;
        let mut angles = vec![0.0];
        angles.extend(QUARTER_TURNS);
        angles.extend(v.soft_angles.iter().filter(|a| !angles.contains(a)).collect::<Vec<_>>());
        let report = equivariance_report(&net, &params, &inputs, &angles)?;

        // Accuracy table: real labels for a trained model, else the model's own
        // upright predictions on whatever images are at hand.
        let reference = if self.dataset_dir().join(MANIFEST_NAME).exists() {
            self.upright_reference()?
        } else {
            None
        };
        let reference = match (reference, self.args.random_weights) {
            (Some(d), false) => d,
            (Some(d), true) => pseudo_labelled(&net, &params, &d, EVAL_BATCH)?,
            (None, _) => pseudo_labelled(&net, &params, &probe_dataset(&inputs, &self.cfg)?, EVAL_BATCH)?,
        };
        let table = fixed_angle_table(&net, &params, &reference, &v.table_angles, EVAL_BATCH)?;

        let out = self.out_dir();
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        write(&out.join(EQUIVARIANCE_NAME), &report.to_csv())?;
        write(&out.join(INVARIANCE_NAME), &table.to_csv())?;
        let mut manifest = Manifest::default();
        manifest.meta.insert("fingerprint".into(), report.fingerprint.clone());
        manifest.add_file(&out, EQUIVARIANCE_NAME, None)?;
        manifest.add_file(&out, INVARIANCE_NAME, None)?;
        manifest.write(&out)?;

        let mut ok = true;
        let hard = report.max_abs_residual(&QUARTER_TURNS);
        let pass = hard < v.hard_threshold;
        ok &= pass;
        println!("{} quarter-turn residual {hard:.3e} (threshold {:e})", verdict(pass), v.hard_threshold);
        if let Some(limit) = v.soft_threshold {
            let soft = feature_residual(&net, &params, &inputs, &v.soft_angles)?;
            let pass = soft < limit;
            ok &= pass;
            println!("{} invariant feature residual at {:?} deg {soft:.4} (threshold {limit})", verdict(pass), v.soft_angles);
        }
        if let Some(acc0) = table.accuracy_at(0.0) {
            let worst = QUARTER_TURNS
                .iter()
                .filter_map(|&a| table.accuracy_at(a))
                .map(|a| (a - acc0).abs())
                .fold(0.0, f64::max);
            let pass = worst <= 1e-3;
            ok &= pass;
            println!("{} quarter-turn accuracy drift {worst:.4}", verdict(pass));
        }
        print_table(&table);
        Ok(if ok { Outcome::Success } else { Outcome::VerificationFailed })
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn print_table(t: &InvarianceReport) {
    let cells: Vec<String> = t.angles_deg.iter().zip(&t.accuracies).map(|(a, v)| format!("{a}:{v:.4}")).collect();
    println!("accuracy by angle {} OA {:.4}", cells.join(" "), t.overall_accuracy());
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn upright(d: &RotatedDataset) -> RotatedDataset {
    let keep: Vec<usize> = (0..d.len()).filter(|&i| d.angles[i] == 0.0).collect();
    d.select(&keep)
}

fn probe_dataset(inputs: &[hnext_core::RealGrid<f64>], cfg: &RunConfig) -> Result<RotatedDataset> {
    let n = cfg.network.input_size;
    let images = inputs.iter().flat_map(|g| g.as_slice().iter().map(|&v| v as f32)).collect();
    Ok(RotatedDataset::new(
        cfg.data.variant,
        Split::Test,
        cfg.train.seed,
        n,
        n,
        images,
        vec![0; inputs.len()],
        vec![0.0; inputs.len()],
    )?)
}
