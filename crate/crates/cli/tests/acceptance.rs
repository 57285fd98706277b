//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines reach the terminal as they
//! are produced. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p hnext-cli --test acceptance -- 1 4`.

use std::f64::consts::FRAC_PI_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use hnext_core::config::{count_parameters, HeadConfig, HeadKind, NetworkConfig, RunConfig, Variant};
use hnext_core::data::{encode_split, fixed_angles, generate_dataset, load_mnist, Mnist};
use hnext_core::gradcheck::audit_operations;
use hnext_core::grid::{make_circular_mask, rotate_resample, Grid, RealGrid};
use hnext_core::manifest::sha256_hex;
use hnext_core::network::{train, Network};
use hnext_core::pooling::{zernike_basis, zernike_pool};
use hnext_core::scalar::Real;
use hnext_core::verify::{equivariance_report, fixed_angle_table, probe_inputs, random_params};
use hnext_core::{Complex, Split};

const QUARTER_TURNS: [f64; 3] = [90.0, 180.0, 270.0];

type Outcome = Result<String, String>;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> RunConfig {
    RunConfig::load(&workspace().join("configs").join(name)).expect("config loads")
}

fn mnist() -> Mnist {
    load_mnist(&workspace().join("data/mnist")).expect("MNIST under data/mnist")
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Largest quarter-turn phase-law residual over `draws` parameter draws.
fn worst_quarter_turn<T: Real>(cfg: &NetworkConfig, draws: u64, inputs: usize) -> f64 {
    let net = Network::<T>::new(cfg).unwrap();
    let xs = probe_inputs::<T>(inputs, cfg.input_size, 100, true).unwrap();
    (0..draws)
        .map(|seed| {
            let params = random_params(&net, seed).unwrap();
            equivariance_report(&net, &params, &xs, &QUARTER_TURNS).unwrap().max_abs_residual(&QUARTER_TURNS)
        })
        .fold(0.0, f64::max)
}

fn exact_equivariance() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for name in ["desk-up-mask.toml", "desk-baseline.toml", "reference.toml"] {
        let cfg = config(name).network;
        let (draws, inputs) = if name == "reference.toml" { (4, 2) } else { (32, 8) };
        let r64 = worst_quarter_turn::<f64>(&cfg, draws, inputs);
        let r32 = worst_quarter_turn::<f32>(&cfg, draws, inputs);
        ok &= r64 < 1e-8 && r32 < 1e-3;
        lines.push(format!("{name} ({draws} draws x {inputs} inputs) f64 {r64:.2e} f32 {r32:.2e}"));
    }
    ensure(ok, lines.join("; "))
}

fn head_invariance() -> Outcome {
    let base = config("desk-up-mask.toml").network;
    let heads = [
        HeadConfig { kind: HeadKind::Gap, ..Default::default() },
        HeadConfig { kind: HeadKind::Zernike, zernike_degree: 8, ..Default::default() },
        HeadConfig { kind: HeadKind::Msa, ..Default::default() },
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for head in heads {
        let cfg = NetworkConfig { head: head.clone(), ..base.clone() };
        let net = Network::<f64>::new(&cfg).unwrap();
        let xs = probe_inputs::<f64>(4, cfg.input_size, 200, true).unwrap();
        let mut worst = 0.0f64;
        for seed in 0..8 {
            let params = random_params(&net, seed).unwrap();
            for x in &xs {
                let f0 = net.features(&params, x).unwrap();
                for q in 1..4 {
                    let f = net.features(&params, &rotate_resample(x, q as f64 * FRAC_PI_2)).unwrap();
                    worst = f0.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
                }
            }
        }
        ok &= worst < 1e-8;
        lines.push(format!("{:?} {worst:.2e}", head.kind));
    }
    ensure(ok, lines.join("; "))
}

fn gradients() -> Outcome {
    let checks = audit_operations(0).map_err(|e| e.to_string())?;
    let failing: Vec<String> =
        checks.iter().filter(|c| !(c.error < 1e-5)).map(|c| format!("{} {:.2e}", c.op, c.error)).collect();
    let worst = checks.iter().max_by(|a, b| a.error.total_cmp(&b.error)).unwrap();
    if failing.is_empty() {
        Ok(format!("{} gradient checks, worst {} {:.2e}", checks.len(), worst.op, worst.error))
    } else {
        Err(failing.join("; "))
    }
}

fn zernike_oracle() -> Outcome {
    let basis = zernike_basis::<f64>(64, 8).unwrap();
    let inner = |a: &Grid<Complex<f64>>, b: &Grid<Complex<f64>>| -> Complex<f64> {
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x.conj() * y).sum()
    };
    let mut ortho = 0.0f64;
    for (i, a) in basis.grids().iter().enumerate() {
        for b in &basis.grids()[i + 1..] {
            let d = inner(a, a).norm().min(inner(b, b).norm());
            ortho = ortho.max(inner(a, b).norm() / d);
        }
    }

    let disk = make_circular_mask::<f64>(64, 64).unwrap();
    let f = zernike_pool(&[disk], &basis).unwrap();
    let leak = f.values[1..].iter().map(|v| v.abs() / f.values[0].abs()).fold(0.0, f64::max);

    // Smooth shapes well inside the disk, moved by whole pixels.
    let shape = |r0: f64, c0: f64| -> RealGrid<f64> {
        Grid::from_fn(64, 64, |i, j| {
            let (y, x) = (i as f64 - r0, j as f64 - c0);
            (-(x * x + 3.0 * y * y) / 40.0).exp() + 0.6 * (-((x - 6.0).powi(2) + (y + 4.0).powi(2)) / 12.0).exp()
        })
    };
    let mut shift = 0.0f64;
    for (dr, dc) in [(3, -2), (-4, 5), (1, 1)] {
        let a = zernike_pool(&[shape(30.3, 31.6)], &basis).unwrap();
        let b = zernike_pool(&[shape(30.3 + dr as f64, 31.6 + dc as f64)], &basis).unwrap();
        shift = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(shift, f64::max);
    }
    ensure(
        ortho < 5e-2 && leak < 1e-2 && shift < 1e-6,
        format!("off-diagonal {ortho:.2e}, constant-disk leakage {leak:.2e}, translation {shift:.2e}"),
    )
}

fn desk_ablation() -> Outcome {
    let mnist = mnist();
    let splits = generate_dataset(Variant::MnistRotTest, 0, &mnist, false).map_err(|e| e.to_string())?;
    drop(mnist);
    let mut gaps = Vec::new();
    let mut lines = Vec::new();
    let mut flat = None;
    for name in ["desk-baseline.toml", "desk-up.toml", "desk-up-mask.toml"] {
        let cfg = config(name);
        if cfg.train.epochs > 10 || cfg.train.train_subset != 5000 {
            return Err(format!("{name}: desk runs use 5000 samples and at most 10 epochs"));
        }
        let start = Instant::now();
        let net = Network::<f32>::new(&cfg.network).unwrap();
        let (params, records) =
            train(&net, &cfg.train, &splits.train, &splits.valid, |_| {}).map_err(|e| e.to_string())?;
        let last = records.last().unwrap();
        let gap = last.acc_0 - last.acc_45;
        gaps.push((gap, last.acc_0));
        lines.push(format!(
            "{name}: acc@0 {:.4} gap {:.2} pts ({:.0}s)",
            last.acc_0,
            100.0 * gap,
            start.elapsed().as_secs_f64()
        ));
        if name == "desk-up-mask.toml" {
            let upright = splits.valid.head(cfg.train.valid_subset);
            let table = fixed_angle_table(&net, &params, &upright, &fixed_angles(), 256).map_err(|e| e.to_string())?;
            flat = Some(table.spread());
            lines.push(format!("12-angle spread {:.2} pts, OA {:.4}", 100.0 * table.spread(), table.overall_accuracy()));
        }
    }
    let (base, up, um) = (gaps[0].0, gaps[1].0, gaps[2].0);
    let spread = flat.unwrap();
    let ordering = base > up && up > um;
    let mut failed = Vec::new();
    if !ordering {
        failed.push("gap ordering");
    }
    if um > 0.03 {
        failed.push("UP+MASK gap > 3 pts");
    }
    if gaps[2].1 < 0.90 {
        failed.push("UP+MASK acc@0 < 90%");
    }
    if spread >= 0.015 {
        failed.push("12-angle spread >= 1.5 pts");
    }
    let detail = lines.join("; ");
    if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail} -- failed: {}", failed.join(", ")))
    }
}

fn parameter_budget() -> Outcome {
    let n = count_parameters(&config("reference.toml").network).map_err(|e| e.to_string())?;
    ensure((22_400..=33_600).contains(&n), format!("reference config has {n} parameters (28k +- 20%)"))
}

fn dataset_contract() -> Outcome {
    let mnist = mnist();
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    let expected = [
        (Variant::MnistRotTest, [50_000, 10_000, 10_000]),
        (Variant::SwnGcnMnist, [50_000, 10_000, 120_000]),
        (Variant::RotMnist, [10_000, 50_000, 2_000]),
    ];
    let fixed = fixed_angles();
    for (variant, sizes) in expected {
        // Hash one split at a time; the fixed-angle test split alone is ~376 MB.
        let digests = |seed: u64| -> Vec<String> {
            let s = generate_dataset(variant, seed, &mnist, false).unwrap();
            Split::ALL.iter().map(|&sp| sha256_hex(&encode_split(s.get(sp)))).collect()
        };
        let s = generate_dataset(variant, 7, &mnist, false).unwrap();
        let got = [s.train.len(), s.valid.len(), s.test.len()];
        if got != sizes {
            failed.push(format!("{} sizes {got:?}", variant.as_str()));
        }
        match variant {
            Variant::MnistRotTest | Variant::SwnGcnMnist if s.train.angles.iter().any(|&a| a != 0.0) => {
                failed.push(format!("{} train split is rotated", variant.as_str()))
            }
            _ => {}
        }
        if variant == Variant::SwnGcnMnist {
            let mut counts = vec![0usize; fixed.len()];
            for a in &s.test.angles {
                match fixed.iter().position(|f| f == a) {
                    Some(k) => counts[k] += 1,
                    None => failed.push(format!("swn-gcn-mnist test angle {a}")),
                }
            }
            if counts.iter().any(|&c| c != 10_000) {
                failed.push(format!("swn-gcn-mnist per-angle counts {counts:?}"));
            }
        }
        if variant == Variant::RotMnist && s.train.angles.iter().all(|&a| a == 0.0) {
            failed.push("rot-mnist train split is upright".into());
        }
        drop(s);
        let first = digests(7);
        let again = digests(7);
        let other = digests(8);
        if first != again {
            failed.push(format!("{} differs between runs", variant.as_str()));
        }
        if first == other {
            failed.push(format!("{} ignores the seed", variant.as_str()));
        }
        lines.push(format!("{} {:?} sha256(test) {}", variant.as_str(), got, &first[2][..12]));
    }
    let detail = lines.join("; ");
    if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail} -- {}", failed.join(", ")))
    }
}

fn cli_gate() -> Outcome {
    let scratch = tempfile::tempdir().unwrap();
    let run = |name: &str| -> (Option<i32>, String) {
        let out = Command::new(env!("CARGO_BIN_EXE_hnext"))
            .arg("verify")
            .arg("--random-weights")
            .arg("--config")
            .arg(workspace().join("configs").join(name))
            .arg("--data-dir")
            .arg(scratch.path())
            .arg("--out")
            .arg(scratch.path().join(name))
            .output()
            .expect("hnext runs");
        let text = String::from_utf8_lossy(&out.stdout);
        let soft = text.lines().find(|l| l.contains("feature residual")).unwrap_or("").to_string();
        (out.status.code(), soft)
    };
    let (good, good_line) = run("desk-up-mask.toml");
    let (bad, bad_line) = run("broken.toml");
    ensure(
        good == Some(0) && bad == Some(1),
        format!("up-mask exit {good:?} [{good_line}]; broken exit {bad:?} [{bad_line}]"),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "exact rotation equivariance", exact_equivariance),
        (2, "hard invariance of pooling heads", head_invariance),
        (3, "gradient correctness", gradients),
        (4, "zernike oracle", zernike_oracle),
        (5, "desk-scale ablation", desk_ablation),
        (6, "parameter budget", parameter_budget),
        (7, "dataset contract", dataset_contract),
        (8, "verify CLI gate", cli_gate),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id} {name}: {detail} [{secs:.0}s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {id} {name}: {detail} [{secs:.0}s]");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
