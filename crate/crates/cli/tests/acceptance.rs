//! Acceptance suite: one line per criterion, nonzero exit if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use fwd_core::frechet::{frechet_distance_packet, FrechetOptions};
use fwd_core::ingest::{dataset_statistics, default_level, scan, DecodePolicy, DEFAULT_EXTENSIONS};
use fwd_core::perturb::{sweep, PerturbationKind, PerturbationSpec};
use fwd_core::stats::statistics_from_batches;
use fwd_core::wavelet::{wpt_forward_batch, wpt_inverse};
use fwd_core::{build_haar, fwd, FilterBank, Fingerprint, FwdReport, ImageTensor, MomentAccumulator, PreparedReference};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Warn,
    Fail,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn check(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn random_corpus() -> Vec<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xac1);
    let shapes = [(64, 1), (64, 3), (128, 1), (128, 3), (256, 1), (256, 3)];
    (0..200)
        .map(|i| {
            let (side, c) = shapes[i % shapes.len()];
            common::random_image(&mut rng, side, side, c)
        })
        .collect()
}

fn perfect_reconstruction() -> Outcome {
    let start = Instant::now();
    let bank = build_haar();
    let worst = single_threaded(|| {
        random_corpus()
            .iter()
            .map(|img| {
                let level = default_level(img.height(), img.width()).unwrap();
                let packets = wpt_forward_batch(std::slice::from_ref(img), level, &bank).unwrap();
                let back = wpt_inverse(&packets, &bank).unwrap();
                img.data()
                    .iter()
                    .zip(back[0].data())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    });
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-9 && secs < 30.0,
        format!("max abs error {worst:.3e} over 200 images, {secs:.2} s single-threaded"),
    )
}

fn parseval() -> Outcome {
    let bank = build_haar();
    let worst = random_corpus()
        .iter()
        .map(|img| {
            let level = default_level(img.height(), img.width()).unwrap();
            let packets = wpt_forward_batch(std::slice::from_ref(img), level, &bank).unwrap();
            let e_img: f64 = img.data().iter().map(|v| v * v).sum();
            let e_pkt: f64 = packets.coeffs().iter().map(|v| v * v).sum();
            (e_img - e_pkt).abs() / e_img
        })
        .fold(0.0, f64::max);
    check(worst < 1e-9, format!("max relative energy error {worst:.3e}"))
}

/// Principal square root by the Denman-Beavers iteration.
fn denman_beavers(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = m.clone();
    let mut z = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..100 {
        let y_inv = y.clone().try_inverse().unwrap();
        let z_inv = z.clone().try_inverse().unwrap();
        let y_next = (&y + z_inv) * 0.5;
        z = (&z + y_inv) * 0.5;
        let delta = (&y_next - &y).norm() / y_next.norm();
        y = y_next;
        if delta < 1e-15 {
            break;
        }
    }
    y
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn closed_form_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xac3);
    let mut worst_diag = 0.0f64;
    for _ in 0..1000 {
        let d = rng.random_range(1..=16);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..2.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..2.0)).collect();
        let mu_r: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu_g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let diag = |v: &[f64]| {
            let mut m = vec![0.0; d * d];
            for (i, x) in v.iter().enumerate() {
                m[i * d + i] = *x;
            }
            m
        };
        let expected: f64 = mu_r.iter().zip(&mu_g).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            + a.iter().zip(&b).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>();
        let got = frechet_distance_packet((&mu_r, &diag(&a)), (&mu_g, &diag(&b))).unwrap();
        worst_diag = worst_diag.max((got - expected).abs() / expected);
    }
    let mut worst_dense = 0.0f64;
    for _ in 0..200 {
        let d = rng.random_range(1..=8);
        let mut spd = || {
            let f = DMatrix::from_fn(d, d + 4, |_, _| rng.random_range(-1.0..1.0));
            &f * f.transpose() / (d + 4) as f64
        };
        let (r, g) = (spd(), spd());
        let mu_r: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu_g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expected = mu_r.iter().zip(&mu_g).map(|(x, y)| (x - y).powi(2)).sum::<f64>() + r.trace() + g.trace()
            - 2.0 * denman_beavers(&(&r * &g)).trace();
        let got = frechet_distance_packet((&mu_r, &row_major(&r)), (&mu_g, &row_major(&g))).unwrap();
        worst_dense = worst_dense.max((got - expected).abs() / expected);
    }
    check(
        worst_diag < 1e-10 && worst_dense < 1e-8,
        format!("diagonal max rel error {worst_diag:.3e} (1000 pairs), dense max rel error {worst_dense:.3e} (200 pairs)"),
    )
}

fn in_memory_stats(imgs: &[ImageTensor], level: u32, bank: &FilterBank) -> fwd_core::PacketStatistics {
    let (h, w, c) = imgs[0].dims();
    let fp = Fingerprint::new(level, bank.id(), h, w, c);
    statistics_from_batches(fp, imgs.chunks(64).map(|b| wpt_forward_batch(b, level, bank))).unwrap()
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = fwd_cli::run(std::iter::once("fwd").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned() + &String::from_utf8_lossy(&err))
}

fn read_report(path: &Path) -> FwdReport {
    FwdReport::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn self_distance() -> Outcome {
    let bank = build_haar();
    let mut rng = ChaCha8Rng::seed_from_u64(0xac4);
    let noise: Vec<_> = (0..300).map(|_| common::random_image(&mut rng, 16, 16, 3)).collect();
    let gray: Vec<_> = (0..50).map(|_| common::random_image(&mut rng, 128, 128, 1)).collect();
    let corpora = [
        ("noise 16x16x3 L2", in_memory_stats(&noise, 2, &bank)),
        ("noise 128x128x1 L3", in_memory_stats(&gray, 3, &bank)),
        ("photos 64x64x3 L2 N=100", in_memory_stats(&common::photo_tensors(100, 64, 41), 2, &bank)),
        ("photos 32x32x3 L1 N=2", in_memory_stats(&common::photo_tensors(2, 32, 42), 1, &bank)),
    ];
    let mut worst = 0.0f64;
    for (_, stats) in &corpora {
        worst = worst.max(fwd(stats, stats).unwrap().fwd);
    }

    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    common::write_photo_dataset(&a, 150, 64, 43);
    common::write_photo_dataset(&b, 150, 64, 44);
    let (cache, r1, r2, r3) = (
        tmp.path().join("a.fwdstats"),
        tmp.path().join("r1.json"),
        tmp.path().join("r2.json"),
        tmp.path().join("r3.json"),
    );
    assert_eq!(run_cli(&["compute", p(&a), p(&a), "--no-timestamp", "--out", p(&r3)]).0, 0);
    worst = worst.max(read_report(&r3).fwd);
    assert_eq!(run_cli(&["compute", p(&a), p(&b), "--no-timestamp", "--out", p(&r1)]).0, 0);
    assert_eq!(run_cli(&["stats", p(&a), "--out", p(&cache)]).0, 0);
    assert_eq!(run_cli(&["compute", p(&cache), p(&b), "--no-timestamp", "--out", p(&r2)]).0, 0);
    let (direct, cached) = (read_report(&r1), read_report(&r2));
    let gap = (direct.fwd - cached.fwd).abs();
    check(
        worst <= 1e-8 && gap <= 1e-10,
        format!(
            "max self-distance {worst:.3e} over {} corpora, dir-vs-dir {:.6} vs cache-vs-dir gap {gap:.3e}",
            corpora.len() + 1,
            direct.fwd
        ),
    )
}

fn streaming_vs_two_pass() -> Outcome {
    let bank = build_haar();
    let mut worst = 0.0f64;
    for n in [2usize, 10, 1000] {
        let mut rng = ChaCha8Rng::seed_from_u64(0xac5 + n as u64);
        // 8x8x3 at level 1: packets of 4x4x3 = 48 coefficients.
        let imgs: Vec<_> = (0..n).map(|_| common::random_image(&mut rng, 8, 8, 3)).collect();
        let mut acc = MomentAccumulator::new(Fingerprint::new(1, bank.id(), 8, 8, 3));
        for chunk in imgs.chunks(7) {
            acc.accumulate(&wpt_forward_batch(chunk, 1, &bank).unwrap()).unwrap();
        }
        let stats = acc.finalize().unwrap();
        assert_eq!(stats.dim(), 48);
        let all = wpt_forward_batch(&imgs, 1, &bank).unwrap();
        for packet in 0..stats.packets() {
            let d = 48;
            let mut mu = vec![0.0; d];
            for i in 0..n {
                for (m, v) in mu.iter_mut().zip(all.packet(i, packet)) {
                    *m += v / n as f64;
                }
            }
            let mut sigma = vec![0.0; d * d];
            for i in 0..n {
                let x = all.packet(i, packet);
                for a in 0..d {
                    for b in 0..d {
                        sigma[a * d + b] += (x[a] - mu[a]) * (x[b] - mu[b]) / (n - 1) as f64;
                    }
                }
            }
            let num: f64 = stats.sigma(packet).iter().zip(&sigma).map(|(x, y)| (x - y).powi(2)).sum();
            let den: f64 = sigma.iter().map(|v| v * v).sum();
            worst = worst.max((num / den).sqrt());
        }
    }
    check(worst < 1e-9, format!("max relative Frobenius discrepancy {worst:.3e} at N in {{2, 10, 1000}}, D = 48"))
}

fn perturbation_monotonicity() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    common::write_photo_dataset(tmp.path(), 1000, 64, 0xac6);
    let bank = build_haar();
    let manifest = scan(tmp.path(), DEFAULT_EXTENSIONS, DecodePolicy::default()).unwrap();
    let stats = dataset_statistics(&manifest, 2, &bank, 64).unwrap();
    let reference = PreparedReference::new(stats, FrechetOptions::default()).unwrap();
    let run = |kind, grid: &[f64]| {
        let spec = PerturbationSpec::new(kind, grid.to_vec(), 0xac6).unwrap();
        sweep(&reference, &manifest, &spec, 2, &bank, 64).unwrap().fwd_values()
    };
    let blur = run(PerturbationKind::GaussianBlur, &[0.0, 0.5, 1.0, 2.0, 4.0]);
    let noise = run(PerturbationKind::UniformNoise, &[0.0, 0.05, 0.1, 0.2, 0.3]);
    let jpeg = run(PerturbationKind::Jpeg, &[90.0, 50.0, 20.0, 10.0]);
    let secs = start.elapsed().as_secs_f64();
    let rising = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
    let ok = rising(&blur) && rising(&noise) && rising(&jpeg) && blur[0] <= 1e-8 && noise[0] <= 1e-8 && secs < 300.0;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" < ");
    check(
        ok,
        format!(
            "blur [{}], noise [{}], jpeg q90..q10 [{}], zero points {:.1e}/{:.1e}, {secs:.0} s on {} core(s)",
            fmt(&blur),
            fmt(&noise),
            fmt(&jpeg),
            blur[0],
            noise[0],
            rayon::current_num_threads()
        ),
    )
}

/// Images with a random base color, a random linear gradient and pixel noise.
fn synthetic_sample(n: usize, seed: u64) -> Vec<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
            let (gy, gx) = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
            let mut data = Vec::with_capacity(16 * 16 * 3);
            for y in 0..16 {
                for x in 0..16 {
                    for b in base {
                        data.push(b + gy * y as f64 / 16.0 + gx * x as f64 / 16.0 + rng.random_range(-0.1..0.1));
                    }
                }
            }
            ImageTensor::new(data, 16, 16, 3).unwrap()
        })
        .collect()
}

fn sample_size_consistency() -> Outcome {
    let bank = build_haar();
    let median = |n: usize| {
        let mut values: Vec<f64> = (0..5u64)
            .map(|seed| {
                let a = in_memory_stats(&synthetic_sample(n, 1000 + 2 * seed), 2, &bank);
                let b = in_memory_stats(&synthetic_sample(n, 1001 + 2 * seed), 2, &bank);
                fwd(&a, &b).unwrap().fwd
            })
            .collect();
        values.sort_by(f64::total_cmp);
        values[2]
    };
    let (small, large) = (median(200), median(2000));
    check(large < small, format!("median FWD over 5 seeds: N=200 {small:.5}, N=2000 {large:.5}"))
}

fn throughput() -> Outcome {
    const TARGET: f64 = 500.0;
    const REFERENCE_CORES: f64 = 8.0;
    let bank = build_haar();
    let mut rng = ChaCha8Rng::seed_from_u64(0xac8);
    let batch: Vec<_> = (0..64).map(|_| common::random_image(&mut rng, 256, 256, 3)).collect();
    let mut acc = MomentAccumulator::new(Fingerprint::new(4, bank.id(), 256, 256, 3));
    acc.accumulate(&wpt_forward_batch(&batch, 4, &bank).unwrap()).unwrap();
    let rounds = 3;
    let start = Instant::now();
    for _ in 0..rounds {
        acc.accumulate(&wpt_forward_batch(&batch, 4, &bank).unwrap()).unwrap();
    }
    let secs = start.elapsed().as_secs_f64();
    let cores = rayon::current_num_threads() as f64;
    let rate = (rounds * batch.len()) as f64 / secs;
    let projected = rate / cores * REFERENCE_CORES;
    let status = if projected >= TARGET {
        Status::Pass
    } else if projected >= TARGET / 2.0 {
        Status::Warn
    } else {
        Status::Fail
    };
    Outcome {
        status,
        detail: format!(
            "{rate:.0} images/s on {cores} core(s) at level 4, {projected:.0} images/s scaled to 8 cores (target {TARGET})"
        ),
    }
}

fn thread_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    common::write_photo_dataset(&a, 200, 64, 0xac9);
    common::write_photo_dataset(&b, 200, 64, 0xaca);
    let (r1, r8) = (tmp.path().join("t1.json"), tmp.path().join("t8.json"));
    for (threads, out) in [("1", &r1), ("8", &r8)] {
        let (code, log) = run_cli(&["compute", p(&a), p(&b), "--threads", threads, "--no-timestamp", "--out", p(out)]);
        assert_eq!(code, 0, "{log}");
    }
    let (one, eight) = (read_report(&r1), read_report(&r8));
    let worst = one
        .per_packet
        .iter()
        .zip(&eight.per_packet)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let (s1, s8) = (format!("{:.11e}", one.fwd), format!("{:.11e}", eight.fwd));
    check(
        worst <= 1e-10 && s1 == s8,
        format!("per-packet max diff {worst:.3e}, FWD {s1} vs {s8}"),
    )
}

fn sign_convention() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    common::write_photo_dataset(&a, 500, 64, 0xacb);
    common::write_photo_dataset(&b, 500, 64, 0xacc);
    let haar = build_haar();
    let flipped = haar.with_negated_high_pass();
    let value = |bank: &FilterBank| {
        let ma = scan(&a, DEFAULT_EXTENSIONS, DecodePolicy::default()).unwrap();
        let mb = scan(&b, DEFAULT_EXTENSIONS, DecodePolicy::default()).unwrap();
        let sa = dataset_statistics(&ma, 2, bank, 64).unwrap();
        let sb = dataset_statistics(&mb, 2, bank, 64).unwrap();
        fwd(&sa, &sb).unwrap().fwd
    };
    let (plain, negated) = (value(&haar), value(&flipped));
    let diff = (plain - negated).abs();
    check(diff < 1e-9, format!("FWD {plain:.12} vs {negated:.12} with negated high-pass, diff {diff:.3e}"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("perfect reconstruction", perfect_reconstruction),
        ("Parseval energy conservation", parseval),
        ("closed-form Fréchet oracle", closed_form_oracle),
        ("self-distance and cache equivalence", self_distance),
        ("streaming vs two-pass covariance", streaming_vs_two_pass),
        ("perturbation monotonicity", perturbation_monotonicity),
        ("sample-size consistency", sample_size_consistency),
        ("throughput", throughput),
        ("thread-count determinism", thread_determinism),
        ("sign-convention invariance", sign_convention),
    ];
    let mut failures = 0;
    for (i, (name, criterion)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome {
                status: Status::Fail,
                detail: format!("panicked: {message}"),
            }
        });
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Warn => "WARN",
            Status::Fail => {
                failures += 1;
                "FAIL"
            }
        };
        println!("[{tag}] AC{:<2} {name}: {}", i + 1, outcome.detail);
    }
    println!("acceptance: {} of {} criteria passed or warned", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
