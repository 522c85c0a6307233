//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line to
//! stderr (uncaptured) and the test fails if any criterion does.
//!
//! Criteria 5 to 7 drive the `stmd` binary with `configs/acceptance.toml`
//! and `configs/smoke.toml` and take roughly half an hour on one core.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use stmd::diffusion::{gaussian, Checkpoint, Condition, FeatureStats, LossWeights, ModelConfig, MotionModel, NoiseSchedule, Target};
use stmd::fusion::FusionKind;
use stmd::metrics::{apd_std, contact, frechet_distance, non_collision, r_score, MetricsReport};
use stmd::motion::{ContactThresholds, MotionClip, Skeleton, Vec3};
use stmd::pipeline::scripts::{scene_spec_for, scripted_motion, COMBOS};
use stmd::pipeline::{AblationRow, Dataset, LoadedModel, Manifest, RunConfig, Split, MANIFEST};
use stmd::scene::{parse_ply, ply_string, synth_scene, Scene, SceneKind, SceneSpec};
use stmd::tensor::gradcheck::check;
use stmd::tensor::Tensor;
use stmd::text::{TextPrompt, Vocabulary};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config_path(name: &str) -> PathBuf {
    root().join("configs").join(name)
}

fn stmd(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_stmd"))
        .args(["--workers", "1"])
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("stmd {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn report(dir: &Path) -> Result<MetricsReport, String> {
    let text = fs::read_to_string(dir.join("report.json")).map_err(|e| e.to_string())?;
    MetricsReport::from_json(&text).map_err(|e| e.to_string())
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

// 1 -----------------------------------------------------------------------

fn tiny_model(kind: FusionKind) -> ModelConfig {
    ModelConfig {
        fusion: kind,
        d_model: 4,
        d_text: 4,
        d_c: 4,
        heads: 1,
        text_layers: 1,
        denoiser_layers: 1,
        k_neighbors: 3,
        global_subset: 4,
        num_joints: 8,
    }
}

fn gradient_suite() -> Check {
    let vocab = Vocabulary::from_lexicon();
    let sk = Skeleton::default_chain();
    let feet = sk.feet().map_err(|e| e.to_string())?;
    let combo = COMBOS[0];
    let spec = scene_spec_for(combo, 1);
    let clip = scripted_motion(combo, &spec, 1, 6, 10)
        .and_then(|m| m.encode(&sk, ContactThresholds::default()))
        .map_err(|e| e.to_string())?;
    let stats = FeatureStats::fit([&clip.features]).map_err(|e| e.to_string())?;
    let target = Target::new(&clip.features, clip.root_init, &stats).map_err(|e| e.to_string())?;
    let schedule = NoiseSchedule::build(10, 1e-3, 0.2).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..10)
        .map(|_| {
            let mut r: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            r.extend((0..3).map(|_| rng.random_range(0.0..1.0)));
            r
        })
        .collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut failures = Vec::new();
    for kind in FusionKind::ALL {
        let config = tiny_model(kind);
        let (model, store) = MotionModel::new(config.clone(), vocab.len(), 3).map_err(|e| e.to_string())?;
        let prompt = TextPrompt::new(&vocab, "a person walks to the pillar on the left").map_err(|e| e.to_string())?;
        let cond = Condition::new(&Tensor::from_rows(&rows), prompt, &config).map_err(|e| e.to_string())?;
        let eps = gaussian(&mut rng, 6, config.d_pose());
        for drop in [false, true] {
            // Every parameter tensor (point encoder, text encoder, fusion,
            // denoiser) is probed through the full weighted loss.
            let r = check(
                &store,
                |t| {
                    model
                        .item_loss(t, &cond, &target, &schedule, 4, &eps, drop, &stats, feet, LossWeights::default())
                        .unwrap()
                        .total
                },
                3,
                5,
            )
            .map_err(|e| e.to_string())?;
            if !r.passes(1e-4) {
                failures.push(format!("{kind} drop={drop}: {:.3e} at {}", r.max_rel_err, r.worst));
            }
            worst = worst.max(r.max_rel_err);
            checked += r.checked;
        }
    }
    ensure(failures.is_empty(), failures.join("; "))?;
    Ok(format!("5 variants, {checked} entries, max rel err {worst:.2e}"))
}

// 2 -----------------------------------------------------------------------

fn diffusion_marginals() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws = 10_000;
    let mut worst_z: f64 = 0.0;
    for cfg in 0..20 {
        let steps = rng.random_range(1..=50);
        let dim = rng.random_range(1..=8);
        let lo = rng.random_range(1e-4..0.05);
        let hi = rng.random_range(lo..0.5);
        let s = NoiseSchedule::build(steps, lo, hi).map_err(|e| e.to_string())?;
        let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = rng.random_range(1..=steps);
        let (mut sum, mut sq) = (vec![0.0; dim], vec![0.0; dim]);
        for _ in 0..draws {
            let mut x = x0.clone();
            for k in 1..=t {
                let (a, b) = (s.alpha(k).sqrt(), s.beta(k).sqrt());
                for v in x.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v = a * *v + b * e;
                }
            }
            for j in 0..dim {
                sum[j] += x[j];
                sq[j] += x[j] * x[j];
            }
        }
        let n = draws as f64;
        let var = 1.0 - s.alpha_bar(t);
        for j in 0..dim {
            let mean = sum[j] / n;
            let emp_var = sq[j] / n - mean * mean;
            let zm = (mean - s.alpha_bar(t).sqrt() * x0[j]).abs() / (var / n).sqrt();
            let zv = (emp_var - var).abs() / (var * (2.0 / (n - 1.0)).sqrt());
            worst_z = worst_z.max(zm).max(zv);
            ensure(zm < 3.0 && zv < 3.0, format!("config {cfg}: T={steps} t={t} z=({zm:.2}, {zv:.2})"))?;
        }

        let xt = gaussian(&mut rng, 3, dim);
        let x0_hat = gaussian(&mut rng, 3, dim);
        let noise = gaussian(&mut rng, 3, dim);
        let out = s.p_sample_step(&xt, &x0_hat, 1, Some(&noise)).map_err(|e| e.to_string())?;
        ensure(out.max_abs_diff(&x0_hat) <= 1e-12, format!("config {cfg}: t=1 step is not x0_hat"))?;
    }
    Ok(format!("20 configs, max z {worst_z:.2}; t=1 returns x0_hat"))
}

// 3 -----------------------------------------------------------------------

fn brute(points: &[Vec3], normals: &[Vec3], q: Vec3) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0);
    for (i, p) in points.iter().enumerate() {
        let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2);
        if d < best.0 {
            best = (d, i);
        }
    }
    let (p, n) = (points[best.1], normals[best.1]);
    (best.0.sqrt(), (q[0] - p[0]) * n[0] + (q[1] - p[1]) * n[1] + (q[2] - p[2]) * n[2])
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tau = 0.05;
    for pair in 0..20 {
        let kind = SceneKind::ALL[pair % SceneKind::ALL.len()];
        let full = synth_scene(&SceneSpec::new(kind, pair as u64)).map_err(|e| e.to_string())?;
        let keep: Vec<usize> = (0..full.map.len()).step_by(full.map.len() / 4000 + 1).collect();
        let scene = Scene {
            map: full.map.subset(&keep),
            frames: full.frames,
        };
        ensure(scene.map.len() <= 5000, "scene too large for the oracle")?;
        let motions: Vec<Vec<Vec<Vec3>>> = (0..3)
            .map(|_| {
                (0..40)
                    .map(|_| {
                        (0..8)
                            .map(|_| {
                                [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-0.3..1.8)]
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut touched = 0;
        for m in &motions {
            let (mut ok, mut n, mut hit) = (0usize, 0usize, false);
            for (f, frame) in m.iter().enumerate() {
                let mut pts = scene.map.points().to_vec();
                let mut nrm = scene.map.normals().to_vec();
                if let Some(c) = scene.frames.get(f) {
                    pts.extend_from_slice(c.points());
                    nrm.extend_from_slice(c.normals());
                }
                for &q in frame {
                    let (d, s) = brute(&pts, &nrm, q);
                    n += 1;
                    ok += (s >= -tau) as usize;
                    hit |= d <= tau;
                }
            }
            let got = non_collision(m, &scene, tau).map_err(|e| e.to_string())?;
            ensure(got == ok as f64 / n as f64, format!("pair {pair} ({kind:?}): non_collision {got}"))?;
            touched += hit as usize;
        }
        let got = contact(&motions, &scene, tau).map_err(|e| e.to_string())?;
        ensure(got == touched as f64 / motions.len() as f64, format!("pair {pair}: contact {got}"))?;
    }

    let mut apd_err: f64 = 0.0;
    for k in 2..=8 {
        let (units, w) = (25, 4);
        let samples: Vec<Vec<Vec<f64>>> = (0..k)
            .map(|_| (0..units).map(|_| (0..w).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
            .collect();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let mut total = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    total += (0..units).map(|u| dist(&samples[i][u], &samples[j][u])).sum::<f64>() / units as f64;
                }
            }
        }
        let want_apd = total / (k * (k - 1)) as f64;
        let mut dev2 = 0.0;
        for s in &samples {
            let mut d = 0.0;
            for u in 0..units {
                let mean: Vec<f64> = (0..w).map(|c| samples.iter().map(|x| x[u][c]).sum::<f64>() / k as f64).collect();
                d += dist(&s[u], &mean);
            }
            dev2 += (d / units as f64).powi(2);
        }
        let want_std = (dev2 / k as f64).sqrt();
        let (apd, std) = apd_std(&samples).map_err(|e| e.to_string())?;
        apd_err = apd_err.max((apd - want_apd).abs()).max((std - want_std).abs());
    }
    ensure(apd_err < 1e-9, format!("APD/std off by {apd_err:e}"))?;

    use nalgebra::{DMatrix, DVector};
    let one = |m: f64, v: f64| (DVector::from_element(1, m), DMatrix::from_element(1, 1, v));
    let cases = [((0.0, 1.0), (0.0, 1.0), 0.0), ((0.0, 1.0), (1.0, 1.0), 1.0), ((0.0, 1.0), (0.0, 4.0), 1.0)];
    for ((m1, v1), (m2, v2), want) in cases {
        let (a, sa) = one(m1, v1);
        let (b, sb) = one(m2, v2);
        let got = frechet_distance(&a, &sa, &b, &sb).map_err(|e| e.to_string())?;
        ensure((got - want).abs() < 1e-6, format!("Fréchet N({m1},{v1}) vs N({m2},{v2}) = {got}, want {want}"))?;
    }
    Ok(format!("20 scene/motion pairs exact; APD/std err {apd_err:.1e}; Fréchet cases 0, 1, 1"))
}

// 4 -----------------------------------------------------------------------

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn r_score_calibration() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 5000;
    let captions: Vec<String> = (0..n).map(|i| format!("caption {i}")).collect();
    let text: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, 32)).collect();
    let oracle = r_score(&text, &text, &captions, 32, 1).map_err(|e| e.to_string())?;
    ensure(oracle == 1.0, format!("oracle embeddings give {oracle}"))?;
    let motion: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, 32)).collect();
    let random = r_score(&motion, &text, &captions, 32, 2).map_err(|e| e.to_string())?;
    ensure((random - 1.0 / 32.0).abs() <= 0.02, format!("random embeddings give {random}"))?;
    Ok(format!("oracle 1.0; random {random:.4} vs 0.03125 over {n} trials"))
}

// 5, 7, 8 ---------------------------------------------------------------------

const SCENE: &str = "data/scenes/rec0000.ply";
const CAPTION: &str = "a person walks to the pillar on the left";

/// gen-data, train, untrained and trained eval, and one sample set, under
/// `dir`. Returns the elapsed seconds of the training and evaluation part.
fn full_run(dir: &Path, with_untrained: bool) -> Result<f64, String> {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let cfg = config_path("acceptance.toml");
    let cfg = cfg.to_str().unwrap();
    let start = Instant::now();
    stmd(&["gen-data", "--config", cfg, "--out", "data"], dir)?;
    stmd(&["train", "--config", cfg, "--data", "data", "--out", "run"], dir)?;
    if with_untrained {
        stmd(&["train", "--config", cfg, "--data", "data", "--out", "run0", "--steps", "0"], dir)?;
        stmd(&["eval", "--config", cfg, "--data", "data", "--checkpoint", "run0/last.stmd", "--out", "eval0"], dir)?;
    }
    stmd(&["eval", "--config", cfg, "--data", "data", "--checkpoint", "run/last.stmd", "--out", "eval"], dir)?;
    let elapsed = start.elapsed().as_secs_f64();
    stmd(
        &[
            "sample", "--config", cfg, "--checkpoint", "run/last.stmd", "--scene", SCENE, "--caption", CAPTION, "--k", "3",
            "--seed", "5", "--out", "samples",
        ],
        dir,
    )?;
    Ok(elapsed)
}

fn eval_total(path: &Path) -> Result<Vec<(u64, f64)>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            let step = cols[0].parse().map_err(|_| format!("bad line {l}"))?;
            let total = cols.last().unwrap().parse().map_err(|_| format!("bad line {l}"))?;
            Ok((step, total))
        })
        .collect()
}

fn end_to_end(dir: &Path) -> Check {
    let secs = full_run(dir, true)?;
    let config = RunConfig::load(&config_path("acceptance.toml")).map_err(|e| e.to_string())?;
    ensure(
        config.data.size == 256 && config.data.frames == 40 && config.schedule.steps == 100,
        "config is not the 256 x 40-frame, T=100 setup",
    )?;
    ensure(config.train.batch == 16 && config.train.steps == 2000, "config is not batch 16 for 2000 steps")?;
    ensure(config.eval.r_pool == 8, "R-score pool must be 8 (chance 0.125)")?;

    let losses = eval_total(&dir.join("run/eval_loss.csv"))?;
    let (first, last) = (losses[0], *losses.last().unwrap());
    ensure(first.0 == 0 && last.0 == 2000, format!("loss log spans {first:?}..{last:?}"))?;
    let drop = 1.0 - last.1 / first.1;
    let (before, after) = (report(&dir.join("eval0"))?, report(&dir.join("eval"))?);
    let line = format!(
        "loss {:.4} -> {:.4} (-{:.1}%), fid {:.3} -> {:.3} (bound {:.3}), r_score {:.3} -> {:.3}, non_collision {:.4} -> {:.4}, {:.0}s",
        first.1,
        last.1,
        100.0 * drop,
        before.fid,
        after.fid,
        0.2 * before.fid,
        before.r_score,
        after.r_score,
        before.non_collision,
        after.non_collision,
        secs
    );
    let ok = drop >= 0.8
        && after.fid < 0.2 * before.fid
        && after.r_score >= 0.4
        && after.non_collision >= before.non_collision
        && secs <= 1800.0;
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn determinism(first: &Path, second: &Path) -> Check {
    full_run(second, false)?;
    let mut files = 0;
    for part in ["data", "run", "eval", "samples"] {
        let (a, b) = (snapshot(&first.join(part)), snapshot(&second.join(part)));
        ensure(a.len() == b.len(), format!("{part}: {} vs {} files", a.len(), b.len()))?;
        for (k, v) in &a {
            ensure(b.get(k) == Some(v), format!("{part}/{k} differs"))?;
        }
        files += a.len();
    }
    Ok(format!("{files} files byte-identical across gen-data, train, eval and sample"))
}

fn round_trips(dir: &Path) -> Check {
    let data = dir.join("data");
    let ds = Dataset::load(&data).map_err(|e| e.to_string())?;
    let mut counts = [0usize; 5];

    for r in ds.records.iter().take(16) {
        let path = data.join("motions").join(format!("{}.json", r.meta.id));
        let bytes = fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let clip = MotionClip::from_json(&bytes).map_err(|e| e.to_string())?;
        ensure(clip.to_json() + "\n" == bytes, format!("{} motion differs", r.meta.id))?;
        let scene = data.join("scenes").join(format!("{}.ply", r.meta.id));
        let text = fs::read_to_string(&scene).map_err(|e| e.to_string())?;
        ensure(ply_string(&parse_ply(&text).map_err(|e| e.to_string())?) == text, format!("{} ply differs", r.meta.id))?;
        counts[0] += 1;
        counts[1] += 1;
    }
    for s in snapshot(&dir.join("samples")).values() {
        let text = String::from_utf8(s.clone()).map_err(|e| e.to_string())?;
        let clip = MotionClip::from_json(&text).map_err(|e| e.to_string())?;
        ensure(clip.to_json() + "\n" == text, "sample differs")?;
        counts[0] += 1;
    }

    let text = fs::read_to_string(data.join(MANIFEST)).map_err(|e| e.to_string())?;
    ensure(Manifest::from_jsonl(&text).map_err(|e| e.to_string())?.to_jsonl() == text, "manifest differs")?;
    counts[2] += 1;

    for e in fs::read_dir(dir.join("run")).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        if p.extension().is_some_and(|x| x == "stmd") {
            let bytes = fs::read(&p).map_err(|e| e.to_string())?;
            let ck = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
            ensure(ck.to_bytes() == bytes, format!("{} differs", p.display()))?;
            counts[3] += 1;
        }
    }

    for d in ["eval", "eval0"] {
        let text = fs::read_to_string(dir.join(d).join("report.json")).map_err(|e| e.to_string())?;
        let r = MetricsReport::from_json(&text).map_err(|e| e.to_string())?;
        ensure(r.to_json() + "\n" == text, format!("{d} report differs"))?;
        counts[4] += 1;
    }
    let [m, p, man, ck, rep] = counts;
    Ok(format!("{m} motions, {p} ply scenes, {man} manifest, {ck} checkpoints, {rep} reports"))
}

// 6 -----------------------------------------------------------------------

fn ablation(dir: &Path) -> Check {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let cfg_path = config_path("smoke.toml");
    let cfg = cfg_path.to_str().unwrap();
    let start = Instant::now();
    stmd(&["gen-data", "--config", cfg, "--out", "smoke"], dir)?;
    stmd(&["ablate", "--config", cfg, "--data", "smoke", "--out", "ablation"], dir)?;
    let secs = start.elapsed().as_secs_f64();

    let text = fs::read_to_string(dir.join("ablation/ablation.json")).map_err(|e| e.to_string())?;
    let rows: Vec<AblationRow> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(
        rows.iter().map(|r| r.variant).collect::<Vec<_>>() == FusionKind::ALL,
        "table does not list the five variants",
    )?;
    for r in &rows {
        let m = &r.metrics;
        let vals = [
            r.train_loss, r.eval_loss, m.non_collision, m.contact, m.apd_t, m.std_t, m.apd_p, m.std_p, m.apd_m, m.std_m,
            m.fid, m.r_score,
        ];
        ensure(vals.iter().all(|v| v.is_finite()) && m.in_range(), format!("{}: non-finite or out of range", r.variant))?;
    }
    let md = fs::read_to_string(dir.join("ablation/ablation.md")).map_err(|e| e.to_string())?;
    ensure(md.lines().count() == 7, "markdown table is incomplete")?;

    // z_c of every trained variant is bitwise stable under point permutation.
    let config = RunConfig::load(&cfg_path).map_err(|e| e.to_string())?;
    let ds = Dataset::load(&dir.join("smoke")).map_err(|e| e.to_string())?;
    let test = ds.split(Split::Test);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (i, kind) in FusionKind::ALL.iter().enumerate() {
        let mut c = config.clone();
        c.model.fusion = *kind;
        let ckpt = Checkpoint::load(&dir.join(format!("ablation/{i}_{kind}/last.stmd"))).map_err(|e| e.to_string())?;
        let m = LoadedModel::from_checkpoint(&c, &ckpt).map_err(|e| e.to_string())?;
        for r in test.iter().take(3) {
            let cloud = r
                .scene
                .encoder_cloud(c.data.n_p, c.data.downsample, 0)
                .map_err(|e| e.to_string())?;
            let feats = cloud.features();
            let z = |rows: &Tensor| -> Result<Tensor, String> {
                let prompt = TextPrompt::new(&m.vocab, &r.meta.captions[0]).map_err(|e| e.to_string())?;
                let cond = Condition::new(rows, prompt, &c.model).map_err(|e| e.to_string())?;
                m.condition_value(&cond).map_err(|e| e.to_string())
            };
            let base = z(&feats)?;
            for _ in 0..3 {
                let mut perm: Vec<usize> = (0..feats.rows()).collect();
                perm.shuffle(&mut rng);
                let shuffled =
                    Tensor::from_rows(&perm.iter().map(|&j| feats.row_slice(j).to_vec()).collect::<Vec<_>>());
                ensure(z(&shuffled)?.data() == base.data(), format!("{kind}: z_c changed under permutation"))?;
            }
        }
    }
    let line = format!("5 variants finite; z_c permutation-stable for all 5; {secs:.0}s");
    if secs <= 1200.0 {
        Ok(line)
    } else {
        Err(line)
    }
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    let smoke = tmp.path().join("smoke");

    type Job<'a> = (&'a str, f64, Box<dyn FnOnce() -> Check + 'a>);
    let jobs: Vec<Job> = vec![
        ("1 gradient suite", 120.0, Box::new(gradient_suite)),
        ("2 diffusion marginals", 60.0, Box::new(diffusion_marginals)),
        ("3 metric oracles", 60.0, Box::new(metric_oracles)),
        ("4 R-score calibration", 30.0, Box::new(r_score_calibration)),
        ("5 end-to-end training", f64::INFINITY, Box::new(|| end_to_end(&first))),
        ("6 ablation harness", f64::INFINITY, Box::new(|| ablation(&smoke))),
        ("7 determinism", f64::INFINITY, Box::new(|| determinism(&first, &second))),
        ("8 format round-trips", f64::INFINITY, Box::new(|| round_trips(&first))),
    ];
    let mut failed = Vec::new();
    for (name, budget, job) in jobs {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(job)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let result = match result {
            Ok(msg) if secs > budget => Err(format!("{msg}; took {secs:.1}s, budget {budget:.0}s")),
            r => r,
        };
        let line = match &result {
            Ok(msg) => format!("criterion {name}: PASS ({secs:.1}s) {msg}"),
            Err(msg) => format!("criterion {name}: FAIL ({secs:.1}s) {msg}"),
        };
        // Written directly so it shows without --nocapture.
        let _ = writeln!(std::io::stderr(), "{line}");
        if result.is_err() {
            failed.push(line);
        }
    }
    assert!(failed.is_empty(), "{}", failed.join("\n"));
}
