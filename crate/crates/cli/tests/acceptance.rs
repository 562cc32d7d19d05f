//! Acceptance checks. Prints one PASS/FAIL line per criterion. The exit
//! status reflects failures only when `NFMPPI_ACCEPTANCE_STRICT` is set.
//!
//! `NFMPPI_ACCEPTANCE=4,7` restricts the run to the listed criteria.
//! Trained flow models are cached under the cargo target tmp dir.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use nfmppi::costs::CostWeights;
use nfmppi::dynamics::{rollout, InputTrajectory};
use nfmppi::flow::{ElementwiseAffine, FlowModel, Layer, LowerLinear};
use nfmppi::harness::{self, BenchmarkReport, BenchmarkRequest, Config};
use nfmppi::mppi::{plan_step, score_samples, step_context, PlannerConfig};
use nfmppi::rng::{rng_from_seed, StreamSeed};
use nfmppi::sampling::{Sampler, SamplerConfig, SamplerKind};
use nfmppi::scenario::{save_scenario, Scenario};
use nfmppi::stats::{ks_two_sample, pearson};
use nfmppi::trainingdata::{generate_a2df, generate_a2df_traced, trajectory_sums, HeuristicParams, Provenance};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn work_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("create acceptance dir");
    dir
}

fn flow_dir(cfg: &Config) -> PathBuf {
    let dir = work_dir().join(format!("flows-{}", cfg.digest()));
    std::fs::create_dir_all(&dir).expect("create flow dir");
    dir
}

fn random_flow(dim: usize, layers: usize, hidden: usize, scale: f64, seed: u64) -> FlowModel {
    let mut rng = rng_from_seed(seed);
    let mut m = FlowModel::new(dim, layers, hidden, &mut rng).unwrap();
    m.layers_mut().insert(1, Layer::Linear(LowerLinear::identity(dim)));
    m.layers_mut().push(Layer::Affine(ElementwiseAffine::identity(dim)));
    for s in m.params_mut() {
        for v in s.iter_mut() {
            *v += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        let piv = a[c][c];
        acc += piv.abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / piv;
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    acc
}

fn criterion_4() -> Outcome {
    // round trip on the production shape
    let m = random_flow(80, 16, 128, 0.02, 1);
    let z = Array2::from_shape_simple_fn((1000, 80), {
        let mut rng = rng_from_seed(2);
        move || rng.sample::<f64, _>(StandardNormal)
    });
    let (x, ld_f) = m.forward_batch(&z).unwrap();
    let (back, ld_i) = m.inverse_batch(&x).unwrap();
    let round = (&back - &z).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let ld_sym = (&ld_f + &ld_i).iter().fold(0.0f64, |a, v| a.max(v.abs()));

    // log-det against a finite-difference Jacobian
    let mut ld_err = 0.0f64;
    for dim in [2usize, 4, 6] {
        let m = random_flow(dim, 6, 16, 0.3, 10 + dim as u64);
        for trial in 0..5 {
            let mut rng = rng_from_seed(100 * dim as u64 + trial);
            let z: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let (_, ld) = m.forward(&z).unwrap();
            let h = 1e-5;
            let mut jac = vec![vec![0.0; dim]; dim];
            for j in 0..dim {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += h;
                zm[j] -= h;
                let (xp, _) = m.forward(&zp).unwrap();
                let (xm, _) = m.forward(&zm).unwrap();
                for i in 0..dim {
                    jac[i][j] = (xp[i] - xm[i]) / (2.0 * h);
                }
            }
            let fd = log_abs_det(jac);
            ld_err = ld_err.max((ld - fd).abs() / ld.abs().max(fd.abs()).max(1.0));
        }
    }

    // parameter gradients of the mean NLL against central differences
    let m = random_flow(6, 4, 8, 0.3, 31);
    let mut rng = rng_from_seed(32);
    let data = Array2::from_shape_simple_fn((9, 6), || 1.2 * rng.sample::<f64, _>(StandardNormal) + 0.3);
    let (_, grad) = m.nll_and_grad(&data).unwrap();
    let analytic: Vec<f64> = grad.params().into_iter().flatten().copied().collect();
    let mut probe = m.clone();
    let mut grad_err = 0.0f64;
    let mut idx = 0;
    for s in 0..probe.params().len() {
        for k in 0..probe.params()[s].len() {
            let h = 1e-5;
            let orig = probe.params()[s][k];
            probe.params_mut()[s][k] = orig + h;
            let fp = probe.mean_nll(&data).unwrap();
            probe.params_mut()[s][k] = orig - h;
            let fm = probe.mean_nll(&data).unwrap();
            probe.params_mut()[s][k] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic[idx];
            grad_err = grad_err.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
            idx += 1;
        }
    }

    // density of a 2-d model integrates to one
    let m = random_flow(2, 4, 32, 0.25, 21);
    let (lo, hi, steps) = (-40.0, 40.0, 800usize);
    let h = (hi - lo) / steps as f64;
    let grid = Array2::from_shape_fn((steps * steps, 2), |(r, c)| {
        let k = if c == 0 { r / steps } else { r % steps };
        lo + (k as f64 + 0.5) * h
    });
    let mass: f64 = m.log_prob_batch(&grid).unwrap().mapv(f64::exp).sum() * h * h;

    let pass = round < 1e-6 && ld_err < 1e-4 && grad_err < 1e-4 && (mass - 1.0).abs() < 0.01;
    check(
        pass,
        format!(
            "round trip max err {round:.2e} (log-det sym {ld_sym:.1e}); log-det rel err {ld_err:.2e}; \
             gradient rel err {grad_err:.2e} over {idx} params; density mass {mass:.5}"
        ),
    )
}

fn criterion_5(cfg: &Config) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for channel in 1..=2u8 {
        let t = harness::cmd_train_flow(cfg, Provenance::A2df, channel, None).unwrap();
        let init = t.curve.initial_test().unwrap();
        let best = t.curve.best_test().unwrap();
        let eps = cfg.flows.a2df.eps_draw[channel as usize - 1];
        let h = HeuristicParams::single(eps, cfg.flows.a2df.eps_switch);
        // fresh data from the same generator at the training batch size
        let held: Vec<Array2<f64>> = (0..3)
            .map(|k| generate_a2df(400, cfg.planner.horizon, &h, cfg.planner.model.dt, 9_000 + k + 10 * channel as u64).unwrap().rows)
            .collect();
        let views: Vec<_> = held.iter().map(|m| m.view()).collect();
        let held = concatenate(Axis(0), &views).unwrap();
        let samples = t.model.sample(1000, &mut rng_from_seed(77 + channel as u64));
        let ks = ks_two_sample(
            trajectory_sums(&samples).as_slice().unwrap(),
            trajectory_sums(&held).as_slice().unwrap(),
        );
        ok &= best < init && ks.p_value > 0.01;
        parts.push(format!(
            "u{channel}: test NLL {init:.3} -> {best:.3} (step {}), KS D={:.4} p={:.3} vs {} held-out rows",
            t.best_step,
            ks.statistic,
            ks.p_value,
            held.nrows()
        ));
    }
    check(ok, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, eps) in [("u1", 0.03), ("u2", 0.9)] {
        let h = HeuristicParams::single(eps, 220.0);
        let (mut x, mut y) = (Vec::with_capacity(100_000), Vec::with_capacity(100_000));
        for batch in 0..250u64 {
            let t = generate_a2df_traced(400, 80, &h, 0.1, 500 + batch).unwrap();
            let s1 = trajectory_sums(&t.group1_sorted);
            let s2 = trajectory_sums(&t.group2_sorted);
            for &(b1, b2) in &t.pairs {
                x.push(s1[b1 - 1]);
                y.push(s2[b2 - 1]);
            }
        }
        let r = pearson(&x, &y);
        ok &= r < -0.2;
        parts.push(format!("{name}: r={r:.4} over {} pairings", x.len()));
    }
    check(ok, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let scenario = Scenario::builtin("static:1").unwrap();
    let base = PlannerConfig::default();
    let mut x0 = scenario.x0();
    x0.v = 4.0;
    let ctx = step_context(&scenario, &x0, 0.0, &base).unwrap();
    let u_bar = InputTrajectory::from_channels(
        (0..80).map(|i| 0.05 * (i as f64 * 0.1).sin()).collect(),
        (0..80).map(|i| 0.5 - 0.01 * i as f64).collect(),
    )
    .unwrap();
    let bg = Sampler::new(SamplerConfig::new(SamplerKind::Bg, [0.1, 2.0], 0.1), None).unwrap();
    let seed = StreamSeed::new(42, 3);
    let noises = bg.sample(80, base.samples, &seed).unwrap();

    // lambda -> 0+
    let costs = score_samples(&x0, &u_bar, &noises, &base.model, &ctx);
    let best = (0..costs.len()).min_by(|&a, &b| costs[a].total_cmp(&costs[b])).unwrap();
    let expect = u_bar.add(&noises[best]);
    let mut argmin_err = 0.0f64;
    for lambda in [1e-6, 1e-9] {
        let cfg = PlannerConfig { lambda, ..base };
        let r = plan_step(&x0, &u_bar, &cfg, &bg, &ctx, &seed).unwrap();
        for c in 0..2 {
            for i in 0..80 {
                argmin_err = argmin_err.max((r.u_star.channels[c][i] - expect.channels[c][i]).abs());
            }
        }
    }

    // equal costs: all weights zero
    let mut flat = ctx.clone();
    flat.weights = CostWeights { alpha: [0.0; 5] };
    let r = plan_step(&x0, &u_bar, &base, &bg, &flat, &seed).unwrap();
    let mut mean_exact = true;
    for c in 0..2 {
        for i in 0..80 {
            let mut acc = 0.0;
            for v in &noises {
                acc += v.channels[c][i];
            }
            mean_exact &= r.u_star.channels[c][i] == u_bar.channels[c][i] + acc / noises.len() as f64;
        }
    }

    // K = 1 with zero noise
    let zero = Sampler::new(SamplerConfig::new(SamplerKind::Bg, [0.0; 2], 0.1), None).unwrap();
    let cfg = PlannerConfig { samples: 1, ..base };
    let r = plan_step(&x0, &u_bar, &cfg, &zero, &ctx, &seed).unwrap();
    let k1_exact = r.u_star == u_bar && r.x_star == rollout(&x0, &u_bar, 80, &base.model).unwrap();

    check(
        argmin_err < 1e-6 && mean_exact && k1_exact,
        format!("argmin max err {argmin_err:.1e}; uniform average exact: {mean_exact}; K=1 returns U_bar exactly: {k1_exact}"),
    )
}

fn print_report(rep: &BenchmarkReport) {
    println!("    {:<10} {:<8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8} {:>7} {:>5}", "scenario", "sampler", "c1", "c2", "c3", "c4", "c5", "S", "vs BG", "min de", "done");
    for r in &rep.rows {
        println!(
            "    {:<10} {:<8} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>8} {:>7.3} {:>2}/{:<2}",
            r.scenario,
            r.sampler.name(),
            r.c[0],
            r.c[1],
            r.c[2],
            r.c[3],
            r.c[4],
            r.s,
            r.reduction_vs_bg.map(|v| format!("{:+.1}%", -100.0 * v)).unwrap_or_default(),
            r.min_d_e,
            r.completed,
            r.runs
        );
    }
}

fn benchmark(cfg: &Config, scenario: &str) -> BenchmarkReport {
    let t0 = Instant::now();
    let req = BenchmarkRequest {
        scenarios: vec![scenario.into()],
        samplers: SamplerKind::ALL.to_vec(),
        runs: Some(10),
        master_seed: 2024,
        flow_dir: Some(flow_dir(cfg)),
    };
    let rep = harness::cmd_benchmark(cfg, &req).unwrap();
    let (csv, _) = rep.write(&work_dir().join(scenario.replace(':', "-"))).unwrap();
    println!("  {scenario} benchmark ({:.0} s, report {}):", t0.elapsed().as_secs_f64(), csv.display());
    print_report(&rep);
    rep
}

fn non_bg() -> [SamplerKind; 4] {
    [SamplerKind::Il, SamplerKind::TwoDf, SamplerKind::NfA2df, SamplerKind::NfAil]
}

fn criterion_1(rep: &BenchmarkReport) -> Outcome {
    let sc = "static:1";
    let mut ok = rep.rows.iter().all(|r| r.completed == r.runs);
    let mut parts = Vec::new();
    for k in non_bg() {
        let red = rep.row(sc, k).and_then(|r| r.reduction_vs_bg).unwrap_or(f64::NAN);
        ok &= red >= 0.15;
        parts.push(format!("{} {:.1}%", k.name(), 100.0 * red));
    }
    let best = rep.rows.iter().filter(|r| r.scenario == sc).min_by(|a, b| a.s.total_cmp(&b.s)).unwrap();
    ok &= best.sampler.is_flow();
    check(ok, format!("reductions vs BG: {}; lowest S: {} ({:.2})", parts.join(", "), best.sampler.name(), best.s))
}

fn criterion_2(rep: &BenchmarkReport) -> Outcome {
    let sc = "static:1";
    let bg = rep.row(sc, SamplerKind::Bg).unwrap().c[2];
    let mut ok = true;
    let mut parts = vec![format!("BG c3 {bg:.2}")];
    for k in [SamplerKind::Il, SamplerKind::NfAil] {
        let ratio = rep.row(sc, k).unwrap().c[2] / bg;
        ok &= ratio < 0.05;
        parts.push(format!("{} ratio {:.2}%", k.name(), 100.0 * ratio));
    }
    check(ok, parts.join("; "))
}

fn criterion_3(rep: &BenchmarkReport) -> Outcome {
    let sc = "dynamic:1";
    let mut ok = rep.rows.iter().all(|r| r.completed == r.runs);
    let mut parts = Vec::new();
    for k in non_bg() {
        let red = rep.row(sc, k).and_then(|r| r.reduction_vs_bg).unwrap_or(f64::NAN);
        ok &= red >= 0.10;
        parts.push(format!("{} {:.1}%", k.name(), 100.0 * red));
    }
    let collisions: Vec<String> = rep
        .rows
        .iter()
        .flat_map(|r| r.outcomes.iter().filter(|o| !(o.min_d_e > 0.25)).map(move |o| format!("{} d_e={:.3}", r.sampler.name(), o.min_d_e)))
        .collect();
    ok &= collisions.is_empty();
    let min_de = rep.rows.iter().map(|r| r.min_d_e).fold(f64::INFINITY, f64::min);
    check(
        ok,
        format!(
            "reductions vs BG: {}; smallest realized d_e {min_de:.3}; runs at or below 0.25: {}",
            parts.join(", "),
            if collisions.is_empty() { "none".to_string() } else { collisions.join(", ") }
        ),
    )
}

fn criterion_8(cfg: &Config) -> Outcome {
    let dir = work_dir().join("determinism");
    std::fs::create_dir_all(&dir).unwrap();
    let mut small = cfg.clone();
    small.planner.samples = 40;
    small.benchmark.runs = 2;
    let config = dir.join("config.toml");
    std::fs::write(&config, small.to_toml()).unwrap();
    let mut spec = Scenario::builtin("dynamic:1").unwrap().spec.clone();
    spec.t_end = 3.0;
    spec.name = "dynamic-short".into();
    let scenario = dir.join("scenario.toml");
    save_scenario(&Scenario::from_spec(spec).unwrap(), &scenario).unwrap();
    let flows = flow_dir(&small);
    let run = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let out = dir.join(tag);
        let status = Command::new(env!("CARGO_BIN_EXE_nfmppi"))
            .arg("--config")
            .arg(&config)
            .args(["benchmark", "--scenario"])
            .arg(&scenario)
            .args(["--seed", "7", "--flows"])
            .arg(&flows)
            .arg("--out")
            .arg(&out)
            .output()
            .expect("spawn nfmppi");
        assert!(status.status.success(), "benchmark failed: {}", String::from_utf8_lossy(&status.stderr));
        (
            std::fs::read(out.with_extension("csv")).unwrap(),
            std::fs::read(out.with_extension("json")).unwrap(),
        )
    };
    let a = run("first");
    let b = run("second");
    check(
        a == b,
        format!("two CLI benchmark executions: csv {} bytes, json {} bytes, identical: {}", a.0.len(), a.1.len(), a == b),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("NFMPPI_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().map_or(true, |o| o.contains(&n));
    let cfg = Config::default();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if wanted(n) {
            let t0 = Instant::now();
            let o = f();
            println!("  [{n}] finished in {:.1} s", t0.elapsed().as_secs_f64());
            results.push((n, name, o));
        }
    };

    run(4, "flow correctness suite", &mut criterion_4);
    run(5, "flow learning check", &mut || criterion_5(&cfg));
    run(6, "heuristic pairing anti-correlation", &mut criterion_6);
    run(7, "planner limit oracles", &mut criterion_7);
    if wanted(1) || wanted(2) {
        let rep = benchmark(&cfg, "static:1");
        run(1, "directional sampler ranking, static traffic", &mut || criterion_1(&rep));
        run(2, "smoothness cost collapse", &mut || criterion_2(&rep));
    }
    run(3, "dynamic traffic reduction without collisions", &mut || criterion_3(&benchmark(&cfg, "dynamic:1")));
    run(8, "benchmark determinism", &mut || criterion_8(&cfg));

    results.sort_by_key(|r| r.0);
    println!();
    let mut failed = 0;
    for (n, name, o) in &results {
        failed += usize::from(!o.pass);
        println!("{} criterion {n} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed == 0 {
        return ExitCode::SUCCESS;
    }
    println!("{failed} criterion(s) failed");
    if std::env::var_os("NFMPPI_ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
