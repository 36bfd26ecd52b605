//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release -p lgs-core --test acceptance`. The
//! training smoke criteria (7, 8) train a codec and two dynamics models on
//! a freshly generated corpus and take several minutes on one core.
//!
//! Reference values are computed here from closed forms or by direct
//! arithmetic, independently of the library routines under test.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lgs::app::{self, Subcommand};
use lgs::bounds::{det_compounding_bound, simulate_det_rollout, verify_soft_contraction};
use lgs::codec::{codec_loss, encode_dataset, reconstruction_l2re, train_codec, Codec, CodecConfig, CodecData, LatentCache};
use lgs::config::RunConfig;
use lgs::flow::{
    fm_loss_endpoint, fm_loss_velocity, target_velocity, target_velocity_from_bridge, train_flow_forcing,
    window_loss, AblationMode, FlowConfig, FlowModel, KnobPolicy, PhysicsContext,
};
use lgs::metrics::{eval_horizons, EvalData, EvalReport, FlowForecaster};
use lgs::nn::{
    gated_cross_attention, grad_check, GatedCrossAttention, GradCheckConfig, Mlp, ParamLayout, ParamStore, Tape, Var,
};
use lgs::pde::{generate_corpus, load_corpus, SystemSpec};
use lgs::rng;
use lgs::rollout::{integrate_pfode, rollout_ensemble, RolloutConfig};
use rand::Rng;

/// Criteria that cannot hold as stated; they still run and print FAIL but
/// do not fail the suite. See the criterion's detail line for why.
const KNOWN_UNATTAINABLE: &[usize] = &[5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn normal(r: &mut impl Rng, n: usize) -> Vec<f64> {
    rng::standard_normal_vec(r, n)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

// 1 --------------------------------------------------------------------

fn algebraic_identities() -> Outcome {
    let tau = 0.05;
    let mut r = rng::stream(11, &[1]);
    let (mut worst_v, mut worst_l) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let d = r.random_range(1..=32);
        let x0 = normal(&mut r, d);
        let x1 = normal(&mut r, d);
        let x_hat = normal(&mut r, d);
        let t = r.random_range(0.0..=1.0 - tau);
        let x_t: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        // velocity of the straight bridge
        let u = target_velocity(&x0, &x1).unwrap();
        let u_b = target_velocity_from_bridge(&x_t, &x1, t).unwrap();
        let u_ref: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| b - a).collect();
        worst_v = worst_v.max(dist(&u, &u_b)).max(dist(&u, &u_ref));
        // endpoint and velocity forms of the loss with one shared clamp
        let le = fm_loss_endpoint(&x_hat, &x1, t, tau).unwrap();
        let lv = fm_loss_velocity(&x_hat, &x_t, &x1, t, tau).unwrap();
        let gap = (1.0 - t).max(tau);
        let l_ref = x_hat.iter().zip(&x1).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (gap * gap);
        worst_l = worst_l.max((le - lv).abs() / l_ref.max(1.0)).max((le - l_ref).abs() / l_ref.max(1.0));
    }
    outcome(
        worst_v <= 1e-10 && worst_l <= 1e-10,
        format!("10^4 draws: max velocity gap {worst_v:.2e}, max loss gap {worst_l:.2e} (tol 1e-10)"),
    )
}

// 2 --------------------------------------------------------------------

fn gradient_suite() -> Outcome {
    let cfg = GradCheckConfig {
        n_samples: 128,
        ..GradCheckConfig::default()
    };
    let mut lines = Vec::new();
    let mut pass = true;
    let mut record = |name: &str, rep: lgs::nn::GradCheckReport| {
        pass &= rep.passed && rep.n_checked >= 100;
        lines.push(format!("{name} {}/{:.1e}", rep.n_checked, rep.max_rel_err));
    };

    // MLP
    let (mlp, layout) = Mlp::contiguous(&[6, 12, 12, 4]);
    let p = layout.init(3);
    let x = normal(&mut rng::stream(2, &[1]), 6);
    let target = normal(&mut rng::stream(2, &[2]), 4);
    let f = |params: &[f64], g: Option<&mut [f64]>| {
        let mut tape = Tape::new(params);
        let xi = tape.constant(x.clone());
        let y = mlp.forward_tape(&mut tape, xi);
        let t = tape.constant(target.clone());
        let d = tape.sub(y, t);
        let l = tape.sq_norm(d);
        if let Some(g) = g {
            tape.backward(l, &[1.0], g);
        }
        tape.scalar(l)
    };
    record("mlp", grad_check(&f, &p, &cfg));

    // gated cross-attention with an open gate
    let mut layout = ParamLayout::default();
    let gca = GatedCrossAttention::new(&mut layout, "gca", 6);
    let mut p = layout.init(4);
    for (i, v) in p[gca.gate..gca.gate + 6].iter_mut().enumerate() {
        *v = 0.5 - 0.15 * i as f64;
    }
    let mut r = rng::stream(2, &[3]);
    let q: Vec<Vec<f64>> = (0..3).map(|_| normal(&mut r, 6)).collect();
    let kv: Vec<Vec<f64>> = (0..5).map(|_| normal(&mut r, 6)).collect();
    let w: Vec<Vec<f64>> = (0..3).map(|_| normal(&mut r, 6)).collect();
    let f = |params: &[f64], g: Option<&mut [f64]>| {
        let mut tape = Tape::new(params);
        let qv: Vec<Var> = q.iter().map(|v| tape.constant(v.clone())).collect();
        let kvv: Vec<Var> = kv.iter().map(|v| tape.constant(v.clone())).collect();
        let out = gca.forward_tape(&mut tape, &qv, &kvv).unwrap();
        let mut terms = Vec::new();
        for (o, wi) in out.iter().zip(&w) {
            let wv = tape.constant(wi.clone());
            terms.push(tape.dot(*o, wv));
        }
        let all = tape.concat(&terms);
        let l = tape.sum(all);
        if let Some(g) = g {
            tape.backward(l, &[1.0], g);
        }
        tape.scalar(l)
    };
    record("attention", grad_check(&f, &p, &cfg));

    // codec encoder and decoder heads through the full loss
    let codec = Codec::new(CodecConfig {
        grid: 8,
        pool: 2,
        d_latent: 4,
        hidden: 12,
    })
    .unwrap();
    let p = codec.init_params(5);
    let x = normal(&mut rng::stream(2, &[4]), codec.state_len());
    let noise = normal(&mut rng::stream(2, &[5]), 4);
    let f = |params: &[f64], g: Option<&mut [f64]>| codec_loss(&codec, params, &x, 0.1, &noise, g).unwrap().total;
    record("codec", grad_check(&f, &p, &cfg));

    // flow-matching loss composed over a context window
    let model = FlowModel::new(FlowConfig {
        d_latent: 6,
        d_ctx: 6,
        n_ctx: 2,
        patch: 3,
        pyramid_factor: 2,
        hidden: 12,
        context_length: 4,
        tau: 0.05,
        mode: AblationMode::Full,
    })
    .unwrap();
    let mut p = model.init_params(6);
    let g0 = model.gca().gate;
    p[g0..g0 + 6].fill(0.4);
    let mut r = rng::stream(2, &[6]);
    let window: Vec<Vec<f64>> = (0..5).map(|_| normal(&mut r, 6)).collect();
    let f = |params: &[f64], g: Option<&mut [f64]>| {
        window_loss(&model, params, &window, KnobPolicy::Fixed(0.2), &mut rng::stream(9, &[]), g)
            .unwrap()
            .loss
    };
    record("fm_loss", grad_check(&f, &p, &cfg));

    // the regression baseline through the same window
    let base = FlowModel::new(FlowConfig {
        mode: AblationMode::A4Regression,
        ..model.cfg
    })
    .unwrap();
    let p = base.init_params(7);
    let f = |params: &[f64], g: Option<&mut [f64]>| {
        window_loss(&base, params, &window, KnobPolicy::Fixed(0.0), &mut rng::stream(9, &[]), g)
            .unwrap()
            .loss
    };
    record("a4_loss", grad_check(&f, &p, &cfg));

    outcome(pass, format!("checked/max rel err: {} (tol 1e-4)", lines.join(", ")))
}

// 3 --------------------------------------------------------------------

fn contraction_identity() -> Outcome {
    let mut r = rng::stream(13, &[3]);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let d = r.random_range(1..=48);
        let delta: Vec<f64> = normal(&mut r, d).iter().map(|v| v * 3.0).collect();
        let k = r.random_range(0.0..=1.0);
        let z = normal(&mut r, d);
        worst = worst.max(verify_soft_contraction(&delta, k, &z).unwrap());
        // direct arithmetic on an independent base point
        let xs = normal(&mut r, d);
        let a: Vec<f64> = xs.iter().zip(&delta).zip(&z).map(|((x, dl), zz)| (1.0 - k) * (x + dl) + k * zz).collect();
        let b: Vec<f64> = xs.iter().zip(&z).map(|(x, zz)| (1.0 - k) * x + k * zz).collect();
        worst = worst.max((dist(&a, &b) - (1.0 - k) * norm(&delta)).abs());
    }
    outcome(worst <= 1e-12, format!("10^4 draws: max residual {worst:.2e} (tol 1e-12)"))
}

// 4 --------------------------------------------------------------------

fn deterministic_compounding() -> Outcome {
    let (l, b) = (1.2f64, 0.01f64);
    let curve = simulate_det_rollout(l, b, 20, 0).unwrap();
    let bound = det_compounding_bound(l, &[b; 20]).unwrap();
    let mut worst = 0.0f64;
    for (n, p) in curve.points.iter().enumerate() {
        let closed = b * (l.powi(n as i32 + 1) - 1.0) / (l - 1.0);
        worst = worst.max((p.mean_error - closed).abs()).max((bound[n] - closed).abs());
    }
    let d10 = curve.points[9].mean_error;
    outcome(
        worst <= 1e-10 && curve.points.len() == 20 && (d10 - 0.2596).abs() < 5e-5,
        format!("n<=20: max gap to closed form {worst:.2e}; delta_10 = {d10:.6}"),
    )
}

// 5 --------------------------------------------------------------------

fn integrator_convergence() -> Outcome {
    let (tau, eps) = (0.05, 0.05);
    let mut r = rng::stream(15, &[5]);
    let x0 = normal(&mut r, 8);
    let c = normal(&mut r, 8);
    let t_end = 1.0 - eps;

    // constant endpoint predictor against the straight bridge
    let bridge: Vec<f64> = x0.iter().zip(&c).map(|(a, b)| (1.0 - t_end) * a + t_end * b).collect();
    let errs: Vec<f64> = [10, 20, 40]
        .iter()
        .map(|&n| {
            let res = integrate_pfode(|_, _| Ok(c.clone()), &x0, tau, eps, n).unwrap();
            dist(&res.integrated, &bridge)
        })
        .collect();
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
    let pass = ratios.iter().all(|q| (1.6..=2.4).contains(q));

    // informational: a contracting affine predictor has no exact Euler path
    let alpha = 0.5;
    let exact: Vec<f64> = x0
        .iter()
        .zip(&c)
        .map(|(a, b)| b + (a - b) * (1.0 - t_end).powf(1.0 - alpha))
        .collect();
    let aff: Vec<f64> = [10, 20, 40]
        .iter()
        .map(|&n| {
            let g = |x: &[f64], _t: f64| Ok(x.iter().zip(&c).map(|(xi, ci)| ci + alpha * (xi - ci)).collect());
            dist(&integrate_pfode(g, &x0, tau, eps, n).unwrap().integrated, &exact)
        })
        .collect();
    outcome(
        pass,
        format!(
            "constant predictor errors {:.2e}/{:.2e}/{:.2e}, ratios {:.2}/{:.2}: Euler follows the straight bridge exactly, \
             so the error is rounding noise and cannot halve; affine predictor g = c + 0.5 (x - c) for comparison: \
             errors {:.2e}/{:.2e}/{:.2e}, ratios {:.2}/{:.2}",
            errs[0],
            errs[1],
            errs[2],
            ratios[0],
            ratios[1],
            aff[0],
            aff[1],
            aff[2],
            aff[0] / aff[1],
            aff[1] / aff[2]
        ),
    )
}

// 6 --------------------------------------------------------------------

fn gate_identity() -> Outcome {
    let mut exact = true;
    let mut trials = 0;
    for seed in 0..20u64 {
        let model = FlowModel::new(FlowConfig {
            d_latent: 8,
            d_ctx: 6,
            n_ctx: 3,
            patch: 4,
            pyramid_factor: 2,
            hidden: 16,
            context_length: 4,
            tau: 0.05,
            mode: if seed % 2 == 0 { AblationMode::Full } else { AblationMode::A1NoPyramid },
        })
        .unwrap();
        let p = model.init_params(seed);
        let mut r = rng::stream(16, &[seed]);
        let c = PhysicsContext {
            tokens: (0..3).map(|_| normal(&mut r, 6).iter().map(|v| v * 10.0).collect()).collect(),
            step_index: 0,
        };
        let hist: Vec<Vec<f64>> = (0..(seed as usize % 4)).map(|_| normal(&mut r, 8)).collect();
        let x = normal(&mut r, 8);
        let next = model.update_context(&p, &c, &x, &hist).unwrap();
        exact &= next.tokens == c.tokens;
        // the bare block as well
        let mut layout = ParamLayout::default();
        let gca = GatedCrossAttention::new(&mut layout, "g", 6);
        let q: Vec<Vec<f64>> = (0..2).map(|_| normal(&mut r, 6)).collect();
        let kv: Vec<Vec<f64>> = (0..4).map(|_| normal(&mut r, 6)).collect();
        exact &= gated_cross_attention(&layout.init(seed), &gca, &q, &kv).unwrap() == q;
        trials += 1;
    }
    outcome(exact, format!("{trials} random models and inputs: context tokens unchanged bit-for-bit"))
}

// 7, 8 -----------------------------------------------------------------

struct Smoke {
    codec_val: f64,
    flow: EvalReport,
    baseline: EvalReport,
    secs: f64,
    flow_steps: u64,
}

fn smoke(dir: &Path) -> Smoke {
    let t0 = Instant::now();
    let cfg = RunConfig::default();
    let specs: Vec<SystemSpec> = cfg.systems.iter().map(|s| SystemSpec::preset(s, cfg.grid).unwrap()).collect();
    generate_corpus(&specs, cfg.per_system, cfg.n_steps, cfg.seed, dir).unwrap();
    let corpus = load_corpus(dir).unwrap();

    let codec = Codec::new(cfg.codec()).unwrap();
    let data = CodecData::new(&corpus.train, &corpus.norm).unwrap();
    let mut cs = ParamStore::new(codec.init_params(cfg.seed));
    train_codec(&codec, &data, &cfg.codec_train(), &mut cs, |_, _| Ok(())).unwrap();
    let codec_val = reconstruction_l2re(&codec, &cs.params, &corpus.norm, &corpus.val).unwrap();
    eprintln!("  codec trained, val L2RE {codec_val:.4} ({:.0} s)", t0.elapsed().as_secs_f64());

    let train: LatentCache = encode_dataset(&codec, &cs.params, &corpus.norm, &corpus.train).unwrap();
    let test: LatentCache = encode_dataset(&codec, &cs.params, &corpus.norm, &corpus.test).unwrap();
    let eval_data = EvalData {
        trajectories: &corpus.test,
        latents: &test,
        norm: &corpus.norm,
        codec: &codec,
        codec_params: &cs.params,
    };
    let steps: Vec<usize> = (1..=10).collect();
    let run = |mode: AblationMode| {
        let model = FlowModel::new(cfg.flow_with_mode(mode)).unwrap();
        let mut store = ParamStore::new(model.init_params(cfg.seed));
        train_flow_forcing(&model, &train, &cfg.flow_train(), &mut store, |_, _| Ok(())).unwrap();
        let rc = RolloutConfig {
            ensemble_size: 1,
            ..cfg.rollout()
        };
        let fc = FlowForecaster {
            model: &model,
            params: &store.params,
            cfg: rc,
        };
        let rep = eval_horizons(&fc, &eval_data, &steps, cfg.eval_stride).unwrap();
        eprintln!("  {mode} trained and evaluated ({:.0} s)", t0.elapsed().as_secs_f64());
        rep
    };
    let flow = run(AblationMode::Full);
    let baseline = run(AblationMode::A4Regression);
    Smoke {
        codec_val,
        flow,
        baseline,
        secs: t0.elapsed().as_secs_f64(),
        flow_steps: cfg.steps,
    }
}

fn mean_curve(rep: &EvalReport, latent: bool) -> Vec<f64> {
    let n = rep.curves.len() as f64;
    (0..rep.curves[0].decoded.len())
        .map(|s| {
            rep.curves
                .iter()
                .map(|c| if latent { c.latent[s] } else { c.decoded[s] })
                .sum::<f64>()
                / n
        })
        .collect()
}

fn training_smoke(s: &Smoke) -> Outcome {
    let one_step = mean_curve(&s.flow, true)[0];
    let per: Vec<String> = s.flow.curves.iter().map(|c| format!("{} {:.2}%", c.system, 100.0 * c.latent[0])).collect();
    outcome(
        s.codec_val < 0.05 && one_step < 0.15 && s.flow_steps <= 20_000 && s.secs < 7200.0,
        format!(
            "codec val L2RE {:.2}%; full model 1-step latent L2RE {:.2}% ({}) after {} steps; {:.0} s total",
            100.0 * s.codec_val,
            100.0 * one_step,
            per.join(", "),
            s.flow_steps,
            s.secs
        ),
    )
}

fn rollout_stability(s: &Smoke) -> Outcome {
    let flow = mean_curve(&s.flow, false);
    let base = mean_curve(&s.baseline, false);
    let plateau = flow[9] <= 3.0 * flow[4];
    let increasing = base.windows(2).all(|w| w[1] > w[0]);
    let mut wins = 0;
    let mut per = Vec::new();
    for fc in &s.flow.curves {
        let bc = s.baseline.curves.iter().find(|c| c.system == fc.system).unwrap();
        if fc.decoded[9] <= bc.decoded[9] {
            wins += 1;
        }
        per.push(format!("{} {:.2}% vs {:.2}%", fc.system, 100.0 * fc.decoded[9], 100.0 * bc.decoded[9]));
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{:.1}", 100.0 * x)).collect::<Vec<_>>().join(" ");
    outcome(
        plateau && increasing && wins >= 2,
        format!(
            "full delta_5 {:.2}% delta_10 {:.2}% (<= 3x: {plateau}); a4 strictly increasing: {increasing}; \
             step 10 full vs a4: {} ({wins}/3 systems); full curve [{}], a4 curve [{}]",
            100.0 * flow[4],
            100.0 * flow[9],
            per.join(", "),
            fmt(&flow),
            fmt(&base)
        ),
    )
}

// 9 --------------------------------------------------------------------

fn spread_of(members: &[Vec<f64>]) -> f64 {
    let n = members.len() as f64;
    let d = members[0].len();
    (0..d)
        .map(|j| {
            let m = members.iter().map(|x| x[j]).sum::<f64>() / n;
            (members.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .sum::<f64>()
        / d as f64
}

/// Spread and its jackknife standard error over members.
fn spread_with_se(members: &[Vec<f64>]) -> (f64, f64) {
    let n = members.len();
    let full = spread_of(members);
    let loo: Vec<f64> = (0..n)
        .map(|i| {
            let rest: Vec<Vec<f64>> = members.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, m)| m.clone()).collect();
            spread_of(&rest)
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / n as f64;
    let var = (n as f64 - 1.0) / n as f64 * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (full, var.sqrt())
}

fn ensemble_behavior() -> Outcome {
    let cfg = RunConfig::default();
    let model = FlowModel::new(cfg.flow()).unwrap();
    let p = model.init_params(21);
    let mut r = rng::stream(19, &[9]);
    let history: Vec<Vec<f64>> = (0..cfg.context_length).map(|_| normal(&mut r, cfg.d_latent)).collect();
    let rc = |k: f64| RolloutConfig {
        k_infer: k,
        ode_steps: 10,
        epsilon: 0.05,
        horizon: 1,
        seed: 3,
        ensemble_size: 32,
    };
    let l = cfg.context_length;
    let e0 = rollout_ensemble(&model, &p, &history, &rc(0.0), &[0]).unwrap();
    let zero = e0.spread.as_ref().unwrap()[0] == 0.0;
    let mut stats = Vec::new();
    for k in [0.1, 0.2, 0.4] {
        let e = rollout_ensemble(&model, &p, &history, &rc(k), &[0]).unwrap();
        let members: Vec<Vec<f64>> = e.members.iter().map(|m| m.latents[l].clone()).collect();
        let (s, se) = spread_with_se(&members);
        assert!((s - e.spread.as_ref().unwrap()[0]).abs() < 1e-9 * s.max(1.0));
        stats.push((k, s, se));
    }
    let monotone = stats
        .windows(2)
        .all(|w| w[1].1 - w[0].1 > 3.0 * (w[0].2.powi(2) + w[1].2.powi(2)).sqrt());
    let shown: Vec<String> = stats.iter().map(|(k, s, se)| format!("k={k}: {s:.4e} (se {se:.1e})")).collect();
    outcome(
        zero && monotone,
        format!("k=0 spread exactly zero: {zero}; step-1 spread {}; 3-sigma monotone: {monotone}", shown.join(", ")),
    )
}

// 10 -------------------------------------------------------------------

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn reproducibility(root: &Path) -> Outcome {
    let mut cfg = RunConfig::parse(
        "grid = 8\nper_system = 10\nn_steps = 16\nd_latent = 8\ncodec_hidden = 16\ncodec_steps = 40\n\
         codec_batch = 4\nd_ctx = 8\nn_ctx = 2\nflow_hidden = 16\nsteps = 30\nbatch = 4\ncheckpoint_every = 10\n\
         ensemble_size = 3\neval_stride = 1\ncontraction_trials = 500\nseed = 17\n",
    )
    .unwrap();
    let out = root.join("runs");
    let mut mismatched = Vec::new();
    let mut compared = 0;
    let mut twice = |cmd: Subcommand, cfg: &RunConfig| -> PathBuf {
        let a = app::run(cmd, cfg, &out, "a").unwrap().run_dir;
        let b = app::run(cmd, cfg, &out, "b").unwrap().run_dir;
        let (fa, fb) = (files_under(&a), files_under(&b));
        if fa != fb {
            mismatched.push(cmd.name());
        }
        compared += fa.len();
        a
    };
    let g = twice(Subcommand::GenData, &cfg);
    cfg.corpus_dir = Some(g.join("corpus"));
    let c = twice(Subcommand::TrainCodec, &cfg);
    cfg.codec_ckpt = Some(c.join("codec.ckpt"));
    let e = twice(Subcommand::Encode, &cfg);
    cfg.latent_dir = Some(e.join("latents"));
    let mut base_cfg = cfg.clone();
    base_cfg.mode = AblationMode::A4Regression;
    let b = twice(Subcommand::TrainFlow, &base_cfg);
    let f = twice(Subcommand::TrainFlow, &cfg);
    cfg.flow_ckpt = Some(f.join("flow.ckpt"));
    cfg.baseline_ckpt = Some(b.join("flow.ckpt"));
    twice(Subcommand::Rollout, &cfg);
    twice(Subcommand::Eval, &cfg);
    twice(Subcommand::VerifyBounds, &cfg);
    twice(Subcommand::Report, &cfg);
    outcome(
        mismatched.is_empty(),
        format!(
            "8 subcommands run twice, {compared} files compared; differing: {}",
            if mismatched.is_empty() { "none".to_string() } else { mismatched.join(", ") }
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut failed = Vec::new();
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = f();
        let secs = t0.elapsed().as_secs_f64();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {id:>2} [{name}] ({secs:.2} s): {}", o.detail);
        if !o.pass {
            failed.push(id);
        }
    };
    report(1, "algebraic identities", &mut algebraic_identities);
    report(2, "gradient suite", &mut gradient_suite);
    report(3, "contraction identity", &mut contraction_identity);
    report(4, "deterministic compounding", &mut deterministic_compounding);
    report(5, "integrator convergence", &mut integrator_convergence);
    report(6, "gate identity", &mut gate_identity);
    let smoke_dir = tmp.path().join("smoke");
    let mut cached: Option<Smoke> = None;
    report(7, "desk-scale training smoke", &mut || {
        let s = smoke(&smoke_dir);
        let o = training_smoke(&s);
        cached = Some(s);
        o
    });
    report(8, "rollout stability", &mut || rollout_stability(cached.as_ref().unwrap()));
    report(9, "ensemble behavior", &mut ensemble_behavior);
    report(10, "reproducibility", &mut || reproducibility(tmp.path()));

    let unexpected: Vec<usize> = failed.iter().copied().filter(|i| !KNOWN_UNATTAINABLE.contains(i)).collect();
    println!(
        "{} of 10 criteria passed; failing: {:?}; known unattainable: {:?}",
        10 - failed.len(),
        failed,
        KNOWN_UNATTAINABLE
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
