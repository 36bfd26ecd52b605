//! End-to-end library pipeline on a tiny corpus.

use lgs::codec::{encode_dataset, train_codec, Codec, CodecConfig, CodecData, CodecTrainConfig};
use lgs::flow::{train_flow_forcing, AblationMode, FlowConfig, FlowModel, FlowTrainConfig, KnobPolicy};
use lgs::metrics::{eval_horizons, EvalData, FlowForecaster, TruthOracle};
use lgs::nn::{OptimizerConfig, ParamStore};
use lgs::pde::{generate_corpus, load_corpus, SystemSpec};
use lgs::rollout::RolloutConfig;

fn opt(steps: u64, lr: f64) -> OptimizerConfig {
    OptimizerConfig {
        beta1: 0.9,
        beta2: 0.95,
        weight_decay: 1e-4,
        base_lr: lr,
        total_steps: steps,
        warmup_frac: 0.1,
    }
}

#[test]
fn tiny_pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let specs: Vec<SystemSpec> = ["heat1d", "advection1d", "heat2d"]
        .iter()
        .map(|n| SystemSpec::preset(n, 8).unwrap())
        .collect();
    generate_corpus(&specs, 10, 12, 4, dir.path()).unwrap();
    let corpus = load_corpus(dir.path()).unwrap();
    assert_eq!(corpus.train.len(), 24);
    assert_eq!(corpus.test.len(), 3);

    let codec = Codec::new(CodecConfig {
        grid: 8,
        pool: 2,
        d_latent: 8,
        hidden: 16,
    })
    .unwrap();
    let data = CodecData::new(&corpus.train, &corpus.norm).unwrap();
    let ccfg = CodecTrainConfig {
        beta: 1e-6,
        batch: 4,
        seed: 0,
        opt: opt(40, 2e-3),
    };
    let mut cs = ParamStore::new(codec.init_params(0));
    train_codec(&codec, &data, &ccfg, &mut cs, |_, _| Ok(())).unwrap();
    let train = encode_dataset(&codec, &cs.params, &corpus.norm, &corpus.train).unwrap();
    let test = encode_dataset(&codec, &cs.params, &corpus.norm, &corpus.test).unwrap();
    assert_eq!(train.trajectories.len(), 24);
    assert!(train.trajectories.iter().all(|t| t.len() == 13 && t[0].len() == 8));

    let eval = EvalData {
        trajectories: &corpus.test,
        latents: &test,
        norm: &corpus.norm,
        codec: &codec,
        codec_params: &cs.params,
    };
    // encoded truth forecasts have zero latent error at every step
    let oracle = eval_horizons(&TruthOracle { context_length: 4 }, &eval, &[1, 4], 1).unwrap();
    assert!(oracle.curves.iter().all(|c| c.latent.iter().all(|&e| e == 0.0)));

    let model = FlowModel::new(FlowConfig {
        d_latent: 8,
        d_ctx: 8,
        n_ctx: 2,
        patch: 4,
        pyramid_factor: 2,
        hidden: 16,
        context_length: 4,
        tau: 0.05,
        mode: AblationMode::Full,
    })
    .unwrap();
    let fcfg = FlowTrainConfig {
        batch: 4,
        seed: 1,
        knob: KnobPolicy::Uniform { k_max: 0.02 },
        opt: opt(30, 1e-3),
    };
    let train_once = || {
        let mut fs = ParamStore::new(model.init_params(1));
        train_flow_forcing(&model, &train, &fcfg, &mut fs, |_, _| Ok(())).unwrap();
        fs.params
    };
    let p1 = train_once();
    assert_eq!(p1, train_once());

    let rc = RolloutConfig {
        k_infer: 0.01,
        ode_steps: 4,
        epsilon: 0.05,
        horizon: 4,
        seed: 2,
        ensemble_size: 3,
    };
    let fc = FlowForecaster {
        model: &model,
        params: &p1,
        cfg: rc,
    };
    let a = eval_horizons(&fc, &eval, &[1, 4], 1).unwrap();
    let b = eval_horizons(&fc, &eval, &[1, 4], 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.curves.len(), 3);
    assert!(a.curves.iter().all(|c| c.decoded.len() == 4 && c.decoded.iter().all(|e| e.is_finite())));
}
