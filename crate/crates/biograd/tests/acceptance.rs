//! End-to-end acceptance suite. Each test prints one `criterion N: PASS/FAIL`
//! line (visible with `--nocapture`) and asserts the same condition.
//!
//! Criterion 5 is a multi-hour full-architecture run; it is skipped unless
//! `BIOGRAD_FULL_RUN=1` is set.

use std::path::PathBuf;
use std::sync::OnceLock;

use ndarray::Array2;
use rand::Rng as _;

use biograd::config::{parse_config, RunConfig};
use biograd::data::SpikeTrain;
use biograd::metrics::alignment_angle;
use biograd::network::{
    forward_sample, ErrorMode, FeedbackInit, ForwardOptions, NetworkParams, NeuronHyper,
};
use biograd::oracle::{approx_gradient, stbp_gradient, stbp_gradient_closed_form, unrolled_trace_oracle};
use biograd::quant::PrecisionSpec;
use biograd::rng::{sample_rng, stream_rng, Stream};
use biograd::sleep::{run_sleep_phase, SleepHyper};
use biograd::trainer::{train, write_epoch_csv, Corpus, TrainOutcome};

fn data_dir() -> PathBuf {
    std::env::var_os("BIOGRAD_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
        })
}

fn report(criterion: &str, pass: bool, details: &str) {
    println!(
        "criterion {criterion}: {} — {details}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {details}");
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(1e-12);
    (a - b).abs() <= tol * scale
}

fn matrices_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
    a.iter().zip(b.iter()).all(|(&x, &y)| rel_close(x, y, tol))
}

fn random_train(steps: usize, units: usize, rng: &mut biograd::rng::Rng) -> SpikeTrain {
    let mut tr = SpikeTrain::zeros(steps, units);
    for t in 0..steps {
        for j in 0..units {
            if rng.gen_bool(0.5) {
                tr.set(t, j);
            }
        }
    }
    tr
}

fn small_hyper(t_steps: usize, t_error: usize) -> NeuronHyper {
    NeuronHyper { t_steps, t_error, ..NeuronHyper::mnist() }
}

// ---------------------------------------------------------------- shared runs

fn mnist_corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let cfg = desk_config(&[("seed", "1")]);
        Corpus::load(&cfg).expect("MNIST data present under data/mnist")
    })
}

/// Criterion-4 base setup: 784-100-10, default hyperparameters, 20 epochs.
/// The feedforward learning rate is tuned for this architecture (the
/// default 1e-3 is tuned for the deeper 500-100 nets, and the evaluation
/// protocol tunes the learning rate per setting).
fn desk_config(extra: &[(&str, &str)]) -> RunConfig {
    let mut kv: Vec<(String, String)> = vec![
        ("arch".into(), "784-100-10".into()),
        ("epochs".into(), "20".into()),
        ("lr".into(), "3e-3".into()),
        ("data_dir".into(), data_dir().display().to_string()),
    ];
    for (k, v) in extra {
        kv.push((k.to_string(), v.to_string()));
    }
    parse_config(None, &kv).unwrap()
}

/// Criterion-6 base setup: 10k training subset, 5 epochs.
fn subset_config(extra: &[(&str, &str)]) -> RunConfig {
    let mut kv = vec![("train_subset", "10000"), ("epochs", "5")];
    kv.extend_from_slice(extra);
    desk_config(&kv)
}

fn run(cfg: &RunConfig) -> TrainOutcome {
    train(cfg, mnist_corpus(), |_, _| Ok(())).unwrap()
}

/// 20-epoch desk-scale runs at full precision, shared between criteria 4 and 8.
fn desk_outcomes() -> &'static Vec<TrainOutcome> {
    static RUNS: OnceLock<Vec<TrainOutcome>> = OnceLock::new();
    RUNS.get_or_init(|| {
        [1u64, 2, 3]
            .iter()
            .map(|s| run(&desk_config(&[("seed", &s.to_string())])))
            .collect()
    })
}

// ------------------------------------------------------------------ criteria

#[test]
fn criterion_01_trace_equivalence() {
    let start = std::time::Instant::now();
    let dims = [6usize, 8, 4];
    let hyper = small_hyper(10, 3);
    let opts = ForwardOptions {
        traces: true,
        record_history: true,
        record_trace_history: true,
        ..ForwardOptions::default()
    };
    for net in 0..100u64 {
        let mut rng = sample_rng(100 + net, Stream::WeightInit, 0, net);
        let mut rng_b = sample_rng(100 + net, Stream::FeedbackInit, 0, net);
        let params = NetworkParams::init(&dims, FeedbackInit::FwdInit, &mut rng, &mut rng_b);
        let input = random_train(hyper.t_steps, dims[0], &mut rng);
        let mut err_rng = sample_rng(100 + net, Stream::ErrorSpikes, 0, net);
        let run = forward_sample(
            &params,
            &input,
            (net % 4) as usize,
            &hyper,
            ErrorMode::Exact,
            &opts,
            &mut err_rng,
        )
        .unwrap();
        let oracle = unrolled_trace_oracle(run.history.as_ref().unwrap(), &dims, &hyper).unwrap();
        let online_pre = run.trace_history.as_ref().unwrap();
        for l in 0..dims.len() - 1 {
            for t in 0..hyper.t_steps {
                assert!(
                    matrices_close(&online_pre[l][t], &oracle[l].tr_pre[t], 1e-6),
                    "net {net} layer {l} step {t}: online Tr_pre diverges from unrolled sum"
                );
            }
            let corr = run.traces[l].as_ref().unwrap().dense_tr_corr(dims[l]);
            assert!(
                matrices_close(&corr, &oracle[l].tr_corr_final, 1e-6),
                "net {net} layer {l}: online Tr_corr diverges from unrolled sum"
            );
        }
    }
    let dt = start.elapsed();
    report(
        "1",
        dt.as_secs_f64() < 10.0,
        &format!("online traces match unrolled sums on 100 nets in {:.2}s", dt.as_secs_f64()),
    );
}

#[test]
fn criterion_02_gradient_equivalence_chain() {
    let start = std::time::Instant::now();
    let hyper = small_hyper(10, 3);

    // (a) online updates in exact mode with the error held at e(T) equal
    // -eta times the feedback-approximated gradient.
    let dims = [6usize, 8, 4];
    let eta = 1e-3;
    for net in 0..30u64 {
        let mut rng = sample_rng(200 + net, Stream::WeightInit, 0, net);
        let mut rng_b = sample_rng(200 + net, Stream::FeedbackInit, 0, net);
        let params = NetworkParams::init(&dims, FeedbackInit::RandInit, &mut rng, &mut rng_b);
        let input = random_train(hyper.t_steps, dims[0], &mut rng);
        let label = (net % 4) as usize;

        let mut err_rng = sample_rng(200 + net, Stream::ErrorSpikes, 0, net);
        let first = forward_sample(
            &params,
            &input,
            label,
            &hyper,
            ErrorMode::Exact,
            &ForwardOptions { record_history: true, ..ForwardOptions::default() },
            &mut err_rng,
        )
        .unwrap();
        let history = first.history.as_ref().unwrap();

        let mut err_rng = sample_rng(200 + net, Stream::ErrorSpikes, 0, net);
        let second = forward_sample(
            &params,
            &input,
            label,
            &hyper,
            ErrorMode::Exact,
            &ForwardOptions {
                traces: true,
                held_error: Some(first.e_final.clone()),
                ..ForwardOptions::default()
            },
            &mut err_rng,
        )
        .unwrap();

        let approx = approx_gradient(history, &params.b, &dims, &hyper).unwrap();
        for l in 0..params.layers() {
            let mut dw = Array2::zeros(params.w[l].dim());
            second.traces[l]
                .as_ref()
                .unwrap()
                .accumulate_delta(&second.v_a[l], &hyper, eta, &mut dw);
            let expected = approx[l].mapv(|g| -eta * g);
            assert!(
                matrices_close(&dw, &expected, 1e-6),
                "net {net} layer {l}: online update diverges from approximated gradient"
            );
        }
    }

    // (b) for single-layer nets the approximated gradient IS the exact one.
    let dims1 = [6usize, 4];
    for net in 0..30u64 {
        let mut rng = sample_rng(300 + net, Stream::WeightInit, 0, net);
        let mut rng_b = sample_rng(300 + net, Stream::FeedbackInit, 0, net);
        let params = NetworkParams::init(&dims1, FeedbackInit::FwdInit, &mut rng, &mut rng_b);
        let input = random_train(hyper.t_steps, dims1[0], &mut rng);
        let mut err_rng = sample_rng(300 + net, Stream::ErrorSpikes, 0, net);
        let run = forward_sample(
            &params,
            &input,
            (net % 4) as usize,
            &hyper,
            ErrorMode::Exact,
            &ForwardOptions { record_history: true, ..ForwardOptions::default() },
            &mut err_rng,
        )
        .unwrap();
        let history = run.history.as_ref().unwrap();
        let approx = approx_gradient(history, &params.b, &dims1, &hyper).unwrap();
        let exact = stbp_gradient(history, &params, &hyper).unwrap();
        for (a, e) in approx.iter().zip(&exact) {
            assert!(matrices_close(a, e, 1e-12), "net {net}: K=1 approx != exact gradient");
        }
    }

    // (c) the recursive backward sweep equals the closed-form nested sums.
    for net in 0..30u64 {
        let mut rng = sample_rng(400 + net, Stream::WeightInit, 0, net);
        let mut rng_b = sample_rng(400 + net, Stream::FeedbackInit, 0, net);
        let params = NetworkParams::init(&dims, FeedbackInit::FwdInit, &mut rng, &mut rng_b);
        let input = random_train(hyper.t_steps, dims[0], &mut rng);
        let mut err_rng = sample_rng(400 + net, Stream::ErrorSpikes, 0, net);
        let run = forward_sample(
            &params,
            &input,
            (net % 4) as usize,
            &hyper,
            ErrorMode::Exact,
            &ForwardOptions { record_history: true, ..ForwardOptions::default() },
            &mut err_rng,
        )
        .unwrap();
        let history = run.history.as_ref().unwrap();
        let rec = stbp_gradient(history, &params, &hyper).unwrap();
        let closed = stbp_gradient_closed_form(history, &params, &hyper).unwrap();
        for (a, e) in rec.iter().zip(&closed) {
            assert!(matrices_close(a, e, 1e-6), "net {net}: recursive != closed form");
        }
    }

    let dt = start.elapsed();
    report(
        "2",
        dt.as_secs_f64() < 30.0,
        &format!(
            "online = -eta*approx, approx = exact for K=1, recursion = closed form ({:.2}s)",
            dt.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_03_weight_mirroring() {
    let start = std::time::Instant::now();
    let dims = [4usize, 20, 10];
    let hyper = NeuronHyper::mnist();
    // A standalone 200-cycle mirroring test warrants a larger step than the
    // training default, which is sized for thousands of interleaved cycles.
    let sleep = SleepHyper {
        beta: 1e-4,
        ..SleepHyper::default()
    };
    let (mut sum_start, mut sum_end) = (0.0, 0.0);
    for seed in 0..20u64 {
        let mut rng_w = stream_rng(seed, Stream::WeightInit);
        let mut rng_b = stream_rng(seed, Stream::FeedbackInit);
        let mut params = NetworkParams::init(&dims, FeedbackInit::RandInit, &mut rng_w, &mut rng_b);
        sum_start += alignment_angle(&params.b[0], &params.w, 0).unwrap();
        let mut rng = stream_rng(seed, Stream::SleepSpikes);
        run_sleep_phase(&mut params, 200, &hyper, &sleep, &mut rng, None).unwrap();
        sum_end += alignment_angle(&params.b[0], &params.w, 0).unwrap();
    }
    let (mean_start, mean_end) = (sum_start / 20.0, sum_end / 20.0);
    let pass = mean_end < mean_start && mean_end < 30.0 && start.elapsed().as_secs() < 60;
    report(
        "3",
        pass,
        &format!(
            "mean alignment angle {mean_start:.1}° -> {mean_end:.1}° after 200 sleep cycles ({:.1}s)",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_04_desk_scale_accuracy() {
    let runs = desk_outcomes();
    let mean = runs.iter().map(|r| r.test_acc).sum::<f64>() / runs.len() as f64;
    report(
        "4",
        mean >= 0.95,
        &format!(
            "mean test accuracy {:.2}% over seeds 1-3 (needed >= 95.00%)",
            mean * 100.0
        ),
    );
}

#[test]
fn criterion_05_full_architecture() {
    if std::env::var("BIOGRAD_FULL_RUN").as_deref() != Ok("1") {
        println!("criterion 5: SKIPPED — set BIOGRAD_FULL_RUN=1 to run the multi-hour full-architecture reproduction");
        return;
    }
    let accs: Vec<f64> = [1u64, 2, 3]
        .iter()
        .map(|s| {
            run(&desk_config(&[
                ("arch", "784-500-100-10"),
                ("epochs", "100"),
                ("seed", &s.to_string()),
            ]))
            .test_acc
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    report(
        "5",
        (mean - 0.9813).abs() <= 0.005,
        &format!("mean test accuracy {:.2}% (target 98.13% +- 0.5)", mean * 100.0),
    );
}

#[test]
fn criterion_06_sleep_ablation() {
    let seeds = [1u64, 2, 3, 4, 5];
    let mut acc = [0.0f64; 2];
    let mut angle = [0.0f64; 2];
    for (k, mode) in ["on", "off"].iter().enumerate() {
        for s in seeds {
            let cfg = subset_config(&[
                ("feedback_init", "rand"),
                ("sleep", mode),
                ("seed", &s.to_string()),
            ]);
            let out = run(&cfg);
            acc[k] += out.test_acc / seeds.len() as f64;
            angle[k] += out.history.last().unwrap().align_deg[0] / seeds.len() as f64;
        }
    }
    let pass = acc[0] - acc[1] >= 0.02 && angle[0] < angle[1];
    report(
        "6",
        pass,
        &format!(
            "sleep {:.2}% @ {:.1}° vs no-sleep {:.2}% @ {:.1}°",
            acc[0] * 100.0,
            angle[0],
            acc[1] * 100.0,
            angle[1]
        ),
    );
}

#[test]
fn criterion_07_sleep_frequency_insensitivity() {
    let seeds = [1u64, 2, 3];
    let mut means = Vec::new();
    for x in [1usize, 16, 64] {
        let mut acc = 0.0;
        for s in seeds {
            let cfg = subset_config(&[
                ("sleep_every", &x.to_string()),
                ("seed", &s.to_string()),
            ]);
            acc += run(&cfg).test_acc / seeds.len() as f64;
        }
        means.push(acc);
    }
    let spread = means.iter().cloned().fold(f64::MIN, f64::max)
        - means.iter().cloned().fold(f64::MAX, f64::min);
    report(
        "7",
        spread <= 0.015,
        &format!(
            "accuracies at x=1/16/64: {:.2}% / {:.2}% / {:.2}% (spread {:.2} points)",
            means[0] * 100.0,
            means[1] * 100.0,
            means[2] * 100.0,
            spread * 100.0
        ),
    );
}

#[test]
fn criterion_08_quantization() {
    let full = desk_outcomes()[0].test_acc;
    let mut results = Vec::new();
    for bits in [8u32, 16] {
        let cfg = desk_config(&[("seed", "1"), ("bits", &bits.to_string())]);
        let out = run(&cfg);
        let wq = PrecisionSpec::new(bits, cfg.weight_range).unwrap();
        let on_grid = out.params.w.iter().chain(&out.params.b).all(|m| wq.on_grid(m));
        results.push((bits, out.test_acc, on_grid));
    }
    let (acc8, grid8) = (results[0].1, results[0].2);
    let (acc16, grid16) = (results[1].1, results[1].2);
    let pass =
        (acc8 - full).abs() <= 0.025 && (acc16 - full).abs() <= 0.010 && grid8 && grid16;
    report(
        "8",
        pass,
        &format!(
            "32-bit {:.2}%, 16-bit {:.2}%, 8-bit {:.2}%; all tensors on grid: {}",
            full * 100.0,
            acc16 * 100.0,
            acc8 * 100.0,
            grid8 && grid16
        ),
    );
}

#[test]
fn criterion_09_non_batched() {
    let batched = run(&subset_config(&[("seed", "1")])).test_acc;
    // Linear batch-size/learning-rate scaling (lr / 128): batched updates
    // are batch means, so per-sample updates at the unscaled rate would take
    // a 128-fold larger effective step per epoch. Scaling keeps the two
    // trajectories first-order equivalent and isolates the question under
    // test — whether per-sample application of the rule degrades learning.
    let scaled_lr = format!("{}", 3e-3 / 128.0);
    let single = run(&subset_config(&[
        ("seed", "1"),
        ("batch_size", "1"),
        ("lr", &scaled_lr),
    ]))
    .test_acc;
    report(
        "9",
        (batched - single).abs() <= 0.015,
        &format!(
            "batch 128: {:.2}%, batch 1: {:.2}%",
            batched * 100.0,
            single * 100.0
        ),
    );
}

#[test]
fn criterion_10_determinism() {
    let cfg = subset_config(&[("feedback_init", "rand"), ("seed", "1"), ("epochs", "2")]);
    let dir = tempfile::tempdir().unwrap();
    let artifacts = |tag: &str, threads: Option<usize>| -> (Vec<u8>, Vec<u8>) {
        let go = || {
            let out = run(&cfg);
            let csv = dir.path().join(format!("{tag}.csv"));
            let ckpt = dir.path().join(format!("{tag}.ckpt"));
            write_epoch_csv(&csv, &out.history).unwrap();
            biograd::checkpoint::save(
                &ckpt,
                &biograd::checkpoint::Checkpoint { params: out.params, seed: cfg.seed, epoch: 2 },
            )
            .unwrap();
            (std::fs::read(csv).unwrap(), std::fs::read(ckpt).unwrap())
        };
        match threads {
            None => go(),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(go),
        }
    };
    let (csv_a, ckpt_a) = artifacts("a", None);
    let (csv_b, ckpt_b) = artifacts("b", Some(2));
    let pass = csv_a == csv_b && ckpt_a == ckpt_b;
    report(
        "10",
        pass,
        "metric CSV and checkpoint bytes identical across reruns and thread counts",
    );
}
