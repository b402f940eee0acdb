//! Gradient-oracle suites: every differentiable operation, plus the
//! end-to-end model losses, checked against central differences.
//!
//! Used by the `gradcheck` CLI subcommand and by the acceptance tests.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{grad_check, BnStats, LstmParamIds, Mode, NodeId, Tape, Tensor};
use crate::losses;
use crate::model::{CtinModel, ModelConfig};

/// Relative-error gate applied to every check.
pub const MAX_REL_ERR: f64 = 1e-4;
const H_SCALE: f64 = 1e-4;

/// One suite entry.
#[derive(Clone, Debug)]
pub struct OracleResult {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub excluded: usize,
}

impl OracleResult {
    pub fn pass(&self) -> bool {
        self.max_rel_err < MAX_REL_ERR && self.checked > 0
    }
}

fn dims(rng: &mut crate::rng::DetRng, lo: usize, hi: usize) -> usize {
    use rand::Rng;
    rng.random_range(lo..=hi)
}

/// Random tensor bounded away from zero (for kink-free ReLU-style checks).
fn off_zero(shape: &[usize], rng: &mut crate::rng::DetRng) -> Tensor {
    let mut t = Tensor::uniform(shape, 1.0, rng);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += if *v >= 0.0 { 0.1 } else { -0.1 };
        }
    }
    t
}

/// Strictly positive random tensor.
fn positive(shape: &[usize], rng: &mut crate::rng::DetRng) -> Tensor {
    let mut t = Tensor::uniform(shape, 0.5, rng);
    for v in t.data_mut() {
        *v = 0.4 + v.abs();
    }
    t
}

/// Project an output node to a scalar against a fixed random direction, so
/// structured gradients (softmax rows, normalization) are exercised.
fn project(tape: &mut Tape, out: NodeId, seed: u64) -> NodeId {
    let shape = tape.value(out).shape().to_vec();
    let c = tape.constant(Tensor::uniform(&shape, 1.0, &mut crate::rng::stream(seed, 0xC0)));
    let p = tape.mul(out, c).expect("projection shapes match");
    tape.mean(p)
}

fn check<F>(name: &str, trials: usize, seed: u64, mut build: F) -> OracleResult
where
    F: FnMut(u64) -> (Vec<Tensor>, alloc::boxed::Box<dyn FnMut(&mut Tape, &[NodeId]) -> NodeId>),
{
    let mut worst = OracleResult { name: name.into(), max_rel_err: 0.0, checked: 0, excluded: 0 };
    for trial in 0..trials {
        let (inputs, mut f) = build(seed ^ (trial as u64).wrapping_mul(0x9E37_79B9));
        let report = grad_check(&inputs, |t, ids| f(t, ids), H_SCALE);
        worst.max_rel_err = worst.max_rel_err.max(report.max_rel_err);
        worst.checked += report.checked;
        worst.excluded += report.excluded;
    }
    worst
}

/// Gradient-check every registered operation over `trials` seeded shapes.
pub fn run_op_suite(seed: u64, trials: usize) -> Vec<OracleResult> {
    let mut out = Vec::new();

    // Elementwise binary ops, including the suffix-broadcast path.
    for (name, op) in [
        ("add", 0usize),
        ("sub", 1),
        ("mul", 2),
        ("div", 3),
    ] {
        out.push(check(name, trials, seed, move |s| {
            let mut rng = crate::rng::stream(s, 1);
            let (r, c) = (dims(&mut rng, 1, 5), dims(&mut rng, 1, 5));
            let a = Tensor::uniform(&[r, c], 1.0, &mut rng);
            let b = if s % 2 == 0 {
                positive(&[r, c], &mut rng)
            } else {
                positive(&[c], &mut rng) // broadcast row
            };
            (
                alloc::vec![a, b],
                alloc::boxed::Box::new(move |t: &mut Tape, ids: &[NodeId]| {
                    let y = match op {
                        0 => t.add(ids[0], ids[1]).unwrap(),
                        1 => t.sub(ids[0], ids[1]).unwrap(),
                        2 => t.mul(ids[0], ids[1]).unwrap(),
                        _ => t.div(ids[0], ids[1]).unwrap(),
                    };
                    project(t, y, s)
                }),
            )
        }));
    }

    out.push(check("scale_and_shift", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 2);
        let a = Tensor::uniform(&[dims(&mut rng, 1, 4), dims(&mut rng, 1, 4)], 1.0, &mut rng);
        (
            alloc::vec![a],
            alloc::boxed::Box::new(move |t, ids| {
                let y = t.scale(ids[0], -1.7);
                let y = t.add_scalar(y, 0.3);
                project(t, y, s)
            }),
        )
    }));

    out.push(check("matmul", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 3);
        let (m, k, n) = (dims(&mut rng, 1, 4), dims(&mut rng, 1, 4), dims(&mut rng, 1, 4));
        let a = Tensor::uniform(&[m, k], 1.0, &mut rng);
        let b = Tensor::uniform(&[k, n], 1.0, &mut rng);
        (
            alloc::vec![a, b],
            alloc::boxed::Box::new(move |t, ids| {
                let y = t.matmul(ids[0], ids[1]).unwrap();
                project(t, y, s)
            }),
        )
    }));

    for (name, transpose_b) in [("bmm", false), ("bmm_nt", true)] {
        out.push(check(name, trials, seed, move |s| {
            let mut rng = crate::rng::stream(s, 4);
            let (bt, m, k, n) =
                (dims(&mut rng, 1, 3), dims(&mut rng, 1, 4), dims(&mut rng, 1, 4), dims(&mut rng, 1, 4));
            let a = Tensor::uniform(&[bt, m, k], 1.0, &mut rng);
            let b = if transpose_b {
                Tensor::uniform(&[bt, n, k], 1.0, &mut rng)
            } else {
                Tensor::uniform(&[bt, k, n], 1.0, &mut rng)
            };
            (
                alloc::vec![a, b],
                alloc::boxed::Box::new(move |t, ids| {
                    let y = t.bmm(ids[0], ids[1], transpose_b).unwrap();
                    project(t, y, s)
                }),
            )
        }));
    }

    out.push(check("conv1d", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 5);
        let groups = [1usize, 2][s as usize % 2];
        let cpg = dims(&mut rng, 1, 3);
        let cin = groups * cpg;
        let cout = groups * dims(&mut rng, 1, 3);
        let m = dims(&mut rng, 3, 7);
        let k = [1usize, 3, 5][s as usize % 3];
        let x = Tensor::uniform(&[m, cin], 1.0, &mut rng);
        let w = Tensor::uniform(&[cout, cpg, k], 1.0, &mut rng);
        let b = Tensor::uniform(&[cout], 0.5, &mut rng);
        (
            alloc::vec![x, w, b],
            alloc::boxed::Box::new(move |t, ids| {
                let y = t.conv1d(ids[0], ids[1], ids[2], groups).unwrap();
                project(t, y, s)
            }),
        )
    }));

    // Pointwise nonlinearities. ReLU and clamp get inputs held away from
    // their kinks; the detector would exclude straddlers anyway.
    enum Point {
        Relu,
        Sigmoid,
        Tanh,
        Softplus,
        Exp,
        Log,
        Clamp,
    }
    for (name, which) in [
        ("relu", Point::Relu),
        ("sigmoid", Point::Sigmoid),
        ("tanh", Point::Tanh),
        ("softplus", Point::Softplus),
        ("exp", Point::Exp),
        ("log", Point::Log),
        ("clamp", Point::Clamp),
    ] {
        out.push(check(name, trials, seed, move |s| {
            let mut rng = crate::rng::stream(s, 6);
            let shape = [dims(&mut rng, 1, 5), dims(&mut rng, 1, 5)];
            let x = match which {
                Point::Log => positive(&shape, &mut rng),
                Point::Relu | Point::Clamp => off_zero(&shape, &mut rng),
                _ => Tensor::uniform(&shape, 1.5, &mut rng),
            };
            let tag = match which {
                Point::Relu => 0u8,
                Point::Sigmoid => 1,
                Point::Tanh => 2,
                Point::Softplus => 3,
                Point::Exp => 4,
                Point::Log => 5,
                Point::Clamp => 6,
            };
            (
                alloc::vec![x],
                alloc::boxed::Box::new(move |t, ids| {
                    let y = match tag {
                        0 => t.relu(ids[0]),
                        1 => t.sigmoid(ids[0]),
                        2 => t.tanh(ids[0]),
                        3 => t.softplus(ids[0]),
                        4 => t.exp(ids[0]),
                        5 => t.log(ids[0]),
                        _ => t.clamp(ids[0], -1.2, 1.2),
                    };
                    project(t, y, s)
                }),
            )
        }));
    }

    out.push(check("softmax", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 7);
        let x = Tensor::uniform(&[dims(&mut rng, 1, 4), dims(&mut rng, 1, 6)], 2.0, &mut rng);
        (
            alloc::vec![x],
            alloc::boxed::Box::new(move |t, ids| {
                let y = t.softmax(ids[0]).unwrap();
                project(t, y, s)
            }),
        )
    }));

    out.push(check("softmax_causal", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 8);
        let (h, m) = (dims(&mut rng, 1, 3), dims(&mut rng, 2, 5));
        let x = Tensor::uniform(&[h, m, m], 2.0, &mut rng);
        (
            alloc::vec![x],
            alloc::boxed::Box::new(move |t, ids| {
                let y = t.softmax_causal(ids[0]).unwrap();
                project(t, y, s)
            }),
        )
    }));

    out.push(check("concat_slice_reshape", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 9);
        let m = dims(&mut rng, 2, 5);
        let (ca, cb) = (dims(&mut rng, 1, 4), dims(&mut rng, 1, 4));
        let a = Tensor::uniform(&[m, ca], 1.0, &mut rng);
        let b = Tensor::uniform(&[m, cb], 1.0, &mut rng);
        (
            alloc::vec![a, b],
            alloc::boxed::Box::new(move |t, ids| {
                let y = t.concat(ids[0], ids[1]).unwrap();
                let y = t.slice_time(y, 1, m - 1).unwrap();
                let y = t.slice_channels(y, 0, ca.min(cb)).unwrap();
                let y = t.reshape(y, &[(m - 1) * ca.min(cb)]).unwrap();
                project(t, y, s)
            }),
        )
    }));

    out.push(check("split_merge_heads", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 10);
        let h = dims(&mut rng, 1, 3);
        let dk = dims(&mut rng, 1, 3);
        let m = dims(&mut rng, 2, 5);
        let x = Tensor::uniform(&[m, h * dk], 1.0, &mut rng);
        (
            alloc::vec![x],
            alloc::boxed::Box::new(move |t, ids| {
                let y = t.split_heads(ids[0], h).unwrap();
                let y = t.merge_heads(y).unwrap();
                project(t, y, s)
            }),
        )
    }));

    out.push(check("transpose", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 11);
        let x = Tensor::uniform(&[dims(&mut rng, 1, 5), dims(&mut rng, 1, 5)], 1.0, &mut rng);
        (
            alloc::vec![x],
            alloc::boxed::Box::new(move |t, ids| {
                let y = t.transpose(ids[0]).unwrap();
                project(t, y, s)
            }),
        )
    }));

    for (name, mean_not_sum) in [("mean", true), ("sum", false)] {
        out.push(check(name, trials, seed, move |s| {
            let mut rng = crate::rng::stream(s, 12);
            let x = Tensor::uniform(&[dims(&mut rng, 1, 5), dims(&mut rng, 1, 5)], 1.0, &mut rng);
            (
                alloc::vec![x],
                alloc::boxed::Box::new(move |t, ids| {
                    let sq = t.mul(ids[0], ids[0]).unwrap();
                    if mean_not_sum {
                        t.mean(sq)
                    } else {
                        let y = t.sum(sq);
                        t.scale(y, 0.25)
                    }
                }),
            )
        }));
    }

    out.push(check("cumsum_time", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 13);
        let x = Tensor::uniform(&[dims(&mut rng, 2, 6), dims(&mut rng, 1, 3)], 1.0, &mut rng);
        (
            alloc::vec![x],
            alloc::boxed::Box::new(move |t, ids| {
                let y = t.cumsum_time(ids[0]).unwrap();
                project(t, y, s)
            }),
        )
    }));

    out.push(check("scale_rows_repeat_rows", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 14);
        let (m, c) = (dims(&mut rng, 2, 5), dims(&mut rng, 1, 4));
        let row = Tensor::uniform(&[1, c], 1.0, &mut rng);
        let w = Tensor::uniform(&[m], 1.0, &mut rng);
        (
            alloc::vec![row, w],
            alloc::boxed::Box::new(move |t, ids| {
                let x = t.repeat_rows(ids[0], m).unwrap();
                let y = t.scale_rows(x, ids[1]).unwrap();
                project(t, y, s)
            }),
        )
    }));

    out.push(check("layer_norm", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 15);
        let (m, c) = (dims(&mut rng, 1, 5), dims(&mut rng, 2, 6));
        let x = Tensor::uniform(&[m, c], 1.0, &mut rng);
        let gain = Tensor::uniform(&[c], 0.8, &mut rng);
        let bias = Tensor::uniform(&[c], 0.5, &mut rng);
        (
            alloc::vec![x, gain, bias],
            alloc::boxed::Box::new(move |t, ids| {
                let y = t.layer_norm(ids[0], ids[1], ids[2], 1e-5).unwrap();
                project(t, y, s)
            }),
        )
    }));

    for (name, mode) in [("batch_norm_train", Mode::Train), ("batch_norm_eval", Mode::Eval)] {
        out.push(check(name, trials, seed, move |s| {
            let mut rng = crate::rng::stream(s, 16);
            let (m, c) = (dims(&mut rng, 2, 6), dims(&mut rng, 1, 4));
            let x = Tensor::uniform(&[m, c], 1.0, &mut rng);
            let gain = Tensor::uniform(&[c], 0.8, &mut rng);
            let bias = Tensor::uniform(&[c], 0.5, &mut rng);
            let running = BnStats {
                mean: (0..c).map(|i| 0.1 * i as f64).collect(),
                var: (0..c).map(|i| 0.9 + 0.1 * i as f64).collect(),
            };
            (
                alloc::vec![x, gain, bias],
                alloc::boxed::Box::new(move |t, ids| {
                    let (y, _) = t.batch_norm(ids[0], ids[1], ids[2], &running, mode, 1e-5).unwrap();
                    project(t, y, s)
                }),
            )
        }));
    }

    out.push(check("dropout", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 17);
        let x = Tensor::uniform(&[dims(&mut rng, 2, 5), dims(&mut rng, 1, 4)], 1.0, &mut rng);
        (
            alloc::vec![x],
            alloc::boxed::Box::new(move |t, ids| {
                // Same mask on every evaluation: the rng restarts per call.
                let mut drng = crate::rng::stream(s, 0xD0);
                let y = t.dropout(ids[0], 0.4, Mode::Train, &mut drng);
                project(t, y, s)
            }),
        )
    }));

    out.push(check("bilstm", trials, seed, |s| {
        let mut rng = crate::rng::stream(s, 18);
        let (m, input, hidden) = (dims(&mut rng, 2, 5), dims(&mut rng, 1, 3), dims(&mut rng, 1, 3));
        let x = Tensor::uniform(&[m, input], 1.0, &mut rng);
        let mk = |rows: usize, rng: &mut crate::rng::DetRng| Tensor::uniform(&[rows, 4 * hidden], 0.6, rng);
        let inputs = alloc::vec![
            x,
            mk(input, &mut rng),
            mk(hidden, &mut rng),
            Tensor::uniform(&[4 * hidden], 0.4, &mut rng),
            mk(input, &mut rng),
            mk(hidden, &mut rng),
            Tensor::uniform(&[4 * hidden], 0.4, &mut rng),
        ];
        (
            inputs,
            alloc::boxed::Box::new(move |t, ids| {
                let p = LstmParamIds {
                    w_ih_fwd: ids[1],
                    w_hh_fwd: ids[2],
                    b_fwd: ids[3],
                    w_ih_bwd: ids[4],
                    w_hh_bwd: ids[5],
                    b_bwd: ids[6],
                };
                let y = t.bilstm(ids[0], p, hidden).unwrap();
                project(t, y, s)
            }),
        )
    }));

    out
}

/// Toy window with ground truth satisfying the window integral invariant.
fn toy_window(cfg: &ModelConfig, seed: u64) -> crate::pipeline::Window {
    use crate::dataio::{gen_synthetic, SyntheticSpec, TrajectoryKind};
    let spec = SyntheticSpec {
        rng_seed: seed,
        gyro_noise_std: 0.01,
        accel_noise_std: 0.05,
        ..SyntheticSpec::clean(
            TrajectoryKind::Circle { radius_m: 4.0, ccw: true },
            (cfg.window_len + 2) as f64 / 20.0,
            20.0,
            1.0,
        )
    };
    let seq = gen_synthetic(&spec).expect("toy spec is valid");
    crate::pipeline::extract_window(&seq, 0, cfg.window_len).expect("window fits")
}

/// End-to-end gradient checks: each loss through the full model on a toy
/// configuration, differentiating every trainable parameter.
pub fn run_model_suite(seed: u64) -> Vec<OracleResult> {
    let cfg = ModelConfig::toy(8, 8, 2);
    let model = CtinModel::new(cfg.clone()).expect("toy config is valid");
    let window = toy_window(&cfg, seed);

    let mut base = model.init_params(seed);
    losses::MultiTaskParams::register(&mut base);
    // Perturb away from the zero-init saddle so residual-path gradients are
    // exercised rather than structurally zero.
    let names: Vec<String> = base.iter().filter(|(_, e)| e.trainable).map(|(n, _)| n.into()).collect();
    let mut prng = crate::rng::stream(seed, 0xA11);
    for name in &names {
        let mut v = base.value(name).expect("known param").clone();
        let bump = Tensor::uniform(v.shape(), 0.05, &mut prng);
        v.add_assign(&bump);
        base.set_value(name, v).expect("shape unchanged");
    }
    let inputs: Vec<Tensor> = names.iter().map(|n| base.value(n).unwrap().clone()).collect();

    let mut out = Vec::new();
    for loss_kind in ["mse", "ivl", "cnl", "ivl+cnl"] {
        let names = names.clone();
        let inputs = inputs.clone();
        let model = &model;
        let window = &window;
        let base = &base;
        let run = move |t: &mut Tape, ids: &[NodeId]| -> NodeId {
            let bound: BTreeMap<String, NodeId> =
                names.iter().cloned().zip(ids.iter().copied()).collect();
            let imu = t.constant(window.imu.clone());
            let mut rng = crate::rng::stream(7, 0xF0);
            let fwd = model
                .forward_on_tape(t, base, &bound, imu, Mode::Train, &mut rng)
                .expect("toy forward succeeds");
            let gt_vel = t.constant(window.gt_vel.clone());
            let gt_pos = t.constant(window.gt_pos.clone());
            match loss_kind {
                "mse" => losses::mse_loss(t, fwd.vel, gt_vel).unwrap(),
                "ivl" => losses::ivl(t, fwd.vel, gt_vel, gt_pos, window.dt).unwrap(),
                "cnl" => losses::cnl(t, fwd.vel, fwd.cov, gt_vel).unwrap(),
                _ => {
                    let lv = losses::ivl(t, fwd.vel, gt_vel, gt_pos, window.dt).unwrap();
                    let lc = losses::cnl(t, fwd.vel, fwd.cov, gt_vel).unwrap();
                    let mt = losses::MultiTaskParams::mounted(&bound).unwrap();
                    losses::multitask_loss(t, lv, lc, mt).unwrap()
                }
            }
        };
        let report = grad_check(&inputs, run, H_SCALE);
        out.push(OracleResult {
            name: format!("ctin_loss[{loss_kind}]"),
            max_rel_err: report.max_rel_err,
            checked: report.checked,
            excluded: report.excluded,
        });
    }
    out
}

/// The whole oracle suite: ops plus end-to-end losses.
pub fn run_full_suite(seed: u64, trials: usize) -> Vec<OracleResult> {
    let mut out = run_op_suite(seed, trials);
    out.extend(run_model_suite(seed));
    out
}
