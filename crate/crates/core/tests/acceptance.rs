use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use pshape::autodiff::{euler_matrix, gradcheck, Gradients, KlForm, NodeId, ParamStore, Tape};
use pshape::autodiff::Tensor2;
use pshape::blocks::{
    alignment_loss, kl_loss, sample_latent, Activation, ConditionVector, Decoder, DecoderConfig,
    EncoderHead, Gsn, GsnConfig, Mlp, RotationBlock, RotationConfig,
};
use pshape::data::{normalize, Dataset, Phantom, PhantomSpec, Sample};
use pshape::evaluation::{
    evaluate_classifier, evaluate_regressor, fit, reconstruction_curve, synth_then_classify,
    CurvePoint, CurveSetup, Scenario, Splits, SynthSetup,
};
use pshape::models::{
    BranchConfig, DiscriminativeConfig, DiscriminativeModel, GenerativeConfig, GenerativeModel,
    LossWeights, Model, ModelConfig, Prediction, Target, Task,
};
use pshape::training::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, Adam, AdamConfig, TrainConfig,
};
use pshape::transport::{mean_emd, solve, GroundNorm, SolverKind, TransportConfig};
use pshape::{Error, PointCloud};

type Outcome = Result<String, Box<dyn StdError>>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*).into());
        }
    };
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

const fn minutes(m: u64) -> Option<Duration> {
    Some(Duration::from_secs(60 * m))
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        name: "exact EMD equals brute-force permutation minimum",
        limit: Some(Duration::from_secs(10)),
        run: emd_oracle,
    },
    Criterion {
        id: 2,
        name: "approximate EMD within 5% above exact",
        limit: Some(Duration::from_secs(30)),
        run: approx_bound,
    },
    Criterion {
        id: 3,
        name: "finite-difference gradient suite",
        limit: minutes(2),
        run: gradient_suite,
    },
    Criterion {
        id: 4,
        name: "permutation invariance",
        limit: None,
        run: permutation_invariance,
    },
    Criterion {
        id: 5,
        name: "normalization contract",
        limit: None,
        run: normalization_contract,
    },
    Criterion {
        id: 6,
        name: "rotation recovery",
        limit: minutes(10),
        run: rotation_recovery,
    },
    Criterion {
        id: 7,
        name: "phantom classification",
        limit: minutes(15),
        run: phantom_classification,
    },
    Criterion {
        id: 8,
        name: "phantom regression",
        limit: None,
        run: phantom_regression,
    },
    Criterion {
        id: 9,
        name: "reconstruction curve trend",
        limit: minutes(120),
        run: reconstruction_trend,
    },
    Criterion {
        id: 10,
        name: "synth-then-classify trend",
        limit: minutes(60),
        run: synth_trend,
    },
    Criterion {
        id: 11,
        name: "end-to-end determinism",
        limit: None,
        run: determinism,
    },
    Criterion {
        id: 12,
        name: "checkpoint round trip and corruption",
        limit: None,
        run: checkpoint_round_trip,
    },
];

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failures = 0;
    for c in CRITERIA {
        if !selected.is_empty() && !selected.contains(&c.id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run))
            .unwrap_or_else(|p| Err(panic_message(p).into()));
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!(
                "runtime {:.1}s exceeds {}s",
                elapsed.as_secs_f64(),
                limit.as_secs()
            )
            .into()),
            (r, _) => r,
        };
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(e) => {
                failures += 1;
                ("FAIL", e.to_string())
            }
        };
        println!(
            "{tag} criterion {:>2} ({}): {detail} [{:.1}s]",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn random_points(rng: &mut impl Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect()
}

fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    PointCloud::new(random_points(rng, n))
}

fn l1(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()
}

/// Minimum assignment cost over all `n!` permutations (Heap's algorithm).
fn brute_force_emd(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(i, &j)| l1(&a[i], &b[j])).sum() };
    let mut best = cost(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn exact_l1() -> TransportConfig {
    TransportConfig {
        solver: SolverKind::Exact,
        norm: GroundNorm::L1,
        ..TransportConfig::default()
    }
}

fn emd_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for pair in 0..100 {
        let n = 2 + pair % 6;
        let a = random_points(&mut rng, n);
        let b = random_points(&mut rng, n);
        let exact = solve(&a, &b, &exact_l1())?.cost();
        worst = worst.max((exact - brute_force_emd(&a, &b)).abs());
    }
    check!(worst < 1e-9, "max deviation {worst:.3e}");
    Ok(format!("100 pairs, n in 2..=7, max deviation {worst:.2e}"))
}

fn approx_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let approx = TransportConfig {
        solver: SolverKind::Approx,
        epsilon: 0.01,
        ..TransportConfig::default()
    };
    let mut worst_ratio: f64 = 0.0;
    for pair in 0..50 {
        let a = random_points(&mut rng, 16);
        let b = random_points(&mut rng, 16);
        let exact = solve(&a, &b, &exact_l1())?.cost();
        let plan = solve(&a, &b, &approx)?;
        check!(plan.solver_name() == "approx", "pair {pair} ran {}", plan.solver_name());
        let cost = plan.cost();
        check!(
            cost >= exact - 1e-9 && cost <= exact * 1.05,
            "pair {pair}: approx {cost} vs exact {exact}"
        );
        worst_ratio = worst_ratio.max(cost / exact);
    }
    Ok(format!("50 pairs at n=16, worst approx/exact {worst_ratio:.5}"))
}

fn randomize(store: &mut ParamStore, rng: &mut impl Rng, scale: f64) {
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

/// Scalar `Σ wᵢ·xᵢ` over every entry of `x` with fixed weights `wᵢ = sin(i+1)`.
fn project(tape: &mut Tape, x: NodeId) -> pshape::Result<NodeId> {
    let len = tape.value(x).len();
    let flat = tape.reshape(x, 1, len)?;
    let w = tape.input(Tensor2::row((0..len).map(|i| ((i + 1) as f64).sin()).collect()));
    tape.matmul(flat, w, true)
}

fn fd_error(
    store: &ParamStore,
    run: impl Fn(&ParamStore) -> pshape::Result<(f64, Gradients)>,
    seed: u64,
) -> pshape::Result<f64> {
    let (_, grads) = run(store)?;
    let options = gradcheck::Options {
        seed,
        ..gradcheck::Options::default()
    };
    let report = gradcheck::check_params(store, &grads, |s| Ok(run(s)?.0), &options)?;
    Ok(report.max_relative_error)
}

fn scalar_and_grads(tape: &Tape, loss: NodeId) -> pshape::Result<(f64, Gradients)> {
    Ok((tape.value(loss).item(), tape.backward(loss)?.params))
}

fn grad_mlp(seed: u64) -> pshape::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let output = [Activation::Tanh, Activation::Identity, Activation::Relu][seed as usize % 3];
    let mlp = Mlp::new(&mut store, "mlp", &[5, 7, 6, 4], output, false, &mut rng);
    randomize(&mut store, &mut rng, 0.5);
    let x = Tensor2::from_vec(3, 5, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    fd_error(
        &store,
        |s| {
            let mut tape = Tape::new(s);
            let xn = tape.input(x.clone());
            let y = mlp.forward(&mut tape, xn)?;
            let loss = project(&mut tape, y)?;
            scalar_and_grads(&tape, loss)
        },
        seed,
    )
}

fn grad_gsn(seed: u64) -> pshape::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = GsnConfig {
        hidden: vec![6, 8],
        features: 10,
    };
    let gsn = Gsn::new(&mut store, "gsn", &cfg, &mut rng);
    randomize(&mut store, &mut rng, 0.5);
    let cloud = random_cloud(&mut rng, 12);
    fd_error(
        &store,
        |s| {
            let mut tape = Tape::new(s);
            let p = tape.input(cloud.to_tensor());
            let v = gsn.forward(&mut tape, p)?;
            let loss = project(&mut tape, v)?;
            scalar_and_grads(&tape, loss)
        },
        seed,
    )
}

fn grad_rotation(seed: u64) -> pshape::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = RotationConfig {
        gsn: GsnConfig {
            hidden: vec![6, 8],
            features: 10,
        },
        hidden: vec![6],
    };
    let block = RotationBlock::new(&mut store, "rot", &cfg, &mut rng);
    randomize(&mut store, &mut rng, 0.4);
    let cloud = random_cloud(&mut rng, 12);
    let reference = cloud.transformed(&euler_matrix([0.3, -0.4, 0.5]));
    fd_error(
        &store,
        |s| {
            let mut tape = Tape::new(s);
            let p = tape.input(cloud.to_tensor());
            let (_, aligned) = block.forward(&mut tape, p)?;
            let r = tape.input(reference.to_tensor());
            let loss = alignment_loss(&mut tape, aligned, r, &exact_l1())?;
            scalar_and_grads(&tape, loss)
        },
        seed,
    )
}

fn grad_encoder(seed: u64) -> pshape::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let head = EncoderHead::new(&mut store, "enc", 10, &[8], 3, false, &mut rng);
    randomize(&mut store, &mut rng, 0.4);
    let v = Tensor2::row((0..10).map(|_| rng.gen_range(0.0..1.0)).collect());
    let eps: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
    fd_error(
        &store,
        |s| {
            let mut tape = Tape::new(s);
            let vn = tape.input(v.clone());
            let post = head.forward(&mut tape, vn)?;
            let z = sample_latent(&mut tape, post, &eps)?;
            let zp = project(&mut tape, z)?;
            let kl = kl_loss(&mut tape, post, KlForm::Standard)?;
            let loss = tape.linear_combination(&[(zp, 1.0), (kl, 0.5)])?;
            scalar_and_grads(&tape, loss)
        },
        seed,
    )
}

fn grad_decoder(seed: u64) -> pshape::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = DecoderConfig { hidden: vec![8, 8] };
    let dec = Decoder::new(&mut store, "dec", &cfg, 3, 2, 6, 2, &mut rng);
    randomize(&mut store, &mut rng, 0.4);
    let z = Tensor2::row((0..3).map(|_| rng.sample(StandardNormal)).collect());
    let cond = ConditionVector::one_hot(2, (seed % 2) as usize)?;
    let target = random_cloud(&mut rng, 6);
    fd_error(
        &store,
        |s| {
            let mut tape = Tape::new(s);
            let zn = tape.input(z.clone());
            let out = dec.forward(&mut tape, zn, &cond)?;
            let t = tape.input(target.to_tensor());
            let rec = tape.transport_cost(out[0], t, &exact_l1(), 1.0 / 6.0)?;
            let proj = project(&mut tape, out[1])?;
            let loss = tape.linear_combination(&[(rec, 1.0), (proj, 1.0)])?;
            scalar_and_grads(&tape, loss)
        },
        seed,
    )
}

fn small_branch(rotation: bool) -> BranchConfig {
    BranchConfig {
        rotation: rotation.then(|| RotationConfig {
            gsn: GsnConfig {
                hidden: vec![6],
                features: 8,
            },
            hidden: vec![6],
        }),
        gsn: GsnConfig {
            hidden: vec![6, 8],
            features: 10,
        },
    }
}

fn grad_discriminative(seed: u64) -> pshape::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = if seed.is_multiple_of(2) {
        Task::Classification { classes: 3 }
    } else {
        Task::Regression
    };
    let cfg = DiscriminativeConfig {
        structures: 2,
        points: 8,
        branch: small_branch(true),
        head_hidden: vec![8],
        task,
        transport: exact_l1(),
    };
    let mut model = DiscriminativeModel::new(cfg, seed)?;
    model.set_references(&[random_cloud(&mut rng, 8), random_cloud(&mut rng, 8)])?;
    randomize(&mut model.params, &mut rng, 0.4);
    let clouds = vec![random_cloud(&mut rng, 8), random_cloud(&mut rng, 8)];
    let target = match task {
        Task::Classification { .. } => Target::Class(1),
        Task::Regression => Target::Value(0.7),
    };
    fd_error(
        &model.params,
        |s| {
            let (report, grads) = model.loss_and_gradients(s, &clouds, target)?;
            Ok((report.total, grads))
        },
        seed,
    )
}

fn grad_generative(seed: u64) -> pshape::Result<f64> {
    grad_generative_with(seed, KlForm::Standard)
}

fn grad_generative_printed(seed: u64) -> pshape::Result<f64> {
    grad_generative_with(seed, KlForm::Printed)
}

fn grad_generative_with(seed: u64, kl_form: KlForm) -> pshape::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GenerativeConfig {
        structures: 2,
        points: 8,
        branch: small_branch(true),
        latent_dim: 2,
        condition_dim: 2,
        posterior_hidden: vec![8],
        decoder: DecoderConfig { hidden: vec![8, 8] },
        kl_form,
        transport: exact_l1(),
        ..GenerativeConfig::default()
    };
    let mut model = GenerativeModel::new(cfg, seed)?;
    model.set_references(&[random_cloud(&mut rng, 8), random_cloud(&mut rng, 8)])?;
    randomize(&mut model.params, &mut rng, 0.4);
    let clouds = vec![random_cloud(&mut rng, 8), random_cloud(&mut rng, 8)];
    let eps: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
    let cond = model.condition_for(Target::Class((seed % 2) as usize))?;
    fd_error(
        &model.params,
        |s| {
            let (report, grads) = model.loss_and_gradients(s, &clouds, &cond, &eps)?;
            Ok((report.total, grads))
        },
        seed,
    )
}

fn gradient_suite() -> Outcome {
    type Check = fn(u64) -> pshape::Result<f64>;
    let checks: [(&str, Check); 8] = [
        ("mlp", grad_mlp),
        ("gsn", grad_gsn),
        ("rotation", grad_rotation),
        ("encoder", grad_encoder),
        ("decoder", grad_decoder),
        ("discriminative loss", grad_discriminative),
        ("generative loss", grad_generative),
        ("generative loss (printed KL)", grad_generative_printed),
    ];
    let mut summary = Vec::new();
    for (name, f) in checks {
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let err = f(seed)?;
            check!(err < 1e-4, "{name} seed {seed}: relative error {err:.3e}");
            worst = worst.max(err);
        }
        summary.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("10 seeds each, worst: {}", summary.join(", ")))
}

fn permuted(rng: &mut impl Rng, cloud: &PointCloud) -> PointCloud {
    let mut pts = cloud.points().to_vec();
    pts.shuffle(rng);
    PointCloud::new(pts)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut store = ParamStore::new();
    let gsn = Gsn::new(&mut store, "gsn", &GsnConfig::with_features(64), &mut rng);
    let gen_cfg = GenerativeConfig {
        structures: 2,
        points: 48,
        branch: small_branch(true),
        latent_dim: 3,
        condition_dim: 2,
        posterior_hidden: vec![16],
        decoder: DecoderConfig { hidden: vec![16] },
        ..GenerativeConfig::default()
    };
    let disc_cfg = DiscriminativeConfig {
        structures: 2,
        points: 48,
        branch: small_branch(true),
        head_hidden: vec![16],
        task: Task::Classification { classes: 3 },
        transport: TransportConfig::default(),
    };
    let mut generative = GenerativeModel::new(gen_cfg, 1)?;
    let mut discriminative = DiscriminativeModel::new(disc_cfg, 2)?;
    let refs = vec![random_cloud(&mut rng, 48), random_cloud(&mut rng, 48)];
    generative.set_references(&refs)?;
    discriminative.set_references(&refs)?;
    randomize(&mut generative.params, &mut rng, 0.4);
    randomize(&mut discriminative.params, &mut rng, 0.4);

    let clouds = vec![random_cloud(&mut rng, 48), random_cloud(&mut rng, 48)];
    let sig = bits(&gsn.signature(&store, &clouds[0])?.0);
    let post = generative.encode(&clouds)?;
    let enc = (bits(&post.mu), bits(&post.log_var));
    let logits = |p: Prediction| match p {
        Prediction::Logits(l) => bits(&l),
        Prediction::Value(v) => bits(&[v]),
    };
    let pred = logits(discriminative.predict(&clouds)?);
    for trial in 0..50 {
        let p: Vec<PointCloud> = clouds.iter().map(|c| permuted(&mut rng, c)).collect();
        check!(
            bits(&gsn.signature(&store, &p[0])?.0) == sig,
            "signature changed under permutation {trial}"
        );
        let post = generative.encode(&p)?;
        check!(
            (bits(&post.mu), bits(&post.log_var)) == enc,
            "encoder output changed under permutation {trial}"
        );
        check!(
            logits(discriminative.predict(&p)?) == pred,
            "discriminative prediction changed under permutation {trial}"
        );
    }
    Ok("signature, encoder and discriminative outputs bit-identical over 50 permutations".into())
}

fn max_coord_diff(a: &PointCloud, b: &PointCloud) -> f64 {
    a.points()
        .iter()
        .zip(b.points())
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs()))
        .fold(0.0, f64::max)
}

fn normalization_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut centroid, mut radius, mut idem, mut equi): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..100 {
        let n = rng.gen_range(2..300);
        let stretch = [
            rng.gen_range(0.1..5.0),
            rng.gen_range(0.1..5.0),
            rng.gen_range(0.1..5.0),
        ];
        let cloud = PointCloud::new(
            random_points(&mut rng, n)
                .into_iter()
                .map(|p| [p[0] * stretch[0] + 3.0, p[1] * stretch[1] - 1.0, p[2] * stretch[2]])
                .collect(),
        );
        let norm = normalize(&cloud)?;
        let c = norm.centroid();
        centroid = centroid.max((c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt());
        let r = norm
            .points()
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max);
        radius = radius.max((r - 1.0).abs());
        idem = idem.max(max_coord_diff(&normalize(&norm)?, &norm));

        let rot = euler_matrix([
            rng.gen_range(-3.1..3.1),
            rng.gen_range(-3.1..3.1),
            rng.gen_range(-3.1..3.1),
        ]);
        let s = rng.gen_range(0.05..20.0);
        let t = [
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        ];
        let moved = PointCloud::new(
            cloud
                .transformed(&rot)
                .points()
                .iter()
                .map(|p| [s * p[0] + t[0], s * p[1] + t[1], s * p[2] + t[2]])
                .collect(),
        );
        equi = equi.max(max_coord_diff(&normalize(&moved)?, &norm.transformed(&rot)));
    }
    check!(centroid < 1e-12, "centroid norm {centroid:.3e}");
    check!(radius < 1e-12, "max point norm off by {radius:.3e}");
    check!(idem < 1e-12, "idempotence deviation {idem:.3e}");
    check!(equi < 1e-12, "similarity equivariance deviation {equi:.3e}");
    Ok(format!(
        "100 clouds: centroid {centroid:.1e}, radius {radius:.1e}, idempotence {idem:.1e}, equivariance {equi:.1e}"
    ))
}

/// The phantom dataset with every cloud and reference normalized, as the
/// manifest loader would produce it.
fn normalized(dataset: &Dataset) -> pshape::Result<Dataset> {
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            Ok(Sample {
                clouds: s.clouds.iter().map(normalize).collect::<pshape::Result<_>>()?,
                ..s.clone()
            })
        })
        .collect::<pshape::Result<Vec<_>>>()?;
    let references = dataset
        .references
        .as_ref()
        .map(|r| r.iter().map(normalize).collect::<pshape::Result<Vec<_>>>())
        .transpose()?;
    Ok(Dataset {
        samples,
        references,
        ..dataset.clone()
    })
}

fn phantom(spec: PhantomSpec) -> pshape::Result<Dataset> {
    normalized(&Phantom::generate(&spec)?.dataset)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn rotation_recovery() -> Outcome {
    let spec = PhantomSpec {
        points: 128,
        per_class: 1100,
        amplitudes: vec![0.0],
        rotation_deg: 45.0,
        deformation_max: 0.1,
        harmonic_max: 0.02,
        seed: 6,
        ..PhantomSpec::default()
    };
    let data = phantom(spec)?;
    let reference = data.reference_clouds()?.remove(0);
    let clouds: Vec<PointCloud> = data.samples.iter().map(|s| s.clouds[0].clone()).collect();
    let (train_set, test_set) = clouds.split_at(1000);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let cfg = RotationConfig {
        gsn: GsnConfig {
            hidden: vec![64, 128],
            features: 128,
        },
        hidden: vec![128, 64],
    };
    let block = RotationBlock::new(&mut store, "rot", &cfg, &mut rng);
    let transport = exact_l1();
    let mut adam = Adam::new(
        &store,
        AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        },
    )?;
    let grads_of = |store: &ParamStore, cloud: &PointCloud| -> pshape::Result<Gradients> {
        let mut tape = Tape::new(store);
        let p = tape.input(cloud.to_tensor());
        let (_, aligned) = block.forward(&mut tape, p)?;
        let r = tape.input(reference.to_tensor());
        let loss = alignment_loss(&mut tape, aligned, r, &transport)?;
        Ok(tape.backward(loss)?.params)
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for _ in 0..100 {
        order.shuffle(&mut rng);
        for batch in order.chunks(10) {
            let per_sample = batch
                .par_iter()
                .map(|&i| grads_of(&store, &train_set[i]))
                .collect::<pshape::Result<Vec<_>>>()?;
            let mut total = store.zero_gradients();
            for g in &per_sample {
                total.add_assign(g);
            }
            total.scale(1.0 / batch.len() as f64);
            adam.step(&mut store, &total)?;
        }
    }
    let score = |aligned: bool| -> pshape::Result<f64> {
        let errs = test_set
            .par_iter()
            .map(|c| {
                let moved = if aligned { block.align(&store, c)?.1 } else { c.clone() };
                mean_emd(moved.points(), reference.points(), &transport)
            })
            .collect::<pshape::Result<Vec<f64>>>()?;
        Ok(errs.iter().sum::<f64>() / errs.len() as f64)
    };
    let (before, after) = (score(false)?, score(true)?);
    let factor = before / after;
    check!(
        factor >= 5.0,
        "alignment EMD {before:.4} -> {after:.4}, only {factor:.2}x"
    );
    Ok(format!(
        "test alignment EMD {before:.4} -> {after:.4} ({factor:.1}x) on 100 clouds rotated up to 45 degrees per axis"
    ))
}

fn classifier_config(points: usize, task: Task, rotation: bool) -> DiscriminativeConfig {
    DiscriminativeConfig {
        structures: 1,
        points,
        branch: BranchConfig {
            rotation: rotation.then(|| RotationConfig {
                gsn: GsnConfig {
                    hidden: vec![16, 32],
                    features: 32,
                },
                hidden: vec![16],
            }),
            gsn: GsnConfig {
                hidden: vec![32, 64],
                features: 64,
            },
        },
        head_hidden: vec![32],
        task,
        transport: TransportConfig::default(),
    }
}

fn phantom_classification() -> Outcome {
    let mut accuracies = Vec::new();
    for seed in 0..5u64 {
        let data = phantom(PhantomSpec {
            points: 512,
            per_class: 150,
            seed,
            ..PhantomSpec::default()
        })?;
        let [train_set, _, test_set] = data.split([2.0 / 3.0, 0.0, 1.0 / 3.0], seed)?;
        check!(
            train_set.len() == 200 && test_set.len() == 100,
            "split sizes {} / {}",
            train_set.len(),
            test_set.len()
        );
        let cfg = classifier_config(512, Task::Classification { classes: 2 }, true);
        let train_cfg = TrainConfig {
            epochs: 25,
            batch_size: 8,
            learning_rate: 1e-3,
            seed,
            patience: 25,
            ..TrainConfig::default()
        };
        let (model, _) = fit(
            ModelConfig::Discriminative(cfg),
            &train_set.reference_clouds()?,
            &train_set.samples,
            &train_set.samples,
            &train_cfg,
        )?;
        accuracies.push(evaluate_classifier(model.as_discriminative()?, &test_set.samples)?.accuracy);
    }
    let med = median(accuracies.clone());
    check!(med >= 0.95, "median test accuracy {med:.3} from {accuracies:?}");
    Ok(format!("median test accuracy {med:.3} over seeds {accuracies:?}"))
}

fn phantom_regression() -> Outcome {
    let data = phantom(PhantomSpec {
        points: 256,
        per_class: 150,
        seed: 8,
        ..PhantomSpec::default()
    })?;
    let [train_set, _, test_set] = data.split([2.0 / 3.0, 0.0, 1.0 / 3.0], 8)?;
    let train_cfg = TrainConfig {
        epochs: 60,
        batch_size: 8,
        learning_rate: 1e-3,
        seed: 8,
        patience: 60,
        ..TrainConfig::default()
    };
    let (model, _) = fit(
        ModelConfig::Discriminative(classifier_config(256, Task::Regression, false)),
        &train_set.reference_clouds()?,
        &train_set.samples,
        &train_set.samples,
        &train_cfg,
    )?;
    let targets: Vec<f64> = train_set.samples.iter().filter_map(|s| s.target).collect();
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let report = evaluate_regressor(model.as_discriminative()?, &test_set.samples, mean)?;
    let gain = 1.0 - report.mae / report.baseline_mae;
    check!(
        gain >= 0.30,
        "MAE {:.4} vs baseline {:.4}, improvement {:.1}%",
        report.mae,
        report.baseline_mae,
        100.0 * gain
    );
    Ok(format!(
        "test MAE {:.4} vs constant-mean {:.4} ({:.0}% better)",
        report.mae,
        report.baseline_mae,
        100.0 * gain
    ))
}

fn curve_of(points: &[CurvePoint], scenario: Scenario) -> Vec<f64> {
    points
        .iter()
        .filter(|p| p.scenario == scenario)
        .map(|p| p.mean_emd)
        .collect()
}

fn reconstruction_trend() -> Outcome {
    let data = phantom(PhantomSpec {
        points: 64,
        per_class: 150,
        structures: 2,
        seed: 9,
        ..PhantomSpec::default()
    })?;
    let splits = Splits::new(&data, [0.6, 0.2, 0.2], 9)?;
    let setup = CurveSetup {
        ks: (1..=5).collect(),
        scenarios: Scenario::ALL.to_vec(),
        generative: GenerativeConfig {
            branch: BranchConfig {
                rotation: None,
                gsn: GsnConfig {
                    hidden: vec![32, 64],
                    features: 64,
                },
            },
            posterior_hidden: vec![64],
            decoder: DecoderConfig {
                hidden: vec![64, 128],
            },
            weights: LossWeights {
                align: 1.0,
                rec: 1.0,
                latent: 1e-5,
            },
            ..GenerativeConfig::default()
        },
        train: TrainConfig {
            epochs: 400,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 9,
            patience: 400,
            ..TrainConfig::default()
        },
    };
    let points = reconstruction_curve(&splits, &setup, None, |p| {
        eprintln!(
            "  curve {} k={} mean EMD {:.5}",
            p.scenario, p.k_per_structure, p.mean_emd
        )
    })?;
    let mut rows = Vec::new();
    for scenario in Scenario::ALL {
        let curve = curve_of(&points, scenario);
        for k in 1..curve.len() {
            check!(
                curve[k] <= curve[k - 1] * 1.05,
                "{scenario}: k={} EMD {:.5} exceeds k={} EMD {:.5} by more than 5%",
                k + 1,
                curve[k],
                k,
                curve[k - 1]
            );
        }
        rows.push(format!(
            "{scenario} [{}]",
            curve.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
        ));
    }
    let joint = curve_of(&points, Scenario::MultiCond)[1];
    let single = curve_of(&points, Scenario::SingleCond)[3];
    let gap = (joint - single).abs() / single;
    check!(
        gap <= 0.10,
        "multi-cond at total k=4 ({joint:.5}) differs from single-cond k=4 ({single:.5}) by {:.1}%",
        100.0 * gap
    );
    Ok(format!(
        "{}; multi-cond total k=4 vs single-cond k=4 gap {:.1}%",
        rows.join(", "),
        100.0 * gap
    ))
}

fn synth_trend() -> Outcome {
    let data = phantom(PhantomSpec {
        points: 128,
        per_class: 150,
        amplitudes: vec![0.0, 0.5],
        seed: 10,
        ..PhantomSpec::default()
    })?;
    let splits = Splits::new(&data, [0.6, 0.1, 0.3], 10)?;
    let gen_cfg = GenerativeConfig {
        points: 128,
        branch: BranchConfig {
            rotation: None,
            gsn: GsnConfig {
                hidden: vec![32, 64],
                features: 64,
            },
        },
        latent_dim: 4,
        condition_dim: 2,
        posterior_hidden: vec![64],
        decoder: DecoderConfig {
            hidden: vec![64, 256],
        },
        weights: LossWeights {
            align: 1.0,
            rec: 1.0,
            latent: 1e-2,
        },
        ..GenerativeConfig::default()
    };
    let gen_train = TrainConfig {
        epochs: 150,
        batch_size: 8,
        learning_rate: 1e-3,
        seed: 10,
        patience: 150,
        ..TrainConfig::default()
    };
    let (generator, _) = fit(
        ModelConfig::Generative(gen_cfg),
        &splits.train.reference_clouds()?,
        &splits.train.samples,
        &splits.val.samples,
        &gen_train,
    )?;
    let setup = SynthSetup {
        classifier: classifier_config(128, Task::Classification { classes: 2 }, false),
        train: TrainConfig {
            epochs: 10,
            batch_size: 8,
            learning_rate: 1e-3,
            patience: 10,
            ..TrainConfig::default()
        },
        ..SynthSetup::default()
    };
    let mut by_size: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for seed in 0..5u64 {
        let points = synth_then_classify(
            generator.as_generative()?,
            &setup,
            &splits.test.samples,
            100 + seed,
            |_| {},
        )?;
        for p in points {
            by_size.entry(p.size).or_default().push(p.accuracy);
        }
    }
    let medians: Vec<(usize, f64)> = by_size.into_iter().map(|(k, v)| (k, median(v))).collect();
    for w in medians.windows(2) {
        check!(
            w[1].1 >= w[0].1,
            "median accuracy drops from {:.3} at size {} to {:.3} at size {}",
            w[0].1,
            w[0].0,
            w[1].1,
            w[1].0
        );
    }
    let last = medians.last().map_or(0.0, |m| m.1);
    check!(last >= 0.90, "size-1000 median accuracy {last:.3}");
    Ok(format!(
        "median accuracy by size {}",
        medians
            .iter()
            .map(|(s, a)| format!("{s}:{a:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    ))
}

const E2E_CONFIG: &str = r#"{
  "train": {"epochs": 3, "batch_size": 4, "learning_rate": 0.003, "seed": 11},
  "model": {
    "features": 16, "gsn_hidden": [8, 16],
    "rotation_features": 8, "rotation_gsn_hidden": [8], "rotation_hidden": [8],
    "head_hidden": [8], "latent_dim": 2, "posterior_hidden": [8], "decoder_hidden": [16, 32]
  },
  "transport": {"solver": "exact"},
  "curve": {"ks": [1, 2]}
}"#;

fn pshape_cli(args: &[&str], threads: &str) -> pshape::Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_pshape"))
        .args(args)
        .env("PSHAPE_THREADS", threads)
        .output()
        .map_err(|e| Error::io("pshape binary", e))?;
    if !out.status.success() {
        return Err(Error::data(format!(
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    Ok(())
}

fn end_to_end(root: &Path, threads: &str) -> pshape::Result<()> {
    let p = |rel: &str| root.join(rel).to_string_lossy().into_owned();
    fs::write(root.join("config.json"), E2E_CONFIG).map_err(|e| Error::io(root, e))?;
    let run = |args: &[&str]| pshape_cli(args, threads);
    run(&["phantom", "--out", &p("data"), "--seed", "11", "--set", "points=32", "--set", "per_class=10"])?;
    let manifest = p("data/manifest.json");
    for kind in ["discriminative", "generative"] {
        run(&["train", kind, "--config", &p("config.json"), "--manifest", &manifest, "--out", &p(kind)])?;
    }
    run(&["eval", "classify", "--checkpoint", &p("discriminative/model.psaf"), "--manifest", &manifest, "--out", &p("eval")])?;
    run(&["eval", "recon-curve", "--config", &p("config.json"), "--manifest", &manifest, "--out", &p("curve")])?;
    run(&["generate", "--checkpoint", &p("generative/model.psaf"), "--out", &p("samples"), "--count", "3", "--seed", "5", "--condition", "1,0"])?;
    run(&["generate", "--checkpoint", &p("generative/model.psaf"), "--out", &p("maps"), "--count", "2", "--seed", "6", "--condition", "1,0", "--condition", "0,1"])?;
    Ok(())
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).expect("readable directory") {
            let p = e.expect("directory entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).expect("readable file");
                out.insert(p.strip_prefix(dir).expect("nested path").to_path_buf(), bytes);
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("run");
    let mut trees = Vec::new();
    for threads in ["1", "2"] {
        fs::create_dir_all(&root)?;
        end_to_end(&root, threads)?;
        trees.push(tree(&root));
        fs::remove_dir_all(&root)?;
    }
    let (ta, tb) = (&trees[0], &trees[1]);
    let names: Vec<&PathBuf> = ta.keys().collect();
    check!(
        names == tb.keys().collect::<Vec<_>>(),
        "runs produced different file sets"
    );
    for (name, bytes) in ta {
        check!(&tb[name] == bytes, "{} differs between runs", name.display());
    }
    let count = |ext: &str| {
        names
            .iter()
            .filter(|n| n.extension().is_some_and(|e| e == ext))
            .count()
    };
    check!(
        count("psaf") >= 2 && count("csv") >= 3 && count("ply") >= 7,
        "expected checkpoints, CSVs and PLY files, got {names:?}"
    );
    Ok(format!(
        "{} files byte-identical across runs with 1 and 2 threads ({} checkpoints, {} CSV, {} PLY)",
        ta.len(),
        count("psaf"),
        count("csv"),
        count("ply")
    ))
}

fn outputs_of(model: &Model, clouds: &[PointCloud]) -> pshape::Result<Vec<u64>> {
    let mut out = Vec::new();
    match model {
        Model::Discriminative(m) => {
            match m.predict(clouds)? {
                Prediction::Logits(l) => out.extend(bits(&l)),
                Prediction::Value(v) => out.push(v.to_bits()),
            }
            out.extend(bits(&m.joint_signature(clouds)?));
        }
        Model::Generative(m) => {
            let post = m.encode(clouds)?;
            out.extend(bits(&post.mu));
            out.extend(bits(&post.log_var));
            let c = ConditionVector::one_hot(m.config.condition_dim, 1)?;
            for cloud in m.generate(&vec![0.3; m.config.latent_dim], &c)? {
                out.extend(cloud.points().iter().flat_map(|p| bits(p)));
            }
            let (rec, aligned) = m.reconstruct(clouds, &c)?;
            for cloud in rec.iter().chain(&aligned) {
                out.extend(cloud.points().iter().flat_map(|p| bits(p)));
            }
        }
    }
    Ok(out)
}

fn checkpoint_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let dir = tempfile::tempdir()?;
    let configs = [
        ModelConfig::Discriminative(DiscriminativeConfig {
            structures: 2,
            points: 16,
            branch: small_branch(true),
            head_hidden: vec![8],
            task: Task::Classification { classes: 3 },
            transport: TransportConfig::default(),
        }),
        ModelConfig::Discriminative(DiscriminativeConfig {
            structures: 1,
            points: 16,
            branch: small_branch(false),
            head_hidden: vec![8],
            task: Task::Regression,
            transport: TransportConfig::default(),
        }),
        ModelConfig::Generative(GenerativeConfig {
            structures: 2,
            points: 16,
            branch: small_branch(true),
            latent_dim: 3,
            condition_dim: 2,
            posterior_hidden: vec![8],
            decoder: DecoderConfig { hidden: vec![8] },
            ..GenerativeConfig::default()
        }),
    ];
    for (i, config) in configs.into_iter().enumerate() {
        let structures = config.structures();
        let mut model = Model::new(config, i as u64)?;
        let refs: Vec<PointCloud> = (0..structures).map(|_| random_cloud(&mut rng, 16)).collect();
        model.set_references(&refs)?;
        randomize(model.params_mut(), &mut rng, 0.3);
        let path = dir.path().join(format!("m{i}.psaf"));
        pshape::training::save_checkpoint(&model, 7, &path)?;
        let loaded = load_checkpoint(&path)?;
        check!(loaded.header.epochs_completed == 7, "epoch count lost");
        let clouds: Vec<PointCloud> = (0..structures).map(|_| random_cloud(&mut rng, 16)).collect();
        check!(
            outputs_of(&model, &clouds)? == outputs_of(&loaded.model, &clouds)?,
            "model {i}: outputs differ after reload"
        );
        check!(
            checkpoint_bytes(&loaded.model, 7) == fs::read(&path)?,
            "model {i}: re-saving changes the bytes"
        );
    }

    let good = fs::read(dir.path().join("m2.psaf"))?;
    let header_len = u32::from_le_bytes(good[8..12].try_into()?) as usize;
    let mut cases: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut bad_magic = good.clone();
    bad_magic[0] ^= 0xff;
    cases.push(("bad magic", bad_magic));
    let mut bad_version = good.clone();
    bad_version[4] = 9;
    cases.push(("unknown version", bad_version));
    cases.push(("truncated", good[..good.len() / 2].to_vec()));
    cases.push(("empty", Vec::new()));
    let mut flipped = good.clone();
    let blob_byte = 12 + header_len + 20;
    flipped[blob_byte] ^= 0x01;
    cases.push(("flipped payload bit", flipped));
    let mut trailing = good.clone();
    trailing.push(0);
    cases.push(("trailing bytes", trailing));
    let mut bad_header = good.clone();
    bad_header[12] = b'[';
    cases.push(("malformed header", bad_header));
    for (name, bytes) in &cases {
        match parse_checkpoint(bytes, Path::new("case.psaf")) {
            Err(Error::Corrupt { .. }) => {}
            Err(e) => return Err(format!("{name}: wrong error kind {e}").into()),
            Ok(_) => return Err(format!("{name}: accepted").into()),
        }
    }
    let missing = load_checkpoint(&dir.path().join("absent.psaf"));
    check!(
        matches!(missing, Err(Error::Io { .. })),
        "missing file gives {missing:?}"
    );
    Ok(format!(
        "3 models reload bit-exactly; {} corruptions rejected as corrupt checkpoints, missing file as io error",
        cases.len()
    ))
}
