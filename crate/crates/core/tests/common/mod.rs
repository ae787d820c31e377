#![allow(dead_code)]

use std::path::PathBuf;

use attn_align::data::{decoy_example, load_idx, synthesize, Corner, DatasetKind, DatasetSplit, MnistRaw, Palette, SynthOptions};
use attn_align::nn::{
    cam_from_features, conv2d_backward, conv2d_forward, gap_backward, gap_forward, linear_backward, linear_forward,
    maxpool2d_backward, maxpool2d_forward, relu_backward, Conv2dParams, LinearParams, ModelParams,
    DEFAULT_CAM_EPS,
};
use attn_align::teacher::BinaryMask;
use attn_align::tensor::{relative_error, SeededRng, Tensor, DEFAULT_FD_STEP};
use attn_align::training::{attention_loss, cross_entropy, objective_and_gradient, objective_value};

pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

pub fn mnist_paths() -> [PathBuf; 4] {
    let d = mnist_dir();
    [
        d.join("train-images-idx3-ubyte.gz"),
        d.join("train-labels-idx1-ubyte.gz"),
        d.join("t10k-images-idx3-ubyte.gz"),
        d.join("t10k-labels-idx1-ubyte.gz"),
    ]
}

pub fn load_mnist() -> (MnistRaw, MnistRaw) {
    let [a, b, c, d] = mnist_paths();
    (load_idx(&a, &b).expect("train IDX"), load_idx(&c, &d).expect("test IDX"))
}

pub fn real_split(kind: DatasetKind, train: usize, test: usize, seed: u64) -> DatasetSplit {
    let (tr, te) = load_mnist();
    let opts = SynthOptions {
        train_limit: Some(train),
        test_limit: Some(test),
        ..SynthOptions::default()
    };
    synthesize(kind, &tr, &te, seed, &Palette::default(), &opts).expect("synthesis")
}

// ---- morphology by direct neighborhood scan --------------------------------

fn scan(m: &BinaryMask, r: usize, any: bool) -> BinaryMask {
    let (h, w) = (m.height() as i64, m.width() as i64);
    let r = r as i64;
    let mut out = BinaryMask::empty(m.height(), m.width());
    for y in 0..h {
        for x in 0..w {
            let mut hit = !any;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    let v = yy >= 0 && yy < h && xx >= 0 && xx < w && m.get(yy as usize, xx as usize);
                    if any {
                        hit |= v;
                    } else {
                        hit &= v;
                    }
                }
            }
            out.set(y as usize, x as usize, hit);
        }
    }
    out
}

/// Max over the (2r+1)² square; pixels outside the grid read as 0.
pub fn bf_dilate(m: &BinaryMask, r: usize) -> BinaryMask {
    scan(m, r, true)
}

/// Min over the (2r+1)² square; pixels outside the grid read as 0.
pub fn bf_erode(m: &BinaryMask, r: usize) -> BinaryMask {
    scan(m, r, false)
}

pub fn bf_edge_band(m: &BinaryMask, r: usize) -> BinaryMask {
    let d = bf_dilate(m, r);
    let e = bf_erode(m, r);
    let mut ring = BinaryMask::empty(m.height(), m.width());
    for y in 0..m.height() {
        for x in 0..m.width() {
            ring.set(y, x, d.get(y, x) && !e.get(y, x));
        }
    }
    bf_dilate(&ring, 1)
}

/// Mixture of sparse noise and filled rectangles at a random density.
pub fn random_mask(rng: &mut SeededRng) -> BinaryMask {
    let mut m = BinaryMask::empty(28, 28);
    let density = rng.uniform() * 0.5;
    for y in 0..28 {
        for x in 0..28 {
            m.set(y, x, rng.uniform() < density);
        }
    }
    for _ in 0..rng.below(4) {
        let (y0, x0) = (rng.below(28), rng.below(28));
        let (y1, x1) = ((y0 + rng.below(14)).min(28), (x0 + rng.below(14)).min(28));
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(y, x, true);
            }
        }
    }
    m
}

// ---- gradient checks ---------------------------------------------------------

pub const GRAD_TOL: f64 = 1e-4;
/// Magnitude below which gradients are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-5;

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central difference at coordinate `i`, or `None` when the difference is
/// not trustworthy at this step: the stencil straddles a kink (ReLU or
/// max-pool switch), so the one-sided slopes disagree, or curvature is so
/// high that halving the step moves the estimate by more than the tolerance.
fn fd_at(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, i: usize) -> Option<f64> {
    let h = DEFAULT_FD_STEP;
    let mut p = x.clone();
    let mut eval = |d: f64| {
        p.data_mut()[i] = x.data()[i] + d;
        f(&p)
    };
    let mid = eval(0.0);
    let (plus, minus) = (eval(h), eval(-h));
    let (plus2, minus2) = (eval(h / 2.0), eval(-h / 2.0));
    let (right, left) = ((plus - mid) / h, (mid - minus) / h);
    let fd = (plus - minus) / (2.0 * h);
    let fd2 = (plus2 - minus2) / h;
    let smooth = relative_error(right, left, 1e-2) < 1e-3 && relative_error(fd, fd2, GRAD_FLOOR) < GRAD_TOL / 4.0;
    smooth.then_some(fd)
}

/// Running maximum of relative errors plus the number of skipped probes.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradStats {
    pub max_error: f64,
    pub probes: usize,
    pub kinks: usize,
}

impl GradStats {
    fn merge(&mut self, o: GradStats) {
        self.max_error = self.max_error.max(o.max_error);
        self.probes += o.probes;
        self.kinks += o.kinks;
    }

    fn probe(&mut self, analytic: f64, fd: Option<f64>) {
        self.probes += 1;
        match fd {
            Some(fd) => self.max_error = self.max_error.max(relative_error(analytic, fd, GRAD_FLOOR)),
            None => self.kinks += 1,
        }
    }

    /// Passes when errors are within tolerance and kinks were rare enough
    /// that the check is not vacuous.
    pub fn ok(&self) -> bool {
        self.max_error < GRAD_TOL && self.kinks * 10 <= self.probes
    }
}

/// Compares `analytic` with central differences of `f` at up to `samples`
/// random coordinates (all of them when `samples` is `None`).
fn compare(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    samples: Option<usize>,
    rng: &mut SeededRng,
) -> GradStats {
    let idx: Vec<usize> = match samples {
        Some(n) if n < x.len() => (0..n).map(|_| rng.below(x.len())).collect(),
        _ => (0..x.len()).collect(),
    };
    let mut st = GradStats::default();
    for i in idx {
        st.probe(analytic.data()[i], fd_at(&mut f, x, i));
    }
    st
}

/// Maximum relative error per checked component over `instances` random
/// draws. Each layer sees the scalar `⟨r, y⟩` for a random projection `r`.
pub fn layer_gradient_errors(instances: usize, seed: u64) -> Vec<(&'static str, GradStats)> {
    let mut rng = SeededRng::new(seed);
    let mut out: Vec<(&'static str, GradStats)> = Vec::new();
    let mut record = |name: &'static str, e: GradStats| match out.iter_mut().find(|(n, _)| *n == name) {
        Some(slot) => slot.1.merge(e),
        None => out.push((name, e)),
    };
    for _ in 0..instances {
        // Convolutions at the three model geometries, on reduced spatial sizes.
        for (name, ic, oc, k, side) in [
            ("conv1", 3, 16, 5, 8),
            ("conv2", 16, 32, 5, 6),
            ("conv3", 32, 64, 3, 4),
        ] {
            let p = Conv2dParams::init(ic, oc, k, &mut rng);
            let x = Tensor::uniform(&[1, ic, side, side], -1.0, 1.0, &mut rng);
            let (y, cache) = conv2d_forward(&p, &x).unwrap();
            let r = Tensor::uniform(y.shape(), -1.0, 1.0, &mut rng);
            let (dx, dw, db) = conv2d_backward(&p, &cache, &r, true).unwrap();
            let e_x = compare(|t| dot(&conv2d_forward(&p, t).unwrap().0, &r), &x, &dx.unwrap(), Some(40), &mut rng);
            let e_w = compare(
                |t| {
                    let q = Conv2dParams {
                        weights: t.clone(),
                        bias: p.bias.clone(),
                    };
                    dot(&conv2d_forward(&q, &x).unwrap().0, &r)
                },
                &p.weights,
                &dw,
                Some(40),
                &mut rng,
            );
            let e_b = compare(
                |t| {
                    let q = Conv2dParams {
                        weights: p.weights.clone(),
                        bias: t.clone(),
                    };
                    dot(&conv2d_forward(&q, &x).unwrap().0, &r)
                },
                &p.bias,
                &db,
                None,
                &mut rng,
            );
            let mut st = e_x;
            st.merge(e_w);
            st.merge(e_b);
            record(name, st);
        }

        let x = Tensor::uniform(&[2, 3, 6, 6], -1.0, 1.0, &mut rng);
        let r = Tensor::uniform(x.shape(), -1.0, 1.0, &mut rng);
        let dx = relu_backward(&x, &r).unwrap();
        record("relu", compare(|t| dot(&t.relu(), &r), &x, &dx, None, &mut rng));

        let (y, cache) = maxpool2d_forward(&x).unwrap();
        let r = Tensor::uniform(y.shape(), -1.0, 1.0, &mut rng);
        let dx = maxpool2d_backward(&cache, &r).unwrap();
        record(
            "maxpool",
            compare(|t| dot(&maxpool2d_forward(t).unwrap().0, &r), &x, &dx, None, &mut rng),
        );

        let a = Tensor::uniform(&[2, 4, 7, 7], -1.0, 1.0, &mut rng);
        let r = Tensor::uniform(&[2, 4], -1.0, 1.0, &mut rng);
        let da = gap_backward(&r).unwrap();
        record("gap", compare(|t| dot(&gap_forward(t).unwrap(), &r), &a, &da, None, &mut rng));

        let p = LinearParams::init(64, 10, &mut rng);
        let x = Tensor::uniform(&[2, 64], -1.0, 1.0, &mut rng);
        let r = Tensor::uniform(&[2, 10], -1.0, 1.0, &mut rng);
        let (dx, dw, db) = linear_backward(&p, &x, &r).unwrap();
        let with = |w: &Tensor, b: &Tensor| LinearParams {
            weights: w.clone(),
            bias: b.clone(),
        };
        let mut st = compare(|t| dot(&linear_forward(&p, t).unwrap(), &r), &x, &dx, None, &mut rng);
        st.merge(compare(|t| dot(&linear_forward(&with(t, &p.bias), &x).unwrap(), &r), &p.weights, &dw, None, &mut rng));
        st.merge(compare(|t| dot(&linear_forward(&with(&p.weights, t), &x).unwrap(), &r), &p.bias, &db, None, &mut rng));
        record("linear", st);

        // Cross-entropy and KL in isolation.
        let z = Tensor::uniform(&[1, 10], -3.0, 3.0, &mut rng);
        let y = rng.below(10);
        let (_, dz) = cross_entropy(&z, &[y]).unwrap();
        record("cross_entropy", compare(|t| cross_entropy(t, &[y]).unwrap().0, &z, &dz, None, &mut rng));
        let s = Tensor::uniform(&[7, 7], 0.05, 1.0, &mut rng);
        let m = Tensor::uniform(&[7, 7], 0.05, 1.0, &mut rng);
        let m = m.scale(1.0 / m.sum());
        let (_, ds) = attention_loss(&s, &m).unwrap();
        record("attention_loss", compare(|t| attention_loss(t, &m).unwrap().0, &s, &ds, None, &mut rng));

        // CAM + KL against the features and the head weights.
        let feats = Tensor::uniform(&[1, 64, 7, 7], 0.0, 1.0, &mut rng);
        let head = LinearParams::init(64, 10, &mut rng);
        let class = rng.below(10);
        let teacher = Tensor::uniform(&[7, 7], 0.01, 1.0, &mut rng);
        let teacher = teacher.scale(1.0 / teacher.sum());
        let kl_of = |f: &Tensor, h: &LinearParams| {
            let s = cam_from_features(f, h, 0, class, DEFAULT_CAM_EPS).unwrap();
            attention_loss(s.grid(), &teacher).unwrap().0
        };
        let s = cam_from_features(&feats, &head, 0, class, DEFAULT_CAM_EPS).unwrap();
        let (_, ds) = attention_loss(s.grid(), &teacher).unwrap();
        let mut d_feat = Tensor::zeros_like(&feats);
        let mut d_w = Tensor::zeros_like(&head.weights);
        s.backward(&feats, &head, ds.data(), &mut d_feat, &mut d_w).unwrap();
        let mut st = compare(|t| kl_of(t, &head), &feats, &d_feat, Some(60), &mut rng);
        st.merge(compare(|t| kl_of(&feats, &with(t, &head.bias)), &head.weights, &d_w, None, &mut rng));
        record("cam_kl", st);
    }
    out
}

/// Maximum relative error of the end-to-end objective gradient (CE + λ·KL,
/// or KL alone) on single-example batches, sampling `per_tensor`
/// coordinates of every parameter tensor.
///
/// Inputs are dense random images: the exact zero background of real digits
/// produces max-pool ties whose one-sided slopes differ, where central
/// differences average two subgradients.
pub fn joint_gradient_error(instances: usize, per_tensor: usize, lambda: Option<f64>, seed: u64) -> GradStats {
    let mut rng = SeededRng::new(seed);
    let mut st = GradStats::default();
    for inst in 0..instances {
        let params = ModelParams::init(&mut rng.child_u64(inst as u64));
        let label = rng.below(10);
        let ex = decoy_example(Tensor::uniform(&[28, 28], 0.0, 1.0, &mut rng), label, Corner::ALL[rng.below(4)], label);
        let teacher = Tensor::uniform(&[7, 7], 0.01, 1.0, &mut rng);
        let teacher = teacher.scale(1.0 / teacher.sum());
        let (_, grads) = objective_and_gradient(&params, &[&ex], &[&teacher], lambda, DEFAULT_CAM_EPS).unwrap();
        for ti in 0..params.tensors().len() {
            let x = params.tensors()[ti].clone();
            for _ in 0..per_tensor {
                let i = rng.below(x.len());
                let fd = fd_at(
                    |t| {
                        let mut p = params.clone();
                        *p.tensors_mut()[ti] = t.clone();
                        objective_value(&p, &[&ex], &[&teacher], lambda, DEFAULT_CAM_EPS).unwrap()
                    },
                    &x,
                    i,
                );
                st.probe(grads.tensors()[ti].data()[i], fd);
            }
        }
    }
    st
}

// ---- shared contract checks ----------------------------------------------------

fn unit_sum(t: &Tensor, what: &str) -> Result<(), String> {
    if let Some(v) = t.data().iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(format!("{what}: negative entry {v}"));
    }
    let s = t.sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(format!("{what}: sum {s}"));
    }
    Ok(())
}

/// CAMs, teacher maps and the KL term over `n` random inputs.
pub fn check_distribution_contracts(n: usize, seed: u64) -> Result<String, String> {
    use attn_align::data::DatasetKind;
    use attn_align::nn::model_infer;
    use attn_align::teacher::{build_teacher, downsample_teacher, normalize_map, MorphParams, TeacherSource};

    let mut rng = SeededRng::new(seed);
    let mut min_positive_kl = f64::INFINITY;
    for i in 0..n {
        // Every fourth model is all-zero so the ε floor alone carries the CAM.
        let params = if i % 4 == 3 {
            ModelParams::zeros()
        } else {
            ModelParams::init(&mut rng.child_u64(i as u64))
        };
        let image = Tensor::uniform(&[1, 3, 28, 28], 0.0, 1.0, &mut rng);
        let (_, features) = model_infer(&params, &image).map_err(|e| e.to_string())?;
        let class = rng.below(10);
        let s = cam_from_features(&features, &params.head, 0, class, DEFAULT_CAM_EPS).map_err(|e| e.to_string())?;
        unit_sum(s.grid(), &format!("CAM {i}"))?;

        let digit = Tensor::uniform(&[28, 28], 0.0, 1.0, &mut rng).map(|v| if v > 0.6 { v } else { 0.0 });
        let kind = if i % 2 == 0 { DatasetKind::Colored } else { DatasetKind::Decoy };
        let ex = decoy_example(digit, class, Corner::ALL[i % 4], class);
        let t = build_teacher(&ex, kind, &MorphParams::default());
        unit_sum(t.grid(), &format!("teacher {i}"))?;
        let t7 = downsample_teacher(&t).map_err(|e| e.to_string())?;
        unit_sum(t7.grid(), &format!("downsampled teacher {i}"))?;
        let ext = Tensor::uniform(&[7, 7], 0.0, 5.0, &mut rng);
        let m = normalize_map(&ext, 1e-6, TeacherSource::External).map_err(|e| e.to_string())?;
        unit_sum(m.grid(), &format!("external map {i}"))?;

        let self_kl = attention_loss(s.grid(), s.grid()).map_err(|e| e.to_string())?.0;
        if self_kl != 0.0 {
            return Err(format!("KL(S, S) = {self_kl} for input {i}"));
        }
        let kl = attention_loss(s.grid(), t7.grid()).map_err(|e| e.to_string())?.0;
        let gap = s.grid().data().iter().zip(t7.grid().data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if kl < 0.0 || (gap > DEFAULT_CAM_EPS && kl <= 0.0) {
            return Err(format!("KL {kl} for maps differing by {gap} (input {i})"));
        }
        if gap > DEFAULT_CAM_EPS {
            min_positive_kl = min_positive_kl.min(kl);
        }
    }
    Ok(format!("{n} inputs, smallest KL between distinct maps {min_positive_kl:.3e}"))
}

/// Phase boundary, optimizer reset, and λ trace in a recorded run.
pub fn check_schedule_contracts(split: &DatasetSplit, cfg: &attn_align::training::TrainConfig) -> Result<String, String> {
    use attn_align::training::{train_two_phase_observed, Phase, Teachers, TrainEvent};

    let teachers = Teachers::oracle(split, &cfg.morph);
    let mut problems: Vec<String> = Vec::new();
    let mut first_joint_seen = false;
    let mut resets = 0;
    let mut lambdas: Vec<(usize, Option<f64>)> = Vec::new();
    let run = train_two_phase_observed(cfg, split, &teachers, &mut |ev| match ev {
        TrainEvent::Reset { epoch, params_before, params_after, state } => {
            resets += 1;
            if epoch != cfg.e_attn {
                problems.push(format!("reset at epoch {epoch}"));
            }
            if params_before != params_after {
                problems.push("weights changed across reset".into());
            }
            if state.velocity_norm() != 0.0 {
                problems.push("velocity not cleared at reset".into());
            }
        }
        TrainEvent::Step { epoch, batch, phase, lambda, state } => {
            let expected = if epoch < cfg.e_attn { Phase::Attention } else { Phase::Joint };
            if phase != expected {
                problems.push(format!("epoch {epoch} batch {batch} in phase {phase}"));
            }
            if phase == Phase::Joint && !first_joint_seen {
                first_joint_seen = true;
                if epoch != cfg.e_attn || batch != 0 {
                    problems.push(format!("first joint step at epoch {epoch} batch {batch}"));
                }
                if state.velocity_norm() != 0.0 {
                    problems.push(format!("velocity norm {} at first joint step", state.velocity_norm()));
                }
                if state.current_lr() != cfg.sgd.initial_lr {
                    problems.push(format!("lr {} at first joint step", state.current_lr()));
                }
            }
            if batch == 0 {
                lambdas.push((epoch, lambda));
            }
        }
        TrainEvent::EpochEnd(_) => {}
    })
    .map_err(|e| e.to_string())?;
    if resets != usize::from(cfg.e_attn < cfg.epochs) {
        problems.push(format!("{resets} resets"));
    }
    for (e, lam) in &lambdas {
        let expected = (*e >= cfg.e_attn).then(|| cfg.lambda0 * (1.0 + 0.1 * (*e - cfg.e_attn) as f64));
        if *lam != expected {
            problems.push(format!("epoch {e}: λ {lam:?}, expected {expected:?}"));
        }
    }
    for m in &run.report.per_epoch {
        if m.lambda != lambdas[m.epoch].1 || (m.train_ce.is_some() != (m.epoch >= cfg.e_attn)) {
            problems.push(format!("epoch {} metrics row inconsistent", m.epoch));
        }
    }
    if problems.is_empty() {
        Ok(format!("{} epochs, phase flip at {}, λ trace exact", cfg.epochs, cfg.e_attn))
    } else {
        Err(problems.join("; "))
    }
}

/// dilate/erode/edge_band against the neighborhood scan on `n` random masks.
pub fn check_morphology(n: usize, seed: u64) -> Result<String, String> {
    use attn_align::teacher::{dilate, edge_band, erode};
    let mut rng = SeededRng::new(seed);
    for i in 0..n {
        let m = random_mask(&mut rng);
        for r in 0..=3 {
            if dilate(&m, r) != bf_dilate(&m, r) {
                return Err(format!("dilate differs on mask {i}, r={r}"));
            }
            if erode(&m, r) != bf_erode(&m, r) {
                return Err(format!("erode differs on mask {i}, r={r}"));
            }
            if r >= 1 && edge_band(&m, r) != bf_edge_band(&m, r) {
                return Err(format!("edge band differs on mask {i}, r={r}"));
            }
        }
    }
    Ok(format!("{n} masks, radii 0..=3, exact"))
}
