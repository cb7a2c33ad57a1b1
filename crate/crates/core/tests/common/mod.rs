#![allow(dead_code)]

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use tracker_core::dda::{
    build_target_matrix, dda_loss_var, match_tracks_to_objects, match_tracks_with, rematched_loss,
    AssociationMatrix, ClutterTarget, DdaConfig, DdaModel,
};
use tracker_core::metrics::{tgospa, tgospa_bruteforce, TrajectorySet};
use tracker_core::nn::{Graph, Mode, ParamSet, Var};
use tracker_core::partition::partition_by_labels;
use tracker_core::rng::stream;
use tracker_core::sim::{simulate_scene, CLUTTER_LABEL};
use tracker_core::smoother::model::component_loss_var;
use tracker_core::smoother::{component_loss, DsConfig, DsModel};
use tracker_core::{
    ExtractedTrajectory, GroundTruthTrajectory, Scene, SingleState, TaskConfig, TgospaParams,
    TrajectoryEstimate,
};

pub type Check = Result<String, String>;

pub fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn random_state(rng: &mut impl Rng) -> [f64; 4] {
    [
        rng.random_range(0.0..15.0),
        rng.random_range(-6.0..6.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
    ]
}

pub fn random_trajectory(rng: &mut impl Rng, window: usize) -> ExtractedTrajectory {
    let t_s = rng.random_range(1..=window);
    let len = rng.random_range(1..=window - t_s + 1);
    ExtractedTrajectory {
        p_bar: None,
        t_s,
        states: (0..len).map(|_| random_state(rng)).collect(),
    }
}

/// Copy of `tr` with every coordinate shifted by up to `spread`.
pub fn jitter(rng: &mut impl Rng, tr: &ExtractedTrajectory, spread: f64) -> ExtractedTrajectory {
    ExtractedTrajectory {
        p_bar: None,
        t_s: tr.t_s,
        states: tr
            .states
            .iter()
            .map(|s| s.map(|v| v + rng.random_range(-spread..spread)))
            .collect(),
    }
}

/// A pair of sets where some estimates track truths closely, some loosely
/// and some are unrelated, so every TGOSPA term is exercised.
pub fn random_pair(
    rng: &mut impl Rng,
    max_len: usize,
    window: usize,
) -> (TrajectorySet, TrajectorySet) {
    let nx = rng.random_range(0..=max_len);
    let mut x: Vec<_> = (0..nx).map(|_| random_trajectory(rng, window)).collect();
    let mut y = Vec::new();
    // An estimate that follows one truth and then another forces a switch.
    if nx >= 2 && window >= 2 && rng.random_bool(0.5) {
        for tr in x.iter_mut().take(2) {
            tr.t_s = 1;
            while tr.states.len() < window {
                tr.states.push(random_state(rng));
            }
        }
        let cut = rng.random_range(2..=window);
        let states = (1..=window)
            .map(|t| {
                let src = if t < cut { &x[0] } else { &x[1] };
                src.state_at(t)
                    .unwrap()
                    .map(|v| v + rng.random_range(-0.5..0.5))
            })
            .collect();
        y.push(ExtractedTrajectory {
            p_bar: None,
            t_s: 1,
            states,
        });
    }
    for tr in &x {
        if y.len() < max_len && rng.random_bool(0.7) {
            let spread = if rng.random_bool(0.5) { 1.0 } else { 6.0 };
            y.push(jitter(rng, tr, spread));
        }
    }
    while y.len() < max_len && rng.random_bool(0.4) {
        y.push(random_trajectory(rng, window));
    }
    y.shuffle(rng);
    (TrajectorySet::new(window, x), TrajectorySet::new(window, y))
}

pub fn alive_steps(set: &TrajectorySet) -> usize {
    set.trajectories.iter().map(|t| t.states.len()).sum()
}

pub fn check_tgospa_oracle(instances: usize, seed: u64) -> Check {
    let start = Instant::now();
    let params = TgospaParams::default();
    let mut worst_total: f64 = 0.0;
    let mut worst_split: f64 = 0.0;
    let mut switches = 0;
    for i in 0..instances {
        let mut rng = stream(seed, "tgospa-oracle", i as u64);
        let window = rng.random_range(1..=4);
        let (x, y) = random_pair(&mut rng, 3, window);
        let lp = tgospa(&x, &y, &params).map_err(|e| e.to_string())?;
        let bf = tgospa_bruteforce(&x, &y, &params).map_err(|e| e.to_string())?;
        let diff = (lp.total - bf.total).abs();
        ensure(diff <= 1e-6, || {
            format!("instance {i}: LP {} vs brute force {}", lp.total, bf.total)
        })?;
        for r in [&lp, &bf] {
            let split = (r.total - (r.loc + r.miss + r.false_ + r.switch)).abs();
            ensure(split <= 1e-9, || {
                format!("instance {i}: {r:?} does not add up")
            })?;
            worst_split = worst_split.max(split);
        }
        worst_total = worst_total.max(diff);
        if lp.switch > 0.0 {
            switches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{instances} instances, max |LP - brute| {worst_total:.1e}, max split residual {worst_split:.1e}, {switches} with switches, {secs:.2} s"
    ))
}

pub fn check_metric_axioms(instances: usize, seed: u64) -> Check {
    let params = TgospaParams::default();
    let mut worst_self: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    for i in 0..instances {
        let mut rng = stream(seed, "tgospa-axioms", i as u64);
        let window = rng.random_range(1..=6);
        let (x, y) = random_pair(&mut rng, 4, window);
        let d =
            |a: &TrajectorySet, b: &TrajectorySet| tgospa(a, b, &params).map_err(|e| e.to_string());
        let xx = d(&x, &x)?.total;
        let xy = d(&x, &y)?.total;
        let yx = d(&y, &x)?.total;
        ensure(xx.abs() <= 1e-9, || format!("instance {i}: d(X, X) = {xx}"))?;
        ensure((xy - yx).abs() <= 1e-9, || {
            format!("instance {i}: d(X, Y) = {xy}, d(Y, X) = {yx}")
        })?;
        ensure(xy >= 0.0, || {
            format!("instance {i}: negative distance {xy}")
        })?;
        worst_self = worst_self.max(xx.abs());
        worst_sym = worst_sym.max((xy - yx).abs());

        let empty = TrajectorySet::new(window, vec![]);
        let miss = d(&x, &empty)?;
        let expected = alive_steps(&x) as f64 * params.c / 2.0;
        ensure(miss.total == expected && miss.miss == expected, || {
            format!("instance {i}: miss-only {miss:?}, expected {expected}")
        })?;
    }
    Ok(format!(
        "{instances} instances, max d(X,X) {worst_self:.1e}, max asymmetry {worst_sym:.1e}, miss-only exact"
    ))
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-9 {
        diff
    } else {
        diff / scale
    }
}

pub const GRAD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    /// Largest per-tensor relative error and the tensor it came from.
    pub worst: (f64, String),
    /// Tensors failing the relative bound whose discrepancy is nonetheless
    /// within the cancellation noise of evaluating the loss at `GRAD_STEP`.
    pub noise_limited: Vec<String>,
    /// Tensors failing both bounds.
    pub failures: Vec<(String, f64)>,
    pub tensors: usize,
}

impl GradReport {
    pub fn merge(&mut self, other: GradReport) {
        if other.worst.0 > self.worst.0 {
            self.worst = other.worst;
        }
        self.noise_limited.extend(other.noise_limited);
        self.failures.extend(other.failures);
        self.tensors = self.tensors.max(other.tensors);
    }
}

/// Compares central differences with the reverse pass tensor by tensor.
/// A tensor passes when the relative error is below `GRAD_TOL`, or when the
/// absolute discrepancy is below the floating-point noise floor
/// `4 sqrt(n) eps |L| / h` of the differences themselves.
pub fn gradient_check(params: &mut ParamSet, f: impl Fn(&mut Graph) -> Var) -> GradReport {
    let (loss, grads) = {
        let mut g = Graph::new(params);
        let loss = f(&mut g);
        (g.value(loss).item(), g.backward(loss).expect("scalar loss"))
    };
    let h = GRAD_STEP;
    let eval = |ps: &ParamSet| {
        let mut g = Graph::new(ps);
        let l = f(&mut g);
        g.value(l).item()
    };
    let mut report = GradReport::default();
    let ids: Vec<_> = params.ids().collect();
    report.tensors = ids.len();
    for id in ids {
        let n = params.value(id).len();
        let mut fd = Vec::with_capacity(n);
        for k in 0..n {
            let orig = params.value(id).data()[k];
            params.value_mut(id).data_mut()[k] = orig + h;
            let up = eval(params);
            params.value_mut(id).data_mut()[k] = orig - h;
            let down = eval(params);
            params.value_mut(id).data_mut()[k] = orig;
            fd.push((up - down) / (2.0 * h));
        }
        let ad = grads
            .get(id)
            .map_or_else(|| vec![0.0; n], |t| t.data().to_vec());
        let err = relative_error(&fd, &ad);
        let name = params.name(id).to_string();
        if err > report.worst.0 {
            report.worst = (err, name.clone());
        }
        if err >= GRAD_TOL {
            let diff = fd
                .iter()
                .zip(&ad)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let noise = 4.0 * (n as f64).sqrt() * f64::EPSILON * loss.abs() / h;
            if diff <= noise {
                report.noise_limited.push(name);
            } else {
                report.failures.push((name, err));
            }
        }
    }
    report
}

fn summarize(what: &str, r: &GradReport, scenes: usize) -> Check {
    ensure(r.failures.is_empty(), || {
        format!("{what} tensors off: {:?}", r.failures)
    })?;
    Ok(format!(
        "{what} {} tensors on {scenes} scenes, worst relative error {:.2e} ({}), {} at the rounding floor",
        r.tensors,
        r.worst.0,
        r.worst.1,
        r.noise_limited.len()
    ))
}

pub fn small_task() -> TaskConfig {
    let mut task = TaskConfig::desk();
    task.lambda_c = 1e-2;
    task
}

pub fn check_dda_gradients(scenes: usize, seed: u64) -> Check {
    let task = small_task();
    let mut cfg = DdaConfig::desk(task.window);
    cfg.encoder.d_model = 8;
    cfg.encoder.ffn_hidden = 12;
    cfg.encoder.dropout = 0.0;
    cfg.head_hidden = vec![10, 10];
    cfg.max_tracks = 6;
    let mut model =
        DdaModel::new(cfg, &mut stream(seed, "grad-dda-init", 0)).map_err(|e| e.to_string())?;
    let mut report = GradReport::default();
    let mut used = 0;
    for i in 0.. {
        if used == scenes {
            break;
        }
        let scene =
            simulate_scene(&task, &mut stream(seed, "grad-dda", i)).map_err(|e| e.to_string())?;
        if scene.measurements.len() < 2 {
            continue;
        }
        let z: Vec<_> = scene.measurements.iter().map(|m| m.z).collect();
        let times = scene.times();
        let labels = scene.labels();
        let a = model.associate(&z, &times).map_err(|e| e.to_string())?;
        let Ok(m) = match_tracks_with(&a, &labels, ClutterTarget::SingleColumn) else {
            continue;
        };
        let target = build_target_matrix(&m, &labels, ClutterTarget::SingleColumn);
        let dda = model.clone();
        report.merge(gradient_check(&mut model.params, |g| {
            let probs = dda.forward(g, &z, &times, &mut Mode::Eval).unwrap();
            dda_loss_var(g, probs, &target).unwrap()
        }));
        used += 1;
    }
    summarize("DDA", &report, scenes)
}

pub fn check_ds_gradients(scenes: usize, seed: u64) -> Check {
    let task = small_task();
    let mut cfg = DsConfig::desk(task.window);
    cfg.encoder.d_model = 8;
    cfg.encoder.ffn_hidden = 12;
    cfg.encoder.dropout = 0.0;
    cfg.position_hidden = vec![10, 10];
    cfg.velocity_hidden = vec![10, 10];
    cfg.existence_hidden = vec![10];
    cfg.trajectory_hidden = vec![10];
    let mut model =
        DsModel::new(cfg, &mut stream(seed, "grad-ds-init", 0)).map_err(|e| e.to_string())?;
    let mut report = GradReport::default();
    let mut used = 0;
    for i in 0.. {
        if used == scenes {
            break;
        }
        let scene =
            simulate_scene(&task, &mut stream(seed, "grad-ds", i)).map_err(|e| e.to_string())?;
        let mut components: Vec<_> = partition_by_labels(&scene.measurements, task.window)
            .into_iter()
            .map(|(id, tr)| (tr, scene.truth(id)))
            .collect();
        if components.is_empty() {
            continue;
        }
        // An unmatched track exercises the false-track branch of the loss.
        let mut clutter = components[0].0.clone();
        clutter.source_column = 7;
        components.push((clutter, None));
        let ds = model.clone();
        report.merge(gradient_check(&mut model.params, |g| {
            let mut total = None;
            for (track, truth) in &components {
                let out = ds.forward(g, track, &mut Mode::Eval).unwrap();
                let l = component_loss_var(g, &out, *truth).unwrap();
                total = Some(match total {
                    None => l,
                    Some(t) => g.add(t, l).unwrap(),
                });
            }
            total.unwrap()
        }));
        used += 1;
    }
    summarize("DS", &report, scenes)
}

pub fn random_pmf_rows(rng: &mut impl Rng, n: usize, b: usize) -> AssociationMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..b).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    AssociationMatrix::from_rows(&rows).expect("stochastic rows")
}

/// Labels for `n` measurements drawn from at most `objects` objects, each
/// measured at most once per step, plus clutter.
pub fn random_labels(rng: &mut impl Rng, n: usize, objects: usize) -> Vec<i64> {
    (0..n)
        .map(|_| {
            if objects == 0 || rng.random_bool(0.25) {
                CLUTTER_LABEL
            } else {
                rng.random_range(0..objects as i64)
            }
        })
        .collect()
}

pub fn check_loss_invariances(cases: usize, seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let mut rng = stream(seed, "loss-perm", i as u64);
        let b = rng.random_range(2..=7);
        let n = rng.random_range(1..=10);
        let a = random_pmf_rows(&mut rng, n, b);
        let labels = random_labels(&mut rng, n, b);
        let mut perm: Vec<usize> = (0..b).collect();
        perm.shuffle(&mut rng);
        let l0 = rematched_loss(&a, &labels, ClutterTarget::Literal)
            .map_err(|e| format!("case {i}: {e}"))?;
        let l1 = rematched_loss(&a.permute_columns(&perm), &labels, ClutterTarget::Literal)
            .map_err(|e| format!("case {i}: {e}"))?;
        ensure((l0 - l1).abs() <= 1e-9, || {
            format!("case {i}: {l0} vs {l1} after permutation")
        })?;
        worst = worst.max((l0 - l1).abs());
    }

    for b in 2..=8 {
        let labels: Vec<i64> = (0..b as i64).collect();
        let onehot: Vec<Vec<f64>> = (0..b)
            .map(|i| {
                (0..b)
                    .map(|k| if k == (i + 1) % b { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let a = AssociationMatrix::from_rows(&onehot).unwrap();
        let loss =
            rematched_loss(&a, &labels, ClutterTarget::Literal).map_err(|e| e.to_string())?;
        ensure(loss == 0.0, || {
            format!("perfect one-hot prediction with B={b} has loss {loss}")
        })?;

        let mut labels: Vec<i64> = (0..b as i64 - 1).collect();
        labels.push(CLUTTER_LABEL);
        let onehot: Vec<Vec<f64>> = (0..b)
            .map(|i| (0..b).map(|k| if k == i { 1.0 } else { 0.0 }).collect())
            .collect();
        let a = AssociationMatrix::from_rows(&onehot).unwrap();
        let loss =
            rematched_loss(&a, &labels, ClutterTarget::SingleColumn).map_err(|e| e.to_string())?;
        ensure(loss == 0.0, || {
            format!("perfect one-hot prediction with clutter, B={b}: loss {loss}")
        })?;

        let lnb = (b as f64).ln();
        let objects: Vec<i64> = (0..b as i64).collect();
        let u = AssociationMatrix::from_rows(&vec![vec![1.0 / b as f64; b]; b]).unwrap();
        let loss =
            rematched_loss(&u, &objects, ClutterTarget::Literal).map_err(|e| e.to_string())?;
        ensure((loss - lnb).abs() <= 1e-15, || {
            format!("uniform B={b}: {loss} vs ln B {lnb}")
        })?;
        let loss =
            rematched_loss(&u, &labels, ClutterTarget::SingleColumn).map_err(|e| e.to_string())?;
        ensure((loss - lnb).abs() <= 1e-15, || {
            format!("uniform B={b} with clutter: {loss} vs ln B {lnb}")
        })?;
    }

    let est = TrajectoryEstimate {
        x_hat: vec![[1.0, 0.0, 0.0, 0.0], [5.0, 5.0, 5.0, 5.0]],
        p: vec![0.8, 0.3],
        p_bar: 0.9,
        source_column: 0,
    };
    let truth = GroundTruthTrajectory {
        object_id: 0,
        t_start: 1,
        states: vec![SingleState([0.0; 4])],
    };
    let hand = -(0.9f64).ln() + 1.0 - (0.8f64).ln() - (0.7f64).ln();
    let ds = component_loss(&est, Some(&truth));
    ensure(
        (ds - 1.68517).abs() <= 1e-5 && (ds - hand).abs() <= 1e-12,
        || format!("two-step smoother loss {ds}, hand value {hand}"),
    )?;

    Ok(format!(
        "{cases} permutations (max change {worst:.1e}), one-hot 0, uniform ln B for B=2..8, two-step smoother loss {ds:.5}"
    ))
}

/// Minimum total matching cost by enumerating every injective map of the
/// objects into the tracks.
pub fn exhaustive_matching_cost(a: &AssociationMatrix, labels: &[i64]) -> f64 {
    let mut objects: Vec<i64> = labels
        .iter()
        .copied()
        .filter(|&l| l != CLUTTER_LABEL)
        .collect();
    objects.sort_unstable();
    objects.dedup();
    let b = a.tracks();
    let cost = |obj: i64, col: usize| -> f64 {
        labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == obj)
            .map(|(i, _)| -a.get(i, col))
            .sum()
    };
    fn rec(
        k: usize,
        objects: &[i64],
        b: usize,
        used: &mut Vec<bool>,
        cost: &dyn Fn(i64, usize) -> f64,
    ) -> f64 {
        if k == objects.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for col in 0..b {
            if !used[col] {
                used[col] = true;
                best = best.min(cost(objects[k], col) + rec(k + 1, objects, b, used, cost));
                used[col] = false;
            }
        }
        best
    }
    rec(0, &objects, b, &mut vec![false; b], &cost)
}

pub fn check_assignment_optimality(trials: usize, seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..trials {
        let mut rng = stream(seed, "assignment", i as u64);
        let b = rng.random_range(1..=6);
        let k = rng.random_range(0..=4.min(b));
        let n = rng.random_range(k.max(1)..=k + 6);
        let a = random_pmf_rows(&mut rng, n, b);
        let mut labels = random_labels(&mut rng, n, k);
        // Every one of the k objects appears at least once.
        for (obj, l) in labels.iter_mut().take(k).enumerate() {
            *l = obj as i64;
        }
        labels.shuffle(&mut rng);
        let m = match_tracks_to_objects(&a, &labels).map_err(|e| format!("trial {i}: {e}"))?;
        let oracle = exhaustive_matching_cost(&a, &labels);
        let got = m.total_cost();
        ensure((got - oracle).abs() <= 1e-9, || {
            format!("trial {i}: matched cost {got}, exhaustive {oracle}")
        })?;
        let mut cols = m.track_of_object.clone();
        cols.sort_unstable();
        cols.dedup();
        ensure(cols.len() == m.objects.len(), || {
            format!("trial {i}: a track serves two objects")
        })?;
        worst = worst.max((got - oracle).abs());
    }
    Ok(format!(
        "{trials} trials with B <= 6, K <= 4, max gap {worst:.1e}"
    ))
}

pub struct SimStats {
    pub scenes: usize,
    pub clutter_mean: f64,
    pub clutter_sd_of_mean: f64,
    pub clutter_expected: f64,
    pub detections: usize,
    pub opportunities: usize,
}

pub fn simulator_stats(task: &TaskConfig, scenes: usize, seed: u64) -> SimStats {
    use rayon::prelude::*;
    let per_scene: Vec<(usize, usize, usize)> = (0..scenes)
        .into_par_iter()
        .map(|i| {
            let scene = simulate_scene(task, &mut stream(seed, "sim-stats", i as u64)).unwrap();
            count_scene(&scene)
        })
        .collect();
    let clutter: Vec<f64> = per_scene.iter().map(|c| c.0 as f64).collect();
    let mean = clutter.iter().sum::<f64>() / scenes as f64;
    let var = clutter.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (scenes - 1) as f64;
    SimStats {
        scenes,
        clutter_mean: mean,
        clutter_sd_of_mean: (var / scenes as f64).sqrt(),
        clutter_expected: task.lambda_c * task.fov.volume() * task.window as f64,
        detections: per_scene.iter().map(|c| c.1).sum(),
        opportunities: per_scene.iter().map(|c| c.2).sum(),
    }
}

/// `(clutter, detections, object-steps)`
fn count_scene(scene: &Scene) -> (usize, usize, usize) {
    let clutter = scene
        .measurements
        .iter()
        .filter(|m| m.label == CLUTTER_LABEL)
        .count();
    let detections = scene.measurements.len() - clutter;
    let opportunities = scene.truths.iter().map(|t| t.states.len()).sum();
    (clutter, detections, opportunities)
}

pub fn check_simulator_stats(scenes: usize, seed: u64) -> Check {
    let task = TaskConfig::task(1).map_err(|e| e.to_string())?;
    let s = simulator_stats(&task, scenes, seed);
    ensure((s.clutter_expected - 48.256).abs() < 1e-9, || {
        format!("expected clutter {} is not 48.256", s.clutter_expected)
    })?;
    let z_clutter = (s.clutter_mean - s.clutter_expected) / s.clutter_sd_of_mean;
    let freq = s.detections as f64 / s.opportunities as f64;
    let sd = (task.p_d * (1.0 - task.p_d) / s.opportunities as f64).sqrt();
    let z_detect = (freq - task.p_d) / sd;
    ensure(z_clutter.abs() <= 3.0, || {
        format!(
            "clutter mean {:.3} vs {:.3} ({z_clutter:.2} sigma)",
            s.clutter_mean, s.clutter_expected
        )
    })?;
    ensure(z_detect.abs() <= 3.0, || {
        format!(
            "detection frequency {freq:.5} vs {} ({z_detect:.2} sigma)",
            task.p_d
        )
    })?;
    Ok(format!(
        "{} scenes: clutter {:.3} vs 48.256 ({z_clutter:+.2} sigma), detection {freq:.5} vs {} ({z_detect:+.2} sigma)",
        s.scenes, s.clutter_mean, task.p_d
    ))
}
