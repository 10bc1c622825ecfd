//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edgehar::camera::{backproject, project, CameraIntrinsics, Point3D};
use edgehar::eval::{self, make_splits, reference_manifest};
use edgehar::pipeline;
use edgehar::skeleton::{Joint, Skeleton3D};
use edgehar::synth::SynthSpec;
use edgehar::tracker::{track_step, IdentityEvent, TrackState, TrackStatus, TrackerConfig};
use edgehar::windowing::{schedule, ClassProbabilities, Decision, PeriodFuser, WindowConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("back-projection round trip", round_trip),
        ("tracker oracle equivalence", tracker_oracle),
        ("three-window overlap structure", overlap_structure),
        ("fusion oracle", fusion_oracle),
        ("timing formulas", timing_formulas),
        ("split protocol", split_protocol),
        ("pipeline determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let intr = CameraIntrinsics::new(525.0, 519.5, 319.5, 239.5, 0.001, 640, 480).unwrap();
    let samples: Vec<(f64, f64, f64)> = (0..1000)
        .map(|_| (rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0), rng.gen_range(0.3..8.0)))
        .collect();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &(u, v, z) in &samples {
        let p = backproject(u, v, z, &intr).map_err(|e| e.to_string())?;
        let (u2, v2) = project(&p, &intr).map_err(|e| e.to_string())?;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1.0);
        worst = worst.max(rel(u, u2)).max(rel(v, v2)).max(rel(z, p.z));
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-6, "worst relative error {worst:e}");
    ensure!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    Ok(format!("1000 points, worst relative error {worst:.1e}, {elapsed:?}"))
}

// Literal transcription of the tracking pseudocode, kept apart from the
// library on purpose.
#[derive(Clone, Debug, PartialEq)]
struct OracleState {
    status: &'static str,
    user: Option<(u64, usize)>,
    times_untracked: u32,
}

fn oracle_distance(a: &Skeleton3D, b: &Skeleton3D) -> f64 {
    let t = Joint::Torso.index();
    if let (Some(p), Some(q)) = (a.keypoints[t], b.keypoints[t]) {
        return ((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt();
    }
    let shared: Vec<(Point3D, Point3D)> = a
        .keypoints
        .iter()
        .zip(&b.keypoints)
        .filter_map(|(p, q)| Some(((*p)?, (*q)?)))
        .collect();
    if shared.is_empty() {
        return f64::INFINITY;
    }
    let k = shared.len() as f64;
    let (mut dx, mut dy, mut dz) = (0.0, 0.0, 0.0);
    for (p, q) in &shared {
        dx += p.x / k - q.x / k;
        dy += p.y / k - q.y / k;
        dz += p.z / k - q.z / k;
    }
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn oracle_step(
    s: &OracleState,
    user_skel: &mut Option<Skeleton3D>,
    skeletons: &[Skeleton3D],
    events: &[IdentityEvent],
    user_id: &str,
) -> OracleState {
    let mut hit: Option<usize> = None;
    for e in events {
        if e.person_id == user_id && hit.is_none_or(|h| e.person_index < h) {
            hit = Some(e.person_index);
        }
    }
    if let Some(i) = hit {
        *user_skel = Some(skeletons[i].clone());
        return OracleState {
            status: "KNOWN",
            user: Some((skeletons[i].frame_index, i)),
            times_untracked: 0,
        };
    }
    if s.status == "SEARCHING" || s.status == "LOST" {
        return s.clone();
    }
    let diameter = 1.0;
    let mut min_distance = f64::INFINITY;
    let mut nearest = None;
    for (i, sk) in skeletons.iter().enumerate() {
        let cur = oracle_distance(sk, user_skel.as_ref().unwrap());
        if cur < min_distance {
            min_distance = cur;
            nearest = Some(i);
        }
    }
    if min_distance <= diameter {
        let i = nearest.unwrap();
        *user_skel = Some(skeletons[i].clone());
        OracleState {
            status: "KNOWN",
            user: Some((skeletons[i].frame_index, i)),
            times_untracked: 0,
        }
    } else if s.times_untracked > 5 {
        *user_skel = None;
        OracleState {
            status: "LOST",
            user: None,
            times_untracked: s.times_untracked,
        }
    } else {
        OracleState {
            status: "UNKNOWN",
            user: s.user,
            times_untracked: s.times_untracked + 1,
        }
    }
}

fn observe(state: &TrackState) -> OracleState {
    OracleState {
        status: match state.status {
            TrackStatus::Searching => "SEARCHING",
            TrackStatus::Known => "KNOWN",
            TrackStatus::Unknown => "UNKNOWN",
            TrackStatus::Lost => "LOST",
        },
        user: state.user_skeleton.as_ref().map(|s| (s.frame_index, s.person_index)),
        times_untracked: state.times_untracked,
    }
}

fn person(rng: &mut ChaCha8Rng, center: [f64; 3], frame: u64, index: usize) -> Skeleton3D {
    let mut keypoints = [None; 15];
    for (j, kp) in keypoints.iter_mut().enumerate() {
        if rng.gen_bool(0.8) {
            let y = center[1] - 0.1 * j as f64;
            *kp = Some(Point3D::new(
                center[0] + rng.gen_range(-0.2..0.2),
                y,
                center[2] + rng.gen_range(-0.1..0.1),
            ));
        }
    }
    if rng.gen_bool(0.7) {
        keypoints[Joint::Torso.index()] = Some(Point3D::new(center[0], center[1], center[2]));
    }
    Skeleton3D {
        keypoints,
        frame_index: frame,
        person_index: index,
    }
}

fn scenario(seed: u64) -> Vec<(Vec<Skeleton3D>, Vec<IdentityEvent>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.gen_range(20..120);
    let mut user = [0.0f64, 0.0, 2.5];
    let mut others: Vec<[f64; 3]> = (0..rng.gen_range(0..4))
        .map(|_| [rng.gen_range(-3.0..3.0), 0.0, rng.gen_range(1.0..6.0)])
        .collect();
    let mut absent = 0;
    let mut out = Vec::new();
    for f in 0..frames {
        let step = if rng.gen_bool(0.05) { 1.5 } else { 0.3 };
        user[0] += rng.gen_range(-step..step);
        user[2] = (user[2] + rng.gen_range(-step..step)).clamp(0.5, 8.0);
        for o in &mut others {
            o[0] += rng.gen_range(-0.3..0.3);
        }
        if absent == 0 && rng.gen_bool(0.08) {
            absent = rng.gen_range(1..12);
        }
        let mut centers: Vec<(bool, [f64; 3])> = others.iter().map(|o| (false, *o)).collect();
        if absent > 0 {
            absent -= 1;
        } else {
            let at = rng.gen_range(0..=centers.len());
            centers.insert(at, (true, user));
        }
        let skeletons: Vec<Skeleton3D> = centers
            .iter()
            .enumerate()
            .map(|(i, (_, c))| person(&mut rng, *c, f, i))
            .collect();
        let mut events = Vec::new();
        for (i, (is_user, _)) in centers.iter().enumerate() {
            if rng.gen_bool(0.06) {
                // occasional misidentification of a bystander as the user
                let id = if *is_user || rng.gen_bool(0.2) { "user" } else { "someone" };
                events.push(IdentityEvent {
                    frame_index: f,
                    person_index: i,
                    person_id: id.into(),
                });
            }
        }
        out.push((skeletons, events));
    }
    out
}

fn tracker_oracle() -> Outcome {
    let cfg = TrackerConfig::new("user");
    let mut frames_checked = 0;
    let mut seen = BTreeMap::new();
    for seed in 0..100 {
        let mut state = TrackState::default();
        let mut oracle = OracleState {
            status: "SEARCHING",
            user: None,
            times_untracked: 0,
        };
        let mut user_skel = None;
        for (f, (skeletons, events)) in scenario(seed).into_iter().enumerate() {
            state = track_step(&state, &skeletons, &events, &cfg);
            oracle = oracle_step(&oracle, &mut user_skel, &skeletons, &events, "user");
            let got = observe(&state);
            ensure!(got == oracle, "scenario {seed} frame {f}: library {got:?}, oracle {oracle:?}");
            *seen.entry(oracle.status).or_insert(0) += 1;
            frames_checked += 1;
        }
    }
    for status in ["SEARCHING", "KNOWN", "UNKNOWN", "LOST"] {
        ensure!(seen.contains_key(status), "scenarios never reached {status}");
    }

    // user vanishes for seven frames after being identified
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut state = track_step(
        &TrackState::default(),
        &[person(&mut rng, [0.0, 0.0, 2.0], 0, 0)],
        &[IdentityEvent {
            frame_index: 0,
            person_index: 0,
            person_id: "user".into(),
        }],
        &cfg,
    );
    let far = [person(&mut rng, [3.0, 0.0, 2.0], 1, 0)];
    let mut trace = vec![state.status];
    for _ in 0..7 {
        state = track_step(&state, &far, &[], &cfg);
        trace.push(state.status);
    }
    use TrackStatus::*;
    let expected = [Known, Unknown, Unknown, Unknown, Unknown, Unknown, Unknown, Lost];
    ensure!(trace == expected, "trace {trace:?}");
    Ok(format!(
        "100 scenarios, {frames_checked} frames identical, states visited {seen:?}; 7-frame trace KNOWN, UNKNOWN x6, LOST"
    ))
}

fn window_probs(w: u64, classes: usize) -> ClassProbabilities {
    let mut v = vec![1.0; classes];
    v[(w as usize) % classes] += w as f64 + 1.0;
    ClassProbabilities::normalize(v).unwrap()
}

fn overlap_structure() -> Outcome {
    let cfg = WindowConfig {
        n: 12,
        m: 4,
        ..WindowConfig::default()
    };
    let classes = cfg.class_names.len();
    let windows = 20u64;
    let mut fuser = PeriodFuser::new(cfg.clone());
    let mut periods = Vec::new();
    for w in 0..windows {
        periods.extend(fuser.resolve(w, Some(window_probs(w, classes))));
    }
    periods.extend(fuser.flush(0.0));
    ensure!(periods.len() as u64 == windows + 2, "{} periods", periods.len());
    let mut interior = 0;
    for p in &periods {
        let j = p.period_index;
        if j < 2 || j >= windows {
            continue;
        }
        interior += 1;
        let expected: Vec<_> = [j - 2, j - 1, j].iter().map(|&w| window_probs(w, classes)).collect();
        ensure!(p.contributions.len() == 3, "period {j} has {} contributions", p.contributions.len());
        ensure!(p.contributions == expected, "period {j} drew from other windows");
    }
    Ok(format!("n/m = 3, {interior} interior periods each fused windows j-2, j-1, j"))
}

fn fusion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut periods_checked = 0;
    let mut worst_sum = 0.0f64;
    for stream in 0..500 {
        let ratio = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=4);
        let classes = rng.gen_range(2..=7);
        let cfg = WindowConfig {
            n: ratio * m,
            m,
            sr: 5.0,
            theta: rng.gen_range(0.2..0.8),
            class_names: (0..classes).map(|c| format!("c{c}")).collect(),
            ..WindowConfig::default()
        };
        let slots = rng.gen_range(0..60u64);
        let dropout = rng.gen_range(0.0..0.1);
        let frames: Vec<Option<u64>> = (0..slots).map(|s| (!rng.gen_bool(dropout)).then_some(s)).collect();
        let fail_rate = rng.gen_range(0.0..0.2);
        let outputs: Vec<Option<Vec<f64>>> = (0..slots)
            .map(|_| {
                (!rng.gen_bool(fail_rate)).then(|| {
                    let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
                    let total: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / total).collect()
                })
            })
            .collect();

        let got = schedule(frames.iter().copied().enumerate().map(|(s, f)| (s as u64, f)), &cfg, |w, _| {
            outputs[w as usize].clone().map(|v| ClassProbabilities::new(v).unwrap())
        });

        // brute force: materialize every window, then average per period
        let (n, m) = (cfg.n as u64, cfg.m as u64);
        let mut window_out: Vec<Option<Vec<f64>>> = Vec::new();
        let mut w = 0;
        while w * m + n <= slots {
            let complete = (w * m..w * m + n).all(|s| frames[s as usize].is_some());
            window_out.push(if complete { outputs[w as usize].clone() } else { None });
            w += 1;
        }
        let mut expected = Vec::new();
        for j in 0..window_out.len() as u64 + ratio as u64 {
            let members: Vec<&Vec<f64>> = (0..window_out.len() as u64)
                .filter(|&w| w <= j && j < w + ratio as u64)
                .filter_map(|w| window_out[w as usize].as_ref())
                .collect();
            if members.is_empty() {
                continue;
            }
            let mean: Vec<f64> = (0..classes)
                .map(|c| members.iter().map(|v| v[c]).sum::<f64>() / members.len() as f64)
                .collect();
            let mut best = 0;
            for c in 1..classes {
                if mean[c] > mean[best] {
                    best = c;
                }
            }
            let decision = if mean[best] >= cfg.theta { Decision::Class(best) } else { Decision::NoAction };
            expected.push((j, decision, members.len()));
        }

        let got_summary: Vec<_> = got.iter().map(|p| (p.period_index, p.decision, p.contributions.len())).collect();
        ensure!(got_summary == expected, "stream {stream}: scheduler {got_summary:?}, oracle {expected:?}");
        for p in &got {
            let err = (p.mean_probs.iter().sum::<f64>() - 1.0).abs();
            worst_sum = worst_sum.max(err);
            ensure!(err <= 1e-6, "stream {stream} period {}: sum off by {err:e}", p.period_index);
        }
        periods_checked += got.len();
    }
    Ok(format!(
        "500 streams, {periods_checked} periods match brute force, worst sum error {worst_sum:.1e}"
    ))
}

fn timing_formulas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..20 {
        let m = rng.gen_range(1..=8usize);
        let n = m * rng.gen_range(1..=6usize);
        let sr = rng.gen_range(1.0..30.0f64);
        let cfg = WindowConfig {
            n,
            m,
            sr,
            ..WindowConfig::default()
        };
        ensure!(cfg.t_sw() == n as f64 / sr, "t_sw {} for n={n} sr={sr}", cfg.t_sw());
        ensure!(cfg.t_pw() == m as f64 / sr, "t_pw {} for m={m} sr={sr}", cfg.t_pw());

        let classes = cfg.class_names.len();
        let slots = (n + 10 * m) as u64;
        let periods = schedule((0..slots).map(|s| (s, Some(s))), &cfg, |w, _| Some(window_probs(w, classes)));
        let latency = (n - m) as f64 / sr;
        for p in &periods {
            // only periods finalized while the stream was still running
            if p.period_index + 1 > (slots - n as u64) / m as u64 + 1 {
                continue;
            }
            checked += 1;
            let observed = p.finalized_at - p.t_end;
            worst = worst.max((observed - latency).abs());
            ensure!(
                (observed - latency).abs() <= 1e-9,
                "n={n} m={m} sr={sr} period {}: latency {observed}, expected {latency}",
                p.period_index
            );
        }
    }
    ensure!(checked >= 20 * 11, "only {checked} periods checked");
    Ok(format!(
        "20 configurations, t_sw and t_pw exact, {checked} period latencies, worst error {worst:.1e} s"
    ))
}

fn split_protocol() -> Outcome {
    let manifest = reference_manifest();
    ensure!(manifest.entries.len() == 1711, "{} entries", manifest.entries.len());
    ensure!(manifest.class_names.len() == 7, "{} classes", manifest.class_names.len());
    let seed = 2024;
    let splits = make_splits(&manifest, seed).map_err(|e| e.to_string())?;
    ensure!(splits == make_splits(&manifest, seed).unwrap(), "splits differ between calls");
    ensure!(splits.len() == 3, "{} splits", splits.len());
    ensure!(
        splits[0].test_ids != splits[1].test_ids && splits[1].test_ids != splits[2].test_ids,
        "splits are not reshuffled"
    );
    let counts = manifest.class_counts();
    for split in &splits {
        let mut test_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for id in &split.test_ids {
            *test_counts.entry(manifest.label_of(id).unwrap()).or_default() += 1;
        }
        for (class, &count) in &counts {
            let got = test_counts.get(class).copied().unwrap_or(0);
            let target = count as f64 * 0.2;
            ensure!((got as f64 - target).abs() <= 1.0, "{class}: {got} test of {count}");
        }
        ensure!(test_counts["drinking"] == 48, "drinking has {} test items", test_counts["drinking"]);
        ensure!(split.train_ids.len() + split.test_ids.len() == 1711, "split {} loses items", split.split_index);
    }
    let report = eval::run_eval(&manifest, seed, &eval::oracle_predictions(&manifest)).map_err(|e| e.to_string())?;
    ensure!(report.mean_top1 == 1.0, "oracle mean top-1 {}", report.mean_top1);
    for s in &report.splits {
        ensure!(s.cm.is_diagonal(), "split {} confusion matrix off-diagonal", s.split_index);
    }
    Ok(format!(
        "1711 videos, 7 classes, drinking 238 -> 48 test, deterministic, oracle mean top-1 {:.4}, diagonal matrices",
        report.mean_top1
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SynthSpec::default();
    edgehar::synth::generate(dir.path(), &spec).map_err(|e| e.to_string())?;
    let cfg = spec.pipeline_config(dir.path());
    let mut logs = Vec::new();
    let mut rates = Vec::new();
    for _ in 0..2 {
        let mut out = Vec::new();
        let report = pipeline::run(&cfg, &mut out).map_err(|e| e.to_string())?;
        ensure!(!report.decisions.is_empty(), "no decisions");
        rates.push(spec.seconds / report.metrics.wall_time_s);
        logs.push(out);
    }
    ensure!(logs[0] == logs[1], "logs differ");
    let slowest = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure!(slowest > 1.0, "ran at {slowest:.2}x real time");
    Ok(format!(
        "60 s stream, {} byte logs identical, slowest run {slowest:.1}x real time",
        logs[0].len()
    ))
}
