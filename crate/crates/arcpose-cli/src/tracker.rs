//! Sequential tracking over a dataset with per-frame metric rows.
//!
//! Both solvers share one driver: initialize the ensemble on the first frame
//! that reports a grasp position, then run predict/update per frame.  A frame
//! whose update cannot be assembled degrades to prediction-only tracking and
//! is marked in the `status` column; tracking then continues.  Output is a
//! fixed-schema CSV (one row per frame) plus a JSON-lines diagnostics stream.

use std::time::Instant;

use arcpose::analysis::{self, Modality, ModalityVerdict};
use arcpose::geometry::{exp_se3, Pose};
use arcpose::residuals::{motion_prior_residual, MotionPrior, NoiseCalibration, ResidualContext};
use arcpose::stats;
use arcpose::svn::{self, ParticleSet, StopReason};
use arcpose::{pf, synth};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::error::Result;
use crate::schema::{Dataset, Method, RunSettings};

/// Fixed results schema; evaluation rejects anything else.
pub const RESULT_COLUMNS: [&str; 24] = [
    "frame",
    "method",
    "status",
    "e_t_m",
    "e_r_rad",
    "e_x_m",
    "e_y_m",
    "e_z_m",
    "e_rx_rad",
    "e_ry_rad",
    "e_rz_rad",
    "q95_t_m",
    "q95_r_rad",
    "nll_s_t",
    "nll_s_r",
    "is_t",
    "is_r",
    "modality",
    "minor_weight",
    "ashman_d",
    "gt_in_dominant",
    "iterations",
    "stop_reason",
    "wall_time_ms",
];

/// Predictive-spread floor so the likelihood score stays defined when the
/// ensemble collapses to a point.
const SIGMA_FLOOR: f64 = 1e-9;

/// Modality classification fits a mixture in 6-D; cap the point count so the
/// dense-ensemble baseline stays tractable (deterministic stride subsample).
const MODALITY_MAX_POINTS: usize = 512;

/// Miscoverage level of the reported predictive interval.
const INTERVAL_ALPHA: f64 = 0.05;

/// Variance scale of the frame-to-frame motion prior relative to the
/// process noise. The eigenvalue floor caps the transport's restoring rate
/// along weakly observed pose directions, so the per-frame process noise
/// would otherwise accumulate there; a motion prior tighter than the
/// process noise keeps the ensemble anchored to the twist-predicted pose
/// at the scale the transport can actually maintain.
const MOTION_PRIOR_VAR_SCALE: f64 = 1.0;

/// Trust region of the motion prior (cap on its whitened NLL share, about
/// a 10-sigma ellipsoid). Within one posterior mode the quadratic prior
/// smooths frame-to-frame jitter; a particle on a different mode sits far
/// outside the cap, keeps a saturated constant penalty, and therefore
/// survives on its data evidence alone. Mode switches then happen exactly
/// when the data advantage of the other mode exceeds the cap.
const MOTION_PRIOR_NLL_CAP: f64 = f64::INFINITY;

/// Cap on the reporting prior's NLL share (see [`rescore_with_prediction`]):
/// evidence for another mode beyond this margin flips the reported mode.
const RANK_PRIOR_NLL_CAP: f64 = 20.0;

pub fn result_header() -> String {
    RESULT_COLUMNS.join(",")
}

fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

/// Everything one CSV row can carry; `None` renders as an empty cell.
#[derive(Default)]
struct Row {
    frame: usize,
    method: &'static str,
    status: &'static str,
    e_t: Option<f64>,
    e_r: Option<f64>,
    e_xyz: Option<[f64; 3]>,
    e_rxyz: Option<[f64; 3]>,
    q95_t: Option<f64>,
    q95_r: Option<f64>,
    nll_s_t: Option<f64>,
    nll_s_r: Option<f64>,
    is_t: Option<f64>,
    is_r: Option<f64>,
    modality: Option<&'static str>,
    minor_weight: Option<f64>,
    ashman_d: Option<f64>,
    gt_in_dominant: Option<bool>,
    iterations: Option<usize>,
    stop_reason: Option<&'static str>,
    wall_time_ms: Option<f64>,
}

impl Row {
    fn emit(&self, out: &mut String) {
        let fields = [
            self.frame.to_string(),
            self.method.to_string(),
            self.status.to_string(),
            fmt_opt(self.e_t),
            fmt_opt(self.e_r),
            fmt_opt(self.e_xyz.map(|v| v[0])),
            fmt_opt(self.e_xyz.map(|v| v[1])),
            fmt_opt(self.e_xyz.map(|v| v[2])),
            fmt_opt(self.e_rxyz.map(|v| v[0])),
            fmt_opt(self.e_rxyz.map(|v| v[1])),
            fmt_opt(self.e_rxyz.map(|v| v[2])),
            fmt_opt(self.q95_t),
            fmt_opt(self.q95_r),
            fmt_opt(self.nll_s_t),
            fmt_opt(self.nll_s_r),
            fmt_opt(self.is_t),
            fmt_opt(self.is_r),
            self.modality.unwrap_or_default().to_string(),
            fmt_opt(self.minor_weight),
            fmt_opt(self.ashman_d),
            self.gt_in_dominant
                .map(|b| if b { "1" } else { "0" })
                .unwrap_or_default()
                .to_string(),
            self.iterations.map(|i| i.to_string()).unwrap_or_default(),
            self.stop_reason.unwrap_or_default().to_string(),
            fmt_opt(self.wall_time_ms),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }

    fn fill_errors(&mut self, estimate: &Pose, gt: Option<&Pose>) {
        if let Some(gt) = gt {
            let (e_t, e_r) = analysis::pose_error(estimate, gt);
            let (dt, dr) = analysis::pose_error_components(estimate, gt);
            self.e_t = Some(e_t);
            self.e_r = Some(e_r);
            self.e_xyz = Some([dt.x, dt.y, dt.z]);
            self.e_rxyz = Some([dr.x, dr.y, dr.z]);
        }
    }

    fn fill_modality(&mut self, verdict: &ModalityVerdict) {
        self.modality = Some(match verdict.label {
            Modality::Unimodal => "unimodal",
            Modality::Bimodal => "bimodal",
        });
        self.minor_weight = Some(verdict.minor_weight);
        self.ashman_d = verdict.ashman_d.is_finite().then_some(verdict.ashman_d);
        self.gt_in_dominant = verdict.gt_in_dominant;
    }
}

/// One diagnostics line per frame.
#[derive(Serialize)]
struct DiagRecord {
    frame: usize,
    method: &'static str,
    status: &'static str,
    n_particles: usize,
    best_nll: Option<f64>,
    iterations: Option<usize>,
    backoffs: Option<usize>,
    ess: Option<f64>,
    resampled: Option<bool>,
    q95_t_m: Option<f64>,
    q95_r_rad: Option<f64>,
}

pub struct TrackOutput {
    pub results_csv: String,
    pub diagnostics_jsonl: String,
}

/// Per-particle distances to the MAP pose, translational and rotational.
fn map_distances(particles: &ParticleSet, map_pose: &Pose) -> (Vec<f64>, Vec<f64>) {
    let mut r_t = Vec::with_capacity(particles.len());
    let mut r_r = Vec::with_capacity(particles.len());
    for pose in particles.poses() {
        let (dt, dr) = analysis::pose_error(pose, map_pose);
        r_t.push(dt);
        r_r.push(dr);
    }
    (r_t, r_r)
}

fn weighted_std(values: &[f64], weights: &[f64]) -> f64 {
    let mean: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| v * w)
        .sum::<f64>();
    let var: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - mean) * (v - mean))
        .sum::<f64>();
    var.max(0.0).sqrt()
}

/// Likelihood and interval scores of the predictive spread against the
/// realized errors; needs ground truth.
fn fill_scores(row: &mut Row, particles: &ParticleSet, map_pose: &Pose) {
    let (e_t, e_r) = match (row.e_t, row.e_r) {
        (Some(t), Some(r)) => (t, r),
        _ => return,
    };
    let (r_t, r_r) = map_distances(particles, map_pose);
    let w = particles.weights();
    let sigma_t = weighted_std(&r_t, w).max(SIGMA_FLOOR);
    let sigma_r = weighted_std(&r_r, w).max(SIGMA_FLOOR);
    row.nll_s_t = analysis::nll_score(e_t, sigma_t).ok();
    row.nll_s_r = analysis::nll_score(e_r, sigma_r).ok();
    let half = INTERVAL_ALPHA / 2.0;
    let (lo_t, hi_t) = (
        stats::weighted_quantile(&r_t, w, half),
        stats::weighted_quantile(&r_t, w, 1.0 - half),
    );
    let (lo_r, hi_r) = (
        stats::weighted_quantile(&r_r, w, half),
        stats::weighted_quantile(&r_r, w, 1.0 - half),
    );
    row.is_t = analysis::interval_score(e_t, lo_t, hi_t, INTERVAL_ALPHA).ok();
    row.is_r = analysis::interval_score(e_r, lo_r, hi_r, INTERVAL_ALPHA).ok();
}

/// Classifies the ensemble's modality, subsampling large ensembles with a
/// deterministic stride.
fn classify(
    particles: &ParticleSet,
    map_pose: &Pose,
    gt: Option<&Pose>,
) -> Option<ModalityVerdict> {
    let n = particles.len();
    if n > MODALITY_MAX_POINTS {
        let stride = n.div_ceil(MODALITY_MAX_POINTS);
        let poses: Vec<Pose> = particles.poses().iter().step_by(stride).copied().collect();
        let log_post: Vec<f64> = particles
            .log_post()
            .iter()
            .step_by(stride)
            .copied()
            .collect();
        let sub = ParticleSet::from_parts(poses, log_post);
        analysis::classify_modality(&sub, map_pose, gt).ok()
    } else {
        analysis::classify_modality(particles, map_pose, gt).ok()
    }
}

/// Swaps the transport prior's share of each particle's score for the
/// probabilistic motion model (covariance Q, capped at
/// [`RANK_PRIOR_NLL_CAP`]) before MAP extraction and weighting.
///
/// The transport prior is deliberately much tighter than Q: it is a
/// contraction device that counteracts the eigenvalue floor's slow pullback
/// along weakly observed directions. Ranking particles by that tight prior
/// would reduce tracking to dead reckoning (data could never overrule the
/// anchor), while ranking by the data terms alone would inherit the full
/// single-frame ambiguity noise. Scoring with the process-noise covariance
/// weights prediction against evidence at the strength the motion model
/// actually claims.
fn rescore_with_prediction(
    set: &mut ParticleSet,
    prior: &MotionPrior,
    q: &nalgebra::Matrix6<f64>,
) {
    let (Some(chol_t), Some(chol_q)) = (
        nalgebra::Cholesky::new(prior.covariance),
        nalgebra::Cholesky::new(*q),
    ) else {
        return;
    };
    let mut scores = set.log_post().to_vec();
    for (i, pose) in set.poses().iter().enumerate() {
        if !scores[i].is_finite() {
            continue;
        }
        let (r, _) = motion_prior_residual(pose, prior);
        let transport_share = match chol_t.l().solve_lower_triangular(&r) {
            Some(wr) => (0.5 * wr.norm_squared()).min(prior.nll_cap),
            None => continue,
        };
        let rank_share = match chol_q.l().solve_lower_triangular(&r) {
            Some(wr) => (0.5 * wr.norm_squared()).min(RANK_PRIOR_NLL_CAP),
            None => continue,
        };
        scores[i] += transport_share - rank_share;
    }
    if std::env::var("ARCPOSE_DEBUG_RESCORE").is_ok() {
        let mut adj: Vec<f64> = Vec::new();
        for (i, pose) in set.poses().iter().enumerate() {
            let (r, _) = motion_prior_residual(pose, prior);
            if let Some(wr) = chol_q.l().solve_lower_triangular(&r) {
                adj.push(0.5 * wr.norm_squared());
                let _ = i;
            }
        }
        adj.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let low: Vec<String> = adj.iter().take(6).map(|s| format!("{s:.2e}")).collect();
        eprintln!(
            "rescore: rank-share low6 [{}] med {:.3e} max {:.3e}",
            low.join(" "),
            adj[adj.len() / 2],
            adj[adj.len() - 1]
        );
    }
    set.set_log_post(scores);
}

fn stop_reason_str(reason: StopReason) -> &'static str {
    match reason {
        StopReason::Converged => "converged",
        StopReason::MaxIterations => "max_iters",
    }
}

pub fn run_track(
    dataset: &Dataset,
    calibration: &NoiseCalibration,
    settings: &RunSettings,
    timing: bool,
) -> Result<TrackOutput> {
    match settings.method {
        Method::Svn => run_svn(dataset, calibration, settings, timing),
        Method::Pf => run_pf(dataset, calibration, settings, timing),
    }
}

fn run_svn(
    dataset: &Dataset,
    calibration: &NoiseCalibration,
    settings: &RunSettings,
    timing: bool,
) -> Result<TrackOutput> {
    let cfg = settings.svn.clone();
    let (base_opts, toggles) = settings.effective_options();
    let mut rng = ChaCha12Rng::seed_from_u64(settings.seed);

    let mut csv = result_header();
    csv.push('\n');
    let mut diag_out = String::new();

    let mut particles: Option<ParticleSet> = None;
    let mut prev_map: Option<Pose> = None;
    let mut frames_since_init = 0usize;

    for (k, dframe) in dataset.frames.iter().enumerate() {
        let started = timing.then(Instant::now);
        let mut obs = dframe.observation.clone();
        if !toggles.use_robot_twist {
            obs.robot_twist = None;
        }
        let gt = dframe.gt_pose.as_ref();
        let mut row = Row {
            frame: k,
            method: "svn",
            ..Row::default()
        };

        let first_frame = particles.is_none();
        if first_frame {
            match svn::init_particles(&obs, &dataset.model, &cfg, &mut rng) {
                Ok(set) => particles = Some(set),
                Err(e) => {
                    log::warn!("frame {k}: not initialized ({e})");
                    row.status = "uninitialized";
                    push_diag(&mut diag_out, &row, 0, None, None, None)?;
                    row.emit(&mut csv);
                    continue;
                }
            }
        } else {
            let set = particles.as_mut().expect("ensemble exists");
            svn::predict(set, obs.robot_twist.as_ref(), &cfg.process_noise, &mut rng);
        }
        let set = particles.as_mut().expect("ensemble exists");

        let mut opts = base_opts;
        if toggles.use_motion_prior {
            if let Some(prev) = &prev_map {
                let predicted = match obs.robot_twist.as_ref() {
                    Some(tw) => exp_se3(tw).compose(prev),
                    None => *prev,
                };
                opts.motion_prior = Some(MotionPrior {
                    predicted,
                    covariance: cfg.process_noise * MOTION_PRIOR_VAR_SCALE,
                    nll_cap: MOTION_PRIOR_NLL_CAP,
                });
            }
        }
        let ctx = ResidualContext {
            intrinsics: &dataset.intrinsics,
            model: &dataset.model,
            calibration,
            options: opts,
        };
        let budget = cfg.iteration_budget(frames_since_init);

        match svn::transport(set, &obs, &ctx, &cfg, budget) {
            Ok(diag) => {
                if let Some(prior) = &ctx.options.motion_prior {
                    rescore_with_prediction(set, prior, &cfg.process_noise);
                }
                let map = svn::extract_map(set);
                let summary = svn::summarize(set, &map);
                row.status = "ok";
                row.q95_t = Some(summary.q95_trans);
                row.q95_r = Some(summary.q95_rot);
                row.fill_errors(&map, gt);
                fill_scores(&mut row, set, &map);
                if let Some(verdict) = classify(set, &map, gt) {
                    row.fill_modality(&verdict);
                }
                row.iterations = Some(diag.iterations);
                row.stop_reason = Some(stop_reason_str(diag.stop_reason));
                prev_map = Some(map);
                frames_since_init += 1;
                row.wall_time_ms = started.map(|t| t.elapsed().as_secs_f64() * 1e3);
                push_diag(
                    &mut diag_out,
                    &row,
                    set.len(),
                    Some(diag.best_nll),
                    Some(diag.backoffs),
                    Some((summary.q95_trans, summary.q95_rot)),
                )?;
                row.emit(&mut csv);
            }
            Err(e) => {
                if let Some(prev) = &prev_map {
                    // Keep tracking from the motion model alone.
                    log::warn!("frame {k}: update not assembled ({e}); predicting only");
                    let predicted = match obs.robot_twist.as_ref() {
                        Some(tw) => exp_se3(tw).compose(prev),
                        None => *prev,
                    };
                    row.status = "degraded";
                    row.fill_errors(&predicted, gt);
                    prev_map = Some(predicted);
                    frames_since_init += 1;
                    row.wall_time_ms = started.map(|t| t.elapsed().as_secs_f64() * 1e3);
                    let n = set.len();
                    push_diag(&mut diag_out, &row, n, None, None, None)?;
                    row.emit(&mut csv);
                } else {
                    // Nothing to predict from yet; retry initialization later.
                    log::warn!("frame {k}: first update not assembled ({e})");
                    particles = None;
                    row.status = "uninitialized";
                    push_diag(&mut diag_out, &row, 0, None, None, None)?;
                    row.emit(&mut csv);
                }
            }
        }
    }

    Ok(TrackOutput {
        results_csv: csv,
        diagnostics_jsonl: diag_out,
    })
}

fn run_pf(
    dataset: &Dataset,
    calibration: &NoiseCalibration,
    settings: &RunSettings,
    timing: bool,
) -> Result<TrackOutput> {
    let cfg = settings.pf.clone();
    let (base_opts, toggles) = settings.effective_options();
    let mut rng = ChaCha12Rng::seed_from_u64(settings.seed);

    let mut csv = result_header();
    csv.push('\n');
    let mut diag_out = String::new();

    let mut particles: Option<ParticleSet> = None;

    for (k, dframe) in dataset.frames.iter().enumerate() {
        let started = timing.then(Instant::now);
        let mut obs = dframe.observation.clone();
        if !toggles.use_robot_twist {
            obs.robot_twist = None;
        }
        let gt = dframe.gt_pose.as_ref();
        let mut row = Row {
            frame: k,
            method: "pf",
            ..Row::default()
        };

        if particles.is_none() {
            match pf::init_particles(&obs, &dataset.model, &cfg, &mut rng) {
                Ok(set) => {
                    particles = Some(set);
                    // The ensemble is already placed at this frame; the
                    // reported twist describes motion *into* it.
                    obs.robot_twist = None;
                }
                Err(e) => {
                    log::warn!("frame {k}: not initialized ({e})");
                    row.status = "uninitialized";
                    push_diag(&mut diag_out, &row, 0, None, None, None)?;
                    row.emit(&mut csv);
                    continue;
                }
            }
        }
        let set = particles.as_mut().expect("ensemble exists");

        let ctx = ResidualContext {
            intrinsics: &dataset.intrinsics,
            model: &dataset.model,
            calibration,
            options: base_opts,
        };
        let (summary, diag) = pf::pf_step(set, &obs, &ctx, &cfg, &mut rng);

        row.status = if diag.best_nll.is_finite() {
            "ok"
        } else {
            "degraded"
        };
        row.q95_t = Some(summary.q95_trans);
        row.q95_r = Some(summary.q95_rot);
        row.fill_errors(&summary.map_pose, gt);
        fill_scores(&mut row, set, &summary.map_pose);
        if let Some(verdict) = classify(set, &summary.map_pose, gt) {
            row.fill_modality(&verdict);
        }
        row.wall_time_ms = started.map(|t| t.elapsed().as_secs_f64() * 1e3);
        push_diag_pf(&mut diag_out, &row, set.len(), &diag, &summary)?;
        row.emit(&mut csv);
    }

    Ok(TrackOutput {
        results_csv: csv,
        diagnostics_jsonl: diag_out,
    })
}

fn push_diag(
    out: &mut String,
    row: &Row,
    n_particles: usize,
    best_nll: Option<f64>,
    backoffs: Option<usize>,
    q95: Option<(f64, f64)>,
) -> Result<()> {
    let record = DiagRecord {
        frame: row.frame,
        method: row.method,
        status: row.status,
        n_particles,
        best_nll: best_nll.filter(|x| x.is_finite()),
        iterations: row.iterations,
        backoffs,
        ess: None,
        resampled: None,
        q95_t_m: q95.map(|q| q.0),
        q95_r_rad: q95.map(|q| q.1),
    };
    out.push_str(&serde_json::to_string(&record)?);
    out.push('\n');
    Ok(())
}

fn push_diag_pf(
    out: &mut String,
    row: &Row,
    n_particles: usize,
    diag: &pf::PfDiag,
    summary: &svn::PosteriorSummary,
) -> Result<()> {
    let record = DiagRecord {
        frame: row.frame,
        method: row.method,
        status: row.status,
        n_particles,
        best_nll: diag.best_nll.is_finite().then_some(diag.best_nll),
        iterations: None,
        backoffs: None,
        ess: Some(diag.ess),
        resampled: Some(diag.resampled),
        q95_t_m: Some(summary.q95_trans),
        q95_r_rad: Some(summary.q95_rot),
    };
    out.push_str(&serde_json::to_string(&record)?);
    out.push('\n');
    Ok(())
}

/// Builds a dataset in memory from the synthetic scene generator.
pub fn synthesize_dataset(
    spec: &synth::TrajectorySpec,
    calibration: &NoiseCalibration,
) -> Result<Dataset> {
    use crate::schema::{DatasetFrame, TrajectoryDto};

    let intrinsics = synth::default_intrinsics();
    let model = arcpose::needle::NeedleModel::default();
    let frames = synth::generate(spec, &intrinsics, &model, calibration)
        .map_err(|e| crate::error::CliError::numeric(format!("scene generation: {e}")))?;
    let frames = frames
        .into_iter()
        .map(|f| DatasetFrame {
            observation: f.observation,
            gt_pose: Some(f.gt_pose),
            occlusion: f.occlusion,
        })
        .collect();
    Ok(Dataset {
        intrinsics,
        model,
        calibration: Some(calibration.clone()),
        trajectory: Some(TrajectoryDto::from_spec(spec)),
        frames,
    })
}
