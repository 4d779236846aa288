//! On-disk formats: JSONL datasets, calibration files, and run configs.
//!
//! A dataset is a JSON-lines file whose first line is a [`DatasetHeader`]
//! (camera intrinsics, needle geometry, optional generator provenance) and
//! whose remaining lines are one [`FrameDto`] each.  Calibration and run
//! configuration are single JSON documents.  All values are SI (meters,
//! radians, seconds) except pixel coordinates; field names carry unit
//! suffixes so files are self-describing.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;
use std::str::FromStr;

use arcpose::camera::CameraIntrinsics;
use arcpose::geometry::{Pose, Twist};
use arcpose::needle::NeedleModel;
use arcpose::pf::PfConfig;
use arcpose::residuals::{AssembleOptions, NoiseCalibration, Observation};
use arcpose::svn::SvnConfig;
use arcpose::synth::{OcclusionLevel, TrajectoryKind, TrajectorySpec};
use nalgebra::{Matrix3, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DATASET_SCHEMA: &str = "arcpose.dataset.v1";
pub const CALIBRATION_SCHEMA: &str = "arcpose.calibration.v1";
pub const CONFIG_SCHEMA: &str = "arcpose.config.v1";

/// Largest rotation-matrix orthonormality defect accepted when reading a
/// pose from disk.
const MAX_ORTHONORMALITY_DEFECT: f64 = 1e-3;

// ---------------------------------------------------------------------------
// Wire DTOs
// ---------------------------------------------------------------------------

/// Rigid transform on the wire: row-major rotation plus translation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseDto {
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl PoseDto {
    pub fn from_pose(pose: &Pose) -> Self {
        let m = pose.rotation();
        PoseDto {
            r: [
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 0)],
                m[(2, 1)],
                m[(2, 2)],
            ],
            t: [
                pose.translation().x,
                pose.translation().y,
                pose.translation().z,
            ],
        }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        let r = &self.r;
        let rot = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
        let pose = Pose::new(rot, Vector3::new(self.t[0], self.t[1], self.t[2]));
        let defect = pose.orthonormality_error();
        if !defect.is_finite() || defect > MAX_ORTHONORMALITY_DEFECT {
            return Err(CliError::data(format!(
                "pose rotation is not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(pose)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntrinsicsDto {
    pub fx_px: f64,
    pub fy_px: f64,
    pub cx_px: f64,
    pub cy_px: f64,
    pub width_px: u32,
    pub height_px: u32,
}

impl IntrinsicsDto {
    pub fn from_intrinsics(k: &CameraIntrinsics) -> Self {
        IntrinsicsDto {
            fx_px: k.fx,
            fy_px: k.fy,
            cx_px: k.cx,
            cy_px: k.cy,
            width_px: k.width,
            height_px: k.height,
        }
    }

    pub fn to_intrinsics(&self) -> Result<CameraIntrinsics> {
        let k = CameraIntrinsics {
            fx: self.fx_px,
            fy: self.fy_px,
            cx: self.cx_px,
            cy: self.cy_px,
            width: self.width_px,
            height: self.height_px,
        };
        if !k.is_valid() {
            return Err(CliError::data("camera intrinsics are invalid"));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeedleDto {
    pub radius_m: f64,
    pub arc_span_rad: f64,
    pub theta_tip_rad: f64,
    pub theta_tail_rad: f64,
    pub theta_grasp_rad: f64,
    pub wire_diameter_m: f64,
}

impl NeedleDto {
    pub fn from_model(m: &NeedleModel) -> Self {
        NeedleDto {
            radius_m: m.radius,
            arc_span_rad: m.arc_span,
            theta_tip_rad: m.theta_tip,
            theta_tail_rad: m.theta_tail,
            theta_grasp_rad: m.theta_grasp,
            wire_diameter_m: m.wire_diameter,
        }
    }

    pub fn to_model(&self) -> Result<NeedleModel> {
        let m = NeedleModel {
            radius: self.radius_m,
            arc_span: self.arc_span_rad,
            theta_tip: self.theta_tip_rad,
            theta_tail: self.theta_tail_rad,
            theta_grasp: self.theta_grasp_rad,
            wire_diameter: self.wire_diameter_m,
        };
        m.validate()
            .map_err(|e| CliError::data(format!("needle model: {e}")))?;
        Ok(m)
    }
}

/// Provenance block recorded when a dataset comes from the built-in
/// scene generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryDto {
    pub kind: String,
    pub n_frames: usize,
    pub dt_s: f64,
    pub speed_m_per_s: f64,
    pub rot_amplitude_rad: f64,
    pub seed: u64,
}

impl TrajectoryDto {
    pub fn from_spec(spec: &TrajectorySpec) -> Self {
        TrajectoryDto {
            kind: kind_to_str(spec.kind).to_string(),
            n_frames: spec.n_frames,
            dt_s: spec.dt,
            speed_m_per_s: spec.speed,
            rot_amplitude_rad: spec.rot_amplitude,
            seed: spec.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: String,
    pub intrinsics: IntrinsicsDto,
    pub needle: NeedleDto,
    /// Noise scales the observations were rendered with, when known.
    pub calibration: Option<CalibrationFile>,
    pub trajectory: Option<TrajectoryDto>,
}

/// One observation frame on the wire.  Pixel coordinates are `[u, v]`;
/// the robot twist is `[vx, vy, vz, wx, wy, wz]` (translation first).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameDto {
    pub t_s: f64,
    pub tip_px: Option<[f64; 2]>,
    pub tail_px: Option<[f64; 2]>,
    pub backbone_px: Vec<[f64; 2]>,
    pub grasp_pos_m: Option<[f64; 3]>,
    pub grasper_axis: Option<[f64; 3]>,
    pub robot_twist: Option<[f64; 6]>,
    pub gt_pose: Option<PoseDto>,
    pub occlusion: String,
}

// ---------------------------------------------------------------------------
// In-memory dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DatasetFrame {
    pub observation: Observation,
    pub gt_pose: Option<Pose>,
    pub occlusion: OcclusionLevel,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub intrinsics: CameraIntrinsics,
    pub model: NeedleModel,
    /// Noise scales the observations were rendered with, when known.
    pub calibration: Option<NoiseCalibration>,
    pub trajectory: Option<TrajectoryDto>,
    pub frames: Vec<DatasetFrame>,
}

pub fn kind_to_str(kind: TrajectoryKind) -> &'static str {
    match kind {
        TrajectoryKind::Slow => "slow",
        TrajectoryKind::Normal => "normal",
        TrajectoryKind::InducedRotation => "induced_rotation",
        TrajectoryKind::SuturingOcclusion => "suturing_occlusion",
    }
}

pub fn kind_from_str(s: &str) -> Result<TrajectoryKind> {
    match s {
        "slow" => Ok(TrajectoryKind::Slow),
        "normal" => Ok(TrajectoryKind::Normal),
        "induced_rotation" => Ok(TrajectoryKind::InducedRotation),
        "suturing_occlusion" => Ok(TrajectoryKind::SuturingOcclusion),
        other => Err(CliError::data(format!(
            "unknown trajectory kind {other:?} (expected slow, normal, \
             induced_rotation, or suturing_occlusion)"
        ))),
    }
}

pub fn occlusion_to_str(level: OcclusionLevel) -> &'static str {
    match level {
        OcclusionLevel::None => "none",
        OcclusionLevel::Partial => "partial",
        OcclusionLevel::Heavy => "heavy",
    }
}

pub fn occlusion_from_str(s: &str) -> Result<OcclusionLevel> {
    match s {
        "none" => Ok(OcclusionLevel::None),
        "partial" => Ok(OcclusionLevel::Partial),
        "heavy" => Ok(OcclusionLevel::Heavy),
        other => Err(CliError::data(format!(
            "unknown occlusion level {other:?} (expected none, partial, or heavy)"
        ))),
    }
}

fn vec2(a: [f64; 2]) -> Vector2<f64> {
    Vector2::new(a[0], a[1])
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn frame_to_dto(frame: &DatasetFrame) -> FrameDto {
    let obs = &frame.observation;
    FrameDto {
        t_s: obs.timestamp,
        tip_px: obs.tip_px.map(|p| [p.x, p.y]),
        tail_px: obs.tail_px.map(|p| [p.x, p.y]),
        backbone_px: obs.backbone_px.iter().map(|p| [p.x, p.y]).collect(),
        grasp_pos_m: obs.grasp_pos.map(|p| [p.x, p.y, p.z]),
        grasper_axis: obs.grasper_axis.map(|a| [a.x, a.y, a.z]),
        robot_twist: obs.robot_twist.as_ref().map(|tw| {
            let x = tw.0;
            [x[0], x[1], x[2], x[3], x[4], x[5]]
        }),
        gt_pose: frame.gt_pose.as_ref().map(PoseDto::from_pose),
        occlusion: occlusion_to_str(frame.occlusion).to_string(),
    }
}

fn frame_from_dto(dto: &FrameDto) -> Result<DatasetFrame> {
    let observation = Observation {
        tip_px: dto.tip_px.map(vec2),
        tail_px: dto.tail_px.map(vec2),
        backbone_px: dto.backbone_px.iter().copied().map(vec2).collect(),
        grasp_pos: dto.grasp_pos_m.map(vec3),
        grasper_axis: dto.grasper_axis.map(vec3),
        robot_twist: dto
            .robot_twist
            .map(|x| Twist(Vector6::from_column_slice(&x))),
        timestamp: dto.t_s,
    };
    let gt_pose = match &dto.gt_pose {
        Some(p) => Some(p.to_pose()?),
        None => None,
    };
    Ok(DatasetFrame {
        observation,
        gt_pose,
        occlusion: occlusion_from_str(&dto.occlusion)?,
    })
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let header = DatasetHeader {
        schema_version: DATASET_SCHEMA.to_string(),
        intrinsics: IntrinsicsDto::from_intrinsics(&dataset.intrinsics),
        needle: NeedleDto::from_model(&dataset.model),
        calibration: dataset
            .calibration
            .as_ref()
            .map(CalibrationFile::from_calibration),
        trajectory: dataset.trajectory.clone(),
    };
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&header)?);
    out.push('\n');
    for frame in &dataset.frames {
        out.push_str(&serde_json::to_string(&frame_to_dto(frame))?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header_line = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(CliError::data("dataset is empty")),
        }
    };
    let header: DatasetHeader = serde_json::from_str(&header_line)?;
    if header.schema_version != DATASET_SCHEMA {
        return Err(CliError::data(format!(
            "unsupported dataset schema {:?} (expected {DATASET_SCHEMA:?})",
            header.schema_version
        )));
    }
    let intrinsics = header.intrinsics.to_intrinsics()?;
    let model = header.needle.to_model()?;
    let calibration = match &header.calibration {
        Some(c) => Some(c.to_calibration()?),
        None => None,
    };

    let mut frames = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let dto: FrameDto = serde_json::from_str(&line)
            .map_err(|e| CliError::data(format!("frame {idx}: {e}")))?;
        frames.push(frame_from_dto(&dto)?);
    }
    if frames.is_empty() {
        return Err(CliError::data("dataset contains no frames"));
    }
    for pair in frames.windows(2) {
        if !(pair[1].observation.timestamp > pair[0].observation.timestamp) {
            return Err(CliError::data(
                "frame timestamps must be strictly increasing",
            ));
        }
    }
    Ok(Dataset {
        intrinsics,
        model,
        calibration,
        trajectory: header.trajectory,
        frames,
    })
}

// ---------------------------------------------------------------------------
// Calibration file
// ---------------------------------------------------------------------------

/// Per-channel noise scales.  Keypoint order is tip, tail, backbone,
/// grasp-projection; the perpendicularity scale is unitless (it scales a
/// dot product of unit vectors).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub schema_version: String,
    pub sigma_keypoint_px: [f64; 4],
    pub sigma_conic_px: f64,
    pub sigma_anchor_m: [f64; 3],
    pub sigma_perp: f64,
}

impl CalibrationFile {
    pub fn from_calibration(c: &NoiseCalibration) -> Self {
        CalibrationFile {
            schema_version: CALIBRATION_SCHEMA.to_string(),
            sigma_keypoint_px: c.sigma_keypoint,
            sigma_conic_px: c.sigma_conic,
            sigma_anchor_m: [c.sigma_anchor.x, c.sigma_anchor.y, c.sigma_anchor.z],
            sigma_perp: c.sigma_perp,
        }
    }

    pub fn to_calibration(&self) -> Result<NoiseCalibration> {
        if self.schema_version != CALIBRATION_SCHEMA {
            return Err(CliError::data(format!(
                "unsupported calibration schema {:?} (expected {CALIBRATION_SCHEMA:?})",
                self.schema_version
            )));
        }
        let all = self
            .sigma_keypoint_px
            .iter()
            .chain(self.sigma_anchor_m.iter())
            .chain([&self.sigma_conic_px, &self.sigma_perp]);
        for sigma in all {
            if !(sigma.is_finite() && *sigma > 0.0) {
                return Err(CliError::data("noise scales must be finite and positive"));
            }
        }
        Ok(NoiseCalibration {
            sigma_keypoint: self.sigma_keypoint_px,
            sigma_conic: self.sigma_conic_px,
            sigma_anchor: vec3(self.sigma_anchor_m),
            sigma_perp: self.sigma_perp,
        })
    }
}

pub fn save_calibration(path: &Path, calibration: &NoiseCalibration) -> Result<()> {
    let file = CalibrationFile::from_calibration(calibration);
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_calibration(path: &Path) -> Result<NoiseCalibration> {
    let text = fs::read_to_string(path)?;
    let file: CalibrationFile = serde_json::from_str(&text)?;
    file.to_calibration()
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Svn,
    Pf,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Svn => "svn",
            Method::Pf => "pf",
        }
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svn" => Ok(Method::Svn),
            "pf" => Ok(Method::Pf),
            other => Err(CliError::data(format!(
                "unknown method {other:?} (expected svn or pf)"
            ))),
        }
    }
}

/// A named subset of the measurement model to disable, or a solver variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Ablation {
    /// Drop the dense conic channel.
    NoDense,
    /// Drop the sparse keypoint channel.
    NoSparse,
    /// Keep only the tip keypoint within the sparse channel.
    OneKeypoint,
    /// Drop both image channels (kinematics only).
    NoImage,
    /// Drop the grasp-anchor channel.
    NoRobotPos,
    /// Drop the grasper-axis perpendicularity channel.
    NoRobotOri,
    /// Drop both kinematic channels and the motion prior.
    NoRobotNoMotion,
    /// Replace the Newton transport with plain kernel descent.
    Svgd,
}

impl Ablation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::NoDense => "no_dense",
            Ablation::NoSparse => "no_sparse",
            Ablation::OneKeypoint => "one_keypoint",
            Ablation::NoImage => "no_image",
            Ablation::NoRobotPos => "no_robot_pos",
            Ablation::NoRobotOri => "no_robot_ori",
            Ablation::NoRobotNoMotion => "no_robot_no_motion",
            Ablation::Svgd => "svgd",
        }
    }
}

impl FromStr for Ablation {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_dense" => Ok(Ablation::NoDense),
            "no_sparse" => Ok(Ablation::NoSparse),
            "one_keypoint" => Ok(Ablation::OneKeypoint),
            "no_image" => Ok(Ablation::NoImage),
            "no_robot_pos" => Ok(Ablation::NoRobotPos),
            "no_robot_ori" => Ok(Ablation::NoRobotOri),
            "no_robot_no_motion" => Ok(Ablation::NoRobotNoMotion),
            "svgd" => Ok(Ablation::Svgd),
            other => Err(CliError::data(format!("unknown ablation flag {other:?}"))),
        }
    }
}

/// Optional solver overrides as stored in a config file; anything absent
/// keeps its built-in default.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvnOverrides {
    pub n_particles: Option<usize>,
    pub max_iters_initial: Option<usize>,
    pub max_iters_steady: Option<usize>,
    pub warmup_frames: Option<usize>,
    pub eig_floor_eps: Option<f64>,
    pub kernel_scale_t_m: Option<f64>,
    pub kernel_scale_r_rad: Option<f64>,
    pub process_sigma_t_m: Option<f64>,
    pub process_sigma_r_rad: Option<f64>,
    pub stop_trans_m: Option<f64>,
    pub stop_rot_rad: Option<f64>,
    pub stop_logpost_delta: Option<f64>,
    pub stop_patience: Option<usize>,
    pub step_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfOverrides {
    pub n_particles: Option<usize>,
    pub rw_sigma_t_m: Option<f64>,
    pub rw_sigma_r_rad: Option<f64>,
    pub ess_frac: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConfigFile {
    pub schema_version: Option<String>,
    pub method: Option<String>,
    pub seed: Option<u64>,
    pub ablation: Option<Vec<String>>,
    pub svn: Option<SvnOverrides>,
    pub pf: Option<PfOverrides>,
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path)?;
    let file: ConfigFile = serde_json::from_str(&text)?;
    if let Some(version) = &file.schema_version {
        if version != CONFIG_SCHEMA {
            return Err(CliError::data(format!(
                "unsupported config schema {version:?} (expected {CONFIG_SCHEMA:?})"
            )));
        }
    }
    Ok(file)
}

fn process_noise_diag(sigma_t: f64, sigma_r: f64) -> Matrix6<f64> {
    let mut q = Matrix6::zeros();
    for i in 0..3 {
        q[(i, i)] = sigma_t * sigma_t;
        q[(i + 3, i + 3)] = sigma_r * sigma_r;
    }
    q
}

/// Fully resolved run settings: config file values overlaid on built-in
/// defaults, then command-line flags overlaid on both.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub method: Method,
    pub seed: u64,
    pub ablation: BTreeSet<Ablation>,
    pub svn: SvnConfig,
    pub pf: PfConfig,
}

/// Per-run channel toggles that live outside `AssembleOptions`.
#[derive(Debug, Clone, Copy)]
pub struct TrackingToggles {
    /// Include motion-prior terms in the per-frame objective.
    pub use_motion_prior: bool,
    /// Drive the prediction step with reported robot twists.
    pub use_robot_twist: bool,
}

impl RunSettings {
    pub fn resolve(
        file: Option<&ConfigFile>,
        cli_method: Option<Method>,
        cli_seed: Option<u64>,
        cli_ablate: &[Ablation],
    ) -> Result<RunSettings> {
        let mut method = Method::Svn;
        let mut seed = 0u64;
        let mut ablation: BTreeSet<Ablation> = BTreeSet::new();
        let mut svn = SvnConfig::default();
        let mut pf = PfConfig::default();

        if let Some(file) = file {
            if let Some(m) = &file.method {
                method = m.parse()?;
            }
            if let Some(s) = file.seed {
                seed = s;
            }
            if let Some(flags) = &file.ablation {
                for flag in flags {
                    ablation.insert(flag.parse()?);
                }
            }
            if let Some(o) = &file.svn {
                if let Some(v) = o.n_particles {
                    svn.n_particles = v;
                }
                if let Some(v) = o.max_iters_initial {
                    svn.max_iters_initial = v;
                }
                if let Some(v) = o.max_iters_steady {
                    svn.max_iters_steady = v;
                }
                if let Some(v) = o.warmup_frames {
                    svn.warmup_frames = v;
                }
                if let Some(v) = o.eig_floor_eps {
                    svn.eig_floor_eps = v;
                }
                if let Some(v) = o.kernel_scale_t_m {
                    svn.kernel_scale_t = v;
                }
                if let Some(v) = o.kernel_scale_r_rad {
                    svn.kernel_scale_r = v;
                }
                if o.process_sigma_t_m.is_some() || o.process_sigma_r_rad.is_some() {
                    let sigma_t = o.process_sigma_t_m.unwrap_or(0.5e-3);
                    let sigma_r = o.process_sigma_r_rad.unwrap_or(2.5f64.to_radians());
                    svn.process_noise = process_noise_diag(sigma_t, sigma_r);
                }
                if let Some(v) = o.stop_trans_m {
                    svn.stop_trans = v;
                }
                if let Some(v) = o.stop_rot_rad {
                    svn.stop_rot = v;
                }
                if let Some(v) = o.stop_logpost_delta {
                    svn.stop_logpost_delta = v;
                }
                if let Some(v) = o.stop_patience {
                    svn.stop_patience = v;
                }
                if let Some(v) = o.step_scale {
                    svn.step_scale = v;
                }
            }
            if let Some(o) = &file.pf {
                if let Some(v) = o.n_particles {
                    pf.n_particles = v;
                }
                if let Some(v) = o.rw_sigma_t_m {
                    pf.rw_sigma_t = v;
                }
                if let Some(v) = o.rw_sigma_r_rad {
                    pf.rw_sigma_r = v;
                }
                if let Some(v) = o.ess_frac {
                    pf.ess_frac = v;
                }
            }
        }

        if let Some(m) = cli_method {
            method = m;
        }
        if let Some(s) = cli_seed {
            seed = s;
        }
        for flag in cli_ablate {
            ablation.insert(*flag);
        }

        if ablation.contains(&Ablation::Svgd) {
            svn.svgd_mode = true;
        }

        Ok(RunSettings {
            method,
            seed,
            ablation,
            svn,
            pf,
        })
    }

    /// Expands the ablation set into measurement-assembly options plus the
    /// out-of-band toggles.
    pub fn effective_options(&self) -> (AssembleOptions, TrackingToggles) {
        let mut opts = AssembleOptions::default();
        let mut toggles = TrackingToggles {
            use_motion_prior: true,
            use_robot_twist: true,
        };
        for flag in &self.ablation {
            match flag {
                Ablation::NoDense => opts.use_dense = false,
                Ablation::NoSparse => opts.use_sparse = false,
                Ablation::OneKeypoint => opts.single_keypoint = true,
                Ablation::NoImage => {
                    opts.use_dense = false;
                    opts.use_sparse = false;
                }
                Ablation::NoRobotPos => opts.use_anchor = false,
                Ablation::NoRobotOri => opts.use_perp = false,
                Ablation::NoRobotNoMotion => {
                    opts.use_anchor = false;
                    opts.use_perp = false;
                    toggles.use_motion_prior = false;
                    toggles.use_robot_twist = false;
                }
                Ablation::Svgd => {}
            }
        }
        (opts, toggles)
    }
}

// ---------------------------------------------------------------------------
// Generic JSON helpers
// ---------------------------------------------------------------------------

/// Writes a value as pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use arcpose::synth;

    #[test]
    fn pose_round_trip_is_exact() {
        let pose = synth::base_pose();
        let dto = PoseDto::from_pose(&pose);
        let back = dto.to_pose().unwrap();
        assert_eq!(pose.rotation(), back.rotation());
        assert_eq!(pose.translation(), back.translation());
    }

    #[test]
    fn non_orthonormal_pose_is_rejected() {
        let dto = PoseDto {
            r: [1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0],
            t: [0.0; 3],
        };
        assert!(dto.to_pose().is_err());
    }

    #[test]
    fn ablation_flags_round_trip() {
        for flag in [
            Ablation::NoDense,
            Ablation::NoSparse,
            Ablation::OneKeypoint,
            Ablation::NoImage,
            Ablation::NoRobotPos,
            Ablation::NoRobotOri,
            Ablation::NoRobotNoMotion,
            Ablation::Svgd,
        ] {
            assert_eq!(flag.as_str().parse::<Ablation>().unwrap(), flag);
        }
    }

    #[test]
    fn no_image_disables_both_image_channels() {
        let settings = RunSettings::resolve(None, None, None, &[Ablation::NoImage]).unwrap();
        let (opts, toggles) = settings.effective_options();
        assert!(!opts.use_dense);
        assert!(!opts.use_sparse);
        assert!(opts.use_anchor);
        assert!(toggles.use_motion_prior);
    }

    #[test]
    fn no_robot_no_motion_disables_kinematics_and_prior() {
        let settings =
            RunSettings::resolve(None, None, None, &[Ablation::NoRobotNoMotion]).unwrap();
        let (opts, toggles) = settings.effective_options();
        assert!(!opts.use_anchor);
        assert!(!opts.use_perp);
        assert!(!toggles.use_motion_prior);
        assert!(!toggles.use_robot_twist);
        assert!(opts.use_dense && opts.use_sparse);
    }
}
