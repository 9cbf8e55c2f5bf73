//! Seeded synthetic desk scenes: a hand reaching, pushing and carrying blocks
//! while a head-mounted camera follows it with a lag.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::clip::{Clip, DimMode, JointSet, PointCloud};
use super::geometry::{
    add3, dist3, inverse3, mat3_mul, mat3_transpose, mat3_vec, normalize_homography, rigid, rot_x,
    rot_y, Mat3, Vec3, IDENTITY3,
};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const TABLE_Y: f64 = 0.45;
pub const BLOCK_SIZE: f64 = 0.05;
const BLOCK_Y: f64 = TABLE_Y - BLOCK_SIZE / 2.0;
const VL_SEED: u64 = 0x005E_ED0F_7E47;
const VL_INPUTS: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Reach,
    Push,
    PickPlace,
    LanguagePickPlace,
    LongHorizon,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Reach,
        Scenario::Push,
        Scenario::PickPlace,
        Scenario::LanguagePickPlace,
        Scenario::LongHorizon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Reach => "reach",
            Scenario::Push => "push",
            Scenario::PickPlace => "pick-place",
            Scenario::LanguagePickPlace => "language-pick-place",
            Scenario::LongHorizon => "long-horizon",
        }
    }

    pub fn default_frames(self) -> usize {
        match self {
            Scenario::Reach | Scenario::LanguagePickPlace => 10,
            Scenario::Push => 16,
            Scenario::PickPlace => 24,
            Scenario::LongHorizon => 30,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown scenario '{s}' (expected one of reach, push, pick-place, language-pick-place, long-horizon)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub scenario: String,
    /// Overrides the scenario's default clip length.
    pub frames: Option<usize>,
    pub fps: f64,
    pub mode: DimMode,
    /// Keeps the head still, so every homography is the identity.
    pub fixed_camera: bool,
    pub joint_ids: Vec<usize>,
    pub contact_eps: f64,
    pub head_lag: f64,
    pub head_gain: f64,
    pub head_omega: f64,
    /// `(height, width)`.
    pub image_size: (usize, usize),
    pub focal: f64,
    pub vl_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenario: "reach".into(),
            frames: None,
            fps: 10.0,
            mode: DimMode::Three,
            fixed_camera: false,
            joint_ids: JointSet::mano().ids,
            contact_eps: 0.03,
            head_lag: 0.15,
            head_gain: 0.8,
            head_omega: 12.0,
            image_size: (480, 640),
            focal: 300.0,
            vl_dim: 32,
        }
    }
}

impl SynthConfig {
    pub fn scenario(&self) -> Result<Scenario> {
        self.scenario.parse()
    }

    pub fn frames(&self) -> Result<usize> {
        let n = self.frames.unwrap_or(self.scenario()?.default_frames());
        if n < 2 {
            return Err(Error::Config(format!(
                "synthetic clips need at least 2 frames, got {n}"
            )));
        }
        Ok(n)
    }

    pub fn joint_set(&self) -> Result<JointSet> {
        JointSet::mano()
            .subset(&self.joint_ids)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario()?;
        self.frames()?;
        self.joint_set()?;
        let positive = [
            ("fps", self.fps),
            ("contact_eps", self.contact_eps),
            ("head_omega", self.head_omega),
            ("focal", self.focal),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{k} must be positive, got {v}")));
        }
        if !(self.head_lag >= 0.0 && self.head_gain.is_finite()) {
            return Err(Error::Config(
                "head_lag must be >= 0 and head_gain finite".into(),
            ));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 || self.vl_dim == 0 {
            return Err(Error::Config(
                "image size and vl_dim must be nonzero".into(),
            ));
        }
        Ok(())
    }

    /// Pinhole intrinsics with the principal point at the image center.
    pub fn intrinsics(&self) -> Mat3 {
        let (h, w) = self.image_size;
        [
            [self.focal, 0.0, w as f64 / 2.0],
            [0.0, self.focal, h as f64 / 2.0],
            [0.0, 0.0, 1.0],
        ]
    }
}

/// Fixed wrist-relative joint offsets in world axes, meters.
pub fn joint_offset(id: usize) -> Vec3 {
    match id {
        1 => [0.025, 0.0, 0.02],
        4 => [0.06, 0.01, 0.05],
        5 => [0.01, -0.01, 0.08],
        8 => [0.015, 0.0, 0.14],
        _ => [0.0; 3],
    }
}

/// `10τ³ − 15τ⁴ + 6τ⁵`, the position profile of a minimum-jerk move.
pub fn min_jerk_profile(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

pub fn min_jerk(p0: &Vec3, p1: &Vec3, tau: f64) -> Vec3 {
    if tau >= 1.0 {
        return *p1;
    }
    let s = min_jerk_profile(tau);
    [
        p0[0] + s * (p1[0] - p0[0]),
        p0[1] + s * (p1[1] - p0[1]),
        p0[2] + s * (p1[2] - p0[2]),
    ]
}

#[derive(Clone, Debug, PartialEq)]
struct Segment {
    t0: f64,
    t1: f64,
    from: Vec3,
    to: Vec3,
    /// Peak upward arc added on top of the straight line.
    lift: f64,
}

/// Piecewise minimum-jerk path that holds still between segments.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    start: Vec3,
    segments: Vec<Segment>,
}

impl Path {
    fn new(start: Vec3) -> Self {
        Self {
            start,
            segments: Vec::new(),
        }
    }

    fn end(&self) -> Vec3 {
        self.segments.last().map_or(self.start, |s| s.to)
    }

    fn end_time(&self) -> f64 {
        self.segments.last().map_or(f64::NEG_INFINITY, |s| s.t1)
    }

    fn push(&mut self, t0: f64, duration: f64, to: Vec3, lift: f64) -> (f64, f64) {
        let from = self.end();
        let t1 = t0 + duration;
        self.segments.push(Segment {
            t0,
            t1,
            from,
            to,
            lift,
        });
        (t0, t1)
    }

    pub fn at(&self, t: f64) -> Vec3 {
        for s in &self.segments {
            if t < s.t0 {
                return s.from;
            }
            if t <= s.t1 {
                let tau = (t - s.t0) / (s.t1 - s.t0);
                let mut p = min_jerk(&s.from, &s.to, tau);
                if s.lift != 0.0 && tau < 1.0 {
                    p[1] -= s.lift * (std::f64::consts::PI * tau).sin();
                }
                return p;
            }
        }
        self.end()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockColor {
    Blue,
    Red,
}

impl BlockColor {
    pub fn name(self) -> &'static str {
        match self {
            BlockColor::Blue => "blue",
            BlockColor::Red => "red",
        }
    }

    pub fn other(self) -> Self {
        match self {
            BlockColor::Blue => BlockColor::Red,
            BlockColor::Red => BlockColor::Blue,
        }
    }
}

pub fn language_instruction(color: BlockColor) -> String {
    format!("put the {} block onto the square cloth", color.name())
}

/// A block that rests where it is except while carried by the hand.
#[derive(Clone, Debug, PartialEq)]
struct Block {
    rest: Vec3,
    carried: Option<(f64, f64)>,
}

/// World-frame ground truth of one synthetic episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scenario: Scenario,
    pub times: Vec<f64>,
    /// Wrist position per frame.
    pub hand: Vec<Vec3>,
    /// Block centers per frame; index 0 is the manipulated (or instructed) block.
    pub blocks: Vec<Vec<Vec3>>,
    pub cloth: Vec3,
    /// Camera-to-world rotations (the head sits at the world origin).
    pub head: Vec<Mat3>,
    pub task: Option<String>,
    /// Colors of `blocks[0]` and `blocks[1]`.
    pub colors: [BlockColor; 2],
}

impl Scene {
    /// Distance from the wrist to the nearest block.
    pub fn contact_distance(&self, frame: usize) -> f64 {
        self.blocks
            .iter()
            .map(|b| dist3(&self.hand[frame], &b[frame]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn states(&self, eps: f64) -> Vec<u8> {
        (0..self.times.len())
            .map(|k| u8::from(self.contact_distance(k) < eps))
            .collect()
    }
}

fn uniform3(rng: &mut ChaCha8Rng, lo: Vec3, hi: Vec3) -> Vec3 {
    [
        rng.gen_range(lo[0]..hi[0]),
        rng.gen_range(lo[1]..hi[1]),
        rng.gen_range(lo[2]..hi[2]),
    ]
}

fn hand_start(rng: &mut ChaCha8Rng) -> Vec3 {
    uniform3(rng, [-0.3, 0.05, 0.3], [0.3, 0.2, 0.45])
}

fn block_on_table(rng: &mut ChaCha8Rng, x: (f64, f64)) -> Vec3 {
    [rng.gen_range(x.0..x.1), BLOCK_Y, rng.gen_range(0.55..0.8)]
}

/// Fraction of a straight minimum-jerk move after which the remaining
/// distance drops below `eps`.
fn contact_tau(length: f64, eps: f64) -> f64 {
    let target = 1.0 - eps / length;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if min_jerk_profile(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Two blocks and a cloth, kept apart so that a contact with one never
/// grazes the other.
fn layout(rng: &mut ChaCha8Rng) -> (Vec3, Vec3, Vec3) {
    loop {
        let a = block_on_table(rng, (-0.3, 0.3));
        let b = block_on_table(rng, (-0.3, 0.3));
        let cloth = [rng.gen_range(-0.3..0.3), TABLE_Y, rng.gen_range(0.5..0.85)];
        if dist3(&a, &b) > 0.15
            && dist3(&a, &cloth) > 0.12
            && dist3(&b, &cloth) > 0.15
            && dist3(&a, &cloth) < 0.25
        {
            return (a, b, cloth);
        }
    }
}

fn place_on(cloth: &Vec3) -> Vec3 {
    [cloth[0], BLOCK_Y - 0.005, cloth[2]]
}

fn block_at(block: &Block, hand: &Path, t: f64) -> Vec3 {
    match block.carried {
        Some((t0, t1)) if t >= t0 => hand.at(t.min(t1)),
        _ => block.rest,
    }
}

/// Builds the world-frame episode for clip `index` of the dataset seeded by
/// `seed`. Each index draws from its own ChaCha stream.
pub fn simulate(cfg: &SynthConfig, seed: u64, index: u64) -> Result<Scene> {
    cfg.validate()?;
    let scenario = cfg.scenario()?;
    let frames = cfg.frames()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);

    let (mut a_pos, mut b_pos, cloth) = layout(&mut rng);
    let mut colors = [BlockColor::Blue, BlockColor::Red];
    let mut task = None;
    let mut carried = None;
    let hand = match scenario {
        Scenario::Reach => {
            let start = hand_start(&mut rng);
            let duration = rng.gen_range(0.9..1.3);
            let offset = rng.gen_range(-0.05..0.15);
            let mut p = Path::new(start);
            p.push(offset, duration, a_pos, 0.0);
            p
        }
        Scenario::LanguagePickPlace => {
            // Blocks on either side of a centered start, so the instruction is
            // what disambiguates the goal early on.
            let start = uniform3(&mut rng, [-0.05, 0.08, 0.3], [0.05, 0.15, 0.4]);
            let left = [
                rng.gen_range(-0.3..-0.15),
                BLOCK_Y,
                rng.gen_range(0.55..0.75),
            ];
            let right = [rng.gen_range(0.15..0.3), BLOCK_Y, rng.gen_range(0.55..0.75)];
            let blue_left = rng.gen_bool(0.5);
            let (blue, red) = if blue_left {
                (left, right)
            } else {
                (right, left)
            };
            let instructed = if rng.gen_bool(0.5) {
                BlockColor::Blue
            } else {
                BlockColor::Red
            };
            colors = [instructed, instructed.other()];
            (a_pos, b_pos) = match instructed {
                BlockColor::Blue => (blue, red),
                BlockColor::Red => (red, blue),
            };
            task = Some(language_instruction(instructed));
            // The move starts after the default observed window (6 of 10
            // frames), so only the instruction tells the two blocks apart.
            let onset = rng.gen_range(0.5..0.55);
            let duration = rng.gen_range(0.6..0.7);
            let mut p = Path::new(start);
            p.push(onset, duration, a_pos, 0.0);
            p
        }
        Scenario::PickPlace => {
            let mut start = hand_start(&mut rng);
            while !(0.25..0.45).contains(&dist3(&start, &a_pos)) {
                start = hand_start(&mut rng);
            }
            let approach = rng.gen_range(0.8..1.0);
            let t_contact = rng.gen_range(1.31..1.49);
            let tau_c = contact_tau(dist3(&start, &a_pos), cfg.contact_eps);
            let mut p = Path::new(start);
            let (_, arrive) = p.push(t_contact - tau_c * approach, approach, a_pos, 0.0);
            let (_, placed) = p.push(arrive, 0.3, place_on(&cloth), 0.06);
            let retreat = add3(&place_on(&cloth), &[0.0, -0.15, -0.05]);
            p.push(placed, 0.4, retreat, 0.0);
            carried = Some((arrive, placed));
            p
        }
        Scenario::Push => {
            let start = hand_start(&mut rng);
            let approach = rng.gen_range(0.7..0.9);
            let onset = rng.gen_range(0.1..0.3);
            let mut dir = [a_pos[0] - start[0], 0.0, a_pos[2] - start[2]];
            let n = (dir[0] * dir[0] + dir[2] * dir[2]).sqrt().max(1e-9);
            dir = [dir[0] / n, 0.0, dir[2] / n];
            let shove = rng.gen_range(0.1..0.15);
            let pushed = [
                a_pos[0] + shove * dir[0],
                BLOCK_Y,
                a_pos[2] + shove * dir[2],
            ];
            let mut p = Path::new(start);
            let (_, arrive) = p.push(onset, approach, a_pos, 0.0);
            let (_, done) = p.push(arrive, 0.4, pushed, 0.0);
            p.push(done, 0.3, add3(&pushed, &[0.0, -0.12, 0.0]), 0.0);
            carried = Some((arrive, done));
            p
        }
        Scenario::LongHorizon => {
            let start = hand_start(&mut rng);
            let onset = rng.gen_range(0.05..0.2);
            let mut p = Path::new(start);
            let (_, arrive) = p.push(onset, rng.gen_range(0.7..0.9), a_pos, 0.0);
            let (_, placed) = p.push(arrive, 0.5, place_on(&cloth), 0.06);
            let lifted = add3(&place_on(&cloth), &[0.0, -0.1, 0.0]);
            let (_, up) = p.push(placed, 0.3, lifted, 0.0);
            p.push(up, rng.gen_range(0.7..0.9), b_pos, 0.0);
            carried = Some((arrive, placed));
            p
        }
    };

    let blocks = [
        Block {
            rest: a_pos,
            carried,
        },
        Block {
            rest: b_pos,
            carried: None,
        },
    ];
    let times: Vec<f64> = (0..frames).map(|k| k as f64 / cfg.fps).collect();
    let hand_track: Vec<Vec3> = times.iter().map(|&t| hand.at(t)).collect();
    let block_tracks = blocks
        .iter()
        .map(|b| times.iter().map(|&t| block_at(b, &hand, t)).collect())
        .collect();
    let head = if cfg.fixed_camera {
        let r = look_rotation(&hand.at(0.0), cfg.head_gain);
        vec![r; frames]
    } else {
        head_track(&hand, &times, cfg)
    };
    debug_assert!(hand.end_time().is_finite());
    Ok(Scene {
        scenario,
        times,
        hand: hand_track,
        blocks: block_tracks,
        cloth,
        head,
        task,
        colors,
    })
}

fn look_angles(p: &Vec3) -> (f64, f64) {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt().max(1e-9);
    (p[0].atan2(p[2]), -(p[1] / n).asin())
}

fn head_rotation(yaw: f64, pitch: f64) -> Mat3 {
    mat3_mul(&rot_y(yaw), &rot_x(pitch))
}

fn look_rotation(p: &Vec3, gain: f64) -> Mat3 {
    let (yaw, pitch) = look_angles(p);
    head_rotation(gain * yaw, gain * pitch)
}

/// Critically damped second-order follower of the lagged hand direction,
/// integrated at 1 ms from a settled state half a second before frame 0.
fn head_track(hand: &Path, times: &[f64], cfg: &SynthConfig) -> Vec<Mat3> {
    let dt = 1e-3;
    let w = cfg.head_omega;
    let target = |t: f64| {
        let (y, p) = look_angles(&hand.at(t - cfg.head_lag));
        (cfg.head_gain * y, cfg.head_gain * p)
    };
    let t_begin = -0.5;
    let (mut yaw, mut pitch) = target(t_begin);
    let (mut vy, mut vp) = (0.0, 0.0);
    let mut out = Vec::with_capacity(times.len());
    let mut step: i64 = 0;
    for &t in times {
        let n_target = ((t - t_begin) / dt).round() as i64;
        while step < n_target {
            let now = t_begin + step as f64 * dt;
            let (ty, tp) = target(now);
            vy += dt * (w * w * (ty - yaw) - 2.0 * w * vy);
            vp += dt * (w * w * (tp - pitch) - 2.0 * w * vp);
            yaw += dt * vy;
            pitch += dt * vp;
            step += 1;
        }
        out.push(head_rotation(yaw, pitch));
    }
    out
}

fn project(k: &Mat3, p: &Vec3) -> [f64; 2] {
    let q = mat3_vec(k, p);
    [q[0] / q[2], q[1] / q[2]]
}

fn in_view(cfg: &SynthConfig, p: &Vec3) -> bool {
    if p[2] <= 0.05 {
        return false;
    }
    let [u, v] = project(&cfg.intrinsics(), p);
    let (h, w) = cfg.image_size;
    (0.0..w as f64).contains(&u) && (0.0..h as f64).contains(&v)
}

/// The fixed projection shared by every synthetic dataset's VL features.
pub fn vl_projection(dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(VL_SEED);
    (0..dim * VL_INPUTS)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn scene_points(scene: &Scene, k: usize) -> (Vec<Vec3>, Vec<bool>) {
    let mut pts = Vec::new();
    let mut arm = Vec::new();
    for i in 0..=10 {
        for j in 0..=8 {
            pts.push([-0.5 + 0.1 * i as f64, TABLE_Y, 0.2 + 0.1 * j as f64]);
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            pts.push([
                scene.cloth[0] - 0.06 + 0.06 * i as f64,
                TABLE_Y - 0.003,
                scene.cloth[2] - 0.06 + 0.06 * j as f64,
            ]);
        }
    }
    let h = BLOCK_SIZE / 2.0;
    for b in &scene.blocks {
        let c = b[k];
        for i in [-h, 0.0, h] {
            for j in [-h, 0.0, h] {
                for l in [-h, 0.0, h] {
                    pts.push([c[0] + i, c[1] + j, c[2] + l]);
                }
            }
        }
    }
    arm.resize(pts.len(), false);
    let wrist = scene.hand[k];
    let shoulder = [0.2, 0.3, -0.05];
    for i in 1..=8 {
        let s = i as f64 / 8.0;
        pts.push([
            wrist[0] + s * (shoulder[0] - wrist[0]),
            wrist[1] + s * (shoulder[1] - wrist[1]),
            wrist[2] + s * (shoulder[2] - wrist[2]),
        ]);
        arm.push(true);
    }
    (pts, arm)
}

/// Renders a scene into a clip: per-frame camera-space waypoints (3D) or
/// pixels (2D), poses, homographies, point clouds, VL features and states.
pub fn render(scene: &Scene, cfg: &SynthConfig, id: String) -> Result<Clip> {
    let frames = scene.times.len();
    let joint_set = cfg.joint_set()?;
    let k = cfg.intrinsics();
    let k_inv = inverse3(&k).ok_or_else(|| Error::Config("singular intrinsics".into()))?;
    let r0t = mat3_transpose(&scene.head[0]);
    let (ih, iw) = cfg.image_size;

    let mut homographies = Vec::with_capacity(frames);
    let mut poses = Vec::with_capacity(frames);
    let mut clouds = Vec::with_capacity(frames);
    let mut vl = Vec::with_capacity(frames * cfg.vl_dim);
    let proj = vl_projection(cfg.vl_dim);
    let mut tracks: Vec<Vec<f64>> = vec![Vec::new(); joint_set.width()];

    for t in 0..frames {
        let r = scene.head[t];
        let rt = mat3_transpose(&r);
        let to_cam = |p: &Vec3| mat3_vec(&rt, p);
        poses.push(rigid(&r, &[0.0; 3]));
        homographies.push(if t == 0 {
            IDENTITY3
        } else {
            normalize_homography(&mat3_mul(&mat3_mul(&k, &mat3_mul(&r0t, &r)), &k_inv))
        });

        for (j, id) in joint_set.ids.iter().enumerate() {
            let p = to_cam(&add3(&scene.hand[t], &joint_offset(*id)));
            match cfg.mode {
                DimMode::Three => tracks[j].extend_from_slice(&p),
                DimMode::Two => {
                    if p[2] <= 0.0 {
                        return Err(Error::Runtime(format!(
                            "{id}: joint behind the camera at frame {t}"
                        )));
                    }
                    tracks[j].extend_from_slice(&project(&k, &p));
                }
            }
        }

        let (pts, arm) = scene_points(scene, t);
        let mut kept = Vec::new();
        let mut mask = Vec::new();
        for (p, a) in pts.iter().zip(arm) {
            let c = to_cam(p);
            if in_view(cfg, &c) {
                kept.extend_from_slice(&c);
                mask.push(a);
            }
        }
        clouds.push(PointCloud {
            points: Tensor::matrix(mask.len(), 3, kept)?,
            arm_mask: mask,
        });

        // Blocks enter in color order, blue first, so the features say where
        // each color is but not which block is the goal.
        let (blue, red) = match scene.colors[0] {
            BlockColor::Blue => (0, 1),
            BlockColor::Red => (1, 0),
        };
        let mut input = vec![1.0];
        for p in [
            &scene.hand[t],
            &scene.blocks[blue][t],
            &scene.blocks[red][t],
            &place_on(&scene.cloth),
        ] {
            input.extend_from_slice(&to_cam(p));
        }
        for row in proj.chunks(VL_INPUTS) {
            let z: f64 = row.iter().zip(&input).map(|(a, b)| a * b).sum();
            vl.push(z.tanh());
        }
    }

    let canvas = |p: &Vec3| -> Vec<f64> {
        let c = mat3_vec(&r0t, p);
        match cfg.mode {
            DimMode::Three => c.to_vec(),
            DimMode::Two => {
                let [u, v] = project(&k, &c);
                vec![u / iw as f64, v / ih as f64]
            }
        }
    };
    let last = frames - 1;
    let mut annotations = BTreeMap::new();
    annotations.insert(
        "instructed_target".to_string(),
        canvas(&scene.blocks[0][last]),
    );
    annotations.insert("distractor".to_string(), canvas(&scene.blocks[1][last]));
    annotations.insert("place".to_string(), canvas(&place_on(&scene.cloth)));

    let waypoints = tracks
        .into_iter()
        .map(|d| Tensor::matrix(frames, cfg.mode.width(), d))
        .collect::<Result<Vec<_>>>()?;
    let clip = Clip {
        id,
        mode: cfg.mode,
        image_size: cfg.image_size,
        scenario: Some(scene.scenario.name().to_string()),
        homographies: Some(homographies),
        poses: Some(poses),
        point_clouds: Some(clouds),
        joint_set,
        waypoints,
        states: Some(scene.states(cfg.contact_eps)),
        task: scene.task.clone(),
        vl: Some(Tensor::matrix(frames, cfg.vl_dim, vl)?),
        annotations,
    };
    clip.validate()?;
    Ok(clip)
}

pub fn clip_id(scenario: Scenario, seed: u64, index: u64) -> String {
    format!("{}-{seed}-{index:05}", scenario.name())
}

/// Generates clip `index` of the dataset seeded by `seed`.
pub fn synth_clip(cfg: &SynthConfig, seed: u64, index: u64) -> Result<Clip> {
    let scene = simulate(cfg, seed, index)?;
    render(&scene, cfg, clip_id(scene.scenario, seed, index))
}

/// Generates `count` clips in parallel; clip `i` depends only on `(seed, i)`.
pub fn synth_generate(cfg: &SynthConfig, count: usize, seed: u64) -> Result<Vec<Clip>> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::Config("clip count must be at least 1".into()));
    }
    (0..count as u64)
        .into_par_iter()
        .map(|i| synth_clip(cfg, seed, i))
        .collect()
}
