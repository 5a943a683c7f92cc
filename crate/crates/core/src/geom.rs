//! Camera geometry, face-box synthesis from noisy 3D positions, and
//! azimuth ground truth.
//!
//! World frame: `x` is the array's forward axis at zero yaw, `y` points left
//! and `z` up. Azimuths are measured counter-clockwise from `x` when viewed
//! from above and always live in `[-180, 180)`.
//!
//! Extrinsics map world points into the camera frame as `p_c = R p + t`,
//! with the camera looking down its own `+z` axis, `x` right and `y` down.

use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::io::kv::KeyValues;

pub type WorldPoint = Point3<f64>;
pub type CameraPoint = Point3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("target coincides with the array origin")]
    DegenerateGeometry,
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("invalid microphone array: {0}")]
    InvalidArray(String),
    #[error("noise variances must be finite and non-negative")]
    InvalidNoise,
    #[error("face size must be positive")]
    InvalidFaceSize,
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let mut r = (deg + 180.0).rem_euclid(360.0);
    if r >= 360.0 {
        r -= 360.0;
    }
    r - 180.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Intrinsics {
    /// 640x480 sensor with a 500 px focal length (about 65 degrees horizontal FoV).
    fn default() -> Self {
        Self {
            fu: 500.0,
            fv: 500.0,
            cu: 320.0,
            cv: 240.0,
            width: 640,
            height: 480,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    intrinsics: Intrinsics,
}

impl CameraCalibration {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        intrinsics: Intrinsics,
    ) -> Result<Self, GeomError> {
        let bad = |m: &str| Err(GeomError::InvalidCalibration(m.to_string()));
        if !rotation.iter().chain(translation.iter()).all(|x| x.is_finite()) {
            return bad("non-finite extrinsics");
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return bad("rotation is not orthonormal with determinant +1");
        }
        let Intrinsics { fu, fv, cu, cv, width, height } = intrinsics;
        if !(fu > 0.0 && fv > 0.0 && fu.is_finite() && fv.is_finite()) {
            return bad("focal lengths must be positive");
        }
        if !(cu.is_finite() && cv.is_finite()) {
            return bad("principal point must be finite");
        }
        if width == 0 || height == 0 {
            return bad("image dimensions must be positive");
        }
        Ok(Self {
            rotation,
            translation,
            intrinsics,
        })
    }

    /// Camera at `position` looking along world `+x` rotated by `yaw_deg`,
    /// with image `u` growing to the right and `v` growing downward.
    pub fn looking_along(position: WorldPoint, yaw_deg: f64, intrinsics: Intrinsics) -> Result<Self, GeomError> {
        let (s, c) = yaw_deg.to_radians().sin_cos();
        // Rows are the camera axes expressed in world coordinates.
        let forward = Vector3::new(c, s, 0.0);
        let right = Vector3::new(s, -c, 0.0);
        let down = Vector3::new(0.0, 0.0, -1.0);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * position.coords);
        Self::new(rotation, translation, intrinsics)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    /// Horizontal half field of view in degrees.
    pub fn half_fov_u_deg(&self) -> f64 {
        let i = &self.intrinsics;
        (i.cu.max(i.width as f64 - i.cu) / i.fu).atan().to_degrees()
    }

    pub fn contains(&self, px: Pixel) -> bool {
        px.u >= 0.0
            && px.u < self.intrinsics.width as f64
            && px.v >= 0.0
            && px.v < self.intrinsics.height as f64
    }

    pub fn from_key_values(kv: &KeyValues) -> std::result::Result<Self, String> {
        let r = kv.require_numbers("rotation", 9)?;
        let t = kv.require_numbers("translation", 3)?;
        let intrinsics = Intrinsics {
            fu: kv.require("f_u")?,
            fv: kv.require("f_v")?,
            cu: kv.require("c_u")?,
            cv: kv.require("c_v")?,
            width: kv.require("width")?,
            height: kv.require("height")?,
        };
        Self::new(
            Matrix3::from_row_slice(&r),
            Vector3::new(t[0], t[1], t[2]),
            intrinsics,
        )
        .map_err(|e| e.to_string())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let join = |it: &mut dyn Iterator<Item = f64>| {
            it.map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
        };
        let mut kv = KeyValues::default();
        let r = &self.rotation;
        kv.push(
            "rotation",
            join(&mut (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)]))),
        );
        kv.push("translation", join(&mut self.translation.iter().copied()));
        let i = &self.intrinsics;
        kv.push("f_u", format!("{:?}", i.fu));
        kv.push("f_v", format!("{:?}", i.fv));
        kv.push("c_u", format!("{:?}", i.cu));
        kv.push("c_v", format!("{:?}", i.cv));
        kv.push("width", i.width);
        kv.push("height", i.height);
        kv
    }

    pub fn read(path: &Path) -> Result<Self> {
        let kv = KeyValues::read(path)?;
        Self::from_key_values(&kv).map_err(|m| Error::format(path, m))
    }
}

/// Diagonal covariance of the 3D annotation noise, stored as variances in m^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCov3 {
    variances: [f64; 3],
}

impl NoiseCov3 {
    pub fn from_variances(variances: [f64; 3]) -> Result<Self, GeomError> {
        if variances.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(Self { variances })
        } else {
            Err(GeomError::InvalidNoise)
        }
    }

    pub fn from_std_devs(sd: [f64; 3]) -> Result<Self, GeomError> {
        if sd.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(GeomError::InvalidNoise);
        }
        Self::from_variances(sd.map(|s| s * s))
    }

    pub fn zero() -> Self {
        Self { variances: [0.0; 3] }
    }

    pub fn variances(&self) -> [f64; 3] {
        self.variances
    }
}

impl Default for NoiseCov3 {
    /// `diag(0.2, 0.2, 0.2)` m^2.
    fn default() -> Self {
        Self {
            variances: [0.2; 3],
        }
    }
}

/// Physical face extent assumed when building boxes, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceSize {
    pub width: f64,
    pub height: f64,
}

impl FaceSize {
    pub fn new(width: f64, height: f64) -> Result<Self, GeomError> {
        if width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite() {
            Ok(Self { width, height })
        } else {
            Err(GeomError::InvalidFaceSize)
        }
    }
}

impl Default for FaceSize {
    fn default() -> Self {
        Self {
            width: 0.14,
            height: 0.18,
        }
    }
}

/// Face box in pixels: top-left corner plus width and height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(u: f64, v: f64, w: f64, h: f64) -> Option<Self> {
        let finite = [u, v, w, h].iter().all(|x| x.is_finite());
        (finite && w > 0.0 && h > 0.0).then_some(Self { u, v, w, h })
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.u, self.v, self.w, self.h]
    }
}

/// Microphone positions in the array frame plus the array pose in the world.
#[derive(Debug, Clone, PartialEq)]
pub struct MicArray {
    mics: Vec<Vector3<f64>>,
    origin: WorldPoint,
    yaw_deg: f64,
    speed_of_sound: f64,
}

impl MicArray {
    pub fn new(
        mics: Vec<Vector3<f64>>,
        origin: WorldPoint,
        yaw_deg: f64,
        speed_of_sound: f64,
    ) -> Result<Self, GeomError> {
        if mics.len() < 2 {
            return Err(GeomError::InvalidArray("need at least two microphones".into()));
        }
        if !mics.iter().flat_map(|m| m.iter()).all(|x| x.is_finite()) {
            return Err(GeomError::InvalidArray("non-finite microphone position".into()));
        }
        for i in 0..mics.len() {
            for j in i + 1..mics.len() {
                if (mics[i] - mics[j]).norm() < 1e-9 {
                    return Err(GeomError::InvalidArray(format!(
                        "microphones {i} and {j} coincide"
                    )));
                }
            }
        }
        if !(speed_of_sound > 0.0 && speed_of_sound.is_finite()) {
            return Err(GeomError::InvalidArray("speed of sound must be positive".into()));
        }
        if !yaw_deg.is_finite() || !origin.iter().all(|x| x.is_finite()) {
            return Err(GeomError::InvalidArray("non-finite pose".into()));
        }
        Ok(Self {
            mics,
            origin,
            yaw_deg,
            speed_of_sound,
        })
    }

    /// Four microphones on the corners of a horizontal square, centered on
    /// the origin, at zero yaw.
    pub fn square(side: f64) -> Self {
        let h = side / 2.0;
        let mics = vec![
            Vector3::new(h, h, 0.0),
            Vector3::new(h, -h, 0.0),
            Vector3::new(-h, -h, 0.0),
            Vector3::new(-h, h, 0.0),
        ];
        Self::new(mics, WorldPoint::origin(), 0.0, 343.0).expect("square array is valid")
    }

    pub fn with_pose(mut self, origin: WorldPoint, yaw_deg: f64) -> Self {
        self.origin = origin;
        self.yaw_deg = yaw_deg;
        self
    }

    pub fn mics(&self) -> &[Vector3<f64>] {
        &self.mics
    }

    pub fn len(&self) -> usize {
        self.mics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mics.is_empty()
    }

    pub fn origin(&self) -> WorldPoint {
        self.origin
    }

    pub fn yaw_deg(&self) -> f64 {
        self.yaw_deg
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    /// Unordered microphone pairs `(l, p)` with `l < p`, in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.mics.len();
        (0..n).flat_map(|l| (l + 1..n).map(move |p| (l, p))).collect()
    }

    pub fn max_pair_distance(&self) -> f64 {
        self.pairs()
            .into_iter()
            .map(|(l, p)| (self.mics[l] - self.mics[p]).norm())
            .fold(0.0, f64::max)
    }

    /// Far-field arrival delay of microphone `m` relative to the array origin,
    /// in seconds, for a source at azimuth `az_deg` in the array frame.
    pub fn arrival_delay(&self, m: usize, az_deg: f64) -> f64 {
        let (s, c) = az_deg.to_radians().sin_cos();
        let d = &self.mics[m];
        -(d.x * c + d.y * s) / self.speed_of_sound
    }

    pub fn from_key_values(kv: &KeyValues) -> std::result::Result<Self, String> {
        let mut mics = Vec::new();
        for v in kv.get_all("mic") {
            let n = KeyValues::numbers(v)?;
            if n.len() != 3 {
                return Err(format!("`mic`: expected 3 numbers, got {}", n.len()));
            }
            mics.push(Vector3::new(n[0], n[1], n[2]));
        }
        let c = kv.parse_value::<f64>("speed_of_sound")?.unwrap_or(343.0);
        let origin = match kv.get("origin") {
            Some(v) => {
                let n = KeyValues::numbers(v)?;
                if n.len() != 3 {
                    return Err("`origin`: expected 3 numbers".into());
                }
                WorldPoint::new(n[0], n[1], n[2])
            }
            None => WorldPoint::origin(),
        };
        let yaw = kv.parse_value::<f64>("yaw_deg")?.unwrap_or(0.0);
        Self::new(mics, origin, yaw, c).map_err(|e| e.to_string())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        for m in &self.mics {
            kv.push("mic", format!("{:?} {:?} {:?}", m.x, m.y, m.z));
        }
        let o = self.origin;
        kv.push("origin", format!("{:?} {:?} {:?}", o.x, o.y, o.z));
        kv.push("yaw_deg", format!("{:?}", self.yaw_deg));
        kv.push("speed_of_sound", format!("{:?}", self.speed_of_sound));
        kv
    }

    pub fn read(path: &Path) -> Result<Self> {
        let kv = KeyValues::read(path)?;
        Self::from_key_values(&kv).map_err(|m| Error::format(path, m))
    }
}

/// Adds zero-mean Gaussian noise with the given per-axis variances.
pub fn perturb_location<R: Rng + ?Sized>(p: WorldPoint, cov: NoiseCov3, rng: &mut R) -> WorldPoint {
    let mut out = p;
    for (axis, var) in cov.variances.iter().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        out[axis] += var.sqrt() * z;
    }
    out
}

pub fn world_to_camera(p: WorldPoint, cal: &CameraCalibration) -> CameraPoint {
    CameraPoint::from(cal.rotation * p.coords + cal.translation)
}

pub fn project_point(pc: CameraPoint, cal: &CameraCalibration) -> Result<Pixel, GeomError> {
    if pc.z <= 0.0 {
        return Err(GeomError::BehindCamera { z: pc.z });
    }
    let i = &cal.intrinsics;
    Ok(Pixel {
        u: i.fu * pc.x / pc.z + i.cu,
        v: i.fv * pc.y / pc.z + i.cv,
    })
}

/// True when the face center projects inside the image from in front of the camera.
pub fn is_in_fov(p: WorldPoint, cal: &CameraCalibration) -> bool {
    project_point(world_to_camera(p, cal), cal).is_ok_and(|px| cal.contains(px))
}

/// Builds the face box for a camera-frame face center, without any noise.
///
/// Returns `None` when the center is behind the camera or projects outside
/// the image. Corners that fall outside the image are kept unclipped.
pub fn bbox_from_camera_point(pc: CameraPoint, cal: &CameraCalibration, face: FaceSize) -> Option<BoundingBox> {
    let center = project_point(pc, cal).ok()?;
    if !cal.contains(center) {
        return None;
    }
    let half = Vector3::new(face.width / 2.0, face.height / 2.0, 0.0);
    let tl = project_point(pc - half, cal).ok()?;
    let br = project_point(pc + half, cal).ok()?;
    BoundingBox::new(tl.u, tl.v, br.u - tl.u, br.v - tl.v)
}

/// Simulated face detection for a source at `p`: perturb the 3D position,
/// move it into the camera frame, span a fronto-parallel face rectangle
/// around it and project both corners.
pub fn synthesize_bbox<R: Rng + ?Sized>(
    p: WorldPoint,
    cal: &CameraCalibration,
    face: FaceSize,
    cov: NoiseCov3,
    rng: &mut R,
) -> Option<BoundingBox> {
    let noisy = perturb_location(p, cov, rng);
    bbox_from_camera_point(world_to_camera(noisy, cal), cal, face)
}

/// Azimuth of `p` seen from the array, in degrees within `[-180, 180)`.
pub fn doa_from_position(p: WorldPoint, array: &MicArray) -> Result<f64, GeomError> {
    let rel = p - array.origin;
    if rel.x.hypot(rel.y) <= 1e-6 {
        return Err(GeomError::DegenerateGeometry);
    }
    let world_az = rel.y.atan2(rel.x).to_degrees();
    Ok(wrap_degrees(world_az - array.yaw_deg))
}

/// Inverse of [`doa_from_position`] for a given horizontal range and height
/// offset relative to the array origin.
pub fn position_from_doa(az_deg: f64, range: f64, height: f64, array: &MicArray) -> WorldPoint {
    let (s, c) = (az_deg + array.yaw_deg).to_radians().sin_cos();
    array.origin + Vector3::new(range * c, range * s, height)
}
