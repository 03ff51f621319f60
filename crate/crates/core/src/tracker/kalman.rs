//! Constant-velocity Kalman filter over `(cx, cy, aspect, height)`.
//!
//! Noise standard deviations scale with the current box height, as in common
//! tracking-by-detection practice.

use crate::scalar::Scalar;

use super::{BBox, TrackerError};

pub const STATE_DIM: usize = 8;
const MEAS_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState<T: Scalar = f64> {
    /// `(cx, cy, aspect, h, vcx, vcy, vaspect, vh)`.
    pub mean: [T; STATE_DIM],
    pub covariance: [[T; STATE_DIM]; STATE_DIM],
}

impl<T: Scalar> KalmanState<T> {
    pub fn bbox(&self) -> BBox<T> {
        BBox::from_xyah([self.mean[0], self.mean[1], self.mean[2], self.mean[3]])
    }

    pub fn trace(&self) -> T {
        (0..STATE_DIM).map(|i| self.covariance[i][i]).sum()
    }

    /// Largest `|P[i][j] - P[j][i]|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..STATE_DIM {
            for j in 0..i {
                worst = worst.max((self.covariance[i][j] - self.covariance[j][i]).abs());
            }
        }
        worst
    }
}

/// Noise parameters of the motion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel<T: Scalar = f64> {
    pub std_weight_position: T,
    pub std_weight_velocity: T,
    /// Multiplier on the measurement noise covariance; zero trusts
    /// measurements completely.
    pub measurement_noise_scale: T,
}

impl<T: Scalar> Default for MotionModel<T> {
    fn default() -> Self {
        Self {
            std_weight_position: T::lit(1.0 / 20.0),
            std_weight_velocity: T::lit(1.0 / 160.0),
            measurement_noise_scale: T::one(),
        }
    }
}

impl<T: Scalar> MotionModel<T> {
    pub fn initiate(&self, z: &BBox<T>) -> KalmanState<T> {
        let m = z.to_xyah();
        let h = m[3];
        let two = T::lit(2.0);
        let ten = T::lit(10.0);
        let (p, v) = (self.std_weight_position, self.std_weight_velocity);
        let std = [
            two * p * h,
            two * p * h,
            T::lit(1e-2),
            two * p * h,
            ten * v * h,
            ten * v * h,
            T::lit(1e-5),
            ten * v * h,
        ];
        let mut covariance = [[T::zero(); STATE_DIM]; STATE_DIM];
        for i in 0..STATE_DIM {
            covariance[i][i] = std[i] * std[i];
        }
        let mut mean = [T::zero(); STATE_DIM];
        mean[..MEAS_DIM].copy_from_slice(&m);
        KalmanState { mean, covariance }
    }

    pub fn process_noise(&self, height: T) -> [T; STATE_DIM] {
        let (p, v) = (self.std_weight_position * height, self.std_weight_velocity * height);
        let std = [p, p, T::lit(1e-2), p, v, v, T::lit(1e-5), v];
        std.map(|s| s * s)
    }

    pub fn measurement_noise(&self, height: T) -> [T; MEAS_DIM] {
        let p = self.std_weight_position * height;
        let std = [p, p, T::lit(1e-1), p];
        std.map(|s| s * s * self.measurement_noise_scale)
    }

    /// One constant-velocity step: `x' = F x`, `P' = F P Fᵀ + Q`.
    pub fn predict(&self, s: &KalmanState<T>) -> KalmanState<T> {
        let q = self.process_noise(s.mean[3]);
        let mut mean = s.mean;
        for i in 0..MEAS_DIM {
            mean[i] += s.mean[i + MEAS_DIM];
        }
        // F = [[I, I], [0, I]], so (F P)[i] = P[i] + P[i+4] for the top half.
        let p = &s.covariance;
        let mut fp = *p;
        for i in 0..MEAS_DIM {
            for j in 0..STATE_DIM {
                fp[i][j] = p[i][j] + p[i + MEAS_DIM][j];
            }
        }
        let mut cov = fp;
        for i in 0..STATE_DIM {
            for j in 0..MEAS_DIM {
                cov[i][j] = fp[i][j] + fp[i][j + MEAS_DIM];
            }
        }
        for i in 0..STATE_DIM {
            cov[i][i] += q[i];
        }
        KalmanState {
            mean,
            covariance: symmetrize(cov),
        }
    }

    /// Kalman correction with measurement `z`.
    pub fn update(&self, s: &KalmanState<T>, z: &BBox<T>) -> Result<KalmanState<T>, TrackerError> {
        if !(z.h > T::zero()) || !z.h.is_finite() || !(z.w > T::zero()) {
            return Err(TrackerError::InvalidMeasurement {
                height: z.h.as_f64(),
            });
        }
        let zm = z.to_xyah();
        let r = self.measurement_noise(s.mean[3]);
        let p = &s.covariance;

        // S = H P Hᵀ + R is the top-left 4x4 block of P plus R.
        let mut innov_cov = [[T::zero(); MEAS_DIM]; MEAS_DIM];
        for i in 0..MEAS_DIM {
            for j in 0..MEAS_DIM {
                innov_cov[i][j] = p[i][j];
            }
            innov_cov[i][i] += r[i];
        }
        let chol = cholesky4(&innov_cov).ok_or(TrackerError::SingularInnovation)?;

        // K = P Hᵀ S⁻¹, solved row by row: S Kᵀ[:, i] = (P Hᵀ)ᵀ[:, i].
        let mut gain = [[T::zero(); MEAS_DIM]; STATE_DIM];
        for i in 0..STATE_DIM {
            let rhs = [p[i][0], p[i][1], p[i][2], p[i][3]];
            gain[i] = chol_solve4(&chol, rhs);
        }

        let mut innovation = [T::zero(); MEAS_DIM];
        for k in 0..MEAS_DIM {
            innovation[k] = zm[k] - s.mean[k];
        }
        let mut mean = s.mean;
        for i in 0..STATE_DIM {
            for k in 0..MEAS_DIM {
                mean[i] += gain[i][k] * innovation[k];
            }
        }

        // P' = P - K S Kᵀ
        let mut ks = [[T::zero(); MEAS_DIM]; STATE_DIM];
        for i in 0..STATE_DIM {
            for j in 0..MEAS_DIM {
                ks[i][j] = (0..MEAS_DIM).map(|k| gain[i][k] * innov_cov[k][j]).sum();
            }
        }
        let mut cov = *p;
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                let kskt: T = (0..MEAS_DIM).map(|k| ks[i][k] * gain[j][k]).sum();
                cov[i][j] -= kskt;
            }
        }
        let floor = T::lit(1e-6);
        if !(mean[3] > floor) {
            mean[3] = floor;
        }
        Ok(KalmanState {
            mean,
            covariance: symmetrize(cov),
        })
    }
}

pub fn kalman_predict<T: Scalar>(s: &KalmanState<T>) -> KalmanState<T> {
    MotionModel::default().predict(s)
}

pub fn kalman_update<T: Scalar>(s: &KalmanState<T>, z: &BBox<T>) -> Result<KalmanState<T>, TrackerError> {
    MotionModel::default().update(s, z)
}

fn symmetrize<T: Scalar>(mut m: [[T; STATE_DIM]; STATE_DIM]) -> [[T; STATE_DIM]; STATE_DIM] {
    let half = T::lit(0.5);
    for i in 0..STATE_DIM {
        for j in 0..i {
            let avg = half * (m[i][j] + m[j][i]);
            m[i][j] = avg;
            m[j][i] = avg;
        }
    }
    m
}

/// Lower-triangular Cholesky factor, `None` if not positive definite.
fn cholesky4<T: Scalar>(a: &[[T; MEAS_DIM]; MEAS_DIM]) -> Option<[[T; MEAS_DIM]; MEAS_DIM]> {
    let mut l = [[T::zero(); MEAS_DIM]; MEAS_DIM];
    for i in 0..MEAS_DIM {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > T::zero()) {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn chol_solve4<T: Scalar>(l: &[[T; MEAS_DIM]; MEAS_DIM], b: [T; MEAS_DIM]) -> [T; MEAS_DIM] {
    let mut y = [T::zero(); MEAS_DIM];
    for i in 0..MEAS_DIM {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [T::zero(); MEAS_DIM];
    for i in (0..MEAS_DIM).rev() {
        let mut s = y[i];
        for k in i + 1..MEAS_DIM {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(cx: f64, vx: f64) -> KalmanState {
        let mut s = MotionModel::default().initiate(&BBox::new(cx - 5.0, 0.0, 10.0, 20.0).unwrap());
        s.mean[4] = vx;
        s
    }

    #[test]
    fn zero_velocity_is_fixpoint() {
        let s = kalman_predict(&state(10.0, 0.0));
        assert_eq!(s.mean[0], 10.0);
    }

    #[test]
    fn velocity_advances_center() {
        let s = kalman_predict(&state(10.0, 2.0));
        assert_eq!(s.mean[0], 12.0);
    }

    #[test]
    fn predict_grows_trace() {
        let s = state(10.0, 1.0);
        assert!(kalman_predict(&s).trace() > s.trace());
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let s = kalman_predict(&state(10.0, 0.0));
        let z = s.bbox();
        let u = kalman_update(&s, &z).unwrap();
        for i in 0..STATE_DIM {
            assert!((u.mean[i] - s.mean[i]).abs() < 1e-9, "component {i}");
        }
        assert!(u.trace() < s.trace());
        assert!(u.asymmetry() <= 1e-9);
    }

    #[test]
    fn noiseless_measurement_is_adopted() {
        let model = MotionModel {
            measurement_noise_scale: 0.0,
            ..MotionModel::default()
        };
        let s = model.predict(&state(10.0, 1.0));
        let z = BBox::new(30.0, 7.0, 12.0, 22.0).unwrap();
        let u = model.update(&s, &z).unwrap();
        let zm = z.to_xyah();
        for k in 0..4 {
            assert!((u.mean[k] - zm[k]).abs() < 1e-9, "component {k}");
        }
    }

    #[test]
    fn rejects_non_positive_height() {
        let s = state(0.0, 0.0);
        let z = BBox { x: 0.0, y: 0.0, w: 1.0, h: 0.0 };
        assert!(matches!(kalman_update(&s, &z), Err(TrackerError::InvalidMeasurement { .. })));
    }

    #[test]
    fn works_in_f32() {
        let model = MotionModel::<f32>::default();
        let s = model.initiate(&BBox::new(0.0f32, 0.0, 10.0, 20.0).unwrap());
        let p = model.predict(&s);
        let u = model.update(&p, &BBox::new(1.0, 0.0, 10.0, 20.0).unwrap()).unwrap();
        assert!(u.mean[0] > 5.0 && u.mean[0] < 6.0);
    }
}
