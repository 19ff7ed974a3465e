//! Seeded channel realizations for the BS, RIS and users.
//!
//! Every link follows a Rician model scaled by distance-based path loss.
//! Line-of-sight components are built from half-wavelength linear-array
//! steering vectors at azimuths computed from the 2-D geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::SystemConfig;
use crate::numerics::{complex_gaussian, spectral_norm, CMatrix, NumericsError};
use crate::scalar::{cplx, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("distance must be positive, got {0}")]
    Distance(f64),
    #[error("scattering matrix is {rows}x{cols}, expected {l}x{l}")]
    ThetaShape { rows: usize, cols: usize, l: usize },
    #[error("scattering matrix is not unitary (residual {0:e})")]
    NotUnitary(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Large-scale gain `ref · d^(-exponent)` with the reference gain at 1 m.
pub fn pathloss_with_ref(distance: f64, exponent: f64, reference: f64) -> Result<f64, ChannelError> {
    if !(distance > 0.0) {
        return Err(ChannelError::Distance(distance));
    }
    Ok(reference * distance.powf(-exponent))
}

/// Large-scale gain `1e-3 · d^(-exponent)`.
pub fn pathloss(distance: f64, exponent: f64) -> Result<f64, ChannelError> {
    pathloss_with_ref(distance, exponent, 1e-3)
}

/// Column vector with entries `exp(j k phase)`, `k = 0..n`.
pub fn steering_vector<T: Real>(n: usize, phase_progression: T) -> CMatrix<T> {
    CMatrix::column(
        (0..n)
            .map(|k| {
                let a = phase_progression * T::lit(k as f64);
                cplx(a.cos(), a.sin())
            })
            .collect(),
    )
}

/// Half-wavelength progression for a wave leaving/arriving at `angle`.
fn ula<T: Real>(n: usize, angle: f64) -> CMatrix<T> {
    steering_vector(n, T::lit(core::f64::consts::PI * angle.sin()))
}

fn azimuth(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Node positions of one drop, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub bs_pos: [f64; 2],
    pub ris_pos: [f64; 2],
    pub user_positions: Vec<[f64; 2]>,
    pub circle_center: [f64; 2],
    pub circle_radius: f64,
}

impl Geometry {
    /// Users uniformly distributed in the configured disk. User `m` draws
    /// from its own stream so adding users leaves earlier ones in place.
    pub fn draw(config: &SystemConfig, seed: u64) -> Self {
        let users = (0..config.users)
            .map(|m| {
                let mut rng = stream(seed, Stream::User(m));
                let r = config.disk_radius * rng.random::<f64>().sqrt();
                let phi = 2.0 * core::f64::consts::PI * rng.random::<f64>();
                [
                    config.disk_center[0] + r * phi.cos(),
                    config.disk_center[1] + r * phi.sin(),
                ]
            })
            .collect();
        Self {
            bs_pos: config.bs_pos,
            ris_pos: config.ris_pos,
            user_positions: users,
            circle_center: config.disk_center,
            circle_radius: config.disk_radius,
        }
    }
}

/// Rician factor and path-loss exponent of one link class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingParams {
    pub rician: f64,
    pub exponent: f64,
    pub reference: f64,
}

/// Independent random streams derived from one seed, one per purpose.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    User(usize),
    BsRis,
    RisUser(usize),
    BsUser(usize),
    Scattering,
    Randomization,
    Benchmark,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::User(m) => 0x100 + m as u64,
            Stream::BsRis => 0x200,
            Stream::RisUser(m) => 0x300 + m as u64,
            Stream::BsUser(m) => 0x400 + m as u64,
            Stream::Scattering => 0x500,
            Stream::Randomization => 0x600,
            Stream::Benchmark => 0x700,
        }
    }
}

/// Deterministic generator for one purpose under one seed.
pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.id());
    rng
}

/// `sqrt(gain) (sqrt(ζ/(1+ζ)) los + sqrt(1/(1+ζ)) nlos)` with i.i.d.
/// `CN(0,1)` scattering drawn row-major.
pub fn rician_link<T: Real, R: Rng + ?Sized>(
    los: &CMatrix<T>,
    gain: f64,
    rician: f64,
    rng: &mut R,
) -> CMatrix<T> {
    let w_los = (rician / (1.0 + rician)).sqrt();
    let w_nlos = (1.0 / (1.0 + rician)).sqrt();
    let g = gain.sqrt();
    let (a, b) = (T::lit(g * w_los), T::lit(g * w_nlos));
    CMatrix::from_fn(los.rows(), los.cols(), |i, j| {
        let n = complex_gaussian::<T, R>(rng);
        los[(i, j)] * a + n * b
    })
}

/// One realization of every link.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet<T> {
    /// BS to RIS, `L x K`.
    pub g_br: CMatrix<T>,
    /// RIS to user `m`, `L x 1` each.
    pub h_rm: Vec<CMatrix<T>>,
    /// BS to user `m`, `K x 1` each.
    pub f_bm: Vec<CMatrix<T>>,
}

/// Θ-dependent quantities of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentChannel<T> {
    /// `h = f + G_brᴴ Θ h_rm`, `K x 1`.
    pub h: CMatrix<T>,
    /// `H = h hᴴ`.
    pub cov: CMatrix<T>,
    /// Worst-case error radius `ϱ̃ ‖H‖`.
    pub delta_sq: T,
}

impl<T: Real> ChannelSet<T> {
    pub fn ris_elements(&self) -> usize {
        self.g_br.rows()
    }

    pub fn antennas(&self) -> usize {
        self.g_br.cols()
    }

    pub fn users(&self) -> usize {
        self.h_rm.len()
    }

    /// Reflected part `G_brᴴ Θ h_rm` for user `m`; linear in `Θ`.
    pub fn reflected(&self, theta: &CMatrix<T>, m: usize) -> CMatrix<T> {
        self.g_br.adjoint_mul(&theta.matmul(&self.h_rm[m]))
    }

    /// Equivalent channel of user `m` without checking unitarity.
    pub fn user_channel(&self, theta: &CMatrix<T>, m: usize, rho_tilde: T) -> EquivalentChannel<T> {
        let h = &self.f_bm[m] + &self.reflected(theta, m);
        let cov = CMatrix::outer(&h, &h);
        // ‖h hᴴ‖ = ‖h‖² exactly; avoids an eigen-solve per evaluation
        let delta_sq = rho_tilde * h.norm_sq();
        EquivalentChannel { h, cov, delta_sq }
    }

    /// Equivalent channels, covariances and error radii for every user.
    pub fn equivalent_channel(
        &self,
        theta: &CMatrix<T>,
        rho_tilde: T,
    ) -> Result<Vec<EquivalentChannel<T>>, ChannelError> {
        let l = self.ris_elements();
        if theta.rows() != l || theta.cols() != l {
            return Err(ChannelError::ThetaShape {
                rows: theta.rows(),
                cols: theta.cols(),
                l,
            });
        }
        let resid = unitarity_residual(theta);
        if resid > T::lit(1e-6) {
            return Err(ChannelError::NotUnitary(resid.as_f64()));
        }
        Ok((0..self.users())
            .map(|m| self.user_channel(theta, m, rho_tilde))
            .collect())
    }

    pub fn cast<U: Real>(&self) -> ChannelSet<U> {
        ChannelSet {
            g_br: self.g_br.cast(),
            h_rm: self.h_rm.iter().map(CMatrix::cast).collect(),
            f_bm: self.f_bm.iter().map(CMatrix::cast).collect(),
        }
    }
}

/// Error radius from the covariance by its spectral norm.
pub fn error_radius<T: Real>(cov: &CMatrix<T>, rho_tilde: T) -> Result<T, NumericsError> {
    Ok(rho_tilde * spectral_norm(cov)?)
}

/// `‖ΘΘᴴ − I‖_F`.
pub fn unitarity_residual<T: Real>(theta: &CMatrix<T>) -> T {
    let n = theta.rows();
    (&theta.matmul(&theta.adjoint()) - &CMatrix::identity(n)).frobenius_norm()
}

/// Draws user positions and all links for `seed`.
///
/// Each link uses its own random stream and draws its scattering entries
/// row-major, so growing `L` or adding users extends a realization rather
/// than replacing it.
pub fn gen_channels<T: Real>(config: &SystemConfig, seed: u64) -> Result<(Geometry, ChannelSet<T>), ChannelError> {
    let geo = Geometry::draw(config, seed);
    let br = FadingParams {
        rician: config.rician_br,
        exponent: config.exponent_br,
        reference: config.pathloss_ref,
    };
    let rm = FadingParams {
        rician: config.rician_rm,
        exponent: config.exponent_rm,
        reference: config.pathloss_ref,
    };
    let bm = FadingParams {
        rician: config.rician_bm,
        exponent: config.exponent_bm,
        reference: config.pathloss_ref,
    };
    let cs = gen_links(
        &geo,
        config.antennas,
        config.ris_elements,
        [br, rm, bm],
        |purpose| stream(seed, purpose),
    )?;
    Ok((geo, cs))
}

/// Builds all links for a fixed geometry.
pub fn gen_links<T: Real>(
    geo: &Geometry,
    k: usize,
    l: usize,
    [br, rm, bm]: [FadingParams; 3],
    mut rng_for: impl FnMut(Stream) -> ChaCha8Rng,
) -> Result<ChannelSet<T>, ChannelError> {
    let d_br = distance(geo.bs_pos, geo.ris_pos);
    let los_br = {
        let a_ris = ula::<T>(l, azimuth(geo.ris_pos, geo.bs_pos));
        let a_bs = ula::<T>(k, azimuth(geo.bs_pos, geo.ris_pos));
        CMatrix::outer(&a_ris, &a_bs)
    };
    let g_br = rician_link(
        &los_br,
        pathloss_with_ref(d_br, br.exponent, br.reference)?,
        br.rician,
        &mut rng_for(Stream::BsRis),
    );
    let mut h_rm = Vec::with_capacity(geo.user_positions.len());
    let mut f_bm = Vec::with_capacity(geo.user_positions.len());
    for (m, &pos) in geo.user_positions.iter().enumerate() {
        let los = ula::<T>(l, azimuth(geo.ris_pos, pos));
        let gain = pathloss_with_ref(distance(geo.ris_pos, pos), rm.exponent, rm.reference)?;
        h_rm.push(rician_link(&los, gain, rm.rician, &mut rng_for(Stream::RisUser(m))));
        let los = ula::<T>(k, azimuth(geo.bs_pos, pos));
        let gain = pathloss_with_ref(distance(geo.bs_pos, pos), bm.exponent, bm.reference)?;
        f_bm.push(rician_link(&los, gain, bm.rician, &mut rng_for(Stream::BsUser(m))));
    }
    Ok(ChannelSet { g_br, h_rm, f_bm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::random_unitary;
    use crate::scalar::creal;

    #[test]
    fn pathloss_values() {
        assert!((pathloss(1.0, 2.0).unwrap() - 1e-3).abs() < 1e-18);
        assert!((pathloss(10.0, 2.0).unwrap() - 1e-5).abs() < 1e-20);
        // 1e-3 / 50^4 = 1e-3 / 6.25e6
        assert!((pathloss(50.0, 4.0).unwrap() - 1.6e-10).abs() < 1e-24);
        assert!(pathloss(0.0, 2.0).is_err());
        assert!(pathloss(-1.0, 2.0).is_err());
    }

    #[test]
    fn steering_cases() {
        let a = steering_vector::<f64>(4, 0.0);
        assert!(a.as_slice().iter().all(|x| (x - creal(1.0)).norm() < 1e-15));
        let b = steering_vector::<f64>(2, core::f64::consts::PI);
        assert!((b[(1, 0)] - creal(-1.0)).norm() < 1e-15);
        let c = steering_vector::<f64>(8, 1.234);
        assert!(c.as_slice().iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
        assert_eq!(c[(0, 0)], creal(1.0));
    }

    #[test]
    fn users_inside_disk_and_deterministic() {
        let cfg = SystemConfig::desk();
        let (g1, c1) = gen_channels::<f64>(&cfg, 5).unwrap();
        let (g2, c2) = gen_channels::<f64>(&cfg, 5).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(c1, c2);
        for p in &g1.user_positions {
            assert!(distance(*p, cfg.disk_center) <= cfg.disk_radius + 1e-12);
        }
        assert_eq!(c1.g_br.rows(), 8);
        assert_eq!(c1.g_br.cols(), 3);
    }

    #[test]
    fn growing_ris_extends_realization() {
        let mut cfg = SystemConfig::desk();
        let (_, small) = gen_channels::<f64>(&cfg, 3).unwrap();
        cfg.ris_elements = 16;
        let (_, big) = gen_channels::<f64>(&cfg, 3).unwrap();
        assert_eq!(small.f_bm, big.f_bm);
        // scattering part is nested; LOS columns differ only by extra rows
        for i in 0..8 {
            for j in 0..3 {
                assert_eq!(small.g_br[(i, j)], big.g_br[(i, j)]);
            }
        }
    }

    #[test]
    fn los_limit() {
        let geo = Geometry::draw(&SystemConfig::desk(), 1);
        let f = FadingParams {
            rician: 1e12,
            exponent: 2.0,
            reference: 1e-3,
        };
        let cs = gen_links::<f64>(&geo, 3, 4, [f, f, f], |p| stream(9, p)).unwrap();
        let d = distance(geo.bs_pos, geo.ris_pos);
        let los = CMatrix::outer(
            &ula::<f64>(4, azimuth(geo.ris_pos, geo.bs_pos)),
            &ula::<f64>(3, azimuth(geo.bs_pos, geo.ris_pos)),
        )
        .scale_real(pathloss(d, 2.0).unwrap().sqrt());
        let rel = (&cs.g_br - &los).frobenius_norm() / los.frobenius_norm();
        assert!(rel < 1e-5, "rel={rel}");
    }

    #[test]
    fn rayleigh_variance_matches_gain() {
        let los = CMatrix::<f64>::zeros(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for zeta in [0.0, 3.0, 5.0] {
            let los = if zeta == 0.0 { los.clone() } else { steering_vector(1, 0.3) };
            let n = 10_000;
            let gain = 2.5e-7;
            let mean: f64 = (0..n)
                .map(|_| rician_link(&los, gain, zeta, &mut rng).norm_sq())
                .sum::<f64>()
                / n as f64;
            assert!((mean / gain - 1.0).abs() < 0.03, "zeta={zeta} mean={mean}");
        }
    }

    #[test]
    fn equivalent_channel_cases() {
        let cfg = SystemConfig::desk();
        let (_, mut cs) = gen_channels::<f64>(&cfg, 2).unwrap();
        let theta = random_unitary::<f64, _>(8, &mut stream(2, Stream::Scattering)).unwrap();
        for eq in cs.equivalent_channel(&theta, 0.05).unwrap() {
            let tr = eq.cov.trace();
            assert!((tr.re - eq.h.norm_sq()).abs() <= 1e-10 * eq.h.norm_sq());
            let eig = crate::numerics::hermitian_eig(&eq.cov).unwrap();
            assert!(eig.values[1].abs() <= 1e-12 * eig.values[0]);
            let radius = error_radius(&eq.cov, 0.05).unwrap();
            assert!((radius - eq.delta_sq).abs() <= 1e-12 * radius);
        }
        assert!(cs
            .equivalent_channel(&theta, 0.0)
            .unwrap()
            .iter()
            .all(|e| e.delta_sq == 0.0));
        assert!(matches!(
            cs.equivalent_channel(&theta.scale_real(2.0), 0.0),
            Err(ChannelError::NotUnitary(_))
        ));
        cs.g_br = CMatrix::zeros(8, 3);
        let eq = cs.equivalent_channel(&CMatrix::identity(8), 0.0).unwrap();
        assert_eq!(eq[0].h, cs.f_bm[0]);
    }

    #[test]
    fn reflected_term_is_linear() {
        let (_, cs) = gen_channels::<f64>(&SystemConfig::desk(), 8).unwrap();
        let mut rng = stream(8, Stream::Scattering);
        let t1 = random_unitary::<f64, _>(8, &mut rng).unwrap();
        let t2 = random_unitary::<f64, _>(8, &mut rng).unwrap();
        let sum = cs.reflected(&(&t1 + &t2), 1);
        let parts = &cs.reflected(&t1, 1) + &cs.reflected(&t2, 1);
        assert!((&sum - &parts).max_abs() <= 1e-15);
    }

    #[test]
    fn error_radius_monotone_in_rho() {
        let (_, cs) = gen_channels::<f64>(&SystemConfig::desk(), 1).unwrap();
        let theta = CMatrix::identity(8);
        let mut prev = -1.0;
        for rho in [0.0, 0.01, 0.05, 0.2, 0.9] {
            let d = cs.equivalent_channel(&theta, rho).unwrap()[0].delta_sq;
            assert!(d >= prev);
            prev = d;
        }
    }
}
