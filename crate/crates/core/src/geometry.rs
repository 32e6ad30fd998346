//! Geometric multipath channel between a BS uniform planar array and the
//! ports of a UE fluid antenna.
//!
//! The BS array lies in the yOz plane with `N_y x N_z` elements; its steering
//! vector is the Kronecker product of a y-axis and a z-axis factor. On the UE
//! side every port `(n, m)` adds a spatial phase from the arrival direction,
//! and each path rotates in time with its Doppler frequency:
//!
//! ```text
//! h_(n,m)(t) = A c_(n,m)(t)
//! c_(p,n,m)  = alpha_p beta_p e^{j 2 pi f_c tau_p}
//!              e^{j 2 pi / lambda [sin th_rx sin ph_rx d_ry m + cos th_rx d_rz n]}
//!              e^{j 2 pi w_p t}
//! ```
//!
//! Angles are zenith (`theta`) / azimuth (`phi`) in radians. All synthesis
//! runs in `f64`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ports::{PortIndex, StackAxis, TableStack};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[inline]
fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

/// Carrier frequency and the wavelength derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarrierConfig {
    frequency_hz: f64,
    wavelength_m: f64,
}

impl CarrierConfig {
    pub fn new(frequency_hz: f64) -> Result<Self> {
        if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
            return Err(Error::config("carrier", format!("frequency {frequency_hz} Hz must be > 0")));
        }
        Ok(CarrierConfig {
            frequency_hz,
            wavelength_m: SPEED_OF_LIGHT / frequency_hz,
        })
    }

    pub fn frequency_hz(&self) -> f64 {
        self.frequency_hz
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength_m
    }

    /// `2 pi / lambda`
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength_m
    }
}

/// BS uniform planar array in the yOz plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsArray {
    pub ny: usize,
    pub nz: usize,
    /// Element spacing along y, metres.
    pub spacing_y: f64,
    /// Element spacing along z, metres.
    pub spacing_z: f64,
}

impl BsArray {
    pub fn new(ny: usize, nz: usize, spacing_y: f64, spacing_z: f64) -> Result<Self> {
        if ny == 0 || nz == 0 {
            return Err(Error::config("bs_array", format!("{ny}x{nz} array must have >= 1 element per axis")));
        }
        if !(spacing_y > 0.0 && spacing_z > 0.0) {
            return Err(Error::config("bs_array", "element spacing must be > 0"));
        }
        Ok(BsArray {
            ny,
            nz,
            spacing_y,
            spacing_z,
        })
    }

    /// Half-wavelength spaced array.
    pub fn half_wavelength(ny: usize, nz: usize, carrier: &CarrierConfig) -> Result<Self> {
        let d = carrier.wavelength() / 2.0;
        Self::new(ny, nz, d, d)
    }

    pub fn num_antennas(&self) -> usize {
        self.ny * self.nz
    }
}

/// The UE fluid-antenna port grid: `N` ports along z, `M` along y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidGrid {
    /// Aperture along y in wavelengths.
    pub aperture_y: f64,
    /// Aperture along z in wavelengths.
    pub aperture_z: f64,
    /// Port count along z (table rows).
    pub n: usize,
    /// Port count along y (table columns).
    pub m: usize,
    /// Port spacing along y, metres.
    pub spacing_y: f64,
    /// Port spacing along z, metres.
    pub spacing_z: f64,
}

impl FluidGrid {
    /// Spacing is the aperture divided by the port count on each axis.
    pub fn from_aperture(
        aperture_y: f64,
        aperture_z: f64,
        n: usize,
        m: usize,
        carrier: &CarrierConfig,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::config("grid", format!("{n}x{m} port grid must be non-empty")));
        }
        if !(aperture_y > 0.0 && aperture_z > 0.0) {
            return Err(Error::config("grid", "aperture must be > 0 wavelengths"));
        }
        let lambda = carrier.wavelength();
        Ok(FluidGrid {
            aperture_y,
            aperture_z,
            n,
            m,
            spacing_y: aperture_y * lambda / m as f64,
            spacing_z: aperture_z * lambda / n as f64,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn num_ports(&self) -> usize {
        self.n * self.m
    }
}

/// Departure/arrival angles of one path, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathAngles {
    pub theta_tx: f64,
    pub phi_tx: f64,
    pub theta_rx: f64,
    pub phi_rx: f64,
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub angles: PathAngles,
    /// Delay, seconds.
    pub tau: f64,
    /// Amplitude (square root of the path power share).
    pub alpha: f64,
    /// Unit-modulus initial phase.
    pub beta: Complex64,
    /// Doppler frequency, Hz.
    pub doppler_hz: f64,
}

impl PathParams {
    /// `c_p = alpha_p beta_p e^{j 2 pi f_c tau_p}`
    pub fn gain(&self, carrier: &CarrierConfig) -> Complex64 {
        self.beta * self.alpha * cis(2.0 * PI * carrier.frequency_hz() * self.tau)
    }
}

/// y-axis steering factor, length `N_y`.
pub fn steering_y(theta_tx: f64, phi_tx: f64, bs: &BsArray, carrier: &CarrierConfig) -> Vec<Complex64> {
    let step = carrier.wavenumber() * theta_tx.sin() * phi_tx.sin() * bs.spacing_y;
    (0..bs.ny).map(|k| cis(step * k as f64)).collect()
}

/// z-axis steering factor, length `N_z`.
pub fn steering_z(theta_tx: f64, bs: &BsArray, carrier: &CarrierConfig) -> Vec<Complex64> {
    let step = carrier.wavenumber() * theta_tx.cos() * bs.spacing_z;
    (0..bs.nz).map(|k| cis(step * k as f64)).collect()
}

/// 3-D steering vector `a_y ⊗ a_z`; entry `k_y * N_z + k_z`.
pub fn steering_3d(angles: &PathAngles, bs: &BsArray, carrier: &CarrierConfig) -> Vec<Complex64> {
    let ay = steering_y(angles.theta_tx, angles.phi_tx, bs, carrier);
    let az = steering_z(angles.theta_tx, bs, carrier);
    ay.iter()
        .flat_map(|y| az.iter().map(move |z| y * z))
        .collect()
}

/// Arrival unit vector `[sin th cos ph, sin th sin ph, cos th]`.
pub fn arrival_direction(theta_rx: f64, phi_rx: f64) -> [f64; 3] {
    [
        theta_rx.sin() * phi_rx.cos(),
        theta_rx.sin() * phi_rx.sin(),
        theta_rx.cos(),
    ]
}

/// Doppler shift `(k_p . v) / lambda` for a UE moving with `velocity` (m/s).
pub fn doppler_frequency(theta_rx: f64, phi_rx: f64, velocity: [f64; 3], carrier: &CarrierConfig) -> f64 {
    let k = arrival_direction(theta_rx, phi_rx);
    let dot: f64 = k.iter().zip(velocity.iter()).map(|(a, b)| a * b).sum();
    dot / carrier.wavelength()
}

/// `c_(p,n,m) e^{j 2 pi w_p t}` for one path at one port.
pub fn path_coefficient(
    path: &PathParams,
    port: PortIndex,
    grid: &FluidGrid,
    t: f64,
    carrier: &CarrierConfig,
) -> Result<Complex64> {
    let port = port.check(grid.dims())?;
    Ok(path_coefficient_unchecked(path, path.gain(carrier), port, grid, t, carrier))
}

#[inline]
fn path_coefficient_unchecked(
    path: &PathParams,
    gain: Complex64,
    port: PortIndex,
    grid: &FluidGrid,
    t: f64,
    carrier: &CarrierConfig,
) -> Complex64 {
    let a = &path.angles;
    let spatial = carrier.wavenumber()
        * (a.theta_rx.sin() * a.phi_rx.sin() * grid.spacing_y * port.m as f64
            + a.theta_rx.cos() * grid.spacing_z * port.n as f64);
    gain * cis(spatial) * cis(2.0 * PI * path.doppler_hz * t)
}

/// An `N x M` complex table of per-port channels, row-major (rows = z ports).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTable {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ChannelTable {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "{} values cannot form a {rows}x{cols} table",
                data.len()
            )));
        }
        Ok(ChannelTable { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Complex64) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        ChannelTable { rows, cols, data }
    }

    /// Every entry equal to `value`.
    pub fn filled(rows: usize, cols: usize, value: Complex64) -> Self {
        ChannelTable {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, port: PortIndex) -> Complex64 {
        self.data[port.n * self.cols + port.m]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Geometry plus the ordered path list (index 0 is the LoS path).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipathChannel {
    pub carrier: CarrierConfig,
    pub bs: BsArray,
    pub grid: FluidGrid,
    pub paths: Vec<PathParams>,
}

impl MultipathChannel {
    pub fn new(carrier: CarrierConfig, bs: BsArray, grid: FluidGrid, paths: Vec<PathParams>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::InvalidInput("channel needs at least one path".into()));
        }
        Ok(MultipathChannel {
            carrier,
            bs,
            grid,
            paths,
        })
    }

    /// Same paths seen from a different BS array.
    pub fn with_bs(&self, bs: BsArray) -> Self {
        MultipathChannel { bs, ..self.clone() }
    }

    pub fn num_antennas(&self) -> usize {
        self.bs.num_antennas()
    }

    /// Steering matrix `A` as `N_t` rows of `P+1` entries.
    pub fn steering_matrix(&self) -> Vec<Vec<Complex64>> {
        let cols: Vec<Vec<Complex64>> = self
            .paths
            .iter()
            .map(|p| steering_3d(&p.angles, &self.bs, &self.carrier))
            .collect();
        (0..self.num_antennas())
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect()
    }

    fn coefficients(&self, gains: &[Complex64], port: PortIndex, t: f64) -> Vec<Complex64> {
        self.paths
            .iter()
            .zip(gains)
            .map(|(p, &g)| path_coefficient_unchecked(p, g, port, &self.grid, t, &self.carrier))
            .collect()
    }

    fn gains(&self) -> Vec<Complex64> {
        self.paths.iter().map(|p| p.gain(&self.carrier)).collect()
    }

    /// `h_(n,m)(t) = A c_(n,m)(t)`, length `N_t`.
    pub fn channel_vector(&self, port: PortIndex, t: f64) -> Result<Vec<Complex64>> {
        let port = port.check(self.grid.dims())?;
        let c = self.coefficients(&self.gains(), port, t);
        Ok(self.steering_matrix().iter().map(|row| dot(row, &c)).collect())
    }

    /// Channel table `S_i(t)` for 0-based BS antenna `antenna`.
    pub fn channel_table(&self, antenna: usize, t: f64) -> Result<ChannelTable> {
        self.check_antenna(antenna)?;
        let a = self.steering_matrix();
        let row = &a[antenna];
        let gains = self.gains();
        let (n, m) = self.grid.dims();
        Ok(ChannelTable::from_fn(n, m, |r, c| {
            dot(row, &self.coefficients(&gains, PortIndex::new(r, c), t))
        }))
    }

    /// Tables for every BS antenna at time `t`, sharing the per-port path coefficients.
    pub fn channel_tables(&self, t: f64) -> TableStack {
        let a = self.steering_matrix();
        let gains = self.gains();
        let (n, m) = self.grid.dims();
        let coeffs: Vec<Vec<Complex64>> = (0..n * m)
            .map(|k| self.coefficients(&gains, PortIndex::new(k / m, k % m), t))
            .collect();
        let tables = a
            .iter()
            .map(|row| {
                ChannelTable::from_vec(n, m, coeffs.iter().map(|c| dot(row, c)).collect())
                    .expect("grid dims are non-zero")
            })
            .collect();
        TableStack::new(tables, StackAxis::Antenna).expect("uniform table dims")
    }

    /// Tables for one antenna at many instants. The time-invariant part of
    /// every path/port term is computed once; agrees with
    /// [`channel_table`](Self::channel_table) to rounding.
    pub fn table_series(&self, antenna: usize, times: &[f64]) -> Result<Vec<ChannelTable>> {
        self.check_antenna(antenna)?;
        let row = &self.steering_matrix()[antenna];
        Ok(self.series_for(std::slice::from_ref(row), times).remove(0))
    }

    /// [`table_series`](Self::table_series) for every antenna, `[antenna][time]`.
    pub fn table_series_all(&self, times: &[f64]) -> Vec<Vec<ChannelTable>> {
        self.series_for(&self.steering_matrix(), times)
    }

    fn series_for(&self, steering: &[Vec<Complex64>], times: &[f64]) -> Vec<Vec<ChannelTable>> {
        let (n, m) = self.grid.dims();
        let np = n * m;
        let base: Vec<Vec<Complex64>> = self
            .paths
            .iter()
            .map(|p| {
                let g = p.gain(&self.carrier);
                let frozen = PathParams { doppler_hz: 0.0, ..*p };
                (0..np)
                    .map(|k| path_coefficient_unchecked(&frozen, g, PortIndex::new(k / m, k % m), &self.grid, 0.0, &self.carrier))
                    .collect()
            })
            .collect();
        let rot: Vec<Vec<Complex64>> = times
            .iter()
            .map(|&t| self.paths.iter().map(|p| cis(2.0 * PI * p.doppler_hz * t)).collect())
            .collect();
        steering
            .iter()
            .map(|row| {
                rot.iter()
                    .map(|r| {
                        let mut data = vec![Complex64::new(0.0, 0.0); np];
                        for ((b, &steer), &rt) in base.iter().zip(row).zip(r) {
                            let w = steer * rt;
                            for (d, v) in data.iter_mut().zip(b) {
                                *d += v * w;
                            }
                        }
                        ChannelTable::from_vec(n, m, data).expect("grid dims are non-zero")
                    })
                    .collect()
            })
            .collect()
    }

    /// Reference table `H_i(t)`: `h_(i,1,1)(t)` broadcast over the grid.
    pub fn reference_table(&self, antenna: usize, t: f64) -> Result<ChannelTable> {
        let table = self.channel_table(antenna, t)?;
        let (n, m) = self.grid.dims();
        Ok(ChannelTable::filled(n, m, table.get(PortIndex::ORIGIN)))
    }

    fn check_antenna(&self, antenna: usize) -> Result<()> {
        if antenna < self.num_antennas() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "antenna {antenna} out of range for {} BS antennas",
                self.num_antennas()
            )))
        }
    }
}

#[inline]
fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x * y)
}

/// Mean UE-side/BS-side directions for one UE, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeAngles {
    pub aod: f64,
    pub aoa: f64,
    pub zod: f64,
    pub zoa: f64,
}

impl UeAngles {
    pub fn from_degrees(row: [f64; 4]) -> Self {
        let [aod, aoa, zod, zoa] = row.map(f64::to_radians);
        UeAngles { aod, aoa, zod, zoa }
    }
}

/// Statistics of the path draw: an exponential power-delay profile around a
/// LoS path, with Gaussian angular spread around each UE's mean directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    /// Total paths including the LoS path.
    pub num_paths: usize,
    /// RMS delay spread, seconds.
    pub delay_spread: f64,
    /// LoS-to-NLoS power ratio in dB.
    pub los_k_factor_db: f64,
    /// Per-path angular spread, radians, ordered `[AOD, AOA, ZOD, ZOA]`.
    pub angular_spread: [f64; 4],
}

impl ChannelProfile {
    /// Draw paths for a UE moving with `velocity` (m/s). The LoS path sits on
    /// the mean directions with zero delay.
    pub fn draw_paths<R: Rng + ?Sized>(
        &self,
        mean: &UeAngles,
        velocity: [f64; 3],
        carrier: &CarrierConfig,
        rng: &mut R,
    ) -> Result<Vec<PathParams>> {
        if self.num_paths == 0 {
            return Err(Error::config("paths", "at least one path is required"));
        }
        let delay = Exp::new(1.0 / self.delay_spread)
            .map_err(|e| Error::config("delay_spread_ns", e.to_string()))?;
        let [s_aod, s_aoa, s_zod, s_zoa] = self.angular_spread;

        let mut angles = Vec::with_capacity(self.num_paths);
        let mut taus = Vec::with_capacity(self.num_paths);
        angles.push(PathAngles {
            theta_tx: mean.zod,
            phi_tx: mean.aod,
            theta_rx: mean.zoa,
            phi_rx: mean.aoa,
        });
        taus.push(0.0);
        for _ in 1..self.num_paths {
            let mut gauss = || -> f64 { rng.sample(StandardNormal) };
            let phi_tx = mean.aod + s_aod * gauss();
            let phi_rx = mean.aoa + s_aoa * gauss();
            let theta_tx = mean.zod + s_zod * gauss();
            let theta_rx = mean.zoa + s_zoa * gauss();
            angles.push(PathAngles {
                theta_tx,
                phi_tx,
                theta_rx,
                phi_rx,
            });
            taus.push(delay.sample(rng));
        }

        let k = 10f64.powf(self.los_k_factor_db / 10.0);
        let nlos_raw: Vec<f64> = taus[1..].iter().map(|t| (-t / self.delay_spread).exp()).collect();
        let nlos_total: f64 = nlos_raw.iter().sum();
        let powers: Vec<f64> = if self.num_paths == 1 {
            vec![1.0]
        } else {
            std::iter::once(k / (k + 1.0))
                .chain(nlos_raw.iter().map(|p| p / nlos_total / (k + 1.0)))
                .collect()
        };

        Ok(angles
            .into_iter()
            .zip(taus)
            .zip(powers)
            .map(|((angles, tau), power)| {
                let beta = cis(rng.random_range(0.0..2.0 * PI));
                PathParams {
                    angles,
                    tau,
                    alpha: power.sqrt(),
                    beta,
                    doppler_hz: doppler_frequency(angles.theta_rx, angles.phi_rx, velocity, carrier),
                }
            })
            .collect())
    }
}
