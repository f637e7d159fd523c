//! Seeded snapshot generation for both signal models, the sample covariance,
//! and snapshot import/export (CSV and JSON).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io;

use crate::array::{steering_matrix, ArrayGeometry, Direction};
use crate::error::{Error, Result};
use crate::C64;

/// Reproducible random stream: identical (master seed, stream index) pairs
/// yield identical draws, and distinct stream indices are independent.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Circular complex Gaussian CN(0, v): independent real and imaginary
    /// parts, each N(0, v/2), so E{|z|²} = v.
    pub fn complex_normal(&mut self, variance: f64) -> C64 {
        let scale = (variance / 2.0).sqrt();
        let re: f64 = self.rng.sample(StandardNormal);
        let im: f64 = self.rng.sample(StandardNormal);
        C64::new(scale * re, scale * im)
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }
}

/// N×T matrix of array outputs, one column per snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: DMatrix<C64>,
}

impl SnapshotMatrix {
    pub fn new(data: DMatrix<C64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "snapshot matrix must be nonempty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Parse("snapshot entries must be finite".into()));
        }
        Ok(Self { data })
    }

    pub fn sensors(&self) -> usize {
        self.data.nrows()
    }

    pub fn snapshots(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<C64> {
        &self.data
    }

    /// FNV-1a over the bit patterns of all entries; identifies "the same
    /// samples" when several solvers process one realization.
    pub fn checksum(&self) -> u64 {
        let mut hash = 0xcbf29ce484222325u64;
        let mut eat = |v: f64| {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for z in self.data.iter() {
            eat(z.re);
            eat(z.im);
        }
        hash
    }

    /// Writes one CSV row per sensor; column pairs are re/im per snapshot.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for n in 0..self.sensors() {
            let mut row = Vec::with_capacity(2 * self.snapshots());
            for t in 0..self.snapshots() {
                row.push(self.data[(n, t)].re);
                row.push(self.data[(n, t)].im);
            }
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(false)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in rdr.deserialize() {
            rows.push(record?);
        }
        Self::from_interleaved(rows)
    }

    pub fn to_json<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut data = Vec::with_capacity(self.sensors());
        for n in 0..self.sensors() {
            let mut row = Vec::with_capacity(2 * self.snapshots());
            for t in 0..self.snapshots() {
                row.push(self.data[(n, t)].re);
                row.push(self.data[(n, t)].im);
            }
            data.push(row);
        }
        let file = SnapshotFile {
            sensors: self.sensors(),
            snapshots: self.snapshots(),
            data,
        };
        serde_json::to_writer_pretty(writer, &file)?;
        Ok(())
    }

    pub fn from_json<R: io::Read>(reader: R) -> Result<Self> {
        let file: SnapshotFile = serde_json::from_reader(reader)?;
        if file.data.len() != file.sensors {
            return Err(Error::Parse(format!(
                "declared {} sensors but data has {} rows",
                file.sensors,
                file.data.len()
            )));
        }
        let matrix = Self::from_interleaved(file.data)?;
        if matrix.snapshots() != file.snapshots {
            return Err(Error::Parse(format!(
                "declared {} snapshots but rows hold {}",
                file.snapshots,
                matrix.snapshots()
            )));
        }
        Ok(matrix)
    }

    fn from_interleaved(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Parse("snapshot file has no rows".into()));
        }
        let width = rows[0].len();
        if width == 0 || width % 2 != 0 {
            return Err(Error::Parse(format!(
                "rows must hold interleaved re/im pairs, got {width} fields"
            )));
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Parse("rows have inconsistent field counts".into()));
        }
        let n = rows.len();
        let t = width / 2;
        let data = DMatrix::from_fn(n, t, |i, j| C64::new(rows[i][2 * j], rows[i][2 * j + 1]));
        Self::new(data)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotFile {
    sensors: usize,
    snapshots: usize,
    data: Vec<Vec<f64>>,
}

/// y(t) = Σ_m a(θ_m)s_m(t) + w(t) with w(t) ∼ CN(0, σ I_N).
///
/// Noise is drawn snapshot by snapshot, sensors in index order, so a given
/// stream reproduces bit-identical matrices.
pub fn gen_deterministic(
    geom: &ArrayGeometry,
    dirs: &[Direction],
    signals: &DMatrix<C64>,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<SnapshotMatrix> {
    if dirs.is_empty() {
        return Err(Error::Dimension("need at least one source".into()));
    }
    if signals.nrows() != dirs.len() {
        return Err(Error::Dimension(format!(
            "{} directions but signal matrix has {} rows",
            dirs.len(),
            signals.nrows()
        )));
    }
    if signals.ncols() == 0 {
        return Err(Error::Dimension("need at least one snapshot".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("noise variance must be >= 0, got {sigma}")));
    }
    let a = steering_matrix(geom, dirs);
    let mut y = &a * signals;
    for t in 0..y.ncols() {
        for n in 0..y.nrows() {
            y[(n, t)] += rng.complex_normal(sigma);
        }
    }
    SnapshotMatrix::new(y)
}

/// Columns i.i.d. CN(0, C_y) with C_y = Σ_m P_m a_m a_m^H + σ I_N, realized by
/// drawing s_m(t) ∼ CN(0, P_m) and delegating to the deterministic generator.
pub fn gen_stochastic(
    geom: &ArrayGeometry,
    dirs: &[Direction],
    powers: &[f64],
    sigma: f64,
    snapshots: usize,
    rng: &mut RngStream,
) -> Result<SnapshotMatrix> {
    if powers.len() != dirs.len() {
        return Err(Error::Dimension(format!(
            "{} directions but {} powers",
            dirs.len(),
            powers.len()
        )));
    }
    if let Some(p) = powers.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
        return Err(Error::Domain(format!("source powers must be >= 0, got {p}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("noise variance must be > 0, got {sigma}")));
    }
    if snapshots == 0 {
        return Err(Error::Dimension("need at least one snapshot".into()));
    }
    let m = dirs.len();
    let mut signals = DMatrix::<C64>::zeros(m, snapshots);
    for t in 0..snapshots {
        for (row, p) in powers.iter().enumerate() {
            signals[(row, t)] = rng.complex_normal(*p);
        }
    }
    gen_deterministic(geom, dirs, &signals, sigma, rng)
}

/// R̂_y = (1/T) Σ_t y(t)y(t)^H, symmetrized so it is Hermitian to roundoff.
pub fn sample_covariance(y: &SnapshotMatrix) -> DMatrix<C64> {
    let t = y.snapshots() as f64;
    let raw = y.data() * y.data().adjoint() / C64::new(t, 0.0);
    hermitize(&raw)
}

/// (R + R^H)/2; removes roundoff asymmetry from products of the form B B^H.
pub(crate) fn hermitize(r: &DMatrix<C64>) -> DMatrix<C64> {
    (r + r.adjoint()) * C64::new(0.5, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::steering_vector;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn dirs_deg(azimuths: &[f64]) -> Vec<Direction> {
        azimuths.iter().map(|az| Direction::from_degrees(90.0, *az).unwrap()).collect()
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let geom = ArrayGeometry::ula(4, 2.0).unwrap();
        let dirs = dirs_deg(&[30.0, 70.0]);
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let ya = gen_stochastic(&geom, &dirs, &[1.0, 2.0], 0.5, 6, &mut a).unwrap();
        let yb = gen_stochastic(&geom, &dirs, &[1.0, 2.0], 0.5, 6, &mut b).unwrap();
        let yc = gen_stochastic(&geom, &dirs, &[1.0, 2.0], 0.5, 6, &mut c).unwrap();
        assert_eq!(ya, yb);
        assert_eq!(ya.checksum(), yb.checksum());
        assert_ne!(ya, yc);
        assert_ne!(ya.checksum(), yc.checksum());
    }

    #[test]
    fn complex_normal_moments() {
        let mut rng = RngStream::new(11, 0);
        let v = 2.5;
        let k = 100_000;
        let draws: Vec<C64> = (0..k).map(|_| rng.complex_normal(v)).collect();
        let mean = draws.iter().sum::<C64>() / C64::new(k as f64, 0.0);
        assert!(mean.norm() < 0.02, "mean {mean} too far from 0");
        let pow = draws.iter().map(|z| z.norm_sqr()).sum::<f64>() / k as f64;
        assert_relative_eq!(pow, v, max_relative = 0.025);
        // Circularity: E{z²} = 0 for a proper complex Gaussian.
        let pseudo = draws.iter().map(|z| z * z).sum::<C64>() / C64::new(k as f64, 0.0);
        assert!(pseudo.norm() < 0.03, "pseudo-variance {pseudo} too large");
        let var_re = draws.iter().map(|z| z.re * z.re).sum::<f64>() / k as f64;
        assert_relative_eq!(var_re, v / 2.0, max_relative = 0.05);
    }

    #[test]
    fn deterministic_noiseless_is_exact() {
        let geom = ArrayGeometry::ula(5, 2.0).unwrap();
        let dirs = dirs_deg(&[40.0, 110.0]);
        let signals = DMatrix::from_fn(2, 3, |m, t| C64::new(m as f64 + 1.0, t as f64));
        let mut rng = RngStream::new(1, 0);
        let y = gen_deterministic(&geom, &dirs, &signals, 0.0, &mut rng).unwrap();
        let expected = steering_matrix(&geom, &dirs) * &signals;
        for (got, want) in y.data().iter().zip(expected.iter()) {
            assert!((got - want).norm() <= 1e-12);
        }
    }

    #[test]
    fn deterministic_noise_variance_matches() {
        let geom = ArrayGeometry::ula(4, 2.0).unwrap();
        let dirs = dirs_deg(&[50.0]);
        let signals = DMatrix::<C64>::zeros(1, 10_000);
        let mut rng = RngStream::new(5, 0);
        let y = gen_deterministic(&geom, &dirs, &signals, 1.0, &mut rng).unwrap();
        let pow: f64 =
            y.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / (y.data().len() as f64);
        assert_relative_eq!(pow, 1.0, max_relative = 0.05);
    }

    #[test]
    fn single_source_noiseless_columns_are_proportional() {
        let geom = ArrayGeometry::ula(6, 2.0).unwrap();
        let dir = dirs_deg(&[72.0]);
        let signals = DMatrix::from_fn(1, 4, |_, t| C64::new(1.0 + t as f64, -0.5));
        let mut rng = RngStream::new(2, 0);
        let y = gen_deterministic(&geom, &dir, &signals, 0.0, &mut rng).unwrap();
        let a = steering_vector(&geom, dir[0]);
        for t in 0..4 {
            let ratio = y.data()[(0, t)] / a.entries()[0];
            for n in 1..6 {
                let r = y.data()[(n, t)] / a.entries()[n];
                assert!((r - ratio).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn stochastic_covariance_approaches_analytic() {
        let geom = ArrayGeometry::ula(4, 2.0).unwrap();
        let dirs = dirs_deg(&[35.0, 120.0]);
        let powers = [1.5, 0.7];
        let sigma = 0.8;
        let mut rng = RngStream::new(9, 1);
        let y = gen_stochastic(&geom, &dirs, &powers, sigma, 10_000, &mut rng).unwrap();
        let rhat = sample_covariance(&y);

        let mut cy = DMatrix::<C64>::identity(4, 4) * C64::new(sigma, 0.0);
        for (dir, p) in dirs.iter().zip(powers) {
            let a = steering_vector(&geom, *dir);
            cy += a.entries() * a.entries().adjoint() * C64::new(p, 0.0);
        }
        let diff = (&rhat - &cy).norm();
        assert!(diff / cy.norm() < 0.10, "relative error {}", diff / cy.norm());
    }

    #[test]
    fn stochastic_zero_power_is_pure_noise() {
        let geom = ArrayGeometry::ula(3, 2.0).unwrap();
        let dirs = dirs_deg(&[80.0]);
        let mut rng = RngStream::new(3, 0);
        let y = gen_stochastic(&geom, &dirs, &[0.0], 2.0, 10_000, &mut rng).unwrap();
        let rhat = sample_covariance(&y);
        let target = DMatrix::<C64>::identity(3, 3) * C64::new(2.0, 0.0);
        let diff = (&rhat - &target).norm();
        assert!(diff / target.norm() < 0.10);
    }

    #[test]
    fn stochastic_dominant_eigenvector_aligns_with_steering() {
        let geom = ArrayGeometry::ula(5, 2.0).unwrap();
        let dirs = dirs_deg(&[64.0]);
        let mut rng = RngStream::new(13, 0);
        let y = gen_stochastic(&geom, &dirs, &[10.0], 0.01, 10_000, &mut rng).unwrap();
        let rhat = sample_covariance(&y);
        // Power iteration extracts the dominant eigenvector of the PSD matrix.
        let mut v = nalgebra::DVector::<C64>::from_element(5, C64::new(1.0, 0.0));
        for _ in 0..300 {
            v = &rhat * &v;
            let norm = v.norm();
            v /= C64::new(norm, 0.0);
        }
        let a = steering_vector(&geom, dirs[0]);
        let cosine = v.dotc(a.entries()).norm() / (a.entries().norm());
        assert!(cosine >= (PI / 180.0).cos(), "alignment cosine {cosine}");
    }

    #[test]
    fn sample_covariance_matches_naive_oracle() {
        let geom = ArrayGeometry::ula(4, 2.0).unwrap();
        let dirs = dirs_deg(&[25.0, 75.0]);
        let mut rng = RngStream::new(21, 2);
        let y = gen_stochastic(&geom, &dirs, &[1.0, 2.0], 0.5, 7, &mut rng).unwrap();
        let rhat = sample_covariance(&y);

        let n = y.sensors();
        let t = y.snapshots();
        let mut oracle = DMatrix::<C64>::zeros(n, n);
        for k in 0..t {
            for i in 0..n {
                for j in 0..n {
                    oracle[(i, j)] += y.data()[(i, k)] * y.data()[(j, k)].conj();
                }
            }
        }
        oracle /= C64::new(t as f64, 0.0);
        assert!((&rhat - &oracle).norm() <= 1e-12 * oracle.norm().max(1.0));

        assert!(crate::array::max_asymmetry(&rhat) <= 1e-14);
        // PSD spot check through random quadratic forms.
        let tr: f64 = (0..n).map(|i| rhat[(i, i)].re).sum();
        let mut s = 99u64;
        for _ in 0..50 {
            let z = nalgebra::DVector::<C64>::from_fn(n, |_, _| {
                s = s.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
                let re = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                s = s.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
                let im = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                C64::new(re, im)
            });
            let quad = z.dotc(&(&rhat * &z)).re;
            assert!(quad >= -1e-10 * tr);
        }
    }

    #[test]
    fn single_snapshot_covariance_is_outer_product() {
        let data = DMatrix::from_column_slice(2, 1, &[C64::new(1.0, 2.0), C64::new(-0.5, 0.5)]);
        let y = SnapshotMatrix::new(data.clone()).unwrap();
        let rhat = sample_covariance(&y);
        let oracle = &data * data.adjoint();
        assert!((&rhat - &oracle).norm() <= 1e-14);

        let zero = SnapshotMatrix::new(DMatrix::from_element(2, 3, C64::new(0.0, 0.0))).unwrap();
        assert!(sample_covariance(&zero).norm() == 0.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let geom = ArrayGeometry::ula(3, 2.0).unwrap();
        let mut rng = RngStream::new(17, 5);
        let y = gen_stochastic(&geom, &dirs_deg(&[45.0]), &[1.0], 1.0, 4, &mut rng).unwrap();
        let mut buf = Vec::new();
        y.write_csv(&mut buf).unwrap();
        let back = SnapshotMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(y, back);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let geom = ArrayGeometry::ula(3, 2.0).unwrap();
        let mut rng = RngStream::new(18, 5);
        let y = gen_stochastic(&geom, &dirs_deg(&[45.0]), &[1.0], 1.0, 4, &mut rng).unwrap();
        let mut buf = Vec::new();
        y.to_json(&mut buf).unwrap();
        let back = SnapshotMatrix::from_json(buf.as_slice()).unwrap();
        assert_eq!(y, back);
    }

    #[test]
    fn malformed_snapshot_files_are_rejected() {
        assert!(SnapshotMatrix::read_csv("".as_bytes()).is_err());
        assert!(SnapshotMatrix::read_csv("1.0,2.0,3.0".as_bytes()).is_err());
        assert!(SnapshotMatrix::read_csv("1.0,2.0\n1.0,2.0,3.0,4.0".as_bytes()).is_err());
        assert!(SnapshotMatrix::read_csv("1.0,abc".as_bytes()).is_err());
        assert!(SnapshotMatrix::read_csv("1.0,NaN".as_bytes()).is_err());

        assert!(SnapshotMatrix::from_json("{}".as_bytes()).is_err());
        let wrong_rows = r#"{"sensors": 3, "snapshots": 1, "data": [[1.0, 2.0]]}"#;
        assert!(SnapshotMatrix::from_json(wrong_rows.as_bytes()).is_err());
        let wrong_cols = r#"{"sensors": 1, "snapshots": 2, "data": [[1.0, 2.0]]}"#;
        assert!(SnapshotMatrix::from_json(wrong_cols.as_bytes()).is_err());
        let odd = r#"{"sensors": 1, "snapshots": 1, "data": [[1.0, 2.0, 3.0]]}"#;
        assert!(SnapshotMatrix::from_json(odd.as_bytes()).is_err());
    }

    #[test]
    fn generator_dimension_errors() {
        let geom = ArrayGeometry::ula(4, 2.0).unwrap();
        let dirs = dirs_deg(&[30.0, 60.0]);
        let mut rng = RngStream::new(0, 0);
        let bad_signals = DMatrix::<C64>::zeros(3, 5);
        assert!(gen_deterministic(&geom, &dirs, &bad_signals, 1.0, &mut rng).is_err());
        assert!(gen_stochastic(&geom, &dirs, &[1.0], 1.0, 5, &mut rng).is_err());
        assert!(gen_stochastic(&geom, &dirs, &[1.0, -2.0], 1.0, 5, &mut rng).is_err());
        assert!(gen_stochastic(&geom, &dirs, &[1.0, 1.0], 0.0, 5, &mut rng).is_err());
        let ok_signals = DMatrix::<C64>::zeros(2, 5);
        assert!(gen_deterministic(&geom, &dirs, &ok_signals, -1.0, &mut rng).is_err());
    }
}
