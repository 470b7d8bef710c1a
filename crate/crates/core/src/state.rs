//! Amplitude-queryable states, basis families and the `qsv1` state file.
//!
//! A `qsv1` file is one UTF-8 JSON header line followed by the raw amplitudes:
//!
//! ```text
//! {"format":"qsv1","n":3,"encoding":"c128le","order":"site0-lsb-up0"}\n
//! <2^n pairs of little-endian f64 (re, im) in index order>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin_model::{OperatorTerms, SpinConfig};
use crate::C64;

/// Largest site count for dense storage.
pub const MAX_DENSE_SITES: usize = 20;

/// A state stored as a dense, possibly unnormalized amplitude vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeState {
    n: usize,
    amplitudes: Vec<C64>,
    pub label: String,
}

impl AmplitudeState {
    pub fn new(n: usize, amplitudes: Vec<C64>, label: impl Into<String>) -> Result<Self> {
        check_dense_sites(n)?;
        if amplitudes.len() != 1 << n {
            return Err(Error::Dimension(format!(
                "{} amplitudes for n = {n} (expected {})",
                amplitudes.len(),
                1usize << n
            )));
        }
        if amplitudes.iter().all(|a| *a == C64::new(0.0, 0.0)) {
            return Err(Error::Invalid("state is the zero vector".into()));
        }
        if amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::Invalid("state has non-finite amplitudes".into()));
        }
        Ok(Self {
            n,
            amplitudes,
            label: label.into(),
        })
    }

    pub fn from_vector(n: usize, v: &DVector<C64>, label: impl Into<String>) -> Result<Self> {
        Self::new(n, v.iter().copied().collect(), label)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    #[inline]
    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn to_vector(&self) -> DVector<C64> {
        DVector::from_column_slice(&self.amplitudes)
    }

    /// ⟨s|φ⟩.
    pub fn amplitude(&self, s: SpinConfig) -> Result<C64> {
        s.check_sites(self.n)?;
        Ok(self.amplitudes[s.index()])
    }

    #[inline]
    pub(crate) fn amp(&self, s: SpinConfig) -> C64 {
        self.amplitudes[s.index()]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &AmplitudeState) -> Result<C64> {
        if self.n != other.n {
            return Err(Error::SiteMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        Ok(inner(&self.amplitudes, &other.amplitudes))
    }

    pub fn normalized(&self) -> Self {
        let inv = 1.0 / self.norm();
        Self {
            n: self.n,
            amplitudes: self.amplitudes.iter().map(|a| a * inv).collect(),
            label: self.label.clone(),
        }
    }

    /// ⟨s|O|φ⟩ = Σ_{s'} ⟨s|O|s'⟩⟨s'|φ⟩.
    pub fn local_row(&self, op: &OperatorTerms, s: SpinConfig) -> Result<C64> {
        s.check_sites(self.n)?;
        if op.n() != self.n {
            return Err(Error::SiteMismatch {
                expected: self.n,
                got: op.n(),
            });
        }
        Ok(self.local_row_unchecked(op, s))
    }

    #[inline]
    pub(crate) fn local_row_unchecked(&self, op: &OperatorTerms, s: SpinConfig) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        op.for_each_connected(s, |sp, v| acc += self.amplitudes[sp.index()] * v);
        acc
    }

    /// O|φ⟩ as a new (unnormalized) state.
    pub fn apply(&self, op: &OperatorTerms) -> Result<Vec<C64>> {
        if op.n() != self.n {
            return Err(Error::SiteMismatch {
                expected: self.n,
                got: op.n(),
            });
        }
        Ok(op.apply_vec(&self.amplitudes))
    }

    /// ⟨φ|O|φ⟩/⟨φ|φ⟩.
    pub fn expectation(&self, op: &OperatorTerms) -> Result<f64> {
        let ov = self.apply(op)?;
        Ok(inner(&self.amplitudes, &ov).re / self.norm_sqr())
    }

    pub fn write_qsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(File::create(path)?);
        self.write_qsv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_qsv_to(&self, w: &mut impl Write) -> Result<()> {
        let header = QsvHeader {
            format: QSV_FORMAT.into(),
            n: self.n,
            encoding: QSV_ENCODING.into(),
            order: QSV_ORDER.into(),
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(16 * self.amplitudes.len());
        for a in &self.amplitudes {
            buf.extend_from_slice(&a.re.to_le_bytes());
            buf.extend_from_slice(&a.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_qsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        let mut state = Self::read_qsv_from(&mut r)?;
        state.label = path.display().to_string();
        Ok(state)
    }

    pub fn read_qsv_from(r: &mut impl BufRead) -> Result<Self> {
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            return Err(Error::Format("missing header line".into()));
        }
        let header: QsvHeader = serde_json::from_slice(&line[..line.len() - 1])
            .map_err(|e| Error::Format(format!("malformed header: {e}")))?;
        if header.format != QSV_FORMAT || header.encoding != QSV_ENCODING || header.order != QSV_ORDER
        {
            return Err(Error::Format(format!(
                "unsupported header {}/{}/{}",
                header.format, header.encoding, header.order
            )));
        }
        check_dense_sites(header.n)?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let dim = 1usize << header.n;
        if payload.len() != 16 * dim {
            return Err(Error::Format(format!(
                "payload length mismatch: {} bytes for n = {} (expected {})",
                payload.len(),
                header.n,
                16 * dim
            )));
        }
        let amplitudes = payload
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                C64::new(re, im)
            })
            .collect();
        Self::new(header.n, amplitudes, "")
    }
}

const QSV_FORMAT: &str = "qsv1";
const QSV_ENCODING: &str = "c128le";
const QSV_ORDER: &str = "site0-lsb-up0";

#[derive(Serialize, Deserialize)]
struct QsvHeader {
    format: String,
    n: usize,
    encoding: String,
    order: String,
}

fn check_dense_sites(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Invalid("state needs at least one site".into()));
    }
    if n > MAX_DENSE_SITES {
        return Err(Error::SizeCap {
            n,
            cap: MAX_DENSE_SITES,
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Product state with every amplitude 2^(−n/2).
pub fn uniform_state(n: usize) -> Result<AmplitudeState> {
    check_dense_sites(n)?;
    let a = (0.5f64).powf(n as f64 / 2.0);
    AmplitudeState::new(n, vec![C64::new(a, 0.0); 1 << n], "uniform")
}

/// The computational basis vector |s⟩.
pub fn basis_state(s: SpinConfig) -> Result<AmplitudeState> {
    check_dense_sites(s.n())?;
    let mut amps = vec![C64::new(0.0, 0.0); 1 << s.n()];
    amps[s.index()] = C64::new(1.0, 0.0);
    AmplitudeState::new(s.n(), amps, format!("basis {s}"))
}

/// An ordered family of `m ≥ 1` states on the same sites.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisFamily {
    n: usize,
    members: Vec<AmplitudeState>,
}

impl BasisFamily {
    pub fn new(members: Vec<AmplitudeState>) -> Result<Self> {
        let n = members
            .first()
            .ok_or_else(|| Error::Invalid("family needs at least one member".into()))?
            .n();
        if let Some(bad) = members.iter().find(|m| m.n() != n) {
            return Err(Error::SiteMismatch {
                expected: n,
                got: bad.n(),
            });
        }
        Ok(Self { n, members })
    }

    /// Columns of `m` become members.
    pub fn from_columns(n: usize, m: &DMatrix<C64>) -> Result<Self> {
        let members = m
            .column_iter()
            .enumerate()
            .map(|(k, c)| AmplitudeState::new(n, c.iter().copied().collect(), format!("col {k}")))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub fn load(paths: &[impl AsRef<Path>]) -> Result<Self> {
        Self::new(
            paths
                .iter()
                .map(AmplitudeState::read_qsv)
                .collect::<Result<Vec<_>>>()?,
        )
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.members.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn members(&self) -> &[AmplitudeState] {
        &self.members
    }

    pub fn member(&self, k: usize) -> &AmplitudeState {
        &self.members[k]
    }

    /// dim × m matrix with the members as columns.
    pub fn to_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.dim(), self.m(), |i, k| self.members[k].amplitudes()[i])
    }

    /// ⟨s|φ_k⟩ for every member.
    pub fn amplitudes_at(&self, s: SpinConfig) -> Vec<C64> {
        self.members.iter().map(|m| m.amp(s)).collect()
    }

    /// Σ_k α_k |φ_k⟩ as a dense vector.
    pub fn combine(&self, alpha: &[C64]) -> Result<DVector<C64>> {
        if alpha.len() != self.m() {
            return Err(Error::Dimension(format!(
                "{} coefficients for {} members",
                alpha.len(),
                self.m()
            )));
        }
        let mut out = DVector::zeros(self.dim());
        for (a, member) in alpha.iter().zip(&self.members) {
            for (o, x) in out.iter_mut().zip(member.amplitudes()) {
                *o += a * x;
            }
        }
        Ok(out)
    }

    /// Ratio of smallest to largest Gram eigenvalue; near zero flags a nearly
    /// dependent family. Advisory only.
    pub fn independence_diagnostic(&self) -> f64 {
        let m = self.to_matrix();
        let g = m.adjoint() * &m;
        let eig = nalgebra::SymmetricEigen::new(g).eigenvalues;
        let max = eig.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.iter().cloned().fold(f64::MAX, f64::min);
        if max <= 0.0 {
            0.0
        } else {
            min.max(0.0) / max
        }
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::with_capacity(self.m());
        for (k, member) in self.members.iter().enumerate() {
            let name = format!("{prefix}_{k:03}.qsv");
            member.write_qsv(dir.join(&name))?;
            names.push(name);
        }
        Ok(names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_model::{build_tfim, magnetization_x, Boundary, Geometry};

    fn cfg(s: &str) -> SpinConfig {
        SpinConfig::from_spins(s).unwrap()
    }

    #[test]
    fn uniform_amplitudes() {
        let u1 = uniform_state(1).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!(u1.amplitudes().iter().all(|a| (a.re - r).abs() < 1e-16 && a.im == 0.0));
        let u4 = uniform_state(4).unwrap();
        assert_eq!(u4.dim(), 16);
        assert!(u4.amplitudes().iter().all(|a| *a == C64::new(0.25, 0.0)));
        let u2 = uniform_state(2).unwrap();
        assert_eq!(u2.amplitude(cfg("ud")).unwrap(), C64::new(0.5, 0.0));
        assert!(u2.amplitude(cfg("udu")).is_err());
    }

    #[test]
    fn uniform_is_mx_eigenstate() {
        for n in 1..=8 {
            let mx = magnetization_x(n).unwrap();
            let v = uniform_state(n).unwrap().expectation(&mx).unwrap();
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn basis_vector_amplitudes() {
        let e = basis_state(cfg("uu")).unwrap();
        assert_eq!(e.amplitude(cfg("uu")).unwrap(), C64::new(1.0, 0.0));
        assert_eq!(e.amplitude(cfg("dd")).unwrap(), C64::new(0.0, 0.0));
    }

    #[test]
    fn zero_vector_and_caps_rejected() {
        assert!(AmplitudeState::new(1, vec![C64::new(0.0, 0.0); 2], "").is_err());
        assert!(AmplitudeState::new(2, vec![C64::new(1.0, 0.0); 3], "").is_err());
        assert!(matches!(uniform_state(21), Err(Error::SizeCap { .. })));
    }

    #[test]
    fn local_row_by_hand() {
        let h = build_tfim(Geometry::chain(2, Boundary::Open), 1.0, 1.0).unwrap();
        let u = uniform_state(2).unwrap();
        let v = u.local_row(&h, cfg("uu")).unwrap();
        assert!((v - C64::new(-1.5, 0.0)).norm() < 1e-15);
        let id = OperatorTerms::identity(2).unwrap();
        for s in SpinConfig::all(2) {
            assert_eq!(u.local_row(&id, s).unwrap(), u.amplitude(s).unwrap());
        }
    }

    #[test]
    fn local_row_matches_dense_product() {
        let h = build_tfim(Geometry::chain(6, Boundary::Periodic), 0.8, 1.3).unwrap();
        let amps: Vec<C64> = (0..64)
            .map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let st = AmplitudeState::new(6, amps, "").unwrap();
        let dense = h.to_dense() * st.to_vector();
        for s in SpinConfig::all(6) {
            let row = st.local_row(&h, s).unwrap();
            assert!((row - dense[s.index()]).norm() < 1e-13);
        }
    }

    #[test]
    fn qsv_round_trip_is_bit_exact() {
        let amps: Vec<C64> = (0..8)
            .map(|i| C64::new(1.0 / (i as f64 + 3.0), -(i as f64).sqrt() * 1e-300))
            .collect();
        let st = AmplitudeState::new(3, amps, "x").unwrap();
        let mut bytes = Vec::new();
        st.write_qsv_to(&mut bytes).unwrap();
        let back = AmplitudeState::read_qsv_from(&mut bytes.as_slice()).unwrap();
        for (a, b) in st.amplitudes().iter().zip(back.amplitudes()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..header_end]).unwrap(),
            r#"{"format":"qsv1","n":3,"encoding":"c128le","order":"site0-lsb-up0"}"#
        );
    }

    #[test]
    fn qsv_rejects_short_payload() {
        let st = uniform_state(3).unwrap();
        let mut bytes = Vec::new();
        st.write_qsv_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 16);
        let err = AmplitudeState::read_qsv_from(&mut bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("payload length mismatch"), "{err}");
        let err = AmplitudeState::read_qsv_from(&mut &b"{not json}\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn family_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = uniform_state(3).unwrap();
        let b = basis_state(cfg("udu")).unwrap();
        a.write_qsv(dir.path().join("a.qsv")).unwrap();
        b.write_qsv(dir.path().join("b.qsv")).unwrap();
        let fam = BasisFamily::load(&[dir.path().join("a.qsv"), dir.path().join("b.qsv")]).unwrap();
        assert_eq!(fam.m(), 2);
        assert_eq!(fam.member(1).amplitudes(), b.amplitudes());
        assert!(fam.independence_diagnostic() > 0.1);
        let mixed = BasisFamily::new(vec![a, uniform_state(2).unwrap()]);
        assert!(mixed.is_err());
    }
}
