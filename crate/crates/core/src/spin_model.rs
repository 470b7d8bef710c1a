//! Spin-1/2 lattices and Hermitian operators built from Pauli terms.
//!
//! Configurations use a fixed encoding: site 0 is the least significant bit of the
//! basis index and spin up is bit value 0. The same encoding is used by the state
//! files, so stored vectors are portable between runs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// Critical transverse field of the square-lattice TFIM in units of J.
pub const SQUARE_TFIM_CRITICAL_FIELD: f64 = 3.044;

/// Largest site count a [`SpinConfig`] can hold.
pub const MAX_SITES: usize = 62;

/// A computational basis configuration of `n` two-level sites.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinConfig {
    bits: u64,
    n: u32,
}

impl SpinConfig {
    pub fn new(n: usize, bits: u64) -> Result<Self> {
        if n == 0 || n > MAX_SITES {
            return Err(Error::Invalid(format!("site count {n} outside 1..={MAX_SITES}")));
        }
        if bits >> n != 0 {
            return Err(Error::Invalid(format!("bits {bits:#b} do not fit in {n} sites")));
        }
        Ok(Self { bits, n: n as u32 })
    }

    /// All spins up.
    pub fn up(n: usize) -> Result<Self> {
        Self::new(n, 0)
    }

    pub(crate) fn from_index_unchecked(n: usize, index: usize) -> Self {
        Self {
            bits: index as u64,
            n: n as u32,
        }
    }

    /// Parse a string of `u`/`d` (or `↑`/`↓`) characters, site 0 first.
    pub fn from_spins(spins: &str) -> Result<Self> {
        let mut bits = 0u64;
        let mut n = 0usize;
        for c in spins.chars() {
            match c {
                'u' | 'U' | '↑' | '0' => {}
                'd' | 'D' | '↓' | '1' => bits |= 1 << n,
                _ => return Err(Error::Invalid(format!("bad spin character {c:?}"))),
            }
            n += 1;
        }
        Self::new(n, bits)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n as usize
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Index of this configuration in a dense vector of length 2^n.
    #[inline]
    pub fn index(&self) -> usize {
        self.bits as usize
    }

    #[inline]
    pub fn is_up(&self, site: usize) -> bool {
        self.bits >> site & 1 == 0
    }

    /// Eigenvalue of σᶻ on `site`: +1 for up, −1 for down.
    #[inline]
    pub fn sz(&self, site: usize) -> f64 {
        if self.is_up(site) {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    pub fn flip(&self, site: usize) -> Self {
        Self {
            bits: self.bits ^ (1 << site),
            n: self.n,
        }
    }

    /// Every configuration of `n` sites in index order.
    pub fn all(n: usize) -> impl Iterator<Item = SpinConfig> {
        (0..1u64 << n).map(move |bits| SpinConfig { bits, n: n as u32 })
    }

    pub fn check_sites(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return Err(Error::SiteMismatch {
                expected: n,
                got: self.n(),
            });
        }
        Ok(())
    }
}

impl fmt::Debug for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpinConfig({self})")
    }
}

impl fmt::Display for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for site in 0..self.n() {
            f.write_str(if self.is_up(site) { "↑" } else { "↓" })?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Chain,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub kind: LatticeKind,
    pub extent: usize,
    pub boundary: Boundary,
}

impl Geometry {
    pub fn chain(extent: usize, boundary: Boundary) -> Self {
        Self {
            kind: LatticeKind::Chain,
            extent,
            boundary,
        }
    }

    pub fn square(extent: usize, boundary: Boundary) -> Self {
        Self {
            kind: LatticeKind::Square,
            extent,
            boundary,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.extent < 1 {
            return Err(Error::Invalid("geometry extent must be at least 1".into()));
        }
        if self.n_sites() > MAX_SITES {
            return Err(Error::Invalid(format!(
                "geometry has {} sites, more than {MAX_SITES}",
                self.n_sites()
            )));
        }
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        match self.kind {
            LatticeKind::Chain => self.extent,
            LatticeKind::Square => self.extent * self.extent,
        }
    }

    /// Nearest-neighbour bonds, each unordered pair listed once with `i < j`.
    ///
    /// Wrap-around links that coincide with an existing bond (extent 2 with
    /// periodic boundaries) are not added a second time.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let l = self.extent;
        let periodic = self.boundary == Boundary::Periodic;
        let mut bonds = Vec::new();
        let mut push = |a: usize, b: usize| {
            let bond = (a.min(b), a.max(b));
            if a != b && !bonds.contains(&bond) {
                bonds.push(bond);
            }
        };
        match self.kind {
            LatticeKind::Chain => {
                for i in 0..l {
                    if i + 1 < l {
                        push(i, i + 1);
                    } else if periodic {
                        push(i, 0);
                    }
                }
            }
            LatticeKind::Square => {
                let site = |x: usize, y: usize| x + l * y;
                for y in 0..l {
                    for x in 0..l {
                        if x + 1 < l {
                            push(site(x, y), site(x + 1, y));
                        } else if periodic {
                            push(site(x, y), site(0, y));
                        }
                        if y + 1 < l {
                            push(site(x, y), site(x, y + 1));
                        } else if periodic {
                            push(site(x, y), site(x, 0));
                        }
                    }
                }
            }
        }
        bonds
    }
}

impl FromStr for Geometry {
    type Err = Error;

    /// Parses `chain:12:open` or `square:4:periodic`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Invalid(format!("geometry {s:?} is not kind:extent:boundary")));
        }
        let kind = match parts[0] {
            "chain" => LatticeKind::Chain,
            "square" => LatticeKind::Square,
            other => return Err(Error::Invalid(format!("unknown lattice kind {other:?}"))),
        };
        let extent: usize = parts[1]
            .parse()
            .map_err(|_| Error::Invalid(format!("bad extent {:?}", parts[1])))?;
        let boundary = match parts[2] {
            "open" => Boundary::Open,
            "periodic" | "pbc" => Boundary::Periodic,
            other => return Err(Error::Invalid(format!("unknown boundary {other:?}"))),
        };
        let geometry = Geometry {
            kind,
            extent,
            boundary,
        };
        geometry.validate()?;
        Ok(geometry)
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            LatticeKind::Chain => "chain",
            LatticeKind::Square => "square",
        };
        let boundary = match self.boundary {
            Boundary::Open => "open",
            Boundary::Periodic => "periodic",
        };
        write!(f, "{kind}:{}:{boundary}", self.extent)
    }
}

/// Pauli-string body of an operator term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TermBody {
    ZZ(usize, usize),
    X(usize),
    Z(usize),
    Identity,
}

impl TermBody {
    pub fn is_diagonal(&self) -> bool {
        !matches!(self, TermBody::X(_))
    }

    fn canonical(self) -> Self {
        match self {
            TermBody::ZZ(i, j) if i > j => TermBody::ZZ(j, i),
            other => other,
        }
    }

    fn max_site(&self) -> Option<usize> {
        match *self {
            TermBody::ZZ(i, j) => Some(i.max(j)),
            TermBody::X(i) | TermBody::Z(i) => Some(i),
            TermBody::Identity => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub body: TermBody,
}

impl Term {
    pub fn new(coeff: f64, body: TermBody) -> Self {
        Self { coeff, body }
    }
}

/// A Hermitian operator as a real-weighted sum of Pauli terms.
///
/// Diagonal and off-diagonal parts are precomputed at construction so that
/// connected-element queries do not touch the term list.
#[derive(Clone, Debug)]
pub struct OperatorTerms {
    n: usize,
    terms: Vec<Term>,
    zz: Vec<(f64, usize, usize)>,
    z: Vec<(f64, usize)>,
    identity: f64,
    has_diagonal: bool,
    // merged transverse coefficient per site, zero entries dropped
    x: Vec<(usize, f64)>,
}

impl PartialEq for OperatorTerms {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.terms == other.terms
    }
}

impl OperatorTerms {
    pub fn new(n: usize, terms: Vec<Term>) -> Result<Self> {
        if n == 0 || n > MAX_SITES {
            return Err(Error::Invalid(format!("site count {n} outside 1..={MAX_SITES}")));
        }
        for t in &terms {
            if let Some(site) = t.body.max_site() {
                if site >= n {
                    return Err(Error::Invalid(format!(
                        "term {:?} references site {site} but n = {n}",
                        t.body
                    )));
                }
            }
            if let TermBody::ZZ(i, j) = t.body {
                if i == j {
                    return Err(Error::Invalid(format!("ZZ term on a single site {i}")));
                }
            }
            if !t.coeff.is_finite() {
                return Err(Error::Invalid("non-finite coefficient".into()));
            }
        }
        let mut zz = Vec::new();
        let mut z = Vec::new();
        let mut identity = 0.0;
        let mut x_site = vec![0.0; n];
        let mut has_x = vec![false; n];
        let mut has_diagonal = false;
        for t in &terms {
            match t.body {
                TermBody::ZZ(i, j) => {
                    zz.push((t.coeff, i, j));
                    has_diagonal = true;
                }
                TermBody::Z(i) => {
                    z.push((t.coeff, i));
                    has_diagonal = true;
                }
                TermBody::Identity => {
                    identity += t.coeff;
                    has_diagonal = true;
                }
                TermBody::X(i) => {
                    x_site[i] += t.coeff;
                    has_x[i] = true;
                }
            }
        }
        let x = (0..n)
            .filter(|&i| has_x[i] && x_site[i] != 0.0)
            .map(|i| (i, x_site[i]))
            .collect();
        Ok(Self {
            n,
            terms,
            zz,
            z,
            identity,
            has_diagonal,
            x,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(n, vec![Term::new(1.0, TermBody::Identity)])
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// ⟨s|O|s⟩.
    #[inline]
    pub fn diagonal(&self, s: SpinConfig) -> f64 {
        let mut acc = self.identity;
        for &(c, i, j) in &self.zz {
            acc += c * s.sz(i) * s.sz(j);
        }
        for &(c, i) in &self.z {
            acc += c * s.sz(i);
        }
        acc
    }

    pub fn has_diagonal(&self) -> bool {
        self.has_diagonal
    }

    /// Visit every `s'` with a structurally nonzero ⟨s|O|s'⟩: the diagonal first
    /// (when the operator has diagonal terms), then single flips in site order.
    #[inline]
    pub fn for_each_connected(&self, s: SpinConfig, mut f: impl FnMut(SpinConfig, f64)) {
        if self.has_diagonal {
            f(s, self.diagonal(s));
        }
        for &(site, c) in &self.x {
            f(s.flip(site), c);
        }
    }

    /// All `(s', ⟨s|O|s'⟩)` pairs with nonzero matrix element.
    pub fn connected_elements(&self, s: SpinConfig) -> Result<Vec<(SpinConfig, C64)>> {
        s.check_sites(self.n)?;
        let mut out = Vec::with_capacity(1 + self.x.len());
        self.for_each_connected(s, |sp, v| out.push((sp, C64::new(v, 0.0))));
        Ok(out)
    }

    /// Number of connected elements per configuration (upper bound).
    pub fn connectivity(&self) -> usize {
        usize::from(self.has_diagonal) + self.x.len()
    }

    /// out = O·x on dense vectors in the fixed encoding.
    pub fn apply(&self, x: &[C64], out: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(out.len(), self.dim());
        for (idx, o) in out.iter_mut().enumerate() {
            let s = SpinConfig::from_index_unchecked(self.n, idx);
            let mut acc = C64::new(0.0, 0.0);
            self.for_each_connected(s, |sp, v| acc += x[sp.index()] * v);
            *o = acc;
        }
    }

    pub fn apply_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); x.len()];
        self.apply(x, &mut out);
        out
    }

    /// Dense matrix assembled from connected elements. Intended for n ≤ 12.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for s in SpinConfig::all(self.n) {
            self.for_each_connected(s, |sp, v| m[(s.index(), sp.index())] += C64::new(v, 0.0));
        }
        m
    }

    /// Real symmetric dense matrix; every supported term is real in the fixed encoding.
    pub fn to_dense_real(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for s in SpinConfig::all(self.n) {
            self.for_each_connected(s, |sp, v| m[(s.index(), sp.index())] += v);
        }
        m
    }

    /// Diagonal terms only (ZZ, Z, identity).
    pub fn diagonal_part(&self) -> Self {
        let terms = self.terms.iter().copied().filter(|t| t.body.is_diagonal()).collect();
        Self::new(self.n, terms).expect("subset of a valid operator")
    }

    /// Off-diagonal terms only (X).
    pub fn offdiagonal_part(&self) -> Self {
        let terms = self.terms.iter().copied().filter(|t| !t.body.is_diagonal()).collect();
        Self::new(self.n, terms).expect("subset of a valid operator")
    }

    /// Merged transverse coefficient per site, zero sites omitted.
    pub fn transverse_coefficients(&self) -> &[(usize, f64)] {
        &self.x
    }

    /// The same operator with every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| Term::new(t.coeff * factor, t.body))
            .collect();
        Self::new(self.n, terms).expect("scaling keeps validity")
    }

    pub fn to_spec(&self) -> OperatorSpec {
        OperatorSpec {
            n: self.n,
            terms: self
                .terms
                .iter()
                .map(|t| {
                    let (body, sites) = match t.body {
                        TermBody::ZZ(i, j) => ("ZZ", vec![i, j]),
                        TermBody::X(i) => ("X", vec![i]),
                        TermBody::Z(i) => ("Z", vec![i]),
                        TermBody::Identity => ("I", vec![]),
                    };
                    TermSpec {
                        coeff: t.coeff,
                        body: body.to_string(),
                        sites,
                    }
                })
                .collect(),
        }
    }

    pub fn from_spec(spec: &OperatorSpec) -> Result<Self> {
        let terms = spec
            .terms
            .iter()
            .map(|t| {
                let body = match (t.body.as_str(), t.sites.as_slice()) {
                    ("ZZ", &[i, j]) => TermBody::ZZ(i, j),
                    ("X", &[i]) => TermBody::X(i),
                    ("Z", &[i]) => TermBody::Z(i),
                    ("I", &[]) => TermBody::Identity,
                    (b, s) => {
                        return Err(Error::Invalid(format!(
                            "term body {b:?} with sites {s:?} is not supported"
                        )))
                    }
                };
                Ok(Term::new(t.coeff, body))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec.n, terms)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: OperatorSpec = serde_json::from_str(&text)?;
        Self::from_spec(&spec)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_spec())?)?;
        Ok(())
    }
}

/// JSON form of an operator: `{"n": .., "terms": [{"coeff", "body", "sites"}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub n: usize,
    pub terms: Vec<TermSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub coeff: f64,
    pub body: String,
    pub sites: Vec<usize>,
}

/// −J Σ⟨ij⟩ σᶻσᶻ − h Σ σˣ.
pub fn build_tfim(geometry: Geometry, j: f64, h: f64) -> Result<OperatorTerms> {
    let (zz, x) = tfim_parts(geometry)?;
    combine_terms(&[j, h], &[zz, x])
}

/// The two TFIM pieces `(−Σ σᶻσᶻ, −Σ σˣ)` so that H = J·first + h·second.
pub fn tfim_parts(geometry: Geometry) -> Result<(OperatorTerms, OperatorTerms)> {
    geometry.validate()?;
    let n = geometry.n_sites();
    let zz = geometry
        .bonds()
        .into_iter()
        .map(|(i, j)| Term::new(-1.0, TermBody::ZZ(i, j)))
        .collect();
    let x = (0..n).map(|i| Term::new(-1.0, TermBody::X(i))).collect();
    Ok((OperatorTerms::new(n, zz)?, OperatorTerms::new(n, x)?))
}

/// M_x = (1/n) Σ σˣ.
pub fn magnetization_x(n: usize) -> Result<OperatorTerms> {
    let c = 1.0 / n as f64;
    OperatorTerms::new(n, (0..n).map(|i| Term::new(c, TermBody::X(i))).collect())
}

/// Σ_p γ_p·O_p with equal bodies merged.
pub fn combine_terms(gammas: &[f64], parts: &[OperatorTerms]) -> Result<OperatorTerms> {
    if gammas.len() != parts.len() {
        return Err(Error::Dimension(format!(
            "{} coefficients for {} operators",
            gammas.len(),
            parts.len()
        )));
    }
    let first = parts
        .first()
        .ok_or_else(|| Error::Invalid("no operators to combine".into()))?;
    let n = first.n();
    let mut merged: Vec<Term> = Vec::new();
    for (&g, part) in gammas.iter().zip(parts) {
        if part.n() != n {
            return Err(Error::SiteMismatch {
                expected: n,
                got: part.n(),
            });
        }
        for t in part.terms() {
            let body = t.body.canonical();
            match merged.iter_mut().find(|m| m.body == body) {
                Some(m) => m.coeff += g * t.coeff,
                None => merged.push(Term::new(g * t.coeff, body)),
            }
        }
    }
    OperatorTerms::new(n, merged)
}
