//! Site tensors on a graph, injectivity, random generation, perturbation,
//! and the virtual superoperators induced by the double layer.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::SplitRng;
use crate::tensor::{c, schatten_norm, svd, DenseTensor, Matrix, Schatten, C64};

/// A PEPS: one tensor per vertex with legs `(physical, virtual...)`, the
/// virtual legs ordered by ascending neighbor id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr", into = "NetworkRepr")]
pub struct PepsNetwork {
    graph: Graph,
    bond_dim: usize,
    phys_dim: usize,
    tensors: Vec<DenseTensor>,
}

#[derive(Serialize, Deserialize)]
struct NetworkRepr {
    graph: Graph,
    bond_dim: usize,
    phys_dim: usize,
    tensors: std::collections::BTreeMap<String, DenseTensor>,
}

impl TryFrom<NetworkRepr> for PepsNetwork {
    type Error = Error;
    fn try_from(r: NetworkRepr) -> Result<Self> {
        let mut tensors = Vec::with_capacity(r.graph.vertex_count());
        for v in 0..r.graph.vertex_count() {
            let t = r
                .tensors
                .get(&v.to_string())
                .ok_or_else(|| Error::Invalid(format!("missing tensor for vertex {v}")))?;
            tensors.push(t.clone());
        }
        PepsNetwork::new(r.graph, r.bond_dim, r.phys_dim, tensors)
    }
}

impl From<PepsNetwork> for NetworkRepr {
    fn from(p: PepsNetwork) -> Self {
        NetworkRepr {
            tensors: p.tensors.into_iter().enumerate().map(|(v, t)| (v.to_string(), t)).collect(),
            graph: p.graph,
            bond_dim: p.bond_dim,
            phys_dim: p.phys_dim,
        }
    }
}

impl PepsNetwork {
    pub fn new(graph: Graph, bond_dim: usize, phys_dim: usize, tensors: Vec<DenseTensor>) -> Result<Self> {
        if bond_dim < 1 || phys_dim < 1 {
            return Err(Error::Invalid("bond and physical dimensions must be positive".into()));
        }
        if tensors.len() != graph.vertex_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} tensors for {} vertices",
                tensors.len(),
                graph.vertex_count()
            )));
        }
        for (v, t) in tensors.iter().enumerate() {
            let k = graph.degree(v);
            let want: Vec<usize> = std::iter::once(phys_dim).chain(std::iter::repeat_n(bond_dim, k)).collect();
            if t.shape() != want.as_slice() {
                return Err(Error::DimensionMismatch(format!(
                    "tensor at vertex {v} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
            check_injectivity_dims(bond_dim, phys_dim, k, v)?;
        }
        Ok(PepsNetwork { graph, bond_dim, phys_dim, tensors })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn bond_dim(&self) -> usize {
        self.bond_dim
    }

    pub fn phys_dim(&self) -> usize {
        self.phys_dim
    }

    pub fn tensor(&self, v: usize) -> &DenseTensor {
        &self.tensors[v]
    }

    pub fn tensors(&self) -> &[DenseTensor] {
        &self.tensors
    }

    /// `d × D^k` matrix `M[p, x] = T[p, x]` (virtual → physical map).
    pub fn site_matrix(&self, v: usize) -> Matrix {
        let t = &self.tensors[v];
        let cols = t.len() / self.phys_dim;
        Matrix::from_vec(self.phys_dim, cols, t.data().to_vec()).expect("shape checked at construction")
    }

    /// `G_v[x, y] = Σ_p T[p, x]·conj(T[p, y])`, a `D^k × D^k` Hermitian PSD
    /// matrix with `x` the ket and `y` the bra virtual multi-index.
    pub fn double_layer(&self, v: usize) -> Matrix {
        let m = self.site_matrix(v);
        m.transpose().mul(&m.conj())
    }

    /// `G^O_v[x, y] = Σ_{p,p'} T[p, x]·O[p', p]·conj(T[p', y])`.
    pub fn dressed_double_layer(&self, v: usize, op: &Matrix) -> Result<Matrix> {
        if op.rows() != self.phys_dim || op.cols() != self.phys_dim {
            return Err(Error::DimensionMismatch(format!(
                "operator {}x{} on physical dimension {}",
                op.rows(),
                op.cols(),
                self.phys_dim
            )));
        }
        let m = self.site_matrix(v);
        Ok(m.transpose().mul(&op.transpose()).mul(&m.conj()))
    }

    /// Copy with the tensor at `v` replaced (shape must match).
    pub fn with_tensor(&self, v: usize, t: DenseTensor) -> Result<Self> {
        if t.shape() != self.tensors[v].shape() {
            return Err(Error::DimensionMismatch(format!("replacement tensor at {v} has shape {:?}", t.shape())));
        }
        let mut out = self.clone();
        out.tensors[v] = t;
        Ok(out)
    }
}

fn check_injectivity_dims(bond_dim: usize, phys_dim: usize, k: usize, v: usize) -> Result<()> {
    let need = bond_dim.checked_pow(k as u32).unwrap_or(usize::MAX);
    if phys_dim < need {
        return Err(Error::Infeasible(format!(
            "vertex {v} has degree {k}: injectivity needs d >= D^{k} = {need}, got d = {phys_dim}"
        )));
    }
    Ok(())
}

/// Per-vertex singular spectra and the derived injectivity parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    /// Descending singular values per vertex, normalized so the largest is 1.
    pub singular_values: Vec<Vec<f64>>,
    pub delta_v: Vec<f64>,
    pub delta: f64,
    pub epsilon: f64,
    /// Some site tensor has a nontrivial kernel.
    pub non_injective: bool,
}

pub fn measure_injectivity(p: &PepsNetwork) -> Result<InjectivityReport> {
    let mut singular_values = Vec::with_capacity(p.graph.vertex_count());
    let mut delta_v = Vec::with_capacity(p.graph.vertex_count());
    for v in 0..p.graph.vertex_count() {
        let s = svd(&p.site_matrix(v))?.s;
        let top = s[0];
        let normalized: Vec<f64> = if top > 0.0 { s.iter().map(|x| x / top).collect() } else { vec![0.0; s.len()] };
        let d = *normalized.last().unwrap();
        delta_v.push(if d <= 1e-14 { 0.0 } else { d.min(1.0) });
        singular_values.push(normalized);
    }
    let delta = delta_v.iter().copied().fold(1.0, f64::min);
    let non_injective = delta == 0.0;
    let epsilon = if non_injective { 1.0 } else { (1.0 - delta * delta).max(0.0) };
    Ok(InjectivityReport { singular_values, delta_v, delta, epsilon, non_injective })
}

fn gaussian(rng: &mut impl Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `rows × cols` matrix with orthonormal columns, Haar distributed
/// (Gram–Schmidt of a complex Ginibre matrix; `cols ≤ rows`).
pub fn haar_isometry(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    assert!(cols <= rows);
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut x: Vec<C64> = (0..rows).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let ov: C64 = b.iter().zip(&x).map(|(bi, xi)| bi.conj() * xi).sum();
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi -= ov * bi;
                }
            }
        }
        let nrm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm > 1e-8 {
            basis.push(x.into_iter().map(|z| z / nrm).collect());
        }
    }
    Matrix::from_fn(rows, cols, |r, col| basis[col][r])
}

/// Random δ-injective PEPS with `d = D^Δ`.
pub fn generate_random_peps(g: &Graph, bond_dim: usize, seed: u64, epsilon_target: f64) -> Result<PepsNetwork> {
    let d = bond_dim.checked_pow(g.max_degree() as u32).ok_or_else(|| Error::Infeasible("D^Δ overflows".into()))?;
    generate_random_peps_with_phys(g, bond_dim, d, seed, epsilon_target)
}

/// Site tensors `V·Σ·U†` with Haar `U`, Haar isometry `V`, and a spectrum
/// pinned to `[√(1−ε), 1]` with uniform interior values.
pub fn generate_random_peps_with_phys(
    g: &Graph,
    bond_dim: usize,
    phys_dim: usize,
    seed: u64,
    epsilon_target: f64,
) -> Result<PepsNetwork> {
    if !(0.0..1.0).contains(&epsilon_target) {
        return Err(Error::Invalid(format!("epsilon target {epsilon_target} outside [0, 1)")));
    }
    let root = SplitRng::new(seed);
    let lambda_min = (1.0 - epsilon_target).sqrt();
    let mut tensors = Vec::with_capacity(g.vertex_count());
    for v in 0..g.vertex_count() {
        let k = g.degree(v);
        check_injectivity_dims(bond_dim, phys_dim, k, v)?;
        let n = bond_dim.pow(k as u32);
        let site = root.split(v as u64);
        let u = haar_isometry(n, n, &mut site.stream(0));
        let iso = haar_isometry(phys_dim, n, &mut site.stream(1));
        let mut spec_rng = site.stream(2);
        let sigma: Vec<f64> = (0..n)
            .map(|a| {
                if a == 0 {
                    1.0
                } else if a == n - 1 {
                    lambda_min
                } else {
                    spec_rng.random_range(lambda_min..=1.0)
                }
            })
            .collect();
        let m = Matrix::from_fn(phys_dim, n, |r, col| iso[(r, col)] * sigma[col]).mul(&u.adjoint());
        let mut shape = vec![phys_dim];
        shape.extend(std::iter::repeat_n(bond_dim, k));
        tensors.push(DenseTensor::new(shape, m.into_data())?);
    }
    PepsNetwork::new(g.clone(), bond_dim, phys_dim, tensors)
}

/// Seeded random Hermitian `d × d` operator with `‖O‖_∞ = 1`.
pub fn random_hermitian(d: usize, seed: u64) -> Matrix {
    let mut rng = SplitRng::new(seed).stream(7);
    let a = Matrix::from_fn(d, d, |_, _| gaussian(&mut rng)).hermitian_part();
    a.scale_real(1.0 / schatten_norm(&a, Schatten::Inf))
}

/// Result of [`perturb_site`].
#[derive(Clone, Debug)]
pub struct Perturbed {
    pub network: PepsNetwork,
    /// `(vertex, σ_max(T_v + E_v))`: the factor divided out to restore `λ_max = 1`.
    pub rescale: Vec<(usize, f64)>,
}

/// `T_v ← (T_v + E_v)/σ_max(T_v + E_v)` on `region` with `‖E_v‖_∞ = strength`.
pub fn perturb_site(p: &PepsNetwork, region: &[usize], strength: f64, seed: u64) -> Result<Perturbed> {
    if region.is_empty() {
        return Err(Error::Invalid("perturbation region is empty".into()));
    }
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::Invalid(format!("perturbation strength {strength} must be finite and nonnegative")));
    }
    let mut out = p.clone();
    let mut rescale = Vec::new();
    let root = SplitRng::new(seed);
    let mut sorted = region.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &v in &sorted {
        if v >= p.graph.vertex_count() {
            return Err(Error::Invalid(format!("vertex {v} out of range")));
        }
        if strength == 0.0 {
            rescale.push((v, 1.0));
            continue;
        }
        let m = p.site_matrix(v);
        let mut rng = root.split(v as u64).stream(3);
        let e = Matrix::from_fn(m.rows(), m.cols(), |_, _| gaussian(&mut rng));
        let e = e.scale_real(strength / schatten_norm(&e, Schatten::Inf));
        let t = m.add(&e);
        let top = svd(&t)?.s[0];
        let t = t.scale_real(1.0 / top);
        out.tensors[v] = DenseTensor::new(p.tensors[v].shape().to_vec(), t.into_data())?;
        rescale.push((v, top));
    }
    Ok(Perturbed { network: out, rescale })
}

/// The channel from all other virtual legs of `v` onto leg `n`:
/// `Φ(X) = Σ_a λ_a² K_a X K_a†`.
#[derive(Clone, Debug)]
pub struct VirtualSuperoperator {
    pub source: usize,
    pub out_leg: usize,
    pub kraus: Vec<Matrix>,
    pub weights: Vec<f64>,
    /// `D² × D^{2(k−1)}` matrix acting on row-major vectorized inputs.
    pub dense: Matrix,
    /// Injectivity of the underlying tensor (0 flags a kernel).
    pub delta: f64,
}

/// Multi-index with digit `j` inserted at leg `pos` among `k` legs.
#[inline]
pub fn insert_digit(other: usize, j: usize, pos: usize, k: usize, bond: usize) -> usize {
    let low_legs = k - 1 - pos;
    let low = bond.pow(low_legs as u32);
    let hi = other / low;
    let lo = other % low;
    (hi * bond + j) * low + lo
}

/// Dense form of `Φ_(v,n)` read directly off a double layer.
pub fn channel_matrix(g_v: &Matrix, pos: usize, k: usize, bond: usize) -> Matrix {
    let n_in = bond.pow(k as u32 - 1);
    Matrix::from_fn(bond * bond, n_in * n_in, |out, inp| {
        let (j, jp) = (out / bond, out % bond);
        let (i, ip) = (inp / n_in, inp % n_in);
        g_v[(insert_digit(i, j, pos, k, bond), insert_digit(ip, jp, pos, k, bond))]
    })
}

pub fn build_superoperator(p: &PepsNetwork, v: usize, n: usize) -> Result<VirtualSuperoperator> {
    let pos = p.graph.leg_of(v, n).ok_or_else(|| Error::Invalid(format!("{n} is not a neighbor of {v}")))?;
    let k = p.graph.degree(v);
    let bond = p.bond_dim;
    let f = svd(&p.site_matrix(v))?;
    let n_in = bond.pow(k as u32 - 1);
    let kraus: Vec<Matrix> = (0..f.s.len())
        .map(|a| Matrix::from_fn(bond, n_in, |j, i| f.v[(insert_digit(i, j, pos, k, bond), a)].conj()))
        .collect();
    let weights = f.s.iter().map(|s| s * s).collect();
    let top = f.s[0];
    let low = *f.s.last().unwrap() / top;
    Ok(VirtualSuperoperator {
        source: v,
        out_leg: n,
        kraus,
        weights,
        dense: channel_matrix(&p.double_layer(v), pos, k, bond),
        delta: if low <= 1e-14 { 0.0 } else { low },
    })
}

impl VirtualSuperoperator {
    pub fn out_dim(&self) -> usize {
        self.kraus[0].rows()
    }

    pub fn in_dim(&self) -> usize {
        self.kraus[0].cols()
    }

    /// `Φ(X)` via the dense form.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let d = self.out_dim();
        let vx = Matrix::from_vec(x.rows() * x.cols(), 1, x.data().to_vec()).unwrap();
        Matrix::from_vec(d, d, self.dense.mul(&vx).into_data()).unwrap()
    }

    /// `Φ(X)` via the Kraus sum.
    pub fn apply_kraus(&self, x: &Matrix) -> Matrix {
        let d = self.out_dim();
        let mut out = Matrix::zeros(d, d);
        for (k, w) in self.kraus.iter().zip(&self.weights) {
            out = out.add(&k.mul(x).mul(&k.adjoint()).scale_real(*w));
        }
        out
    }

    /// `ΔΦ(X) = Φ(X) − Tr(X)·1`, subtracting the analytically known
    /// depolarizer.
    pub fn apply_delta(&self, x: &Matrix) -> Matrix {
        let d = self.out_dim();
        self.apply(x).sub(&Matrix::identity(d).scale(x.trace()))
    }

    /// Maximum entry deviation of `Σ K†K − dim(out)·1` and `Σ KK† − dim(in)·1`.
    pub fn bistochastic_defects(&self) -> (f64, f64) {
        let (dout, din) = (self.out_dim(), self.in_dim());
        let mut left = Matrix::zeros(din, din);
        let mut right = Matrix::zeros(dout, dout);
        for k in &self.kraus {
            left = left.add(&k.adjoint().mul(k));
            right = right.add(&k.mul(&k.adjoint()));
        }
        (
            left.max_abs_diff(&Matrix::identity(din).scale_real(dout as f64)),
            right.max_abs_diff(&Matrix::identity(dout).scale_real(din as f64)),
        )
    }
}
