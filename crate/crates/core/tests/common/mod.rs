//! Independent reference implementations used as test oracles.
//!
//! Everything here is rebuilt from the model definition with nalgebra
//! matrices and Kronecker products, sharing no code with the library's
//! equation of motion.

#![allow(dead_code)]

use nalgebra::{Complex, SMatrix, SVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tcsim::model::{LossModel, SystemParams};
use tcsim::{Mat4, C64};

pub type M4 = SMatrix<C64, 4, 4>;
pub type M16 = SMatrix<C64, 16, 16>;
pub type V16 = SVector<C64, 16>;

pub fn c(re: f64) -> C64 {
    Complex::new(re, 0.0)
}

pub fn to_m4(m: &Mat4) -> M4 {
    M4::from_fn(|i, j| m[(i, j)])
}

pub fn from_m4(m: &M4) -> Mat4 {
    let mut out = Mat4::zeros();
    for i in 0..4 {
        for j in 0..4 {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

fn ket_bra(j: usize, k: usize) -> M4 {
    let mut m = M4::zeros();
    m[(j, k)] = c(1.0);
    m
}

/// H(ρ) straight from the model definition, drive phase φ on the upper
/// triangle.
pub fn hamiltonian(p: &SystemParams, rho: &M4, phase: f64) -> M4 {
    let s = match p.units {
        tcsim::UnitConvention::Ordinary => 2.0 * std::f64::consts::PI,
        tcsim::UnitConvention::Angular => 1.0,
    };
    let pops: Vec<f64> = (0..4).map(|i| rho[(i, i)].re).collect();
    let shift = p.delta_s * (pops[3] + pops[2] - pops[1] - pops[0]);
    let mut h = M4::zeros();
    h[(1, 1)] = c(s * p.delta2);
    h[(2, 2)] = c(s * (p.delta3 + shift));
    h[(3, 3)] = c(s * (p.delta4 + shift));
    let rot = Complex::from_polar(1.0, phase);
    let a = rot * (s * p.omega * p.t1);
    let b = rot * (s * p.omega * p.t2);
    for &(i, j, v) in &[(0, 2, a), (1, 3, a), (0, 3, b), (1, 2, b)] {
        h[(i, j)] = v;
        h[(j, i)] = v.conj();
    }
    h
}

/// (operator, rate) pairs: decay |j⟩⟨k| at γ(n+1) with its thermal partner
/// at γn, plus projector dephasing.
pub fn jump_operators(loss: &LossModel) -> Vec<(M4, f64)> {
    let t = &loss.thermal;
    let channels = [
        (0, 1, loss.gamma12, t.n12),
        (2, 3, loss.gamma34, t.n34),
        (0, 2, loss.gamma31, t.n31),
        (1, 2, loss.gamma32, t.n32),
        (0, 3, loss.gamma41, t.n41),
        (1, 3, loss.gamma42, t.n42),
    ];
    let mut ops = Vec::new();
    for (j, k, g, n) in channels {
        ops.push((ket_bra(j, k), g * (n + 1.0)));
        ops.push((ket_bra(k, j), g * n));
    }
    ops.push((ket_bra(1, 1), loss.gamma22));
    ops.push((ket_bra(2, 2), loss.gamma33));
    ops.push((ket_bra(3, 3), loss.gamma44));
    ops
}

fn kron(a: &M4, b: &M4) -> M16 {
    M16::from_fn(|r, col| a[(r / 4, col / 4)] * b[(r % 4, col % 4)])
}

/// Row-major superoperator of the equation of motion with H frozen at
/// `rho_frozen`: vec(AρB) = (A ⊗ Bᵀ) vec(ρ).
pub fn liouvillian(p: &SystemParams, loss: &LossModel, rho_frozen: &M4, phase: f64) -> M16 {
    let id = M4::identity();
    let h = hamiltonian(p, rho_frozen, phase);
    let mut l = (kron(&h, &id) - kron(&id, &h.transpose())) * Complex::new(0.0, -1.0);
    for (op, rate) in jump_operators(loss) {
        if rate == 0.0 {
            continue;
        }
        let ad = op.adjoint();
        let ada = ad * op;
        l += (kron(&op, &op.conjugate()) - kron(&ada, &id) * c(0.5) - kron(&id, &ada.transpose()) * c(0.5)) * c(rate);
    }
    l
}

pub fn vec_rm(m: &M4) -> V16 {
    V16::from_fn(|k, _| m[(k / 4, k % 4)])
}

pub fn unvec_rm(v: &V16) -> M4 {
    M4::from_fn(|i, j| v[4 * i + j])
}

/// Normalized null vector of L from its smallest singular value.
pub fn kernel_by_svd(l: &M16) -> M4 {
    let dl = nalgebra::DMatrix::from_fn(16, 16, |i, j| l[(i, j)]);
    let svd = dl.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let row = v_t.row(idx);
    let v = V16::from_fn(|k, _| row[k].conj());
    let m = unvec_rm(&v);
    let tr = m.trace();
    m / tr
}

/// Random full-rank density matrix AA†/Tr(AA†) with Gaussian A.
pub fn random_density(rng: &mut ChaCha8Rng) -> M4 {
    let a = M4::from_fn(|_, _| {
        Complex::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let m = a * a.adjoint();
    let tr = m.trace();
    m / tr
}

pub fn max_abs(m: &M4) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
