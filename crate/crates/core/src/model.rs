//! State, parameters and the right-hand side of the mean-field master equation.
//!
//! Basis order is |1⟩, |2⟩ (ground doublet), |3⟩, |4⟩ (excited doublet);
//! in code the levels are zero-based, so level |n⟩ lives at index n − 1.
//!
//! The Hamiltonian is H = H₀ + H_r + H_m with
//!
//! * H₀ = diag(0, δ₂, δ₃, δ₄),
//! * H_r the optical drive: Ωt₁ on |1⟩↔|3⟩ and |2⟩↔|4⟩, Ωt₂ on |1⟩↔|4⟩ and
//!   |2⟩↔|3⟩,
//! * H_m = Δ_s(ρ₄₄ + ρ₃₃ − ρ₂₂ − ρ₁₁) on both excited levels.
//!
//! H_m makes the equation of motion nonlinear in ρ. Dissipation is the sum of
//! nine Lindblad channels: two spin relaxations, four optical decays (each
//! with an optional thermal pumping term) and three pure dephasings.

use std::f64::consts::PI;

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat4::{Mat4, C64, DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("parameter `{name}` is invalid: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
}

/// How user-facing frequencies are interpreted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitConvention {
    /// Values are ordinary frequencies in Hz and are multiplied by 2π.
    #[default]
    Ordinary,
    /// Values are already angular frequencies in rad/s.
    Angular,
}

impl UnitConvention {
    pub fn to_angular(self) -> f64 {
        match self {
            UnitConvention::Ordinary => 2.0 * PI,
            UnitConvention::Angular => 1.0,
        }
    }
}

/// Coherent part of the model. Frequencies follow `units`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub delta2: f64,
    pub delta3: f64,
    pub delta4: f64,
    /// Drive amplitude Ω.
    pub omega: f64,
    pub t1: f64,
    pub t2: f64,
    /// Excitation-induced frequency shift Δ_s.
    pub delta_s: f64,
    #[serde(default)]
    pub units: UnitConvention,
}

impl SystemParams {
    /// The reference erbium parameter set: δ₂ = 0.05 MHz, δ₃ = −0.35 MHz,
    /// δ₄ = 0.4 MHz, Ω = 0.26 MHz, t₁ = 1.87, t₂ = 1.2, Δ_s = 12 MHz.
    pub fn baseline() -> Self {
        SystemParams {
            delta2: 0.05e6,
            delta3: -0.35e6,
            delta4: 0.4e6,
            omega: 0.26e6,
            t1: 1.87,
            t2: 1.2,
            delta_s: 12e6,
            units: UnitConvention::Angular,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("delta2", self.delta2),
            ("delta3", self.delta3),
            ("delta4", self.delta4),
            ("omega", self.omega),
            ("t1", self.t1),
            ("t2", self.t2),
            ("delta_s", self.delta_s),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(ModelError::NonFinite(name));
            }
        }
        if self.omega < 0.0 {
            return Err(invalid("omega", "must be >= 0"));
        }
        if self.t1 <= 0.0 {
            return Err(invalid("t1", "must be > 0"));
        }
        if self.t2 < 0.0 {
            return Err(invalid("t2", "must be >= 0"));
        }
        Ok(())
    }

    fn angular(&self) -> f64 {
        self.units.to_angular()
    }
}

fn invalid(name: &'static str, reason: &str) -> ModelError {
    ModelError::InvalidParameter {
        name,
        reason: reason.to_string(),
    }
}

/// Thermal photon numbers for the six transition channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermalOccupation {
    pub n12: f64,
    pub n34: f64,
    pub n31: f64,
    pub n32: f64,
    pub n41: f64,
    pub n42: f64,
}

/// Incoherent rates, all in 1/s regardless of the frequency convention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossModel {
    /// Spin relaxation |2⟩ → |1⟩.
    pub gamma12: f64,
    /// Spin relaxation |4⟩ → |3⟩.
    pub gamma34: f64,
    pub gamma31: f64,
    pub gamma32: f64,
    pub gamma41: f64,
    pub gamma42: f64,
    /// Pure dephasing of |2⟩, |3⟩, |4⟩.
    pub gamma22: f64,
    pub gamma33: f64,
    pub gamma44: f64,
    #[serde(default)]
    pub thermal: ThermalOccupation,
}

/// Loss section of a run: physical lifetimes, branched for the couplings of
/// the run, or explicit rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossSpec {
    Lifetimes {
        optical_lifetime: f64,
        spin_relaxation_time: f64,
        dephasing_rate: f64,
    },
    Explicit(LossModel),
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Lifetimes {
            optical_lifetime: 11e-3,
            spin_relaxation_time: 2.0,
            dephasing_rate: 1e3,
        }
    }
}

impl LossSpec {
    pub fn resolve(&self, params: &SystemParams) -> LossModel {
        match *self {
            LossSpec::Lifetimes {
                optical_lifetime,
                spin_relaxation_time,
                dephasing_rate,
            } => LossModel::from_lifetimes(
                optical_lifetime,
                spin_relaxation_time,
                dephasing_rate,
                params.t1,
                params.t2,
            ),
            LossSpec::Explicit(m) => m,
        }
    }
}

impl LossModel {
    /// Builds the rates from a single optical lifetime, a spin relaxation
    /// time and a common dephasing rate.
    ///
    /// Each excited level's total decay 1/T_opt is split between its two
    /// ground channels in proportion to the squared drive couplings: |3⟩
    /// couples to |1⟩ with t₁ and to |2⟩ with t₂, |4⟩ the other way round.
    pub fn from_lifetimes(
        optical_lifetime: f64,
        spin_relaxation_time: f64,
        dephasing_rate: f64,
        t1: f64,
        t2: f64,
    ) -> Self {
        let total = 1.0 / optical_lifetime;
        let norm = t1 * t1 + t2 * t2;
        let strong = total * t1 * t1 / norm;
        let weak = total * t2 * t2 / norm;
        let spin = 1.0 / spin_relaxation_time;
        LossModel {
            gamma12: spin,
            gamma34: spin,
            gamma31: strong,
            gamma32: weak,
            gamma41: weak,
            gamma42: strong,
            gamma22: dephasing_rate,
            gamma33: dephasing_rate,
            gamma44: dephasing_rate,
            thermal: ThermalOccupation::default(),
        }
    }

    /// Erbium at 4 K: 11 ms optical lifetime, 2 s spin relaxation, 1 kHz
    /// dephasing, branched for the given couplings.
    pub fn baseline(t1: f64, t2: f64) -> Self {
        Self::from_lifetimes(11e-3, 2.0, 1e3, t1, t2)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let t = &self.thermal;
        let fields = [
            ("gamma12", self.gamma12),
            ("gamma34", self.gamma34),
            ("gamma31", self.gamma31),
            ("gamma32", self.gamma32),
            ("gamma41", self.gamma41),
            ("gamma42", self.gamma42),
            ("gamma22", self.gamma22),
            ("gamma33", self.gamma33),
            ("gamma44", self.gamma44),
            ("n12", t.n12),
            ("n34", t.n34),
            ("n31", t.n31),
            ("n32", t.n32),
            ("n41", t.n41),
            ("n42", t.n42),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(ModelError::NonFinite(name));
            }
            if v < 0.0 {
                return Err(invalid(name, "must be >= 0"));
            }
        }
        Ok(())
    }

    /// Transition channels as (target level, source level, rate, n).
    fn transitions(&self) -> [(usize, usize, f64, f64); 6] {
        let t = &self.thermal;
        [
            (0, 1, self.gamma12, t.n12),
            (2, 3, self.gamma34, t.n34),
            (0, 2, self.gamma31, t.n31),
            (1, 2, self.gamma32, t.n32),
            (0, 3, self.gamma41, t.n41),
            (1, 3, self.gamma42, t.n42),
        ]
    }

    fn dephasings(&self) -> [(usize, f64); 3] {
        [(1, self.gamma22), (2, self.gamma33), (3, self.gamma44)]
    }

    /// Every collapse operator with its effective rate, thermal partners
    /// included. Zero-rate channels are skipped.
    pub fn collapse_operators(&self) -> Vec<(Mat4, f64)> {
        let mut ops = Vec::with_capacity(15);
        for (to, from, gamma, n) in self.transitions() {
            if gamma * (n + 1.0) != 0.0 {
                ops.push((Mat4::unit(to, from), gamma * (n + 1.0)));
            }
            if gamma * n != 0.0 {
                ops.push((Mat4::unit(from, to), gamma * n));
            }
        }
        for (level, gamma) in self.dephasings() {
            if gamma != 0.0 {
                ops.push((Mat4::unit(level, level), gamma));
            }
        }
        ops
    }
}

/// Single-ion density matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix(pub Mat4);

impl DensityMatrix {
    /// Pure basis state |n⟩ with n zero-based.
    pub fn pure(level: usize) -> Self {
        DensityMatrix(Mat4::unit(level, level))
    }

    /// ρ_nn = 1/4.
    pub fn equal_mixed() -> Self {
        DensityMatrix(Mat4::diag([0.25; DIM]))
    }

    /// ρ₁₁ = ρ₂₂ = 1/2: thermalized ground doublet with the laser off.
    pub fn ground_mixed() -> Self {
        DensityMatrix(Mat4::diag([0.5, 0.5, 0.0, 0.0]))
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    pub fn populations(&self) -> [f64; DIM] {
        std::array::from_fn(|i| self.0 .0[i][i].re)
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0 .0[i][j]
    }

    /// Checks Hermiticity, unit trace, diagonal range and positivity.
    pub fn validate(&self) -> Result<(), ModelError> {
        let m = &self.0;
        if !m.is_finite() {
            return Err(ModelError::InvalidState("non-finite element".into()));
        }
        let herm = m.hermiticity_error();
        if herm > 1e-12 {
            return Err(ModelError::InvalidState(format!(
                "not Hermitian (deviation {herm:e})"
            )));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(ModelError::InvalidState(format!("trace {tr} != 1")));
        }
        for (i, p) in self.populations().into_iter().enumerate() {
            if !(-1e-9..=1.0 + 1e-9).contains(&p) {
                return Err(ModelError::InvalidState(format!(
                    "population {} = {p} outside [0, 1]",
                    i + 1
                )));
            }
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -1e-9 {
            return Err(ModelError::InvalidState(format!(
                "not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = nalgebra::Matrix4::from_fn(|i, j| self.0 .0[i][j]);
        // Symmetrize so the Hermitian solver sees an exactly Hermitian input.
        let h = (h + h.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().min()
    }

    /// (ρ + ρ†)/2 followed by trace renormalization.
    pub fn hygiene(&self) -> DensityMatrix {
        let m = (self.0 + self.0.dagger()) * 0.5;
        let tr = m.trace().re;
        DensityMatrix(m * (1.0 / tr))
    }
}

/// Hamiltonian in rad/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HamiltonianMatrix(pub Mat4);

/// Δ_s·(ρ₄₄ + ρ₃₃ − ρ₂₂ − ρ₁₁), returned in the units of `delta_s`.
pub fn mean_field_shift(rho: &DensityMatrix, delta_s: f64) -> f64 {
    let p = rho.populations();
    delta_s * (p[3] + p[2] - p[1] - p[0])
}

/// Builds H(ρ) with the drive at zero phase.
pub fn build_hamiltonian(
    params: &SystemParams,
    rho: &DensityMatrix,
) -> Result<HamiltonianMatrix, ModelError> {
    params.validate()?;
    Ok(HamiltonianMatrix(
        MasterEquation::coherent(params).hamiltonian(rho, 0.0),
    ))
}

/// Sum of all Lindblad channels applied to ρ.
pub fn dissipator(rho: &DensityMatrix, loss: &LossModel) -> Mat4 {
    let mut out = Mat4::zeros();
    add_dissipator(&mut out, &rho.0, loss);
    out
}

/// −i[H(ρ), ρ] + D(ρ) with the drive couplings rotated by `drive_phase`.
pub fn rhs(
    rho: &DensityMatrix,
    params: &SystemParams,
    loss: &LossModel,
    drive_phase: f64,
) -> Mat4 {
    MasterEquation::new(params, loss).rhs(&rho.0, drive_phase)
}

/// Precomputed angular-frequency form of the equation of motion.
///
/// This is what the integrator evaluates at every RK4 stage.
#[derive(Clone, Copy, Debug)]
pub struct MasterEquation {
    detunings: [f64; DIM],
    strong: f64,
    weak: f64,
    delta_s: f64,
    loss: LossModel,
}

impl MasterEquation {
    pub fn new(params: &SystemParams, loss: &LossModel) -> Self {
        MasterEquation {
            loss: *loss,
            ..Self::coherent(params)
        }
    }

    fn coherent(params: &SystemParams) -> Self {
        let w = params.angular();
        MasterEquation {
            detunings: [0.0, params.delta2 * w, params.delta3 * w, params.delta4 * w],
            strong: params.omega * params.t1 * w,
            weak: params.omega * params.t2 * w,
            delta_s: params.delta_s * w,
            loss: LossModel::from_lifetimes(f64::INFINITY, f64::INFINITY, 0.0, 1.0, 1.0),
        }
    }

    /// H(ρ) in rad/s.
    pub fn hamiltonian(&self, rho: &DensityMatrix, drive_phase: f64) -> Mat4 {
        let shift = mean_field_shift(rho, self.delta_s);
        self.hamiltonian_with_shift(shift, drive_phase)
    }

    pub(crate) fn hamiltonian_with_shift(&self, shift: f64, drive_phase: f64) -> Mat4 {
        let mut h = Mat4::diag([
            self.detunings[0],
            self.detunings[1],
            self.detunings[2] + shift,
            self.detunings[3] + shift,
        ]);
        let rot = C64::from_polar(1.0, drive_phase);
        let strong = rot * self.strong;
        let weak = rot * self.weak;
        for (g, e, c) in [(0, 2, strong), (1, 3, strong), (0, 3, weak), (1, 2, weak)] {
            h[(g, e)] = c;
            h[(e, g)] = c.conj();
        }
        h
    }

    pub fn loss(&self) -> &LossModel {
        &self.loss
    }

    pub fn rhs(&self, rho: &Mat4, drive_phase: f64) -> Mat4 {
        let shift = {
            let p = |i: usize| rho.0[i][i].re;
            self.delta_s * (p(3) + p(2) - p(1) - p(0))
        };
        let h = self.hamiltonian_with_shift(shift, drive_phase);
        let mut out = h.commutator(rho).scale(C64::new(0.0, -1.0));
        add_dissipator(&mut out, rho, &self.loss);
        out
    }

    /// Largest |H| element at state ρ, used by the step-size guard.
    pub fn max_hamiltonian_element(&self, rho: &DensityMatrix) -> f64 {
        self.hamiltonian(rho, 0.0).max_abs()
    }
}

/// Adds γ(LρL† − ½{L†L, ρ}) for L = |to⟩⟨from| into `out`.
fn add_jump(out: &mut Mat4, rho: &Mat4, to: usize, from: usize, rate: f64) {
    if rate == 0.0 {
        return;
    }
    out.0[to][to] += rho.0[from][from] * rate;
    let half = 0.5 * rate;
    for a in 0..DIM {
        out.0[from][a] -= rho.0[from][a] * half;
        out.0[a][from] -= rho.0[a][from] * half;
    }
}

fn add_dissipator(out: &mut Mat4, rho: &Mat4, loss: &LossModel) {
    for (to, from, gamma, n) in loss.transitions() {
        add_jump(out, rho, to, from, gamma * (n + 1.0));
        add_jump(out, rho, from, to, gamma * n);
    }
    for (level, gamma) in loss.dephasings() {
        // Projector channel: coherences in row and column `level` decay at γ/2.
        if gamma == 0.0 {
            continue;
        }
        for a in 0..DIM {
            if a != level {
                out.0[level][a] -= rho.0[level][a] * (0.5 * gamma);
                out.0[a][level] -= rho.0[a][level] * (0.5 * gamma);
            }
        }
    }
}

pub type Superoperator = SMatrix<C64, 16, 16>;

/// Linear superoperator M with vec(rhs(ρ)) = M·vec(ρ) when the mean-field
/// shift is frozen at its value for `rho_frozen`. Row-major vectorization.
///
/// Assembled from Kronecker products of the Hamiltonian and the collapse
/// operators, independently of the closed-form dissipator used by [`rhs`].
pub fn liouvillian_matrix(
    params: &SystemParams,
    loss: &LossModel,
    rho_frozen: &DensityMatrix,
) -> Superoperator {
    let h = MasterEquation::coherent(params).hamiltonian(rho_frozen, 0.0);
    liouvillian_from_hamiltonian(&h, loss)
}

pub(crate) fn liouvillian_from_hamiltonian(h: &Mat4, loss: &LossModel) -> Superoperator {
    let id = Mat4::identity();
    let minus_i = C64::new(0.0, -1.0);
    let mut m = (kron(h, &id) - kron(&id, &transpose(h))) * minus_i;
    for (l, rate) in loss.collapse_operators() {
        let ldl = l.dagger().matmul(&l);
        let conj_l = conj(&l);
        let term = kron(&l, &conj_l)
            - (kron(&ldl, &id) + kron(&id, &transpose(&ldl))) * C64::new(0.5, 0.0);
        m += term * C64::new(rate, 0.0);
    }
    m
}

/// A ⊗ B in the convention vec(AρB) = (A ⊗ Bᵀ)·vec(ρ) for row-major vec.
fn kron(a: &Mat4, b: &Mat4) -> Superoperator {
    Superoperator::from_fn(|r, c| a.0[r / DIM][c / DIM] * b.0[r % DIM][c % DIM])
}

fn transpose(a: &Mat4) -> Mat4 {
    let mut t = Mat4::zeros();
    for i in 0..DIM {
        for j in 0..DIM {
            t.0[i][j] = a.0[j][i];
        }
    }
    t
}

fn conj(a: &Mat4) -> Mat4 {
    transpose(&a.dagger())
}

/// vec(ρ) as a nalgebra column.
pub fn vectorize(rho: &Mat4) -> nalgebra::SVector<C64, 16> {
    nalgebra::SVector::<C64, 16>::from_column_slice(&rho.to_vec16())
}

pub fn unvectorize(v: &nalgebra::SVector<C64, 16>) -> Mat4 {
    Mat4::from_vec16(v.as_slice())
}

/// Trace-normalized kernel vector of M.
///
/// Trace preservation makes the four population rows of M linearly
/// dependent, so the ρ₁₁ row is replaced by the trace functional and the
/// resulting square system solved by LU. Returns `None` when the kernel is
/// degenerate (more than one stationary state).
pub fn kernel_state(m: &Superoperator) -> Option<Mat4> {
    let mut a = *m;
    let mut b = nalgebra::SVector::<C64, 16>::zeros();
    for c in 0..16 {
        a[(0, c)] = C64::new(0.0, 0.0);
    }
    for i in 0..DIM {
        a[(0, DIM * i + i)] = C64::new(1.0, 0.0);
    }
    b[0] = C64::new(1.0, 0.0);
    let x = a.lu().solve(&b)?;
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return None;
    }
    Some(unvectorize(&x))
}
