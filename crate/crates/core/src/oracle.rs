//! Exact steady state of the driven atom–cavity master equation in a
//! truncated Fock basis.
//!
//! The Hamiltonian in the probe frame (ħ = 1) is
//!
//! H = −Δc a†a − Δa σ†σ + g (a†σ + σ†a) + iη (a† − a)
//!
//! with collapse operators √(2κ) a and √(2γ) σ. The drive phase is chosen so
//! that the empty driven cavity has ⟨a⟩ = η/(κ − iΔc), matching the
//! semiclassical amplitudes used elsewhere in the crate.
//!
//! Basis ordering: index = s·(n_max + 1) + n with s ∈ {g, e} and n the photon number.
//! The density matrix is vectorized column-major, so vec(AρB) = (Bᵀ ⊗ A) vec(ρ).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

type CMat = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub n_max: usize,
    pub g: f64,
    pub delta_c: f64,
    pub delta_a_eff: f64,
    pub eta: f64,
    pub gamma: f64,
    pub kappa: f64,
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(Error::invalid("n_max", "photon truncation must be >= 1"));
        }
        if self.n_max > 8 {
            return Err(Error::invalid("n_max", "dense Liouvillian limited to n_max <= 8"));
        }
        if !(self.gamma > 0.0 && self.kappa > 0.0) {
            return Err(Error::invalid("gamma/kappa", "decay rates must be positive"));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::invalid("eta", "drive amplitude must be >= 0"));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        2 * (self.n_max + 1)
    }
}

/// Density matrix over the atom ⊗ Fock basis.
#[derive(Debug, Clone)]
pub struct SteadyDensityMatrix {
    pub n_max: usize,
    pub rho: CMat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub mean_a: Complex64,
    pub mean_sigma: Complex64,
    pub photon_number: f64,
    pub excitation: f64,
    /// Re⟨a†σ⟩.
    pub interaction_real: f64,
}

struct Operators {
    a: CMat,
    sigma: CMat,
    identity: CMat,
}

fn operators(n_max: usize) -> Operators {
    let nf = n_max + 1;
    let dim = 2 * nf;
    let mut a = CMat::zeros(dim, dim);
    let mut sigma = CMat::zeros(dim, dim);
    for s in 0..2 {
        for n in 1..nf {
            a[(s * nf + n - 1, s * nf + n)] = Complex64::new((n as f64).sqrt(), 0.0);
        }
    }
    for n in 0..nf {
        // σ = |g⟩⟨e| ⊗ 1
        sigma[(n, nf + n)] = ONE;
    }
    Operators { a, sigma, identity: CMat::identity(dim, dim) }
}

fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

fn hamiltonian(cfg: &OracleConfig, ops: &Operators) -> CMat {
    let ad = ops.a.adjoint();
    let sd = ops.sigma.adjoint();
    let c = |x: f64| Complex64::new(x, 0.0);
    (&ad * &ops.a) * c(-cfg.delta_c) + (&sd * &ops.sigma) * c(-cfg.delta_a_eff)
        + (&ad * &ops.sigma + &sd * &ops.a) * c(cfg.g)
        + (&ad - &ops.a) * (I * cfg.eta)
}

/// Column-major Liouvillian superoperator.
pub fn liouvillian(cfg: &OracleConfig) -> CMat {
    let ops = operators(cfg.n_max);
    let h = hamiltonian(cfg, &ops);
    let id = &ops.identity;
    let mut l = (kron(id, &h) - kron(&h.transpose(), id)) * (-I);
    for (op, rate) in [(&ops.a, 2.0 * cfg.kappa), (&ops.sigma, 2.0 * cfg.gamma)] {
        let ldl = op.adjoint() * op;
        let jump = kron(&op.map(|z| z.conj()), op);
        let anti = kron(id, &ldl) + kron(&ldl.transpose(), id);
        l += (jump - anti * Complex64::new(0.5, 0.0)) * Complex64::new(rate, 0.0);
    }
    l
}

/// Unique trace-one null vector of the Liouvillian.
pub fn steady_state(cfg: &OracleConfig) -> Result<SteadyDensityMatrix> {
    cfg.validate()?;
    let dim = cfg.dimension();
    let l = liouvillian(cfg);
    let mut m = l.clone();
    for j in 0..dim * dim {
        m[(0, j)] = ZERO;
    }
    for i in 0..dim {
        m[(0, i * dim + i)] = ONE;
    }
    let mut rhs = nalgebra::DVector::<Complex64>::zeros(dim * dim);
    rhs[0] = ONE;
    let lu = m.lu();
    let v = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("trace-constrained Liouvillian is singular".into()))?;
    // A second independent null vector would leave the bordered system
    // ill-posed; the residual of the original equation exposes that.
    let residual = (&l * &v).norm();
    let scale = l.norm() * v.norm();
    if !(residual <= 1e-9 * scale.max(1.0)) || v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularSystem(format!("null-space residual {residual:.3e} too large")));
    }
    let rho = CMat::from_column_slice(dim, dim, v.as_slice());
    // Symmetrize away rounding noise; the invariants are checked on demand.
    let rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(SteadyDensityMatrix { n_max: cfg.n_max, rho })
}

impl SteadyDensityMatrix {
    pub fn dimension(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.rho - self.rho.adjoint()).camax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Hermitian to 1e-10, unit trace to 1e-10, eigenvalues ≥ −1e-8.
    pub fn check_invariants(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > 1e-10 {
            return Err(Error::SingularSystem(format!("density matrix not Hermitian ({herm:.3e})")));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > 1e-10 {
            return Err(Error::SingularSystem(format!("trace {tr} != 1")));
        }
        let lam = self.min_eigenvalue();
        if lam < -1e-8 {
            return Err(Error::SingularSystem(format!("negative eigenvalue {lam:.3e}")));
        }
        Ok(())
    }

    /// Vacuum ⊗ ground state.
    pub fn vacuum(n_max: usize) -> Self {
        let dim = 2 * (n_max + 1);
        let mut rho = CMat::zeros(dim, dim);
        rho[(0, 0)] = ONE;
        SteadyDensityMatrix { n_max, rho }
    }
}

fn expect(rho: &CMat, op: &CMat) -> Complex64 {
    (rho * op).trace()
}

pub fn observables(state: &SteadyDensityMatrix) -> Observables {
    let ops = operators(state.n_max);
    let ad = ops.a.adjoint();
    let sd = ops.sigma.adjoint();
    let rho = &state.rho;
    Observables {
        mean_a: expect(rho, &ops.a),
        mean_sigma: expect(rho, &ops.sigma),
        photon_number: expect(rho, &(&ad * &ops.a)).re,
        excitation: expect(rho, &(&sd * &ops.sigma)).re,
        interaction_real: expect(rho, &(&ad * &ops.sigma)).re,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{steady_field, PhysicalParams};
    use crate::units::mhz_to_angular;
    use approx::assert_relative_eq;

    fn cfg(g: f64, dc: f64, da: f64, eta: f64, n_max: usize) -> OracleConfig {
        let p = PhysicalParams::default();
        OracleConfig { n_max, g, delta_c: dc, delta_a_eff: da, eta, gamma: p.gamma, kappa: p.kappa }
    }

    #[test]
    fn empty_driven_cavity_is_coherent() {
        let p = PhysicalParams::default();
        let eta = p.kappa / 10.0;
        let s = steady_state(&cfg(0.0, 0.0, 0.0, eta, 4)).unwrap();
        s.check_invariants().unwrap();
        let o = observables(&s);
        assert!((o.photon_number - 0.01).abs() < 1e-6);
        let dc = mhz_to_angular(0.7);
        let s = steady_state(&cfg(0.0, dc, 0.0, eta, 4)).unwrap();
        let o = observables(&s);
        let expected = eta / Complex64::new(p.kappa, -dc);
        assert!((o.mean_a - expected).norm() < 1e-5 * expected.norm());
        assert!(o.mean_sigma.norm() < 1e-14);
    }

    #[test]
    fn undriven_state_is_vacuum() {
        let p = PhysicalParams::default();
        let s = steady_state(&cfg(p.g0, 0.3e8, -0.2e8, 0.0, 3)).unwrap();
        let vac = SteadyDensityMatrix::vacuum(3);
        assert!((&s.rho - &vac.rho).camax() < 1e-12);
        let o = observables(&vac);
        assert_eq!(o.photon_number, 0.0);
        assert_eq!(o.excitation, 0.0);
        assert_eq!(o.mean_a, ZERO);
        assert_eq!(o.interaction_real, 0.0);
    }

    #[test]
    fn pinned_antinode_matches_linear_model() {
        let p = PhysicalParams::default();
        let eta = p.kappa / 10.0;
        let s = steady_state(&cfg(p.g0, 0.0, 0.0, eta, 3)).unwrap();
        s.check_invariants().unwrap();
        let o = observables(&s);
        let lin = steady_field(p.g0, 0.0, 0.0, eta, &p);
        let t_oracle = o.mean_a.norm_sqr() / (eta / p.kappa).powi(2);
        assert_relative_eq!(t_oracle, 2.6e-4, max_relative = 0.05);
        assert_relative_eq!(t_oracle, lin.a.norm_sqr() / (eta / p.kappa).powi(2), max_relative = 1e-3);
    }

    #[test]
    fn empty_cavity_linewidth_is_twice_kappa() {
        // |a|² vs Δc is a Lorentzian whose FWHM equals 2κ in angular units.
        let p = PhysicalParams::default();
        let eta = p.kappa / 10.0;
        let peak = observables(&steady_state(&cfg(0.0, 0.0, 0.0, eta, 3)).unwrap()).photon_number;
        let half = observables(&steady_state(&cfg(0.0, p.kappa, 0.0, eta, 3)).unwrap()).photon_number;
        assert_relative_eq!(half / peak, 0.5, max_relative = 1e-6);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(steady_state(&cfg(1.0, 0.0, 0.0, 1.0, 0)).is_err());
        assert!(steady_state(&cfg(1.0, 0.0, 0.0, -1.0, 2)).is_err());
    }

    #[test]
    fn liouvillian_preserves_trace() {
        // Column sums over the diagonal rows vanish: d/dt Tr ρ = 0.
        let p = PhysicalParams::default();
        let c = cfg(p.g0, 1e7, -2e7, 1e6, 2);
        let l = liouvillian(&c);
        let dim = c.dimension();
        for j in 0..dim * dim {
            let mut s = ZERO;
            for i in 0..dim {
                s += l[(i * dim + i, j)];
            }
            assert!(s.norm() < 1e-6, "column {j}: {s}");
        }
    }
}
