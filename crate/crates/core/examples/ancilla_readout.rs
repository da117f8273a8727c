//! Reading <x> of the motional mode through an ancilla qubit coupled by
//! sigma_x (a + a^dagger), compared with the direct expectation value.
//!
//! `cargo run --release --example ancilla_readout`

use nalgebra::DVector;
use num_complex::Complex64;
use rabi_ccd::fock::{displacement_matrix, Pauli, QuantumState};
use rabi_ccd::observables::{ancilla_position_readout, default_probe_times, position_expectation};

fn main() -> rabi_ccd::Result<()> {
    let n = 30;
    for alpha in [Complex64::new(0.25, 0.0), Complex64::new(0.5, 0.3), Complex64::new(-1.0, 0.5)] {
        let vac = DVector::from_fn(n, |i, _| Complex64::new(if i == 0 { 1.0 } else { 0.0 }, 0.0));
        let psi = QuantumState::from_parts(Pauli::Z.eigenvector(true), &(displacement_matrix(alpha, n)? * vac));
        let omega = 1e4;
        let est = ancilla_position_readout(&psi, omega, &default_probe_times(&psi, omega))?;
        println!("alpha = {alpha:.2}: <x> = {:.5}, ancilla estimate {est:.5}", position_expectation(&psi));
    }
    Ok(())
}
