use num_complex::Complex64;
use respond_core::problem::{
    ForcingSpectrum, FrequencyVector, Mode, NonlinearityTaylor, ProblemSpec,
};

pub fn mode(components: &[i32]) -> Mode {
    Mode::new(components.to_vec())
}

fn cosine_modes(dim: usize) -> Vec<(Mode, Complex64)> {
    let half = Complex64::new(0.5, 0.0);
    let mut modes = Vec::new();
    for axis in 0..dim {
        for sign in [1, -1] {
            let mut nu = vec![0i32; dim];
            nu[axis] = sign;
            modes.push((Mode::new(nu), half));
        }
    }
    modes
}

/// Periodic example: omega = 1, f = cos t, g(x) = x + x^2.
pub fn spec_d1() -> ProblemSpec {
    ProblemSpec::new(
        FrequencyVector::new(vec![1.0]).unwrap(),
        ForcingSpectrum::new(1, cosine_modes(1), 0.0, 1.0).unwrap(),
        NonlinearityTaylor::new(0.0, vec![0.0, 1.0, 1.0]).unwrap(),
    )
    .unwrap()
}

/// Quasi-periodic example: omega = (1, golden mean), f = cos psi1 + cos psi2,
/// g(x) = x + x^2.
pub fn spec_d2() -> ProblemSpec {
    ProblemSpec::new(
        FrequencyVector::new(vec![1.0, 0.6180339887]).unwrap(),
        ForcingSpectrum::new(2, cosine_modes(2), 0.0, 1.0).unwrap(),
        NonlinearityTaylor::new(0.0, vec![0.0, 1.0, 1.0]).unwrap(),
    )
    .unwrap()
}
