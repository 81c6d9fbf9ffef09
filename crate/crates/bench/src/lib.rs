//! Fixtures shared by the benchmarks.

use biloop_core::{make_hyper_representation, BilevelOracle, Coupling, HyperRepresentation, HyperRepresentationDims, QuadraticBilevel, RandomQuadratic};

/// A slow-eigenspace quadratic with `p = 4`, `q = 32`.
pub fn quadratic(kappa: f64) -> QuadraticBilevel {
    RandomQuadratic::new(4, 32, kappa, 11)
        .with_coupling(Coupling::SlowEigenspace)
        .generate()
        .expect("fixed parameters are valid")
}

/// The default hyper-representation instance.
pub fn hyper_representation() -> HyperRepresentation {
    make_hyper_representation(&HyperRepresentationDims::default(), 1.0, 3)
        .expect("fixed parameters are valid")
}

/// `1/L` for the given problem.
pub fn unit_step<O: BilevelOracle + ?Sized>(oracle: &O) -> f64 {
    1.0 / oracle.constants().l
}
