//! Default geometry shared by unit tests.

use crate::perturbation::{BumpProfile, PerturbedMap};
use crate::torus::{build_heteroclinic_frame, HeteroclinicFrame, ToralAutomorphism, TorusPoint};

pub(crate) fn default_setup(t: f64) -> (PerturbedMap, HeteroclinicFrame) {
    let lin = ToralAutomorphism::new([[2, 3], [3, 5]], 5).unwrap();
    let frame =
        build_heteroclinic_frame(&lin, TorusPoint::new(0.0, 0.0, 5), TorusPoint::new(1.0, 3.0, 5), 50.0).unwrap();
    let map = PerturbedMap::new(lin, frame.r_point, BumpProfile::quadratic(0.25).unwrap(), t).unwrap();
    (map, frame)
}
