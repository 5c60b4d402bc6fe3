use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::rng::RngStream;

/// `count` directions drawn uniformly on the unit sphere in `d` dimensions,
/// returned as the rows of a `count × d` matrix.
///
/// Each direction is a normalized vector of independent standard normals; the
/// (probability zero) all-zero draw is redrawn.
pub fn sample_unit_directions(d: usize, count: usize, stream: &RngStream) -> Result<DataMatrix> {
    if d == 0 || count == 0 {
        return Err(Error::InvalidArgument(format!(
            "need d >= 1 and K >= 1, got d={d}, K={count}"
        )));
    }
    let mut rng = stream.rng();
    let mut values = Vec::with_capacity(d * count);
    let mut buf = vec![0.0; d];
    for _ in 0..count {
        loop {
            for v in buf.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                values.extend(buf.iter().map(|v| v / norm));
                break;
            }
        }
    }
    Ok(DataMatrix::from_parts(count, d, values))
}
