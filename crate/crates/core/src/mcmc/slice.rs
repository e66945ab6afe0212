use super::kernel::MarkovKernel;
use super::{check_dim, SharedTarget, StateVector};
use crate::rng::RngStream;
use crate::{Error, Result};

pub const DEFAULT_SLICE_WIDTH: f64 = 1.0;
pub const MAX_EXPANSIONS: usize = 1000;
const MAX_SHRINKS: usize = 10_000;

/// Coordinate-wise slice sampler with stepping-out and shrinkage.
pub struct SliceKernel {
    target: SharedTarget,
    width: f64,
}

pub fn slice_kernel(target: SharedTarget, width: f64) -> Result<SliceKernel> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::InvalidArgument(format!("slice width must be positive, got {width}")));
    }
    Ok(SliceKernel { target, width })
}

impl SliceKernel {
    pub fn width(&self) -> f64 {
        self.width
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        let v = self.target.log_density(x);
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::InvalidDensity(format!("slice sampler evaluated log density {v}")));
        }
        Ok(v)
    }
}

impl MarkovKernel for SliceKernel {
    fn step(&self, x: &StateVector, rng: &mut RngStream) -> Result<StateVector> {
        check_dim(self.target.dim(), x.dim())?;
        let mut cur = x.clone();
        let mut lp = self.eval(&cur)?;
        if lp == f64::NEG_INFINITY {
            return Err(Error::Slice("current state has zero density".into()));
        }
        for i in 0..cur.dim() {
            let x0 = cur[i];
            let level = lp + rng.uniform_open().ln();

            let mut left = x0 - self.width * rng.uniform();
            let mut right = left + self.width;
            let mut expansions = 0;
            loop {
                cur[i] = left;
                if self.eval(&cur)? <= level {
                    break;
                }
                expansions += 1;
                if expansions > MAX_EXPANSIONS {
                    return Err(Error::Slice(format!("no bracket after {MAX_EXPANSIONS} expansions on coordinate {i}")));
                }
                left -= self.width;
            }
            loop {
                cur[i] = right;
                if self.eval(&cur)? <= level {
                    break;
                }
                expansions += 1;
                if expansions > MAX_EXPANSIONS {
                    return Err(Error::Slice(format!("no bracket after {MAX_EXPANSIONS} expansions on coordinate {i}")));
                }
                right += self.width;
            }

            let mut accepted = false;
            for _ in 0..MAX_SHRINKS {
                let x1 = left + rng.uniform() * (right - left);
                cur[i] = x1;
                let lp1 = self.eval(&cur)?;
                if lp1 > level {
                    lp = lp1;
                    accepted = true;
                    break;
                }
                if x1 < x0 {
                    left = x1;
                } else {
                    right = x1;
                }
            }
            if !accepted {
                return Err(Error::Slice(format!("shrinkage did not terminate on coordinate {i}")));
            }
        }
        Ok(cur)
    }

    fn target(&self) -> &SharedTarget {
        &self.target
    }
}
