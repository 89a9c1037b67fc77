//! Initial-design generators.

mod sobol;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::ParameterSpace;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub use sobol::{SobolSequence, MAX_DIM as SOBOL_MAX_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Slhc,
    Lhc,
    Mc,
    Sobol,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slhc" => Ok(Scheme::Slhc),
            "lhc" => Ok(Scheme::Lhc),
            "mc" => Ok(Scheme::Mc),
            "sobol" => Ok(Scheme::Sobol),
            other => Err(Error::InvalidConfig(format!(
                "unknown sampler `{other}` (expected slhc, lhc, mc or sobol)"
            ))),
        }
    }
}

/// `N × n` design in parameter units.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub points: Vec<Vec<f64>>,
    pub scheme: Scheme,
}

pub fn sample(space: &ParameterSpace, count: usize, scheme: Scheme, rng: &RandomStream) -> Result<DesignMatrix> {
    match scheme {
        Scheme::Slhc => sample_slhc(space, count, rng),
        Scheme::Lhc => sample_lhc(space, count, rng),
        Scheme::Mc => sample_mc(space, count, rng),
        Scheme::Sobol => sample_sobol(space, count, rng),
    }
}

fn check_count(count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::InvalidSampleCount {
            count,
            reason: "at least one sample is required".into(),
        });
    }
    Ok(())
}

fn to_space(space: &ParameterSpace, unit: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    unit.into_iter()
        .map(|u| {
            let mut x = space.denormalize(&u);
            space.clip(&mut x);
            x
        })
        .collect()
}

/// Symmetric Latin hypercube: stratified in every projection, with points in
/// center-mirrored pairs. `count` must be even.
pub fn sample_slhc(space: &ParameterSpace, count: usize, stream: &RandomStream) -> Result<DesignMatrix> {
    if count < 2 || count % 2 == 1 {
        return Err(Error::InvalidSampleCount {
            count,
            reason: format!(
                "symmetric Latin hypercube needs an even count >= 2; try {}",
                (count + 1).max(2)
            ),
        });
    }
    let n = space.dim();
    let half = count / 2;
    let mut rng = stream.rng();
    let mut unit = vec![vec![0.0; n]; count];
    let strata = count as f64;
    for j in 0..n {
        let mut perm: Vec<usize> = (0..half).collect();
        perm.shuffle(&mut rng);
        for (i, &s) in perm.iter().enumerate() {
            let stratum = if rng.random::<bool>() { s } else { count - 1 - s };
            let jitter: f64 = rng.random();
            unit[i][j] = (stratum as f64 + jitter) / strata;
            // mirrored stratum and mirrored jitter: the pair sums to exactly 1
            unit[i + half][j] = ((count - 1 - stratum) as f64 + (1.0 - jitter)) / strata;
        }
    }
    let points = unit
        .into_iter()
        .map(|u| {
            (0..n)
                .map(|j| {
                    let lo = space.lower()[j];
                    let hi = space.upper()[j];
                    (lo + u[j] * (hi - lo)).clamp(lo, hi)
                })
                .collect()
        })
        .collect();
    Ok(DesignMatrix {
        points,
        scheme: Scheme::Slhc,
    })
}

pub fn sample_lhc(space: &ParameterSpace, count: usize, stream: &RandomStream) -> Result<DesignMatrix> {
    check_count(count)?;
    let n = space.dim();
    let mut rng = stream.rng();
    let mut unit = vec![vec![0.0; n]; count];
    for j in 0..n {
        let mut perm: Vec<usize> = (0..count).collect();
        perm.shuffle(&mut rng);
        for (i, &s) in perm.iter().enumerate() {
            let jitter: f64 = rng.random();
            unit[i][j] = (s as f64 + jitter) / count as f64;
        }
    }
    Ok(DesignMatrix {
        points: to_space(space, unit),
        scheme: Scheme::Lhc,
    })
}

pub fn sample_mc(space: &ParameterSpace, count: usize, stream: &RandomStream) -> Result<DesignMatrix> {
    check_count(count)?;
    let mut rng = stream.rng();
    let unit = (0..count)
        .map(|_| (0..space.dim()).map(|_| rng.random::<f64>()).collect())
        .collect();
    Ok(DesignMatrix {
        points: to_space(space, unit),
        scheme: Scheme::Mc,
    })
}

/// First `count` Sobol points; spaces wider than the direction table fall back
/// to a Latin hypercube.
pub fn sample_sobol(space: &ParameterSpace, count: usize, stream: &RandomStream) -> Result<DesignMatrix> {
    check_count(count)?;
    match SobolSequence::new(space.dim()) {
        Some(seq) => Ok(DesignMatrix {
            points: to_space(space, seq.points(count)),
            scheme: Scheme::Sobol,
        }),
        None => {
            log::warn!(
                "Sobol table covers {} dimensions, got {}; using Latin hypercube",
                SOBOL_MAX_DIM,
                space.dim()
            );
            sample_lhc(space, count, stream)
        }
    }
}
