//! Analytic 2-D Gaussian mixtures: closed-form density and score field.
//!
//! This is the demonstrator for why a bare score-norm indicator misses
//! anomalies sitting in minor modes of the learned density: the gradient of
//! log-density vanishes at every stationary point, including low-likelihood
//! local maxima. With an explicit mixture both quantities are exact, so the
//! blindness can be exhibited to machine precision.

use crate::error::{Error, Result};
use crate::require;

const TAU: f64 = std::f64::consts::TAU;

#[derive(Clone, Copy, Debug)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    /// Isotropic: covariance is `variance * I`.
    pub variance: f64,
}

#[derive(Clone, Debug)]
pub struct GaussianMixture2D {
    components: Vec<MixtureComponent>,
}

impl GaussianMixture2D {
    /// Weights must be positive and are normalized to sum to 1.
    pub fn new(mut components: Vec<MixtureComponent>) -> Result<Self> {
        require!(!components.is_empty(), "mixture needs at least one component");
        for c in &components {
            require!(
                c.weight > 0.0 && c.weight.is_finite(),
                "component weight must be positive and finite, got {}",
                c.weight
            );
            require!(
                c.variance > 0.0 && c.variance.is_finite(),
                "component variance must be positive and finite, got {}",
                c.variance
            );
            require!(
                c.mean.iter().all(|m| m.is_finite()),
                "component mean must be finite, got {:?}",
                c.mean
            );
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Ok(GaussianMixture2D { components })
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// The 0.95/0.05 two-Gaussian exhibit: a dominant mode at the origin and
    /// a minor mode at (4, 0), both with unit variance.
    pub fn local_mode_exhibit() -> Self {
        GaussianMixture2D::new(vec![
            MixtureComponent {
                weight: 0.95,
                mean: [0.0, 0.0],
                variance: 1.0,
            },
            MixtureComponent {
                weight: 0.05,
                mean: [4.0, 0.0],
                variance: 1.0,
            },
        ])
        .expect("exhibit constants are valid")
    }

    /// p(x) = Σᵢ wᵢ N(x; μᵢ, vᵢI).
    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let d2 = sq_dist(x, c.mean);
                c.weight / (TAU * c.variance) * (-d2 / (2.0 * c.variance)).exp()
            })
            .sum()
    }

    /// ln p(x) via log-sum-exp, stable far into the tails.
    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                c.weight.ln() - (TAU * c.variance).ln() - sq_dist(x, c.mean) / (2.0 * c.variance)
            })
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
    }

    /// ∇ln p(x) = Σᵢ wᵢ Nᵢ(x) (μᵢ − x)/vᵢ / p(x).
    pub fn score(&self, x: [f64; 2]) -> [f64; 2] {
        // Responsibilities are computed in log space so the ratio stays exact
        // even where every component density underflows.
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                c.weight.ln() - (TAU * c.variance).ln() - sq_dist(x, c.mean) / (2.0 * c.variance)
            })
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        let mut g = [0.0f64; 2];
        for (c, l) in self.components.iter().zip(&logs) {
            let r = (l - m).exp() / total;
            g[0] += r * (c.mean[0] - x[0]) / c.variance;
            g[1] += r * (c.mean[1] - x[1]) / c.variance;
        }
        g
    }
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Density, score vector, and score norm per query point.
#[derive(Clone, Debug)]
pub struct FieldPoint {
    pub point: [f64; 2],
    pub density: f64,
    pub score: [f64; 2],
    pub norm: f64,
}

pub fn mixture_score_field(m: &GaussianMixture2D, points: &[[f64; 2]]) -> Vec<FieldPoint> {
    points
        .iter()
        .map(|&p| {
            let score = m.score(p);
            FieldPoint {
                point: p,
                density: m.density(p),
                score,
                norm: (score[0] * score[0] + score[1] * score[1]).sqrt(),
            }
        })
        .collect()
}

/// Root of x ↦ ∂ₓ ln p((x, y)) on [lo, hi] by bisection. The endpoints must
/// straddle the root; the bracket is narrowed below 1e-12.
pub fn stationary_x(m: &GaussianMixture2D, y: f64, lo: f64, hi: f64) -> Result<f64> {
    require!(lo < hi, "empty bracket [{lo}, {hi}]");
    let g = |x: f64| m.score([x, y])[0];
    let (mut lo, mut hi) = (lo, hi);
    let (glo, ghi) = (g(lo), g(hi));
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    require!(
        glo.signum() != ghi.signum(),
        "gradient does not change sign on [{lo}, {hi}]: {glo} vs {ghi}"
    );
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm.signum() == glo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The minor-mode stationary point of the 0.95/0.05 exhibit together with
/// its score norm and its density ratio to the dominant mode at the origin.
pub struct BlindSpot {
    pub point: [f64; 2],
    pub score_norm: f64,
    pub density_ratio: f64,
}

pub fn exhibit_blind_spot() -> Result<BlindSpot> {
    let m = GaussianMixture2D::local_mode_exhibit();
    // The minor mean at (4,0) is dragged toward the origin by the dominant
    // component, so the surviving local maximum sits just left of x = 4.
    let x = stationary_x(&m, 0.0, 3.5, 4.0)?;
    let point = [x, 0.0];
    let s = m.score(point);
    Ok(BlindSpot {
        point,
        score_norm: (s[0] * s[0] + s[1] * s[1]).sqrt(),
        density_ratio: m.density(point) / m.density([0.0, 0.0]),
    })
}

/// Row-major square grid over [-extent, extent]² with `resolution` samples
/// per axis (y varies slowest), for field dumps and heat-maps.
pub fn grid_points(extent: f64, resolution: usize) -> Result<Vec<[f64; 2]>> {
    require!(extent > 0.0, "grid extent must be positive, got {extent}");
    require!(resolution >= 2, "grid needs at least 2 samples per axis");
    let step = 2.0 * extent / (resolution - 1) as f64;
    let mut pts = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        for ix in 0..resolution {
            pts.push([-extent + ix as f64 * step, -extent + iy as f64 * step]);
        }
    }
    Ok(pts)
}

/// Parse `w,mx,my,var;w,mx,my,var;…` (or the literal `exhibit`).
pub fn parse_mixture(s: &str) -> Result<GaussianMixture2D> {
    if s == "exhibit" {
        return Ok(GaussianMixture2D::local_mode_exhibit());
    }
    let mut components = Vec::new();
    for (i, part) in s.split(';').enumerate() {
        let fields: Vec<&str> = part.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!(
                "mixture component {i}: expected `w,mx,my,var`, got `{part}`"
            )));
        }
        let nums: Vec<f64> = fields
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("mixture component {i}: bad number `{f}`")))
            })
            .collect::<Result<_>>()?;
        components.push(MixtureComponent {
            weight: nums[0],
            mean: [nums[1], nums[2]],
            variance: nums[3],
        });
    }
    GaussianMixture2D::new(components)
}
