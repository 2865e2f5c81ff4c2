use super::ExperimentError;

/// Degree of the smoothing polynomial fitted to every mean curve.
pub const SMOOTH_DEGREE: usize = 4;

/// Least-squares polynomial fit. Returns coefficients in increasing power
/// order, `c[0] + c[1] x + ... + c[degree] x^degree`.
///
/// Solved by Householder QR on the column-scaled Vandermonde matrix rather
/// than the normal equations, which square its condition number.
pub fn polyfit(points: &[(f64, f64)], degree: usize) -> Result<Vec<f64>, ExperimentError> {
    let n = points.len();
    let m = degree + 1;
    if n <= degree {
        return Err(ExperimentError::Fit(format!(
            "{n} points cannot determine a degree {degree} polynomial"
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(ExperimentError::Fit("non-finite point".into()));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() <= degree {
        return Err(ExperimentError::Fit(format!(
            "only {} distinct x values for degree {degree}",
            xs.len()
        )));
    }

    // Column-major Vandermonde matrix.
    let mut a = vec![vec![0.0; n]; m];
    for (i, &(x, _)) in points.iter().enumerate() {
        let mut p = 1.0;
        for col in a.iter_mut() {
            col[i] = p;
            p *= x;
        }
    }
    let mut scale = vec![1.0; m];
    for (j, col) in a.iter_mut().enumerate() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            scale[j] = norm;
            col.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let mut b: Vec<f64> = points.iter().map(|p| p.1).collect();

    for k in 0..m {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ExperimentError::Fit("rank-deficient design matrix".into()));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in a.iter_mut().skip(k) {
                let dot: f64 = v.iter().zip(&col[k..]).map(|(p, q)| p * q).sum();
                let f = 2.0 * dot / vnorm2;
                for (c, vi) in col[k..].iter_mut().zip(&v) {
                    *c -= f * vi;
                }
            }
            let dot: f64 = v.iter().zip(&b[k..]).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in b[k..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
    }

    let mut coef = vec![0.0; m];
    for k in (0..m).rev() {
        let mut s = b[k];
        for j in k + 1..m {
            s -= a[j][k] * coef[j];
        }
        if a[k][k] == 0.0 {
            return Err(ExperimentError::Fit("rank-deficient design matrix".into()));
        }
        coef[k] = s / a[k][k];
    }
    for (c, s) in coef.iter_mut().zip(&scale) {
        *c /= s;
    }
    Ok(coef)
}

/// Horner evaluation of coefficients in increasing power order.
pub fn polyval(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Per-run returns with their across-run mean and its polynomial smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub agents: Vec<String>,
    /// `raw[run][agent][epoch]`.
    pub raw: Vec<Vec<Vec<f64>>>,
    /// `mean[agent][epoch]`.
    pub mean: Vec<Vec<f64>>,
    /// `smooth[agent][epoch]`.
    pub smooth: Vec<Vec<f64>>,
}

impl CurveSet {
    pub fn from_raw(agents: Vec<String>, raw: Vec<Vec<Vec<f64>>>) -> Result<Self, ExperimentError> {
        let runs = raw.len();
        if runs == 0 || agents.is_empty() {
            return Err(ExperimentError::InvalidSpec("empty curve set".into()));
        }
        let epochs = raw[0].first().map_or(0, Vec::len);
        if epochs == 0 {
            return Err(ExperimentError::InvalidSpec("curves have no epochs".into()));
        }
        for run in &raw {
            if run.len() != agents.len() || run.iter().any(|c| c.len() != epochs) {
                return Err(ExperimentError::InvalidSpec("ragged raw curves".into()));
            }
        }
        let mean: Vec<Vec<f64>> = (0..agents.len())
            .map(|a| {
                (0..epochs)
                    .map(|e| raw.iter().map(|run| run[a][e]).sum::<f64>() / runs as f64)
                    .collect()
            })
            .collect();
        let smooth = mean
            .iter()
            .map(|m| smooth_curve(m))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            agents,
            raw,
            mean,
            smooth,
        })
    }

    pub fn runs(&self) -> usize {
        self.raw.len()
    }

    pub fn epochs(&self) -> usize {
        self.mean[0].len()
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a == name)
    }

    /// Mean of the across-run mean over epochs `start..end`.
    pub fn window_mean(&self, agent: &str, start: usize, end: usize) -> Option<f64> {
        let a = self.agent_index(agent)?;
        window_mean(&self.mean[a], start, end)
    }
}

pub fn window_mean(curve: &[f64], start: usize, end: usize) -> Option<f64> {
    if start >= end || end > curve.len() {
        return None;
    }
    Some(curve[start..end].iter().sum::<f64>() / (end - start) as f64)
}

/// Fits a polynomial of degree `min(SMOOTH_DEGREE, len - 1)` against the
/// epoch index and evaluates it on the same domain.
pub fn smooth_curve(curve: &[f64]) -> Result<Vec<f64>, ExperimentError> {
    if curve.is_empty() {
        return Ok(Vec::new());
    }
    let degree = SMOOTH_DEGREE.min(curve.len() - 1);
    let points: Vec<(f64, f64)> = curve
        .iter()
        .enumerate()
        .map(|(i, &y)| (i as f64, y))
        .collect();
    let coef = polyfit(&points, degree)?;
    Ok((0..curve.len()).map(|i| polyval(&coef, i as f64)).collect())
}
