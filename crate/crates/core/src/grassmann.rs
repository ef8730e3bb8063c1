//! Distances between extended observability subspaces on the Grassmannian.
//!
//! The chordal distance is evaluated from the three Gram matrices
//! `G1 = O^T O`, `G2 = O'^T O'`, `G3 = O^T O'` without ever forming the
//! infinite bases: with Cholesky factors `G1 = L1 L1^T`, `G2 = L2 L2^T`,
//! the cosines of the principal angles are the singular values of
//! `L1^-1 G3 L2^-T`, and
//!
//! ```text
//! d_chord^2 = 2n - 2 Tr(G1^-1 G3 G2^-1 G3^T) = 2n - 2 ||L1^-1 G3 L2^-T||_F^2
//! ```
//!
//! Because these Grams are frequently close to singular for diagonal SSMs,
//! [`simplified_distance`] models each observability matrix as rank one and
//! uses only traces: `1 - Tr(G3 G3^T) / (Tr(G1) Tr(G2))`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::ssm::{DiagonalSsm, StateSpace};
use crate::sylvester::{gram_diagonal, gram_sylvester_dense, GramMatrix, DIAGONAL_EPSILON};

/// Gram condition estimate above which the chordal route refuses to run.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;
/// Column-rank tolerance relative to the largest singular value.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Default equality guard for [`simplified_distance`].
pub const DEFAULT_EQUALITY_EPSILON: f64 = 1e-12;
const TRACE_FLOOR: f64 = 1e-300;
const COSINE_CLAMP_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Chordal,
    Simplified,
    BinetCauchy,
    FubiniStudy,
    Martin,
    Geodesic,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Chordal,
        Metric::Simplified,
        Metric::BinetCauchy,
        Metric::FubiniStudy,
        Metric::Martin,
        Metric::Geodesic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Chordal => "chordal",
            Metric::Simplified => "simplified",
            Metric::BinetCauchy => "binet_cauchy",
            Metric::FubiniStudy => "fubini_study",
            Metric::Martin => "martin",
            Metric::Geodesic => "geodesic",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('_', "-") == s)
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceDistance {
    pub value: f64,
    pub metric: Metric,
}

/// Principal angles in `[0, pi/2]`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalAngles {
    angles: Vec<f64>,
}

impl PrincipalAngles {
    pub fn new(mut angles: Vec<f64>) -> Result<Self> {
        if angles.iter().any(|a| !(0.0..=FRAC_PI_2).contains(a)) {
            return Err(Error::InvalidArgument("principal angles must lie in [0, pi/2]".into()));
        }
        angles.sort_by(f64::total_cmp);
        Ok(Self { angles })
    }

    /// Angles from cosines, clamping values within tolerance of `[0, 1]`.
    pub fn from_cosines(cosines: impl IntoIterator<Item = f64>) -> Result<Self> {
        let angles = cosines
            .into_iter()
            .map(|c| {
                if !(-COSINE_CLAMP_TOLERANCE..=1.0 + COSINE_CLAMP_TOLERANCE).contains(&c) {
                    Err(Error::InvalidArgument(format!("cosine {c} outside [0, 1]")))
                } else {
                    Ok(c.clamp(0.0, 1.0).acos())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(angles)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn cosines(&self) -> Vec<f64> {
        self.angles.iter().map(|a| a.cos()).collect()
    }
}

/// Orthonormal basis of the column space; errors unless it has full column rank.
fn orthonormal_basis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.ncols();
    let svd = m.clone().svd(true, false);
    let max = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOLERANCE * max).count();
    if max == 0.0 || rank < n {
        return Err(Error::RankDeficient { rank, expected: n });
    }
    Ok(svd.u.expect("requested U"))
}

/// Principal angles between the column spaces of two (truncated) bases.
pub fn principal_angles_truncated(o1: &DMatrix<f64>, o2: &DMatrix<f64>) -> Result<PrincipalAngles> {
    if o1.nrows() != o2.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "bases have {} and {} rows",
            o1.nrows(),
            o2.nrows()
        )));
    }
    let x = orthonormal_basis(o1)?;
    let z = orthonormal_basis(o2)?;
    let cross = x.tr_mul(&z);
    PrincipalAngles::from_cosines(cross.singular_values().iter().copied())
}

fn condition_of_spd(g: &DMatrix<f64>) -> f64 {
    let eig = g.clone().symmetric_eigen().eigenvalues;
    let (min, max) = (eig.min(), eig.max());
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn checked_cholesky(g: &GramMatrix) -> Result<Cholesky<f64, Dyn>> {
    let condition = condition_of_spd(g.matrix());
    if !(condition <= GRAM_CONDITION_LIMIT) {
        return Err(Error::IllConditionedGram { condition });
    }
    g.matrix()
        .clone()
        .cholesky()
        .ok_or(Error::IllConditionedGram { condition })
}

/// `L1^-1 G3 L2^-T`, whose singular values are the principal cosines.
fn whitened_cross_gram(g1: &GramMatrix, g2: &GramMatrix, g3: &GramMatrix) -> Result<DMatrix<f64>> {
    let n = g1.n();
    if g2.n() != n || g3.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "Gram sizes {} / {} / {}",
            g1.n(),
            g2.n(),
            g3.n()
        )));
    }
    let l1 = checked_cholesky(g1)?;
    let l2 = checked_cholesky(g2)?;
    let left = l1
        .l_dirty()
        .solve_lower_triangular(g3.matrix())
        .ok_or(Error::IllConditionedGram { condition: f64::INFINITY })?;
    // (L1^-1 G3) L2^-T = (L2^-1 (L1^-1 G3)^T)^T
    let right = l2
        .l_dirty()
        .solve_lower_triangular(&left.transpose())
        .ok_or(Error::IllConditionedGram { condition: f64::INFINITY })?;
    Ok(right.transpose())
}

/// Similar realization `(L^T A L^-T, L^-1 c)` whose self-Gram is (numerically) the
/// identity, where `G = L L^T`.
///
/// A similarity transform leaves the observability subspace untouched, so an
/// inexact `L` costs nothing but rounding, while the cross Gram solved in
/// these coordinates no longer inherits the conditioning of `G`.
fn gram_whitened_realization(a: &DMatrix<f64>, c: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let g = gram_sylvester_dense(a, c, a, c)?;
    let chol = checked_cholesky(&g)?;
    let l = chol.l();
    let singular = || Error::IllConditionedGram { condition: f64::INFINITY };
    // L^T A L^-T = (L^-1 (L^T A)^T)^T
    let lt_a = l.transpose() * a;
    let a_w = l.solve_lower_triangular(&lt_a.transpose()).ok_or_else(singular)?.transpose();
    let c_w = l.solve_lower_triangular(c).ok_or_else(singular)?;
    Ok((a_w, c_w))
}

/// `L1^-1 G3 L2^-T` straight from two SSMs.
///
/// Diagonal pairs use the closed-form Grams; anything else is first moved to
/// Gram-whitened coordinates and the three Grams are re-solved there.
fn whitened_cross<S1, S2>(s1: &S1, s2: &S2) -> Result<DMatrix<f64>>
where
    S1: StateSpace + ?Sized,
    S2: StateSpace + ?Sized,
{
    if s1.diagonal().is_some() && s2.diagonal().is_some() {
        let (g1, g2, g3) = observability_grams(s1, s2)?;
        return whitened_cross_gram(&g1, &g2, &g3);
    }
    check_pair(s1, s2)?;
    let (a1, c1) = gram_whitened_realization(&s1.state_matrix(), s1.c())?;
    let (a2, c2) = gram_whitened_realization(&s2.state_matrix(), s2.c())?;
    let g1 = gram_sylvester_dense(&a1, &c1, &a1, &c1)?;
    let g2 = gram_sylvester_dense(&a2, &c2, &a2, &c2)?;
    let g3 = gram_sylvester_dense(&a1, &c1, &a2, &c2)?;
    whitened_cross_gram(&g1, &g2, &g3)
}

fn check_pair<S1, S2>(s1: &S1, s2: &S2) -> Result<()>
where
    S1: StateSpace + ?Sized,
    S2: StateSpace + ?Sized,
{
    if s1.n() != s2.n() {
        return Err(Error::DimensionMismatch(format!(
            "state dimensions differ: {} vs {}",
            s1.n(),
            s2.n()
        )));
    }
    for rho in [s1.spectral_radius(), s2.spectral_radius()] {
        if !(rho < 1.0) {
            return Err(Error::NotSchurStable(rho));
        }
    }
    Ok(())
}

/// Principal angles between the infinite observability subspaces of two SSMs.
pub fn principal_angles<S1, S2>(s1: &S1, s2: &S2) -> Result<PrincipalAngles>
where
    S1: StateSpace + ?Sized,
    S2: StateSpace + ?Sized,
{
    PrincipalAngles::from_cosines(whitened_cross(s1, s2)?.singular_values().iter().copied())
}

/// `(G1, G2, G3)` for two SSMs, using the closed form when both are diagonal.
pub fn observability_grams<S1, S2>(s1: &S1, s2: &S2) -> Result<(GramMatrix, GramMatrix, GramMatrix)>
where
    S1: StateSpace + ?Sized,
    S2: StateSpace + ?Sized,
{
    check_pair(s1, s2)?;
    match (s1.diagonal(), s2.diagonal()) {
        (Some(a1), Some(a2)) => Ok((
            gram_diagonal(a1, s1.c(), a1, s1.c())?,
            gram_diagonal(a2, s2.c(), a2, s2.c())?,
            gram_diagonal(a1, s1.c(), a2, s2.c())?,
        )),
        _ => {
            let (a1, a2) = (s1.state_matrix(), s2.state_matrix());
            Ok((
                gram_sylvester_dense(&a1, s1.c(), &a1, s1.c())?,
                gram_sylvester_dense(&a2, s2.c(), &a2, s2.c())?,
                gram_sylvester_dense(&a1, s1.c(), &a2, s2.c())?,
            ))
        }
    }
}

/// Exact principal angles between two infinite observability subspaces.
pub fn principal_angles_gram(g1: &GramMatrix, g2: &GramMatrix, g3: &GramMatrix) -> Result<PrincipalAngles> {
    let m = whitened_cross_gram(g1, g2, g3)?;
    PrincipalAngles::from_cosines(m.singular_values().iter().copied())
}

/// `2n - 2 Tr(G1^-1 G3 G2^-1 G3^T)`, clamped to `[0, 2n]`.
pub fn chordal_sq_from_grams(g1: &GramMatrix, g2: &GramMatrix, g3: &GramMatrix) -> Result<f64> {
    let n = g1.n() as f64;
    let m = whitened_cross_gram(g1, g2, g3)?;
    let d2 = 2.0 * n - 2.0 * m.norm_squared();
    Ok(d2.clamp(0.0, 2.0 * n))
}

/// Squared chordal distance between the observability subspaces of two SSMs.
pub fn chordal_distance_sq<S1, S2>(s1: &S1, s2: &S2) -> Result<f64>
where
    S1: StateSpace + ?Sized,
    S2: StateSpace + ?Sized,
{
    let n = s1.n() as f64;
    let d2 = 2.0 * n - 2.0 * whitened_cross(s1, s2)?.norm_squared();
    Ok(d2.clamp(0.0, 2.0 * n))
}

/// Chordal distance `sqrt(2n - 2 sum cos^2)`.
pub fn chordal_distance<S1, S2>(s1: &S1, s2: &S2) -> Result<SubspaceDistance>
where
    S1: StateSpace + ?Sized,
    S2: StateSpace + ?Sized,
{
    Ok(SubspaceDistance {
        value: chordal_distance_sq(s1, s2)?.sqrt(),
        metric: Metric::Chordal,
    })
}

/// `1 - Tr(G3 G3^T) / (Tr(G1) Tr(G2))` from precomputed Grams.
pub fn simplified_from_grams(g1: &GramMatrix, g2: &GramMatrix, g3: &GramMatrix) -> Result<f64> {
    let (t1, t2) = (g1.trace(), g2.trace());
    for t in [t1, t2] {
        if !(t >= TRACE_FLOOR) {
            return Err(Error::DegenerateTrace(t));
        }
    }
    let cos2 = g3.matrix().norm_squared() / t1 / t2;
    Ok((1.0 - cos2).clamp(0.0, 1.0))
}

/// Terms of the rank-one cosine for diagonal systems, without materializing Grams.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RankOneTerms {
    /// `||G3||_F^2`
    pub cross: f64,
    /// `Tr(G1)`
    pub trace1: f64,
    /// `Tr(G2)`
    pub trace2: f64,
}

impl RankOneTerms {
    pub fn cos2(&self) -> f64 {
        self.cross / self.trace1 / self.trace2
    }
}

fn self_trace(a: &[f64], c: &[f64]) -> Result<f64> {
    let mut t = 0.0;
    for (i, (&ai, &ci)) in a.iter().zip(c).enumerate() {
        let den = 1.0 - ai * ai;
        if !(den.abs() >= DIAGONAL_EPSILON) {
            return Err(Error::DivisionNearOne { row: i, col: i, denominator: den, epsilon: DIAGONAL_EPSILON });
        }
        t += ci * ci / den;
    }
    Ok(t)
}

pub(crate) fn rank_one_terms(a1: &[f64], c1: &[f64], a2: &[f64], c2: &[f64]) -> Result<RankOneTerms> {
    let trace1 = self_trace(a1, c1)?;
    let trace2 = self_trace(a2, c2)?;
    for t in [trace1, trace2] {
        if !(t >= TRACE_FLOOR) {
            return Err(Error::DegenerateTrace(t));
        }
    }
    let mut cross = 0.0;
    for (i, (&ai, &ci)) in a1.iter().zip(c1).enumerate() {
        for (j, (&aj, &cj)) in a2.iter().zip(c2).enumerate() {
            let den = 1.0 - ai * aj;
            if !(den.abs() >= DIAGONAL_EPSILON) {
                return Err(Error::DivisionNearOne { row: i, col: j, denominator: den, epsilon: DIAGONAL_EPSILON });
            }
            let g = ci * cj / den;
            cross += g * g;
        }
    }
    Ok(RankOneTerms { cross, trace1, trace2 })
}

pub(crate) fn within_guard(a1: &[f64], c1: &[f64], a2: &[f64], c2: &[f64], epsilon: f64) -> bool {
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= epsilon);
    close(a1, a2) && close(c1, c2)
}

/// Rank-one distance `1 - cos^2(theta)` between two diagonal SSMs.
///
/// Returns exactly zero when `A` and `C` agree entrywise within `epsilon`,
/// since the rank-one cosine is below one for identical but higher-rank
/// observability matrices.
pub fn simplified_distance(s1: &DiagonalSsm, s2: &DiagonalSsm, epsilon: f64) -> Result<SubspaceDistance> {
    if s1.n() != s2.n() {
        return Err(Error::DimensionMismatch(format!(
            "state dimensions differ: {} vs {}",
            s1.n(),
            s2.n()
        )));
    }
    let (a1, c1) = (s1.a_diag().as_slice(), s1.c().as_slice());
    let (a2, c2) = (s2.a_diag().as_slice(), s2.c().as_slice());
    if within_guard(a1, c1, a2, c2, epsilon) {
        return Ok(SubspaceDistance { value: 0.0, metric: Metric::Simplified });
    }
    let terms = rank_one_terms(a1, c1, a2, c2)?;
    Ok(SubspaceDistance {
        value: (1.0 - terms.cos2()).clamp(0.0, 1.0),
        metric: Metric::Simplified,
    })
}

/// Rank-one distance for arbitrary realizations; dense inputs go through Sylvester solves.
pub fn simplified_distance_any<S1, S2>(s1: &S1, s2: &S2, epsilon: f64) -> Result<SubspaceDistance>
where
    S1: StateSpace + ?Sized,
    S2: StateSpace + ?Sized,
{
    if let (Some(a1), Some(a2)) = (s1.diagonal(), s2.diagonal()) {
        let d1 = DiagonalSsm::new(a1.clone(), s1.b().clone(), s1.c().clone())?;
        let d2 = DiagonalSsm::new(a2.clone(), s2.b().clone(), s2.c().clone())?;
        return simplified_distance(&d1, &d2, epsilon);
    }
    if s1.n() == s2.n() {
        let same_a = (s1.state_matrix() - s2.state_matrix()).amax() <= epsilon;
        let same_c = (s1.c() - s2.c()).amax() <= epsilon;
        if same_a && same_c {
            return Ok(SubspaceDistance { value: 0.0, metric: Metric::Simplified });
        }
    }
    let (g1, g2, g3) = observability_grams(s1, s2)?;
    Ok(SubspaceDistance {
        value: simplified_from_grams(&g1, &g2, &g3)?,
        metric: Metric::Simplified,
    })
}

/// `sum_i ln cos(theta_i)`, accurate for small angles.
fn log_cos_sum(angles: &[f64]) -> f64 {
    angles
        .iter()
        .map(|&t| {
            let s = (0.5 * t).sin();
            (-2.0 * s * s).ln_1p()
        })
        .sum()
}

/// Distances expressed through principal angles.
///
/// `Chordal` here is `sqrt(sum sin^2 theta)`, the normalization under which
/// the Binet-Cauchy, Fubini-Study and Martin distances agree with it to
/// second order; the Gram-based [`chordal_distance_sq`] is twice its square.
pub fn classical_distance(angles: &PrincipalAngles, metric: Metric) -> Result<SubspaceDistance> {
    let th = angles.angles();
    let value = match metric {
        Metric::Chordal => th.iter().map(|t| t.sin().powi(2)).sum::<f64>().sqrt(),
        Metric::Geodesic => th.iter().map(|t| t * t).sum::<f64>().sqrt(),
        Metric::BinetCauchy => {
            // 1 - prod cos^2 = -expm1(2 sum ln cos)
            if th.iter().any(|&t| t >= FRAC_PI_2) {
                1.0
            } else {
                (-(2.0 * log_cos_sum(th)).exp_m1()).clamp(0.0, 1.0).sqrt()
            }
        }
        Metric::FubiniStudy => {
            if th.iter().any(|&t| t >= FRAC_PI_2) {
                FRAC_PI_2
            } else {
                // acos(p) = 2 asin(sqrt((1 - p) / 2))
                let one_minus_p = -log_cos_sum(th).exp_m1();
                2.0 * (0.5 * one_minus_p).clamp(0.0, 1.0).sqrt().asin()
            }
        }
        Metric::Martin => {
            if th.iter().any(|&t| t >= FRAC_PI_2) {
                return Err(Error::InfiniteDistance);
            }
            (-2.0 * log_cos_sum(th)).max(0.0).sqrt()
        }
        Metric::Simplified => {
            return Err(Error::InvalidArgument(
                "the simplified distance is defined from Grams, not principal angles".into(),
            ))
        }
    };
    Ok(SubspaceDistance { value, metric })
}

/// Any metric between two SSMs, using exact infinite-horizon angles for the
/// principal-angle metrics.
pub fn distance<S1, S2>(s1: &S1, s2: &S2, metric: Metric) -> Result<SubspaceDistance>
where
    S1: StateSpace + ?Sized,
    S2: StateSpace + ?Sized,
{
    match metric {
        Metric::Simplified => simplified_distance_any(s1, s2, DEFAULT_EQUALITY_EPSILON),
        Metric::Chordal => chordal_distance(s1, s2),
        other => {
            classical_distance(&principal_angles(s1, s2)?, other)
        }
    }
}

/// Cosine vector helper for tests and callers holding plain vectors.
pub fn simplified_cos2(a1: &DVector<f64>, c1: &DVector<f64>, a2: &DVector<f64>, c2: &DVector<f64>) -> Result<f64> {
    if a1.len() != c1.len() || a2.len() != c2.len() || a1.len() != a2.len() {
        return Err(Error::DimensionMismatch("rank-one cosine inputs".into()));
    }
    Ok(rank_one_terms(a1.as_slice(), c1.as_slice(), a2.as_slice(), c2.as_slice())?.cos2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::truncated_observability;
    use crate::sylvester::gram_truncated;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_3;

    fn diag(a: &[f64], c: &[f64]) -> DiagonalSsm {
        DiagonalSsm::from_slices(a, &vec![1.0; a.len()], c).unwrap()
    }

    #[test]
    fn identical_subspaces_have_zero_angles() {
        let o = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, 2.0, 3.0, 1.0]);
        let pa = principal_angles_truncated(&o, &o).unwrap();
        for a in pa.angles() {
            assert_abs_diff_eq!(*a, 0.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn orthogonal_subspaces() {
        let mut o1 = DMatrix::zeros(8, 2);
        let mut o2 = DMatrix::zeros(8, 2);
        o1[(0, 0)] = 1.0;
        o1[(1, 1)] = 1.0;
        o2[(2, 0)] = 1.0;
        o2[(3, 1)] = 1.0;
        let pa = principal_angles_truncated(&o1, &o2).unwrap();
        for a in pa.angles() {
            assert_abs_diff_eq!(*a, FRAC_PI_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_deficient_basis() {
        let o = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(
            principal_angles_truncated(&o, &o),
            Err(Error::RankDeficient { rank: 1, expected: 2 })
        ));
    }

    #[test]
    fn classical_single_angle() {
        let pa = PrincipalAngles::new(vec![FRAC_PI_3]).unwrap();
        let get = |m| classical_distance(&pa, m).unwrap().value;
        assert_abs_diff_eq!(get(Metric::BinetCauchy), 0.75f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(get(Metric::FubiniStudy), FRAC_PI_3, epsilon = 1e-12);
        assert_abs_diff_eq!(get(Metric::Martin), (-(0.25f64).ln()).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(get(Metric::Martin), 1.177_410_022_515_474_6, epsilon = 1e-12);
        assert_abs_diff_eq!(get(Metric::Geodesic), FRAC_PI_3, epsilon = 1e-15);
    }

    #[test]
    fn classical_zero_angles() {
        let pa = PrincipalAngles::new(vec![0.0; 3]).unwrap();
        for m in [Metric::Chordal, Metric::BinetCauchy, Metric::FubiniStudy, Metric::Martin, Metric::Geodesic] {
            assert_eq!(classical_distance(&pa, m).unwrap().value, 0.0);
        }
        assert!(classical_distance(&pa, Metric::Simplified).is_err());
    }

    #[test]
    fn martin_infinite_at_right_angle() {
        let pa = PrincipalAngles::new(vec![0.1, FRAC_PI_2]).unwrap();
        assert_eq!(classical_distance(&pa, Metric::Martin).unwrap_err(), Error::InfiniteDistance);
        assert_eq!(classical_distance(&pa, Metric::BinetCauchy).unwrap().value, 1.0);
    }

    #[test]
    fn small_angle_ratios() {
        let t = 1e-3;
        for n in [1usize, 2, 5, 16] {
            let pa = PrincipalAngles::new(vec![t; n]).unwrap();
            let chord2 = classical_distance(&pa, Metric::Chordal).unwrap().value.powi(2);
            for m in [Metric::BinetCauchy, Metric::FubiniStudy, Metric::Martin] {
                let r = classical_distance(&pa, m).unwrap().value.powi(2) / chord2;
                assert!((0.99..=1.01).contains(&r), "{m} ratio {r} at n={n}");
            }
        }
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert_eq!("binet-cauchy".parse::<Metric>().unwrap(), Metric::BinetCauchy);
        assert!("hausdorff".parse::<Metric>().is_err());
    }

    #[test]
    fn simplified_guard_and_rank_one() {
        let s = diag(&[0.3, -0.2, 0.5], &[1.0, 0.5, -0.7]);
        assert_eq!(simplified_distance(&s, &s, DEFAULT_EQUALITY_EPSILON).unwrap().value, 0.0);
        // n = 1: both observability matrices are single columns spanning lines
        let p = diag(&[0.4], &[2.0]);
        let q = diag(&[0.4], &[-0.5]);
        assert_abs_diff_eq!(simplified_distance(&p, &q, 0.0).unwrap().value, 0.0, epsilon = 1e-15);
        // identical but higher rank: the rank-one cosine alone is below one
        let raw = simplified_cos2(s.a_diag(), s.c(), s.a_diag(), s.c()).unwrap();
        assert!(raw < 1.0);
    }

    #[test]
    fn simplified_degenerate_trace() {
        let s = diag(&[0.3], &[0.0]);
        let t = diag(&[0.3], &[1.0]);
        assert!(matches!(simplified_distance(&s, &t, 0.0), Err(Error::DegenerateTrace(_))));
    }

    #[test]
    fn simplified_matches_gram_route() {
        let s = diag(&[0.3, -0.2, 0.5], &[1.0, 0.5, -0.7]);
        let t = diag(&[0.1, 0.6, -0.4], &[0.2, -1.0, 0.3]);
        let fast = simplified_distance(&s, &t, 0.0).unwrap().value;
        let (g1, g2, g3) = observability_grams(&s, &t).unwrap();
        assert_abs_diff_eq!(fast, simplified_from_grams(&g1, &g2, &g3).unwrap(), epsilon = 1e-14);
        let dense = simplified_distance_any(&s.to_dense(), &t.to_dense(), 0.0).unwrap().value;
        assert_abs_diff_eq!(fast, dense, epsilon = 1e-12);
    }

    #[test]
    fn chordal_zero_for_identical() {
        let s = diag(&[0.3, -0.2], &[1.0, 0.5]);
        assert_abs_diff_eq!(chordal_distance_sq(&s, &s).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn chordal_agrees_with_truncated_bases() {
        let s = diag(&[0.6, -0.3], &[1.0, 0.8]);
        let t = diag(&[0.2, 0.7], &[-0.4, 1.1]);
        let d2 = chordal_distance_sq(&s, &t).unwrap();
        let k = 2000;
        let pa = principal_angles_truncated(
            &truncated_observability(&s, k).unwrap(),
            &truncated_observability(&t, k).unwrap(),
        )
        .unwrap();
        let from_angles: f64 = 2.0 * 2.0 - 2.0 * pa.cosines().iter().map(|c| c * c).sum::<f64>();
        assert_abs_diff_eq!(d2, from_angles, epsilon = 1e-6);
        let exact = {
            let (g1, g2, g3) = observability_grams(&s, &t).unwrap();
            principal_angles_gram(&g1, &g2, &g3).unwrap()
        };
        for (a, b) in exact.angles().iter().zip(pa.angles()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        let g = gram_truncated(&s, &t, k).unwrap();
        assert!(g.matrix().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unstable_or_mismatched_inputs() {
        let s = diag(&[1.2, 0.1], &[1.0, 1.0]);
        let t = diag(&[0.2, 0.1], &[1.0, 1.0]);
        assert!(matches!(chordal_distance_sq(&s, &t), Err(Error::NotSchurStable(_))));
        let u = diag(&[0.2], &[1.0]);
        assert!(matches!(chordal_distance_sq(&t, &u), Err(Error::DimensionMismatch(_))));
        assert!(matches!(simplified_distance(&t, &u, 0.0), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn ill_conditioned_gram_is_reported() {
        // nearly coincident poles make O nearly rank one
        let s = diag(&[0.5, 0.5 + 1e-9], &[1.0, 1.0]);
        let t = diag(&[0.2, 0.3], &[1.0, 1.0]);
        assert!(matches!(chordal_distance_sq(&s, &t), Err(Error::IllConditionedGram { .. })));
    }
}
