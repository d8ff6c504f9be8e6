//! Parameter sets, the quasi-periodic kick schedule and control paths.
//!
//! Units: time in kick periods, position in units of the inverse standing
//! wave vector (so the kick potential is `cos x`), momentum in units of two
//! recoil momenta. All laboratory constants are folded into `kbar`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Modulation frequency, in radians per kick.
///
/// Presets keep the radicand so they stay exact on disk; the float value is
/// produced by [`Frequency::radians`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    /// `2π·√radicand`
    TwoPiSqrt(u32),
    /// Explicit angular frequency.
    Radians(f64),
}

impl Frequency {
    pub fn radians(self) -> f64 {
        match self {
            Frequency::TwoPiSqrt(r) => 2.0 * PI * f64::from(r).sqrt(),
            Frequency::Radians(w) => w,
        }
    }

    /// Frequency in cycles per kick (`ω / 2π`).
    pub fn cycles(self) -> f64 {
        match self {
            Frequency::TwoPiSqrt(r) => f64::from(r).sqrt(),
            Frequency::Radians(w) => w / (2.0 * PI),
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frequency::TwoPiSqrt(r) => write!(f, "sqrt({r})"),
            Frequency::Radians(w) => write!(f, "{}", w / (2.0 * PI)),
        }
    }
}

/// A point of the (K, ε) control plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub k: f64,
    pub eps: f64,
}

impl ControlPoint {
    pub fn new(k: f64, eps: f64) -> Self {
        Self { k, eps }
    }
}

impl fmt::Display for ControlPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.k, self.eps)
    }
}

/// Scalar used to parametrize a path when fitting the critical point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathCoordinate {
    #[serde(rename = "K")]
    K,
    #[serde(rename = "epsilon")]
    Epsilon,
    #[serde(rename = "arc")]
    Arc,
}

impl fmt::Display for PathCoordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathCoordinate::K => "K",
            PathCoordinate::Epsilon => "epsilon",
            PathCoordinate::Arc => "arc",
        })
    }
}

impl FromStr for PathCoordinate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(PathCoordinate::K),
            "epsilon" | "eps" => Ok(PathCoordinate::Epsilon),
            "arc" => Ok(PathCoordinate::Arc),
            other => Err(Error::config(format!("unknown path coordinate {other:?}"))),
        }
    }
}

/// Straight segment through the control plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    pub start: ControlPoint,
    pub end: ControlPoint,
    pub coordinate: PathCoordinate,
}

impl ControlPath {
    pub fn new(start: ControlPoint, end: ControlPoint, coordinate: PathCoordinate) -> Result<Self> {
        let path = Self {
            start,
            end,
            coordinate,
        };
        path.validate()?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start == self.end {
            return Err(Error::config("control path start and end coincide"));
        }
        for p in [self.start, self.end] {
            if !(p.k > 0.0) || !p.k.is_finite() {
                return Err(Error::config(format!(
                    "K must be positive along the path, got {}",
                    p.k
                )));
            }
            if !(0.0..=1.0).contains(&p.eps) {
                return Err(Error::config(format!(
                    "eps must lie in [0, 1], got {}",
                    p.eps
                )));
            }
        }
        // Both endpoints valid implies the whole segment is (convex constraints).
        let moves = match self.coordinate {
            PathCoordinate::K => self.start.k != self.end.k,
            PathCoordinate::Epsilon => self.start.eps != self.end.eps,
            PathCoordinate::Arc => true,
        };
        if !moves {
            return Err(Error::config(format!(
                "path coordinate {} is constant along the path",
                self.coordinate
            )));
        }
        Ok(())
    }

    /// Fitting coordinate at arc fraction `s`.
    pub fn coordinate_value(&self, s: f64) -> Result<f64> {
        let p = path_point(self, s)?;
        Ok(match self.coordinate {
            PathCoordinate::K => p.k,
            PathCoordinate::Epsilon => p.eps,
            PathCoordinate::Arc => s,
        })
    }

    /// `points` equally spaced fractions including both endpoints.
    pub fn sweep(&self, points: usize) -> Result<Vec<(f64, ControlPoint)>> {
        if points < 2 {
            return Err(Error::config("a sweep needs at least two points"));
        }
        (0..points)
            .map(|i| {
                let s = if i + 1 == points {
                    1.0
                } else {
                    i as f64 / (points - 1) as f64
                };
                Ok((s, path_point(self, s)?))
            })
            .collect()
    }
}

impl fmt::Display for ControlPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{} -> {},{}",
            self.start.k, self.start.eps, self.end.k, self.end.eps
        )
    }
}

/// Full description of one experimental configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub label: String,
    pub kbar: f64,
    pub omega2: Frequency,
    pub omega3: Frequency,
    #[serde(default)]
    pub phi2: f64,
    #[serde(default)]
    pub phi3: f64,
    pub path: ControlPath,
    pub n_kicks: usize,
}

impl ParameterSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.kbar > 0.0) || !self.kbar.is_finite() {
            return Err(Error::config(format!(
                "kbar must be positive, got {}",
                self.kbar
            )));
        }
        if self.n_kicks < 1 {
            return Err(Error::config("n_kicks must be at least 1"));
        }
        for w in [
            self.omega2.radians(),
            self.omega3.radians(),
            self.phi2,
            self.phi3,
        ] {
            if !w.is_finite() {
                return Err(Error::config(
                    "modulation frequencies and phases must be finite",
                ));
            }
        }
        self.path.validate()
    }

    pub fn preset(label: &str) -> Result<Self> {
        presets()
            .into_iter()
            .find(|p| p.params.label.eq_ignore_ascii_case(label))
            .map(|p| p.params)
            .ok_or_else(|| Error::config(format!("unknown preset {label:?} (expected A..I)")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("parameter sets always serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let ps: ParameterSet = toml::from_str(text)?;
        ps.validate()?;
        Ok(ps)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter sets always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ps: ParameterSet = serde_json::from_str(text)?;
        ps.validate()?;
        Ok(ps)
    }
}

/// Kick strength at kick `n`:
/// `K·[1 + ε·cos(ω₂n + φ₂)·cos(ω₃n + φ₃)]`.
pub fn kick_amplitude(ps: &ParameterSet, k: f64, eps: f64, n: u64) -> f64 {
    Modulation::new(ps.omega2, ps.omega3, ps.phi2, ps.phi3).amplitude(k, eps, n)
}

/// Evaluated modulation frequencies and phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulation {
    pub omega2: f64,
    pub omega3: f64,
    pub phi2: f64,
    pub phi3: f64,
}

impl Modulation {
    pub fn new(omega2: Frequency, omega3: Frequency, phi2: f64, phi3: f64) -> Self {
        Self {
            omega2: omega2.radians(),
            omega3: omega3.radians(),
            phi2,
            phi3,
        }
    }

    pub fn from_params(ps: &ParameterSet) -> Self {
        Self::new(ps.omega2, ps.omega3, ps.phi2, ps.phi3)
    }

    pub fn with_phases(self, phi2: f64, phi3: f64) -> Self {
        Self { phi2, phi3, ..self }
    }

    #[inline]
    pub fn amplitude(&self, k: f64, eps: f64, n: u64) -> f64 {
        if eps == 0.0 {
            return k;
        }
        let t = n as f64;
        let m = (self.omega2 * t + self.phi2).cos() * (self.omega3 * t + self.phi3).cos();
        k * (1.0 + eps * m)
    }

    /// Amplitudes for kicks `0..n_kicks`.
    pub fn schedule(&self, k: f64, eps: f64, n_kicks: usize) -> Vec<f64> {
        (0..n_kicks as u64)
            .map(|n| self.amplitude(k, eps, n))
            .collect()
    }
}

/// Point on `path` at arc fraction `s ∈ [0, 1]` (component-wise linear).
pub fn path_point(path: &ControlPath, s: f64) -> Result<ControlPoint> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Range(format!("path fraction {s} outside [0, 1]")));
    }
    Ok(ControlPoint {
        k: path.start.k + s * (path.end.k - path.start.k),
        eps: path.start.eps + s * (path.end.eps - path.start.eps),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommensurabilityWarning {
    /// Which quantities were compared, e.g. `"omega2/omega3"`.
    pub ratio: String,
    pub value: f64,
    pub p: i64,
    pub q: i64,
    pub deviation: f64,
}

impl fmt::Display for CommensurabilityWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} = {} is within {:.2e} of {}/{}",
            self.ratio, self.value, self.deviation, self.p, self.q
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CommensurabilityCheck {
    pub max_denominator: i64,
    pub tolerance: f64,
}

impl Default for CommensurabilityCheck {
    fn default() -> Self {
        Self {
            max_denominator: 100,
            tolerance: 1e-6,
        }
    }
}

/// Flag low-order rational relations among `kbar`, `ω₂`, `ω₃` and `π`.
pub fn commensurability_warnings(ps: &ParameterSet) -> Vec<CommensurabilityWarning> {
    commensurability_warnings_with(ps, CommensurabilityCheck::default())
}

pub fn commensurability_warnings_with(
    ps: &ParameterSet,
    check: CommensurabilityCheck,
) -> Vec<CommensurabilityWarning> {
    let w2 = ps.omega2.radians();
    let w3 = ps.omega3.radians();
    let base = [
        ("kbar", ps.kbar),
        ("omega2", w2),
        ("omega3", w3),
        ("pi", PI),
    ];
    let mut quantities: Vec<(String, f64)> =
        base.iter().map(|(n, v)| (n.to_string(), *v)).collect();
    quantities.push(("(omega2+omega3)".into(), w2 + w3));
    quantities.push(("(omega2-omega3)".into(), w2 - w3));

    let mut out = Vec::new();
    for i in 0..quantities.len() {
        for j in (i + 1)..quantities.len() {
            let (ref na, a) = quantities[i];
            let (ref nb, b) = quantities[j];
            // Combinations are only compared with the base quantities.
            if i >= base.len() && j >= base.len() {
                continue;
            }
            if b == 0.0 || a == 0.0 {
                continue;
            }
            let x = (a / b).abs();
            if let Some((p, q, dev)) = best_rational(x, check.max_denominator, check.tolerance) {
                out.push(CommensurabilityWarning {
                    ratio: format!("{na}/{nb}"),
                    value: x,
                    p,
                    q,
                    deviation: dev,
                });
            }
        }
    }
    out
}

/// First continued-fraction convergent `p/q` (`q ≤ max_q`) within `tol` of `x`.
fn best_rational(x: f64, max_q: i64, tol: f64) -> Option<(i64, i64, f64)> {
    if !x.is_finite() {
        return None;
    }
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1i64, 1i64, 0i64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a > 1e12 {
            break;
        }
        let a_i = a as i64;
        let (p2, q2) = (a_i * p1 + p0, a_i * q1 + q0);
        if q2 > max_q {
            break;
        }
        let dev = (x - p2 as f64 / q2 as f64).abs();
        if dev < tol {
            return Some((p2, q2, dev));
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = r - a;
        if frac < 1e-15 {
            break;
        }
        r = 1.0 / frac;
    }
    None
}

/// A built-in parameter set together with the values reported for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub params: ParameterSet,
    /// Reported critical value along the fit coordinate.
    pub reported_qc: f64,
    pub reported_nu: f64,
    pub reported_nu_err: f64,
}

pub const DEFAULT_KICKS: usize = 1000;

/// The nine reference configurations A–I. H and I differ only in pulse
/// duration, which delta kicks cannot represent, so they simulate identically.
pub fn presets() -> Vec<Preset> {
    let diag = |k0: f64, e0: f64, k1: f64, e1: f64, c: PathCoordinate| ControlPath {
        start: ControlPoint::new(k0, e0),
        end: ControlPoint::new(k1, e1),
        coordinate: c,
    };
    let make = |label: &str,
                kbar: f64,
                r2: u32,
                r3: u32,
                path: ControlPath,
                qc: f64,
                nu: f64,
                err: f64| Preset {
        params: ParameterSet {
            label: label.to_string(),
            kbar,
            omega2: Frequency::TwoPiSqrt(r2),
            omega3: Frequency::TwoPiSqrt(r3),
            phi2: 0.0,
            phi3: 0.0,
            path,
            n_kicks: DEFAULT_KICKS,
        },
        reported_qc: qc,
        reported_nu: nu,
        reported_nu_err: err,
    };
    use PathCoordinate::{Epsilon, K};
    vec![
        make(
            "A",
            2.89,
            5,
            13,
            diag(4.0, 0.1, 8.0, 0.8, K),
            6.67,
            1.63,
            0.06,
        ),
        make(
            "B",
            2.89,
            7,
            17,
            diag(4.0, 0.1, 8.0, 0.8, K),
            6.68,
            1.57,
            0.08,
        ),
        make(
            "C",
            2.89,
            5,
            13,
            diag(3.0, 0.435, 10.0, 0.435, K),
            5.91,
            1.55,
            0.25,
        ),
        make(
            "D",
            2.89,
            5,
            13,
            diag(7.5, 0.0, 7.5, 0.73, Epsilon),
            0.448,
            1.67,
            0.18,
        ),
        make(
            "E",
            2.00,
            5,
            13,
            diag(3.0, 0.1, 5.7, 0.73, K),
            4.69,
            1.64,
            0.08,
        ),
        make(
            "F",
            2.31,
            5,
            13,
            diag(4.0, 0.1, 9.0, 0.8, K),
            6.07,
            1.68,
            0.06,
        ),
        make(
            "G",
            2.47,
            5,
            13,
            diag(4.0, 0.1, 9.0, 0.8, K),
            5.61,
            1.55,
            0.10,
        ),
        make(
            "H",
            3.46,
            5,
            13,
            diag(4.0, 0.1, 9.0, 0.8, K),
            6.86,
            1.66,
            0.12,
        ),
        make(
            "I",
            3.46,
            5,
            13,
            diag(4.0, 0.1, 9.0, 0.8, K),
            7.06,
            1.70,
            0.12,
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set_a() -> ParameterSet {
        ParameterSet::preset("A").unwrap()
    }

    #[test]
    fn unmodulated_kick_is_exact() {
        let ps = set_a();
        for n in [0, 1, 17, 999_999] {
            assert_eq!(kick_amplitude(&ps, 5.3, 0.0, n).to_bits(), 5.3f64.to_bits());
        }
    }

    #[test]
    fn kick_at_origin_is_full_modulation() {
        assert_eq!(kick_amplitude(&set_a(), 4.0, 0.8, 0), 4.0 * 1.8);
    }

    #[test]
    fn kick_matches_high_precision_reference() {
        // 50-digit evaluation of 4·(1 + 0.1·cos(2π√5)·cos(2π√13)).
        let reference = 3.972_442_456_528_332_5;
        let v = kick_amplitude(&set_a(), 4.0, 0.1, 1);
        assert!((v - reference).abs() < 1e-14, "{v}");
        // 6·(1 + 0.8·cos(14π√5)·cos(14π√13))
        let v7 = kick_amplitude(&set_a(), 6.0, 0.8, 7);
        assert!((v7 - 5.806_910_382_756_916).abs() < 1e-13, "{v7}");
    }

    #[test]
    fn path_endpoints_and_midpoint() {
        let path = set_a().path;
        assert_eq!(path_point(&path, 0.0).unwrap(), ControlPoint::new(4.0, 0.1));
        assert_eq!(path_point(&path, 1.0).unwrap(), ControlPoint::new(8.0, 0.8));
        let mid = path_point(&path, 0.5).unwrap();
        assert!((mid.k - 6.0).abs() < 1e-15 && (mid.eps - 0.45).abs() < 1e-15);
        assert!(matches!(path_point(&path, 1.5), Err(Error::Range(_))));
        assert!(matches!(path_point(&path, -0.1), Err(Error::Range(_))));
    }

    #[test]
    fn preset_frequencies_are_incommensurate() {
        for p in presets() {
            let w = commensurability_warnings(&p.params);
            assert!(w.is_empty(), "preset {} warns: {:?}", p.params.label, w);
        }
    }

    #[test]
    fn equal_frequencies_warn() {
        let mut ps = set_a();
        ps.omega3 = ps.omega2;
        let w = commensurability_warnings(&ps);
        assert!(
            w.iter()
                .any(|w| w.ratio == "omega2/omega3" && w.p == 1 && w.q == 1),
            "{w:?}"
        );
    }

    #[test]
    fn kbar_equal_pi_warns() {
        let mut ps = set_a();
        ps.kbar = PI;
        let w = commensurability_warnings(&ps);
        assert!(
            w.iter()
                .any(|w| w.ratio == "kbar/pi" && w.p == 1 && w.q == 1),
            "{w:?}"
        );
    }

    #[test]
    fn presets_roundtrip_through_toml_and_json() {
        for p in presets() {
            let ps = p.params;
            assert_eq!(ParameterSet::from_toml(&ps.to_toml()).unwrap(), ps);
            assert_eq!(ParameterSet::from_json(&ps.to_json()).unwrap(), ps);
        }
    }

    #[test]
    fn table_values_are_exact() {
        let all = presets();
        let labels: String = all.iter().map(|p| p.params.label.clone()).collect();
        assert_eq!(labels, "ABCDEFGHI");
        let e = &all[4].params;
        assert_eq!(e.kbar, 2.0);
        assert_eq!(e.omega2.cycles(), 5f64.sqrt());
        assert_eq!(e.omega3.cycles(), 13f64.sqrt());
        assert_eq!(all[3].params.path.coordinate, PathCoordinate::Epsilon);
        assert_eq!(all[7].params.kbar, all[8].params.kbar);
    }

    #[test]
    fn invalid_sets_are_rejected() {
        let mut ps = set_a();
        ps.kbar = 0.0;
        assert!(ps.validate().is_err());
        let mut ps = set_a();
        ps.n_kicks = 0;
        assert!(ps.validate().is_err());
        let mut ps = set_a();
        ps.path.end = ps.path.start;
        assert!(ps.validate().is_err());
        let mut ps = set_a();
        ps.path.end.eps = 1.2;
        assert!(ps.validate().is_err());
    }

    #[test]
    fn sweep_includes_endpoints() {
        let grid = set_a().path.sweep(20).unwrap();
        assert_eq!(grid.len(), 20);
        assert_eq!(grid[0].1, ControlPoint::new(4.0, 0.1));
        assert_eq!(grid[19].1, ControlPoint::new(8.0, 0.8));
    }

    #[test]
    fn kick_amplitude_is_bounded_over_many_draws() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, 0);
        let ps = set_a();
        for _ in 0..100_000 {
            let n: u64 = rng.random_range(0..1_000_000);
            let m = Modulation::from_params(&ps).with_phases(
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..2.0 * PI),
            );
            let k = rng.random_range(0.1..20.0);
            let eps = rng.random_range(0.0..=1.0);
            let v = m.amplitude(k, eps, n);
            assert!(v >= k * (1.0 - eps) - 1e-12 && v <= k * (1.0 + eps) + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn path_point_is_linear(s1 in 0.0f64..=1.0, s2 in 0.0f64..=1.0) {
            let path = set_a().path;
            let a = path_point(&path, s1).unwrap();
            let b = path_point(&path, s2).unwrap();
            let m = path_point(&path, (s1 + s2) / 2.0).unwrap();
            let ulp = |x: f64| x.abs().max(1.0) * 4.0 * f64::EPSILON;
            prop_assert!((a.k + b.k - 2.0 * m.k).abs() <= ulp(m.k) * 2.0);
            prop_assert!((a.eps + b.eps - 2.0 * m.eps).abs() <= ulp(1.0) * 2.0);
        }
    }
}
