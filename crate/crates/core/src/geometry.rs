//! The rectangle `[0, a] x [0, b]` whose left side `x1 = 0` alternates
//! between Dirichlet pieces (where admissible functions vanish) and free
//! pieces, together with the distance functions used by the weighted
//! inequalities.
//!
//! Layout: period `i` occupies `[i*eps, (i+1)*eps]` with `eps = b / N`; its
//! closed Dirichlet piece `[i*eps, i*eps + eps*delta]` comes first and the
//! free piece fills the rest of the period.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Relative snapping tolerance for period-boundary classification.
const SNAP: f64 = 1e-9;

/// Position of the Dirichlet piece inside each period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Dirichlet piece at the start of every period.
    #[default]
    Canonical,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    a: f64,
    b: f64,
    n: u32,
    delta: f64,
    #[serde(default)]
    phase: Phase,
}

/// Rectangle and boundary-alternation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry")]
pub struct GeometryConfig {
    a: f64,
    b: f64,
    n: u32,
    delta: f64,
    phase: Phase,
}

impl TryFrom<RawGeometry> for GeometryConfig {
    type Error = LabError;

    fn try_from(raw: RawGeometry) -> Result<Self> {
        let mut cfg = GeometryConfig::new(raw.a, raw.b, raw.n, raw.delta)?;
        cfg.phase = raw.phase;
        Ok(cfg)
    }
}

impl GeometryConfig {
    pub fn new(a: f64, b: f64, n: u32, delta: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(LabError::Config(format!("a must be a positive length, got {a}")));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(LabError::Config(format!("b must be a positive length, got {b}")));
        }
        if n < 1 {
            return Err(LabError::Config("n (number of periods) must be at least 1".into()));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(LabError::Config(format!("delta must lie in (0, 1], got {delta}")));
        }
        Ok(Self { a, b, n, delta, phase: Phase::Canonical })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Number of periods `N`.
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Period length `eps = b / N`.
    pub fn epsilon(&self) -> f64 {
        self.b / self.n as f64
    }

    /// Shift `(1 - delta) * eps / 2` added to the distance on free strips.
    pub fn strip_shift(&self) -> f64 {
        (1.0 - self.delta) * self.epsilon() / 2.0
    }

    /// Whether the whole left side is Dirichlet.
    pub fn full_dirichlet(&self) -> bool {
        self.delta >= 1.0
    }

    /// Lower end of period `i`, computed without accumulating round-off.
    fn period_start(&self, i: u32) -> f64 {
        if i >= self.n {
            return self.b;
        }
        self.b * i as f64 / self.n as f64
    }

    /// Closed Dirichlet interval of period `i`.
    pub fn dirichlet_interval(&self, i: u32) -> (f64, f64) {
        let lo = self.period_start(i);
        let hi = if self.full_dirichlet() {
            self.period_start(i + 1)
        } else {
            lo + self.epsilon() * self.delta
        };
        (lo, hi)
    }

    /// Horizontal strip containing height `x2`.
    pub fn strip_of(&self, x2: f64) -> StripClass {
        if self.full_dirichlet() {
            return StripClass::Pi1;
        }
        let t = x2 / self.epsilon();
        let nearest = t.round();
        if (t - nearest).abs() < SNAP {
            // Period boundaries: the top edge closes the last free piece,
            // every other boundary opens a Dirichlet piece.
            return if nearest as u32 >= self.n { StripClass::Pi2 } else { StripClass::Pi1 };
        }
        let s = t - t.floor();
        if s <= self.delta + SNAP {
            StripClass::Pi1
        } else {
            StripClass::Pi2
        }
    }
}

/// Boundary piece type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Dirichlet,
    Free,
}

impl SegmentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SegmentKind::Dirichlet => "dirichlet",
            SegmentKind::Free => "free",
        }
    }
}

/// One piece `[lo, hi]` of the left side `x1 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySegment {
    pub lo: f64,
    pub hi: f64,
    pub kind: SegmentKind,
}

impl BoundarySegment {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Which horizontal strip a point lies in. Interface lines belong to `Pi1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StripClass {
    /// Faces a Dirichlet piece.
    Pi1,
    /// Faces a free piece.
    Pi2,
}

/// Alternating Dirichlet/free pieces of the left side, ordered by height.
pub fn build_partition(config: &GeometryConfig) -> Vec<BoundarySegment> {
    let mut out = Vec::with_capacity(2 * config.n as usize);
    for i in 0..config.n {
        let (lo, hi) = config.dirichlet_interval(i);
        out.push(BoundarySegment { lo, hi, kind: SegmentKind::Dirichlet });
        if !config.full_dirichlet() {
            out.push(BoundarySegment {
                lo: hi,
                hi: config.period_start(i + 1),
                kind: SegmentKind::Free,
            });
        }
    }
    out
}

/// Writes segments as `lo,hi,kind` rows.
pub fn write_segments_csv<W: Write>(segments: &[BoundarySegment], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lo", "hi", "kind"])?;
    for s in segments {
        w.write_record([s.lo.to_string(), s.hi.to_string(), s.kind.as_str().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Distances from a point of the rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distances {
    /// Distance to the whole left side.
    pub rho: f64,
    /// Distance to the Dirichlet pieces.
    pub r2: f64,
    /// `rho` on `Pi1`, `rho` plus the strip shift on `Pi2`.
    pub rho_eps: f64,
    pub strip: StripClass,
}

/// Distance from `(x1, x2)` to the union of Dirichlet pieces.
///
/// Only the three periods around `x2` can hold the nearest piece.
pub fn dirichlet_distance(config: &GeometryConfig, x1: f64, x2: f64) -> f64 {
    let eps = config.epsilon();
    let k0 = (x2 / eps).floor() as i64;
    let mut best = f64::INFINITY;
    for k in (k0 - 1)..=(k0 + 1) {
        if k < 0 || k >= config.n as i64 {
            continue;
        }
        let (lo, hi) = config.dirichlet_interval(k as u32);
        let dy = (lo - x2).max(x2 - hi).max(0.0);
        best = best.min(x1.hypot(dy));
    }
    best
}

/// Evaluates `rho`, `r2`, `rho_eps` and the strip class at a point of the rectangle.
pub fn distances(x1: f64, x2: f64, config: &GeometryConfig) -> Result<Distances> {
    if !(0.0..=config.a).contains(&x1) || !(0.0..=config.b).contains(&x2) {
        return Err(LabError::Domain { x1, x2, a: config.a, b: config.b });
    }
    let strip = config.strip_of(x2);
    let rho = x1;
    let rho_eps = match strip {
        StripClass::Pi1 => rho,
        StripClass::Pi2 => rho + config.strip_shift(),
    };
    Ok(Distances { rho, r2: dirichlet_distance(config, x1, x2), rho_eps, strip })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: u32, delta: f64) -> GeometryConfig {
        GeometryConfig::new(1.0, 1.0, n, delta).unwrap()
    }

    #[test]
    fn partition_two_periods_half() {
        let segs = build_partition(&cfg(2, 0.5));
        let expect = [
            (0.0, 0.25, SegmentKind::Dirichlet),
            (0.25, 0.5, SegmentKind::Free),
            (0.5, 0.75, SegmentKind::Dirichlet),
            (0.75, 1.0, SegmentKind::Free),
        ];
        assert_eq!(segs.len(), 4);
        for (s, (lo, hi, kind)) in segs.iter().zip(expect) {
            assert_eq!((s.lo, s.hi, s.kind), (lo, hi, kind));
        }
    }

    #[test]
    fn partition_full_dirichlet_single() {
        let segs = build_partition(&cfg(1, 1.0));
        assert_eq!(segs, vec![BoundarySegment { lo: 0.0, hi: 1.0, kind: SegmentKind::Dirichlet }]);
    }

    #[test]
    fn dirichlet_length_bookkeeping() {
        let total: f64 = build_partition(&cfg(4, 0.5))
            .iter()
            .filter(|s| s.kind == SegmentKind::Dirichlet)
            .map(BoundarySegment::len)
            .sum();
        assert!((total - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(GeometryConfig::new(0.0, 1.0, 2, 0.5).is_err());
        assert!(GeometryConfig::new(1.0, -1.0, 2, 0.5).is_err());
        assert!(GeometryConfig::new(1.0, 1.0, 0, 0.5).is_err());
        assert!(GeometryConfig::new(1.0, 1.0, 2, 0.0).is_err());
        assert!(GeometryConfig::new(1.0, 1.0, 2, 1.5).is_err());
        let bad: std::result::Result<GeometryConfig, _> =
            serde_json::from_str(r#"{"a":1,"b":1,"n":2,"delta":0}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn distance_examples() {
        let c = cfg(4, 0.5);
        let d = distances(0.2, 0.05, &c).unwrap();
        assert_eq!(d.strip, StripClass::Pi1);
        assert_eq!(d.rho_eps, 0.2);
        let d = distances(0.2, 0.2, &c).unwrap();
        assert_eq!(d.strip, StripClass::Pi2);
        assert!((d.rho_eps - 0.2625).abs() < 1e-15);
        // The nearest piece is [0.25, 0.375], 0.05 above.
        assert!((d.r2 - 0.2f64.hypot(0.05)).abs() < 1e-15);

        let full = cfg(3, 1.0);
        for y in [0.0, 0.31, 0.5, 1.0] {
            let d = distances(0.3, y, &full).unwrap();
            assert_eq!((d.rho, d.r2, d.rho_eps), (0.3, 0.3, 0.3));
        }
    }

    #[test]
    fn outside_point_is_rejected() {
        assert!(matches!(distances(-0.1, 0.5, &cfg(2, 0.5)), Err(LabError::Domain { .. })));
        assert!(matches!(distances(0.5, 1.01, &cfg(2, 0.5)), Err(LabError::Domain { .. })));
    }

    #[test]
    fn interface_lines_belong_to_pi1() {
        let c = cfg(4, 0.5);
        assert_eq!(c.strip_of(0.125), StripClass::Pi1);
        assert_eq!(c.strip_of(0.25), StripClass::Pi1);
        assert_eq!(c.strip_of(0.0), StripClass::Pi1);
        assert_eq!(c.strip_of(1.0), StripClass::Pi2);
    }

    #[test]
    fn segments_csv() {
        let mut buf = Vec::new();
        write_segments_csv(&build_partition(&cfg(1, 0.5)), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "lo,hi,kind\n0,0.5,dirichlet\n0.5,1,free\n");
    }

    proptest! {
        #[test]
        fn partition_tiles_the_side(n in 1u32..40, delta in 0.01f64..=1.0, b in 0.1f64..5.0) {
            let c = GeometryConfig::new(1.0, b, n, delta).unwrap();
            let segs = build_partition(&c);
            prop_assert_eq!(segs[0].lo, 0.0);
            prop_assert_eq!(segs.last().unwrap().hi, b);
            for w in segs.windows(2) {
                prop_assert_eq!(w[0].hi, w[1].lo);
                prop_assert!(w[0].kind != w[1].kind || c.full_dirichlet());
            }
            let dir: f64 = segs.iter().filter(|s| s.kind == SegmentKind::Dirichlet).map(|s| s.len()).sum();
            prop_assert!((dir - b * delta).abs() < 1e-12 * b.max(1.0));
        }

        #[test]
        fn distance_sandwich(n in 1u32..16, delta in 0.05f64..=1.0, x1 in 0.0f64..1.0, t in 0.0f64..1.0) {
            let c = GeometryConfig::new(1.0, 1.0, n, delta).unwrap();
            let shift = c.strip_shift();
            // Above the last Dirichlet piece the free gap is not closed by a
            // following piece, so the r2 envelope only holds below it.
            let x2 = t * (1.0 - shift);
            let d = distances(x1, x2, &c).unwrap();
            prop_assert!(d.rho <= d.rho_eps && d.rho_eps <= d.rho + shift + 1e-15);
            prop_assert!(d.rho <= d.r2);
            prop_assert!(d.r2 <= d.rho.hypot(shift) * (1.0 + 1e-12) + 1e-15);
            prop_assert!(d.rho.hypot(shift) <= d.rho + shift + 1e-15);
        }

        #[test]
        fn distances_are_periodic(n in 3u32..16, delta in 0.05f64..1.0, x1 in 0.0f64..1.0, t in 0.0f64..1.0) {
            let c = GeometryConfig::new(1.0, 1.0, n, delta).unwrap();
            let eps = c.epsilon();
            // Offsets avoid the period boundaries where round-off flips the class;
            // the second point stays below the last period, whose upper gap is open.
            let x2 = eps * (0.001 + 0.998 * t);
            let d0 = distances(x1, x2, &c).unwrap();
            let d1 = distances(x1, x2 + eps, &c).unwrap();
            prop_assert_eq!(d0.strip, d1.strip);
            prop_assert!((d0.rho_eps - d1.rho_eps).abs() < 1e-12);
            prop_assert!((d0.r2 - d1.r2).abs() < 1e-12);
        }

        #[test]
        fn full_dirichlet_collapses(x1 in 0.0f64..1.0, x2 in 0.0f64..1.0, n in 1u32..10) {
            let c = GeometryConfig::new(1.0, 1.0, n, 1.0).unwrap();
            let d = distances(x1, x2, &c).unwrap();
            prop_assert_eq!(d.rho, d.rho_eps);
            prop_assert_eq!(d.rho, d.r2);
        }
    }
}
