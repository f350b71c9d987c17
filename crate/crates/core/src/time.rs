//! Timestamps.
//!
//! [`CanonicalTimestamp`] is the wall-clock form carried in audit packets and
//! block headers (epoch milliseconds plus the writer's UTC offset).
//! [`Micros`] is the microsecond instant used inside the consensus protocol,
//! where millisecond resolution is too coarse to order local events.

use std::fmt;
use std::ops::{Add, Sub};
use std::sync::OnceLock;

use chrono::{DateTime, FixedOffset, SecondsFormat, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

/// An instant in epoch milliseconds (UTC) plus the offset of the zone that
/// produced it. The offset is informational: two timestamps denote the same
/// instant iff their `epoch_millis` are equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CanonicalTimestamp {
    pub epoch_millis: i64,
    pub utc_offset_minutes: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unrecognised timestamp `{0}`")]
pub struct TimestampError(pub String);

fn ms_date_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^/Date\((-?\d+)(?:([+-])(\d{2})(\d{2}))?\)/$").unwrap())
}

impl CanonicalTimestamp {
    pub const fn utc(epoch_millis: i64) -> Self {
        CanonicalTimestamp {
            epoch_millis,
            utc_offset_minutes: 0,
        }
    }

    pub const fn with_offset(epoch_millis: i64, utc_offset_minutes: i32) -> Self {
        CanonicalTimestamp {
            epoch_millis,
            utc_offset_minutes,
        }
    }

    pub fn now() -> Self {
        Self::utc(Utc::now().timestamp_millis())
    }

    /// Parses either the Microsoft JSON date form `/Date(<millis>[±hhmm])/`
    /// (as it appears after JSON unescaping) or an RFC 3339 / ISO-8601 string.
    pub fn parse_wire(s: &str) -> Result<Self, TimestampError> {
        if let Some(caps) = ms_date_regex().captures(s) {
            let millis: i64 = caps[1].parse().map_err(|_| TimestampError(s.into()))?;
            let offset = match caps.get(2) {
                None => 0,
                Some(sign) => {
                    let hh: i32 = caps[3].parse().map_err(|_| TimestampError(s.into()))?;
                    let mm: i32 = caps[4].parse().map_err(|_| TimestampError(s.into()))?;
                    if mm >= 60 {
                        return Err(TimestampError(s.into()));
                    }
                    let magnitude = hh * 60 + mm;
                    if sign.as_str() == "-" {
                        -magnitude
                    } else {
                        magnitude
                    }
                }
            };
            return Ok(Self::with_offset(millis, offset));
        }
        let parsed =
            DateTime::parse_from_rfc3339(s.trim()).map_err(|_| TimestampError(s.into()))?;
        Ok(Self::with_offset(
            parsed.timestamp_millis(),
            parsed.offset().local_minus_utc() / 60,
        ))
    }

    /// The Microsoft JSON date form, unescaped: `/Date(1532366360155-0400)/`.
    pub fn to_ms_wire(&self) -> String {
        let sign = if self.utc_offset_minutes < 0 { '-' } else { '+' };
        let magnitude = self.utc_offset_minutes.unsigned_abs();
        format!(
            "/Date({}{}{:02}{:02})/",
            self.epoch_millis,
            sign,
            magnitude / 60,
            magnitude % 60
        )
    }

    pub fn to_iso8601(&self) -> String {
        let offset = FixedOffset::east_opt(self.utc_offset_minutes * 60)
            .unwrap_or_else(|| FixedOffset::east_opt(0).unwrap());
        match DateTime::<Utc>::from_timestamp_millis(self.epoch_millis) {
            Some(dt) => dt
                .with_timezone(&offset)
                .to_rfc3339_opts(SecondsFormat::Millis, false),
            None => self.to_ms_wire(),
        }
    }

    pub fn to_micros(&self) -> Micros {
        Micros(self.epoch_millis.saturating_mul(1000))
    }
}

impl fmt::Display for CanonicalTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso8601())
    }
}

/// Microseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Micros(pub i64);

impl Micros {
    pub const ZERO: Micros = Micros(0);

    pub fn from_millis(ms: i64) -> Self {
        Micros(ms.saturating_mul(1000))
    }

    pub fn now() -> Self {
        Micros(Utc::now().timestamp_micros())
    }

    pub fn as_millis_f64(&self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Millisecond timestamp rounded down.
    pub fn floor_millis(&self) -> i64 {
        self.0.div_euclid(1000)
    }

    /// Millisecond timestamp rounded up.
    pub fn ceil_millis(&self) -> i64 {
        -(-self.0).div_euclid(1000)
    }
}

impl Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0.saturating_add(rhs.0))
    }
}

impl Sub for Micros {
    type Output = Micros;
    fn sub(self, rhs: Micros) -> Micros {
        Micros(self.0.saturating_sub(rhs.0))
    }
}

impl From<CanonicalTimestamp> for Micros {
    fn from(ts: CanonicalTimestamp) -> Self {
        ts.to_micros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn listing_date_parses() {
        let ts = CanonicalTimestamp::parse_wire("/Date(1532366360155-0400)/").unwrap();
        assert_eq!(ts.epoch_millis, 1_532_366_360_155);
        assert_eq!(ts.utc_offset_minutes, -240);
        assert_eq!(ts.to_ms_wire(), "/Date(1532366360155-0400)/");
    }

    #[test]
    fn ms_form_without_offset_is_utc() {
        let ts = CanonicalTimestamp::parse_wire("/Date(-5)/").unwrap();
        assert_eq!(ts, CanonicalTimestamp::utc(-5));
        assert_eq!(ts.to_ms_wire(), "/Date(-5+0000)/");
    }

    #[test]
    fn iso_form_parses() {
        let ts = CanonicalTimestamp::parse_wire("2018-07-23T13:19:20.155-04:00").unwrap();
        assert_eq!(ts, CanonicalTimestamp::with_offset(1_532_366_360_155, -240));
        assert_eq!(
            CanonicalTimestamp::parse_wire(&ts.to_iso8601()).unwrap(),
            ts
        );
    }

    #[test]
    fn garbage_rejected() {
        assert!(CanonicalTimestamp::parse_wire("yesterday").is_err());
        assert!(CanonicalTimestamp::parse_wire("/Date(12-0475)/").is_err());
    }

    #[test]
    fn millis_rounding() {
        assert_eq!(Micros(1500).floor_millis(), 1);
        assert_eq!(Micros(1500).ceil_millis(), 2);
        assert_eq!(Micros(2000).ceil_millis(), 2);
        assert_eq!(Micros(-1500).floor_millis(), -2);
        assert_eq!(Micros(-1500).ceil_millis(), -1);
    }

    proptest! {
        #[test]
        fn ms_wire_round_trips(ms in -10_000_000_000_000i64..10_000_000_000_000i64,
                               offset in -(23 * 60 + 59)..=(23 * 60 + 59)) {
            let ts = CanonicalTimestamp::with_offset(ms, offset);
            prop_assert_eq!(CanonicalTimestamp::parse_wire(&ts.to_ms_wire()).unwrap(), ts);
        }

        #[test]
        fn iso_round_trips(ms in 0i64..4_000_000_000_000i64, offset in -(14 * 60)..=(14 * 60)) {
            let ts = CanonicalTimestamp::with_offset(ms, offset);
            prop_assert_eq!(CanonicalTimestamp::parse_wire(&ts.to_iso8601()).unwrap(), ts);
        }

        #[test]
        fn floor_lt_ceil_when_strictly_ordered(a in -1_000_000i64..1_000_000, d in 1i64..5_000) {
            let (lo, hi) = (Micros(a), Micros(a + d));
            prop_assert!(lo.floor_millis() < hi.ceil_millis());
        }
    }
}
