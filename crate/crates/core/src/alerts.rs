//! Posture-dwell and screen-distance alerts.
//!
//! [`AlertState::step`] is a pure transition function: the state is a plain
//! value, so a stream can be split anywhere and resumed with the carried
//! state, and replaying the same stream always yields the same events.
//!
//! ```text
//!   prediction == current ──► dwell keeps growing ──► dwell >= threshold ──► PosturePersisted
//!   prediction != current ──► pending candidate
//!        candidate held >= debounce ──► current = candidate, dwell restarts at candidate start
//!        current predicted again before that ──► candidate dropped, dwell untouched
//! ```
//!
//! Each (kind, posture) pair fires at most once per cooldown window.

use std::fmt;
use std::path::Path;

use crate::csvfmt::{self, fmt_f64};
use crate::error::{Error, Result};
use crate::fusion::FusedRecord;
use crate::posture::PostureLabel;

#[derive(Debug, Clone, PartialEq)]
pub struct AlertPolicy {
    /// Dwell threshold per posture, indexed by [`PostureLabel::index`]. `None` never alerts.
    pub posture_thresholds_s: [Option<f64>; 5],
    pub min_screen_distance_m: f64,
    pub distance_threshold_s: f64,
    pub cooldown_s: f64,
    /// Posture changes shorter than this do not reset the running dwell.
    pub debounce_s: f64,
}

impl Default for AlertPolicy {
    fn default() -> Self {
        Self {
            posture_thresholds_s: [None, Some(120.0), Some(90.0), Some(30.0), Some(45.0)],
            min_screen_distance_m: 0.40,
            distance_threshold_s: 60.0,
            cooldown_s: 300.0,
            debounce_s: 2.0,
        }
    }
}

impl AlertPolicy {
    pub fn threshold(&self, label: PostureLabel) -> Option<f64> {
        self.posture_thresholds_s[label.index()]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.posture_thresholds_s.iter().flatten().any(|&t| !positive(t)) {
            return Err(Error::Config("posture thresholds must be positive".into()));
        }
        if !positive(self.distance_threshold_s) || !positive(self.cooldown_s) {
            return Err(Error::Config("distance threshold and cooldown must be positive".into()));
        }
        if !(self.debounce_s >= 0.0) || !(self.min_screen_distance_m >= 0.0) {
            return Err(Error::Config(
                "debounce and minimum distance must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlertKind {
    PosturePersisted,
    TooCloseToScreen,
}

impl AlertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlertKind::PosturePersisted => "posture_persisted",
            AlertKind::TooCloseToScreen => "too_close_to_screen",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlertEvent {
    pub timestamp_s: f64,
    pub kind: AlertKind,
    pub posture: Option<PostureLabel>,
    pub dwell_s: f64,
    pub message: String,
}

impl fmt::Display for AlertEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ALERT t={:.2} kind={} posture={} dwell={:.1} {}",
            self.timestamp_s,
            self.kind.as_str(),
            self.posture.map(|p| p.as_str()).unwrap_or("-"),
            self.dwell_s,
            self.message
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Episode {
    label: PostureLabel,
    since_s: f64,
}

/// Carried state of the alert machine.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlertState {
    last_time_s: Option<f64>,
    current: Option<Episode>,
    candidate: Option<Episode>,
    close_since_s: Option<f64>,
    /// Last fire time per posture, then one slot for the distance alert.
    last_fired_s: [Option<f64>; 6],
}

const DISTANCE_SLOT: usize = 5;

impl AlertState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Posture whose dwell is currently being timed, and for how long.
    pub fn dwell(&self) -> Option<(PostureLabel, f64)> {
        match (self.current, self.last_time_s) {
            (Some(e), Some(t)) => Some((e.label, t - e.since_s)),
            _ => None,
        }
    }

    fn cooled_down(&self, slot: usize, now: f64, policy: &AlertPolicy) -> bool {
        self.last_fired_s[slot].is_none_or(|t| now - t >= policy.cooldown_s)
    }

    pub fn step(
        &self,
        policy: &AlertPolicy,
        record: &FusedRecord,
        predicted: PostureLabel,
        now_s: f64,
    ) -> Result<(AlertState, Vec<AlertEvent>)> {
        if !now_s.is_finite() {
            return Err(Error::State("non-finite time".into()));
        }
        if let Some(last) = self.last_time_s {
            if now_s < last {
                return Err(Error::State(format!("time went backwards: {now_s} after {last}")));
            }
        }
        let mut next = self.clone();
        next.last_time_s = Some(now_s);
        let mut events = Vec::new();

        match next.current {
            None => {
                next.current = Some(Episode {
                    label: predicted,
                    since_s: now_s,
                })
            }
            Some(cur) if cur.label == predicted => next.candidate = None,
            Some(_) => {
                let cand = match next.candidate {
                    Some(c) if c.label == predicted => c,
                    _ => Episode {
                        label: predicted,
                        since_s: now_s,
                    },
                };
                if now_s - cand.since_s >= policy.debounce_s {
                    next.current = Some(cand);
                    next.candidate = None;
                } else {
                    next.candidate = Some(cand);
                }
            }
        }

        if let Some(cur) = next.current {
            if let Some(threshold) = policy.threshold(cur.label) {
                let dwell = now_s - cur.since_s;
                let slot = cur.label.index();
                if dwell >= threshold && next.cooled_down(slot, now_s, policy) {
                    next.last_fired_s[slot] = Some(now_s);
                    events.push(AlertEvent {
                        timestamp_s: now_s,
                        kind: AlertKind::PosturePersisted,
                        posture: Some(cur.label),
                        dwell_s: dwell,
                        message: format!("{} held for {dwell:.0} s; adjust your posture", cur.label),
                    });
                }
            }
        }

        let nearest = record.distance1_m.min(record.distance2_m);
        if nearest < policy.min_screen_distance_m {
            let since = *next.close_since_s.get_or_insert(now_s);
            let dwell = now_s - since;
            if dwell >= policy.distance_threshold_s && next.cooled_down(DISTANCE_SLOT, now_s, policy) {
                next.last_fired_s[DISTANCE_SLOT] = Some(now_s);
                events.push(AlertEvent {
                    timestamp_s: now_s,
                    kind: AlertKind::TooCloseToScreen,
                    posture: None,
                    dwell_s: dwell,
                    message: format!(
                        "screen at {nearest:.2} m for {dwell:.0} s; move back to at least {:.2} m",
                        policy.min_screen_distance_m
                    ),
                });
            }
        } else {
            next.close_since_s = None;
        }

        Ok((next, events))
    }
}

/// Run a whole stream of (record, prediction) pairs from `state`, timed by the record timestamps.
pub fn replay<'a, I>(policy: &AlertPolicy, mut state: AlertState, stream: I) -> Result<(AlertState, Vec<AlertEvent>)>
where
    I: IntoIterator<Item = (&'a FusedRecord, PostureLabel)>,
{
    let mut all = Vec::new();
    for (rec, pred) in stream {
        let (s, ev) = state.step(policy, rec, pred, rec.timestamp_s)?;
        state = s;
        all.extend(ev);
    }
    Ok((state, all))
}

pub const ALERT_CSV_HEADER: &str = "timestamp,kind,posture,dwell,message";

pub fn write_alert_csv(events: &[AlertEvent], path: &Path) -> Result<()> {
    csvfmt::write_lines(
        path,
        ALERT_CSV_HEADER,
        events.iter().map(|e| {
            format!(
                "{},{},{},{},{}",
                fmt_f64(e.timestamp_s),
                e.kind.as_str(),
                e.posture.map(|p| p.as_str()).unwrap_or(""),
                fmt_f64(e.dwell_s),
                e.message.replace(',', ";")
            )
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posture::PostureLabel::*;
    use proptest::prelude::*;

    fn rec(t: f64, d: f64) -> FusedRecord {
        FusedRecord {
            timestamp_s: t,
            pitch_deg: 0.0,
            displacement_x_m: 0.0,
            distance1_m: d,
            distance2_m: d + 0.01,
            label: None,
        }
    }

    /// One record per second with the given (posture, seconds) segments.
    fn script(segments: &[(PostureLabel, usize)], d: f64) -> Vec<(FusedRecord, PostureLabel)> {
        let mut t = 0.0;
        let mut out = Vec::new();
        for &(label, secs) in segments {
            for _ in 0..secs {
                out.push((rec(t, d), label));
                t += 1.0;
            }
        }
        out
    }

    fn run(stream: &[(FusedRecord, PostureLabel)]) -> Vec<AlertEvent> {
        replay(
            &AlertPolicy::default(),
            AlertState::new(),
            stream.iter().map(|(r, p)| (r, *p)),
        )
        .unwrap()
        .1
    }

    #[test]
    fn severe_bend_past_threshold_fires_once() {
        let ev = run(&script(&[(SevereBend, 32)], 0.6));
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, AlertKind::PosturePersisted);
        assert_eq!(ev[0].posture, Some(SevereBend));
        assert_eq!(ev[0].timestamp_s, 30.0);
        assert!(ev[0].dwell_s >= 30.0);
    }

    #[test]
    fn neutral_break_resets_dwell() {
        let ev = run(&script(&[(SevereBend, 20), (Neutral, 5), (SevereBend, 20)], 0.6));
        assert!(ev.is_empty(), "{ev:?}");
    }

    #[test]
    fn short_flicker_is_debounced() {
        let ev = run(&script(&[(SevereBend, 20), (Neutral, 1), (SevereBend, 12)], 0.6));
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].timestamp_s, 30.0);
    }

    #[test]
    fn too_close_for_a_minute() {
        let ev = run(&script(&[(Neutral, 62)], 0.30));
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, AlertKind::TooCloseToScreen);
        assert_eq!(ev[0].timestamp_s, 60.0);
    }

    #[test]
    fn cooldown_limits_repeats() {
        let ev = run(&script(&[(SevereBend, 700)], 0.6));
        let times: Vec<f64> = ev.iter().map(|e| e.timestamp_s).collect();
        assert_eq!(times, vec![30.0, 330.0, 630.0]);
    }

    #[test]
    fn time_regression_is_an_error() {
        let policy = AlertPolicy::default();
        let (s, _) = AlertState::new().step(&policy, &rec(5.0, 1.0), Neutral, 5.0).unwrap();
        assert!(matches!(
            s.step(&policy, &rec(4.0, 1.0), Neutral, 4.0),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn default_thresholds_are_severity_ordered() {
        let p = AlertPolicy::default();
        p.validate().unwrap();
        let t = |l| p.threshold(l).unwrap();
        assert!(t(SevereBend) < t(Hunch) && t(Hunch) < t(SlightBend) && t(SlightBend) < t(ForwardHead));
        assert_eq!(p.threshold(Neutral), None);
    }

    #[test]
    fn alert_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("alerts.csv");
        let ev = run(&script(&[(SevereBend, 31)], 0.6));
        write_alert_csv(&ev, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), ALERT_CSV_HEADER);
        assert!(lines
            .next()
            .unwrap()
            .starts_with("30.000000,posture_persisted,severe_bend,30.000000,"));
        assert!(ev[0].to_string().starts_with("ALERT t=30.00 kind=posture_persisted"));
    }

    fn pairs(s: &[(FusedRecord, PostureLabel)]) -> Vec<(&FusedRecord, PostureLabel)> {
        s.iter().map(|(r, p)| (r, *p)).collect()
    }

    fn stream_strategy() -> impl Strategy<Value = Vec<(FusedRecord, PostureLabel)>> {
        prop::collection::vec((0usize..5, 1usize..80, 0.2f64..0.8), 1..20).prop_map(|segs| {
            let mut t = 0.0;
            let mut out = Vec::new();
            for (l, secs, d) in segs {
                for _ in 0..secs {
                    out.push((rec(t, d), PostureLabel::ALL[l]));
                    t += 0.5;
                }
            }
            out
        })
    }

    proptest! {
        #[test]
        fn split_resume_equals_unsplit(stream in stream_strategy(), cut in 0.0f64..1.0) {
            let policy = AlertPolicy::default();
            let k = ((stream.len() as f64) * cut) as usize;
            let (full_state, full) = replay(&policy, AlertState::new(), pairs(&stream)).unwrap();
            let (mid, mut first) = replay(&policy, AlertState::new(), pairs(&stream[..k])).unwrap();
            let (end, second) = replay(&policy, mid, pairs(&stream[k..])).unwrap();
            first.extend(second);
            prop_assert_eq!(full, first);
            prop_assert_eq!(full_state, end);
        }

        #[test]
        fn cooldown_and_neutral_invariants(stream in stream_strategy()) {
            let policy = AlertPolicy::default();
            let ev = run(&stream);
            prop_assert_eq!(ev.clone(), run(&stream));
            for (i, a) in ev.iter().enumerate() {
                prop_assert!(a.posture != Some(Neutral) || a.kind != AlertKind::PosturePersisted);
                for b in &ev[i + 1..] {
                    if a.kind == b.kind && (a.kind == AlertKind::TooCloseToScreen || a.posture == b.posture) {
                        prop_assert!(b.timestamp_s - a.timestamp_s >= policy.cooldown_s);
                    }
                }
                let threshold = match a.kind {
                    AlertKind::PosturePersisted => policy.threshold(a.posture.unwrap()).unwrap(),
                    AlertKind::TooCloseToScreen => policy.distance_threshold_s,
                };
                prop_assert!(a.dwell_s >= threshold);
            }
        }
    }
}
