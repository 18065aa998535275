use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::trace::{Actor, EventKind, Ticks, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lane {
    Draft,
    Target,
    Verify,
}

impl Lane {
    fn label(self) -> &'static str {
        match self {
            Lane::Draft => "draft ",
            Lane::Target => "target",
            Lane::Verify => "verify",
        }
    }

    fn colour(self) -> &'static str {
        match self {
            Lane::Draft => "#7fb3d5",
            Lane::Target => "#f5b041",
            Lane::Verify => "#82e0aa",
        }
    }
}

/// One task execution reconstructed from a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lane: Lane,
    pub op: String,
    pub round: i64,
    pub start: Ticks,
    pub end: Ticks,
    pub cancelled: bool,
}

/// Pairs task starts with their end or cancel. Tasks still open at the end
/// of the trace are dropped.
pub fn intervals(events: &[TraceEvent]) -> Vec<Interval> {
    let mut open: BTreeMap<&str, &TraceEvent> = BTreeMap::new();
    let mut out = Vec::new();
    for e in events {
        let Some(task) = e.get("task") else { continue };
        match e.kind {
            EventKind::TaskStart => {
                open.insert(task, e);
            }
            EventKind::TaskEnd | EventKind::Cancel => {
                if let Some(start) = open.remove(task) {
                    let lane = match start.actor {
                        Actor::Drafter => Lane::Draft,
                        Actor::Verifier => Lane::Verify,
                        _ => Lane::Target,
                    };
                    out.push(Interval {
                        lane,
                        op: start.get("op").unwrap_or("?").to_owned(),
                        round: start.round,
                        start: start.ts,
                        end: e.ts,
                        cancelled: e.kind == EventKind::Cancel,
                    });
                }
            }
            _ => {}
        }
    }
    out.sort_by_key(|i| (i.lane, i.start));
    out
}

fn glyph(i: &Interval) -> char {
    match (i.op.as_str(), i.cancelled) {
        (_, true) => 'x',
        ("prefill", _) => 'P',
        ("verify", _) => 'V',
        ("update", _) => 'T',
        _ => char::from_digit((i.round.max(0) % 10) as u32, 10).unwrap_or('D'),
    }
}

/// Fixed-width chart, one row per lane, at most `width` columns.
///
/// Drafts show their round digit, `T` is target generation, `V` verification,
/// `P` prefill and `x` cancelled work.
pub fn render_text(events: &[TraceEvent], width: usize) -> String {
    let spans = intervals(events);
    let end = spans.iter().map(|i| i.end).max().unwrap_or(0).max(1);
    let cols = width.max(1).min(end as usize);
    let scale = |t: Ticks| ((t as u128 * cols as u128) / end as u128) as usize;
    let mut out = String::new();
    for lane in [Lane::Draft, Lane::Target, Lane::Verify] {
        let mut row = vec!['.'; cols];
        for i in spans.iter().filter(|i| i.lane == lane) {
            let (a, b) = (scale(i.start), scale(i.end).max(scale(i.start) + 1).min(cols));
            for c in &mut row[a.min(cols)..b] {
                *c = glyph(i);
            }
        }
        let _ = writeln!(out, "{} |{}|", lane.label(), row.into_iter().collect::<String>());
    }
    let _ = writeln!(out, "       0{:>w$}", end, w = cols + 1);
    out
}

pub fn render_svg(events: &[TraceEvent]) -> String {
    const W: f64 = 800.0;
    const ROW: f64 = 28.0;
    const LEFT: f64 = 60.0;
    let spans = intervals(events);
    let end = spans.iter().map(|i| i.end).max().unwrap_or(0).max(1) as f64;
    let x = |t: Ticks| LEFT + t as f64 / end * (W - LEFT - 10.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{}" font-family="monospace" font-size="11">"#,
        ROW * 3.0 + 30.0
    );
    for (row, lane) in [Lane::Draft, Lane::Target, Lane::Verify].into_iter().enumerate() {
        let y = 10.0 + row as f64 * ROW;
        let _ = writeln!(svg, r#"<text x="4" y="{}">{}</text>"#, y + 16.0, lane.label().trim());
        for i in spans.iter().filter(|i| i.lane == lane) {
            let (x0, x1) = (x(i.start), x(i.end));
            let fill = if i.cancelled { "#d5d8dc" } else { lane.colour() };
            let _ = writeln!(
                svg,
                r##"<rect x="{x0:.1}" y="{y}" width="{:.1}" height="{}" fill="{fill}" stroke="#333"><title>{} r{} [{}, {}]</title></rect>"##,
                (x1 - x0).max(1.0),
                ROW - 6.0,
                i.op,
                i.round,
                i.start,
                i.end
            );
        }
    }
    let y = 10.0 + 3.0 * ROW + 12.0;
    let _ = writeln!(
        svg,
        r#"<text x="{LEFT}" y="{y}">0</text><text x="{}" y="{y}" text-anchor="end">{}</text>"#,
        W - 10.0,
        end
    );
    svg.push_str("</svg>\n");
    svg
}
