use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::PhaseStats;
use crate::handshake::{Mode, Phase};
use crate::transport::WireRecord;

/// Per-phase statistics of one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub mode: Mode,
    pub phases: Vec<PhaseStats>,
}

impl ModeStats {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseStats> {
        self.phases.iter().find(|p| p.phase == phase)
    }

    /// Sum of the phase means, the way the timing table builds its TOTAL row.
    pub fn total_mean_ms(&self) -> f64 {
        self.phases.iter().map(|p| p.mean_ms).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub label: String,
    /// One cell per mode column; empty when that mode never sent the message.
    pub bytes: Vec<Option<usize>>,
}

/// Bytes per message label and mode, framing included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadTable {
    pub modes: Vec<Mode>,
    /// Constant added to every message for link, IP and UDP headers.
    pub framing_bytes: usize,
    pub rows: Vec<OverheadRow>,
}

impl OverheadTable {
    /// Rows follow first appearance across the columns. Repeated labels
    /// (retransmissions) add up.
    pub fn from_traces(framing_bytes: usize, columns: &[(Mode, Option<&[WireRecord]>)]) -> Self {
        let modes: Vec<Mode> = columns.iter().map(|(m, _)| *m).collect();
        let mut rows: Vec<OverheadRow> = Vec::new();
        for (col, (_, trace)) in columns.iter().enumerate() {
            for w in trace.iter().flat_map(|t| t.iter()) {
                let idx = match rows.iter().position(|r| r.label == w.label) {
                    Some(i) => i,
                    None => {
                        rows.push(OverheadRow {
                            label: w.label.clone(),
                            bytes: vec![None; modes.len()],
                        });
                        rows.len() - 1
                    }
                };
                let cell = &mut rows[idx].bytes[col];
                *cell = Some(cell.unwrap_or(0) + w.bytes_on_wire + framing_bytes);
            }
        }
        OverheadTable {
            modes,
            framing_bytes,
            rows,
        }
    }

    fn column(&self, mode: Mode) -> Option<usize> {
        self.modes.iter().position(|m| *m == mode)
    }

    pub fn bytes(&self, label: &str, mode: Mode) -> Option<usize> {
        let col = self.column(mode)?;
        self.rows.iter().find(|r| r.label == label)?.bytes[col]
    }

    /// Column sums, in mode order.
    pub fn totals(&self) -> Vec<usize> {
        (0..self.modes.len())
            .map(|c| self.rows.iter().filter_map(|r| r.bytes[c]).sum())
            .collect()
    }

    pub fn total(&self, mode: Mode) -> Option<usize> {
        self.column(mode).map(|c| self.totals()[c])
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["message".to_string()];
        header.extend(self.modes.iter().map(|m| m.label().to_string()));
        w.write_record(&header).expect("in-memory write");
        let cell = |v: Option<usize>| v.map(|b| b.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![r.label.clone()];
            rec.extend(r.bytes.iter().map(|b| cell(*b)));
            w.write_record(&rec).expect("in-memory write");
        }
        let mut total = vec!["TOTAL".to_string()];
        total.extend(self.totals().iter().map(|t| t.to_string()));
        w.write_record(&total).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8")
    }

    /// Reads back [`to_csv`](Self::to_csv) output; the TOTAL row must match the column sums.
    pub fn from_csv(text: &str, framing_bytes: usize) -> Result<Self, String> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| e.to_string())?.clone();
        let modes = headers
            .iter()
            .skip(1)
            .map(|h| h.parse::<Mode>())
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows = Vec::new();
        let mut total = None;
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let cells = rec
                .iter()
                .skip(1)
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse().map(Some)
                    }
                })
                .collect::<Result<Vec<Option<usize>>, _>>()
                .map_err(|e| e.to_string())?;
            if &rec[0] == "TOTAL" {
                total = Some(cells);
            } else {
                rows.push(OverheadRow {
                    label: rec[0].to_string(),
                    bytes: cells,
                });
            }
        }
        let table = OverheadTable {
            modes,
            framing_bytes,
            rows,
        };
        let expected: Vec<Option<usize>> = table.totals().into_iter().map(Some).collect();
        match total {
            Some(t) if t == expected => Ok(table),
            Some(_) => Err("TOTAL row does not match column sums".into()),
            None => Err("missing TOTAL row".into()),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let names: Vec<&str> = self.modes.iter().map(|m| m.label()).collect();
        let _ = writeln!(s, "| Message | {} |", names.join(" | "));
        let _ = writeln!(s, "|---|{}", "---:|".repeat(names.len()));
        let cell = |v: &Option<usize>| v.map(|b| b.to_string()).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            let cells: Vec<String> = r.bytes.iter().map(cell).collect();
            let _ = writeln!(s, "| {} | {} |", r.label, cells.join(" | "));
        }
        let totals: Vec<String> = self.totals().iter().map(|t| format!("**{t}**")).collect();
        let _ = writeln!(s, "| **TOTAL** | {} |", totals.join(" | "));
        s
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PhaseStatsRow {
    mode: String,
    phase: String,
    n: usize,
    mean_ms: f64,
    sd_ms: f64,
    min_ms: f64,
    q1_ms: f64,
    median_ms: f64,
    q3_ms: f64,
    max_ms: f64,
    outliers: String,
}

fn parse_phase(s: &str) -> Result<Phase, String> {
    Phase::TIMED
        .into_iter()
        .find(|p| p.label() == s)
        .ok_or_else(|| format!("unknown phase {s:?}"))
}

pub fn phase_stats_csv(stats: &[ModeStats]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in stats {
        for p in &m.phases {
            let outliers: Vec<String> = p.outliers.iter().map(f64::to_string).collect();
            w.serialize(PhaseStatsRow {
                mode: m.mode.label().into(),
                phase: p.phase.label().into(),
                n: p.n,
                mean_ms: p.mean_ms,
                sd_ms: p.sd_ms,
                min_ms: p.min_ms,
                q1_ms: p.q1_ms,
                median_ms: p.median_ms,
                q3_ms: p.q3_ms,
                max_ms: p.max_ms,
                outliers: outliers.join(";"),
            })
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8")
}

pub fn parse_phase_stats_csv(text: &str) -> Result<Vec<ModeStats>, String> {
    let mut out: Vec<ModeStats> = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<PhaseStatsRow>() {
        let row = row.map_err(|e| e.to_string())?;
        let mode: Mode = row.mode.parse()?;
        let outliers = row
            .outliers
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let stats = PhaseStats {
            phase: parse_phase(&row.phase)?,
            n: row.n,
            mean_ms: row.mean_ms,
            sd_ms: row.sd_ms,
            min_ms: row.min_ms,
            q1_ms: row.q1_ms,
            median_ms: row.median_ms,
            q3_ms: row.q3_ms,
            max_ms: row.max_ms,
            outliers,
        };
        match out.iter_mut().find(|m| m.mode == mode) {
            Some(m) => m.phases.push(stats),
            None => out.push(ModeStats {
                mode,
                phases: vec![stats],
            }),
        }
    }
    Ok(out)
}

/// Mean and SD per phase and mode, with a TOTAL row of summed means.
pub fn timing_markdown(stats: &[ModeStats]) -> String {
    let mut s = String::new();
    let names: Vec<&str> = stats.iter().map(|m| m.mode.label()).collect();
    let _ = writeln!(s, "| Phase | {} |", names.join(" | "));
    let _ = writeln!(s, "|---|{}", "---:|".repeat(names.len()));
    for phase in Phase::TIMED {
        let cells: Vec<String> = stats
            .iter()
            .map(|m| match m.phase(phase) {
                Some(p) => format!("M: {:.2} ms, SD: {:.2} ms", p.mean_ms, p.sd_ms),
                None => "-".into(),
            })
            .collect();
        let _ = writeln!(s, "| {} | {} |", phase.label(), cells.join(" | "));
    }
    let totals: Vec<String> = stats
        .iter()
        .map(|m| format!("**M: {:.2} ms**", m.total_mean_ms()))
        .collect();
    let _ = writeln!(s, "| **TOTAL** | {} |", totals.join(" | "));
    s
}

/// Box-plot parameters per mode and phase.
pub fn distribution_markdown(stats: &[ModeStats]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "| Mode | Phase | n | min | Q1 | median | Q3 | max | outliers |"
    );
    let _ = writeln!(s, "|---|---|---:|---:|---:|---:|---:|---:|---:|");
    for m in stats {
        for p in &m.phases {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {} |",
                m.mode.label(),
                p.phase.label(),
                p.n,
                p.min_ms,
                p.q1_ms,
                p.median_ms,
                p.q3_ms,
                p.max_ms,
                p.outliers.len()
            );
        }
    }
    s
}

/// Formatted outputs, ready to be written to disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedTables {
    pub markdown: String,
    pub phase_stats_csv: String,
    pub overhead_csv: String,
}

pub fn render_tables(stats: &[ModeStats], overhead: &OverheadTable) -> RenderedTables {
    let mut md = String::new();
    let _ = writeln!(md, "## Connection establishment time\n");
    md.push_str(&timing_markdown(stats));
    let _ = writeln!(md, "\n## Phase distributions (ms)\n");
    md.push_str(&distribution_markdown(stats));
    let _ = writeln!(
        md,
        "\n## Communication overhead (bytes, {} framing bytes per message)\n",
        overhead.framing_bytes
    );
    md.push_str(&overhead.to_markdown());
    RenderedTables {
        markdown: md,
        phase_stats_csv: phase_stats_csv(stats),
        overhead_csv: overhead.to_csv(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::Direction;

    fn stats(mode: Mode, means: [f64; 3]) -> ModeStats {
        ModeStats {
            mode,
            phases: Phase::TIMED
                .iter()
                .zip(means)
                .map(|(p, m)| PhaseStats::from_samples(*p, &[m - 1.0, m, m + 1.0]).unwrap())
                .collect(),
        }
    }

    fn record(label: &str, bytes: usize) -> WireRecord {
        WireRecord {
            direction: Direction::InitiatorToResponder,
            label: label.into(),
            bytes_on_wire: bytes,
            timestamp_ns: 0,
        }
    }

    #[test]
    fn total_row_sums_phase_means() {
        let s = stats(Mode::Qkd, [10.0, 20.0, 30.0]);
        assert_eq!(s.total_mean_ms(), 60.0);
        assert!(timing_markdown(&[s]).contains("| **TOTAL** | **M: 60.00 ms** |"));
    }

    #[test]
    fn phase_stats_csv_round_trips() {
        let mut s = vec![
            stats(Mode::DhPsk, [1.25, 2.5, 0.1]),
            stats(Mode::Qkd, [0.3, 2.0, 0.05]),
        ];
        s[0].phases[0] =
            PhaseStats::from_samples(Phase::Init, &[1.0, 1.1, 1.2, 1.3, 9.75]).unwrap();
        assert_eq!(s[0].phases[0].outliers, [9.75]);
        let csv = phase_stats_csv(&s);
        assert_eq!(parse_phase_stats_csv(&csv).unwrap(), s);
    }

    #[test]
    fn overhead_columns_align_by_label() {
        let a = [
            record("IKE_SA_INIT MID=00 I", 100),
            record("IKE_SA_INIT MID=00 R", 120),
        ];
        let b = [record("IKE_SA_INIT MID=00 I", 50)];
        let t = OverheadTable::from_traces(
            42,
            &[
                (Mode::DhPsk, Some(&a[..])),
                (Mode::Qkd, Some(&b[..])),
                (Mode::DhCert, None),
            ],
        );
        assert_eq!(t.bytes("IKE_SA_INIT MID=00 I", Mode::Qkd), Some(92));
        assert_eq!(t.bytes("IKE_SA_INIT MID=00 R", Mode::Qkd), None);
        assert_eq!(t.totals(), [304, 92, 0]);
        assert_eq!(OverheadTable::from_csv(&t.to_csv(), 42).unwrap(), t);
    }

    #[test]
    fn tampered_total_row_is_rejected() {
        let a = [record("X", 1)];
        let t = OverheadTable::from_traces(0, &[(Mode::Qkd, Some(&a[..]))]);
        let csv = t.to_csv().replace("TOTAL,1", "TOTAL,2");
        assert!(OverheadTable::from_csv(&csv, 0).is_err());
    }
}
