//! CSV and JSON artifacts written by the command-line front end.
//!
//! Floats go through `Display`, which prints the shortest string that
//! parses back to the same `f64`.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::sim::{EventLog, Trace};
use crate::tuner::GenerationStats;

pub const TRACE_HEADER: [&str; 5] = ["t", "r", "y", "u", "e"];
pub const EVENTS_HEADER: [&str; 6] = ["seq", "channel", "t_send", "delay", "dropped", "discarded_ooo"];
pub const HISTORY_HEADER: [&str; 3] = ["generation", "best_j", "mean_j"];

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_trace_csv(path: &Path, trace: &Trace) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in &trace.rows {
        w.write_record([r.t, r.r, r.y, r.u, r.e].map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    w.flush()
}

/// A dropped packet has an empty `delay` field.
pub fn write_events_csv(path: &Path, events: &EventLog) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(EVENTS_HEADER).map_err(csv_err)?;
    for e in &events.rows {
        w.write_record([
            e.seq.to_string(),
            e.channel.to_string(),
            e.t_send.to_string(),
            e.delay.map(|d| d.to_string()).unwrap_or_default(),
            e.dropped.to_string(),
            e.discarded_ooo.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_history_csv(path: &Path, history: &[GenerationStats]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(HISTORY_HEADER).map_err(csv_err)?;
    for (g, h) in history.iter().enumerate() {
        w.write_record([g.to_string(), h.best_j.to_string(), h.mean_j.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelId, PacketEvent};

    #[test]
    fn floats_survive_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut tr = Trace::new(0.1);
        let tricky = [0.1 + 0.2, 1.0 / 3.0, 5e-324, -1.234_567_890_123_456_7e300];
        for (k, v) in tricky.iter().enumerate() {
            tr.push(k as f64 * 0.1, 1.0, *v, -v);
        }
        write_trace_csv(&path, &tr).unwrap();
        let mut rd = csv::Reader::from_path(&path).unwrap();
        assert_eq!(rd.headers().unwrap(), TRACE_HEADER.as_slice());
        for (rec, row) in rd.records().zip(&tr.rows) {
            let rec = rec.unwrap();
            let y: f64 = rec[2].parse().unwrap();
            let e: f64 = rec[4].parse().unwrap();
            assert_eq!(y.to_bits(), row.y.to_bits());
            assert_eq!(e.to_bits(), row.e.to_bits());
        }
    }

    #[test]
    fn dropped_rows_have_empty_delay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        let log = EventLog {
            rows: vec![
                PacketEvent {
                    seq: 0,
                    channel: ChannelId::SensorToController,
                    t_send: 0.0,
                    delay: None,
                    dropped: true,
                    discarded_ooo: false,
                },
                PacketEvent {
                    seq: 0,
                    channel: ChannelId::ControllerToActuator,
                    t_send: 0.0,
                    delay: Some(0.13),
                    dropped: false,
                    discarded_ooo: true,
                },
            ],
        };
        write_events_csv(&path, &log).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "seq,channel,t_send,delay,dropped,discarded_ooo\n\
             0,sensor_to_ctrl,0,,true,false\n\
             0,ctrl_to_act,0,0.13,false,true\n"
        );
    }
}
