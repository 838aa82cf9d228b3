//! CSV formats for traces, event streams and request labels.
//!
//! Every file may start with a block of `#` comment lines (tool version,
//! resolved configuration, seed). Trace files additionally carry
//! `# scope: app|device` and `# meta.<key>: <value>` lines.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::trace::{CounterSample, CounterTrace, PacketEvent, Scope};

pub const TRACE_HEADER: [&str; 5] = ["t_us", "rx_bytes", "tx_bytes", "rx_pkts", "tx_pkts"];
pub const EVENT_HEADER: [&str; 2] = ["t_us", "size_bytes"];
pub const LABEL_HEADER: [&str; 2] = ["request_t_us", "label"];

/// Splits leading `#` lines (without the marker) from the CSV body.
pub fn split_preamble(text: &str) -> (Vec<String>, &str) {
    let mut lines = Vec::new();
    let mut rest = text;
    while let Some(line) = rest.strip_prefix('#') {
        let (l, tail) = match line.find('\n') {
            Some(i) => (&line[..i], &line[i + 1..]),
            None => (line, ""),
        };
        lines.push(l.trim_start().trim_end_matches('\r').to_string());
        rest = tail;
    }
    (lines, rest)
}

pub fn write_preamble<W: Write>(w: &mut W, preamble: &[String]) -> Result<()> {
    for line in preamble {
        for part in line.lines() {
            writeln!(w, "# {part}")?;
        }
    }
    Ok(())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[&str], what: &str) -> Result<()> {
    let header = rdr.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Schema(format!(
            "{what}: expected header `{}`, found `{}`",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn reader(body: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes())
}

fn read_all<R: Read>(mut r: R) -> Result<String> {
    let mut s = String::new();
    r.read_to_string(&mut s)?;
    Ok(s)
}

pub fn write_trace<W: Write>(mut w: W, trace: &CounterTrace, preamble: &[String]) -> Result<()> {
    write_preamble(&mut w, preamble)?;
    writeln!(w, "# scope: {}", trace.scope.as_str())?;
    for (k, v) in &trace.meta {
        writeln!(w, "# meta.{k}: {v}")?;
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(TRACE_HEADER)?;
    for s in &trace.samples {
        csv.serialize((s.t_us, s.rx_bytes, s.tx_bytes, s.rx_pkts, s.tx_pkts))?;
    }
    csv.flush()?;
    Ok(())
}

/// Reads a trace file. Missing scope defaults to device-level.
pub fn read_trace<R: Read>(r: R) -> Result<CounterTrace> {
    let text = read_all(r)?;
    let (preamble, body) = split_preamble(&text);
    let mut scope = Scope::Device;
    let mut meta = BTreeMap::new();
    for line in &preamble {
        if let Some(v) = line.strip_prefix("scope:") {
            scope = v.parse()?;
        } else if let Some(kv) = line.strip_prefix("meta.") {
            if let Some((k, v)) = kv.split_once(':') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
    }
    let mut rdr = reader(body);
    check_header(&mut rdr, &TRACE_HEADER, "trace")?;
    let mut samples = Vec::new();
    for rec in rdr.deserialize() {
        let (t_us, rx_bytes, tx_bytes, rx_pkts, tx_pkts): (u64, u64, u64, u64, u64) = rec?;
        samples.push(CounterSample { t_us, rx_bytes, tx_bytes, rx_pkts, tx_pkts });
    }
    let mut trace = CounterTrace::new(scope, samples).map_err(|e| Error::Schema(e.to_string()))?;
    trace.meta = meta;
    Ok(trace)
}

pub fn write_events<W: Write>(mut w: W, events: &[PacketEvent], preamble: &[String]) -> Result<()> {
    write_preamble(&mut w, preamble)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(EVENT_HEADER)?;
    for e in events {
        csv.serialize((e.t_us, e.size_bytes))?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(r: R) -> Result<Vec<PacketEvent>> {
    let text = read_all(r)?;
    let (_, body) = split_preamble(&text);
    let mut rdr = reader(body);
    check_header(&mut rdr, &EVENT_HEADER, "events")?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let (t_us, size_bytes): (u64, i64) = rec?;
        if size_bytes == 0 {
            return Err(Error::Schema(format!("zero-sized event at t_us={t_us}")));
        }
        out.push(PacketEvent { t_us, size_bytes });
    }
    Ok(out)
}

pub fn write_labels<W: Write>(mut w: W, labels: &[(u64, String)], preamble: &[String]) -> Result<()> {
    write_preamble(&mut w, preamble)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(LABEL_HEADER)?;
    for (t, l) in labels {
        csv.serialize((t, l))?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_labels<R: Read>(r: R) -> Result<Vec<(u64, String)>> {
    let text = read_all(r)?;
    let (_, body) = split_preamble(&text);
    let mut rdr = reader(body);
    check_header(&mut rdr, &LABEL_HEADER, "labels")?;
    let mut out: Vec<(u64, String)> = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    if out.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Schema("request times must be sorted ascending".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_roundtrip_with_meta() {
        let samples = vec![
            CounterSample { t_us: 0, rx_bytes: 0, tx_bytes: 0, rx_pkts: 0, tx_pkts: 0 },
            CounterSample { t_us: 500, rx_bytes: 1200, tx_bytes: 80, rx_pkts: 2, tx_pkts: 1 },
        ];
        let trace = CounterTrace::new(Scope::App, samples).unwrap().with_meta("speed_mph", 30);
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace, &["netside 0.1.0".into(), "seed: 7".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# netside 0.1.0\n# seed: 7\n# scope: app\n"));
        assert!(text.contains("t_us,rx_bytes,tx_bytes,rx_pkts,tx_pkts\n0,0,0,0,0\n500,1200,80,2,1\n"));
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn wrong_header_is_schema_error() {
        let text = "t,rx\n0,0\n";
        assert!(matches!(read_trace(text.as_bytes()), Err(Error::Schema(_))));
        assert!(matches!(read_events(text.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn events_and_labels_roundtrip() {
        let ev = vec![PacketEvent::incoming(3, 10), PacketEvent::outgoing(9, 20)];
        let mut buf = Vec::new();
        write_events(&mut buf, &ev, &[]).unwrap();
        assert_eq!(std::str::from_utf8(&buf).unwrap(), "t_us,size_bytes\n3,10\n9,-20\n");
        assert_eq!(read_events(buf.as_slice()).unwrap(), ev);

        let labels = vec![(0, "google.com".to_string()), (30_000_000, "t.co".to_string())];
        let mut buf = Vec::new();
        write_labels(&mut buf, &labels, &["x".into()]).unwrap();
        assert_eq!(read_labels(buf.as_slice()).unwrap(), labels);
    }

    #[test]
    fn unsorted_labels_rejected() {
        let text = "request_t_us,label\n10,a\n5,b\n";
        assert!(matches!(read_labels(text.as_bytes()), Err(Error::Schema(_))));
    }
}
