//! Event file encoding and decoding.
//!
//! Text format: UTF-8, LF-terminated lines, header
//! `ts_ms,stock,kind,side,price_ticks,volume,order_id`, one event per line.
//!
//! Binary format: a stream of records, each framed by a 4-byte
//! little-endian payload length (always 42). Payload fields follow the
//! header order with fixed widths:
//!
//! | field        | width | encoding                      |
//! |--------------|-------|-------------------------------|
//! | ts_ms        | 8     | i64 LE                        |
//! | stock        | 8     | ASCII, NUL right-padded       |
//! | kind         | 1     | 0 add, 1 cancel, 2 delete, 3 execute |
//! | side         | 1     | 0 bid, 1 ask                  |
//! | price_ticks  | 8     | i64 LE                        |
//! | volume       | 8     | u64 LE                        |
//! | order_id     | 8     | u64 LE                        |

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::lob::{EventKind, OrderEvent, Side};
use crate::symbols::SymbolTable;

pub const EVENT_CSV_HEADER: &str = "ts_ms,stock,kind,side,price_ticks,volume,order_id";
const BIN_RECORD_LEN: u32 = 42;

/// On-disk representation of an event file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFileFormat {
    Csv,
    Binary,
}

/// Sniff the format from the first four bytes: a little-endian record
/// length of 42 marks the binary framing, anything else is text.
pub fn detect_format(first_four: &[u8]) -> EventFileFormat {
    if first_four.len() == 4 && u32::from_le_bytes(first_four.try_into().unwrap()) == BIN_RECORD_LEN
    {
        EventFileFormat::Binary
    } else {
        EventFileFormat::Csv
    }
}

/// Parse an event stream in either format, sniffing the framing.
pub fn parse_events(bytes: &[u8]) -> Result<(SymbolTable, Vec<OrderEvent>)> {
    if bytes.len() >= 4 && detect_format(&bytes[..4]) == EventFileFormat::Binary {
        parse_events_bin(bytes)
    } else {
        parse_events_csv(bytes)
    }
}

/// Parse the text format. Malformed records report their 1-based line.
pub fn parse_events_csv(input: impl Read) -> Result<(SymbolTable, Vec<OrderEvent>)> {
    let reader = std::io::BufReader::new(input);
    let mut table = SymbolTable::new();
    let mut events = Vec::new();
    let mut last_ts = i64::MIN;
    let mut lines = reader.lines();

    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::parse_at_line(1, "empty file, expected header"))?;
    if header.trim_end() != EVENT_CSV_HEADER {
        return Err(Error::parse_at_line(
            1,
            format!("bad header {header:?}, expected {EVENT_CSV_HEADER:?}"),
        ));
    }

    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let event = parse_csv_record(&line, line_no, &mut table)?;
        if event.timestamp < last_ts {
            return Err(Error::Ordering {
                previous: last_ts,
                found: event.timestamp,
                context: format!("line {line_no}"),
            });
        }
        last_ts = event.timestamp;
        events.push(event);
    }
    Ok((table, events))
}

fn parse_csv_record(line: &str, line_no: usize, table: &mut SymbolTable) -> Result<OrderEvent> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 7 {
        return Err(Error::parse_at_line(
            line_no,
            format!("expected 7 fields, found {}", fields.len()),
        ));
    }
    let bad = |what: &str, value: &str| {
        Error::parse_at_line(line_no, format!("invalid {what}: {value:?}"))
    };
    let timestamp: i64 = fields[0].parse().map_err(|_| bad("ts_ms", fields[0]))?;
    if timestamp < 0 {
        return Err(bad("ts_ms (must be >= 0)", fields[0]));
    }
    let stock = table
        .intern(fields[1])
        .map_err(|_| bad("stock", fields[1]))?;
    let kind = EventKind::parse(fields[2]).ok_or_else(|| bad("kind", fields[2]))?;
    let side = Side::parse(fields[3]).ok_or_else(|| bad("side", fields[3]))?;
    let price: i64 = fields[4].parse().map_err(|_| bad("price_ticks", fields[4]))?;
    if price <= 0 {
        return Err(bad("price_ticks (must be > 0)", fields[4]));
    }
    let volume: u64 = fields[5].parse().map_err(|_| bad("volume", fields[5]))?;
    if volume == 0 {
        return Err(bad("volume (must be > 0)", fields[5]));
    }
    let order_id: u64 = fields[6].parse().map_err(|_| bad("order_id", fields[6]))?;
    Ok(OrderEvent {
        timestamp,
        stock,
        kind,
        side,
        price,
        volume,
        order_id,
    })
}

/// Write the text format. Inverse of [`parse_events_csv`] byte for byte.
pub fn serialize_events_csv(
    table: &SymbolTable,
    events: &[OrderEvent],
    mut out: impl Write,
) -> Result<()> {
    writeln!(out, "{EVENT_CSV_HEADER}")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.timestamp,
            table.name(e.stock),
            e.kind.as_str(),
            e.side.as_str(),
            e.price,
            e.volume,
            e.order_id
        )?;
    }
    Ok(())
}

/// Parse the binary framing. Malformed records report their byte offset.
pub fn parse_events_bin(bytes: &[u8]) -> Result<(SymbolTable, Vec<OrderEvent>)> {
    let mut table = SymbolTable::new();
    let mut events = Vec::new();
    let mut pos: usize = 0;
    let mut last_ts = i64::MIN;

    while pos < bytes.len() {
        let offset = pos as u64;
        if pos + 4 > bytes.len() {
            return Err(Error::parse_at_offset(offset, "truncated record length"));
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        if len != BIN_RECORD_LEN {
            return Err(Error::parse_at_offset(
                offset,
                format!("record length {len}, expected {BIN_RECORD_LEN}"),
            ));
        }
        pos += 4;
        if pos + BIN_RECORD_LEN as usize > bytes.len() {
            return Err(Error::parse_at_offset(offset, "truncated record payload"));
        }
        let rec = &bytes[pos..pos + BIN_RECORD_LEN as usize];
        pos += BIN_RECORD_LEN as usize;

        let timestamp = i64::from_le_bytes(rec[0..8].try_into().unwrap());
        let sym_bytes = &rec[8..16];
        let sym_end = sym_bytes.iter().position(|&b| b == 0).unwrap_or(8);
        let symbol = std::str::from_utf8(&sym_bytes[..sym_end])
            .map_err(|_| Error::parse_at_offset(offset, "symbol is not valid UTF-8"))?;
        if sym_bytes[sym_end..].iter().any(|&b| b != 0) {
            return Err(Error::parse_at_offset(offset, "symbol has bytes after NUL"));
        }
        let kind = match rec[16] {
            0 => EventKind::Add,
            1 => EventKind::Cancel,
            2 => EventKind::Delete,
            3 => EventKind::Execute,
            k => return Err(Error::parse_at_offset(offset, format!("bad kind byte {k}"))),
        };
        let side = match rec[17] {
            0 => Side::Bid,
            1 => Side::Ask,
            s => return Err(Error::parse_at_offset(offset, format!("bad side byte {s}"))),
        };
        let price = i64::from_le_bytes(rec[18..26].try_into().unwrap());
        let volume = u64::from_le_bytes(rec[26..34].try_into().unwrap());
        let order_id = u64::from_le_bytes(rec[34..42].try_into().unwrap());

        if timestamp < 0 {
            return Err(Error::parse_at_offset(offset, "negative timestamp"));
        }
        if price <= 0 {
            return Err(Error::parse_at_offset(offset, "non-positive price"));
        }
        if volume == 0 {
            return Err(Error::parse_at_offset(offset, "zero volume"));
        }
        if timestamp < last_ts {
            return Err(Error::Ordering {
                previous: last_ts,
                found: timestamp,
                context: format!("byte offset {offset}"),
            });
        }
        last_ts = timestamp;
        let stock = table
            .intern(symbol)
            .map_err(|_| Error::parse_at_offset(offset, format!("invalid symbol {symbol:?}")))?;
        events.push(OrderEvent {
            timestamp,
            stock,
            kind,
            side,
            price,
            volume,
            order_id,
        });
    }
    Ok((table, events))
}

/// Write the binary framing. Inverse of [`parse_events_bin`] byte for byte.
pub fn serialize_events_bin(
    table: &SymbolTable,
    events: &[OrderEvent],
    mut out: impl Write,
) -> Result<()> {
    for e in events {
        out.write_all(&BIN_RECORD_LEN.to_le_bytes())?;
        out.write_all(&e.timestamp.to_le_bytes())?;
        let name = table.name(e.stock).as_bytes();
        let mut sym = [0u8; 8];
        sym[..name.len()].copy_from_slice(name);
        out.write_all(&sym)?;
        let kind = match e.kind {
            EventKind::Add => 0u8,
            EventKind::Cancel => 1,
            EventKind::Delete => 2,
            EventKind::Execute => 3,
        };
        let side = match e.side {
            Side::Bid => 0u8,
            Side::Ask => 1,
        };
        out.write_all(&[kind, side])?;
        out.write_all(&e.price.to_le_bytes())?;
        out.write_all(&e.volume.to_le_bytes())?;
        out.write_all(&e.order_id.to_le_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Position;

    const SAMPLE: &str = "\
ts_ms,stock,kind,side,price_ticks,volume,order_id
0,AAPL,add,bid,10000,500,1
0,AAPL,add,ask,10002,400,2
5,AAPL,execute,ask,10002,100,2
9,MSFT,add,bid,20000,50,3
";

    #[test]
    fn four_line_file_yields_four_events() {
        let (table, events) = parse_events_csv(SAMPLE.as_bytes()).unwrap();
        assert_eq!(events.len(), 4);
        assert_eq!(table.len(), 2);
        assert_eq!(events[2].kind, EventKind::Execute);
        assert_eq!(table.name(events[3].stock), "MSFT");
    }

    #[test]
    fn zero_volume_reports_its_line() {
        let input = format!("{EVENT_CSV_HEADER}\n0,AAPL,add,bid,100,0,1\n");
        let err = parse_events_csv(input.as_bytes()).unwrap_err();
        match err {
            Error::Parse { position, .. } => assert_eq!(position, Position::Line(2)),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn timestamp_regression_is_ordering_error() {
        let input = format!(
            "{EVENT_CSV_HEADER}\n5,AAPL,add,bid,100,10,1\n4,AAPL,add,ask,102,10,2\n"
        );
        assert!(matches!(
            parse_events_csv(input.as_bytes()),
            Err(Error::Ordering { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_byte_exact() {
        let (table, events) = parse_events_csv(SAMPLE.as_bytes()).unwrap();
        let mut out = Vec::new();
        serialize_events_csv(&table, &events, &mut out).unwrap();
        assert_eq!(out, SAMPLE.as_bytes());
    }

    #[test]
    fn binary_round_trip_is_byte_exact() {
        let (table, events) = parse_events_csv(SAMPLE.as_bytes()).unwrap();
        let mut bin = Vec::new();
        serialize_events_bin(&table, &events, &mut bin).unwrap();
        assert_eq!(detect_format(&bin[..4]), EventFileFormat::Binary);
        let (table2, events2) = parse_events_bin(&bin).unwrap();
        assert_eq!(events, events2);
        assert_eq!(table.names(), table2.names());
        let mut bin2 = Vec::new();
        serialize_events_bin(&table2, &events2, &mut bin2).unwrap();
        assert_eq!(bin, bin2);
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let (table, events) = parse_events_csv(SAMPLE.as_bytes()).unwrap();
        let mut bin = Vec::new();
        serialize_events_bin(&table, &events, &mut bin).unwrap();
        bin.truncate(bin.len() - 3);
        let err = parse_events_bin(&bin).unwrap_err();
        assert!(matches!(
            err,
            Error::Parse {
                position: Position::Offset(_),
                ..
            }
        ));
    }

    #[test]
    fn sniffer_distinguishes_formats() {
        assert_eq!(detect_format(b"ts_m"), EventFileFormat::Csv);
        assert_eq!(
            detect_format(&BIN_RECORD_LEN.to_le_bytes()),
            EventFileFormat::Binary
        );
    }

    #[test]
    fn bad_header_rejected() {
        let input = "time,stock\n";
        assert!(parse_events_csv(input.as_bytes()).is_err());
    }
}
