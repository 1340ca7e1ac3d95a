//! Line/field text parser with quoting states, in the spirit of CSV.

use super::rt::{Cov, TargetSpec};

pub const TARGET: TargetSpec = TargetSpec {
    name: "csvish",
    blocks: 25,
    label_salt: 0x63_73_76_69_73_68,
    run,
};

pub const MAX_FIELDS: usize = 16;

const ENTRY: u32 = 0;
const EMPTY_INPUT: u32 = 1;
const FIELD_START: u32 = 2;
const PLAIN_CHAR: u32 = 3;
const QUOTE_OPEN: u32 = 4;
const QUOTED_CHAR: u32 = 5;
const QUOTE_IN_QUOTED: u32 = 6;
const ESCAPED_QUOTE: u32 = 7;
const QUOTE_CLOSED: u32 = 8;
const SEPARATOR: u32 = 9;
const CR: u32 = 10;
const ROW_END: u32 = 11;
const STRAY_QUOTE: u32 = 12;
const JUNK_AFTER_QUOTE: u32 = 13;
const EOF_IN_QUOTES: u32 = 14;
const EOF_ROW: u32 = 15;
const FIELD_EMPTY: u32 = 16;
const FIELD_NUMERIC: u32 = 17;
const FIELD_TEXT: u32 = 18;
const ROW_HEADER: u32 = 19;
const ROW_SAME_WIDTH: u32 = 20;
const ROW_WIDTH_MISMATCH: u32 = 21;
const TOO_MANY_FIELDS: u32 = 22;
const DONE: u32 = 23;
const MANY_ROWS: u32 = 24;

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    FieldStart,
    Plain,
    Quoted,
    QuoteInQuoted,
}

struct Rows {
    width: Option<usize>,
    rows: usize,
    fields: usize,
    field: Vec<u8>,
}

impl Rows {
    fn end_field(&mut self, cov: &mut Cov) {
        if self.field.is_empty() {
            cov.block(FIELD_EMPTY);
        } else if self.field.iter().all(|b| b.is_ascii_digit() || *b == b'-' || *b == b'.') {
            cov.block(FIELD_NUMERIC);
        } else {
            cov.block(FIELD_TEXT);
        }
        self.field.clear();
        self.fields += 1;
        if self.fields == MAX_FIELDS + 1 {
            cov.block(TOO_MANY_FIELDS);
        }
    }

    fn end_row(&mut self, cov: &mut Cov) {
        self.end_field(cov);
        match self.width {
            None => {
                cov.block(ROW_HEADER);
                self.width = Some(self.fields);
            }
            Some(w) if w == self.fields => cov.block(ROW_SAME_WIDTH),
            Some(_) => cov.block(ROW_WIDTH_MISMATCH),
        }
        self.rows += 1;
        self.fields = 0;
    }
}

fn run(input: &[u8], cov: &mut Cov) {
    cov.block(ENTRY);
    if input.is_empty() {
        cov.block(EMPTY_INPUT);
        return;
    }
    let mut rows = Rows { width: None, rows: 0, fields: 0, field: Vec::new() };
    let mut state = State::FieldStart;
    let mut i = 0;
    while i < input.len() {
        let b = input[i];
        i += 1;
        match state {
            State::FieldStart | State::Plain => {
                if state == State::FieldStart {
                    cov.block(FIELD_START);
                }
                match b {
                    b'"' if state == State::FieldStart => {
                        cov.block(QUOTE_OPEN);
                        state = State::Quoted;
                    }
                    b'"' => {
                        cov.block(STRAY_QUOTE);
                        rows.field.push(b);
                    }
                    b',' => {
                        cov.block(SEPARATOR);
                        rows.end_field(cov);
                        state = State::FieldStart;
                    }
                    b'\r' => cov.block(CR),
                    b'\n' => {
                        cov.block(ROW_END);
                        rows.end_row(cov);
                        state = State::FieldStart;
                    }
                    _ => {
                        cov.block(PLAIN_CHAR);
                        rows.field.push(b);
                        state = State::Plain;
                    }
                }
            }
            State::Quoted => {
                if b == b'"' {
                    cov.block(QUOTE_IN_QUOTED);
                    state = State::QuoteInQuoted;
                } else {
                    cov.block(QUOTED_CHAR);
                    rows.field.push(b);
                }
            }
            State::QuoteInQuoted => match b {
                b'"' => {
                    cov.block(ESCAPED_QUOTE);
                    rows.field.push(b);
                    state = State::Quoted;
                }
                b',' => {
                    cov.block(QUOTE_CLOSED);
                    rows.end_field(cov);
                    state = State::FieldStart;
                }
                b'\n' => {
                    cov.block(QUOTE_CLOSED);
                    rows.end_row(cov);
                    state = State::FieldStart;
                }
                _ => {
                    cov.block(JUNK_AFTER_QUOTE);
                    rows.field.push(b);
                    state = State::Plain;
                }
            },
        }
    }
    match state {
        State::Quoted => cov.block(EOF_IN_QUOTES),
        State::FieldStart if rows.fields == 0 => {}
        _ => {
            cov.block(EOF_ROW);
            rows.end_row(cov);
        }
    }
    if rows.rows > 8 {
        cov.block(MANY_ROWS);
    }
    cov.block(DONE);
}
