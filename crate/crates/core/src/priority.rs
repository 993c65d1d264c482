//! Extensible priority domain types.
//!
//! A request's priority is an urgency level in `0..=7` (0 is most urgent,
//! 3 is the default) plus an `incremental` flag. Values arrive either as a
//! `Priority` field value (`u=2, i`) or, for browsers that never send one,
//! as a Chromium request priority tier which is mapped onto an urgency.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PriorityError {
    #[error("malformed priority field at byte {offset}: {reason}")]
    Parse { offset: usize, reason: &'static str },
    #[error("urgency {0} is outside 0..=7")]
    Range(i64),
    #[error("chromium priority {0} is not one of the five tiers 0..=4")]
    UnknownChromiumTier(i64),
}

/// Urgency level, `0..=7`. Lower is more urgent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Urgency(u8);

impl Urgency {
    pub const MOST_URGENT: Urgency = Urgency(0);
    pub const DEFAULT: Urgency = Urgency(3);
    pub const LEAST_URGENT: Urgency = Urgency(7);

    pub fn new(level: u8) -> Result<Self, PriorityError> {
        if level <= 7 {
            Ok(Urgency(level))
        } else {
            Err(PriorityError::Range(i64::from(level)))
        }
    }

    pub const fn level(self) -> u8 {
        self.0
    }

    /// All eight levels, most urgent first.
    pub fn all() -> impl Iterator<Item = Urgency> {
        (0..=7).map(Urgency)
    }
}

impl Default for Urgency {
    fn default() -> Self {
        Urgency::DEFAULT
    }
}

impl TryFrom<i64> for Urgency {
    type Error = PriorityError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        u8::try_from(value)
            .ok()
            .filter(|v| *v <= 7)
            .map(Urgency)
            .ok_or(PriorityError::Range(value))
    }
}

impl From<Urgency> for u8 {
    fn from(u: Urgency) -> u8 {
        u.0
    }
}

impl fmt::Display for Urgency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Priority parameters for one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PriorityParams {
    pub urgency: Urgency,
    pub incremental: bool,
}

impl PriorityParams {
    pub fn new(urgency: Urgency, incremental: bool) -> Self {
        PriorityParams { urgency, incremental }
    }
}

/// Canonical form `u=N, i` (or `u=N, i=?0`). Both members are always
/// written, even when they hold the default.
impl fmt::Display for PriorityParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.incremental {
            write!(f, "u={}, i", self.urgency)
        } else {
            write!(f, "u={}, i=?0", self.urgency)
        }
    }
}

impl FromStr for PriorityParams {
    type Err = PriorityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_priority_field(s)
    }
}

/// Chromium's internal request priority tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub enum ChromiumPriority {
    VeryHigh = 0,
    High = 1,
    Medium = 2,
    Low = 3,
    VeryLow = 4,
}

impl ChromiumPriority {
    pub const ALL: [ChromiumPriority; 5] = [
        ChromiumPriority::VeryHigh,
        ChromiumPriority::High,
        ChromiumPriority::Medium,
        ChromiumPriority::Low,
        ChromiumPriority::VeryLow,
    ];

    pub fn tier(self) -> u8 {
        self as u8
    }
}

impl TryFrom<i64> for ChromiumPriority {
    type Error = PriorityError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        match value {
            0 => Ok(ChromiumPriority::VeryHigh),
            1 => Ok(ChromiumPriority::High),
            2 => Ok(ChromiumPriority::Medium),
            3 => Ok(ChromiumPriority::Low),
            4 => Ok(ChromiumPriority::VeryLow),
            other => Err(PriorityError::UnknownChromiumTier(other)),
        }
    }
}

impl From<ChromiumPriority> for u8 {
    fn from(p: ChromiumPriority) -> u8 {
        p.tier()
    }
}

/// Maps a Chromium tier onto an urgency level.
pub fn map_chromium_priority(p: ChromiumPriority) -> Urgency {
    let level = match p {
        ChromiumPriority::VeryHigh => 0,
        ChromiumPriority::High => 2,
        ChromiumPriority::Medium => 3,
        ChromiumPriority::Low => 5,
        ChromiumPriority::VeryLow => 7,
    };
    Urgency(level)
}

impl From<ChromiumPriority> for Urgency {
    fn from(p: ChromiumPriority) -> Urgency {
        map_chromium_priority(p)
    }
}

/// Parses a `Priority` field value.
///
/// The value is a structured-field dictionary. Only `u` (an integer) and `i`
/// (a boolean, `i` alone meaning true) are interpreted; other members are
/// validated syntactically and then ignored. Inner lists and byte sequences
/// are not supported. An empty value yields the defaults.
pub fn parse_priority_field(text: &str) -> Result<PriorityParams, PriorityError> {
    let mut params = PriorityParams::default();
    for (key, value) in sf::parse_dictionary(text)? {
        match key {
            "u" => match value.item {
                sf::BareItem::Integer(n) => params.urgency = Urgency::try_from(n)?,
                _ => {
                    return Err(PriorityError::Parse {
                        offset: value.offset,
                        reason: "urgency must be an integer",
                    })
                }
            },
            "i" => match value.item {
                sf::BareItem::Boolean(b) => params.incremental = b,
                _ => {
                    return Err(PriorityError::Parse {
                        offset: value.offset,
                        reason: "incremental must be a boolean",
                    })
                }
            },
            _ => {}
        }
    }
    Ok(params)
}

/// The subset of structured-field dictionary syntax needed for priority values.
mod sf {
    use super::PriorityError;

    const MAX_INTEGER_DIGITS: usize = 15;
    const MAX_DECIMAL_INT_DIGITS: usize = 12;
    const MAX_DECIMAL_FRAC_DIGITS: usize = 3;

    #[derive(Debug, Clone, PartialEq)]
    pub(super) enum BareItem {
        Integer(i64),
        Decimal(f64),
        String(String),
        Token(String),
        Boolean(bool),
    }

    #[derive(Debug, Clone, PartialEq)]
    pub(super) struct Member {
        pub item: BareItem,
        pub offset: usize,
    }

    struct Cursor<'a> {
        input: &'a [u8],
        pos: usize,
    }

    type Result<T> = std::result::Result<T, PriorityError>;

    impl<'a> Cursor<'a> {
        fn peek(&self) -> Option<u8> {
            self.input.get(self.pos).copied()
        }

        fn bump(&mut self) -> Option<u8> {
            let c = self.peek()?;
            self.pos += 1;
            Some(c)
        }

        fn err<T>(&self, reason: &'static str) -> Result<T> {
            Err(PriorityError::Parse {
                offset: self.pos,
                reason,
            })
        }

        fn skip_sp(&mut self) {
            while self.peek() == Some(b' ') {
                self.pos += 1;
            }
        }

        fn skip_ows(&mut self) {
            while matches!(self.peek(), Some(b' ' | b'\t')) {
                self.pos += 1;
            }
        }

        fn at_end(&self) -> bool {
            self.pos >= self.input.len()
        }

        fn key(&mut self) -> Result<&'a str> {
            let start = self.pos;
            match self.peek() {
                Some(c) if c.is_ascii_lowercase() || c == b'*' => self.pos += 1,
                _ => return self.err("expected a lowercase key"),
            }
            while let Some(c) = self.peek() {
                if c.is_ascii_lowercase()
                    || c.is_ascii_digit()
                    || matches!(c, b'_' | b'-' | b'.' | b'*')
                {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            // Keys are ASCII by construction.
            Ok(std::str::from_utf8(&self.input[start..self.pos]).unwrap_or_default())
        }

        fn bare_item(&mut self) -> Result<BareItem> {
            match self.peek() {
                Some(b'-') | Some(b'0'..=b'9') => self.number(),
                Some(b'"') => self.string(),
                Some(b'?') => self.boolean(),
                Some(c) if c.is_ascii_alphabetic() || c == b'*' => self.token(),
                Some(b'(') => self.err("inner lists are not supported"),
                Some(b':') => self.err("byte sequences are not supported"),
                _ => self.err("expected a value"),
            }
        }

        fn number(&mut self) -> Result<BareItem> {
            let negative = if self.peek() == Some(b'-') {
                self.pos += 1;
                true
            } else {
                false
            };
            let start = self.pos;
            let mut int_digits = 0usize;
            while let Some(b'0'..=b'9') = self.peek() {
                self.pos += 1;
                int_digits += 1;
                if int_digits > MAX_INTEGER_DIGITS {
                    return self.err("integer has too many digits");
                }
            }
            if int_digits == 0 {
                return self.err("expected a digit");
            }
            if self.peek() != Some(b'.') {
                let digits = std::str::from_utf8(&self.input[start..self.pos]).unwrap_or("0");
                let magnitude: i64 = digits.parse().map_err(|_| PriorityError::Parse {
                    offset: start,
                    reason: "integer out of range",
                })?;
                return Ok(BareItem::Integer(if negative { -magnitude } else { magnitude }));
            }
            if int_digits > MAX_DECIMAL_INT_DIGITS {
                return self.err("decimal has too many integer digits");
            }
            self.pos += 1;
            let mut frac_digits = 0usize;
            while let Some(b'0'..=b'9') = self.peek() {
                self.pos += 1;
                frac_digits += 1;
            }
            if frac_digits == 0 {
                return self.err("decimal ends with a dot");
            }
            if frac_digits > MAX_DECIMAL_FRAC_DIGITS {
                return self.err("decimal has too many fractional digits");
            }
            let text = std::str::from_utf8(&self.input[start..self.pos]).unwrap_or("0");
            let magnitude: f64 = text.parse().map_err(|_| PriorityError::Parse {
                offset: start,
                reason: "malformed decimal",
            })?;
            Ok(BareItem::Decimal(if negative { -magnitude } else { magnitude }))
        }

        fn string(&mut self) -> Result<BareItem> {
            self.pos += 1;
            let mut out = String::new();
            loop {
                match self.bump() {
                    None => return self.err("unterminated string"),
                    Some(b'"') => return Ok(BareItem::String(out)),
                    Some(b'\\') => match self.bump() {
                        Some(c @ (b'"' | b'\\')) => out.push(char::from(c)),
                        _ => return self.err("invalid escape in string"),
                    },
                    Some(c @ 0x20..=0x7e) => out.push(char::from(c)),
                    Some(_) => return self.err("invalid character in string"),
                }
            }
        }

        fn token(&mut self) -> Result<BareItem> {
            let start = self.pos;
            self.pos += 1;
            while let Some(c) = self.peek() {
                if is_tchar(c) || c == b':' || c == b'/' {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            let text = std::str::from_utf8(&self.input[start..self.pos]).unwrap_or_default();
            Ok(BareItem::Token(text.to_owned()))
        }

        fn boolean(&mut self) -> Result<BareItem> {
            self.pos += 1;
            match self.bump() {
                Some(b'0') => Ok(BareItem::Boolean(false)),
                Some(b'1') => Ok(BareItem::Boolean(true)),
                _ => self.err("boolean must be ?0 or ?1"),
            }
        }

        fn parameters(&mut self) -> Result<()> {
            while self.peek() == Some(b';') {
                self.pos += 1;
                self.skip_sp();
                self.key()?;
                if self.peek() == Some(b'=') {
                    self.pos += 1;
                    self.bare_item()?;
                }
            }
            Ok(())
        }
    }

    fn is_tchar(c: u8) -> bool {
        c.is_ascii_alphanumeric()
            || matches!(
                c,
                b'!' | b'#'
                    | b'$'
                    | b'%'
                    | b'&'
                    | b'\''
                    | b'*'
                    | b'+'
                    | b'-'
                    | b'.'
                    | b'^'
                    | b'_'
                    | b'`'
                    | b'|'
                    | b'~'
            )
    }

    /// Returns members in input order. Later duplicates are returned too;
    /// callers applying them in order get last-one-wins semantics.
    pub(super) fn parse_dictionary(text: &str) -> Result<Vec<(&str, Member)>> {
        let mut cur = Cursor {
            input: text.as_bytes(),
            pos: 0,
        };
        let mut members = Vec::new();
        cur.skip_sp();
        if cur.at_end() {
            return Ok(members);
        }
        loop {
            let key = cur.key()?;
            let offset = cur.pos;
            let item = if cur.peek() == Some(b'=') {
                cur.pos += 1;
                cur.bare_item()?
            } else {
                BareItem::Boolean(true)
            };
            cur.parameters()?;
            members.push((key, Member { item, offset }));

            cur.skip_ows();
            if cur.at_end() {
                return Ok(members);
            }
            if cur.bump() != Some(b',') {
                cur.pos -= 1;
                return cur.err("expected a comma between members");
            }
            cur.skip_ows();
            if cur.at_end() {
                return cur.err("trailing comma");
            }
        }
    }
}
